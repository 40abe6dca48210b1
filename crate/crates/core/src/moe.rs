//! Top-k expert routing over GLU experts with renormalized gates, the GEGLU
//! expert forward pass, dispatch bookkeeping, and load statistics.
//!
//! Gates are a softmax over the *selected* logits only (renormalized), ties
//! break toward the lowest expert index, and GEGLU uses the exact erf form
//! of gelu.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Which experts a token goes to and with what mixing weights.
///
/// `expert_indices` are sorted by descending logit; `gates` are positive and
/// sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    pub expert_indices: Vec<usize>,
    pub gates: Vec<f64>,
}

/// Select the `top_k` largest logits (lowest index wins ties) and softmax
/// over just those.
pub fn route_top2(logits: &[f64], top_k: usize) -> Result<RoutingDecision> {
    let num_experts = logits.len();
    if top_k == 0 || top_k > num_experts {
        return Err(Error::Config(format!(
            "top_k {top_k} out of range for {num_experts} experts"
        )));
    }
    if logits.iter().any(|x| x.is_nan()) {
        return Err(Error::NonFinite("NaN logit".into()));
    }
    let mut order: Vec<usize> = (0..num_experts).collect();
    // stable sort keeps the lowest index first among equal logits
    order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap());
    let expert_indices: Vec<usize> = order[..top_k].to_vec();
    let max = logits[expert_indices[0]];
    let exps: Vec<f64> = expert_indices.iter().map(|&i| (logits[i] - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    let gates = exps.into_iter().map(|e| e / denom).collect();
    Ok(RoutingDecision { expert_indices, gates })
}

/// Exact gelu: `x * Phi(x)` with the erf form.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// One GLU expert: gate/up projections of shape `[ffn_dim, hidden_dim]` and
/// a down projection `[hidden_dim, ffn_dim]`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertGLU {
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub w_gate: Vec<f64>,
    pub w_up: Vec<f64>,
    pub w_down: Vec<f64>,
}

impl ExpertGLU {
    pub fn new(
        hidden_dim: usize,
        ffn_dim: usize,
        w_gate: Vec<f64>,
        w_up: Vec<f64>,
        w_down: Vec<f64>,
    ) -> Result<Self> {
        if w_gate.len() != ffn_dim * hidden_dim
            || w_up.len() != ffn_dim * hidden_dim
            || w_down.len() != hidden_dim * ffn_dim
        {
            return Err(Error::Shape("expert weight shapes inconsistent".into()));
        }
        for w in [&w_gate, &w_up, &w_down] {
            if w.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("expert weights contain NaN/Inf".into()));
            }
        }
        Ok(ExpertGLU { hidden_dim, ffn_dim, w_gate, w_up, w_down })
    }

    /// Fixed-seed random expert for tests and the CLI.
    pub fn random(seed: u64, hidden_dim: usize, ffn_dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ExpertGLU {
            hidden_dim,
            ffn_dim,
            w_gate: draw(ffn_dim * hidden_dim),
            w_up: draw(ffn_dim * hidden_dim),
            w_down: draw(hidden_dim * ffn_dim),
        }
    }
}

fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// GEGLU forward: `W_down( gelu(W_gate x) ⊙ (W_up x) )`.
pub fn expert_forward(x: &[f64], e: &ExpertGLU) -> Result<Vec<f64>> {
    if x.len() != e.hidden_dim {
        return Err(Error::Shape(format!(
            "input length {} != hidden_dim {}",
            x.len(),
            e.hidden_dim
        )));
    }
    let gate = matvec(&e.w_gate, e.ffn_dim, e.hidden_dim, x);
    let up = matvec(&e.w_up, e.ffn_dim, e.hidden_dim, x);
    let inner: Vec<f64> = gate.iter().zip(&up).map(|(&g, &u)| gelu(g) * u).collect();
    Ok(matvec(&e.w_down, e.hidden_dim, e.ffn_dim, &inner))
}

/// Output of a full MoE layer forward for one token.
#[derive(Debug, Clone, PartialEq)]
pub struct MoeOutput {
    pub y: Vec<f64>,
    pub decision: RoutingDecision,
    /// Experts actually evaluated; always equals `top_k`.
    pub experts_evaluated: usize,
}

/// Route a token through the top-k experts and mix their outputs by the
/// renormalized gates. Unselected experts are never evaluated.
pub fn moe_forward(
    x: &[f64],
    router: &[f64],
    experts: &[ExpertGLU],
    top_k: usize,
) -> Result<MoeOutput> {
    let num_experts = experts.len();
    if num_experts == 0 {
        return Err(Error::Config("no experts".into()));
    }
    let d = experts[0].hidden_dim;
    if router.len() != num_experts * d || x.len() != d {
        return Err(Error::Shape("router/input shapes inconsistent".into()));
    }
    let logits = matvec(router, num_experts, d, x);
    let decision = route_top2(&logits, top_k)?;
    let mut y = vec![0.0; d];
    let mut experts_evaluated = 0;
    for (&idx, &gate) in decision.expert_indices.iter().zip(&decision.gates) {
        let out = expert_forward(x, &experts[idx])?;
        experts_evaluated += 1;
        for (acc, o) in y.iter_mut().zip(out) {
            *acc += gate * o;
        }
    }
    Ok(MoeOutput { y, decision, experts_evaluated })
}

/// Per-expert dispatch counts and the max/mean load ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadStats {
    pub counts: Vec<u64>,
    pub max_over_mean: f64,
}

pub fn load_stats(decisions: &[RoutingDecision], num_experts: usize) -> LoadStats {
    let mut counts = vec![0u64; num_experts];
    for d in decisions {
        for &i in &d.expert_indices {
            counts[i] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let mean = total as f64 / num_experts as f64;
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    let max_over_mean = if mean > 0.0 { max / mean } else { 0.0 };
    LoadStats { counts, max_over_mean }
}
