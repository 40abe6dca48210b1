//! Reference causal attention with grouped-query head mapping, masked
//! attention, a block-skipping blocksparse path that must agree with the
//! masked oracle, rotary position application, and the dense/sparse layer
//! schedule.
//!
//! All paths are generic over `f32` / `f64`; single precision is the
//! default and double precision serves as the oracle mode.

use num_traits::{Float, FromPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sparsity::{block_mask, token_mask, HeadAssignment, SparsePattern, TokenMask};

/// Floating-point scalar used by the attention kernels.
pub trait Scalar: Float + FromPrimitive + std::fmt::Debug + Send + Sync {
    fn of_f64(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).unwrap()
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Query/key/value activations for one layer at toy scale.
///
/// Layout: `q` is `[heads, seq, head_dim]`, `k`/`v` are
/// `[kv_heads, seq, head_dim]`, all row-major.
#[derive(Debug, Clone)]
pub struct AttnTensors<T> {
    pub num_heads: usize,
    pub num_kv_heads: usize,
    pub seq_len: usize,
    pub head_dim: usize,
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    pub scale: T,
}

impl<T: Scalar> AttnTensors<T> {
    pub fn new(
        num_heads: usize,
        num_kv_heads: usize,
        seq_len: usize,
        head_dim: usize,
        q: Vec<T>,
        k: Vec<T>,
        v: Vec<T>,
    ) -> Result<Self> {
        if num_kv_heads == 0 || num_heads % num_kv_heads != 0 {
            return Err(Error::Shape("heads mod kv_heads != 0".into()));
        }
        if q.len() != num_heads * seq_len * head_dim {
            return Err(Error::Shape("q has wrong length".into()));
        }
        if k.len() != num_kv_heads * seq_len * head_dim || v.len() != k.len() {
            return Err(Error::Shape("k/v have wrong length".into()));
        }
        for (name, t) in [("q", &q), ("k", &k), ("v", &v)] {
            if t.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("{name} contains NaN/Inf")));
            }
        }
        let scale = T::one() / T::of_f64(head_dim as f64).sqrt();
        Ok(AttnTensors { num_heads, num_kv_heads, seq_len, head_dim, q, k, v, scale })
    }

    /// Fixed-seed standard-normal-ish tensors for tests and the CLI.
    pub fn random(
        seed: u64,
        num_heads: usize,
        num_kv_heads: usize,
        seq_len: usize,
        head_dim: usize,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<T> {
            (0..n).map(|_| T::of_f64(rng.gen_range(-1.0..1.0))).collect()
        };
        let q = draw(num_heads * seq_len * head_dim);
        let k = draw(num_kv_heads * seq_len * head_dim);
        let v = draw(num_kv_heads * seq_len * head_dim);
        AttnTensors::new(num_heads, num_kv_heads, seq_len, head_dim, q, k, v)
    }

    fn q_row(&self, h: usize, i: usize) -> &[T] {
        let base = (h * self.seq_len + i) * self.head_dim;
        &self.q[base..base + self.head_dim]
    }

    fn k_row(&self, kv: usize, j: usize) -> &[T] {
        let base = (kv * self.seq_len + j) * self.head_dim;
        &self.k[base..base + self.head_dim]
    }

    fn v_row(&self, kv: usize, j: usize) -> &[T] {
        let base = (kv * self.seq_len + j) * self.head_dim;
        &self.v[base..base + self.head_dim]
    }
}

/// Map a query head to the kv head it reads: `h div (H / H_kv)`.
pub fn gqa_map(h: usize, num_heads: usize, num_kv_heads: usize) -> Result<usize> {
    if num_kv_heads == 0 || num_heads % num_kv_heads != 0 {
        return Err(Error::Shape("heads mod kv_heads != 0".into()));
    }
    if h >= num_heads {
        return Err(Error::Shape(format!("head {h} out of range (H={num_heads})")));
    }
    Ok(h / (num_heads / num_kv_heads))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Softmax-weighted sum over `(key, value)` row pairs with max-subtraction
/// for stability. Shared by the attention paths and the decode simulator.
pub fn softmax_attend<T: Scalar>(scale: T, q: &[T], kv_rows: &[(&[T], &[T])], out: &mut [T]) -> Result<()> {
    if kv_rows.is_empty() {
        return Err(Error::Shape("query has no allowed keys".into()));
    }
    let mut scores: Vec<T> = kv_rows.iter().map(|(k, _)| scale * dot(q, k)).collect();
    let max = scores.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut denom = T::zero();
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        denom = denom + *s;
    }
    for o in out.iter_mut() {
        *o = T::zero();
    }
    for ((_, v), &w) in kv_rows.iter().zip(scores.iter()) {
        let g = w / denom;
        for (o, &x) in out.iter_mut().zip(*v) {
            *o = *o + g * x;
        }
    }
    Ok(())
}

fn attend_row<T: Scalar>(
    t: &AttnTensors<T>,
    h: usize,
    kv: usize,
    i: usize,
    allowed: &[usize],
    out: &mut [T],
) -> Result<()> {
    if allowed.is_empty() {
        return Err(Error::Shape(format!("query {i} has no allowed keys")));
    }
    let rows: Vec<(&[T], &[T])> = allowed
        .iter()
        .map(|&j| (t.k_row(kv, j), t.v_row(kv, j)))
        .collect();
    softmax_attend(t.scale, t.q_row(h, i), &rows, out)
}

/// Full causal attention: `out[h,i]` attends all keys `j <= i`.
pub fn dense_causal_attention<T: Scalar>(t: &AttnTensors<T>) -> Result<Vec<T>> {
    masked_attention(t, &TokenMask::causal(t.seq_len))
}

/// Attention with the softmax restricted to the mask's allowed keys.
pub fn masked_attention<T: Scalar>(t: &AttnTensors<T>, mask: &TokenMask) -> Result<Vec<T>> {
    let masks: Vec<&TokenMask> = vec![mask; t.num_heads];
    masked_attention_per_head(t, &masks)
}

/// As [`masked_attention`] but with one mask per query head.
pub fn masked_attention_per_head<T: Scalar>(
    t: &AttnTensors<T>,
    masks: &[&TokenMask],
) -> Result<Vec<T>> {
    if masks.len() != t.num_heads {
        return Err(Error::Shape("need one mask per head".into()));
    }
    if masks.iter().any(|m| m.seq_len != t.seq_len) {
        return Err(Error::Shape("mask seq_len mismatch".into()));
    }
    let mut out = vec![T::zero(); t.num_heads * t.seq_len * t.head_dim];
    for h in 0..t.num_heads {
        let kv = gqa_map(h, t.num_heads, t.num_kv_heads)?;
        for i in 0..t.seq_len {
            let allowed: Vec<usize> = (0..=i).filter(|&j| masks[h].allowed(i, j)).collect();
            let base = (h * t.seq_len + i) * t.head_dim;
            attend_row(t, h, kv, i, &allowed, &mut out[base..base + t.head_dim])?;
        }
    }
    Ok(out)
}

/// Work accounting for the blocksparse path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileStats {
    /// Causal (query block, key block) tiles actually visited, summed over heads.
    pub tiles_computed: u64,
    /// Tiles a dense causal pass would visit, summed over heads.
    pub dense_tiles: u64,
}

/// Blocksparse attention: only allowed tiles are visited; skipped tiles
/// contribute no work. Output equals [`masked_attention_per_head`] with the
/// per-head token masks within numerical tolerance.
pub fn blocksparse_attention<T: Scalar>(
    t: &AttnTensors<T>,
    assignment: &HeadAssignment,
    template: &SparsePattern,
) -> Result<(Vec<T>, TileStats)> {
    if assignment.num_heads() != t.num_heads {
        return Err(Error::Shape("assignment covers a different head count".into()));
    }
    let b = template.block_size;
    let num_blocks = t.seq_len.div_ceil(b);
    let causal_tiles = (num_blocks * (num_blocks + 1) / 2) as u64;
    let mut out = vec![T::zero(); t.num_heads * t.seq_len * t.head_dim];
    let mut tiles_computed = 0u64;
    for h in 0..t.num_heads {
        let kv = gqa_map(h, t.num_heads, t.num_kv_heads)?;
        let pattern = template.with_offset(assignment.offsets[h])?;
        let mask = block_mask(&pattern, num_blocks)?;
        for qb in 0..num_blocks {
            let key_blocks: Vec<usize> = mask.row(qb).collect();
            tiles_computed += key_blocks.len() as u64;
            let row_end = ((qb + 1) * b).min(t.seq_len);
            for i in qb * b..row_end {
                let allowed: Vec<usize> = key_blocks
                    .iter()
                    .flat_map(|&kb| kb * b..((kb + 1) * b).min(t.seq_len))
                    .filter(|&j| j <= i)
                    .collect();
                let base = (h * t.seq_len + i) * t.head_dim;
                attend_row(t, h, kv, i, &allowed, &mut out[base..base + t.head_dim])?;
            }
        }
    }
    let stats = TileStats {
        tiles_computed,
        dense_tiles: causal_tiles * t.num_heads as u64,
    };
    Ok((out, stats))
}

/// Per-head token masks induced by an assignment, for oracle comparisons.
pub fn per_head_token_masks(
    assignment: &HeadAssignment,
    template: &SparsePattern,
    seq_len: usize,
) -> Result<Vec<TokenMask>> {
    let num_blocks = seq_len.div_ceil(template.block_size);
    assignment
        .offsets
        .iter()
        .map(|&o| {
            let m = block_mask(&template.with_offset(o)?, num_blocks)?;
            token_mask(&m, seq_len, template.block_size)
        })
        .collect()
}

/// Rotary embedding parameters.
#[derive(Debug, Clone, Copy)]
pub struct RopeParams {
    pub theta_base: f64,
    pub head_dim: usize,
}

impl Default for RopeParams {
    fn default() -> Self {
        RopeParams { theta_base: 10000.0, head_dim: 0 }
    }
}

/// Apply rotary position embedding to `x` of shape `[seq, head_dim]`:
/// each `(2i, 2i+1)` pair is rotated by `pos * theta_base^(-2i/head_dim)`.
pub fn rope_apply<T: Scalar>(x: &[T], positions: &[usize], rp: &RopeParams) -> Result<Vec<T>> {
    let hd = rp.head_dim;
    if hd == 0 || hd % 2 != 0 {
        return Err(Error::Shape("head_dim must be even and nonzero".into()));
    }
    if x.len() != positions.len() * hd {
        return Err(Error::Shape("x must be [len(positions), head_dim]".into()));
    }
    let mut out = x.to_vec();
    for (row, &pos) in positions.iter().enumerate() {
        for i in 0..hd / 2 {
            let freq = rp.theta_base.powf(-2.0 * i as f64 / hd as f64);
            let angle = pos as f64 * freq;
            let (sin, cos) = (T::of_f64(angle.sin()), T::of_f64(angle.cos()));
            let a = x[row * hd + 2 * i];
            let b = x[row * hd + 2 * i + 1];
            out[row * hd + 2 * i] = a * cos - b * sin;
            out[row * hd + 2 * i + 1] = a * sin + b * cos;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Sparse,
}

/// Alternating dense/sparse attention schedule, starting dense.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSchedule {
    pub kinds: Vec<LayerKind>,
}

pub fn layer_schedule(num_layers: usize) -> LayerSchedule {
    let kinds = (0..num_layers)
        .map(|l| if l % 2 == 0 { LayerKind::Dense } else { LayerKind::Sparse })
        .collect();
    LayerSchedule { kinds }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparsity::assign_offsets;
    use proptest::prelude::*;

    /// Independent O(n^2) reference: plain exp softmax, no max subtraction,
    /// f64 throughout. Deliberately written as a different route from the
    /// implementation.
    fn naive_masked_attention(
        t: &AttnTensors<f64>,
        allowed: impl Fn(usize, usize, usize) -> bool,
    ) -> Vec<f64> {
        let mut out = vec![0.0; t.num_heads * t.seq_len * t.head_dim];
        for h in 0..t.num_heads {
            let kv = h / (t.num_heads / t.num_kv_heads);
            for i in 0..t.seq_len {
                let mut denom = 0.0;
                let mut acc = vec![0.0; t.head_dim];
                for j in 0..=i {
                    if !allowed(h, i, j) {
                        continue;
                    }
                    let mut s = 0.0;
                    for d in 0..t.head_dim {
                        s += t.q[(h * t.seq_len + i) * t.head_dim + d]
                            * t.k[(kv * t.seq_len + j) * t.head_dim + d];
                    }
                    let w = (s * t.scale).exp();
                    denom += w;
                    for d in 0..t.head_dim {
                        acc[d] += w * t.v[(kv * t.seq_len + j) * t.head_dim + d];
                    }
                }
                for d in 0..t.head_dim {
                    out[(h * t.seq_len + i) * t.head_dim + d] = acc[d] / denom;
                }
            }
        }
        out
    }

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn seq_one_returns_v() {
        let t = AttnTensors::<f64>::random(7, 4, 2, 1, 3).unwrap();
        let out = dense_causal_attention(&t).unwrap();
        for h in 0..4 {
            let kv = gqa_map(h, 4, 2).unwrap();
            for d in 0..3 {
                assert!((out[h * 3 + d] - t.v[kv * 3 + d]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_keys_give_running_mean_of_v() {
        let head_dim = 2;
        let seq = 3;
        let k = vec![0.5; seq * head_dim]; // all rows equal -> uniform weights
        let v: Vec<f64> = (0..seq * head_dim).map(|i| i as f64).collect();
        let q = vec![0.3; seq * head_dim];
        let t = AttnTensors::new(1, 1, seq, head_dim, q, k, v.clone()).unwrap();
        let out = dense_causal_attention(&t).unwrap();
        for i in 0..seq {
            for d in 0..head_dim {
                let mean: f64 =
                    (0..=i).map(|j| v[j * head_dim + d]).sum::<f64>() / (i + 1) as f64;
                assert!((out[i * head_dim + d] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_matches_naive_oracle() {
        let t = AttnTensors::<f64>::random(11, 2, 2, 8, 4).unwrap();
        let out = dense_causal_attention(&t).unwrap();
        let oracle = naive_masked_attention(&t, |_, _, _| true);
        assert!(max_abs_diff(&out, &oracle) < 1e-6);
    }

    #[test]
    fn full_causal_mask_equals_dense_exactly() {
        let t = AttnTensors::<f64>::random(3, 4, 4, 12, 4).unwrap();
        let dense = dense_causal_attention(&t).unwrap();
        let masked = masked_attention(&t, &TokenMask::causal(12)).unwrap();
        assert_eq!(dense, masked);
    }

    #[test]
    fn diagonal_mask_returns_v() {
        let t = AttnTensors::<f64>::random(5, 2, 2, 6, 4).unwrap();
        let out = masked_attention(&t, &TokenMask::diagonal(6)).unwrap();
        for h in 0..2 {
            let kv = gqa_map(h, 2, 2).unwrap();
            for i in 0..6 {
                for d in 0..4 {
                    let got = out[(h * 6 + i) * 4 + d];
                    let want = t.v[(kv * 6 + i) * 4 + d];
                    assert!((got - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn figure2_token_mask_matches_naive_oracle() {
        let p = SparsePattern::new(4, 2, 3, 0).unwrap();
        let m = block_mask(&p, 8).unwrap();
        let tm = token_mask(&m, 32, 4).unwrap();
        let t = AttnTensors::<f64>::random(13, 2, 2, 32, 4).unwrap();
        let out = masked_attention(&t, &tm).unwrap();
        let oracle = naive_masked_attention(&t, |_, i, j| tm.allowed(i, j));
        assert!(max_abs_diff(&out, &oracle) < 1e-6);
    }

    #[test]
    fn nan_input_rejected() {
        let mut q = vec![0.0f64; 4];
        q[2] = f64::NAN;
        let r = AttnTensors::new(1, 1, 2, 2, q, vec![0.0; 4], vec![0.0; 4]);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn blocksparse_stride_one_equals_dense_with_dense_tiles() {
        let p = SparsePattern::new(4, 1, 1, 0).unwrap();
        let a = assign_offsets(2, 2, 1).unwrap();
        let t = AttnTensors::<f64>::random(17, 2, 2, 16, 4).unwrap();
        let (out, stats) = blocksparse_attention(&t, &a, &p).unwrap();
        let dense = dense_causal_attention(&t).unwrap();
        assert!(max_abs_diff(&out, &dense) < 1e-12);
        assert_eq!(stats.tiles_computed, stats.dense_tiles);
    }

    #[test]
    fn blocksparse_matches_per_head_masks_and_tile_count() {
        let p = SparsePattern::new(8, 2, 3, 0).unwrap();
        let a = assign_offsets(6, 6, 3).unwrap();
        let t = AttnTensors::<f64>::random(23, 6, 6, 64, 4).unwrap();
        let (out, stats) = blocksparse_attention(&t, &a, &p).unwrap();
        let masks = per_head_token_masks(&a, &p, 64).unwrap();
        let refs: Vec<&TokenMask> = masks.iter().collect();
        let oracle = masked_attention_per_head(&t, &refs).unwrap();
        assert!(max_abs_diff(&out, &oracle) < 1e-5);
        // exact allowed-tile count per head from the block masks
        let mut expect = 0u64;
        for &o in &a.offsets {
            let m = block_mask(&p.with_offset(o).unwrap(), 8).unwrap();
            expect += m.allowed_count() as u64;
        }
        assert_eq!(stats.tiles_computed, expect);
    }

    #[test]
    fn short_sequence_all_local_equals_dense() {
        // seq <= Lb * B: every block is local on every head
        let p = SparsePattern::new(8, 2, 3, 0).unwrap();
        let a = assign_offsets(4, 2, 3).unwrap();
        let t = AttnTensors::<f64>::random(29, 4, 2, 16, 4).unwrap();
        let (out, _) = blocksparse_attention(&t, &a, &p).unwrap();
        let dense = dense_causal_attention(&t).unwrap();
        assert!(max_abs_diff(&out, &dense) < 1e-12);
    }

    #[test]
    fn gqa_map_examples() {
        assert_eq!(gqa_map(5, 32, 8).unwrap(), 1);
        for h in 0..8 {
            assert_eq!(gqa_map(h, 8, 8).unwrap(), h);
        }
        let mut sizes = vec![0usize; 8];
        for h in 0..32 {
            sizes[gqa_map(h, 32, 8).unwrap()] += 1;
        }
        assert!(sizes.iter().all(|&s| s == 4));
        assert!(gqa_map(32, 32, 8).is_err());
    }

    #[test]
    fn gqa_replicated_kv_equals_full_multihead() {
        let t = AttnTensors::<f64>::random(31, 4, 2, 8, 4).unwrap();
        // replicate each kv head across its query group
        let mut k_full = Vec::new();
        let mut v_full = Vec::new();
        for h in 0..4 {
            let kv = gqa_map(h, 4, 2).unwrap();
            k_full.extend_from_slice(&t.k[kv * 8 * 4..(kv + 1) * 8 * 4]);
            v_full.extend_from_slice(&t.v[kv * 8 * 4..(kv + 1) * 8 * 4]);
        }
        let full = AttnTensors::new(4, 4, 8, 4, t.q.clone(), k_full, v_full).unwrap();
        let a = dense_causal_attention(&t).unwrap();
        let b = dense_causal_attention(&full).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rope_position_zero_is_identity() {
        let rp = RopeParams { theta_base: 10000.0, head_dim: 8 };
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.3 - 1.0).collect();
        let y = rope_apply(&x, &[0], &rp).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn rope_preserves_pair_norms() {
        let rp = RopeParams { theta_base: 10000.0, head_dim: 6 };
        let mut rng_vals: Vec<f64> = (0..18).map(|i| (i as f64 * 0.77).sin()).collect();
        rng_vals[0] = 2.5;
        let y = rope_apply(&rng_vals, &[3, 11, 42], &rp).unwrap();
        for row in 0..3 {
            for i in 0..3 {
                let a = (rng_vals[row * 6 + 2 * i], rng_vals[row * 6 + 2 * i + 1]);
                let b = (y[row * 6 + 2 * i], y[row * 6 + 2 * i + 1]);
                let na = (a.0 * a.0 + a.1 * a.1).sqrt();
                let nb = (b.0 * b.0 + b.1 * b.1).sqrt();
                assert!((na - nb).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rope_dot_depends_only_on_relative_position() {
        let rp = RopeParams { theta_base: 10000.0, head_dim: 8 };
        let q: Vec<f64> = (0..8).map(|i| ((i * 7 + 1) as f64 * 0.13).cos()).collect();
        let k: Vec<f64> = (0..8).map(|i| ((i * 3 + 2) as f64 * 0.29).sin()).collect();
        let dot_at = |m: usize, n: usize| -> f64 {
            let qm = rope_apply(&q, &[m], &rp).unwrap();
            let kn = rope_apply(&k, &[n], &rp).unwrap();
            qm.iter().zip(&kn).map(|(a, b)| a * b).sum()
        };
        assert!((dot_at(5, 2) - dot_at(7, 4)).abs() < 1e-6);
    }

    #[test]
    fn rope_odd_head_dim_rejected() {
        let rp = RopeParams { theta_base: 10000.0, head_dim: 3 };
        assert!(rope_apply(&[0.0; 3], &[0], &rp).is_err());
    }

    #[test]
    fn schedule_alternates_starting_dense() {
        assert_eq!(layer_schedule(1).kinds, vec![LayerKind::Dense]);
        assert_eq!(
            layer_schedule(4).kinds,
            vec![LayerKind::Dense, LayerKind::Sparse, LayerKind::Dense, LayerKind::Sparse]
        );
        let s = layer_schedule(32);
        let dense = s.kinds.iter().filter(|&&k| k == LayerKind::Dense).count();
        assert_eq!((dense, 32 - dense), (16, 16));
        for w in s.kinds.windows(2) {
            assert_ne!(w[0], w[1]);
        }
    }

    #[test]
    fn causality_mutation_check() {
        // perturbing a future token never changes earlier rows
        let mut t = AttnTensors::<f64>::random(37, 2, 1, 10, 4).unwrap();
        let base = dense_causal_attention(&t).unwrap();
        for case in 0..10 {
            let j = 3 + (case % 7); // mutated key position
            let mut mutated = t.clone();
            for d in 0..4 {
                mutated.k[(j * 4) + d] += 10.0 + case as f64;
                mutated.v[(j * 4) + d] -= 5.0;
            }
            let out = dense_causal_attention(&mutated).unwrap();
            for h in 0..2 {
                for i in 0..j {
                    for d in 0..4 {
                        let idx = (h * 10 + i) * 4 + d;
                        assert_eq!(base[idx], out[idx], "row {i} changed by future {j}");
                    }
                }
            }
        }
        t.q[0] += 0.0; // keep t alive for clarity
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn blocksparse_equals_masked_oracle(
            seed in 0u64..1000,
            seq_pow in 1usize..5,
            b in prop::sample::select(vec![2usize, 4, 8]),
            lb in 1usize..4,
            s in 1usize..5,
            heads in prop::sample::select(vec![1usize, 2, 4]),
        ) {
            let seq = b * (1 << seq_pow).min(16);
            let kv = heads; // divisor variants covered elsewhere
            let p = SparsePattern::new(b, lb, s, 0).unwrap();
            let a = assign_offsets(heads, kv, s).unwrap();
            let t = AttnTensors::<f32>::random(seed, heads, kv, seq, 4).unwrap();
            let (out, _) = blocksparse_attention(&t, &a, &p).unwrap();
            let masks = per_head_token_masks(&a, &p, seq).unwrap();
            let refs: Vec<&TokenMask> = masks.iter().collect();
            let oracle = masked_attention_per_head(&t, &refs).unwrap();
            for (x, y) in out.iter().zip(&oracle) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }

        #[test]
        fn softmax_rows_sum_to_one(seed in 0u64..500, seq in 2usize..20) {
            // with all-ones V the output is exactly the row sum of weights
            let t0 = AttnTensors::<f64>::random(seed, 2, 2, seq, 4).unwrap();
            let ones = vec![1.0; 2 * seq * 4];
            let t = AttnTensors::new(2, 2, seq, 4, t0.q, t0.k, ones).unwrap();
            let out = dense_causal_attention(&t).unwrap();
            for &x in &out {
                prop_assert!((x - 1.0).abs() < 1e-6);
            }
        }
    }
}
