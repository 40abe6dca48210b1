//! Model configurations for the Phi-3 family, closed-form parameter counting
//! (dense and MoE), and the chat template formatter.
//!
//! Parameter counting formula (untied embeddings count twice):
//!
//! ```text
//! total = (2 - tied) * V * d
//!       + L * ( d*d                    Q projection
//!             + 2 * d * (head_dim*Hkv) K and V projections (GQA-narrowed)
//!             + d*d                    output projection
//!             + 3 * d * f )            GEGLU FFN: gate, up, down
//!       + L * 2 * d + d                per-layer norms + final norm
//! ```
//!
//! Biases are assumed absent. The MoE variant replaces the dense FFN term
//! with `E * 3 * d * f_e` per layer plus a router `E * d` per layer; the
//! active count evaluates only `top_k` experts per layer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of one dense model variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    pub hidden_dim: u64,
    pub num_layers: u64,
    pub num_heads: u64,
    pub num_kv_heads: u64,
    pub head_dim: u64,
    pub ffn_dim: u64,
    pub vocab_size: u64,
    pub context_len: u64,
    pub tied_embeddings: bool,
}

impl ModelConfig {
    /// Check the structural invariants, naming the violated constraint.
    pub fn validate(&self) -> Result<()> {
        for (label, v) in [
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("num_kv_heads", self.num_kv_heads),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("context_len", self.context_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{label} must be > 0")));
            }
        }
        if self.num_heads % self.num_kv_heads != 0 {
            return Err(Error::Config("H mod H_kv != 0".into()));
        }
        if self.head_dim * self.num_heads != self.hidden_dim {
            return Err(Error::Config("head_dim * H != hidden_dim".into()));
        }
        Ok(())
    }
}

/// Mixture-of-experts variant: a dense base plus expert/router dimensions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MoEConfig {
    pub base: ModelConfig,
    pub num_experts: u64,
    pub top_k: u64,
    pub expert_ffn_dim: u64,
}

impl MoEConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.top_k == 0 || self.top_k > self.num_experts {
            return Err(Error::Config("top_k must satisfy 1 <= top_k <= E".into()));
        }
        if self.expert_ffn_dim == 0 {
            return Err(Error::Config("expert_ffn_dim must be > 0".into()));
        }
        Ok(())
    }
}

/// Scalar parameter counts: `total` stored, `active` touched per token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub total: u64,
    pub active: u64,
}

fn embedding_params(cfg: &ModelConfig) -> u64 {
    let copies = if cfg.tied_embeddings { 1 } else { 2 };
    copies * cfg.vocab_size * cfg.hidden_dim
}

fn attn_params_per_layer(cfg: &ModelConfig) -> u64 {
    let d = cfg.hidden_dim;
    let kv_dim = cfg.head_dim * cfg.num_kv_heads;
    d * d + 2 * d * kv_dim + d * d
}

fn norm_params(cfg: &ModelConfig) -> u64 {
    cfg.num_layers * 2 * cfg.hidden_dim + cfg.hidden_dim
}

/// Closed-form parameter count for a dense model.
pub fn param_count(cfg: &ModelConfig) -> Result<ParamCount> {
    cfg.validate()?;
    let per_layer = attn_params_per_layer(cfg) + 3 * cfg.hidden_dim * cfg.ffn_dim;
    let total = embedding_params(cfg) + cfg.num_layers * per_layer + norm_params(cfg);
    Ok(ParamCount { total, active: total })
}

/// Parameter count for an MoE model: the dense FFN is replaced by `E` GLU
/// experts plus a linear router per layer; `active` evaluates `top_k` experts.
pub fn moe_param_count(cfg: &MoEConfig) -> Result<ParamCount> {
    cfg.validate()?;
    let base = &cfg.base;
    let d = base.hidden_dim;
    let expert = 3 * d * cfg.expert_ffn_dim;
    let router = cfg.num_experts * d;
    let shared = embedding_params(base)
        + base.num_layers * (attn_params_per_layer(base) + router)
        + norm_params(base);
    let total = shared + base.num_layers * cfg.num_experts * expert;
    let active = shared + base.num_layers * cfg.top_k * expert;
    Ok(ParamCount { total, active })
}

pub const USER_MARKER: &str = "<|user|>";
pub const ASSISTANT_MARKER: &str = "<|assistant|>";
pub const END_MARKER: &str = "<|end|>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    User,
    Assistant,
}

/// One turn of a chat conversation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn user(content: impl Into<String>) -> Self {
        ChatTurn { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatTurn { role: Role::Assistant, content: content.into() }
    }
}

/// Render a conversation in the Phi-3 chat template, byte-exact.
///
/// Each turn emits `<|role|>\n` + content + `<|end|>\n`; the rendering always
/// terminates with a trailing `<|assistant|>` (no newline) to cue generation.
/// Roles must alternate starting with user.
pub fn chat_format(turns: &[ChatTurn]) -> Result<String> {
    if turns.is_empty() {
        return Err(Error::Chat("empty conversation".into()));
    }
    let mut out = String::new();
    for (i, turn) in turns.iter().enumerate() {
        let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
        if turn.role != expected {
            return Err(Error::Chat(format!(
                "roles must alternate starting with user; turn {i} out of order"
            )));
        }
        for marker in [USER_MARKER, ASSISTANT_MARKER, END_MARKER] {
            if turn.content.contains(marker) {
                return Err(Error::Chat(format!("content contains reserved marker {marker}")));
            }
        }
        let header = match turn.role {
            Role::User => USER_MARKER,
            Role::Assistant => ASSISTANT_MARKER,
        };
        out.push_str(header);
        out.push('\n');
        out.push_str(&turn.content);
        out.push_str(END_MARKER);
        out.push('\n');
    }
    out.push_str(ASSISTANT_MARKER);
    Ok(out)
}

/// Inverse of [`chat_format`]: recover the turns from a rendered template.
pub fn parse_chat(text: &str) -> Result<Vec<ChatTurn>> {
    let body = text
        .strip_suffix(ASSISTANT_MARKER)
        .ok_or_else(|| Error::Chat("missing trailing assistant cue".into()))?;
    let mut turns = Vec::new();
    let mut rest = body;
    while !rest.is_empty() {
        let (role, after_header) = if let Some(r) = rest.strip_prefix(USER_MARKER) {
            (Role::User, r)
        } else if let Some(r) = rest.strip_prefix(ASSISTANT_MARKER) {
            (Role::Assistant, r)
        } else {
            return Err(Error::Chat("expected role marker".into()));
        };
        let after_newline = after_header
            .strip_prefix('\n')
            .ok_or_else(|| Error::Chat("missing newline after role marker".into()))?;
        let end = after_newline
            .find(END_MARKER)
            .ok_or_else(|| Error::Chat("missing end marker".into()))?;
        turns.push(ChatTurn {
            role,
            content: after_newline[..end].to_string(),
        });
        rest = after_newline[end + END_MARKER.len()..]
            .strip_prefix('\n')
            .ok_or_else(|| Error::Chat("missing newline after end marker".into()))?;
    }
    if turns.is_empty() {
        return Err(Error::Chat("empty conversation".into()));
    }
    Ok(turns)
}

/// Raw JSON schema for bundled config files; unknown fields are rejected.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    hidden_dim: u64,
    num_layers: u64,
    num_heads: u64,
    num_kv_heads: u64,
    head_dim: u64,
    ffn_dim: u64,
    vocab_size: u64,
    context_len: u64,
    tied_embeddings: bool,
    num_experts: Option<u64>,
    top_k: Option<u64>,
    expert_ffn_dim: Option<u64>,
}

/// Either a dense or an MoE configuration, as loaded from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LoadedConfig {
    Dense(ModelConfig),
    Moe(MoEConfig),
}

impl LoadedConfig {
    pub fn base(&self) -> &ModelConfig {
        match self {
            LoadedConfig::Dense(c) => c,
            LoadedConfig::Moe(c) => &c.base,
        }
    }

    pub fn param_count(&self) -> Result<ParamCount> {
        match self {
            LoadedConfig::Dense(c) => param_count(c),
            LoadedConfig::Moe(c) => moe_param_count(c),
        }
    }
}

/// Parse a config from JSON text and validate its invariants.
pub fn parse_config(json: &str) -> Result<LoadedConfig> {
    let raw: RawConfig = serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    let base = ModelConfig {
        name: raw.name,
        hidden_dim: raw.hidden_dim,
        num_layers: raw.num_layers,
        num_heads: raw.num_heads,
        num_kv_heads: raw.num_kv_heads,
        head_dim: raw.head_dim,
        ffn_dim: raw.ffn_dim,
        vocab_size: raw.vocab_size,
        context_len: raw.context_len,
        tied_embeddings: raw.tied_embeddings,
    };
    match (raw.num_experts, raw.top_k, raw.expert_ffn_dim) {
        (None, None, None) => {
            base.validate()?;
            Ok(LoadedConfig::Dense(base))
        }
        (Some(num_experts), Some(top_k), Some(expert_ffn_dim)) => {
            let cfg = MoEConfig { base, num_experts, top_k, expert_ffn_dim };
            cfg.validate()?;
            Ok(LoadedConfig::Moe(cfg))
        }
        _ => Err(Error::Parse(
            "num_experts, top_k, expert_ffn_dim must be given together".into(),
        )),
    }
}

/// Load and validate a config file.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

/// Bundled configuration files, keyed by model name.
pub mod bundled {
    use super::{parse_config, LoadedConfig, Result};
    use crate::error::Error;

    pub const PHI_3_MINI: &str = include_str!("../data/phi-3-mini.json");
    pub const PHI_3_SMALL: &str = include_str!("../data/phi-3-small.json");
    pub const PHI_3_MEDIUM: &str = include_str!("../data/phi-3-medium.json");
    pub const PHI_3_5_MOE: &str = include_str!("../data/phi-3.5-moe.json");

    pub const NAMES: [&str; 4] = ["phi-3-mini", "phi-3-small", "phi-3-medium", "phi-3.5-moe"];

    pub fn by_name(name: &str) -> Result<LoadedConfig> {
        let json = match name {
            "phi-3-mini" => PHI_3_MINI,
            "phi-3-small" => PHI_3_SMALL,
            "phi-3-medium" => PHI_3_MEDIUM,
            "phi-3.5-moe" => PHI_3_5_MOE,
            _ => return Err(Error::Config(format!("unknown bundled config {name}"))),
        };
        parse_config(json)
    }
}
