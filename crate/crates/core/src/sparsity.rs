//! Per-head blocksparse attention patterns: local blocks plus vertical
//! stride columns, block- and token-level mask materialization, head offset
//! assignment, and the all-heads coverage guarantee.
//!
//! Membership rule for a pattern with `local_blocks` Lb, `vertical_stride` S
//! and `head_offset` o:
//!
//! ```text
//! allowed[q][k] = (k <= q) && (q - k < Lb || k % S == o)
//! ```
//!
//! Block indexing is 0-based everywhere. Vertical columns are anchored at
//! residue `o` counted from block 0, which keeps the retained KV set stable
//! across decode steps.

use crate::error::{Error, Result};

/// Per-head blocksparse attention rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SparsePattern {
    /// Tokens per block.
    pub block_size: usize,
    /// Count of most-recent query-aligned blocks always attended (>= 1).
    pub local_blocks: usize,
    /// Period of always-attended vertical key-block columns (>= 1).
    pub vertical_stride: usize,
    /// Residue class in `[0, vertical_stride)` selecting this head's columns.
    pub head_offset: usize,
}

impl SparsePattern {
    pub fn new(
        block_size: usize,
        local_blocks: usize,
        vertical_stride: usize,
        head_offset: usize,
    ) -> Result<Self> {
        if block_size == 0 || local_blocks == 0 || vertical_stride == 0 {
            return Err(Error::Config(
                "block_size, local_blocks, vertical_stride must all be >= 1".into(),
            ));
        }
        if head_offset >= vertical_stride {
            return Err(Error::Config("head_offset must be < vertical_stride".into()));
        }
        Ok(SparsePattern { block_size, local_blocks, vertical_stride, head_offset })
    }

    /// Same pattern with a different head offset.
    pub fn with_offset(&self, head_offset: usize) -> Result<Self> {
        SparsePattern::new(self.block_size, self.local_blocks, self.vertical_stride, head_offset)
    }

    /// Whether key block `k` is attended by query block `q`.
    pub fn allows(&self, q: usize, k: usize) -> bool {
        k <= q && (q - k < self.local_blocks || k % self.vertical_stride == self.head_offset)
    }
}

/// How a (query block, key block) cell is classified by the rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Local,
    Vertical,
    Skipped,
    Acausal,
}

/// Classify a cell; a block that is both local and vertical counts as local.
pub fn cell_kind(p: &SparsePattern, q: usize, k: usize) -> CellKind {
    if k > q {
        CellKind::Acausal
    } else if q - k < p.local_blocks {
        CellKind::Local
    } else if k % p.vertical_stride == p.head_offset {
        CellKind::Vertical
    } else {
        CellKind::Skipped
    }
}

/// Materialized block-level boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMask {
    pub num_blocks: usize,
    allowed: Vec<bool>,
}

impl BlockMask {
    pub fn allowed(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.num_blocks + k]
    }

    /// Key blocks allowed for query block `q`.
    pub fn row(&self, q: usize) -> impl Iterator<Item = usize> + '_ {
        let base = q * self.num_blocks;
        (0..self.num_blocks).filter(move |&k| self.allowed[base + k])
    }

    /// Number of allowed causal entries.
    pub fn allowed_count(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }
}

/// Materialize the block mask for `num_blocks` query/key blocks.
pub fn block_mask(p: &SparsePattern, num_blocks: usize) -> Result<BlockMask> {
    if num_blocks == 0 {
        return Err(Error::Config("num_blocks must be >= 1".into()));
    }
    let mut allowed = vec![false; num_blocks * num_blocks];
    for q in 0..num_blocks {
        for k in 0..=q {
            allowed[q * num_blocks + k] = p.allows(q, k);
        }
    }
    Ok(BlockMask { num_blocks, allowed })
}

/// Fraction of the causal triangle the mask keeps; full causal mask -> 1.0.
pub fn density(m: &BlockMask) -> f64 {
    let causal = m.num_blocks * (m.num_blocks + 1) / 2;
    m.allowed_count() as f64 / causal as f64
}

/// Token-level boolean mask expanded from a block mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenMask {
    pub seq_len: usize,
    allowed: Vec<bool>,
}

impl TokenMask {
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.seq_len + j]
    }

    /// Full causal lower-triangular mask.
    pub fn causal(seq_len: usize) -> TokenMask {
        let mut allowed = vec![false; seq_len * seq_len];
        for i in 0..seq_len {
            for j in 0..=i {
                allowed[i * seq_len + j] = true;
            }
        }
        TokenMask { seq_len, allowed }
    }

    /// Diagonal-only mask.
    pub fn diagonal(seq_len: usize) -> TokenMask {
        let mut allowed = vec![false; seq_len * seq_len];
        for i in 0..seq_len {
            allowed[i * seq_len + i] = true;
        }
        TokenMask { seq_len, allowed }
    }
}

/// Expand a block mask to token granularity with intra-block causality:
/// token `(i, j)` is allowed iff `j <= i` and the enclosing block pair is.
pub fn token_mask(m: &BlockMask, seq_len: usize, block_size: usize) -> Result<TokenMask> {
    if block_size == 0 {
        return Err(Error::Config("block_size must be >= 1".into()));
    }
    if seq_len > m.num_blocks * block_size {
        return Err(Error::Shape(format!(
            "seq_len {seq_len} exceeds mask capacity {}",
            m.num_blocks * block_size
        )));
    }
    let mut allowed = vec![false; seq_len * seq_len];
    for i in 0..seq_len {
        for j in 0..=i {
            allowed[i * seq_len + j] = m.allowed(i / block_size, j / block_size);
        }
    }
    Ok(TokenMask { seq_len, allowed })
}

/// Per-head vertical-column offsets, grouped so all query heads sharing a
/// kv head share an offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadAssignment {
    /// One offset per query head.
    pub offsets: Vec<usize>,
    pub stride: usize,
}

impl HeadAssignment {
    pub fn num_heads(&self) -> usize {
        self.offsets.len()
    }
}

/// Assign vertical offsets to heads: `offset(h) = (h div (H/H_kv)) mod S`,
/// so the query heads of one kv head share a single pattern and the kv
/// heads walk through the residues in order.
pub fn assign_offsets(num_heads: usize, num_kv_heads: usize, stride: usize) -> Result<HeadAssignment> {
    if num_heads == 0 || num_kv_heads == 0 || stride == 0 {
        return Err(Error::Config("heads and stride must be >= 1".into()));
    }
    if num_heads % num_kv_heads != 0 {
        return Err(Error::Config("H mod H_kv != 0".into()));
    }
    let group = num_heads / num_kv_heads;
    let offsets = (0..num_heads).map(|h| (h / group) % stride).collect();
    Ok(HeadAssignment { offsets, stride })
}

/// Result of the all-heads coverage check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageReport {
    pub covered: bool,
    /// Causal block pairs no head's mask allows.
    pub uncovered: Vec<(usize, usize)>,
}

/// Brute-force check that every causal `(q, k)` block pair is allowed by at
/// least one head's mask under the assignment.
pub fn coverage_check(
    assignment: &HeadAssignment,
    template: &SparsePattern,
    num_blocks: usize,
) -> Result<CoverageReport> {
    if template.vertical_stride != assignment.stride {
        return Err(Error::Config("assignment stride differs from pattern stride".into()));
    }
    let patterns: Vec<SparsePattern> = assignment
        .offsets
        .iter()
        .map(|&o| template.with_offset(o))
        .collect::<Result<_>>()?;
    let mut uncovered = Vec::new();
    for q in 0..num_blocks {
        for k in 0..=q {
            if !patterns.iter().any(|p| p.allows(q, k)) {
                uncovered.push((q, k));
            }
        }
    }
    Ok(CoverageReport { covered: uncovered.is_empty(), uncovered })
}
