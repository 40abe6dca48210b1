//! Per-head KV-cache retention under the blocksparse pattern during
//! autoregressive decode, cache-savings accounting, and a page-count model
//! of the paged layout.
//!
//! A block is retained at decode position `current_block = c` iff some query
//! in a block beyond `c` may still attend it:
//!
//! ```text
//! retained(c) = {k <= c : k = o (mod S)}  ∪  {max(0, c - Lb + 2), ..., c}
//! ```
//!
//! The local term is the window the *next* query block needs; the block at
//! `c - Lb + 1` is only visible to queries inside block `c` itself, so it is
//! evictable once block `c` completes. Eviction therefore happens at block
//! boundaries, which is what makes the decode outputs bit-for-bit comparable
//! with a full-cache blocksparse pass.

use std::collections::{BTreeMap, BTreeSet};

use crate::attention::{gqa_map, softmax_attend, AttnTensors, Scalar};
use crate::error::{Error, Result};
use crate::sparsity::{HeadAssignment, SparsePattern};

/// Blocks that must stay cached once decoding has reached `current_block`.
pub fn retained_blocks(p: &SparsePattern, current_block: usize) -> BTreeSet<usize> {
    let mut set: BTreeSet<usize> = (p.head_offset..=current_block)
        .step_by(p.vertical_stride)
        .collect();
    let local_start = (current_block + 2).saturating_sub(p.local_blocks);
    set.extend(local_start..=current_block);
    set
}

/// Fraction of KV blocks evictable by the end of a `num_blocks`-long decode.
/// Approaches `1 - 1/S` as `num_blocks` grows, for fixed `Lb`.
pub fn kv_savings(p: &SparsePattern, num_blocks: usize) -> f64 {
    assert!(num_blocks >= 1);
    let retained = retained_blocks(p, num_blocks - 1).len();
    1.0 - retained as f64 / num_blocks as f64
}

/// Cache state at the end of a simulated decode.
#[derive(Debug, Clone, PartialEq)]
pub struct RetentionReport {
    /// Retained block indices, one set per kv head.
    pub per_head_retained_blocks: Vec<BTreeSet<usize>>,
    /// Tokens retained, summed over kv heads.
    pub retained_tokens: u64,
    /// Tokens a dense cache would hold, summed over kv heads.
    pub dense_tokens: u64,
    /// `1 - retained / dense`.
    pub savings: f64,
}

struct HeadCache<T> {
    // block index -> per-token K and V rows
    blocks: BTreeMap<usize, Vec<(Vec<T>, Vec<T>)>>,
}

/// Token-by-token decode with block-granular eviction.
///
/// At each step the new token's K/V are appended to the current block of
/// every kv head; when a block completes (and at end of sequence) blocks
/// outside [`retained_blocks`] are evicted. Step outputs are laid out
/// `[heads, head_dim]` per step and equal the corresponding rows of the
/// full-cache blocksparse pass.
pub fn simulate_decode<T: Scalar>(
    template: &SparsePattern,
    assignment: &HeadAssignment,
    t: &AttnTensors<T>,
) -> Result<(Vec<Vec<T>>, RetentionReport)> {
    if assignment.num_heads() != t.num_heads {
        return Err(Error::Shape("assignment covers a different head count".into()));
    }
    let b = template.block_size;
    let group = t.num_heads / t.num_kv_heads;
    // kv heads inherit the offset shared by their query group
    let mut kv_patterns = Vec::with_capacity(t.num_kv_heads);
    for kv in 0..t.num_kv_heads {
        let o = assignment.offsets[kv * group];
        for h in kv * group..(kv + 1) * group {
            if assignment.offsets[h] != o {
                return Err(Error::Config(
                    "query heads sharing a kv head must share an offset".into(),
                ));
            }
        }
        kv_patterns.push(template.with_offset(o)?);
    }

    let mut caches: Vec<HeadCache<T>> = (0..t.num_kv_heads)
        .map(|_| HeadCache { blocks: BTreeMap::new() })
        .collect();
    let mut outputs = Vec::with_capacity(t.seq_len);

    for i in 0..t.seq_len {
        let c = i / b;
        for kv in 0..t.num_kv_heads {
            let kbase = (kv * t.seq_len + i) * t.head_dim;
            let k_row = t.k[kbase..kbase + t.head_dim].to_vec();
            let v_row = t.v[kbase..kbase + t.head_dim].to_vec();
            caches[kv].blocks.entry(c).or_default().push((k_row, v_row));
        }

        let mut step = vec![T::zero(); t.num_heads * t.head_dim];
        for h in 0..t.num_heads {
            let kv = gqa_map(h, t.num_heads, t.num_kv_heads)?;
            let pattern = &kv_patterns[kv];
            let mut rows: Vec<(&[T], &[T])> = Vec::new();
            for (&kb, tokens) in &caches[kv].blocks {
                if !pattern.allows(c, kb) {
                    continue;
                }
                for (off, (kr, vr)) in tokens.iter().enumerate() {
                    if kb * b + off <= i {
                        rows.push((kr.as_slice(), vr.as_slice()));
                    }
                }
            }
            let qbase = (h * t.seq_len + i) * t.head_dim;
            softmax_attend(
                t.scale,
                &t.q[qbase..qbase + t.head_dim],
                &rows,
                &mut step[h * t.head_dim..(h + 1) * t.head_dim],
            )?;
        }
        outputs.push(step);

        let block_complete = (i + 1) % b == 0 || i + 1 == t.seq_len;
        if block_complete {
            for kv in 0..t.num_kv_heads {
                let keep = retained_blocks(&kv_patterns[kv], c);
                caches[kv].blocks.retain(|kb, _| keep.contains(kb));
            }
        }
    }

    let per_head_retained_blocks: Vec<BTreeSet<usize>> = caches
        .iter()
        .map(|cache| cache.blocks.keys().copied().collect())
        .collect();
    let retained_tokens: u64 = caches
        .iter()
        .flat_map(|cache| cache.blocks.values())
        .map(|tokens| tokens.len() as u64)
        .sum();
    let dense_tokens = (t.num_kv_heads * t.seq_len) as u64;
    let savings = 1.0 - retained_tokens as f64 / dense_tokens as f64;
    let report = RetentionReport {
        per_head_retained_blocks,
        retained_tokens,
        dense_tokens,
        savings,
    };
    Ok((outputs, report))
}

/// Paged-memory statistics for the retained cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PagedLayout {
    pub page_size: usize,
    pub pages_per_kv_head: usize,
    pub total_pages: usize,
    pub total_bytes: u64,
}

/// Page counts and bytes to hold `retained_tokens_per_kv_head` tokens of K
/// and V per kv head.
pub fn paged_footprint(
    retained_tokens_per_kv_head: usize,
    page_size: usize,
    kv_heads: usize,
    head_dim: usize,
    bytes_per_scalar: usize,
) -> Result<PagedLayout> {
    if page_size == 0 || kv_heads == 0 || head_dim == 0 || bytes_per_scalar == 0 {
        return Err(Error::Config("page_size, kv_heads, head_dim, bytes_per_scalar must be > 0".into()));
    }
    let pages_per_kv_head = retained_tokens_per_kv_head.div_ceil(page_size);
    let total_pages = pages_per_kv_head * kv_heads;
    let total_bytes = (total_pages * page_size * head_dim * 2 * bytes_per_scalar) as u64;
    Ok(PagedLayout { page_size, pages_per_kv_head, total_pages, total_bytes })
}
