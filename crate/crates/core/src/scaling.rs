//! Scaling-curve data: log MMLU error versus log model size for the phi
//! family, built from the bundled benchmark table.

use serde::Deserialize;

use crate::error::{Error, Result};

/// One benchmark-table row: model size and its MMLU score.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchEntry {
    pub model_name: String,
    pub param_count: u64,
    pub mmlu: f64,
}

/// A point on the scaling curve: `(ln size, ln (100 - mmlu))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingPoint {
    pub ln_size: f64,
    pub ln_error: f64,
}

/// Map bench entries to scaling points, order preserved.
pub fn scaling_points(entries: &[BenchEntry]) -> Result<Vec<ScalingPoint>> {
    entries
        .iter()
        .map(|e| {
            if e.param_count == 0 {
                return Err(Error::Config(format!("{}: param_count must be > 0", e.model_name)));
            }
            if e.mmlu <= 0.0 || e.mmlu >= 100.0 {
                return Err(Error::Config(format!(
                    "{}: mmlu {} outside (0, 100)",
                    e.model_name, e.mmlu
                )));
            }
            Ok(ScalingPoint {
                ln_size: (e.param_count as f64).ln(),
                ln_error: (100.0 - e.mmlu).ln(),
            })
        })
        .collect()
}

/// Bundled MMLU 5-shot entries for the phi-3 family.
pub const BENCH_JSON: &str = include_str!("../data/bench-mmlu.json");

pub fn bundled_entries() -> Result<Vec<BenchEntry>> {
    serde_json::from_str(BENCH_JSON).map_err(|e| Error::Parse(e.to_string()))
}
