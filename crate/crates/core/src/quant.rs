//! Group-wise symmetric int4 weight quantization with a provable round-trip
//! error bound, plus memory-footprint accounting for quantized models.
//!
//! Scheme: per group, `scale = max|w| / 7`, `code = round(w / scale)` with
//! half-away-from-zero rounding, clamped to `[-8, 7]`. No zero-point.

use crate::error::{Error, Result};

/// A group of int4 codes sharing one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantGroup {
    pub codes: Vec<i8>,
    pub scale: f64,
}

/// Quantize a weight vector in groups of `group_size` (the last group may be
/// short).
pub fn quantize_int4(w: &[f64], group_size: usize) -> Result<Vec<QuantGroup>> {
    if group_size == 0 {
        return Err(Error::Config("group_size must be >= 1".into()));
    }
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("weights contain NaN/Inf".into()));
    }
    let mut groups = Vec::with_capacity(w.len().div_ceil(group_size));
    for chunk in w.chunks(group_size) {
        let max_abs = chunk.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        let scale = max_abs / 7.0;
        let codes = chunk
            .iter()
            .map(|&x| {
                if scale == 0.0 {
                    0
                } else {
                    (x / scale).round().clamp(-8.0, 7.0) as i8
                }
            })
            .collect();
        groups.push(QuantGroup { codes, scale });
    }
    Ok(groups)
}

/// Reconstruct `code * scale` per element.
pub fn dequantize(groups: &[QuantGroup]) -> Vec<f64> {
    groups
        .iter()
        .flat_map(|g| g.codes.iter().map(move |&c| c as f64 * g.scale))
        .collect()
}

/// Byte accounting for a quantized parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FootprintReport {
    pub weight_bytes: u64,
    pub scale_bytes: u64,
    pub total_bytes: u64,
}

/// Bytes for `param_total` weights at `bits_per_weight` plus one
/// `scale_bits` scale per `group_size` weights.
pub fn footprint(
    param_total: u64,
    bits_per_weight: u64,
    group_size: u64,
    scale_bits: u64,
) -> Result<FootprintReport> {
    if bits_per_weight == 0 || group_size == 0 || scale_bits == 0 {
        return Err(Error::Config("bits, group_size, scale_bits must be > 0".into()));
    }
    let weight_bytes = param_total * bits_per_weight / 8;
    let num_groups = param_total.div_ceil(group_size);
    let scale_bytes = num_groups * scale_bits / 8;
    Ok(FootprintReport {
        weight_bytes,
        scale_bytes,
        total_bytes: weight_bytes + scale_bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_group() {
        let groups = quantize_int4(&[0.0; 8], 8).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].scale, 0.0);
        assert!(groups[0].codes.iter().all(|&c| c == 0));
        assert!(dequantize(&groups).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn exact_integer_round_trip() {
        let w = [-7.0, -3.0, 0.0, 3.0, 7.0];
        let groups = quantize_int4(&w, 5).unwrap();
        assert_eq!(groups[0].scale, 1.0);
        assert_eq!(groups[0].codes, vec![-7, -3, 0, 3, 7]);
        assert_eq!(dequantize(&groups), w.to_vec());
    }

    #[test]
    fn dequant_scale_times_code() {
        let g = QuantGroup { codes: vec![3], scale: 2.0 };
        assert_eq!(dequantize(&[g]), vec![6.0]);
    }

    #[test]
    fn nan_rejected() {
        assert!(quantize_int4(&[f64::NAN], 4).is_err());
    }

    #[test]
    fn error_bound_on_1000_random_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        for _ in 0..1000 {
            let n = rng.gen_range(1..64);
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let groups = quantize_int4(&w, n).unwrap();
            let dq = dequantize(&groups);
            let scale = groups[0].scale;
            for (a, b) in w.iter().zip(&dq) {
                assert!((a - b).abs() <= scale / 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn idempotent_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let w: Vec<f64> = (0..257).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let q1 = quantize_int4(&w, 32).unwrap();
        let q2 = quantize_int4(&dequantize(&q1), 32).unwrap();
        for (a, b) in q1.iter().zip(&q2) {
            assert_eq!(a.codes, b.codes);
        }
    }

    #[test]
    fn footprint_mini_4bit() {
        let r = footprint(3_800_000_000, 4, 32, 16).unwrap();
        assert_eq!(r.weight_bytes, 1_900_000_000);
        assert_eq!(r.scale_bytes, 237_500_000);
        assert_eq!(r.total_bytes, r.weight_bytes + r.scale_bytes);
    }

    #[test]
    fn footprint_zero_params() {
        let r = footprint(0, 4, 32, 16).unwrap();
        assert_eq!(r.total_bytes, 0);
    }

    #[test]
    fn footprint_single_group_16bit() {
        let r = footprint(100, 16, 1_000_000, 16).unwrap();
        assert_eq!(r.weight_bytes, 200);
        assert_eq!(r.scale_bytes, 2);
    }

    proptest! {
        #[test]
        fn scale_equivariance(
            w in prop::collection::vec(-4.0f64..4.0, 1..40),
            c in 0.1f64..10.0,
        ) {
            let base = quantize_int4(&w, 8).unwrap();
            let scaled_w: Vec<f64> = w.iter().map(|x| x * c).collect();
            let scaled = quantize_int4(&scaled_w, 8).unwrap();
            for (a, b) in base.iter().zip(&scaled) {
                prop_assert_eq!(&a.codes, &b.codes);
                prop_assert!((a.scale * c - b.scale).abs() <= 1e-12 * b.scale.max(1.0));
            }
        }

        #[test]
        fn round_trip_error_within_half_scale(
            w in prop::collection::vec(-10.0f64..10.0, 1..100),
            gs in 1usize..33,
        ) {
            let groups = quantize_int4(&w, gs).unwrap();
            let dq = dequantize(&groups);
            prop_assert_eq!(dq.len(), w.len());
            let mut idx = 0;
            for g in &groups {
                for _ in &g.codes {
                    prop_assert!((w[idx] - dq[idx]).abs() <= g.scale / 2.0 + 1e-12);
                    idx += 1;
                }
            }
        }

        #[test]
        fn footprint_monotone(
            params in 1u64..1_000_000,
            bits in 1u64..17,
            gs in 1u64..128,
            sb in 8u64..33,
        ) {
            let base = footprint(params, bits, gs, sb).unwrap();
            prop_assert!(footprint(params + 1000, bits, gs, sb).unwrap().total_bytes >= base.total_bytes);
            prop_assert!(footprint(params, bits + 1, gs, sb).unwrap().total_bytes >= base.total_bytes);
            prop_assert!(footprint(params, bits, gs + 1, sb).unwrap().total_bytes <= base.total_bytes);
            prop_assert!(footprint(params, bits, gs, sb + 8).unwrap().total_bytes >= base.total_bytes);
        }
    }
}
