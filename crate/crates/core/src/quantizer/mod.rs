//! Stochastic multi-level gradient quantization.
//!
//! A gradient vector `g` with range `[g_min, g_max]` is described by `k`
//! evenly spaced levels `G(r) = g_min + r * delta / (k - 1)`. Each entry is
//! rounded to one of its two neighbouring levels with probabilities chosen so
//! that the reconstruction is unbiased. Only the level indices travel over
//! the channel; `g_min` and `g_max` are side information sent at full
//! resolution.

mod codec;

pub use codec::{decode_bits, encode_bits, wire_bits, PackedIndices};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::UserStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantizerError {
    #[error("quantization budget must be at least 2 levels, got {0}")]
    BudgetTooSmall(u64),
    #[error("level index {index} out of range for budget {k}")]
    IndexOutOfRange { index: u64, k: u64 },
    #[error("dynamic range must be non-negative and finite, got {0}")]
    InvalidRange(f64),
    #[error("gradient vector is empty")]
    EmptyGradient,
    #[error("gradient entry {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("packed stream holds {actual} bytes, expected {expected}")]
    LengthMismatch { expected: usize, actual: usize },
}

pub type Result<T> = std::result::Result<T, QuantizerError>;

fn check_budget(k: u64) -> Result<()> {
    if k < 2 {
        Err(QuantizerError::BudgetTooSmall(k))
    } else {
        Ok(())
    }
}

/// Value of level `r` out of `k` levels spanning `[g_min, g_min + delta]`.
pub fn level_value(g_min: f64, delta: f64, k: u32, r: u32) -> Result<f64> {
    check_budget(k as u64)?;
    if r >= k {
        return Err(QuantizerError::IndexOutOfRange {
            index: r as u64,
            k: k as u64,
        });
    }
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(QuantizerError::InvalidRange(delta));
    }
    Ok(if r + 1 == k {
        g_min + delta
    } else {
        g_min + r as f64 * delta / (k - 1) as f64
    })
}

/// Level `r` of the grid on `[g_min, g_max]`; the endpoints are exact.
#[inline]
fn level(g_min: f64, g_max: f64, k: u32, r: u32) -> f64 {
    if r + 1 == k {
        g_max
    } else {
        (g_min + r as f64 * (g_max - g_min) / (k - 1) as f64).min(g_max)
    }
}

/// Per-vector variance bound `d * delta^2 / (4 (k - 1)^2)`.
pub fn variance_bound(delta: f64, k: u32, d: usize) -> Result<f64> {
    check_budget(k as u64)?;
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(QuantizerError::InvalidRange(delta));
    }
    let km1 = (k - 1) as f64;
    Ok(d as f64 * delta * delta / (4.0 * km1 * km1))
}

/// Information-theoretic payload `d * log2(k)` used for rate accounting.
pub fn analytic_bits(k: u32, d: usize) -> f64 {
    d as f64 * (k as f64).log2()
}

/// Output of the multi-level quantizer for one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedGradient {
    g_min: f64,
    g_max: f64,
    k: u32,
    indices: Vec<u32>,
}

impl QuantizedGradient {
    /// Builds a payload, checking every invariant.
    pub fn new(g_min: f64, g_max: f64, k: u32, indices: Vec<u32>) -> Result<Self> {
        check_budget(k as u64)?;
        if !g_min.is_finite() || !g_max.is_finite() || g_max < g_min {
            return Err(QuantizerError::InvalidRange(g_max - g_min));
        }
        if let Some(&bad) = indices.iter().find(|&&r| r >= k) {
            return Err(QuantizerError::IndexOutOfRange {
                index: bad as u64,
                k: k as u64,
            });
        }
        if g_max == g_min {
            if let Some(&bad) = indices.iter().find(|&&r| r != 0) {
                // a degenerate range only admits index 0
                return Err(QuantizerError::IndexOutOfRange {
                    index: bad as u64,
                    k: 1,
                });
            }
        }
        Ok(Self {
            g_min,
            g_max,
            k,
            indices,
        })
    }

    pub fn g_min(&self) -> f64 {
        self.g_min
    }

    pub fn g_max(&self) -> f64 {
        self.g_max
    }

    pub fn delta(&self) -> f64 {
        self.g_max - self.g_min
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn analytic_bits(&self) -> f64 {
        analytic_bits(self.k, self.dim())
    }

    pub fn wire_bits(&self) -> usize {
        wire_bits(self.k, self.dim())
    }
}

/// Returns `(min, max)` of a non-empty, finite vector.
pub fn range_of(g: &[f64]) -> Result<(f64, f64)> {
    if g.is_empty() {
        return Err(QuantizerError::EmptyGradient);
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (index, &value) in g.iter().enumerate() {
        if !value.is_finite() {
            return Err(QuantizerError::NonFinite { index, value });
        }
        lo = lo.min(value);
        hi = hi.max(value);
    }
    Ok((lo, hi))
}

/// Stochastically rounds every entry of `g` onto `k` levels.
pub fn quantize(g: &[f64], k: u32, stream: &UserStream) -> Result<QuantizedGradient> {
    check_budget(k as u64)?;
    let (g_min, g_max) = range_of(g)?;
    let delta = g_max - g_min;
    if delta == 0.0 {
        return Ok(QuantizedGradient {
            g_min,
            g_max,
            k,
            indices: vec![0; g.len()],
        });
    }
    let top = k - 1;
    let scale = top as f64 / delta;
    let indices = g
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if x >= g_max {
                return top;
            }
            // locate r with G(r) <= x < G(r + 1); the float estimate can be
            // off by one near a level, so settle it against the level values
            let mut r = (((x - g_min) * scale).floor() as i64).clamp(0, top as i64 - 1) as u32;
            while r > 0 && x < level(g_min, g_max, k, r) {
                r -= 1;
            }
            while r + 1 < top && x >= level(g_min, g_max, k, r + 1) {
                r += 1;
            }
            let lo = level(g_min, g_max, k, r);
            let hi = level(g_min, g_max, k, r + 1);
            if x <= lo {
                return r;
            }
            let p_up = (x - lo) / (hi - lo);
            if stream.uniform(i) < p_up {
                r + 1
            } else {
                r
            }
        })
        .collect();
    Ok(QuantizedGradient {
        g_min,
        g_max,
        k,
        indices,
    })
}

/// Reconstructs the level values carried by `q`.
pub fn dequantize(q: &QuantizedGradient) -> Vec<f64> {
    q.indices
        .iter()
        .map(|&r| level(q.g_min, q.g_max, q.k, r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::QuantizerRng;
    use proptest::prelude::*;

    fn stream(seed: u64) -> UserStream {
        QuantizerRng::new(seed).stream(0, 0)
    }

    #[test]
    fn level_value_endpoints_and_midpoint() {
        assert_eq!(level_value(0.0, 50.0, 10, 0).unwrap(), 0.0);
        assert_eq!(level_value(0.0, 50.0, 10, 9).unwrap(), 50.0);
        assert_eq!(level_value(-1.0, 2.0, 3, 1).unwrap(), 0.0);
    }

    #[test]
    fn level_value_rejects_bad_arguments() {
        assert_eq!(
            level_value(0.0, 1.0, 1, 0),
            Err(QuantizerError::BudgetTooSmall(1))
        );
        assert!(matches!(
            level_value(0.0, 1.0, 4, 4),
            Err(QuantizerError::IndexOutOfRange { index: 4, k: 4 })
        ));
        assert!(matches!(
            level_value(0.0, -1.0, 4, 0),
            Err(QuantizerError::InvalidRange(_))
        ));
    }

    #[test]
    fn endpoints_quantize_deterministically() {
        for seed in 0..50 {
            let q = quantize(&[0.0, 50.0], 2, &stream(seed)).unwrap();
            assert_eq!(q.indices(), &[0, 1]);
        }
    }

    #[test]
    fn exact_levels_are_fixed_points() {
        let g: Vec<f64> = (0..10).map(|r| -3.0 + r as f64 * 0.5).collect();
        for seed in 0..20 {
            let q = quantize(&g, 10, &stream(seed)).unwrap();
            assert_eq!(q.indices(), (0..10).collect::<Vec<u32>>().as_slice());
            assert_eq!(dequantize(&q), g);
        }
    }

    #[test]
    fn constant_vector_maps_to_index_zero() {
        let g = vec![2.5; 7];
        let q = quantize(&g, 5, &stream(1)).unwrap();
        assert_eq!(q.g_min(), 2.5);
        assert_eq!(q.g_max(), 2.5);
        assert!(q.indices().iter().all(|&r| r == 0));
        assert_eq!(dequantize(&q), g);
    }

    #[test]
    fn two_level_readback() {
        let q = QuantizedGradient::new(0.0, 50.0, 2, vec![1, 0]).unwrap();
        assert_eq!(dequantize(&q), vec![50.0, 0.0]);
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert_eq!(
            quantize(&[], 2, &stream(0)),
            Err(QuantizerError::EmptyGradient)
        );
        assert!(matches!(
            quantize(&[1.0, f64::NAN], 2, &stream(0)),
            Err(QuantizerError::NonFinite { index: 1, .. })
        ));
        assert!(matches!(
            quantize(&[1.0, f64::INFINITY], 2, &stream(0)),
            Err(QuantizerError::NonFinite { index: 1, .. })
        ));
        assert_eq!(
            quantize(&[1.0], 1, &stream(0)),
            Err(QuantizerError::BudgetTooSmall(1))
        );
    }

    #[test]
    fn payload_constructor_checks_invariants() {
        assert!(QuantizedGradient::new(0.0, 1.0, 3, vec![0, 3]).is_err());
        assert!(QuantizedGradient::new(1.0, 0.0, 3, vec![0]).is_err());
        assert!(QuantizedGradient::new(1.0, 1.0, 3, vec![0, 1]).is_err());
        assert!(QuantizedGradient::new(1.0, 1.0, 3, vec![0, 0]).is_ok());
    }

    #[test]
    fn variance_bound_values() {
        assert_eq!(variance_bound(0.0, 2, 100).unwrap(), 0.0);
        let v = variance_bound(50.0, 10, 1).unwrap();
        assert!((v - 2500.0 / 324.0).abs() < 1e-12);
        assert!((v - 7.7160).abs() < 1e-4);
        assert_eq!(
            variance_bound(1.0, 1, 1),
            Err(QuantizerError::BudgetTooSmall(1))
        );
    }

    #[test]
    fn variance_bound_strictly_decreasing_in_k() {
        let mut prev = f64::INFINITY;
        for k in 2..200 {
            let v = variance_bound(3.0, k, 17).unwrap();
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn middle_entry_goes_up_half_the_time() {
        let n = 100_000;
        let rng = QuantizerRng::new(99);
        let ups = (0..n)
            .filter(|&t| {
                let q = quantize(&[0.0, 25.0, 50.0], 2, &rng.stream(t as u64, 0)).unwrap();
                q.indices()[1] == 1
            })
            .count();
        let freq = ups as f64 / n as f64;
        assert!(
            (freq - 0.5).abs() <= 3.0 * (0.25 / n as f64).sqrt(),
            "freq {freq}"
        );
    }

    proptest! {
        #[test]
        fn support_stays_within_range(
            g in proptest::collection::vec(-1e3f64..1e3, 1..64),
            k in 2u32..300,
            seed in any::<u64>(),
        ) {
            let q = quantize(&g, k, &stream(seed)).unwrap();
            let (lo, hi) = range_of(&g).unwrap();
            for (x, y) in g.iter().zip(dequantize(&q)) {
                prop_assert!(y >= lo && y <= hi);
                // rounding never skips past a neighbouring level
                let step = (hi - lo) / (k - 1) as f64;
                prop_assert!((x - y).abs() <= step * (1.0 + 1e-9) + 1e-12);
            }
            let argmax = g.iter().enumerate().fold(0, |b, (i, &v)| if v > g[b] { i } else { b });
            if hi > lo {
                prop_assert_eq!(q.indices()[argmax], k - 1);
            }
        }
    }
}
