//! Competing digital gradient codecs with their rate accounting.
//!
//! - signSGD: one bit per entry plus a magnitude scalar sent as side
//!   information (the mean absolute gradient). Biased by construction.
//! - TernGrad: stochastic ternarization to `{-1, 0, +1}` scaled by
//!   `max |g|`; unbiased, `d log2 3` bits.
//! - Top-q: keep the `q` largest and `q` smallest entries, collapse the
//!   survivors to the mean of the dominant sign group and send the support
//!   plus one scalar, `log2 C(d, q) + c` bits.

use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::channel::{CapacityRegion, ChannelError};
use crate::quantizer::{range_of, QuantizerError};
use crate::rng::UserStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error(transparent)]
    Input(#[from] QuantizerError),
    #[error("q = {q} is outside 1..={max} for dimension {dim}")]
    QOutOfRange { q: usize, max: usize, dim: usize },
    #[error("scalar width must be at least 1 bit")]
    ZeroScalarBits,
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

pub type Result<T> = std::result::Result<T, BaselineError>;

/// Sign bits plus the reconstruction magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct SignPayload {
    /// `true` encodes `+1`; zero entries map to `+1`.
    pub positive: Vec<bool>,
    pub scale: f64,
}

impl SignPayload {
    pub fn rate_bits(&self) -> f64 {
        self.positive.len() as f64
    }

    pub fn decode(&self) -> Vec<f64> {
        self.positive
            .iter()
            .map(|&p| if p { self.scale } else { -self.scale })
            .collect()
    }
}

pub fn sign_quantize(g: &[f64]) -> Result<SignPayload> {
    range_of(g)?;
    let scale = g.iter().map(|x| x.abs()).sum::<f64>() / g.len() as f64;
    Ok(SignPayload {
        positive: g.iter().map(|&x| x >= 0.0).collect(),
        scale,
    })
}

/// Ternary symbols plus the scale `max |g|`.
#[derive(Debug, Clone, PartialEq)]
pub struct TernaryPayload {
    pub symbols: Vec<i8>,
    pub scale: f64,
}

impl TernaryPayload {
    pub fn rate_bits(&self) -> f64 {
        self.symbols.len() as f64 * 3f64.log2()
    }

    pub fn decode(&self) -> Vec<f64> {
        self.symbols
            .iter()
            .map(|&s| s as f64 * self.scale)
            .collect()
    }
}

/// Entry `i` becomes `sign(g_i)` with probability `|g_i| / max |g|`, else 0.
pub fn terngrad_quantize(g: &[f64], stream: &UserStream) -> Result<TernaryPayload> {
    range_of(g)?;
    let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return Ok(TernaryPayload {
            symbols: vec![0; g.len()],
            scale,
        });
    }
    let symbols = g
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let p = x.abs() / scale;
            if p >= 1.0 || stream.uniform(i) < p {
                if x > 0.0 {
                    1
                } else {
                    -1
                }
            } else {
                0
            }
        })
        .collect();
    Ok(TernaryPayload { symbols, scale })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TopQConfig {
    pub q: usize,
    pub scalar_bits: u32,
}

impl TopQConfig {
    pub fn new(q: usize, scalar_bits: u32, dim: usize) -> Result<Self> {
        if q == 0 || 2 * q > dim {
            return Err(BaselineError::QOutOfRange {
                q,
                max: dim / 2,
                dim,
            });
        }
        if scalar_bits == 0 {
            return Err(BaselineError::ZeroScalarBits);
        }
        Ok(Self { q, scalar_bits })
    }
}

/// Sparse support with one shared value.
#[derive(Debug, Clone, PartialEq)]
pub struct TopQPayload {
    pub dim: usize,
    /// Sorted positions holding `value`.
    pub support: Vec<usize>,
    pub value: f64,
    pub rate_bits: f64,
}

impl TopQPayload {
    pub fn decode(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &i in &self.support {
            out[i] = self.value;
        }
        out
    }
}

/// `log2 C(n, k)` through log-gamma.
pub fn log2_binomial(n: usize, k: usize) -> f64 {
    if k == 0 || k >= n {
        return 0.0;
    }
    let (n, k) = (n as f64, k as f64);
    (ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)) / std::f64::consts::LN_2
}

pub fn topq_rate_bits(dim: usize, q: usize, scalar_bits: u32) -> f64 {
    log2_binomial(dim, q) + scalar_bits as f64
}

pub fn topq_quantize(g: &[f64], cfg: TopQConfig) -> Result<TopQPayload> {
    range_of(g)?;
    let dim = g.len();
    if cfg.q == 0 || 2 * cfg.q > dim {
        return Err(BaselineError::QOutOfRange {
            q: cfg.q,
            max: dim / 2,
            dim,
        });
    }
    // descending by value, ties to the lower index
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| g[b].total_cmp(&g[a]).then(a.cmp(&b)));
    let highest = &order[..cfg.q];
    // ascending by value, ties to the lower index, among the rest
    let mut rest: Vec<usize> = order[cfg.q..].to_vec();
    rest.sort_by(|&a, &b| g[a].total_cmp(&g[b]).then(a.cmp(&b)));
    let lowest = &rest[..cfg.q];

    let survivors = highest.iter().chain(lowest);
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for &i in survivors {
        if g[i] > 0.0 {
            pos.push(i);
        } else if g[i] < 0.0 {
            neg.push(i);
        }
    }
    let mean = |idx: &[usize]| {
        if idx.is_empty() {
            0.0
        } else {
            idx.iter().map(|&i| g[i]).sum::<f64>() / idx.len() as f64
        }
    };
    let (alpha_pos, alpha_neg) = (mean(&pos), mean(&neg));
    let (mut support, value) = if alpha_pos > alpha_neg.abs() {
        (pos, alpha_pos)
    } else {
        (neg, alpha_neg)
    };
    support.sort_unstable();
    Ok(TopQPayload {
        dim,
        support,
        value,
        rate_bits: topq_rate_bits(dim, cfg.q, cfg.scalar_bits),
    })
}

/// Largest common `q <= d / 2` whose rate is feasible for every user at
/// once; 0 when even `q = 1` does not fit.
pub fn max_feasible_q(region: &CapacityRegion, dim: usize, scalar_bits: u32) -> Result<usize> {
    let users = region.users();
    let fits = |q: usize| region.is_feasible(&vec![topq_rate_bits(dim, q, scalar_bits); users]);
    let (mut lo, mut hi) = (1usize, dim / 2);
    if hi == 0 || !fits(1)? {
        return Ok(0);
    }
    // rate is increasing in q on [1, d/2]
    if fits(hi)? {
        return Ok(hi);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::MacSpec;
    use crate::rng::QuantizerRng;

    #[test]
    fn signs() {
        let p = sign_quantize(&[3.0, -2.0]).unwrap();
        assert_eq!(p.positive, vec![true, false]);
        assert_eq!(p.scale, 2.5);
        assert_eq!(p.decode(), vec![2.5, -2.5]);
        assert_eq!(sign_quantize(&[0.0]).unwrap().positive, vec![true]);
        assert_eq!(sign_quantize(&vec![1.0; 7850]).unwrap().rate_bits(), 7850.0);
        let scaled = sign_quantize(&[30.0, -20.0]).unwrap();
        assert_eq!(scaled.positive, p.positive);
    }

    #[test]
    fn ternary_extremes() {
        let s = QuantizerRng::new(3).stream(0, 0);
        let p = terngrad_quantize(&[0.0, -4.0, 0.0], &s).unwrap();
        assert_eq!(p.symbols, vec![0, -1, 0]);
        assert_eq!(p.decode(), vec![0.0, -4.0, 0.0]);
        let z = terngrad_quantize(&[0.0; 5], &s).unwrap();
        assert_eq!(z.decode(), vec![0.0; 5]);
        assert!((p.rate_bits() - 3.0 * 3f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn topq_hand_trace() {
        let cfg = TopQConfig::new(1, 32, 4).unwrap();
        let p = topq_quantize(&[5.0, -1.0, 0.5, -0.2], cfg).unwrap();
        assert_eq!(p.decode(), vec![5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn topq_negative_side_wins() {
        let cfg = TopQConfig::new(1, 32, 4).unwrap();
        let p = topq_quantize(&[1.0, -6.0, 0.5, -0.2], cfg).unwrap();
        assert_eq!(p.decode(), vec![0.0, -6.0, 0.0, 0.0]);
    }

    #[test]
    fn topq_single_group_is_grand_mean() {
        let g = [1.0, 2.0, 3.0, 6.0];
        let p = topq_quantize(&g, TopQConfig::new(2, 8, 4).unwrap()).unwrap();
        assert_eq!(p.decode(), vec![3.0; 4]);
    }

    #[test]
    fn topq_rate_example() {
        let r = topq_rate_bits(7850, 1, 32);
        assert!((r - (7850f64.log2() + 32.0)).abs() < 1e-9);
        assert!((r - 44.9).abs() < 0.05);
        assert!(TopQConfig::new(0, 32, 4).is_err());
        assert!(TopQConfig::new(3, 32, 4).is_err());
    }

    fn exact_log2_binomial(n: usize, k: usize) -> f64 {
        use num_bigint::BigUint;
        let mut c = BigUint::from(1u32);
        for i in 0..k {
            c = c * BigUint::from(n - i) / BigUint::from(i + 1);
        }
        let bits = c.bits();
        if bits <= 64 {
            return (c.iter_u64_digits().next().unwrap_or(0) as f64).log2();
        }
        let shift = bits - 64;
        let top = (c >> shift).iter_u64_digits().next().unwrap();
        (top as f64).log2() + shift as f64
    }

    #[test]
    fn log_gamma_binomial_matches_exact() {
        for &(n, k) in &[
            (10, 3),
            (100, 50),
            (790, 1),
            (790, 37),
            (7850, 1),
            (7850, 2),
            (7850, 500),
            (7850, 3925),
        ] {
            let exact = exact_log2_binomial(n, k);
            let approx = log2_binomial(n, k);
            assert!(
                (exact - approx).abs() <= 1e-9 * exact.max(1.0),
                "C({n},{k}): {exact} vs {approx}"
            );
        }
    }

    #[test]
    fn q_limits() {
        let huge = MacSpec::new(vec![1e6, 1e6], 1.0, 1000, 100).unwrap();
        assert_eq!(max_feasible_q(&huge.region(), 100, 32).unwrap(), 50);
        let dead = MacSpec::new(vec![10.0, 0.0], 1.0, 200, 100).unwrap();
        assert_eq!(max_feasible_q(&dead.region(), 100, 32).unwrap(), 0);
    }

    #[test]
    fn q_is_the_feasibility_frontier() {
        let spec = MacSpec::new(vec![2.0, 0.05], 1.0, 2000, 1000).unwrap();
        let q = max_feasible_q(&spec.region(), 1000, 32).unwrap();
        assert!(q >= 1 && q < 500, "q = {q}");
        let rate = |q| vec![topq_rate_bits(1000, q, 32); 2];
        assert!(spec.is_feasible(&rate(q)).unwrap());
        assert!(!spec.is_feasible(&rate(q + 1)).unwrap());
    }
}
