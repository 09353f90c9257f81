//! Gaussian multiple access channel: capacity region, rate feasibility and
//! an error-free transport gated by the region.
//!
//! Capacities are in bits per channel use (log base 2). A rate tuple is
//! measured in bits per iteration, so each subset constraint reads
//! `sum_{m in S} r_m <= s * C_S`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound on users; feasibility enumerates all `2^M - 1` subsets.
pub const MAX_USERS: usize = 20;

/// Relative slack when comparing a load to a cap. Points on the boundary are
/// feasible and this absorbs rounding in `d * log2(k)` versus `s * C`.
pub const FEASIBILITY_RTOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("a channel needs at least one user")]
    NoUsers,
    #[error("{0} users exceeds the supported maximum of {MAX_USERS}")]
    TooManyUsers(usize),
    #[error("power of user {user} must be finite and non-negative, got {value}")]
    InvalidPower { user: usize, value: f64 },
    #[error("noise variance must be positive and finite, got {0}")]
    InvalidNoise(f64),
    #[error("channel uses per iteration must be at least 1")]
    NoChannelUses,
    #[error("model dimension must be at least 1")]
    ZeroDimension,
    #[error("user subset is empty")]
    EmptySubset,
    #[error("subset {subset} refers to users outside 1..={users}")]
    SubsetOutOfRange { subset: UserSet, users: usize },
    #[error("expected {expected} per-user rates, got {actual}")]
    RateCount { expected: usize, actual: usize },
    #[error("rate of user {user} must be finite and non-negative, got {value}")]
    InvalidRate { user: usize, value: f64 },
    #[error("side information must be finite and non-negative, got {0} bits")]
    InvalidOverhead(f64),
    #[error("cap for subset {subset} must be finite and non-negative, got {value}")]
    InvalidCap { subset: UserSet, value: f64 },
    #[error("user {0} is not covered by any capacity constraint")]
    UnconstrainedUser(usize),
    #[error("rates infeasible: subset {subset} carries {load_bits:.3} bits but its cap is {cap_bits:.3}")]
    Infeasible {
        subset: UserSet,
        load_bits: f64,
        cap_bits: f64,
    },
}

pub type Result<T> = std::result::Result<T, ChannelError>;

/// A non-empty set of users stored as a bitmask (bit `m` is user `m`,
/// zero-based). Displayed one-based, e.g. `{1,2}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserSet(u32);

impl UserSet {
    pub fn from_mask(mask: u32) -> Self {
        Self(mask)
    }

    pub fn singleton(user: usize) -> Self {
        Self(1 << user)
    }

    /// All users `0..users`.
    pub fn full(users: usize) -> Self {
        Self(if users >= 32 {
            u32::MAX
        } else {
            (1u32 << users) - 1
        })
    }

    pub fn from_users(users: &[usize]) -> Self {
        Self(users.iter().fold(0, |acc, &u| acc | (1 << u)))
    }

    pub fn mask(self) -> u32 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, user: usize) -> bool {
        user < 32 && self.0 & (1 << user) != 0
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&u| self.0 & (1 << u) != 0)
    }

    /// Every non-empty subset of `0..users`, in increasing mask order.
    pub fn all_nonempty(users: usize) -> impl Iterator<Item = UserSet> {
        (1..=UserSet::full(users).0).map(UserSet)
    }

    fn check(self, users: usize) -> Result<()> {
        if self.is_empty() {
            return Err(ChannelError::EmptySubset);
        }
        if self.0 & !UserSet::full(users).0 != 0 {
            return Err(ChannelError::SubsetOutOfRange {
                subset: self,
                users,
            });
        }
        Ok(())
    }
}

impl fmt::Display for UserSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, m) in self.members().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", m + 1)?;
        }
        f.write_str("}")
    }
}

/// Gaussian MAC parameters for one training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMacSpec", into = "RawMacSpec")]
pub struct MacSpec {
    powers: Vec<f64>,
    noise_var: f64,
    channel_uses: u64,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMacSpec {
    powers: Vec<f64>,
    noise_var: f64,
    channel_uses: u64,
    dim: usize,
}

impl TryFrom<RawMacSpec> for MacSpec {
    type Error = ChannelError;
    fn try_from(raw: RawMacSpec) -> Result<Self> {
        MacSpec::new(raw.powers, raw.noise_var, raw.channel_uses, raw.dim)
    }
}

impl From<MacSpec> for RawMacSpec {
    fn from(spec: MacSpec) -> Self {
        RawMacSpec {
            powers: spec.powers,
            noise_var: spec.noise_var,
            channel_uses: spec.channel_uses,
            dim: spec.dim,
        }
    }
}

impl MacSpec {
    pub fn new(powers: Vec<f64>, noise_var: f64, channel_uses: u64, dim: usize) -> Result<Self> {
        if powers.is_empty() {
            return Err(ChannelError::NoUsers);
        }
        if powers.len() > MAX_USERS {
            return Err(ChannelError::TooManyUsers(powers.len()));
        }
        if let Some((user, &value)) = powers
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(ChannelError::InvalidPower {
                user: user + 1,
                value,
            });
        }
        if !(noise_var > 0.0) || !noise_var.is_finite() {
            return Err(ChannelError::InvalidNoise(noise_var));
        }
        if channel_uses == 0 {
            return Err(ChannelError::NoChannelUses);
        }
        if dim == 0 {
            return Err(ChannelError::ZeroDimension);
        }
        Ok(Self {
            powers,
            noise_var,
            channel_uses,
            dim,
        })
    }

    pub fn users(&self) -> usize {
        self.powers.len()
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn channel_uses(&self) -> u64 {
        self.channel_uses
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `0.5 * log2(1 + sum_{m in S} P_m / sigma^2)` in bits per channel use.
    pub fn sum_capacity(&self, subset: UserSet) -> Result<f64> {
        subset.check(self.users())?;
        let snr: f64 = subset.members().map(|m| self.powers[m]).sum::<f64>() / self.noise_var;
        Ok(0.5 * snr.ln_1p() / std::f64::consts::LN_2)
    }

    /// Bits per iteration available to `subset`, `s * C_S`.
    pub fn subset_bits(&self, subset: UserSet) -> Result<f64> {
        Ok(self.channel_uses as f64 * self.sum_capacity(subset)?)
    }

    /// Cap on the product of budgets in `subset`: `2^(s C_S / d)`.
    pub fn budget_cap(&self, subset: UserSet) -> Result<f64> {
        Ok((self.subset_bits(subset)? / self.dim as f64).exp2())
    }

    /// Full Gaussian region, one constraint per non-empty subset.
    pub fn region(&self) -> CapacityRegion {
        let users = self.users();
        let constraints = UserSet::all_nonempty(users)
            .map(|s| SubsetCap {
                users: s,
                bits: self.subset_bits(s).expect("valid subset"),
            })
            .collect();
        CapacityRegion { users, constraints }
    }

    pub fn is_feasible(&self, rates: &[f64]) -> Result<bool> {
        self.region().is_feasible(rates)
    }

    pub fn transmit(&self, payload_bits: &[f64]) -> Result<()> {
        self.region().transmit(payload_bits)
    }
}

/// One constraint of a capacity region: the users in `users` may carry at
/// most `bits` bits per iteration between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetCap {
    pub users: UserSet,
    pub bits: f64,
}

/// A polyhedral capacity region given as a list of subset sum-rate caps.
///
/// The Gaussian MAC yields one cap per subset, but any list can be
/// supplied, e.g. measured or non-Gaussian regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRegion {
    users: usize,
    constraints: Vec<SubsetCap>,
}

impl CapacityRegion {
    pub fn from_caps(users: usize, constraints: Vec<SubsetCap>) -> Result<Self> {
        if users == 0 {
            return Err(ChannelError::NoUsers);
        }
        if users > MAX_USERS {
            return Err(ChannelError::TooManyUsers(users));
        }
        let mut covered = UserSet(0);
        for c in &constraints {
            c.users.check(users)?;
            if !c.bits.is_finite() || c.bits < 0.0 {
                return Err(ChannelError::InvalidCap {
                    subset: c.users,
                    value: c.bits,
                });
            }
            covered = UserSet(covered.0 | c.users.0);
        }
        if let Some(user) = (0..users).find(|&u| !covered.contains(u)) {
            return Err(ChannelError::UnconstrainedUser(user + 1));
        }
        Ok(Self { users, constraints })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn constraints(&self) -> &[SubsetCap] {
        &self.constraints
    }

    /// Tightest cap listed for exactly this subset, if any.
    pub fn cap_bits(&self, subset: UserSet) -> Option<f64> {
        self.constraints
            .iter()
            .filter(|c| c.users == subset)
            .map(|c| c.bits)
            .reduce(f64::min)
    }

    /// Region left for payloads after every user spends `bits_per_user` on
    /// side information. Caps that would go negative become zero.
    pub fn reserve(&self, bits_per_user: f64) -> Result<Self> {
        if !bits_per_user.is_finite() || bits_per_user < 0.0 {
            return Err(ChannelError::InvalidOverhead(bits_per_user));
        }
        let constraints = self
            .constraints
            .iter()
            .map(|c| SubsetCap {
                users: c.users,
                bits: (c.bits - c.users.len() as f64 * bits_per_user).max(0.0),
            })
            .collect();
        Self::from_caps(self.users, constraints)
    }

    fn check_rates(&self, rates: &[f64]) -> Result<()> {
        if rates.len() != self.users {
            return Err(ChannelError::RateCount {
                expected: self.users,
                actual: rates.len(),
            });
        }
        if let Some((user, &value)) = rates
            .iter()
            .enumerate()
            .find(|(_, r)| !r.is_finite() || **r < 0.0)
        {
            return Err(ChannelError::InvalidRate {
                user: user + 1,
                value,
            });
        }
        Ok(())
    }

    /// Most violated constraint, ranked by load/cap ratio (a zero cap with
    /// positive load ranks first); ties go to the smaller subset.
    pub fn worst_violation(&self, rates: &[f64]) -> Result<Option<(SubsetCap, f64)>> {
        self.check_rates(rates)?;
        let mut worst: Option<(SubsetCap, f64, f64)> = None;
        for c in &self.constraints {
            let load: f64 = c.users.members().map(|m| rates[m]).sum();
            if load <= c.bits + FEASIBILITY_RTOL * c.bits.max(1.0) {
                continue;
            }
            let ratio = if c.bits > 0.0 {
                load / c.bits
            } else {
                f64::INFINITY
            };
            let better = match worst {
                None => true,
                Some((w, _, wr)) => ratio > wr || (ratio == wr && c.users.len() < w.users.len()),
            };
            if better {
                worst = Some((*c, load, ratio));
            }
        }
        Ok(worst.map(|(c, load, _)| (c, load)))
    }

    /// True iff every subset constraint holds (boundary included).
    pub fn is_feasible(&self, rates: &[f64]) -> Result<bool> {
        Ok(self.worst_violation(rates)?.is_none())
    }

    /// Lossless delivery of the given per-user payloads, or the most
    /// violated constraint.
    pub fn transmit(&self, payload_bits: &[f64]) -> Result<()> {
        match self.worst_violation(payload_bits)? {
            None => Ok(()),
            Some((c, load)) => Err(ChannelError::Infeasible {
                subset: c.users,
                load_bits: load,
                cap_bits: c.bits,
            }),
        }
    }

    /// True when every non-empty subset has its own cap.
    pub fn is_complete(&self) -> bool {
        UserSet::all_nonempty(self.users).all(|s| self.cap_bits(s).is_some())
    }
}
