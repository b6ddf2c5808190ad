//! Slot-level DoS attack patterns with frequency and duration budgets.
//!
//! Slot `q` covers one output period. `frequency_count(q)` counts off-to-on
//! switches in slots `0..q` (an attack at slot 0 is a switch) and
//! `duration_count(q)` counts attacked slots in `0..q`.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Budgets `Phi_f(q) <= kappa_f + q / nu_f` and `Phi_d(q) <= kappa_d + q / nu_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoSParams {
    pub kappa_f: f64,
    pub nu_f: f64,
    pub kappa_d: f64,
    pub nu_d: f64,
}

impl DoSParams {
    pub fn new(kappa_f: f64, nu_f: f64, kappa_d: f64, nu_d: f64) -> Result<Self> {
        let p = Self {
            kappa_f,
            nu_f,
            kappa_d,
            nu_d,
        };
        p.validate()?;
        Ok(p)
    }

    /// No attacks admitted beyond the chatter terms.
    pub fn attack_free() -> Self {
        Self {
            kappa_f: 0.0,
            nu_f: f64::INFINITY,
            kappa_d: 0.0,
            nu_d: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_f >= 0.0 && self.kappa_d >= 0.0)
            || self.kappa_f.is_nan()
            || self.kappa_d.is_nan()
        {
            return Err(Error::Domain("chatter bounds must be nonnegative".into()));
        }
        if self.nu_f.is_nan() || self.nu_f < 2.0 {
            return Err(Error::Domain(format!(
                "nu_f must be >= 2, got {}",
                self.nu_f
            )));
        }
        if self.nu_d.is_nan() || self.nu_d < 1.0 {
            return Err(Error::Domain(format!(
                "nu_d must be >= 1, got {}",
                self.nu_d
            )));
        }
        Ok(())
    }

    fn admits(&self, q: usize, switches: usize, attacked: usize) -> bool {
        let q = q as f64;
        switches as f64 <= self.kappa_f + q / self.nu_f
            && attacked as f64 <= self.kappa_d + q / self.nu_d
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoSPattern {
    slots: Vec<bool>,
}

/// Result of [`DoSPattern::validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Validation {
    pub valid: bool,
    /// First prefix length `q` at which a budget fails.
    pub first_violation: Option<usize>,
}

impl DoSPattern {
    pub fn new(slots: Vec<bool>) -> Self {
        Self { slots }
    }

    pub fn clear(horizon: usize) -> Self {
        Self {
            slots: vec![false; horizon],
        }
    }

    /// Attacks exactly at the listed slots.
    pub fn with_attacks(horizon: usize, attacked: &[usize]) -> Self {
        let mut slots = vec![false; horizon];
        for &q in attacked {
            if q < horizon {
                slots[q] = true;
            }
        }
        Self { slots }
    }

    pub fn horizon(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[bool] {
        &self.slots
    }

    /// Whether slot `q` is attacked; slots past the horizon are clear.
    pub fn is_attacked(&self, q: usize) -> bool {
        self.slots.get(q).copied().unwrap_or(false)
    }

    pub fn frequency_count(&self, q: usize) -> usize {
        let q = q.min(self.slots.len());
        (0..q)
            .filter(|&i| self.slots[i] && (i == 0 || !self.slots[i - 1]))
            .count()
    }

    pub fn duration_count(&self, q: usize) -> usize {
        let q = q.min(self.slots.len());
        self.slots[..q].iter().filter(|&&a| a).count()
    }

    /// Checks both budgets on every prefix `q in 1..=horizon`.
    pub fn validate(&self, params: &DoSParams) -> Validation {
        let (mut switches, mut attacked) = (0, 0);
        for (i, &a) in self.slots.iter().enumerate() {
            if a {
                attacked += 1;
                if i == 0 || !self.slots[i - 1] {
                    switches += 1;
                }
            }
            if !params.admits(i + 1, switches, attacked) {
                return Validation {
                    valid: false,
                    first_violation: Some(i + 1),
                };
            }
        }
        Validation {
            valid: true,
            first_violation: None,
        }
    }

    /// Greedy random pattern: each slot proposes an attack with probability
    /// `intensity` and keeps it only if both budgets still hold.
    pub fn generate(params: &DoSParams, horizon: usize, seed: u64, intensity: f64) -> Result<Self> {
        params.validate()?;
        if horizon == 0 {
            return Err(Error::Domain("horizon must be at least one slot".into()));
        }
        if !(0.0..=1.0).contains(&intensity) {
            return Err(Error::Domain(format!(
                "intensity must lie in [0, 1], got {intensity}"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let mut slots: Vec<bool> = Vec::with_capacity(horizon);
        let (mut switches, mut attacked) = (0, 0);
        for q in 0..horizon {
            let propose = rng.next_f64() < intensity;
            let mut hit = false;
            if propose {
                let s = switches + usize::from(q == 0 || !slots[q - 1]);
                let d = attacked + 1;
                if params.admits(q + 1, s, d) {
                    switches = s;
                    attacked = d;
                    hit = true;
                }
            }
            slots.push(hit);
        }
        Ok(Self { slots })
    }

    /// `q,attacked` lines after a `#` header carrying the provenance text.
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("q,attacked\n");
        for (q, a) in self.slots.iter().enumerate() {
            let _ = writeln!(out, "{q},{}", u8::from(*a));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut slots = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line == "q,attacked" {
                continue;
            }
            let bad = || Error::Domain(format!("pattern line {}: {line:?}", lineno + 1));
            let (q, a) = line.split_once(',').ok_or_else(bad)?;
            let q = usize::from_str(q.trim()).map_err(|_| bad())?;
            if q != slots.len() {
                return Err(bad());
            }
            slots.push(match a.trim() {
                "1" | "true" => true,
                "0" | "false" => false,
                _ => return Err(bad()),
            });
        }
        Ok(Self { slots })
    }
}

/// The splitmix64 generator.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}
