//! Uniform hypercube quantizers and the event-driven range laws.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gains::GainSet;
use crate::matrix::Matrix;

/// Relative slack on the saturation test, absorbing rounding ties at the edge.
pub const SATURATION_SLACK: f64 = 1e-12;

/// Largest offset accepted by a zero-range encode.
pub const ZERO_RANGE_TOL: f64 = 1e-9;

/// Splits `[center - range, center + range]^dim` into `levels^dim` boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformCodec {
    levels: u32,
    dim: usize,
}

/// Per-component box numbers, each in `0..levels`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantIndex {
    pub cells: Vec<u32>,
}

/// `|v - center|` exceeded the range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saturation {
    pub excess: f64,
    pub range: f64,
}

impl UniformCodec {
    pub fn new(levels: u32, dim: usize) -> Result<Self> {
        if levels == 0 || dim == 0 {
            return Err(Error::Domain(format!(
                "codec needs levels >= 1 and dim >= 1, got {levels}, {dim}"
            )));
        }
        Ok(Self { levels, dim })
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Box containing `v`. Points on a shared face go to the lower box; the
    /// upper boundary goes to the last box.
    pub fn encode(&self, v: &[f64], center: &[f64], range: f64) -> Result<QuantIndex, Saturation> {
        self.check_shapes(v, center);
        let offset = v
            .iter()
            .zip(center)
            .fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
        let limit = if range == 0.0 {
            ZERO_RANGE_TOL
        } else {
            range * (1.0 + SATURATION_SLACK)
        };
        if offset.is_nan() || offset > limit {
            return Err(Saturation {
                excess: offset,
                range,
            });
        }
        Ok(self.encode_clipped(v, center, range))
    }

    /// Like [`encode`](Self::encode) but maps out-of-range components to the
    /// nearest edge box.
    pub fn encode_clipped(&self, v: &[f64], center: &[f64], range: f64) -> QuantIndex {
        self.check_shapes(v, center);
        let n = self.levels as f64;
        let top = self.levels - 1;
        let cells = v
            .iter()
            .zip(center)
            .map(|(a, c)| {
                if range == 0.0 {
                    return self.levels / 2;
                }
                let raw = ((a - c + range) * n / (2.0 * range)).floor();
                if raw <= 0.0 {
                    0
                } else if raw >= top as f64 {
                    top
                } else {
                    raw as u32
                }
            })
            .collect();
        QuantIndex { cells }
    }

    /// Centre of the box, `center - range + (2 cell + 1) range / N`.
    pub fn decode(&self, idx: &QuantIndex, center: &[f64], range: f64) -> Vec<f64> {
        assert_eq!(idx.cells.len(), self.dim, "index dimension");
        assert_eq!(center.len(), self.dim, "center dimension");
        let n = self.levels as f64;
        idx.cells
            .iter()
            .zip(center)
            .map(|(&cell, c)| c + (2.0 * cell as f64 + 1.0 - n) * range / n)
            .collect()
    }

    /// Signed offsets `2 cell + 1 - N`; the decoded value is
    /// `center + offset * range / N`.
    pub fn offsets(&self, idx: &QuantIndex) -> Vec<f64> {
        idx.cells
            .iter()
            .map(|&c| 2.0 * c as f64 + 1.0 - self.levels as f64)
            .collect()
    }

    /// Mixed-radix integer `sum_i cell_i N^(dim-1-i)`.
    pub fn wire_index(&self, idx: &QuantIndex) -> u64 {
        idx.cells.iter().fold(0u64, |acc, &c| {
            acc.wrapping_mul(self.levels as u64).wrapping_add(c as u64)
        })
    }

    pub fn from_wire(&self, mut wire: u64) -> QuantIndex {
        let n = self.levels as u64;
        let mut cells = vec![0u32; self.dim];
        for cell in cells.iter_mut().rev() {
            *cell = (wire % n) as u32;
            wire /= n;
        }
        QuantIndex { cells }
    }

    fn check_shapes(&self, v: &[f64], center: &[f64]) {
        assert_eq!(v.len(), self.dim, "value dimension");
        assert_eq!(center.len(), self.dim, "center dimension");
    }
}

/// Worst-case quantization error `range / N`.
pub fn quantization_error_bound(range: f64, codec: &UniformCodec) -> f64 {
    range / codec.levels as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransmissionOutcome {
    Attacked,
    FirstSuccessAfterAttack,
    ConsecutiveSuccess,
}

impl TransmissionOutcome {
    /// Outcome of a slot given whether it and the previous slot were attacked.
    /// Slot 0 behaves as if preceded by an attack.
    pub fn classify(attacked: bool, previous_attacked: bool) -> Self {
        match (attacked, previous_attacked) {
            (true, _) => Self::Attacked,
            (false, true) => Self::FirstSuccessAfterAttack,
            (false, false) => Self::ConsecutiveSuccess,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Attacked => "attacked",
            Self::FirstSuccessAfterAttack => "first_success",
            Self::ConsecutiveSuccess => "success",
        }
    }
}

/// `theta_a`, `theta_0`, `theta_na`: range growth during an attack, on the
/// first success after one, and on consecutive successes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaFactors {
    pub theta_a: f64,
    pub theta_0: f64,
    pub theta_na: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RangeScheme {
    /// Never changes.
    Constant,
    /// Derived from the output range by [`derive_input_range`].
    Input,
    /// Three-branch law on the output channel.
    Output,
    /// Three-branch law, output-only channel with acknowledgments.
    OutputAck,
    /// Three-branch law driven by inferred attacks.
    OutputAckFree,
    /// Encoder that cannot see attacks: `theta_0` at slot 0, `theta_na` after.
    EncoderSideMismatch,
    /// Decoder of the mismatch scenario: three-branch law.
    DecoderSideMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeState {
    pub e: f64,
    pub scheme: RangeScheme,
    pub thetas: ThetaFactors,
    pub previous_attacked: bool,
    /// Number of updates applied so far.
    pub slot: u64,
}

impl RangeState {
    pub fn new(e: f64, scheme: RangeScheme, thetas: ThetaFactors) -> Result<Self> {
        if !(e >= 0.0 && e.is_finite()) {
            return Err(Error::Domain(format!(
                "range must be finite and nonnegative, got {e}"
            )));
        }
        Ok(Self {
            e,
            scheme,
            thetas,
            previous_attacked: true,
            slot: 0,
        })
    }

    /// Growth factor for the given outcome.
    pub fn factor(&self, outcome: TransmissionOutcome) -> f64 {
        let t = &self.thetas;
        match self.scheme {
            RangeScheme::Constant | RangeScheme::Input => 1.0,
            RangeScheme::EncoderSideMismatch => {
                if self.slot == 0 {
                    t.theta_0
                } else {
                    t.theta_na
                }
            }
            _ => match outcome {
                TransmissionOutcome::Attacked => t.theta_a,
                TransmissionOutcome::FirstSuccessAfterAttack => t.theta_0,
                TransmissionOutcome::ConsecutiveSuccess => t.theta_na,
            },
        }
    }

    /// Range for the next slot.
    pub fn update(&self, outcome: TransmissionOutcome) -> Self {
        Self {
            e: self.e * self.factor(outcome),
            previous_attacked: outcome == TransmissionOutcome::Attacked,
            slot: self.slot + 1,
            ..*self
        }
    }
}

/// `(N3 - 1) / N3 * ||K R_bar^k M|| * e3`, the input range at sub-step `k`.
pub fn derive_input_range(e3: f64, k_step: usize, gs: &GainSet, n3: u32) -> f64 {
    let mut p = gs.m.clone();
    for _ in 0..k_step {
        p = &gs.r_bar * &p;
    }
    input_range_from_norm(e3, (&gs.k * &p).inf_norm(), n3)
}

pub fn input_range_from_norm(e3: f64, gain_norm: f64, n3: u32) -> f64 {
    (n3 as f64 - 1.0) / n3 as f64 * gain_norm * e3
}

/// `(E1, E2, E3) = (0, 0, ||C|| x0_bound)`.
pub fn initial_ranges(x0_bound: f64, c: &Matrix) -> (f64, f64, f64) {
    (0.0, 0.0, c.inf_norm() * x0_bound)
}
