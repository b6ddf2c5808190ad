//! The four-state batch reactor benchmark and its reference values.

use crate::conditions::{ThetaSet, ThetaVariant, TradeoffLine};
use crate::controlloop::{DosSource, GainSource, Levels, Scenario, SimConfig};
use crate::discretize::ContinuousPlant;
use crate::dos::{DoSParams, DoSPattern};
use crate::matrix::Matrix;

/// Output period used throughout the case study, seconds.
pub const OUTPUT_PERIOD: f64 = 0.2;

/// Horizon of the dual-channel experiment, output slots.
pub const DUAL_HORIZON: usize = 800;

/// Horizon of the output-only experiment, output slots.
pub const OUTPUT_ONLY_HORIZON: usize = 300;

/// Reference boundary with both level counts unbounded.
pub const INFINITE_LEVEL_LINE: TradeoffLine = TradeoffLine {
    slope: -0.5544,
    intercept: 0.2707,
};

/// Reference boundary for the finite level counts of the dual experiment.
pub const FINITE_LEVEL_LINE: TradeoffLine = TradeoffLine {
    slope: -2.0380,
    intercept: 0.2269,
};

/// Reference level threshold of the output-only scheme.
pub const OUTPUT_ONLY_THRESHOLD: f64 = 6.957;

/// Reference right-hand side of the dual-channel DoS condition.
pub const DUAL_RHS: f64 = 0.119;

/// Reference right-hand side of the output-only DoS condition.
pub const OUTPUT_ONLY_RHS: f64 = 0.198;

/// Totals `(Phi_f, Phi_d)` of the dual-channel experiment.
pub const DUAL_TOTALS: (usize, usize) = (44, 47);

/// Totals `(Phi_f, Phi_d)` of the output-only experiment.
pub const OUTPUT_ONLY_TOTALS: (usize, usize) = (25, 27);

/// Seed and intensity regenerating a dual-channel pattern with [`DUAL_TOTALS`].
pub const DUAL_SEED: (u64, f64) = (0, 0.15);

/// Seed and intensity regenerating an output-only pattern with [`OUTPUT_ONLY_TOTALS`].
pub const OUTPUT_ONLY_SEED: (u64, f64) = (0, 0.2);

/// Slot attacked in the mismatch experiment.
pub const MISMATCH_ATTACK_SLOT: usize = 10;

pub fn dual_params() -> DoSParams {
    DoSParams {
        kappa_f: 2.0,
        nu_f: 19.0,
        kappa_d: 3.0,
        nu_d: 18.0,
    }
}

pub fn output_only_params() -> DoSParams {
    DoSParams {
        kappa_f: 1.0,
        nu_f: 11.0,
        kappa_d: 1.0,
        nu_d: 11.0,
    }
}

fn base_config(
    scenario: Scenario,
    levels: Levels,
    params: DoSParams,
    dos: DosSource,
    horizon: usize,
) -> SimConfig {
    SimConfig {
        scenario,
        plant: batch_reactor(),
        big_delta: OUTPUT_PERIOD,
        x0: vec![1.0; 4],
        x0_bound: 1.0,
        gains: GainSource::Synthesize {
            deadbeat_observer: false,
        },
        levels,
        params,
        dos,
        horizon_slots: horizon,
        oversample: 1,
        thetas_override: None,
    }
}

/// Dual-channel experiment with `N1 = 1`, `N2 = N3 = 10^4`.
pub fn dual_channel_config() -> SimConfig {
    let (seed, intensity) = DUAL_SEED;
    base_config(
        Scenario::DualChannel,
        Levels::Dual {
            n1: 1,
            n2: 10_000,
            n3: 10_000,
        },
        dual_params(),
        DosSource::Random { seed, intensity },
        DUAL_HORIZON,
    )
}

/// Output-only experiment without acknowledgments, `N = 100`.
pub fn output_ackfree_config() -> SimConfig {
    let (seed, intensity) = OUTPUT_ONLY_SEED;
    base_config(
        Scenario::OutputAckFree,
        Levels::Single { n: 100 },
        output_only_params(),
        DosSource::Random { seed, intensity },
        OUTPUT_ONLY_HORIZON,
    )
}

/// Output-only experiment with acknowledgments, one sample per period.
pub fn output_ack_config() -> SimConfig {
    let (seed, intensity) = OUTPUT_ONLY_SEED;
    base_config(
        Scenario::OutputAck,
        Levels::Single { n: 100 },
        output_only_params(),
        DosSource::Random { seed, intensity },
        OUTPUT_ONLY_HORIZON,
    )
}

/// The acknowledgment scheme with a single attack and no acknowledgments.
pub fn mismatch_config() -> SimConfig {
    base_config(
        Scenario::MismatchDemo,
        Levels::Single { n: 100 },
        output_only_params(),
        DosSource::Pattern(DoSPattern::with_attacks(
            OUTPUT_ONLY_HORIZON,
            &[MISMATCH_ATTACK_SLOT],
        )),
        OUTPUT_ONLY_HORIZON,
    )
}

fn a_rows(coupling: f64) -> [[f64; 4]; 4] {
    [
        [1.38, -0.2077, 6.715, -5.676],
        [-0.5814, -4.29, 0.0, 0.675],
        [1.067, 4.273, -6.654, 5.893],
        [0.048, 4.273, coupling, -2.104],
    ]
}

fn plant(coupling: f64) -> ContinuousPlant {
    let a = Matrix::from_rows(&a_rows(coupling)).expect("fixture");
    let b = Matrix::from_rows(&[[0.0, 0.0], [5.679, 0.0], [1.136, -3.146], [1.136, 0.0]])
        .expect("fixture");
    let c = Matrix::from_rows(&[[1.0, 0.0, 1.0, -1.0], [0.0, 1.0, 0.0, 0.0]]).expect("fixture");
    ContinuousPlant::new(a, b, c).expect("fixture")
}

/// The batch reactor with `A[3][2] = -1.343`, the model used by every bundled
/// scenario.
pub fn batch_reactor() -> ContinuousPlant {
    plant(-1.343)
}

/// The same reactor with `A[3][2] = +1.343`. The reference gains below are
/// deadbeat and stabilising for this sign.
pub fn batch_reactor_variant() -> ContinuousPlant {
    plant(1.343)
}

/// Reference deadbeat gain, four decimals.
pub fn reference_k() -> Matrix {
    Matrix::from_rows(&[
        [1.0106, -1.5661, 0.0385, -4.0366],
        [8.1074, -0.0347, 4.3337, -3.6241],
    ])
    .expect("fixture")
}

/// Reference steady-state filter gain, four decimals.
pub fn reference_m() -> Matrix {
    Matrix::from_rows(&[
        [0.5534, -0.0249],
        [-0.0287, 0.0396],
        [0.1489, 0.0892],
        [0.0810, 0.0931],
    ])
    .expect("fixture")
}

/// Constants implied by the reference lines for a given attack factor
/// `theta_a`. Only the lines are given; these are the constants that
/// reproduce them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceConstants {
    pub theta_a: f64,
    pub rho: f64,
    pub a0: f64,
    /// Input constant of the output-only scheme, from the reference threshold.
    pub g1: f64,
    /// Factors of the finite-level dual line.
    pub finite: ThetaSet,
}

impl ReferenceConstants {
    pub fn from_lines(theta_a: f64, c_norm: f64) -> Self {
        let (rho, t0) = invert_line(&INFINITE_LEVEL_LINE, theta_a);
        let (tna, t0_finite) = invert_line(&FINITE_LEVEL_LINE, theta_a);
        Self {
            theta_a,
            rho,
            a0: t0 / rho,
            g1: OUTPUT_ONLY_THRESHOLD * (1.0 - rho) / c_norm,
            finite: ThetaSet {
                theta_a,
                theta_0: t0_finite,
                theta_na: tna,
                variant: ThetaVariant::DualChannel,
            },
        }
    }

    /// Unquantized dual-channel factors.
    pub fn infinite(&self) -> ThetaSet {
        ThetaSet {
            theta_a: self.theta_a,
            theta_0: self.a0 * self.rho,
            theta_na: self.rho,
            variant: ThetaVariant::DualChannel,
        }
    }

    /// Output-only factors for `n` levels.
    pub fn output_only(&self, n: f64, c_norm: f64) -> ThetaSet {
        let extra = self.g1 * c_norm / n;
        ThetaSet {
            theta_a: self.theta_a,
            theta_0: self.a0 * self.rho + extra,
            theta_na: self.rho + extra,
            variant: ThetaVariant::OutputAckFree,
        }
    }
}

/// `(theta_na, theta_0)` whose boundary is `line` given `theta_a`.
fn invert_line(line: &TradeoffLine, theta_a: f64) -> (f64, f64) {
    let la = theta_a.ln();
    let l_na = -line.intercept * la / (1.0 - line.intercept);
    let l_0 = l_na - line.slope * (la - l_na);
    (l_na.exp(), l_0.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverted_lines_round_trip() {
        let r = ReferenceConstants::from_lines(3.0752, 3.0);
        let inf = TradeoffLine::of(&r.infinite());
        assert!((inf.slope - INFINITE_LEVEL_LINE.slope).abs() < 1e-12);
        assert!((inf.intercept - INFINITE_LEVEL_LINE.intercept).abs() < 1e-12);
        let fin = TradeoffLine::of(&r.finite);
        assert!((fin.slope - FINITE_LEVEL_LINE.slope).abs() < 1e-12);
        assert!((fin.intercept - FINITE_LEVEL_LINE.intercept).abs() < 1e-12);
    }

    #[test]
    fn fixtures_differ_in_one_entry() {
        let d = &batch_reactor().a - &batch_reactor_variant().a;
        assert!((d.inf_norm() - 2.686).abs() < 1e-12);
    }
}
