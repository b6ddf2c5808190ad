//! Range growth factors, quantization-level and DoS-budget conditions, decay
//! certificates and the admissible `(1/nu_f, 1/nu_d)` boundary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::discretize::DiscretePlant;
use crate::dos::DoSParams;
use crate::error::{Error, Result};
use crate::gains::{AckConstants, DecayConstants};
use crate::quantizer::ThetaFactors;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThetaVariant {
    DualChannel,
    OutputAck,
    OutputAckFree,
}

impl ThetaVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::DualChannel => "dual-channel",
            Self::OutputAck => "output-ack",
            Self::OutputAckFree => "output-ack-free",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaSet {
    pub theta_a: f64,
    pub theta_0: f64,
    pub theta_na: f64,
    pub variant: ThetaVariant,
}

impl ThetaSet {
    pub fn factors(&self) -> ThetaFactors {
        ThetaFactors {
            theta_a: self.theta_a,
            theta_0: self.theta_0,
            theta_na: self.theta_na,
        }
    }

    /// `theta_na < theta_0 < theta_a`.
    pub fn is_ordered(&self) -> bool {
        self.theta_na < self.theta_0 && self.theta_0 < self.theta_a
    }
}

/// Dual-channel factors for level counts `n2`, `n3`; infinite counts give the
/// unquantized limit.
pub fn dual_thetas(dc: &DecayConstants, dp: &DiscretePlant, n2: f64, n3: f64) -> ThetaSet {
    let c = dp.c.inf_norm();
    let frac = if n3.is_infinite() {
        1.0
    } else {
        (n3 - 1.0) / n3
    };
    let extra = c * dc.a1 / n3 + c * dc.a2 * frac / n2;
    ThetaSet {
        theta_a: dp.a_lift().inf_norm(),
        theta_0: dc.a0 * dc.rho + extra,
        theta_na: dc.rho + extra,
        variant: ThetaVariant::DualChannel,
    }
}

/// Factors of the single-rate loop with acknowledgments; `a_d` is sampled at
/// the output period.
pub fn ack_thetas(ac: &AckConstants, a_d_norm: f64, c_norm: f64, n: f64) -> ThetaSet {
    let extra = ac.h1 * c_norm / n;
    ThetaSet {
        theta_a: a_d_norm,
        theta_0: ac.h0 * ac.rho + extra,
        theta_na: ac.rho + extra,
        variant: ThetaVariant::OutputAck,
    }
}

pub fn ackfree_thetas(dc: &DecayConstants, dp: &DiscretePlant, n: f64) -> ThetaSet {
    let extra = dc.g1 * dp.c.inf_norm() / n;
    ThetaSet {
        theta_a: dp.a_lift().inf_norm(),
        theta_0: dc.g0 * dc.rho + extra,
        theta_na: dc.rho + extra,
        variant: ThetaVariant::OutputAckFree,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Any,
    Odd,
    Even,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCheck {
    pub name: String,
    pub levels: u32,
    /// Strict lower bound on `levels`.
    pub threshold: f64,
    pub parity: Parity,
    pub holds: bool,
}

impl LevelCheck {
    fn new(name: &str, levels: u32, threshold: f64, parity: Parity) -> Self {
        let parity_ok = match parity {
            Parity::Any => true,
            Parity::Odd => levels % 2 == 1,
            Parity::Even => levels.is_multiple_of(2),
        };
        let holds = levels >= 1 && parity_ok && (levels as f64) > threshold;
        Self {
            name: name.to_string(),
            levels,
            threshold,
            parity,
            holds,
        }
    }
}

/// `N1` odd, `N2 > max(a2 ||C|| / (1 - rho), a2 / a1)` and the matching `N3` bound.
pub fn check_levels_dual(
    dc: &DecayConstants,
    dp: &DiscretePlant,
    n1: u32,
    n2: u32,
    n3: u32,
) -> Vec<LevelCheck> {
    let c = dp.c.inf_norm();
    let rho = dc.rho;
    let n2_thr = if dc.a1 > 0.0 {
        (dc.a2 * c / (1.0 - rho)).max(dc.a2 / dc.a1)
    } else {
        dc.a2 * c / (1.0 - rho)
    };
    let per_n2 = c * dc.a2 / n2 as f64;
    let denom = 1.0 - rho - per_n2;
    let n3_thr = if denom > 0.0 {
        (c * dc.a1 - per_n2) / denom
    } else {
        f64::INFINITY
    };
    vec![
        LevelCheck::new("N1", n1, 0.0, Parity::Odd),
        LevelCheck::new("N2", n2, n2_thr, Parity::Any),
        LevelCheck::new("N3", n3, n3_thr, Parity::Any),
    ]
}

/// `N > H1 ||C|| / (1 - rho)`.
pub fn check_levels_ack(ac: &AckConstants, c_norm: f64, n: u32) -> Vec<LevelCheck> {
    vec![LevelCheck::new(
        "N",
        n,
        ac.h1 * c_norm / (1.0 - ac.rho),
        Parity::Any,
    )]
}

/// `N > G1 ||C|| / (1 - rho)` with `N` even.
pub fn check_levels_ackfree(dc: &DecayConstants, dp: &DiscretePlant, n: u32) -> Vec<LevelCheck> {
    vec![LevelCheck::new(
        "N",
        n,
        dc.g1 * dp.c.inf_norm() / (1.0 - dc.rho),
        Parity::Even,
    )]
}

/// `1/nu_d <= slope / nu_f + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffLine {
    pub slope: f64,
    pub intercept: f64,
}

impl TradeoffLine {
    /// Line of the DoS condition for `thetas`. Degenerate sets give an
    /// empty region (`-inf` intercept) or an unconstrained one (`+inf`).
    pub fn of(thetas: &ThetaSet) -> Self {
        let ThetaSet {
            theta_a,
            theta_0,
            theta_na,
            ..
        } = *thetas;
        if theta_na.is_nan() || theta_na >= 1.0 {
            return Self {
                slope: 0.0,
                intercept: f64::NEG_INFINITY,
            };
        }
        if theta_a.is_nan() || theta_a <= theta_na {
            return Self {
                slope: 0.0,
                intercept: f64::INFINITY,
            };
        }
        let denom = (theta_a / theta_na).ln();
        Self {
            slope: -(theta_0 / theta_na).ln() / denom,
            intercept: (1.0 / theta_na).ln() / denom,
        }
    }

    pub fn at(&self, inv_nu_f: f64) -> f64 {
        if self.intercept.is_infinite() {
            self.intercept
        } else {
            self.slope * inv_nu_f + self.intercept
        }
    }

    /// Line through two points.
    pub fn fit(p: (f64, f64), q: (f64, f64)) -> Self {
        let slope = (q.1 - p.1) / (q.0 - p.0);
        Self {
            slope,
            intercept: p.1 - slope * p.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DosCheck {
    pub inv_nu_d: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn check_dos(thetas: &ThetaSet, params: &DoSParams) -> DosCheck {
    let rhs = TradeoffLine::of(thetas).at(1.0 / params.nu_f);
    let inv_nu_d = 1.0 / params.nu_d;
    DosCheck {
        inv_nu_d,
        rhs,
        holds: inv_nu_d <= rhs,
    }
}

/// Boundary points `(1/nu_f, max 1/nu_d)` on the grid.
pub fn tradeoff_boundary(thetas: &ThetaSet, inv_nu_f_grid: &[f64]) -> Vec<(f64, f64)> {
    let line = TradeoffLine::of(thetas);
    inv_nu_f_grid.iter().map(|&x| (x, line.at(x))).collect()
}

/// `n` evenly spaced points on `[0, 0.5]`.
pub fn default_grid(n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|i| 0.5 * i as f64 / (n - 1) as f64).collect()
}

/// Envelope `E_q <= omega1 gamma^q x0_bound`, the input-range analogue
/// `omega2`, and the continuous-time rate `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayCertificate {
    pub omega1: f64,
    pub omega2: Option<f64>,
    pub gamma: f64,
    pub sigma: f64,
}

impl DecayCertificate {
    pub fn envelope(&self, q: usize, x0_bound: f64) -> f64 {
        self.omega1 * self.gamma.powi(q as i32) * x0_bound
    }
}

/// Worst case of the range laws over every budget-respecting pattern.
///
/// `initial_scale` is the ratio of the initial range to `x0_bound` (`||C||` for
/// the dual channel, 1 for the output-only schemes); `input_gain` is
/// `(N3 - 1) / N3 * max_k ||K R_bar^k M||` when an input range exists; `period`
/// is the output period `eta * delta`.
pub fn decay_certificate(
    thetas: &ThetaSet,
    params: &DoSParams,
    initial_scale: f64,
    input_gain: Option<f64>,
    period: f64,
) -> Result<DecayCertificate> {
    let check = check_dos(thetas, params);
    if !check.holds {
        return Err(Error::CertificateUnavailable(format!(
            "1/nu_d = {:.6} exceeds the bound {:.6}",
            check.inv_nu_d, check.rhs
        )));
    }
    let ThetaSet {
        theta_a,
        theta_0,
        theta_na,
        ..
    } = *thetas;
    let attack_growth = (theta_a / theta_na).max(1.0);
    let first_growth = (theta_0 / theta_na).max(1.0);
    let gamma =
        theta_na * attack_growth.powf(1.0 / params.nu_d) * first_growth.powf(1.0 / params.nu_f);
    if gamma > 1.0 + 1e-9 {
        return Err(Error::CertificateUnavailable(format!("gamma = {gamma:.9}")));
    }
    let omega1 = (initial_scale
        * attack_growth.powf(params.kappa_d)
        * first_growth.powf(params.kappa_f + 1.0))
    .max(1.0);
    Ok(DecayCertificate {
        omega1,
        omega2: input_gain.map(|g| g * omega1),
        gamma,
        sigma: (1.0 / gamma).ln() / period,
    })
}

/// Everything `check` reports for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub variant: ThetaVariant,
    pub thetas: ThetaSet,
    pub levels: Vec<LevelCheck>,
    pub dos: DosCheck,
    pub line: TradeoffLine,
    /// Constants that produced the thetas, in report order.
    pub constants: Vec<(String, f64)>,
}

impl ConditionReport {
    pub fn new(
        thetas: ThetaSet,
        levels: Vec<LevelCheck>,
        params: &DoSParams,
        constants: Vec<(String, f64)>,
    ) -> Self {
        Self {
            variant: thetas.variant,
            dos: check_dos(&thetas, params),
            line: TradeoffLine::of(&thetas),
            thetas,
            levels,
            constants,
        }
    }

    pub fn levels_hold(&self) -> bool {
        self.levels.iter().all(|l| l.holds)
    }

    pub fn holds(&self) -> bool {
        self.levels_hold() && self.dos.holds
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scheme: {}", self.variant.as_str());
        for (name, v) in &self.constants {
            if *v != 0.0 && v.abs() < 1e-3 {
                let _ = writeln!(s, "  {name:<14} {v:.3e}");
            } else {
                let _ = writeln!(s, "  {name:<14} {v:.6}");
            }
        }
        let t = &self.thetas;
        let _ = writeln!(s, "  theta_a        {:.6}", t.theta_a);
        let _ = writeln!(s, "  theta_0        {:.6}", t.theta_0);
        let _ = writeln!(s, "  theta_na       {:.6}", t.theta_na);
        if !t.is_ordered() {
            let _ = writeln!(s, "  warning: theta_na < theta_0 < theta_a does not hold");
        }
        for l in &self.levels {
            let parity = match l.parity {
                Parity::Any => "",
                Parity::Odd => ", odd",
                Parity::Even => ", even",
            };
            let _ = writeln!(
                s,
                "  level {:<3} = {} (needs > {:.4}{parity}): {}",
                l.name,
                l.levels,
                l.threshold,
                pass(l.holds)
            );
        }
        let _ = writeln!(
            s,
            "  DoS: 1/nu_d = {:.4} <= {:.4}: {}",
            self.dos.inv_nu_d,
            self.dos.rhs,
            pass(self.dos.holds)
        );
        let _ = writeln!(
            s,
            "  boundary: 1/nu_d = {:.4} * 1/nu_f + {:.4}",
            self.line.slope, self.line.intercept
        );
        let _ = writeln!(s, "  overall: {}", pass(self.holds()));
        s
    }

    /// `name,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,value\n");
        let mut row = |k: &str, v: f64| {
            let _ = writeln!(s, "{k},{}", fmt17(v));
        };
        for (name, v) in &self.constants {
            row(name, *v);
        }
        row("theta_a", self.thetas.theta_a);
        row("theta_0", self.thetas.theta_0);
        row("theta_na", self.thetas.theta_na);
        for l in &self.levels {
            row(&format!("{}_threshold", l.name), l.threshold);
            row(&format!("{}_holds", l.name), f64::from(u8::from(l.holds)));
        }
        row("inv_nu_d", self.dos.inv_nu_d);
        row("dos_rhs", self.dos.rhs);
        row("dos_holds", f64::from(u8::from(self.dos.holds)));
        row("slope", self.line.slope);
        row("intercept", self.line.intercept);
        s
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

/// Seventeen significant digits, enough to round-trip any double.
pub fn fmt17(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    format!("{v:.16e}")
}
