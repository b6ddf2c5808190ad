//! Closed-loop engines.
//!
//! * [`Scenario::DualChannel`]: input and output channels are both attacked.
//!   The controller runs a deadbeat loop on its estimate and falls back to
//!   zero input while an attack lasts.
//! * [`Scenario::OutputAck`]: only the output channel is attacked; encoder and
//!   decoder run the same predictor and acknowledgments keep them in step.
//! * [`Scenario::OutputAckFree`]: as above without acknowledgments; the
//!   encoder infers an attack from a period of exactly zero input.
//! * [`Scenario::MismatchDemo`]: the acknowledgment scheme run without
//!   acknowledgments, showing the encoder and decoder drifting apart.
//!
//! [`prepare`] resolves a [`SimConfig`] into a [`Prepared`] loop (gains,
//! constants, condition report, certificate) and [`Prepared::run`] simulates it.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::conditions::{
    ack_thetas, ackfree_thetas, check_levels_ack, check_levels_ackfree, check_levels_dual,
    decay_certificate, dual_thetas, fmt17, ConditionReport, DecayCertificate, ThetaSet,
};
use crate::discretize::{discretize, ContinuousPlant, DiscretePlant};
use crate::dos::{DoSParams, DoSPattern};
use crate::error::{Error, Result};
use crate::gains::{
    derive_ack_constants, derive_decay_constants, design_lq_gain, design_observer_gain,
    verify_nilpotent, AckConstants, DecayConstants, GainSet,
};
use crate::matrix::{vec_add, vec_norm, vec_sub, Matrix};
use crate::quantizer::{
    input_range_from_norm, RangeScheme, RangeState, Saturation, ThetaFactors, TransmissionOutcome,
    UniformCodec,
};

/// Bound on `|C x_hat|` at the end of each period under a deadbeat gain.
pub const DEADBEAT_NULL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    DualChannel,
    OutputAck,
    OutputAckFree,
    MismatchDemo,
}

impl Scenario {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::DualChannel => "dual_channel",
            Self::OutputAck => "output_ack",
            Self::OutputAckFree => "output_ack_free",
            Self::MismatchDemo => "mismatch_demo",
        }
    }

    /// Whether samples are sent once per output period (`delta = Delta`).
    pub fn single_rate(&self) -> bool {
        matches!(self, Self::OutputAck | Self::MismatchDemo)
    }

    pub fn channel(&self) -> ChannelModel {
        match self {
            Self::DualChannel => ChannelModel {
                input_attacked_with_output: true,
                ack: AckMode::None,
            },
            Self::OutputAck => ChannelModel {
                input_attacked_with_output: false,
                ack: AckMode::Instant,
            },
            Self::OutputAckFree | Self::MismatchDemo => ChannelModel {
                input_attacked_with_output: false,
                ack: AckMode::None,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckMode {
    None,
    Instant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelModel {
    pub input_attacked_with_output: bool,
    pub ack: AckMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Levels {
    /// Estimated output, input and output quantizers.
    Dual {
        n1: u32,
        n2: u32,
        n3: u32,
    },
    Single {
        n: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GainSource {
    /// Deadbeat `K` plus either a filter or a deadbeat observer gain.
    Synthesize { deadbeat_observer: bool },
    /// Supplied `K` and observer gain; the observer gain is `M` for the
    /// multi-rate schemes and `L = A_d M` is formed for the single-rate ones.
    Given { k: Matrix, m: Matrix },
}

#[derive(Debug, Clone, PartialEq)]
pub enum DosSource {
    Pattern(DoSPattern),
    Random { seed: u64, intensity: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub plant: ContinuousPlant,
    pub big_delta: f64,
    pub x0: Vec<f64>,
    pub x0_bound: f64,
    pub gains: GainSource,
    pub levels: Levels,
    /// Budget used by the conditions and by random generation.
    pub params: DoSParams,
    pub dos: DosSource,
    pub horizon_slots: usize,
    /// Trace points per input period.
    pub oversample: usize,
    /// Replaces the computed growth factors, for checking reference values.
    pub thetas_override: Option<ThetaSet>,
}

/// Everything an engine needs, resolved.
#[derive(Debug, Clone)]
pub struct LoopSetup {
    pub scenario: Scenario,
    pub plant: ContinuousPlant,
    pub a_d: Matrix,
    pub b_d: Matrix,
    pub c: Matrix,
    pub delta: f64,
    /// Input periods per output period.
    pub steps: usize,
    pub k: Matrix,
    /// `M` for the multi-rate schemes, `L` for the single-rate ones.
    pub observer: Matrix,
    pub thetas: ThetaSet,
    pub levels: Levels,
    pub x0: Vec<f64>,
    pub x0_bound: f64,
    pub pattern: DoSPattern,
    pub oversample: usize,
    /// `||K R_bar^k M||`, `k = 0..steps` (dual channel).
    pub input_gain_norms: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SchemeConstants {
    Decay(DecayConstants),
    Ack(AckConstants),
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub setup: LoopSetup,
    pub discrete: Option<DiscretePlant>,
    pub constants: SchemeConstants,
    pub report: ConditionReport,
    pub certificate: Option<DecayCertificate>,
    pub gains_synthesized: bool,
    /// `||(A_d + B_d K)^eta||` (multi-rate) or the spectral bound of
    /// `A_d + B_d K` (single-rate).
    pub controller_residual: f64,
    pub params: DoSParams,
}

impl Prepared {
    pub fn run(&self) -> Result<LoopTrace> {
        match self.setup.scenario {
            Scenario::DualChannel => run_dual_channel(&self.setup),
            Scenario::OutputAck => run_output_ack(&self.setup),
            Scenario::OutputAckFree => run_output_ackfree(&self.setup),
            Scenario::MismatchDemo => run_mismatch_demo(&self.setup),
        }
    }

    /// Growth factors with every level count taken to infinity.
    pub fn unquantized_thetas(&self) -> ThetaSet {
        match (&self.constants, &self.discrete) {
            (SchemeConstants::Decay(dc), Some(dp))
                if self.setup.scenario == Scenario::DualChannel =>
            {
                dual_thetas(dc, dp, f64::INFINITY, f64::INFINITY)
            }
            (SchemeConstants::Decay(dc), Some(dp)) => ackfree_thetas(dc, dp, f64::INFINITY),
            (SchemeConstants::Ack(ac), _) => ack_thetas(
                ac,
                self.setup.a_d.inf_norm(),
                self.setup.c.inf_norm(),
                f64::INFINITY,
            ),
            (SchemeConstants::Decay(_), None) => {
                unreachable!("multi-rate setups keep their sampled plant")
            }
        }
    }
}

/// Validates `cfg`, synthesizes or checks gains, computes constants and the
/// condition report, and builds the attack pattern.
pub fn prepare(cfg: &SimConfig) -> Result<Prepared> {
    validate_config(cfg)?;
    let pattern = match &cfg.dos {
        DosSource::Pattern(p) => {
            if p.horizon() < cfg.horizon_slots {
                return Err(Error::Domain(format!(
                    "pattern covers {} slots, horizon is {}",
                    p.horizon(),
                    cfg.horizon_slots
                )));
            }
            DoSPattern::new(p.slots()[..cfg.horizon_slots].to_vec())
        }
        DosSource::Random { seed, intensity } => {
            DoSPattern::generate(&cfg.params, cfg.horizon_slots, *seed, *intensity)?
        }
    };
    if cfg.scenario.single_rate() {
        prepare_single_rate(cfg, pattern)
    } else {
        prepare_multi_rate(cfg, pattern)
    }
}

fn validate_config(cfg: &SimConfig) -> Result<()> {
    let nx = cfg.plant.nx();
    if cfg.x0.len() != nx {
        return Err(Error::Domain(format!(
            "x0 has {} entries, plant has {nx} states",
            cfg.x0.len()
        )));
    }
    if cfg.x0.iter().any(|v| !v.is_finite()) || !(cfg.x0_bound >= 0.0 && cfg.x0_bound.is_finite()) {
        return Err(Error::Domain(
            "x0 and x0_bound must be finite, x0_bound nonnegative".into(),
        ));
    }
    if vec_norm(&cfg.x0) > cfg.x0_bound {
        return Err(Error::Domain(format!(
            "|x0| = {} exceeds x0_bound = {}",
            vec_norm(&cfg.x0),
            cfg.x0_bound
        )));
    }
    if cfg.horizon_slots == 0 || cfg.oversample == 0 {
        return Err(Error::Domain(
            "horizon and oversample must be positive".into(),
        ));
    }
    cfg.params.validate()?;
    match (cfg.scenario, cfg.levels) {
        (Scenario::DualChannel, Levels::Dual { n1, n2, n3 }) => {
            if n1 % 2 == 0 {
                return Err(Error::Domain(format!("N1 must be odd, got {n1}")));
            }
            if n2 == 0 || n3 == 0 {
                return Err(Error::Domain("N2 and N3 must be positive".into()));
            }
        }
        (Scenario::OutputAckFree, Levels::Single { n }) => {
            if n == 0 || n % 2 == 1 {
                return Err(Error::Domain(format!(
                    "N must be even and positive, got {n}"
                )));
            }
        }
        (Scenario::OutputAck | Scenario::MismatchDemo, Levels::Single { n }) => {
            if n == 0 {
                return Err(Error::Domain("N must be positive".into()));
            }
        }
        (s, _) => {
            return Err(Error::Domain(format!(
                "level layout does not match scenario {}",
                s.as_str()
            )));
        }
    }
    Ok(())
}

fn prepare_multi_rate(cfg: &SimConfig, pattern: DoSPattern) -> Result<Prepared> {
    let dp = DiscretePlant::sample(&cfg.plant, cfg.big_delta)?;
    let (gs, synthesized) = match &cfg.gains {
        GainSource::Synthesize { deadbeat_observer } => {
            (GainSet::synthesize(&dp, *deadbeat_observer)?, true)
        }
        GainSource::Given { k, m } => (GainSet::new(&dp, k.clone(), m.clone(), false)?, false),
    };
    let residual = verify_nilpotent(&dp.a_d, &dp.b_d, &gs.k, dp.eta);
    let dc = derive_decay_constants(&gs, &dp)?;
    let c_norm = dp.c.inf_norm();
    let input_gain_norms = gs.input_gain_norms(dp.eta);
    let (computed, levels, initial_scale, input_gain) = match cfg.levels {
        Levels::Dual { n1, n2, n3 } => {
            let max_gain = input_gain_norms.iter().copied().fold(0.0, f64::max);
            (
                dual_thetas(&dc, &dp, n2 as f64, n3 as f64),
                check_levels_dual(&dc, &dp, n1, n2, n3),
                c_norm,
                Some(input_range_from_norm(1.0, max_gain, n3)),
            )
        }
        Levels::Single { n } => (
            ackfree_thetas(&dc, &dp, n as f64),
            check_levels_ackfree(&dc, &dp, n),
            1.0,
            None,
        ),
    };
    let thetas = cfg.thetas_override.unwrap_or(computed);
    let constants = vec![
        ("rho".to_string(), dc.rho),
        ("radius_bound".to_string(), dc.certified_radius),
        ("a0".to_string(), dc.a0),
        ("a1".to_string(), dc.a1),
        ("a2".to_string(), dc.a2),
        ("scan_powers".to_string(), dc.max_power_used as f64),
        ("norm_C".to_string(), c_norm),
        ("eta".to_string(), dp.eta as f64),
        ("mu".to_string(), dp.mu as f64),
        ("delta".to_string(), dp.delta),
        ("nilpotency".to_string(), residual),
    ];
    let report = ConditionReport::new(thetas, levels, &cfg.params, constants);
    let certificate = decay_certificate(
        &thetas,
        &cfg.params,
        initial_scale,
        input_gain,
        dp.big_delta,
    )
    .ok();
    let setup = LoopSetup {
        scenario: cfg.scenario,
        plant: cfg.plant.clone(),
        a_d: dp.a_d.clone(),
        b_d: dp.b_d.clone(),
        c: dp.c.clone(),
        delta: dp.delta,
        steps: dp.eta,
        k: gs.k.clone(),
        observer: gs.m.clone(),
        thetas,
        levels: cfg.levels,
        x0: cfg.x0.clone(),
        x0_bound: cfg.x0_bound,
        pattern,
        oversample: cfg.oversample,
        input_gain_norms,
    };
    Ok(Prepared {
        setup,
        discrete: Some(dp),
        constants: SchemeConstants::Decay(dc),
        report,
        certificate,
        gains_synthesized: synthesized,
        controller_residual: residual,
        params: cfg.params,
    })
}

fn prepare_single_rate(cfg: &SimConfig, pattern: DoSPattern) -> Result<Prepared> {
    let (a_d, b_d) = discretize(&cfg.plant, cfg.big_delta)?;
    let c = cfg.plant.c.clone();
    let (k, m, synthesized) = match &cfg.gains {
        GainSource::Synthesize { .. } => (
            design_lq_gain(&a_d, &b_d)?,
            design_observer_gain(&a_d, &c)?,
            true,
        ),
        GainSource::Given { k, m } => (k.clone(), m.clone(), false),
    };
    if k.shape() != (b_d.cols(), a_d.rows()) || m.shape() != (a_d.rows(), c.rows()) {
        return Err(Error::Dimension(format!(
            "K {:?}, M {:?}",
            k.shape(),
            m.shape()
        )));
    }
    let l = &a_d * &m;
    let closed = &a_d + &(&b_d * &k);
    let radius = closed.gelfand_radius(crate::gains::CERT_POWER)?;
    if !radius.is_conclusive() {
        return Err(Error::NotStable(format!(
            "A_d + B_d K bound {:.6}",
            radius.value
        )));
    }
    let ac = derive_ack_constants(&a_d, &c, &l)?;
    let c_norm = c.inf_norm();
    let n = match cfg.levels {
        Levels::Single { n } => n,
        Levels::Dual { .. } => unreachable!("validated"),
    };
    let thetas = cfg
        .thetas_override
        .unwrap_or_else(|| ack_thetas(&ac, a_d.inf_norm(), c_norm, n as f64));
    let constants = vec![
        ("rho".to_string(), ac.rho),
        ("radius_bound".to_string(), ac.certified_radius),
        ("h0".to_string(), ac.h0),
        ("h1".to_string(), ac.h1),
        ("scan_powers".to_string(), ac.max_power_used as f64),
        ("norm_C".to_string(), c_norm),
        ("controller_bound".to_string(), radius.value),
    ];
    let report = ConditionReport::new(
        thetas,
        check_levels_ack(&ac, c_norm, n),
        &cfg.params,
        constants,
    );
    let certificate = decay_certificate(&thetas, &cfg.params, 1.0, None, cfg.big_delta).ok();
    let setup = LoopSetup {
        scenario: cfg.scenario,
        plant: cfg.plant.clone(),
        a_d,
        b_d,
        c,
        delta: cfg.big_delta,
        steps: 1,
        k,
        observer: l,
        thetas,
        levels: cfg.levels,
        x0: cfg.x0.clone(),
        x0_bound: cfg.x0_bound,
        pattern,
        oversample: cfg.oversample,
        input_gain_norms: Vec::new(),
    };
    Ok(Prepared {
        setup,
        discrete: None,
        constants: SchemeConstants::Ack(ac),
        report,
        certificate,
        gains_synthesized: synthesized,
        controller_residual: radius.value,
        params: cfg.params,
    })
}

/// One row of the trace: the state of the loop at the start of an input
/// period (or at an intermediate point when oversampling).
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub q: usize,
    pub k: usize,
    pub x: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub u_sent: Vec<f64>,
    pub u_applied: Vec<f64>,
    pub y: Vec<f64>,
    pub ranges: Vec<f64>,
    pub outcome: TransmissionOutcome,
    pub saturated: bool,
    pub inferred_attack: bool,
}

/// Per output slot summary.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub q: usize,
    pub attacked: bool,
    pub outcome: TransmissionOutcome,
    /// Range used at this slot: `E3` (dual), `E` or the decoder's `E_d`.
    pub range: f64,
    /// The encoder's copy of the range, where one exists.
    pub encoder_range: Option<f64>,
    /// Quantity the range must dominate: `|y - Q1(y_hat)|` (dual) or the
    /// prediction error `|x - x_hat|` (output-only schemes).
    pub error: f64,
    /// Offset from the quantizer centre, `|y - center|`.
    pub offset: f64,
    /// `|C x_hat|` at the end of the previous period.
    pub yhat_end: f64,
    pub state_norm: f64,
    pub estimate_norm: f64,
    pub inferred_attack: Option<bool>,
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    EstimatedOutput,
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaturationEvent {
    pub slot: usize,
    pub step: usize,
    pub channel: Channel,
    pub excess: f64,
    pub range: f64,
}

/// Divergence data of the mismatch scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchData {
    pub attack_slot: usize,
    pub first_saturation: Option<usize>,
    /// `(l, bound)` for `l = 3, 4, ..`.
    pub etilde: Vec<(usize, f64)>,
}

impl MismatchData {
    /// Strictly increasing over `l in 3..=last`.
    pub fn increasing_through(&self, last: usize) -> bool {
        let window: Vec<f64> = self
            .etilde
            .iter()
            .filter(|(l, _)| *l <= last)
            .map(|p| p.1)
            .collect();
        window.len() >= 2 && window.windows(2).all(|w| w[1] > w[0])
    }

    /// Largest `l` up to which the bound sequence is strictly increasing.
    pub fn increasing_extent(&self) -> usize {
        let mut last = self.etilde.first().map_or(0, |p| p.0);
        for w in self.etilde.windows(2) {
            if w[1].1 > w[0].1 {
                last = w[1].0;
            } else {
                break;
            }
        }
        last
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopTrace {
    pub scenario: Scenario,
    pub nx: usize,
    pub nu: usize,
    pub ny: usize,
    pub range_names: Vec<&'static str>,
    pub steps: Vec<StepRecord>,
    pub slots: Vec<SlotRecord>,
    /// First fatal saturation; the run stops there.
    pub saturation: Option<SaturationEvent>,
    /// Slots where the inferred attack flag disagreed with the pattern while
    /// a nonzero value was received.
    pub inference_mismatches: Vec<usize>,
    /// Slots where a zero input period was caused by a zero received value.
    pub degenerate_inferences: Vec<usize>,
    /// Slots where encoder and decoder state differed.
    pub lockstep_breaks: Vec<usize>,
    pub mismatch: Option<MismatchData>,
}

impl LoopTrace {
    fn new(setup: &LoopSetup, range_names: Vec<&'static str>) -> Self {
        Self {
            scenario: setup.scenario,
            nx: setup.a_d.rows(),
            nu: setup.b_d.cols(),
            ny: setup.c.rows(),
            range_names,
            steps: Vec::new(),
            slots: Vec::new(),
            saturation: None,
            inference_mismatches: Vec::new(),
            degenerate_inferences: Vec::new(),
            lockstep_breaks: Vec::new(),
            mismatch: None,
        }
    }

    pub fn completed(&self) -> bool {
        self.saturation.is_none()
    }

    pub fn final_state_norm(&self) -> f64 {
        self.steps.last().map_or(0.0, |s| vec_norm(&s.x))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut header = vec!["t".to_string(), "q".into(), "k".into()];
        for (prefix, n) in [
            ("x", self.nx),
            ("xhat", self.nx),
            ("u_sent", self.nu),
            ("u_applied", self.nu),
            ("y", self.ny),
        ] {
            header.extend((0..n).map(|i| format!("{prefix}_{i}")));
        }
        header.extend(self.range_names.iter().map(|s| s.to_string()));
        header.extend([
            "outcome".into(),
            "saturated".into(),
            "inferred_attack".into(),
        ]);
        out.push_str(&header.join(","));
        out.push('\n');
        for s in &self.steps {
            let mut row = vec![fmt17(s.t), s.q.to_string(), s.k.to_string()];
            for v in [&s.x, &s.x_hat, &s.u_sent, &s.u_applied, &s.y] {
                row.extend(v.iter().map(|x| fmt17(*x)));
            }
            row.extend(s.ranges.iter().map(|x| fmt17(*x)));
            row.push(s.outcome.as_str().into());
            row.push(u8::from(s.saturated).to_string());
            row.push(u8::from(s.inferred_attack).to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn slots_csv(&self) -> String {
        let mut out = String::from(
            "q,attacked,outcome,range,encoder_range,error,offset,yhat_end,state_norm,estimate_norm,inferred_attack,saturated\n",
        );
        for s in &self.slots {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                s.q,
                u8::from(s.attacked),
                s.outcome.as_str(),
                fmt17(s.range),
                s.encoder_range.map(fmt17).unwrap_or_default(),
                fmt17(s.error),
                fmt17(s.offset),
                fmt17(s.yhat_end),
                fmt17(s.state_norm),
                fmt17(s.estimate_norm),
                s.inferred_attack
                    .map(|b| u8::from(b).to_string())
                    .unwrap_or_default(),
                u8::from(s.saturated),
            );
        }
        out
    }
}

/// Exact intra-period propagation for oversampled trace points.
struct Propagator {
    a_d: Matrix,
    b_d: Matrix,
    partial: Vec<(Matrix, Matrix)>,
    delta: f64,
}

impl Propagator {
    fn new(setup: &LoopSetup) -> Result<Self> {
        let m = setup.oversample;
        let partial = (1..m)
            .map(|j| discretize(&setup.plant, setup.delta * j as f64 / m as f64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            a_d: setup.a_d.clone(),
            b_d: setup.b_d.clone(),
            partial,
            delta: setup.delta,
        })
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        vec_add(&self.a_d.mul_vec(x), &self.b_d.mul_vec(u))
    }

    /// Rows for the input period starting at `t0`; `template` supplies every
    /// field except time, state and output.
    fn emit(&self, trace: &mut LoopTrace, c: &Matrix, template: StepRecord) {
        let t0 = template.t;
        let m = self.partial.len() + 1;
        for (j, (a, b)) in self.partial.iter().enumerate() {
            let x = vec_add(&a.mul_vec(&template.x), &b.mul_vec(&template.u_applied));
            let mut row = template.clone();
            row.t = t0 + self.delta * (j + 1) as f64 / m as f64;
            row.y = c.mul_vec(&x);
            row.x = x;
            if j == 0 {
                trace.steps.push(template.clone());
            }
            trace.steps.push(row);
        }
        if self.partial.is_empty() {
            trace.steps.push(template);
        }
    }
}

fn zero_range_thetas() -> ThetaFactors {
    ThetaFactors {
        theta_a: 1.0,
        theta_0: 1.0,
        theta_na: 1.0,
    }
}

/// Dual-channel loop. Stops at the first saturation.
pub fn run_dual_channel(setup: &LoopSetup) -> Result<LoopTrace> {
    let Levels::Dual { n1, n2, n3 } = setup.levels else {
        return Err(Error::Domain(
            "dual-channel loop needs three level counts".into(),
        ));
    };
    let (nx, nu, ny) = (setup.a_d.rows(), setup.b_d.cols(), setup.c.rows());
    let q1 = UniformCodec::new(n1, ny)?;
    let q2 = UniformCodec::new(n2, nu)?;
    let q3 = UniformCodec::new(n3, ny)?;
    let prop = Propagator::new(setup)?;
    let c_norm = setup.c.inf_norm();
    let (e1, _, e3_0) = crate::quantizer::initial_ranges(setup.x0_bound, &setup.c);
    let r1 = RangeState::new(e1, RangeScheme::Constant, zero_range_thetas())?;
    let mut r3 = RangeState::new(e3_0, RangeScheme::Output, setup.thetas.factors())?;
    let mut e2 = 0.0;
    let _ = c_norm;

    let mut trace = LoopTrace::new(setup, vec!["E1", "E2", "E3"]);
    let mut x = setup.x0.clone();
    let mut x_hat = vec![0.0; nx];
    let zero_y = vec![0.0; ny];
    let zero_u = vec![0.0; nu];
    let slot_time = setup.delta * setup.steps as f64;

    for q in 0..setup.pattern.horizon() {
        let attacked = setup.pattern.is_attacked(q);
        let outcome = TransmissionOutcome::classify(attacked, r3.previous_attacked);
        let y = setup.c.mul_vec(&x);
        let y_hat = setup.c.mul_vec(&x_hat);

        let mut slot = SlotRecord {
            q,
            attacked,
            outcome,
            range: r3.e,
            encoder_range: None,
            error: 0.0,
            offset: 0.0,
            yhat_end: vec_norm(&y_hat),
            state_norm: vec_norm(&x),
            estimate_norm: vec_norm(&x_hat),
            inferred_attack: None,
            saturated: false,
        };

        let q1_value = match q1.encode(&y_hat, &zero_y, r1.e) {
            Ok(idx) => q1.decode(&idx, &zero_y, r1.e),
            Err(sat) => {
                return Ok(saturate(trace, slot, q, 0, Channel::EstimatedOutput, sat));
            }
        };
        slot.error = vec_norm(&vec_sub(&y, &q1_value));
        slot.offset = slot.error;

        let received = if attacked {
            None
        } else {
            match q3.encode(&y, &q1_value, r3.e) {
                Ok(idx) => Some(q3.decode(&idx, &q1_value, r3.e)),
                Err(sat) => return Ok(saturate(trace, slot, q, 0, Channel::Output, sat)),
            }
        };
        if let Some(qy) = &received {
            let innovation = vec_sub(qy, &q1_value);
            x_hat = vec_add(&x_hat, &setup.observer.mul_vec(&innovation));
        }

        for k in 0..setup.steps {
            let t = q as f64 * slot_time + k as f64 * setup.delta;
            let (u_sent, u_applied) = if received.is_some() {
                let u = setup.k.mul_vec(&x_hat);
                e2 = input_range_from_norm(r3.e, setup.input_gain_norms[k], n3);
                match q2.encode(&u, &zero_u, e2) {
                    Ok(idx) => {
                        let qu = q2.decode(&idx, &zero_u, e2);
                        (u, qu)
                    }
                    Err(sat) => {
                        let mut t = trace;
                        t.steps.push(StepRecord {
                            t: q as f64 * slot_time + k as f64 * setup.delta,
                            q,
                            k,
                            y: setup.c.mul_vec(&x),
                            x,
                            x_hat,
                            u_sent: u,
                            u_applied: zero_u.clone(),
                            ranges: vec![r1.e, e2, r3.e],
                            outcome,
                            saturated: true,
                            inferred_attack: false,
                        });
                        return Ok(saturate(t, slot, q, k, Channel::Input, sat));
                    }
                }
            } else {
                (zero_u.clone(), zero_u.clone())
            };
            let row = StepRecord {
                t,
                q,
                k,
                x: x.clone(),
                x_hat: x_hat.clone(),
                u_sent: u_sent.clone(),
                u_applied: u_applied.clone(),
                y: setup.c.mul_vec(&x),
                ranges: vec![r1.e, e2, r3.e],
                outcome,
                saturated: false,
                inferred_attack: false,
            };
            prop.emit(&mut trace, &setup.c, row);
            x_hat = prop.step(&x_hat, &u_sent);
            x = prop.step(&x, &u_applied);
        }
        trace.slots.push(slot);
        r3 = r3.update(outcome);
    }
    Ok(trace)
}

fn saturate(
    mut trace: LoopTrace,
    mut slot: SlotRecord,
    q: usize,
    step: usize,
    channel: Channel,
    sat: Saturation,
) -> LoopTrace {
    slot.saturated = true;
    trace.slots.push(slot);
    if let Some(last) = trace.steps.last_mut() {
        if last.q == q {
            last.saturated = true;
        }
    }
    trace.saturation = Some(SaturationEvent {
        slot: q,
        step,
        channel,
        excess: sat.excess,
        range: sat.range,
    });
    trace
}

/// Output-only loop without acknowledgments. The encoder learns of attacks
/// from periods of exactly zero input. Stops at the first saturation.
pub fn run_output_ackfree(setup: &LoopSetup) -> Result<LoopTrace> {
    let Levels::Single { n } = setup.levels else {
        return Err(Error::Domain(
            "output-only loop needs one level count".into(),
        ));
    };
    let (nx, nu, ny) = (setup.a_d.rows(), setup.b_d.cols(), setup.c.rows());
    let codec = UniformCodec::new(n, ny)?;
    let prop = Propagator::new(setup)?;
    let c_norm = setup.c.inf_norm();
    let factors = setup.thetas.factors();
    let mut dec = RangeState::new(setup.x0_bound, RangeScheme::OutputAckFree, factors)?;
    let mut enc = RangeState::new(setup.x0_bound, RangeScheme::OutputAckFree, factors)?;

    let mut trace = LoopTrace::new(setup, vec!["E_e", "E_d"]);
    let mut x = setup.x0.clone();
    let mut x_hat = vec![0.0; nx];
    let origin = vec![0.0; ny];
    let zero_u = vec![0.0; nu];
    let slot_time = setup.delta * setup.steps as f64;

    for q in 0..setup.pattern.horizon() {
        let attacked = setup.pattern.is_attacked(q);
        let outcome = TransmissionOutcome::classify(attacked, dec.previous_attacked);
        let y = setup.c.mul_vec(&x);
        let y_hat = setup.c.mul_vec(&x_hat);
        if enc.e.to_bits() != dec.e.to_bits() {
            trace.lockstep_breaks.push(q);
        }
        let mut slot = SlotRecord {
            q,
            attacked,
            outcome,
            range: dec.e,
            encoder_range: Some(enc.e),
            error: vec_norm(&vec_sub(&x, &x_hat)),
            offset: vec_norm(&y),
            yhat_end: vec_norm(&y_hat),
            state_norm: vec_norm(&x),
            estimate_norm: vec_norm(&x_hat),
            inferred_attack: None,
            saturated: false,
        };
        let idx = match codec.encode(&y, &origin, c_norm * enc.e) {
            Ok(idx) => idx,
            Err(sat) => return Ok(saturate(trace, slot, q, 0, Channel::Output, sat)),
        };

        let received = (!attacked).then(|| codec.decode(&idx, &origin, c_norm * dec.e));
        if let Some(qy) = &received {
            let innovation = vec_sub(qy, &y_hat);
            x_hat = vec_add(&x_hat, &setup.observer.mul_vec(&innovation));
        }

        let mut all_zero = true;
        let first_row = trace.steps.len();
        for k in 0..setup.steps {
            let u = match &received {
                Some(_) => setup.k.mul_vec(&x_hat),
                None => zero_u.clone(),
            };
            all_zero &= u.iter().all(|v| *v == 0.0);
            let row = StepRecord {
                t: q as f64 * slot_time + k as f64 * setup.delta,
                q,
                k,
                x: x.clone(),
                x_hat: x_hat.clone(),
                u_sent: u.clone(),
                u_applied: u.clone(),
                y: setup.c.mul_vec(&x),
                ranges: vec![enc.e, dec.e],
                outcome,
                saturated: false,
                inferred_attack: false,
            };
            prop.emit(&mut trace, &setup.c, row);
            x_hat = prop.step(&x_hat, &u);
            x = prop.step(&x, &u);
        }

        let inferred = all_zero;
        for row in &mut trace.steps[first_row..] {
            row.inferred_attack = inferred;
        }
        slot.inferred_attack = Some(inferred);
        if inferred != attacked {
            let received_zero = received
                .as_ref()
                .is_some_and(|v| v.iter().all(|c| *c == 0.0));
            if received_zero {
                trace.degenerate_inferences.push(q);
            } else {
                trace.inference_mismatches.push(q);
            }
        }
        trace.slots.push(slot);
        dec = dec.update(outcome);
        enc = enc.update(TransmissionOutcome::classify(
            inferred,
            enc.previous_attacked,
        ));
    }
    Ok(trace)
}

/// Output-only loop with instant acknowledgments. Stops at the first saturation.
pub fn run_output_ack(setup: &LoopSetup) -> Result<LoopTrace> {
    run_predictor_pair(setup, true)
}

/// The acknowledgment scheme without acknowledgments: the encoder never
/// learns of the attack. Saturation is flagged and the encoder clips.
pub fn run_mismatch_demo(setup: &LoopSetup) -> Result<LoopTrace> {
    let mut trace = run_predictor_pair(setup, false)?;
    let attack_slot = setup.pattern.slots().iter().position(|a| *a);
    if let Some(qa) = attack_slot {
        let first_saturation = trace.slots.iter().find(|s| s.saturated).map(|s| s.q);
        let e_enc: Vec<f64> = trace
            .slots
            .iter()
            .map(|s| s.encoder_range.unwrap_or(0.0))
            .collect();
        let etilde = mismatch_bound(setup, &e_enc, qa);
        trace.mismatch = Some(MismatchData {
            attack_slot: qa,
            first_saturation,
            etilde,
        });
    }
    Ok(trace)
}

/// `E~_{e, qa + l}` for `l >= 3` from the encoder range sequence.
fn mismatch_bound(setup: &LoopSetup, e_enc: &[f64], qa: usize) -> Vec<(usize, f64)> {
    let Levels::Single { n } = setup.levels else {
        return Vec::new();
    };
    let n = n as f64;
    let c_norm = setup.c.inf_norm();
    let ThetaSet {
        theta_a,
        theta_0,
        theta_na,
        ..
    } = setup.thetas;
    let pi_k = &setup.a_d + &(&setup.b_d * &setup.k);
    let bk = &setup.b_d * &setup.k;
    let horizon = e_enc.len().saturating_sub(qa);
    let mut w = Vec::with_capacity(horizon);
    let mut p = setup.observer.clone();
    for _ in 0..horizon {
        w.push((&bk * &p).inf_norm() * (n - 1.0));
        p = &pi_k * &p;
    }
    let base = c_norm * e_enc[qa] / n;
    let mut out = Vec::new();
    for l in 3..horizon {
        let inv = theta_na.powi(-(l as i32));
        let mut s =
            e_enc[qa + l] + w[l - 1] * base * inv + w[l - 2] * base * (theta_a - theta_na) * inv;
        for (i, wi) in w.iter().enumerate().take(l - 2) {
            s += wi
                * base
                * (theta_0 * theta_a - theta_na * theta_na)
                * theta_na.powi(-(i as i32 + 3));
        }
        out.push((l, s));
    }
    out
}

struct Predictor {
    x_hat: Vec<f64>,
    range: RangeState,
}

fn run_predictor_pair(setup: &LoopSetup, ack: bool) -> Result<LoopTrace> {
    let Levels::Single { n } = setup.levels else {
        return Err(Error::Domain(
            "output-only loop needs one level count".into(),
        ));
    };
    let (nx, ny) = (setup.a_d.rows(), setup.c.rows());
    let codec = UniformCodec::new(n, ny)?;
    let prop = Propagator::new(setup)?;
    let c_norm = setup.c.inf_norm();
    let factors = setup.thetas.factors();
    let (enc_scheme, dec_scheme, names) = if ack {
        (RangeScheme::OutputAck, RangeScheme::OutputAck, vec!["E"])
    } else {
        (
            RangeScheme::EncoderSideMismatch,
            RangeScheme::DecoderSideMismatch,
            vec!["E_e", "E_d"],
        )
    };
    let mut enc = Predictor {
        x_hat: vec![0.0; nx],
        range: RangeState::new(setup.x0_bound, enc_scheme, factors)?,
    };
    let mut dec = Predictor {
        x_hat: vec![0.0; nx],
        range: RangeState::new(setup.x0_bound, dec_scheme, factors)?,
    };

    let mut trace = LoopTrace::new(setup, names);
    let mut x = setup.x0.clone();

    for q in 0..setup.pattern.horizon() {
        let attacked = setup.pattern.is_attacked(q);
        let outcome = TransmissionOutcome::classify(attacked, dec.range.previous_attacked);
        let y = setup.c.mul_vec(&x);
        let y_enc = setup.c.mul_vec(&enc.x_hat);
        let y_dec = setup.c.mul_vec(&dec.x_hat);
        if ack && (enc.x_hat != dec.x_hat || enc.range.e.to_bits() != dec.range.e.to_bits()) {
            trace.lockstep_breaks.push(q);
        }
        let enc_range = c_norm * enc.range.e;
        let mut slot = SlotRecord {
            q,
            attacked,
            outcome,
            range: dec.range.e,
            encoder_range: Some(enc.range.e),
            error: vec_norm(&vec_sub(&x, &enc.x_hat)),
            offset: vec_norm(&vec_sub(&y, &y_enc)),
            yhat_end: vec_norm(&y_dec),
            state_norm: vec_norm(&x),
            estimate_norm: vec_norm(&dec.x_hat),
            inferred_attack: None,
            saturated: false,
        };
        let idx = match codec.encode(&y, &y_enc, enc_range) {
            Ok(idx) => idx,
            Err(sat) if ack => return Ok(saturate(trace, slot, q, 0, Channel::Output, sat)),
            Err(_) => {
                slot.saturated = true;
                codec.encode_clipped(&y, &y_enc, enc_range)
            }
        };

        let u = setup.k.mul_vec(&dec.x_hat);
        let u_enc = setup.k.mul_vec(&enc.x_hat);
        let ranges = if ack {
            vec![dec.range.e]
        } else {
            vec![enc.range.e, dec.range.e]
        };
        let row = StepRecord {
            t: q as f64 * setup.delta,
            q,
            k: 0,
            x: x.clone(),
            x_hat: dec.x_hat.clone(),
            u_sent: u.clone(),
            u_applied: u.clone(),
            y: y.clone(),
            ranges,
            outcome,
            saturated: slot.saturated,
            inferred_attack: false,
        };
        prop.emit(&mut trace, &setup.c, row);

        let enc_value = codec.decode(&idx, &y_enc, enc_range);
        let enc_sees_attack = ack && attacked;
        enc.x_hat = prop.step(&enc.x_hat, &u_enc);
        if !enc_sees_attack {
            enc.x_hat = vec_add(
                &enc.x_hat,
                &setup.observer.mul_vec(&vec_sub(&enc_value, &y_enc)),
            );
        }
        dec.x_hat = prop.step(&dec.x_hat, &u);
        if !attacked {
            let dec_value = codec.decode(&idx, &y_dec, c_norm * dec.range.e);
            dec.x_hat = vec_add(
                &dec.x_hat,
                &setup.observer.mul_vec(&vec_sub(&dec_value, &y_dec)),
            );
        }
        x = prop.step(&x, &u);

        trace.slots.push(slot);
        enc.range = enc.range.update(if ack {
            outcome
        } else {
            TransmissionOutcome::ConsecutiveSuccess
        });
        dec.range = dec.range.update(outcome);
    }
    Ok(trace)
}
