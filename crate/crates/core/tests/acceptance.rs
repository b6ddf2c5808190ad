//! Acceptance suite. Prints one line per criterion and exits nonzero if any
//! criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;

use doslab::casestudy::{
    batch_reactor, batch_reactor_variant, dual_channel_config, mismatch_config,
    output_ackfree_config, reference_k, reference_m, ReferenceConstants, DUAL_RHS, DUAL_TOTALS,
    FINITE_LEVEL_LINE, INFINITE_LEVEL_LINE, OUTPUT_ONLY_RHS, OUTPUT_ONLY_THRESHOLD,
    OUTPUT_ONLY_TOTALS, OUTPUT_PERIOD,
};
use doslab::conditions::{check_dos, default_grid, tradeoff_boundary, ThetaVariant, TradeoffLine};
use doslab::controlloop::{prepare, DEADBEAT_NULL_TOL};
use doslab::discretize::{controllability_index, discretize};
use doslab::dos::SplitMix64;
use doslab::gains::{derive_decay_constants, design_deadbeat_gain, verify_nilpotent};
use doslab::matrix::{vec_norm, vec_sub};
use doslab::quantizer::UniformCodec;
use doslab::{ContinuousPlant, DiscretePlant, DoSParams, DoSPattern, GainSet, Matrix, ThetaSet};

const CLOSED_LOOP_SQUARE_TOL: f64 = 5e-2;
const NILPOTENCY_TOL: f64 = 1e-8;
const CONVERGENCE_RATIO: f64 = 1e-3;
const REFERENCE_RHS_TOL: f64 = 0.05;
const THRESHOLD_TOL: f64 = 2.0;
const COLLINEARITY_TOL: f64 = 1e-12;
const LINE_TOL: f64 = 1e-3;
const EXP_TOL: f64 = 1e-10;
const INPUT_MATRIX_TOL: f64 = 1e-8;
const CODEC_TRIALS: usize = 100_000;
const GENERATOR_SEEDS: u64 = 10_000;
const RANDOM_PAIRS: usize = 50;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn criterion_1() -> Check {
    let dp = DiscretePlant::sample(&batch_reactor(), OUTPUT_PERIOD).map_err(|e| e.to_string())?;
    ensure(
        dp.eta == 2 && dp.mu == 2,
        format!("eta = {}, mu = {}", dp.eta, dp.mu),
    )?;
    Ok(format!(
        "eta = {}, mu = {}, delta = {}",
        dp.eta, dp.mu, dp.delta
    ))
}

fn criterion_2() -> Check {
    let (k, m) = (reference_k(), reference_m());
    let residual_of = |plant: &ContinuousPlant| {
        let dp = DiscretePlant::sample(plant, OUTPUT_PERIOD).unwrap();
        let closed = &dp.a_d + &(&dp.b_d * &k);
        let residual = (&closed * &closed).inf_norm();
        let lift = dp.a_lift();
        let r = &lift * &(&Matrix::identity(4) - &(&m * &dp.c));
        (residual, r.gelfand_radius(512).unwrap().value)
    };
    let (residual, radius) = residual_of(&batch_reactor_variant());
    let (printed_residual, printed_radius) = residual_of(&batch_reactor());
    ensure(
        residual <= CLOSED_LOOP_SQUARE_TOL,
        format!("||(A_d+B_dK)^2|| = {residual:.3e}"),
    )?;
    ensure(radius < 1.0, format!("radius bound {radius:.4}"))?;
    Ok(format!(
        "||(A_d+B_dK)^2|| = {residual:.2e}, radius bound of R = {radius:.4} \
         (A[3][2] = -1.343 model: {printed_residual:.3}, {printed_radius:.4})"
    ))
}

fn random_pair(rng: &mut SplitMix64, n: usize, m: usize) -> (Matrix, Matrix) {
    let mut fill = |k: usize| {
        (0..k)
            .map(|_| rng.next_f64() * 2.0 - 1.0)
            .collect::<Vec<_>>()
    };
    (
        Matrix::new(n, n, fill(n * n)).unwrap(),
        Matrix::new(n, m, fill(n * m)).unwrap(),
    )
}

fn relative_nilpotency(a: &Matrix, b: &Matrix) -> Result<f64, String> {
    let eta = controllability_index(a, b).map_err(|e| e.to_string())?;
    let k = design_deadbeat_gain(a, b).map_err(|e| e.to_string())?;
    let scale = (a + &(b * &k)).inf_norm().max(1.0).powi(eta as i32);
    Ok(verify_nilpotent(a, b, &k, eta) / scale)
}

fn criterion_3() -> Check {
    let dp = DiscretePlant::sample(&batch_reactor(), OUTPUT_PERIOD).map_err(|e| e.to_string())?;
    let reactor = relative_nilpotency(&dp.a_d, &dp.b_d)?;
    ensure(
        reactor <= NILPOTENCY_TOL,
        format!("batch reactor residual {reactor:.3e}"),
    )?;
    let mut rng = SplitMix64::new(2024);
    let mut worst = 0.0f64;
    for n in [3, 4] {
        let mut done = 0;
        while done < RANDOM_PAIRS {
            let (a, b) = random_pair(&mut rng, n, 1 + done % 2);
            if controllability_index(&a, &b).is_err() {
                continue;
            }
            worst = worst.max(relative_nilpotency(&a, &b)?);
            done += 1;
        }
    }
    ensure(
        worst <= NILPOTENCY_TOL,
        format!("worst random residual {worst:.3e}"),
    )?;
    Ok(format!(
        "batch reactor {reactor:.2e}, worst of {} random pairs {worst:.2e}",
        2 * RANDOM_PAIRS
    ))
}

fn criterion_4() -> Check {
    let cfg = dual_channel_config();
    let prepared = prepare(&cfg).map_err(|e| e.to_string())?;
    let pattern = &prepared.setup.pattern;
    let totals = (
        pattern.frequency_count(pattern.horizon()),
        pattern.duration_count(pattern.horizon()),
    );
    ensure(totals == DUAL_TOTALS, format!("pattern totals {totals:?}"))?;
    ensure(
        pattern.validate(&cfg.params).valid,
        "pattern violates its budget",
    )?;
    let dos = prepared.report.dos;
    ensure(
        prepared.report.holds(),
        format!(
            "conditions fail: 1/nu_d = {:.4}, rhs = {:.4}",
            dos.inv_nu_d, dos.rhs
        ),
    )?;
    let trace = prepared.run().map_err(|e| e.to_string())?;
    ensure(
        trace.completed(),
        format!("saturation {:?}", trace.saturation),
    )?;
    let max_yhat = trace.slots.iter().map(|s| s.yhat_end).fold(0.0, f64::max);
    ensure(
        max_yhat <= DEADBEAT_NULL_TOL,
        format!("max |yhat| = {max_yhat:.3e}"),
    )?;
    let x0 = vec_norm(&cfg.x0);
    let ratio = trace.final_state_norm() / x0;
    ensure(
        ratio <= CONVERGENCE_RATIO,
        format!("final |x| / |x0| = {ratio:.3e}"),
    )?;
    let dominated = trace
        .slots
        .iter()
        .all(|s| s.error <= s.range * (1.0 + 1e-9));
    ensure(dominated, "E3 fails to dominate the output error")?;
    let cert = prepared.certificate.ok_or("no decay certificate")?;
    let envelope = trace
        .slots
        .iter()
        .map(|s| s.range / cert.envelope(s.q, x0))
        .fold(0.0, f64::max);
    ensure(
        envelope <= 1.0 + 1e-9,
        format!("E3 / envelope reaches {envelope:.4}"),
    )?;

    let dp = prepared.discrete.as_ref().unwrap();
    let reference = ReferenceConstants::from_lines(dp.a_lift().inf_norm(), dp.c.inf_norm());
    let reference_rhs = check_dos(&reference.finite, &cfg.params).rhs;
    ensure(
        (reference_rhs - DUAL_RHS).abs() <= REFERENCE_RHS_TOL,
        format!("reference-constant rhs {reference_rhs:.4} vs {DUAL_RHS}"),
    )?;
    Ok(format!(
        "Phi = {totals:?}, 1/nu_d = {:.4} < rhs {:.4} (reference constants {reference_rhs:.4}, expected {DUAL_RHS}), \
         max |yhat| {max_yhat:.1e}, |x_end|/|x0| {ratio:.1e}, max E3/envelope {envelope:.3}",
        dos.inv_nu_d, dos.rhs
    ))
}

fn criterion_5() -> Check {
    let cfg = output_ackfree_config();
    let prepared = prepare(&cfg).map_err(|e| e.to_string())?;
    let pattern = &prepared.setup.pattern;
    let totals = (
        pattern.frequency_count(pattern.horizon()),
        pattern.duration_count(pattern.horizon()),
    );
    ensure(
        totals == OUTPUT_ONLY_TOTALS,
        format!("pattern totals {totals:?}"),
    )?;
    ensure(prepared.report.holds(), "conditions fail")?;
    let trace = prepared.run().map_err(|e| e.to_string())?;
    ensure(
        trace.completed(),
        format!("saturation {:?}", trace.saturation),
    )?;
    let inferred_ok = trace
        .slots
        .iter()
        .all(|s| s.inferred_attack == Some(s.attacked));
    ensure(
        inferred_ok && trace.degenerate_inferences.is_empty(),
        "inferred attacks differ from the pattern",
    )?;
    let lockstep = trace
        .slots
        .iter()
        .all(|s| s.encoder_range.map(f64::to_bits) == Some(s.range.to_bits()));
    ensure(
        lockstep && trace.lockstep_breaks.is_empty(),
        "encoder and decoder ranges differ",
    )?;
    let ratio = trace.final_state_norm() / vec_norm(&cfg.x0);
    ensure(
        ratio <= CONVERGENCE_RATIO,
        format!("final |x| / |x0| = {ratio:.3e}"),
    )?;
    let dominated = trace
        .slots
        .iter()
        .all(|s| s.error <= s.range * (1.0 + 1e-9));
    ensure(dominated, "E fails to dominate the prediction error")?;
    Ok(format!(
        "Phi = {totals:?}, 1/nu_d = {:.4} < rhs {:.4}, |x_end|/|x0| {ratio:.1e}, inference exact, ranges bit-identical",
        prepared.report.dos.inv_nu_d, prepared.report.dos.rhs
    ))
}

fn criterion_6() -> Check {
    let prepared = prepare(&output_ackfree_config()).map_err(|e| e.to_string())?;
    let check = &prepared.report.levels[0];
    ensure(
        check.holds,
        format!(
            "N = {} below threshold {:.3}",
            check.levels, check.threshold
        ),
    )?;
    let dp = prepared.discrete.as_ref().unwrap();
    let c_norm = dp.c.inf_norm();
    let reference = ReferenceConstants::from_lines(dp.a_lift().inf_norm(), c_norm);
    let reference_threshold = reference.g1 * c_norm / (1.0 - reference.rho);
    ensure(
        (reference_threshold - OUTPUT_ONLY_THRESHOLD).abs() <= THRESHOLD_TOL,
        format!("reference threshold {reference_threshold:.3}"),
    )?;
    let thetas = reference.output_only(100.0, c_norm);
    let rhs = check_dos(&thetas, &output_ackfree_config().params).rhs;
    Ok(format!(
        "computed threshold {:.3} < N = {}; reference constants give {reference_threshold:.3} (expected \
         {OUTPUT_ONLY_THRESHOLD}) and rhs {rhs:.4} (expected {OUTPUT_ONLY_RHS})",
        check.threshold, check.levels
    ))
}

fn collinearity(points: &[(f64, f64)]) -> f64 {
    points
        .windows(3)
        .map(|w| {
            ((w[1].0 - w[0].0) * (w[2].1 - w[0].1) - (w[2].0 - w[0].0) * (w[1].1 - w[0].1)).abs()
        })
        .fold(0.0, f64::max)
}

fn criterion_7() -> Check {
    let dp = DiscretePlant::sample(&batch_reactor(), OUTPUT_PERIOD).map_err(|e| e.to_string())?;
    let gs = GainSet::synthesize(&dp, false).map_err(|e| e.to_string())?;
    let dc = derive_decay_constants(&gs, &dp).map_err(|e| e.to_string())?;
    let ours = ThetaSet {
        theta_a: dp.a_lift().inf_norm(),
        theta_0: dc.a0 * dc.rho,
        theta_na: dc.rho,
        variant: ThetaVariant::DualChannel,
    };
    let points = tradeoff_boundary(&ours, &default_grid(51));
    let worst = collinearity(&points);
    ensure(
        worst <= COLLINEARITY_TOL,
        format!("collinearity defect {worst:.3e}"),
    )?;
    let line = TradeoffLine::fit(points[0], points[50]);

    let reference = ReferenceConstants::from_lines(ours.theta_a, dp.c.inf_norm());
    let mut worst_line = 0.0f64;
    for (thetas, expected) in [
        (reference.infinite(), INFINITE_LEVEL_LINE),
        (reference.finite, FINITE_LEVEL_LINE),
    ] {
        let fit = {
            let pts = tradeoff_boundary(&thetas, &[0.0, 0.5]);
            TradeoffLine::fit(pts[0], pts[1])
        };
        worst_line = worst_line
            .max((fit.slope - expected.slope).abs())
            .max((fit.intercept - expected.intercept).abs());
    }
    ensure(
        worst_line <= LINE_TOL,
        format!("reference lines off by {worst_line:.3e}"),
    )?;
    Ok(format!(
        "computed line 1/nu_d = {:.4} 1/nu_f + {:.4}, defect {worst:.1e}; reference constants reproduce \
         {} / {} within {worst_line:.1e}",
        line.slope, line.intercept, INFINITE_LEVEL_LINE.slope, INFINITE_LEVEL_LINE.intercept
    ))
}

fn criterion_8() -> Check {
    let prepared = prepare(&mismatch_config()).map_err(|e| e.to_string())?;
    let trace = prepared.run().map_err(|e| e.to_string())?;
    let data = trace.mismatch.ok_or("no mismatch data")?;
    let first = data
        .first_saturation
        .ok_or("no saturation within the horizon")?;
    let span = first - data.attack_slot;
    ensure(
        span >= 3,
        format!("saturation {span} slots after the attack"),
    )?;
    ensure(
        data.increasing_through(span.max(4)),
        "bound sequence not strictly increasing before saturation",
    )?;
    Ok(format!(
        "attack at slot {}, first saturation at slot {first}, bound strictly increasing for l = 3..={}",
        data.attack_slot,
        data.increasing_extent()
    ))
}

fn criterion_9() -> Check {
    let mut rng = SplitMix64::new(9);
    let mut worst = 0.0f64;
    for (n, dim) in [(1u32, 2usize), (2, 2), (7, 3), (100, 2), (10_000, 2)] {
        let codec = UniformCodec::new(n, dim).map_err(|e| e.to_string())?;
        for _ in 0..CODEC_TRIALS {
            let range = 10f64.powf(rng.next_f64() * 6.0 - 3.0);
            let center: Vec<f64> = (0..dim).map(|_| rng.next_f64() * 20.0 - 10.0).collect();
            let v: Vec<f64> = center
                .iter()
                .map(|c| c + (rng.next_f64() * 2.0 - 1.0) * range)
                .collect();
            let idx = codec
                .encode(&v, &center, range)
                .map_err(|s| format!("{s:?}"))?;
            let err = vec_norm(&vec_sub(&codec.decode(&idx, &center, range), &v));
            worst = worst.max(err * n as f64 / range);
            if n % 2 == 0 {
                let origin = vec![0.0; dim];
                let v0: Vec<f64> = (0..dim)
                    .map(|_| (rng.next_f64() * 2.0 - 1.0) * range)
                    .collect();
                let back =
                    codec.decode(&codec.encode(&v0, &origin, range).unwrap(), &origin, range);
                ensure(
                    back.iter().all(|b| *b != 0.0),
                    format!("N = {n} decoded a zero component"),
                )?;
            }
        }
    }
    ensure(
        worst <= 1.0 + 1e-9,
        format!("error reaches {worst:.6} range/N"),
    )?;
    Ok(format!(
        "5 codecs x {CODEC_TRIALS} trials, max error {worst:.4} range/N, even grids avoid zero"
    ))
}

fn criterion_10() -> Check {
    let params = DoSParams::new(2.0, 19.0, 3.0, 18.0).map_err(|e| e.to_string())?;
    for intensity in [0.05, 0.2, 0.6] {
        for seed in 0..GENERATOR_SEEDS {
            let p =
                DoSPattern::generate(&params, 400, seed, intensity).map_err(|e| e.to_string())?;
            let v = p.validate(&params);
            ensure(
                v.valid,
                format!(
                    "seed {seed} intensity {intensity} fails at q = {:?}",
                    v.first_violation
                ),
            )?;
        }
    }
    let a = DoSPattern::generate(&params, 400, 42, 0.2).unwrap();
    ensure(
        a == DoSPattern::generate(&params, 400, 42, 0.2).unwrap(),
        "same seed, different pattern",
    )?;
    let tight = DoSParams::new(0.0, 2.0, 0.0, 1.0).unwrap();
    ensure(
        DoSPattern::generate(&tight, 200, 3, 1.0)
            .unwrap()
            .validate(&tight)
            .valid,
        "saturated budget fails",
    )?;
    Ok(format!(
        "{} patterns at 3 intensities validate on every prefix; seed 42 reproducible",
        3 * GENERATOR_SEEDS
    ))
}

fn taylor_exp(a: &Matrix, t: f64) -> Matrix {
    let at = a.scale(t);
    let mut term = Matrix::identity(a.rows());
    let mut sum = term.clone();
    for k in 1..200 {
        term = (&term * &at).scale(1.0 / k as f64);
        sum = &sum + &term;
        if term.max_abs() < 1e-20 {
            break;
        }
    }
    sum
}

fn simpson_input_matrix(a: &Matrix, b: &Matrix, delta: f64, panels: usize) -> Matrix {
    let h = delta / panels as f64;
    let mut acc = Matrix::zeros(a.rows(), a.cols());
    for i in 0..=panels {
        let w = if i == 0 || i == panels {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc = &acc + &taylor_exp(a, i as f64 * h).scale(w);
    }
    &acc.scale(h / 3.0) * b
}

fn criterion_11() -> Check {
    let mut rng = SplitMix64::new(11);
    let mut worst_exp = 0.0f64;
    for dim in 1..=6 {
        for _ in 0..40 {
            let a = Matrix::new(
                dim,
                dim,
                (0..dim * dim).map(|_| rng.next_f64() * 2.0 - 1.0).collect(),
            )
            .unwrap();
            let t = rng.next_f64() * 2.0;
            let ours = a.exp(t).map_err(|e| e.to_string())?;
            let oracle = taylor_exp(&a, t);
            worst_exp = worst_exp.max((&ours - &oracle).max_abs() / oracle.max_abs().max(1.0));
        }
    }
    ensure(worst_exp <= EXP_TOL, format!("exp error {worst_exp:.3e}"))?;

    let plant = batch_reactor();
    let delta = OUTPUT_PERIOD / 2.0;
    let (_, b_d) = discretize(&plant, delta).map_err(|e| e.to_string())?;
    let oracle = simpson_input_matrix(&plant.a, &plant.b, delta, 2000);
    let b_err = (&b_d - &oracle).max_abs();
    ensure(b_err <= INPUT_MATRIX_TOL, format!("B_d error {b_err:.3e}"))?;

    let dp = DiscretePlant::sample(&plant, OUTPUT_PERIOD).map_err(|e| e.to_string())?;
    let gs = GainSet::synthesize(&dp, false).map_err(|e| e.to_string())?;
    let dc = derive_decay_constants(&gs, &dp).map_err(|e| e.to_string())?;
    let lift_m = &dp.a_lift() * &gs.m;
    let mut p = Matrix::identity(4);
    let checked = 4 * dc.max_power_used;
    for l in 0..=checked {
        let bound = dc.rho.powi(l as i32) * (1.0 + 1e-9);
        if l > 0 {
            ensure(
                p.inf_norm() <= dc.a0 * bound,
                format!("||R^{l}|| exceeds a0 rho^{l}"),
            )?;
        }
        ensure(
            (&p * &lift_m).inf_norm() <= dc.a1 * bound,
            format!("a1 bound fails at {l}"),
        )?;
        p = &p * &gs.r;
    }
    Ok(format!(
        "exp error {worst_exp:.1e}, B_d error {b_err:.1e}, decay bounds hold for l <= {checked} \
         (scan horizon {})",
        dc.max_power_used
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("sampling indices", criterion_1),
        ("reference gains", criterion_2),
        ("deadbeat synthesis", criterion_3),
        ("dual-channel run", criterion_4),
        ("output-only run without acknowledgments", criterion_5),
        ("level threshold", criterion_6),
        ("trade-off line", criterion_7),
        ("encoder/decoder mismatch", criterion_8),
        ("codec properties", criterion_9),
        ("attack generator closure", criterion_10),
        ("numerics", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
