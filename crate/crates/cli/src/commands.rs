use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use doslab::conditions::{fmt17, tradeoff_boundary, TradeoffLine};
use doslab::controlloop::{prepare, GainSource, LoopTrace, Prepared, Scenario};
use doslab::matrix::vec_norm;

use crate::error::CliError;
use crate::scenario::{self, LineSpec, Loaded};
use crate::svg::{Chart, Series};

/// Relative nilpotency residual above which supplied gains are rejected.
pub const GAIN_VERIFY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    ConditionFailed,
    Saturated,
}

impl Status {
    pub fn exit_code(self) -> ExitCode {
        ExitCode::from(match self {
            Self::Ok => 0,
            Self::ConditionFailed => 3,
            Self::Saturated => 4,
        })
    }
}

pub struct Options {
    pub scenario: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub no_plots: bool,
}

fn output_dir(opts: &Options, loaded: &Loaded) -> Result<PathBuf, CliError> {
    let dir = opts
        .out
        .clone()
        .unwrap_or_else(|| Path::new("out").join(&loaded.file.name));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn prepare_checked(loaded: &Loaded) -> Result<Prepared, CliError> {
    let prepared = prepare(&loaded.config)?;
    if let (GainSource::Given { .. }, Some(dp)) = (&loaded.config.gains, &prepared.discrete) {
        let scale = (&dp.a_d + &(&dp.b_d * &prepared.setup.k))
            .inf_norm()
            .max(1.0)
            .powi(dp.eta as i32);
        let residual = prepared.controller_residual / scale;
        if residual > GAIN_VERIFY_TOL {
            return Err(CliError::Numerical(format!(
                "supplied K is not deadbeat: ||(A_d + B_d K)^{}|| = {:.3e} (relative {residual:.3e} > {GAIN_VERIFY_TOL:e})",
                dp.eta, prepared.controller_residual
            )));
        }
    }
    Ok(prepared)
}

fn report_text(loaded: &Loaded, prepared: &Prepared) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "scenario: {} ({})",
        loaded.file.name,
        loaded.config.scenario.as_str()
    );
    let gains = if prepared.gains_synthesized {
        "synthesized"
    } else {
        "supplied, verified"
    };
    let _ = writeln!(s, "gains: {gains}");
    s.push_str(&prepared.report.to_text());
    match &prepared.certificate {
        Some(c) => {
            let _ = writeln!(
                s,
                "certificate: omega1 = {:.6}, gamma = {:.6}, sigma = {:.6}",
                c.omega1, c.gamma, c.sigma
            );
            if let Some(o2) = c.omega2 {
                let _ = writeln!(s, "  omega2 = {o2:.6}");
            }
        }
        None => {
            let _ = writeln!(s, "certificate: unavailable");
        }
    }
    s
}

pub fn check(opts: &Options) -> Result<Status, CliError> {
    let loaded = scenario::load(&opts.scenario, opts.seed)?;
    let prepared = prepare_checked(&loaded)?;
    print!("{}", report_text(&loaded, &prepared));
    Ok(if prepared.report.holds() {
        Status::Ok
    } else {
        Status::ConditionFailed
    })
}

pub fn run(opts: &Options) -> Result<Status, CliError> {
    let loaded = scenario::load(&opts.scenario, opts.seed)?;
    let prepared = prepare_checked(&loaded)?;
    let trace = prepared.run()?;
    let dir = output_dir(opts, &loaded)?;

    fs::write(dir.join("trace.csv"), trace.to_csv())?;
    fs::write(dir.join("slots.csv"), trace.slots_csv())?;
    fs::write(
        dir.join("pattern.csv"),
        prepared.setup.pattern.to_csv(&loaded.pattern_note),
    )?;
    fs::write(dir.join("conditions.csv"), prepared.report.to_csv())?;
    let mut report = report_text(&loaded, &prepared);
    report.push_str(&run_summary(&prepared, &trace));
    fs::write(dir.join("report.txt"), &report)?;
    if let Some(data) = &trace.mismatch {
        fs::write(dir.join("mismatch.csv"), mismatch_csv(&trace, data))?;
    }
    if loaded.file.plots && !opts.no_plots {
        write_run_plots(&dir, &trace)?;
    }
    print!("{report}");
    println!("outputs: {}", dir.display());

    let demo = loaded.config.scenario == Scenario::MismatchDemo;
    Ok(if trace.saturation.is_some() && !demo {
        Status::Saturated
    } else if !prepared.report.holds() && !demo {
        Status::ConditionFailed
    } else {
        Status::Ok
    })
}

fn run_summary(prepared: &Prepared, trace: &LoopTrace) -> String {
    let mut s = String::new();
    let pattern = &prepared.setup.pattern;
    let h = pattern.horizon();
    let _ = writeln!(
        s,
        "attacks: Phi_f = {}, Phi_d = {} over {h} slots, budget {}",
        pattern.frequency_count(h),
        pattern.duration_count(h),
        if pattern.validate(&prepared.params).valid {
            "respected"
        } else {
            "exceeded"
        }
    );
    let _ = writeln!(s, "slots simulated: {}", trace.slots.len());
    let x0 = vec_norm(&prepared.setup.x0);
    let _ = writeln!(
        s,
        "final |x| = {:.6e} (initial {x0:.6e})",
        trace.final_state_norm()
    );
    match &trace.saturation {
        Some(e) => {
            let _ = writeln!(
                s,
                "saturation: slot {} step {} on {:?} channel, offset exceeds range {:.6e} by {:.6e}",
                e.slot, e.step, e.channel, e.range, e.excess
            );
        }
        None => {
            let _ = writeln!(s, "saturation: none");
        }
    }
    if !trace.inference_mismatches.is_empty() {
        let _ = writeln!(
            s,
            "attack inference disagreed at slots {:?}",
            trace.inference_mismatches
        );
    }
    if !trace.degenerate_inferences.is_empty() {
        let _ = writeln!(
            s,
            "zero input from a zero received value at slots {:?}",
            trace.degenerate_inferences
        );
    }
    if !trace.lockstep_breaks.is_empty() {
        let _ = writeln!(
            s,
            "encoder and decoder diverged at slots {:?}",
            trace.lockstep_breaks
        );
    }
    if let Some(m) = &trace.mismatch {
        let _ = writeln!(
            s,
            "mismatch: attack at slot {}, first saturation {}, bound increasing for l = 3..={}",
            m.attack_slot,
            m.first_saturation
                .map_or("none".to_string(), |q| format!("at slot {q}")),
            m.increasing_extent()
        );
    }
    s
}

fn mismatch_csv(trace: &LoopTrace, data: &doslab::controlloop::MismatchData) -> String {
    let mut s = String::from("l,q,bound,error\n");
    for &(l, bound) in &data.etilde {
        let q = data.attack_slot + l;
        let error = trace.slots.get(q).map_or(f64::NAN, |r| r.error);
        let _ = writeln!(s, "{l},{q},{},{}", fmt17(bound), fmt17(error));
    }
    s
}

fn write_run_plots(dir: &Path, trace: &LoopTrace) -> Result<(), CliError> {
    let mut state = Chart::new("State and estimate", "t", "max-norm", true);
    state.series.push(Series::line(
        "|x|",
        trace.steps.iter().map(|s| (s.t, vec_norm(&s.x))).collect(),
    ));
    state.series.push(Series::line(
        "|x_hat|",
        trace
            .steps
            .iter()
            .map(|s| (s.t, vec_norm(&s.x_hat)))
            .collect(),
    ));
    fs::write(dir.join("state.svg"), state.render())?;

    let mut ranges = Chart::new("Quantizer range and error", "slot", "value", true);
    ranges.series.push(Series::line(
        "range",
        trace.slots.iter().map(|s| (s.q as f64, s.range)).collect(),
    ));
    if trace
        .slots
        .iter()
        .any(|s| s.encoder_range.is_some_and(|e| e != s.range))
    {
        let enc = trace
            .slots
            .iter()
            .filter_map(|s| s.encoder_range.map(|e| (s.q as f64, e)))
            .collect();
        ranges.series.push(Series {
            dashed: true,
            ..Series::line("encoder range", enc)
        });
    }
    ranges.series.push(Series::line(
        "error",
        trace.slots.iter().map(|s| (s.q as f64, s.error)).collect(),
    ));
    if let Some(m) = &trace.mismatch {
        let bound = m
            .etilde
            .iter()
            .map(|(l, b)| ((m.attack_slot + l) as f64, *b))
            .collect();
        ranges.series.push(Series {
            dashed: true,
            ..Series::line("mismatch bound", bound)
        });
    }
    fs::write(dir.join("ranges.svg"), ranges.render())?;

    let mut input = Chart::new("Applied input", "t", "u", false);
    for i in 0..trace.nu {
        let pts = trace.steps.iter().map(|s| (s.t, s.u_applied[i])).collect();
        input.series.push(Series {
            step: true,
            ..Series::line(format!("u_{i}"), pts)
        });
    }
    fs::write(dir.join("input.svg"), input.render())?;
    Ok(())
}

pub fn tradeoff(opts: &Options) -> Result<Status, CliError> {
    let loaded = scenario::load(&opts.scenario, opts.seed)?;
    let prepared = prepare_checked(&loaded)?;
    let dir = output_dir(opts, &loaded)?;
    let n = loaded.file.tradeoff_points;
    let grid: Vec<f64> = (0..n).map(|i| 0.5 * i as f64 / (n - 1) as f64).collect();
    let finite_thetas = prepared.report.thetas;
    let limit_thetas = prepared.unquantized_thetas();
    let finite = tradeoff_boundary(&finite_thetas, &grid);
    let limit = tradeoff_boundary(&limit_thetas, &grid);

    let mut csv = String::from("inv_nu_f,inv_nu_d_finite,inv_nu_d_infinite\n");
    for (f, l) in finite.iter().zip(&limit) {
        let _ = writeln!(csv, "{},{},{}", fmt17(f.0), fmt17(f.1), fmt17(l.1));
    }
    fs::write(dir.join("tradeoff.csv"), &csv)?;

    let lines = [
        (
            "finite levels",
            TradeoffLine::of(&finite_thetas),
            loaded.file.reference_lines.and_then(|r| r.finite),
        ),
        (
            "infinite levels",
            TradeoffLine::of(&limit_thetas),
            loaded.file.reference_lines.and_then(|r| r.infinite),
        ),
    ];
    let mut text = String::new();
    for (name, line, reference) in &lines {
        let _ = write!(
            text,
            "{name}: 1/nu_d = {:.4} * 1/nu_f + {:.4}",
            line.slope, line.intercept
        );
        if let Some(LineSpec { slope, intercept }) = reference {
            let _ = write!(text, " (reference {slope:.4} * 1/nu_f + {intercept:.4})");
        }
        text.push('\n');
    }
    fs::write(dir.join("tradeoff.txt"), &text)?;

    if loaded.file.plots && !opts.no_plots {
        let mut chart = Chart::new("Admissible attack budget", "1/nu_f", "max 1/nu_d", false);
        chart
            .series
            .push(Series::line("finite levels", finite.clone()));
        chart
            .series
            .push(Series::line("infinite levels", limit.clone()));
        for (name, _, reference) in &lines {
            if let Some(r) = reference {
                let pts = grid
                    .iter()
                    .map(|x| (*x, r.slope * x + r.intercept))
                    .collect();
                chart.series.push(Series {
                    dashed: true,
                    ..Series::line(format!("reference, {name}"), pts)
                });
            }
        }
        fs::write(dir.join("tradeoff.svg"), chart.render())?;
    }
    print!("{text}");
    println!("outputs: {}", dir.display());
    Ok(Status::Ok)
}
