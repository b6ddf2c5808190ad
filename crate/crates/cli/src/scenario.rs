//! Scenario files: JSON documents describing one simulation.

use std::fs;
use std::path::{Path, PathBuf};

use doslab::controlloop::{DosSource, GainSource, Levels, Scenario, SimConfig};
use doslab::{ContinuousPlant, DoSParams, DoSPattern, Matrix};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    pub scenario: Scenario,
    pub plant: PlantSpec,
    pub big_delta: f64,
    pub x0: Vec<f64>,
    /// Defaults to `|x0|`.
    #[serde(default)]
    pub x0_bound: Option<f64>,
    #[serde(default)]
    pub gains: GainsSpec,
    pub levels: LevelsSpec,
    #[serde(default)]
    pub dos: DosSpec,
    pub horizon_slots: usize,
    #[serde(default = "default_oversample")]
    pub oversample: usize,
    #[serde(default = "default_true")]
    pub plots: bool,
    #[serde(default = "default_grid_points")]
    pub tradeoff_points: usize,
    /// Lines printed next to the computed trade-off boundaries.
    #[serde(default)]
    pub reference_lines: Option<ReferenceLines>,
}

fn default_oversample() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_grid_points() -> usize {
    51
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    pub mode: GainMode,
    /// Required in `verify` mode, rejected otherwise.
    #[serde(default)]
    pub k: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub m: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    #[default]
    Synthesize,
    SynthesizeDeadbeatObserver,
    /// Supplied gains, checked before use.
    Verify,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum LevelsSpec {
    Dual { n1: u32, n2: u32, n3: u32 },
    Single { n: u32 },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DosSpec {
    /// Attack budget; omitted means no attacks.
    #[serde(default)]
    pub params: Option<DoSParams>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub intensity: Option<f64>,
    #[serde(default)]
    pub attacked_slots: Option<Vec<usize>>,
    /// Pattern CSV, relative to the scenario file.
    #[serde(default)]
    pub pattern_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceLines {
    #[serde(default)]
    pub finite: Option<LineSpec>,
    #[serde(default)]
    pub infinite: Option<LineSpec>,
}

/// A parsed scenario with its resolved configuration.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub file: ScenarioFile,
    pub config: SimConfig,
    /// Provenance of the attack pattern, written into the pattern CSV header.
    pub pattern_note: String,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Matrix, CliError> {
    Matrix::from_rows(rows).map_err(|e| CliError::Config(format!("plant.{name}: {e}")))
}

pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Loaded, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let file: ScenarioFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    resolve(file, base, seed_override)
}

pub fn resolve(
    file: ScenarioFile,
    base: &Path,
    seed_override: Option<u64>,
) -> Result<Loaded, CliError> {
    if file.name.is_empty() || file.name.contains(['/', '\\']) {
        return Err(CliError::Config(format!(
            "name {:?} is not a plain identifier",
            file.name
        )));
    }
    if file.tradeoff_points < 2 {
        return Err(CliError::Config(
            "tradeoff_points must be at least 2".into(),
        ));
    }
    let plant = ContinuousPlant::new(
        matrix("a", &file.plant.a)?,
        matrix("b", &file.plant.b)?,
        matrix("c", &file.plant.c)?,
    )
    .map_err(|e| CliError::Config(format!("plant: {e}")))?;
    if !(file.big_delta > 0.0 && file.big_delta.is_finite()) {
        return Err(CliError::Config(format!(
            "big_delta must be positive, got {}",
            file.big_delta
        )));
    }
    let gains = match (file.gains.mode, &file.gains.k, &file.gains.m) {
        (GainMode::Verify, Some(k), Some(m)) => GainSource::Given {
            k: Matrix::from_rows(k).map_err(|e| CliError::Config(format!("gains.k: {e}")))?,
            m: Matrix::from_rows(m).map_err(|e| CliError::Config(format!("gains.m: {e}")))?,
        },
        (GainMode::Verify, _, _) => {
            return Err(CliError::Config("gains: verify mode needs k and m".into()))
        }
        (_, None, None) => GainSource::Synthesize {
            deadbeat_observer: file.gains.mode == GainMode::SynthesizeDeadbeatObserver,
        },
        _ => {
            return Err(CliError::Config(
                "gains: k and m are only read in verify mode".into(),
            ))
        }
    };
    let levels = match file.levels {
        LevelsSpec::Dual { n1, n2, n3 } => Levels::Dual { n1, n2, n3 },
        LevelsSpec::Single { n } => Levels::Single { n },
    };
    let (params, dos, pattern_note) = resolve_dos(&file, base, seed_override)?;
    let x0_bound = file
        .x0_bound
        .unwrap_or_else(|| doslab::matrix::vec_norm(&file.x0));
    let config = SimConfig {
        scenario: file.scenario,
        plant,
        big_delta: file.big_delta,
        x0: file.x0.clone(),
        x0_bound,
        gains,
        levels,
        params,
        dos,
        horizon_slots: file.horizon_slots,
        oversample: file.oversample,
        thetas_override: None,
    };
    Ok(Loaded {
        file,
        config,
        pattern_note,
    })
}

fn resolve_dos(
    file: &ScenarioFile,
    base: &Path,
    seed_override: Option<u64>,
) -> Result<(DoSParams, DosSource, String), CliError> {
    let spec = &file.dos;
    let params = spec.params.unwrap_or_else(DoSParams::attack_free);
    params
        .validate()
        .map_err(|e| CliError::Config(format!("dos.params: {e}")))?;
    let budget = format!(
        "kappa_f={} nu_f={} kappa_d={} nu_d={}",
        params.kappa_f, params.nu_f, params.kappa_d, params.nu_d
    );
    let random = spec.seed.is_some() || spec.intensity.is_some();
    let sources = usize::from(random)
        + usize::from(spec.attacked_slots.is_some())
        + usize::from(spec.pattern_file.is_some());
    if sources > 1 {
        return Err(CliError::Config(
            "dos: give one of seed/intensity, attacked_slots or pattern_file".into(),
        ));
    }
    if seed_override.is_some() && !random {
        return Err(CliError::Config(
            "--seed needs a scenario with a random attack pattern".into(),
        ));
    }
    if random {
        let seed = seed_override.or(spec.seed).unwrap_or(0);
        let intensity = spec
            .intensity
            .ok_or_else(|| CliError::Config("dos: seed given without intensity".into()))?;
        let note = format!("{budget}\nseed={seed} intensity={intensity}");
        return Ok((params, DosSource::Random { seed, intensity }, note));
    }
    if let Some(slots) = &spec.attacked_slots {
        if let Some(q) = slots.iter().find(|q| **q >= file.horizon_slots) {
            return Err(CliError::Config(format!(
                "attacked slot {q} is past the horizon"
            )));
        }
        let pattern = DoSPattern::with_attacks(file.horizon_slots, slots);
        return Ok((
            params,
            DosSource::Pattern(pattern),
            format!("{budget}\nattacked slots {slots:?}"),
        ));
    }
    if let Some(rel) = &spec.pattern_file {
        let path = base.join(rel);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let pattern = DoSPattern::from_csv(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        return Ok((
            params,
            DosSource::Pattern(pattern),
            format!("{budget}\nfrom {}", rel.display()),
        ));
    }
    Ok((
        params,
        DosSource::Pattern(DoSPattern::clear(file.horizon_slots)),
        format!("{budget}\nno attacks"),
    ))
}
