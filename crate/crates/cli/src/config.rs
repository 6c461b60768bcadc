//! Experiment configuration: one JSON document per run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkforge_core::decomposition::{CovarianceOptions, LawEqualityOptions, SmallnessOptions};
use walkforge_core::network::{CalibrationOptions, Window};
use walkforge_core::schedule::{DeskRatios, Mode, ScheduleError};
use walkforge_core::{LatticePoint, ParameterSchedule};

use crate::error::CliError;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub offsets: OffsetSpec,
    /// Calibrate every `K_n` left unset before the experiment runs.
    #[serde(default)]
    pub calibrate: bool,
    pub experiment: Experiment,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    Desk {
        levels: usize,
        #[serde(default)]
        ratios: RatioSpec,
        #[serde(default)]
        k: Vec<Option<f64>>,
    },
    Explicit {
        mode: Mode,
        a: Vec<u64>,
        b: Vec<u64>,
        beta: Vec<u64>,
        /// Defaults to `b_n^{-(1 + 1/n)}` per level.
        #[serde(default)]
        eta: Option<Vec<f64>>,
        #[serde(default)]
        k: Vec<Option<f64>>,
    },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioSpec {
    #[default]
    Default,
    Excursion,
    Custom(DeskRatios),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OffsetSpec {
    /// Drawn from the `offsets` substream of the master seed.
    #[default]
    Sampled,
    Zero,
    Explicit(Vec<LatticePoint>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    ValidateSchedule,
    BuildEnv {
        level: usize,
        #[serde(default)]
        write_tile: bool,
    },
    Calibrate {
        /// All levels when absent.
        #[serde(default)]
        level: Option<usize>,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
        #[serde(default = "default_lo")]
        lo: f64,
        #[serde(default = "default_hi")]
        hi: f64,
    },
    Simulate {
        level: usize,
        #[serde(default)]
        start: LatticePoint,
        horizon: f64,
        walkers: u64,
        #[serde(default)]
        write_paths: bool,
    },
    Decompose {
        level: usize,
        #[serde(default)]
        start: LatticePoint,
        horizon: f64,
        walkers: u64,
    },
    LawEquality {
        level: usize,
        #[serde(flatten)]
        options: LawEqualityOptions,
        /// Repetitions of the `eta = K = 1` control; skipped when zero.
        #[serde(default)]
        control_repetitions: u64,
    },
    Smallness {
        level: usize,
        #[serde(flatten)]
        options: SmallnessOptions,
    },
    CovarianceDecay {
        level: usize,
        #[serde(flatten)]
        options: CovarianceOptions,
    },
    Resistance {
        level: usize,
        window: Window,
    },
    CommuteCheck {
        #[serde(default = "default_suite_count")]
        count: usize,
        #[serde(default = "default_suite_vertices")]
        max_vertices: usize,
    },
    Harnack {
        level: usize,
        window: Window,
        /// Sites closer than this to the window boundary are excluded.
        margin: i64,
    },
    HeatKernel {
        level: usize,
        a: f64,
        times: Vec<f64>,
        points: Vec<[f64; 2]>,
        samples: u64,
        #[serde(default)]
        smoothing: Option<i64>,
        #[serde(default = "default_ci_z")]
        ci_z: f64,
    },
    Fclt {
        level: usize,
        a: f64,
        times: Vec<f64>,
        walkers: u64,
        #[serde(default)]
        start: LatticePoint,
        #[serde(default)]
        reference_diffusivity: Option<f64>,
        #[serde(default)]
        lattice_spacing: Option<f64>,
        #[serde(default = "default_ci_z")]
        ci_z: f64,
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
}

fn default_tolerance() -> f64 {
    CalibrationOptions::default().tolerance
}
fn default_lo() -> f64 {
    CalibrationOptions::default().lo
}
fn default_hi() -> f64 {
    CalibrationOptions::default().hi
}
fn default_suite_count() -> usize {
    100
}
fn default_suite_vertices() -> usize {
    50
}
fn default_ci_z() -> f64 {
    3.0
}
fn default_alpha() -> f64 {
    0.01
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::ValidateSchedule => "validate-schedule",
            Experiment::BuildEnv { .. } => "build-env",
            Experiment::Calibrate { .. } => "calibrate",
            Experiment::Simulate { .. } => "simulate",
            Experiment::Decompose { .. } => "decompose",
            Experiment::LawEquality { .. } => "law-equality",
            Experiment::Smallness { .. } => "smallness",
            Experiment::CovarianceDecay { .. } => "covariance-decay",
            Experiment::Resistance { .. } => "resistance",
            Experiment::CommuteCheck { .. } => "commute-check",
            Experiment::Harnack { .. } => "harnack",
            Experiment::HeatKernel { .. } => "heat-kernel",
            Experiment::Fclt { .. } => "fclt",
        }
    }

    /// Environment level the experiment queries, if any.
    pub fn level(&self) -> Option<usize> {
        match *self {
            Experiment::ValidateSchedule | Experiment::CommuteCheck { .. } => None,
            Experiment::Calibrate { level, .. } => level,
            Experiment::BuildEnv { level, .. }
            | Experiment::Simulate { level, .. }
            | Experiment::Decompose { level, .. }
            | Experiment::LawEquality { level, .. }
            | Experiment::Smallness { level, .. }
            | Experiment::CovarianceDecay { level, .. }
            | Experiment::Resistance { level, .. }
            | Experiment::Harnack { level, .. }
            | Experiment::HeatKernel { level, .. }
            | Experiment::Fclt { level, .. } => Some(level),
        }
    }

    fn needs_schedule(&self) -> bool {
        !matches!(self, Experiment::CommuteCheck { .. })
    }
}

/// A parsed config together with the hash of its canonical form.
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

/// Parses and validates a config document. The hash covers the canonical
/// (key-sorted, compact) JSON of everything except `output_dir`.
pub fn load(text: &str) -> Result<LoadedConfig, CliError> {
    let mut value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("not valid JSON: {e}")))?;
    let config: ExperimentConfig =
        serde_json::from_value(value.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    if config.schema_version != CONFIG_SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "config schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
            config.schema_version
        )));
    }
    if let Some(map) = value.as_object_mut() {
        map.remove("output_dir");
    }
    let canonical = serde_json::to_string(&value).expect("a JSON value serialises");
    let hash = format!("{:x}", Sha256::digest(canonical.as_bytes()));
    validate(&config)?;
    Ok(LoadedConfig { config, hash })
}

fn validate(config: &ExperimentConfig) -> Result<(), CliError> {
    let exp = &config.experiment;
    if exp.needs_schedule() && config.schedule.is_none() {
        return Err(CliError::Config(format!(
            "experiment {} needs a schedule",
            exp.kind()
        )));
    }
    let positive = |name: &str, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "{name} must be positive and finite, got {v}"
            )))
        }
    };
    let nonempty = |name: &str, v: &[f64]| {
        if v.is_empty() || v.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            Err(CliError::Config(format!(
                "{name} must be a non-empty list of positive times"
            )))
        } else {
            Ok(())
        }
    };
    match exp {
        Experiment::Simulate {
            horizon, walkers, ..
        }
        | Experiment::Decompose {
            horizon, walkers, ..
        } => {
            positive("horizon", *horizon)?;
            if *walkers == 0 {
                return Err(CliError::Config("walkers must be at least 1".into()));
            }
        }
        Experiment::Calibrate {
            tolerance, lo, hi, ..
        } => {
            positive("tolerance", *tolerance)?;
            positive("lo", *lo)?;
            if !(hi > lo) {
                return Err(CliError::Config("hi must exceed lo".into()));
            }
        }
        Experiment::HeatKernel {
            a, times, points, ..
        } => {
            positive("a", *a)?;
            nonempty("times", times)?;
            if points.is_empty() {
                return Err(CliError::Config("points must be non-empty".into()));
            }
        }
        Experiment::Fclt {
            a, times, walkers, ..
        } => {
            positive("a", *a)?;
            nonempty("times", times)?;
            if *walkers < 2 {
                return Err(CliError::Config("walkers must be at least 2".into()));
            }
        }
        Experiment::LawEquality { options, .. } => {
            nonempty("times", &options.times)?;
            positive("horizon", options.horizon)?;
        }
        Experiment::CommuteCheck {
            count,
            max_vertices,
        } => {
            if *count == 0 || *max_vertices < 2 {
                return Err(CliError::Config(
                    "the suite needs count >= 1 and max_vertices >= 2".into(),
                ));
            }
        }
        Experiment::Harnack { margin, .. } if *margin < 1 => {
            return Err(CliError::Config("margin must be at least 1".into()));
        }
        _ => {}
    }
    Ok(())
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<ParameterSchedule, ScheduleError> {
        let (mut schedule, k) = match self {
            ScheduleSpec::Desk { levels, ratios, k } => {
                let ratios = match ratios {
                    RatioSpec::Default => DeskRatios::DEFAULT,
                    RatioSpec::Excursion => DeskRatios::EXCURSION,
                    RatioSpec::Custom(r) => *r,
                };
                (ParameterSchedule::desk_with(*levels, ratios)?, k)
            }
            ScheduleSpec::Explicit {
                mode,
                a,
                b,
                beta,
                eta,
                k,
            } => {
                let mut s = ParameterSchedule::new(*mode, a.clone(), b.clone(), beta.clone())?;
                if let Some(eta) = eta {
                    if eta.len() != s.levels() {
                        return Err(ScheduleError::Structure(format!(
                            "{} eta values for {} levels",
                            eta.len(),
                            s.levels()
                        )));
                    }
                    s.eta = eta.clone();
                }
                (s, k)
            }
        };
        if k.len() > schedule.levels() {
            return Err(ScheduleError::Structure(format!(
                "{} K values for {} levels",
                k.len(),
                schedule.levels()
            )));
        }
        for (i, v) in k.iter().enumerate() {
            if let Some(v) = v {
                schedule.set_k(i + 1, *v);
            }
        }
        Ok(schedule)
    }
}
