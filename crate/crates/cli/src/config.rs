//! Experiment configuration: a strict JSON schema (unknown keys are errors)
//! merged with command-line overrides into a fully resolved, echoable form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mkv_core::controls::PolicyFile;
use mkv_core::measures::EmpiricalMeasure;
use mkv_core::objective::{CemConfig, FamilyFile};
use mkv_core::simulate::{InitialLaw, TimeGrid};

/// A model reference: a builtin name or a JSON model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Builtin(String),
    File { file: PathBuf },
}

/// A policy reference: a file path or an inline policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyRef {
    File { file: PathBuf },
    Inline(PolicyFile),
}

/// A family reference: a file path or an inline family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FamilyRef {
    File { file: PathBuf },
    Inline(FamilyFile),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub s: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl GridConfig {
    pub fn to_grid(self) -> mkv_core::Result<TimeGrid> {
        TimeGrid::new(self.s, self.t_end, self.steps)
    }
}

/// Check-specific parameters for the `verify` subcommand.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum CheckSpec {
    Stability {
        mu: InitialLaw,
        mu_tilde: InitialLaw,
    },
    Moment {
        init: InitialLaw,
    },
    TightnessModulus {
        init: InitialLaw,
    },
    ValueContinuity {
        base_s: f64,
        base_init: InitialLaw,
        perturbations: Vec<(f64, InitialLaw)>,
        #[serde(default = "default_c_max")]
        c_max: f64,
    },
    LawInvariance {
        mu: EmpiricalMeasure,
        seed_b: u64,
    },
    ChaosConvergence {
        init: InitialLaw,
        schedule: Vec<usize>,
    },
    FlowProperty {
        init: InitialLaw,
        t_mid: f64,
    },
}

fn default_c_max() -> f64 {
    10.0
}

impl CheckSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CheckSpec::Stability { .. } => "stability",
            CheckSpec::Moment { .. } => "moment",
            CheckSpec::TightnessModulus { .. } => "tightness_modulus",
            CheckSpec::ValueContinuity { .. } => "value_continuity",
            CheckSpec::LawInvariance { .. } => "law_invariance",
            CheckSpec::ChaosConvergence { .. } => "chaos_convergence",
            CheckSpec::FlowProperty { .. } => "flow_property",
        }
    }
}

/// The full experiment configuration. Every field is optional here; defaults
/// are filled during resolution and echoed back in the output.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub subcommand: Option<String>,
    pub model: Option<ModelRef>,
    pub policy: Option<PolicyRef>,
    pub family: Option<FamilyRef>,
    pub init: Option<InitialLaw>,
    pub grid: Option<GridConfig>,
    pub particles: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub csv_out: Option<PathBuf>,
    pub bin_out: Option<PathBuf>,
    pub cem: Option<CemConfig>,
    pub check: Option<CheckSpec>,
    pub threads: Option<usize>,
}

const SUBCOMMANDS: &[&str] = &[
    "list-models",
    "simulate",
    "cost",
    "optimize",
    "verify",
    "validate",
];

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| format!("config {}: {e}", path.display()))
    }

    /// Full schema validation without execution; returns every violation.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();
        if let Some(sub) = &self.subcommand {
            if !SUBCOMMANDS.contains(&sub.as_str()) {
                violations.push(format!(
                    "subcommand: unknown value '{sub}', expected one of {SUBCOMMANDS:?}"
                ));
            }
        }
        if let Some(grid) = &self.grid {
            if grid.steps == 0 {
                violations.push("grid.steps: steps >= 1".into());
            }
            if grid.s.is_nan() || grid.s < 0.0 {
                violations.push(format!("grid.s: must be >= 0, got {}", grid.s));
            }
            if grid.t_end.is_nan() || grid.t_end <= grid.s {
                violations.push(format!(
                    "grid.t_end: must exceed grid.s, got {} <= {}",
                    grid.t_end, grid.s
                ));
            }
        }
        if let Some(p) = self.particles {
            if p < 2 {
                violations.push(format!("particles: must be >= 2, got {p}"));
            }
        }
        if let Some(cem) = &self.cem {
            if cem.population < 4 {
                violations.push(format!(
                    "cem.population: must be >= 4, got {}",
                    cem.population
                ));
            }
            if cem.elite_frac.is_nan() || cem.elite_frac <= 0.0 || cem.elite_frac >= 1.0 {
                violations.push(format!(
                    "cem.elite_frac: must lie in (0, 1), got {}",
                    cem.elite_frac
                ));
            }
            if cem.generations == 0 {
                violations.push("cem.generations: must be >= 1".into());
            }
        }
        if let Some(threads) = self.threads {
            if threads == 0 {
                violations.push("threads: must be >= 1".into());
            }
        }
        if let Some(ModelRef::File { file }) = &self.model {
            if !file.exists() {
                violations.push(format!("model.file: {} does not exist", file.display()));
            } else if let Err(e) = std::fs::read_to_string(file)
                .map_err(|e| e.to_string())
                .and_then(|text| {
                    mkv_core::model::JsonModel::from_json(&text)
                        .and_then(|m| m.compile())
                        .map_err(|e| e.to_string())
                })
            {
                violations.push(format!("model.file: {e}"));
            }
        }
        if let Some(PolicyRef::File { file }) = &self.policy {
            if !file.exists() {
                violations.push(format!("policy.file: {} does not exist", file.display()));
            } else if let Err(e) = read_json::<PolicyFile>(file) {
                violations.push(format!("policy.file: {e}"));
            }
        }
        if let Some(FamilyRef::File { file }) = &self.family {
            if !file.exists() {
                violations.push(format!("family.file: {} does not exist", file.display()));
            } else if let Err(e) = read_json::<FamilyFile>(file) {
                violations.push(format!("family.file: {e}"));
            }
        }
        if let Some(CheckSpec::ChaosConvergence { schedule, .. }) = &self.check {
            if schedule.len() < 3 {
                violations.push("check.schedule: needs at least 3 entries".into());
            }
            if schedule.windows(2).any(|w| w[1] <= w[0]) {
                violations.push("check.schedule: must be strictly increasing".into());
            }
        }
        violations
    }

    /// Overlays `other`'s set fields on top of `self` (CLI flags win).
    pub fn overlay(mut self, other: ExperimentConfig) -> ExperimentConfig {
        macro_rules! take {
            ($field:ident) => {
                if other.$field.is_some() {
                    self.$field = other.$field;
                }
            };
        }
        take!(subcommand);
        take!(model);
        take!(policy);
        take!(family);
        take!(init);
        take!(grid);
        take!(particles);
        take!(seed);
        take!(out);
        take!(csv_out);
        take!(bin_out);
        take!(cem);
        take!(check);
        take!(threads);
        self
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}
