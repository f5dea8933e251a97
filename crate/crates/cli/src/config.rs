//! Experiment configuration (TOML).
//!
//! ```toml
//! schema_version = 1
//! name = "desk"
//! steps = 100
//! hurst = [0.3, 0.5, 0.7]
//! replicas = 10
//! master_seed = 20240601
//! step_size = 0.1
//! iterations = 2000
//! log_every = 10
//!
//! [family]
//! kind = "step3"            # or "step2" with `d = 10`, or "custom"
//!
//! [points]
//! mode = "random"           # x, y ~ N(0, I); or "explicit" with [[points.pairs]]
//!
//! [telemetry]
//! malliavin_every = 100     # default: 10 * log_every; 0 disables
//! certificates = true
//! ```

use std::path::{Path, PathBuf};

use roughflow_core::{make_step2_family, make_step3_family, PolyTerm, VectorFieldFamily};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Step2 {
        d: usize,
    },
    Step3,
    /// Polynomial fields; `fields[i]` lists the terms of `V_i`.
    Custom {
        dim_state: usize,
        fields: Vec<Vec<PolyTerm>>,
    },
}

impl FamilySpec {
    pub fn build(&self) -> roughflow_core::Result<VectorFieldFamily> {
        match self {
            FamilySpec::Step2 { d } => make_step2_family(*d),
            FamilySpec::Step3 => Ok(make_step3_family()),
            FamilySpec::Custom { dim_state, fields } => VectorFieldFamily::from_terms(*dim_state, fields),
        }
    }

    pub fn label(&self) -> String {
        match self {
            FamilySpec::Step2 { d } => format!("step2_d{d}"),
            FamilySpec::Step3 => "step3".into(),
            FamilySpec::Custom { .. } => "custom".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointPair {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Points {
    /// `pairs_per_run` fresh pairs `x, y ~ N(0, I)` per replica.
    Random {
        #[serde(default = "one")]
        pairs_per_run: usize,
    },
    Explicit {
        pairs: Vec<PointPair>,
    },
}

impl Default for Points {
    fn default() -> Self {
        Points::Random { pairs_per_run: 1 }
    }
}

/// How replica seeds depend on the Hurst index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Replica `r` shares its points and Gaussian noise across all H values.
    #[default]
    Matched,
    /// Every (H, replica) cell gets its own stream.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Telemetry {
    #[serde(default)]
    pub malliavin_every: Option<usize>,
    #[serde(default = "yes")]
    pub certificates: bool,
}

impl Default for Telemetry {
    fn default() -> Self {
        Self {
            malliavin_every: None,
            certificates: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub family: FamilySpec,
    pub steps: usize,
    pub hurst: Vec<f64>,
    pub replicas: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
    pub step_size: f64,
    pub iterations: usize,
    #[serde(default = "one")]
    pub log_every: usize,
    /// Early exit threshold; 0 runs the full `iterations`.
    #[serde(default)]
    pub stop_loss: f64,
    #[serde(default)]
    pub points: Points,
    #[serde(default)]
    pub telemetry: Telemetry,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Smoke,
    Desk,
    Paper,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// `c_w` cadence in iterations, `None` when disabled.
    pub fn malliavin_every(&self) -> Option<usize> {
        match self.telemetry.malliavin_every {
            Some(0) => None,
            Some(k) => Some(k),
            None => Some(10 * self.log_every),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.steps == 0 || self.replicas == 0 || self.iterations == 0 || self.log_every == 0 {
            return bad("steps, replicas, iterations and log_every must be positive".into());
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step_size {} must be positive", self.step_size));
        }
        if self.stop_loss.is_nan() || self.stop_loss < 0.0 {
            return bad("stop_loss must be nonnegative".into());
        }
        if self.hurst.is_empty() {
            return bad("hurst list is empty".into());
        }
        if let Some(h) = self.hurst.iter().find(|h| !(**h > 0.0 && **h < 1.0)) {
            return bad(format!("Hurst parameter {h} outside (0, 1)"));
        }
        let fam = self.family.build().map_err(|e| CliError::Config(e.to_string()))?;
        let n = roughflow_core::VectorFields::dim_state(&fam);
        match &self.points {
            Points::Random { pairs_per_run: 0 } => return bad("pairs_per_run must be positive".into()),
            Points::Explicit { pairs } if pairs.is_empty() => return bad("explicit points list is empty".into()),
            Points::Explicit { pairs } if pairs.iter().any(|p| p.x.len() != n || p.y.len() != n) => {
                return bad(format!("explicit points must have dimension {n}"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Hurst values outside `(1/4, 1)` where the corrected scheme is not
    /// expected to converge.
    pub fn hurst_warnings(&self) -> Vec<String> {
        self.hurst
            .iter()
            .filter(|h| **h <= 0.25)
            .map(|h| format!("warning: H = {h} is at or below 1/4; the scheme is not expected to converge"))
            .collect()
    }

    pub fn preset(p: Preset) -> Vec<Self> {
        let base = |name: &str, family: FamilySpec, iterations: usize| Self {
            schema_version: SCHEMA_VERSION,
            name: name.into(),
            family,
            steps: 100,
            hurst: vec![0.3, 0.5, 0.7],
            replicas: 10,
            master_seed: 20_240_601,
            seed_policy: SeedPolicy::Matched,
            step_size: 0.1,
            iterations,
            log_every: 10,
            stop_loss: 0.0,
            points: Points::default(),
            telemetry: Telemetry::default(),
            out_dir: None,
        };
        match p {
            Preset::Smoke => vec![Self {
                steps: 20,
                hurst: vec![0.5],
                replicas: 2,
                log_every: 1,
                ..base("smoke", FamilySpec::Step3, 50)
            }],
            Preset::Desk => vec![base("desk", FamilySpec::Step3, 2000)],
            Preset::Paper => {
                let full = |c: Self| Self {
                    hurst: vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8],
                    replicas: 100,
                    ..c
                };
                vec![
                    full(base("full_step2_d10", FamilySpec::Step2 { d: 10 }, 5000)),
                    full(base("full_step3", FamilySpec::Step3, 2000)),
                ]
            }
        }
    }
}
