//! JSON run configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cyflow::experiments::SaddleConfig;
use cyflow::fields::{snapshot, CovectorField, ScalarField, TorusGrid};
use cyflow::flow::StepperConfig;
use cyflow::geometry::{self, Background};
use cyflow::variational::EigenOptions;
use cyflow::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::formula::Formula;

/// A field given either as a formula string or a snapshot file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Formula(String),
    Snapshot { snapshot: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    /// Complex dimension `n`; the torus has real dimension `2n`.
    pub n: usize,
    #[serde(default)]
    pub periods: Option<Vec<f64>>,
    pub resolution: Vec<usize>,
    pub s_base: FieldSpec,
    /// One entry per real coordinate; omitted means balanced.
    #[serde(default)]
    pub torsion: Option<Vec<FieldSpec>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialSpec {
    Zero,
    Canonical,
    Snapshot {
        path: PathBuf,
        #[serde(default = "yes")]
        normalize: bool,
    },
    /// `amplitude · func(2π k·x / L)`, e.g. `0.3 sin(2π x1)`.
    Mode {
        amplitude: f64,
        wavevector: Vec<i64>,
        #[serde(default)]
        phase: Phase,
        #[serde(default = "yes")]
        normalize: bool,
    },
    Formula {
        formula: String,
        #[serde(default = "yes")]
        normalize: bool,
    },
}

fn yes() -> bool {
    true
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    #[default]
    Sin,
    Cos,
}

/// Parameters read only by the subcommands that need them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// `steady`: stop once `‖S - λ‖_∞ ≤ tol`.
    pub tol: f64,
    /// `unbounded`: bump radii.
    pub radii: Vec<f64>,
    /// `stability`: also run the saddle experiment.
    pub saddle: bool,
    pub amplitude: f64,
    pub energy_target: f64,
    pub eigen: EigenOptions,
    /// `flow`: write a binary snapshot at every sampled row.
    pub write_snapshots: bool,
}

impl Default for Params {
    fn default() -> Self {
        let saddle = SaddleConfig::default();
        Params {
            tol: 1e-6,
            radii: Vec::new(),
            saddle: false,
            amplitude: saddle.amplitude,
            energy_target: saddle.energy_target,
            eigen: EigenOptions::default(),
            write_snapshots: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub background: BackgroundSpec,
    #[serde(default = "default_initial")]
    pub initial: InitialSpec,
    #[serde(default)]
    pub stepper: StepperConfig,
    #[serde(default)]
    pub params: Params,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_initial() -> InitialSpec {
    InitialSpec::Zero
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    /// Reads a config and resolves relative snapshot paths against its directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let FieldSpec::Snapshot { snapshot } = &mut self.background.s_base {
            fix(snapshot);
        }
        for spec in self.background.torsion.iter_mut().flatten() {
            if let FieldSpec::Snapshot { snapshot } = spec {
                fix(snapshot);
            }
        }
        if let InitialSpec::Snapshot { path, .. } = &mut self.initial {
            fix(path);
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bg = &self.background;
        let dim = 2 * bg.n;
        if bg.n == 0 {
            return Err(config_error("background.n must be at least 1"));
        }
        if bg.resolution.len() != dim {
            return Err(config_error(format!("background.resolution needs {dim} entries")));
        }
        if let Some(p) = &bg.periods {
            if p.len() != dim || p.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
                return Err(config_error(format!("background.periods needs {dim} positive entries")));
            }
        }
        if let Some(t) = &bg.torsion {
            if t.len() != dim {
                return Err(config_error(format!("background.torsion needs {dim} components")));
            }
        }
        if let InitialSpec::Mode { wavevector, .. } = &self.initial {
            if wavevector.len() != dim {
                return Err(config_error(format!("initial.wavevector needs {dim} entries")));
            }
        }
        self.stepper.validate()
    }

    /// Hex SHA-256 of the canonical JSON form of the config plus `command`.
    pub fn hash(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0u8]);
        h.update(serde_json::to_vec(self).expect("config serializes"));
        hex::encode(h.finalize())
    }

    pub fn grid(&self) -> Result<Arc<TorusGrid>, Error> {
        let bg = &self.background;
        let periods = bg.periods.clone().unwrap_or_else(|| vec![1.0; 2 * bg.n]);
        TorusGrid::new(bg.n, periods, bg.resolution.clone())
    }

    pub fn build_background(&self) -> Result<Background, Error> {
        let grid = self.grid()?;
        let s_base = field_from(&self.background.s_base, &grid)?;
        let torsion = match &self.background.torsion {
            None => None,
            Some(specs) => {
                let comps = specs.iter().map(|s| field_from(s, &grid)).collect::<Result<Vec<_>, _>>()?;
                Some(CovectorField::new(&grid, comps)?)
            }
        };
        Background::new(s_base, torsion)
    }

    pub fn build_initial(&self, bg: &Background) -> Result<ScalarField, Error> {
        let grid = bg.grid();
        let (f, normalize) = match &self.initial {
            InitialSpec::Zero => (ScalarField::zeros(grid), false),
            InitialSpec::Canonical => return geometry::canonical_initial(bg),
            InitialSpec::Snapshot { path, normalize } => (snapshot::load(path, grid)?, *normalize),
            InitialSpec::Mode {
                amplitude,
                wavevector,
                phase,
                normalize,
            } => {
                let periods = grid.periods().to_vec();
                let f = ScalarField::from_fn(grid, |x| {
                    let arg: f64 = x
                        .iter()
                        .zip(wavevector)
                        .zip(&periods)
                        .map(|((xi, &k), l)| 2.0 * std::f64::consts::PI * k as f64 * xi / l)
                        .sum();
                    amplitude
                        * match phase {
                            Phase::Sin => arg.sin(),
                            Phase::Cos => arg.cos(),
                        }
                });
                (f, *normalize)
            }
            InitialSpec::Formula { formula, normalize } => {
                let fm = Formula::parse(formula, grid.real_dim())?;
                (ScalarField::from_fn(grid, |x| fm.eval(x)), *normalize)
            }
        };
        f.ensure_finite("initial datum")?;
        if normalize {
            geometry::normalize_conformal(&f)
        } else {
            Ok(f)
        }
    }

    pub fn saddle_config(&self) -> SaddleConfig {
        let mut eigen = self.params.eigen.clone();
        eigen.seed = eigen.seed.wrapping_add(self.seed);
        SaddleConfig {
            amplitude: self.params.amplitude,
            energy_target: self.params.energy_target,
            stepper: self.stepper.clone(),
            eigen,
        }
    }
}

fn field_from(spec: &FieldSpec, grid: &Arc<TorusGrid>) -> Result<ScalarField, Error> {
    let f = match spec {
        FieldSpec::Formula(src) => {
            let fm = Formula::parse(src, grid.real_dim())?;
            ScalarField::from_fn(grid, |x| fm.eval(x))
        }
        FieldSpec::Snapshot { snapshot: path } => {
            if !path.exists() {
                return Err(config_error(format!("snapshot {} does not exist", path.display())));
            }
            snapshot::load(path, grid)?
        }
    };
    f.ensure_finite("background field")?;
    Ok(f)
}
