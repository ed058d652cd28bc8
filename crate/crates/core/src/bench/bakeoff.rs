//! Multi-solver bake-offs described by a TOML manifest.
//!
//! ```toml
//! taus = [0.1, 0.01, 0.001]
//! alphas = [1, 2, 5, 10]
//! seeds = [0, 1]
//!
//! [[problems]]
//! path = "ring.bal"
//!
//! [[solvers]]
//! kind = "lm-dense"
//!
//! [[solvers]]
//! kind = "stba"
//! label = "stba-g25"
//! gamma = 25
//! ```
//!
//! Every `(problem, seed)` pair is one profile instance; the seed only affects
//! the stochastic solvers. Relative paths resolve against the manifest file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::bal::read_file;
use crate::bench::profile::{performance_profile, ProblemRuns, ProfileInput, ProfileRow, SolverRun};
use crate::clustering::ClusterCap;
use crate::error::{Error, Result};
use crate::problem::IngestOptions;
use crate::solver::{solve, SolverKind, SolverSettings};
use crate::stba::Clusterer;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BakeoffManifest {
    pub problems: Vec<ProblemEntry>,
    pub solvers: Vec<SolverEntry>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Overrides applied to every solver before its own.
    #[serde(default)]
    pub defaults: Overrides,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_taus() -> Vec<f64> {
    vec![0.1, 0.01, 0.001]
}

fn default_alphas() -> Vec<f64> {
    vec![1.0, 2.0, 5.0, 10.0]
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemEntry {
    pub path: PathBuf,
    pub name: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverEntry {
    pub kind: String,
    pub label: Option<String>,
    #[serde(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GammaValue {
    Size(u64),
    Text(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct Overrides {
    pub max_iterations: Option<usize>,
    pub lambda0: Option<f64>,
    pub huber_delta: Option<f64>,
    pub gamma: Option<GammaValue>,
    pub beta: Option<f64>,
    pub workers: Option<usize>,
    pub tolerance: Option<f64>,
    pub correction: Option<bool>,
    pub clusterer: Option<String>,
}

impl Overrides {
    pub fn apply(&self, s: &mut SolverSettings) -> Result<()> {
        if let Some(v) = self.max_iterations {
            s.max_iterations = v;
        }
        if let Some(v) = self.lambda0 {
            s.lambda0 = v;
        }
        if let Some(v) = self.huber_delta {
            s.huber_delta = v;
        }
        if let Some(g) = &self.gamma {
            s.gamma = match g {
                GammaValue::Size(n) => ClusterCap::new(*n as usize),
                GammaValue::Text(t) => t.parse().ok(),
            }
            .ok_or_else(|| Error::Config(format!("invalid gamma {g:?}")))?;
        }
        if let Some(v) = self.beta {
            s.beta = v;
        }
        if let Some(v) = self.workers {
            s.workers = v;
        }
        if let Some(v) = self.tolerance {
            s.tolerance = v;
        }
        if let Some(v) = self.correction {
            s.correction = v;
        }
        if let Some(c) = &self.clusterer {
            s.clusterer = match c.as_str() {
                "stochastic" => Clusterer::Stochastic,
                "greedy" => Clusterer::Greedy,
                other => return Err(Error::Config(format!("unknown clusterer {other:?}"))),
            };
        }
        Ok(())
    }
}

impl BakeoffManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if m.problems.is_empty() || m.solvers.is_empty() || m.seeds.is_empty() {
            return Err(Error::Config("manifest needs problems, solvers and seeds".into()));
        }
        if m.taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(Error::Config("every tau must lie in (0, 1)".into()));
        }
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let m = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, base))
    }

    /// `(label, settings)` per solver entry.
    pub fn solver_settings(&self) -> Result<Vec<(String, SolverSettings)>> {
        self.solvers
            .iter()
            .map(|e| {
                let kind: SolverKind = e.kind.parse().map_err(Error::Config)?;
                let mut s = SolverSettings {
                    solver: kind,
                    ..SolverSettings::default()
                };
                self.defaults.apply(&mut s)?;
                e.overrides.apply(&mut s)?;
                Ok((e.label.clone().unwrap_or_else(|| kind.name().to_string()), s))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct BakeoffReport {
    pub input: ProfileInput,
    pub rows: Vec<ProfileRow>,
}

/// Runs every solver on every `(problem, seed)` sequentially and profiles the
/// traces.
pub fn run_bakeoff(manifest: &BakeoffManifest, base_dir: &Path) -> Result<BakeoffReport> {
    let solvers = manifest.solver_settings()?;
    let mut input = ProfileInput::default();
    for entry in &manifest.problems {
        let path = base_dir.join(&entry.path);
        let (problem, _) = read_file::<f64>(&path, IngestOptions::default())?;
        let name = entry.name.clone().unwrap_or_else(|| entry.path.display().to_string());
        for &seed in &manifest.seeds {
            let mut runs = Vec::with_capacity(solvers.len());
            let mut initial_cost = f64::NAN;
            for (label, settings) in &solvers {
                let s = SolverSettings { seed, ..*settings };
                let result = solve(&problem, &s)?;
                initial_cost = result.trace.initial_cost;
                runs.push(SolverRun::from_trace(label.clone(), &result.trace));
            }
            input.problems.push(ProblemRuns {
                name: format!("{name}#{seed}"),
                initial_cost,
                runs,
            });
        }
    }
    let rows = performance_profile(&input, &manifest.taus, &manifest.alphas);
    Ok(BakeoffReport { input, rows })
}
