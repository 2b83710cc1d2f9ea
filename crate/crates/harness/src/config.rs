use std::path::{Path, PathBuf};

use pmbtbd::bp::BpConfig;
use pmbtbd::filter::FilterConfig;
use pmbtbd::gospa::GospaConfig;
use pmbtbd::measurement::{CellGrid, NoiseModel};
use pmbtbd::predict::{BirthModel, TransitionModel};
use pmbtbd::scenario::{CrossingParams, ObjectScript, Scenario};
use pmbtbd::update::FilterMode;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Built-in experiment presets, selectable by name wherever a config path
/// is expected.
pub const PRESETS: [(&str, &str); 4] = [
    ("desk-s1", include_str!("../configs/desk-s1.toml")),
    ("desk-s2", include_str!("../configs/desk-s2.toml")),
    ("paper-s1", include_str!("../configs/paper-s1.toml")),
    ("paper-s2", include_str!("../configs/paper-s2.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: FilterMode,
    pub num_runs: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Scenario file; alternative to an inline `[scenario]` table.
    pub scenario_path: Option<PathBuf>,
    pub scenario: Option<ScenarioFile>,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default)]
    pub gospa: GospaConfig,
    /// Inclusive step range used by mode comparisons.
    pub interaction_window: Option<[u64; 2]>,
    /// Step at which missed errors are compared.
    pub interaction_step: Option<u64>,
}

/// Scenario description: grid, noise, and either a crossing generator or
/// explicit object scripts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: CellGrid,
    pub sigma_n: f64,
    pub seed: u64,
    pub num_steps: Option<u64>,
    pub crossing: Option<CrossingParams>,
    #[serde(default)]
    pub objects: Vec<ObjectScript>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config { path: "scenario".into(), msg: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text).map_err(|e| e.at(&path.display().to_string()))
    }

    pub fn build(&self) -> Result<Scenario> {
        let field = |path: &str, e: pmbtbd::Error| HarnessError::Config { path: path.into(), msg: e.to_string() };
        match (&self.crossing, self.objects.is_empty()) {
            (Some(c), true) => {
                if self.num_steps.is_some_and(|n| n != c.num_steps) {
                    return Err(HarnessError::Config {
                        path: "scenario.num_steps".into(),
                        msg: "differs from crossing.num_steps".into(),
                    });
                }
                Scenario::crossing(self.grid, self.sigma_n, self.seed, c).map_err(|e| field("scenario.crossing", e))
            }
            (None, false) => {
                let num_steps = self.num_steps.ok_or_else(|| HarnessError::Config {
                    path: "scenario.num_steps".into(),
                    msg: "required with explicit objects".into(),
                })?;
                let s = Scenario {
                    grid: self.grid,
                    num_steps,
                    sigma_n: self.sigma_n,
                    seed: self.seed,
                    objects: self.objects.clone(),
                };
                s.validate().map_err(|e| field("scenario.objects", e))?;
                Ok(s)
            }
            (Some(_), false) => Err(HarnessError::Config {
                path: "scenario".into(),
                msg: "give either crossing or objects, not both".into(),
            }),
            (None, true) => {
                Err(HarnessError::Config { path: "scenario".into(), msg: "no objects and no crossing".into() })
            }
        }
    }
}

/// Filter parameters; anything omitted takes the standard value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub particles_per_bernoulli: usize,
    pub phd_capacity: usize,
    pub birth_particles: usize,
    pub recycle_threshold: f64,
    pub declare_threshold: f64,
    pub birth_floor: f64,
    pub p_s: f64,
    pub mu_b: f64,
    pub q_kin: f64,
    pub q_int: f64,
    pub sigma_v2: f64,
    pub gamma_max: f64,
    pub bp: BpConfig,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            particles_per_bernoulli: 3000,
            phd_capacity: 50_000,
            birth_particles: 50_000,
            recycle_threshold: 0.1,
            declare_threshold: 0.5,
            birth_floor: 1e-4,
            p_s: 0.999,
            mu_b: 0.1,
            q_kin: 1e-3,
            q_int: 1e-2,
            sigma_v2: 0.1,
            gamma_max: 30.0,
            bp: BpConfig::default(),
        }
    }
}

impl FilterParams {
    pub fn to_filter_config(&self, mode: FilterMode, grid: CellGrid, sigma_n: f64) -> FilterConfig {
        FilterConfig {
            mode,
            grid,
            noise: NoiseModel { sigma0: sigma_n },
            transition: TransitionModel { dt: 1.0, q_kin: self.q_kin, q_int: self.q_int, p_s: self.p_s },
            birth: BirthModel {
                mu_b: self.mu_b,
                region: grid,
                sigma_v2: self.sigma_v2,
                gamma_max: self.gamma_max,
                particles_per_step: self.birth_particles,
            },
            particles_per_bernoulli: self.particles_per_bernoulli,
            phd_capacity: self.phd_capacity,
            recycle_threshold: self.recycle_threshold,
            declare_threshold: self.declare_threshold,
            birth_floor: self.birth_floor,
            bp: self.bp,
        }
    }
}

impl ExperimentConfig {
    /// Parses a config; relative scenario paths resolve against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: Self =
            toml::from_str(text).map_err(|e| HarnessError::Config { path: "config".into(), msg: e.to_string() })?;
        if let (Some(base), Some(p)) = (base, cfg.scenario_path.as_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Loads a config file, or a built-in preset when `name` matches one.
    pub fn load(name: &str) -> Result<Self> {
        if let Some((_, text)) = PRESETS.iter().find(|(n, _)| *n == name) {
            return Self::parse(text, None);
        }
        let path = Path::new(name);
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path.parent()).map_err(|e| e.at(&path.display().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: String| Err(HarnessError::Config { path: path.into(), msg });
        if self.num_runs == 0 {
            return bad("num_runs", "must be at least 1".into());
        }
        if let Err(e) = self.gospa.validate() {
            return bad("gospa", e.to_string());
        }
        match (&self.scenario_path, &self.scenario) {
            (Some(p), None) if !p.is_file() => return bad("scenario_path", format!("{} does not exist", p.display())),
            (Some(_), Some(_)) => return bad("scenario", "give either scenario_path or [scenario], not both".into()),
            (None, None) => return bad("scenario", "missing".into()),
            _ => {}
        }
        let scenario = self.scenario()?;
        if let Err(e) = self.filter_config(&scenario).validate() {
            return bad("filter", e.to_string());
        }
        if let Some([a, b]) = self.interaction_window {
            if a > b || b > scenario.num_steps || a == 0 {
                return bad("interaction_window", format!("[{a}, {b}] not inside 1..={}", scenario.num_steps));
            }
        }
        if let Some(k) = self.interaction_step {
            if k == 0 || k > scenario.num_steps {
                return bad("interaction_step", format!("{k} not inside 1..={}", scenario.num_steps));
            }
        }
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario> {
        match (&self.scenario_path, &self.scenario) {
            (Some(p), _) => ScenarioFile::load(p)?.build(),
            (None, Some(s)) => s.build(),
            (None, None) => Err(HarnessError::Config { path: "scenario".into(), msg: "missing".into() }),
        }
    }

    pub fn filter_config(&self, scenario: &Scenario) -> FilterConfig {
        self.filter.to_filter_config(self.mode, scenario.grid, scenario.sigma_n)
    }

    /// Canonical text of the config, used for hashing.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
