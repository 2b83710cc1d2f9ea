//! The particle PMB track-before-detect filter: one predict/update cycle
//! per frame.

use serde::{Deserialize, Serialize};

use crate::bp::{run_bp, BpConfig};
use crate::error::{Error, Result};
use crate::measurement::{mean_contributions, CellGrid, Frame, NoiseModel};
use crate::predict::{predict, BirthModel, TransitionModel};
use crate::rng::{substream, Rng};
use crate::state::{resample, BernoulliComponent, Label, PmbPosterior};
use crate::update::{
    apply_mode, birth_components, compute_weights, extract_estimates, recycle, reduce_to_pmb, update_phd, EstimateSet,
    FilterMode,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub mode: FilterMode,
    pub grid: CellGrid,
    pub noise: NoiseModel,
    pub transition: TransitionModel,
    pub birth: BirthModel,
    pub particles_per_bernoulli: usize,
    /// PHD particle count kept after each update.
    pub phd_capacity: usize,
    pub recycle_threshold: f64,
    pub declare_threshold: f64,
    /// New components are created only where `d / f0` exceeds this.
    pub birth_floor: f64,
    pub bp: BpConfig,
}

impl FilterConfig {
    /// Defaults for a unit-cell grid: NCV with `q = 1e-3`, intensity walk
    /// `1e-2`, `p_S = 0.999`, `μ_B = 0.1`, recycling at 0.1.
    pub fn standard(grid: CellGrid, mode: FilterMode, particles_per_bernoulli: usize, phd_capacity: usize) -> Self {
        Self {
            mode,
            grid,
            noise: NoiseModel { sigma0: 1.0 },
            transition: TransitionModel { dt: 1.0, q_kin: 1e-3, q_int: 1e-2, p_s: 0.999 },
            birth: BirthModel {
                mu_b: 0.1,
                region: grid,
                sigma_v2: 0.1,
                gamma_max: 30.0,
                particles_per_step: phd_capacity,
            },
            particles_per_bernoulli,
            phd_capacity,
            recycle_threshold: 0.1,
            declare_threshold: 0.5,
            birth_floor: 1e-4,
            bp: BpConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        NoiseModel::new(self.noise.sigma0)?;
        self.transition.validate()?;
        self.birth.validate()?;
        self.bp.validate()?;
        if self.particles_per_bernoulli == 0 || self.phd_capacity == 0 {
            return Err(Error::InvalidArgument("particle budgets must be positive".into()));
        }
        for (name, v) in [
            ("recycle_threshold", self.recycle_threshold),
            ("declare_threshold", self.declare_threshold),
            ("birth_floor", self.birth_floor),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Summary of one filter step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub estimates: EstimateSet,
    pub phd_mass: f64,
    pub bernoulli_count: usize,
    pub bp_iterations: usize,
    pub bp_converged: bool,
}

#[derive(Debug, Clone)]
pub struct PmbFilter {
    cfg: FilterConfig,
    posterior: PmbPosterior,
    rng: Rng,
    next_label: Label,
}

impl PmbFilter {
    pub fn new(cfg: FilterConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            posterior: PmbPosterior::empty(cfg.phd_capacity),
            rng: substream(seed, &[0x5EED]),
            next_label: 0,
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn posterior(&self) -> &PmbPosterior {
        &self.posterior
    }

    /// Predicts to the next time step and updates with `frame`.
    pub fn step(&mut self, frame: &Frame) -> Result<StepReport> {
        let cfg = &self.cfg;
        if frame.grid != cfg.grid {
            return Err(Error::InvalidArgument("frame grid differs from the filter grid".into()));
        }
        let pred = predict(&self.posterior, &cfg.transition, &cfg.birth, &mut self.rng);
        let table = mean_contributions(&pred, &cfg.grid, &cfg.noise);
        let weights = apply_mode(compute_weights(&pred, frame, &table, &cfg.noise)?, cfg.mode)?;
        let bp = run_bp(&weights.assoc, &cfg.bp)?;
        let candidates = birth_components(&pred.poisson, &weights, cfg.birth_floor);
        let bernoullis = reduce_to_pmb(&pred, &weights, &bp.beliefs, candidates, &mut self.next_label)?;
        let phd = update_phd(&pred.poisson, &cfg.grid, &table, &cfg.noise, cfg.mode);
        let post = recycle(PmbPosterior::new(phd, bernoullis, pred.time_index)?, cfg.recycle_threshold)?;

        let (mut phd, bernoullis, k) = post.into_parts();
        let mut kept = Vec::with_capacity(bernoullis.len());
        for b in bernoullis {
            let spatial = resample(b.spatial(), cfg.particles_per_bernoulli, &mut self.rng)?;
            kept.push(BernoulliComponent::new(b.r(), spatial, b.label())?);
        }
        if phd.support.len() > cfg.phd_capacity && phd.mass() > 0.0 {
            phd.support = resample(&phd.support, cfg.phd_capacity, &mut self.rng)?;
        }
        self.posterior = PmbPosterior::new(phd, kept, k)?;

        Ok(StepReport {
            estimates: extract_estimates(&self.posterior, cfg.declare_threshold),
            phd_mass: self.posterior.poisson.mass(),
            bernoulli_count: self.posterior.bernoullis().len(),
            bp_iterations: bp.iterations,
            bp_converged: bp.converged,
        })
    }
}
