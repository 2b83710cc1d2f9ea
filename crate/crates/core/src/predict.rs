//! PMB prediction: survival, nearly-constant-velocity motion with an
//! intensity random walk, and Poisson birth.

use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::CellGrid;
use crate::rng::{substream, Rng};
use crate::state::{kahan_sum, BernoulliComponent, ObjectState, PmbPosterior, PoissonIntensity, WeightedParticleSet};

/// Single-object transition model.
///
/// Kinematics follow `p' = A p + W w` with the NCV matrices for sampling
/// period `dt`; `w ~ N(0, q_kin I₂)`. The intensity follows
/// `γ' = max(0, γ + ε)` with `ε ~ N(0, q_int)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub dt: f64,
    pub q_kin: f64,
    pub q_int: f64,
    pub p_s: f64,
}

impl TransitionModel {
    pub fn new(dt: f64, q_kin: f64, q_int: f64, p_s: f64) -> Result<Self> {
        let tm = Self { dt, q_kin, q_int, p_s };
        tm.validate()?;
        Ok(tm)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("sampling period {} must be positive", self.dt)));
        }
        if !(self.q_kin >= 0.0 && self.q_int >= 0.0) {
            return Err(Error::InvalidArgument("driving noise variances must be nonnegative".into()));
        }
        if !(self.p_s > 0.0 && self.p_s <= 1.0) {
            return Err(Error::InvalidArgument(format!("survival probability {} outside (0, 1]", self.p_s)));
        }
        Ok(())
    }

    /// State-propagation matrix on `[px, py, vx, vy]`.
    pub fn a_matrix(&self) -> [[f64; 4]; 4] {
        let t = self.dt;
        [[1.0, 0.0, t, 0.0], [0.0, 1.0, 0.0, t], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]]
    }

    /// Noise-input matrix.
    pub fn w_matrix(&self) -> [[f64; 2]; 4] {
        let t = self.dt;
        [[0.5 * t * t, 0.0], [0.0, 0.5 * t * t], [t, 0.0], [0.0, t]]
    }

    /// Survival probability of an object at `x`. Constant for now; the
    /// prediction code handles a state-dependent value.
    pub fn survival_probability(&self, _x: &ObjectState) -> f64 {
        self.p_s
    }

    /// Draws `x' ~ f(· | x)`.
    pub fn propagate(&self, x: &ObjectState, rng: &mut Rng) -> ObjectState {
        let t = self.dt;
        let sk = self.q_kin.sqrt();
        let (w1, w2) = if sk > 0.0 {
            let a: f64 = StandardNormal.sample(rng);
            let b: f64 = StandardNormal.sample(rng);
            (sk * a, sk * b)
        } else {
            (0.0, 0.0)
        };
        let eps = if self.q_int > 0.0 {
            let e: f64 = StandardNormal.sample(rng);
            self.q_int.sqrt() * e
        } else {
            0.0
        };
        ObjectState {
            px: x.px + t * x.vx + 0.5 * t * t * w1,
            py: x.py + t * x.vy + 0.5 * t * t * w2,
            vx: x.vx + t * w1,
            vy: x.vy + t * w2,
            gamma: (x.gamma + eps).max(0.0),
        }
    }
}

/// Poisson birth model: `μ_B` expected births per step, uniform position
/// over the region, zero-mean isotropic Gaussian velocity with variance
/// `sigma_v2`, intensity uniform on `[0, gamma_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthModel {
    pub mu_b: f64,
    pub region: CellGrid,
    pub sigma_v2: f64,
    pub gamma_max: f64,
    pub particles_per_step: usize,
}

impl BirthModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_b >= 0.0 && self.mu_b.is_finite()) {
            return Err(Error::InvalidArgument(format!("birth rate {} must be nonnegative", self.mu_b)));
        }
        if !(self.sigma_v2 >= 0.0 && self.gamma_max >= 0.0) {
            return Err(Error::InvalidArgument(
                "birth velocity variance and intensity bound must be nonnegative".into(),
            ));
        }
        self.region.validate()
    }

    /// Draws one state from the birth density `f_B`.
    pub fn sample(&self, rng: &mut Rng) -> ObjectState {
        let (x0, x1, y0, y1) = self.region.extent();
        let sv = self.sigma_v2.sqrt();
        let vel = Normal::new(0.0, sv).expect("finite velocity scale");
        ObjectState {
            px: x0 + (x1 - x0) * rng.random::<f64>(),
            py: y0 + (y1 - y0) * rng.random::<f64>(),
            vx: vel.sample(rng),
            vy: vel.sample(rng),
            gamma: self.gamma_max * rng.random::<f64>(),
        }
    }
}

/// Predicts one Bernoulli component: `r' = r ∫ p_S f`, particles moved
/// through the transition density.
pub fn predict_bernoulli(b: &BernoulliComponent, tm: &TransitionModel, rng: &mut Rng) -> BernoulliComponent {
    let spatial = b.spatial();
    let survival: Vec<f64> = spatial.states().iter().map(|x| tm.survival_probability(x)).collect();
    let mean_survival = kahan_sum(spatial.weights().iter().zip(&survival).map(|(w, s)| w * s));
    let states: Vec<ObjectState> = spatial.states().iter().map(|x| tm.propagate(x, rng)).collect();
    let weights: Vec<f64> = spatial.weights().iter().zip(&survival).map(|(w, s)| w * s).collect();
    let r = (b.r() * mean_survival).clamp(0.0, 1.0);
    // A constant p_S leaves normalized weights untouched; otherwise renormalize.
    let set = if survival.iter().all(|&s| s == tm.p_s) {
        WeightedParticleSet::normalized(states, spatial.weights().to_vec())
    } else {
        WeightedParticleSet::normalized(states, weights)
    };
    match set {
        Ok(set) => BernoulliComponent::new(r, set, b.label()).expect("valid predicted Bernoulli"),
        // Zero survival everywhere: the component is certainly dead.
        Err(_) => BernoulliComponent::new(0.0, spatial.clone(), b.label()).expect("valid Bernoulli"),
    }
}

/// Predicts the Poisson intensity: survivors carry `p_S`-scaled weights,
/// followed by `particles_per_step` birth particles of total weight `μ_B`.
pub fn predict_phd(
    phd: &PoissonIntensity,
    tm: &TransitionModel,
    birth: &BirthModel,
    rng: &mut Rng,
) -> PoissonIntensity {
    let n_birth = if birth.mu_b > 0.0 { birth.particles_per_step } else { 0 };
    let mut states = Vec::with_capacity(phd.support.len() + n_birth);
    let mut weights = Vec::with_capacity(phd.support.len() + n_birth);
    for (x, w) in phd.support.iter() {
        states.push(tm.propagate(x, rng));
        weights.push(w * tm.survival_probability(x));
    }
    if n_birth > 0 {
        let wb = birth.mu_b / n_birth as f64;
        for _ in 0..n_birth {
            states.push(birth.sample(rng));
            weights.push(wb);
        }
    }
    PoissonIntensity::new(WeightedParticleSet::new(states, weights).expect("nonnegative weights"), phd.capacity)
}

/// Full prediction step. Component `j` draws from a substream keyed by its
/// label and the PHD from its own substream, so the result does not depend
/// on processing order.
pub fn predict(p: &PmbPosterior, tm: &TransitionModel, birth: &BirthModel, rng: &mut Rng) -> PmbPosterior {
    let step_seed: u64 = rng.random();
    let bernoullis =
        p.bernoullis().iter().map(|b| predict_bernoulli(b, tm, &mut substream(step_seed, &[1, b.label()]))).collect();
    let phd = predict_phd(&p.poisson, tm, birth, &mut substream(step_seed, &[2]));
    PmbPosterior::new(phd, bernoullis, p.time_index + 1).expect("labels stay unique")
}
