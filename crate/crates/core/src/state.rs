//! Multiobject state types and particle containers.
//!
//! All spatial densities (Bernoulli spatial pdfs and the Poisson intensity)
//! are represented by weighted particle sets. Bernoulli spatial pdfs are
//! normalized, the Poisson intensity is not: its total weight is the expected
//! number of undetected objects.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the weight sum of a normalized set.
pub const NORMALIZATION_TOL: f64 = 1e-9;

/// Single-object state: 2D position, 2D velocity and intensity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectState {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
    /// Deposited power in the occupied cell. Never negative.
    pub gamma: f64,
}

impl ObjectState {
    pub fn new(px: f64, py: f64, vx: f64, vy: f64, gamma: f64) -> Result<Self> {
        let s = Self { px, py, vx, vy, gamma };
        if !s.is_valid() {
            return Err(Error::InvalidArgument(format!("invalid object state {s:?}")));
        }
        Ok(s)
    }

    pub fn is_valid(&self) -> bool {
        [self.px, self.py, self.vx, self.vy, self.gamma].iter().all(|v| v.is_finite()) && self.gamma >= 0.0
    }

    pub fn position(&self) -> [f64; 2] {
        [self.px, self.py]
    }

    pub(crate) fn as_array(&self) -> [f64; 5] {
        [self.px, self.py, self.vx, self.vy, self.gamma]
    }

    pub(crate) fn from_array(a: [f64; 5]) -> Self {
        Self { px: a[0], py: a[1], vx: a[2], vy: a[3], gamma: a[4] }
    }
}

/// A set of states with nonnegative weights.
///
/// Stored as two parallel vectors; hot loops in the update walk the weights
/// and states separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedParticleSet {
    states: Vec<ObjectState>,
    weights: Vec<f64>,
    normalized: bool,
}

impl WeightedParticleSet {
    /// Builds an un-normalized set. Rejects negative or non-finite weights.
    pub fn new(states: Vec<ObjectState>, weights: Vec<f64>) -> Result<Self> {
        if states.len() != weights.len() {
            return Err(Error::InvalidArgument(format!("{} states but {} weights", states.len(), weights.len())));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidArgument(format!("particle weight {w} is not a nonnegative finite number")));
        }
        Ok(Self { states, weights, normalized: false })
    }

    /// Builds a set and rescales the weights to sum to one.
    pub fn normalized(states: Vec<ObjectState>, weights: Vec<f64>) -> Result<Self> {
        let mut set = Self::new(states, weights)?;
        set.normalize()?;
        Ok(set)
    }

    /// Equally weighted set with total weight `total`.
    pub fn uniform(states: Vec<ObjectState>, total: f64) -> Self {
        let n = states.len().max(1) as f64;
        let weights = vec![total / n; states.len()];
        Self { states, weights, normalized: false }
    }

    pub fn empty() -> Self {
        Self { states: Vec::new(), weights: Vec::new(), normalized: false }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn states(&self) -> &[ObjectState] {
        &self.states
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ObjectState, f64)> {
        self.states.iter().zip(self.weights.iter().copied())
    }

    pub fn total_weight(&self) -> f64 {
        kahan_sum(self.weights.iter().copied())
    }

    pub fn normalize(&mut self) -> Result<()> {
        let total = self.total_weight();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegenerateWeights(total));
        }
        for w in &mut self.weights {
            *w /= total;
        }
        self.normalized = true;
        Ok(())
    }

    /// Multiplies every weight by `factor` (≥ 0). Clears the normalized flag
    /// unless `factor == 1`.
    pub fn scale(&mut self, factor: f64) {
        debug_assert!(factor >= 0.0);
        if factor != 1.0 {
            for w in &mut self.weights {
                *w *= factor;
            }
            self.normalized = false;
        }
    }

    /// Appends all particles of `other`, scaled by `factor`.
    pub fn extend_scaled(&mut self, other: &WeightedParticleSet, factor: f64) {
        self.states.extend_from_slice(&other.states);
        self.weights.extend(other.weights.iter().map(|w| w * factor));
        self.normalized = false;
    }

    pub fn push(&mut self, state: ObjectState, weight: f64) {
        debug_assert!(weight >= 0.0);
        self.states.push(state);
        self.weights.push(weight);
        self.normalized = false;
    }

    /// Weighted mean state. `None` for an empty or zero-weight set.
    pub fn mean_state(&self) -> Option<ObjectState> {
        let total = self.total_weight();
        if !(total > 0.0) {
            return None;
        }
        let mut acc = [0.0; 5];
        for (s, w) in self.iter() {
            for (a, v) in acc.iter_mut().zip(s.as_array()) {
                *a += w * v;
            }
        }
        Some(ObjectState::from_array(acc.map(|a| a / total)))
    }
}

/// Compensated summation; keeps reductions reproducible and accurate.
pub(crate) fn kahan_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Systematic (low-variance) resampling to `target_count` equally weighted
/// particles. The total weight is preserved; a normalized input gives a
/// normalized output.
pub fn resample<R: Rng + ?Sized>(
    set: &WeightedParticleSet,
    target_count: usize,
    rng: &mut R,
) -> Result<WeightedParticleSet> {
    if target_count == 0 {
        return Err(Error::InvalidArgument("target_count must be at least 1".into()));
    }
    let total = set.total_weight();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateWeights(total));
    }
    let step = total / target_count as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(target_count);
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &w) in set.weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = i;
        }
        cumulative += w;
        while out.len() < target_count && u < cumulative {
            out.push(set.states[i]);
            u += step;
        }
    }
    // Rounding in the running sum can leave the last few slots unfilled.
    while out.len() < target_count {
        out.push(set.states[last_positive]);
    }
    let weight = if set.normalized { 1.0 / target_count as f64 } else { step };
    Ok(WeightedParticleSet { states: out, weights: vec![weight; target_count], normalized: set.normalized })
}

/// Opaque bookkeeping identifier of a Bernoulli component. Never enters the
/// math.
pub type Label = u64;

/// A Bernoulli RFS: empty with probability `1 - r`, otherwise one object
/// distributed according to `spatial`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliComponent {
    r: f64,
    spatial: WeightedParticleSet,
    label: Label,
}

impl BernoulliComponent {
    /// Normalizes `spatial` if needed. Fails on `r ∉ [0, 1]` or an empty or
    /// zero-weight particle set.
    pub fn new(r: f64, spatial: WeightedParticleSet, label: Label) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!("existence probability {r} outside [0, 1]")));
        }
        if spatial.is_empty() {
            return Err(Error::InvalidArgument("Bernoulli spatial pdf has no particles".into()));
        }
        let mut spatial = spatial;
        if !spatial.is_normalized() {
            spatial.normalize()?;
        }
        Ok(Self { r, spatial, label })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn spatial(&self) -> &WeightedParticleSet {
        &self.spatial
    }

    pub fn label(&self) -> Label {
        self.label
    }
}

/// Intensity (PHD) of the Poisson RFS of undetected objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoissonIntensity {
    pub support: WeightedParticleSet,
    /// Particle count the support is reduced to after each update.
    pub capacity: usize,
}

impl PoissonIntensity {
    pub fn new(support: WeightedParticleSet, capacity: usize) -> Self {
        let mut support = support;
        support.normalized = false;
        Self { support, capacity }
    }

    pub fn empty(capacity: usize) -> Self {
        Self { support: WeightedParticleSet::empty(), capacity }
    }

    /// Expected number of undetected objects.
    pub fn mass(&self) -> f64 {
        self.support.total_weight()
    }
}

/// PMB density: Poisson undetected part plus independent Bernoulli components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmbPosterior {
    pub poisson: PoissonIntensity,
    bernoullis: Vec<BernoulliComponent>,
    pub time_index: u64,
}

impl PmbPosterior {
    pub fn new(poisson: PoissonIntensity, bernoullis: Vec<BernoulliComponent>, time_index: u64) -> Result<Self> {
        let mut labels: Vec<Label> = bernoullis.iter().map(|b| b.label).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument(format!("duplicate Bernoulli label {}", w[0])));
        }
        Ok(Self { poisson, bernoullis, time_index })
    }

    pub fn empty(phd_capacity: usize) -> Self {
        Self { poisson: PoissonIntensity::empty(phd_capacity), bernoullis: Vec::new(), time_index: 0 }
    }

    pub fn bernoullis(&self) -> &[BernoulliComponent] {
        &self.bernoullis
    }

    pub fn into_parts(self) -> (PoissonIntensity, Vec<BernoulliComponent>, u64) {
        (self.poisson, self.bernoullis, self.time_index)
    }
}

/// First moment of the PMB: Poisson mass plus the sum of existence
/// probabilities.
pub fn expected_cardinality(p: &PmbPosterior) -> f64 {
    p.poisson.mass() + kahan_sum(p.bernoullis.iter().map(|b| b.r))
}

/// Objects alive at one time step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub k: u64,
    pub objects: Vec<(u32, ObjectState)>,
}

impl GroundTruthFrame {
    pub fn new(k: u64, objects: Vec<(u32, ObjectState)>) -> Result<Self> {
        let mut ids: Vec<u32> = objects.iter().map(|(id, _)| *id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("duplicate object id in ground truth frame".into()));
        }
        Ok(Self { k, objects })
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.objects.iter().map(|(_, s)| s.position()).collect()
    }
}
