//! Measurement update: association weights, reduction of the posterior
//! mixture to a single multi-Bernoulli, PHD update, recycling and state
//! extraction.
//!
//! All likelihoods are divided by the noise-only likelihood of their cell,
//! so the weights are ratios `f1/f0`. If a ratio would overflow, the cell's
//! reference is scaled by `exp(shift[m])`; the joint association weight
//! picks up the same factor in every configuration, so beliefs are
//! unchanged.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bp::{AssociationWeights, BeliefTable, LegacyCell, LegacyWeights};
use crate::error::{Error, Result};
use crate::measurement::{marginal_contribution_prob, CellGrid, Component, ContributionTable, Frame, NoiseModel};
use crate::state::{
    kahan_sum, BernoulliComponent, Label, ObjectState, PmbPosterior, PoissonIntensity, WeightedParticleSet,
};

/// Largest log ratio kept without shifting the cell reference.
const MAX_LN_RATIO: f64 = 600.0;

const OUTSIDE: u32 = u32::MAX;

/// Whether the object contribution model is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FilterMode {
    /// Association filter with object contribution probabilities.
    #[serde(rename = "pmbf-ac")]
    Ac,
    /// Association filter in which every occupant contributes to its cell.
    #[serde(rename = "pmbf-a")]
    A,
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterMode::Ac => "pmbf-ac",
            FilterMode::A => "pmbf-a",
        })
    }
}

impl FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pmbf-ac" | "ac" => Ok(FilterMode::Ac),
            "pmbf-a" | "a" => Ok(FilterMode::A),
            _ => Err(Error::InvalidArgument(format!("unknown filter mode {s:?} (expected pmbf-ac or pmbf-a)"))),
        }
    }
}

/// Per-particle quantities shared by both filter modes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParticleFactors {
    /// Legacy components: index into the component's cell list. PHD: the
    /// cell index. `u32::MAX` outside the grid.
    pub slot: Vec<u32>,
    pub weight: Vec<f64>,
    /// Probability of not contributing to the occupied cell.
    pub p0: Vec<f64>,
    /// Probability of contributing to the occupied cell.
    pub p1: Vec<f64>,
    /// `ln f1(z | x) − ln f0(z)` for the occupied cell.
    pub ln_ratio: Vec<f64>,
}

impl ParticleFactors {
    fn with_capacity(n: usize) -> Self {
        Self {
            slot: Vec::with_capacity(n),
            weight: Vec::with_capacity(n),
            p0: Vec::with_capacity(n),
            p1: Vec::with_capacity(n),
            ln_ratio: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, slot: u32, weight: f64, p0: f64, p1: f64, ln_ratio: f64) {
        self.slot.push(slot);
        self.weight.push(weight);
        self.p0.push(p0);
        self.p1.push(p1);
        self.ln_ratio.push(ln_ratio);
    }
}

/// Association weights together with everything needed to form the
/// conditional posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateWeights {
    pub mode: FilterMode,
    pub assoc: AssociationWeights,
    /// Per legacy component and cell slot: `(b, c)`, the normalizers of the
    /// θ = 0 and θ = 1 conditionals.
    pub normalizers: Vec<Vec<(f64, f64)>>,
    pub legacy: Vec<ParticleFactors>,
    pub poisson: ParticleFactors,
    /// Per cell: `d`, the PHD mass that contributes, in ratio units.
    pub d: Vec<f64>,
    /// Per cell log scale of the reference likelihood beyond `f0`.
    pub shift: Vec<f64>,
}

impl UpdateWeights {
    fn effective(&self, p0: f64, p1: f64) -> (f64, f64) {
        match self.mode {
            FilterMode::Ac => (p0, p1),
            FilterMode::A => (0.0, 1.0),
        }
    }

    fn legacy_cell(&self, j: usize, slot: u32) -> usize {
        self.assoc.legacy[j].cells[slot as usize].cell
    }

    /// Recomputes the association weights and normalizers from the cached
    /// particle factors under the current mode.
    fn assemble(&mut self, r: &[f64]) -> Result<()> {
        let cells = self.d.len();
        debug_assert_eq!(r.len(), self.legacy.len());
        for (j, &rj) in r.iter().enumerate() {
            let n_slots = self.assoc.legacy[j].cells.len();
            let mut sums = vec![(0.0, 0.0); n_slots];
            let f = &self.legacy[j];
            for i in 0..f.slot.len() {
                let s = f.slot[i];
                if s == OUTSIDE {
                    continue;
                }
                let (p0, p1) = self.effective(f.p0[i], f.p1[i]);
                let m = self.legacy_cell(j, s);
                let e = &mut sums[s as usize];
                e.0 += f.weight[i] * p0;
                e.1 += f.weight[i] * p1 * (f.ln_ratio[i] - self.shift[m]).exp();
            }
            let row = &mut self.assoc.legacy[j];
            row.beta_empty = 1.0 - rj;
            for (cell, &(b, c)) in row.cells.iter_mut().zip(&sums) {
                cell.beta_absent = rj * b;
                cell.beta_present = rj * c;
                if !(cell.beta_absent.is_finite() && cell.beta_present.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "component {} (label {}), cell {}: weights ({}, {})",
                        j, row.label, cell.cell, cell.beta_absent, cell.beta_present
                    )));
                }
            }
            self.normalizers[j] = sums;
        }
        let mut d = vec![0.0; cells];
        let f = &self.poisson;
        for i in 0..f.slot.len() {
            let m = f.slot[i];
            if m == OUTSIDE {
                continue;
            }
            let m = m as usize;
            let (_, p1) = self.effective(f.p0[i], f.p1[i]);
            d[m] += f.weight[i] * p1 * (f.ln_ratio[i] - self.shift[m]).exp();
        }
        for (m, &dm) in d.iter().enumerate() {
            let beta = (-self.shift[m]).exp() + dm;
            if !(beta.is_finite() && beta > 0.0) {
                return Err(Error::Numeric(format!("cell {m}: new-component weight {beta} (d = {dm})")));
            }
            self.assoc.beta_new[m] = beta;
        }
        self.d = d;
        Ok(())
    }

    /// `d / f0` for cell `m`.
    pub fn d_over_f0(&self, m: usize) -> f64 {
        self.d[m] * self.shift[m].exp()
    }

    /// Existence probability of the new component of cell `m` given that it
    /// explains the cell: `d / (f0 + d)`.
    pub fn r_new(&self, m: usize) -> f64 {
        self.d[m] / self.assoc.beta_new[m]
    }
}

fn ln_ratio(z: f64, sigma_sq: f64, noise_var: f64) -> f64 {
    (noise_var / sigma_sq).ln() + 0.5 * z * z * (1.0 / noise_var - 1.0 / sigma_sq)
}

/// Stage-one weights for the predicted posterior and one frame, using the
/// contribution model. Apply [`pmbf_a_mode`] for the contribution-free
/// variant.
pub fn compute_weights(
    pred: &PmbPosterior,
    frame: &Frame,
    table: &ContributionTable,
    noise: &NoiseModel,
) -> Result<UpdateWeights> {
    let grid = &frame.grid;
    let cells = grid.num_cells();
    if table.num_cells() != cells || table.num_bernoulli() != pred.bernoullis().len() {
        return Err(Error::InvalidArgument("contribution table does not match the frame or posterior".into()));
    }
    let z = frame.z();
    let var0 = noise.variance();
    let mut max_ln = vec![f64::NEG_INFINITY; cells];

    let mut legacy_rows = Vec::with_capacity(pred.bernoullis().len());
    let mut legacy = Vec::with_capacity(pred.bernoullis().len());
    for (j, b) in pred.bernoullis().iter().enumerate() {
        let row = table.bernoulli_row(j);
        let mut f = ParticleFactors::with_capacity(b.spatial().len());
        for (x, w) in b.spatial().iter() {
            match grid.cell_of(x.px, x.py) {
                Some(m) => {
                    let slot = row.binary_search_by_key(&m, |c| c.cell).expect("table built from this posterior");
                    let comp = Component::Bernoulli(j);
                    let p1 = marginal_contribution_prob(comp, m, true, x, table, noise);
                    let p0 = marginal_contribution_prob(comp, m, false, x, table, noise);
                    let lr = ln_ratio(z[m], x.gamma + var0, var0);
                    max_ln[m] = max_ln[m].max(lr);
                    f.push(slot as u32, w, p0, p1, lr);
                }
                None => f.push(OUTSIDE, w, 0.0, 0.0, 0.0),
            }
        }
        legacy_rows.push(LegacyWeights {
            label: b.label(),
            beta_empty: 1.0 - b.r(),
            cells: row.iter().map(|c| LegacyCell { cell: c.cell, beta_absent: 0.0, beta_present: 0.0 }).collect(),
        });
        legacy.push(f);
    }

    let mut poisson = ParticleFactors::with_capacity(pred.poisson.support.len());
    for (x, w) in pred.poisson.support.iter() {
        match grid.cell_of(x.px, x.py) {
            Some(m) => {
                let p1 = marginal_contribution_prob(Component::Poisson, m, true, x, table, noise);
                let p0 = marginal_contribution_prob(Component::Poisson, m, false, x, table, noise);
                let lr = ln_ratio(z[m], x.gamma + var0, var0);
                max_ln[m] = max_ln[m].max(lr);
                poisson.push(m as u32, w, p0, p1, lr);
            }
            None => poisson.push(OUTSIDE, w, 0.0, 0.0, 0.0),
        }
    }

    let shift = max_ln.iter().map(|&l| (l - MAX_LN_RATIO).max(0.0)).collect();
    let r: Vec<f64> = pred.bernoullis().iter().map(|b| b.r()).collect();
    let n_legacy = legacy.len();
    let mut w = UpdateWeights {
        mode: FilterMode::Ac,
        assoc: AssociationWeights { legacy: legacy_rows, beta_new: vec![1.0; cells] },
        normalizers: vec![Vec::new(); n_legacy],
        legacy,
        poisson,
        d: vec![0.0; cells],
        shift,
    };
    w.assemble(&r)?;
    Ok(w)
}

/// Contribution-free weights: every occupant contributes (`p1 = 1`) and
/// the "present but not contributing" branch is removed (`β(m, 0) = 0`).
pub fn pmbf_a_mode(w: &UpdateWeights) -> Result<UpdateWeights> {
    let r: Vec<f64> = w.assoc.legacy.iter().map(|l| 1.0 - l.beta_empty).collect();
    let mut out = w.clone();
    out.mode = FilterMode::A;
    out.assemble(&r)?;
    Ok(out)
}

/// Returns the weights for `mode`; the identity for [`FilterMode::Ac`].
pub fn apply_mode(w: UpdateWeights, mode: FilterMode) -> Result<UpdateWeights> {
    match mode {
        FilterMode::Ac => Ok(w),
        FilterMode::A => pmbf_a_mode(&w),
    }
}

/// Posterior PHD of undetected objects: each predicted particle weight is
/// multiplied by the probability that it does not contribute to its cell
/// (0 outside the grid, and 0 everywhere without the contribution model).
pub fn update_phd(
    phd_pred: &PoissonIntensity,
    grid: &CellGrid,
    table: &ContributionTable,
    noise: &NoiseModel,
    mode: FilterMode,
) -> PoissonIntensity {
    let mut states = Vec::with_capacity(phd_pred.support.len());
    let mut weights = Vec::with_capacity(phd_pred.support.len());
    if mode == FilterMode::Ac {
        for (x, w) in phd_pred.support.iter() {
            if let Some(m) = grid.cell_of(x.px, x.py) {
                let p0 = marginal_contribution_prob(Component::Poisson, m, false, x, table, noise);
                if w * p0 > 0.0 {
                    states.push(*x);
                    weights.push(w * p0);
                }
            }
        }
    }
    PoissonIntensity::new(
        WeightedParticleSet::new(states, weights).expect("products of valid weights"),
        phd_pred.capacity,
    )
}

/// New-component candidate for one cell, before its belief is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthCandidate {
    pub cell: usize,
    /// `d / (f0 + d)`.
    pub r_new: f64,
    /// Predicted PHD particles in the cell, reweighted by the contribution
    /// likelihood and normalized.
    pub spatial: WeightedParticleSet,
}

/// One candidate per cell whose `d / f0` exceeds `floor`.
pub fn birth_components(phd_pred: &PoissonIntensity, w: &UpdateWeights, floor: f64) -> Vec<BirthCandidate> {
    let cells = w.d.len();
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); cells];
    let f = &w.poisson;
    for (i, &m) in f.slot.iter().enumerate() {
        if m != OUTSIDE && w.d_over_f0(m as usize) > floor {
            buckets[m as usize].push(i);
        }
    }
    let states = phd_pred.support.states();
    let mut out = Vec::new();
    for (m, idx) in buckets.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let mut st = Vec::with_capacity(idx.len());
        let mut wt = Vec::with_capacity(idx.len());
        for i in idx {
            let (_, p1) = w.effective(f.p0[i], f.p1[i]);
            let v = f.weight[i] * p1 * (f.ln_ratio[i] - w.shift[m]).exp();
            if v > 0.0 {
                st.push(states[i]);
                wt.push(v);
            }
        }
        if let Ok(spatial) = WeightedParticleSet::normalized(st, wt) {
            out.push(BirthCandidate { cell: m, r_new: w.r_new(m), spatial });
        }
    }
    out
}

/// Collapses the association mixture into one Bernoulli per legacy
/// component plus one per birth candidate. Legacy spatial pdfs are the
/// belief-weighted mixtures of their conditionals; new components get
/// `r = p̃(new) · r_new`. New labels are drawn from `next_label`.
pub fn reduce_to_pmb(
    pred: &PmbPosterior,
    w: &UpdateWeights,
    beliefs: &BeliefTable,
    candidates: Vec<BirthCandidate>,
    next_label: &mut Label,
) -> Result<Vec<BernoulliComponent>> {
    if beliefs.legacy.len() != pred.bernoullis().len() || beliefs.new.len() != w.d.len() {
        return Err(Error::InvalidArgument("belief table does not match the posterior".into()));
    }
    let mut out = Vec::with_capacity(pred.bernoullis().len() + candidates.len());
    for (j, b) in pred.bernoullis().iter().enumerate() {
        let bel = &beliefs.legacy[j];
        let norms = &w.normalizers[j];
        // Per-slot mixture coefficients of the normalized conditionals.
        let coef: Vec<(f64, f64)> = bel
            .cells
            .iter()
            .zip(norms)
            .map(|(&(_, q0, q1), &(bn, cn))| {
                (if bn > 0.0 { q0 / bn } else { 0.0 }, if cn > 0.0 { q1 / cn } else { 0.0 })
            })
            .collect();
        let f = &w.legacy[j];
        let weights: Vec<f64> = (0..f.slot.len())
            .map(|i| {
                let s = f.slot[i];
                if s == OUTSIDE {
                    return 0.0;
                }
                let (p0, p1) = w.effective(f.p0[i], f.p1[i]);
                let m = w.legacy_cell(j, s);
                let (k0, k1) = coef[s as usize];
                f.weight[i] * (k0 * p0 + k1 * p1 * (f.ln_ratio[i] - w.shift[m]).exp())
            })
            .collect();
        let r = kahan_sum(weights.iter().copied()).clamp(0.0, 1.0);
        let spatial = match WeightedParticleSet::normalized(b.spatial().states().to_vec(), weights) {
            Ok(s) if r > 0.0 => s,
            _ => b.spatial().clone(),
        };
        let r = if r.is_finite() { r } else { return Err(Error::Numeric(format!("label {}: r = {r}", b.label()))) };
        out.push(BernoulliComponent::new(r, spatial, b.label())?);
    }
    for c in candidates {
        let r = (beliefs.new[c.cell] * c.r_new).clamp(0.0, 1.0);
        out.push(BernoulliComponent::new(r, c.spatial, *next_label)?);
        *next_label += 1;
    }
    Ok(out)
}

/// Moves every Bernoulli with `r < threshold` into the PHD as `r · f`.
pub fn recycle(p: PmbPosterior, threshold: f64) -> Result<PmbPosterior> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("recycling threshold {threshold} outside [0, 1]")));
    }
    let (mut phd, bernoullis, k) = p.into_parts();
    let mut kept = Vec::with_capacity(bernoullis.len());
    for b in bernoullis {
        if b.r() < threshold {
            if b.r() > 0.0 {
                phd.support.extend_scaled(b.spatial(), b.r());
            }
        } else {
            kept.push(b);
        }
    }
    PmbPosterior::new(phd, kept, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub label: Label,
    pub state: ObjectState,
    pub r: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateSet {
    pub estimates: Vec<Estimate>,
}

impl EstimateSet {
    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.estimates.iter().map(|e| e.state.position()).collect()
    }
}

/// Reports every Bernoulli with `r ≥ declare_threshold` by its mean state.
pub fn extract_estimates(p: &PmbPosterior, declare_threshold: f64) -> EstimateSet {
    let estimates = p
        .bernoullis()
        .iter()
        .filter(|b| b.r() >= declare_threshold)
        .filter_map(|b| b.spatial().mean_state().map(|state| Estimate { label: b.label(), state, r: b.r() }))
        .collect();
    EstimateSet { estimates }
}
