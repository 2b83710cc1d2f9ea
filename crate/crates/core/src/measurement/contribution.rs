//! Mean object contributions and the approximate per-object marginal
//! contribution probabilities used by the update.
//!
//! The exact probability that a given object contributes to its cell
//! depends on every other occupant. The update replaces the other
//! occupants' `σ²` by their mean contributions `σ̄²_{j,m}`:
//!
//! ```text
//! p(θ = 1 | x) ≈ σ²_m(x) / (σ²_m(x) + Σ_{j' ≠ j} σ̄²_{j',m})
//! ```
//!
//! Competitors of a component in cell `m` are all *other* components whose
//! predicted in-cell mass exceeds [`MEMBER_MASS_FLOOR`]. The Poisson
//! component always competes with its own mean contribution: given one
//! undetected object at `x`, the remaining undetected objects are still
//! Poisson with the same intensity.

use std::collections::BTreeMap;

use super::grid::CellGrid;
use super::swerling::NoiseModel;
use crate::state::{ObjectState, PmbPosterior};

/// Predicted in-cell mass below which a component is not a competitor.
pub const MEMBER_MASS_FLOOR: f64 = 1e-6;

/// Mean contribution of one component to one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellContribution {
    pub cell: usize,
    /// `σ̄²_{j,m}` (for Bernoullis already scaled by `r`).
    pub sigma_bar_sq: f64,
    /// Predicted probability mass of the component inside the cell.
    pub mass: f64,
}

/// Identifies a row of the [`ContributionTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    /// Index into the predicted posterior's Bernoulli list.
    Bernoulli(usize),
    Poisson,
}

/// Sparse table of mean contributions `σ̄²_{j,m}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionTable {
    bernoulli: Vec<Vec<CellContribution>>,
    poisson_sigma_bar_sq: Vec<f64>,
    poisson_mass: Vec<f64>,
    /// Σ σ̄² over all components above the mass floor, per cell.
    member_total: Vec<f64>,
}

impl ContributionTable {
    /// Builds a table from explicit rows. Bernoulli rows may list cells in
    /// any order; the Poisson vectors are dense over the cells.
    pub fn from_rows(
        num_cells: usize,
        bernoulli: Vec<Vec<CellContribution>>,
        poisson_sigma_bar_sq: Vec<f64>,
        poisson_mass: Vec<f64>,
    ) -> Self {
        assert_eq!(poisson_sigma_bar_sq.len(), num_cells);
        assert_eq!(poisson_mass.len(), num_cells);
        let mut bernoulli = bernoulli;
        for row in &mut bernoulli {
            row.sort_by_key(|c| c.cell);
        }
        let mut member_total = vec![0.0; num_cells];
        for row in &bernoulli {
            for c in row {
                if c.mass > MEMBER_MASS_FLOOR {
                    member_total[c.cell] += c.sigma_bar_sq;
                }
            }
        }
        for m in 0..num_cells {
            if poisson_mass[m] > MEMBER_MASS_FLOOR {
                member_total[m] += poisson_sigma_bar_sq[m];
            }
        }
        Self { bernoulli, poisson_sigma_bar_sq, poisson_mass, member_total }
    }

    pub fn num_cells(&self) -> usize {
        self.member_total.len()
    }

    pub fn bernoulli_row(&self, j: usize) -> &[CellContribution] {
        &self.bernoulli[j]
    }

    pub fn num_bernoulli(&self) -> usize {
        self.bernoulli.len()
    }

    pub fn poisson_sigma_bar_sq(&self, m: usize) -> f64 {
        self.poisson_sigma_bar_sq[m]
    }

    pub fn poisson_mass(&self, m: usize) -> f64 {
        self.poisson_mass[m]
    }

    /// `σ̄²_{j,m}`; zero where the component has no mass.
    pub fn entry(&self, component: Component, m: usize) -> CellContribution {
        match component {
            Component::Poisson => {
                CellContribution { cell: m, sigma_bar_sq: self.poisson_sigma_bar_sq[m], mass: self.poisson_mass[m] }
            }
            Component::Bernoulli(j) => {
                let row = &self.bernoulli[j];
                match row.binary_search_by_key(&m, |c| c.cell) {
                    Ok(i) => row[i],
                    Err(_) => CellContribution { cell: m, sigma_bar_sq: 0.0, mass: 0.0 },
                }
            }
        }
    }

    /// Σ σ̄² over the competitors of `component` in cell `m`.
    pub fn competitor_sum(&self, component: Component, m: usize) -> f64 {
        match component {
            Component::Poisson => self.member_total[m],
            Component::Bernoulli(_) => {
                let own = self.entry(component, m);
                let own = if own.mass > MEMBER_MASS_FLOOR { own.sigma_bar_sq } else { 0.0 };
                (self.member_total[m] - own).max(0.0)
            }
        }
    }
}

/// Computes `σ̄²_{j,m}` for every Bernoulli (`r · E_f[δ_m σ²_m]`) and for
/// the Poisson intensity (`∫ δ_m σ²_m λ`) by particle sums.
pub fn mean_contributions(pred: &PmbPosterior, grid: &CellGrid, noise: &NoiseModel) -> ContributionTable {
    let m_total = grid.num_cells();
    let var0 = noise.variance();
    let bernoulli = pred
        .bernoullis()
        .iter()
        .map(|b| {
            let mut acc: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
            for (x, w) in b.spatial().iter() {
                if let Some(m) = grid.cell_of(x.px, x.py) {
                    let e = acc.entry(m).or_insert((0.0, 0.0));
                    e.0 += w * (x.gamma + var0);
                    e.1 += w;
                }
            }
            acc.into_iter()
                .map(|(cell, (s, mass))| CellContribution { cell, sigma_bar_sq: b.r() * s, mass: b.r() * mass })
                .collect()
        })
        .collect();
    let mut sigma = vec![0.0; m_total];
    let mut mass = vec![0.0; m_total];
    for (x, w) in pred.poisson.support.iter() {
        if let Some(m) = grid.cell_of(x.px, x.py) {
            sigma[m] += w * (x.gamma + var0);
            mass[m] += w;
        }
    }
    ContributionTable::from_rows(m_total, bernoulli, sigma, mass)
}

/// Probability that an object of `component` at state `x` (inside cell
/// `m`) does (`theta = true`) or does not contribute to cell `m`.
pub fn marginal_contribution_prob(
    component: Component,
    m: usize,
    theta: bool,
    x: &ObjectState,
    table: &ContributionTable,
    noise: &NoiseModel,
) -> f64 {
    let own = x.gamma + noise.variance();
    let competitors = table.competitor_sum(component, m);
    let denom = own + competitors;
    if theta {
        own / denom
    } else {
        competitors / denom
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{BernoulliComponent, PoissonIntensity, WeightedParticleSet};
    use crate::testing::{normal_draws, uniform_draws};

    fn grid() -> CellGrid {
        CellGrid::new(4, 4, 1.0, [0.0, 0.0]).unwrap()
    }

    fn obj(px: f64, py: f64, gamma: f64) -> ObjectState {
        ObjectState { px, py, vx: 0.0, vy: 0.0, gamma }
    }

    fn posterior(bs: Vec<(f64, Vec<ObjectState>)>, phd: Vec<(ObjectState, f64)>) -> PmbPosterior {
        let bernoullis = bs
            .into_iter()
            .enumerate()
            .map(|(i, (r, states))| {
                BernoulliComponent::new(r, WeightedParticleSet::uniform(states, 1.0), i as u64).unwrap()
            })
            .collect();
        let (states, weights) = phd.into_iter().unzip();
        PmbPosterior::new(PoissonIntensity::new(WeightedParticleSet::new(states, weights).unwrap(), 100), bernoullis, 0)
            .unwrap()
    }

    #[test]
    fn zero_existence_gives_zero_row() {
        let p = posterior(vec![(0.0, vec![obj(0.5, 0.5, 10.0)])], vec![]);
        let t = mean_contributions(&p, &grid(), &NoiseModel::new(1.0).unwrap());
        assert!(t.bernoulli_row(0).iter().all(|c| c.sigma_bar_sq == 0.0 && c.mass == 0.0));
    }

    #[test]
    fn degenerate_particle_set_gives_single_entry() {
        let g = grid();
        let p = posterior(vec![(1.0, vec![obj(2.5, 1.5, 10.0); 5])], vec![]);
        let t = mean_contributions(&p, &g, &NoiseModel::new(1.0).unwrap());
        let m = g.cell_of(2.5, 1.5).unwrap();
        for cell in 0..g.num_cells() {
            let e = t.entry(Component::Bernoulli(0), cell).sigma_bar_sq;
            if cell == m {
                assert!((e - 11.0).abs() < 1e-12);
            } else {
                assert_eq!(e, 0.0);
            }
        }
    }

    #[test]
    fn bernoulli_rows_scale_linearly_in_r() {
        let g = grid();
        let noise = NoiseModel::new(1.0).unwrap();
        let states: Vec<_> = (0..40).map(|i| obj(0.1 * i as f64, 0.05 * i as f64, 1.0 + i as f64 * 0.3)).collect();
        let full = mean_contributions(&posterior(vec![(1.0, states.clone())], vec![]), &g, &noise);
        let part = mean_contributions(&posterior(vec![(0.3, states)], vec![]), &g, &noise);
        for (a, b) in full.bernoulli_row(0).iter().zip(part.bernoulli_row(0)) {
            assert_eq!(a.cell, b.cell);
            assert!((0.3 * a.sigma_bar_sq - b.sigma_bar_sq).abs() < 1e-12);
        }
    }

    #[test]
    fn poisson_row_matches_quadrature_for_gaussian_intensity() {
        // Intensity: mass 2.0 · N(p; (1.8, 2.3), diag(0.6², 0.4²)), gamma ~ U[0, 6].
        let g = grid();
        let noise = NoiseModel::new(1.0).unwrap();
        let (mx, my, sx, sy, mass) = (1.8, 2.3, 0.6, 0.4, 2.0);
        let n = 100_000;
        let mut normal = normal_draws(3);
        let mut unif = uniform_draws(4);
        let states: Vec<_> = (0..n).map(|_| obj(mx + sx * normal(), my + sy * normal(), 6.0 * unif())).collect();
        let p = posterior(vec![], states.into_iter().map(|s| (s, mass / n as f64)).collect());
        let t = mean_contributions(&p, &g, &noise);
        // Dense midpoint quadrature of the Gaussian over each cell; E[γ + 1] = 4.
        for m in 0..g.num_cells() {
            let [x0, y0] = g.cell_origin(m);
            let k = 400;
            let h = 1.0 / k as f64;
            let mut prob = 0.0;
            for i in 0..k {
                for j in 0..k {
                    let x = x0 + (i as f64 + 0.5) * h;
                    let y = y0 + (j as f64 + 0.5) * h;
                    let q = ((x - mx) / sx).powi(2) + ((y - my) / sy).powi(2);
                    prob += (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * sx * sy) * h * h;
                }
            }
            let expected = mass * prob * 4.0;
            if expected > 1.0 {
                let got = t.poisson_sigma_bar_sq(m);
                assert!((got - expected).abs() <= 0.02 * expected, "cell {m}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn marginal_probability_examples() {
        let noise = NoiseModel::new(1.0).unwrap();
        let x = obj(0.5, 0.5, 10.0);
        let alone = ContributionTable::from_rows(
            4,
            vec![vec![CellContribution { cell: 0, sigma_bar_sq: 11.0, mass: 1.0 }]],
            vec![0.0; 4],
            vec![0.0; 4],
        );
        assert_eq!(marginal_contribution_prob(Component::Bernoulli(0), 0, true, &x, &alone, &noise), 1.0);
        assert_eq!(marginal_contribution_prob(Component::Bernoulli(0), 0, false, &x, &alone, &noise), 0.0);

        let shared = ContributionTable::from_rows(
            4,
            vec![
                vec![CellContribution { cell: 0, sigma_bar_sq: 11.0, mass: 1.0 }],
                vec![CellContribution { cell: 0, sigma_bar_sq: 11.0, mass: 1.0 }],
            ],
            vec![0.0; 4],
            vec![0.0; 4],
        );
        assert!(
            (marginal_contribution_prob(Component::Bernoulli(0), 0, true, &x, &shared, &noise) - 0.5).abs() < 1e-15
        );
    }

    #[test]
    fn competitor_rules() {
        let t = ContributionTable::from_rows(
            2,
            vec![
                vec![CellContribution { cell: 1, sigma_bar_sq: 3.0, mass: 0.5 }],
                vec![CellContribution { cell: 1, sigma_bar_sq: 1e-9, mass: 1e-9 }],
            ],
            vec![0.0, 0.25],
            vec![0.0, 0.1],
        );
        // Bernoulli 1 is below the floor and never competes.
        assert_eq!(t.competitor_sum(Component::Bernoulli(0), 1), 0.25);
        assert_eq!(t.competitor_sum(Component::Bernoulli(1), 1), 3.25);
        // The Poisson component competes with its own mean.
        assert_eq!(t.competitor_sum(Component::Poisson, 1), 3.25);
        assert_eq!(t.competitor_sum(Component::Poisson, 0), 0.0);
    }

    #[test]
    fn marginal_probabilities_are_complementary() {
        let noise = NoiseModel::new(1.3).unwrap();
        let mut u = uniform_draws(8);
        for _ in 0..200 {
            let t = ContributionTable::from_rows(
                1,
                vec![
                    vec![CellContribution { cell: 0, sigma_bar_sq: 20.0 * u(), mass: u() }],
                    vec![CellContribution { cell: 0, sigma_bar_sq: 20.0 * u(), mass: u() }],
                ],
                vec![5.0 * u()],
                vec![u()],
            );
            let x = obj(0.5, 0.5, 30.0 * u());
            for c in [Component::Bernoulli(0), Component::Bernoulli(1), Component::Poisson] {
                let p1 = marginal_contribution_prob(c, 0, true, &x, &t, &noise);
                let p0 = marginal_contribution_prob(c, 0, false, &x, &t, &noise);
                assert!((0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p0));
                assert!((p1 + p0 - 1.0).abs() < 1e-15);
            }
        }
    }
}
