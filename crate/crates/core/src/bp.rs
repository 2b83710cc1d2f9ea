//! Marginal association probabilities by loopy belief propagation on the
//! component/cell factor graph, plus an exhaustive oracle for small cases.
//!
//! Weights are relative: every likelihood has been divided by the product
//! of noise-only likelihoods over all cells, so an unclaimed cell with no
//! new object has weight 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One cell in which a legacy component has mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegacyCell {
    pub cell: usize,
    /// Weight of "located in the cell, does not contribute" (θ = 0).
    pub beta_absent: f64,
    /// Weight of "located in the cell and contributes" (θ = 1).
    pub beta_present: f64,
}

/// Association weights of one legacy Bernoulli component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegacyWeights {
    pub label: u64,
    /// Weight of nonexistence, `1 − r`.
    pub beta_empty: f64,
    /// Sorted by cell, one entry per cell with positive weight.
    pub cells: Vec<LegacyCell>,
}

impl LegacyWeights {
    /// `β_empty + Σ_m β(m, 0)`: total weight of options that claim no cell.
    pub fn beta_unclaimed(&self) -> f64 {
        self.beta_empty + self.cells.iter().map(|c| c.beta_absent).sum::<f64>()
    }
}

/// Weights of one association problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationWeights {
    pub legacy: Vec<LegacyWeights>,
    /// Per cell, the weight `β'` of the cell's new component explaining the
    /// intensity (Poisson object or noise).
    pub beta_new: Vec<f64>,
}

impl AssociationWeights {
    pub fn num_cells(&self) -> usize {
        self.beta_new.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |v: f64| !(v.is_finite() && v >= 0.0);
        for (m, &b) in self.beta_new.iter().enumerate() {
            if bad(b) || b <= 0.0 {
                return Err(Error::Numeric(format!(
                    "new-component weight {b} in cell {m} must be positive and finite"
                )));
            }
        }
        for (j, l) in self.legacy.iter().enumerate() {
            if bad(l.beta_empty) {
                return Err(Error::Numeric(format!("component {j}: nonexistence weight {}", l.beta_empty)));
            }
            let mut total = l.beta_empty;
            let mut prev = None;
            for c in &l.cells {
                if c.cell >= self.num_cells() || prev.is_some_and(|p| p >= c.cell) {
                    return Err(Error::InvalidArgument(format!(
                        "component {j}: cells must be sorted, unique, in range"
                    )));
                }
                if bad(c.beta_absent) || bad(c.beta_present) {
                    return Err(Error::Numeric(format!(
                        "component {j}, cell {}: weights ({}, {})",
                        c.cell, c.beta_absent, c.beta_present
                    )));
                }
                total += c.beta_absent + c.beta_present;
                prev = Some(c.cell);
            }
            if !(total > 0.0) {
                return Err(Error::Numeric(format!("component {j} has an all-zero weight row")));
            }
        }
        Ok(())
    }

    /// True if no cell is shared by two legacy components and each component
    /// claims at most one cell, i.e. the factor graph is a forest.
    pub fn is_loop_free(&self) -> bool {
        self.legacy.iter().all(|l| l.cells.iter().filter(|c| c.beta_present > 0.0).count() <= 1)
    }
}

/// Marginal association pmf of one legacy component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegacyBelief {
    pub empty: f64,
    /// `(cell, p(m, θ=0), p(m, θ=1))`, aligned with the weight row.
    pub cells: Vec<(usize, f64, f64)>,
}

impl LegacyBelief {
    /// Existence probability implied by the pmf.
    pub fn existence(&self) -> f64 {
        self.cells.iter().map(|&(_, a, b)| a + b).sum::<f64>()
    }

    pub fn total(&self) -> f64 {
        self.empty + self.existence()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefTable {
    pub legacy: Vec<LegacyBelief>,
    /// Per cell, the probability that the cell's new component explains it.
    pub new: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpConfig {
    pub max_iterations: usize,
    /// Maximum change of any `ln ν` between sweeps.
    pub convergence_tol: f64,
    pub damping: f64,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self { max_iterations: 200, convergence_tol: 1e-6, damping: 0.0 }
    }
}

impl BpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("bp.max_iterations must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::InvalidArgument("bp.convergence_tol must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidArgument("bp.damping must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Messages on the edges `(j, m)` with `β(j, m, 1) > 0`, in edge order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageState {
    pub edges: Vec<(usize, usize)>,
    pub zeta: Vec<f64>,
    pub nu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpOutput {
    pub beliefs: BeliefTable,
    pub messages: MessageState,
    pub iterations: usize,
    pub converged: bool,
    /// Number of divisions whose denominator was raised to the floor.
    pub floored: usize,
}

pub const DENOMINATOR_FLOOR: f64 = 1e-300;

struct Graph {
    edges: Vec<(usize, usize)>,
    beta: Vec<f64>,
    /// Edge ranges per legacy component.
    by_component: Vec<std::ops::Range<usize>>,
    /// Edge indices per cell, ascending.
    by_cell: Vec<Vec<usize>>,
}

impl Graph {
    fn new(w: &AssociationWeights) -> Self {
        let mut edges = Vec::new();
        let mut beta = Vec::new();
        let mut by_component = Vec::with_capacity(w.legacy.len());
        let mut by_cell = vec![Vec::new(); w.num_cells()];
        for (j, l) in w.legacy.iter().enumerate() {
            let start = edges.len();
            for c in l.cells.iter().filter(|c| c.beta_present > 0.0) {
                by_cell[c.cell].push(edges.len());
                edges.push((j, c.cell));
                beta.push(c.beta_present);
            }
            by_component.push(start..edges.len());
        }
        Self { edges, beta, by_component, by_cell }
    }
}

/// For each position `i`, `base + Σ_{k≠i} terms[k]` via prefix and suffix sums.
fn leave_one_out(base: f64, terms: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let n = terms.len();
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + terms[i];
    }
    let mut prefix = 0.0;
    for i in 0..n {
        out.push(base + prefix + suffix[i + 1]);
        prefix += terms[i];
    }
}

fn floored(den: f64, count: &mut usize) -> f64 {
    if den < DENOMINATOR_FLOOR {
        *count += 1;
        DENOMINATOR_FLOOR
    } else {
        den
    }
}

/// Runs synchronous loopy BP from `ν = 1` until the largest log-domain
/// change of `ν` drops below the tolerance or the iteration cap is hit.
pub fn run_bp(w: &AssociationWeights, cfg: &BpConfig) -> Result<BpOutput> {
    cfg.validate()?;
    w.validate()?;
    let g = Graph::new(w);
    let unclaimed: Vec<f64> = w.legacy.iter().map(LegacyWeights::beta_unclaimed).collect();
    let ne = g.edges.len();
    let mut nu = vec![1.0; ne];
    let mut zeta = vec![0.0; ne];
    let mut floored_count = 0;
    let mut iterations = 0;
    let mut converged = ne == 0;
    let mut terms = Vec::new();
    let mut sums = Vec::new();

    while !converged && iterations < cfg.max_iterations {
        iterations += 1;
        for (j, range) in g.by_component.iter().enumerate() {
            terms.clear();
            terms.extend(range.clone().map(|e| g.beta[e] * nu[e]));
            leave_one_out(unclaimed[j], &terms, &mut sums);
            for (k, e) in range.clone().enumerate() {
                zeta[e] = g.beta[e] / floored(sums[k], &mut floored_count);
            }
        }
        let mut delta: f64 = 0.0;
        for (m, cell_edges) in g.by_cell.iter().enumerate() {
            terms.clear();
            terms.extend(cell_edges.iter().map(|&e| zeta[e]));
            leave_one_out(w.beta_new[m], &terms, &mut sums);
            for (k, &e) in cell_edges.iter().enumerate() {
                let fresh = 1.0 / floored(sums[k], &mut floored_count);
                let next = (1.0 - cfg.damping) * fresh + cfg.damping * nu[e];
                delta = delta.max((next.ln() - nu[e].ln()).abs());
                nu[e] = next;
            }
        }
        if !delta.is_finite() || zeta.iter().any(|z| !z.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite message after iteration {iterations}; instance: {}",
                dump_instance(w, None)
            )));
        }
        converged = delta < cfg.convergence_tol;
    }

    let mut legacy = Vec::with_capacity(w.legacy.len());
    let mut k = 0;
    for (j, l) in w.legacy.iter().enumerate() {
        let mut cells = Vec::with_capacity(l.cells.len());
        for c in &l.cells {
            let present = if c.beta_present > 0.0 {
                let e = k;
                k += 1;
                debug_assert_eq!(g.edges[e], (j, c.cell));
                c.beta_present * nu[e]
            } else {
                0.0
            };
            cells.push((c.cell, c.beta_absent, present));
        }
        let n = l.beta_empty + cells.iter().map(|&(_, a, b)| a + b).sum::<f64>();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Numeric(format!("component {j}: belief normalizer {n}")));
        }
        for cell in &mut cells {
            cell.1 /= n;
            cell.2 /= n;
        }
        legacy.push(LegacyBelief { empty: l.beta_empty / n, cells });
    }

    let mut new = w.beta_new.clone();
    for (m, cell_edges) in g.by_cell.iter().enumerate() {
        let total: f64 = w.beta_new[m] + cell_edges.iter().map(|&e| zeta[e]).sum::<f64>();
        new[m] = w.beta_new[m] / total;
    }

    Ok(BpOutput {
        beliefs: BeliefTable { legacy, new },
        messages: MessageState { edges: g.edges, zeta, nu },
        iterations,
        converged,
        floored: floored_count,
    })
}

/// Largest instance [`exact_marginals`] will enumerate.
pub const EXACT_LIMIT: f64 = 1e7;

#[derive(Clone, Copy)]
enum Choice {
    Empty,
    Absent(usize),
    Present(usize),
}

/// Exact marginals by summing the weight of every admissible joint
/// association: each legacy component picks nonexistence or a
/// `(cell, θ)` pair, no two components contribute to the same cell, and
/// every cell not claimed by a legacy component carries its `β'`.
pub fn exact_marginals(w: &AssociationWeights) -> Result<BeliefTable> {
    w.validate()?;
    let options: Vec<Vec<(Choice, f64)>> = w
        .legacy
        .iter()
        .map(|l| {
            let mut o = vec![(Choice::Empty, l.beta_empty)];
            for (i, c) in l.cells.iter().enumerate() {
                if c.beta_absent > 0.0 {
                    o.push((Choice::Absent(i), c.beta_absent));
                }
                if c.beta_present > 0.0 {
                    o.push((Choice::Present(i), c.beta_present));
                }
            }
            o
        })
        .collect();
    let configurations: f64 = options.iter().map(|o| o.len() as f64).product();
    if configurations > EXACT_LIMIT {
        return Err(Error::TooLarge { configurations, limit: EXACT_LIMIT });
    }

    let m_count = w.num_cells();
    let new_all: f64 = w.beta_new.iter().product();
    let mut legacy: Vec<LegacyBelief> = w
        .legacy
        .iter()
        .map(|l| LegacyBelief { empty: 0.0, cells: l.cells.iter().map(|c| (c.cell, 0.0, 0.0)).collect() })
        .collect();
    let mut new_unclaimed = vec![0.0; m_count];
    let mut total = 0.0;

    let mut idx = vec![0usize; options.len()];
    let mut claimed = vec![false; m_count];
    loop {
        claimed.iter_mut().for_each(|c| *c = false);
        let mut weight = new_all;
        let mut admissible = true;
        for (j, &i) in idx.iter().enumerate() {
            let (choice, b) = options[j][i];
            weight *= b;
            if let Choice::Present(ci) = choice {
                let m = w.legacy[j].cells[ci].cell;
                if claimed[m] {
                    admissible = false;
                    break;
                }
                claimed[m] = true;
                weight /= w.beta_new[m];
            }
        }
        if admissible && weight > 0.0 {
            total += weight;
            for (j, &i) in idx.iter().enumerate() {
                match options[j][i].0 {
                    Choice::Empty => legacy[j].empty += weight,
                    Choice::Absent(ci) => legacy[j].cells[ci].1 += weight,
                    Choice::Present(ci) => legacy[j].cells[ci].2 += weight,
                }
            }
            for m in 0..m_count {
                if !claimed[m] {
                    new_unclaimed[m] += weight;
                }
            }
        }
        // Odometer increment.
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return finish(legacy, new_unclaimed, total);
            }
            idx[pos] += 1;
            if idx[pos] < options[pos].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn finish(mut legacy: Vec<LegacyBelief>, mut new: Vec<f64>, total: f64) -> Result<BeliefTable> {
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Numeric(format!("joint association normalizer {total}")));
    }
    for l in &mut legacy {
        l.empty /= total;
        for c in &mut l.cells {
            c.1 /= total;
            c.2 /= total;
        }
    }
    new.iter_mut().for_each(|v| *v /= total);
    Ok(BeliefTable { legacy, new })
}

/// Largest absolute difference between two belief tables of equal shape.
pub fn max_abs_difference(a: &BeliefTable, b: &BeliefTable) -> f64 {
    let mut d: f64 = 0.0;
    for (x, y) in a.legacy.iter().zip(&b.legacy) {
        d = d.max((x.empty - y.empty).abs());
        for (p, q) in x.cells.iter().zip(&y.cells) {
            d = d.max((p.1 - q.1).abs()).max((p.2 - q.2).abs());
        }
    }
    for (x, y) in a.new.iter().zip(&b.new) {
        d = d.max((x - y).abs());
    }
    d
}

#[derive(Serialize)]
struct Dump<'a> {
    weights: &'a AssociationWeights,
    beliefs: Option<&'a BeliefTable>,
}

/// JSON dump of an association instance and, if given, its beliefs.
pub fn dump_instance(w: &AssociationWeights, beliefs: Option<&BeliefTable>) -> String {
    serde_json::to_string_pretty(&Dump { weights: w, beliefs }).expect("plain data serializes")
}

/// Reads back the weights from a [`dump_instance`] document.
pub fn load_instance(text: &str) -> Result<AssociationWeights> {
    #[derive(Deserialize)]
    struct Owned {
        weights: AssociationWeights,
    }
    serde_json::from_str::<Owned>(text)
        .map(|o| o.weights)
        .map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cell(cell: usize, beta_absent: f64, beta_present: f64) -> LegacyCell {
        LegacyCell { cell, beta_absent, beta_present }
    }

    fn legacy(label: u64, beta_empty: f64, cells: Vec<LegacyCell>) -> LegacyWeights {
        LegacyWeights { label, beta_empty, cells }
    }

    #[test]
    fn no_legacy_components() {
        let w = AssociationWeights { legacy: vec![], beta_new: vec![1.0, 3.5, 1.2] };
        let out = run_bp(&w, &BpConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.beliefs.new, vec![1.0; 3]);
        assert_eq!(exact_marginals(&w).unwrap().new, vec![1.0; 3]);
    }

    #[test]
    fn single_component_three_terms() {
        // Exact enumeration on the single-component case, unit β' so the new
        // components do not reweight anything.
        let w = AssociationWeights {
            legacy: vec![legacy(0, 1.0, vec![cell(0, 0.0, 2.0), cell(1, 0.0, 1.0)])],
            beta_new: vec![1.0, 1.0],
        };
        let ex = exact_marginals(&w).unwrap();
        assert!((ex.legacy[0].cells[0].2 - 0.5).abs() < 1e-15);
        assert!((ex.legacy[0].cells[1].2 - 0.25).abs() < 1e-15);
        assert!((ex.legacy[0].empty - 0.25).abs() < 1e-15);
    }

    #[test]
    fn one_plausible_cell_matches_closed_form() {
        let (b0, b1, bn) = (0.4, 2.5, 1.7);
        let w =
            AssociationWeights { legacy: vec![legacy(9, 0.3, vec![cell(1, 0.1, b1)])], beta_new: vec![1.0, bn, 1.0] };
        let out = run_bp(&w, &BpConfig::default()).unwrap();
        // ν = 1/β' on a single edge, so p(m,1) = β1/β' / (β0 + β1/β').
        let n = b0 + b1 / bn;
        let bel = &out.beliefs.legacy[0];
        assert!((bel.cells[0].2 - b1 / bn / n).abs() < 1e-12);
        assert!((bel.empty - 0.3 / n).abs() < 1e-12);
        let ex = exact_marginals(&w).unwrap();
        assert!(max_abs_difference(&out.beliefs, &ex) < 1e-12);
    }

    #[test]
    fn admissibility_forbids_double_claims() {
        // Both components can only exist by contributing to cell 0.
        let w = AssociationWeights {
            legacy: vec![legacy(0, 1e-9, vec![cell(0, 0.0, 5.0)]), legacy(1, 1e-9, vec![cell(0, 0.0, 5.0)])],
            beta_new: vec![1.0],
        };
        let ex = exact_marginals(&w).unwrap();
        // Joint with both present has weight 0, so together they sum to at most 1.
        let both = ex.legacy[0].cells[0].2 + ex.legacy[1].cells[0].2;
        assert!(both <= 1.0 + 1e-12);
        assert!((ex.legacy[0].cells[0].2 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn refuses_large_instances() {
        let cells: Vec<LegacyCell> = (0..9).map(|m| cell(m, 1.0, 1.0)).collect();
        let w = AssociationWeights {
            legacy: (0..6).map(|j| legacy(j, 1.0, cells.clone())).collect(),
            beta_new: vec![1.0; 9],
        };
        assert!(matches!(exact_marginals(&w), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn invalid_weights_rejected() {
        let w = AssociationWeights { legacy: vec![legacy(0, 0.0, vec![cell(0, 0.0, 0.0)])], beta_new: vec![1.0] };
        assert!(run_bp(&w, &BpConfig::default()).is_err());
        let w = AssociationWeights { legacy: vec![legacy(0, 1.0, vec![cell(0, f64::NAN, 1.0)])], beta_new: vec![1.0] };
        assert!(matches!(run_bp(&w, &BpConfig::default()), Err(Error::Numeric(_))));
        let bad_cfg = BpConfig { max_iterations: 0, ..BpConfig::default() };
        assert!(bad_cfg.validate().is_err());
    }

    #[test]
    fn dump_roundtrip() {
        let w = AssociationWeights {
            legacy: vec![legacy(4, 0.2, vec![cell(0, 0.1, 2.0), cell(2, 0.0, 0.3)])],
            beta_new: vec![1.5, 1.0, 2.0],
        };
        let out = run_bp(&w, &BpConfig::default()).unwrap();
        let text = dump_instance(&w, Some(&out.beliefs));
        assert_eq!(load_instance(&text).unwrap(), w);
    }

    fn instance(max_j: usize, max_m: usize) -> impl Strategy<Value = AssociationWeights> {
        (1..=max_m, 0..=max_j).prop_flat_map(move |(m, j)| {
            let row = (0.01f64..1.0, prop::collection::vec((prop::bool::weighted(0.7), 0.0f64..1.0, 0.0f64..5.0), m));
            (prop::collection::vec(row, j), prop::collection::vec(1.0f64..4.0, m)).prop_map(|(rows, beta_new)| {
                let legacy = rows
                    .into_iter()
                    .enumerate()
                    .map(|(j, (e, cells))| LegacyWeights {
                        label: j as u64,
                        beta_empty: e,
                        cells: cells
                            .into_iter()
                            .enumerate()
                            .filter(|(_, c)| c.0)
                            .map(|(m, (_, a, p))| cell(m, a, p))
                            .collect(),
                    })
                    .collect();
                AssociationWeights { legacy, beta_new }
            })
        })
    }

    proptest! {
        #[test]
        fn beliefs_normalized_and_close_to_exact(w in instance(3, 4)) {
            let out = run_bp(&w, &BpConfig::default()).unwrap();
            for l in &out.beliefs.legacy {
                prop_assert!((l.total() - 1.0).abs() < 1e-9);
                prop_assert!(l.cells.iter().all(|c| (0.0..=1.0).contains(&c.1) && (0.0..=1.0).contains(&c.2)));
            }
            prop_assert!(out.messages.zeta.iter().chain(&out.messages.nu).all(|v| *v > 0.0 && v.is_finite()));
            let ex = exact_marginals(&w).unwrap();
            let d = max_abs_difference(&out.beliefs, &ex);
            if w.is_loop_free() {
                prop_assert!(d < 1e-12, "loop-free mismatch {}", d);
            } else {
                prop_assert!(d < 0.05, "loopy mismatch {}", d);
            }
        }
    }
}
