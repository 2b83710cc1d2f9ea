//! GOSPA error between two point sets in the plane, with its
//! localization / missed / false decomposition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GospaConfig {
    pub c: f64,
    pub p: f64,
    pub alpha: f64,
}

impl Default for GospaConfig {
    fn default() -> Self {
        Self { c: 10.0, p: 1.0, alpha: 2.0 }
    }
}

impl GospaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidArgument(format!("gospa cutoff {} must be positive", self.c)));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidArgument(format!("gospa order {} must be at least 1", self.p)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::InvalidArgument(format!("gospa alpha {} must lie in (0, 2]", self.alpha)));
        }
        Ok(())
    }
}

/// `total = (localization + missed + false_)^(1/p)`; the three parts are
/// sums of p-th powers, so for `p = 1` they add up to the total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GospaResult {
    pub total: f64,
    pub localization: f64,
    pub missed: f64,
    pub false_: f64,
}

/// Minimum-cost assignment of every row to a distinct column
/// (`rows ≤ cols`). Returns the column of each row.
///
/// Shortest augmenting path form of the Hungarian method, `O(n² m)`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "more rows than columns");
    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            out[owner[j] - 1] = j - 1;
        }
    }
    out
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// GOSPA between position sets, via an optimal assignment.
///
/// Pairs at distance `≥ c` are counted as one missed and one false object;
/// with `α = 2` this costs the same as the cut-off pair distance.
pub fn gospa(truth: &[[f64; 2]], est: &[[f64; 2]], cfg: &GospaConfig) -> Result<GospaResult> {
    cfg.validate()?;
    let (n, m) = (truth.len(), est.len());
    let unassigned = cfg.c.powf(cfg.p) / cfg.alpha;
    // Rows are truth objects; the first m columns are estimates, the next n
    // are "missed" slots. Matching saves the false-object penalty.
    let cost: Vec<Vec<f64>> = truth
        .iter()
        .map(|t| {
            let mut row: Vec<f64> = est.iter().map(|e| dist(*t, *e).min(cfg.c).powf(cfg.p) - unassigned).collect();
            row.extend(std::iter::repeat_n(unassigned, n));
            row
        })
        .collect();
    let assignment = hungarian(&cost);
    let mut res = GospaResult::default();
    let mut matched = 0;
    for (i, &j) in assignment.iter().enumerate() {
        if j < m {
            let d = dist(truth[i], est[j]);
            if d < cfg.c || cfg.alpha != 2.0 {
                res.localization += d.min(cfg.c).powf(cfg.p);
                matched += 1;
            }
        }
    }
    res.missed = unassigned * (n - matched) as f64;
    res.false_ = unassigned * (m - matched) as f64;
    res.total = (res.localization + res.missed + res.false_).powf(1.0 / cfg.p);
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Minimum over all partial injections truth → est.
    fn brute_force(truth: &[[f64; 2]], est: &[[f64; 2]], cfg: &GospaConfig) -> f64 {
        fn go(i: usize, truth: &[[f64; 2]], est: &[[f64; 2]], used: &mut Vec<bool>, cfg: &GospaConfig) -> f64 {
            let pen = cfg.c.powf(cfg.p) / cfg.alpha;
            if i == truth.len() {
                return pen * used.iter().filter(|u| !**u).count() as f64;
            }
            let mut best = pen + go(i + 1, truth, est, used, cfg);
            for j in 0..est.len() {
                if !used[j] {
                    used[j] = true;
                    let d = dist(truth[i], est[j]).min(cfg.c).powf(cfg.p);
                    best = best.min(d + go(i + 1, truth, est, used, cfg));
                    used[j] = false;
                }
            }
            best
        }
        go(0, truth, est, &mut vec![false; est.len()], cfg).powf(1.0 / cfg.p)
    }

    #[test]
    fn empty_sets() {
        let r = gospa(&[], &[], &GospaConfig::default()).unwrap();
        assert_eq!(r, GospaResult::default());
    }

    #[test]
    fn single_missed_object() {
        let r = gospa(&[[1.0, 2.0]], &[], &GospaConfig::default()).unwrap();
        assert_eq!((r.total, r.missed, r.false_, r.localization), (5.0, 5.0, 0.0, 0.0));
    }

    #[test]
    fn matched_pair() {
        let r = gospa(&[[0.0, 0.0]], &[[3.0, 0.0]], &GospaConfig::default()).unwrap();
        assert!((r.total - 3.0).abs() < 1e-12 && (r.localization - 3.0).abs() < 1e-12);
        assert_eq!(brute_force(&[[0.0, 0.0]], &[[3.0, 0.0]], &GospaConfig::default()), 3.0);
    }

    #[test]
    fn far_pair_is_missed_and_false() {
        let r = gospa(&[[0.0, 0.0]], &[[30.0, 0.0]], &GospaConfig::default()).unwrap();
        assert_eq!((r.missed, r.false_, r.localization, r.total), (5.0, 5.0, 0.0, 10.0));
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(gospa(&[], &[], &GospaConfig { c: 0.0, ..Default::default() }).is_err());
        assert!(gospa(&[], &[], &GospaConfig { p: 0.5, ..Default::default() }).is_err());
        assert!(gospa(&[], &[], &GospaConfig { alpha: 3.0, ..Default::default() }).is_err());
    }

    fn points(max: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec((0.0f64..25.0, 0.0f64..25.0).prop_map(|(x, y)| [x, y]), 0..=max)
    }

    proptest! {
        #[test]
        fn matches_brute_force(t in points(4), e in points(4), p in 1.0f64..3.0) {
            let cfg = GospaConfig { c: 10.0, p, alpha: 2.0 };
            let r = gospa(&t, &e, &cfg).unwrap();
            prop_assert!((r.total - brute_force(&t, &e, &cfg)).abs() < 1e-9);
        }

        #[test]
        fn decomposition_and_symmetry(t in points(5), e in points(5)) {
            let cfg = GospaConfig::default();
            let r = gospa(&t, &e, &cfg).unwrap();
            prop_assert!((r.total - (r.localization + r.missed + r.false_)).abs() < 1e-9);
            let s = gospa(&e, &t, &cfg).unwrap();
            prop_assert!((r.total - s.total).abs() < 1e-9);
            prop_assert!((r.missed - s.false_).abs() < 1e-9 && (r.false_ - s.missed).abs() < 1e-9);
        }

        #[test]
        fn nondecreasing_in_cutoff(t in points(4), e in points(4), c in 1.0f64..20.0) {
            let a = gospa(&t, &e, &GospaConfig { c, ..Default::default() }).unwrap();
            let b = gospa(&t, &e, &GospaConfig { c: c * 1.5, ..Default::default() }).unwrap();
            prop_assert!(b.total >= a.total - 1e-9);
        }
    }
}
