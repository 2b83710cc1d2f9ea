//! Swerling 1 cell model: Rayleigh likelihoods, detection probabilities and
//! object contribution probabilities.
//!
//! A single object located in cell `m` deposits power `d_m(x) = γ` (single
//! cell point-spread function). With unit-variance complex Gaussian
//! fluctuation and complex noise of variance `σ0²`, the cell magnitude is
//! Rayleigh with scale `σ_m(x) = sqrt(d_m(x) + σ0²)`; an empty cell is
//! Rayleigh with scale `σ0`.
//!
//! When several objects share a cell only one of them contributes. The
//! contribution pmf is the `η → 0` limit of a thresholded-detection model:
//! object `i` is the unique detected one among the occupants. For Rayleigh
//! tails the limit is simply `σ²_i / Σ σ²`.

use serde::{Deserialize, Serialize};

use super::grid::CellGrid;
use crate::error::{Error, Result};
use crate::state::{kahan_sum, ObjectState};

/// Complex background noise with per-component scale `sigma0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma0: f64,
}

impl NoiseModel {
    pub fn new(sigma0: f64) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise scale {sigma0} must be positive")));
        }
        Ok(Self { sigma0 })
    }

    pub fn variance(&self) -> f64 {
        self.sigma0 * self.sigma0
    }
}

/// Point-spread function: `γ` if `x` lies in cell `m`, else 0.
#[inline]
pub fn psf(x: &ObjectState, m: usize, grid: &CellGrid) -> f64 {
    if grid.cell_of(x.px, x.py) == Some(m) {
        x.gamma
    } else {
        0.0
    }
}

/// `σ_m(x) = sqrt(d_m(x) + σ0²)`.
pub fn sigma_m(x: &ObjectState, m: usize, grid: &CellGrid, noise: &NoiseModel) -> f64 {
    (psf(x, m, grid) + noise.variance()).sqrt()
}

/// Rayleigh density with scale `sigma`.
#[inline]
pub fn rayleigh_pdf(z: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    z / s2 * (-0.5 * z * z / s2).exp()
}

/// `ln R(z; σ)`; `-inf` at `z = 0`.
#[inline]
pub fn rayleigh_ln_pdf(z: f64, sigma_sq: f64) -> f64 {
    z.ln() - sigma_sq.ln() - 0.5 * z * z / sigma_sq
}

fn check_intensity(z: f64) -> Result<()> {
    if z >= 0.0 && z.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("cell intensity {z} must be a nonnegative finite number")))
    }
}

/// Noise-only likelihood `f0(z) = R(z; σ0)`.
pub fn noise_likelihood(z: f64, noise: &NoiseModel) -> Result<f64> {
    check_intensity(z)?;
    Ok(rayleigh_pdf(z, noise.sigma0))
}

/// Single-contributor likelihood `f1(z | x) = R(z; σ_m(x))`.
pub fn signal_likelihood(z: f64, x: &ObjectState, m: usize, grid: &CellGrid, noise: &NoiseModel) -> Result<f64> {
    check_intensity(z)?;
    Ok(rayleigh_pdf(z, sigma_m(x, m, grid, noise)))
}

/// Likelihood ratio `f1(z | σ²) / f0(z)` for a contributor with
/// `σ² = d + σ0²`, evaluated without forming either density.
#[inline]
pub fn likelihood_ratio(z: f64, sigma_sq: f64, noise_var: f64) -> f64 {
    (noise_var / sigma_sq) * (0.5 * z * z * (1.0 / noise_var - 1.0 / sigma_sq)).exp()
}

/// Probability that a lone object in cell `m` exceeds threshold `eta`:
/// `exp(-η² / (2 σ_m²))`.
pub fn detection_probability(eta: f64, x: &ObjectState, m: usize, grid: &CellGrid, noise: &NoiseModel) -> f64 {
    detection_probability_for_sigma(eta, sigma_m(x, m, grid, noise))
}

pub fn detection_probability_for_sigma(eta: f64, sigma: f64) -> f64 {
    (-0.5 * eta * eta / (sigma * sigma)).exp()
}

/// Contribution pmf of the occupants of one cell under a detection
/// threshold `eta > 0`: entry `i` is the probability that occupant `i` is
/// the only one exceeding the threshold, conditioned on exactly one doing
/// so. Computed in the log domain.
pub fn contribution_pmf_thresholded(eta: f64, sigmas: &[f64]) -> Result<Vec<f64>> {
    if sigmas.is_empty() {
        return Err(Error::Domain("contribution pmf needs at least one occupant".into()));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::Domain(format!("threshold {eta} must be nonnegative")));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::Domain(format!("scale {s} must be positive")));
    }
    if sigmas.len() == 1 {
        return Ok(vec![1.0]);
    }
    // ln p_i and ln(1 - p_i); expm1 keeps 1 - p accurate for tiny eta.
    let exponents: Vec<f64> = sigmas.iter().map(|s| 0.5 * eta * eta / (s * s)).collect();
    let ln_detect: Vec<f64> = exponents.iter().map(|a| -a).collect();
    let ln_miss: Vec<f64> = exponents.iter().map(|a| (-(-a).exp_m1()).ln()).collect();
    let ln_miss_total = kahan_sum(ln_miss.iter().copied());
    let ln_num: Vec<f64> = (0..sigmas.len()).map(|i| ln_detect[i] + (ln_miss_total - ln_miss[i])).collect();
    let max = ln_num.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric(format!("normalizer underflow in thresholded contribution pmf (eta = {eta})")));
    }
    let scaled: Vec<f64> = ln_num.iter().map(|l| (l - max).exp()).collect();
    let norm = kahan_sum(scaled.iter().copied());
    Ok(scaled.into_iter().map(|v| v / norm).collect())
}

/// Closed-form Swerling 1 contribution pmf: `σ²_i / Σ_i' σ²_i'`.
pub fn contribution_pmf_swerling(sigmas_sq: &[f64]) -> Result<Vec<f64>> {
    if sigmas_sq.is_empty() {
        return Err(Error::Domain("contribution pmf needs at least one occupant".into()));
    }
    if let Some(s) = sigmas_sq.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(Error::Domain(format!("variance {s} must be positive")));
    }
    let total = kahan_sum(sigmas_sq.iter().copied());
    Ok(sigmas_sq.iter().map(|s| s / total).collect())
}

/// Thresholds at which [`contribution_limit_oracle`] evaluates the
/// thresholded pmf.
pub const LIMIT_ORACLE_ETAS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Numerical `η → 0` limit of [`contribution_pmf_thresholded`].
///
/// The thresholded pmf is analytic in `η²`, so the error at threshold `η`
/// is `O(η²)`. Evaluates at [`LIMIT_ORACLE_ETAS`] and applies one
/// Richardson step on the two smallest thresholds. Independent of the
/// closed form; meant for cross-checking it.
pub fn contribution_limit_oracle(sigmas_sq: &[f64]) -> Result<Vec<f64>> {
    if sigmas_sq.is_empty() {
        return Err(Error::Domain("contribution pmf needs at least one occupant".into()));
    }
    let sigmas: Vec<f64> = sigmas_sq.iter().map(|s| s.sqrt()).collect();
    let evals =
        LIMIT_ORACLE_ETAS.iter().map(|&eta| contribution_pmf_thresholded(eta, &sigmas)).collect::<Result<Vec<_>>>()?;
    let max_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let d1 = max_diff(&evals[0], &evals[1]);
    let d2 = max_diff(&evals[1], &evals[2]);
    if d2 > d1 && d2 > 1e-12 {
        return Err(Error::NoConvergence(format!("successive differences grew from {d1:e} to {d2:e}")));
    }
    let ratio = (LIMIT_ORACLE_ETAS[1] / LIMIT_ORACLE_ETAS[2]).powi(2);
    Ok(evals[2].iter().zip(&evals[1]).map(|(fine, coarse)| (ratio * fine - coarse) / (ratio - 1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::{simpson, uniform_draws};

    fn grid() -> CellGrid {
        CellGrid::new(4, 4, 1.0, [0.0, 0.0]).unwrap()
    }

    fn obj(px: f64, py: f64, gamma: f64) -> ObjectState {
        ObjectState { px, py, vx: 0.0, vy: 0.0, gamma }
    }

    #[test]
    fn psf_examples() {
        let g = grid();
        let m = g.cell_of(1.5, 2.5).unwrap();
        assert_eq!(psf(&obj(1.5, 2.5, 10.0), m, &g), 10.0);
        assert_eq!(psf(&obj(0.5, 2.5, 10.0), m, &g), 0.0);
        // Shared edge x = 2 between cells (1,2) and (2,2).
        let on_edge = obj(2.0, 2.5, 3.0);
        let left = g.cell_of(1.5, 2.5).unwrap();
        let right = g.cell_of(2.5, 2.5).unwrap();
        let hits = [left, right].iter().filter(|&&c| psf(&on_edge, c, &g) > 0.0).count();
        assert_eq!(hits, 1);
    }

    #[test]
    fn sigma_examples() {
        let g = grid();
        let noise = NoiseModel::new(1.0).unwrap();
        let x = obj(0.5, 0.5, 10.0);
        assert_eq!(sigma_m(&x, 3, &g, &noise), 1.0);
        assert!((sigma_m(&x, 0, &g, &noise) - 11f64.sqrt()).abs() < 1e-15);
        assert!((sigma_m(&obj(0.5, 0.5, 4.0), 0, &g, &noise) - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn noise_likelihood_examples() {
        let noise = NoiseModel::new(1.7).unwrap();
        assert_eq!(noise_likelihood(0.0, &noise).unwrap(), 0.0);
        let v = noise_likelihood(1.7, &noise).unwrap();
        assert!((v - (-0.5f64).exp() / 1.7).abs() < 1e-15);
        assert!(matches!(noise_likelihood(-1.0, &noise), Err(Error::Domain(_))));
        let integral = simpson(|z| noise_likelihood(z, &noise).unwrap(), 0.0, 40.0 * 1.7, 20_000);
        assert!((integral - 1.0).abs() < 1e-8);
    }

    #[test]
    fn signal_likelihood_examples() {
        let g = grid();
        let noise = NoiseModel::new(1.0).unwrap();
        let x = obj(0.5, 0.5, 10.0);
        assert_eq!(signal_likelihood(0.0, &x, 0, &g, &noise).unwrap(), 0.0);
        assert!(signal_likelihood(-0.5, &x, 0, &g, &noise).is_err());
        let zero = obj(0.5, 0.5, 0.0);
        for z in [0.1, 0.7, 2.0, 5.0] {
            assert_eq!(signal_likelihood(z, &zero, 0, &g, &noise).unwrap(), noise_likelihood(z, &noise).unwrap());
            // Out-of-cell object: d = 0 as well.
            assert_eq!(signal_likelihood(z, &x, 5, &g, &noise).unwrap(), noise_likelihood(z, &noise).unwrap());
        }
        let integral = simpson(|z| signal_likelihood(z, &x, 0, &g, &noise).unwrap(), 0.0, 40.0 * 11f64.sqrt(), 20_000);
        assert!((integral - 1.0).abs() < 1e-8);
    }

    #[test]
    fn likelihood_ratio_increases_with_intensity() {
        let g = grid();
        let noise = NoiseModel::new(1.0).unwrap();
        for gamma in [0.5, 4.0, 10.0] {
            let x = obj(0.5, 0.5, gamma);
            let mut prev = 0.0;
            for i in 1..400 {
                let z = i as f64 * 0.025;
                let r = signal_likelihood(z, &x, 0, &g, &noise).unwrap() / noise_likelihood(z, &noise).unwrap();
                assert!(r > prev);
                let direct = likelihood_ratio(z, gamma + 1.0, 1.0);
                assert!((r - direct).abs() <= 1e-12 * r);
                prev = r;
            }
        }
    }

    #[test]
    fn detection_probability_examples() {
        let g = grid();
        let noise = NoiseModel::new(1.0).unwrap();
        let x = obj(0.5, 0.5, 10.0);
        assert_eq!(detection_probability(0.0, &x, 0, &g, &noise), 1.0);
        let s = 11f64.sqrt();
        assert!((detection_probability(s, &x, 0, &g, &noise) - 0.60653).abs() < 1e-5);
        for eta in [0.3, 1.0, 2.5, 4.0] {
            let tail = simpson(|z| signal_likelihood(z, &x, 0, &g, &noise).unwrap(), eta, eta + 40.0 * s, 20_000);
            assert!((detection_probability(eta, &x, 0, &g, &noise) - tail).abs() < 1e-8);
        }
    }

    #[test]
    fn thresholded_pmf_examples() {
        assert_eq!(contribution_pmf_thresholded(0.7, &[2.0]).unwrap(), vec![1.0]);
        let p = contribution_pmf_thresholded(0.9, &[1.5, 1.5]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let s: Vec<f64> = [2.0f64, 3.0, 5.0].iter().map(|v| v.sqrt()).collect();
        let p = contribution_pmf_thresholded(1e-3, &s).unwrap();
        for (a, b) in p.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-4);
        }
        assert!(contribution_pmf_thresholded(0.5, &[]).is_err());
        assert!(matches!(contribution_pmf_thresholded(0.0, &[1.0, 2.0]), Err(Error::Numeric(_))));
    }

    #[test]
    fn thresholded_pmf_matches_direct_product_formula() {
        // Moderate thresholds where the linear-domain formula is accurate.
        for (eta, s) in [(1.0, vec![1.0, 2.0, 3.0]), (2.5, vec![1.2, 4.0]), (0.4, vec![1.0, 1.1, 0.9, 3.0])] {
            let p: Vec<f64> = s.iter().map(|v: &f64| detection_probability_for_sigma(eta, *v)).collect();
            let num: Vec<f64> = (0..p.len())
                .map(|i| p[i] * (0..p.len()).filter(|&k| k != i).map(|k| 1.0 - p[k]).product::<f64>())
                .collect();
            let c: f64 = num.iter().sum();
            let got = contribution_pmf_thresholded(eta, &s).unwrap();
            for (g, n) in got.iter().zip(&num) {
                assert!((g - n / c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn swerling_pmf_examples() {
        assert_eq!(contribution_pmf_swerling(&[3.0, 3.0]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(contribution_pmf_swerling(&[7.0]).unwrap(), vec![1.0]);
        let p = contribution_pmf_swerling(&[2.0, 3.0, 5.0]).unwrap();
        for (a, b) in p.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(contribution_pmf_swerling(&[]).is_err());
        assert!(contribution_pmf_swerling(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn limit_oracle_examples() {
        let p = contribution_limit_oracle(&[1.0, 1.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-6);
        let p = contribution_limit_oracle(&[11.0, 5.0]).unwrap();
        assert!((p[0] - 11.0 / 16.0).abs() < 1e-4 && (p[1] - 5.0 / 16.0).abs() < 1e-4);
        let mut draws = uniform_draws(41);
        for _ in 0..20 {
            let s: Vec<f64> = (0..4).map(|_| 1.0 + 30.0 * draws()).collect();
            let oracle = contribution_limit_oracle(&s).unwrap();
            let closed = contribution_pmf_swerling(&s).unwrap();
            for (a, b) in oracle.iter().zip(&closed) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn pmfs_normalize() {
        let mut draws = uniform_draws(5);
        for n in 1..=6 {
            let s: Vec<f64> = (0..n).map(|_| 0.5 + 20.0 * draws()).collect();
            for p in [
                contribution_pmf_swerling(&s).unwrap(),
                contribution_pmf_thresholded(0.3, &s.iter().map(|v| v.sqrt()).collect::<Vec<_>>()).unwrap(),
            ] {
                assert!(p.iter().all(|v| *v >= 0.0));
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn detection_probability_decreasing_in_threshold() {
        let mut prev = 1.0 + f64::EPSILON;
        for i in 0..200 {
            let p = detection_probability_for_sigma(i as f64 * 0.05, 2.0);
            assert!(p < prev);
            prev = p;
        }
    }
}
