//! Browser bindings: a contribution-probability explorer, Rayleigh
//! likelihood curves, and a step-through tracker on the desk crossing
//! scenario.

use pmbtbd::filter::{FilterConfig, PmbFilter};
use pmbtbd::gospa::{gospa, GospaConfig};
use pmbtbd::measurement::{
    contribution_pmf_swerling, contribution_pmf_thresholded, detection_probability_for_sigma, rayleigh_pdf, CellGrid,
    Frame,
};
use pmbtbd::rng::substream;
use pmbtbd::scenario::{generate_truth, render_frame, CrossingParams, Scenario};
use pmbtbd::state::GroundTruthFrame;
use pmbtbd::update::FilterMode;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Contribution pmf of objects sharing one cell, closed form.
/// `gammas` are object intensities, `sigma0` the noise scale.
#[wasm_bindgen]
pub fn contribution_pmf(gammas: &[f64], sigma0: f64) -> Result<Vec<f64>, JsError> {
    let s2: Vec<f64> = gammas.iter().map(|g| g + sigma0 * sigma0).collect();
    contribution_pmf_swerling(&s2).map_err(js_err)
}

/// The same pmf when a detection threshold `eta` is applied first.
#[wasm_bindgen]
pub fn contribution_pmf_at_threshold(gammas: &[f64], sigma0: f64, eta: f64) -> Result<Vec<f64>, JsError> {
    let s: Vec<f64> = gammas.iter().map(|g| (g + sigma0 * sigma0).sqrt()).collect();
    contribution_pmf_thresholded(eta, &s).map_err(js_err)
}

/// Samples `[z, f0(z), f1(z), P_D(z)]` interleaved at `n` points on
/// `[0, z_max]`; `P_D(z)` treats `z` as the threshold.
#[wasm_bindgen]
pub fn likelihood_curves(gamma: f64, sigma0: f64, z_max: f64, n: usize) -> Vec<f64> {
    let s1 = (gamma + sigma0 * sigma0).sqrt();
    let mut out = Vec::with_capacity(4 * n);
    for i in 0..n {
        let z = z_max * i as f64 / (n.max(2) - 1) as f64;
        out.extend([z, rayleigh_pdf(z, sigma0), rayleigh_pdf(z, s1), detection_probability_for_sigma(z, s1)]);
    }
    out
}

/// Filter running on the 16×16 crossing scenario, one frame per `step`.
#[wasm_bindgen]
pub struct Tracker {
    scenario: Scenario,
    truth: Vec<GroundTruthFrame>,
    filter: PmbFilter,
    frame: Option<Frame>,
    estimates: Vec<f64>,
    last_gospa: [f64; 4],
    seed: u64,
    index: usize,
}

#[wasm_bindgen]
impl Tracker {
    /// `mode` is `"pmbf-ac"` or `"pmbf-a"`.
    #[wasm_bindgen(constructor)]
    pub fn new(gamma: f64, mode: &str, seed: u64, particles: usize) -> Result<Tracker, JsError> {
        let grid = CellGrid::new(16, 16, 1.0, [0.0, 0.0]).map_err(js_err)?;
        let scenario = Scenario::crossing(grid, 1.0, seed, &CrossingParams::desk(gamma)).map_err(js_err)?;
        let truth = generate_truth(&scenario).map_err(js_err)?;
        let mode: FilterMode = mode.parse().map_err(js_err)?;
        let cfg = FilterConfig::standard(grid, mode, particles, 10 * particles);
        let filter = PmbFilter::new(cfg, seed).map_err(js_err)?;
        Ok(Tracker {
            scenario,
            truth,
            filter,
            frame: None,
            estimates: Vec::new(),
            last_gospa: [0.0; 4],
            seed,
            index: 0,
        })
    }

    pub fn done(&self) -> bool {
        self.index >= self.truth.len()
    }

    /// Current step number, 0 before the first frame.
    pub fn k(&self) -> u64 {
        self.index as u64
    }

    pub fn num_steps(&self) -> u64 {
        self.scenario.num_steps
    }

    /// Renders and filters the next frame. Returns `false` at the end.
    pub fn step(&mut self) -> Result<bool, JsError> {
        let Some(t) = self.truth.get(self.index) else { return Ok(false) };
        let frame =
            render_frame(t, &self.scenario.grid, self.scenario.sigma_n, &mut substream(self.seed, &[0xF4A, t.k]));
        let report = self.filter.step(&frame).map_err(js_err)?;
        let est = report.estimates.positions();
        let g = gospa(&t.positions(), &est, &GospaConfig::default()).map_err(js_err)?;
        self.last_gospa = [g.total, g.localization, g.missed, g.false_];
        self.estimates = report.estimates.estimates.iter().flat_map(|e| [e.state.px, e.state.py, e.r]).collect();
        self.frame = Some(frame);
        self.index += 1;
        Ok(true)
    }

    /// Cell intensities of the last frame, row-major.
    pub fn frame(&self) -> Vec<f64> {
        self.frame.as_ref().map(|f| f.z().to_vec()).unwrap_or_default()
    }

    /// Truth positions at the current step as `[x, y, ...]`.
    pub fn truth(&self) -> Vec<f64> {
        match self.index.checked_sub(1).and_then(|i| self.truth.get(i)) {
            Some(t) => t.positions().into_iter().flatten().collect(),
            None => Vec::new(),
        }
    }

    /// Declared estimates as `[x, y, r, ...]`.
    pub fn estimates(&self) -> Vec<f64> {
        self.estimates.clone()
    }

    /// All Bernoulli components as `[x, y, r, ...]`, including undeclared.
    pub fn bernoullis(&self) -> Vec<f64> {
        self.filter
            .posterior()
            .bernoullis()
            .iter()
            .filter_map(|b| b.spatial().mean_state().map(|m| [m.px, m.py, b.r()]))
            .flatten()
            .collect()
    }

    /// `[total, localization, missed, false]` of the last step.
    pub fn gospa(&self) -> Vec<f64> {
        self.last_gospa.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmf_matches_variance_shares() {
        let p = contribution_pmf(&[10.0, 4.0], 1.0).ok().unwrap();
        assert!((p[0] - 11.0 / 16.0).abs() < 1e-12);
        let t = contribution_pmf_at_threshold(&[10.0, 4.0], 1.0, 1e-4).ok().unwrap();
        assert!((t[0] - p[0]).abs() < 1e-6);
    }

    #[test]
    fn curves_are_interleaved() {
        let c = likelihood_curves(10.0, 1.0, 10.0, 5);
        assert_eq!(c.len(), 20);
        assert_eq!(c[0], 0.0);
        assert_eq!(c[3], 1.0);
        assert_eq!(c[16], 10.0);
    }

    #[test]
    fn tracker_runs_to_the_end() {
        let mut t = Tracker::new(10.0, "pmbf-ac", 1, 100).ok().unwrap();
        let mut steps = 0;
        while t.step().ok().unwrap() {
            steps += 1;
            assert_eq!(t.frame().len(), 256);
            assert_eq!(t.gospa().len(), 4);
        }
        assert_eq!(steps, 80);
        assert!(t.done());
    }
}
