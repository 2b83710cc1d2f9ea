//! Ground-truth trajectories and simulated cell-intensity frames.
//!
//! Frames follow the superposition law used for data generation: a cell
//! holding objects `I` is Rayleigh with scale `Σ_{i∈I} √γ_i + σ_n`, an
//! empty cell Rayleigh with scale `σ_n`. The filter's single-contributor
//! model does not assume this.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{CellGrid, Frame};
use crate::rng::{substream, Rng};
use crate::state::{GroundTruthFrame, ObjectState};

/// How an object moves between steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    ConstantVelocity,
    /// Nearly-constant velocity with driving noise variance `q`; the noise
    /// stream is derived from the scenario seed and the object id.
    Ncv {
        q: f64,
    },
    /// Piecewise-linear path through `(step, [x, y])` keyframes, which must
    /// cover the object's lifetime.
    Waypoints {
        points: Vec<(u64, [f64; 2])>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScript {
    pub id: u32,
    pub birth: u64,
    pub death: u64,
    pub initial: ObjectState,
    pub motion: Motion,
}

/// Steps run from 1 to `num_steps`; an object is alive for
/// `birth ≤ k ≤ death`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub grid: CellGrid,
    pub num_steps: u64,
    pub sigma_n: f64,
    pub seed: u64,
    pub objects: Vec<ObjectScript>,
}

/// Radial crossing pattern: objects start on a circle, all pass close to
/// the grid center at `interaction_step`, and leave on the far side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingParams {
    pub num_objects: usize,
    pub num_steps: u64,
    pub interaction_step: u64,
    /// Speed in meters per step.
    pub speed: f64,
    pub gamma: f64,
    /// Births are spread over `1..=last_birth`.
    pub last_birth: u64,
    /// Deaths are spread over `first_death..=num_steps`.
    pub first_death: u64,
    /// Distance of each object from the center at the interaction step.
    pub miss_distance: f64,
}

impl CrossingParams {
    /// 16×16 m, 4 objects, 80 steps.
    pub fn desk(gamma: f64) -> Self {
        Self {
            num_objects: 4,
            num_steps: 80,
            interaction_step: 40,
            speed: 0.17,
            gamma,
            last_birth: 12,
            first_death: 68,
            miss_distance: 0.25,
        }
    }

    /// 32×32 m, 10 objects, 200 steps.
    pub fn full_scale(gamma: f64) -> Self {
        Self {
            num_objects: 10,
            num_steps: 200,
            interaction_step: 100,
            speed: 0.12,
            gamma,
            last_birth: 29,
            first_death: 171,
            miss_distance: 0.3,
        }
    }
}

impl Scenario {
    /// Builds a crossing scenario centered on the cell nearest the grid
    /// center.
    pub fn crossing(grid: CellGrid, sigma_n: f64, seed: u64, p: &CrossingParams) -> Result<Self> {
        grid.validate()?;
        if p.num_objects == 0 || p.last_birth < 1 || p.first_death > p.num_steps || p.last_birth >= p.first_death {
            return Err(Error::Scenario("crossing needs objects and births before deaths".into()));
        }
        let mut rng = substream(seed, &[0xC805]);
        let (x0, x1, y0, y1) = grid.extent();
        let center_cell = grid.cell_of(0.5 * (x0 + x1), 0.5 * (y0 + y1)).expect("center inside grid");
        let [cx, cy] = grid.cell_center(center_cell);
        let rotation = rng.random::<f64>() * 2.0 * PI / p.num_objects as f64;
        let n = p.num_objects as u64;
        let objects = (0..p.num_objects)
            .map(|i| {
                let theta = rotation + 2.0 * PI * i as f64 / p.num_objects as f64;
                let dir = [-theta.cos(), -theta.sin()];
                let off = [p.miss_distance * -dir[1], p.miss_distance * dir[0]];
                let birth = 1 + (i as u64 * (p.last_birth - 1)) / n.saturating_sub(1).max(1);
                let death =
                    p.num_steps - (((n - 1 - i as u64) * (p.num_steps - p.first_death)) / n.saturating_sub(1).max(1));
                let dt = birth as f64 - p.interaction_step as f64;
                let initial = ObjectState {
                    px: cx + off[0] + dir[0] * p.speed * dt,
                    py: cy + off[1] + dir[1] * p.speed * dt,
                    vx: dir[0] * p.speed,
                    vy: dir[1] * p.speed,
                    gamma: p.gamma,
                };
                ObjectScript { id: i as u32, birth, death, initial, motion: Motion::ConstantVelocity }
            })
            .collect();
        let s = Scenario { grid, num_steps: p.num_steps, sigma_n, seed, objects };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if !(self.sigma_n > 0.0 && self.sigma_n.is_finite()) {
            return Err(Error::Scenario(format!("noise scale {} must be positive", self.sigma_n)));
        }
        let mut ids: Vec<u32> = self.objects.iter().map(|o| o.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Scenario("object ids must be unique".into()));
        }
        for o in &self.objects {
            if !(1 <= o.birth && o.birth < o.death && o.death <= self.num_steps) {
                return Err(Error::Scenario(format!(
                    "object {}: need 1 ≤ birth < death ≤ {}, got {}..{}",
                    o.id, self.num_steps, o.birth, o.death
                )));
            }
            if !o.initial.is_valid() {
                return Err(Error::Scenario(format!("object {}: invalid initial state", o.id)));
            }
            match &o.motion {
                Motion::Ncv { q } if !(*q >= 0.0) => {
                    return Err(Error::Scenario(format!("object {}: negative driving noise", o.id)));
                }
                Motion::Waypoints { points } => {
                    let ok = points.windows(2).all(|w| w[0].0 < w[1].0)
                        && points.first().is_some_and(|p| p.0 <= o.birth)
                        && points.last().is_some_and(|p| p.0 >= o.death);
                    if !ok {
                        return Err(Error::Scenario(format!(
                            "object {}: waypoints must be increasing and cover the lifetime",
                            o.id
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn waypoint_state(points: &[(u64, [f64; 2])], k: u64, gamma: f64) -> ObjectState {
    let i = points.partition_point(|p| p.0 <= k).clamp(1, points.len() - 1);
    let ((k0, a), (k1, b)) = (points[i - 1], points[i]);
    let span = (k1 - k0) as f64;
    let t = (k as f64 - k0 as f64) / span;
    let v = [(b[0] - a[0]) / span, (b[1] - a[1]) / span];
    ObjectState { px: a[0] + t * (b[0] - a[0]), py: a[1] + t * (b[1] - a[1]), vx: v[0], vy: v[1], gamma }
}

/// Truth for steps `1..=num_steps`. Fails if a living object leaves the grid.
pub fn generate_truth(s: &Scenario) -> Result<Vec<GroundTruthFrame>> {
    s.validate()?;
    let mut frames: Vec<Vec<(u32, ObjectState)>> = vec![Vec::new(); s.num_steps as usize];
    for o in &s.objects {
        let mut rng = substream(s.seed, &[0x7A0, o.id as u64]);
        let mut x = o.initial;
        for k in o.birth..=o.death {
            if k > o.birth {
                x = match &o.motion {
                    Motion::ConstantVelocity => ObjectState { px: x.px + x.vx, py: x.py + x.vy, ..x },
                    Motion::Ncv { q } => {
                        let sd = q.sqrt();
                        let w1: f64 = sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                        let w2: f64 = sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
                        ObjectState {
                            px: x.px + x.vx + 0.5 * w1,
                            py: x.py + x.vy + 0.5 * w2,
                            vx: x.vx + w1,
                            vy: x.vy + w2,
                            gamma: x.gamma,
                        }
                    }
                    Motion::Waypoints { points } => waypoint_state(points, k, x.gamma),
                };
            } else if let Motion::Waypoints { points } = &o.motion {
                x = waypoint_state(points, k, x.gamma);
            }
            if s.grid.cell_of(x.px, x.py).is_none() {
                return Err(Error::Scenario(format!(
                    "object {} leaves the region at step {k} ({:.3}, {:.3})",
                    o.id, x.px, x.py
                )));
            }
            frames[(k - 1) as usize].push((o.id, x));
        }
    }
    frames.into_iter().enumerate().map(|(i, objs)| GroundTruthFrame::new(i as u64 + 1, objs)).collect()
}

/// Rayleigh scale of every cell for the given truth.
pub fn cell_scales(truth: &GroundTruthFrame, grid: &CellGrid, sigma_n: f64) -> Vec<f64> {
    let mut amp = vec![0.0; grid.num_cells()];
    for (_, x) in &truth.objects {
        if let Some(m) = grid.cell_of(x.px, x.py) {
            amp[m] += x.gamma.sqrt();
        }
    }
    amp.into_iter().map(|a| a + sigma_n).collect()
}

/// Draws one frame; each cell is `scale · sqrt(−2 ln U)`.
pub fn render_frame(truth: &GroundTruthFrame, grid: &CellGrid, sigma_n: f64, rng: &mut Rng) -> Frame {
    let z = cell_scales(truth, grid, sigma_n)
        .into_iter()
        .map(|s| {
            let u: f64 = rng.random();
            s * (-2.0 * (1.0 - u).ln()).sqrt()
        })
        .collect();
    Frame::new(*grid, z).expect("finite nonnegative draws")
}

/// All frames of a scenario. Frame `k` uses its own substream, so frames
/// can be rendered independently.
pub fn render_all(s: &Scenario, truth: &[GroundTruthFrame]) -> Vec<Frame> {
    truth.iter().map(|t| render_frame(t, &s.grid, s.sigma_n, &mut substream(s.seed, &[0xF4A, t.k]))).collect()
}
