use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;

/// Inertial random-walk parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryParams {
    pub num_steps: usize,
    pub inertia: f64,
    pub impulse_prob: f64,
    /// Std-dev of the per-step velocity perturbation. Zero gives a still camera.
    pub step_sigma: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        TrajectoryParams { num_steps: 500, inertia: 0.7, impulse_prob: 0.005, step_sigma: 1.0 }
    }
}

/// Centered camera path in kernel-grid units.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraTrajectory {
    positions: Vec<(f64, f64)>,
    rng_seed: u64,
}

impl CameraTrajectory {
    /// Wraps explicit positions, which are centered on their mean.
    pub fn from_points(points: Vec<(f64, f64)>, rng_seed: u64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Param(format!("trajectory needs at least 2 points, got {}", points.len())));
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::Param("trajectory points must be finite".into()));
        }
        Ok(CameraTrajectory { positions: center(points), rng_seed })
    }

    /// Wraps positions without re-centering; they are used as grid offsets
    /// from the kernel center as given.
    pub fn from_offsets(points: Vec<(f64, f64)>, rng_seed: u64) -> Result<Self> {
        let t = Self::from_points(points.clone(), rng_seed)?;
        Ok(CameraTrajectory { positions: points, ..t })
    }

    pub fn positions(&self) -> &[(f64, f64)] {
        &self.positions
    }

    pub fn num_steps(&self) -> usize {
        self.positions.len()
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn mean(&self) -> (f64, f64) {
        let n = self.positions.len() as f64;
        let (sx, sy) = self.positions.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        (sx / n, sy / n)
    }

    /// Largest coordinate magnitude, i.e. the half-width of the bounding square.
    pub fn extent(&self) -> f64 {
        self.positions.iter().fold(0.0f64, |m, p| m.max(p.0.abs()).max(p.1.abs()))
    }

    /// Isotropic rescale about the origin.
    pub fn scaled(&self, factor: f64) -> CameraTrajectory {
        CameraTrajectory {
            positions: self.positions.iter().map(|&(x, y)| (x * factor, y * factor)).collect(),
            rng_seed: self.rng_seed,
        }
    }
}

fn center(mut points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let n = points.len() as f64;
    let (sx, sy) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / n, sy / n);
    for p in &mut points {
        p.0 -= mx;
        p.1 -= my;
    }
    points
}

pub fn sample_trajectory(num_steps: usize, inertia: f64, impulse_prob: f64, rng_seed: u64) -> Result<CameraTrajectory> {
    sample_trajectory_with(&TrajectoryParams { num_steps, inertia, impulse_prob, ..Default::default() }, rng_seed)
}

/// 2D inertial random walk: `v <- inertia*v + N(0, step_sigma^2)` per axis,
/// and with probability `impulse_prob` the velocity is reversed and doubled.
pub fn sample_trajectory_with(p: &TrajectoryParams, rng_seed: u64) -> Result<CameraTrajectory> {
    if p.num_steps < 2 {
        return Err(Error::Param(format!("num_steps must be >= 2, got {}", p.num_steps)));
    }
    if !(0.0..=1.0).contains(&p.inertia) || !(0.0..=1.0).contains(&p.impulse_prob) {
        return Err(Error::Param(format!("inertia {} and impulse_prob {} must lie in [0, 1]", p.inertia, p.impulse_prob)));
    }
    if !(p.step_sigma >= 0.0 && p.step_sigma.is_finite()) {
        return Err(Error::Param(format!("step_sigma must be finite and >= 0, got {}", p.step_sigma)));
    }
    let normal = Normal::new(0.0, p.step_sigma).map_err(|e| Error::Param(e.to_string()))?;
    let mut r = rng::rng(rng_seed);
    let mut pos = (0.0, 0.0);
    let mut vel = (0.0, 0.0);
    let mut points = Vec::with_capacity(p.num_steps);
    points.push(pos);
    for _ in 1..p.num_steps {
        vel.0 = p.inertia * vel.0 + normal.sample(&mut r);
        vel.1 = p.inertia * vel.1 + normal.sample(&mut r);
        if r.random::<f64>() < p.impulse_prob {
            vel = (-2.0 * vel.0, -2.0 * vel.1);
        }
        pos = (pos.0 + vel.0, pos.1 + vel.1);
        points.push(pos);
    }
    CameraTrajectory::from_points(points, rng_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn still_camera_gives_coincident_points() {
        let p = TrajectoryParams { num_steps: 2, inertia: 0.0, impulse_prob: 0.0, step_sigma: 0.0 };
        let t = sample_trajectory_with(&p, 42).unwrap();
        assert_eq!(t.positions(), &[(0.0, 0.0), (0.0, 0.0)]);
    }

    #[test]
    fn long_walk_is_centered_and_deterministic() {
        let a = sample_trajectory(2000, 0.7, 0.005, 1).unwrap();
        let (mx, my) = a.mean();
        assert!(mx.abs() < 1e-9 && my.abs() < 1e-9, "{mx} {my}");
        let b = sample_trajectory(2000, 0.7, 0.005, 1).unwrap();
        let bits = |t: &CameraTrajectory| t.positions().iter().map(|p| (p.0.to_bits(), p.1.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert!(a.extent() > 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(sample_trajectory(1, 0.5, 0.0, 0).is_err());
        assert!(sample_trajectory(10, 1.5, 0.0, 0).is_err());
        assert!(sample_trajectory(10, 0.5, -0.1, 0).is_err());
        assert!(CameraTrajectory::from_points(vec![(0.0, f64::NAN), (1.0, 1.0)], 0).is_err());
    }
}
