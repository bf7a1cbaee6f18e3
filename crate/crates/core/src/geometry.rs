//! Pedestrian mobility and monostatic sensing geometry.
//!
//! The target wanders with a Gaussian heading random walk at constant speed
//! inside a rectangular street canyon. Boundary contacts mirror the heading
//! before the step is taken, so every step has length exactly `V·Δt`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::estimator::SPEED_OF_LIGHT;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Default for Bounds {
    /// A 100 m x 20 m canyon starting 5 m in front of the default initiator.
    fn default() -> Self {
        Self {
            x_min: 5.0,
            x_max: 105.0,
            y_min: 0.0,
            y_max: 20.0,
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_max > self.x_min
            && self.y_max > self.y_min;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("degenerate bounds {self:?}")))
        }
    }

    pub fn contains(&self, (x, y): (f64, f64)) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilityParams {
    /// Walking speed, m/s.
    pub speed_mean: f64,
    /// Relative std of a per-step speed jitter; 0 disables it.
    pub speed_jitter: f64,
    /// Std of the heading increment per step, rad.
    pub heading_sigma: f64,
    pub bounds: Bounds,
    /// Start x is drawn uniformly from this range (clipped to the bounds);
    /// start y uniformly across the canyon.
    pub start_x_range: (f64, f64),
}

impl Default for MobilityParams {
    fn default() -> Self {
        Self {
            speed_mean: 1.4,
            speed_jitter: 0.0,
            heading_sigma: 0.17,
            bounds: Bounds::default(),
            start_x_range: (10.0, 30.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub position: (f64, f64),
    pub speed: f64,
    /// Direction of the velocity, rad.
    pub heading: f64,
}

fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let mut a = (a + PI).rem_euclid(2.0 * PI) - PI;
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Number of points for `duration` at `step`, including t = 0.
pub fn step_count(duration: f64, step: f64) -> usize {
    (duration / step + 1e-9).floor() as usize + 1
}

/// Random trajectory starting at a random point inside the start region.
pub fn gen_trajectory<R: Rng + ?Sized>(
    duration: f64,
    step: f64,
    params: &MobilityParams,
    rng: &mut R,
) -> Result<Vec<TrajectoryPoint>> {
    params.bounds.validate()?;
    let b = &params.bounds;
    let lo = params.start_x_range.0.max(b.x_min);
    let hi = params.start_x_range.1.min(b.x_max);
    let x0 = if hi > lo { rng.gen_range(lo..hi) } else { (b.x_min + b.x_max) / 2.0 };
    let y0 = rng.gen_range(b.y_min..b.y_max);
    let h0 = rng.gen_range(-PI..PI);
    gen_trajectory_from(duration, step, params, (x0, y0), h0, rng)
}

/// Trajectory from an explicit start position and heading.
pub fn gen_trajectory_from<R: Rng + ?Sized>(
    duration: f64,
    step: f64,
    params: &MobilityParams,
    start: (f64, f64),
    heading0: f64,
    rng: &mut R,
) -> Result<Vec<TrajectoryPoint>> {
    params.bounds.validate()?;
    if !(duration > 0.0) || !(step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "duration and step must be positive, got {duration} and {step}"
        )));
    }
    if !(params.speed_mean >= 0.0) || !(params.heading_sigma >= 0.0) || !(params.speed_jitter >= 0.0)
    {
        return Err(Error::InvalidParameter("negative mobility parameter".into()));
    }
    let b = params.bounds;
    if !b.contains(start) {
        return Err(Error::InvalidParameter(format!("start {start:?} outside bounds")));
    }
    let turn = Normal::new(0.0, params.heading_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let jitter = Normal::new(0.0, params.speed_jitter.max(f64::MIN_POSITIVE)).unwrap();

    let n = step_count(duration, step);
    let mut points = Vec::with_capacity(n);
    let mut pos = start;
    let mut heading = wrap_angle(heading0);
    for k in 0..n {
        let speed = if params.speed_jitter > 0.0 {
            (params.speed_mean * (1.0 + jitter.sample(rng))).max(0.0)
        } else {
            params.speed_mean
        };
        points.push(TrajectoryPoint {
            t: k as f64 * step,
            position: pos,
            speed,
            heading,
        });
        if k + 1 == n {
            break;
        }
        let len = speed * step;
        let mut next = (pos.0 + len * heading.cos(), pos.1 + len * heading.sin());
        if next.0 < b.x_min || next.0 > b.x_max {
            heading = wrap_angle(PI - heading);
        }
        if next.1 < b.y_min || next.1 > b.y_max {
            heading = wrap_angle(-heading);
        }
        next = (pos.0 + len * heading.cos(), pos.1 + len * heading.sin());
        if !b.contains(next) {
            // step longer than the canyon: stay put rather than escape
            next = pos;
        }
        pos = next;
        if params.heading_sigma > 0.0 {
            heading = wrap_angle(heading + turn.sample(rng));
        }
    }
    Ok(points)
}

/// Monostatic geometry of one trajectory point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingGeometry {
    /// Distance, m.
    pub d: f64,
    /// Look angle of the initiator -> target line, rad.
    pub phi: f64,
    /// Velocity angle such that `phi + theta` is the LOS-to-velocity angle.
    pub theta: f64,
    /// Radial velocity, m/s; positive when receding.
    pub v_r: f64,
}

impl SensingGeometry {
    /// Round-trip delay 2D/c, s.
    pub fn delay(&self) -> f64 {
        2.0 * self.d / SPEED_OF_LIGHT
    }

    /// Doppler shift 2·V_R·f_c/c, Hz.
    pub fn doppler(&self, f_c: f64) -> f64 {
        2.0 * self.v_r * f_c / SPEED_OF_LIGHT
    }
}

pub fn geometry_at(initiator: (f64, f64), point: &TrajectoryPoint) -> Result<SensingGeometry> {
    let dx = point.position.0 - initiator.0;
    let dy = point.position.1 - initiator.1;
    let d = dx.hypot(dy);
    if !(d > 0.0) {
        return Err(Error::CoincidentPosition);
    }
    let phi = dy.atan2(dx);
    let los_to_velocity = wrap_angle(point.heading - phi);
    Ok(SensingGeometry {
        d,
        phi,
        theta: los_to_velocity - phi,
        v_r: (phi + (los_to_velocity - phi)).cos() * point.speed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn point(x: f64, y: f64, heading: f64, speed: f64) -> TrajectoryPoint {
        TrajectoryPoint { t: 0.0, position: (x, y), speed, heading }
    }

    #[test]
    fn straight_line_without_turning() {
        let params = MobilityParams { heading_sigma: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tr = gen_trajectory_from(5.0, 0.05, &params, (20.0, 10.0), 0.3, &mut rng).unwrap();
        for p in &tr {
            assert_eq!(p.heading, 0.3);
        }
        let last = tr.last().unwrap().position;
        assert!((last.0 - (20.0 + 7.0 * 0.3f64.cos())).abs() < 1e-9);
        assert!((last.1 - (10.0 + 7.0 * 0.3f64.sin())).abs() < 1e-9);
    }

    #[test]
    fn point_count_and_path_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = MobilityParams::default();
        let tr = gen_trajectory(60.0, 0.05, &params, &mut rng).unwrap();
        assert_eq!(tr.len(), 1201);
        let mut length = 0.0;
        for w in tr.windows(2) {
            let step = (w[1].position.0 - w[0].position.0).hypot(w[1].position.1 - w[0].position.1);
            assert!((step - 1.4 * 0.05).abs() <= 1e-9 * 0.07);
            length += step;
            assert!(params.bounds.contains(w[1].position));
        }
        assert!((length - 1.4 * 60.0).abs() < 1e-6 * 84.0);
    }

    #[test]
    fn rejects_bad_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = MobilityParams {
            bounds: Bounds { x_min: 1.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 },
            ..Default::default()
        };
        assert!(gen_trajectory(1.0, 0.05, &params, &mut rng).is_err());
    }

    #[test]
    fn radial_velocity_conventions() {
        // perpendicular to LOS
        let g = geometry_at((0.0, 0.0), &point(10.0, 0.0, PI / 2.0, 1.4)).unwrap();
        assert!(g.v_r.abs() < 1e-12);
        // walking at the initiator
        let g = geometry_at((0.0, 0.0), &point(10.0, 0.0, PI, 1.4)).unwrap();
        assert!((g.v_r + 1.4).abs() < 1e-12);
        // walking away
        let g = geometry_at((0.0, 10.0), &point(30.0, 10.0, 0.0, 1.4)).unwrap();
        assert!((g.v_r - 1.4).abs() < 1e-12);
        assert!((g.d - 30.0).abs() < 1e-12);
        assert!((g.delay() - 0.2e-6).abs() < 1e-9);
        assert!(matches!(
            geometry_at((1.0, 1.0), &point(1.0, 1.0, 0.0, 1.0)),
            Err(Error::CoincidentPosition)
        ));
    }

    #[test]
    fn v_r_matches_phi_plus_theta() {
        let g = geometry_at((0.0, 10.0), &point(23.0, 4.0, 2.1, 1.3)).unwrap();
        assert_eq!(g.v_r, (g.phi + g.theta).cos() * 1.3);
    }

    proptest! {
        #[test]
        fn radial_speed_bounded(x in -50.0f64..50.0, y in -50.0f64..50.0, h in -PI..PI, v in 0.0f64..3.0) {
            prop_assume!(x.hypot(y) > 1e-6);
            let g = geometry_at((0.0, 0.0), &point(x, y, h, v)).unwrap();
            prop_assert!(g.v_r.abs() <= v + 1e-12);
            prop_assert!(g.d > 0.0);
        }

        #[test]
        fn rigid_motion_equivariance(x in 1.0f64..50.0, y in -20.0f64..20.0, h in -PI..PI,
                                     rot in -PI..PI, tx in -100.0f64..100.0, ty in -100.0f64..100.0) {
            let init = (0.0, 3.0);
            let g = geometry_at(init, &point(x, y, h, 1.4)).unwrap();
            let tf = |p: (f64, f64)| {
                (p.0 * rot.cos() - p.1 * rot.sin() + tx, p.0 * rot.sin() + p.1 * rot.cos() + ty)
            };
            let p2 = TrajectoryPoint { t: 0.0, position: tf((x, y)), speed: 1.4, heading: h + rot };
            let g2 = geometry_at(tf(init), &p2).unwrap();
            prop_assert!((g.d - g2.d).abs() < 1e-9);
            prop_assert!((g.v_r - g2.v_r).abs() < 1e-9);
        }

        #[test]
        fn trajectories_stay_inside(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = MobilityParams { heading_sigma: 0.5, ..Default::default() };
            let tr = gen_trajectory(20.0, 0.05, &params, &mut rng).unwrap();
            for p in tr {
                prop_assert!(params.bounds.contains(p.position));
            }
        }
    }
}
