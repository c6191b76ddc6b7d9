//! Planar interceptor kinematics in the target-centered frame.
//!
//! The target sits at the origin, `x` points east and `y` north. The heading
//! `theta` is measured counterclockwise from the `x` axis. The look angle
//! `sigma` is the counterclockwise angle from the velocity vector to the
//! line of sight (interceptor to target):
//!
//! ```text
//! sigma = wrap(atan2(-y, -x) - theta)
//! ```
//!
//! With this convention the polar kinematics read `r' = -V cos(sigma)` and
//! `sigma' = V sin(sigma) / r - u`, where `u` is the turn rate, and
//! `cos(sigma) = -(x cos(theta) + y sin(theta)) / r`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ode::rk4_step;
use crate::{Error, Result};

/// Reduce an angle to `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let w = angle.sin().atan2(angle.cos());
    if w <= -PI {
        PI
    } else {
        w
    }
}

/// Interceptor pose in the target-centered frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartesianState {
    pub x: f64,
    pub y: f64,
    /// Heading in radians, kept in `(-pi, pi]`.
    pub theta: f64,
}

impl CartesianState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn range(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Angle of the position vector measured from the `x` axis.
    ///
    /// The line-of-sight rate of a stationary target is
    /// `V sin(theta - lambda) / r`.
    pub fn los_angle(&self) -> f64 {
        self.y.atan2(self.x)
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.theta.is_finite()
    }

    pub fn to_polar(&self) -> Result<PolarState> {
        cartesian_to_polar(self)
    }
}

/// Range and look angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarState {
    pub r: f64,
    /// Look angle in radians, kept in `[-pi, pi]`.
    pub sigma: f64,
}

impl PolarState {
    pub fn new(r: f64, sigma: f64) -> Self {
        Self {
            r,
            sigma: wrap_angle(sigma),
        }
    }
}

fn check_step(dt: f64, speed: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidState(format!("time step {dt} must be positive")));
    }
    if !(speed.is_finite() && speed > 0.0) {
        return Err(Error::InvalidState(format!("speed {speed} must be positive")));
    }
    Ok(())
}

/// One RK4 step of `x' = V cos(theta)`, `y' = V sin(theta)`, `theta' = u`.
pub fn step_cartesian(
    state: &CartesianState,
    u: f64,
    dt: f64,
    speed: f64,
) -> Result<CartesianState> {
    if !state.is_finite() || !u.is_finite() {
        return Err(Error::InvalidState(format!(
            "non-finite input {state:?}, u = {u}"
        )));
    }
    check_step(dt, speed)?;
    let f = |s: &[f64; 3]| [speed * s[2].cos(), speed * s[2].sin(), u];
    let [x, y, theta] = rk4_step(f, &[state.x, state.y, state.theta], dt);
    Ok(CartesianState::new(x, y, theta))
}

pub fn cartesian_to_polar(state: &CartesianState) -> Result<PolarState> {
    if !state.is_finite() {
        return Err(Error::InvalidState(format!("non-finite input {state:?}")));
    }
    let r = state.range();
    if r == 0.0 {
        return Err(Error::LookAngleUndefined);
    }
    let sigma = wrap_angle((-state.y).atan2(-state.x) - state.theta);
    Ok(PolarState { r, sigma })
}

/// One RK4 step of `r' = -V cos(sigma)`, `sigma' = V sin(sigma) / r - u`.
pub fn step_polar(state: &PolarState, u: f64, dt: f64, speed: f64) -> Result<PolarState> {
    if !state.r.is_finite() || !state.sigma.is_finite() || !u.is_finite() {
        return Err(Error::InvalidState(format!(
            "non-finite input {state:?}, u = {u}"
        )));
    }
    check_step(dt, speed)?;
    let reach = speed * dt;
    if state.r <= reach {
        return Err(Error::StepCrossesTarget {
            range: state.r,
            reach,
        });
    }
    let f = |s: &[f64; 2]| [-speed * s[1].cos(), speed * s[1].sin() / s[0] - u];
    let [r, sigma] = rk4_step(f, &[state.r, state.sigma], dt);
    Ok(PolarState::new(r, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::dopri_integrate;
    use std::f64::consts::FRAC_PI_2;
    use std::f64::consts::FRAC_PI_3;

    #[test]
    fn straight_line_east() {
        let s = step_cartesian(&CartesianState::new(0.0, 0.0, 0.0), 0.0, 1.0, 1.0).unwrap();
        assert_eq!((s.x, s.y, s.theta), (1.0, 0.0, 0.0));
    }

    #[test]
    fn straight_line_north() {
        let s = step_cartesian(&CartesianState::new(0.0, 0.0, FRAC_PI_2), 0.0, 2.0, 3.0).unwrap();
        assert!(s.x.abs() < 1e-15);
        assert!((s.y - 6.0).abs() < 1e-14);
        assert_eq!(s.theta, FRAC_PI_2);
    }

    #[test]
    fn turning_step_matches_adaptive_oracle() {
        let f = |_t: f64, s: &[f64]| vec![s[2].cos(), s[2].sin(), 1.0];
        let want = dopri_integrate(f, &[0.0, 0.0, 0.0], 0.0, 0.1, 1e-12);
        let got = step_cartesian(&CartesianState::new(0.0, 0.0, 0.0), 1.0, 0.1, 1.0).unwrap();
        // A single RK4 step of 0.1 carries a local error of about h^5/2880.
        for (g, w) in [got.x, got.y, got.theta].iter().zip(&want) {
            assert!((g - w).abs() <= 5e-9, "{g} vs {w}");
        }
    }

    #[test]
    fn rejects_non_finite() {
        let err = step_cartesian(&CartesianState::new(f64::NAN, 0.0, 0.0), 0.0, 1.0, 1.0);
        assert!(err.unwrap_err().to_string().contains("invalid state"));
    }

    #[test]
    fn polar_of_case_a_start() {
        // Interceptor 10 km west of the target, heading 60 degrees.
        let p = cartesian_to_polar(&CartesianState::new(-10000.0, 0.0, FRAC_PI_3)).unwrap();
        assert!((p.r - 10000.0).abs() < 1e-9);
        // The line of sight lies clockwise of the velocity.
        assert!((p.sigma + FRAC_PI_3).abs() < 1e-15);
    }

    #[test]
    fn polar_rates_match_finite_differences() {
        let speed = 500.0;
        let u = 0.02;
        let start = CartesianState::new(-10000.0, 0.0, FRAC_PI_3);
        let p0 = cartesian_to_polar(&start).unwrap();
        let h = 1e-3;
        let fwd = cartesian_to_polar(&step_cartesian(&start, u, h, speed).unwrap()).unwrap();
        let f = |s: &[f64; 3]| [speed * s[2].cos(), speed * s[2].sin(), u];
        let [x, y, th] = rk4_step(f, &[start.x, start.y, start.theta], -h);
        let bwd = cartesian_to_polar(&CartesianState::new(x, y, th)).unwrap();
        let r_dot = (fwd.r - bwd.r) / (2.0 * h);
        let sigma_dot = (fwd.sigma - bwd.sigma) / (2.0 * h);
        assert!((r_dot + speed * p0.sigma.cos()).abs() < 1e-6);
        assert!((sigma_dot - (speed * p0.sigma.sin() / p0.r - u)).abs() < 1e-9);
    }

    #[test]
    fn polar_head_on_and_away() {
        let p = cartesian_to_polar(&CartesianState::new(-1.0, 0.0, 0.0)).unwrap();
        assert_eq!((p.r, p.sigma), (1.0, 0.0));
        let p = cartesian_to_polar(&CartesianState::new(-1.0, 0.0, PI)).unwrap();
        assert_eq!(p.r, 1.0);
        assert!((p.sigma.abs() - PI).abs() < 1e-15);
    }

    #[test]
    fn polar_undefined_at_target() {
        let err = cartesian_to_polar(&CartesianState::new(0.0, 0.0, 1.0)).unwrap_err();
        assert_eq!(err.to_string(), "look angle undefined at target");
    }

    #[test]
    fn polar_steps_closing_and_opening() {
        let s = step_polar(&PolarState::new(10.0, 0.0), 0.0, 1.0, 1.0).unwrap();
        assert_eq!((s.r, s.sigma), (9.0, 0.0));
        let s = step_polar(&PolarState::new(10.0, PI), 0.0, 1.0, 1.0).unwrap();
        assert!((s.r - 11.0).abs() < 1e-14);
        assert!((s.sigma.abs() - PI).abs() < 1e-14);
    }

    #[test]
    fn polar_step_matches_cartesian_route() {
        let polar = PolarState::new(5.0, PI / 4.0);
        // A Cartesian pose with that range and look angle.
        let cart = CartesianState::new(-5.0, 0.0, -PI / 4.0);
        assert!((cartesian_to_polar(&cart).unwrap().sigma - polar.sigma).abs() < 1e-15);
        let via_cart =
            cartesian_to_polar(&step_cartesian(&cart, 0.1, 0.01, 1.0).unwrap()).unwrap();
        let direct = step_polar(&polar, 0.1, 0.01, 1.0).unwrap();
        assert!((via_cart.r - direct.r).abs() <= 1e-8);
        assert!((via_cart.sigma - direct.sigma).abs() <= 1e-8);
    }

    #[test]
    fn polar_step_rejects_crossing() {
        let err = step_polar(&PolarState::new(0.5, 0.0), 0.0, 1.0, 1.0).unwrap_err();
        assert!(err.to_string().starts_with("step crosses target"));
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }
}
