//! The costate-parameterized extremal system.
//!
//! With the heading costate eliminated, every extremal of the minimum-effort
//! interception problem is the time-reversal of
//!
//! ```text
//! X' = -cos(Theta)
//! Y' = -sin(Theta)
//! Theta' = -alpha (Y cos(beta) - X sin(beta))
//! ```
//!
//! started at `(0, 0, 0)`, with `(alpha, beta)` the polar form of the
//! constant position costates. Parameter time `t` is time-to-go, `R` and
//! `Sigma` are the range and look angle the interceptor sees at that
//! time-to-go, and `U = alpha (Y cos(beta) - X sin(beta))` is the optimal
//! turn rate there.
//!
//! An extremal stops being optimal once its velocity becomes collinear with
//! the line of sight, so each trajectory is truncated at the first time the
//! look angle returns to `0` or `pi`. This is tracked through the cross term
//! `X sin(Theta) - Y cos(Theta) = R sin(Sigma)`, which starts positive for
//! `beta` in `(0, pi)` and changes sign exactly at collinearity.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ode::rk4_step;
use crate::{Error, Result};

/// Magnitude and direction of the position costates `(p_x, p_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjointParams {
    pub alpha: f64,
    pub beta: f64,
}

impl AdjointParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidState(format!("alpha = {alpha} must be >= 0")));
        }
        if !(beta.is_finite() && (-PI..=PI).contains(&beta)) {
            return Err(Error::InvalidState(format!("beta = {beta} outside [-pi, pi]")));
        }
        Ok(Self { alpha, beta })
    }

    pub fn p_x(&self) -> f64 {
        self.alpha * self.beta.cos()
    }

    pub fn p_y(&self) -> f64 {
        self.alpha * self.beta.sin()
    }

    /// Parameters of the mirror-image extremal (reflection about the `x` axis).
    pub fn mirrored(&self) -> Self {
        Self {
            alpha: self.alpha,
            beta: -self.beta,
        }
    }
}

/// State of the parameterized system at parameter time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub t: f64,
}

impl ParamState {
    pub const ORIGIN: ParamState = ParamState {
        x: 0.0,
        y: 0.0,
        theta: 0.0,
        t: 0.0,
    };

    pub fn range(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// `R sin(Sigma)` with the sign of the counterclockwise look angle.
    pub fn cross(&self) -> f64 {
        self.x * self.theta.sin() - self.y * self.theta.cos()
    }

    /// `R cos(Sigma)`.
    pub fn dot(&self) -> f64 {
        -(self.x * self.theta.cos() + self.y * self.theta.sin())
    }

    /// Unsigned look angle in `[0, pi]`; `None` at the target.
    pub fn look_angle(&self) -> Option<f64> {
        (self.range() > 0.0).then(|| self.cross().abs().atan2(self.dot()))
    }

    /// Counterclockwise look angle in `(-pi, pi]`; `None` at the target.
    pub fn signed_look_angle(&self) -> Option<f64> {
        (self.range() > 0.0).then(|| self.cross().atan2(self.dot()))
    }
}

/// Right-hand side of the parameterized system for fixed `(alpha, beta)`.
#[derive(Debug, Clone, Copy)]
pub struct ExtremalSystem {
    params: AdjointParams,
    cos_beta: f64,
    sin_beta: f64,
}

impl ExtremalSystem {
    pub fn new(params: AdjointParams) -> Self {
        let (mut sin_beta, mut cos_beta) = params.beta.sin_cos();
        // beta = 0 or pi up to rounding: the straight-line extremal.
        if sin_beta.abs() < 1e-12 {
            sin_beta = 0.0;
            cos_beta = cos_beta.signum();
        }
        Self {
            params,
            cos_beta,
            sin_beta,
        }
    }

    pub fn params(&self) -> AdjointParams {
        self.params
    }

    /// `U = alpha (Y cos(beta) - X sin(beta))`.
    #[inline]
    pub fn command(&self, x: f64, y: f64) -> f64 {
        self.params.alpha * (y * self.cos_beta - x * self.sin_beta)
    }

    /// Sign of the look angle on the optimal part of the extremal.
    pub fn orientation(&self) -> f64 {
        if self.sin_beta == 0.0 {
            0.0
        } else {
            self.sin_beta.signum()
        }
    }

    #[inline]
    fn rhs(&self, s: &[f64; 3]) -> [f64; 3] {
        [-s[2].cos(), -s[2].sin(), -self.command(s[0], s[1])]
    }

    /// Right-hand side augmented with the running effort `U^2 / 2`.
    #[inline]
    fn rhs_with_effort(&self, s: &[f64; 4]) -> [f64; 4] {
        let u = self.command(s[0], s[1]);
        [-s[2].cos(), -s[2].sin(), -u, 0.5 * u * u]
    }

    pub fn step(&self, s: &[f64; 3], h: f64) -> [f64; 3] {
        rk4_step(|y| self.rhs(y), s, h)
    }

    pub(crate) fn step_with_effort(&self, s: &[f64; 4], h: f64) -> [f64; 4] {
        rk4_step(|y| self.rhs_with_effort(y), s, h)
    }

    /// Whether `s` is at or past collinearity for this extremal.
    #[inline]
    fn is_collinear(&self, s: &[f64; 3]) -> bool {
        let cross = s[0] * s[2].sin() - s[1] * s[2].cos();
        cross * self.orientation() <= 0.0
    }

    /// Bisect the first collinearity inside the step of length `h` starting
    /// from `s` (which is strictly before collinearity).
    fn refine_crossing(&self, s: &[f64; 3], h: f64, tol: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, h);
        while hi - lo > tol {
            let mid = 0.5 * (lo + hi);
            if self.is_collinear(&self.step(s, mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Endpoint of a sweep along one extremal.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Sweep {
    pub state: [f64; 3],
    /// `int U^2 / 2` over the sweep.
    pub effort: f64,
    /// First collinearity strictly inside the sweep, if any.
    pub collinear_at: Option<f64>,
}

/// Propagate with `steps` equal steps to `t_end`. The sweep runs through any
/// collinearity so that endpoints vary smoothly with the parameters; the
/// first crossing is recorded.
pub(crate) fn sweep(system: &ExtremalSystem, t_end: f64, steps: usize) -> Sweep {
    let h = t_end / steps as f64;
    let mut s = [0.0; 4];
    let mut collinear_at = (system.orientation() == 0.0).then_some(0.0);
    for k in 0..steps {
        let next = system.step_with_effort(&s, h);
        if collinear_at.is_none() && system.is_collinear(&[next[0], next[1], next[2]]) {
            let dt = system.refine_crossing(&[s[0], s[1], s[2]], h, h * 1e-9);
            collinear_at = Some(k as f64 * h + dt);
        }
        s = next;
    }
    Sweep {
        state: [s[0], s[1], s[2]],
        effort: s[3],
        collinear_at,
    }
}

/// Endpoint sensitivities with respect to `(alpha, beta)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Sensitivity {
    pub sweep: Sweep,
    /// `d(X, Y, Theta) / d alpha`.
    pub d_alpha: [f64; 3],
    /// `d(X, Y, Theta) / d beta`.
    pub d_beta: [f64; 3],
}

/// [`sweep`] together with the variational equations of the endpoint.
pub(crate) fn sweep_with_sensitivity(system: &ExtremalSystem, t_end: f64, steps: usize) -> Sensitivity {
    let h = t_end / steps as f64;
    let alpha = system.params.alpha;
    let (sb, cb) = (system.sin_beta, system.cos_beta);
    let rhs = |s: &[f64; 10]| {
        let (st, ct) = s[2].sin_cos();
        let u = alpha * (s[1] * cb - s[0] * sb);
        let mut out = [-ct, -st, -u, 0.5 * u * u, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        // d/dp of (X, Y, Theta) for p = alpha (slots 4..7) and beta (7..10).
        let forcing = [-(s[1] * cb - s[0] * sb), alpha * (s[1] * sb + s[0] * cb)];
        for (k, f) in forcing.iter().enumerate() {
            let d = &s[4 + 3 * k..7 + 3 * k];
            out[4 + 3 * k] = st * d[2];
            out[5 + 3 * k] = -ct * d[2];
            out[6 + 3 * k] = -alpha * (d[1] * cb - d[0] * sb) + f;
        }
        out
    };
    let mut s = [0.0; 10];
    let mut collinear_at = (system.orientation() == 0.0).then_some(0.0);
    for k in 0..steps {
        let next = rk4_step(rhs, &s, h);
        if collinear_at.is_none() && system.is_collinear(&[next[0], next[1], next[2]]) {
            let dt = system.refine_crossing(&[s[0], s[1], s[2]], h, h * 1e-9);
            collinear_at = Some(k as f64 * h + dt);
        }
        s = next;
    }
    Sensitivity {
        sweep: Sweep {
            state: [s[0], s[1], s[2]],
            effort: s[3],
            collinear_at,
        },
        d_alpha: [s[4], s[5], s[6]],
        d_beta: [s[7], s[8], s[9]],
    }
}

/// One stored point of a parameterized trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub range: f64,
    /// `None` at `t = 0`, where the range vanishes.
    pub look_angle: Option<f64>,
    pub command: f64,
}

impl ParamSample {
    pub fn state(&self) -> ParamState {
        ParamState {
            x: self.x,
            y: self.y,
            theta: self.theta,
            t: self.t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamTrajectory {
    pub params: AdjointParams,
    pub samples: Vec<ParamSample>,
    /// `min(t_end, T(alpha, beta))`.
    pub terminal_time: f64,
}

impl ParamTrajectory {
    /// Number of strict sign alternations of the command over the stored
    /// samples, ignoring values within `deadband` of zero.
    pub fn command_sign_changes(&self, deadband: f64) -> usize {
        let mut last = 0.0f64;
        let mut changes = 0;
        for s in &self.samples {
            if s.command.abs() <= deadband {
                continue;
            }
            let sign = s.command.signum();
            if last != 0.0 && sign != last {
                changes += 1;
            }
            last = sign;
        }
        changes
    }

    /// Whether every stored sample after `t = 0` has a look angle strictly
    /// inside `(0, pi)`.
    pub fn look_angle_interior(&self) -> bool {
        self.samples
            .iter()
            .skip(1)
            .all(|s| matches!(s.look_angle, Some(a) if a > 0.0 && a < PI))
    }
}

fn check_horizon(t_end: f64, dt: f64) -> Result<()> {
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::InvalidConfig(format!("horizon {t_end} must be positive")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("step {dt} must be positive")));
    }
    Ok(())
}

/// Number of grid points `k dt` with `k >= 1` not exceeding `t_end`.
pub(crate) fn grid_len(t_end: f64, dt: f64) -> usize {
    ((t_end / dt) * (1.0 + 1e-12)).floor() as usize
}

/// Propagate the extremal for `(alpha, beta)` on the grid `t = k dt`,
/// truncating at the first collinearity.
///
/// Sample `k` is stored for every grid time strictly before the terminal
/// time and not beyond `t_end`.
pub fn propagate_param(params: AdjointParams, t_end: f64, dt: f64) -> Result<ParamTrajectory> {
    check_horizon(t_end, dt)?;
    if !(params.alpha > 0.0) {
        return Err(Error::DegenerateCostate(params.alpha));
    }
    let system = ExtremalSystem::new(params);
    let mut samples = vec![ParamSample {
        t: 0.0,
        x: 0.0,
        y: 0.0,
        theta: 0.0,
        range: 0.0,
        look_angle: None,
        command: 0.0,
    }];
    let (_, terminal_time) = walk(&system, t_end, dt, |t, s| {
        let state = ParamState {
            x: s[0],
            y: s[1],
            theta: s[2],
            t,
        };
        samples.push(ParamSample {
            t,
            x: s[0],
            y: s[1],
            theta: s[2],
            range: state.range(),
            look_angle: state.look_angle(),
            command: system.command(s[0], s[1]),
        });
    });
    Ok(ParamTrajectory {
        params,
        samples,
        terminal_time,
    })
}

/// Step along the grid, calling `visit` for every grid point strictly before
/// collinearity. Returns the last state and `min(t_end, T)`.
fn walk<F>(system: &ExtremalSystem, t_end: f64, dt: f64, mut visit: F) -> ([f64; 3], f64)
where
    F: FnMut(f64, &[f64; 3]),
{
    let mut s = [0.0; 3];
    if system.orientation() == 0.0 {
        return (s, 0.0);
    }
    let n = grid_len(t_end, dt);
    let mut t_prev = 0.0;
    for k in 1..=n + 1 {
        // One extra partial step covers a horizon that is not a grid multiple.
        let t = if k <= n { k as f64 * dt } else { t_end };
        let h = t - t_prev;
        if h <= 0.0 {
            break;
        }
        let next = system.step(&s, h);
        if system.is_collinear(&next) {
            let crossing = t_prev + system.refine_crossing(&s, h, dt * 1e-9);
            return (s, crossing.min(t_end));
        }
        if k <= n {
            visit(t, &next);
        }
        s = next;
        t_prev = t;
    }
    (s, t_end)
}

/// `T_hat = min(t_bar, T(alpha, beta))`, where `T` is the first positive
/// time at which the extremal's velocity is collinear with the line of sight.
pub fn terminal_time(params: AdjointParams, t_bar: f64, dt: f64) -> Result<f64> {
    check_horizon(t_bar, dt)?;
    if !(params.alpha > 0.0) {
        return Err(Error::DegenerateCostate(params.alpha));
    }
    let system = ExtremalSystem::new(params);
    Ok(walk(&system, t_bar, dt, |_, _| {}).1)
}

/// `H = alpha cos(Theta - beta) + U^2 / 2`, constant along every extremal.
pub fn hamiltonian(state: &ParamState, params: &AdjointParams) -> f64 {
    let u = params.alpha * (state.y * params.beta.cos() - state.x * params.beta.sin());
    params.alpha * (state.theta - params.beta).cos() + 0.5 * u * u
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testing::dopri_integrate;
    use std::f64::consts::FRAC_PI_2;

    fn oracle_rhs(alpha: f64, beta: f64) -> impl Fn(f64, &[f64]) -> Vec<f64> {
        move |_t, s| {
            vec![
                -s[2].cos(),
                -s[2].sin(),
                -alpha * (s[1] * beta.cos() - s[0] * beta.sin()),
            ]
        }
    }

    #[test]
    fn starts_at_origin_with_zero_command() {
        let traj = propagate_param(AdjointParams::new(3.0, 1.2).unwrap(), 1.0, 0.01).unwrap();
        let s0 = traj.samples[0];
        assert_eq!((s0.x, s0.y, s0.theta, s0.command), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(s0.look_angle, None);
    }

    #[test]
    fn matches_adaptive_oracle() {
        let params = AdjointParams::new(10.0, FRAC_PI_2).unwrap();
        let traj = propagate_param(params, 0.5, 0.005).unwrap();
        let last = traj.samples.last().unwrap();
        assert!((last.t - 0.5).abs() < 1e-12);
        let want = dopri_integrate(oracle_rhs(10.0, FRAC_PI_2), &[0.0; 3], 0.0, 0.5, 1e-12);
        for (g, w) in [last.x, last.y, last.theta].iter().zip(&want) {
            assert!((g - w).abs() <= 1e-8, "{g} vs {w}");
        }
    }

    #[test]
    fn command_identity_holds_at_every_sample() {
        let params = AdjointParams::new(4.0, 0.7).unwrap();
        let traj = propagate_param(params, 3.0, 0.01).unwrap();
        for s in &traj.samples {
            let u = params.alpha * (s.y * params.beta.cos() - s.x * params.beta.sin());
            assert!((s.command - u).abs() <= 1e-15 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn rejects_non_positive_alpha() {
        let err = propagate_param(AdjointParams::new(0.0, 1.0).unwrap(), 1.0, 0.01).unwrap_err();
        assert!(err.to_string().starts_with("degenerate costate"));
    }

    #[test]
    fn cap_branch_when_no_collinearity() {
        // Gentle turning: collinearity is far beyond a short cap.
        let t = terminal_time(AdjointParams::new(0.1, 1.0).unwrap(), 0.5, 0.005).unwrap();
        assert_eq!(t, 0.5);
    }

    #[test]
    fn terminal_time_matches_dense_scan() {
        let (alpha, beta) = (10.0, FRAC_PI_2);
        let dt = 0.005;
        let t_hat = terminal_time(AdjointParams::new(alpha, beta).unwrap(), 10.0, dt).unwrap();
        // Dense scan of the cross term with the adaptive oracle at dt/100.
        let f = oracle_rhs(alpha, beta);
        let fine = dt / 100.0;
        let mut y = vec![0.0; 3];
        let mut t = 0.0;
        let mut root = None;
        while t < 10.0 {
            let next = dopri_integrate(&f, &y, t, t + fine, 1e-12);
            let cross = next[0] * next[2].sin() - next[1] * next[2].cos();
            if cross <= 0.0 {
                root = Some(t + 0.5 * fine);
                break;
            }
            y = next;
            t += fine;
        }
        let root = root.expect("collinearity within the cap");
        assert!((t_hat - root).abs() <= fine, "{t_hat} vs {root}");
        assert!(t_hat < 10.0);
    }

    #[test]
    fn straight_line_extremal_is_immediately_collinear() {
        let t = terminal_time(AdjointParams::new(5.0, PI).unwrap(), 1.0, 0.01).unwrap();
        assert_eq!(t, 0.0);
        let traj = propagate_param(AdjointParams::new(5.0, PI).unwrap(), 1.0, 0.01).unwrap();
        assert_eq!(traj.samples.len(), 1);
    }

    #[test]
    fn structure_before_terminal_time() {
        let traj = propagate_param(AdjointParams::new(10.0, FRAC_PI_2).unwrap(), 10.0, 0.005)
            .unwrap();
        assert!(traj.terminal_time < 10.0);
        assert!(traj.look_angle_interior());
        assert!(traj.command_sign_changes(1e-9) <= 1);
        for s in traj.samples.iter().skip(1) {
            assert!(s.state().cross() > 0.0);
            assert!(s.look_angle.unwrap().cos() < 1.0 - 1e-9);
        }
    }

    #[test]
    fn hamiltonian_values() {
        let p = AdjointParams::new(3.0, 0.4).unwrap();
        assert!((hamiltonian(&ParamState::ORIGIN, &p) - 3.0 * 0.4f64.cos()).abs() < 1e-15);
        let p = AdjointParams::new(3.0, FRAC_PI_2).unwrap();
        assert!(hamiltonian(&ParamState::ORIGIN, &p).abs() < 1e-15);
    }

    #[test]
    fn hamiltonian_conserved() {
        let p = AdjointParams::new(5.0, 1.0).unwrap();
        let traj = propagate_param(p, 2.0, 0.005).unwrap();
        let h0 = 5.0 * 1.0f64.cos();
        for s in &traj.samples {
            let h = hamiltonian(&s.state(), &p);
            assert!((h - h0).abs() <= 1e-6 * (1.0 + h0.abs()));
        }
    }

    #[test]
    fn heading_rate_is_minus_command() {
        let p = AdjointParams::new(2.0, 2.0).unwrap();
        let dt = 0.001;
        let traj = propagate_param(p, 1.0, dt).unwrap();
        for w in traj.samples.windows(3).skip(1) {
            let rate = (w[2].theta - w[0].theta) / (2.0 * dt);
            assert!((rate + w[1].command).abs() < 1e-5);
        }
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        let (alpha, beta) = (12.0, 1.9);
        let at = |a: f64, b: f64| sweep(&ExtremalSystem::new(AdjointParams { alpha: a, beta: b }), 1.0, 400).state;
        let sens = sweep_with_sensitivity(&ExtremalSystem::new(AdjointParams { alpha, beta }), 1.0, 400);
        assert_eq!(sens.sweep.state, at(alpha, beta));
        let h = 1e-6;
        let (pa, ma) = (at(alpha + h, beta), at(alpha - h, beta));
        let (pb, mb) = (at(alpha, beta + h), at(alpha, beta - h));
        for i in 0..3 {
            assert!(((pa[i] - ma[i]) / (2.0 * h) - sens.d_alpha[i]).abs() < 1e-7);
            assert!(((pb[i] - mb[i]) / (2.0 * h) - sens.d_beta[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn mirrored_parameters_reflect_the_trajectory() {
        let p = AdjointParams::new(3.0, 1.1).unwrap();
        let a = propagate_param(p, 1.5, 0.01).unwrap();
        let b = propagate_param(p.mirrored(), 1.5, 0.01).unwrap();
        assert_eq!(a.samples.len(), b.samples.len());
        for (s, m) in a.samples.iter().zip(&b.samples) {
            assert!((s.x - m.x).abs() < 1e-13);
            assert!((s.y + m.y).abs() < 1e-13);
            assert!((s.command + m.command).abs() < 1e-12);
        }
        assert!((a.terminal_time - b.terminal_time).abs() < 1e-12);
    }
}
