//! Guidance commands: the network law, the two-point boundary-value oracle,
//! and proportional navigation.
//!
//! Every command here is a turn rate in rad/s; the lateral acceleration is
//! `speed * u`.
//!
//! The oracle works in a frame where the speed is one and the time-to-go is
//! one. In that frame a state `(r_hat, sigma)` is hit on time by the extremal
//! `(alpha_hat, beta)` that satisfies `R(1) = r_hat` and `Sigma(1) = sigma`
//! without reaching collinearity before `t = 1`. Converting back, the
//! unit-speed costate magnitude is `alpha_hat / t_go^2`, the turn rate is
//! `U(1) / t_go` and the effort is `speed^2 / t_go * int U^2 / 2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::kinematics::{cartesian_to_polar, wrap_angle, CartesianState, PolarState};
use crate::mlp::CommandModel;
use crate::pmp::{sweep, sweep_with_sensitivity, AdjointParams, ExtremalSystem, Sweep};
use crate::sim::{closest_approach, TrajectoryPoint};
use crate::{Error, Result};

/// Fraction of the trained horizon used as the network's time-to-go.
pub const HORIZON_FRACTION: f64 = 0.9;

/// Default proportional-navigation gain.
pub const PN_GAIN: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceQuery {
    pub r: f64,
    pub sigma: f64,
    pub t_go: f64,
    pub speed: f64,
}

impl GuidanceQuery {
    pub fn new(r: f64, sigma: f64, t_go: f64, speed: f64) -> Self {
        Self {
            r,
            sigma,
            t_go,
            speed,
        }
    }

    pub fn from_polar(state: PolarState, t_go: f64, speed: f64) -> Self {
        Self::new(state.r, state.sigma, t_go, speed)
    }

    /// Check positivity and that the target can be reached by `t_go`.
    pub fn validate(&self) -> Result<()> {
        let fields = [self.r, self.sigma, self.t_go, self.speed];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite query {self:?}")));
        }
        if !(self.r > 0.0 && self.t_go > 0.0 && self.speed > 0.0) {
            return Err(Error::InvalidState(format!(
                "query needs r, t_go, speed > 0: {self:?}"
            )));
        }
        if self.sigma.abs() > PI {
            return Err(Error::InvalidState(format!("look angle {} outside [-pi, pi]", self.sigma)));
        }
        let reach = self.speed * self.t_go;
        if self.r > reach * (1.0 + 1e-12) {
            return Err(Error::TargetUnreachable {
                range: self.r,
                reach,
            });
        }
        Ok(())
    }

    /// Range in the unit-speed, unit-time-to-go frame.
    fn r_hat(&self) -> f64 {
        self.r / (self.speed * self.t_go)
    }

    /// Straight flight at the target arrives exactly on time.
    fn is_collision_course(&self) -> bool {
        self.sigma == 0.0 && self.r_hat() >= 1.0 - 1e-9
    }

    fn sign(&self) -> f64 {
        if self.sigma < 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

/// Network turn-rate command.
///
/// The query is reflected to a non-negative look angle and rescaled so that
/// the network sees the time-to-go `g = min(t_go, 0.9 T_bar)`.
pub fn command_nn(model: &CommandModel, query: &GuidanceQuery) -> Result<f64> {
    query.validate()?;
    if query.is_collision_course() {
        return Ok(0.0);
    }
    let g = query.t_go.min(HORIZON_FRACTION * model.t_bar);
    let c = model.forward(query.r_hat() * g, query.sigma.abs(), g)?;
    Ok(query.sign() * (g / query.t_go) * c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleOptions {
    /// Range tolerance, relative to `1 + r_hat`.
    pub tol_r: f64,
    pub tol_sigma: f64,
    /// Seeding grid is `grid x grid` points.
    pub grid: usize,
    /// RK4 steps over the unit horizon.
    pub steps: usize,
    /// Upper bound of the seeding grid in `alpha_hat` never drops below this.
    pub min_alpha_span: f64,
    /// Number of best grid minima refined with Newton.
    pub seeds: usize,
    pub max_iter: usize,
    /// Tolerance (in place of `tol_r` and `tol_sigma`) for accepting a
    /// warm-started root. Close to a collision course the endpoint map is
    /// nearly singular and Newton stalls short of the strict tolerances,
    /// while the command itself is already well determined.
    pub warm_tol: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            tol_r: 1e-9,
            tol_sigma: 1e-9,
            grid: 60,
            steps: 200,
            min_alpha_span: 100.0,
            seeds: 12,
            max_iter: 60,
            warm_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    /// Costates of the unit-speed problem in physical time.
    pub params: AdjointParams,
    /// Costates with the time-to-go scaled to one.
    pub normalized: AdjointParams,
    /// `-1` when the query was reflected.
    pub sign: f64,
    /// `(R - r_hat, Sigma - |sigma|)` in the normalized frame.
    pub residual: [f64; 2],
    pub t_go: f64,
    /// Turn rate, rad/s.
    pub command: f64,
    /// Remaining effort `int a^2 / 2 dt` along the extremal, m^2/s^3.
    pub effort: f64,
    /// Distinct admissible roots found during the search.
    pub admissible_roots: usize,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    alpha: f64,
    beta: f64,
    f: [f64; 2],
    effort: f64,
    u_end: f64,
    admissible: bool,
}

/// Smallest `alpha_hat` seed is the span divided by this.
const ALPHA_SEED_RATIO: f64 = 1e5;

struct Problem {
    r_hat: f64,
    sigma: f64,
    opts: OracleOptions,
}

impl Problem {
    fn candidate(&self, system: &ExtremalSystem, sw: &Sweep) -> Candidate {
        let AdjointParams { alpha, beta } = system.params();
        let [x, y, th] = sw.state;
        let (s, c) = th.sin_cos();
        let cross = x * s - y * c;
        let dot = -(x * c + y * s);
        Candidate {
            alpha,
            beta,
            f: [
                x.hypot(y) - self.r_hat,
                wrap_angle(cross.atan2(dot) - self.sigma),
            ],
            effort: sw.effort,
            u_end: system.command(x, y),
            admissible: beta > 0.0
                && beta < PI
                && sw.collinear_at.map_or(true, |t| t >= 1.0 - 1e-9),
        }
    }

    fn eval(&self, alpha: f64, beta: f64) -> Candidate {
        let system = ExtremalSystem::new(AdjointParams { alpha, beta });
        self.candidate(&system, &sweep(&system, 1.0, self.opts.steps))
    }

    /// Residuals and their exact Jacobian with respect to `(alpha, beta)`.
    fn eval_jac(&self, alpha: f64, beta: f64) -> (Candidate, [[f64; 2]; 2]) {
        let system = ExtremalSystem::new(AdjointParams { alpha, beta });
        let sens = sweep_with_sensitivity(&system, 1.0, self.opts.steps);
        let cand = self.candidate(&system, &sens.sweep);
        let [x, y, th] = sens.sweep.state;
        let (s, c) = th.sin_cos();
        let r = x.hypot(y);
        let cross = x * s - y * c;
        let dot = -(x * c + y * s);
        let col = |d: &[f64; 3]| {
            let d_r = (x * d[0] + y * d[1]) / r;
            let d_cross = d[0] * s - d[1] * c + (x * c + y * s) * d[2];
            let d_dot = -(d[0] * c + d[1] * s) + (x * s - y * c) * d[2];
            [d_r, (dot * d_cross - cross * d_dot) / (cross * cross + dot * dot)]
        };
        let (ja, jb) = (col(&sens.d_alpha), col(&sens.d_beta));
        (cand, [[ja[0], jb[0]], [ja[1], jb[1]]])
    }

    /// Range residual rewritten as `sqrt(1 - R) - sqrt(1 - r_hat)`, which is
    /// first order in the path's deviation from a straight line, as the look
    /// angle is. `R - r_hat` is second order there and leaves the Jacobian
    /// nearly singular close to a collision course.
    fn gap(&self, f: &[f64; 2]) -> (f64, f64) {
        let s = (1.0 - (f[0] + self.r_hat)).max(1e-300).sqrt();
        (s - (1.0 - self.r_hat).max(0.0).sqrt(), s)
    }

    fn norm(&self, f: &[f64; 2]) -> f64 {
        self.gap(f).0.hypot(f[1])
    }

    fn converged(&self, f: &[f64; 2]) -> bool {
        f[0].abs() <= self.opts.tol_r * (1.0 + self.r_hat) && f[1].abs() <= self.opts.tol_sigma
    }

    fn accepts_warm(&self, c: &Candidate) -> bool {
        let tol = self.opts.warm_tol.max(self.opts.tol_r).max(self.opts.tol_sigma);
        c.admissible && c.f[0].abs() <= tol * (1.0 + self.r_hat) && c.f[1].abs() <= tol
    }

    fn clamp(alpha: f64, beta: f64, from: &Candidate) -> (f64, f64) {
        let alpha = if alpha > 0.0 { alpha } else { 0.5 * from.alpha };
        (alpha, beta.clamp(1e-9, PI - 1e-9))
    }

    /// Levenberg-Marquardt on the two endpoint residuals.
    fn refine(&self, alpha: f64, beta: f64) -> Candidate {
        let (mut cur, mut j) = self.eval_jac(alpha, beta);
        let mut lambda = 1e-3;
        for _ in 0..self.opts.max_iter {
            if self.converged(&cur.f) {
                break;
            }
            let (g, root) = self.gap(&cur.f);
            let w = -0.5 / root;
            let jw = [[j[0][0] * w, j[0][1] * w], j[1]];
            let fw = [g, cur.f[1]];
            let a11 = jw[0][0] * jw[0][0] + jw[1][0] * jw[1][0];
            let a12 = jw[0][0] * jw[0][1] + jw[1][0] * jw[1][1];
            let a22 = jw[0][1] * jw[0][1] + jw[1][1] * jw[1][1];
            let g1 = -(jw[0][0] * fw[0] + jw[1][0] * fw[1]);
            let g2 = -(jw[0][1] * fw[0] + jw[1][1] * fw[1]);
            let mut improved = false;
            while lambda < 1e12 {
                let (m11, m22) = (a11 * (1.0 + lambda) + 1e-300, a22 * (1.0 + lambda) + 1e-300);
                let det = m11 * m22 - a12 * a12;
                let da = (g1 * m22 - g2 * a12) / det;
                let db = (m11 * g2 - a12 * g1) / det;
                if !(da.is_finite() && db.is_finite()) {
                    lambda *= 10.0;
                    continue;
                }
                let (na, nb) = Self::clamp(cur.alpha + da, cur.beta + db, &cur);
                let (next, next_j) = self.eval_jac(na, nb);
                if self.norm(&next.f) < self.norm(&cur.f) {
                    cur = next;
                    j = next_j;
                    lambda = (lambda / 3.0).max(1e-12);
                    improved = true;
                    break;
                }
                lambda *= 5.0;
            }
            if !improved {
                break;
            }
        }
        cur
    }

    fn accepts(&self, c: &Candidate) -> bool {
        c.admissible && self.converged(&c.f)
    }

    fn global(&self) -> (Vec<Candidate>, f64) {
        let n = self.opts.grid.max(2);
        let span = (24.0 * self.sigma).max(self.opts.min_alpha_span);
        let grid: Vec<Vec<Candidate>> = (1..=n)
            .map(|i| {
                // Log-spaced in alpha: near a collision course the roots
                // sit at tiny alpha_hat.
                let alpha = span * ALPHA_SEED_RATIO.powf((i as f64 - n as f64) / (n as f64 - 1.0));
                (1..n)
                    .map(|j| self.eval(alpha, PI * j as f64 / n as f64))
                    .collect()
            })
            .collect();
        // Local minima of the merit over the 8-neighbourhood.
        let mut minima = Vec::new();
        for i in 0..grid.len() {
            for j in 0..grid[i].len() {
                let v = self.norm(&grid[i][j].f);
                let mut is_min = true;
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let (ii, jj) = (i as i64 + di, j as i64 + dj);
                        if (di, dj) == (0, 0)
                            || ii < 0
                            || jj < 0
                            || ii >= grid.len() as i64
                            || jj >= grid[i].len() as i64
                        {
                            continue;
                        }
                        if self.norm(&grid[ii as usize][jj as usize].f) < v {
                            is_min = false;
                        }
                    }
                }
                if is_min {
                    minima.push(grid[i][j]);
                }
            }
        }
        minima.sort_by(|a, b| self.norm(&a.f).total_cmp(&self.norm(&b.f)));
        minima.truncate(self.opts.seeds.max(1));

        let mut roots: Vec<Candidate> = Vec::new();
        let mut best = f64::INFINITY;
        for seed in minima {
            let c = self.refine(seed.alpha, seed.beta);
            best = best.min(self.norm(&c.f));
            if !self.accepts(&c) {
                continue;
            }
            let dup = roots.iter().any(|r| {
                (r.alpha - c.alpha).abs() <= 1e-6 * (1.0 + c.alpha) && (r.beta - c.beta).abs() <= 1e-6
            });
            if !dup {
                roots.push(c);
            }
        }
        (roots, best)
    }
}

fn degenerate(query: &GuidanceQuery) -> OracleSolution {
    OracleSolution {
        params: AdjointParams {
            alpha: 0.0,
            beta: PI / 2.0,
        },
        normalized: AdjointParams {
            alpha: 0.0,
            beta: PI / 2.0,
        },
        sign: 1.0,
        residual: [query.r_hat() - 1.0, 0.0],
        t_go: query.t_go,
        command: 0.0,
        effort: 0.0,
        admissible_roots: 1,
    }
}

fn solution(query: &GuidanceQuery, c: &Candidate, roots: usize) -> OracleSolution {
    let t_go = query.t_go;
    OracleSolution {
        params: AdjointParams {
            alpha: c.alpha / (t_go * t_go),
            beta: c.beta,
        },
        normalized: AdjointParams {
            alpha: c.alpha,
            beta: c.beta,
        },
        sign: query.sign(),
        residual: c.f,
        t_go,
        command: query.sign() * c.u_end / t_go,
        effort: query.speed * query.speed / t_go * c.effort,
        admissible_roots: roots,
    }
}

/// Optimal turn rate from the boundary-value oracle, with a global search
/// over the costate grid. Among admissible roots the one with least effort
/// is returned.
pub fn command_oracle(query: &GuidanceQuery, opts: &OracleOptions) -> Result<OracleSolution> {
    command_oracle_from(query, opts, None)
}

/// As [`command_oracle`], but try Newton from `warm` (unit-speed costates,
/// for instance the previous solution along a closed-loop run) before
/// falling back to the global search.
pub fn command_oracle_from(
    query: &GuidanceQuery,
    opts: &OracleOptions,
    warm: Option<AdjointParams>,
) -> Result<OracleSolution> {
    query.validate()?;
    if query.is_collision_course() {
        return Ok(degenerate(query));
    }
    let problem = Problem {
        r_hat: query.r_hat(),
        sigma: query.sigma.abs(),
        opts: *opts,
    };
    if let Some(w) = warm.filter(|w| w.alpha > 0.0) {
        let c = problem.refine(w.alpha * query.t_go * query.t_go, w.beta);
        if problem.accepts_warm(&c) {
            return Ok(solution(query, &c, 1));
        }
    }
    let (roots, best) = problem.global();
    let chosen = roots
        .iter()
        .min_by(|a, b| a.effort.total_cmp(&b.effort))
        .ok_or(Error::NoAdmissibleExtremal { residual: best })?;
    Ok(solution(query, chosen, roots.len()))
}

/// Proportional navigation `u = N * lambda_dot` from a Cartesian state.
pub fn pn_command(state: &CartesianState, speed: f64, gain: f64) -> Result<f64> {
    let r = state.range();
    if !(r > 0.0) {
        return Err(Error::LookAngleUndefined);
    }
    // lambda_dot = speed sin(theta - lambda) / r, written via the cross product.
    let (s, c) = state.theta.sin_cos();
    Ok(gain * speed * (state.x * s - state.y * c) / (r * r))
}

/// Proportional navigation from range and look angle.
pub fn pn_command_polar(state: &PolarState, speed: f64, gain: f64) -> Result<f64> {
    if !(state.r > 0.0) {
        return Err(Error::LookAngleUndefined);
    }
    Ok(gain * speed * state.sigma.sin() / state.r)
}

/// Open-loop optimal engagement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcpSolution {
    pub oracle: OracleSolution,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Turn rate at each trajectory point except the last.
    pub controls: Vec<f64>,
    pub effort: f64,
    pub miss_distance: f64,
    pub impact_time: f64,
}

/// Solve once from `initial` and replay the extremal forward in time with
/// step `dt`.
pub fn solve_ocp(
    initial: &CartesianState,
    speed: f64,
    t_f: f64,
    dt: f64,
    opts: &OracleOptions,
) -> Result<OcpSolution> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt = {dt} must be positive")));
    }
    let polar = cartesian_to_polar(initial)?;
    let query = GuidanceQuery::from_polar(polar, t_f, speed);
    let oracle = command_oracle(&query, opts)?;
    let AdjointParams { alpha, beta } = oracle.params;
    let sign = oracle.sign;

    // Extremal state at time-to-go t_f, unit speed, physical time.
    let (big, sb, cb) = if alpha > 0.0 {
        let system = ExtremalSystem::new(oracle.normalized);
        let [x, y, th] = sweep(&system, 1.0, opts.steps).state;
        let (sb, cb) = if system.orientation() == 0.0 {
            (0.0, beta.cos().signum())
        } else {
            beta.sin_cos()
        };
        ([x * t_f, y * t_f, th], sb, cb)
    } else {
        ([0.0; 3], 0.0, 0.0)
    };
    let u_of = |b: &[f64]| alpha * (b[1] * cb - b[0] * sb);

    // Physical pose, extremal pose and accumulated effort, integrated forward.
    let rhs = |s: &[f64; 7]| {
        let u = u_of(&s[3..6]);
        let a = speed * u;
        [
            speed * s[2].cos(),
            speed * s[2].sin(),
            sign * u,
            s[5].cos(),
            s[5].sin(),
            u,
            0.5 * a * a,
        ]
    };
    let mut s = [initial.x, initial.y, initial.theta, big[0], big[1], big[2], 0.0];
    let n = (t_f / dt * (1.0 - 1e-12)).ceil() as usize;
    let mut trajectory = vec![TrajectoryPoint::new(0.0, initial)];
    let mut controls = Vec::with_capacity(n);
    for k in 0..n {
        let t0 = k as f64 * dt;
        let t1 = ((k + 1) as f64 * dt).min(t_f);
        controls.push(sign * u_of(&s[3..6]));
        s = crate::ode::rk4_step(rhs, &s, t1 - t0);
        trajectory.push(TrajectoryPoint::new(t1, &CartesianState::new(s[0], s[1], s[2])));
    }
    let (miss_distance, impact_time) = closest_approach(&trajectory);
    Ok(OcpSolution {
        oracle,
        trajectory,
        controls,
        effort: s[6],
        miss_distance,
        impact_time,
    })
}
