//! Closed-loop engagements against a stationary target at the origin.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::guidance::{
    command_nn, command_oracle_from, pn_command, GuidanceQuery, OracleOptions, PN_GAIN,
};
use crate::kinematics::{cartesian_to_polar, step_cartesian, CartesianState};
use crate::mlp::CommandModel;
use crate::pmp::AdjointParams;
use crate::{Error, Result};

pub const TRAJECTORY_HEADER: &str = "t,x,y,theta,r,sigma,u,a";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceLaw {
    /// Trained network.
    Nn,
    /// Boundary-value oracle, re-solved at every update.
    Oracle,
    /// Proportional navigation.
    Pn,
}

impl std::str::FromStr for GuidanceLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(Self::Nn),
            "oracle" => Ok(Self::Oracle),
            "pn" => Ok(Self::Pn),
            _ => Err(Error::InvalidConfig(format!(
                "unknown guidance law {s:?} (expected nn, oracle or pn)"
            ))),
        }
    }
}

fn default_dt() -> f64 {
    0.01
}

fn default_gain() -> f64 {
    PN_GAIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub initial: CartesianState,
    pub speed: f64,
    /// Desired impact time.
    pub t_f: f64,
    pub guidance: GuidanceLaw,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Guidance update period; defaults to `dt`.
    #[serde(default)]
    pub update_period: Option<f64>,
    #[serde(default = "default_gain")]
    pub pn_gain: f64,
    /// PN ignores the impact time, so it flies until impact or this limit
    /// (default `10 t_f`).
    #[serde(default)]
    pub max_time: Option<f64>,
    #[serde(default)]
    pub oracle: OracleOptions,
}

impl Scenario {
    pub fn new(initial: CartesianState, speed: f64, t_f: f64, guidance: GuidanceLaw) -> Self {
        Self {
            initial,
            speed,
            t_f,
            guidance,
            dt: default_dt(),
            update_period: None,
            pn_gain: PN_GAIN,
            max_time: None,
            oracle: OracleOptions::default(),
        }
    }

    /// Scenario for an interceptor at `position` and a target at `target`,
    /// both in a common frame.
    pub fn with_target(
        position: (f64, f64),
        heading: f64,
        target: (f64, f64),
        speed: f64,
        t_f: f64,
        guidance: GuidanceLaw,
    ) -> Self {
        let initial = CartesianState::new(position.0 - target.0, position.1 - target.1, heading);
        Self::new(initial, speed, t_f, guidance)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let s = &self.initial;
        if ![s.x, s.y, s.theta].iter().all(|v| v.is_finite()) {
            return bad(format!("non-finite initial state {s:?}"));
        }
        for (name, v) in [("speed", self.speed), ("t_f", self.t_f), ("dt", self.dt)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if let Some(p) = self.update_period {
            if !(p.is_finite() && p >= self.dt) {
                return bad(format!("update period {p} must be at least dt"));
            }
        }
        if self.guidance != GuidanceLaw::Pn {
            let reach = self.speed * self.t_f;
            if s.range() > reach * (1.0 + 1e-12) {
                return Err(Error::TargetUnreachable {
                    range: s.range(),
                    reach,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub r: f64,
    /// `NaN` at the target.
    pub sigma: f64,
}

impl TrajectoryPoint {
    pub fn new(t: f64, s: &CartesianState) -> Self {
        Self {
            t,
            x: s.x,
            y: s.y,
            theta: s.theta,
            r: s.range(),
            sigma: cartesian_to_polar(s).map_or(f64::NAN, |p| p.sigma),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    pub t: f64,
    /// Turn rate, rad/s.
    pub u: f64,
    /// Lateral acceleration, m/s^2.
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub trajectory: Vec<TrajectoryPoint>,
    /// One entry per integration step, held over that step.
    pub controls: Vec<ControlSample>,
    /// `int a^2 / 2 dt`, m^2/s^3.
    pub effort: f64,
    pub miss_distance: f64,
    pub impact_time: f64,
    /// `(J - J_ref) / J_ref` once a reference is attached.
    pub delta_j: Option<f64>,
}

impl SimResult {
    pub fn with_reference(mut self, reference_effort: f64) -> Self {
        self.delta_j = Some(relative_deviation(self.effort, reference_effort));
        self
    }
}

pub fn relative_deviation(effort: f64, reference: f64) -> f64 {
    (effort - reference) / reference
}

/// Trapezoidal `int (speed u)^2 / 2 dt` over samples `(t_k, u_k)`.
pub fn control_effort(times: &[f64], u: &[f64], speed: f64) -> f64 {
    assert_eq!(times.len(), u.len());
    times
        .windows(2)
        .zip(u.windows(2))
        .map(|(t, u)| {
            let (a0, a1) = (speed * u[0], speed * u[1]);
            0.25 * (a0 * a0 + a1 * a1) * (t[1] - t[0])
        })
        .sum()
}

/// Miss distance and time of closest approach over the last two segments,
/// treating each segment as straight.
pub fn closest_approach(points: &[TrajectoryPoint]) -> (f64, f64) {
    let last = points.last().expect("non-empty trajectory");
    let mut best = (last.r, last.t);
    let start = points.len().saturating_sub(3);
    for w in points[start..].windows(2) {
        let (p, q) = (&w[0], &w[1]);
        let (dx, dy) = (q.x - p.x, q.y - p.y);
        let len2 = dx * dx + dy * dy;
        let s = if len2 > 0.0 {
            (-(p.x * dx + p.y * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let d = (p.x + s * dx).hypot(p.y + s * dy);
        if d < best.0 {
            best = (d, p.t + s * (q.t - p.t));
        }
    }
    best
}

struct Controller<'a> {
    scenario: &'a Scenario,
    model: Option<&'a CommandModel>,
    warm: Option<AdjointParams>,
}

impl Controller<'_> {
    fn command(&mut self, state: &CartesianState, t: f64) -> Result<f64> {
        let sc = self.scenario;
        match sc.guidance {
            GuidanceLaw::Pn => pn_command(state, sc.speed, sc.pn_gain),
            GuidanceLaw::Nn | GuidanceLaw::Oracle => {
                let polar = cartesian_to_polar(state)?;
                let query = GuidanceQuery::from_polar(polar, sc.t_f - t, sc.speed);
                if sc.guidance == GuidanceLaw::Nn {
                    command_nn(self.model.ok_or(Error::MissingModel)?, &query)
                } else {
                    let sol = command_oracle_from(&query, &sc.oracle, self.warm)?;
                    self.warm = (sol.params.alpha > 0.0).then_some(sol.params);
                    Ok(sol.command)
                }
            }
        }
    }
}

/// Fly one engagement with the scenario's guidance law.
///
/// The command is held between updates and over the terminal phase
/// (`r < 2 speed dt`), and also whenever rounding has left the target just
/// out of reach of the remaining time.
pub fn simulate(scenario: &Scenario, model: Option<&CommandModel>) -> Result<SimResult> {
    scenario.validate()?;
    if scenario.guidance == GuidanceLaw::Nn && model.is_none() {
        return Err(Error::MissingModel);
    }
    let (speed, dt) = (scenario.speed, scenario.dt);
    let limit = match scenario.guidance {
        GuidanceLaw::Pn => scenario.max_time.unwrap_or(10.0 * scenario.t_f),
        _ => scenario.t_f,
    };
    let every = scenario
        .update_period
        .map_or(1, |p| ((p / dt).round() as usize).max(1));
    let mut ctl = Controller {
        scenario,
        model,
        warm: None,
    };
    let mut state = scenario.initial;
    let mut trajectory = vec![TrajectoryPoint::new(0.0, &state)];
    let mut controls: Vec<ControlSample> = Vec::new();
    let mut u = 0.0;
    let mut t = 0.0;
    for k in 0usize.. {
        let r = state.range();
        if r < 0.5 * speed * dt || t >= limit * (1.0 - 1e-12) {
            break;
        }
        let reachable = scenario.guidance == GuidanceLaw::Pn || r < speed * (scenario.t_f - t);
        if k % every == 0 && r >= 2.0 * speed * dt && reachable {
            u = ctl.command(&state, t).map_err(|e| Error::Guidance {
                time: t,
                source: Box::new(e),
            })?;
        }
        let t_next = ((k + 1) as f64 * dt).min(limit);
        state = step_cartesian(&state, u, t_next - t, speed)?;
        controls.push(ControlSample {
            t,
            u,
            a: speed * u,
        });
        t = t_next;
        trajectory.push(TrajectoryPoint::new(t, &state));
    }
    let mut times: Vec<f64> = controls.iter().map(|c| c.t).collect();
    let mut us: Vec<f64> = controls.iter().map(|c| c.u).collect();
    times.push(t);
    us.push(u);
    let effort = control_effort(&times, &us, speed);
    let (miss_distance, impact_time) = closest_approach(&trajectory);
    Ok(SimResult {
        trajectory,
        controls,
        effort,
        miss_distance,
        impact_time,
        delta_j: None,
    })
}

/// Independent engagements sharing one impact time. Failures stay local to
/// their scenario.
pub fn salvo(scenarios: &[Scenario], model: Option<&CommandModel>) -> Result<Vec<Result<SimResult>>> {
    if let Some(first) = scenarios.first() {
        if scenarios.iter().any(|s| s.t_f != first.t_f) {
            return Err(Error::InvalidConfig(
                "salvo scenarios must share the impact time".into(),
            ));
        }
    }
    Ok(scenarios.par_iter().map(|s| simulate(s, model)).collect())
}

/// Largest minus smallest impact time among successful runs.
pub fn impact_time_spread(results: &[Result<SimResult>]) -> Option<f64> {
    let times: Vec<f64> = results
        .iter()
        .filter_map(|r| r.as_ref().ok().map(|r| r.impact_time))
        .collect();
    let lo = times.iter().copied().reduce(f64::min)?;
    let hi = times.iter().copied().reduce(f64::max)?;
    Some(hi - lo)
}

pub fn write_trajectory_to<W: Write>(result: &SimResult, mut w: W) -> Result<()> {
    writeln!(w, "{TRAJECTORY_HEADER}")?;
    let held = result.controls.last().map_or((0.0, 0.0), |c| (c.u, c.a));
    for (k, p) in result.trajectory.iter().enumerate() {
        let (u, a) = result.controls.get(k).map_or(held, |c| (c.u, c.a));
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            p.t, p.x, p.y, p.theta, p.r, p.sigma, u, a
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory(result: &SimResult, path: &Path) -> Result<()> {
    write_trajectory_to(result, BufWriter::new(File::create(path)?))
}
