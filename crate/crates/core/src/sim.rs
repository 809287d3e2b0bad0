//! Fixed-step RK4 closed-loop simulation: desired velocity, safety filter,
//! tracking controller, input clamp, full-order dynamics.
//!
//! The state is laid out as `[q, pose, q_dot]`, where `pose = (x, y)` is
//! present only for systems whose planar position is integrated from the
//! path velocity and yaw. The controller and filter are evaluated at every
//! RK4 stage.
//!
//! The closed-loop vector field is only piecewise smooth: it kinks where the
//! filter constraint activates, the closest obstacle changes, the desired
//! speed saturates or an input clamps. A step that changes this mode is
//! split at the switching time, located by bisection, so the output grid
//! stays fixed while RK4 never integrates across a kink.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::certificates::{
    certificate, fit_exponential_envelope, lambda_from_gains, membership_from_values, EnvelopeFit,
    SetMembershipReport, TrackingCertificate,
};
use crate::dynamics::{inertia_bounds, InertiaBounds};
use crate::error::{Error, Result};
use crate::filter::{desired_velocity, FilterOutput};
use crate::scenario::Scenario;
use crate::tracking::lyapunov_value;

/// Probe distance for the directional derivative of the safe velocity.
pub const FEEDFORWARD_PROBE: f64 = 1e-6;

/// Switching times are located to this fraction of the step.
pub const EVENT_TOLERANCE: f64 = 1e-9;

/// Switches handled within one step; later ones are stepped over.
pub const MAX_EVENTS_PER_STEP: usize = 8;

/// One classical Runge-Kutta step of `x_dot = f(t, x)`.
pub fn rk4_step<F>(f: &mut F, t: f64, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + h / 2.0, &(x + &k1 * (h / 2.0)))?;
    let k3 = f(t + h / 2.0, &(x + &k2 * (h / 2.0)))?;
    let k4 = f(t + h, &(x + &k3 * h))?;
    Ok(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub q: Vec<f64>,
    pub pose: Option<[f64; 2]>,
    pub qdot: Vec<f64>,
    /// Configuration seen by the barrier and the reduced-order model.
    pub q_reduced: Vec<f64>,
    /// Safe reduced-order input `mu_s`.
    pub mu_s: Vec<f64>,
    /// Safe velocity `q_dot_s` in generalized coordinates.
    pub qdot_s: Vec<f64>,
    pub u_raw: Vec<f64>,
    pub u: Vec<f64>,
    /// Input-channel disturbance `d(t)`.
    pub disturbance: Vec<f64>,
    pub h: f64,
    pub v: f64,
    pub h_v: f64,
    pub active_obstacle: Option<usize>,
}

impl TrajectoryRecord {
    /// Tracking error `q_dot - q_dot_s`.
    pub fn error(&self) -> DVector<f64> {
        DVector::from_iterator(self.qdot.len(), self.qdot.iter().zip(&self.qdot_s).map(|(a, b)| a - b))
    }

    pub fn clamped(&self) -> bool {
        self.u != self.u_raw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaSource {
    /// From the controller gain and the inertia sweep.
    Gains,
    /// Fitted to the tracking-error envelope of the run.
    Fitted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryLog {
    pub records: Vec<TrajectoryRecord>,
    pub certificate: TrackingCertificate,
    pub lambda_source: LambdaSource,
    pub inertia: InertiaBounds,
    /// Membership of the initial state.
    pub initial: SetMembershipReport,
}

impl TrajectoryLog {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn h(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.h).collect()
    }

    pub fn v(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.v).collect()
    }

    pub fn error_norms(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.error().norm()).collect()
    }
}

/// Discrete part of the closed loop; the vector field is smooth while it
/// is constant.
#[derive(Debug, Clone, PartialEq)]
struct Mode {
    constrained: bool,
    active: Option<usize>,
    saturated: bool,
    clamped: Vec<bool>,
}

struct Safe {
    filter: FilterOutput,
    q_reduced: DVector<f64>,
    qdot_s: DVector<f64>,
    saturated: bool,
}

impl Safe {
    fn branch(&self) -> (bool, Option<usize>, bool) {
        (self.filter.constrained, self.filter.active_obstacle, self.saturated)
    }
}

impl Mode {
    fn branch(&self) -> (bool, Option<usize>, bool) {
        (self.constrained, self.active, self.saturated)
    }
}

struct Stage {
    mode: Mode,
    filter: FilterOutput,
    q_reduced: DVector<f64>,
    qdot_s: DVector<f64>,
    u_raw: DVector<f64>,
    u: DVector<f64>,
    disturbance: DVector<f64>,
    rate: DVector<f64>,
}

struct ClosedLoop<'a> {
    scenario: &'a Scenario,
    filter: crate::filter::SafeVelocityFilter,
    controller: crate::tracking::TrackingController,
    b: DMatrix<f64>,
    n: usize,
    pose: Option<(usize, usize)>,
}

impl<'a> ClosedLoop<'a> {
    fn new(scenario: &'a Scenario) -> Result<Self> {
        let parts = scenario.assemble()?;
        let system = &scenario.system;
        Ok(Self {
            scenario,
            filter: parts.filter,
            controller: parts.controller,
            b: system.input_matrix(),
            n: system.dof(),
            pose: system.pose_coordinates(),
        })
    }

    fn config_len(&self) -> usize {
        self.n + if self.pose.is_some() { 2 } else { 0 }
    }

    fn initial_state(&self) -> DVector<f64> {
        let init = &self.scenario.initial;
        let mut x: Vec<f64> = init.q.clone();
        if let Some(p) = init.pose {
            x.extend_from_slice(&p);
        }
        x.extend_from_slice(&init.qdot);
        DVector::from_vec(x)
    }

    fn reduced(&self, c: &[f64]) -> DVector<f64> {
        match self.pose {
            Some((_, yaw)) => DVector::from_column_slice(&[c[self.n], c[self.n + 1], c[yaw]]),
            None => DVector::from_column_slice(&c[..self.n]),
        }
    }

    /// Filter output and the safe velocity in generalized coordinates.
    fn safe(&self, c: &[f64]) -> Result<Safe> {
        let qr = self.reduced(c);
        let law = &self.scenario.desired;
        let desired = desired_velocity(law, &qr)?;
        let out = self.filter.apply(&qr, &desired)?;
        let qdot_s = match self.pose {
            Some((path, yaw)) => {
                let mut v = DVector::zeros(self.n);
                v[path] = out.input[0];
                v[yaw] = out.input[1];
                v
            }
            None => self.filter.model.velocity(&qr, &out.input)?,
        };
        Ok(Safe {
            filter: out,
            saturated: law.saturated(&qr),
            q_reduced: qr,
            qdot_s,
        })
    }

    fn config_rate(&self, x: &DVector<f64>) -> DVector<f64> {
        let c = self.config_len();
        let qd = x.rows(c, self.n);
        let mut rate = DVector::zeros(c);
        rate.rows_mut(0, self.n).copy_from(&qd);
        if let Some((path, yaw)) = self.pose {
            let (s, co) = x[yaw].sin_cos();
            rate[self.n] = qd[path] * co;
            rate[self.n + 1] = qd[path] * s;
        }
        rate
    }

    /// Derivative of the safe velocity along the current configuration rate.
    /// Central difference, or one-sided so that the probe stays on the
    /// branch `pin` (the center's branch by default) of the piecewise-smooth
    /// safe velocity.
    fn safe_acceleration(
        &self,
        c: &[f64],
        rate: &DVector<f64>,
        center: &Safe,
        pin: Option<&Mode>,
    ) -> Result<DVector<f64>> {
        let speed = rate.norm();
        if speed == 0.0 {
            return Ok(DVector::zeros(self.n));
        }
        let dir = rate / speed;
        let eps = FEEDFORWARD_PROBE;
        let shift = |sign: f64| -> Vec<f64> { c.iter().zip(dir.iter()).map(|(a, d)| a + sign * eps * d).collect() };
        let ahead = self.safe(&shift(1.0))?;
        let behind = self.safe(&shift(-1.0))?;
        let want = pin.map_or(center.branch(), Mode::branch);
        let diff = match (ahead.branch() == want, behind.branch() == want) {
            (true, false) => (&ahead.qdot_s - &center.qdot_s) / eps,
            (false, true) => (&center.qdot_s - &behind.qdot_s) / eps,
            _ => (ahead.qdot_s - behind.qdot_s) / (2.0 * eps),
        };
        Ok(diff * speed)
    }

    fn disturbance(&self, t: f64) -> DVector<f64> {
        match &self.scenario.disturbance {
            Some(d) => DVector::from_vec(d.at(t)),
            None => DVector::zeros(self.scenario.system.inputs()),
        }
    }

    /// Closed-loop evaluation at `(t, x)`. Inside a split step, `pin` keeps
    /// the feedforward on the branch of that sub-step.
    fn stage(&self, t: f64, x: &DVector<f64>, pin: Option<&Mode>) -> Result<Stage> {
        let system = &self.scenario.system;
        let c = self.config_len();
        let config: Vec<f64> = x.rows(0, c).iter().copied().collect();
        let q = x.rows(0, self.n).into_owned();
        let qd = x.rows(c, self.n).into_owned();
        let safe = self.safe(&config)?;
        let config_rate = self.config_rate(x);
        let qdd_s = if self.controller.needs_feedforward() {
            self.safe_acceleration(&config, &config_rate, &safe, pin)?
        } else {
            DVector::zeros(self.n)
        };
        let u_raw = self.controller.law(system, &q, &qd, &safe.qdot_s, &qdd_s)?;
        let u = system.clamp_input(&u_raw);
        let disturbance = self.disturbance(t);
        let force = &self.b * (&u + &disturbance);
        let qdd = system.forward_dynamics(&q, &qd, &force)?;
        let mut rate = DVector::zeros(x.len());
        rate.rows_mut(0, c).copy_from(&config_rate);
        rate.rows_mut(c, self.n).copy_from(&qdd);
        Ok(Stage {
            mode: Mode {
                constrained: safe.filter.constrained,
                active: safe.filter.active_obstacle,
                saturated: safe.saturated,
                clamped: u_raw.iter().zip(u.iter()).map(|(a, b)| a != b).collect(),
            },
            filter: safe.filter,
            q_reduced: safe.q_reduced,
            qdot_s: safe.qdot_s,
            u_raw,
            u,
            disturbance,
            rate,
        })
    }

    /// Advance one output step of length `h` from `(t, x)`, splitting it at
    /// mode switches. Returns the new state and its stage.
    fn advance(&self, t: f64, x: DVector<f64>, mode: Mode, h: f64) -> Result<(DVector<f64>, Stage)> {
        let end = t + h;
        let (mut t0, mut x0, mut mode0) = (t, x, mode);
        let mut events = 0;
        loop {
            let pin = mode0.clone();
            let mut f = |t: f64, x: &DVector<f64>| self.stage(t, x, Some(&pin)).map(|s| s.rate);
            let span = end - t0;
            let x1 = rk4_step(&mut f, t0, &x0, span)?;
            let s1 = self.stage(end, &x1, None)?;
            if s1.mode == mode0 || events == MAX_EVENTS_PER_STEP {
                return Ok((x1, s1));
            }
            let (mut lo, mut hi) = (0.0, span);
            let mut after = (x1, s1);
            while hi - lo > EVENT_TOLERANCE * h {
                let mid = 0.5 * (lo + hi);
                let xm = rk4_step(&mut f, t0, &x0, mid)?;
                let sm = self.stage(t0 + mid, &xm, None)?;
                if sm.mode == mode0 {
                    lo = mid;
                } else {
                    hi = mid;
                    after = (xm, sm);
                }
            }
            if hi == span {
                return Ok(after);
            }
            t0 += hi;
            x0 = after.0;
            mode0 = after.1.mode;
            events += 1;
        }
    }

    fn record(&self, t: f64, x: &DVector<f64>, s: &Stage) -> TrajectoryRecord {
        let c = self.config_len();
        let q = x.rows(0, self.n).into_owned();
        let qd = x.rows(c, self.n).into_owned();
        let v = lyapunov_value(&self.scenario.system, &q, &(&qd - &s.qdot_s));
        TrajectoryRecord {
            t,
            q: q.iter().copied().collect(),
            pose: self.pose.map(|_| [x[self.n], x[self.n + 1]]),
            qdot: qd.iter().copied().collect(),
            q_reduced: s.q_reduced.iter().copied().collect(),
            mu_s: s.filter.input.iter().copied().collect(),
            qdot_s: s.qdot_s.iter().copied().collect(),
            u_raw: s.u_raw.iter().copied().collect(),
            u: s.u.iter().copied().collect(),
            disturbance: s.disturbance.iter().copied().collect(),
            h: s.filter.h,
            v,
            h_v: f64::NAN,
            active_obstacle: s.filter.active_obstacle,
        }
    }
}

/// Number of steps for a duration; records are `steps + 1`.
pub fn step_count(duration: f64, step: f64) -> usize {
    (duration / step).round().max(1.0) as usize
}

/// Run the closed loop of `scenario`. Deterministic: equal scenarios give
/// bit-identical logs.
pub fn simulate(scenario: &Scenario) -> Result<TrajectoryLog> {
    let lp = ClosedLoop::new(scenario)?;
    let h = scenario.sim.step;
    let steps = step_count(scenario.sim.duration, h);
    let mut x = lp.initial_state();
    let mut stage = lp.stage(0.0, &x, None)?;
    let mut records = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * h;
        records.push(lp.record(t, &x, &stage));
        if k == steps {
            break;
        }
        let mode = stage.mode.clone();
        (x, stage) = match lp.advance(t, x, mode, h) {
            Ok(next) if next.0.iter().all(|v| v.is_finite()) => next,
            Ok(_) | Err(Error::NumericalSingularity { .. }) => {
                return Err(Error::Divergence {
                    step: k + 1,
                    time: (k + 1) as f64 * h,
                })
            }
            Err(e) => return Err(e),
        };
    }
    finish(scenario, &lp, records)
}

fn finish(scenario: &Scenario, lp: &ClosedLoop, mut records: Vec<TrajectoryRecord>) -> Result<TrajectoryLog> {
    let system = &scenario.system;
    let inertia = inertia_bounds(system, &scenario.workspace)?;
    let (lambda, lambda_source) = match lp.controller.closed_loop_gain(system) {
        Some(k) => (lambda_from_gains(&k, system, &scenario.workspace)?, LambdaSource::Gains),
        None => {
            let times: Vec<f64> = records.iter().map(|r| r.t).collect();
            let norms: Vec<f64> = records.iter().map(|r| r.error().norm()).collect();
            let fit = fit_exponential_envelope(&times, &norms);
            (fit.map_or(0.0, |f| f.lambda), LambdaSource::Fitted)
        }
    };
    let k1 = inertia.k1();
    let d_sup = records
        .iter()
        .map(|r| (&lp.b * DVector::from_column_slice(&r.disturbance)).norm())
        .fold(0.0, f64::max);
    let cert = certificate(scenario.filter.alpha, lambda, k1, lp.filter.cbf.gradient_bound(), 1.0 / (2.0 * k1))
        .with_disturbance(d_sup);
    for r in &mut records {
        r.h_v = -r.v + cert.alpha_e * r.h;
    }
    let first = &records[0];
    let initial = membership_from_values(&cert, first.h, first.v, d_sup);
    Ok(TrajectoryLog {
        records,
        certificate: cert,
        lambda_source,
        inertia,
        initial,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyMetrics {
    pub samples: usize,
    pub min_h: f64,
    pub min_h_time: f64,
    pub min_h_v: f64,
    pub safe: bool,
    /// Distance from the final reduced configuration to the goal.
    pub final_goal_distance: Option<f64>,
    /// Fraction of samples whose input was clamped.
    pub clamp_fraction: f64,
    /// Envelope `|e(t)| <= M |e_0| exp(-lambda t)`.
    pub error_envelope: Option<EnvelopeFit>,
    /// Largest sampled generalized disturbance `|B d(t)|`.
    pub disturbance_sup: f64,
}

pub fn safety_metrics(log: &TrajectoryLog, goal: Option<&[f64]>) -> SafetyMetrics {
    let recs = &log.records;
    let (mut min_h, mut min_h_time, mut min_h_v) = (f64::INFINITY, 0.0, f64::INFINITY);
    for r in recs {
        if r.h < min_h {
            min_h = r.h;
            min_h_time = r.t;
        }
        min_h_v = min_h_v.min(r.h_v);
    }
    let final_goal_distance = match (goal, recs.last()) {
        (Some(g), Some(last)) => Some(
            g.iter()
                .zip(&last.q_reduced)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt(),
        ),
        _ => None,
    };
    let clamped = recs.iter().filter(|r| r.clamped()).count();
    SafetyMetrics {
        samples: recs.len(),
        min_h,
        min_h_time,
        min_h_v,
        safe: min_h >= 0.0,
        final_goal_distance,
        clamp_fraction: if recs.is_empty() { 0.0 } else { clamped as f64 / recs.len() as f64 },
        error_envelope: fit_exponential_envelope(&log.times(), &log.error_norms()),
        disturbance_sup: log.certificate.disturbance_bound,
    }
}
