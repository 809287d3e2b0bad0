//! Safety certificates for tracking a safe velocity, dynamically extended
//! safe sets, and numerical checks of CLF, CBF, ISS and ISSf conditions.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::barrier::{BarrierFunction, Configuration};
use crate::dynamics::{inertia_bounds, MechanicalSystem, Workspace};
use crate::error::{Error, Result};
use crate::tracking::{lyapunov_value, symmetric_min_eigenvalue, TrackingError};

/// Default slack for trajectory-level inequality checks.
pub const CONDITION_TOLERANCE: f64 = 1e-6;

/// `lambda = sigma_min(K) / sup_q sigma_max(D(q))`.
pub fn lambda_from_gains(k: &DMatrix<f64>, system: &MechanicalSystem, workspace: &Workspace) -> Result<f64> {
    if k.nrows() != k.ncols() || k.nrows() != system.dof() {
        return Err(Error::InvalidGains(format!(
            "K is {}x{}, system has {} degrees of freedom",
            k.nrows(),
            k.ncols(),
            system.dof()
        )));
    }
    let lo = symmetric_min_eigenvalue(k);
    if !(lo > 0.0) {
        return Err(Error::InvalidGains(format!("K is not positive definite (min eigenvalue {lo})")));
    }
    Ok(lo / inertia_bounds(system, workspace)?.max_eigenvalue)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingCertificate {
    pub alpha: f64,
    pub lambda: f64,
    pub k1: f64,
    pub c_h: f64,
    /// `(lambda - alpha) k1 / C_h`; not clamped, so it is `<= 0` when the
    /// tracking rate does not exceed `alpha`.
    pub alpha_e: f64,
    /// Slope of the linear gain `iota(s) = s / (2 k1)`.
    pub iota_slope: f64,
    /// `sup_t |d(t)|` used for `gamma`.
    pub disturbance_bound: f64,
    /// `iota(|d|_inf) / alpha`.
    pub gamma: f64,
    pub theorem_applicable: bool,
}

pub fn certificate(alpha: f64, lambda: f64, k1: f64, c_h: f64, iota_slope: f64) -> TrackingCertificate {
    TrackingCertificate {
        alpha,
        lambda,
        k1,
        c_h,
        alpha_e: (lambda - alpha) * k1 / c_h,
        iota_slope,
        disturbance_bound: 0.0,
        gamma: 0.0,
        theorem_applicable: lambda > alpha,
    }
}

impl TrackingCertificate {
    pub fn with_disturbance(mut self, bound: f64) -> Self {
        self.disturbance_bound = bound;
        self.gamma = self.iota(bound) / self.alpha;
        self
    }

    pub fn iota(&self, s: f64) -> f64 {
        self.iota_slope * s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SetMembershipReport {
    pub h: f64,
    pub v: f64,
    /// `-V + alpha_e h`.
    pub h_v: f64,
    /// `h + gamma`.
    pub h_d: f64,
    /// `h_V + gamma`.
    pub h_vd: f64,
    pub in_s: bool,
    pub in_s_v: bool,
    pub in_s_d: bool,
    pub in_s_vd: bool,
}

/// Membership from precomputed `h` and `V`, with `gamma` from `disturbance_bound`.
pub fn membership_from_values(cert: &TrackingCertificate, h: f64, v: f64, disturbance_bound: f64) -> SetMembershipReport {
    let gamma = cert.iota(disturbance_bound) / cert.alpha;
    let h_v = -v + cert.alpha_e * h;
    let (h_d, h_vd) = (h + gamma, h_v + gamma);
    SetMembershipReport {
        h,
        v,
        h_v,
        h_d,
        h_vd,
        in_s: h >= 0.0,
        in_s_v: h_v >= 0.0,
        in_s_d: h_d >= 0.0,
        in_s_vd: h_vd >= 0.0,
    }
}

/// Membership of `(q, e)`. The barrier is evaluated at the reduced-order
/// configuration `q_reduced` and `V` at the full configuration `q`.
pub fn membership(
    cert: &TrackingCertificate,
    cbf: &BarrierFunction,
    system: &MechanicalSystem,
    q_reduced: &Configuration,
    q: &Configuration,
    e: &TrackingError,
    disturbance_bound: f64,
) -> Result<SetMembershipReport> {
    let h = cbf.value(q_reduced)?;
    Ok(membership_from_values(cert, h, lyapunov_value(system, q, e), disturbance_bound))
}

/// Inequality checked sample-by-sample along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ConditionKind {
    /// `V_dot <= -lambda V`.
    Clf { lambda: f64 },
    /// `h_dot >= -alpha h`.
    Cbf { alpha: f64 },
    /// `V_dot <= -lambda V + iota(|d|_inf)`.
    Iss { lambda: f64, iota: f64 },
    /// `h_dot >= -alpha h - iota(|d|_inf)`.
    Issf { alpha: f64, iota: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationReport {
    /// Margin at each interior sample; negative means the inequality fails.
    pub margins: Vec<f64>,
    /// Sample indices (into the input) whose margin is below `-tolerance`.
    pub violations: Vec<usize>,
    pub worst_margin: f64,
}

impl ViolationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Central-difference check of `kind` on samples `(t_i, x_i)` of `V` or `h`.
pub fn clf_cbf_condition_check(kind: ConditionKind, times: &[f64], values: &[f64], tolerance: f64) -> Result<ViolationReport> {
    if times.len() != values.len() || times.len() < 3 {
        return Err(Error::InvalidScenario(
            "condition check needs at least 3 matching samples".into(),
        ));
    }
    let mut margins = Vec::with_capacity(times.len() - 2);
    let mut violations = Vec::new();
    let mut worst = f64::INFINITY;
    for i in 1..times.len() - 1 {
        let rate = (values[i + 1] - values[i - 1]) / (times[i + 1] - times[i - 1]);
        let x = values[i];
        let margin = match kind {
            ConditionKind::Clf { lambda } => -lambda * x - rate,
            ConditionKind::Cbf { alpha } => rate + alpha * x,
            ConditionKind::Iss { lambda, iota } => -lambda * x + iota - rate,
            ConditionKind::Issf { alpha, iota } => rate + alpha * x + iota,
        };
        if margin < -tolerance {
            violations.push(i);
        }
        worst = worst.min(margin);
        margins.push(margin);
    }
    Ok(ViolationReport {
        margins,
        violations,
        worst_margin: worst,
    })
}

/// Exponential envelope `|e(t)| <= M |e_0| exp(-lambda t)` fitted to samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeFit {
    pub lambda: f64,
    pub m: f64,
}

/// Least-squares fit of `log` of the running future maximum of `norms`,
/// followed by the smallest `M` that makes the envelope hold at every sample.
/// Samples below `1e-9` of the initial norm are left out of the fit.
/// Returns `None` when the initial norm is zero.
pub fn fit_exponential_envelope(times: &[f64], norms: &[f64]) -> Option<EnvelopeFit> {
    let e0 = *norms.first()?;
    if !(e0 > 0.0) || times.len() != norms.len() {
        return None;
    }
    let mut envelope = norms.to_vec();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let floor = e0 * 1e-9;
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(&envelope)
        .filter(|(_, e)| **e > floor)
        .map(|(t, e)| (*t, e.ln()))
        .collect();
    let lambda = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        if sxx > 0.0 {
            (-sxy / sxx).max(0.0)
        } else {
            0.0
        }
    } else {
        0.0
    };
    let m = times
        .iter()
        .zip(norms)
        .map(|(t, e)| e * (lambda * t).exp() / e0)
        .fold(1.0, f64::max);
    Some(EnvelopeFit { lambda, m })
}

/// Parameters of the comparison system `y_dot = -alpha y - c exp(-lambda t)`,
/// `c = C_h M |e_0|`, `y(0) = h_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonBound {
    pub alpha: f64,
    pub lambda: f64,
    pub c: f64,
    pub h0: f64,
}

impl ComparisonBound {
    pub fn new(alpha: f64, c_h: f64, fit: EnvelopeFit, e0_norm: f64, h0: f64) -> Self {
        Self {
            alpha,
            lambda: fit.lambda,
            c: c_h * fit.m * e0_norm,
            h0,
        }
    }

    fn rate(&self, t: f64, y: f64) -> f64 {
        -self.alpha * y - self.c * (-self.lambda * t).exp()
    }

    pub fn closed_form(&self, t: f64) -> f64 {
        let (a, l) = (self.alpha, self.lambda);
        let decay = (-a * t).exp();
        if (a - l).abs() < 1e-12 {
            decay * (self.h0 - self.c * t)
        } else {
            decay * self.h0 - self.c * ((-l * t).exp() - decay) / (a - l)
        }
    }

    /// RK4 solution on the given (increasing) time grid, starting at `times[0]`.
    pub fn integrate(&self, times: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(times.len());
        let Some(&t0) = times.first() else {
            return out;
        };
        let mut y = self.h0;
        out.push(y);
        let mut t = t0;
        for &next in &times[1..] {
            let h = next - t;
            let k1 = self.rate(t, y);
            let k2 = self.rate(t + h / 2.0, y + h / 2.0 * k1);
            let k3 = self.rate(t + h / 2.0, y + h / 2.0 * k2);
            let k4 = self.rate(t + h, y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t = next;
            out.push(y);
        }
        out
    }
}
