//! Velocity-tracking controllers and the Lyapunov function
//! `V(q, e) = sqrt(e^T D(q) e / 2)` of the tracking error `e = q_dot - q_dot_s`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{symmetric_eigen_extremes, MechanicalSystem};
use crate::error::{check_dim, Error, Result};

pub type TrackingError = DVector<f64>;

/// Voltage limit applied by the Segway controllers.
pub const SEGWAY_VOLTAGE_LIMIT: f64 = 20.0;

/// Gain given as a scalar multiple of identity, a diagonal, or a full
/// row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainMatrix {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl GainMatrix {
    pub fn to_matrix(&self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let m = match self {
            GainMatrix::Scalar(k) => {
                if rows != cols {
                    return Err(Error::InvalidGains(format!("scalar gain needs a square {rows}x{cols} shape")));
                }
                DMatrix::identity(rows, cols) * *k
            }
            GainMatrix::Diagonal(d) => {
                if rows != cols || d.len() != rows {
                    return Err(Error::InvalidGains(format!(
                        "diagonal gain of length {} does not fit {rows}x{cols}",
                        d.len()
                    )));
                }
                DMatrix::from_diagonal(&DVector::from_column_slice(d))
            }
            GainMatrix::Full(r) => {
                if r.len() != rows || r.iter().any(|row| row.len() != cols) {
                    return Err(Error::InvalidGains(format!("gain matrix is not {rows}x{cols}")));
                }
                DMatrix::from_fn(rows, cols, |i, j| r[i][j])
            }
        };
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidGains("gains must be finite".into()));
        }
        Ok(m)
    }
}

/// Segway gains in V s/m, V/rad, V s/rad and V s/rad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegwayGains {
    pub k_pdot: f64,
    pub k_phi: f64,
    pub k_phidot: f64,
    pub k_psidot: f64,
}

impl Default for SegwayGains {
    fn default() -> Self {
        Self {
            k_pdot: 50.0,
            k_phi: 150.0,
            k_phidot: 40.0,
            k_psidot: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerGains {
    /// `u = -K_D e`, `K_D` is `m x n`.
    D { kd: GainMatrix },
    /// `u = B^-1 (G - K e)`.
    DGravity { k: GainMatrix },
    /// `u = B^-1 (D q_ddot_s + C q_dot_s + G - K e)`.
    ComputedTorque { k: GainMatrix },
    SegwayPlanar(SegwayGains),
    SegwaySpatial(SegwayGains),
}

pub fn d_controller(kd: &DMatrix<f64>, e: &TrackingError) -> Result<DVector<f64>> {
    check_dim("tracking error", kd.ncols(), e.len())?;
    Ok(-(kd * e))
}

fn input_inverse(system: &MechanicalSystem) -> Result<DMatrix<f64>> {
    let b = system.input_matrix();
    if b.nrows() != b.ncols() {
        return Err(Error::UnsupportedSystem(format!(
            "input matrix is {}x{}, not square",
            b.nrows(),
            b.ncols()
        )));
    }
    let sv = b.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if !(lo > hi * 1e-12) {
        return Err(Error::UnsupportedSystem("input matrix is not invertible".into()));
    }
    b.try_inverse()
        .ok_or_else(|| Error::UnsupportedSystem("input matrix is not invertible".into()))
}

pub fn d_gravity_controller(
    system: &MechanicalSystem,
    k: &DMatrix<f64>,
    q: &DVector<f64>,
    e: &TrackingError,
) -> Result<DVector<f64>> {
    let b_inv = input_inverse(system)?;
    check_dim("tracking error", system.dof(), e.len())?;
    Ok(b_inv * (system.gravity(q) - k * e))
}

#[allow(clippy::too_many_arguments)]
pub fn computed_torque_controller(
    system: &MechanicalSystem,
    k: &DMatrix<f64>,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qd_s: &DVector<f64>,
    qdd_s: &DVector<f64>,
    e: &TrackingError,
) -> Result<DVector<f64>> {
    let b_inv = input_inverse(system)?;
    check_dim("tracking error", system.dof(), e.len())?;
    let ff = system.inertia(q) * qdd_s + system.coriolis_total(q, qd) * qd_s + system.gravity(q);
    Ok(b_inv * (ff - k * e))
}

fn segway_balance(g: &SegwayGains, pdot: f64, pdot_s: f64, phi: f64, phidot: f64) -> f64 {
    g.k_pdot * (pdot - pdot_s) + g.k_phi * phi + g.k_phidot * phidot
}

/// Planar Segway law before clamping.
pub fn segway_planar_law(g: &SegwayGains, pdot: f64, pdot_s: f64, phi: f64, phidot: f64) -> f64 {
    segway_balance(g, pdot, pdot_s, phi, phidot)
}

pub fn segway_planar_controller(g: &SegwayGains, pdot: f64, pdot_s: f64, phi: f64, phidot: f64) -> f64 {
    segway_planar_law(g, pdot, pdot_s, phi, phidot).clamp(-SEGWAY_VOLTAGE_LIMIT, SEGWAY_VOLTAGE_LIMIT)
}

/// Spatial Segway law before clamping; `(u_1, u_2)` for the right and left wheel.
pub fn segway_spatial_law(
    g: &SegwayGains,
    pdot: f64,
    v_s: f64,
    phi: f64,
    phidot: f64,
    psidot: f64,
    omega_s: f64,
) -> (f64, f64) {
    let common = segway_balance(g, pdot, v_s, phi, phidot);
    let turn = g.k_psidot * (psidot - omega_s);
    (common + turn, common - turn)
}

pub fn segway_spatial_controller(
    g: &SegwayGains,
    pdot: f64,
    v_s: f64,
    phi: f64,
    phidot: f64,
    psidot: f64,
    omega_s: f64,
) -> (f64, f64) {
    let (a, b) = segway_spatial_law(g, pdot, v_s, phi, phidot, psidot, omega_s);
    let lim = SEGWAY_VOLTAGE_LIMIT;
    (a.clamp(-lim, lim), b.clamp(-lim, lim))
}

pub fn lyapunov_value(system: &MechanicalSystem, q: &DVector<f64>, e: &TrackingError) -> f64 {
    let quad = e.dot(&(system.inertia(q) * e));
    (0.5 * quad.max(0.0)).sqrt()
}

/// `dV/dt = (-e^T (K + C_damp) e + e^T d) / (2V)` for the closed loop
/// `D e_dot = -(K + C) e + d`. Zero when `V = 0`.
pub fn lyapunov_derivative(
    system: &MechanicalSystem,
    k: &DMatrix<f64>,
    q: &DVector<f64>,
    e: &TrackingError,
    d: &DVector<f64>,
) -> f64 {
    let v = lyapunov_value(system, q, e);
    if v == 0.0 {
        return 0.0;
    }
    let dissipation = e.dot(&((k + system.damping()) * e));
    (-dissipation + e.dot(d)) / (2.0 * v)
}

/// Controller bound to a particular system.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingController {
    gains: ControllerGains,
    /// `K_D` for the D controller, `K` for the model-based ones.
    gain: Option<DMatrix<f64>>,
}

impl TrackingController {
    pub fn new(gains: &ControllerGains, system: &MechanicalSystem) -> Result<Self> {
        let (n, m) = (system.dof(), system.inputs());
        let gain = match gains {
            ControllerGains::D { kd } => {
                let kd = kd.to_matrix(m, n)?;
                let closed = system.input_matrix() * &kd;
                check_positive_definite(&closed, "B K_D")?;
                Some(kd)
            }
            ControllerGains::DGravity { k } | ControllerGains::ComputedTorque { k } => {
                input_inverse(system)?;
                let k = k.to_matrix(n, n)?;
                check_positive_definite(&k, "K")?;
                Some(k)
            }
            ControllerGains::SegwayPlanar(gains) => {
                if !matches!(system, MechanicalSystem::PlanarSegway { .. }) {
                    return Err(Error::UnsupportedSystem("segway_planar needs the planar segway".into()));
                }
                check_segway_gains(gains)?;
                None
            }
            ControllerGains::SegwaySpatial(gains) => {
                if !matches!(system, MechanicalSystem::SpatialSegway { .. }) {
                    return Err(Error::UnsupportedSystem("segway_spatial needs the spatial segway".into()));
                }
                check_segway_gains(gains)?;
                None
            }
        };
        Ok(Self {
            gains: gains.clone(),
            gain,
        })
    }

    pub fn gains(&self) -> &ControllerGains {
        &self.gains
    }

    /// Closed-loop gain `K` of `D e_dot = -(K + C) e + d`: `B K_D` for the D
    /// controller, `K` for the model-based ones, `None` for the Segway laws.
    pub fn closed_loop_gain(&self, system: &MechanicalSystem) -> Option<DMatrix<f64>> {
        match (&self.gains, &self.gain) {
            (ControllerGains::D { .. }, Some(kd)) => Some(system.input_matrix() * kd),
            (_, Some(k)) => Some(k.clone()),
            _ => None,
        }
    }

    pub fn needs_feedforward(&self) -> bool {
        matches!(self.gains, ControllerGains::ComputedTorque { .. })
    }

    /// Control input before clamping. `qdd_s` is only read by computed torque.
    pub fn law(
        &self,
        system: &MechanicalSystem,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        qd_s: &DVector<f64>,
        qdd_s: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        check_dim("safe velocity", system.dof(), qd_s.len())?;
        let e = qd - qd_s;
        match (&self.gains, &self.gain) {
            (ControllerGains::D { .. }, Some(kd)) => d_controller(kd, &e),
            (ControllerGains::DGravity { .. }, Some(k)) => d_gravity_controller(system, k, q, &e),
            (ControllerGains::ComputedTorque { .. }, Some(k)) => {
                computed_torque_controller(system, k, q, qd, qd_s, qdd_s, &e)
            }
            (ControllerGains::SegwayPlanar(gains), _) => Ok(DVector::from_element(
                1,
                segway_planar_law(gains, qd[0], qd_s[0], q[1], qd[1]),
            )),
            (ControllerGains::SegwaySpatial(gains), _) => {
                let (a, b) = segway_spatial_law(gains, qd[0], qd_s[0], q[1], qd[1], qd[2], qd_s[2]);
                Ok(DVector::from_column_slice(&[a, b]))
            }
            _ => unreachable!("matrix gains are resolved in TrackingController::new"),
        }
    }
}

fn check_segway_gains(g: &SegwayGains) -> Result<()> {
    if [g.k_pdot, g.k_phi, g.k_phidot, g.k_psidot].iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidGains("segway gains must be finite".into()))
    }
}

/// Smallest eigenvalue of the symmetric part.
pub fn symmetric_min_eigenvalue(k: &DMatrix<f64>) -> f64 {
    symmetric_eigen_extremes(&((k + k.transpose()) * 0.5)).0
}

fn check_positive_definite(k: &DMatrix<f64>, what: &str) -> Result<()> {
    if k.nrows() != k.ncols() {
        return Err(Error::InvalidGains(format!("{what} is not square")));
    }
    let lo = symmetric_min_eigenvalue(k);
    if lo > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidGains(format!(
            "{what} is not positive definite (min symmetric eigenvalue {lo})"
        )))
    }
}
