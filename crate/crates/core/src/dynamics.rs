//! Full-order robot models in manipulator form
//! `D(q) q_ddot + C(q, q_dot) q_dot + G(q) = B u`.
//!
//! `C` is stored as a Coriolis part `C_cor`, for which `D_dot - 2 C_cor` is
//! skew-symmetric, plus a constant viscous part `C_damp`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Largest accepted condition number of `D(q)`.
pub const MAX_INERTIA_CONDITION: f64 = 1e12;

/// Planar Segway parameters (Ninebot E+ values by default).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegwayParams {
    /// Gravitational acceleration (m/s^2).
    pub g: f64,
    /// Wheel radius `R` (m).
    pub wheel_radius: f64,
    /// Mass of both wheels `M` (kg).
    pub wheel_mass: f64,
    /// Inertia of both wheels `J_C` (kg m^2).
    pub wheel_inertia: f64,
    /// Wheel center to frame center of mass `L` (m).
    pub com_distance: f64,
    /// Frame mass `m` (kg).
    pub frame_mass: f64,
    /// Frame inertia `J_G` (kg m^2).
    pub frame_inertia: f64,
    /// Lumped mass `m_0` (kg).
    pub lumped_mass: f64,
    /// Lumped inertia `J_0` (kg m^2).
    pub lumped_inertia: f64,
    /// Torque constant of both motors `K_m` (N m / V).
    pub motor_constant: f64,
    /// Damping constant of both motors `b_t` (N s).
    pub motor_damping: f64,
    /// Symmetric input limit (V).
    pub voltage_limit: f64,
}

impl Default for SegwayParams {
    fn default() -> Self {
        Self {
            g: 9.81,
            wheel_radius: 0.195,
            wheel_mass: 2.0 * 2.485,
            wheel_inertia: 2.0 * 0.0559,
            com_distance: 0.169,
            frame_mass: 44.798,
            frame_inertia: 3.836,
            lumped_mass: 52.710,
            lumped_inertia: 5.108,
            motor_constant: 2.0 * 1.262,
            motor_damping: 2.0 * 1.225,
            voltage_limit: 20.0,
        }
    }
}

impl SegwayParams {
    /// `m L`.
    pub fn coupling(&self) -> f64 {
        self.frame_mass * self.com_distance
    }

    /// Differences between the tabulated lumped constants and their
    /// component formulas `m + M + J_C/R^2` and `m L^2 + J_G`.
    pub fn lumped_residuals(&self) -> (f64, f64) {
        let r = self.wheel_radius;
        let m0 = self.frame_mass + self.wheel_mass + self.wheel_inertia / (r * r);
        let j0 = self.frame_mass * self.com_distance.powi(2) + self.frame_inertia;
        (self.lumped_mass - m0, self.lumped_inertia - j0)
    }

    fn validate(&self) -> Result<()> {
        let all = [
            self.g,
            self.wheel_radius,
            self.wheel_mass,
            self.wheel_inertia,
            self.com_distance,
            self.frame_mass,
            self.frame_inertia,
            self.lumped_mass,
            self.lumped_inertia,
            self.motor_constant,
            self.voltage_limit,
        ];
        if all.iter().any(|x| !(*x > 0.0 && x.is_finite())) || !(self.motor_damping >= 0.0) {
            return Err(Error::InvalidScenario("segway parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Two-link planar arm with point-mass-plus-inertia links.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArmParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub lc1: f64,
    pub lc2: f64,
    pub i1: f64,
    pub i2: f64,
    pub g: f64,
    /// Viscous joint damping (N m s / rad).
    pub damping: f64,
}

impl Default for ArmParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            lc1: 0.5,
            lc2: 0.5,
            i1: 1.0 / 12.0,
            i2: 1.0 / 12.0,
            g: 9.81,
            damping: 0.0,
        }
    }
}

impl ArmParams {
    /// Constant terms of `D(q)`: `(a, b, c)` with
    /// `D = [[a + 2 b cos q2, c + b cos q2], [c + b cos q2, c]]`.
    fn inertia_terms(&self) -> (f64, f64, f64) {
        let a = self.i1 + self.i2 + self.m1 * self.lc1 * self.lc1 + self.m2 * (self.l1 * self.l1 + self.lc2 * self.lc2);
        let b = self.m2 * self.l1 * self.lc2;
        let c = self.i2 + self.m2 * self.lc2 * self.lc2;
        (a, b, c)
    }
}

fn default_track_width() -> f64 {
    0.5
}

fn default_yaw_inertia() -> f64 {
    2.0
}

/// Mechanical system in manipulator form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MechanicalSystem {
    /// `q_ddot = u` in `dim` dimensions.
    DoubleIntegrator { dim: usize },
    /// `q = (p, phi)`: wheel position (m) and pitch (rad); one input (V).
    PlanarSegway {
        #[serde(default)]
        params: SegwayParams,
    },
    /// `q = (p, phi, psi)`: path length, pitch and yaw; wheel voltages
    /// `(u_1, u_2)` with wheel 1 on the right. The planar pose `(x, y)` is
    /// integrated from `x_dot = p_dot cos psi`, `y_dot = p_dot sin psi`.
    SpatialSegway {
        #[serde(default)]
        params: SegwayParams,
        /// Track width `w` (m).
        #[serde(default = "default_track_width")]
        track_width: f64,
        /// Yaw inertia `J_psi` (kg m^2).
        #[serde(default = "default_yaw_inertia")]
        yaw_inertia: f64,
        /// Yaw damping `b_psi`; defaults to `b_t R w / 2`.
        #[serde(default)]
        yaw_damping: Option<f64>,
    },
    /// Fully actuated two-link arm, `q = (q1, q2)` joint angles.
    TwoLinkArm {
        #[serde(default)]
        params: ArmParams,
    },
    /// Dynamic unicycle, `q = (p, psi)` with force and yaw torque inputs.
    Unicycle { mass: f64, yaw_inertia: f64 },
}

pub fn double_integrator_system(dim: usize) -> Result<MechanicalSystem> {
    let s = MechanicalSystem::DoubleIntegrator { dim };
    s.validate()?;
    Ok(s)
}

pub fn planar_segway(params: SegwayParams) -> MechanicalSystem {
    MechanicalSystem::PlanarSegway { params }
}

pub fn spatial_segway(params: SegwayParams, track_width: f64, yaw_inertia: f64) -> Result<MechanicalSystem> {
    let s = MechanicalSystem::SpatialSegway {
        params,
        track_width,
        yaw_inertia,
        yaw_damping: None,
    };
    s.validate()?;
    Ok(s)
}

fn planar_segway_inertia(p: &SegwayParams, phi: f64) -> [f64; 4] {
    let off = p.coupling() * phi.cos();
    [p.lumped_mass, off, off, p.lumped_inertia]
}

impl MechanicalSystem {
    pub fn validate(&self) -> Result<()> {
        match self {
            MechanicalSystem::DoubleIntegrator { dim } if *dim == 0 => {
                Err(Error::InvalidScenario("double integrator needs dim >= 1".into()))
            }
            MechanicalSystem::PlanarSegway { params } => params.validate(),
            MechanicalSystem::SpatialSegway {
                params,
                track_width,
                yaw_inertia,
                yaw_damping,
            } => {
                params.validate()?;
                if !(*track_width > 0.0 && *yaw_inertia > 0.0) || yaw_damping.is_some_and(|b| !(b >= 0.0)) {
                    return Err(Error::InvalidScenario(
                        "spatial segway needs positive track width and yaw inertia".into(),
                    ));
                }
                Ok(())
            }
            MechanicalSystem::Unicycle { mass, yaw_inertia } if !(*mass > 0.0 && *yaw_inertia > 0.0) => Err(
                Error::InvalidScenario("unicycle mass and yaw inertia must be positive".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Configuration dimension `n`.
    pub fn dof(&self) -> usize {
        match self {
            MechanicalSystem::DoubleIntegrator { dim } => *dim,
            MechanicalSystem::PlanarSegway { .. } | MechanicalSystem::TwoLinkArm { .. } | MechanicalSystem::Unicycle { .. } => 2,
            MechanicalSystem::SpatialSegway { .. } => 3,
        }
    }

    /// Input dimension `m`.
    pub fn inputs(&self) -> usize {
        match self {
            MechanicalSystem::DoubleIntegrator { dim } => *dim,
            MechanicalSystem::PlanarSegway { .. } => 1,
            _ => 2,
        }
    }

    /// Indices of the path-length and yaw coordinates for systems whose
    /// planar pose is integrated kinematically.
    pub fn pose_coordinates(&self) -> Option<(usize, usize)> {
        match self {
            MechanicalSystem::SpatialSegway { .. } => Some((0, 2)),
            MechanicalSystem::Unicycle { .. } => Some((0, 1)),
            _ => None,
        }
    }

    fn yaw_damping(&self) -> f64 {
        match self {
            MechanicalSystem::SpatialSegway {
                params,
                track_width,
                yaw_damping,
                ..
            } => yaw_damping.unwrap_or(params.motor_damping * params.wheel_radius * track_width / 2.0),
            _ => 0.0,
        }
    }

    pub fn inertia(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match self {
            MechanicalSystem::DoubleIntegrator { dim } => DMatrix::identity(*dim, *dim),
            MechanicalSystem::PlanarSegway { params } => DMatrix::from_row_slice(2, 2, &planar_segway_inertia(params, q[1])),
            MechanicalSystem::SpatialSegway { params, yaw_inertia, .. } => {
                let d = planar_segway_inertia(params, q[1]);
                DMatrix::from_row_slice(3, 3, &[d[0], d[1], 0.0, d[2], d[3], 0.0, 0.0, 0.0, *yaw_inertia])
            }
            MechanicalSystem::TwoLinkArm { params } => {
                let (a, b, c) = params.inertia_terms();
                let c2 = q[1].cos();
                DMatrix::from_row_slice(2, 2, &[a + 2.0 * b * c2, c + b * c2, c + b * c2, c])
            }
            MechanicalSystem::Unicycle { mass, yaw_inertia } => {
                DMatrix::from_diagonal(&DVector::from_column_slice(&[*mass, *yaw_inertia]))
            }
        }
    }

    /// Time derivative of `D(q)` along `q_dot`.
    pub fn inertia_dot(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dof();
        let mut out = DMatrix::zeros(n, n);
        match self {
            MechanicalSystem::PlanarSegway { params } | MechanicalSystem::SpatialSegway { params, .. } => {
                let off = -params.coupling() * q[1].sin() * qd[1];
                out[(0, 1)] = off;
                out[(1, 0)] = off;
            }
            MechanicalSystem::TwoLinkArm { params } => {
                let (_, b, _) = params.inertia_terms();
                let s = -b * q[1].sin() * qd[1];
                out[(0, 0)] = 2.0 * s;
                out[(0, 1)] = s;
                out[(1, 0)] = s;
            }
            _ => {}
        }
        out
    }

    /// Coriolis and centrifugal part `C_cor(q, q_dot)`.
    pub fn coriolis(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dof();
        let mut out = DMatrix::zeros(n, n);
        match self {
            MechanicalSystem::PlanarSegway { params } | MechanicalSystem::SpatialSegway { params, .. } => {
                out[(0, 1)] = -params.coupling() * qd[1] * q[1].sin();
            }
            MechanicalSystem::TwoLinkArm { params } => {
                let (_, b, _) = params.inertia_terms();
                let s = b * q[1].sin();
                out[(0, 0)] = -s * qd[1];
                out[(0, 1)] = -s * (qd[0] + qd[1]);
                out[(1, 0)] = s * qd[0];
            }
            _ => {}
        }
        out
    }

    /// Viscous part `C_damp`.
    ///
    /// For the Segway this is the motor damping block exactly as tabulated,
    /// `[[b_t/R, -b_t], [-b_t, b_t R]]`. That block equals `R` times the
    /// damping of a torque `b_t (p_dot/R - phi_dot)` acting between wheel
    /// and frame, so its units differ from the rest of the model.
    pub fn damping(&self) -> DMatrix<f64> {
        let n = self.dof();
        let mut out = DMatrix::zeros(n, n);
        match self {
            MechanicalSystem::PlanarSegway { params } | MechanicalSystem::SpatialSegway { params, .. } => {
                let (bt, r) = (params.motor_damping, params.wheel_radius);
                out[(0, 0)] = bt / r;
                out[(0, 1)] = -bt;
                out[(1, 0)] = -bt;
                out[(1, 1)] = bt * r;
                if n == 3 {
                    out[(2, 2)] = self.yaw_damping();
                }
            }
            MechanicalSystem::TwoLinkArm { params } => {
                out.fill_diagonal(params.damping);
            }
            _ => {}
        }
        out
    }

    /// Full `C(q, q_dot) = C_cor + C_damp`.
    pub fn coriolis_total(&self, q: &DVector<f64>, qd: &DVector<f64>) -> DMatrix<f64> {
        self.coriolis(q, qd) + self.damping()
    }

    pub fn gravity(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dof());
        match self {
            MechanicalSystem::PlanarSegway { params } | MechanicalSystem::SpatialSegway { params, .. } => {
                out[1] = -params.frame_mass * params.g * params.com_distance * q[1].sin();
            }
            MechanicalSystem::TwoLinkArm { params } => {
                let p = params;
                let c12 = (q[0] + q[1]).cos();
                out[0] = (p.m1 * p.lc1 + p.m2 * p.l1) * p.g * q[0].cos() + p.m2 * p.lc2 * p.g * c12;
                out[1] = p.m2 * p.lc2 * p.g * c12;
            }
            _ => {}
        }
        out
    }

    /// Potential energy whose gradient is `G(q)`.
    pub fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        match self {
            MechanicalSystem::PlanarSegway { params } | MechanicalSystem::SpatialSegway { params, .. } => {
                params.frame_mass * params.g * params.com_distance * q[1].cos()
            }
            MechanicalSystem::TwoLinkArm { params: p } => {
                (p.m1 * p.lc1 + p.m2 * p.l1) * p.g * q[0].sin() + p.m2 * p.lc2 * p.g * (q[0] + q[1]).sin()
            }
            _ => 0.0,
        }
    }

    /// `1/2 q_dot^T D(q) q_dot + P(q)`.
    pub fn mechanical_energy(&self, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        0.5 * qd.dot(&(self.inertia(q) * qd)) + self.potential_energy(q)
    }

    pub fn input_matrix(&self) -> DMatrix<f64> {
        match self {
            MechanicalSystem::DoubleIntegrator { dim } => DMatrix::identity(*dim, *dim),
            MechanicalSystem::PlanarSegway { params } => {
                DMatrix::from_column_slice(2, 1, &[params.motor_constant / params.wheel_radius, -params.motor_constant])
            }
            MechanicalSystem::SpatialSegway { params, track_width, .. } => {
                let (km, r) = (params.motor_constant, params.wheel_radius);
                let yaw = km * track_width / (2.0 * r);
                DMatrix::from_row_slice(
                    3,
                    2,
                    &[km / (2.0 * r), km / (2.0 * r), -km / 2.0, -km / 2.0, -yaw, yaw],
                )
            }
            MechanicalSystem::TwoLinkArm { .. } | MechanicalSystem::Unicycle { .. } => DMatrix::identity(2, 2),
        }
    }

    /// Per-channel input interval, if the inputs are bounded.
    pub fn input_bounds(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            MechanicalSystem::PlanarSegway { params } | MechanicalSystem::SpatialSegway { params, .. } => {
                Some(vec![(-params.voltage_limit, params.voltage_limit); self.inputs()])
            }
            _ => None,
        }
    }

    pub fn clamp_input(&self, u: &DVector<f64>) -> DVector<f64> {
        match self.input_bounds() {
            Some(bounds) => DVector::from_iterator(u.len(), u.iter().zip(bounds).map(|(x, (lo, hi))| x.clamp(lo, hi))),
            None => u.clone(),
        }
    }

    /// `q_ddot` for input `u`, clamped to the input bounds first.
    pub fn accel(&self, q: &DVector<f64>, qd: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("input", self.inputs(), u.len())?;
        let force = self.input_matrix() * self.clamp_input(u);
        self.forward_dynamics(q, qd, &force)
    }

    /// `D(q)^{-1} (f - C q_dot - G)` for a generalized force `f`.
    pub fn forward_dynamics(&self, q: &DVector<f64>, qd: &DVector<f64>, force: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dof();
        check_dim("configuration", n, q.len())?;
        check_dim("velocity", n, qd.len())?;
        check_dim("generalized force", n, force.len())?;
        let d = self.inertia(q);
        let (lo, hi) = symmetric_eigen_extremes(&d);
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(condition <= MAX_INERTIA_CONDITION) {
            return Err(Error::NumericalSingularity { condition });
        }
        let rhs = force - self.coriolis_total(q, qd) * qd - self.gravity(q);
        d.cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or(Error::NumericalSingularity { condition })
    }
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn symmetric_eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    if m.nrows() == 2 {
        let (a, b, c) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
        let mean = 0.5 * (a + c);
        let radius = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        return (mean - radius, mean + radius);
    }
    let eig = SymmetricEigen::new(m.clone());
    eig.eigenvalues
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Bounded configuration box swept when estimating suprema and infima
/// over the configuration space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Grid spacing per coordinate.
    pub resolution: Vec<f64>,
    /// Applied as `sup * factor` and `inf / factor`.
    #[serde(default = "default_safety_factor")]
    pub safety_factor: f64,
}

fn default_safety_factor() -> f64 {
    1.0
}

impl Workspace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, resolution: Vec<f64>) -> Result<Self> {
        let w = Self {
            lower,
            upper,
            resolution,
            safety_factor: 1.0,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.lower.len();
        check_dim("workspace upper", n, self.upper.len())?;
        check_dim("workspace resolution", n, self.resolution.len())?;
        if n == 0 {
            return Err(Error::InvalidScenario("workspace needs at least one coordinate".into()));
        }
        for i in 0..n {
            if !(self.upper[i] >= self.lower[i]) || !(self.resolution[i] > 0.0) {
                return Err(Error::InvalidScenario(format!("workspace coordinate {i} is malformed")));
            }
        }
        if !(self.safety_factor >= 1.0) {
            return Err(Error::InvalidScenario("workspace safety factor must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn axis(&self, i: usize) -> Vec<f64> {
        let (lo, hi, step) = (self.lower[i], self.upper[i], self.resolution[i]);
        let count = ((hi - lo) / step).floor() as usize;
        let mut pts: Vec<f64> = (0..=count).map(|k| lo + k as f64 * step).collect();
        if pts.last().is_some_and(|&x| x < hi) {
            pts.push(hi);
        }
        pts
    }

    /// Visit every grid point.
    pub fn for_each_point(&self, mut f: impl FnMut(&DVector<f64>)) {
        let axes: Vec<Vec<f64>> = (0..self.dim()).map(|i| self.axis(i)).collect();
        let mut idx = vec![0usize; axes.len()];
        let mut point = DVector::from_iterator(axes.len(), axes.iter().map(|a| a[0]));
        loop {
            f(&point);
            let mut k = 0;
            loop {
                if k == axes.len() {
                    return;
                }
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    point[k] = axes[k][idx[k]];
                    break;
                }
                idx[k] = 0;
                point[k] = axes[k][0];
                k += 1;
            }
        }
    }
}

/// Extremal eigenvalues of `D(q)` over a workspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InertiaBounds {
    /// `inf_q sigma_min(D(q))`, divided by the safety factor.
    pub min_eigenvalue: f64,
    /// `sup_q sigma_max(D(q))`, multiplied by the safety factor.
    pub max_eigenvalue: f64,
}

impl InertiaBounds {
    /// `k_1 = sqrt(inf sigma_min / 2)`.
    pub fn k1(&self) -> f64 {
        (self.min_eigenvalue / 2.0).sqrt()
    }

    /// `k_2 = sqrt(sup sigma_max / 2)`.
    pub fn k2(&self) -> f64 {
        (self.max_eigenvalue / 2.0).sqrt()
    }
}

pub fn inertia_bounds(system: &MechanicalSystem, workspace: &Workspace) -> Result<InertiaBounds> {
    workspace.validate()?;
    check_dim("workspace", system.dof(), workspace.dim())?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    workspace.for_each_point(|q| {
        let (a, b) = symmetric_eigen_extremes(&system.inertia(q));
        lo = lo.min(a);
        hi = hi.max(b);
    });
    if !(lo > 0.0) {
        return Err(Error::NumericalSingularity { condition: f64::INFINITY });
    }
    Ok(InertiaBounds {
        min_eigenvalue: lo / workspace.safety_factor,
        max_eigenvalue: hi * workspace.safety_factor,
    })
}
