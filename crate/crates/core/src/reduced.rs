//! Reduced-order kinematic models `q_dot = A(q) mu`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierFunction, Configuration};
use crate::error::{check_dim, Error, Result};

/// Reduced input `mu`; for the unicycle `(v, omega)` in m/s and rad/s.
pub type ReducedInput = DVector<f64>;

/// Kinematic surrogate used to express safe velocities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReducedOrderModel {
    /// `A(q) = I_n`.
    SingleIntegrator { dim: usize },
    /// `q = (x, y, psi)`, `mu = (v, omega)`.
    Unicycle,
    /// Single integrator acting on one coordinate: `A(q) = e_index`.
    Axis { dim: usize, index: usize },
}

pub fn single_integrator(dim: usize) -> Result<ReducedOrderModel> {
    if dim == 0 {
        return Err(Error::InvalidScenario("single integrator needs dim >= 1".into()));
    }
    Ok(ReducedOrderModel::SingleIntegrator { dim })
}

pub fn unicycle() -> ReducedOrderModel {
    ReducedOrderModel::Unicycle
}

impl ReducedOrderModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ReducedOrderModel::SingleIntegrator { dim: 0 } => {
                Err(Error::InvalidScenario("single integrator needs dim >= 1".into()))
            }
            ReducedOrderModel::Axis { dim, index } if index >= dim => Err(Error::InvalidScenario(format!(
                "axis model index {index} out of range for dim {dim}"
            ))),
            _ => Ok(()),
        }
    }

    /// Configuration dimension `n`.
    pub fn config_dim(&self) -> usize {
        match *self {
            ReducedOrderModel::SingleIntegrator { dim } | ReducedOrderModel::Axis { dim, .. } => dim,
            ReducedOrderModel::Unicycle => 3,
        }
    }

    /// Reduced input dimension `k`.
    pub fn input_dim(&self) -> usize {
        match *self {
            ReducedOrderModel::SingleIntegrator { dim } => dim,
            ReducedOrderModel::Unicycle => 2,
            ReducedOrderModel::Axis { .. } => 1,
        }
    }

    /// The `n x k` map `A(q)`.
    pub fn matrix(&self, q: &Configuration) -> Result<DMatrix<f64>> {
        check_dim("reduced-order configuration", self.config_dim(), q.len())?;
        Ok(match *self {
            ReducedOrderModel::SingleIntegrator { dim } => DMatrix::identity(dim, dim),
            ReducedOrderModel::Unicycle => {
                let (s, c) = q[2].sin_cos();
                DMatrix::from_row_slice(3, 2, &[c, 0.0, s, 0.0, 0.0, 1.0])
            }
            ReducedOrderModel::Axis { dim, index } => {
                let mut a = DMatrix::zeros(dim, 1);
                a[(index, 0)] = 1.0;
                a
            }
        })
    }

    /// Configuration velocity `A(q) mu`.
    pub fn velocity(&self, q: &Configuration, mu: &ReducedInput) -> Result<DVector<f64>> {
        check_dim("reduced input", self.input_dim(), mu.len())?;
        Ok(self.matrix(q)? * mu)
    }
}

/// Margin of the reduced-order safety condition `grad h A mu >= -alpha h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyMargin {
    /// `grad h(q) A(q) mu + alpha h(q)`.
    pub margin: f64,
    pub satisfied: bool,
}

pub fn reduced_safe_condition(
    model: &ReducedOrderModel,
    cbf: &BarrierFunction,
    q: &Configuration,
    mu: &ReducedInput,
    alpha: f64,
) -> Result<SafetyMargin> {
    let value = cbf.evaluate(q)?;
    let margin = value.gradient.dot(&model.velocity(q, mu)?) + alpha * value.h;
    Ok(SafetyMargin {
        margin,
        satisfied: margin >= 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{distance_cbf, Obstacle};
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn single_integrator_is_identity() {
        let m = single_integrator(2).unwrap();
        assert_eq!(m.velocity(&v(&[3.0, -1.0]), &v(&[1.0, 2.0])).unwrap(), v(&[1.0, 2.0]));
        let m3 = single_integrator(3).unwrap();
        assert_eq!(m3.velocity(&v(&[0.0; 3]), &v(&[0.0; 3])).unwrap(), v(&[0.0; 3]));
        assert!(single_integrator(0).is_err());
    }

    #[test]
    fn unicycle_headings() {
        let m = unicycle();
        let q0 = v(&[0.0, 0.0, 0.0]);
        assert_eq!(m.velocity(&q0, &v(&[1.0, 0.0])).unwrap(), v(&[1.0, 0.0, 0.0]));
        let q1 = v(&[0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let out = m.velocity(&q1, &v(&[1.0, 0.0])).unwrap();
        assert!((out - v(&[0.0, 1.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn unicycle_matches_direct_multiply() {
        let out = unicycle().velocity(&v(&[1.0, 2.0, 0.3]), &v(&[0.5, 0.2])).unwrap();
        let expected = v(&[0.5 * 0.3_f64.cos(), 0.5 * 0.3_f64.sin(), 0.2]);
        assert!((out - expected).norm() < 1e-15);
    }

    #[test]
    fn unicycle_columns_orthonormal() {
        for psi in [-2.0, 0.0, 0.7, 3.0] {
            let a = unicycle().matrix(&v(&[0.0, 0.0, psi])).unwrap();
            assert!((a.column(0).norm() - 1.0).abs() < 1e-15);
            assert_eq!(a.column(1).norm(), 1.0);
            assert_eq!(a.column(0).dot(&a.column(1)), 0.0);
        }
    }

    #[test]
    fn axis_model_selects_coordinate() {
        let m = ReducedOrderModel::Axis { dim: 2, index: 0 };
        assert_eq!(m.velocity(&v(&[0.0, 0.1]), &v(&[0.7])).unwrap(), v(&[0.7, 0.0]));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = unicycle();
        assert!(m.velocity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).is_err());
        assert!(m.velocity(&v(&[0.0, 0.0, 0.0]), &v(&[1.0])).is_err());
    }

    #[test]
    fn outward_motion_on_boundary_is_safe() {
        let cbf = distance_cbf(Obstacle::new([0.0, 0.0], 1.0).unwrap());
        let m = single_integrator(2).unwrap();
        let r = reduced_safe_condition(&m, &cbf, &v(&[1.0, 0.0]), &v(&[0.5, 0.0]), 0.3).unwrap();
        assert!(r.margin > 0.0 && r.satisfied);
    }

    #[test]
    fn zero_input_margin_is_alpha_h() {
        let cbf = distance_cbf(Obstacle::new([0.0, 0.0], 1.0).unwrap());
        let m = single_integrator(2).unwrap();
        let r = reduced_safe_condition(&m, &cbf, &v(&[3.0, 0.0]), &v(&[0.0, 0.0]), 0.4).unwrap();
        assert!((r.margin - 0.8).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn margin_equals_direct_dot_product(
            x in -5.0..5.0f64, y in -5.0..5.0f64, psi in -3.0..3.0f64,
            v0 in -2.0..2.0f64, w0 in -2.0..2.0f64, alpha in 0.01..2.0f64,
        ) {
            prop_assume!((x - 1.0).hypot(y) > 1e-3);
            let o = Obstacle::new([1.0, 0.0], 0.5).unwrap();
            let cbf = distance_cbf(o);
            let q = v(&[x, y, psi]);
            let r = reduced_safe_condition(&unicycle(), &cbf, &q, &v(&[v0, w0]), alpha).unwrap();
            let d = (x - 1.0).hypot(y);
            let direct = ((x - 1.0) / d * psi.cos() + y / d * psi.sin()) * v0 + alpha * (d - 0.5);
            prop_assert!((r.margin - direct).abs() < 1e-12);
        }

        #[test]
        fn lie_term_is_linear_in_input(
            x in -5.0..5.0f64, y in -5.0..5.0f64, psi in -3.0..3.0f64,
            a in prop::array::uniform2(-2.0..2.0f64), b in prop::array::uniform2(-2.0..2.0f64),
        ) {
            prop_assume!((x - 1.0).hypot(y) > 1e-3);
            let cbf = distance_cbf(Obstacle::new([1.0, 0.0], 0.5).unwrap());
            let q = v(&[x, y, psi]);
            let alpha = 0.5;
            let m = |mu: DVector<f64>| reduced_safe_condition(&unicycle(), &cbf, &q, &mu, alpha).unwrap().margin;
            let h = cbf.value(&q).unwrap();
            let lhs = m(v(&a) + v(&b)) - alpha * h;
            let rhs = (m(v(&a)) - alpha * h) + (m(v(&b)) - alpha * h);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
