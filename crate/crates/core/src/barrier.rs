//! Configuration-space control barrier functions.
//!
//! A barrier function `h` defines the safe set `{q : h(q) >= 0}`. Every
//! barrier here depends on the configuration only, reports its gradient
//! analytically and carries a bound `C_h` on the gradient norm over the
//! safe set.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Configuration coordinates `q` (units per scenario: m, rad).
pub type Configuration = DVector<f64>;

/// Distances below this are treated as coincident with an obstacle center.
const SINGULAR_DISTANCE: f64 = 1e-12;

/// Grid spacing used when sampling gradient norms (m and rad).
pub const GRADIENT_SAMPLE_SPACING: f64 = 0.01;

/// Multiplier applied to sampled gradient-norm maxima.
pub const GRADIENT_SAFETY_FACTOR: f64 = 1.1;

/// Circular obstacle in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    /// Center (m).
    pub center: [f64; 2],
    /// Radius (m), already buffered by the robot size when relevant.
    pub radius: f64,
}

impl Obstacle {
    pub fn new(center: [f64; 2], radius: f64) -> Result<Self> {
        let obstacle = Self { center, radius };
        obstacle.validate()?;
        Ok(obstacle)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidScenario(format!(
                "obstacle radius must be positive, got {}",
                self.radius
            )));
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidScenario("obstacle center must be finite".into()));
        }
        Ok(())
    }

    /// Vector from the obstacle center to the planar point, and its length.
    fn offset(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        (dx, dy, dx.hypot(dy))
    }
}

/// Axis-aligned planar rectangle used to bound gradient-norm sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarRegion {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl PlanarRegion {
    fn farthest_distance(&self, point: [f64; 2]) -> f64 {
        let mut best = 0.0_f64;
        for &x in &self.x {
            for &y in &self.y {
                best = best.max((x - point[0]).hypot(y - point[1]));
            }
        }
        best
    }
}

/// Which side of a coordinate limit is safe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WallSide {
    /// `h = limit - q[i]`.
    Upper,
    /// `h = q[i] - limit`.
    Lower,
}

/// Per-obstacle barrier family used by [`closest_obstacle_cbf`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BarrierKind {
    Distance,
    Heading { delta: f64, region: PlanarRegion },
}

/// A barrier function value with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierValue {
    pub h: f64,
    pub gradient: DVector<f64>,
    /// Index of the minimizing member for composite barriers.
    pub active: Option<usize>,
}

/// Configuration-space barrier function.
///
/// Values are immutable and evaluation is pure, so a barrier can be shared
/// freely between threads.
#[derive(Debug, Clone, PartialEq)]
pub enum BarrierFunction {
    /// `h(q) = ||q_xy - q_o|| - r` on the first two coordinates.
    Distance(Obstacle),
    /// `h(q) = d - r - delta cos(psi - theta)` on `(x, y, psi)`.
    Heading {
        obstacle: Obstacle,
        delta: f64,
        gradient_bound: f64,
    },
    /// Half-space on a single coordinate.
    Wall {
        coordinate: usize,
        limit: f64,
        side: WallSide,
    },
    /// Pointwise minimum over members; the gradient is the active member's.
    Closest(Vec<BarrierFunction>),
}

/// Barrier keeping the first two coordinates outside a disc.
pub fn distance_cbf(obstacle: Obstacle) -> BarrierFunction {
    BarrierFunction::Distance(obstacle)
}

/// Barrier for unicycle-like configurations `(x, y, psi)` that penalizes
/// heading toward the obstacle.
///
/// `C_h` is estimated by sampling the gradient norm over every robot
/// position of `region` that lies outside the obstacle and every heading,
/// then inflated by [`GRADIENT_SAFETY_FACTOR`].
pub fn heading_cbf(obstacle: Obstacle, delta: f64, region: &PlanarRegion) -> Result<BarrierFunction> {
    obstacle.validate()?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidScenario(format!(
            "heading barrier delta must be positive, got {delta}"
        )));
    }
    let gradient_bound = sample_heading_gradient_bound(&obstacle, delta, region) * GRADIENT_SAFETY_FACTOR;
    Ok(BarrierFunction::Heading {
        obstacle,
        delta,
        gradient_bound,
    })
}

/// Composite barrier that follows the closest obstacle.
pub fn closest_obstacle_cbf(obstacles: &[Obstacle], base: BarrierKind) -> Result<BarrierFunction> {
    if obstacles.is_empty() {
        return Err(Error::InvalidScenario(
            "closest-obstacle barrier needs at least one obstacle".into(),
        ));
    }
    let members = obstacles
        .iter()
        .map(|&obstacle| match base {
            BarrierKind::Distance => obstacle.validate().map(|_| distance_cbf(obstacle)),
            BarrierKind::Heading { delta, region } => heading_cbf(obstacle, delta, &region),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BarrierFunction::Closest(members))
}

/// Maximum gradient norm of the heading barrier over `region`.
///
/// The norm depends only on the distance to the obstacle and on the
/// relative heading `psi - theta`, so the region is covered by sweeping the
/// distance from `r` out to the farthest corner and the relative heading
/// over a full turn.
fn sample_heading_gradient_bound(obstacle: &Obstacle, delta: f64, region: &PlanarRegion) -> f64 {
    let r = obstacle.radius;
    let d_max = region.farthest_distance(obstacle.center).max(r);
    let distance_steps = ((d_max - r) / GRADIENT_SAMPLE_SPACING).ceil() as usize;
    let angle_steps = (std::f64::consts::TAU / GRADIENT_SAMPLE_SPACING).ceil() as usize;
    let mut best = 0.0_f64;
    for i in 0..=distance_steps {
        let d = (r + i as f64 * GRADIENT_SAMPLE_SPACING).min(d_max);
        // Robot on the -x side of the obstacle, so theta = 0.
        let x = obstacle.center[0] - d;
        let y = obstacle.center[1];
        for j in 0..angle_steps {
            let psi = j as f64 * GRADIENT_SAMPLE_SPACING;
            if let Ok(g) = heading_gradient(obstacle, delta, x, y, psi) {
                best = best.max((g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt());
            }
        }
    }
    best
}

fn heading_value(obstacle: &Obstacle, delta: f64, x: f64, y: f64, psi: f64) -> f64 {
    let (dx, dy, d) = obstacle.offset(x, y);
    // Angle from the robot toward the obstacle.
    let theta = (-dy).atan2(-dx);
    d - obstacle.radius - delta * (psi - theta).cos()
}

fn heading_gradient(obstacle: &Obstacle, delta: f64, x: f64, y: f64, psi: f64) -> Result<[f64; 3]> {
    let (dx, dy, d) = obstacle.offset(x, y);
    if d < SINGULAR_DISTANCE {
        return Err(Error::SingularGradient {
            center: obstacle.center,
        });
    }
    let theta = (-dy).atan2(-dx);
    let s = (psi - theta).sin();
    // d/dx d = dx/d; d/dx theta = -dy/d^2; d/dy theta = dx/d^2.
    let d2 = d * d;
    let gx = dx / d - delta * s * (-dy / d2);
    let gy = dy / d - delta * s * (dx / d2);
    let gpsi = delta * s;
    Ok([gx, gy, gpsi])
}

fn require_dim(q: &Configuration, min: usize) -> Result<()> {
    if q.len() < min {
        return Err(Error::DimensionMismatch {
            what: "barrier configuration",
            expected: min,
            found: q.len(),
        });
    }
    Ok(())
}

impl BarrierFunction {
    /// Smallest configuration dimension the barrier can be evaluated on.
    pub fn min_dim(&self) -> usize {
        match self {
            BarrierFunction::Distance(_) => 2,
            BarrierFunction::Heading { .. } => 3,
            BarrierFunction::Wall { coordinate, .. } => coordinate + 1,
            BarrierFunction::Closest(members) => members.iter().map(Self::min_dim).max().unwrap_or(1),
        }
    }

    pub fn value(&self, q: &Configuration) -> Result<f64> {
        require_dim(q, self.min_dim())?;
        Ok(match self {
            BarrierFunction::Distance(o) => o.offset(q[0], q[1]).2 - o.radius,
            BarrierFunction::Heading { obstacle, delta, .. } => heading_value(obstacle, *delta, q[0], q[1], q[2]),
            BarrierFunction::Wall {
                coordinate,
                limit,
                side,
            } => match side {
                WallSide::Upper => limit - q[*coordinate],
                WallSide::Lower => q[*coordinate] - limit,
            },
            BarrierFunction::Closest(_) => self.closest_index(q)?.1,
        })
    }

    pub fn gradient(&self, q: &Configuration) -> Result<DVector<f64>> {
        Ok(self.evaluate(q)?.gradient)
    }

    pub fn evaluate(&self, q: &Configuration) -> Result<BarrierValue> {
        require_dim(q, self.min_dim())?;
        let mut gradient = DVector::zeros(q.len());
        let (h, active) = match self {
            BarrierFunction::Distance(o) => {
                let (dx, dy, d) = o.offset(q[0], q[1]);
                if d < SINGULAR_DISTANCE {
                    return Err(Error::SingularGradient { center: o.center });
                }
                gradient[0] = dx / d;
                gradient[1] = dy / d;
                (d - o.radius, None)
            }
            BarrierFunction::Heading { obstacle, delta, .. } => {
                let g = heading_gradient(obstacle, *delta, q[0], q[1], q[2])?;
                gradient.rows_mut(0, 3).copy_from_slice(&g);
                (heading_value(obstacle, *delta, q[0], q[1], q[2]), None)
            }
            BarrierFunction::Wall {
                coordinate,
                limit,
                side,
            } => match side {
                WallSide::Upper => {
                    gradient[*coordinate] = -1.0;
                    (limit - q[*coordinate], None)
                }
                WallSide::Lower => {
                    gradient[*coordinate] = 1.0;
                    (q[*coordinate] - limit, None)
                }
            },
            BarrierFunction::Closest(members) => {
                let (index, _) = self.closest_index(q)?;
                let inner = members[index].evaluate(q)?;
                return Ok(BarrierValue {
                    h: inner.h,
                    gradient: inner.gradient,
                    active: Some(index),
                });
            }
        };
        Ok(BarrierValue { h, gradient, active })
    }

    /// Index and value of the minimizing member; ties go to the lowest index.
    fn closest_index(&self, q: &Configuration) -> Result<(usize, f64)> {
        let BarrierFunction::Closest(members) = self else {
            return Ok((0, self.value(q)?));
        };
        let mut best: Option<(usize, f64)> = None;
        for (i, member) in members.iter().enumerate() {
            let h = member.value(q)?;
            if best.is_none_or(|(_, b)| h < b) {
                best = Some((i, h));
            }
        }
        best.ok_or_else(|| Error::InvalidScenario("closest-obstacle barrier has no members".into()))
    }

    /// Upper bound `C_h` on `||grad h||` over the safe set.
    pub fn gradient_bound(&self) -> f64 {
        match self {
            BarrierFunction::Distance(_) | BarrierFunction::Wall { .. } => 1.0,
            BarrierFunction::Heading { gradient_bound, .. } => *gradient_bound,
            BarrierFunction::Closest(members) => members.iter().map(Self::gradient_bound).fold(0.0, f64::max),
        }
    }

    /// Obstacles the barrier refers to, in member order.
    pub fn obstacles(&self) -> Vec<Obstacle> {
        match self {
            BarrierFunction::Distance(o) => vec![*o],
            BarrierFunction::Heading { obstacle, .. } => vec![*obstacle],
            BarrierFunction::Wall { .. } => Vec::new(),
            BarrierFunction::Closest(members) => members.iter().flat_map(Self::obstacles).collect(),
        }
    }
}
