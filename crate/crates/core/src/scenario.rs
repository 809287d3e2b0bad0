//! Scenario documents: TOML description of a closed-loop run.

use serde::{Deserialize, Serialize};

use crate::barrier::{closest_obstacle_cbf, BarrierFunction, BarrierKind, Obstacle, PlanarRegion, WallSide};
use crate::dynamics::{MechanicalSystem, Workspace};
use crate::error::{check_dim, Error, Result};
use crate::filter::{DesiredVelocityLaw, FilterWeights, SafeVelocityFilter};
use crate::reduced::ReducedOrderModel;
use crate::tracking::{ControllerGains, TrackingController};

pub const SCHEMA: &str = "veloshield.scenario/v1";

/// Default integration step (s).
pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BarrierSpec {
    /// `h = min_i (|p - c_i| - r_i)`.
    Distance { obstacles: Vec<Obstacle> },
    /// Heading-aware barrier for the unicycle; `region` bounds the gradient sweep.
    Heading {
        obstacles: Vec<Obstacle>,
        delta: f64,
        region: PlanarRegion,
    },
    /// `h = limit - q[coordinate]` (upper) or `q[coordinate] - limit` (lower).
    Wall {
        coordinate: usize,
        limit: f64,
        side: WallSide,
    },
}

impl BarrierSpec {
    pub fn build(&self) -> Result<BarrierFunction> {
        match self {
            BarrierSpec::Distance { obstacles } => closest_obstacle_cbf(obstacles, BarrierKind::Distance),
            BarrierSpec::Heading {
                obstacles,
                delta,
                region,
            } => closest_obstacle_cbf(
                obstacles,
                BarrierKind::Heading {
                    delta: *delta,
                    region: *region,
                },
            ),
            BarrierSpec::Wall { coordinate, limit, side } => {
                if !limit.is_finite() {
                    return Err(Error::InvalidScenario("wall limit must be finite".into()));
                }
                Ok(BarrierFunction::Wall {
                    coordinate: *coordinate,
                    limit: *limit,
                    side: *side,
                })
            }
        }
    }
}

fn default_weights() -> Option<FilterWeights> {
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSpec {
    /// Class-K slope `alpha` (1/s).
    pub alpha: f64,
    /// Diagonal of the weight `Gamma`; identity when omitted.
    #[serde(default = "default_weights", skip_serializing_if = "Option::is_none")]
    pub weights: Option<FilterWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    /// Generalized coordinates `q`.
    pub q: Vec<f64>,
    /// Generalized velocities `q_dot`.
    pub qdot: Vec<f64>,
    /// Planar position `(x, y)` for systems with an integrated pose.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<[f64; 2]>,
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    /// Duration (s).
    pub duration: f64,
    /// Fixed RK4 step (s).
    #[serde(default = "default_step")]
    pub step: f64,
}

/// Additive input disturbance `d_i(t) = a_i sin(w_i t + phi_i)` per input channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub amplitude: Vec<f64>,
    /// Angular frequency (rad/s).
    pub frequency: Vec<f64>,
    /// Phase (rad); zero when omitted.
    #[serde(default)]
    pub phase: Vec<f64>,
}

impl DisturbanceSpec {
    pub fn validate(&self, channels: usize) -> Result<()> {
        check_dim("disturbance amplitude", channels, self.amplitude.len())?;
        check_dim("disturbance frequency", channels, self.frequency.len())?;
        if !self.phase.is_empty() {
            check_dim("disturbance phase", channels, self.phase.len())?;
        }
        let finite = self
            .amplitude
            .iter()
            .chain(&self.frequency)
            .chain(&self.phase)
            .all(|x| x.is_finite());
        if !finite || self.amplitude.iter().any(|a| *a < 0.0) {
            return Err(Error::InvalidScenario(
                "disturbance amplitudes must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        (0..self.amplitude.len())
            .map(|i| {
                let phase = self.phase.get(i).copied().unwrap_or(0.0);
                self.amplitude[i] * (self.frequency[i] * t + phase).sin()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub system: MechanicalSystem,
    pub barrier: BarrierSpec,
    pub reduced_model: ReducedOrderModel,
    pub desired: DesiredVelocityLaw,
    pub filter: FilterSpec,
    pub controller: ControllerGains,
    pub initial: InitialState,
    pub sim: SimSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceSpec>,
    /// Configuration box for the inertia sweeps behind `k_1`, `k_2` and `lambda`.
    pub workspace: Workspace,
}

/// Resolved objects a simulation needs.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub filter: SafeVelocityFilter,
    pub controller: TrackingController,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Dimension of the configuration seen by the barrier and reduced model.
    pub fn reduced_dim(&self) -> usize {
        if self.system.pose_coordinates().is_some() {
            3
        } else {
            self.system.dof()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.assemble().map(|_| ())
    }

    /// Validate every section and build the filter and controller.
    pub fn assemble(&self) -> Result<Assembled> {
        if self.schema != SCHEMA {
            return Err(Error::InvalidScenario(format!(
                "unsupported schema {:?}, expected {SCHEMA:?}",
                self.schema
            )));
        }
        self.system.validate()?;
        let n = self.system.dof();
        let model = self.reduced_model;
        model.validate()?;
        check_dim("reduced model configuration", self.reduced_dim(), model.config_dim())?;
        if self.system.pose_coordinates().is_some() && model != ReducedOrderModel::Unicycle {
            return Err(Error::InvalidScenario(
                "systems with an integrated pose use the unicycle reduced model".into(),
            ));
        }
        if self.system.pose_coordinates().is_none() && model == ReducedOrderModel::Unicycle {
            return Err(Error::InvalidScenario(
                "the unicycle reduced model needs a system with an integrated pose".into(),
            ));
        }
        let cbf = self.barrier.build()?;
        if cbf.min_dim() > model.config_dim() {
            return Err(Error::InvalidScenario(format!(
                "barrier reads coordinate {} of a {}-dimensional configuration",
                cbf.min_dim() - 1,
                model.config_dim()
            )));
        }
        self.desired.validate()?;
        let desired_dim = match &self.desired {
            DesiredVelocityLaw::Proportional { goal, .. } => Some(goal.len()),
            DesiredVelocityLaw::Constant { velocity } => Some(velocity.len()),
            DesiredVelocityLaw::UnicycleGoal { .. } => None,
        };
        match (&self.desired, desired_dim) {
            (DesiredVelocityLaw::UnicycleGoal { .. }, _) if model != ReducedOrderModel::Unicycle => {
                return Err(Error::InvalidScenario("unicycle_goal needs the unicycle reduced model".into()))
            }
            (DesiredVelocityLaw::Proportional { .. }, Some(k)) => check_dim("proportional goal", model.config_dim(), k)?,
            (DesiredVelocityLaw::Constant { .. }, Some(k)) => check_dim("constant velocity", model.input_dim(), k)?,
            _ => {}
        }
        if matches!(self.desired, DesiredVelocityLaw::Proportional { .. })
            && !matches!(model, ReducedOrderModel::SingleIntegrator { .. })
        {
            return Err(Error::InvalidScenario(
                "the proportional law needs the single-integrator reduced model".into(),
            ));
        }
        let weights = match &self.filter.weights {
            Some(w) => w.clone(),
            None => FilterWeights::identity(model.input_dim()),
        };
        let filter = SafeVelocityFilter::new(model, cbf, self.filter.alpha, weights)?;
        let controller = TrackingController::new(&self.controller, &self.system)?;
        check_dim("initial q", n, self.initial.q.len())?;
        check_dim("initial qdot", n, self.initial.qdot.len())?;
        if self.initial.q.iter().chain(&self.initial.qdot).any(|x| !x.is_finite()) {
            return Err(Error::InvalidScenario("initial state must be finite".into()));
        }
        match (self.system.pose_coordinates(), self.initial.pose) {
            (Some(_), None) => return Err(Error::InvalidScenario("initial.pose is required for this system".into())),
            (None, Some(_)) => return Err(Error::InvalidScenario("initial.pose is not used by this system".into())),
            (Some(_), Some(p)) if p.iter().any(|x| !x.is_finite()) => {
                return Err(Error::InvalidScenario("initial pose must be finite".into()))
            }
            _ => {}
        }
        if !(self.sim.step > 0.0 && self.sim.step.is_finite()) {
            return Err(Error::InvalidScenario("sim.step must be positive".into()));
        }
        if !(self.sim.duration >= self.sim.step && self.sim.duration.is_finite()) {
            return Err(Error::InvalidScenario("sim.duration must be at least one step".into()));
        }
        if let Some(d) = &self.disturbance {
            d.validate(self.system.inputs())?;
        }
        self.workspace.validate()?;
        check_dim("workspace", n, self.workspace.dim())?;
        Ok(Assembled { filter, controller })
    }

    /// Set a dotted parameter path such as `filter.alpha` (alias `alpha`)
    /// to `value`, and revalidate.
    pub fn with_parameter(&self, path: &str, value: f64) -> Result<Self> {
        let path = match path {
            "alpha" => "filter.alpha",
            "step" => "sim.step",
            "duration" => "sim.duration",
            other => other,
        };
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Parse(e.to_string()))?;
        let mut cursor = &mut doc;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let last = i + 1 == parts.len();
            let next = match cursor {
                toml::Value::Table(t) => t.get_mut(*part),
                toml::Value::Array(a) => part.parse::<usize>().ok().and_then(|k| a.get_mut(k)),
                _ => None,
            };
            let Some(next) = next else {
                return Err(Error::InvalidScenario(format!("scenario has no parameter {path:?}")));
            };
            if last {
                match next {
                    toml::Value::Float(_) | toml::Value::Integer(_) => *next = toml::Value::Float(value),
                    _ => return Err(Error::InvalidScenario(format!("parameter {path:?} is not a number"))),
                }
            }
            cursor = next;
        }
        let s: Scenario = doc.try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }
}

/// Scenarios shipped with the library, as `(name, toml)` pairs.
pub const BUNDLED: [(&str, &str); 5] = [
    (
        "double_integrator_alpha_0.1",
        include_str!("../scenarios/double_integrator_alpha_0.1.toml"),
    ),
    ("planar_segway_wall", include_str!("../scenarios/planar_segway_wall.toml")),
    ("spatial_segway_course", include_str!("../scenarios/spatial_segway_course.toml")),
    ("drone_single_integrator", include_str!("../scenarios/drone_single_integrator.toml")),
    ("quadruped_unicycle", include_str!("../scenarios/quadruped_unicycle.toml")),
];

pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Scenario::from_toml(text).expect("bundled scenarios are valid"))
}
