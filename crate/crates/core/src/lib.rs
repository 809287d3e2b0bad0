//! Safe velocity synthesis on reduced-order models and its tracking on
//! full-order robot dynamics.
//!
//! A control barrier function `h` on the configuration defines the safe set
//! `h >= 0`. A closed-form quadratic-program filter turns a desired velocity
//! into a safe velocity with `grad h . q_dot_s >= -alpha h`, a tracking
//! controller follows it on the manipulator-form dynamics, and the
//! certificates module checks when tracking fast enough keeps the full
//! system safe.

// `!(x > 0.0)` checks also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod barrier;
pub mod certificates;
pub mod dynamics;
pub mod error;
pub mod filter;
pub mod reduced;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod tracking;

pub use barrier::{
    closest_obstacle_cbf, distance_cbf, heading_cbf, BarrierFunction, BarrierKind, BarrierValue, Configuration,
    Obstacle, PlanarRegion, WallSide,
};
pub use certificates::{
    certificate, clf_cbf_condition_check, fit_exponential_envelope, lambda_from_gains, membership,
    membership_from_values, ComparisonBound, ConditionKind, EnvelopeFit, SetMembershipReport, TrackingCertificate,
    ViolationReport,
};
pub use dynamics::{
    inertia_bounds, planar_segway, spatial_segway, ArmParams, InertiaBounds, MechanicalSystem, SegwayParams,
    Workspace,
};
pub use error::{Error, Result};
pub use filter::{
    desired_velocity, filter_single_integrator, filter_weighted, DesiredVelocityLaw, FilterOutput, FilterWeights,
    SafeVelocityFilter,
};
pub use reduced::{reduced_safe_condition, single_integrator, unicycle, ReducedInput, ReducedOrderModel};
pub use report::{run_summary, summary_json, sweep_csv, trajectory_csv, RunSummary, SweepRow};
pub use scenario::{bundled, Scenario, BUNDLED};
pub use sim::{safety_metrics, simulate, SafetyMetrics, TrajectoryLog, TrajectoryRecord};
pub use tracking::{
    computed_torque_controller, d_controller, d_gravity_controller, lyapunov_value, segway_planar_controller,
    segway_spatial_controller, ControllerGains, GainMatrix, SegwayGains, TrackingController,
};
