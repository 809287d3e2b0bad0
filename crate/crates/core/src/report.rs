//! Output documents: trajectory CSV, run summary and sweep table.

use std::fmt::Write as _;

use serde::Serialize;

use crate::certificates::{SetMembershipReport, TrackingCertificate};
use crate::scenario::Scenario;
use crate::sim::{safety_metrics, LambdaSource, SafetyMetrics, TrajectoryLog};

pub const SUMMARY_SCHEMA: &str = "veloshield.summary/v1";

/// Header `t,q0..,[pose_x,pose_y],qdot0..,qs0..,u0..,h,V,hV,active_obstacle`.
pub fn trajectory_header(dof: usize, inputs: usize, pose: bool) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..dof).map(|i| format!("q{i}")));
    if pose {
        cols.push("pose_x".into());
        cols.push("pose_y".into());
    }
    cols.extend((0..dof).map(|i| format!("qdot{i}")));
    cols.extend((0..dof).map(|i| format!("qs{i}")));
    cols.extend((0..inputs).map(|i| format!("u{i}")));
    cols.extend(["h", "V", "hV", "active_obstacle"].map(String::from));
    cols.join(",")
}

pub fn trajectory_csv(log: &TrajectoryLog) -> String {
    let Some(first) = log.records.first() else {
        return String::new();
    };
    let mut out = trajectory_header(first.q.len(), first.u.len(), first.pose.is_some());
    out.push('\n');
    for r in &log.records {
        let _ = write!(out, "{}", r.t);
        let pose = r.pose.iter().flatten();
        for x in r.q.iter().chain(pose).chain(&r.qdot).chain(&r.qdot_s).chain(&r.u) {
            let _ = write!(out, ",{x}");
        }
        let _ = write!(out, ",{},{},{},", r.h, r.v, r.h_v);
        if let Some(i) = r.active_obstacle {
            let _ = write!(out, "{i}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InertiaSummary {
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema: &'static str,
    pub scenario: String,
    pub step: f64,
    pub duration: f64,
    pub metrics: SafetyMetrics,
    pub certificate: TrackingCertificate,
    pub lambda_source: LambdaSource,
    pub inertia: InertiaSummary,
    pub initial_membership: SetMembershipReport,
}

pub fn run_summary(scenario: &Scenario, log: &TrajectoryLog) -> RunSummary {
    let goal = scenario.desired.goal();
    RunSummary {
        schema: SUMMARY_SCHEMA,
        scenario: scenario.name.clone(),
        step: scenario.sim.step,
        duration: scenario.sim.duration,
        metrics: safety_metrics(log, goal.as_deref()),
        certificate: log.certificate,
        lambda_source: log.lambda_source,
        inertia: InertiaSummary {
            min_eigenvalue: log.inertia.min_eigenvalue,
            max_eigenvalue: log.inertia.max_eigenvalue,
            k1: log.inertia.k1(),
            k2: log.inertia.k2(),
        },
        initial_membership: log.initial,
    }
}

pub fn summary_json(summary: &RunSummary) -> String {
    let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub min_h: f64,
    pub safe: bool,
    pub theorem_applicable: bool,
    pub in_s_v: bool,
}

impl SweepRow {
    pub fn from_summary(value: f64, s: &RunSummary) -> Self {
        Self {
            value,
            min_h: s.metrics.min_h,
            safe: s.metrics.safe,
            theorem_applicable: s.certificate.theorem_applicable,
            in_s_v: s.initial_membership.in_s_v,
        }
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,min_h,safe,theorem_applicable,in_S_V\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.value, r.min_h, r.safe, r.theorem_applicable, r.in_s_v);
    }
    out
}
