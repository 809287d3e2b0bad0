use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn veloshield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_veloshield"))
        .args(args)
        .env_remove("VELOSHIELD_SCENARIO_DIR")
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn entries(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn run_writes_trajectory_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = veloshield(&["run", "double_integrator_alpha_0.1", "--out", path(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "t,q0,q1,qdot0,qdot1,qs0,qs1,u0,u1,h,V,hV,active_obstacle"
    );
    assert_eq!(csv.lines().count(), 40_002);
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    let min_h = summary
        .lines()
        .find_map(|l| l.trim().strip_prefix("\"min_h\": "))
        .unwrap()
        .trim_end_matches(',')
        .parse::<f64>()
        .unwrap();
    assert!(min_h >= 0.0);
    assert_eq!(entries(tmp.path()), ["run"]);
}

#[test]
fn malformed_file_leaves_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "schema = \"veloshield.scenario/v1\"\nname = [\n").unwrap();
    let out = tmp.path().join("out");
    let o = veloshield(&["run", path(&bad), "--out", path(&out)]);
    assert!(!o.status.success());
    assert!(!o.stderr.is_empty());
    assert!(!out.exists());
    assert_eq!(entries(tmp.path()), ["bad.toml"]);
}

#[test]
fn unknown_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let text = veloshield_core::BUNDLED[0].1.replacen("[sim]", "[sim]\nsteps = 3", 1);
    let file = tmp.path().join("extra.toml");
    fs::write(&file, text).unwrap();
    let o = veloshield(&["validate", path(&file)]);
    assert!(!o.status.success());
}

#[test]
fn divergence_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s = veloshield_core::bundled("double_integrator_alpha_0.1").unwrap();
    s.initial.qdot = vec![1e308, 1e308];
    let file = tmp.path().join("diverge.toml");
    fs::write(&file, s.to_toml().unwrap()).unwrap();
    let out = tmp.path().join("out");
    let o = veloshield(&["run", path(&file), "--out", path(&out)]);
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = veloshield(&["run", "quadruped_unicycle", "--duration", "5", "--out", path(out)]);
        assert!(o.status.success());
    }
    for f in ["trajectory.csv", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn rerun_replaces_previous_output_only() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let args = ["run", "planar_segway_wall", "--duration", "1", "--out", path(&out)];
    assert!(veloshield(&args).status.success());
    assert!(veloshield(&args).status.success());
    let foreign = tmp.path().join("foreign");
    fs::create_dir(&foreign).unwrap();
    fs::write(foreign.join("notes.txt"), "keep").unwrap();
    let o = veloshield(&["run", "planar_segway_wall", "--duration", "1", "--out", path(&foreign)]);
    assert!(!o.status.success());
    assert_eq!(fs::read_to_string(foreign.join("notes.txt")).unwrap(), "keep");
}

#[test]
fn alpha_sweep_splits_safe_and_unsafe() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = veloshield(&[
        "sweep",
        "double_integrator_alpha_0.1",
        "--param",
        "alpha",
        "--values",
        "0.1,0.2,0.5,1.0",
        "--workers",
        "2",
        "--out",
        path(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "value,min_h,safe,theorem_applicable,in_S_V");
    let safe: Vec<&str> = lines.map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(safe, ["true", "true", "false", "false"]);
    assert_eq!(
        entries(&out),
        ["alpha=0.1", "alpha=0.2", "alpha=0.5", "alpha=1", "sweep.csv"]
    );
}

#[test]
fn empty_value_list_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = veloshield(&[
        "sweep",
        "double_integrator_alpha_0.1",
        "--param",
        "alpha",
        "--values",
        "",
        "--out",
        path(&out),
    ]);
    assert!(!o.status.success());
    let o = veloshield(&["sweep", "double_integrator_alpha_0.1", "--param", "alpha", "--out", path(&out)]);
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn missing_parameter_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sweep");
    let o = veloshield(&[
        "sweep",
        "double_integrator_alpha_0.1",
        "--param",
        "filter.beta",
        "--values",
        "1",
        "--out",
        path(&out),
    ]);
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn single_value_sweep_equals_run() {
    let tmp = tempfile::tempdir().unwrap();
    let (run, sweep) = (tmp.path().join("run"), tmp.path().join("sweep"));
    let o = veloshield(&["run", "drone_single_integrator", "--duration", "5", "--out", path(&run)]);
    assert!(o.status.success());
    let o = veloshield(&[
        "sweep",
        "drone_single_integrator",
        "--param",
        "alpha",
        "--values",
        "0.2",
        "--duration",
        "5",
        "--out",
        path(&sweep),
    ]);
    assert!(o.status.success());
    for f in ["trajectory.csv", "summary.json"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(sweep.join("alpha=0.2").join(f)).unwrap());
    }
}

#[test]
fn scenario_dir_overrides_bundled() {
    let tmp = tempfile::tempdir().unwrap();
    let mut s = veloshield_core::bundled("planar_segway_wall").unwrap();
    s.description = "local copy".into();
    fs::write(tmp.path().join("planar_segway_wall.toml"), s.to_toml().unwrap()).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_veloshield"))
        .args(["validate", "planar_segway_wall"])
        .env("VELOSHIELD_SCENARIO_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    let o = veloshield(&["validate", "no_such_scenario"]);
    assert!(!o.status.success());
}

#[test]
fn lists_bundled_scenarios() {
    let o = veloshield(&["list-scenarios"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), veloshield_core::BUNDLED.len());
    assert!(text.contains("planar_segway_wall"));
}
