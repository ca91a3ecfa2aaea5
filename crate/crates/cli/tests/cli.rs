use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gridline::io::TopologyFile;
use gridline::scenario::{district, perturb};
use serde_json::Value;
use tempfile::TempDir;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/district")
}

fn bundled(name: &str) -> PathBuf {
    scenarios().join(name)
}

fn gridline(args: &[&str], scenario: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridline"))
        .args(args)
        .arg("--scenario")
        .arg(scenario)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Writes a scenario into `dir` that points at the bundled topology.
fn custom(dir: &Path, body: &str) -> PathBuf {
    let topo = bundled("topology.json");
    let text = format!(r#"{{ "topology": {:?}, {body} }}"#, topo.display().to_string());
    let path = dir.join("scenario.json");
    fs::write(&path, text).unwrap();
    path
}

const CAMPAIGN_9: &str = r#"
    "truth": { "perturbation": 0.25, "seed": 42 },
    "schedule": { "kind": "grid", "min_w": -4000.0, "max_w": 4000.0, "step_w": 4000.0 },
    "sweeps": { "rho_grid": [1.0, 2.0], "sample_counts": [3, 9] },
    "seed": 7
"#;

#[test]
fn bundled_topology_matches_the_district() {
    let d = district();
    let (topo, params) = TopologyFile::read(&bundled("topology.json")).unwrap().to_model().unwrap();
    assert_eq!(topo.slack(), d.topology.slack());
    assert_eq!(topo.edge_list(), d.topology.edge_list());
    for (a, b) in params.to_flat().iter().zip(d.datasheet_ohm.to_flat()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn simulate_writes_one_row_per_node_and_snapshot() {
    let tmp = TempDir::new().unwrap();
    let out = gridline(&["simulate"], &bundled("simulation.json"), tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("snapshots.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,node,p_w,q_var,vmag_v,theta_rad"));
    assert_eq!(lines.count(), 2 * 4);

    let campaign = gridline(&["simulate"], &bundled("campaign.json"), tmp.path());
    assert_eq!(code(&campaign), 0);
    let csv = fs::read_to_string(tmp.path().join("snapshots.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 81 * 4);
}

#[test]
fn simulation_is_seeded() {
    let tmp = TempDir::new().unwrap();
    let run = |seed: &str, dir: &str| {
        let dir = tmp.path().join(dir);
        let out = gridline(&["simulate", "--seed", seed], &bundled("campaign.json"), &dir);
        assert_eq!(code(&out), 0);
        fs::read(dir.join("snapshots.csv")).unwrap()
    };
    assert_eq!(run("5", "a"), run("5", "b"));
    assert_ne!(run("5", "a"), run("6", "c"));
}

#[test]
fn estimate_recovers_the_synthetic_truth() {
    let tmp = TempDir::new().unwrap();
    let out = gridline(&["estimate"], &bundled("simulation.json"), tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&tmp.path().join("report_nr-rms.json"));
    assert_eq!(report["status"], "converged");
    let d = district();
    let truth = perturb(&d.datasheet_ohm, 0.25, 42);
    for (l, line) in report["lines"].as_array().unwrap().iter().enumerate() {
        assert_eq!(line["id"], l + 1);
        let r = line["r_ohm"].as_f64().unwrap();
        let x = line["x_ohm"].as_f64().unwrap();
        assert!((r / truth.r[l] - 1.0).abs() < 1e-6, "line {l}: {r}");
        assert!((x / truth.x[l] - 1.0).abs() < 1e-6, "line {l}: {x}");
    }
    assert_eq!(report["input_fingerprint"].as_str().unwrap().len(), 64);
}

#[test]
fn reports_are_byte_identical_apart_from_wall_time() {
    let tmp = TempDir::new().unwrap();
    let strip = |dir: &str| {
        let dir = tmp.path().join(dir);
        let out = gridline(&["estimate", "--method", "bounded-ls"], &bundled("campaign.json"), &dir);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let text = fs::read_to_string(dir.join("report_bounded-ls.json")).unwrap();
        text.lines().filter(|l| !l.contains("\"wall_time_s\"")).collect::<Vec<_>>().join("\n")
    };
    assert_eq!(strip("a"), strip("b"));
}

#[test]
fn measurements_can_be_ingested_from_csv() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&gridline(&["simulate"], &bundled("simulation.json"), tmp.path())), 0);
    let csv = tmp.path().join("snapshots.csv");
    let scenario = custom(
        tmp.path(),
        &format!(r#""measurements": {:?}, "method": "nr-rms""#, csv.display().to_string()),
    );
    let out_dir = tmp.path().join("ingested");
    let out = gridline(&["estimate"], &scenario, &out_dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let a = read_json(&out_dir.join("report_nr-rms.json"));
    assert_eq!(a["status"], "converged");

    let synthetic = gridline(&["estimate"], &bundled("simulation.json"), tmp.path());
    assert_eq!(code(&synthetic), 0);
    let b = read_json(&tmp.path().join("report_nr-rms.json"));
    for (la, lb) in a["lines"].as_array().unwrap().iter().zip(b["lines"].as_array().unwrap()) {
        let (ra, rb) = (la["r_ohm"].as_f64().unwrap(), lb["r_ohm"].as_f64().unwrap());
        assert!((ra / rb - 1.0).abs() < 1e-9, "{ra} vs {rb}");
    }
}

#[test]
fn exit_2_on_configuration_errors() {
    let tmp = TempDir::new().unwrap();
    let missing = gridline(&["simulate"], &tmp.path().join("nope.json"), tmp.path());
    assert_eq!(code(&missing), 2);
    assert_eq!(stderr_json(&missing)["error"], "config");

    let both = custom(
        tmp.path(),
        r#""schedule": { "kind": "two-instance", "p_w": 1.0, "q_var": 1.0 }, "measurements": "x.csv""#,
    );
    assert_eq!(code(&gridline(&["simulate"], &both, tmp.path())), 2);

    let neither = custom(tmp.path(), r#""method": "nr-rms""#);
    assert_eq!(code(&gridline(&["estimate"], &neither, tmp.path())), 2);

    let bad_alpha = gridline(&["estimate", "--alpha", "1.5"], &bundled("simulation.json"), tmp.path());
    assert_eq!(code(&bad_alpha), 2);

    let usage = gridline(&["estimate", "--method", "newton"], &bundled("simulation.json"), tmp.path());
    assert_eq!(code(&usage), 2);
    assert_eq!(stderr_json(&usage)["error"], "config");
}

#[test]
fn exit_2_explains_the_phasor_requirement() {
    let tmp = TempDir::new().unwrap();
    let out = gridline(&["estimate", "--method", "nr-square"], &bundled("simulation.json"), tmp.path());
    assert_eq!(code(&out), 2);
    let err = stderr_json(&out);
    assert!(err["message"].as_str().unwrap().contains("phasor"), "{err}");
    assert!(!tmp.path().join("report_nr-square.json").exists());
}

#[test]
fn nr_square_runs_on_phasor_data() {
    let tmp = TempDir::new().unwrap();
    let out = gridline(&["estimate"], &bundled("pmu.json"), tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&tmp.path().join("report_nr-square.json"))["status"], "converged");
}

#[test]
fn exit_3_on_load_flow_failure() {
    let tmp = TempDir::new().unwrap();
    let scenario = custom(tmp.path(), r#""schedule": { "kind": "two-instance", "p_w": 5e6, "q_var": 5e6 }"#);
    let out = gridline(&["simulate"], &scenario, tmp.path());
    assert_eq!(code(&out), 3);
    assert_eq!(stderr_json(&out)["error"], "load-flow");
}

#[test]
fn exit_4_still_writes_the_report() {
    let tmp = TempDir::new().unwrap();
    let out = gridline(
        &["estimate", "--method", "nr-ls", "--max-iterations", "2"],
        &bundled("campaign.json"),
        tmp.path(),
    );
    assert_eq!(code(&out), 4);
    assert_eq!(stderr_json(&out)["details"]["iterations"], 2);
    let report = read_json(&tmp.path().join("report_nr-ls.json"));
    assert_eq!(report["status"], "max-iterations");
    assert_eq!(report["iterations"], 2);
}

#[test]
fn exit_5_carries_the_rcond() {
    let tmp = TempDir::new().unwrap();
    let out = gridline(&["estimate"], &bundled("idle.json"), tmp.path());
    assert_eq!(code(&out), 5);
    let err = stderr_json(&out);
    assert_eq!(err["error"], "singular-jacobian");
    assert!(err["details"]["rcond"].as_f64().unwrap() < 1e-13, "{err}");
}

#[test]
fn exit_5_for_rank_deficient_least_squares() {
    let tmp = TempDir::new().unwrap();
    let out = gridline(&["estimate", "--method", "nr-ls"], &bundled("idle.json"), tmp.path());
    assert_eq!(code(&out), 5);
    assert!(stderr_json(&out)["details"]["rcond"].is_number());
}

#[test]
fn check_jacobian_passes_on_bundled_scenarios() {
    let tmp = TempDir::new().unwrap();
    for name in ["simulation.json", "pmu.json", "campaign.json"] {
        let out = gridline(&["check-jacobian"], &bundled(name), tmp.path());
        assert_eq!(code(&out), 0, "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let check = read_json(&tmp.path().join("jacobian_check.json"));
        assert_eq!(check["passed"], true);
        assert!(check["max_rel_error"].as_f64().unwrap() < 1e-6);
    }
}

#[test]
fn exit_6_locates_a_corrupted_entry() {
    let tmp = TempDir::new().unwrap();
    let out = gridline(&["check-jacobian", "--corrupt-entry", "2,1"], &bundled("simulation.json"), tmp.path());
    assert_eq!(code(&out), 6);
    let err = stderr_json(&out);
    assert_eq!(err["error"], "check-failed");
    assert_eq!(err["details"]["worst_row"], 2);
    assert_eq!(err["details"]["worst_col"], 1);
    assert_eq!(err["details"]["worst_label"], "R2");
}

#[test]
fn zero_injections_are_reported_as_degenerate() {
    let tmp = TempDir::new().unwrap();
    let out = gridline(&["check-jacobian"], &bundled("idle.json"), tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let check = read_json(&tmp.path().join("jacobian_check.json"));
    assert_eq!(check["degenerate"], true);
    assert!(check["rcond"].as_f64().unwrap() < 1e-10);
}

#[test]
fn rcond_sweep_collapses_at_zero_and_one() {
    let tmp = TempDir::new().unwrap();
    let out = gridline(&["sweep", "--sweep", "rcond"], &bundled("simulation.json"), tmp.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("fig2_rcond.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("r,rcond"));
    let rows: Vec<(f64, f64)> = lines
        .map(|l| {
            let (r, c) = l.split_once(',').unwrap();
            (r.parse().unwrap(), c.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 121);
    for (r, c) in rows {
        if r == 0.0 || r == 1.0 {
            assert!(c < 1e-10, "r {r}: {c}");
        }
    }
    assert_eq!(read_json(&tmp.path().join("fig2_rcond.json"))["sweep"], "rcond");
}

#[test]
fn rho_and_sample_sweeps_write_their_tables() {
    let tmp = TempDir::new().unwrap();
    let scenario = custom(tmp.path(), CAMPAIGN_9);
    let rho = gridline(&["sweep", "--sweep", "rho"], &scenario, tmp.path());
    assert_eq!(code(&rho), 0, "{}", String::from_utf8_lossy(&rho.stderr));
    let csv = fs::read_to_string(tmp.path().join("fig4_rho_sweep.csv")).unwrap();
    assert!(csv.starts_with("rho,nr_ls_max_r_error_pct"));
    assert_eq!(csv.lines().count(), 3);
    let report = read_json(&tmp.path().join("fig4_rho_sweep.json"));
    assert!(report["records"].as_array().unwrap().iter().all(|r| r["recovered"] == true));

    let samples = gridline(&["sweep", "--sweep", "samples"], &scenario, tmp.path());
    assert_eq!(code(&samples), 0, "{}", String::from_utf8_lossy(&samples.stderr));
    let csv = fs::read_to_string(tmp.path().join("fig3_error_reduction.csv")).unwrap();
    assert!(csv.starts_with("samples,nr_ls_mean_pct"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn sweeps_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    let scenario = custom(tmp.path(), CAMPAIGN_9);
    let run = |dir: &str| {
        let dir = tmp.path().join(dir);
        assert_eq!(code(&gridline(&["sweep", "--sweep", "samples"], &scenario, &dir)), 0);
        fs::read(dir.join("fig3_error_reduction.json")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn sample_sweep_rejects_counts_beyond_the_data() {
    let tmp = TempDir::new().unwrap();
    let scenario = custom(tmp.path(), &CAMPAIGN_9.replace("[3, 9]", "[3, 10]"));
    let out = gridline(&["sweep", "--sweep", "samples"], &scenario, tmp.path());
    assert_eq!(code(&out), 2);
}

#[test]
fn help_exits_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_gridline")).arg("--help").output().unwrap();
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("check-jacobian"));
}
