use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hetcon_cli::{cmd_run, cmd_synthesize, load_scenario, RunMode};
use hetcon_core::{scenarios, Scenario};

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(format!("{name}.json"))
}

fn hetcon(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetcon"))
        .args(args)
        .env("HETCON_OUT_DIR", out)
        .output()
        .expect("spawn hetcon")
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn shipped_examples_match_builders() {
    for name in scenarios::NAMES {
        let parsed = load_scenario(&example(name)).unwrap();
        assert_eq!(parsed, scenarios::by_name(name).unwrap(), "{name}");
    }
}

#[test]
fn scenario_file_round_trips() {
    for name in scenarios::NAMES {
        let text = std::fs::read_to_string(example(name)).unwrap();
        let a = Scenario::from_json(&text).unwrap();
        let b = Scenario::from_json(&a.to_json()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn malformed_json_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"mode\": ").unwrap();
    let out = hetcon(&["synthesize", bad.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("parsing"), "{err}");
}

#[test]
fn missing_file_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = hetcon(&["verify", "/nonexistent/scenario.json"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn infeasible_feedforward_names_the_agent() {
    let dir = tempfile::tempdir().unwrap();
    let out = hetcon(
        &[
            "synthesize",
            example("infeasible_feedforward").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("feedforward infeasible for agent 1"), "{err}");
}

#[test]
fn verify_unstabilizable_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = hetcon(
        &["verify", example("unstabilizable").to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("synthesis") && text.contains("FAIL") && text.contains("stabilizable"),
        "{text}"
    );
}

#[test]
fn verify_homogeneous_passes() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("verify.json");
    let out = hetcon(
        &[
            "verify",
            example("homogeneous").to_str().unwrap(),
            "--json",
            json.to_str().unwrap(),
        ],
        dir.path(),
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("penrose conditions"));
    assert!(!text.contains("FAIL"));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
}

#[test]
fn synthesize_writes_gains_to_env_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = hetcon(
        &["synthesize", example("homogeneous").to_str().unwrap()],
        dir.path(),
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert!(text.contains("rho(A_c)"));
    let gains: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("homogeneous.synthesis.json")).unwrap(),
    )
    .unwrap();
    for key in ["p", "k", "k_i", "l"] {
        assert!(!gains["gains"][key].is_null(), "{key}");
    }
}

#[test]
fn synthesis_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_synthesize(&example("mixed_output"), a.path()).unwrap();
    cmd_synthesize(&example("mixed_output"), b.path()).unwrap();
    let read = |d: &Path| std::fs::read(d.join("mixed_output.synthesis.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn horizon_zero_gives_single_row_and_zero_cost() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmd_run(
        &example("homogeneous"),
        RunMode::Distributed,
        Some(0),
        dir.path(),
    )
    .unwrap();
    let r = &o.reports[0];
    assert_eq!(r.horizon, 0);
    assert_eq!(r.costs.as_ref().unwrap().entry(0).unwrap().j_sim, 0.0);
    let (_, rows) = csv_rows(&r.files[0]);
    assert_eq!(rows.len(), 1);
}

#[test]
fn run_all_emits_traces_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmd_run(&example("paper_sec4"), RunMode::All, None, dir.path()).unwrap();
    assert_eq!(o.reports.len(), 3);
    for tag in ["distributed", "centralized", "baseline"] {
        let csv = dir.path().join(format!("paper_sec4.{tag}.csv"));
        let manifest: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(format!("paper_sec4.{tag}.columns.json")))
                .unwrap(),
        )
        .unwrap();
        let (header, rows) = csv_rows(&csv);
        let names: Vec<String> = manifest["columns"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["name"].as_str().unwrap().to_string())
            .collect();
        assert_eq!(header, names);
        assert_eq!(rows.len(), 61);
        assert!(dir
            .path()
            .join(format!("paper_sec4.{tag}.report.json"))
            .exists());
    }
    assert!(dir.path().join("paper_sec4.comparison.json").exists());
    assert!(o.comparison.is_some());
}

#[test]
fn report_costs_recomputable_from_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = cmd_run(
        &example("homogeneous"),
        RunMode::Centralized,
        None,
        dir.path(),
    )
    .unwrap();
    let r = &o.reports[0];
    let (header, rows) = csv_rows(&r.files[0]);
    let col = header.iter().position(|h| h == "stage_cost").unwrap();
    let h = rows.len() - 1;
    let j: f64 = rows[..h].iter().map(|row| row[col]).sum();
    let c = r.costs.as_ref().unwrap().entry(0).unwrap();
    assert!((j - c.j_sim).abs() <= 1e-12 * c.j_sim.max(1.0));
    // centralized optimality
    assert!((c.j_sim - c.j_star).abs() <= 1e-6 + r.costs.as_ref().unwrap().truncation_bound);
}
