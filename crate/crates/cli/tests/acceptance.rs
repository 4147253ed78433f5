//! One test per acceptance criterion. Each prints a `PASS`/`FAIL` line on
//! stderr (bypassing output capture) before asserting.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use hetcon_cli::cmd_verify;
use hetcon_core::baseline::{compare, design_baseline, run_baseline};
use hetcon_core::matstack::norm;
use hetcon_core::sim::{compute_costs, convergence_metrics, run_centralized, run_distributed};
use hetcon_core::synthesis::synthesize;
use hetcon_core::verify::{feedforward_exactness, horizon_for_decay};
use hetcon_core::{LeaderEstimateInit, Scenario, SimOptions, SimulationTrace, SynthesisResult};

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(format!("{name}.json"))
}

fn load(name: &str) -> Scenario {
    hetcon_cli::load_scenario(&example(name)).unwrap()
}

fn verdict(n: u32, title: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {n:>2} {tag}  {title}: {detail}\n");
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn sci(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:.2e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

struct Reference {
    s: Scenario,
    synth: SynthesisResult,
    elapsed: Duration,
    trace: SimulationTrace,
}

fn reference() -> &'static Reference {
    static CELL: OnceLock<Reference> = OnceLock::new();
    CELL.get_or_init(|| {
        let s = load("paper_sec4");
        let t0 = Instant::now();
        let synth = synthesize(&s).unwrap();
        let elapsed = t0.elapsed();
        let trace = run_distributed(&s, &synth, &SimOptions::from_scenario(&s)).unwrap();
        Reference {
            s,
            synth,
            elapsed,
            trace,
        }
    })
}

#[test]
fn criterion_01_reference_synthesis() {
    let r = reference();
    let y = &r.synth;
    let pass = y.dare_residual <= 1e-10
        && y.p_positive_definite
        && y.rho_closed < 1.0
        && y.rho_ac <= 0.85
        && r.elapsed.as_secs_f64() <= 60.0;
    verdict(
        1,
        "reference synthesis",
        pass,
        &format!(
            "residual {:.2e}, P>0 {}, rho(A~+B~K) {:.4}, rho(A_c) {:.4} (gap to 0.7860 {:+.4}), {:.1} s",
            y.dare_residual,
            y.p_positive_definite,
            y.rho_closed,
            y.rho_ac,
            y.gap_to_reference,
            r.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_reference_consensus() {
    let r = reference();
    let m = convergence_metrics(
        &r.trace,
        Some(r.synth.rho_bar),
        r.s.tolerances.consensus_threshold,
    );
    let pass = matches!(m.consensus_step, Some(k) if k <= 25);
    verdict(
        2,
        "state consensus within 25 steps",
        pass,
        &format!("step {:?}, threshold {:.3e}", m.consensus_step, m.threshold),
    );
}

#[test]
fn criterion_03_observer_convergence() {
    let r = reference();
    let z0 = norm(&r.trace.records[0].augmented());
    let k = horizon_for_decay(r.synth.rho_bar, z0, 1e-8).max(r.s.horizon);
    let opts = SimOptions {
        horizon: k,
        ..SimOptions::from_scenario(&r.s)
    };
    let tr = run_distributed(&r.s, &r.synth, &opts).unwrap();
    let worst = tr.records[k]
        .observer_errors
        .iter()
        .map(|e| norm(e))
        .fold(0.0, f64::max);
    let m = convergence_metrics(
        &tr,
        Some(r.synth.rho_bar),
        r.s.tolerances.consensus_threshold,
    );
    let rate = m.empirical_rate.unwrap_or(0.0);
    let pass = worst <= 1e-6 && rate <= r.synth.rho_bar + 0.05;
    verdict(
        3,
        "observer convergence",
        pass,
        &format!(
            "max |E~_i({k})| {worst:.2e}, decay rate {rate:.4} vs rho(A_bar_c) {:.4}",
            r.synth.rho_bar
        ),
    );
}

#[test]
fn criterion_04_centralized_optimality() {
    let r = reference();
    let tr = run_centralized(&r.s, &r.synth, &SimOptions::from_scenario(&r.s)).unwrap();
    let c = compute_costs(&tr, &r.synth, &[0]).unwrap();
    let e = &c.entries[0];
    let gap = (e.j_sim - e.j_star).abs();
    let pass = gap <= 1e-6 + c.truncation_bound;
    verdict(
        4,
        "centralized cost equals E(0)'PE(0)",
        pass,
        &format!(
            "J {:.9}, E'PE {:.9}, gap {gap:.2e}, tail {:.2e}",
            e.j_sim, e.j_star, c.truncation_bound
        ),
    );
}

#[test]
fn criterion_05_cost_identity() {
    let r = reference();
    let c = compute_costs(&r.trace, &r.synth, &[0, 5, 10]).unwrap();
    let gaps: Vec<f64> = c
        .entries
        .iter()
        .map(|e| (e.j_sim - e.j_star_distributed.unwrap()).abs())
        .collect();
    let pass = gaps.iter().all(|&g| g <= 1e-6 + c.truncation_bound);
    verdict(
        5,
        "distributed cost identity at s = 0, 5, 10",
        pass,
        &format!("gaps [{}], tail {:.2e}", sci(&gaps), c.truncation_bound),
    );
}

#[test]
fn criterion_06_asymptotic_optimality() {
    let r = reference();
    let c = compute_costs(&r.trace, &r.synth, &[0, 5, 10, 20]).unwrap();
    let dj: Vec<(usize, f64)> = c
        .entries
        .iter()
        .map(|e| (e.s, e.delta_j.unwrap()))
        .collect();
    let d0 = dj[0].1.abs();
    let decreasing = hetcon_core::verify::delta_j_decreasing(&dj, 1e-12 * d0.max(1.0));
    let ratio = dj[3].1.abs() / d0;
    let pass = decreasing && ratio <= 1e-4;
    verdict(
        6,
        "delta J decays",
        pass,
        &format!(
            "delta J [{}], |dJ(20)|/|dJ(0)| {ratio:.2e}",
            sci(&dj.iter().map(|x| x.1).collect::<Vec<_>>())
        ),
    );
}

#[test]
fn criterion_07_feedforward_exactness() {
    let r = reference();
    let state = feedforward_exactness(&r.s, &r.synth, 8, false).unwrap();
    let mixed = load("mixed_output");
    let ms = synthesize(&mixed).unwrap();
    let output = feedforward_exactness(&mixed, &ms, mixed.horizon, true).unwrap();
    let pass = state <= 1e-12 && output <= 1e-12;
    verdict(
        7,
        "feedforward exactness",
        pass,
        &format!(
            "state mode (feedback off, 8 steps) {state:.2e}, output mode (60 steps) {output:.2e}"
        ),
    );
}

#[test]
fn criterion_08_output_consensus() {
    let s = load("mixed_output");
    let synth = synthesize(&s).unwrap();
    let opts = SimOptions {
        horizon: 60,
        ..SimOptions::from_scenario(&s)
    };
    let tr = run_distributed(&s, &synth, &opts).unwrap();
    let dev = tr.records[60].deviation();
    verdict(
        8,
        "output consensus at horizon 60",
        dev <= 1e-3,
        &format!("max |y_i - y_0| {dev:.2e}"),
    );
}

#[test]
fn criterion_09_homogeneous_reduction() {
    let s = load("homogeneous");
    assert!(s.is_homogeneous());
    let synth = synthesize(&s).unwrap();
    let tr = run_distributed(&s, &synth, &SimOptions::from_scenario(&s)).unwrap();
    let m = convergence_metrics(&tr, Some(synth.rho_bar), s.tolerances.consensus_threshold);
    let pass = matches!(m.consensus_step, Some(k) if k <= 25);
    verdict(
        9,
        "homogeneous agents reach consensus",
        pass,
        &format!(
            "step {:?}, rho(A_bar_c) {:.4}",
            m.consensus_step, synth.rho_bar
        ),
    );
}

#[test]
fn criterion_10_baseline_comparison() {
    let r = reference();
    let design = design_baseline(&r.s).unwrap();
    let tb = run_baseline(&r.s, &design, r.s.horizon, &LeaderEstimateInit::Zero).unwrap();
    let c = compare(
        (&r.trace, r.synth.rho_bar),
        (&tb, design.rho_closed),
        r.s.tolerances.consensus_threshold,
    )
    .unwrap();
    let pass = c.proposed_faster && c.proposed_smaller_rho;
    verdict(
        10,
        "proposed beats tuned baseline",
        pass,
        &format!(
            "consensus step {:?} vs {:?}, rho {:.6} vs {:.6} (mu {:.3})",
            c.consensus_step_proposed,
            c.consensus_step_baseline,
            c.rho_proposed,
            c.rho_baseline,
            design.mu
        ),
    );
}

#[test]
fn criterion_11_kernel_suites_under_verify() {
    let report = cmd_verify(&example("paper_sec4"), 2024).unwrap();
    let kernel = [
        "penrose conditions",
        "sigma_max >= spectral radius",
        "scalar DARE closed form",
        "spectral radius oracle cases",
    ];
    let picked: Vec<_> = report
        .checks
        .iter()
        .filter(|c| kernel.contains(&c.name.as_str()))
        .collect();
    let pass = picked.len() == kernel.len() && picked.iter().all(|c| c.passed);
    let detail = picked
        .iter()
        .map(|c| format!("{} {:.1e}", c.name, c.measured))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(11, "kernel property suites", pass, &detail);
}
