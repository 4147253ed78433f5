use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hetcon_core::baseline::{compare, design_baseline, run_baseline};
use hetcon_core::sim::{compute_costs, convergence_metrics, run_centralized, run_distributed};
use hetcon_core::synthesis::{synthesize, FeedforwardKind, ObserverObjective};
use hetcon_core::verify::{kernel_checks, scenario_checks};
use hetcon_core::{
    Check, ComparisonReport, ConvergenceMetrics, CostReport, LeaderEstimateInit, Mat, Mode,
    Scenario, SimOptions, SimulationTrace, SynthesisResult, TraceKind,
};
use serde::Serialize;

use crate::args::RunMode;
use crate::export::{write_json, write_trace};

/// Cost offsets reported for every run.
pub const COST_STARTS: [usize; 4] = [0, 5, 10, 20];

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let s = Scenario::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    s.validate()
        .with_context(|| format!("validating {}", path.display()))?;
    Ok(s)
}

/// File stem for outputs: the scenario name, else the input file stem.
pub fn scenario_stem(s: &Scenario, path: &Path) -> String {
    s.name
        .clone()
        .or_else(|| path.file_stem().map(|x| x.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "scenario".into())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisSummary {
    pub rho_closed: f64,
    pub rho_ac: f64,
    pub rho_bar: f64,
    pub alpha: f64,
    pub sigma_max_ac: f64,
    pub dare_residual: f64,
    pub dare_iterations: usize,
    pub p_positive_definite: bool,
    pub observer_objective: ObserverObjective,
    pub observer_evaluations: usize,
    /// `ρ(A_c)` minus the published LMI value.
    pub gap_to_reference: f64,
}

impl From<&SynthesisResult> for SynthesisSummary {
    fn from(r: &SynthesisResult) -> Self {
        Self {
            rho_closed: r.rho_closed,
            rho_ac: r.rho_ac,
            rho_bar: r.rho_bar,
            alpha: r.alpha,
            sigma_max_ac: r.sigma_max_ac,
            dare_residual: r.dare_residual,
            dare_iterations: r.dare_iterations,
            p_positive_definite: r.p_positive_definite,
            observer_objective: r.observer_objective,
            observer_evaluations: r.observer_evaluations,
            gap_to_reference: r.gap_to_reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedforwardSummary {
    pub agent: usize,
    pub parent: usize,
    pub kind: FeedforwardKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gains {
    pub p: Mat,
    pub k: Mat,
    pub k_i: Vec<Mat>,
    pub l: Vec<Mat>,
    pub m1: Mat,
    pub m2: Mat,
    pub feedforward: Vec<FeedforwardSummary>,
}

impl From<&SynthesisResult> for Gains {
    fn from(r: &SynthesisResult) -> Self {
        Self {
            p: r.p.clone(),
            k: r.k.clone(),
            k_i: r.k_i.clone(),
            l: r.l.clone(),
            m1: r.m1.clone(),
            m2: r.m2.clone(),
            feedforward: r
                .feedforward
                .iter()
                .map(|f| FeedforwardSummary {
                    agent: f.agent,
                    parent: f.parent,
                    kind: f.kind,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisFile {
    pub scenario: String,
    pub summary: SynthesisSummary,
    pub gains: Gains,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub kind: Option<TraceKind>,
    pub mode: Mode,
    pub horizon: usize,
    pub synthesis: SynthesisSummary,
    /// Spectral radius governing this run's error decay.
    pub rho_run: Option<f64>,
    pub convergence: Option<ConvergenceMetrics>,
    pub costs: Option<CostReport>,
    pub files: Vec<PathBuf>,
}

pub fn cmd_synthesize(path: &Path, out: &Path) -> Result<RunReport> {
    let s = load_scenario(path)?;
    let stem = scenario_stem(&s, path);
    let r = synthesize(&s).context("synthesis")?;
    let summary = SynthesisSummary::from(&r);
    let gains_path = out.join(format!("{stem}.synthesis.json"));
    write_json(
        &gains_path,
        &SynthesisFile {
            scenario: stem.clone(),
            summary: summary.clone(),
            gains: Gains::from(&r),
        },
    )?;
    Ok(RunReport {
        scenario: stem,
        kind: None,
        mode: s.mode,
        horizon: s.horizon,
        synthesis: summary,
        rho_run: None,
        convergence: None,
        costs: None,
        files: vec![gains_path],
    })
}

pub fn print_summary(name: &str, m: &SynthesisSummary) {
    println!("scenario {name}");
    println!("  rho(A~ + B~K)      {:.6}", m.rho_closed);
    println!(
        "  rho(A_c)           {:.6}  (gap to 0.7860: {:+.6})",
        m.rho_ac, m.gap_to_reference
    );
    println!("  rho(A_bar_c)       {:.6}", m.rho_bar);
    println!(
        "  sigma_max(A_c)     {:.6}  alpha = {:.6}",
        m.sigma_max_ac, m.alpha
    );
    println!(
        "  DARE residual      {:.3e}  ({} iterations)",
        m.dare_residual, m.dare_iterations
    );
}

fn finish_run(
    s: &Scenario,
    stem: &str,
    synth: &SynthesisResult,
    trace: &SimulationTrace,
    rho: f64,
    out: &Path,
) -> Result<RunReport> {
    let kind = trace.kind;
    let tag = match kind {
        TraceKind::Distributed => "distributed",
        TraceKind::Centralized => "centralized",
        TraceKind::Baseline => "baseline",
    };
    let file_stem = format!("{stem}.{tag}");
    let (csv, manifest) = write_trace(out, &file_stem, trace)?;
    let starts: Vec<usize> = COST_STARTS
        .into_iter()
        .filter(|&k| k <= trace.horizon())
        .collect();
    let costs = compute_costs(trace, synth, &starts)?;
    let metrics = convergence_metrics(trace, Some(rho), s.tolerances.consensus_threshold);
    let report_path = out.join(format!("{file_stem}.report.json"));
    let report = RunReport {
        scenario: stem.into(),
        kind: Some(kind),
        mode: s.mode,
        horizon: trace.horizon(),
        synthesis: SynthesisSummary::from(synth),
        rho_run: Some(rho),
        convergence: Some(metrics),
        costs: Some(costs),
        files: vec![csv, manifest, report_path.clone()],
    };
    write_json(&report_path, &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub reports: Vec<RunReport>,
    pub comparison: Option<ComparisonReport>,
    pub comparison_path: Option<PathBuf>,
}

pub fn cmd_run(
    path: &Path,
    mode: RunMode,
    horizon: Option<usize>,
    out: &Path,
) -> Result<RunOutcome> {
    let mut s = load_scenario(path)?;
    if let Some(h) = horizon {
        s.horizon = h;
    }
    let stem = scenario_stem(&s, path);
    let synth = synthesize(&s).context("synthesis")?;
    let opts = SimOptions::from_scenario(&s);

    let distributed = || -> Result<(SimulationTrace, f64)> {
        Ok((
            run_distributed(&s, &synth, &opts).context("distributed run")?,
            synth.rho_bar,
        ))
    };
    let centralized = || -> Result<(SimulationTrace, f64)> {
        Ok((
            run_centralized(&s, &synth, &opts).context("centralized run")?,
            synth.rho_closed,
        ))
    };
    let baseline = || -> Result<(SimulationTrace, f64)> {
        let design = design_baseline(&s).context("baseline design")?;
        let trace = run_baseline(&s, &design, s.horizon, &LeaderEstimateInit::Zero)
            .context("baseline run")?;
        Ok((trace, design.rho_closed))
    };

    let runs: Vec<(SimulationTrace, f64)> = match mode {
        RunMode::Distributed => vec![distributed()?],
        RunMode::Centralized => vec![centralized()?],
        RunMode::Baseline => vec![baseline()?],
        RunMode::All => {
            let (d, (c, b)) = rayon::join(distributed, || rayon::join(centralized, baseline));
            vec![d?, c?, b?]
        }
    };

    let mut reports = Vec::new();
    for (trace, rho) in &runs {
        reports.push(finish_run(&s, &stem, &synth, trace, *rho, out)?);
    }
    let (comparison, comparison_path) = if mode == RunMode::All {
        let c = compare(
            (&runs[0].0, runs[0].1),
            (&runs[2].0, runs[2].1),
            s.tolerances.consensus_threshold,
        )?;
        let p = out.join(format!("{stem}.comparison.json"));
        write_json(&p, &c)?;
        (Some(c), Some(p))
    } else {
        (None, None)
    };
    Ok(RunOutcome {
        reports,
        comparison,
        comparison_path,
    })
}

pub fn print_run(r: &RunReport) {
    let kind = r
        .kind
        .map(|k| format!("{k:?}").to_lowercase())
        .unwrap_or_default();
    println!("{kind} run, horizon {}", r.horizon);
    if let Some(m) = &r.convergence {
        match m.consensus_step {
            Some(k) => println!("  consensus step     {k}"),
            None => println!("  consensus step     not reached"),
        }
        if let Some(rate) = m.empirical_rate {
            println!(
                "  empirical rate     {rate:.6}  (rho = {:.6})",
                r.rho_run.unwrap_or(f64::NAN)
            );
        }
    }
    if let Some(c) = &r.costs {
        for e in &c.entries {
            match e.delta_j {
                Some(dj) => println!(
                    "  s = {:<3} J_sim = {:.6}  E'PE = {:.6}  dJ = {:.6e}",
                    e.s, e.j_sim, e.j_star, dj
                ),
                None => println!(
                    "  s = {:<3} J_sim = {:.6}  E'PE = {:.6}",
                    e.s, e.j_sim, e.j_star
                ),
            }
        }
        println!(
            "  tail bound         {:.3e} ({:?})",
            c.truncation_bound, c.tail_bound
        );
    }
    for f in &r.files {
        println!("  wrote {}", f.display());
    }
}

pub fn print_comparison(c: &ComparisonReport) {
    let step = |k: Option<usize>| k.map_or("never".to_string(), |k| k.to_string());
    println!("comparison");
    println!(
        "  rho          proposed {:.6}  baseline {:.6}",
        c.rho_proposed, c.rho_baseline
    );
    println!(
        "  consensus    proposed {}  baseline {}",
        step(c.consensus_step_proposed),
        step(c.consensus_step_baseline)
    );
    println!(
        "  proposed faster: {}  smaller rho: {}",
        c.proposed_faster, c.proposed_smaller_rho
    );
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub checks: Vec<Check>,
    pub passed: bool,
}

pub fn cmd_verify(path: &Path, seed: u64) -> Result<VerifyReport> {
    let s = load_scenario(path)?;
    let stem = scenario_stem(&s, path);
    let (mut checks, scenario) = rayon::join(|| kernel_checks(seed), || scenario_checks(&s));
    checks.extend(scenario);
    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        scenario: stem,
        checks,
        passed,
    })
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "-".into()
    } else {
        format!("{x:.3e}")
    }
}

pub fn print_verify(r: &VerifyReport) {
    let width = r.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    println!(
        "{:<width$}  {:>10}  {:>10}  result",
        "check", "measured", "tolerance"
    );
    for c in &r.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        let mut line = format!(
            "{:<width$}  {:>10}  {:>10}  {verdict}",
            c.name,
            fmt_num(c.measured),
            fmt_num(c.tolerance)
        );
        if !c.passed && !c.detail.is_empty() {
            line.push_str(&format!("  {}", c.detail));
        }
        println!("{line}");
    }
    let failed = r.checks.iter().filter(|c| !c.passed).count();
    if failed == 0 {
        println!("all {} checks passed", r.checks.len());
    } else {
        println!("{failed} of {} checks failed", r.checks.len());
    }
}

/// Refuses to overwrite a regular file with an output directory.
pub fn ensure_out_dir(out: &Path) -> Result<()> {
    if out.is_file() {
        bail!("output path {} is a file", out.display());
    }
    Ok(())
}
