//! CSV traces with a JSON column manifest, and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use hetcon_core::{SimulationTrace, StepRecord};
use serde::Serialize;

/// Writes to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path
        .file_name()
        .context("output path has no file name")?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub quantity: &'static str,
    /// Follower index, or `0` for the leader; absent for scalars.
    pub agent: Option<usize>,
    /// Parent of `agent` for pairwise error columns.
    pub parent: Option<usize>,
    pub component: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub trace: String,
    pub kind: hetcon_core::TraceKind,
    pub mode: hetcon_core::Mode,
    pub feedback_enabled: bool,
    pub rows: usize,
    pub columns: Vec<Column>,
}

fn vector_columns(
    out: &mut Vec<Column>,
    quantity: &'static str,
    prefix: &str,
    agent: Option<usize>,
    len: usize,
) {
    for c in 0..len {
        let name = match agent {
            Some(i) => format!("{prefix}{i}_{}", c + 1),
            None => format!("{prefix}_{}", c + 1),
        };
        out.push(Column {
            name,
            quantity,
            agent,
            parent: None,
            component: Some(c + 1),
        });
    }
}

/// Column layout derived from the first record.
pub fn columns(trace: &SimulationTrace) -> Vec<Column> {
    let r0 = &trace.records[0];
    let mut cols = vec![Column {
        name: "step".into(),
        quantity: "step",
        agent: None,
        parent: None,
        component: None,
    }];
    vector_columns(
        &mut cols,
        "leader_state",
        "x",
        Some(0),
        r0.leader_state.len(),
    );
    vector_columns(
        &mut cols,
        "leader_output",
        "y",
        Some(0),
        r0.leader_output.len(),
    );
    let n = r0.states.len();
    for i in 0..n {
        vector_columns(&mut cols, "state", "x", Some(i + 1), r0.states[i].len());
        vector_columns(&mut cols, "output", "y", Some(i + 1), r0.outputs[i].len());
        vector_columns(
            &mut cols,
            "feedforward",
            "uff",
            Some(i + 1),
            r0.feedforward[i].len(),
        );
        vector_columns(
            &mut cols,
            "feedback",
            "ufb",
            Some(i + 1),
            r0.feedback[i].len(),
        );
    }
    let block = if trace.pair_order.is_empty() {
        0
    } else {
        r0.error.len() / trace.pair_order.len()
    };
    for &(i, j) in &trace.pair_order {
        for c in 0..block {
            cols.push(Column {
                name: format!("e{i}_{j}_{}", c + 1),
                quantity: "error",
                agent: Some(i),
                parent: Some(j),
                component: Some(c + 1),
            });
        }
    }
    for (i, e) in r0.observer_errors.iter().enumerate() {
        vector_columns(&mut cols, "observer_error", "et", Some(i + 1), e.len());
    }
    for (i, e) in r0.leader_estimates.iter().enumerate() {
        vector_columns(&mut cols, "leader_estimate", "eta", Some(i + 1), e.len());
    }
    for (name, quantity) in [("stage_cost", "stage_cost"), ("deviation", "deviation")] {
        cols.push(Column {
            name: name.into(),
            quantity,
            agent: None,
            parent: None,
            component: None,
        });
    }
    cols
}

fn row(r: &StepRecord) -> Vec<f64> {
    let mut v = vec![r.k as f64];
    v.extend(&r.leader_state);
    v.extend(&r.leader_output);
    for i in 0..r.states.len() {
        v.extend(&r.states[i]);
        v.extend(&r.outputs[i]);
        v.extend(&r.feedforward[i]);
        v.extend(&r.feedback[i]);
    }
    v.extend(&r.error);
    for e in &r.observer_errors {
        v.extend(e);
    }
    for e in &r.leader_estimates {
        v.extend(e);
    }
    v.push(r.stage_cost);
    v.push(r.deviation());
    v
}

/// Writes `<stem>.csv` and `<stem>.columns.json` into `dir`; returns both paths.
pub fn write_trace(dir: &Path, stem: &str, trace: &SimulationTrace) -> Result<(PathBuf, PathBuf)> {
    let cols = columns(trace);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(cols.iter().map(|c| c.name.as_str()))?;
    for r in &trace.records {
        let values = row(r);
        debug_assert_eq!(values.len(), cols.len());
        // `{:?}` keeps the shortest round-tripping representation
        w.write_record(values.iter().map(|x| format!("{x:?}")))?;
    }
    let bytes = w.into_inner().context("flushing CSV")?;
    let csv_path = dir.join(format!("{stem}.csv"));
    write_atomic(&csv_path, &bytes)?;
    let manifest = Manifest {
        trace: format!("{stem}.csv"),
        kind: trace.kind,
        mode: trace.mode,
        feedback_enabled: trace.feedback_enabled,
        rows: trace.records.len(),
        columns: cols,
    };
    let manifest_path = dir.join(format!("{stem}.columns.json"));
    write_json(&manifest_path, &manifest)?;
    Ok((csv_path, manifest_path))
}
