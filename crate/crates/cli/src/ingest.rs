//! Stacked trajectory files: states are stored stage-major (the first n rows
//! are S^0 for all n trajectories, the next n rows are S^1, and so on), with
//! companion action and reward files carrying one fewer stage.

use std::path::Path;

use anyhow::{bail, Context, Result};
use dtr_core::{OfflineDataset, StateVector, Trajectory};

pub struct StackedPaths<'a> {
    pub states: &'a Path,
    pub actions: &'a Path,
    pub rewards: &'a Path,
}

fn read_numeric_table(path: &Path, label: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {label} file {}", path.display()))?;
    let header: Vec<String> = reader
        .headers()
        .with_context(|| format!("{label}: missing header row"))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{label}: reading row {}", i + 1))?;
        let mut row = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().with_context(|| {
                format!(
                    "{label}: non-numeric cell at row {}, column {} ('{}')",
                    i + 1,
                    j + 1,
                    cell
                )
            })?;
            row.push(value);
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Reshape the stacked layout into `n` trajectories of `stages` transitions,
/// then run the structural/positivity validation.
pub fn ingest(
    paths: &StackedPaths<'_>,
    n: usize,
    stages: usize,
    action_count: Option<usize>,
) -> Result<(OfflineDataset, dtr_core::ValidationReport)> {
    if n == 0 || stages == 0 {
        bail!("n and stages must be positive");
    }
    let (_state_header, state_rows) = read_numeric_table(paths.states, "states")?;
    let (_a_header, action_rows) = read_numeric_table(paths.actions, "actions")?;
    let (_r_header, reward_rows) = read_numeric_table(paths.rewards, "rewards")?;

    if state_rows.len() != n * (stages + 1) {
        bail!(
            "states block: expected n·(stages+1) = {} rows, found {}",
            n * (stages + 1),
            state_rows.len()
        );
    }
    if action_rows.len() != n * stages {
        bail!(
            "actions block: expected n·stages = {} rows, found {}",
            n * stages,
            action_rows.len()
        );
    }
    if reward_rows.len() != n * stages {
        bail!(
            "rewards block: expected n·stages = {} rows, found {}",
            n * stages,
            reward_rows.len()
        );
    }
    let state_dim = state_rows[0].len();

    // infer the action space when not pinned by config
    let max_action = action_rows
        .iter()
        .map(|r| r[0])
        .fold(0.0f64, f64::max)
        .max(0.0);
    let action_count = action_count.unwrap_or(max_action as usize + 1);

    let mut trajectories = Vec::with_capacity(n);
    for i in 0..n {
        let states: Vec<StateVector> = (0..=stages)
            .map(|k| StateVector::new(state_rows[k * n + i].clone()))
            .collect();
        let mut actions = Vec::with_capacity(stages);
        for k in 0..stages {
            let row = k * n + i;
            let raw = action_rows[row][0];
            if raw < 0.0 || raw.fract() != 0.0 {
                bail!("actions: row {} is not a nonnegative integer: {raw}", row + 1);
            }
            let a = raw as usize;
            if a >= action_count {
                bail!("action out of range at row {}: {a} ≥ {action_count}", row + 1);
            }
            actions.push(a);
        }
        let rewards: Vec<f64> = (0..stages).map(|k| reward_rows[k * n + i][0]).collect();
        trajectories.push(Trajectory::new(states, actions, rewards)?);
    }

    let ds = OfflineDataset::new(trajectories, state_dim, action_count)?;
    let report = dtr_core::data::validate_dataset(&ds)?;
    Ok((ds, report))
}

/// Write a dataset back out in the stacked layout.
pub fn write_stacked(ds: &OfflineDataset, paths: &StackedPaths<'_>) -> Result<()> {
    let n = ds.n_trajectories();
    let stages = ds.trajectories[0].len();
    for t in &ds.trajectories {
        if t.len() != stages {
            bail!("stacked export requires equal-length trajectories");
        }
    }

    let mut w = csv::Writer::from_path(paths.states)
        .with_context(|| format!("writing {}", paths.states.display()))?;
    let header: Vec<String> = (0..ds.state_dim).map(|j| format!("s{j}")).collect();
    w.write_record(&header)?;
    for k in 0..=stages {
        for i in 0..n {
            let row: Vec<String> = ds.trajectories[i].states[k]
                .as_slice()
                .iter()
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(paths.actions)?;
    w.write_record(["action"])?;
    for k in 0..stages {
        for i in 0..n {
            w.write_record([ds.trajectories[i].actions[k].to_string()])?;
        }
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(paths.rewards)?;
    w.write_record(["reward"])?;
    for k in 0..stages {
        for i in 0..n {
            w.write_record([ds.trajectories[i].rewards[k].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
