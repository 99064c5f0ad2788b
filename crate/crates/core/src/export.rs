//! CSV and JSON writers for trajectories, event logs and reports.
//!
//! Columns are fixed by the largest agent count over the run; agents absent
//! from the active mode leave their cells empty. Agent 0 is the leader.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::simulate::{LyapunovTrace, Trajectory};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const SUMMARY_FILE: &str = "summary.json";

fn max_agents(traj: &Trajectory) -> usize {
    traj.samples
        .iter()
        .map(|s| s.n_agents(traj.p))
        .max()
        .unwrap_or(0)
}

pub fn trajectory_header(traj: &Trajectory) -> Vec<String> {
    let n = max_agents(traj);
    let mut h = vec!["t".to_string(), "mode".into(), "agent_count".into()];
    for i in 0..=n {
        for d in 0..traj.p {
            h.push(format!("agent{i}_dim{d}"));
        }
    }
    for i in 1..=n {
        for d in 0..traj.p {
            h.push(format!("err{i}_dim{d}"));
        }
    }
    h
}

pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let n = max_agents(traj);
    let p = traj.p;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header(traj))?;
    let mut row: Vec<String> = Vec::with_capacity(3 + p * (2 * n + 1));
    for s in &traj.samples {
        row.clear();
        row.push(s.t.to_string());
        row.push(s.mode.to_string());
        row.push(s.n_agents(p).to_string());
        let cells = |v: &nalgebra::DVector<f64>, width: usize, row: &mut Vec<String>| {
            row.extend(v.iter().map(f64::to_string));
            row.extend(std::iter::repeat_n(String::new(), width - v.len()));
        };
        cells(&s.state, p * (n + 1), &mut row);
        cells(&s.err, p * n, &mut row);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events<W: Write>(
    traj: &Trajectory,
    lyapunov: Option<&LyapunovTrace>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "k",
        "t",
        "mode_before",
        "mode_after",
        "n_before",
        "n_after",
        "joins",
        "leaves",
        "phi_norm",
        "err_norm_pre",
        "err_norm_post",
        "v_pre",
        "v_post",
        "jump_bound",
    ])?;
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    for (i, e) in traj.events.iter().enumerate() {
        let ev = &e.event;
        let jump = lyapunov.and_then(|l| l.jumps.get(i));
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
        w.write_record([
            e.k.to_string(),
            e.t.to_string(),
            ev.mode_before.to_string(),
            ev.mode_after.to_string(),
            ev.n_before.to_string(),
            ev.n_after.to_string(),
            join(&ev.joins),
            join(&ev.leaves),
            ev.phi_ind.as_ref().map_or(0.0, |v| v.norm()).to_string(),
            e.pre.err.norm().to_string(),
            e.post.err.norm().to_string(),
            opt(jump.map(|j| j.v_minus)),
            opt(jump.map(|j| j.v_plus)),
            opt(jump.map(|j| j.bound)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, to_json(value)?)?;
    Ok(())
}

/// Writes the trajectory, event log and `summary` into `dir`.
pub fn write_run<T: Serialize>(
    dir: &Path,
    traj: &Trajectory,
    lyapunov: Option<&LyapunovTrace>,
    summary: &T,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trajectory(
        traj,
        std::io::BufWriter::new(fs::File::create(dir.join(TRAJECTORY_FILE))?),
    )?;
    write_events(traj, lyapunov, fs::File::create(dir.join(EVENTS_FILE))?)?;
    write_json(summary, &dir.join(SUMMARY_FILE))
}
