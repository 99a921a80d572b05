//! Trajectory records and their on-disk formats.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so files
//! depend only on the values and re-reading them is exact.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sinkflow_core::{FlowTrajectory, Mode};

/// One line of `trajectory.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    pub energy: f64,
    /// Speed of the step ending at `t`; `null` at `t = 0` and when no
    /// embedding is available.
    pub speed_hc: Option<f64>,
    /// `null` when the scheme has no pressure (Lagrangian).
    pub pressure_min: Option<f64>,
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: f64,
    pub energy: f64,
    pub speed_hc: Option<f64>,
    pub mass_near_argmin: f64,
    pub hc_norm_residual: Option<f64>,
}

pub const SUMMARY_HEADER: &str = "t,energy,speed_hc,mass_near_argmin,hc_norm_residual";

/// Frame indices kept when exporting every `every`-th step; the last frame
/// is always kept.
pub fn frame_selection(len: usize, every: usize) -> Vec<usize> {
    let every = every.max(1);
    let mut out: Vec<usize> = (0..len).filter(|i| i % every == 0).collect();
    if len > 0 && out.last() != Some(&(len - 1)) {
        out.push(len - 1);
    }
    out
}

/// Builds records for the selected frames. `tau` maps frame times back to
/// step indices for the speed lookup.
pub fn records(traj: &FlowTrajectory<f64>, frames: &[usize], tau: f64) -> Vec<FrameRecord> {
    frames
        .iter()
        .map(|&i| {
            let mu = &traj.measures[i];
            let t = traj.times[i];
            let (weights, positions) = match mu.mode() {
                Mode::Eulerian => (Some(mu.weights().iter().copied().collect()), None),
                Mode::Lagrangian => (None, Some(mu.points().iter().map(<[f64]>::to_vec).collect())),
            };
            let step = (t / tau).round() as usize;
            let speed_hc = if step == 0 { None } else { traj.speed_norms.get(step - 1).copied() };
            FrameRecord {
                t,
                weights,
                positions,
                b: traj.states.get(i).map(|s| s.values().iter().copied().collect()),
                energy: traj.energies[i],
                speed_hc,
                pressure_min: traj.pressures.get(i).map(|p| p.min()),
            }
        })
        .collect()
}

pub fn write_jsonl(path: &Path, recs: &[FrameRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in recs {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<FrameRecord>> {
    let r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let mut out = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), k + 1))?);
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{},{}", r.t, r.energy, opt(r.speed_hc), r.mass_near_argmin, opt(r.hc_norm_residual))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("opening {}", path.display()))?;
    let mut lines = text.lines();
    anyhow::ensure!(lines.next() == Some(SUMMARY_HEADER), "{}: unexpected header", path.display());
    let parse_opt = |s: &str| -> Result<Option<f64>> { Ok(if s.is_empty() { None } else { Some(s.parse()?) }) };
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            anyhow::ensure!(f.len() == 5, "{}: expected 5 columns in `{l}`", path.display());
            Ok(SummaryRow {
                t: f[0].parse()?,
                energy: f[1].parse()?,
                speed_hc: parse_opt(f[2])?,
                mass_near_argmin: f[3].parse()?,
                hc_norm_residual: parse_opt(f[4])?,
            })
        })
        .collect()
}

/// Writes a headed CSV of numeric rows.
pub fn write_table(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "{header}")?;
    for r in rows {
        let line: Vec<String> = r.iter().map(f64::to_string).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}
