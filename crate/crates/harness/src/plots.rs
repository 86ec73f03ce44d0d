//! Whitespace-separated data files for gnuplot. Each starts with `#` comment
//! lines naming its columns.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use metampc_core::ppo::IterationMetrics;

use crate::{HarnessError, SweepCell};

fn reader(path: &Path) -> Result<csv::Reader<File>, HarnessError> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?)
}

fn metrics_files(dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let mut found = Vec::new();
    let direct = dir.join("metrics.csv");
    if direct.is_file() {
        found.push(direct);
    }
    if dir.is_dir() {
        let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
        subdirs.sort();
        for sub in subdirs {
            found.extend(metrics_files(&sub)?);
        }
    }
    Ok(found)
}

/// Training curves from every `metrics.csv` below `dir`, aligned by
/// iteration: mean environment steps, then mean/min/max episode cost across
/// runs, recompute fraction and horizon.
fn write_curves(runs: &[Vec<IterationMetrics>], path: &Path) -> Result<(), HarnessError> {
    let len = runs.iter().map(Vec::len).min().unwrap_or(0);
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# runs {}", runs.len())?;
    writeln!(w, "# env_steps mean_cost min_cost max_cost recompute_fraction mean_horizon")?;
    let k = runs.len() as f64;
    for i in 0..len {
        let rows: Vec<&IterationMetrics> = runs.iter().map(|r| &r[i]).collect();
        let steps = rows.iter().map(|m| m.env_steps as f64).sum::<f64>() / k;
        let costs: Vec<f64> = rows.iter().map(|m| m.mean_episode_cost).collect();
        let mean = costs.iter().sum::<f64>() / k;
        let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let rf = rows.iter().map(|m| m.recompute_fraction).sum::<f64>() / k;
        let horizon = rows.iter().map(|m| m.mean_horizon).sum::<f64>() / k;
        writeln!(w, "{steps} {mean} {min} {max} {rf} {horizon}")?;
    }
    w.flush()?;
    Ok(())
}

/// One row per grid cell, blocks separated by blank lines per period.
fn write_surface(cells: &[SweepCell], path: &Path) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# horizon period total_cost")?;
    let mut previous = None;
    for c in cells {
        if previous.is_some_and(|p| p != c.period) {
            writeln!(w)?;
        }
        previous = Some(c.period);
        writeln!(w, "{} {} {}", c.horizon, c.period, c.total_cost)?;
    }
    w.flush()?;
    Ok(())
}

fn convert_histogram(src: &Path, path: &Path) -> Result<(), HarnessError> {
    let mut r = reader(src)?;
    let headers = r.headers()?.clone();
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# {}", headers.iter().collect::<Vec<_>>().join(" "))?;
    for rec in r.records() {
        writeln!(w, "{}", rec?.iter().collect::<Vec<_>>().join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// Convert the results below `dir` into plot data in `out`: `curves.dat` from
/// training metrics, `surface.dat` from `sweep.csv`, and `horizon_hist.dat`
/// and `gap_hist.dat` from the evaluation histograms. Returns the files
/// written.
pub fn emit_plots(dir: &Path, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();

    let mut runs = Vec::new();
    for path in metrics_files(dir)? {
        let rows = reader(&path)?.deserialize().collect::<Result<Vec<IterationMetrics>, _>>()?;
        if !rows.is_empty() {
            runs.push(rows);
        }
    }
    if !runs.is_empty() {
        let path = out.join("curves.dat");
        write_curves(&runs, &path)?;
        written.push(path);
    }

    let sweep = dir.join("sweep.csv");
    if sweep.is_file() {
        let cells = reader(&sweep)?.deserialize().collect::<Result<Vec<SweepCell>, _>>()?;
        let path = out.join("surface.dat");
        write_surface(&cells, &path)?;
        written.push(path);
    }

    for name in ["horizon_hist", "gap_hist"] {
        let src = dir.join(format!("{name}.csv"));
        if src.is_file() {
            let path = out.join(format!("{name}.dat"));
            convert_histogram(&src, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}
