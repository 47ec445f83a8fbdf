//! Delimited-text file formats.
//!
//! Every file opens with `#` lines: the tool version, the seed, and the
//! resolved configuration as JSON. Dataset files add a `# layout:` line.
//! Floats are written in shortest round-trip form.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use auxabc::{Dataset64, GenerationRecord, PosteriorApproximation64, Trajectory64};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Observable column names of the built-in model.
pub const OBSERVED_COLUMNS: [&str; 1] = ["rho"];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub horizon: usize,
    pub dt: f64,
    pub d_x: usize,
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn write_header(out: &mut impl Write, cfg: &ExperimentConfig) -> Result<()> {
    writeln!(out, "# auxabc {VERSION}")?;
    writeln!(out, "# seed: {}", cfg.seed)?;
    writeln!(out, "# config: {}", cfg.to_json())?;
    Ok(())
}

pub fn write_dataset(path: &Path, data: &Dataset64, cfg: &ExperimentConfig) -> Result<()> {
    let layout = Layout {
        horizon: data.horizon(),
        dt: data.dt(),
        d_x: data.observed_dim(),
    };
    ensure!(layout.d_x == OBSERVED_COLUMNS.len(), "dataset has {} observed columns", layout.d_x);
    let mut out = create(path)?;
    write_header(&mut out, cfg)?;
    writeln!(out, "# layout: {}", serde_json::to_string(&layout)?)?;
    writeln!(out, "trajectory,t,{}", OBSERVED_COLUMNS.join(","))?;
    for (i, traj) in data.trajectories().iter().enumerate() {
        for (t, row) in traj.states().row_iter().enumerate() {
            write!(out, "{i},{}", t + 1)?;
            for x in row.iter() {
                write!(out, ",{x}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_layout(path: &Path) -> Result<Layout> {
    let reader = BufReader::new(File::open(path).with_context(|| format!("cannot read {}", path.display()))?);
    for line in reader.lines() {
        let line = line?;
        if let Some(json) = line.strip_prefix("# layout:") {
            return serde_json::from_str(json.trim())
                .with_context(|| format!("{}: malformed layout line", path.display()));
        }
        if !line.starts_with('#') {
            break;
        }
    }
    bail!("{}: missing `# layout:` header line", path.display())
}

pub fn read_dataset(path: &Path) -> Result<Dataset64> {
    let layout = read_layout(path)?;
    let rows_per = layout.horizon + 1;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let headers = reader.headers()?.clone();
    ensure!(
        headers.len() == 2 + layout.d_x && &headers[0] == "trajectory" && &headers[1] == "t",
        "{}: unexpected columns {:?}",
        path.display(),
        headers
    );

    let mut states: Vec<Vec<f64>> = Vec::new();
    let mut trajectories = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let idx: usize = record[0].parse().with_context(|| format!("row {}: trajectory index", line + 1))?;
        let t: usize = record[1].parse().with_context(|| format!("row {}: time index", line + 1))?;
        ensure!(
            idx == trajectories.len() && t == states.len() + 1,
            "{}: row {} is (trajectory {idx}, t {t}), expected ({}, {})",
            path.display(),
            line + 1,
            trajectories.len(),
            states.len() + 1
        );
        let values = (2..record.len())
            .map(|k| record[k].parse::<f64>().with_context(|| format!("row {}: value", line + 1)))
            .collect::<Result<Vec<_>>>()?;
        states.push(values);
        if states.len() == rows_per {
            let m = DMatrix::from_fn(rows_per, layout.d_x, |r, c| states[r][c]);
            trajectories.push(Trajectory64::observed(m, layout.dt)?);
            states.clear();
        }
    }
    ensure!(states.is_empty(), "{}: last trajectory is incomplete", path.display());
    Ok(Dataset64::new(trajectories)?)
}

/// Retained particles with normalized weights.
pub fn write_posterior(path: &Path, post: &PosteriorApproximation64, cfg: &ExperimentConfig) -> Result<()> {
    let mut out = create(path)?;
    write_header(&mut out, cfg)?;
    let names = post
        .population
        .particles
        .first()
        .map(|p| p.theta.names().to_vec())
        .unwrap_or_default();
    writeln!(out, "{},weight,distance", names.join(","))?;
    let weights = post.normalized_weights()?;
    for (p, w) in post.population.particles.iter().zip(weights) {
        for v in p.theta.values() {
            write!(out, "{v},")?;
        }
        writeln!(out, "{w},{}", p.distance)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_history(path: &Path, history: &[GenerationRecord], cfg: &ExperimentConfig) -> Result<()> {
    let mut out = create(path)?;
    write_header(&mut out, cfg)?;
    writeln!(out, "generation,tolerance,acceptance_rate,simulator_calls,kept,elapsed_s")?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.generation, r.tolerance, r.acceptance_rate, r.simulator_calls, r.kept, r.elapsed_secs
        )?;
    }
    out.flush()?;
    Ok(())
}

/// One JSON object per line.
pub struct ProgressLog {
    out: BufWriter<File>,
}

impl ProgressLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { out: create(path)? })
    }

    pub fn record(&mut self, rec: &impl Serialize) -> Result<()> {
        serde_json::to_writer(&mut self.out, rec)?;
        writeln!(self.out)?;
        self.out.flush()?;
        Ok(())
    }
}
