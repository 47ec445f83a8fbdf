//! Subcommand implementations.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use auxabc::eval::StateColumn;
use auxabc::{
    discrepancy_for, generate_dataset, run_abc_smc_with_progress, run_macro_replications,
    ConfidenceInterval, DistanceKind, GenerationRecord, MacroConfig64, MacroReplicationReport64,
    PredictiveSample,
};

use crate::config::{Cell, ExperimentConfig};
use crate::io::{self, ProgressLog};

/// Writes `m` observed trajectories simulated at the true parameters.
pub fn generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let theta = cfg.truth().to_vector();
    let data = generate_dataset(&cfg.model(), &theta, cfg.data.batches, 1, cfg.seed)?;
    let path = cfg.output_dir.join("dataset.csv");
    io::write_dataset(&path, &data, cfg)?;
    Ok(path)
}

pub struct InferSummary {
    pub method: DistanceKind,
    pub generations: usize,
    pub particles: usize,
    pub tolerance: f64,
    pub simulator_calls: u64,
    pub elapsed_secs: f64,
    pub posterior_mean: Vec<(String, f64)>,
    pub posterior_path: PathBuf,
}

impl fmt::Display for InferSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} ABC-SMC: {} generations, {} particles, tolerance {:.4}, {} simulator calls, {:.2}s",
            self.method.as_str(),
            self.generations,
            self.particles,
            self.tolerance,
            self.simulator_calls,
            self.elapsed_secs
        )?;
        for (name, mean) in &self.posterior_mean {
            writeln!(f, "  {name:>6} = {mean:.5}")?;
        }
        write!(f, "wrote {}", self.posterior_path.display())
    }
}

/// Runs one ABC-SMC inference and writes `posterior.csv`, `history.csv`
/// and `progress.jsonl` to the output directory.
pub fn infer(cfg: &ExperimentConfig, data_path: &Path, quiet: bool) -> Result<InferSummary> {
    let data = io::read_dataset(data_path)?;
    let model = cfg.model();
    ensure!(
        data.horizon() == model.horizon && data.dt() == model.dt,
        "{} has horizon {} and dt {}, config says {} and {}",
        data_path.display(),
        data.horizon(),
        data.dt(),
        model.horizon,
        model.dt
    );
    let disc = discrepancy_for(cfg.engine.distance, &data, cfg.engine.standardize, cfg.engine.naive_mode)?;
    let dir = &cfg.output_dir;
    let mut log = ProgressLog::create(&dir.join("progress.jsonl"))?;
    let mut log_error = None;
    let mut progress = |rec: &GenerationRecord| {
        if !quiet {
            eprintln!(
                "generation {:>3}  tolerance {:.5}  acceptance {:.3}  calls {}",
                rec.generation, rec.tolerance, rec.acceptance_rate, rec.simulator_calls
            );
        }
        if let Err(e) = log.record(rec) {
            log_error.get_or_insert(e);
        }
    };
    let post = run_abc_smc_with_progress(
        &cfg.prior(),
        &model,
        &disc,
        data.len(),
        &cfg.smc_config(),
        &mut progress,
    )?;
    if let Some(e) = log_error {
        return Err(e.context("writing progress log"));
    }

    let posterior_path = dir.join("posterior.csv");
    io::write_posterior(&posterior_path, &post, cfg)?;
    io::write_history(&dir.join("history.csv"), &post.history, cfg)?;
    let mean = post.population.weighted_mean()?;
    Ok(InferSummary {
        method: cfg.engine.distance,
        generations: post.history.len(),
        particles: post.population.len(),
        tolerance: post.population.tolerance,
        simulator_calls: post.simulator_calls,
        elapsed_secs: post.elapsed.as_secs_f64(),
        posterior_mean: cfg.names().into_iter().zip(mean.iter().copied()).collect(),
        posterior_path,
    })
}

pub struct CellResult {
    pub cell: Cell,
    pub outcome: Result<MacroReplicationReport64, String>,
}

pub struct ExperimentSummary {
    pub cells: Vec<CellResult>,
    pub output_dir: PathBuf,
}

impl ExperimentSummary {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.outcome.is_err()).count()
    }
}

impl fmt::Display for ExperimentSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>5} {:>4}  {:>15}  {:>15}  {:>15}",
            "v", "m", "ratio C", "K-S(I) aux", "K-S(I) naive"
        )?;
        for c in &self.cells {
            match &c.outcome {
                Ok(rep) => {
                    let ci = |r: auxabc::Result<ConfidenceInterval>| {
                        r.map(|ci| format!("{:.3}+/-{:.3}", ci.mean, ci.half_width))
                            .unwrap_or_else(|_| "n/a".into())
                    };
                    writeln!(
                        f,
                        "{:>5} {:>4}  {:>15}  {:>15}  {:>15}",
                        c.cell.noise,
                        c.cell.batches,
                        ci(rep.ratio_ci()),
                        ci(rep.ks_ci(DistanceKind::Auxiliary, StateColumn::Inhibitor)),
                        ci(rep.ks_ci(DistanceKind::Naive, StateColumn::Inhibitor)),
                    )?;
                }
                Err(e) => writeln!(f, "{:>5} {:>4}  FAILED: {e}", c.cell.noise, c.cell.batches)?,
            }
        }
        write!(
            f,
            "{} of {} cells failed; results in {}",
            self.failed_cells(),
            self.cells.len(),
            self.output_dir.display()
        )
    }
}

pub fn macro_config(cfg: &ExperimentConfig, cell: Cell) -> MacroConfig64 {
    let mut truth = cfg.truth();
    truth.v_rho = cell.noise;
    truth.v_i = cell.noise;
    MacroConfig64 {
        model: cfg.model(),
        truth,
        prior: cfg.prior(),
        batches: cell.batches,
        engine: cfg.smc_config(),
        standardize: cfg.engine.standardize,
        naive_mode: cfg.engine.naive_mode,
        weighting: cfg.experiment.weighting,
        predictive_samples: cfg.experiment.predictive_samples,
        target_t: cfg.experiment.target_t,
        replications: cfg.experiment.macro_replications,
        seed: cfg.seed,
    }
}

/// File name of a cell's predictive dump.
pub fn predictive_file(cell: Cell) -> String {
    format!("v{}_m{}.csv", cell.noise, cell.batches)
}

/// Runs every grid cell, isolating failures, and writes the report tree:
/// `replications.csv`, `ratio_table.csv`, `ks_table.csv`, `failures.csv`
/// and `predictive/<cell>.csv`.
pub fn experiment(cfg: &ExperimentConfig, quiet: bool) -> Result<ExperimentSummary> {
    let dir = &cfg.output_dir;
    let mut cells = Vec::new();
    for cell in cfg.cells() {
        if !quiet {
            eprintln!(
                "cell v={} m={}: {} macro-replications",
                cell.noise, cell.batches, cfg.experiment.macro_replications
            );
        }
        let outcome = run_macro_replications(&macro_config(cfg, cell)).map_err(|e| e.to_string());
        if !quiet {
            match &outcome {
                Ok(rep) => eprintln!("  done: {} replications", rep.records.len()),
                Err(e) => eprintln!("  failed: {e}"),
            }
        }
        if let Ok(rep) = &outcome {
            write_predictive(&dir.join("predictive").join(predictive_file(cell)), rep, cfg)?;
        }
        cells.push(CellResult { cell, outcome });
    }
    write_replications(&dir.join("replications.csv"), &cells, cfg)?;
    write_ratio_table(&dir.join("ratio_table.csv"), &cells, cfg)?;
    write_ks_table(&dir.join("ks_table.csv"), &cells, cfg)?;
    write_failures(&dir.join("failures.csv"), &cells, cfg)?;
    Ok(ExperimentSummary {
        cells,
        output_dir: dir.clone(),
    })
}

fn write_replications(path: &Path, cells: &[CellResult], cfg: &ExperimentConfig) -> Result<()> {
    let mut out = io::create(path)?;
    io::write_header(&mut out, cfg)?;
    writeln!(out, "method,v,m,replication,ks_rho,ks_I,runtime_s,ratio")?;
    for c in cells {
        let Ok(rep) = &c.outcome else { continue };
        for rec in &rep.records {
            for (kind, o) in [(DistanceKind::Auxiliary, &rec.auxiliary), (DistanceKind::Naive, &rec.naive)] {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    kind.as_str(),
                    c.cell.noise,
                    c.cell.batches,
                    rec.replication,
                    o.ks_rho,
                    o.ks_inhibitor,
                    o.runtime_secs,
                    rec.ratio
                )?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn ci_fields(ci: &ConfidenceInterval) -> String {
    format!("{},{},{},{}", ci.mean, ci.half_width, ci.low(), ci.high())
}

fn write_ratio_table(path: &Path, cells: &[CellResult], cfg: &ExperimentConfig) -> Result<()> {
    let mut out = io::create(path)?;
    io::write_header(&mut out, cfg)?;
    writeln!(out, "v,m,mean,half_width,low,high,replications")?;
    for c in cells {
        let Ok(rep) = &c.outcome else { continue };
        let ci = rep.ratio_ci().context("ratio confidence interval")?;
        writeln!(out, "{},{},{},{}", c.cell.noise, c.cell.batches, ci_fields(&ci), ci.count)?;
    }
    out.flush()?;
    Ok(())
}

fn write_ks_table(path: &Path, cells: &[CellResult], cfg: &ExperimentConfig) -> Result<()> {
    let mut out = io::create(path)?;
    io::write_header(&mut out, cfg)?;
    writeln!(
        out,
        "v,m,state,auxiliary_mean,auxiliary_half_width,auxiliary_low,auxiliary_high,\
         naive_mean,naive_half_width,naive_low,naive_high,replications"
    )?;
    for c in cells {
        let Ok(rep) = &c.outcome else { continue };
        for (state, label) in [(StateColumn::Density, "rho"), (StateColumn::Inhibitor, "I")] {
            let aux = rep.ks_ci(DistanceKind::Auxiliary, state).context("K-S confidence interval")?;
            let naive = rep.ks_ci(DistanceKind::Naive, state).context("K-S confidence interval")?;
            writeln!(
                out,
                "{},{},{label},{},{},{}",
                c.cell.noise,
                c.cell.batches,
                ci_fields(&aux),
                ci_fields(&naive),
                aux.count
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

fn write_failures(path: &Path, cells: &[CellResult], cfg: &ExperimentConfig) -> Result<()> {
    let mut out = io::create(path)?;
    io::write_header(&mut out, cfg)?;
    let mut w = csv::Writer::from_writer(&mut out);
    w.write_record(["v", "m", "replication", "error"])?;
    for c in cells {
        let (v, m) = (c.cell.noise.to_string(), c.cell.batches.to_string());
        match &c.outcome {
            Err(e) => w.write_record([v.as_str(), &m, "", e])?,
            Ok(rep) => {
                for (r, e) in &rep.failures {
                    w.write_record([v.as_str(), &m, &r.to_string(), e])?;
                }
            }
        }
    }
    w.flush()?;
    drop(w);
    out.flush()?;
    Ok(())
}

/// Predictive draws at the target time from the first completed
/// replication: the true model, then each method.
fn write_predictive(path: &Path, rep: &MacroReplicationReport64, cfg: &ExperimentConfig) -> Result<()> {
    let Some(rec) = rep.records.first() else {
        return Ok(());
    };
    let t = cfg.experiment.target_t;
    let mut out = io::create(path)?;
    io::write_header(&mut out, cfg)?;
    writeln!(out, "# replication: {}", rec.replication)?;
    writeln!(out, "sample_index,rho_{t},I_{t},source")?;
    let mut dump = |sample: &PredictiveSample<f64>| -> Result<()> {
        for (i, row) in sample.values.row_iter().enumerate() {
            writeln!(out, "{i},{},{},{}", row[0], row[1], sample.source.label())?;
        }
        Ok(())
    };
    dump(&rec.truth)?;
    dump(&rec.auxiliary.predictive)?;
    dump(&rec.naive.predictive)?;
    out.flush()?;
    Ok(())
}
