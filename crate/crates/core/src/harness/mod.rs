//! Sequential-design driver, benchmark matrix, metrics and persistence.

pub mod config;
pub mod design;
pub mod experiment;
pub mod metrics;
pub mod persist;
pub mod rng;

use std::path::Path;

pub use config::ExperimentConfig;
pub use experiment::{
    run_experiment, run_replicate, ExperimentSetup, ReplicateRun, StageRecord, TruthTable,
};

use crate::error::{Error, Result};
use persist::{CellInfo, Manifest};

/// Summary of a persisted batch of runs.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub runs: Vec<ReplicateRun>,
}

impl RunSummary {
    pub fn any_aborted(&self) -> bool {
        self.runs.iter().any(|r| r.aborted.is_some())
    }
}

fn load_table(cfg: &ExperimentConfig) -> Result<Option<TruthTable>> {
    cfg.truth_table
        .as_ref()
        .map(|p| {
            let f = std::fs::File::open(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            persist::read_truth(std::io::BufReader::new(f))
        })
        .transpose()
}

/// Run the (method, b) cells for every replicate and persist them under `outdir`.
///
/// Within a replicate every cell shares the observed data and the initial design.
fn execute(
    mode: &str,
    cfg: &ExperimentConfig,
    cells: &[(crate::acquisition::Method, usize)],
    outdir: &Path,
) -> Result<RunSummary> {
    let setup = ExperimentSetup::with_table(cfg, load_table(cfg)?)?;
    let mut manifest = Manifest::new(mode, cfg.clone());
    let mut runs = Vec::new();
    for r in 0..cfg.replicates {
        let ctx = setup.replicate(cfg, r)?;
        for &(method, b) in cells {
            let cell_cfg = cfg.cell(method, b)?;
            log::info!("{method} b={b} replicate {r}");
            let run = run_replicate(&cell_cfg, &setup, &ctx);
            let dir = CellInfo::dir_name(method, b, r);
            persist::write_run(&outdir.join(&dir), &run, setup.spec.p())?;
            manifest.cells.push(CellInfo {
                dir,
                method,
                b,
                stages: cell_cfg.stages,
                replicate: r,
                seed: ctx.seed,
                aborted: run.aborted.clone(),
            });
            runs.push(run);
        }
    }
    manifest.write(outdir)?;
    Ok(RunSummary { manifest, runs })
}

/// Execute a single configuration.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    execute("run", cfg, &[(cfg.method, cfg.b)], &cfg.outdir)
}

/// Cross product of `cfg.methods` and `cfg.batch_sizes`, same total budget per cell.
pub fn bench(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let cells: Vec<_> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.batch_sizes.iter().map(move |&b| (m, b)))
        .collect();
    execute("bench", cfg, &cells, &cfg.outdir)
}

/// First stage at which a replayed cell differs from its persisted records.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayMismatch {
    pub cell: String,
    pub stage: Option<usize>,
}

/// Re-execute a persisted run or benchmark into `scratch` and compare every
/// stage record (wall-clock time excluded) with what is on disk.
pub fn replay(dir: &Path, scratch: &Path) -> Result<Vec<ReplayMismatch>> {
    let manifest = Manifest::read(dir)?;
    let mut cfg = manifest.config.clone();
    cfg.outdir = scratch.to_path_buf();
    let fresh = match manifest.mode.as_str() {
        "run" => run(&cfg)?,
        "bench" => bench(&cfg)?,
        m => return Err(Error::Config(format!("unknown manifest mode {m:?}"))),
    };
    let mut mismatches = Vec::new();
    for (cell, run) in manifest.cells.iter().zip(&fresh.runs) {
        let stored = persist::load_records(&dir.join(&cell.dir))?;
        let first_bad = (0..stored.len().max(run.records.len())).find(|&i| {
            match (stored.get(i), run.records.get(i)) {
                (Some(a), Some(b)) => !a.same_outcome(b),
                _ => true,
            }
        });
        if first_bad.is_some() {
            mismatches.push(ReplayMismatch {
                cell: cell.dir.clone(),
                stage: first_bad,
            });
        }
    }
    if manifest.cells.len() != fresh.runs.len() {
        mismatches.push(ReplayMismatch {
            cell: "manifest".into(),
            stage: None,
        });
    }
    Ok(mismatches)
}

/// Metrics recomputed from a persisted evaluation log.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub cell: String,
    pub stage: usize,
    pub evaluations: usize,
    pub mad: f64,
    pub ivar: f64,
}

/// Refit the emulator on every stage's dataset, rebuilt from the evaluation
/// logs under `dir`, and recompute MAD and integrated posterior variance.
pub fn score(dir: &Path) -> Result<Vec<ScoreRow>> {
    let manifest = Manifest::read(dir)?;
    let cfg = &manifest.config;
    let setup = ExperimentSetup::with_table(cfg, load_table(cfg)?)?;
    let mut rows = Vec::new();
    for cell in &manifest.cells {
        let ctx = setup.replicate(cfg, cell.replicate)?;
        let cell_cfg = cfg.cell(cell.method, cell.b)?;
        let evals = persist::load_evaluations(&dir.join(&cell.dir))?;
        for (t, data) in persist::datasets_by_stage(&evals, setup.spec.p(), setup.spec.d())?
            .iter()
            .enumerate()
        {
            let model = experiment::fit_stage(data, &cell_cfg, ctx.seed, t, None)?;
            let field = crate::posterior::posterior_field(&model, &ctx.obs, &setup.reference)?;
            rows.push(ScoreRow {
                cell: cell.dir.clone(),
                stage: t,
                evaluations: data.total_evaluations(),
                mad: metrics::mad(&field.mean, &ctx.truth)?,
                ivar: crate::linalg::pairwise_mean(&field.variance),
            });
        }
    }
    Ok(rows)
}
