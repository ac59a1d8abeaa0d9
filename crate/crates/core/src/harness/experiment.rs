use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::design::{latin_hypercube, make_initial_design, make_reference_set};
use super::metrics::{interval_score, mad};
use super::rng::{derive_seed, stream, StreamTag};
use crate::acquisition::{
    build_exploration_batch, imse_replication_batch, ivar_replication_batch, select_strategy,
    AcquisitionBatch, ExplorationConfig, ExplorationCriterion, Method,
};
use crate::emulator::{fit, FitConfig, HetGpModel, Hyperparameters, SimulationDataset};
use crate::error::{Error, Result};
use crate::linalg::pairwise_mean;
use crate::posterior::{
    posterior_field, true_unnormalized_posterior, ObservationModel, PosteriorField,
};
use crate::simulators::{generate_observed_data, SimulatorSpec};

/// Parameters and replicate counts evaluated in one stage.
pub type BatchContents = Vec<(Vec<f64>, usize)>;

/// Metrics after one stage of the sequential design.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: usize,
    /// `init`, `replicate`, `explore` or `uniform`.
    pub strategy: String,
    pub batch: BatchContents,
    pub mad: f64,
    /// Per parameter dimension; NaN before anything was acquired.
    pub interval_scores: Vec<f64>,
    pub ivar: f64,
    pub acquisition_seconds: f64,
    pub evaluations: usize,
}

impl StageRecord {
    /// Bitwise equality of everything except wall-clock time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let eq = |a: f64, b: f64| a.to_bits() == b.to_bits();
        self.stage == other.stage
            && self.strategy == other.strategy
            && self.evaluations == other.evaluations
            && eq(self.mad, other.mad)
            && eq(self.ivar, other.ivar)
            && self.interval_scores.len() == other.interval_scores.len()
            && self
                .interval_scores
                .iter()
                .zip(&other.interval_scores)
                .all(|(a, b)| eq(*a, *b))
            && self.batch.len() == other.batch.len()
            && self
                .batch
                .iter()
                .zip(&other.batch)
                .all(|((ta, na), (tb, nb))| {
                    na == nb && ta.len() == tb.len() && ta.iter().zip(tb).all(|(a, b)| eq(*a, *b))
                })
    }
}

/// Per-stage diagnostics written to the trace sidecar.
#[derive(Debug, Clone, PartialEq)]
pub struct StageTrace {
    pub stage: usize,
    pub replication_ivar: Option<f64>,
    pub exploration_ivar: Option<f64>,
    /// Optimizer objective trace per output coordinate.
    pub likelihood: Vec<Vec<f64>>,
}

/// One simulator run, in the order it was evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub stage: usize,
    pub slot: usize,
    pub theta: Vec<f64>,
    pub outputs: Vec<f64>,
}

/// Expected simulator output over the reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub reference: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
}

/// Expected outputs at every reference point: closed form for the synthetic
/// models, otherwise the mean of `n_reps` runs on a per-point stream.
pub fn expected_output_table(
    spec: &SimulatorSpec,
    reference: &[Vec<f64>],
    n_reps: usize,
    seed: u64,
) -> Result<TruthTable> {
    let eta = reference
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            spec.expected_output(t, n_reps, &mut stream(seed, StreamTag::Truth, 0, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TruthTable {
        reference: reference.to_vec(),
        eta,
    })
}

/// True unnormalized posterior at each point of a truth table.
pub fn posterior_from_table(table: &TruthTable, obs: &ObservationModel) -> Result<Vec<f64>> {
    table
        .reference
        .iter()
        .zip(&table.eta)
        .map(|(t, e)| true_unnormalized_posterior(e, obs, t))
        .collect()
}

pub fn true_posterior_table(
    spec: &SimulatorSpec,
    obs: &ObservationModel,
    reference: &[Vec<f64>],
    n_reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    posterior_from_table(&expected_output_table(spec, reference, n_reps, seed)?, obs)
}

/// State shared by every method within one experiment replicate.
#[derive(Debug, Clone)]
pub struct ReplicateContext {
    pub replicate: usize,
    pub seed: u64,
    pub obs: ObservationModel,
    pub initial: SimulationDataset,
    pub initial_evaluations: Vec<Evaluation>,
    pub truth: Vec<f64>,
    /// Reference point maximizing the true posterior.
    pub theta_hat: Vec<f64>,
}

/// Everything a benchmark needs that does not depend on the replicate.
#[derive(Debug, Clone)]
pub struct ExperimentSetup {
    pub spec: SimulatorSpec,
    pub reference: Vec<Vec<f64>>,
    pub table: TruthTable,
}

impl ExperimentSetup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Self::with_table(cfg, None)
    }

    /// Use `table` for the expected outputs when given; its reference points
    /// then define the reference set.
    pub fn with_table(cfg: &ExperimentConfig, table: Option<TruthTable>) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.simulator_spec();
        let table = match table {
            Some(t) => {
                if t.reference.first().is_some_and(|r| r.len() != spec.p())
                    || t.eta.first().is_some_and(|e| e.len() != spec.d())
                {
                    return Err(Error::Config(
                        "truth table does not match the simulator dimensions".into(),
                    ));
                }
                t
            }
            None => {
                let reference = make_reference_set(
                    cfg.reference_spec(),
                    spec.p(),
                    &mut stream(cfg.seed, StreamTag::Reference, 0, 0),
                );
                expected_output_table(&spec, &reference, cfg.truth_reps, cfg.seed)?
            }
        };
        if table.reference.is_empty() {
            return Err(Error::Config("reference set is empty".into()));
        }
        Ok(Self {
            spec,
            reference: table.reference.clone(),
            table,
        })
    }

    /// Observed data, initial design and its simulations for replicate `r`.
    pub fn replicate(&self, cfg: &ExperimentConfig, r: usize) -> Result<ReplicateContext> {
        let seed = derive_seed(cfg.seed, r as u64);
        let obs = generate_observed_data(
            &self.spec,
            None,
            &mut stream(seed, StreamTag::Observed, 0, 0),
            cfg.mean_reps,
        )?;
        let design = make_initial_design(
            cfg.n0,
            cfg.reps0,
            self.spec.p(),
            &mut stream(seed, StreamTag::InitialDesign, 0, 0),
        )?;
        let batch: BatchContents = design
            .params
            .iter()
            .map(|t| (t.clone(), design.reps))
            .collect();
        let evals = evaluate(&self.spec, &batch, seed, 0);
        let mut initial = SimulationDataset::new(self.spec.p(), self.spec.d())?;
        absorb(&mut initial, &evals)?;
        let truth = posterior_from_table(&self.table, &obs)?;
        let mut best = 0;
        for (i, v) in truth.iter().enumerate() {
            if v.total_cmp(&truth[best]).is_gt() {
                best = i;
            }
        }
        Ok(ReplicateContext {
            replicate: r,
            seed,
            obs,
            initial,
            initial_evaluations: evals,
            truth,
            theta_hat: self.reference[best].clone(),
        })
    }
}

/// Run every entry of `batch` on its own stream `(seed, stage, slot)`.
fn evaluate(
    spec: &SimulatorSpec,
    batch: &BatchContents,
    seed: u64,
    stage: usize,
) -> Vec<Evaluation> {
    let jobs: Vec<&Vec<f64>> = batch
        .iter()
        .flat_map(|(t, n)| std::iter::repeat_n(t, *n))
        .collect();
    jobs.par_iter()
        .enumerate()
        .map(|(slot, t)| Evaluation {
            stage,
            slot,
            theta: (*t).clone(),
            outputs: spec
                .simulate(
                    t,
                    &mut stream(seed, StreamTag::Simulation, stage as u64, slot as u64),
                )
                .values,
        })
        .collect()
}

/// Add evaluations to the dataset in slot order.
pub fn absorb(data: &mut SimulationDataset, evals: &[Evaluation]) -> Result<()> {
    let mut k = 0;
    while k < evals.len() {
        let mut end = k + 1;
        while end < evals.len() && evals[end].theta == evals[k].theta {
            end += 1;
        }
        data.push(
            &evals[k].theta,
            evals[k..end].iter().map(|e| e.outputs.clone()).collect(),
        )?;
        k = end;
    }
    Ok(())
}

/// Up-front space-filling plan for the uniform baseline: `budget / 4` points
/// with four replicates each, consumed `b` evaluations per stage.
fn uniform_plan(cfg: &ExperimentConfig, p: usize, seed: u64) -> Vec<Vec<f64>> {
    const REPS: usize = 4;
    let points = cfg.budget().div_ceil(REPS);
    let lhs = latin_hypercube(points, p, &mut stream(seed, StreamTag::Uniform, 0, 0));
    lhs.into_iter()
        .flat_map(|t| std::iter::repeat_n(t, REPS))
        .take(cfg.budget())
        .collect()
}

fn group_runs(evals: &[Vec<f64>]) -> BatchContents {
    let mut out: BatchContents = Vec::new();
    for t in evals {
        match out.last_mut() {
            Some((last, n)) if last == t => *n += 1,
            _ => out.push((t.clone(), 1)),
        }
    }
    out
}

fn fit_config(
    cfg: &ExperimentConfig,
    seed: u64,
    stage: usize,
    warm: Option<&Vec<Hyperparameters>>,
) -> FitConfig {
    let fit_seed = stream(seed, StreamTag::Fit, stage as u64, 0).random();
    let warm = warm.filter(|_| cfg.warm_start).cloned();
    FitConfig {
        restarts: if warm.is_some() { 1 } else { cfg.restarts },
        seed: fit_seed,
        max_iter: cfg.max_iter,
        warm_start: warm,
        ..FitConfig::default()
    }
}

/// Fit with the stage's settings, falling back to a cold fit with more
/// restarts when the first attempt fails.
pub(crate) fn fit_stage(
    data: &SimulationDataset,
    cfg: &ExperimentConfig,
    seed: u64,
    stage: usize,
    warm: Option<&Vec<Hyperparameters>>,
) -> Result<HetGpModel> {
    let first = fit_config(cfg, seed, stage, warm);
    match fit(data, &first) {
        Ok(m) => Ok(m),
        Err(e) => {
            log::warn!("stage {stage}: emulator fit failed ({e}); retrying cold");
            let retry = FitConfig {
                restarts: 2 * cfg.restarts.max(1),
                warm_start: None,
                seed: first.seed.wrapping_add(1),
                ..first
            };
            fit(data, &retry)
        }
    }
}

/// Outcome of one (method, b, replicate) cell.
#[derive(Debug, Clone)]
pub struct ReplicateRun {
    pub records: Vec<StageRecord>,
    pub traces: Vec<StageTrace>,
    pub evaluations: Vec<Evaluation>,
    pub dataset: SimulationDataset,
    /// Hyperparameters of the last successful fit.
    pub hyperparameters: Vec<Hyperparameters>,
    /// Posterior fields per stage, kept only when requested.
    pub fields: Vec<PosteriorField>,
    /// Set when the run stopped early; records up to the failure are kept.
    pub aborted: Option<String>,
}

fn acquired_scores(acquired: &[(Vec<f64>, usize)], theta_hat: &[f64], alpha: f64) -> Vec<f64> {
    (0..theta_hat.len())
        .map(|k| {
            let vals: Vec<f64> = acquired
                .iter()
                .flat_map(|(t, n)| std::iter::repeat_n(t[k], *n))
                .collect();
            interval_score(&vals, theta_hat[k], alpha).unwrap_or(f64::NAN)
        })
        .collect()
}

fn batch_contents(batch: &AcquisitionBatch, model: &HetGpModel) -> BatchContents {
    match batch {
        AcquisitionBatch::Replicate(a) => a
            .delta
            .iter()
            .enumerate()
            .filter(|(_, d)| **d > 0)
            .map(|(i, d)| (model.design()[i].clone(), *d))
            .collect(),
        AcquisitionBatch::Explore(e) => e
            .new_params
            .iter()
            .map(|t| (t.clone(), e.reps_each))
            .collect(),
    }
}

/// Algorithm driver for one cell: fit, score, acquire, simulate, repeat.
pub fn run_replicate(
    cfg: &ExperimentConfig,
    setup: &ExperimentSetup,
    ctx: &ReplicateContext,
) -> ReplicateRun {
    let mut run = ReplicateRun {
        records: Vec::with_capacity(cfg.stages + 1),
        traces: Vec::with_capacity(cfg.stages + 1),
        evaluations: ctx.initial_evaluations.clone(),
        dataset: ctx.initial.clone(),
        hyperparameters: Vec::new(),
        fields: Vec::new(),
        aborted: None,
    };
    if let Err(e) = drive(cfg, setup, ctx, &mut run) {
        log::error!(
            "{} b={} replicate {}: {e}",
            cfg.method,
            cfg.b,
            ctx.replicate
        );
        run.aborted = Some(e.to_string());
    }
    run
}

fn drive(
    cfg: &ExperimentConfig,
    setup: &ExperimentSetup,
    ctx: &ReplicateContext,
    run: &mut ReplicateRun,
) -> Result<()> {
    let reference = &setup.reference;
    let plan = (cfg.method == Method::Unif).then(|| uniform_plan(cfg, setup.spec.p(), ctx.seed));
    let mut acquired: BatchContents = Vec::new();
    let mut pending: (String, BatchContents, f64, Option<f64>, Option<f64>) =
        ("init".into(), Vec::new(), 0.0, None, None);
    let mut warm: Option<Vec<Hyperparameters>> = None;
    for t in 0..=cfg.stages {
        let model = fit_stage(&run.dataset, cfg, ctx.seed, t, warm.as_ref())?;
        let field = posterior_field(&model, &ctx.obs, reference)?;
        let (strategy, batch, secs, rep_ivar, exp_ivar) = std::mem::take(&mut pending);
        run.records.push(StageRecord {
            stage: t,
            strategy,
            batch,
            mad: mad(&field.mean, &ctx.truth)?,
            interval_scores: acquired_scores(&acquired, &ctx.theta_hat, cfg.alpha),
            ivar: pairwise_mean(&field.variance),
            acquisition_seconds: secs,
            evaluations: run.dataset.total_evaluations(),
        });
        run.traces.push(StageTrace {
            stage: t,
            replication_ivar: rep_ivar,
            exploration_ivar: exp_ivar,
            likelihood: model
                .coordinates()
                .iter()
                .map(|c| c.likelihood_trace().to_vec())
                .collect(),
        });
        if cfg.dump_fields {
            run.fields.push(field);
        }
        run.hyperparameters = model
            .coordinates()
            .iter()
            .map(|c| c.hyperparameters().clone())
            .collect();
        warm = Some(run.hyperparameters.clone());
        if t == cfg.stages {
            break;
        }

        let start = Instant::now();
        let (label, contents, rep_ivar, exp_ivar) = match &plan {
            Some(plan) => (
                "uniform".to_owned(),
                group_runs(&plan[t * cfg.b..(t + 1) * cfg.b]),
                None,
                None,
            ),
            None => {
                let replication = match cfg.method {
                    Method::Imse => imse_replication_batch(&model, reference, cfg.b)?,
                    _ => ivar_replication_batch(&model, &ctx.obs, reference, cfg.b)?,
                };
                let criterion = match cfg.method {
                    Method::Var => ExplorationCriterion::Var,
                    Method::Imse => ExplorationCriterion::Imse,
                    _ => ExplorationCriterion::Ivar,
                };
                let ecfg = ExplorationConfig {
                    b_breve: cfg.b_breve(),
                    a_breve: cfg.a_breve,
                    candidates: cfg.candidates,
                    criterion,
                };
                let mut crng = stream(ctx.seed, StreamTag::Candidates, t as u64, 0);
                let exploration =
                    build_exploration_batch(&model, &ctx.obs, reference, &ecfg, &mut crng)?;
                let choice =
                    select_strategy(replication, exploration, &model, &ctx.obs, reference)?;
                let contents = batch_contents(&choice.batch, &model);
                (
                    choice.batch.label().to_owned(),
                    contents,
                    Some(choice.replication_ivar),
                    Some(choice.exploration_ivar),
                )
            }
        };
        let secs = start.elapsed().as_secs_f64();
        let total: usize = contents.iter().map(|(_, n)| n).sum();
        if total != cfg.b {
            return Err(Error::Numerical(format!(
                "stage {} batch holds {total} evaluations, expected {}",
                t + 1,
                cfg.b
            )));
        }
        let evals = evaluate(&setup.spec, &contents, ctx.seed, t + 1);
        absorb(&mut run.dataset, &evals)?;
        run.evaluations.extend(evals);
        acquired.extend(contents.iter().cloned());
        pending = (label, contents, secs, rep_ivar, exp_ivar);
    }
    Ok(())
}

/// Run all replicates of one configuration.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ReplicateRun>> {
    let setup = ExperimentSetup::new(cfg)?;
    (0..cfg.replicates)
        .map(|r| Ok(run_replicate(cfg, &setup, &setup.replicate(cfg, r)?)))
        .collect()
}
