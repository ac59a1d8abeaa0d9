use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stochcal::acquisition::Method;
use stochcal::harness::design::ReferenceSpec;
use stochcal::harness::experiment::expected_output_table;
use stochcal::harness::rng::{stream, StreamTag};
use stochcal::harness::{self, persist, ExperimentConfig};
use stochcal::simulators::SimulatorKind;
use stochcal::Error;

/// Batch-sequential calibration experiments for stochastic simulators.
#[derive(Parser)]
#[command(name = "stochcal", version)]
struct Cli {
    /// Worker threads (overridden by STOCHCAL_WORKERS; default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one configuration.
    Run(ConfigArgs),
    /// Run every method and batch size for every replicate.
    Bench(ConfigArgs),
    /// Precompute expected outputs over the reference set.
    Truth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output file for the table.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute per-stage metrics from a persisted run directory.
    Score { dir: PathBuf },
    /// Re-execute a persisted run and compare every stage record.
    Replay {
        dir: PathBuf,
        /// Where to write the re-executed run (default: <dir>/replay).
        #[arg(long)]
        scratch: Option<PathBuf>,
    },
}

/// Config file plus flags that override its keys.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    simulator: Option<SimulatorKind>,
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long)]
    reps0: Option<usize>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long = "T_b", alias = "stages")]
    stages: Option<usize>,
    #[arg(long)]
    a_breve: Option<usize>,
    #[arg(long)]
    b_breve: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long = "ref")]
    reference: Option<ReferenceSpec>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    outdir: Option<PathBuf>,
    #[arg(long)]
    truth_table: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> stochcal::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() { cfg.$field = v; }
            )*};
        }
        set!(
            simulator, n0, reps0, b, stages, a_breve, candidates, method, replicates, seed, outdir
        );
        if self.b_breve.is_some() {
            cfg.b_breve = self.b_breve;
        }
        if self.reference.is_some() {
            cfg.reference = self.reference;
        }
        if self.truth_table.is_some() {
            cfg.truth_table = self.truth_table.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Numerical(_) | Error::Singular { .. } | Error::FitFailed(_) => ExitCode::from(3),
        _ => ExitCode::from(2),
    }
}

fn init_workers(flag: Option<usize>) -> stochcal::Result<()> {
    let env = std::env::var("STOCHCAL_WORKERS").ok();
    let workers = match env {
        Some(v) => Some(v.trim().parse::<usize>().map_err(|_| {
            Error::Config(format!("STOCHCAL_WORKERS must be an integer, got {v:?}"))
        })?),
        None => flag,
    };
    if let Some(n) = workers.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn report(summary: &harness::RunSummary) -> ExitCode {
    for (cell, run) in summary.manifest.cells.iter().zip(&summary.runs) {
        match run.records.last() {
            Some(r) => println!(
                "{}\tstage {}\tevaluations {}\tMAD {:.6e}",
                cell.dir, r.stage, r.evaluations, r.mad
            ),
            None => println!("{}\tno stages completed", cell.dir),
        }
        if let Some(msg) = &run.aborted {
            eprintln!("{}: aborted: {msg}", cell.dir);
        }
    }
    if summary.any_aborted() {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}

fn execute(cli: Cli) -> stochcal::Result<ExitCode> {
    init_workers(cli.workers)?;
    match cli.command {
        Command::Run(args) => Ok(report(&harness::run(&args.resolve()?)?)),
        Command::Bench(args) => Ok(report(&harness::bench(&args.resolve()?)?)),
        Command::Truth { cfg, out } => {
            let cfg = cfg.resolve()?;
            let spec = cfg.simulator_spec();
            let reference = harness::design::make_reference_set(
                cfg.reference_spec(),
                spec.p(),
                &mut stream(cfg.seed, StreamTag::Reference, 0, 0),
            );
            let table = expected_output_table(&spec, &reference, cfg.truth_reps, cfg.seed)?;
            persist::write_truth(
                &table,
                std::io::BufWriter::new(std::fs::File::create(&out)?),
            )?;
            println!(
                "wrote {} reference points to {}",
                reference.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Score { dir } => {
            println!("cell\tstage\tevaluations\tmad\tivar");
            for r in harness::score(&dir)? {
                println!(
                    "{}\t{}\t{}\t{}\t{}",
                    r.cell, r.stage, r.evaluations, r.mad, r.ivar
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { dir, scratch } => {
            let scratch = scratch.unwrap_or_else(|| dir.join("replay"));
            let bad = harness::replay(&dir, &scratch)?;
            if bad.is_empty() {
                println!("replay identical");
                Ok(ExitCode::SUCCESS)
            } else {
                for m in &bad {
                    eprintln!("mismatch in {} at stage {:?}", m.cell, m.stage);
                }
                Ok(ExitCode::from(1))
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
