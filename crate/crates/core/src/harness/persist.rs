//! On-disk layout of experiment results.
//!
//! Each cell of the benchmark matrix gets its own directory holding the stage
//! records, a trace sidecar, the evaluation log, the final dataset and model.
//! A manifest at the top level echoes the configuration for replay.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{BatchContents, Evaluation, ReplicateRun, StageRecord, TruthTable};
use crate::acquisition::Method;
use crate::emulator::io::{write_dataset, write_model};
use crate::emulator::{model_from_hyperparameters, SimulationDataset};
use crate::error::{Error, Result};
use crate::posterior::write_field;

pub const RECORDS_FILE: &str = "records.tsv";
pub const TRACES_FILE: &str = "traces.tsv";
pub const EVALUATIONS_FILE: &str = "evaluations.tsv";
pub const DATASET_FILE: &str = "dataset.tsv";
pub const MODEL_FILE: &str = "model.txt";
pub const MANIFEST_FILE: &str = "manifest.toml";

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn join(xs: &[f64], sep: &str) -> String {
    xs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

fn parse_floats(s: &str, sep: char, line: usize) -> Result<Vec<f64>> {
    s.split(sep)
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| parse_err(line, format!("bad number {t:?}: {e}")))
        })
        .collect()
}

/// One (method, b, replicate) entry of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellInfo {
    pub dir: String,
    pub method: Method,
    pub b: usize,
    pub stages: usize,
    pub replicate: usize,
    pub seed: u64,
    pub aborted: Option<String>,
}

impl CellInfo {
    pub fn dir_name(method: Method, b: usize, replicate: usize) -> String {
        format!("{}_b{b}_r{replicate}", method.as_str().to_ascii_lowercase())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// `run` or `bench`.
    pub mode: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub cells: Vec<CellInfo>,
}

impl Manifest {
    pub fn new(mode: &str, config: ExperimentConfig) -> Self {
        Self {
            mode: mode.to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            config,
            cells: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn format_batch(batch: &BatchContents) -> String {
    if batch.is_empty() {
        return "-".into();
    }
    batch
        .iter()
        .map(|(t, n)| format!("{}*{n}", join(t, ",")))
        .collect::<Vec<_>>()
        .join(";")
}

fn parse_batch(s: &str, line: usize) -> Result<BatchContents> {
    if s == "-" {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|entry| {
            let (t, n) = entry
                .split_once('*')
                .ok_or_else(|| parse_err(line, format!("bad batch entry {entry:?}")))?;
            let n = n
                .parse::<usize>()
                .map_err(|e| parse_err(line, e.to_string()))?;
            Ok((parse_floats(t, ',', line)?, n))
        })
        .collect()
}

pub fn write_records<W: Write>(records: &[StageRecord], p: usize, mut w: W) -> Result<()> {
    let scores: Vec<String> = (1..=p).map(|k| format!("interval_{k}")).collect();
    writeln!(
        w,
        "stage\tstrategy\tevaluations\tmad\tivar\tacq_seconds\t{}\tbatch",
        scores.join("\t")
    )?;
    for r in records {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.stage,
            r.strategy,
            r.evaluations,
            r.mad,
            r.ivar,
            r.acquisition_seconds,
            join(&r.interval_scores, "\t"),
            format_batch(&r.batch)
        )?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<StageRecord>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty records file"))??;
    let cols = header.split('\t').count();
    if cols < 7 {
        return Err(parse_err(1, "records header too short"));
    }
    let p = cols - 7;
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        let line = line?;
        let lineno = ln + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols {
            return Err(parse_err(
                lineno,
                format!("expected {cols} columns, got {}", f.len()),
            ));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| parse_err(lineno, format!("bad number {s:?}: {e}")))
        };
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| parse_err(lineno, format!("bad integer {s:?}: {e}")))
        };
        out.push(StageRecord {
            stage: int(f[0])?,
            strategy: f[1].to_owned(),
            evaluations: int(f[2])?,
            mad: num(f[3])?,
            ivar: num(f[4])?,
            acquisition_seconds: num(f[5])?,
            interval_scores: f[6..6 + p].iter().map(|s| num(s)).collect::<Result<_>>()?,
            batch: parse_batch(f[6 + p], lineno)?,
        });
    }
    Ok(out)
}

pub fn write_evaluations<W: Write>(evals: &[Evaluation], mut w: W) -> Result<()> {
    writeln!(w, "stage\tslot\ttheta\toutputs")?;
    for e in evals {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            e.stage,
            e.slot,
            join(&e.theta, ","),
            join(&e.outputs, ",")
        )?;
    }
    Ok(())
}

pub fn read_evaluations<R: BufRead>(r: R) -> Result<Vec<Evaluation>> {
    let mut out = Vec::new();
    for (ln, line) in r.lines().enumerate().skip(1) {
        let line = line?;
        let lineno = ln + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(parse_err(lineno, "expected 4 columns"));
        }
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| parse_err(lineno, e.to_string()))
        };
        out.push(Evaluation {
            stage: int(f[0])?,
            slot: int(f[1])?,
            theta: parse_floats(f[2], ',', lineno)?,
            outputs: parse_floats(f[3], ',', lineno)?,
        });
    }
    Ok(out)
}

pub fn write_truth<W: Write>(table: &TruthTable, mut w: W) -> Result<()> {
    let p = table.reference.first().map_or(0, Vec::len);
    let d = table.eta.first().map_or(0, Vec::len);
    writeln!(w, "# p d m")?;
    writeln!(w, "{p} {d} {}", table.reference.len())?;
    for (t, e) in table.reference.iter().zip(&table.eta) {
        writeln!(w, "{}\t{}", join(t, "\t"), join(e, "\t"))?;
    }
    Ok(())
}

pub fn read_truth<R: BufRead>(r: R) -> Result<TruthTable> {
    let mut dims: Option<(usize, usize, usize)> = None;
    let mut table = TruthTable {
        reference: Vec::new(),
        eta: Vec::new(),
    };
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = ln + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        match dims {
            None => {
                if toks.len() != 3 {
                    return Err(parse_err(lineno, "header must be `p d m`"));
                }
                let u = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|e| parse_err(lineno, e.to_string()))
                };
                dims = Some((u(toks[0])?, u(toks[1])?, u(toks[2])?));
            }
            Some((p, d, _)) => {
                if toks.len() != p + d {
                    return Err(parse_err(
                        lineno,
                        format!("expected {} columns, got {}", p + d, toks.len()),
                    ));
                }
                let v = parse_floats(&toks.join(","), ',', lineno)?;
                table.reference.push(v[..p].to_vec());
                table.eta.push(v[p..].to_vec());
            }
        }
    }
    let (_, _, m) = dims.ok_or_else(|| parse_err(1, "missing header"))?;
    if table.reference.len() != m {
        return Err(parse_err(
            0,
            format!("header promises {m} rows, found {}", table.reference.len()),
        ));
    }
    Ok(table)
}

fn create(path: PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Write every artifact of one cell into `dir`.
pub fn write_run(dir: &Path, run: &ReplicateRun, p: usize) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_records(&run.records, p, create(dir.join(RECORDS_FILE))?)?;
    let mut tw = create(dir.join(TRACES_FILE))?;
    writeln!(
        tw,
        "stage\treplication_ivar\texploration_ivar\tcoordinate\tlikelihood_trace"
    )?;
    let opt = |v: Option<f64>| v.map_or("-".to_owned(), |x| x.to_string());
    for tr in &run.traces {
        for (j, lt) in tr.likelihood.iter().enumerate() {
            writeln!(
                tw,
                "{}\t{}\t{}\t{j}\t{}",
                tr.stage,
                opt(tr.replication_ivar),
                opt(tr.exploration_ivar),
                join(lt, ",")
            )?;
        }
    }
    tw.flush()?;
    write_evaluations(&run.evaluations, create(dir.join(EVALUATIONS_FILE))?)?;
    write_dataset(&run.dataset, create(dir.join(DATASET_FILE))?)?;
    if !run.hyperparameters.is_empty() {
        // an aborted run may hold evaluations the last fit never saw
        if let Ok(model) = model_from_hyperparameters(&run.dataset, &run.hyperparameters) {
            write_model(&model, create(dir.join(MODEL_FILE))?)?;
        }
    }
    for (t, field) in run.fields.iter().enumerate() {
        write_field(field, create(dir.join(format!("field_{t}.tsv")))?)?;
    }
    Ok(())
}

pub fn load_records(dir: &Path) -> Result<Vec<StageRecord>> {
    read_records(BufReader::new(File::open(dir.join(RECORDS_FILE))?))
}

pub fn load_evaluations(dir: &Path) -> Result<Vec<Evaluation>> {
    read_evaluations(BufReader::new(File::open(dir.join(EVALUATIONS_FILE))?))
}

/// Datasets after each stage, rebuilt from the evaluation log.
pub fn datasets_by_stage(
    evals: &[Evaluation],
    p: usize,
    d: usize,
) -> Result<Vec<SimulationDataset>> {
    let mut out = Vec::new();
    let mut data = SimulationDataset::new(p, d)?;
    let last = evals.last().map_or(0, |e| e.stage);
    for stage in 0..=last {
        let part: Vec<Evaluation> = evals.iter().filter(|e| e.stage == stage).cloned().collect();
        super::experiment::absorb(&mut data, &part)?;
        out.push(data.clone());
    }
    Ok(out)
}
