//! Text formats for datasets and model snapshots.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading a
//! file back reproduces every value bit for bit.

use std::io::{BufRead, Write};

use super::dataset::SimulationDataset;
use super::model::{HetGpModel, Hyperparameters};
use crate::error::{Error, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|e| parse_err(line, format!("bad number {tok:?}: {e}")))
}

fn join(xs: &[f64], sep: &str) -> String {
    xs.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(sep)
}

/// Columnar dataset dump: a `p d n` header then one row per replicate with
/// parameter coordinates, replicate index and the output vector.
pub fn write_dataset<W: Write>(data: &SimulationDataset, mut w: W) -> Result<()> {
    writeln!(w, "# p d n_t")?;
    writeln!(w, "{} {} {}", data.p(), data.d(), data.len())?;
    for i in 0..data.len() {
        for (l, out) in data.outputs(i).iter().enumerate() {
            writeln!(
                w,
                "{}\t{}\t{}",
                join(data.param(i), "\t"),
                l,
                join(out, "\t")
            )?;
        }
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<SimulationDataset> {
    let mut header: Option<(usize, usize, usize)> = None;
    let mut data: Option<SimulationDataset> = None;
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = ln + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        match header {
            None => {
                if toks.len() != 3 {
                    return Err(parse_err(lineno, "header must be `p d n_t`"));
                }
                let parse = |s: &str| {
                    s.parse::<usize>()
                        .map_err(|e| parse_err(lineno, e.to_string()))
                };
                let h = (parse(toks[0])?, parse(toks[1])?, parse(toks[2])?);
                data = Some(SimulationDataset::new(h.0, h.1)?);
                header = Some(h);
            }
            Some((p, d, _)) => {
                if toks.len() != p + 1 + d {
                    return Err(parse_err(
                        lineno,
                        format!("expected {} columns, got {}", p + 1 + d, toks.len()),
                    ));
                }
                let theta = toks[..p]
                    .iter()
                    .map(|s| parse_f64(s, lineno))
                    .collect::<Result<Vec<_>>>()?;
                let out = toks[p + 1..]
                    .iter()
                    .map(|s| parse_f64(s, lineno))
                    .collect::<Result<Vec<_>>>()?;
                let ds = data.as_mut().expect("header parsed");
                ds.push(&theta, vec![out])
                    .map_err(|e| parse_err(lineno, e.to_string()))?;
            }
        }
    }
    let (_, _, n) = header.ok_or_else(|| parse_err(0, "missing header"))?;
    let data = data.expect("header parsed");
    if data.len() != n {
        return Err(parse_err(
            0,
            format!("header declares {n} points, found {}", data.len()),
        ));
    }
    Ok(data)
}

/// Key-value snapshot of all hyperparameters.
pub fn write_model<W: Write>(model: &HetGpModel, mut w: W) -> Result<()> {
    writeln!(w, "p = {}", model.p())?;
    writeln!(w, "d = {}", model.d())?;
    writeln!(w, "n = {}", model.n())?;
    for (j, c) in model.coordinates().iter().enumerate() {
        let h = c.hyperparameters();
        writeln!(w, "[{j}]")?;
        writeln!(w, "rho = {}", join(&h.rho, " "))?;
        writeln!(w, "rho_g = {}", join(&h.rho_g, " "))?;
        writeln!(w, "nugget_g = {}", h.nugget_g)?;
        writeln!(w, "tau = {}", h.tau)?;
        writeln!(w, "tau_g = {}", h.tau_g)?;
        writeln!(w, "center = {}", h.center)?;
        writeln!(w, "scale = {}", h.scale)?;
        writeln!(w, "log_likelihood = {}", h.log_likelihood)?;
        writeln!(w, "latent = {}", join(&h.latent, " "))?;
    }
    Ok(())
}

/// Parse a snapshot written by [`write_model`].
pub fn read_model<R: BufRead>(r: R) -> Result<Vec<Hyperparameters>> {
    let mut out: Vec<Hyperparameters> = Vec::new();
    let mut d = None;
    for (ln, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = ln + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        if t.starts_with('[') {
            out.push(Hyperparameters {
                rho: vec![],
                rho_g: vec![],
                latent: vec![],
                nugget_g: f64::NAN,
                tau: f64::NAN,
                tau_g: f64::NAN,
                center: f64::NAN,
                scale: f64::NAN,
                log_likelihood: f64::NAN,
            });
            continue;
        }
        let (key, val) = t
            .split_once('=')
            .ok_or_else(|| parse_err(lineno, "expected key = value"))?;
        let (key, val) = (key.trim(), val.trim());
        let vec = || {
            val.split_whitespace()
                .map(|s| parse_f64(s, lineno))
                .collect::<Result<Vec<_>>>()
        };
        match (key, out.last_mut()) {
            ("d", None) => {
                d = Some(
                    val.parse::<usize>()
                        .map_err(|e| parse_err(lineno, e.to_string()))?,
                )
            }
            ("p" | "n", None) => {}
            ("rho", Some(h)) => h.rho = vec()?,
            ("rho_g", Some(h)) => h.rho_g = vec()?,
            ("latent", Some(h)) => h.latent = vec()?,
            ("nugget_g", Some(h)) => h.nugget_g = parse_f64(val, lineno)?,
            ("tau", Some(h)) => h.tau = parse_f64(val, lineno)?,
            ("tau_g", Some(h)) => h.tau_g = parse_f64(val, lineno)?,
            ("center", Some(h)) => h.center = parse_f64(val, lineno)?,
            ("scale", Some(h)) => h.scale = parse_f64(val, lineno)?,
            ("log_likelihood", Some(h)) => h.log_likelihood = parse_f64(val, lineno)?,
            _ => return Err(parse_err(lineno, format!("unexpected key {key:?}"))),
        }
    }
    if d.is_some_and(|d| d != out.len()) {
        return Err(parse_err(0, "coordinate count does not match header"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::{fit, model_from_hyperparameters, FitConfig};

    #[test]
    fn dataset_round_trip_is_exact() {
        let mut d = SimulationDataset::new(2, 2).unwrap();
        d.push(&[0.1, 0.7], vec![vec![1.0 / 3.0, -2.5e-9], vec![4.0, 5.0]])
            .unwrap();
        d.push(&[0.9, 0.0], vec![vec![std::f64::consts::PI, 1e300]])
            .unwrap();
        let mut buf = Vec::new();
        write_dataset(&d, &mut buf).unwrap();
        let back = read_dataset(&buf[..]).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn bad_dataset_reports_line() {
        let text = "1 1 1\n0.5 0 abc\n";
        match read_dataset(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn model_snapshot_round_trip() {
        let mut d = SimulationDataset::new(1, 2).unwrap();
        for i in 0..6 {
            let t = i as f64 / 5.0;
            d.push(
                &[t],
                vec![vec![t.sin(), t * t], vec![t.sin() + 0.1, t * t - 0.05]],
            )
            .unwrap();
        }
        let m = fit(
            &d,
            &FitConfig {
                restarts: 1,
                ..Default::default()
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let hy = read_model(&buf[..]).unwrap();
        let m2 = model_from_hyperparameters(&d, &hy).unwrap();
        for j in 0..2 {
            assert_eq!(
                m.coordinate(j).hyperparameters(),
                m2.coordinate(j).hyperparameters()
            );
        }
        assert_eq!(m.predict(&[0.33]).unwrap(), m2.predict(&[0.33]).unwrap());
    }
}
