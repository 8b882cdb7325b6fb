//! Trace output: one CSV row per round plus a JSON sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::run::{CheckResult, RunMeta, Trace};

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Header row: `t, step_loss, cum_loss`, three columns per ε, then
/// `log_f, C_t, cert_exact`.
pub fn header(eps_grid: &[f64]) -> Vec<String> {
    let mut h = vec!["t".to_string(), "step_loss".into(), "cum_loss".into()];
    for e in eps_grid {
        h.push(format!("L_eps_{e}"));
        h.push(format!("R_eps_{e}"));
        h.push(format!("bound_eq6_{e}"));
    }
    h.extend(["log_f".into(), "C_t".into(), "cert_exact".into()]);
    h
}

pub fn write_csv<W: Write>(trace: &Trace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(header(&trace.meta.eps_grid)).map_err(io)?;
    for r in &trace.rows {
        let mut rec = vec![r.t.to_string(), num(r.step_loss), num(r.cum_loss)];
        for q in &r.quantiles {
            rec.extend([num(q.l_eps), num(q.r_eps), num(q.bound)]);
        }
        rec.push(num(r.log_f));
        rec.push(num(r.c_t));
        rec.push(r.cert_exact.map(|b| b.to_string()).unwrap_or_default());
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(trace: &Trace) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(trace, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

/// A CSV read back as a header and string cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let io = |e: csv::Error| Error::Io(e.to_string());
        let header = rd.headers().map_err(io)?.iter().map(String::from).collect();
        let rows = rd
            .records()
            .map(|r| r.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(io)?;
        Ok(Table { header, rows })
    }

    /// A column parsed as floats.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Io(format!("no column {name}")))?;
        self.rows
            .iter()
            .map(|r| {
                r[i].parse::<f64>()
                    .map_err(|e| Error::Io(format!("{name}: {e}")))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a RunConfig,
    meta: &'a RunMeta,
    checks: &'a [CheckResult],
    all_pass: bool,
}

pub fn sidecar_json(cfg: &RunConfig, trace: &Trace) -> Result<String> {
    serde_json::to_string_pretty(&Sidecar {
        config: cfg,
        meta: &trace.meta,
        checks: &trace.checks,
        all_pass: trace.all_pass(),
    })
    .map_err(|e| Error::Io(e.to_string()))
}

/// Write `<stem>.csv` and `<stem>.json` under `dir`; returns both paths.
pub fn emit(cfg: &RunConfig, trace: &Trace, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&csv_path, csv_string(trace)?)?;
    fs::write(&json_path, sidecar_json(cfg, trace)?)?;
    Ok((csv_path, json_path))
}
