//! Output files of the experiment commands.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::commands::{metrics_report, Solution, SweepRow, TenantRun, VerifyReport};
use super::config::Config;
use super::scenario::Scenario;
use crate::error::Result;
use crate::game_engine::write_game_trace;
use crate::sfl_engine::write_cycle_trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, value).map_err(|e| std::io::Error::other(e.to_string()))?;
    Ok(())
}

pub fn write_manifest(out: &Path, command: &str, config: &Config, seed: u64) -> Result<()> {
    fs::create_dir_all(out)?;
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            command: command.into(),
            config_sha256: config.hash(),
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
        },
    )
}

/// `metrics.json`, `tenants.csv`, `devices.csv`, the game trace when the
/// policy ran the dynamics, and per-tenant cycle traces when `runs` is given.
pub fn write_solution(out: &Path, s: &Scenario, sol: &Solution, runs: Option<&[TenantRun]>) -> Result<()> {
    fs::create_dir_all(out)?;
    let report = metrics_report(s, sol, runs);
    write_json(&out.join("metrics.json"), &report)?;

    let mut w = csv::Writer::from_path(out.join("tenants.csv"))?;
    w.write_record([
        "tenant", "cycles", "disutility", "unbounded_devices", "spent", "budget", "final_loss",
        "target_loss", "cycles_to_target",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for t in &report.tenants {
        w.write_record([
            t.tenant.to_string(),
            t.cycles.to_string(),
            opt(t.disutility),
            t.unbounded_devices.to_string(),
            t.spent.to_string(),
            t.budget.to_string(),
            opt(t.final_loss),
            opt(t.target_loss),
            t.cycles_to_target.map_or(String::new(), |k| k.to_string()),
        ])?;
    }
    w.flush()?;

    let m = s.num_tenants();
    let mut w = csv::Writer::from_path(out.join("devices.csv"))?;
    let mut header = vec!["device".to_string(), "utility".into()];
    header.extend((1..=m).map(|i| format!("price_{i}")));
    header.extend((1..=m).map(|i| format!("q_{i}")));
    w.write_record(&header)?;
    for d in &report.devices {
        let mut row = vec![d.device.to_string(), d.utility.to_string()];
        row.extend(sol.prices.column(d.device).iter().map(|p| p.to_string()));
        row.extend(d.levels.iter().map(|q| q.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;

    if let Some(trace) = &sol.trace {
        write_game_trace(trace, BufWriter::new(File::create(out.join("game_trace.csv"))?))?;
    }
    for (i, run) in runs.unwrap_or_default().iter().enumerate() {
        if let Some(r) = &run.result {
            write_cycle_trace(
                &r.traces,
                BufWriter::new(File::create(out.join(format!("cycles_tenant_{}.csv", i + 1)))?),
            )?;
        }
    }
    Ok(())
}

pub fn write_verify(out: &Path, report: &VerifyReport) -> Result<()> {
    fs::create_dir_all(out)?;
    write_json(&out.join("verify.json"), report)
}

pub fn write_sweep(out: &Path, rows: &[SweepRow]) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_json(&out.join("sweep.json"), &rows)
}
