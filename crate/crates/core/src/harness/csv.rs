//! CSV output.
//!
//! One row per trial followed by one summary row per parameter point. In the
//! summary row `seed` is `summary`, numeric columns hold means over the
//! successful trials and `status` reads
//! `summary n_ok=<a> n_err=<b> se_excess=<s>`. Failed trials leave their
//! numeric columns empty and carry `error: <message>` in `status`.
//! `wall_ms` is empty unless the configuration asked for timing.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{SuiteResult, TrialResult};
use crate::error::Result;

pub const CSV_SCHEMA_VERSION: &str = "1";

pub const CSV_COLUMNS: [&str; 16] = [
    "schema_version",
    "algo",
    "instance",
    "d",
    "p",
    "K",
    "eps",
    "delta",
    "seed",
    "risk_raw",
    "risk_projected",
    "baseline",
    "excess",
    "draws_used",
    "wall_ms",
    "status",
];

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        v.to_string()
    }
}

fn sanitize(status: &str) -> String {
    status.replace(['\n', '\r'], " ")
}

fn prefix(suite: &SuiteResult) -> Vec<String> {
    let c = &suite.config;
    vec![
        CSV_SCHEMA_VERSION.into(),
        c.algorithm.name().into(),
        suite.instance_name.clone(),
        suite.d.to_string(),
        suite.p.to_string(),
        c.k.to_string(),
        c.epsilon.to_string(),
        c.delta.to_string(),
    ]
}

fn trial_row(suite: &SuiteResult, t: &TrialResult) -> Vec<String> {
    let mut row = prefix(suite);
    row.push(t.seed.to_string());
    match &t.metrics {
        Some(m) => {
            row.extend([m.risk.risk_raw, m.risk.risk_projected, m.risk.baseline, m.risk.excess].map(num));
            row.push(m.draws_used.to_string());
        }
        None => row.extend(std::iter::repeat_n(String::new(), 5)),
    }
    row.push(t.wall_ms.map(num).unwrap_or_default());
    row.push(sanitize(&t.status));
    row
}

fn summary_row(suite: &SuiteResult) -> Vec<String> {
    let s = &suite.summary;
    let mut row = prefix(suite);
    row.push("summary".into());
    row.extend([s.mean_risk_raw, s.mean_risk_projected, s.mean_baseline, s.mean_excess, s.mean_draws].map(num));
    row.push(s.mean_wall_ms.map(num).unwrap_or_default());
    row.push(format!("summary n_ok={} n_err={} se_excess={}", s.n_ok, s.n_err, num(s.se_excess)));
    row
}

/// Writes the header and all rows.
pub fn write_csv<W: Write>(suites: &[SuiteResult], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for suite in suites {
        for t in &suite.trials {
            w.write_record(trial_row(suite, t))?;
        }
        w.write_record(summary_row(suite))?;
    }
    w.flush()?;
    Ok(())
}

pub fn suites_to_csv(suites: &[SuiteResult]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(suites, &mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

/// Path of the JSON file holding the resolved configurations of a CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".config.json");
    PathBuf::from(name)
}

/// Writes the CSV to `path` and the resolved configurations, one per suite,
/// to [`sidecar_path`].
pub fn write_outputs(path: &Path, suites: &[SuiteResult]) -> Result<()> {
    write_csv(suites, BufWriter::new(File::create(path)?))?;
    let configs: Vec<_> = suites.iter().map(|s| &s.config).collect();
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&configs)? + "\n")?;
    Ok(())
}
