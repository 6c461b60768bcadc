//! Long-format CSV export of report statistics.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use serde_json::Value;

use crate::error::CliError;
use crate::report::REPORT_SCHEMA_VERSION;

pub const EXPORT_COLUMNS: [&str; 6] = [
    "experiment",
    "parameter",
    "value",
    "ci_lo",
    "ci_hi",
    "config_hash",
];

/// Writes one row per statistic of every report. With `dedup`, a report whose
/// config hash was already exported is skipped.
pub fn export<W: Write>(reports: &[PathBuf], dedup: bool, out: W) -> Result<usize, CliError> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e| CliError::runtime("writing CSV", e);
    w.write_record(EXPORT_COLUMNS).map_err(io)?;
    let mut seen = BTreeSet::new();
    let mut rows = 0;
    for path in reports {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::runtime(&format!("cannot read {}", path.display()), e))?;
        let report: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: not a report: {e}", path.display())))?;
        let version = report.get("schema_version").and_then(Value::as_u64);
        if version != Some(REPORT_SCHEMA_VERSION as u64) {
            return Err(CliError::Validation(format!(
                "{}: report schema_version {} does not match {REPORT_SCHEMA_VERSION}",
                path.display(),
                version.map_or("missing".to_string(), |v| v.to_string())
            )));
        }
        let field = |k: &str| {
            report
                .get(k)
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string()
        };
        let (experiment, hash) = (field("experiment"), field("config_hash"));
        if dedup && !seen.insert(hash.clone()) {
            continue;
        }
        let stats = report
            .pointer("/result/statistics")
            .and_then(Value::as_array)
            .ok_or_else(|| CliError::Validation(format!("{}: no statistics", path.display())))?;
        let num = |v: Option<&Value>| {
            v.and_then(Value::as_f64)
                .map(|x| x.to_string())
                .unwrap_or_default()
        };
        for s in stats {
            let ci = s.get("ci").and_then(Value::as_array);
            w.write_record([
                experiment.clone(),
                s.get("name")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string(),
                num(s.get("value")),
                num(ci.and_then(|c| c.first())),
                num(ci.and_then(|c| c.get(1))),
                hash.clone(),
            ])
            .map_err(io)?;
            rows += 1;
        }
    }
    w.flush().map_err(|e| CliError::runtime("writing CSV", e))?;
    Ok(rows)
}
