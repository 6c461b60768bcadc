//! The JSON envelope written by every run.

use serde::{Deserialize, Serialize};
use walkforge_core::stats::TestReport;
use walkforge_core::{OffsetSequence, ParameterSchedule};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KSource {
    Config,
    Calibrated,
    Unset,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KProvenance {
    pub level: usize,
    pub value: Option<f64>,
    pub source: KSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bracket: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub code_version: String,
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub schedule: Option<ParameterSchedule>,
    pub schedule_hash: Option<String>,
    pub offsets: Option<OffsetSequence>,
    pub k_provenance: Vec<KProvenance>,
    pub result: TestReport,
    /// Kind-specific structured output.
    pub details: serde_json::Value,
    /// CSV and binary files written next to the report.
    pub files: Vec<String>,
}
