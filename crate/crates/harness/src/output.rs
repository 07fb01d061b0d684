//! CSV and manifest writers. Every file is written to a temporary sibling and
//! renamed into place.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::runner::{RunOutput, Timing};
use crate::scenario::Scenario;

pub const RESULTS: &str = "results.csv";
pub const CURVES: &str = "curves.csv";
pub const EPISODES: &str = "episodes.csv";
pub const SCENARIO: &str = "scenario.toml";
pub const MANIFEST: &str = "run.json";

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serializes rows with a header; the header is written even with no rows.
pub fn csv_bytes<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| crate::error::LabError::Io(e.to_string()))
}

pub const RESULT_HEADER: [&str; 11] = [
    "scenario_hash",
    "case",
    "seed",
    "policy",
    "lambda",
    "users",
    "j",
    "c",
    "ci",
    "bound",
    "status",
];
const CURVE_HEADER: [&str; 6] = ["case", "policy", "seed", "step", "j", "c"];
const EPISODE_HEADER: [&str; 7] = ["case", "seed", "episode", "epsilon", "j", "c", "loss"];

/// Everything needed to regenerate the outputs.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub scenario_hash: String,
    pub command: Vec<String>,
    pub scenario: &'a Scenario,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub files: Vec<&'static str>,
    pub runs: usize,
    pub failed: usize,
    /// `(case, policy, multiplier)` used by the planning policies.
    pub multipliers: &'a [(String, String, f64)],
    pub wall_seconds: f64,
    pub timings: &'a [Timing],
}

/// Writes the CSV files, the resolved scenario and the manifest into `dir`.
pub fn write_outputs(dir: &Path, scenario: &Scenario, out: &RunOutput, command: Vec<String>, jobs: usize, wall: f64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = vec![RESULTS, SCENARIO, MANIFEST];
    write_atomic(&dir.join(RESULTS), &csv_bytes(&out.rows, &RESULT_HEADER)?)?;
    if scenario.run.curve_points > 0 {
        write_atomic(&dir.join(CURVES), &csv_bytes(&out.curves, &CURVE_HEADER)?)?;
        files.push(CURVES);
    }
    if !out.episodes.is_empty() {
        write_atomic(&dir.join(EPISODES), &csv_bytes(&out.episodes, &EPISODE_HEADER)?)?;
        files.push(EPISODES);
    }
    write_atomic(&dir.join(SCENARIO), scenario.to_toml()?.as_bytes())?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        scenario_hash: scenario.hash(),
        command,
        scenario,
        seeds: scenario.seeds(),
        jobs,
        files: files.clone(),
        runs: out.total,
        failed: out.failed,
        multipliers: &out.multipliers,
        wall_seconds: wall,
        timings: &out.timings,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| crate::error::LabError::Io(e.to_string()))?;
    write_atomic(&dir.join(MANIFEST), json.as_bytes())?;
    Ok(files.iter().map(|f| dir.join(f)).collect())
}
