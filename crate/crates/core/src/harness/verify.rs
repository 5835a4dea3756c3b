//! Audit of a benchmark output directory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bench::{run_benchmark, BenchmarkConfig, BenchmarkReport, FAILURE_MARKER};
use super::store::{load_checkpoint, load_pairs, read_input, read_json, save_checkpoint, to_canonical_json, pairs_checksum};
use crate::error::Result;
use crate::meta::EvalPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }
}

/// Checks stored checksums and cross-references. With `rerun`, the run is
/// regenerated from its stored config and compared byte for byte.
pub fn verify_run_dir(dir: &Path, rerun: bool, jobs: usize) -> Result<VerifyReport> {
    let mut out = VerifyReport { checks: Vec::new() };
    let marker = dir.join(FAILURE_MARKER);
    out.push(
        "no failure marker",
        !marker.exists(),
        if marker.exists() {
            std::fs::read_to_string(&marker).unwrap_or_default()
        } else {
            String::new()
        },
    );

    let config: BenchmarkConfig = read_json(&dir.join("config.json"))?;
    let report_bytes = read_input(&dir.join("report.json"))?;
    let report: BenchmarkReport = serde_json::from_slice(&report_bytes)?;
    out.push(
        "report embeds config",
        report.config == config.resolved(),
        "",
    );

    let ckpt_bytes = read_input(&dir.join("checkpoint.mevc"))?;
    match load_checkpoint(&ckpt_bytes) {
        Ok(state) => {
            let same = save_checkpoint(&state)? == ckpt_bytes;
            out.push("checkpoint checksums", true, "");
            out.push("checkpoint re-save is identical", same, "");
        }
        Err(e) => out.push("checkpoint checksums", false, e.to_string()),
    }

    let test = load_pairs(&dir.join("pairs").join("test.csv"))?;
    let mut by_model: BTreeMap<&str, Vec<EvalPair>> = BTreeMap::new();
    for p in &test {
        by_model.entry(p.model_id.as_str()).or_default().push(p.clone());
    }
    let mismatched: Vec<String> = report
        .rows
        .iter()
        .filter(|r| {
            by_model
                .get(r.model_id.as_str())
                .is_none_or(|pairs| pairs_checksum(pairs) != r.pairs_sha256)
        })
        .map(|r| format!("{}/{}", r.model_id, r.method))
        .collect();
    out.push(
        "shared test pairs",
        mismatched.is_empty(),
        mismatched.join(", "),
    );

    if rerun {
        let again = run_benchmark(&config, jobs)?;
        out.push(
            "report regenerates bit-exactly",
            to_canonical_json(&again.report)? == report_bytes,
            "",
        );
        out.push(
            "checkpoint regenerates bit-exactly",
            save_checkpoint(&again.state)? == ckpt_bytes,
            "",
        );
    }
    Ok(out)
}
