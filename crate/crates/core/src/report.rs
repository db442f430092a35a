//! Writes a finished run to disk: a JSON master file, CSV views of the
//! search trace and per-budget metrics, network checkpoints, and a manifest
//! binding every artifact digest to the config hash. All manifested bytes
//! are pure functions of the run content, so re-emitting is byte-identical.
//! Wall-clock timings go to a separate unmanifested file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::{save_checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::supernet::SuperNet;
use crate::transfer::{BudgetRow, SweepOutcome, TransferReport, TransferRun};

pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const PER_BUDGET_FILE: &str = "per_budget.csv";
pub const BASELINE_FILE: &str = "baseline.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// Ties a run's outputs back to its inputs: equal manifests mean equal
/// artifacts, bit for bit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    /// Artifact file name to SHA-256 of its bytes, in name order.
    pub artifacts: BTreeMap<String, String>,
}

fn write_artifact(
    dir: &Path,
    name: &str,
    bytes: &[u8],
    digests: &mut BTreeMap<String, String>,
) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(path, e))?;
    digests.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

fn budget_row_csv(out: &mut String, row: &BudgetRow) {
    let score = match row.search_score {
        Some(s) => s.to_string(),
        None => String::new(),
    };
    let o = &row.outcome;
    let _ = writeln!(
        out,
        "{},{},{},{},{},{},{},{},{}",
        row.allocation,
        row.size,
        score,
        o.source_metrics.loss,
        o.source_metrics.top1_accuracy,
        o.target_metrics.loss,
        o.target_metrics.top1_accuracy,
        o.source_steps,
        o.target_steps,
    );
}

const BUDGET_HEADER: &str = "allocation,size,search_score,source_val_loss,source_val_acc,\
                             target_val_loss,target_val_acc,source_steps,target_steps\n";

/// Chain metrics, one row per budget on the greedy chain.
pub fn per_budget_csv(report: &TransferReport) -> String {
    let mut out = String::from(BUDGET_HEADER);
    for row in &report.per_budget {
        budget_row_csv(&mut out, row);
    }
    out
}

/// Single-row CSV for the fixed-architecture reference.
pub fn baseline_csv(report: &TransferReport) -> Option<String> {
    report.baseline.as_ref().map(|row| {
        let mut out = String::from(BUDGET_HEADER);
        budget_row_csv(&mut out, row);
        out
    })
}

/// Writes the JSON master file plus the CSV views. Returns name → digest
/// for everything written.
pub fn emit_report(report: &TransferReport, out_dir: &Path) -> Result<BTreeMap<String, String>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut digests = BTreeMap::new();
    let mut json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::contract(format!("report encode: {e}")))?;
    json.push('\n');
    write_artifact(out_dir, REPORT_FILE, json.as_bytes(), &mut digests)?;
    if let Some(trace) = &report.trace {
        write_artifact(out_dir, TRACE_FILE, trace.to_csv().as_bytes(), &mut digests)?;
    }
    write_artifact(
        out_dir,
        PER_BUDGET_FILE,
        per_budget_csv(report).as_bytes(),
        &mut digests,
    )?;
    if let Some(csv) = baseline_csv(report) {
        write_artifact(out_dir, BASELINE_FILE, csv.as_bytes(), &mut digests)?;
    }
    Ok(digests)
}

/// Sweep CSV plus a JSON summary of per-seed rank statistics.
pub fn emit_sweep(sweep: &SweepOutcome, out_dir: &Path) -> Result<BTreeMap<String, String>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut digests = BTreeMap::new();
    write_artifact(out_dir, SWEEP_FILE, sweep.to_csv().as_bytes(), &mut digests)?;
    let mut json = serde_json::to_string_pretty(&sweep.per_seed)
        .map_err(|e| Error::contract(format!("sweep encode: {e}")))?;
    json.push('\n');
    write_artifact(out_dir, SWEEP_SUMMARY_FILE, json.as_bytes(), &mut digests)?;
    Ok(digests)
}

pub fn emit_manifest(
    out_dir: &Path,
    config_hash: &str,
    seed: u64,
    artifacts: BTreeMap<String, String>,
) -> Result<Manifest> {
    let manifest = Manifest {
        config_hash: config_hash.to_string(),
        seed,
        artifacts,
    };
    let mut json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::contract(format!("manifest encode: {e}")))?;
    json.push('\n');
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, json).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

/// Phase timings; informative only, never part of the manifest.
pub fn emit_timings(out_dir: &Path, timings: &[(String, f64)]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        phase: &'a str,
        seconds: f64,
    }
    let rows: Vec<Row> = timings
        .iter()
        .map(|(phase, seconds)| Row {
            phase,
            seconds: *seconds,
        })
        .collect();
    let mut json = serde_json::to_string_pretty(&rows)
        .map_err(|e| Error::contract(format!("timings encode: {e}")))?;
    json.push('\n');
    let path = out_dir.join(TIMINGS_FILE);
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}

fn net_meta(net: &SuperNet, seed: u64, phase: &str) -> CheckpointMeta {
    CheckpointMeta {
        allocation: net.alloc().clone(),
        kind: *net.kind(),
        seed,
        phase: phase.to_string(),
        num_classes: net.num_classes(),
        input_channels: net.input_channels(),
        input_extent: net.input_extent(),
    }
}

/// Writes everything a pipeline run produced: report files, checkpoints for
/// each completed network, the timings file, and finally the manifest
/// covering all deterministic artifacts.
pub fn emit_run(run: &TransferRun, config_hash: &str, out_dir: &Path) -> Result<Manifest> {
    let mut digests = emit_report(&run.report, out_dir)?;
    let seed = run.report.seed;
    let nets = [
        (&run.source_net, "supernet_source.spnw", "supernet-source"),
        (&run.target_net, "supernet_target.spnw", "supernet-target"),
        (&run.final_child, "child_final.spnw", "child-final"),
    ];
    for (net, file, phase) in nets {
        if let Some(net) = net {
            let path = out_dir.join(file);
            save_checkpoint(&path, &net_meta(net, seed, phase), &net.params)?;
            let bytes = fs::read(&path).map_err(|e| Error::io(path, e))?;
            digests.insert(file.to_string(), sha256_hex(&bytes));
        }
    }
    emit_timings(out_dir, &run.timings)?;
    emit_manifest(out_dir, config_hash, seed, digests)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::SearchTrace;
    use crate::supernet::Allocation;
    use crate::transfer::{Metrics, Purity, WeightSearchOutcome};

    fn alloc(v: &[usize]) -> Allocation {
        Allocation::new(v.to_vec()).unwrap()
    }

    fn metrics(loss: f64, acc: f64) -> Metrics {
        Metrics {
            loss,
            top1_accuracy: acc,
            n_examples: 10,
        }
    }

    fn sample_report() -> TransferReport {
        let trace = SearchTrace {
            chain: vec![alloc(&[1, 1]), alloc(&[2, 1])],
            scores: vec![None, Some(0.625)],
            sizes: vec![2.0, 3.0],
            evals_after_step: vec![0, 2],
            eval_count: 2,
            tie_breaks: 0,
        };
        let outcome = WeightSearchOutcome {
            source_metrics: metrics(0.5, 0.8),
            target_metrics: metrics(0.75, 0.625),
            source_steps: 4,
            target_steps: 2,
        };
        TransferReport {
            seed: 9,
            super_alloc: alloc(&[2, 2]),
            budget: 3.0,
            weights: vec![1.0, 1.0],
            supernet_source: None,
            supernet_target: None,
            trace: Some(trace),
            purity: Some(Purity {
                digest_before_search: "aa".into(),
                digest_after_search: "aa".into(),
            }),
            per_budget: vec![
                BudgetRow {
                    allocation: alloc(&[1, 1]),
                    size: 2.0,
                    search_score: None,
                    outcome,
                },
                BudgetRow {
                    allocation: alloc(&[2, 1]),
                    size: 3.0,
                    search_score: Some(0.625),
                    outcome,
                },
            ],
            baseline: Some(BudgetRow {
                allocation: alloc(&[1, 2]),
                size: 3.0,
                search_score: None,
                outcome,
            }),
            failure: None,
        }
    }

    #[test]
    fn csv_views_have_documented_columns() {
        let report = sample_report();
        let csv = per_budget_csv(&report);
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert_eq!(
            header,
            "allocation,size,search_score,source_val_loss,source_val_acc,\
             target_val_loss,target_val_acc,source_steps,target_steps"
        );
        let first = lines.next().unwrap();
        assert_eq!(first, "1-1,2,,0.5,0.8,0.75,0.625,4,2");
        let second = lines.next().unwrap();
        assert!(second.starts_with("2-1,3,0.625,"), "{second}");
        assert!(lines.next().is_none());

        let baseline = baseline_csv(&report).unwrap();
        assert_eq!(baseline.lines().count(), 2);
        assert!(baseline.lines().nth(1).unwrap().starts_with("1-2,3,,"));
    }

    #[test]
    fn emit_is_byte_identical_on_reemit() {
        let report = sample_report();
        let dir = tempfile::tempdir().unwrap();
        let first = emit_report(&report, dir.path()).unwrap();
        let bytes_before: Vec<Vec<u8>> = first
            .keys()
            .map(|name| fs::read(dir.path().join(name)).unwrap())
            .collect();
        let second = emit_report(&report, dir.path()).unwrap();
        assert_eq!(first, second);
        for (name, before) in first.keys().zip(bytes_before) {
            let after = fs::read(dir.path().join(name)).unwrap();
            assert_eq!(before, after, "{name} changed between emits");
        }
        assert!(first.contains_key(REPORT_FILE));
        assert!(first.contains_key(TRACE_FILE));
        assert!(first.contains_key(PER_BUDGET_FILE));
        assert!(first.contains_key(BASELINE_FILE));
    }

    #[test]
    fn report_json_round_trips_and_keeps_failure_marker() {
        let mut report = sample_report();
        report.failure = Some("search: boom".into());
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
        let back: TransferReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
        assert!(text.contains("\"failure\": \"search: boom\""));
    }

    #[test]
    fn manifest_orders_artifacts_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample_report();
        let digests = emit_report(&report, dir.path()).unwrap();
        let manifest = emit_manifest(dir.path(), "cafe", 9, digests.clone()).unwrap();
        assert_eq!(manifest.config_hash, "cafe");
        assert_eq!(manifest.seed, 9);
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let back: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back, manifest);
        let names: Vec<&String> = manifest.artifacts.keys().collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
        for digest in manifest.artifacts.values() {
            assert_eq!(digest.len(), 64);
        }
    }

    #[test]
    fn sha256_matches_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn timings_file_is_not_manifested() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample_report();
        let digests = emit_report(&report, dir.path()).unwrap();
        emit_timings(dir.path(), &[("search".into(), 1.25)]).unwrap();
        let manifest = emit_manifest(dir.path(), "00", 9, digests).unwrap();
        assert!(!manifest.artifacts.contains_key(TIMINGS_FILE));
        assert!(dir.path().join(TIMINGS_FILE).exists());
        let text = fs::read_to_string(dir.path().join(TIMINGS_FILE)).unwrap();
        assert!(text.contains("\"phase\": \"search\""));
    }
}
