//! Experiment orchestration: synthetic data, attack sequences, metrics and
//! CSV output.

pub mod config;
pub mod data;
pub mod metrics;
pub mod report;
pub mod sequence;

use std::path::Path;

pub use config::{AttackKind, BenignConfig, DataConfig, Engine, ExperimentConfig, Mode, ModelConfig};
pub use data::{benign_traffic, calibrate_verifier, gen_data, Dataset, FaceImage, Identity, Pair};
pub use metrics::{compute_metrics, means, median, MetricsMeans, MetricsRow};
pub use sequence::{attack_image, run_sequence, run_sequence_with, Experiment, ImageResult, InitSource, SequenceResult};

use crate::attacks::Metric;
use crate::error::{Error, Result};

/// Name used for image `i` in output files.
pub fn image_id(i: usize) -> String {
    format!("img{i}")
}

/// Norm that the metrics of `attack` are reported in: ℓ∞ for sign-flip
/// variants, ℓ₂ otherwise.
pub fn report_metric(attack: AttackKind) -> Metric {
    match attack.engine() {
        Engine::Ea => Metric::L2,
        Engine::Sfa => Metric::Linf,
    }
}

/// Summary rows for a finished sequence.
pub fn summarize(result: &SequenceResult, cfg: &ExperimentConfig) -> Vec<MetricsRow> {
    let metric = report_metric(result.attack);
    result
        .results
        .iter()
        .map(|r| {
            let (norms, queries_to) =
                compute_metrics(&r.trace.records, &cfg.budgets, &cfg.thresholds, cfg.budget, metric);
            MetricsRow {
                image: image_id(r.image),
                attack: result.attack.name().to_string(),
                norms,
                queries_to,
                detections: r.trace.detections,
            }
        })
        .collect()
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Dodging => "dodging",
        Mode::Impersonation => "impersonation",
    }
}

/// Writes `traces/<attack>_<mode>_img<i>.csv`, `summary_<attack>_<mode>.csv`
/// and `means_<attack>_<mode>.csv` under `dir`. Returns the summary rows.
pub fn write_outputs(dir: &Path, result: &SequenceResult, cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let tag = format!("{}_{}", result.attack.name(), mode_name(result.mode));
    let traces = dir.join("traces");
    std::fs::create_dir_all(&traces).map_err(|e| Error::io(&traces, e))?;
    for r in &result.results {
        report::write_trace(traces.join(format!("{tag}_{}.csv", image_id(r.image))), &r.trace.records)?;
    }
    let rows = summarize(result, cfg);
    report::write_summary(dir.join(format!("summary_{tag}.csv")), &cfg.budgets, &cfg.thresholds, &rows)?;
    if !rows.is_empty() {
        report::write_means(dir.join(format!("means_{tag}.csv")), &cfg.budgets, &cfg.thresholds, &[means(&rows)?])?;
    }
    Ok(rows)
}
