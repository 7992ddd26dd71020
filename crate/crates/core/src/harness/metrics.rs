//! Per-image metrics: best norm within each budget and queries needed to
//! reach each norm level.

use crate::attacks::{Metric, TraceRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub image: String,
    pub attack: String,
    /// Best norm among records with `query ≤ B`, one per budget.
    pub norms: Vec<f64>,
    /// First query reaching each norm level, or `Q` if never reached.
    pub queries_to: Vec<usize>,
    pub detections: usize,
}

fn norm_of(r: &TraceRecord, metric: Metric) -> f64 {
    match metric {
        Metric::L2 => r.best_l2,
        Metric::Linf => r.best_linf.unwrap_or(f64::INFINITY),
    }
}

/// `(norm@B for each budget, queries_to(τ) for each threshold)`.
/// Budgets before the first record report infinity.
pub fn compute_metrics(
    records: &[TraceRecord],
    budgets: &[usize],
    thresholds: &[f64],
    q: usize,
    metric: Metric,
) -> (Vec<f64>, Vec<usize>) {
    let norms = budgets
        .iter()
        .map(|&b| {
            records
                .iter()
                .take_while(|r| r.query <= b)
                .map(|r| norm_of(r, metric))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let queries_to = thresholds
        .iter()
        .map(|&t| records.iter().find(|r| norm_of(r, metric) <= t).map_or(q, |r| r.query))
        .collect();
    (norms, queries_to)
}

/// Column-wise arithmetic means over rows of one attack.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsMeans {
    pub attack: String,
    pub images: usize,
    pub norms: Vec<f64>,
    pub queries_to: Vec<f64>,
    pub detections: f64,
}

pub fn means(rows: &[MetricsRow]) -> Result<MetricsMeans> {
    let first = rows.first().ok_or_else(|| Error::invalid("no rows to average"))?;
    let n = rows.len() as f64;
    let col = |f: &dyn Fn(&MetricsRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Ok(MetricsMeans {
        attack: first.attack.clone(),
        images: rows.len(),
        norms: (0..first.norms.len()).map(|j| col(&|r| r.norms[j])).collect(),
        queries_to: (0..first.queries_to.len()).map(|j| col(&|r| r.queries_to[j] as f64)).collect(),
        detections: col(&|r| r.detections as f64),
    })
}

/// Median of finite-or-infinite values; `NaN` for an empty slice.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(query: usize, best_l2: f64) -> TraceRecord {
        TraceRecord {
            query,
            best_l2,
            best_linf: None,
            clean_query: false,
            detected: false,
        }
    }

    #[test]
    fn worked_example() {
        let records = [rec(500, 10.0), rec(1500, 3.9), rec(4000, 1.8)];
        let (n, q) = compute_metrics(&records, &[1000, 2000, 5000, 10_000], &[4.0, 2.0], 10_000, Metric::L2);
        assert_eq!(n, vec![10.0, 3.9, 1.8, 1.8]);
        assert_eq!(q, vec![1500, 4000]);
    }

    #[test]
    fn censored_and_single_record() {
        let (n, q) = compute_metrics(&[rec(1, 5.0)], &[1000, 2000], &[4.0, 2.0], 10_000, Metric::L2);
        assert_eq!(n, vec![5.0, 5.0]);
        assert_eq!(q, vec![10_000, 10_000]);
    }

    #[test]
    fn means_match_direct_average() {
        let rows: Vec<MetricsRow> = (0..4)
            .map(|i| MetricsRow {
                image: format!("img{i}"),
                attack: "EA".into(),
                norms: vec![i as f64, 2.0 * i as f64],
                queries_to: vec![100 * i],
                detections: i,
            })
            .collect();
        let m = means(&rows).unwrap();
        assert_eq!(m.norms, vec![1.5, 3.0]);
        assert_eq!(m.queries_to, vec![150.0]);
        assert_eq!(m.detections, 1.5);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
