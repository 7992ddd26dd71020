//! Stateful query-similarity detection.
//!
//! Every query is embedded with [`similarity_embed`] and compared with a
//! circular buffer of recent embeddings. When the k-NN distance drops below
//! the threshold the query is flagged, the buffer is flushed and the flagged
//! embedding is discarded.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Image;
use crate::oracle::similarity_embed;

/// How the k nearest distances are reduced to one statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnStatistic {
    /// Mean distance to the k nearest neighbors.
    Mean,
    /// Distance to the k-th nearest neighbor.
    Kth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub capacity: usize,
    pub k: usize,
    pub threshold: f64,
    pub statistic: KnnStatistic,
    /// Lower percentile of benign k-NN distances used by calibration.
    pub percentile: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            capacity: 100,
            k: 50,
            threshold: 2e-3,
            statistic: KnnStatistic::Mean,
            percentile: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Clean,
    Detected,
}

#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    buffer: VecDeque<Vec<f64>>,
    detections: usize,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        if config.k < 1 || config.capacity < config.k {
            return Err(Error::invalid("detector needs 1 ≤ k ≤ capacity"));
        }
        Ok(Self {
            buffer: VecDeque::with_capacity(config.capacity),
            config,
            detections: 0,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn detections(&self) -> usize {
        self.detections
    }

    pub fn buffer(&self) -> &VecDeque<Vec<f64>> {
        &self.buffer
    }

    /// k-NN statistic of `e` against the buffer, or `None` while fewer than
    /// k embeddings are stored.
    pub fn knn_distance(&self, e: &[f64]) -> Option<f64> {
        let k = self.config.k;
        if self.buffer.len() < k {
            return None;
        }
        let mut d: Vec<f64> = self.buffer.iter().map(|b| euclidean(b, e)).collect();
        d.select_nth_unstable_by(k - 1, f64::total_cmp);
        Some(match self.config.statistic {
            KnnStatistic::Kth => d[k - 1],
            KnnStatistic::Mean => {
                let nearest = &mut d[..k];
                nearest.sort_by(f64::total_cmp);
                nearest.iter().sum::<f64>() / k as f64
            }
        })
    }

    /// Processes one query image.
    ///
    /// An image whose embedding is undefined (all zero) is neither scored nor
    /// stored.
    pub fn observe(&mut self, image: &Image) -> Observation {
        match similarity_embed(image) {
            Ok(e) => self.observe_embedding(e),
            Err(_) => Observation::Clean,
        }
    }

    pub fn observe_embedding(&mut self, e: Vec<f64>) -> Observation {
        if let Some(d) = self.knn_distance(&e) {
            if d < self.config.threshold {
                self.detections += 1;
                self.buffer.clear();
                return Observation::Detected;
            }
        }
        if self.buffer.len() == self.config.capacity {
            self.buffer.pop_front();
        }
        self.buffer.push_back(e);
        Observation::Clean
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 · n)` (at least 1)
/// of the ascending sort.
pub fn percentile_nearest_rank(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty list"));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::invalid("percentile must lie in [0, 100]"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((percentile / 100.0 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Ok(v[rank - 1])
}

/// Streams benign traffic through a detector that never fires and returns the
/// configured lower percentile of the observed k-NN distances.
pub fn calibrate(benign: &[Image], config: &DetectorConfig) -> Result<f64> {
    if benign.len() < config.k + 1 {
        return Err(Error::invalid(format!(
            "calibration needs at least {} images, got {}",
            config.k + 1,
            benign.len()
        )));
    }
    let mut det = Detector::new(DetectorConfig {
        threshold: f64::NEG_INFINITY,
        ..config.clone()
    })?;
    let mut distances = Vec::new();
    for img in benign {
        let Ok(e) = similarity_embed(img) else { continue };
        if let Some(d) = det.knn_distance(&e) {
            distances.push(d);
        }
        det.observe_embedding(e);
    }
    percentile_nearest_rank(&distances, config.percentile)
}
