//! Query bookkeeping shared by every attack engine.
//!
//! All oracle traffic goes through a [`QuerySession`]: it renders the search
//! point, applies evasion noise, feeds the detector, tracks the best
//! adversarial perturbation and appends one [`TraceRecord`] per oracle call.

use serde::{Deserialize, Serialize};

use super::evasion::Evasion;
use super::space::SearchSpace;
use crate::detector::{Detector, Observation};
use crate::error::Result;
use crate::grid::{Image, RgbGrid};
use crate::oracle::HardLabel;

/// One oracle call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Oracle query count after this call.
    pub query: usize,
    /// Best reportable ℓ₂ norm so far (infinite before the first one).
    pub best_l2: f64,
    /// Best reportable ℓ∞ norm so far, for engines that track it.
    pub best_linf: Option<f64>,
    /// Noise-free check of the engine's current point.
    pub clean_query: bool,
    pub detected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// An adversarial perturbation was found.
    Success,
    /// No adversarial starting point could be drawn.
    InitFailed,
    /// The budget ran out before any adversarial point was confirmed.
    BudgetExhausted,
    /// The pair's clean label does not fit the attack mode.
    Skipped,
}

/// Which norm decides the reportable best point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    L2,
    Linf,
}

#[derive(Debug, Clone)]
pub struct AttackTrace {
    pub records: Vec<TraceRecord>,
    pub best_point: Option<RgbGrid>,
    pub best_image: Option<Image>,
    pub status: Status,
    pub detections: usize,
}

impl AttackTrace {
    pub fn empty(status: Status) -> Self {
        Self {
            records: Vec::new(),
            best_point: None,
            best_image: None,
            status,
            detections: 0,
        }
    }

    pub fn final_l2(&self) -> f64 {
        self.records.last().map_or(f64::INFINITY, |r| r.best_l2)
    }

    pub fn queries(&self) -> usize {
        self.records.last().map_or(0, |r| r.query)
    }
}

/// Result of one search-point query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryOutcome {
    /// Label differs from the clean image's label.
    pub adversarial: bool,
    /// Image-space norms of the noise-free rendering.
    pub l2: f64,
    pub linf: f64,
}

pub struct QuerySession<'a> {
    oracle: &'a mut dyn HardLabel,
    detector: Option<&'a mut Detector>,
    evasion: Option<Evasion>,
    metric: Metric,
    track_linf: bool,
    records: Vec<TraceRecord>,
    best_l2: f64,
    best_linf: f64,
    best_score: f64,
    best_point: Option<RgbGrid>,
    best_image: Option<Image>,
    current: Option<RgbGrid>,
    wrapped: usize,
    detections: usize,
}

impl<'a> QuerySession<'a> {
    pub fn new(oracle: &'a mut dyn HardLabel) -> Self {
        Self {
            oracle,
            detector: None,
            evasion: None,
            metric: Metric::L2,
            track_linf: false,
            records: Vec::new(),
            best_l2: f64::INFINITY,
            best_linf: f64::INFINITY,
            best_score: f64::INFINITY,
            best_point: None,
            best_image: None,
            current: None,
            wrapped: 0,
            detections: 0,
        }
    }

    pub fn with_detector(mut self, detector: &'a mut Detector) -> Self {
        self.detector = Some(detector);
        self
    }

    pub fn with_evasion(mut self, evasion: Evasion) -> Self {
        self.evasion = Some(evasion);
        self
    }

    /// Selects the reportable metric; `Linf` also fills the trace's ℓ∞ column.
    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self.track_linf = metric == Metric::Linf;
        self
    }

    pub fn set_metric(&mut self, metric: Metric) {
        self.metric = metric;
        self.track_linf = metric == Metric::Linf;
    }

    pub fn original_label(&self) -> u8 {
        self.oracle.original_label()
    }

    pub fn queries(&self) -> usize {
        self.oracle.queries()
    }

    pub fn remaining(&self) -> usize {
        self.oracle.remaining()
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn best_point(&self) -> Option<&RgbGrid> {
        self.best_point.as_ref()
    }

    pub fn best_l2(&self) -> f64 {
        self.best_l2
    }

    /// The engine's latest accepted adversarial point.
    pub fn current(&self) -> Option<&RgbGrid> {
        self.current.as_ref()
    }

    pub fn set_current(&mut self, point: &RgbGrid) {
        self.current = Some(point.clone());
    }

    /// Forgets the current point and the best point, e.g. after switching to
    /// a different search space. Trace records are kept.
    pub fn reset_points(&mut self) {
        self.current = None;
        self.best_point = None;
        self.best_image = None;
        self.best_score = f64::INFINITY;
    }

    /// Renders `point`, queries the oracle and records the call. With evasion
    /// active the query is noised and, every `interval` wrapped queries, a
    /// clean check of the current point runs first.
    pub fn query(&mut self, space: &dyn SearchSpace, point: &RgbGrid) -> Result<QueryOutcome> {
        let image = space.to_image(point);
        let (l2, linf) = space.image_norms(&image);
        let adversarial = match self.evasion.as_ref().map(Evasion::interval) {
            Some(interval) => {
                self.wrapped += 1;
                if self.wrapped % interval == 0 {
                    if let Some(cur) = self.current.clone() {
                        self.clean_check(space, &cur)?;
                    }
                }
                let noisy = self.evasion.as_mut().expect("evasion present").apply(&image);
                let (label, detected) = self.call(&noisy)?;
                self.push(false, detected);
                label != self.oracle.original_label()
            }
            None => {
                let (label, detected) = self.call(&image)?;
                let adversarial = label != self.oracle.original_label();
                if adversarial {
                    self.offer(point, image, l2, linf);
                }
                self.push(false, detected);
                adversarial
            }
        };
        Ok(QueryOutcome { adversarial, l2, linf })
    }

    fn clean_check(&mut self, space: &dyn SearchSpace, point: &RgbGrid) -> Result<()> {
        let image = space.to_image(point);
        let (l2, linf) = space.image_norms(&image);
        let (label, detected) = self.call(&image)?;
        if label != self.oracle.original_label() {
            self.offer(point, image, l2, linf);
        }
        self.push(true, detected);
        Ok(())
    }

    fn call(&mut self, image: &Image) -> Result<(u8, bool)> {
        let label = self.oracle.verify(image)?;
        let detected = match self.detector.as_deref_mut() {
            Some(d) => d.observe(image) == Observation::Detected,
            None => false,
        };
        if detected {
            self.detections += 1;
        }
        Ok((label, detected))
    }

    fn offer(&mut self, point: &RgbGrid, image: Image, l2: f64, linf: f64) {
        self.best_l2 = self.best_l2.min(l2);
        self.best_linf = self.best_linf.min(linf);
        let score = match self.metric {
            Metric::L2 => l2,
            Metric::Linf => linf,
        };
        if score < self.best_score || self.best_point.is_none() {
            self.best_score = score;
            self.best_point = Some(point.clone());
            self.best_image = Some(image);
        }
    }

    fn push(&mut self, clean_query: bool, detected: bool) {
        self.records.push(TraceRecord {
            query: self.oracle.queries(),
            best_l2: self.best_l2,
            best_linf: self.track_linf.then_some(self.best_linf),
            clean_query,
            detected,
        });
    }

    /// Closes the session. The status is `Success` whenever a reportable
    /// adversarial point exists, otherwise `failure`.
    pub fn finish(self, failure: Status) -> AttackTrace {
        let status = if self.best_point.is_some() { Status::Success } else { failure };
        AttackTrace {
            records: self.records,
            best_point: self.best_point,
            best_image: self.best_image,
            status,
            detections: self.detections,
        }
    }
}
