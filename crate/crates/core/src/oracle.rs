//! The black-box target and the auxiliary encoders.
//!
//! The verifier embeds an image by masking everything outside a central
//! ellipse, average-pooling to a coarse grid and applying a fixed seeded
//! random projection. Two images match when the squared distance between
//! their normalized features is below the threshold `γ`. Attackers only ever
//! see the resulting hard label through [`HardLabel`].

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};

pub type Feature = Vec<f64>;

/// Settings of the toy verification model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub seed: u64,
    pub feature_dim: usize,
    /// Pooled grid `(rows, cols)`.
    pub pool: [usize; 2],
    /// Ellipse center `(x, y)` relative to the frame.
    pub ellipse_center: [f64; 2],
    /// Ellipse radii `(x, y)` relative to the frame.
    pub ellipse_radii: [f64; 2],
    pub threshold: f64,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            feature_dim: 128,
            pool: [16, 16],
            ellipse_center: [0.5, 0.45],
            ellipse_radii: [0.35, 0.42],
            threshold: 1.0,
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim < 1 {
            return Err(Error::invalid("feature_dim must be at least 1"));
        }
        if self.pool[0] * self.pool[1] < 1 {
            return Err(Error::invalid("pool must have at least one cell"));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::invalid("threshold must be positive"));
        }
        if !(self.ellipse_radii[0] > 0.0 && self.ellipse_radii[1] > 0.0) {
            return Err(Error::invalid("ellipse radii must be positive"));
        }
        Ok(())
    }
}

/// Average-pool plus fixed random projection.
#[derive(Debug, Clone)]
struct Projector {
    pool: [usize; 2],
    /// `dim × (pool rows · pool cols · 3)`, row-major.
    matrix: Vec<f64>,
}

impl Projector {
    fn new(seed: u64, dim: usize, pool: [usize; 2]) -> Self {
        let inputs = pool[0] * pool[1] * 3;
        let std = 1.0 / (inputs as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let matrix = (0..dim * inputs)
            .map(|_| {
                let g: f64 = rng.sample(StandardNormal);
                g * std
            })
            .collect();
        Self { pool, matrix }
    }

    fn project(&self, image: &Image, mask: Option<&Mask>) -> Feature {
        let pooled = match mask {
            Some(m) => {
                let mut masked = image.clone();
                for (idx, px) in masked.as_mut_slice().chunks_exact_mut(3).enumerate() {
                    if !m.at(idx) {
                        px.fill(0.0);
                    }
                }
                masked.resize_area(self.pool[0], self.pool[1])
            }
            None => image.resize_area(self.pool[0], self.pool[1]),
        };
        let x = pooled.as_slice();
        self.matrix
            .chunks_exact(x.len())
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Pixels whose centers fall inside the relative ellipse.
pub fn ellipse_mask(height: usize, width: usize, center: [f64; 2], radii: [f64; 2]) -> Mask {
    let mut m = Mask::new(height, width, false);
    for r in 0..height {
        let y = (r as f64 + 0.5) / height as f64;
        for c in 0..width {
            let x = (c as f64 + 0.5) / width as f64;
            let dx = (x - center[0]) / radii[0];
            let dy = (y - center[1]) / radii[1];
            m.set(r, c, dx * dx + dy * dy <= 1.0);
        }
    }
    m
}

/// The toy face-recognition model.
#[derive(Debug, Clone)]
pub struct Verifier {
    config: VerifierConfig,
    projector: Projector,
}

impl Verifier {
    pub fn new(config: VerifierConfig) -> Result<Self> {
        config.validate()?;
        let projector = Projector::new(config.seed, config.feature_dim, config.pool);
        Ok(Self { config, projector })
    }

    pub fn config(&self) -> &VerifierConfig {
        &self.config
    }

    pub fn threshold(&self) -> f64 {
        self.config.threshold
    }

    /// Same projection with a different threshold.
    pub fn with_threshold(&self, threshold: f64) -> Result<Self> {
        let mut out = self.clone();
        out.config.threshold = threshold;
        out.config.validate()?;
        Ok(out)
    }

    pub fn mask(&self, height: usize, width: usize) -> Mask {
        ellipse_mask(height, width, self.config.ellipse_center, self.config.ellipse_radii)
    }

    pub fn embed(&self, image: &Image) -> Feature {
        let mask = self.mask(image.height(), image.width());
        self.projector.project(image, Some(&mask))
    }

    pub fn distance(&self, a: &Image, b: &Image) -> Result<f64> {
        pair_distance(&self.embed(a), &self.embed(b))
    }
}

fn normalized(f: &[f64]) -> Option<Vec<f64>> {
    let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    (n > 0.0).then(|| f.iter().map(|v| v / n).collect())
}

/// Squared Euclidean distance between L2-normalized features, in `[0, 4]`.
pub fn pair_distance(f1: &[f64], f2: &[f64]) -> Result<f64> {
    if f1.len() != f2.len() {
        return Err(Error::invalid("feature lengths differ"));
    }
    let a = normalized(f1).ok_or(Error::UndefinedFeature)?;
    let b = normalized(f2).ok_or(Error::UndefinedFeature)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Threshold maximizing 0/1 accuracy of the rule "genuine iff distance < γ".
///
/// Every threshold inside one gap between consecutive distinct distances
/// makes the same predictions; the first gap with the best accuracy wins and
/// its midpoint is returned. The gap below the smallest distance is
/// `(0, d_min]` and the gap above the largest is `(d_max, 4]`. Returns
/// `(γ, accuracy)`.
pub fn calibrate_threshold(distances: &[f64], genuine: &[bool]) -> Result<(f64, f64)> {
    if distances.is_empty() || distances.len() != genuine.len() {
        return Err(Error::invalid("need equally long, nonempty distance and label lists"));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::invalid("distances must be finite and non-negative"));
    }
    let mut sorted: Vec<f64> = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let mut candidates = Vec::with_capacity(sorted.len() + 1);
    if sorted[0] > 0.0 {
        candidates.push(sorted[0] / 2.0);
    }
    candidates.extend(sorted.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    let top = sorted[sorted.len() - 1];
    candidates.push(if top < 4.0 { (top + 4.0) / 2.0 } else { top + 1.0 });

    let accuracy = |gamma: f64| {
        let correct = distances
            .iter()
            .zip(genuine)
            .filter(|(d, g)| (**d < gamma) == **g)
            .count();
        correct as f64 / distances.len() as f64
    };
    let mut best = (candidates[0], accuracy(candidates[0]));
    for &g in &candidates[1..] {
        let a = accuracy(g);
        if a > best.1 {
            best = (g, a);
        }
    }
    Ok(best)
}

/// Hard-label access to a verification server.
pub trait HardLabel {
    /// Returns 1 when the image matches the enrolled identity, else 0.
    /// Each call consumes one query.
    fn verify(&mut self, image: &Image) -> Result<u8>;
    fn queries(&self) -> usize;
    fn budget(&self) -> usize;
    /// Label of the unperturbed attacked image.
    fn original_label(&self) -> u8;

    fn remaining(&self) -> usize {
        self.budget().saturating_sub(self.queries())
    }
}

/// A budgeted verification endpoint holding one enrolled identity.
#[derive(Debug, Clone)]
pub struct HardLabelOracle {
    verifier: Arc<Verifier>,
    enrolled: Feature,
    original_label: u8,
    queries: usize,
    budget: usize,
}

impl HardLabelOracle {
    /// Enrolls `x_s` and records the label of `x_a` without charging a query.
    pub fn new(verifier: Arc<Verifier>, x_s: &Image, x_a: &Image, budget: usize) -> Result<Self> {
        let enrolled = verifier.embed(x_s);
        if normalized(&enrolled).is_none() {
            return Err(Error::UndefinedFeature);
        }
        let mut oracle = Self {
            verifier,
            enrolled,
            original_label: 0,
            queries: 0,
            budget,
        };
        oracle.original_label = oracle.label(x_a)?;
        Ok(oracle)
    }

    /// A query whose feature vanishes cannot match anyone and is rejected.
    fn label(&self, image: &Image) -> Result<u8> {
        match pair_distance(&self.verifier.embed(image), &self.enrolled) {
            Ok(d) => Ok(u8::from(d < self.verifier.threshold())),
            Err(Error::UndefinedFeature) => Ok(0),
            Err(e) => Err(e),
        }
    }
}

impl HardLabel for HardLabelOracle {
    fn verify(&mut self, image: &Image) -> Result<u8> {
        if self.queries >= self.budget {
            return Err(Error::BudgetExhausted(self.queries));
        }
        self.queries += 1;
        self.label(image)
    }

    fn queries(&self) -> usize {
        self.queries
    }

    fn budget(&self) -> usize {
        self.budget
    }

    fn original_label(&self) -> u8 {
        self.original_label
    }
}

/// A budgeted oracle whose labels come from a closure. Useful for scripted
/// scenarios and for oracles defined directly on the query image.
pub struct FnOracle<F> {
    label: F,
    original_label: u8,
    queries: usize,
    budget: usize,
}

impl<F: FnMut(&Image) -> u8> FnOracle<F> {
    pub fn new(original_label: u8, budget: usize, label: F) -> Self {
        Self {
            label,
            original_label,
            queries: 0,
            budget,
        }
    }
}

impl<F: FnMut(&Image) -> u8> HardLabel for FnOracle<F> {
    fn verify(&mut self, image: &Image) -> Result<u8> {
        if self.queries >= self.budget {
            return Err(Error::BudgetExhausted(self.queries));
        }
        self.queries += 1;
        Ok((self.label)(image))
    }

    fn queries(&self) -> usize {
        self.queries
    }

    fn budget(&self) -> usize {
        self.budget
    }

    fn original_label(&self) -> u8 {
        self.original_label
    }
}

/// Settings of the non-target encoder used for dictionary keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub seed: u64,
    pub feature_dim: usize,
    pub pool: [usize; 2],
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            seed: 0x5eed_0f_face,
            feature_dim: 128,
            pool: [16, 16],
        }
    }
}

/// Unmasked, normalized variant of the verifier's construction.
#[derive(Debug, Clone)]
pub struct SurrogateEncoder {
    projector: Projector,
}

impl SurrogateEncoder {
    pub fn new(config: &SurrogateConfig) -> Result<Self> {
        if config.feature_dim < 1 || config.pool[0] * config.pool[1] < 1 {
            return Err(Error::invalid("surrogate needs a positive dimension and pool"));
        }
        Ok(Self {
            projector: Projector::new(config.seed, config.feature_dim, config.pool),
        })
    }

    /// Unit-norm feature; an image with a vanishing projection maps to the
    /// zero vector.
    pub fn feature(&self, image: &Image) -> Feature {
        let f = self.projector.project(image, None);
        normalized(&f).unwrap_or(f)
    }
}

/// Side of the pooled grid used by [`similarity_embed`].
pub const SIMILARITY_POOL: usize = 8;

/// Normalized `8×8×3` average-pool of the whole image.
pub fn similarity_embed(image: &Image) -> Result<Vec<f64>> {
    let pooled = image.resize_area(SIMILARITY_POOL, SIMILARITY_POOL);
    normalized(pooled.as_slice()).ok_or(Error::ZeroNorm)
}
