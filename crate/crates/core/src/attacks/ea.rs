//! (1+1) evolution strategy for minimum-norm decision-based attacks.
//!
//! Noise is drawn on a reduced grid with a diagonal covariance, upsampled
//! bilinearly to the search-point size, scaled relative to the current
//! perturbation norm and combined with a pull toward the zero perturbation.
//! A candidate replaces the current point only when it is adversarial and
//! strictly smaller.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::session::QuerySession;
use super::space::SearchSpace;
use crate::error::{Error, Result};
use crate::grid::RgbGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EaConfig {
    /// Reduced noise grid `(height, width)`, three channels.
    pub reduced_dims: [usize; 2],
    /// Noise scale relative to the current perturbation norm.
    pub sigma_coeff: f64,
    /// Initial pull toward the zero perturbation.
    pub mu0: f64,
    /// Decay of the success-rate moving average.
    pub success_decay: f64,
    /// Covariance learning rate.
    pub cc: f64,
    pub target_rate: f64,
    /// Step of the multiplicative `μ` adaptation.
    pub eta: f64,
    pub mu_min: f64,
    pub mu_max: f64,
}

impl Default for EaConfig {
    fn default() -> Self {
        Self {
            reduced_dims: [60, 60],
            sigma_coeff: 0.03,
            mu0: 0.01,
            success_decay: 0.95,
            cc: 0.01,
            target_rate: 0.2,
            eta: 0.01,
            mu_min: 1e-4,
            mu_max: 0.5,
        }
    }
}

impl EaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_coeff > 0.0) {
            return Err(Error::invalid("sigma_coeff must be positive"));
        }
        if self.reduced_dims[0] < 1 || self.reduced_dims[1] < 1 {
            return Err(Error::invalid("reduced dims must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.success_decay) || !(0.0..=1.0).contains(&self.cc) {
            return Err(Error::invalid("decay and learning rates must lie in [0, 1)"));
        }
        if !(self.mu_min > 0.0 && self.mu_min <= self.mu_max) {
            return Err(Error::invalid("need 0 < mu_min ≤ mu_max"));
        }
        Ok(())
    }
}

/// Queries `init` unless it is the session's current point, failing when it
/// is not adversarial.
pub(crate) fn ensure_adversarial(session: &mut QuerySession<'_>, space: &dyn SearchSpace, init: &RgbGrid) -> Result<()> {
    if session.current() == Some(init) {
        return Ok(());
    }
    if !session.query(space, init)?.adversarial {
        return Err(Error::invalid("initial point is not adversarial"));
    }
    session.set_current(init);
    Ok(())
}

/// Final state of an evolution-strategy run.
#[derive(Debug, Clone, PartialEq)]
pub struct EaSummary {
    pub iterations: usize,
    pub accepted: usize,
    pub mu: f64,
    pub final_norm: f64,
}

/// Runs until the oracle budget is spent. Budget exhaustion ends the run
/// normally; a non-adversarial `init` is an invalid argument.
pub fn run_ea(
    session: &mut QuerySession<'_>,
    space: &dyn SearchSpace,
    init: &RgbGrid,
    cfg: &EaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EaSummary> {
    cfg.validate()?;
    let mut summary = EaSummary {
        iterations: 0,
        accepted: 0,
        mu: cfg.mu0.clamp(cfg.mu_min, cfg.mu_max),
        final_norm: space.norm(init),
    };
    match ea_loop(session, space, init, cfg, rng, &mut summary) {
        Ok(()) | Err(Error::BudgetExhausted(_)) => Ok(summary),
        Err(e) => Err(e),
    }
}

fn ea_loop(
    session: &mut QuerySession<'_>,
    space: &dyn SearchSpace,
    init: &RgbGrid,
    cfg: &EaConfig,
    rng: &mut ChaCha8Rng,
    summary: &mut EaSummary,
) -> Result<()> {
    ensure_adversarial(session, space, init)?;
    let (h, w) = space.dims();
    let [rh, rw] = cfg.reduced_dims;
    let n_reduced = rh * rw * 3;
    let scale_per_element = cfg.sigma_coeff / ((h * w * 3) as f64).sqrt();

    let mut current = init.clone();
    let mut current_norm = summary.final_norm;
    let mut cov = vec![1.0f64; n_reduced];
    let mut mu = summary.mu;
    let mut rate = cfg.target_rate;

    while session.remaining() > 0 {
        let z: Vec<f64> = cov
            .iter()
            .map(|c| {
                let g: f64 = rng.sample(StandardNormal);
                g * c.sqrt()
            })
            .collect();
        let noise = RgbGrid::from_vec(rh, rw, z.clone())?.resize_bilinear(h, w);
        let sigma = scale_per_element * current_norm;
        let candidate = current.zip_with(&noise, |c, n| c + sigma * n - mu * c);
        let outcome = session.query(space, &candidate)?;
        summary.iterations += 1;
        let success = outcome.adversarial && outcome.l2 < current_norm;
        if success {
            current = candidate;
            current_norm = outcome.l2;
            summary.accepted += 1;
            summary.final_norm = current_norm;
            session.set_current(&current);
            let mean_sq = z.iter().map(|v| v * v).sum::<f64>() / n_reduced as f64;
            if mean_sq > 0.0 {
                for (c, zi) in cov.iter_mut().zip(&z) {
                    *c = (1.0 - cfg.cc) * *c + cfg.cc * zi * zi / mean_sq;
                }
            }
        }
        rate = cfg.success_decay * rate + (1.0 - cfg.success_decay) * f64::from(u8::from(success));
        mu = (mu * (cfg.eta * (rate - cfg.target_rate)).exp()).clamp(cfg.mu_min, cfg.mu_max);
        summary.mu = mu;
    }
    Ok(())
}
