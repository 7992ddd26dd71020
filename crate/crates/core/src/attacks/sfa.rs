//! Sign-flip attack for ℓ∞-bounded decision-based search.
//!
//! The perturbation is `ε · upsample_nearest(s)` for a sign pattern `s` on a
//! grid reduced by `reduction_ratio`. Trials alternate between shrinking `ε`
//! and flipping a random batch of signs; either is kept only when the result
//! stays adversarial.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ea::ensure_adversarial;
use super::session::{Metric, QuerySession};
use super::space::SearchSpace;
use crate::error::{Error, Result};
use crate::grid::RgbGrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SfaConfig {
    pub reduction_ratio: usize,
    /// Multiplier proposed by each shrink trial.
    pub shrink: f64,
    /// Growth applied when the initial sign point is not adversarial.
    pub grow: f64,
    pub grow_attempts: usize,
    pub batch_up: f64,
    pub batch_down: f64,
    /// Initial flip batch as a fraction of the sign cells.
    pub batch_init_fraction: f64,
    /// Largest flip batch as a fraction of the sign cells.
    pub batch_max_fraction: f64,
}

impl Default for SfaConfig {
    fn default() -> Self {
        Self {
            reduction_ratio: 2,
            shrink: 0.97,
            grow: 1.5,
            grow_attempts: 5,
            batch_up: 1.1,
            batch_down: 0.9,
            batch_init_fraction: 0.01,
            batch_max_fraction: 0.1,
        }
    }
}

impl SfaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reduction_ratio < 1 {
            return Err(Error::invalid("reduction_ratio must be at least 1"));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::invalid("shrink must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Final state of a sign-flip run.
#[derive(Debug, Clone, PartialEq)]
pub struct SfaSummary {
    pub epsilon: f64,
    pub batch: f64,
    pub shrink_trials: usize,
    pub flip_trials: usize,
    /// False when no adversarial sign point was found near the start.
    pub started: bool,
}

struct SignState {
    cells: (usize, usize),
    signs: Vec<f64>,
}

impl SignState {
    fn point(&self, eps: f64, dims: (usize, usize)) -> RgbGrid {
        RgbGrid::from_vec(self.cells.0, self.cells.1, self.signs.iter().map(|s| s * eps).collect())
            .expect("sign grid dims")
            .resize_nearest(dims.0, dims.1)
    }
}

/// Runs until the budget is spent. The session reports ℓ∞ as its primary
/// metric from here on.
pub fn run_sfa(
    session: &mut QuerySession<'_>,
    space: &dyn SearchSpace,
    init: &RgbGrid,
    cfg: &SfaConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SfaSummary> {
    cfg.validate()?;
    session.set_metric(Metric::Linf);
    let dims = space.dims();
    let r = cfg.reduction_ratio;
    let cells = (dims.0.div_ceil(r), dims.1.div_ceil(r));
    let n_cells = cells.0 * cells.1 * 3;
    let max_batch = (n_cells as f64 * cfg.batch_max_fraction).floor().max(1.0);
    let mut summary = SfaSummary {
        epsilon: init.linf_norm(),
        batch: (n_cells as f64 * cfg.batch_init_fraction).floor().clamp(1.0, max_batch),
        shrink_trials: 0,
        flip_trials: 0,
        started: false,
    };
    if !(summary.epsilon > 0.0) {
        return Err(Error::invalid("initial point has zero magnitude"));
    }
    let signs = init
        .resize_area(cells.0, cells.1)
        .as_slice()
        .iter()
        .map(|v| if *v < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let mut state = SignState { cells, signs };

    let res = (|| -> Result<()> {
        ensure_adversarial(session, space, init)?;
        for attempt in 0..=cfg.grow_attempts {
            if attempt > 0 {
                summary.epsilon *= cfg.grow;
            }
            let p = state.point(summary.epsilon, dims);
            if session.query(space, &p)?.adversarial {
                session.set_current(&p);
                summary.started = true;
                break;
            }
        }
        if !summary.started {
            return Ok(());
        }
        loop {
            if session.remaining() == 0 {
                return Ok(());
            }
            summary.shrink_trials += 1;
            let eps = summary.epsilon * cfg.shrink;
            let p = state.point(eps, dims);
            if session.query(space, &p)?.adversarial {
                summary.epsilon = eps;
                session.set_current(&p);
            }

            if session.remaining() == 0 {
                return Ok(());
            }
            summary.flip_trials += 1;
            let b = (summary.batch.round() as usize).clamp(1, n_cells);
            let picked = sample(rng, n_cells, b);
            let mut flipped = state.signs.clone();
            for i in picked.iter() {
                flipped[i] = -flipped[i];
            }
            let trial = SignState { cells, signs: flipped };
            let p = trial.point(summary.epsilon, dims);
            if session.query(space, &p)?.adversarial {
                state = trial;
                session.set_current(&p);
                summary.batch *= cfg.batch_up;
            } else {
                summary.batch *= cfg.batch_down;
            }
            summary.batch = summary.batch.clamp(1.0, max_batch);
        }
    })();
    match res {
        Ok(()) | Err(Error::BudgetExhausted(_)) => Ok(summary),
        Err(e) => Err(e),
    }
}
