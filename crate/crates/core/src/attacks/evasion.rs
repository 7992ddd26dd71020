//! Noise schedules that keep attack queries from looking alike.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};
use crate::renderer::{background_ratio, RasterState};

/// Noise level of whole-image evasion.
pub const EAR_SIGMA: f64 = 0.02;
/// Background noise level before division by the background ratio.
pub const EAGR_BASE_SIGMA: f64 = 0.01;
pub const DEFAULT_CLEAN_INTERVAL: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvasionMode {
    /// Gaussian noise on every pixel.
    Ear,
    /// Gaussian noise on background pixels only.
    Eagr,
}

/// Per-query noise injection plus the periodic clean-query schedule.
#[derive(Debug, Clone)]
pub struct Evasion {
    mode: EvasionMode,
    interval: usize,
    sigma: f64,
    noise_mask: Mask,
    rng: ChaCha8Rng,
}

impl Evasion {
    /// Whole-image noise for an `height × width` frame.
    pub fn ear(height: usize, width: usize, interval: usize, rng: ChaCha8Rng) -> Result<Self> {
        if interval == 0 {
            return Err(Error::invalid("clean interval must be positive"));
        }
        Ok(Self {
            mode: EvasionMode::Ear,
            interval,
            sigma: EAR_SIGMA,
            noise_mask: Mask::new(height, width, true),
            rng,
        })
    }

    /// Background-only noise with `σ_b = 0.01 / background_ratio`.
    pub fn eagr(raster: &RasterState, interval: usize, rng: ChaCha8Rng) -> Result<Self> {
        if interval == 0 {
            return Err(Error::invalid("clean interval must be positive"));
        }
        let ratio = background_ratio(raster);
        if ratio <= 0.0 {
            return Err(Error::invalid("background-only noise needs a nonempty background"));
        }
        Ok(Self {
            mode: EvasionMode::Eagr,
            interval,
            sigma: EAGR_BASE_SIGMA / ratio,
            noise_mask: raster.face_mask().inverted(),
            rng,
        })
    }

    pub fn mode(&self) -> EvasionMode {
        self.mode
    }

    pub fn interval(&self) -> usize {
        self.interval
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Adds fresh noise to an already clipped image and clips again.
    pub fn apply(&mut self, image: &Image) -> Image {
        let mut out = image.clone();
        for (idx, px) in out.as_mut_slice().chunks_exact_mut(3).enumerate() {
            if self.noise_mask.at(idx) {
                for v in px {
                    let g: f64 = self.rng.sample(StandardNormal);
                    *v = (*v + self.sigma * g).clamp(0.0, 1.0);
                }
            }
        }
        out
    }
}

/// Evasion for a UV-space attack: `Eagr` uses the face raster, `Ear` only its
/// frame size.
pub fn wrap_with_evasion(raster: &RasterState, mode: EvasionMode, interval: usize, rng: ChaCha8Rng) -> Result<Evasion> {
    match mode {
        EvasionMode::Ear => Evasion::ear(raster.height(), raster.width(), interval, rng),
        EvasionMode::Eagr => Evasion::eagr(raster, interval, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renderer::{rasterize, VertexPositions};
    use rand::SeedableRng;

    fn half_raster() -> RasterState {
        // covers the left half of an 8×8 frame
        let v = VertexPositions::new(vec![[0.0, 0.0, 0.0], [4.0, 0.0, 0.0], [4.0, 8.0, 0.0], [0.0, 8.0, 0.0]]);
        rasterize(&v, &[[0, 1, 2], [2, 3, 0]], 8, 8)
    }

    #[test]
    fn eagr_sigma_scales_with_background() {
        let r = half_raster();
        assert_eq!(background_ratio(&r), 0.5);
        let e = Evasion::eagr(&r, 20, ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((e.sigma() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn eagr_leaves_face_pixels_alone() {
        let r = half_raster();
        let mut e = Evasion::eagr(&r, 20, ChaCha8Rng::seed_from_u64(1)).unwrap();
        let img = Image::filled(8, 8, [0.5; 3]);
        let out = e.apply(&img);
        let mut changed = 0;
        for row in 0..8 {
            for col in 0..8 {
                if r.face_mask().get(row, col) {
                    assert_eq!(out.pixel(row, col), img.pixel(row, col));
                } else if out.pixel(row, col) != img.pixel(row, col) {
                    changed += 1;
                }
            }
        }
        assert!(changed > 0);
    }

    #[test]
    fn ear_touches_everything_and_stays_in_range() {
        let mut e = Evasion::ear(8, 8, 20, ChaCha8Rng::seed_from_u64(2)).unwrap();
        let img = Image::filled(8, 8, [0.999; 3]);
        let out = e.apply(&img);
        assert!(out.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(out.as_slice().iter().filter(|&&v| v != 0.999).count() > 150);
    }

    #[test]
    fn full_face_rejects_background_mode() {
        let v = VertexPositions::new(vec![[-1.0, -1.0, 0.0], [20.0, -1.0, 0.0], [-1.0, 20.0, 0.0]]);
        let r = rasterize(&v, &[[0, 1, 2]], 8, 8);
        assert!(Evasion::eagr(&r, 20, ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
