//! Random photometric and flip augmentation of UV textures.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::grid::UvTexture;

/// Luma weights used for the per-texel gray level.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// One draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    /// Added to every channel.
    pub brightness: f64,
    /// Scale about the texture mean.
    pub contrast: f64,
    /// Scale about each texel's gray level.
    pub saturation: f64,
    /// Hue rotation in turns.
    pub hue: f64,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        flip: false,
        brightness: 0.0,
        contrast: 1.0,
        saturation: 1.0,
        hue: 0.0,
    };

    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        Self {
            flip: rng.random_bool(0.5),
            brightness: rng.random_range(-0.2..0.2),
            contrast: rng.random_range(0.8..1.2),
            saturation: rng.random_range(0.8..1.2),
            hue: rng.random_range(-0.05..0.05),
        }
    }

    /// Flip, then brightness, contrast, saturation and hue. Neutral settings
    /// are skipped so they leave the texture bit-identical.
    pub fn apply(&self, texture: &UvTexture) -> UvTexture {
        let mut t = if self.flip { texture.flip_horizontal() } else { texture.clone() };
        if self.brightness != 0.0 {
            t = t.map(|v| v + self.brightness);
        }
        if self.contrast != 1.0 {
            let mean = t.mean();
            t = t.map(|v| mean + self.contrast * (v - mean));
        }
        if self.saturation != 1.0 {
            for px in t.as_mut_slice().chunks_exact_mut(3) {
                let gray = LUMA[0] * px[0] + LUMA[1] * px[1] + LUMA[2] * px[2];
                for v in px.iter_mut() {
                    *v = gray + self.saturation * (*v - gray);
                }
            }
        }
        if self.hue != 0.0 {
            for px in t.as_mut_slice().chunks_exact_mut(3) {
                let (h, s, v) = rgb_to_hsv([px[0], px[1], px[2]]);
                px.copy_from_slice(&hsv_to_rgb((h + self.hue).rem_euclid(1.0), s, v));
            }
        }
        t
    }
}

/// Draws fresh parameters from `rng` and applies them.
pub fn augment_uv(texture: &UvTexture, rng: &mut ChaCha8Rng) -> UvTexture {
    AugmentParams::sample(rng).apply(texture)
}

/// Hue in turns `[0, 1)`, saturation and value.
fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h * 6.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn texture(seed: u64) -> UvTexture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        UvTexture::from_fn(6, 9, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn double_flip_without_jitter_is_identity() {
        let t = texture(1);
        let p = AugmentParams { flip: true, ..AugmentParams::IDENTITY };
        assert_eq!(p.apply(&p.apply(&t)), t);
    }

    #[test]
    fn brightness_shift_on_uniform_texture() {
        let t = UvTexture::filled(4, 4, [0.5; 3]);
        let p = AugmentParams { brightness: 0.1, ..AugmentParams::IDENTITY };
        assert!(p.apply(&t).as_slice().iter().all(|v| (v - 0.6).abs() < 1e-15));
    }

    #[test]
    fn replayed_rng_gives_identical_output() {
        let t = texture(2);
        let a = augment_uv(&t, &mut ChaCha8Rng::seed_from_u64(9));
        let b = augment_uv(&t, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn hsv_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let c: [f64; 3] = [rng.random(), rng.random(), rng.random()];
            let (h, s, v) = rgb_to_hsv(c);
            let back = hsv_to_rgb(h, s, v);
            for ch in 0..3 {
                assert!((back[ch] - c[ch]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hue_rotation_preserves_value_and_saturation() {
        let t = texture(4);
        let p = AugmentParams { hue: 0.04, ..AugmentParams::IDENTITY };
        let out = p.apply(&t);
        for (a, b) in t.as_slice().chunks_exact(3).zip(out.as_slice().chunks_exact(3)) {
            let (_, s0, v0) = rgb_to_hsv([a[0], a[1], a[2]]);
            let (_, s1, v1) = rgb_to_hsv([b[0], b[1], b[2]]);
            assert!((s0 - s1).abs() < 1e-9 && (v0 - v1).abs() < 1e-9);
        }
    }
}
