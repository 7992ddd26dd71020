//! Synthetic face data: identities, posed views, verification pairs and
//! benign traffic.
//!
//! An identity is a 3DMM shape plus an analytic appearance over UV space
//! (skin tone, hair line, brows, eyes, mouth and a few smooth waves). A view
//! poses the face, adds an expression, a lighting change and a random smooth
//! background, then renders with interpolated vertex colors.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{BenignConfig, DataConfig};
use crate::error::{Error, Result};
use crate::facemodel::{reconstruct_vertices, AlignmentParams, FaceModel};
use crate::grid::Image;
use crate::oracle::{calibrate_threshold, Verifier};
use crate::renderer::{rasterize, render_shaded, VertexColors};
use crate::tensor_file::{Tensor, TensorFile};

/// Face colors stay inside this range so the dictionary clip rule never
/// bites on a clean face.
const FACE_LO: f64 = 0.24;
const FACE_HI: f64 = 0.76;

/// Shape coefficient spread per unit of `sqrt(3·N_V)`.
const ID_SPREAD: f64 = 0.06;
const EXP_SPREAD: f64 = 0.012;

#[derive(Debug, Clone, PartialEq)]
struct Blob {
    center: [f64; 2],
    radii: [f64; 2],
    color: [f64; 3],
    strength: f64,
}

impl Blob {
    fn weight(&self, u: f64, v: f64) -> f64 {
        let du = (u - self.center[0]) / self.radii[0];
        let dv = (v - self.center[1]) / self.radii[1];
        self.strength * (-(du * du + dv * dv)).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Wave {
    freq: [f64; 2],
    phase: f64,
    amplitude: [f64; 3],
}

/// Appearance of one person, defined over UV space.
#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    pub alpha_id: Vec<f64>,
    tone: [f64; 3],
    hair: [f64; 3],
    hairline: f64,
    features: Vec<Blob>,
    waves: Vec<Wave>,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

impl Identity {
    pub fn sample(model: &FaceModel, rng: &mut ChaCha8Rng) -> Self {
        let spread = (3.0 * model.num_vertices() as f64).sqrt();
        let alpha_id = (0..model.n_id()).map(|_| gauss(rng) * ID_SPREAD * spread).collect();
        let r = rng.random_range(0.42..0.76);
        let tone = [r, r * rng.random_range(0.6..0.95), r * rng.random_range(0.45..0.9)];
        let hair_level = rng.random_range(0.0..1.0);
        let hair = [
            0.25 + 0.45 * hair_level,
            0.25 + 0.35 * hair_level * rng.random_range(0.6..1.0),
            0.25 + 0.25 * hair_level * rng.random_range(0.3..1.0),
        ];
        let hairline = rng.random_range(0.12..0.26);
        let eye_y = rng.random_range(0.38..0.46);
        let eye_dx = rng.random_range(0.13..0.19);
        let eye_r = [rng.random_range(0.04..0.065), rng.random_range(0.025..0.04)];
        let eye_color = [rng.random_range(0.2..0.4), rng.random_range(0.2..0.35), rng.random_range(0.2..0.4)];
        let brow_y = eye_y - rng.random_range(0.07..0.11);
        let brow_r = [rng.random_range(0.06..0.09), rng.random_range(0.015..0.03)];
        let mouth = Blob {
            center: [0.5 + rng.random_range(-0.02..0.02), rng.random_range(0.70..0.78)],
            radii: [rng.random_range(0.08..0.13), rng.random_range(0.025..0.045)],
            color: [rng.random_range(0.6..0.76), rng.random_range(0.28..0.4), rng.random_range(0.3..0.42)],
            strength: rng.random_range(0.6..0.9),
        };
        let mut features = Vec::new();
        for side in [-1.0, 1.0] {
            features.push(Blob {
                center: [0.5 + side * eye_dx, eye_y],
                radii: eye_r,
                color: eye_color,
                strength: rng.random_range(0.6..0.9),
            });
            features.push(Blob {
                center: [0.5 + side * eye_dx, brow_y],
                radii: brow_r,
                color: hair,
                strength: rng.random_range(0.5..0.85),
            });
        }
        features.push(mouth);
        features.push(Blob {
            center: [0.5, 0.58],
            radii: [rng.random_range(0.03..0.05), rng.random_range(0.06..0.09)],
            color: tone.map(|c| c * 0.85),
            strength: rng.random_range(0.3..0.6),
        });
        let waves = (0..3)
            .map(|_| Wave {
                freq: [rng.random_range(1.0..3.0), rng.random_range(1.0..3.0)],
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude: std::array::from_fn(|_| rng.random_range(-0.1..0.1)),
            })
            .collect();
        Self {
            alpha_id,
            tone,
            hair,
            hairline,
            features,
            waves,
        }
    }

    /// Unlit color at UV coordinate `(u, v)`.
    pub fn color(&self, u: f64, v: f64) -> [f64; 3] {
        let mut c = self.tone;
        for w in &self.waves {
            let s = (2.0 * PI * (w.freq[0] * u + w.freq[1] * v) + w.phase).sin();
            for ch in 0..3 {
                c[ch] += w.amplitude[ch] * s;
            }
        }
        // soft hair band at the top of the face and along the sides
        let edge = v.min(0.5 - (u - 0.5).abs() + 0.35);
        let hair_w = 1.0 / (1.0 + ((edge - self.hairline) / 0.02).exp());
        for ch in 0..3 {
            c[ch] += hair_w * (self.hair[ch] - c[ch]);
        }
        for b in &self.features {
            let wgt = b.weight(u, v).min(1.0);
            for ch in 0..3 {
                c[ch] += wgt * (b.color[ch] - c[ch]);
            }
        }
        c
    }
}

/// One rendered face with its alignment.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage {
    pub image: Image,
    pub params: AlignmentParams,
}

/// Renders one view of `identity` with fresh pose, expression, lighting and
/// background.
pub fn render_view(model: &FaceModel, identity: &Identity, cfg: &DataConfig, rng: &mut ChaCha8Rng) -> Result<FaceImage> {
    let [h, w] = cfg.image;
    let spread = (3.0 * model.num_vertices() as f64).sqrt();
    let scale = cfg.face_scale * w as f64 * rng.random_range(0.965..1.035);
    let params = AlignmentParams {
        rotation: AlignmentParams::rotation_from_euler(
            scale,
            rng.random_range(-0.14..0.14),
            rng.random_range(-0.07..0.07),
            rng.random_range(-0.04..0.04),
        ),
        alpha_id: identity.alpha_id.clone(),
        alpha_exp: (0..model.n_exp()).map(|_| gauss(rng) * EXP_SPREAD * spread).collect(),
        t_2d: [
            0.5 * w as f64 + rng.random_range(-0.7..0.7),
            0.45 * h as f64 + rng.random_range(-0.7..0.7),
        ],
    }
    .quantize_f32();

    let gain = rng.random_range(0.9..1.1);
    let offset = rng.random_range(-0.03..0.03);
    let colors = VertexColors::new(
        model
            .uv_coords()
            .iter()
            .map(|&[u, v]| identity.color(u, v).map(|c| (0.5 + gain * (c - 0.5) + offset).clamp(FACE_LO, FACE_HI)))
            .collect(),
    );

    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.34..0.66));
    let tilt: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.25..0.25));
    let angle = rng.random_range(0.0..2.0 * PI);
    let (sa, ca) = angle.sin_cos();
    let ripple = rng.random_range(0.0..0.08);
    let ripple_f = rng.random_range(1.0..4.0);
    let background = Image::from_fn(h, w, |r, c| {
        let x = (c as f64 + 0.5) / w as f64 - 0.5;
        let y = (r as f64 + 0.5) / h as f64 - 0.5;
        let along = ca * x + sa * y;
        let wave = ripple * (2.0 * PI * ripple_f * (sa * x - ca * y)).sin();
        std::array::from_fn(|ch| (base[ch] + tilt[ch] * along + wave).clamp(0.02, 0.98))
    });

    let verts = reconstruct_vertices(model, &params)?;
    let raster = rasterize(&verts, model.triangles(), w, h);
    if raster.face_mask().count() == 0 {
        return Err(Error::NoFace);
    }
    let image = render_shaded(&background, &raster, model.triangles(), &colors)?.quantize_f32();
    Ok(FaceImage { image, params })
}

/// Two views of the same identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub left: FaceImage,
    pub right: FaceImage,
}

/// Verification pairs plus the impostor permutation: in impersonation
/// mode pair `i` attacks `left[permutation[i]]` against `right[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub pairs: Vec<Pair>,
    pub permutation: Vec<usize>,
    /// Calibrated verifier threshold, when known.
    pub threshold: Option<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_PAIRS: u64 = 1;
const STREAM_PERMUTATION: u64 = 2;
const STREAM_CALIBRATION: u64 = 3;

fn make_pairs(model: &FaceModel, cfg: &DataConfig, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Pair>> {
    (0..n)
        .map(|_| {
            let id = Identity::sample(model, rng);
            Ok(Pair {
                left: render_view(model, &id, cfg, rng)?,
                right: render_view(model, &id, cfg, rng)?,
            })
        })
        .collect()
}

/// Random cyclic permutation (no fixed points when `n > 1`).
fn derangement(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    p
}

/// Deterministic dataset of `cfg.n_pairs` genuine pairs.
pub fn gen_data(model: &FaceModel, cfg: &DataConfig) -> Result<Dataset> {
    if cfg.n_pairs == 0 {
        return Err(Error::invalid("n_pairs must be at least 1"));
    }
    let pairs = make_pairs(model, cfg, cfg.n_pairs, &mut stream_rng(cfg.seed, STREAM_PAIRS))?;
    let permutation = derangement(cfg.n_pairs, &mut stream_rng(cfg.seed, STREAM_PERMUTATION));
    Ok(Dataset {
        pairs,
        permutation,
        threshold: None,
    })
}

/// Genuine pairs `(L_i, R_i)` and impostor pairs `(L_i, R_{i+1})` drawn
/// from identities disjoint from the attack set. Returns distances and
/// genuine flags.
pub fn calibration_distances(model: &FaceModel, cfg: &DataConfig, verifier: &Verifier) -> Result<(Vec<f64>, Vec<bool>)> {
    let n = cfg.n_calibration.max(2);
    let pairs = make_pairs(model, cfg, n, &mut stream_rng(cfg.seed, STREAM_CALIBRATION))?;
    let feats: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .iter()
        .map(|p| (verifier.embed(&p.left.image), verifier.embed(&p.right.image)))
        .collect();
    let mut distances = Vec::with_capacity(2 * n);
    let mut genuine = Vec::with_capacity(2 * n);
    for i in 0..n {
        distances.push(crate::oracle::pair_distance(&feats[i].0, &feats[i].1)?);
        genuine.push(true);
        distances.push(crate::oracle::pair_distance(&feats[i].0, &feats[(i + 1) % n].1)?);
        genuine.push(false);
    }
    Ok((distances, genuine))
}

/// Best-accuracy threshold on the calibration pairs: `(γ, accuracy)`.
pub fn calibrate_verifier(model: &FaceModel, cfg: &DataConfig, verifier: &Verifier) -> Result<(f64, f64)> {
    let (d, g) = calibration_distances(model, cfg, verifier)?;
    calibrate_threshold(&d, &g)
}

/// Benign verification traffic: bursts of frames of one person from a
/// static camera, differing only by sensor noise.
pub fn benign_traffic(model: &FaceModel, data: &DataConfig, cfg: &BenignConfig) -> Result<Vec<Image>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut frames = Vec::with_capacity(cfg.sessions * cfg.frames_per_session);
    for _ in 0..cfg.sessions {
        let id = Identity::sample(model, &mut rng);
        let view = render_view(model, &id, data, &mut rng)?;
        for _ in 0..cfg.frames_per_session {
            frames.push(view.image.map(|v| (v + cfg.sensor_noise * gauss(&mut rng)).clamp(0.0, 1.0)));
        }
    }
    Ok(frames)
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_tensor_file(&self) -> Result<TensorFile> {
        let first = self.pairs.first().ok_or_else(|| Error::invalid("empty dataset"))?;
        let (h, w) = first.left.image.dims();
        let n = self.pairs.len();
        let n_id = first.left.params.alpha_id.len();
        let n_exp = first.left.params.alpha_exp.len();
        let mut f = TensorFile::new();
        for (side, pick) in [("left", 0usize), ("right", 1)] {
            let views: Vec<&FaceImage> = self.pairs.iter().map(|p| if pick == 0 { &p.left } else { &p.right }).collect();
            let images: Vec<f64> = views.iter().flat_map(|v| v.image.as_slice().iter().copied()).collect();
            f.push(Tensor::from_f64(side, vec![n, h, w, 3], &images));
            let rot: Vec<f64> = views.iter().flat_map(|v| v.params.rotation.iter().flatten().copied()).collect();
            f.push(Tensor::from_f64(format!("{side}_rotation"), vec![n, 3, 3], &rot));
            let aid: Vec<f64> = views.iter().flat_map(|v| v.params.alpha_id.iter().copied()).collect();
            f.push(Tensor::from_f64(format!("{side}_alpha_id"), vec![n, n_id], &aid));
            let aexp: Vec<f64> = views.iter().flat_map(|v| v.params.alpha_exp.iter().copied()).collect();
            f.push(Tensor::from_f64(format!("{side}_alpha_exp"), vec![n, n_exp], &aexp));
            let t: Vec<f64> = views.iter().flat_map(|v| v.params.t_2d.iter().copied()).collect();
            f.push(Tensor::from_f64(format!("{side}_t2d"), vec![n, 2], &t));
        }
        f.push(Tensor::i32(
            "permutation",
            vec![n],
            self.permutation.iter().map(|&i| i as i32).collect(),
        ));
        if let Some(t) = self.threshold {
            f.meta.insert("threshold".into(), t.into());
        }
        Ok(f)
    }

    pub fn from_tensor_file(f: &TensorFile) -> Result<Self> {
        let left = f.get("left")?;
        let (n, h, w) = match left.shape.as_slice() {
            [n, h, w, 3] => (*n, *h, *w),
            _ => return Err(Error::Format("left must be N×H×W×3".into())),
        };
        let mut sides = Vec::new();
        for side in ["left", "right"] {
            let images = f.get(side)?.to_f64()?;
            let rot = f.get(&format!("{side}_rotation"))?.to_f64()?;
            let aid_t = f.get(&format!("{side}_alpha_id"))?;
            let aexp_t = f.get(&format!("{side}_alpha_exp"))?;
            let n_id = *aid_t.shape.get(1).ok_or_else(|| Error::Format("alpha_id shape".into()))?;
            let n_exp = *aexp_t.shape.get(1).ok_or_else(|| Error::Format("alpha_exp shape".into()))?;
            let aid = aid_t.to_f64()?;
            let aexp = aexp_t.to_f64()?;
            let t = f.get(&format!("{side}_t2d"))?.to_f64()?;
            let per = h * w * 3;
            if images.len() != n * per || rot.len() != n * 9 || t.len() != n * 2 {
                return Err(Error::Format(format!("{side} tensors disagree on N")));
            }
            let mut views = Vec::with_capacity(n);
            for i in 0..n {
                let r = &rot[i * 9..i * 9 + 9];
                views.push(FaceImage {
                    image: Image::from_vec(h, w, images[i * per..(i + 1) * per].to_vec())?,
                    params: AlignmentParams {
                        rotation: [[r[0], r[1], r[2]], [r[3], r[4], r[5]], [r[6], r[7], r[8]]],
                        alpha_id: aid[i * n_id..(i + 1) * n_id].to_vec(),
                        alpha_exp: aexp[i * n_exp..(i + 1) * n_exp].to_vec(),
                        t_2d: [t[2 * i], t[2 * i + 1]],
                    },
                });
            }
            sides.push(views);
        }
        let right = sides.pop().expect("two sides");
        let left = sides.pop().expect("two sides");
        let permutation = f
            .get("permutation")?
            .as_i32()?
            .iter()
            .map(|&i| usize::try_from(i).map_err(|_| Error::Format("negative permutation index".into())))
            .collect::<Result<Vec<_>>>()?;
        if permutation.len() != n || permutation.iter().any(|&i| i >= n) {
            return Err(Error::Format("bad permutation".into()));
        }
        Ok(Self {
            pairs: left.into_iter().zip(right).map(|(left, right)| Pair { left, right }).collect(),
            permutation,
            threshold: f.meta.get("threshold").and_then(|v| v.as_f64()),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor_file()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facemodel::generate_synthetic_model;

    fn small() -> (FaceModel, DataConfig) {
        let model = generate_synthetic_model(7, 16, 4, 3).unwrap();
        let cfg = DataConfig {
            n_pairs: 4,
            n_calibration: 6,
            image: [32, 32],
            ..DataConfig::default()
        };
        (model, cfg)
    }

    #[test]
    fn generation_is_deterministic() {
        let (model, cfg) = small();
        assert_eq!(gen_data(&model, &cfg).unwrap(), gen_data(&model, &cfg).unwrap());
    }

    #[test]
    fn every_view_has_a_face() {
        let (model, cfg) = small();
        let d = gen_data(&model, &cfg).unwrap();
        for p in &d.pairs {
            for v in [&p.left, &p.right] {
                let verts = reconstruct_vertices(&model, &v.params).unwrap();
                assert!(rasterize(&verts, model.triangles(), 32, 32).face_mask().count() > 0);
                assert!(v.image.as_slice().iter().all(|x| (0.0..=1.0).contains(x)));
            }
        }
    }

    #[test]
    fn permutation_has_no_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..30 {
            let p = derangement(n, &mut rng);
            let mut sorted = p.clone();
            sorted.sort();
            assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            assert!(p.iter().enumerate().all(|(i, &j)| i != j));
        }
    }

    #[test]
    fn tensor_file_round_trip() {
        let (model, cfg) = small();
        let mut d = gen_data(&model, &cfg).unwrap();
        d.threshold = Some(0.25);
        let bytes = d.to_tensor_file().unwrap().to_bytes().unwrap();
        let back = Dataset::from_tensor_file(&TensorFile::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn benign_frames_share_their_session_view() {
        let (model, data) = small();
        let cfg = BenignConfig {
            sessions: 2,
            frames_per_session: 3,
            ..BenignConfig::default()
        };
        let frames = benign_traffic(&model, &data, &cfg).unwrap();
        assert_eq!(frames.len(), 6);
        assert!(frames[0].l2_distance(&frames[1]) < frames[0].l2_distance(&frames[3]));
    }
}
