//! Search-space adapters: map an attack's search point to a query image.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::facemodel::{reconstruct_vertices, AlignmentParams, FaceModel};
use crate::grid::{Image, Mask, RgbGrid, UvTexture};
use crate::renderer::{
    bilinear_taps, image_to_vertex_colors, rasterize, uv_texel_coords, vertex_colors_to_uv, RasterState,
    VertexPositions,
};

/// Lower bound of the clip rule used for dictionary-initialized runs.
pub const FACECLIP_LO: f64 = 0.2;
/// Upper bound of the clip rule used for dictionary-initialized runs.
pub const FACECLIP_HI: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipRule {
    Off,
    /// Clamp modifiable pixels to `[0.2, 0.8]` after rendering.
    FaceClip,
}

/// Maps a search point to a query image in `[0, 1]`.
pub trait SearchSpace: Sync {
    /// Shape `(height, width)` of a search point (three channels).
    fn dims(&self) -> (usize, usize);

    /// The clean attacked image.
    fn x_a(&self) -> &Image;

    /// Pixels the adapter may modify.
    fn support(&self) -> &Mask;

    fn to_image(&self, point: &RgbGrid) -> Image;

    /// A random starting point whose rendering is a uniformly random face
    /// (or image).
    fn dodging_start(&self, rng: &mut ChaCha8Rng) -> RgbGrid;

    fn clip_rule(&self) -> ClipRule;

    fn zero_point(&self) -> RgbGrid {
        let (h, w) = self.dims();
        RgbGrid::zeros(h, w)
    }

    /// Image-space `(ℓ₂, ℓ∞)` size of the perturbation carried by `image`.
    fn image_norms(&self, image: &Image) -> (f64, f64) {
        let mut l2 = 0.0;
        let mut linf = 0.0f64;
        for (a, b) in image.as_slice().iter().zip(self.x_a().as_slice()) {
            let d = a - b;
            l2 += d * d;
            linf = linf.max(d.abs());
        }
        (l2.sqrt(), linf)
    }

    /// `‖to_image(point) − x_A‖₂`.
    fn norm(&self, point: &RgbGrid) -> f64 {
        self.image_norms(&self.to_image(point)).0
    }
}

fn check_unit_range(x_a: &Image) -> Result<()> {
    if x_a.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("x_A must lie in [0, 1]"));
    }
    Ok(())
}

/// Full-resolution pixel perturbations.
#[derive(Debug, Clone)]
pub struct ImageSpace {
    x_a: Image,
    support: Mask,
    clip_rule: ClipRule,
}

/// Pixel-space adapter with `to_image = clip(x_A + point, 0, 1)`.
pub fn make_image_space(x_a: &Image, clip_rule: ClipRule) -> Result<ImageSpace> {
    check_unit_range(x_a)?;
    Ok(ImageSpace {
        x_a: x_a.clone(),
        support: Mask::new(x_a.height(), x_a.width(), true),
        clip_rule,
    })
}

impl ImageSpace {
    pub fn with_clip_rule(&self, clip_rule: ClipRule) -> Self {
        Self {
            clip_rule,
            ..self.clone()
        }
    }
}

impl SearchSpace for ImageSpace {
    fn dims(&self) -> (usize, usize) {
        self.x_a.dims()
    }

    fn x_a(&self) -> &Image {
        &self.x_a
    }

    fn support(&self) -> &Mask {
        &self.support
    }

    fn to_image(&self, point: &RgbGrid) -> Image {
        let (lo, hi) = match self.clip_rule {
            ClipRule::Off => (0.0, 1.0),
            ClipRule::FaceClip => (FACECLIP_LO, FACECLIP_HI),
        };
        self.x_a.zip_with(point, |a, p| (a + p).clamp(0.0, 1.0).clamp(lo, hi))
    }

    fn dodging_start(&self, rng: &mut ChaCha8Rng) -> RgbGrid {
        self.x_a.map(|a| rng.random::<f64>() - a)
    }

    fn clip_rule(&self) -> ClipRule {
        self.clip_rule
    }
}

/// Image → vertex colors → UV texture for one posed face.
pub fn extract_uv_texture(
    image: &Image,
    model: &FaceModel,
    verts: &VertexPositions,
    uv_h: usize,
    uv_w: usize,
) -> UvTexture {
    vertex_colors_to_uv(model, &image_to_vertex_colors(image, verts), uv_h, uv_w)
}

/// UV-texture perturbations rendered additively onto the face.
#[derive(Debug, Clone)]
pub struct UvSpace {
    x_a: Image,
    uv_dims: (usize, usize),
    raster: RasterState,
    verts: VertexPositions,
    /// `(pixel index, slot)` for each covered pixel; slot indexes `taps`.
    pixels: Vec<(usize, usize)>,
    /// Bilinear taps into the texture for each owner vertex in use.
    taps: Vec<[(usize, f64); 4]>,
    t_orig: UvTexture,
    clip_rule: ClipRule,
}

/// UV adapter. The face is rasterized once here and reused for every query.
pub fn make_uv_space(
    x_a: &Image,
    model: &FaceModel,
    params: &AlignmentParams,
    uv_dims: (usize, usize),
    clip_rule: ClipRule,
) -> Result<UvSpace> {
    check_unit_range(x_a)?;
    let (uv_h, uv_w) = uv_dims;
    if uv_h == 0 || uv_w == 0 {
        return Err(Error::invalid("uv dims must be positive"));
    }
    let verts = reconstruct_vertices(model, params)?;
    let raster = rasterize(&verts, model.triangles(), x_a.width(), x_a.height());
    if raster.face_mask().count() == 0 {
        return Err(Error::NoFace);
    }
    let texel = uv_texel_coords(model, uv_h, uv_w);
    let mut slot_of = vec![usize::MAX; model.num_vertices()];
    let mut taps = Vec::new();
    let mut pixels = Vec::with_capacity(raster.face_mask().count());
    for (idx, owner) in raster.owner().iter().enumerate() {
        if let Some(v) = *owner {
            if slot_of[v] == usize::MAX {
                slot_of[v] = taps.len();
                let [x, y] = texel[v];
                taps.push(bilinear_taps(uv_h, uv_w, x, y));
            }
            pixels.push((idx, slot_of[v]));
        }
    }
    let t_orig = extract_uv_texture(x_a, model, &verts, uv_h, uv_w);
    Ok(UvSpace {
        x_a: x_a.clone(),
        uv_dims,
        raster,
        verts,
        pixels,
        taps,
        t_orig,
        clip_rule,
    })
}

impl UvSpace {
    pub fn raster(&self) -> &RasterState {
        &self.raster
    }

    pub fn verts(&self) -> &VertexPositions {
        &self.verts
    }

    /// Texture of the clean face, extracted from `x_A`.
    pub fn t_orig(&self) -> &UvTexture {
        &self.t_orig
    }

    pub fn with_clip_rule(&self, clip_rule: ClipRule) -> Self {
        Self {
            clip_rule,
            ..self.clone()
        }
    }
}

impl SearchSpace for UvSpace {
    fn dims(&self) -> (usize, usize) {
        self.uv_dims
    }

    fn x_a(&self) -> &Image {
        &self.x_a
    }

    fn support(&self) -> &Mask {
        self.raster.face_mask()
    }

    fn to_image(&self, point: &RgbGrid) -> Image {
        let u = point.as_slice();
        let colors: Vec<[f64; 3]> = self
            .taps
            .iter()
            .map(|taps| {
                let mut c = [0.0; 3];
                for &(t, w) in taps {
                    for ch in 0..3 {
                        c[ch] += w * u[t * 3 + ch];
                    }
                }
                c
            })
            .collect();
        let mut out = self.x_a.clone();
        let data = out.as_mut_slice();
        for &(idx, slot) in &self.pixels {
            for ch in 0..3 {
                let v = (data[idx * 3 + ch] + colors[slot][ch]).clamp(0.0, 1.0);
                data[idx * 3 + ch] = match self.clip_rule {
                    ClipRule::Off => v,
                    ClipRule::FaceClip => v.clamp(FACECLIP_LO, FACECLIP_HI),
                };
            }
        }
        out
    }

    fn dodging_start(&self, rng: &mut ChaCha8Rng) -> RgbGrid {
        self.t_orig.map(|t| rng.random::<f64>() - t)
    }

    fn clip_rule(&self) -> ClipRule {
        self.clip_rule
    }

    fn image_norms(&self, image: &Image) -> (f64, f64) {
        let (a, b) = (image.as_slice(), self.x_a.as_slice());
        let mut l2 = 0.0;
        let mut linf = 0.0f64;
        for &(idx, _) in &self.pixels {
            for ch in 0..3 {
                let d = a[idx * 3 + ch] - b[idx * 3 + ch];
                l2 += d * d;
                linf = linf.max(d.abs());
            }
        }
        (l2.sqrt(), linf)
    }
}
