//! PCA face model: mean shape plus identity and expression bases, per-vertex
//! UV coordinates and a triangle list.
//!
//! Posed vertices are `R·(S̄ + A_id·α_id + A_exp·α_exp) + [t, 0]`. The first
//! two output components are pixel coordinates (origin top-left, y down); the
//! third is depth, larger meaning closer to the camera. The weak-perspective
//! scale lives inside `R`.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::renderer::VertexPositions;
use crate::tensor_file::{Tensor, TensorFile};

/// A morphable face model.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceModel {
    mean_shape: Vec<[f64; 3]>,
    /// `(3·N_V) × n_id`, row-major; row `3v + axis`.
    basis_id: Vec<f64>,
    /// `(3·N_V) × n_exp`, row-major.
    basis_exp: Vec<f64>,
    n_id: usize,
    n_exp: usize,
    uv_coords: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
}

impl FaceModel {
    pub fn new(
        mean_shape: Vec<[f64; 3]>,
        basis_id: Vec<f64>,
        n_id: usize,
        basis_exp: Vec<f64>,
        n_exp: usize,
        uv_coords: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
    ) -> Result<Self> {
        let n_v = mean_shape.len();
        if n_v < 3 {
            return Err(Error::invalid("a face model needs at least 3 vertices"));
        }
        if n_id < 1 || n_exp < 1 {
            return Err(Error::invalid("basis widths must be at least 1"));
        }
        if triangles.is_empty() {
            return Err(Error::invalid("a face model needs at least one triangle"));
        }
        if basis_id.len() != 3 * n_v * n_id || basis_exp.len() != 3 * n_v * n_exp {
            return Err(Error::invalid("basis size does not match 3·N_V × width"));
        }
        if uv_coords.len() != n_v {
            return Err(Error::invalid("one UV coordinate per vertex required"));
        }
        if uv_coords
            .iter()
            .any(|uv| !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]))
        {
            return Err(Error::invalid("uv coordinates must lie in [0, 1]^2"));
        }
        if triangles.iter().flatten().any(|&i| i >= n_v) {
            return Err(Error::invalid("triangle index out of range"));
        }
        Ok(Self {
            mean_shape,
            basis_id,
            basis_exp,
            n_id,
            n_exp,
            uv_coords,
            triangles,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.mean_shape.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_id(&self) -> usize {
        self.n_id
    }

    pub fn n_exp(&self) -> usize {
        self.n_exp
    }

    pub fn mean_shape(&self) -> &[[f64; 3]] {
        &self.mean_shape
    }

    pub fn basis_id(&self) -> &[f64] {
        &self.basis_id
    }

    pub fn basis_exp(&self) -> &[f64] {
        &self.basis_exp
    }

    pub fn uv_coords(&self) -> &[[f64; 2]] {
        &self.uv_coords
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Unposed shape `S̄ + A_id·α_id + A_exp·α_exp`.
    pub fn shape(&self, alpha_id: &[f64], alpha_exp: &[f64]) -> Result<Vec<[f64; 3]>> {
        if alpha_id.len() != self.n_id || alpha_exp.len() != self.n_exp {
            return Err(Error::invalid(format!(
                "coefficient lengths ({}, {}) do not match basis widths ({}, {})",
                alpha_id.len(),
                alpha_exp.len(),
                self.n_id,
                self.n_exp
            )));
        }
        let mut out = self.mean_shape.clone();
        for (v, p) in out.iter_mut().enumerate() {
            for (axis, coord) in p.iter_mut().enumerate() {
                let row = 3 * v + axis;
                let id_row = &self.basis_id[row * self.n_id..(row + 1) * self.n_id];
                let exp_row = &self.basis_exp[row * self.n_exp..(row + 1) * self.n_exp];
                *coord += dot(id_row, alpha_id) + dot(exp_row, alpha_exp);
            }
        }
        Ok(out)
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::new();
        self.append_tensors(&mut f);
        f
    }

    pub(crate) fn append_tensors(&self, f: &mut TensorFile) {
        let n_v = self.num_vertices();
        let flat: Vec<f64> = self.mean_shape.iter().flatten().copied().collect();
        f.push(Tensor::from_f64("mean_shape", vec![n_v, 3], &flat));
        f.push(Tensor::from_f64("basis_id", vec![3 * n_v, self.n_id], &self.basis_id));
        f.push(Tensor::from_f64("basis_exp", vec![3 * n_v, self.n_exp], &self.basis_exp));
        let uv: Vec<f64> = self.uv_coords.iter().flatten().copied().collect();
        f.push(Tensor::from_f64("uv_coords", vec![n_v, 2], &uv));
        let tris: Vec<i32> = self.triangles.iter().flatten().map(|&i| i as i32).collect();
        f.push(Tensor::i32("triangles", vec![self.triangles.len(), 3], tris));
    }

    pub fn from_tensor_file(f: &TensorFile) -> Result<Self> {
        let mean = f.get("mean_shape")?;
        let n_v = *mean.shape.first().ok_or_else(|| Error::Format("mean_shape shape".into()))?;
        let mean_shape = mean.to_f64()?.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let bid = f.get("basis_id")?;
        let bexp = f.get("basis_exp")?;
        let width = |t: &Tensor| match t.shape.as_slice() {
            [rows, w] if *rows == 3 * n_v => Ok(*w),
            _ => Err(Error::Format(format!("{} has shape {:?}", t.name, t.shape))),
        };
        let uv = f.get("uv_coords")?.to_f64()?.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let triangles = f
            .get("triangles")?
            .as_i32()?
            .chunks_exact(3)
            .map(|c| {
                let idx = |x: i32| usize::try_from(x).map_err(|_| Error::Format("negative index".into()));
                Ok([idx(c[0])?, idx(c[1])?, idx(c[2])?])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(
            mean_shape,
            bid.to_f64()?,
            width(bid)?,
            bexp.to_f64()?,
            width(bexp)?,
            uv,
            triangles,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }

    /// Round all stored reals through `f32`, matching what a saved file holds.
    pub fn quantize_f32(mut self) -> Self {
        let q = |v: &mut f64| *v = *v as f32 as f64;
        self.mean_shape.iter_mut().flatten().for_each(q);
        self.basis_id.iter_mut().for_each(q);
        self.basis_exp.iter_mut().for_each(q);
        self.uv_coords.iter_mut().flatten().for_each(q);
        self
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pose and shape coefficients for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentParams {
    /// Rotation with the weak-perspective scale folded in.
    pub rotation: [[f64; 3]; 3],
    pub alpha_id: Vec<f64>,
    pub alpha_exp: Vec<f64>,
    /// Pixel translation.
    pub t_2d: [f64; 2],
}

impl AlignmentParams {
    /// Identity pose with zero coefficients.
    pub fn neutral(model: &FaceModel) -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            alpha_id: vec![0.0; model.n_id()],
            alpha_exp: vec![0.0; model.n_exp()],
            t_2d: [0.0, 0.0],
        }
    }

    /// `scale · Rz(roll) · Rx(pitch) · Ry(yaw)`, angles in radians.
    pub fn rotation_from_euler(scale: f64, yaw: f64, pitch: f64, roll: f64) -> [[f64; 3]; 3] {
        let (sy, cy) = yaw.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let (sr, cr) = roll.sin_cos();
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rx = [[1.0, 0.0, 0.0], [0.0, cp, -sp], [0.0, sp, cp]];
        let rz = [[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]];
        let m = matmul3(&rz, &matmul3(&rx, &ry));
        m.map(|row| row.map(|v| v * scale))
    }

    pub fn quantize_f32(mut self) -> Self {
        let q = |v: &mut f64| *v = *v as f32 as f64;
        self.rotation.iter_mut().flatten().for_each(q);
        self.alpha_id.iter_mut().for_each(q);
        self.alpha_exp.iter_mut().for_each(q);
        self.t_2d.iter_mut().for_each(q);
        self
    }
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Posed vertex positions `R·S + [t_2d, 0]`.
pub fn reconstruct_vertices(model: &FaceModel, params: &AlignmentParams) -> Result<VertexPositions> {
    let shape = model.shape(&params.alpha_id, &params.alpha_exp)?;
    let r = &params.rotation;
    let positions = shape
        .iter()
        .map(|s| {
            let mut p = [0.0; 3];
            for (i, out) in p.iter_mut().enumerate() {
                *out = r[i][0] * s[0] + r[i][1] * s[1] + r[i][2] * s[2];
            }
            p[0] += params.t_2d[0];
            p[1] += params.t_2d[1];
            p
        })
        .collect();
    Ok(VertexPositions::new(positions))
}

/// Half-axes of the synthetic mean face (x, y, depth) in model units.
const FACE_AXES: [f64; 3] = [1.0, 1.25, 0.75];

/// Deterministic stand-in for a scanned morphable model.
///
/// The mean shape is a front-facing half-ellipsoid (with a small nose bump)
/// sampled on a `grid_n × grid_n` parametric grid. Vertex `i·grid_n + j`
/// carries UV coordinate `(i, j) / (grid_n − 1)`; `u` runs left to right and
/// `v` top to bottom. Each grid cell contributes two triangles. Basis columns
/// are smooth sinusoidal displacement fields normalized to unit length.
pub fn generate_synthetic_model(seed: u64, grid_n: usize, n_id: usize, n_exp: usize) -> Result<FaceModel> {
    if grid_n < 2 {
        return Err(Error::invalid("grid_n must be at least 2"));
    }
    if n_id < 1 || n_exp < 1 {
        return Err(Error::invalid("basis widths must be at least 1"));
    }
    let n_v = grid_n * grid_n;
    let step = 1.0 / (grid_n - 1) as f64;
    let mut uv_coords = Vec::with_capacity(n_v);
    let mut mean_shape = Vec::with_capacity(n_v);
    for i in 0..grid_n {
        for j in 0..grid_n {
            let (u, v) = (i as f64 * step, j as f64 * step);
            uv_coords.push([u, v]);
            mean_shape.push(ellipsoid_point(u, v));
        }
    }

    let mut triangles = Vec::with_capacity(2 * (grid_n - 1) * (grid_n - 1));
    for i in 0..grid_n - 1 {
        for j in 0..grid_n - 1 {
            let v00 = i * grid_n + j;
            let v10 = (i + 1) * grid_n + j;
            let v01 = i * grid_n + j + 1;
            let v11 = (i + 1) * grid_n + j + 1;
            triangles.push([v00, v10, v11]);
            triangles.push([v11, v01, v00]);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let basis_id = sinusoid_basis(&mut rng, &uv_coords, n_id, [1.0, 1.0, 1.5]);
    let basis_exp = sinusoid_basis(&mut rng, &uv_coords, n_exp, [0.6, 1.0, 0.8]);
    FaceModel::new(mean_shape, basis_id, n_id, basis_exp, n_exp, uv_coords, triangles)
}

fn ellipsoid_point(u: f64, v: f64) -> [f64; 3] {
    // square -> disc so the silhouette is elliptical
    let s = 2.0 * u - 1.0;
    let t = 2.0 * v - 1.0;
    let x = s * (1.0 - t * t / 2.0).sqrt();
    let y = t * (1.0 - s * s / 2.0).sqrt();
    let dome = (1.0 - x * x - y * y).max(0.0).sqrt();
    let nose = 0.35 * (-(x * x + (y - 0.05) * (y - 0.05)) / 0.02).exp();
    [
        FACE_AXES[0] * x,
        FACE_AXES[1] * y,
        FACE_AXES[2] * dome + nose,
    ]
}

fn sinusoid_basis(rng: &mut ChaCha8Rng, uv: &[[f64; 2]], width: usize, axis_gain: [f64; 3]) -> Vec<f64> {
    let n_v = uv.len();
    let mut basis = vec![0.0; 3 * n_v * width];
    for k in 0..width {
        let amp: [f64; 3] = std::array::from_fn(|a| {
            let g: f64 = rng.sample(StandardNormal);
            g * axis_gain[a]
        });
        let fu = rng.random_range(1..=2) as f64;
        let fv = rng.random_range(1..=2) as f64;
        let pu = rng.random_range(0.0..2.0 * PI);
        let pv = rng.random_range(0.0..2.0 * PI);
        let mut norm2 = 0.0;
        for (vtx, &[u, v]) in uv.iter().enumerate() {
            let w = (PI * fu * u + pu).sin() * (PI * fv * v + pv).sin();
            for (a, &amp_a) in amp.iter().enumerate() {
                let val = amp_a * w;
                basis[(3 * vtx + a) * width + k] = val;
                norm2 += val * val;
            }
        }
        let norm = norm2.sqrt();
        if norm > 0.0 {
            for row in 0..3 * n_v {
                basis[row * width + k] /= norm;
            }
        }
    }
    basis
}
