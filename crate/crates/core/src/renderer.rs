//! Software rasterizer for the posed face mesh.
//!
//! Pixel `(row, col)` is sampled at its center `(col + 0.5, row + 0.5)`. A
//! center is inside a triangle when all three barycentric coordinates are
//! `≥ 0`; zero-area triangles cover nothing. Among covering triangles the one
//! with the largest interpolated depth wins; on equal depth the lower
//! triangle index keeps the pixel.

use std::path::Path;

use crate::error::{Error, Result};
use crate::facemodel::FaceModel;
use crate::grid::{lerp_taps, Image, Mask, RgbGrid, UvTexture};

/// Depth stored where no triangle covers the pixel.
pub const ZBUFFER_SENTINEL: f64 = -1e8;

/// Posed vertices: `x`, `y` in pixels, `z` depth (larger is closer).
#[derive(Debug, Clone, PartialEq)]
pub struct VertexPositions {
    positions: Vec<[f64; 3]>,
}

impl VertexPositions {
    pub fn new(positions: Vec<[f64; 3]>) -> Self {
        Self { positions }
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Projected 2D coordinates.
    pub fn xy(&self) -> Vec<[f64; 2]> {
        self.positions.iter().map(|p| [p[0], p[1]]).collect()
    }
}

/// Per-vertex additive RGB values.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexColors {
    colors: Vec<[f64; 3]>,
}

impl VertexColors {
    pub fn new(colors: Vec<[f64; 3]>) -> Self {
        Self { colors }
    }

    pub fn uniform(n: usize, color: [f64; 3]) -> Self {
        Self::new(vec![color; n])
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }
}

/// Result of rasterizing one scene.
///
/// Besides the z-buffer, owner (first vertex of the winning triangle) and
/// face mask, the winning triangle index and its barycentric weights are kept
/// for interpolated shading.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterState {
    height: usize,
    width: usize,
    zbuffer: Vec<f64>,
    owner: Vec<Option<usize>>,
    triangle: Vec<Option<usize>>,
    barycentric: Vec<[f64; 3]>,
    face_mask: Mask,
}

impl RasterState {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn zbuffer(&self) -> &[f64] {
        &self.zbuffer
    }

    /// Owner vertex per pixel, row-major.
    pub fn owner(&self) -> &[Option<usize>] {
        &self.owner
    }

    /// Winning triangle index per pixel, row-major.
    pub fn triangle(&self) -> &[Option<usize>] {
        &self.triangle
    }

    /// Barycentric weights of the pixel center in its winning triangle.
    pub fn barycentric(&self) -> &[[f64; 3]] {
        &self.barycentric
    }

    pub fn face_mask(&self) -> &Mask {
        &self.face_mask
    }
}

#[inline]
fn orient(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Barycentric weights of `p` in triangle `(a, b, c)`, or `None` for a
/// zero-area triangle.
#[inline]
pub fn barycentric(a: [f64; 2], b: [f64; 2], c: [f64; 2], p: [f64; 2]) -> Option<[f64; 3]> {
    let area = orient(a, b, c);
    if area == 0.0 {
        return None;
    }
    Some([orient(b, c, p) / area, orient(c, a, p) / area, orient(a, b, p) / area])
}

/// Z-buffered rasterization of `triangles` over a `width × height` frame.
pub fn rasterize(verts: &VertexPositions, triangles: &[[usize; 3]], width: usize, height: usize) -> RasterState {
    let n = width * height;
    let mut zbuffer = vec![ZBUFFER_SENTINEL; n];
    let mut triangle = vec![None; n];
    let mut bary = vec![[0.0; 3]; n];
    let pos = verts.positions();

    for (t, tri) in triangles.iter().enumerate() {
        let [p0, p1, p2] = tri.map(|i| pos[i]);
        let (a, b, c) = ([p0[0], p0[1]], [p1[0], p1[1]], [p2[0], p2[1]]);
        if orient(a, b, c) == 0.0 {
            continue;
        }
        let min_x = a[0].min(b[0]).min(c[0]);
        let max_x = a[0].max(b[0]).max(c[0]);
        let min_y = a[1].min(b[1]).min(c[1]);
        let max_y = a[1].max(b[1]).max(c[1]);
        let Some((c0, c1)) = span(min_x, max_x, width) else { continue };
        let Some((r0, r1)) = span(min_y, max_y, height) else { continue };
        for row in r0..=r1 {
            let py = row as f64 + 0.5;
            for col in c0..=c1 {
                let p = [col as f64 + 0.5, py];
                let Some(l) = barycentric(a, b, c, p) else { continue };
                if l[0] < 0.0 || l[1] < 0.0 || l[2] < 0.0 {
                    continue;
                }
                let depth = l[0] * p0[2] + l[1] * p1[2] + l[2] * p2[2];
                let idx = row * width + col;
                if depth > zbuffer[idx] {
                    zbuffer[idx] = depth;
                    triangle[idx] = Some(t);
                    bary[idx] = l;
                }
            }
        }
    }

    let owner = triangle.iter().map(|t| t.map(|t| triangles[t][0])).collect();
    let face_mask = Mask::from_vec(height, width, triangle.iter().map(Option::is_some).collect())
        .expect("mask dims match frame");
    RasterState {
        height,
        width,
        zbuffer,
        owner,
        triangle,
        barycentric: bary,
        face_mask,
    }
}

/// Pixel indices whose centers `i + 0.5` fall inside `[lo, hi]`.
fn span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    if !(lo.is_finite() && hi.is_finite()) || n == 0 {
        return None;
    }
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    if first > last {
        return None;
    }
    Some((first as usize, last as usize))
}

fn check_dims(image: &Image, raster: &RasterState) -> Result<()> {
    if image.height() != raster.height || image.width() != raster.width {
        return Err(Error::invalid(format!(
            "image {}x{} does not match raster {}x{}",
            image.height(),
            image.width(),
            raster.height,
            raster.width
        )));
    }
    Ok(())
}

/// Adds the owner vertex's color to every covered pixel (flat first-vertex
/// coloring). No range clipping.
pub fn render_additive(image: &Image, raster: &RasterState, colors: &VertexColors) -> Result<Image> {
    check_dims(image, raster)?;
    let mut out = image.clone();
    let data = out.as_mut_slice();
    for (idx, owner) in raster.owner.iter().enumerate() {
        if let Some(v) = owner {
            let c = colors.colors()[*v];
            for ch in 0..3 {
                data[idx * 3 + ch] += c[ch];
            }
        }
    }
    Ok(out)
}

/// Replaces covered pixels with barycentric-interpolated vertex colors.
pub fn render_shaded(
    background: &Image,
    raster: &RasterState,
    triangles: &[[usize; 3]],
    colors: &VertexColors,
) -> Result<Image> {
    check_dims(background, raster)?;
    let mut out = background.clone();
    let data = out.as_mut_slice();
    for (idx, tri) in raster.triangle.iter().enumerate() {
        if let Some(t) = tri {
            let c = interpolate(colors.colors(), triangles[*t], raster.barycentric[idx]);
            data[idx * 3..idx * 3 + 3].copy_from_slice(&c);
        }
    }
    Ok(out)
}

#[inline]
fn interpolate(colors: &[[f64; 3]], tri: [usize; 3], l: [f64; 3]) -> [f64; 3] {
    let [c0, c1, c2] = tri.map(|v| colors[v]);
    std::array::from_fn(|ch| l[0] * c0[ch] + l[1] * c1[ch] + l[2] * c2[ch])
}

/// Bilinear interpolation at continuous `(x, y)` coordinates, texel `(r, c)`
/// centered at `(c + 0.5, r + 0.5)`. Coordinates outside the grid are
/// clamped to the border.
pub fn bilinear_sample(grid: &RgbGrid, coords: &[[f64; 2]]) -> Vec<[f64; 3]> {
    coords
        .iter()
        .map(|&[x, y]| {
            let taps = bilinear_taps(grid.height(), grid.width(), x, y);
            let mut out = [0.0; 3];
            for (idx, w) in taps {
                let p = grid.pixel(idx / grid.width(), idx % grid.width());
                for ch in 0..3 {
                    out[ch] += w * p[ch];
                }
            }
            out
        })
        .collect()
}

/// The four `(flat pixel index, weight)` taps of a bilinear sample.
pub(crate) fn bilinear_taps(height: usize, width: usize, x: f64, y: f64) -> [(usize, f64); 4] {
    let (x0, x1, tx) = lerp_taps(x - 0.5, width);
    let (y0, y1, ty) = lerp_taps(y - 0.5, height);
    [
        (y0 * width + x0, (1.0 - tx) * (1.0 - ty)),
        (y0 * width + x1, tx * (1.0 - ty)),
        (y1 * width + x0, (1.0 - tx) * ty),
        (y1 * width + x1, tx * ty),
    ]
}

/// Texel-space coordinates of every vertex for a `uv_h × uv_w` texture.
pub fn uv_texel_coords(model: &FaceModel, uv_h: usize, uv_w: usize) -> Vec<[f64; 2]> {
    model
        .uv_coords()
        .iter()
        .map(|&[u, v]| [u * uv_w as f64, v * uv_h as f64])
        .collect()
}

/// Samples a UV texture at every vertex's UV coordinate.
pub fn uv_to_vertex_colors(model: &FaceModel, texture: &UvTexture) -> VertexColors {
    let coords = uv_texel_coords(model, texture.height(), texture.width());
    VertexColors::new(bilinear_sample(texture, &coords))
}

/// Samples an image at every vertex's projected position.
pub fn image_to_vertex_colors(image: &Image, verts: &VertexPositions) -> VertexColors {
    VertexColors::new(bilinear_sample(image, &verts.xy()))
}

/// Paints vertex colors into UV space: the mesh is rasterized at its UV
/// coordinates with equal depth and each covered texel receives the
/// barycentric interpolation of its triangle's vertex colors. Uncovered
/// texels stay 0.
pub fn vertex_colors_to_uv(model: &FaceModel, colors: &VertexColors, uv_h: usize, uv_w: usize) -> UvTexture {
    let raster = uv_raster(model, uv_h, uv_w);
    render_shaded(&UvTexture::zeros(uv_h, uv_w), &raster, model.triangles(), colors)
        .expect("uv raster matches texture dims")
}

/// Rasterization of the mesh laid out flat in UV texel space.
pub fn uv_raster(model: &FaceModel, uv_h: usize, uv_w: usize) -> RasterState {
    let verts = VertexPositions::new(
        uv_texel_coords(model, uv_h, uv_w)
            .into_iter()
            .map(|[x, y]| [x, y, 0.0])
            .collect(),
    );
    rasterize(&verts, model.triangles(), uv_w, uv_h)
}

/// Fraction of pixels not covered by the face.
pub fn background_ratio(raster: &RasterState) -> f64 {
    let total = raster.height * raster.width;
    if total == 0 {
        return 0.0;
    }
    (total - raster.face_mask.count()) as f64 / total as f64
}

/// Writes an 8-bit RGB PNG for inspection. Values are clipped to `[0, 1]`.
pub fn save_png(grid: &RgbGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = grid
        .as_slice()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::RgbImage::from_raw(grid.width() as u32, grid.height() as u32, bytes)
        .ok_or_else(|| Error::invalid("png buffer size mismatch"))?
        .save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}
