//! Starting points for dodging and impersonation.

use rand_chacha::ChaCha8Rng;

use super::augment::augment_uv;
use super::session::QuerySession;
use super::space::{extract_uv_texture, ImageSpace, SearchSpace, UvSpace};
use crate::error::Result;
use crate::facemodel::{reconstruct_vertices, AlignmentParams, FaceModel};
use crate::grid::{Image, RgbGrid, UvTexture};

pub const DEFAULT_MAX_RESAMPLES: usize = 50;
pub const IMPERSONATION_ATTEMPTS: usize = 200;

/// Draws random starts until one is adversarial. Returns `None` once
/// `max_resamples` queries failed.
pub fn init_dodging(
    session: &mut QuerySession<'_>,
    space: &dyn SearchSpace,
    rng: &mut ChaCha8Rng,
    max_resamples: usize,
) -> Result<Option<RgbGrid>> {
    for _ in 0..max_resamples {
        let point = space.dodging_start(rng);
        if session.query(space, &point)?.adversarial {
            session.set_current(&point);
            return Ok(Some(point));
        }
    }
    Ok(None)
}

/// UV texture of `image` under its own alignment.
pub fn face_texture(
    image: &Image,
    model: &FaceModel,
    params: &AlignmentParams,
    uv_dims: (usize, usize),
) -> Result<UvTexture> {
    let verts = reconstruct_vertices(model, params)?;
    Ok(extract_uv_texture(image, model, &verts, uv_dims.0, uv_dims.1))
}

/// Face swap in UV space: the first candidate `T_s − T_t` renders the
/// source texture onto the target's face; later candidates augment `T_s`.
/// Returns `None` after `attempts` rejected queries.
pub fn init_impersonation(
    session: &mut QuerySession<'_>,
    space: &UvSpace,
    source_texture: &UvTexture,
    rng: &mut ChaCha8Rng,
    attempts: usize,
) -> Result<Option<RgbGrid>> {
    let t_target = space.t_orig();
    for attempt in 0..attempts {
        let t_s = if attempt == 0 { source_texture.clone() } else { augment_uv(source_texture, rng) };
        let point = t_s.sub(t_target);
        if session.query(space, &point)?.adversarial {
            session.set_current(&point);
            return Ok(Some(point));
        }
    }
    Ok(None)
}

/// Pixel-space impersonation start: the source image itself.
pub fn init_image_impersonation(
    session: &mut QuerySession<'_>,
    space: &ImageSpace,
    source: &Image,
) -> Result<Option<RgbGrid>> {
    let point = source.sub(space.x_a());
    if session.query(space, &point)?.adversarial {
        session.set_current(&point);
        return Ok(Some(point));
    }
    Ok(None)
}
