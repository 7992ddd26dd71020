#![allow(dead_code)]

use gada::facemodel::{generate_synthetic_model, FaceModel};
use gada::grid::Image;
use gada::harness::{gen_data, DataConfig, ExperimentConfig, FaceImage, ModelConfig};

pub const SIZE: usize = 32;

pub fn model() -> FaceModel {
    generate_synthetic_model(7, 16, 4, 3).unwrap().quantize_f32()
}

pub fn data_config(n_pairs: usize) -> DataConfig {
    DataConfig {
        n_pairs,
        n_calibration: 20,
        image: [SIZE, SIZE],
        ..DataConfig::default()
    }
}

/// A few posed faces on a 32×32 frame.
pub fn faces(n: usize) -> (FaceModel, Vec<FaceImage>) {
    let model = model();
    let data = gen_data(&model, &data_config(n)).unwrap();
    let faces = data.pairs.into_iter().map(|p| p.left).collect();
    (model, faces)
}

/// Small experiment settings: 32×32 images, 16×16 mesh grid.
pub fn small_config(n_pairs: usize, budget: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        budget,
        budgets: vec![budget / 2, budget],
        model: ModelConfig {
            grid_n: 16,
            n_id: 4,
            n_exp: 3,
            ..ModelConfig::default()
        },
        data: data_config(n_pairs),
        parallel: false,
        ..ExperimentConfig::default()
    };
    cfg.ea.reduced_dims = [16, 16];
    cfg
}

/// `Σ (a − b)` over all channels of pixels in `mask`.
pub fn masked_sum(a: &Image, b: &Image, mask: &gada::grid::Mask) -> f64 {
    a.as_slice()
        .chunks_exact(3)
        .zip(b.as_slice().chunks_exact(3))
        .enumerate()
        .filter(|(i, _)| mask.at(*i))
        .map(|(_, (p, q))| p.iter().zip(q).map(|(x, y)| x - y).sum::<f64>())
        .sum()
}
