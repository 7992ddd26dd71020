mod common;

use gada::attacks::{
    init_dodging, init_impersonation, make_image_space, make_uv_space, run_ea, run_sfa, ClipRule, EaConfig, Evasion,
    QuerySession, SearchSpace, SfaConfig,
};
use gada::attacks::{face_texture, Status};
use gada::error::Error;
use gada::facemodel::{reconstruct_vertices, FaceModel};
use gada::harness::FaceImage;
use gada::renderer::{rasterize, render_shaded, VertexColors};
use gada::grid::{Image, RgbGrid, UvTexture};
use gada::harness::median;
use gada::oracle::FnOracle;
use gada::renderer::{bilinear_sample, uv_texel_coords};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{faces, masked_sum, SIZE};

fn non_increasing(records: &[gada::attacks::TraceRecord]) -> bool {
    records.windows(2).all(|w| w[1].best_l2 <= w[0].best_l2)
}

#[test]
fn ea_always_adversarial_contracts() {
    let (_, f) = faces(1);
    let space = make_image_space(&f[0].image, ClipRule::Off).unwrap();
    let cfg = EaConfig {
        reduced_dims: [16, 16],
        mu0: 0.05,
        ..EaConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let init = space.dodging_start(&mut rng);
    let initial = space.norm(&init);
    let mut oracle = FnOracle::new(1, 2000, |_: &Image| 0);
    let mut session = QuerySession::new(&mut oracle);
    run_ea(&mut session, &space, &init, &cfg, &mut rng).unwrap();
    let trace = session.finish(Status::BudgetExhausted);
    assert_eq!(trace.status, Status::Success);
    assert!(trace.queries() <= 2000);
    assert!(non_increasing(&trace.records));
    assert!(trace.final_l2() < 0.1 * initial, "{} vs {}", trace.final_l2(), initial);
}

#[test]
fn ea_median_after_500_iterations_halves_norm() {
    let (_, f) = faces(1);
    let space = make_image_space(&f[0].image, ClipRule::Off).unwrap();
    let cfg = EaConfig {
        reduced_dims: [16, 16],
        ..EaConfig::default()
    };
    let ratios: Vec<f64> = (0..5)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let init = space.dodging_start(&mut rng);
            let mut oracle = FnOracle::new(1, 501, |_: &Image| 0);
            let mut session = QuerySession::new(&mut oracle);
            let s = run_ea(&mut session, &space, &init, &cfg, &mut rng).unwrap();
            assert_eq!(s.iterations, 500);
            s.final_norm / space.norm(&init)
        })
        .collect();
    assert!(median(&ratios) < 0.5, "{ratios:?}");
}

#[test]
fn ea_without_acceptances_keeps_initial_norm() {
    let (_, f) = faces(1);
    let space = make_image_space(&f[0].image, ClipRule::Off).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let init = space.dodging_start(&mut rng);
    let mut calls = 0;
    let mut oracle = FnOracle::new(1, 300, |_: &Image| {
        calls += 1;
        u8::from(calls > 1)
    });
    let mut session = QuerySession::new(&mut oracle);
    let s = run_ea(&mut session, &space, &init, &EaConfig::default(), &mut rng).unwrap();
    assert_eq!(s.accepted, 0);
    let trace = session.finish(Status::BudgetExhausted);
    let initial = space.norm(&init);
    assert_eq!(trace.records.len(), 300);
    assert!(trace.records.iter().all(|r| r.best_l2 == initial));
}

#[test]
fn ea_rejects_non_adversarial_init() {
    let (_, f) = faces(1);
    let space = make_image_space(&f[0].image, ClipRule::Off).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut oracle = FnOracle::new(1, 10, |_: &Image| 1);
    let mut session = QuerySession::new(&mut oracle);
    let init = space.dodging_start(&mut rng);
    let err = run_ea(&mut session, &space, &init, &EaConfig::default(), &mut rng).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn ea_halfspace_oracle_points_reverify() {
    let (model, f) = faces(1);
    let x_a = f[0].image.clone();
    let space = make_uv_space(&x_a, &model, &f[0].params, (SIZE, SIZE), ClipRule::Off).unwrap();
    let mask = space.support().clone();
    let init = UvTexture::filled(SIZE, SIZE, [0.1; 3]);
    let c = 0.5 * masked_sum(&space.to_image(&init), &x_a, &mask);
    assert!(c > 0.0);
    let halfspace = |img: &Image| masked_sum(img, &x_a, &mask) >= c;
    let mut oracle = FnOracle::new(1, 1500, |img: &Image| u8::from(!halfspace(img)));
    let mut session = QuerySession::new(&mut oracle);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = EaConfig {
        reduced_dims: [16, 16],
        ..EaConfig::default()
    };
    let s = run_ea(&mut session, &space, &init, &cfg, &mut rng).unwrap();
    assert!(s.accepted > 0);
    let trace = session.finish(Status::BudgetExhausted);
    assert!(non_increasing(&trace.records));
    let best = trace.best_point.as_ref().unwrap();
    assert!(halfspace(&space.to_image(best)));
    assert!(halfspace(trace.best_image.as_ref().unwrap()));
    assert!(trace.final_l2() < space.norm(&init));
}

#[test]
fn sfa_always_adversarial_shrinks_in_closed_form() {
    let (_, f) = faces(1);
    let space = make_image_space(&f[0].image, ClipRule::Off).unwrap();
    let init = RgbGrid::filled(SIZE, SIZE, [0.2; 3]);
    // init check + sign point + 100 × (shrink, flip)
    let mut oracle = FnOracle::new(1, 202, |_: &Image| 0);
    let mut session = QuerySession::new(&mut oracle);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = run_sfa(&mut session, &space, &init, &SfaConfig::default(), &mut rng).unwrap();
    assert_eq!(s.shrink_trials, 100);
    let mut expected = 0.2;
    for _ in 0..100 {
        expected *= 0.97;
    }
    assert_eq!(s.epsilon, expected);
    assert!((s.epsilon - 0.2 * 0.97f64.powi(100)).abs() < 1e-12);
}

#[test]
fn sfa_never_accepting_keeps_radius_and_shrinks_batch() {
    let (_, f) = faces(1);
    let space = make_image_space(&f[0].image, ClipRule::Off).unwrap();
    let init = RgbGrid::filled(SIZE, SIZE, [0.2; 3]);
    let mut calls = 0;
    let mut oracle = FnOracle::new(1, 400, |_: &Image| {
        calls += 1;
        u8::from(calls > 2)
    });
    let mut session = QuerySession::new(&mut oracle);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = run_sfa(&mut session, &space, &init, &SfaConfig::default(), &mut rng).unwrap();
    assert!(s.started);
    assert_eq!(s.epsilon, 0.2);
    assert_eq!(s.batch, 1.0);
}

#[test]
fn sfa_uv_norms_match_direct_computation() {
    let (model, f) = faces(1);
    let x_a = f[0].image.clone();
    let space = make_uv_space(&x_a, &model, &f[0].params, (SIZE, SIZE), ClipRule::Off).unwrap();
    let init = UvTexture::filled(SIZE, SIZE, [0.05; 3]);
    let mut oracle = FnOracle::new(1, 300, |_: &Image| 0);
    let mut session = QuerySession::new(&mut oracle);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = run_sfa(&mut session, &space, &init, &SfaConfig::default(), &mut rng).unwrap();
    let trace = session.finish(Status::BudgetExhausted);
    let img = trace.best_image.as_ref().unwrap();
    let last = trace.records.last().unwrap();
    // ℓ∞ picks the reported point; the ℓ₂ column is the smallest ℓ₂ seen
    assert!(last.best_l2 <= img.l2_distance(&x_a));
    assert_eq!(last.best_linf, Some(img.linf_distance(&x_a)));
    assert!(img.linf_distance(&x_a) <= s.epsilon + 1e-12);
    let face_px = space.support().count() as f64;
    assert!(img.l2_distance(&x_a) <= s.epsilon * (3.0 * face_px).sqrt() + 1e-9);
}

#[test]
fn dodging_init_examples() {
    let (model, f) = faces(1);
    let x_a = f[0].image.clone();
    let space = make_uv_space(&x_a, &model, &f[0].params, (SIZE, SIZE), ClipRule::Off).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let mut yes = FnOracle::new(1, 100, |_: &Image| 0);
    let mut session = QuerySession::new(&mut yes);
    let p = init_dodging(&mut session, &space, &mut rng, 50).unwrap().unwrap();
    assert_eq!(session.queries(), 1);
    let img = space.to_image(&p);
    for (i, (a, b)) in img.as_slice().chunks_exact(3).zip(x_a.as_slice().chunks_exact(3)).enumerate() {
        if !space.support().at(i) {
            assert_eq!(a, b);
        }
    }

    let mut no = FnOracle::new(1, 100, |_: &Image| 1);
    let mut session = QuerySession::new(&mut no);
    assert!(init_dodging(&mut session, &space, &mut rng, 50).unwrap().is_none());
    assert_eq!(session.queries(), 50);
}

#[test]
fn impersonation_self_swap_is_identity() {
    let (model, f) = faces(1);
    let x = &f[0];
    let space = make_uv_space(&x.image, &model, &x.params, (SIZE, SIZE), ClipRule::Off).unwrap();
    let texture = face_texture(&x.image, &model, &x.params, (SIZE, SIZE)).unwrap();
    let mut oracle = FnOracle::new(0, 10, |_: &Image| 1);
    let mut session = QuerySession::new(&mut oracle);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = init_impersonation(&mut session, &space, &texture, &mut rng, 200).unwrap().unwrap();
    assert!(p.linf_norm() < 1e-12);
    assert!(space.to_image(&p).linf_distance(&x.image) < 1e-6);
}

/// Re-renders `face` with smooth vertex colors given as a function of UV.
fn smooth_face(model: &FaceModel, face: &FaceImage, color: impl Fn(f64, f64) -> [f64; 3]) -> FaceImage {
    let verts = reconstruct_vertices(model, &face.params).unwrap();
    let raster = rasterize(&verts, model.triangles(), SIZE, SIZE);
    let colors = VertexColors::new(model.uv_coords().iter().map(|&[u, v]| color(u, v)).collect());
    FaceImage {
        image: render_shaded(&face.image, &raster, model.triangles(), &colors).unwrap(),
        params: face.params.clone(),
    }
}

#[test]
fn impersonation_swap_renders_source_texture() {
    let (model, f) = faces(2);
    let target = smooth_face(&model, &f[0], |u, v| [0.6 - 0.2 * u, 0.4 + 0.2 * v, 0.5]);
    let source = smooth_face(&model, &f[1], |u, v| {
        [0.3 + 0.4 * u, 0.5 + 0.2 * (std::f64::consts::PI * v).sin(), 0.6 - 0.3 * u * v]
    });
    let (target, source) = (&target, &source);
    let space = make_uv_space(&target.image, &model, &target.params, (SIZE, SIZE), ClipRule::Off).unwrap();
    let t_s = face_texture(&source.image, &model, &source.params, (SIZE, SIZE)).unwrap();
    let mut oracle = FnOracle::new(0, 10, |_: &Image| 1);
    let mut session = QuerySession::new(&mut oracle);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = init_impersonation(&mut session, &space, &t_s, &mut rng, 200).unwrap().unwrap();
    assert_eq!(session.queries(), 1);
    let rendered = space.to_image(&p);

    // expected color: the source texture sampled at each pixel's UV position
    let raster = space.raster();
    let texel = uv_texel_coords(&model, SIZE, SIZE);
    let mask = raster.face_mask();
    let interior = |r: usize, c: usize| {
        (r.saturating_sub(1)..=(r + 1).min(SIZE - 1)).all(|rr| (c.saturating_sub(1)..=(c + 1).min(SIZE - 1)).all(|cc| mask.get(rr, cc)))
    };
    let mut checked = 0;
    for r in 0..SIZE {
        for c in 0..SIZE {
            if !interior(r, c) {
                continue;
            }
            let idx = r * SIZE + c;
            let tri = model.triangles()[raster.triangle()[idx].unwrap()];
            let lam = raster.barycentric()[idx];
            let uv = [0, 1].map(|k| (0..3).map(|j| lam[j] * texel[tri[j]][k]).sum::<f64>());
            // stay clear of the texture border, where bilinear taps clamp
            if uv.iter().any(|t| !(0.15 * SIZE as f64..=0.85 * SIZE as f64).contains(t)) {
                continue;
            }
            let want = bilinear_sample(&t_s, &[uv])[0];
            let got = rendered.pixel(r, c);
            for ch in 0..3 {
                assert!((want[ch] - got[ch]).abs() < 0.1, "pixel ({r},{c}): {want:?} vs {got:?}");
            }
            checked += 1;
        }
    }
    assert!(checked > 50);
}

#[test]
fn impersonation_gives_up_after_200_attempts() {
    let (model, f) = faces(2);
    let space = make_uv_space(&f[0].image, &model, &f[0].params, (SIZE, SIZE), ClipRule::Off).unwrap();
    let t_s = face_texture(&f[1].image, &model, &f[1].params, (SIZE, SIZE)).unwrap();
    let mut oracle = FnOracle::new(0, 1000, |_: &Image| 0);
    let mut session = QuerySession::new(&mut oracle);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(init_impersonation(&mut session, &space, &t_s, &mut rng, 200).unwrap().is_none());
    assert_eq!(session.queries(), 200);
}

#[test]
fn evasion_clean_checks_every_interval() {
    let (_, f) = faces(1);
    let space = make_image_space(&f[0].image, ClipRule::Off).unwrap();
    let evasion = Evasion::ear(SIZE, SIZE, 20, ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut oracle = FnOracle::new(1, 1000, |_: &Image| 0);
    let mut session = QuerySession::new(&mut oracle).with_evasion(evasion);
    let point = RgbGrid::filled(SIZE, SIZE, [0.05; 3]);
    session.set_current(&point);
    for _ in 0..60 {
        session.query(&space, &point).unwrap();
    }
    let clean: Vec<usize> = session.records().iter().filter(|r| r.clean_query).map(|r| r.query).collect();
    // the clean check precedes wrapped queries 20, 40 and 60
    assert_eq!(clean, vec![20, 41, 62]);
    assert_eq!(session.queries(), 63);
    let first_best = session.records().iter().position(|r| r.best_l2.is_finite()).unwrap();
    assert!(session.records()[first_best].clean_query);
}
