mod common;

use gada::attacks::{make_image_space, make_uv_space, ClipRule, Evasion, QuerySession, SearchSpace, Status};
use gada::dictionary::{scale_until_adversarial, Dictionary};
use gada::grid::{Image, RgbGrid};
use gada::harness::{
    calibrate_verifier, gen_data, report, run_sequence, run_sequence_with, summarize, AttackKind, DataConfig,
    Experiment, ExperimentConfig, Mode,
};
use gada::facemodel::generate_synthetic_model;
use gada::oracle::{FnOracle, Verifier, VerifierConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{faces, small_config, SIZE};

/// Adversarial iff some rendered pixel moved by at least 0.5.
fn max_shift_oracle(x_a: Image) -> impl FnMut(&Image) -> u8 {
    move |img: &Image| u8::from(img.linf_distance(&x_a) < 0.5)
}

fn one_hot(value: f64) -> RgbGrid {
    let mut u = RgbGrid::zeros(SIZE, SIZE);
    u.set_pixel(3, 4, [value, 0.0, 0.0]);
    u
}

#[test]
fn scale_loop_crosses_threshold_at_k5() {
    let x_a = Image::filled(SIZE, SIZE, [0.25; 3]);
    let space = make_image_space(&x_a, ClipRule::Off).unwrap();
    let mut oracle = FnOracle::new(1, 100, max_shift_oracle(x_a.clone()));
    let mut session = QuerySession::new(&mut oracle);
    let out = scale_until_adversarial(&mut session, &space, &one_hot(0.4), 1.05, 30).unwrap();
    assert_eq!((out.k, out.queries), (5, 6));
    assert_eq!(session.queries(), 6);
    let point = out.point.unwrap();
    let below = point.scaled(1.0 / 1.05);
    let mut check = max_shift_oracle(x_a);
    assert_eq!(check(&space.to_image(&point)), 0);
    assert_eq!(check(&space.to_image(&below)), 1);
}

#[test]
fn scale_loop_trivial_cases() {
    let x_a = Image::filled(SIZE, SIZE, [0.25; 3]);
    let space = make_image_space(&x_a, ClipRule::Off).unwrap();
    let mut oracle = FnOracle::new(1, 100, max_shift_oracle(x_a.clone()));
    let mut session = QuerySession::new(&mut oracle);
    let out = scale_until_adversarial(&mut session, &space, &one_hot(0.6), 1.05, 30).unwrap();
    assert_eq!((out.k, out.queries), (0, 1));

    let mut never = FnOracle::new(1, 100, |_: &Image| 1);
    let mut session = QuerySession::new(&mut never);
    let out = scale_until_adversarial(&mut session, &space, &one_hot(0.1), 1.05, 30).unwrap();
    assert!(out.point.is_none());
    assert_eq!(out.queries, 31);
    assert!(scale_until_adversarial(&mut session, &space, &RgbGrid::zeros(SIZE, SIZE), 1.05, 30).is_err());
}

#[test]
fn genuine_pairs_pass_the_calibrated_verifier() {
    let cfg = ExperimentConfig::default();
    let m = &cfg.model;
    let model = generate_synthetic_model(m.seed, m.grid_n, m.n_id, m.n_exp).unwrap().quantize_f32();
    let verifier = Verifier::new(VerifierConfig::default()).unwrap();
    let (gamma, _) = calibrate_verifier(&model, &cfg.data, &verifier).unwrap();
    let data = gen_data(&model, &cfg.data).unwrap();
    let accepted = data
        .pairs
        .iter()
        .filter(|p| verifier.distance(&p.left.image, &p.right.image).unwrap() < gamma)
        .count();
    assert!(accepted as f64 >= 0.9 * data.len() as f64, "{accepted}/{}", data.len());
}

#[test]
fn dataset_views_differ_within_a_pair() {
    let model = common::model();
    let data = gen_data(&model, &DataConfig { n_pairs: 3, image: [SIZE, SIZE], ..DataConfig::default() }).unwrap();
    for p in &data.pairs {
        assert_ne!(p.left.params, p.right.params);
        assert_eq!(p.left.params.alpha_id, p.right.params.alpha_id);
    }
}

#[test]
fn eagr_noise_is_invisible_to_the_verifier() {
    // a large face covers the verifier's ellipse, so background noise
    // cannot change any label
    let (model, f) = faces(1);
    let mut params = f[0].params.clone();
    for row in params.rotation.iter_mut() {
        for v in row.iter_mut() {
            *v *= 1.6;
        }
    }
    let space = make_uv_space(&f[0].image, &model, &params, (SIZE, SIZE), ClipRule::Off).unwrap();
    let verifier = Verifier::new(VerifierConfig::default()).unwrap();
    let ellipse = verifier.mask(SIZE, SIZE);
    let face = space.support();
    assert!((0..SIZE * SIZE).all(|i| !ellipse.at(i) || face.at(i)));
    let mut ev = Evasion::eagr(space.raster(), 20, ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let img = space.to_image(&space.dodging_start(&mut rng));
        let noisy = ev.apply(&img);
        assert_ne!(noisy, img);
        assert_eq!(verifier.embed(&noisy), verifier.embed(&img));
    }
}

fn experiment(cfg: &ExperimentConfig) -> Experiment {
    Experiment::prepare(cfg).unwrap()
}

#[test]
fn dictionary_grows_once_per_image() {
    let mut cfg = small_config(3, 150);
    let exp = experiment(&cfg);
    for (attack, expected) in [(AttackKind::EAGD, 3), (AttackKind::EAGD1, 1), (AttackKind::EAD, 3)] {
        cfg.attack = attack;
        let r = run_sequence(&exp, &cfg, None).unwrap();
        assert!(r.results.iter().all(|x| x.trace.status == Status::Success), "{attack}");
        assert_eq!(r.dictionary.unwrap().len(), expected, "{attack}");
    }
}

#[test]
fn dictionary_is_saved_after_each_image() {
    let mut cfg = small_config(3, 150);
    cfg.attack = AttackKind::EAGD;
    let exp = experiment(&cfg);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dict.tensors");
    let mut sizes = Vec::new();
    let r = run_sequence_with(&exp, &cfg, None, |d| {
        d.save(&path)?;
        sizes.push(Dictionary::load(&path)?.len());
        Ok(())
    })
    .unwrap();
    assert_eq!(sizes, vec![1, 2, 3]);
    let mut saved = r.dictionary.unwrap();
    saved.quantize_f32();
    assert_eq!(Dictionary::load(&path).unwrap(), saved);
}

#[test]
fn impersonation_rejects_dictionary_variants() {
    let mut cfg = small_config(2, 100);
    cfg.mode = Mode::Impersonation;
    cfg.attack = AttackKind::EAGD;
    let exp = experiment(&small_config(2, 100));
    assert!(run_sequence(&exp, &cfg, None).is_err());
}

#[test]
fn sequences_are_deterministic() {
    let mut cfg = small_config(3, 120);
    cfg.parallel = true;
    let exp = experiment(&cfg);
    for attack in [AttackKind::EAG, AttackKind::SFAGD, AttackKind::EAGR] {
        cfg.attack = attack;
        let csv = |r: &gada::harness::SequenceResult| -> Vec<String> {
            r.results.iter().map(|x| report::trace_csv_string(&x.trace.records)).collect()
        };
        let a = run_sequence(&exp, &cfg, None).unwrap();
        let b = run_sequence(&exp, &cfg, None).unwrap();
        assert_eq!(csv(&a), csv(&b), "{attack}");
        assert_eq!(summarize(&a, &cfg), summarize(&b, &cfg));
    }
}

#[test]
fn outputs_round_trip_through_csv() {
    let mut cfg = small_config(2, 100);
    cfg.attack = AttackKind::EA;
    let exp = experiment(&cfg);
    let r = run_sequence(&exp, &cfg, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rows = gada::harness::write_outputs(dir.path(), &r, &cfg).unwrap();
    assert_eq!(report::read_summary(dir.path().join("summary_EA_dodging.csv")).unwrap(), rows);
    let back = report::read_trace(dir.path().join("traces/EA_dodging_img1.csv")).unwrap();
    assert_eq!(back, r.results[1].trace.records);
}
