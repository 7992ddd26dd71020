//! Runs one attack variant over a dataset, threading the dictionary from
//! image to image.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{AttackKind, Engine, ExperimentConfig, Mode};
use super::data::{benign_traffic, calibrate_verifier, gen_data, Dataset, FaceImage};
use crate::attacks::{
    face_texture, init_dodging, init_image_impersonation, init_impersonation, make_image_space, make_uv_space,
    run_ea, run_sfa, AttackTrace, ClipRule, Evasion, EvasionMode, ImageSpace, Metric, QuerySession, SearchSpace,
    Status, UvSpace,
};
use crate::detector::{calibrate, Detector, DetectorConfig};
use crate::dictionary::{scale_until_adversarial, Dictionary};
use crate::error::{Error, Result};
use crate::facemodel::{generate_synthetic_model, FaceModel};
use crate::grid::{Image, RgbGrid};
use crate::oracle::{HardLabel, HardLabelOracle, SurrogateEncoder, Verifier};

/// Everything an attack sequence needs besides the attack settings: the
/// face model, the dataset, the calibrated verifier and detector settings.
pub struct Experiment {
    pub model: FaceModel,
    pub dataset: Dataset,
    pub verifier: Arc<Verifier>,
    pub surrogate: SurrogateEncoder,
    pub detector: DetectorConfig,
}

impl Experiment {
    /// Generates model and data from `cfg` and calibrates the verifier (and
    /// the detector, when detection is on).
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let m = &cfg.model;
        let model = generate_synthetic_model(m.seed, m.grid_n, m.n_id, m.n_exp)?.quantize_f32();
        let dataset = gen_data(&model, &cfg.data)?;
        Self::from_parts(cfg, model, dataset)
    }

    /// Builds an experiment around an existing model and dataset. A threshold
    /// stored with the dataset wins over recalibration.
    pub fn from_parts(cfg: &ExperimentConfig, model: FaceModel, mut dataset: Dataset) -> Result<Self> {
        let base = Verifier::new(cfg.verifier.clone())?;
        let threshold = match dataset.threshold {
            Some(t) => t,
            None if cfg.calibrate_verifier => calibrate_verifier(&model, &cfg.data, &base)?.0,
            None => cfg.verifier.threshold,
        };
        dataset.threshold = Some(threshold);
        let verifier = Arc::new(base.with_threshold(threshold)?);
        let mut detector = cfg.detector.clone();
        if cfg.detection && cfg.calibrate_detector {
            let benign = benign_traffic(&model, &cfg.data, &cfg.benign)?;
            detector.threshold = calibrate(&benign, &detector)?;
        }
        Ok(Self {
            model,
            dataset,
            verifier,
            surrogate: SurrogateEncoder::new(&cfg.surrogate)?,
            detector,
        })
    }

    /// The `(enrolled, attacked)` images of pair `i`, plus the face whose
    /// texture seeds impersonation.
    fn roles(&self, mode: Mode, i: usize) -> (&Image, &FaceImage, Option<&FaceImage>) {
        let pair = &self.dataset.pairs[i];
        match mode {
            Mode::Dodging => (&pair.right.image, &pair.left, None),
            Mode::Impersonation => (
                &pair.right.image,
                &self.dataset.pairs[self.dataset.permutation[i]].left,
                Some(&pair.left),
            ),
        }
    }
}

/// Outcome of one attacked image.
#[derive(Debug, Clone)]
pub struct ImageResult {
    pub image: usize,
    pub trace: AttackTrace,
    /// How the run was started.
    pub init: InitSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitSource {
    None,
    Random,
    Dictionary,
    FaceSwap,
    /// Pixel-space impersonation start, also the fallback for UV variants.
    SourceImage,
}

pub struct SequenceResult {
    pub attack: AttackKind,
    pub mode: Mode,
    pub results: Vec<ImageResult>,
    pub dictionary: Option<Dictionary>,
}

const STREAM_ATTACK: u64 = 0;
const STREAM_EVASION: u64 = 1;
const STREAM_DICTIONARY: u64 = 2;

fn image_rng(seed: u64, image: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (image as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(stream);
    rng
}

/// Either adapter, owned.
enum Space {
    Image(ImageSpace),
    Uv(UvSpace),
}

impl Space {
    fn as_dyn(&self) -> &dyn SearchSpace {
        match self {
            Space::Image(s) => s,
            Space::Uv(s) => s,
        }
    }

    fn clipped(&self) -> Space {
        match self {
            Space::Image(s) => Space::Image(s.with_clip_rule(ClipRule::FaceClip)),
            Space::Uv(s) => Space::Uv(s.with_clip_rule(ClipRule::FaceClip)),
        }
    }
}

/// Attacks pair `i`. Returns the result and, for dodging dictionary
/// variants, the `(key, perturbation)` to store.
pub fn attack_image(
    exp: &Experiment,
    cfg: &ExperimentConfig,
    i: usize,
    dict: Option<&Dictionary>,
) -> Result<(ImageResult, Option<(Vec<f64>, RgbGrid)>)> {
    let attack = cfg.attack;
    let (x_s, target, source) = exp.roles(cfg.mode, i);
    let x_a = &target.image;
    let mut oracle = HardLabelOracle::new(exp.verifier.clone(), x_s, x_a, cfg.budget)?;
    let wanted = match cfg.mode {
        Mode::Dodging => 1,
        Mode::Impersonation => 0,
    };
    let skipped = |status| ImageResult {
        image: i,
        trace: AttackTrace::empty(status),
        init: InitSource::None,
    };
    if oracle.original_label() != wanted {
        return Ok((skipped(Status::Skipped), None));
    }

    let uv_dims = cfg.uv_dims();
    let image_space = make_image_space(x_a, ClipRule::Off)?;
    let mut space = if attack.geometric() {
        match make_uv_space(x_a, &exp.model, &target.params, uv_dims, ClipRule::Off) {
            Ok(s) => Space::Uv(s),
            Err(Error::NoFace) => return Ok((skipped(Status::InitFailed), None)),
            Err(e) => return Err(e),
        }
    } else {
        Space::Image(image_space.clone())
    };

    let mut detector = if cfg.detection { Some(Detector::new(exp.detector.clone())?) } else { None };
    let mut session = QuerySession::new(&mut oracle);
    if let Some(d) = detector.as_mut() {
        session = session.with_detector(d);
    }
    if let Some(mode) = attack.evasion() {
        let rng = image_rng(cfg.seed, i, STREAM_EVASION);
        let evasion = match (mode, &space) {
            (EvasionMode::Eagr, Space::Uv(uv)) => Evasion::eagr(uv.raster(), cfg.evasion_interval, rng)?,
            _ => {
                let (h, w) = x_a.dims();
                Evasion::ear(h, w, cfg.evasion_interval, rng)?
            }
        };
        session = session.with_evasion(evasion);
    }
    if attack.engine() == Engine::Sfa {
        session.set_metric(Metric::Linf);
    }

    let mut rng = image_rng(cfg.seed, i, STREAM_ATTACK);
    let key = attack.dictionary_policy().map(|_| exp.surrogate.feature(x_a));
    let (init, source_kind) = match initialize(&mut session, &mut space, &image_space, exp, cfg, source, dict, key.as_deref(), i, &mut rng) {
        Ok(v) => v,
        Err(Error::BudgetExhausted(_)) => (None, InitSource::None),
        Err(e) => return Err(e),
    };

    if let Some(init) = &init {
        match attack.engine() {
            Engine::Ea => {
                run_ea(&mut session, space.as_dyn(), init, &cfg.ea, &mut rng)?;
            }
            Engine::Sfa => {
                run_sfa(&mut session, space.as_dyn(), init, &cfg.sfa, &mut rng)?;
            }
        }
    }
    let failure = if init.is_some() { Status::BudgetExhausted } else { Status::InitFailed };
    let trace = session.finish(failure);
    let store = match (key, cfg.mode, &trace.best_point) {
        (Some(k), Mode::Dodging, Some(p)) => Some((k, p.clone())),
        _ => None,
    };
    Ok((
        ImageResult {
            image: i,
            trace,
            init: source_kind,
        },
        store,
    ))
}

#[allow(clippy::too_many_arguments)]
fn initialize(
    session: &mut QuerySession<'_>,
    space: &mut Space,
    image_space: &ImageSpace,
    exp: &Experiment,
    cfg: &ExperimentConfig,
    source: Option<&FaceImage>,
    dict: Option<&Dictionary>,
    key: Option<&[f64]>,
    i: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Option<RgbGrid>, InitSource)> {
    match cfg.mode {
        Mode::Dodging => {
            if let (Some(dict), Some(key)) = (dict, key) {
                let mut fetch_rng = image_rng(cfg.seed, i, STREAM_DICTIONARY);
                if let Some(entry) = dict.fetch(key, &mut fetch_rng) {
                    let clipped = space.clipped();
                    let s = &cfg.dictionary;
                    let out =
                        scale_until_adversarial(session, clipped.as_dyn(), &entry.perturbation, s.scale_factor, s.k_max)?;
                    if let Some(p) = out.point {
                        *space = clipped;
                        return Ok((Some(p), InitSource::Dictionary));
                    }
                }
            }
            let p = init_dodging(session, space.as_dyn(), rng, cfg.max_resamples)?;
            let kind = if p.is_some() { InitSource::Random } else { InitSource::None };
            Ok((p, kind))
        }
        Mode::Impersonation => {
            let source = source.ok_or_else(|| Error::invalid("impersonation needs a source face"))?;
            if let Space::Uv(uv) = &*space {
                let texture = face_texture(&source.image, &exp.model, &source.params, cfg.uv_dims())?;
                if let Some(p) = init_impersonation(session, uv, &texture, rng, cfg.impersonation_attempts)? {
                    return Ok((Some(p), InitSource::FaceSwap));
                }
                session.reset_points();
                *space = Space::Image(image_space.clone());
            }
            let p = init_image_impersonation(session, image_space, &source.image)?;
            let kind = if p.is_some() { InitSource::SourceImage } else { InitSource::None };
            Ok((p, kind))
        }
    }
}

/// Attacks every pair in dataset order. Dictionary variants run
/// sequentially and store one entry per successful image; `on_store` is
/// called after each store (e.g. to persist the dictionary).
pub fn run_sequence_with(
    exp: &Experiment,
    cfg: &ExperimentConfig,
    dict: Option<Dictionary>,
    mut on_store: impl FnMut(&Dictionary) -> Result<()>,
) -> Result<SequenceResult> {
    cfg.validate()?;
    let n = exp.dataset.len();
    let policy = cfg.attack.dictionary_policy();
    let mut dictionary = match (policy, dict) {
        (Some(p), Some(d)) if d.policy() == p => Some(d),
        (Some(p), Some(d)) => {
            return Err(Error::invalid(format!(
                "dictionary policy {:?} does not match {} ({:?})",
                d.policy(),
                cfg.attack,
                p
            )))
        }
        (Some(p), None) => Some(Dictionary::new(p)),
        (None, _) => None,
    };

    let results = match dictionary.as_mut() {
        Some(d) => {
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let (res, store) = attack_image(exp, cfg, i, Some(d))?;
                if let Some((key, point)) = store {
                    d.store(key, point)?;
                    on_store(d)?;
                }
                out.push(res);
            }
            out
        }
        None if cfg.parallel => (0..n)
            .into_par_iter()
            .map(|i| attack_image(exp, cfg, i, None).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?,
        None => (0..n).map(|i| attack_image(exp, cfg, i, None).map(|r| r.0)).collect::<Result<Vec<_>>>()?,
    };
    Ok(SequenceResult {
        attack: cfg.attack,
        mode: cfg.mode,
        results,
        dictionary,
    })
}

pub fn run_sequence(exp: &Experiment, cfg: &ExperimentConfig, dict: Option<Dictionary>) -> Result<SequenceResult> {
    run_sequence_with(exp, cfg, dict, |_| Ok(()))
}
