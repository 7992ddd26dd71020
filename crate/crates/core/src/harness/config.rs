//! Experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attacks::evasion::DEFAULT_CLEAN_INTERVAL;
use crate::attacks::init::{DEFAULT_MAX_RESAMPLES, IMPERSONATION_ATTEMPTS};
use crate::attacks::{EaConfig, EvasionMode, SfaConfig};
use crate::detector::DetectorConfig;
use crate::dictionary::{FetchPolicy, DEFAULT_K_MAX, DEFAULT_SCALE_FACTOR};
use crate::error::{Error, Result};
use crate::oracle::{SurrogateConfig, VerifierConfig};

/// Attack variants. `G` searches in UV space, `D` warm-starts from the
/// dictionary, `R` adds evasion noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    EA,
    EAD,
    EAG,
    EAGD,
    EAGD1,
    EAGDR,
    SFA,
    SFAD,
    SFAG,
    SFAGD,
    EAR,
    EAGR,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Ea,
    Sfa,
}

impl AttackKind {
    pub const ALL: [AttackKind; 12] = [
        AttackKind::EA,
        AttackKind::EAD,
        AttackKind::EAG,
        AttackKind::EAGD,
        AttackKind::EAGD1,
        AttackKind::EAGDR,
        AttackKind::SFA,
        AttackKind::SFAD,
        AttackKind::SFAG,
        AttackKind::SFAGD,
        AttackKind::EAR,
        AttackKind::EAGR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::EA => "EA",
            AttackKind::EAD => "EAD",
            AttackKind::EAG => "EAG",
            AttackKind::EAGD => "EAGD",
            AttackKind::EAGD1 => "EAGD1",
            AttackKind::EAGDR => "EAGDR",
            AttackKind::SFA => "SFA",
            AttackKind::SFAD => "SFAD",
            AttackKind::SFAG => "SFAG",
            AttackKind::SFAGD => "SFAGD",
            AttackKind::EAR => "EAR",
            AttackKind::EAGR => "EAGR",
        }
    }

    pub fn engine(self) -> Engine {
        match self {
            AttackKind::SFA | AttackKind::SFAD | AttackKind::SFAG | AttackKind::SFAGD => Engine::Sfa,
            _ => Engine::Ea,
        }
    }

    /// Searches in the UV texture space.
    pub fn geometric(self) -> bool {
        matches!(
            self,
            AttackKind::EAG
                | AttackKind::EAGD
                | AttackKind::EAGD1
                | AttackKind::EAGDR
                | AttackKind::SFAG
                | AttackKind::SFAGD
                | AttackKind::EAGR
        )
    }

    pub fn dictionary_policy(self) -> Option<FetchPolicy> {
        match self {
            AttackKind::EAD | AttackKind::EAGD | AttackKind::SFAD | AttackKind::SFAGD => Some(FetchPolicy::Full),
            AttackKind::EAGD1 => Some(FetchPolicy::SingleSlot),
            AttackKind::EAGDR => Some(FetchPolicy::RandomFetch),
            _ => None,
        }
    }

    pub fn evasion(self) -> Option<EvasionMode> {
        match self {
            AttackKind::EAR => Some(EvasionMode::Ear),
            AttackKind::EAGR => Some(EvasionMode::Eagr),
            _ => None,
        }
    }

    pub fn supports(self, mode: Mode) -> bool {
        mode == Mode::Dodging || self.dictionary_policy().is_none()
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown attack {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Dodging,
    Impersonation,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dodging" => Ok(Mode::Dodging),
            "impersonation" => Ok(Mode::Impersonation),
            _ => Err(Error::invalid(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub seed: u64,
    pub grid_n: usize,
    pub n_id: usize,
    pub n_exp: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            grid_n: 48,
            n_id: 10,
            n_exp: 5,
        }
    }
}

/// Synthetic data generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub seed: u64,
    pub n_pairs: usize,
    /// Genuine pairs used to calibrate the verifier threshold (each also
    /// yields one impostor pair).
    pub n_calibration: usize,
    /// Image `(height, width)`.
    pub image: [usize; 2],
    /// Face half-width in pixels relative to the image width.
    pub face_scale: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 11,
            n_pairs: 20,
            n_calibration: 100,
            image: [48, 48],
            face_scale: 0.375,
        }
    }
}

/// Benign traffic used to calibrate the detector: bursts of frames from a
/// static camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenignConfig {
    pub seed: u64,
    pub sessions: usize,
    pub frames_per_session: usize,
    /// Per-pixel sensor noise.
    pub sensor_noise: f64,
}

impl Default for BenignConfig {
    fn default() -> Self {
        Self {
            seed: 23,
            sessions: 3,
            frames_per_session: 60,
            sensor_noise: 0.008,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DictionarySettings {
    pub scale_factor: f64,
    pub k_max: usize,
}

impl Default for DictionarySettings {
    fn default() -> Self {
        Self {
            scale_factor: DEFAULT_SCALE_FACTOR,
            k_max: DEFAULT_K_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub attack: AttackKind,
    pub mode: Mode,
    /// Per-image query budget.
    pub budget: usize,
    /// Budgets at which the best norm is reported.
    pub budgets: Vec<usize>,
    /// Norm levels for the queries-to-norm metric.
    pub thresholds: Vec<f64>,
    /// Attack randomness.
    pub seed: u64,
    /// UV texture `(height, width)`; defaults to the image size.
    pub uv: Option<[usize; 2]>,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub verifier: VerifierConfig,
    /// Calibrate the verifier threshold on generated data instead of using
    /// `verifier.threshold`.
    pub calibrate_verifier: bool,
    pub surrogate: SurrogateConfig,
    pub ea: EaConfig,
    pub sfa: SfaConfig,
    pub detector: DetectorConfig,
    /// Run every query through a stateful detector.
    pub detection: bool,
    /// Derive the detector threshold from benign traffic instead of using
    /// `detector.threshold`.
    pub calibrate_detector: bool,
    pub benign: BenignConfig,
    pub dictionary: DictionarySettings,
    pub evasion_interval: usize,
    pub max_resamples: usize,
    pub impersonation_attempts: usize,
    /// Attack images concurrently when the variant allows it.
    pub parallel: bool,
    pub out_dir: Option<PathBuf>,
    pub dict_path: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            attack: AttackKind::EAG,
            mode: Mode::Dodging,
            budget: 10_000,
            budgets: vec![1000, 2000, 5000, 10_000],
            thresholds: vec![4.0, 2.0],
            seed: 0,
            uv: None,
            model: ModelConfig::default(),
            data: DataConfig::default(),
            verifier: VerifierConfig::default(),
            calibrate_verifier: true,
            surrogate: SurrogateConfig::default(),
            ea: EaConfig {
                reduced_dims: [26, 26],
                ..EaConfig::default()
            },
            sfa: SfaConfig::default(),
            detector: DetectorConfig::default(),
            detection: false,
            calibrate_detector: true,
            benign: BenignConfig::default(),
            dictionary: DictionarySettings::default(),
            evasion_interval: DEFAULT_CLEAN_INTERVAL,
            max_resamples: DEFAULT_MAX_RESAMPLES,
            impersonation_attempts: IMPERSONATION_ATTEMPTS,
            parallel: true,
            out_dir: None,
            dict_path: None,
        }
    }
}

impl ExperimentConfig {
    pub fn uv_dims(&self) -> (usize, usize) {
        let [h, w] = self.uv.unwrap_or(self.data.image);
        (h, w)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.attack.supports(self.mode) {
            return Err(Error::invalid(format!(
                "{} uses the dictionary and cannot run in impersonation mode",
                self.attack
            )));
        }
        if self.budget == 0 {
            return Err(Error::invalid("budget must be positive"));
        }
        if self.data.n_pairs == 0 {
            return Err(Error::invalid("n_pairs must be at least 1"));
        }
        let [h, w] = self.data.image;
        let (uh, uw) = self.uv_dims();
        if h == 0 || w == 0 || uh == 0 || uw == 0 {
            return Err(Error::invalid("image and uv dims must be positive"));
        }
        self.ea.validate()?;
        self.sfa.validate()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for k in AttackKind::ALL {
            assert_eq!(k.name().parse::<AttackKind>().unwrap(), k);
        }
        assert!("XYZ".parse::<AttackKind>().is_err());
    }

    #[test]
    fn impersonation_excludes_dictionary_variants() {
        let cfg = ExperimentConfig {
            attack: AttackKind::EAGD,
            mode: Mode::Impersonation,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let ok = ExperimentConfig {
            attack: AttackKind::EAG,
            mode: Mode::Impersonation,
            ..ExperimentConfig::default()
        };
        ok.validate().unwrap();
    }

    #[test]
    fn config_json_round_trip_and_defaults() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"attack":"SFAG","budget":500}"#).unwrap();
        assert_eq!(partial.attack, AttackKind::SFAG);
        assert_eq!(partial.budget, 500);
        assert_eq!(partial.budgets, vec![1000, 2000, 5000, 10_000]);
    }
}
