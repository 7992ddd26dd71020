//! Feature-keyed store of successful perturbations, reused as warm starts.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{QuerySession, SearchSpace};
use crate::error::{Error, Result};
use crate::grid::{RgbGrid, UvTexture};
use crate::tensor_file::{Tensor, TensorFile};

/// Keys closer than this are treated as the same face.
pub const DUPLICATE_DISTANCE: f64 = 1e-9;
pub const DEFAULT_SCALE_FACTOR: f64 = 1.05;
pub const DEFAULT_K_MAX: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchPolicy {
    /// Keep every entry; fetch the nearest key.
    Full,
    /// Keep only the latest entry.
    SingleSlot,
    /// Keep every entry; fetch an exact match or else a random entry.
    RandomFetch,
}

impl FetchPolicy {
    fn as_str(self) -> &'static str {
        match self {
            FetchPolicy::Full => "full",
            FetchPolicy::SingleSlot => "single_slot",
            FetchPolicy::RandomFetch => "random_fetch",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(FetchPolicy::Full),
            "single_slot" => Ok(FetchPolicy::SingleSlot),
            "random_fetch" => Ok(FetchPolicy::RandomFetch),
            other => Err(Error::Format(format!("unknown dictionary policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictEntry {
    pub key: Vec<f64>,
    pub perturbation: UvTexture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    policy: FetchPolicy,
    entries: Vec<DictEntry>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl Dictionary {
    pub fn new(policy: FetchPolicy) -> Self {
        Self {
            policy,
            entries: Vec::new(),
        }
    }

    pub fn policy(&self) -> FetchPolicy {
        self.policy
    }

    pub fn entries(&self) -> &[DictEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn exact_match(&self, key: &[f64]) -> Option<usize> {
        self.entries.iter().position(|e| distance(&e.key, key) < DUPLICATE_DISTANCE)
    }

    /// Adds an entry. A key equal to a stored one replaces that entry; the
    /// single-slot policy always replaces.
    pub fn store(&mut self, key: Vec<f64>, perturbation: UvTexture) -> Result<()> {
        if let Some(first) = self.entries.first() {
            if first.key.len() != key.len() || !first.perturbation.same_dims(&perturbation) {
                return Err(Error::invalid("entry shape differs from stored entries"));
            }
        }
        let entry = DictEntry { key, perturbation };
        match self.policy {
            FetchPolicy::SingleSlot => {
                self.entries.clear();
                self.entries.push(entry);
            }
            FetchPolicy::Full | FetchPolicy::RandomFetch => match self.exact_match(&entry.key) {
                Some(i) => self.entries[i] = entry,
                None => self.entries.push(entry),
            },
        }
        Ok(())
    }

    /// Index of the stored key nearest to `key`, lowest index on ties.
    pub fn nearest(&self, key: &[f64]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let d = distance(&e.key, key);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn fetch(&self, key: &[f64], rng: &mut ChaCha8Rng) -> Option<&DictEntry> {
        if self.entries.is_empty() {
            return None;
        }
        let idx = match self.policy {
            FetchPolicy::Full | FetchPolicy::SingleSlot => self.nearest(key)?,
            FetchPolicy::RandomFetch => match self.exact_match(key) {
                Some(i) => i,
                None => rng.random_range(0..self.entries.len()),
            },
        };
        self.entries.get(idx)
    }

    pub fn to_tensor_file(&self) -> TensorFile {
        let mut f = TensorFile::new();
        let d = self.entries.first().map_or(0, |e| e.key.len());
        let (h, w) = self.entries.first().map_or((0, 0), |e| e.perturbation.dims());
        let keys: Vec<f64> = self.entries.iter().flat_map(|e| e.key.iter().copied()).collect();
        let perts: Vec<f64> = self
            .entries
            .iter()
            .flat_map(|e| e.perturbation.as_slice().iter().copied())
            .collect();
        f.push(Tensor::from_f64("keys", vec![self.entries.len(), d], &keys));
        f.push(Tensor::from_f64("perturbations", vec![self.entries.len(), h, w, 3], &perts));
        f.meta.insert("policy".into(), self.policy.as_str().into());
        f
    }

    pub fn from_tensor_file(f: &TensorFile) -> Result<Self> {
        let policy = f
            .meta
            .get("policy")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Format("dictionary policy missing".into()))?;
        let mut dict = Self::new(FetchPolicy::parse(policy)?);
        let keys = f.get("keys")?;
        let perts = f.get("perturbations")?;
        let (n, d) = match keys.shape.as_slice() {
            [n, d] => (*n, *d),
            _ => return Err(Error::Format("keys must be E×D".into())),
        };
        let (h, w) = match perts.shape.as_slice() {
            [e, h, w, 3] if *e == n => (*h, *w),
            _ => return Err(Error::Format("perturbations must be E×H×W×3".into())),
        };
        let kv = keys.to_f64()?;
        let pv = perts.to_f64()?;
        let per = h * w * 3;
        for i in 0..n {
            dict.entries.push(DictEntry {
                key: kv[i * d..(i + 1) * d].to_vec(),
                perturbation: RgbGrid::from_vec(h, w, pv[i * per..(i + 1) * per].to_vec())?,
            });
        }
        Ok(dict)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_tensor_file().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tensor_file(&TensorFile::load(path)?)
    }

    /// Rounds keys and perturbations through `f32`, as a save/load would.
    pub fn quantize_f32(&mut self) {
        for e in &mut self.entries {
            e.key.iter_mut().for_each(|v| *v = *v as f32 as f64);
            e.perturbation = e.perturbation.quantize_f32();
        }
    }
}

/// Result of [`scale_until_adversarial`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleOutcome {
    /// First adversarial point `u·factor^k`, if any.
    pub point: Option<RgbGrid>,
    /// Number of multiplications applied to the returned point, or the last
    /// tried exponent on failure.
    pub k: usize,
    pub queries: usize,
}

/// Queries `u·factor^k` for `k = 0, 1, …, k_max` and stops at the first
/// adversarial rendering.
pub fn scale_until_adversarial(
    session: &mut QuerySession<'_>,
    space: &dyn SearchSpace,
    u: &RgbGrid,
    factor: f64,
    k_max: usize,
) -> Result<ScaleOutcome> {
    if u.as_slice().iter().all(|&v| v == 0.0) {
        return Err(Error::invalid("cannot scale a zero perturbation"));
    }
    let mut point = u.clone();
    let mut queries = 0;
    for k in 0..=k_max {
        if k > 0 {
            point = point.scaled(factor);
        }
        queries += 1;
        if session.query(space, &point)?.adversarial {
            session.set_current(&point);
            return Ok(ScaleOutcome {
                point: Some(point),
                k,
                queries,
            });
        }
    }
    Ok(ScaleOutcome {
        point: None,
        k: k_max,
        queries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn unit(d: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn tex(v: f64) -> UvTexture {
        UvTexture::filled(2, 2, [v; 3])
    }

    #[test]
    fn store_examples() {
        let mut d = Dictionary::new(FetchPolicy::Full);
        d.store(unit(4, 0), tex(0.1)).unwrap();
        assert_eq!(d.len(), 1);
        d.store(unit(4, 0), tex(0.2)).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.entries()[0].perturbation, tex(0.2));

        let mut s = Dictionary::new(FetchPolicy::SingleSlot);
        s.store(unit(4, 0), tex(0.1)).unwrap();
        s.store(unit(4, 1), tex(0.3)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.entries()[0].key, unit(4, 1));
    }

    #[test]
    fn fetch_nearest_key() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = Dictionary::new(FetchPolicy::Full);
        assert!(d.fetch(&unit(4, 0), &mut rng).is_none());
        for i in 0..3 {
            d.store(unit(4, i), tex(i as f64)).unwrap();
        }
        let n = (0.9f64 * 0.9 + 0.1 * 0.1).sqrt();
        let q = vec![0.9 / n, 0.1 / n, 0.0, 0.0];
        assert_eq!(d.fetch(&q, &mut rng).unwrap().key, unit(4, 0));
    }

    #[test]
    fn random_fetch_prefers_exact_match() {
        let mut d = Dictionary::new(FetchPolicy::RandomFetch);
        for i in 0..4 {
            d.store(unit(4, i), tex(i as f64)).unwrap();
        }
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(d.fetch(&unit(4, 2), &mut rng).unwrap().key, unit(4, 2));
        }
    }

    #[test]
    fn nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mut d = Dictionary::new(FetchPolicy::Full);
            let n = rng.random_range(1..20);
            for _ in 0..n {
                let k: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                d.store(k, tex(0.0)).unwrap();
            }
            let q: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut best = 0;
            for i in 1..d.len() {
                let di: f64 = d.entries()[i].key.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum();
                let db: f64 = d.entries()[best].key.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum();
                if di < db {
                    best = i;
                }
            }
            assert_eq!(d.nearest(&q), Some(best));
        }
    }

    #[test]
    fn tensor_file_round_trip() {
        let mut d = Dictionary::new(FetchPolicy::RandomFetch);
        d.store(vec![0.6, 0.8], tex(0.25)).unwrap();
        d.store(vec![0.8, 0.6], tex(-0.5)).unwrap();
        d.quantize_f32();
        let back = Dictionary::from_tensor_file(
            &TensorFile::from_bytes(&d.to_tensor_file().to_bytes().unwrap()).unwrap(),
        )
        .unwrap();
        assert_eq!(back, d);
    }
}
