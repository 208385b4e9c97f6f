//! Synthetic seed ensembles with a planted gender direction.
//!
//! A shared base matrix is drawn from a standard spherical Gaussian. The
//! pair tokens `m0..m3` get `+gender_strength * u` and `f0..f3` get
//! `-gender_strength * u` for a random unit direction `u`; every third filler
//! token gets the same shift with a random sign. Each seed model is the base
//! plus i.i.d. `N(0, noise_sigma^2)` noise, optionally rotated by its own
//! random orthogonal matrix.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embedding::{align_ensemble, EmbeddingEnsemble, EmbeddingModel, TextFormat};
use crate::error::{Error, Result};
use crate::linalg::{dot, matmul};
use crate::scoring::BasePair;

pub const PAIR_TOKENS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub vocab_size: usize,
    pub dim: usize,
    pub k: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub rotate: bool,
    #[serde(default = "default_strength")]
    pub gender_strength: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_strength() -> f64 {
    1.0
}

impl SynthSpec {
    pub fn new(vocab_size: usize, dim: usize, k: usize, noise_sigma: f64, rotate: bool, gender_strength: f64, seed: u64) -> Self {
        SynthSpec {
            vocab_size,
            dim,
            k,
            noise_sigma,
            rotate,
            gender_strength,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.vocab_size <= self.dim {
            return Err(Error::InvalidArgument(format!(
                "synthetic sizes need vocab_size > dim >= 2 (got vocab_size={}, dim={})",
                self.vocab_size, self.dim
            )));
        }
        if self.vocab_size < 2 * PAIR_TOKENS + 1 {
            return Err(Error::InvalidArgument(format!("vocab_size must be at least {}", 2 * PAIR_TOKENS + 1)));
        }
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!("synthetic ensembles need k >= 2 (got {})", self.k)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) || !self.gender_strength.is_finite() {
            return Err(Error::InvalidArgument("noise_sigma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Token list: the pair tokens followed by fillers `w0000`, `w0001`, ...
pub fn synth_vocab(vocab_size: usize) -> Vec<String> {
    let mut v: Vec<String> = (0..PAIR_TOKENS).map(|i| format!("m{i}")).collect();
    v.extend((0..PAIR_TOKENS).map(|i| format!("f{i}")));
    v.extend((0..vocab_size.saturating_sub(2 * PAIR_TOKENS)).map(|i| format!("w{i:04}")));
    v
}

pub fn synth_base_pairs() -> Vec<BasePair> {
    (0..PAIR_TOKENS)
        .map(|i| BasePair::new(&format!("m{i}"), &format!("f{i}")).expect("distinct tokens"))
        .collect()
}

/// Haar-distributed orthogonal matrix from Gram-Schmidt on a Gaussian draw.
pub fn random_orthogonal(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    loop {
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
        let mut ok = true;
        for _ in 0..dim {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            for _ in 0..2 {
                for b in &rows {
                    let c = dot(b, &v);
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let n = dot(&v, &v).sqrt();
            if n < 1e-8 {
                ok = false;
                break;
            }
            v.iter_mut().for_each(|x| *x /= n);
            rows.push(v);
        }
        if ok {
            return rows.concat();
        }
    }
}

pub fn synth_ensemble(spec: &SynthSpec, algorithm: &str, corpus: &str) -> Result<EmbeddingEnsemble> {
    spec.validate()?;
    let (v, d) = (spec.vocab_size, spec.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut base: Vec<f64> = (0..v * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let un = dot(&u, &u).sqrt();
    u.iter_mut().for_each(|x| *x /= un);
    for i in 0..v {
        let sign = if i < PAIR_TOKENS {
            1.0
        } else if i < 2 * PAIR_TOKENS {
            -1.0
        } else {
            let s = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            if (i - 2 * PAIR_TOKENS).is_multiple_of(3) {
                s
            } else {
                0.0
            }
        };
        for (x, g) in base[i * d..(i + 1) * d].iter_mut().zip(&u) {
            *x += sign * spec.gender_strength * g;
        }
    }
    let vocab = synth_vocab(v);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut models = Vec::with_capacity(spec.k);
    for j in 0..spec.k {
        let mut m: Vec<f64> = base.iter().map(|b| b + noise.sample(&mut rng)).collect();
        if spec.rotate {
            let q = random_orthogonal(d, &mut rng);
            m = matmul(&m, &q, v, d, d);
        }
        models.push(EmbeddingModel::new(vocab.clone(), m, d, format!("seed{j}"))?);
    }
    align_ensemble(models, algorithm, corpus)
}

/// Writes each model as a word2vec text file `seed{j}.txt` under `dir` and
/// returns the paths in model order.
pub fn write_ensemble(ensemble: &EmbeddingEnsemble, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    ensemble
        .models()
        .iter()
        .enumerate()
        .map(|(j, m)| {
            let path = dir.join(format!("seed{j}.txt"));
            m.write_text(&path, TextFormat::W2vText)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthogonality_error;

    #[test]
    fn deterministic_and_sized() {
        let s = SynthSpec::new(50, 8, 3, 0.1, true, 1.0, 7);
        let a = synth_ensemble(&s, "a", "c").unwrap();
        let b = synth_ensemble(&s, "a", "c").unwrap();
        assert_eq!(a.k(), 3);
        assert_eq!(a.vocab().len(), 50);
        for (x, y) in a.models().iter().zip(b.models()) {
            assert_eq!(x.matrix(), y.matrix());
        }
        assert_eq!(&a.vocab()[..2], &["m0".to_string(), "m1".to_string()]);
        assert_eq!(a.vocab()[8], "w0000");
    }

    #[test]
    fn zero_noise_models_identical() {
        let e = synth_ensemble(&SynthSpec::new(40, 4, 3, 0.0, false, 1.0, 1), "a", "c").unwrap();
        assert_eq!(e.models()[0].matrix(), e.models()[2].matrix());
    }

    #[test]
    fn invalid_sizes() {
        assert!(synth_ensemble(&SynthSpec::new(4, 4, 2, 0.0, false, 1.0, 0), "a", "c").is_err());
        assert!(synth_ensemble(&SynthSpec::new(40, 1, 2, 0.0, false, 1.0, 0), "a", "c").is_err());
        assert!(synth_ensemble(&SynthSpec::new(40, 4, 1, 0.0, false, 1.0, 0), "a", "c").is_err());
        assert!(synth_ensemble(&SynthSpec::new(40, 4, 2, -1.0, false, 1.0, 0), "a", "c").is_err());
    }

    #[test]
    fn rotation_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthogonal(12, &mut rng);
        assert!(orthogonality_error(&q, 12) < 1e-12);
    }

    #[test]
    fn files_round_trip() {
        let e = synth_ensemble(&SynthSpec::new(30, 4, 2, 0.3, true, 1.0, 2), "a", "c").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_ensemble(&e, dir.path()).unwrap();
        let back = crate::embedding::load_ensemble(&paths, TextFormat::Auto, "a", "c").unwrap();
        for (x, y) in e.models().iter().zip(back.models()) {
            assert_eq!(x.matrix(), y.matrix());
        }
    }
}
