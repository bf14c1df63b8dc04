//! Laplace mechanism for releasing feature-importance vectors.

use std::str::FromStr;

use rand::distributions::Open01;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boosting::{ImportanceDistribution, Sensitivity};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PrivacyBudget(f64);

impl PrivacyBudget {
    /// Named settings: `high` privacy is ε = 0.1, `moderate` 1, `low` 10.
    pub const HIGH: PrivacyBudget = PrivacyBudget(0.1);
    pub const MODERATE: PrivacyBudget = PrivacyBudget(1.0);
    pub const LOW: PrivacyBudget = PrivacyBudget(10.0);

    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon > 0.0 && epsilon.is_finite() {
            Ok(PrivacyBudget(epsilon))
        } else {
            Err(Error::config("epsilon", format!("{epsilon} must be a positive finite number")))
        }
    }

    pub fn epsilon(self) -> f64 {
        self.0
    }
}

impl FromStr for PrivacyBudget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "high" => Ok(Self::HIGH),
            "moderate" => Ok(Self::MODERATE),
            "low" => Ok(Self::LOW),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::config("epsilon", format!("`{s}` is not a number or preset")))
                .and_then(Self::new),
        }
    }
}

impl<'de> Deserialize<'de> for PrivacyBudget {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Name(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(v) => PrivacyBudget::new(v),
            Raw::Name(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Laplace scale `σ = Δ / ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScale {
    pub sigma: f64,
}

pub fn noise_scale(delta: Sensitivity, budget: PrivacyBudget) -> NoiseScale {
    NoiseScale { sigma: delta.delta / budget.epsilon() }
}

/// Inverse-CDF transform of `u ∈ (−½, ½)` into a Laplace(0, σ) draw:
/// `−σ · sign(u) · ln(1 − 2|u|)`.
pub fn laplace_from_uniform(sigma: f64, u: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    -sigma * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Seedable Laplace sampler with value semantics.
#[derive(Debug, Clone)]
pub struct LaplaceSampler {
    rng: ChaCha8Rng,
}

impl LaplaceSampler {
    pub fn new(seed: u64) -> Self {
        LaplaceSampler { rng: seed::rng(seed) }
    }

    /// Next uniform in the open interval `(−½, ½)`, so `1 − 2|u| > 0`.
    pub fn next_uniform(&mut self) -> f64 {
        let v: f64 = self.rng.sample(Open01);
        v - 0.5
    }

    pub fn sample(&mut self, sigma: f64) -> f64 {
        let u = self.next_uniform();
        laplace_from_uniform(sigma, u)
    }
}

/// One Laplace draw at scale `sigma`.
pub fn sample_laplace(sigma: f64, sampler: &mut LaplaceSampler) -> f64 {
    sampler.sample(sigma)
}

/// Adds independent Laplace noise to every coordinate. The result is raw:
/// run it through [`crate::boosting::normalize`] before clustering.
pub fn perturb(importance: &ImportanceDistribution, scale: NoiseScale, sampler: &mut LaplaceSampler) -> Vec<f64> {
    importance
        .values
        .iter()
        .map(|v| if scale.sigma == 0.0 { *v } else { v + sampler.sample(scale.sigma) })
        .collect()
}
