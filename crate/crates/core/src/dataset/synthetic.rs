use std::collections::BTreeSet;

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::partition::uniform_split;
use super::ClientDataset;
use crate::error::{Error, Result};
use crate::seed;

/// Linear target for one regime: `y = Σ coefficients[k] · x[dominant_features[k]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    pub dominant_features: Vec<usize>,
    pub coefficients: Vec<f64>,
}

/// Heterogeneous client population.
///
/// When `regimes` is empty, regime `r` gets the `r`-th contiguous block of
/// `n_features / n_regimes` features as its dominant set, with coefficients
/// of magnitude in `[1, 2)` and random sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Number of clients in each regime; its length is the regime count.
    pub clients_per_regime: Vec<usize>,
    pub samples_per_client: usize,
    pub n_features: usize,
    pub regimes: Vec<RegimeSpec>,
    /// Standard deviation of the additive Gaussian target noise.
    pub noise: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            clients_per_regime: vec![4, 4],
            samples_per_client: 200,
            n_features: 12,
            regimes: Vec::new(),
            noise: 0.1,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// The regime definitions, generated from the seed when not given.
    pub fn resolved_regimes(&self) -> Result<Vec<RegimeSpec>> {
        let n_regimes = self.clients_per_regime.len();
        if n_regimes == 0 {
            return Err(Error::config("clients_per_regime", "need at least one regime"));
        }
        if self.n_features == 0 {
            return Err(Error::config("n_features", "must be positive"));
        }
        let regimes = if self.regimes.is_empty() {
            let block = self.n_features / n_regimes;
            if block == 0 {
                return Err(Error::config("n_features", "fewer features than regimes"));
            }
            let mut rng = seed::rng(seed::derive(self.seed, "synthetic-regimes", ""));
            (0..n_regimes)
                .map(|r| {
                    let dominant: Vec<usize> = (r * block..(r + 1) * block).collect();
                    let coefficients = dominant
                        .iter()
                        .map(|_| {
                            let m: f64 = rng.gen_range(1.0..2.0);
                            if rng.gen::<bool>() { m } else { -m }
                        })
                        .collect();
                    RegimeSpec { dominant_features: dominant, coefficients }
                })
                .collect()
        } else {
            self.regimes.clone()
        };
        if regimes.len() != n_regimes {
            return Err(Error::config(
                "regimes",
                format!("{} regimes given for {} client groups", regimes.len(), n_regimes),
            ));
        }
        let mut used = BTreeSet::new();
        for (r, reg) in regimes.iter().enumerate() {
            if reg.dominant_features.is_empty()
                || reg.dominant_features.len() != reg.coefficients.len()
            {
                return Err(Error::config(
                    "regimes",
                    format!("regime {r} needs one coefficient per dominant feature"),
                ));
            }
            for &f in &reg.dominant_features {
                if f >= self.n_features {
                    return Err(Error::config("regimes", format!("feature {f} out of range")));
                }
                if !used.insert(f) {
                    return Err(Error::config(
                        "regimes",
                        format!("dominant feature {f} shared between regimes"),
                    ));
                }
            }
        }
        Ok(regimes)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub clients: Vec<ClientDataset>,
    /// Ground-truth regime of each client.
    pub labels: Vec<usize>,
    pub regimes: Vec<RegimeSpec>,
}

/// Draws clients with standard-normal features and `y = Xβ_r + noise·ε`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let regimes = spec.resolved_regimes()?;
    if spec.samples_per_client < 2 {
        return Err(Error::config("samples_per_client", "must be at least 2"));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::config("noise", "must be finite and non-negative"));
    }
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::config("test_fraction", "must be in (0,1)"));
    }
    let names: Vec<String> = (0..spec.n_features).map(|j| format!("x{j}")).collect();
    let n = spec.samples_per_client;
    let mut clients = Vec::new();
    let mut labels = Vec::new();
    for (r, (&count, regime)) in spec.clients_per_regime.iter().zip(&regimes).enumerate() {
        for c in 0..count {
            let id = format!("regime{r}-client{c}");
            let client_seed = seed::derive(spec.seed, "synthetic", &id);
            let mut rng = seed::rng(client_seed);
            let x = Array2::from_shape_simple_fn((n, spec.n_features), || {
                rng.sample::<f64, _>(StandardNormal)
            });
            let y = (0..n)
                .map(|i| {
                    let signal: f64 = regime
                        .dominant_features
                        .iter()
                        .zip(&regime.coefficients)
                        .map(|(&f, b)| b * x[[i, f]])
                        .sum();
                    if spec.noise > 0.0 {
                        signal + spec.noise * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        signal
                    }
                })
                .collect();
            let (train, test) = uniform_split(n, spec.test_fraction, client_seed);
            clients.push(ClientDataset::new(id, x, y, names.clone(), train, test, client_seed)?);
            labels.push(r);
        }
    }
    Ok(SyntheticData { clients, labels, regimes })
}
