use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ForecasterConfig;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Named parameter shapes in canonical order. Two models built from the same
/// config and input width have equal layouts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub input_dim: usize,
    pub model_dim: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_dim: usize,
    pub entries: Vec<LayoutEntry>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Offsets {
    pub embed_w: usize,
    pub embed_b: usize,
    pub layers: Vec<LayerOffsets>,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(config: &ForecasterConfig, input_dim: usize) -> Self {
        let d = config.model_dim;
        let f = config.ff_dim;
        let mut entries = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| entries.push(LayoutEntry { name, shape });
        push("embed.weight".into(), vec![input_dim, d]);
        push("embed.bias".into(), vec![d]);
        for l in 0..config.n_layers {
            for (n, s) in [
                ("attn.wq", vec![d, d]),
                ("attn.bq", vec![d]),
                ("attn.wk", vec![d, d]),
                ("attn.bk", vec![d]),
                ("attn.wv", vec![d, d]),
                ("attn.bv", vec![d]),
                ("attn.wo", vec![d, d]),
                ("attn.bo", vec![d]),
                ("ln1.gamma", vec![d]),
                ("ln1.beta", vec![d]),
                ("ff1.weight", vec![d, f]),
                ("ff1.bias", vec![f]),
                ("ff2.weight", vec![f, d]),
                ("ff2.bias", vec![d]),
                ("ln2.gamma", vec![d]),
                ("ln2.beta", vec![d]),
            ] {
                push(format!("layer{l}.{n}"), s);
            }
        }
        push("head.weight".into(), vec![d]);
        push("head.bias".into(), vec![1]);
        Layout {
            input_dim,
            model_dim: d,
            n_heads: config.n_heads,
            n_layers: config.n_layers,
            ff_dim: f,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.iter().map(LayoutEntry::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn offsets(&self) -> Offsets {
        let mut starts = Vec::with_capacity(self.entries.len());
        let mut at = 0;
        for e in &self.entries {
            starts.push(at);
            at += e.len();
        }
        let layers = (0..self.n_layers)
            .map(|l| {
                let b = 2 + 16 * l;
                LayerOffsets {
                    wq: starts[b],
                    bq: starts[b + 1],
                    wk: starts[b + 2],
                    bk: starts[b + 3],
                    wv: starts[b + 4],
                    bv: starts[b + 5],
                    wo: starts[b + 6],
                    bo: starts[b + 7],
                    ln1_g: starts[b + 8],
                    ln1_b: starts[b + 9],
                    w1: starts[b + 10],
                    b1: starts[b + 11],
                    w2: starts[b + 12],
                    b2: starts[b + 13],
                    ln2_g: starts[b + 14],
                    ln2_b: starts[b + 15],
                }
            })
            .collect();
        let h = 2 + 16 * self.n_layers;
        Offsets {
            embed_w: starts[0],
            embed_b: starts[1],
            layers,
            head_w: starts[h],
            head_b: starts[h + 1],
            total: at,
        }
    }
}

/// Flat parameter vector of the forecaster; the unit of federated averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl ModelWeights {
    pub fn from_flat(layout: Layout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LengthMismatch { expected: layout.len(), actual: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("weights contain non-finite values"));
        }
        Ok(ModelWeights { layout, values })
    }

    pub fn zeros(layout: Layout) -> Self {
        let n = layout.len();
        ModelWeights { layout, values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Splits the flat vector into named tensors.
    pub fn unflatten(&self) -> Vec<(String, ArrayD<f64>)> {
        let mut at = 0;
        self.layout
            .entries
            .iter()
            .map(|e| {
                let n = e.len();
                let t = ArrayD::from_shape_vec(IxDyn(&e.shape), self.values[at..at + n].to_vec())
                    .expect("layout shape");
                at += n;
                (e.name.clone(), t)
            })
            .collect()
    }

    /// Inverse of [`ModelWeights::unflatten`].
    pub fn flatten(layout: Layout, tensors: &[(String, ArrayD<f64>)]) -> Result<Self> {
        if tensors.len() != layout.entries.len() {
            return Err(Error::LayoutMismatch);
        }
        let mut values = Vec::with_capacity(layout.len());
        for (e, (name, t)) in layout.entries.iter().zip(tensors) {
            if *name != e.name || t.shape() != e.shape.as_slice() {
                return Err(Error::LayoutMismatch);
            }
            values.extend(t.iter().copied());
        }
        Self::from_flat(layout, values)
    }

    pub fn l2_distance(&self, other: &ModelWeights) -> Result<f64> {
        if self.layout != other.layout {
            return Err(Error::LayoutMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Values as consecutive little-endian f64.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn layout_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(&self.layout)?)
    }

    /// Writes little-endian f64 values to `bin` and the layout as JSON to
    /// `layout_json`.
    pub fn save(&self, bin: impl AsRef<Path>, layout_json: impl AsRef<Path>) -> Result<()> {
        fs::write(bin.as_ref(), self.to_le_bytes()).map_err(|e| Error::io(bin.as_ref(), e))?;
        fs::write(layout_json.as_ref(), self.layout_json()?).map_err(|e| Error::io(layout_json.as_ref(), e))
    }

    pub fn load(bin: impl AsRef<Path>, layout_json: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(bin.as_ref()).map_err(|e| Error::io(bin.as_ref(), e))?;
        let json = fs::read(layout_json.as_ref()).map_err(|e| Error::io(layout_json.as_ref(), e))?;
        let layout: Layout = serde_json::from_slice(&json)?;
        if bytes.len() % 8 != 0 {
            return Err(Error::invalid("weight file length is not a multiple of 8"));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_flat(layout, values)
    }
}

/// Seeded initialization: every matrix uniform in `±1/√fan_in`, biases and
/// layer-norm shifts zero, layer-norm gains one.
pub fn init_weights(config: &ForecasterConfig, input_dim: usize) -> Result<ModelWeights> {
    config.validate()?;
    if input_dim == 0 {
        return Err(Error::invalid("input dimension must be positive"));
    }
    let layout = Layout::new(config, input_dim);
    let mut rng = seed::rng(seed::derive(config.seed, "forecaster-init", ""));
    let mut values = Vec::with_capacity(layout.len());
    for e in &layout.entries {
        let n = e.len();
        if e.name.ends_with("gamma") {
            values.extend(std::iter::repeat_n(1.0, n));
        } else if e.shape.len() == 2 || e.name == "head.weight" {
            let bound = 1.0 / (e.shape[0] as f64).sqrt();
            values.extend((0..n).map(|_| rng.gen_range(-bound..bound)));
        } else {
            values.extend(std::iter::repeat_n(0.0, n));
        }
    }
    ModelWeights::from_flat(layout, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ForecasterConfig {
        ForecasterConfig { n_layers: 2, n_heads: 2, model_dim: 4, ff_dim: 6, ..Default::default() }
    }

    #[test]
    fn parameter_count() {
        let (i, d, f) = (3, 4, 6);
        let per_layer = 4 * (d * d + d) + 2 * d + d * f + f + f * d + d + 2 * d;
        assert_eq!(Layout::new(&cfg(), i).len(), i * d + d + 2 * per_layer + d + 1);
    }

    #[test]
    fn init_respects_fan_in_bounds() {
        let w = init_weights(&cfg(), 3).unwrap();
        let mut off = 0;
        for e in &w.layout.entries {
            let vals = &w.values[off..off + e.len()];
            if e.name.ends_with("gamma") {
                assert!(vals.iter().all(|v| *v == 1.0));
            } else if e.shape.len() == 2 || e.name == "head.weight" {
                let bound = 1.0 / (e.shape[0] as f64).sqrt();
                assert!(vals.iter().all(|v| v.abs() <= bound), "{}", e.name);
                assert!(vals.iter().any(|v| *v != 0.0));
            } else {
                assert!(vals.iter().all(|v| *v == 0.0), "{}", e.name);
            }
            off += e.len();
        }
        assert_eq!(off, w.len());
    }

    #[test]
    fn flat_length_and_distance() {
        let layout = Layout::new(&cfg(), 2);
        assert!(ModelWeights::from_flat(layout.clone(), vec![0.0; 3]).is_err());
        let a = ModelWeights::zeros(layout.clone());
        let mut b = a.clone();
        b.values[0] = 3.0;
        b.values[1] = 4.0;
        assert_eq!(a.l2_distance(&b).unwrap(), 5.0);
        assert_eq!(b.to_le_bytes().len(), 8 * layout.len());
        let other = ModelWeights::zeros(Layout::new(&cfg(), 5));
        assert!(a.l2_distance(&other).is_err());
    }

    #[test]
    fn rejects_bad_input_dim() {
        assert!(init_weights(&cfg(), 0).is_err());
    }
}
