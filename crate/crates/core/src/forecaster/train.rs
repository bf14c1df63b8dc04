use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{predict, train_loss_and_gradient};
use super::weights::ModelWeights;
use super::ForecasterConfig;
use crate::error::{Error, Result};
use crate::seed;

/// Per-column z-scoring of features and target, fit on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

fn mean_std(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    // constant columns are centred but not rescaled
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl Scaler {
    pub fn fit(x: ArrayView2<f64>, y: &[f64]) -> Result<Self> {
        if x.nrows() == 0 || x.nrows() != y.len() {
            return Err(Error::invalid("scaler needs matching nonempty x and y"));
        }
        let (x_mean, x_std) = x.columns().into_iter().map(|c| mean_std(c.into_iter().copied())).unzip();
        let (y_mean, y_std) = mean_std(y.iter().copied());
        Ok(Scaler { x_mean, x_std, y_mean, y_std })
    }

    pub fn transform_x(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for (j, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.x_mean[j], self.x_std[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }

    pub fn transform_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| (v - self.y_mean) / self.y_std).collect()
    }

    pub fn inverse_y(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v * self.y_std + self.y_mean).collect()
    }
}

/// Samples as `B × T × input_dim` token sequences with one target each.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceData {
    pub x: Array3<f64>,
    pub y: Vec<f64>,
}

impl SequenceData {
    pub fn new(x: Array3<f64>, y: Vec<f64>) -> Result<Self> {
        if x.dim().0 != y.len() {
            return Err(Error::LengthMismatch { expected: x.dim().0, actual: y.len() });
        }
        Ok(SequenceData { x, y })
    }

    /// One token per row.
    pub fn from_rows(x: ArrayView2<f64>, y: Vec<f64>) -> Result<Self> {
        let (n, f) = x.dim();
        let x = x.to_owned().into_shape_with_order((n, 1, f)).expect("row-major copy");
        Self::new(x, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.dim().2
    }

    pub fn subset(&self, idx: &[usize]) -> SequenceData {
        SequenceData {
            x: self.x.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

/// Lookback windows over consecutive rows.
///
/// The window ending at row `i` has `steps` tokens for rows
/// `i − steps + 1 ..= i`; token for row `j` is `x[j]` followed by the
/// previous target `y[j − 1]`. Windows exist for `i >= steps`. Returns the
/// windows and, for each, the row index it ends at.
pub fn lookback_windows(x: ArrayView2<f64>, y: &[f64], steps: usize) -> Result<(SequenceData, Vec<usize>)> {
    let (n, f) = x.dim();
    if steps == 0 || y.len() != n {
        return Err(Error::invalid("lookback needs steps >= 1 and matching y"));
    }
    let ends: Vec<usize> = (steps..n).collect();
    let mut out = Array3::zeros((ends.len(), steps, f + 1));
    for (w, &i) in ends.iter().enumerate() {
        for t in 0..steps {
            let j = i + 1 - steps + t;
            out.slice_mut(ndarray::s![w, t, ..f]).assign(&x.row(j));
            out[[w, t, f]] = y[j - 1];
        }
    }
    let targets = ends.iter().map(|&i| y[i]).collect();
    Ok((SequenceData::new(out, targets)?, ends))
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    pub fn new(n: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        if self.learning_rate == 0.0 {
            return;
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    /// Eval-mode MSE before the first update.
    pub initial_loss: f64,
    /// Mean training-mode loss of each epoch.
    pub losses: Vec<f64>,
}

fn eval_mse(weights: &ModelWeights, data: &SequenceData) -> Result<f64> {
    let pred = predict(weights, data.x.view())?;
    Ok(pred.iter().zip(&data.y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / data.len() as f64)
}

/// Mini-batch Adam on mean squared error for `epochs` passes over `data`.
///
/// Batch order and dropout masks are drawn from `seed`, so the result is a
/// pure function of the arguments. A fresh optimizer state is used per call.
/// If the loss becomes non-finite, returns [`Error::Diverged`] carrying the
/// weights at the end of the last finite epoch.
pub fn train_epochs(
    weights: &ModelWeights,
    data: &SequenceData,
    config: &ForecasterConfig,
    epochs: usize,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData("empty training split".into()));
    }
    let initial_loss = eval_mse(weights, data)?;
    let mut current = weights.clone();
    let mut last_finite = current.values.clone();
    let mut opt = Adam::new(current.len(), config.learning_rate);
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = data.subset(chunk);
            let step = train_loss_and_gradient(
                &current,
                batch.x.view(),
                &batch.y,
                config.dropout_rate,
                &mut rng,
            );
            let (loss, grad) = match step {
                Ok(r) if r.0.is_finite() && r.1.iter().all(|g| g.is_finite()) => r,
                Ok(_) | Err(Error::NonFinite { .. }) => {
                    return Err(Error::Diverged { epoch, last_finite });
                }
                Err(e) => return Err(e),
            };
            total += loss * chunk.len() as f64;
            opt.step(&mut current.values, &grad);
        }
        let epoch_loss = total / data.len() as f64;
        if !epoch_loss.is_finite() || current.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch, last_finite });
        }
        last_finite.clone_from(&current.values);
        losses.push(epoch_loss);
    }
    Ok(TrainOutcome { weights: current, initial_loss, losses })
}

/// `epoch,loss` rows, epochs counted from 1.
pub fn loss_curve_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{:.10e}\n", i + 1, l));
    }
    out
}

pub fn write_loss_curve(path: impl AsRef<Path>, losses: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let out = loss_curve_csv(losses);
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn scaler_round_trips_and_keeps_constant_columns() {
        let x = array![[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]];
        let y = vec![10.0, 20.0, 30.0];
        let s = Scaler::fit(x.view(), &y).unwrap();
        assert_eq!(s.x_std[1], 1.0);
        let t = s.transform_x(x.view());
        assert!(t.column(0).sum().abs() < 1e-12);
        assert!(t.column(1).iter().all(|v| *v == 0.0));
        let back = s.inverse_y(&s.transform_y(&y));
        assert!(back.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(Scaler::fit(x.view(), &[1.0]).is_err());
    }

    #[test]
    fn lookback_windows_carry_previous_target() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let y = vec![10.0, 11.0, 12.0, 13.0];
        let (w, ends) = lookback_windows(x.view(), &y, 2).unwrap();
        assert_eq!(ends, vec![2, 3]);
        assert_eq!(w.y, vec![12.0, 13.0]);
        // window ending at row 2: rows 1 and 2, each with the target before it
        assert_eq!(w.x.slice(ndarray::s![0, .., ..]), array![[1.0, 10.0], [2.0, 11.0]]);
        assert!(lookback_windows(x.view(), &y, 0).is_err());
    }

    #[test]
    fn sequence_data_checks_lengths_and_subsets() {
        let x = Array3::zeros((3, 1, 2));
        assert!(SequenceData::new(x.clone(), vec![1.0]).is_err());
        let d = SequenceData::new(x, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(d.subset(&[2, 0]).y, vec![3.0, 1.0]);
        assert_eq!(d.input_dim(), 2);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut p = vec![1.0, -1.0, 0.0];
        let mut opt = Adam::new(3, 0.1);
        opt.step(&mut p, &[2.0, -0.5, 0.0]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
        assert_eq!(p[2], 0.0);
        let mut still = Adam::new(1, 0.0);
        let mut q = vec![4.0];
        still.step(&mut q, &[100.0]);
        assert_eq!(q, vec![4.0]);
    }

    #[test]
    fn loss_curve_format() {
        assert_eq!(loss_curve_csv(&[0.5, 0.25]), "epoch,loss\n1,5.0000000000e-1\n2,2.5000000000e-1\n");
    }
}
