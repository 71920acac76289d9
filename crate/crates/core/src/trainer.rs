//! Synthetic datasets and a small Adam/backprop trainer for ReLU MLPs.

use std::io::Write;
use std::path::Path;

use log::info;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::network::{Layer, ReluNetwork};
use crate::plant::PlantModel;
use crate::polytope::BoxSet;

/// Samples stored one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub inputs: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DMatrix<f64>) -> Result<Self> {
        check_dim("dataset rows", inputs.nrows(), targets.nrows())?;
        if inputs.nrows() == 0 {
            return Err(Error::InvalidInput("dataset is empty".into()));
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Uniform samples over `X × U` labelled with the plant residual `f(x)`.
pub fn generate_dataset(
    plant: &PlantModel,
    state_box: &BoxSet,
    input_box: &BoxSet,
    count: usize,
    seed: u64,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidInput("dataset size must be at least 1".into()));
    }
    let n = plant.model.states();
    check_dim("state box", n, state_box.dim())?;
    check_dim("input box", plant.model.inputs(), input_box.dim())?;
    let joint = state_box.product(input_box);
    let d = joint.dim();
    let s = plant.model.residual_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = DMatrix::zeros(count, d);
    let mut targets = DMatrix::zeros(count, s);
    for r in 0..count {
        for c in 0..d {
            inputs[(r, c)] = if joint.lo[c] < joint.hi[c] {
                rng.random_range(joint.lo[c]..=joint.hi[c])
            } else {
                joint.lo[c]
            };
        }
        let x = DVector::from_fn(n, |i, _| inputs[(r, i)]);
        let f = plant.residual(&x);
        for c in 0..s {
            targets[(r, c)] = f[c];
        }
    }
    Dataset::new(inputs, targets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` (cosine schedule).
    pub lr_floor: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub val_fraction: f64,
    /// Decoupled decay applied to weights, not biases.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            lr_floor: 0.01,
            epochs: 300,
            batch: 64,
            seed: 0,
            val_fraction: 0.1,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub network: ReluNetwork,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

impl TrainReport {
    /// Writes `epoch,train_mse,val_mse` rows.
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.log {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_log_to(&self, out: &mut impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.log {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Adam {
    m: Vec<(DMatrix<f64>, DVector<f64>)>,
    v: Vec<(DMatrix<f64>, DVector<f64>)>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(layers: &[(DMatrix<f64>, DVector<f64>)]) -> Self {
        let zeros: Vec<_> = layers
            .iter()
            .map(|(w, b)| (DMatrix::zeros(w.nrows(), w.ncols()), DVector::zeros(b.len())))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [(DMatrix<f64>, DVector<f64>)], grads: &[(DMatrix<f64>, DVector<f64>)], lr: f64, decay: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (i, (gw, gb)) in grads.iter().enumerate() {
            let (mw, mb) = &mut self.m[i];
            let (vw, vb) = &mut self.v[i];
            let (pw, pb) = &mut params[i];
            let upd = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            };
            for k in 0..gw.len() {
                pw[k] -= lr * decay * pw[k];
                upd(&mut pw[k], &mut mw[k], &mut vw[k], gw[k]);
            }
            for k in 0..gb.len() {
                upd(&mut pb[k], &mut mb[k], &mut vb[k], gb[k]);
            }
        }
    }
}

/// Column-per-sample forward pass keeping every post-activation.
fn forward_batch(params: &[(DMatrix<f64>, DVector<f64>)], x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let mut acts = vec![x.clone()];
    for (i, (w, b)) in params.iter().enumerate() {
        let mut h = w * acts.last().expect("input present");
        for mut col in h.column_iter_mut() {
            col += b;
        }
        if i + 1 < params.len() {
            h.apply(|v| *v = v.max(0.0));
        }
        acts.push(h);
    }
    acts
}

fn mse(params: &[(DMatrix<f64>, DVector<f64>)], x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    if x.ncols() == 0 {
        return f64::NAN;
    }
    let out = forward_batch(params, x).pop().expect("output present");
    (out - y).norm_squared() / (y.len() as f64)
}

struct Standardizer {
    mean: DVector<f64>,
    std: DVector<f64>,
}

impl Standardizer {
    fn fit(rows: &DMatrix<f64>) -> Self {
        let k = rows.nrows() as f64;
        let mean = DVector::from_fn(rows.ncols(), |c, _| rows.column(c).sum() / k);
        let std = DVector::from_fn(rows.ncols(), |c, _| {
            let var = rows.column(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / k;
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        });
        Self { mean, std }
    }

    /// Transposed and standardised: one column per sample.
    fn apply(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(rows.ncols(), rows.nrows(), |c, r| (rows[(r, c)] - self.mean[c]) / self.std[c])
    }
}

/// Fits a network with layer sizes `shape = [inputs, hidden..., outputs]`
/// and returns the parameters with the lowest validation error. The data
/// standardisation is folded into the first and last layers.
pub fn train(shape: &[usize], data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if shape.len() < 2 {
        return Err(Error::InvalidInput("shape needs input and output sizes".into()));
    }
    check_dim("network input", data.inputs.ncols(), shape[0])?;
    check_dim("network output", data.targets.ncols(), shape[shape.len() - 1])?;
    if shape.iter().any(|&s| s == 0) || cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidInput("layer sizes, batch and learning rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if data.len() > 1 {
        ((data.len() as f64 * cfg.val_fraction).round() as usize).min(data.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let xs = Standardizer::fit(&data.inputs);
    let ys = Standardizer::fit(&data.targets);
    let x_all = xs.apply(&data.inputs);
    let y_all = ys.apply(&data.targets);
    let pick = |m: &DMatrix<f64>, idx: &[usize]| DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])]);
    let x_val = pick(&x_all, val_idx);
    let y_val = pick(&y_all, val_idx);
    let x_train = pick(&x_all, train_idx);
    let y_train = pick(&y_all, train_idx);
    let mut train_order: Vec<usize> = (0..train_idx.len()).collect();

    let mut params: Vec<(DMatrix<f64>, DVector<f64>)> = shape
        .windows(2)
        .map(|w| {
            let normal = Normal::new(0.0, (2.0 / w[0] as f64).sqrt()).expect("positive std");
            let weights = DMatrix::from_fn(w[1], w[0], |_, _| normal.sample(&mut rng));
            let bias = DVector::from_fn(w[1], |_, _| rng.random_range(-0.1..0.1));
            (weights, bias)
        })
        .collect();
    let mut adam = Adam::new(&params);
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut log = Vec::with_capacity(cfg.epochs);
    let layers = params.len();

    for epoch in 0..cfg.epochs {
        let progress = epoch as f64 / cfg.epochs.max(1) as f64;
        let lr = cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        train_order.shuffle(&mut rng);
        for chunk in train_order.chunks(cfg.batch) {
            let xb = DMatrix::from_fn(x_train.nrows(), chunk.len(), |r, c| x_train[(r, chunk[c])]);
            let yb = DMatrix::from_fn(y_train.nrows(), chunk.len(), |r, c| y_train[(r, chunk[c])]);
            let acts = forward_batch(&params, &xb);
            let scale = 2.0 / (yb.len() as f64);
            let mut delta = (&acts[layers] - &yb) * scale;
            let mut grads = vec![(DMatrix::zeros(0, 0), DVector::zeros(0)); layers];
            for i in (0..layers).rev() {
                let gw = &delta * acts[i].transpose();
                let gb = DVector::from_fn(delta.nrows(), |r, _| delta.row(r).sum());
                if i > 0 {
                    let mut back = params[i].0.transpose() * &delta;
                    back.zip_apply(&acts[i], |d, a| {
                        if a <= 0.0 {
                            *d = 0.0
                        }
                    });
                    delta = back;
                }
                grads[i] = (gw, gb);
            }
            adam.step(&mut params, &grads, lr, cfg.weight_decay);
        }
        let train_mse = mse(&params, &x_train, &y_train);
        let val_mse = if n_val > 0 { mse(&params, &x_val, &y_val) } else { train_mse };
        if !train_mse.is_finite() || !val_mse.is_finite() {
            return Err(Error::Diverged(format!(
                "training loss is not finite at epoch {epoch}; try a smaller learning rate than {}",
                cfg.lr
            )));
        }
        let scale2 = ys.std.iter().map(|s| s * s).sum::<f64>() / ys.std.len() as f64;
        log.push(EpochLog {
            epoch,
            train_mse: train_mse * scale2,
            val_mse: val_mse * scale2,
        });
        if val_mse < best_val {
            best_val = val_mse;
            best = params.clone();
            best_epoch = epoch;
        }
    }
    if cfg.epochs == 0 {
        best_val = mse(&params, &x_val, &y_val);
    }
    let network = fold(best, &xs, &ys)?;
    let best_val_mse = log.get(best_epoch).map_or(best_val, |e| e.val_mse);
    info!("trained {shape:?}: best validation mse {best_val_mse:.3e} at epoch {best_epoch}");
    Ok(TrainReport {
        network,
        log,
        best_epoch,
        best_val_mse,
    })
}

fn fold(mut params: Vec<(DMatrix<f64>, DVector<f64>)>, xs: &Standardizer, ys: &Standardizer) -> Result<ReluNetwork> {
    {
        let (w, b) = &mut params[0];
        for c in 0..w.ncols() {
            let shift = xs.mean[c] / xs.std[c];
            for r in 0..w.nrows() {
                b[r] -= w[(r, c)] * shift;
                w[(r, c)] /= xs.std[c];
            }
        }
    }
    {
        let (w, b) = params.last_mut().expect("at least one layer");
        for r in 0..w.nrows() {
            for c in 0..w.ncols() {
                w[(r, c)] *= ys.std[r];
            }
            b[r] = b[r] * ys.std[r] + ys.mean[r];
        }
    }
    ReluNetwork::new(
        params
            .into_iter()
            .map(|(w, b)| Layer::new(w, b))
            .collect::<Result<Vec<_>>>()?,
    )
}

/// Root-mean-square error of `net` against `f` on a regular grid over the box.
pub fn grid_rmse(net: &ReluNetwork, plant: &PlantModel, joint: &BoxSet, per_axis: usize) -> Result<f64> {
    let d = joint.dim();
    let n = plant.model.states();
    let per_axis = per_axis.max(2);
    let total = per_axis.pow(d as u32);
    let mut sum = 0.0;
    for idx in 0..total {
        let mut rem = idx;
        let z = DVector::from_fn(d, |i, _| {
            let k = rem % per_axis;
            rem /= per_axis;
            joint.lo[i] + (joint.hi[i] - joint.lo[i]) * k as f64 / (per_axis - 1) as f64
        });
        let x = z.rows(0, n).into_owned();
        sum += (net.forward(&z)? - plant.residual(&x)).norm_squared();
    }
    Ok((sum / total as f64).sqrt())
}
