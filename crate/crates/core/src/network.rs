//! Feed-forward ReLU networks: evaluation, interval bounds and neuron
//! stability classification.
//!
//! Hidden layers apply `z_i = max(W_i z_{i-1} + b_i, 0)`; the final layer is
//! affine with no activation.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// One affine layer `W z + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn new(weights: DMatrix<f64>, bias: DVector<f64>) -> Result<Self> {
        check_dim("layer bias", weights.nrows(), bias.len())?;
        Ok(Self { weights, bias })
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// A ReLU network with `depth()` weight layers, the last of which is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluNetwork {
    layers: Vec<Layer>,
}

impl ReluNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for (i, layer) in layers.iter().enumerate() {
            check_dim("layer bias", layer.outputs(), layer.bias.len())?;
            if i > 0 {
                check_dim("layer chaining", layers[i - 1].outputs(), layer.inputs())?;
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("layer {i} has non-finite entries")));
            }
        }
        Ok(Self { layers })
    }

    /// Network whose weights are all zero; the output is the constant
    /// `output_bias`.
    pub fn constant(input_dim: usize, hidden: &[usize], output_bias: &[f64]) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input_dim;
        for &width in hidden {
            layers.push(Layer {
                weights: DMatrix::zeros(width, prev),
                bias: DVector::zeros(width),
            });
            prev = width;
        }
        layers.push(Layer {
            weights: DMatrix::zeros(output_bias.len(), prev),
            bias: DVector::from_column_slice(output_bias),
        });
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Number of weight layers (hidden layers + output layer).
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn hidden_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output_layer(&self) -> &Layer {
        &self.layers[self.layers.len() - 1]
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.hidden_layers().iter().map(Layer::outputs).collect()
    }

    pub fn forward(&self, input: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.forward_trace(input)?.output)
    }

    /// Evaluates the network and keeps every hidden pre/post-activation.
    pub fn forward_trace(&self, input: &DVector<f64>) -> Result<ForwardTrace> {
        check_dim("network input", self.input_dim(), input.len())?;
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut post = Vec::with_capacity(self.layers.len() - 1);
        let mut z = input.clone();
        for layer in self.hidden_layers() {
            let zhat = &layer.weights * &z + &layer.bias;
            z = zhat.map(relu);
            pre.push(zhat);
            post.push(z.clone());
        }
        let out = self.output_layer();
        let output = &out.weights * &z + &out.bias;
        Ok(ForwardTrace { pre, post, output })
    }

    /// Interval-arithmetic bounds over the input box `[lo, hi]`.
    ///
    /// Uses the sign split `W = W⁺ + W⁻`, so for each layer
    /// `l̂ = W⁺ l + W⁻ u + b` and `û = W⁻ l + W⁺ u + b`.
    pub fn propagate_bounds(&self, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<LayerBounds> {
        check_dim("input box lower", self.input_dim(), lo.len())?;
        check_dim("input box upper", self.input_dim(), hi.len())?;
        if lo.iter().zip(hi.iter()).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidInput("input box must be finite with lo <= hi".into()));
        }
        let mut bounds = LayerBounds {
            input_lo: lo.clone(),
            input_hi: hi.clone(),
            pre_lo: Vec::new(),
            pre_hi: Vec::new(),
            post_lo: Vec::new(),
            post_hi: Vec::new(),
            output_lo: DVector::zeros(0),
            output_hi: DVector::zeros(0),
        };
        let mut l = lo.clone();
        let mut u = hi.clone();
        for layer in self.hidden_layers() {
            let (pl, pu) = interval_affine(layer, &l, &u);
            l = pl.map(relu);
            u = pu.map(relu);
            bounds.pre_lo.push(pl);
            bounds.pre_hi.push(pu);
            bounds.post_lo.push(l.clone());
            bounds.post_hi.push(u.clone());
        }
        let (ol, ou) = interval_affine(self.output_layer(), &l, &u);
        bounds.output_lo = ol;
        bounds.output_hi = ou;
        Ok(bounds)
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            input_dim: self.input_dim(),
            output_dim: self.output_dim(),
            layers: self
                .layers
                .iter()
                .map(|layer| {
                    // nalgebra stores column-major; the file is row-major.
                    let w = layer.weights.transpose();
                    LayerFile {
                        rows: layer.outputs(),
                        cols: layer.inputs(),
                        w: w.as_slice().to_vec(),
                        b: layer.bias.as_slice().to_vec(),
                    }
                })
                .collect(),
        }
    }

    pub fn from_file(file: &NetworkFile) -> Result<Self> {
        let mut layers = Vec::with_capacity(file.layers.len());
        for (i, lf) in file.layers.iter().enumerate() {
            if lf.w.len() != lf.rows * lf.cols || lf.b.len() != lf.rows {
                return Err(Error::InvalidInput(format!(
                    "layer {i}: declared shape {}x{} does not match data",
                    lf.rows, lf.cols
                )));
            }
            let weights = DMatrix::from_row_slice(lf.rows, lf.cols, &lf.w);
            layers.push(Layer::new(weights, DVector::from_column_slice(&lf.b))?);
        }
        let net = Self::new(layers)?;
        check_dim("declared input_dim", file.input_dim, net.input_dim())?;
        check_dim("declared output_dim", file.output_dim, net.output_dim())?;
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// On-disk network description. Floats are written in shortest
/// round-trip decimal form, so save/load is bit-exact.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkFile {
    pub input_dim: usize,
    pub output_dim: usize,
    pub layers: Vec<LayerFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerFile {
    pub rows: usize,
    pub cols: usize,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    pub pre: Vec<DVector<f64>>,
    pub post: Vec<DVector<f64>>,
    pub output: DVector<f64>,
}

/// Interval bounds for every hidden layer and the output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerBounds {
    #[serde(with = "crate::serde_vec")]
    pub input_lo: DVector<f64>,
    #[serde(with = "crate::serde_vec")]
    pub input_hi: DVector<f64>,
    /// Pre-activation bounds `l̂_i`, `û_i` per hidden layer.
    #[serde(with = "crate::serde_vec::many")]
    pub pre_lo: Vec<DVector<f64>>,
    #[serde(with = "crate::serde_vec::many")]
    pub pre_hi: Vec<DVector<f64>>,
    /// Post-activation bounds `max(l̂_i, 0)`, `max(û_i, 0)`.
    #[serde(with = "crate::serde_vec::many")]
    pub post_lo: Vec<DVector<f64>>,
    #[serde(with = "crate::serde_vec::many")]
    pub post_hi: Vec<DVector<f64>>,
    #[serde(with = "crate::serde_vec")]
    pub output_lo: DVector<f64>,
    #[serde(with = "crate::serde_vec")]
    pub output_hi: DVector<f64>,
}

impl LayerBounds {
    pub fn hidden_layers(&self) -> usize {
        self.pre_lo.len()
    }

    /// True when `inner` is at least as tight as `self` everywhere.
    pub fn contains(&self, inner: &LayerBounds) -> bool {
        fn nested(ol: &DVector<f64>, oh: &DVector<f64>, il: &DVector<f64>, ih: &DVector<f64>) -> bool {
            ol.iter().zip(il.iter()).all(|(o, i)| o <= i) && oh.iter().zip(ih.iter()).all(|(o, i)| i <= o)
        }
        self.pre_lo.len() == inner.pre_lo.len()
            && (0..self.pre_lo.len())
                .all(|i| nested(&self.pre_lo[i], &self.pre_hi[i], &inner.pre_lo[i], &inner.pre_hi[i]))
            && nested(&self.output_lo, &self.output_hi, &inner.output_lo, &inner.output_hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum NeuronStatus {
    StrictlyInactive,
    StrictlyActive,
    Unstable,
}

impl NeuronStatus {
    pub fn from_bounds(lo: f64, hi: f64) -> Self {
        if hi <= 0.0 {
            NeuronStatus::StrictlyInactive
        } else if lo >= 0.0 {
            NeuronStatus::StrictlyActive
        } else {
            NeuronStatus::Unstable
        }
    }
}

/// Stability status of every hidden neuron, indexed `[layer][neuron]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NeuronStatusMap {
    pub layers: Vec<Vec<NeuronStatus>>,
}

impl NeuronStatusMap {
    pub fn count(&self, status: NeuronStatus) -> usize {
        self.layers.iter().flatten().filter(|s| **s == status).count()
    }

    pub fn unstable(&self) -> usize {
        self.count(NeuronStatus::Unstable)
    }
}

pub fn classify_neurons(bounds: &LayerBounds) -> NeuronStatusMap {
    let layers = bounds
        .pre_lo
        .iter()
        .zip(&bounds.pre_hi)
        .map(|(lo, hi)| {
            lo.iter()
                .zip(hi.iter())
                .map(|(&l, &h)| NeuronStatus::from_bounds(l, h))
                .collect()
        })
        .collect();
    NeuronStatusMap { layers }
}

#[inline]
pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn interval_affine(layer: &Layer, lo: &DVector<f64>, hi: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let w = &layer.weights;
    let mut out_lo = layer.bias.clone();
    let mut out_hi = layer.bias.clone();
    for r in 0..w.nrows() {
        let (mut a, mut b) = (0.0, 0.0);
        for c in 0..w.ncols() {
            let wv = w[(r, c)];
            if wv >= 0.0 {
                a += wv * lo[c];
                b += wv * hi[c];
            } else {
                a += wv * hi[c];
                b += wv * lo[c];
            }
        }
        out_lo[r] += a;
        out_hi[r] += b;
    }
    (out_lo, out_hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abs_net() -> ReluNetwork {
        ReluNetwork::new(vec![
            Layer::new(DMatrix::from_row_slice(2, 1, &[1.0, -1.0]), DVector::zeros(2)).unwrap(),
            Layer::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::zeros(1)).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn absolute_value_network() {
        let net = abs_net();
        assert_eq!(net.forward(&DVector::from_element(1, -2.0)).unwrap()[0], 2.0);
        assert_eq!(net.forward(&DVector::from_element(1, 3.5)).unwrap()[0], 3.5);
    }

    #[test]
    fn constant_network() {
        let net = ReluNetwork::constant(3, &[4, 4], &[0.5]);
        for x in [-10.0, 0.0, 7.0] {
            let out = net.forward(&DVector::from_element(3, x)).unwrap();
            assert_eq!(out[0], 0.5);
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let net = abs_net();
        assert!(matches!(
            net.forward(&DVector::zeros(2)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn mismatched_layers_rejected() {
        let r = ReluNetwork::new(vec![
            Layer::new(DMatrix::zeros(3, 2), DVector::zeros(3)).unwrap(),
            Layer::new(DMatrix::zeros(1, 2), DVector::zeros(1)).unwrap(),
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn identity_layer_bounds() {
        let net = ReluNetwork::new(vec![
            Layer::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap(),
            Layer::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::zeros(1)).unwrap(),
        ])
        .unwrap();
        let b = net
            .propagate_bounds(&DVector::from_element(2, -1.0), &DVector::from_element(2, 1.0))
            .unwrap();
        assert_eq!(b.pre_lo[0].as_slice(), &[-1.0, -1.0]);
        assert_eq!(b.pre_hi[0].as_slice(), &[1.0, 1.0]);
        assert_eq!(b.post_lo[0].as_slice(), &[0.0, 0.0]);
        assert_eq!(b.post_hi[0].as_slice(), &[1.0, 1.0]);
        assert_eq!(b.output_lo[0], 0.0);
        assert_eq!(b.output_hi[0], 2.0);
    }

    #[test]
    fn sign_split_row() {
        let net = ReluNetwork::new(vec![
            Layer::new(DMatrix::from_row_slice(1, 2, &[1.0, -1.0]), DVector::zeros(1)).unwrap(),
            Layer::new(DMatrix::from_row_slice(1, 1, &[1.0]), DVector::zeros(1)).unwrap(),
        ])
        .unwrap();
        let b = net.propagate_bounds(&DVector::zeros(2), &DVector::from_element(2, 1.0)).unwrap();
        assert_eq!(b.pre_lo[0][0], -1.0);
        assert_eq!(b.pre_hi[0][0], 1.0);
    }

    #[test]
    fn bias_shifts_both_bounds() {
        let net = ReluNetwork::new(vec![
            Layer::new(DMatrix::from_row_slice(1, 1, &[2.0]), DVector::from_element(1, 0.5)).unwrap(),
            Layer::new(DMatrix::from_row_slice(1, 1, &[1.0]), DVector::from_element(1, -1.0)).unwrap(),
        ])
        .unwrap();
        let b = net
            .propagate_bounds(&DVector::from_element(1, -1.0), &DVector::from_element(1, 1.0))
            .unwrap();
        assert_eq!((b.pre_lo[0][0], b.pre_hi[0][0]), (-1.5, 2.5));
        assert_eq!((b.output_lo[0], b.output_hi[0]), (-1.0, 1.5));
    }

    #[test]
    fn invalid_box_rejected() {
        let net = abs_net();
        let r = net.propagate_bounds(&DVector::from_element(1, 1.0), &DVector::from_element(1, -1.0));
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn classification() {
        assert_eq!(NeuronStatus::from_bounds(-2.0, -0.5), NeuronStatus::StrictlyInactive);
        assert_eq!(NeuronStatus::from_bounds(0.2, 3.0), NeuronStatus::StrictlyActive);
        assert_eq!(NeuronStatus::from_bounds(-1.0, 1.0), NeuronStatus::Unstable);
        // û = 0 counts as inactive even though l̂ could also be 0.
        assert_eq!(NeuronStatus::from_bounds(0.0, 0.0), NeuronStatus::StrictlyInactive);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let net = ReluNetwork::new(vec![
            Layer::new(
                DMatrix::from_row_slice(2, 3, &[0.1, -1.0 / 3.0, 1e-300, 2.5e10, std::f64::consts::PI, -0.0]),
                DVector::from_column_slice(&[1.0 / 7.0, -2.0]),
            )
            .unwrap(),
            Layer::new(DMatrix::from_row_slice(1, 2, &[0.3, 0.7]), DVector::from_element(1, 1e-17)).unwrap(),
        ])
        .unwrap();
        let back = ReluNetwork::from_json(&net.to_json().unwrap()).unwrap();
        for (a, b) in net.layers().iter().zip(back.layers()) {
            for (x, y) in a.weights.iter().zip(b.weights.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in a.bias.iter().zip(b.bias.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn file_is_row_major() {
        let net = ReluNetwork::new(vec![Layer::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            DVector::zeros(2),
        )
        .unwrap()])
        .unwrap();
        assert_eq!(net.to_file().layers[0].w, vec![1.0, 2.0, 3.0, 4.0]);
    }
}
