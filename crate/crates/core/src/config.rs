//! Run configuration for the pendulum experiments, read from TOML.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::miqp::MiqpSettings;
use crate::mpc::{ControllerState, DesignOptions, Method, MpcConfig};
use crate::network::ReluNetwork;
use crate::plant::{PendulumParams, PlantModel};
use crate::polytope::BoxSet;
use crate::target::{RpiOptions, SearchOptions, TargetMethod};
use crate::trainer::{generate_dataset, grid_rmse, train, TrainConfig, TrainReport};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Constraints {
    pub x_lo: Vec<f64>,
    pub x_hi: Vec<f64>,
    pub u_lo: Vec<f64>,
    pub u_hi: Vec<f64>,
}

impl Default for Constraints {
    fn default() -> Self {
        let half_pi = std::f64::consts::FRAC_PI_2;
        Self {
            x_lo: vec![-half_pi, -5.0],
            x_hi: vec![half_pi, 5.0],
            u_lo: vec![-3.0],
            u_hi: vec![3.0],
        }
    }
}

/// Diagonal weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Weights {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub phi: Vec<f64>,
    pub r_s: Vec<f64>,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            q: vec![1e5, 1e2],
            r: vec![1.0],
            phi: vec![100.0],
            r_s: vec![1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Reference {
    pub y_r: Vec<f64>,
    pub x0: Vec<f64>,
}

impl Default for Reference {
    fn default() -> Self {
        Self {
            y_r: vec![std::f64::consts::PI / 5.0],
            x0: vec![0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSection {
    pub horizon: usize,
    pub method: Method,
    pub prune: bool,
    pub steps: usize,
    pub gap_tol: f64,
    pub node_limit: usize,
}

impl Default for MpcSection {
    fn default() -> Self {
        Self {
            horizon: 1,
            method: Method::Mip,
            prune: true,
            steps: 100,
            gap_tol: 1e-6,
            node_limit: 100_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub method: TargetMethod,
    pub penalty: f64,
    pub restarts: usize,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            method: TargetMethod::Exact,
            penalty: 1e6,
            restarts: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerminalSection {
    /// Intersect the initial invariant-set candidate with the input box
    /// mapped through the feedback law.
    pub input_rows: bool,
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for TerminalSection {
    fn default() -> Self {
        let rpi = RpiOptions::default();
        Self {
            input_rows: true,
            eps: rpi.eps,
            max_iter: rpi.max_iter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Load this network instead of training one.
    pub path: Option<PathBuf>,
    pub hidden: Vec<usize>,
    pub samples: usize,
    pub train: TrainConfig,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            path: None,
            hidden: vec![10],
            samples: 20_000,
            train: TrainConfig {
                weight_decay: 0.1,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

/// Complete description of a run. Every report embeds the resolved copy.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds data sampling, training and the target search.
    pub seed: u64,
    pub plant: PendulumParams,
    pub constraints: Constraints,
    pub weights: Weights,
    pub reference: Reference,
    pub mpc: MpcSection,
    pub target: TargetSection,
    pub terminal: TerminalSection,
    pub network: NetworkSection,
    pub output: OutputSection,
}

fn diag(name: &str, v: &[f64], dim: usize) -> Result<DMatrix<f64>> {
    if v.len() != dim {
        return Err(Error::Config(format!("{name} needs {dim} entries, got {}", v.len())));
    }
    Ok(DMatrix::from_diagonal(&DVector::from_column_slice(v)))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.plant;
        for (name, v) in [("ts", p.ts), ("m", p.m), ("l", p.l)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("plant.{name} must be positive")));
            }
        }
        if !p.g.is_finite() || !p.c.is_finite() {
            return Err(Error::Config("plant.g and plant.c must be finite".into()));
        }
        let c = &self.constraints;
        for (name, lo, hi, dim) in [("x", &c.x_lo, &c.x_hi, 2), ("u", &c.u_lo, &c.u_hi, 1)] {
            if lo.len() != dim || hi.len() != dim {
                return Err(Error::Config(format!("{name} bounds need {dim} entries")));
            }
            if lo.iter().zip(hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
                return Err(Error::Config(format!("{name} bounds must be finite with lo <= hi")));
            }
        }
        if self.reference.y_r.len() != 1 || self.reference.x0.len() != 2 {
            return Err(Error::Config("reference.y_r needs 1 entry and reference.x0 needs 2".into()));
        }
        if !self.state_box().contains(&self.x0(), 0.0) {
            return Err(Error::Config("reference.x0 lies outside the state box".into()));
        }
        if self.mpc.steps == 0 {
            return Err(Error::Config("mpc.steps must be at least 1".into()));
        }
        if !(self.mpc.gap_tol >= 0.0) {
            return Err(Error::Config("mpc.gap_tol must be non-negative".into()));
        }
        if self.network.path.is_none() {
            if self.network.hidden.is_empty() || self.network.hidden.contains(&0) {
                return Err(Error::Config("network.hidden needs at least one non-empty layer".into()));
            }
            if self.network.samples < 2 {
                return Err(Error::Config("network.samples must be at least 2".into()));
            }
        }
        let t = &self.network.train;
        if !(t.lr > 0.0) || t.epochs == 0 || t.batch == 0 || !(0.0..1.0).contains(&t.val_fraction) {
            return Err(Error::Config("network.train needs lr > 0, epochs >= 1, batch >= 1 and val_fraction in [0, 1)".into()));
        }
        self.mpc_config()?
            .validate(2, 1, 1)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn plant(&self) -> PlantModel {
        PlantModel::pendulum(self.plant)
    }

    pub fn state_box(&self) -> BoxSet {
        let c = &self.constraints;
        BoxSet::new(DVector::from_column_slice(&c.x_lo), DVector::from_column_slice(&c.x_hi))
            .expect("validated state box")
    }

    pub fn input_box(&self) -> BoxSet {
        let c = &self.constraints;
        BoxSet::new(DVector::from_column_slice(&c.u_lo), DVector::from_column_slice(&c.u_hi))
            .expect("validated input box")
    }

    pub fn y_r(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.reference.y_r)
    }

    pub fn x0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.reference.x0)
    }

    pub fn mpc_config(&self) -> Result<MpcConfig> {
        let w = &self.weights;
        Ok(MpcConfig {
            horizon: self.mpc.horizon,
            q: diag("weights.q", &w.q, 2)?,
            r: diag("weights.r", &w.r, 1)?,
            phi: diag("weights.phi", &w.phi, 1)?,
            r_s: diag("weights.r_s", &w.r_s, 1)?,
            method: self.mpc.method,
            prune: self.mpc.prune,
            miqp: MiqpSettings {
                gap_tol: self.mpc.gap_tol,
                node_limit: self.mpc.node_limit,
                ..MiqpSettings::default()
            },
            ts: self.plant.ts,
        })
    }

    pub fn design_options(&self) -> DesignOptions {
        DesignOptions {
            target_method: self.target.method,
            search: SearchOptions {
                penalty_weight: self.target.penalty,
                restarts: self.target.restarts,
                seed: self.seed,
                ..SearchOptions::default()
            },
            rpi: RpiOptions {
                eps: self.terminal.eps,
                max_iter: self.terminal.max_iter,
            },
            terminal_input_rows: self.terminal.input_rows,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.network.train.clone()
        }
    }

    /// Trains a network with the given hidden sizes on fresh samples of the
    /// plant residual over `X × U`.
    pub fn train_network(&self, hidden: &[usize]) -> Result<TrainOutcome> {
        let plant = self.plant();
        let data = generate_dataset(&plant, &self.state_box(), &self.input_box(), self.network.samples, self.seed)?;
        let mut shape = vec![3];
        shape.extend_from_slice(hidden);
        shape.push(1);
        let report = train(&shape, &data, &self.train_config())?;
        let joint = self.state_box().product(&self.input_box());
        let rmse = grid_rmse(&report.network, &plant, &joint, 21)?;
        Ok(TrainOutcome { report, grid_rmse: rmse })
    }

    /// The configured network: loaded from `network.path` or trained.
    pub fn network(&self) -> Result<ReluNetwork> {
        match &self.network.path {
            Some(path) => ReluNetwork::load(path),
            None => Ok(self.train_network(&self.network.hidden)?.report.network),
        }
    }

    /// Offline controller design for `net` with this configuration.
    pub fn controller(&self, net: ReluNetwork) -> Result<ControllerState> {
        ControllerState::design(
            self.plant().model,
            net,
            self.state_box(),
            self.input_box(),
            &self.y_r(),
            self.mpc_config()?,
            &self.design_options(),
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// RMSE against the true residual on a 21-point-per-axis grid.
    pub grid_rmse: f64,
}

/// Git-style object hash: SHA-256 of `"blob {len}\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn file_hash(path: impl AsRef<Path>) -> Result<String> {
    Ok(content_hash(&std::fs::read(path)?))
}
