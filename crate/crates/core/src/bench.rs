//! Width, depth and horizon sweeps on the pendulum.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::closed_loop::{metrics, simulate, Trajectory};
use crate::config::{content_hash, RunConfig};
use crate::error::{Error, Result};
use crate::mpc::{ControllerState, Method};
use crate::network::ReluNetwork;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchCase {
    Width,
    Depth,
    Horizon,
}

impl BenchCase {
    pub const ALL: [BenchCase; 3] = [BenchCase::Width, BenchCase::Depth, BenchCase::Horizon];

    pub fn cells(self) -> Vec<BenchCell> {
        match self {
            BenchCase::Width => [10, 20, 50, 100, 200]
                .into_iter()
                .map(|w| BenchCell::new(vec![w], 1))
                .collect(),
            BenchCase::Depth => [1, 2, 4, 5]
                .into_iter()
                .map(|d| BenchCell::new(vec![10; d], 1))
                .collect(),
            BenchCase::Horizon => (2..=5).map(|n| BenchCell::new(vec![50], n)).collect(),
        }
    }
}

impl fmt::Display for BenchCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BenchCase::Width => "width",
            BenchCase::Depth => "depth",
            BenchCase::Horizon => "horizon",
        })
    }
}

impl FromStr for BenchCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "width" => Ok(BenchCase::Width),
            "depth" => Ok(BenchCase::Depth),
            "horizon" => Ok(BenchCase::Horizon),
            other => Err(Error::InvalidInput(format!(
                "unknown case `{other}` (expected width, depth or horizon)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BenchCell {
    pub hidden: Vec<usize>,
    pub horizon: usize,
}

impl BenchCell {
    pub fn new(hidden: Vec<usize>, horizon: usize) -> Self {
        Self { hidden, horizon }
    }
}

/// `10`, `10-10`, ...
pub fn hidden_tag(hidden: &[usize]) -> String {
    hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("-")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// All steps completed.
    Ok,
    /// A step had no usable solution.
    Halted,
    /// Design or setup failed before the loop started.
    Error,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub case: String,
    pub hidden: String,
    pub horizon: usize,
    pub method: Method,
    pub steady_error_pct: f64,
    pub max_solve_time_s: f64,
    pub completed_steps: usize,
    pub steps: usize,
    pub max_abs_u: f64,
    pub state_violations: usize,
    pub outcome: Outcome,
    pub message: String,
}

impl BenchRow {
    pub fn failed(&self) -> bool {
        self.outcome != Outcome::Ok
    }

    fn error(case: &str, cell: &BenchCell, method: Method, steps: usize, msg: String) -> Self {
        Self {
            case: case.to_string(),
            hidden: hidden_tag(&cell.hidden),
            horizon: cell.horizon,
            method,
            steady_error_pct: f64::NAN,
            max_solve_time_s: f64::NAN,
            completed_steps: 0,
            steps,
            max_abs_u: f64::NAN,
            state_violations: 0,
            outcome: Outcome::Error,
            message: msg,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NetworkRecord {
    pub hidden: String,
    pub path: PathBuf,
    /// Git-style SHA-256 of the file contents.
    pub sha256: String,
    pub trained: bool,
    pub best_val_mse: Option<f64>,
    pub grid_rmse: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub case: BenchCase,
    pub config: RunConfig,
    pub networks: Vec<NetworkRecord>,
    pub rows: Vec<BenchRow>,
    pub failures: usize,
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub jobs: usize,
    pub out_dir: PathBuf,
    /// Also write one trajectory file per row.
    pub trajectories: bool,
}

/// A closed-loop run with one method, summarised as a report row.
pub fn run_method(
    case: &str,
    cell: &BenchCell,
    controller: &ControllerState,
    cfg: &RunConfig,
    method: Method,
) -> (BenchRow, Option<Trajectory>) {
    let ctrl = controller.with_method(method);
    let traj = match simulate(&ctrl, &cfg.plant(), &cfg.x0(), cfg.mpc.steps) {
        Ok(t) => t,
        Err(e) => return (BenchRow::error(case, cell, method, cfg.mpc.steps, e.to_string()), None),
    };
    let m = metrics(&traj, &cfg.y_r());
    let max_abs_u = traj.inputs.iter().map(|u| u.amax()).fold(0.0, f64::max);
    let row = BenchRow {
        case: case.to_string(),
        hidden: hidden_tag(&cell.hidden),
        horizon: cell.horizon,
        method,
        steady_error_pct: m.steady_error_pct,
        max_solve_time_s: m.max_solve_time,
        completed_steps: traj.completed_steps(),
        steps: cfg.mpc.steps,
        max_abs_u,
        state_violations: traj.state_violations,
        outcome: if m.completed { Outcome::Ok } else { Outcome::Halted },
        message: traj.halted.clone().unwrap_or_default(),
    };
    (row, Some(traj))
}

/// Designs the controller for `net` and runs every method on it.
pub fn run_cell(case: &str, cell: &BenchCell, net: ReluNetwork, cfg: &RunConfig, methods: &[Method]) -> Vec<(BenchRow, Option<Trajectory>)> {
    let mut cfg = cfg.clone();
    cfg.mpc.horizon = cell.horizon;
    match cfg.controller(net) {
        Ok(ctrl) => methods
            .par_iter()
            .map(|&m| run_method(case, cell, &ctrl, &cfg, m))
            .collect(),
        Err(e) => {
            warn!("{case} cell {}: design failed: {e}", hidden_tag(&cell.hidden));
            methods
                .iter()
                .map(|&m| (BenchRow::error(case, cell, m, cfg.mpc.steps, format!("design: {e}")), None))
                .collect()
        }
    }
}

fn network_key(cfg: &RunConfig, hidden: &[usize]) -> Result<String> {
    let key = serde_json::to_string(&(
        hidden,
        cfg.seed,
        &cfg.plant,
        &cfg.constraints,
        cfg.network.samples,
        &cfg.network.train,
    ))?;
    Ok(content_hash(key.as_bytes())[..12].to_string())
}

/// Loads the network for `hidden` from `dir` when a file trained with the
/// same settings exists, otherwise trains and saves one.
pub fn obtain_network(cfg: &RunConfig, hidden: &[usize], dir: &Path) -> Result<(ReluNetwork, NetworkRecord)> {
    let path = dir.join(format!("net-{}-{}.json", hidden_tag(hidden), network_key(cfg, hidden)?));
    let (net, trained, val, rmse) = if path.exists() {
        info!("reusing {}", path.display());
        (ReluNetwork::load(&path)?, false, None, None)
    } else {
        info!("training hidden layers {}", hidden_tag(hidden));
        let out = cfg.train_network(hidden)?;
        out.report.network.save(&path)?;
        let log = path.with_extension("log.csv");
        out.report.write_log(&log)?;
        (out.report.network, true, Some(out.report.best_val_mse), Some(out.grid_rmse))
    };
    let record = NetworkRecord {
        hidden: hidden_tag(hidden),
        sha256: content_hash(&std::fs::read(&path)?),
        path,
        trained,
        best_val_mse: val,
        grid_rmse: rmse,
    };
    Ok((net, record))
}

/// Runs all cells of `case` with all three methods. Cell failures are
/// recorded in the report; only I/O and pool errors abort the sweep.
/// Writes `<case>.csv` and `<case>.json` to `opts.out_dir`.
pub fn run_benchmark_case(case: BenchCase, cfg: &RunConfig, opts: &BenchOptions) -> Result<BenchReport> {
    let net_dir = opts.out_dir.join("networks");
    std::fs::create_dir_all(&net_dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    let cells = case.cells();
    let name = case.to_string();
    let results: Vec<(Option<NetworkRecord>, Vec<(BenchRow, Option<Trajectory>)>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| match obtain_network(cfg, &cell.hidden, &net_dir) {
                Ok((net, rec)) => (Some(rec), run_cell(&name, cell, net, cfg, &Method::ALL)),
                Err(e) => {
                    warn!("{name} cell {}: network: {e}", hidden_tag(&cell.hidden));
                    let rows = Method::ALL
                        .iter()
                        .map(|&m| (BenchRow::error(&name, cell, m, cfg.mpc.steps, format!("network: {e}")), None))
                        .collect();
                    (None, rows)
                }
            })
            .collect()
    });
    let mut networks = Vec::new();
    let mut rows = Vec::new();
    let traj_dir = opts.out_dir.join(&name);
    for (rec, cell_rows) in results {
        networks.extend(rec);
        for (row, traj) in cell_rows {
            if let (true, Some(t)) = (opts.trajectories, traj) {
                std::fs::create_dir_all(&traj_dir)?;
                t.write_csv(traj_dir.join(format!("h{}-n{}-{}.csv", row.hidden, row.horizon, row.method)))?;
            }
            rows.push(row);
        }
    }
    let failures = rows.iter().filter(|r| r.failed()).count();
    let report = BenchReport {
        case,
        config: cfg.clone(),
        networks,
        rows,
        failures,
    };
    report.write(&opts.out_dir)?;
    Ok(report)
}

impl BenchReport {
    pub fn write_csv_to(&self, out: &mut impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join(format!("{}.csv", self.case)))?;
        self.write_csv_to(&mut f)?;
        std::fs::write(dir.join(format!("{}.json", self.case)), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_counts() {
        let rows: Vec<usize> = BenchCase::ALL.iter().map(|c| c.cells().len() * Method::ALL.len()).collect();
        assert_eq!(rows, vec![15, 12, 12]);
        assert_eq!(BenchCase::Depth.cells()[2].hidden, vec![10; 4]);
        assert!(BenchCase::Horizon.cells().iter().all(|c| c.hidden == vec![50]));
    }

    #[test]
    fn case_names_parse() {
        for c in BenchCase::ALL {
            assert_eq!(c.to_string().parse::<BenchCase>().unwrap(), c);
        }
        assert!("breadth".parse::<BenchCase>().is_err());
    }
}
