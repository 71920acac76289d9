use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use nnmpc::bench::{run_benchmark_case, BenchCase, BenchOptions};
use nnmpc::closed_loop::{metrics, simulate};
use nnmpc::config::{file_hash, RunConfig};
use nnmpc::mpc::Method;
use nnmpc::network::{classify_neurons, NeuronStatus, ReluNetwork};
use nnmpc::regulator::LqrDesign;
use nnmpc::target::{steady_state_exact, steady_state_search, TargetMethod, TargetProblem};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "nnmpc", version, about = "MPC for ReLU-network models of the inverted pendulum")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; defaults apply when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel benchmark cells
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Output directory (overrides `output.dir`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a network on the pendulum residual
    Train,
    /// Interval bounds and neuron status over X × U
    Bounds,
    /// Steady-state target for the configured reference
    Target,
    /// LQR gain, target and terminal set
    Terminal,
    /// Closed-loop simulation with one method
    Run,
    /// Width, depth or horizon sweep with all three methods
    Bench {
        /// width, depth, horizon or all
        #[arg(long, default_value = "all")]
        case: String,
        /// Skip per-row trajectory files
        #[arg(long)]
        no_trajectories: bool,
    },
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: nnmpc::Error| e.to_string())
}

fn resolve(common: &Common) -> nnmpc::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = common.method {
        cfg.mpc.method = m;
    }
    if let Some(n) = common.horizon {
        cfg.mpc.horizon = n;
    }
    if let Some(t) = common.steps {
        cfg.mpc.steps = t;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(dir) = &common.out {
        cfg.output.dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// The configured network plus the file it lives in.
fn network(cfg: &RunConfig) -> Result<(ReluNetwork, PathBuf)> {
    if let Some(path) = &cfg.network.path {
        let net = ReluNetwork::load(path).with_context(|| format!("loading {}", path.display()))?;
        return Ok((net, path.clone()));
    }
    let out = cfg.train_network(&cfg.network.hidden)?;
    let path = cfg.output.dir.join("network.json");
    out.report.network.save(&path)?;
    out.report.write_log(cfg.output.dir.join("train_log.csv"))?;
    info!(
        "trained network: best val mse {:.3e} at epoch {}, grid rmse {:.4}",
        out.report.best_val_mse, out.report.best_epoch, out.grid_rmse
    );
    Ok((out.report.network, path))
}

fn provenance(cfg: &RunConfig, net_path: &Path) -> Result<serde_json::Value> {
    Ok(json!({
        "config": cfg,
        "network": { "path": net_path, "sha256": file_hash(net_path)? },
    }))
}

/// Returns `Ok(true)` when everything succeeded.
fn execute(cmd: &Command, cfg: &RunConfig, jobs: usize) -> Result<bool> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    match cmd {
        Command::Train => {
            let out = cfg.train_network(&cfg.network.hidden)?;
            let path = dir.join("network.json");
            out.report.network.save(&path)?;
            out.report.write_log(dir.join("train_log.csv"))?;
            let mut summary = provenance(cfg, &path)?;
            summary["best_epoch"] = json!(out.report.best_epoch);
            summary["best_val_mse"] = json!(out.report.best_val_mse);
            summary["grid_rmse"] = json!(out.grid_rmse);
            write_json(&dir.join("train.json"), &summary)?;
            println!(
                "network {} (val mse {:.3e}, grid rmse {:.4})",
                path.display(),
                out.report.best_val_mse,
                out.grid_rmse
            );
        }
        Command::Bounds => {
            let (net, path) = network(cfg)?;
            let joint = cfg.state_box().product(&cfg.input_box());
            let bounds = net.propagate_bounds(&joint.lo, &joint.hi)?;
            let status = classify_neurons(&bounds);
            let mut summary = provenance(cfg, &path)?;
            summary["bounds"] = serde_json::to_value(&bounds)?;
            summary["inactive"] = json!(status.count(NeuronStatus::StrictlyInactive));
            summary["active"] = json!(status.count(NeuronStatus::StrictlyActive));
            summary["unstable"] = json!(status.unstable());
            write_json(&dir.join("bounds.json"), &summary)?;
            println!(
                "output bounds [{:.6}, {:.6}]; {} unstable neurons",
                bounds.output_lo[0],
                bounds.output_hi[0],
                status.unstable()
            );
        }
        Command::Target => {
            let (net, path) = network(cfg)?;
            let model = cfg.plant().model;
            let (xb, ub, y_r, mpc) = (cfg.state_box(), cfg.input_box(), cfg.y_r(), cfg.mpc_config()?);
            let problem = TargetProblem {
                model: &model,
                net: &net,
                y_r: &y_r,
                r_s: &mpc.r_s,
                state_box: &xb,
                input_box: &ub,
            };
            let target = match cfg.target.method {
                TargetMethod::Exact => steady_state_exact(&problem, &mpc.miqp)?,
                TargetMethod::Search => steady_state_search(&problem, &cfg.design_options().search)?,
            };
            let mut summary = provenance(cfg, &path)?;
            summary["target"] = serde_json::to_value(&target)?;
            write_json(&dir.join("target.json"), &summary)?;
            println!(
                "x* = [{:.6}, {:.6}], u* = {:.6}, residual {:.2e} ({:?})",
                target.x[0], target.x[1], target.u[0], target.residual, target.status
            );
        }
        Command::Terminal => {
            let (net, path) = network(cfg)?;
            let ctrl = cfg.controller(net)?;
            let lqr = LqrDesign::new(&ctrl.model.a, &ctrl.model.b, &ctrl.config.q, &ctrl.config.r)?;
            ctrl.terminal.save(dir.join("terminal.json"))?;
            let mut summary = provenance(cfg, &path)?;
            summary["k"] = json!(ctrl.k.iter().collect::<Vec<_>>());
            summary["p"] = json!(ctrl.p.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>());
            summary["spectral_radius"] = json!(lqr.spectral_radius);
            summary["target"] = serde_json::to_value(&ctrl.target)?;
            summary["terminal_rows"] = json!(ctrl.terminal.num_rows());
            write_json(&dir.join("terminal_summary.json"), &summary)?;
            println!(
                "K = {:?}; terminal set with {} rows in {}",
                ctrl.k.iter().collect::<Vec<_>>(),
                ctrl.terminal.num_rows(),
                dir.join("terminal.json").display()
            );
        }
        Command::Run => {
            let (net, path) = network(cfg)?;
            let ctrl = cfg.controller(net)?;
            let traj = simulate(&ctrl, &cfg.plant(), &cfg.x0(), cfg.mpc.steps)?;
            let m = metrics(&traj, &cfg.y_r());
            traj.write_csv(dir.join("trajectory.csv"))?;
            let mut summary = provenance(cfg, &path)?;
            summary["metrics"] = serde_json::to_value(&m)?;
            summary["completed_steps"] = json!(traj.completed_steps());
            summary["state_violations"] = json!(traj.state_violations);
            summary["halted"] = json!(traj.halted);
            write_json(&dir.join("run.json"), &summary)?;
            println!(
                "{}: steady error {:.4}%, max solve time {:.4} s, {} of {} steps",
                cfg.mpc.method,
                m.steady_error_pct,
                m.max_solve_time,
                traj.completed_steps(),
                cfg.mpc.steps
            );
            if let Some(msg) = &traj.halted {
                eprintln!("halted at {msg}");
                return Ok(false);
            }
        }
        Command::Bench { case, no_trajectories } => {
            let cases = if case.eq_ignore_ascii_case("all") {
                BenchCase::ALL.to_vec()
            } else {
                vec![case.parse::<BenchCase>()?]
            };
            let opts = BenchOptions {
                jobs,
                out_dir: dir.clone(),
                trajectories: !no_trajectories,
            };
            let mut ok = true;
            for c in cases {
                let report = run_benchmark_case(c, cfg, &opts)?;
                println!("{c}: {} rows, {} failed", report.rows.len(), report.failures);
                for r in &report.rows {
                    println!(
                        "  {:>8} N={} {:>4}  err {:>10.4}%  max time {:>9.4} s  {:?}",
                        r.hidden, r.horizon, r.method, r.steady_error_pct, r.max_solve_time_s, r.outcome
                    );
                }
                ok &= report.failures == 0;
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match resolve(&cli.common) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match execute(&cli.command, &cfg, cli.common.jobs) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
