//! Closed-loop simulation of the true plant under the MPC controller.

use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::DVector;
use serde::Serialize;

use crate::error::{check_dim, Result};
use crate::mpc::{control_step, ControllerState, StepStatus};
pub use crate::plant::{plant_step, PendulumParams, PlantModel, Residual};

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub ts: f64,
    /// `x(0..=T')` where `T'` is the number of completed steps.
    #[serde(with = "crate::serde_vec::many")]
    pub states: Vec<DVector<f64>>,
    #[serde(with = "crate::serde_vec::many")]
    pub outputs: Vec<DVector<f64>>,
    /// Applied inputs, one per completed step.
    #[serde(with = "crate::serde_vec::many")]
    pub inputs: Vec<DVector<f64>>,
    /// One entry per attempted step, including a final failed one.
    pub solve_times: Vec<f64>,
    pub statuses: Vec<StepStatus>,
    pub objectives: Vec<f64>,
    pub nodes: Vec<usize>,
    /// Realised states outside the state box.
    pub state_violations: usize,
    /// Diagnostics of the step that stopped the run early.
    pub halted: Option<String>,
}

impl Trajectory {
    pub fn completed_steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn max_solve_time(&self) -> f64 {
        self.solve_times.iter().copied().fold(0.0, f64::max)
    }

    /// Delimited text with columns `t, x1.., u.., y.., solve_time_s, status`;
    /// one row per state, the last row carrying no input.
    pub fn write_csv_to(&self, out: &mut impl Write) -> Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(1, |u| u.len());
        let p = self.outputs.first().map_or(1, |y| y.len());
        let names = |base: &str, k: usize| -> Vec<String> {
            if k == 1 && base != "x" {
                vec![base.to_string()]
            } else {
                (1..=k).map(|i| format!("{base}{i}")).collect()
            }
        };
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(names("x", n));
        header.extend(names("u", m));
        header.extend(names("y", p));
        header.push("solve_time_s".into());
        header.push("status".into());
        w.write_record(&header)?;
        for (t, x) in self.states.iter().enumerate() {
            let mut rec = vec![format!("{}", t as f64 * self.ts)];
            rec.extend(x.iter().map(|v| v.to_string()));
            match self.inputs.get(t) {
                Some(u) => rec.extend(u.iter().map(|v| v.to_string())),
                None => rec.extend(std::iter::repeat_n(String::new(), m)),
            }
            rec.extend(self.outputs[t].iter().map(|v| v.to_string()));
            rec.push(self.solve_times.get(t).map_or(String::new(), |s| s.to_string()));
            rec.push(self.statuses.get(t).map_or(String::new(), |s| s.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write_csv_to(&mut f)
    }
}

/// Runs `steps` control steps from `x0`. A step without a usable solution
/// stops the run; its status and diagnostics are kept in the trajectory.
pub fn simulate(controller: &ControllerState, plant: &PlantModel, x0: &DVector<f64>, steps: usize) -> Result<Trajectory> {
    check_dim("initial state", plant.model.states(), x0.len())?;
    check_dim("plant states", controller.model.states(), plant.model.states())?;
    let mut traj = Trajectory {
        ts: controller.config.ts,
        states: vec![x0.clone()],
        outputs: vec![plant.output(x0)],
        inputs: Vec::new(),
        solve_times: Vec::new(),
        statuses: Vec::new(),
        objectives: Vec::new(),
        nodes: Vec::new(),
        state_violations: 0,
        halted: None,
    };
    let mut x = x0.clone();
    for t in 0..steps {
        let res = control_step(controller, &x)?;
        traj.solve_times.push(res.solve_time);
        traj.statuses.push(res.status);
        traj.objectives.push(res.objective);
        traj.nodes.push(res.nodes);
        let Some(u) = res.u else {
            let msg = format!("step {t}: {} ({})", res.status, res.diagnostics);
            warn!("run halted at {msg}");
            traj.halted = Some(msg);
            break;
        };
        x = plant_step(plant, &x, &u);
        if !controller.state_box.contains(&x, 1e-9) {
            traj.state_violations += 1;
        }
        traj.inputs.push(u);
        traj.outputs.push(plant.output(&x));
        traj.states.push(x.clone());
    }
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    /// Mean of `|y − y_r| / |y_r| · 100` over the final 10% of steps, or
    /// the mean absolute error when `absolute` is set.
    pub steady_error_pct: f64,
    /// `y_r = 0`: the error is absolute rather than relative.
    pub absolute: bool,
    pub max_solve_time: f64,
    pub window: usize,
    pub completed: bool,
}

/// Tracking and runtime summary. Uses the outputs after each applied input.
pub fn metrics(traj: &Trajectory, y_r: &DVector<f64>) -> Metrics {
    let outputs = &traj.outputs[1..];
    let window = outputs.len().div_ceil(10).max(usize::from(!outputs.is_empty()));
    let tail = &outputs[outputs.len() - window..];
    let ref_norm = y_r.norm();
    let absolute = ref_norm == 0.0;
    let steady_error_pct = if tail.is_empty() {
        f64::NAN
    } else {
        let mean = tail.iter().map(|y| (y - y_r).norm()).sum::<f64>() / tail.len() as f64;
        if absolute {
            mean
        } else {
            mean / ref_norm * 100.0
        }
    };
    Metrics {
        steady_error_pct,
        absolute,
        max_solve_time: traj.max_solve_time(),
        window,
        completed: traj.halted.is_none(),
    }
}
