//! Branch-and-bound for convex QPs with binary variables.
//!
//! Best-bound node selection, most-fractional branching with ties broken by
//! the lowest index, and the down branch ahead of the up branch among nodes
//! with equal bounds. Every node is a QP over the variables left free after
//! substituting the fixed binaries.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::qp::{solve_qp, QpProblem, QpSettings, QpStatus};

const INTEGRALITY_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct MiqpProblem {
    pub base: QpProblem,
    pub binaries: Vec<usize>,
}

impl MiqpProblem {
    /// Checks that every binary index is in range and that `base` carries a
    /// `0 ≤ x_j ≤ 1` row for each.
    pub fn new(base: QpProblem, mut binaries: Vec<usize>) -> Result<Self> {
        binaries.sort_unstable();
        binaries.dedup();
        let n = base.num_vars();
        for &j in &binaries {
            if j >= n {
                return Err(Error::InvalidInput(format!("binary index {j} out of range")));
            }
            let has_box = (0..base.num_rows()).any(|r| {
                let row = base.a.row(r);
                row[j] == 1.0
                    && row.iter().enumerate().all(|(k, v)| k == j || *v == 0.0)
                    && base.l[r] == 0.0
                    && base.u[r] == 1.0
            });
            if !has_box {
                return Err(Error::InvalidInput(format!("binary {j} lacks a 0 <= x <= 1 row")));
            }
        }
        Ok(Self { base, binaries })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum MiqpStatus {
    Optimal,
    Infeasible,
    NodeLimit,
}

#[derive(Clone, Debug)]
pub struct MiqpSolution {
    pub status: MiqpStatus,
    /// Best point found; binaries are exactly 0 or 1. Empty when no
    /// incumbent exists.
    pub x: DVector<f64>,
    pub objective: f64,
    /// Relative gap between incumbent and best remaining bound.
    pub gap: f64,
    pub nodes: usize,
    /// Root relaxation objective.
    pub root_bound: f64,
    /// Incumbent objective each time it improved.
    pub incumbent_history: Vec<f64>,
    /// Node QPs that ended without a clear optimal/infeasible verdict.
    pub numerical_failures: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MiqpSettings {
    pub gap_tol: f64,
    pub node_limit: usize,
    pub qp: QpSettings,
}

impl Default for MiqpSettings {
    fn default() -> Self {
        Self {
            gap_tol: 1e-6,
            node_limit: 100_000,
            qp: QpSettings::default(),
        }
    }
}

struct Node {
    bound: f64,
    seq: u64,
    fixings: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // BinaryHeap is a max-heap: smaller bound, then smaller seq, ranks higher.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

enum NodeOutcome {
    Solved { x: DVector<f64>, objective: f64 },
    Infeasible,
    Failed,
}

fn solve_node(p: &MiqpProblem, fixings: &[(usize, f64)], settings: &QpSettings) -> NodeOutcome {
    if fixings.is_empty() {
        let sol = solve_qp(&p.base, settings);
        return match sol.status {
            QpStatus::Optimal => NodeOutcome::Solved {
                objective: sol.objective,
                x: sol.x,
            },
            QpStatus::Infeasible => NodeOutcome::Infeasible,
            _ => NodeOutcome::Failed,
        };
    }
    let Ok(fixed) = p.base.fix_variables(fixings) else {
        return NodeOutcome::Failed;
    };
    if fixed.trivially_infeasible {
        return NodeOutcome::Infeasible;
    }
    let sol = solve_qp(&fixed.problem, settings);
    match sol.status {
        QpStatus::Optimal => NodeOutcome::Solved {
            objective: sol.objective,
            x: fixed.expand(&sol.x),
        },
        QpStatus::Infeasible => NodeOutcome::Infeasible,
        _ => NodeOutcome::Failed,
    }
}

fn gap_abs(incumbent: f64, gap_tol: f64) -> f64 {
    gap_tol * incumbent.abs().max(1.0)
}

/// Global optimum of a convex MIQP within `settings.gap_tol`.
pub fn solve_miqp(p: &MiqpProblem, settings: &MiqpSettings) -> MiqpSolution {
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        fixings: Vec::new(),
    });
    let mut incumbent: Option<(DVector<f64>, f64)> = None;
    let mut history = Vec::new();
    let mut nodes = 0usize;
    let mut failures = 0usize;
    let mut root_bound = f64::NAN;
    let mut hit_limit = false;

    while let Some(node) = heap.pop() {
        if let Some((_, inc)) = &incumbent {
            if node.bound >= inc - gap_abs(*inc, settings.gap_tol) {
                // Best-bound order: nothing left can improve.
                heap.clear();
                break;
            }
        }
        if nodes >= settings.node_limit {
            heap.push(node);
            hit_limit = true;
            break;
        }
        nodes += 1;
        let (x, obj) = match solve_node(p, &node.fixings, &settings.qp) {
            NodeOutcome::Solved { x, objective } => (x, objective),
            NodeOutcome::Infeasible => continue,
            NodeOutcome::Failed => {
                // No bound from this node: keep its subtree alive under the parent bound.
                failures += 1;
                if let Some(&j) = p.binaries.iter().find(|j| !node.fixings.iter().any(|(k, _)| k == *j)) {
                    for value in [0.0, 1.0] {
                        seq += 1;
                        let mut fixings = node.fixings.clone();
                        fixings.push((j, value));
                        heap.push(Node {
                            bound: node.bound,
                            seq,
                            fixings,
                        });
                    }
                }
                continue;
            }
        };
        if node.fixings.is_empty() {
            root_bound = obj;
        }
        if let Some((_, inc)) = &incumbent {
            if obj >= inc - gap_abs(*inc, settings.gap_tol) {
                continue;
            }
        }

        // Most fractional free binary; strict comparison keeps the lowest index on ties.
        let mut branch: Option<(usize, f64)> = None;
        for &j in &p.binaries {
            if node.fixings.iter().any(|(k, _)| *k == j) {
                continue;
            }
            let frac = (x[j] - x[j].round()).abs();
            if frac > INTEGRALITY_TOL && branch.is_none_or(|(_, best)| frac > best) {
                branch = Some((j, frac));
            }
        }

        match branch {
            None => {
                let mut fixings = node.fixings.clone();
                for &j in &p.binaries {
                    if !fixings.iter().any(|(k, _)| *k == j) {
                        fixings.push((j, x[j].round().clamp(0.0, 1.0)));
                    }
                }
                if let NodeOutcome::Solved { x, objective } = solve_node(p, &fixings, &settings.qp) {
                    if incumbent.as_ref().is_none_or(|(_, inc)| objective < *inc) {
                        history.push(objective);
                        incumbent = Some((x, objective));
                    }
                } else {
                    failures += 1;
                }
            }
            Some((j, _)) => {
                for value in [0.0, 1.0] {
                    seq += 1;
                    let mut fixings = node.fixings.clone();
                    fixings.push((j, value));
                    heap.push(Node {
                        bound: obj,
                        seq,
                        fixings,
                    });
                }
            }
        }
    }

    let best_open = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    match incumbent {
        Some((x, objective)) => {
            let lower = best_open.min(objective);
            let gap = (objective - lower) / objective.abs().max(1.0);
            let status = if hit_limit && gap > settings.gap_tol {
                MiqpStatus::NodeLimit
            } else {
                MiqpStatus::Optimal
            };
            MiqpSolution {
                status,
                x,
                objective,
                gap: gap.max(0.0),
                nodes,
                root_bound,
                incumbent_history: history,
                numerical_failures: failures,
            }
        }
        None => MiqpSolution {
            status: if hit_limit {
                MiqpStatus::NodeLimit
            } else {
                MiqpStatus::Infeasible
            },
            x: DVector::zeros(0),
            objective: f64::INFINITY,
            gap: f64::INFINITY,
            nodes,
            root_bound,
            incumbent_history: history,
            numerical_failures: failures,
        },
    }
}

/// Solves one QP per binary assignment and keeps the best. Limited to 20
/// binaries.
pub fn enumerate_binaries(p: &MiqpProblem, qp: &QpSettings) -> Result<MiqpSolution> {
    let k = p.binaries.len();
    if k > 20 {
        return Err(Error::InvalidInput(format!("{k} binaries is too many to enumerate")));
    }
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut history = Vec::new();
    let mut failures = 0;
    for mask in 0u32..(1u32 << k) {
        let fixings: Vec<(usize, f64)> = p
            .binaries
            .iter()
            .enumerate()
            .map(|(bit, &j)| (j, f64::from((mask >> bit) & 1)))
            .collect();
        match solve_node(p, &fixings, qp) {
            NodeOutcome::Solved { x, objective } => {
                if best.as_ref().is_none_or(|(_, b)| objective < *b) {
                    history.push(objective);
                    best = Some((x, objective));
                }
            }
            NodeOutcome::Infeasible => {}
            NodeOutcome::Failed => failures += 1,
        }
    }
    let nodes = 1usize << k;
    Ok(match best {
        Some((x, objective)) => MiqpSolution {
            status: MiqpStatus::Optimal,
            x,
            objective,
            gap: 0.0,
            nodes,
            root_bound: f64::NAN,
            incumbent_history: history,
            numerical_failures: failures,
        },
        None => MiqpSolution {
            status: MiqpStatus::Infeasible,
            x: DVector::zeros(0),
            objective: f64::INFINITY,
            gap: f64::INFINITY,
            nodes,
            root_bound: f64::NAN,
            incumbent_history: history,
            numerical_failures: failures,
        },
    })
}
