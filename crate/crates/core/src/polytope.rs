//! Axis-aligned boxes and halfspace polytopes `{x : Hx ≤ h}`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::qp::{solve_qp, QpProblem, QpSettings, QpStatus};

pub const MEMBERSHIP_TOL: f64 = 1e-9;

fn lp_settings() -> QpSettings {
    QpSettings {
        tol_abs: 1e-11,
        tol_rel: 1e-12,
        ..QpSettings::default()
    }
}

/// Box `{x : lo ≤ x ≤ hi}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    #[serde(with = "crate::serde_vec")]
    pub lo: DVector<f64>,
    #[serde(with = "crate::serde_vec")]
    pub hi: DVector<f64>,
}

impl BoxSet {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        check_dim("box bounds", lo.len(), hi.len())?;
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidInput("box needs lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(radius: &[f64]) -> Self {
        let hi = DVector::from_column_slice(radius);
        Self { lo: -&hi, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.dim() && (0..x.len()).all(|i| x[i] >= self.lo[i] - tol && x[i] <= self.hi[i] + tol)
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.lo + &self.hi) * 0.5
    }

    /// `{x - c : x ∈ self}`.
    pub fn shifted(&self, c: &DVector<f64>) -> Self {
        Self {
            lo: &self.lo - c,
            hi: &self.hi - c,
        }
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &BoxSet) -> Self {
        let n = self.dim();
        let m = other.dim();
        Self {
            lo: DVector::from_fn(n + m, |i, _| if i < n { self.lo[i] } else { other.lo[i - n] }),
            hi: DVector::from_fn(n + m, |i, _| if i < n { self.hi[i] } else { other.hi[i - n] }),
        }
    }

    /// Interval image `{M x : x ∈ self}` as a box.
    pub fn image(&self, m: &DMatrix<f64>) -> Self {
        let mut lo = DVector::zeros(m.nrows());
        let mut hi = DVector::zeros(m.nrows());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v >= 0.0 {
                    lo[r] += v * self.lo[c];
                    hi[r] += v * self.hi[c];
                } else {
                    lo[r] += v * self.hi[c];
                    hi[r] += v * self.lo[c];
                }
            }
        }
        Self { lo, hi }
    }

    /// Support function `max_{w ∈ box} aᵀw`.
    pub fn support(&self, a: &[f64]) -> f64 {
        a.iter()
            .enumerate()
            .map(|(j, &v)| if v >= 0.0 { v * self.hi[j] } else { v * self.lo[j] })
            .sum()
    }

    pub fn vertices(&self) -> Vec<DVector<f64>> {
        let n = self.dim();
        (0..1usize << n)
            .map(|mask| DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { self.hi[i] } else { self.lo[i] }))
            .collect()
    }

    pub fn to_polytope(&self) -> Polytope {
        let n = self.dim();
        let mut h_mat = DMatrix::zeros(2 * n, n);
        let mut h = DVector::zeros(2 * n);
        for i in 0..n {
            h_mat[(2 * i, i)] = 1.0;
            h[2 * i] = self.hi[i];
            h_mat[(2 * i + 1, i)] = -1.0;
            h[2 * i + 1] = -self.lo[i];
        }
        Polytope { h_mat, h }
    }
}

/// Halfspace polytope `{x : H x ≤ h}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polytope {
    #[serde(rename = "H")]
    pub h_mat: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolytopeFile {
    dim: usize,
    #[serde(rename = "H")]
    rows: Vec<Vec<f64>>,
    h: Vec<f64>,
}

impl Polytope {
    /// Rejects all-zero rows of `H`.
    pub fn new(h_mat: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        check_dim("polytope offsets", h_mat.nrows(), h.len())?;
        for r in 0..h_mat.nrows() {
            if h_mat.row(r).amax() == 0.0 {
                return Err(Error::InvalidInput(format!("polytope row {r} is all zero")));
            }
        }
        Ok(Self { h_mat, h })
    }

    pub fn dim(&self) -> usize {
        self.h_mat.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.h_mat.nrows()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.max_violation(x) <= MEMBERSHIP_TOL
    }

    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let hx = &self.h_mat * x;
        (0..hx.len()).map(|i| hx[i] - self.h[i]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// `{x + c : x ∈ self}`, i.e. offsets become `h + H c`.
    pub fn translated(&self, c: &DVector<f64>) -> Self {
        Self {
            h_mat: self.h_mat.clone(),
            h: &self.h + &self.h_mat * c,
        }
    }

    /// Maximises `aᵀx` over the polytope restricted to the rows in `active`.
    fn maximise(&self, a: &DVector<f64>, active: &[usize]) -> Option<(QpStatus, f64)> {
        let n = self.dim();
        let mut rows = DMatrix::zeros(active.len(), n);
        let mut u = DVector::zeros(active.len());
        for (k, &r) in active.iter().enumerate() {
            rows.row_mut(k).copy_from(&self.h_mat.row(r));
            u[k] = self.h[r];
        }
        let lp = QpProblem::linear(-a, rows, DVector::from_element(active.len(), f64::NEG_INFINITY), u).ok()?;
        let sol = solve_qp(&lp, &lp_settings());
        Some((sol.status, -sol.objective))
    }

    /// `max aᵀx` over the polytope; `None` when unbounded, empty or unsolved.
    pub fn support(&self, a: &DVector<f64>) -> Option<f64> {
        let all: Vec<usize> = (0..self.num_rows()).collect();
        match self.maximise(a, &all)? {
            (QpStatus::Optimal, v) => Some(v),
            _ => None,
        }
    }

    /// True when the polytope has no point.
    pub fn is_empty(&self) -> bool {
        if self.num_rows() == 0 {
            return false;
        }
        let all: Vec<usize> = (0..self.num_rows()).collect();
        matches!(self.maximise(&DVector::zeros(self.dim()), &all), Some((QpStatus::Infeasible, _)))
    }

    /// Drops every row whose left-hand side, maximised over the other
    /// remaining rows, stays within `h_j + 1e-9`. Rows whose LP is unbounded
    /// are kept.
    pub fn remove_redundant(&self) -> Result<Self> {
        if self.is_empty() {
            return Err(Error::EmptySet("cannot prune an empty polytope".into()));
        }
        let mut keep: Vec<usize> = (0..self.num_rows()).collect();
        let mut j = 0;
        while j < keep.len() {
            let row = keep[j];
            let others: Vec<usize> = keep.iter().copied().filter(|&r| r != row).collect();
            let a = self.h_mat.row(row).transpose();
            let redundant = match self.maximise(&a, &others) {
                Some((QpStatus::Optimal, value)) => value <= self.h[row] + MEMBERSHIP_TOL,
                _ => false,
            };
            if redundant {
                keep.remove(j);
            } else {
                j += 1;
            }
        }
        Ok(self.select(&keep))
    }

    fn select(&self, rows: &[usize]) -> Self {
        let mut h_mat = DMatrix::zeros(rows.len(), self.dim());
        let mut h = DVector::zeros(rows.len());
        for (k, &r) in rows.iter().enumerate() {
            h_mat.row_mut(k).copy_from(&self.h_mat.row(r));
            h[k] = self.h[r];
        }
        Self { h_mat, h }
    }

    /// Axis-aligned bounding box, or `None` when unbounded or empty.
    pub fn bounding_box(&self) -> Option<BoxSet> {
        let n = self.dim();
        let all: Vec<usize> = (0..self.num_rows()).collect();
        let mut lo = DVector::zeros(n);
        let mut hi = DVector::zeros(n);
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            match self.maximise(&e, &all)? {
                (QpStatus::Optimal, v) => hi[i] = v,
                _ => return None,
            }
            match self.maximise(&-&e, &all)? {
                (QpStatus::Optimal, v) => lo[i] = -v,
                _ => return None,
            }
        }
        Some(BoxSet { lo, hi })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = PolytopeFile {
            dim: self.dim(),
            rows: (0..self.num_rows())
                .map(|r| self.h_mat.row(r).iter().copied().collect())
                .collect(),
            h: self.h.iter().copied().collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PolytopeFile = serde_json::from_str(text)?;
        let mut h_mat = DMatrix::zeros(file.rows.len(), file.dim);
        for (r, row) in file.rows.iter().enumerate() {
            check_dim("polytope row", file.dim, row.len())?;
            for (c, v) in row.iter().enumerate() {
                h_mat[(r, c)] = *v;
            }
        }
        Self::new(h_mat, DVector::from_vec(file.h))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
