//! Nominal linear model `x⁺ = Ax + Bu + Df`, `y = Cx`, and the true plant
//! used in simulation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        check_dim("A columns", n, a.ncols())?;
        check_dim("B rows", n, b.nrows())?;
        check_dim("C columns", n, c.ncols())?;
        check_dim("D rows", n, d.nrows())?;
        if [&a, &b, &c, &d].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("model matrices must be finite".into()));
        }
        Ok(Self { a, b, c, d })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Dimension of the nonlinearity `f`.
    pub fn residual_dim(&self) -> usize {
        self.d.ncols()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, f: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.d * f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PendulumParams {
    pub ts: f64,
    pub m: f64,
    pub l: f64,
    pub g: f64,
    pub c: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            ts: 0.1,
            m: 1.0,
            l: 1.0,
            g: 9.8,
            c: 0.01,
        }
    }
}

impl PendulumParams {
    pub fn linear_model(&self) -> LinearModel {
        let ml2 = self.m * self.l * self.l;
        LinearModel {
            a: DMatrix::from_row_slice(2, 2, &[1.0, self.ts, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, self.ts / ml2]),
            c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            d: DMatrix::from_row_slice(2, 1, &[0.0, self.ts / self.l]),
        }
    }

    /// `g sin(x1) − c x2 / (m l)`.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        self.g * x[0].sin() - self.c * x[1] / (self.m * self.l)
    }
}

/// The part of the dynamics the controller does not model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Residual {
    Pendulum(PendulumParams),
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    pub model: LinearModel,
    pub residual: Residual,
}

impl PlantModel {
    pub fn pendulum(params: PendulumParams) -> Self {
        Self {
            model: params.linear_model(),
            residual: Residual::Pendulum(params),
        }
    }

    /// Purely linear plant (`f ≡ 0`).
    pub fn linear(model: LinearModel) -> Self {
        Self {
            model,
            residual: Residual::Zero,
        }
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.residual {
            Residual::Pendulum(p) => DVector::from_element(1, p.residual(x)),
            Residual::Zero => DVector::zeros(self.model.residual_dim()),
        }
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.model.c * x
    }
}

/// One step of the true dynamics.
pub fn plant_step(plant: &PlantModel, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    match &plant.residual {
        Residual::Pendulum(p) => {
            let ml2 = p.m * p.l * p.l;
            DVector::from_vec(vec![
                x[0] + p.ts * x[1],
                x[1] + p.ts * p.g * x[0].sin() / p.l - p.ts * p.c * x[1] / ml2 + p.ts * u[0] / ml2,
            ])
        }
        Residual::Zero => plant.model.step(x, u, &DVector::zeros(plant.model.residual_dim())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_is_equilibrium() {
        let p = PlantModel::pendulum(PendulumParams::default());
        let x = plant_step(&p, &DVector::zeros(2), &DVector::zeros(1));
        assert_eq!(x, DVector::zeros(2));
    }

    #[test]
    fn hanging_sideways() {
        let p = PlantModel::pendulum(PendulumParams::default());
        let x = plant_step(&p, &DVector::from_vec(vec![std::f64::consts::FRAC_PI_2, 0.0]), &DVector::zeros(1));
        assert_eq!(x[0], std::f64::consts::FRAC_PI_2);
        assert!((x[1] - 0.98).abs() < 1e-15);
    }

    #[test]
    fn decomposition_identity() {
        let p = PlantModel::pendulum(PendulumParams::default());
        for &(x1, x2, u) in &[(0.3, -1.2, 2.0), (-1.5, 4.0, -3.0), (1.0, 0.5, 0.1)] {
            let x = DVector::from_vec(vec![x1, x2]);
            let u = DVector::from_element(1, u);
            let direct = plant_step(&p, &x, &u);
            let split = p.model.step(&x, &u, &p.residual(&x));
            assert!((direct - split).amax() < 1e-12);
        }
    }
}
