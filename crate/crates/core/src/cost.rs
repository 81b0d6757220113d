//! Quadratic-form rewrite of the uptake tracking cost.
//!
//! The running cost `S_max^2 dz sum_i (R(y_i) - 1)^2 + lambda u^2` is written
//! as `y^T Q(y) y + lambda u^2` with a diagonal, state-dependent `Q(y)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hydraulics::FeddesParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub feddes: FeddesParams,
    pub dz: f64,
    pub lambda: f64,
    /// Add the fixed bottom node's contribution to reported running costs.
    /// Never affects `Q(y)`.
    pub include_fixed_bottom_node: bool,
}

impl CostModel {
    pub fn new(feddes: FeddesParams, dz: f64, lambda: f64) -> Result<Self> {
        let cm = Self {
            feddes,
            dz,
            lambda,
            include_fixed_bottom_node: true,
        };
        cm.validate()?;
        Ok(cm)
    }

    pub fn validate(&self) -> Result<()> {
        self.feddes.validate()?;
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParams(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.dz.is_finite() && self.dz > 0.0) {
            return Err(Error::InvalidParams(format!("dz must be positive, got {}", self.dz)));
        }
        Ok(())
    }

    fn prefactor(&self) -> f64 {
        self.feddes.s_max * self.feddes.s_max * self.dz
    }

    /// Unscaled diagonal weight at head `h`, so that `weight(h) h^2 = (R(h) - 1)^2`.
    fn weight(&self, h: f64) -> f64 {
        let FeddesParams { h1, h2, h3, h4, .. } = self.feddes;
        if h2 < h && h < h1 {
            let inv = 1.0 / (h2 - h1).powi(2);
            inv * (1.0 + h2 * h2 / (h * h) - 2.0 * h2 / h)
        } else if h4 < h && h < h3 {
            let inv = 1.0 / (h3 - h4).powi(2);
            inv * (1.0 + h3 * h3 / (h * h) - 2.0 * h3 / h)
        } else if h <= h4 || h >= h1 {
            1.0 / (h * h)
        } else {
            0.0
        }
    }

    /// Diagonal of `Q(y)`.
    pub fn weights(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        if let Some(node) = y.iter().position(|&v| v == 0.0) {
            return Err(Error::UndefinedWeight { node });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("state must be finite".into()));
        }
        let scale = self.prefactor();
        Ok(y.map(|h| scale * self.weight(h)))
    }

    /// `Q(y)` as a dense diagonal matrix.
    pub fn assemble_q(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_diagonal(&self.weights(y)?))
    }

    /// `y^T Q(y) y` over the state nodes.
    pub fn state_cost(&self, y: &DVector<f64>) -> Result<f64> {
        let q = self.weights(y)?;
        Ok(q.iter().zip(y.iter()).map(|(qi, yi)| qi * yi * yi).sum())
    }

    fn node_cost(&self, h: f64) -> Result<f64> {
        if h == 0.0 {
            return Err(Error::UndefinedWeight { node: usize::MAX });
        }
        Ok(self.prefactor() * self.weight(h) * h * h)
    }

    /// Running cost `y^T Q(y) y + lambda u^2`, plus the bottom node at
    /// `h_bottom` when `include_fixed_bottom_node` is set.
    pub fn running_cost(&self, y: &DVector<f64>, u: f64, h_bottom: f64) -> Result<f64> {
        let mut cost = self.state_cost(y)? + self.lambda * u * u;
        if self.include_fixed_bottom_node {
            cost += self.node_cost(h_bottom).map_err(|_| Error::UndefinedWeight { node: y.len() })?;
        }
        Ok(cost)
    }
}

/// Trapezoidal integral of `values` sampled at `times`.
pub fn total_cost(values: &[f64], times: &[f64]) -> Result<f64> {
    if values.len() != times.len() {
        return Err(Error::InvalidInput(format!(
            "cost series has {} samples but {} timestamps",
            values.len(),
            times.len()
        )));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("timestamps must be strictly increasing".into()));
    }
    Ok(times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum())
}

/// Running-cost samples and their trapezoidal integral, updated per sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CostAccumulator {
    pub times: Vec<f64>,
    pub running: Vec<f64>,
    pub total: f64,
}

impl CostAccumulator {
    pub fn push(&mut self, t: f64, value: f64) {
        if let (Some(&t0), Some(&v0)) = (self.times.last(), self.running.last()) {
            self.total += 0.5 * (t - t0) * (v0 + value);
        }
        self.times.push(t);
        self.running.push(value);
    }
}
