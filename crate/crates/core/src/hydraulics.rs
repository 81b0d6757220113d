//! Soil constitutive relations: water retention, hydraulic conductivity,
//! soil water capacity and the Feddes root water uptake sink.
//!
//! All heads are in cm. Inputs with `h > 0` are evaluated at `h = 0`, so the
//! retention and conductivity curves saturate at `theta_s` and `k_s`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Haverkamp retention/conductivity parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HaverkampParams {
    pub k_s: f64,
    pub a_const: f64,
    pub alpha: f64,
    pub theta_s: f64,
    pub theta_r: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl HaverkampParams {
    /// Sand column parameters used by the Haverkamp experiments.
    pub fn celia() -> Self {
        Self {
            k_s: 34.0,
            a_const: 1.175e6,
            alpha: 1.611e6,
            theta_s: 0.287,
            theta_r: 0.075,
            beta1: 4.74,
            beta2: 3.96,
        }
    }
}

/// Gardner exponential model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GardnerParams {
    pub rho: f64,
    pub k_s: f64,
    pub theta_s: f64,
    pub theta_r: f64,
}

impl GardnerParams {
    pub fn standard() -> Self {
        Self {
            rho: 0.1,
            k_s: 1.0,
            theta_s: 0.48,
            theta_r: 0.0,
        }
    }
}

/// Piecewise-linear Feddes stress function thresholds (cm) and the maximal
/// uptake rate. Uptake is maximal on `[h3, h2]` and vanishes outside `(h4, h1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeddesParams {
    pub h1: f64,
    pub h2: f64,
    pub h3: f64,
    pub h4: f64,
    pub s_max: f64,
}

impl FeddesParams {
    /// Thresholds `0, -30, -50, -80` cm and `S_max = 0.01 / depth`.
    pub fn for_depth(depth: f64) -> Self {
        Self {
            h1: 0.0,
            h2: -30.0,
            h3: -50.0,
            h4: -80.0,
            s_max: 0.01 / depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.h1, self.h2, self.h3, self.h4, self.s_max];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("Feddes parameters must be finite".into()));
        }
        if !(self.h4 < self.h3 && self.h3 < self.h2 && self.h2 < self.h1) {
            return Err(Error::InvalidParams(format!(
                "Feddes thresholds must satisfy h4 < h3 < h2 < h1, got {} {} {} {}",
                self.h4, self.h3, self.h2, self.h1
            )));
        }
        if self.s_max <= 0.0 {
            return Err(Error::InvalidParams("S_max must be positive".into()));
        }
        Ok(())
    }

    /// Stress factor `R(h)` in `[0, 1]`.
    pub(crate) fn stress(&self, h: f64) -> f64 {
        if h >= self.h1 || h <= self.h4 {
            0.0
        } else if h > self.h2 {
            (h - self.h1) / (self.h2 - self.h1)
        } else if h >= self.h3 {
            1.0
        } else {
            (h - self.h4) / (self.h3 - self.h4)
        }
    }

    pub(crate) fn sink(&self, h: f64) -> f64 {
        self.s_max * self.stress(h)
    }
}

/// Root water uptake `S(h) = S_max R(h)`.
pub fn uptake(params: &FeddesParams, h: f64) -> Result<f64> {
    ensure_finite(h, "pressure head")?;
    Ok(params.sink(h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum HydraulicModel {
    Haverkamp(HaverkampParams),
    Gardner(GardnerParams),
}

impl HydraulicModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.to_string()));
        match self {
            HydraulicModel::Haverkamp(p) => {
                let all = [p.k_s, p.a_const, p.alpha, p.theta_s, p.theta_r, p.beta1, p.beta2];
                if all.iter().any(|v| !v.is_finite()) {
                    return bad("Haverkamp parameters must be finite");
                }
                if !(p.theta_r < p.theta_s) {
                    return bad("Haverkamp: theta_r must be below theta_s");
                }
                if p.k_s <= 0.0 || p.a_const <= 0.0 || p.alpha <= 0.0 {
                    return bad("Haverkamp: K_S, A and alpha must be positive");
                }
                if p.beta1 <= 0.0 || p.beta2 <= 0.0 {
                    return bad("Haverkamp: exponents must be positive");
                }
            }
            HydraulicModel::Gardner(p) => {
                let all = [p.rho, p.k_s, p.theta_s, p.theta_r];
                if all.iter().any(|v| !v.is_finite()) {
                    return bad("Gardner parameters must be finite");
                }
                if p.rho <= 0.0 {
                    return bad("Gardner: rho must be positive");
                }
                if !(p.theta_r < p.theta_s) {
                    return bad("Gardner: theta_r must be below theta_s");
                }
                if p.k_s <= 0.0 {
                    return bad("Gardner: K_S must be positive");
                }
            }
        }
        Ok(())
    }

    pub fn k_s(&self) -> f64 {
        match self {
            HydraulicModel::Haverkamp(p) => p.k_s,
            HydraulicModel::Gardner(p) => p.k_s,
        }
    }

    /// Water content `theta(h)`.
    pub fn theta(&self, h: f64) -> Result<f64> {
        ensure_finite(h, "pressure head")?;
        Ok(self.theta_raw(h))
    }

    /// Hydraulic conductivity `K(h)`.
    pub fn conductivity(&self, h: f64) -> Result<f64> {
        ensure_finite(h, "pressure head")?;
        Ok(self.conductivity_raw(h))
    }

    /// Soil water capacity `C(h) = d theta / dh`, in closed form.
    pub fn capacity(&self, h: f64) -> Result<f64> {
        ensure_finite(h, "pressure head")?;
        Ok(self.capacity_raw(h))
    }

    pub(crate) fn theta_raw(&self, h: f64) -> f64 {
        let h = h.min(0.0);
        match self {
            HydraulicModel::Haverkamp(p) => {
                p.alpha * (p.theta_s - p.theta_r) / (p.alpha + h.abs().powf(p.beta2)) + p.theta_r
            }
            HydraulicModel::Gardner(p) => p.theta_r + (p.theta_s - p.theta_r) * (p.rho * h).exp(),
        }
    }

    pub(crate) fn conductivity_raw(&self, h: f64) -> f64 {
        let h = h.min(0.0);
        match self {
            HydraulicModel::Haverkamp(p) => p.k_s * p.a_const / (p.a_const + h.abs().powf(p.beta1)),
            HydraulicModel::Gardner(p) => p.k_s * (p.rho * h).exp(),
        }
    }

    pub(crate) fn capacity_raw(&self, h: f64) -> f64 {
        let h = h.min(0.0);
        match self {
            HydraulicModel::Haverkamp(p) => {
                // d/dh |h|^b = -b |h|^(b-1) for h < 0
                let abs_h = h.abs();
                let denom = p.alpha + abs_h.powf(p.beta2);
                p.alpha * (p.theta_s - p.theta_r) * p.beta2 * abs_h.powf(p.beta2 - 1.0)
                    / (denom * denom)
            }
            HydraulicModel::Gardner(p) => p.rho * (p.theta_s - p.theta_r) * (p.rho * h).exp(),
        }
    }
}

/// Pointwise conductivity and capacity, as consumed by the spatial
/// discretization. Inputs are assumed finite.
pub trait SoilModel: Send + Sync {
    fn conductivity_at(&self, h: f64) -> f64;
    fn capacity_at(&self, h: f64) -> f64;
}

impl SoilModel for HydraulicModel {
    fn conductivity_at(&self, h: f64) -> f64 {
        self.conductivity_raw(h)
    }

    fn capacity_at(&self, h: f64) -> f64 {
        self.capacity_raw(h)
    }
}

/// Constant-coefficient soil (`K` and `C` independent of `h`). Reduces the
/// flow equation to the heat equation; used by the verification suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSoil {
    pub conductivity: f64,
    pub capacity: f64,
}

impl SoilModel for LinearSoil {
    fn conductivity_at(&self, _h: f64) -> f64 {
        self.conductivity
    }

    fn capacity_at(&self, _h: f64) -> f64 {
        self.capacity
    }
}
