//! Adaptive TR-BDF2 time stepping with sample-and-hold feedback.

use std::time::Instant;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{CostAccumulator, CostModel};
use crate::discretize::SemidiscreteSystem;
use crate::error::{Error, Result};
use crate::hydraulics::SoilModel;
use crate::riccati::{solve_sdre_step, AreOptions};

const GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;
const ADMISSIBLE_LIMIT: f64 = -1e-6;
const MAX_CONSECUTIVE_ARE_FAILURES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    Uncontrolled,
    Sdre,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorConfig {
    pub t_end: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub step_rtol: f64,
    pub step_atol: f64,
    pub control_mode: ControlMode,
    /// Upper bound on `|u| dt`, the change of the surface head a single held
    /// control value may impose. `None` disables the limit.
    pub max_hold_increment: Option<f64>,
    pub are_tol: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            t_end: 1000.0,
            dt_init: 1e-3,
            dt_min: 1e-10,
            dt_max: 5.0,
            newton_tol: 1e-2,
            newton_max_iter: 8,
            step_rtol: 1e-5,
            step_atol: 1e-6,
            control_mode: ControlMode::Sdre,
            max_hold_increment: Some(0.5),
            are_tol: 1e-9,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_min > 0.0
            && self.dt_min <= self.dt_init
            && self.dt_init <= self.dt_max
            && self.dt_max <= self.t_end
            && self.t_end.is_finite();
        if !ok {
            return Err(Error::InvalidParams(format!(
                "need 0 < dt_min <= dt_init <= dt_max <= t_end, got {} {} {} {}",
                self.dt_min, self.dt_init, self.dt_max, self.t_end
            )));
        }
        for (name, v) in [
            ("newton_tol", self.newton_tol),
            ("step_rtol", self.step_rtol),
            ("step_atol", self.step_atol),
            ("are_tol", self.are_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.newton_max_iter == 0 {
            return Err(Error::InvalidParams("newton_max_iter must be at least 1".into()));
        }
        if let Some(h) = self.max_hold_increment {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidParams(format!("max_hold_increment must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub enabled: bool,
    pub epsilon: f64,
    pub seed: u64,
    /// When false only the plant sees the perturbed conductivity and the
    /// feedback is synthesized from the nominal model.
    pub controller_sees_noise: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            epsilon: 0.0,
            seed: 0,
            controller_sees_noise: true,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::InvalidParams(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }

    /// `eta` in `[0, 1)` for accepted step `k`; a pure function of `(seed, k)`.
    pub fn eta(&self, k: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(u128::from(k) * 2);
        rng.random::<f64>()
    }

    /// Conductivity multiplier `1 + epsilon eta` for accepted step `k`.
    pub fn multiplier(&self, k: u64) -> f64 {
        if self.enabled {
            1.0 + self.epsilon * self.eta(k)
        } else {
            1.0
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub total_cost: f64,
    pub wall_time: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub are_failures: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<f64>,
    pub running_costs: Vec<f64>,
    pub mean_uptake: Vec<f64>,
    pub totals: RunTotals,
}

impl SimulationRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Average uptake over the state nodes and the fixed bottom node.
pub fn mean_uptake<M: SoilModel>(sys: &SemidiscreteSystem<M>, y: &DVector<f64>, t: f64) -> f64 {
    let total: f64 = y.iter().map(|&h| sys.feddes.sink(h)).sum::<f64>() + sys.feddes.sink(sys.bottom_head(t));
    total / (y.len() + 1) as f64
}

fn check_admissible(t: f64, y: &DVector<f64>) -> Result<()> {
    match y.iter().position(|&h| !(h < ADMISSIBLE_LIMIT)) {
        Some(node) => Err(Error::Inadmissible { t, node, head: y[node] }),
        None => Ok(()),
    }
}

/// Finite-difference Jacobian of `y' = F(t, y)`.
fn jacobian<M: SoilModel>(
    sys: &SemidiscreteSystem<M>,
    t: f64,
    y: &DVector<f64>,
    f0: &DVector<f64>,
    u: f64,
    k_mod: f64,
) -> Result<DMatrix<f64>> {
    let n = y.len();
    let sqrt_eps = f64::EPSILON.sqrt();
    let mut jac = DMatrix::zeros(n, n);
    let mut yp = y.clone();
    for j in 0..n {
        let delta = sqrt_eps * y[j].abs().max(1.0);
        yp[j] = y[j] + delta;
        let fj = sys.rhs(t, &yp, u, k_mod)?;
        jac.set_column(j, &((fj - f0) / delta));
        yp[j] = y[j];
    }
    Ok(jac)
}

fn weighted_norm(v: &DVector<f64>, scale: &DVector<f64>) -> f64 {
    let n = v.len() as f64;
    (v.component_div(scale).norm_squared() / n).sqrt()
}

/// Outcome of a single attempted step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub y_next: DVector<f64>,
    /// Weighted RMS local error; the step is acceptable when this is <= 1.
    pub error_estimate: f64,
}

/// Solve `z - c h F(t, base + z) = rhs` for the increment `z` by modified
/// Newton; returns `base + z` and `F` there. Working with increments keeps
/// exact steady states exact.
#[allow(clippy::too_many_arguments)]
fn newton_stage<M: SoilModel>(
    sys: &SemidiscreteSystem<M>,
    cfg: &IntegratorConfig,
    lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    t: f64,
    ch: f64,
    base: &DVector<f64>,
    guess: DVector<f64>,
    rhs: &DVector<f64>,
    u: f64,
    k_mod: f64,
    scale: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut z = guess;
    for _ in 0..cfg.newton_max_iter {
        let y = base + &z;
        let f = sys.rhs(t, &y, u, k_mod)?;
        let g = &z - &f * ch - rhs;
        let delta = lu.solve(&g).ok_or(Error::IntegrationFailure {
            t,
            reason: "singular Newton matrix".into(),
        })?;
        z -= &delta;
        if weighted_norm(&delta, scale) <= cfg.newton_tol {
            let y = base + &z;
            let f = sys.rhs(t, &y, u, k_mod)?;
            return Ok((y, f));
        }
    }
    Err(Error::Convergence {
        method: "Newton",
        iterations: cfg.newton_max_iter,
        residual: f64::NAN,
    })
}

/// One TR-BDF2 step of size `dt` from `(t, y)` with control and conductivity
/// multiplier frozen. Errors signal a rejected trial.
pub fn step<M: SoilModel>(
    sys: &SemidiscreteSystem<M>,
    cfg: &IntegratorConfig,
    k_mod: f64,
    t: f64,
    y: &DVector<f64>,
    u_held: f64,
    dt: f64,
) -> Result<StepResult> {
    let f0 = sys.rhs(t, y, u_held, k_mod)?;
    let jac = jacobian(sys, t, y, &f0, u_held, k_mod)?;
    step_with_jacobian(sys, cfg, k_mod, t, y, &f0, &jac, u_held, dt)
}

#[allow(clippy::too_many_arguments)]
fn step_with_jacobian<M: SoilModel>(
    sys: &SemidiscreteSystem<M>,
    cfg: &IntegratorConfig,
    k_mod: f64,
    t: f64,
    y: &DVector<f64>,
    f0: &DVector<f64>,
    jac: &DMatrix<f64>,
    u: f64,
    dt: f64,
) -> Result<StepResult> {
    let n = y.len();
    let scale = y.map(|v| cfg.step_atol + cfg.step_rtol * v.abs());
    let eye = DMatrix::<f64>::identity(n, n);

    let c1 = 0.5 * GAMMA * dt;
    let lu1 = (&eye - jac * c1).lu();
    let rhs1 = f0 * c1;
    let guess = f0 * (GAMMA * dt);
    let (y_g, f_g) = newton_stage(sys, cfg, &lu1, t + GAMMA * dt, c1, y, guess, &rhs1, u, k_mod, &scale)?;

    let c2 = (1.0 - GAMMA) / (2.0 - GAMMA) * dt;
    let lu2 = (&eye - jac * c2).lu();
    let w = 1.0 / (GAMMA * (2.0 - GAMMA));
    // Y = w y_g - (1 - gamma)^2 w y + c2 F(Y), rewritten for Y - y.
    let rhs2 = (&y_g - y) * w;
    let guess = &y_g - y + &f_g * ((1.0 - GAMMA) * dt);
    let (y_next, f_next) = newton_stage(sys, cfg, &lu2, t + dt, c2, y, guess, &rhs2, u, k_mod, &scale)?;

    // Embedded estimate, filtered through the stage matrix so stiff modes do
    // not inflate it.
    let k = (-3.0 * GAMMA * GAMMA + 4.0 * GAMMA - 2.0) / (12.0 * (2.0 - GAMMA));
    let raw = (f0 / GAMMA - &f_g / (GAMMA * (1.0 - GAMMA)) + &f_next / (1.0 - GAMMA)) * (2.0 * k * dt);
    let est = lu1.solve(&raw).unwrap_or(raw);
    let scale_next = y.zip_map(&y_next, |a, b| cfg.step_atol + cfg.step_rtol * a.abs().max(b.abs()));
    let error_estimate = weighted_norm(&est, &scale_next);
    if !error_estimate.is_finite() {
        return Err(Error::NumericalBlowup { context: "error estimate".into() });
    }
    Ok(StepResult { y_next, error_estimate })
}

struct Controller<'a> {
    cm: &'a CostModel,
    mode: ControlMode,
    opts: AreOptions,
    last_gain: Option<DVector<f64>>,
    consecutive_failures: usize,
    failures: usize,
}

impl Controller<'_> {
    fn control<M: SoilModel>(
        &mut self,
        sys: &SemidiscreteSystem<M>,
        t: f64,
        y: &DVector<f64>,
        k_mod: f64,
    ) -> Result<f64> {
        if self.mode == ControlMode::Uncontrolled {
            return Ok(0.0);
        }
        let started = Instant::now();
        match solve_sdre_step(sys, self.cm, t, y, k_mod, self.opts) {
            Ok((u, sol)) => {
                debug!(
                    "t={t:.6e} u={u:.6e} residual={:.3e} abscissa={:.3e} solve={:.2e}s",
                    sol.residual_norm,
                    sol.closed_loop_spectral_abscissa,
                    started.elapsed().as_secs_f64()
                );
                // Gain in state coordinates: u = -gain . y
                let b = sys.input_vector().component_div(&sys.mass_matrix(y));
                self.last_gain = Some((&sol.pi * b) / self.cm.lambda);
                self.consecutive_failures = 0;
                Ok(u)
            }
            Err(err @ (Error::Stabilizability { .. } | Error::Convergence { .. })) => {
                self.failures += 1;
                self.consecutive_failures += 1;
                if self.consecutive_failures >= MAX_CONSECUTIVE_ARE_FAILURES {
                    return Err(err);
                }
                warn!("t={t:.6e}: Riccati solve failed ({err}); reusing previous gain");
                Ok(self.last_gain.as_ref().map_or(0.0, |g| -g.dot(y)))
            }
            Err(err) => Err(err),
        }
    }
}

/// Integrate over `[0, cfg.t_end]`, recording at every accepted step.
pub fn simulate<M: SoilModel>(
    sys: &SemidiscreteSystem<M>,
    cm: &CostModel,
    cfg: &IntegratorConfig,
    noise: &NoiseConfig,
) -> Result<SimulationRecord> {
    cfg.validate()?;
    noise.validate()?;
    cm.validate()?;
    let started = Instant::now();
    let mut ctrl = Controller {
        cm,
        mode: cfg.control_mode,
        opts: AreOptions {
            tol: cfg.are_tol,
            ..AreOptions::default()
        },
        last_gain: None,
        consecutive_failures: 0,
        failures: 0,
    };
    let controller_k = |k: u64| if noise.controller_sees_noise { noise.multiplier(k) } else { 1.0 };

    let mut t = 0.0;
    let mut y = sys.initial_state();
    check_admissible(t, &y)?;
    let mut record = SimulationRecord::default();
    let mut costs = CostAccumulator::default();
    let mut accepted: u64 = 0;
    let mut rejected = 0usize;
    let mut dt = cfg.dt_init;

    let mut u = ctrl.control(sys, t, &y, controller_k(0))?;
    let mut push = |record: &mut SimulationRecord, t: f64, y: &DVector<f64>, u: f64| -> Result<()> {
        let running = cm.running_cost(y, u, sys.bottom_head(t))?;
        costs.push(t, running);
        record.times.push(t);
        record.states.push(y.clone());
        record.controls.push(u);
        record.running_costs.push(running);
        record.mean_uptake.push(mean_uptake(sys, y, t));
        Ok(())
    };
    push(&mut record, t, &y, u)?;

    let end_tol = 1e-12 * cfg.t_end;
    while t < cfg.t_end - end_tol {
        let k_mod = noise.multiplier(accepted);
        let f0 = sys.rhs(t, &y, u, k_mod)?;
        // Rebuilt every step, so it is always current for the retries below.
        let jac = jacobian(sys, t, &y, &f0, u, k_mod)?;
        loop {
            let mut h = dt.min(cfg.dt_max);
            if let (Some(limit), true) = (cfg.max_hold_increment, u != 0.0) {
                h = h.min(limit / u.abs());
            }
            let remaining = cfg.t_end - t;
            if h >= remaining || remaining - h < cfg.dt_min {
                h = remaining;
            }
            if h < cfg.dt_min && h < remaining {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: format!("step size {h:.3e} below dt_min"),
                });
            }
            let trial = step_with_jacobian(sys, cfg, k_mod, t, &y, &f0, &jac, u, h);
            let admissible = |r: &StepResult| r.y_next.iter().all(|&v| v < ADMISSIBLE_LIMIT);
            match trial {
                Ok(r) if r.error_estimate <= 1.0 && admissible(&r) => {
                    let factor = if r.error_estimate > 0.0 {
                        (0.9 * r.error_estimate.powf(-1.0 / 3.0)).clamp(0.2, 5.0)
                    } else {
                        5.0
                    };
                    t = if h == remaining { cfg.t_end } else { t + h };
                    y = r.y_next;
                    dt = (h * factor).clamp(cfg.dt_min, cfg.dt_max);
                    break;
                }
                Ok(r) => {
                    rejected += 1;
                    if r.error_estimate <= 1.0 {
                        // Accurate but leaves the admissible region: shrink and
                        // report if that cannot be avoided.
                        if h <= cfg.dt_min * 2.0 {
                            check_admissible(t + h, &r.y_next)?;
                        }
                        dt = h * 0.5;
                    } else {
                        dt = h * (0.9 * r.error_estimate.powf(-1.0 / 3.0)).clamp(0.1, 0.5);
                    }
                }
                Err(err) => {
                    rejected += 1;
                    debug!("t={t:.6e} h={h:.3e}: step rejected ({err})");
                    if h <= cfg.dt_min {
                        return Err(Error::IntegrationFailure { t, reason: err.to_string() });
                    }
                    dt = h * 0.5;
                }
            }
            if dt < cfg.dt_min {
                return Err(Error::IntegrationFailure {
                    t,
                    reason: format!("step size {dt:.3e} below dt_min"),
                });
            }
        }
        accepted += 1;
        check_admissible(t, &y)?;
        u = ctrl.control(sys, t, &y, controller_k(accepted))?;
        push(&mut record, t, &y, u)?;
    }

    record.totals = RunTotals {
        total_cost: costs.total,
        wall_time: started.elapsed().as_secs_f64(),
        accepted_steps: accepted as usize,
        rejected_steps: rejected,
        are_failures: ctrl.failures,
    };
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{BoundaryData, Grid};
    use crate::hydraulics::{FeddesParams, GardnerParams, HydraulicModel, LinearSoil};

    fn feddes() -> FeddesParams {
        FeddesParams::for_depth(80.0)
    }

    #[test]
    fn mean_uptake_examples() {
        let sys = SemidiscreteSystem::new(
            Grid::new(80.0, 31).unwrap(),
            HydraulicModel::Gardner(GardnerParams::standard()),
            feddes(),
            BoundaryData::uniform(-40.0, -40.0),
        );
        let y = DVector::from_element(30, -40.0);
        approx::assert_relative_eq!(mean_uptake(&sys, &y, 0.0), 1.25e-4, max_relative = 1e-14);

        let sys = SemidiscreteSystem { boundary: BoundaryData::uniform(-61.5, -61.5), ..sys };
        let y = DVector::from_element(30, -61.5);
        approx::assert_relative_eq!(mean_uptake(&sys, &y, 0.0), 7.7083333333333e-5, max_relative = 1e-12);

        let sys = SemidiscreteSystem { boundary: BoundaryData::uniform(-90.0, -90.0), ..sys };
        assert_eq!(mean_uptake(&sys, &DVector::from_element(30, -90.0), 0.0), 0.0);
    }

    #[test]
    fn noise_draws_are_indexed_by_step() {
        let noise = NoiseConfig {
            enabled: true,
            epsilon: 1e-5,
            seed: 7,
            controller_sees_noise: true,
        };
        let a: Vec<f64> = (0..5).map(|k| noise.eta(k)).collect();
        let b: Vec<f64> = (0..5).rev().map(|k| noise.eta(k)).collect();
        assert!(a.iter().eq(b.iter().rev()));
        assert!(a.iter().all(|e| (0.0..1.0).contains(e)));
        assert_ne!(a[0], a[1]);
        let other = NoiseConfig { seed: 8, ..noise.clone() };
        assert_ne!(other.eta(0), a[0]);
        let off = NoiseConfig { enabled: false, ..noise };
        assert_eq!(off.multiplier(3), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(IntegratorConfig::default().validate().is_ok());
        let bad = IntegratorConfig { dt_min: 1.0, dt_init: 0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = IntegratorConfig { step_rtol: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(NoiseConfig { epsilon: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn linear_problem_converges_in_one_newton_iteration() {
        let sys = SemidiscreteSystem {
            with_uptake: false,
            ..SemidiscreteSystem::new(
                Grid::new(1.0, 11).unwrap(),
                LinearSoil { conductivity: 1.0, capacity: 1.0 },
                feddes(),
                BoundaryData::uniform(-1.0, -2.0),
            )
        };
        let y = DVector::from_fn(10, |i, _| -1.0 - 0.1 * (i as f64).powi(2));
        // The first iteration lands on the solution; the second only confirms it.
        let f0 = sys.rhs(0.0, &y, 0.0, 1.0).unwrap();
        let jac = jacobian(&sys, 0.0, &y, &f0, 0.0, 1.0).unwrap();
        let n = y.len();
        let lu = (DMatrix::identity(n, n) - &jac * 0.01).lu();
        let rhs = DVector::from_element(n, 0.3);
        let scale = DVector::from_element(n, 1.0);
        let cfg = IntegratorConfig { newton_max_iter: 2, newton_tol: 1e-6, ..Default::default() };
        let (y1, _) = newton_stage(&sys, &cfg, &lu, 0.0, 0.01, &y, rhs.clone(), &rhs, 0.0, 1.0, &scale).unwrap();
        let resid = (&y1 - &y) - sys.rhs(0.0, &y1, 0.0, 1.0).unwrap() * 0.01 - &rhs;
        assert!(resid.amax() < 1e-9, "{}", resid.amax());
    }
}
