//! Continuous-time algebraic Riccati equation
//!
//! ```text
//! A^T P + P A - (1/lambda) P B B^T P + Q = 0
//! ```
//!
//! with a single input column `B`, and the state-dependent feedback built on
//! it. The primary solver extracts the stable invariant subspace of the
//! Hamiltonian from an ordered complex Schur form; Newton–Kleinman iterations
//! (each a Lyapunov solve) refine the result and serve as a cross-check.

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;

use crate::cost::CostModel;
use crate::discretize::SemidiscreteSystem;
use crate::error::{Error, Result};
use crate::hydraulics::SoilModel;

type CMatrix = DMatrix<Complex64>;

const SCHUR_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AreProblem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub q: DMatrix<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreSolution {
    pub pi: DMatrix<f64>,
    /// Frobenius norm of the Riccati residual at `pi`.
    pub residual_norm: f64,
    /// Largest real part among eigenvalues of `A - (1/lambda) B B^T pi`.
    pub closed_loop_spectral_abscissa: f64,
}

/// Solver knobs for [`solve_are_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AreOptions {
    /// Accept when `residual <= tol * (1 + |Q|_F)`.
    pub tol: f64,
    /// Maximum Newton–Kleinman refinement sweeps after the Schur solve.
    pub refine_steps: usize,
}

impl Default for AreOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            refine_steps: 2,
        }
    }
}

impl AreProblem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, q: DMatrix<f64>, lambda: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n || q.nrows() != n || q.ncols() != n {
            return Err(Error::InvalidInput(format!(
                "inconsistent ARE dimensions: A {}x{}, B {}, Q {}x{}",
                a.nrows(),
                a.ncols(),
                b.len(),
                q.nrows(),
                q.ncols()
            )));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        if a.iter().chain(b.iter()).chain(q.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup { context: "ARE data".into() });
        }
        let asym = (&q - q.transpose()).norm();
        if asym > 1e-12 * q.norm().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidInput("Q must be symmetric".into()));
        }
        #[cfg(debug_assertions)]
        {
            let min_eig = q.clone().symmetric_eigenvalues().min();
            debug_assert!(min_eig >= -1e-12 * q.norm(), "Q is not positive semidefinite");
        }
        Ok(Self { a, b, q, lambda })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `A^T P + P A - (1/lambda) P B B^T P + Q`.
    pub fn residual(&self, pi: &DMatrix<f64>) -> DMatrix<f64> {
        let pb = pi * &self.b;
        &self.a.transpose() * pi + pi * &self.a - (&pb * pb.transpose()) / self.lambda + &self.q
    }

    /// `A - (1/lambda) B B^T P`.
    pub fn closed_loop(&self, pi: &DMatrix<f64>) -> DMatrix<f64> {
        let gain = (pi * &self.b) / self.lambda;
        &self.a - &self.b * gain.transpose()
    }
}

pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

fn spectrum(m: &DMatrix<f64>) -> Vec<(f64, f64)> {
    m.complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect()
}

/// Solve with default refinement. The solution is stabilizing and its
/// residual satisfies `|R|_F <= tol (1 + |Q|_F)`.
pub fn solve_are(prob: &AreProblem, tol: f64) -> Result<AreSolution> {
    solve_are_with(prob, AreOptions { tol, ..AreOptions::default() })
}

pub fn solve_are_with(prob: &AreProblem, opts: AreOptions) -> Result<AreSolution> {
    let mut pi = schur_solution(prob)?;
    let bound = opts.tol * (1.0 + prob.q.norm());
    let mut residual = prob.residual(&pi).norm();
    for _ in 0..opts.refine_steps {
        if residual <= 0.1 * bound {
            break;
        }
        let candidate = match newton_kleinman_step(prob, &pi) {
            Ok(c) => c,
            Err(_) => break,
        };
        let r = prob.residual(&candidate).norm();
        if r >= residual {
            break;
        }
        pi = candidate;
        residual = r;
    }
    finish(prob, pi, residual, bound)
}

fn finish(prob: &AreProblem, pi: DMatrix<f64>, residual: f64, bound: f64) -> Result<AreSolution> {
    let closed = prob.closed_loop(&pi);
    let abscissa = spectral_abscissa(&closed);
    if !(abscissa < 0.0) {
        return Err(Error::Stabilizability {
            spectral_abscissa: abscissa,
            spectrum: spectrum(&closed),
        });
    }
    if !(residual <= bound) {
        return Err(Error::Convergence {
            method: "Riccati solve",
            iterations: 0,
            residual,
        });
    }
    Ok(AreSolution {
        pi,
        residual_norm: residual,
        closed_loop_spectral_abscissa: abscissa,
    })
}

/// Stable invariant subspace of the Hamiltonian via an ordered complex Schur form.
///
/// Works with the scaled unknown `X = P / lambda`, whose Hamiltonian is
/// `[[A, -B B^T], [-Q / lambda, -A^T]]`.
fn schur_solution(prob: &AreProblem) -> Result<DMatrix<f64>> {
    let n = prob.dim();
    let mut h = DMatrix::<f64>::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&prob.a);
    h.view_mut((0, n), (n, n)).copy_from(&(-(&prob.b * prob.b.transpose())));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&prob.q / prob.lambda));
    h.view_mut((n, n), (n, n)).copy_from(&(-prob.a.transpose()));

    let (mut u, mut t) = complex_schur(&h)?;
    let scale = h.norm().max(f64::MIN_POSITIVE);
    let stable = order_schur(&mut u, &mut t, |z| z.re < 0.0);
    let on_axis = (0..2 * n).any(|k| t[(k, k)].re.abs() <= 1e3 * f64::EPSILON * scale);
    if stable != n || on_axis {
        let a = &prob.a;
        return Err(Error::Stabilizability {
            spectral_abscissa: spectral_abscissa(a),
            spectrum: spectrum(a),
        });
    }

    let u11 = u.view((0, 0), (n, n)).into_owned();
    let u21 = u.view((n, 0), (n, n)).into_owned();
    // X U11 = U21  <=>  U11^T X^T = U21^T
    let lu = u11.transpose().lu();
    let xt = lu.solve(&u21.transpose()).ok_or_else(|| Error::Stabilizability {
        spectral_abscissa: spectral_abscissa(&prob.a),
        spectrum: spectrum(&prob.a),
    })?;
    let x = xt.transpose().map(|z| z.re);
    let pi = (&x + x.transpose()) * (0.5 * prob.lambda);
    if pi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup { context: "Riccati solution".into() });
    }
    Ok(pi)
}

/// Complex Schur factorization `m = U T U^H` with `T` upper triangular.
fn complex_schur(m: &DMatrix<f64>) -> Result<(CMatrix, CMatrix)> {
    let mc = m.map(|v| Complex64::new(v, 0.0));
    let schur = Schur::try_new(mc, f64::EPSILON, SCHUR_MAX_ITER).ok_or(Error::Convergence {
        method: "Schur decomposition",
        iterations: SCHUR_MAX_ITER,
        residual: f64::NAN,
    })?;
    let (u, mut t) = schur.unpack();
    let n = t.nrows();
    for j in 0..n {
        for i in j + 1..n {
            t[(i, j)] = Complex64::new(0.0, 0.0);
        }
    }
    Ok((u, t))
}

/// Reorder a complex Schur form so that eigenvalues satisfying `select`
/// occupy the leading diagonal positions. Returns how many were selected.
fn order_schur(u: &mut CMatrix, t: &mut CMatrix, select: impl Fn(Complex64) -> bool) -> usize {
    let n = t.nrows();
    let mut placed = 0;
    for k in 0..n {
        if !select(t[(k, k)]) {
            continue;
        }
        let mut j = k;
        while j > placed {
            swap_adjacent(u, t, j - 1);
            j -= 1;
        }
        placed += 1;
    }
    placed
}

/// Swap diagonal entries `k` and `k + 1` of the triangular factor with a
/// unitary rotation, keeping `U T U^H` invariant.
fn swap_adjacent(u: &mut CMatrix, t: &mut CMatrix, k: usize) {
    let n = t.nrows();
    let a = t[(k, k)];
    let c = t[(k + 1, k + 1)];
    // Eigenvector of the 2x2 block for eigenvalue c is (t_k,k+1, c - a).
    let f = t[(k, k + 1)];
    let g = c - a;
    let r = (f.norm_sqr() + g.norm_sqr()).sqrt();
    if r == 0.0 {
        return;
    }
    let (f, g) = (f / r, g / r);
    // G = [[conj f, conj g], [-g, f]]; apply T <- G T G^H, U <- U G^H.
    for col in k..n {
        let x = t[(k, col)];
        let y = t[(k + 1, col)];
        t[(k, col)] = f.conj() * x + g.conj() * y;
        t[(k + 1, col)] = -g * x + f * y;
    }
    for row in 0..(k + 2).min(n) {
        let x = t[(row, k)];
        let y = t[(row, k + 1)];
        t[(row, k)] = x * f + y * g;
        t[(row, k + 1)] = -x * g.conj() + y * f.conj();
    }
    for row in 0..n {
        let x = u[(row, k)];
        let y = u[(row, k + 1)];
        u[(row, k)] = x * f + y * g;
        u[(row, k + 1)] = -x * g.conj() + y * f.conj();
    }
    t[(k + 1, k)] = Complex64::new(0.0, 0.0);
    t[(k, k)] = c;
    t[(k + 1, k + 1)] = a;
}

/// Solve `A^T X + X A + C = 0` (Bartels–Stewart on the complex Schur form of `A`).
///
/// Requires `lambda_i(A) + conj(lambda_j(A)) != 0` for all pairs.
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let (u, t) = complex_schur(a)?;
    let cc = c.map(|v| Complex64::new(v, 0.0));
    // T^H Y + Y T = F with F = -U^H C U, Y = U^H X U.
    let f = -(u.adjoint() * cc * &u);
    let mut y = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut rhs = f.column(j).into_owned();
        for k in 0..j {
            let tkj = t[(k, j)];
            if tkj != Complex64::new(0.0, 0.0) {
                rhs -= y.column(k) * tkj;
            }
        }
        // (T^H + t_jj I) is lower triangular.
        let shift = t[(j, j)];
        for i in 0..n {
            let mut acc = rhs[i];
            for m in 0..i {
                acc -= t[(m, i)].conj() * y[(m, j)];
            }
            let diag = t[(i, i)].conj() + shift;
            if diag.norm() <= f64::EPSILON * t.norm() {
                return Err(Error::Convergence {
                    method: "Lyapunov solve",
                    iterations: 0,
                    residual: f64::INFINITY,
                });
            }
            y[(i, j)] = acc / diag;
        }
    }
    let x = (&u * y * u.adjoint()).map(|z| z.re);
    Ok((&x + x.transpose()) * 0.5)
}

/// One Newton–Kleinman update from a stabilizing `pi`.
pub fn newton_kleinman_step(prob: &AreProblem, pi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let gain = (pi * &prob.b) / prob.lambda;
    let closed = &prob.a - &prob.b * gain.transpose();
    let rhs = &prob.q + (&gain * gain.transpose()) * prob.lambda;
    solve_lyapunov(&closed, &rhs)
}

/// Newton–Kleinman iteration from a stabilizing initial guess, run until the
/// update stalls below `tol` (relative) or `max_iter` is reached.
pub fn newton_kleinman(
    prob: &AreProblem,
    initial: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let mut pi = initial.clone();
    let mut last_change = f64::INFINITY;
    for it in 0..max_iter {
        let next = newton_kleinman_step(prob, &pi)?;
        let change = (&next - &pi).norm();
        pi = next;
        let rel = change / pi.norm().max(f64::MIN_POSITIVE);
        // Quadratic convergence ends at a roundoff plateau; stop there too.
        if rel <= tol || (rel < 1e-10 && change >= last_change) {
            return Ok(pi);
        }
        last_change = change;
        if !pi.iter().all(|v| v.is_finite()) {
            return Err(Error::Convergence {
                method: "Newton-Kleinman",
                iterations: it + 1,
                residual: f64::INFINITY,
            });
        }
    }
    Err(Error::Convergence {
        method: "Newton-Kleinman",
        iterations: max_iter,
        residual: prob.residual(&pi).norm(),
    })
}

/// `u = -(1/lambda) B^T pi y`.
pub fn feedback(sol: &AreSolution, b: &DVector<f64>, lambda: f64, y: &DVector<f64>) -> f64 {
    -(b.dot(&(&sol.pi * y))) / lambda
}

/// Freeze the factorization at `y`, mass-normalize it, solve the Riccati
/// equation with `Q(y)` and return the feedback value.
pub fn solve_sdre_step<M: SoilModel>(
    sys: &SemidiscreteSystem<M>,
    cm: &CostModel,
    t: f64,
    y: &DVector<f64>,
    k_modifier: f64,
    opts: AreOptions,
) -> Result<(f64, AreSolution)> {
    let (mut a, mass) = sys.assemble_factorization(t, y, k_modifier)?;
    for (i, &ci) in mass.iter().enumerate() {
        if !(ci > 0.0) {
            return Err(Error::SingularCapacity { node: i, head: y[i] });
        }
        a.row_mut(i).unscale_mut(ci);
    }
    let b = sys.input_vector().component_div(&mass);
    let q = cm.assemble_q(y)?;
    let prob = AreProblem::new(a, b, q, cm.lambda)?;

    let sol = if prob.q.iter().all(|&v| v == 0.0) && spectral_abscissa(&prob.a) < 0.0 {
        AreSolution {
            pi: DMatrix::zeros(prob.dim(), prob.dim()),
            residual_norm: 0.0,
            closed_loop_spectral_abscissa: spectral_abscissa(&prob.a),
        }
    } else {
        solve_are_with(&prob, opts)?
    };
    let u = feedback(&sol, &prob.b, prob.lambda, y);
    Ok((u, sol))
}
