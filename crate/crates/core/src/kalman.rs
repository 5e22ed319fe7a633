//! Continuous-discrete Kalman filter, algebraic Riccati and Lyapunov solvers.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{frobenius, symmetrize};
use crate::signal_sim::{make_kernel, ObservationRecord, TransitionKernel};
use crate::spectral_model::{assemble_system, MSpec, ModelParams, SensorArray, SystemMatrices, WaveNumberSet};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct FilterState {
    pub t: f64,
    pub m: DVector<f64>,
    pub s: DMatrix<f64>,
}

impl FilterState {
    pub fn zeros(n: usize) -> Self {
        FilterState { t: 0.0, m: DVector::zeros(n), s: DMatrix::zeros(n, n) }
    }
}

/// Intermediate quantities of one filter step, reused by the tangent recursion.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub m_pred: DVector<f64>,
    pub s_pred: DMatrix<f64>,
    /// `z − C m⁻ − bias`.
    pub innovation: DVector<f64>,
    /// `C S⁻ Cᵀ + R/dt`.
    pub s_nu: DMatrix<f64>,
    pub s_nu_inv: DMatrix<f64>,
    pub log_det_s_nu: f64,
    pub gain: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub s_inf: DMatrix<f64>,
    pub residual: f64,
}

pub fn predict(fs: &FilterState, kernel: &TransitionKernel) -> (DVector<f64>, DMatrix<f64>) {
    let m = kernel.phi.mul_vec(&fs.m);
    let mut s = kernel.phi.congruence(&fs.s) + &kernel.noise_cov;
    symmetrize(&mut s);
    (m, s)
}

/// Innovation covariance, its inverse and log-determinant.
fn innovation_cov(
    s_pred: &DMatrix<f64>,
    sys: &SystemMatrices,
    dt: f64,
    step: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let mut s_nu = &sys.c * s_pred * sys.c.transpose();
    for i in 0..s_nu.nrows() {
        s_nu[(i, i)] += sys.r[i] / dt;
    }
    symmetrize(&mut s_nu);
    let ch = s_nu.clone().cholesky().ok_or(Error::SingularInnovation { step })?;
    let log_det = 2.0 * ch.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let mut inv = ch.inverse();
    symmetrize(&mut inv);
    Ok((s_nu, inv, log_det))
}

/// Joseph-form update of a predicted covariance.
fn joseph(s_pred: &DMatrix<f64>, gain: &DMatrix<f64>, sys: &SystemMatrices, dt: f64) -> DMatrix<f64> {
    let n = s_pred.nrows();
    let l = DMatrix::identity(n, n) - gain * &sys.c;
    let mut kr = gain.clone();
    for j in 0..kr.ncols() {
        kr.column_mut(j).scale_mut(sys.r[j] / dt);
    }
    let mut s = &l * s_pred * l.transpose() + kr * gain.transpose();
    symmetrize(&mut s);
    s
}

pub fn kb_step_full(
    fs: &FilterState,
    sys: &SystemMatrices,
    kernel: &TransitionKernel,
    z: &ObservationRecord,
    step: usize,
) -> Result<(FilterState, StepRecord)> {
    let dt = kernel.dt;
    let (m_pred, s_pred) = predict(fs, kernel);
    let innovation = &z.z - &sys.c * &m_pred - &sys.bias;
    let (s_nu, s_nu_inv, log_det_s_nu) = innovation_cov(&s_pred, sys, dt, step)?;
    let gain = &s_pred * sys.c.transpose() * &s_nu_inv;
    let m = &m_pred + &gain * &innovation;
    let s = joseph(&s_pred, &gain, sys, dt);
    let rec = StepRecord { m_pred, s_pred, innovation, s_nu, s_nu_inv, log_det_s_nu, gain };
    Ok((FilterState { t: fs.t + dt, m, s }, rec))
}

pub fn kb_step(
    fs: &FilterState,
    sys: &SystemMatrices,
    kernel: &TransitionKernel,
    z: &ObservationRecord,
) -> Result<FilterState> {
    kb_step_full(fs, sys, kernel, z, 0).map(|(f, _)| f)
}

/// Covariance half of [`kb_step`]; the mean is irrelevant for the Riccati recursion.
pub fn covariance_step(s: &DMatrix<f64>, sys: &SystemMatrices, kernel: &TransitionKernel) -> Result<DMatrix<f64>> {
    let mut s_pred = kernel.phi.congruence(s) + &kernel.noise_cov;
    symmetrize(&mut s_pred);
    let (_, s_nu_inv, _) = innovation_cov(&s_pred, sys, kernel.dt, 0)?;
    let gain = &s_pred * sys.c.transpose() * s_nu_inv;
    Ok(joseph(&s_pred, &gain, sys, kernel.dt))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn psd_floor(s: &DMatrix<f64>) -> f64 {
    s.clone().symmetric_eigen().eigenvalues.min()
}

/// `CᵀR⁻¹C`.
pub fn information_matrix(sys: &SystemMatrices) -> DMatrix<f64> {
    let mut rc = sys.c.clone();
    for i in 0..rc.nrows() {
        rc.row_mut(i).scale_mut(1.0 / sys.r[i]);
    }
    let mut g = sys.c.transpose() * rc;
    symmetrize(&mut g);
    g
}

/// `A S + S Aᵀ + BQBᵀ − S CᵀR⁻¹C S`.
pub fn are_residual(sys: &SystemMatrices, s: &DMatrix<f64>) -> DMatrix<f64> {
    let g = information_matrix(sys);
    &sys.a * s + s * sys.a.transpose() + sys.bqbt() - s * g * s
}

#[derive(Clone, Debug)]
pub struct AreOptions {
    /// Step of the covariance recursion used for the fixed-point stage.
    pub dt: f64,
    pub fixed_point_tol: f64,
    pub max_iter: usize,
    pub newton_max_iter: usize,
    pub residual_tol: f64,
}

impl Default for AreOptions {
    fn default() -> Self {
        AreOptions { dt: 0.05, fixed_point_tol: 1e-12, max_iter: 200_000, newton_max_iter: 50, residual_tol: 1e-8 }
    }
}

pub fn solve_are(sys: &SystemMatrices) -> Result<SteadyState> {
    let n = sys.n();
    solve_are_from(sys, DMatrix::zeros(n, n), &AreOptions::default())
}

/// Fixed-point iteration of the discrete covariance recursion from `s0`,
/// followed by Newton-Kleinman refinement on the continuous equation.
pub fn solve_are_from(sys: &SystemMatrices, s0: DMatrix<f64>, opts: &AreOptions) -> Result<SteadyState> {
    let kernel = make_kernel(sys, opts.dt)?;
    let mut s = s0;
    let mut converged = false;
    let mut last = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let next = covariance_step(&s, sys, &kernel)?;
        last = frobenius(&(&next - &s));
        s = next;
        if last < opts.fixed_point_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            what: "Riccati fixed-point iteration",
            iterations: opts.max_iter,
            residual: last,
        });
    }

    let g = information_matrix(sys);
    let w = sys.bqbt();
    let mut residual = frobenius(&are_residual(sys, &s));
    for _ in 0..opts.newton_max_iter {
        let ak = &sys.a - &s * &g;
        let rhs = &w + &s * &g * &s;
        let next = solve_lyapunov(&ak, &rhs)?;
        let change = frobenius(&(&next - &s));
        s = next;
        residual = frobenius(&are_residual(sys, &s));
        if change <= 1e-15 * (1.0 + frobenius(&s)) {
            break;
        }
    }
    if !(residual < opts.residual_tol * (1.0 + frobenius(&s))) {
        return Err(Error::NoConvergence {
            what: "Newton-Kleinman refinement",
            iterations: opts.newton_max_iter,
            residual,
        });
    }
    Ok(SteadyState { s_inf: s, residual })
}

/// Prior covariance and variance reduction of the steady-state filter.
#[derive(Clone, Debug)]
pub struct VarianceReduction {
    /// `P` with `A P + P Aᵀ + BQBᵀ = 0`.
    pub prior: DMatrix<f64>,
    /// `D = P − S∞ ≥ 0`.
    pub reduction: DMatrix<f64>,
    pub iterations: usize,
}

/// Newton-Kleinman iteration written for `D = P − S∞`.
///
/// `D` solves `(A − S G) D + D (A − S G)ᵀ + P G P − D G D = 0` with
/// `G = CᵀR⁻¹C`, which keeps full relative precision when the sensors remove
/// only a tiny fraction of the prior variance.
pub fn solve_are_reduction(sys: &SystemMatrices) -> Result<VarianceReduction> {
    let n = sys.n();
    let prior = match &sys.b {
        None => {
            let mut p = DMatrix::zeros(n, n);
            for (off, w, z) in sys.eig.blocks() {
                for i in off..off + w {
                    p[(i, i)] = sys.q[i] / (-2.0 * z.re);
                }
            }
            p
        }
        Some(_) => solve_lyapunov(&sys.a, &sys.bqbt())?,
    };
    let g = information_matrix(sys);
    let pgp = &prior * &g * &prior;
    let mut d = DMatrix::zeros(n, n);
    let max_iter = 50;
    for it in 1..=max_iter {
        let s = &prior - &d;
        let f = &sys.a - &s * &g;
        let rhs = &pgp - &d * &g * &d;
        let next = solve_lyapunov(&f, &rhs)?;
        let change = frobenius(&(&next - &d));
        d = next;
        if change <= 1e-13 * frobenius(&d) || frobenius(&d) == 0.0 {
            return Ok(VarianceReduction { prior, reduction: d, iterations: it });
        }
    }
    Err(Error::NoConvergence {
        what: "variance-reduction Newton iteration",
        iterations: max_iter,
        residual: frobenius(&d),
    })
}

/// Largest real part among the eigenvalues of `f`, with the witness.
pub fn rightmost_eigenvalue(f: &DMatrix<f64>) -> (f64, f64) {
    let ev = f.clone().complex_eigenvalues();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for z in ev.iter() {
        if z.re > best.0 {
            best = (z.re, z.im);
        }
    }
    best
}

/// Size above which the Kronecker solve gives way to Smith doubling.
pub const KRONECKER_MAX_DIM: usize = 40;

/// Solve `F K + K Fᵀ + W = 0` for stable `F`.
pub fn solve_lyapunov(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    if f.ncols() != n || w.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Lyapunov operands must be square and equal-sized, got {:?} and {:?}",
            f.shape(),
            w.shape()
        )));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let (re, im) = rightmost_eigenvalue(f);
    if !(re < 0.0) {
        return Err(Error::Unstable { re, im });
    }
    solve_lyapunov_with_bound(f, w, re)
}

/// As [`solve_lyapunov`] with the rightmost real part supplied, for drifts
/// whose spectrum is known from their blocks.
pub fn solve_lyapunov_with_bound(f: &DMatrix<f64>, w: &DMatrix<f64>, rightmost_re: f64) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    if f.ncols() != n || w.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "Lyapunov operands must be square and equal-sized, got {:?} and {:?}",
            f.shape(),
            w.shape()
        )));
    }
    if !(rightmost_re < 0.0) {
        return Err(Error::Unstable { re: rightmost_re, im: 0.0 });
    }
    let mut k = if n <= KRONECKER_MAX_DIM { lyapunov_kronecker(f, w)? } else { lyapunov_smith(f, w, rightmost_re)? };
    symmetrize(&mut k);
    Ok(k)
}

fn lyapunov_kronecker(f: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let idx = |i: usize, j: usize| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        a * n - a * (a + 1) / 2 + b
    };
    let nu = n * (n + 1) / 2;
    let mut mat = DMatrix::zeros(nu, nu);
    let mut rhs = DVector::zeros(nu);
    for i in 0..n {
        for j in i..n {
            let row = idx(i, j);
            rhs[row] = -0.5 * (w[(i, j)] + w[(j, i)]);
            for k in 0..n {
                mat[(row, idx(k, j))] += f[(i, k)];
                mat[(row, idx(i, k))] += f[(j, k)];
            }
        }
    }
    let x = mat.lu().solve(&rhs).ok_or_else(|| Error::NonFinite("singular Lyapunov operator".into()))?;
    Ok(DMatrix::from_fn(n, n, |i, j| x[idx(i, j)]))
}

/// Cayley transform followed by Smith doubling, with iterative refinement.
fn lyapunov_smith(f: &DMatrix<f64>, w: &DMatrix<f64>, rightmost_re: f64) -> Result<DMatrix<f64>> {
    let n = f.nrows();
    let scale = f.abs().max();
    let p = (rightmost_re.abs() * scale).sqrt().max(1e-12);
    let fm = f - DMatrix::identity(n, n) * p;
    let lu = fm.clone().lu();
    let fm_inv = lu.try_inverse().ok_or_else(|| Error::NonFinite("singular Cayley shift".into()))?;
    let ac = &fm_inv * (f + DMatrix::identity(n, n) * p);

    let solve = |rhs: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let mut x = &fm_inv * rhs * fm_inv.transpose() * (2.0 * p);
        let mut a = ac.clone();
        for it in 0..200 {
            let ax = &a * &x * a.transpose();
            let done = frobenius(&ax) <= 1e-17 * frobenius(&x).max(1e-300);
            x += ax;
            if done {
                return Ok(x);
            }
            a = &a * &a;
            if !a.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("Smith doubling diverged at iteration {it}")));
            }
        }
        Err(Error::NoConvergence { what: "Smith doubling", iterations: 200, residual: frobenius(&a) })
    };

    let mut k = solve(w)?;
    for _ in 0..3 {
        let r = f * &k + &k * f.transpose() + w;
        if frobenius(&r) <= 1e-13 * (1.0 + frobenius(&k)) {
            break;
        }
        k += solve(&r)?;
    }
    Ok(k)
}

/// `Tr[M S∞]` for an assembled system.
pub fn asymptotic_objective_sys(sys: &SystemMatrices) -> Result<f64> {
    if sys.m.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let ss = solve_are(sys)?;
    Ok((&sys.m * ss.s_inf).trace())
}

pub fn asymptotic_objective(
    theta: &ModelParams,
    sensors: &SensorArray,
    ks: &WaveNumberSet,
    m_spec: &MSpec,
) -> Result<f64> {
    let sys = assemble_system(theta, sensors, ks, None, m_spec, &[])?;
    asymptotic_objective_sys(&sys)
}
