use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::bessel::disc_factor;
use super::params::{ModelParams, ParamId};
use super::sensors::SensorArray;
use super::wavenumbers::{angular, WaveNumberSet};
use super::{eigenvalue_derivative, noise_spectrum, operator_eigenvalue};
use crate::linalg::{symmetrize, BlockDiag};
use crate::{Error, Result};

/// Grid resolution for the multiplication-operator quadrature.
pub const B_QUADRATURE_GRID: usize = 128;

/// Weighting matrix for the placement objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MSpec {
    Identity,
    TargetPoints(Vec<[f64; 2]>),
    Matrix(Vec<Vec<f64>>),
}

/// Spatial weighting of the signal noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BField {
    /// `b(x) = sech(|x - centre| / width)` with the torus distance.
    SechBump {
        centre: [f64; 2],
        width: f64,
    },
    Constant(f64),
}

impl BField {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            BField::SechBump { centre, width } => {
                let d = super::sensors::torus_distance(x, *centre);
                1.0 / (d / width).cosh()
            }
            BField::Constant(c) => *c,
        }
    }
}

/// Assembled linear system and its analytic derivatives.
///
/// `A` is stored both densely and as its block eigenvalues `eig`. Noise and
/// measurement covariances are diagonal and kept as vectors. Derivative
/// stacks follow the order of `active` (parameters) and `movable`
/// (sensor coordinates).
#[derive(Clone, Debug)]
pub struct SystemMatrices {
    pub ks: WaveNumberSet,
    pub eig: BlockDiag,
    pub a: DMatrix<f64>,
    /// `None` stands for the identity.
    pub b: Option<DMatrix<f64>>,
    pub q: DVector<f64>,
    pub c: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub r: DVector<f64>,
    pub m: DMatrix<f64>,
    pub active: Vec<ParamId>,
    pub d_eig: Vec<BlockDiag>,
    pub d_q: Vec<DVector<f64>>,
    pub d_r: Vec<DVector<f64>>,
    pub d_bias: Vec<DVector<f64>>,
    pub movable: Vec<(usize, usize)>,
    pub d_c_o: Vec<DMatrix<f64>>,
}

impl SystemMatrices {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    pub fn n_theta(&self) -> usize {
        self.active.len()
    }

    pub fn n_o(&self) -> usize {
        self.movable.len()
    }

    /// `B Q Bᵀ`.
    pub fn bqbt(&self) -> DMatrix<f64> {
        self.weighted_noise(&self.q)
    }

    /// `B diag(q) Bᵀ` for an arbitrary diagonal.
    pub fn weighted_noise(&self, q: &DVector<f64>) -> DMatrix<f64> {
        match &self.b {
            None => DMatrix::from_diagonal(q),
            Some(b) => {
                let mut bq = b.clone();
                for j in 0..bq.ncols() {
                    bq.column_mut(j).scale_mut(q[j]);
                }
                let mut g = bq * b.transpose();
                symmetrize(&mut g);
                g
            }
        }
    }

    /// `B Q^{1/2}`.
    pub fn b_qhalf(&self) -> DMatrix<f64> {
        let sq = self.q.map(|v| v.max(0.0).sqrt());
        match &self.b {
            None => DMatrix::from_diagonal(&sq),
            Some(b) => {
                let mut out = b.clone();
                for j in 0..out.ncols() {
                    out.column_mut(j).scale_mut(sq[j]);
                }
                out
            }
        }
    }

    pub fn d_a_dense(&self, j: usize) -> DMatrix<f64> {
        self.d_eig[j].to_dense()
    }

    pub fn r_inv(&self) -> DVector<f64> {
        self.r.map(|v| 1.0 / v)
    }
}

/// Complex disc-average row: constant entry first (if present), then one entry
/// per wavenumber.
pub fn disc_average_coeffs(o: [f64; 2], r: f64, ks: &WaveNumberSet) -> Result<Vec<Complex64>> {
    if !(r > 0.0 && r < 0.5) {
        return Err(Error::InvalidParameter(format!("sensor radius must lie in (0, 0.5), got {r}")));
    }
    let mut row = Vec::with_capacity(ks.ks.len() + 1);
    if ks.include_constant {
        row.push(Complex64::new(1.0, 0.0));
    }
    for &k in &ks.ks {
        let kp = angular(k);
        let g = disc_factor(kp[0].hypot(kp[1]) * r);
        let ph = kp[0] * o[0] + kp[1] * o[1];
        row.push(Complex64::from_polar(g, ph));
    }
    Ok(row)
}

/// Real observation row and its derivatives in `o_x`, `o_y`.
fn observation_row(o: [f64; 2], r: f64, ks: &WaveNumberSet) -> (Vec<f64>, [Vec<f64>; 2]) {
    let n = ks.n();
    let mut row = vec![0.0; n];
    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; n];
    if ks.include_constant {
        row[0] = 1.0;
    }
    for (j, &k) in ks.ks.iter().enumerate() {
        let kp = angular(k);
        let g = disc_factor(kp[0].hypot(kp[1]) * r);
        let ph = kp[0] * o[0] + kp[1] * o[1];
        let (s, c) = ph.sin_cos();
        let p = ks.pair_offset(j);
        row[p] = g * c;
        row[p + 1] = g * s;
        dx[p] = -g * kp[0] * s;
        dx[p + 1] = g * kp[0] * c;
        dy[p] = -g * kp[1] * s;
        dy[p + 1] = g * kp[1] * c;
    }
    (row, [dx, dy])
}

/// Matrix of the projected multiplication operator `u ↦ b u`.
pub fn multiplication_operator(ks: &WaveNumberSet, b: &dyn Fn([f64; 2]) -> f64) -> Result<DMatrix<f64>> {
    let n = ks.n();
    let g = B_QUADRATURE_GRID;
    let h = 1.0 / g as f64;
    let norms = ks.basis_sq_norms();
    let mut out = DMatrix::zeros(n, n);
    for ix in 0..g {
        for iy in 0..g {
            let x = [ix as f64 * h, iy as f64 * h];
            let bv = b(x);
            if !bv.is_finite() {
                return Err(Error::InvalidParameter(format!("b_field is not finite at {x:?}")));
            }
            let phi = ks.basis_at(x);
            for j in 0..n {
                let w = bv * phi[j] * h * h / norms[j];
                for k in 0..n {
                    out[(j, k)] += w * phi[k];
                }
            }
        }
    }
    Ok(out)
}

pub fn weighting_matrix(spec: &MSpec, ks: &WaveNumberSet) -> Result<DMatrix<f64>> {
    let n = ks.n();
    match spec {
        MSpec::Identity => Ok(DMatrix::identity(n, n)),
        MSpec::TargetPoints(pts) => {
            let mut m = DMatrix::zeros(n, n);
            for &p in pts {
                let e = DVector::from_vec(ks.basis_at(p));
                m += &e * e.transpose();
            }
            Ok(m)
        }
        MSpec::Matrix(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(Error::Dimension(format!("weighting matrix must be {n}x{n}")));
            }
            let mut m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
            let asym = (&m - m.transpose()).abs().max();
            let scale = m.abs().max().max(1.0);
            if asym > 1e-10 * scale {
                return Err(Error::InvalidParameter("weighting matrix is not symmetric".into()));
            }
            symmetrize(&mut m);
            let min_eig = m.clone().symmetric_eigen().eigenvalues.min();
            if min_eig < -1e-10 * scale {
                return Err(Error::InvalidParameter(format!(
                    "weighting matrix is not positive semi-definite (eigenvalue {min_eig:e})"
                )));
            }
            Ok(m)
        }
    }
}

/// Assemble every system matrix, with derivative stacks for the `active`
/// parameters and for every movable sensor coordinate.
pub fn assemble_system(
    theta: &ModelParams,
    sensors: &SensorArray,
    ks: &WaveNumberSet,
    b_field: Option<&dyn Fn([f64; 2]) -> f64>,
    m_spec: &MSpec,
    active: &[ParamId],
) -> Result<SystemMatrices> {
    theta.validate()?;
    sensors.validate(theta.tau2.len(), theta.beta.len())?;
    for &id in active {
        if !theta.has(id) {
            return Err(Error::InvalidParameter(format!("active parameter {id} does not exist")));
        }
    }
    let b = match b_field {
        Some(f) => Some(multiplication_operator(ks, f)?),
        None => None,
    };
    assemble_with_b(theta, sensors, ks, b, weighting_matrix(m_spec, ks)?, active)
}

/// As [`assemble_system`] but with precomputed `B` and `M`.
pub fn assemble_with_b(
    theta: &ModelParams,
    sensors: &SensorArray,
    ks: &WaveNumberSet,
    b: Option<DMatrix<f64>>,
    m: DMatrix<f64>,
    active: &[ParamId],
) -> Result<SystemMatrices> {
    let n = ks.n();
    let hc = ks.include_constant;
    let zero = [0, 0];
    let all_ks: Vec<[i32; 2]> = hc.then_some(zero).into_iter().chain(ks.ks.iter().copied()).collect();

    let eig = BlockDiag::new(hc, all_ks.iter().map(|&k| operator_eigenvalue(k, theta)).collect());
    let a = eig.to_dense();

    let mut q = DVector::zeros(n);
    let mut idx = 0;
    for &k in &all_ks {
        let eta = noise_spectrum(k, theta);
        let w = if k == zero { 1 } else { 2 };
        for _ in 0..w {
            q[idx] = eta * eta;
            idx += 1;
        }
    }

    let ny = sensors.len();
    let mut c = DMatrix::zeros(ny, n);
    let mut dc_rows = Vec::with_capacity(ny);
    for (i, &o) in sensors.positions.iter().enumerate() {
        let (row, d) = observation_row(o, sensors.radius, ks);
        for j in 0..n {
            c[(i, j)] = row[j];
        }
        dc_rows.push(d);
    }
    let r = DVector::from_fn(ny, |i, _| theta.tau2[sensors.noise_class[i]]);
    let bias = DVector::from_fn(ny, |i, _| sensors.bias_class[i].map_or(0.0, |b| theta.beta[b]));

    let mut d_eig = Vec::with_capacity(active.len());
    let mut d_q = Vec::with_capacity(active.len());
    let mut d_r = Vec::with_capacity(active.len());
    let mut d_bias = Vec::with_capacity(active.len());
    for &id in active {
        d_eig.push(BlockDiag::new(hc, all_ks.iter().map(|&k| eigenvalue_derivative(k, theta, id)).collect()));
        let mut dq = DVector::zeros(n);
        let mut idx = 0;
        for &k in &all_ks {
            let v = super::noise_spectrum_sq_derivative(k, theta, id);
            let w = if k == zero { 1 } else { 2 };
            for _ in 0..w {
                dq[idx] = v;
                idx += 1;
            }
        }
        d_q.push(dq);
        d_r.push(DVector::from_fn(ny, |i, _| if id == ParamId::Tau2(sensors.noise_class[i]) { 1.0 } else { 0.0 }));
        d_bias.push(DVector::from_fn(ny, |i, _| match (id, sensors.bias_class[i]) {
            (ParamId::Beta(c), Some(b)) if c == b => 1.0,
            _ => 0.0,
        }));
    }

    let movable = sensors.movable_coords();
    let d_c_o = movable
        .iter()
        .map(|&(i, ax)| {
            let mut d = DMatrix::zeros(ny, n);
            for j in 0..n {
                d[(i, j)] = dc_rows[i][ax][j];
            }
            d
        })
        .collect();

    Ok(SystemMatrices {
        ks: ks.clone(),
        eig,
        a,
        b,
        q,
        c,
        bias,
        r,
        m,
        active: active.to_vec(),
        d_eig,
        d_q,
        d_r,
        d_bias,
        movable,
        d_c_o,
    })
}

/// Real field values `Σ coeff_j φ_j(x)` at each point.
pub fn evaluate_field(coeffs: &DVector<f64>, points: &[[f64; 2]], ks: &WaveNumberSet) -> Result<Vec<f64>> {
    if coeffs.len() != ks.n() {
        return Err(Error::Dimension(format!(
            "coefficient vector has length {} but the basis has {}",
            coeffs.len(),
            ks.n()
        )));
    }
    Ok(points.iter().map(|&p| ks.basis_at(p).iter().zip(coeffs.iter()).map(|(a, b)| a * b).sum()).collect())
}
