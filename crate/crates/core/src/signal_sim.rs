//! Exact Ornstein-Uhlenbeck stepping of the truncated spectral SDE.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{gauss_legendre_8, psd_factor, symmetrize, BlockDiag};
use crate::spectral_model::{ModelParams, SystemMatrices};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SignalState {
    pub t: f64,
    pub alpha: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct TransitionKernel {
    pub dt: f64,
    pub phi: BlockDiag,
    pub noise_cov: DMatrix<f64>,
    pub factor: DMatrix<f64>,
}

/// Derivatives of `Phi` and `NoiseCov` along the active parameters.
#[derive(Clone, Debug)]
pub struct KernelDerivatives {
    pub d_phi: Vec<BlockDiag>,
    pub d_noise: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRecord {
    pub t: f64,
    pub z: DVector<f64>,
}

/// `(e^{2a dt} − 1) / (2a)` and its derivative in `a`.
fn ou_variance_factor(a: f64, dt: f64) -> (f64, f64) {
    let x = a * dt;
    if x.abs() < 1e-5 {
        let f = dt * (1.0 + x + 2.0 * x * x / 3.0);
        let df = dt * dt * (1.0 + 4.0 * x / 3.0 + 2.0 * x * x / 3.0);
        (f, df)
    } else {
        let e = (2.0 * x).exp();
        let f = (e - 1.0) / (2.0 * a);
        let df = dt * e / a - (e - 1.0) / (2.0 * a * a);
        (f, df)
    }
}

fn quadrature_panels(eig: &BlockDiag, dt: f64) -> usize {
    let lmax = eig.vals.iter().map(|z| z.norm()).fold(0.0, f64::max);
    ((2.0 * lmax * dt).ceil() as usize).max(2)
}

/// Gauss-Legendre nodes and weights for `∫₀^dt`.
fn time_nodes(panels: usize, dt: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre_8();
    let h = dt / panels as f64;
    let mut out = Vec::with_capacity(8 * panels);
    for p in 0..panels {
        let a = p as f64 * h;
        for i in 0..8 {
            out.push((a + 0.5 * h * (x[i] + 1.0), 0.5 * h * w[i]));
        }
    }
    out
}

pub fn make_kernel(sys: &SystemMatrices, dt: f64) -> Result<TransitionKernel> {
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("dt must be non-negative, got {dt}")));
    }
    let phi = sys.eig.map(|z| (z * dt).exp());
    let n = sys.n();
    let mut noise_cov = match &sys.b {
        None => {
            let mut w = DMatrix::zeros(n, n);
            for (o, width, z) in sys.eig.blocks() {
                let (f, _) = ou_variance_factor(z.re, dt);
                for i in o..o + width {
                    w[(i, i)] = sys.q[i] * f;
                }
            }
            w
        }
        Some(_) => {
            let g = sys.bqbt();
            let mut w = DMatrix::zeros(n, n);
            if dt > 0.0 {
                for (s, wt) in time_nodes(quadrature_panels(&sys.eig, dt), dt) {
                    let e = sys.eig.map(|z| (z * s).exp());
                    w += e.congruence(&g) * wt;
                }
            }
            w
        }
    };
    symmetrize(&mut noise_cov);
    let factor = psd_factor(&noise_cov);
    Ok(TransitionKernel { dt, phi, noise_cov, factor })
}

pub fn kernel_derivatives(sys: &SystemMatrices, dt: f64) -> KernelDerivatives {
    let n = sys.n();
    let np = sys.n_theta();
    let mut d_phi = Vec::with_capacity(np);
    let mut d_noise = Vec::with_capacity(np);
    let nodes = match sys.b {
        Some(_) if dt > 0.0 => time_nodes(quadrature_panels(&sys.eig, dt), dt),
        _ => Vec::new(),
    };
    let g = sys.bqbt();
    for j in 0..np {
        let dl = &sys.d_eig[j];
        let vals = sys.eig.vals.iter().zip(&dl.vals).map(|(&z, &d)| d * dt * (z * dt).exp()).collect();
        d_phi.push(BlockDiag::new(sys.eig.has_constant, vals));

        let mut dw = DMatrix::zeros(n, n);
        match &sys.b {
            None => {
                for ((o, width, z), (_, _, dz)) in sys.eig.blocks().zip(dl.blocks()) {
                    let (f, df) = ou_variance_factor(z.re, dt);
                    for i in o..o + width {
                        dw[(i, i)] = sys.d_q[j][i] * f + sys.q[i] * df * dz.re;
                    }
                }
            }
            Some(_) => {
                let dg = sys.weighted_noise(&sys.d_q[j]);
                for &(s, wt) in &nodes {
                    let e = sys.eig.map(|z| (z * s).exp());
                    let de = BlockDiag::new(
                        e.has_constant,
                        e.vals.iter().zip(&dl.vals).map(|(&ez, &d)| ez * d * s).collect(),
                    );
                    let term = de.mul_left(&g);
                    let mut inc = e.mul_right_t(&term);
                    inc += inc.transpose();
                    inc += e.congruence(&dg);
                    dw += inc * wt;
                }
            }
        }
        symmetrize(&mut dw);
        d_noise.push(dw);
    }
    KernelDerivatives { d_phi, d_noise }
}

pub fn step_signal<R: Rng + ?Sized>(state: &SignalState, kernel: &TransitionKernel, rng: &mut R) -> SignalState {
    let n = state.alpha.len();
    let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let alpha = kernel.phi.mul_vec(&state.alpha) + &kernel.factor * xi;
    SignalState { t: state.t + kernel.dt, alpha }
}

/// Rate observation `z = Cα + bias + N(0, R/dt)`.
pub fn observe<R: Rng + ?Sized>(state: &SignalState, sys: &SystemMatrices, dt: f64, rng: &mut R) -> ObservationRecord {
    let mut z = &sys.c * &state.alpha + &sys.bias;
    for i in 0..z.len() {
        let e: f64 = rng.sample(StandardNormal);
        z[i] += (sys.r[i] / dt).sqrt() * e;
    }
    ObservationRecord { t: state.t, z }
}

/// Piecewise-constant, right-continuous parameter path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSchedule {
    pub knots: Vec<(f64, ModelParams)>,
}

impl ParameterSchedule {
    pub fn constant(p: ModelParams) -> Self {
        ParameterSchedule { knots: vec![(0.0, p)] }
    }

    pub fn validate(&self) -> Result<()> {
        match self.knots.first() {
            Some((t, _)) if *t == 0.0 => {}
            _ => return Err(Error::Config("parameter schedule must start with a knot at t = 0".into())),
        }
        for w in self.knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Config("schedule knot times must be strictly increasing".into()));
            }
        }
        for (_, p) in &self.knots {
            p.validate()?;
        }
        Ok(())
    }

    /// Index of the knot in force at time `t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.knots.iter().rposition(|(tk, _)| *tk <= t).unwrap_or(0)
    }

    pub fn is_static(&self) -> bool {
        self.knots.len() == 1
    }
}

pub fn schedule_at(sched: &ParameterSchedule, t: f64) -> &ModelParams {
    &sched.knots[sched.index_at(t)].1
}
