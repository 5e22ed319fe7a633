use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::kalman::{kb_step_full, FilterState};
use crate::linalg::frobenius;
use crate::objectives::{loglik_increment, predictive_loglik_increment, rml_gradient_increment};
use crate::optimizer::Check;
use crate::signal_sim::{kernel_derivatives, make_kernel, observe, step_signal, ObservationRecord, SignalState};
use crate::spectral_model::{
    assemble_with_b, multiplication_operator, weighting_matrix, ModelParams, SensorArray, SystemMatrices,
};
use crate::tangent::{placement_gradient, tangent_step, TangentState};
use crate::Result;

/// Relative tolerance for the log-likelihood gradient.
pub const RML_TOL: f64 = 1e-3;
/// Relative tolerance for the placement gradient.
pub const PLACEMENT_TOL: f64 = 1e-4;
/// Relative tolerance for the kernel and system-matrix derivatives.
pub const MATRIX_TOL: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-300 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn mat_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = frobenius(a).max(frobenius(b));
    if scale < 1e-300 {
        0.0
    } else {
        frobenius(&(a - b)) / scale
    }
}

struct Setup<'a> {
    cfg: &'a ExperimentConfig,
    b: Option<DMatrix<f64>>,
    m: DMatrix<f64>,
    ks: crate::spectral_model::WaveNumberSet,
}

impl Setup<'_> {
    fn system(&self, th: &ModelParams, s: &SensorArray, with_derivatives: bool) -> Result<SystemMatrices> {
        let active = if with_derivatives { self.cfg.active.clone() } else { Vec::new() };
        let mut s = s.clone();
        if !with_derivatives {
            s.movable.iter_mut().for_each(|m| *m = false);
        }
        assemble_with_b(th, &s, &self.ks, self.b.clone(), self.m.clone(), &active)
    }
}

struct PathSums {
    literal: f64,
    predictive: f64,
    grad: Vec<f64>,
    trace: f64,
    trace_grad: Vec<f64>,
}

fn run_path(sys: &SystemMatrices, dt: f64, obs: &[ObservationRecord]) -> Result<PathSums> {
    let k = make_kernel(sys, dt)?;
    let kd = kernel_derivatives(sys, dt);
    let mut fs = FilterState::zeros(sys.n());
    let mut ts = TangentState::zeros(sys.n(), sys.n_theta(), sys.n_o());
    let mut out =
        PathSums { literal: 0.0, predictive: 0.0, grad: vec![0.0; sys.n_theta()], trace: 0.0, trace_grad: Vec::new() };
    for (i, z) in obs.iter().enumerate() {
        let (next, rec) = kb_step_full(&fs, sys, &k, z, i)?;
        out.literal += loglik_increment(&rec.m_pred, &z.z, sys, dt);
        out.predictive += predictive_loglik_increment(&rec);
        if sys.n_theta() + sys.n_o() > 0 {
            let (nts, pred) = tangent_step(&fs, &ts, sys, &k, &kd, &rec);
            for (a, b) in out.grad.iter_mut().zip(rml_gradient_increment(&rec, &pred, sys, dt)) {
                *a += b;
            }
            ts = nts;
        }
        fs = next;
    }
    out.trace = sys.m.component_mul(&fs.s).sum();
    out.trace_grad = placement_gradient(&ts, &sys.m);
    Ok(out)
}

/// Every finite-difference oracle on one configuration, evaluated at the
/// initial parameters and sensor layout over a path of `steps` observations
/// simulated from the truth.
pub fn gradient_check(cfg: &ExperimentConfig, steps: usize) -> Result<Vec<Check>> {
    cfg.validate()?;
    let ks = cfg.wavenumbers()?;
    let b = match &cfg.b_field {
        Some(f) => Some(multiplication_operator(&ks, &|x| f.eval(x))?),
        None => None,
    };
    let m = weighting_matrix(&cfg.m, &ks)?;
    let setup = Setup { cfg, b, m, ks };
    let dt = cfg.dt;
    let sensors = cfg.sensor_array()?;
    let th0 = cfg.initial.clone();
    let truth = cfg.truth.knots[0].1.clone();

    let truth_sys = setup.system(&truth, &sensors, false)?;
    let tk = make_kernel(&truth_sys, dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sig = SignalState { t: 0.0, alpha: nalgebra::DVector::zeros(truth_sys.n()) };
    let obs: Vec<ObservationRecord> = (0..steps)
        .map(|_| {
            sig = step_signal(&sig, &tk, &mut rng);
            observe(&sig, &truth_sys, dt, &mut rng)
        })
        .collect();

    let sys = setup.system(&th0, &sensors, true)?;
    let base = run_path(&sys, dt, &obs)?;
    let mut checks = Vec::new();

    for (j, &id) in cfg.active.iter().enumerate() {
        let v = th0.get(id);
        let h = 1e-6 * v.abs().max(1e-2);
        let eval = |x: f64| -> Result<PathSums> {
            let mut p = th0.clone();
            p.set(id, x);
            run_path(&setup.system(&p, &sensors, false)?, dt, &obs)
        };
        let (hi, lo) = (eval(v + h)?, eval(v - h)?);
        let fd = if id.is_tau2() {
            (hi.predictive - lo.predictive) / (2.0 * h)
        } else {
            (hi.literal - lo.literal) / (2.0 * h)
        };
        let e = rel_err(base.grad[j], fd);
        checks.push(Check {
            name: format!("rml_gradient {id}"),
            passed: e < RML_TOL,
            detail: format!("analytic {:.10e} fd {:.10e} rel {:.2e} (tol {RML_TOL:.0e})", base.grad[j], fd, e),
        });
    }

    // Tr[M S] is O(1) while its sensor gradient can be 1e-10, so a tiny step
    // drowns in roundoff; use a wide step and cancel the h² term instead.
    for (c, &(i, ax)) in sensors.movable_coords().iter().enumerate() {
        let eval = |d: f64| -> Result<f64> {
            let mut s = sensors.clone();
            s.positions[i][ax] += d;
            Ok(run_path(&setup.system(&th0, &s, false)?, dt, &obs)?.trace)
        };
        let central = |h: f64| -> Result<f64> { Ok((eval(h)? - eval(-h)?) / (2.0 * h)) };
        let h = 2e-3;
        let fd = (4.0 * central(h / 2.0)? - central(h)?) / 3.0;
        // Gradients below the finite-difference noise floor count as zero.
        let floor = 1e-8 * base.trace.abs();
        let e = (base.trace_grad[c] - fd).abs() / base.trace_grad[c].abs().max(fd.abs()).max(floor).max(1e-300);
        checks.push(Check {
            name: format!("placement_gradient o{}_{}", i + 1, ["x", "y"][ax]),
            passed: e < PLACEMENT_TOL,
            detail: format!(
                "analytic {:.10e} fd {:.10e} rel {:.2e} (tol {PLACEMENT_TOL:.0e})",
                base.trace_grad[c], fd, e
            ),
        });
    }

    let kd = kernel_derivatives(&sys, dt);
    for (j, &id) in cfg.active.iter().enumerate() {
        let v = th0.get(id);
        let h = 1e-6 * v.abs().max(1e-2);
        let kern = |x: f64| -> Result<_> {
            let mut p = th0.clone();
            p.set(id, x);
            make_kernel(&setup.system(&p, &sensors, false)?, dt)
        };
        let (hi, lo) = (kern(v + h)?, kern(v - h)?);
        let fd_phi = (hi.phi.to_dense() - lo.phi.to_dense()) / (2.0 * h);
        let fd_noise = (&hi.noise_cov - &lo.noise_cov) / (2.0 * h);
        let e = mat_rel_err(&kd.d_phi[j].to_dense(), &fd_phi).max(mat_rel_err(&kd.d_noise[j], &fd_noise));
        checks.push(Check {
            name: format!("kernel_derivative {id}"),
            passed: e < MATRIX_TOL,
            detail: format!("rel {e:.2e} (tol {MATRIX_TOL:.0e})"),
        });
    }

    for (c, &(i, ax)) in sensors.movable_coords().iter().enumerate() {
        let h = 1e-6;
        let cmat = |d: f64| -> Result<DMatrix<f64>> {
            let mut s = sensors.clone();
            s.positions[i][ax] += d;
            Ok(setup.system(&th0, &s, false)?.c)
        };
        let fd = (cmat(h)? - cmat(-h)?) / (2.0 * h);
        let e = mat_rel_err(&sys.d_c_o[c], &fd);
        checks.push(Check {
            name: format!("observation_derivative o{}_{}", i + 1, ["x", "y"][ax]),
            passed: e < MATRIX_TOL,
            detail: format!("rel {e:.2e} (tol {MATRIX_TOL:.0e})"),
        });
    }
    Ok(checks)
}
