//! Exact forward sensitivities of the discrete filter recursion.

use nalgebra::{DMatrix, DVector};

use crate::kalman::{FilterState, StepRecord};
use crate::linalg::{symmetrize, BlockDiag};
use crate::signal_sim::{KernelDerivatives, TransitionKernel};
use crate::spectral_model::SystemMatrices;

/// Sensitivities of the filter mean and covariance.
///
/// Columns of `dm_theta` and slices of `ds_theta` follow `sys.active`; those of
/// `dm_o` and `ds_o` follow `sys.movable`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentState {
    pub dm_theta: DMatrix<f64>,
    pub ds_theta: Vec<DMatrix<f64>>,
    pub dm_o: DMatrix<f64>,
    pub ds_o: Vec<DMatrix<f64>>,
}

impl TangentState {
    pub fn zeros(n: usize, n_theta: usize, n_o: usize) -> Self {
        TangentState {
            dm_theta: DMatrix::zeros(n, n_theta),
            ds_theta: vec![DMatrix::zeros(n, n); n_theta],
            dm_o: DMatrix::zeros(n, n_o),
            ds_o: vec![DMatrix::zeros(n, n); n_o],
        }
    }

    pub fn n_theta(&self) -> usize {
        self.ds_theta.len()
    }

    pub fn n_o(&self) -> usize {
        self.ds_o.len()
    }
}

/// Derivatives of the predicted quantities for one step, per direction
/// (parameters first, then sensor coordinates).
#[derive(Clone, Debug)]
pub struct PredictedTangent {
    pub dm_pred: Vec<DVector<f64>>,
    pub ds_pred: Vec<DMatrix<f64>>,
    /// Derivative of `C S⁻ Cᵀ + R/dt`.
    pub ds_nu: Vec<DMatrix<f64>>,
    /// Derivative of `z − C m⁻ − bias`.
    pub d_innovation: Vec<DVector<f64>>,
}

/// Derivative of one direction's model inputs.
struct Direction<'a> {
    d_phi: Option<&'a BlockDiag>,
    d_noise: Option<&'a DMatrix<f64>>,
    d_c: Option<&'a DMatrix<f64>>,
    d_r: Option<&'a DVector<f64>>,
    d_bias: Option<&'a DVector<f64>>,
}

struct Propagated {
    dm: DVector<f64>,
    ds: DMatrix<f64>,
    dm_pred: DVector<f64>,
    ds_pred: DMatrix<f64>,
    ds_nu: DMatrix<f64>,
    d_nu: DVector<f64>,
}

#[allow(clippy::too_many_arguments)]
fn propagate(
    prev: &FilterState,
    dm: DVector<f64>,
    ds: &DMatrix<f64>,
    dir: &Direction,
    sys: &SystemMatrices,
    kernel: &TransitionKernel,
    rec: &StepRecord,
) -> Propagated {
    let dt = kernel.dt;
    let phi = &kernel.phi;
    let n = sys.n();

    let mut dm_pred = phi.mul_vec(&dm);
    let mut ds_pred = phi.congruence(ds);
    if let Some(dp) = dir.d_phi {
        dm_pred += dp.mul_vec(&prev.m);
        let x = phi.mul_right_t(&dp.mul_left(&prev.s));
        ds_pred += &x + x.transpose();
    }
    if let Some(dw) = dir.d_noise {
        ds_pred += dw;
    }
    symmetrize(&mut ds_pred);

    let c = &sys.c;
    let k = &rec.gain;
    let mut ds_nu = c * &ds_pred * c.transpose();
    let mut d_nu = -(c * &dm_pred);
    // dS⁻Cᵀ + S⁻dCᵀ
    let mut cross = &ds_pred * c.transpose();
    if let Some(dc) = dir.d_c {
        let y = dc * &rec.s_pred * c.transpose();
        ds_nu += &y + y.transpose();
        d_nu -= dc * &rec.m_pred;
        cross += &rec.s_pred * dc.transpose();
    }
    if let Some(dr) = dir.d_r {
        for i in 0..dr.len() {
            ds_nu[(i, i)] += dr[i] / dt;
        }
    }
    symmetrize(&mut ds_nu);
    if let Some(db) = dir.d_bias {
        d_nu -= db;
    }
    let dk = (cross - k * &ds_nu) * &rec.s_nu_inv;

    let dm_new = &dm_pred + &dk * &rec.innovation + k * &d_nu;

    // Exact derivative of S = L S⁻ Lᵀ + K R' Kᵀ with L = I − KC.
    let l = DMatrix::identity(n, n) - k * c;
    let mut dl = -(&dk * c);
    if let Some(dc) = dir.d_c {
        dl -= k * dc;
    }
    let mut kr = k.clone();
    for j in 0..kr.ncols() {
        kr.column_mut(j).scale_mut(sys.r[j] / dt);
    }
    let a = &dl * &rec.s_pred * l.transpose() + &dk * kr.transpose();
    let mut ds_new = &a + a.transpose() + &l * &ds_pred * l.transpose();
    if let Some(dr) = dir.d_r {
        let mut kd = k.clone();
        for j in 0..kd.ncols() {
            kd.column_mut(j).scale_mut(dr[j] / dt);
        }
        ds_new += kd * k.transpose();
    }
    symmetrize(&mut ds_new);

    Propagated { dm: dm_new, ds: ds_new, dm_pred, ds_pred, ds_nu, d_nu }
}

/// Advance every sensitivity through one predict/update step.
///
/// `prev` is the filter state before the step and `rec` the record returned by
/// [`crate::kalman::kb_step_full`] for that step.
pub fn tangent_step(
    prev: &FilterState,
    ts: &TangentState,
    sys: &SystemMatrices,
    kernel: &TransitionKernel,
    kder: &KernelDerivatives,
    rec: &StepRecord,
) -> (TangentState, PredictedTangent) {
    let n = sys.n();
    let nt = ts.n_theta();
    let no = ts.n_o();
    let mut out = TangentState::zeros(n, nt, no);
    let mut pred = PredictedTangent {
        dm_pred: Vec::with_capacity(nt + no),
        ds_pred: Vec::with_capacity(nt + no),
        ds_nu: Vec::with_capacity(nt + no),
        d_innovation: Vec::with_capacity(nt + no),
    };
    let mut record = |p: Propagated, dm_out: &mut DVector<f64>, ds_out: &mut DMatrix<f64>| {
        *dm_out = p.dm;
        *ds_out = p.ds;
        pred.dm_pred.push(p.dm_pred);
        pred.ds_pred.push(p.ds_pred);
        pred.ds_nu.push(p.ds_nu);
        pred.d_innovation.push(p.d_nu);
    };

    for j in 0..nt {
        let dir = Direction {
            d_phi: Some(&kder.d_phi[j]),
            d_noise: Some(&kder.d_noise[j]),
            d_c: None,
            d_r: Some(&sys.d_r[j]),
            d_bias: Some(&sys.d_bias[j]),
        };
        let p = propagate(prev, ts.dm_theta.column(j).into_owned(), &ts.ds_theta[j], &dir, sys, kernel, rec);
        let mut dm = DVector::zeros(n);
        record(p, &mut dm, &mut out.ds_theta[j]);
        out.dm_theta.set_column(j, &dm);
    }
    for c in 0..no {
        let dir = Direction { d_phi: None, d_noise: None, d_c: Some(&sys.d_c_o[c]), d_r: None, d_bias: None };
        let p = propagate(prev, ts.dm_o.column(c).into_owned(), &ts.ds_o[c], &dir, sys, kernel, rec);
        let mut dm = DVector::zeros(n);
        record(p, &mut dm, &mut out.ds_o[c]);
        out.dm_o.set_column(c, &dm);
    }
    (out, pred)
}

/// `Tr[M · ∂S/∂o_c]` for each movable coordinate.
pub fn placement_gradient(ts: &TangentState, m: &DMatrix<f64>) -> Vec<f64> {
    ts.ds_o.iter().map(|ds| m.component_mul(ds).sum()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kalman::kb_step_full;
    use crate::signal_sim::{kernel_derivatives, make_kernel, observe, step_signal, ObservationRecord, SignalState};
    use crate::spectral_model::tests_support::*;
    use crate::spectral_model::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(sys: &SystemMatrices, dt: f64, steps: usize, seed: u64) -> Vec<ObservationRecord> {
        let k = make_kernel(sys, dt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = SignalState { t: 0.0, alpha: DVector::zeros(sys.n()) };
        (0..steps)
            .map(|_| {
                s = step_signal(&s, &k, &mut rng);
                observe(&s, sys, dt, &mut rng)
            })
            .collect()
    }

    fn run(sys: &SystemMatrices, dt: f64, obs: &[ObservationRecord]) -> (FilterState, TangentState) {
        let k = make_kernel(sys, dt).unwrap();
        let kd = kernel_derivatives(sys, dt);
        let mut fs = FilterState::zeros(sys.n());
        let mut ts = TangentState::zeros(sys.n(), sys.n_theta(), sys.n_o());
        for (i, z) in obs.iter().enumerate() {
            let (next, rec) = kb_step_full(&fs, sys, &k, z, i).unwrap();
            ts = tangent_step(&fs, &ts, sys, &k, &kd, &rec).0;
            fs = next;
        }
        (fs, ts)
    }

    fn setup() -> (ModelParams, SensorArray, WaveNumberSet) {
        let mut th = sim1_truth();
        th.beta = vec![0.3];
        let mut s = sim1_sensors();
        s.bias_class[0] = Some(0);
        s.movable = vec![true, false, true, false, false, false, false, false];
        (th, s, build_truncation(TruncationSpec::TargetN(21), true).unwrap())
    }

    #[test]
    fn zero_model_derivatives_keep_tangent_zero() {
        let (th, s, ks) = setup();
        let mut sys = assemble_system(&th, &s, &ks, None, &MSpec::Identity, &[ParamId::Rho0]).unwrap();
        sys.d_q[0].fill(0.0);
        let obs = record(&sys, 0.01, 50, 1);
        let (_, ts) = run(&sys, 0.01, &obs);
        assert_eq!(ts.dm_theta.abs().max(), 0.0);
        assert_eq!(ts.ds_theta[0].abs().max(), 0.0);
    }

    #[test]
    fn tangent_matches_finite_differences() {
        let (th, s, ks) = setup();
        let active = th.all_ids();
        let dt = 0.01;
        let sys = assemble_system(&th, &s, &ks, None, &MSpec::Identity, &active).unwrap();
        let obs = record(&sys, dt, 300, 4);
        let (_, ts) = run(&sys, dt, &obs);
        let h = 1e-5;
        for (j, &id) in active.iter().enumerate() {
            let mut p = th.clone();
            p.set(id, th.get(id) + h);
            let mut m = th.clone();
            m.set(id, th.get(id) - h);
            let (fp, _) = run(&assemble_system(&p, &s, &ks, None, &MSpec::Identity, &[]).unwrap(), dt, &obs);
            let (fm, _) = run(&assemble_system(&m, &s, &ks, None, &MSpec::Identity, &[]).unwrap(), dt, &obs);
            let fd_m = (&fp.m - &fm.m) / (2.0 * h);
            let fd_s = (&fp.s - &fm.s) / (2.0 * h);
            let an_m = ts.dm_theta.column(j);
            let em = (&fd_m - an_m).norm() / an_m.norm().max(1e-12);
            let es = (&fd_s - &ts.ds_theta[j]).norm() / ts.ds_theta[j].norm().max(1e-12);
            assert!(em < 1e-4, "{id}: mean rel err {em}");
            assert!(es < 1e-4 || ts.ds_theta[j].norm() < 1e-14, "{id}: cov rel err {es}");
        }
        for (c, &(i, ax)) in sys.movable.iter().enumerate() {
            let mut p = s.clone();
            p.positions[i][ax] += h;
            let mut m = s.clone();
            m.positions[i][ax] -= h;
            let (fp, _) = run(&assemble_with_b(&th, &p, &ks, None, sys.m.clone(), &[]).unwrap(), dt, &obs);
            let (fm, _) = run(&assemble_with_b(&th, &m, &ks, None, sys.m.clone(), &[]).unwrap(), dt, &obs);
            let fd_s = (&fp.s - &fm.s) / (2.0 * h);
            let es = (&fd_s - &ts.ds_o[c]).norm() / ts.ds_o[c].norm();
            assert!(es < 1e-4, "o{c}: cov rel err {es}");
            let fd_m = (&fp.m - &fm.m) / (2.0 * h);
            let em = (&fd_m - ts.dm_o.column(c)).norm() / ts.dm_o.column(c).norm();
            assert!(em < 1e-4, "o{c}: mean rel err {em}");
        }
    }

    #[test]
    fn placement_gradient_basics() {
        let (th, s, ks) = setup();
        let sys = assemble_system(&th, &s, &ks, None, &MSpec::Identity, &[]).unwrap();
        let obs = record(&sys, 0.01, 100, 2);
        let (_, ts) = run(&sys, 0.01, &obs);
        let z = placement_gradient(&ts, &DMatrix::zeros(21, 21));
        assert!(z.iter().all(|&v| v == 0.0));
        let g = placement_gradient(&ts, &sys.m);
        for (c, v) in g.iter().enumerate() {
            assert!((v - ts.ds_o[c].trace()).abs() < 1e-15);
        }
    }

    #[test]
    fn mirrored_configuration_mirrors_gradient() {
        // Isotropic, drift-free model is symmetric under (x, y) ↦ (y, x).
        let mut th = sim1_truth();
        th.mu = [0.0, 0.0];
        th.gamma_aniso = 1.0;
        let ks = build_truncation(TruncationSpec::TargetN(21), true).unwrap();
        let a = SensorArray::simple(vec![[0.2, 0.6], [0.7, 0.3]], 0.05, true);
        let b = SensorArray::simple(vec![[0.6, 0.2], [0.3, 0.7]], 0.05, true);
        let grad = |s: &SensorArray| {
            let sys = assemble_system(&th, s, &ks, None, &MSpec::Identity, &[]).unwrap();
            let k = make_kernel(&sys, 0.02).unwrap();
            let kd = kernel_derivatives(&sys, 0.02);
            let mut fs = FilterState::zeros(21);
            let mut ts = TangentState::zeros(21, 0, 4);
            let z = ObservationRecord { t: 0.0, z: DVector::zeros(2) };
            for i in 0..200 {
                let (next, rec) = kb_step_full(&fs, &sys, &k, &z, i).unwrap();
                ts = tangent_step(&fs, &ts, &sys, &k, &kd, &rec).0;
                fs = next;
            }
            placement_gradient(&ts, &sys.m)
        };
        let ga = grad(&a);
        let gb = grad(&b);
        for (i, j) in [(0, 1), (1, 0), (2, 3), (3, 2)] {
            assert!((ga[i] - gb[j]).abs() < 1e-10 * ga[i].abs().max(1e-12), "{ga:?} vs {gb:?}");
        }
    }

    #[test]
    fn uninformative_sensor_has_vanishing_sensitivity() {
        let (mut th, _, ks) = setup();
        th.tau2 = vec![0.01, 1e12];
        let mut s = SensorArray::simple(vec![[0.3, 0.3], [0.6, 0.5]], 1e-6, true);
        s.noise_class = vec![0, 1];
        let sys = assemble_system(&th, &s, &ks, None, &MSpec::Identity, &[]).unwrap();
        let obs = record(&sys, 0.01, 100, 3);
        let (_, ts) = run(&sys, 0.01, &obs);
        assert!(ts.ds_o[2].norm() < 1e-10 * ts.ds_o[0].norm());
        assert!(ts.ds_o[3].norm() < 1e-10 * ts.ds_o[0].norm());
    }
}
