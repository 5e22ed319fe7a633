//! Log-likelihood, RML gradient, placement objective and growth diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::kalman::{FilterState, StepRecord};
use crate::spectral_model::SystemMatrices;
use crate::tangent::{PredictedTangent, TangentState};

/// `⟨R⁻¹ẑ, z⟩dt − ½‖R^{-1/2}ẑ‖²dt` with `ẑ = C m⁻ + bias`.
pub fn loglik_increment(m_pred: &DVector<f64>, z: &DVector<f64>, sys: &SystemMatrices, dt: f64) -> f64 {
    let zh = &sys.c * m_pred + &sys.bias;
    let mut acc = 0.0;
    for i in 0..zh.len() {
        acc += zh[i] / sys.r[i] * (z[i] - 0.5 * zh[i]);
    }
    acc * dt
}

/// Gaussian log-density of the rate observation under the one-step prediction.
pub fn predictive_loglik_increment(rec: &StepRecord) -> f64 {
    let ny = rec.innovation.len() as f64;
    let quad = (rec.innovation.transpose() * &rec.s_nu_inv * &rec.innovation)[0];
    -0.5 * (rec.log_det_s_nu + quad + ny * (2.0 * std::f64::consts::PI).ln())
}

/// RML gradient increment, one entry per active parameter.
///
/// Signal and bias coordinates use the literal continuous-time form
/// `[C ∂m⁻ + ∂bias]ᵀ R⁻¹ ν dt`. Noise-class coordinates use the exact
/// derivative of [`predictive_loglik_increment`].
pub fn rml_gradient_increment(rec: &StepRecord, pred: &PredictedTangent, sys: &SystemMatrices, dt: f64) -> Vec<f64> {
    let r_inv_nu = rec.innovation.component_div(&sys.r);
    let s_inv_nu = &rec.s_nu_inv * &rec.innovation;
    sys.active
        .iter()
        .enumerate()
        .map(|(j, id)| {
            if id.is_tau2() {
                let trace = rec.s_nu_inv.component_mul(&pred.ds_nu[j]).sum();
                let quad = (s_inv_nu.transpose() * &pred.ds_nu[j] * &s_inv_nu)[0];
                -0.5 * trace - pred.d_innovation[j].dot(&s_inv_nu) + 0.5 * quad
            } else {
                // −∂ν = C ∂m⁻ + ∂C m⁻ + ∂bias
                -pred.d_innovation[j].dot(&r_inv_nu) * dt
            }
        })
        .collect()
}

/// `Tr[M S] dt`.
pub fn placement_objective_increment(s: &DMatrix<f64>, m: &DMatrix<f64>, dt: f64) -> f64 {
    m.component_mul(s).sum() * dt
}

/// The six growth-property functions of the joint process.
#[derive(Clone, Debug, PartialEq)]
pub struct PgpDiagnostics {
    /// `C û`
    pub varphi: DVector<f64>,
    /// `(C û)ᵀ (C u − ½ C û)`
    pub zeta: f64,
    /// `C û^θ`
    pub eta: DMatrix<f64>,
    /// `(C û^θ)ᵀ (C u − C û)`
    pub psi: DVector<f64>,
    /// `Tr[M Σ]`
    pub iota: f64,
    /// `Tr[M Σ^o]`
    pub phi: DVector<f64>,
}

/// Diagnostics at a joint state: true signal `u`, filter `fs`, tangents `ts`.
/// Inner products are weighted by `R⁻¹` so that `psi` matches the RML drift.
pub fn pgp_diagnostics(u: &DVector<f64>, fs: &FilterState, ts: &TangentState, sys: &SystemMatrices) -> PgpDiagnostics {
    let r_inv = sys.r.map(|v| 1.0 / v);
    let cu = &sys.c * u;
    let chat = &sys.c * &fs.m;
    let zeta = chat.component_mul(&r_inv).dot(&(&cu - &chat * 0.5));
    let eta = &sys.c * &ts.dm_theta;
    let psi = eta.transpose() * (&cu - &chat).component_mul(&r_inv);
    let iota = sys.m.component_mul(&fs.s).sum();
    let phi = DVector::from_iterator(ts.n_o(), ts.ds_o.iter().map(|d| sys.m.component_mul(d).sum()));
    PgpDiagnostics { varphi: chat, zeta, eta, psi, iota, phi }
}
