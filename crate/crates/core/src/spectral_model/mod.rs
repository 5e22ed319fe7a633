//! Truncated real-Fourier representation of the advection-diffusion SPDE.

mod bessel;
mod params;
mod sensors;
mod system;
mod wavenumbers;

use num_complex::Complex64;

pub use bessel::{bessel_j1, disc_factor};
pub use params::{ModelParams, ParamId, ParameterSpace};
pub use sensors::{torus_distance, wrap01, wrap_point, SensorArray};
pub use system::{
    assemble_system, assemble_with_b, disc_average_coeffs, evaluate_field, multiplication_operator, weighting_matrix,
    BField, MSpec, SystemMatrices, B_QUADRATURE_GRID,
};
pub use wavenumbers::{
    angular, build_truncation, in_upper_half_plane, sq_norm, TruncationSpec, WaveNumberSet, Wavenumber,
};

/// Diffusion matrix `Σ = ρ₁² (MᵀM)⁻¹`, closed form.
pub fn diffusion_matrix(theta: &ModelParams) -> [[f64; 2]; 2] {
    let (s, c) = theta.alpha.sin_cos();
    let g = 1.0 / (theta.gamma_aniso * theta.gamma_aniso);
    let r2 = theta.rho1 * theta.rho1;
    let off = r2 * (1.0 - g) * c * s;
    [[r2 * (c * c + g * s * s), off], [off, r2 * (s * s + g * c * c)]]
}

fn diffusion_matrix_derivative(theta: &ModelParams, id: ParamId) -> [[f64; 2]; 2] {
    let (s, c) = theta.alpha.sin_cos();
    let gam = theta.gamma_aniso;
    let g = 1.0 / (gam * gam);
    let r2 = theta.rho1 * theta.rho1;
    match id {
        ParamId::Rho1 => {
            let sig = diffusion_matrix(theta);
            let f = 2.0 / theta.rho1;
            [[f * sig[0][0], f * sig[0][1]], [f * sig[1][0], f * sig[1][1]]]
        }
        ParamId::Gamma => {
            let dg = -2.0 / (gam * gam * gam);
            [[r2 * dg * s * s, -r2 * dg * c * s], [-r2 * dg * c * s, r2 * dg * c * c]]
        }
        ParamId::Alpha => {
            let f = r2 * (1.0 - g);
            [[-2.0 * f * c * s, f * (c * c - s * s)], [f * (c * c - s * s), 2.0 * f * c * s]]
        }
        _ => [[0.0; 2]; 2],
    }
}

fn quad(k: [f64; 2], m: [[f64; 2]; 2]) -> f64 {
    k[0] * (m[0][0] * k[0] + m[0][1] * k[1]) + k[1] * (m[1][0] * k[0] + m[1][1] * k[1])
}

/// `λ_k(θ) = −(i k′·μ + k′ᵀΣk′ + ζ)` with `k′ = 2πk`.
pub fn operator_eigenvalue(k: Wavenumber, theta: &ModelParams) -> Complex64 {
    let kp = angular(k);
    let adv = kp[0] * theta.mu[0] + kp[1] * theta.mu[1];
    let dif = quad(kp, diffusion_matrix(theta));
    -Complex64::new(dif + theta.zeta, adv)
}

pub fn eigenvalue_derivative(k: Wavenumber, theta: &ModelParams, id: ParamId) -> Complex64 {
    let kp = angular(k);
    match id {
        ParamId::Zeta => Complex64::new(-1.0, 0.0),
        ParamId::MuX => Complex64::new(0.0, -kp[0]),
        ParamId::MuY => Complex64::new(0.0, -kp[1]),
        ParamId::Rho1 | ParamId::Gamma | ParamId::Alpha => {
            Complex64::new(-quad(kp, diffusion_matrix_derivative(theta, id)), 0.0)
        }
        _ => Complex64::new(0.0, 0.0),
    }
}

/// `η_k = (σ/2π) (k′ᵀk′ + 1/ρ₀²)⁻¹`.
pub fn noise_spectrum(k: Wavenumber, theta: &ModelParams) -> f64 {
    let kp = angular(k);
    let s = kp[0] * kp[0] + kp[1] * kp[1] + 1.0 / (theta.rho0 * theta.rho0);
    theta.sigma2.max(0.0).sqrt() / (2.0 * std::f64::consts::PI) / s
}

/// Derivative of `η_k²` with respect to one coordinate.
pub fn noise_spectrum_sq_derivative(k: Wavenumber, theta: &ModelParams, id: ParamId) -> f64 {
    let eta2 = noise_spectrum(k, theta).powi(2);
    match id {
        ParamId::Sigma2 => eta2 / theta.sigma2,
        ParamId::Rho0 => {
            let kp = angular(k);
            let s = kp[0] * kp[0] + kp[1] * kp[1] + 1.0 / (theta.rho0 * theta.rho0);
            4.0 * eta2 / (theta.rho0.powi(3) * s)
        }
        _ => 0.0,
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    pub fn sim1_truth() -> ModelParams {
        ModelParams {
            rho0: 0.5,
            sigma2: 0.2,
            zeta: 0.5,
            rho1: 0.1,
            gamma_aniso: 2.0,
            alpha: std::f64::consts::FRAC_PI_4,
            mu: [0.3, -0.3],
            tau2: vec![0.01],
            beta: vec![],
        }
    }

    pub fn sim1_sensors() -> SensorArray {
        let pts = [(10.1, 7.8), (4.1, 6.01), (5.2, 3.75), (7.2, 4.02), (3.2, 3.1), (6.1, 2.1), (1.01, 2.8), (3.0, 1.0)];
        SensorArray::simple(pts.iter().map(|&(x, y)| [x / 12.0, y / 12.0]).collect(), 0.05, true)
    }
}
