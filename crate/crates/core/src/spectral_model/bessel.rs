//! Disc-average factor built on the order-one Bessel function.

pub fn bessel_j1(x: f64) -> f64 {
    puruspe::Jn(1, x)
}

/// `g(x) = 2 J₁(x) / x` with `g(0) = 1`.
pub fn disc_factor(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 8.0
    } else {
        2.0 * bessel_j1(x) / x
    }
}
