//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Factor `L` with `L Lᵀ = P` for a symmetric positive semi-definite `P`.
/// Falls back to an eigen-decomposition when Cholesky fails.
pub fn psd_factor(p: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = p.clone().cholesky() {
        return ch.l();
    }
    let eig = p.clone().symmetric_eigen();
    let mut l = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    l
}

/// Gauss-Legendre nodes and weights on [-1, 1] (8 points).
pub fn gauss_legendre_8() -> ([f64; 8], [f64; 8]) {
    let x = [
        -0.960_289_856_497_536_2,
        -0.796_666_477_413_626_7,
        -0.525_532_409_916_329,
        -0.183_434_642_495_649_8,
        0.183_434_642_495_649_8,
        0.525_532_409_916_329,
        0.796_666_477_413_626_7,
        0.960_289_856_497_536_2,
    ];
    let w = [
        0.101_228_536_290_376_26,
        0.222_381_034_453_374_47,
        0.313_706_645_877_887_3,
        0.362_683_783_378_362,
        0.362_683_783_378_362,
        0.313_706_645_877_887_3,
        0.222_381_034_453_374_47,
        0.101_228_536_290_376_26,
    ];
    (x, w)
}

/// Block-diagonal real operator built from complex scalars.
///
/// The optional leading 1x1 block holds a real value (the imaginary part of the
/// first entry is ignored). Every other entry `z = x + iy` is the 2x2 block
/// `[[x, y], [-y, x]]` acting on a (cos, sin) coefficient pair.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockDiag {
    pub has_constant: bool,
    pub vals: Vec<Complex64>,
}

impl BlockDiag {
    pub fn new(has_constant: bool, vals: Vec<Complex64>) -> Self {
        BlockDiag { has_constant, vals }
    }

    pub fn dim(&self) -> usize {
        if self.has_constant {
            1 + 2 * (self.vals.len() - 1)
        } else {
            2 * self.vals.len()
        }
    }

    /// Row offset and width of each block.
    pub fn blocks(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        let hc = self.has_constant;
        self.vals.iter().enumerate().map(move |(b, &z)| {
            if hc {
                if b == 0 {
                    (0, 1, z)
                } else {
                    (1 + 2 * (b - 1), 2, z)
                }
            } else {
                (2 * b, 2, z)
            }
        })
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> BlockDiag {
        let vals = self
            .vals
            .iter()
            .enumerate()
            .map(|(b, &z)| {
                let v = f(z);
                if self.has_constant && b == 0 {
                    Complex64::new(v.re, 0.0)
                } else {
                    v
                }
            })
            .collect();
        BlockDiag::new(self.has_constant, vals)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for (o, w, z) in self.blocks() {
            if w == 1 {
                m[(o, o)] = z.re;
            } else {
                m[(o, o)] = z.re;
                m[(o, o + 1)] = z.im;
                m[(o + 1, o)] = -z.im;
                m[(o + 1, o + 1)] = z.re;
            }
        }
        m
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for (o, w, z) in self.blocks() {
            if w == 1 {
                out[o] = z.re * v[o];
            } else {
                let (c, s) = (v[o], v[o + 1]);
                out[o] = z.re * c + z.im * s;
                out[o + 1] = -z.im * c + z.re * s;
            }
        }
        out
    }

    /// `self * x`
    pub fn mul_left(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for (o, w, z) in self.blocks() {
            for j in 0..x.ncols() {
                if w == 1 {
                    out[(o, j)] = z.re * x[(o, j)];
                } else {
                    let (c, s) = (x[(o, j)], x[(o + 1, j)]);
                    out[(o, j)] = z.re * c + z.im * s;
                    out[(o + 1, j)] = -z.im * c + z.re * s;
                }
            }
        }
        out
    }

    /// `x * selfᵀ`
    pub fn mul_right_t(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for (o, w, z) in self.blocks() {
            for i in 0..x.nrows() {
                if w == 1 {
                    out[(i, o)] = z.re * x[(i, o)];
                } else {
                    let (c, s) = (x[(i, o)], x[(i, o + 1)]);
                    out[(i, o)] = z.re * c + z.im * s;
                    out[(i, o + 1)] = -z.im * c + z.re * s;
                }
            }
        }
        out
    }

    /// `self * s * selfᵀ`
    pub fn congruence(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        self.mul_right_t(&self.mul_left(s))
    }
}
