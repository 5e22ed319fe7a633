use rayon::prelude::*;

use crate::kalman::solve_are_reduction;
use nalgebra::DMatrix;

use crate::spectral_model::{assemble_with_b, weighting_matrix, MSpec, ModelParams, SensorArray, WaveNumberSet};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub res: usize,
    /// Row-major over (x, y) grid nodes `i / res`; `None` marks an ARE failure.
    pub values: Vec<Option<f64>>,
    /// `Tr[M (P − S∞)]`, the variance removed by the sensors. Ranking uses
    /// this, since `values` can differ only in their last few digits.
    pub reduction: Vec<Option<f64>>,
    pub argmin: [f64; 2],
    pub min_value: f64,
}

impl Heatmap {
    pub fn node(&self, idx: usize) -> [f64; 2] {
        [(idx / self.res) as f64 / self.res as f64, (idx % self.res) as f64 / self.res as f64]
    }

    pub fn holes(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

/// Asymptotic placement objective with one extra sensor swept over a grid.
///
/// The extra sensor has the radius, noise class and bias class of the
/// first fixed sensor. `b` is the noise weighting operator, identity if absent.
pub fn heatmap_objective(
    theta: &ModelParams,
    fixed: &SensorArray,
    ks: &WaveNumberSet,
    b: Option<&DMatrix<f64>>,
    res: usize,
    m_spec: &MSpec,
) -> Result<Heatmap> {
    if res < 8 {
        return Err(Error::InvalidParameter(format!("heatmap resolution must be at least 8, got {res}")));
    }
    if fixed.is_empty() {
        return Err(Error::InvalidParameter("heatmap needs at least one fixed sensor".into()));
    }
    let m = weighting_matrix(m_spec, ks)?;
    let cells: Vec<Option<(f64, f64)>> = (0..res * res)
        .into_par_iter()
        .map(|idx| {
            let p = [(idx / res) as f64 / res as f64, (idx % res) as f64 / res as f64];
            let mut s = fixed.clone();
            s.positions.push(p);
            s.noise_class.push(fixed.noise_class[0]);
            s.bias_class.push(fixed.bias_class[0]);
            s.movable = vec![false; s.len()];
            let sys = assemble_with_b(theta, &s, ks, b.cloned(), m.clone(), &[]).ok()?;
            let vr = solve_are_reduction(&sys).ok()?;
            let total = sys.m.component_mul(&vr.prior).sum();
            let removed = sys.m.component_mul(&vr.reduction).sum();
            (total.is_finite() && removed.is_finite()).then_some((total - removed, removed))
        })
        .collect();
    let best = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|c| (i, c.1)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
        .ok_or_else(|| Error::NoConvergence { what: "heatmap", iterations: 0, residual: f64::NAN })?;
    let values: Vec<Option<f64>> = cells.iter().map(|c| c.map(|c| c.0)).collect();
    let reduction: Vec<Option<f64>> = cells.iter().map(|c| c.map(|c| c.1)).collect();
    let min_value = values[best].unwrap();
    let mut hm = Heatmap { res, values, reduction, argmin: [0.0; 2], min_value };
    hm.argmin = hm.node(best);
    Ok(hm)
}
