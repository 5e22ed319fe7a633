use nalgebra::{DMatrix, DVector};

use super::runner::TrajectoryLog;
use crate::spectral_model::{evaluate_field, WaveNumberSet};
use crate::{Error, Result};

pub fn uniform_grid(res: usize) -> Vec<[f64; 2]> {
    let h = 1.0 / res as f64;
    (0..res).flat_map(|i| (0..res).map(move |j| [i as f64 * h, j as f64 * h])).collect()
}

/// `EᵀE / res²` where `E` holds the basis evaluated on the uniform grid, so
/// that `eᵀ G e` is the grid-mean squared field error.
pub fn grid_gram(ks: &WaveNumberSet, res: usize) -> DMatrix<f64> {
    let pts = uniform_grid(res);
    let n = ks.n();
    let e = DMatrix::from_fn(pts.len(), n, |i, j| ks.basis_at(pts[i])[j]);
    e.transpose() * e / pts.len() as f64
}

/// Mean over a `res × res` grid of the squared difference between the two fields.
pub fn instantaneous_mse(alpha: &DVector<f64>, m: &DVector<f64>, ks: &WaveNumberSet, res: usize) -> Result<f64> {
    let pts = uniform_grid(res);
    let a = evaluate_field(alpha, &pts, ks)?;
    let b = evaluate_field(m, &pts, ks)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / pts.len() as f64)
}

/// Trailing moving average; early entries average over what is available.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += x[i];
        if i >= w {
            acc -= x[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// Moving-average MSE from paired truth and filter-mean trajectories.
pub fn mse_series(
    truth: &[DVector<f64>],
    means: &[DVector<f64>],
    ks: &WaveNumberSet,
    res: usize,
    window: usize,
) -> Result<Vec<f64>> {
    if truth.len() != means.len() {
        return Err(Error::Dimension(format!("{} truth states but {} filter means", truth.len(), means.len())));
    }
    let inst = truth.iter().zip(means).map(|(a, m)| instantaneous_mse(a, m, ks, res)).collect::<Result<Vec<_>>>()?;
    Ok(moving_average(&inst, window))
}

/// Final value of the moving-average MSE of a log.
pub fn final_mse(log: &TrajectoryLog, window: usize) -> f64 {
    let w = window.min(log.mse.len()).max(1);
    log.mse[log.mse.len() - w..].iter().sum::<f64>() / w as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct AveragedLog {
    pub t: Vec<f64>,
    pub theta_mean: Vec<Vec<f64>>,
    pub theta_se: Vec<Vec<f64>>,
    pub coords_mean: Vec<Vec<f64>>,
    pub coords_se: Vec<Vec<f64>>,
    pub trials: usize,
}

fn mean_se(samples: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let k = samples.len() as f64;
    let d = samples[0].len();
    let mut mean = vec![0.0; d];
    let mut se = vec![0.0; d];
    for s in samples {
        for j in 0..d {
            mean[j] += s[j] / k;
        }
    }
    for s in samples {
        for j in 0..d {
            se[j] += (s[j] - mean[j]).powi(2);
        }
    }
    for v in se.iter_mut() {
        *v = (*v / (k - 1.0) / k).sqrt();
    }
    (mean, se)
}

/// Pointwise mean and standard error of θ(t) and o(t) across trials.
pub fn trial_average(logs: &[TrajectoryLog]) -> Result<AveragedLog> {
    if logs.len() < 2 {
        return Err(Error::Dimension("trial averaging needs at least two logs".into()));
    }
    let rows = logs[0].rows.len();
    for l in logs {
        if l.rows.len() != rows
            || l.header.theta_names != logs[0].header.theta_names
            || l.header.coord_names != logs[0].header.coord_names
        {
            return Err(Error::Dimension("logs have mismatched shapes".into()));
        }
        if l.rows.iter().zip(&logs[0].rows).any(|(a, b)| a.step != b.step) {
            return Err(Error::Dimension("logs were recorded at different steps".into()));
        }
    }
    let mut out = AveragedLog {
        t: logs[0].rows.iter().map(|r| r.t).collect(),
        theta_mean: Vec::with_capacity(rows),
        theta_se: Vec::with_capacity(rows),
        coords_mean: Vec::with_capacity(rows),
        coords_se: Vec::with_capacity(rows),
        trials: logs.len(),
    };
    for i in 0..rows {
        let th: Vec<&[f64]> = logs.iter().map(|l| l.rows[i].theta.as_slice()).collect();
        let (m, s) = mean_se(&th);
        out.theta_mean.push(m);
        out.theta_se.push(s);
        let co: Vec<&[f64]> = logs.iter().map(|l| l.rows[i].coords.as_slice()).collect();
        let (m, s) = mean_se(&co);
        out.coords_mean.push(m);
        out.coords_se.push(s);
    }
    Ok(out)
}
