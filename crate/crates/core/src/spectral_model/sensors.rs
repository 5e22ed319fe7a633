use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Wrap a coordinate into `[0, 1)`.
pub fn wrap01(x: f64) -> f64 {
    let w = x - x.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

pub fn wrap_point(p: [f64; 2]) -> [f64; 2] {
    [wrap01(p[0]), wrap01(p[1])]
}

/// Shortest distance between two points on the unit torus.
pub fn torus_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = |u: f64, v: f64| {
        let t = (u - v).abs() % 1.0;
        t.min(1.0 - t)
    };
    d(a[0], b[0]).hypot(d(a[1], b[1]))
}

/// Disc-averaging sensors on the torus.
///
/// `noise_class[i]` indexes `tau2`, `bias_class[i]` indexes `beta` (both
/// zero-based; `None` means the sensor has no bias).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorArray {
    pub positions: Vec<[f64; 2]>,
    pub radius: f64,
    pub noise_class: Vec<usize>,
    pub bias_class: Vec<Option<usize>>,
    pub movable: Vec<bool>,
}

impl SensorArray {
    /// Sensors in a single noise class, without bias, all movable or all fixed.
    pub fn simple(positions: Vec<[f64; 2]>, radius: f64, movable: bool) -> Self {
        let n = positions.len();
        SensorArray {
            positions: positions.into_iter().map(wrap_point).collect(),
            radius,
            noise_class: vec![0; n],
            bias_class: vec![None; n],
            movable: vec![movable; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `(sensor, axis)` for every movable coordinate, in sensor order, x before y.
    pub fn movable_coords(&self) -> Vec<(usize, usize)> {
        self.movable.iter().enumerate().filter(|(_, &m)| m).flat_map(|(i, _)| [(i, 0), (i, 1)]).collect()
    }

    pub fn n_movable(&self) -> usize {
        self.movable.iter().filter(|&&m| m).count()
    }

    pub fn validate(&self, n_noise: usize, n_bias: usize) -> Result<()> {
        let n = self.len();
        if self.noise_class.len() != n || self.bias_class.len() != n || self.movable.len() != n {
            return Err(Error::Dimension(format!(
                "sensor array has {n} positions but {} noise classes, {} bias classes, {} movable flags",
                self.noise_class.len(),
                self.bias_class.len(),
                self.movable.len()
            )));
        }
        if !(self.radius > 0.0 && self.radius < 0.5) {
            return Err(Error::InvalidParameter(format!("sensor radius must lie in (0, 0.5), got {}", self.radius)));
        }
        for (i, p) in self.positions.iter().enumerate() {
            if !p.iter().all(|v| v.is_finite() && (0.0..1.0).contains(v)) {
                return Err(Error::InvalidParameter(format!("sensor {} position {p:?} is not wrapped", i + 1)));
            }
            if self.noise_class[i] >= n_noise {
                return Err(Error::InvalidParameter(format!(
                    "sensor {} noise class {} exceeds {n_noise} classes",
                    i + 1,
                    self.noise_class[i] + 1
                )));
            }
            if let Some(b) = self.bias_class[i] {
                if b >= n_bias {
                    return Err(Error::InvalidParameter(format!(
                        "sensor {} bias class {} exceeds {n_bias} classes",
                        i + 1,
                        b + 1
                    )));
                }
            }
        }
        Ok(())
    }
}
