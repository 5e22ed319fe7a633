use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type Wavenumber = [i32; 2];

/// How to cut the half-plane lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TruncationSpec {
    TargetN(usize),
    MaxSqNorm(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WaveNumberSet {
    pub ks: Vec<Wavenumber>,
    pub include_constant: bool,
}

pub fn in_upper_half_plane(k: Wavenumber) -> bool {
    let s = k[0] + k[1];
    s > 0 || (s == 0 && k[0] > 0)
}

pub fn sq_norm(k: Wavenumber) -> u32 {
    (k[0] * k[0] + k[1] * k[1]) as u32
}

/// Angular wavenumber `2πk`.
pub fn angular(k: Wavenumber) -> [f64; 2] {
    [2.0 * PI * k[0] as f64, 2.0 * PI * k[1] as f64]
}

fn half_plane_up_to(max_sq: u32) -> Vec<Wavenumber> {
    let r = (max_sq as f64).sqrt().ceil() as i32;
    let mut ks = Vec::new();
    for kx in -r..=r {
        for ky in -r..=r {
            let k = [kx, ky];
            if in_upper_half_plane(k) && sq_norm(k) <= max_sq {
                ks.push(k);
            }
        }
    }
    ks.sort_by_key(|&k| (sq_norm(k), k[0], k[1]));
    ks
}

pub fn build_truncation(spec: TruncationSpec, include_constant: bool) -> Result<WaveNumberSet> {
    let c = usize::from(include_constant);
    match spec {
        TruncationSpec::MaxSqNorm(m) => Ok(WaveNumberSet { ks: half_plane_up_to(m), include_constant }),
        TruncationSpec::TargetN(target) => {
            if target < c || (target - c) % 2 != 0 {
                let below = (target > c).then(|| target - 1);
                return Err(Error::NoExactTruncation { target, below, above: (target + 1).max(c) });
            }
            let want = (target - c) / 2;
            let mut bound = 1u32;
            loop {
                let ks = half_plane_up_to(bound);
                if ks.len() >= want {
                    return Ok(WaveNumberSet { ks: ks[..want].to_vec(), include_constant });
                }
                bound *= 2;
            }
        }
    }
}

impl WaveNumberSet {
    pub fn n(&self) -> usize {
        usize::from(self.include_constant) + 2 * self.ks.len()
    }

    /// Offset of the cos component of `ks[j]` in the real basis.
    pub fn pair_offset(&self, j: usize) -> usize {
        usize::from(self.include_constant) + 2 * j
    }

    /// Real basis functions evaluated at `x`: constant, then cos/sin per wavenumber.
    pub fn basis_at(&self, x: [f64; 2]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n());
        if self.include_constant {
            out.push(1.0);
        }
        for &k in &self.ks {
            let kp = angular(k);
            let ph = kp[0] * x[0] + kp[1] * x[1];
            out.push(ph.cos());
            out.push(ph.sin());
        }
        out
    }

    /// Squared L2 norm of each real basis function on the unit torus.
    pub fn basis_sq_norms(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n());
        if self.include_constant {
            out.push(1.0);
        }
        for _ in &self.ks {
            out.push(0.5);
            out.push(0.5);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_truncation_has_21_functions() {
        let w = build_truncation(TruncationSpec::TargetN(21), true).unwrap();
        assert_eq!(w.n(), 21);
        assert_eq!(w.ks.len(), 10);
        assert_eq!(&w.ks[..2], &[[0, 1], [1, 0]]);
        assert!(w.ks.iter().all(|&k| in_upper_half_plane(k)));
    }

    #[test]
    fn small_truncations() {
        let w = build_truncation(TruncationSpec::TargetN(1), true).unwrap();
        assert!(w.ks.is_empty());
        let w = build_truncation(TruncationSpec::TargetN(3), true).unwrap();
        assert_eq!(w.ks, vec![[0, 1]]);
    }

    #[test]
    fn parity_and_reachability_errors() {
        assert!(build_truncation(TruncationSpec::TargetN(20), true).is_err());
        match build_truncation(TruncationSpec::TargetN(8), true) {
            Err(Error::NoExactTruncation { below, above, .. }) => {
                assert_eq!(below, Some(7));
                assert_eq!(above, 9);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn max_sq_norm_cut() {
        let w = build_truncation(TruncationSpec::MaxSqNorm(2), false).unwrap();
        assert_eq!(
            w.ks,
            vec![[0, 1], [1, 0], [-1, 1], [1, -1], [1, 1]]
                .into_iter()
                .filter(|&k| in_upper_half_plane(k))
                .collect::<Vec<_>>()
        );
        assert_eq!(w.n(), 8);
    }
}
