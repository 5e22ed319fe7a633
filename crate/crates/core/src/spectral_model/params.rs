use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// One scalar coordinate of the parameter vector.
///
/// Noise and bias classes are zero-based internally and one-based in their
/// text form (`tau2_1`, `beta_2`, ...).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    Rho0,
    Sigma2,
    Zeta,
    Rho1,
    Gamma,
    Alpha,
    MuX,
    MuY,
    Tau2(usize),
    Beta(usize),
}

impl ParamId {
    /// Coordinates that enter the signal model (A and Q).
    pub const SIGNAL: [ParamId; 8] = [
        ParamId::Rho0,
        ParamId::Sigma2,
        ParamId::Zeta,
        ParamId::Rho1,
        ParamId::Gamma,
        ParamId::Alpha,
        ParamId::MuX,
        ParamId::MuY,
    ];

    pub fn is_tau2(self) -> bool {
        matches!(self, ParamId::Tau2(_))
    }

    pub fn is_beta(self) -> bool {
        matches!(self, ParamId::Beta(_))
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::Rho0 => write!(f, "rho0"),
            ParamId::Sigma2 => write!(f, "sigma2"),
            ParamId::Zeta => write!(f, "zeta"),
            ParamId::Rho1 => write!(f, "rho1"),
            ParamId::Gamma => write!(f, "gamma_aniso"),
            ParamId::Alpha => write!(f, "alpha"),
            ParamId::MuX => write!(f, "mu_x"),
            ParamId::MuY => write!(f, "mu_y"),
            ParamId::Tau2(c) => write!(f, "tau2_{}", c + 1),
            ParamId::Beta(c) => write!(f, "beta_{}", c + 1),
        }
    }
}

impl FromStr for ParamId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let class = |rest: &str| -> Result<usize> {
            match rest.parse::<usize>() {
                Ok(c) if c >= 1 => Ok(c - 1),
                _ => Err(Error::Config(format!("bad class index in parameter name `{s}`"))),
            }
        };
        Ok(match s {
            "rho0" => ParamId::Rho0,
            "sigma2" => ParamId::Sigma2,
            "zeta" => ParamId::Zeta,
            "rho1" => ParamId::Rho1,
            "gamma_aniso" => ParamId::Gamma,
            "alpha" => ParamId::Alpha,
            "mu_x" => ParamId::MuX,
            "mu_y" => ParamId::MuY,
            _ => {
                if let Some(rest) = s.strip_prefix("tau2_") {
                    ParamId::Tau2(class(rest)?)
                } else if let Some(rest) = s.strip_prefix("beta_") {
                    ParamId::Beta(class(rest)?)
                } else {
                    return Err(Error::Config(format!("unknown parameter `{s}`")));
                }
            }
        })
    }
}

impl Serialize for ParamId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ParamId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub rho0: f64,
    pub sigma2: f64,
    pub zeta: f64,
    pub rho1: f64,
    pub gamma_aniso: f64,
    pub alpha: f64,
    pub mu: [f64; 2],
    pub tau2: Vec<f64>,
    #[serde(default)]
    pub beta: Vec<f64>,
}

impl ModelParams {
    pub fn get(&self, id: ParamId) -> f64 {
        match id {
            ParamId::Rho0 => self.rho0,
            ParamId::Sigma2 => self.sigma2,
            ParamId::Zeta => self.zeta,
            ParamId::Rho1 => self.rho1,
            ParamId::Gamma => self.gamma_aniso,
            ParamId::Alpha => self.alpha,
            ParamId::MuX => self.mu[0],
            ParamId::MuY => self.mu[1],
            ParamId::Tau2(c) => self.tau2[c],
            ParamId::Beta(c) => self.beta[c],
        }
    }

    pub fn set(&mut self, id: ParamId, v: f64) {
        match id {
            ParamId::Rho0 => self.rho0 = v,
            ParamId::Sigma2 => self.sigma2 = v,
            ParamId::Zeta => self.zeta = v,
            ParamId::Rho1 => self.rho1 = v,
            ParamId::Gamma => self.gamma_aniso = v,
            ParamId::Alpha => self.alpha = v,
            ParamId::MuX => self.mu[0] = v,
            ParamId::MuY => self.mu[1] = v,
            ParamId::Tau2(c) => self.tau2[c] = v,
            ParamId::Beta(c) => self.beta[c] = v,
        }
    }

    pub fn has(&self, id: ParamId) -> bool {
        match id {
            ParamId::Tau2(c) => c < self.tau2.len(),
            ParamId::Beta(c) => c < self.beta.len(),
            _ => true,
        }
    }

    /// Every coordinate, signal parameters first.
    pub fn all_ids(&self) -> Vec<ParamId> {
        let mut ids = ParamId::SIGNAL.to_vec();
        ids.extend((0..self.tau2.len()).map(ParamId::Tau2));
        ids.extend((0..self.beta.len()).map(ParamId::Beta));
        ids
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rho0", self.rho0),
            ("sigma2", self.sigma2),
            ("zeta", self.zeta),
            ("rho1", self.rho1),
            ("gamma_aniso", self.gamma_aniso),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=std::f64::consts::FRAC_PI_2).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("alpha must lie in [0, pi/2], got {}", self.alpha)));
        }
        if self.tau2.is_empty() {
            return Err(Error::InvalidParameter("at least one noise class is required".into()));
        }
        for (c, &v) in self.tau2.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("tau2_{} must be positive, got {v}", c + 1)));
            }
        }
        if self.mu.iter().chain(&self.beta).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("drift and bias must be finite".into()));
        }
        Ok(())
    }
}

/// Box constraints on the parameter coordinates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterSpace {
    pub bounds: BTreeMap<ParamId, [f64; 2]>,
}

impl ParameterSpace {
    /// A generous box around typical values; unbounded coordinates get `±1e6`.
    pub fn default_for(p: &ModelParams) -> Self {
        let mut bounds = BTreeMap::new();
        for id in p.all_ids() {
            let b = match id {
                ParamId::Rho0 | ParamId::Rho1 => [1e-3, 5.0],
                ParamId::Sigma2 => [1e-4, 10.0],
                ParamId::Zeta => [1e-3, 10.0],
                ParamId::Gamma => [0.05, 20.0],
                ParamId::Alpha => [0.0, std::f64::consts::FRAC_PI_2],
                ParamId::MuX | ParamId::MuY => [-5.0, 5.0],
                ParamId::Tau2(_) => [1e-5, 10.0],
                ParamId::Beta(_) => [-1e6, 1e6],
            };
            bounds.insert(id, b);
        }
        ParameterSpace { bounds }
    }

    pub fn contains(&self, id: ParamId, v: f64) -> bool {
        match self.bounds.get(&id) {
            Some(&[lo, hi]) => v >= lo && v <= hi,
            None => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (id, [lo, hi]) in &self.bounds {
            if !(lo < hi) {
                return Err(Error::Config(format!("bounds for {id} need lower < upper")));
            }
            let strictly_positive = matches!(
                id,
                ParamId::Rho0 | ParamId::Sigma2 | ParamId::Zeta | ParamId::Rho1 | ParamId::Gamma | ParamId::Tau2(_)
            );
            if strictly_positive && *lo <= 0.0 {
                return Err(Error::Config(format!("lower bound for {id} must be positive")));
            }
            if *id == ParamId::Alpha && (*lo < 0.0 || *hi > std::f64::consts::FRAC_PI_2) {
                return Err(Error::Config("alpha bounds must lie in [0, pi/2]".into()));
            }
        }
        Ok(())
    }
}
