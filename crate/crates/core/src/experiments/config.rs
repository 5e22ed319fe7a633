use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::optimizer::{BoundaryMode, Family, LearningSchedule, ProjectionMode};
use crate::signal_sim::ParameterSchedule;
use crate::spectral_model::{
    build_truncation, BField, MSpec, ModelParams, ParamId, ParameterSpace, SensorArray, TruncationSpec, WaveNumberSet,
};
use crate::{Error, Result};

/// Sensor block of a config file. Class indices are one-based; a bias class
/// of 0 means no bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub positions: Vec<[f64; 2]>,
    pub radius: f64,
    pub noise_class: Vec<usize>,
    pub bias_class: Vec<usize>,
    pub movable: Vec<bool>,
}

impl SensorConfig {
    pub fn to_array(&self) -> Result<SensorArray> {
        let n = self.positions.len();
        for (name, len) in [
            ("noise_class", self.noise_class.len()),
            ("bias_class", self.bias_class.len()),
            ("movable", self.movable.len()),
        ] {
            if len != n {
                return Err(Error::Config(format!("sensors.{name} has {len} entries but there are {n} positions")));
            }
        }
        if self.noise_class.contains(&0) {
            return Err(Error::Config("sensors.noise_class entries are one-based".into()));
        }
        Ok(SensorArray {
            positions: self.positions.iter().map(|&p| crate::spectral_model::wrap_point(p)).collect(),
            radius: self.radius,
            noise_class: self.noise_class.iter().map(|c| c - 1).collect(),
            bias_class: self.bias_class.iter().map(|&b| (b > 0).then(|| b - 1)).collect(),
            movable: self.movable.clone(),
        })
    }

    pub fn from_array(s: &SensorArray) -> Self {
        SensorConfig {
            positions: s.positions.clone(),
            radius: s.radius,
            noise_class: s.noise_class.iter().map(|c| c + 1).collect(),
            bias_class: s.bias_class.iter().map(|b| b.map_or(0, |b| b + 1)).collect(),
            movable: s.movable.clone(),
        }
    }
}

/// Which families learn in a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Parameters and placement both learn.
    Joint,
    /// Placement frozen at its initial value.
    ParameterOnly,
    /// Parameters frozen at their initial value.
    PlacementOnly,
    /// True parameters, movable sensors at the target locations, no learning.
    Oracle,
    /// True parameters, movable sensors at their initial locations, no learning.
    InitialPlacement,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Joint => "joint",
            Scenario::ParameterOnly => "parameter_only",
            Scenario::PlacementOnly => "placement_only",
            Scenario::Oracle => "oracle",
            Scenario::InitialPlacement => "initial_placement",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: String,
    pub seed: u64,
    pub trials: usize,
    pub dt: f64,
    pub steps: usize,
    pub stride: usize,
    /// Moving-average window for the MSE summary, in steps.
    pub mse_window: usize,
    pub truncation: TruncationSpec,
    pub include_constant: bool,
    pub truth: ParameterSchedule,
    pub initial: ModelParams,
    pub active: Vec<ParamId>,
    pub space: ParameterSpace,
    pub sensors: SensorConfig,
    /// Locations the movable sensors should reach (may be empty).
    pub targets: Vec<[f64; 2]>,
    pub m: MSpec,
    pub b_field: Option<BField>,
    pub theta_schedules: BTreeMap<ParamId, LearningSchedule>,
    /// One schedule per movable sensor, or a single schedule shared by all.
    pub placement_schedules: Vec<LearningSchedule>,
    pub slow: Family,
    pub projection: ProjectionMode,
    pub boundary: BoundaryMode,
    pub scenarios: Vec<Scenario>,
}

impl ExperimentConfig {
    pub fn wavenumbers(&self) -> Result<WaveNumberSet> {
        build_truncation(self.truncation, self.include_constant)
    }

    pub fn sensor_array(&self) -> Result<SensorArray> {
        self.sensors.to_array()
    }

    /// Per-coordinate schedules in the order of `active`.
    pub fn theta_schedule_list(&self) -> Result<Vec<LearningSchedule>> {
        self.active
            .iter()
            .map(|id| {
                self.theta_schedules
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("theta_schedules has no entry for active parameter `{id}`")))
            })
            .collect()
    }

    /// Per-coordinate schedules in the order of the movable coordinates.
    pub fn placement_schedule_list(&self) -> Result<Vec<LearningSchedule>> {
        let n_mov = self.sensors.movable.iter().filter(|&&m| m).count();
        let per_sensor: Vec<LearningSchedule> = match self.placement_schedules.len() {
            0 if n_mov == 0 => Vec::new(),
            1 => vec![self.placement_schedules[0].clone(); n_mov],
            k if k == n_mov => self.placement_schedules.clone(),
            k => {
                return Err(Error::Config(format!(
                    "placement_schedules has {k} entries but there are {n_mov} movable sensors"
                )))
            }
        };
        Ok(per_sensor.into_iter().flat_map(|s| [s.clone(), s]).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.steps == 0 || self.trials == 0 || self.stride == 0 {
            return Err(Error::Config("steps, trials and stride must be positive".into()));
        }
        self.truth.validate()?;
        for (t, _) in &self.truth.knots {
            let k = t / self.dt;
            if (k - k.round()).abs() > 1e-6 {
                return Err(Error::Config(format!("truth knot at t = {t} is not on the dt grid")));
            }
        }
        self.initial.validate()?;
        self.space.validate()?;
        for &id in &self.active {
            if !self.initial.has(id) {
                return Err(Error::Config(format!("active parameter `{id}` is not present in `initial`")));
            }
            if !self.space.contains(id, self.initial.get(id)) {
                return Err(Error::Config(format!("initial value of `{id}` lies outside `space`")));
            }
        }
        let s = self.sensor_array()?;
        s.validate(self.initial.tau2.len(), self.initial.beta.len())?;
        for (_, p) in &self.truth.knots {
            s.validate(p.tau2.len(), p.beta.len())?;
        }
        let ths = self.theta_schedule_list()?;
        let ps = self.placement_schedule_list()?;
        for sch in ths.iter().chain(&ps) {
            sch.validate()?;
        }
        for id in self.theta_schedules.keys() {
            if !self.active.contains(id) {
                return Err(Error::Config(format!("theta_schedules.{id} refers to an inactive parameter")));
            }
        }
        self.wavenumbers()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
