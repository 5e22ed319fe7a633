use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_3, FRAC_PI_4};

use super::config::{ExperimentConfig, Scenario, SensorConfig};
use crate::optimizer::{BoundaryMode, Family, LearningSchedule, ProjectionMode};
use crate::signal_sim::ParameterSchedule;
use crate::spectral_model::{BField, MSpec, ModelParams, ParamId, ParameterSpace, TruncationSpec};
use crate::{Error, Result};

pub const PRESETS: [&str; 6] = ["sim1a", "sim1b", "sim2", "sim3", "sim4", "sim5"];

const SENSOR_RADIUS: f64 = 0.05;

fn scaled(pts: &[(f64, f64)], s: f64) -> Vec<[f64; 2]> {
    pts.iter().map(|&(x, y)| [x / s, y / s]).collect()
}

/// True parameters of the first simulation.
pub fn sim1_truth() -> ModelParams {
    ModelParams {
        rho0: 0.5,
        sigma2: 0.2,
        zeta: 0.5,
        rho1: 0.1,
        gamma_aniso: 2.0,
        alpha: FRAC_PI_4,
        mu: [0.3, -0.3],
        tau2: vec![0.01],
        beta: vec![],
    }
}

fn sim1_initial() -> ModelParams {
    ModelParams {
        rho0: 0.25,
        sigma2: 0.8,
        zeta: 0.1,
        rho1: 0.2,
        gamma_aniso: 1.2,
        alpha: FRAC_PI_3,
        mu: [0.1, -0.15],
        tau2: vec![0.1],
        beta: vec![],
    }
}

fn sensors(positions: Vec<[f64; 2]>, movable: Vec<bool>) -> SensorConfig {
    let n = positions.len();
    SensorConfig { positions, radius: SENSOR_RADIUS, noise_class: vec![1; n], bias_class: vec![0; n], movable }
}

fn all_scenarios() -> Vec<Scenario> {
    vec![
        Scenario::Joint,
        Scenario::ParameterOnly,
        Scenario::PlacementOnly,
        Scenario::Oracle,
        Scenario::InitialPlacement,
    ]
}

fn schedules(active: &[ParamId], f: impl Fn(ParamId) -> LearningSchedule) -> BTreeMap<ParamId, LearningSchedule> {
    active.iter().map(|&id| (id, f(id))).collect()
}

fn sim1(reverse: bool) -> ExperimentConfig {
    let truth = sim1_truth();
    let initial = sim1_initial();
    let active = initial.all_ids();
    let targets = scaled(
        &[(0.0, 7.0), (6.0, 8.0), (4.0, 4.0), (9.0, 6.0), (1.0, 1.0), (7.0, 10.0), (10.0, 11.0), (3.0, 10.0)],
        12.0,
    );
    let o0 = scaled(
        &[(10.1, 7.8), (4.1, 6.01), (5.2, 3.75), (7.2, 4.02), (3.2, 3.1), (6.1, 2.1), (1.01, 2.8), (3.0, 1.0)],
        12.0,
    );
    let (eps_theta, eps_o) = if reverse { (0.55, 0.75) } else { (0.75, 0.55) };
    let theta_schedules = schedules(&active, |id| LearningSchedule::power(sim1_gamma0(id), eps_theta));
    ExperimentConfig {
        preset: if reverse { "sim1b" } else { "sim1a" }.into(),
        seed: 1,
        trials: 1,
        dt: 0.05,
        steps: 20_000,
        stride: 20,
        mse_window: 2_000,
        truncation: TruncationSpec::TargetN(21),
        include_constant: true,
        space: ParameterSpace::default_for(&initial),
        truth: ParameterSchedule::constant(truth),
        initial,
        active,
        sensors: sensors(o0, vec![true; 8]),
        targets: targets.clone(),
        m: MSpec::TargetPoints(targets),
        b_field: None,
        theta_schedules,
        placement_schedules: vec![LearningSchedule::power(SIM1_PLACEMENT_GAMMA0, eps_o)],
        slow: if reverse { Family::Placement } else { Family::Theta },
        projection: ProjectionMode::Coordinatewise,
        boundary: BoundaryMode::Wrap,
        scenarios: all_scenarios(),
    }
}

// The log-likelihood gradient in τ² scales like 1/τ⁴, hence the small rate.
fn sim1_gamma0(id: ParamId) -> f64 {
    match id {
        ParamId::Rho0 => 0.5,
        ParamId::Sigma2 => 1.0,
        ParamId::Zeta => 2.0,
        ParamId::Tau2(_) => 2e-5,
        _ => 0.5,
    }
}

// Tr[M S] moves by about 1e-6 across the domain, so placement needs large rates.
const SIM1_PLACEMENT_GAMMA0: f64 = 1e4;

fn sim2() -> ExperimentConfig {
    let mut truth = sim1_truth();
    truth.rho0 = 0.3;
    let mut initial = truth.clone();
    initial.rho0 = 0.01;
    let active = vec![ParamId::Rho0];
    let mut pos = scaled(&[(11.0, 2.0), (1.0, 10.0), (1.0, 1.0), (11.0, 11.0)], 12.0);
    pos.push([0.2, 0.6]);
    ExperimentConfig {
        preset: "sim2".into(),
        seed: 2,
        trials: 1,
        dt: 0.05,
        steps: 20_000,
        stride: 20,
        mse_window: 2_000,
        truncation: TruncationSpec::TargetN(21),
        include_constant: true,
        space: ParameterSpace::default_for(&initial),
        truth: ParameterSchedule::constant(truth),
        initial,
        active: active.clone(),
        sensors: sensors(pos, vec![false, false, false, false, true]),
        targets: vec![],
        m: MSpec::Identity,
        b_field: None,
        theta_schedules: schedules(&active, |_| LearningSchedule::power(0.1, 0.55)),
        placement_schedules: vec![LearningSchedule::power(0.1, 0.51)],
        slow: Family::Theta,
        projection: ProjectionMode::Coordinatewise,
        boundary: BoundaryMode::Wrap,
        scenarios: vec![Scenario::Joint],
    }
}

/// Piecewise-constant truth of the third simulation.
pub fn sim3_truth() -> ParameterSchedule {
    let base = sim1_truth();
    let at = |t: f64| -> ModelParams {
        let mut p = base.clone();
        if t >= 16.0 {
            p.rho0 = 0.25;
        }
        if t >= 10.0 {
            p.sigma2 = 0.6;
        }
        if t >= 27.0 {
            p.zeta = 0.2;
        }
        if t >= 22.0 {
            p.rho1 = 0.2;
        }
        if t >= 29.0 {
            p.gamma_aniso = 1.2;
        }
        if t >= 25.0 {
            p.alpha = 1.10;
        }
        if t >= 13.0 {
            p.mu[0] = 0.09;
        }
        if t >= 19.0 {
            p.mu[1] = -0.1;
        }
        p.tau2[0] = match t {
            t if t >= 19.0 => 0.02,
            t if t >= 15.0 => 0.10,
            t if t >= 7.0 => 0.03,
            t if t >= 4.0 => 0.05,
            _ => 0.01,
        };
        p
    };
    let times = [0.0, 4.0, 7.0, 10.0, 13.0, 15.0, 16.0, 19.0, 22.0, 25.0, 27.0, 29.0];
    ParameterSchedule { knots: times.iter().map(|&t| (t, at(t))).collect() }
}

fn sim3() -> ExperimentConfig {
    let initial = ModelParams {
        rho0: 0.25,
        sigma2: 0.5,
        zeta: 0.3,
        rho1: 0.2,
        gamma_aniso: 1.5,
        alpha: FRAC_PI_3,
        mu: [0.1, -0.15],
        tau2: vec![0.1],
        beta: vec![],
    };
    let active = initial.all_ids();
    let mut pos: Vec<[f64; 2]> =
        (0..16).map(|i| [(2 * (i / 4) + 1) as f64 / 8.0, (2 * (i % 4) + 1) as f64 / 8.0]).collect();
    pos.extend(scaled(&[(3.4, 3.4), (3.4, 4.1), (4.1, 3.4), (4.1, 4.1)], 6.0));
    let mut movable = vec![false; 16];
    movable.extend([true; 4]);
    let targets = scaled(&[(1.0, 1.0), (2.0, 5.0), (5.0, 3.0), (4.0, 1.0)], 6.0);
    ExperimentConfig {
        preset: "sim3".into(),
        seed: 3,
        trials: 1,
        dt: 0.002,
        steps: 20_000,
        stride: 20,
        mse_window: 500,
        truncation: TruncationSpec::TargetN(21),
        include_constant: true,
        space: ParameterSpace::default_for(&initial),
        truth: sim3_truth(),
        initial,
        active: active.clone(),
        sensors: sensors(pos, movable),
        targets: targets.clone(),
        m: MSpec::TargetPoints(targets),
        b_field: None,
        theta_schedules: schedules(&active, |id| match id {
            ParamId::Tau2(_) => LearningSchedule::constant(5e-6),
            _ => LearningSchedule::constant(0.5),
        }),
        placement_schedules: vec![LearningSchedule::power(1e4, 0.55)],
        slow: Family::Placement,
        projection: ProjectionMode::Coordinatewise,
        boundary: BoundaryMode::Wrap,
        scenarios: vec![Scenario::Joint],
    }
}

fn sim4() -> ExperimentConfig {
    let mut truth = sim1_truth();
    truth.tau2 = vec![0.01, 0.03, 0.10];
    truth.beta = vec![0.0, 2.0];
    let mut initial = truth.clone();
    initial.tau2 = vec![0.10, 0.30, 0.20];
    initial.beta = vec![0.9, 1.1];
    let active = vec![ParamId::Tau2(0), ParamId::Tau2(1), ParamId::Tau2(2), ParamId::Beta(0), ParamId::Beta(1)];
    let targets = scaled(&[(2.0, 3.0), (6.0, 9.0), (9.0, 4.0)], 12.0);
    let pos = scaled(&[(4.0, 2.0), (4.0, 6.0), (4.0, 10.0), (8.0, 2.0), (8.0, 6.0), (8.0, 10.0)], 12.0);
    let mut space = ParameterSpace::default_for(&initial);
    for b in 0..2 {
        space.bounds.insert(ParamId::Beta(b), [-10.0, 10.0]);
    }
    ExperimentConfig {
        preset: "sim4".into(),
        seed: 4,
        trials: 1,
        dt: 0.05,
        steps: 20_000,
        stride: 20,
        mse_window: 2_000,
        truncation: TruncationSpec::TargetN(21),
        include_constant: true,
        space,
        truth: ParameterSchedule::constant(truth),
        initial,
        active: active.clone(),
        sensors: SensorConfig {
            positions: pos,
            radius: SENSOR_RADIUS,
            noise_class: vec![1, 2, 3, 1, 2, 3],
            bias_class: vec![1, 2, 1, 2, 1, 2],
            movable: vec![true; 6],
        },
        targets: vec![],
        m: MSpec::TargetPoints(targets),
        b_field: None,
        // Per-class τ² rates follow the 1/τ⁴ scale of their gradients.
        theta_schedules: schedules(&active, |id| match id {
            ParamId::Tau2(0) => LearningSchedule::power(2e-5, 0.55),
            ParamId::Tau2(1) => LearningSchedule::power(1e-4, 0.55),
            ParamId::Tau2(_) => LearningSchedule::power(5e-4, 0.55),
            _ => LearningSchedule::power(0.05, 0.55),
        }),
        placement_schedules: vec![LearningSchedule::power(1e4, 0.75)],
        slow: Family::Placement,
        projection: ProjectionMode::Coordinatewise,
        boundary: BoundaryMode::Wrap,
        scenarios: vec![Scenario::Joint],
    }
}

fn sim5() -> ExperimentConfig {
    let truth = ModelParams { mu: [0.1, -0.1], ..sim1_truth() };
    let initial = ModelParams { mu: [0.39, -0.41], tau2: vec![0.5], ..sim1_truth() };
    let active = vec![ParamId::MuX, ParamId::MuY, ParamId::Tau2(0)];
    let mut pos = scaled(
        &[
            (2.0, 2.0),
            (2.0, 6.0),
            (2.0, 10.0),
            (6.0, 2.0),
            (6.0, 6.0),
            (6.0, 10.0),
            (10.0, 2.0),
            (10.0, 6.0),
            (10.0, 10.0),
        ],
        12.0,
    );
    pos.push([4.0 / 12.0, 4.0 / 12.0]);
    let mut movable = vec![false; 9];
    movable.push(true);
    ExperimentConfig {
        preset: "sim5".into(),
        seed: 5,
        trials: 40,
        dt: 0.05,
        steps: 10_000,
        stride: 20,
        mse_window: 2_000,
        truncation: TruncationSpec::TargetN(21),
        include_constant: true,
        space: ParameterSpace::default_for(&initial),
        truth: ParameterSchedule::constant(truth),
        initial,
        active: active.clone(),
        sensors: sensors(pos, movable),
        targets: vec![],
        m: MSpec::Identity,
        b_field: Some(BField::SechBump { centre: [5.0 / 12.0, 5.0 / 12.0], width: 0.2 }),
        theta_schedules: schedules(&active, |id| match id {
            ParamId::Tau2(_) => LearningSchedule::power(2e-4, 0.75),
            _ => LearningSchedule::power(2.0, 0.75),
        }),
        placement_schedules: vec![LearningSchedule::power(1e4, 0.55)],
        slow: Family::Theta,
        projection: ProjectionMode::Coordinatewise,
        boundary: BoundaryMode::Wrap,
        scenarios: vec![Scenario::Joint],
    }
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "sim1a" => Ok(sim1(false)),
        "sim1b" => Ok(sim1(true)),
        "sim2" => Ok(sim2()),
        "sim3" => Ok(sim3()),
        "sim4" => Ok(sim4()),
        "sim5" => Ok(sim5()),
        other => Err(Error::Config(format!("unknown preset `{other}` (expected one of {})", PRESETS.join(", ")))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::schedule_validate;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            preset(name).unwrap().validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(preset("sim9").is_err());
    }

    #[test]
    fn sim1a_matches_the_published_lists() {
        let cfg = preset("sim1a").unwrap();
        let t = &cfg.truth.knots[0].1;
        assert_eq!((t.rho0, t.sigma2, t.zeta, t.rho1, t.gamma_aniso), (0.5, 0.2, 0.5, 0.1, 2.0));
        assert_eq!((t.alpha, t.mu, t.tau2[0]), (FRAC_PI_4, [0.3, -0.3], 0.01));
        let i = &cfg.initial;
        assert_eq!((i.rho0, i.sigma2, i.zeta, i.rho1, i.gamma_aniso), (0.25, 0.8, 0.1, 0.2, 1.2));
        assert_eq!((i.alpha, i.mu, i.tau2[0]), (FRAC_PI_3, [0.1, -0.15], 0.1));
        assert_eq!(cfg.sensors.positions[0], [10.1 / 12.0, 7.8 / 12.0]);
        assert_eq!(cfg.targets[6], [10.0 / 12.0, 11.0 / 12.0]);
        assert_eq!(cfg.sensors.positions.len(), 8);
        assert_eq!(cfg.active.len(), 9);
    }

    #[test]
    fn sim2_matches_the_published_rates() {
        let cfg = preset("sim2").unwrap();
        assert_eq!(cfg.truth.knots[0].1.rho0, 0.3);
        assert_eq!(cfg.initial.rho0, 0.01);
        assert_eq!(cfg.sensors.positions.len(), 5);
        assert_eq!(cfg.m, MSpec::Identity);
        assert_eq!(cfg.theta_schedules[&ParamId::Rho0], LearningSchedule::power(0.1, 0.55));
        assert_eq!(cfg.placement_schedules[0], LearningSchedule::power(0.1, 0.51));
    }

    #[test]
    fn timescale_orderings() {
        for (name, ok) in [("sim1a", true), ("sim1b", true), ("sim2", true), ("sim4", true), ("sim5", true)] {
            let cfg = preset(name).unwrap();
            let rep = schedule_validate(
                &cfg.theta_schedule_list().unwrap(),
                &cfg.placement_schedule_list().unwrap(),
                cfg.slow,
            );
            assert_eq!(rep.all_passed(), ok, "{name}: {rep:?}");
        }
        let cfg = preset("sim3").unwrap();
        let rep =
            schedule_validate(&cfg.theta_schedule_list().unwrap(), &cfg.placement_schedule_list().unwrap(), cfg.slow);
        assert!(!rep.warnings.is_empty());
    }

    #[test]
    fn sim3_changepoints() {
        let s = sim3_truth();
        let at = |t: f64| crate::signal_sim::schedule_at(&s, t).clone();
        assert_eq!(at(15.9).rho0, 0.5);
        assert_eq!(at(16.0).rho0, 0.25);
        assert_eq!(at(9.99).sigma2, 0.2);
        assert_eq!(at(10.0).sigma2, 0.6);
        assert_eq!(at(3.0).tau2[0], 0.01);
        assert_eq!(at(5.0).tau2[0], 0.05);
        assert_eq!(at(8.0).tau2[0], 0.03);
        assert_eq!(at(17.0).tau2[0], 0.10);
        assert_eq!(at(39.0).tau2[0], 0.02);
        assert_eq!(at(39.0).alpha, 1.10);
    }
}
