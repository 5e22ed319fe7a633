//! Two-timescale stochastic gradient recursion and step-size schedules.

use serde::{Deserialize, Serialize};

use crate::spectral_model::{wrap01, ModelParams, ParamId, ParameterSpace, SensorArray};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Power,
    Constant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSchedule {
    pub kind: ScheduleKind,
    pub gamma0: f64,
    #[serde(default = "one")]
    pub epsilon: f64,
    #[serde(default = "one")]
    pub t0: f64,
}

fn one() -> f64 {
    1.0
}

impl LearningSchedule {
    pub fn power(gamma0: f64, epsilon: f64) -> Self {
        LearningSchedule { kind: ScheduleKind::Power, gamma0, epsilon, t0: 1.0 }
    }

    pub fn constant(gamma0: f64) -> Self {
        LearningSchedule { kind: ScheduleKind::Constant, gamma0, epsilon: 1.0, t0: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 >= 0.0) {
            return Err(Error::Config(format!("gamma0 must be non-negative, got {}", self.gamma0)));
        }
        if self.kind == ScheduleKind::Power && !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if !(self.t0 >= 1.0) {
            return Err(Error::Config(format!("t0 must be at least 1, got {}", self.t0)));
        }
        Ok(())
    }
}

pub fn schedule_eval(s: &LearningSchedule, t: f64) -> f64 {
    match s.kind {
        ScheduleKind::Constant => s.gamma0,
        ScheduleKind::Power => s.gamma0 * t.max(s.t0).powf(-s.epsilon),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Theta,
    Placement,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScheduleReport {
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
}

impl ScheduleReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self, prefix: &str) -> bool {
        self.checks.iter().any(|c| c.name.starts_with(prefix) && !c.passed)
    }
}

/// Analytic checks of the step-size conditions for power-law and constant rules.
pub fn schedule_validate(theta: &[LearningSchedule], o: &[LearningSchedule], slow: Family) -> ScheduleReport {
    let mut rep = ScheduleReport::default();
    let families = [("theta", theta), ("o", o)];
    for (fam, list) in families {
        for (i, s) in list.iter().enumerate() {
            let tag = format!("{fam}[{}]", i + 1);
            match s.kind {
                ScheduleKind::Constant => {
                    rep.checks.push(Check {
                        name: format!("integral_gamma_diverges {tag}"),
                        passed: true,
                        detail: "constant rate".into(),
                    });
                    rep.checks.push(Check {
                        name: format!("integral_gamma_sq_finite {tag}"),
                        passed: false,
                        detail: "constant rate has divergent integral of gamma^2".into(),
                    });
                    rep.checks.push(Check {
                        name: format!("r_condition {tag}"),
                        passed: false,
                        detail: "gamma^2 t^(1/2+2r) does not vanish".into(),
                    });
                    rep.warnings.push(format!("{tag}: tracking mode, A.1 violated (constant learning rate)"));
                }
                ScheduleKind::Power => {
                    let e = s.epsilon;
                    rep.checks.push(Check {
                        name: format!("integral_gamma_diverges {tag}"),
                        passed: e <= 1.0,
                        detail: format!("epsilon = {e}"),
                    });
                    rep.checks.push(Check {
                        name: format!("integral_gamma_sq_finite {tag}"),
                        passed: e > 0.5,
                        detail: format!("2 epsilon = {}", 2.0 * e),
                    });
                    rep.checks.push(Check {
                        name: format!("r_condition {tag}"),
                        passed: e > 0.25,
                        detail: format!("r exists iff epsilon > 1/4, epsilon = {e}"),
                    });
                }
            }
            rep.checks.push(Check {
                name: format!("derivative_integrable {tag}"),
                passed: true,
                detail: "monotone rule".into(),
            });
        }
    }
    let (slow_list, fast_list) = match slow {
        Family::Theta => (theta, o),
        Family::Placement => (o, theta),
    };
    for (i, s) in slow_list.iter().enumerate() {
        for (j, f) in fast_list.iter().enumerate() {
            let passed = s.kind == ScheduleKind::Power
                && (f.kind == ScheduleKind::Constant || (f.kind == ScheduleKind::Power && s.epsilon > f.epsilon));
            rep.checks.push(Check {
                name: format!("timescale_ratio slow[{}]/fast[{}]", i + 1, j + 1),
                passed,
                detail: format!("slow {:?} eps {}, fast {:?} eps {}", s.kind, s.epsilon, f.kind, f.epsilon),
            });
        }
    }
    rep
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    /// A coordinate that would leave the box keeps its value for that step.
    #[default]
    Coordinatewise,
    /// Any violation freezes the whole parameter update for that step.
    Whole,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    #[default]
    Wrap,
    Freeze,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterateState {
    pub t: f64,
    pub theta: ModelParams,
    pub sensors: SensorArray,
    pub last_g_theta: Vec<f64>,
    pub last_g_o: Vec<f64>,
}

impl IterateState {
    pub fn new(theta: ModelParams, sensors: SensorArray) -> Self {
        IterateState { t: 0.0, theta, sensors, last_g_theta: Vec::new(), last_g_o: Vec::new() }
    }
}

/// One step of the coupled recursion.
///
/// `g_theta` and `g_o` are increments over the step (they already carry the
/// factor `dt`); `active` and `movable` give their coordinate order.
#[allow(clippy::too_many_arguments)]
pub fn two_timescale_step(
    it: &IterateState,
    g_theta: &[f64],
    g_o: &[f64],
    active: &[ParamId],
    movable: &[(usize, usize)],
    theta_sched: &[LearningSchedule],
    o_sched: &[LearningSchedule],
    space: &ParameterSpace,
    dt: f64,
    projection: ProjectionMode,
    boundary: BoundaryMode,
) -> Result<IterateState> {
    for (j, g) in g_theta.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", active[j])));
        }
    }
    for (c, g) in g_o.iter().enumerate() {
        if !g.is_finite() {
            let (i, ax) = movable[c];
            return Err(Error::NonFinite(format!("placement gradient of sensor {} {}", i + 1, ["x", "y"][ax])));
        }
    }
    let mut next = it.clone();
    let proposals: Vec<f64> = active
        .iter()
        .enumerate()
        .map(|(j, &id)| it.theta.get(id) + schedule_eval(&theta_sched[j], it.t) * g_theta[j])
        .collect();
    let inside: Vec<bool> = active.iter().zip(&proposals).map(|(&id, &v)| space.contains(id, v)).collect();
    let apply_all = inside.iter().all(|&b| b);
    for (j, &id) in active.iter().enumerate() {
        let take = match projection {
            ProjectionMode::Coordinatewise => inside[j],
            ProjectionMode::Whole => apply_all,
        };
        if take {
            next.theta.set(id, proposals[j]);
        }
    }
    for (c, &(i, ax)) in movable.iter().enumerate() {
        let v = it.sensors.positions[i][ax] - schedule_eval(&o_sched[c], it.t) * g_o[c];
        next.sensors.positions[i][ax] = match boundary {
            BoundaryMode::Wrap => wrap01(v),
            BoundaryMode::Freeze if (0.0..1.0).contains(&v) => v,
            BoundaryMode::Freeze => it.sensors.positions[i][ax],
        };
    }
    next.t = it.t + dt;
    next.last_g_theta = g_theta.to_vec();
    next.last_g_o = g_o.to_vec();
    Ok(next)
}
