use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, Scenario};
use super::mse::grid_gram;
use crate::kalman::{kb_step_full, FilterState};
use crate::objectives::{loglik_increment, rml_gradient_increment};
use crate::optimizer::{schedule_validate, two_timescale_step, IterateState, LearningSchedule, ScheduleReport};
use crate::signal_sim::{
    kernel_derivatives, make_kernel, observe, step_signal, ObservationRecord, SignalState, TransitionKernel,
};
use crate::spectral_model::{
    assemble_with_b, multiplication_operator, weighting_matrix, ModelParams, ParamId, SensorArray, SystemMatrices,
    WaveNumberSet,
};
use crate::tangent::{placement_gradient, tangent_step, TangentState};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub t: f64,
    pub theta: Vec<f64>,
    pub coords: Vec<f64>,
    pub loglik: f64,
    pub trace_obj: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogHeader {
    pub preset: String,
    pub scenario: Scenario,
    pub seed: u64,
    pub trial: usize,
    /// Names of the logged θ coordinates.
    pub theta_names: Vec<String>,
    /// Names of the logged sensor coordinates, e.g. `o3_x`.
    pub coord_names: Vec<String>,
    pub schedule_report: ScheduleReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub header: LogHeader,
    pub rows: Vec<LogRow>,
    /// Instantaneous grid MSE at every step.
    pub mse: Vec<f64>,
    pub final_theta: ModelParams,
    pub final_sensors: SensorArray,
    /// Summed literal log-likelihood over the run.
    pub loglik_total: f64,
}

impl TrajectoryLog {
    pub fn column_names(&self) -> Vec<String> {
        let mut v = vec!["step".to_string(), "t".to_string()];
        v.extend(self.header.theta_names.iter().cloned());
        v.extend(self.header.coord_names.iter().cloned());
        v.extend(["loglik", "trace_obj", "mse"].map(String::from));
        v
    }
}

/// Per-trial seed: trials draw from independent streams of the base seed.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn coord_names(s: &SensorArray) -> Vec<String> {
    s.movable_coords().iter().map(|&(i, ax)| format!("o{}_{}", i + 1, ["x", "y"][ax])).collect()
}

fn with_movable(s: &SensorArray, movable: bool) -> SensorArray {
    let mut out = s.clone();
    if !movable {
        out.movable.iter_mut().for_each(|m| *m = false);
    }
    out
}

/// Initial sensor layout for a scenario.
fn scenario_sensors(cfg: &ExperimentConfig, scenario: Scenario) -> Result<SensorArray> {
    let mut s = cfg.sensor_array()?;
    if scenario == Scenario::Oracle {
        let idx: Vec<usize> = (0..s.len()).filter(|&i| s.movable[i]).collect();
        if idx.len() != cfg.targets.len() {
            return Err(Error::Config(format!(
                "oracle scenario needs one target per movable sensor ({} targets, {} movable)",
                cfg.targets.len(),
                idx.len()
            )));
        }
        for (i, t) in idx.into_iter().zip(&cfg.targets) {
            s.positions[i] = crate::spectral_model::wrap_point(*t);
        }
    }
    Ok(s)
}

/// Shared, per-config precomputation.
pub struct RunContext {
    pub ks: WaveNumberSet,
    pub b: Option<DMatrix<f64>>,
    pub m: DMatrix<f64>,
    pub gram: DMatrix<f64>,
}

impl RunContext {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let ks = cfg.wavenumbers()?;
        let b = match &cfg.b_field {
            Some(f) => Some(multiplication_operator(&ks, &|x| f.eval(x))?),
            None => None,
        };
        let m = weighting_matrix(&cfg.m, &ks)?;
        let gram = grid_gram(&ks, 32);
        Ok(RunContext { ks, b, m, gram })
    }
}

pub fn schedule_report(cfg: &ExperimentConfig) -> Result<ScheduleReport> {
    Ok(schedule_validate(&cfg.theta_schedule_list()?, &cfg.placement_schedule_list()?, cfg.slow))
}

/// Run one trial of one scenario.
pub fn run_experiment(cfg: &ExperimentConfig, scenario: Scenario, trial: usize) -> Result<TrajectoryLog> {
    cfg.validate()?;
    let ctx = RunContext::new(cfg)?;
    run_with_context(cfg, &ctx, scenario, trial)
}

pub fn run_with_context(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    scenario: Scenario,
    trial: usize,
) -> Result<TrajectoryLog> {
    let dt = cfg.dt;
    let ks = &ctx.ks;
    let n = ks.n();
    let learn_theta = matches!(scenario, Scenario::Joint | Scenario::ParameterOnly) && !cfg.active.is_empty();
    let learn_o = matches!(scenario, Scenario::Joint | Scenario::PlacementOnly);
    let follow_truth = matches!(scenario, Scenario::Oracle | Scenario::InitialPlacement);

    let base_sensors = scenario_sensors(cfg, scenario)?;
    let sensors = with_movable(&base_sensors, learn_o);
    let learn_o = learn_o && sensors.n_movable() > 0;
    let active: Vec<ParamId> = if learn_theta { cfg.active.clone() } else { Vec::new() };
    let theta_sched: Vec<LearningSchedule> = if learn_theta { cfg.theta_schedule_list()? } else { Vec::new() };
    let o_sched: Vec<LearningSchedule> = if learn_o { cfg.placement_schedule_list()? } else { Vec::new() };
    let movable = sensors.movable_coords();

    let theta0 = if follow_truth { cfg.truth.knots[0].1.clone() } else { cfg.initial.clone() };
    let header = LogHeader {
        preset: cfg.preset.clone(),
        scenario,
        seed: cfg.seed,
        trial,
        theta_names: cfg.active.iter().map(|id| id.to_string()).collect(),
        coord_names: coord_names(&cfg.sensor_array()?),
        schedule_report: schedule_report(cfg)?,
    };
    let logged_coords = cfg.sensor_array()?.movable_coords();

    let mut rng = trial_rng(cfg.seed, trial);
    let mut it = IterateState::new(theta0, sensors);
    let mut sig = SignalState { t: 0.0, alpha: DVector::zeros(n) };
    let mut fs = FilterState::zeros(n);
    let mut ts = TangentState::zeros(n, active.len(), if learn_o { movable.len() } else { 0 });

    let mut truth_idx = usize::MAX;
    let mut truth_kernel: Option<TransitionKernel> = None;
    let mut truth_params = cfg.truth.knots[0].1.clone();
    let mut cached: Option<(ModelParams, Vec<[f64; 2]>, SystemMatrices, TransitionKernel)> = None;

    let mut rows = Vec::with_capacity(cfg.steps / cfg.stride + 2);
    let mut mse_all = Vec::with_capacity(cfg.steps);
    let mut loglik_total = 0.0;

    let diag = |step: usize, e: Error| -> Error {
        match e {
            Error::SingularInnovation { .. } => Error::SingularInnovation { step },
            Error::NonFinite(m) => Error::NonFinite(format!("{m} at step {step} (trial {trial}, {})", scenario.name())),
            Error::InvalidParameter(m) => {
                Error::InvalidParameter(format!("{m} at step {step} (trial {trial}, {})", scenario.name()))
            }
            other => other,
        }
    };

    for step in 0..cfg.steps {
        let t = step as f64 * dt;
        let idx = cfg.truth.index_at(t + 1e-9 * dt);
        if idx != truth_idx {
            truth_idx = idx;
            truth_params = cfg.truth.knots[idx].1.clone();
            let sys_t = assemble_with_b(&truth_params, &it.sensors, ks, ctx.b.clone(), ctx.m.clone(), &[])
                .map_err(|e| diag(step, e))?;
            truth_kernel = Some(make_kernel(&sys_t, dt).map_err(|e| diag(step, e))?);
            if follow_truth {
                it.theta = truth_params.clone();
            }
        }
        sig = step_signal(&sig, truth_kernel.as_ref().unwrap(), &mut rng);
        let sys_obs = assemble_with_b(&truth_params, &it.sensors, ks, None, DMatrix::zeros(0, 0), &[])
            .map_err(|e| diag(step, e))?;
        let z = observe(&sig, &sys_obs, dt, &mut rng);

        let reuse = matches!(&cached, Some((p, o, _, _)) if *p == it.theta && *o == it.sensors.positions);
        if !reuse {
            let sys = assemble_with_b(&it.theta, &it.sensors, ks, ctx.b.clone(), ctx.m.clone(), &active)
                .map_err(|e| diag(step, e))?;
            let kernel = make_kernel(&sys, dt).map_err(|e| diag(step, e))?;
            cached = Some((it.theta.clone(), it.sensors.positions.clone(), sys, kernel));
        }
        let (_, _, sys, kernel) = cached.as_ref().unwrap();

        let (fs_new, rec) = kb_step_full(&fs, sys, kernel, &z, step).map_err(|e| diag(step, e))?;
        let ll = loglik_increment(&rec.m_pred, &z.z, sys, dt);
        loglik_total += ll;

        let (g_theta, g_o) = if learn_theta || learn_o {
            let kder = kernel_derivatives(sys, dt);
            let (ts_new, pred) = tangent_step(&fs, &ts, sys, kernel, &kder, &rec);
            let g_theta = if learn_theta { rml_gradient_increment(&rec, &pred, sys, dt) } else { Vec::new() };
            let g_o: Vec<f64> = placement_gradient(&ts_new, &sys.m).into_iter().map(|g| g * dt).collect();
            ts = ts_new;
            (g_theta, g_o)
        } else {
            (Vec::new(), Vec::new())
        };
        fs = fs_new;

        let err = &sig.alpha - &fs.m;
        let mse = (err.transpose() * &ctx.gram * &err)[0];
        mse_all.push(mse);
        let trace_obj = ctx.m.component_mul(&fs.s).sum();

        let next = two_timescale_step(
            &it,
            &g_theta,
            &g_o,
            &active,
            &movable,
            &theta_sched,
            &o_sched,
            &cfg.space,
            dt,
            cfg.projection,
            cfg.boundary,
        )
        .map_err(|e| diag(step, e))?;
        it = next;
        if follow_truth {
            it.theta = truth_params.clone();
        }

        if step % cfg.stride == 0 || step + 1 == cfg.steps {
            rows.push(LogRow {
                step: step + 1,
                t: (step + 1) as f64 * dt,
                theta: cfg.active.iter().map(|&id| it.theta.get(id)).collect(),
                coords: logged_coords.iter().map(|&(i, ax)| it.sensors.positions[i][ax]).collect(),
                loglik: ll,
                trace_obj,
                mse,
            });
        }
    }

    Ok(TrajectoryLog { header, rows, mse: mse_all, final_theta: it.theta, final_sensors: it.sensors, loglik_total })
}

/// Truth-only simulation at the initial sensor layout, recorded every `stride` steps.
pub fn simulate_truth(cfg: &ExperimentConfig, trial: usize) -> Result<(Vec<SignalState>, Vec<ObservationRecord>)> {
    cfg.validate()?;
    let ctx = RunContext::new(cfg)?;
    let sensors = cfg.sensor_array()?;
    let mut rng = trial_rng(cfg.seed, trial);
    let mut sig = SignalState { t: 0.0, alpha: DVector::zeros(ctx.ks.n()) };
    let mut states = Vec::with_capacity(cfg.steps / cfg.stride + 2);
    let mut obs = Vec::with_capacity(cfg.steps / cfg.stride + 2);
    let mut current: Option<(usize, TransitionKernel, SystemMatrices)> = None;
    for step in 0..cfg.steps {
        let t = step as f64 * cfg.dt;
        let idx = cfg.truth.index_at(t + 1e-9 * cfg.dt);
        if current.as_ref().is_none_or(|c| c.0 != idx) {
            let p = &cfg.truth.knots[idx].1;
            let sys = assemble_with_b(p, &sensors, &ctx.ks, ctx.b.clone(), ctx.m.clone(), &[])?;
            current = Some((idx, make_kernel(&sys, cfg.dt)?, sys));
        }
        let (_, kernel, sys) = current.as_ref().unwrap();
        sig = step_signal(&sig, kernel, &mut rng);
        let z = observe(&sig, sys, cfg.dt, &mut rng);
        if step % cfg.stride == 0 || step + 1 == cfg.steps {
            states.push(sig.clone());
            obs.push(z);
        }
    }
    Ok((states, obs))
}

/// Run every trial of one scenario concurrently.
pub fn run_trials(cfg: &ExperimentConfig, scenario: Scenario) -> Result<Vec<TrajectoryLog>> {
    cfg.validate()?;
    let ctx = RunContext::new(cfg)?;
    (0..cfg.trials).into_par_iter().map(|k| run_with_context(cfg, &ctx, scenario, k)).collect()
}
