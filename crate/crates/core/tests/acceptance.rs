//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Select criteria by id: `cargo test --test acceptance -- 2 8`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use spde_rml::conditions::{
    build_joint_system, check_a_stable, check_detectable, check_joint_stable_and_stationary, check_stabilisable,
};
use spde_rml::experiments::{
    final_mse, gradient_check, heatmap_objective, preset, run_experiment, run_trials, sim3_truth, tracking_segments,
    ExperimentConfig, Scenario, TrajectoryLog, PLACEMENT_TOL, RML_TOL,
};
use spde_rml::kalman::{are_residual, covariance_step, kb_step_full, solve_are, FilterState};
use spde_rml::linalg::{frobenius, psd_factor, symmetrize};
use spde_rml::optimizer::{schedule_validate, Family, LearningSchedule};
use spde_rml::signal_sim::{make_kernel, observe, step_signal, SignalState};
use spde_rml::spectral_model::{
    assemble_system, torus_distance, MSpec, ModelParams, ParamId, SensorArray, SystemMatrices, WaveNumberSet,
};
use spde_rml::Result;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { passed, detail: detail.into() })
}

struct Criterion {
    id: &'static str,
    name: &'static str,
    budget: Duration,
    run: fn() -> Result<Outcome>,
}

const fn mins(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn main() {
    let criteria = [
        Criterion { id: "1", name: "gradient fidelity on sim1a", budget: mins(5), run: gradient_fidelity },
        Criterion { id: "2", name: "Riccati correctness", budget: mins(1), run: riccati },
        Criterion { id: "3", name: "stationary law of the joint system", budget: mins(5), run: stationary_law },
        Criterion { id: "4", name: "Simulation I reproduction", budget: mins(10), run: sim1_reproduction },
        Criterion { id: "5", name: "Simulation II structure", budget: mins(15), run: sim2_structure },
        Criterion { id: "6", name: "Simulation IV calibration", budget: mins(10), run: sim4_calibration },
        Criterion { id: "7", name: "Simulation V trial average", budget: mins(20), run: sim5_average },
        Criterion {
            id: "8",
            name: "filter calibration and innovation whiteness",
            budget: mins(5),
            run: filter_calibration,
        },
        Criterion { id: "9", name: "schedule validator", budget: mins(1), run: schedules },
        Criterion {
            id: "S1",
            name: "joint learning beats single-family baselines on sim1a",
            budget: mins(10),
            run: baseline_ordering,
        },
        Criterion { id: "S2", name: "Simulation III changepoint tracking", budget: mins(10), run: sim3_tracking },
    ];
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for c in &criteria {
        if !selected.is_empty() && !selected.iter().any(|s| s == c.id) {
            continue;
        }
        let started = Instant::now();
        let res = (c.run)();
        let took = started.elapsed();
        let (passed, detail) = match res {
            Ok(o) => (o.passed && took <= c.budget, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let over = if took > c.budget { format!("; over budget {:?}", c.budget) } else { String::new() };
        println!(
            "{} [{}] {} ({}) [{:.1} s{}]",
            if passed { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            took.as_secs_f64(),
            over
        );
        failures += usize::from(!passed);
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn gradient_fidelity() -> Result<Outcome> {
    let checks = gradient_check(&preset("sim1a")?, 60)?;
    let pick = |prefix: &str| checks.iter().filter(|c| c.name.starts_with(prefix)).collect::<Vec<_>>();
    let (rml, place) = (pick("rml_gradient"), pick("placement_gradient"));
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
    outcome(
        failed.is_empty() && !rml.is_empty() && !place.is_empty(),
        format!(
            "{} RML coordinates at tol {RML_TOL:e}, {} placement coordinates at tol {PLACEMENT_TOL:e}, {} checks total, failed {:?}",
            rml.len(),
            place.len(),
            checks.len(),
            failed
        ),
    )
}

/// `a = −1, q = 1, c = 1, r = 1` from a one-mode model holding only the constant.
fn scalar_system() -> Result<SystemMatrices> {
    let ks = WaveNumberSet { ks: vec![], include_constant: true };
    let mut th = preset("sim1a")?.truth.knots[0].1.clone();
    th.zeta = 1.0;
    th.tau2 = vec![1.0];
    th.sigma2 = (2.0 * std::f64::consts::PI).powi(2) * th.rho0.powi(-4);
    let s = SensorArray::simple(vec![[0.5, 0.5]], 0.05, false);
    assemble_system(&th, &s, &ks, None, &MSpec::Identity, &[])
}

fn sim1_system() -> Result<SystemMatrices> {
    let cfg = preset("sim1a")?;
    assemble_system(&cfg.truth.knots[0].1, &cfg.sensor_array()?, &cfg.wavenumbers()?, None, &cfg.m, &[])
}

/// Iterate the covariance recursion to its fixed point at each step size of a
/// shrinking cascade, warm-starting every stage from the previous one.
fn recursion_fixed_point(sys: &SystemMatrices, dts: &[f64]) -> Result<DMatrix<f64>> {
    let n = sys.n();
    let mut s = DMatrix::zeros(n, n);
    for &dt in dts {
        let k = make_kernel(sys, dt)?;
        for _ in 0..50_000_000 {
            let next = covariance_step(&s, sys, &k)?;
            let change = frobenius(&(&next - &s));
            s = next;
            if change < 1e-13 * dt {
                break;
            }
        }
    }
    Ok(s)
}

fn riccati() -> Result<Outcome> {
    let scalar = scalar_system()?;
    let exact = 2f64.sqrt() - 1.0;
    let s_scalar = solve_are(&scalar)?.s_inf[(0, 0)];
    let ok_scalar = (s_scalar - exact).abs() < 1e-10;

    let sys = sim1_system()?;
    let ss = solve_are(&sys)?;
    let resid = frobenius(&are_residual(&sys, &ss.s_inf));
    let ok_resid = resid < 1e-8;

    let dre = recursion_fixed_point(&scalar, &[1e-2, 1e-3, 1e-4, 1e-5, 1e-6])?;
    let dre_gap = (dre[(0, 0)] - exact).abs();
    let ok_dre = dre_gap < 1e-6;

    outcome(
        ok_scalar && ok_resid && ok_dre,
        format!(
            "scalar |S − (√2 − 1)| = {:.2e}; Sim I residual {resid:.2e}; scalar recursion at dt 1e-6 is {dre_gap:.2e} from the ARE",
            (s_scalar - exact).abs()
        ),
    )
}

/// Exact discretisation of `dX = Φ X dt + noise` with diffusion `W`, by Van Loan's block exponential.
fn van_loan(phi: &DMatrix<f64>, w: &DMatrix<f64>, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = phi.nrows();
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(&(-phi * dt));
    m.view_mut((0, d), (d, d)).copy_from(&(w * dt));
    m.view_mut((d, d), (d, d)).copy_from(&(phi.transpose() * dt));
    let e = m.exp();
    let phi_d = e.view((d, d), (d, d)).transpose();
    let mut q_d = &phi_d * e.view((0, d), (d, d));
    symmetrize(&mut q_d);
    (phi_d, q_d)
}

fn stationary_law() -> Result<Outcome> {
    let cfg = preset("sim1a")?;
    let truth = &cfg.truth.knots[0].1;
    let ks = cfg.wavenumbers()?;
    let mut sensors = cfg.sensor_array()?;
    sensors.movable = vec![false; sensors.len()];
    let sys = assemble_system(truth, &sensors, &ks, None, &cfg.m, &cfg.active)?;
    let ss = solve_are(&sys)?;
    let js = build_joint_system(&sys, &sys, &ss.s_inf)?;
    let (entry, k_inf) = check_joint_stable_and_stationary(&js);
    let Some(k_inf) = k_inf else {
        return outcome(false, format!("joint drift not stable: {}", entry.witness));
    };

    let dt = cfg.dt;
    let d = js.dim();
    let (phi_d, q_d) = van_loan(&js.phi, &js.diffusion(), dt);
    let l = psd_factor(&q_d);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (burn, steps, chunk) = (20_000usize, 1_000_000usize, 1000usize);
    let mut x = DVector::zeros(d);
    let mut acc = DMatrix::<f64>::zeros(d, d);
    let mut block = DMatrix::<f64>::zeros(d, chunk);
    let mut done = 0;
    while done < burn + steps {
        let xi = DMatrix::from_fn(d, chunk, |_, _| StandardNormal.sample(&mut rng));
        let noise = &l * xi;
        for j in 0..chunk {
            x = &phi_d * &x + noise.column(j);
            block.set_column(j, &x);
        }
        if done >= burn {
            acc.gemm(1.0, &block, &block.transpose(), 1.0);
        }
        done += chunk;
    }
    let k_mc = acc / steps as f64;
    let mc_err = frobenius(&(&k_mc - &k_inf)) / frobenius(&k_inf);
    let ok_mc = mc_err < 0.05;

    let a_stable = check_a_stable(&sys.a).passed == Some(true);
    let stab = check_stabilisable(&sys.a, &sys.b_qhalf()).passed == Some(true);
    let det = check_detectable(&sys.a, &sys.c).passed == Some(true);
    let ok_sim1 = a_stable && stab && det && entry.passed == Some(true);

    let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -2.0]));
    let counter = check_a_stable(&bad).passed == Some(false)
        && check_detectable(&bad, &DMatrix::from_row_slice(1, 2, &[0.0, 1.0])).passed == Some(false)
        && check_stabilisable(&bad, &DMatrix::from_column_slice(2, 1, &[0.0, 1.0])).passed == Some(false)
        && check_detectable(&bad, &DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).passed == Some(true);

    outcome(
        ok_mc && ok_sim1 && counter,
        format!(
            "d = {d}, Monte-Carlo vs Lyapunov relative Frobenius {mc_err:.4} over {steps} steps; sim1a stable {a_stable}, stabilisable {stab}, detectable {det}, joint {}; diag(1,−2) counterexamples rejected {counter}",
            entry.passed == Some(true)
        ),
    )
}

fn run_scenarios(cfg: &ExperimentConfig, scenarios: &[Scenario]) -> Result<Vec<TrajectoryLog>> {
    std::thread::scope(|s| {
        let handles: Vec<_> = scenarios.iter().map(|&sc| s.spawn(move || run_experiment(cfg, sc, 0))).collect();
        handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
    })
}

fn within_band(est: f64, truth: f64) -> bool {
    (est - truth).abs() <= (0.2 * truth.abs()).max(0.05)
}

fn movable_positions(log: &TrajectoryLog) -> Vec<[f64; 2]> {
    let s = &log.final_sensors;
    (0..s.positions.len()).filter(|&i| s.movable[i]).map(|i| s.positions[i]).collect()
}

fn sim1_reproduction() -> Result<Outcome> {
    let cfg = preset("sim1a")?;
    let logs = run_scenarios(&cfg, &[Scenario::Joint, Scenario::Oracle])?;
    let (joint, oracle) = (&logs[0], &logs[1]);
    let truth = &cfg.truth.knots[0].1;
    let mut off = Vec::new();
    for &id in &cfg.active {
        let (est, tv) = (joint.final_theta.get(id), truth.get(id));
        if !within_band(est, tv) {
            off.push(format!("{id} {est:.3} vs {tv}"));
        }
    }
    let dists: Vec<f64> = movable_positions(joint)
        .iter()
        .map(|p| cfg.targets.iter().map(|t| torus_distance(*p, *t)).fold(f64::INFINITY, f64::min))
        .collect();
    let far = dists.iter().filter(|&&d| d > 0.05).count();
    let (mj, mo) = (final_mse(joint, cfg.mse_window), final_mse(oracle, cfg.mse_window));
    let mse_ok = (mj - mo).abs() <= 0.1 * mo;
    outcome(
        off.is_empty() && far == 0 && mse_ok,
        format!(
            "parameters outside band: {off:?}; sensors farther than 0.05 from a target: {far} of {} (max {:.3}); MSE joint {mj:.4e} vs oracle {mo:.4e}",
            dists.len(),
            dists.iter().cloned().fold(0.0, f64::max)
        ),
    )
}

fn sim2_structure() -> Result<Outcome> {
    let cfg = preset("sim2")?;
    let all = cfg.sensor_array()?;
    let keep: Vec<usize> = (0..all.len()).filter(|&i| !all.movable[i]).collect();
    let fixed = SensorArray {
        positions: keep.iter().map(|&i| all.positions[i]).collect(),
        radius: all.radius,
        noise_class: keep.iter().map(|&i| all.noise_class[i]).collect(),
        bias_class: keep.iter().map(|&i| all.bias_class[i]).collect(),
        movable: vec![false; keep.len()],
    };
    let ks = cfg.wavenumbers()?;
    let truth = cfg.truth.knots[0].1.clone();
    let argmin = |rho0: f64| -> Result<[f64; 2]> {
        let th = ModelParams { rho0, ..truth.clone() };
        Ok(heatmap_objective(&th, &fixed, &ks, None, 24, &cfg.m)?.argmin)
    };
    let mut dists = Vec::new();
    for rho0 in [0.03, 0.10, 0.15, 0.20] {
        dists.push(torus_distance(argmin(rho0)?, [0.5, 0.5]));
    }
    let monotone = dists.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let target = argmin(truth.rho0)?;

    let log = run_experiment(&cfg, Scenario::Joint, 0)?;
    let rho = log.final_theta.rho0;
    let pos = movable_positions(&log)[0];
    let dist = torus_distance(pos, target);
    let run_ok = (rho - 0.3).abs() <= 0.05 && dist <= 0.08;
    outcome(
        monotone && run_ok,
        format!(
            "argmin distances to centre {:?} (non-increasing {monotone}); run ends at rho0 {rho:.3}, sensor ({:.3}, {:.3}) is {dist:.3} from the rho0 = 0.3 argmin ({:.3}, {:.3})",
            dists.iter().map(|d| format!("{d:.3}")).collect::<Vec<_>>(),
            pos[0],
            pos[1],
            target[0],
            target[1]
        ),
    )
}

fn sim4_calibration() -> Result<Outcome> {
    let cfg = preset("sim4")?;
    let log = run_experiment(&cfg, cfg.scenarios[0], 0)?;
    let th = &log.final_theta;
    let beta_ok = th.beta.len() == 2 && (th.beta[0] - 0.0).abs() <= 0.1 && (th.beta[1] - 2.0).abs() <= 0.1;
    let want = [0.01, 0.03, 0.10];
    let ordered = th.tau2.len() == 3 && th.tau2[0] < th.tau2[1] && th.tau2[1] < th.tau2[2];
    let close = th.tau2.iter().zip(want).all(|(e, w)| (e - w).abs() <= 0.5 * w);
    outcome(
        beta_ok && ordered && close,
        format!("beta {:?}, tau2 {:?} (ordered {ordered}, within 50% {close})", fmt3(&th.beta), fmt3(&th.tau2)),
    )
}

fn fmt3(v: &[f64]) -> Vec<String> {
    v.iter().map(|x| format!("{x:.4}")).collect()
}

fn sim5_average() -> Result<Outcome> {
    let mut cfg = preset("sim5")?;
    cfg.trials = 40;
    let logs = run_trials(&cfg, cfg.scenarios[0])?;
    let mut mean = [0.0; 2];
    for log in &logs {
        let p = movable_positions(log)[0];
        mean[0] += p[0] / logs.len() as f64;
        mean[1] += p[1] / logs.len() as f64;
    }
    let c = 5.0 / 12.0;
    let dist = torus_distance(mean, [c, c]);
    let south_west = mean[0] <= c && mean[1] <= c;
    outcome(
        dist <= 0.15 && south_west,
        format!(
            "mean final position ({:.3}, {:.3}) over {} trials, {dist:.3} from (5/12, 5/12), south-west {south_west}",
            mean[0],
            mean[1],
            logs.len()
        ),
    )
}

fn filter_calibration() -> Result<Outcome> {
    let cfg = preset("sim1a")?;
    let sys = sim1_system()?;
    let dt = cfg.dt;
    let kernel = make_kernel(&sys, dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (burn, steps) = (2_000usize, 100_000usize);
    let ny = sys.n_y();
    let mut sig = SignalState { t: 0.0, alpha: DVector::zeros(sys.n()) };
    let mut fs = FilterState::zeros(sys.n());
    let mut white: Vec<DVector<f64>> = Vec::with_capacity(steps);
    let (mut sq_err, mut tr) = (0.0, 0.0);
    for i in 0..burn + steps {
        sig = step_signal(&sig, &kernel, &mut rng);
        let z = observe(&sig, &sys, dt, &mut rng);
        let (next, rec) = kb_step_full(&fs, &sys, &kernel, &z, i)?;
        fs = next;
        if i < burn {
            continue;
        }
        let l = rec.s_nu.clone().cholesky().expect("innovation covariance is positive definite").l();
        white.push(l.solve_lower_triangular(&rec.innovation).expect("triangular solve"));
        sq_err += (&sys.c * (&sig.alpha - &fs.m)).norm_squared();
        tr += (&sys.c * &fs.s * sys.c.transpose()).trace();
    }
    let var = white.iter().map(|w| w.norm_squared()).sum::<f64>() / (steps * ny) as f64;
    let mut worst_rho: f64 = 0.0;
    for c in 0..ny {
        let num: f64 = white.windows(2).map(|w| w[0][c] * w[1][c]).sum();
        let den: f64 = white.iter().map(|w| w[c] * w[c]).sum();
        worst_rho = worst_rho.max((num / den).abs());
    }
    let ratio = sq_err / tr;
    outcome(
        (var - 1.0).abs() <= 0.05 && worst_rho < 0.02 && (ratio - 1.0).abs() <= 0.1,
        format!("normalised innovation variance {var:.4}, max lag-1 |rho| {worst_rho:.4}, squared error / Tr[C S Cᵀ] {ratio:.4}"),
    )
}

fn schedules() -> Result<Outcome> {
    let cfg = preset("sim1a")?;
    let sim1 = schedule_validate(&cfg.theta_schedule_list()?, &cfg.placement_schedule_list()?, cfg.slow);
    let slow =
        schedule_validate(&[LearningSchedule::power(0.1, 0.45)], &[LearningSchedule::power(0.1, 0.6)], Family::Theta);
    let sq_fails = slow.failed("integral_gamma_sq_finite");
    let constant = schedule_validate(&[LearningSchedule::constant(0.1)], &[], Family::Theta);
    let warns = constant.warnings.iter().any(|w| w.contains("tracking"));
    outcome(
        sim1.all_passed() && sq_fails && warns,
        format!(
            "Sim I ordering passes {}; eps 0.45 fails square integrability {sq_fails}; constant rate warns {warns}",
            sim1.all_passed()
        ),
    )
}

fn baseline_ordering() -> Result<Outcome> {
    let cfg = preset("sim1a")?;
    let logs = run_scenarios(&cfg, &[Scenario::Joint, Scenario::ParameterOnly, Scenario::PlacementOnly])?;
    let m: Vec<f64> = logs.iter().map(|l| final_mse(l, cfg.mse_window)).collect();
    outcome(
        m[0] * 1.1 <= m[1] && m[0] * 1.1 <= m[2],
        format!("final MSE joint {:.4e}, parameter-only {:.4e}, placement-only {:.4e}", m[0], m[1], m[2]),
    )
}

fn sim3_tracking() -> Result<Outcome> {
    let cfg = preset("sim3")?;
    let log = run_experiment(&cfg, cfg.scenarios[0], 0)?;
    let truth = sim3_truth();
    let changing: Vec<ParamId> = cfg
        .active
        .iter()
        .copied()
        .filter(|&id| truth.knots.iter().any(|(_, p)| p.get(id) != truth.knots[0].1.get(id)))
        .collect();
    let segs = tracking_segments(&log, &truth, &changing, 0.25);
    let after_change: Vec<_> = segs.iter().filter(|s| s.start > 0.0).collect();
    let mut lines = Vec::new();
    let mut ok = !after_change.is_empty();
    for s in &after_change {
        ok &= s.reacquisition.is_some() && s.resident;
        lines.push(format!(
            "{} from t = {}: reacquired {}, resident {}",
            s.param,
            s.start,
            s.reacquisition.map_or("never".to_string(), |t| format!("after {t:.1}")),
            s.resident
        ));
    }
    outcome(ok, lines.join("; "))
}
