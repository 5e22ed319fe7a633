//! Command-line entry points, configuration files and run outputs.

mod output;
mod plots;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::experiments::{
    check_conditions, gradient_check, heatmap_objective, preset, run_trials, schedule_report, simulate_truth,
    ExperimentConfig, PRESETS,
};
use crate::spectral_model::{multiplication_operator, ParamId, SensorArray};
use crate::{Error, Result};

pub use output::{fmt_f64, read_manifest, OutputDir, RunManifest, MANIFEST};

#[derive(Debug, Parser)]
#[command(
    name = "spde-rml",
    version,
    about = "Online parameter estimation and sensor placement for the stochastic advection-diffusion equation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the true signal and observations only.
    Simulate(RunArgs),
    /// Run every scenario of an experiment.
    Run(RunArgs),
    /// Sweep one extra sensor over a grid and write the asymptotic objective.
    Heatmap(HeatmapArgs),
    /// Check the stability, detectability and controllability hypotheses.
    CheckConditions(ConditionArgs),
    /// Compare analytic gradients with finite differences.
    GradCheck(GradCheckArgs),
    /// Check the step-size conditions of the learning schedules.
    ValidateSchedules(ConfigArg),
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Preset name or path to a TOML config file.
    pub config: String,
}

#[derive(Debug, Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory; defaults to `out/<preset>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Also write gnuplot scripts next to the CSV files.
    #[arg(long)]
    pub emit_plots: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Grid nodes per axis.
    #[arg(long, default_value_t = 24)]
    pub res: usize,
    /// Parameter override, e.g. `--theta rho0=0.03`; repeatable.
    #[arg(long = "theta", value_name = "NAME=VALUE")]
    pub theta: Vec<String>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct ConditionArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Skip the joint state-filter-tangent checks.
    #[arg(long)]
    pub skip_joint: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Length of the recorded observation path.
    #[arg(long, default_value_t = 60)]
    pub path_steps: usize,
    #[arg(long)]
    pub dt: Option<f64>,
}

/// Read a TOML experiment config. Unknown keys and missing fields are errors.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::from_toml(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// A preset name, or a path to a config file.
pub fn resolve_config(spec: &str) -> Result<ExperimentConfig> {
    let p = Path::new(spec);
    if p.is_file() {
        return parse_config(p);
    }
    if spec.ends_with(".toml") {
        return Err(Error::Config(format!("config file {spec} not found")));
    }
    preset(spec).map_err(|_| {
        Error::Config(format!("`{spec}` is neither a config file nor a preset (presets: {})", PRESETS.join(", ")))
    })
}

fn apply_overrides(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<()> {
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.steps {
        cfg.steps = v;
    }
    if let Some(v) = o.dt {
        cfg.dt = v;
    }
    if let Some(v) = o.trials {
        cfg.trials = v;
    }
    if let Some(v) = o.stride {
        cfg.stride = v;
    }
    cfg.validate()
}

fn out_dir(args: &OutArgs, cfg: &ExperimentConfig) -> Result<OutputDir> {
    let path = args.out.clone().unwrap_or_else(|| PathBuf::from("out").join(&cfg.preset));
    OutputDir::create(&path, args.force)
}

/// Parse `argv`, run the command and return the process exit code:
/// 0 on success, 1 for usage and config errors, 2 for numerical failures.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Run(a) => cmd_run(&a),
        Command::Heatmap(a) => cmd_heatmap(&a),
        Command::CheckConditions(a) => cmd_conditions(&a),
        Command::GradCheck(a) => cmd_gradcheck(&a),
        Command::ValidateSchedules(a) => cmd_schedules(&a),
    }
}

fn finish(dir: &OutputDir, mut manifest: RunManifest, started: Instant, result: Result<()>) -> Result<i32> {
    manifest.wall_clock_s = started.elapsed().as_secs_f64();
    manifest.files = dir.files();
    manifest.status = if result.is_ok() { "complete" } else { "failed" }.into();
    dir.write_manifest(&manifest)?;
    result.map(|_| {
        println!("wrote {} files to {}", manifest.files.len(), dir.path().display());
        0
    })
}

fn cmd_simulate(a: &RunArgs) -> Result<i32> {
    let mut cfg = resolve_config(&a.config.config)?;
    apply_overrides(&mut cfg, &a.overrides)?;
    let dir = out_dir(&a.out, &cfg)?;
    let manifest = dir.begin("simulate", &cfg)?;
    let started = Instant::now();
    let result = (|| -> Result<()> {
        let (states, obs) = simulate_truth(&cfg, 0)?;
        output::write_signal(&dir, &states, &obs)?;
        if a.out.emit_plots {
            dir.write_text("plot_signal.gp", &plots::signal_script())?;
        }
        Ok(())
    })();
    finish(&dir, manifest, started, result)
}

fn cmd_run(a: &RunArgs) -> Result<i32> {
    let mut cfg = resolve_config(&a.config.config)?;
    apply_overrides(&mut cfg, &a.overrides)?;
    let dir = out_dir(&a.out, &cfg)?;
    let manifest = dir.begin("run", &cfg)?;
    let started = Instant::now();
    let result = (|| -> Result<()> {
        let rep = schedule_report(&cfg)?;
        for w in &rep.warnings {
            eprintln!("warning: {w}");
        }
        let mut all = Vec::new();
        for &sc in &cfg.scenarios {
            let logs = run_trials(&cfg, sc)?;
            for log in &logs {
                dir.write_log(&format!("{}_trial{}.csv", sc.name(), log.header.trial), log)?;
            }
            if logs.len() >= 2 {
                output::write_average(&dir, &format!("average_{}.csv", sc.name()), &logs)?;
            }
            if a.out.emit_plots {
                dir.write_text(&format!("plot_{}.gp", sc.name()), &plots::trajectory_script(sc.name(), &logs[0]))?;
            }
            all.push((sc, logs));
        }
        if let Some((_, logs)) = all.first() {
            dir.write_log("log.csv", &logs[0])?;
        }
        output::write_summary(&dir, &cfg, &all)?;
        Ok(())
    })();
    finish(&dir, manifest, started, result)
}

fn cmd_heatmap(a: &HeatmapArgs) -> Result<i32> {
    let cfg = resolve_config(&a.config.config)?;
    let mut theta = cfg.truth.knots[0].1.clone();
    for kv in &a.theta {
        let (k, v) =
            kv.split_once('=').ok_or_else(|| Error::Usage(format!("--theta expects NAME=VALUE, got `{kv}`")))?;
        let id: ParamId = k.trim().parse()?;
        let v: f64 = v.trim().parse().map_err(|_| Error::Usage(format!("bad value in --theta {kv}")))?;
        if !theta.has(id) {
            return Err(Error::Usage(format!("parameter {id} does not exist in this config")));
        }
        theta.set(id, v);
    }
    theta.validate()?;
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
    let b = match &cfg.b_field {
        Some(f) => Some(multiplication_operator(&ks, &|x| f.eval(x))?),
        None => None,
    };
    let dir = out_dir(&a.out, &cfg)?;
    let manifest = dir.begin("heatmap", &cfg)?;
    let started = Instant::now();
    let result = (|| -> Result<()> {
        let hm = heatmap_objective(&theta, &fixed, &ks, b.as_ref(), a.res, &cfg.m)?;
        output::write_heatmap(&dir, &hm)?;
        println!("argmin ({}, {}) objective {}", hm.argmin[0], hm.argmin[1], fmt_f64(hm.min_value));
        if hm.holes() > 0 {
            eprintln!("warning: {} grid nodes failed to solve and are left empty", hm.holes());
        }
        if a.out.emit_plots {
            dir.write_text("plot_heatmap.gp", &plots::heatmap_script())?;
        }
        Ok(())
    })();
    finish(&dir, manifest, started, result)
}

fn cmd_conditions(a: &ConditionArgs) -> Result<i32> {
    let cfg = resolve_config(&a.config.config)?;
    let dir = out_dir(&a.out, &cfg)?;
    let manifest = dir.begin("check-conditions", &cfg)?;
    let started = Instant::now();
    let result = (|| -> Result<()> {
        let rep = check_conditions(&cfg, !a.skip_joint)?;
        let text = rep.to_text();
        print!("{text}");
        dir.write_text("conditions.txt", &text)?;
        Ok(())
    })();
    finish(&dir, manifest, started, result)
}

fn cmd_gradcheck(a: &GradCheckArgs) -> Result<i32> {
    let mut cfg = resolve_config(&a.config.config)?;
    if let Some(dt) = a.dt {
        cfg.dt = dt;
    }
    let checks = gradient_check(&cfg, a.path_steps)?;
    let mut failed = 0;
    for c in &checks {
        println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        failed += usize::from(!c.passed);
    }
    println!("{} of {} checks passed", checks.len() - failed, checks.len());
    Ok(if failed == 0 { 0 } else { 2 })
}

fn cmd_schedules(a: &ConfigArg) -> Result<i32> {
    let cfg = resolve_config(&a.config)?;
    let rep = schedule_report(&cfg)?;
    for c in &rep.checks {
        println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for w in &rep.warnings {
        println!("warning: {w}");
    }
    Ok(0)
}
