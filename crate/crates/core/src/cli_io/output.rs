//! Output directories, CSV writers and the run manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::experiments::{final_mse, trial_average, ExperimentConfig, Heatmap, Scenario, TrajectoryLog};
use crate::signal_sim::{ObservationRecord, SignalState};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.toml";

/// Floats are written with full round-trip precision.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub preset: String,
    pub seed: u64,
    pub version: String,
    /// `running` while the command is in progress, then `complete` or `failed`.
    pub status: String,
    pub started_unix_s: u64,
    pub finished_unix_s: Option<u64>,
    pub wall_clock_s: f64,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub struct OutputDir {
    path: PathBuf,
    written: Mutex<BTreeSet<String>>,
}

impl OutputDir {
    /// Create `path`, refusing a non-empty directory unless `force` is set.
    pub fn create(path: &Path, force: bool) -> Result<Self> {
        if path.exists() {
            if !path.is_dir() {
                return Err(Error::Usage(format!("{} exists and is not a directory", path.display())));
            }
            if !force && fs::read_dir(path)?.next().is_some() {
                return Err(Error::Usage(format!(
                    "output directory {} is not empty; pass --force to overwrite",
                    path.display()
                )));
            }
        }
        fs::create_dir_all(path)?;
        Ok(OutputDir { path: path.to_path_buf(), written: Mutex::new(BTreeSet::new()) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Files written so far, manifest excluded.
    pub fn files(&self) -> Vec<String> {
        self.written.lock().unwrap().iter().cloned().collect()
    }

    fn record(&self, name: &str) {
        self.written.lock().unwrap().insert(name.to_string());
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<()> {
        fs::write(self.path.join(name), text)?;
        self.record(name);
        Ok(())
    }

    pub fn csv_writer(&self, name: &str) -> Result<csv::Writer<fs::File>> {
        let w = csv::Writer::from_path(self.path.join(name))?;
        self.record(name);
        Ok(w)
    }

    /// Write `config.toml` and a manifest marked `running`.
    pub fn begin(&self, command: &str, cfg: &ExperimentConfig) -> Result<RunManifest> {
        self.write_text("config.toml", &cfg.to_toml()?)?;
        let m = RunManifest {
            command: command.to_string(),
            preset: cfg.preset.clone(),
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: "running".into(),
            started_unix_s: unix_now(),
            finished_unix_s: None,
            wall_clock_s: 0.0,
            files: self.files(),
            config: cfg.clone(),
        };
        self.write_manifest(&m)?;
        Ok(m)
    }

    pub fn write_manifest(&self, m: &RunManifest) -> Result<()> {
        let mut m = m.clone();
        if m.status != "running" {
            m.finished_unix_s = Some(unix_now());
        }
        let text = toml::to_string(&m).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(self.path.join(MANIFEST), text)?;
        Ok(())
    }

    pub fn write_log(&self, name: &str, log: &TrajectoryLog) -> Result<()> {
        let mut w = self.csv_writer(name)?;
        w.write_record(log.column_names())?;
        for r in &log.rows {
            let mut rec = vec![r.step.to_string(), fmt_f64(r.t)];
            rec.extend(r.theta.iter().chain(&r.coords).map(|&x| fmt_f64(x)));
            rec.extend([r.loglik, r.trace_obj, r.mse].map(fmt_f64));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
}

pub fn write_signal(dir: &OutputDir, states: &[SignalState], obs: &[ObservationRecord]) -> Result<()> {
    let mut w = dir.csv_writer("signal.csv")?;
    if let Some(s) = states.first() {
        let mut head = vec!["t".to_string()];
        head.extend((0..s.alpha.len()).map(|i| format!("alpha_{i}")));
        w.write_record(&head)?;
    }
    for s in states {
        let mut rec = vec![fmt_f64(s.t)];
        rec.extend(s.alpha.iter().map(|&x| fmt_f64(x)));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = dir.csv_writer("observations.csv")?;
    if let Some(o) = obs.first() {
        let mut head = vec!["t".to_string()];
        head.extend((0..o.z.len()).map(|i| format!("z_{}", i + 1)));
        w.write_record(&head)?;
    }
    for o in obs {
        let mut rec = vec![fmt_f64(o.t)];
        rec.extend(o.z.iter().map(|&x| fmt_f64(x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_average(dir: &OutputDir, name: &str, logs: &[TrajectoryLog]) -> Result<()> {
    let avg = trial_average(logs)?;
    let h = &logs[0].header;
    let mut head = vec!["t".to_string()];
    for n in h.theta_names.iter().chain(&h.coord_names) {
        head.push(format!("{n}_mean"));
        head.push(format!("{n}_se"));
    }
    let mut w = dir.csv_writer(name)?;
    w.write_record(&head)?;
    for (i, &t) in avg.t.iter().enumerate() {
        let mut rec = vec![fmt_f64(t)];
        let pairs =
            avg.theta_mean[i].iter().zip(&avg.theta_se[i]).chain(avg.coords_mean[i].iter().zip(&avg.coords_se[i]));
        for (m, s) in pairs {
            rec.push(fmt_f64(*m));
            rec.push(fmt_f64(*s));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per scenario and trial: final MSE, total log-likelihood and final θ.
pub fn write_summary(dir: &OutputDir, cfg: &ExperimentConfig, all: &[(Scenario, Vec<TrajectoryLog>)]) -> Result<()> {
    let mut w = dir.csv_writer("summary.csv")?;
    let Some(first) = all.iter().flat_map(|(_, l)| l.first()).next() else {
        w.flush()?;
        return Ok(());
    };
    let mut head: Vec<String> = ["scenario", "trial", "final_mse", "loglik_total"].map(String::from).to_vec();
    head.extend(first.header.theta_names.iter().map(|n| format!("final_{n}")));
    w.write_record(&head)?;
    for (sc, logs) in all {
        for log in logs {
            let mut rec = vec![sc.name().to_string(), log.header.trial.to_string()];
            rec.push(fmt_f64(final_mse(log, cfg.mse_window)));
            rec.push(fmt_f64(log.loglik_total));
            let last = log.rows.last().map(|r| r.theta.clone()).unwrap_or_default();
            rec.extend(last.iter().map(|&x| fmt_f64(x)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_heatmap(dir: &OutputDir, hm: &Heatmap) -> Result<()> {
    let mut w = dir.csv_writer("heatmap.csv")?;
    w.write_record(["x", "y", "value", "reduction"])?;
    for i in 0..hm.values.len() {
        let [x, y] = hm.node(i);
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_else(|| "nan".into());
        w.write_record([fmt_f64(x), fmt_f64(y), opt(hm.values[i]), opt(hm.reduction[i])])?;
    }
    w.flush()?;
    Ok(())
}
