use crate::signal_sim::ParameterSchedule;
use crate::spectral_model::ParamId;

use super::runner::TrajectoryLog;

/// How one parameter estimate followed one constant stretch of a truth schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub param: ParamId,
    pub start: f64,
    pub end: f64,
    pub truth: f64,
    /// Time from the segment start until the estimate first sits in the band.
    pub reacquisition: Option<f64>,
    /// Whether the estimate stays in the band over the last fifth of the segment.
    pub resident: bool,
}

/// Band test for a logged estimate: `|est − truth| ≤ band · |truth|`.
pub fn in_band(est: f64, truth: f64, band: f64) -> bool {
    (est - truth).abs() <= band * truth.abs()
}

/// Split each logged parameter's truth path at its changepoints and score the
/// estimate on every segment.
pub fn tracking_segments(
    log: &TrajectoryLog,
    truth: &ParameterSchedule,
    params: &[ParamId],
    band: f64,
) -> Vec<Segment> {
    let t_end = log.rows.last().map_or(0.0, |r| r.t);
    let mut out = Vec::new();
    for &id in params {
        let Some(col) = log.header.theta_names.iter().position(|n| *n == id.to_string()) else {
            continue;
        };
        let mut starts: Vec<(f64, f64)> = Vec::new();
        for (t, p) in &truth.knots {
            let v = p.get(id);
            if starts.last().is_none_or(|&(_, prev)| prev != v) {
                starts.push((*t, v));
            }
        }
        for (k, &(start, v)) in starts.iter().enumerate() {
            let end = starts.get(k + 1).map_or(t_end, |s| s.0);
            if end <= start {
                continue;
            }
            let last = k + 1 == starts.len();
            let rows: Vec<_> = log.rows.iter().filter(|r| r.t >= start && (r.t < end || last)).collect();
            let reacquisition = rows.iter().find(|r| in_band(r.theta[col], v, band)).map(|r| r.t - start);
            let tail = end - 0.2 * (end - start);
            let tail_rows: Vec<_> = rows.iter().filter(|r| r.t >= tail).collect();
            let resident = !tail_rows.is_empty() && tail_rows.iter().all(|r| in_band(r.theta[col], v, band));
            out.push(Segment { param: id, start, end, truth: v, reacquisition, resident });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::presets::sim1_truth;
    use crate::experiments::{LogHeader, LogRow, Scenario};
    use crate::optimizer::ScheduleReport;
    use crate::spectral_model::SensorArray;

    fn log(values: &[(f64, f64)]) -> TrajectoryLog {
        TrajectoryLog {
            header: LogHeader {
                preset: "t".into(),
                scenario: Scenario::ParameterOnly,
                seed: 0,
                trial: 0,
                theta_names: vec!["zeta".into()],
                coord_names: vec![],
                schedule_report: ScheduleReport { checks: vec![], warnings: vec![] },
            },
            rows: values
                .iter()
                .enumerate()
                .map(|(i, &(t, v))| LogRow {
                    step: i,
                    t,
                    theta: vec![v],
                    coords: vec![],
                    loglik: 0.0,
                    trace_obj: 0.0,
                    mse: 0.0,
                })
                .collect(),
            mse: vec![],
            final_theta: sim1_truth(),
            final_sensors: SensorArray::simple(vec![], 0.05, false),
            loglik_total: 0.0,
        }
    }

    #[test]
    fn two_segments() {
        let mut a = sim1_truth();
        a.zeta = 1.0;
        let mut b = a.clone();
        b.zeta = 2.0;
        let truth = ParameterSchedule { knots: vec![(0.0, a), (5.0, b)] };
        let pts: Vec<(f64, f64)> =
            (0..10).map(|i| (i as f64, [0.5, 0.9, 1.1, 1.0, 1.0, 1.0, 1.3, 1.8, 2.1, 2.0][i])).collect();
        let segs = tracking_segments(&log(&pts), &truth, &[ParamId::Zeta], 0.25);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].reacquisition, Some(1.0));
        assert!(segs[0].resident);
        assert_eq!(segs[1].start, 5.0);
        assert_eq!(segs[1].end, 9.0);
        assert_eq!(segs[1].reacquisition, Some(2.0));
        assert!(segs[1].resident);
    }

    #[test]
    fn band_is_relative() {
        assert!(in_band(1.2, 1.0, 0.25));
        assert!(!in_band(0.7, 1.0, 0.25));
    }
}
