use super::config::ExperimentConfig;
use crate::conditions::{
    build_joint_system, check_a_stable, check_detectable, check_joint_controllable, check_joint_stable_and_stationary,
    check_stabilisable, ConditionReport,
};
use crate::kalman::solve_are;
use crate::spectral_model::{assemble_with_b, multiplication_operator, weighting_matrix};
use crate::Result;

/// Machine-checkable hypotheses at the true parameters and initial layout.
///
/// With `joint` unset the checks on the joint state-filter-tangent system,
/// which can be large, are skipped.
pub fn check_conditions(cfg: &ExperimentConfig, joint: bool) -> Result<ConditionReport> {
    cfg.validate()?;
    let ks = cfg.wavenumbers()?;
    let b = match &cfg.b_field {
        Some(f) => Some(multiplication_operator(&ks, &|x| f.eval(x))?),
        None => None,
    };
    let m = weighting_matrix(&cfg.m, &ks)?;
    let truth = &cfg.truth.knots[0].1;
    let sensors = cfg.sensor_array()?;
    let sys = assemble_with_b(truth, &sensors, &ks, b, m, &cfg.active)?;

    let mut rep = ConditionReport::default();
    rep.push(check_a_stable(&sys.a));
    rep.push(check_stabilisable(&sys.a, &sys.b_qhalf()));
    rep.push(check_detectable(&sys.a, &sys.c));
    if joint {
        let ss = solve_are(&sys)?;
        let js = build_joint_system(&sys, &sys, &ss.s_inf)?;
        let (entry, _) = check_joint_stable_and_stationary(&js);
        let rightmost = entry.value;
        rep.push(entry);
        rep.push(check_joint_controllable(&js, rightmost));
    }
    for e in ConditionReport::unverifiable() {
        rep.push(e);
    }
    Ok(rep)
}
