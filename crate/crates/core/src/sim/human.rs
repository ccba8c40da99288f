//! Human classification accuracy as a function of ability, fatigue,
//! workload, and task duration.

use crate::context::HumanProfile;
use crate::error::{Error, Result};

/// Fatigue factor E_f for `t_hat` hours since the operator started working.
/// Beyond four hours the linear decline is held at its endpoint, 0.1.
pub fn fatigue_factor(t_hat: f64) -> Result<f64> {
    if !(t_hat >= 0.0) {
        return Err(Error::Domain(format!("fatigue time {t_hat} h is negative")));
    }
    Ok(if t_hat < 1.0 {
        1.0
    } else if t_hat <= 4.0 {
        -0.3 * t_hat + 1.3
    } else {
        0.1
    })
}

/// Workload factor E_w for utilization `u` over the trailing five minutes.
pub fn workload_factor(u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("utilization {u} outside [0, 1]")));
    }
    Ok(if u < 0.45 {
        -2.47 * u * u + 2.22 * u + 0.5
    } else if u < 0.65 {
        1.0
    } else {
        -4.08 * u * u + 5.31 * u - 0.724
    })
}

/// Task-duration factor E_d: a decreasing sigmoid centred at 180 s.
pub fn difficulty_factor(t_bar: f64) -> f64 {
    1.0 / (1.0 + (0.04 * (t_bar - 180.0)).exp())
}

/// P_hc = 0.5 + sin(h_c) · E_f · E_w · sin(h_s) · E_d, capped at 1.
///
/// E_w peaks slightly above 1 just past u = 0.65, so near-maximal operators
/// could otherwise exceed certainty by about 1e-3.
pub fn human_classification_prob(h: &HumanProfile, t_hat: f64, u: f64, t_bar: f64) -> Result<f64> {
    let ef = fatigue_factor(t_hat)?;
    let ew = workload_factor(u)?;
    let ed = difficulty_factor(t_bar);
    Ok((0.5 + h.cognitive_angle().sin() * ef * ew * h.skill_angle().sin() * ed).min(1.0))
}
