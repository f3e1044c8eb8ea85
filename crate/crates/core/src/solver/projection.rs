//! Power and common-rate projections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rates_unchecked, BeamformerSet, ProblemInstance, RateAllocation};
use crate::scalar::{c_scale, norm_sqr, Real};

/// Rescales every stream (common first) so that the total power equals
/// `power_budget` and each stream carries at least `p0`, keeping directions.
///
/// The excess power above `p0` is shared in proportion to each stream's
/// excess at the input. When no stream exceeds `p0` the budget is split
/// equally.
pub fn project_beamformers<T: Real>(
    tilde: &BeamformerSet<T>,
    power_budget: f64,
    p0: f64,
) -> Result<BeamformerSet<T>> {
    let streams = tilde.num_users() + 1;
    let spare = power_budget - streams as f64 * p0;
    if !(spare > 0.0) || !(p0 >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "power budget {power_budget} W must exceed (U+1)·p0 = {} W",
            streams as f64 * p0
        )));
    }
    let norms: Vec<T> = (0..streams).map(|s| norm_sqr(tilde.stream(s))).collect();
    let excess: Vec<T> = norms
        .iter()
        .map(|&n| if n.value() > p0 { n - p0 } else { T::zero() })
        .collect();
    let total = excess.iter().fold(T::zero(), |acc, &e| acc + e);
    let degenerate = total.value() == 0.0;

    let mut out = tilde.clone();
    for s in 0..streams {
        let target = if degenerate {
            T::cst(power_budget / streams as f64)
        } else {
            excess[s] / total * spare + p0
        };
        let n = norms[s];
        if n.value() == 0.0 {
            if target.value() > 0.0 {
                return Err(Error::ZeroBeamformer { index: s });
            }
            continue;
        }
        let scale = (target / n).sqrt();
        for z in out.stream_mut(s) {
            *z = c_scale(*z, scale);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RcMode {
    /// Whole common rate to the (lowest-index) highest-weight user.
    #[default]
    Simplified,
    /// Common rate shared in proportion to the positive part of the pre-projection rates.
    Proportional,
}

pub(crate) fn simplified_rc<T: Real>(inst: &ProblemInstance, min_c: T) -> RateAllocation<T> {
    let mut rc = RateAllocation::zeros(inst.num_users());
    rc.rc[inst.max_weight_user()] = min_c;
    rc
}

/// Common-rate allocation that exactly exhausts the smallest common capacity
/// over all users at `beams`.
pub fn project_common_rate(
    tilde_rc: &RateAllocation,
    inst: &ProblemInstance,
    beams: &BeamformerSet,
    mode: RcMode,
) -> Result<RateAllocation> {
    inst.check_beams(beams)?;
    inst.check_rc(tilde_rc)?;
    let m = rates_unchecked(inst, beams).min_c;
    Ok(common_rate_for(tilde_rc, inst, m, mode))
}

pub(crate) fn common_rate_for(
    tilde_rc: &RateAllocation,
    inst: &ProblemInstance,
    min_c: f64,
    mode: RcMode,
) -> RateAllocation {
    match mode {
        RcMode::Simplified => simplified_rc(inst, min_c),
        RcMode::Proportional => {
            let total: f64 = tilde_rc.rc.iter().map(|r| r.max(0.0)).sum();
            if total > 0.0 {
                RateAllocation {
                    rc: tilde_rc.rc.iter().map(|r| r.max(0.0) / total * min_c).collect(),
                }
            } else {
                simplified_rc(inst, min_c)
            }
        }
    }
}
