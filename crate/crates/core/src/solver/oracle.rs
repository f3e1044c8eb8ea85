//! Fractional-programming oracle.
//!
//! Each outer iteration fixes the quadratic-transform auxiliaries at the
//! current beamformers and maximizes the resulting concave surrogate
//! f_max · min_k log2 Φ0_k + Σ_k f_k log2 Φ_k over the power set by projected
//! gradient ascent. The common term carries one auxiliary per user so the
//! surrogate minorizes the WSR with the common rate set to the smallest
//! common capacity; an inner step is kept only if it does not lower the
//! surrogate, which makes the outer WSR sequence non-decreasing.

use num_complex::Complex64;

use super::{directions, finish, project_beamformers, starting_point, SolverOptions, SolverTrace};
use crate::error::Result;
use crate::fp::{quadratic_transform, AuxState, SurrogateTerms};
use crate::model::{check_feasibility, BeamformerSet, Gains, ProblemInstance, RateAllocation};

/// Auxiliaries frozen for one outer iteration.
struct FrozenAux {
    z: Vec<Complex64>,
    /// Common-stream auxiliary at every user.
    z0: Vec<Complex64>,
}

impl FrozenAux {
    fn at(inst: &ProblemInstance, g: &Gains<f64>) -> Self {
        let u = inst.num_users();
        let z = (0..u)
            .map(|k| g.a[k][k + 1] / g.private_interference(inst, k))
            .collect();
        let z0 = (0..u)
            .map(|k| g.a[k][0] / g.common_interference(inst, k))
            .collect();
        Self { z, z0 }
    }
}

struct Surrogate {
    value: f64,
    phi: Vec<f64>,
    phi0: f64,
    common_user: usize,
}

fn evaluate(inst: &ProblemInstance, g: &Gains<f64>, aux: &FrozenAux) -> Option<Surrogate> {
    let u = inst.num_users();
    let f = inst.weights();
    let f_max = f[inst.max_weight_user()];
    let mut value = 0.0;
    let mut phi = Vec::with_capacity(u);
    for k in 0..u {
        let p = quadratic_transform(aux.z[k], g.a[k][k + 1], g.private_interference(inst, k));
        if !(p > 0.0) {
            return None;
        }
        value += f[k] * p.log2();
        phi.push(p);
    }
    let mut common_user = 0;
    let mut phi0 = f64::INFINITY;
    for k in 0..u {
        let p = quadratic_transform(aux.z0[k], g.a[k][0], g.common_interference(inst, k));
        if !(p > 0.0) {
            return None;
        }
        if p < phi0 {
            phi0 = p;
            common_user = k;
        }
    }
    value += f_max * phi0.log2();
    Some(Surrogate {
        value,
        phi,
        phi0,
        common_user,
    })
}

fn ascent_direction(
    inst: &ProblemInstance,
    g: &Gains<f64>,
    aux: &FrozenAux,
    s: &Surrogate,
) -> BeamformerSet {
    let r = s.common_user;
    let view = AuxState {
        z0: aux.z0[r],
        z: aux.z.clone(),
    };
    let terms = SurrogateTerms {
        phi0: s.phi0,
        phi: s.phi.clone(),
    };
    let f_max = inst.weights()[inst.max_weight_user()];
    let d = directions(inst, g, &view, &terms, f_max, r);
    let u = inst.num_users();
    let mut dir = BeamformerSet::zeros(u, inst.num_antennas());
    crate::scalar::axpy_const(&mut dir.v0, d.common, inst.channel(r));
    for k in 0..u {
        let row = dir.v.row_mut(k);
        crate::scalar::axpy_const(row, d.zeta[k] / s.phi[k], inst.channel(k));
        crate::scalar::axpy_const(row, d.penalty[k], inst.channel(r));
        for j in (0..u).filter(|&j| j != k) {
            crate::scalar::axpy_const(row, d.beta[j][k] / s.phi[j], inst.channel(j));
        }
    }
    dir
}

fn inner_ascent(
    inst: &ProblemInstance,
    aux: &FrozenAux,
    start: BeamformerSet,
    opts: &SolverOptions,
) -> BeamformerSet {
    let mut beams = start;
    let mut g = Gains::new(inst, &beams);
    let Some(mut current) = evaluate(inst, &g, aux) else {
        return beams;
    };
    let mut step = opts.inner_step;
    for _ in 0..opts.inner_iters {
        let dir = ascent_direction(inst, &g, aux, &current);
        let mut accepted = None;
        while step > 1e-14 {
            let mut cand = beams.clone();
            for (x, d) in cand
                .v0
                .iter_mut()
                .chain(cand.v.as_mut_slice())
                .zip(dir.v0.iter().chain(dir.v.as_slice()))
            {
                *x += d * step;
            }
            if let Ok(cand) = project_beamformers(&cand, inst.power_budget(), inst.p0()) {
                let cg = Gains::new(inst, &cand);
                if let Some(s) = evaluate(inst, &cg, aux) {
                    if s.value >= current.value {
                        accepted = Some((cand, cg, s));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some((cand, cg, s)) = accepted else {
            break;
        };
        let gain = s.value - current.value;
        beams = cand;
        g = cg;
        current = s;
        step *= 1.5;
        if gain <= 1e-13 * current.value.abs().max(1.0) {
            break;
        }
    }
    beams
}

/// Value at `beams` of the surrogate built around `anchor`. It never exceeds
/// the WSR at `beams` and equals it when `beams == anchor`.
pub fn surrogate_lower_bound(
    inst: &ProblemInstance,
    anchor: &BeamformerSet,
    beams: &BeamformerSet,
) -> Result<f64> {
    inst.check_beams(anchor)?;
    inst.check_beams(beams)?;
    let aux = FrozenAux::at(inst, &Gains::new(inst, anchor));
    Ok(evaluate(inst, &Gains::new(inst, beams), &aux).map_or(f64::NEG_INFINITY, |s| s.value))
}

/// Alternates closed-form auxiliary updates with an inner ascent on the
/// surrogate; stops when the WSR changes by less than `opts.tol`.
pub fn solve_fp_oracle(
    inst: &ProblemInstance,
    opts: &SolverOptions,
    init: Option<&BeamformerSet>,
) -> Result<(BeamformerSet, RateAllocation, SolverTrace)> {
    opts.validate(inst.num_users())?;
    let mut state = starting_point(inst, init, opts.seed)?;
    let mut trace = SolverTrace::default();
    for _ in 0..opts.max_iters {
        let aux = FrozenAux::at(inst, &Gains::new(inst, &state.beams));
        let beams = inner_ascent(inst, &aux, state.beams.clone(), opts);
        let next = finish(inst, beams, None, super::RcMode::Simplified);
        let feasible = check_feasibility(inst, &next.beams, &next.rc, 1e-9).all();
        trace.push(next.wsr, feasible);
        let delta = (next.wsr - state.wsr).abs();
        state = next;
        if delta < opts.tol {
            trace.converged = true;
            break;
        }
    }
    Ok((state.beams, state.rc, trace))
}
