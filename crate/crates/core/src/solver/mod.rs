//! Projected gradient ascent on the penalized surrogate, and the FP oracle.
//!
//! Gradients follow one convention everywhere: for a real objective `L` and
//! complex variable `v`, the returned `G` satisfies
//! `d/dt L(v + t d)|_{t=0} = Re{G^H d}`. Every direction term is a complex
//! multiple of a channel vector, which [`Directions`] stores as coefficients.

mod oracle;
mod projection;

use std::io::Write;

use num_complex::{Complex, Complex64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp::{aux_from_gains, terms_from_gains, AuxState, SurrogateTerms};
use crate::model::{
    check_feasibility, rates_unchecked, wsr_from_rates, BeamformerSet, Gains, ProblemInstance,
    RateAllocation,
};
use crate::scalar::{c_scale, c_scale_f, c_zero, norm_sqr, CMatrix, Real, LN_2};

pub use oracle::{solve_fp_oracle, surrogate_lower_bound};
pub use projection::{project_beamformers, project_common_rate, RcMode};
pub(crate) use projection::simplified_rc;

/// Complex coefficients of the gradient terms. With `r` the user whose
/// common-stream transform enters the penalty (the reference user):
/// `∇v0 = common · h_r`, `ζ_k = zeta[k] · h_k`, `β_{j,k} = beta[j][k] · h_j`,
/// `o_k = penalty[k] · h_r`.
#[derive(Debug, Clone)]
pub(crate) struct Directions<T> {
    pub common: Complex<T>,
    pub zeta: Vec<Complex<T>>,
    pub beta: Vec<Vec<Complex<T>>>,
    pub penalty: Vec<Complex<T>>,
}

pub(crate) fn directions<T: Real>(
    inst: &ProblemInstance,
    g: &Gains<T>,
    aux: &AuxState<T>,
    terms: &SurrogateTerms<T>,
    lambda: f64,
    common_user: usize,
) -> Directions<T> {
    let u = inst.num_users();
    let f = inst.weights();
    let r = common_user;
    let two_over_ln2 = 2.0 / LN_2;
    let z0_sq = crate::scalar::abs2(aux.z0);
    let common = c_scale(aux.z0, T::cst(lambda * two_over_ln2) / terms.phi0);
    let zeta = (0..u)
        .map(|k| c_scale_f(aux.z[k], f[k] * two_over_ln2))
        .collect();
    let beta = (0..u)
        .map(|j| {
            let w = crate::scalar::abs2(aux.z[j]) * (-f[j] * two_over_ln2);
            (0..u)
                .map(|k| if j == k { c_zero() } else { c_scale(g.a[j][k + 1], w) })
                .collect()
        })
        .collect();
    let pw = z0_sq * (-lambda * two_over_ln2) / terms.phi0;
    let penalty = (0..u).map(|k| c_scale(g.a[r][k + 1], pw)).collect();
    Directions {
        common,
        zeta,
        beta,
        penalty,
    }
}

/// Decomposition of each private-beamformer gradient.
#[derive(Debug, Clone)]
pub struct GradientParts {
    /// Row k is ζ_k.
    pub zeta: CMatrix,
    /// `beta[j][k]` is β_{j,k}; `None` on the diagonal.
    pub beta: Vec<Vec<Option<Vec<Complex64>>>>,
    /// Row k is o_k.
    pub o: CMatrix,
    pub phi0: f64,
    pub phi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GradientSet {
    pub g_rc: Vec<f64>,
    pub g_v0: Vec<Complex64>,
    pub g_v: CMatrix,
    pub parts: Option<GradientParts>,
}

fn scaled_channel(c: Complex64, h: &[Complex64]) -> Vec<Complex64> {
    h.iter().map(|x| c * x).collect()
}

/// Gradients of the penalized objective with respect to the common rates and
/// all beamformers, at fixed auxiliaries.
pub fn gradients(
    inst: &ProblemInstance,
    beams: &BeamformerSet,
    aux: &AuxState,
    lambda: f64,
) -> Result<GradientSet> {
    inst.check_beams(beams)?;
    if aux.z.len() != inst.num_users() {
        return Err(Error::DimensionMismatch {
            what: "auxiliary variables",
            expected: inst.num_users(),
            found: aux.z.len(),
        });
    }
    let g = Gains::new(inst, beams);
    let terms = terms_from_gains(inst, &g, aux);
    terms.check_positive()?;
    let d = directions(inst, &g, aux, &terms, lambda, inst.ref_user());
    Ok(materialize(inst, &d, &terms, lambda))
}

fn materialize(
    inst: &ProblemInstance,
    d: &Directions<f64>,
    terms: &SurrogateTerms<f64>,
    lambda: f64,
) -> GradientSet {
    let u = inst.num_users();
    let m = inst.num_antennas();
    let h_r = inst.channel(inst.ref_user());
    let mut zeta = CMatrix::zeros(u, m);
    let mut o = CMatrix::zeros(u, m);
    let mut g_v = CMatrix::zeros(u, m);
    let mut beta = vec![vec![None; u]; u];
    for k in 0..u {
        zeta.row_mut(k)
            .copy_from_slice(&scaled_channel(d.zeta[k], inst.channel(k)));
        o.row_mut(k)
            .copy_from_slice(&scaled_channel(d.penalty[k], h_r));
        let mut coeff_sum = vec![Complex64::new(0.0, 0.0); m];
        for (i, slot) in coeff_sum.iter_mut().enumerate() {
            *slot = zeta.row(k)[i] / terms.phi[k] + o.row(k)[i];
        }
        for j in (0..u).filter(|&j| j != k) {
            let b = scaled_channel(d.beta[j][k], inst.channel(j));
            for (slot, bi) in coeff_sum.iter_mut().zip(&b) {
                *slot += bi / terms.phi[j];
            }
            beta[j][k] = Some(b);
        }
        g_v.row_mut(k).copy_from_slice(&coeff_sum);
    }
    GradientSet {
        g_rc: inst.weights().iter().map(|f| f - lambda).collect(),
        g_v0: scaled_channel(d.common, h_r),
        g_v,
        parts: Some(GradientParts {
            zeta,
            beta,
            o,
            phi0: terms.phi0,
            phi: terms.phi.clone(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub alpha_rc: Vec<f64>,
    pub alpha_v0: f64,
    pub alpha_v: Vec<f64>,
}

impl StepSizes {
    pub fn uniform(num_users: usize, alpha: f64) -> Self {
        Self {
            alpha_rc: vec![alpha; num_users],
            alpha_v0: alpha,
            alpha_v: vec![alpha; num_users],
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            alpha_rc: self.alpha_rc.iter().map(|a| a * factor).collect(),
            alpha_v0: self.alpha_v0 * factor,
            alpha_v: self.alpha_v.iter().map(|a| a * factor).collect(),
        }
    }

    fn validate(&self, num_users: usize) -> Result<()> {
        if self.alpha_rc.len() != num_users || self.alpha_v.len() != num_users {
            return Err(Error::DimensionMismatch {
                what: "per-user step sizes",
                expected: num_users,
                found: self.alpha_v.len().min(self.alpha_rc.len()),
            });
        }
        let ok = self
            .alpha_rc
            .iter()
            .chain(&self.alpha_v)
            .chain(std::iter::once(&self.alpha_v0))
            .all(|&a| a > 0.0 && a.is_finite());
        if !ok {
            return Err(Error::InvalidConfig("step sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Plain gradient-ascent update of rates and beamformers.
pub fn ascent_step(
    beams: &BeamformerSet,
    rc: &RateAllocation,
    grads: &GradientSet,
    steps: &StepSizes,
) -> (BeamformerSet, RateAllocation) {
    let tilde_rc = RateAllocation {
        rc: rc
            .rc
            .iter()
            .zip(&grads.g_rc)
            .zip(&steps.alpha_rc)
            .map(|((r, g), a)| r + a * g)
            .collect(),
    };
    let mut tilde = beams.clone();
    for (v, g) in tilde.v0.iter_mut().zip(&grads.g_v0) {
        *v += g * steps.alpha_v0;
    }
    for k in 0..tilde.v.rows() {
        let a = steps.alpha_v[k];
        for (v, g) in tilde.v.row_mut(k).iter_mut().zip(grads.g_v.row(k)) {
            *v += g * a;
        }
    }
    (tilde, tilde_rc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub lambda: f64,
    pub steps: StepSizes,
    /// Geometric step decay per iteration; 1.0 keeps steps fixed.
    pub step_decay: f64,
    pub max_iters: usize,
    /// Stop when successive WSR values differ by less than this.
    pub tol: f64,
    /// Inner ascent budget per outer FP iteration.
    pub inner_iters: usize,
    /// Initial inner ascent step for the FP oracle.
    pub inner_step: f64,
    pub rc_mode: RcMode,
    pub seed: u64,
}

impl SolverOptions {
    pub fn pgd(num_users: usize, seed: u64) -> Self {
        Self {
            lambda: 1.0,
            steps: StepSizes::uniform(num_users, 1e-3),
            step_decay: 0.999,
            max_iters: 2000,
            tol: 1e-7,
            inner_iters: 500,
            inner_step: 1e-3,
            rc_mode: RcMode::Simplified,
            seed,
        }
    }

    pub fn oracle(num_users: usize, seed: u64) -> Self {
        Self {
            max_iters: 100,
            tol: 1e-2,
            ..Self::pgd(num_users, seed)
        }
    }

    pub fn validate(&self, num_users: usize) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidConfig("lambda must be positive".into()));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 || self.inner_iters == 0 {
            return Err(Error::InvalidConfig(
                "tol, max_iters and inner_iters must be positive".into(),
            ));
        }
        if !(self.step_decay > 0.0) || !(self.inner_step > 0.0) {
            return Err(Error::InvalidConfig("step decay and inner step must be positive".into()));
        }
        self.steps.validate(num_users)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SolverTrace {
    pub wsr_per_iter: Vec<f64>,
    pub feasible_per_iter: Vec<bool>,
    pub iterations_used: usize,
    pub converged: bool,
}

impl SolverTrace {
    fn push(&mut self, wsr: f64, feasible: bool) {
        self.wsr_per_iter.push(wsr);
        self.feasible_per_iter.push(feasible);
        self.iterations_used = self.wsr_per_iter.len();
    }

    /// `iter,wsr,feasible` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iter,wsr,feasible")?;
        for (i, (w, f)) in self.wsr_per_iter.iter().zip(&self.feasible_per_iter).enumerate() {
            writeln!(out, "{},{},{}", i + 1, w, f)?;
        }
        Ok(())
    }
}

/// Point reached by a solver: beamformers, rates and their WSR.
#[derive(Debug, Clone)]
pub struct Solution {
    pub beams: BeamformerSet,
    pub rc: RateAllocation,
    pub wsr: f64,
}

/// I.i.d. standard complex Gaussian entries, projected onto the power set.
pub fn random_init(inst: &ProblemInstance, seed: u64) -> Result<BeamformerSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = BeamformerSet::<f64>::zeros(inst.num_users(), inst.num_antennas());
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for z in b.v0.iter_mut().chain(b.v.as_mut_slice()) {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *z = Complex64::new(re * s, im * s);
    }
    project_beamformers(&b, inst.power_budget(), inst.p0())
}

/// Maximum-ratio transmission with an equal power split: `v_k ∝ h_k` and the
/// common beamformer along the sum of normalized channels.
pub fn mrt_beamformers(inst: &ProblemInstance) -> BeamformerSet {
    let u = inst.num_users();
    let m = inst.num_antennas();
    let each = inst.power_budget() / (u as f64 + 1.0);
    let mut b = BeamformerSet::<f64>::zeros(u, m);
    for k in 0..u {
        let h = inst.channel(k);
        let n = norm_sqr(h).sqrt();
        for (v, x) in b.v.row_mut(k).iter_mut().zip(h) {
            *v += x / n;
        }
        for (v, x) in b.v0.iter_mut().zip(h) {
            *v += x / n;
        }
    }
    for s in 0..=u {
        let n = norm_sqr(b.stream(s)).sqrt();
        let scale = if n > 0.0 { each.sqrt() / n } else { 0.0 };
        for z in b.stream_mut(s) {
            *z *= scale;
        }
    }
    if norm_sqr(&b.v0) == 0.0 {
        b.v0 = inst.channel(0).iter().map(|x| x * (each / norm_sqr(inst.channel(0))).sqrt()).collect();
    }
    b
}

/// MRT beamformers with the common rate given to the highest-weight user.
pub fn mrt_solution(inst: &ProblemInstance) -> Solution {
    let beams = mrt_beamformers(inst);
    finish(inst, beams, None, RcMode::Simplified)
}

pub(crate) fn finish(
    inst: &ProblemInstance,
    beams: BeamformerSet,
    tilde_rc: Option<&RateAllocation>,
    mode: RcMode,
) -> Solution {
    let rates = rates_unchecked(inst, &beams);
    let rc = match tilde_rc {
        Some(t) => projection::common_rate_for(t, inst, rates.min_c, mode),
        None => simplified_rc(inst, rates.min_c),
    };
    let wsr = wsr_from_rates(inst, &rates, &rc);
    Solution { beams, rc, wsr }
}

/// Projected starting point: `init` if given, otherwise seeded Gaussian.
pub fn starting_point(
    inst: &ProblemInstance,
    init: Option<&BeamformerSet>,
    seed: u64,
) -> Result<Solution> {
    let beams = match init {
        Some(b) => {
            inst.check_beams(b)?;
            project_beamformers(b, inst.power_budget(), inst.p0())?
        }
        None => random_init(inst, seed)?,
    };
    Ok(finish(inst, beams, None, RcMode::Simplified))
}

/// One PGD iteration: auxiliaries, gradients, ascent, projections.
/// `iteration` (zero-based) selects the decayed step size.
pub fn pgd_iteration(
    inst: &ProblemInstance,
    state: &Solution,
    opts: &SolverOptions,
    iteration: usize,
) -> Result<Solution> {
    let g = Gains::new(inst, &state.beams);
    let aux = aux_from_gains(inst, &g);
    let grads = gradients(inst, &state.beams, &aux, opts.lambda)?;
    let steps = opts.steps.scaled(opts.step_decay.powi(iteration as i32));
    let (tilde, tilde_rc) = ascent_step(&state.beams, &state.rc, &grads, &steps);
    let beams = project_beamformers(&tilde, inst.power_budget(), inst.p0())?;
    Ok(finish(inst, beams, Some(&tilde_rc), opts.rc_mode))
}

/// Projected gradient ascent on the penalized objective until the WSR
/// change drops below `opts.tol` or `opts.max_iters` is reached.
pub fn solve_pgd(
    inst: &ProblemInstance,
    opts: &SolverOptions,
    init: Option<&BeamformerSet>,
) -> Result<(BeamformerSet, RateAllocation, SolverTrace)> {
    opts.validate(inst.num_users())?;
    let mut state = starting_point(inst, init, opts.seed)?;
    let mut trace = SolverTrace::default();
    for i in 0..opts.max_iters {
        let next = pgd_iteration(inst, &state, opts, i).map_err(|e| e.at_iteration(i))?;
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
