//! Deep-unfolded projected gradient ascent.
//!
//! Each layer performs one PGD step in which the direction terms are
//! reweighted by learnable coefficients and scaled by a learnable linear
//! function of the environment vector `[f_1..f_U, p0, budget]`. The forward
//! pass is generic over [`Real`], so the same code runs on `f64` and on the
//! reverse-mode tape.

mod params;
mod train;

use crate::error::Result;
use crate::fp::{aux_from_gains, terms_from_gains};
use crate::model::{wsr_from_rates, BeamformerSet, Gains, ProblemInstance, RateAllocation};
use crate::scalar::{axpy_const, c_scale, Real, LN_2};
use crate::solver::{directions, project_beamformers, random_init, simplified_rc};

pub use params::{init_params, InitScheme, LayerParams, NetworkParams};
pub use train::{
    batch_loss, param_gradients, train, Adam, BatchEval, GradMode, Sample, TrainConfig,
    TrainRecord,
};

/// `[f_1, ..., f_U, p0, power_budget]`
pub fn env_vector(inst: &ProblemInstance) -> Vec<f64> {
    let mut env = inst.weights().to_vec();
    env.push(inst.p0());
    env.push(inst.power_budget());
    env
}

/// Output of one layer.
#[derive(Debug, Clone)]
pub struct LayerState<T = f64> {
    pub beams: BeamformerSet<T>,
    pub rc: RateAllocation<T>,
    pub wsr_hat: T,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerState>,
}

impl ForwardTrace {
    pub fn final_wsr(&self) -> f64 {
        self.layers.last().map_or(0.0, |l| l.wsr_hat)
    }

    pub fn wsr_per_layer(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.wsr_hat).collect()
    }
}

fn dot<T: Real>(env: &[f64], w: &[T]) -> T {
    env.iter()
        .zip(w)
        .fold(T::zero(), |acc, (&e, &x)| acc + x * e)
}

/// Reweighted ascent update before projection. With `z_backprop = false`
/// the auxiliaries are treated as constants.
fn tilde_update<T: Real>(
    inst: &ProblemInstance,
    beams: &BeamformerSet<T>,
    gains: &Gains<T>,
    theta: &LayerParams<T>,
    lambda: f64,
    z_backprop: bool,
) -> Result<BeamformerSet<T>> {
    let u = inst.num_users();
    let r = inst.ref_user();
    let mut aux = aux_from_gains(inst, gains);
    if !z_backprop {
        aux = aux.detach();
    }
    let terms = terms_from_gains(inst, gains, &aux);
    terms.check_positive()?;
    let d = directions(inst, gains, &aux, &terms, lambda, r);
    let env = env_vector(inst);

    let mut tilde = beams.clone();
    let s0 = dot(&env, &theta.w0) * (LN_2 / lambda);
    axpy_const(&mut tilde.v0, c_scale(d.common, s0), inst.channel(r));
    for k in 0..u {
        let s = dot(&env, &theta.w[k]) * LN_2;
        let eta = &theta.eta[k];
        let row = tilde.v.row_mut(k);
        let own = c_scale(d.zeta[k], s * eta[0] / terms.phi[k]);
        axpy_const(row, own, inst.channel(k));
        for (slot, j) in (0..u).filter(|&j| j != k).enumerate() {
            let c = c_scale(d.beta[j][k], s * eta[slot + 1] / terms.phi[j]);
            axpy_const(row, c, inst.channel(j));
        }
        let pen = c_scale(d.penalty[k], s * eta[u] / lambda);
        axpy_const(row, pen, inst.channel(r));
    }
    Ok(tilde)
}

fn layer_step<T: Real>(
    inst: &ProblemInstance,
    beams: &BeamformerSet<T>,
    gains: &Gains<T>,
    theta: &LayerParams<T>,
    lambda: f64,
    z_backprop: bool,
) -> Result<(LayerState<T>, Gains<T>)> {
    let tilde = tilde_update(inst, beams, gains, theta, lambda, z_backprop)?;
    let beams = project_beamformers(&tilde, inst.power_budget(), inst.p0())?;
    let gains = Gains::new(inst, &beams);
    let rates = gains.rates(inst);
    let rc = simplified_rc(inst, rates.min_c);
    let wsr_hat = wsr_from_rates(inst, &rates, &rc);
    Ok((
        LayerState {
            beams,
            rc,
            wsr_hat,
        },
        gains,
    ))
}

/// Applies every layer to `init`; errors carry the one-based layer index.
pub(crate) fn unrolled<T: Real>(
    inst: &ProblemInstance,
    init: &BeamformerSet,
    layers: &[LayerParams<T>],
    lambda: f64,
    z_backprop: bool,
) -> Result<Vec<LayerState<T>>> {
    let mut beams: BeamformerSet<T> = init.lift();
    let mut gains = Gains::new(inst, &beams);
    let mut out = Vec::with_capacity(layers.len());
    for (n, theta) in layers.iter().enumerate() {
        let (state, g) = layer_step(inst, &beams, &gains, theta, lambda, z_backprop)
            .map_err(|e| e.at_layer(n + 1))?;
        beams = state.beams.clone();
        gains = g;
        out.push(state);
    }
    Ok(out)
}

/// One layer applied to `beams` in plain arithmetic.
pub fn layer_forward(
    inst: &ProblemInstance,
    beams: &BeamformerSet,
    theta: &LayerParams,
    lambda: f64,
) -> Result<LayerState> {
    inst.check_beams(beams)?;
    theta.check_shape(inst.num_users())?;
    Ok(layer_step(inst, beams, &Gains::new(inst, beams), theta, lambda, true)?.0)
}

/// The layer's update before projection.
pub fn layer_update(
    inst: &ProblemInstance,
    beams: &BeamformerSet,
    theta: &LayerParams,
    lambda: f64,
) -> Result<BeamformerSet> {
    inst.check_beams(beams)?;
    theta.check_shape(inst.num_users())?;
    tilde_update(inst, beams, &Gains::new(inst, beams), theta, lambda, true)
}

/// Runs the network from the seeded Gaussian initialization shared with the
/// PGD solver.
pub fn network_forward(
    inst: &ProblemInstance,
    params: &NetworkParams,
    seed: u64,
) -> Result<ForwardTrace> {
    params.check_shape(inst.num_users())?;
    let init = random_init(inst, seed)?;
    forward_from(inst, params, &init)
}

pub fn forward_from(
    inst: &ProblemInstance,
    params: &NetworkParams,
    init: &BeamformerSet,
) -> Result<ForwardTrace> {
    params.check_shape(inst.num_users())?;
    inst.check_beams(init)?;
    let layers = unrolled(inst, init, &params.layers, params.lambda, true)?;
    Ok(ForwardTrace { layers })
}
