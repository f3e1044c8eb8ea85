use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::params::split_layers;
use super::{unrolled, ForwardTrace, NetworkParams};
use crate::datagen::{substream, substream_seed, DatasetRecord};
use crate::error::{Error, Result};
use crate::model::{BeamformerSet, ProblemInstance};
use crate::scalar::Real;
use crate::solver::random_init;
use crate::tape::Session;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMode {
    #[default]
    Reverse,
    FiniteDiff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_mode: GradMode,
    /// Differentiate through the auxiliary updates.
    pub z_backprop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.003,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            grad_mode: GradMode::Reverse,
            z_backprop: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "learning rate must be non-negative and batch size positive".into(),
            ));
        }
        Ok(())
    }
}

/// A labeled instance with its fixed starting beamformers.
#[derive(Debug, Clone)]
pub struct Sample {
    pub instance: ProblemInstance,
    pub wsr_star: f64,
    pub init: BeamformerSet,
}

impl Sample {
    pub fn new(instance: ProblemInstance, wsr_star: f64, init_seed: u64) -> Result<Self> {
        let init = random_init(&instance, init_seed)?;
        Ok(Self {
            instance,
            wsr_star,
            init,
        })
    }

    /// Record `i` starts from `random_init` seeded with `substream_seed(seed, i)`.
    pub fn from_records(records: &[DatasetRecord], seed: u64) -> Result<Vec<Self>> {
        records
            .iter()
            .enumerate()
            .map(|(i, r)| Sample::new(r.instance.clone(), r.label(i)?, substream_seed(seed, i as u64)))
            .collect()
    }
}

fn layer_weight(n: usize) -> f64 {
    ((n + 1) as f64).log2()
}

/// Σ_n log2(n+1)·(wsr* − wsr_n) for one sample, unnormalized; `n` is one-based.
fn weighted_gap<T: Real>(wsr_per_layer: &[T], wsr_star: f64) -> T {
    wsr_per_layer
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (i, &w)| acc + (-w + wsr_star) * layer_weight(i + 1))
}

/// (1/(QN)) Σ_q Σ_n log2(n+1)·(wsr*_q − wsr_hat_{q,n})
pub fn batch_loss(traces: &[ForwardTrace], labels: &[f64]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if traces.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            what: "labels",
            expected: traces.len(),
            found: labels.len(),
        });
    }
    let n = traces[0].layers.len();
    if n == 0 || traces.iter().any(|t| t.layers.len() != n) {
        return Err(Error::ShapeMismatch("traces need the same positive depth".into()));
    }
    let total: f64 = traces
        .iter()
        .zip(labels)
        .map(|(t, &s)| weighted_gap(&t.wsr_per_layer(), s))
        .sum();
    Ok(total / (traces.len() * n) as f64)
}

/// Loss, gradient over the flattened parameters and each sample's final WSR.
#[derive(Debug, Clone)]
pub struct BatchEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub final_wsr: Vec<f64>,
}

fn sample_reverse(
    s: &Sample,
    params: &NetworkParams,
    flat: &[f64],
    z_backprop: bool,
) -> Result<(f64, Vec<f64>, f64)> {
    let tape = Session::new();
    let leaves: Vec<_> = flat.iter().map(|&x| tape.leaf(x)).collect();
    let layers = split_layers(params.num_users(), &leaves);
    let out = unrolled(&s.instance, &s.init, &layers, params.lambda, z_backprop)?;
    let wsr: Vec<_> = out.iter().map(|l| l.wsr_hat).collect();
    let gap = weighted_gap(&wsr, s.wsr_star);
    let adj = tape.backward(gap);
    let grad = leaves.iter().map(|&v| adj.of(v)).collect();
    Ok((gap.value(), grad, wsr.last().map_or(0.0, |w| w.value())))
}

fn sample_plain(s: &Sample, params: &NetworkParams) -> Result<(f64, f64)> {
    let out = unrolled(&s.instance, &s.init, &params.layers, params.lambda, true)?;
    let wsr: Vec<f64> = out.iter().map(|l| l.wsr_hat).collect();
    Ok((weighted_gap(&wsr, s.wsr_star), *wsr.last().expect("layers")))
}

/// Mean loss over `samples` and its gradient with respect to every parameter,
/// by reverse accumulation through the unrolled network or by central
/// differences (step 1e-5). Per-sample results are reduced in index order.
pub fn param_gradients(
    samples: &[Sample],
    params: &NetworkParams,
    mode: GradMode,
    z_backprop: bool,
) -> Result<BatchEval> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    for s in samples {
        params.check_shape(s.instance.num_users())?;
    }
    let norm = (samples.len() * params.num_layers()) as f64;
    let flat = params.to_flat();
    match mode {
        GradMode::Reverse => {
            let per: Vec<(f64, Vec<f64>, f64)> = samples
                .par_iter()
                .enumerate()
                .map(|(i, s)| sample_reverse(s, params, &flat, z_backprop).map_err(|e| e.at_sample(i)))
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; flat.len()];
            let mut loss = 0.0;
            for (l, g, _) in &per {
                loss += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            grad.iter_mut().for_each(|g| *g /= norm);
            Ok(BatchEval {
                loss: loss / norm,
                grad,
                final_wsr: per.into_iter().map(|p| p.2).collect(),
            })
        }
        GradMode::FiniteDiff => {
            let eval = |p: &NetworkParams| -> Result<(f64, Vec<f64>)> {
                let per: Vec<(f64, f64)> = samples
                    .iter()
                    .enumerate()
                    .map(|(i, s)| sample_plain(s, p).map_err(|e| e.at_sample(i)))
                    .collect::<Result<_>>()?;
                Ok((
                    per.iter().map(|x| x.0).sum::<f64>() / norm,
                    per.iter().map(|x| x.1).collect(),
                ))
            };
            let (loss, final_wsr) = eval(params)?;
            let h = 1e-5;
            let grad = (0..flat.len())
                .map(|i| {
                    let mut up = flat.clone();
                    up[i] += h;
                    let mut down = flat.clone();
                    down[i] -= h;
                    let lu = eval(&params.with_flat(&up))?.0;
                    let ld = eval(&params.with_flat(&down))?.0;
                    Ok((lu - ld) / (2.0 * h))
                })
                .collect::<Result<_>>()?;
            Ok(BatchEval {
                loss,
                grad,
                final_wsr,
            })
        }
    }
}

/// Adaptive moment estimation with decay rates 0.9/0.999 and epsilon 1e-8.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(lr: f64, len: usize) -> Self {
        Self {
            lr,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Descent step on `x` along `grad`.
    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean final-layer WSR ratio over the epoch's batches, each evaluated
    /// with the parameters in effect before that batch's update.
    pub train_asr: f64,
}

impl TrainRecord {
    pub fn write_csv<W: Write>(history: &[TrainRecord], mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,mean_loss,train_asr")?;
        for r in history {
            writeln!(out, "{},{},{}", r.epoch, r.mean_loss, r.train_asr)?;
        }
        Ok(())
    }
}

/// Minibatch training with Adam. Batches are drawn from a fresh shuffle of
/// the samples every epoch; everything is a function of `config.seed`.
pub fn train(
    samples: &[Sample],
    init: &NetworkParams,
    config: &TrainConfig,
) -> Result<(NetworkParams, Vec<TrainRecord>)> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut flat = init.to_flat();
    let mut params = init.clone();
    let mut adam = Adam::new(config.learning_rate, flat.len());
    let mut rng = substream(config.seed, u64::MAX);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut ratio_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Sample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let eval = param_gradients(&batch, &params, config.grad_mode, config.z_backprop)?;
            loss_sum += eval.loss * batch.len() as f64;
            ratio_sum += eval
                .final_wsr
                .iter()
                .zip(&batch)
                .map(|(w, s)| w / s.wsr_star)
                .sum::<f64>();
            adam.step(&mut flat, &eval.grad);
            params = params.with_flat(&flat);
        }
        let n = samples.len() as f64;
        history.push(TrainRecord {
            epoch,
            mean_loss: loss_sum / n,
            train_asr: ratio_sum / n,
        });
    }
    Ok((params, history))
}
