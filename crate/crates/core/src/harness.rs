//! Evaluation harness: ASR metric, out-of-distribution transforms and
//! runtime measurement.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::datagen::{label_records, substream_seed, DatasetFile, DatasetRecord};
use crate::error::{Error, Result};
use crate::model::dbm_to_watts;
use crate::solver::{solve_fp_oracle, solve_pgd, SolverOptions};
use crate::unfold::{network_forward, NetworkParams};
use crate::model::wsr;

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub asr: f64,
    pub per_sample_ratio: Vec<f64>,
    pub n_samples: usize,
}

/// Mean of `wsr_hat[q] / wsr_star[q]`.
pub fn asr(wsr_hat: &[f64], wsr_star: &[f64]) -> Result<Metrics> {
    if wsr_hat.len() != wsr_star.len() {
        return Err(Error::DimensionMismatch {
            what: "achieved and reference WSR",
            expected: wsr_star.len(),
            found: wsr_hat.len(),
        });
    }
    if wsr_star.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some((index, &value)) = wsr_star.iter().enumerate().find(|(_, w)| !(**w > 0.0)) {
        return Err(Error::NonPositiveLabel { index, value });
    }
    let per_sample_ratio: Vec<f64> = wsr_hat.iter().zip(wsr_star).map(|(h, s)| h / s).collect();
    Ok(Metrics {
        asr: per_sample_ratio.iter().sum::<f64>() / per_sample_ratio.len() as f64,
        n_samples: per_sample_ratio.len(),
        per_sample_ratio,
    })
}

fn labels(records: &[DatasetRecord]) -> Result<Vec<f64>> {
    records.iter().enumerate().map(|(i, r)| r.label(i)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Final-layer metrics.
    pub metrics: Metrics,
    /// Mean ASR after each layer.
    pub per_layer_asr: Vec<f64>,
}

/// Runs the network on every record (record `i` starts from
/// `random_init` seeded with `substream_seed(seed, i)`).
pub fn evaluate(records: &[DatasetRecord], params: &NetworkParams, seed: u64) -> Result<Evaluation> {
    let stars = labels(records)?;
    for r in records {
        params.check_shape(r.instance.num_users())?;
    }
    let per_layer: Vec<Vec<f64>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            network_forward(&r.instance, params, substream_seed(seed, i as u64))
                .map(|t| t.wsr_per_layer())
                .map_err(|e| e.at_sample(i))
        })
        .collect::<Result<_>>()?;
    let n = params.num_layers();
    let per_layer_asr = (0..n)
        .map(|l| {
            per_layer
                .iter()
                .zip(&stars)
                .map(|(w, s)| w[l] / s)
                .sum::<f64>()
                / records.len() as f64
        })
        .collect();
    let finals: Vec<f64> = per_layer.iter().map(|w| w[n - 1]).collect();
    Ok(Evaluation {
        metrics: asr(&finals, &stars)?,
        per_layer_asr,
    })
}

/// ASR of the PGD solver started from the same initializations as [`evaluate`].
pub fn evaluate_pgd(records: &[DatasetRecord], opts: &SolverOptions, seed: u64) -> Result<Metrics> {
    let stars = labels(records)?;
    let hats: Vec<f64> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let o = SolverOptions {
                seed: substream_seed(seed, i as u64),
                ..opts.clone()
            };
            let (b, rc, _) = solve_pgd(&r.instance, &o, None).map_err(|e| e.at_sample(i))?;
            wsr(&r.instance, &b, &rc)
        })
        .collect::<Result<_>>()?;
    asr(&hats, &stars)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scenario {
    /// Channel amplitudes scaled by 10^(Δ/20).
    SnrShift(f64),
    /// Maximum transmit power moved by Δ dBm, circuit power kept.
    PmaxShift(f64),
}

impl FromStr for Scenario {
    type Err = Error;

    /// `snr+5`, `snr-5`, `pmax+1`, `pmax-1`, ...
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown scenario {s:?}"));
        let (ctor, rest): (fn(f64) -> Scenario, &str) = if let Some(r) = s.strip_prefix("snr") {
            (Scenario::SnrShift, r)
        } else if let Some(r) = s.strip_prefix("pmax") {
            (Scenario::PmaxShift, r)
        } else {
            return Err(bad());
        };
        if !(rest.starts_with('+') || rest.starts_with('-')) {
            return Err(bad());
        }
        let delta: f64 = rest.parse().map_err(|_| bad())?;
        if !delta.is_finite() {
            return Err(bad());
        }
        Ok(ctor(delta))
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::SnrShift(d) => write!(f, "snr{d:+}"),
            Scenario::PmaxShift(d) => write!(f, "pmax{d:+}"),
        }
    }
}

/// Oracle settings used to label transformed records.
#[derive(Debug, Clone)]
pub struct Relabel {
    pub opts: SolverOptions,
    pub seed: u64,
    pub restarts: usize,
}

/// Applies `scenario` to every record and relabels with the oracle.
pub fn ood_transform(file: &DatasetFile, scenario: Scenario, relabel: &Relabel) -> Result<DatasetFile> {
    let mut config = file.header.config.clone();
    let shifted: Vec<DatasetRecord> = match scenario {
        Scenario::SnrShift(db) => {
            let gain = 10f64.powf(db / 20.0);
            config.channel_variance *= 10f64.powf(db / 10.0);
            file.records
                .iter()
                .map(|r| r.instance.with_channel_gain(gain).map(DatasetRecord::unlabeled))
                .collect::<Result<_>>()?
        }
        Scenario::PmaxShift(dbm) => {
            config.p_max_dbm += dbm;
            let budget = dbm_to_watts(config.p_max_dbm) - dbm_to_watts(config.p_c_dbm);
            file.records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let floor = (r.instance.num_users() as f64 + 1.0) * r.instance.p0();
                    if !(budget > floor) {
                        return Err(Error::InfeasibleShift {
                            record: i,
                            budget,
                            floor,
                        });
                    }
                    r.instance.with_power_budget(budget).map(DatasetRecord::unlabeled)
                })
                .collect::<Result<_>>()?
        }
    };
    let records = label_records(&shifted, &relabel.opts, relabel.seed, relabel.restarts)?;
    Ok(DatasetFile::new(config, file.header.seed, records))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSummary {
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

/// Wall-clock samples in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Timings(pub Vec<f64>);

impl Timings {
    fn sorted(&self) -> Vec<f64> {
        let mut t = self.0.clone();
        t.sort_by(f64::total_cmp);
        t
    }

    /// Nearest-rank quantile, `q` in [0, 1].
    pub fn quantile(&self, q: f64) -> f64 {
        let t = self.sorted();
        if t.is_empty() {
            return f64::NAN;
        }
        let rank = ((q * t.len() as f64).ceil() as usize).clamp(1, t.len());
        t[rank - 1]
    }

    pub fn summary(&self) -> TimingSummary {
        TimingSummary {
            mean: self.0.iter().sum::<f64>() / self.0.len() as f64,
            median: self.quantile(0.5),
            p95: self.quantile(0.95),
        }
    }

    /// `(time, fraction of samples ≤ time)` at every sample.
    pub fn cdf(&self) -> Vec<(f64, f64)> {
        let t = self.sorted();
        let n = t.len() as f64;
        t.iter()
            .enumerate()
            .map(|(i, &x)| (x, (i + 1) as f64 / n))
            .collect()
    }

    pub fn write_cdf_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time_s,cumulative_fraction")?;
        for (t, p) in self.cdf() {
            writeln!(out, "{t:e},{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingStats {
    pub du: Timings,
    pub fp: Timings,
}

/// Times the network forward pass and the FP oracle on every record,
/// `repetitions` times each, on the calling thread. One untimed run of each
/// precedes the measurements.
pub fn bench(
    records: &[DatasetRecord],
    params: &NetworkParams,
    oracle_opts: &SolverOptions,
    repetitions: usize,
    seed: u64,
) -> Result<TimingStats> {
    if repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
    }
    if records.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let first = &records[0].instance;
    network_forward(first, params, seed)?;
    solve_fp_oracle(first, oracle_opts, None)?;
    let mut du = Vec::with_capacity(records.len() * repetitions);
    let mut fp = Vec::with_capacity(records.len() * repetitions);
    for _ in 0..repetitions {
        for (i, r) in records.iter().enumerate() {
            let s = substream_seed(seed, i as u64);
            let t = Instant::now();
            std::hint::black_box(network_forward(&r.instance, params, s)?);
            du.push(t.elapsed().as_secs_f64());
            let o = SolverOptions {
                seed: s,
                ..oracle_opts.clone()
            };
            let t = Instant::now();
            std::hint::black_box(solve_fp_oracle(&r.instance, &o, None)?);
            fp.push(t.elapsed().as_secs_f64());
        }
    }
    Ok(TimingStats {
        du: Timings(du),
        fp: Timings(fp),
    })
}
