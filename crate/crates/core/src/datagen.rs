//! Instance sampling, oracle labeling and JSON Lines persistence.
//!
//! Every record owns an RNG substream (ChaCha8 keyed by the global seed, with
//! the record index as stream id), so a dataset is a pure function of
//! `(config, seed)` and records can be produced in any order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{wsr, ProblemInstance, SystemConfig};
use crate::scalar::CMatrix;
use crate::solver::{mrt_solution, solve_fp_oracle, SolverOptions};

pub const FORMAT_VERSION: &str = "1";

/// Generator for stream `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A 64-bit seed drawn from stream `index` under `seed`.
pub fn substream_seed(seed: u64, index: u64) -> u64 {
    substream(seed, index).next_u64()
}

/// Draws one instance: CN(0, channel_variance) channel entries, normalized
/// Uniform(0,1) weights and p0 ~ Uniform(0, p0_upper).
pub fn sample_instance<R: Rng + ?Sized>(
    config: &SystemConfig,
    rng: &mut R,
) -> Result<ProblemInstance> {
    config.validate()?;
    let u = config.num_users;
    let m = config.num_antennas;
    let normal = Normal::new(0.0, (config.channel_variance / 2.0).sqrt())
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let data = (0..u * m)
        .map(|_| Complex64::new(normal.sample(rng), normal.sample(rng)))
        .collect();
    let channels = CMatrix::from_flat(u, m, data).expect("u·m entries");
    let raw: Vec<f64> = loop {
        let draws: Vec<f64> = (0..u).map(|_| rng.random::<f64>()).collect();
        if draws.iter().sum::<f64>() > 0.0 {
            break draws;
        }
    };
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|x| x / total).collect();
    let p0 = rng.random::<f64>() * config.p0_upper;
    ProblemInstance::new(
        channels,
        weights,
        vec![config.noise_variance; u],
        p0,
        config.power_budget(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleMeta {
    pub iterations_used: usize,
    pub converged: bool,
    /// Seed of the restart that produced the label.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub instance: ProblemInstance,
    pub wsr_star: Option<f64>,
    pub oracle_meta: Option<OracleMeta>,
}

impl DatasetRecord {
    pub fn unlabeled(instance: ProblemInstance) -> Self {
        Self {
            instance,
            wsr_star: None,
            oracle_meta: None,
        }
    }

    pub fn label(&self, index: usize) -> Result<f64> {
        match self.wsr_star {
            None => Err(Error::MissingLabel { index }),
            Some(w) if !(w > 0.0) => Err(Error::NonPositiveLabel { index, value: w }),
            Some(w) => Ok(w),
        }
    }
}

/// Best oracle WSR over `restarts` random starts. Restart `r` uses
/// `substream_seed(opts.seed, r)`, so more restarts never lower the label.
pub fn label_instance(
    inst: &ProblemInstance,
    opts: &SolverOptions,
    restarts: usize,
) -> Result<DatasetRecord> {
    if restarts == 0 {
        return Err(Error::InvalidConfig("restarts must be at least 1".into()));
    }
    let mut best: Option<(f64, OracleMeta)> = None;
    let mut last_err = None;
    for r in 0..restarts {
        let seed = substream_seed(opts.seed, r as u64);
        let run = SolverOptions {
            seed,
            ..opts.clone()
        };
        match solve_fp_oracle(inst, &run, None) {
            Ok((beams, rc, trace)) => {
                let w = wsr(inst, &beams, &rc)?;
                if best.as_ref().is_none_or(|(b, _)| w > *b) {
                    best = Some((
                        w,
                        OracleMeta {
                            iterations_used: trace.iterations_used,
                            converged: trace.converged,
                            seed,
                        },
                    ));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((w, meta)) => Ok(DatasetRecord {
            instance: inst.clone(),
            wsr_star: Some(w),
            oracle_meta: Some(meta),
        }),
        None => Err(last_err.expect("at least one restart ran")),
    }
}

/// `n` unlabeled records; record `i` is sampled from substream `i` of `seed`.
pub fn generate(config: &SystemConfig, seed: u64, n: usize) -> Result<Vec<DatasetRecord>> {
    config.validate()?;
    (0..n)
        .into_par_iter()
        .map(|i| {
            sample_instance(config, &mut substream(seed, i as u64)).map(DatasetRecord::unlabeled)
        })
        .collect()
}

/// Labels every record; record `i` uses oracle seed `substream_seed(seed, i)`.
pub fn label_records(
    records: &[DatasetRecord],
    opts: &SolverOptions,
    seed: u64,
    restarts: usize,
) -> Result<Vec<DatasetRecord>> {
    records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let o = SolverOptions {
                seed: substream_seed(seed, i as u64),
                ..opts.clone()
            };
            label_instance(&rec.instance, &o, restarts).map_err(|e| e.at_sample(i))
        })
        .collect()
}

/// Indices of labeled records whose label falls below the MRT heuristic.
pub fn mrt_violations(records: &[DatasetRecord]) -> Vec<usize> {
    records
        .iter()
        .enumerate()
        .filter(|(_, r)| {
            r.wsr_star
                .is_some_and(|w| w < mrt_solution(&r.instance).wsr)
        })
        .map(|(i, _)| i)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: String,
    pub config: SystemConfig,
    pub seed: u64,
    pub record_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

impl DatasetFile {
    pub fn new(config: SystemConfig, seed: u64, records: Vec<DatasetRecord>) -> Self {
        Self {
            header: DatasetHeader {
                format_version: FORMAT_VERSION.into(),
                config,
                seed,
                record_count: records.len(),
            },
            records,
        }
    }
}

pub fn write_dataset(path: &Path, file: &DatasetFile) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = DatasetHeader {
        record_count: file.records.len(),
        ..file.header.clone()
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for rec in &file.records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<DatasetFile> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let format = |line: usize, e: &dyn std::fmt::Display| Error::Format {
        line,
        message: e.to_string(),
    };
    let header: DatasetHeader = match lines.next() {
        None => {
            return Err(Error::Format {
                line: 1,
                message: "missing header".into(),
            })
        }
        Some((_, line)) => {
            let line = line?;
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(|e| format(1, &e))?;
            let version = value
                .get("format_version")
                .and_then(|v| v.as_str())
                .unwrap_or_default();
            if version != FORMAT_VERSION {
                return Err(Error::VersionMismatch {
                    found: version.into(),
                    expected: FORMAT_VERSION.into(),
                });
            }
            serde_json::from_value(value).map_err(|e| format(1, &e))?
        }
    };
    let mut records = Vec::with_capacity(header.record_count);
    for (i, line) in lines {
        let n = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if records.len() == header.record_count {
            return Err(Error::Format {
                line: n,
                message: format!("more records than the {} announced", header.record_count),
            });
        }
        records.push(serde_json::from_str(&line).map_err(|e| format(n, &e))?);
    }
    if records.len() != header.record_count {
        return Err(Error::Truncated {
            expected: header.record_count,
            found: records.len(),
        });
    }
    Ok(DatasetFile { header, records })
}
