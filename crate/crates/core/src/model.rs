//! Downlink RSMA system model: problem data, decision variables, achievable
//! rates and the weighted-sum-rate objective.
//!
//! User indices are zero-based throughout. Where a formula ranges over all
//! `U + 1` streams, stream 0 is the common stream and stream `k + 1` is the
//! private stream of user `k`.

use num_complex::{Complex, Complex64};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{abs2, hdot, norm_sqr, CMatrix, Real};

/// 10^((x − 30)/10)
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Scenario parameters from which instances are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub num_users: usize,
    pub num_antennas: usize,
    pub p_max_dbm: f64,
    pub p_c_dbm: f64,
    /// Upper end of the uniform draw for the per-beamformer minimum power, in watts.
    pub p0_upper: f64,
    /// Per-entry variance of each channel vector.
    pub channel_variance: f64,
    pub noise_variance: f64,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_users: 3,
            num_antennas: 12,
            p_max_dbm: 33.0,
            p_c_dbm: 30.0,
            p0_upper: 0.125,
            channel_variance: 10.0,
            noise_variance: 1.0,
            seed: 0,
        }
    }
}

impl SystemConfig {
    /// Transmit budget left after circuit power, in watts.
    pub fn power_budget(&self) -> f64 {
        dbm_to_watts(self.p_max_dbm) - dbm_to_watts(self.p_c_dbm)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_users == 0 || self.num_antennas == 0 {
            return bad("num_users and num_antennas must be positive".into());
        }
        if !(self.p_max_dbm > self.p_c_dbm) {
            return bad(format!(
                "p_max_dbm ({}) must exceed p_c_dbm ({})",
                self.p_max_dbm, self.p_c_dbm
            ));
        }
        if !(self.channel_variance > 0.0 && self.noise_variance > 0.0) {
            return bad("channel and noise variances must be positive".into());
        }
        if !(self.p0_upper >= 0.0) {
            return bad("p0_upper must be non-negative".into());
        }
        let floor = (self.num_users as f64 + 1.0) * self.p0_upper;
        if !(self.power_budget() > floor) {
            return bad(format!(
                "power budget {} W must exceed (U+1)·p0_upper = {floor} W",
                self.power_budget()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
struct RawInstance {
    channels: Vec<Vec<Complex64>>,
    weights: Vec<f64>,
    noise_var: Vec<f64>,
    p0: f64,
    power_budget: f64,
}

/// One channel realization together with weights, noise and power limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance")]
pub struct ProblemInstance {
    #[serde(serialize_with = "serialize_channels")]
    channels: CMatrix,
    weights: Vec<f64>,
    noise_var: Vec<f64>,
    p0: f64,
    power_budget: f64,
    #[serde(skip_serializing)]
    ref_user: usize,
}

fn serialize_channels<S: serde::Serializer>(
    m: &CMatrix,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    m.to_rows().serialize(s)
}

impl TryFrom<RawInstance> for ProblemInstance {
    type Error = Error;

    fn try_from(raw: RawInstance) -> Result<Self> {
        let channels = CMatrix::from_rows(raw.channels).ok_or_else(|| {
            Error::InvalidConfig("channel rows have unequal lengths".into())
        })?;
        ProblemInstance::new(channels, raw.weights, raw.noise_var, raw.p0, raw.power_budget)
    }
}

impl ProblemInstance {
    pub fn new(
        channels: CMatrix,
        weights: Vec<f64>,
        noise_var: Vec<f64>,
        p0: f64,
        power_budget: f64,
    ) -> Result<Self> {
        let u = channels.rows();
        if u == 0 || channels.cols() == 0 {
            return Err(Error::InvalidConfig("empty channel matrix".into()));
        }
        for (what, len) in [("weights", weights.len()), ("noise_var", noise_var.len())] {
            if len != u {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: u,
                    found: len,
                });
            }
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || weights.iter().any(|&f| !(f >= 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "weights must lie on the simplex (sum = {total})"
            )));
        }
        if noise_var.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig("noise variances must be positive".into()));
        }
        if !(p0 >= 0.0) {
            return Err(Error::InvalidConfig(format!("p0 = {p0} must be >= 0")));
        }
        let floor = (u as f64 + 1.0) * p0;
        if !(power_budget > floor) {
            return Err(Error::InvalidConfig(format!(
                "power budget {power_budget} W must exceed (U+1)·p0 = {floor} W"
            )));
        }
        let ref_user = weakest_user(&channels);
        Ok(Self {
            channels,
            weights,
            noise_var,
            p0,
            power_budget,
            ref_user,
        })
    }

    pub fn num_users(&self) -> usize {
        self.channels.rows()
    }

    pub fn num_antennas(&self) -> usize {
        self.channels.cols()
    }

    pub fn channels(&self) -> &CMatrix {
        &self.channels
    }

    pub fn channel(&self, k: usize) -> &[Complex64] {
        self.channels.row(k)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn noise_var(&self) -> &[f64] {
        &self.noise_var
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn power_budget(&self) -> f64 {
        self.power_budget
    }

    /// User with the smallest channel norm (lowest index on ties).
    pub fn ref_user(&self) -> usize {
        self.ref_user
    }

    /// Lowest index among the users carrying the largest weight.
    pub fn max_weight_user(&self) -> usize {
        let mut best = 0;
        for (k, &f) in self.weights.iter().enumerate() {
            if f > self.weights[best] {
                best = k;
            }
        }
        best
    }

    /// Same instance with every channel entry multiplied by `gain`.
    pub fn with_channel_gain(&self, gain: f64) -> Result<Self> {
        let channels = self.channels.map(|h| h * gain);
        Self::new(
            channels,
            self.weights.clone(),
            self.noise_var.clone(),
            self.p0,
            self.power_budget,
        )
    }

    pub fn with_power_budget(&self, power_budget: f64) -> Result<Self> {
        Self::new(
            self.channels.clone(),
            self.weights.clone(),
            self.noise_var.clone(),
            self.p0,
            power_budget,
        )
    }

    pub fn with_noise_var(&self, noise_var: Vec<f64>) -> Result<Self> {
        Self::new(
            self.channels.clone(),
            self.weights.clone(),
            noise_var,
            self.p0,
            self.power_budget,
        )
    }

    pub(crate) fn check_beams<T: Real>(&self, beams: &BeamformerSet<T>) -> Result<()> {
        let m = self.num_antennas();
        let u = self.num_users();
        if beams.v0.len() != m {
            return Err(Error::DimensionMismatch {
                what: "common beamformer length",
                expected: m,
                found: beams.v0.len(),
            });
        }
        if beams.v.rows() != u {
            return Err(Error::DimensionMismatch {
                what: "number of private beamformers",
                expected: u,
                found: beams.v.rows(),
            });
        }
        if beams.v.cols() != m {
            return Err(Error::DimensionMismatch {
                what: "private beamformer length",
                expected: m,
                found: beams.v.cols(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_rc<T>(&self, rc: &RateAllocation<T>) -> Result<()> {
        if rc.rc.len() != self.num_users() {
            return Err(Error::DimensionMismatch {
                what: "common-rate allocation",
                expected: self.num_users(),
                found: rc.rc.len(),
            });
        }
        Ok(())
    }
}

fn weakest_user(channels: &CMatrix) -> usize {
    let norms: Vec<f64> = (0..channels.rows())
        .map(|k| norm_sqr(channels.row(k)))
        .collect();
    let mut best = 0;
    for (k, &n) in norms.iter().enumerate() {
        if n < norms[best] {
            best = k;
        }
    }
    best
}

/// Common beamformer `v0` and private beamformers, one row per user.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet<T = f64> {
    pub v0: Vec<Complex<T>>,
    pub v: CMatrix<T>,
}

impl<T: Real> BeamformerSet<T> {
    pub fn zeros(num_users: usize, num_antennas: usize) -> Self {
        Self {
            v0: vec![crate::scalar::c_zero(); num_antennas],
            v: CMatrix::zeros(num_users, num_antennas),
        }
    }

    pub fn num_users(&self) -> usize {
        self.v.rows()
    }

    /// Stream `0` is the common beamformer, stream `k + 1` the private one of user `k`.
    pub fn stream(&self, s: usize) -> &[Complex<T>] {
        if s == 0 {
            &self.v0
        } else {
            self.v.row(s - 1)
        }
    }

    pub fn stream_mut(&mut self, s: usize) -> &mut [Complex<T>] {
        if s == 0 {
            &mut self.v0
        } else {
            self.v.row_mut(s - 1)
        }
    }

    pub fn total_power(&self) -> T {
        norm_sqr(&self.v0) + norm_sqr(self.v.as_slice())
    }

    pub fn values(&self) -> BeamformerSet<f64> {
        BeamformerSet {
            v0: self.v0.iter().map(|z| crate::scalar::c_value(*z)).collect(),
            v: self.v.map(crate::scalar::c_value),
        }
    }
}

impl BeamformerSet<f64> {
    pub fn lift<T: Real>(&self) -> BeamformerSet<T> {
        BeamformerSet {
            v0: self.v0.iter().map(|z| crate::scalar::c_cst(*z)).collect(),
            v: self.v.map(crate::scalar::c_cst),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.v0
            .iter()
            .chain(self.v.as_slice())
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest absolute entrywise difference to `other`.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.v0
            .iter()
            .chain(self.v.as_slice())
            .zip(other.v0.iter().chain(other.v.as_slice()))
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Common-stream rate shares R_k^c.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateAllocation<T = f64> {
    pub rc: Vec<T>,
}

impl<T: Real> RateAllocation<T> {
    pub fn zeros(num_users: usize) -> Self {
        Self {
            rc: vec![T::zero(); num_users],
        }
    }

    pub fn values(&self) -> RateAllocation<f64> {
        RateAllocation {
            rc: self.rc.iter().map(|r| r.value()).collect(),
        }
    }
}

/// Per-user common capacities and private rates, bits/s/Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport<T = f64> {
    pub c: Vec<T>,
    pub rp: Vec<T>,
    pub min_c: T,
    pub min_c_user: usize,
}

/// Cross gains `h_k^H v_s` for every user `k` and stream `s`.
pub(crate) struct Gains<T> {
    /// `a[k][s]`, stream 0 is common.
    pub a: Vec<Vec<Complex<T>>>,
}

impl<T: Real> Gains<T> {
    pub fn new(inst: &ProblemInstance, beams: &BeamformerSet<T>) -> Self {
        let u = inst.num_users();
        let a = (0..u)
            .map(|k| {
                let h = inst.channel(k);
                (0..=u).map(|s| hdot(h, beams.stream(s))).collect()
            })
            .collect();
        Self { a }
    }

    /// σ_k² + Σ_{j≠k} |h_k^H v_j|² over private streams.
    pub fn private_interference(&self, inst: &ProblemInstance, k: usize) -> T {
        let row = &self.a[k];
        let mut acc = T::cst(inst.noise_var()[k]);
        for (j, a) in row.iter().enumerate().skip(1) {
            if j != k + 1 {
                acc = acc + abs2(*a);
            }
        }
        acc
    }

    /// σ_k² + Σ_j |h_k^H v_j|² over all private streams.
    pub fn common_interference(&self, inst: &ProblemInstance, k: usize) -> T {
        self.a[k]
            .iter()
            .skip(1)
            .fold(T::cst(inst.noise_var()[k]), |acc, a| acc + abs2(*a))
    }

    pub fn rates(&self, inst: &ProblemInstance) -> RateReport<T> {
        let u = inst.num_users();
        let mut c = Vec::with_capacity(u);
        let mut rp = Vec::with_capacity(u);
        for k in 0..u {
            let common = self.common_interference(inst, k);
            c.push((abs2(self.a[k][0]) / common + 1.0).log2());
            let private = self.private_interference(inst, k);
            rp.push((abs2(self.a[k][k + 1]) / private + 1.0).log2());
        }
        let mut min_c_user = 0;
        for k in 1..u {
            if c[k].value() < c[min_c_user].value() {
                min_c_user = k;
            }
        }
        RateReport {
            min_c: c[min_c_user],
            min_c_user,
            c,
            rp,
        }
    }
}

pub(crate) fn rates_unchecked<T: Real>(
    inst: &ProblemInstance,
    beams: &BeamformerSet<T>,
) -> RateReport<T> {
    Gains::new(inst, beams).rates(inst)
}

pub(crate) fn wsr_from_rates<T: Real>(
    inst: &ProblemInstance,
    rates: &RateReport<T>,
    rc: &RateAllocation<T>,
) -> T {
    inst.weights()
        .iter()
        .zip(rc.rc.iter().zip(&rates.rp))
        .fold(T::zero(), |acc, (&f, (&r, &p))| acc + (r + p) * f)
}

/// Common capacities and private rates for the given beamformers.
pub fn compute_rates<T: Real>(
    inst: &ProblemInstance,
    beams: &BeamformerSet<T>,
) -> Result<RateReport<T>> {
    inst.check_beams(beams)?;
    Ok(rates_unchecked(inst, beams))
}

/// Σ_k f_k (R_k^c + R_k^p).
pub fn wsr<T: Real>(
    inst: &ProblemInstance,
    beams: &BeamformerSet<T>,
    rc: &RateAllocation<T>,
) -> Result<T> {
    inst.check_rc(rc)?;
    let rates = compute_rates(inst, beams)?;
    Ok(wsr_from_rates(inst, &rates, rc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feasibility {
    pub power: bool,
    pub common_rate: bool,
    pub min_power: bool,
    pub nonnegative: bool,
}

impl Feasibility {
    pub fn all(&self) -> bool {
        self.power && self.common_rate && self.min_power && self.nonnegative
    }
}

/// Checks the power budget, common-rate decodability, per-beamformer
/// minimum power (common beamformer included) and rate nonnegativity.
/// Dimension mismatches are reported as infeasible.
pub fn check_feasibility(
    inst: &ProblemInstance,
    beams: &BeamformerSet,
    rc: &RateAllocation,
    tol: f64,
) -> Feasibility {
    if inst.check_beams(beams).is_err() || inst.check_rc(rc).is_err() {
        return Feasibility {
            power: false,
            common_rate: false,
            min_power: false,
            nonnegative: false,
        };
    }
    let rates = rates_unchecked(inst, beams);
    let total = beams.total_power();
    let sum_rc: f64 = rc.rc.iter().sum();
    let u = inst.num_users();
    Feasibility {
        power: total <= inst.power_budget() + tol,
        common_rate: sum_rc <= rates.min_c + tol,
        min_power: (0..=u).all(|s| norm_sqr(beams.stream(s)) >= inst.p0() - tol),
        nonnegative: rc.rc.iter().all(|&r| r >= -tol),
    }
}
