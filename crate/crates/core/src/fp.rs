//! Quadratic-transform auxiliaries and the penalized surrogate objective.
//!
//! For a ratio |a|²/b the transform 1 + 2Re{z̄ a} − |z|² b is concave in the
//! beamformers for fixed `z` and equals 1 + |a|²/b at z = a/b. The private
//! terms use a = h_k^H v_k with the private interference; the common term
//! uses the reference user's common-stream SINR.

use num_complex::Complex;

use crate::error::{Error, Result, Stream};
use crate::model::{Gains, ProblemInstance, BeamformerSet, RateAllocation};
use crate::scalar::{abs2, c_detach, Real};

#[derive(Debug, Clone, PartialEq)]
pub struct AuxState<T = f64> {
    pub z0: Complex<T>,
    pub z: Vec<Complex<T>>,
}

impl<T: Real> AuxState<T> {
    pub fn zeros(num_users: usize) -> Self {
        Self {
            z0: crate::scalar::c_zero(),
            z: vec![crate::scalar::c_zero(); num_users],
        }
    }

    pub fn detach(&self) -> Self {
        Self {
            z0: c_detach(self.z0),
            z: self.z.iter().map(|z| c_detach(*z)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateTerms<T = f64> {
    pub phi0: T,
    pub phi: Vec<T>,
}

impl<T: Real> SurrogateTerms<T> {
    /// First non-positive value, if any.
    pub fn check_positive(&self) -> Result<()> {
        if !(self.phi0.value() > 0.0) {
            return Err(Error::NonPositivePhi {
                stream: Stream::Common,
                value: self.phi0.value(),
            });
        }
        for (k, p) in self.phi.iter().enumerate() {
            if !(p.value() > 0.0) {
                return Err(Error::NonPositivePhi {
                    stream: Stream::Private(k),
                    value: p.value(),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn aux_from_gains<T: Real>(inst: &ProblemInstance, g: &Gains<T>) -> AuxState<T> {
    let u = inst.num_users();
    let z = (0..u)
        .map(|k| {
            let d = g.private_interference(inst, k);
            let a = g.a[k][k + 1];
            Complex::new(a.re / d, a.im / d)
        })
        .collect();
    let r = inst.ref_user();
    let d0 = g.common_interference(inst, r);
    let a0 = g.a[r][0];
    AuxState {
        z0: Complex::new(a0.re / d0, a0.im / d0),
        z,
    }
}

/// 1 + 2Re{z̄ a} − |z|² b
#[inline]
pub(crate) fn quadratic_transform<T: Real>(z: Complex<T>, a: Complex<T>, b: T) -> T {
    (z.re * a.re + z.im * a.im) * 2.0 - abs2(z) * b + 1.0
}

pub(crate) fn terms_from_gains<T: Real>(
    inst: &ProblemInstance,
    g: &Gains<T>,
    aux: &AuxState<T>,
) -> SurrogateTerms<T> {
    let u = inst.num_users();
    let phi = (0..u)
        .map(|k| quadratic_transform(aux.z[k], g.a[k][k + 1], g.private_interference(inst, k)))
        .collect();
    let r = inst.ref_user();
    let phi0 = quadratic_transform(aux.z0, g.a[r][0], g.common_interference(inst, r));
    SurrogateTerms { phi0, phi }
}

fn check_aux<T>(inst: &ProblemInstance, aux: &AuxState<T>) -> Result<()> {
    if aux.z.len() != inst.num_users() {
        return Err(Error::DimensionMismatch {
            what: "auxiliary variables",
            expected: inst.num_users(),
            found: aux.z.len(),
        });
    }
    Ok(())
}

/// Closed-form maximizers of the quadratic transforms at `beams`.
pub fn update_aux<T: Real>(
    inst: &ProblemInstance,
    beams: &BeamformerSet<T>,
) -> Result<AuxState<T>> {
    inst.check_beams(beams)?;
    Ok(aux_from_gains(inst, &Gains::new(inst, beams)))
}

pub fn surrogate_terms<T: Real>(
    inst: &ProblemInstance,
    beams: &BeamformerSet<T>,
    aux: &AuxState<T>,
) -> Result<SurrogateTerms<T>> {
    inst.check_beams(beams)?;
    check_aux(inst, aux)?;
    Ok(terms_from_gains(inst, &Gains::new(inst, beams), aux))
}

/// Σ_k f_k (R_k^c + log2 Φ_k) − λ (Σ_k R_k^c − log2 Φ_0)
pub fn penalized_objective<T: Real>(
    inst: &ProblemInstance,
    beams: &BeamformerSet<T>,
    rc: &RateAllocation<T>,
    aux: &AuxState<T>,
    lambda: f64,
) -> Result<T> {
    inst.check_rc(rc)?;
    let terms = surrogate_terms(inst, beams, aux)?;
    terms.check_positive()?;
    let mut utility = T::zero();
    let mut rc_sum = T::zero();
    for (k, &f) in inst.weights().iter().enumerate() {
        utility = utility + (rc.rc[k] + terms.phi[k].log2()) * f;
        rc_sum = rc_sum + rc.rc[k];
    }
    Ok(utility - (rc_sum - terms.phi0.log2()) * lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::*;
    use crate::model::compute_rates;
    use crate::scalar::CMatrix;
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_private_beams_give_zero_aux() {
        let inst = random_instance(5, 3, 4);
        let mut beams = random_beams(5, 3, 4, 1.0);
        beams.v = CMatrix::zeros(3, 4);
        let aux = update_aux(&inst, &beams).unwrap();
        assert!(aux.z.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn scalar_aux_by_hand() {
        let inst = scalar_instance(0.0, 2.0);
        let aux = update_aux(&inst, &unit_beams()).unwrap();
        assert!((aux.z[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((aux.z0 - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        let t = surrogate_terms(&inst, &unit_beams(), &aux).unwrap();
        assert!((t.phi[0] - 2.0).abs() < 1e-15);
        assert!((t.phi0 - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_aux_gives_unit_terms_and_zero_objective() {
        let inst = random_instance(6, 3, 4);
        let beams = random_beams(6, 3, 4, 1.0);
        let aux = AuxState::zeros(3);
        let t = surrogate_terms(&inst, &beams, &aux).unwrap();
        assert_eq!(t.phi0, 1.0);
        assert!(t.phi.iter().all(|&p| p == 1.0));
        let l = penalized_objective(&inst, &beams, &RateAllocation::zeros(3), &aux, 1.0).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn tight_penalty_recovers_wsr() {
        let inst = random_instance(7, 3, 6);
        let beams = random_beams(7, 3, 6, 0.3);
        let aux = update_aux(&inst, &beams).unwrap();
        let t = surrogate_terms(&inst, &beams, &aux).unwrap();
        let share = t.phi0.log2();
        let rc = RateAllocation {
            rc: vec![share * 0.5, share * 0.25, share * 0.25],
        };
        let l = penalized_objective(&inst, &beams, &rc, &aux, 0.8).unwrap();
        let w = crate::model::wsr(&inst, &beams, &rc).unwrap();
        assert!((l - w).abs() < 1e-12);
    }

    #[test]
    fn larger_penalty_lowers_objective_when_violated() {
        let inst = random_instance(8, 3, 4);
        let beams = random_beams(8, 3, 4, 0.3);
        let aux = update_aux(&inst, &beams).unwrap();
        let t = surrogate_terms(&inst, &beams, &aux).unwrap();
        let rc = RateAllocation {
            rc: vec![t.phi0.log2() + 1.0, 0.0, 0.0],
        };
        let a = penalized_objective(&inst, &beams, &rc, &aux, 1.0).unwrap();
        let b = penalized_objective(&inst, &beams, &rc, &aux, 2.0).unwrap();
        assert!(b < a);
    }

    #[test]
    fn non_positive_phi_names_stream() {
        let inst = scalar_instance(0.0, 2.0);
        let aux = AuxState {
            z0: Complex64::new(0.0, 0.0),
            z: vec![Complex64::new(-5.0, 0.0)],
        };
        let err = penalized_objective(&inst, &unit_beams(), &RateAllocation::zeros(1), &aux, 1.0)
            .unwrap_err();
        assert!(matches!(
            err,
            Error::NonPositivePhi {
                stream: Stream::Private(0),
                ..
            }
        ));
    }

    #[test]
    fn tightness_over_random_instances() {
        for seed in 0..100 {
            let inst = random_instance(seed, 3, 12);
            let beams = random_beams(seed, 3, 12, 0.08);
            let aux = update_aux(&inst, &beams).unwrap();
            let t = surrogate_terms(&inst, &beams, &aux).unwrap();
            let r = compute_rates(&inst, &beams).unwrap();
            for k in 0..3 {
                assert!((t.phi[k].log2() - r.rp[k]).abs() <= 1e-10);
                assert!(t.phi[k] >= 1.0);
            }
            assert!((t.phi0.log2() - r.c[inst.ref_user()]).abs() <= 1e-10);
        }
    }

    #[test]
    fn aux_maximizes_each_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..30 {
            let inst = random_instance(seed, 3, 5);
            let beams = random_beams(seed, 3, 5, 0.2);
            let aux = update_aux(&inst, &beams).unwrap();
            let base = surrogate_terms(&inst, &beams, &aux).unwrap();
            for _ in 0..10 {
                let mut p = aux.clone();
                let k = rng.random_range(0..3);
                let d = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 1e-3;
                p.z[k] += d;
                p.z0 += d;
                let t = surrogate_terms(&inst, &beams, &p).unwrap();
                assert!(t.phi[k] <= base.phi[k] + 1e-14);
                assert!(t.phi0 <= base.phi0 + 1e-14);
            }
        }
    }
}
