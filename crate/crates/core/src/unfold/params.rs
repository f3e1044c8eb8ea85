use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Real, LN_2};
use crate::solver::StepSizes;

const PARAMS_VERSION: &str = "1";

/// Learnable coefficients of one layer for `U` users.
///
/// * `w0`: length `U + 2`, scales the common-beam step.
/// * `w`: `U` rows of length `U + 2`, row `k` scales user `k`'s step.
/// * `eta`: `U` rows of length `U + 1`. Row `k` holds the coefficient of the
///   own term, then those of the `U − 1` cross terms in ascending `j ≠ k`,
///   then that of the penalty term.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T = f64> {
    pub w0: Vec<T>,
    pub w: Vec<Vec<T>>,
    pub eta: Vec<Vec<T>>,
}

impl<T: Real> LayerParams<T> {
    pub fn zeros(num_users: usize) -> Self {
        Self {
            w0: vec![T::zero(); num_users + 2],
            w: vec![vec![T::zero(); num_users + 2]; num_users],
            eta: vec![vec![T::zero(); num_users + 1]; num_users],
        }
    }

    pub fn num_users(&self) -> usize {
        self.w.len()
    }

    pub fn len_for(num_users: usize) -> usize {
        (num_users + 2) * (num_users + 1) + num_users * (num_users + 1)
    }

    pub fn check_shape(&self, num_users: usize) -> Result<()> {
        let ok = self.w0.len() == num_users + 2
            && self.w.len() == num_users
            && self.w.iter().all(|r| r.len() == num_users + 2)
            && self.eta.len() == num_users
            && self.eta.iter().all(|r| r.len() == num_users + 1);
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "layer parameters do not fit {num_users} users"
            )))
        }
    }

    /// `w0`, then `w` row by row, then `eta` row by row.
    pub fn flatten_into(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.w0);
        for r in &self.w {
            out.extend_from_slice(r);
        }
        for r in &self.eta {
            out.extend_from_slice(r);
        }
    }

    pub fn from_flat(num_users: usize, flat: &[T]) -> Self {
        let u = num_users;
        assert_eq!(flat.len(), Self::len_for(u));
        let (w0, rest) = flat.split_at(u + 2);
        let (w, eta) = rest.split_at(u * (u + 2));
        Self {
            w0: w0.to_vec(),
            w: w.chunks(u + 2).map(<[T]>::to_vec).collect(),
            eta: eta.chunks(u + 1).map(<[T]>::to_vec).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
    /// Penalty factor shared by every layer.
    pub lambda: f64,
}

impl NetworkParams {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_users(&self) -> usize {
        self.layers.first().map_or(0, LayerParams::num_users)
    }

    pub fn check_shape(&self, num_users: usize) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ShapeMismatch("network has no layers".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidConfig("lambda must be positive".into()));
        }
        for l in &self.layers {
            l.check_shape(num_users)?;
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layers.len() * LayerParams::<f64>::len_for(self.num_users()));
        for l in &self.layers {
            l.flatten_into(&mut out);
        }
        out
    }

    pub fn with_flat(&self, flat: &[f64]) -> Self {
        Self {
            layers: split_layers(self.num_users(), flat),
            lambda: self.lambda,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let u = self.num_users();
        let mut doc = ParamsDoc {
            format_version: PARAMS_VERSION.into(),
            num_users: u,
            num_layers: self.layers.len(),
            lambda: self.lambda,
            w0: Vec::new(),
            w: Vec::new(),
            eta: Vec::new(),
        };
        for l in &self.layers {
            doc.w0.extend_from_slice(&l.w0);
            doc.w.extend(l.w.iter().flatten());
            doc.eta.extend(l.eta.iter().flatten());
        }
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ParamsDoc = serde_json::from_str(text)?;
        if doc.format_version != PARAMS_VERSION {
            return Err(Error::VersionMismatch {
                found: doc.format_version,
                expected: PARAMS_VERSION.into(),
            });
        }
        let (u, n) = (doc.num_users, doc.num_layers);
        if doc.w0.len() != n * (u + 2)
            || doc.w.len() != n * u * (u + 2)
            || doc.eta.len() != n * u * (u + 1)
        {
            return Err(Error::ShapeMismatch(format!(
                "arrays do not match {n} layers of {u} users"
            )));
        }
        let layers = (0..n)
            .map(|i| LayerParams {
                w0: doc.w0[i * (u + 2)..(i + 1) * (u + 2)].to_vec(),
                w: doc.w[i * u * (u + 2)..(i + 1) * u * (u + 2)]
                    .chunks(u + 2)
                    .map(<[f64]>::to_vec)
                    .collect(),
                eta: doc.eta[i * u * (u + 1)..(i + 1) * u * (u + 1)]
                    .chunks(u + 1)
                    .map(<[f64]>::to_vec)
                    .collect(),
            })
            .collect();
        let p = NetworkParams {
            layers,
            lambda: doc.lambda,
        };
        p.check_shape(u)?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn split_layers<T: Real>(num_users: usize, flat: &[T]) -> Vec<LayerParams<T>> {
    flat.chunks(LayerParams::<T>::len_for(num_users))
        .map(|c| LayerParams::from_flat(num_users, c))
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    format_version: String,
    num_users: usize,
    num_layers: usize,
    lambda: f64,
    /// `num_layers × (U+2)`
    w0: Vec<f64>,
    /// `num_layers × U × (U+2)`
    w: Vec<f64>,
    /// `num_layers × U × (U+1)`
    eta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitScheme {
    /// I.i.d. Normal(0, 0.01²) entries.
    RandomSmall,
    /// Every layer reproduces one plain ascent step; layer `n` (zero-based)
    /// uses `steps` scaled by `decay^n`.
    PgdMimic { steps: StepSizes, decay: f64 },
}

pub fn init_params(
    num_users: usize,
    num_layers: usize,
    lambda: f64,
    seed: u64,
    scheme: &InitScheme,
) -> NetworkParams {
    let u = num_users;
    let layers = match scheme {
        InitScheme::RandomSmall => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 0.01).expect("valid");
            (0..num_layers)
                .map(|_| {
                    let flat: Vec<f64> = (0..LayerParams::<f64>::len_for(u))
                        .map(|_| normal.sample(&mut rng))
                        .collect();
                    LayerParams::from_flat(u, &flat)
                })
                .collect()
        }
        InitScheme::PgdMimic { steps, decay } => (0..num_layers)
            .map(|n| {
                let s = steps.scaled(decay.powi(n as i32));
                let scale_row = |c: f64| {
                    let mut row = vec![c; u];
                    row.extend([0.0, 0.0]);
                    row
                };
                LayerParams {
                    w0: scale_row(lambda * s.alpha_v0 / LN_2),
                    w: vec![scale_row(1.0 / LN_2); u],
                    eta: (0..u)
                        .map(|k| {
                            let a = s.alpha_v[k];
                            let mut row = vec![a; u];
                            row.push(a * lambda);
                            row
                        })
                        .collect(),
                }
            })
            .collect(),
    };
    NetworkParams { layers, lambda }
}
