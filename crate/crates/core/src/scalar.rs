//! Real scalar abstraction shared by plain `f64` evaluation and the
//! reverse-mode tape, plus the handful of complex-vector kernels the rate
//! and gradient expressions are built from.
//!
//! Complex quantities are always carried as `Complex<T>` with `T: Real`, so
//! the same forward code differentiates over the real/imaginary
//! decomposition without any holomorphic assumptions.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::{Complex, Complex64};

pub const LN_2: f64 = std::f64::consts::LN_2;

pub trait Real:
    Copy
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A constant carrying no derivative.
    fn cst(x: f64) -> Self;
    fn value(self) -> f64;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;

    fn log2(self) -> Self {
        self.ln() * std::f64::consts::LOG2_E
    }

    /// Same value, cut from the derivative graph.
    fn detach(self) -> Self {
        Self::cst(self.value())
    }

    fn zero() -> Self {
        Self::cst(0.0)
    }
}

impl Real for f64 {
    #[inline]
    fn cst(x: f64) -> Self {
        x
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

#[inline]
pub fn c_cst<T: Real>(z: Complex64) -> Complex<T> {
    Complex::new(T::cst(z.re), T::cst(z.im))
}

#[inline]
pub fn c_value<T: Real>(z: Complex<T>) -> Complex64 {
    Complex64::new(z.re.value(), z.im.value())
}

#[inline]
pub fn c_zero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

#[inline]
pub fn c_add<T: Real>(a: Complex<T>, b: Complex<T>) -> Complex<T> {
    Complex::new(a.re + b.re, a.im + b.im)
}

#[inline]
pub fn c_mul<T: Real>(a: Complex<T>, b: Complex<T>) -> Complex<T> {
    Complex::new(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re)
}

#[inline]
pub fn c_conj<T: Real>(a: Complex<T>) -> Complex<T> {
    Complex::new(a.re, -a.im)
}

#[inline]
pub fn c_scale<T: Real>(a: Complex<T>, s: T) -> Complex<T> {
    Complex::new(a.re * s, a.im * s)
}

#[inline]
pub fn c_scale_f<T: Real>(a: Complex<T>, s: f64) -> Complex<T> {
    Complex::new(a.re * s, a.im * s)
}

#[inline]
pub fn c_detach<T: Real>(a: Complex<T>) -> Complex<T> {
    Complex::new(a.re.detach(), a.im.detach())
}

/// |a|²
#[inline]
pub fn abs2<T: Real>(a: Complex<T>) -> T {
    a.re * a.re + a.im * a.im
}

/// h^H v for a constant `h`.
pub fn hdot<T: Real>(h: &[Complex64], v: &[Complex<T>]) -> Complex<T> {
    debug_assert_eq!(h.len(), v.len());
    let mut re = T::zero();
    let mut im = T::zero();
    for (hi, vi) in h.iter().zip(v) {
        re = re + vi.re * hi.re + vi.im * hi.im;
        im = im + vi.im * hi.re - vi.re * hi.im;
    }
    Complex::new(re, im)
}

/// ‖v‖²
pub fn norm_sqr<T: Real>(v: &[Complex<T>]) -> T {
    v.iter().fold(T::zero(), |acc, z| acc + abs2(*z))
}

/// y += c · h for a constant `h`.
pub fn axpy_const<T: Real>(y: &mut [Complex<T>], c: Complex<T>, h: &[Complex64]) {
    debug_assert_eq!(y.len(), h.len());
    for (yi, hi) in y.iter_mut().zip(h) {
        yi.re = yi.re + c.re * hi.re - c.im * hi.im;
        yi.im = yi.im + c.re * hi.im + c.im * hi.re;
    }
}

/// Real inner product Re{a^H b}, the directional derivative pairing used
/// for every complex gradient in the crate.
pub fn re_inner(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Row-major complex matrix with rows indexed by user.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Copy> CMatrix<T> {
    pub fn from_rows(rows: Vec<Vec<Complex<T>>>) -> Option<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return None;
        }
        Some(Self {
            rows: n,
            cols: m,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Option<Self> {
        (data.len() == rows * cols).then_some(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, k: usize) -> &[Complex<T>] {
        &self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [Complex<T>] {
        &mut self.data[k * self.cols..(k + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<Complex<T>>> {
        (0..self.rows).map(|k| self.row(k).to_vec()).collect()
    }

    pub fn map<U, F: FnMut(Complex<T>) -> Complex<U>>(&self, f: F) -> CMatrix<U> {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().copied().map(f).collect(),
        }
    }
}

impl<T: Real> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![c_zero(); rows * cols],
        }
    }
}
