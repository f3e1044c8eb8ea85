//! Minimal reverse-mode differentiation over real scalars.
//!
//! Every arithmetic operation on a [`Var`] appends one node holding up to two
//! parent indices and the local partial derivatives, evaluated eagerly. The
//! backward sweep is then a single reverse pass over the node list. The tape
//! is thread-local, so a forward/backward pair must run on one thread; use
//! [`Session`] to scope it.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::scalar::Real;

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

thread_local! {
    static TAPE: RefCell<Vec<Node>> = const { RefCell::new(Vec::new()) };
}

/// A scalar recorded on the thread-local tape. Constants carry no index.
#[derive(Clone, Copy, Debug)]
pub struct Var {
    idx: u32,
    val: f64,
}

fn push(parents: [u32; 2], partials: [f64; 2]) -> u32 {
    TAPE.with(|t| {
        let mut t = t.borrow_mut();
        let idx = t.len() as u32;
        assert!(idx != NONE, "tape overflow");
        t.push(Node { parents, partials });
        idx
    })
}

impl Var {
    pub fn index(self) -> Option<usize> {
        (self.idx != NONE).then_some(self.idx as usize)
    }

    #[inline]
    fn unary(self, val: f64, d: f64) -> Var {
        if self.idx == NONE {
            return Var { idx: NONE, val };
        }
        Var {
            idx: push([self.idx, NONE], [d, 0.0]),
            val,
        }
    }

    #[inline]
    fn binary(a: Var, b: Var, val: f64, da: f64, db: f64) -> Var {
        match (a.idx == NONE, b.idx == NONE) {
            (true, true) => Var { idx: NONE, val },
            (false, true) => Var {
                idx: push([a.idx, NONE], [da, 0.0]),
                val,
            },
            (true, false) => Var {
                idx: push([b.idx, NONE], [db, 0.0]),
                val,
            },
            (false, false) => Var {
                idx: push([a.idx, b.idx], [da, db]),
                val,
            },
        }
    }
}

/// Scoped use of this thread's tape. Creating a session clears the tape.
pub struct Session {
    _private: (),
}

impl Session {
    pub fn new() -> Self {
        TAPE.with(|t| t.borrow_mut().clear());
        Session { _private: () }
    }

    pub fn leaf(&self, val: f64) -> Var {
        Var {
            idx: push([NONE, NONE], [0.0, 0.0]),
            val,
        }
    }

    pub fn len(&self) -> usize {
        TAPE.with(|t| t.borrow().len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adjoints d(output)/d(node) for every node on the tape.
    pub fn backward(&self, output: Var) -> Adjoints {
        let Some(out) = output.index() else {
            return Adjoints(Vec::new());
        };
        TAPE.with(|t| {
            let t = t.borrow();
            let mut adj = vec![0.0; out + 1];
            adj[out] = 1.0;
            for i in (0..=out).rev() {
                let a = adj[i];
                if a == 0.0 {
                    continue;
                }
                let node = t[i];
                for (p, d) in node.parents.iter().zip(node.partials) {
                    if *p != NONE {
                        adj[*p as usize] += a * d;
                    }
                }
            }
            Adjoints(adj)
        })
    }
}

impl Default for Session {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        TAPE.with(|t| t.borrow_mut().clear());
    }
}

pub struct Adjoints(Vec<f64>);

impl Adjoints {
    pub fn of(&self, v: Var) -> f64 {
        v.index()
            .and_then(|i| self.0.get(i).copied())
            .unwrap_or(0.0)
    }
}

impl Add for Var {
    type Output = Var;
    #[inline]
    fn add(self, o: Var) -> Var {
        Var::binary(self, o, self.val + o.val, 1.0, 1.0)
    }
}

impl Sub for Var {
    type Output = Var;
    #[inline]
    fn sub(self, o: Var) -> Var {
        Var::binary(self, o, self.val - o.val, 1.0, -1.0)
    }
}

impl Mul for Var {
    type Output = Var;
    #[inline]
    fn mul(self, o: Var) -> Var {
        Var::binary(self, o, self.val * o.val, o.val, self.val)
    }
}

impl Div for Var {
    type Output = Var;
    #[inline]
    fn div(self, o: Var) -> Var {
        let q = self.val / o.val;
        Var::binary(self, o, q, 1.0 / o.val, -q / o.val)
    }
}

impl Neg for Var {
    type Output = Var;
    #[inline]
    fn neg(self) -> Var {
        self.unary(-self.val, -1.0)
    }
}

impl Add<f64> for Var {
    type Output = Var;
    #[inline]
    fn add(self, c: f64) -> Var {
        self.unary(self.val + c, 1.0)
    }
}

impl Sub<f64> for Var {
    type Output = Var;
    #[inline]
    fn sub(self, c: f64) -> Var {
        self.unary(self.val - c, 1.0)
    }
}

impl Mul<f64> for Var {
    type Output = Var;
    #[inline]
    fn mul(self, c: f64) -> Var {
        self.unary(self.val * c, c)
    }
}

impl Div<f64> for Var {
    type Output = Var;
    #[inline]
    fn div(self, c: f64) -> Var {
        self.unary(self.val / c, 1.0 / c)
    }
}

impl Real for Var {
    #[inline]
    fn cst(x: f64) -> Self {
        Var { idx: NONE, val: x }
    }
    #[inline]
    fn value(self) -> f64 {
        self.val
    }
    #[inline]
    fn ln(self) -> Self {
        self.unary(self.val.ln(), 1.0 / self.val)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }
}
