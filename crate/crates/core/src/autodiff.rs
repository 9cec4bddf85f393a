//! Minimal reverse-mode tape used to differentiate the training objective
//! with respect to every model parameter.
//!
//! The same numeric code runs in two modes through the [`Real`] trait:
//! plain `f64` for fast forward evaluation, and [`Var`] handles that record
//! onto a [`Tape`] when gradients are needed. Each tape node stores at most
//! two parents with precomputed local partials, so the backward sweep is a
//! single reverse pass over the node list.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

#[derive(Clone, Copy)]
struct Node {
    value: f64,
    parents: [usize; 2],
    weights: [f64; 2],
}

/// Wengert list of recorded operations.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: f64, parents: [usize; 2], weights: [f64; 2]) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        nodes.push(Node {
            value,
            parents,
            weights,
        });
        idx
    }

    /// Registers an input leaf.
    pub fn leaf(&self, value: f64) -> Var<'_> {
        let idx = self.push(value, [0, 0], [0.0, 0.0]);
        Var { tape: self, idx }
    }

    /// Registers a constant (a leaf that never receives a gradient of interest).
    pub fn constant(&self, value: f64) -> Var<'_> {
        self.leaf(value)
    }

    /// Reverse sweep from `output`; returns the adjoint of every node.
    pub fn gradients(&self, output: Var<'_>) -> Vec<f64> {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        adjoint[output.idx] = 1.0;
        for i in (0..nodes.len()).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let n = &nodes[i];
            if n.weights[0] != 0.0 {
                adjoint[n.parents[0]] += a * n.weights[0];
            }
            if n.weights[1] != 0.0 {
                adjoint[n.parents[1]] += a * n.weights[1];
            }
        }
        adjoint
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a tape node. Cheap to copy; all arithmetic records new nodes.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl<'t> Var<'t> {
    pub fn index(&self) -> usize {
        self.idx
    }

    fn unary(self, value: f64, dydx: f64) -> Var<'t> {
        let idx = self.tape.push(value, [self.idx, 0], [dydx, 0.0]);
        Var {
            tape: self.tape,
            idx,
        }
    }

    fn binary(self, other: Var<'t>, value: f64, da: f64, db: f64) -> Var<'t> {
        let idx = self.tape.push(value, [self.idx, other.idx], [da, db]);
        Var {
            tape: self.tape,
            idx,
        }
    }
}

/// Scalar field abstraction shared by the `f64` fast path and the tape.
pub trait Real:
    Copy
    + Add<Self, Output = Self>
    + Sub<Self, Output = Self>
    + Mul<Self, Output = Self>
    + Div<Self, Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    fn value(self) -> f64;
    /// A constant in the same evaluation context as `self`.
    fn lift(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    /// `acos` over a clamped argument; flat (zero derivative) outside the band.
    fn acos_clamped(self, band: f64) -> Self;
    fn softplus(self) -> Self;
    /// `max(0, x)` with subgradient 0 at the kink.
    fn relu(self) -> Self;
    /// `min(x, c)` with derivative 0 on the clipped side.
    fn min_const(self, c: f64) -> Self;
    /// Custom scalar op from `(value, derivative)`.
    fn custom(self, f: impl Fn(f64) -> (f64, f64)) -> Self;
}

fn softplus_f64(x: f64) -> f64 {
    // log(1 + e^x), overflow-safe
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn lift(self, c: f64) -> f64 {
        c
    }
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    fn ln(self) -> f64 {
        f64::ln(self)
    }
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    fn sin(self) -> f64 {
        f64::sin(self)
    }
    fn cos(self) -> f64 {
        f64::cos(self)
    }
    fn acos_clamped(self, band: f64) -> f64 {
        self.clamp(-1.0 + band, 1.0 - band).acos()
    }
    fn softplus(self) -> f64 {
        softplus_f64(self)
    }
    fn relu(self) -> f64 {
        self.max(0.0)
    }
    fn min_const(self, c: f64) -> f64 {
        self.min(c)
    }
    fn custom(self, f: impl Fn(f64) -> (f64, f64)) -> f64 {
        f(self).0
    }
}

macro_rules! var_binop {
    ($trait:ident, $method:ident, $val:expr, $da:expr, $db:expr) => {
        impl<'t> $trait<Var<'t>> for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                let (a, b) = (self.value(), rhs.value());
                let _ = (a, b);
                self.binary(rhs, $val(a, b), $da(a, b), $db(a, b))
            }
        }
    };
}

var_binop!(Add, add, |a: f64, b: f64| a + b, |_, _| 1.0, |_, _| 1.0);
var_binop!(Sub, sub, |a: f64, b: f64| a - b, |_, _| 1.0, |_, _| -1.0);
var_binop!(Mul, mul, |a: f64, b: f64| a * b, |_, b: f64| b, |a: f64, _| a);
var_binop!(
    Div,
    div,
    |a: f64, b: f64| a / b,
    |_, b: f64| 1.0 / b,
    |a: f64, b: f64| -a / (b * b)
);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.value(), -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(self.value() + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(self.value() - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(self.value() * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.unary(self.value() / rhs, 1.0 / rhs)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.tape.nodes.borrow()[self.idx].value
    }
    fn lift(self, c: f64) -> Var<'t> {
        self.tape.constant(c)
    }
    fn exp(self) -> Var<'t> {
        let v = self.value().exp();
        self.unary(v, v)
    }
    fn ln(self) -> Var<'t> {
        let x = self.value();
        self.unary(x.ln(), 1.0 / x)
    }
    fn sqrt(self) -> Var<'t> {
        let v = self.value().sqrt();
        self.unary(v, 0.5 / v)
    }
    fn sin(self) -> Var<'t> {
        let x = self.value();
        self.unary(x.sin(), x.cos())
    }
    fn cos(self) -> Var<'t> {
        let x = self.value();
        self.unary(x.cos(), -x.sin())
    }
    fn acos_clamped(self, band: f64) -> Var<'t> {
        let x = self.value();
        let (lo, hi) = (-1.0 + band, 1.0 - band);
        let xc = x.clamp(lo, hi);
        let dydx = if x > lo && x < hi {
            -1.0 / (1.0 - xc * xc).sqrt()
        } else {
            0.0
        };
        self.unary(xc.acos(), dydx)
    }
    fn softplus(self) -> Var<'t> {
        let x = self.value();
        self.unary(softplus_f64(x), sigmoid(x))
    }
    fn relu(self) -> Var<'t> {
        let x = self.value();
        if x > 0.0 {
            self.unary(x, 1.0)
        } else {
            self.unary(0.0, 0.0)
        }
    }
    fn min_const(self, c: f64) -> Var<'t> {
        let x = self.value();
        if x < c {
            self.unary(x, 1.0)
        } else {
            self.unary(c, 0.0)
        }
    }
    fn custom(self, f: impl Fn(f64) -> (f64, f64)) -> Var<'t> {
        let (v, d) = f(self.value());
        self.unary(v, d)
    }
}

// Small vector helpers shared by the encoder and losses.

pub fn dot_r<R: Real>(a: &[R], b: &[R]) -> R {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = a[0] * b[0];
    for i in 1..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

pub fn dot_rf<R: Real>(a: &[R], b: &[f64]) -> R {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = a[0] * b[0];
    for i in 1..a.len() {
        acc = acc + a[i] * b[i];
    }
    acc
}

/// `sqrt(<v, v> + guard)`; the guard keeps the gradient finite at zero.
pub fn norm_r<R: Real>(v: &[R], guard: f64) -> R {
    (dot_r(v, v) + guard).sqrt()
}

/// `v / (||v|| + eps)`.
pub fn normalize_r<R: Real>(v: &[R], eps: f64) -> Vec<R> {
    let n = norm_r(v, 1e-30);
    v.iter().map(|&x| x / (n + eps)).collect()
}
