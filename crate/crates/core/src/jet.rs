//! Second-order forward-mode differentiation arithmetic.
//!
//! Every evaluation carries value, gradient and full symmetric Hessian with
//! respect to a named variable set ([`VarSpace`]). Derivative order is capped
//! at two: no condition evaluated by this crate needs a third derivative, and
//! the arithmetic here makes no attempt to provide one.
//!
//! The Hessian is stored as a packed lower triangle, so symmetry holds
//! bit-exactly after every operation by construction.

use crate::error::{Error, Result};

/// Ordered list of variable identifiers. The order is stable and defines
/// gradient/Hessian indexing for every jet seeded on this space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarSpace {
    names: Vec<String>,
}

impl VarSpace {
    /// Build a variable space from unique names. Duplicates are rejected.
    pub fn new<S: Into<String>>(names: Vec<S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Precondition(format!(
                    "duplicate variable name `{n}` in variable space"
                )));
            }
        }
        Ok(VarSpace { names })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// `name=value` rendering of a point, used in error messages.
    pub fn describe_point(&self, point: &[f64]) -> String {
        Error::point_context(&self.names, point)
    }
}

/// Packed symmetric matrix: only the lower triangle is stored, so the
/// structure cannot become asymmetric through roundoff.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat {
    dim: usize,
    data: Vec<f64>,
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        SymMat {
            dim,
            data: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    #[inline]
    fn idx(i: usize, j: usize) -> usize {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        hi * (hi + 1) / 2 + lo
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[Self::idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[Self::idx(i, j)] = v;
    }

    #[inline]
    pub fn add_assign_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[Self::idx(i, j)] += v;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row `i` as a dense vector (equals column `i` by symmetry).
    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.dim).map(|j| self.get(i, j)).collect()
    }
}

/// A scalar together with its gradient and Hessian on some [`VarSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: SymMat,
}

impl Jet2 {
    pub fn constant(value: f64, dim: usize) -> Self {
        Jet2 {
            value,
            grad: vec![0.0; dim],
            hess: SymMat::zeros(dim),
        }
    }

    /// Seed for the `idx`-th variable: unit gradient, zero Hessian.
    pub fn variable(value: f64, idx: usize, dim: usize) -> Self {
        let mut grad = vec![0.0; dim];
        grad[idx] = 1.0;
        Jet2 {
            value,
            grad,
            hess: SymMat::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    fn check_dim(&self, other: &Jet2) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Jet2) -> Result<Jet2> {
        self.check_dim(other)?;
        let mut out = self.clone();
        out.value += other.value;
        for (g, og) in out.grad.iter_mut().zip(&other.grad) {
            *g += og;
        }
        for (h, oh) in out.hess.data.iter_mut().zip(&other.hess.data) {
            *h += oh;
        }
        Ok(out)
    }

    pub fn sub(&self, other: &Jet2) -> Result<Jet2> {
        self.check_dim(other)?;
        let mut out = self.clone();
        out.value -= other.value;
        for (g, og) in out.grad.iter_mut().zip(&other.grad) {
            *g -= og;
        }
        for (h, oh) in out.hess.data.iter_mut().zip(&other.hess.data) {
            *h -= oh;
        }
        Ok(out)
    }

    pub fn neg(&self) -> Jet2 {
        let mut out = self.clone();
        out.value = -out.value;
        for g in out.grad.iter_mut() {
            *g = -*g;
        }
        for h in out.hess.data.iter_mut() {
            *h = -*h;
        }
        out
    }

    pub fn scale(&self, c: f64) -> Jet2 {
        let mut out = self.clone();
        out.value *= c;
        for g in out.grad.iter_mut() {
            *g *= c;
        }
        for h in out.hess.data.iter_mut() {
            *h *= c;
        }
        out
    }

    /// Product rule including the rank-one Hessian cross terms.
    pub fn mul(&self, other: &Jet2) -> Result<Jet2> {
        self.check_dim(other)?;
        let dim = self.dim();
        let mut out = Jet2::constant(self.value * other.value, dim);
        for k in 0..dim {
            out.grad[k] = self.value * other.grad[k] + other.value * self.grad[k];
        }
        for i in 0..dim {
            for j in 0..=i {
                let h = self.value * other.hess.get(i, j)
                    + other.value * self.hess.get(i, j)
                    + self.grad[i] * other.grad[j]
                    + self.grad[j] * other.grad[i];
                out.hess.set(i, j, h);
            }
        }
        Ok(out)
    }

    pub fn div(&self, other: &Jet2, at: impl Fn() -> String) -> Result<Jet2> {
        self.check_dim(other)?;
        if other.value == 0.0 {
            return Err(Error::Domain {
                op: "division by",
                value: 0.0,
                at: at(),
            });
        }
        let x = other.value;
        let inv = other.chain(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x));
        self.mul(&inv)
    }

    /// Univariate chain rule: for `u = f(self)` with `f(v)`, `f'(v)`, `f''(v)`
    /// supplied at `v = self.value`,
    /// `H(u) = f'·H(self) + f''·∇self ∇selfᵀ`.
    pub fn chain(&self, f0: f64, f1: f64, f2: f64) -> Jet2 {
        let dim = self.dim();
        let mut out = Jet2::constant(f0, dim);
        for k in 0..dim {
            out.grad[k] = f1 * self.grad[k];
        }
        for i in 0..dim {
            for j in 0..=i {
                out.hess
                    .set(i, j, f1 * self.hess.get(i, j) + f2 * self.grad[i] * self.grad[j]);
            }
        }
        out
    }

    pub fn sin(&self) -> Jet2 {
        let (s, c) = self.value.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(&self) -> Jet2 {
        let (s, c) = self.value.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn tan(&self) -> Jet2 {
        let t = self.value.tan();
        let d = 1.0 + t * t;
        self.chain(t, d, 2.0 * t * d)
    }

    pub fn exp(&self) -> Jet2 {
        let e = self.value.exp();
        self.chain(e, e, e)
    }

    pub fn ln(&self, at: impl Fn() -> String) -> Result<Jet2> {
        if self.value <= 0.0 {
            return Err(Error::Domain {
                op: "ln of",
                value: self.value,
                at: at(),
            });
        }
        let x = self.value;
        Ok(self.chain(x.ln(), 1.0 / x, -1.0 / (x * x)))
    }

    pub fn sqrt(&self, at: impl Fn() -> String) -> Result<Jet2> {
        if self.value <= 0.0 {
            return Err(Error::Domain {
                op: "sqrt of",
                value: self.value,
                at: at(),
            });
        }
        let r = self.value.sqrt();
        Ok(self.chain(r, 0.5 / r, -0.25 / (r * self.value)))
    }

    /// `abs` is differentiable away from zero; at zero it is a hard error
    /// rather than a subgradient, since residuals are pointwise and sampling
    /// is expected to avoid kinks via guards.
    pub fn abs(&self, at: impl Fn() -> String) -> Result<Jet2> {
        if self.value == 0.0 {
            return Err(Error::Domain {
                op: "abs at",
                value: 0.0,
                at: at(),
            });
        }
        let s = self.value.signum();
        Ok(self.chain(self.value.abs(), s, 0.0))
    }

    /// Integer power, valid for any base (nonzero base when `p < 0`).
    pub fn powi(&self, p: i32, at: impl Fn() -> String) -> Result<Jet2> {
        if p < 0 && self.value == 0.0 {
            return Err(Error::Domain {
                op: "division by",
                value: 0.0,
                at: at(),
            });
        }
        let x = self.value;
        let pf = p as f64;
        let f0 = x.powi(p);
        let f1 = if p == 0 { 0.0 } else { pf * x.powi(p - 1) };
        let f2 = if p == 0 || p == 1 {
            0.0
        } else {
            pf * (pf - 1.0) * x.powi(p - 2)
        };
        Ok(self.chain(f0, f1, f2))
    }

    /// General power. Integer constant exponents route through [`Jet2::powi`]
    /// so negative bases keep working; everything else needs a positive base.
    pub fn pow(&self, exponent: &Jet2, at: impl Fn() -> String) -> Result<Jet2> {
        self.check_dim(exponent)?;
        let is_const = exponent.grad.iter().all(|g| *g == 0.0)
            && exponent.hess.data.iter().all(|h| *h == 0.0);
        if is_const {
            let p = exponent.value;
            if p.fract() == 0.0 && p.abs() <= 512.0 {
                return self.powi(p as i32, at);
            }
            if self.value <= 0.0 {
                return Err(Error::Domain {
                    op: "non-integer power of",
                    value: self.value,
                    at: at(),
                });
            }
            let x = self.value;
            return Ok(self.chain(
                x.powf(p),
                p * x.powf(p - 1.0),
                p * (p - 1.0) * x.powf(p - 2.0),
            ));
        }
        // x^y = exp(y ln x)
        let lx = self.ln(&at)?;
        Ok(exponent.mul(&lx)?.exp())
    }

    /// First-order view of the partial derivative `∂self/∂x_k`: its value is
    /// the gradient entry and its gradient is the corresponding Hessian row.
    pub fn partial(&self, k: usize) -> Jet1 {
        Jet1 {
            value: self.grad[k],
            grad: self.hess.row(k),
        }
    }

    /// First-order view of the jet itself (drops the Hessian).
    pub fn lower(&self) -> Jet1 {
        Jet1 {
            value: self.value,
            grad: self.grad.clone(),
        }
    }
}

/// Seed one jet per variable of `space` at `point`.
pub fn seed(space: &VarSpace, point: &[f64]) -> Result<Vec<Jet2>> {
    if point.len() != space.dim() {
        return Err(Error::DimensionMismatch {
            expected: space.dim(),
            got: point.len(),
        });
    }
    let dim = space.dim();
    Ok(point
        .iter()
        .enumerate()
        .map(|(i, &v)| Jet2::variable(v, i, dim))
        .collect())
}

/// Value plus gradient only. Used when assembling functions of *first*
/// derivatives of jets (form components, 2-form coefficients), whose own
/// first derivatives are then still exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet1 {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl Jet1 {
    pub fn constant(value: f64, dim: usize) -> Self {
        Jet1 {
            value,
            grad: vec![0.0; dim],
        }
    }

    pub fn variable(value: f64, idx: usize, dim: usize) -> Self {
        let mut grad = vec![0.0; dim];
        grad[idx] = 1.0;
        Jet1 { value, grad }
    }

    pub fn dim(&self) -> usize {
        self.grad.len()
    }

    pub fn add(&self, other: &Jet1) -> Jet1 {
        Jet1 {
            value: self.value + other.value,
            grad: self
                .grad
                .iter()
                .zip(&other.grad)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Jet1) -> Jet1 {
        Jet1 {
            value: self.value - other.value,
            grad: self
                .grad
                .iter()
                .zip(&other.grad)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn mul(&self, other: &Jet1) -> Jet1 {
        Jet1 {
            value: self.value * other.value,
            grad: self
                .grad
                .iter()
                .zip(&other.grad)
                .map(|(a, b)| self.value * b + other.value * a)
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> Jet1 {
        Jet1 {
            value: c * self.value,
            grad: self.grad.iter().map(|g| c * g).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Jet1) {
        self.value += other.value;
        for (a, b) in self.grad.iter_mut().zip(&other.grad) {
            *a += b;
        }
    }
}

/// Second-order chain rule for a composition `f ∘ g`, where `outer` is the
/// jet of `f` on its own argument space and `inner[k]` is the jet of the
/// k-th argument of `f` on the outer variable space.
pub fn jet_compose(outer: &Jet2, inner: &[Jet2]) -> Result<Jet2> {
    if inner.len() != outer.dim() {
        return Err(Error::DimensionMismatch {
            expected: outer.dim(),
            got: inner.len(),
        });
    }
    let dim = match inner.first() {
        Some(j) => j.dim(),
        None => return Ok(Jet2::constant(outer.value, 0)),
    };
    let m = inner.len();
    let mut out = Jet2::constant(outer.value, dim);
    for u in 0..dim {
        let mut g = 0.0;
        for k in 0..m {
            g += outer.grad[k] * inner[k].grad[u];
        }
        out.grad[u] = g;
    }
    for u in 0..dim {
        for v in 0..=u {
            let mut h = 0.0;
            for k in 0..m {
                for l in 0..m {
                    h += outer.hess.get(k, l) * inner[k].grad[u] * inner[l].grad[v];
                }
                h += outer.grad[k] * inner[k].hess.get(u, v);
            }
            out.hess.set(u, v, h);
        }
    }
    Ok(out)
}

/// Central-difference gradient and Hessian of a black-box scalar function,
/// `O(h²)` accurate. Independent verification oracle for the jet arithmetic.
pub fn fd_oracle<F>(f: F, point: &[f64], h: f64) -> Result<(Vec<f64>, Vec<Vec<f64>>)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::Precondition("fd_oracle requires h > 0".into()));
    }
    let n = point.len();
    let mut x = point.to_vec();
    let f0 = f(&x)?;
    let mut grad = vec![0.0; n];
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        x[i] = point[i] + h;
        let fp = f(&x)?;
        x[i] = point[i] - h;
        let fm = f(&x)?;
        x[i] = point[i];
        grad[i] = (fp - fm) / (2.0 * h);
        hess[i][i] = (fp - 2.0 * f0 + fm) / (h * h);
    }
    for i in 0..n {
        for j in 0..i {
            x[i] = point[i] + h;
            x[j] = point[j] + h;
            let fpp = f(&x)?;
            x[j] = point[j] - h;
            let fpm = f(&x)?;
            x[i] = point[i] - h;
            let fmm = f(&x)?;
            x[j] = point[j] + h;
            let fmp = f(&x)?;
            x[i] = point[i];
            x[j] = point[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    Ok((grad, hess))
}
