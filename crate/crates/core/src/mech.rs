//! Dynamics engines: Euler-Lagrange, nonholonomic (Lagrange-d'Alembert),
//! vakonomic (constrained variational), Chaplygin reduction, trajectory
//! integration by fixed-step RK4, and the hamiltonization test for reduced
//! systems.

use crate::bundles::{Chart, IsotropyReport, ParamMap, Sode};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jet::{seed, Jet1, Jet2, VarSpace};
use crate::linalg::Mat;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TRAJECTORY_TOLERANCE: f64 = 1e-6;

/// A Lagrangian over `(t?, q, q̇)` with the full velocity list.
#[derive(Debug, Clone)]
pub struct LagrangianDef {
    pub coords: Vec<String>,
    pub l: Expr,
    pub time_dependent: bool,
    space: VarSpace,
}

impl LagrangianDef {
    pub fn new(coords: Vec<String>, l: Expr, time_dependent: bool) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        if time_dependent {
            names.push("t".into());
        }
        names.extend(coords.iter().cloned());
        names.extend(coords.iter().map(|c| format!("{c}d")));
        let space = VarSpace::new(names)?;
        for v in l.free_vars() {
            if space.index_of(&v).is_none() {
                return Err(Error::ProblemFile {
                    section: "lagrangian".into(),
                    message: format!("L references undeclared variable `{v}`"),
                });
            }
        }
        Ok(LagrangianDef {
            coords,
            l,
            time_dependent,
            space,
        })
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn space(&self) -> &VarSpace {
        &self.space
    }

    fn t_offset(&self) -> usize {
        usize::from(self.time_dependent)
    }

    fn q_slot(&self, i: usize) -> usize {
        self.t_offset() + i
    }

    fn qd_slot(&self, i: usize) -> usize {
        self.t_offset() + self.n() + i
    }

    fn point(&self, t: f64, q: &[f64], qd: &[f64]) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.space.dim());
        if self.time_dependent {
            p.push(t);
        }
        p.extend_from_slice(q);
        p.extend_from_slice(qd);
        p
    }

    pub fn jet(&self, t: f64, q: &[f64], qd: &[f64]) -> Result<Jet2> {
        let p = self.point(t, q, qd);
        self.l.eval_jet(&self.space, &p)
    }

    /// Velocity Hessian `W_ij = ∂²L/∂q̇^i∂q̇^j` from an L-jet.
    pub fn velocity_hessian(&self, lj: &Jet2) -> Mat {
        let n = self.n();
        let mut w = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                w.set(i, j, lj.hess.get(self.qd_slot(i), self.qd_slot(j)));
            }
        }
        w
    }

    /// `E_L = q̇^i ∂L/∂q̇^i − L`.
    pub fn energy(&self, t: f64, q: &[f64], qd: &[f64]) -> Result<f64> {
        let lj = self.jet(t, q, qd)?;
        let mut e = -lj.value;
        for i in 0..self.n() {
            e += qd[i] * lj.grad[self.qd_slot(i)];
        }
        Ok(e)
    }
}

fn hessian_det_check(w: &Mat, t: f64, q: &[f64]) -> Result<f64> {
    let det = w.det();
    let scale = w.max_abs().max(1.0).powi(w.rows as i32);
    if det.abs() < 1e-12 * scale {
        return Err(Error::SingularHessian {
            det,
            at: format!("t={t}, q={q:?}"),
        });
    }
    Ok(det)
}

/// Anything that yields accelerations from a state. The state is split as
/// `(q, q̇)` with the full velocity list.
pub trait Dynamics {
    fn dim(&self) -> usize;
    fn accel(&self, t: f64, q: &[f64], qd: &[f64]) -> Result<Vec<f64>>;
}

/// Euler-Lagrange vector field of a regular Lagrangian, solving
/// `W q̈ = ∂L/∂q − ∂²L/∂q̇∂q q̇ − ∂²L/∂q̇∂t` pointwise.
pub struct ElSode<'a> {
    pub lagrangian: &'a LagrangianDef,
}

pub fn el_sode(lagrangian: &LagrangianDef) -> ElSode<'_> {
    ElSode { lagrangian }
}

impl ElSode<'_> {
    fn rhs(&self, lj: &Jet2, qd: &[f64]) -> Vec<f64> {
        let lag = self.lagrangian;
        let n = lag.n();
        (0..n)
            .map(|i| {
                let mut r = lj.grad[lag.q_slot(i)];
                for k in 0..n {
                    r -= lj.hess.get(lag.qd_slot(i), lag.q_slot(k)) * qd[k];
                }
                if lag.time_dependent {
                    r -= lj.hess.get(lag.qd_slot(i), 0);
                }
                r
            })
            .collect()
    }
}

impl Dynamics for ElSode<'_> {
    fn dim(&self) -> usize {
        self.lagrangian.n()
    }

    fn accel(&self, t: f64, q: &[f64], qd: &[f64]) -> Result<Vec<f64>> {
        let lj = self.lagrangian.jet(t, q, qd)?;
        let w = self.lagrangian.velocity_hessian(&lj);
        hessian_det_check(&w, t, q)?;
        w.solve(&self.rhs(&lj, qd))
    }
}

/// Euler-Lagrange left-hand side `d/dt(∂L/∂q̇^i) − ∂L/∂q^i` with the time
/// derivative expanded along supplied `(q̇, q̈)`.
pub fn el_residual(
    lagrangian: &LagrangianDef,
    t: f64,
    q: &[f64],
    qd: &[f64],
    qdd: &[f64],
) -> Result<Vec<f64>> {
    let lj = lagrangian.jet(t, q, qd)?;
    let n = lagrangian.n();
    Ok((0..n)
        .map(|i| {
            let vi = lagrangian.qd_slot(i);
            let mut r = if lagrangian.time_dependent {
                lj.hess.get(vi, 0)
            } else {
                0.0
            };
            for j in 0..n {
                r += lj.hess.get(vi, lagrangian.q_slot(j)) * qd[j];
                r += lj.hess.get(vi, lagrangian.qd_slot(j)) * qdd[j];
            }
            r - lj.grad[lagrangian.q_slot(i)]
        })
        .collect())
}

/// Linear (or affine) velocity constraints `φ^α = μ^α_i(q) q̇^i + μ^α_0(q)`.
#[derive(Debug, Clone)]
pub struct LinearConstraints {
    /// m × n coefficient expressions over the configuration variables.
    pub mu: Vec<Vec<Expr>>,
    pub mu0: Vec<Expr>,
    q_space: VarSpace,
}

impl LinearConstraints {
    pub fn new(coords: &[String], mu: Vec<Vec<Expr>>, mu0: Vec<Expr>, time_dependent: bool) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        if time_dependent {
            names.push("t".into());
        }
        names.extend(coords.iter().cloned());
        let q_space = VarSpace::new(names)?;
        if mu0.len() != mu.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: mu0.len(),
            });
        }
        for row in &mu {
            if row.len() != coords.len() {
                return Err(Error::DimensionMismatch {
                    expected: coords.len(),
                    got: row.len(),
                });
            }
        }
        for e in mu.iter().flatten().chain(mu0.iter()) {
            for v in e.free_vars() {
                if q_space.index_of(&v).is_none() {
                    return Err(Error::ProblemFile {
                        section: "constraints".into(),
                        message: format!(
                            "constraint coefficient references `{v}`, which is not a \
                             configuration variable"
                        ),
                    });
                }
            }
        }
        Ok(LinearConstraints { mu, mu0, q_space })
    }

    pub fn count(&self) -> usize {
        self.mu.len()
    }

    fn q_point(&self, t: f64, q: &[f64]) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.q_space.dim());
        if self.q_space.index_of("t") == Some(0) {
            p.push(t);
        }
        p.extend_from_slice(q);
        p
    }

    /// φ^α values at a state.
    pub fn values(&self, t: f64, q: &[f64], qd: &[f64]) -> Result<Vec<f64>> {
        let p = self.q_point(t, q);
        let mut out = Vec::with_capacity(self.count());
        for (row, m0) in self.mu.iter().zip(&self.mu0) {
            let mut v = m0.eval_value(&self.q_space, &p)?;
            for (mi, qdi) in row.iter().zip(qd) {
                v += mi.eval_value(&self.q_space, &p)? * qdi;
            }
            out.push(v);
        }
        Ok(out)
    }
}

/// Explicit nonholonomic dynamics for `(L, μ)`: accelerations plus the
/// uniquely determined Lagrange multipliers.
pub struct NonholonomicSode<'a> {
    pub lagrangian: &'a LagrangianDef,
    pub constraints: &'a LinearConstraints,
}

pub fn nonholonomic_sode<'a>(
    lagrangian: &'a LagrangianDef,
    constraints: &'a LinearConstraints,
) -> NonholonomicSode<'a> {
    NonholonomicSode {
        lagrangian,
        constraints,
    }
}

impl NonholonomicSode<'_> {
    /// `(q̈, λ)` at a state: `q̈ = W⁻¹(λ_α μ^α + ∂L/∂q − ∂²L/∂q̇∂q q̇ − ∂²L/∂q̇∂t)`
    /// with `λ = −C⁻¹ b`, `C_αβ = μ^α_i W^{ij} μ^β_j` and `b` the once-
    /// differentiated constraint drift.
    pub fn accel_with_multipliers(
        &self,
        t: f64,
        q: &[f64],
        qd: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let lag = self.lagrangian;
        let con = self.constraints;
        let n = lag.n();
        let m = con.count();
        let lj = lag.jet(t, q, qd)?;
        let w = lag.velocity_hessian(&lj);
        hessian_det_check(&w, t, q)?;
        let free = ElSode { lagrangian: lag }.rhs(&lj, qd);
        let u = w.solve(&free)?;
        if m == 0 {
            return Ok((u, vec![]));
        }

        let qp = con.q_point(t, q);
        let q_jets = seed(&con.q_space, &qp)?;
        let mut mu_vals = Mat::zeros(m, n);
        let mut drift = vec![0.0; m];
        for alpha in 0..m {
            for i in 0..n {
                let jet = con.mu[alpha][i].eval_with_jets(&con.q_space, &q_jets, &qp)?;
                mu_vals.set(alpha, i, jet.value);
                // Σ_j ∂μ^α_i/∂q^j q̇^j q̇^i (+ ∂μ^α_i/∂t q̇^i)
                let toff = con.q_space.index_of("t").map_or(0, |_| 1);
                for j in 0..n {
                    drift[alpha] += jet.grad[toff + j] * qd[j] * qd[i];
                }
                if toff == 1 {
                    drift[alpha] += jet.grad[0] * qd[i];
                }
            }
            let jet0 = con.mu0[alpha].eval_with_jets(&con.q_space, &q_jets, &qp)?;
            let toff = con.q_space.index_of("t").map_or(0, |_| 1);
            for j in 0..n {
                drift[alpha] += jet0.grad[toff + j] * qd[j];
            }
            if toff == 1 {
                drift[alpha] += jet0.grad[0];
            }
        }

        // V = W⁻¹ μᵀ, C = μ V, b_α = drift_α + μ^α · u
        let mut v_cols: Vec<Vec<f64>> = Vec::with_capacity(m);
        for alpha in 0..m {
            v_cols.push(w.solve(mu_vals.row(alpha))?);
        }
        let mut c = Mat::zeros(m, m);
        for alpha in 0..m {
            for beta in 0..m {
                let dot: f64 = mu_vals
                    .row(alpha)
                    .iter()
                    .zip(&v_cols[beta])
                    .map(|(a, b)| a * b)
                    .sum();
                c.set(alpha, beta, dot);
            }
        }
        let b: Vec<f64> = (0..m)
            .map(|alpha| {
                drift[alpha]
                    + mu_vals
                        .row(alpha)
                        .iter()
                        .zip(&u)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        let lambda = c
            .solve(&b.iter().map(|x| -x).collect::<Vec<_>>())
            .map_err(|_| Error::SingularConstraintMatrix {
                at: format!("t={t}, q={q:?}"),
            })?;
        let mut qdd = u;
        for alpha in 0..m {
            for i in 0..n {
                qdd[i] += lambda[alpha] * v_cols[alpha][i];
            }
        }
        Ok((qdd, lambda))
    }
}

impl Dynamics for NonholonomicSode<'_> {
    fn dim(&self) -> usize {
        self.lagrangian.n()
    }

    fn accel(&self, t: f64, q: &[f64], qd: &[f64]) -> Result<Vec<f64>> {
        Ok(self.accel_with_multipliers(t, q, qd)?.0)
    }
}

/// Vakonomic (constrained variational) system for `(L, φ)` with general
/// velocity constraints. Closure is by index-1 reduction: `φ = 0` is
/// differentiated once in `t` and adjoined, giving a linear system for
/// `(q̈, λ̇)`; `λ(0)` is caller input.
pub struct VakonomicSystem<'a> {
    pub lagrangian: &'a LagrangianDef,
    pub phis: Vec<Expr>,
}

pub fn vakonomic_system<'a>(
    lagrangian: &'a LagrangianDef,
    phis: Vec<Expr>,
) -> Result<VakonomicSystem<'a>> {
    for e in &phis {
        for v in e.free_vars() {
            if lagrangian.space().index_of(&v).is_none() {
                return Err(Error::ProblemFile {
                    section: "constraints".into(),
                    message: format!("constraint references undeclared variable `{v}`"),
                });
            }
        }
    }
    Ok(VakonomicSystem { lagrangian, phis })
}

impl VakonomicSystem<'_> {
    pub fn count(&self) -> usize {
        self.phis.len()
    }

    pub fn phi_values(&self, t: f64, q: &[f64], qd: &[f64]) -> Result<Vec<f64>> {
        let p = self.lagrangian.point(t, q, qd);
        self.phis
            .iter()
            .map(|e| e.eval_value(self.lagrangian.space(), &p))
            .collect()
    }

    fn phi_jets(&self, t: f64, q: &[f64], qd: &[f64]) -> Result<Vec<Jet2>> {
        let p = self.lagrangian.point(t, q, qd);
        let jets = seed(self.lagrangian.space(), &p)?;
        self.phis
            .iter()
            .map(|e| e.eval_with_jets(self.lagrangian.space(), &jets, &p))
            .collect()
    }

    /// `(q̈, λ̇)` from the bordered system
    /// `[[W_𝓛, (∂φ/∂q̇)ᵀ], [∂φ/∂q̇, 0]]`.
    pub fn accel_and_lambda_dot(
        &self,
        t: f64,
        q: &[f64],
        qd: &[f64],
        lambda: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let lag = self.lagrangian;
        let n = lag.n();
        let m = self.count();
        let lj = lag.jet(t, q, qd)?;
        let pj = self.phi_jets(t, q, qd)?;

        let mut bordered = Mat::zeros(n + m, n + m);
        for i in 0..n {
            for j in 0..n {
                let mut wij = lj.hess.get(lag.qd_slot(i), lag.qd_slot(j));
                for (alpha, pa) in pj.iter().enumerate() {
                    wij += lambda[alpha] * pa.hess.get(lag.qd_slot(i), lag.qd_slot(j));
                }
                bordered.set(i, j, wij);
            }
        }
        for (alpha, pa) in pj.iter().enumerate() {
            for i in 0..n {
                let a = pa.grad[lag.qd_slot(i)];
                bordered.set(i, n + alpha, a);
                bordered.set(n + alpha, i, a);
            }
        }

        let mut rhs = vec![0.0; n + m];
        for i in 0..n {
            let vi = lag.qd_slot(i);
            let mut r = lj.grad[lag.q_slot(i)];
            for k in 0..n {
                r -= lj.hess.get(vi, lag.q_slot(k)) * qd[k];
            }
            if lag.time_dependent {
                r -= lj.hess.get(vi, 0);
            }
            for (alpha, pa) in pj.iter().enumerate() {
                let mut dphi = pa.grad[lag.q_slot(i)];
                for k in 0..n {
                    dphi -= pa.hess.get(vi, lag.q_slot(k)) * qd[k];
                }
                if lag.time_dependent {
                    dphi -= pa.hess.get(vi, 0);
                }
                r += lambda[alpha] * dphi;
            }
            rhs[i] = r;
        }
        for (alpha, pa) in pj.iter().enumerate() {
            let mut c = 0.0;
            for j in 0..n {
                c -= pa.grad[lag.q_slot(j)] * qd[j];
            }
            if lag.time_dependent {
                c -= pa.grad[0];
            }
            rhs[n + alpha] = c;
        }

        let sol = bordered
            .solve(&rhs)
            .map_err(|_| Error::SingularBorderedSystem {
                at: format!("t={t}, q={q:?}"),
            })?;
        Ok((sol[..n].to_vec(), sol[n..].to_vec()))
    }

    /// Residual of the constrained variational equations along supplied
    /// trajectory data: `d/dt(∂L/∂q̇^i) − ∂L/∂q^i + λ̇_α ∂φ^α/∂q̇^i
    /// + λ_α [d/dt(∂φ^α/∂q̇^i) − ∂φ^α/∂q^i]`.
    pub fn residual(
        &self,
        t: f64,
        q: &[f64],
        qd: &[f64],
        qdd: &[f64],
        lambda: &[f64],
        lambda_dot: &[f64],
    ) -> Result<Vec<f64>> {
        let lag = self.lagrangian;
        let n = lag.n();
        let mut out = el_residual(lag, t, q, qd, qdd)?;
        let pj = self.phi_jets(t, q, qd)?;
        for i in 0..n {
            let vi = lag.qd_slot(i);
            for (alpha, pa) in pj.iter().enumerate() {
                out[i] += lambda_dot[alpha] * pa.grad[vi];
                let mut ddt = if lag.time_dependent {
                    pa.hess.get(vi, 0)
                } else {
                    0.0
                };
                for j in 0..n {
                    ddt += pa.hess.get(vi, lag.q_slot(j)) * qd[j];
                    ddt += pa.hess.get(vi, lag.qd_slot(j)) * qdd[j];
                }
                out[i] += lambda[alpha] * (ddt - pa.grad[lag.q_slot(i)]);
            }
        }
        Ok(out)
    }
}

/// A time-indexed sequence of states. Each state row is `q ++ q̇` (plus the
/// multipliers for vakonomic runs); `constraint_residuals` carries the
/// per-step max |φ| when constraints were declared.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Per-step constraint values (one row per recorded time, one column per
    /// declared constraint); empty when no constraints were declared.
    pub constraint_values: Vec<Vec<f64>>,
    /// Populated when integration stopped early, with the cause.
    pub truncated: Option<String>,
}

impl Trajectory {
    pub fn last_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least x0")
    }

    /// Max componentwise deviation against another trajectory on the shared
    /// time prefix, comparing only the first `k` state components.
    pub fn max_deviation(&self, other: &Trajectory, k: usize) -> f64 {
        let mut worst = 0.0f64;
        for (a, b) in self.states.iter().zip(&other.states) {
            for j in 0..k.min(a.len()).min(b.len()) {
                worst = worst.max((a[j] - b[j]).abs());
            }
        }
        worst
    }

    pub fn max_constraint_residual(&self) -> f64 {
        self.constraint_values
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Step plan: full steps of `h` plus one shorter final step landing exactly
/// on `t_final`.
fn step_sizes(t0: f64, t_final: f64, h: f64) -> Vec<f64> {
    let span = t_final - t0;
    let full = (span / h + 1e-9).floor() as usize;
    let mut steps = vec![h; full];
    let rest = span - full as f64 * h;
    if rest > 1e-12 * span.abs().max(1.0) {
        steps.push(rest);
    }
    steps
}

fn rk4_step<F>(f: &F, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k1 = f(t, x)?;
    let mid1: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
    let k2 = f(t + 0.5 * h, &mid1)?;
    let mid2: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
    let k3 = f(t + 0.5 * h, &mid2)?;
    let end: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
    let k4 = f(t + h, &end)?;
    Ok(x.iter()
        .enumerate()
        .map(|(i, a)| a + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Classical fixed-step RK4 on `(q, q̇)`. `phi` is an optional constraint
/// evaluator whose per-step max |φ| is recorded. Evaluation errors mid-flight
/// truncate the trajectory and record the cause.
pub fn integrate(
    dynamics: &dyn Dynamics,
    x0: &[f64],
    t0: f64,
    t_final: f64,
    h: f64,
    phi: Option<&dyn Fn(f64, &[f64], &[f64]) -> Result<Vec<f64>>>,
) -> Result<Trajectory> {
    if h <= 0.0 {
        return Err(Error::Precondition("integration step must be positive".into()));
    }
    let n = dynamics.dim();
    if x0.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            got: x0.len(),
        });
    }
    let deriv = |t: f64, x: &[f64]| -> Result<Vec<f64>> {
        let (q, qd) = x.split_at(n);
        let acc = dynamics.accel(t, q, qd)?;
        let mut dx = Vec::with_capacity(2 * n);
        dx.extend_from_slice(qd);
        dx.extend(acc);
        Ok(dx)
    };
    let plan = step_sizes(t0, t_final, h);
    let mut times = Vec::with_capacity(plan.len() + 1);
    let mut states = Vec::with_capacity(plan.len() + 1);
    let mut residuals: Vec<Vec<f64>> = Vec::new();
    let mut truncated = None;
    let mut t = t0;
    let mut x = x0.to_vec();
    let record =
        |t: f64, x: &[f64], residuals: &mut Vec<Vec<f64>>| -> Result<()> {
            if let Some(f) = phi {
                let (q, qd) = x.split_at(n);
                residuals.push(f(t, q, qd)?);
            }
            Ok(())
        };
    times.push(t);
    states.push(x.clone());
    record(t, &x, &mut residuals)?;
    for (k, hk) in plan.iter().enumerate() {
        match rk4_step(&deriv, t, &x, *hk) {
            Ok(next) => {
                x = next;
                t = if k + 1 == plan.len() {
                    t_final
                } else {
                    t0 + (k + 1) as f64 * h
                };
                times.push(t);
                states.push(x.clone());
                record(t, &x, &mut residuals)?;
            }
            Err(e) => {
                truncated = Some(format!("integration stopped at t={t}: {e}"));
                break;
            }
        }
    }
    Ok(Trajectory {
        times,
        states,
        constraint_values: residuals,
        truncated,
    })
}

/// Integrates a (possibly constrained) SODE as the first-order system on M:
/// `dq^a/dt = q̇^a`, `dq^α/dt = ψ^α`, `dq̇^a/dt = Γ^a`. States are M-points
/// `(q, q̇^a)`; the recorded residual is max |q̇^α − ψ^α| (zero by
/// construction here, but kept for symmetry with the other integrators).
pub fn integrate_sode(
    sode: &Sode,
    x0: &[f64],
    t0: f64,
    t_final: f64,
    h: f64,
) -> Result<Trajectory> {
    let n = sode.n();
    let nf = sode.free_count();
    let expected = n + nf;
    if x0.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: x0.len(),
        });
    }
    let deriv = |t: f64, x: &[f64]| -> Result<Vec<f64>> {
        let mut point = Vec::with_capacity(sode.m_space().dim());
        if sode.time_dependent {
            point.push(t);
        }
        point.extend_from_slice(x);
        let qd_full = sode.full_velocity(&point)?;
        let mut dx = Vec::with_capacity(expected);
        dx.extend(qd_full);
        for g in &sode.gamma {
            dx.push(g.eval_value(sode.m_space(), &point)?);
        }
        Ok(dx)
    };
    let plan = step_sizes(t0, t_final, h);
    let mut times = vec![t0];
    let mut states = vec![x0.to_vec()];
    let mut truncated = None;
    let mut t = t0;
    let mut x = x0.to_vec();
    for (k, hk) in plan.iter().enumerate() {
        match rk4_step(&deriv, t, &x, *hk) {
            Ok(next) => {
                x = next;
                t = if k + 1 == plan.len() {
                    t_final
                } else {
                    t0 + (k + 1) as f64 * h
                };
                times.push(t);
                states.push(x.clone());
            }
            Err(e) => {
                truncated = Some(format!("integration stopped at t={t}: {e}"));
                break;
            }
        }
    }
    Ok(Trajectory {
        times,
        states,
        constraint_values: Vec::new(),
        truncated,
    })
}

/// RK4 on the vakonomic state `(q, q̇, λ)`; φ-residuals are recorded per step.
pub fn integrate_vakonomic(
    system: &VakonomicSystem<'_>,
    q0: &[f64],
    qd0: &[f64],
    lambda0: &[f64],
    t0: f64,
    t_final: f64,
    h: f64,
) -> Result<Trajectory> {
    let n = system.lagrangian.n();
    let m = system.count();
    if q0.len() != n || qd0.len() != n || lambda0.len() != m {
        return Err(Error::DimensionMismatch {
            expected: 2 * n + m,
            got: q0.len() + qd0.len() + lambda0.len(),
        });
    }
    let deriv = |t: f64, x: &[f64]| -> Result<Vec<f64>> {
        let q = &x[..n];
        let qd = &x[n..2 * n];
        let lambda = &x[2 * n..];
        let (qdd, ld) = system.accel_and_lambda_dot(t, q, qd, lambda)?;
        let mut dx = Vec::with_capacity(2 * n + m);
        dx.extend_from_slice(qd);
        dx.extend(qdd);
        dx.extend(ld);
        Ok(dx)
    };
    let plan = step_sizes(t0, t_final, h);
    let mut times = Vec::with_capacity(plan.len() + 1);
    let mut states = Vec::with_capacity(plan.len() + 1);
    let mut residuals: Vec<Vec<f64>> = Vec::new();
    let mut truncated = None;
    let mut t = t0;
    let mut x: Vec<f64> = q0.iter().chain(qd0).chain(lambda0).copied().collect();
    times.push(t);
    states.push(x.clone());
    residuals.push(system.phi_values(t, &x[..n], &x[n..2 * n])?);
    for (k, hk) in plan.iter().enumerate() {
        match rk4_step(&deriv, t, &x, *hk) {
            Ok(next) => {
                x = next;
                t = if k + 1 == plan.len() {
                    t_final
                } else {
                    t0 + (k + 1) as f64 * h
                };
                times.push(t);
                states.push(x.clone());
                residuals.push(system.phi_values(t, &x[..n], &x[n..2 * n])?);
            }
            Err(e) => {
                truncated = Some(format!("integration stopped at t={t}: {e}"));
                break;
            }
        }
    }
    Ok(Trajectory {
        times,
        states,
        constraint_values: residuals,
        truncated,
    })
}

/// Chaplygin system in a local trivialization: base coordinates `r^a`,
/// connection coefficients `A^α_a(r)`, structure constants `C^α_{βγ}`
/// (antisymmetric in the lower indices) and the reduced Lagrangian
/// `l(r, ṙ, ξ)`.
#[derive(Debug, Clone)]
pub struct ChaplyginData {
    pub base_coords: Vec<String>,
    pub group_dim: usize,
    /// `A^α_a`: `group_dim` rows × `base_dim` columns, expressions over `r`.
    pub a_coeffs: Vec<Vec<Expr>>,
    /// `(α, β, γ, C^α_{βγ})` entries; omitted entries are zero.
    pub structure: Vec<(usize, usize, usize, f64)>,
    pub l_reduced: Expr,
    r_space: VarSpace,
    full_space: VarSpace,
}

impl ChaplyginData {
    pub fn new(
        base_coords: Vec<String>,
        group_dim: usize,
        a_coeffs: Vec<Vec<Expr>>,
        structure: Vec<(usize, usize, usize, f64)>,
        l_reduced: Expr,
    ) -> Result<Self> {
        let d = base_coords.len();
        if a_coeffs.len() != group_dim || a_coeffs.iter().any(|row| row.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: group_dim * d,
                got: a_coeffs.iter().map(Vec::len).sum(),
            });
        }
        for &(al, be, ga, _) in &structure {
            if al >= group_dim || be >= group_dim || ga >= group_dim {
                return Err(Error::Precondition(
                    "structure constant index out of range".into(),
                ));
            }
        }
        let r_space = VarSpace::new(base_coords.clone())?;
        let mut full: Vec<String> = base_coords.clone();
        full.extend(base_coords.iter().map(|c| format!("{c}d")));
        full.extend((1..=group_dim).map(|k| format!("xi{k}")));
        let full_space = VarSpace::new(full)?;
        for e in a_coeffs.iter().flatten() {
            for v in e.free_vars() {
                if r_space.index_of(&v).is_none() {
                    return Err(Error::ProblemFile {
                        section: "chaplygin".into(),
                        message: format!("connection coefficient references `{v}`"),
                    });
                }
            }
        }
        for v in l_reduced.free_vars() {
            if full_space.index_of(&v).is_none() {
                return Err(Error::ProblemFile {
                    section: "chaplygin".into(),
                    message: format!("reduced Lagrangian references `{v}`"),
                });
            }
        }
        Ok(ChaplyginData {
            base_coords,
            group_dim,
            a_coeffs,
            structure,
            l_reduced,
            r_space,
            full_space,
        })
    }

    pub fn base_dim(&self) -> usize {
        self.base_coords.len()
    }

    fn structure_const(&self, al: usize, be: usize, ga: usize) -> f64 {
        let mut c = 0.0;
        for &(a, b, g, v) in &self.structure {
            if a == al && b == be && g == ga {
                c += v;
            }
            // antisymmetry in the lower pair
            if a == al && b == ga && g == be {
                c -= v;
            }
        }
        c
    }

    /// Curvature coefficients
    /// `ℬ^α_{ab} = ∂A^α_a/∂r^b − ∂A^α_b/∂r^a − C^α_{βγ} A^β_b A^γ_a`,
    /// antisymmetric in `(a, b)` by construction.
    pub fn curvature(&self, r: &[f64]) -> Result<Vec<Mat>> {
        let d = self.base_dim();
        let jets = seed(&self.r_space, r)?;
        let a_jets: Vec<Vec<Jet2>> = self
            .a_coeffs
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| e.eval_with_jets(&self.r_space, &jets, r))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(self.group_dim);
        for alpha in 0..self.group_dim {
            let mut b = Mat::zeros(d, d);
            for a in 0..d {
                for bb in 0..d {
                    let mut v = a_jets[alpha][a].grad[bb] - a_jets[alpha][bb].grad[a];
                    for be in 0..self.group_dim {
                        for ga in 0..self.group_dim {
                            let c = self.structure_const(alpha, be, ga);
                            if c != 0.0 {
                                v -= c * a_jets[be][bb].value * a_jets[ga][a].value;
                            }
                        }
                    }
                    b.set(a, bb, v);
                }
            }
            out.push(b);
        }
        Ok(out)
    }

    /// Jet of `L*(r, ṙ) = l(r, ṙ, −A^α_a ṙ^a)` on the `(r, ṙ)` space.
    fn l_star_jet(&self, point: &[f64]) -> Result<Jet2> {
        let d = self.base_dim();
        let jets = seed(&self.reduced_space(), point)?;
        // inner components: r, ṙ as variables, ξ^α = −A^α_a(r) ṙ^a
        let mut inner: Vec<Jet2> = jets.clone();
        for alpha in 0..self.group_dim {
            let mut xi = Jet2::constant(0.0, 2 * d);
            for a in 0..d {
                let a_jet = {
                    // lift A^α_a(r) onto the (r, ṙ) space
                    let sub: Vec<f64> = point[..d].to_vec();
                    let aj = self.a_coeffs[alpha][a].eval_jet(&self.r_space, &sub)?;
                    let mut lifted = Jet2::constant(aj.value, 2 * d);
                    for u in 0..d {
                        lifted.grad[u] = aj.grad[u];
                        for v in 0..d {
                            lifted.hess.set(u, v, aj.hess.get(u, v));
                        }
                    }
                    lifted
                };
                xi = xi.sub(&a_jet.mul(&jets[d + a])?)?;
            }
            inner.push(xi);
        }
        let inner_vals: Vec<f64> = inner.iter().map(|j| j.value).collect();
        let outer = self.l_reduced.eval_jet(&self.full_space, &inner_vals)?;
        crate::jet::jet_compose(&outer, &inner)
    }

    /// Gyroscopic force `Λ_a = −(∂l/∂ξ^α)_c ℬ^α_{ab} ṙ^b`, the ξ-derivative
    /// evaluated at `ξ = −A ṙ`.
    pub fn lambda_values(&self, point: &[f64]) -> Result<Vec<f64>> {
        let d = self.base_dim();
        let curv = self.curvature(&point[..d])?;
        let mut inner_vals: Vec<f64> = point.to_vec();
        for alpha in 0..self.group_dim {
            let mut xi = 0.0;
            for a in 0..d {
                xi -= self.a_coeffs[alpha][a].eval_value(&self.r_space, &point[..d])? * point[d + a];
            }
            inner_vals.push(xi);
        }
        let lj = self.l_reduced.eval_jet(&self.full_space, &inner_vals)?;
        let mut out = vec![0.0; d];
        for a in 0..d {
            for alpha in 0..self.group_dim {
                let dl = lj.grad[2 * d + alpha];
                for b in 0..d {
                    out[a] -= dl * curv[alpha].get(a, b) * point[d + b];
                }
            }
        }
        Ok(out)
    }

    pub fn reduced_space(&self) -> VarSpace {
        let mut names: Vec<String> = self.base_coords.clone();
        names.extend(self.base_coords.iter().map(|c| format!("{c}d")));
        VarSpace::new(names).expect("validated in constructor")
    }
}

/// The reduced SODE on `T(Q/G)`:
/// `r̈^a = Ŵ^{ab}(∂L*/∂r^b − Λ_b)` with `Ŵ` the velocity Hessian of `L*`.
pub struct ChaplyginReduced<'a> {
    pub data: &'a ChaplyginData,
}

pub fn chaplygin_reduce(data: &ChaplyginData) -> ChaplyginReduced<'_> {
    ChaplyginReduced { data }
}

impl ChaplyginReduced<'_> {
    fn accel_point(&self, point: &[f64]) -> Result<Vec<f64>> {
        let d = self.data.base_dim();
        let lstar = self.data.l_star_jet(point)?;
        let mut w = Mat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                w.set(i, j, lstar.hess.get(d + i, d + j));
            }
        }
        hessian_det_check(&w, 0.0, &point[..d])?;
        let lambda = self.data.lambda_values(point)?;
        let rhs: Vec<f64> = (0..d).map(|b| lstar.grad[b] - lambda[b]).collect();
        w.solve(&rhs)
    }
}

impl Dynamics for ChaplyginReduced<'_> {
    fn dim(&self) -> usize {
        self.data.base_dim()
    }

    fn accel(&self, _t: f64, q: &[f64], qd: &[f64]) -> Result<Vec<f64>> {
        let mut p = q.to_vec();
        p.extend_from_slice(qd);
        self.accel_point(&p)
    }
}

/// A SODE whose accelerations are available with first derivatives, for the
/// hamiltonization test. The point layout is `(r, ṙ)`.
pub trait SodeField {
    fn base_dim(&self) -> usize;
    fn accel_jet1(&self, point: &[f64]) -> Result<Vec<Jet1>>;
}

/// Exact jets for an unconstrained, autonomous expression-defined SODE.
pub struct ExprSodeField<'a> {
    pub sode: &'a Sode,
}

impl SodeField for ExprSodeField<'_> {
    fn base_dim(&self) -> usize {
        self.sode.n()
    }

    fn accel_jet1(&self, point: &[f64]) -> Result<Vec<Jet1>> {
        Ok(self
            .sode
            .gamma_jets(point)?
            .iter()
            .map(Jet2::lower)
            .collect())
    }
}

impl SodeField for ChaplyginReduced<'_> {
    fn base_dim(&self) -> usize {
        self.data.base_dim()
    }

    /// Values are exact; the gradient is by central differences (the exact
    /// route would need third derivatives of `L*`, which the jet arithmetic
    /// deliberately does not carry).
    fn accel_jet1(&self, point: &[f64]) -> Result<Vec<Jet1>> {
        let d = 2 * self.data.base_dim();
        let vals = self.accel_point(point)?;
        let h = 1e-6;
        let mut jets: Vec<Jet1> = vals
            .iter()
            .map(|v| Jet1::constant(*v, d))
            .collect();
        let mut x = point.to_vec();
        for u in 0..d {
            x[u] = point[u] + h;
            let plus = self.accel_point(&x)?;
            x[u] = point[u] - h;
            let minus = self.accel_point(&x)?;
            x[u] = point[u];
            for (k, jet) in jets.iter_mut().enumerate() {
                jet.grad[u] = (plus[k] - minus[k]) / (2.0 * h);
            }
        }
        Ok(jets)
    }
}

struct HamiltonizationMap<'a> {
    field: &'a dyn SodeField,
    fiber: Vec<Expr>,
    space: VarSpace,
}

impl ParamMap for HamiltonizationMap<'_> {
    fn dim_params(&self) -> usize {
        2 * self.field.base_dim()
    }

    fn dim_target(&self) -> usize {
        4 * self.field.base_dim()
    }

    fn eval(&self, params: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_jac(params)?.0)
    }

    fn eval_jac(&self, params: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let d = self.field.base_dim();
        let dim = 2 * d;
        let jets = seed(&self.space, params)?;
        let f_jets: Vec<Jet2> = self
            .fiber
            .iter()
            .map(|e| e.eval_with_jets(&self.space, &jets, params))
            .collect::<Result<Vec<_>>>()?;
        let gamma = self.field.accel_jet1(params)?;

        // rows: r, p = F, ν_r = −Γ(F), ν_p = ṙ  in T*(T*(Q/G)) chart order
        let mut rows: Vec<Jet1> = Vec::with_capacity(4 * d);
        for a in 0..d {
            rows.push(Jet1::variable(params[a], a, dim));
        }
        for fj in &f_jets {
            rows.push(fj.lower());
        }
        for fj in f_jets.iter() {
            // Γ(F_a) = ṙ^b ∂F_a/∂r^b + Γ^b ∂F_a/∂ṙ^b
            let mut acc = Jet1::constant(0.0, dim);
            for b in 0..d {
                let rd = Jet1::variable(params[d + b], d + b, dim);
                acc.add_assign(&fj.partial(b).mul(&rd));
                acc.add_assign(&fj.partial(d + b).mul(&gamma[b]));
            }
            rows.push(acc.scale(-1.0));
        }
        for b in 0..d {
            rows.push(Jet1::variable(params[d + b], d + b, dim));
        }

        let mut vals = Vec::with_capacity(4 * d);
        let mut jac = Mat::zeros(4 * d, dim);
        for (k, r) in rows.iter().enumerate() {
            vals.push(r.value);
            for u in 0..dim {
                jac.set(k, u, r.grad[u]);
            }
        }
        Ok((vals, jac))
    }
}

/// Hamiltonization test: pushes the SODE forward through `F` into
/// `T*(Q/G)`, contracts with the canonical symplectic form and reports the
/// closedness residual of the resulting 1-form (as the isotropy residual of
/// its graph). Samples where the fiber Jacobian `∂F/∂ṙ` is singular are
/// rejected and counted.
pub fn hamiltonization_residual(
    field: &dyn SodeField,
    base_coords: &[String],
    fiber: Vec<Expr>,
    samples: &[Vec<f64>],
) -> Result<IsotropyReport> {
    let d = field.base_dim();
    if fiber.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: fiber.len(),
        });
    }
    let mut names: Vec<String> = base_coords.to_vec();
    names.extend(base_coords.iter().map(|c| format!("{c}d")));
    let space = VarSpace::new(names)?;
    let map = HamiltonizationMap {
        field,
        fiber,
        space: space.clone(),
    };
    // reject samples with singular fiber Jacobian, then sweep
    let mut usable = Vec::new();
    let mut rejected = 0usize;
    for p in samples {
        let jets = seed(&space, p)?;
        let mut fib = Mat::zeros(d, d);
        let mut ok = true;
        for (i, e) in map.fiber.iter().enumerate() {
            match e.eval_with_jets(&space, &jets, p) {
                Ok(j) => {
                    for b in 0..d {
                        fib.set(i, b, j.grad[d + b]);
                    }
                }
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok && fib.rank() == d {
            usable.push(p.clone());
        } else {
            rejected += 1;
        }
    }
    let mut report = crate::bundles::isotropy_residual(&map, &Chart::CotangentGeneric { d: 2 * d }, &usable);
    report.residual.samples_skipped += rejected;
    Ok(report)
}
