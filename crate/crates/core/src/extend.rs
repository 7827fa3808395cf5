//! Lagrangian construction: scalar recovery from a closed 1-form by path
//! integration, unconstrained extensions of constrained variational problems
//! (both the adapted-coordinate closed-form construction and Hamiltonian-flow
//! transport of isotropic submanifolds), and trajectory-level verification of
//! an extension against the constrained dynamics it came from.

use crate::bundles::{
    closedness_residual, isotropy_residual, Chart, ExprForm, Form1, IsotropyReport, ParamMap,
    ResidualReport, Sode,
};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jet::{seed, VarSpace};
use crate::linalg::Mat;
use crate::mech::{integrate, integrate_sode, Dynamics};

/// 8-point Gauss–Legendre nodes and weights on [-1, 1].
const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// `∫₀¹ ⟨comps(from + s·(to−from)), to−from⟩ ds` by 4-panel composite
/// 8-node Gauss–Legendre quadrature (32 evaluations).
pub fn path_integral<F>(comps: F, from: &[f64], to: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let d: Vec<f64> = to.iter().zip(from).map(|(b, a)| b - a).collect();
    let mut total = 0.0;
    for panel in 0..4 {
        let (lo, hi) = (panel as f64 / 4.0, (panel + 1) as f64 / 4.0);
        let half = (hi - lo) / 2.0;
        let mid = (hi + lo) / 2.0;
        for (node, weight) in GL8_NODES.iter().zip(&GL8_WEIGHTS) {
            let s = mid + half * node;
            let point: Vec<f64> = from.iter().zip(&d).map(|(a, di)| a + s * di).collect();
            let c = comps(&point)?;
            let pairing: f64 = c.iter().zip(&d).map(|(ci, di)| ci * di).sum();
            total += weight * half * pairing;
        }
    }
    Ok(total)
}

/// A scalar recovered from a closed 1-form: `L(x) = ∫ form` along the
/// straight segment from `base`, normalized by `L(base) = 0`. Construction
/// refuses forms whose closedness residual on the enclosing box exceeds the
/// tolerance.
pub struct ReconstructedScalar<'a> {
    form: &'a dyn Form1,
    pub base: Vec<f64>,
}

impl<'a> ReconstructedScalar<'a> {
    pub fn new(
        form: &'a dyn Form1,
        base: Vec<f64>,
        closedness_samples: &[Vec<f64>],
        tolerance: f64,
    ) -> Result<Self> {
        let rep = closedness_residual(form, closedness_samples);
        if rep.samples_used == 0 || rep.max > tolerance {
            return Err(Error::Precondition(format!(
                "reconstruction requires a closed form: closedness residual {:.3e} over {} \
                 samples exceeds {tolerance:.3e}",
                rep.max, rep.samples_used
            )));
        }
        if base.len() != form.dim() {
            return Err(Error::DimensionMismatch {
                expected: form.dim(),
                got: base.len(),
            });
        }
        Ok(ReconstructedScalar { form, base })
    }

    pub fn eval(&self, query: &[f64]) -> Result<f64> {
        path_integral(|p| self.form.components(p), &self.base, query)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Construction {
    ClosedForm,
    Flow,
}

/// Closed-form extension in adapted coordinates `(x, y)` with `C = {y = 0}`:
/// from a section `(γ_i(x), γ̃_a(x))` of `T*P|_C` with isotropic image,
/// builds `L(x, y) = γ̃_a(x) y^a + f(x)` where `∇f = γ`. The result restricts
/// to the section on `C` and is generally singular (linear in `y`).
pub struct ClosedFormExtension {
    pub x_space: VarSpace,
    pub y_names: Vec<String>,
    pub gamma_x: Vec<Expr>,
    pub gamma_y: Vec<Expr>,
    pub base: Vec<f64>,
}

impl ClosedFormExtension {
    pub fn new(
        x_names: Vec<String>,
        y_names: Vec<String>,
        gamma_x: Vec<Expr>,
        gamma_y: Vec<Expr>,
        base: Vec<f64>,
        isotropy_samples: &[Vec<f64>],
        tolerance: f64,
    ) -> Result<Self> {
        let x_space = VarSpace::new(x_names)?;
        if gamma_x.len() != x_space.dim() || gamma_y.len() != y_names.len() {
            return Err(Error::DimensionMismatch {
                expected: x_space.dim() + y_names.len(),
                got: gamma_x.len() + gamma_y.len(),
            });
        }
        for e in gamma_x.iter().chain(&gamma_y) {
            for v in e.free_vars() {
                if x_space.index_of(&v).is_none() {
                    return Err(Error::Precondition(format!(
                        "section component references `{v}`, not an adapted base variable"
                    )));
                }
            }
        }
        // isotropy of the section's image reduces to closedness of γ_i dx^i
        let form = ExprForm {
            space: x_space.clone(),
            comps: gamma_x.clone(),
        };
        let rep = closedness_residual(&form, isotropy_samples);
        if rep.samples_used == 0 || rep.max > tolerance {
            return Err(Error::Precondition(format!(
                "section is not isotropic: ∂γ_i/∂x^j antisymmetry residual {:.3e} \
                 exceeds {tolerance:.3e}",
                rep.max
            )));
        }
        Ok(ClosedFormExtension {
            x_space,
            y_names,
            gamma_x,
            gamma_y,
            base,
        })
    }

    pub fn construction(&self) -> Construction {
        Construction::ClosedForm
    }

    /// `L(x, y)`, normalized so the reconstructed base part vanishes at the
    /// stored base point.
    pub fn value(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let mut v = path_integral(
            |p| {
                self.gamma_x
                    .iter()
                    .map(|e| e.eval_value(&self.x_space, p))
                    .collect()
            },
            &self.base,
            x,
        )?;
        for (e, yi) in self.gamma_y.iter().zip(y) {
            v += e.eval_value(&self.x_space, x)? * yi;
        }
        Ok(v)
    }

    /// `dL` at `(x, y)`: x-components `∂γ̃_a/∂x^i y^a + γ_i(x)`, then
    /// y-components `γ̃_a(x)`.
    pub fn gradient(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let jets = seed(&self.x_space, x)?;
        let mut out = Vec::with_capacity(self.x_space.dim() + y.len());
        for i in 0..self.x_space.dim() {
            let mut v = self.gamma_x[i].eval_value(&self.x_space, x)?;
            for (e, yi) in self.gamma_y.iter().zip(y) {
                let j = e.eval_with_jets(&self.x_space, &jets, x)?;
                v += j.grad[i] * yi;
            }
            out.push(v);
        }
        for e in &self.gamma_y {
            out.push(e.eval_value(&self.x_space, x)?);
        }
        Ok(out)
    }

    /// Max deviation of `dL` restricted to `C = {y = 0}` from the section,
    /// at the given x-samples. Zero up to roundoff by construction.
    pub fn restriction_residual(&self, samples: &[Vec<f64>]) -> Result<f64> {
        let mut worst = 0.0f64;
        let zero_y = vec![0.0; self.y_names.len()];
        for x in samples {
            let grad = self.gradient(x, &zero_y)?;
            for (i, e) in self.gamma_x.iter().enumerate() {
                worst = worst.max((grad[i] - e.eval_value(&self.x_space, x)?).abs());
            }
            for (a, e) in self.gamma_y.iter().enumerate() {
                let want = e.eval_value(&self.x_space, x)?;
                worst = worst.max((grad[self.x_space.dim() + a] - want).abs());
            }
        }
        Ok(worst)
    }
}

/// Flow-based extension of an isotropic submanifold `Σ ⊂ T*TQ` along the
/// Hamiltonian flows of constraint functions `φ_k` (with respect to
/// `ω_TQ = dq∧dμ + dq̇∧dμ̃`). The extension is grid-free: each query point is
/// reached by a shooting solve over `(σ-parameters, flow times)`.
pub struct FlowExtension<'a> {
    pub sigma: &'a dyn ParamMap,
    pub chart_space: VarSpace,
    pub constraints: Vec<Expr>,
    pub flow_box: Vec<(f64, f64)>,
    pub h: f64,
    n: usize,
    seed_fn: Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>,
}

/// Chart variable names for `T*TQ` over the given coordinates:
/// `q^i`, `q^i d`, `mu_q^i`, `mut_q^i`.
pub fn cotangent_tangent_chart(coords: &[String]) -> Result<VarSpace> {
    let mut names: Vec<String> = coords.to_vec();
    names.extend(coords.iter().map(|c| format!("{c}d")));
    names.extend(coords.iter().map(|c| format!("mu_{c}")));
    names.extend(coords.iter().map(|c| format!("mut_{c}")));
    VarSpace::new(names)
}

impl<'a> FlowExtension<'a> {
    /// Extension of `Σ_{Γ,F}` for a constrained SODE; the shooting seed maps
    /// a TQ-query onto the M-parameters `(q, q̇^a)` with zero flow times.
    pub fn for_sigma(
        sigma: &'a crate::bundles::SigmaImmersion<'a>,
        constraints: Vec<Expr>,
        flow_box: Vec<(f64, f64)>,
        h: f64,
    ) -> Result<Self> {
        let sode = sigma.sode;
        let chart_space = cotangent_tangent_chart(sode.coords())?;
        let n = sode.n();
        let free: Vec<usize> = (0..sode.free_count())
            .map(|a| sode.free_coord(a))
            .collect();
        let seed_fn = Box::new(move |query: &[f64]| -> Vec<f64> {
            let mut s: Vec<f64> = query[..n].to_vec();
            for &c in &free {
                s.push(query[n + c]);
            }
            s
        });
        Self::new(sigma, chart_space, constraints, flow_box, h, seed_fn)
    }

    pub fn new(
        sigma: &'a dyn ParamMap,
        chart_space: VarSpace,
        constraints: Vec<Expr>,
        flow_box: Vec<(f64, f64)>,
        h: f64,
        seed_fn: Box<dyn Fn(&[f64]) -> Vec<f64> + 'a>,
    ) -> Result<Self> {
        let dim = sigma.dim_target();
        if chart_space.dim() != dim || dim % 4 != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: chart_space.dim(),
            });
        }
        if constraints.len() != flow_box.len() {
            return Err(Error::DimensionMismatch {
                expected: constraints.len(),
                got: flow_box.len(),
            });
        }
        for e in &constraints {
            for v in e.free_vars() {
                if chart_space.index_of(&v).is_none() {
                    return Err(Error::Precondition(format!(
                        "flow constraint references `{v}`, not a T*TQ chart variable"
                    )));
                }
            }
        }
        if h <= 0.0 {
            return Err(Error::Precondition("flow step must be positive".into()));
        }
        Ok(FlowExtension {
            sigma,
            chart_space,
            constraints,
            flow_box,
            h,
            n: dim / 4,
            seed_fn,
        })
    }

    pub fn k(&self) -> usize {
        self.constraints.len()
    }

    /// Hamiltonian vector field of `φ` at a chart point:
    /// `X = (∂φ/∂μ, ∂φ/∂μ̃, −∂φ/∂q, −∂φ/∂q̇)` in chart block order.
    fn hamiltonian_field(&self, which: usize, z: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let j = self.constraints[which].eval_grad(&self.chart_space, z)?;
        let mut x = vec![0.0; 4 * n];
        for i in 0..n {
            x[i] = j.grad[2 * n + i];
            x[n + i] = j.grad[3 * n + i];
            x[2 * n + i] = -j.grad[i];
            x[3 * n + i] = -j.grad[n + i];
        }
        Ok(x)
    }

    /// Transport a chart point along the flows of `φ_1 .. φ_k` for the given
    /// times, sequentially, by RK4 with step `h`.
    pub fn transport(&self, z0: &[f64], times: &[f64]) -> Result<Vec<f64>> {
        let mut z = z0.to_vec();
        for (k, &t_k) in times.iter().enumerate() {
            if t_k == 0.0 {
                continue;
            }
            let steps = (t_k.abs() / self.h).ceil().max(1.0) as usize;
            let dt = t_k / steps as f64;
            for _ in 0..steps {
                let f = |_t: f64, x: &[f64]| self.hamiltonian_field(k, x);
                z = rk4_flow_step(&f, &z, dt)?;
            }
        }
        Ok(z)
    }

    /// Preconditions at σ-samples: the constraints vanish on σ, and the
    /// flow directions are transverse and independent
    /// (`rank [J_σ | X_1 | … | X_k] = dim σ + k`).
    pub fn check_preconditions(&self, sigma_params: &[Vec<f64>], tolerance: f64) -> Result<()> {
        for p in sigma_params {
            let (z, jac) = self.sigma.eval_jac(p)?;
            for (k, c) in self.constraints.iter().enumerate() {
                let v = c.eval_value(&self.chart_space, &z)?;
                if v.abs() > tolerance {
                    return Err(Error::Precondition(format!(
                        "constraint φ_{} = {v:.3e} does not vanish on σ at {p:?}",
                        k + 1
                    )));
                }
            }
            let dp = self.sigma.dim_params();
            let mut ext = Mat::zeros(4 * self.n, dp + self.k());
            for r in 0..4 * self.n {
                for c in 0..dp {
                    ext.set(r, c, jac.get(r, c));
                }
            }
            for k in 0..self.k() {
                let x = self.hamiltonian_field(k, &z)?;
                for r in 0..4 * self.n {
                    ext.set(r, dp + k, x[r]);
                }
            }
            let rank = ext.rank();
            if rank < dp + self.k() {
                return Err(Error::Precondition(format!(
                    "flow directions not transverse to σ: rank {rank} < {} at {p:?}",
                    dp + self.k()
                )));
            }
        }
        Ok(())
    }

    /// The extended parametrized submanifold, over `(σ-params, t_1..t_k)`.
    pub fn extended_map(&'a self) -> ExtendedMap<'a> {
        ExtendedMap { ext: self }
    }

    /// Solve for the submanifold point over a TQ-query `(q, q̇)` by Newton
    /// iteration on `(σ-params, flow times)`, then return the full chart
    /// point. Errors when the projection is not invertible near the query.
    pub fn point_over(&self, query: &[f64]) -> Result<Vec<f64>> {
        let n2 = 2 * self.n;
        if query.len() != n2 {
            return Err(Error::DimensionMismatch {
                expected: n2,
                got: query.len(),
            });
        }
        let dp = self.sigma.dim_params();
        let dim_u = dp + self.k();
        if dim_u != n2 {
            return Err(Error::Precondition(format!(
                "extension dimension {dim_u} does not match dim TQ = {n2}; \
                 the extended object cannot be a graph over TQ"
            )));
        }
        let mut u: Vec<f64> = (self.seed_fn)(query);
        u.resize(dim_u, 0.0);
        let eval = |u: &[f64]| -> Result<Vec<f64>> {
            let z0 = self.sigma.eval(&u[..dp])?;
            self.transport(&z0, &u[dp..])
        };
        let scale = query.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for _ in 0..40 {
            let z = eval(&u)?;
            let r: Vec<f64> = (0..n2).map(|i| z[i] - query[i]).collect();
            let worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if worst < 1e-12 * scale {
                return Ok(z);
            }
            // forward-difference Jacobian of the TQ-projection
            let mut jac = Mat::zeros(n2, dim_u);
            let delta = 1e-7 * scale.max(1.0);
            for c in 0..dim_u {
                let mut up = u.clone();
                up[c] += delta;
                let zp = eval(&up)?;
                for rix in 0..n2 {
                    jac.set(rix, c, (zp[rix] - z[rix]) / delta);
                }
            }
            let step = jac.solve(&r).map_err(|_| {
                Error::Precondition(format!(
                    "projection to TQ not invertible near {query:?} (singular shooting \
                     Jacobian)"
                ))
            })?;
            for (ui, si) in u.iter_mut().zip(&step) {
                *ui -= si;
            }
        }
        Err(Error::Precondition(format!(
            "shooting solve did not converge over {query:?}"
        )))
    }

    /// `dL̄` at a TQ-query: the `(μ, μ̃)` components of the submanifold point
    /// over it, reordered as `(∂L/∂q = μ, ∂L/∂q̇ = μ̃)`.
    pub fn dl_at(&self, query: &[f64]) -> Result<Vec<f64>> {
        let z = self.point_over(query)?;
        Ok(z[2 * self.n..].to_vec())
    }

    /// `L̄(query) − L̄(base)` by path-integrating the dL̄ evaluator.
    pub fn lagrangian_value(&self, base: &[f64], query: &[f64]) -> Result<f64> {
        path_integral(|p| self.dl_at(p), base, query)
    }

    /// Verification sweep: isotropy of the extended object at the given
    /// parameter samples (finite-difference Jacobians), its dimension and
    /// fiber regularity `det ∂μ̃/∂q̇` at TQ-samples.
    pub fn verify(
        &'a self,
        extended_params: &[Vec<f64>],
        tq_samples: &[Vec<f64>],
    ) -> Result<FlowVerification> {
        let map = self.extended_map();
        let chart = Chart::CotangentOfTangent { n: self.n };
        let isotropy = isotropy_residual(&map, &chart, extended_params);
        let dimension_ok = map.dim_params() == 2 * self.n;
        let mut min_det = f64::INFINITY;
        let mut singular = 0usize;
        for q in tq_samples {
            match self.velocity_hessian(q) {
                Ok(w) => {
                    let d = w.det().abs();
                    min_det = min_det.min(d);
                    if d < 1e-10 * w.max_abs().max(1.0).powi(w.rows as i32) {
                        singular += 1;
                    }
                }
                Err(_) => singular += 1,
            }
        }
        Ok(FlowVerification {
            isotropy,
            dimension_ok,
            min_abs_det_w: if min_det.is_finite() { min_det } else { 0.0 },
            singular_samples: singular,
        })
    }

    /// `W = ∂μ̃/∂q̇` of the extension at a TQ-point, by central differences
    /// of the dL̄ evaluator.
    pub fn velocity_hessian(&self, query: &[f64]) -> Result<Mat> {
        let n = self.n;
        let delta = 1e-6;
        let mut w = Mat::zeros(n, n);
        for j in 0..n {
            let mut qp = query.to_vec();
            qp[n + j] += delta;
            let dp = self.dl_at(&qp)?;
            qp[n + j] = query[n + j] - delta;
            let dm = self.dl_at(&qp)?;
            for i in 0..n {
                w.set(i, j, (dp[n + i] - dm[n + i]) / (2.0 * delta));
            }
        }
        Ok(w)
    }
}

/// Verification summary for a flow extension.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FlowVerification {
    pub isotropy: IsotropyReport,
    pub dimension_ok: bool,
    pub min_abs_det_w: f64,
    pub singular_samples: usize,
}

/// The extended submanifold as a parametrized map over
/// `(σ-params, t_1..t_k)`, with finite-difference Jacobians.
pub struct ExtendedMap<'a> {
    ext: &'a FlowExtension<'a>,
}

impl ParamMap for ExtendedMap<'_> {
    fn dim_params(&self) -> usize {
        self.ext.sigma.dim_params() + self.ext.k()
    }

    fn dim_target(&self) -> usize {
        4 * self.ext.n
    }

    fn eval(&self, params: &[f64]) -> Result<Vec<f64>> {
        let dp = self.ext.sigma.dim_params();
        let z0 = self.ext.sigma.eval(&params[..dp])?;
        self.ext.transport(&z0, &params[dp..])
    }

    fn eval_jac(&self, params: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let vals = self.eval(params)?;
        let du = self.dim_params();
        let dt = self.dim_target();
        let mut jac = Mat::zeros(dt, du);
        let delta = 1e-4;
        for c in 0..du {
            let mut pp = params.to_vec();
            pp[c] += delta;
            let plus = self.eval(&pp)?;
            pp[c] = params[c] - delta;
            let minus = self.eval(&pp)?;
            for r in 0..dt {
                jac.set(r, c, (plus[r] - minus[r]) / (2.0 * delta));
            }
        }
        Ok((vals, jac))
    }
}

fn rk4_flow_step<F>(f: &F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    let k1 = f(0.0, x)?;
    let m1: Vec<f64> = x.iter().zip(&k1).map(|(a, k)| a + 0.5 * h * k).collect();
    let k2 = f(0.0, &m1)?;
    let m2: Vec<f64> = x.iter().zip(&k2).map(|(a, k)| a + 0.5 * h * k).collect();
    let k3 = f(0.0, &m2)?;
    let e: Vec<f64> = x.iter().zip(&k3).map(|(a, k)| a + h * k).collect();
    let k4 = f(0.0, &e)?;
    Ok(x.iter()
        .enumerate()
        .map(|(i, a)| a + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Euler-Lagrange dynamics of a numerically defined extension, driven by the
/// dL̄ evaluator: `∂μ̃/∂q̇ q̈ = μ − ∂μ̃/∂q q̇` with finite-difference fiber
/// Jacobians.
pub struct FlowElDynamics<'a> {
    pub ext: &'a FlowExtension<'a>,
}

impl Dynamics for FlowElDynamics<'_> {
    fn dim(&self) -> usize {
        self.ext.n
    }

    fn accel(&self, _t: f64, q: &[f64], qd: &[f64]) -> Result<Vec<f64>> {
        let n = self.ext.n;
        let mut query = q.to_vec();
        query.extend_from_slice(qd);
        let dl = self.ext.dl_at(&query)?;
        let w = self.ext.velocity_hessian(&query)?;
        let det = w.det();
        if det.abs() < 1e-10 * w.max_abs().max(1.0).powi(n as i32) {
            return Err(Error::SingularHessian {
                det,
                at: format!("q={q:?}"),
            });
        }
        // ∂μ̃/∂q by central differences
        let delta = 1e-6;
        let mut dq = Mat::zeros(n, n);
        for j in 0..n {
            let mut qp = query.clone();
            qp[j] += delta;
            let plus = self.ext.dl_at(&qp)?;
            qp[j] = query[j] - delta;
            let minus = self.ext.dl_at(&qp)?;
            for i in 0..n {
                dq.set(i, j, (plus[n + i] - minus[n + i]) / (2.0 * delta));
            }
        }
        let rhs: Vec<f64> = (0..n)
            .map(|i| {
                let mut r = dl[i];
                for j in 0..n {
                    r -= dq.get(i, j) * qd[j];
                }
                r
            })
            .collect();
        w.solve(&rhs)
    }
}

/// Trajectory-level verification of an extension: integrates the
/// Euler-Lagrange dynamics of L̄ from a full TQ state and the constrained
/// SODE from its M-projection, and reports the max state deviation together
/// with the constraint drift of the L̄-trajectory.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ExtensionComparison {
    pub max_state_deviation: f64,
    pub max_constraint_drift: f64,
    pub initial_on_m: bool,
    pub el_truncated: Option<String>,
    pub sode_truncated: Option<String>,
}

pub fn verify_extension(
    el_dynamics: &dyn Dynamics,
    sode: &Sode,
    x0: &[f64],
    t_final: f64,
    h: f64,
) -> Result<ExtensionComparison> {
    let n = sode.n();
    if x0.len() != 2 * n || el_dynamics.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            got: x0.len(),
        });
    }
    if sode.time_dependent {
        return Err(Error::Precondition(
            "verify_extension compares autonomous dynamics".into(),
        ));
    }
    // M-projection of the initial state: keep q and the free velocities
    let mut m0: Vec<f64> = x0[..n].to_vec();
    for a in 0..sode.free_count() {
        m0.push(x0[n + sode.free_coord(a)]);
    }
    // how far off M the supplied state is
    let full0 = sode.full_velocity(&m0)?;
    let init_drift = (0..n)
        .map(|i| (x0[n + i] - full0[i]).abs())
        .fold(0.0f64, f64::max);

    let el_traj = integrate(el_dynamics, x0, 0.0, t_final, h, None)?;
    let m_traj = integrate_sode(sode, &m0, 0.0, t_final, h)?;

    let mut max_dev = 0.0f64;
    let mut max_drift = init_drift;
    for (es, ms) in el_traj.states.iter().zip(&m_traj.states) {
        for i in 0..n {
            max_dev = max_dev.max((es[i] - ms[i]).abs());
        }
        for a in 0..sode.free_count() {
            let c = sode.free_coord(a);
            max_dev = max_dev.max((es[n + c] - ms[n + a]).abs());
        }
        // constraint drift of the EL trajectory
        let mut mp: Vec<f64> = es[..n].to_vec();
        for a in 0..sode.free_count() {
            mp.push(es[n + sode.free_coord(a)]);
        }
        if let Ok(full) = sode.full_velocity(&mp) {
            for (alpha_c, fi) in full.iter().enumerate() {
                if sode.free_slot_of(alpha_c).is_none() {
                    max_drift = max_drift.max((es[n + alpha_c] - fi).abs());
                }
            }
        }
    }
    Ok(ExtensionComparison {
        max_state_deviation: max_dev,
        max_constraint_drift: max_drift,
        initial_on_m: init_drift <= 1e-12,
        el_truncated: el_traj.truncated,
        sode_truncated: m_traj.truncated,
    })
}

/// Max deviation of two scalars-up-to-constant across queries: the spread of
/// their difference around its mean.
pub fn constant_offset_deviation(values_a: &[f64], values_b: &[f64]) -> f64 {
    assert_eq!(values_a.len(), values_b.len());
    if values_a.is_empty() {
        return 0.0;
    }
    let diffs: Vec<f64> = values_a.iter().zip(values_b).map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    diffs
        .iter()
        .fold(0.0f64, |m, d| m.max((d - mean).abs()))
}

/// Convenience: closedness report of a 1-form ahead of reconstruction.
pub fn closedness_of(form: &dyn Form1, samples: &[Vec<f64>]) -> ResidualReport {
    closedness_residual(form, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundles::{FiberMap, LieForm, MuForm, SigmaImmersion};
    use crate::expr::parse;
    use crate::mech::{el_sode, nonholonomic_sode, LagrangianDef, LinearConstraints};
    use crate::sample::{SampleBox, Sampler};

    fn names(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn exprs(srcs: &[&str]) -> Vec<Expr> {
        srcs.iter().map(|s| parse(s).unwrap()).collect()
    }

    fn draw(space: &VarSpace, ranges: Vec<(String, f64, f64)>, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let bx = SampleBox::new(ranges).unwrap();
        let mut s = Sampler::new(seed);
        (0..count).map(|_| s.draw_point(space, &bx)).collect()
    }

    #[test]
    fn reconstruct_harmonic_oscillator() {
        let s = Sode::unconstrained(names(&["q"]), exprs(&["-q"]), false).unwrap();
        let f = FiberMap::new(exprs(&["qd"]), &s).unwrap();
        let mu = MuForm::new(&s, &f).unwrap();
        let pts = draw(s.m_space(), vec![], 64, 0);
        let rec = ReconstructedScalar::new(&mu, vec![0.0, 0.0], &pts, 1e-10).unwrap();
        for p in draw(s.m_space(), vec![], 50, 1) {
            let want = 0.5 * p[1] * p[1] - 0.5 * p[0] * p[0];
            let got = rec.eval(&p).unwrap();
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn reconstruct_refuses_non_closed_form() {
        let s = Sode::unconstrained(names(&["x", "y"]), exprs(&["x*y", "x*y"]), false).unwrap();
        let f = FiberMap::new(exprs(&["xd", "yd"]), &s).unwrap();
        let mu = MuForm::new(&s, &f).unwrap();
        let ranges: Vec<(String, f64, f64)> = ["x", "y", "xd", "yd"]
            .iter()
            .map(|v| (v.to_string(), 1.0, 2.0))
            .collect();
        let pts = draw(s.m_space(), ranges, 16, 2);
        assert!(ReconstructedScalar::new(&mu, vec![1.5; 4], &pts, 1e-9).is_err());
    }

    #[test]
    fn reconstruct_nonholonomic_particle_constrained_lagrangian() {
        let s = Sode::new(
            names(&["x", "y", "z"]),
            names(&["x", "y"]),
            exprs(&["0", "-x*xd*yd/(1+x^2)"]),
            exprs(&["-x*yd"]),
            false,
        )
        .unwrap();
        let f = FiberMap::new(
            exprs(&[
                "xd - yd^2/(2*xd^2)*sqrt(1+x^2)*(1+x)",
                "sqrt(1+x^2)*yd/xd",
                "-sqrt(1+x^2)*yd/xd",
            ]),
            &s,
        )
        .unwrap();
        let lie = LieForm { sode: &s, fiber: &f };
        let ranges = vec![("xd".into(), 0.5, 2.0)];
        let pts = draw(s.m_space(), ranges.clone(), 64, 3);
        let base = vec![1.0, 0.0, 0.0, 1.0, 1.0];
        let rec = ReconstructedScalar::new(&lie, base.clone(), &pts, 1e-9).unwrap();
        let l_ref = parse("xd^2/2 + yd^2/2 * sqrt(1+x^2)/xd * (1+x)").unwrap();
        let l_base = l_ref.eval_value(s.m_space(), &base).unwrap();
        let queries = draw(s.m_space(), ranges, 50, 4);
        for q in &queries {
            let want = l_ref.eval_value(s.m_space(), q).unwrap() - l_base;
            let got = rec.eval(q).unwrap();
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn path_independence_over_polylines() {
        // integrating base -> mid -> query agrees with the straight segment
        let s = Sode::unconstrained(names(&["q"]), exprs(&["-sin(q)"]), false).unwrap();
        let f = FiberMap::new(exprs(&["qd"]), &s).unwrap();
        let mu = MuForm::new(&s, &f).unwrap();
        let base = vec![0.0, 0.0];
        let comps = |p: &[f64]| mu.components(p);
        for (mid, query) in [
            (vec![0.7, -0.3], vec![-0.5, 0.9]),
            (vec![-0.2, 0.8], vec![0.6, 0.4]),
        ] {
            let direct = path_integral(comps, &base, &query).unwrap();
            let via_mid = path_integral(comps, &base, &mid).unwrap()
                + path_integral(comps, &mid, &query).unwrap();
            assert!((direct - via_mid).abs() < 1e-9, "{direct} vs {via_mid}");
        }
    }

    #[test]
    fn reconstruction_base_independence() {
        // two base points differ by a constant: spread of the difference
        // around its mean stays at quadrature accuracy
        let s = Sode::unconstrained(names(&["q"]), exprs(&["-sin(q)"]), false).unwrap();
        let f = FiberMap::new(exprs(&["qd"]), &s).unwrap();
        let mu = MuForm::new(&s, &f).unwrap();
        let pts = draw(s.m_space(), vec![], 32, 5);
        let rec_a = ReconstructedScalar::new(&mu, vec![0.0, 0.0], &pts, 1e-10).unwrap();
        let rec_b = ReconstructedScalar::new(&mu, vec![0.5, -0.25], &pts, 1e-10).unwrap();
        let queries = draw(s.m_space(), vec![], 50, 6);
        let a: Vec<f64> = queries.iter().map(|q| rec_a.eval(q).unwrap()).collect();
        let b: Vec<f64> = queries.iter().map(|q| rec_b.eval(q).unwrap()).collect();
        assert!(constant_offset_deviation(&a, &b) < 1e-9);
    }

    #[test]
    fn closed_form_extension_r2_example() {
        // f(x, y, ẋ) = x·y: γ = dl on C for l = ẋ²/2 + ẋ y + x f, and the
        // extension restricted to ẏ = f is exactly l (up to l(base))
        let x_names = names(&["x", "y", "xd"]);
        let gamma_x = exprs(&["2*x*y", "xd + x^2", "xd + y"]);
        let gamma_y = exprs(&["x"]);
        let base = vec![0.0, 0.0, 0.0];
        let x_space = VarSpace::new(x_names.clone()).unwrap();
        let samples = draw(&x_space, vec![], 32, 7);
        let ext = ClosedFormExtension::new(
            x_names,
            names(&["yn"]),
            gamma_x,
            gamma_y,
            base,
            &samples,
            1e-10,
        )
        .unwrap();
        assert_eq!(ext.construction(), Construction::ClosedForm);
        // against L₁ = ẋ²/2 + ẋy + xẏ in original coordinates (y1 = ẏ − xy)
        let l1 = |x: f64, y: f64, xd: f64, yd: f64| 0.5 * xd * xd + xd * y + x * yd;
        for p in draw(&x_space, vec![], 20, 8) {
            let (x, y, xd) = (p[0], p[1], p[2]);
            for yd in [-0.7, 0.0, 1.3] {
                let y1 = yd - x * y;
                let got = ext.value(&[x, y, xd], &[y1]).unwrap();
                assert!((got - l1(x, y, xd, yd)).abs() < 1e-10, "{got}");
            }
        }
        assert!(ext.restriction_residual(&samples).unwrap() < 1e-12);
    }

    #[test]
    fn closed_form_extension_zero_normal_components() {
        let x_names = names(&["u", "v"]);
        let x_space = VarSpace::new(x_names.clone()).unwrap();
        let samples = draw(&x_space, vec![], 16, 9);
        let ext = ClosedFormExtension::new(
            x_names,
            names(&["w"]),
            exprs(&["v", "u"]), // d(uv)
            exprs(&["0"]),
            vec![0.0, 0.0],
            &samples,
            1e-10,
        )
        .unwrap();
        for p in draw(&x_space, vec![], 10, 10) {
            let got = ext.value(&p, &[3.7]).unwrap();
            assert!((got - p[0] * p[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_extension_disk_momentum_constraints() {
        // φ_k = μ̃-type constraints: adapted section has zero normal part and
        // γ = d(θ̇² + φ̇²/2); recovers the singular L = θ̇² + φ̇²/2
        let x_names = names(&["theta", "phi", "x", "y", "thetad", "phid"]);
        let x_space = VarSpace::new(x_names.clone()).unwrap();
        let samples = draw(&x_space, vec![], 16, 11);
        let ext = ClosedFormExtension::new(
            x_names,
            names(&["u1", "u2"]),
            exprs(&["0", "0", "0", "0", "2*thetad", "phid"]),
            exprs(&["0", "0"]),
            vec![0.0; 6],
            &samples,
            1e-10,
        )
        .unwrap();
        for p in draw(&x_space, vec![], 10, 12) {
            let got = ext.value(&p, &[0.3, -0.8]).unwrap();
            let want = p[4] * p[4] + 0.5 * p[5] * p[5];
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn closed_form_extension_rejects_non_isotropic_section() {
        let x_names = names(&["u", "v"]);
        let x_space = VarSpace::new(x_names.clone()).unwrap();
        let samples = draw(&x_space, vec![], 8, 13);
        assert!(ClosedFormExtension::new(
            x_names,
            names(&["w"]),
            exprs(&["v", "-u"]),
            exprs(&["0"]),
            vec![0.0, 0.0],
            &samples,
            1e-10,
        )
        .is_err());
    }

    fn disk_sode() -> (Sode, FiberMap) {
        let s = Sode::new(
            names(&["theta", "phi", "x", "y"]),
            names(&["theta", "phi"]),
            exprs(&["0", "0"]),
            exprs(&["cos(phi)*thetad", "sin(phi)*thetad"]),
            false,
        )
        .unwrap();
        let f = FiberMap::new(exprs(&["2*thetad", "phid", "0", "0"]), &s).unwrap();
        (s, f)
    }

    #[test]
    fn flow_extension_rolling_disk_regular_lagrangian() {
        let (s, f) = disk_sode();
        let sigma = SigmaImmersion { sode: &s, fiber: &f };
        let ext = FlowExtension::for_sigma(
            &sigma,
            exprs(&[
                "xd - cos(phi)*thetad + mut_x",
                "yd - sin(phi)*thetad + mut_y",
            ]),
            vec![(-3.0, 3.0), (-3.0, 3.0)],
            1e-2,
        )
        .unwrap();
        let sigma_pts = draw(s.m_space(), vec![], 16, 14);
        ext.check_preconditions(&sigma_pts, 1e-10).unwrap();

        // zero flow time returns σ unchanged
        let z0 = sigma.eval(&sigma_pts[0]).unwrap();
        assert_eq!(ext.transport(&z0, &[0.0, 0.0]).unwrap(), z0);

        // dL̄ against the reference L̄ = ½(θ̇²+φ̇²−ẋ²−ẏ²) + θ̇(cosφ ẋ + sinφ ẏ)
        let lbar = LagrangianDef::new(
            names(&["theta", "phi", "x", "y"]),
            parse("(thetad^2 + phid^2 - xd^2 - yd^2)/2 + thetad*(cos(phi)*xd + sin(phi)*yd)")
                .unwrap(),
            false,
        )
        .unwrap();
        let tq = draw(lbar.space(), vec![], 64, 15);
        for p in &tq {
            let dl = ext.dl_at(p).unwrap();
            let lj = lbar.jet(0.0, &p[..4], &p[4..]).unwrap();
            for (k, got) in dl.iter().enumerate() {
                assert!(
                    (got - lj.grad[k]).abs() < 1e-6,
                    "component {k}: {got} vs {}",
                    lj.grad[k]
                );
            }
        }
    }

    #[test]
    fn flow_extension_preserves_isotropy_and_dimension() {
        let (s, f) = disk_sode();
        let sigma = SigmaImmersion { sode: &s, fiber: &f };
        let ext = FlowExtension::for_sigma(
            &sigma,
            exprs(&[
                "xd - cos(phi)*thetad + mut_x",
                "yd - sin(phi)*thetad + mut_y",
            ]),
            vec![(-3.0, 3.0), (-3.0, 3.0)],
            1e-2,
        )
        .unwrap();
        // extended parameter samples: σ-params plus flow times
        let mut smp = Sampler::new(16);
        let bx = SampleBox::default();
        let ext_params: Vec<Vec<f64>> = (0..24)
            .map(|_| {
                let mut p = smp.draw_point(s.m_space(), &bx);
                p.push(smp.uniform(-0.5, 0.5));
                p.push(smp.uniform(-0.5, 0.5));
                p
            })
            .collect();
        let tq = draw(
            &cotangent_tangent_chart(s.coords()).unwrap(),
            vec![],
            8,
            17,
        );
        let tq8: Vec<Vec<f64>> = tq.iter().map(|p| p[..8].to_vec()).collect();
        let v = ext.verify(&ext_params, &tq8).unwrap();
        assert!(v.dimension_ok);
        assert!(v.isotropy.residual.max < 1e-6, "{}", v.isotropy.residual.max);
        assert_eq!(v.isotropy.min_rank, 8);
        assert_eq!(v.singular_samples, 0, "min det {}", v.min_abs_det_w);
    }

    #[test]
    fn flow_extension_nonholonomic_particle() {
        let s = Sode::new(
            names(&["x", "y", "z"]),
            names(&["x", "y"]),
            exprs(&["0", "-x*xd*yd/(1+x^2)"]),
            exprs(&["-x*yd"]),
            false,
        )
        .unwrap();
        let f = FiberMap::new(
            exprs(&[
                "xd - yd^2/(2*xd^2)*sqrt(1+x^2)*(1+x)",
                "sqrt(1+x^2)*yd/xd",
                "-sqrt(1+x^2)*yd/xd",
            ]),
            &s,
        )
        .unwrap();
        let sigma = SigmaImmersion { sode: &s, fiber: &f };
        let ext = FlowExtension::for_sigma(
            &sigma,
            exprs(&["mut_z + sqrt(1+x^2)*yd/xd"]),
            vec![(-3.0, 3.0)],
            1e-2,
        )
        .unwrap();
        let lbar = LagrangianDef::new(
            names(&["x", "y", "z"]),
            parse("xd^2/2 + (1-x)*sqrt(1+x^2)*yd^2/(2*xd) - sqrt(1+x^2)*zd*yd/xd").unwrap(),
            false,
        )
        .unwrap();
        let ranges = vec![("xd".into(), 0.5, 2.0)];
        let tq = draw(lbar.space(), ranges, 64, 18);
        for p in &tq {
            let dl = ext.dl_at(p).unwrap();
            let lj = lbar.jet(0.0, &p[..3], &p[3..]).unwrap();
            for (k, got) in dl.iter().enumerate() {
                assert!(
                    (got - lj.grad[k]).abs() < 1e-6,
                    "component {k}: {got} vs {}",
                    lj.grad[k]
                );
            }
        }
    }

    #[test]
    fn flow_el_dynamics_matches_reference_lagrangian() {
        let (s, f) = disk_sode();
        let sigma = SigmaImmersion { sode: &s, fiber: &f };
        let ext = FlowExtension::for_sigma(
            &sigma,
            exprs(&[
                "xd - cos(phi)*thetad + mut_x",
                "yd - sin(phi)*thetad + mut_y",
            ]),
            vec![(-3.0, 3.0), (-3.0, 3.0)],
            1e-2,
        )
        .unwrap();
        let dyn_ext = FlowElDynamics { ext: &ext };
        let lbar = LagrangianDef::new(
            names(&["theta", "phi", "x", "y"]),
            parse("(thetad^2 + phid^2 - xd^2 - yd^2)/2 + thetad*(cos(phi)*xd + sin(phi)*yd)")
                .unwrap(),
            false,
        )
        .unwrap();
        let el = el_sode(&lbar);
        let q = [0.1, 0.4, 0.0, 0.0];
        let qd = [1.0, 0.8, 0.7, 0.3];
        let a_num = dyn_ext.accel(0.0, &q, &qd).unwrap();
        let a_ref = el.accel(0.0, &q, &qd).unwrap();
        for (x, y) in a_num.iter().zip(&a_ref) {
            assert!((x - y).abs() < 1e-5, "{a_num:?} vs {a_ref:?}");
        }
    }

    #[test]
    fn verify_extension_rolling_disk() {
        let (s, _) = disk_sode();
        let lbar = LagrangianDef::new(
            names(&["theta", "phi", "x", "y"]),
            parse("(thetad^2 + phid^2 - xd^2 - yd^2)/2 + thetad*(cos(phi)*xd + sin(phi)*yd)")
                .unwrap(),
            false,
        )
        .unwrap();
        let el = el_sode(&lbar);
        // full state over M-initial (0,0,0,0,1,1)
        let x0 = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let cmp = verify_extension(&el, &s, &x0, 5.0, 1e-3).unwrap();
        assert!(cmp.initial_on_m);
        assert!(cmp.max_state_deviation < 1e-6, "{}", cmp.max_state_deviation);
        assert!(cmp.max_constraint_drift < 1e-6);
        // cross-check against the known analytic solution via the raw SODE
        let traj = integrate(&el, &x0, 0.0, 5.0, 1e-3, None).unwrap();
        for (t, st) in traj.times.iter().zip(&traj.states).step_by(500) {
            assert!((st[0] - t).abs() < 1e-6);
            assert!((st[2] - t.sin()).abs() < 1e-6);
        }
    }

    #[test]
    fn verify_extension_reports_off_m_initial() {
        let (s, _) = disk_sode();
        let lbar = LagrangianDef::new(
            names(&["theta", "phi", "x", "y"]),
            parse("(thetad^2 + phid^2 - xd^2 - yd^2)/2 + thetad*(cos(phi)*xd + sin(phi)*yd)")
                .unwrap(),
            false,
        )
        .unwrap();
        let el = el_sode(&lbar);
        // ẋ ≠ cosφ θ̇: off M by 0.5
        let x0 = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.5, 0.0];
        let cmp = verify_extension(&el, &s, &x0, 0.5, 1e-3).unwrap();
        assert!(!cmp.initial_on_m);
        assert!(cmp.max_constraint_drift >= 0.5);
    }

    #[test]
    fn nonholonomic_matches_el_restriction_for_particle() {
        // the particle's L̄ restricted to M reproduces its nonholonomic SODE
        let s = Sode::new(
            names(&["x", "y", "z"]),
            names(&["x", "y"]),
            exprs(&["0", "-x*xd*yd/(1+x^2)"]),
            exprs(&["-x*yd"]),
            false,
        )
        .unwrap();
        let lbar = LagrangianDef::new(
            names(&["x", "y", "z"]),
            parse("xd^2/2 + (1-x)*sqrt(1+x^2)*yd^2/(2*xd) - sqrt(1+x^2)*zd*yd/xd").unwrap(),
            false,
        )
        .unwrap();
        let el = el_sode(&lbar);
        let x0 = [1.0, 0.0, 0.0, 1.0, 1.0, -1.0];
        let cmp = verify_extension(&el, &s, &x0, 2.0, 1e-3).unwrap();
        assert!(cmp.initial_on_m);
        assert!(cmp.max_state_deviation < 1e-5, "{}", cmp.max_state_deviation);
        // and the plain L with the same constraint does NOT reproduce it
        let l_plain = LagrangianDef::new(
            names(&["x", "y", "z"]),
            parse("(xd^2 + yd^2 + zd^2)/2").unwrap(),
            false,
        )
        .unwrap();
        let lc = LinearConstraints::new(
            &names(&["x", "y", "z"]),
            vec![exprs(&["0", "x", "1"])],
            exprs(&["0"]),
            false,
        )
        .unwrap();
        let nh = nonholonomic_sode(&l_plain, &lc);
        let traj_nh = integrate(&nh, &x0, 0.0, 2.0, 1e-3, None).unwrap();
        let traj_el = integrate(&el, &x0, 0.0, 2.0, 1e-3, None).unwrap();
        assert!(traj_nh.max_deviation(&traj_el, 6) < 1e-5);
    }
}
