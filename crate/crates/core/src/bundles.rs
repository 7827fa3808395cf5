//! Coordinate realizations of the canonical geometric objects: the Tulczyjew
//! maps κ_Q and α_Q, the 1-form μ_{Γ,F} built from a SODE and a fiber map,
//! and numerical tests for closedness of 1-forms and isotropy of
//! parametrized immersions.
//!
//! Chart conventions, fixed once for the whole crate:
//!
//! * `T*TQ` is ordered `(q^i, q̇^i, μ_i, μ̃_i)` with symplectic form
//!   `ω_TQ = dq^i ∧ dμ_i + dq̇^i ∧ dμ̃_i`;
//! * `TT*Q` is ordered `(q^i, p_i, q̇^i, ṗ_i)` with
//!   `d_T ω_Q = dq̇^i ∧ dp_i + dq^i ∧ dṗ_i`.
//!
//! Every residual formula downstream depends on this ordering.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jet::{seed, Jet1, Jet2, VarSpace};
use crate::linalg::Mat;

/// Explicit second-order system, possibly restricted to a velocity-constraint
/// submanifold `M = {q̇^α = ψ^α(q, q̇^a)}`.
///
/// Coordinates keep their declared order; the *free* subset (those whose
/// velocities are coordinates on M) is an arbitrary sub-list. Velocities are
/// named by the `qd` convention, time is `t` when the system is declared
/// time-dependent.
#[derive(Debug, Clone)]
pub struct Sode {
    coords: Vec<String>,
    free: Vec<usize>,
    constrained: Vec<usize>,
    /// Γ^a, one per free coordinate, over the M-space variables.
    pub gamma: Vec<Expr>,
    /// ψ^α, one per constrained coordinate, over the M-space variables.
    pub psi: Vec<Expr>,
    pub time_dependent: bool,
    m_space: VarSpace,
}

impl Sode {
    pub fn new(
        coords: Vec<String>,
        free_names: Vec<String>,
        gamma: Vec<Expr>,
        psi: Vec<Expr>,
        time_dependent: bool,
    ) -> Result<Self> {
        let n = coords.len();
        let mut free = Vec::new();
        for name in &free_names {
            match coords.iter().position(|c| c == name) {
                Some(i) => free.push(i),
                None => {
                    return Err(Error::Precondition(format!(
                        "free coordinate `{name}` is not a declared coordinate"
                    )))
                }
            }
        }
        let constrained: Vec<usize> = (0..n).filter(|i| !free.contains(i)).collect();
        if free.is_empty() {
            return Err(Error::Precondition(
                "a SODE needs at least one free velocity (m < n)".into(),
            ));
        }
        if gamma.len() != free.len() {
            return Err(Error::DimensionMismatch {
                expected: free.len(),
                got: gamma.len(),
            });
        }
        if psi.len() != constrained.len() {
            return Err(Error::DimensionMismatch {
                expected: constrained.len(),
                got: psi.len(),
            });
        }
        let mut names: Vec<String> = Vec::new();
        if time_dependent {
            names.push("t".into());
        }
        names.extend(coords.iter().cloned());
        for &a in &free {
            names.push(format!("{}d", coords[a]));
        }
        let m_space = VarSpace::new(names)?;
        for (what, exprs) in [("gamma", &gamma), ("psi", &psi)] {
            for e in exprs.iter() {
                for v in e.free_vars() {
                    if m_space.index_of(&v).is_none() {
                        return Err(Error::ProblemFile {
                            section: "sode".into(),
                            message: format!("{what} references undeclared variable `{v}`"),
                        });
                    }
                }
            }
        }
        Ok(Sode {
            coords,
            free,
            constrained,
            gamma,
            psi,
            time_dependent,
            m_space,
        })
    }

    /// Unconstrained system: every velocity free.
    pub fn unconstrained(coords: Vec<String>, gamma: Vec<Expr>, time_dependent: bool) -> Result<Self> {
        let free = coords.clone();
        Sode::new(coords, free, gamma, vec![], time_dependent)
    }

    pub fn n(&self) -> usize {
        self.coords.len()
    }

    pub fn m(&self) -> usize {
        self.constrained.len()
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn is_constrained(&self) -> bool {
        !self.constrained.is_empty()
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    /// Variable space of M: `[t,] q^1..q^n, q̇^{a_1}..q̇^{a_{n-m}}`.
    pub fn m_space(&self) -> &VarSpace {
        &self.m_space
    }

    fn t_offset(&self) -> usize {
        usize::from(self.time_dependent)
    }

    /// Index of `q^i` in the M-space.
    pub fn q_slot(&self, i: usize) -> usize {
        self.t_offset() + i
    }

    /// Index of the a-th free velocity in the M-space.
    pub fn qd_slot(&self, a: usize) -> usize {
        self.t_offset() + self.n() + a
    }

    /// Coordinate index of the a-th free coordinate.
    pub fn free_coord(&self, a: usize) -> usize {
        self.free[a]
    }

    /// Coordinate index of the α-th constrained coordinate.
    pub fn constrained_coord(&self, alpha: usize) -> usize {
        self.constrained[alpha]
    }

    /// For a coordinate index: `Some(a)` when free (a-th free slot), `None`
    /// when its velocity is constrained.
    pub fn free_slot_of(&self, coord: usize) -> Option<usize> {
        self.free.iter().position(|&c| c == coord)
    }

    pub fn constrained_slot_of(&self, coord: usize) -> Option<usize> {
        self.constrained.iter().position(|&c| c == coord)
    }

    fn eval_all(&self, exprs: &[Expr], point: &[f64]) -> Result<Vec<Jet2>> {
        let jets = seed(&self.m_space, point)?;
        exprs
            .iter()
            .map(|e| e.eval_with_jets(&self.m_space, &jets, point))
            .collect()
    }

    pub fn gamma_jets(&self, point: &[f64]) -> Result<Vec<Jet2>> {
        self.eval_all(&self.gamma, point)
    }

    pub fn psi_jets(&self, point: &[f64]) -> Result<Vec<Jet2>> {
        self.eval_all(&self.psi, point)
    }

    /// The full velocity vector (q̇^1..q̇^n) at an M-point, constrained slots
    /// filled with ψ values.
    pub fn full_velocity(&self, point: &[f64]) -> Result<Vec<f64>> {
        let mut qd = vec![0.0; self.n()];
        for (a, &c) in self.free.iter().enumerate() {
            qd[c] = point[self.qd_slot(a)];
        }
        for (alpha, &c) in self.constrained.iter().enumerate() {
            qd[c] = self.psi[alpha].eval_value(&self.m_space, point)?;
        }
        Ok(qd)
    }
}

/// Candidate generalized Legendre transform `F: M → T*Q` over `Q`: only the
/// n momentum components are user-supplied, so F automatically projects over
/// the base. Fiberwise rank is checked at sample points, never assumed.
#[derive(Debug, Clone)]
pub struct FiberMap {
    pub comps: Vec<Expr>,
}

impl FiberMap {
    pub fn new(comps: Vec<Expr>, sode: &Sode) -> Result<Self> {
        if comps.len() != sode.n() {
            return Err(Error::DimensionMismatch {
                expected: sode.n(),
                got: comps.len(),
            });
        }
        for e in &comps {
            for v in e.free_vars() {
                if sode.m_space().index_of(&v).is_none() {
                    return Err(Error::ProblemFile {
                        section: "fibermap".into(),
                        message: format!("F references undeclared variable `{v}`"),
                    });
                }
            }
        }
        Ok(FiberMap { comps })
    }

    pub fn jets(&self, sode: &Sode, point: &[f64]) -> Result<Vec<Jet2>> {
        sode.eval_all(&self.comps, point)
    }

    /// Fiber Jacobian ∂F_i/∂q̇^a (n × (n−m)) and its rank.
    pub fn fiber_rank(&self, sode: &Sode, point: &[f64]) -> Result<usize> {
        let jets = self.jets(sode, point)?;
        let mut j = Mat::zeros(sode.n(), sode.free_count());
        for (i, fj) in jets.iter().enumerate() {
            for a in 0..sode.free_count() {
                j.set(i, a, fj.grad[sode.qd_slot(a)]);
            }
        }
        Ok(j.rank())
    }
}

/// Components of a 1-form at a base point, in the canonical coordinate
/// coframe of the declared chart.
#[derive(Debug, Clone, PartialEq)]
pub struct CovectorSample {
    pub base: Vec<f64>,
    pub comps: Vec<f64>,
}

/// Canonical involution of TTQ: `(q, v, q̇, v̇) ↦ (q, q̇, v, v̇)`.
pub fn kappa_q(p: &[f64]) -> Result<Vec<f64>> {
    if p.len() % 4 != 0 {
        return Err(Error::DimensionMismatch {
            expected: 4 * (p.len() / 4 + 1),
            got: p.len(),
        });
    }
    let n = p.len() / 4;
    let mut out = p.to_vec();
    out[n..2 * n].copy_from_slice(&p[2 * n..3 * n]);
    out[2 * n..3 * n].copy_from_slice(&p[n..2 * n]);
    Ok(out)
}

/// Tulczyjew symplectomorphism `TT*Q → T*TQ`:
/// `(q, p, q̇, ṗ) ↦ (q, q̇, ṗ, p)`.
pub fn alpha_q(p: &[f64]) -> Result<Vec<f64>> {
    if p.len() % 4 != 0 {
        return Err(Error::DimensionMismatch {
            expected: 4 * (p.len() / 4 + 1),
            got: p.len(),
        });
    }
    let n = p.len() / 4;
    let mut out = p.to_vec();
    out[n..2 * n].copy_from_slice(&p[2 * n..3 * n]); // q̇
    out[2 * n..3 * n].copy_from_slice(&p[3 * n..4 * n]); // ṗ
    out[3 * n..4 * n].copy_from_slice(&p[n..2 * n]); // p
    Ok(out)
}

/// Inverse of [`alpha_q`]: `(q, q̇, μ, μ̃) ↦ (q, μ̃, q̇, μ)`.
pub fn alpha_q_inv(p: &[f64]) -> Result<Vec<f64>> {
    if p.len() % 4 != 0 {
        return Err(Error::DimensionMismatch {
            expected: 4 * (p.len() / 4 + 1),
            got: p.len(),
        });
    }
    let n = p.len() / 4;
    let mut out = p.to_vec();
    out[n..2 * n].copy_from_slice(&p[3 * n..4 * n]);
    out[2 * n..3 * n].copy_from_slice(&p[n..2 * n]);
    out[3 * n..4 * n].copy_from_slice(&p[2 * n..3 * n]);
    Ok(out)
}

/// Which canonical chart an immersion targets. Each chart fixes the list of
/// conjugate coordinate pairs used to pull the symplectic form back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    /// `T*TQ` with `ω_TQ = dq^i∧dμ_i + dq̇^i∧dμ̃_i`; `n = dim Q`.
    CotangentOfTangent { n: usize },
    /// `TT*Q` with `d_T ω_Q = dq̇^i∧dp_i + dq^i∧dṗ_i`; `n = dim Q`.
    TangentOfCotangent { n: usize },
    /// `T*X` for an arbitrary base of dimension `d`, ordered
    /// `(x^1..x^d, ν_1..ν_d)` with `ω = dx^k∧dν_k`.
    CotangentGeneric { d: usize },
}

impl Chart {
    pub fn dim(&self) -> usize {
        match self {
            Chart::CotangentOfTangent { n } | Chart::TangentOfCotangent { n } => 4 * n,
            Chart::CotangentGeneric { d } => 2 * d,
        }
    }

    /// Conjugate index pairs `(a_k, b_k)` with `ω = Σ_k dz^{a_k} ∧ dz^{b_k}`.
    pub fn conjugate_pairs(&self) -> Vec<(usize, usize)> {
        match self {
            Chart::CotangentOfTangent { n } => (0..2 * n).map(|i| (i, 2 * n + i)).collect(),
            Chart::TangentOfCotangent { n } => {
                let mut pairs: Vec<(usize, usize)> =
                    (0..*n).map(|i| (2 * n + i, n + i)).collect(); // dq̇^i ∧ dp_i
                pairs.extend((0..*n).map(|i| (i, 3 * n + i))); // dq^i ∧ dṗ_i
                pairs
            }
            Chart::CotangentGeneric { d } => (0..*d).map(|i| (i, d + i)).collect(),
        }
    }
}

/// A 1-form sampled through a callable: components and, when available, the
/// exact Jacobian of the components with respect to the base coordinates.
pub trait Form1 {
    /// Base dimension (number of components equals it).
    fn dim(&self) -> usize;
    fn components(&self, point: &[f64]) -> Result<Vec<f64>>;
    /// Components plus Jacobian `J[k][u] = ∂comp_k/∂x^u`.
    fn components_jac(&self, point: &[f64]) -> Result<(Vec<f64>, Mat)>;
}

/// A 1-form whose components are expressions over a variable space.
pub struct ExprForm {
    pub space: VarSpace,
    pub comps: Vec<Expr>,
}

impl Form1 for ExprForm {
    fn dim(&self) -> usize {
        self.space.dim()
    }

    fn components(&self, point: &[f64]) -> Result<Vec<f64>> {
        self.comps
            .iter()
            .map(|e| e.eval_value(&self.space, point))
            .collect()
    }

    fn components_jac(&self, point: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let jets = seed(&self.space, point)?;
        let mut vals = Vec::with_capacity(self.comps.len());
        let mut jac = Mat::zeros(self.comps.len(), self.space.dim());
        for (k, e) in self.comps.iter().enumerate() {
            let j = e.eval_with_jets(&self.space, &jets, point)?;
            vals.push(j.value);
            for u in 0..self.space.dim() {
                jac.set(k, u, j.grad[u]);
            }
        }
        Ok((vals, jac))
    }
}

/// Builds the first-order views used to assemble μ and Σ: the dq̇-slot of
/// coordinate `j` as a Jet1 on the M-space (a plain variable when free, the
/// jet of ψ^α when constrained).
fn velocity_slots(sode: &Sode, psi: &[Jet2], point: &[f64]) -> Vec<Jet1> {
    let dim = sode.m_space().dim();
    (0..sode.n())
        .map(|j| match sode.free_slot_of(j) {
            Some(a) => Jet1::variable(point[sode.qd_slot(a)], sode.qd_slot(a), dim),
            None => psi[sode.constrained_slot_of(j).unwrap()].lower(),
        })
        .collect()
}

/// The dq^i components of μ_{Γ,F} as Jet1:
/// `M_i = ∂F_i/∂q^j q̇^j + ∂F_i/∂q̇^a Γ^a` with constrained q̇ slots filled
/// by ψ (and the t-derivative included for time-dependent systems).
fn mu_q_components(
    sode: &Sode,
    f_jets: &[Jet2],
    gamma: &[Jet2],
    slots: &[Jet1],
) -> Vec<Jet1> {
    let dim = sode.m_space().dim();
    (0..sode.n())
        .map(|i| {
            let mut acc = if sode.time_dependent {
                f_jets[i].partial(0)
            } else {
                Jet1::constant(0.0, dim)
            };
            for j in 0..sode.n() {
                acc.add_assign(&f_jets[i].partial(sode.q_slot(j)).mul(&slots[j]));
            }
            for a in 0..sode.free_count() {
                acc.add_assign(&f_jets[i].partial(sode.qd_slot(a)).mul(&gamma[a].lower()));
            }
            acc
        })
        .collect()
}

/// μ_{Γ,F} at an M-point: a covector on TQ (2n components), the base point
/// carrying ψ-filled velocities. In coordinates,
/// `(∂F_i/∂q^j q̇^j + ∂F_i/∂q̇^j Γ^j) dq^i + F_i dq̇^i`.
pub fn mu_form(sode: &Sode, fiber: &FiberMap, point: &[f64]) -> Result<CovectorSample> {
    if sode.time_dependent {
        return Err(Error::Precondition(
            "mu_form is the autonomous T*TQ object; time-dependent systems use the \
             T/TC condition suites"
                .into(),
        ));
    }
    let f_jets = fiber.jets(sode, point)?;
    let gamma = sode.gamma_jets(point)?;
    let psi = sode.psi_jets(point)?;
    let slots = velocity_slots(sode, &psi, point);
    let mu_q = mu_q_components(sode, &f_jets, &gamma, &slots);

    let n = sode.n();
    let mut base = Vec::with_capacity(2 * n);
    base.extend((0..n).map(|i| point[sode.q_slot(i)]));
    base.extend(slots.iter().map(|s| s.value));
    let mut comps = Vec::with_capacity(2 * n);
    comps.extend(mu_q.iter().map(|m| m.value));
    comps.extend(f_jets.iter().map(|f| f.value));
    Ok(CovectorSample { base, comps })
}

/// The point of Σ_{Γ,F} ⊂ T*TQ over an M-point, in chart order
/// `(q, q̇, μ, μ̃)`.
pub fn sigma_point(sode: &Sode, fiber: &FiberMap, point: &[f64]) -> Result<Vec<f64>> {
    let cv = mu_form(sode, fiber, point)?;
    let mut out = cv.base;
    out.extend(cv.comps);
    Ok(out)
}

/// `TF ∘ Γ` at an M-point: the point of TT*Q in chart order `(q, p, q̇, ṗ)`
/// with `p = F`, `ṗ = Γ(F)`. Satisfies `alpha_q ∘ tf_gamma = sigma_point`.
pub fn tf_gamma(sode: &Sode, fiber: &FiberMap, point: &[f64]) -> Result<Vec<f64>> {
    let cv = mu_form(sode, fiber, point)?;
    let n = sode.n();
    let mut out = Vec::with_capacity(4 * n);
    out.extend(&cv.base[..n]); // q
    out.extend(&cv.comps[n..]); // p = F
    out.extend(&cv.base[n..]); // q̇ (ψ-filled)
    out.extend(&cv.comps[..n]); // ṗ = Γ(F)
    Ok(out)
}

/// μ_{Γ,F} as a closed-form candidate on TQ. Unconstrained systems only:
/// for constrained ones μ lives over M and the right notion is isotropy of
/// Σ_{Γ,F}, not closedness over TQ.
pub struct MuForm<'a> {
    pub sode: &'a Sode,
    pub fiber: &'a FiberMap,
}

impl<'a> MuForm<'a> {
    pub fn new(sode: &'a Sode, fiber: &'a FiberMap) -> Result<Self> {
        if sode.is_constrained() {
            return Err(Error::Precondition(
                "closedness of μ applies to unconstrained SODEs; use isotropy of Σ for \
                 constrained ones"
                    .into(),
            ));
        }
        Ok(MuForm { sode, fiber })
    }
}

impl Form1 for MuForm<'_> {
    fn dim(&self) -> usize {
        2 * self.sode.n()
    }

    fn components(&self, point: &[f64]) -> Result<Vec<f64>> {
        Ok(mu_form(self.sode, self.fiber, point)?.comps)
    }

    fn components_jac(&self, point: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let f_jets = self.fiber.jets(self.sode, point)?;
        let gamma = self.sode.gamma_jets(point)?;
        let psi = self.sode.psi_jets(point)?;
        let slots = velocity_slots(self.sode, &psi, point);
        let mu_q = mu_q_components(self.sode, &f_jets, &gamma, &slots);
        let n = self.sode.n();
        let mut vals = Vec::with_capacity(2 * n);
        let mut jac = Mat::zeros(2 * n, 2 * n);
        for (k, m) in mu_q.iter().enumerate() {
            vals.push(m.value);
            for u in 0..2 * n {
                jac.set(k, u, m.grad[u]);
            }
        }
        for (k, fj) in f_jets.iter().enumerate() {
            vals.push(fj.value);
            for u in 0..2 * n {
                jac.set(n + k, u, fj.grad[u]);
            }
        }
        Ok((vals, jac))
    }
}

/// `𝓛_Γ F*θ_Q` as a 1-form on M. Two deliberately distinct assembly routes:
///
/// * unconstrained: Cartan's formula `𝓛_Γ = i_Γ ∘ d + d ∘ i_Γ` applied to
///   `F_i dq^i`, a code path independent of [`mu_form`];
/// * constrained: the local expression
///   `(Γ(F_i) + ∂ψ^α/∂q^i F_α) dq^i + (F_a + ∂ψ^α/∂q̇^a F_α) dq̇^a`.
pub struct LieForm<'a> {
    pub sode: &'a Sode,
    pub fiber: &'a FiberMap,
}

impl LieForm<'_> {
    fn assemble(&self, point: &[f64]) -> Result<Vec<Jet1>> {
        let sode = self.sode;
        if sode.time_dependent {
            return Err(Error::Precondition(
                "the Lie-derivative form is assembled for autonomous systems".into(),
            ));
        }
        let dim = sode.m_space().dim();
        let n = sode.n();
        let f_jets = self.fiber.jets(sode, point)?;
        let gamma = sode.gamma_jets(point)?;
        let psi = sode.psi_jets(point)?;
        let slots = velocity_slots(sode, &psi, point);

        if !sode.is_constrained() {
            // Cartan route. Γ-components over (q, q̇): (q̇^j, Γ^j).
            let mut gamma_comp: Vec<Jet1> = Vec::with_capacity(2 * n);
            for j in 0..n {
                gamma_comp.push(Jet1::variable(point[sode.qd_slot(j)], sode.qd_slot(j), dim));
            }
            for g in &gamma {
                gamma_comp.push(g.lower());
            }
            // i_Γ d(F_i dq^i): B_{uv} = ∂F_v/∂x^u [v q-idx] − ∂F_u/∂x^v [u q-idx]
            let mut out: Vec<Jet1> = (0..2 * n).map(|_| Jet1::constant(0.0, dim)).collect();
            for v in 0..2 * n {
                let mut acc = Jet1::constant(0.0, dim);
                for u in 0..2 * n {
                    if v < n {
                        acc.add_assign(&gamma_comp[u].mul(&f_jets[v].partial(u)));
                    }
                    if u < n {
                        let term = gamma_comp[u].mul(&f_jets[u].partial(v));
                        acc = acc.sub(&term);
                    }
                }
                out[v] = acc;
            }
            // + d(i_Γ F*θ) = d(F_i q̇^i), componentwise by the product rule:
            // ∂(F_i q̇^i)/∂x^v = ∂F_i/∂x^v q̇^i + F_i δ(v = q̇^i)
            for v in 0..2 * n {
                let mut dpair = Jet1::constant(0.0, dim);
                for i in 0..n {
                    dpair.add_assign(&f_jets[i].partial(v).mul(&slots[i]));
                    if v == sode.qd_slot(i) {
                        dpair.add_assign(&f_jets[i].lower());
                    }
                }
                out[v].add_assign(&dpair);
            }
            return Ok(out);
        }

        // Constrained route: quoted local expression.
        let nf = sode.free_count();
        let mut out: Vec<Jet1> = Vec::with_capacity(n + nf);
        // Γ(F_i) equals the μ dq-component assembly
        let mu_q = mu_q_components(sode, &f_jets, &gamma, &slots);
        for i in 0..n {
            let mut acc = mu_q[i].clone();
            for (alpha, psi_j) in psi.iter().enumerate() {
                let c = sode.constrained_coord(alpha);
                acc.add_assign(
                    &psi_j
                        .partial(sode.q_slot(i))
                        .mul(&f_jets[c].lower()),
                );
            }
            out.push(acc);
        }
        for a in 0..nf {
            let fa = sode.free_coord(a);
            let mut acc = f_jets[fa].lower();
            for (alpha, psi_j) in psi.iter().enumerate() {
                let c = sode.constrained_coord(alpha);
                acc.add_assign(
                    &psi_j
                        .partial(sode.qd_slot(a))
                        .mul(&f_jets[c].lower()),
                );
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// Covector sample over the M-point.
    pub fn sample(&self, point: &[f64]) -> Result<CovectorSample> {
        let comps = self.assemble(point)?;
        Ok(CovectorSample {
            base: point.to_vec(),
            comps: comps.iter().map(|c| c.value).collect(),
        })
    }
}

impl Form1 for LieForm<'_> {
    fn dim(&self) -> usize {
        self.sode.m_space().dim()
    }

    fn components(&self, point: &[f64]) -> Result<Vec<f64>> {
        Ok(self.assemble(point)?.iter().map(|c| c.value).collect())
    }

    fn components_jac(&self, point: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let comps = self.assemble(point)?;
        let d = self.dim();
        let mut vals = Vec::with_capacity(d);
        let mut jac = Mat::zeros(comps.len(), d);
        for (k, c) in comps.iter().enumerate() {
            vals.push(c.value);
            for u in 0..d {
                jac.set(k, u, c.grad[u]);
            }
        }
        Ok((vals, jac))
    }
}

/// Max/mean residual statistics across a sample sweep.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ResidualReport {
    pub max: f64,
    pub mean: f64,
    pub samples_used: usize,
    pub samples_skipped: usize,
}

impl ResidualReport {
    pub fn from_values(values: &[f64], skipped: usize) -> ResidualReport {
        let max = values.iter().fold(0.0f64, |m, v| m.max(*v));
        let mean = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        ResidualReport {
            max,
            mean,
            samples_used: values.len(),
            samples_skipped: skipped,
        }
    }
}

/// Antisymmetry defect of the component Jacobian:
/// `A_{uv} = ∂comp_v/∂x^u − ∂comp_u/∂x^v`, reported as max |A| per sample.
/// Zero residual means the form is closed, i.e. its image is Lagrangian.
pub fn closedness_residual(form: &dyn Form1, samples: &[Vec<f64>]) -> ResidualReport {
    let d = form.dim();
    let mut values = Vec::with_capacity(samples.len());
    let mut skipped = 0;
    for p in samples {
        match form.components_jac(p) {
            Ok((_, jac)) => {
                let mut worst = 0.0f64;
                for u in 0..d {
                    for v in (u + 1)..d {
                        worst = worst.max((jac.get(v, u) - jac.get(u, v)).abs());
                    }
                }
                values.push(worst);
            }
            Err(_) => skipped += 1,
        }
    }
    ResidualReport::from_values(&values, skipped)
}

/// A parametrized map into a chart, with exact Jacobians where the provider
/// can supply them.
pub trait ParamMap {
    fn dim_params(&self) -> usize;
    fn dim_target(&self) -> usize;
    fn eval(&self, params: &[f64]) -> Result<Vec<f64>>;
    /// Target values plus Jacobian (`dim_target × dim_params`).
    fn eval_jac(&self, params: &[f64]) -> Result<(Vec<f64>, Mat)>;
}

/// An immersion given by explicit expressions per target coordinate.
pub struct ImmersionSample {
    pub params: VarSpace,
    pub chart: Chart,
    pub map: Vec<Expr>,
}

impl ParamMap for ImmersionSample {
    fn dim_params(&self) -> usize {
        self.params.dim()
    }

    fn dim_target(&self) -> usize {
        self.map.len()
    }

    fn eval(&self, params: &[f64]) -> Result<Vec<f64>> {
        self.map
            .iter()
            .map(|e| e.eval_value(&self.params, params))
            .collect()
    }

    fn eval_jac(&self, params: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let jets = seed(&self.params, params)?;
        let mut vals = Vec::with_capacity(self.map.len());
        let mut jac = Mat::zeros(self.map.len(), self.params.dim());
        for (k, e) in self.map.iter().enumerate() {
            let j = e.eval_with_jets(&self.params, &jets, params)?;
            vals.push(j.value);
            for u in 0..self.params.dim() {
                jac.set(k, u, j.grad[u]);
            }
        }
        Ok((vals, jac))
    }
}

/// Σ_{Γ,F} parametrized by the M-coordinates, with its Jacobian assembled
/// from second-order jets of F, Γ and ψ. Autonomous systems.
pub struct SigmaImmersion<'a> {
    pub sode: &'a Sode,
    pub fiber: &'a FiberMap,
}

impl ParamMap for SigmaImmersion<'_> {
    fn dim_params(&self) -> usize {
        self.sode.m_space().dim()
    }

    fn dim_target(&self) -> usize {
        4 * self.sode.n()
    }

    fn eval(&self, params: &[f64]) -> Result<Vec<f64>> {
        sigma_point(self.sode, self.fiber, params)
    }

    fn eval_jac(&self, params: &[f64]) -> Result<(Vec<f64>, Mat)> {
        let sode = self.sode;
        if sode.time_dependent {
            return Err(Error::Precondition(
                "Σ_{Γ,F} lives in T*TQ; time-dependent systems use the T/TC suites".into(),
            ));
        }
        let n = sode.n();
        let dim = sode.m_space().dim();
        let f_jets = self.fiber.jets(sode, params)?;
        let gamma = sode.gamma_jets(params)?;
        let psi = sode.psi_jets(params)?;
        let slots = velocity_slots(sode, &psi, params);
        let mu_q = mu_q_components(sode, &f_jets, &gamma, &slots);

        let mut rows: Vec<Jet1> = Vec::with_capacity(4 * n);
        for i in 0..n {
            rows.push(Jet1::variable(params[sode.q_slot(i)], sode.q_slot(i), dim));
        }
        rows.extend(slots.iter().cloned());
        rows.extend(mu_q);
        rows.extend(f_jets.iter().map(|f| f.lower()));

        let mut vals = Vec::with_capacity(4 * n);
        let mut jac = Mat::zeros(4 * n, dim);
        for (k, r) in rows.iter().enumerate() {
            vals.push(r.value);
            for u in 0..dim {
                jac.set(k, u, r.grad[u]);
            }
        }
        Ok((vals, jac))
    }
}

/// Isotropy sweep result: pullback residual plus the immersion rank check.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct IsotropyReport {
    pub residual: ResidualReport,
    pub min_rank: usize,
    pub expected_rank: usize,
}

impl IsotropyReport {
    pub fn full_rank(&self) -> bool {
        self.min_rank == self.expected_rank
    }
}

/// Pulls the chart's symplectic form back through the map at each sample:
/// `R = Σ_pairs (J_{a}ᵀ J_{b} − J_{b}ᵀ J_{a})` over conjugate rows, reporting
/// max |R| and the rank of the Jacobian (immersion check, flagged separately
/// rather than treated as an error).
pub fn isotropy_residual(
    map: &dyn ParamMap,
    chart: &Chart,
    samples: &[Vec<f64>],
) -> IsotropyReport {
    let dp = map.dim_params();
    let pairs = chart.conjugate_pairs();
    let mut values = Vec::with_capacity(samples.len());
    let mut skipped = 0;
    let mut min_rank = usize::MAX;
    for p in samples {
        match map.eval_jac(p) {
            Ok((_, jac)) => {
                let mut worst = 0.0f64;
                for u in 0..dp {
                    for v in (u + 1)..dp {
                        let mut r = 0.0;
                        for &(a, b) in &pairs {
                            r += jac.get(a, u) * jac.get(b, v) - jac.get(b, u) * jac.get(a, v);
                        }
                        worst = worst.max(r.abs());
                    }
                }
                values.push(worst);
                min_rank = min_rank.min(jac.rank());
            }
            Err(_) => skipped += 1,
        }
    }
    if values.is_empty() {
        min_rank = 0;
    }
    IsotropyReport {
        residual: ResidualReport::from_values(&values, skipped),
        min_rank,
        expected_rank: dp,
    }
}
