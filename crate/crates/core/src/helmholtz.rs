//! Residual evaluators for every variationality condition suite: the
//! classical Helmholtz conditions on the multiplier matrix, the closedness
//! conditions on the fiber map (L-suite), their time-dependent versions
//! (T-suite), the constrained suites (CH, TC), the holonomic reduction check
//! and the Cartan 2-form corroboration for time-dependent systems.
//!
//! Residual scaling: every equation instance is reported as
//! `|Σ terms| / max(1, max_k |term_k|)`. The conditions are homogeneous
//! identities, so relative scaling prevents false passes on large-magnitude
//! samples. A report's `pass` certifies the conditions at the sampled points
//! of the declared box only, never globally.

use std::collections::BTreeMap;

use crate::bundles::{FiberMap, Sode};
use crate::error::{Error, Result};
use crate::jet::Jet2;
use crate::linalg::Mat;
use serde::Serialize;

/// Default tolerance for jet-based residuals.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    HelmholtzClassic,
    LConditions,
    TConditions,
    ChConditions,
    TcConditions,
    Holonomic,
    CartanTwoForm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquationResidual {
    pub name: String,
    pub max: f64,
    pub mean: f64,
}

/// Per-family residual summary over a sample sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub family: Family,
    pub equations: Vec<EquationResidual>,
    pub samples_used: usize,
    pub samples_skipped: usize,
    pub tolerance: f64,
    /// Scalar diagnostics: `min_abs_det_g`, `min_fiber_rank`, ...
    pub extras: BTreeMap<String, f64>,
    /// Structural requirements beyond residuals (nonsingular g, full fiber
    /// rank). Empty when everything holds.
    pub structural_failures: Vec<String>,
    pub pass: bool,
}

struct EqAcc {
    name: &'static str,
    max: f64,
    sum: f64,
    count: usize,
}

impl EqAcc {
    fn new(name: &'static str) -> Self {
        EqAcc {
            name,
            max: 0.0,
            sum: 0.0,
            count: 0,
        }
    }

    /// Scaled residual of one equation instance from its additive terms.
    fn push(&mut self, terms: &[f64]) {
        let total: f64 = terms.iter().sum();
        let scale = terms.iter().fold(1.0f64, |m, t| m.max(t.abs()));
        let r = (total / scale).abs();
        self.max = self.max.max(r);
        self.sum += r;
        self.count += 1;
    }

    fn into_residual(self) -> EquationResidual {
        EquationResidual {
            name: self.name.into(),
            max: self.max,
            mean: if self.count == 0 {
                0.0
            } else {
                self.sum / self.count as f64
            },
        }
    }
}

fn finish(
    family: Family,
    accs: Vec<EqAcc>,
    used: usize,
    skipped: usize,
    tolerance: f64,
    extras: BTreeMap<String, f64>,
    structural_failures: Vec<String>,
) -> ConditionReport {
    let equations: Vec<EquationResidual> = accs.into_iter().map(EqAcc::into_residual).collect();
    let pass = used > 0
        && structural_failures.is_empty()
        && equations.iter().all(|e| e.max <= tolerance);
    ConditionReport {
        family,
        equations,
        samples_used: used,
        samples_skipped: skipped,
        tolerance,
        extras,
        structural_failures,
        pass,
    }
}

/// Multiplier data at a point for an unconstrained SODE:
/// `g_ij = ∂F_i/∂q̇^j`, `∇^i_j = −½ ∂Γ^i/∂q̇^j` and
/// `Φ^k_j = Γ(∂Γ^k/∂q̇^j) − 2 ∂Γ^k/∂q^j − ½ ∂Γ^i/∂q̇^j ∂Γ^k/∂q̇^i`.
#[derive(Debug, Clone)]
pub struct MultiplierData {
    pub g: Mat,
    pub nabla: Mat,
    pub phi: Mat,
}

/// `Γ(h)` for a jet-valued `h` on the M-space: `∂h/∂t + q̇^j ∂h/∂q^j +
/// Γ^a ∂h/∂q̇^a` applied at the first-derivative level of `h`.
fn gamma_of_partial(
    sode: &Sode,
    h: &Jet2,
    slot: usize,
    point: &[f64],
    gamma_vals: &[f64],
) -> f64 {
    let mut acc = if sode.time_dependent {
        h.hess.get(slot, 0)
    } else {
        0.0
    };
    for j in 0..sode.n() {
        // constrained slots do not occur here: callers are unconstrained
        let qd = point[sode.qd_slot(j)];
        acc += qd * h.hess.get(slot, sode.q_slot(j));
    }
    for (a, g) in gamma_vals.iter().enumerate() {
        acc += g * h.hess.get(slot, sode.qd_slot(a));
    }
    acc
}

pub fn multiplier_matrix(sode: &Sode, fiber: &FiberMap, point: &[f64]) -> Result<MultiplierData> {
    if sode.is_constrained() {
        return Err(Error::Precondition(
            "multiplier_matrix applies to unconstrained SODEs".into(),
        ));
    }
    let n = sode.n();
    let f = fiber.jets(sode, point)?;
    let g_jets = sode.gamma_jets(point)?;
    let gamma_vals: Vec<f64> = g_jets.iter().map(|j| j.value).collect();

    let mut g = Mat::zeros(n, n);
    let mut nabla = Mat::zeros(n, n);
    let mut phi = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            g.set(i, j, f[i].grad[sode.qd_slot(j)]);
            nabla.set(i, j, -0.5 * g_jets[i].grad[sode.qd_slot(j)]);
        }
    }
    for k in 0..n {
        for j in 0..n {
            let mut v = gamma_of_partial(sode, &g_jets[k], sode.qd_slot(j), point, &gamma_vals);
            v -= 2.0 * g_jets[k].grad[sode.q_slot(j)];
            for i in 0..n {
                v -= 0.5 * g_jets[i].grad[sode.qd_slot(j)] * g_jets[k].grad[sode.qd_slot(i)];
            }
            phi.set(k, j, v);
        }
    }
    Ok(MultiplierData { g, nabla, phi })
}

/// Threshold below which `det g` counts as singular: `1e-10` scaled by the
/// matrix magnitude to the matrix dimension.
fn det_threshold(g: &Mat) -> f64 {
    1e-10 * g.max_abs().max(1.0).powi(g.rows as i32)
}

/// The classical Helmholtz conditions for `g = ∂F/∂q̇`:
/// `det g ≠ 0`, `g` symmetric, `∂g_ij/∂q̇^k = ∂g_ik/∂q̇^j`,
/// `Γ(g_ij) − ∇^k_j g_ik − ∇^k_i g_kj = 0` and `g_ik Φ^k_j = g_jk Φ^k_i`.
/// Time-dependent systems include `∂/∂t` in `Γ(·)`.
pub fn helmholtz_classic(
    sode: &Sode,
    fiber: &FiberMap,
    samples: &[Vec<f64>],
    tolerance: f64,
) -> Result<ConditionReport> {
    if sode.is_constrained() {
        return Err(Error::Precondition(
            "helmholtz_classic applies to unconstrained SODEs (use ch_conditions)".into(),
        ));
    }
    let n = sode.n();
    let mut accs = vec![
        EqAcc::new("g_symmetry"),
        EqAcc::new("dg_dv_symmetry"),
        EqAcc::new("nabla_compatibility"),
        EqAcc::new("phi_symmetry"),
    ];
    let mut used = 0;
    let mut skipped = 0;
    let mut min_det = f64::INFINITY;
    let mut singular_at = 0usize;
    for p in samples {
        let (f, g_jets) = match (fiber.jets(sode, p), sode.gamma_jets(p)) {
            (Ok(f), Ok(g)) => (f, g),
            _ => {
                skipped += 1;
                continue;
            }
        };
        let data = multiplier_matrix(sode, fiber, p)?;
        let gamma_vals: Vec<f64> = g_jets.iter().map(|j| j.value).collect();
        let det = data.g.det();
        min_det = min_det.min(det.abs());
        if det.abs() <= det_threshold(&data.g) {
            singular_at += 1;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                accs[0].push(&[data.g.get(i, j), -data.g.get(j, i)]);
            }
        }
        // ∂g_ij/∂q̇^k − ∂g_ik/∂q̇^j: second velocity derivatives of F_i
        for i in 0..n {
            for j in 0..n {
                for k in (j + 1)..n {
                    accs[1].push(&[
                        f[i].hess.get(sode.qd_slot(j), sode.qd_slot(k)),
                        -f[i].hess.get(sode.qd_slot(k), sode.qd_slot(j)),
                    ]);
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                let mut terms =
                    vec![gamma_of_partial(sode, &f[i], sode.qd_slot(j), p, &gamma_vals)];
                for k in 0..n {
                    terms.push(-data.nabla.get(k, j) * data.g.get(i, k));
                    terms.push(-data.nabla.get(k, i) * data.g.get(k, j));
                }
                accs[2].push(&terms);
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let mut terms = Vec::with_capacity(2 * n);
                for k in 0..n {
                    terms.push(data.g.get(i, k) * data.phi.get(k, j));
                }
                for k in 0..n {
                    terms.push(-data.g.get(j, k) * data.phi.get(k, i));
                }
                accs[3].push(&terms);
            }
        }
        used += 1;
    }
    let mut extras = BTreeMap::new();
    if min_det.is_finite() {
        extras.insert("min_abs_det_g".into(), min_det.abs());
    }
    let mut structural = Vec::new();
    if singular_at > 0 {
        structural.push(format!(
            "g singular (|det| below threshold) at {singular_at} sample(s)"
        ));
    }
    Ok(finish(
        Family::HelmholtzClassic,
        accs,
        used,
        skipped,
        tolerance,
        extras,
        structural,
    ))
}

/// The closedness conditions on F for autonomous unconstrained systems
/// (the image of μ_{Γ,F} is Lagrangian iff all three vanish):
///
/// ```text
/// L1: ∂F_i/∂q̇^k = ∂F_k/∂q̇^i
/// L2: ∂²F_i/∂q^k∂q^j q̇^j + ∂²F_i/∂q^k∂q̇^j Γ^j + ∂F_i/∂q̇^j ∂Γ^j/∂q^k  (sym i↔k)
/// L3: ∂F_k/∂q^i = ∂²F_i/∂q̇^k∂q^j q̇^j + ∂F_i/∂q^k
///                + ∂²F_i/∂q̇^k∂q̇^j Γ^j + ∂F_i/∂q̇^j ∂Γ^j/∂q̇^k
/// ```
pub fn l_conditions(
    sode: &Sode,
    fiber: &FiberMap,
    samples: &[Vec<f64>],
    tolerance: f64,
) -> Result<ConditionReport> {
    if sode.is_constrained() || sode.time_dependent {
        return Err(Error::Precondition(
            "l_conditions applies to autonomous unconstrained SODEs".into(),
        ));
    }
    let n = sode.n();
    let mut accs = vec![EqAcc::new("L1"), EqAcc::new("L2"), EqAcc::new("L3")];
    let mut used = 0;
    let mut skipped = 0;
    let mut min_det = f64::INFINITY;
    for p in samples {
        let (f, g_jets) = match (fiber.jets(sode, p), sode.gamma_jets(p)) {
            (Ok(f), Ok(g)) => (f, g),
            _ => {
                skipped += 1;
                continue;
            }
        };
        let qs = |i: usize| sode.q_slot(i);
        let vs = |i: usize| sode.qd_slot(i);
        let mut g = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g.set(i, j, f[i].grad[vs(j)]);
            }
        }
        min_det = min_det.min(g.det().abs());
        for i in 0..n {
            for k in (i + 1)..n {
                accs[0].push(&[f[i].grad[vs(k)], -f[k].grad[vs(i)]]);
            }
        }
        for i in 0..n {
            for k in (i + 1)..n {
                let mut terms = Vec::with_capacity(6 * n);
                for j in 0..n {
                    terms.push(f[i].hess.get(qs(k), qs(j)) * p[vs(j)]);
                }
                for j in 0..n {
                    terms.push(f[i].hess.get(qs(k), vs(j)) * g_jets[j].value);
                }
                for j in 0..n {
                    terms.push(f[i].grad[vs(j)] * g_jets[j].grad[qs(k)]);
                }
                for j in 0..n {
                    terms.push(-f[k].hess.get(qs(i), qs(j)) * p[vs(j)]);
                }
                for j in 0..n {
                    terms.push(-f[k].hess.get(qs(i), vs(j)) * g_jets[j].value);
                }
                for j in 0..n {
                    terms.push(-f[k].grad[vs(j)] * g_jets[j].grad[qs(i)]);
                }
                accs[1].push(&terms);
            }
        }
        for i in 0..n {
            for k in 0..n {
                let mut terms = Vec::with_capacity(4 * n + 2);
                for j in 0..n {
                    terms.push(f[i].hess.get(vs(k), qs(j)) * p[vs(j)]);
                }
                terms.push(f[i].grad[qs(k)]);
                for j in 0..n {
                    terms.push(f[i].hess.get(vs(k), vs(j)) * g_jets[j].value);
                }
                for j in 0..n {
                    terms.push(f[i].grad[vs(j)] * g_jets[j].grad[vs(k)]);
                }
                terms.push(-f[k].grad[qs(i)]);
                accs[2].push(&terms);
            }
        }
        used += 1;
    }
    let mut extras = BTreeMap::new();
    if min_det.is_finite() {
        extras.insert("min_abs_det_g".into(), min_det);
    }
    Ok(finish(
        Family::LConditions,
        accs,
        used,
        skipped,
        tolerance,
        extras,
        Vec::new(),
    ))
}

/// Time-dependent closedness conditions, with
/// `Γ = ∂/∂t + q̇^i ∂/∂q^i + Γ^i ∂/∂q̇^i`:
///
/// ```text
/// T1: ∂F_j/∂q̇^i = ∂F_i/∂q̇^j
/// T2: ∂²F_j/∂q̇^i∂t + ∂F_j/∂q^i + q̇^k ∂²F_j/∂q̇^i∂q^k
///     + ∂Γ^k/∂q̇^i ∂F_j/∂q̇^k + Γ^k ∂²F_j/∂q̇^i∂q̇^k = ∂F_i/∂q^j
/// T3: ∂Γ(F_j)/∂q^i = ∂Γ(F_i)/∂q^j, expanded
/// ```
pub fn t_conditions(
    sode: &Sode,
    fiber: &FiberMap,
    samples: &[Vec<f64>],
    tolerance: f64,
) -> Result<ConditionReport> {
    if sode.is_constrained() || !sode.time_dependent {
        return Err(Error::Precondition(
            "t_conditions applies to time-dependent unconstrained SODEs".into(),
        ));
    }
    let n = sode.n();
    let mut accs = vec![EqAcc::new("T1"), EqAcc::new("T2"), EqAcc::new("T3")];
    let mut used = 0;
    let mut skipped = 0;
    let mut min_det = f64::INFINITY;
    for p in samples {
        let (f, g_jets) = match (fiber.jets(sode, p), sode.gamma_jets(p)) {
            (Ok(f), Ok(g)) => (f, g),
            _ => {
                skipped += 1;
                continue;
            }
        };
        let qs = |i: usize| sode.q_slot(i);
        let vs = |i: usize| sode.qd_slot(i);
        let mut g = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g.set(i, j, f[i].grad[vs(j)]);
            }
        }
        min_det = min_det.min(g.det().abs());
        for i in 0..n {
            for j in (i + 1)..n {
                accs[0].push(&[f[j].grad[vs(i)], -f[i].grad[vs(j)]]);
            }
        }
        for i in 0..n {
            for j in 0..n {
                let mut terms = Vec::with_capacity(3 * n + 3);
                terms.push(f[j].hess.get(vs(i), 0));
                terms.push(f[j].grad[qs(i)]);
                for k in 0..n {
                    terms.push(p[vs(k)] * f[j].hess.get(vs(i), qs(k)));
                }
                for k in 0..n {
                    terms.push(g_jets[k].grad[vs(i)] * f[j].grad[vs(k)]);
                }
                for k in 0..n {
                    terms.push(g_jets[k].value * f[j].hess.get(vs(i), vs(k)));
                }
                terms.push(-f[i].grad[qs(j)]);
                accs[1].push(&terms);
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let mut terms = Vec::with_capacity(6 * n + 2);
                terms.push(f[j].hess.get(qs(i), 0));
                for k in 0..n {
                    terms.push(p[vs(k)] * f[j].hess.get(qs(i), qs(k)));
                }
                for k in 0..n {
                    terms.push(g_jets[k].grad[qs(i)] * f[j].grad[vs(k)]);
                }
                for k in 0..n {
                    terms.push(g_jets[k].value * f[j].hess.get(qs(i), vs(k)));
                }
                terms.push(-f[i].hess.get(qs(j), 0));
                for k in 0..n {
                    terms.push(-p[vs(k)] * f[i].hess.get(qs(j), qs(k)));
                }
                for k in 0..n {
                    terms.push(-g_jets[k].grad[qs(j)] * f[i].grad[vs(k)]);
                }
                for k in 0..n {
                    terms.push(-g_jets[k].value * f[i].hess.get(qs(j), vs(k)));
                }
                accs[2].push(&terms);
            }
        }
        used += 1;
    }
    let mut extras = BTreeMap::new();
    if min_det.is_finite() {
        extras.insert("min_abs_det_g".into(), min_det);
    }
    Ok(finish(
        Family::TConditions,
        accs,
        used,
        skipped,
        tolerance,
        extras,
        Vec::new(),
    ))
}

fn fiber_rank_extras(
    min_rank: usize,
    expected: usize,
    extras: &mut BTreeMap<String, f64>,
    structural: &mut Vec<String>,
) {
    if min_rank != usize::MAX {
        extras.insert("min_fiber_rank".into(), min_rank as f64);
        if min_rank < expected {
            structural.push(format!(
                "fiber map rank {min_rank} < {expected} (not an immersion on the sampled box)"
            ));
        }
    }
}

/// The a<b antisymmetry condition shared verbatim by CH1 and TC1:
/// `∂F_a/∂q̇^b + ∂ψ^α/∂q̇^a ∂F_α/∂q̇^b − ∂F_b/∂q̇^a − ∂ψ^α/∂q̇^b ∂F_α/∂q̇^a`.
fn push_c1_terms(sode: &Sode, f: &[Jet2], psi: &[Jet2], acc: &mut EqAcc) {
    let nf = sode.free_count();
    let vs = |a: usize| sode.qd_slot(a);
    for a in 0..nf {
        let ca = sode.free_coord(a);
        for b in (a + 1)..nf {
            let cb = sode.free_coord(b);
            let mut terms = Vec::with_capacity(2 + 2 * sode.m());
            terms.push(f[ca].grad[vs(b)]);
            for (alpha, psi_j) in psi.iter().enumerate() {
                let calpha = sode.constrained_coord(alpha);
                terms.push(psi_j.grad[vs(a)] * f[calpha].grad[vs(b)]);
            }
            terms.push(-f[cb].grad[vs(a)]);
            for (alpha, psi_j) in psi.iter().enumerate() {
                let calpha = sode.constrained_coord(alpha);
                terms.push(-psi_j.grad[vs(b)] * f[calpha].grad[vs(a)]);
            }
            acc.push(&terms);
        }
    }
}

/// Constrained Helmholtz conditions, term-expanded exactly as printed.
/// Index convention: `i, j` over all coordinates, `a, b` over free velocity
/// slots, `α, β` over constrained coordinates.
///
/// ```text
/// CH1: 0 = ∂F_a/∂q̇^b + ∂ψ^α/∂q̇^a ∂F_α/∂q̇^b − ∂F_b/∂q̇^a − ∂ψ^α/∂q̇^b ∂F_α/∂q̇^a
/// CH2: 0 = ∂²F_i/∂q^j∂q^b q̇^b + ∂²F_i/∂q^j∂q^β ψ^β + ∂F_i/∂q^β ∂ψ^β/∂q^j
///        + ∂²F_i/∂q^j∂q̇^b Γ^b + ∂F_i/∂q̇^b ∂Γ^b/∂q^j + ∂ψ^α/∂q^i ∂F_α/∂q^j
///        − (i ↔ j)
/// CH3: 0 = ∂²F_i/∂q̇^a∂q^b q̇^b + ∂F_i/∂q^a + ∂²F_i/∂q̇^a∂q^β ψ^β
///        + ∂F_i/∂q^β ∂ψ^β/∂q̇^a + ∂²F_i/∂q̇^a∂q̇^b Γ^b + ∂F_i/∂q̇^b ∂Γ^b/∂q̇^a
///        − ∂F_a/∂q^i + ∂ψ^α/∂q^i ∂F_α/∂q̇^a − ∂ψ^α/∂q̇^a ∂F_α/∂q^i
/// ```
///
/// With `m = 0` every ψ-sum is empty and the residuals coincide exactly
/// (same floating-point operations) with the L-suite; the fiber rank check
/// `rank(∂F_i/∂q̇^a) = n−m` is reported alongside.
pub fn ch_conditions(
    sode: &Sode,
    fiber: &FiberMap,
    samples: &[Vec<f64>],
    tolerance: f64,
) -> Result<ConditionReport> {
    if sode.time_dependent {
        return Err(Error::Precondition(
            "ch_conditions applies to autonomous systems (use tc_conditions)".into(),
        ));
    }
    let n = sode.n();
    let nf = sode.free_count();
    let mut accs = vec![EqAcc::new("CH1"), EqAcc::new("CH2"), EqAcc::new("CH3")];
    let mut used = 0;
    let mut skipped = 0;
    let mut min_rank = usize::MAX;
    for p in samples {
        let (f, g_jets, psi) = match (fiber.jets(sode, p), sode.gamma_jets(p), sode.psi_jets(p)) {
            (Ok(f), Ok(g), Ok(ps)) => (f, g, ps),
            _ => {
                skipped += 1;
                continue;
            }
        };
        let qs = |i: usize| sode.q_slot(i);
        let vs = |a: usize| sode.qd_slot(a);
        let mut fib = Mat::zeros(n, nf);
        for i in 0..n {
            for a in 0..nf {
                fib.set(i, a, f[i].grad[vs(a)]);
            }
        }
        min_rank = min_rank.min(fib.rank());

        push_c1_terms(sode, &f, &psi, &mut accs[0]);

        // one printed CH2 row (i differentiated by q^j), pushed in order
        let ch2_row = |terms: &mut Vec<f64>, i: usize, j: usize, sign: f64| {
            for b in 0..nf {
                let cb = sode.free_coord(b);
                terms.push(sign * f[i].hess.get(qs(j), qs(cb)) * p[vs(b)]);
            }
            for (beta, psi_j) in psi.iter().enumerate() {
                let cbeta = sode.constrained_coord(beta);
                terms.push(sign * f[i].hess.get(qs(j), qs(cbeta)) * psi_j.value);
            }
            for (beta, psi_j) in psi.iter().enumerate() {
                let cbeta = sode.constrained_coord(beta);
                terms.push(sign * f[i].grad[qs(cbeta)] * psi_j.grad[qs(j)]);
            }
            for (b, g_j) in g_jets.iter().enumerate() {
                terms.push(sign * f[i].hess.get(qs(j), vs(b)) * g_j.value);
            }
            for (b, g_j) in g_jets.iter().enumerate() {
                terms.push(sign * f[i].grad[vs(b)] * g_j.grad[qs(j)]);
            }
            for (alpha, psi_j) in psi.iter().enumerate() {
                let calpha = sode.constrained_coord(alpha);
                terms.push(sign * psi_j.grad[qs(i)] * f[calpha].grad[qs(j)]);
            }
        };
        for i in 0..n {
            for j in (i + 1)..n {
                let mut terms = Vec::new();
                ch2_row(&mut terms, i, j, 1.0);
                ch2_row(&mut terms, j, i, -1.0);
                accs[1].push(&terms);
            }
        }

        for i in 0..n {
            for a in 0..nf {
                let ca = sode.free_coord(a);
                let mut terms = Vec::new();
                for b in 0..nf {
                    let cb = sode.free_coord(b);
                    terms.push(f[i].hess.get(vs(a), qs(cb)) * p[vs(b)]);
                }
                terms.push(f[i].grad[qs(ca)]);
                for (beta, psi_j) in psi.iter().enumerate() {
                    let cbeta = sode.constrained_coord(beta);
                    terms.push(f[i].hess.get(vs(a), qs(cbeta)) * psi_j.value);
                }
                for (beta, psi_j) in psi.iter().enumerate() {
                    let cbeta = sode.constrained_coord(beta);
                    terms.push(f[i].grad[qs(cbeta)] * psi_j.grad[vs(a)]);
                }
                for (b, g_j) in g_jets.iter().enumerate() {
                    terms.push(f[i].hess.get(vs(a), vs(b)) * g_j.value);
                }
                for (b, g_j) in g_jets.iter().enumerate() {
                    terms.push(f[i].grad[vs(b)] * g_j.grad[vs(a)]);
                }
                terms.push(-f[ca].grad[qs(i)]);
                for (alpha, psi_j) in psi.iter().enumerate() {
                    let calpha = sode.constrained_coord(alpha);
                    terms.push(psi_j.grad[qs(i)] * f[calpha].grad[vs(a)]);
                }
                for (alpha, psi_j) in psi.iter().enumerate() {
                    let calpha = sode.constrained_coord(alpha);
                    terms.push(-psi_j.grad[vs(a)] * f[calpha].grad[qs(i)]);
                }
                accs[2].push(&terms);
            }
        }
        used += 1;
    }
    let mut extras = BTreeMap::new();
    let mut structural = Vec::new();
    fiber_rank_extras(min_rank, nf, &mut extras, &mut structural);
    Ok(finish(
        Family::ChConditions,
        accs,
        used,
        skipped,
        tolerance,
        extras,
        structural,
    ))
}

/// Time-dependent constrained conditions, in the compact form built on
/// `Γ(F_i) = ∂F_i/∂t + q̇^a ∂F_i/∂q^a + ψ^α ∂F_i/∂q^α + Γ^a ∂F_i/∂q̇^a`:
///
/// ```text
/// TC1: ∂F_a/∂q̇^b + ∂ψ^α/∂q̇^a ∂F_α/∂q̇^b = ∂F_b/∂q̇^a + ∂ψ^α/∂q̇^b ∂F_α/∂q̇^a
/// TC2: ∂Γ(F_i)/∂q^k + ∂F_α/∂q^k ∂ψ^α/∂q^i = ∂Γ(F_k)/∂q^i + ∂F_α/∂q^i ∂ψ^α/∂q^k
/// TC3: ∂F_a/∂q^i + ∂ψ^α/∂q̇^a ∂F_α/∂q^i = ∂Γ(F_i)/∂q̇^a + ∂F_α/∂q̇^a ∂ψ^α/∂q^i
/// ```
///
/// With no explicit time dependence the verdict coincides with
/// [`ch_conditions`].
pub fn tc_conditions(
    sode: &Sode,
    fiber: &FiberMap,
    samples: &[Vec<f64>],
    tolerance: f64,
) -> Result<ConditionReport> {
    if !sode.time_dependent {
        return Err(Error::Precondition(
            "tc_conditions applies to time-dependent systems (use ch_conditions)".into(),
        ));
    }
    let n = sode.n();
    let nf = sode.free_count();
    let mut accs = vec![EqAcc::new("TC1"), EqAcc::new("TC2"), EqAcc::new("TC3")];
    let mut used = 0;
    let mut skipped = 0;
    let mut min_rank = usize::MAX;
    for p in samples {
        let (f, g_jets, psi) = match (fiber.jets(sode, p), sode.gamma_jets(p), sode.psi_jets(p)) {
            (Ok(f), Ok(g), Ok(ps)) => (f, g, ps),
            _ => {
                skipped += 1;
                continue;
            }
        };
        let qs = |i: usize| sode.q_slot(i);
        let vs = |a: usize| sode.qd_slot(a);
        let mut fib = Mat::zeros(n, nf);
        for i in 0..n {
            for a in 0..nf {
                fib.set(i, a, f[i].grad[vs(a)]);
            }
        }
        min_rank = min_rank.min(fib.rank());

        push_c1_terms(sode, &f, &psi, &mut accs[0]);

        // ∂[Γ(F_i)]/∂x^slot including the δ(slot = q̇^b) ∂F_i/∂q^b piece
        let d_gamma_f = |i: usize, slot: usize| -> f64 {
            let mut acc = f[i].hess.get(slot, 0); // ∂²F_i/∂x∂t
            for b in 0..nf {
                let cb = sode.free_coord(b);
                acc += p[vs(b)] * f[i].hess.get(slot, qs(cb));
                if slot == vs(b) {
                    acc += f[i].grad[qs(cb)];
                }
            }
            for (beta, psi_j) in psi.iter().enumerate() {
                let cbeta = sode.constrained_coord(beta);
                acc += psi_j.value * f[i].hess.get(slot, qs(cbeta));
                acc += psi_j.grad[slot] * f[i].grad[qs(cbeta)];
            }
            for (b, g_j) in g_jets.iter().enumerate() {
                acc += g_j.value * f[i].hess.get(slot, vs(b));
                acc += g_j.grad[slot] * f[i].grad[vs(b)];
            }
            acc
        };

        for i in 0..n {
            for k in (i + 1)..n {
                let mut terms = Vec::with_capacity(2 + 2 * sode.m());
                terms.push(d_gamma_f(i, qs(k)));
                for (alpha, psi_j) in psi.iter().enumerate() {
                    let calpha = sode.constrained_coord(alpha);
                    terms.push(f[calpha].grad[qs(k)] * psi_j.grad[qs(i)]);
                }
                terms.push(-d_gamma_f(k, qs(i)));
                for (alpha, psi_j) in psi.iter().enumerate() {
                    let calpha = sode.constrained_coord(alpha);
                    terms.push(-f[calpha].grad[qs(i)] * psi_j.grad[qs(k)]);
                }
                accs[1].push(&terms);
            }
        }

        for i in 0..n {
            for a in 0..nf {
                let ca = sode.free_coord(a);
                let mut terms = Vec::with_capacity(2 + 2 * sode.m());
                terms.push(f[ca].grad[qs(i)]);
                for (alpha, psi_j) in psi.iter().enumerate() {
                    let calpha = sode.constrained_coord(alpha);
                    terms.push(psi_j.grad[vs(a)] * f[calpha].grad[qs(i)]);
                }
                terms.push(-d_gamma_f(i, vs(a)));
                for (alpha, psi_j) in psi.iter().enumerate() {
                    let calpha = sode.constrained_coord(alpha);
                    terms.push(-f[calpha].grad[vs(a)] * psi_j.grad[qs(i)]);
                }
                accs[2].push(&terms);
            }
        }
        used += 1;
    }
    let mut extras = BTreeMap::new();
    let mut structural = Vec::new();
    fiber_rank_extras(min_rank, nf, &mut extras, &mut structural);
    Ok(finish(
        Family::TcConditions,
        accs,
        used,
        skipped,
        tolerance,
        extras,
        structural,
    ))
}

/// Holonomic reduction check: from a fiber map `F` into `T*Q` restricted to
/// `TN` (adapted coordinates, `q^α = q̇^α = 0`), extract
/// `f = i_TN* ∘ F` — the first `n−m` momentum components — require it to be
/// fiberwise full-rank, and run the intrinsic L-suite on `TN`.
pub fn holonomic_check(
    intrinsic: &Sode,
    big_n: usize,
    f_full: &FiberMap,
    samples: &[Vec<f64>],
    tolerance: f64,
) -> Result<ConditionReport> {
    let small_n = intrinsic.n();
    if intrinsic.is_constrained() || intrinsic.time_dependent {
        return Err(Error::Precondition(
            "holonomic_check expects an autonomous unconstrained SODE on TN".into(),
        ));
    }
    if f_full.comps.len() != big_n {
        return Err(Error::DimensionMismatch {
            expected: big_n,
            got: f_full.comps.len(),
        });
    }
    if small_n > big_n {
        return Err(Error::Precondition(
            "intrinsic dimension exceeds ambient dimension".into(),
        ));
    }
    let reduced = FiberMap::new(f_full.comps[..small_n].to_vec(), intrinsic)?;

    let mut min_rank = usize::MAX;
    let mut rank_samples = 0;
    for p in samples {
        if let Ok(r) = reduced.fiber_rank(intrinsic, p) {
            min_rank = min_rank.min(r);
            rank_samples += 1;
        }
    }
    let mut report = l_conditions(intrinsic, &reduced, samples, tolerance)?;
    report.family = Family::Holonomic;
    if rank_samples > 0 {
        report
            .extras
            .insert("min_intrinsic_fiber_rank".into(), min_rank as f64);
        if min_rank < small_n {
            report.structural_failures.push(format!(
                "intrinsic fiber map rank {min_rank} < {small_n}"
            ));
            report.pass = false;
        }
    }
    Ok(report)
}

/// Coefficients of the 2-form `Ω = −dF*θ_Q − i_Γ dF*θ_Q ∧ dt` on
/// `ℝ × TQ`, evaluated together with their first derivatives. Returns the
/// antisymmetric coefficient matrix as first-order jets.
fn cartan_two_form(
    sode: &Sode,
    f: &[Jet2],
    g_jets: &[Jet2],
    point: &[f64],
) -> Vec<Vec<crate::jet::Jet1>> {
    use crate::jet::Jet1;
    let n = sode.n();
    let dim = sode.m_space().dim(); // 2n + 1
    let mut a: Vec<Vec<Jet1>> = (0..dim)
        .map(|_| (0..dim).map(|_| Jet1::constant(0.0, dim)).collect())
        .collect();
    let add = |a: &mut Vec<Vec<Jet1>>, r: usize, c: usize, v: &Jet1| {
        a[r][c].add_assign(v);
        let neg = v.scale(-1.0);
        a[c][r].add_assign(&neg);
    };
    let qs = |i: usize| sode.q_slot(i);
    let vs = |i: usize| sode.qd_slot(i);
    // −∂F_i/∂q^j dq^j∧dq^i  and  −∂F_i/∂q̇^j dq̇^j∧dq^i
    for i in 0..n {
        for j in 0..n {
            let c1 = f[i].partial(qs(j)).scale(-1.0);
            add(&mut a, qs(j), qs(i), &c1);
            let c2 = f[i].partial(vs(j)).scale(-1.0);
            add(&mut a, vs(j), qs(i), &c2);
        }
    }
    // (∂F_i/∂q^j q̇^i − ∂F_j/∂q^i q̇^i − ∂F_j/∂q̇^i Γ^i) dq^j∧dt
    for j in 0..n {
        let mut c = Jet1::constant(0.0, dim);
        for i in 0..n {
            let qd_i = Jet1::variable(point[vs(i)], vs(i), dim);
            c.add_assign(&f[i].partial(qs(j)).mul(&qd_i));
            let t2 = f[j].partial(qs(i)).mul(&qd_i);
            c = c.sub(&t2);
            let t3 = f[j].partial(vs(i)).mul(&g_jets[i].lower());
            c = c.sub(&t3);
        }
        add(&mut a, qs(j), 0, &c);
    }
    // ∂F_i/∂q̇^j q̇^i dq̇^j∧dt
    for j in 0..n {
        let mut c = Jet1::constant(0.0, dim);
        for i in 0..n {
            let qd_i = Jet1::variable(point[vs(i)], vs(i), dim);
            c.add_assign(&f[i].partial(vs(j)).mul(&qd_i));
        }
        add(&mut a, vs(j), 0, &c);
    }
    a
}

/// Corroboration of the time-dependent characterization: builds
/// `Ω = −dF*θ_Q − i_Γ dF*θ_Q ∧ dt` from its printed local coefficients and
/// verifies `dΩ = 0` and `i_Γ Ω = 0` numerically.
pub fn cartan_two_form_check(
    sode: &Sode,
    fiber: &FiberMap,
    samples: &[Vec<f64>],
    tolerance: f64,
) -> Result<ConditionReport> {
    if sode.is_constrained() || !sode.time_dependent {
        return Err(Error::Precondition(
            "cartan_two_form_check applies to time-dependent unconstrained SODEs".into(),
        ));
    }
    let n = sode.n();
    let dim = sode.m_space().dim();
    let mut accs = vec![EqAcc::new("d_omega"), EqAcc::new("gamma_contraction")];
    let mut used = 0;
    let mut skipped = 0;
    for p in samples {
        let (f, g_jets) = match (fiber.jets(sode, p), sode.gamma_jets(p)) {
            (Ok(f), Ok(g)) => (f, g),
            _ => {
                skipped += 1;
                continue;
            }
        };
        let a = cartan_two_form(sode, &f, &g_jets, p);
        for mu in 0..dim {
            for nu in (mu + 1)..dim {
                for rho in (nu + 1)..dim {
                    accs[0].push(&[
                        a[nu][rho].grad[mu],
                        a[rho][mu].grad[nu],
                        a[mu][nu].grad[rho],
                    ]);
                }
            }
        }
        // Γ components over (t, q, q̇): (1, q̇, Γ)
        let mut v = vec![1.0];
        for i in 0..n {
            v.push(p[sode.qd_slot(i)]);
        }
        for g in &g_jets {
            v.push(g.value);
        }
        for nu in 0..dim {
            let terms: Vec<f64> = (0..dim).map(|mu| v[mu] * a[mu][nu].value).collect();
            accs[1].push(&terms);
        }
        used += 1;
    }
    Ok(finish(
        Family::CartanTwoForm,
        accs,
        used,
        skipped,
        tolerance,
        BTreeMap::new(),
        Vec::new(),
    ))
}
