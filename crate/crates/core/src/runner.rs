//! Check orchestration: executes the checks a problem file requests, in
//! declaration order, never aborting on a failed check, and assembles a
//! deterministic run report.

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bundles::{
    closedness_residual, isotropy_residual, mu_form, Chart, LieForm, MuForm, SigmaImmersion,
};
use crate::error::{Error, Result};
use crate::extend::{
    constant_offset_deviation, verify_extension, FlowExtension, ReconstructedScalar,
};
use crate::helmholtz::{
    cartan_two_form_check, ch_conditions, helmholtz_classic, holonomic_check, l_conditions,
    t_conditions, tc_conditions,
};
use crate::jet::VarSpace;
use crate::linalg::Mat;
use crate::mech::{
    chaplygin_reduce, el_residual, el_sode as make_el, hamiltonization_residual, integrate,
    integrate_sode, nonholonomic_sode, Dynamics, LagrangianDef,
};
use crate::problem::{CheckSpec, Expectation, ProblemFile};
use crate::sample::Sampler;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fibermap: Option<String>,
    pub expected: Expectation,
    pub passed: bool,
    pub matched_expectation: bool,
    pub details: Value,
}

/// The centralized defaults, echoed into every report for reproducibility.
#[derive(Debug, Clone, Serialize)]
pub struct Defaults {
    pub condition_tolerance: f64,
    pub trajectory_tolerance: f64,
    pub samples: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            condition_tolerance: crate::helmholtz::DEFAULT_TOLERANCE,
            trajectory_tolerance: crate::mech::DEFAULT_TRAJECTORY_TOLERANCE,
            samples: crate::sample::DEFAULT_SAMPLES,
            step: crate::mech::DEFAULT_STEP,
            seed: crate::sample::DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub tool_version: String,
    pub input_sha256: String,
    pub defaults: Defaults,
    pub seed: u64,
    pub samples: usize,
    pub condition_tolerance: f64,
    pub checks: Vec<CheckOutcome>,
    /// True iff every check matched its declared expectation. Pass/fail is
    /// existence-at-samples only: it certifies the declared box, not global
    /// behavior.
    pub overall_pass: bool,
}

pub fn input_hash(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed offsets for the independent sampling passes of one run, so that
/// every draw is reproducible from the single declared seed.
mod seed_offset {
    pub const M_SAMPLES: u64 = 0;
    pub const TQ_SAMPLES: u64 = 1;
    pub const QUERIES: u64 = 2;
    pub const ACCELERATIONS: u64 = 3;
    pub const FLOW_TIMES: u64 = 4;
    pub const BASE_SAMPLES: u64 = 5;
    pub const REDUCED_SAMPLES: u64 = 6;
}

struct RunContext<'a> {
    problem: &'a ProblemFile,
    m_samples: Vec<Vec<f64>>,
}

impl<'a> RunContext<'a> {
    fn draw(&self, space: &VarSpace, offset: u64, count: usize) -> Result<Vec<Vec<f64>>> {
        let cfg = &self.problem.sampling;
        let mut sampler = Sampler::new(cfg.seed.wrapping_add(offset));
        sampler.draw_guarded(space, &cfg.bx, &cfg.guards, count)
    }

    fn tq_space(&self) -> Result<VarSpace> {
        let sode = self.sode()?;
        let mut names: Vec<String> = sode.coords().to_vec();
        names.extend(sode.coords().iter().map(|c| format!("{c}d")));
        VarSpace::new(names)
    }

    fn sode(&self) -> Result<&'a crate::bundles::Sode> {
        self.problem
            .sode
            .as_ref()
            .ok_or_else(|| Error::ProblemFile {
                section: "sode".into(),
                message: "this check requires a [sode] section".into(),
            })
    }

    fn fibermaps(&self) -> Result<&'a [(String, crate::bundles::FiberMap)]> {
        if self.problem.fibermaps.is_empty() {
            return Err(Error::ProblemFile {
                section: "fibermap".into(),
                message: "this check requires at least one fiber map".into(),
            });
        }
        Ok(&self.problem.fibermaps)
    }
}

fn outcome(
    spec: &CheckSpec,
    fibermap: Option<String>,
    passed: bool,
    details: Value,
) -> CheckOutcome {
    let matched = match spec.expect {
        Expectation::Pass => passed,
        Expectation::Fail => !passed,
    };
    CheckOutcome {
        name: spec.name.clone(),
        fibermap,
        expected: spec.expect,
        passed,
        matched_expectation: matched,
        details,
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

/// Execute every requested check. Infrastructure failures (bad sections,
/// unsatisfiable sampling) abort with an error; residual failures are
/// recorded and the run continues.
pub fn run_checks(problem: &ProblemFile) -> Result<RunReport> {
    let m_samples = match &problem.sode {
        Some(s) => {
            let cfg = &problem.sampling;
            let mut sampler = Sampler::new(cfg.seed.wrapping_add(seed_offset::M_SAMPLES));
            sampler.draw_guarded(s.m_space(), &cfg.bx, &cfg.guards, cfg.samples)?
        }
        None => Vec::new(),
    };
    let ctx = RunContext { problem, m_samples };
    let mut outcomes = Vec::new();
    for spec in &problem.checks {
        let results = run_one(&ctx, spec)?;
        outcomes.extend(results);
    }
    let overall = !outcomes.is_empty() && outcomes.iter().all(|o| o.matched_expectation);
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        input_sha256: input_hash(&problem.source),
        defaults: Defaults::default(),
        seed: problem.sampling.seed,
        samples: problem.sampling.samples,
        condition_tolerance: problem.cond_tol,
        checks: outcomes,
        overall_pass: overall,
    })
}

fn run_one(ctx: &RunContext<'_>, spec: &CheckSpec) -> Result<Vec<CheckOutcome>> {
    let tol = ctx.problem.cond_tol;
    match spec.name.as_str() {
        "helmholtz" | "l_conditions" | "t_conditions" | "ch" | "tc" | "cartan" => {
            let sode = ctx.sode()?;
            let mut out = Vec::new();
            for (name, fiber) in ctx.fibermaps()? {
                let report = match spec.name.as_str() {
                    "helmholtz" => helmholtz_classic(sode, fiber, &ctx.m_samples, tol)?,
                    "l_conditions" => l_conditions(sode, fiber, &ctx.m_samples, tol)?,
                    "t_conditions" => t_conditions(sode, fiber, &ctx.m_samples, tol)?,
                    "ch" => ch_conditions(sode, fiber, &ctx.m_samples, tol)?,
                    "tc" => tc_conditions(sode, fiber, &ctx.m_samples, tol)?,
                    _ => cartan_two_form_check(sode, fiber, &ctx.m_samples, tol)?,
                };
                out.push(outcome(spec, Some(name.clone()), report.pass, to_value(&report)));
            }
            Ok(out)
        }
        "closedness" => {
            let sode = ctx.sode()?;
            let mut out = Vec::new();
            for (name, fiber) in ctx.fibermaps()? {
                let report = if sode.is_constrained() {
                    let lie = LieForm { sode, fiber };
                    closedness_residual(&lie, &ctx.m_samples)
                } else {
                    let mu = MuForm::new(sode, fiber)?;
                    closedness_residual(&mu, &ctx.m_samples)
                };
                let passed = report.samples_used > 0 && report.max <= tol;
                out.push(outcome(spec, Some(name.clone()), passed, to_value(&report)));
            }
            Ok(out)
        }
        "isotropy" => {
            let sode = ctx.sode()?;
            let chart = Chart::CotangentOfTangent { n: sode.n() };
            let mut out = Vec::new();
            for (name, fiber) in ctx.fibermaps()? {
                let sigma = SigmaImmersion { sode, fiber };
                let report = isotropy_residual(&sigma, &chart, &ctx.m_samples);
                let passed = report.residual.samples_used > 0
                    && report.residual.max <= tol
                    && report.full_rank();
                out.push(outcome(spec, Some(name.clone()), passed, to_value(&report)));
            }
            Ok(out)
        }
        "lie_match" => {
            let sode = ctx.sode()?;
            let mut out = Vec::new();
            for (name, fiber) in ctx.fibermaps()? {
                let lie = LieForm { sode, fiber };
                let mut worst = 0.0f64;
                let mut used = 0;
                for p in &ctx.m_samples {
                    let (mu, lv) = (mu_form(sode, fiber, p)?, lie.sample(p)?);
                    for (a, b) in mu.comps.iter().zip(&lv.comps) {
                        worst = worst.max((a - b).abs());
                    }
                    used += 1;
                }
                let details = json!({"max_deviation": worst, "samples_used": used});
                out.push(outcome(spec, Some(name.clone()), worst <= tol, details));
            }
            Ok(out)
        }
        "sode_match" => {
            let sode = ctx.sode()?;
            let lag = ctx.problem.lagrangian.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "lagrangian".into(),
                message: "sode_match requires [lagrangian]".into(),
            })?;
            let lc = ctx
                .problem
                .lin_constraints
                .as_ref()
                .ok_or_else(|| Error::ProblemFile {
                    section: "constraints".into(),
                    message: "sode_match requires [constraints]".into(),
                })?;
            let nh = nonholonomic_sode(lag, lc);
            let mut worst = 0.0f64;
            for p in &ctx.m_samples {
                let q: Vec<f64> = (0..sode.n()).map(|i| p[sode.q_slot(i)]).collect();
                let qd = sode.full_velocity(p)?;
                let acc = nh.accel(0.0, &q, &qd)?;
                let gam = sode.gamma_jets(p)?;
                for a in 0..sode.free_count() {
                    worst = worst.max((acc[sode.free_coord(a)] - gam[a].value).abs());
                }
            }
            let details = json!({"max_deviation": worst, "samples": ctx.m_samples.len()});
            Ok(vec![outcome(spec, None, worst <= tol, details)])
        }
        "reconstruct" => {
            let sode = ctx.sode()?;
            let section = ctx
                .problem
                .reconstruct
                .as_ref()
                .ok_or_else(|| Error::ProblemFile {
                    section: "reconstruct".into(),
                    message: "reconstruct check requires [reconstruct]".into(),
                })?;
            let fiber = &ctx.fibermaps()?[0].1;
            let queries = ctx.draw(
                sode.m_space(),
                seed_offset::QUERIES,
                ctx.problem.sampling.samples.min(50),
            )?;
            let (got, want): (Vec<f64>, Vec<f64>) = if sode.is_constrained() {
                let lie = LieForm { sode, fiber };
                let rec =
                    ReconstructedScalar::new(&lie, section.base.clone(), &ctx.m_samples, tol)?;
                let got = queries
                    .iter()
                    .map(|q| rec.eval(q))
                    .collect::<Result<Vec<_>>>()?;
                let want = queries
                    .iter()
                    .map(|q| section.reference_l.eval_value(sode.m_space(), q))
                    .collect::<Result<Vec<_>>>()?;
                (got, want)
            } else {
                let mu = MuForm::new(sode, fiber)?;
                let rec =
                    ReconstructedScalar::new(&mu, section.base.clone(), &ctx.m_samples, tol)?;
                let got = queries
                    .iter()
                    .map(|q| rec.eval(q))
                    .collect::<Result<Vec<_>>>()?;
                let want = queries
                    .iter()
                    .map(|q| section.reference_l.eval_value(sode.m_space(), q))
                    .collect::<Result<Vec<_>>>()?;
                (got, want)
            };
            let dev = constant_offset_deviation(&got, &want);
            let details = json!({
                "max_deviation_up_to_constant": dev,
                "queries": queries.len(),
                "tolerance": section.tol,
            });
            Ok(vec![outcome(spec, None, dev <= section.tol, details)])
        }
        "extend_flow" => {
            let sode = ctx.sode()?;
            let section = ctx.problem.extend.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "extend".into(),
                message: "extend_flow requires [extend]".into(),
            })?;
            let fibermaps = ctx.fibermaps()?;
            let (fname, fiber) = match &section.fibermap {
                Some(n) => fibermaps
                    .iter()
                    .find(|(name, _)| name == n)
                    .map(|(name, f)| (name.clone(), f))
                    .ok_or_else(|| Error::ProblemFile {
                        section: "extend".into(),
                        message: format!("unknown fibermap `{n}`"),
                    })?,
                None => (fibermaps[0].0.clone(), &fibermaps[0].1),
            };
            let sigma = SigmaImmersion { sode, fiber };
            let k = section.phis.len();
            let ext = FlowExtension::for_sigma(
                &sigma,
                section.phis.clone(),
                vec![section.flow_range; k],
                section.h,
            )?;
            let sigma_pts: Vec<Vec<f64>> = ctx.m_samples.iter().take(16).cloned().collect();
            ext.check_preconditions(&sigma_pts, tol.max(1e-9))?;

            // extended parameter samples: σ-params plus interior flow times
            let mut tsampler = Sampler::new(
                ctx.problem.sampling.seed.wrapping_add(seed_offset::FLOW_TIMES),
            );
            let (lo, hi) = section.flow_range;
            let ext_params: Vec<Vec<f64>> = ctx
                .m_samples
                .iter()
                .take(24)
                .map(|p| {
                    let mut u = p.clone();
                    for _ in 0..k {
                        u.push(tsampler.uniform(lo / 4.0, hi / 4.0));
                    }
                    u
                })
                .collect();
            let tq_samples = ctx.draw(&ctx.tq_space()?, seed_offset::TQ_SAMPLES, ctx.problem.sampling.samples)?;
            let verification = ext.verify(&ext_params, &tq_samples)?;

            let mut max_dl_dev = 0.0f64;
            if let Some(ref_l) = &section.reference_l {
                let lbar = LagrangianDef::new(sode.coords().to_vec(), ref_l.clone(), false)?;
                for p in &tq_samples {
                    let dl = ext.dl_at(p)?;
                    let lj = lbar.jet(0.0, &p[..sode.n()], &p[sode.n()..])?;
                    for (kc, got) in dl.iter().enumerate() {
                        max_dl_dev = max_dl_dev.max((got - lj.grad[kc]).abs());
                    }
                }
            }
            let passed = verification.dimension_ok
                && verification.isotropy.residual.max <= section.tol
                && verification.isotropy.full_rank()
                && (section.reference_l.is_none() || max_dl_dev <= section.tol);
            let details = json!({
                "verification": to_value(&verification),
                "max_dl_deviation_vs_reference": max_dl_dev,
                "tolerance": section.tol,
            });
            Ok(vec![outcome(spec, Some(fname), passed, details)])
        }
        "extend_closed" => {
            let section = ctx
                .problem
                .extend_closed
                .as_ref()
                .ok_or_else(|| Error::ProblemFile {
                    section: "extend_closed".into(),
                    message: "extend_closed requires [extend_closed]".into(),
                })?;
            let x_space = VarSpace::new(section.x_names.clone())?;
            let x_samples = ctx.draw(&x_space, seed_offset::BASE_SAMPLES, ctx.problem.sampling.samples)?;
            let ext = crate::extend::ClosedFormExtension::new(
                section.x_names.clone(),
                section.y_names.clone(),
                section.gamma_x.clone(),
                section.gamma_y.clone(),
                section.base.clone(),
                &x_samples,
                tol,
            )?;
            let restriction = ext.restriction_residual(&x_samples)?;
            let mut ref_dev = 0.0f64;
            if let Some(ref_l) = &section.reference_l {
                let mut names = section.x_names.clone();
                names.extend(section.y_names.clone());
                let xy_space = VarSpace::new(names)?;
                let xy_samples =
                    ctx.draw(&xy_space, seed_offset::QUERIES, ctx.problem.sampling.samples)?;
                let d = section.x_names.len();
                let got: Vec<f64> = xy_samples
                    .iter()
                    .map(|p| ext.value(&p[..d], &p[d..]))
                    .collect::<Result<Vec<_>>>()?;
                let want: Vec<f64> = xy_samples
                    .iter()
                    .map(|p| ref_l.eval_value(&xy_space, p))
                    .collect::<Result<Vec<_>>>()?;
                ref_dev = constant_offset_deviation(&got, &want);
            }
            let passed = restriction <= section.tol
                && (section.reference_l.is_none() || ref_dev <= section.tol);
            let details = json!({
                "restriction_residual": restriction,
                "max_deviation_vs_reference_up_to_constant": ref_dev,
                "tolerance": section.tol,
            });
            Ok(vec![outcome(spec, None, passed, details)])
        }
        "verify_extension" => {
            let sode = ctx.sode()?;
            let vs = ctx.problem.verify.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "verify".into(),
                message: "verify_extension requires [verify]".into(),
            })?;
            let ext = ctx.problem.extend.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "extend".into(),
                message: "verify_extension integrates the [extend] reference_L".into(),
            })?;
            let ref_l = ext.reference_l.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "extend".into(),
                message: "verify_extension needs reference_L".into(),
            })?;
            let lbar = LagrangianDef::new(sode.coords().to_vec(), ref_l.clone(), false)?;
            let el = make_el(&lbar);
            let cmp = verify_extension(&el, sode, &vs.x0, vs.t_final, vs.h)?;
            let mut ref_dev = 0.0f64;
            if let Some(reference) = &vs.reference {
                let t_space = VarSpace::new(vec!["t"])?;
                let traj = integrate(&el, &vs.x0, 0.0, vs.t_final, vs.h, None)?;
                for (t, state) in traj.times.iter().zip(&traj.states) {
                    for (comp, e) in state.iter().zip(reference.iter()) {
                        let want = e.eval_value(&t_space, &[*t])?;
                        ref_dev = ref_dev.max((comp - want).abs());
                    }
                }
            }
            let passed = cmp.max_state_deviation <= vs.tol
                && cmp.max_constraint_drift <= vs.tol
                && ref_dev <= vs.tol
                && cmp.el_truncated.is_none()
                && cmp.sode_truncated.is_none();
            let details = json!({
                "comparison": to_value(&cmp),
                "max_deviation_vs_reference": ref_dev,
                "tolerance": vs.tol,
            });
            Ok(vec![outcome(spec, None, passed, details)])
        }
        "douglas_det" => {
            let sode = ctx.sode()?;
            let section = ctx.problem.douglas.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "douglas".into(),
                message: "douglas_det requires [douglas]".into(),
            })?;
            let mut min_det = f64::INFINITY;
            for p in &ctx.m_samples {
                let mut m = Mat::zeros(3, 3);
                for (k, e) in section.entries.iter().enumerate() {
                    m.set(k / 3, k % 3, e.eval_value(sode.m_space(), p)?);
                }
                min_det = min_det.min(m.det().abs());
            }
            let details = json!({
                "min_abs_det": min_det,
                "threshold": section.min_det,
                "samples": ctx.m_samples.len(),
            });
            Ok(vec![outcome(spec, None, min_det > section.min_det, details)])
        }
        "singular_multiplier" => {
            let sode = ctx.sode()?;
            if sode.is_constrained() {
                return Err(Error::Precondition(
                    "singular_multiplier applies to unconstrained SODEs".into(),
                ));
            }
            let section = ctx.problem.singular.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "singular".into(),
                message: "singular_multiplier requires [singular]".into(),
            })?;
            let lag = LagrangianDef::new(
                sode.coords().to_vec(),
                section.lagrangian.clone(),
                false,
            )?;
            let n = sode.n();
            // accelerations sampled from the same box, via qdd names
            let mut names: Vec<String> = sode.m_space().names().to_vec();
            names.extend(sode.coords().iter().map(|c| format!("{c}dd")));
            let acc_space = VarSpace::new(names)?;
            let pts = ctx.draw(&acc_space, seed_offset::ACCELERATIONS, ctx.problem.sampling.samples)?;
            let mut worst = 0.0f64;
            for p in &pts {
                let (m_point, qdd) = p.split_at(2 * n);
                let q = &m_point[..n];
                let qd = &m_point[n..];
                let res = el_residual(&lag, 0.0, q, qd, qdd)?;
                let gam = sode.gamma_jets(m_point)?;
                for i in 0..n {
                    let mut want = 0.0;
                    for j in 0..n {
                        let gij = section.g_rows[i][j].eval_value(sode.m_space(), m_point)?;
                        want += gij * (qdd[j] - gam[j].value);
                    }
                    worst = worst.max((res[i] - want).abs());
                }
            }
            let details = json!({
                "max_identity_deviation": worst,
                "tolerance": section.tol,
                "samples": pts.len(),
            });
            Ok(vec![outcome(spec, None, worst <= section.tol, details)])
        }
        "holonomic" => {
            let sode = ctx.sode()?;
            let section = ctx.problem.holonomic.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "holonomic".into(),
                message: "holonomic check requires [holonomic]".into(),
            })?;
            let mut verdicts = Vec::new();
            let mut reports = Vec::new();
            for variant in &section.variants {
                let f_full = crate::bundles::FiberMap {
                    comps: variant.clone(),
                };
                let rep = holonomic_check(sode, section.big_n, &f_full, &ctx.m_samples, tol)?;
                verdicts.push(rep.pass);
                reports.push(to_value(&rep));
            }
            let invariant = verdicts.windows(2).all(|w| w[0] == w[1]);
            let passed = invariant && verdicts.iter().all(|v| *v);
            let details = json!({
                "variants": reports,
                "verdict_invariant_under_f_alpha": invariant,
            });
            Ok(vec![outcome(spec, None, passed, details)])
        }
        "holonomic_verify" => {
            let sode = ctx.sode()?;
            let section = ctx.problem.holonomic.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "holonomic".into(),
                message: "holonomic_verify requires [holonomic]".into(),
            })?;
            let l_ext = section.l_ext.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "holonomic".into(),
                message: "holonomic_verify needs L_ext".into(),
            })?;
            let small_n = sode.n();
            let big_n = section.big_n;
            let lag = LagrangianDef::new(section.big_coords.clone(), l_ext.clone(), false)?;
            let el = make_el(&lag);
            // embed the intrinsic state into TQ with q^α = q̇^α = 0
            let mut x0 = vec![0.0; 2 * big_n];
            for a in 0..small_n {
                x0[a] = section.x0[a];
                x0[big_n + a] = section.x0[small_n + a];
            }
            let el_traj = integrate(&el, &x0, 0.0, section.t_final, section.h, None)?;
            let in_traj = integrate_sode(sode, &section.x0, 0.0, section.t_final, section.h)?;
            let mut dev = 0.0f64;
            let mut tn_drift = 0.0f64;
            for (es, is) in el_traj.states.iter().zip(&in_traj.states) {
                for a in 0..small_n {
                    dev = dev.max((es[a] - is[a]).abs());
                    dev = dev.max((es[big_n + a] - is[small_n + a]).abs());
                }
                for alpha in small_n..big_n {
                    tn_drift = tn_drift.max(es[alpha].abs());
                    tn_drift = tn_drift.max(es[big_n + alpha].abs());
                }
            }
            let passed = dev <= section.traj_tol
                && tn_drift <= section.traj_tol
                && el_traj.truncated.is_none();
            let details = json!({
                "max_state_deviation": dev,
                "max_tn_drift": tn_drift,
                "tolerance": section.traj_tol,
            });
            Ok(vec![outcome(spec, None, passed, details)])
        }
        "curvature" => {
            let section = chaplygin_section(ctx)?;
            let base_space = VarSpace::new(section.data.base_coords.clone())?;
            if section.data.base_dim() != 2 || section.curvature_ref.len() != section.data.group_dim
            {
                return Err(Error::ProblemFile {
                    section: "chaplygin".into(),
                    message: "curvature check compares ℬ^α_{01} references on a 2D base".into(),
                });
            }
            let pts = ctx.draw(&base_space, seed_offset::BASE_SAMPLES, ctx.problem.sampling.samples)?;
            let mut worst = 0.0f64;
            let mut antisym = 0.0f64;
            for r in &pts {
                let b = section.data.curvature(r)?;
                for (alpha, refe) in section.curvature_ref.iter().enumerate() {
                    let want = refe.eval_value(&base_space, r)?;
                    worst = worst.max((b[alpha].get(0, 1) - want).abs());
                    antisym = antisym.max((b[alpha].get(0, 1) + b[alpha].get(1, 0)).abs());
                }
            }
            let details = json!({
                "max_deviation": worst,
                "max_antisymmetry_defect": antisym,
                "samples": pts.len(),
            });
            Ok(vec![outcome(spec, None, worst <= 1e-12 && antisym == 0.0, details)])
        }
        "lambda_zero" => {
            let section = chaplygin_section(ctx)?;
            let space = section.data.reduced_space();
            let pts = ctx.draw(&space, seed_offset::REDUCED_SAMPLES, ctx.problem.sampling.samples)?;
            let mut worst = 0.0f64;
            for p in &pts {
                for v in section.data.lambda_values(p)? {
                    worst = worst.max(v.abs());
                }
            }
            let details = json!({"max_abs_lambda": worst, "samples": pts.len()});
            Ok(vec![outcome(spec, None, worst < 1e-12, details)])
        }
        "reduced_match" => {
            let section = chaplygin_section(ctx)?;
            let lag = ctx.problem.lagrangian.as_ref().ok_or_else(|| Error::ProblemFile {
                section: "lagrangian".into(),
                message: "reduced_match integrates the full nonholonomic system".into(),
            })?;
            let lc = ctx
                .problem
                .lin_constraints
                .as_ref()
                .ok_or_else(|| Error::ProblemFile {
                    section: "constraints".into(),
                    message: "reduced_match requires [constraints]".into(),
                })?;
            let sode = ctx.sode()?;
            let reduced = chaplygin_reduce(&section.data);
            let rtraj = integrate(
                &reduced,
                &section.x0,
                0.0,
                section.t_final,
                section.h,
                None,
            )?;
            let nh = nonholonomic_sode(lag, lc);
            let ntraj = integrate(
                &nh,
                &section.full_x0,
                0.0,
                section.t_final,
                section.h,
                None,
            )?;
            // match base coordinates by name against the full system
            let idx: Vec<usize> = section
                .data
                .base_coords
                .iter()
                .map(|c| {
                    sode.coords()
                        .iter()
                        .position(|x| x == c)
                        .ok_or_else(|| Error::ProblemFile {
                            section: "chaplygin".into(),
                            message: format!("base coordinate `{c}` not in [space] coords"),
                        })
                })
                .collect::<Result<_>>()?;
            let d = section.data.base_dim();
            let n = sode.n();
            let mut dev = 0.0f64;
            for (rs, ns) in rtraj.states.iter().zip(&ntraj.states) {
                for (a, &ci) in idx.iter().enumerate() {
                    dev = dev.max((rs[a] - ns[ci]).abs());
                    dev = dev.max((rs[d + a] - ns[n + ci]).abs());
                }
            }
            let details = json!({
                "max_marginal_deviation": dev,
                "tolerance": section.traj_tol,
            });
            Ok(vec![outcome(spec, None, dev <= section.traj_tol, details)])
        }
        "hamiltonization" => {
            let section = chaplygin_section(ctx)?;
            if section.fibermap.is_empty() {
                return Err(Error::ProblemFile {
                    section: "chaplygin".into(),
                    message: "hamiltonization needs an F on T(Q/G)".into(),
                });
            }
            let reduced = chaplygin_reduce(&section.data);
            let space = section.data.reduced_space();
            let pts = ctx.draw(&space, seed_offset::REDUCED_SAMPLES, ctx.problem.sampling.samples)?;
            let report = hamiltonization_residual(
                &reduced,
                &section.data.base_coords,
                section.fibermap.clone(),
                &pts,
            )?;
            let passed = report.residual.samples_used > 0
                && report.residual.max <= tol
                && report.full_rank();
            Ok(vec![outcome(spec, None, passed, to_value(&report))])
        }
        other => Err(Error::ProblemFile {
            section: "checks".into(),
            message: format!(
                "unknown check `{other}`; known: helmholtz, l_conditions, t_conditions, ch, \
                 tc, cartan, closedness, isotropy, lie_match, sode_match, reconstruct, \
                 extend_flow, verify_extension, douglas_det, singular_multiplier, holonomic, \
                 holonomic_verify, curvature, lambda_zero, reduced_match, hamiltonization"
            ),
        }),
    }
}

fn chaplygin_section<'a>(ctx: &RunContext<'a>) -> Result<&'a crate::problem::ChaplyginSection> {
    ctx.problem
        .chaplygin
        .as_ref()
        .ok_or_else(|| Error::ProblemFile {
            section: "chaplygin".into(),
            message: "this check requires [chaplygin]".into(),
        })
}
