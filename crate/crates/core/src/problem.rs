//! The plain-text problem-file format: sections `[space]`, `[sode]`,
//! `[constraints]`, `[fibermap]`, `[lagrangian]`, `[chaplygin]`,
//! `[sampling]`, `[checks]` plus per-check sections `[extend]`, `[verify]`,
//! `[reconstruct]`, `[douglas]`, `[singular]`, `[holonomic]`. Entries are
//! `key = value`; `#` starts a comment; expression lists separate entries
//! with `,` and rows/variants with `;` (both at parenthesis depth 0).
//!
//! The full grammar is documented in the repository README.

use std::collections::BTreeMap;

use crate::bundles::{FiberMap, Sode};
use crate::error::{Error, Result};
use crate::expr::{parse, Expr};
use crate::mech::{ChaplyginData, LagrangianDef, LinearConstraints};
use crate::sample::{Guard, GuardOp, SampleBox, DEFAULT_SAMPLES, DEFAULT_SEED};

fn err(section: &str, message: impl Into<String>) -> Error {
    Error::ProblemFile {
        section: section.into(),
        message: message.into(),
    }
}

/// Split on a separator at parenthesis depth zero.
fn split_top(s: &str, sep: char) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            c if c == sep && depth == 0 => {
                out.push(cur.trim().to_string());
                cur.clear();
                continue;
            }
            _ => {}
        }
        cur.push(ch);
    }
    if !cur.trim().is_empty() || !out.is_empty() {
        out.push(cur.trim().to_string());
    }
    out.retain(|s| !s.is_empty());
    out
}

fn parse_exprs(section: &str, value: &str) -> Result<Vec<Expr>> {
    split_top(value, ',')
        .iter()
        .map(|s| parse(s).map_err(|e| err(section, format!("in `{s}`: {e}"))))
        .collect()
}

fn parse_names(value: &str) -> Vec<String> {
    split_top(value, ',')
}

fn parse_f64(section: &str, value: &str) -> Result<f64> {
    value
        .trim()
        .parse()
        .map_err(|_| err(section, format!("`{value}` is not a number")))
}

fn parse_f64_list(section: &str, value: &str) -> Result<Vec<f64>> {
    split_top(value, ',')
        .iter()
        .map(|s| parse_f64(section, s))
        .collect()
}

/// `lo..hi` with decimal endpoints.
fn parse_range(section: &str, value: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = value.splitn(2, "..").collect();
    if parts.len() != 2 {
        return Err(err(section, format!("`{value}` is not a range lo..hi")));
    }
    Ok((parse_f64(section, parts[0])?, parse_f64(section, parts[1])?))
}

fn parse_guard(section: &str, text: &str) -> Result<Guard> {
    for (sym, op) in [
        (">=", GuardOp::Ge),
        ("<=", GuardOp::Le),
        (">", GuardOp::Gt),
        ("<", GuardOp::Lt),
    ] {
        if let Some(pos) = text.find(sym) {
            let lhs = parse(&text[..pos]).map_err(|e| err(section, e.to_string()))?;
            let rhs =
                parse(&text[pos + sym.len()..]).map_err(|e| err(section, e.to_string()))?;
            return Ok(Guard { lhs, op, rhs });
        }
    }
    Err(err(section, format!("guard `{text}` has no comparison operator")))
}

/// Raw sectioned key/value view of a file.
struct RawSections {
    sections: BTreeMap<String, Vec<(String, String)>>,
}

impl RawSections {
    fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(err(
                        "file",
                        format!("line {}: malformed section header `{line}`", lineno + 1),
                    ));
                }
                let name = line[1..line.len() - 1].trim().to_string();
                sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let section = current
                .clone()
                .ok_or_else(|| err("file", format!("line {}: entry before any section", lineno + 1)))?;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(&section, format!("line {}: expected key = value", lineno + 1)))?;
            sections
                .get_mut(&section)
                .unwrap()
                .push((key.trim().to_string(), value.trim().to_string()));
        }
        Ok(RawSections { sections })
    }

    fn section(&self, name: &str) -> Option<&Vec<(String, String)>> {
        self.sections.get(name)
    }

    fn get<'a>(&'a self, section: &str, key: &str) -> Option<&'a str> {
        self.section(section)?
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn require<'a>(&'a self, section: &str, key: &str) -> Result<&'a str> {
        self.get(section, key)
            .ok_or_else(|| err(section, format!("missing key `{key}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Expectation {
    Pass,
    Fail,
}

/// One requested check with its expected outcome. Expectations let shipped
/// counterexamples (nonvariational fixtures) count as green when they fail
/// the way they should.
#[derive(Debug, Clone)]
pub struct CheckSpec {
    pub name: String,
    pub expect: Expectation,
}

#[derive(Debug, Clone)]
pub struct SamplingConfig {
    pub bx: SampleBox,
    pub guards: Vec<Guard>,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct ExtendSection {
    pub fibermap: Option<String>,
    pub phis: Vec<Expr>,
    pub flow_range: (f64, f64),
    pub h: f64,
    pub reference_l: Option<Expr>,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct VerifySection {
    pub x0: Vec<f64>,
    pub t_final: f64,
    pub h: f64,
    pub tol: f64,
    /// Optional closed-form reference trajectory, one expression of `t` per
    /// full-state component.
    pub reference: Option<Vec<Expr>>,
}

#[derive(Debug, Clone)]
pub struct ReconstructSection {
    pub base: Vec<f64>,
    pub reference_l: Expr,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct ExtendClosedSection {
    pub x_names: Vec<String>,
    pub y_names: Vec<String>,
    pub gamma_x: Vec<Expr>,
    pub gamma_y: Vec<Expr>,
    pub base: Vec<f64>,
    /// Optional reference Lagrangian over `(x, y)` variables.
    pub reference_l: Option<Expr>,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct DouglasSection {
    /// Row-major 3×3 determinant entries.
    pub entries: Vec<Expr>,
    pub min_det: f64,
}

#[derive(Debug, Clone)]
pub struct SingularSection {
    pub lagrangian: Expr,
    /// Multiplier matrix rows; entries are expressions over the M-space.
    pub g_rows: Vec<Vec<Expr>>,
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub struct HolonomicSection {
    pub big_n: usize,
    /// Ambient coordinate names (first `n−m` are the adapted TN ones).
    pub big_coords: Vec<String>,
    /// Fiber map variants into T*Q, each with `big_n` components.
    pub variants: Vec<Vec<Expr>>,
    pub l_ext: Option<Expr>,
    pub x0: Vec<f64>,
    pub t_final: f64,
    pub h: f64,
    pub traj_tol: f64,
}

#[derive(Debug, Clone)]
pub struct ChaplyginSection {
    pub data: ChaplyginData,
    /// Reference curvature entries `ℬ^α_{01}` for a 2-dimensional base.
    pub curvature_ref: Vec<Expr>,
    /// Fiber map on T(Q/G) for the hamiltonization test.
    pub fibermap: Vec<Expr>,
    pub x0: Vec<f64>,
    pub full_x0: Vec<f64>,
    pub t_final: f64,
    pub h: f64,
    pub traj_tol: f64,
}

/// A parsed and validated problem instance.
#[derive(Debug)]
pub struct ProblemFile {
    pub source: String,
    pub sode: Option<Sode>,
    pub fibermaps: Vec<(String, FiberMap)>,
    pub lagrangian: Option<LagrangianDef>,
    pub lin_constraints: Option<LinearConstraints>,
    pub chaplygin: Option<ChaplyginSection>,
    pub sampling: SamplingConfig,
    pub checks: Vec<CheckSpec>,
    pub extend: Option<ExtendSection>,
    pub extend_closed: Option<ExtendClosedSection>,
    pub verify: Option<VerifySection>,
    pub reconstruct: Option<ReconstructSection>,
    pub douglas: Option<DouglasSection>,
    pub singular: Option<SingularSection>,
    pub holonomic: Option<HolonomicSection>,
    pub cond_tol: f64,
}

pub fn load_problem_str(text: &str) -> Result<ProblemFile> {
    let raw = RawSections::parse(text)?;
    if raw.section("space").is_none() && raw.section("holonomic").is_none() {
        return Err(err("file", "missing [space] section"));
    }

    let mut sode = None;
    let mut coords: Vec<String> = Vec::new();
    let mut time_dependent = false;
    if raw.section("space").is_some() {
        coords = parse_names(raw.require("space", "coords")?);
        if coords.is_empty() {
            return Err(err("space", "coords list is empty"));
        }
        let free = match raw.get("space", "free") {
            Some(v) => parse_names(v),
            None => coords.clone(),
        };
        time_dependent = matches!(raw.get("space", "time"), Some("true"));
        if let Some(sec) = raw.section("sode") {
            let gamma = parse_exprs(
                "sode",
                sec.iter()
                    .find(|(k, _)| k == "gamma")
                    .map(|(_, v)| v.as_str())
                    .ok_or_else(|| err("sode", "missing key `gamma`"))?,
            )?;
            let psi = match raw.get("sode", "psi") {
                Some(v) => parse_exprs("sode", v)?,
                None => vec![],
            };
            sode = Some(Sode::new(coords.clone(), free, gamma, psi, time_dependent)?);
        }
    }

    let mut fibermaps = Vec::new();
    if let Some(entries) = raw.section("fibermap") {
        let s = sode
            .as_ref()
            .ok_or_else(|| err("fibermap", "a [sode] section is required for fiber maps"))?;
        for (name, value) in entries {
            let comps = parse_exprs("fibermap", value)?;
            fibermaps.push((name.clone(), FiberMap::new(comps, s)?));
        }
    }

    let lagrangian = match raw.get("lagrangian", "L") {
        Some(v) => Some(LagrangianDef::new(
            coords.clone(),
            parse(v).map_err(|e| err("lagrangian", e.to_string()))?,
            time_dependent,
        )?),
        None => None,
    };

    let lin_constraints = match raw.get("constraints", "mu") {
        Some(v) => {
            let rows: Vec<Vec<Expr>> = split_top(v, ';')
                .iter()
                .map(|row| parse_exprs("constraints", row))
                .collect::<Result<_>>()?;
            let mu0 = match raw.get("constraints", "mu0") {
                Some(z) => parse_exprs("constraints", z)?,
                None => rows.iter().map(|_| Expr::Constant(0.0)).collect(),
            };
            Some(LinearConstraints::new(&coords, rows, mu0, time_dependent)?)
        }
        None => None,
    };

    let chaplygin = if raw.section("chaplygin").is_some() {
        let base = parse_names(raw.require("chaplygin", "base")?);
        let group_dim: usize = raw
            .require("chaplygin", "group")?
            .parse()
            .map_err(|_| err("chaplygin", "`group` must be an integer"))?;
        let a_rows: Vec<Vec<Expr>> = split_top(raw.require("chaplygin", "A")?, ';')
            .iter()
            .map(|row| parse_exprs("chaplygin", row))
            .collect::<Result<_>>()?;
        let structure = match raw.get("chaplygin", "structure") {
            Some(v) => split_top(v, ';')
                .iter()
                .map(|entry| {
                    let parts = split_top(entry, ',');
                    if parts.len() != 4 {
                        return Err(err("chaplygin", "structure entries are α,β,γ,value"));
                    }
                    let idx = |s: &str| -> Result<usize> {
                        s.parse()
                            .map_err(|_| err("chaplygin", format!("bad index `{s}`")))
                    };
                    Ok((
                        idx(&parts[0])?,
                        idx(&parts[1])?,
                        idx(&parts[2])?,
                        parse_f64("chaplygin", &parts[3])?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?,
            None => vec![],
        };
        let l_reduced = parse(raw.require("chaplygin", "l")?)
            .map_err(|e| err("chaplygin", e.to_string()))?;
        let data = ChaplyginData::new(base, group_dim, a_rows, structure, l_reduced)?;
        let curvature_ref = match raw.get("chaplygin", "curvature_ref") {
            Some(v) => parse_exprs("chaplygin", v)?,
            None => vec![],
        };
        let fibermap = match raw.get("chaplygin", "F") {
            Some(v) => parse_exprs("chaplygin", v)?,
            None => vec![],
        };
        let x0 = match raw.get("chaplygin", "x0") {
            Some(v) => parse_f64_list("chaplygin", v)?,
            None => vec![],
        };
        let full_x0 = match raw.get("chaplygin", "full_x0") {
            Some(v) => parse_f64_list("chaplygin", v)?,
            None => vec![],
        };
        let t_final = match raw.get("chaplygin", "t_final") {
            Some(v) => parse_f64("chaplygin", v)?,
            None => 5.0,
        };
        let h = match raw.get("chaplygin", "h") {
            Some(v) => parse_f64("chaplygin", v)?,
            None => crate::mech::DEFAULT_STEP,
        };
        let traj_tol = match raw.get("chaplygin", "traj_tol") {
            Some(v) => parse_f64("chaplygin", v)?,
            None => 1e-8,
        };
        Some(ChaplyginSection {
            data,
            curvature_ref,
            fibermap,
            x0,
            full_x0,
            t_final,
            h,
            traj_tol,
        })
    } else {
        None
    };

    let mut bx = SampleBox::default();
    let mut guards = Vec::new();
    let mut samples = DEFAULT_SAMPLES;
    let mut seed = DEFAULT_SEED;
    if raw.section("sampling").is_some() {
        if let Some(v) = raw.get("sampling", "box") {
            let mut ranges = Vec::new();
            for entry in split_top(v, ';') {
                let (name, range) = entry
                    .split_once(':')
                    .ok_or_else(|| err("sampling", format!("box entry `{entry}` needs var: lo..hi")))?;
                let (lo, hi) = parse_range("sampling", range)?;
                ranges.push((name.trim().to_string(), lo, hi));
            }
            bx = SampleBox::new(ranges)?;
        }
        if let Some(v) = raw.get("sampling", "guards") {
            for entry in split_top(v, ';') {
                guards.push(parse_guard("sampling", &entry)?);
            }
        }
        if let Some(v) = raw.get("sampling", "samples") {
            samples = v
                .parse()
                .map_err(|_| err("sampling", "`samples` must be an integer"))?;
        }
        if let Some(v) = raw.get("sampling", "seed") {
            seed = v
                .parse()
                .map_err(|_| err("sampling", "`seed` must be an integer"))?;
        }
    }

    let mut checks = Vec::new();
    if let Some(v) = raw.get("checks", "run") {
        for entry in split_top(v, ',') {
            let (name, expect) = match entry.split_once(':') {
                Some((n, "fail")) => (n.trim().to_string(), Expectation::Fail),
                Some((n, "pass")) => (n.trim().to_string(), Expectation::Pass),
                Some((_, other)) => {
                    return Err(err("checks", format!("unknown expectation `{other}`")))
                }
                None => (entry.clone(), Expectation::Pass),
            };
            checks.push(CheckSpec { name, expect });
        }
    }
    let cond_tol = match raw.get("checks", "tol") {
        Some(v) => parse_f64("checks", v)?,
        None => crate::helmholtz::DEFAULT_TOLERANCE,
    };

    let extend = if raw.section("extend").is_some() {
        let phis = parse_exprs("extend", raw.require("extend", "phi")?)?;
        let flow_range = match raw.get("extend", "range") {
            Some(v) => parse_range("extend", v)?,
            None => (-3.0, 3.0),
        };
        let h = match raw.get("extend", "h") {
            Some(v) => parse_f64("extend", v)?,
            None => 1e-2,
        };
        let reference_l = match raw.get("extend", "reference_L") {
            Some(v) => Some(parse(v).map_err(|e| err("extend", e.to_string()))?),
            None => None,
        };
        let tol = match raw.get("extend", "tol") {
            Some(v) => parse_f64("extend", v)?,
            None => 1e-6,
        };
        Some(ExtendSection {
            fibermap: raw.get("extend", "fibermap").map(str::to_string),
            phis,
            flow_range,
            h,
            reference_l,
            tol,
        })
    } else {
        None
    };

    let extend_closed = if raw.section("extend_closed").is_some() {
        Some(ExtendClosedSection {
            x_names: parse_names(raw.require("extend_closed", "x")?),
            y_names: parse_names(raw.require("extend_closed", "y")?),
            gamma_x: parse_exprs("extend_closed", raw.require("extend_closed", "gamma_x")?)?,
            gamma_y: parse_exprs("extend_closed", raw.require("extend_closed", "gamma_y")?)?,
            base: parse_f64_list("extend_closed", raw.require("extend_closed", "base")?)?,
            reference_l: match raw.get("extend_closed", "reference_L") {
                Some(v) => Some(parse(v).map_err(|e| err("extend_closed", e.to_string()))?),
                None => None,
            },
            tol: match raw.get("extend_closed", "tol") {
                Some(v) => parse_f64("extend_closed", v)?,
                None => 1e-9,
            },
        })
    } else {
        None
    };

    let verify = if raw.section("verify").is_some() {
        Some(VerifySection {
            x0: parse_f64_list("verify", raw.require("verify", "x0")?)?,
            t_final: match raw.get("verify", "t_final") {
                Some(v) => parse_f64("verify", v)?,
                None => 5.0,
            },
            h: match raw.get("verify", "h") {
                Some(v) => parse_f64("verify", v)?,
                None => crate::mech::DEFAULT_STEP,
            },
            tol: match raw.get("verify", "tol") {
                Some(v) => parse_f64("verify", v)?,
                None => 1e-6,
            },
            reference: match raw.get("verify", "reference") {
                Some(v) => Some(parse_exprs("verify", v)?),
                None => None,
            },
        })
    } else {
        None
    };

    let reconstruct = if raw.section("reconstruct").is_some() {
        Some(ReconstructSection {
            base: parse_f64_list("reconstruct", raw.require("reconstruct", "base")?)?,
            reference_l: parse(raw.require("reconstruct", "reference_L")?)
                .map_err(|e| err("reconstruct", e.to_string()))?,
            tol: match raw.get("reconstruct", "tol") {
                Some(v) => parse_f64("reconstruct", v)?,
                None => 1e-8,
            },
        })
    } else {
        None
    };

    let douglas = if raw.section("douglas").is_some() {
        let entries = parse_exprs("douglas", raw.require("douglas", "det")?)?;
        if entries.len() != 9 {
            return Err(err("douglas", "det needs exactly 9 entries (3×3, row-major)"));
        }
        Some(DouglasSection {
            entries,
            min_det: match raw.get("douglas", "min_det") {
                Some(v) => parse_f64("douglas", v)?,
                None => 0.1,
            },
        })
    } else {
        None
    };

    let singular = if raw.section("singular").is_some() {
        let lagrangian = parse(raw.require("singular", "L")?)
            .map_err(|e| err("singular", e.to_string()))?;
        let g_rows: Vec<Vec<Expr>> = split_top(raw.require("singular", "g")?, ';')
            .iter()
            .map(|row| parse_exprs("singular", row))
            .collect::<Result<_>>()?;
        Some(SingularSection {
            lagrangian,
            g_rows,
            tol: match raw.get("singular", "tol") {
                Some(v) => parse_f64("singular", v)?,
                None => 1e-12,
            },
        })
    } else {
        None
    };

    let holonomic = if raw.section("holonomic").is_some() {
        let big_coords = parse_names(raw.require("holonomic", "big_coords")?);
        let variants: Vec<Vec<Expr>> = split_top(raw.require("holonomic", "F")?, ';')
            .iter()
            .map(|row| parse_exprs("holonomic", row))
            .collect::<Result<_>>()?;
        let big_n = big_coords.len();
        for v in &variants {
            if v.len() != big_n {
                return Err(err(
                    "holonomic",
                    format!("each F variant needs {big_n} components"),
                ));
            }
        }
        Some(HolonomicSection {
            big_n,
            big_coords,
            variants,
            l_ext: match raw.get("holonomic", "L_ext") {
                Some(v) => Some(parse(v).map_err(|e| err("holonomic", e.to_string()))?),
                None => None,
            },
            x0: match raw.get("holonomic", "x0") {
                Some(v) => parse_f64_list("holonomic", v)?,
                None => vec![],
            },
            t_final: match raw.get("holonomic", "t_final") {
                Some(v) => parse_f64("holonomic", v)?,
                None => 5.0,
            },
            h: match raw.get("holonomic", "h") {
                Some(v) => parse_f64("holonomic", v)?,
                None => crate::mech::DEFAULT_STEP,
            },
            traj_tol: match raw.get("holonomic", "traj_tol") {
                Some(v) => parse_f64("holonomic", v)?,
                None => 1e-6,
            },
        })
    } else {
        None
    };

    Ok(ProblemFile {
        source: text.to_string(),
        sode,
        fibermaps,
        lagrangian,
        lin_constraints,
        chaplygin,
        sampling: SamplingConfig {
            bx,
            guards,
            samples,
            seed,
        },
        checks,
        extend,
        extend_closed,
        verify,
        reconstruct,
        douglas,
        singular,
        holonomic,
        cond_tol,
    })
}

pub fn load_problem(path: &std::path::Path) -> Result<ProblemFile> {
    let text = std::fs::read_to_string(path)?;
    load_problem_str(&text)
}
