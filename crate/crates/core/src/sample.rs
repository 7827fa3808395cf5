//! Sampling of evaluation points: uniform draws from a per-variable box,
//! rejection-filtered by guard expressions that keep samples away from
//! declared singular loci (e.g. `abs(phid) > 0.1`).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jet::VarSpace;

pub const DEFAULT_SAMPLES: usize = 64;
pub const DEFAULT_SEED: u64 = 0;

/// Comparison operator of a guard expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuardOp {
    Gt,
    Lt,
    Ge,
    Le,
}

/// A boolean-valued sampling guard `lhs <op> rhs`.
#[derive(Debug, Clone)]
pub struct Guard {
    pub lhs: Expr,
    pub op: GuardOp,
    pub rhs: Expr,
}

impl Guard {
    pub fn holds(&self, space: &VarSpace, point: &[f64]) -> Result<bool> {
        let a = self.lhs.eval_value(space, point)?;
        let b = self.rhs.eval_value(space, point)?;
        Ok(match self.op {
            GuardOp::Gt => a > b,
            GuardOp::Lt => a < b,
            GuardOp::Ge => a >= b,
            GuardOp::Le => a <= b,
        })
    }
}

/// Per-variable sampling intervals. Variables without a declared range
/// default to `[-1, 1]`.
#[derive(Debug, Clone, Default)]
pub struct SampleBox {
    ranges: Vec<(String, f64, f64)>,
}

impl SampleBox {
    pub fn new(ranges: Vec<(String, f64, f64)>) -> Result<Self> {
        for (name, lo, hi) in &ranges {
            if lo > hi {
                return Err(Error::Sampling(format!(
                    "empty range for `{name}`: {lo}..{hi}"
                )));
            }
        }
        Ok(SampleBox { ranges })
    }

    pub fn range_for(&self, name: &str) -> (f64, f64) {
        self.ranges
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, lo, hi)| (*lo, *hi))
            .unwrap_or((-1.0, 1.0))
    }
}

/// Deterministic point sampler over a [`VarSpace`].
pub struct Sampler {
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Sampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            lo
        } else {
            self.rng.gen_range(lo..hi)
        }
    }

    /// Draw one point inside the box.
    pub fn draw_point(&mut self, space: &VarSpace, bx: &SampleBox) -> Vec<f64> {
        space
            .names()
            .iter()
            .map(|n| {
                let (lo, hi) = bx.range_for(n);
                self.uniform(lo, hi)
            })
            .collect()
    }

    /// Draw `count` points satisfying all guards. Guard evaluation errors
    /// count as rejections. Gives up after a generous rejection budget so a
    /// contradictory guard set fails loudly instead of spinning.
    pub fn draw_guarded(
        &mut self,
        space: &VarSpace,
        bx: &SampleBox,
        guards: &[Guard],
        count: usize,
    ) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(count);
        let mut attempts = 0usize;
        let budget = 1000 * count.max(1);
        while out.len() < count {
            attempts += 1;
            if attempts > budget {
                return Err(Error::Sampling(format!(
                    "guards rejected {} of {} candidate points; box and guards are \
                     likely inconsistent",
                    attempts - out.len(),
                    attempts
                )));
            }
            let p = self.draw_point(space, bx);
            let ok = guards
                .iter()
                .all(|g| g.holds(space, &p).unwrap_or(false));
            if ok {
                out.push(p);
            }
        }
        Ok(out)
    }
}
