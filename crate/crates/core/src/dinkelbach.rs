//! Dinkelbach iteration for the categorical split ratio `n(q)/d(q)`.
//!
//! Each iteration minimizes `F(λ_k, q) = n(q) − λ_k·d(q)` over all of
//! `{0,1}^M`. The solvers only search non-trivial vectors, so the trivial
//! vectors (where `F = 0` for every λ) are compared explicitly: if every
//! non-trivial vector has `F > 0` the minimizer is the all-zeros vector.
//! The update is `λ_{k+1} = n(q_k)/d(q_k)`, or `N_S·Var_S` when `q_k` is
//! trivial. The loop stops once `|F(λ_k, q_k)|` is numerically zero at a
//! non-trivial `q_k`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::qubo::{build_qubo, eval_fractional, BinaryAssignment};
use crate::solver::{solve, SolverConfig};
use crate::stats::{CategoryAggregate, NodeStats, VMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum LambdaInit {
    /// λ₀ = N_S·Var_S; guarantees a non-increasing λ sequence.
    UpperBound,
    Zero,
    Custom(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DinkelbachConfig {
    pub lambda_init: LambdaInit,
    pub rel_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for DinkelbachConfig {
    fn default() -> Self {
        Self {
            lambda_init: LambdaInit::UpperBound,
            rel_tolerance: 1e-9,
            max_iterations: 50,
        }
    }
}

impl DinkelbachConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if let LambdaInit::Custom(l) = self.lambda_init {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "initial lambda must be >= 0, got {l}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub lambda_in: f64,
    pub q: BinaryAssignment,
    pub f_value: f64,
    /// R(q); for a trivial q this is N_S·Var_S (an empty child contributes 0).
    pub ratio: f64,
    pub lambda_out: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    lambda_initial: f64,
    binary_vector: String,
    score: f64,
    lambda_final: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    f_value: Option<f64>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn rows(&self, with_f: bool) -> impl Iterator<Item = TraceRow> + '_ {
        self.records.iter().map(move |r| TraceRow {
            iteration: r.iteration,
            lambda_initial: r.lambda_in,
            binary_vector: r.q.to_string(),
            score: r.ratio,
            lambda_final: r.lambda_out,
            f_value: with_f.then_some(r.f_value),
        })
    }

    /// CSV with columns `iteration,lambda_initial,binary_vector,score,lambda_final`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "iteration",
            "lambda_initial",
            "binary_vector",
            "score",
            "lambda_final",
        ])?;
        for r in self.rows(false) {
            wr.write_record([
                r.iteration.to_string(),
                r.lambda_initial.to_string(),
                r.binary_vector,
                r.score.to_string(),
                r.lambda_final.to_string(),
            ])?;
        }
        wr.flush().map_err(|source| Error::Io {
            path: "<trace output>".into(),
            source,
        })?;
        Ok(())
    }

    /// JSON array of rows with the CSV columns plus `f_value`.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.rows(true).collect::<Vec<_>>()).expect("plain data")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DinkelbachOutcome {
    /// Best non-trivial assignment seen.
    pub q: BinaryAssignment,
    /// R(q) of the returned assignment.
    pub lambda_star: f64,
    pub converged: bool,
    pub trace: IterationTrace,
}

pub fn lambda_upper_bound(node: &NodeStats) -> f64 {
    node.sse()
}

pub fn dinkelbach_split(
    v: &VMatrix,
    aggs: &[CategoryAggregate],
    node: &NodeStats,
    solver: &SolverConfig,
    cfg: &DinkelbachConfig,
) -> Result<DinkelbachOutcome> {
    cfg.validate()?;
    let m = aggs.len();
    if m < 2 {
        return Err(Error::TooFewCategories(m));
    }
    if node.n < 2 {
        return Err(Error::InvalidArgument(
            "node needs at least 2 observations".into(),
        ));
    }
    let upper = lambda_upper_bound(node);
    let mut fallback = BinaryAssignment::zeros(m);
    fallback.0[0] = true;
    if upper <= 0.0 {
        // every split costs 0: nothing to separate
        return Ok(DinkelbachOutcome {
            q: fallback,
            lambda_star: 0.0,
            converged: false,
            trace: IterationTrace::default(),
        });
    }

    let mut lambda = match cfg.lambda_init {
        LambdaInit::UpperBound => upper,
        LambdaInit::Zero => 0.0,
        LambdaInit::Custom(l) => l,
    };
    let mut trace = IterationTrace::default();
    let mut best: Option<(f64, BinaryAssignment)> = None;

    for k in 1..=cfg.max_iterations {
        let problem = build_qubo(v, aggs, node, lambda)?;
        let out = solve(&problem, solver)?;
        let parts = eval_fractional(v, aggs, &out.q)?;
        let f_nontrivial = parts.parametric(lambda);
        let tol = cfg.rel_tolerance * (lambda * parts.denominator).max(1.0);

        if f_nontrivial > tol {
            // λ below λ*: the trivial split wins
            trace.records.push(IterationRecord {
                iteration: k,
                lambda_in: lambda,
                q: BinaryAssignment::zeros(m),
                f_value: 0.0,
                ratio: upper,
                lambda_out: upper,
            });
            lambda = upper;
            continue;
        }

        let ratio = parts.numerator / parts.denominator;
        if best.as_ref().is_none_or(|(r, _)| ratio < *r) {
            best = Some((ratio, out.q.clone()));
        }
        trace.records.push(IterationRecord {
            iteration: k,
            lambda_in: lambda,
            q: out.q.clone(),
            f_value: f_nontrivial,
            ratio,
            lambda_out: ratio,
        });
        let stalled = (ratio - lambda).abs() <= cfg.rel_tolerance * lambda.abs().max(1.0);
        if f_nontrivial.abs() <= tol || stalled {
            return Ok(DinkelbachOutcome {
                q: out.q,
                lambda_star: ratio,
                converged: true,
                trace,
            });
        }
        lambda = ratio;
    }

    let (lambda_star, q) = best.unwrap_or((f64::NAN, fallback.clone()));
    let lambda_star = if lambda_star.is_nan() {
        let parts = eval_fractional(v, aggs, &fallback)?;
        parts.numerator / parts.denominator
    } else {
        lambda_star
    };
    Ok(DinkelbachOutcome {
        q,
        lambda_star,
        converged: false,
        trace,
    })
}
