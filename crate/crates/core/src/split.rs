//! Best-split search for one node.
//!
//! Categorical columns go through the V-matrix / Dinkelbach / QUBO pipeline,
//! or one of two oracles: exhaustive partition search and the classical
//! sorted-means prefix scan. Numeric and binary columns use a threshold scan.
//! Every subset rule is canonicalized so that the category with the smallest
//! mean response sits on the left.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnKind, ColumnSchema, Dataset};
use crate::dinkelbach::{dinkelbach_split, DinkelbachConfig, IterationTrace};
use crate::qubo::{split_cost, BinaryAssignment};
use crate::solver::{SolverConfig, DEFAULT_EXACT_THRESHOLD};
use crate::stats::{aggregate_categories, build_v_matrix, CategoryAggregate, VMatrix};
use crate::{Error, Result};

/// Relative width of a cost tie.
const TIE_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoricalMethod {
    #[default]
    Qubo,
    Exhaustive,
    Greedy,
}

impl std::str::FromStr for CategoricalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qubo" => Ok(Self::Qubo),
            "exhaustive" => Ok(Self::Exhaustive),
            "greedy" => Ok(Self::Greedy),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

impl std::fmt::Display for CategoricalMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Qubo => "qubo",
            Self::Exhaustive => "exhaustive",
            Self::Greedy => "greedy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SplitKind {
    /// Categories in `left` go left. `right` lists the other categories
    /// observed at the node during training.
    Subset { left: Vec<u32>, right: Vec<u32> },
    /// `x < threshold` goes left.
    Threshold { threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    pub column: usize,
    pub variable: String,
    pub kind: SplitKind,
}

impl SplitRule {
    /// Human-readable rule for the left branch, e.g. `Color ∈ {Gray,Red}`.
    pub fn describe(&self, schema: &[ColumnSchema]) -> String {
        match &self.kind {
            SplitKind::Threshold { threshold } => format!("{} < {}", self.variable, threshold),
            SplitKind::Subset { left, .. } => {
                let labels: Vec<&str> = left
                    .iter()
                    .map(|&c| schema[self.column].categories[c as usize].as_str())
                    .collect();
                format!("{} ∈ {{{}}}", self.variable, labels.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub rule: SplitRule,
    /// Summed child SSE, N_L·Var_L + N_R·Var_R.
    pub cost: f64,
    pub n_left: usize,
    pub n_right: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<IterationTrace>,
    #[serde(default)]
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SplitSearchConfig {
    pub method: CategoricalMethod,
    pub solver: SolverConfig,
    pub dinkelbach: DinkelbachConfig,
    /// Minimum observations per child.
    pub min_bucket: usize,
}

struct CategoricalNode {
    aggs: Vec<CategoryAggregate>,
    v: VMatrix,
    node: crate::stats::NodeStats,
}

fn categorical_node(data: &Dataset, rows: &[usize], column: usize) -> Result<CategoricalNode> {
    let (aggs, node) = aggregate_categories(data, rows, column)?;
    if aggs.len() < 2 {
        return Err(Error::TooFewCategories(aggs.len()));
    }
    let v = build_v_matrix(&aggs);
    Ok(CategoricalNode { aggs, v, node })
}

/// Index of the aggregate with the smallest mean response (ties: lowest code).
fn smallest_mean(aggs: &[CategoryAggregate]) -> usize {
    (0..aggs.len())
        .min_by(|&a, &b| {
            aggs[a]
                .stats
                .mean()
                .total_cmp(&aggs[b].stats.mean())
                .then(aggs[a].category.cmp(&aggs[b].category))
        })
        .expect("non-empty")
}

fn canonical(q: &BinaryAssignment, anchor: usize) -> BinaryAssignment {
    if q.0[anchor] {
        q.clone()
    } else {
        q.complement()
    }
}

fn subset_candidate(
    data: &Dataset,
    column: usize,
    cat: &CategoricalNode,
    q: &BinaryAssignment,
) -> Result<SplitCandidate> {
    let q = canonical(q, smallest_mean(&cat.aggs));
    let cost = split_cost(&cat.v, &cat.aggs, &q)?;
    let (mut left, mut right) = (Vec::new(), Vec::new());
    let (mut n_left, mut n_right) = (0, 0);
    for (a, &bit) in cat.aggs.iter().zip(q.bits()) {
        if bit {
            left.push(a.category);
            n_left += a.n_alpha();
        } else {
            right.push(a.category);
            n_right += a.n_alpha();
        }
    }
    Ok(SplitCandidate {
        rule: SplitRule {
            column,
            variable: data.schema()[column].name.clone(),
            kind: SplitKind::Subset { left, right },
        },
        cost,
        n_left,
        n_right,
        trace: None,
        converged: true,
    })
}

fn left_set(c: &SplitCandidate) -> &[u32] {
    match &c.rule.kind {
        SplitKind::Subset { left, .. } => left,
        SplitKind::Threshold { .. } => &[],
    }
}

/// `a` beats `b`: lower cost beyond the tie width, or a tie with a
/// lexicographically smaller left set.
fn subset_better(a: &SplitCandidate, b: &SplitCandidate) -> bool {
    let eps = TIE_REL * a.cost.abs().max(b.cost.abs()).max(1.0);
    if a.cost < b.cost - eps {
        return true;
    }
    a.cost <= b.cost + eps && left_set(a).cmp(left_set(b)) == Ordering::Less
}

pub fn best_categorical_split_qubo(
    data: &Dataset,
    rows: &[usize],
    column: usize,
    solver: &SolverConfig,
    dinkelbach: &DinkelbachConfig,
) -> Result<SplitCandidate> {
    let cat = categorical_node(data, rows, column)?;
    let out = dinkelbach_split(&cat.v, &cat.aggs, &cat.node, solver, dinkelbach)?;
    let mut cand = subset_candidate(data, column, &cat, &out.q)?;
    cand.trace = Some(out.trace);
    cand.converged = out.converged;
    Ok(cand)
}

/// Ground truth: scores all 2^(M−1) − 1 partitions directly through R(q).
pub fn best_categorical_split_exhaustive(
    data: &Dataset,
    rows: &[usize],
    column: usize,
) -> Result<SplitCandidate> {
    let cat = categorical_node(data, rows, column)?;
    let m = cat.aggs.len();
    if m > DEFAULT_EXACT_THRESHOLD {
        return Err(Error::TooManyCategories {
            m,
            limit: DEFAULT_EXACT_THRESHOLD,
        });
    }
    let mut best: Option<SplitCandidate> = None;
    let full = (1u64 << m) - 1;
    for rest in 0..(1u64 << (m - 1)) {
        let mask = 1 | (rest << 1);
        if mask == full {
            continue;
        }
        let cand = subset_candidate(data, column, &cat, &BinaryAssignment::from_mask(mask, m))?;
        if best.as_ref().is_none_or(|b| subset_better(&cand, b)) {
            best = Some(cand);
        }
    }
    Ok(best.expect("m >= 2 has at least one partition"))
}

/// Sorts categories by mean response and scans the M − 1 contiguous prefixes.
pub fn best_categorical_split_greedy(
    data: &Dataset,
    rows: &[usize],
    column: usize,
) -> Result<SplitCandidate> {
    let cat = categorical_node(data, rows, column)?;
    let m = cat.aggs.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        cat.aggs[a]
            .stats
            .mean()
            .total_cmp(&cat.aggs[b].stats.mean())
            .then(cat.aggs[a].category.cmp(&cat.aggs[b].category))
    });
    let mut q = BinaryAssignment::zeros(m);
    let mut best: Option<SplitCandidate> = None;
    for &idx in &order[..m - 1] {
        q.0[idx] = true;
        let cand = subset_candidate(data, column, &cat, &q)?;
        let better = match &best {
            None => true,
            Some(b) => cand.cost < b.cost - TIE_REL * b.cost.abs().max(1.0),
        };
        if better {
            best = Some(cand);
        }
    }
    Ok(best.expect("m >= 2"))
}

pub fn best_numeric_split(data: &Dataset, rows: &[usize], column: usize) -> Result<SplitCandidate> {
    best_numeric_split_bounded(data, rows, column, 1)
}

/// Threshold scan over midpoints of consecutive distinct values, keeping
/// only splits with at least `min_bucket` rows on each side. Ties go to the
/// smallest threshold.
pub fn best_numeric_split_bounded(
    data: &Dataset,
    rows: &[usize],
    column: usize,
    min_bucket: usize,
) -> Result<SplitCandidate> {
    let name = &data.schema()[column].name;
    let x = data
        .numeric(column)
        .ok_or_else(|| Error::InvalidArgument(format!("column {name} is not numeric")))?;
    let y = data.response();
    let n = rows.len();
    if n < 2 {
        return Err(Error::ConstantColumn(name.clone()));
    }
    let center = rows.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
    let mut pairs: Vec<(f64, f64)> = rows.iter().map(|&i| (x[i], y[i] - center)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs[0].0 == pairs[n - 1].0 {
        return Err(Error::ConstantColumn(name.clone()));
    }

    let (tot1, tot2) = pairs
        .iter()
        .fold((0.0, 0.0), |(s1, s2), &(_, r)| (s1 + r, s2 + r * r));
    let min_bucket = min_bucket.max(1);
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut best: Option<(f64, usize)> = None;
    for i in 1..n {
        let r = pairs[i - 1].1;
        s1 += r;
        s2 += r * r;
        if pairs[i - 1].0 == pairs[i].0 || i < min_bucket || n - i < min_bucket {
            continue;
        }
        let (nl, nr) = (i as f64, (n - i) as f64);
        let sse_l = (s2 - s1 * s1 / nl).max(0.0);
        let (r1, r2) = (tot1 - s1, tot2 - s2);
        let sse_r = (r2 - r1 * r1 / nr).max(0.0);
        let cost = sse_l + sse_r;
        if best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, i));
        }
    }
    let (cost, i) = best.ok_or_else(|| Error::ConstantColumn(name.clone()))?;
    let (a, b) = (pairs[i - 1].0, pairs[i].0);
    let mut threshold = 0.5 * (a + b);
    if !(threshold > a && threshold <= b) {
        threshold = b;
    }
    Ok(SplitCandidate {
        rule: SplitRule {
            column,
            variable: name.clone(),
            kind: SplitKind::Threshold { threshold },
        },
        cost,
        n_left: i,
        n_right: n - i,
        trace: None,
        converged: true,
    })
}

fn column_candidate(
    data: &Dataset,
    rows: &[usize],
    column: usize,
    cfg: &SplitSearchConfig,
) -> Option<SplitCandidate> {
    let cand = match data.schema()[column].kind {
        ColumnKind::Categorical => match cfg.method {
            CategoricalMethod::Qubo => {
                best_categorical_split_qubo(data, rows, column, &cfg.solver, &cfg.dinkelbach)
            }
            CategoricalMethod::Exhaustive => best_categorical_split_exhaustive(data, rows, column),
            CategoricalMethod::Greedy => best_categorical_split_greedy(data, rows, column),
        },
        ColumnKind::Numeric | ColumnKind::Binary => {
            best_numeric_split_bounded(data, rows, column, cfg.min_bucket)
        }
    }
    .ok()?;
    let floor = cfg.min_bucket.max(1);
    (cand.n_left >= floor && cand.n_right >= floor).then_some(cand)
}

/// Per-column best candidates in column order. Columns with no admissible
/// split are skipped.
pub fn split_candidates(
    data: &Dataset,
    rows: &[usize],
    cfg: &SplitSearchConfig,
) -> Vec<SplitCandidate> {
    if rows.len() < 2 {
        return Vec::new();
    }
    let candidates: Vec<Option<SplitCandidate>> = (0..data.schema().len())
        .into_par_iter()
        .map(|c| column_candidate(data, rows, c, cfg))
        .collect();
    candidates.into_iter().flatten().collect()
}

/// Lowest cost in a candidate list; ties go to the earlier entry.
pub fn select_best(candidates: Vec<SplitCandidate>) -> Option<SplitCandidate> {
    candidates.into_iter().fold(None, |best, c| match best {
        Some(b) if b.cost <= c.cost => Some(b),
        _ => Some(c),
    })
}

/// Minimum-cost split across all columns; ties go to the earlier column.
pub fn best_split(
    data: &Dataset,
    rows: &[usize],
    cfg: &SplitSearchConfig,
) -> Option<SplitCandidate> {
    select_best(split_candidates(data, rows, cfg))
}
