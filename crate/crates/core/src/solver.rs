//! Minimizers of qᵀHq over the non-trivial binary vectors.
//!
//! Both solvers keep the local field `f = Hq` so that a single-bit flip is
//! scored and applied in O(M). The exhaustive solver relies on flip symmetry
//! (`F(q) = F(1 − q)`, which every split QUBO has) and enumerates only the
//! vectors with `q_1 = 1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::qubo::{BinaryAssignment, QuboProblem};
use crate::rng::SeededRng;
use crate::{Error, Result};

pub const DEFAULT_EXACT_THRESHOLD: usize = 22;
/// Hard cap for the u64 state mask used by the Gray-code walk.
const MAX_ENUMERABLE: usize = 40;
const RESYNC_EVERY: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Exhaustive,
    Annealing,
}

impl std::fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SolveMethod::Exhaustive => "exhaustive",
            SolveMethod::Annealing => "annealing",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub q: BinaryAssignment,
    pub objective: f64,
    pub method: SolveMethod,
    pub evaluations: u64,
}

/// Geometric-schedule simulated annealing. `None` fields take scale-free
/// defaults: `sweeps = 200·M`, `t_init = max|H|`, `t_final = 1e-3·t_init`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub seed: u64,
    pub sweeps: Option<usize>,
    pub restarts: usize,
    pub t_init: Option<f64>,
    pub t_final: Option<f64>,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sweeps: None,
            restarts: 8,
            t_init: None,
            t_final: None,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.sweeps == Some(0) {
            return Err(Error::InvalidArgument(
                "sweeps and restarts must be >= 1".into(),
            ));
        }
        if let Some(t0) = self.t_init {
            if !(t0 > 0.0) {
                return Err(Error::InvalidArgument("t_init must be positive".into()));
            }
        }
        if let Some(t1) = self.t_final {
            if !(t1 > 0.0) {
                return Err(Error::InvalidArgument("t_final must be positive".into()));
            }
        }
        if let (Some(t0), Some(t1)) = (self.t_init, self.t_final) {
            if t1 >= t0 {
                return Err(Error::InvalidArgument("t_init must exceed t_final".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Largest M solved by enumeration; larger problems are annealed.
    pub exact_threshold: usize,
    pub anneal: AnnealConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            exact_threshold: DEFAULT_EXACT_THRESHOLD,
            anneal: AnnealConfig::default(),
        }
    }
}

/// True when `a` precedes `b` in lexicographic order of (q_1, …, q_M), 0 < 1.
fn mask_lex_less(a: u64, b: u64) -> bool {
    let diff = a ^ b;
    diff != 0 && (a >> diff.trailing_zeros()) & 1 == 0
}

fn full_field(p: &QuboProblem, bits: &[bool]) -> (Vec<f64>, f64) {
    let m = p.m();
    let mut field = vec![0.0; m];
    for (a, f) in field.iter_mut().enumerate() {
        let row = p.row(a);
        *f = (0..m).filter(|&b| bits[b]).map(|b| row[b]).sum();
    }
    let obj = (0..m).filter(|&a| bits[a]).map(|a| field[a]).sum();
    (field, obj)
}

/// Objective change from flipping bit `i` given field `f = Hq`.
#[inline]
fn flip_delta(p: &QuboProblem, field: &[f64], bits: &[bool], i: usize) -> f64 {
    let hii = p.get(i, i);
    if bits[i] {
        -(2.0 * field[i] - hii)
    } else {
        2.0 * field[i] + hii
    }
}

#[inline]
fn apply_flip(p: &QuboProblem, field: &mut [f64], bits: &mut [bool], i: usize) {
    let row = p.row(i);
    if bits[i] {
        for (f, h) in field.iter_mut().zip(row) {
            *f -= h;
        }
    } else {
        for (f, h) in field.iter_mut().zip(row) {
            *f += h;
        }
    }
    bits[i] = !bits[i];
}

/// Visits every vector with `q_1 = 1` except all-ones, in Gray-code order,
/// passing `(mask, incremental objective)`. Resynchronizes the field from
/// scratch every `resync` steps.
fn gray_walk(p: &QuboProblem, resync: u64, mut visit: impl FnMut(u64, &[bool], f64)) -> u64 {
    let m = p.m();
    let free = m - 1;
    let mut bits = vec![false; m];
    bits[0] = true;
    let (mut field, mut obj) = full_field(p, &bits);
    let mut mask: u64 = 1;
    let all_ones: u64 = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
    let steps: u64 = 1u64 << free;
    let mut visited = 0u64;
    for t in 0..steps {
        if t > 0 {
            let i = (t.trailing_zeros() + 1) as usize;
            obj += flip_delta(p, &field, &bits, i);
            apply_flip(p, &mut field, &mut bits, i);
            mask ^= 1 << i;
            if t % resync == 0 {
                let (f, o) = full_field(p, &bits);
                field = f;
                obj = o;
            }
        }
        if mask != all_ones {
            visited += 1;
            visit(mask, &bits, obj);
        }
    }
    visited
}

pub fn solve_exhaustive(p: &QuboProblem) -> Result<SolveOutcome> {
    solve_exhaustive_with_limit(p, DEFAULT_EXACT_THRESHOLD)
}

/// Global minimum over non-trivial vectors with `q_1 = 1`. Objectives within
/// 1e-12 of the scale Σ|H| count as ties, resolved toward the
/// lexicographically smallest vector.
pub fn solve_exhaustive_with_limit(p: &QuboProblem, limit: usize) -> Result<SolveOutcome> {
    let m = p.m();
    if m < 2 {
        return Err(Error::TooFewCategories(m));
    }
    let limit = limit.min(MAX_ENUMERABLE);
    if m > limit {
        return Err(Error::TooManyCategories { m, limit });
    }
    let scale: f64 = (0..m)
        .map(|a| p.row(a).iter().map(|x| x.abs()).sum::<f64>())
        .sum();
    let eps = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut best_mask = 0u64;
    let mut best_obj = f64::INFINITY;
    let evaluations = gray_walk(p, RESYNC_EVERY, |mask, _, obj| {
        if obj < best_obj - eps || (obj <= best_obj + eps && mask_lex_less(mask, best_mask)) {
            best_obj = obj;
            best_mask = mask;
        }
    });
    let q = BinaryAssignment::from_mask(best_mask, m);
    Ok(SolveOutcome {
        objective: p.evaluate(&q),
        q,
        method: SolveMethod::Exhaustive,
        evaluations,
    })
}

struct RestartResult {
    q: BinaryAssignment,
    objective: f64,
    evaluations: u64,
}

fn anneal_once(
    p: &QuboProblem,
    seed: u64,
    stream: u64,
    sweeps: usize,
    t0: f64,
    t1: f64,
) -> RestartResult {
    let m = p.m();
    let mut rng = SeededRng::with_stream(seed, stream);
    let mut bits: Vec<bool> = (0..m).map(|_| rng.next_u64() & 1 == 1).collect();
    let (mut field, mut obj) = full_field(p, &bits);
    let mut ones = bits.iter().filter(|&&b| b).count();
    let mut best: Option<(f64, Vec<bool>)> = None;
    let mut evaluations = 0u64;

    let consider = |best: &mut Option<(f64, Vec<bool>)>, obj: f64, bits: &[bool], ones: usize| {
        if ones == 0 || ones == m {
            return;
        }
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            *best = Some((obj, bits.to_vec()));
        }
    };
    consider(&mut best, obj, &bits, ones);

    let ratio = t1 / t0;
    for s in 0..sweeps {
        let frac = if sweeps > 1 {
            s as f64 / (sweeps - 1) as f64
        } else {
            1.0
        };
        let temp = t0 * ratio.powf(frac);
        for i in 0..m {
            let delta = flip_delta(p, &field, &bits, i);
            evaluations += 1;
            if delta <= 0.0 || rng.uniform() < (-delta / temp).exp() {
                ones = if bits[i] { ones - 1 } else { ones + 1 };
                apply_flip(p, &mut field, &mut bits, i);
                obj += delta;
                consider(&mut best, obj, &bits, ones);
            }
        }
        if ones == 0 || ones == m {
            // trivial repair: move to the best single-flip neighbour
            let (i, delta) = (0..m).map(|i| (i, flip_delta(p, &field, &bits, i))).fold(
                (0, f64::INFINITY),
                |acc, x| if x.1 < acc.1 { x } else { acc },
            );
            ones = if bits[i] { ones - 1 } else { ones + 1 };
            apply_flip(p, &mut field, &mut bits, i);
            obj += delta;
            evaluations += m as u64;
            consider(&mut best, obj, &bits, ones);
        }
        if s % 16 == 15 {
            let (f, o) = full_field(p, &bits);
            field = f;
            obj = o;
        }
    }

    let (_, bits) = best.expect("m >= 2 always admits a non-trivial state after repair");
    let q = BinaryAssignment(bits);
    RestartResult {
        objective: p.evaluate(&q),
        q,
        evaluations,
    }
}

/// Best non-trivial vector over `cfg.restarts` independent annealing runs.
/// Restart `r` draws from ChaCha stream `r` of `cfg.seed`; the reduction is
/// by (objective, lexicographic q), so the result is independent of how many
/// threads run the restarts.
pub fn solve_anneal(p: &QuboProblem, cfg: &AnnealConfig) -> Result<SolveOutcome> {
    cfg.validate()?;
    let m = p.m();
    if m < 2 {
        return Err(Error::TooFewCategories(m));
    }
    let sweeps = cfg.sweeps.unwrap_or(200 * m);
    let t0 = cfg.t_init.unwrap_or_else(|| {
        let h = p.max_abs();
        if h > 0.0 {
            h
        } else {
            1.0
        }
    });
    let t1 = cfg.t_final.unwrap_or(1e-3 * t0);
    if !(t1 > 0.0 && t1 < t0) {
        return Err(Error::InvalidArgument("t_init must exceed t_final".into()));
    }

    let runs: Vec<RestartResult> = (0..cfg.restarts as u64)
        .into_par_iter()
        .map(|r| anneal_once(p, cfg.seed, r, sweeps, t0, t1))
        .collect();
    let evaluations = runs.iter().map(|r| r.evaluations).sum();
    let best = runs
        .into_iter()
        .min_by(|a, b| {
            a.objective
                .total_cmp(&b.objective)
                .then_with(|| a.q.cmp(&b.q))
        })
        .expect("restarts >= 1");
    Ok(SolveOutcome {
        q: best.q,
        objective: best.objective,
        method: SolveMethod::Annealing,
        evaluations,
    })
}

/// Enumeration up to `cfg.exact_threshold` categories, annealing above.
pub fn solve(p: &QuboProblem, cfg: &SolverConfig) -> Result<SolveOutcome> {
    if p.m() < 2 {
        return Err(Error::TooFewCategories(p.m()));
    }
    if p.m() <= cfg.exact_threshold.min(MAX_ENUMERABLE) {
        solve_exhaustive_with_limit(p, cfg.exact_threshold)
    } else {
        solve_anneal(p, &cfg.anneal)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::qubo::{build_qubo, eval_fractional};
    use crate::stats::tests::worked_node;
    use crate::stats::{aggregate_categories, build_v_matrix, CategoryAggregate, NodeStats};

    pub(crate) fn random_problem(rng: &mut SeededRng, m: usize) -> QuboProblem {
        let aggs: Vec<_> = (0..m)
            .map(|k| {
                let n = 1 + rng.index(6);
                let shift = rng.uniform_range(0.0, 100.0);
                CategoryAggregate {
                    category: k as u32,
                    stats: NodeStats::from_values(
                        (0..n)
                            .map(|_| shift + rng.normal(0.0, 20.0))
                            .collect::<Vec<_>>(),
                    ),
                }
            })
            .collect();
        let total: f64 = aggs.iter().map(|a| a.stats.sum).sum();
        let n: usize = aggs.iter().map(|a| a.stats.n).sum();
        let mean = total / n as f64;
        let m2: f64 = aggs
            .iter()
            .map(|a| a.stats.m2 + a.stats.n as f64 * (a.stats.mean() - mean).powi(2))
            .sum();
        let node = NodeStats {
            n,
            sum: total,
            sum_sq: aggs.iter().map(|a| a.stats.sum_sq).sum(),
            m2,
        };
        let v = build_v_matrix(&aggs);
        let lambda = rng.uniform() * node.sse();
        build_qubo(&v, &aggs, &node, lambda).unwrap()
    }

    fn brute_force(p: &QuboProblem) -> f64 {
        let m = p.m();
        (1..(1u64 << m) - 1)
            .map(|mask| p.evaluate(&BinaryAssignment::from_mask(mask, m)))
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn worked_node_exhaustive() {
        let d = worked_node();
        let (aggs, node) = aggregate_categories(&d, &(0..6).collect::<Vec<_>>(), 0).unwrap();
        let v = build_v_matrix(&aggs);
        let p = build_qubo(&v, &aggs, &node, 191.5).unwrap();
        let out = solve_exhaustive(&p).unwrap();
        assert_eq!(out.q, BinaryAssignment::from_bits(&[1, 0, 0, 1]));
        assert!((out.objective + 1633.5).abs() < 1e-9);
        assert_eq!(out.evaluations, 7);
        // oracle: all 14 non-trivial vectors through the fractional route
        let best = (1..15u64)
            .map(|mask| {
                let q = BinaryAssignment::from_mask(mask, 4);
                eval_fractional(&v, &aggs, &q).unwrap().parametric(191.5)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((best - out.objective).abs() < 1e-9);
    }

    #[test]
    fn two_categories_single_candidate() {
        let p = QuboProblem::from_dense(2, vec![1.0, -3.0, -3.0, 1.0], 0.0).unwrap();
        let out = solve_exhaustive(&p).unwrap();
        assert_eq!(out.q, BinaryAssignment::from_bits(&[1, 0]));
        let out = solve_anneal(&p, &AnnealConfig::default()).unwrap();
        assert!(!out.q.is_trivial());
    }

    #[test]
    fn zero_matrix_tie_break() {
        let p = QuboProblem::from_dense(5, vec![0.0; 25], 0.0).unwrap();
        let out = solve_exhaustive(&p).unwrap();
        assert_eq!(out.objective, 0.0);
        assert_eq!(out.q, BinaryAssignment::from_bits(&[1, 0, 0, 0, 0]));
    }

    #[test]
    fn exhaustive_limits() {
        let p = QuboProblem::from_dense(1, vec![1.0], 0.0).unwrap();
        assert!(matches!(
            solve_exhaustive(&p),
            Err(Error::TooFewCategories(1))
        ));
        let p = QuboProblem::from_dense(23, vec![0.0; 23 * 23], 0.0).unwrap();
        assert!(matches!(
            solve_exhaustive(&p),
            Err(Error::TooManyCategories { m: 23, limit: 22 })
        ));
    }

    #[test]
    fn exhaustive_matches_brute_force() {
        let mut rng = SeededRng::new(77);
        for _ in 0..150 {
            let m = 2 + rng.index(11);
            let p = random_problem(&mut rng, m);
            let out = solve_exhaustive(&p).unwrap();
            let bf = brute_force(&p);
            let scale = p.max_abs() * (m * m) as f64;
            assert!(
                (out.objective - bf).abs() <= 1e-9 * scale,
                "{} vs {bf}",
                out.objective
            );
            assert!(!out.q.is_trivial());
            assert!(out.q.0[0]);
        }
    }

    #[test]
    fn gray_walk_drift_guard() {
        let mut rng = SeededRng::new(5);
        let p = random_problem(&mut rng, 14);
        let mut checked = 0;
        let mut step = 0u64;
        gray_walk(&p, u64::MAX, |_, bits, obj| {
            step += 1;
            if step % 64 == 0 {
                let full = p.evaluate(&BinaryAssignment(bits.to_vec()));
                assert!(
                    (obj - full).abs() <= 1e-8 * full.abs().max(1.0),
                    "{obj} vs {full}"
                );
                checked += 1;
            }
        });
        assert!(checked > 100);
    }

    #[test]
    fn anneal_is_deterministic() {
        let mut rng = SeededRng::new(8);
        let p = random_problem(&mut rng, 9);
        let cfg = AnnealConfig {
            seed: 42,
            ..Default::default()
        };
        assert_eq!(
            solve_anneal(&p, &cfg).unwrap(),
            solve_anneal(&p, &cfg).unwrap()
        );
    }

    #[test]
    fn anneal_finds_worked_optimum() {
        let d = worked_node();
        let (aggs, node) = aggregate_categories(&d, &(0..6).collect::<Vec<_>>(), 0).unwrap();
        let v = build_v_matrix(&aggs);
        let p = build_qubo(&v, &aggs, &node, 191.5).unwrap();
        let exact = solve_exhaustive(&p).unwrap();
        for seed in 0..10 {
            let cfg = AnnealConfig {
                seed,
                restarts: 4,
                ..Default::default()
            };
            let out = solve_anneal(&p, &cfg).unwrap();
            assert!((out.objective - exact.objective).abs() < 1e-9);
            assert!(out.q == exact.q || out.q == exact.q.complement());
        }
    }

    #[test]
    fn anneal_config_validation() {
        let p = QuboProblem::from_dense(2, vec![0.0; 4], 0.0).unwrap();
        for bad in [
            AnnealConfig {
                restarts: 0,
                ..Default::default()
            },
            AnnealConfig {
                sweeps: Some(0),
                ..Default::default()
            },
            AnnealConfig {
                t_init: Some(1.0),
                t_final: Some(2.0),
                ..Default::default()
            },
            AnnealConfig {
                t_final: Some(-1.0),
                ..Default::default()
            },
        ] {
            assert!(solve_anneal(&p, &bad).is_err());
        }
    }

    #[test]
    fn dispatch_by_threshold() {
        let mut rng = SeededRng::new(3);
        let cfg = SolverConfig::default();
        let p6 = random_problem(&mut rng, 6);
        assert_eq!(solve(&p6, &cfg).unwrap().method, SolveMethod::Exhaustive);
        let p30 = random_problem(&mut rng, 30);
        let fast = SolverConfig {
            anneal: AnnealConfig {
                sweeps: Some(50),
                restarts: 2,
                ..Default::default()
            },
            ..cfg
        };
        assert_eq!(solve(&p30, &fast).unwrap().method, SolveMethod::Annealing);
        let low = SolverConfig {
            exact_threshold: 4,
            ..fast
        };
        assert_eq!(solve(&p6, &low).unwrap().method, SolveMethod::Annealing);
    }

    #[test]
    fn lex_order_helper() {
        // (1,0,…) < (1,1,…)
        assert!(mask_lex_less(0b01, 0b11));
        assert!(!mask_lex_less(0b11, 0b01));
        assert!(!mask_lex_less(0b01, 0b01));
        // (0,1) < (1,0)
        assert!(mask_lex_less(0b10, 0b01));
    }
}
