//! Acceptance suite. Runs without the libtest harness so that every criterion
//! prints exactly one PASS/FAIL line, even when cargo captures output.

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use qubo_cart::data::{
    generate_datagen, generate_df, ColumnData, ColumnSchema, Dataset, FeatureValue,
    SplitSpecification,
};
use qubo_cart::dinkelbach::{dinkelbach_split, DinkelbachConfig, LambdaInit};
use qubo_cart::pruning::{evaluate_protocol, prune_sequence, ProtocolLabel};
use qubo_cart::qubo::{build_qubo, BinaryAssignment, QuboProblem};
use qubo_cart::rng::SeededRng;
use qubo_cart::solver::{solve_anneal, solve_exhaustive, AnnealConfig, SolverConfig};
use qubo_cart::split::{
    best_categorical_split_exhaustive, best_categorical_split_greedy, best_categorical_split_qubo,
    SplitKind,
};
use qubo_cart::stats::{
    aggregate_categories, build_v_matrix, node_variance, pairwise_variance, NodeStats,
};
use qubo_cart::tree::{GrowConfig, RegressionTree, Routing, TreeNode};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------- oracles

fn sse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum()
}

/// ½ΣΣ(Yi − Yj)² by explicit double loop.
fn half_pair_sum(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += (x - y) * (x - y);
        }
    }
    0.5 * s
}

fn split_groups(groups: &[Vec<f64>], mask: u64) -> (Vec<f64>, Vec<f64>) {
    let (mut l, mut r) = (Vec::new(), Vec::new());
    for (k, g) in groups.iter().enumerate() {
        if mask >> k & 1 == 1 {
            l.extend_from_slice(g);
        } else {
            r.extend_from_slice(g);
        }
    }
    (l, r)
}

/// Minimum of SSE_L + SSE_R over all 2^M − 2 non-trivial masks, and every
/// mask within the tie width of it.
fn brute_force(groups: &[Vec<f64>]) -> (f64, Vec<u64>) {
    let m = groups.len();
    let costs: Vec<(u64, f64)> = (1..(1u64 << m) - 1)
        .map(|mask| {
            let (l, r) = split_groups(groups, mask);
            (mask, sse(&l) + sse(&r))
        })
        .collect();
    let best = costs.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * best.abs().max(1.0);
    let ties = costs
        .iter()
        .filter(|c| c.1 <= best + tol)
        .map(|c| c.0)
        .collect();
    (best, ties)
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

// ---------------------------------------------------------------- instances

struct Instance {
    data: Dataset,
    groups: Vec<Vec<f64>>,
}

/// One categorical column with every one of the `m` categories present.
/// `style` 0: Gaussian around spread means, 1: small integers (many ties),
/// 2: zero-inflated lognormal amounts.
fn random_instance(rng: &mut SeededRng, m: usize, n: usize, style: usize) -> Instance {
    let means: Vec<f64> = (0..m).map(|_| rng.uniform_range(0.0, 1e4)).collect();
    let sd = rng.uniform_range(1.0, 3000.0);
    let mut codes: Vec<u32> = (0..m as u32).collect();
    codes.extend((m..n).map(|_| rng.index(m) as u32));
    let y: Vec<f64> = codes
        .iter()
        .map(|&c| match style {
            0 => means[c as usize] + rng.normal(0.0, sd),
            1 => rng.index(5) as f64,
            _ => {
                if rng.bernoulli(0.6) {
                    0.0
                } else {
                    rng.lognormal((1.0 + means[c as usize]).ln(), 0.8)
                }
            }
        })
        .collect();
    let mut groups = vec![Vec::new(); m];
    for (&c, &v) in codes.iter().zip(&y) {
        groups[c as usize].push(v);
    }
    let labels: Vec<String> = (0..m).map(|k| format!("L{k:02}")).collect();
    let data = Dataset::new(
        vec![ColumnSchema::categorical("C", labels)],
        vec![ColumnData::Categorical(codes)],
        "y",
        y,
    )
    .expect("valid instance");
    Instance { data, groups }
}

fn all_rows(d: &Dataset) -> Vec<usize> {
    (0..d.n_rows()).collect()
}

fn left_mask(kind: &SplitKind) -> u64 {
    match kind {
        SplitKind::Subset { left, .. } => left.iter().fold(0u64, |acc, &c| acc | 1 << c),
        SplitKind::Threshold { .. } => 0,
    }
}

/// The 200 instances shared by criteria 4 and 5.
fn optimality_instances() -> Vec<Instance> {
    let mut rng = SeededRng::new(20240611);
    (0..200)
        .map(|i| {
            let m = 2 + rng.index(11);
            let n = m + rng.index(201 - m);
            random_instance(&mut rng, m, n, i % 3)
        })
        .collect()
}

// ---------------------------------------------------------------- criteria

fn c01_variance_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(1);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let n = 2 + rng.index(199);
        let scale = [1.0, 1e3, 1e5][i % 3];
        let values: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, scale)).collect();
        let fast = node_variance(&NodeStats::from_values(values.iter().copied()))
            .map_err(|e| e.to_string())?;
        let slow = pairwise_variance(&values).map_err(|e| e.to_string())?;
        let e = rel_err(fast, slow);
        check!(e <= 1e-10, "sample {i}: {fast} vs {slow}");
        worst = worst.max(e);
    }
    let secs = start.elapsed().as_secs_f64();
    check!(secs < 1.0, "took {secs:.3} s");
    Ok(format!(
        "1000 samples, max rel err {worst:.1e}, {secs:.3} s"
    ))
}

fn c02_v_matrix() -> Outcome {
    let mut rng = SeededRng::new(2);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let m = 1 + rng.index(8);
        let n = m + rng.index(101 - m);
        let inst = random_instance(&mut rng, m, n, i % 3);
        let (aggs, _) = aggregate_categories(&inst.data, &all_rows(&inst.data), 0)
            .map_err(|e| e.to_string())?;
        let v = build_v_matrix(&aggs);
        for a in 0..m {
            for b in 0..m {
                let naive = half_pair_sum(&inst.groups[a], &inst.groups[b]);
                let e = rel_err(v.get(a, b), naive);
                check!(
                    e <= 1e-10,
                    "node {i} V[{a},{b}] = {} vs {naive}",
                    v.get(a, b)
                );
                worst = worst.max(e);
            }
        }
    }
    Ok(format!("200 nodes, max rel err {worst:.1e}"))
}

fn c03_qubo_equivalence() -> Outcome {
    let mut rng = SeededRng::new(3);
    let mut worst: f64 = 0.0;
    for i in 0..500 {
        let m = 2 + rng.index(9);
        let n = m + rng.index(120);
        let inst = random_instance(&mut rng, m, n, i % 3);
        let (aggs, node) = aggregate_categories(&inst.data, &all_rows(&inst.data), 0)
            .map_err(|e| e.to_string())?;
        let v = build_v_matrix(&aggs);
        let lambda = rng.uniform_range(0.0, 2.0 * node.sse());
        let p = build_qubo(&v, &aggs, &node, lambda).map_err(|e| e.to_string())?;
        let mask = 1 + rng.next_u64() % ((1u64 << m) - 2);
        let q = BinaryAssignment::from_mask(mask, m);

        let (l, r) = split_groups(&inst.groups, mask);
        let (nl, nr) = (l.len() as f64, r.len() as f64);
        let numerator = nr * half_pair_sum(&l, &l) + nl * half_pair_sum(&r, &r);
        let denominator = nl * nr;
        let direct = numerator - lambda * denominator;
        let scale = numerator
            .abs()
            .max(lambda * denominator)
            .max(f64::MIN_POSITIVE);

        let f = p.evaluate(&q);
        let e = (f - direct).abs() / scale;
        check!(e <= 1e-9, "triple {i}: qHq {f} vs n - λd {direct}");
        worst = worst.max(e);
        let f0 = p.evaluate(&BinaryAssignment::zeros(m));
        let f1 = p.evaluate(&BinaryAssignment::ones(m));
        check!(f0 == 0.0, "triple {i}: F(λ,0) = {f0}");
        check!(f1.abs() / scale <= 1e-9, "triple {i}: F(λ,1) = {f1}");
        let fc = p.evaluate(&q.complement());
        check!(
            (fc - f).abs() / scale <= 1e-9,
            "triple {i}: F(q) {f} vs F(1-q) {fc}"
        );
    }
    Ok(format!("500 triples, max scaled err {worst:.1e}"))
}

fn c04_exact_optimality() -> Outcome {
    let start = Instant::now();
    let instances = optimality_instances();
    let mut ties = 0;
    for (i, inst) in instances.iter().enumerate() {
        let rows = all_rows(&inst.data);
        let c = best_categorical_split_qubo(
            &inst.data,
            &rows,
            0,
            &SolverConfig::default(),
            &DinkelbachConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        let (best, minimizers) = brute_force(&inst.groups);
        check!(
            (c.cost - best).abs() <= 1e-9 * best.abs().max(1.0),
            "instance {i}: QUBO cost {} vs brute force {best}",
            c.cost
        );
        let m = inst.groups.len();
        let mask = left_mask(&c.rule.kind);
        let flip = !mask & ((1u64 << m) - 1);
        check!(
            minimizers.contains(&mask) || minimizers.contains(&flip),
            "instance {i}: partition {mask:b} is not a brute-force minimizer"
        );
        if minimizers.len() > 2 {
            ties += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check!(secs < 30.0, "took {secs:.1} s");
    Ok(format!(
        "200 instances ({ties} with tied optima), {secs:.2} s"
    ))
}

fn c05_triple_oracle() -> Outcome {
    let instances = optimality_instances();
    let mut worst: f64 = 0.0;
    for (i, inst) in instances.iter().enumerate() {
        let rows = all_rows(&inst.data);
        let q = best_categorical_split_qubo(
            &inst.data,
            &rows,
            0,
            &SolverConfig::default(),
            &DinkelbachConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        let e =
            best_categorical_split_exhaustive(&inst.data, &rows, 0).map_err(|e| e.to_string())?;
        let g = best_categorical_split_greedy(&inst.data, &rows, 0).map_err(|e| e.to_string())?;
        let tol = 1e-9 * e.cost.abs().max(1.0);
        check!(
            (q.cost - e.cost).abs() <= tol,
            "instance {i}: qubo {} vs exhaustive {}",
            q.cost,
            e.cost
        );
        check!(
            (g.cost - e.cost).abs() <= tol,
            "instance {i}: greedy {} vs exhaustive {}",
            g.cost,
            e.cost
        );
        worst = worst
            .max(rel_err(q.cost, e.cost))
            .max(rel_err(g.cost, e.cost));
    }
    Ok(format!(
        "qubo = exhaustive = greedy on 200 instances, max rel diff {worst:.1e}"
    ))
}

fn trace_ok(records: &[qubo_cart::dinkelbach::IterationRecord]) -> bool {
    records.iter().all(|r| r.lambda_out <= r.lambda_in)
        && records
            .windows(2)
            .all(|w| w[1].lambda_in == w[0].lambda_out)
}

fn c06_convergence() -> Outcome {
    let start = Instant::now();
    let sets = [
        (
            "datagen",
            generate_datagen(10_000, 123).map_err(|e| e.to_string())?,
        ),
        ("df", generate_df(20_000, 123).map_err(|e| e.to_string())?),
    ];
    let mut root_iters = Vec::new();
    let mut node_traces = 0;
    let mut max_node_iters = 0;
    for (name, data) in &sets {
        let rows = all_rows(data);
        for col in ["Brand", "Color"] {
            let c = data.column_index(col).ok_or("missing column")?;
            let (aggs, node) = aggregate_categories(data, &rows, c).map_err(|e| e.to_string())?;
            let v = build_v_matrix(&aggs);
            let out = dinkelbach_split(
                &v,
                &aggs,
                &node,
                &SolverConfig::default(),
                &DinkelbachConfig::default(),
            )
            .map_err(|e| e.to_string())?;
            let k = out.trace.len();
            check!(out.converged, "{name}/{col}: not converged");
            check!(trace_ok(&out.trace.records), "{name}/{col}: λ increased");
            check!(k <= 5, "{name}/{col}: {k} iterations");
            root_iters.push(format!("{name}/{col}={k}"));
        }
        let cfg = GrowConfig {
            max_depth: 5,
            cp: 0.0,
            ..GrowConfig::default()
        };
        let (_, traces) = RegressionTree::grow_traced(data, &cfg).map_err(|e| e.to_string())?;
        for t in &traces {
            check!(
                trace_ok(&t.trace.records),
                "{name} node {} {}: λ increased",
                t.node_id,
                t.variable
            );
            check!(
                t.trace.len() <= 10,
                "{name} node {} {}: {} iterations",
                t.node_id,
                t.variable,
                t.trace.len()
            );
            if t.trace.records.last().is_some_and(|r| r.q.is_trivial()) {
                continue;
            }
            check!(
                t.converged,
                "{name} node {} {}: not converged",
                t.node_id,
                t.variable
            );
            max_node_iters = max_node_iters.max(t.trace.len());
        }
        node_traces += traces.len();
    }
    let secs = start.elapsed().as_secs_f64();
    check!(secs < 10.0, "took {secs:.1} s");
    Ok(format!(
        "root iterations {}; {node_traces} node traces, max {max_node_iters} iterations; {secs:.2} s",
        root_iters.join(" ")
    ))
}

fn zero_init_check(label: &str, data: &Dataset, column: usize) -> Result<usize, String> {
    let rows = all_rows(data);
    let (aggs, node) = aggregate_categories(data, &rows, column).map_err(|e| e.to_string())?;
    let v = build_v_matrix(&aggs);
    let zero = DinkelbachConfig {
        lambda_init: LambdaInit::Zero,
        ..DinkelbachConfig::default()
    };
    let out = dinkelbach_split(&v, &aggs, &node, &SolverConfig::default(), &zero)
        .map_err(|e| e.to_string())?;
    let upper = dinkelbach_split(
        &v,
        &aggs,
        &node,
        &SolverConfig::default(),
        &DinkelbachConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let recs = &out.trace.records;
    check!(recs.len() >= 2, "{label}: trace too short");
    check!(
        recs[0].lambda_in == 0.0,
        "{label}: λ0 = {}",
        recs[0].lambda_in
    );
    check!(
        recs[0].q.bits().iter().all(|&b| !b),
        "{label}: first minimizer {} is not all-zeros",
        recs[0].q
    );
    let ns_var = node.n as f64
        * pairwise_variance(&rows.iter().map(|&i| data.response()[i]).collect::<Vec<_>>())
            .map_err(|e| e.to_string())?;
    check!(
        rel_err(recs[0].lambda_out, ns_var) <= 1e-9,
        "{label}: λ1 = {} vs N·Var = {ns_var}",
        recs[0].lambda_out
    );
    check!(
        recs[1..].iter().all(|r| !r.q.is_trivial()),
        "{label}: trivial vector after iteration 1"
    );
    check!(out.converged, "{label}: not converged");
    check!(
        rel_err(out.lambda_star, upper.lambda_star) <= 1e-12,
        "{label}: λ* {} vs upper-bound start {}",
        out.lambda_star,
        upper.lambda_star
    );
    Ok(recs.len())
}

fn c07_zero_init() -> Outcome {
    let worked = Dataset::new(
        vec![ColumnSchema::categorical("Cat", ["C1", "C2", "C3", "C4"])],
        vec![ColumnData::Categorical(vec![0, 0, 1, 2, 2, 3])],
        "Y",
        vec![0.0, 2.0, 10.0, 12.0, 14.0, 1.0],
    )
    .map_err(|e| e.to_string())?;
    let k0 = zero_init_check("worked node", &worked, 0)?;
    let dg = generate_datagen(10_000, 123).map_err(|e| e.to_string())?;
    let color = dg.column_index("Color").ok_or("missing Color")?;
    let brand = dg.column_index("Brand").ok_or("missing Brand")?;
    let k1 = zero_init_check("datagen Color", &dg, color)?;
    let k2 = zero_init_check("datagen Brand", &dg, brand)?;
    Ok(format!(
        "trivial first minimizer then λ1 = N·Var; iterations worked={k0} Color={k1} Brand={k2}"
    ))
}

fn c08_depth5_parity() -> Outcome {
    let start = Instant::now();
    let mut rows = Vec::new();
    for (name, data) in [
        (
            "datagen",
            generate_datagen(10_000, 123).map_err(|e| e.to_string())?,
        ),
        ("df", generate_df(20_000, 123).map_err(|e| e.to_string())?),
    ] {
        let base = GrowConfig {
            max_depth: 5,
            cp: 0.0,
            ..GrowConfig::default()
        };
        let q = RegressionTree::grow(&data, &base).map_err(|e| e.to_string())?;
        let g = RegressionTree::grow(
            &data,
            &GrowConfig {
                method: qubo_cart::split::CategoricalMethod::Greedy,
                ..base
            },
        )
        .map_err(|e| e.to_string())?;
        let rel = (q.train_mse() - g.train_mse()).abs() / g.train_mse();
        check!(
            q.n_leaves() == g.n_leaves(),
            "{name}: leaves {} vs {}",
            q.n_leaves(),
            g.n_leaves()
        );
        check!(rel < 1e-9, "{name}: relative MSE difference {rel:e}");
        rows.push(format!(
            "{name} leaves {} rel.MSE {:.3}%",
            q.n_leaves(),
            100.0 * rel
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    check!(secs < 60.0, "took {secs:.1} s");
    Ok(format!("{}; {secs:.2} s", rows.join(", ")))
}

/// Leaf SSE sum and leaf count under `node`, treating `collapsed` ids as leaves.
fn branch(node: &TreeNode, collapsed: &BTreeSet<usize>) -> (f64, usize) {
    match &node.split {
        Some(s) if !collapsed.contains(&node.id) => {
            let (a, la) = branch(&s.left, collapsed);
            let (b, lb) = branch(&s.right, collapsed);
            (a + b, la + lb)
        }
        _ => (node.sse, 1),
    }
}

fn live_internal<'a>(node: &'a TreeNode, collapsed: &BTreeSet<usize>, out: &mut Vec<&'a TreeNode>) {
    if let Some(s) = &node.split {
        if !collapsed.contains(&node.id) {
            out.push(node);
            live_internal(&s.left, collapsed, out);
            live_internal(&s.right, collapsed, out);
        }
    }
}

fn c09_pruning() -> Outcome {
    let data = generate_df(3000, 42).map_err(|e| e.to_string())?;
    let tree = RegressionTree::grow(
        &data,
        &GrowConfig {
            max_depth: 10,
            ..GrowConfig::max_tree()
        },
    )
    .map_err(|e| e.to_string())?;
    let seq = prune_sequence(&tree);
    let steps = seq.steps();
    let n = tree.n_train() as f64;
    check!(steps[0].alpha == 0.0, "first α = {}", steps[0].alpha);
    check!(
        steps.last().map(|s| s.leaves) == Some(1),
        "sequence does not end at the root"
    );
    let mut collapsed: BTreeSet<usize> = BTreeSet::new();
    let mut checked = 0;
    for k in 1..steps.len() {
        let s = &steps[k];
        check!(
            k == 1 || s.alpha > steps[k - 1].alpha,
            "α not increasing at step {k}"
        );
        check!(
            s.leaves < steps[k - 1].leaves,
            "subtrees not strictly nested at step {k}"
        );
        check!(
            s.train_risk >= steps[k - 1].train_risk * (1.0 - 1e-12),
            "risk decreased at step {k}"
        );
        // independent weakest-link recomputation on the current subtree
        let mut internal = Vec::new();
        live_internal(tree.root(), &collapsed, &mut internal);
        let g = |t: &TreeNode| {
            let (r_branch, leaves) = branch(t, &collapsed);
            (t.sse / n - r_branch / n) / (leaves - 1) as f64
        };
        let g_min = internal.iter().map(|t| g(t)).fold(f64::INFINITY, f64::min);
        for &id in &s.collapsed {
            let t = internal
                .iter()
                .find(|t| t.id == id)
                .ok_or(format!("step {k}: collapsed node {id} is not internal"))?;
            let (r_branch, leaves) = branch(t, &collapsed);
            let lhs = t.sse / n;
            let rhs = r_branch / n + s.alpha * (leaves - 1) as f64;
            check!(
                rel_err(rhs, lhs) <= 1e-9,
                "step {k} node {id}: R(t) = {lhs} vs R(A) + α(|A|-1) = {rhs}"
            );
            check!(
                rel_err(g(t), g_min) <= 1e-9,
                "step {k} node {id}: g = {} is not the minimum {g_min}",
                g(t)
            );
            checked += 1;
        }
        collapsed.extend(s.collapsed.iter().copied());
    }

    let df = generate_df(20_000, 123).map_err(|e| e.to_string())?;
    let report = evaluate_protocol(&df, &SplitSpecification::default(), &GrowConfig::max_tree())
        .map_err(|e| e.to_string())?;
    let root = report.row(ProtocolLabel::Root);
    let best = report.row(ProtocolLabel::ValidationBest);
    let max = report.row(ProtocolLabel::Max);
    check!(
        root.validation_mse >= best.validation_mse && best.validation_mse <= max.validation_mse,
        "validation MSE ordering root {} best {} max {}",
        root.validation_mse,
        best.validation_mse,
        max.validation_mse
    );
    check!(
        best.leaves * 10 < max.leaves,
        "selected {} leaves vs maximal {}",
        best.leaves,
        max.leaves
    );
    Ok(format!(
        "{} steps, identity at {checked} collapses; protocol leaves root 1 / best {} / max {}",
        steps.len(),
        best.leaves,
        max.leaves
    ))
}

fn c10_routing() -> Outcome {
    // Split on A first; under A = 1 only Blue, Gray, Green and Red occur.
    let colors = ["Black", "Blue", "Gray", "Green", "Red", "White"];
    let mut a = Vec::new();
    let mut color = Vec::new();
    let mut y = Vec::new();
    let mut push = |av: f64, c: usize, v: f64| {
        a.push(av);
        color.push(c as u32);
        y.push(v);
    };
    for c in [0, 1, 4, 5, 0, 1, 4, 5] {
        push(0.0, c, 1.0e6);
    }
    for c in [2, 3, 4, 2, 3, 4] {
        push(1.0, c, 3584.67);
    }
    for _ in 0..2 {
        push(1.0, 1, 60488.0);
    }
    let data = Dataset::new(
        vec![
            ColumnSchema::binary("A"),
            ColumnSchema::categorical("Color", colors),
        ],
        vec![ColumnData::Numeric(a), ColumnData::Categorical(color)],
        "y",
        y,
    )
    .map_err(|e| e.to_string())?;
    let tree = RegressionTree::grow(&data, &GrowConfig::max_tree()).map_err(|e| e.to_string())?;
    let root = tree.root().split.as_ref().ok_or("root is a leaf")?;
    check!(
        root.rule.variable == "A",
        "root splits on {}",
        root.rule.variable
    );

    let majority = RegressionTree::grow(
        &data,
        &GrowConfig {
            routing: Routing::Majority,
            ..GrowConfig::max_tree()
        },
    )
    .map_err(|e| e.to_string())?;
    let black = vec![
        FeatureValue::Number(1.0),
        FeatureValue::Category("Black".into()),
    ];
    let pc = tree.predict_row(&black).map_err(|e| e.to_string())?;
    let pm = majority.predict_row(&black).map_err(|e| e.to_string())?;
    check!(
        rel_err(pc, 60488.0) <= 1e-12 && rel_err(pm, 3584.67) <= 1e-12,
        "Black under A=1: complement {pc}, majority {pm}"
    );

    let covered_c = tree
        .predict_dataset_with(&data, Routing::Complement)
        .map_err(|e| e.to_string())?;
    let covered_m = tree
        .predict_dataset_with(&data, Routing::Majority)
        .map_err(|e| e.to_string())?;
    check!(
        covered_c == covered_m,
        "covered rows differ between routings"
    );
    Ok(format!(
        "unseen Black: complement {pc} vs majority {pm}; {} covered rows identical",
        covered_c.len()
    ))
}

fn node_problem(rng: &mut SeededRng, m: usize) -> Result<QuboProblem, String> {
    let n = m + rng.index(150);
    let style = rng.index(3);
    let inst = random_instance(rng, m, n, style);
    let (aggs, node) =
        aggregate_categories(&inst.data, &all_rows(&inst.data), 0).map_err(|e| e.to_string())?;
    let v = build_v_matrix(&aggs);
    let lambda = rng.uniform_range(0.0, node.sse());
    build_qubo(&v, &aggs, &node, lambda).map_err(|e| e.to_string())
}

fn matches_exact(p: &QuboProblem, exact: f64, cfg: &AnnealConfig) -> Result<bool, String> {
    let a = solve_anneal(p, cfg).map_err(|e| e.to_string())?;
    let scale: f64 = (0..p.m())
        .flat_map(|i| p.row(i).iter().map(|x| x.abs()))
        .sum();
    Ok(a.objective <= exact + 1e-9 * scale.max(f64::MIN_POSITIVE))
}

fn c11_anneal_gate() -> Outcome {
    let mut rng = SeededRng::new(11);
    let cfg = AnnealConfig {
        seed: 7,
        restarts: 8,
        sweeps: None,
        ..AnnealConfig::default()
    };
    let mut failures = Vec::new();
    for i in 0..500 {
        let m = 2 + rng.index(13);
        let p = node_problem(&mut rng, m)?;
        let exact = solve_exhaustive(&p).map_err(|e| e.to_string())?.objective;
        if !matches_exact(&p, exact, &cfg)? {
            failures.push((i, p, exact));
        }
    }
    let hits = 500 - failures.len();
    check!(hits >= 495, "annealing matched {hits}/500");
    let doubled = AnnealConfig {
        restarts: 16,
        ..cfg
    };
    for (i, p, exact) in &failures {
        check!(
            matches_exact(p, *exact, &doubled)?,
            "instance {i} still unmatched with 16 restarts"
        );
    }

    // General dense symmetric instances, reported for information only.
    let mut general = 0;
    for _ in 0..200 {
        let m = 2 + rng.index(13);
        let mut h = vec![0.0; m * m];
        for a in 0..m {
            for b in a..m {
                let x = rng.uniform_range(-1.0, 1.0);
                h[a * m + b] = x;
                h[b * m + a] = x;
            }
        }
        let p = QuboProblem::from_dense(m, h, 0.0).map_err(|e| e.to_string())?;
        let exact = solve_exhaustive(&p).map_err(|e| e.to_string())?.objective;
        general += usize::from(matches_exact(&p, exact, &cfg)?);
    }
    Ok(format!(
        "{hits}/500 matched, {} recovered with 16 restarts (dense random matrices: {general}/200)",
        failures.len()
    ))
}

fn run_cli(bin: &str, threads: usize, dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(bin)
        .args(args)
        .current_dir(dir)
        .env("QUBO_CART_THREADS", threads.to_string())
        .output()
        .map_err(|e| e.to_string())?;
    check!(
        out.status.success(),
        "`{}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

const SCHEMA: &str = "Brand:categorical,Color:categorical,Mileage_km:numeric,HasClaim:binary";

fn pipeline(bin: &str, threads: usize, dir: &Path) -> Result<(), String> {
    let d = ["--response", "ClaimAmount", "--schema", SCHEMA];
    let run = |args: Vec<&str>| run_cli(bin, threads, dir, &args);
    run(vec![
        "generate", "--kind", "df", "--n", "4000", "--seed", "5", "--out", "df.csv",
    ])?;
    run(vec![
        "generate", "--kind", "datagen", "--n", "4000", "--seed", "5", "--out", "dg.csv",
    ])?;
    let mut train = vec!["train", "--data", "df.csv"];
    train.extend(d);
    train.extend([
        "--max-depth",
        "6",
        "--cp",
        "0",
        "--out",
        "m.json",
        "--summary",
        "s.json",
        "--traces",
        "t.csv",
    ]);
    run(train)?;
    let mut anneal = vec!["train", "--data", "dg.csv"];
    anneal.extend(d);
    anneal.extend([
        "--max-depth",
        "4",
        "--exact-threshold",
        "3",
        "--out",
        "ma.json",
        "--traces",
        "ta.csv",
    ]);
    run(anneal)?;
    let mut root = vec!["train", "--data", "df.csv"];
    root.extend(d);
    root.extend(["--max-depth", "0", "--out", "root.json"]);
    run(root)?;
    let mut protocol = vec!["protocol", "--data", "df.csv"];
    protocol.extend(d);
    protocol.extend([
        "--max-depth",
        "12",
        "--out",
        "p.json",
        "--csv",
        "p.csv",
        "--steps",
        "ps.csv",
    ]);
    run(protocol)?;
    let mut trace = vec!["trace", "--data", "dg.csv"];
    trace.extend(d);
    trace.extend(["--column", "Brand", "--out", "tr.csv", "--json", "tr.json"]);
    run(trace)?;
    let mut zero = vec!["trace", "--data", "dg.csv"];
    zero.extend(d);
    zero.extend([
        "--column",
        "Color",
        "--lambda-init",
        "zero",
        "--out",
        "tz.csv",
    ]);
    run(zero)?;
    let mut compare = vec!["compare", "--data", "dg.csv"];
    compare.extend(d);
    compare.extend([
        "--column",
        "Brand",
        "--exact-threshold",
        "4",
        "--out",
        "c.json",
    ]);
    run(compare)?;
    run(vec![
        "predict", "--model", "m.json", "--data", "dg.csv", "--out", "pred.csv",
    ])?;
    run(vec![
        "predict",
        "--model",
        "m.json",
        "--data",
        "dg.csv",
        "--routing",
        "majority",
        "--out",
        "predm.csv",
    ])?;
    run(vec![
        "eval",
        "--model",
        "m.json",
        "--data",
        "dg.csv",
        "--baseline",
        "root.json",
        "--out",
        "e.json",
    ])?;
    Ok(())
}

fn c12_determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_qubo-cart");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut dirs = Vec::new();
    for threads in [1, 2, 8] {
        for rep in 0..2 {
            let dir = tmp.path().join(format!("t{threads}_{rep}"));
            std::fs::create_dir(&dir).map_err(|e| e.to_string())?;
            pipeline(bin, threads, &dir)?;
            dirs.push(dir);
        }
    }
    let list = |d: &Path| -> Result<Vec<String>, String> {
        let mut names: Vec<String> = std::fs::read_dir(d)
            .map_err(|e| e.to_string())?
            .map(|e| {
                e.map(|e| e.file_name().to_string_lossy().into_owned())
                    .map_err(|e| e.to_string())
            })
            .collect::<Result<_, _>>()?;
        names.sort();
        Ok(names)
    };
    let names = list(&dirs[0])?;
    for d in &dirs[1..] {
        check!(
            list(d)? == names,
            "{} produced a different file set",
            d.display()
        );
        for f in &names {
            let a = std::fs::read(dirs[0].join(f)).map_err(|e| e.to_string())?;
            let b = std::fs::read(d.join(f)).map_err(|e| e.to_string())?;
            check!(
                a == b,
                "{f} differs between {} and {}",
                dirs[0].display(),
                d.display()
            );
        }
    }
    Ok(format!(
        "{} output files byte-identical over 2 runs at 1, 2 and 8 threads",
        names.len()
    ))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "variance identity", c01_variance_identity),
        (2, "V-matrix oracle", c02_v_matrix),
        (3, "QUBO / fractional equivalence", c03_qubo_equivalence),
        (4, "exact optimality", c04_exact_optimality),
        (5, "triple-oracle agreement", c05_triple_oracle),
        (6, "convergence behavior", c06_convergence),
        (7, "zero-init replication", c07_zero_init),
        (8, "depth-5 parity", c08_depth5_parity),
        (9, "pruning suite", c09_pruning),
        (10, "routing divergence", c10_routing),
        (11, "annealing quality gate", c11_anneal_gate),
        (12, "CLI determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (k, name, f) in criteria {
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {k:>2} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {k:>2} FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
