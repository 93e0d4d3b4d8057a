use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::json;

use qubo_cart::data::{
    generate_datagen, generate_df, infer_schema, load_csv, load_features, parse_schema_spec,
    ColumnKind, Dataset, SplitSpecification,
};
use qubo_cart::dinkelbach::{dinkelbach_split, DinkelbachConfig, LambdaInit};
use qubo_cart::pruning::evaluate_protocol;
use qubo_cart::solver::SolverConfig;
use qubo_cart::split::{
    best_categorical_split_exhaustive, best_categorical_split_greedy, best_categorical_split_qubo,
    CategoricalMethod, SplitCandidate, SplitKind,
};
use qubo_cart::stats::{aggregate_categories, build_v_matrix};
use qubo_cart::tree::{write_node_traces_csv, GrowConfig, RegressionTree, Routing};

use crate::args::*;

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn log_resolved(args: &impl Serialize, resolved: serde_json::Value) {
    eprintln!(
        "resolved config: {}",
        json!({ "flags": args, "resolved": resolved })
    );
}

pub fn load_data(args: &DataArgs) -> Result<Dataset> {
    let schema = match &args.schema {
        Some(spec) => parse_schema_spec(spec).context("parsing --schema")?,
        None => infer_schema(&args.data, &args.response)
            .with_context(|| format!("inferring schema of {}", args.data.display()))?,
    };
    load_csv(&args.data, &schema, &args.response)
        .with_context(|| format!("loading {}", args.data.display()))
}

fn parse_lambda_init(s: &str) -> Result<LambdaInit> {
    match s {
        "upper" => Ok(LambdaInit::UpperBound),
        "zero" => Ok(LambdaInit::Zero),
        other => other
            .parse::<f64>()
            .map(LambdaInit::Custom)
            .map_err(|_| anyhow!("--lambda-init expects upper, zero or a number, got {other:?}")),
    }
}

pub fn solver_configs(a: &SolverArgs) -> Result<(SolverConfig, DinkelbachConfig)> {
    let mut solver = SolverConfig::default();
    if let Some(t) = a.exact_threshold {
        solver.exact_threshold = t;
    }
    let anneal = &mut solver.anneal;
    if let Some(r) = a.anneal_restarts {
        anneal.restarts = r;
    }
    if a.anneal_sweeps.is_some() {
        anneal.sweeps = a.anneal_sweeps;
    }
    if let Some(s) = a.anneal_seed {
        anneal.seed = s;
    }
    anneal.validate()?;
    let mut dk = DinkelbachConfig::default();
    if let Some(l) = &a.lambda_init {
        dk.lambda_init = parse_lambda_init(l)?;
    }
    if let Some(t) = a.tolerance {
        dk.rel_tolerance = t;
    }
    if let Some(m) = a.max_iterations {
        dk.max_iterations = m;
    }
    dk.validate()?;
    Ok((solver, dk))
}

fn routing(r: RoutingArg) -> Routing {
    match r {
        RoutingArg::Complement => Routing::Complement,
        RoutingArg::Majority => Routing::Majority,
    }
}

pub fn grow_config(a: &GrowArgs, base: GrowConfig) -> Result<GrowConfig> {
    let mut cfg = if a.max_tree {
        GrowConfig::max_tree()
    } else {
        base
    };
    let (solver, dk) = solver_configs(&a.solver)?;
    cfg.solver = solver;
    cfg.dinkelbach = dk;
    if let Some(v) = a.max_depth {
        cfg.max_depth = v;
    }
    if let Some(v) = a.min_split {
        cfg.min_split = v;
    }
    if let Some(v) = a.min_bucket {
        cfg.min_bucket = v;
    }
    if let Some(v) = a.cp {
        cfg.cp = v;
    }
    if let Some(r) = a.routing {
        cfg.routing = routing(r);
    }
    if let Some(m) = a.method {
        cfg.method = match m {
            MethodArg::Qubo => CategoricalMethod::Qubo,
            MethodArg::Exhaustive => CategoricalMethod::Exhaustive,
            MethodArg::Greedy => CategoricalMethod::Greedy,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    log_resolved(a, json!(null));
    let data = match a.kind {
        GeneratorKind::Df => generate_df(a.n, a.seed)?,
        GeneratorKind::Datagen => generate_datagen(a.n, a.seed)?,
    };
    data.save_csv(&a.out)?;
    println!("wrote {} rows to {}", data.n_rows(), a.out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let cfg = grow_config(&a.grow, GrowConfig::default())?;
    log_resolved(a, json!({ "grow": cfg }));
    let data = load_data(&a.data)?;
    let start = Instant::now();
    let (tree, traces) = RegressionTree::grow_traced(&data, &cfg)?;
    let elapsed = start.elapsed();
    tree.save(&a.out)?;
    if let Some(p) = &a.summary {
        write_json(
            p,
            &json!({ "train_mse": tree.train_mse(), "tree": tree.summary() }),
        )?;
    }
    if let Some(p) = &a.traces {
        let mut w = create(p)?;
        write_node_traces_csv(&traces, &mut w)?;
        w.flush()?;
    }
    print!("{}", tree.describe());
    println!(
        "leaves {}  depth {}  train MSE {}  ({:.3} s)",
        tree.n_leaves(),
        tree.depth(),
        tree.train_mse(),
        elapsed.as_secs_f64()
    );
    Ok(())
}

fn parse_fractions(s: &str, seed: u64) -> Result<SplitSpecification> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| anyhow!("--fractions expects three comma-separated numbers, got {s:?}"))?;
    let [train, val, test] = parts[..] else {
        bail!("--fractions expects three values, got {}", parts.len());
    };
    Ok(SplitSpecification::new(train, val, test, seed)?)
}

pub fn protocol(a: &ProtocolArgs) -> Result<()> {
    let spec = parse_fractions(&a.fractions, a.seed)?;
    let cfg = grow_config(&a.grow, GrowConfig::max_tree())?;
    log_resolved(a, json!({ "grow": cfg, "split": spec }));
    let data = load_data(&a.data)?;
    let start = Instant::now();
    let report = evaluate_protocol(&data, &spec, &cfg)?;
    let elapsed = start.elapsed();
    write_json(&a.out, &report)?;
    if let Some(p) = &a.csv {
        let mut w = create(p)?;
        report.write_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(p) = &a.steps {
        let selection = qubo_cart::pruning::SelectionReport {
            evaluations: report.steps.clone(),
            selected: report
                .row(qubo_cart::pruning::ProtocolLabel::ValidationBest)
                .step,
        };
        let mut w = create(p)?;
        selection.write_csv(&mut w)?;
        w.flush()?;
    }
    println!(
        "train {}  validation {}  test {}  pruning steps {}",
        report.n_train,
        report.n_validation,
        report.n_test,
        report.steps.len()
    );
    print!("{}", report.table());
    println!("({:.3} s)", elapsed.as_secs_f64());
    Ok(())
}

fn column_index(data: &Dataset, name: &str) -> Result<usize> {
    let c = data
        .column_index(name)
        .ok_or_else(|| anyhow!("column {name:?} is not a feature of the dataset"))?;
    if data.schema()[c].kind != ColumnKind::Categorical {
        bail!("column {name:?} is not categorical");
    }
    Ok(c)
}

fn labels(data: &Dataset, column: usize, codes: &[u32]) -> Vec<String> {
    codes
        .iter()
        .map(|&c| data.schema()[column].categories[c as usize].clone())
        .collect()
}

pub fn trace(a: &TraceArgs) -> Result<()> {
    let (solver, dk) = solver_configs(&a.solver)?;
    log_resolved(a, json!({ "solver": solver, "dinkelbach": dk }));
    let data = load_data(&a.data)?;
    let col = column_index(&data, &a.column)?;
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    let (aggs, node) = aggregate_categories(&data, &rows, col)?;
    if aggs.len() < 2 {
        bail!("column {:?} has fewer than two categories", a.column);
    }
    let v = build_v_matrix(&aggs);
    let out = dinkelbach_split(&v, &aggs, &node, &solver, &dk)?;

    let mut w = create(&a.out)?;
    out.trace.write_csv(&mut w)?;
    w.flush()?;
    let categories: Vec<String> = aggs
        .iter()
        .map(|g| data.schema()[col].categories[g.category as usize].clone())
        .collect();
    let (left, right): (Vec<_>, Vec<_>) =
        categories.iter().zip(out.q.bits()).partition(|(_, &b)| b);
    let left: Vec<&String> = left.into_iter().map(|(l, _)| l).collect();
    let right: Vec<&String> = right.into_iter().map(|(l, _)| l).collect();
    if let Some(p) = &a.json {
        write_json(
            p,
            &json!({
                "column": a.column,
                "categories": categories,
                "converged": out.converged,
                "lambda_star": out.lambda_star,
                "left": left,
                "right": right,
                "trace": out.trace.to_json_value(),
            }),
        )?;
    }
    println!(
        "column {}  M = {}  categories (q order): {}",
        a.column,
        aggs.len(),
        categories.join(",")
    );
    println!(
        "{:>9} {:>18} {:<28} {:>18} {:>18}",
        "iteration", "lambda_initial", "binary_vector", "score", "lambda_final"
    );
    for r in &out.trace.records {
        println!(
            "{:>9} {:>18} {:<28} {:>18} {:>18}",
            r.iteration,
            r.lambda_in,
            r.q.to_string(),
            r.ratio,
            r.lambda_out
        );
    }
    if out.converged {
        println!(
            "converged: lambda* = {}  left = {:?}  right = {:?}",
            out.lambda_star, left, right
        );
    } else {
        println!("did not converge (constant response or iteration limit)");
    }
    Ok(())
}

#[derive(Serialize)]
struct CompareRow {
    method: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    skipped: Option<String>,
    left: Vec<String>,
    right: Vec<String>,
    cost: Option<f64>,
    iterations: Option<u64>,
}

pub fn compare(a: &CompareArgs) -> Result<()> {
    let (solver, dk) = solver_configs(&a.solver)?;
    log_resolved(a, json!({ "solver": solver, "dinkelbach": dk }));
    let data = load_data(&a.data)?;
    let col = column_index(&data, &a.column)?;
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    let (aggs, _) = aggregate_categories(&data, &rows, col)?;
    let m = aggs.len();

    type Run<'a> = Box<dyn Fn() -> qubo_cart::Result<SplitCandidate> + 'a>;
    let runs: [(&'static str, Run, u64); 3] = [
        (
            "qubo",
            Box::new(|| best_categorical_split_qubo(&data, &rows, col, &solver, &dk)),
            0,
        ),
        (
            "exhaustive",
            Box::new(|| best_categorical_split_exhaustive(&data, &rows, col)),
            (1u64 << (m.min(63) - 1)) - 1,
        ),
        (
            "greedy",
            Box::new(|| best_categorical_split_greedy(&data, &rows, col)),
            m.saturating_sub(1) as u64,
        ),
    ];
    let mut out = Vec::new();
    println!("column {}  M = {}  N = {}", a.column, m, rows.len());
    for (method, run, evaluations) in runs {
        let start = Instant::now();
        let result = run();
        let ms = start.elapsed().as_secs_f64() * 1e3;
        match result {
            Ok(c) => {
                let SplitKind::Subset { left, right } = &c.rule.kind else {
                    unreachable!("categorical split");
                };
                let iterations = match &c.trace {
                    Some(t) => t.len() as u64,
                    None => evaluations,
                };
                let row = CompareRow {
                    method,
                    skipped: None,
                    left: labels(&data, col, left),
                    right: labels(&data, col, right),
                    cost: Some(c.cost),
                    iterations: Some(iterations),
                };
                println!(
                    "{:<11} cost {:<22} iterations {:<8} {:>10.3} ms  left {{{}}}  right {{{}}}",
                    method,
                    c.cost,
                    iterations,
                    ms,
                    row.left.join(","),
                    row.right.join(",")
                );
                out.push(row);
            }
            Err(e @ qubo_cart::Error::TooManyCategories { .. }) => {
                println!("{method:<11} skipped: {e}");
                out.push(CompareRow {
                    method,
                    skipped: Some(e.to_string()),
                    left: Vec::new(),
                    right: Vec::new(),
                    cost: None,
                    iterations: None,
                });
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_json(
        &a.out,
        &json!({ "column": a.column, "m": m, "n": rows.len(), "methods": out }),
    )?;
    Ok(())
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    log_resolved(a, json!(null));
    let tree = RegressionTree::load(&a.model)?;
    let data = load_features(&a.data, tree.schema(), tree.response_name())
        .with_context(|| format!("loading {}", a.data.display()))?;
    let route = a.routing.map(routing).unwrap_or(tree.config().routing);
    let preds = tree.predict_dataset_with(&data, route)?;
    let mut w = create(&a.out)?;
    writeln!(w, "prediction")?;
    for p in &preds {
        writeln!(w, "{p}")?;
    }
    w.flush()?;
    println!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    log_resolved(a, json!(null));
    let tree = RegressionTree::load(&a.model)?;
    let data = load_csv(&a.data, tree.schema(), tree.response_name())
        .with_context(|| format!("loading {}", a.data.display()))?;
    let mse = tree.evaluate_mse(&data)?;
    let mut report = json!({ "n": data.n_rows(), "mse": mse, "leaves": tree.n_leaves() });
    println!(
        "n {}  leaves {}  MSE {}",
        data.n_rows(),
        tree.n_leaves(),
        mse
    );
    if let Some(b) = &a.baseline {
        let base = RegressionTree::load(b)?;
        let base_data = load_csv(&a.data, base.schema(), base.response_name())?;
        let base_mse = base.evaluate_mse(&base_data)?;
        let rel = (mse - base_mse) / base_mse;
        report["baseline_mse"] = json!(base_mse);
        report["relative_mse"] = json!(rel);
        println!(
            "baseline MSE {}  relative MSE {:.3}%",
            base_mse,
            100.0 * rel
        );
    }
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    Ok(())
}
