use proptest::prelude::*;
use qubo_cart::data::{generate_datagen, generate_df, ColumnData, ColumnSchema, Dataset};
use qubo_cart::split::{CategoricalMethod, SplitKind};
use qubo_cart::tree::{GrowConfig, RegressionTree, Routing};

fn depth(d: usize) -> GrowConfig {
    GrowConfig {
        max_depth: d,
        cp: 0.0,
        ..GrowConfig::default()
    }
}

#[test]
fn df_first_split_isolates_claim_free_policies() {
    let data = generate_df(20_000, 123).unwrap();
    let tree = RegressionTree::grow(&data, &depth(5)).unwrap();
    let split = tree.root().split.as_ref().expect("root splits");
    assert_eq!(split.rule.variable, "HasClaim");
    assert!(matches!(split.rule.kind, SplitKind::Threshold { threshold } if threshold == 0.5));
    assert!(split.left.is_leaf());
    assert_eq!(split.left.prediction, 0.0);
}

#[test]
fn training_error_does_not_grow_with_depth() {
    let data = generate_datagen(5000, 9).unwrap();
    let mut last = f64::INFINITY;
    for d in 0..=7 {
        let mse = RegressionTree::grow(&data, &depth(d)).unwrap().train_mse();
        assert!(mse <= last * (1.0 + 1e-12), "depth {d}: {mse} > {last}");
        last = mse;
    }
}

#[test]
fn model_files_round_trip() {
    let data = generate_df(4000, 3).unwrap();
    let tree = RegressionTree::grow(&data, &depth(6)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    tree.save(&path).unwrap();
    let back = RegressionTree::load(&path).unwrap();
    assert_eq!(back.n_leaves(), tree.n_leaves());
    let a = tree.predict_dataset(&data).unwrap();
    let b = back.predict_dataset(&data).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(back.to_json().unwrap(), tree.to_json().unwrap());
}

#[test]
fn methods_agree_on_generated_data() {
    let data = generate_datagen(3000, 77).unwrap();
    let mut mses = Vec::new();
    for method in [
        CategoricalMethod::Qubo,
        CategoricalMethod::Exhaustive,
        CategoricalMethod::Greedy,
    ] {
        let cfg = GrowConfig { method, ..depth(4) };
        mses.push(RegressionTree::grow(&data, &cfg).unwrap().train_mse());
    }
    assert!((mses[0] - mses[1]).abs() <= 1e-9 * mses[1]);
    assert!((mses[0] - mses[2]).abs() <= 1e-9 * mses[2]);
}

fn dataset(codes: Vec<u32>, x: Vec<f64>, y: Vec<f64>, m: usize) -> Dataset {
    let labels: Vec<String> = (0..m).map(|k| format!("c{k}")).collect();
    Dataset::new(
        vec![
            ColumnSchema::categorical("C", labels),
            ColumnSchema::numeric("x"),
        ],
        vec![ColumnData::Categorical(codes), ColumnData::Numeric(x)],
        "y",
        y,
    )
    .unwrap()
}

fn rows(max_rows: usize) -> impl Strategy<Value = (usize, Vec<(u32, f64, f64)>)> {
    (2usize..7).prop_flat_map(move |m| {
        (
            Just(m),
            prop::collection::vec((0..m as u32, 0.0f64..10.0, 0.0f64..100.0), 4..max_rows),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn leaf_means_preserve_the_response_total((m, r) in rows(60)) {
        let data = dataset(r.iter().map(|t| t.0).collect(), r.iter().map(|t| t.1).collect(), r.iter().map(|t| t.2).collect(), m);
        let tree = RegressionTree::grow(&data, &GrowConfig::max_tree()).unwrap();
        let pred: f64 = tree.predict_dataset(&data).unwrap().iter().sum();
        let total: f64 = data.response().iter().sum();
        prop_assert!((pred - total).abs() <= 1e-9 * total.abs().max(1.0));
    }

    #[test]
    fn routings_agree_on_training_rows((m, r) in rows(60)) {
        let data = dataset(r.iter().map(|t| t.0).collect(), r.iter().map(|t| t.1).collect(), r.iter().map(|t| t.2).collect(), m);
        let tree = RegressionTree::grow(&data, &GrowConfig { max_depth: 4, ..GrowConfig::max_tree() }).unwrap();
        let a = tree.predict_dataset_with(&data, Routing::Complement).unwrap();
        let b = tree.predict_dataset_with(&data, Routing::Majority).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn categorical_max_tree_reaches_within_category_error((m, r) in rows(50)) {
        let codes: Vec<u32> = r.iter().map(|t| t.0).collect();
        let y: Vec<f64> = r.iter().map(|t| t.2).collect();
        let labels: Vec<String> = (0..m).map(|k| format!("c{k}")).collect();
        let data = Dataset::new(
            vec![ColumnSchema::categorical("C", labels)],
            vec![ColumnData::Categorical(codes.clone())],
            "y",
            y.clone(),
        ).unwrap();
        let tree = RegressionTree::grow(&data, &GrowConfig::max_tree()).unwrap();
        let mut within = 0.0;
        for c in 0..m as u32 {
            let g: Vec<f64> = codes.iter().zip(&y).filter(|p| *p.0 == c).map(|p| *p.1).collect();
            if !g.is_empty() {
                let mean = g.iter().sum::<f64>() / g.len() as f64;
                within += g.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
            }
        }
        let got = tree.train_mse() * y.len() as f64;
        prop_assert!((got - within).abs() <= 1e-9 * within.max(1.0), "{} vs {}", got, within);
    }
}
