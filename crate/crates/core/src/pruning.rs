//! Cost-complexity pruning and the train / validation / test selection protocol.
//!
//! Risk is R(T) = Σ_leaves SSE / N_train. The weakest link of a subtree is the
//! internal node with the smallest g(t) = (R(t) − R(T_t)) / (|T_t| − 1).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{partition, Dataset, SplitSpecification};
use crate::tree::{GrowConfig, RegressionTree};
use crate::Result;

/// Relative width within which weakest links are collapsed together.
const LINK_TIE_REL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneStep {
    pub alpha: f64,
    pub leaves: usize,
    /// R(T) of the subtree after this step.
    pub train_risk: f64,
    /// Original node ids collapsed at this step.
    pub collapsed: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PruneSequence {
    tree: RegressionTree,
    steps: Vec<PruneStep>,
}

impl PruneSequence {
    pub fn tree(&self) -> &RegressionTree {
        &self.tree
    }

    pub fn steps(&self) -> &[PruneStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Subtree after step `k`; step 0 is the unpruned tree.
    pub fn tree_at(&self, k: usize) -> RegressionTree {
        let ids: BTreeSet<usize> = self.steps[..=k]
            .iter()
            .flat_map(|s| s.collapsed.iter().copied())
            .collect();
        self.tree.collapsed(&ids)
    }
}

struct Flat {
    children: Vec<Option<(usize, usize)>>,
    sse: Vec<f64>,
}

impl Flat {
    fn new(tree: &RegressionTree) -> Self {
        let nodes = tree.nodes();
        Self {
            children: nodes
                .iter()
                .map(|n| n.split.as_ref().map(|s| (s.left.id, s.right.id)))
                .collect(),
            sse: nodes.iter().map(|n| n.sse).collect(),
        }
    }

    /// Leaf SSE sum and leaf count under each node, given collapsed flags.
    fn subtree_totals(&self, collapsed: &[bool]) -> (Vec<f64>, Vec<usize>) {
        let k = self.sse.len();
        let (mut risk, mut leaves) = (vec![0.0; k], vec![0; k]);
        // children always carry larger preorder ids
        for t in (0..k).rev() {
            match self.children[t] {
                Some((l, r)) if !collapsed[t] => {
                    risk[t] = risk[l] + risk[r];
                    leaves[t] = leaves[l] + leaves[r];
                }
                _ => {
                    risk[t] = self.sse[t];
                    leaves[t] = 1;
                }
            }
        }
        (risk, leaves)
    }

    /// Internal nodes still reachable from the root.
    fn live_internal(&self, collapsed: &[bool]) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0];
        while let Some(t) = stack.pop() {
            if let Some((l, r)) = self.children[t] {
                if !collapsed[t] {
                    out.push(t);
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        out
    }
}

pub fn prune_sequence(tree: &RegressionTree) -> PruneSequence {
    let flat = Flat::new(tree);
    let n_train = tree.n_train() as f64;
    let mut collapsed = vec![false; flat.sse.len()];
    let (risk, leaves) = flat.subtree_totals(&collapsed);
    let mut steps = vec![PruneStep {
        alpha: 0.0,
        leaves: leaves[0],
        train_risk: risk[0] / n_train,
        collapsed: Vec::new(),
    }];
    loop {
        let internal = flat.live_internal(&collapsed);
        if internal.is_empty() {
            break;
        }
        let (risk, leaves) = flat.subtree_totals(&collapsed);
        let g: Vec<(usize, f64)> = internal
            .iter()
            .map(|&t| {
                (
                    t,
                    (flat.sse[t] - risk[t]) / (n_train * (leaves[t] - 1) as f64),
                )
            })
            .collect();
        let g_min = g.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
        let cut = g_min + LINK_TIE_REL * g_min.abs();
        let mut ids: Vec<usize> = g
            .iter()
            .filter(|&&(_, v)| v <= cut)
            .map(|&(t, _)| t)
            .collect();
        ids.sort_unstable();
        for &t in &ids {
            collapsed[t] = true;
        }
        let (risk, leaves) = flat.subtree_totals(&collapsed);
        let prev = steps.last().expect("non-empty").alpha;
        steps.push(PruneStep {
            alpha: g_min.max(prev),
            leaves: leaves[0],
            train_risk: risk[0] / n_train,
            collapsed: ids,
        });
    }
    PruneSequence {
        tree: tree.clone(),
        steps,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEvaluation {
    pub step: usize,
    pub alpha: f64,
    pub leaves: usize,
    pub train_mse: f64,
    pub validation_mse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub evaluations: Vec<StepEvaluation>,
    /// Index into `evaluations` with the lowest validation MSE.
    pub selected: usize,
}

fn csv_io(source: std::io::Error) -> crate::Error {
    crate::Error::Io {
        path: "<csv output>".into(),
        source,
    }
}

impl SelectionReport {
    /// One CSV row per pruning step; `selected` marks the validation choice.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "step",
            "alpha",
            "leaves",
            "train_mse",
            "validation_mse",
            "test_mse",
            "selected",
        ])?;
        for e in &self.evaluations {
            wr.write_record([
                e.step.to_string(),
                e.alpha.to_string(),
                e.leaves.to_string(),
                e.train_mse.to_string(),
                e.validation_mse.to_string(),
                e.test_mse.map(|v| v.to_string()).unwrap_or_default(),
                u8::from(e.step == self.selected).to_string(),
            ])?;
        }
        wr.flush().map_err(csv_io)
    }
}

/// Index minimizing `key`; exact ties go to the subtree with fewer leaves.
fn argmin_by_leaves(evals: &[StepEvaluation], key: impl Fn(&StepEvaluation) -> f64) -> usize {
    (0..evals.len())
        .min_by(|&a, &b| {
            key(&evals[a])
                .total_cmp(&key(&evals[b]))
                .then(evals[a].leaves.cmp(&evals[b].leaves))
        })
        .expect("non-empty sequence")
}

/// MSE of every subtree in the sequence, from one pass over the rows.
pub fn step_mses(seq: &PruneSequence, data: &Dataset) -> Result<Vec<f64>> {
    if data.n_rows() == 0 {
        return Err(crate::Error::EmptyDataset);
    }
    let tree = seq.tree();
    let node_err = tree.node_squared_errors(data, tree.config().routing)?;
    let flat = Flat::new(tree);
    let mut collapsed = vec![false; node_err.len()];
    let n = data.n_rows() as f64;
    let mut out = Vec::with_capacity(seq.len());
    for step in seq.steps() {
        for &t in &step.collapsed {
            collapsed[t] = true;
        }
        let mut total = 0.0;
        let mut stack = vec![0];
        while let Some(t) = stack.pop() {
            match flat.children[t] {
                Some((l, r)) if !collapsed[t] => {
                    stack.push(r);
                    stack.push(l);
                }
                _ => total += node_err[t],
            }
        }
        out.push(total / n);
    }
    Ok(out)
}

pub fn select_subtree(
    seq: &PruneSequence,
    validation: &Dataset,
    test: Option<&Dataset>,
) -> Result<SelectionReport> {
    let val = step_mses(seq, validation)?;
    let test = test.map(|d| step_mses(seq, d)).transpose()?;
    let evaluations: Vec<StepEvaluation> = seq
        .steps()
        .iter()
        .enumerate()
        .map(|(k, s)| StepEvaluation {
            step: k,
            alpha: s.alpha,
            leaves: s.leaves,
            train_mse: s.train_risk,
            validation_mse: val[k],
            test_mse: test.as_ref().map(|t| t[k]),
        })
        .collect();
    let selected = argmin_by_leaves(&evaluations, |e| e.validation_mse);
    Ok(SelectionReport {
        evaluations,
        selected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolLabel {
    Root,
    ValidationBest,
    TestBest,
    Max,
}

impl std::fmt::Display for ProtocolLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Root => "Root",
            Self::ValidationBest => "ValidationBest",
            Self::TestBest => "TestBest",
            Self::Max => "Max",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRow {
    pub label: ProtocolLabel,
    pub step: usize,
    pub alpha: f64,
    pub leaves: usize,
    pub train_mse: f64,
    pub validation_mse: f64,
    pub test_mse: f64,
    /// (test MSE − root test MSE) / root test MSE.
    pub relative_test_mse: f64,
    /// Chosen by looking at the test set; never a model-selection result.
    pub diagnostic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    pub split: SplitSpecification,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub rows: Vec<ProtocolRow>,
    pub steps: Vec<StepEvaluation>,
}

impl ProtocolReport {
    pub fn row(&self, label: ProtocolLabel) -> &ProtocolRow {
        self.rows
            .iter()
            .find(|r| r.label == label)
            .expect("all labels present")
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "tree",
            "step",
            "alpha",
            "leaves",
            "train_mse",
            "validation_mse",
            "test_mse",
            "relative_test_mse",
            "diagnostic",
        ])?;
        for r in &self.rows {
            wr.write_record([
                r.label.to_string(),
                r.step.to_string(),
                r.alpha.to_string(),
                r.leaves.to_string(),
                r.train_mse.to_string(),
                r.validation_mse.to_string(),
                r.test_mse.to_string(),
                r.relative_test_mse.to_string(),
                r.diagnostic.to_string(),
            ])?;
        }
        wr.flush().map_err(csv_io)
    }

    /// Fixed-width table for terminals.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<15} {:>6} {:>14} {:>16} {:>16} {:>16} {:>9}\n",
            "subtree", "leaves", "alpha", "train_mse", "validation_mse", "test_mse", "rel_test"
        );
        for r in &self.rows {
            let label = if r.diagnostic {
                format!("{}*", r.label)
            } else {
                r.label.to_string()
            };
            out.push_str(&format!(
                "{:<15} {:>6} {:>14.6e} {:>16.6e} {:>16.6e} {:>16.6e} {:>8.3}%\n",
                label,
                r.leaves,
                r.alpha,
                r.train_mse,
                r.validation_mse,
                r.test_mse,
                100.0 * r.relative_test_mse
            ));
        }
        out.push_str("* selected on the test set, diagnostic only\n");
        out
    }
}

/// Partition, grow on train, prune, select on validation, report on test.
pub fn evaluate_protocol(
    data: &Dataset,
    spec: &SplitSpecification,
    cfg: &GrowConfig,
) -> Result<ProtocolReport> {
    let (train, validation, test) = partition(data, spec)?;
    let tree = RegressionTree::grow(&train, cfg)?;
    let seq = prune_sequence(&tree);
    let report = select_subtree(&seq, &validation, Some(&test))?;
    let evals = report.evaluations;
    let test_of = |e: &StepEvaluation| e.test_mse.expect("test set supplied");
    let root = evals.len() - 1;
    let root_test = test_of(&evals[root]);
    let test_best = argmin_by_leaves(&evals, test_of);
    let rows = [
        (ProtocolLabel::Root, root, false),
        (ProtocolLabel::ValidationBest, report.selected, false),
        (ProtocolLabel::TestBest, test_best, true),
        (ProtocolLabel::Max, 0, false),
    ]
    .into_iter()
    .map(|(label, k, diagnostic)| {
        let e = &evals[k];
        ProtocolRow {
            label,
            step: k,
            alpha: e.alpha,
            leaves: e.leaves,
            train_mse: e.train_mse,
            validation_mse: e.validation_mse,
            test_mse: test_of(e),
            relative_test_mse: (test_of(e) - root_test) / root_test,
            diagnostic,
        }
    })
    .collect();
    Ok(ProtocolReport {
        split: *spec,
        n_train: train.n_rows(),
        n_validation: validation.n_rows(),
        n_test: test.n_rows(),
        rows,
        steps: evals,
    })
}
