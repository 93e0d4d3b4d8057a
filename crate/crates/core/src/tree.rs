//! Recursive-partitioning regression tree.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, ColumnKind, ColumnSchema, Dataset, FeatureValue};
use crate::dinkelbach::{DinkelbachConfig, IterationTrace};
use crate::solver::SolverConfig;
use crate::split::{
    select_best, split_candidates, CategoricalMethod, SplitKind, SplitRule, SplitSearchConfig,
};
use crate::stats::NodeStats;
use crate::{Error, Result};

const MODEL_FORMAT: &str = "qubo-cart-tree";
const MODEL_VERSION: u32 = 1;

/// Where a category goes when it was not seen at a node during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Routing {
    /// Anything outside the left set goes right.
    #[default]
    Complement,
    /// Unseen categories follow the child with more training rows.
    Majority,
}

impl std::str::FromStr for Routing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complement" => Ok(Self::Complement),
            "majority" => Ok(Self::Majority),
            other => Err(Error::InvalidArgument(format!("unknown routing {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowConfig {
    pub max_depth: usize,
    /// Nodes with fewer rows are not split.
    pub min_split: usize,
    /// Minimum rows per child.
    pub min_bucket: usize,
    /// Minimum SSE reduction, relative to the root SSE.
    pub cp: f64,
    pub routing: Routing,
    pub method: CategoricalMethod,
    pub solver: SolverConfig,
    pub dinkelbach: DinkelbachConfig,
}

impl Default for GrowConfig {
    fn default() -> Self {
        Self {
            max_depth: 30,
            min_split: 20,
            min_bucket: 7,
            cp: 0.01,
            routing: Routing::Complement,
            method: CategoricalMethod::Qubo,
            solver: SolverConfig::default(),
            dinkelbach: DinkelbachConfig::default(),
        }
    }
}

impl GrowConfig {
    /// Grows until nodes are pure or single-row; the starting point for pruning.
    pub fn max_tree() -> Self {
        Self {
            max_depth: 64,
            min_split: 2,
            min_bucket: 1,
            cp: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_split < 2 {
            return Err(Error::InvalidArgument(
                "min_split must be at least 2".into(),
            ));
        }
        if self.min_bucket < 1 {
            return Err(Error::InvalidArgument(
                "min_bucket must be at least 1".into(),
            ));
        }
        if self.min_split < 2 * self.min_bucket {
            return Err(Error::InvalidArgument(format!(
                "min_split ({}) must be at least twice min_bucket ({})",
                self.min_split, self.min_bucket
            )));
        }
        if !(self.cp >= 0.0 && self.cp.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cp must be a non-negative number, got {}",
                self.cp
            )));
        }
        self.solver.anneal.validate()?;
        self.dinkelbach.validate()
    }

    fn search(&self) -> SplitSearchConfig {
        SplitSearchConfig {
            method: self.method,
            solver: self.solver,
            dinkelbach: self.dinkelbach,
            min_bucket: self.min_bucket,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    /// Preorder index.
    pub id: usize,
    pub n: usize,
    pub prediction: f64,
    pub sse: f64,
    pub depth: usize,
    pub split: Option<Box<Split>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub rule: SplitRule,
    pub cost: f64,
    pub left: TreeNode,
    pub right: TreeNode,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    pub fn n_leaves(&self) -> usize {
        match &self.split {
            None => 1,
            Some(s) => s.left.n_leaves() + s.right.n_leaves(),
        }
    }

    /// Summed SSE of the leaves under this node.
    pub fn subtree_sse(&self) -> f64 {
        match &self.split {
            None => self.sse,
            Some(s) => s.left.subtree_sse() + s.right.subtree_sse(),
        }
    }

    fn preorder<'a>(&'a self, out: &mut Vec<&'a TreeNode>) {
        out.push(self);
        if let Some(s) = &self.split {
            s.left.preorder(out);
            s.right.preorder(out);
        }
    }

    fn renumbered(&self, next: &mut usize, collapse: &BTreeSet<usize>) -> TreeNode {
        let id = *next;
        *next += 1;
        let split = match &self.split {
            Some(s) if !collapse.contains(&self.id) => {
                let left = s.left.renumbered(next, collapse);
                let right = s.right.renumbered(next, collapse);
                Some(Box::new(Split {
                    rule: s.rule.clone(),
                    cost: s.cost,
                    left,
                    right,
                }))
            }
            _ => None,
        };
        TreeNode {
            id,
            n: self.n,
            prediction: self.prediction,
            sse: self.sse,
            depth: self.depth,
            split,
        }
    }
}

/// Dinkelbach trace of one categorical column at one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeTrace {
    pub node_id: usize,
    pub depth: usize,
    pub variable: String,
    pub converged: bool,
    pub trace: IterationTrace,
}

/// One CSV row per Dinkelbach iteration, keyed by node and variable.
pub fn write_node_traces_csv<W: std::io::Write>(traces: &[NodeTrace], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "node_id",
        "depth",
        "variable",
        "converged",
        "iteration",
        "lambda_initial",
        "binary_vector",
        "score",
        "lambda_final",
    ])?;
    for t in traces {
        for r in &t.trace.records {
            wr.write_record([
                t.node_id.to_string(),
                t.depth.to_string(),
                t.variable.clone(),
                t.converged.to_string(),
                r.iteration.to_string(),
                r.lambda_in.to_string(),
                r.q.to_string(),
                r.ratio.to_string(),
                r.lambda_out.to_string(),
            ])?;
        }
    }
    wr.flush().map_err(|source| Error::Io {
        path: "<trace output>".into(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    root: TreeNode,
    schema: Vec<ColumnSchema>,
    response_name: String,
    config: GrowConfig,
    n_train: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    pub id: usize,
    pub depth: usize,
    pub n: usize,
    pub prediction: f64,
    pub sse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSummary {
    pub leaves: usize,
    pub depth: usize,
    pub n_train: usize,
    pub nodes: Vec<NodeSummary>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    n: usize,
    prediction: f64,
    sse: f64,
    depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<SplitRecord>,
}

#[derive(Serialize, Deserialize)]
struct SplitRecord {
    rule: SplitRule,
    cost: f64,
    left: usize,
    right: usize,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    response: String,
    n_train: usize,
    config: GrowConfig,
    schema: Vec<ColumnSchema>,
    nodes: Vec<NodeRecord>,
}

struct Grower<'a> {
    data: &'a Dataset,
    cfg: &'a GrowConfig,
    search: SplitSearchConfig,
    root_sse: f64,
    next_id: usize,
    traces: Vec<NodeTrace>,
}

impl Grower<'_> {
    fn build(&mut self, rows: Vec<usize>, depth: usize) -> TreeNode {
        let stats = NodeStats::from_rows(self.data.response(), &rows);
        let id = self.next_id;
        self.next_id += 1;
        let mut node = TreeNode {
            id,
            n: rows.len(),
            prediction: stats.mean(),
            sse: stats.sse(),
            depth,
            split: None,
        };
        if depth >= self.cfg.max_depth
            || rows.len() < self.cfg.min_split
            || stats.sse() <= 0.0
            || self.root_sse <= 0.0
        {
            return node;
        }
        let candidates = split_candidates(self.data, &rows, &self.search);
        for c in &candidates {
            if let Some(t) = &c.trace {
                self.traces.push(NodeTrace {
                    node_id: id,
                    depth,
                    variable: c.rule.variable.clone(),
                    converged: c.converged,
                    trace: t.clone(),
                });
            }
        }
        let Some(best) = select_best(candidates) else {
            return node;
        };
        let reduction = stats.sse() - best.cost;
        // reductions at rounding level are not real structure
        if reduction <= 1e-12 * stats.sse() || reduction / self.root_sse < self.cfg.cp {
            return node;
        }
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| training_goes_left(self.data, &best.rule, i));
        let left = self.build(left_rows, depth + 1);
        let right = self.build(right_rows, depth + 1);
        node.split = Some(Box::new(Split {
            rule: best.rule,
            cost: best.cost,
            left,
            right,
        }));
        node
    }
}

fn training_goes_left(data: &Dataset, rule: &SplitRule, i: usize) -> bool {
    match (&rule.kind, data.column(rule.column)) {
        (SplitKind::Threshold { threshold }, ColumnData::Numeric(x)) => x[i] < *threshold,
        (SplitKind::Subset { left, .. }, ColumnData::Categorical(c)) => left.contains(&c[i]),
        _ => unreachable!("rule kind matches column kind"),
    }
}

/// A feature value resolved against the tree's own schema.
enum Resolved<'a> {
    Number(f64),
    Code(u32),
    Unknown(&'a str),
}

fn goes_left(split: &Split, value: Resolved<'_>, routing: Routing) -> Result<bool> {
    match (&split.rule.kind, value) {
        (SplitKind::Threshold { threshold }, Resolved::Number(x)) => Ok(x < *threshold),
        (SplitKind::Subset { left, right }, Resolved::Code(c)) => {
            if left.contains(&c) {
                Ok(true)
            } else if right.contains(&c) || routing == Routing::Complement {
                Ok(false)
            } else {
                Ok(split.left.n >= split.right.n)
            }
        }
        (SplitKind::Subset { .. }, Resolved::Unknown(label)) => Err(Error::UnknownCategory {
            column: split.rule.variable.clone(),
            label: label.to_string(),
        }),
        _ => Err(Error::Schema(format!(
            "value type does not match split on {}",
            split.rule.variable
        ))),
    }
}

/// How one tree column is found in a foreign dataset.
enum ColumnLink {
    Missing,
    Numeric(usize),
    /// Data column index and data code → tree code.
    Categorical(usize, Vec<Option<u32>>),
}

impl RegressionTree {
    pub fn grow(data: &Dataset, cfg: &GrowConfig) -> Result<Self> {
        Ok(Self::grow_traced(data, cfg)?.0)
    }

    /// Grows the tree and returns every Dinkelbach trace produced on the way.
    pub fn grow_traced(data: &Dataset, cfg: &GrowConfig) -> Result<(Self, Vec<NodeTrace>)> {
        cfg.validate()?;
        if data.n_rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        let rows: Vec<usize> = (0..data.n_rows()).collect();
        let root_sse = NodeStats::from_rows(data.response(), &rows).sse();
        let mut grower = Grower {
            data,
            cfg,
            search: cfg.search(),
            root_sse,
            next_id: 0,
            traces: Vec::new(),
        };
        let root = grower.build(rows, 0);
        let tree = Self {
            root,
            schema: data.schema().to_vec(),
            response_name: data.response_name().to_string(),
            config: *cfg,
            n_train: data.n_rows(),
        };
        Ok((tree, grower.traces))
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn config(&self) -> &GrowConfig {
        &self.config
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_leaves(&self) -> usize {
        self.root.n_leaves()
    }

    /// Depth of the deepest leaf; a lone root has depth 0.
    pub fn depth(&self) -> usize {
        self.nodes().iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn nodes(&self) -> Vec<&TreeNode> {
        let mut out = Vec::new();
        self.root.preorder(&mut out);
        out
    }

    /// Training-set mean squared error.
    pub fn train_mse(&self) -> f64 {
        self.root.subtree_sse() / self.n_train as f64
    }

    /// Copy with the given nodes turned into leaves and ids renumbered.
    pub fn collapsed(&self, ids: &BTreeSet<usize>) -> Self {
        let mut next = 0;
        Self {
            root: self.root.renumbered(&mut next, ids),
            schema: self.schema.clone(),
            response_name: self.response_name.clone(),
            config: self.config,
            n_train: self.n_train,
        }
    }

    /// Predicts one row laid out in the tree's schema order.
    pub fn predict_row(&self, row: &[FeatureValue]) -> Result<f64> {
        if row.len() != self.schema.len() {
            return Err(Error::Schema(format!(
                "row has {} values, tree expects {}",
                row.len(),
                self.schema.len()
            )));
        }
        self.walk(
            self.config.routing,
            |col| {
                Ok(match &row[col] {
                    FeatureValue::Number(x) => Resolved::Number(*x),
                    FeatureValue::Category(label) => match self.schema[col].category_code(label) {
                        Some(c) => Resolved::Code(c),
                        None => Resolved::Unknown(label),
                    },
                })
            },
            |_| (),
        )
    }

    pub fn predict_dataset(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.predict_dataset_with(data, self.config.routing)
    }

    /// Columns are matched by name and categories by label.
    pub fn predict_dataset_with(&self, data: &Dataset, routing: Routing) -> Result<Vec<f64>> {
        let links = self.link(data)?;
        (0..data.n_rows())
            .map(|i| self.walk(routing, |col| self.resolve(&links, data, col, i), |_| ()))
            .collect()
    }

    /// For every node (preorder), the summed squared error of that node's
    /// prediction over the rows of `data` routed through it.
    pub fn node_squared_errors(&self, data: &Dataset, routing: Routing) -> Result<Vec<f64>> {
        let links = self.link(data)?;
        let nodes = self.nodes();
        let mut acc = vec![0.0; nodes.len()];
        let y = data.response();
        for i in 0..data.n_rows() {
            self.walk(
                routing,
                |col| self.resolve(&links, data, col, i),
                |node| {
                    let e = y[i] - node.prediction;
                    acc[node.id] += e * e;
                },
            )?;
        }
        Ok(acc)
    }

    fn resolve<'d>(
        &self,
        links: &[ColumnLink],
        data: &'d Dataset,
        col: usize,
        i: usize,
    ) -> Result<Resolved<'d>> {
        match &links[col] {
            ColumnLink::Missing => Err(Error::UnknownColumn(self.schema[col].name.clone())),
            ColumnLink::Numeric(j) => Ok(Resolved::Number(data.numeric(*j).expect("numeric")[i])),
            ColumnLink::Categorical(j, map) => {
                let code = data.codes(*j).expect("categorical")[i];
                Ok(match map[code as usize] {
                    Some(c) => Resolved::Code(c),
                    None => Resolved::Unknown(&data.schema()[*j].categories[code as usize]),
                })
            }
        }
    }

    pub fn evaluate_mse(&self, data: &Dataset) -> Result<f64> {
        if data.n_rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        let pred = self.predict_dataset(data)?;
        let sse: f64 = pred
            .iter()
            .zip(data.response())
            .map(|(p, y)| (p - y) * (p - y))
            .sum();
        Ok(sse / data.n_rows() as f64)
    }

    fn walk<'a, F, V>(&self, routing: Routing, mut value: F, mut visit: V) -> Result<f64>
    where
        F: FnMut(usize) -> Result<Resolved<'a>>,
        V: FnMut(&TreeNode),
    {
        let mut node = &self.root;
        visit(node);
        while let Some(split) = &node.split {
            let left = goes_left(split, value(split.rule.column)?, routing)?;
            node = if left { &split.left } else { &split.right };
            visit(node);
        }
        Ok(node.prediction)
    }

    fn link(&self, data: &Dataset) -> Result<Vec<ColumnLink>> {
        self.schema
            .iter()
            .map(|col| {
                let Some(j) = data.column_index(&col.name) else {
                    return Ok(ColumnLink::Missing);
                };
                let theirs = &data.schema()[j];
                match (col.kind, theirs.kind) {
                    (ColumnKind::Categorical, ColumnKind::Categorical) => {
                        let map = theirs
                            .categories
                            .iter()
                            .map(|l| col.category_code(l))
                            .collect();
                        Ok(ColumnLink::Categorical(j, map))
                    }
                    (ColumnKind::Categorical, _) | (_, ColumnKind::Categorical) => {
                        Err(Error::Schema(format!(
                            "column {} has kind {:?} in the data but {:?} in the tree",
                            col.name, theirs.kind, col.kind
                        )))
                    }
                    _ => Ok(ColumnLink::Numeric(j)),
                }
            })
            .collect()
    }

    pub fn summary(&self) -> TreeSummary {
        let nodes = self
            .nodes()
            .into_iter()
            .map(|n| NodeSummary {
                id: n.id,
                depth: n.depth,
                n: n.n,
                prediction: n.prediction,
                sse: n.sse,
                rule: n.split.as_ref().map(|s| s.rule.describe(&self.schema)),
                left: n.split.as_ref().map(|s| s.left.id),
                right: n.split.as_ref().map(|s| s.right.id),
            })
            .collect();
        TreeSummary {
            leaves: self.n_leaves(),
            depth: self.depth(),
            n_train: self.n_train,
            nodes,
        }
    }

    /// Indented text dump, one line per node.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} leaves, depth {}, {} training rows",
            self.n_leaves(),
            self.depth(),
            self.n_train
        );
        self.describe_node(&self.root, "root", &mut out);
        out
    }

    fn describe_node(&self, node: &TreeNode, label: &str, out: &mut String) {
        let pad = "  ".repeat(node.depth);
        let leaf = if node.is_leaf() { " *" } else { "" };
        let _ = writeln!(
            out,
            "{pad}{}) {label} n={} sse={} yval={}{leaf}",
            node.id, node.n, node.sse, node.prediction
        );
        if let Some(s) = &node.split {
            let rule = s.rule.describe(&self.schema);
            self.describe_node(&s.left, &rule, out);
            self.describe_node(&s.right, &format!("not({rule})"), out);
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let nodes = self
            .nodes()
            .into_iter()
            .map(|n| NodeRecord {
                id: n.id,
                n: n.n,
                prediction: n.prediction,
                sse: n.sse,
                depth: n.depth,
                split: n.split.as_ref().map(|s| SplitRecord {
                    rule: s.rule.clone(),
                    cost: s.cost,
                    left: s.left.id,
                    right: s.right.id,
                }),
            })
            .collect();
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            response: self.response_name.clone(),
            n_train: self.n_train,
            config: self.config,
            schema: self.schema.clone(),
            nodes,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
            return Err(Error::Model(format!(
                "unsupported model format {} v{}",
                file.format, file.version
            )));
        }
        let mut records: Vec<Option<NodeRecord>> = Vec::with_capacity(file.nodes.len());
        for (i, r) in file.nodes.into_iter().enumerate() {
            if r.id != i {
                return Err(Error::Model(format!("node {i} has id {}", r.id)));
            }
            records.push(Some(r));
        }
        if records.is_empty() {
            return Err(Error::Model("model has no nodes".into()));
        }
        let root = rebuild(&mut records, 0, &file.schema)?;
        if records.iter().any(Option::is_some) {
            return Err(Error::Model("unreachable nodes in model".into()));
        }
        Ok(Self {
            root,
            schema: file.schema,
            response_name: file.response,
            config: file.config,
            n_train: file.n_train,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

fn rebuild(
    records: &mut [Option<NodeRecord>],
    id: usize,
    schema: &[ColumnSchema],
) -> Result<TreeNode> {
    let r = records
        .get_mut(id)
        .and_then(Option::take)
        .ok_or_else(|| Error::Model(format!("node {id} missing or referenced twice")))?;
    let split = match r.split {
        None => None,
        Some(s) => {
            let col = schema.get(s.rule.column).ok_or_else(|| {
                Error::Model(format!("node {id} references column {}", s.rule.column))
            })?;
            let kind_ok = matches!(
                (&s.rule.kind, col.kind),
                (SplitKind::Subset { .. }, ColumnKind::Categorical)
                    | (
                        SplitKind::Threshold { .. },
                        ColumnKind::Numeric | ColumnKind::Binary
                    )
            );
            if !kind_ok || col.name != s.rule.variable {
                return Err(Error::Model(format!(
                    "node {id} rule does not match column {}",
                    col.name
                )));
            }
            if s.left <= id || s.right <= id {
                return Err(Error::Model(format!(
                    "node {id} children are not in preorder"
                )));
            }
            let left = rebuild(records, s.left, schema)?;
            let right = rebuild(records, s.right, schema)?;
            Some(Box::new(Split {
                rule: s.rule,
                cost: s.cost,
                left,
                right,
            }))
        }
    };
    Ok(TreeNode {
        id: r.id,
        n: r.n,
        prediction: r.prediction,
        sse: r.sse,
        depth: r.depth,
        split,
    })
}
