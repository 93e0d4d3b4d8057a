//! Node sufficient statistics and the pairwise V-matrix.
//!
//! For categories α, β at a node,
//! `V[α][β] = ½ Σ_{i∈α} Σ_{j∈β} (y_i − y_j)²`. Expanding around the category
//! means gives the O(M²) form used here:
//! `V[α][β] = ½ (N_β·M2_α + N_α·M2_β + N_α·N_β·(μ_α − μ_β)²)`,
//! where `M2` is the within-category sum of squared deviations.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::{Error, Result};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NodeStats {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
    /// Σ (y − ȳ)², computed two-pass.
    pub m2: f64,
}

impl NodeStats {
    pub fn from_values<I>(values: I) -> Self
    where
        I: IntoIterator<Item = f64>,
        I::IntoIter: Clone,
    {
        let it = values.into_iter();
        let mut n = 0usize;
        let mut sum = CompensatedSum::default();
        let mut sum_sq = CompensatedSum::default();
        for y in it.clone() {
            n += 1;
            sum.add(y);
            sum_sq.add(y * y);
        }
        if n == 0 {
            return Self::default();
        }
        let mean = sum.value() / n as f64;
        let m2: CompensatedSum = it.map(|y| (y - mean) * (y - mean)).collect();
        Self {
            n,
            sum: sum.value(),
            sum_sq: sum_sq.value(),
            m2: m2.value(),
        }
    }

    pub fn from_rows(response: &[f64], rows: &[usize]) -> Self {
        Self::from_values(rows.iter().map(|&i| response[i]))
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }

    /// Population variance, clamped at zero; 0 for an empty node.
    pub fn variance(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).max(0.0)
        }
    }

    /// N·Var, the node's sum of squared errors around its mean.
    pub fn sse(&self) -> f64 {
        self.m2.max(0.0)
    }
}

pub fn node_variance(stats: &NodeStats) -> Result<f64> {
    if stats.n == 0 {
        return Err(Error::InvalidArgument("variance of an empty node".into()));
    }
    Ok(stats.variance())
}

/// `(1 / 2N²) ΣᵢΣⱼ (yᵢ − yⱼ)²`, the mean-free form of the variance.
/// Quadratic in N; kept as an independent check on [`node_variance`].
pub fn pairwise_variance(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("variance of an empty sample".into()));
    }
    let mut acc = CompensatedSum::default();
    for &a in values {
        for &b in values {
            acc.add((a - b) * (a - b));
        }
    }
    let n = values.len() as f64;
    Ok(acc.value() / (2.0 * n * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryAggregate {
    /// Code of the category in the column schema.
    pub category: u32,
    pub stats: NodeStats,
}

impl CategoryAggregate {
    pub fn n_alpha(&self) -> usize {
        self.stats.n
    }

    pub fn s_alpha(&self) -> f64 {
        self.stats.sum
    }

    pub fn q_alpha_sq(&self) -> f64 {
        self.stats.sum_sq
    }
}

/// Per-category statistics for the categories present among `rows`, in
/// ascending code order, plus the statistics of the whole node.
pub fn aggregate_categories(
    data: &Dataset,
    rows: &[usize],
    column: usize,
) -> Result<(Vec<CategoryAggregate>, NodeStats)> {
    let codes = data
        .codes(column)
        .ok_or_else(|| Error::NotCategorical(data.schema()[column].name.clone()))?;
    if rows.is_empty() {
        return Err(Error::InvalidArgument("empty node".into()));
    }
    let y = data.response();
    let m = data.schema()[column].categories.len();
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); m];
    for &i in rows {
        members[codes[i] as usize].push(y[i]);
    }
    let aggs = members
        .into_iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(k, v)| CategoryAggregate {
            category: k as u32,
            stats: NodeStats::from_values(v.iter().copied()),
        })
        .collect();
    Ok((aggs, NodeStats::from_rows(y, rows)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VMatrix {
    m: usize,
    v: Vec<f64>,
}

impl VMatrix {
    pub fn from_dense(m: usize, v: Vec<f64>) -> Self {
        assert_eq!(v.len(), m * m);
        Self { m, v }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.v[a * self.m + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.v[a * self.m..(a + 1) * self.m]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.m)
            .map(|a| {
                self.row(a)
                    .iter()
                    .copied()
                    .collect::<CompensatedSum>()
                    .value()
            })
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.v.iter().copied().collect::<CompensatedSum>().value()
    }
}

pub fn build_v_matrix(aggs: &[CategoryAggregate]) -> VMatrix {
    let m = aggs.len();
    let mut v = vec![0.0; m * m];
    for a in 0..m {
        let sa = &aggs[a].stats;
        let (na, ma) = (sa.n as f64, sa.mean());
        v[a * m + a] = na * sa.sse();
        for b in (a + 1)..m {
            let sb = &aggs[b].stats;
            let (nb, mb) = (sb.n as f64, sb.mean());
            let d = ma - mb;
            let val = 0.5 * (nb * sa.sse() + na * sb.sse() + na * nb * d * d);
            v[a * m + b] = val;
            v[b * m + a] = val;
        }
    }
    VMatrix { m, v }
}
