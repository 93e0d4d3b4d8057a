//! The parametric split QUBO and the fractional parts of the split cost.
//!
//! With `q_α = 1` meaning "category α goes left", the split cost
//! `R(q) = N_L·Var_L + N_R·Var_R` equals `n(q) / d(q)` where
//! `d(q) = N_L·N_R` and `n(q) = N_R·Σ_{α,β∈L} V + N_L·Σ_{α,β∈R} V`.
//! For fixed λ, `F(λ, q) = n(q) − λ·d(q)` is a quadratic form `qᵀHq` with
//!
//! ```text
//! Q[α][β] = N_S·V[α][β] − N_β·r_α − N_α·r_β + λ·N_α·N_β     (r_α = Σ_γ V[α][γ])
//! L[α]    = (N_S²·Var_S − N_S·λ)·N_α
//! H       = Q + diag(L)
//! ```

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::stats::{CategoryAggregate, NodeStats, VMatrix};
use crate::{Error, Result};

/// Left-membership bits, one per category present at the node.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinaryAssignment(pub Vec<bool>);

impl BinaryAssignment {
    pub fn zeros(m: usize) -> Self {
        Self(vec![false; m])
    }

    pub fn ones(m: usize) -> Self {
        Self(vec![true; m])
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        Self(bits.iter().map(|&b| b != 0).collect())
    }

    /// Bit `i` of `mask` becomes entry `i`.
    pub fn from_mask(mask: u64, m: usize) -> Self {
        Self((0..m).map(|i| mask >> i & 1 == 1).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_trivial(&self) -> bool {
        self.0.iter().all(|&b| b) || self.0.iter().all(|&b| !b)
    }

    pub fn complement(&self) -> Self {
        Self(self.0.iter().map(|&b| !b).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }
}

impl fmt::Display for BinaryAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, &b) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", b as u8)?;
        }
        write!(f, ")")
    }
}

/// Symmetric M×M matrix, row-major, linear terms folded onto the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuboProblem {
    m: usize,
    h: Vec<f64>,
    lambda: f64,
}

impl QuboProblem {
    /// Wraps an arbitrary dense matrix. It is symmetrized as `(H + Hᵀ)/2`.
    pub fn from_dense(m: usize, h: Vec<f64>, lambda: f64) -> Result<Self> {
        if h.len() != m * m {
            return Err(Error::InvalidArgument(format!(
                "matrix has {} entries, expected {}",
                h.len(),
                m * m
            )));
        }
        let mut sym = h.clone();
        for a in 0..m {
            for b in (a + 1)..m {
                let s = 0.5 * (h[a * m + b] + h[b * m + a]);
                sym[a * m + b] = s;
                sym[b * m + a] = s;
            }
        }
        Ok(Self { m, h: sym, lambda })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.h[a * self.m + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.h[a * self.m..(a + 1) * self.m]
    }

    pub fn max_abs(&self) -> f64 {
        self.h.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    /// qᵀHq.
    pub fn evaluate(&self, q: &BinaryAssignment) -> f64 {
        assert_eq!(q.len(), self.m, "assignment length mismatch");
        let on: Vec<usize> = (0..self.m).filter(|&i| q.0[i]).collect();
        let mut total = 0.0;
        for &a in &on {
            let row = self.row(a);
            total += on.iter().map(|&b| row[b]).sum::<f64>();
        }
        total
    }

    /// Plain-text triplets: a `# m lambda` header, then one `row col coef`
    /// line per upper-triangular entry (0-based), where off-diagonal
    /// coefficients are doubled so that the objective is Σ coef·q_row·q_col.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# {} {}", self.m, self.lambda)?;
        for a in 0..self.m {
            for b in a..self.m {
                let c = if a == b {
                    self.get(a, a)
                } else {
                    2.0 * self.get(a, b)
                };
                if c != 0.0 {
                    writeln!(w, "{a} {b} {c}")?;
                }
            }
        }
        Ok(())
    }

    pub fn read_triplets<R: BufRead>(r: R) -> Result<Self> {
        let bad = |msg: String| Error::InvalidArgument(format!("triplet input: {msg}"));
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("missing header".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let mut parts = header.trim_start_matches('#').split_whitespace();
        let m: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("bad header {header:?}")))?;
        let lambda: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(format!("bad header {header:?}")))?;
        let mut h = vec![0.0; m * m];
        for line in lines {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad(format!("bad line {line:?}")));
            }
            let a: usize = f[0].parse().map_err(|_| bad(line.clone()))?;
            let b: usize = f[1].parse().map_err(|_| bad(line.clone()))?;
            let c: f64 = f[2].parse().map_err(|_| bad(line.clone()))?;
            if a >= m || b >= m {
                return Err(bad(format!("index out of range in {line:?}")));
            }
            if a == b {
                h[a * m + a] += c;
            } else {
                h[a * m + b] += 0.5 * c;
                h[b * m + a] += 0.5 * c;
            }
        }
        Ok(Self { m, h, lambda })
    }
}

fn check_inputs(v: &VMatrix, aggs: &[CategoryAggregate]) -> Result<()> {
    if v.m() != aggs.len() {
        return Err(Error::InvalidArgument(format!(
            "V is {}x{} but there are {} aggregates",
            v.m(),
            v.m(),
            aggs.len()
        )));
    }
    Ok(())
}

pub fn build_qubo(
    v: &VMatrix,
    aggs: &[CategoryAggregate],
    node: &NodeStats,
    lambda: f64,
) -> Result<QuboProblem> {
    check_inputs(v, aggs)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be >= 0, got {lambda}"
        )));
    }
    let m = aggs.len();
    if m < 2 {
        return Err(Error::TooFewCategories(m));
    }
    let ns = node.n as f64;
    let ns2_var = ns * node.sse();
    let r = v.row_sums();
    let n: Vec<f64> = aggs.iter().map(|a| a.n_alpha() as f64).collect();

    let mut h = vec![0.0; m * m];
    for a in 0..m {
        for b in a..m {
            let q = ns * v.get(a, b) - n[b] * r[a] - n[a] * r[b] + lambda * n[a] * n[b];
            h[a * m + b] = q;
            h[b * m + a] = q;
        }
        h[a * m + a] += (ns2_var - ns * lambda) * n[a];
    }
    Ok(QuboProblem { m, h, lambda })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionalParts {
    pub numerator: f64,
    pub denominator: f64,
    pub n_left: usize,
    pub n_right: usize,
}

impl FractionalParts {
    /// n(q) − λ·d(q).
    pub fn parametric(&self, lambda: f64) -> f64 {
        self.numerator - lambda * self.denominator
    }

    pub fn ratio(&self) -> Option<f64> {
        (self.denominator > 0.0).then(|| self.numerator / self.denominator)
    }
}

pub fn eval_fractional(
    v: &VMatrix,
    aggs: &[CategoryAggregate],
    q: &BinaryAssignment,
) -> Result<FractionalParts> {
    check_inputs(v, aggs)?;
    if q.len() != aggs.len() {
        return Err(Error::InvalidArgument(format!(
            "assignment has {} bits for {} categories",
            q.len(),
            aggs.len()
        )));
    }
    let m = aggs.len();
    let mut n_left = 0usize;
    let mut n_right = 0usize;
    let mut v_ll = 0.0;
    let mut v_rr = 0.0;
    for a in 0..m {
        if q.0[a] {
            n_left += aggs[a].n_alpha();
        } else {
            n_right += aggs[a].n_alpha();
        }
        let row = v.row(a);
        for b in 0..m {
            match (q.0[a], q.0[b]) {
                (true, true) => v_ll += row[b],
                (false, false) => v_rr += row[b],
                _ => {}
            }
        }
    }
    let (nl, nr) = (n_left as f64, n_right as f64);
    Ok(FractionalParts {
        numerator: nr * v_ll + nl * v_rr,
        denominator: nl * nr,
        n_left,
        n_right,
    })
}

/// R(q) = n(q)/d(q), the summed child SSE of the split encoded by `q`.
pub fn split_cost(v: &VMatrix, aggs: &[CategoryAggregate], q: &BinaryAssignment) -> Result<f64> {
    if q.is_trivial() {
        return Err(Error::TrivialAssignment);
    }
    let parts = eval_fractional(v, aggs, q)?;
    Ok(parts.numerator / parts.denominator)
}
