//! Datasets: typed feature columns plus a numeric response.
//!
//! Categorical columns are stored as `u32` codes into the column's category
//! list; binary columns are stored as numeric 0/1 values.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::rng::SeededRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Binary,
}

impl std::str::FromStr for ColumnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "numeric" | "num" => Ok(Self::Numeric),
            "categorical" | "cat" => Ok(Self::Categorical),
            "binary" | "bin" => Ok(Self::Binary),
            other => Err(Error::Schema(format!("unknown column kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    /// Category labels in code order; empty for non-categorical columns.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl ColumnSchema {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
            categories: Vec::new(),
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Binary,
            categories: Vec::new(),
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: categories.into_iter().map(Into::into).collect(),
        }
    }

    pub fn is_categorical(&self) -> bool {
        self.kind == ColumnKind::Categorical
    }

    pub fn category_code(&self, label: &str) -> Option<u32> {
        self.categories
            .iter()
            .position(|c| c == label)
            .map(|i| i as u32)
    }
}

/// Parses `"Brand:categorical,Mileage_km:numeric,HasClaim:binary"`.
pub fn parse_schema_spec(spec: &str) -> Result<Vec<ColumnSchema>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, kind) = part
            .split_once(':')
            .ok_or_else(|| Error::Schema(format!("expected name:kind, got {part:?}")))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::Schema(format!("empty column name in {part:?}")));
        }
        out.push(ColumnSchema {
            name: name.to_string(),
            kind: kind.parse()?,
            categories: Vec::new(),
        });
    }
    if out.is_empty() {
        return Err(Error::Schema("schema lists no columns".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Categorical(Vec<u32>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    fn select(&self, rows: &[usize]) -> ColumnData {
        match self {
            ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&i| v[i]).collect()),
            ColumnData::Categorical(v) => {
                ColumnData::Categorical(rows.iter().map(|&i| v[i]).collect())
            }
        }
    }
}

/// A single feature value, used for row-level prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureValue {
    Number(f64),
    Category(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Vec<ColumnSchema>,
    columns: Vec<ColumnData>,
    response_name: String,
    response: Vec<f64>,
}

impl Dataset {
    pub fn new(
        schema: Vec<ColumnSchema>,
        columns: Vec<ColumnData>,
        response_name: impl Into<String>,
        response: Vec<f64>,
    ) -> Result<Self> {
        if response.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if schema.len() != columns.len() {
            return Err(Error::Schema(format!(
                "{} schema entries for {} columns",
                schema.len(),
                columns.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for (s, c) in schema.iter().zip(&columns) {
            if !seen.insert(s.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column {}", s.name)));
            }
            if c.len() != response.len() {
                return Err(Error::Schema(format!(
                    "column {} has {} rows, response has {}",
                    s.name,
                    c.len(),
                    response.len()
                )));
            }
            match (s.kind, c) {
                (ColumnKind::Numeric, ColumnData::Numeric(v)) => {
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::Schema(format!("non-finite value in {}", s.name)));
                    }
                }
                (ColumnKind::Binary, ColumnData::Numeric(v)) => {
                    if v.iter().any(|&x| x != 0.0 && x != 1.0) {
                        return Err(Error::Schema(format!(
                            "binary column {} not in {{0,1}}",
                            s.name
                        )));
                    }
                }
                (ColumnKind::Categorical, ColumnData::Categorical(v)) => {
                    let mut labels = std::collections::HashSet::new();
                    if !s.categories.iter().all(|c| labels.insert(c)) {
                        return Err(Error::Schema(format!("duplicate category in {}", s.name)));
                    }
                    if v.iter().any(|&k| k as usize >= s.categories.len()) {
                        return Err(Error::Schema(format!(
                            "category code out of range in {}",
                            s.name
                        )));
                    }
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "column {} storage does not match kind {:?}",
                        s.name, s.kind
                    )))
                }
            }
        }
        if response.iter().any(|y| !y.is_finite()) {
            return Err(Error::Schema("non-finite response".into()));
        }
        Ok(Self {
            schema,
            columns,
            response_name: response_name.into(),
            response,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn schema(&self) -> &[ColumnSchema] {
        &self.schema
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn column(&self, index: usize) -> &ColumnData {
        &self.columns[index]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|s| s.name == name)
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn numeric(&self, index: usize) -> Option<&[f64]> {
        match &self.columns[index] {
            ColumnData::Numeric(v) => Some(v),
            ColumnData::Categorical(_) => None,
        }
    }

    pub fn codes(&self, index: usize) -> Option<&[u32]> {
        match &self.columns[index] {
            ColumnData::Categorical(v) => Some(v),
            ColumnData::Numeric(_) => None,
        }
    }

    /// Rows `rows` (in the given order) with the full schema retained.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            response_name: self.response_name.clone(),
            response: rows.iter().map(|&i| self.response[i]).collect(),
        }
    }

    pub fn row(&self, i: usize) -> Vec<FeatureValue> {
        self.schema
            .iter()
            .zip(&self.columns)
            .map(|(s, c)| match c {
                ColumnData::Numeric(v) => FeatureValue::Number(v[i]),
                ColumnData::Categorical(v) => {
                    FeatureValue::Category(s.categories[v[i] as usize].clone())
                }
            })
            .collect()
    }

    /// Writes the dataset as CSV, features in schema order, response last.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.schema.iter().map(|s| s.name.as_str()).collect();
        header.push(&self.response_name);
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.n_rows() {
            record.clear();
            for (s, c) in self.schema.iter().zip(&self.columns) {
                record.push(match c {
                    ColumnData::Numeric(v) if s.kind == ColumnKind::Binary => {
                        format!("{}", v[i] as u8)
                    }
                    ColumnData::Numeric(v) => format!("{}", v[i]),
                    ColumnData::Categorical(v) => s.categories[v[i] as usize].clone(),
                });
            }
            record.push(format!("{}", self.response[i]));
            w.write_record(&record)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<csv output>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// Reads a CSV file against `schema`. Header columns not named in the schema
/// (other than the response) are ignored. Category lists are extended in
/// first-appearance order.
pub fn load_csv(path: &Path, schema: &[ColumnSchema], response_column: &str) -> Result<Dataset> {
    load(path, schema, response_column, true)
}

/// Like [`load_csv`] but the response column is optional; when it is absent
/// from the header the response is filled with zeros. Used for prediction.
pub fn load_features(
    path: &Path,
    schema: &[ColumnSchema],
    response_column: &str,
) -> Result<Dataset> {
    load(path, schema, response_column, false)
}

fn load(
    path: &Path,
    schema: &[ColumnSchema],
    response_column: &str,
    need_response: bool,
) -> Result<Dataset> {
    let mut reader = open_csv(path)?;
    let headers = reader.headers()?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);

    let response_pos = position(response_column);
    if need_response && response_pos.is_none() {
        return Err(Error::Schema(format!(
            "response column {response_column:?} not in header"
        )));
    }
    let mut positions = Vec::with_capacity(schema.len());
    for s in schema {
        if s.name == response_column {
            return Err(Error::Schema(format!(
                "{} is both feature and response",
                s.name
            )));
        }
        positions.push(
            position(&s.name)
                .ok_or_else(|| Error::Schema(format!("column {:?} not in header", s.name)))?,
        );
    }

    let mut schema: Vec<ColumnSchema> = schema.to_vec();
    let mut lookups: Vec<HashMap<String, u32>> = schema
        .iter()
        .map(|s| {
            s.categories
                .iter()
                .enumerate()
                .map(|(i, c)| (c.clone(), i as u32))
                .collect()
        })
        .collect();
    let mut columns: Vec<ColumnData> = schema
        .iter()
        .map(|s| match s.kind {
            ColumnKind::Categorical => ColumnData::Categorical(Vec::new()),
            _ => ColumnData::Numeric(Vec::new()),
        })
        .collect();
    let mut response = Vec::new();

    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        let cell = |pos: usize| record.get(pos).unwrap_or("");
        let parse_err = |column: &str, value: &str| Error::Parse {
            row,
            column: column.to_string(),
            value: value.to_string(),
        };

        let y = match response_pos {
            Some(pos) => {
                let y_raw = cell(pos);
                y_raw
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| parse_err(response_column, y_raw))?
            }
            None => 0.0,
        };
        response.push(y);

        for (c, s) in schema.iter_mut().enumerate() {
            let raw = cell(positions[c]);
            if raw.is_empty() {
                return Err(parse_err(&s.name, raw));
            }
            match (&mut columns[c], s.kind) {
                (ColumnData::Categorical(codes), _) => {
                    let lookup = &mut lookups[c];
                    let code = match lookup.get(raw) {
                        Some(&k) => k,
                        None => {
                            let k = s.categories.len() as u32;
                            s.categories.push(raw.to_string());
                            lookup.insert(raw.to_string(), k);
                            k
                        }
                    };
                    codes.push(code);
                }
                (ColumnData::Numeric(values), kind) => {
                    let v: f64 = raw
                        .parse()
                        .ok()
                        .filter(|v: &f64| v.is_finite())
                        .ok_or_else(|| parse_err(&s.name, raw))?;
                    if kind == ColumnKind::Binary && v != 0.0 && v != 1.0 {
                        return Err(parse_err(&s.name, raw));
                    }
                    values.push(v);
                }
            }
        }
    }

    if response.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(schema, columns, response_column, response)
}

/// Guesses a schema from the file contents: columns whose every cell parses
/// as a number are numeric (binary when all cells are 0 or 1); the rest are
/// categorical. The response column is excluded.
pub fn infer_schema(path: &Path, response_column: &str) -> Result<Vec<ColumnSchema>> {
    let mut reader = open_csv(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if !headers.iter().any(|h| h == response_column) {
        return Err(Error::Schema(format!(
            "response column {response_column:?} not in header"
        )));
    }
    let mut numeric = vec![true; headers.len()];
    let mut binary = vec![true; headers.len()];
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record?;
        rows += 1;
        for (i, cell) in record.iter().enumerate().take(headers.len()) {
            match cell.parse::<f64>() {
                Ok(v) => binary[i] &= v == 0.0 || v == 1.0,
                Err(_) => {
                    numeric[i] = false;
                    binary[i] = false;
                }
            }
        }
    }
    if rows == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.as_str() != response_column)
        .map(|(i, h)| {
            let kind = if binary[i] {
                ColumnKind::Binary
            } else if numeric[i] {
                ColumnKind::Numeric
            } else {
                ColumnKind::Categorical
            };
            ColumnSchema {
                name: h.clone(),
                kind,
                categories: Vec::new(),
            }
        })
        .collect())
}

/// Train/validation/test fractions and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpecification {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitSpecification {
    pub fn new(train: f64, validation: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            fractions: [train, validation, test],
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "fractions must be positive, got {:?}",
                self.fractions
            )));
        }
        let total: f64 = self.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "fractions must sum to 1, got {total}"
            )));
        }
        Ok(())
    }
}

impl Default for SplitSpecification {
    fn default() -> Self {
        Self {
            fractions: [0.5, 0.25, 0.25],
            seed: 1,
        }
    }
}

/// Row indices of each part, ascending within a part. Validation and test
/// get ⌊f·N⌋ rows; training gets the remainder.
pub fn partition_indices(n: usize, spec: &SplitSpecification) -> Result<[Vec<usize>; 3]> {
    spec.validate()?;
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 rows to partition, got {n}"
        )));
    }
    let n_val = (spec.fractions[1] * n as f64).floor() as usize;
    let n_test = (spec.fractions[2] * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(spec.seed).shuffle(&mut order);

    let mut train = order[..n_train].to_vec();
    let mut val = order[n_train..n_train + n_val].to_vec();
    let mut test = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok([train, val, test])
}

pub fn partition(data: &Dataset, spec: &SplitSpecification) -> Result<(Dataset, Dataset, Dataset)> {
    let [train, val, test] = partition_indices(data.n_rows(), spec)?;
    Ok((data.subset(&train), data.subset(&val), data.subset(&test)))
}

pub const BRANDS: [&str; 10] = [
    "Audi",
    "BMW",
    "Ford",
    "Honda",
    "Hyundai",
    "Kia",
    "Mercedes",
    "Nissan",
    "Toyota",
    "Volkswagen",
];

pub const COLORS: [&str; 6] = ["Black", "Blue", "Gray", "Green", "Red", "White"];

const BRAND_BASE: [f64; 10] = [
    40_000.0, 45_000.0, 18_000.0, 16_000.0, 14_000.0, 13_000.0, 50_000.0, 15_000.0, 17_000.0,
    20_000.0,
];

const COLOR_FACTOR: [f64; 6] = [1.0, 1.0, 0.95, 0.95, 1.15, 1.10];

fn is_luxury(brand: usize) -> bool {
    matches!(BRANDS[brand], "Audi" | "BMW" | "Mercedes")
}

fn brand_sigma(brand: usize) -> f64 {
    if is_luxury(brand) {
        0.6
    } else {
        0.4
    }
}

fn synthetic_dataset(
    brand: Vec<u32>,
    color: Vec<u32>,
    mileage: Vec<f64>,
    has_claim: Vec<f64>,
    claim: Vec<f64>,
) -> Result<Dataset> {
    Dataset::new(
        vec![
            ColumnSchema::categorical("Brand", BRANDS),
            ColumnSchema::categorical("Color", COLORS),
            ColumnSchema::numeric("Mileage_km"),
            ColumnSchema::binary("HasClaim"),
        ],
        vec![
            ColumnData::Categorical(brand),
            ColumnData::Categorical(color),
            ColumnData::Numeric(mileage),
            ColumnData::Numeric(has_claim),
        ],
        "ClaimAmount",
        claim,
    )
}

/// The structured `df` generator: gamma mileage, logistic claim
/// probability, additive severity with Gaussian noise.
pub fn generate_df(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut rng = SeededRng::new(seed);
    let mut brand = Vec::with_capacity(n);
    let mut color = Vec::with_capacity(n);
    let mut mileage = Vec::with_capacity(n);
    let mut has_claim = Vec::with_capacity(n);
    let mut claim = Vec::with_capacity(n);

    for _ in 0..n {
        let b = rng.index(BRANDS.len());
        let base = BRAND_BASE[b];
        let km = rng.gamma(2.0, 30_000.0).min(250_000.0);
        let c = rng.index(COLORS.len());
        let p = 1.0 / (1.0 + (-(km - 80_000.0) / 20_000.0).exp());
        let hit = rng.bernoulli(p);
        let amount = if hit {
            let severity = 0.15 * base
                + 0.002 * km
                + if is_luxury(b) { 5000.0 } else { 0.0 }
                + if COLORS[c] == "Red" { 3000.0 } else { 0.0 };
            let noise = rng.normal(0.0, 2000.0);
            (severity * COLOR_FACTOR[c] + noise).max(100.0)
        } else {
            0.0
        };
        brand.push(b as u32);
        color.push(c as u32);
        mileage.push(km);
        has_claim.push(if hit { 1.0 } else { 0.0 });
        claim.push(amount);
    }
    synthetic_dataset(brand, color, mileage, has_claim, claim)
}

/// The `datagen` generator: lognormal mileage, linear clipped claim
/// probability, lognormal severity with a mileage term and a rare heavy tail.
pub fn generate_datagen(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let mut rng = SeededRng::new(seed);
    let mut brand = Vec::with_capacity(n);
    let mut color = Vec::with_capacity(n);
    let mut mileage = Vec::with_capacity(n);
    let mut has_claim = Vec::with_capacity(n);
    let mut claim = Vec::with_capacity(n);

    for _ in 0..n {
        let b = rng.index(BRANDS.len());
        let (base, sigma) = (BRAND_BASE[b], brand_sigma(b));
        let km = rng.lognormal(10.0, 0.5).min(300_000.0);
        let c = rng.index(COLORS.len());
        let p = (0.15 + 0.000_002 * km).max(0.01).min(0.9);
        let hit = rng.bernoulli(p);
        let amount = if hit {
            let basic = rng.lognormal((0.1 * base).ln(), sigma);
            let km_part = 0.001 * km * rng.uniform_range(0.5, 1.5);
            let tail = if rng.bernoulli(0.02) {
                rng.lognormal(base.ln(), 1.0)
            } else {
                0.0
            };
            ((basic + km_part + tail) * COLOR_FACTOR[c]).max(50.0)
        } else {
            0.0
        };
        brand.push(b as u32);
        color.push(c as u32);
        mileage.push(km);
        has_claim.push(if hit { 1.0 } else { 0.0 });
        claim.push(amount);
    }
    synthetic_dataset(brand, color, mileage, has_claim, claim)
}
