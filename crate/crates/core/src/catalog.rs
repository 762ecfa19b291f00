//! Synthetic database catalogs: tables, per-column statistics, index sizing
//! and predicate selectivity.
//!
//! Numeric domains are uniform, so selectivities are exact ratios of the
//! column domain. Skew and misestimation are introduced downstream by the
//! simulator's ground-truth multipliers, never through the data itself.

use std::collections::BTreeSet;
use std::fmt;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::plan::{CmpOp, Literal, Predicate};
use crate::seed;
use crate::{Error, Result};

pub const PAGE_SIZE_BYTES: u64 = 8192;
pub const TUPLE_OVERHEAD_BYTES: u64 = 16;
pub const MAX_INDEX_WIDTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub kind: ColumnKind,
    pub distinct_count: u64,
    /// Domain bounds; present only for numeric columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_value: Option<f64>,
    pub avg_width_bytes: u32,
}

impl ColumnDef {
    /// Numeric domain `(min, max)`; `None` for string columns.
    pub fn domain(&self) -> Option<(f64, f64)> {
        match (self.kind, self.min_value, self.max_value) {
            (ColumnKind::Numeric, Some(lo), Some(hi)) => Some((lo, hi)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub row_count: u64,
    pub page_count: u64,
    pub columns: Vec<ColumnDef>,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Result<&ColumnDef> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::lookup(format!("column {}.{name} not found", self.name)))
    }

    pub fn avg_row_width(&self) -> u64 {
        self.columns.iter().map(|c| u64::from(c.avg_width_bytes)).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.row_count == 0 || self.page_count == 0 {
            return Err(Error::config(format!("table {} has zero rows or pages", self.name)));
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::config(format!("duplicate column {}.{}", self.name, c.name)));
            }
            if c.distinct_count == 0 || c.distinct_count > self.row_count {
                return Err(Error::config(format!(
                    "column {}.{} distinct_count {} outside [1, {}]",
                    self.name, c.name, c.distinct_count, self.row_count
                )));
            }
            if c.avg_width_bytes == 0 {
                return Err(Error::config(format!("column {}.{} has zero width", self.name, c.name)));
            }
            if c.kind == ColumnKind::Numeric {
                match c.domain() {
                    Some((lo, hi)) if lo <= hi => {}
                    _ => {
                        return Err(Error::config(format!(
                            "numeric column {}.{} needs min_value <= max_value",
                            self.name, c.name
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}

/// Fully qualified column reference.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ColumnRef {
    pub table: String,
    pub column: String,
}

impl ColumnRef {
    pub fn new(table: impl Into<String>, column: impl Into<String>) -> Self {
        Self { table: table.into(), column: column.into() }
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.table, self.column)
    }
}

/// A (possibly hypothetical) B-tree index over up to [`MAX_INDEX_WIDTH`]
/// ordered key columns of one table.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct IndexCandidate {
    pub table: String,
    pub key_columns: Vec<String>,
    pub estimated_size_bytes: u64,
}

impl IndexCandidate {
    /// Builds a validated candidate with its size filled in from `catalog`.
    pub fn new(table: &str, key_columns: &[&str], catalog: &Catalog) -> Result<Self> {
        Self::from_owned(table.to_string(), key_columns.iter().map(|s| s.to_string()).collect(), catalog)
    }

    pub fn from_owned(table: String, key_columns: Vec<String>, catalog: &Catalog) -> Result<Self> {
        let mut x = IndexCandidate { table, key_columns, estimated_size_bytes: 0 };
        x.estimated_size_bytes = estimate_index_size(&x, catalog)?;
        Ok(x)
    }

    /// `true` when `self`'s key columns are a superset of `other`'s on the
    /// same table.
    pub fn covers(&self, other: &IndexCandidate) -> bool {
        self.table == other.table && other.key_columns.iter().all(|k| self.key_columns.contains(k))
    }

    /// `true` when `other`'s key list is a proper prefix of `self`'s.
    pub fn extends_prefix_of(&self, other: &IndexCandidate) -> bool {
        self.table == other.table
            && self.key_columns.len() > other.key_columns.len()
            && self.key_columns.starts_with(&other.key_columns)
    }

    pub fn leading_column(&self) -> &str {
        &self.key_columns[0]
    }

    /// Identity independent of the size annotation.
    pub fn same_definition(&self, other: &IndexCandidate) -> bool {
        self.table == other.table && self.key_columns == other.key_columns
    }
}

impl fmt::Display for IndexCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.table, self.key_columns.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatalogSpec {
    pub n_tables: usize,
    /// Inclusive row-count range.
    pub rows_range: (u64, u64),
    /// Inclusive column-count range per table.
    pub cols_per_table_range: (usize, usize),
}

impl CatalogSpec {
    fn validate(&self) -> Result<()> {
        if self.n_tables == 0 {
            return Err(Error::config("catalog needs n_tables >= 1"));
        }
        let (rlo, rhi) = self.rows_range;
        if rlo == 0 || rlo > rhi {
            return Err(Error::config(format!("invalid rows_range [{rlo}, {rhi}]")));
        }
        let (clo, chi) = self.cols_per_table_range;
        if clo == 0 || clo > chi {
            return Err(Error::config(format!("invalid cols_per_table_range [{clo}, {chi}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub tables: Vec<TableDef>,
    pub seed: u64,
}

impl Catalog {
    pub fn new(tables: Vec<TableDef>, seed: u64) -> Result<Self> {
        let c = Catalog { tables, seed };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for t in &self.tables {
            if !names.insert(t.name.as_str()) {
                return Err(Error::config(format!("duplicate table {}", t.name)));
            }
            t.validate()?;
        }
        Ok(())
    }

    pub fn table(&self, name: &str) -> Result<&TableDef> {
        self.tables
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::lookup(format!("table {name} not found")))
    }

    pub fn column(&self, r: &ColumnRef) -> Result<&ColumnDef> {
        self.table(&r.table)?.column(&r.column)
    }

    /// Total number of columns across all tables; the width of every
    /// column one-hot block in operator encodings.
    pub fn total_columns(&self) -> usize {
        self.tables.iter().map(|t| t.columns.len()).sum()
    }

    /// Position of a column in the catalog-wide column order.
    pub fn column_ordinal(&self, table: &str, column: &str) -> Result<usize> {
        let mut offset = 0;
        for t in &self.tables {
            if t.name == table {
                return t
                    .columns
                    .iter()
                    .position(|c| c.name == column)
                    .map(|p| offset + p)
                    .ok_or_else(|| Error::lookup(format!("column {table}.{column} not found")));
            }
            offset += t.columns.len();
        }
        Err(Error::lookup(format!("table {table} not found")))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Catalog = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }
}

fn log_uniform_u64(rng: &mut seed::Rng, lo: u64, hi: u64) -> u64 {
    if lo >= hi {
        return lo;
    }
    let (a, b) = ((lo as f64).ln(), ((hi + 1) as f64).ln());
    let v = rng.random_range(a..b).exp().floor() as u64;
    v.clamp(lo, hi)
}

/// Generates a catalog as a pure function of `(spec, seed)`.
///
/// Column 0 of every table is a dense numeric key `id`; the remaining columns
/// mix numeric and string attributes with log-uniform distinct counts.
pub fn generate_catalog(spec: &CatalogSpec, seed: u64) -> Result<Catalog> {
    spec.validate()?;
    let mut rng = seed::rng(seed::derive_str(seed, "catalog"));
    let mut tables = Vec::with_capacity(spec.n_tables);
    for ti in 0..spec.n_tables {
        let row_count = log_uniform_u64(&mut rng, spec.rows_range.0, spec.rows_range.1);
        let n_cols = rng.random_range(spec.cols_per_table_range.0..=spec.cols_per_table_range.1);
        let mut columns = Vec::with_capacity(n_cols);
        columns.push(ColumnDef {
            name: "id".into(),
            kind: ColumnKind::Numeric,
            distinct_count: row_count,
            min_value: Some(1.0),
            max_value: Some(row_count as f64),
            avg_width_bytes: 8,
        });
        for ci in 1..n_cols {
            let distinct = log_uniform_u64(&mut rng, 2.min(row_count), row_count);
            let col = if rng.random_bool(0.7) {
                let scale = *[1.0, 10.0, 100.0].get(rng.random_range(0..3)).unwrap_or(&1.0);
                ColumnDef {
                    name: format!("c{ci}"),
                    kind: ColumnKind::Numeric,
                    distinct_count: distinct,
                    min_value: Some(0.0),
                    max_value: Some((distinct as f64) * scale),
                    avg_width_bytes: if rng.random_bool(0.5) { 4 } else { 8 },
                }
            } else {
                ColumnDef {
                    name: format!("s{ci}"),
                    kind: ColumnKind::String,
                    distinct_count: distinct,
                    min_value: None,
                    max_value: None,
                    avg_width_bytes: rng.random_range(8..=32),
                }
            };
            columns.push(col);
        }
        let mut t = TableDef { name: format!("t{ti}"), row_count, page_count: 1, columns };
        t.page_count = (row_count * t.avg_row_width()).div_ceil(PAGE_SIZE_BYTES).max(1);
        tables.push(t);
    }
    Catalog::new(tables, seed)
}

/// Index size: `row_count × (Σ key widths + tuple overhead)`.
pub fn estimate_index_size(x: &IndexCandidate, c: &Catalog) -> Result<u64> {
    let t = c.table(&x.table)?;
    if x.key_columns.is_empty() || x.key_columns.len() > MAX_INDEX_WIDTH {
        return Err(Error::config(format!(
            "index {x} has {} key columns; expected 1..={MAX_INDEX_WIDTH}",
            x.key_columns.len()
        )));
    }
    let mut seen = BTreeSet::new();
    let mut width = 0u64;
    for k in &x.key_columns {
        if !seen.insert(k.as_str()) {
            return Err(Error::config(format!("index {x} repeats key column {k}")));
        }
        width += u64::from(t.column(k)?.avg_width_bytes);
    }
    Ok(t.row_count * (width + TUPLE_OVERHEAD_BYTES))
}

fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Fraction of a column's domain covered by the open range `(lo, hi)`.
pub fn range_selectivity(col: &ColumnRef, lo: f64, hi: f64, c: &Catalog) -> Result<f64> {
    let def = c.column(col)?;
    let (min, max) = def
        .domain()
        .ok_or_else(|| Error::contract(format!("range predicate on non-numeric column {col}")))?;
    if max <= min {
        return Ok(if lo < min && hi > max { 1.0 } else { 0.0 });
    }
    Ok(clamp01((hi - lo) / (max - min)))
}

/// Estimated fraction of rows satisfying `pred`, in `[0, 1]`.
pub fn selectivity(pred: &Predicate, c: &Catalog) -> Result<f64> {
    let def = c.column(&pred.column)?;
    let ndv = def.distinct_count as f64;
    let eq = 1.0 / ndv;
    match (&pred.value, pred.op) {
        (Literal::Column(other), op) => {
            let ndv_other = c.column(other)?.distinct_count as f64;
            let join_eq = 1.0 / ndv.max(ndv_other);
            Ok(match op {
                CmpOp::Eq => join_eq,
                CmpOp::Ne => 1.0 - join_eq,
                _ => 1.0 / 3.0,
            })
        }
        (_, CmpOp::Eq) => Ok(eq),
        (_, CmpOp::Ne) => Ok(1.0 - eq),
        (Literal::Num(v), op) => {
            let (min, max) = def.domain().ok_or_else(|| {
                Error::contract(format!("numeric literal against string column {}", pred.column))
            })?;
            match op {
                CmpOp::Lt | CmpOp::Le => range_selectivity(&pred.column, min, *v, c),
                _ => range_selectivity(&pred.column, *v, max, c),
            }
        }
        (Literal::Token(rank), op) => {
            if def.kind != ColumnKind::String {
                return Err(Error::contract(format!(
                    "string literal against numeric column {}",
                    pred.column
                )));
            }
            let r = *rank as f64;
            let below = r / ndv;
            match op {
                CmpOp::Lt | CmpOp::Le => Ok(clamp01(below)),
                _ => Ok(clamp01(1.0 - below - eq)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_table(rows: u64) -> Catalog {
        Catalog::new(
            vec![TableDef {
                name: "t".into(),
                row_count: rows,
                page_count: 1,
                columns: vec![
                    ColumnDef {
                        name: "a".into(),
                        kind: ColumnKind::Numeric,
                        distinct_count: 100,
                        min_value: Some(0.0),
                        max_value: Some(1000.0),
                        avg_width_bytes: 8,
                    },
                    ColumnDef {
                        name: "b".into(),
                        kind: ColumnKind::Numeric,
                        distinct_count: 10,
                        min_value: Some(0.0),
                        max_value: Some(10.0),
                        avg_width_bytes: 8,
                    },
                    ColumnDef {
                        name: "s".into(),
                        kind: ColumnKind::String,
                        distinct_count: 50,
                        min_value: None,
                        max_value: None,
                        avg_width_bytes: 16,
                    },
                ],
            }],
            0,
        )
        .unwrap()
    }

    #[test]
    fn generate_small_catalog_is_deterministic() {
        let spec = CatalogSpec { n_tables: 1, rows_range: (1000, 1000), cols_per_table_range: (2, 2) };
        let a = generate_catalog(&spec, 7).unwrap();
        let b = generate_catalog(&spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.tables.len(), 1);
        assert_eq!(a.tables[0].row_count, 1000);
        assert_eq!(a.tables[0].columns.len(), 2);
    }

    #[test]
    fn page_count_formula() {
        let spec = CatalogSpec { n_tables: 4, rows_range: (100, 100_000), cols_per_table_range: (2, 6) };
        let c = generate_catalog(&spec, 3).unwrap();
        for t in &c.tables {
            let expect = (t.row_count * t.avg_row_width()).div_ceil(8192).max(1);
            assert_eq!(t.page_count, expect);
        }
    }

    #[test]
    fn zero_tables_is_config_error() {
        let spec = CatalogSpec { n_tables: 0, rows_range: (10, 20), cols_per_table_range: (1, 2) };
        assert!(matches!(generate_catalog(&spec, 1), Err(Error::Config(_))));
        let spec = CatalogSpec { n_tables: 1, rows_range: (20, 10), cols_per_table_range: (1, 2) };
        assert!(matches!(generate_catalog(&spec, 1), Err(Error::Config(_))));
    }

    #[test]
    fn row_counts_stay_in_range_over_seeds() {
        let spec = CatalogSpec { n_tables: 3, rows_range: (100, 100_000), cols_per_table_range: (2, 5) };
        for s in 0..100 {
            let c = generate_catalog(&spec, s).unwrap();
            for t in &c.tables {
                assert!((100..=100_000).contains(&t.row_count), "seed {s}: {}", t.row_count);
                for col in &t.columns {
                    assert!(col.distinct_count <= t.row_count);
                }
            }
        }
    }

    #[test]
    fn index_size_formula_and_monotonicity() {
        let c = one_table(1000);
        let x1 = IndexCandidate::new("t", &["a"], &c).unwrap();
        assert_eq!(x1.estimated_size_bytes, 24_000);
        let x2 = IndexCandidate::new("t", &["a", "b"], &c).unwrap();
        assert_eq!(x2.estimated_size_bytes, 32_000);
        assert!(x2.estimated_size_bytes > x1.estimated_size_bytes);
        assert!(matches!(IndexCandidate::new("t", &["zz"], &c), Err(Error::Lookup(_))));
        assert!(matches!(IndexCandidate::new("nope", &["a"], &c), Err(Error::Lookup(_))));
        assert!(IndexCandidate::new("t", &["a", "b", "s", "a"], &c).is_err());
    }

    #[test]
    fn selectivity_examples() {
        let c = one_table(1000);
        let col = ColumnRef::new("t", "a");
        let eq = Predicate::new(col.clone(), CmpOp::Eq, Literal::Num(5.0));
        assert_eq!(selectivity(&eq, &c).unwrap(), 0.01);
        assert_eq!(range_selectivity(&col, 0.0, 1000.0, &c).unwrap(), 1.0);
        assert_eq!(range_selectivity(&col, -50.0, 5000.0, &c).unwrap(), 1.0);
        assert_eq!(range_selectivity(&col, 300.0, 300.0, &c).unwrap(), 0.0);
        let s = Predicate::new(ColumnRef::new("t", "s"), CmpOp::Eq, Literal::Token(3));
        assert_eq!(selectivity(&s, &c).unwrap(), 1.0 / 50.0);
        let lt = Predicate::new(col.clone(), CmpOp::Lt, Literal::Num(250.0));
        assert_eq!(selectivity(&lt, &c).unwrap(), 0.25);
        let missing = Predicate::new(ColumnRef::new("t", "q"), CmpOp::Eq, Literal::Num(1.0));
        assert!(matches!(selectivity(&missing, &c), Err(Error::Lookup(_))));
    }

    #[test]
    fn covering_and_prefix() {
        let c = one_table(1000);
        let a = IndexCandidate::new("t", &["a"], &c).unwrap();
        let ab = IndexCandidate::new("t", &["a", "b"], &c).unwrap();
        let ba = IndexCandidate::new("t", &["b", "a"], &c).unwrap();
        assert!(ab.covers(&a));
        assert!(!a.covers(&ab));
        assert!(ab.extends_prefix_of(&a));
        assert!(!ba.extends_prefix_of(&a));
        assert!(ba.covers(&a));
    }

    #[test]
    fn json_round_trip_validates() {
        let spec = CatalogSpec { n_tables: 2, rows_range: (50, 500), cols_per_table_range: (2, 4) };
        let c = generate_catalog(&spec, 11).unwrap();
        let back = Catalog::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(c, back);
        let mut bad = c.clone();
        bad.tables[0].columns[0].distinct_count = bad.tables[0].row_count + 1;
        assert!(Catalog::from_json(&serde_json::to_string(&bad).unwrap()).is_err());
    }
}
