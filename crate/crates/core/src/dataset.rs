//! Heterogeneous table representation: per-column schema, column-major
//! storage, CSV ingestion, schema inference, and deterministic splits.
//!
//! Missing cells survive loading as sentinels (`f64::NAN` for numerical
//! columns, [`MISSING_CODE`] for categorical ones) and are resolved by the
//! preprocessing stage.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Categorical code standing in for a missing cell until imputation.
pub const MISSING_CODE: u32 = u32::MAX;

/// Columns with fewer distinct values than this are inferred categorical.
pub const CATEGORICAL_DISTINCT_THRESHOLD: usize = 50;

/// A value is flagged inflated when it covers at least this fraction of the
/// non-missing entries of a numerical column...
pub const INFLATION_FREQUENCY_THRESHOLD: f64 = 0.30;
/// ...provided the column has at least this many distinct values, so coarse
/// discrete columns are not flagged.
pub const INFLATION_MIN_DISTINCT: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inflated_values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantization_step: Option<f64>,
    #[serde(default)]
    pub has_missing: bool,
}

impl ColumnSchema {
    pub fn numerical(name: impl Into<String>) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Numerical,
            categories: Vec::new(),
            inflated_values: Vec::new(),
            quantization_step: None,
            has_missing: false,
        }
    }

    pub fn categorical(name: impl Into<String>, categories: &[&str]) -> Self {
        ColumnSchema {
            name: name.into(),
            kind: ColumnKind::Categorical,
            categories: categories.iter().map(|s| s.to_string()).collect(),
            inflated_values: Vec::new(),
            quantization_step: None,
            has_missing: false,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.categories.len()
    }

    fn code_of(&self, label: &str) -> Option<u32> {
        self.categories.iter().position(|c| c == label).map(|p| p as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Numerical(Vec<f64>),
    Categorical(Vec<u32>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numerical(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numerical(&self) -> &[f64] {
        match self {
            ColumnData::Numerical(v) => v,
            ColumnData::Categorical(_) => panic!("categorical column accessed as numerical"),
        }
    }

    pub fn as_categorical(&self) -> &[u32] {
        match self {
            ColumnData::Categorical(v) => v,
            ColumnData::Numerical(_) => panic!("numerical column accessed as categorical"),
        }
    }
}

/// Column-major heterogeneous dataset.
#[derive(Debug, Clone)]
pub struct Table {
    pub schema: Vec<ColumnSchema>,
    pub columns: Vec<ColumnData>,
    pub n_rows: usize,
}

impl Table {
    pub fn new(schema: Vec<ColumnSchema>, columns: Vec<ColumnData>) -> Self {
        assert_eq!(schema.len(), columns.len());
        let n_rows = columns.first().map_or(0, ColumnData::len);
        for c in &columns {
            assert_eq!(c.len(), n_rows, "all columns must have the same length");
        }
        Table { schema, columns, n_rows }
    }

    pub fn n_columns(&self) -> usize {
        self.schema.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    /// New table holding the given rows (by index, in order).
    pub fn select_rows(&self, rows: &[usize]) -> Table {
        let columns = self
            .columns
            .iter()
            .map(|col| match col {
                ColumnData::Numerical(v) => {
                    ColumnData::Numerical(rows.iter().map(|&r| v[r]).collect())
                }
                ColumnData::Categorical(v) => {
                    ColumnData::Categorical(rows.iter().map(|&r| v[r]).collect())
                }
            })
            .collect();
        Table::new(self.schema.clone(), columns)
    }

    /// Cell as a CSV string; missing cells map to the empty string.
    fn cell_to_string(&self, col: usize, row: usize) -> String {
        match &self.columns[col] {
            ColumnData::Numerical(v) => {
                if v[row].is_nan() {
                    String::new()
                } else {
                    format!("{}", v[row])
                }
            }
            ColumnData::Categorical(v) => {
                if v[row] == MISSING_CODE {
                    String::new()
                } else {
                    self.schema[col].categories[v[row] as usize].clone()
                }
            }
        }
    }
}

/// Fractions must sum to 1; the partition is exact and seed-deterministic.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Self {
        SplitSpec { train_fraction: train, val_fraction: val, test_fraction: test, seed }
    }
}

/// Parses a CSV byte stream against a fixed schema. Labels map to codes per
/// the schema's category ordering; empty cells and the literal `NA` become
/// missing markers.
pub fn load_table<R: Read>(csv_source: R, schema: &[ColumnSchema]) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(csv_source);
    let headers = reader.headers()?.clone();
    if headers.len() != schema.len() {
        return Err(Error::SchemaMismatch(format!(
            "CSV has {} columns, schema has {}",
            headers.len(),
            schema.len()
        )));
    }
    for (h, s) in headers.iter().zip(schema.iter()) {
        if h != s.name {
            return Err(Error::SchemaMismatch(format!(
                "header '{}' does not match schema column '{}'",
                h, s.name
            )));
        }
    }

    let mut columns: Vec<ColumnData> = schema
        .iter()
        .map(|s| match s.kind {
            ColumnKind::Numerical => ColumnData::Numerical(Vec::new()),
            ColumnKind::Categorical => ColumnData::Categorical(Vec::new()),
        })
        .collect();

    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != schema.len() {
            return Err(Error::Parse {
                row: row_idx,
                column: String::new(),
                message: format!("expected {} fields, found {}", schema.len(), record.len()),
            });
        }
        for (col_idx, cell) in record.iter().enumerate() {
            let s = &schema[col_idx];
            let missing = cell.is_empty() || cell == "NA";
            match (&mut columns[col_idx], s.kind) {
                (ColumnData::Numerical(v), ColumnKind::Numerical) => {
                    if missing {
                        v.push(f64::NAN);
                    } else {
                        let parsed: f64 = cell.parse().map_err(|e| Error::Parse {
                            row: row_idx,
                            column: s.name.clone(),
                            message: format!("'{cell}': {e}"),
                        })?;
                        v.push(parsed);
                    }
                }
                (ColumnData::Categorical(v), ColumnKind::Categorical) => {
                    if missing {
                        v.push(MISSING_CODE);
                    } else {
                        let code = s.code_of(cell).ok_or_else(|| {
                            Error::SchemaMismatch(format!(
                                "unknown category '{}' for column '{}' at row {}",
                                cell, s.name, row_idx
                            ))
                        })?;
                        v.push(code);
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    Ok(Table::new(schema.to_vec(), columns))
}

/// Writes the table as RFC-4180 CSV. Numerical cells use the shortest
/// round-trip representation, so `load_table(serialize(t), schema)`
/// reproduces `t` exactly.
pub fn write_csv<W: Write>(table: &Table, out: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(table.schema.iter().map(|s| s.name.as_str()))?;
    for row in 0..table.n_rows {
        let record: Vec<String> =
            (0..table.n_columns()).map(|col| table.cell_to_string(col, row)).collect();
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn table_to_csv_string(table: &Table) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(table, &mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
}

/// Raw parsed cells prior to schema inference. `None` marks a missing cell.
pub struct RawTable {
    pub headers: Vec<String>,
    pub cells: Vec<Vec<Option<String>>>,
}

impl RawTable {
    pub fn from_reader<R: Read>(source: R) -> Result<RawTable> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(source);
        let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
        let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
        for record in reader.records() {
            let record = record?;
            for (col, cell) in record.iter().enumerate() {
                let value = if cell.is_empty() || cell == "NA" {
                    None
                } else {
                    Some(cell.to_string())
                };
                cells[col].push(value);
            }
        }
        Ok(RawTable { headers, cells })
    }

    pub fn n_rows(&self) -> usize {
        self.cells.first().map_or(0, Vec::len)
    }
}

/// Infers a schema from raw cells: columns with fewer than
/// [`CATEGORICAL_DISTINCT_THRESHOLD`] distinct values (or any non-numeric
/// cell) become categorical with categories ordered by first appearance;
/// the rest become numerical with quantization-step and inflated-value
/// detection.
pub fn infer_schema(raw: &RawTable) -> Result<Vec<ColumnSchema>> {
    if raw.n_rows() == 0 {
        return Err(Error::InsufficientData("schema inference needs at least one row".into()));
    }
    raw.headers
        .iter()
        .zip(raw.cells.iter())
        .map(|(name, cells)| infer_column(name, cells))
        .collect()
}

fn infer_column(name: &str, cells: &[Option<String>]) -> Result<ColumnSchema> {
    let present: Vec<&String> = cells.iter().flatten().collect();
    if present.is_empty() {
        return Err(Error::DegenerateColumn(name.to_string()));
    }
    let has_missing = present.len() < cells.len();
    let all_numeric = present.iter().all(|v| v.parse::<f64>().is_ok());

    if !all_numeric || distinct_count_capped(&present) < CATEGORICAL_DISTINCT_THRESHOLD {
        let mut categories: Vec<String> = Vec::new();
        for v in &present {
            if !categories.iter().any(|c| c == v.as_str()) {
                categories.push((*v).clone());
            }
        }
        let mut s = ColumnSchema::categorical(name, &[]);
        s.categories = categories;
        s.has_missing = has_missing;
        return Ok(s);
    }

    let values: Vec<f64> = present.iter().map(|v| v.parse::<f64>().unwrap()).collect();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let mut s = ColumnSchema::numerical(name);
    s.has_missing = has_missing;
    s.quantization_step = detect_quantization_step(&sorted);
    if sorted.len() >= INFLATION_MIN_DISTINCT {
        s.inflated_values = detect_inflated_values(&values);
    }
    Ok(s)
}

fn distinct_count_capped(present: &[&String]) -> usize {
    let mut distinct: Vec<&str> = Vec::new();
    for v in present {
        if !distinct.iter().any(|d| d == v.as_str()) {
            distinct.push(v.as_str());
            if distinct.len() >= CATEGORICAL_DISTINCT_THRESHOLD {
                return distinct.len();
            }
        }
    }
    distinct.len()
}

/// Greatest common grid step of the distinct sorted values, when one exists
/// within relative tolerance 1e-9 of the value range.
pub fn detect_quantization_step(sorted_distinct: &[f64]) -> Option<f64> {
    if sorted_distinct.len() < 2 {
        return None;
    }
    let anchor = sorted_distinct[0];
    let range = sorted_distinct[sorted_distinct.len() - 1] - anchor;
    let tol = range.abs().max(1.0) * 1e-9;
    let mut g = 0.0f64;
    for w in sorted_distinct.windows(2) {
        let d = w[1] - w[0];
        g = float_gcd(g, d, tol);
        if g < tol {
            return None;
        }
    }
    // Every offset from the anchor must sit on the grid.
    for &v in sorted_distinct {
        let k = ((v - anchor) / g).round();
        if (v - anchor - k * g).abs() > tol {
            return None;
        }
    }
    Some(g)
}

fn float_gcd(a: f64, b: f64, tol: f64) -> f64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b > tol {
        let r = a % b;
        a = b;
        b = if r > b - tol { 0.0 } else { r };
    }
    a
}

fn detect_inflated_values(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mut counts: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        match counts.iter_mut().find(|(key, _)| *key == v) {
            Some((_, c)) => *c += 1,
            None => counts.push((v, 1)),
        }
    }
    let mut inflated: Vec<f64> = counts
        .into_iter()
        .filter(|(_, c)| *c as f64 / n >= INFLATION_FREQUENCY_THRESHOLD)
        .map(|(v, _)| v)
        .collect();
    inflated.sort_by(f64::total_cmp);
    inflated
}

/// Loads a CSV by inferring its schema first.
pub fn load_table_inferring<R: Read>(source: R) -> Result<(Table, Vec<ColumnSchema>)> {
    let mut buf = Vec::new();
    let mut source = source;
    source.read_to_end(&mut buf)?;
    let raw = RawTable::from_reader(buf.as_slice())?;
    let schema = infer_schema(&raw)?;
    let table = load_table(buf.as_slice(), &schema)?;
    Ok((table, schema))
}

/// Splits rows into train/val/test. Counts are floored per fraction with the
/// remainder assigned to train; the shuffle is seed-deterministic.
pub fn split(table: &Table, spec: &SplitSpec) -> Result<(Table, Table, Table)> {
    let n = table.n_rows;
    if n < 3 {
        return Err(Error::InsufficientData(format!("split needs at least 3 rows, got {n}")));
    }
    let sum = spec.train_fraction + spec.val_fraction + spec.test_fraction;
    if (sum - 1.0).abs() > 1e-9
        || spec.train_fraction < 0.0
        || spec.val_fraction < 0.0
        || spec.test_fraction < 0.0
    {
        return Err(Error::Usage(format!("split fractions must be nonnegative and sum to 1, got {sum}")));
    }

    let n_val = (spec.val_fraction * n as f64).floor() as usize;
    let n_test = (spec.test_fraction * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;
    for (count, frac, label) in [
        (n_train, spec.train_fraction, "train"),
        (n_val, spec.val_fraction, "val"),
        (n_test, spec.test_fraction, "test"),
    ] {
        if count == 0 && frac > 0.0 {
            return Err(Error::InfeasibleSplit(format!("{label} split is empty at fraction {frac}")));
        }
    }

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    indices.shuffle(&mut rng);

    let train_idx = &indices[..n_train];
    let val_idx = &indices[n_train..n_train + n_val];
    let test_idx = &indices[n_train + n_val..];
    Ok((table.select_rows(train_idx), table.select_rows(val_idx), table.select_rows(test_idx)))
}

pub fn schema_to_json(schema: &[ColumnSchema]) -> Result<String> {
    Ok(serde_json::to_string_pretty(schema)?)
}

pub fn schema_from_json(json: &str) -> Result<Vec<ColumnSchema>> {
    let schema: Vec<ColumnSchema> = serde_json::from_str(json)?;
    for s in &schema {
        if s.kind == ColumnKind::Categorical && s.categories.is_empty() {
            return Err(Error::SchemaMismatch(format!(
                "categorical column '{}' has no categories",
                s.name
            )));
        }
        if s.kind == ColumnKind::Categorical && !s.inflated_values.is_empty() {
            return Err(Error::SchemaMismatch(format!(
                "categorical column '{}' cannot have inflated values",
                s.name
            )));
        }
        if let Some(q) = s.quantization_step {
            if q <= 0.0 {
                return Err(Error::SchemaMismatch(format!(
                    "column '{}' has non-positive quantization step",
                    s.name
                )));
            }
        }
    }
    Ok(schema)
}

/// Stable fingerprint of a schema, stored in model files so sampling can
/// refuse mismatched inputs.
pub fn schema_fingerprint(schema: &[ColumnSchema]) -> String {
    use sha2::{Digest, Sha256};
    let canonical = serde_json::to_string(schema).expect("schema serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_column_schema() -> Vec<ColumnSchema> {
        vec![ColumnSchema::numerical("a"), ColumnSchema::categorical("b", &["x", "y"])]
    }

    #[test]
    fn load_maps_labels_to_codes() {
        let table = load_table("a,b\n1.5,x\n2.0,y\n".as_bytes(), &two_column_schema()).unwrap();
        assert_eq!(table.n_rows, 2);
        assert_eq!(table.columns[0].as_numerical(), &[1.5, 2.0]);
        assert_eq!(table.columns[1].as_categorical(), &[0, 1]);
    }

    #[test]
    fn load_empty_body_gives_zero_rows() {
        let table = load_table("a,b\n".as_bytes(), &two_column_schema()).unwrap();
        assert_eq!(table.n_rows, 0);
    }

    #[test]
    fn unknown_label_is_schema_mismatch() {
        let err = load_table("a,b\n1.0,z\n".as_bytes(), &two_column_schema()).unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch(_)));
    }

    #[test]
    fn bad_numeral_reports_location() {
        let err = load_table("a,b\n1.0,x\noops,y\n".as_bytes(), &two_column_schema()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 1);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn missing_cells_become_markers() {
        let table = load_table("a,b\n,x\nNA,\n".as_bytes(), &two_column_schema()).unwrap();
        assert!(table.columns[0].as_numerical()[0].is_nan());
        assert!(table.columns[0].as_numerical()[1].is_nan());
        assert_eq!(table.columns[1].as_categorical()[1], MISSING_CODE);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let schema = two_column_schema();
        let table = load_table("a,b\n1.5,x\n-0.75,y\n0.1,x\n".as_bytes(), &schema).unwrap();
        let csv = table_to_csv_string(&table).unwrap();
        let reloaded = load_table(csv.as_bytes(), &schema).unwrap();
        assert_eq!(table.columns, reloaded.columns);
    }

    #[test]
    fn infer_binary_column_is_categorical() {
        let cells: Vec<Option<String>> =
            (0..1000).map(|i| Some(format!("{}", i % 2))).collect();
        let raw = RawTable { headers: vec!["c".into()], cells: vec![cells] };
        let schema = infer_schema(&raw).unwrap();
        assert_eq!(schema[0].kind, ColumnKind::Categorical);
        assert_eq!(schema[0].cardinality(), 2);
    }

    #[test]
    fn infer_many_distinct_reals_is_numerical() {
        let cells: Vec<Option<String>> =
            (0..1000).map(|i| Some(format!("{}", i as f64 * 0.3337 + 0.1))).collect();
        let raw = RawTable { headers: vec!["c".into()], cells: vec![cells] };
        let schema = infer_schema(&raw).unwrap();
        assert_eq!(schema[0].kind, ColumnKind::Numerical);
    }

    #[test]
    fn infer_flags_inflated_value() {
        // 40% zeros, the rest distinct: oracle is a direct frequency count.
        let mut cells: Vec<Option<String>> = Vec::new();
        for i in 0..1000 {
            if i % 10 < 4 {
                cells.push(Some("0".to_string()));
            } else {
                cells.push(Some(format!("{}", 1.0 + i as f64 * 0.017)));
            }
        }
        let raw = RawTable { headers: vec!["c".into()], cells: vec![cells] };
        let schema = infer_schema(&raw).unwrap();
        assert_eq!(schema[0].kind, ColumnKind::Numerical);
        assert_eq!(schema[0].inflated_values, vec![0.0]);
    }

    #[test]
    fn infer_all_missing_column_errors() {
        let raw = RawTable { headers: vec!["c".into()], cells: vec![vec![None, None]] };
        assert!(matches!(infer_schema(&raw).unwrap_err(), Error::DegenerateColumn(_)));
    }

    #[test]
    fn quantization_step_detected_on_grid() {
        assert_eq!(detect_quantization_step(&[2.0, 4.0, 6.0, 10.0]), Some(2.0));
        assert_eq!(detect_quantization_step(&[0.5, 1.0, 1.25]), Some(0.25));
        let irr: Vec<f64> = (1..200).map(|i| (i as f64).sqrt()).collect();
        assert_eq!(detect_quantization_step(&irr), None);
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let col: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let table =
            Table::new(vec![ColumnSchema::numerical("a")], vec![ColumnData::Numerical(col)]);
        let (tr, va, te) =
            split(&table, &SplitSpec::new(0.81, 0.09, 0.10, 1234)).unwrap();
        assert_eq!((tr.n_rows, va.n_rows, te.n_rows), (81, 9, 10));

        let col: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let table =
            Table::new(vec![ColumnSchema::numerical("a")], vec![ColumnData::Numerical(col)]);
        let (tr, va, te) = split(&table, &SplitSpec::new(0.8, 0.1, 0.1, 1)).unwrap();
        assert_eq!((tr.n_rows, va.n_rows, te.n_rows), (8, 1, 1));
    }

    #[test]
    fn split_is_deterministic_and_partitions() {
        let col: Vec<f64> = (0..57).map(|i| i as f64).collect();
        let table =
            Table::new(vec![ColumnSchema::numerical("a")], vec![ColumnData::Numerical(col)]);
        let spec = SplitSpec::new(0.6, 0.2, 0.2, 42);
        let (tr1, va1, te1) = split(&table, &spec).unwrap();
        let (tr2, va2, te2) = split(&table, &spec).unwrap();
        assert_eq!(tr1.columns, tr2.columns);
        assert_eq!(va1.columns, va2.columns);
        assert_eq!(te1.columns, te2.columns);

        let mut seen: Vec<f64> = Vec::new();
        for t in [&tr1, &va1, &te1] {
            seen.extend_from_slice(t.columns[0].as_numerical());
        }
        seen.sort_by(f64::total_cmp);
        let expect: Vec<f64> = (0..57).map(|i| i as f64).collect();
        assert_eq!(seen, expect);
    }

    #[test]
    fn infeasible_split_is_rejected() {
        let col: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let table =
            Table::new(vec![ColumnSchema::numerical("a")], vec![ColumnData::Numerical(col)]);
        let err = split(&table, &SplitSpec::new(0.85, 0.05, 0.10, 7)).unwrap_err();
        assert!(matches!(err, Error::InfeasibleSplit(_)));
    }

    #[test]
    fn schema_json_round_trip() {
        let mut schema = two_column_schema();
        schema[0].quantization_step = Some(0.5);
        schema[0].inflated_values = vec![0.0];
        let json = schema_to_json(&schema).unwrap();
        let parsed = schema_from_json(&json).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].quantization_step, Some(0.5));
        assert_eq!(parsed[1].categories, vec!["x", "y"]);
        assert_eq!(schema_fingerprint(&schema), schema_fingerprint(&parsed));
    }

    #[test]
    fn infer_is_idempotent_on_coded_table() {
        let csv = "a,b\n1.5,x\n2.5,y\n3.5,x\n";
        let (table, schema) = load_table_inferring(csv.as_bytes()).unwrap();
        let csv2 = table_to_csv_string(&table).unwrap();
        let raw = RawTable::from_reader(csv2.as_bytes()).unwrap();
        let schema2 = infer_schema(&raw).unwrap();
        assert_eq!(schema.len(), schema2.len());
        for (a, b) in schema.iter().zip(schema2.iter()) {
            assert_eq!(a.kind, b.kind);
            assert_eq!(a.categories, b.categories);
        }
    }
}
