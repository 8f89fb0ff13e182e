//! Preprocessing pipeline: missing-value imputation, inflated-value
//! indicator encoding, dequantization of gridded columns, and per-column
//! quantile normalization to a standard Gaussian with exact inversion.
//!
//! The fitted [`Preprocessor`] serializes alongside the model so sampling can
//! invert every transform without access to the training data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnData, ColumnKind, ColumnSchema, Table, MISSING_CODE};
use crate::error::{Error, Result};
use crate::math::{quantile_sorted, std_normal_cdf, std_normal_quantile};

/// Probability levels are clipped to [ε, 1−ε] before the normal quantile.
pub const LEVEL_CLIP: f64 = 1e-7;

/// Monotone map through the empirical CDF of the training column and the
/// standard-normal quantile function. Piecewise-linear between knots in both
/// directions; values beyond the training range clamp to the extreme knots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantileTransform {
    /// Strictly increasing reference values (empirical quantile grid).
    pub knots: Vec<f64>,
    /// Matching cumulative levels, strictly increasing in [0, 1].
    pub levels: Vec<f64>,
}

impl QuantileTransform {
    pub fn n_quantiles(&self) -> usize {
        self.knots.len()
    }

    /// Raw value → standard-normal space.
    pub fn forward(&self, x: f64) -> f64 {
        let u = interp(x, &self.knots, &self.levels);
        std_normal_quantile(u.clamp(LEVEL_CLIP, 1.0 - LEVEL_CLIP))
    }

    /// Standard-normal space → raw value, clamped to the training support.
    pub fn invert(&self, z: f64) -> f64 {
        let u = std_normal_cdf(z);
        if u <= LEVEL_CLIP {
            return self.knots[0];
        }
        if u >= 1.0 - LEVEL_CLIP {
            return *self.knots.last().unwrap();
        }
        interp(u, &self.levels, &self.knots)
    }
}

fn interp(x: f64, xs: &[f64], ys: &[f64]) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let hi = xs.partition_point(|&v| v < x).min(last);
    let lo = hi - 1;
    let t = (x - xs[lo]) / (xs[hi] - xs[lo]);
    ys[lo] + t * (ys[hi] - ys[lo])
}

/// Fits the empirical quantile grid on `column` (non-finite entries are
/// ignored). Fails on constant columns; the pipeline falls back to an
/// identity transform in that case.
pub fn fit_quantile_transform(column: &[f64], n_quantiles: usize) -> Result<QuantileTransform> {
    let mut sorted: Vec<f64> = column.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() || sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateColumn("constant column in quantile fit".into()));
    }
    let n_q = n_quantiles.clamp(2, sorted.len().max(2));

    let mut knots = Vec::with_capacity(n_q);
    let mut levels = Vec::with_capacity(n_q);
    for i in 0..n_q {
        let p = i as f64 / (n_q - 1) as f64;
        knots.push(quantile_sorted(&sorted, p));
        levels.push(p);
    }
    // Collapse runs of equal knots, keeping the mean level of each run so the
    // grid stays strictly increasing on both axes.
    let mut dk: Vec<f64> = Vec::with_capacity(n_q);
    let mut dl: Vec<f64> = Vec::with_capacity(n_q);
    let mut i = 0;
    while i < n_q {
        let mut j = i;
        let mut level_sum = 0.0;
        while j < n_q && knots[j] == knots[i] {
            level_sum += levels[j];
            j += 1;
        }
        dk.push(knots[i]);
        dl.push(level_sum / (j - i) as f64);
        i = j;
    }
    Ok(QuantileTransform { knots: dk, levels: dl })
}

/// Quantization grid of a numerical column: multiples of `step` offset by
/// `anchor` (the minimum training value).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuantizationGrid {
    pub step: f64,
    pub anchor: f64,
}

/// Adds independent uniform noise in [−q/2, q/2]; deterministic given seed.
pub fn dequantize(column: &[f64], step: f64, seed: u64) -> Vec<f64> {
    assert!(step > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    column.iter().map(|&x| x + (rng.gen::<f64>() - 0.5) * step).collect()
}

/// Snaps each value to the nearest grid point; exact half-steps round up.
pub fn requantize(column: &[f64], grid: &QuantizationGrid) -> Vec<f64> {
    column.iter().map(|&x| requantize_value(x, grid)).collect()
}

pub fn requantize_value(x: f64, grid: &QuantizationGrid) -> f64 {
    let t = (x - grid.anchor) / grid.step;
    let k = t.floor();
    let k = if t - k >= 0.5 { k + 1.0 } else { k };
    grid.anchor + k * grid.step
}

/// Per-column disposition of missing cells, fixed at fit time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ImputePolicy {
    /// No missing values observed at fit time.
    None,
    /// Replace missing numerical cells with the training-column mean.
    Mean(f64),
    /// Map missing categorical cells to this (appended) category code.
    MissingCategory(u32),
}

/// Companion indicator column appended for a numerical column with inflated
/// values: category 0 means "no inflated value", category 1 + i means the
/// i-th inflated value was present (binary in the single-value case).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Companion {
    pub source_column: usize,
    pub values: Vec<f64>,
}

/// Per-numerical-column forward map into circuit space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ColumnTransform {
    Identity,
    Quantile(QuantileTransform),
}

impl ColumnTransform {
    fn forward(&self, x: f64) -> f64 {
        match self {
            ColumnTransform::Identity => x,
            ColumnTransform::Quantile(q) => q.forward(x),
        }
    }

    fn invert(&self, z: f64) -> f64 {
        match self {
            ColumnTransform::Identity => z,
            ColumnTransform::Quantile(q) => q.invert(z),
        }
    }
}

/// Row-major observed/marginalized flags aligned with circuit-space columns.
#[derive(Debug, Clone)]
pub struct MaskTemplate {
    pub n_rows: usize,
    pub n_cols: usize,
    observed: Vec<bool>,
}

impl MaskTemplate {
    pub fn all_observed(n_rows: usize, n_cols: usize) -> Self {
        MaskTemplate { n_rows, n_cols, observed: vec![true; n_rows * n_cols] }
    }

    pub fn set_marginalized(&mut self, row: usize, col: usize) {
        self.observed[row * self.n_cols + col] = false;
    }

    pub fn is_observed(&self, row: usize, col: usize) -> bool {
        self.observed[row * self.n_cols + col]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.observed[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn any_marginalized(&self) -> bool {
        self.observed.iter().any(|&o| !o)
    }
}

/// Pipeline knobs. Defaults follow the full treatment: indicator-encoded
/// inflated values, dequantization of gridded columns, and quantile
/// normalization with `min(1000, n_rows)` knots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessOptions {
    pub enable_inflated: bool,
    pub enable_quantile: bool,
    pub enable_dequantize: bool,
    pub max_quantiles: usize,
    pub seed: u64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            enable_inflated: true,
            enable_quantile: true,
            enable_dequantize: true,
            max_quantiles: 1000,
            seed: 0,
        }
    }
}

/// Fitted preprocessing plan mapping raw tables to circuit space and back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Preprocessor {
    pub options: PreprocessOptions,
    /// Schema of raw input files.
    pub raw_schema: Vec<ColumnSchema>,
    /// Raw schema with imputation categories appended.
    pub working_schema: Vec<ColumnSchema>,
    /// Circuit-space schema: working columns plus companion indicators.
    pub circuit_schema: Vec<ColumnSchema>,
    pub impute: Vec<ImputePolicy>,
    /// Per raw column; Some(...) only for numerical columns.
    pub transforms: Vec<Option<ColumnTransform>>,
    pub grids: Vec<Option<QuantizationGrid>>,
    /// (source numerical column, appended circuit column index).
    pub companions: Vec<(usize, usize)>,
}

impl Preprocessor {
    /// Fits every stage on the training table and returns the transformed
    /// training table plus its marginalize-at-train mask.
    pub fn fit(table: &Table, options: &PreprocessOptions) -> Result<(Preprocessor, Table, MaskTemplate)> {
        let (imputed, policies) = impute_missing(table)?;
        let working_schema = imputed.schema.clone();

        let (with_companions, mut mask, companion_cols) = if options.enable_inflated {
            encode_inflated(&imputed)?
        } else {
            let m = MaskTemplate::all_observed(imputed.n_rows, imputed.n_columns());
            (imputed, m, Vec::new())
        };

        let n_raw = working_schema.len();
        let mut grids: Vec<Option<QuantizationGrid>> = vec![None; n_raw];
        let mut transforms: Vec<Option<ColumnTransform>> = vec![None; n_raw];
        let mut columns = with_companions.columns.clone();

        for col in 0..n_raw {
            if working_schema[col].kind != ColumnKind::Numerical {
                continue;
            }
            let values = columns[col].as_numerical().to_vec();
            if let Some(step) = working_schema[col].quantization_step {
                let anchor = values.iter().copied().fold(f64::INFINITY, f64::min);
                grids[col] = Some(QuantizationGrid { step, anchor });
            }
            let values = match (&grids[col], options.enable_dequantize) {
                (Some(grid), true) => {
                    dequantize(&values, grid.step, dequant_seed(options.seed, col))
                }
                _ => values,
            };

            let transform = if options.enable_quantile {
                let observed: Vec<f64> = values
                    .iter()
                    .enumerate()
                    .filter(|(row, _)| mask.is_observed(*row, col))
                    .map(|(_, &v)| v)
                    .collect();
                let n_q = options.max_quantiles.min(observed.len().max(2));
                match fit_quantile_transform(&observed, n_q) {
                    Ok(t) => ColumnTransform::Quantile(t),
                    Err(Error::DegenerateColumn(_)) => ColumnTransform::Identity,
                    Err(e) => return Err(e),
                }
            } else {
                ColumnTransform::Identity
            };

            let transformed: Vec<f64> = values
                .iter()
                .enumerate()
                .map(|(row, &v)| {
                    if mask.is_observed(row, col) {
                        transform.forward(v)
                    } else {
                        // Never read by a marginalized input layer.
                        0.0
                    }
                })
                .collect();
            columns[col] = ColumnData::Numerical(transformed);
            transforms[col] = Some(transform);
        }

        let circuit_schema = with_companions.schema.clone();
        mask.n_cols = circuit_schema.len();
        let preprocessor = Preprocessor {
            options: options.clone(),
            raw_schema: table.schema.clone(),
            working_schema,
            circuit_schema: circuit_schema.clone(),
            impute: policies,
            transforms,
            grids,
            companions: companion_cols,
        };
        let out = Table::new(circuit_schema, columns);
        Ok((preprocessor, out, mask))
    }

    /// Applies the fitted pipeline to new raw data (validation/test).
    pub fn apply(&self, table: &Table, dequantize_data: bool) -> Result<(Table, MaskTemplate)> {
        if table.n_columns() != self.raw_schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "expected {} columns, got {}",
                self.raw_schema.len(),
                table.n_columns()
            )));
        }
        let imputed = impute_with(table, &self.impute, &self.working_schema)?;
        let n_rows = imputed.n_rows;
        let n_raw = self.working_schema.len();
        let mut mask = MaskTemplate::all_observed(n_rows, self.circuit_schema.len());
        let mut columns = imputed.columns;

        // Companion indicator columns, in the fitted order.
        for &(src, _) in &self.companions {
            let inflated = &self.working_schema[src].inflated_values;
            let values = columns[src].as_numerical();
            let mut codes = Vec::with_capacity(n_rows);
            for (row, &v) in values.iter().enumerate() {
                match inflated.iter().position(|&iv| iv == v) {
                    Some(i) => {
                        codes.push(1 + i as u32);
                        mask.set_marginalized(row, src);
                    }
                    None => codes.push(0),
                }
            }
            columns.push(ColumnData::Categorical(codes));
        }

        for col in 0..n_raw {
            let Some(transform) = &self.transforms[col] else { continue };
            let mut values = columns[col].as_numerical().to_vec();
            if let (Some(grid), true) = (&self.grids[col], dequantize_data) {
                values = dequantize(&values, grid.step, dequant_seed(self.options.seed, col) ^ 0x5eed);
            }
            let transformed: Vec<f64> = values
                .iter()
                .enumerate()
                .map(|(row, &v)| if mask.is_observed(row, col) { transform.forward(v) } else { 0.0 })
                .collect();
            columns[col] = ColumnData::Numerical(transformed);
        }

        Ok((Table::new(self.circuit_schema.clone(), columns), mask))
    }

    /// Maps a circuit-space table back to raw data space: inverse quantile
    /// transform, requantization onto the original grid, inflated-value
    /// reconstitution from the companion column, and companion removal.
    pub fn invert(&self, circuit_table: &Table) -> Result<Table> {
        if circuit_table.n_columns() != self.circuit_schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "expected {} circuit columns, got {}",
                self.circuit_schema.len(),
                circuit_table.n_columns()
            )));
        }
        let n_raw = self.working_schema.len();
        let mut columns: Vec<ColumnData> = circuit_table.columns[..n_raw].to_vec();

        for col in 0..n_raw {
            let Some(transform) = &self.transforms[col] else { continue };
            let mut values: Vec<f64> =
                columns[col].as_numerical().iter().map(|&z| transform.invert(z)).collect();
            if let Some(grid) = &self.grids[col] {
                values = requantize(&values, grid);
            }
            columns[col] = ColumnData::Numerical(values);
        }

        for (i, &(src, circuit_col)) in self.companions.iter().enumerate() {
            let _ = i;
            let codes = circuit_table.columns[circuit_col].as_categorical();
            let inflated = &self.working_schema[src].inflated_values;
            if let ColumnData::Numerical(values) = &mut columns[src] {
                for (row, &code) in codes.iter().enumerate() {
                    if code >= 1 {
                        values[row] = inflated[(code - 1) as usize];
                    }
                }
            }
        }

        Ok(Table::new(self.working_schema.clone(), columns))
    }

    /// Forward-transforms one observed raw cell into circuit space without
    /// noise; used when conditioning on evidence.
    pub fn transform_cell(&self, col: usize, raw: f64) -> f64 {
        match &self.transforms[col] {
            Some(t) => t.forward(raw),
            None => raw,
        }
    }
}

fn dequant_seed(seed: u64, col: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(col as u64)
}

/// Replaces missing numerical cells with the column mean and missing
/// categorical cells with a dedicated category appended to the schema.
pub fn impute_missing(table: &Table) -> Result<(Table, Vec<ImputePolicy>)> {
    let mut schema = table.schema.clone();
    let mut columns = table.columns.clone();
    let mut policies = Vec::with_capacity(schema.len());

    for (col, s) in schema.iter_mut().enumerate() {
        match &mut columns[col] {
            ColumnData::Numerical(values) => {
                let present: Vec<f64> = values.iter().copied().filter(|v| !v.is_nan()).collect();
                if values.iter().any(|v| v.is_nan()) {
                    if present.is_empty() {
                        return Err(Error::DegenerateColumn(s.name.clone()));
                    }
                    let mean = present.iter().sum::<f64>() / present.len() as f64;
                    for v in values.iter_mut() {
                        if v.is_nan() {
                            *v = mean;
                        }
                    }
                    s.has_missing = true;
                    policies.push(ImputePolicy::Mean(mean));
                } else {
                    policies.push(ImputePolicy::None);
                }
            }
            ColumnData::Categorical(codes) => {
                if codes.iter().any(|&c| c == MISSING_CODE) {
                    if codes.iter().all(|&c| c == MISSING_CODE) {
                        return Err(Error::DegenerateColumn(s.name.clone()));
                    }
                    let new_code = s.categories.len() as u32;
                    s.categories.push(missing_label(&s.categories));
                    s.has_missing = true;
                    for c in codes.iter_mut() {
                        if *c == MISSING_CODE {
                            *c = new_code;
                        }
                    }
                    policies.push(ImputePolicy::MissingCategory(new_code));
                } else {
                    policies.push(ImputePolicy::None);
                }
            }
        }
    }

    Ok((Table::new(schema, columns), policies))
}

/// Applies fixed imputation policies (fitted on training data) to new data.
pub fn impute_with(table: &Table, policies: &[ImputePolicy], working_schema: &[ColumnSchema]) -> Result<Table> {
    let mut columns = table.columns.clone();
    for (col, policy) in policies.iter().enumerate() {
        match (&mut columns[col], policy) {
            (ColumnData::Numerical(values), ImputePolicy::Mean(mean)) => {
                for v in values.iter_mut() {
                    if v.is_nan() {
                        *v = *mean;
                    }
                }
            }
            (ColumnData::Categorical(codes), ImputePolicy::MissingCategory(code)) => {
                for c in codes.iter_mut() {
                    if *c == MISSING_CODE {
                        *c = *code;
                    }
                }
            }
            (ColumnData::Numerical(values), ImputePolicy::None) => {
                if values.iter().any(|v| v.is_nan()) {
                    return Err(Error::Domain(format!(
                        "column '{}' has missing values but no imputation policy",
                        working_schema[col].name
                    )));
                }
            }
            (ColumnData::Categorical(codes), ImputePolicy::None) => {
                if codes.iter().any(|&c| c == MISSING_CODE) {
                    return Err(Error::Domain(format!(
                        "column '{}' has missing values but no imputation policy",
                        working_schema[col].name
                    )));
                }
            }
            _ => unreachable!("policy kind matches column kind"),
        }
    }
    Ok(Table::new(working_schema.to_vec(), columns))
}

fn missing_label(existing: &[String]) -> String {
    let mut label = "<missing>".to_string();
    while existing.contains(&label) {
        label.push('_');
    }
    label
}

/// Appends a companion indicator column for every numerical column with
/// inflated values and flags the inflated cells marginalize-at-train.
pub fn encode_inflated(table: &Table) -> Result<(Table, MaskTemplate, Vec<(usize, usize)>)> {
    let mut schema = table.schema.clone();
    let mut columns = table.columns.clone();
    let mut mask = MaskTemplate::all_observed(table.n_rows, table.n_columns());
    let mut companions = Vec::new();

    let sources: Vec<usize> = table
        .schema
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == ColumnKind::Numerical && !s.inflated_values.is_empty())
        .map(|(i, _)| i)
        .collect();

    for src in sources {
        let inflated = table.schema[src].inflated_values.clone();
        let values = table.columns[src].as_numerical();
        let mut codes = Vec::with_capacity(table.n_rows);
        for (row, &v) in values.iter().enumerate() {
            match inflated.iter().position(|&iv| iv == v) {
                Some(i) => {
                    codes.push(1 + i as u32);
                    mask.set_marginalized(row, src);
                }
                None => codes.push(0),
            }
        }
        let mut categories = vec!["none".to_string()];
        categories.extend(inflated.iter().map(|v| format!("{v}")));
        let mut companion = ColumnSchema::categorical(
            format!("{}__inflated", table.schema[src].name),
            &[],
        );
        companion.categories = categories;
        let companion_idx = schema.len();
        schema.push(companion);
        columns.push(ColumnData::Categorical(codes));
        companions.push((src, companion_idx));
    }

    // Mask gains the appended (always observed) companion columns.
    let n_cols = schema.len();
    let mut full = MaskTemplate::all_observed(table.n_rows, n_cols);
    for row in 0..table.n_rows {
        for col in 0..table.n_columns() {
            if !mask.is_observed(row, col) {
                full.set_marginalized(row, col);
            }
        }
    }

    Ok((Table::new(schema, columns), full, companions))
}
