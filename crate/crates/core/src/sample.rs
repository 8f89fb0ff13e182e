//! Exact ancestral and evidence-conditioned sampling, plus dataset
//! generation back in raw data space.
//!
//! Conditioning follows the forward/backward scheme: one upward pass stores
//! every unit's value with marginalized inputs contributing 1, then a
//! top-down traversal samples each sum choice from its weights reweighted by
//! the stored child values, copies observed variables through, and samples
//! unobserved variables from their exact conditionals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::circuit::{Circuit, Evaluator, EvidenceMask, LayerKind, VarKind};
use crate::dataset::{ColumnData, ColumnKind, Table};
use crate::error::{Error, Result};
use crate::math::std_normal_quantile;
use crate::model::ModelBundle;

/// Forward values fall below this log threshold → evidence has no support.
pub const IMPOSSIBLE_EVIDENCE_LOG: f64 = -700.0;

/// Sampling request: row count, base seed, and optional per-row evidence in
/// raw data space (a table fragment plus aligned observation flags).
pub struct SampleRequest {
    pub n_rows: usize,
    pub seed: u64,
    pub evidence: Option<Evidence>,
}

pub struct Evidence {
    pub rows: Table,
    /// Row-major observed flags over the raw schema columns.
    pub observed: Vec<Vec<bool>>,
}

/// Independent generator stream for one output row: one ChaCha instance per
/// (seed, row) pair, so rows can be drawn in parallel and any prefix of a
/// request is reproducible.
pub fn row_rng(seed: u64, row: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row);
    rng
}

/// One evidence configuration, forward-evaluated once and reusable for any
/// number of conditional draws.
pub struct Prepared<'c> {
    evaluator: Evaluator<'c>,
    values: Vec<Vec<f64>>,
    row: Vec<f64>,
    observed: Vec<bool>,
}

impl<'c> Prepared<'c> {
    pub fn new(circuit: &'c Circuit, row: &[f64], mask: &EvidenceMask) -> Result<Self> {
        let evaluator = Evaluator::new(circuit);
        Self::with_evaluator(evaluator, row, mask)
    }

    pub fn with_evaluator(
        evaluator: Evaluator<'c>,
        row: &[f64],
        mask: &EvidenceMask,
    ) -> Result<Self> {
        let values = evaluator.forward(row, mask.flags())?;
        let root = evaluator.circuit().root();
        let r_root = values[root][0];
        if r_root.is_nan() || r_root < IMPOSSIBLE_EVIDENCE_LOG {
            return Err(Error::ImpossibleEvidence);
        }
        Ok(Prepared {
            evaluator,
            values,
            row: row.to_vec(),
            observed: mask.flags().to_vec(),
        })
    }

    pub fn log_evidence(&self) -> f64 {
        self.values[self.evaluator.circuit().root()][0]
    }

    /// Draws one completed row in circuit space.
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let circuit = self.evaluator.circuit();
        let mut out = self.row.clone();
        let mut stack: Vec<(usize, usize)> = vec![(circuit.root(), 0)];

        while let Some((layer_idx, unit)) = stack.pop() {
            let layer = &circuit.layers[layer_idx];
            match &layer.kind {
                LayerKind::CpSumProduct { children } => {
                    for (edge_idx, edge) in children.iter().enumerate() {
                        match self.evaluator.edge_log_weights(layer_idx, edge_idx) {
                            None => stack.push((edge.child, unit)),
                            Some(log_w) => {
                                let child_vals = &self.values[edge.child];
                                let kc = child_vals.len();
                                let row_w = &log_w[unit * kc..(unit + 1) * kc];
                                let j = sample_log_categorical(row_w, child_vals, rng);
                                stack.push((edge.child, j));
                            }
                        }
                    }
                }
                LayerKind::InputGaussian { var, .. } => {
                    if !self.observed[*var] {
                        let (mean, std) = self.evaluator.gaussian_params(layer_idx).unwrap();
                        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
                        out[*var] = mean[unit] + std[unit] * std_normal_quantile(u);
                    }
                }
                LayerKind::InputCategorical { var, cardinality, .. } => {
                    if !self.observed[*var] {
                        let log_probs = self.evaluator.categorical_log_probs(layer_idx).unwrap();
                        let row_lp = &log_probs[unit * cardinality..(unit + 1) * cardinality];
                        let zeros = vec![0.0; *cardinality];
                        out[*var] = sample_log_categorical(row_lp, &zeros, rng) as f64;
                    }
                }
            }
        }
        out
    }
}

/// Samples an index with probability ∝ exp(log_w[j] + bias[j]).
fn sample_log_categorical(log_w: &[f64], bias: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let mut m = f64::NEG_INFINITY;
    for (lw, b) in log_w.iter().zip(bias.iter()) {
        let s = lw + b;
        if s > m {
            m = s;
        }
    }
    debug_assert!(m.is_finite(), "sampled a branch with zero posterior mass");
    let mut total = 0.0;
    let weights: Vec<f64> = log_w
        .iter()
        .zip(bias.iter())
        .map(|(lw, b)| {
            let w = (lw + b - m).exp();
            total += w;
            w
        })
        .collect();
    let mut u = rng.gen::<f64>() * total;
    for (j, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return j;
        }
    }
    weights.len() - 1
}

/// Draws `n` rows in circuit space by top-down traversal; deterministic and
/// row-parallel given the seed.
pub fn ancestral_sample(circuit: &Circuit, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let d = circuit.num_vars;
    let mask = EvidenceMask::all_marginalized(d);
    let prepared = Prepared::new(circuit, &vec![0.0; d], &mask)?;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = row_rng(seed, i as u64);
            prepared.draw(&mut rng)
        })
        .collect();
    Ok(rows)
}

/// Completes one row exactly from the circuit's conditional given the
/// observed cells.
pub fn conditional_sample(
    circuit: &Circuit,
    evidence_row: &[f64],
    mask: &EvidenceMask,
    seed: u64,
) -> Result<Vec<f64>> {
    let prepared = Prepared::new(circuit, evidence_row, mask)?;
    let mut rng = row_rng(seed, 0);
    Ok(prepared.draw(&mut rng))
}

/// Maps one raw evidence row onto circuit space: observed numerical cells are
/// forward-transformed (inflated values route to their companion category and
/// marginalize the numerical cell), observed categorical cells copy through,
/// and everything else is marginalized.
fn circuit_evidence(
    bundle: &ModelBundle,
    evidence: &Table,
    row: usize,
    observed_raw: &[bool],
) -> Result<(Vec<f64>, EvidenceMask)> {
    let prep = &bundle.preprocessor;
    let d_circuit = prep.circuit_schema.len();
    let n_raw = prep.raw_schema.len();
    let mut row_vals = vec![0.0; d_circuit];
    let mut mask = EvidenceMask::all_marginalized(d_circuit);

    for col in 0..n_raw {
        if !observed_raw[col] {
            continue;
        }
        match &evidence.columns[col] {
            ColumnData::Numerical(v) => {
                let x = v[row];
                if x.is_nan() {
                    return Err(Error::Domain(format!(
                        "evidence row {row}: column '{}' marked observed but missing",
                        prep.raw_schema[col].name
                    )));
                }
                let companion = prep.companions.iter().find(|(src, _)| *src == col);
                let inflated_idx = prep.working_schema[col]
                    .inflated_values
                    .iter()
                    .position(|&iv| iv == x);
                match (companion, inflated_idx) {
                    (Some(&(_, comp_col)), Some(i)) => {
                        row_vals[comp_col] = (1 + i) as f64;
                        mask.set_observed(comp_col, true);
                    }
                    (Some(&(_, comp_col)), None) => {
                        row_vals[comp_col] = 0.0;
                        mask.set_observed(comp_col, true);
                        row_vals[col] = prep.transform_cell(col, x);
                        mask.set_observed(col, true);
                    }
                    (None, _) => {
                        row_vals[col] = prep.transform_cell(col, x);
                        mask.set_observed(col, true);
                    }
                }
            }
            ColumnData::Categorical(codes) => {
                let code = codes[row];
                if code == crate::dataset::MISSING_CODE {
                    return Err(Error::Domain(format!(
                        "evidence row {row}: column '{}' marked observed but missing",
                        prep.raw_schema[col].name
                    )));
                }
                row_vals[col] = code as f64;
                mask.set_observed(col, true);
            }
        }
    }
    Ok((row_vals, mask))
}

/// Generates a raw-space table: samples in circuit space (conditioning
/// per-row when evidence is given), inverts the preprocessing pipeline, and
/// copies observed evidence cells through verbatim.
pub fn generate_dataset(bundle: &ModelBundle, request: &SampleRequest) -> Result<Table> {
    bundle.check_schema(&bundle.schema)?;
    let circuit_schema = &bundle.preprocessor.circuit_schema;

    let circuit_rows: Vec<Vec<f64>> = match &request.evidence {
        None => ancestral_sample(&bundle.circuit, request.n_rows, request.seed)?,
        Some(evidence) => {
            check_evidence_schema(bundle, &evidence.rows)?;
            if evidence.observed.len() != evidence.rows.n_rows {
                return Err(Error::Domain(format!(
                    "evidence has {} rows but {} mask rows",
                    evidence.rows.n_rows,
                    evidence.observed.len()
                )));
            }
            let results: Vec<Result<Vec<f64>>> = (0..evidence.rows.n_rows)
                .into_par_iter()
                .map(|row| {
                    let (vals, mask) =
                        circuit_evidence(bundle, &evidence.rows, row, &evidence.observed[row])?;
                    let prepared = Prepared::new(&bundle.circuit, &vals, &mask)?;
                    let mut rng = row_rng(request.seed, row as u64);
                    Ok(prepared.draw(&mut rng))
                })
                .collect();
            results.into_iter().collect::<Result<Vec<_>>>()?
        }
    };

    // Column-major circuit-space table.
    let n = circuit_rows.len();
    let mut columns: Vec<ColumnData> = circuit_schema
        .iter()
        .map(|s| match s.kind {
            ColumnKind::Numerical => ColumnData::Numerical(Vec::with_capacity(n)),
            ColumnKind::Categorical => ColumnData::Categorical(Vec::with_capacity(n)),
        })
        .collect();
    for row in &circuit_rows {
        for (col, data) in columns.iter_mut().enumerate() {
            match data {
                ColumnData::Numerical(v) => v.push(row[col]),
                ColumnData::Categorical(v) => v.push(row[col] as u32),
            }
        }
    }
    let circuit_table = Table::new(circuit_schema.clone(), columns);
    let mut raw = bundle.preprocessor.invert(&circuit_table)?;

    // Observed evidence cells pass through untouched.
    if let Some(evidence) = &request.evidence {
        for col in 0..bundle.preprocessor.raw_schema.len() {
            for row in 0..n {
                if evidence.observed[row][col] {
                    match (&mut raw.columns[col], &evidence.rows.columns[col]) {
                        (ColumnData::Numerical(out), ColumnData::Numerical(src)) => {
                            out[row] = src[row];
                        }
                        (ColumnData::Categorical(out), ColumnData::Categorical(src)) => {
                            out[row] = src[row];
                        }
                        _ => unreachable!("evidence schema verified above"),
                    }
                }
            }
        }
    }
    Ok(raw)
}

fn check_evidence_schema(bundle: &ModelBundle, evidence: &Table) -> Result<()> {
    let raw = &bundle.preprocessor.raw_schema;
    if evidence.n_columns() != raw.len() {
        return Err(Error::IncompatibleModel(format!(
            "evidence has {} columns, model expects {}",
            evidence.n_columns(),
            raw.len()
        )));
    }
    for (e, r) in evidence.schema.iter().zip(raw.iter()) {
        if e.name != r.name || e.kind != r.kind {
            return Err(Error::IncompatibleModel(format!(
                "evidence column '{}' does not match model column '{}'",
                e.name, r.name
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{CpEdge, Layer};
    use crate::dataset::ColumnSchema;
    use crate::structure::build_sm;

    fn bernoulli_ff(p0: f64) -> Circuit {
        Circuit {
            layers: vec![
                Layer {
                    kind: LayerKind::InputCategorical {
                        var: 0,
                        cardinality: 2,
                        logits: vec![p0.ln(), (1.0 - p0).ln()],
                    },
                    width: 1,
                    scope: vec![0],
                },
                Layer {
                    kind: LayerKind::CpSumProduct {
                        children: vec![CpEdge { child: 0, log_weights: Some(vec![0.0]) }],
                    },
                    width: 1,
                    scope: vec![0],
                },
            ],
            num_vars: 1,
            var_kinds: vec![VarKind::Categorical(2)],
        }
    }

    #[test]
    fn categorical_frequencies_match_three_sigma() {
        let circuit = bernoulli_ff(0.7);
        let n = 100_000;
        let rows = ancestral_sample(&circuit, n, 17).unwrap();
        let count0 = rows.iter().filter(|r| r[0] == 0.0).count();
        let freq = count0 as f64 / n as f64;
        // 3σ binomial band around 0.7 at n = 1e5.
        assert!((freq - 0.7).abs() <= 0.0044, "freq={freq}");
    }

    #[test]
    fn degenerate_mixture_uses_single_component() {
        // Two-component mixture with all weight on component 0.
        let schema = vec![ColumnSchema::numerical("x")];
        let mut sm = build_sm(&schema, 2, 0).unwrap();
        let n_layers = sm.layers.len();
        if let LayerKind::CpSumProduct { children } = &mut sm.layers[n_layers - 1].kind {
            children[0].log_weights = Some(vec![0.0, -1e9]);
        }
        if let LayerKind::InputGaussian { mean, log_std, .. } = &mut sm.layers[0].kind {
            mean[0] = 10.0;
            mean[1] = -10.0;
            log_std[0] = -2.0;
            log_std[1] = -2.0;
        }
        let rows = ancestral_sample(&sm, 500, 3).unwrap();
        assert!(rows.iter().all(|r| r[0] > 5.0));
    }

    #[test]
    fn all_observed_copies_evidence_through() {
        let circuit = bernoulli_ff(0.3);
        let out =
            conditional_sample(&circuit, &[1.0], &EvidenceMask::all_observed(1), 5).unwrap();
        assert_eq!(out, vec![1.0]);
    }

    #[test]
    fn seed_determinism_is_byte_exact() {
        let circuit = bernoulli_ff(0.5);
        let a = ancestral_sample(&circuit, 64, 123).unwrap();
        let b = ancestral_sample(&circuit, 64, 123).unwrap();
        assert_eq!(a, b);
        let c = ancestral_sample(&circuit, 64, 124).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn impossible_evidence_is_detected() {
        let circuit = bernoulli_ff(1.0 - 1e-320);
        // Category 1 has probability ~1e-320 < exp(-700).
        let err =
            conditional_sample(&circuit, &[1.0], &EvidenceMask::all_observed(1), 0).unwrap_err();
        assert!(matches!(err, Error::ImpossibleEvidence));
    }
}
