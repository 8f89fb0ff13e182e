//! Maximum-likelihood training of circuits by minibatch gradient ascent with
//! rectified adaptive moments, a plateau learning-rate scheduler, patience
//! early stopping, and best-validation snapshotting; plus bits-per-dimension
//! reporting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, Evaluator};
use crate::dataset::{ColumnData, Table};
use crate::error::{Error, Result};
use crate::preprocess::MaskTemplate;

/// Row-major training matrix in circuit space (categorical codes stored as
/// their numeric value), with optional per-cell observation flags.
#[derive(Debug, Clone)]
pub struct CircuitData {
    pub n_rows: usize,
    pub n_vars: usize,
    values: Vec<f64>,
    mask: Option<MaskTemplate>,
    all_observed: Vec<bool>,
}

impl CircuitData {
    pub fn from_table(table: &Table) -> Self {
        Self::build(table, None)
    }

    pub fn from_table_with_mask(table: &Table, mask: MaskTemplate) -> Self {
        assert_eq!(mask.n_rows, table.n_rows);
        assert_eq!(mask.n_cols, table.n_columns());
        let mask = if mask.any_marginalized() { Some(mask) } else { None };
        Self::build(table, mask)
    }

    fn build(table: &Table, mask: Option<MaskTemplate>) -> Self {
        let n_rows = table.n_rows;
        let n_vars = table.n_columns();
        let mut values = vec![0.0; n_rows * n_vars];
        for (col, data) in table.columns.iter().enumerate() {
            match data {
                ColumnData::Numerical(v) => {
                    for (row, &x) in v.iter().enumerate() {
                        values[row * n_vars + col] = x;
                    }
                }
                ColumnData::Categorical(v) => {
                    for (row, &c) in v.iter().enumerate() {
                        values[row * n_vars + col] = c as f64;
                    }
                }
            }
        }
        CircuitData { n_rows, n_vars, values, mask, all_observed: vec![true; n_vars] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_vars..(i + 1) * self.n_vars]
    }

    pub fn observed(&self, i: usize) -> &[bool] {
        match &self.mask {
            Some(m) => m.row(i),
            None => &self.all_observed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate multiplier applied when validation NLL fails to improve
    /// over the previous epoch.
    pub scheduler_factor: f64,
    /// Epochs without a new best validation NLL before stopping.
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Relative NLL decrease below which an epoch counts as "no improvement"
    /// for the scheduler.
    pub improvement_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            learning_rate: 0.1,
            scheduler_factor: 0.85,
            patience_epochs: 10,
            max_epochs: 200,
            seed: 0,
            clip_norm: 100.0,
            improvement_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub stopping_epoch: usize,
    pub best_epoch: usize,
    pub wall_seconds: f64,
}

impl TrainHistory {
    pub fn best_val_nll(&self) -> f64 {
        self.epochs.iter().map(|e| e.val_nll).fold(f64::INFINITY, f64::min)
    }

    /// CSV with header `epoch,train_nll,val_nll,lr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_nll,val_nll,lr\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch, e.train_nll, e.val_nll, e.learning_rate
            ));
        }
        out
    }
}

/// Gradient of the mean log-likelihood over `rows`, plus the mean itself.
/// Row passes run in parallel over fixed chunks with an ordered reduction,
/// so the result is independent of thread count.
pub fn gradient(circuit: &Circuit, data: &CircuitData, rows: &[usize]) -> Result<(Vec<f64>, f64)> {
    let evaluator = Evaluator::new(circuit);
    gradient_with(&evaluator, data, rows)
}

pub fn gradient_with(
    evaluator: &Evaluator,
    data: &CircuitData,
    rows: &[usize],
) -> Result<(Vec<f64>, f64)> {
    if rows.is_empty() {
        return Err(Error::InsufficientData("gradient needs a nonempty batch".into()));
    }
    let n_params = evaluator.param_count();
    let chunk = rows.len().div_ceil(rayon::current_num_threads().max(1) * 4).max(16);
    let partials: Vec<Result<(Vec<f64>, f64)>> = rows
        .par_chunks(chunk)
        .map(|chunk_rows| {
            let mut grad = vec![0.0; n_params];
            let mut ll_sum = 0.0;
            for &r in chunk_rows {
                let row = data.row(r);
                let observed = data.observed(r);
                let values = evaluator.forward(row, observed)?;
                let ll = values[evaluator.circuit().root()][0];
                if !ll.is_finite() {
                    return Err(Error::Numeric(format!("non-finite log-density at row {r}")));
                }
                ll_sum += ll;
                evaluator.backward(row, observed, &values, &mut grad);
            }
            Ok((grad, ll_sum))
        })
        .collect();

    let mut grad = vec![0.0; n_params];
    let mut ll_sum = 0.0;
    for partial in partials {
        let (g, l) = partial?;
        for (acc, v) in grad.iter_mut().zip(g.iter()) {
            *acc += v;
        }
        ll_sum += l;
    }
    let scale = 1.0 / rows.len() as f64;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    Ok((grad, ll_sum * scale))
}

/// Mean negative log-likelihood over a dataset.
pub fn mean_nll(circuit: &Circuit, data: &CircuitData) -> Result<f64> {
    let evaluator = Evaluator::new(circuit);
    mean_nll_with(&evaluator, data)
}

fn mean_nll_with(evaluator: &Evaluator, data: &CircuitData) -> Result<f64> {
    if data.n_rows == 0 {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    let rows: Vec<usize> = (0..data.n_rows).collect();
    let chunk = rows.len().div_ceil(rayon::current_num_threads().max(1) * 4).max(64);
    let partials: Vec<Result<f64>> = rows
        .par_chunks(chunk)
        .map(|chunk_rows| {
            let mut sum = 0.0;
            for &r in chunk_rows {
                sum += evaluator.log_density(data.row(r), data.observed(r))?;
            }
            Ok(sum)
        })
        .collect();
    let mut total = 0.0;
    for p in partials {
        total += p?;
    }
    Ok(-total / data.n_rows as f64)
}

/// Bits per dimension: (NLL/N) / (ln 2 · D), NLL in nats over circuit space.
pub fn bpd(circuit: &Circuit, data: &CircuitData) -> Result<f64> {
    let nll = mean_nll(circuit, data)?;
    Ok(nll / (std::f64::consts::LN_2 * circuit.num_vars as f64))
}

/// Adaptive moments with the rectified variance warmup.
struct RectifiedAdam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl RectifiedAdam {
    fn new(n: usize) -> Self {
        RectifiedAdam { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let t = self.t as f64;
        let b1t = self.beta1.powf(t);
        let b2t = self.beta2.powf(t);
        let rho_inf = 2.0 / (1.0 - self.beta2) - 1.0;
        let rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);

        let rect = if rho_t > 4.0 {
            Some(
                (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                    / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                    .sqrt(),
            )
        } else {
            None
        };

        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / (1.0 - b1t);
            let update = match rect {
                Some(r) => {
                    let v_hat = (self.v[i] / (1.0 - b2t)).sqrt();
                    r * m_hat / (v_hat + self.eps)
                }
                None => m_hat,
            };
            params[i] -= lr * update;
        }
    }
}

fn clip_global_norm(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
}

/// Trains by minibatch NLL descent. The learning rate decays whenever the
/// epoch's validation NLL fails to improve on the previous epoch; training
/// stops after `patience_epochs` epochs without a new best validation NLL;
/// the returned circuit carries the best-validation snapshot.
pub fn fit(
    circuit: &Circuit,
    train: &CircuitData,
    val: &CircuitData,
    cfg: &TrainConfig,
) -> Result<(Circuit, TrainHistory)> {
    if val.n_rows == 0 {
        return Err(Error::InsufficientData("validation set is empty".into()));
    }
    let started = std::time::Instant::now();
    let mut circ = circuit.clone();
    circ.renormalize();
    let mut params = circ.export_params();
    let mut optimizer = RectifiedAdam::new(params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let initial_val_nll = mean_nll(&circ, val)?;
    let divergence_cap = 10.0 * initial_val_nll.abs().max(1.0);

    let mut history = TrainHistory {
        epochs: Vec::new(),
        stopping_epoch: 0,
        best_epoch: 0,
        wall_seconds: 0.0,
    };
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut prev_val = initial_val_nll;
    let mut lr = cfg.learning_rate;
    let mut epochs_since_best = 0usize;
    let mut indices: Vec<usize> = (0..train.n_rows).collect();

    for epoch in 0..cfg.max_epochs {
        indices.shuffle(&mut rng);
        let mut epoch_ll = 0.0;
        let mut seen = 0usize;
        for batch in indices.chunks(cfg.batch_size.max(1)) {
            let evaluator = Evaluator::new(&circ);
            let (grad_ll, mean_ll) = gradient_with(&evaluator, train, batch)?;
            epoch_ll += mean_ll * batch.len() as f64;
            seen += batch.len();
            let mut grad_nll: Vec<f64> = grad_ll.iter().map(|g| -g).collect();
            clip_global_norm(&mut grad_nll, cfg.clip_norm);
            optimizer.step(&mut params, &grad_nll, lr);
            circ.import_params(&params);
            circ.renormalize();
            params = circ.export_params();
        }
        let train_nll = -epoch_ll / seen.max(1) as f64;
        let val_nll = mean_nll(&circ, val)?;
        history.epochs.push(EpochStats { epoch, train_nll, val_nll, learning_rate: lr });
        history.stopping_epoch = epoch + 1;

        if val_nll.is_nan() || val_nll > divergence_cap {
            history.wall_seconds = started.elapsed().as_secs_f64();
            return Err(Error::Divergence(format!(
                "validation NLL {val_nll} exceeded {divergence_cap} (initial {initial_val_nll}); \
                 {} epochs recorded",
                history.epochs.len()
            )));
        }

        if val_nll < best_val {
            best_val = val_nll;
            best_params = params.clone();
            history.best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
        }

        // Plateau scheduler, relative to the previous epoch's validation NLL.
        let improved = prev_val - val_nll >= cfg.improvement_tol * prev_val.abs().max(1e-12);
        if !improved {
            lr *= cfg.scheduler_factor;
        }
        prev_val = val_nll;

        if epochs_since_best >= cfg.patience_epochs {
            break;
        }
    }

    circ.import_params(&best_params);
    history.wall_seconds = started.elapsed().as_secs_f64();
    Ok((circ, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{single_gaussian, EvidenceMask};
    use crate::dataset::{ColumnData, ColumnSchema, Table};
    use crate::structure::{build_ff, build_sm, LAPLACE_ALPHA};

    fn gaussian_table(values: Vec<f64>) -> Table {
        Table::new(vec![ColumnSchema::numerical("x")], vec![ColumnData::Numerical(values)])
    }

    #[test]
    fn gradient_at_gaussian_mean_is_zero() {
        let circuit = single_gaussian(1.5, 0.0);
        let data = CircuitData::from_table(&gaussian_table(vec![1.5]));
        let (grad, _) = gradient(&circuit, &data, &[0]).unwrap();
        // Parameter 0 is the mean.
        assert!(grad[0].abs() < 1e-12);
    }

    #[test]
    fn gradient_is_invariant_to_row_duplication() {
        let circuit = single_gaussian(0.2, -0.1);
        let data = CircuitData::from_table(&gaussian_table(vec![0.7, -0.4, 1.1]));
        let (g1, ll1) = gradient(&circuit, &data, &[0, 1, 2]).unwrap();
        let (g2, ll2) = gradient(&circuit, &data, &[0, 1, 2, 0, 1, 2]).unwrap();
        for (a, b) in g1.iter().zip(g2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((ll1 - ll2).abs() < 1e-12);
    }

    #[test]
    fn bpd_of_uniform_categoricals() {
        let table = Table::new(
            vec![ColumnSchema::categorical("y", &["a", "b"])],
            vec![ColumnData::Categorical(vec![0, 1, 0, 1])],
        );
        let ff = build_ff(&table, None, 0.0).unwrap();
        let data = CircuitData::from_table(&table);
        assert!((bpd(&ff, &data).unwrap() - 1.0).abs() < 1e-12);

        let table4 = Table::new(
            vec![ColumnSchema::categorical("y", &["a", "b", "c", "d"])],
            vec![ColumnData::Categorical(vec![0, 1, 2, 3])],
        );
        let ff4 = build_ff(&table4, None, 0.0).unwrap();
        assert!((bpd(&ff4, &CircuitData::from_table(&table4)).unwrap() - 2.0).abs() < 1e-12);

        let table2 = Table::new(
            vec![
                ColumnSchema::categorical("y", &["a", "b"]),
                ColumnSchema::categorical("z", &["a", "b"]),
            ],
            vec![
                ColumnData::Categorical(vec![0, 1, 0, 1]),
                ColumnData::Categorical(vec![0, 0, 1, 1]),
            ],
        );
        let ff2 = build_ff(&table2, None, 0.0).unwrap();
        assert!((bpd(&ff2, &CircuitData::from_table(&table2)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sm_k1_trains_to_the_closed_form_optimum() {
        // Deterministic pseudo-Gaussian data; the K=1 mixture shares the FF
        // parametric family, so trained NLL must approach the MLE oracle.
        let n = 400;
        let values: Vec<f64> = (0..n)
            .map(|i| {
                let u = (i as f64 + 0.5) / n as f64;
                2.0 + 0.7 * crate::math::std_normal_quantile(u)
            })
            .collect();
        let table = gaussian_table(values);
        let data = CircuitData::from_table(&table);

        let ff = build_ff(&table, None, LAPLACE_ALPHA).unwrap();
        let oracle_nll = mean_nll(&ff, &data).unwrap();

        let sm = build_sm(&table.schema, 1, 9).unwrap();
        let cfg = TrainConfig {
            batch_size: 100,
            learning_rate: 0.05,
            max_epochs: 300,
            patience_epochs: 30,
            ..Default::default()
        };
        let (trained, history) = fit(&sm, &data, &data, &cfg).unwrap();
        let trained_nll = mean_nll(&trained, &data).unwrap();
        assert!(
            trained_nll - oracle_nll <= 1e-3,
            "trained {trained_nll} vs oracle {oracle_nll} after {} epochs",
            history.stopping_epoch
        );
    }

    #[test]
    fn fit_is_deterministic_given_seed() {
        let values: Vec<f64> = (0..200).map(|i| ((i * 7) % 31) as f64 / 10.0).collect();
        let table = gaussian_table(values);
        let data = CircuitData::from_table(&table);
        let sm = build_sm(&table.schema, 3, 4).unwrap();
        let cfg = TrainConfig { max_epochs: 5, patience_epochs: 10, ..Default::default() };
        let (c1, h1) = fit(&sm, &data, &data, &cfg).unwrap();
        let (c2, h2) = fit(&sm, &data, &data, &cfg).unwrap();
        assert_eq!(c1.export_params(), c2.export_params());
        assert_eq!(h1.epochs.len(), h2.epochs.len());
    }

    #[test]
    fn best_snapshot_matches_history_minimum() {
        let values: Vec<f64> = (0..300).map(|i| (i as f64 * 0.777).sin()).collect();
        let table = gaussian_table(values);
        let data = CircuitData::from_table(&table);
        let sm = build_sm(&table.schema, 4, 11).unwrap();
        let cfg = TrainConfig {
            max_epochs: 20,
            patience_epochs: 20,
            learning_rate: 0.2,
            ..Default::default()
        };
        let (best, history) = fit(&sm, &data, &data, &cfg).unwrap();
        let best_recorded = history.best_val_nll();
        let achieved = mean_nll(&best, &data).unwrap();
        assert!((achieved - best_recorded).abs() < 1e-12);
        assert_eq!(
            history.epochs[history.best_epoch].val_nll, best_recorded,
            "best epoch index disagrees with history minimum"
        );
    }

    #[test]
    fn early_stopping_respects_patience() {
        // A model that converges almost immediately must stop within
        // patience + a few epochs of the best one.
        let values: Vec<f64> = (0..100).map(|i| (i % 10) as f64 / 10.0).collect();
        let table = gaussian_table(values);
        let data = CircuitData::from_table(&table);
        let sm = build_sm(&table.schema, 1, 0).unwrap();
        let cfg = TrainConfig {
            patience_epochs: 10,
            max_epochs: 100,
            learning_rate: 0.3,
            ..Default::default()
        };
        let (_, history) = fit(&sm, &data, &data, &cfg).unwrap();
        assert!(history.stopping_epoch <= history.best_epoch + 1 + 10);
    }

    #[test]
    fn likelihood_ascends_during_first_epoch() {
        for seed in 0..5u64 {
            let values: Vec<f64> =
                (0..256).map(|i| ((i * 13 + 7) % 101) as f64 / 25.0 - 2.0).collect();
            let table = gaussian_table(values);
            let data = CircuitData::from_table(&table);
            let sm = build_sm(&table.schema, 4, seed).unwrap();
            let before = mean_nll(&sm, &data).unwrap();
            let cfg = TrainConfig {
                learning_rate: 1e-3,
                max_epochs: 1,
                patience_epochs: 5,
                seed,
                ..Default::default()
            };
            let (after_circuit, _) = fit(&sm, &data, &data, &cfg).unwrap();
            let after = mean_nll(&after_circuit, &data).unwrap();
            assert!(after <= before + 1e-9, "seed {seed}: {after} > {before}");
        }
    }

    #[test]
    fn masked_cells_do_not_contribute() {
        let table = gaussian_table(vec![5.0, 0.1]);
        let mut mask = crate::preprocess::MaskTemplate::all_observed(2, 1);
        mask.set_marginalized(0, 0);
        let data = CircuitData::from_table_with_mask(&table, mask);
        let circuit = single_gaussian(0.0, 0.0);
        let eval = Evaluator::new(&circuit);
        let ld = eval.log_density(data.row(0), data.observed(0)).unwrap();
        assert_eq!(ld, 0.0);
        let direct = circuit
            .log_density(&[0.1], &EvidenceMask::all_observed(1))
            .unwrap();
        let ld1 = eval.log_density(data.row(1), data.observed(1)).unwrap();
        assert!((ld1 - direct).abs() < 1e-15);
    }
}
