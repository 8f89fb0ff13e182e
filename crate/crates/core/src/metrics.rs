//! Synthetic-data evaluation suite: per-column marginal fidelity (Shape),
//! pairwise Trend, mutual-information similarities (NMI / NMIS / weighted
//! NMIS), classifier two-sample tests with a pluggable discriminator,
//! machine-learning efficacy, and both distance-to-closest-record variants.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    auroc, encode_features, fit_gbt, fit_logistic, FeatureMatrix, GbtConfig, Loss,
};
use crate::dataset::{ColumnData, ColumnKind, Table};
use crate::error::{Error, Result};
use crate::math::{bin_index, equal_frequency_edges, ks_two_sample, pearson};

/// Equal-frequency bins for MI-based discretization.
pub const NMI_BINS: usize = 20;
/// Equal-frequency bins for Trend's mixed-pair rule.
pub const TREND_BINS: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_column: Option<Vec<(String, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_pair: Option<Vec<(String, String, f64)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classifier: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub n_real: usize,
    pub n_synth: usize,
}

impl MetricReport {
    fn new(metric: &str, score: f64, real: &Table, synth: &Table) -> Self {
        MetricReport {
            metric: metric.to_string(),
            score,
            per_column: None,
            per_pair: None,
            classifier: None,
            seed: None,
            n_real: real.n_rows,
            n_synth: synth.n_rows,
        }
    }
}

fn check_schemas(real: &Table, synth: &Table) -> Result<()> {
    if real.n_columns() != synth.n_columns() {
        return Err(Error::SchemaMismatch(format!(
            "real has {} columns, synthetic has {}",
            real.n_columns(),
            synth.n_columns()
        )));
    }
    for (r, s) in real.schema.iter().zip(synth.schema.iter()) {
        if r.name != s.name || r.kind != s.kind {
            return Err(Error::SchemaMismatch(format!(
                "column '{}' does not match '{}'",
                r.name, s.name
            )));
        }
    }
    Ok(())
}

/// Categorical frequency vector over the column's full category range.
fn category_frequencies(codes: &[u32], cardinality: usize) -> Vec<f64> {
    let mut counts = vec![0usize; cardinality];
    for &c in codes {
        counts[(c as usize).min(cardinality - 1)] += 1;
    }
    let n = codes.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

fn tvd(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Per-column marginal fidelity: `1 − KS` for numerical columns and
/// `1 − TVD` for categorical ones, averaged over columns.
pub fn shape(real: &Table, synth: &Table) -> Result<MetricReport> {
    check_schemas(real, synth)?;
    let mut per_column = Vec::with_capacity(real.n_columns());
    for (col, s) in real.schema.iter().enumerate() {
        let score = match (&real.columns[col], &synth.columns[col]) {
            (ColumnData::Numerical(r), ColumnData::Numerical(g)) => 1.0 - ks_two_sample(r, g),
            (ColumnData::Categorical(r), ColumnData::Categorical(g)) => {
                let card = s.cardinality().max(1);
                1.0 - tvd(&category_frequencies(r, card), &category_frequencies(g, card))
            }
            _ => unreachable!("schemas checked above"),
        };
        per_column.push((s.name.clone(), score));
    }
    let score = per_column.iter().map(|(_, s)| s).sum::<f64>() / per_column.len() as f64;
    let mut report = MetricReport::new("shape", score, real, synth);
    report.per_column = Some(per_column);
    Ok(report)
}

/// Joint contingency probabilities of two discrete code vectors.
fn joint_probabilities(x: &[usize], sx: usize, y: &[usize], sy: usize) -> Vec<f64> {
    let mut counts = vec![0usize; sx * sy];
    for (&a, &b) in x.iter().zip(y.iter()) {
        counts[a * sy + b] += 1;
    }
    let n = x.len().max(1) as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

/// Discrete codes for a column within a Trend pair. Numerical columns are cut
/// on the reference `edges` (derived from the real data) so real and
/// synthetic land in comparable cells.
fn trend_codes(column: &ColumnData, edges: Option<&[f64]>, cardinality: usize) -> (Vec<usize>, usize) {
    match column {
        ColumnData::Categorical(codes) => {
            (codes.iter().map(|&c| c as usize).collect(), cardinality)
        }
        ColumnData::Numerical(values) => {
            let edges = edges.expect("numerical trend column needs reference edges");
            (values.iter().map(|&v| bin_index(v, edges)).collect(), edges.len() + 1)
        }
    }
}

/// Pairwise dependency fidelity: Pearson-correlation similarity for
/// continuous pairs, contingency total-variation similarity for categorical
/// pairs, and the contingency rule after discretizing the numerical side of
/// mixed pairs; averaged over all unique pairs.
pub fn trend(real: &Table, synth: &Table, bins: usize) -> Result<MetricReport> {
    check_schemas(real, synth)?;
    let d = real.n_columns();
    if d < 2 {
        return Err(Error::InsufficientData("trend needs at least two columns".into()));
    }
    let mut per_pair = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in (i + 1)..d {
            let both_numerical = real.schema[i].kind == ColumnKind::Numerical
                && real.schema[j].kind == ColumnKind::Numerical;
            let score = if both_numerical {
                let rho_r =
                    pearson(real.columns[i].as_numerical(), real.columns[j].as_numerical());
                let rho_s =
                    pearson(synth.columns[i].as_numerical(), synth.columns[j].as_numerical());
                1.0 - 0.5 * (rho_r - rho_s).abs()
            } else {
                let edges_i = edges_for(&real.columns[i], bins);
                let edges_j = edges_for(&real.columns[j], bins);
                let card_i = real.schema[i].cardinality().max(1);
                let card_j = real.schema[j].cardinality().max(1);
                let (ri, si) = trend_codes(&real.columns[i], edges_i.as_deref(), card_i);
                let (rj, sj) = trend_codes(&real.columns[j], edges_j.as_deref(), card_j);
                let (gi, _) = trend_codes(&synth.columns[i], edges_i.as_deref(), card_i);
                let (gj, _) = trend_codes(&synth.columns[j], edges_j.as_deref(), card_j);
                let pr = joint_probabilities(&ri, si, &rj, sj);
                let ps = joint_probabilities(&gi, si, &gj, sj);
                1.0 - 0.5 * pr.iter().zip(ps.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>()
            };
            per_pair.push((real.schema[i].name.clone(), real.schema[j].name.clone(), score));
        }
    }
    let score = per_pair.iter().map(|(_, _, s)| s).sum::<f64>() / per_pair.len() as f64;
    let mut report = MetricReport::new("trend", score, real, synth);
    report.per_pair = Some(per_pair);
    Ok(report)
}

fn edges_for(column: &ColumnData, bins: usize) -> Option<Vec<f64>> {
    match column {
        ColumnData::Numerical(values) => Some(equal_frequency_edges(values, bins)),
        ColumnData::Categorical(_) => None,
    }
}

/// Normalized mutual information `2·I / (H(x) + H(y))` from the plug-in
/// estimate on the (rank-binned) joint; defined as 0 when either column has
/// fewer than two distinct binned values.
pub fn nmi(x: &ColumnData, y: &ColumnData, bins: usize) -> f64 {
    let (cx, sx) = own_codes(x, bins);
    let (cy, sy) = own_codes(y, bins);
    let n = cx.len() as f64;
    let mut joint = vec![0usize; sx * sy];
    let mut mx = vec![0usize; sx];
    let mut my = vec![0usize; sy];
    for (&a, &b) in cx.iter().zip(cy.iter()) {
        joint[a * sy + b] += 1;
        mx[a] += 1;
        my[b] += 1;
    }
    let entropy = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let hx = entropy(&mx);
    let hy = entropy(&my);
    if hx <= 0.0 || hy <= 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for a in 0..sx {
        for b in 0..sy {
            let c = joint[a * sy + b];
            if c > 0 {
                let p = c as f64 / n;
                let px = mx[a] as f64 / n;
                let py = my[b] as f64 / n;
                mi += p * (p / (px * py)).ln();
            }
        }
    }
    (2.0 * mi.max(0.0) / (hx + hy)).clamp(0.0, 1.0)
}

/// Rank-based codes of a column using its own quantile edges, so strictly
/// monotone per-column transforms leave the codes unchanged.
fn own_codes(column: &ColumnData, bins: usize) -> (Vec<usize>, usize) {
    match column {
        ColumnData::Categorical(codes) => {
            let card = codes.iter().map(|&c| c as usize + 1).max().unwrap_or(1);
            (codes.iter().map(|&c| c as usize).collect(), card)
        }
        ColumnData::Numerical(values) => {
            let edges = equal_frequency_edges(values, bins);
            (values.iter().map(|&v| bin_index(v, &edges)).collect(), edges.len() + 1)
        }
    }
}

struct PairSimilarity {
    name_i: String,
    name_j: String,
    nmis: f64,
    weight: f64,
}

fn nmi_pair_similarities(real: &Table, synth: &Table, bins: usize) -> Result<Vec<PairSimilarity>> {
    check_schemas(real, synth)?;
    let d = real.n_columns();
    if d < 2 {
        return Err(Error::InsufficientData("NMI similarity needs at least two columns".into()));
    }
    let pairs: Vec<(usize, usize)> =
        (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).collect();
    let sims: Vec<(f64, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let nmi_r = nmi(&real.columns[i], &real.columns[j], bins);
            let nmi_s = nmi(&synth.columns[i], &synth.columns[j], bins);
            (1.0 - (nmi_r - nmi_s).abs(), (nmi_r + nmi_s).abs())
        })
        .collect();
    Ok(pairs
        .iter()
        .zip(sims)
        .map(|(&(i, j), (nmis, weight))| PairSimilarity {
            name_i: real.schema[i].name.clone(),
            name_j: real.schema[j].name.clone(),
            nmis,
            weight,
        })
        .collect())
}

/// Weighted NMI similarity: per pair `1 − |NMI_R − NMI_S|`, weighted by the
/// normalized `|NMI_R + NMI_S|`. All-zero weights fall back to the unweighted
/// mean.
pub fn wnmis(real: &Table, synth: &Table, bins: usize) -> Result<MetricReport> {
    let pairs = nmi_pair_similarities(real, synth, bins)?;
    let total_weight: f64 = pairs.iter().map(|p| p.weight).sum();
    let score = if total_weight > 0.0 {
        pairs.iter().map(|p| p.weight * p.nmis).sum::<f64>() / total_weight
    } else {
        pairs.iter().map(|p| p.nmis).sum::<f64>() / pairs.len() as f64
    };
    let mut report = MetricReport::new("wnmis", score, real, synth);
    report.per_pair =
        Some(pairs.into_iter().map(|p| (p.name_i, p.name_j, p.nmis)).collect());
    Ok(report)
}

/// Unweighted NMI similarity: every pair contributes equally.
pub fn nmis_unweighted(real: &Table, synth: &Table, bins: usize) -> Result<MetricReport> {
    let pairs = nmi_pair_similarities(real, synth, bins)?;
    let score = pairs.iter().map(|p| p.nmis).sum::<f64>() / pairs.len() as f64;
    let mut report = MetricReport::new("nmis", score, real, synth);
    report.per_pair =
        Some(pairs.into_iter().map(|p| (p.name_i, p.name_j, p.nmis)).collect());
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum C2stClassifier {
    Logistic,
    Gbt,
}

impl std::fmt::Display for C2stClassifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            C2stClassifier::Logistic => write!(f, "logistic"),
            C2stClassifier::Gbt => write!(f, "gbt"),
        }
    }
}

/// The score map `1 − (2·max(AUROC, 0.5) − 1)`: 1 means the classifier
/// cannot tell real from synthetic.
pub fn c2st_score_from_auroc(auroc: f64) -> f64 {
    1.0 - (2.0 * auroc.max(0.5) - 1.0)
}

/// Classifier two-sample test: label real 1 / synthetic 0, split the
/// size-matched concatenation 50/50 stratified, train the chosen classifier,
/// and map its held-out AUROC through the score formula.
pub fn c2st(
    real: &Table,
    synth: &Table,
    classifier: C2stClassifier,
    seed: u64,
) -> Result<MetricReport> {
    check_schemas(real, synth)?;
    let m = real.n_rows.min(synth.n_rows);
    if m < 20 {
        return Err(Error::InsufficientData(format!(
            "two-sample test needs at least 20 rows per class, got {m}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real_rows = subsample(real.n_rows, m, &mut rng);
    let synth_rows = subsample(synth.n_rows, m, &mut rng);

    let x_real = encode_features(&real.select_rows(&real_rows));
    let x_synth = encode_features(&synth.select_rows(&synth_rows));

    // Stratified 50/50 split of each class, then concatenation.
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let half = m / 2;
    let (train_idx, test_idx) = order.split_at(half);

    let x_train = x_real.select_rows(train_idx).vstack(&x_synth.select_rows(train_idx));
    let x_test = x_real.select_rows(test_idx).vstack(&x_synth.select_rows(test_idx));
    let y_train: Vec<bool> = (0..half).map(|_| true).chain((0..half).map(|_| false)).collect();
    let y_test: Vec<bool> = (0..test_idx.len())
        .map(|_| true)
        .chain((0..test_idx.len()).map(|_| false))
        .collect();

    let scores = match classifier {
        C2stClassifier::Logistic => {
            let model = fit_logistic(&x_train, &y_train)?;
            model.scores(&x_test)
        }
        C2stClassifier::Gbt => {
            let y: Vec<f64> = y_train.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            let model = fit_gbt(&x_train, &y, &GbtConfig::default())?;
            model.scores(&x_test)
        }
    };
    let a = auroc(&scores, &y_test);
    let mut report =
        MetricReport::new("c2st", c2st_score_from_auroc(a), real, synth);
    report.classifier = Some(classifier.to_string());
    report.seed = Some(seed);
    report.metric = format!("c2st-{classifier}");
    Ok(report)
}

fn subsample(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut indices: Vec<usize> = (0..n).collect();
    if m < n {
        indices.shuffle(rng);
        indices.truncate(m);
        indices.sort_unstable();
    }
    indices
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MlTask {
    Classification,
    Regression,
}

/// Machine-learning efficacy: an 8:1 fit/validation split of the synthetic
/// training data drives a small boosted-tree grid search (depth {3, 6} ×
/// trees {50, 100}); the selected model is scored on real held-out data as
/// AUROC (classification, higher better) or RMSE (regression, lower better).
/// The two are incomparable and are never averaged across tasks.
pub fn ml_efficacy(
    synth_train: &Table,
    real_test: &Table,
    target: &str,
    task: MlTask,
    seed: u64,
) -> Result<MetricReport> {
    check_schemas(synth_train, real_test)?;
    let target_col = synth_train
        .column_index(target)
        .ok_or_else(|| Error::Usage(format!("target column '{target}' not found")))?;

    let feature_cols: Vec<usize> =
        (0..synth_train.n_columns()).filter(|&c| c != target_col).collect();
    let strip = |t: &Table| -> Table {
        Table::new(
            feature_cols.iter().map(|&c| t.schema[c].clone()).collect(),
            feature_cols.iter().map(|&c| t.columns[c].clone()).collect(),
        )
    };
    let extract_target = |t: &Table| -> Result<Vec<f64>> {
        match (&t.columns[target_col], task) {
            (ColumnData::Numerical(v), MlTask::Regression) => Ok(v.clone()),
            (ColumnData::Categorical(v), MlTask::Classification) => {
                if t.schema[target_col].cardinality() != 2 {
                    return Err(Error::DegenerateTarget(format!(
                        "classification efficacy expects a binary target, '{target}' has {} categories",
                        t.schema[target_col].cardinality()
                    )));
                }
                Ok(v.iter().map(|&c| c as f64).collect())
            }
            _ => Err(Error::Usage(format!(
                "target '{target}' kind does not match the {task:?} task"
            ))),
        }
    };

    let x_synth = encode_features(&strip(synth_train));
    let y_synth = extract_target(synth_train)?;
    let x_test = encode_features(&strip(real_test));
    let y_test = extract_target(real_test)?;

    // 8:1 fit/validation split.
    let mut order: Vec<usize> = (0..synth_train.n_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_fit = synth_train.n_rows * 8 / 9;
    let (fit_idx, val_idx) = order.split_at(n_fit.max(1));
    let x_fit = x_synth.select_rows(fit_idx);
    let y_fit: Vec<f64> = fit_idx.iter().map(|&i| y_synth[i]).collect();
    let x_val = x_synth.select_rows(val_idx);
    let y_val: Vec<f64> = val_idx.iter().map(|&i| y_synth[i]).collect();

    let loss = match task {
        MlTask::Classification => Loss::Logistic,
        MlTask::Regression => Loss::Squared,
    };
    let mut best: Option<(f64, crate::classify::GbtModel)> = None;
    for &depth in &[3usize, 6] {
        for &trees in &[50usize, 100] {
            let cfg = GbtConfig { n_trees: trees, max_depth: depth, loss, ..Default::default() };
            let model = fit_gbt(&x_fit, &y_fit, &cfg)?;
            let val_score = holdout_score(&model, &x_val, &y_val, task);
            let better = match (&best, task) {
                (None, _) => true,
                (Some((b, _)), MlTask::Classification) => val_score > *b,
                (Some((b, _)), MlTask::Regression) => val_score < *b,
            };
            if better {
                best = Some((val_score, model));
            }
        }
    }
    let (_, model) = best.expect("grid is nonempty");
    let score = holdout_score(&model, &x_test, &y_test, task);

    let mut report = MetricReport::new("ml-efficacy", score, real_test, synth_train);
    report.classifier = Some("gbt".into());
    report.seed = Some(seed);
    Ok(report)
}

fn holdout_score(
    model: &crate::classify::GbtModel,
    x: &FeatureMatrix,
    y: &[f64],
    task: MlTask,
) -> f64 {
    let scores = model.scores(x);
    match task {
        MlTask::Classification => {
            let labels: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
            auroc(&scores, &labels)
        }
        MlTask::Regression => {
            let mse = scores.iter().zip(y.iter()).map(|(s, t)| (s - t) * (s - t)).sum::<f64>()
                / y.len().max(1) as f64;
            mse.sqrt()
        }
    }
}

/// Column ranges of the reference table, used to normalize numerical gaps.
fn column_ranges(reference: &Table) -> Vec<Option<f64>> {
    reference
        .columns
        .iter()
        .map(|c| match c {
            ColumnData::Numerical(v) => {
                let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Some(hi - lo)
            }
            ColumnData::Categorical(_) => None,
        })
        .collect()
}

fn row_distance(a: &Table, i: usize, b: &Table, j: usize, ranges: &[Option<f64>]) -> f64 {
    let d = a.n_columns() as f64;
    let mut total = 0.0;
    for (col, range) in ranges.iter().enumerate() {
        total += match (&a.columns[col], &b.columns[col]) {
            (ColumnData::Numerical(x), ColumnData::Numerical(y)) => {
                let gap = (x[i] - y[j]).abs();
                match range {
                    Some(r) if *r > 0.0 => (gap / r).min(1.0),
                    _ => {
                        if gap > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                }
            }
            (ColumnData::Categorical(x), ColumnData::Categorical(y)) => {
                if x[i] == y[j] {
                    0.0
                } else {
                    1.0
                }
            }
            _ => unreachable!("schemas checked by callers"),
        };
    }
    total / d
}

fn min_distances(queries: &Table, reference: &Table, ranges: &[Option<f64>]) -> Vec<f64> {
    (0..queries.n_rows)
        .into_par_iter()
        .map(|i| {
            let mut best = f64::INFINITY;
            for j in 0..reference.n_rows {
                let dist = row_distance(queries, i, reference, j, ranges);
                if dist < best {
                    best = dist;
                }
            }
            best
        })
        .collect()
}

/// Quantile DCR: the percentage of synthetic rows whose distance to the
/// closest training record falls below the q-quantile of the test rows' own
/// closest-record distances. Values near 100·q indicate no memorization.
pub fn dcr_quantile(train: &Table, test: &Table, synth: &Table, q: f64) -> Result<f64> {
    check_schemas(train, test)?;
    check_schemas(train, synth)?;
    if !(0.0..1.0).contains(&q) || q == 0.0 {
        return Err(Error::Usage(format!("quantile must lie in (0,1), got {q}")));
    }
    let ranges = column_ranges(train);
    let mut test_dists = min_distances(test, train, &ranges);
    let synth_dists = min_distances(synth, train, &ranges);
    test_dists.sort_by(f64::total_cmp);
    let threshold = crate::math::quantile_sorted(&test_dists, q);
    let below = synth_dists.iter().filter(|&&d| d < threshold).count();
    Ok(100.0 * below as f64 / synth_dists.len().max(1) as f64)
}

/// Original DCR: the probability that a synthetic row is strictly closer to
/// the training set than to the holdout set; ties count one half.
pub fn dcr_probability(train: &Table, holdout: &Table, synth: &Table) -> Result<f64> {
    check_schemas(train, holdout)?;
    check_schemas(train, synth)?;
    let ranges = column_ranges(train);
    let to_train = min_distances(synth, train, &ranges);
    let to_holdout = min_distances(synth, holdout, &ranges);
    let score: f64 = to_train
        .iter()
        .zip(to_holdout.iter())
        .map(|(a, b)| {
            if a < b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            }
        })
        .sum();
    Ok(score / to_train.len().max(1) as f64)
}

/// Average ranks across datasets (higher score = better rank). `None` entries
/// take the worst possible rank; ties share the midrank.
pub fn average_ranks(scores_by_method: &[Vec<Option<f64>>]) -> Vec<f64> {
    let n_methods = scores_by_method.len();
    if n_methods == 0 {
        return Vec::new();
    }
    let n_datasets = scores_by_method[0].len();
    let mut totals = vec![0.0; n_methods];
    for ds in 0..n_datasets {
        let mut present: Vec<(usize, f64)> = scores_by_method
            .iter()
            .enumerate()
            .filter_map(|(m, row)| row[ds].map(|s| (m, s)))
            .collect();
        present.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut i = 0;
        while i < present.len() {
            let mut j = i;
            while j < present.len() && present[j].1 == present[i].1 {
                j += 1;
            }
            let midrank = (i + 1 + j) as f64 / 2.0;
            for &(m, _) in &present[i..j] {
                totals[m] += midrank;
            }
            i = j;
        }
        for (m, row) in scores_by_method.iter().enumerate() {
            if row[ds].is_none() {
                totals[m] += n_methods as f64;
            }
        }
    }
    totals.into_iter().map(|t| t / n_datasets.max(1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ColumnSchema;

    fn mixed_table(n: usize, phase: f64) -> Table {
        let a: Vec<f64> = (0..n).map(|i| ((i as f64 + phase) * 0.37).sin() * 3.0).collect();
        let b: Vec<u32> = (0..n).map(|i| ((i as f64 + phase) as usize % 3) as u32).collect();
        let c: Vec<f64> = a.iter().map(|v| v * 0.5 + 1.0).collect();
        Table::new(
            vec![
                ColumnSchema::numerical("a"),
                ColumnSchema::categorical("b", &["x", "y", "z"]),
                ColumnSchema::numerical("c"),
            ],
            vec![
                ColumnData::Numerical(a),
                ColumnData::Categorical(b),
                ColumnData::Numerical(c),
            ],
        )
    }

    fn permuted_copy(table: &Table, seed: u64) -> Table {
        let mut rows: Vec<usize> = (0..table.n_rows).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rows.shuffle(&mut rng);
        table.select_rows(&rows)
    }

    #[test]
    fn permuted_copy_scores_exactly_one() {
        let real = mixed_table(500, 0.0);
        let synth = permuted_copy(&real, 9);
        assert_eq!(shape(&real, &synth).unwrap().score, 1.0);
        assert_eq!(trend(&real, &synth, TREND_BINS).unwrap().score, 1.0);
        assert_eq!(wnmis(&real, &synth, NMI_BINS).unwrap().score, 1.0);
        assert_eq!(nmis_unweighted(&real, &synth, NMI_BINS).unwrap().score, 1.0);
    }

    #[test]
    fn shape_detects_disjoint_and_flipped_marginals() {
        let real = Table::new(
            vec![ColumnSchema::numerical("a"), ColumnSchema::categorical("b", &["x", "y"])],
            vec![
                ColumnData::Numerical(vec![0.0, 1.0, 2.0]),
                ColumnData::Categorical(vec![0, 0, 0]),
            ],
        );
        let synth = Table::new(
            real.schema.clone(),
            vec![
                ColumnData::Numerical(vec![10.0, 11.0, 12.0]),
                ColumnData::Categorical(vec![1, 1, 1]),
            ],
        );
        let report = shape(&real, &synth).unwrap();
        let cols = report.per_column.unwrap();
        assert_eq!(cols[0].1, 0.0);
        assert_eq!(cols[1].1, 0.0);
    }

    #[test]
    fn trend_pearson_arithmetic() {
        // Single continuous pair with ρ_R = 1 and ρ_S = −1 scores 0.
        let xs: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let real = Table::new(
            vec![ColumnSchema::numerical("a"), ColumnSchema::numerical("b")],
            vec![ColumnData::Numerical(xs.clone()), ColumnData::Numerical(xs.clone())],
        );
        let neg: Vec<f64> = xs.iter().map(|v| -v).collect();
        let synth = Table::new(
            real.schema.clone(),
            vec![ColumnData::Numerical(xs.clone()), ColumnData::Numerical(neg)],
        );
        assert!((trend(&real, &synth, TREND_BINS).unwrap().score - 0.0).abs() < 1e-12);
    }

    #[test]
    fn nmi_identical_and_independent_columns() {
        let x = ColumnData::Categorical((0..1000).map(|i| (i % 2) as u32).collect());
        assert!((nmi(&x, &x, NMI_BINS) - 1.0).abs() < 1e-12);

        // Exact product joint.
        let a = ColumnData::Categorical((0..1000).map(|i| ((i / 2) % 2) as u32).collect());
        let b = ColumnData::Categorical((0..1000).map(|i| (i % 2) as u32).collect());
        assert_eq!(nmi(&a, &b, NMI_BINS), 0.0);
    }

    #[test]
    fn nmi_matches_contingency_oracle() {
        // Joint [[0.4, 0.1], [0.1, 0.4]] over 1000 rows.
        let mut xa = Vec::new();
        let mut xb = Vec::new();
        for (a, b, count) in [(0u32, 0u32, 400usize), (0, 1, 100), (1, 0, 100), (1, 1, 400)] {
            for _ in 0..count {
                xa.push(a);
                xb.push(b);
            }
        }
        let expect_mi = 2.0 * 0.4 * (0.4f64 / 0.25).ln() + 2.0 * 0.1 * (0.1f64 / 0.25).ln();
        let h = std::f64::consts::LN_2;
        let expect = 2.0 * expect_mi / (2.0 * h);
        let got = nmi(&ColumnData::Categorical(xa), &ColumnData::Categorical(xb), NMI_BINS);
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn wnmis_falls_back_to_unweighted_on_independence() {
        // Alternating patterns with coprime periods: essentially independent
        // columns on both sides, so all weights sit near zero.
        let n = 20_000;
        let real = Table::new(
            vec![
                ColumnSchema::categorical("a", &["0", "1"]),
                ColumnSchema::categorical("b", &["0", "1", "2"]),
            ],
            vec![
                ColumnData::Categorical((0..n).map(|i| ((i / 2) % 2) as u32).collect()),
                ColumnData::Categorical((0..n).map(|i| (i % 3) as u32).collect()),
            ],
        );
        let synth = Table::new(
            real.schema.clone(),
            vec![
                ColumnData::Categorical((0..n).map(|i| ((i / 3) % 2) as u32).collect()),
                ColumnData::Categorical((0..n).map(|i| ((i + 1) % 3) as u32).collect()),
            ],
        );
        let report = wnmis(&real, &synth, NMI_BINS).unwrap();
        assert!(report.score > 0.99, "score={}", report.score);
    }

    #[test]
    fn single_pair_wnmis_equals_unweighted() {
        let real = mixed_table(300, 0.0);
        let two = Table::new(
            real.schema[..2].to_vec(),
            real.columns[..2].to_vec(),
        );
        let synth = mixed_table(300, 11.0);
        let synth_two = Table::new(synth.schema[..2].to_vec(), synth.columns[..2].to_vec());
        let a = wnmis(&two, &synth_two, NMI_BINS).unwrap().score;
        let b = nmis_unweighted(&two, &synth_two, NMI_BINS).unwrap().score;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn c2st_formula_spot_values() {
        assert_eq!(c2st_score_from_auroc(0.5), 1.0);
        assert_eq!(c2st_score_from_auroc(0.75), 0.5);
        assert_eq!(c2st_score_from_auroc(1.0), 0.0);
        assert_eq!(c2st_score_from_auroc(0.25), 1.0);
    }

    #[test]
    fn c2st_detects_a_shifted_feature() {
        let real = mixed_table(400, 0.0);
        let mut synth = mixed_table(400, 0.5);
        if let ColumnData::Numerical(v) = &mut synth.columns[0] {
            for x in v.iter_mut() {
                *x += 100.0;
            }
        }
        let report = c2st(&real, &synth, C2stClassifier::Gbt, 0).unwrap();
        assert!(report.score <= 0.01, "score={}", report.score);
    }

    #[test]
    fn c2st_needs_enough_rows() {
        let real = mixed_table(10, 0.0);
        let synth = mixed_table(10, 1.0);
        assert!(matches!(
            c2st(&real, &synth, C2stClassifier::Logistic, 0).unwrap_err(),
            Error::InsufficientData(_)
        ));
    }

    #[test]
    fn dcr_train_copies_score_hundred_and_one() {
        let train = mixed_table(200, 0.0);
        let test = mixed_table(200, 7.3);
        let synth = permuted_copy(&train, 3);
        assert_eq!(dcr_quantile(&train, &test, &synth, 0.05).unwrap(), 100.0);
        assert_eq!(dcr_probability(&train, &test, &synth).unwrap(), 1.0);
    }

    #[test]
    fn dcr_disjoint_supports_score_zero() {
        let train = mixed_table(100, 0.0);
        let test = mixed_table(100, 3.0);
        let mut synth = mixed_table(100, 5.0);
        for col in synth.columns.iter_mut() {
            if let ColumnData::Numerical(v) = col {
                for x in v.iter_mut() {
                    *x += 1e6;
                }
            }
        }
        assert_eq!(dcr_quantile(&train, &test, &synth, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn dcr_probability_tie_rule() {
        // Holdout identical to train: every synthetic row ties exactly.
        let train = mixed_table(50, 0.0);
        let holdout = train.clone();
        let synth = mixed_table(50, 2.0);
        assert_eq!(dcr_probability(&train, &holdout, &synth).unwrap(), 0.5);
    }

    #[test]
    fn ranks_with_missing_entries() {
        // Two methods, one dataset: better method ranks 1.
        let ranks = average_ranks(&[vec![Some(0.9)], vec![Some(0.5)]]);
        assert_eq!(ranks, vec![1.0, 2.0]);
        // Absent method takes the worst rank.
        let ranks = average_ranks(&[vec![Some(0.9), None], vec![Some(0.5), Some(0.7)]]);
        assert_eq!(ranks, vec![(1.0 + 2.0) / 2.0, (2.0 + 1.0) / 2.0]);
        // Single method ranks 1 everywhere.
        let ranks = average_ranks(&[vec![Some(0.1), Some(0.2)]]);
        assert_eq!(ranks, vec![1.0]);
    }

    #[test]
    fn ml_efficacy_constant_regression_target_gives_test_std() {
        let n = 300;
        let mut synth = mixed_table(n, 0.0);
        synth.schema.push(ColumnSchema::numerical("t"));
        synth.columns.push(ColumnData::Numerical(vec![2.0; n]));
        let mut test = mixed_table(n, 4.0);
        test.schema.push(ColumnSchema::numerical("t"));
        let t: Vec<f64> = (0..n).map(|i| (i as f64 * 0.17).sin()).collect();
        let mean = t.iter().sum::<f64>() / n as f64;
        let std = (t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
        test.columns.push(ColumnData::Numerical(t));
        let report = ml_efficacy(&synth, &test, "t", MlTask::Regression, 0).unwrap();
        // Constant target → the model predicts 2.0; RMSE vs test target is
        // sqrt(std² + (mean − 2)²).
        let expect = (std * std + (mean - 2.0) * (mean - 2.0)).sqrt();
        assert!((report.score - expect).abs() < 1e-9);
    }
}
