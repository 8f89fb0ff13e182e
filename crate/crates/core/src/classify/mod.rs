//! Discriminators backing the two-sample tests and the utility metric: an
//! unregularized maximum-likelihood logistic regression and a histogram
//! gradient-boosted tree ensemble, plus one-hot feature encoding and exact
//! rank-based AUROC.

mod gbt;
mod logistic;

pub use gbt::{fit_gbt, GbtConfig, GbtModel, Loss};
pub use logistic::{fit_logistic, logistic_nll_gradient, LogisticModel};

use crate::dataset::{ColumnData, Table};

/// Dense row-major design matrix with the source-column → feature-range map.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    data: Vec<f64>,
    /// Feature range of each source column.
    pub blocks: Vec<std::ops::Range<usize>>,
}

impl FeatureMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            assert_eq!(r.len(), n_cols);
            data.extend(r);
        }
        FeatureMatrix { n_rows, n_cols, data, blocks: (0..n_cols).map(|i| i..i + 1).collect() }
    }

    /// Stacks two matrices with identical layouts.
    pub fn vstack(&self, other: &FeatureMatrix) -> FeatureMatrix {
        assert_eq!(self.n_cols, other.n_cols);
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        FeatureMatrix {
            n_rows: self.n_rows + other.n_rows,
            n_cols: self.n_cols,
            data,
            blocks: self.blocks.clone(),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            data,
            blocks: self.blocks.clone(),
        }
    }
}

/// Deterministic one-hot + passthrough encoding: numerical columns copy
/// as-is, categorical columns expand to one indicator per category.
pub fn encode_features(table: &Table) -> FeatureMatrix {
    let mut blocks = Vec::with_capacity(table.n_columns());
    let mut n_cols = 0;
    for s in &table.schema {
        let width = match s.kind {
            crate::dataset::ColumnKind::Numerical => 1,
            crate::dataset::ColumnKind::Categorical => s.cardinality(),
        };
        blocks.push(n_cols..n_cols + width);
        n_cols += width;
    }
    let n_rows = table.n_rows;
    let mut data = vec![0.0; n_rows * n_cols];
    for (col, block) in table.columns.iter().zip(blocks.iter()) {
        match col {
            ColumnData::Numerical(v) => {
                for (row, &x) in v.iter().enumerate() {
                    data[row * n_cols + block.start] = x;
                }
            }
            ColumnData::Categorical(v) => {
                for (row, &c) in v.iter().enumerate() {
                    data[row * n_cols + block.start + c as usize] = 1.0;
                }
            }
        }
    }
    FeatureMatrix { n_rows, n_cols, data, blocks }
}

/// Exact AUROC via the Mann–Whitney statistic with midranks for ties:
/// P(score⁺ > score⁻) + ½·P(tie).
pub fn auroc(scores: &[f64], labels: &[bool]) -> f64 {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    assert!(n_pos > 0 && n_neg > 0, "AUROC needs both classes");

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Midrank of the tie group (1-based ranks).
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos as f64 * n_neg as f64)
}
