//! Layered smooth and decomposable probabilistic circuits: log-space
//! evaluation, exact marginalization under evidence masks, structural
//! validation, and a quadrature/enumeration normalization probe.
//!
//! A circuit is a topologically ordered list of layers. Input layers hold K
//! univariate units (Gaussian or categorical); a sum-product layer computes,
//! for each of its K units, the product over children of a weighted mixture
//! of that child's units. Sum weights are stored in log space and normalized
//! per row, so the encoded distribution integrates to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logsumexp, normal_log_pdf, LN_SQRT_2PI};

/// Gaussian log-std values are clamped to this range at evaluation.
pub const LOG_STD_MIN: f64 = -7.0;
pub const LOG_STD_MAX: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Numerical,
    Categorical(usize),
}

/// Per-variable observed/marginalized flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceMask {
    observed: Vec<bool>,
}

impl EvidenceMask {
    pub fn all_observed(n_vars: usize) -> Self {
        EvidenceMask { observed: vec![true; n_vars] }
    }

    pub fn all_marginalized(n_vars: usize) -> Self {
        EvidenceMask { observed: vec![false; n_vars] }
    }

    pub fn from_flags(observed: Vec<bool>) -> Self {
        EvidenceMask { observed }
    }

    pub fn set_observed(&mut self, var: usize, observed: bool) {
        self.observed[var] = observed;
    }

    pub fn is_observed(&self, var: usize) -> bool {
        self.observed[var]
    }

    pub fn len(&self) -> usize {
        self.observed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observed.is_empty()
    }

    pub fn flags(&self) -> &[bool] {
        &self.observed
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }
}

/// Connection from a sum-product layer to one child layer. `log_weights` is a
/// row-major `width × child_width` matrix of log weights; `None` wires unit k
/// directly to child unit k (pure Hadamard routing, used by mixture models).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CpEdge {
    pub child: usize,
    pub log_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum LayerKind {
    InputGaussian { var: usize, mean: Vec<f64>, log_std: Vec<f64> },
    InputCategorical { var: usize, cardinality: usize, logits: Vec<f64> },
    CpSumProduct { children: Vec<CpEdge> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    pub width: usize,
    /// Sorted variable indices this layer depends on.
    pub scope: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Circuit {
    pub layers: Vec<Layer>,
    pub num_vars: usize,
    pub var_kinds: Vec<VarKind>,
}

impl Circuit {
    pub fn root(&self) -> usize {
        self.layers.len() - 1
    }

    /// Log of the circuit value at `row` under `mask`; with everything
    /// observed this is the exact log joint density/mass.
    pub fn log_density(&self, row: &[f64], mask: &EvidenceMask) -> Result<f64> {
        Evaluator::new(self).log_density(row, mask.flags())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(layer_param_count).sum()
    }

    /// Flat parameter vector in declared layer order: Gaussian means then
    /// log-stds, categorical logits, then per-edge sum weights.
    pub fn export_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            match &layer.kind {
                LayerKind::InputGaussian { mean, log_std, .. } => {
                    out.extend_from_slice(mean);
                    out.extend_from_slice(log_std);
                }
                LayerKind::InputCategorical { logits, .. } => out.extend_from_slice(logits),
                LayerKind::CpSumProduct { children } => {
                    for edge in children {
                        if let Some(w) = &edge.log_weights {
                            out.extend_from_slice(w);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn import_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count());
        let mut at = 0;
        for layer in &mut self.layers {
            match &mut layer.kind {
                LayerKind::InputGaussian { mean, log_std, .. } => {
                    mean.copy_from_slice(&params[at..at + mean.len()]);
                    at += mean.len();
                    log_std.copy_from_slice(&params[at..at + log_std.len()]);
                    at += log_std.len();
                }
                LayerKind::InputCategorical { logits, .. } => {
                    logits.copy_from_slice(&params[at..at + logits.len()]);
                    at += logits.len();
                }
                LayerKind::CpSumProduct { children } => {
                    for edge in children {
                        if let Some(w) = &mut edge.log_weights {
                            w.copy_from_slice(&params[at..at + w.len()]);
                            at += w.len();
                        }
                    }
                }
            }
        }
    }

    /// Renormalizes every sum-weight row and categorical logit row in log
    /// space, restoring the local-normalization invariant after an
    /// unconstrained parameter update.
    pub fn renormalize(&mut self) {
        for layer in &mut self.layers {
            match &mut layer.kind {
                LayerKind::InputCategorical { cardinality, logits, .. } => {
                    for row in logits.chunks_mut(*cardinality) {
                        crate::math::log_softmax_in_place(row);
                    }
                }
                LayerKind::CpSumProduct { children } => {
                    for edge in children {
                        if let Some(w) = &mut edge.log_weights {
                            let kc = w.len() / layer.width.max(1);
                            for row in w.chunks_mut(kc) {
                                crate::math::log_softmax_in_place(row);
                            }
                        }
                    }
                }
                LayerKind::InputGaussian { .. } => {}
            }
        }
    }

    pub fn validate_structure(&self) -> StructureReport {
        let mut violations = Vec::new();
        let d = self.num_vars;
        for (idx, layer) in self.layers.iter().enumerate() {
            if layer.scope.windows(2).any(|w| w[0] >= w[1])
                || layer.scope.iter().any(|&v| v >= d)
            {
                violations.push(Violation::Scope {
                    layer: idx,
                    message: "scope must be sorted, unique, and in range".into(),
                });
            }
            match &layer.kind {
                LayerKind::InputGaussian { var, mean, log_std } => {
                    if layer.scope != vec![*var] {
                        violations.push(Violation::Scope {
                            layer: idx,
                            message: "input layer scope must be its singleton variable".into(),
                        });
                    }
                    if mean.len() != layer.width || log_std.len() != layer.width {
                        violations.push(Violation::Shape { layer: idx });
                    }
                    if self.var_kinds.get(*var) != Some(&VarKind::Numerical) {
                        violations.push(Violation::KindMismatch { layer: idx, var: *var });
                    }
                }
                LayerKind::InputCategorical { var, cardinality, logits } => {
                    if layer.scope != vec![*var] {
                        violations.push(Violation::Scope {
                            layer: idx,
                            message: "input layer scope must be its singleton variable".into(),
                        });
                    }
                    if logits.len() != layer.width * cardinality {
                        violations.push(Violation::Shape { layer: idx });
                    }
                    if self.var_kinds.get(*var) != Some(&VarKind::Categorical(*cardinality)) {
                        violations.push(Violation::KindMismatch { layer: idx, var: *var });
                    }
                    for (k, row) in logits.chunks(*cardinality).enumerate() {
                        check_row_normalized(idx, k, row, &mut violations);
                    }
                }
                LayerKind::CpSumProduct { children } => {
                    if children.is_empty() {
                        violations.push(Violation::Shape { layer: idx });
                        continue;
                    }
                    let mut union: Vec<usize> = Vec::new();
                    for edge in children {
                        if edge.child >= idx {
                            violations.push(Violation::Cycle { layer: idx, child: edge.child });
                            continue;
                        }
                        let child = &self.layers[edge.child];
                        if union.iter().any(|v| child.scope.contains(v)) {
                            violations.push(Violation::Decomposability {
                                layer: idx,
                                child: edge.child,
                            });
                        }
                        union.extend_from_slice(&child.scope);
                        match &edge.log_weights {
                            Some(w) => {
                                if w.len() != layer.width * child.width {
                                    violations.push(Violation::Shape { layer: idx });
                                } else {
                                    for (k, row) in w.chunks(child.width).enumerate() {
                                        check_row_normalized(idx, k, row, &mut violations);
                                    }
                                }
                            }
                            None => {
                                if child.width != layer.width {
                                    violations.push(Violation::Shape { layer: idx });
                                }
                            }
                        }
                    }
                    union.sort_unstable();
                    if union != layer.scope {
                        violations.push(Violation::ScopeUnion { layer: idx });
                    }
                }
            }
        }
        let root = &self.layers[self.root()];
        if root.width != 1 {
            violations.push(Violation::Root { message: "root layer must have width 1".into() });
        }
        if root.scope != (0..d).collect::<Vec<_>>() {
            violations.push(Violation::Root { message: "root scope must cover all variables".into() });
        }
        StructureReport { violations }
    }

    /// Numerically integrates/sums the masked density over the observed
    /// variables. Test-scale: at most 3 observed numerical variables and a
    /// categorical state space of at most 2^20.
    pub fn normalization_probe(&self, mask: &EvidenceMask, n_grid: usize) -> Result<f64> {
        let eval = Evaluator::new(self);
        let mut cat_vars: Vec<(usize, usize)> = Vec::new();
        let mut num_vars: Vec<usize> = Vec::new();
        for v in 0..self.num_vars {
            if !mask.is_observed(v) {
                continue;
            }
            match self.var_kinds[v] {
                VarKind::Categorical(card) => cat_vars.push((v, card)),
                VarKind::Numerical => num_vars.push(v),
            }
        }
        if num_vars.len() > 3 {
            return Err(Error::Unsupported(format!(
                "normalization probe supports at most 3 numerical variables, got {}",
                num_vars.len()
            )));
        }
        let states: usize = cat_vars.iter().map(|(_, c)| *c).product::<usize>().max(1);
        if states > (1 << 20) {
            return Err(Error::Unsupported("categorical state space exceeds 2^20".into()));
        }

        // Simpson grid per numerical variable over the union of unit supports.
        let n_grid = {
            let g = n_grid.max(3);
            if g % 2 == 0 {
                g + 1
            } else {
                g
            }
        };
        let mut grids: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
        for &v in &num_vars {
            let (lo, hi) = self.gaussian_support(v);
            let h = (hi - lo) / (n_grid - 1) as f64;
            let points: Vec<f64> = (0..n_grid).map(|i| lo + h * i as f64).collect();
            let weights: Vec<f64> = (0..n_grid)
                .map(|i| {
                    let w = if i == 0 || i == n_grid - 1 {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    w * h / 3.0
                })
                .collect();
            grids.push((v, points, weights));
        }

        let mut row = vec![0.0; self.num_vars];
        let mut total = 0.0;
        let mut cat_state = vec![0usize; cat_vars.len()];
        loop {
            for (i, &(v, _)) in cat_vars.iter().enumerate() {
                row[v] = cat_state[i] as f64;
            }
            total += self.integrate_numeric(&eval, &mut row, mask.flags(), &grids, 0, 1.0)?;

            // Advance the categorical odometer.
            let mut i = 0;
            loop {
                if i == cat_vars.len() {
                    return Ok(total);
                }
                cat_state[i] += 1;
                if cat_state[i] < cat_vars[i].1 {
                    break;
                }
                cat_state[i] = 0;
                i += 1;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn integrate_numeric(
        &self,
        eval: &Evaluator,
        row: &mut Vec<f64>,
        mask: &[bool],
        grids: &[(usize, Vec<f64>, Vec<f64>)],
        depth: usize,
        weight: f64,
    ) -> Result<f64> {
        if depth == grids.len() {
            let ld = eval.log_density(row, mask)?;
            return Ok(weight * ld.exp());
        }
        let (v, points, weights) = &grids[depth];
        let mut acc = 0.0;
        for (x, w) in points.iter().zip(weights.iter()) {
            row[*v] = *x;
            acc += self.integrate_numeric(eval, row, mask, grids, depth + 1, weight * w)?;
        }
        Ok(acc)
    }

    /// [lo, hi] covering mean ± 8σ over every Gaussian unit of the variable.
    fn gaussian_support(&self, var: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for layer in &self.layers {
            if let LayerKind::InputGaussian { var: v, mean, log_std } = &layer.kind {
                if *v == var {
                    for (m, ls) in mean.iter().zip(log_std.iter()) {
                        let s = ls.clamp(LOG_STD_MIN, LOG_STD_MAX).exp();
                        lo = lo.min(m - 8.0 * s);
                        hi = hi.max(m + 8.0 * s);
                    }
                }
            }
        }
        if !lo.is_finite() || !hi.is_finite() {
            (-8.0, 8.0)
        } else {
            (lo, hi)
        }
    }
}

fn check_row_normalized(layer: usize, row_idx: usize, row: &[f64], violations: &mut Vec<Violation>) {
    let sum: f64 = row.iter().map(|&w| w.exp()).sum();
    if (sum - 1.0).abs() > 1e-9 {
        violations.push(Violation::Normalization { layer, row: row_idx, sum });
    }
}

fn layer_param_count(layer: &Layer) -> usize {
    match &layer.kind {
        LayerKind::InputGaussian { mean, log_std, .. } => mean.len() + log_std.len(),
        LayerKind::InputCategorical { logits, .. } => logits.len(),
        LayerKind::CpSumProduct { children } => children
            .iter()
            .map(|e| e.log_weights.as_ref().map_or(0, Vec::len))
            .sum(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Decomposability { layer: usize, child: usize },
    ScopeUnion { layer: usize },
    Normalization { layer: usize, row: usize, sum: f64 },
    Scope { layer: usize, message: String },
    Shape { layer: usize },
    Cycle { layer: usize, child: usize },
    KindMismatch { layer: usize, var: usize },
    Root { message: String },
}

#[derive(Debug, Clone)]
pub struct StructureReport {
    pub violations: Vec<Violation>,
}

impl StructureReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// One sum-product layer evaluation in log space:
/// `out[k] = Σ_i logsumexp_j(log_w_i[k, j] + child_i[j])`, where an absent
/// weight matrix routes unit k straight to child unit k.
pub fn cp_layer_forward(width: usize, children: &[(Option<&[f64]>, &[f64])]) -> Vec<f64> {
    let mut out = vec![0.0; width];
    let mut scratch: Vec<f64> = Vec::new();
    for (weights, child_vals) in children {
        match weights {
            None => {
                debug_assert_eq!(child_vals.len(), width);
                for (o, c) in out.iter_mut().zip(child_vals.iter()) {
                    *o += c;
                }
            }
            Some(w) => {
                let kc = child_vals.len();
                for (k, o) in out.iter_mut().enumerate() {
                    scratch.clear();
                    let row = &w[k * kc..(k + 1) * kc];
                    scratch.extend(row.iter().zip(child_vals.iter()).map(|(lw, c)| lw + c));
                    *o += logsumexp(&scratch);
                }
            }
        }
    }
    out
}

enum CompiledLayer {
    Gaussian { var: usize, mean: Vec<f64>, std: Vec<f64>, clamped: Vec<bool> },
    Categorical { var: usize, cardinality: usize, log_probs: Vec<f64> },
    Cp { edges: Vec<CompiledEdge> },
}

struct CompiledEdge {
    child: usize,
    child_width: usize,
    /// Row-normalized log weights and their linear-space counterparts.
    log_w: Option<(Vec<f64>, Vec<f64>)>,
}

/// Reusable evaluation context: parameters normalized once, then shared by
/// any number of per-row forward/backward passes (read-only, thread-safe).
pub struct Evaluator<'c> {
    circuit: &'c Circuit,
    layers: Vec<CompiledLayer>,
    /// Flat parameter offset of each layer.
    offsets: Vec<usize>,
}

impl<'c> Evaluator<'c> {
    pub fn new(circuit: &'c Circuit) -> Self {
        let mut layers = Vec::with_capacity(circuit.layers.len());
        let mut offsets = Vec::with_capacity(circuit.layers.len());
        let mut at = 0;
        for layer in &circuit.layers {
            offsets.push(at);
            at += layer_param_count(layer);
            layers.push(match &layer.kind {
                LayerKind::InputGaussian { var, mean, log_std } => {
                    let clamped: Vec<bool> =
                        log_std.iter().map(|&ls| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&ls)).collect();
                    let std: Vec<f64> = log_std
                        .iter()
                        .map(|&ls| ls.clamp(LOG_STD_MIN, LOG_STD_MAX).exp())
                        .collect();
                    CompiledLayer::Gaussian { var: *var, mean: mean.clone(), std, clamped }
                }
                LayerKind::InputCategorical { var, cardinality, logits } => {
                    let mut log_probs = logits.clone();
                    for row in log_probs.chunks_mut(*cardinality) {
                        crate::math::log_softmax_in_place(row);
                    }
                    CompiledLayer::Categorical { var: *var, cardinality: *cardinality, log_probs }
                }
                LayerKind::CpSumProduct { children } => {
                    let edges = children
                        .iter()
                        .map(|edge| {
                            let child_width = circuit.layers[edge.child].width;
                            let log_w = edge.log_weights.as_ref().map(|w| {
                                let mut lw = w.clone();
                                for row in lw.chunks_mut(child_width) {
                                    crate::math::log_softmax_in_place(row);
                                }
                                let linear: Vec<f64> = lw.iter().map(|&x| x.exp()).collect();
                                (lw, linear)
                            });
                            CompiledEdge { child: edge.child, child_width, log_w }
                        })
                        .collect();
                    CompiledLayer::Cp { edges }
                }
            });
        }
        Evaluator { circuit, layers, offsets }
    }

    pub fn circuit(&self) -> &Circuit {
        self.circuit
    }

    pub fn param_count(&self) -> usize {
        self.circuit.param_count()
    }

    fn check_row(&self, row: &[f64], observed: &[bool]) -> Result<()> {
        if observed.len() != self.circuit.num_vars || row.len() != self.circuit.num_vars {
            return Err(Error::Domain(format!(
                "expected {} variables, got row of {} and mask of {}",
                self.circuit.num_vars,
                row.len(),
                observed.len()
            )));
        }
        for v in 0..self.circuit.num_vars {
            if !observed[v] {
                continue;
            }
            let x = row[v];
            if !x.is_finite() {
                return Err(Error::Domain(format!("non-finite value for variable {v}")));
            }
            if let VarKind::Categorical(card) = self.circuit.var_kinds[v] {
                let code = x as i64;
                if code < 0 || code as usize >= card || x.fract() != 0.0 {
                    return Err(Error::Domain(format!(
                        "categorical code {x} out of range for variable {v} (cardinality {card})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-layer log value vectors for one row.
    pub fn forward(&self, row: &[f64], observed: &[bool]) -> Result<Vec<Vec<f64>>> {
        self.check_row(row, observed)?;
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (layer, spec) in self.layers.iter().zip(self.circuit.layers.iter()) {
            let vals = match layer {
                CompiledLayer::Gaussian { var, mean, std, .. } => {
                    if observed[*var] {
                        let x = row[*var];
                        mean.iter()
                            .zip(std.iter())
                            .map(|(m, s)| normal_log_pdf(x, *m, *s))
                            .collect()
                    } else {
                        vec![0.0; spec.width]
                    }
                }
                CompiledLayer::Categorical { var, cardinality, log_probs } => {
                    if observed[*var] {
                        let code = row[*var] as usize;
                        (0..spec.width).map(|k| log_probs[k * cardinality + code]).collect()
                    } else {
                        vec![0.0; spec.width]
                    }
                }
                CompiledLayer::Cp { edges } => {
                    let inputs: Vec<(Option<&[f64]>, &[f64])> = edges
                        .iter()
                        .map(|e| {
                            (
                                e.log_w.as_ref().map(|(lw, _)| lw.as_slice()),
                                values[e.child].as_slice(),
                            )
                        })
                        .collect();
                    cp_layer_forward(spec.width, &inputs)
                }
            };
            values.push(vals);
        }
        Ok(values)
    }

    pub fn log_density(&self, row: &[f64], observed: &[bool]) -> Result<f64> {
        let values = self.forward(row, observed)?;
        Ok(values[self.circuit.root()][0])
    }

    /// Accumulates d log_density / d params for one row into `grad` (flat
    /// layout matching [`Circuit::export_params`]). Reuses the stored forward
    /// values; sum-weight gradients are taken in softmax-logit space.
    pub fn backward(
        &self,
        row: &[f64],
        observed: &[bool],
        values: &[Vec<f64>],
        grad: &mut [f64],
    ) {
        let n_layers = self.layers.len();
        let mut delta: Vec<Vec<f64>> = values.iter().map(|v| vec![0.0; v.len()]).collect();
        delta[n_layers - 1][0] = 1.0;

        for idx in (0..n_layers).rev() {
            match &self.layers[idx] {
                CompiledLayer::Cp { edges } => {
                    let width = self.circuit.layers[idx].width;
                    let mut w_at = self.offsets[idx];
                    for edge in edges {
                        let kc = edge.child_width;
                        match &edge.log_w {
                            None => {
                                for k in 0..width {
                                    let g = delta[idx][k];
                                    if g != 0.0 {
                                        delta[edge.child][k] += g;
                                    }
                                }
                            }
                            Some((log_w, lin_w)) => {
                                for k in 0..width {
                                    let g = delta[idx][k];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    let row_w = &log_w[k * kc..(k + 1) * kc];
                                    let row_lin = &lin_w[k * kc..(k + 1) * kc];
                                    let child_vals = &values[edge.child];
                                    let mut m = f64::NEG_INFINITY;
                                    for j in 0..kc {
                                        let a = row_w[j] + child_vals[j];
                                        if a > m {
                                            m = a;
                                        }
                                    }
                                    if !m.is_finite() {
                                        continue;
                                    }
                                    let mut z = 0.0;
                                    for j in 0..kc {
                                        z += (row_w[j] + child_vals[j] - m).exp();
                                    }
                                    for j in 0..kc {
                                        let p = (row_w[j] + child_vals[j] - m).exp() / z;
                                        delta[edge.child][j] += g * p;
                                        grad[w_at + k * kc + j] += g * (p - row_lin[j]);
                                    }
                                }
                                w_at += width * kc;
                            }
                        }
                    }
                }
                CompiledLayer::Gaussian { var, mean, std, clamped } => {
                    if !observed[*var] {
                        continue;
                    }
                    let x = row[*var];
                    let base = self.offsets[idx];
                    let width = mean.len();
                    for k in 0..width {
                        let g = delta[idx][k];
                        if g == 0.0 {
                            continue;
                        }
                        let z = (x - mean[k]) / std[k];
                        grad[base + k] += g * z / std[k];
                        if !clamped[k] {
                            grad[base + width + k] += g * (z * z - 1.0);
                        }
                    }
                }
                CompiledLayer::Categorical { var, cardinality, log_probs } => {
                    if !observed[*var] {
                        continue;
                    }
                    let code = row[*var] as usize;
                    let base = self.offsets[idx];
                    let width = self.circuit.layers[idx].width;
                    for k in 0..width {
                        let g = delta[idx][k];
                        if g == 0.0 {
                            continue;
                        }
                        let row_lp = &log_probs[k * cardinality..(k + 1) * cardinality];
                        for j in 0..*cardinality {
                            let p = row_lp[j].exp();
                            let indicator = if j == code { 1.0 } else { 0.0 };
                            grad[base + k * cardinality + j] += g * (indicator - p);
                        }
                    }
                }
            }
        }
    }

    /// Compiled per-edge normalized weights, used by the samplers.
    pub(crate) fn edge_log_weights(&self, layer: usize, edge: usize) -> Option<&[f64]> {
        match &self.layers[layer] {
            CompiledLayer::Cp { edges } => edges[edge].log_w.as_ref().map(|(lw, _)| lw.as_slice()),
            _ => None,
        }
    }

    pub(crate) fn gaussian_params(&self, layer: usize) -> Option<(&[f64], &[f64])> {
        match &self.layers[layer] {
            CompiledLayer::Gaussian { mean, std, .. } => Some((mean, std)),
            _ => None,
        }
    }

    pub(crate) fn categorical_log_probs(&self, layer: usize) -> Option<&[f64]> {
        match &self.layers[layer] {
            CompiledLayer::Categorical { log_probs, .. } => Some(log_probs),
            _ => None,
        }
    }
}

/// Convenience constructor for a single-Gaussian-input circuit, used in tests
/// and docs.
pub fn single_gaussian(mean: f64, log_std: f64) -> Circuit {
    Circuit {
        layers: vec![
            Layer {
                kind: LayerKind::InputGaussian { var: 0, mean: vec![mean], log_std: vec![log_std] },
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
        var_kinds: vec![VarKind::Numerical],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_binary_product() -> Circuit {
        // Independent Bernoulli(0.7) ⊗ Bernoulli(0.5) as a width-1 product.
        let p0 = vec![0.7f64.ln(), 0.3f64.ln()];
        let p1 = vec![0.5f64.ln(), 0.5f64.ln()];
        Circuit {
            layers: vec![
                Layer {
                    kind: LayerKind::InputCategorical { var: 0, cardinality: 2, logits: p0 },
                    width: 1,
                    scope: vec![0],
                },
                Layer {
                    kind: LayerKind::InputCategorical { var: 1, cardinality: 2, logits: p1 },
                    width: 1,
                    scope: vec![1],
                },
                Layer {
                    kind: LayerKind::CpSumProduct {
                        children: vec![
                            CpEdge { child: 0, log_weights: Some(vec![0.0]) },
                            CpEdge { child: 1, log_weights: Some(vec![0.0]) },
                        ],
                    },
                    width: 1,
                    scope: vec![0, 1],
                },
            ],
            num_vars: 2,
            var_kinds: vec![VarKind::Categorical(2), VarKind::Categorical(2)],
        }
    }

    #[test]
    fn standard_gaussian_density_at_zero() {
        let c = single_gaussian(0.0, 0.0);
        let ld = c.log_density(&[0.0], &EvidenceMask::all_observed(1)).unwrap();
        assert!((ld - (-LN_SQRT_2PI)).abs() < 1e-12);
        assert!((ld - (-0.9189385)).abs() < 1e-6);
    }

    #[test]
    fn all_marginalized_gives_log_one() {
        let c = two_binary_product();
        let ld = c.log_density(&[0.0, 0.0], &EvidenceMask::all_marginalized(2)).unwrap();
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn product_matches_enumeration() {
        let c = two_binary_product();
        let expect = [[0.35, 0.35], [0.15, 0.15]];
        for a in 0..2 {
            for b in 0..2 {
                let ld = c
                    .log_density(&[a as f64, b as f64], &EvidenceMask::all_observed(2))
                    .unwrap();
                assert!((ld.exp() - expect[a][b]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn marginalizing_one_variable_matches_sum() {
        let c = two_binary_product();
        let mut mask = EvidenceMask::all_observed(2);
        mask.set_observed(1, false);
        let ld = c.log_density(&[0.0, 0.0], &mask).unwrap();
        assert!((ld.exp() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_code_is_domain_error() {
        let c = two_binary_product();
        let err = c.log_density(&[2.0, 0.0], &EvidenceMask::all_observed(2)).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        let err = c.log_density(&[f64::NAN, 0.0], &EvidenceMask::all_observed(2)).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn cp_forward_unit_weight_is_pure_product() {
        let child_a = [-0.5];
        let child_b = [-1.25];
        let out = cp_layer_forward(1, &[(Some(&[0.0][..]), &child_a), (Some(&[0.0][..]), &child_b)]);
        assert!((out[0] - (-1.75)).abs() < 1e-15);
    }

    #[test]
    fn cp_forward_neg_inf_child_annihilates() {
        let child_a = [f64::NEG_INFINITY, f64::NEG_INFINITY];
        let child_b = [0.0, -0.1];
        let w = vec![0.5f64.ln(); 4];
        let out = cp_layer_forward(2, &[(Some(&w[..]), &child_a), (Some(&w[..]), &child_b)]);
        assert!(out.iter().all(|v| *v == f64::NEG_INFINITY));
    }

    #[test]
    fn cp_forward_matches_linear_space() {
        // Naive linear-space oracle for K=2, two children of width 2.
        let w1 = vec![0.6f64.ln(), 0.4f64.ln(), 0.3f64.ln(), 0.7f64.ln()];
        let w2 = vec![0.2f64.ln(), 0.8f64.ln(), 0.9f64.ln(), 0.1f64.ln()];
        let c1 = [(-0.3f64), -1.1];
        let c2 = [(-0.7f64), -0.2];
        let out = cp_layer_forward(2, &[(Some(&w1[..]), &c1), (Some(&w2[..]), &c2)]);
        for k in 0..2 {
            let s1: f64 = (0..2).map(|j| w1[k * 2 + j].exp() * c1[j].exp()).sum();
            let s2: f64 = (0..2).map(|j| w2[k * 2 + j].exp() * c2[j].exp()).sum();
            assert!((out[k] - (s1 * s2).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn validate_reports_overlapping_scopes() {
        let mut c = two_binary_product();
        // Point both edges at the same child: overlapping scopes.
        if let LayerKind::CpSumProduct { children } = &mut c.layers[2].kind {
            children[1].child = 0;
        }
        c.layers[2].scope = vec![0];
        let report = c.validate_structure();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Decomposability { .. })));
    }

    #[test]
    fn validate_reports_unnormalized_row() {
        let mut c = two_binary_product();
        if let LayerKind::CpSumProduct { children } = &mut c.layers[2].kind {
            children[0].log_weights = Some(vec![0.9f64.ln()]);
        }
        let report = c.validate_structure();
        assert!(report.violations.iter().any(
            |v| matches!(v, Violation::Normalization { layer: 2, sum, .. } if (sum - 0.9).abs() < 1e-12)
        ));
    }

    #[test]
    fn validate_accepts_well_formed_circuit() {
        assert!(two_binary_product().validate_structure().is_valid());
    }

    #[test]
    fn probe_sums_discrete_circuit_to_one() {
        let c = two_binary_product();
        let p = c.normalization_probe(&EvidenceMask::all_observed(2), 0).unwrap();
        assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn probe_integrates_gaussian_to_one() {
        let c = single_gaussian(0.3, -0.2);
        let p = c.normalization_probe(&EvidenceMask::all_observed(1), 801).unwrap();
        assert!((p - 1.0).abs() < 1e-6, "p={p}");
    }

    #[test]
    fn params_round_trip() {
        let mut c = two_binary_product();
        let params = c.export_params();
        assert_eq!(params.len(), c.param_count());
        let mut modified = params.clone();
        modified[0] += 0.25;
        c.import_params(&modified);
        assert_eq!(c.export_params(), modified);
    }
}
