//! Structure learning and circuit construction: pairwise mutual-information
//! estimation, Chow-Liu maximum spanning tree, Jordan-center rooting, region
//! graph compilation, and the overparameterized circuit builders (deep
//! tree-structured, fully-factorized, and shallow-mixture).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, CpEdge, Layer, LayerKind, VarKind};
use crate::dataset::{ColumnData, ColumnKind, ColumnSchema, Table};
use crate::error::{Error, Result};
use crate::math::{bin_index, equal_frequency_edges, log_softmax_in_place};
use crate::preprocess::MaskTemplate;

/// Default equal-frequency bin count for discretizing numerical features.
pub const DEFAULT_MI_BINS: usize = 20;

/// Laplace smoothing (in counts) for closed-form categorical fits.
pub const LAPLACE_ALPHA: f64 = 0.1;

/// D×D symmetric pairwise mutual information in nats; the diagonal holds
/// per-variable entropy estimates.
#[derive(Debug, Clone)]
pub struct MiMatrix {
    pub d: usize,
    values: Vec<f64>,
}

impl MiMatrix {
    pub fn new(d: usize) -> Self {
        MiMatrix { d, values: vec![0.0; d * d] }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.values[i * self.d + j] = value;
        self.values[j * self.d + i] = value;
    }

    pub fn entropy(&self, i: usize) -> f64 {
        self.get(i, i)
    }
}

/// Discretized column codes plus the number of distinct states.
fn discretize(column: &ColumnData, bins: usize) -> (Vec<usize>, usize) {
    match column {
        ColumnData::Categorical(codes) => {
            let card = codes.iter().map(|&c| c as usize + 1).max().unwrap_or(1);
            (codes.iter().map(|&c| c as usize).collect(), card)
        }
        ColumnData::Numerical(values) => {
            let edges = equal_frequency_edges(values, bins.max(2));
            let states = edges.len() + 1;
            (values.iter().map(|&v| bin_index(v, &edges)).collect(), states)
        }
    }
}

/// Plug-in entropy from discrete codes, in nats (0·log 0 = 0).
fn plugin_entropy(codes: &[usize], states: usize) -> f64 {
    let mut counts = vec![0usize; states];
    for &c in codes {
        counts[c] += 1;
    }
    let n = codes.len() as f64;
    let mut h = 0.0;
    for &c in &counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln();
        }
    }
    h
}

fn plugin_mi(x: &[usize], sx: usize, y: &[usize], sy: usize) -> f64 {
    let n = x.len() as f64;
    let mut joint = vec![0usize; sx * sy];
    let mut mx = vec![0usize; sx];
    let mut my = vec![0usize; sy];
    for (&a, &b) in x.iter().zip(y.iter()) {
        joint[a * sy + b] += 1;
        mx[a] += 1;
        my[b] += 1;
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
    mi.max(0.0)
}

/// Estimates pairwise MI with numerical columns discretized into `bins`
/// equal-frequency bins. Pairs are estimated in parallel.
pub fn estimate_pairwise_mi(table: &Table, bins: usize) -> Result<MiMatrix> {
    if table.n_rows < 2 {
        return Err(Error::InsufficientData("MI estimation needs at least 2 rows".into()));
    }
    let d = table.n_columns();
    let discretized: Vec<(Vec<usize>, usize)> =
        table.columns.iter().map(|c| discretize(c, bins)).collect();

    let mut mi = MiMatrix::new(d);
    for (i, (codes, states)) in discretized.iter().enumerate() {
        mi.set(i, i, plugin_entropy(codes, *states));
    }
    let pairs: Vec<(usize, usize)> =
        (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).collect();
    let estimates: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (xi, si) = &discretized[i];
            let (xj, sj) = &discretized[j];
            plugin_mi(xi, *si, xj, *sj)
        })
        .collect();
    for (&(i, j), &value) in pairs.iter().zip(estimates.iter()) {
        mi.set(i, j, value);
    }
    Ok(mi)
}

/// Maximum spanning tree over the MI matrix via Kruskal's algorithm. Ties
/// break toward the lexicographically smaller (i, j) edge.
pub fn chow_liu_tree(mi: &MiMatrix) -> Vec<(usize, usize)> {
    let d = mi.d;
    assert!(d >= 2, "Chow-Liu tree needs at least two variables");
    let mut edges: Vec<(usize, usize)> =
        (0..d).flat_map(|i| ((i + 1)..d).map(move |j| (i, j))).collect();
    edges.sort_by(|&(a, b), &(c, e)| {
        mi.get(c, e)
            .partial_cmp(&mi.get(a, b))
            .unwrap()
            .then(a.cmp(&c))
            .then(b.cmp(&e))
    });

    let mut parent: Vec<usize> = (0..d).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    let mut tree = Vec::with_capacity(d - 1);
    for (i, j) in edges {
        let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
        if ri != rj {
            parent[ri] = rj;
            tree.push((i, j));
            if tree.len() == d - 1 {
                break;
            }
        }
    }
    tree.sort_unstable();
    tree
}

/// Node of minimum eccentricity; ties break to the smallest index.
pub fn jordan_center(tree: &[(usize, usize)]) -> Result<usize> {
    let n = tree.len() + 1;
    let mut adjacency = vec![Vec::new(); n];
    for &(a, b) in tree {
        if a >= n || b >= n {
            return Err(Error::Graph(format!("edge ({a},{b}) outside 0..{n}")));
        }
        adjacency[a].push(b);
        adjacency[b].push(a);
    }

    let eccentricity = |start: usize| -> Result<usize> {
        let mut dist = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::from([start]);
        dist[start] = 0;
        let mut seen = 1;
        let mut ecc = 0;
        while let Some(u) = queue.pop_front() {
            for &v in &adjacency[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    ecc = ecc.max(dist[v]);
                    seen += 1;
                    queue.push_back(v);
                }
            }
        }
        if seen != n {
            return Err(Error::Graph("tree is disconnected".into()));
        }
        Ok(ecc)
    };

    let mut best = (usize::MAX, 0);
    for v in 0..n {
        let e = eccentricity(v)?;
        if e < best.0 {
            best = (e, v);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionNode {
    /// Singleton region owning one variable's input layer.
    Leaf { var: usize },
    Inner,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Region {
    pub scope: Vec<usize>,
    pub node: RegionNode,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Partition {
    pub parent: usize,
    pub children: Vec<usize>,
}

/// Tree-shaped region graph: the structural template for circuit building.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionGraph {
    pub regions: Vec<Region>,
    pub partitions: Vec<Partition>,
    pub root: usize,
}

impl RegionGraph {
    pub fn validate(&self) -> Result<()> {
        let mut parent_count = vec![0usize; self.regions.len()];
        for p in &self.partitions {
            let parent_scope = &self.regions[p.parent].scope;
            let mut union: Vec<usize> = Vec::new();
            for &c in &p.children {
                if c >= p.parent {
                    return Err(Error::Graph("partition child must precede its parent".into()));
                }
                let cs = &self.regions[c].scope;
                if union.iter().any(|v| cs.contains(v)) {
                    return Err(Error::Graph("partition children scopes overlap".into()));
                }
                union.extend_from_slice(cs);
                parent_count[c] += 1;
            }
            union.sort_unstable();
            if &union != parent_scope {
                return Err(Error::Graph("partition children do not cover the parent scope".into()));
            }
        }
        for (r, &count) in parent_count.iter().enumerate() {
            let is_root = r == self.root;
            if is_root && count != 0 {
                return Err(Error::Graph("root region must have no parent".into()));
            }
            if !is_root && count != 1 {
                return Err(Error::Graph(format!(
                    "region {r} has {count} parent partitions, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Compiles a rooted tree into a region graph by progressively merging
/// scopes from the leaves: a tree node v with children c₁..c_m yields region
/// sc(v) = {v} ∪ ⋃ sc(cᵢ) partitioned as [{v}, sc(c₁), …, sc(c_m)].
pub fn compile_region_graph(tree: &[(usize, usize)], root: usize) -> Result<RegionGraph> {
    let n = tree.len() + 1;
    if root >= n {
        return Err(Error::Graph(format!("root {root} outside 0..{n}")));
    }
    let mut adjacency = vec![Vec::new(); n];
    for &(a, b) in tree {
        adjacency[a].push(b);
        adjacency[b].push(a);
    }

    let mut regions: Vec<Region> = Vec::new();
    let mut partitions: Vec<Partition> = Vec::new();

    fn build(
        v: usize,
        parent: Option<usize>,
        adjacency: &[Vec<usize>],
        regions: &mut Vec<Region>,
        partitions: &mut Vec<Partition>,
    ) -> usize {
        let children: Vec<usize> =
            adjacency[v].iter().copied().filter(|&c| Some(c) != parent).collect();
        let leaf = {
            regions.push(Region { scope: vec![v], node: RegionNode::Leaf { var: v } });
            regions.len() - 1
        };
        if children.is_empty() {
            return leaf;
        }
        let mut child_regions = vec![leaf];
        let mut scope = vec![v];
        for c in children {
            let r = build(c, Some(v), adjacency, regions, partitions);
            scope.extend_from_slice(&regions[r].scope);
            child_regions.push(r);
        }
        scope.sort_unstable();
        regions.push(Region { scope, node: RegionNode::Inner });
        let inner = regions.len() - 1;
        partitions.push(Partition { parent: inner, children: child_regions });
        inner
    }

    let root_region = build(root, None, &adjacency, &mut regions, &mut partitions);
    let rg = RegionGraph { regions, partitions, root: root_region };
    rg.validate()?;
    Ok(rg)
}

/// Builder knobs: units per region, MI discretization bins, the parameter
/// initialization seed, and a hard parameter budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildConfig {
    pub k: usize,
    pub mi_bins: usize,
    pub seed: u64,
    pub max_params: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig { k: 16, mi_bins: DEFAULT_MI_BINS, seed: 0, max_params: 50_000_000 }
    }
}

pub fn var_kinds_from_schema(schema: &[ColumnSchema]) -> Vec<VarKind> {
    schema
        .iter()
        .map(|s| match s.kind {
            ColumnKind::Numerical => VarKind::Numerical,
            ColumnKind::Categorical => VarKind::Categorical(s.cardinality()),
        })
        .collect()
}

struct ParamInit {
    rng: ChaCha8Rng,
}

impl ParamInit {
    fn new(seed: u64) -> Self {
        ParamInit { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Small random logits, renormalized per row.
    fn weight_rows(&mut self, rows: usize, cols: usize) -> Vec<f64> {
        let mut w: Vec<f64> = (0..rows * cols).map(|_| self.rng.gen_range(-0.01..0.01)).collect();
        for row in w.chunks_mut(cols) {
            log_softmax_in_place(row);
        }
        w
    }

    fn input_layer(&mut self, var: usize, kind: &VarKind, width: usize) -> Layer {
        match kind {
            VarKind::Numerical => {
                let mean: Vec<f64> = (0..width)
                    .map(|_| {
                        let (u1, u2): (f64, f64) = (self.rng.gen(), self.rng.gen());
                        (-2.0 * u1.max(1e-300).ln()).sqrt()
                            * (2.0 * std::f64::consts::PI * u2).cos()
                    })
                    .collect();
                Layer {
                    kind: LayerKind::InputGaussian { var, mean, log_std: vec![0.0; width] },
                    width,
                    scope: vec![var],
                }
            }
            VarKind::Categorical(card) => {
                let uniform = (1.0 / *card as f64).ln();
                Layer {
                    kind: LayerKind::InputCategorical {
                        var,
                        cardinality: *card,
                        logits: vec![uniform; width * card],
                    },
                    width,
                    scope: vec![var],
                }
            }
        }
    }
}

/// Instantiates an overparameterized circuit on a region graph: input layers
/// of width K at leaf regions, a sum-product layer of width K per partition,
/// and a final width-1 mixing row over the root region.
pub fn build_circuit(rg: &RegionGraph, schema: &[ColumnSchema], cfg: &BuildConfig) -> Result<Circuit> {
    rg.validate()?;
    if cfg.k == 0 {
        return Err(Error::Usage("K must be at least 1".into()));
    }
    let var_kinds = var_kinds_from_schema(schema);
    let d = var_kinds.len();
    let mut init = ParamInit::new(cfg.seed);

    let mut layer_of_region: Vec<Option<usize>> = vec![None; rg.regions.len()];
    let mut layers: Vec<Layer> = Vec::new();

    for (r, region) in rg.regions.iter().enumerate() {
        if let RegionNode::Leaf { var } = region.node {
            layers.push(init.input_layer(var, &var_kinds[var], cfg.k));
            layer_of_region[r] = Some(layers.len() - 1);
        }
    }
    // Partitions reference only earlier regions, so one ordered pass suffices.
    for p in &rg.partitions {
        let children: Vec<CpEdge> = p
            .children
            .iter()
            .map(|&c| {
                let child = layer_of_region[c].expect("child region built before parent");
                CpEdge {
                    child,
                    log_weights: Some(init.weight_rows(cfg.k, layers[child].width)),
                }
            })
            .collect();
        layers.push(Layer {
            kind: LayerKind::CpSumProduct { children },
            width: cfg.k,
            scope: rg.regions[p.parent].scope.clone(),
        });
        layer_of_region[p.parent] = Some(layers.len() - 1);
    }

    let top = layer_of_region[rg.root].expect("root region has a layer");
    layers.push(Layer {
        kind: LayerKind::CpSumProduct {
            children: vec![CpEdge { child: top, log_weights: Some(init.weight_rows(1, layers[top].width)) }],
        },
        width: 1,
        scope: (0..d).collect(),
    });

    let circuit = Circuit { layers, num_vars: d, var_kinds };
    if circuit.param_count() > cfg.max_params {
        return Err(Error::Budget(format!(
            "{} parameters exceed the {} cap",
            circuit.param_count(),
            cfg.max_params
        )));
    }
    Ok(circuit)
}

/// Learns the full pipeline on data: MI matrix → Chow-Liu tree →
/// Jordan-center root → region graph → overparameterized circuit.
pub fn build_tree_circuit(table: &Table, cfg: &BuildConfig) -> Result<(Circuit, RegionGraph)> {
    let d = table.n_columns();
    if d < 2 {
        return Err(Error::InsufficientData("tree structure needs at least 2 columns".into()));
    }
    let mi = estimate_pairwise_mi(table, cfg.mi_bins)?;
    let tree = chow_liu_tree(&mi);
    let root = jordan_center(&tree)?;
    let rg = compile_region_graph(&tree, root)?;
    let circuit = build_circuit(&rg, &table.schema, cfg)?;
    Ok((circuit, rg))
}

/// Fully-factorized model fit closed-form by MLE: Gaussian moments and
/// Laplace-smoothed categorical frequencies. Cells flagged marginalized in
/// `mask` (inflated values) are discarded during fitting.
pub fn build_ff(table: &Table, mask: Option<&MaskTemplate>, alpha: f64) -> Result<Circuit> {
    let var_kinds = var_kinds_from_schema(&table.schema);
    let d = var_kinds.len();
    let mut layers = Vec::with_capacity(d + 1);

    for (col, kind) in var_kinds.iter().enumerate() {
        let observed = |row: usize| mask.map_or(true, |m| m.is_observed(row, col));
        match kind {
            VarKind::Numerical => {
                let values = table.columns[col].as_numerical();
                let kept: Vec<f64> = values
                    .iter()
                    .enumerate()
                    .filter(|(row, _)| observed(*row))
                    .map(|(_, &v)| v)
                    .collect();
                if kept.is_empty() {
                    return Err(Error::DegenerateColumn(table.schema[col].name.clone()));
                }
                let n = kept.len() as f64;
                let mean = kept.iter().sum::<f64>() / n;
                let var = kept.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                let log_std = var.max(1e-12).sqrt().ln().clamp(crate::circuit::LOG_STD_MIN, crate::circuit::LOG_STD_MAX);
                layers.push(Layer {
                    kind: LayerKind::InputGaussian { var: col, mean: vec![mean], log_std: vec![log_std] },
                    width: 1,
                    scope: vec![col],
                });
            }
            VarKind::Categorical(card) => {
                let codes = table.columns[col].as_categorical();
                let mut counts = vec![alpha; *card];
                let mut total = alpha * *card as f64;
                for (row, &c) in codes.iter().enumerate() {
                    if observed(row) {
                        counts[c as usize] += 1.0;
                        total += 1.0;
                    }
                }
                if total <= 0.0 {
                    return Err(Error::DegenerateColumn(table.schema[col].name.clone()));
                }
                let logits: Vec<f64> = counts.iter().map(|c| (c / total).ln()).collect();
                layers.push(Layer {
                    kind: LayerKind::InputCategorical { var: col, cardinality: *card, logits },
                    width: 1,
                    scope: vec![col],
                });
            }
        }
    }

    layers.push(Layer {
        kind: LayerKind::CpSumProduct {
            children: (0..d).map(|c| CpEdge { child: c, log_weights: Some(vec![0.0]) }).collect(),
        },
        width: 1,
        scope: (0..d).collect(),
    });
    Ok(Circuit { layers, num_vars: d, var_kinds })
}

/// Fully-factorized model with randomized parameters (no fitting); the
/// diagnostic counterpart of [`build_ff`].
pub fn random_ff(schema: &[ColumnSchema], seed: u64) -> Circuit {
    let var_kinds = var_kinds_from_schema(schema);
    let d = var_kinds.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers: Vec<Layer> = Vec::with_capacity(d + 1);
    for (col, kind) in var_kinds.iter().enumerate() {
        match kind {
            VarKind::Numerical => {
                let mean = rng.gen_range(-2.0..2.0);
                let log_std = rng.gen_range(-1.0..0.5);
                layers.push(Layer {
                    kind: LayerKind::InputGaussian { var: col, mean: vec![mean], log_std: vec![log_std] },
                    width: 1,
                    scope: vec![col],
                });
            }
            VarKind::Categorical(card) => {
                let mut logits: Vec<f64> = (0..*card).map(|_| rng.gen_range(-2.0..2.0)).collect();
                log_softmax_in_place(&mut logits);
                layers.push(Layer {
                    kind: LayerKind::InputCategorical { var: col, cardinality: *card, logits },
                    width: 1,
                    scope: vec![col],
                });
            }
        }
    }
    layers.push(Layer {
        kind: LayerKind::CpSumProduct {
            children: (0..d).map(|c| CpEdge { child: c, log_weights: Some(vec![0.0]) }).collect(),
        },
        width: 1,
        scope: (0..d).collect(),
    });
    Circuit { layers, num_vars: d, var_kinds }
}

/// Shallow mixture of K factorized components: width-K input layers joined by
/// identity-routed Hadamard products, mixed by a single learnable sum row.
/// Parameters are randomly initialized for gradient training.
pub fn build_sm(schema: &[ColumnSchema], k: usize, seed: u64) -> Result<Circuit> {
    if k == 0 {
        return Err(Error::Usage("K must be at least 1".into()));
    }
    let var_kinds = var_kinds_from_schema(schema);
    let d = var_kinds.len();
    let mut init = ParamInit::new(seed);
    let mut layers: Vec<Layer> = Vec::with_capacity(d + 2);
    for (col, kind) in var_kinds.iter().enumerate() {
        layers.push(init.input_layer(col, kind, k));
    }
    layers.push(Layer {
        kind: LayerKind::CpSumProduct {
            children: (0..d).map(|c| CpEdge { child: c, log_weights: None }).collect(),
        },
        width: k,
        scope: (0..d).collect(),
    });
    layers.push(Layer {
        kind: LayerKind::CpSumProduct {
            children: vec![CpEdge { child: d, log_weights: Some(init.weight_rows(1, k)) }],
        },
        width: 1,
        scope: (0..d).collect(),
    });
    Ok(Circuit { layers, num_vars: d, var_kinds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::EvidenceMask;
    use crate::dataset::ColumnSchema;

    fn binary_table(cols: Vec<Vec<u32>>) -> Table {
        let schema: Vec<ColumnSchema> = (0..cols.len())
            .map(|i| ColumnSchema::categorical(format!("c{i}"), &["0", "1"]))
            .collect();
        let columns = cols.into_iter().map(ColumnData::Categorical).collect();
        Table::new(schema, columns)
    }

    #[test]
    fn identical_binary_columns_have_mi_ln2() {
        let n = 100_000;
        let col: Vec<u32> = (0..n).map(|i| (i % 2) as u32).collect();
        let table = binary_table(vec![col.clone(), col]);
        let mi = estimate_pairwise_mi(&table, 20).unwrap();
        assert!((mi.get(0, 1) - std::f64::consts::LN_2).abs() < 0.01);
        assert!((mi.entropy(0) - std::f64::consts::LN_2).abs() < 0.01);
    }

    #[test]
    fn factorized_contingency_has_zero_mi() {
        // Exact product joint: every (a, b) combination equally often.
        let mut a = Vec::new();
        let mut b = Vec::new();
        for i in 0..2u32 {
            for j in 0..2u32 {
                for _ in 0..25 {
                    a.push(i);
                    b.push(j);
                }
            }
        }
        let table = binary_table(vec![a, b]);
        let mi = estimate_pairwise_mi(&table, 20).unwrap();
        assert_eq!(mi.get(0, 1), 0.0);
    }

    #[test]
    fn constant_column_has_zero_entropy_and_mi() {
        let a = vec![0u32; 100];
        let b: Vec<u32> = (0..100).map(|i| (i % 2) as u32).collect();
        let table = binary_table(vec![a, b]);
        let mi = estimate_pairwise_mi(&table, 20).unwrap();
        assert_eq!(mi.entropy(0), 0.0);
        assert_eq!(mi.get(0, 1), 0.0);
    }

    #[test]
    fn chow_liu_picks_heaviest_edges() {
        let mut mi = MiMatrix::new(3);
        mi.set(0, 1, 0.9);
        mi.set(1, 2, 0.5);
        mi.set(0, 2, 0.1);
        assert_eq!(chow_liu_tree(&mi), vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn chow_liu_tie_break_is_lexicographic() {
        let mut mi = MiMatrix::new(4);
        for i in 0..4 {
            for j in (i + 1)..4 {
                mi.set(i, j, 0.5);
            }
        }
        // All ties: the star at 0 from lexicographic edge order.
        assert_eq!(chow_liu_tree(&mi), vec![(0, 1), (0, 2), (0, 3)]);
    }

    #[test]
    fn chow_liu_two_variables() {
        let mut mi = MiMatrix::new(2);
        mi.set(0, 1, 0.3);
        assert_eq!(chow_liu_tree(&mi), vec![(0, 1)]);
    }

    #[test]
    fn jordan_center_of_path_and_star() {
        assert_eq!(jordan_center(&[(0, 1), (1, 2)]).unwrap(), 1);
        assert_eq!(jordan_center(&[(3, 0), (3, 1), (3, 2)]).unwrap(), 3);
        // Even path: ties 1 vs 2 break low.
        assert_eq!(jordan_center(&[(0, 1), (1, 2), (2, 3)]).unwrap(), 1);
    }

    #[test]
    fn jordan_center_rejects_disconnected() {
        assert!(jordan_center(&[(0, 1), (0, 1)]).is_err());
    }

    #[test]
    fn region_graph_of_centered_chain() {
        let rg = compile_region_graph(&[(0, 1), (1, 2)], 1).unwrap();
        assert_eq!(rg.regions.len(), 4);
        assert_eq!(rg.partitions.len(), 1);
        let root = &rg.regions[rg.root];
        assert_eq!(root.scope, vec![0, 1, 2]);
        let p = &rg.partitions[0];
        let child_scopes: Vec<&Vec<usize>> =
            p.children.iter().map(|&c| &rg.regions[c].scope).collect();
        assert_eq!(child_scopes, vec![&vec![1], &vec![0], &vec![2]]);
    }

    #[test]
    fn region_graph_single_node() {
        let rg = compile_region_graph(&[], 0).unwrap();
        assert_eq!(rg.regions.len(), 1);
        assert!(rg.partitions.is_empty());
    }

    #[test]
    fn region_count_is_vars_plus_internal_nodes() {
        // Structural-recursion oracle: one leaf region per variable plus one
        // inner region per internal node of the rooted tree.
        let cases: Vec<(Vec<(usize, usize)>, usize, usize)> = vec![
            // 7-node path rooted at an end: 6 internal nodes → 2·7−1 = 13.
            (vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6)], 0, 13),
            // Same path rooted at the center: 5 internal nodes.
            (vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6)], 3, 12),
            // Balanced binary tree rooted at 0: 3 internal nodes.
            (vec![(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6)], 0, 10),
        ];
        for (tree, root, expected) in cases {
            let n = tree.len() + 1;
            let internal = {
                let mut adjacency = vec![Vec::new(); n];
                for &(a, b) in &tree {
                    adjacency[a].push(b);
                    adjacency[b].push(a);
                }
                let mut count = 0;
                let mut stack = vec![(root, usize::MAX)];
                while let Some((v, parent)) = stack.pop() {
                    let children: Vec<usize> =
                        adjacency[v].iter().copied().filter(|&c| c != parent).collect();
                    if !children.is_empty() {
                        count += 1;
                    }
                    for c in children {
                        stack.push((c, v));
                    }
                }
                count
            };
            assert_eq!(n + internal, expected, "oracle disagrees for root {root}");
            let rg = compile_region_graph(&tree, root).unwrap();
            assert_eq!(rg.regions.len(), expected);
        }
    }

    fn mixed_schema() -> Vec<ColumnSchema> {
        vec![
            ColumnSchema::numerical("x"),
            ColumnSchema::categorical("y", &["a", "b", "c"]),
            ColumnSchema::numerical("z"),
        ]
    }

    #[test]
    fn built_circuit_validates_and_widths_match() {
        let rg = compile_region_graph(&[(0, 1), (1, 2)], 1).unwrap();
        let cfg = BuildConfig { k: 3, ..Default::default() };
        let circuit = build_circuit(&rg, &mixed_schema(), &cfg).unwrap();
        assert!(circuit.validate_structure().is_valid());
        let widths: Vec<usize> = circuit.layers.iter().map(|l| l.width).collect();
        assert_eq!(widths, vec![3, 3, 3, 3, 1]);
    }

    #[test]
    fn k1_circuit_factorizes() {
        let rg = compile_region_graph(&[(0, 1), (1, 2)], 1).unwrap();
        let cfg = BuildConfig { k: 1, ..Default::default() };
        let circuit = build_circuit(&rg, &mixed_schema(), &cfg).unwrap();
        let row = [0.4, 1.0, -0.3];
        let ld = circuit.log_density(&row, &EvidenceMask::all_observed(3)).unwrap();
        let mut expect = 0.0;
        for layer in &circuit.layers {
            match &layer.kind {
                LayerKind::InputGaussian { var, mean, log_std } => {
                    expect +=
                        crate::math::normal_log_pdf(row[*var], mean[0], log_std[0].exp());
                }
                LayerKind::InputCategorical { var, cardinality, logits } => {
                    let mut lp = logits.clone();
                    log_softmax_in_place(&mut lp[..*cardinality]);
                    expect += lp[row[*var] as usize];
                }
                LayerKind::CpSumProduct { .. } => {}
            }
        }
        assert!((ld - expect).abs() < 1e-12);
    }

    #[test]
    fn budget_cap_is_enforced() {
        let rg = compile_region_graph(&[(0, 1), (1, 2)], 1).unwrap();
        let cfg = BuildConfig { k: 64, max_params: 100, ..Default::default() };
        assert!(matches!(build_circuit(&rg, &mixed_schema(), &cfg), Err(Error::Budget(_))));
    }

    #[test]
    fn ff_closed_form_moments() {
        let table = Table::new(
            vec![ColumnSchema::numerical("x"), ColumnSchema::categorical("y", &["a", "b"])],
            vec![
                ColumnData::Numerical(vec![0.0, 2.0]),
                ColumnData::Categorical(vec![0, 0, 0, 0, 0, 0, 0, 1, 1, 1][..2].to_vec()),
            ],
        );
        let ff = build_ff(&table, None, 0.0).unwrap();
        match &ff.layers[0].kind {
            LayerKind::InputGaussian { mean, log_std, .. } => {
                assert!((mean[0] - 1.0).abs() < 1e-12);
                assert!((log_std[0].exp() - 1.0).abs() < 1e-9);
            }
            _ => panic!("expected gaussian layer"),
        }

        let table = Table::new(
            vec![ColumnSchema::categorical("y", &["a", "b"])],
            vec![ColumnData::Categorical(vec![0, 0, 0, 0, 0, 0, 0, 1, 1, 1])],
        );
        let ff = build_ff(&table, None, 0.0).unwrap();
        match &ff.layers[0].kind {
            LayerKind::InputCategorical { logits, .. } => {
                assert!((logits[0].exp() - 0.7).abs() < 1e-12);
                assert!((logits[1].exp() - 0.3).abs() < 1e-12);
            }
            _ => panic!("expected categorical layer"),
        }
    }

    #[test]
    fn trained_ff_beats_random_ff_on_likelihood() {
        let n = 500;
        let values: Vec<f64> = (0..n).map(|i| 3.0 + (i as f64 * 0.618).fract()).collect();
        let table = Table::new(
            vec![ColumnSchema::numerical("x")],
            vec![ColumnData::Numerical(values.clone())],
        );
        let fitted = build_ff(&table, None, LAPLACE_ALPHA).unwrap();
        let random = random_ff(&table.schema, 5);
        let mask = EvidenceMask::all_observed(1);
        let ll = |c: &Circuit| -> f64 {
            values.iter().map(|&v| c.log_density(&[v], &mask).unwrap()).sum()
        };
        assert!(ll(&fitted) >= ll(&random));
    }

    #[test]
    fn sm_k1_matches_ff_family_and_weights_normalize() {
        let schema = mixed_schema();
        let sm = build_sm(&schema, 1, 3).unwrap();
        assert!(sm.validate_structure().is_valid());
        for seed in 0..5 {
            let sm = build_sm(&schema, 7, seed).unwrap();
            assert!(sm.validate_structure().is_valid());
        }
    }

    #[test]
    fn sm_parameter_count_formula() {
        // K·(2·#num + Σ cardinalities) + K mixture weights.
        let schema = mixed_schema();
        let k = 11;
        let sm = build_sm(&schema, k, 0).unwrap();
        assert_eq!(sm.param_count(), k * (2 * 2 + 3) + k);
    }
}
