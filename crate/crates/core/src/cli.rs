//! Batch command-line surface: `fit`, `sample`, `evaluate`, and `report`.
//! Exit codes: 0 success, 2 usage/config error, 3 data error, 4
//! numeric/training failure. Failures emit machine-readable error JSON on
//! stderr. `TABGEN_THREADS` caps internal parallelism.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    infer_schema, load_table, schema_from_json, split, write_csv, RawTable, SplitSpec, Table,
};
use crate::error::{Error, Result};
use crate::metrics::{self, C2stClassifier, MetricReport};
use crate::model::{ModelBundle, ModelKind};
use crate::preprocess::{PreprocessOptions, Preprocessor};
use crate::sample::{generate_dataset, Evidence, SampleRequest};
use crate::structure::{build_ff, build_sm, build_tree_circuit, BuildConfig, LAPLACE_ALPHA};
use crate::train::{bpd, fit, CircuitData, TrainConfig, TrainHistory};

pub const VALID_METRICS: &[&str] = &["shape", "trend", "wnmis", "nmis", "c2st-lr", "c2st-gbt"];

#[derive(Parser)]
#[command(name = "tabgen", version, about = "Probabilistic-circuit tabular data synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a model bundle, history CSV, and summary JSON.
    Fit {
        /// Model kind: ff, sm, or tabpc.
        #[arg(long)]
        model: String,
        /// Training CSV.
        #[arg(long)]
        data: PathBuf,
        /// Schema JSON; inferred from the training CSV when omitted.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Validation CSV; a 90/10 split of the training data when omitted.
        #[arg(long)]
        val: Option<PathBuf>,
        /// Units per layer (K) for sm/tabpc.
        #[arg(long)]
        units: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Equal-frequency bins for mutual-information estimation.
        #[arg(long)]
        bins: Option<usize>,
        /// Output model path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw rows from a model, optionally conditioned on per-row evidence.
    Sample {
        /// Model bundle path.
        #[arg(long)]
        model: PathBuf,
        /// Number of rows (ignored when evidence is given).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Evidence CSV aligned with the model schema.
        #[arg(long)]
        evidence: Option<PathBuf>,
        /// Mask CSV of {0,1} observation flags, same header as the evidence.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a synthetic table against real data.
    Evaluate {
        /// Real data CSV.
        #[arg(long)]
        data: PathBuf,
        /// Schema JSON; inferred from the real CSV when omitted.
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Comma-separated list: shape, trend, wnmis, nmis, c2st-lr, c2st-gbt.
        #[arg(long)]
        metrics: String,
        /// Comma-separated seeds; classifier metrics rerun per seed.
        #[arg(long)]
        seed: Option<String>,
        /// Bins for rank-based discretization.
        #[arg(long)]
        bins: Option<usize>,
        /// Report JSON path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Synthetic data CSV.
        synth: PathBuf,
    },
    /// Aggregate evaluation reports into a score/rank table.
    Report {
        /// Output CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report JSON files produced by `evaluate`.
        reports: Vec<PathBuf>,
    },
}

/// Resolved fit configuration, echoed into the run summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub build: BuildConfig,
    pub train: TrainConfig,
    pub preprocess: PreprocessOptions,
    pub data: PathBuf,
    pub schema: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub out: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct FitSummary {
    model: ModelKind,
    final_val_bpd: f64,
    train_seconds: f64,
    stopping_epoch: usize,
    best_epoch: usize,
    n_parameters: usize,
    n_train_rows: usize,
    n_val_rows: usize,
    config: RunConfig,
}

#[derive(Serialize, Deserialize)]
struct MetricSummary {
    mean: f64,
    std: f64,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EvalReport {
    dataset: String,
    method: String,
    n_real: usize,
    n_synth: usize,
    seeds: Vec<u64>,
    metrics: BTreeMap<String, MetricSummary>,
}

/// Parses argv, dispatches, and maps failures onto exit codes with a
/// machine-readable error JSON on stderr.
pub fn main_entry<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    configure_threads();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version are successful exits.
            if e.use_stderr() {
                let _ = e.print();
                return 2;
            }
            let _ = e.print();
            return 0;
        }
    };
    let result = match cli.command {
        Command::Fit { model, data, schema, val, units, batch, lr, patience, seed, bins, out } => {
            cmd_fit(model, data, schema, val, units, batch, lr, patience, seed, bins, out)
        }
        Command::Sample { model, n, seed, evidence, mask, out } => {
            cmd_sample(model, n, seed, evidence, mask, out)
        }
        Command::Evaluate { data, schema, metrics, seed, bins, out, synth } => {
            cmd_evaluate(data, schema, metrics, seed, bins, out, synth)
        }
        Command::Report { out, reports } => cmd_report(out, reports),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let payload = serde_json::json!({
                "error": { "kind": e.kind(), "message": e.to_string() }
            });
            eprintln!("{payload}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    if let Ok(value) = std::env::var("TABGEN_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
}

fn require_path(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        return Err(Error::Usage(format!("{what} file not found: {}", path.display())));
    }
    Ok(())
}

fn load_schema_or_infer(schema: &Option<PathBuf>, data: &Path) -> Result<Vec<crate::dataset::ColumnSchema>> {
    match schema {
        Some(path) => {
            require_path(path, "schema")?;
            schema_from_json(&std::fs::read_to_string(path)?)
        }
        None => {
            let file = std::fs::File::open(data)?;
            let raw = RawTable::from_reader(std::io::BufReader::new(file))?;
            infer_schema(&raw)
        }
    }
}

fn load_csv(path: &Path, schema: &[crate::dataset::ColumnSchema]) -> Result<Table> {
    let file = std::fs::File::open(path)?;
    load_table(std::io::BufReader::new(file), schema)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    out.with_file_name(format!("{stem}.{suffix}"))
}

#[allow(clippy::too_many_arguments)]
fn cmd_fit(
    model: String,
    data: PathBuf,
    schema: Option<PathBuf>,
    val: Option<PathBuf>,
    units: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    patience: Option<usize>,
    seed: Option<u64>,
    bins: Option<usize>,
    out: PathBuf,
) -> Result<()> {
    let started = std::time::Instant::now();
    let kind: ModelKind = model.parse()?;
    require_path(&data, "data")?;
    if let Some(v) = &val {
        require_path(v, "validation")?;
    }
    let seed = seed.unwrap_or(0);
    let column_schema = load_schema_or_infer(&schema, &data)?;

    let full = load_csv(&data, &column_schema)?;
    let (train_raw, val_raw) = match &val {
        Some(path) => (full, load_csv(path, &column_schema)?),
        None => {
            let (tr, va, _) = split(&full, &SplitSpec::new(0.9, 0.1, 0.0, seed))?;
            (tr, va)
        }
    };

    let preprocess_options = PreprocessOptions { seed, ..Default::default() };
    let (preprocessor, train_table, train_mask) =
        Preprocessor::fit(&train_raw, &preprocess_options)?;
    let (val_table, val_mask) = preprocessor.apply(&val_raw, true)?;
    let train_data = CircuitData::from_table_with_mask(&train_table, train_mask.clone());
    let val_data = CircuitData::from_table_with_mask(&val_table, val_mask);

    let build = BuildConfig {
        k: units.unwrap_or(16),
        mi_bins: bins.unwrap_or(crate::structure::DEFAULT_MI_BINS),
        seed,
        ..Default::default()
    };
    let train_cfg = TrainConfig {
        batch_size: batch.unwrap_or(512),
        learning_rate: lr.unwrap_or(0.1),
        patience_epochs: patience.unwrap_or(10),
        seed,
        ..Default::default()
    };

    let (circuit, history) = match kind {
        ModelKind::Ff => {
            let mask = train_mask.any_marginalized().then_some(&train_mask);
            let circuit = build_ff(&train_table, mask, LAPLACE_ALPHA)?;
            let history = TrainHistory {
                epochs: Vec::new(),
                stopping_epoch: 0,
                best_epoch: 0,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            (circuit, history)
        }
        ModelKind::Sm => {
            let init = build_sm(&preprocessor.circuit_schema, build.k, seed)?;
            fit(&init, &train_data, &val_data, &train_cfg)?
        }
        ModelKind::Tabpc => {
            let (init, _) = build_tree_circuit(&train_table, &build)?;
            fit(&init, &train_data, &val_data, &train_cfg)?
        }
    };

    let final_val_bpd = bpd(&circuit, &val_data)?;
    let n_parameters = circuit.param_count();
    let bundle = ModelBundle::new(kind, circuit, preprocessor, column_schema);
    bundle.save_to_path(&out)?;
    std::fs::write(sibling(&out, "history.csv"), history.to_csv())?;

    let summary = FitSummary {
        model: kind,
        final_val_bpd,
        train_seconds: (started.elapsed().as_secs_f64() * 10.0).round() / 10.0,
        stopping_epoch: history.stopping_epoch,
        best_epoch: history.best_epoch,
        n_parameters,
        n_train_rows: train_raw.n_rows,
        n_val_rows: val_raw.n_rows,
        config: RunConfig {
            model: kind,
            build,
            train: train_cfg,
            preprocess: preprocess_options,
            data,
            schema,
            val,
            out: out.clone(),
        },
    };
    std::fs::write(sibling(&out, "summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

fn cmd_sample(
    model: PathBuf,
    n: Option<usize>,
    seed: Option<u64>,
    evidence: Option<PathBuf>,
    mask: Option<PathBuf>,
    out: PathBuf,
) -> Result<()> {
    require_path(&model, "model")?;
    let bundle = ModelBundle::load_from_path(&model)?;
    let seed = seed.unwrap_or(0);

    let request = match (&evidence, &mask) {
        (None, None) => SampleRequest {
            n_rows: n.ok_or_else(|| Error::Usage("--n is required without evidence".into()))?,
            seed,
            evidence: None,
        },
        (Some(evidence_path), Some(mask_path)) => {
            require_path(evidence_path, "evidence")?;
            require_path(mask_path, "mask")?;
            let rows = load_csv(evidence_path, &bundle.schema)?;
            let observed = load_mask_csv(mask_path, &bundle)?;
            if observed.len() != rows.n_rows {
                return Err(Error::Domain(format!(
                    "mask has {} rows, evidence has {}",
                    observed.len(),
                    rows.n_rows
                )));
            }
            SampleRequest {
                n_rows: rows.n_rows,
                seed,
                evidence: Some(Evidence { rows, observed }),
            }
        }
        _ => {
            return Err(Error::Usage(
                "--evidence and --mask must be supplied together".into(),
            ))
        }
    };

    let table = generate_dataset(&bundle, &request)?;
    let file = std::fs::File::create(&out)?;
    write_csv(&table, std::io::BufWriter::new(file))?;
    Ok(())
}

fn load_mask_csv(path: &Path, bundle: &ModelBundle) -> Result<Vec<Vec<bool>>> {
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.len() != bundle.schema.len() {
        return Err(Error::SchemaMismatch(format!(
            "mask has {} columns, schema has {}",
            headers.len(),
            bundle.schema.len()
        )));
    }
    for (h, s) in headers.iter().zip(bundle.schema.iter()) {
        if h != s.name {
            return Err(Error::SchemaMismatch(format!(
                "mask header '{}' does not match column '{}'",
                h, s.name
            )));
        }
    }
    let mut rows = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record?;
        let mut flags = Vec::with_capacity(record.len());
        for (col, cell) in record.iter().enumerate() {
            match cell.trim() {
                "0" => flags.push(false),
                "1" => flags.push(true),
                other => {
                    return Err(Error::Parse {
                        row: row_idx,
                        column: headers[col].to_string(),
                        message: format!("mask cell must be 0 or 1, got '{other}'"),
                    })
                }
            }
        }
        rows.push(flags);
    }
    Ok(rows)
}

fn parse_seeds(seed: &Option<String>) -> Result<Vec<u64>> {
    match seed {
        None => Ok(vec![0]),
        Some(spec) => spec
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Usage(format!("invalid seed '{s}'")))
            })
            .collect(),
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("unnamed").to_string()
}

fn cmd_evaluate(
    data: PathBuf,
    schema: Option<PathBuf>,
    metric_list: String,
    seed: Option<String>,
    bins: Option<usize>,
    out: Option<PathBuf>,
    synth: PathBuf,
) -> Result<()> {
    let requested: Vec<String> =
        metric_list.split(',').map(|m| m.trim().to_string()).filter(|m| !m.is_empty()).collect();
    for m in &requested {
        if !VALID_METRICS.contains(&m.as_str()) {
            return Err(Error::Usage(format!(
                "unknown metric '{}'; valid metrics: {}",
                m,
                VALID_METRICS.join(", ")
            )));
        }
    }
    require_path(&data, "data")?;
    require_path(&synth, "synthetic data")?;
    let seeds = parse_seeds(&seed)?;
    let nmi_bins = bins.unwrap_or(metrics::NMI_BINS);

    let column_schema = load_schema_or_infer(&schema, &data)?;
    let real = load_csv(&data, &column_schema)?;
    let synth_table = load_csv(&synth, &column_schema)?;

    let mut summary: BTreeMap<String, MetricSummary> = BTreeMap::new();
    for name in &requested {
        let reports: Vec<MetricReport> = match name.as_str() {
            "shape" => vec![metrics::shape(&real, &synth_table)?],
            "trend" => vec![metrics::trend(&real, &synth_table, metrics::TREND_BINS)?],
            "wnmis" => vec![metrics::wnmis(&real, &synth_table, nmi_bins)?],
            "nmis" => vec![metrics::nmis_unweighted(&real, &synth_table, nmi_bins)?],
            "c2st-lr" => seeds
                .iter()
                .map(|&s| metrics::c2st(&real, &synth_table, C2stClassifier::Logistic, s))
                .collect::<Result<_>>()?,
            "c2st-gbt" => seeds
                .iter()
                .map(|&s| metrics::c2st(&real, &synth_table, C2stClassifier::Gbt, s))
                .collect::<Result<_>>()?,
            _ => unreachable!("validated above"),
        };
        let values: Vec<f64> = reports.iter().map(|r| r.score).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let var =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
        summary.insert(name.clone(), MetricSummary { mean, std: var.sqrt(), values });
    }

    let report = EvalReport {
        dataset: file_stem(&data),
        method: file_stem(&synth),
        n_real: real.n_rows,
        n_synth: synth_table.n_rows,
        seeds,
        metrics: summary,
    };
    let json = serde_json::to_string_pretty(&report)?;
    match out {
        Some(path) => std::fs::write(path, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_report(out: Option<PathBuf>, report_paths: Vec<PathBuf>) -> Result<()> {
    if report_paths.is_empty() {
        return Err(Error::Usage("report needs at least one evaluation JSON".into()));
    }
    let mut reports = Vec::new();
    for path in &report_paths {
        require_path(path, "report")?;
        let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        reports.push(report);
    }

    let mut methods: Vec<String> = reports.iter().map(|r| r.method.clone()).collect();
    methods.sort();
    methods.dedup();
    let mut datasets: Vec<String> = reports.iter().map(|r| r.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();
    let mut metric_names: Vec<String> =
        reports.iter().flat_map(|r| r.metrics.keys().cloned()).collect();
    metric_names.sort();
    metric_names.dedup();

    let mut csv = String::new();
    csv.push_str("metric,method");
    for ds in &datasets {
        csv.push(',');
        csv.push_str(ds);
    }
    csv.push_str(",avg_rank\n");

    for metric in &metric_names {
        // methods × datasets score grid for this metric.
        let grid: Vec<Vec<Option<f64>>> = methods
            .iter()
            .map(|m| {
                datasets
                    .iter()
                    .map(|ds| {
                        reports
                            .iter()
                            .find(|r| &r.method == m && &r.dataset == ds)
                            .and_then(|r| r.metrics.get(metric))
                            .map(|s| s.mean)
                    })
                    .collect()
            })
            .collect();
        let ranks = metrics::average_ranks(&grid);
        for (m, method) in methods.iter().enumerate() {
            csv.push_str(metric);
            csv.push(',');
            csv.push_str(method);
            for value in &grid[m] {
                csv.push(',');
                if let Some(v) = value {
                    csv.push_str(&format!("{v:.6}"));
                }
            }
            csv.push_str(&format!(",{:.3}\n", ranks[m]));
        }
    }

    match out {
        Some(path) => std::fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_list_parsing() {
        assert_eq!(parse_seeds(&None).unwrap(), vec![0]);
        assert_eq!(parse_seeds(&Some("3".into())).unwrap(), vec![3]);
        assert_eq!(parse_seeds(&Some("1, 2,5".into())).unwrap(), vec![1, 2, 5]);
        assert!(parse_seeds(&Some("x".into())).is_err());
    }

    #[test]
    fn unknown_metric_is_usage_error() {
        let err = cmd_evaluate(
            PathBuf::from("/nonexistent.csv"),
            None,
            "shape,bogus".into(),
            None,
            None,
            None,
            PathBuf::from("/nonexistent2.csv"),
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("valid metrics"));
    }
}
