//! Model bundle persistence: a JSON header carrying the layer topology,
//! schema, fingerprint, and preprocessing plan, plus a base64 blob of the
//! 64-bit parameter arrays in declared layer order.

use std::io::{Read, Write};
use std::path::Path;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, CpEdge, Layer, LayerKind, VarKind};
use crate::dataset::{schema_fingerprint, ColumnSchema};
use crate::error::{Error, Result};
use crate::preprocess::Preprocessor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ff,
    Sm,
    Tabpc,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ff" => Ok(ModelKind::Ff),
            "sm" => Ok(ModelKind::Sm),
            "tabpc" => Ok(ModelKind::Tabpc),
            other => Err(Error::Usage(format!(
                "unknown model kind '{other}' (expected ff, sm, or tabpc)"
            ))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Ff => write!(f, "ff"),
            ModelKind::Sm => write!(f, "sm"),
            ModelKind::Tabpc => write!(f, "tabpc"),
        }
    }
}

/// A trained circuit together with everything needed to sample raw rows.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub kind: ModelKind,
    pub circuit: Circuit,
    pub preprocessor: Preprocessor,
    /// Raw-data schema the model was fit on.
    pub schema: Vec<ColumnSchema>,
    pub fingerprint: String,
}

impl ModelBundle {
    pub fn new(
        kind: ModelKind,
        circuit: Circuit,
        preprocessor: Preprocessor,
        schema: Vec<ColumnSchema>,
    ) -> Self {
        let fingerprint = schema_fingerprint(&schema);
        ModelBundle { kind, circuit, preprocessor, schema, fingerprint }
    }

    /// Errors unless `schema` fingerprints identically to the model's.
    pub fn check_schema(&self, schema: &[ColumnSchema]) -> Result<()> {
        if schema_fingerprint(schema) != self.fingerprint {
            return Err(Error::IncompatibleModel(
                "schema fingerprint does not match the model file".into(),
            ));
        }
        Ok(())
    }

    pub fn save<W: Write>(&self, out: W) -> Result<()> {
        let params = self.circuit.export_params();
        let mut bytes = Vec::with_capacity(params.len() * 8);
        for p in &params {
            bytes.extend_from_slice(&p.to_le_bytes());
        }
        let file = ModelFile {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            fingerprint: self.fingerprint.clone(),
            schema: self.schema.clone(),
            preprocessor: self.preprocessor.clone(),
            header: CircuitHeader::from_circuit(&self.circuit),
            params_b64: base64::engine::general_purpose::STANDARD.encode(&bytes),
        };
        serde_json::to_writer(out, &file)?;
        Ok(())
    }

    pub fn save_to_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.save(std::io::BufWriter::new(file))
    }

    pub fn load<R: Read>(source: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(source)?;
        if file.format_version != FORMAT_VERSION {
            return Err(Error::IncompatibleModel(format!(
                "unsupported model format version {}",
                file.format_version
            )));
        }
        if schema_fingerprint(&file.schema) != file.fingerprint {
            return Err(Error::IncompatibleModel(
                "embedded schema does not match the stored fingerprint".into(),
            ));
        }
        let mut circuit = file.header.into_circuit()?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(file.params_b64.as_bytes())
            .map_err(|e| Error::IncompatibleModel(format!("parameter blob: {e}")))?;
        if bytes.len() != circuit.param_count() * 8 {
            return Err(Error::IncompatibleModel(format!(
                "parameter blob holds {} bytes, expected {}",
                bytes.len(),
                circuit.param_count() * 8
            )));
        }
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        circuit.import_params(&params);
        Ok(ModelBundle {
            kind: file.kind,
            circuit,
            preprocessor: file.preprocessor,
            schema: file.schema,
            fingerprint: file.fingerprint,
        })
    }

    pub fn load_from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(file))
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    kind: ModelKind,
    fingerprint: String,
    schema: Vec<ColumnSchema>,
    preprocessor: Preprocessor,
    header: CircuitHeader,
    params_b64: String,
}

/// Parameter-free topology of a circuit.
#[derive(Serialize, Deserialize)]
struct CircuitHeader {
    num_vars: usize,
    var_kinds: Vec<VarKind>,
    layers: Vec<LayerHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerHeader {
    Gaussian { var: usize, width: usize },
    Categorical { var: usize, cardinality: usize, width: usize },
    Cp { width: usize, scope: Vec<usize>, edges: Vec<EdgeHeader> },
}

#[derive(Serialize, Deserialize)]
struct EdgeHeader {
    child: usize,
    weighted: bool,
}

impl CircuitHeader {
    fn from_circuit(circuit: &Circuit) -> Self {
        let layers = circuit
            .layers
            .iter()
            .map(|layer| match &layer.kind {
                LayerKind::InputGaussian { var, .. } => {
                    LayerHeader::Gaussian { var: *var, width: layer.width }
                }
                LayerKind::InputCategorical { var, cardinality, .. } => LayerHeader::Categorical {
                    var: *var,
                    cardinality: *cardinality,
                    width: layer.width,
                },
                LayerKind::CpSumProduct { children } => LayerHeader::Cp {
                    width: layer.width,
                    scope: layer.scope.clone(),
                    edges: children
                        .iter()
                        .map(|e| EdgeHeader { child: e.child, weighted: e.log_weights.is_some() })
                        .collect(),
                },
            })
            .collect();
        CircuitHeader { num_vars: circuit.num_vars, var_kinds: circuit.var_kinds.clone(), layers }
    }

    fn into_circuit(self) -> Result<Circuit> {
        let mut layers: Vec<Layer> = Vec::with_capacity(self.layers.len());
        for header in self.layers {
            let layer = match header {
                LayerHeader::Gaussian { var, width } => Layer {
                    kind: LayerKind::InputGaussian {
                        var,
                        mean: vec![0.0; width],
                        log_std: vec![0.0; width],
                    },
                    width,
                    scope: vec![var],
                },
                LayerHeader::Categorical { var, cardinality, width } => Layer {
                    kind: LayerKind::InputCategorical {
                        var,
                        cardinality,
                        logits: vec![0.0; width * cardinality],
                    },
                    width,
                    scope: vec![var],
                },
                LayerHeader::Cp { width, scope, edges } => {
                    let children = edges
                        .iter()
                        .map(|e| {
                            let child = layers.get(e.child).ok_or_else(|| {
                                Error::IncompatibleModel(format!(
                                    "edge references layer {} before it exists",
                                    e.child
                                ))
                            })?;
                            Ok(CpEdge {
                                child: e.child,
                                log_weights: e
                                    .weighted
                                    .then(|| vec![0.0; width * child.width]),
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Layer { kind: LayerKind::CpSumProduct { children }, width, scope }
                }
            };
            layers.push(layer);
        }
        let circuit = Circuit { layers, num_vars: self.num_vars, var_kinds: self.var_kinds };
        if circuit.layers.is_empty() {
            return Err(Error::IncompatibleModel("model file has no layers".into()));
        }
        Ok(circuit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::EvidenceMask;
    use crate::dataset::{ColumnData, Table};
    use crate::preprocess::{PreprocessOptions, Preprocessor};
    use crate::structure::{build_sm, build_tree_circuit, BuildConfig};

    fn demo_table() -> Table {
        let n = 300;
        let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let b: Vec<u32> = (0..n as u32).map(|i| i % 3).collect();
        let c: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos() + 1.0).collect();
        Table::new(
            vec![
                ColumnSchema::numerical("a"),
                ColumnSchema::categorical("b", &["p", "q", "r"]),
                ColumnSchema::numerical("c"),
            ],
            vec![
                ColumnData::Numerical(a),
                ColumnData::Categorical(b),
                ColumnData::Numerical(c),
            ],
        )
    }

    #[test]
    fn bundle_round_trips_log_density() {
        let table = demo_table();
        let opts = PreprocessOptions { enable_dequantize: false, ..Default::default() };
        let (prep, circuit_table, _) = Preprocessor::fit(&table, &opts).unwrap();
        let cfg = BuildConfig { k: 4, seed: 3, ..Default::default() };
        let (circuit, _) = build_tree_circuit(&circuit_table, &cfg).unwrap();
        let bundle =
            ModelBundle::new(ModelKind::Tabpc, circuit, prep, table.schema.clone());

        let mut buf = Vec::new();
        bundle.save(&mut buf).unwrap();
        let loaded = ModelBundle::load(buf.as_slice()).unwrap();

        let mask = EvidenceMask::all_observed(circuit_table.n_columns());
        let data = crate::train::CircuitData::from_table(&circuit_table);
        for row in 0..20 {
            let a = bundle.circuit.log_density(data.row(row), &mask).unwrap();
            let b = loaded.circuit.log_density(data.row(row), &mask).unwrap();
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(loaded.fingerprint, bundle.fingerprint);
    }

    #[test]
    fn fingerprint_mismatch_is_detected() {
        let table = demo_table();
        let opts = PreprocessOptions::default();
        let (prep, _, _) = Preprocessor::fit(&table, &opts).unwrap();
        let sm = build_sm(&prep.circuit_schema.clone(), 2, 0).unwrap();
        let bundle = ModelBundle::new(ModelKind::Sm, sm, prep, table.schema.clone());
        let mut other = table.schema.clone();
        other[0].name = "renamed".into();
        assert!(matches!(
            bundle.check_schema(&other).unwrap_err(),
            Error::IncompatibleModel(_)
        ));
        assert!(bundle.check_schema(&table.schema).is_ok());
    }
}
