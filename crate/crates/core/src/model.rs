//! Self-describing model files: network parameters plus normalization statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ColumnStats, Dataset, NormStats, N_FEATURES, N_TARGETS};
use crate::nn::{Activation, Layer, Network};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDoc {
    alpha: f64,
    output_activation: Activation,
    layers: Vec<LayerDoc>,
    feature_stats: Option<ColumnStats>,
    target_stats: Option<ColumnStats>,
}

/// A trained network together with the statistics its inputs were normalized with.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub network: Network,
    pub stats: Option<NormStats>,
}

impl Model {
    pub fn new(network: Network, stats: Option<NormStats>) -> Result<Self> {
        if let Some(s) = &stats {
            s.validate()?;
            if network.input_width() != N_FEATURES || network.output_width() != N_TARGETS {
                return Err(Error::Shape(format!(
                    "network maps {} -> {}, statistics describe {N_FEATURES} -> {N_TARGETS}",
                    network.input_width(),
                    network.output_width()
                )));
            }
        }
        Ok(Self { network, stats })
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDoc {
            alpha: self.network.alpha(),
            output_activation: self.network.output_activation(),
            layers: self
                .network
                .layers()
                .iter()
                .map(|l| LayerDoc {
                    rows: l.rows(),
                    cols: l.cols(),
                    weights: l.weights.clone(),
                    biases: l.biases.clone(),
                })
                .collect(),
            feature_stats: self.stats.as_ref().map(|s| s.features.clone()),
            target_stats: self.stats.as_ref().map(|s| s.targets.clone()),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        let layers = doc
            .layers
            .into_iter()
            .map(|l| Layer::new(l.rows, l.cols, l.weights, l.biases))
            .collect::<Result<Vec<_>>>()?;
        let network = Network::new(layers, doc.output_activation, doc.alpha)?;
        let stats = match (doc.feature_stats, doc.target_stats) {
            (Some(features), Some(targets)) => Some(NormStats { features, targets }),
            (None, None) => None,
            _ => {
                return Err(Error::InvalidArgument(
                    "model file has only one of feature_stats and target_stats".into(),
                ))
            }
        };
        Self::new(network, stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn stats(&self) -> Result<&NormStats> {
        self.stats
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model carries no normalization statistics".into()))
    }

    /// Physical-unit targets from physical-unit features.
    pub fn predict_raw(&self, features: &[f64; N_FEATURES]) -> Result<[f64; N_TARGETS]> {
        let stats = self.stats()?;
        let mut x = *features;
        stats.features.forward(&mut x);
        let y = self.network.predict(&x)?;
        let mut out = [0.0; N_TARGETS];
        out.copy_from_slice(&y);
        stats.targets.inverse(&mut out);
        Ok(out)
    }

    /// Normalizes a raw dataset with the model's statistics.
    pub fn normalize(&self, data: &Dataset) -> Result<Dataset> {
        crate::features::apply_normalization(data, self.stats()?, crate::features::Direction::Forward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn stats() -> NormStats {
        NormStats {
            features: ColumnStats {
                mean: (0..N_FEATURES).map(|i| i as f64 * 0.1).collect(),
                std: vec![1.0 / 3.0; N_FEATURES],
            },
            targets: ColumnStats {
                mean: vec![1e5, 5e5, 0.2, 12.0],
                std: vec![3e4, 1e5, 0.1, 2.5],
            },
        }
    }

    fn model() -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Network::xavier(&[19, 16, 16, 4], Activation::Identity, 0.7, &mut rng).unwrap();
        Model::new(net, Some(stats())).unwrap()
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let m = model();
        let back = Model::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let x: [f64; N_FEATURES] = std::array::from_fn(|_| rng.random_range(-10.0..10.0));
            let a = m.predict_raw(&x).unwrap();
            let b = back.predict_raw(&x).unwrap();
            assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
    }

    #[test]
    fn document_field_names() {
        let v: serde_json::Value = serde_json::from_str(&model().to_json().unwrap()).unwrap();
        for key in ["alpha", "output_activation", "layers", "feature_stats", "target_stats"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["output_activation"], "identity");
        assert_eq!(v["layers"][0]["rows"], 16);
        assert_eq!(v["layers"][0]["cols"], 19);
        assert_eq!(v["layers"][0]["weights"].as_array().unwrap().len(), 16 * 19);
        assert_eq!(v["target_stats"]["std"][2], 0.1);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let m = model();
        m.save(&path).unwrap();
        assert_eq!(Model::load(&path).unwrap(), m);
        assert!(matches!(Model::load(dir.path().join("missing.json")), Err(Error::Io { .. })));
    }

    #[test]
    fn rejects_inconsistent_documents() {
        let mut v: serde_json::Value = serde_json::from_str(&model().to_json().unwrap()).unwrap();
        v["target_stats"] = serde_json::Value::Null;
        assert!(Model::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&model().to_json().unwrap()).unwrap();
        v["layers"][1]["cols"] = 15.into();
        assert!(Model::from_json(&v.to_string()).is_err());
        assert!(Model::from_json("{").is_err());
    }
}
