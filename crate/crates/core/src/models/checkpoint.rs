use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Model, ModelConfig, Parameters};
use crate::error::{Error, Result};
use crate::dataset::DatasetManifest;
use crate::signals::{PreprocessConfig, ScalerParams};
use crate::training::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "gripforge-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Self-describing model file. The optional pipeline fields let `predict`
/// reproduce the preprocessing the model was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub horizon: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaler: Option<ScalerParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetManifest>,
    pub tensors: Vec<NamedTensor>,
}

/// `(name, shape)` of every tensor in flat-parameter order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (u, c, o, hd) = (cfg.hidden, cfg.channels, cfg.output_dim, cfg.head);
    let k = u + c;
    let m = |n: &str, r: usize, c: usize| (n.to_string(), vec![r, c]);
    let v = |n: &str, r: usize| (n.to_string(), vec![r]);
    let head = [m("head.weight", hd, u), v("head.bias", hd), m("out.weight", o, hd), v("out.bias", o)];
    let mut l = match cfg.architecture {
        Architecture::Mlp => {
            let [l1, l2] = cfg.mlp_layers;
            return vec![
                m("layer1.weight", l1, cfg.window_len * c),
                v("layer1.bias", l1),
                m("layer2.weight", l2, l1),
                v("layer2.bias", l2),
                m("out.weight", o, l2),
                v("out.bias", o),
            ];
        }
        Architecture::Rnn => vec![m("W_x", u, c), m("W_rec", u, u)],
        Architecture::Lstm => {
            let mut l: Vec<_> = ["W_f", "W_i", "W_c", "W_o"].iter().map(|n| m(n, u, k)).collect();
            l.extend(["b_f", "b_i", "b_c", "b_o"].iter().map(|n| v(n, u)));
            l
        }
        Architecture::Gru => vec![m("W_z", u, k), m("W_r", u, k), v("b_z", u), v("b_r", u), m("W", u, k), v("b", u)],
    };
    l.extend(head);
    l
}

impl Checkpoint {
    pub fn from_model(model: &Model, horizon: usize, seed: u64) -> Self {
        let flat = model.to_flat();
        let mut off = 0;
        let tensors = layout(model.config())
            .into_iter()
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let values = flat[off..off + n].to_vec();
                off += n;
                NamedTensor { name, shape, values }
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            horizon,
            seed,
            sample_rate_hz: None,
            preprocess: None,
            scaler: None,
            train: None,
            dataset: None,
            tensors,
        }
    }

    /// Rebuilds the model, checking every tensor name, shape, and value.
    pub fn to_model(&self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::invalid(format!("not a checkpoint (format tag '{}')", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut model = Model::zeros(self.config.clone())?;
        let expected = layout(&self.config);
        if self.tensors.len() != expected.len() {
            return Err(Error::shape(format!(
                "checkpoint has {} tensors, {} expects {}",
                self.tensors.len(),
                self.config.architecture,
                expected.len()
            )));
        }
        let mut flat = Vec::with_capacity(model.param_count());
        for (name, shape) in expected {
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::shape(format!("checkpoint is missing tensor {name}")))?;
            if t.shape != shape {
                return Err(Error::shape(format!("tensor {name} has shape {:?}, expected {:?}", t.shape, shape)));
            }
            let n: usize = shape.iter().product();
            if t.values.len() != n {
                return Err(Error::shape(format!("tensor {name} holds {} values, shape needs {n}", t.values.len())));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor {name}")));
            }
            flat.extend_from_slice(&t.values);
        }
        model.set_flat(&flat)?;
        Ok(model)
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let text = serde_json::to_string(ckpt)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(path.display().to_string(), e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::UpdateGate;

    fn small(arch: Architecture) -> ModelConfig {
        ModelConfig {
            hidden: 3,
            head: 4,
            mlp_layers: [5, 4],
            ..ModelConfig::new(arch, 2)
        }
    }

    #[test]
    fn layout_covers_every_parameter() {
        for arch in Architecture::ALL {
            let cfg = small(arch);
            let total: usize = layout(&cfg).iter().map(|(_, s)| s.iter().product::<usize>()).sum();
            assert_eq!(total, cfg.param_count(), "{arch}");
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for arch in Architecture::ALL {
            let mut cfg = small(arch);
            cfg.update_gate = UpdateGate::Relu;
            let model = Model::init(cfg, 9).unwrap();
            let ck = Checkpoint::from_model(&model, 1, 9);
            let json = serde_json::to_string(&ck).unwrap();
            let back: Checkpoint = serde_json::from_str(&json).unwrap();
            assert_eq!(back.to_model().unwrap(), model, "{arch}");
        }
    }

    #[test]
    fn lstm_gate_blocks_are_named() {
        let model = Model::init(small(Architecture::Lstm), 1).unwrap();
        let ck = Checkpoint::from_model(&model, 1, 1);
        let super::super::Network::Lstm(p) = model.network() else { unreachable!() };
        let wc = ck.tensors.iter().find(|t| t.name == "W_c").unwrap();
        assert_eq!(wc.values, p.gate_block(2));
    }

    #[test]
    fn bad_shapes_are_rejected() {
        let model = Model::init(small(Architecture::Gru), 1).unwrap();
        let mut ck = Checkpoint::from_model(&model, 1, 1);
        ck.tensors[0].shape = vec![2, 11];
        assert!(matches!(ck.to_model(), Err(Error::Shape(_))));

        let mut ck = Checkpoint::from_model(&model, 1, 1);
        ck.tensors.pop();
        assert!(ck.to_model().is_err());

        let mut ck = Checkpoint::from_model(&model, 1, 1);
        ck.tensors[1].values.push(0.0);
        assert!(ck.to_model().is_err());

        let mut ck = Checkpoint::from_model(&model, 1, 1);
        ck.format = "other".into();
        assert!(ck.to_model().is_err());
    }
}
