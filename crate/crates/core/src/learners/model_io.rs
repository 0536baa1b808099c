//! Model files: one JSON header line followed by a little-endian binary
//! parameter payload. The header records the learner configuration, the
//! feature layout, and the payload length and SHA-256 digest.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    Activation, Forest, LearnerConfig, LinearModel, MlpModel, MlpNetwork, ModelParams, SgdLoss,
    TrainedModel, Tree, TreeNode,
};
use crate::error::{Error, Result};
use crate::features::{FeatureSpec, Standardizer};
use crate::raster_io::{split_json_header, write_bytes};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "aquifer-model";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: String,
    config: LearnerConfig,
    features: Option<FeatureSpec>,
    feature_dim: usize,
    default_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    linear_loss: Option<SgdLoss>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_trees: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layer_sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epochs_run: Option<usize>,
    payload_bytes: usize,
    payload_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct Writer(Vec<u8>);

impl Writer {
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|&x| self.f64(x));
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format("payload", "payload ends early"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

const NODE_LEAF: u8 = 0;
const NODE_SPLIT: u8 = 1;

pub fn encode_model(model: &TrainedModel) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    let mut header = Header {
        format: FORMAT_NAME.into(),
        version: MODEL_FORMAT_VERSION,
        kind: model.kind().into(),
        config: model.config.clone(),
        features: model.features,
        feature_dim: model.feature_dim,
        default_threshold: model.default_threshold,
        linear_loss: None,
        n_trees: None,
        layer_sizes: None,
        activation: None,
        epochs_run: None,
        payload_bytes: 0,
        payload_sha256: String::new(),
    };
    match &model.params {
        ModelParams::Linear(m) => {
            header.linear_loss = Some(m.loss);
            w.f64s(&m.standardizer.mean);
            w.f64s(&m.standardizer.scale);
            w.f64s(&m.weights);
            w.f64(m.bias);
        }
        ModelParams::Forest(f) => {
            header.n_trees = Some(f.trees.len());
            for t in &f.trees {
                w.u32(t.nodes.len() as u32);
                for n in &t.nodes {
                    match *n {
                        TreeNode::Leaf { value } => {
                            w.0.push(NODE_LEAF);
                            w.f64(value);
                        }
                        TreeNode::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            w.0.push(NODE_SPLIT);
                            w.u32(feature);
                            w.f64(threshold);
                            w.u32(left);
                            w.u32(right);
                        }
                    }
                }
            }
        }
        ModelParams::Mlp(m) => {
            header.layer_sizes = Some(m.network.sizes().to_vec());
            header.activation = Some(m.network.activation());
            header.epochs_run = Some(m.epochs_run);
            w.f64s(&m.standardizer.mean);
            w.f64s(&m.standardizer.scale);
            w.f64s(m.network.params());
        }
    }
    let payload = w.0;
    header.payload_bytes = payload.len();
    header.payload_sha256 = hex(&Sha256::digest(&payload));
    let mut out =
        serde_json::to_vec(&header).map_err(|e| Error::format("header", e.to_string()))?;
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

fn missing(field: &str) -> Error {
    Error::format(field, "missing for this model kind")
}

pub fn decode_model(bytes: &[u8]) -> Result<TrainedModel> {
    let (value, _, payload) = split_json_header(bytes, "model")?;
    let obj = value.as_object().expect("checked object");
    match obj.get("format").and_then(|v| v.as_str()) {
        Some(FORMAT_NAME) => {}
        _ => {
            return Err(Error::format(
                "format",
                format!("expected \"{FORMAT_NAME}\""),
            ))
        }
    }
    match obj.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == MODEL_FORMAT_VERSION as u64 => {}
        other => {
            return Err(Error::format(
                "version",
                format!("unsupported version {other:?}, expected {MODEL_FORMAT_VERSION}"),
            ))
        }
    }
    let header: Header = serde_json::from_value(value.clone()).map_err(|e| {
        let msg = e.to_string();
        let field = msg
            .split('`')
            .nth(1)
            .map(str::to_string)
            .unwrap_or_else(|| "header".into());
        Error::format(field, msg)
    })?;
    if payload.len() != header.payload_bytes {
        return Err(Error::SizeMismatch {
            expected: header.payload_bytes,
            actual: payload.len(),
        });
    }
    if hex(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(Error::format("payload_sha256", "payload checksum mismatch"));
    }
    let d = header.feature_dim;
    let mut r = Reader {
        buf: payload,
        pos: 0,
    };
    let expected_kind = match &header.config {
        LearnerConfig::Sgd(_) => "linear",
        LearnerConfig::Rf(_) => "forest",
        LearnerConfig::Mlp(_) => "mlp",
    };
    if header.kind != expected_kind {
        return Err(Error::format(
            "kind",
            format!(
                "kind {} does not match a {} config",
                header.kind,
                header.config.name()
            ),
        ));
    }
    let params = match header.kind.as_str() {
        "linear" => {
            let loss = header.linear_loss.ok_or_else(|| missing("linear_loss"))?;
            let mean = r.f64s(d)?;
            let scale = r.f64s(d)?;
            let weights = r.f64s(d)?;
            let bias = r.f64()?;
            ModelParams::Linear(LinearModel {
                loss,
                standardizer: Standardizer { mean, scale },
                weights,
                bias,
            })
        }
        "forest" => {
            let n_trees = header.n_trees.ok_or_else(|| missing("n_trees"))?;
            let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
            for _ in 0..n_trees {
                let count = r.u32()? as usize;
                let mut nodes = Vec::with_capacity(count.min(1 << 20));
                for _ in 0..count {
                    nodes.push(match r.u8()? {
                        NODE_LEAF => TreeNode::Leaf { value: r.f64()? },
                        NODE_SPLIT => {
                            let feature = r.u32()?;
                            let threshold = r.f64()?;
                            let left = r.u32()?;
                            let right = r.u32()?;
                            if feature as usize >= d
                                || left as usize >= count
                                || right as usize >= count
                            {
                                return Err(Error::format(
                                    "payload",
                                    "tree node index out of range",
                                ));
                            }
                            TreeNode::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            }
                        }
                        t => return Err(Error::format("payload", format!("unknown node tag {t}"))),
                    });
                }
                if nodes.is_empty() {
                    return Err(Error::format("payload", "empty tree"));
                }
                trees.push(Tree { nodes });
            }
            ModelParams::Forest(Forest { trees })
        }
        "mlp" => {
            let sizes = header
                .layer_sizes
                .clone()
                .ok_or_else(|| missing("layer_sizes"))?;
            let activation = header.activation.ok_or_else(|| missing("activation"))?;
            if sizes.first() != Some(&d) {
                return Err(Error::format(
                    "layer_sizes",
                    "input size differs from feature_dim",
                ));
            }
            let mean = r.f64s(d)?;
            let scale = r.f64s(d)?;
            let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            let params = r.f64s(count)?;
            ModelParams::Mlp(MlpModel {
                standardizer: Standardizer { mean, scale },
                network: MlpNetwork::from_parts(sizes, activation, params)?,
                epochs_run: header.epochs_run.unwrap_or(0),
            })
        }
        other => {
            return Err(Error::format(
                "kind",
                format!("unknown model kind {other:?}"),
            ))
        }
    };
    if r.pos != payload.len() {
        return Err(Error::format("payload", "trailing bytes after parameters"));
    }
    Ok(TrainedModel {
        params,
        feature_dim: d,
        default_threshold: header.default_threshold,
        config: header.config,
        features: header.features,
    })
}

pub fn save_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_model(model)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TrainedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
