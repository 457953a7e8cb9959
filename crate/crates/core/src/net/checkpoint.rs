//! `.fmc` checkpoints.
//!
//! Layout: `"FMC1" | u32 LE header length | JSON header | f64 LE parameters`.
//! Parameters follow in this order: BN gamma, beta, running mean, running
//! variance; then weights and bias of each conv layer; then, when the header
//! declares an optimizer, one velocity buffer per trainable parameter in
//! the same order as [`FusionModel::param_slices`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{BatchNormLayer, ConvLayer};
use super::model::{AblationFlags, FusionModel, OptimizerState};
use crate::error::{Error, Result};

pub const FMC_MAGIC: &[u8; 4] = b"FMC1";
pub const FMC_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerShape {
    in_ch: usize,
    out_ch: usize,
    k: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BnHeader {
    channels: usize,
    momentum: f64,
    epsilon: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerHeader {
    learning_rate: f64,
    momentum_coeff: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FmcHeader {
    version: u32,
    arch: Vec<LayerShape>,
    flags: AblationFlags,
    bn: BnHeader,
    optimizer: Option<OptimizerHeader>,
}

pub fn encode_checkpoint(model: &FusionModel, opt: Option<&OptimizerState>) -> Result<Vec<u8>> {
    model.validate()?;
    if let Some(o) = opt {
        if !o.matches(model) {
            return Err(Error::ShapeMismatch("optimizer state does not match model".into()));
        }
    }
    let header = FmcHeader {
        version: FMC_VERSION,
        arch: model
            .layers
            .iter()
            .map(|l| LayerShape {
                in_ch: l.in_ch,
                out_ch: l.out_ch,
                k: l.k,
            })
            .collect(),
        flags: model.flags,
        bn: BnHeader {
            channels: model.bn.channels(),
            momentum: model.bn.momentum,
            epsilon: model.bn.epsilon,
        },
        optimizer: opt.map(|o| OptimizerHeader {
            learning_rate: o.learning_rate,
            momentum_coeff: o.momentum_coeff,
        }),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(FMC_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let mut put = |s: &[f64]| s.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    put(&model.bn.gamma);
    put(&model.bn.beta);
    put(&model.bn.running_mean);
    put(&model.bn.running_var);
    for l in &model.layers {
        put(&l.weights);
        put(&l.bias);
    }
    if let Some(o) = opt {
        for v in &o.velocity {
            put(v);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<Vec<f64>> {
        let end = self.pos + n * 8;
        if end > self.bytes.len() {
            return Err(Error::MalformedCheckpoint(format!(
                "parameter payload truncated at byte {}",
                self.bytes.len()
            )));
        }
        let v = self.bytes[self.pos..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        self.pos = end;
        Ok(v)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(FusionModel, Option<OptimizerState>)> {
    if bytes.len() < 8 || &bytes[..4] != FMC_MAGIC {
        return Err(Error::MalformedCheckpoint("missing FMC1 magic".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + n {
        return Err(Error::MalformedCheckpoint("header truncated".into()));
    }
    let header: FmcHeader = serde_json::from_slice(&bytes[8..8 + n])
        .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
    if header.version != FMC_VERSION {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: FMC_VERSION,
        });
    }
    if header.arch.len() != 3 {
        return Err(Error::MalformedCheckpoint(format!(
            "expected 3 conv layers, found {}",
            header.arch.len()
        )));
    }
    let mut r = Reader {
        bytes: &bytes[8 + n..],
        pos: 0,
    };
    let c = header.bn.channels;
    let mut bn = BatchNormLayer::new(c);
    bn.momentum = header.bn.momentum;
    bn.epsilon = header.bn.epsilon;
    bn.gamma = r.take(c)?;
    bn.beta = r.take(c)?;
    bn.running_mean = r.take(c)?;
    bn.running_var = r.take(c)?;

    let mut layers = Vec::with_capacity(3);
    for shape in &header.arch {
        let mut layer = ConvLayer::zeros(shape.in_ch, shape.out_ch, shape.k)
            .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;
        layer.weights = r.take(layer.weight_len())?;
        layer.bias = r.take(shape.out_ch)?;
        layers.push(layer);
    }
    let model = FusionModel {
        bn,
        layers: layers.try_into().expect("three layers"),
        flags: header.flags,
    };
    model
        .validate()
        .map_err(|e| Error::MalformedCheckpoint(e.to_string()))?;

    let opt = match header.optimizer {
        Some(h) => {
            let velocity = model
                .param_slices()
                .iter()
                .map(|s| r.take(s.len()))
                .collect::<Result<Vec<_>>>()?;
            Some(OptimizerState {
                learning_rate: h.learning_rate,
                momentum_coeff: h.momentum_coeff,
                velocity,
            })
        }
        None => None,
    };
    if r.pos != r.bytes.len() {
        return Err(Error::MalformedCheckpoint(format!(
            "{} trailing bytes",
            r.bytes.len() - r.pos
        )));
    }
    Ok((model, opt))
}

pub fn save_checkpoint(
    model: &FusionModel,
    opt: Option<&OptimizerState>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode_checkpoint(model, opt)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(FusionModel, Option<OptimizerState>)> {
    decode_checkpoint(&fs::read(path)?)
}
