//! Flat little-endian `f64` weights plus a JSON manifest describing how to
//! rebuild the network around them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layout, NetConfig, Supernet};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamKind;

pub const MODEL_FORMAT: &str = "gnas-model/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    /// Offset into the weight file, in `f64` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub config: NetConfig,
    pub layout: Layout,
    /// Temperature the logits were last used at (supernets only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_model(net: &Supernet, lambda: Option<f64>, bin: &Path, manifest: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    let mut tensors = Vec::new();
    let mut offset = 0;
    for id in net.store.ids() {
        let t = net.store.get(id);
        tensors.push(TensorEntry {
            name: net.store.name(id).to_string(),
            kind: net.store.kind(id),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for x in t.data() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    let m = ModelManifest {
        format: MODEL_FORMAT.into(),
        config: net.config.clone(),
        layout: net.layout.clone(),
        lambda,
        tensors,
    };
    std::fs::write(bin, bytes).map_err(|e| Error::io(bin, e))?;
    let json = serde_json::to_string_pretty(&m)? + "\n";
    std::fs::write(manifest, json).map_err(|e| Error::io(manifest, e))
}

pub fn load_model(bin: &Path, manifest: &Path) -> Result<(Supernet, ModelManifest)> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m: ModelManifest = serde_json::from_str(&text)?;
    if m.format != MODEL_FORMAT {
        return Err(Error::Validation(format!("unsupported model format {:?}", m.format)));
    }
    let bytes = std::fs::read(bin).map_err(|e| Error::io(bin, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Validation(format!("{}: truncated weight file", bin.display())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut net = match &m.layout {
        Layout::Supernet { space } => Supernet::new(m.config.clone(), space, 0)?,
        Layout::Discrete { arch } => Supernet::for_arch(m.config.clone(), arch, 0)?,
    };
    let ids: Vec<_> = net.store.ids().collect();
    if ids.len() != m.tensors.len() {
        return Err(Error::Validation(format!(
            "manifest lists {} tensors, network has {}",
            m.tensors.len(),
            ids.len()
        )));
    }
    for (id, e) in ids.into_iter().zip(&m.tensors) {
        if net.store.name(id) != e.name {
            return Err(Error::Validation(format!(
                "manifest tensor {} where {} was expected",
                e.name,
                net.store.name(id)
            )));
        }
        let n: usize = e.shape.iter().product();
        let data = values
            .get(e.offset..e.offset + n)
            .ok_or_else(|| Error::Validation(format!("weight file too short for {}", e.name)))?;
        net.store.set(id, Tensor::new(e.shape.clone(), data.to_vec())?)?;
    }
    Ok((net, m))
}
