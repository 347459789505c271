//! JSON parameter records: layer shapes plus row-major `f64` values.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::net::{Activation, ArchTag, DenseNet, Layer};
use super::residual::ResidualMap;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "ostar-ckpt-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Row-major `(in_dim, out_dim)`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetRecord {
    pub tag: ArchTag,
    pub layers: Vec<LayerRecord>,
}

impl From<&DenseNet> for NetRecord {
    fn from(net: &DenseNet) -> Self {
        Self {
            tag: net.tag(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    activation: l.activation,
                    weight: l.weight.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<NetRecord> for DenseNet {
    type Error = Error;

    fn try_from(rec: NetRecord) -> Result<Self> {
        let layers = rec
            .layers
            .into_iter()
            .map(|l| {
                let weight = Array2::from_shape_vec((l.in_dim, l.out_dim), l.weight)
                    .map_err(|e| Error::Shape(format!("layer weight: {e}")))?;
                Ok(Layer {
                    weight,
                    bias: Array1::from(l.bias),
                    activation: l.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        DenseNet::from_layers(rec.tag, layers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualRecord {
    pub blocks: Vec<NetRecord>,
}

impl From<&ResidualMap> for ResidualRecord {
    fn from(map: &ResidualMap) -> Self {
        Self {
            blocks: map.blocks().iter().map(NetRecord::from).collect(),
        }
    }
}

impl TryFrom<ResidualRecord> for ResidualMap {
    type Error = Error;

    fn try_from(rec: ResidualRecord) -> Result<Self> {
        let blocks = rec
            .blocks
            .into_iter()
            .map(DenseNet::try_from)
            .collect::<Result<Vec<_>>>()?;
        ResidualMap::from_blocks(blocks)
    }
}

/// A standalone single-network checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetCheckpoint {
    pub version: String,
    pub net: NetRecord,
}

pub fn save_net(path: &Path, net: &DenseNet) -> Result<()> {
    let ckpt = NetCheckpoint {
        version: CHECKPOINT_VERSION.to_string(),
        net: net.into(),
    };
    let text = serde_json::to_string(&ckpt)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_net(path: &Path) -> Result<DenseNet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    check_version(&value)?;
    let ckpt: NetCheckpoint = serde_json::from_value(value)?;
    ckpt.net.try_into()
}

/// Fails with a version error unless the `version` field matches.
pub fn check_version(value: &serde_json::Value) -> Result<()> {
    let found = value
        .get("version")
        .and_then(|v| v.as_str())
        .unwrap_or("<missing>");
    if found != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: found.to_string(),
            expected: CHECKPOINT_VERSION.to_string(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{InitScheme, NetSpec, init_params};

    #[test]
    fn net_round_trips_bitwise() {
        let spec = NetSpec::new(ArchTag::Classifier, 3, &[7], 4);
        let net = init_params(&spec, InitScheme::Normal, 0.37, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        save_net(&path, &net).unwrap();
        assert_eq!(load_net(&path).unwrap(), net);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        std::fs::write(&path, r#"{"version":"ostar-ckpt-0","net":{"tag":"critic","layers":[]}}"#).unwrap();
        assert!(matches!(load_net(&path), Err(Error::Version { .. })));
    }
}
