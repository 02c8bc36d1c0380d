//! Binary model container.
//!
//! Layout: 8-byte magic `MCNN0001`, little-endian `u32` manifest length, the
//! JSON manifest, then every weight as a little-endian IEEE-754 `f64`,
//! tensors concatenated in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, Network, ParamTensor, Shape};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MCNN0001";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    input_shape: Shape,
    layers: Vec<LayerSpec>,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize, PartialEq, Debug)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn manifest_of(net: &Network) -> Manifest {
    let tensors = net
        .params()
        .iter()
        .enumerate()
        .flat_map(|(l, ts)| {
            ts.iter().map(move |t| TensorEntry {
                name: format!("layer{l}.{}", t.name),
                shape: t.shape.clone(),
            })
        })
        .collect();
    Manifest {
        input_shape: net.input_shape(),
        layers: net.layers().to_vec(),
        seed: net.seed(),
        tensors,
    }
}

/// The JSON manifest written into the container for `net`.
pub fn model_manifest(net: &Network) -> String {
    serde_json::to_string(&manifest_of(net)).expect("manifest serializes")
}

pub fn save_model_bytes(net: &Network) -> Vec<u8> {
    let manifest = model_manifest(net);
    let mut out = Vec::with_capacity(12 + manifest.len() + 8 * net.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for v in net.params().iter().flatten().flat_map(|t| &t.data) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn save_model(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, save_model_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    load_model_bytes(&bytes)
}

/// Parameter count implied by a layer chain, with overflow and shape checks
/// but without allocating.
fn layout_param_count(input: Shape, layers: &[LayerSpec]) -> Result<usize> {
    let fmt = |m: String| Error::Format(format!("manifest: {m}"));
    let len = |s: Shape| {
        s.height
            .checked_mul(s.width)
            .and_then(|v| v.checked_mul(s.channels))
            .ok_or_else(|| fmt("shape overflows".into()))
    };
    if len(input)? == 0 {
        return Err(fmt("empty input shape".into()));
    }
    let mut current = input;
    let mut total: usize = 0;
    for (l, spec) in layers.iter().enumerate() {
        let next = spec
            .output_shape(current)
            .map_err(|m| fmt(format!("layer {l}: {m}")))?;
        len(next)?;
        let n = match *spec {
            LayerSpec::Conv {
                out_channels,
                kernel_side,
                ..
            } => out_channels
                .checked_mul(kernel_side)
                .and_then(|v| v.checked_mul(kernel_side))
                .and_then(|v| v.checked_mul(current.channels))
                .and_then(|v| v.checked_add(out_channels)),
            LayerSpec::Dense { out_features } => len(current)?
                .checked_mul(out_features)
                .and_then(|v| v.checked_add(out_features)),
            LayerSpec::AffineNorm => current.channels.checked_mul(2),
            _ => Some(0),
        };
        total = n
            .and_then(|n| total.checked_add(n))
            .ok_or_else(|| fmt("parameter count overflows".into()))?;
        current = next;
    }
    Ok(total)
}

/// Parses a container. Any defect yields a format error and no network.
pub fn load_model_bytes(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Format("bad model magic".into()));
    }
    let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if manifest_len > body.len() {
        return Err(Error::Format(format!(
            "manifest length {manifest_len} exceeds file size"
        )));
    }
    let manifest: Manifest = serde_json::from_slice(&body[..manifest_len])
        .map_err(|e| Error::Format(format!("manifest: {e}")))?;
    if manifest.layers.is_empty() {
        return Err(Error::Format("manifest: no layers".into()));
    }
    let payload = &body[manifest_len..];
    let count = layout_param_count(manifest.input_shape, &manifest.layers)?;
    if count.checked_mul(8) != Some(payload.len()) {
        return Err(Error::Format(format!(
            "weight payload has {} bytes, layout needs {count} values",
            payload.len()
        )));
    }

    let template = Network::new(manifest.input_shape, manifest.layers.clone(), manifest.seed)
        .map_err(|e| Error::Format(e.to_string()))?;
    let expected = manifest_of(&template).tensors;
    if manifest.tensors != expected {
        return Err(Error::Format(
            "manifest tensor list does not match the layer layout".into(),
        ));
    }

    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let params: Vec<Vec<ParamTensor>> = template
        .params()
        .iter()
        .map(|ts| {
            ts.iter()
                .map(|t| ParamTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: values.by_ref().take(t.data.len()).collect(),
                })
                .collect()
        })
        .collect();
    Network::with_params(manifest.input_shape, manifest.layers, manifest.seed, params)
        .map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::Architecture;

    #[test]
    fn round_trip_is_exact() {
        let net = Architecture::Densish.build(9).unwrap();
        let back = load_model_bytes(&save_model_bytes(&net)).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn tampering_is_rejected() {
        let net = Architecture::Vggish.build(0).unwrap();
        let bytes = save_model_bytes(&net);

        let mut bad = bytes.clone();
        bad[3] ^= 0x20;
        assert!(matches!(load_model_bytes(&bad), Err(Error::Format(_))));

        assert!(matches!(
            load_model_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        assert!(matches!(load_model_bytes(&bytes[..20]), Err(Error::Format(_))));

        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(matches!(load_model_bytes(&extra), Err(Error::Format(_))));

        let mut nan = bytes.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(load_model_bytes(&nan), Err(Error::Format(_))));
    }

    #[test]
    fn manifest_shape_mismatch_is_rejected() {
        let net = Architecture::Vggish.build(0).unwrap();
        let manifest = model_manifest(&net).replace("\"out_features\":3", "\"out_features\":4");
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        bytes.extend_from_slice(manifest.as_bytes());
        bytes.extend(std::iter::repeat_n(0, 8 * net.num_params()));
        assert!(matches!(load_model_bytes(&bytes), Err(Error::Format(_))));
    }
}
