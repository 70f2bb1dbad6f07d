//! Binary checkpoints and their JSON sidecar.
//!
//! Layout (little endian): magic `SGM0`, version `u16`, metadata length
//! `u32`, metadata JSON, then every parameter block's `f64` values in visit
//! order, then a CRC32 of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{extract_equation, extract_equation_exact, Model, ModelError, ModelSpec, Target};
use crate::layers::Parameters;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGM0";
pub const CHECKPOINT_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub seed: u64,
    pub target: Option<Target>,
    /// `(name, length)` of each parameter block.
    pub blocks: Vec<(String, usize)>,
}

pub fn write_checkpoint(model: &Model, target: Option<Target>) -> Result<Vec<u8>, ModelError> {
    let mut blocks = Vec::new();
    let mut values = Vec::new();
    model.visit_params(&mut |name, v, _| {
        blocks.push((name.to_string(), v.len()));
        values.extend_from_slice(v);
    });
    let meta = CheckpointMeta {
        spec: model.spec().clone(),
        seed: model.seed(),
        target,
        blocks,
    };
    let meta = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + values.len() * 8 + 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(Model, CheckpointMeta), ModelError> {
    if bytes.len() < 4 {
        return Err(ModelError::Truncated);
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(ModelError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::UnsupportedVersion(version));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(ModelError::ChecksumMismatch);
    }
    let meta_len = u32::from_le_bytes(body[6..10].try_into().expect("4 bytes")) as usize;
    let meta_end = HEADER_LEN
        .checked_add(meta_len)
        .ok_or(ModelError::Truncated)?;
    if body.len() < meta_end {
        return Err(ModelError::Truncated);
    }
    let meta: CheckpointMeta = serde_json::from_slice(&body[HEADER_LEN..meta_end])?;
    let data = &body[meta_end..];
    let total: usize = meta.blocks.iter().map(|(_, n)| n).sum();
    if data.len() != total * 8 {
        return Err(ModelError::Format(format!(
            "expected {} parameter values, found {} bytes",
            total,
            data.len()
        )));
    }

    let mut model = Model::build(meta.spec.clone(), meta.seed)?;
    let names = model.param_names();
    let lens: Vec<usize> = model.param_values().iter().map(|b| b.len()).collect();
    let expected: Vec<(String, usize)> = names.into_iter().zip(lens).collect();
    if expected != meta.blocks {
        return Err(ModelError::Format(
            "parameter blocks do not match the model spec".into(),
        ));
    }
    let mut values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let blocks: Vec<Vec<f64>> = meta
        .blocks
        .iter()
        .map(|(_, n)| values.by_ref().take(*n).collect())
        .collect();
    model.set_param_values(&blocks);
    Ok((model, meta))
}

pub fn save_checkpoint(
    model: &Model,
    target: Option<Target>,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    fs::write(path, write_checkpoint(model, target)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model, CheckpointMeta), ModelError> {
    read_checkpoint(&fs::read(path)?)
}

/// Human-readable summary: spec, sparsity counts and, for `l0_sindy`, the
/// extracted equations. `input_names` label the model inputs.
pub fn sidecar_json(
    model: &Model,
    target: Option<Target>,
    input_names: &[&str],
) -> serde_json::Value {
    let sindy = model.feature_map().map(|fm| {
        json!({
            "feature_names": fm.names(),
            "equations": extract_equation(model).unwrap_or_default(),
            "equations_full_precision": extract_equation_exact(model).unwrap_or_default(),
        })
    });
    json!({
        "spec": model.spec(),
        "seed": model.seed(),
        "target": target,
        "input_names": input_names,
        "sparsity": model.sparsity_counts().ok(),
        "penalty": (!model.gated_layers().is_empty()).then(|| model.penalty()),
        "sindy": sindy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::LibrarySpec;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = ModelSpec::sparse_fcnn(4, 3).with_h_dim(8);
        let m = Model::build(spec, 3).unwrap();
        let bytes = write_checkpoint(&m, Some(Target::Transition)).unwrap();
        let (back, meta) = read_checkpoint(&bytes).unwrap();
        assert_eq!(meta.target, Some(Target::Transition));
        let a = m.param_values();
        let b = back.param_values();
        for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(
            write_checkpoint(&back, Some(Target::Transition)).unwrap(),
            bytes
        );
    }

    #[test]
    fn modified_parameters_survive() {
        let lib = LibrarySpec::polynomial(2);
        let mut m = Model::build(ModelSpec::l0_sindy(4, 1, lib), 0).unwrap();
        m.gated_layers_mut()[0].weight.fill(0.125);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&m, None, &path).unwrap();
        let (back, _) = load_checkpoint(&path).unwrap();
        assert_eq!(back.param_values(), m.param_values());
        assert_eq!(
            extract_equation(&back).unwrap(),
            extract_equation(&m).unwrap()
        );
    }

    #[test]
    fn corruption_detected() {
        let m = Model::build(ModelSpec::fcnn(2, 1).with_h_dim(3), 0).unwrap();
        let bytes = write_checkpoint(&m, None).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(matches!(read_checkpoint(&bad), Err(ModelError::BadMagic)));
        let mut bad = bytes.clone();
        bad[4] = 7;
        assert!(matches!(
            read_checkpoint(&bad),
            Err(ModelError::UnsupportedVersion(7))
        ));
        let mut bad = bytes.clone();
        let n = bad.len();
        bad[n - 20] ^= 1;
        assert!(matches!(
            read_checkpoint(&bad),
            Err(ModelError::ChecksumMismatch)
        ));
        assert!(read_checkpoint(&bytes[..3]).is_err());
    }

    #[test]
    fn sidecar_contents() {
        let lib = LibrarySpec::polynomial(1);
        let m = Model::build(ModelSpec::l0_sindy(2, 1, lib), 0).unwrap();
        let v = sidecar_json(&m, Some(Target::Reward), &["a", "b"]);
        assert_eq!(v["target"], "reward");
        assert_eq!(v["sparsity"]["total_gates"], 3);
        assert_eq!(v["sindy"]["feature_names"][1], "x0");
        assert_eq!(v["sindy"]["equations"].as_array().unwrap().len(), 1);
        let f = Model::build(ModelSpec::fcnn(2, 1).with_h_dim(3), 0).unwrap();
        let v = sidecar_json(&f, None, &[]);
        assert!(v["sparsity"].is_null() && v["sindy"].is_null() && v["penalty"].is_null());
    }
}
