use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tbd_tensor::ParamStore;

use crate::error::{io_err, Error, Result};
use crate::unet::{UNet, UNetConfig};
use crate::vit::{TBViT, ViTConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const WEIGHTS: &str = "weights.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Segmenter,
    Classifier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the weight blob.
    pub offset: usize,
    pub trainable: bool,
}

/// `manifest.json`: everything needed to rebuild the model and validate
/// `weights.bin` (little-endian f32, parameters concatenated in order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub kind: ModelKind,
    pub config: serde_json::Value,
    pub params: Vec<ParamEntry>,
    pub weights_bytes: usize,
    /// Hex SHA-256 of the weight blob.
    pub sha256: String,
}

/// A model that can be rebuilt from its configuration and then filled with
/// stored parameters.
pub trait Checkpointable: Sized {
    const KIND: ModelKind;
    type Config: Serialize + DeserializeOwned;

    fn checkpoint_config(&self) -> &Self::Config;
    fn build(config: Self::Config) -> Result<Self>;
    fn store(&self) -> &ParamStore<f32>;
    fn store_mut(&mut self) -> &mut ParamStore<f32>;
}

impl Checkpointable for UNet<f32> {
    const KIND: ModelKind = ModelKind::Segmenter;
    type Config = UNetConfig;

    fn checkpoint_config(&self) -> &UNetConfig {
        self.config()
    }
    fn build(config: UNetConfig) -> Result<Self> {
        UNet::new(config, 0)
    }
    fn store(&self) -> &ParamStore<f32> {
        self.params()
    }
    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        self.params_mut()
    }
}

impl Checkpointable for TBViT<f32> {
    const KIND: ModelKind = ModelKind::Classifier;
    type Config = ViTConfig;

    fn checkpoint_config(&self) -> &ViTConfig {
        self.config()
    }
    fn build(config: ViTConfig) -> Result<Self> {
        TBViT::new(config, 0)
    }
    fn store(&self) -> &ParamStore<f32> {
        self.params()
    }
    fn store_mut(&mut self) -> &mut ParamStore<f32> {
        self.params_mut()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `dir/manifest.json` and `dir/weights.bin`, creating `dir`.
pub fn save_checkpoint<M: Checkpointable>(model: &M, dir: &Path) -> Result<()> {
    let mut blob = Vec::new();
    let mut params = Vec::new();
    for p in model.store().iter() {
        if !p.tensor.is_finite() {
            return Err(Error::Checkpoint(format!("parameter {} is not finite", p.name)));
        }
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            offset: blob.len(),
            trainable: p.trainable,
        });
        for v in p.tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        kind: M::KIND,
        config: serde_json::to_value(model.checkpoint_config())?,
        params,
        weights_bytes: blob.len(),
        sha256: sha256_hex(&blob),
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let weights = dir.join(WEIGHTS);
    fs::write(&weights, &blob).map_err(io_err(&weights))?;
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Loads a checkpoint written by [`save_checkpoint`], refusing it on any
/// version, kind, checksum, layout or shape inconsistency.
pub fn load_checkpoint<M: Checkpointable>(dir: &Path) -> Result<M> {
    let manifest = read_manifest(dir)?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {} is not supported (expected {CHECKPOINT_VERSION})",
            manifest.format_version
        )));
    }
    if manifest.kind != M::KIND {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds a {:?} model, expected {:?}",
            manifest.kind,
            M::KIND
        )));
    }
    let weights = dir.join(WEIGHTS);
    let blob = fs::read(&weights).map_err(io_err(&weights))?;
    if blob.len() != manifest.weights_bytes || sha256_hex(&blob) != manifest.sha256 {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch for {} ({} bytes on disk, {} declared)",
            weights.display(),
            blob.len(),
            manifest.weights_bytes
        )));
    }
    let config: M::Config = serde_json::from_value(manifest.config.clone())
        .map_err(|e| Error::Checkpoint(format!("invalid model configuration: {e}")))?;
    let mut model = M::build(config)?;
    let store = model.store_mut();
    if store.len() != manifest.params.len() {
        return Err(Error::Checkpoint(format!(
            "configuration defines {} parameters but the manifest lists {}",
            store.len(),
            manifest.params.len()
        )));
    }
    let mut expected_offset = 0;
    for (p, entry) in store.iter_mut().zip(&manifest.params) {
        if p.name != entry.name {
            return Err(Error::Checkpoint(format!(
                "parameter order mismatch: expected {}, found {}",
                p.name, entry.name
            )));
        }
        if p.tensor.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {}: configuration implies {:?}, manifest declares {:?}",
                p.name,
                p.tensor.shape(),
                entry.shape
            )));
        }
        if entry.offset != expected_offset {
            return Err(Error::Checkpoint(format!(
                "offset of {} is {} but should be {expected_offset}",
                entry.name, entry.offset
            )));
        }
        let len = p.tensor.numel() * 4;
        let bytes = &blob[entry.offset..entry.offset + len];
        for (dst, chunk) in p.tensor.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
        }
        expected_offset += len;
    }
    if expected_offset != blob.len() {
        return Err(Error::Checkpoint(format!(
            "weight blob has {} trailing bytes",
            blob.len() - expected_offset
        )));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::unet::UNetConfig;

    fn small_unet() -> UNet<f32> {
        UNet::new(
            UNetConfig {
                base_channels: 2,
                depth: 1,
                patch_side: 8,
                ..UNetConfig::default()
            },
            4,
        )
        .unwrap()
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = small_unet();
        m.params_mut().iter_mut().next().unwrap().tensor.data_mut()[0] = -0.0;
        save_checkpoint(&m, dir.path()).unwrap();
        let back: UNet<f32> = load_checkpoint(dir.path()).unwrap();
        for (a, b) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(a.name, b.name);
            let bits = |t: &[f32]| t.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.tensor.data()), bits(b.tensor.data()));
        }
    }

    #[test]
    fn truncated_blob_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small_unet(), dir.path()).unwrap();
        let w = dir.path().join(WEIGHTS);
        let blob = fs::read(&w).unwrap();
        fs::write(&w, &blob[..blob.len() - 4]).unwrap();
        let err = load_checkpoint::<UNet<f32>>(dir.path()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn edited_shape_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small_unet(), dir.path()).unwrap();
        let mut man = read_manifest(dir.path()).unwrap();
        man.params[0].shape = vec![1, 2, 3, 3];
        fs::write(dir.path().join(MANIFEST), serde_json::to_string(&man).unwrap()).unwrap();
        let err = load_checkpoint::<UNet<f32>>(dir.path()).unwrap_err();
        assert!(err.to_string().contains("shape mismatch"), "{err}");
    }

    #[test]
    fn version_and_kind_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&small_unet(), dir.path()).unwrap();
        assert!(load_checkpoint::<TBViT<f32>>(dir.path()).is_err());
        let mut man = read_manifest(dir.path()).unwrap();
        man.format_version = 99;
        fs::write(dir.path().join(MANIFEST), serde_json::to_string(&man).unwrap()).unwrap();
        let err = load_checkpoint::<UNet<f32>>(dir.path()).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
