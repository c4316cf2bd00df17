use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::raster_io::{load_image, load_mask, save_image, save_mask};
use super::synth::{synth_generate, SynthConfig};
use crate::error::{io_err, Error, Result};
use crate::imaging::{BinaryMask, RasterImage};
use crate::layers::mix_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
}

/// Dataset description. Relative paths resolve against `root`, and a
/// relative `root` resolves against the manifest's own directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub samples: Vec<SampleRecord>,
    pub patch_side: usize,
    #[serde(default)]
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: RasterImage,
    pub mask: BinaryMask,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

/// Loads every image/mask pair, checking that each pair has equal size.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let root = base.join(&manifest.root);
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for rec in &manifest.samples {
        let (ip, mp) = (root.join(&rec.image), root.join(&rec.mask));
        let image = load_image(&ip)?;
        let mask = load_mask(&mp)?;
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(Error::DimensionMismatch {
                image: ip,
                mask: mp,
                image_dims: (image.width() as u32, image.height() as u32),
                mask_dims: (mask.width() as u32, mask.height() as u32),
            });
        }
        let name = rec
            .image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        samples.push(Sample {
            name,
            image,
            mask,
            split: rec.split,
        });
    }
    Ok(Dataset { manifest, samples })
}

/// Writes `n_train + n_test` synthetic pairs under `out_dir/{images,masks}`
/// plus `out_dir/manifest.json`. Image `i` uses a seed derived from
/// `cfg.seed` and `i`.
pub fn generate_dataset(
    cfg: &SynthConfig,
    n_train: usize,
    n_test: usize,
    patch_side: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let (img_dir, mask_dir) = (out_dir.join("images"), out_dir.join("masks"));
    fs::create_dir_all(&img_dir).map_err(io_err(&img_dir))?;
    fs::create_dir_all(&mask_dir).map_err(io_err(&mask_dir))?;
    let mut samples = Vec::with_capacity(n_train + n_test);
    for i in 0..n_train + n_test {
        let (split, tag) = if i < n_train {
            (Split::Train, "train")
        } else {
            (Split::Test, "test")
        };
        let sample = synth_generate(&SynthConfig {
            seed: mix_seed(cfg.seed, i as u64),
            ..cfg.clone()
        })?;
        let file = format!("{tag}_{i:04}.png");
        save_image(&sample.image, &img_dir.join(&file))?;
        save_mask(&sample.mask, &mask_dir.join(&file))?;
        samples.push(SampleRecord {
            image: Path::new("images").join(&file),
            mask: Path::new("masks").join(&file),
            split,
        });
    }
    let manifest = DatasetManifest {
        root: PathBuf::from("."),
        samples,
        patch_side,
        provenance: format!(
            "synthetic smear images, generator seed {}, {}x{} pixels",
            cfg.seed, cfg.width, cfg.height
        ),
    };
    let path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_mismatch_names_both_files() {
        let dir = tempfile::tempdir().unwrap();
        save_image(&RasterImage::filled(12, 10, [1, 2, 3]), &dir.path().join("i.png")).unwrap();
        save_mask(&BinaryMask::empty(10, 10), &dir.path().join("m.png")).unwrap();
        let manifest = DatasetManifest {
            root: ".".into(),
            samples: vec![SampleRecord {
                image: "i.png".into(),
                mask: "m.png".into(),
                split: Split::Train,
            }],
            patch_side: 8,
            provenance: String::new(),
        };
        let mp = dir.path().join("manifest.json");
        fs::write(&mp, serde_json::to_string(&manifest).unwrap()).unwrap();
        let err = load_dataset(&mp).unwrap_err().to_string();
        assert!(err.contains("i.png") && err.contains("m.png"), "{err}");
    }

    #[test]
    fn unknown_manifest_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mp = dir.path().join("manifest.json");
        fs::write(&mp, r#"{"root":".","samples":[],"patch_side":8,"extra":1}"#).unwrap();
        assert!(load_dataset(&mp).is_err());
    }
}
