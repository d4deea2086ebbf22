use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pgm::read_pgm;
use crate::error::{Error, FormatKind, Result};
use crate::geometry::{Image2D, Mask2D};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative paths resolve against the manifest's directory.
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub class_id: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub spacing_mm: f64,
    pub samples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Field-level checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::format(FormatKind::Manifest, m));
        if self.version != MANIFEST_VERSION {
            return bad(format!("unsupported manifest version {}", self.version));
        }
        if !(self.spacing_mm.is_finite() && self.spacing_mm > 0.0) {
            return bad(format!("spacing_mm must be positive, got {}", self.spacing_mm));
        }
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return bad(format!("duplicate sample id {:?}", s.id));
            }
        }
        Ok(())
    }
}

/// A manifest entry with its rasters decoded.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub id: String,
    pub image: Image2D,
    pub mask: Mask2D,
    pub class_id: usize,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<LoadedSample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LoadedSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    match std::fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

fn parse(path: &Path) -> Result<DatasetManifest> {
    let text = read_file(path)?;
    let manifest: DatasetManifest = serde_json::from_slice(&text)
        .map_err(|e| Error::format(FormatKind::Manifest, format!("{}: {e}", path.display())))?;
    manifest.validate()?;
    Ok(manifest)
}

fn load_entry(base: &Path, entry: &ManifestEntry, spacing: f64) -> Result<LoadedSample> {
    let image = read_pgm(&read_file(&resolve(base, &entry.image_path))?)?.to_image(spacing)?;
    let mask = read_pgm(&read_file(&resolve(base, &entry.mask_path))?)?.to_mask()?;
    if mask.dims() != image.dims() {
        return Err(Error::dims(image.dims(), mask.dims()));
    }
    Ok(LoadedSample {
        id: entry.id.clone(),
        image,
        mask,
        class_id: entry.class_id,
        split: entry.split,
    })
}

/// Parse and validate a manifest, decoding every referenced raster once to
/// check that it exists and that image and mask sizes agree.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    Ok(load_dataset(path)?.manifest)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let manifest = parse(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let samples = manifest
        .samples
        .iter()
        .map(|e| load_entry(base, e, manifest.spacing_mm))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::pgm::{write_pgm_image, write_pgm_mask};

    fn write_pair(dir: &Path, id: &str, img: (usize, usize), mask: (usize, usize)) {
        std::fs::create_dir_all(dir.join("images")).unwrap();
        std::fs::create_dir_all(dir.join("masks")).unwrap();
        let i = Image2D::filled(img.0, img.1, 0.2).unwrap();
        let m = Mask2D::from_fn(mask.0, mask.1, |x, y| x == y).unwrap();
        std::fs::write(dir.join(format!("images/{id}.pgm")), write_pgm_image(&i)).unwrap();
        std::fs::write(dir.join(format!("masks/{id}.pgm")), write_pgm_mask(&m)).unwrap();
    }

    fn entry(id: &str, split: Split) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            image_path: format!("images/{id}.pgm").into(),
            mask_path: format!("masks/{id}.pgm").into(),
            class_id: 1,
            split,
        }
    }

    #[test]
    fn golden_manifest() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "a", (4, 4), (4, 4));
        write_pair(dir.path(), "b", (4, 4), (4, 4));
        let text = r#"{
  "version": 1,
  "spacing_mm": 0.5,
  "samples": [
    {"id": "a", "image_path": "images/a.pgm", "mask_path": "masks/a.pgm", "class_id": 1, "split": "train"},
    {"id": "b", "image_path": "images/b.pgm", "mask_path": "masks/b.pgm", "class_id": 1, "split": "test"}
  ]
}"#;
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, text).unwrap();
        let golden = DatasetManifest {
            version: 1,
            spacing_mm: 0.5,
            samples: vec![entry("a", Split::Train), entry("b", Split::Test)],
        };
        assert_eq!(load_manifest(&path).unwrap(), golden);
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.samples[0].image.spacing(), 0.5);
        assert_eq!(ds.split(Split::Test).count(), 1);
    }

    #[test]
    fn duplicate_id() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "a", (4, 4), (4, 4));
        let m = DatasetManifest {
            version: 1,
            spacing_mm: 1.0,
            samples: vec![entry("a", Split::Train), entry("a", Split::Test)],
        };
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, m.to_json()).unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(Error::Format { kind: FormatKind::Manifest, .. })
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_pair(dir.path(), "a", (128, 128), (64, 64));
        let m = DatasetManifest {
            version: 1,
            spacing_mm: 1.0,
            samples: vec![entry("a", Split::Train)],
        };
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, m.to_json()).unwrap();
        assert!(matches!(
            load_manifest(&path),
            Err(Error::DimensionMismatch { expected: (128, 128), actual: (64, 64) })
        ));
    }

    #[test]
    fn missing_files() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_manifest(&dir.path().join("nope.json")), Err(Error::MissingFile(_))));
        let m = DatasetManifest {
            version: 1,
            spacing_mm: 1.0,
            samples: vec![entry("ghost", Split::Train)],
        };
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, m.to_json()).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::MissingFile(p)) if p.ends_with("images/ghost.pgm")));
    }

    #[test]
    fn bad_split_and_unknown_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(
            &path,
            r#"{"version":1,"spacing_mm":1.0,"samples":[{"id":"a","image_path":"a","mask_path":"a","class_id":1,"split":"val"}]}"#,
        )
        .unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Format { .. })));
        std::fs::write(&path, r#"{"version":1,"spacing_mm":1.0,"samples":[],"extra":0}"#).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Format { .. })));
    }
}
