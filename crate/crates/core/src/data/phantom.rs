use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry, Split, MANIFEST_VERSION};
use super::pgm::{write_pgm_image, write_pgm_mask};
use crate::error::{Error, Result};
use crate::geometry::{Image2D, Mask2D};

pub const BACKGROUND: f64 = 0.2;

/// Synthetic slices: rotated elliptical blobs on a dark, noisy background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// Inclusive range for the number of blobs per slice.
    pub blobs: [usize; 2],
    /// Inclusive range for each semi-axis, in pixels.
    pub radius: [f64; 2],
    pub contrast: f64,
    pub noise_sigma: f64,
    pub spacing_mm: f64,
    pub class_id: usize,
    pub rng_seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            count: 200,
            width: 128,
            height: 128,
            blobs: [1, 2],
            radius: [12.0, 56.0],
            contrast: 0.5,
            noise_sigma: 0.05,
            spacing_mm: 1.0,
            class_id: 1,
            rng_seed: 42,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let [bmin, bmax] = self.blobs;
        let [rmin, rmax] = self.radius;
        if self.width < 16 || self.height < 16 {
            return Err(Error::invalid("phantom width and height must be at least 16"));
        }
        if bmin == 0 || bmin > bmax {
            return Err(Error::invalid(format!("blob count range {bmin}..={bmax} is empty or zero")));
        }
        if !(rmin >= 1.0 && rmin <= rmax && 2.0 * rmax < self.width.min(self.height) as f64) {
            return Err(Error::invalid(format!(
                "radius range {rmin}..={rmax} must be non-empty, at least 1 and fit the image"
            )));
        }
        if !(self.contrast.is_finite() && self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid("contrast and noise_sigma must be finite, sigma non-negative"));
        }
        if !(self.spacing_mm.is_finite() && self.spacing_mm > 0.0) {
            return Err(Error::invalid("spacing_mm must be positive"));
        }
        if self.class_id == 0 {
            return Err(Error::invalid("class 0 is reserved for background"));
        }
        Ok(())
    }

    /// Number of leading samples (in id order) assigned to training.
    pub fn train_count(&self) -> usize {
        (self.count * 4).div_ceil(5).min(self.count)
    }
}

pub fn phantom_id(index: usize) -> String {
    format!("phantom_{index:04}")
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }
}

fn center(rng: &mut ChaCha8Rng, extent: f64, size: usize) -> f64 {
    let hi = size as f64 - 1.0 - extent;
    if extent < hi {
        rng.random_range(extent..=hi)
    } else {
        (size as f64 - 1.0) / 2.0
    }
}

/// The `index`-th slice of `spec`, before quantization.
pub fn phantom(spec: &PhantomSpec, index: usize) -> Result<(Image2D, Mask2D)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    rng.set_stream(index as u64 + 1);

    let n = rng.random_range(spec.blobs[0]..=spec.blobs[1]);
    let blobs: Vec<Ellipse> = (0..n)
        .map(|_| {
            let a = rng.random_range(spec.radius[0]..=spec.radius[1]);
            let b = rng.random_range(spec.radius[0]..=spec.radius[1]);
            let theta = rng.random_range(0.0..PI);
            let (sin, cos) = theta.sin_cos();
            let ex = (a * a * cos * cos + b * b * sin * sin).sqrt();
            let ey = (a * a * sin * sin + b * b * cos * cos).sqrt();
            let cx = center(&mut rng, ex, spec.width);
            let cy = center(&mut rng, ey, spec.height);
            Ellipse { cx, cy, a, b, cos, sin }
        })
        .collect();

    let mask = Mask2D::from_fn(spec.width, spec.height, |x, y| {
        blobs.iter().any(|e| e.contains(x as f64, y as f64))
    })?;
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut pixels = Vec::with_capacity(spec.width * spec.height);
    for &inside in mask.bits() {
        let base = BACKGROUND + if inside { spec.contrast } else { 0.0 };
        let v = base.clamp(0.0, 1.0) + if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        pixels.push(v.clamp(0.0, 1.0));
    }
    let image = Image2D::new(spec.width, spec.height, pixels, spec.spacing_mm)?;
    Ok((image, mask))
}

/// Write `images/<id>.pgm`, `masks/<id>.pgm` and `manifest.json` under `out_dir`.
pub fn gen_phantoms(spec: &PhantomSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir.join("images"))?;
    std::fs::create_dir_all(out_dir.join("masks"))?;
    let train = spec.train_count();
    let mut samples = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let id = phantom_id(i);
        let (image, mask) = phantom(spec, i)?;
        let entry = ManifestEntry {
            image_path: format!("images/{id}.pgm").into(),
            mask_path: format!("masks/{id}.pgm").into(),
            id,
            class_id: spec.class_id,
            split: if i < train { Split::Train } else { Split::Test },
        };
        std::fs::write(out_dir.join(&entry.image_path), write_pgm_image(&image))?;
        std::fs::write(out_dir.join(&entry.mask_path), write_pgm_mask(&mask))?;
        samples.push(entry);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        spacing_mm: spec.spacing_mm,
        samples,
    };
    std::fs::write(out_dir.join("manifest.json"), manifest.to_json())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::load_dataset;
    use crate::geometry::tight_box;

    fn small(count: usize) -> PhantomSpec {
        PhantomSpec {
            count,
            width: 48,
            height: 40,
            blobs: [1, 3],
            radius: [4.0, 12.0],
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn split_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let m = gen_phantoms(&small(10), dir.path()).unwrap();
        assert_eq!(m.samples.len(), 10);
        assert_eq!(m.samples.iter().filter(|s| s.split == Split::Train).count(), 8);
        assert_eq!(m.samples[8].split, Split::Test);
        let ds = load_dataset(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(ds.samples.len(), 10);
    }

    #[test]
    fn byte_identical_per_seed() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        gen_phantoms(&small(4), a.path()).unwrap();
        gen_phantoms(&small(4), b.path()).unwrap();
        for rel in ["manifest.json", "images/phantom_0003.pgm", "masks/phantom_0000.pgm"] {
            assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
        }
        let other = PhantomSpec { rng_seed: 7, ..small(4) };
        assert_ne!(phantom(&other, 0).unwrap().1, phantom(&small(4), 0).unwrap().1);
    }

    #[test]
    fn masks_are_non_empty_and_wide_enough() {
        let spec = small(60);
        for i in 0..spec.count {
            let (img, mask) = phantom(&spec, i).unwrap();
            let tb = tight_box(&mask).expect("non-empty mask");
            assert!(tb.width() as f64 >= spec.radius[0] && tb.height() as f64 >= spec.radius[0]);
            assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn noiseless_intensities() {
        let spec = PhantomSpec { noise_sigma: 0.0, ..small(1) };
        let (img, mask) = phantom(&spec, 0).unwrap();
        for (v, &m) in img.pixels().iter().zip(mask.bits()) {
            assert!((v - if m { 0.7 } else { 0.2 }).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(PhantomSpec { width: 8, ..small(1) }.validate().is_err());
        assert!(PhantomSpec { blobs: [2, 1], ..small(1) }.validate().is_err());
        assert!(PhantomSpec { radius: [5.0, 30.0], ..small(1) }.validate().is_err());
        assert!(PhantomSpec { class_id: 0, ..small(1) }.validate().is_err());
    }
}
