use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SegmentRequest, SegmentResponse, SegmenterBackend};
use crate::error::{Error, Result};
use crate::geometry::{mask_intersect_box, Mask2D};
use crate::metrics::dice;

/// Noise model of the ground-truth oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Chebyshev radius around the mask boundary in which pixels may flip.
    pub perturb_radius: usize,
    /// Independent flip probability of every pixel in that band.
    pub perturb_rate: f64,
    pub rng_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            perturb_radius: 1,
            perturb_rate: 0.0,
            rng_seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.perturb_rate) {
            return Err(Error::invalid("perturb_rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pixels with a 4-neighbor of the opposite value.
fn boundary(m: &Mask2D) -> Vec<bool> {
    let (w, h) = m.dims();
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let v = m.get(x, y);
            let differs = (x > 0 && m.get(x - 1, y) != v)
                || (x + 1 < w && m.get(x + 1, y) != v)
                || (y > 0 && m.get(x, y - 1) != v)
                || (y + 1 < h && m.get(x, y + 1) != v);
            out[y * w + x] = differs;
        }
    }
    out
}

/// Chebyshev dilation of a boolean raster.
fn dilate(bits: &[bool], w: usize, h: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return bits.to_vec();
    }
    // Separable: rows then columns.
    let mut rows = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            rows[y * w + x] = (lo..=hi).any(|i| bits[y * w + i]);
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).any(|j| rows[j * w + x]);
        }
    }
    out
}

/// Ground truth restricted to the box, with seeded flips near its boundary.
pub fn oracle_segment(cfg: &OracleConfig, gt: &Mask2D, req: &SegmentRequest<'_>) -> Result<SegmentResponse> {
    if gt.dims() != req.image.dims() {
        return Err(Error::dims(req.image.dims(), gt.dims()));
    }
    cfg.validate()?;
    let base = mask_intersect_box(gt, &req.bbox);
    if cfg.perturb_rate == 0.0 {
        return Ok(SegmentResponse {
            mask: base,
            confidence: 1.0,
        });
    }

    let (w, h) = base.dims();
    let band = dilate(&boundary(&base), w, h, cfg.perturb_radius);
    let b = req.bbox;
    let seed = [b.x0, b.y0, b.x1, b.y1, w, h]
        .iter()
        .fold(splitmix(cfg.rng_seed), |acc, &v| splitmix(acc ^ v as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = base.clone();
    for (i, &in_band) in band.iter().enumerate() {
        if in_band && rng.random_bool(cfg.perturb_rate) {
            let (x, y) = (i % w, i / w);
            noisy.set(x, y, !base.get(x, y));
        }
    }
    let mask = mask_intersect_box(&noisy, &req.bbox);
    let confidence = dice(&base, &mask)?;
    Ok(SegmentResponse { mask, confidence })
}

/// Oracle bound to one ground-truth mask.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    pub config: OracleConfig,
    pub gt: Mask2D,
}

impl OracleBackend {
    pub fn new(config: OracleConfig, gt: Mask2D) -> Self {
        OracleBackend { config, gt }
    }
}

impl SegmenterBackend for OracleBackend {
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<SegmentResponse> {
        oracle_segment(&self.config, &self.gt, req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, Image2D};

    fn disk(w: usize, h: usize, cx: f64, cy: f64, r: f64) -> Mask2D {
        Mask2D::from_fn(w, h, |x, y| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r).unwrap()
    }

    #[test]
    fn noiseless_is_gt_and_box() {
        let gt = disk(32, 32, 16.0, 16.0, 9.0);
        let img = Image2D::filled(32, 32, 0.3).unwrap();
        let b = BBox::new(10, 4, 30, 20).unwrap();
        let cfg = OracleConfig { perturb_rate: 0.0, ..Default::default() };
        let resp = oracle_segment(&cfg, &gt, &SegmentRequest::new(&img, b).unwrap()).unwrap();
        assert_eq!(resp.mask, mask_intersect_box(&gt, &b));
        assert_eq!(resp.confidence, 1.0);

        let full = oracle_segment(&cfg, &gt, &SegmentRequest::new(&img, img.bounds()).unwrap()).unwrap();
        assert_eq!(full.mask, gt);
    }

    #[test]
    fn flips_stay_near_boundary() {
        let gt = disk(40, 40, 20.0, 19.0, 11.0);
        let img = Image2D::filled(40, 40, 0.3).unwrap();
        let b = BBox::new(5, 5, 36, 30).unwrap();
        let cfg = OracleConfig {
            perturb_radius: 1,
            perturb_rate: 0.3,
            rng_seed: 7,
        };
        let resp = oracle_segment(&cfg, &gt, &SegmentRequest::new(&img, b).unwrap()).unwrap();
        let base = mask_intersect_box(&gt, &b);
        let edge = boundary(&base);
        let mut flips = 0;
        for y in 0..40usize {
            for x in 0..40usize {
                if resp.mask.get(x, y) != base.get(x, y) {
                    flips += 1;
                    let near = (y.saturating_sub(1)..=(y + 1).min(39))
                        .any(|j| (x.saturating_sub(1)..=(x + 1).min(39)).any(|i| edge[j * 40 + i]));
                    assert!(near, "flip at ({x},{y}) is not within 1px of the boundary");
                }
                if resp.mask.get(x, y) {
                    assert!(b.contains(x, y));
                }
            }
        }
        assert!(flips > 0);
        assert!(resp.confidence < 1.0 && resp.confidence > 0.5);
    }

    #[test]
    fn deterministic_per_input() {
        let gt = disk(24, 24, 12.0, 12.0, 6.0);
        let img = Image2D::filled(24, 24, 0.3).unwrap();
        let b = BBox::new(2, 2, 22, 22).unwrap();
        let cfg = OracleConfig {
            perturb_radius: 2,
            perturb_rate: 0.5,
            rng_seed: 3,
        };
        let req = SegmentRequest::new(&img, b).unwrap();
        assert_eq!(oracle_segment(&cfg, &gt, &req).unwrap(), oracle_segment(&cfg, &gt, &req).unwrap());
    }

    #[test]
    fn dilation_radius() {
        let mut bits = vec![false; 25];
        bits[12] = true;
        let d = dilate(&bits, 5, 5, 1);
        assert_eq!(d.iter().filter(|&&b| b).count(), 9);
        assert!(d[6] && d[18] && !d[0]);
    }
}
