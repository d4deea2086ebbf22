//! Rasters, prompts, boxes and masks.
//!
//! Boxes are half-open integer pixel rectangles `[x0, x1) x [y0, y1)`.
//! Every operation here is a pure function over immutable values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel slice with intensities in `[0, 1]` and isotropic spacing in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    spacing: f64,
}

impl Image2D {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, spacing: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image dimensions must be at least 1x1"));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "expected {} pixels for a {width}x{height} image, got {}",
                width * height,
                pixels.len()
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::invalid("pixel spacing must be finite and positive"));
        }
        if let Some(v) = pixels.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::invalid(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Image2D {
            width,
            height,
            pixels,
            spacing,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], 1.0)
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, pixels, 1.0)
    }

    pub fn with_spacing(mut self, spacing: f64) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::invalid("pixel spacing must be finite and positive"));
        }
        self.spacing = spacing;
        Ok(self)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Box covering the whole image.
    pub fn bounds(&self) -> BBox {
        BBox {
            x0: 0,
            y0: 0,
            x1: self.width,
            y1: self.height,
        }
    }

    pub fn contains_box(&self, b: &BBox) -> bool {
        b.x1 <= self.width && b.y1 <= self.height
    }
}

/// Class-tagged point prompt in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: usize,
    pub y: usize,
    pub class_id: usize,
}

impl PointPrompt {
    pub fn new(x: usize, y: usize, class_id: usize) -> Self {
        PointPrompt { x, y, class_id }
    }
}

/// Half-open pixel box `[x0, x1) x [y0, y1)`, never empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 4]", into = "[usize; 4]")]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl TryFrom<[usize; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [usize; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [usize; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::DegenerateBox);
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    #[inline]
    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    /// Fractional center in pixel-edge coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.x0 + self.x1) as f64 / 2.0,
            (self.y0 + self.y1) as f64 / 2.0,
        )
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        BBox::new(
            self.x0.max(other.x0),
            self.y0.max(other.y0),
            self.x1.min(other.x1),
            self.y1.min(other.y1),
        )
        .ok()
    }

    /// Clip to a `width x height` raster; `None` when nothing remains.
    pub fn clip(&self, width: usize, height: usize) -> Option<BBox> {
        clip_signed(
            self.x0 as i64,
            self.y0 as i64,
            self.x1 as i64,
            self.y1 as i64,
            width,
            height,
        )
    }
}

fn clip_signed(x0: i64, y0: i64, x1: i64, y1: i64, width: usize, height: usize) -> Option<BBox> {
    let cx0 = x0.clamp(0, width as i64);
    let cx1 = x1.clamp(0, width as i64);
    let cy0 = y0.clamp(0, height as i64);
    let cy1 = y1.clamp(0, height as i64);
    BBox::new(cx0 as usize, cy0 as usize, cx1 as usize, cy1 as usize).ok()
}

/// Binary raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask2D {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask2D {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask dimensions must be at least 1x1"));
        }
        if bits.len() != width * height {
            return Err(Error::invalid(format!(
                "expected {} bits for a {width}x{height} mask, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Mask2D {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, bits)
    }

    /// Mask whose foreground is exactly `b` (clipped to the raster).
    pub fn from_box(width: usize, height: usize, b: &BBox) -> Result<Self> {
        Self::from_fn(width, height, |x, y| b.contains(x, y))
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground pixel coordinates in raster order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    pub(crate) fn check_same_dims(&self, other: &Mask2D) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        Ok(())
    }
}

/// Box of size `seed_w x seed_h` centered on the prompt, clipped to the image.
pub fn seed_box_from_point(
    p: &PointPrompt,
    seed_w: usize,
    seed_h: usize,
    img: &Image2D,
) -> Result<BBox> {
    if p.x >= img.width() || p.y >= img.height() {
        return Err(Error::PointOutOfBounds {
            x: p.x as i64,
            y: p.y as i64,
            width: img.width(),
            height: img.height(),
        });
    }
    if seed_w == 0 || seed_h == 0 {
        return Err(Error::invalid("seed box size must be at least 1x1"));
    }
    let x0 = p.x as i64 - (seed_w / 2) as i64;
    let y0 = p.y as i64 - (seed_h / 2) as i64;
    // Always contains p, so clipping cannot empty it.
    clip_signed(
        x0,
        y0,
        x0 + seed_w as i64,
        y0 + seed_h as i64,
        img.width(),
        img.height(),
    )
    .ok_or(Error::DegenerateBox)
}

/// Scale `b` about its fractional center by `s`, rounding half away from zero.
pub fn scale_box(b: &BBox, s: f64, img: &Image2D) -> Result<BBox> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::invalid(format!("scale must be finite and positive, got {s}")));
    }
    let (cx, cy) = b.center();
    let w = ((b.width() as f64 * s).round() as i64).max(1);
    let h = ((b.height() as f64 * s).round() as i64).max(1);
    let x0 = (cx - w as f64 / 2.0).round() as i64;
    let y0 = (cy - h as f64 / 2.0).round() as i64;
    clip_signed(x0, y0, x0 + w, y0 + h, img.width(), img.height()).ok_or(Error::DegenerateBox)
}

/// Smallest box containing every foreground bit.
pub fn tight_box(m: &Mask2D) -> Option<BBox> {
    let mut acc: Option<(usize, usize, usize, usize)> = None;
    for (x, y) in m.foreground() {
        acc = Some(match acc {
            None => (x, y, x, y),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        });
    }
    acc.map(|(x0, y0, x1, y1)| BBox {
        x0,
        y0,
        x1: x1 + 1,
        y1: y1 + 1,
    })
}

/// Intersection over union by pixel area.
pub fn box_iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersect(b).map_or(0, |i| i.area());
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Bilinear resample of the box region onto an `out_w x out_h` grid.
///
/// Sample `i` sits at `x0 + (i + 0.5) * w / out_w - 0.5`; coordinates are
/// clamped to the box's pixel range so nothing outside `b` is read.
pub fn crop_resize(img: &Image2D, b: &BBox, out_w: usize, out_h: usize) -> Vec<f64> {
    debug_assert!(img.contains_box(b));
    let axis = |start: usize, len: usize, out: usize| -> Vec<(usize, usize, f64)> {
        let step = len as f64 / out as f64;
        let hi = (start + len - 1) as f64;
        (0..out)
            .map(|i| {
                let s = (start as f64 + (i as f64 + 0.5) * step - 0.5).clamp(start as f64, hi);
                let lo = s.floor();
                let i0 = lo as usize;
                let i1 = (i0 + 1).min(start + len - 1);
                (i0, i1, s - lo)
            })
            .collect()
    };
    let xs = axis(b.x0, b.width(), out_w);
    let ys = axis(b.y0, b.height(), out_h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
            let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Keep only the foreground bits that fall inside `b`.
pub fn mask_intersect_box(m: &Mask2D, b: &BBox) -> Mask2D {
    let mut out = m.clone();
    for (i, bit) in out.bits.iter_mut().enumerate() {
        if *bit && !b.contains(i % m.width, i / m.width) {
            *bit = false;
        }
    }
    out
}
