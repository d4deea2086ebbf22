use crate::error::{Error, Result};
use crate::geometry::{Image2D, Mask2D};

const GREEN: [f64; 3] = [0.0, 255.0, 0.0];
const RED: [f64; 3] = [255.0, 0.0, 0.0];
const YELLOW: [f64; 3] = [255.0, 255.0, 0.0];

fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

fn blend(base: u8, tint: f64) -> u8 {
    (base as f64 * 0.6 + tint * 0.4 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Binary P6 image: grayscale slice with ground-truth-only pixels tinted
/// green, prediction-only red and agreement yellow
/// (`channel = base * 0.6 + tint * 0.4`, rounded half up).
pub fn emit_overlay(img: &Image2D, gt: &Mask2D, pred: &Mask2D) -> Result<Vec<u8>> {
    if gt.dims() != img.dims() {
        return Err(Error::dims(img.dims(), gt.dims()));
    }
    if pred.dims() != img.dims() {
        return Err(Error::dims(img.dims(), pred.dims()));
    }
    let (w, h) = img.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    for ((&v, &g), &p) in img.pixels().iter().zip(gt.bits()).zip(pred.bits()) {
        let base = quantize(v);
        let tint = match (g, p) {
            (false, false) => None,
            (true, false) => Some(GREEN),
            (false, true) => Some(RED),
            (true, true) => Some(YELLOW),
        };
        match tint {
            None => out.extend_from_slice(&[base; 3]),
            Some(t) => out.extend(t.iter().map(|&c| blend(base, c))),
        }
    }
    Ok(out)
}
