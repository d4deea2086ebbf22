//! Binary PGM (P5) rasters. 8- and 16-bit input, 8-bit canonical output.

use crate::error::{Error, FormatKind, Result};
use crate::geometry::{Image2D, Mask2D};

/// Decoded P5 raster before interpretation as an image or a mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmRaster {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_separators(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c.is_ascii_whitespace() {
                self.pos += 1;
            } else if c == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        self.skip_separators();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(FormatKind::Header, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(FormatKind::Header, format!("{what} out of range")))
    }
}

pub fn read_pgm(bytes: &[u8]) -> Result<PgmRaster> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::format(FormatKind::Magic, format!("expected P5, found {found:?}")));
    }
    let mut cur = Cursor { bytes, pos: 2 };
    if !cur.bytes.get(2).is_some_and(|c| c.is_ascii_whitespace() || *c == b'#') {
        return Err(Error::format(FormatKind::Magic, "magic must be followed by whitespace"));
    }
    let width = cur.number("width")? as usize;
    let height = cur.number("height")? as usize;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(FormatKind::Header, "zero-sized raster"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(FormatKind::Header, format!("maxval {maxval} not in 1..=65535")));
    }
    if !cur.bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(FormatKind::Header, "missing whitespace after maxval"));
    }
    cur.pos += 1;

    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format(FormatKind::Header, "raster too large"))?;
    let wide = maxval > 255;
    let need = if wide { 2 * n } else { n };
    let data = &bytes[cur.pos..];
    if data.len() < need {
        return Err(Error::format(
            FormatKind::Truncated,
            format!("expected {need} raster bytes, found {}", data.len()),
        ));
    }
    let samples = if wide {
        data[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        data[..need].iter().map(|&b| b as u16).collect()
    };
    Ok(PgmRaster {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

impl PgmRaster {
    /// Intensities scaled by `1 / maxval`.
    pub fn to_image(&self, spacing: f64) -> Result<Image2D> {
        let scale = self.maxval as f64;
        let pixels = self
            .samples
            .iter()
            .map(|&s| s.min(self.maxval) as f64 / scale)
            .collect();
        Image2D::new(self.width, self.height, pixels, spacing)
    }

    /// Foreground wherever the sample is non-zero.
    pub fn to_mask(&self) -> Result<Mask2D> {
        Mask2D::new(self.width, self.height, self.samples.iter().map(|&s| s > 0).collect())
    }
}

fn header(width: usize, height: usize) -> Vec<u8> {
    format!("P5\n{width} {height}\n255\n").into_bytes()
}

/// 8-bit P5 with intensities rounded half up.
pub fn write_pgm_image(img: &Image2D) -> Vec<u8> {
    let mut out = header(img.width(), img.height());
    out.extend(img.pixels().iter().map(|&v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8));
    out
}

/// 8-bit P5 with foreground 255, background 0.
pub fn write_pgm_mask(mask: &Mask2D) -> Vec<u8> {
    let mut out = header(mask.width(), mask.height());
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kind(r: Result<PgmRaster>) -> FormatKind {
        match r {
            Err(Error::Format { kind, .. }) => kind,
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_golden_file() {
        let bytes = [b"P5\n2 1\n255\n".as_slice(), &[0, 255]].concat();
        let img = read_pgm(&bytes).unwrap().to_image(1.0).unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn comments_and_whitespace() {
        let bytes = [b"P5 # made by hand\n# another\n 3\t\n1 # trailing\n255\r".as_slice(), &[1, 2, 3]].concat();
        let r = read_pgm(&bytes).unwrap();
        assert_eq!((r.width, r.height, r.samples.clone()), (3, 1, vec![1, 2, 3]));
    }

    #[test]
    fn sixteen_bit() {
        let bytes = [b"P5\n2 1\n65535\n".as_slice(), &[0x80, 0x00, 0xff, 0xff]].concat();
        let img = read_pgm(&bytes).unwrap().to_image(1.0).unwrap();
        assert!((img.pixels()[0] - 32768.0 / 65535.0).abs() < 1e-15);
        assert_eq!(img.pixels()[1], 1.0);
    }

    #[test]
    fn errors() {
        assert_eq!(kind(read_pgm(b"P2\n2 1\n255\n0 255")), FormatKind::Magic);
        assert_eq!(kind(read_pgm(b"")), FormatKind::Magic);
        assert_eq!(kind(read_pgm(&[b"P5\n2 2\n255\n".as_slice(), &[1, 2, 3]].concat())), FormatKind::Truncated);
        assert_eq!(kind(read_pgm(b"P5\n2\n")), FormatKind::Header);
        assert_eq!(kind(read_pgm(b"P5\n2 1 0\n\0\0")), FormatKind::Header);
        assert_eq!(kind(read_pgm(b"P5\n0 1 255\n")), FormatKind::Header);
    }

    #[test]
    fn canonical_mask_bytes() {
        let m = Mask2D::new(2, 1, vec![true, false]).unwrap();
        assert_eq!(write_pgm_mask(&m), [b"P5\n2 1\n255\n".as_slice(), &[255, 0]].concat());
        assert_eq!(read_pgm(&write_pgm_mask(&m)).unwrap().to_mask().unwrap(), m);
    }

    proptest! {
        #[test]
        fn image_round_trip_within_quantization(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let img = Image2D::from_fn(w, h, |x, y| {
                let v = (seed ^ ((x * 31 + y * 17) as u64)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                (v >> 11) as f64 / (1u64 << 53) as f64
            }).unwrap();
            let back = read_pgm(&write_pgm_image(&img)).unwrap().to_image(1.0).unwrap();
            for (a, b) in img.pixels().iter().zip(back.pixels()) {
                prop_assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }

        #[test]
        fn mask_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..200)) {
            let m = Mask2D::new(bits.len(), 1, bits).unwrap();
            prop_assert_eq!(read_pgm(&write_pgm_mask(&m)).unwrap().to_mask().unwrap(), m);
        }
    }
}
