//! Versioned little-endian binary checkpoint of a trainer.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic "PPRCKPT\0" | u32 version
//! u64 rng_seed | u128 rng_word_pos | u32 epochs_done
//! u32 patch | u32 hidden | u32 dim | u32 classes | u32 memory_batches
//! u8 aggregation | f64 lr | f64 momentum
//! f64[] w1 b1 w2 b2
//! u8 has_velocity [f64[] w1 b1 w2 b2]
//! u64 batches_seen
//! per class: u8 populated | f64[dim] prototype | u32 batches
//!            per batch: u64 batch id | u32 count | f64[count*dim]
//! ```
//!
//! Encoding is canonical, so save -> load -> save reproduces the bytes.

use std::collections::VecDeque;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mil::BagAggregation;
use super::network::{FeatureVector, Gradient, RefinerDims, RefinerParams};
use super::optim::{SgdConfig, SgdState};
use super::prototype::{BufferedBatch, PrototypeBuffer};
use super::train::{ProposalConfig, TrainConfig, Trainer};
use crate::error::{Error, FormatKind, Result};

const MAGIC: &[u8; 8] = b"PPRCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s<'a>(&mut self, vals: impl IntoIterator<Item = &'a f64>) {
        for v in vals {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn len(&mut self, n: usize) -> Result<()> {
        let n = u32::try_from(n).map_err(|_| Error::invalid("dimension exceeds u32"))?;
        self.u32(n);
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::format(FormatKind::Checkpoint, msg)
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of checkpoint"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        Array2::from_shape_vec((rows, cols), self.f64s(rows * cols)?).map_err(|e| corrupt(e.to_string()))
    }
    fn vector(&mut self, n: usize) -> Result<Array1<f64>> {
        Ok(Array1::from(self.f64s(n)?))
    }
    fn gradient(&mut self, dims: RefinerDims) -> Result<Gradient> {
        Ok(Gradient {
            w1: self.matrix(dims.hidden, dims.input())?,
            b1: self.vector(dims.hidden)?,
            w2: self.matrix(dims.dim, dims.hidden)?,
            b2: self.vector(dims.dim)?,
        })
    }
}

/// Serialize the full trainer state.
pub fn encode(trainer: &Trainer) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u64(trainer.rng_seed);
    w.u128(trainer.rng_word_pos());
    w.u32(trainer.epochs_done);
    let dims = trainer.params.dims();
    w.len(dims.patch)?;
    w.len(dims.hidden)?;
    w.len(dims.dim)?;
    w.len(trainer.buffer.classes())?;
    w.len(trainer.buffer.memory_batches())?;
    w.u8(trainer.config.aggregation.code());
    w.f64s([&trainer.config.sgd.lr, &trainer.config.sgd.momentum]);

    let p = &trainer.params;
    w.f64s(p.w1.iter());
    w.f64s(p.b1.iter());
    w.f64s(p.w2.iter());
    w.f64s(p.b2.iter());
    match &trainer.opt_state.velocity {
        None => w.u8(0),
        Some(v) => {
            w.u8(1);
            w.f64s(v.w1.iter());
            w.f64s(v.b1.iter());
            w.f64s(v.w2.iter());
            w.f64s(v.b2.iter());
        }
    }

    let buf = &trainer.buffer;
    w.u64(buf.batches_seen());
    for class in 0..buf.classes() {
        w.u8(buf.populated()[class] as u8);
        w.f64s(buf.prototypes()[class].as_slice());
        w.len(buf.entries(class).len())?;
        for entry in buf.entries(class) {
            w.u64(entry.batch);
            w.len(entry.features.len())?;
            for f in &entry.features {
                w.f64s(f.as_slice());
            }
        }
    }
    Ok(w.0)
}

/// Restore a trainer. Training hyperparameters that the checkpoint does not
/// carry (batch size, negative sampling, proposals) come from `config`.
pub fn decode(bytes: &[u8], mut config: TrainConfig, proposals: ProposalConfig) -> Result<Trainer> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let rng_seed = r.u64()?;
    let word_pos = r.u128()?;
    let epochs_done = r.u32()?;
    let dims = RefinerDims {
        patch: r.u32()? as usize,
        hidden: r.u32()? as usize,
        dim: r.u32()? as usize,
    };
    let classes = r.u32()? as usize;
    let memory_batches = r.u32()? as usize;
    let aggregation = BagAggregation::from_code(r.u8()?).ok_or_else(|| corrupt("unknown aggregation"))?;
    let sgd = SgdConfig {
        lr: r.f64()?,
        momentum: r.f64()?,
    };

    let g = r.gradient(dims)?;
    let params = RefinerParams {
        patch: dims.patch,
        w1: g.w1,
        b1: g.b1,
        w2: g.w2,
        b2: g.b2,
    };
    let velocity = match r.u8()? {
        0 => None,
        1 => Some(r.gradient(dims)?),
        _ => return Err(corrupt("bad velocity flag")),
    };

    let batches_seen = r.u64()?;
    let mut entries = Vec::with_capacity(classes);
    let mut prototypes = Vec::with_capacity(classes);
    let mut populated = Vec::with_capacity(classes);
    for _ in 0..classes {
        populated.push(match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(corrupt("bad populated flag")),
        });
        prototypes.push(FeatureVector(r.f64s(dims.dim)?));
        let n_batches = r.u32()? as usize;
        let mut queue = VecDeque::with_capacity(n_batches);
        for _ in 0..n_batches {
            let batch = r.u64()?;
            let count = r.u32()? as usize;
            let features = (0..count)
                .map(|_| r.f64s(dims.dim).map(FeatureVector))
                .collect::<Result<Vec<_>>>()?;
            queue.push_back(BufferedBatch { batch, features });
        }
        entries.push(queue);
    }
    if r.pos != bytes.len() {
        return Err(corrupt("trailing bytes after checkpoint"));
    }
    let buffer = PrototypeBuffer::from_parts(dims.dim, memory_batches, batches_seen, entries, prototypes, populated)?;

    config.aggregation = aggregation;
    config.memory_batches = memory_batches;
    config.sgd = sgd;
    Trainer::from_state(
        params,
        buffer,
        SgdState { velocity },
        config,
        proposals,
        rng_seed,
        word_pos,
        epochs_done,
    )
}

pub fn save(trainer: &Trainer, path: &Path) -> Result<()> {
    std::fs::write(path, encode(trainer)?)?;
    Ok(())
}

pub fn load(path: &Path, config: TrainConfig, proposals: ProposalConfig) -> Result<Trainer> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode(&bytes, config, proposals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, Image2D};
    use crate::refiner::train::TrainSample;

    fn trained() -> Trainer {
        let dims = RefinerDims {
            patch: 4,
            hidden: 6,
            dim: 3,
        };
        let proposals = ProposalConfig {
            seed_w: 5,
            seed_h: 5,
            scales: vec![1.0, 2.0],
        };
        let cfg = TrainConfig {
            batch_size: 1,
            memory_batches: 2,
            ..Default::default()
        };
        let mut t = Trainer::new(dims, 2, cfg, proposals, 17).unwrap();
        let image = Image2D::from_fn(24, 24, |x, y| if (8..14).contains(&x) && (9..15).contains(&y) { 0.9 } else { 0.1 }).unwrap();
        let s = TrainSample {
            image,
            gt_box: BBox::new(8, 9, 14, 15).unwrap(),
            class_id: 1,
        };
        t.train_epoch(&[s.clone(), s.clone(), s]).unwrap();
        t
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let t = trained();
        let bytes = encode(&t).unwrap();
        let back = decode(&bytes, t.config.clone(), t.proposals.clone()).unwrap();
        assert_eq!(encode(&back).unwrap(), bytes);
        assert_eq!(back.params, t.params);
        assert_eq!(back.buffer, t.buffer);
        assert_eq!(back.rng_word_pos(), t.rng_word_pos());
    }

    #[test]
    fn untrained_round_trip() {
        let t = Trainer::new(
            RefinerDims {
                patch: 2,
                hidden: 3,
                dim: 2,
            },
            3,
            TrainConfig::default(),
            ProposalConfig::default(),
            5,
        )
        .unwrap();
        let bytes = encode(&t).unwrap();
        let back = decode(&bytes, TrainConfig::default(), ProposalConfig::default()).unwrap();
        assert_eq!(encode(&back).unwrap(), bytes);
        assert!(back.opt_state.velocity.is_none());
    }

    #[test]
    fn rejects_corruption() {
        let t = trained();
        let bytes = encode(&t).unwrap();
        let cfg = t.config.clone();
        assert!(decode(&bytes[..bytes.len() - 3], cfg.clone(), t.proposals.clone()).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad, cfg.clone(), t.proposals.clone()).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(
            decode(&extra, cfg, t.proposals.clone()),
            Err(Error::Format { kind: FormatKind::Checkpoint, .. })
        ));
    }
}
