use std::collections::VecDeque;

use super::network::FeatureVector;
use crate::error::{Error, Result};

/// Features contributed by one training batch to one class.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferedBatch {
    pub batch: u64,
    pub features: Vec<FeatureVector>,
}

/// Per-class memory of the features from the most recent `memory_batches`
/// batches, and the class prototypes (their means).
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBuffer {
    dim: usize,
    memory_batches: usize,
    batches_seen: u64,
    entries: Vec<VecDeque<BufferedBatch>>,
    prototypes: Vec<FeatureVector>,
    populated: Vec<bool>,
}

impl PrototypeBuffer {
    pub fn new(classes: usize, dim: usize, memory_batches: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("at least two classes are required"));
        }
        if memory_batches == 0 {
            return Err(Error::invalid("memory must hold at least one batch"));
        }
        Ok(PrototypeBuffer {
            dim,
            memory_batches,
            batches_seen: 0,
            entries: vec![VecDeque::new(); classes],
            prototypes: vec![FeatureVector::zeros(dim); classes],
            populated: vec![false; classes],
        })
    }

    /// Rebuild from checkpointed parts. Prototypes are recomputed.
    pub fn from_parts(
        dim: usize,
        memory_batches: usize,
        batches_seen: u64,
        entries: Vec<VecDeque<BufferedBatch>>,
        prototypes: Vec<FeatureVector>,
        populated: Vec<bool>,
    ) -> Result<Self> {
        let mut buf = PrototypeBuffer::new(entries.len(), dim, memory_batches)?;
        if prototypes.len() != entries.len() || populated.len() != entries.len() {
            return Err(Error::invalid("per-class buffer parts disagree in length"));
        }
        let dims_ok = prototypes.iter().all(|p| p.len() == dim)
            && entries
                .iter()
                .flatten()
                .all(|b| b.features.iter().all(|f| f.len() == dim));
        if !dims_ok {
            return Err(Error::invalid("buffered feature dimension mismatch"));
        }
        buf.batches_seen = batches_seen;
        buf.entries = entries;
        buf.prototypes = prototypes;
        buf.populated = populated;
        buf.recompute();
        Ok(buf)
    }

    pub fn classes(&self) -> usize {
        self.entries.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn memory_batches(&self) -> usize {
        self.memory_batches
    }

    pub fn batches_seen(&self) -> u64 {
        self.batches_seen
    }

    pub fn entries(&self, class: usize) -> &VecDeque<BufferedBatch> {
        &self.entries[class]
    }

    pub fn prototypes(&self) -> &[FeatureVector] {
        &self.prototypes
    }

    pub fn populated(&self) -> &[bool] {
        &self.populated
    }

    /// Every prototype has seen at least one feature.
    pub fn ensure_populated(&self) -> Result<()> {
        match self.populated.iter().position(|p| !p) {
            Some(c) => Err(Error::EmptyPrototype(c)),
            None => Ok(()),
        }
    }

    /// Buffered features of `class`, oldest batch first.
    pub fn buffered(&self, class: usize) -> impl Iterator<Item = &FeatureVector> {
        self.entries[class].iter().flat_map(|b| b.features.iter())
    }

    /// Push one batch (features grouped by class), evict batches older than
    /// the memory window and recompute every prototype.
    pub fn update(&mut self, batch_features: Vec<Vec<FeatureVector>>) -> Result<()> {
        if batch_features.len() != self.classes() {
            return Err(Error::invalid(format!(
                "expected features for {} classes, got {}",
                self.classes(),
                batch_features.len()
            )));
        }
        if batch_features.iter().flatten().any(|f| f.len() != self.dim) {
            return Err(Error::invalid("feature dimension does not match the buffer"));
        }
        self.batches_seen += 1;
        let batch = self.batches_seen;
        let window = self.memory_batches as u64;
        for (class, features) in batch_features.into_iter().enumerate() {
            let queue = &mut self.entries[class];
            if !features.is_empty() {
                queue.push_back(BufferedBatch { batch, features });
                self.populated[class] = true;
            }
            while queue.front().is_some_and(|b| b.batch + window <= batch) {
                queue.pop_front();
            }
        }
        self.recompute();
        Ok(())
    }

    // A class with nothing buffered keeps its last prototype (zeros before
    // its first features arrive).
    fn recompute(&mut self) {
        for class in 0..self.classes() {
            let mut sum = vec![0.0; self.dim];
            let mut count = 0usize;
            for f in self.buffered(class) {
                for (s, v) in sum.iter_mut().zip(f.as_slice()) {
                    *s += v;
                }
                count += 1;
            }
            if count > 0 {
                let n = count as f64;
                self.prototypes[class] = FeatureVector(sum.into_iter().map(|s| s / n).collect());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector(v.to_vec())
    }

    #[test]
    fn mean_of_buffered() {
        let mut buf = PrototypeBuffer::new(2, 2, 4).unwrap();
        buf.update(vec![vec![], vec![fv(&[1.0, 0.0]), fv(&[0.0, 1.0])]]).unwrap();
        assert_eq!(buf.prototypes()[1], fv(&[0.5, 0.5]));
        assert_eq!(buf.prototypes()[0], fv(&[0.0, 0.0]));
        assert!(matches!(buf.ensure_populated(), Err(Error::EmptyPrototype(0))));
    }

    #[test]
    fn ring_eviction() {
        let mut buf = PrototypeBuffer::new(2, 1, 2).unwrap();
        let a = fv(&[1.0]);
        let b = fv(&[2.0]);
        let c = fv(&[6.0]);
        buf.update(vec![vec![a.clone()], vec![a]]).unwrap();
        buf.update(vec![vec![b.clone()], vec![b]]).unwrap();
        buf.update(vec![vec![c.clone()], vec![c]]).unwrap();
        let kept: Vec<f64> = buf.buffered(0).map(|f| f.0[0]).collect();
        assert_eq!(kept, vec![2.0, 6.0]);
        assert_eq!(buf.prototypes()[0], fv(&[4.0]));
    }

    #[test]
    fn idle_class_keeps_last_prototype() {
        let mut buf = PrototypeBuffer::new(2, 1, 1).unwrap();
        buf.update(vec![vec![fv(&[3.0])], vec![fv(&[1.0])]]).unwrap();
        buf.update(vec![vec![fv(&[5.0])], vec![]]).unwrap();
        assert_eq!(buf.buffered(1).count(), 0);
        assert_eq!(buf.prototypes()[1], fv(&[1.0]));
        assert_eq!(buf.prototypes()[0], fv(&[5.0]));
    }

    #[test]
    fn rejects_wrong_shapes() {
        let mut buf = PrototypeBuffer::new(2, 2, 1).unwrap();
        assert!(buf.update(vec![vec![]]).is_err());
        assert!(buf.update(vec![vec![fv(&[1.0])], vec![]]).is_err());
        assert!(PrototypeBuffer::new(1, 2, 1).is_err());
        assert!(PrototypeBuffer::new(2, 2, 0).is_err());
    }

    proptest! {
        #[test]
        fn prototype_is_brute_force_mean(
            memory in 1usize..5,
            batches in proptest::collection::vec(
                proptest::collection::vec(
                    proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 0..4),
                    2,
                ),
                1..10,
            ),
        ) {
            let mut buf = PrototypeBuffer::new(2, 3, memory).unwrap();
            let mut history: Vec<Vec<Vec<Vec<f64>>>> = Vec::new();
            for batch in &batches {
                let feats = batch.iter().map(|c| c.iter().map(|v| fv(v)).collect()).collect();
                buf.update(feats).unwrap();
                history.push(batch.clone());
                let recent = &history[history.len().saturating_sub(memory)..];
                for class in 0..2 {
                    let all: Vec<&Vec<f64>> = recent.iter().flat_map(|b| b[class].iter()).collect();
                    if all.is_empty() {
                        continue;
                    }
                    for d in 0..3 {
                        let mean = all.iter().map(|v| v[d]).sum::<f64>() / all.len() as f64;
                        prop_assert!((buf.prototypes()[class].0[d] - mean).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
