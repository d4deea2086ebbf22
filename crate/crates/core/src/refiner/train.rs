//! Training of the refiner with the bag-level MIL objective.
//!
//! Each sample contributes two bags: a positive bag around its ground-truth
//! box (labelled with the sample's class) and a negative bag around a
//! background point (labelled with the background class). Per batch the
//! prototypes are refreshed from the batch features first, then one
//! momentum-SGD step is taken on the mean bag loss with the prototypes held
//! fixed.

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bag::{make_proposal_bag, ProposalBag, DEFAULT_SCALES};
use super::mil::{bag_loss_with_grad, BagAggregation};
use super::network::{stem_matrix, FeatureVector, Gradient, RefinerDims, RefinerParams};
use super::optim::{sgd_step, SgdConfig, SgdState};
use super::prototype::PrototypeBuffer;
use crate::error::{Error, Result};
use crate::geometry::{seed_box_from_point, BBox, Image2D, PointPrompt};

/// Seed box size and scale set shared by training and inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProposalConfig {
    pub seed_w: usize,
    pub seed_h: usize,
    pub scales: Vec<f64>,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig {
            seed_w: 21,
            seed_h: 21,
            scales: DEFAULT_SCALES.to_vec(),
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seed_w == 0 || self.seed_h == 0 {
            return Err(Error::invalid("seed box must be at least 1x1"));
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("scales must be a non-empty list of positive numbers"));
        }
        Ok(())
    }
}

/// Seed of the positive training bag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveSeed {
    /// The ground-truth box itself.
    #[default]
    GtBox,
    /// A seed-sized box on the ground-truth box center, as in the first inference round.
    Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub memory_batches: usize,
    pub aggregation: BagAggregation,
    pub positive_seed: PositiveSeed,
    /// Minimum Chebyshev distance between a negative point and the ground-truth box.
    pub negative_min_distance: usize,
    pub background_class: usize,
    pub shuffle: bool,
    pub sgd: SgdConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            memory_batches: 8,
            aggregation: BagAggregation::Mean,
            positive_seed: PositiveSeed::GtBox,
            negative_min_distance: 16,
            background_class: 0,
            shuffle: true,
            sgd: SgdConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.memory_batches == 0 {
            return Err(Error::invalid("memory must hold at least one batch"));
        }
        self.sgd.validate()
    }
}

/// One supervised slice: the image, the box derived from its mask, its class.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Image2D,
    pub gt_box: BBox,
    pub class_id: usize,
}

/// Center pixel of a box, rounding toward the top-left.
pub fn box_center_pixel(b: &BBox) -> (usize, usize) {
    ((b.x0 + b.x1 - 1) / 2, (b.y0 + b.y1 - 1) / 2)
}

fn chebyshev_to_box(x: usize, y: usize, b: &BBox) -> usize {
    let dx = b.x0.saturating_sub(x).max(x.saturating_sub(b.x1 - 1));
    let dy = b.y0.saturating_sub(y).max(y.saturating_sub(b.y1 - 1));
    dx.max(dy)
}

/// Uniform background pixel at least `min_distance` (Chebyshev) from `gt`;
/// the farthest pixel when no pixel is that far.
pub fn sample_negative_point<R: Rng>(
    width: usize,
    height: usize,
    gt: &BBox,
    min_distance: usize,
    rng: &mut R,
) -> (usize, usize) {
    let far = |i: usize| chebyshev_to_box(i % width, i / width, gt) >= min_distance;
    let total = (0..width * height).filter(|&i| far(i)).count();
    if total == 0 {
        let mut best = (0, 0);
        let mut best_d = 0;
        for y in 0..height {
            for x in 0..width {
                let d = chebyshev_to_box(x, y, gt);
                if d > best_d {
                    best_d = d;
                    best = (x, y);
                }
            }
        }
        return best;
    }
    let pick = rng.random_range(0..total);
    let i = (0..width * height).filter(|&i| far(i)).nth(pick).expect("pick < total");
    (i % width, i / width)
}

/// Eq. 2 loss of one bag and its gradient with respect to all parameters.
pub fn loss_gradient(
    params: &RefinerParams,
    img: &Image2D,
    bag: &ProposalBag,
    prototypes: &[FeatureVector],
    target: usize,
    agg: BagAggregation,
) -> (f64, Gradient) {
    let stems = stem_matrix(img, &bag.boxes, params.patch);
    let cache = params.forward(stems.view());
    let features: Vec<FeatureVector> = cache
        .features
        .outer_iter()
        .map(|r| FeatureVector(r.to_vec()))
        .collect();
    let (loss, d_features) = bag_loss_with_grad(&features, prototypes, target, agg);
    (loss, params.backward(stems.view(), &cache, d_features.view()))
}

/// Eq. 2 loss of one bag under `params` (forward only).
pub fn bag_loss_for(
    params: &RefinerParams,
    img: &Image2D,
    bag: &ProposalBag,
    prototypes: &[FeatureVector],
    target: usize,
    agg: BagAggregation,
) -> f64 {
    let stems = stem_matrix(img, &bag.boxes, params.patch);
    let cache = params.forward(stems.view());
    let features: Vec<FeatureVector> = cache
        .features
        .outer_iter()
        .map(|r| FeatureVector(r.to_vec()))
        .collect();
    super::mil::bag_loss(&features, prototypes, target, agg)
}

/// Mutable training state: parameters, prototype memory, optimizer and RNG.
///
/// Exactly one trainer mutates a model at a time; readers take clones.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: RefinerParams,
    pub buffer: PrototypeBuffer,
    pub opt_state: SgdState,
    pub config: TrainConfig,
    pub proposals: ProposalConfig,
    pub rng_seed: u64,
    pub epochs_done: u32,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(
        dims: RefinerDims,
        classes: usize,
        config: TrainConfig,
        proposals: ProposalConfig,
        rng_seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        proposals.validate()?;
        if config.background_class >= classes {
            return Err(Error::invalid("background class out of range"));
        }
        let buffer = PrototypeBuffer::new(classes, dims.dim, config.memory_batches)?;
        let params = RefinerParams::init(dims, rng_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(1);
        Ok(Trainer {
            params,
            buffer,
            opt_state: SgdState::default(),
            config,
            proposals,
            rng_seed,
            epochs_done: 0,
            rng,
        })
    }

    /// Reassemble a trainer from checkpointed state.
    #[allow(clippy::too_many_arguments)]
    pub fn from_state(
        params: RefinerParams,
        buffer: PrototypeBuffer,
        opt_state: SgdState,
        config: TrainConfig,
        proposals: ProposalConfig,
        rng_seed: u64,
        rng_word_pos: u128,
        epochs_done: u32,
    ) -> Result<Self> {
        config.validate()?;
        proposals.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(1);
        rng.set_word_pos(rng_word_pos);
        Ok(Trainer {
            params,
            buffer,
            opt_state,
            config,
            proposals,
            rng_seed,
            epochs_done,
            rng,
        })
    }

    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    fn positive_bag(&self, s: &TrainSample) -> Result<ProposalBag> {
        let seed = match self.config.positive_seed {
            PositiveSeed::GtBox => s.gt_box,
            PositiveSeed::Point => {
                let (x, y) = box_center_pixel(&s.gt_box);
                seed_box_from_point(
                    &PointPrompt::new(x, y, s.class_id),
                    self.proposals.seed_w,
                    self.proposals.seed_h,
                    &s.image,
                )?
            }
        };
        make_proposal_bag(&seed, &self.proposals.scales, &s.image)
    }

    fn negative_bag(&mut self, s: &TrainSample) -> Result<ProposalBag> {
        let (x, y) = sample_negative_point(
            s.image.width(),
            s.image.height(),
            &s.gt_box,
            self.config.negative_min_distance,
            &mut self.rng,
        );
        let seed = seed_box_from_point(
            &PointPrompt::new(x, y, self.config.background_class),
            self.proposals.seed_w,
            self.proposals.seed_h,
            &s.image,
        )?;
        make_proposal_bag(&seed, &self.proposals.scales, &s.image)
    }

    /// One optimizer step on a batch; returns the mean bag loss of the batch.
    pub fn train_batch(&mut self, batch: &[&TrainSample]) -> Result<f64> {
        let classes = self.buffer.classes();
        let patch = self.params.patch;
        let n = self.proposals.scales.len();
        // (image, bag, target class) for every bag in the batch.
        let mut bags: Vec<(&Image2D, ProposalBag, usize)> = Vec::with_capacity(2 * batch.len());
        for s in batch {
            if s.class_id >= classes || s.class_id == self.config.background_class {
                return Err(Error::invalid(format!(
                    "sample class {} is not a foreground class",
                    s.class_id
                )));
            }
            let pos = self.positive_bag(s)?;
            let neg = self.negative_bag(s)?;
            bags.push((&s.image, pos, s.class_id));
            bags.push((&s.image, neg, self.config.background_class));
        }

        let mut stems = Array2::zeros((bags.len() * n, patch * patch));
        for (k, (img, bag, _)) in bags.iter().enumerate() {
            stems
                .slice_mut(s![k * n..(k + 1) * n, ..])
                .assign(&stem_matrix(img, &bag.boxes, patch));
        }
        let cache = self.params.forward(stems.view());
        let features: Vec<FeatureVector> = cache
            .features
            .outer_iter()
            .map(|r| FeatureVector(r.to_vec()))
            .collect();

        let mut per_class = vec![Vec::new(); classes];
        for (k, (_, _, target)) in bags.iter().enumerate() {
            per_class[*target].extend_from_slice(&features[k * n..(k + 1) * n]);
        }
        self.buffer.update(per_class)?;
        let prototypes = self.buffer.prototypes().to_vec();

        let mut d_features = Array2::zeros(cache.features.raw_dim());
        let mut total = 0.0;
        let scale = 1.0 / bags.len() as f64;
        for (k, (_, _, target)) in bags.iter().enumerate() {
            let (loss, grad) = bag_loss_with_grad(
                &features[k * n..(k + 1) * n],
                &prototypes,
                *target,
                self.config.aggregation,
            );
            total += loss;
            d_features
                .slice_mut(s![k * n..(k + 1) * n, ..])
                .assign(&(grad * scale));
        }
        let grad = self.params.backward(stems.view(), &cache, d_features.view());
        sgd_step(&mut self.params, &grad, &self.config.sgd, &mut self.opt_state)?;
        Ok(total * scale)
    }

    /// One pass over `data` in (optionally shuffled) batches; returns the
    /// mean bag loss over the epoch.
    pub fn train_epoch(&mut self, data: &[TrainSample]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        if self.config.shuffle {
            order.shuffle(&mut self.rng);
        }
        let mut weighted = 0.0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &data[i]).collect();
            weighted += self.train_batch(&batch)? * batch.len() as f64;
        }
        self.epochs_done += 1;
        Ok(weighted / data.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mask2D;

    #[test]
    fn negative_point_respects_distance() {
        let gt = BBox::new(20, 20, 40, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (x, y) = sample_negative_point(64, 64, &gt, 16, &mut rng);
            assert!(chebyshev_to_box(x, y, &gt) >= 16);
        }
    }

    #[test]
    fn negative_point_falls_back_to_farthest() {
        let gt = BBox::new(2, 2, 14, 14).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = sample_negative_point(16, 16, &gt, 16, &mut rng);
        assert_eq!(p, (0, 0));
    }

    #[test]
    fn chebyshev_distance() {
        let b = BBox::new(5, 5, 10, 10).unwrap();
        assert_eq!(chebyshev_to_box(7, 7, &b), 0);
        assert_eq!(chebyshev_to_box(0, 7, &b), 5);
        assert_eq!(chebyshev_to_box(12, 14, &b), 5);
    }

    fn tiny_sample() -> TrainSample {
        let mask = Mask2D::from_fn(32, 32, |x, y| (10..20).contains(&x) && (12..22).contains(&y)).unwrap();
        let image = Image2D::from_fn(32, 32, |x, y| if mask.get(x, y) { 0.8 } else { 0.2 }).unwrap();
        TrainSample {
            image,
            gt_box: BBox::new(10, 12, 20, 22).unwrap(),
            class_id: 1,
        }
    }

    #[test]
    fn epoch_is_deterministic() {
        let dims = RefinerDims {
            patch: 4,
            hidden: 8,
            dim: 4,
        };
        let proposals = ProposalConfig {
            seed_w: 7,
            seed_h: 7,
            scales: vec![0.75, 1.0, 1.5],
        };
        let data = vec![tiny_sample(), tiny_sample(), tiny_sample()];
        let run = || {
            let mut t = Trainer::new(dims, 2, TrainConfig { batch_size: 2, ..Default::default() }, proposals.clone(), 9).unwrap();
            let losses: Vec<f64> = (0..3).map(|_| t.train_epoch(&data).unwrap()).collect();
            (t.params, losses)
        };
        let (p1, l1) = run();
        let (p2, l2) = run();
        assert_eq!(p1, p2);
        assert_eq!(l1, l2);
    }

    #[test]
    fn background_sample_rejected() {
        let dims = RefinerDims {
            patch: 4,
            hidden: 8,
            dim: 4,
        };
        let mut t = Trainer::new(dims, 2, TrainConfig::default(), ProposalConfig::default(), 1).unwrap();
        let mut s = tiny_sample();
        s.class_id = 0;
        assert!(t.train_epoch(&[s]).is_err());
        assert!(t.train_epoch(&[]).is_err());
    }
}
