//! The iterative point-to-mask loop and training orchestration.
//!
//! Round `t`: scale the current seed box into a proposal bag, pick one
//! proposal, segment inside it, and (except after the last round) use the
//! tight box of the returned mask as the next seed.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, seed_box_from_point, tight_box, BBox, Image2D, Mask2D, PointPrompt};
use crate::metrics::dice;
use crate::refiner::bag::first_argmax;
use crate::refiner::train::box_center_pixel;
use crate::refiner::{
    checkpoint, extract_features, instance_probability, make_proposal_bag, select_best_box,
    PrototypeBuffer, ProposalBag, ProposalConfig, RefinerParams, TrainSample, Trainer,
};
use crate::segmenter::{segment, SegmentRequest, SegmenterBackend};

/// How a proposal is picked from each bag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    /// Highest prototype-similarity probability for the prompt class.
    #[default]
    Learned,
    /// Highest IoU with the ground-truth box (needs ground truth).
    Ideal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationConfig {
    pub rounds: usize,
    pub proposals: ProposalConfig,
    pub selector: Selector,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            rounds: 5,
            proposals: ProposalConfig::default(),
            selector: Selector::Learned,
        }
    }
}

/// Diagnostics of one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundTrace {
    pub round: usize,
    pub seed: BBox,
    pub proposals: Vec<BBox>,
    /// Score used for selection: class probability (learned) or IoU with the
    /// ground-truth box (ideal).
    pub scores: Vec<f64>,
    /// Full per-class probabilities of every proposal (learned selector only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<Vec<f64>>>,
    pub chosen_index: usize,
    pub chosen_box: BBox,
    pub confidence: f64,
    pub mask_area: usize,
    pub mask_box: Option<BBox>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dice: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub box_iou: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IterationTrace {
    pub rounds: Vec<RoundTrace>,
}

impl IterationTrace {
    pub fn final_box(&self) -> Option<BBox> {
        self.rounds.last().map(|r| r.chosen_box)
    }
}

/// Proposal with the highest IoU against `gt_box`; ties go to the lowest index.
pub fn ideal_select(bag: &ProposalBag, gt_box: &BBox) -> (BBox, usize) {
    let idx = first_argmax(bag.boxes.iter().map(|b| box_iou(b, gt_box))).expect("non-empty bag");
    (bag.boxes[idx], idx)
}

/// Point prompt at the center pixel of the mask's tight box.
pub fn point_from_mask(gt: &Mask2D, class_id: usize) -> Result<PointPrompt> {
    let b = tight_box(gt).ok_or(Error::EmptyMask)?;
    let (x, y) = box_center_pixel(&b);
    Ok(PointPrompt::new(x, y, class_id))
}

/// Run `cfg.rounds` rounds of proposal selection and segmentation.
///
/// `gt` is only read by the ideal selector and for the per-round Dice/IoU
/// diagnostics; pass `None` for blind inference.
pub fn infer_iterative(
    params: &RefinerParams,
    prototypes: &PrototypeBuffer,
    backend: &dyn SegmenterBackend,
    img: &Image2D,
    point: &PointPrompt,
    cfg: &IterationConfig,
    gt: Option<&Mask2D>,
) -> Result<(Mask2D, IterationTrace)> {
    if cfg.rounds == 0 {
        return Err(Error::invalid("at least one round is required"));
    }
    cfg.proposals.validate()?;
    if let Some(gt) = gt {
        if gt.dims() != img.dims() {
            return Err(Error::dims(img.dims(), gt.dims()));
        }
    }
    let gt_box = match cfg.selector {
        Selector::Ideal => {
            let gt = gt.ok_or_else(|| Error::invalid("the ideal selector needs a ground-truth mask"))?;
            Some(tight_box(gt).ok_or(Error::EmptyMask)?)
        }
        Selector::Learned => {
            if point.class_id >= prototypes.classes() {
                return Err(Error::invalid(format!("class {} has no prototype", point.class_id)));
            }
            prototypes.ensure_populated()?;
            gt.and_then(tight_box)
        }
    };

    let p = &cfg.proposals;
    let mut seed = seed_box_from_point(point, p.seed_w, p.seed_h, img)?;
    let mut trace = IterationTrace::default();
    let mut mask = None;
    for round in 1..=cfg.rounds {
        let bag = make_proposal_bag(&seed, &p.scales, img)?;
        let (chosen, index, scores, probabilities) = match cfg.selector {
            Selector::Learned => {
                let probs: Vec<_> = extract_features(params, img, &bag.boxes)
                    .iter()
                    .map(|f| instance_probability(f, prototypes.prototypes()))
                    .collect();
                let (b, i) = select_best_box(&bag, &probs, point.class_id);
                let scores = probs.iter().map(|q| q.get(point.class_id)).collect();
                (b, i, scores, Some(probs.into_iter().map(|q| q.0).collect()))
            }
            Selector::Ideal => {
                let target = gt_box.expect("checked above");
                let (b, i) = ideal_select(&bag, &target);
                let scores = bag.boxes.iter().map(|b| box_iou(b, &target)).collect();
                (b, i, scores, None)
            }
        };
        let resp = segment(backend, &SegmentRequest::new(img, chosen)?)?;
        let mask_box = tight_box(&resp.mask);
        trace.rounds.push(RoundTrace {
            round,
            seed,
            proposals: bag.boxes.clone(),
            scores,
            probabilities,
            chosen_index: index,
            chosen_box: chosen,
            confidence: resp.confidence,
            mask_area: resp.mask.count(),
            mask_box,
            dice: gt.map(|g| dice(&resp.mask, g)).transpose()?,
            box_iou: gt_box.map(|g| box_iou(&chosen, &g)),
        });
        if round < cfg.rounds {
            // An empty prediction keeps the chosen box as the next seed.
            seed = mask_box.unwrap_or(chosen);
        }
        mask = Some(resp.mask);
    }
    Ok((mask.expect("at least one round"), trace))
}

/// Convert (image, mask, class) triples into training samples.
pub fn training_samples<'a>(
    items: impl IntoIterator<Item = (&'a Image2D, &'a Mask2D, usize)>,
) -> Result<Vec<TrainSample>> {
    items
        .into_iter()
        .map(|(image, mask, class_id)| {
            if image.dims() != mask.dims() {
                return Err(Error::dims(image.dims(), mask.dims()));
            }
            Ok(TrainSample {
                image: image.clone(),
                gt_box: tight_box(mask).ok_or(Error::EmptyMask)?,
                class_id,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct TrainingOptions {
    pub epochs: u32,
    pub checkpoint: Option<PathBuf>,
    /// Also write the checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: u32,
}

/// Train for `opts.epochs` epochs; returns the per-epoch mean loss.
pub fn run_training(
    trainer: &mut Trainer,
    samples: &[TrainSample],
    opts: &TrainingOptions,
    mut on_epoch: impl FnMut(u32, f64),
) -> Result<Vec<f64>> {
    let mut curve = Vec::with_capacity(opts.epochs as usize);
    for epoch in 1..=opts.epochs {
        let loss = trainer.train_epoch(samples)?;
        curve.push(loss);
        on_epoch(epoch, loss);
        if let Some(path) = &opts.checkpoint {
            if opts.checkpoint_every > 0 && epoch % opts.checkpoint_every == 0 && epoch < opts.epochs {
                checkpoint::save(trainer, path)?;
            }
        }
    }
    if let Some(path) = &opts.checkpoint {
        checkpoint::save(trainer, path)?;
    }
    Ok(curve)
}
