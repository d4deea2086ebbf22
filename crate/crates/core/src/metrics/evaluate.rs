use rayon::prelude::*;

use super::report::{EvalReport, EvalRow};
use super::{dice, hausdorff_with, HausdorffVariant};
use crate::error::{Error, Result};
use crate::geometry::{box_iou, tight_box, Image2D, Mask2D};
use crate::pipeline::{infer_iterative, point_from_mask, IterationConfig, Selector};
use crate::refiner::{PrototypeBuffer, RefinerParams};
use crate::segmenter::BackendChoice;

/// One held-out slice with its ground truth.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: String,
    pub image: Image2D,
    pub mask: Mask2D,
    pub class_id: usize,
}

fn evaluate_one(
    sample: &EvalSample,
    params: &RefinerParams,
    prototypes: &PrototypeBuffer,
    backend: &BackendChoice,
    cfg: &IterationConfig,
    variant: HausdorffVariant,
) -> Result<EvalRow> {
    let point = point_from_mask(&sample.mask, sample.class_id)?;
    let gt_box = tight_box(&sample.mask).ok_or(Error::EmptyMask)?;
    // The learned selector runs blind; ground truth is only used for scoring.
    let gt = (cfg.selector == Selector::Ideal).then_some(&sample.mask);
    let seg = backend.for_sample(&sample.mask);
    let (pred, trace) = infer_iterative(params, prototypes, seg.as_ref(), &sample.image, &point, cfg, gt)?;
    Ok(EvalRow {
        id: sample.id.clone(),
        rounds_requested: cfg.rounds,
        dice: dice(&pred, &sample.mask)?,
        hausdorff_mm: hausdorff_with(&pred, &sample.mask, sample.image.spacing(), variant)?,
        box_iou_final: trace.final_box().map_or(0.0, |b| box_iou(&b, &gt_box)),
        rounds: trace.rounds.len(),
    })
}

/// Run the iterative loop on every sample for every round count in `rounds`.
///
/// Rows come out grouped by round count, samples in id order, independent of
/// `jobs`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    samples: &[EvalSample],
    params: &RefinerParams,
    prototypes: &PrototypeBuffer,
    backend: &BackendChoice,
    base: &IterationConfig,
    rounds: &[usize],
    variant: HausdorffVariant,
    jobs: usize,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::format(crate::error::FormatKind::Manifest, "test split is empty"));
    }
    if rounds.is_empty() {
        return Err(Error::invalid("no round counts requested"));
    }
    let mut ordered: Vec<&EvalSample> = samples.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let mut rows = Vec::with_capacity(samples.len() * rounds.len());
    for &t in rounds {
        let cfg = IterationConfig {
            rounds: t,
            ..base.clone()
        };
        let batch: Result<Vec<EvalRow>> = pool.install(|| {
            ordered
                .par_iter()
                .map(|s| evaluate_one(s, params, prototypes, backend, &cfg, variant))
                .collect()
        });
        rows.extend(batch?);
    }
    Ok(EvalReport::from_rows(rows))
}
