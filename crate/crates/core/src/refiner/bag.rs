use serde::Serialize;

use super::mil::ClassProbabilities;
use crate::error::{Error, Result};
use crate::geometry::{scale_box, BBox, Image2D};

pub const DEFAULT_SCALES: [f64; 9] = [0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0];

/// Boxes obtained by scaling one seed box by each of `scales`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposalBag {
    pub seed: BBox,
    pub boxes: Vec<BBox>,
    pub scales: Vec<f64>,
}

impl ProposalBag {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Scale `seed` by every factor. Duplicates after clipping stay in the bag.
pub fn make_proposal_bag(seed: &BBox, scales: &[f64], img: &Image2D) -> Result<ProposalBag> {
    if scales.is_empty() {
        return Err(Error::invalid("proposal bag needs at least one scale"));
    }
    let boxes = scales
        .iter()
        .map(|&s| scale_box(seed, s, img))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProposalBag {
        seed: *seed,
        boxes,
        scales: scales.to_vec(),
    })
}

/// Index of the first maximum of `values`.
pub(crate) fn first_argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Proposal with the highest probability for `class`; ties go to the lowest index.
pub fn select_best_box(bag: &ProposalBag, probs: &[ClassProbabilities], class: usize) -> (BBox, usize) {
    assert_eq!(bag.len(), probs.len(), "one probability vector per proposal");
    let idx = first_argmax(probs.iter().map(|p| p.get(class))).expect("non-empty bag");
    (bag.boxes[idx], idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img() -> Image2D {
        Image2D::filled(128, 128, 0.0).unwrap()
    }

    #[test]
    fn unit_scale_bag_is_seed() {
        let seed = BBox::new(10, 10, 31, 31).unwrap();
        let bag = make_proposal_bag(&seed, &[1.0], &img()).unwrap();
        assert_eq!(bag.boxes, vec![seed]);
    }

    #[test]
    fn default_bag_widths() {
        let seed = BBox::new(54, 54, 75, 75).unwrap();
        let bag = make_proposal_bag(&seed, &DEFAULT_SCALES, &img()).unwrap();
        let widths: Vec<usize> = bag.boxes.iter().map(|b| b.width()).collect();
        assert_eq!(widths, vec![11, 16, 21, 26, 32, 42, 53, 63, 84]);
    }

    #[test]
    fn corner_bag_stays_in_bounds() {
        let image = img();
        let seed = BBox::new(0, 0, 11, 11).unwrap();
        let bag = make_proposal_bag(&seed, &DEFAULT_SCALES, &image).unwrap();
        assert_eq!(bag.len(), 9);
        for b in &bag.boxes {
            assert!(image.contains_box(b));
            assert!(b.contains(5, 5));
        }
    }

    #[test]
    fn selection_and_ties() {
        let seed = BBox::new(4, 4, 8, 8).unwrap();
        let bag = make_proposal_bag(&seed, &[1.0, 1.5, 2.0], &Image2D::filled(16, 16, 0.0).unwrap()).unwrap();
        let probs = |v: [f64; 3]| v.iter().map(|&p| ClassProbabilities(vec![1.0 - p, p])).collect::<Vec<_>>();
        assert_eq!(select_best_box(&bag, &probs([0.2, 0.5, 0.3]), 1).1, 1);
        assert_eq!(select_best_box(&bag, &probs([0.4, 0.4, 0.4]), 1).1, 0);
    }

    #[test]
    fn empty_scales_rejected() {
        let seed = BBox::new(4, 4, 8, 8).unwrap();
        assert!(make_proposal_bag(&seed, &[], &img()).is_err());
    }
}
