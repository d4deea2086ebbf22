//! Prototype similarity, per-instance class probabilities, bag aggregation and
//! the bag-level binary cross-entropy, together with their derivatives with
//! respect to the instance features.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::network::FeatureVector;

pub const NORM_FLOOR: f64 = 1e-12;
pub const SCORE_EPS: f64 = 1e-6;

/// Softmax over cosine similarities to the class prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities(pub Vec<f64>);

impl ClassProbabilities {
    #[inline]
    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// How instance probabilities are pooled into a bag score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BagAggregation {
    #[default]
    Mean,
    Max,
    NoisyOr,
}

impl BagAggregation {
    pub fn code(self) -> u8 {
        match self {
            BagAggregation::Mean => 0,
            BagAggregation::Max => 1,
            BagAggregation::NoisyOr => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(BagAggregation::Mean),
            1 => Some(BagAggregation::Max),
            2 => Some(BagAggregation::NoisyOr),
            _ => None,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `a·b / (‖a‖‖b‖)` with each norm floored at 1e-12.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a).max(NORM_FLOOR) * norm(b).max(NORM_FLOOR))
}

/// Accumulate `scale * d cos(a, b) / d a` into `out`.
fn add_cosine_grad(a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
    let na_raw = norm(a);
    let na = na_raw.max(NORM_FLOOR);
    let nb = norm(b).max(NORM_FLOOR);
    let inv = 1.0 / (na * nb);
    if na_raw >= NORM_FLOOR {
        let cos = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * inv;
        let k = cos / (na * na);
        for ((o, &ai), &bi) in out.iter_mut().zip(a).zip(b) {
            *o += scale * (bi * inv - k * ai);
        }
    } else {
        for (o, &bi) in out.iter_mut().zip(b) {
            *o += scale * bi * inv;
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Probability that `f` belongs to each class, from its cosine similarity to
/// every class prototype.
pub fn instance_probability(f: &FeatureVector, prototypes: &[FeatureVector]) -> ClassProbabilities {
    let logits: Vec<f64> = prototypes
        .iter()
        .map(|v| cosine_similarity(f.as_slice(), v.as_slice()))
        .collect();
    ClassProbabilities(softmax(&logits))
}

fn raw_bag_score(probs: &[ClassProbabilities], class: usize, agg: BagAggregation) -> f64 {
    match agg {
        BagAggregation::Mean => probs.iter().map(|p| p.get(class)).sum::<f64>() / probs.len() as f64,
        BagAggregation::Max => probs.iter().map(|p| p.get(class)).fold(f64::NEG_INFINITY, f64::max),
        BagAggregation::NoisyOr => 1.0 - probs.iter().map(|p| 1.0 - p.get(class)).product::<f64>(),
    }
}

/// Bag-level score for `class`, clamped to `[eps, 1 - eps]`.
pub fn bag_score(probs: &[ClassProbabilities], class: usize, agg: BagAggregation) -> f64 {
    assert!(!probs.is_empty(), "bag must hold at least one instance");
    raw_bag_score(probs, class, agg).clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

/// Binary cross-entropy summed over classes against a one-hot target.
pub fn mil_loss(bag_scores: &[f64], target: usize) -> f64 {
    bag_scores
        .iter()
        .enumerate()
        .map(|(c, &s)| if c == target { -s.ln() } else { -(1.0 - s).ln() })
        .sum()
}

/// Eq. 2 loss of one bag and `dL/df_n` for every instance feature.
///
/// Prototypes are constants here. A clamped bag score passes no gradient.
pub fn bag_loss_with_grad(
    features: &[FeatureVector],
    prototypes: &[FeatureVector],
    target: usize,
    agg: BagAggregation,
) -> (f64, Array2<f64>) {
    let n = features.len();
    let classes = prototypes.len();
    let dim = prototypes.first().map_or(0, |p| p.len());
    let probs: Vec<ClassProbabilities> = features
        .iter()
        .map(|f| instance_probability(f, prototypes))
        .collect();

    let mut scores = Vec::with_capacity(classes);
    // dL/ds_c; zero where the clamp is active.
    let mut d_score = Vec::with_capacity(classes);
    for c in 0..classes {
        let raw = raw_bag_score(&probs, c, agg);
        let s = raw.clamp(SCORE_EPS, 1.0 - SCORE_EPS);
        scores.push(s);
        d_score.push(if s != raw {
            0.0
        } else if c == target {
            -1.0 / s
        } else {
            1.0 / (1.0 - s)
        });
    }
    let loss = mil_loss(&scores, target);

    // dL/dp_{n,c}
    let mut d_prob = vec![vec![0.0; classes]; n];
    for c in 0..classes {
        if d_score[c] == 0.0 {
            continue;
        }
        match agg {
            BagAggregation::Mean => {
                for row in d_prob.iter_mut() {
                    row[c] = d_score[c] / n as f64;
                }
            }
            BagAggregation::Max => {
                let mut best = 0;
                for (i, p) in probs.iter().enumerate() {
                    if p.get(c) > probs[best].get(c) {
                        best = i;
                    }
                }
                d_prob[best][c] = d_score[c];
            }
            BagAggregation::NoisyOr => {
                for (i, row) in d_prob.iter_mut().enumerate() {
                    let others: f64 = probs
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .map(|(_, p)| 1.0 - p.get(c))
                        .product();
                    row[c] = d_score[c] * others;
                }
            }
        }
    }

    let mut d_features = Array2::zeros((n, dim));
    for (i, f) in features.iter().enumerate() {
        let p = probs[i].as_slice();
        let weighted: f64 = d_prob[i].iter().zip(p).map(|(g, q)| g * q).sum();
        let mut row = vec![0.0; dim];
        for (k, proto) in prototypes.iter().enumerate() {
            let d_logit = p[k] * (d_prob[i][k] - weighted);
            if d_logit != 0.0 {
                add_cosine_grad(f.as_slice(), proto.as_slice(), d_logit, &mut row);
            }
        }
        d_features.row_mut(i).assign(&ndarray::Array1::from(row));
    }
    (loss, d_features)
}

/// Eq. 2 loss of one bag (no gradient).
pub fn bag_loss(
    features: &[FeatureVector],
    prototypes: &[FeatureVector],
    target: usize,
    agg: BagAggregation,
) -> f64 {
    let probs: Vec<ClassProbabilities> = features
        .iter()
        .map(|f| instance_probability(f, prototypes))
        .collect();
    let scores: Vec<f64> = (0..prototypes.len())
        .map(|c| bag_score(&probs, c, agg))
        .collect();
    mil_loss(&scores, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: &[f64]) -> FeatureVector {
        FeatureVector(v.to_vec())
    }

    #[test]
    fn cosine_examples() {
        let f = [0.3, -1.2, 4.0];
        assert!((cosine_similarity(&f, &f) - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
        assert!((cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn probability_examples() {
        let p = instance_probability(&fv(&[1.0, 0.0]), &[fv(&[0.0, 1.0]), fv(&[0.0, -1.0])]);
        assert!((p.get(0) - 0.5).abs() < 1e-15);
        // sims (1, -1): closed-form two-way softmax.
        let p = instance_probability(&fv(&[1.0, 0.0]), &[fv(&[2.0, 0.0]), fv(&[-3.0, 0.0])]);
        let e = (-2.0f64).exp();
        assert!((p.get(0) - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((p.get(1) - e / (1.0 + e)).abs() < 1e-15);
        assert!((p.get(0) - 0.8808).abs() < 1e-4);
    }

    #[test]
    fn bag_score_examples() {
        let bag = [ClassProbabilities(vec![0.1, 0.9]), ClassProbabilities(vec![0.3, 0.7])];
        assert!((bag_score(&bag, 1, BagAggregation::Mean) - 0.8).abs() < 1e-15);
        let sure = vec![ClassProbabilities(vec![0.0, 1.0]); 3];
        assert_eq!(bag_score(&sure, 1, BagAggregation::Mean), 1.0 - SCORE_EPS);
        let one = [ClassProbabilities(vec![0.35, 0.65])];
        assert_eq!(bag_score(&one, 1, BagAggregation::Mean), 0.65);
        assert_eq!(bag_score(&bag, 1, BagAggregation::Max), 0.9);
        assert!((bag_score(&bag, 1, BagAggregation::NoisyOr) - (1.0 - 0.1 * 0.3)).abs() < 1e-15);
    }

    #[test]
    fn loss_examples() {
        let l = mil_loss(&[0.8, 0.2], 0);
        assert!((l + 2.0 * 0.8f64.ln()).abs() < 1e-15);
        assert!((l - 0.4463).abs() < 1e-4);
        let perfect = mil_loss(&[1.0 - SCORE_EPS, SCORE_EPS], 0);
        assert!((perfect - 2.0 * SCORE_EPS).abs() < 1e-11);
        assert!((mil_loss(&[0.5, 0.5], 0) - 1.3863).abs() < 1e-4);
    }

    fn check_feature_grad(agg: BagAggregation) {
        let features = vec![fv(&[0.4, -0.7, 1.1]), fv(&[-0.2, 0.9, 0.3]), fv(&[1.5, 0.1, -0.6])];
        let protos = vec![fv(&[0.3, 0.2, -0.5]), fv(&[-0.1, 0.8, 0.4]), fv(&[0.0, 0.0, 0.0])];
        let (_, grad) = bag_loss_with_grad(&features, &protos, 1, agg);
        let h = 1e-6;
        for i in 0..features.len() {
            for d in 0..3 {
                let mut plus = features.clone();
                plus[i].0[d] += h;
                let mut minus = features.clone();
                minus[i].0[d] -= h;
                let fd = (bag_loss(&plus, &protos, 1, agg) - bag_loss(&minus, &protos, 1, agg)) / (2.0 * h);
                assert!((fd - grad[[i, d]]).abs() < 1e-7, "{agg:?} [{i},{d}] fd {fd} analytic {}", grad[[i, d]]);
            }
        }
    }

    #[test]
    fn feature_gradients_match_finite_differences() {
        check_feature_grad(BagAggregation::Mean);
        check_feature_grad(BagAggregation::Max);
        check_feature_grad(BagAggregation::NoisyOr);
    }

    #[test]
    fn aggregation_codes_round_trip() {
        for a in [BagAggregation::Mean, BagAggregation::Max, BagAggregation::NoisyOr] {
            assert_eq!(BagAggregation::from_code(a.code()), Some(a));
        }
        assert_eq!(BagAggregation::from_code(9), None);
    }
}
