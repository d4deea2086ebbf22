//! Feature extractor: fixed crop/resize/z-score stem followed by two trainable
//! fully connected layers (ReLU between them, linear output).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{crop_resize, BBox, Image2D};

pub const STD_FLOOR: f64 = 1e-6;

/// Layer sizes of the refiner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinerDims {
    /// Side of the square stem grid; the first layer sees `patch * patch` inputs.
    pub patch: usize,
    pub hidden: usize,
    pub dim: usize,
}

impl Default for RefinerDims {
    fn default() -> Self {
        RefinerDims {
            patch: 32,
            hidden: 1024,
            dim: 256,
        }
    }
}

impl RefinerDims {
    pub fn input(&self) -> usize {
        self.patch * self.patch
    }
}

/// A `D`-dimensional embedding of one (image, box) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        FeatureVector(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, k: f64) -> Self {
        FeatureVector(self.0.iter().map(|v| v * k).collect())
    }
}

/// Trainable parameters `W1 [H1 x P^2]`, `b1`, `W2 [D x H1]`, `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinerParams {
    pub patch: usize,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Same layout as [`RefinerParams`]; also used for optimizer momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Gradient {
    pub fn zeros(dims: RefinerDims) -> Self {
        Gradient {
            w1: Array2::zeros((dims.hidden, dims.input())),
            b1: Array1::zeros(dims.hidden),
            w2: Array2::zeros((dims.dim, dims.hidden)),
            b2: Array1::zeros(dims.dim),
        }
    }

    pub fn dot(&self, other: &Gradient) -> f64 {
        (&self.w1 * &other.w1).sum()
            + (&self.b1 * &other.b1).sum()
            + (&self.w2 * &other.w2).sum()
            + (&self.b2 * &other.b2).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Flattened view in the order w1, b1, w2, b2.
    pub fn flatten(&self) -> Vec<f64> {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
            .collect()
    }
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    pub pre: Array2<f64>,
    pub hidden: Array2<f64>,
    pub features: Array2<f64>,
}

impl RefinerParams {
    /// Glorot-uniform weights, zero biases, drawn from a seeded ChaCha stream.
    pub fn init(dims: RefinerDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
        };
        let w1 = glorot(dims.hidden, dims.input());
        let w2 = glorot(dims.dim, dims.hidden);
        RefinerParams {
            patch: dims.patch,
            w1,
            b1: Array1::zeros(dims.hidden),
            w2,
            b2: Array1::zeros(dims.dim),
        }
    }

    pub fn dims(&self) -> RefinerDims {
        RefinerDims {
            patch: self.patch,
            hidden: self.w1.nrows(),
            dim: self.w2.nrows(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }

    /// Batched forward pass; each row of `stems` is one flattened stem output.
    pub fn forward(&self, stems: ArrayView2<f64>) -> ForwardCache {
        let pre = stems.dot(&self.w1.t()) + &self.b1;
        let hidden = pre.mapv(|v| v.max(0.0));
        let features = hidden.dot(&self.w2.t()) + &self.b2;
        ForwardCache {
            pre,
            hidden,
            features,
        }
    }

    /// Parameter gradient given `dL/dF` for every row of the batch.
    pub fn backward(
        &self,
        stems: ArrayView2<f64>,
        cache: &ForwardCache,
        d_features: ArrayView2<f64>,
    ) -> Gradient {
        let w2 = d_features.t().dot(&cache.hidden);
        let b2 = d_features.sum_axis(Axis(0));
        let mut d_pre = d_features.dot(&self.w2);
        ndarray::Zip::from(&mut d_pre)
            .and(&cache.pre)
            .for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
        let w1 = d_pre.t().dot(&stems);
        let b1 = d_pre.sum_axis(Axis(0));
        Gradient { w1, b1, w2, b2 }
    }

    /// Apply `f` to every parameter with its matching gradient entry.
    pub fn zip_apply(&mut self, other: &Gradient, mut f: impl FnMut(&mut f64, f64)) {
        ndarray::Zip::from(&mut self.w1).and(&other.w1).for_each(|p, &g| f(p, g));
        ndarray::Zip::from(&mut self.b1).and(&other.b1).for_each(|p, &g| f(p, g));
        ndarray::Zip::from(&mut self.w2).and(&other.w2).for_each(|p, &g| f(p, g));
        ndarray::Zip::from(&mut self.b2).and(&other.b2).for_each(|p, &g| f(p, g));
    }
}

/// Crop the box, resample to `patch x patch`, and z-score the result.
pub fn stem(img: &Image2D, b: &BBox, patch: usize) -> Vec<f64> {
    let mut grid = crop_resize(img, b, patch, patch);
    let n = grid.len() as f64;
    let mean = grid.iter().sum::<f64>() / n;
    let var = grid.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(STD_FLOOR);
    for v in &mut grid {
        *v = (*v - mean) / std;
    }
    grid
}

/// Stack stem outputs for a list of boxes into a `[boxes x P^2]` matrix.
pub fn stem_matrix(img: &Image2D, boxes: &[BBox], patch: usize) -> Array2<f64> {
    let cols = patch * patch;
    let mut out = Array2::zeros((boxes.len(), cols));
    for (mut row, b) in out.outer_iter_mut().zip(boxes) {
        row.assign(&Array1::from(stem(img, b, patch)));
    }
    out
}

/// `θ(x, b)`: the refiner embedding of one box.
pub fn extract_feature(params: &RefinerParams, img: &Image2D, b: &BBox) -> FeatureVector {
    let stems = stem_matrix(img, std::slice::from_ref(b), params.patch);
    let cache = params.forward(stems.view());
    FeatureVector(cache.features.row(0).to_vec())
}

/// Embeddings of several boxes on the same image.
pub fn extract_features(params: &RefinerParams, img: &Image2D, boxes: &[BBox]) -> Vec<FeatureVector> {
    let stems = stem_matrix(img, boxes, params.patch);
    let cache = params.forward(stems.view());
    cache
        .features
        .outer_iter()
        .map(|r| FeatureVector(r.to_vec()))
        .collect()
}
