//! Overlap and boundary metrics, evaluation reports and overlays.

mod evaluate;
mod overlay;
mod report;

pub use evaluate::{evaluate, EvalSample};
pub use overlay::emit_overlay;
pub use report::{AggregateRow, EvalReport, EvalRow, MetricSummary, CSV_HEADER};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::Mask2D;

/// `2|A ∩ B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &Mask2D, b: &Mask2D) -> Result<f64> {
    a.check_same_dims(b)?;
    let (mut inter, mut total) = (0usize, 0usize);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as usize;
        total += x as usize + y as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Which Hausdorff statistic to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HausdorffVariant {
    /// Maximum of both directed distances.
    #[default]
    Max,
    /// 95th percentile (linear interpolation) of the pooled directed distances.
    Percentile95,
}

// Lower envelope of parabolas; `f` holds squared distances (INF off-site).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let Some(first) = f.iter().position(|x| x.is_finite()) else {
        out.fill(f64::INFINITY);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..f.len() {
        if !f[q].is_finite() {
            continue;
        }
        let qf = q as f64;
        let mut s;
        loop {
            let p = v[k] as f64;
            s = ((f[q] + qf * qf) - (f[v[k]] + p * p)) / (2.0 * (qf - p));
            // z[0] is -inf, so this stops at k = 0.
            if s <= z[k] {
                k -= 1;
            } else {
                break;
            }
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance from every pixel center to the nearest foreground pixel.
fn squared_distance_transform(m: &Mask2D) -> Vec<f64> {
    let (w, h) = m.dims();
    let n = w.max(h);
    let mut grid: Vec<f64> = m
        .bits()
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut out[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = out[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut out[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&out[..w]);
    }
    grid
}

fn directed_distances(from: &Mask2D, to: &Mask2D) -> Vec<f64> {
    let dt = squared_distance_transform(to);
    from.bits()
        .iter()
        .zip(&dt)
        .filter(|(&b, _)| b)
        .map(|(_, d)| d.sqrt())
        .collect()
}

fn percentile_linear(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Hausdorff distance (or HD95) between foreground pixel centers, in mm.
///
/// When either mask is empty the image diagonal is returned.
pub fn hausdorff_with(a: &Mask2D, b: &Mask2D, spacing: f64, variant: HausdorffVariant) -> Result<f64> {
    a.check_same_dims(b)?;
    if a.is_empty() || b.is_empty() {
        let (w, h) = a.dims();
        return Ok(((w * w + h * h) as f64).sqrt() * spacing);
    }
    let ab = directed_distances(a, b);
    let ba = directed_distances(b, a);
    let d = match variant {
        HausdorffVariant::Max => ab.iter().chain(&ba).copied().fold(0.0, f64::max),
        HausdorffVariant::Percentile95 => {
            let mut all: Vec<f64> = ab.into_iter().chain(ba).collect();
            all.sort_by(|x, y| x.total_cmp(y));
            percentile_linear(&all, 0.95)
        }
    };
    Ok(d * spacing)
}

/// Symmetric Hausdorff distance in mm.
pub fn hausdorff_mm(a: &Mask2D, b: &Mask2D, spacing: f64) -> Result<f64> {
    hausdorff_with(a, b, spacing, HausdorffVariant::Max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    fn points(w: usize, h: usize, pts: &[(usize, usize)]) -> Mask2D {
        let mut m = Mask2D::empty(w, h).unwrap();
        for &(x, y) in pts {
            m.set(x, y, true);
        }
        m
    }

    #[test]
    fn dice_examples() {
        let a = points(4, 4, &[(0, 0), (1, 0), (2, 0), (3, 0)]);
        let b = points(4, 4, &[(2, 0), (3, 0), (0, 3), (1, 3)]);
        let far = points(4, 4, &[(0, 3)]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &far).unwrap(), 0.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        let e = Mask2D::empty(4, 4).unwrap();
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(matches!(dice(&a, &Mask2D::empty(3, 4).unwrap()), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn hausdorff_examples() {
        let a = points(8, 8, &[(0, 0)]);
        let b = points(8, 8, &[(3, 4)]);
        assert_eq!(hausdorff_mm(&a, &b, 1.0).unwrap(), 5.0);
        assert_eq!(hausdorff_mm(&a, &a, 1.0).unwrap(), 0.0);
        assert_eq!(hausdorff_mm(&a, &b, 0.5).unwrap(), 2.5);
        let e = Mask2D::empty(6, 8).unwrap();
        assert_eq!(hausdorff_mm(&a.clone(), &Mask2D::empty(8, 8).unwrap(), 2.0).unwrap(), (128.0f64).sqrt() * 2.0);
        assert_eq!(hausdorff_mm(&e, &e, 1.0).unwrap(), 10.0);
    }

    #[test]
    fn hd95_is_not_above_max() {
        let a = points(20, 20, &[(0, 0), (1, 0), (2, 0), (19, 19)]);
        let b = points(20, 20, &[(0, 1), (1, 1), (2, 1)]);
        let max = hausdorff_with(&a, &b, 1.0, HausdorffVariant::Max).unwrap();
        let p95 = hausdorff_with(&a, &b, 1.0, HausdorffVariant::Percentile95).unwrap();
        assert!(p95 <= max);
        assert!(p95 > 1.0);
    }

    fn brute_hausdorff(a: &Mask2D, b: &Mask2D) -> f64 {
        let pa: Vec<_> = a.foreground().collect();
        let pb: Vec<_> = b.foreground().collect();
        let directed = |from: &[(usize, usize)], to: &[(usize, usize)]| {
            from.iter()
                .map(|&(x, y)| {
                    to.iter()
                        .map(|&(u, v)| ((x as f64 - u as f64).powi(2) + (y as f64 - v as f64).powi(2)).sqrt())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(0.0, f64::max)
        };
        directed(&pa, &pb).max(directed(&pb, &pa))
    }

    fn arb_pair() -> impl Strategy<Value = (Mask2D, Mask2D)> {
        (1usize..=24, 1usize..=24, 0.01f64..0.6).prop_flat_map(|(w, h, p)| {
            let bits = proptest::collection::vec(proptest::bool::weighted(p), w * h);
            (bits.clone(), bits).prop_map(move |(a, b)| (Mask2D::new(w, h, a).unwrap(), Mask2D::new(w, h, b).unwrap()))
        })
    }

    proptest! {
        #[test]
        fn hausdorff_matches_brute_force((a, b) in arb_pair()) {
            prop_assume!(!a.is_empty() && !b.is_empty());
            let fast = hausdorff_mm(&a, &b, 1.0).unwrap();
            prop_assert!((fast - brute_hausdorff(&a, &b)).abs() < 1e-9);
            prop_assert_eq!(fast, hausdorff_mm(&b, &a, 1.0).unwrap());
            prop_assert!((hausdorff_mm(&a, &b, 0.7).unwrap() - 0.7 * fast).abs() < 1e-9);
        }

        #[test]
        fn dice_symmetric_and_bounded((a, b) in arb_pair()) {
            let d = dice(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, dice(&b, &a).unwrap());
            prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
        }

        #[test]
        fn dice_drops_as_overlap_is_removed((a, _) in arb_pair()) {
            prop_assume!(a.count() >= 2);
            let mut b = a.clone();
            let mut prev = dice(&a, &b).unwrap();
            for (x, y) in a.foreground().collect::<Vec<_>>() {
                b.set(x, y, false);
                let d = dice(&a, &b).unwrap();
                prop_assert!(d < prev);
                prev = d;
            }
        }

        #[test]
        fn hausdorff_zero_iff_equal((a, b) in arb_pair()) {
            prop_assume!(!a.is_empty() && !b.is_empty());
            prop_assert_eq!(hausdorff_mm(&a, &b, 1.0).unwrap() == 0.0, a == b);
        }
    }
}
