//! Feature-map perturbations: erase, transform, noise.
//!
//! All three operate on batches of dense (H, W, C) maps stored as one
//! `(batch, height, width, channels)` array, touch only their region's
//! footprint across every channel and batch item, and never mutate the
//! input. `erase` zeroes the region, `transform` copies the source region
//! onto the destination (reading from a snapshot of the input, so an
//! overlapping pair is well defined), and `noise` replaces the region with
//! i.i.d. Uniform[0, 1) draws.
//!
//! The matching `*_backward` functions route a gradient taken at the
//! perturbed map back to the clean map: the operators are non-parametric, so
//! gradient flows through untouched entries (erase/noise) or through the
//! source cells (transform).

use crate::error::{Error, Result};
use crate::region::{GridShape, Region, RegionSet};
use ndarray::{s, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Batch of feature maps, shape `(batch, height, width, channels)`.
pub type FeatureBatch = Array4<f64>;

/// What happens to the source region during a transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformMode {
    /// Source is copied onto the destination and left unchanged.
    Copy,
    /// Source and destination contents are exchanged.
    Swap,
}

impl Default for TransformMode {
    fn default() -> Self {
        TransformMode::Copy
    }
}

/// Grid of a feature batch.
pub fn grid_of(batch: &FeatureBatch) -> GridShape {
    let (_, h, w, _) = batch.dim();
    GridShape::new(h, w)
}

fn check_region(batch: &FeatureBatch, region: Region) -> Result<()> {
    let grid = grid_of(batch);
    if !region.fits(grid) {
        return Err(Error::ShapeMismatch(format!(
            "region {region:?} exceeds grid {}x{}",
            grid.height, grid.width
        )));
    }
    Ok(())
}

fn check_pair(batch: &FeatureBatch, src: Region, dst: Region) -> Result<()> {
    if (src.w, src.h) != (dst.w, dst.h) {
        return Err(Error::ShapeMismatch(format!(
            "transform regions differ in shape: {}x{} vs {}x{}",
            src.w, src.h, dst.w, dst.h
        )));
    }
    check_region(batch, src)?;
    check_region(batch, dst)
}

/// Zero the region across all channels and batch items.
pub fn erase(batch: &FeatureBatch, region: Region) -> Result<FeatureBatch> {
    check_region(batch, region)?;
    let mut out = batch.clone();
    out.slice_mut(s![
        ..,
        region.y..region.y + region.h,
        region.x..region.x + region.w,
        ..
    ])
    .fill(0.0);
    Ok(out)
}

/// Copy the source region onto the destination region.
pub fn transform(batch: &FeatureBatch, src: Region, dst: Region) -> Result<FeatureBatch> {
    apply_transform(batch, src, dst, TransformMode::Copy)
}

/// Per-cell read map of the transform: for every grid cell, the cell the
/// output reads its value from. In a source/destination overlap the source
/// write wins, which keeps an overlapping pair well defined.
fn transform_read_map(
    grid: GridShape,
    src: Region,
    dst: Region,
    mode: TransformMode,
) -> Vec<(usize, usize)> {
    let mut read: Vec<(usize, usize)> = (0..grid.cells())
        .map(|i| (i / grid.width, i % grid.width))
        .collect();
    for dy in 0..dst.h {
        for dx in 0..dst.w {
            read[(dst.y + dy) * grid.width + (dst.x + dx)] = (src.y + dy, src.x + dx);
        }
    }
    if mode == TransformMode::Swap {
        for dy in 0..src.h {
            for dx in 0..src.w {
                read[(src.y + dy) * grid.width + (src.x + dx)] = (dst.y + dy, dst.x + dx);
            }
        }
    }
    read
}

/// Transform with an explicit copy/swap mode. All values are read from a
/// snapshot of the input.
pub fn apply_transform(
    batch: &FeatureBatch,
    src: Region,
    dst: Region,
    mode: TransformMode,
) -> Result<FeatureBatch> {
    check_pair(batch, src, dst)?;
    let grid = grid_of(batch);
    let mut out = batch.clone();
    for (i, &(ry, rx)) in transform_read_map(grid, src, dst, mode).iter().enumerate() {
        let (y, x) = (i / grid.width, i % grid.width);
        if (ry, rx) != (y, x) {
            out.slice_mut(s![.., y, x, ..])
                .assign(&batch.slice(s![.., ry, rx, ..]));
        }
    }
    Ok(out)
}

/// Replace the region with Uniform[0, 1) draws, fresh per batch item and
/// channel. Draw order is fixed (batch, row, column, channel).
pub fn noise(batch: &FeatureBatch, region: Region, rng: &mut impl Rng) -> Result<FeatureBatch> {
    check_region(batch, region)?;
    let mut out = batch.clone();
    for v in out
        .slice_mut(s![
            ..,
            region.y..region.y + region.h,
            region.x..region.x + region.w,
            ..
        ])
        .iter_mut()
    {
        *v = rng.random::<f64>();
    }
    Ok(out)
}

/// Gradient of `erase` w.r.t. its input: zero inside the region, identity
/// outside.
pub fn erase_backward(grad: &FeatureBatch, region: Region) -> Result<FeatureBatch> {
    // noise has the same input Jacobian: the replaced entries are constants.
    check_region(grad, region)?;
    let mut out = grad.clone();
    out.slice_mut(s![
        ..,
        region.y..region.y + region.h,
        region.x..region.x + region.w,
        ..
    ])
    .fill(0.0);
    Ok(out)
}

/// Gradient of `noise` w.r.t. its input.
pub fn noise_backward(grad: &FeatureBatch, region: Region) -> Result<FeatureBatch> {
    erase_backward(grad, region)
}

/// Gradient of `apply_transform` w.r.t. its input: the transpose of the
/// same read map the forward pass uses.
pub fn transform_backward(
    grad: &FeatureBatch,
    src: Region,
    dst: Region,
    mode: TransformMode,
) -> Result<FeatureBatch> {
    check_pair(grad, src, dst)?;
    let grid = grid_of(grad);
    let mut out = FeatureBatch::zeros(grad.dim());
    for (i, &(ry, rx)) in transform_read_map(grid, src, dst, mode).iter().enumerate() {
        let (y, x) = (i / grid.width, i % grid.width);
        let g = grad.slice(s![.., y, x, ..]).to_owned();
        out.slice_mut(s![.., ry, rx, ..])
            .zip_mut_with(&g, |a, b| *a += *b);
    }
    Ok(out)
}

/// The clean batch together with its three perturbed versions and the
/// regions that produced them.
#[derive(Debug, Clone)]
pub struct AdversarialBatch {
    pub clean: FeatureBatch,
    pub erased: FeatureBatch,
    pub transformed: FeatureBatch,
    pub noised: FeatureBatch,
    pub regions: RegionSet,
}

/// Build all three perturbed representations from one clean batch.
pub fn make_adversarial_batch(
    clean: &FeatureBatch,
    regions: RegionSet,
    rng: &mut impl Rng,
    mode: TransformMode,
) -> Result<AdversarialBatch> {
    let erased = erase(clean, regions.erase)?;
    let transformed = apply_transform(clean, regions.transform_src, regions.transform_dst, mode)?;
    let noised = noise(clean, regions.noise, rng)?;
    Ok(AdversarialBatch {
        clean: clean.clone(),
        erased,
        transformed,
        noised,
        regions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_rng, stream};
    use ndarray::Array4;

    fn region(x: usize, y: usize, w: usize, h: usize) -> Region {
        Region { x, y, w, h }
    }

    fn random_batch(b: usize, h: usize, w: usize, c: usize, seed: u64) -> FeatureBatch {
        let mut rng = derive_rng(seed, stream::NOISE, 99);
        Array4::from_shape_fn((b, h, w, c), |_| rng.random::<f64>() * 4.0 - 2.0)
    }

    #[test]
    fn erase_drops_expected_sum() {
        let batch = Array4::from_elem((1, 4, 4, 2), 1.0);
        let out = erase(&batch, region(1, 1, 2, 2)).unwrap();
        assert_eq!(out.sum(), 24.0);
        assert_eq!(batch.sum(), 32.0); // input untouched
    }

    #[test]
    fn erase_full_grid_zeroes_everything() {
        let batch = random_batch(2, 4, 3, 5, 0);
        let out = erase(&batch, region(0, 0, 3, 4)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn erase_single_cell_locality() {
        let batch = random_batch(1, 4, 4, 3, 1);
        let out = erase(&batch, region(0, 0, 1, 1)).unwrap();
        let mut diffs = 0;
        for (idx, (a, b)) in batch.iter().zip(out.iter()).enumerate() {
            if a != b {
                diffs += 1;
                assert!(idx < 3, "difference outside the first cell");
            }
        }
        assert_eq!(diffs, 3);
    }

    #[test]
    fn erase_idempotent() {
        let batch = random_batch(2, 5, 4, 3, 2);
        let r = region(1, 2, 2, 3);
        let once = erase(&batch, r).unwrap();
        let twice = erase(&once, r).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn transform_self_copy_is_identity() {
        let batch = random_batch(2, 6, 4, 3, 3);
        let r = region(1, 1, 2, 2);
        let out = transform(&batch, r, r).unwrap();
        assert_eq!(out, batch);
    }

    #[test]
    fn transform_copies_disjoint_content() {
        let mut batch = Array4::zeros((1, 4, 4, 1));
        batch.slice_mut(s![.., 0..2, 0..2, ..]).fill(7.0);
        batch.slice_mut(s![.., 2..4, 2..4, ..]).fill(3.0);
        let out = transform(&batch, region(0, 0, 2, 2), region(2, 2, 2, 2)).unwrap();
        assert!(out.slice(s![.., 0..2, 0..2, ..]).iter().all(|&v| v == 7.0));
        assert!(out.slice(s![.., 2..4, 2..4, ..]).iter().all(|&v| v == 7.0));
    }

    #[test]
    fn transform_constant_map_unchanged() {
        let batch = Array4::from_elem((2, 4, 4, 2), 0.5);
        let out = transform(&batch, region(0, 0, 2, 2), region(1, 2, 2, 2)).unwrap();
        assert_eq!(out, batch);
    }

    #[test]
    fn double_transform_is_not_an_inverse() {
        let batch = random_batch(1, 6, 6, 2, 4);
        let a = region(0, 0, 2, 2);
        let b = region(3, 3, 2, 2);
        let once = transform(&batch, a, b).unwrap();
        let back = transform(&once, b, a).unwrap();
        assert_ne!(back, batch); // copy, not swap
    }

    #[test]
    fn swap_mode_exchanges_contents() {
        let batch = random_batch(1, 6, 6, 2, 5);
        let a = region(0, 0, 2, 2);
        let b = region(3, 3, 2, 2);
        let swapped = apply_transform(&batch, a, b, TransformMode::Swap).unwrap();
        let back = apply_transform(&swapped, a, b, TransformMode::Swap).unwrap();
        assert_eq!(back, batch);
    }

    #[test]
    fn transform_shape_mismatch_rejected() {
        let batch = random_batch(1, 4, 4, 1, 6);
        let err = transform(&batch, region(0, 0, 2, 2), region(0, 0, 1, 2));
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn noise_values_in_unit_interval() {
        let batch = random_batch(3, 5, 4, 4, 7);
        let r = region(1, 1, 2, 3);
        let mut rng = derive_rng(7, stream::NOISE, 0);
        let out = noise(&batch, r, &mut rng).unwrap();
        for v in out.slice(s![.., 1..4, 1..3, ..]).iter() {
            assert!((0.0..1.0).contains(v));
        }
        // outside the region bit-identical
        assert_eq!(out.slice(s![.., 0, .., ..]), batch.slice(s![.., 0, .., ..]));
    }

    #[test]
    fn noise_mean_near_half() {
        let batch = Array4::zeros((10, 10, 10, 10));
        let r = region(0, 0, 10, 10);
        let mut rng = derive_rng(8, stream::NOISE, 0);
        let out = noise(&batch, r, &mut rng).unwrap();
        let mean = out.sum() / out.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn adversarial_batch_is_deterministic() {
        let batch = random_batch(4, 6, 4, 3, 9);
        let grid = grid_of(&batch);
        let cfg = crate::region::PerturbationConfig::default();
        let regions =
            crate::region::sample_batch_regions(&mut derive_rng(1, stream::REGION, 0), grid, &cfg)
                .unwrap();
        let a = make_adversarial_batch(
            &batch,
            regions,
            &mut derive_rng(1, stream::NOISE, 0),
            TransformMode::Copy,
        )
        .unwrap();
        let b = make_adversarial_batch(
            &batch,
            regions,
            &mut derive_rng(1, stream::NOISE, 0),
            TransformMode::Copy,
        )
        .unwrap();
        assert_eq!(a.erased, b.erased);
        assert_eq!(a.transformed, b.transformed);
        assert_eq!(a.noised, b.noised);
        assert_eq!(a.clean.dim().0, 4);
        assert_eq!(a.erased.dim(), a.clean.dim());
        // zeroing a non-negative map can only lower the total
        let nonneg = batch.mapv(f64::abs);
        let adv = make_adversarial_batch(
            &nonneg,
            regions,
            &mut derive_rng(2, stream::NOISE, 0),
            TransformMode::Copy,
        )
        .unwrap();
        assert!(adv.erased.sum() <= nonneg.sum());
    }

    #[test]
    fn masked_complement_untouched() {
        let batch = random_batch(2, 8, 6, 3, 10);
        let r = region(2, 3, 3, 2);
        let erased = erase(&batch, r).unwrap();
        let mut rng = derive_rng(11, stream::NOISE, 0);
        let noised = noise(&batch, r, &mut rng).unwrap();
        for (((idx, &orig), &e), &n) in batch.indexed_iter().zip(erased.iter()).zip(noised.iter())
        {
            let (_, y, x, _) = idx;
            let inside = x >= r.x && x < r.x + r.w && y >= r.y && y < r.y + r.h;
            if !inside {
                assert_eq!(orig, e);
                assert_eq!(orig, n);
            }
        }
    }

    #[test]
    fn backward_ops_route_gradients() {
        let grad = random_batch(1, 4, 4, 1, 12);
        let r = region(1, 1, 2, 2);
        let ge = erase_backward(&grad, r).unwrap();
        assert!(ge.slice(s![.., 1..3, 1..3, ..]).iter().all(|&v| v == 0.0));
        assert_eq!(ge[[0, 0, 0, 0]], grad[[0, 0, 0, 0]]);

        // copy-transform: dst grad moves onto src, src keeps its own too
        let a = region(0, 0, 2, 2);
        let b = region(2, 2, 2, 2);
        let gt = transform_backward(&grad, a, b, TransformMode::Copy).unwrap();
        assert!(gt.slice(s![.., 2..4, 2..4, ..]).iter().all(|&v| v == 0.0));
        assert_eq!(gt[[0, 0, 0, 0]], grad[[0, 0, 0, 0]] + grad[[0, 2, 2, 0]]);
    }

    #[test]
    fn transform_backward_matches_directional_derivative() {
        // J^T g dotted with a direction must equal the forward directional
        // derivative for the linear operator, including overlapping regions.
        let base = random_batch(1, 5, 5, 2, 13);
        let dir = random_batch(1, 5, 5, 2, 14);
        let grad = random_batch(1, 5, 5, 2, 15);
        let src = region(1, 1, 3, 3);
        let dst = region(2, 2, 3, 3); // overlaps src
        for mode in [TransformMode::Copy, TransformMode::Swap] {
            let eps = 1e-6;
            let plus = apply_transform(&(&base + &(&dir * eps)), src, dst, mode).unwrap();
            let minus = apply_transform(&(&base - &(&dir * eps)), src, dst, mode).unwrap();
            let jvp = (&plus - &minus) / (2.0 * eps);
            let lhs: f64 = (&jvp * &grad).sum();
            let vjp = transform_backward(&grad, src, dst, mode).unwrap();
            let rhs: f64 = (&vjp * &dir).sum();
            assert!((lhs - rhs).abs() < 1e-6, "mode {mode:?}: {lhs} vs {rhs}");
        }
    }
}
