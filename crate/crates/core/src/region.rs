//! Rectangular region sampling on the feature-map grid.
//!
//! A region is drawn by picking an area proportion `alpha` of the grid and an
//! aspect ratio `r`, converting them to a target height `sqrt(alpha*H*W*r)`
//! and width `sqrt(alpha*H*W/r)`, rounding to the nearest cell count, and
//! then placing the rectangle at a uniformly drawn corner. Placements that
//! stick out of the grid are rejected and the whole draw (proportion, aspect
//! and corner) is restarted. One [`RegionSet`] is sampled per mini-batch and
//! shared by every map in it.

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Spatial extent of a feature map (rows x columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::GridTooSmall {
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }
}

/// Integer rectangle on a grid. `x` is the column offset, `y` the row offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Region {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    /// Containment test: the whole rectangle lies on the grid.
    pub fn fits(&self, grid: GridShape) -> bool {
        self.w >= 1
            && self.h >= 1
            && self.x + self.w <= grid.width
            && self.y + self.h <= grid.height
    }
}

/// Bounds and mode flags for region sampling.
///
/// `fixed_mode` replaces the uniform proportion/aspect draws with the fixed
/// values, for comparing against block-drop style erasing with a constant
/// footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub area_min: f64,
    pub area_max: f64,
    pub aspect_min: f64,
    pub aspect_max: f64,
    pub fixed_mode: bool,
    pub fixed_area: f64,
    pub fixed_aspect: f64,
    pub max_rejection_attempts: u32,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            area_min: 0.02,
            area_max: 0.4,
            aspect_min: 0.3,
            aspect_max: 1.0 / 0.3,
            fixed_mode: false,
            fixed_area: 0.3,
            fixed_aspect: 0.3,
            max_rejection_attempts: 100,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        let ok_area = 0.0 < self.area_min && self.area_min <= self.area_max && self.area_max <= 1.0;
        let ok_aspect = 0.0 < self.aspect_min && self.aspect_min <= self.aspect_max;
        let ok_fixed = 0.0 < self.fixed_area
            && self.fixed_area <= 1.0
            && 0.0 < self.fixed_aspect;
        if !ok_area {
            return Err(Error::InvalidConfig(format!(
                "area bounds must satisfy 0 < {} <= {} <= 1",
                self.area_min, self.area_max
            )));
        }
        if !ok_aspect {
            return Err(Error::InvalidConfig(format!(
                "aspect bounds must satisfy 0 < {} <= {}",
                self.aspect_min, self.aspect_max
            )));
        }
        if !ok_fixed {
            return Err(Error::InvalidConfig(
                "fixed_area/fixed_aspect out of range".into(),
            ));
        }
        if self.max_rejection_attempts == 0 {
            return Err(Error::InvalidConfig(
                "max_rejection_attempts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// The four rectangles shared by one mini-batch: one erase region, a
/// same-shape source/destination pair for the transform, one noise region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSet {
    pub erase: Region,
    pub transform_src: Region,
    pub transform_dst: Region,
    pub noise: Region,
}

/// Pre-rounding draw values, exposed so tests can assert on the continuous
/// quantities the rounded region came from.
#[derive(Debug, Clone, Copy)]
pub struct SampleTrace {
    pub alpha: f64,
    pub aspect: f64,
    pub target_h: f64,
    pub target_w: f64,
    pub attempts: u32,
}

fn draw_alpha_aspect(rng: &mut impl Rng, cfg: &PerturbationConfig) -> (f64, f64) {
    if cfg.fixed_mode {
        (cfg.fixed_area, cfg.fixed_aspect)
    } else {
        let alpha = if cfg.area_min == cfg.area_max {
            cfg.area_min
        } else {
            rng.random_range(cfg.area_min..cfg.area_max)
        };
        let aspect = if cfg.aspect_min == cfg.aspect_max {
            cfg.aspect_min
        } else {
            rng.random_range(cfg.aspect_min..cfg.aspect_max)
        };
        (alpha, aspect)
    }
}

/// Round half away from zero, then clamp into [1, limit].
fn round_dim(target: f64, limit: usize) -> usize {
    let rounded = target.round() as i64;
    rounded.clamp(1, limit as i64) as usize
}

fn target_dims(grid: GridShape, alpha: f64, aspect: f64) -> (f64, f64) {
    let area = alpha * grid.cells() as f64;
    ((area * aspect).sqrt(), (area / aspect).sqrt())
}

/// Sample one region, returning the trace of the accepted draw.
pub fn sample_region_traced(
    rng: &mut impl Rng,
    grid: GridShape,
    cfg: &PerturbationConfig,
) -> Result<(Region, SampleTrace)> {
    grid.validate()?;
    cfg.validate()?;
    for attempt in 1..=cfg.max_rejection_attempts {
        let (alpha, aspect) = draw_alpha_aspect(rng, cfg);
        let (target_h, target_w) = target_dims(grid, alpha, aspect);
        let h = round_dim(target_h, grid.height);
        let w = round_dim(target_w, grid.width);
        let x = rng.random_range(0..grid.width);
        let y = rng.random_range(0..grid.height);
        let region = Region { x, y, w, h };
        if region.fits(grid) {
            let trace = SampleTrace {
                alpha,
                aspect,
                target_h,
                target_w,
                attempts: attempt,
            };
            return Ok((region, trace));
        }
    }
    Err(Error::SamplingExhausted {
        attempts: cfg.max_rejection_attempts,
    })
}

/// Sample one region on the grid.
pub fn sample_region(
    rng: &mut impl Rng,
    grid: GridShape,
    cfg: &PerturbationConfig,
) -> Result<Region> {
    sample_region_traced(rng, grid, cfg).map(|(r, _)| r)
}

fn place(rng: &mut impl Rng, grid: GridShape, w: usize, h: usize, attempts: u32) -> Result<Region> {
    for _ in 0..attempts {
        let x = rng.random_range(0..grid.width);
        let y = rng.random_range(0..grid.height);
        let region = Region { x, y, w, h };
        if region.fits(grid) {
            return Ok(region);
        }
    }
    Err(Error::SamplingExhausted { attempts })
}

/// Sample a source/destination pair sharing one (w, h). A single
/// proportion/aspect draw fixes the shape; the two placements are drawn
/// independently and may overlap or coincide.
pub fn sample_transform_pair(
    rng: &mut impl Rng,
    grid: GridShape,
    cfg: &PerturbationConfig,
) -> Result<(Region, Region)> {
    grid.validate()?;
    cfg.validate()?;
    let (alpha, aspect) = draw_alpha_aspect(rng, cfg);
    let (target_h, target_w) = target_dims(grid, alpha, aspect);
    let h = round_dim(target_h, grid.height);
    let w = round_dim(target_w, grid.width);
    let src = place(rng, grid, w, h, cfg.max_rejection_attempts)?;
    let dst = place(rng, grid, w, h, cfg.max_rejection_attempts)?;
    Ok((src, dst))
}

/// Sample the full region set for one mini-batch.
pub fn sample_batch_regions(
    rng: &mut impl Rng,
    grid: GridShape,
    cfg: &PerturbationConfig,
) -> Result<RegionSet> {
    let erase = sample_region(rng, grid, cfg)?;
    let (transform_src, transform_dst) = sample_transform_pair(rng, grid, cfg)?;
    let noise = sample_region(rng, grid, cfg)?;
    Ok(RegionSet {
        erase,
        transform_src,
        transform_dst,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive_rng, stream};
    use proptest::prelude::*;

    fn forced(area: f64, aspect: f64) -> PerturbationConfig {
        PerturbationConfig {
            area_min: area,
            area_max: area,
            aspect_min: aspect,
            aspect_max: aspect,
            ..Default::default()
        }
    }

    #[test]
    fn rounding_small_proportion() {
        // 16x8 grid, alpha 0.02, aspect 1: target 1.6 rounds to 2x2.
        let grid = GridShape::new(16, 8);
        let mut rng = derive_rng(0, stream::REGION, 0);
        let r = sample_region(&mut rng, grid, &forced(0.02, 1.0)).unwrap();
        assert_eq!((r.w, r.h), (2, 2));
        assert!(r.fits(grid));
    }

    #[test]
    fn rounding_large_proportion() {
        // alpha 0.4: target sqrt(51.2) ~ 7.16 rounds to 7x7.
        let grid = GridShape::new(16, 8);
        let mut rng = derive_rng(1, stream::REGION, 0);
        let r = sample_region(&mut rng, grid, &forced(0.4, 1.0)).unwrap();
        assert_eq!((r.w, r.h), (7, 7));
        assert!(r.fits(grid));
    }

    #[test]
    fn exact_transform_shape() {
        // alpha 0.125 on 128 cells: exactly 4x4 for both regions.
        let grid = GridShape::new(16, 8);
        let mut rng = derive_rng(2, stream::REGION, 0);
        let (src, dst) = sample_transform_pair(&mut rng, grid, &forced(0.125, 1.0)).unwrap();
        assert_eq!((src.w, src.h), (4, 4));
        assert_eq!((dst.w, dst.h), (4, 4));
    }

    #[test]
    fn unit_grid_only_placement() {
        let grid = GridShape::new(1, 1);
        let mut rng = derive_rng(3, stream::REGION, 0);
        let r = sample_region(&mut rng, grid, &PerturbationConfig::default()).unwrap();
        assert_eq!(
            r,
            Region {
                x: 0,
                y: 0,
                w: 1,
                h: 1
            }
        );
    }

    #[test]
    fn tiny_grid_transform_pair() {
        let grid = GridShape::new(2, 2);
        let cfg = forced(0.02, 1.0);
        let mut rng = derive_rng(4, stream::REGION, 0);
        let (src, dst) = sample_transform_pair(&mut rng, grid, &cfg).unwrap();
        assert_eq!((src.w, src.h), (dst.w, dst.h));
        assert!(src.fits(grid) && dst.fits(grid));
    }

    #[test]
    fn deterministic_under_seed() {
        let grid = GridShape::new(16, 8);
        let cfg = PerturbationConfig::default();
        let a = sample_batch_regions(&mut derive_rng(9, stream::REGION, 5), grid, &cfg).unwrap();
        let b = sample_batch_regions(&mut derive_rng(9, stream::REGION, 5), grid, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seeds_produce_distinct_sets() {
        let grid = GridShape::new(16, 8);
        let cfg = PerturbationConfig::default();
        let mut distinct = std::collections::HashSet::new();
        for seed in 0..100u64 {
            let set =
                sample_batch_regions(&mut derive_rng(seed, stream::REGION, 0), grid, &cfg).unwrap();
            distinct.insert(format!("{set:?}"));
        }
        assert!(distinct.len() >= 99, "only {} distinct sets", distinct.len());
    }

    #[test]
    fn trace_bounds_and_fixed_area() {
        let grid = GridShape::new(16, 8);
        let cfg = PerturbationConfig::default();
        let mut rng = derive_rng(11, stream::REGION, 0);
        for _ in 0..2000 {
            let (_, t) = sample_region_traced(&mut rng, grid, &cfg).unwrap();
            assert!(t.alpha >= cfg.area_min && t.alpha <= cfg.area_max);
            assert!(t.aspect >= cfg.aspect_min && t.aspect <= cfg.aspect_max);
        }
        let fixed = PerturbationConfig {
            fixed_mode: true,
            ..Default::default()
        };
        for _ in 0..200 {
            let (_, t) = sample_region_traced(&mut rng, grid, &fixed).unwrap();
            let target_area = t.target_h * t.target_w;
            let want = fixed.fixed_area * grid.cells() as f64;
            assert!((target_area - want).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_grid_rejected() {
        let mut rng = derive_rng(0, stream::REGION, 0);
        let err = sample_region(&mut rng, GridShape::new(0, 4), &PerturbationConfig::default());
        assert!(matches!(err, Err(Error::GridTooSmall { .. })));
    }

    proptest! {
        #[test]
        fn sampled_regions_always_contained(
            seed in 0u64..500,
            h in 1usize..24,
            w in 1usize..24,
        ) {
            let grid = GridShape::new(h, w);
            let cfg = PerturbationConfig::default();
            let mut rng = derive_rng(seed, stream::REGION, 1);
            // exhaustion is a legal (rare) outcome on awkward grids; every
            // returned region must be contained
            match sample_batch_regions(&mut rng, grid, &cfg) {
                Ok(set) => {
                    prop_assert!(set.erase.fits(grid));
                    prop_assert!(set.transform_src.fits(grid));
                    prop_assert!(set.transform_dst.fits(grid));
                    prop_assert!(set.noise.fits(grid));
                    prop_assert_eq!(
                        (set.transform_src.w, set.transform_src.h),
                        (set.transform_dst.w, set.transform_dst.h)
                    );
                }
                Err(Error::SamplingExhausted { .. }) => {}
                Err(e) => return Err(proptest::test_runner::TestCaseError::fail(format!("{e}"))),
            }
        }
    }
}
