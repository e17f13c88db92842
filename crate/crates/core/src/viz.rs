//! Small raster helpers: bilinear upsampling, a jet-style colormap, alpha
//! blending, and a minimal CMC line plot. No plotting framework; everything
//! is drawn straight into RGB buffers and written as PNG.

use crate::error::{Error, Result};
use ndarray::{Array2, Array3};
use std::path::Path;

/// Bilinear upsample of a (h, w) map to (out_h, out_w).
pub fn bilinear_upsample(map: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = map.dim();
    let mut out = Array2::zeros((out_h, out_w));
    for oy in 0..out_h {
        for ox in 0..out_w {
            // align corners = false convention
            let fy = ((oy as f64 + 0.5) * h as f64 / out_h as f64 - 0.5)
                .clamp(0.0, (h - 1) as f64);
            let fx = ((ox as f64 + 0.5) * w as f64 / out_w as f64 - 0.5)
                .clamp(0.0, (w - 1) as f64);
            let y0 = fy.floor() as usize;
            let x0 = fx.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let dy = fy - y0 as f64;
            let dx = fx - x0 as f64;
            out[[oy, ox]] = map[[y0, x0]] * (1.0 - dy) * (1.0 - dx)
                + map[[y0, x1]] * (1.0 - dy) * dx
                + map[[y1, x0]] * dy * (1.0 - dx)
                + map[[y1, x1]] * dy * dx;
        }
    }
    out
}

/// Jet-style colormap over [0, 1].
pub fn colormap_jet(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (1.5 - (4.0 * v - 3.0).abs()).clamp(0.0, 1.0);
    let g = (1.5 - (4.0 * v - 2.0).abs()).clamp(0.0, 1.0);
    let b = (1.5 - (4.0 * v - 1.0).abs()).clamp(0.0, 1.0);
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

/// Blend a [0,1] heat field over an RGB image with the given alpha.
pub fn blend_heat_over(image: &Array3<u8>, heat: &Array2<f64>, alpha: f64) -> Array3<u8> {
    let (h, w, _) = image.dim();
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let color = colormap_jet(heat[[y, x]]);
            for ch in 0..3 {
                let v = alpha * color[ch] as f64 + (1.0 - alpha) * image[[y, x, ch]] as f64;
                out[[y, x, ch]] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

pub fn save_rgb(image: &Array3<u8>, path: &Path) -> Result<()> {
    let (h, w, _) = image.dim();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            img.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([image[[y, x, 0]], image[[y, x, 1]], image[[y, x, 2]]]),
            );
        }
    }
    img.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Plot a CMC curve (rank on x, match rate on y) to a PNG.
pub fn save_cmc_plot(cmc: &[f64], path: &Path) -> Result<()> {
    let (w, h) = (480usize, 320usize);
    let margin = 40usize;
    let mut img = Array3::<u8>::from_elem((h, w, 3), 255);
    let plot_w = w - 2 * margin;
    let plot_h = h - 2 * margin;
    // axes
    for x in margin..w - margin {
        for ch in 0..3 {
            img[[h - margin, x, ch]] = 0;
        }
    }
    for y in margin..h - margin + 1 {
        for ch in 0..3 {
            img[[y, margin, ch]] = 0;
        }
    }
    // gridlines at 0.25 steps
    for i in 1..4 {
        let y = h - margin - plot_h * i / 4;
        for x in margin..w - margin {
            for ch in 0..3 {
                img[[y, x, ch]] = 220;
            }
        }
    }
    if !cmc.is_empty() {
        let to_px = |k: usize, v: f64| -> (usize, usize) {
            let x = margin
                + if cmc.len() == 1 {
                    0
                } else {
                    plot_w * k / (cmc.len() - 1)
                };
            let y = h - margin - (v.clamp(0.0, 1.0) * plot_h as f64) as usize;
            (x, y)
        };
        let mut prev = to_px(0, cmc[0]);
        for (k, &v) in cmc.iter().enumerate().skip(1) {
            let cur = to_px(k, v);
            draw_line(&mut img, prev, cur, [30, 60, 200]);
            prev = cur;
        }
        for (k, &v) in cmc.iter().enumerate() {
            let (x, y) = to_px(k, v);
            for dy in -1i32..=1 {
                for dx in -1i32..=1 {
                    let yy = (y as i32 + dy).clamp(0, h as i32 - 1) as usize;
                    let xx = (x as i32 + dx).clamp(0, w as i32 - 1) as usize;
                    img[[yy, xx, 0]] = 30;
                    img[[yy, xx, 1]] = 60;
                    img[[yy, xx, 2]] = 200;
                }
            }
        }
    }
    save_rgb(&img, path)
}

fn draw_line(img: &mut Array3<u8>, from: (usize, usize), to: (usize, usize), color: [u8; 3]) {
    let (x0, y0) = (from.0 as i64, from.1 as i64);
    let (x1, y1) = (to.0 as i64, to.1 as i64);
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for s in 0..=steps {
        let x = x0 + (x1 - x0) * s / steps;
        let y = y0 + (y1 - y0) * s / steps;
        let (h, w, _) = img.dim();
        if (0..h as i64).contains(&y) && (0..w as i64).contains(&x) {
            for ch in 0..3 {
                img[[y as usize, x as usize, ch]] = color[ch];
            }
        }
    }
}
