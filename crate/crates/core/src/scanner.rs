//! Synthetic confocal scan rendering and per-spot statistics.
//!
//! Rendering collapses the depth axis: defects sit within a few tens of nm
//! of the surface, far below the lateral PSF width, so the image is a 2-D
//! sum of isotropic Gaussian PSFs over a uniform background. Pixel counts
//! are Poisson with per-pixel substreams, so rendering order never affects
//! the result.

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::implantation::DefectMap;
use crate::rng::substream;

/// Rendered scan: row-major counts, pixel (ix, iy) covering
/// `origin + [ix, ix+1) * pixel_size` in x and likewise in y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u32>,
    pub pixel_size_nm: f64,
    pub dwell_ms: f64,
    /// World position of the (0, 0) pixel corner, nm.
    pub origin_xy: (f64, f64),
}

impl ScanImage {
    pub fn at(&self, ix: usize, iy: usize) -> u32 {
        self.pixels[iy * self.width + ix]
    }

    /// World coordinates of a pixel center.
    pub fn pixel_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin_xy.0 + (ix as f64 + 0.5) * self.pixel_size_nm,
            self.origin_xy.1 + (iy as f64 + 0.5) * self.pixel_size_nm,
        )
    }

    pub fn total_counts(&self) -> u64 {
        self.pixels.iter().map(|&c| u64::from(c)).sum()
    }
}

/// Per-spot statistics extracted from a scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotStat {
    pub spot_id: u32,
    /// Intensity-weighted centroid, nm.
    pub centroid_xy: (f64, f64),
    /// Background-subtracted window rate, kcps.
    pub integrated_kcps: f64,
    /// Defect-number estimate; absent until classification.
    pub estimated_k: Option<u32>,
}

/// Renders the expected-count field of the defect map and Poisson-samples
/// each pixel. Expected counts per pixel are
/// `dwell * (background + sum_defects rate * PSF(pixel center - defect))`
/// with the PSF an isotropic 2-D Gaussian density integrating to one over
/// the plane, so one defect contributes `dwell * per_defect_kcps` counts
/// to the whole image.
pub fn render_scan(
    defects: &DefectMap,
    psf_sigma_nm: f64,
    per_defect_kcps: f64,
    background_kcps_per_px: f64,
    dwell_ms: f64,
    pixel_size_nm: f64,
    seed: u64,
) -> Result<ScanImage> {
    for (name, v) in [
        ("psf_sigma_nm", psf_sigma_nm),
        ("per_defect_kcps", per_defect_kcps),
        ("dwell_ms", dwell_ms),
        ("pixel_size_nm", pixel_size_nm),
    ] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("{name} must be > 0, got {v}")));
        }
    }
    if !(background_kcps_per_px >= 0.0) {
        return Err(Error::invalid("background must be >= 0"));
    }

    // Frame the defect cloud with a 4-sigma margin; an empty map still
    // renders a small background-only frame.
    let (origin, width, height) = if defects.defects.is_empty() {
        ((0.0, 0.0), 32usize, 32usize)
    } else {
        let mut min_x = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for d in &defects.defects {
            min_x = min_x.min(d.position_xyz.0);
            max_x = max_x.max(d.position_xyz.0);
            min_y = min_y.min(d.position_xyz.1);
            max_y = max_y.max(d.position_xyz.1);
        }
        let pad = 4.0 * psf_sigma_nm + 2.0 * pixel_size_nm;
        let origin = (min_x - pad, min_y - pad);
        let width = ((max_x + pad - origin.0) / pixel_size_nm).ceil() as usize + 1;
        let height = ((max_y + pad - origin.1) / pixel_size_nm).ceil() as usize + 1;
        (origin, width.max(1), height.max(1))
    };

    let mut expected = vec![background_kcps_per_px * dwell_ms; width * height];

    let norm = pixel_size_nm * pixel_size_nm
        / (2.0 * std::f64::consts::PI * psf_sigma_nm * psf_sigma_nm);
    let amp = per_defect_kcps * dwell_ms * norm;
    let reach = (5.0 * psf_sigma_nm / pixel_size_nm).ceil() as i64;
    let inv_two_sigma2 = 1.0 / (2.0 * psf_sigma_nm * psf_sigma_nm);
    for d in &defects.defects {
        let cx = (d.position_xyz.0 - origin.0) / pixel_size_nm - 0.5;
        let cy = (d.position_xyz.1 - origin.1) / pixel_size_nm - 0.5;
        let ix0 = ((cx - reach as f64).floor() as i64).max(0);
        let ix1 = ((cx + reach as f64).ceil() as i64).min(width as i64 - 1);
        let iy0 = ((cy - reach as f64).floor() as i64).max(0);
        let iy1 = ((cy + reach as f64).ceil() as i64).min(height as i64 - 1);
        for iy in iy0..=iy1 {
            let dy = (iy as f64 - cy) * pixel_size_nm;
            for ix in ix0..=ix1 {
                let dx = (ix as f64 - cx) * pixel_size_nm;
                expected[iy as usize * width + ix as usize] +=
                    amp * (-(dx * dx + dy * dy) * inv_two_sigma2).exp();
            }
        }
    }

    let mut pixels = vec![0u32; width * height];
    for (i, (&mu, px)) in expected.iter().zip(pixels.iter_mut()).enumerate() {
        if mu > 0.0 {
            let mut rng = substream(seed, "scan_pixel", i as u64);
            *px = Poisson::new(mu).expect("positive mean").sample(&mut rng) as u32;
        }
    }

    Ok(ScanImage {
        width,
        height,
        pixels,
        pixel_size_nm,
        dwell_ms,
        origin_xy: origin,
    })
}

/// Sigma-clipped background mean and std; the std is floored at the
/// Poisson expectation sqrt(mean) so sparse images cannot collapse the
/// threshold.
fn background_stats(pixels: &[u32]) -> (f64, f64) {
    let mut kept: Vec<f64> = pixels.iter().map(|&c| f64::from(c)).collect();
    let mut mean = 0.0;
    let mut std = 0.0;
    for _ in 0..5 {
        let n = kept.len() as f64;
        if n == 0.0 {
            break;
        }
        mean = kept.iter().sum::<f64>() / n;
        let var = kept.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        std = var.sqrt();
        let cut = mean + 3.0 * std;
        let before = kept.len();
        kept.retain(|&v| v <= cut);
        if kept.len() == before {
            break;
        }
    }
    (mean, std.max(mean.max(0.0).sqrt()))
}

/// Local-maximum spot detection.
///
/// A pixel qualifies when it strictly exceeds its 8 neighbors and clears
/// `bg_mean + threshold_sigma * bg_std`, and its integration window sum
/// clears the same significance on the window scale. Surviving candidates
/// are accepted brightest-first; any candidate within `min_separation_nm`
/// of an accepted one merges into it. Centroids are intensity-weighted
/// window means; ids count accepted spots in raster order.
pub fn detect_spots(
    image: &ScanImage,
    threshold_sigma: f64,
    min_separation_nm: f64,
) -> Result<Vec<SpotStat>> {
    if !(threshold_sigma > 0.0) || !(min_separation_nm > 0.0) {
        return Err(Error::invalid("threshold and separation must be > 0"));
    }
    if image.pixels.len() != image.width * image.height {
        return Err(Error::invalid("image buffer does not match dimensions"));
    }
    let (bg_mean, bg_std) = background_stats(&image.pixels);
    let pixel_thresh = bg_mean + threshold_sigma * bg_std;
    let w = image.width as i64;
    let h = image.height as i64;
    let win = ((min_separation_nm / (2.0 * image.pixel_size_nm)).floor() as i64).max(1);

    let mut candidates: Vec<(u32, i64, i64)> = Vec::new();
    for iy in 0..h {
        for ix in 0..w {
            let v = image.at(ix as usize, iy as usize);
            if f64::from(v) <= pixel_thresh {
                continue;
            }
            let mut is_max = true;
            'nb: for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (ix + dx, iy + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    if image.at(nx as usize, ny as usize) >= v {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if !is_max {
                continue;
            }
            // Window significance gate.
            let (sum, n_win) = window_sum(image, ix, iy, win);
            let excess = sum - n_win * bg_mean;
            if excess > threshold_sigma * n_win.sqrt() * bg_std {
                candidates.push((v, ix, iy));
            }
        }
    }

    // Brightest first; ties broken by raster position for determinism.
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.2.cmp(&b.2)).then(a.1.cmp(&b.1)));
    let min_sep2 = min_separation_nm * min_separation_nm;
    let mut accepted: Vec<(i64, i64)> = Vec::new();
    for &(_, ix, iy) in &candidates {
        let (px, py) = image.pixel_center(ix as usize, iy as usize);
        let close = accepted.iter().any(|&(ax, ay)| {
            let (qx, qy) = image.pixel_center(ax as usize, ay as usize);
            (px - qx).powi(2) + (py - qy).powi(2) < min_sep2
        });
        if !close {
            accepted.push((ix, iy));
        }
    }
    accepted.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut stats = Vec::with_capacity(accepted.len());
    for (id, &(ix, iy)) in accepted.iter().enumerate() {
        let (sum, n_win) = window_sum(image, ix, iy, win);
        let excess = (sum - n_win * bg_mean).max(0.0);
        // Intensity-weighted centroid over the same window.
        let mut wx = 0.0;
        let mut wy = 0.0;
        let mut wsum = 0.0;
        for ny in (iy - win).max(0)..=(iy + win).min(h - 1) {
            for nx in (ix - win).max(0)..=(ix + win).min(w - 1) {
                let weight =
                    (f64::from(image.at(nx as usize, ny as usize)) - bg_mean).max(0.0);
                let (cx, cy) = image.pixel_center(nx as usize, ny as usize);
                wx += weight * cx;
                wy += weight * cy;
                wsum += weight;
            }
        }
        let centroid = if wsum > 0.0 {
            (wx / wsum, wy / wsum)
        } else {
            image.pixel_center(ix as usize, iy as usize)
        };
        stats.push(SpotStat {
            spot_id: id as u32,
            centroid_xy: centroid,
            integrated_kcps: excess / image.dwell_ms,
            estimated_k: None,
        });
    }
    Ok(stats)
}

fn window_sum(image: &ScanImage, ix: i64, iy: i64, win: i64) -> (f64, f64) {
    let w = image.width as i64;
    let h = image.height as i64;
    let mut sum = 0.0;
    let mut n = 0.0;
    for ny in (iy - win).max(0)..=(iy + win).min(h - 1) {
        for nx in (ix - win).max(0)..=(ix + win).min(w - 1) {
            sum += f64::from(image.at(nx as usize, ny as usize));
            n += 1.0;
        }
    }
    (sum, n)
}

/// Arithmetic mean of the integrated rates.
pub fn mean_counts_per_spot(stats: &[SpotStat]) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::invalid("no spots to average"));
    }
    Ok(stats.iter().map(|s| s.integrated_kcps).sum::<f64>() / stats.len() as f64)
}

/// Estimates the defect number of each spot as
/// `round(rate / unit_brightness)` (half away from zero), floored at 0.
pub fn classify_defect_number(
    stats: &[SpotStat],
    unit_brightness_kcps: f64,
) -> Result<Vec<SpotStat>> {
    if !(unit_brightness_kcps > 0.0) {
        return Err(Error::invalid("unit brightness must be > 0"));
    }
    Ok(stats
        .iter()
        .map(|s| {
            let k = (s.integrated_kcps / unit_brightness_kcps).round().max(0.0);
            SpotStat {
                estimated_k: Some(k as u32),
                ..*s
            }
        })
        .collect())
}
