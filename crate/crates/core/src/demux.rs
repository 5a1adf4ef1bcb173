//! Parity demultiplexing of interleaved print/vein captures.
//!
//! Frames are numbered from the first detected frame. With parity offset
//! `p`, frame `k` is a print frame iff `(k + p) % 2 == 0`.

use serde::{Deserialize, Serialize};

use crate::raster::{mean_of_frames, rasterize, rasterize_raw, usable_frames, RasterParams, SyncModel};
use crate::{Error, GrayImage, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DemuxResult {
    pub print_image: GrayImage,
    pub vein_image: GrayImage,
    pub n_print: usize,
    pub n_vein: usize,
    pub parity_offset: u8,
}

/// Splits up to `2 * frames_to_average` leading frames by parity and
/// averages each group.
pub fn demux(env: &[f64], sync: &SyncModel, params: &RasterParams, parity_offset: u8) -> Result<DemuxResult> {
    if parity_offset > 1 {
        return Err(Error::InvalidArgument(format!("parity offset must be 0 or 1, got {parity_offset}")));
    }
    let total = usable_frames(env, sync, params).min(2 * params.frames_to_average);
    if total < 2 {
        return Err(Error::TooFewFrames { needed: 2, found: total });
    }
    let (print, vein): (Vec<usize>, Vec<usize>) =
        (0..total).partition(|k| (k + parity_offset as usize).is_multiple_of(2));
    Ok(DemuxResult {
        print_image: mean_of_frames(env, sync, params, &print)?,
        vein_image: mean_of_frames(env, sync, params, &vein)?,
        n_print: print.len(),
        n_vein: vein.len(),
        parity_offset,
    })
}

fn sq_dist(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.same_dims(b)?;
    Ok(a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).powi(2)).sum())
}

/// Error of the crossed pairing: `||ref_print - vein||² + ||ref_vein - print||²`.
pub fn misalignment_error(result: &DemuxResult, ref_print: &GrayImage, ref_vein: &GrayImage) -> Result<f64> {
    Ok(sq_dist(ref_print, &result.vein_image)? + sq_dist(ref_vein, &result.print_image)?)
}

/// Error of the straight pairing, the counterpart of [`misalignment_error`].
pub fn aligned_error(result: &DemuxResult, ref_print: &GrayImage, ref_vein: &GrayImage) -> Result<f64> {
    Ok(sq_dist(ref_print, &result.print_image)? + sq_dist(ref_vein, &result.vein_image)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParityDecision {
    pub parity_offset: u8,
    /// Relative excess of the mean squared difference between adjacent
    /// frames over that between frames two apart.
    pub variance_gap: f64,
    /// Set when the grouping or the labeling is ambiguous.
    pub warning: bool,
}

/// Minimum relative variance gap below which the grouping is flagged.
pub const PARITY_GAP_WARNING: f64 = 0.05;

/// Infers which parity carries print frames.
///
/// Grouping by parity is accepted when frames two apart resemble each other
/// more than adjacent frames do. Since both parity offsets give the same
/// grouping, the label comes from raw amplitude texture: the group whose
/// envelope varies more between neighboring pixels is taken to be print,
/// since creases are finer and sharper than vessels.
pub fn auto_parity(env: &[f64], sync: &SyncModel, params: &RasterParams) -> Result<ParityDecision> {
    let total = usable_frames(env, sync, params).min(2 * params.frames_to_average.max(2));
    if total < 4 {
        return Err(Error::TooFewFrames { needed: 4, found: total });
    }
    let norm: Vec<Vec<f64>> = (0..total)
        .map(|k| rasterize(env, sync, params, k).map(GrayImage::into_pixels))
        .collect::<Result<_>>()?;
    let msd = |a: &[f64], b: &[f64]| {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
    };
    let adjacent = (0..total - 1).map(|k| msd(&norm[k], &norm[k + 1])).sum::<f64>() / (total - 1) as f64;
    let same = (0..total - 2).map(|k| msd(&norm[k], &norm[k + 2])).sum::<f64>() / (total - 2) as f64;
    let variance_gap = if adjacent > 0.0 { (adjacent - same) / adjacent } else { 0.0 };

    let (w, h) = (params.out_width, params.out_height);
    let mut spread = [0.0f64; 2];
    for k in 0..total {
        let raw = rasterize_raw(env, sync, params, k)?;
        spread[k % 2] += fine_variation(&raw, w, h);
    }
    let (even, odd) = (spread[0] / total.div_ceil(2) as f64, spread[1] / (total / 2) as f64);
    let tie = (even - odd).abs() <= 1e-9 * even.max(odd).max(f64::MIN_POSITIVE);
    Ok(ParityDecision {
        parity_offset: if tie || even > odd { 0 } else { 1 },
        variance_gap,
        warning: tie || variance_gap < PARITY_GAP_WARNING,
    })
}

/// Mean absolute difference between horizontally and vertically adjacent
/// pixels of an un-normalized raster.
fn fine_variation(raw: &[f64], w: usize, h: usize) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if c + 1 < w {
                sum += (raw[i + 1] - raw[i]).abs();
                n += 1;
            }
            if r + 1 < h {
                sum += (raw[i + w] - raw[i]).abs();
                n += 1;
            }
        }
    }
    if n == 0 { 0.0 } else { sum / n as f64 }
}
