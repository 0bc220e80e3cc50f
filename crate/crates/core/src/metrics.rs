//! Disparity error metrics and forward evaluation of the training loss.
//!
//! Every metric ignores pixels whose mask entry is false.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::DisparityFile;
use crate::tensor::Tensor;

/// Weight of the coarse-disparity term of the loss.
pub const LAMBDA_COARSE: f64 = 0.3;
/// Weight of the full-resolution term of the loss.
pub const LAMBDA_FULL: f64 = 1.0;
/// Fixed outlier threshold of Bad 3.0, and the floor of the D1 threshold.
pub const BAD_THRESHOLD: f32 = 3.0;
/// Ground-truth-relative part of the D1 threshold.
pub const D1_RELATIVE: f32 = 0.05;

fn check(pred: &[f32], gt: &[f32], mask: &[bool]) -> Result<usize> {
    if pred.len() != gt.len() || mask.len() != gt.len() {
        return Err(Error::shape(
            "metrics",
            format!("prediction {}, ground truth {}, mask {} pixels", pred.len(), gt.len(), mask.len()),
        ));
    }
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::EmptyMask),
        n => Ok(n),
    }
}

fn errors<'a>(pred: &'a [f32], gt: &'a [f32], mask: &'a [bool]) -> impl Iterator<Item = (f32, f32)> + 'a {
    pred.iter().zip(gt).zip(mask).filter(|(_, &m)| m).map(|((&p, &g), _)| ((p - g).abs(), g))
}

fn is_d1_outlier(err: f32, gt: f32) -> bool {
    err > BAD_THRESHOLD.max(D1_RELATIVE * gt)
}

/// Mean absolute error.
pub fn epe(pred: &[f32], gt: &[f32], mask: &[bool]) -> Result<f64> {
    let n = check(pred, gt, mask)?;
    Ok(errors(pred, gt, mask).map(|(e, _)| e as f64).sum::<f64>() / n as f64)
}

/// Percentage of pixels with error strictly above `threshold`.
pub fn bad_n(pred: &[f32], gt: &[f32], mask: &[bool], threshold: f32) -> Result<f64> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidArgument(format!("outlier threshold must be positive, got {threshold}")));
    }
    let n = check(pred, gt, mask)?;
    Ok(100.0 * errors(pred, gt, mask).filter(|&(e, _)| e > threshold).count() as f64 / n as f64)
}

/// Percentage of pixels with error above `max(3, 0.05 * gt)`.
pub fn d1(pred: &[f32], gt: &[f32], mask: &[bool]) -> Result<f64> {
    let n = check(pred, gt, mask)?;
    Ok(100.0 * errors(pred, gt, mask).filter(|&(e, g)| is_d1_outlier(e, g)).count() as f64 / n as f64)
}

/// Order-independent running totals; merge per-file tallies to aggregate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct MetricTally {
    pub abs_error_sum: f64,
    pub bad3: usize,
    pub d1: usize,
    pub evaluated: usize,
    pub valid: usize,
}

impl MetricTally {
    /// Tallies pixels that are valid in the ground truth and, if given, in
    /// the region mask.
    pub fn measure(pred: &[f32], gt: &DisparityFile, region: Option<&[bool]>) -> Result<Self> {
        let mut mask = gt.mask.clone();
        if let Some(r) = region {
            if r.len() != mask.len() {
                return Err(Error::shape("metrics", format!("region mask {} vs {} pixels", r.len(), mask.len())));
            }
            mask.iter_mut().zip(r).for_each(|(m, &r)| *m &= r);
        }
        check(pred, &gt.values, &mask)?;
        let mut t = MetricTally { valid: gt.valid_count(), ..Default::default() };
        for (e, g) in errors(pred, &gt.values, &mask) {
            t.abs_error_sum += e as f64;
            t.bad3 += (e > BAD_THRESHOLD) as usize;
            t.d1 += is_d1_outlier(e, g) as usize;
            t.evaluated += 1;
        }
        Ok(t)
    }

    pub fn merge(&mut self, other: &MetricTally) {
        self.abs_error_sum += other.abs_error_sum;
        self.bad3 += other.bad3;
        self.d1 += other.d1;
        self.evaluated += other.evaluated;
        self.valid += other.valid;
    }

    pub fn report(&self, region: Option<&str>) -> Result<MetricReport> {
        if self.evaluated == 0 {
            return Err(Error::EmptyMask);
        }
        let n = self.evaluated as f64;
        Ok(MetricReport {
            epe: self.abs_error_sum / n,
            bad3: 100.0 * self.bad3 as f64 / n,
            d1: 100.0 * self.d1 as f64 / n,
            valid: self.valid,
            evaluated: self.evaluated,
            region: region.map(str::to_string),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    /// Mean absolute error in pixels.
    pub epe: f64,
    /// Percent of pixels with error above 3 px.
    pub bad3: f64,
    /// Percent of pixels with error above `max(3 px, 5 %)`.
    pub d1: f64,
    pub valid: usize,
    pub evaluated: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub region: Option<String>,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "name,epe,bad3,d1,valid,evaluated";

    pub fn csv_row(&self, name: &str) -> String {
        format!("{name},{},{},{},{},{}", self.epe, self.bad3, self.d1, self.valid, self.evaluated)
    }
}

/// Evaluates one prediction against ground truth.
pub fn evaluate(pred: &[f32], gt: &DisparityFile, region: Option<(&str, &[bool])>) -> Result<MetricReport> {
    MetricTally::measure(pred, gt, region.map(|r| r.1))?.report(region.map(|r| r.0))
}

/// `0.5 x^2` below 1 in magnitude, `|x| - 0.5` above.
pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * a * a
    } else {
        a - 0.5
    }
}

/// Ground truth on the quarter grid: mean of the valid pixels in each 4x4
/// cell, divided by 4. Cells without valid pixels are invalid.
pub fn downsample_ground_truth(gt: &DisparityFile) -> DisparityFile {
    let (w, h) = (gt.width.div_ceil(4), gt.height.div_ceil(4));
    let mut sum = vec![0.0f64; w * h];
    let mut count = vec![0usize; w * h];
    for y in 0..gt.height {
        for x in 0..gt.width {
            let i = y * gt.width + x;
            if gt.mask[i] {
                let c = (y / 4) * w + x / 4;
                sum[c] += gt.values[i] as f64;
                count[c] += 1;
            }
        }
    }
    let values = sum.iter().zip(&count).map(|(&s, &n)| if n > 0 { (s / n as f64 / 4.0) as f32 } else { 0.0 }).collect();
    let mask = count.iter().map(|&n| n > 0).collect();
    DisparityFile::new(w, h, values, mask).expect("quarter grid is non-empty")
}

fn mean_smooth_l1(pred: &Tensor, gt: &DisparityFile, what: &str) -> Result<f64> {
    let s = pred.shape();
    if (s.h, s.w) != (gt.height, gt.width) || s.c != 1 {
        return Err(Error::shape("smooth_l1_total", format!("{what} {s} vs ground truth {}x{}", gt.width, gt.height)));
    }
    let n = check(pred.plane(0, 0), &gt.values, &gt.mask)?;
    let total: f64 = pred
        .plane(0, 0)
        .iter()
        .zip(&gt.values)
        .zip(&gt.mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &g), _)| smooth_l1(p as f64 - g as f64))
        .sum();
    Ok(total / n as f64)
}

/// `λ0 * SL1(d0 - gt↓) + λ1 * SL1(d1 - gt)`, each term averaged over its
/// valid pixels.
pub fn smooth_l1_total(d0: &Tensor, d1: &Tensor, gt: &DisparityFile, lambda0: f64, lambda1: f64) -> Result<f64> {
    let coarse = mean_smooth_l1(d0, &downsample_ground_truth(gt), "coarse disparity")?;
    let full = mean_smooth_l1(d1, gt, "disparity")?;
    Ok(lambda0 * coarse + lambda1 * full)
}
