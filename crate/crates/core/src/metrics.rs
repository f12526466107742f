//! PSNR and SSIM.

use std::io::Write;

use crate::error::{config, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check(x: &Image, reference: &Image, data_range: f64) -> Result<()> {
    x.check_same_dims(reference)?;
    if !(data_range > 0.0) {
        return config(format!("data_range must be positive, got {data_range}"));
    }
    Ok(())
}

/// `10 log10(range^2 / MSE)`; identical images give `+inf`.
pub fn psnr(x: &Image, reference: &Image, data_range: f64) -> Result<f64> {
    psnr_masked(x, reference, data_range, None)
}

/// PSNR over pixels where `mask > 0` (all pixels when `mask` is `None`).
pub fn psnr_masked(
    x: &Image,
    reference: &Image,
    data_range: f64,
    mask: Option<&Image>,
) -> Result<f64> {
    check(x, reference, data_range)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (idx, (a, b)) in x.data().iter().zip(reference.data()).enumerate() {
        if mask.is_none_or(|m| m.data()[idx] > 0.0) {
            sum += (a - b).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return config("PSNR mask selects no pixels");
    }
    if let Some(m) = mask {
        m.check_same_dims(x)?;
    }
    let mse = sum / n as f64;
    Ok(10.0 * (data_range * data_range / mse).log10())
}

/// Mean local SSIM over all valid 7x7 windows with a uniform window and
/// sample (co)variances.
pub fn ssim(x: &Image, reference: &Image, data_range: f64) -> Result<f64> {
    ssim_masked(x, reference, data_range, None)
}

/// SSIM averaged over windows whose center pixel lies in the mask.
pub fn ssim_masked(
    x: &Image,
    reference: &Image,
    data_range: f64,
    mask: Option<&Image>,
) -> Result<f64> {
    check(x, reference, data_range)?;
    let (h, w) = x.dims();
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return config(format!("SSIM needs at least {k}x{k} images, got {h}x{w}"));
    }
    if let Some(m) = mask {
        m.check_same_dims(x)?;
    }
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let np = (k * k) as f64;
    let (xd, yd) = (x.data(), reference.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - k {
        for j in 0..=w - k {
            if let Some(m) = mask {
                if m.get(i + k / 2, j + k / 2) <= 0.0 {
                    continue;
                }
            }
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in 0..k {
                let row = (i + di) * w + j;
                for p in row..row + k {
                    let (a, b) = (xd[p], yd[p]);
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let (mx, my) = (sx / np, sy / np);
            let vx = (sxx - np * mx * mx) / (np - 1.0);
            let vy = (syy - np * my * my) / (np - 1.0);
            let cxy = (sxy - np * mx * my) / (np - 1.0);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    if count == 0 {
        return config("SSIM mask selects no windows");
    }
    Ok(total / count as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MetricReport {
    pub fn new() -> Self {
        MetricReport {
            psnr: Vec::new(),
            ssim: Vec::new(),
        }
    }

    /// Scores one slice against its ground truth, using the ground-truth
    /// maximum as the data range.
    pub fn push(&mut self, x: &Image, truth: &Image, mask: Option<&Image>) -> Result<()> {
        let range = truth.max();
        self.psnr.push(psnr_masked(x, truth, range, mask)?);
        self.ssim.push(ssim_masked(x, truth, range, mask)?);
        Ok(())
    }

    pub fn psnr_summary(&self) -> (f64, f64) {
        mean_std(&self.psnr)
    }

    pub fn ssim_summary(&self) -> (f64, f64) {
        mean_std(&self.ssim)
    }

    /// Appends `run_id,mode,R,metric,mean,std,n` rows.
    pub fn write_rows<W: Write>(
        &self,
        wtr: &mut csv::Writer<W>,
        run_id: &str,
        mode: &str,
        r: f64,
    ) -> Result<()> {
        for (name, vals) in [("psnr", &self.psnr), ("ssim", &self.ssim)] {
            let (m, s) = mean_std(vals);
            wtr.write_record([
                run_id.to_string(),
                mode.to_string(),
                r.to_string(),
                name.to_string(),
                m.to_string(),
                s.to_string(),
                vals.len().to_string(),
            ])?;
        }
        Ok(())
    }
}

impl Default for MetricReport {
    fn default() -> Self {
        Self::new()
    }
}

pub const REPORT_HEADER: [&str; 7] = ["run_id", "mode", "R", "metric", "mean", "std", "n"];
