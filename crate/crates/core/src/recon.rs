//! Iterative reconstruction: wavelet ISTA, plug-and-play denoiser, and
//! content-consistency guided reconstruction with content refinement.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::csmodel::{ContentMap, ContentStyleModel, StyleCode};
use crate::denoiser::Denoiser;
use crate::error::{config, shape, CosmoError, Result};
use crate::image::Image;
use crate::kspace::{dc_step, ComplexImage, ForwardOperator, KSpaceData};
use crate::metrics::psnr;
use crate::phantom::Contrast;

/// Orthonormal multi-level 2-D Haar transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Haar {
    pub levels: usize,
}

impl Haar {
    pub fn new(levels: usize) -> Self {
        Haar { levels }
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        let f = 1usize << self.levels;
        if h % f != 0 || w % f != 0 {
            return shape(format!(
                "{h}x{w} image does not allow {} Haar levels",
                self.levels
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &ComplexImage) -> Result<ComplexImage> {
        let (h, w) = x.dims();
        self.check(h, w)?;
        let mut out = x.clone();
        let d = out.data_mut();
        let (mut hh, mut ww) = (h, w);
        for _ in 0..self.levels {
            step_rows(d, w, hh, ww, false);
            step_cols(d, w, hh, ww, false);
            hh /= 2;
            ww /= 2;
        }
        Ok(out)
    }

    pub fn inverse(&self, x: &ComplexImage) -> Result<ComplexImage> {
        let (h, w) = x.dims();
        self.check(h, w)?;
        let mut out = x.clone();
        let d = out.data_mut();
        for l in (0..self.levels).rev() {
            let (hh, ww) = (h >> l, w >> l);
            step_cols(d, w, hh, ww, true);
            step_rows(d, w, hh, ww, true);
        }
        Ok(out)
    }
}

/// One Haar level on the top-left `hh x ww` block along rows; `stride` is
/// the full image width.
fn step_rows(d: &mut [Complex64], stride: usize, hh: usize, ww: usize, inverse: bool) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut tmp = vec![Complex64::default(); ww];
    for i in 0..hh {
        let row = &mut d[i * stride..i * stride + ww];
        for k in 0..ww / 2 {
            if inverse {
                let (a, b) = (row[k], row[ww / 2 + k]);
                tmp[2 * k] = (a + b) * s;
                tmp[2 * k + 1] = (a - b) * s;
            } else {
                let (a, b) = (row[2 * k], row[2 * k + 1]);
                tmp[k] = (a + b) * s;
                tmp[ww / 2 + k] = (a - b) * s;
            }
        }
        row.copy_from_slice(&tmp);
    }
}

fn step_cols(d: &mut [Complex64], stride: usize, hh: usize, ww: usize, inverse: bool) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut tmp = vec![Complex64::default(); hh];
    for j in 0..ww {
        for k in 0..hh / 2 {
            if inverse {
                let (a, b) = (d[k * stride + j], d[(hh / 2 + k) * stride + j]);
                tmp[2 * k] = (a + b) * s;
                tmp[2 * k + 1] = (a - b) * s;
            } else {
                let (a, b) = (d[2 * k * stride + j], d[(2 * k + 1) * stride + j]);
                tmp[k] = (a + b) * s;
                tmp[hh / 2 + k] = (a - b) * s;
            }
        }
        for (i, v) in tmp.iter().enumerate() {
            d[i * stride + j] = *v;
        }
    }
}

/// `sign(w) max(|w| - lambda, 0)`.
pub fn soft_threshold_real(w: f64, lambda: f64) -> f64 {
    w.signum() * (w.abs() - lambda).max(0.0)
}

/// Magnitude shrinkage keeping the phase.
pub fn soft_threshold(w: Complex64, lambda: f64) -> Complex64 {
    let n = w.norm();
    if n <= lambda {
        Complex64::default()
    } else {
        w * ((n - lambda) / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMode {
    CsWt,
    PnpDenoiser,
    Cosmo,
    CosmoNoCr,
    CosmoOracle,
}

impl ReconMode {
    pub const ALL: [ReconMode; 5] = [
        ReconMode::CsWt,
        ReconMode::PnpDenoiser,
        ReconMode::Cosmo,
        ReconMode::CosmoNoCr,
        ReconMode::CosmoOracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReconMode::CsWt => "cs_wt",
            ReconMode::PnpDenoiser => "pnp_denoiser",
            ReconMode::Cosmo => "cosmo",
            ReconMode::CosmoNoCr => "cosmo_no_cr",
            ReconMode::CosmoOracle => "cosmo_oracle",
        }
    }

    pub fn is_cosmo(self) -> bool {
        matches!(
            self,
            ReconMode::Cosmo | ReconMode::CosmoNoCr | ReconMode::CosmoOracle
        )
    }
}

impl std::str::FromStr for ReconMode {
    type Err = CosmoError;

    fn from_str(s: &str) -> Result<Self> {
        ReconMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| CosmoError::Config(format!("unknown reconstruction mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub mode: ReconMode,
    /// Data-consistency step size.
    pub eta: f64,
    /// Content-refinement step size.
    pub gamma: f64,
    /// Per-iteration factor on `gamma`; 1 keeps it fixed.
    pub gamma_decay: f64,
    /// Wavelet threshold.
    pub lambda: f64,
    pub wavelet_levels: usize,
    /// Average the thresholding over all circular shifts of the wavelet
    /// grid (translation-invariant Haar frame).
    pub cycle_spin: bool,
    pub max_iters: usize,
    /// Stop once `||x_k - x_{k-1}|| / ||x_{k-1}||` drops below this.
    pub tolerance: f64,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            mode: ReconMode::Cosmo,
            eta: 1.0,
            gamma: 0.0,
            gamma_decay: 1.0,
            lambda: 0.005,
            wavelet_levels: 1,
            cycle_spin: true,
            max_iters: 200,
            tolerance: 1e-5,
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.gamma >= 0.0 && self.lambda >= 0.0 && self.gamma_decay > 0.0) {
            return config("eta, gamma and lambda must be >= 0 and gamma_decay > 0");
        }
        if self.max_iters == 0 {
            return config("max_iters must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Magnitude PSNR against the ground truth, when one is given.
    pub psnr: Option<f64>,
    /// `||A x - y||_2`.
    pub residual: f64,
    /// `||c_k - c_{k-1}||_1`.
    pub content_change: f64,
    /// `||s_k - s_{k-1}||_2`.
    pub style_change: f64,
    /// `||A G2(c_{k-1}, s_k) - y||^2` where a content model is used.
    pub cr_objective: Option<f64>,
    /// Wavelet objective `||A r - y||^2 + (2 lambda / eta) ||Psi r||_1` for
    /// the thresholded iterate `r`.
    pub cs_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReconTrace {
    pub records: Vec<TraceRecord>,
}

impl ReconTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "iteration",
            "psnr",
            "residual",
            "content_change",
            "style_change",
            "cr_objective",
            "cs_objective",
        ])?;
        for r in &self.records {
            wtr.write_record([
                r.iteration.to_string(),
                opt(r.psnr),
                r.residual.to_string(),
                r.content_change.to_string(),
                r.style_change.to_string(),
                opt(r.cr_objective),
                opt(r.cs_objective),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: ComplexImage,
    pub trace: ReconTrace,
}

fn relative_change(new: &ComplexImage, old: &ComplexImage) -> f64 {
    let n = old.norm();
    if n == 0.0 {
        if new.norm() == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        new.dist(old) / n
    }
}

fn truth_psnr(x: &ComplexImage, truth: Option<&Image>) -> Result<Option<f64>> {
    truth.map(|t| psnr(&x.magnitude(), t, t.max())).transpose()
}

fn empty_record(iteration: usize) -> TraceRecord {
    TraceRecord {
        iteration,
        psnr: None,
        residual: 0.0,
        content_change: 0.0,
        style_change: 0.0,
        cr_objective: None,
        cs_objective: None,
    }
}

/// Circular shift by `(dy, dx)`.
fn roll(x: &ComplexImage, dy: usize, dx: usize) -> ComplexImage {
    let (h, w) = x.dims();
    let mut out = x.clone();
    let d = out.data_mut();
    for i in 0..h {
        for j in 0..w {
            d[((i + dy) % h) * w + (j + dx) % w] = x.data()[i * w + j];
        }
    }
    out
}

/// Soft-thresholds `x` in the Haar domain, averaged over `shifts x shifts`
/// circular shifts; returns the result and `||Psi r||_1` over the same frame.
fn shrink(x: &ComplexImage, psi: &Haar, shifts: usize, lambda: f64) -> Result<(ComplexImage, f64)> {
    let (h, w) = x.dims();
    let n = (shifts * shifts) as f64;
    let mut acc = ComplexImage::zeros(h, w);
    for dy in 0..shifts {
        for dx in 0..shifts {
            let mut c = psi.forward(&roll(x, dy, dx))?;
            c.data_mut()
                .iter_mut()
                .for_each(|v| *v = soft_threshold(*v, lambda));
            let back = roll(&psi.inverse(&c)?, h - dy, w - dx);
            acc.data_mut()
                .iter_mut()
                .zip(back.data())
                .for_each(|(a, b)| *a += b / n);
        }
    }
    let mut l1 = 0.0;
    for dy in 0..shifts {
        for dx in 0..shifts {
            l1 += psi
                .forward(&roll(&acc, dy, dx))?
                .data()
                .iter()
                .map(|v| v.norm())
                .sum::<f64>()
                / n;
        }
    }
    Ok((acc, l1))
}

/// ISTA with Haar soft-thresholding, starting from the zero-filled image.
pub fn cs_wt_reconstruct(
    y: &KSpaceData,
    a: &ForwardOperator,
    cfg: &ReconConfig,
    truth: Option<&Image>,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let psi = Haar::new(cfg.wavelet_levels);
    let shifts = if cfg.cycle_spin {
        1usize << cfg.wavelet_levels
    } else {
        1
    };
    let mut x = a.adjoint(y)?;
    let mut trace = ReconTrace::default();
    for k in 1..=cfg.max_iters {
        let (r, l1) = shrink(&x, &psi, shifts, cfg.lambda)?;
        let res_r = a.residual_norm(&r, y)?;
        let next = dc_step(&r, a, y, cfg.eta)?;
        let mut rec = empty_record(k);
        rec.psnr = truth_psnr(&next, truth)?;
        rec.residual = a.residual_norm(&next, y)?;
        rec.cs_objective = Some(if cfg.eta > 0.0 {
            res_r * res_r + 2.0 * cfg.lambda / cfg.eta * l1
        } else {
            f64::INFINITY
        });
        trace.records.push(rec);
        let change = relative_change(&next, &x);
        x = next;
        if change < cfg.tolerance {
            break;
        }
    }
    Ok(Reconstruction { image: x, trace })
}

/// Plug-and-play iteration with a denoiser on the magnitude image.
pub fn pnp_denoiser_reconstruct(
    y: &KSpaceData,
    a: &ForwardOperator,
    denoiser: &dyn Denoiser,
    cfg: &ReconConfig,
    truth: Option<&Image>,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let mut x = a.adjoint(y)?;
    let mut trace = ReconTrace::default();
    for k in 1..=cfg.max_iters {
        let z = ComplexImage::rephase(&denoiser.denoise(&x.magnitude())?, &x.phase())?;
        let next = dc_step(&z, a, y, cfg.eta)?;
        let mut rec = empty_record(k);
        rec.psnr = truth_psnr(&next, truth)?;
        rec.residual = a.residual_norm(&next, y)?;
        trace.records.push(rec);
        let change = relative_change(&next, &x);
        x = next;
        if change < cfg.tolerance {
            break;
        }
    }
    Ok(Reconstruction { image: x, trace })
}

/// `G2(c, E2s(|x_us|))`, re-phased with the phase of `x_us`.
pub fn content_consistency(
    x_us: &ComplexImage,
    c_hat: &ContentMap,
    model: &dyn ContentStyleModel,
) -> Result<(ComplexImage, StyleCode)> {
    let s = model.encode_style(Contrast::T2w, &x_us.magnitude())?;
    let z = ComplexImage::rephase(&model.decode(Contrast::T2w, c_hat, &s)?, &x_us.phase())?;
    Ok((z, s))
}

/// Result of one content-refinement step.
#[derive(Debug, Clone)]
pub struct CrStep {
    pub content: ContentMap,
    /// `||A (G2(c, s) phase) - y||^2` at the input content.
    pub objective: f64,
}

/// One gradient step on `c -> ||A (G2(c, s) phase) - y||^2`, with the
/// decoded magnitude re-phased by `phase` (real-valued when `None`).
/// With `gamma = 0` only the objective is evaluated.
pub fn cr_step(
    c: &ContentMap,
    s: &StyleCode,
    a: &ForwardOperator,
    y: &KSpaceData,
    phase: Option<&ComplexImage>,
    gamma: f64,
    model: &dyn ContentStyleModel,
) -> Result<CrStep> {
    let (h, w) = model.image_dims();
    let unit = ComplexImage::from_real(&Image::from_fn(h, w, |_, _| 1.0));
    let p = phase.unwrap_or(&unit);
    let objective = std::cell::Cell::new(0.0);
    // d/df ||A (f p) - y||^2 = 2 Re(conj(p) A^H r) for a real image f.
    let upstream = |img: &Image| -> Result<Image> {
        let r = a.forward(&ComplexImage::rephase(img, p)?)?.sub(y);
        objective.set(r.norm().powi(2));
        let back = a.adjoint(&r)?;
        Image::new(
            h,
            w,
            back.data()
                .iter()
                .zip(p.data())
                .map(|(b, p)| 2.0 * (p.conj() * b).re)
                .collect(),
        )
    };
    if gamma == 0.0 {
        upstream(&model.decode(Contrast::T2w, c, s)?)?;
        return Ok(CrStep {
            content: c.clone(),
            objective: objective.get(),
        });
    }
    let (_, gradient) = model.decode_vjp(Contrast::T2w, c, s, &upstream)?;
    Ok(CrStep {
        content: c.axpy(gamma, &gradient),
        objective: objective.get(),
    })
}

/// Guided reconstruction: alternate content consistency, data consistency
/// and (in `Cosmo` mode) content refinement.
///
/// `reference` is the aligned image of the other contrast; `CosmoOracle`
/// takes its content from `truth` instead and never refines it.
pub fn cosmo_reconstruct(
    y: &KSpaceData,
    a: &ForwardOperator,
    reference: Option<&Image>,
    model: Option<&dyn ContentStyleModel>,
    cfg: &ReconConfig,
    truth: Option<&Image>,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let model = model.ok_or_else(|| {
        CosmoError::Config("guided reconstruction needs a content/style model".into())
    })?;
    let mut c = match cfg.mode {
        ReconMode::CosmoOracle => {
            let t = truth
                .ok_or_else(|| CosmoError::Config("oracle mode needs the ground truth".into()))?;
            model.encode_content(Contrast::T2w, t)?
        }
        ReconMode::Cosmo | ReconMode::CosmoNoCr => {
            let r = reference.ok_or_else(|| {
                CosmoError::Config("guided reconstruction needs a reference image".into())
            })?;
            model.encode_content(Contrast::T1w, r)?
        }
        other => return config(format!("{} is not a guided mode", other.as_str())),
    };
    let refine = cfg.mode == ReconMode::Cosmo;

    let mut x = a.adjoint(y)?;
    let mut s = model.encode_style(Contrast::T2w, &x.magnitude())?;
    let mut trace = ReconTrace::default();
    let mut gamma = cfg.gamma;
    for k in 1..=cfg.max_iters {
        let z = ComplexImage::rephase(&model.decode(Contrast::T2w, &c, &s)?, &x.phase())?;
        let next = dc_step(&z, a, y, cfg.eta)?;
        let s_next = model.encode_style(Contrast::T2w, &next.magnitude())?;
        let phase = next.phase();
        let step = cr_step(
            &c,
            &s_next,
            a,
            y,
            Some(&phase),
            if refine { gamma } else { 0.0 },
            model,
        )?;

        let mut rec = empty_record(k);
        rec.psnr = truth_psnr(&next, truth)?;
        rec.residual = a.residual_norm(&next, y)?;
        rec.content_change = step.content.l1_dist(&c);
        rec.style_change = s_next.l2_dist(&s);
        rec.cr_objective = Some(step.objective);
        trace.records.push(rec);

        let change = relative_change(&next, &x);
        x = next;
        s = s_next;
        c = step.content;
        gamma *= cfg.gamma_decay;
        if change < cfg.tolerance {
            break;
        }
    }
    Ok(Reconstruction { image: x, trace })
}

/// Everything a reconstruction may need besides the measurements.
#[derive(Clone, Copy, Default)]
pub struct Priors<'a> {
    pub model: Option<&'a dyn ContentStyleModel>,
    pub denoiser: Option<&'a dyn Denoiser>,
    pub reference: Option<&'a Image>,
}

/// Dispatches on `cfg.mode`.
pub fn reconstruct(
    y: &KSpaceData,
    a: &ForwardOperator,
    priors: &Priors<'_>,
    cfg: &ReconConfig,
    truth: Option<&Image>,
) -> Result<Reconstruction> {
    match cfg.mode {
        ReconMode::CsWt => cs_wt_reconstruct(y, a, cfg, truth),
        ReconMode::PnpDenoiser => {
            let d = priors
                .denoiser
                .ok_or_else(|| CosmoError::Config("pnp_denoiser mode needs a denoiser".into()))?;
            pnp_denoiser_reconstruct(y, a, d, cfg, truth)
        }
        _ => cosmo_reconstruct(y, a, priors.reference, priors.model, cfg, truth),
    }
}
