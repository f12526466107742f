//! Sweep execution: one reconstruction per grid cell and slice.

use std::fs;
use std::path::{Path, PathBuf};

use pnp_cosmo::csmodel::{ContentStyleModel, CosmoModel};
use pnp_cosmo::dataset::{sub_seed, Dataset};
use pnp_cosmo::denoiser::{CnnDenoiser, Denoiser};
use pnp_cosmo::kspace::{
    add_noise, make_mask, synthetic_coils, ComplexImage, ForwardOperator, KSpaceData,
};
use pnp_cosmo::metrics::{psnr_masked, ssim_masked};
use pnp_cosmo::phantom::Contrast;
use pnp_cosmo::phantom::{add_gaussian_bump, lowpass, rotate};
use pnp_cosmo::recon::{
    content_consistency, reconstruct, Priors, ReconConfig, ReconMode, ReconTrace,
};
use pnp_cosmo::{CosmoError, Image, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pipeline::{self, Variant};
use crate::spec::ExperimentSpec;

/// One reconstruction setting, evaluated on every selected slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    /// Index into the variant list; `None` for model-free modes.
    pub variant: Option<usize>,
    pub mode: ReconMode,
    pub r: f64,
    pub center_fraction: f64,
    pub sigma: f64,
    pub gamma: f64,
    /// Index into the selected slices.
    pub slice: usize,
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub variant: String,
    pub alpha: Option<f64>,
    pub capacity: Option<f64>,
    pub degrade: Option<usize>,
    pub mode: String,
    #[serde(rename = "R")]
    pub r: f64,
    pub center_fraction: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub phantom: u64,
    pub slice: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub roi_psnr: Option<f64>,
    /// `||s(x_zf) - s(x*)||^2 / ||s(x*)||^2` for the target-contrast style
    /// encoder; model-based modes only.
    #[serde(default)]
    pub style_nmse: Option<f64>,
    /// PSNR of the content-consistent image built from the zero-filled
    /// style and the reference content.
    #[serde(default)]
    pub cc_psnr: Option<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub row: MetricRow,
    pub trace: ReconTrace,
    pub image: Image,
}

/// Ground truth and reference of one test slice after the scenario
/// perturbations.
#[derive(Debug, Clone)]
pub struct SliceCase {
    pub phantom: u64,
    pub slice: usize,
    pub truth: Image,
    pub reference: Image,
    pub foreground: Image,
    pub roi: Option<Image>,
}

pub fn slice_cases(spec: &ExperimentSpec, ds: &Dataset) -> Result<Vec<SliceCase>> {
    let g = &spec.grid;
    let mut items: Vec<_> = ds.split(g.split).collect();
    if g.max_slices > 0 {
        items.truncate(g.max_slices);
    }
    if items.is_empty() {
        return Err(CosmoError::Config(format!(
            "split {} has no slices",
            g.split.as_str()
        )));
    }
    items
        .into_iter()
        .map(|it| {
            let (h, w) = it.t2.pixels.dims();
            let (truth, roi) = match g.lesion {
                Some(l) => {
                    let center = (l.row * h as f64, l.col * w as f64);
                    let t = add_gaussian_bump(
                        &it.t2.pixels,
                        center,
                        l.radius,
                        l.delta * it.t2.pixels.max(),
                    )?;
                    let roi = Image::from_fn(h, w, |i, j| {
                        let d = (i as f64 - center.0).hypot(j as f64 - center.1);
                        (d <= 2.0 * l.radius) as u8 as f64
                    });
                    (t, Some(roi))
                }
                None => (it.t2.pixels.clone(), None),
            };
            let reference = if g.rotation_deg != 0.0 {
                rotate(&it.t1.pixels, g.rotation_deg)
            } else {
                it.t1.pixels.clone()
            };
            Ok(SliceCase {
                phantom: it.phantom_id,
                slice: it.slice,
                truth,
                reference,
                foreground: it.foreground.clone(),
                roi,
            })
        })
        .collect()
}

/// Everything a cell needs, shared read-only across workers.
pub struct Context {
    pub spec: ExperimentSpec,
    pub variants: Vec<Variant>,
    pub models: Vec<CosmoModel>,
    pub denoiser: Option<CnnDenoiser>,
    pub cases: Vec<SliceCase>,
}

impl Context {
    /// Loads or trains whatever the grid's modes need.
    pub fn prepare(spec: &ExperimentSpec, pool: &rayon::ThreadPool) -> Result<Self> {
        let spec = spec.resolved();
        spec.validate()?;
        let ds = pipeline::dataset(&spec)?;
        let variants = pipeline::variants(&spec);
        let needs_model = spec.grid.modes.iter().any(|m| m.is_cosmo());
        let models = if needs_model {
            pool.install(|| {
                variants
                    .par_iter()
                    .map(|v| {
                        log(&format!("model {}", v.label()));
                        pipeline::trained(&spec, &ds, v)
                    })
                    .collect::<Result<Vec<_>>>()
            })?
        } else {
            Vec::new()
        };
        let denoiser = if spec.grid.modes.contains(&ReconMode::PnpDenoiser) {
            log("denoiser");
            Some(pipeline::denoiser(&spec, &ds)?)
        } else {
            None
        };
        let cases = slice_cases(&spec, &ds)?;
        Ok(Context {
            spec,
            variants,
            models,
            denoiser,
            cases,
        })
    }

    pub fn cells(&self) -> Vec<Cell> {
        let g = &self.spec.grid;
        let mut out = Vec::new();
        for &mode in &g.modes {
            let variants: Vec<Option<usize>> = if mode.is_cosmo() {
                (0..self.variants.len()).map(Some).collect()
            } else {
                vec![None]
            };
            let gammas = if mode == ReconMode::Cosmo {
                g.gammas.clone()
            } else {
                vec![0.0]
            };
            for &variant in &variants {
                for &r in &g.accelerations {
                    for &cf in &g.center_fractions {
                        for &sigma in &g.noise_levels {
                            for &gamma in &gammas {
                                for slice in 0..self.cases.len() {
                                    out.push(Cell {
                                        variant,
                                        mode,
                                        r,
                                        center_fraction: cf,
                                        sigma,
                                        gamma,
                                        slice,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Mask, operator and noisy measurements of a cell; identical for every
    /// mode, variant and gamma.
    pub fn measure(&self, cell: &Cell) -> Result<(ForwardOperator, KSpaceData)> {
        let case = &self.cases[cell.slice];
        let (h, w) = case.truth.dims();
        let base = sub_seed(
            self.spec.seed,
            100 + case.phantom * 1000 + case.slice as u64,
        );
        let mask_seed = sub_seed(
            base,
            cell.r.to_bits() ^ cell.center_fraction.to_bits().rotate_left(17),
        );
        let mask = make_mask(w, cell.r, cell.center_fraction, mask_seed)?;
        let a = if self.spec.grid.coils > 1 {
            let coils = synthetic_coils(h, w, self.spec.grid.coils, sub_seed(self.spec.seed, 5));
            ForwardOperator::with_coils(h, mask.clone(), coils)?
        } else {
            ForwardOperator::new(h, mask.clone())
        };
        let clean = a.forward(&ComplexImage::from_real(&case.truth))?;
        let y = add_noise(
            &clean,
            &mask,
            cell.sigma,
            case.truth.max(),
            sub_seed(mask_seed, cell.sigma.to_bits()),
        )?;
        Ok((a, y))
    }

    pub fn evaluate(&self, cell: &Cell) -> Result<CellResult> {
        let case = &self.cases[cell.slice];
        let (a, y) = self.measure(cell)?;
        let variant = cell.variant.map(|i| &self.variants[i]);
        let reference = match variant {
            Some(v) if v.degrade > 1 => lowpass(&case.reference, v.degrade)?,
            _ => case.reference.clone(),
        };
        let priors = Priors {
            model: cell
                .variant
                .map(|i| &self.models[i] as &dyn ContentStyleModel),
            denoiser: self.denoiser.as_ref().map(|d| d as &dyn Denoiser),
            reference: Some(&reference),
        };
        let cfg = ReconConfig {
            mode: cell.mode,
            gamma: cell.gamma,
            ..self.spec.recon.clone()
        };
        let out = reconstruct(&y, &a, &priors, &cfg, Some(&case.truth))?;
        let image = out.image.magnitude();
        let range = case.truth.max();
        let fg = self
            .spec
            .grid
            .foreground_metrics
            .then_some(&case.foreground);
        let (style_nmse, cc_psnr) = match cell.variant {
            Some(i) => {
                let model = &self.models[i];
                let zf = a.adjoint(&y)?;
                let s_hat = model.encode_style(Contrast::T2w, &zf.magnitude())?;
                let s_true = model.encode_style(Contrast::T2w, &case.truth)?;
                let err: f64 = s_hat
                    .0
                    .iter()
                    .zip(&s_true.0)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum();
                let norm: f64 = s_true.0.iter().map(|b| b * b).sum();
                let c_hat = model.encode_content(Contrast::T1w, &reference)?;
                let (cc, _) = content_consistency(&zf, &c_hat, model)?;
                (
                    Some(err / norm),
                    Some(psnr_masked(&cc.magnitude(), &case.truth, range, fg)?),
                )
            }
            None => (None, None),
        };
        let roi_psnr = case
            .roi
            .as_ref()
            .map(|roi| psnr_masked(&image, &case.truth, range, Some(roi)))
            .transpose()?;
        let row = MetricRow {
            variant: variant.map_or_else(|| "none".to_string(), Variant::label),
            alpha: variant.and_then(|v| v.alpha),
            capacity: variant.map(Variant::capacity),
            degrade: variant.map(|v| v.degrade),
            mode: cell.mode.as_str().to_string(),
            r: cell.r,
            center_fraction: cell.center_fraction,
            sigma: cell.sigma,
            gamma: cell.gamma,
            phantom: case.phantom,
            slice: case.slice,
            psnr: psnr_masked(&image, &case.truth, range, fg)?,
            ssim: ssim_masked(&image, &case.truth, range, fg)?,
            roi_psnr,
            style_nmse,
            cc_psnr,
            iterations: out.trace.len(),
        };
        Ok(CellResult {
            cell: cell.clone(),
            row,
            trace: out.trace,
            image,
        })
    }
}

pub(crate) fn log(msg: &str) {
    eprintln!("[cosmo] {msg}");
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CosmoError::Config(format!("worker pool: {e}")))
}

pub struct RunOutput {
    pub dir: PathBuf,
    pub results: Vec<CellResult>,
}

impl RunOutput {
    pub fn rows(&self) -> Vec<MetricRow> {
        self.results.iter().map(|r| r.row.clone()).collect()
    }
}

/// Runs every cell and writes `config.toml`, `metrics.csv`, `trace.csv` and
/// `images/` under the run directory.
pub fn sweep(spec: &ExperimentSpec, jobs: usize) -> Result<RunOutput> {
    let pool = thread_pool(jobs)?;
    let ctx = Context::prepare(spec, &pool)?;
    let cells = ctx.cells();
    log(&format!("{} reconstructions", cells.len()));
    let results = pool.install(|| {
        cells
            .par_iter()
            .map(|c| ctx.evaluate(c))
            .collect::<Result<Vec<_>>>()
    })?;
    let dir = spec.run_dir();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), ctx.spec.to_toml())?;
    write_metrics(&dir.join("metrics.csv"), &results)?;
    write_traces(&dir.join("trace.csv"), &results)?;
    if ctx.spec.grid.save_images {
        write_images(&dir.join("images"), &ctx, &results)?;
    }
    Ok(RunOutput { dir, results })
}

pub fn write_metrics(path: &Path, results: &[CellResult]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    for r in results {
        wtr.serialize(&r.row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| {
        CosmoError::Config(format!(
            "cannot read {}: {e}; run `sweep` first",
            path.display()
        ))
    })?;
    Ok(rdr
        .deserialize()
        .collect::<std::result::Result<Vec<MetricRow>, _>>()?)
}

/// One line of `trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub variant: String,
    pub mode: String,
    #[serde(rename = "R")]
    pub r: f64,
    pub center_fraction: f64,
    pub sigma: f64,
    pub gamma: f64,
    pub phantom: u64,
    pub slice: usize,
    pub iteration: usize,
    pub psnr: Option<f64>,
    pub residual: f64,
    pub content_change: f64,
    pub style_change: f64,
    pub cr_objective: Option<f64>,
    pub cs_objective: Option<f64>,
}

pub fn trace_rows(res: &CellResult) -> impl Iterator<Item = TraceRow> + '_ {
    let m = &res.row;
    res.trace.records.iter().map(move |t| TraceRow {
        variant: m.variant.clone(),
        mode: m.mode.clone(),
        r: m.r,
        center_fraction: m.center_fraction,
        sigma: m.sigma,
        gamma: m.gamma,
        phantom: m.phantom,
        slice: m.slice,
        iteration: t.iteration,
        psnr: t.psnr,
        residual: t.residual,
        content_change: t.content_change,
        style_change: t.style_change,
        cr_objective: t.cr_objective,
        cs_objective: t.cs_objective,
    })
}

fn write_traces(path: &Path, results: &[CellResult]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    for r in results {
        for row in trace_rows(r) {
            wtr.serialize(row)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| {
        CosmoError::Config(format!(
            "cannot read {}: {e}; run `sweep` first",
            path.display()
        ))
    })?;
    Ok(rdr
        .deserialize()
        .collect::<std::result::Result<Vec<TraceRow>, _>>()?)
}

pub fn cell_label(row: &MetricRow) -> String {
    let g = if row.mode == ReconMode::Cosmo.as_str() {
        format!("_g{}", row.gamma)
    } else {
        String::new()
    };
    format!(
        "{}_{}_R{}_cf{}_s{}{g}",
        row.variant, row.mode, row.r, row.center_fraction, row.sigma
    )
}

fn write_images(dir: &Path, ctx: &Context, results: &[CellResult]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let first = &ctx.cases[0];
    let vmax = first.truth.max();
    first.truth.write_png(&dir.join("truth.png"), Some(vmax))?;
    first
        .reference
        .write_png(&dir.join("reference.png"), None)?;
    for r in results.iter().filter(|r| r.cell.slice == 0) {
        let name = cell_label(&r.row);
        r.image
            .write_png(&dir.join(format!("{name}.png")), Some(vmax))?;
        r.image.write_raw(&dir.join(format!("{name}.rimg")))?;
    }
    Ok(())
}
