//! Cartesian MRI measurement model.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config, shape, CosmoError, Result};
use crate::fft::Fft2;
use crate::image::Image;

/// Row-major complex `h x w` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    h: usize,
    w: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn new(h: usize, w: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != h * w {
            return shape(format!(
                "{h}x{w} complex image needs {} values, got {}",
                h * w,
                data.len()
            ));
        }
        Ok(ComplexImage { h, w, data })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        ComplexImage {
            h,
            w,
            data: vec![Complex64::default(); h * w],
        }
    }

    pub fn from_real(img: &Image) -> Self {
        let (h, w) = img.dims();
        ComplexImage {
            h,
            w,
            data: img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn from_parts(re: &Image, im: &Image) -> Result<Self> {
        re.check_same_dims(im)?;
        let data = re
            .data()
            .iter()
            .zip(im.data())
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        ComplexImage::new(re.height(), re.width(), data)
    }

    pub fn random<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Self {
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let data = (0..h * w)
            .map(|_| Complex64::new(n.sample(rng), n.sample(rng)))
            .collect();
        ComplexImage { h, w, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn re(&self) -> Image {
        Image::new(self.h, self.w, self.data.iter().map(|c| c.re).collect()).expect("same size")
    }

    pub fn im(&self) -> Image {
        Image::new(self.h, self.w, self.data.iter().map(|c| c.im).collect()).expect("same size")
    }

    pub fn magnitude(&self) -> Image {
        Image::new(self.h, self.w, self.data.iter().map(|c| c.norm()).collect()).expect("same size")
    }

    /// Unit-modulus phase factor per pixel; zero pixels get phase 0.
    pub fn phase(&self) -> ComplexImage {
        let data = self
            .data
            .iter()
            .map(|c| {
                let n = c.norm();
                if n > 0.0 {
                    c / n
                } else {
                    Complex64::new(1.0, 0.0)
                }
            })
            .collect();
        ComplexImage {
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// `mag * phase`, pixelwise.
    pub fn rephase(mag: &Image, phase: &ComplexImage) -> Result<ComplexImage> {
        if mag.dims() != phase.dims() {
            return shape(format!(
                "magnitude {:?} vs phase {:?}",
                mag.dims(),
                phase.dims()
            ));
        }
        let data = mag
            .data()
            .iter()
            .zip(&phase.data)
            .map(|(&m, p)| p * m)
            .collect();
        ComplexImage::new(phase.h, phase.w, data)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn dist(&self, other: &ComplexImage) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `<self, other> = sum conj(self) * other`.
    pub fn dot(&self, other: &ComplexImage) -> Complex64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if (self.h, self.w) != (h, w) {
            return shape(format!("expected {h}x{w} image, got {}x{}", self.h, self.w));
        }
        Ok(())
    }
}

/// Kept phase-encode columns of a 1-D Cartesian pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    pub width: usize,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub seed: u64,
    kept: Vec<bool>,
}

impl SamplingMask {
    pub fn full(width: usize) -> Self {
        SamplingMask {
            width,
            acceleration: 1.0,
            center_fraction: 1.0,
            seed: 0,
            kept: vec![true; width],
        }
    }

    pub fn from_lines(width: usize, lines: &[usize]) -> Result<Self> {
        let mut kept = vec![false; width];
        for &l in lines {
            if l >= width {
                return Err(CosmoError::OutOfBounds(format!("line {l} of {width}")));
            }
            kept[l] = true;
        }
        let n = kept.iter().filter(|&&k| k).count().max(1);
        Ok(SamplingMask {
            width,
            acceleration: width as f64 / n as f64,
            center_fraction: 0.0,
            seed: 0,
            kept,
        })
    }

    pub fn is_kept(&self, line: usize) -> bool {
        self.kept[line]
    }

    pub fn kept_lines(&self) -> Vec<usize> {
        (0..self.width).filter(|&l| self.kept[l]).collect()
    }

    pub fn n_kept(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    /// Start and length of the fully sampled central block.
    pub fn center_block(width: usize, center_fraction: f64) -> (usize, usize) {
        let n = ((center_fraction * width as f64).round() as usize).min(width);
        (width / 2 - n / 2, n)
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        writeln!(f, "# width {}", self.width)?;
        writeln!(f, "# acceleration {}", self.acceleration)?;
        writeln!(f, "# center_fraction {}", self.center_fraction)?;
        writeln!(f, "# seed {}", self.seed)?;
        for l in self.kept_lines() {
            writeln!(f, "{l}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        let bad = |m: String| CosmoError::Format(format!("{}: {m}", path.display()));
        let (mut width, mut acc, mut cf, mut seed) = (None, None, None, None);
        let mut lines = Vec::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            let line = line.trim();
            if let Some(rest) = line.strip_prefix('#') {
                let mut parts = rest.split_whitespace();
                let (key, val) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
                let num = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{key}: {e}")));
                match key {
                    "width" => width = Some(num(val)? as usize),
                    "acceleration" => acc = Some(num(val)?),
                    "center_fraction" => cf = Some(num(val)?),
                    "seed" => seed = Some(val.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                    _ => {}
                }
            } else if !line.is_empty() {
                lines.push(line.parse::<usize>().map_err(|e| bad(e.to_string()))?);
            }
        }
        let width = width.ok_or_else(|| bad("missing width".into()))?;
        let mut m = SamplingMask::from_lines(width, &lines)?;
        m.acceleration = acc.ok_or_else(|| bad("missing acceleration".into()))?;
        m.center_fraction = cf.unwrap_or(0.0);
        m.seed = seed.unwrap_or(0);
        Ok(m)
    }
}

/// Keeps `ceil(W/R)` columns: the centered block of `round(cf W)` lines
/// plus lines drawn uniformly without replacement from the rest.
pub fn make_mask(
    width: usize,
    acceleration: f64,
    center_fraction: f64,
    seed: u64,
) -> Result<SamplingMask> {
    if width == 0 {
        return config("mask width must be positive");
    }
    if !(acceleration >= 1.0) {
        return config(format!("acceleration must be >= 1, got {acceleration}"));
    }
    if !(0.0..=1.0 / acceleration + 1e-12).contains(&center_fraction) {
        return config(format!(
            "center_fraction {center_fraction} must be in [0, 1/R] for R={acceleration}"
        ));
    }
    let budget = (width as f64 / acceleration).ceil() as usize;
    let (start, n_center) = SamplingMask::center_block(width, center_fraction);
    if n_center > budget {
        return config(format!(
            "center block of {n_center} lines exceeds the budget of {budget}"
        ));
    }
    let mut kept = vec![false; width];
    kept[start..start + n_center]
        .iter_mut()
        .for_each(|k| *k = true);
    let rest: Vec<usize> = (0..width).filter(|&l| !kept[l]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in rand::seq::index::sample(&mut rng, rest.len(), budget - n_center) {
        kept[rest[idx]] = true;
    }
    Ok(SamplingMask {
        width,
        acceleration,
        center_fraction,
        seed,
        kept,
    })
}

/// Per-coil k-space grids, zero off the kept lines.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceData {
    pub h: usize,
    pub w: usize,
    pub coils: Vec<Vec<Complex64>>,
    pub noise_sigma: f64,
}

const KSPACE_MAGIC: &[u8; 4] = b"KSPC";

impl KSpaceData {
    pub fn zeros(h: usize, w: usize, n_coils: usize) -> Self {
        KSpaceData {
            h,
            w,
            coils: vec![vec![Complex64::default(); h * w]; n_coils],
            noise_sigma: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        self.coils
            .iter()
            .flatten()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn dot(&self, other: &KSpaceData) -> Complex64 {
        self.coils
            .iter()
            .flatten()
            .zip(other.coils.iter().flatten())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn sub(&self, other: &KSpaceData) -> KSpaceData {
        let coils = self
            .coils
            .iter()
            .zip(&other.coils)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect();
        KSpaceData {
            coils,
            ..self.clone()
        }
    }

    /// Magic, `u32` coils, height, width, then interleaved re/im `f64` and
    /// finally the noise level.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path)?);
        f.write_all(KSPACE_MAGIC)?;
        for v in [self.coils.len(), self.h, self.w] {
            f.write_all(&(v as u32).to_le_bytes())?;
        }
        for c in self.coils.iter().flatten() {
            f.write_all(&c.re.to_le_bytes())?;
            f.write_all(&c.im.to_le_bytes())?;
        }
        f.write_all(&self.noise_sigma.to_le_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        if bytes.len() < 16 || &bytes[..4] != KSPACE_MAGIC {
            return Err(CosmoError::Format(format!(
                "{} is not a k-space file",
                path.display()
            )));
        }
        let u = |i: usize| {
            u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize
        };
        let (nc, h, w) = (u(0), u(1), u(2));
        let body = &bytes[16..];
        if body.len() != nc * h * w * 16 + 8 {
            return Err(CosmoError::Format(format!(
                "{} has the wrong length",
                path.display()
            )));
        }
        let f = |i: usize| f64::from_le_bytes(body[8 * i..8 * i + 8].try_into().expect("8 bytes"));
        let coils = (0..nc)
            .map(|c| {
                (0..h * w)
                    .map(|p| {
                        let k = 2 * (c * h * w + p);
                        Complex64::new(f(k), f(k + 1))
                    })
                    .collect()
            })
            .collect();
        Ok(KSpaceData {
            h,
            w,
            coils,
            noise_sigma: f(2 * nc * h * w),
        })
    }
}

/// `A = M F S` with orthonormal centered DFT `F`, column mask `M` and
/// optional coil sensitivities `S`.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    pub mask: SamplingMask,
    coils: Option<Vec<ComplexImage>>,
    h: usize,
    fft: Fft2,
}

impl ForwardOperator {
    pub fn new(h: usize, mask: SamplingMask) -> Self {
        let w = mask.width;
        ForwardOperator {
            mask,
            coils: None,
            h,
            fft: Fft2::new(h, w),
        }
    }

    /// Sensitivities are renormalized so that `sum |S_i|^2 = 1` per voxel.
    pub fn with_coils(h: usize, mask: SamplingMask, coils: Vec<ComplexImage>) -> Result<Self> {
        let w = mask.width;
        if coils.is_empty() {
            return config("coil list is empty");
        }
        for c in &coils {
            c.check(h, w)?;
        }
        let mut coils = coils;
        for p in 0..h * w {
            let s: f64 = coils
                .iter()
                .map(|c| c.data[p].norm_sqr())
                .sum::<f64>()
                .sqrt();
            if s == 0.0 {
                return config("coil sensitivities vanish at a voxel");
            }
            coils.iter_mut().for_each(|c| c.data[p] /= s);
        }
        Ok(ForwardOperator {
            mask,
            coils: Some(coils),
            h,
            fft: Fft2::new(h, w),
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.mask.width)
    }

    pub fn n_coils(&self) -> usize {
        self.coils.as_ref().map_or(1, Vec::len)
    }

    pub fn coils(&self) -> Option<&[ComplexImage]> {
        self.coils.as_deref()
    }

    fn apply_mask(&self, k: &mut [Complex64]) {
        let w = self.mask.width;
        for (idx, v) in k.iter_mut().enumerate() {
            if !self.mask.kept[idx % w] {
                *v = Complex64::default();
            }
        }
    }

    pub fn forward(&self, x: &ComplexImage) -> Result<KSpaceData> {
        let (h, w) = self.dims();
        x.check(h, w)?;
        let coils = (0..self.n_coils())
            .map(|c| {
                let mut k: Vec<Complex64> = match &self.coils {
                    Some(s) => x.data.iter().zip(&s[c].data).map(|(a, b)| a * b).collect(),
                    None => x.data.clone(),
                };
                self.fft.forward(&mut k);
                self.apply_mask(&mut k);
                k
            })
            .collect();
        Ok(KSpaceData {
            h,
            w,
            coils,
            noise_sigma: 0.0,
        })
    }

    pub fn adjoint(&self, y: &KSpaceData) -> Result<ComplexImage> {
        let (h, w) = self.dims();
        if (y.h, y.w, y.coils.len()) != (h, w, self.n_coils()) {
            return shape(format!(
                "k-space {}x{}x{} does not match operator {h}x{w}x{}",
                y.coils.len(),
                y.h,
                y.w,
                self.n_coils()
            ));
        }
        let mut out = ComplexImage::zeros(h, w);
        for (c, kc) in y.coils.iter().enumerate() {
            let mut k = kc.clone();
            self.apply_mask(&mut k);
            self.fft.inverse(&mut k);
            match &self.coils {
                Some(s) => out
                    .data
                    .iter_mut()
                    .zip(k.iter().zip(&s[c].data))
                    .for_each(|(o, (v, s))| *o += s.conj() * v),
                None => out.data.iter_mut().zip(&k).for_each(|(o, v)| *o += v),
            }
        }
        Ok(out)
    }

    /// `||A x - y||_2`.
    pub fn residual_norm(&self, x: &ComplexImage, y: &KSpaceData) -> Result<f64> {
        Ok(self.forward(x)?.sub(y).norm())
    }

    /// `A^H (A x - y)`.
    pub fn normal_residual(&self, x: &ComplexImage, y: &KSpaceData) -> Result<ComplexImage> {
        self.adjoint(&self.forward(x)?.sub(y))
    }
}

/// Adds complex Gaussian noise with per-component std
/// `sigma_rel * signal_max` to the kept lines.
pub fn add_noise(
    y: &KSpaceData,
    mask: &SamplingMask,
    sigma_rel: f64,
    signal_max: f64,
    seed: u64,
) -> Result<KSpaceData> {
    if !(sigma_rel >= 0.0) {
        return config(format!("sigma_rel must be >= 0, got {sigma_rel}"));
    }
    let sigma = sigma_rel * signal_max;
    let mut out = y.clone();
    out.noise_sigma = sigma;
    if sigma == 0.0 {
        return Ok(out);
    }
    let n = Normal::new(0.0, sigma).map_err(|e| CosmoError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for coil in &mut out.coils {
        for (idx, v) in coil.iter_mut().enumerate() {
            if mask.is_kept(idx % y.w) {
                *v += Complex64::new(n.sample(&mut rng), n.sample(&mut rng));
            }
        }
    }
    Ok(out)
}

/// `x = r - eta A^H (A r - y)`.
pub fn dc_step(
    r: &ComplexImage,
    a: &ForwardOperator,
    y: &KSpaceData,
    eta: f64,
) -> Result<ComplexImage> {
    if eta == 0.0 {
        return Ok(r.clone());
    }
    let g = a.normal_residual(r, y)?;
    let data = r
        .data
        .iter()
        .zip(&g.data)
        .map(|(x, g)| x - g * eta)
        .collect();
    ComplexImage::new(r.h, r.w, data)
}

/// Smooth Gaussian sensitivity profiles centered around the image border,
/// each with a random linear phase.
pub fn synthetic_coils(h: usize, w: usize, n_coils: usize, seed: u64) -> Vec<ComplexImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = std::f64::consts::TAU;
    let offset = rng.random_range(0.0..tau);
    (0..n_coils)
        .map(|c| {
            let ang = offset + tau * c as f64 / n_coils as f64;
            let (ci, cj) = (
                0.5 * h as f64 * (1.0 + 0.9 * ang.sin()),
                0.5 * w as f64 * (1.0 + 0.9 * ang.cos()),
            );
            let width = rng.random_range(0.5..0.9) * h.max(w) as f64;
            let (pi, pj, p0) = (
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..tau),
            );
            let data = (0..h * w)
                .map(|p| {
                    let (i, j) = ((p / w) as f64, (p % w) as f64);
                    let d2 = (i - ci).powi(2) + (j - cj).powi(2);
                    let mag = (-d2 / (2.0 * width * width)).exp();
                    Complex64::from_polar(mag, p0 + pi * i / h as f64 + pj * j / w as f64)
                })
                .collect();
            ComplexImage { h, w, data }
        })
        .collect()
}
