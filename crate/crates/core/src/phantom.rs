//! Procedural two-contrast brain-like phantoms.
//!
//! A phantom is a stack of fuzzy tissue occupancy maps on a regular grid.
//! Nested, smoothly deformed shells give the head/CSF/cortex/white-matter
//! layout; blobs carve ventricles and deep gray nuclei out of white matter.
//! Contrast images are rendered with the spin-echo signal equation, so both
//! contrasts of one phantom share exactly the same region boundaries.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, CosmoError, Result};
use crate::fft::Fft2;
use crate::image::Image;

/// The two image domains of the content/style model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    /// Domain 1, used as the guidance reference.
    T1w,
    /// Domain 2, the reconstruction target.
    T2w,
}

impl Contrast {
    pub fn index(self) -> usize {
        match self {
            Contrast::T1w => 0,
            Contrast::T2w => 1,
        }
    }

    pub fn other(self) -> Contrast {
        match self {
            Contrast::T1w => Contrast::T2w,
            Contrast::T2w => Contrast::T1w,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Contrast::T1w => "t1w",
            Contrast::T2w => "t2w",
        }
    }

    /// Realistic spin-echo timing ranges, `(TE range, TR range)` in ms.
    pub fn timing_ranges(self) -> ((f64, f64), (f64, f64)) {
        match self {
            Contrast::T1w => ((10.0, 20.0), (400.0, 700.0)),
            Contrast::T2w => ((80.0, 110.0), (2000.0, 5000.0)),
        }
    }
}

impl std::str::FromStr for Contrast {
    type Err = CosmoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t1w" => Ok(Contrast::T1w),
            "t2w" => Ok(Contrast::T2w),
            other => config(format!("unknown contrast {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tissue {
    WhiteMatter,
    GrayMatter,
    Csf,
    Fat,
    DeepGray,
    Skin,
}

/// Proton density (a.u.) and relaxation times (ms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueProperties {
    pub pd: f64,
    pub t1: f64,
    pub t2: f64,
}

impl Tissue {
    /// Nominal 1.5 T values.
    pub fn nominal(self) -> TissueProperties {
        let (pd, t1, t2) = match self {
            Tissue::WhiteMatter => (0.77, 500.0, 70.0),
            Tissue::GrayMatter => (0.86, 833.0, 83.0),
            Tissue::Csf => (1.0, 2569.0, 329.0),
            Tissue::Fat => (1.0, 350.0, 70.0),
            Tissue::DeepGray => (0.82, 700.0, 90.0),
            Tissue::Skin => (0.65, 1000.0, 40.0),
        };
        TissueProperties { pd, t1, t2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceParams {
    pub te: f64,
    pub tr: f64,
}

impl SequenceParams {
    pub fn new(te: f64, tr: f64) -> Result<Self> {
        if !(te > 0.0 && te < tr) {
            return config(format!("need 0 < TE < TR, got TE={te} TR={tr}"));
        }
        Ok(SequenceParams { te, tr })
    }

    pub fn sample<R: Rng + ?Sized>(contrast: Contrast, rng: &mut R) -> Self {
        let ((te0, te1), (tr0, tr1)) = contrast.timing_ranges();
        SequenceParams {
            te: rng.random_range(te0..te1),
            tr: rng.random_range(tr0..tr1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TissuePhantom {
    pub seed: u64,
    pub tissues: Vec<Tissue>,
    pub properties: Vec<TissueProperties>,
    /// One occupancy map per tissue, each in `[0, 1]`.
    pub maps: Vec<Image>,
}

impl TissuePhantom {
    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].dims()
    }

    pub fn total_occupancy(&self) -> Image {
        let (h, w) = self.dims();
        let mut out = Image::zeros(h, w);
        for m in &self.maps {
            out.data_mut()
                .iter_mut()
                .zip(m.data())
                .for_each(|(a, b)| *a += b);
        }
        out
    }

    /// Binary map of voxels that are mostly tissue.
    pub fn foreground_mask(&self) -> Image {
        self.total_occupancy()
            .map(|v| if v > 0.5 { 1.0 } else { 0.0 })
    }

    pub fn map_of(&self, tissue: Tissue) -> Option<&Image> {
        self.tissues
            .iter()
            .position(|&t| t == tissue)
            .map(|i| &self.maps[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Provenance {
    pub phantom: u64,
    pub slice: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastImage {
    pub pixels: Image,
    pub contrast: Contrast,
    pub params: SequenceParams,
    pub provenance: Provenance,
}

impl ContrastImage {
    fn with_pixels(&self, pixels: Image) -> Self {
        ContrastImage {
            pixels,
            ..self.clone()
        }
    }
}

/// Random shape parameters of one phantom, independent of the slice.
struct Anatomy {
    ax: f64,
    ay: f64,
    rot: f64,
    lobes: [(f64, f64); 3],
    gyri: usize,
    gyri_amp: f64,
    gyri_phase: f64,
    fine_phase: f64,
    vent_dx: f64,
    vent_size: f64,
    vent_tilt: f64,
    deep_size: f64,
    jitter: Vec<[f64; 3]>,
}

impl Anatomy {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let lobes = [2.0, 3.0, 4.0].map(|_| {
            (
                rng.random_range(0.0..0.04),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        });
        Anatomy {
            ax: rng.random_range(0.74..0.86),
            ay: rng.random_range(0.84..0.94),
            rot: rng.random_range(-0.12..0.12),
            lobes,
            gyri: rng.random_range(7..12),
            gyri_amp: rng.random_range(0.04..0.08),
            gyri_phase: rng.random_range(0.0..std::f64::consts::TAU),
            fine_phase: rng.random_range(0.0..std::f64::consts::TAU),
            vent_dx: rng.random_range(0.08..0.14),
            vent_size: rng.random_range(0.8..1.25),
            vent_tilt: rng.random_range(-0.3..0.3),
            deep_size: rng.random_range(0.8..1.2),
            jitter: (0..6)
                .map(|_| [0; 3].map(|_| rng.random_range(-0.05..0.05)))
                .collect(),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Nested shells from outermost to innermost, and which blob classes exist.
fn layout(n_tissues: usize) -> (Vec<Tissue>, Vec<f64>, bool) {
    use Tissue::*;
    match n_tissues {
        1 => (vec![WhiteMatter], vec![1.0], false),
        2 => (vec![GrayMatter, WhiteMatter], vec![1.0, 0.7], false),
        3 => (
            vec![Csf, GrayMatter, WhiteMatter],
            vec![1.0, 0.9, 0.66],
            false,
        ),
        4 | 5 => (
            vec![Fat, Csf, GrayMatter, WhiteMatter],
            vec![1.0, 0.9, 0.83, 0.62],
            n_tissues == 5,
        ),
        _ => (
            vec![Skin, Fat, Csf, GrayMatter, WhiteMatter],
            vec![1.0, 0.96, 0.9, 0.83, 0.62],
            true,
        ),
    }
}

/// One axial slice of the phantom with the given `seed`; the slice position
/// `z` in `[-1, 1]` shrinks the head and ventricles away from the center.
pub fn make_phantom_slice(
    seed: u64,
    z: f64,
    h: usize,
    w: usize,
    n_tissues: usize,
) -> Result<TissuePhantom> {
    if h < 32 || w < 32 {
        return config(format!("phantom grid must be at least 32x32, got {h}x{w}"));
    }
    if !(1..=6).contains(&n_tissues) {
        return config(format!("n_tissues must be in 1..=6, got {n_tissues}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Anatomy::sample(&mut rng);
    let (mut tissues, bounds, deep) = layout(n_tissues);
    let shells = tissues.len();
    let has_csf = tissues.contains(&Tissue::Csf);
    if deep {
        tissues.push(Tissue::DeepGray);
    }

    let zscale = (1.0 - 0.25 * z * z).sqrt();
    let half = 0.5 * h.min(w) as f64;
    // Edge width of ~0.6 px expressed in normalized radius units.
    let edge = 0.6 / (a.ax * zscale * half);
    let (cr, sr) = (a.rot.cos(), a.rot.sin());

    let mut maps = vec![vec![0.0; h * w]; tissues.len()];
    for i in 0..h {
        for j in 0..w {
            let u0 = (j as f64 + 0.5 - 0.5 * w as f64) / (0.5 * w as f64);
            let v0 = (i as f64 + 0.5 - 0.5 * h as f64) / (0.5 * h as f64);
            let u = (cr * u0 + sr * v0) / zscale;
            let v = (-sr * u0 + cr * v0) / zscale;
            let theta = v.atan2(u);
            let deform = 1.0
                + a.lobes
                    .iter()
                    .enumerate()
                    .map(|(k, (amp, ph))| amp * ((k as f64 + 2.0) * theta + ph).cos())
                    .sum::<f64>();
            let rho = ((u / a.ax).powi(2) + (v / a.ay).powi(2)).sqrt() / deform;

            let mut cum = vec![0.0; shells + 1];
            for (s, &b) in bounds.iter().enumerate() {
                let mut b = b;
                if s == shells - 1 && shells > 1 {
                    // Cortical folding on the gray/white boundary.
                    b += a.gyri_amp * (a.gyri as f64 * theta + a.gyri_phase + 2.0 * z).cos()
                        + 0.025 * ((a.gyri + 3) as f64 * theta + a.fine_phase).cos();
                }
                cum[s] = sigmoid((b - rho) / edge);
            }
            let idx = i * w + j;
            for s in 0..shells {
                maps[s][idx] = (cum[s] - cum[s + 1]).max(0.0);
            }

            let wm = shells - 1;
            if has_csf {
                let vs = a.vent_size * (1.0 - 0.6 * z.abs());
                let (ct, st) = (a.vent_tilt.cos(), a.vent_tilt.sin());
                let mut vent: f64 = 0.0;
                for side in [-1.0, 1.0] {
                    let du = u - side * a.vent_dx;
                    let dv = v + 0.03;
                    let (pu, pv) = (ct * du + side * st * dv, -side * st * du + ct * dv);
                    let (sa, sb) = (0.055 * vs, 0.2 * vs);
                    let er = ((pu / sa).powi(2) + (pv / sb).powi(2)).sqrt();
                    vent = vent.max(sigmoid((1.0 - er) * sa * half / 0.6));
                }
                let csf = tissues
                    .iter()
                    .position(|&t| t == Tissue::Csf)
                    .expect("csf shell");
                let moved = maps[wm][idx] * vent;
                maps[wm][idx] -= moved;
                maps[csf][idx] += moved;
            }
            if deep {
                let ds = a.deep_size * (1.0 - 0.4 * z.abs());
                let mut blob: f64 = 0.0;
                for side in [-1.0, 1.0] {
                    let r = 0.1 * ds;
                    let d = ((u - side * 0.3).powi(2) + (v - 0.1).powi(2)).sqrt();
                    blob = blob.max(sigmoid((1.0 - d / r) * r * half / 0.6));
                }
                let moved = maps[wm][idx] * blob;
                maps[wm][idx] -= moved;
                *maps
                    .last_mut()
                    .expect("deep gray map")
                    .get_mut(idx)
                    .expect("in range") += moved;
            }
        }
    }

    let properties = tissues
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let n = t.nominal();
            let j = a.jitter[k];
            TissueProperties {
                pd: n.pd * (1.0 + j[0]),
                t1: n.t1 * (1.0 + j[1]),
                t2: n.t2 * (1.0 + j[2]),
            }
        })
        .collect();
    let maps = maps
        .into_iter()
        .map(|m| Image::new(h, w, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(TissuePhantom {
        seed,
        tissues,
        properties,
        maps,
    })
}

/// Central slice of the phantom with the given seed.
pub fn make_phantom(seed: u64, h: usize, w: usize, n_tissues: usize) -> Result<TissuePhantom> {
    make_phantom_slice(seed, 0.0, h, w, n_tissues)
}

/// Spin-echo signal `PD (1 - exp(-TR/T1)) exp(-TE/T2)` per tissue, weighted
/// by occupancy.
pub fn spin_echo_signal(p: &TissueProperties, seq: &SequenceParams) -> f64 {
    p.pd * (1.0 - (-seq.tr / p.t1).exp()) * (-seq.te / p.t2).exp()
}

pub fn simulate_contrast(
    phantom: &TissuePhantom,
    params: SequenceParams,
    contrast: Contrast,
    slice: usize,
) -> ContrastImage {
    let (h, w) = phantom.dims();
    let mut out = Image::zeros(h, w);
    for (map, props) in phantom.maps.iter().zip(&phantom.properties) {
        let s = spin_echo_signal(props, &params);
        out.data_mut()
            .iter_mut()
            .zip(map.data())
            .for_each(|(o, m)| *o += m * s);
    }
    ContrastImage {
        pixels: out,
        contrast,
        params,
        provenance: Provenance {
            phantom: phantom.seed,
            slice,
        },
    }
}

/// Keeps only the central `1/n` of spatial frequencies along each axis.
pub fn lowpass(img: &Image, n: usize) -> Result<Image> {
    let (h, w) = img.dims();
    if n == 0 || n > h.min(w) {
        return config(format!(
            "reference degradation factor must be in 1..={}, got {n}",
            h.min(w)
        ));
    }
    if n == 1 {
        return Ok(img.clone());
    }
    let fft = Fft2::new(h, w);
    let mut k: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.forward(&mut k);
    // Symmetric band |f| < size/(2n), so the result stays real.
    let keep = |idx: usize, size: usize| {
        let f = idx as f64 - (size / 2) as f64;
        f.abs() < size as f64 / (2.0 * n as f64)
    };
    for i in 0..h {
        for j in 0..w {
            if !(keep(i, h) && keep(j, w)) {
                k[i * w + j] = Complex64::default();
            }
        }
    }
    fft.inverse(&mut k);
    Image::new(h, w, k.iter().map(|c| c.re).collect())
}

pub fn degrade_reference(img: &ContrastImage, n: usize) -> Result<ContrastImage> {
    Ok(img.with_pixels(lowpass(&img.pixels, n)?))
}

/// Adds a Gaussian bump `delta * exp(-d^2 / (2 radius^2))` centered at
/// `(row, col)`; negative results are clipped to zero.
pub fn add_gaussian_bump(
    img: &Image,
    center: (f64, f64),
    radius: f64,
    delta: f64,
) -> Result<Image> {
    let (h, w) = img.dims();
    let (ci, cj) = center;
    if !(ci >= 0.0 && cj >= 0.0 && ci < h as f64 && cj < w as f64) {
        return Err(CosmoError::OutOfBounds(format!(
            "lesion center ({ci}, {cj}) in a {h}x{w} image"
        )));
    }
    if radius <= 0.0 || delta == 0.0 {
        return Ok(img.clone());
    }
    let mut out = img.clone();
    for i in 0..h {
        for j in 0..w {
            let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
            let v = img.get(i, j) + delta * (-d2 / (2.0 * radius * radius)).exp();
            out.set(i, j, v.max(0.0));
        }
    }
    Ok(out)
}

pub fn inject_lesion(
    img: &ContrastImage,
    center: (f64, f64),
    radius: f64,
    delta: f64,
) -> Result<ContrastImage> {
    Ok(img.with_pixels(add_gaussian_bump(&img.pixels, center, radius, delta)?))
}

/// Bilinear rotation about the image center with zero fill. A positive
/// angle turns the column axis towards the row axis.
pub fn rotate(img: &Image, angle_deg: f64) -> Image {
    let (h, w) = img.dims();
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (ci, cj) = (0.5 * (h as f64 - 1.0), 0.5 * (w as f64 - 1.0));
    let sample = |i: isize, j: isize| {
        if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
            0.0
        } else {
            img.get(i as usize, j as usize)
        }
    };
    Image::from_fn(h, w, |i, j| {
        let (y, x) = (i as f64 - ci, j as f64 - cj);
        let xs = c * x + s * y + cj;
        let ys = -s * x + c * y + ci;
        let (i0, j0) = (ys.floor(), xs.floor());
        let (fy, fx) = (ys - i0, xs - j0);
        let (i0, j0) = (i0 as isize, j0 as isize);
        (1.0 - fy) * ((1.0 - fx) * sample(i0, j0) + fx * sample(i0, j0 + 1))
            + fy * ((1.0 - fx) * sample(i0 + 1, j0) + fx * sample(i0 + 1, j0 + 1))
    })
}

pub fn misalign(img: &ContrastImage, angle_deg: f64) -> ContrastImage {
    img.with_pixels(rotate(&img.pixels, angle_deg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_deterministic_per_seed() {
        assert_eq!(
            make_phantom(11, 48, 48, 5).unwrap(),
            make_phantom(11, 48, 48, 5).unwrap()
        );
        assert_ne!(
            make_phantom(11, 48, 48, 5).unwrap().maps,
            make_phantom(12, 48, 48, 5).unwrap().maps
        );
    }

    #[test]
    fn single_tissue_phantom_has_one_foreground_map() {
        let p = make_phantom(3, 32, 32, 1).unwrap();
        assert_eq!(p.maps.len(), 1);
        assert!(p.maps[0].get(16, 16) > 0.99);
        assert!(p.maps[0].get(0, 0) < 1e-6);
    }

    #[test]
    fn occupancy_never_exceeds_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for seed in 0..5 {
            let p = make_phantom_slice(seed, rng.random_range(-1.0..1.0), 64, 64, 6).unwrap();
            let tot = p.total_occupancy();
            for _ in 0..100 {
                let (i, j) = (rng.random_range(0..64), rng.random_range(0..64));
                assert!(tot.get(i, j) <= 1.0 + 1e-9);
                assert!(p.maps.iter().all(|m| m.get(i, j) >= 0.0));
            }
        }
    }

    #[test]
    fn rejects_small_grids() {
        assert!(make_phantom(0, 16, 64, 4).is_err());
        assert!(make_phantom(0, 64, 64, 0).is_err());
    }

    #[test]
    fn sequence_params_validate() {
        assert!(SequenceParams::new(10.0, 5.0).is_err());
        assert!(SequenceParams::new(0.0, 5.0).is_err());
        assert!(SequenceParams::new(1.0, f64::INFINITY).is_ok());
    }

    #[test]
    fn signal_limits() {
        let p = make_phantom(5, 32, 32, 4).unwrap();
        let seq = SequenceParams::new(1e-12, f64::INFINITY).unwrap();
        let img = simulate_contrast(&p, seq, Contrast::T1w, 0);
        for idx in 0..32 * 32 {
            let expect: f64 = p
                .maps
                .iter()
                .zip(&p.properties)
                .map(|(m, t)| m.data()[idx] * t.pd)
                .sum();
            assert!((img.pixels.data()[idx] - expect).abs() < 1e-9);
        }
        let unit = TissueProperties {
            pd: 1.0,
            t1: 800.0,
            t2: 60.0,
        };
        let s = spin_echo_signal(&unit, &SequenceParams::new(60.0, f64::INFINITY).unwrap());
        assert!((s - (-1.0f64).exp()).abs() < 1e-12);
        assert!((s - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn two_tissue_voxel_by_hand() {
        let mut p = make_phantom(1, 32, 32, 2).unwrap();
        p.properties = vec![
            TissueProperties {
                pd: 0.8,
                t1: 900.0,
                t2: 90.0,
            },
            TissueProperties {
                pd: 0.7,
                t1: 600.0,
                t2: 75.0,
            },
        ];
        for m in &mut p.maps {
            m.data_mut().fill(0.0);
        }
        p.maps[0].set(3, 4, 0.25);
        p.maps[1].set(3, 4, 0.5);
        let seq = SequenceParams::new(15.0, 500.0).unwrap();
        let img = simulate_contrast(&p, seq, Contrast::T1w, 0);
        let gm = 0.8 * (1.0 - (-500.0f64 / 900.0).exp()) * (-15.0f64 / 90.0).exp();
        let wm = 0.7 * (1.0 - (-500.0f64 / 600.0).exp()) * (-15.0f64 / 75.0).exp();
        assert!((img.pixels.get(3, 4) - (0.25 * gm + 0.5 * wm)).abs() < 1e-14);
    }

    #[test]
    fn contrasts_share_boundaries_and_are_monotone() {
        let p = make_phantom(21, 48, 48, 5).unwrap();
        let fg = p.foreground_mask();
        let base = SequenceParams::new(40.0, 1000.0).unwrap();
        let img = simulate_contrast(&p, base, Contrast::T2w, 0).pixels;
        let longer_te = simulate_contrast(
            &p,
            SequenceParams::new(60.0, 1000.0).unwrap(),
            Contrast::T2w,
            0,
        )
        .pixels;
        let longer_tr = simulate_contrast(
            &p,
            SequenceParams::new(40.0, 2000.0).unwrap(),
            Contrast::T2w,
            0,
        )
        .pixels;
        for idx in (0..48 * 48).step_by(7) {
            if fg.data()[idx] > 0.0 {
                assert!(longer_te.data()[idx] < img.data()[idx]);
                assert!(longer_tr.data()[idx] > img.data()[idx]);
            }
        }
        // Both contrasts render the same occupancy maps, so zero-signal
        // background coincides exactly.
        let t1 = simulate_contrast(
            &p,
            SequenceParams::new(15.0, 500.0).unwrap(),
            Contrast::T1w,
            0,
        )
        .pixels;
        for (a, b) in t1.data().iter().zip(img.data()) {
            assert_eq!(*a == 0.0, *b == 0.0);
        }
    }

    #[test]
    fn lowpass_cases() {
        let p = make_phantom(2, 32, 32, 4).unwrap();
        let img = simulate_contrast(
            &p,
            SequenceParams::new(15.0, 500.0).unwrap(),
            Contrast::T1w,
            0,
        )
        .pixels;
        assert_eq!(lowpass(&img, 1).unwrap(), img);
        let dc = lowpass(&img, 32).unwrap();
        let mean = img.mean();
        assert!(dc.data().iter().all(|v| (v - mean).abs() < 1e-12));
        assert!(lowpass(&img, 0).is_err());
        assert!(lowpass(&img, 33).is_err());

        // Stripes at 10 cycles per 32 px lie above the n=2 cutoff of 8.
        let stripes = Image::from_fn(32, 32, |_, j| {
            (2.0 * std::f64::consts::PI * 10.0 * j as f64 / 32.0).cos()
        });
        let out = lowpass(&stripes, 2).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-12));
        // ...while 5 cycles survive untouched.
        let slow = Image::from_fn(32, 32, |_, j| {
            (2.0 * std::f64::consts::PI * 5.0 * j as f64 / 32.0).cos()
        });
        let out = lowpass(&slow, 2).unwrap();
        assert!(out
            .data()
            .iter()
            .zip(slow.data())
            .all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn lesion_cases() {
        let img = Image::from_fn(32, 32, |i, j| (i + j) as f64 * 0.01);
        assert_eq!(
            add_gaussian_bump(&img, (10.0, 12.0), 3.0, 0.0).unwrap(),
            img
        );
        assert_eq!(
            add_gaussian_bump(&img, (10.0, 12.0), 0.0, 0.5).unwrap(),
            img
        );
        assert!(matches!(
            add_gaussian_bump(&img, (40.0, 1.0), 2.0, 0.5),
            Err(CosmoError::OutOfBounds(_))
        ));
        let out = add_gaussian_bump(&img, (10.0, 12.0), 2.0, 0.5).unwrap();
        assert!((out.get(10, 12) - img.get(10, 12) - 0.5).abs() < 1e-14);
        let expect = 0.5 * (-(4.0f64 + 1.0) / 8.0).exp();
        assert!((out.get(12, 13) - img.get(12, 13) - expect).abs() < 1e-14);
    }

    #[test]
    fn rotation_cases() {
        let p = make_phantom(4, 32, 32, 4).unwrap();
        let img = simulate_contrast(
            &p,
            SequenceParams::new(15.0, 500.0).unwrap(),
            Contrast::T1w,
            0,
        )
        .pixels;
        assert_eq!(rotate(&img, 0.0), img);
        let full = rotate(&img, 360.0);
        assert!(full
            .data()
            .iter()
            .zip(img.data())
            .all(|(a, b)| (a - b).abs() < 1e-6));

        // Marker at row 5, col 20 of a 32x32 grid (center 15.5, 15.5):
        // offset (y, x) = (-10.5, 4.5); +90 deg maps (x, y) -> (-y, x),
        // i.e. new offset (y, x) = (4.5, 10.5) -> row 20, col 26.
        let mut marker = Image::zeros(32, 32);
        marker.set(5, 20, 1.0);
        let r = rotate(&marker, 90.0);
        assert!((r.get(20, 26) - 1.0).abs() < 1e-9);
        assert!((r.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
