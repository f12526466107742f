use num_complex::Complex64;
use pnp_cosmo::csmodel::{ContentMap, ContentStyleModel, StyleCode};
use pnp_cosmo::denoiser::IdentityDenoiser;
use pnp_cosmo::kspace::{add_noise, make_mask, ComplexImage, ForwardOperator, SamplingMask};
use pnp_cosmo::phantom::Contrast;
use pnp_cosmo::recon::*;
use pnp_cosmo::{CosmoError, Image};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensorgrad::{Graph, Var};

/// Content is the image itself, style is its mean, and the decoder returns
/// `gain * c`.
struct Stub {
    n: usize,
    gain: f64,
}

impl ContentStyleModel for Stub {
    fn image_dims(&self) -> (usize, usize) {
        (self.n, self.n)
    }
    fn content_shape(&self) -> [usize; 3] {
        [1, self.n, self.n]
    }
    fn style_dim(&self) -> usize {
        1
    }
    fn content_net(&self, _: &mut Graph, _: Contrast, x: Var) -> pnp_cosmo::Result<Var> {
        Ok(x)
    }
    fn style_net(&self, g: &mut Graph, _: Contrast, x: Var) -> pnp_cosmo::Result<Var> {
        Ok(g.global_avg_pool(x)?)
    }
    fn decoder_net(&self, g: &mut Graph, _: Contrast, c: Var, _: Var) -> pnp_cosmo::Result<Var> {
        Ok(g.scale(c, self.gain))
    }
}

fn blob(n: usize) -> Image {
    let c = (n as f64 - 1.0) / 2.0;
    Image::from_fn(n, n, |i, j| {
        let r = ((i as f64 - c).powi(2) + (j as f64 - c).powi(2)).sqrt();
        if r < n as f64 / 3.0 {
            0.5 + 0.5 * ((i + 2 * j) % 5 == 0) as u8 as f64
        } else {
            0.0
        }
    })
}

fn setup(n: usize, mask: SamplingMask) -> (Image, ForwardOperator, pnp_cosmo::kspace::KSpaceData) {
    let truth = blob(n);
    let a = ForwardOperator::new(n, mask);
    let y = a.forward(&ComplexImage::from_real(&truth)).unwrap();
    (truth, a, y)
}

fn max_err(a: &ComplexImage, b: &ComplexImage) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

#[test]
fn haar_round_trip_and_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = ComplexImage::random(16, 32, &mut rng);
    for levels in 0..=4 {
        let psi = Haar::new(levels);
        let w = psi.forward(&x).unwrap();
        assert!((w.norm() - x.norm()).abs() < 1e-10);
        assert!(max_err(&psi.inverse(&w).unwrap(), &x) < 1e-10);
    }
}

#[test]
fn haar_rejects_indivisible_sizes() {
    let x = ComplexImage::zeros(12, 12);
    assert!(matches!(
        Haar::new(3).forward(&x),
        Err(CosmoError::Shape(_))
    ));
}

#[test]
fn haar_single_level_values() {
    let x = ComplexImage::from_real(&Image::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = Haar::new(1).forward(&x).unwrap();
    let re: Vec<f64> = w.data().iter().map(|v| v.re).collect();
    let expect = [5.0, -1.0, -2.0, 0.0];
    for (a, b) in re.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{re:?}");
    }
}

#[test]
fn soft_threshold_examples() {
    assert_eq!(soft_threshold_real(0.5, 1.0), 0.0);
    assert!((soft_threshold_real(2.0, 0.5) - 1.5).abs() < 1e-12);
    assert!((soft_threshold_real(-3.0, 1.0) + 2.0).abs() < 1e-12);
    let z = soft_threshold(Complex64::new(3.0, 4.0), 1.0);
    assert!((z - Complex64::new(2.4, 3.2)).norm() < 1e-12);
    assert_eq!(
        soft_threshold(Complex64::new(0.3, 0.4), 0.5),
        Complex64::default()
    );
}

#[test]
fn soft_threshold_minimizes_prox_objective() {
    let lambda = 0.7;
    let f = |x: f64, w: f64| 0.5 * (x - w).powi(2) + lambda * x.abs();
    for w in [-2.0, -0.7, -0.1, 0.0, 0.4, 1.3, 5.0] {
        let x = soft_threshold_real(w, lambda);
        for d in [-1e-3, 1e-3, -0.1, 0.1] {
            assert!(f(x, w) <= f(x + d, w) + 1e-15);
        }
    }
}

#[test]
fn cs_full_mask_returns_adjoint() {
    let (_, a, y) = setup(16, SamplingMask::full(16));
    for lambda in [0.0, 0.05] {
        let cfg = ReconConfig {
            mode: ReconMode::CsWt,
            lambda,
            max_iters: 5,
            ..Default::default()
        };
        let out = cs_wt_reconstruct(&y, &a, &cfg, None).unwrap();
        assert!(max_err(&out.image, &a.adjoint(&y).unwrap()) < 1e-10);
    }
}

#[test]
fn cs_without_threshold_keeps_zero_filled() {
    let (_, a, y) = setup(16, make_mask(16, 4.0, 0.125, 1).unwrap());
    let cfg = ReconConfig {
        mode: ReconMode::CsWt,
        lambda: 0.0,
        max_iters: 10,
        ..Default::default()
    };
    let out = cs_wt_reconstruct(&y, &a, &cfg, None).unwrap();
    assert!(max_err(&out.image, &a.adjoint(&y).unwrap()) < 1e-10);
}

#[test]
fn cs_objective_is_monotone() {
    let (_, a, y0) = setup(32, make_mask(32, 4.0, 0.125, 2).unwrap());
    let y = add_noise(&y0, &a.mask, 0.02, 1.0, 5).unwrap();
    for eta in [0.5, 0.9, 1.0] {
        let cfg = ReconConfig {
            mode: ReconMode::CsWt,
            eta,
            lambda: 0.02,
            wavelet_levels: 2,
            cycle_spin: false,
            max_iters: 60,
            tolerance: 0.0,
            ..Default::default()
        };
        let out = cs_wt_reconstruct(&y, &a, &cfg, None).unwrap();
        assert_eq!(out.trace.len(), 60);
        let obj: Vec<f64> = out
            .trace
            .records
            .iter()
            .map(|r| r.cs_objective.unwrap())
            .collect();
        for k in 1..obj.len() {
            assert!(
                obj[k] <= obj[k - 1] * (1.0 + 1e-12),
                "eta {eta} step {k}: {} > {}",
                obj[k],
                obj[k - 1]
            );
        }
    }
}

#[test]
fn cycle_spinning_changes_the_estimate_but_keeps_data() {
    let (_, a, y0) = setup(32, make_mask(32, 4.0, 0.125, 2).unwrap());
    let y = add_noise(&y0, &a.mask, 0.02, 1.0, 5).unwrap();
    let run = |cycle_spin| {
        let cfg = ReconConfig {
            mode: ReconMode::CsWt,
            lambda: 0.02,
            wavelet_levels: 2,
            cycle_spin,
            max_iters: 20,
            ..Default::default()
        };
        cs_wt_reconstruct(&y, &a, &cfg, None).unwrap()
    };
    let (plain, spun) = (run(false), run(true));
    assert!(max_err(&plain.image, &spun.image) > 1e-6);
    // eta = 1 restores every measured sample.
    let ry = a.forward(&spun.image).unwrap();
    assert!(ry.sub(&y).norm() < 1e-10 * y.norm());
}

#[test]
fn pnp_identity_denoiser_converges_immediately() {
    let (truth, a, y) = setup(16, make_mask(16, 2.0, 0.125, 3).unwrap());
    let cfg = ReconConfig {
        mode: ReconMode::PnpDenoiser,
        max_iters: 20,
        ..Default::default()
    };
    let out = pnp_denoiser_reconstruct(&y, &a, &IdentityDenoiser, &cfg, Some(&truth)).unwrap();
    assert!(out.trace.len() <= 2);
    assert!(max_err(&out.image, &a.adjoint(&y).unwrap()) < 1e-10);
    assert!(out.trace.records[0].psnr.is_some());
}

#[test]
fn trace_length_follows_max_iters_without_tolerance() {
    let (_, a, y) = setup(16, make_mask(16, 2.0, 0.125, 3).unwrap());
    let cfg = ReconConfig {
        mode: ReconMode::PnpDenoiser,
        max_iters: 7,
        tolerance: 0.0,
        ..Default::default()
    };
    let out = pnp_denoiser_reconstruct(&y, &a, &IdentityDenoiser, &cfg, None).unwrap();
    assert_eq!(out.trace.len(), 7);
    let iters: Vec<usize> = out.trace.records.iter().map(|r| r.iteration).collect();
    assert_eq!(iters, (1..=7).collect::<Vec<_>>());
    let mut buf = Vec::new();
    out.trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(text.starts_with("iteration,psnr,residual"));
}

#[test]
fn content_consistency_with_identity_stub_returns_input() {
    let n = 16;
    let stub = Stub { n, gain: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = ComplexImage::random(n, n, &mut rng);
    let c = stub.encode_content(Contrast::T2w, &x.magnitude()).unwrap();
    let (z, s) = content_consistency(&x, &c, &stub).unwrap();
    assert!(max_err(&z, &x) < 1e-10);
    assert!((s.0[0] - x.magnitude().mean()).abs() < 1e-12);
}

#[test]
fn cr_step_with_zero_gamma_keeps_content() {
    let n = 16;
    let stub = Stub { n, gain: 1.0 };
    let (_, a, y) = setup(n, make_mask(n, 2.0, 0.125, 4).unwrap());
    let c = ContentMap {
        channels: 1,
        h: n,
        w: n,
        data: vec![0.1; n * n],
    };
    let step = cr_step(&c, &StyleCode(vec![0.0]), &a, &y, None, 0.0, &stub).unwrap();
    assert_eq!(step.content, c);
    assert!(step.objective > 0.0);
}

#[test]
fn cr_step_is_stationary_at_zero_residual() {
    let n = 16;
    let stub = Stub { n, gain: 1.0 };
    let (truth, a, y) = setup(n, make_mask(n, 4.0, 0.125, 4).unwrap());
    let c = stub.encode_content(Contrast::T2w, &truth).unwrap();
    let step = cr_step(&c, &StyleCode(vec![0.0]), &a, &y, None, 0.5, &stub).unwrap();
    assert!(step.objective < 1e-20);
    assert!(step.content.l1_dist(&c) < 1e-10);
}

#[test]
fn cr_step_matches_landweber_for_linear_decoder() {
    let n = 16;
    let gain = 0.8;
    let stub = Stub { n, gain };
    let (truth, a, y) = setup(n, SamplingMask::full(n));
    let c = ContentMap {
        channels: 1,
        h: n,
        w: n,
        data: (0..n * n).map(|k| (k % 7) as f64 * 0.1).collect(),
    };
    let gamma = 0.3;
    let step = cr_step(&c, &StyleCode(vec![0.0]), &a, &y, None, gamma, &stub).unwrap();
    let mut objective = 0.0;
    for (k, (&ck, &tk)) in c.data.iter().zip(truth.data()).enumerate() {
        let r = gain * ck - tk;
        objective += r * r;
        let expect = ck - gamma * 2.0 * gain * r;
        assert!((step.content.data[k] - expect).abs() < 1e-10);
    }
    assert!((step.objective - objective).abs() < 1e-9 * objective.max(1.0));
}

#[test]
fn full_mask_recovers_truth_in_every_mode() {
    let n = 16;
    let stub = Stub { n, gain: 0.5 };
    let (truth, a, y) = setup(n, SamplingMask::full(n));
    let reference = blob(n).map(|v| 1.0 - v);
    let priors = Priors {
        model: Some(&stub),
        denoiser: Some(&IdentityDenoiser),
        reference: Some(&reference),
    };
    for mode in ReconMode::ALL {
        let cfg = ReconConfig {
            mode,
            gamma: 0.1,
            lambda: 0.05,
            max_iters: 3,
            ..Default::default()
        };
        let out = reconstruct(&y, &a, &priors, &cfg, Some(&truth)).unwrap();
        assert!(
            out.image.magnitude().mean_abs_diff(&truth).unwrap() < 1e-10,
            "{}",
            mode.as_str()
        );
        assert!(out.trace.records[0].psnr.unwrap() > 100.0);
    }
}

#[test]
fn oracle_mode_plateaus_with_settled_style() {
    let n = 16;
    let stub = Stub { n, gain: 1.0 };
    let (truth, a, y) = setup(n, make_mask(n, 4.0, 0.125, 6).unwrap());
    let cfg = ReconConfig {
        mode: ReconMode::CosmoOracle,
        gamma: 1.0,
        max_iters: 10,
        tolerance: 0.0,
        ..Default::default()
    };
    let out = cosmo_reconstruct(&y, &a, None, Some(&stub), &cfg, Some(&truth)).unwrap();
    let recs = &out.trace.records;
    assert!(recs.iter().all(|r| r.content_change == 0.0));
    assert!(recs[5..].iter().all(|r| r.style_change < 1e-3));
    let psnr: Vec<f64> = recs.iter().map(|r| r.psnr.unwrap()).collect();
    assert!(psnr.windows(2).all(|w| w[1] >= w[0] - 1e-9), "{psnr:?}");
    assert!(psnr[9] > 40.0, "{psnr:?}");
}

#[test]
fn refinement_lowers_the_content_objective() {
    let n = 16;
    let stub = Stub { n, gain: 1.0 };
    let (truth, a, y) = setup(n, make_mask(n, 4.0, 0.125, 7).unwrap());
    let reference = Image::from_fn(n, n, |i, j| truth.get(i, j) * 0.7 + 0.05);
    let cfg = ReconConfig {
        mode: ReconMode::Cosmo,
        gamma: 0.2,
        max_iters: 15,
        tolerance: 0.0,
        ..Default::default()
    };
    let out = cosmo_reconstruct(&y, &a, Some(&reference), Some(&stub), &cfg, Some(&truth)).unwrap();
    let obj: Vec<f64> = out
        .trace
        .records
        .iter()
        .map(|r| r.cr_objective.unwrap())
        .collect();
    assert!(obj.last().unwrap() < &(0.5 * obj[0]));
    let no_cr = cosmo_reconstruct(
        &y,
        &a,
        Some(&reference),
        Some(&stub),
        &ReconConfig {
            mode: ReconMode::CosmoNoCr,
            ..cfg.clone()
        },
        Some(&truth),
    )
    .unwrap();
    assert!(no_cr.trace.records.iter().all(|r| r.content_change == 0.0));
    assert!(out.trace.records.iter().any(|r| r.content_change > 0.0));
}

#[test]
fn missing_priors_are_config_errors() {
    let (truth, a, y) = setup(16, SamplingMask::full(16));
    let stub = Stub { n: 16, gain: 1.0 };
    let none = Priors::default();
    for mode in [
        ReconMode::PnpDenoiser,
        ReconMode::Cosmo,
        ReconMode::CosmoOracle,
    ] {
        let cfg = ReconConfig {
            mode,
            ..Default::default()
        };
        assert!(matches!(
            reconstruct(&y, &a, &none, &cfg, Some(&truth)),
            Err(CosmoError::Config(_))
        ));
    }
    let model_only = Priors {
        model: Some(&stub),
        ..Default::default()
    };
    let cfg = ReconConfig::default();
    assert!(matches!(
        reconstruct(&y, &a, &model_only, &cfg, None),
        Err(CosmoError::Config(_))
    ));
    let oracle = ReconConfig {
        mode: ReconMode::CosmoOracle,
        ..Default::default()
    };
    assert!(matches!(
        reconstruct(&y, &a, &model_only, &oracle, None),
        Err(CosmoError::Config(_))
    ));
}

#[test]
fn config_validation_and_mode_names() {
    assert!(ReconConfig {
        eta: -1.0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(ReconConfig {
        max_iters: 0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(ReconConfig {
        gamma_decay: 0.0,
        ..Default::default()
    }
    .validate()
    .is_err());
    for m in ReconMode::ALL {
        assert_eq!(m.as_str().parse::<ReconMode>().unwrap(), m);
    }
    assert!("bogus".parse::<ReconMode>().is_err());
    let cfg: ReconConfig = toml::from_str("mode = \"cosmo_no_cr\"\ngamma = 0.1").unwrap();
    assert_eq!(cfg.mode, ReconMode::CosmoNoCr);
    assert!(toml::from_str::<ReconConfig>("gama = 0.1").is_err());
}
