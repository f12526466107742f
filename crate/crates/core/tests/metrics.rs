use pnp_cosmo::metrics::{psnr, psnr_masked, ssim, ssim_masked, MetricReport};
use pnp_cosmo::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn noise(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image {
    let vals: Vec<f64> = (0..h * w)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Image::new(h, w, vals).unwrap()
}

#[test]
fn psnr_examples() {
    let r = Image::from_fn(16, 16, |i, j| ((i * 3 + j) % 5) as f64 * 0.25);
    let range = 2.0;
    let far = r.map(|v| v + range);
    assert!(psnr(&far, &r, range).unwrap().abs() < 1e-12);
    let off = r.map(|v| v + 0.1 * range);
    assert!((psnr(&off, &r, range).unwrap() - 20.0).abs() < 1e-10);
    assert!(psnr(&Image::zeros(16, 15), &r, range).is_err());
    assert_eq!(psnr(&r, &r, range).unwrap(), f64::INFINITY);
}

#[test]
fn psnr_masked_ignores_background() {
    let r = Image::from_fn(8, 8, |i, _| i as f64);
    let mut x = r.clone();
    x.set(0, 0, 100.0);
    let mask = Image::from_fn(8, 8, |i, _| if i > 0 { 1.0 } else { 0.0 });
    assert_eq!(
        psnr_masked(&x, &r, 7.0, Some(&mask)).unwrap(),
        f64::INFINITY
    );
}

#[test]
fn psnr_decreases_with_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let r = Image::from_fn(32, 32, |i, j| {
        (i as f64 / 5.0).sin() + (j as f64 / 7.0).cos()
    });
    let n = noise(32, 32, &mut rng);
    let mut last = f64::INFINITY;
    for amp in [0.01, 0.02, 0.05, 0.1, 0.3, 1.0] {
        let x = Image::new(
            32,
            32,
            r.data()
                .iter()
                .zip(n.data())
                .map(|(a, b)| a + amp * b)
                .collect(),
        )
        .unwrap();
        let p = psnr(&x, &r, 4.0).unwrap();
        assert!(p < last);
        last = p;
    }
}

#[test]
fn ssim_identity_and_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = noise(20, 24, &mut rng);
    let b = noise(20, 24, &mut rng);
    assert!((ssim(&a, &a, 1.0).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(ssim(&a, &b, 1.0).unwrap(), ssim(&b, &a, 1.0).unwrap());
    let mask = Image::from_fn(20, 24, |i, _| if i < 10 { 1.0 } else { 0.0 });
    assert_eq!(
        ssim_masked(&a, &b, 1.0, Some(&mask)).unwrap(),
        ssim_masked(&b, &a, 1.0, Some(&mask)).unwrap()
    );
    assert!(ssim(&a, &Image::zeros(20, 23), 1.0).is_err());
}

#[test]
fn ssim_affine_closed_form() {
    // Columns repeat with period 7, so every 7x7 window has the same
    // statistics and the mean SSIM equals the single-window value.
    let r = Image::from_fn(21, 28, |_, j| (j % 7) as f64 / 6.0);
    let (a, b) = (0.6, 0.2);
    let x = r.map(|v| a * v + b);
    let vals: Vec<f64> = (0..7).map(|j| j as f64 / 6.0).collect();
    let my = vals.iter().sum::<f64>() / 7.0;
    // 49 samples, 7 of each column value; sample variance divides by 48.
    let vy = vals.iter().map(|v| 7.0 * (v - my).powi(2)).sum::<f64>() / 48.0;
    let mx = a * my + b;
    let (vx, cxy) = (a * a * vy, a * vy);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let expect =
        (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    let got = ssim(&x, &r, 1.0).unwrap();
    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    assert!(got < 1.0);
}

#[test]
fn ssim_of_independent_noise_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let a = noise(48, 48, &mut rng);
        let b = noise(48, 48, &mut rng);
        assert!(ssim(&a, &b, 8.0).unwrap().abs() < 0.1);
    }
}

#[test]
fn report_rows() {
    let truth = Image::from_fn(8, 8, |i, j| (i + j) as f64);
    let mut rep = MetricReport::new();
    rep.push(&truth.map(|v| v + 1.4), &truth, None).unwrap();
    rep.push(&truth.map(|v| v + 0.14), &truth, None).unwrap();
    let (m, s) = rep.psnr_summary();
    assert!((m - 30.0).abs() < 1e-9 && (s - 200f64.sqrt()).abs() < 1e-9);
    let mut wtr = csv::Writer::from_writer(Vec::new());
    rep.write_rows(&mut wtr, "r0", "cosmo", 4.0).unwrap();
    let text = String::from_utf8(wtr.into_inner().unwrap()).unwrap();
    assert!(text.starts_with("r0,cosmo,4,psnr,"), "{text}");
    assert_eq!(text.lines().count(), 2);
}
