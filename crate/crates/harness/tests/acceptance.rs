//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Trained models are cached under the cargo target tmp dir, so only the
//! first run pays for training.

use std::path::PathBuf;

use cosmo_harness::analysis::{self, SummaryRow};
use cosmo_harness::run::{self, Cell, CellResult, Context, TraceRow};
use cosmo_harness::{ExperimentKind, ExperimentSpec};
use num_complex::Complex64;
use pnp_cosmo::csmodel::{ContentMap, ContentStyleModel, CosmoModel, ModelConfig};
use pnp_cosmo::dataset::{DatasetConfig, Split};
use pnp_cosmo::denoiser::{CnnDenoiser, DenoiserConfig};
use pnp_cosmo::kspace::{
    make_mask, synthetic_coils, ComplexImage, ForwardOperator, KSpaceData, SamplingMask,
};
use pnp_cosmo::metrics::psnr_masked;
use pnp_cosmo::phantom::Contrast;
use pnp_cosmo::recon::{cr_step, reconstruct, Haar, Priors, ReconConfig, ReconMode};
use pnp_cosmo::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorgrad::check::{numeric_gradient, relative_error};
use tensorgrad::{Graph, Result as TgResult, Tensor, Var};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn cache_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn preset(kind: ExperimentKind) -> ExperimentSpec {
    let mut s = ExperimentSpec::preset(kind);
    s.out = cache_root();
    s.grid.save_images = false;
    s
}

fn sweep(spec: &ExperimentSpec) -> (Vec<SummaryRow>, Vec<CellResult>) {
    let out = run::sweep(spec, jobs()).expect("sweep runs");
    (analysis::summarize(&out.rows()), out.results)
}

// Operators

fn random_kspace(h: usize, w: usize, n: usize, rng: &mut ChaCha8Rng) -> KSpaceData {
    KSpaceData {
        h,
        w,
        coils: (0..n)
            .map(|_| ComplexImage::random(h, w, rng).data().to_vec())
            .collect(),
        noise_sigma: 0.0,
    }
}

fn operators() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for k in 0..100u64 {
        let h = 2 * rng.random_range(3..=16);
        let w = 2 * rng.random_range(3..=16);
        let r = rng.random_range(1.0..8.0);
        let cf = rng.random_range(0.0..1.0 / r);
        let mask = make_mask(w, r, cf, k).unwrap();
        let n = rng.random_range(1..=4);
        let a = if n == 1 {
            ForwardOperator::new(h, mask)
        } else {
            ForwardOperator::with_coils(h, mask, synthetic_coils(h, w, n, k)).unwrap()
        };
        let x = ComplexImage::random(h, w, &mut rng);
        let y = random_kspace(h, w, n, &mut rng);
        let lhs = a.forward(&x).unwrap().dot(&y);
        let rhs = x.dot(&a.adjoint(&y).unwrap());
        worst = worst.max((lhs - rhs).norm() / lhs.norm().max(rhs.norm()));
    }
    let mut round_trip = 0.0f64;
    for levels in 0..=4 {
        let x = ComplexImage::random(32, 48, &mut rng);
        let psi = Haar::new(levels);
        let back = psi.inverse(&psi.forward(&x).unwrap()).unwrap();
        round_trip = round_trip.max(
            back.data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max),
        );
    }
    outcome(
        worst < 1e-8 && round_trip < 1e-10,
        format!("adjoint relative error {worst:.1e} over 100 configs, wavelet round trip {round_trip:.1e}"),
    )
}

// Gradients

type Builder = dyn Fn(&mut Graph, &[Var]) -> TgResult<Var>;

/// Worst relative error of `d/dinputs <k, op(inputs)>` over 20 random probes.
fn layer_error(shapes: &[Vec<usize>], build: &Builder) -> f64 {
    let mut worst = 0.0f64;
    for probe in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(77 + probe);
        let inputs: Vec<Tensor> = shapes
            .iter()
            .map(|s| Tensor::randn(s, 1.0, &mut rng))
            .collect();
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
        let out = build(&mut g, &vars).unwrap();
        let k: Vec<f64> = (0..g.value(out).len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let loss = g.dot_const(out, &k).unwrap();
        g.backward(loss).unwrap();
        for (i, input) in inputs.iter().enumerate() {
            let analytic = g
                .grad(vars[i])
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; input.len()]);
            let f = |x: &[f64]| {
                let mut g = Graph::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let t = if j == i {
                            Tensor::new(t.shape(), x.to_vec()).unwrap()
                        } else {
                            t.clone()
                        };
                        g.constant(t)
                    })
                    .collect();
                let out = build(&mut g, &vars).unwrap();
                g.value(out).data().iter().zip(&k).map(|(a, b)| a * b).sum()
            };
            worst = worst.max(relative_error(
                &analytic,
                &numeric_gradient(f, input.data(), 1e-6),
            ));
        }
    }
    worst
}

fn tiny_model(seed: u64) -> CosmoModel {
    CosmoModel::new(ModelConfig {
        height: 16,
        width: 16,
        downsample: 2,
        style_dim: 4,
        base_channels: 4,
        n_res: 1,
        mlp_hidden: 8,
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn smooth_image(n: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, b): (f64, f64) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
    Image::from_fn(n, n, |i, j| {
        0.5 + 0.4 * (a * i as f64 / n as f64 * 6.0).sin() * (b * j as f64 / n as f64 * 6.0).cos()
    })
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = Tensor::randn(&[3], 1.0, &mut rng).into_data();
    let v = Tensor::randn(&[8], 1.0, &mut rng).into_data();
    let layers: Vec<(&str, Vec<Vec<usize>>, Box<Builder>)> = vec![
        (
            "conv2d",
            vec![vec![2, 2, 5, 5], vec![3, 2, 3, 3], vec![3]],
            Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), 2, 1)),
        ),
        (
            "conv_transpose2d",
            vec![vec![2, 2, 3, 3], vec![2, 3, 4, 4], vec![3]],
            Box::new(|g, v| g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1)),
        ),
        (
            "linear",
            vec![vec![3, 5], vec![4, 5], vec![4]],
            Box::new(|g, v| g.linear(v[0], v[1], Some(v[2]))),
        ),
        (
            "instance_norm",
            vec![vec![2, 3, 4, 4]],
            Box::new(|g, v| g.instance_norm(v[0], 1e-5)),
        ),
        (
            "adain",
            vec![vec![2, 3, 4, 4], vec![2, 3], vec![2, 3]],
            Box::new(|g, v| g.adain(v[0], v[1], v[2], 1e-5)),
        ),
        ("relu", vec![vec![3, 7]], Box::new(|g, v| Ok(g.relu(v[0])))),
        (
            "leaky_relu",
            vec![vec![3, 7]],
            Box::new(|g, v| Ok(g.leaky_relu(v[0], 0.2))),
        ),
        ("tanh", vec![vec![3, 7]], Box::new(|g, v| Ok(g.tanh(v[0])))),
        (
            "upsample_nearest",
            vec![vec![1, 2, 3, 3]],
            Box::new(|g, v| g.upsample_nearest(v[0], 2)),
        ),
        (
            "global_avg_pool",
            vec![vec![2, 3, 4, 4]],
            Box::new(|g, v| g.global_avg_pool(v[0])),
        ),
        (
            "spectral_norm",
            vec![vec![3, 2, 2, 2]],
            Box::new(move |g, x| g.spectral_norm(x[0], &u, &v)),
        ),
        (
            "l1_loss",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|g, v| g.l1_loss(v[0], v[1])),
        ),
        (
            "mse_loss",
            vec![vec![3, 4], vec![3, 4]],
            Box::new(|g, v| g.mse_loss(v[0], v[1])),
        ),
    ];
    let mut worst = ("", 0.0f64);
    for (name, shapes, build) in &layers {
        let e = layer_error(shapes, build.as_ref());
        if e > worst.1 {
            worst = (name, e);
        }
    }

    // Decoder content gradient, checked along 20 random directions.
    let model = tiny_model(3);
    let x = smooth_image(16, 4);
    let c = model.encode_content(Contrast::T1w, &x).unwrap();
    let s = model.encode_style(Contrast::T2w, &x).unwrap();
    let up = smooth_image(16, 5).map(|v| v - 0.5);
    let (_, grad) = model
        .decode_vjp(Contrast::T2w, &c, &s, &|_: &Image| Ok(up.clone()))
        .unwrap();
    let mut dec = 0.0f64;
    for probe in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + probe);
        let dir = ContentMap {
            data: (0..c.data.len())
                .map(|_| rng.random::<f64>() - 0.5)
                .collect(),
            ..c.clone()
        };
        let f = |t: f64| {
            let y = model.decode(Contrast::T2w, &c.axpy(-t, &dir), &s).unwrap();
            y.data()
                .iter()
                .zip(up.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let eps = 1e-5;
        let numeric = (f(eps) - f(-eps)) / (2.0 * eps);
        let analytic: f64 = grad.data.iter().zip(&dir.data).map(|(a, b)| a * b).sum();
        dec = dec.max((numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-8));
    }
    outcome(
        worst.1 < 1e-4 && dec < 1e-3,
        format!(
            "{} layers x 20 probes, worst {} {:.1e}; decoder content gradient {:.1e}",
            layers.len(),
            worst.0,
            worst.1,
            dec
        ),
    )
}

// Exact cases

fn exact_cases() -> Outcome {
    let n = 16;
    let truth = smooth_image(n, 11);
    let reference = smooth_image(n, 12);
    let a = ForwardOperator::new(n, SamplingMask::full(n));
    let y = a.forward(&ComplexImage::from_real(&truth)).unwrap();
    let model = tiny_model(7);
    let denoiser = CnnDenoiser::new(DenoiserConfig {
        channels: 4,
        depth: 2,
        ..DenoiserConfig::default()
    })
    .unwrap();
    let priors = Priors {
        model: Some(&model),
        denoiser: Some(&denoiser),
        reference: Some(&reference),
    };
    let mut worst = 0.0f64;
    for mode in ReconMode::ALL {
        let cfg = ReconConfig {
            mode,
            eta: 1.0,
            gamma: 0.1,
            max_iters: 5,
            ..ReconConfig::default()
        };
        let out = reconstruct(&y, &a, &priors, &cfg, Some(&truth)).unwrap();
        let err = out
            .image
            .data()
            .iter()
            .zip(truth.data())
            .map(|(x, t)| (x - Complex64::new(*t, 0.0)).norm())
            .fold(0.0, f64::max);
        worst = worst.max(err);
    }

    let c = model.encode_content(Contrast::T1w, &reference).unwrap();
    let s = model.encode_style(Contrast::T2w, &truth).unwrap();
    let mask = make_mask(n, 2.0, 0.125, 3).unwrap();
    let au = ForwardOperator::new(n, mask);
    let yu = au.forward(&ComplexImage::from_real(&truth)).unwrap();
    let frozen = cr_step(&c, &s, &au, &yu, None, 0.0, &model)
        .unwrap()
        .content
        == c;
    let decoded = model.decode(Contrast::T2w, &c, &s).unwrap();
    let y_self = au.forward(&ComplexImage::from_real(&decoded)).unwrap();
    let stationary = cr_step(&c, &s, &au, &y_self, None, 0.5, &model)
        .unwrap()
        .content
        == c;
    outcome(
        worst < 1e-8 && frozen && stationary,
        format!(
            "full-mask max error {worst:.1e} over {} modes; gamma=0 step unchanged: {frozen}; zero-residual step unchanged: {stationary}",
            ReconMode::ALL.len()
        ),
    )
}

// CS-WT baseline

fn cs_wt_spec(split: Split, lambda: f64, levels: usize) -> ExperimentSpec {
    let mut s = preset(ExperimentKind::Sweep);
    s.name = "cs_wt_baseline".into();
    s.dataset = DatasetConfig {
        height: 64,
        width: 64,
        ..s.dataset
    };
    s.grid.modes = vec![ReconMode::CsWt];
    s.grid.accelerations = vec![4.0];
    s.grid.noise_levels = vec![0.01];
    s.grid.split = split;
    s.recon = ReconConfig {
        lambda,
        wavelet_levels: levels,
        max_iters: 1500,
        ..s.recon
    };
    s
}

fn zero_filled_psnr(spec: &ExperimentSpec) -> f64 {
    let pool = run::thread_pool(1).unwrap();
    let ctx = Context::prepare(spec, &pool).unwrap();
    let mut total = 0.0;
    for (i, case) in ctx.cases.iter().enumerate() {
        let cell = Cell {
            variant: None,
            mode: ReconMode::CsWt,
            r: 4.0,
            center_fraction: spec.grid.center_fractions[0],
            sigma: 0.01,
            gamma: 0.0,
            slice: i,
        };
        let (a, y) = ctx.measure(&cell).unwrap();
        let zf = a.adjoint(&y).unwrap().magnitude();
        total += psnr_masked(&zf, &case.truth, case.truth.max(), Some(&case.foreground)).unwrap();
    }
    total / ctx.cases.len() as f64
}

fn cs_wt_baseline() -> Outcome {
    let mut grid = Vec::new();
    for levels in 1..=3 {
        for lambda in [0.0025, 0.005, 0.01, 0.02] {
            grid.push((
                lambda,
                levels,
                sweep(&cs_wt_spec(Split::Val, lambda, levels)).0[0].psnr_mean,
            ));
        }
    }
    let (lambda, levels, _) = *grid.iter().max_by(|a, b| a.2.total_cmp(&b.2)).unwrap();
    let spec = cs_wt_spec(Split::Test, lambda, levels);
    let cs = sweep(&spec).0[0].psnr_mean;
    let zf = zero_filled_psnr(&spec);
    outcome(
        cs - zf >= 2.0,
        format!(
            "64x64 R=4 sigma=0.01: cs_wt {cs:.2} dB, zero-filled {zf:.2} dB, gain {:+.2} dB (lambda {lambda}, {levels} levels tuned on val)",
            cs - zf
        ),
    )
}

// Trend criteria

fn tuned_gamma(gamma: &[SummaryRow], r: f64) -> f64 {
    analysis::argmax_gamma(gamma, r, 0.08, 0.01).expect("gamma sweep covers R")
}

fn guidance(gamma: &[SummaryRow]) -> Outcome {
    let g = tuned_gamma(gamma, 8.0);
    let mut spec = preset(ExperimentKind::Sweep);
    spec.grid.modes = vec![
        ReconMode::CsWt,
        ReconMode::Cosmo,
        ReconMode::CosmoNoCr,
        ReconMode::CosmoOracle,
    ];
    spec.grid.accelerations = vec![8.0];
    spec.grid.gammas = vec![g];
    let (summary, _) = sweep(&spec);
    let rows = analysis::at(&summary, 8.0, 0.08, 0.01);
    let p = |m| analysis::mode_psnr(&rows, m, None).unwrap();
    let (oracle, cosmo, no_cr, cs) = (
        p(ReconMode::CosmoOracle),
        p(ReconMode::Cosmo),
        p(ReconMode::CosmoNoCr),
        p(ReconMode::CsWt),
    );
    outcome(
        oracle >= cosmo && cosmo >= no_cr && cosmo >= cs,
        format!(
            "R=8 test mean: oracle {oracle:.2}, cosmo {cosmo:.2} (gamma {g}), no_cr {no_cr:.2}, cs_wt {cs:.2}; margins {:+.2} / {:+.2} / {:+.2} dB",
            oracle - cosmo,
            cosmo - no_cr,
            cosmo - cs
        ),
    )
}

fn disentanglement() -> Outcome {
    let mut spec = preset(ExperimentKind::Disentanglement);
    spec.grid.accelerations = vec![4.0];
    let (summary, _) = sweep(&spec);
    let curve = analysis::alpha_curve(&summary, ReconMode::CosmoNoCr.as_str(), 4.0, 0.08, 0.01);
    let text: Vec<String> = curve
        .iter()
        .map(|(a, p)| format!("alpha {a}: {p:.2}"))
        .collect();
    let pass = curve.len() == 3 && curve[1].1 > curve[0].1 && curve[1].1 > curve[2].1;
    outcome(pass, format!("R=4 {}", text.join(", ")))
}

fn capacity() -> Outcome {
    let mut spec = preset(ExperimentKind::Capacity);
    spec.grid.degradations = vec![1, 4];
    let (summary, _) = sweep(&spec);
    let arg = analysis::capacity_argmax(&summary, ReconMode::CosmoNoCr.as_str(), 4.0, 0.08, 0.01);
    let best = |n| arg.iter().find(|a| a.0 == n).map(|a| a.1).unwrap();
    let (j1, j4) = (best(1), best(4));
    let table: Vec<String> = summary
        .iter()
        .map(|s| {
            format!(
                "n{} J{}: {:.2}",
                s.degrade.unwrap_or(0),
                s.capacity.unwrap_or(0.0),
                s.psnr_mean
            )
        })
        .collect();
    outcome(
        j1 >= j4,
        format!("argmax J: n=1 -> {j1}, n=4 -> {j4} ({})", table.join(", ")),
    )
}

fn convergence(gamma: &[SummaryRow]) -> Outcome {
    let g = tuned_gamma(gamma, 2.0);
    let mut spec = preset(ExperimentKind::Convergence);
    spec.grid.gammas = vec![g];
    let (_, results) = sweep(&spec);
    let traces: Vec<TraceRow> = results.iter().flat_map(run::trace_rows).collect();
    let groups = analysis::trace_groups(&traces);
    let plateau = groups
        .iter()
        .filter(|t| t[0].mode == ReconMode::CosmoOracle.as_str())
        .filter_map(|t| analysis::plateau_iteration(t, 0.05))
        .max()
        .unwrap();
    let style = groups
        .iter()
        .map(|t| analysis::late_style_change(t, 5))
        .fold(0.0, f64::max);
    let mono: Vec<bool> = groups
        .iter()
        .filter(|t| t[0].mode == ReconMode::Cosmo.as_str())
        .map(|t| analysis::cr_objective_monotone(t, 10).unwrap())
        .collect();
    let frac = mono.iter().filter(|&&m| m).count() as f64 / mono.len() as f64;
    outcome(
        plateau <= 3 && style < 1e-3 && frac >= 0.9,
        format!(
            "oracle plateau by iteration {plateau} (worst slice); max style change after iteration 5: {style:.1e}; CR objective non-increasing on {:.0}% of slices (gamma {g})",
            100.0 * frac
        ),
    )
}

fn cr_utility() -> Outcome {
    let mut lesion = preset(ExperimentKind::Lesion);
    lesion.grid.accelerations = vec![2.0];
    let (ls, _) = sweep(&lesion);
    let roi = |m: ReconMode| {
        ls.iter()
            .find(|s| s.mode == m.as_str())
            .and_then(|s| s.roi_psnr_mean)
            .unwrap()
    };
    let (lc, ln) = (roi(ReconMode::Cosmo), roi(ReconMode::CosmoNoCr));
    let (ms, _) = sweep(&preset(ExperimentKind::Misalign));
    let rows = analysis::at(&ms, 2.0, 0.08, 0.01);
    let mc = analysis::mode_psnr(&rows, ReconMode::Cosmo, None).unwrap();
    let mn = analysis::mode_psnr(&rows, ReconMode::CosmoNoCr, None).unwrap();
    outcome(
        lc > ln && mc > mn,
        format!("lesion ROI R=2: cr {lc:.2} vs no_cr {ln:.2}; 2 deg rotation R=2: cr {mc:.2} vs no_cr {mn:.2}"),
    )
}

fn gamma_trend(gamma: &[SummaryRow]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for sigma in [0.01, 0.03] {
        let best: Vec<f64> = [2.0, 4.0, 8.0]
            .iter()
            .map(|&r| analysis::argmax_gamma(gamma, r, 0.08, sigma).unwrap())
            .collect();
        pass &= analysis::non_increasing(&best);
        parts.push(format!(
            "sigma {sigma}: argmax gamma over R=2,4,8 = {best:?}"
        ));
    }
    outcome(pass, parts.join("; "))
}

// Reproducibility

fn tiny_spec(out: PathBuf) -> ExperimentSpec {
    let mut s = ExperimentSpec::preset(ExperimentKind::Sweep);
    s.name = "tiny".into();
    s.out = out;
    s.seed = 3;
    s.dataset = DatasetConfig {
        n_train: 3,
        n_val: 1,
        n_test: 1,
        paired_fraction: 0.34,
        slices_per_phantom: 2,
        ..s.dataset
    };
    s.model = ModelConfig {
        base_channels: 4,
        n_res: 1,
        mlp_hidden: 8,
        style_dim: 4,
        ..s.model
    };
    s.pretrain.iterations = 6;
    s.finetune.iterations = 3;
    s.denoiser = DenoiserConfig {
        channels: 4,
        depth: 2,
        iterations: 5,
        ..s.denoiser
    };
    s.recon.max_iters = 5;
    s.grid.accelerations = vec![2.0, 4.0];
    s.grid.gammas = vec![0.1, 0.3];
    s
}

fn reproducibility() -> Outcome {
    let read = |dir: &tempfile::TempDir| {
        let out = run::sweep(&tiny_spec(dir.path().to_path_buf()), jobs()).unwrap();
        std::fs::read(out.dir.join("metrics.csv")).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (first, second) = (read(&a), read(&b));
    let rows = first
        .iter()
        .filter(|&&c| c == b'\n')
        .count()
        .saturating_sub(1);
    outcome(
        first == second,
        format!(
            "two fresh runs of a {rows}-row sweep: metrics.csv identical = {}",
            first == second
        ),
    )
}

fn check(id: usize, f: impl FnOnce() -> Outcome) -> (usize, bool) {
    let o = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        outcome(false, format!("panicked: {msg}"))
    });
    println!(
        "criterion {id:2}: {}  {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    (id, o.pass)
}

fn main() {
    let mut results = vec![
        check(1, operators),
        check(2, gradients),
        check(3, exact_cases),
        check(4, cs_wt_baseline),
    ];
    let gamma = std::panic::catch_unwind(|| sweep(&preset(ExperimentKind::Gamma)).0).ok();
    let tuned = |id: usize, f: fn(&[SummaryRow]) -> Outcome| match &gamma {
        Some(g) => check(id, || f(g)),
        None => check(id, || outcome(false, "gamma sweep failed")),
    };
    results.push(tuned(5, guidance));
    results.push(check(6, disentanglement));
    results.push(check(7, capacity));
    results.push(tuned(8, convergence));
    results.push(check(9, cr_utility));
    results.push(tuned(10, gamma_trend));
    results.push(check(11, reproducibility));

    // Trend criteria report but only gate the exit code in strict mode.
    let strict = std::env::var("COSMO_ACCEPT_STRICT").is_ok_and(|v| v == "1");
    let fatal = results
        .iter()
        .any(|&(id, pass)| !pass && (strict || matches!(id, 1 | 2 | 3 | 11)));
    if fatal {
        std::process::exit(1);
    }
}
