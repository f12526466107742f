use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::{Parser, Subcommand};
use cosmo_harness::run::{self, Cell, Context, MetricRow};
use cosmo_harness::{pipeline, report, ExperimentKind, ExperimentSpec};
use pnp_cosmo::recon::ReconMode;

#[derive(Parser)]
#[command(
    name = "cosmo",
    about = "Desk-scale content/style prior reconstruction experiments"
)]
struct Cli {
    /// Experiment spec (TOML). Fields left out take the sweep preset's values.
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// Start from a built-in preset instead of a spec file.
    #[arg(long, global = true, value_enum)]
    preset: Option<ExperimentKind>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; results go to `<out>/<name>/<run-id>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the resolved spec as TOML.
    ShowSpec,
    /// Simulate the phantom dataset.
    GenData,
    /// Pre-train one model per grid variant.
    Pretrain,
    /// Pre-train, then fine-tune on the paired subset.
    Finetune,
    /// Train the CNN denoiser baseline.
    TrainDenoiser,
    /// Reconstruct one slice with one setting.
    Reconstruct {
        #[arg(long, default_value = "cosmo")]
        mode: ReconMode,
        #[arg(long = "R", default_value_t = 4.0)]
        r: f64,
        #[arg(long, default_value_t = 0.08)]
        cf: f64,
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        /// Index into the evaluation split.
        #[arg(long, default_value_t = 0)]
        slice: usize,
        /// Index into the grid's model variants.
        #[arg(long, default_value_t = 0)]
        variant: usize,
    },
    /// Run the full grid and write metrics, traces and the report.
    Sweep,
    /// Rebuild summary, findings and plots from an existing run.
    Report {
        /// Run directory; defaults to the one the spec maps to.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn load_spec(cli: &Cli) -> Result<ExperimentSpec> {
    let mut spec = match (&cli.spec, cli.preset) {
        (Some(_), Some(_)) => bail!("give either --spec or --preset, not both"),
        (Some(path), None) => ExperimentSpec::load(path)?,
        (None, Some(kind)) => ExperimentSpec::preset(kind),
        (None, None) => ExperimentSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if let Some(out) = &cli.out {
        spec.out = out.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let spec = load_spec(&cli)?;
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let resolved = spec.resolved();
    match cli.command {
        Command::ShowSpec => print!("{}", resolved.to_toml()),
        Command::GenData => {
            let ds = pipeline::dataset(&resolved)?;
            for split in [
                pnp_cosmo::dataset::Split::Train,
                pnp_cosmo::dataset::Split::Val,
                pnp_cosmo::dataset::Split::Test,
            ] {
                println!("{:5} {} slices", split.as_str(), ds.split(split).count());
            }
            println!("paired {}", ds.paired().count());
        }
        Command::Pretrain | Command::Finetune => {
            let ds = pipeline::dataset(&resolved)?;
            let finetune = matches!(cli.command, Command::Finetune);
            let stage = ExperimentSpec {
                grid: with_finetune(&resolved, finetune),
                ..resolved.clone()
            };
            let pool = run::thread_pool(jobs)?;
            let variants = pipeline::variants(&stage);
            pool.install(|| {
                use rayon::prelude::*;
                variants
                    .par_iter()
                    .map(|v| pipeline::trained(&stage, &ds, v).map(|_| v.label()))
                    .collect::<pnp_cosmo::Result<Vec<_>>>()
            })?
            .iter()
            .for_each(|l| println!("{l} ready"));
        }
        Command::TrainDenoiser => {
            let ds = pipeline::dataset(&resolved)?;
            pipeline::denoiser(&resolved, &ds)?;
            println!("denoiser ready");
        }
        Command::Reconstruct {
            mode,
            r,
            cf,
            sigma,
            gamma,
            slice,
            variant,
        } => reconstruct_one(&spec, jobs, mode, r, cf, sigma, gamma, slice, variant)?,
        Command::Sweep => {
            let out = run::sweep(&spec, jobs)?;
            let rep = report::report(&out.dir)?;
            print!("{}", report::format_findings(&rep.findings));
            println!("results in {}", out.dir.display());
        }
        Command::Report { dir } => {
            let dir = dir.unwrap_or_else(|| spec.run_dir());
            let rep =
                report::report(&dir).with_context(|| format!("report for {}", dir.display()))?;
            print!("{}", report::format_findings(&rep.findings));
        }
    }
    Ok(())
}

fn with_finetune(spec: &ExperimentSpec, finetune: bool) -> cosmo_harness::spec::Grid {
    cosmo_harness::spec::Grid {
        finetune,
        ..spec.grid.clone()
    }
}

#[allow(clippy::too_many_arguments)]
fn reconstruct_one(
    spec: &ExperimentSpec,
    jobs: usize,
    mode: ReconMode,
    r: f64,
    cf: f64,
    sigma: f64,
    gamma: f64,
    slice: usize,
    variant: usize,
) -> Result<()> {
    let mut single = spec.clone();
    single.grid.modes = vec![mode];
    single.grid.accelerations = vec![r];
    single.grid.center_fractions = vec![cf];
    single.grid.noise_levels = vec![sigma];
    single.grid.gammas = vec![gamma];
    single.grid.max_slices = slice + 1;
    let pool = run::thread_pool(jobs)?;
    let ctx = Context::prepare(&single, &pool)?;
    if slice >= ctx.cases.len() {
        bail!(
            "slice {slice} is out of range; the split has {} slices",
            ctx.cases.len()
        );
    }
    if mode.is_cosmo() && variant >= ctx.variants.len() {
        bail!(
            "variant {variant} is out of range; the grid has {}",
            ctx.variants.len()
        );
    }
    let cell = Cell {
        variant: mode.is_cosmo().then_some(variant),
        mode,
        r,
        center_fraction: cf,
        sigma,
        gamma: if mode == ReconMode::Cosmo { gamma } else { 0.0 },
        slice,
    };
    let res = ctx.evaluate(&cell)?;
    let truth = &ctx.cases[slice].truth;
    let dir = spec
        .run_dir()
        .join("single")
        .join(format!("{}_slice{slice}", run::cell_label(&res.row)));
    std::fs::create_dir_all(&dir)?;
    res.image
        .write_png(&dir.join("recon.png"), Some(truth.max()))?;
    res.image.write_raw(&dir.join("recon.rimg"))?;
    truth.write_png(&dir.join("truth.png"), Some(truth.max()))?;
    res.trace
        .write_csv(std::fs::File::create(dir.join("trace.csv"))?)?;
    let mut wtr = csv::Writer::from_path(dir.join("metrics.csv"))?;
    wtr.serialize::<&MetricRow>(&res.row)?;
    wtr.flush()?;
    let max_err = res
        .image
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!(
        "{} psnr {:.3} ssim {:.4} iterations {} max_abs_error {max_err:.3e}",
        mode.as_str(),
        res.row.psnr,
        res.row.ssim,
        res.row.iterations
    );
    println!("written to {}", dir.display());
    Ok(())
}
