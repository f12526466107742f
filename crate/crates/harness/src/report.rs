//! Summary tables, findings and plots built from a finished run directory.

use std::fs;
use std::path::Path;

use pnp_cosmo::Result;

use crate::analysis::{self, Finding, SummaryRow};
use crate::plot::{self, Series};
use crate::run::{self, TraceRow};
use crate::spec::{ExperimentKind, ExperimentSpec};

pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub findings: Vec<Finding>,
}

/// Reads `metrics.csv`, `trace.csv` and `config.toml` from `dir` and writes
/// `summary.csv`, `findings.csv` and `plots/`.
pub fn report(dir: &Path) -> Result<Report> {
    let spec = ExperimentSpec::load(&dir.join("config.toml"))?;
    let rows = run::read_metrics(&dir.join("metrics.csv"))?;
    let trace_path = dir.join("trace.csv");
    let traces = if trace_path.exists() {
        run::read_traces(&trace_path)?
    } else {
        Vec::new()
    };
    let summary = analysis::summarize(&rows);
    let findings = analysis::findings(spec.experiment, &summary, &traces);

    let mut wtr = csv::Writer::from_path(dir.join("summary.csv"))?;
    for s in &summary {
        wtr.serialize(s)?;
    }
    wtr.flush()?;
    let mut wtr = csv::Writer::from_path(dir.join("findings.csv"))?;
    for f in &findings {
        wtr.serialize(f)?;
    }
    wtr.flush()?;

    let plots = dir.join("plots");
    fs::create_dir_all(&plots)?;
    plot_r(&plots, &summary)?;
    match spec.experiment {
        ExperimentKind::Disentanglement => plot_alpha(&plots, &summary)?,
        ExperimentKind::Capacity => plot_capacity(&plots, &summary)?,
        ExperimentKind::Gamma => plot_gamma(&plots, &summary)?,
        ExperimentKind::Style => plot_style(&plots, &summary)?,
        _ => {}
    }
    plot_traces(&plots, &traces)?;
    Ok(Report { summary, findings })
}

fn series_label(s: &SummaryRow) -> String {
    let g = if s.mode == "cosmo" {
        format!(" gamma={}", s.gamma)
    } else {
        String::new()
    };
    format!("{} {}{g}", s.variant, s.mode)
}

fn noise_settings(summary: &[SummaryRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for s in summary {
        if !out.contains(&(s.center_fraction, s.sigma)) {
            out.push((s.center_fraction, s.sigma));
        }
    }
    out
}

fn plot_r(dir: &Path, summary: &[SummaryRow]) -> Result<()> {
    for (cf, sigma) in noise_settings(summary) {
        let mut series: Vec<Series> = Vec::new();
        for s in summary
            .iter()
            .filter(|s| s.center_fraction == cf && s.sigma == sigma)
        {
            let label = series_label(s);
            match series.iter_mut().find(|x| x.label == label) {
                Some(x) => x.points.push((s.r, s.psnr_mean)),
                None => series.push(Series {
                    label,
                    points: vec![(s.r, s.psnr_mean)],
                }),
            }
        }
        for s in &mut series {
            s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        plot::line_plot(
            &dir.join(format!("psnr_vs_R_cf{cf}_s{sigma}.png")),
            &series,
            true,
        )?;
    }
    Ok(())
}

fn plot_alpha(dir: &Path, summary: &[SummaryRow]) -> Result<()> {
    let mut series = Vec::new();
    for (r, cf, s) in analysis::settings(summary) {
        let modes: Vec<&str> = summary.iter().map(|x| x.mode.as_str()).collect();
        let mut seen = Vec::new();
        for m in modes {
            if seen.contains(&m) {
                continue;
            }
            seen.push(m);
            let points = analysis::alpha_curve(summary, m, r, cf, s);
            if !points.is_empty() {
                series.push(Series {
                    label: format!("{m} R={r} cf={cf} sigma={s}"),
                    points,
                });
            }
        }
    }
    plot::line_plot(&dir.join("psnr_vs_alpha.png"), &series, true)
}

fn plot_capacity(dir: &Path, summary: &[SummaryRow]) -> Result<()> {
    for (r, cf, s) in analysis::settings(summary) {
        let rows: Vec<_> = analysis::at(summary, r, cf, s);
        let mut ns: Vec<usize> = rows.iter().filter_map(|x| x.degrade).collect();
        ns.sort_unstable();
        ns.dedup();
        let mut caps: Vec<f64> = rows.iter().filter_map(|x| x.capacity).collect();
        caps.sort_by(|a, b| b.total_cmp(a));
        caps.dedup();
        let values: Vec<Vec<f64>> = ns
            .iter()
            .map(|&n| {
                caps.iter()
                    .map(|&c| {
                        rows.iter()
                            .find(|x| x.degrade == Some(n) && x.capacity == Some(c))
                            .map_or(f64::NAN, |x| x.psnr_mean)
                    })
                    .collect()
            })
            .collect();
        plot::heatmap(
            &dir.join(format!("capacity_R{r}_cf{cf}_s{s}.png")),
            &ns.iter().map(|n| format!("n={n}")).collect::<Vec<_>>(),
            &caps.iter().map(|c| format!("J={c}")).collect::<Vec<_>>(),
            &values,
        )?;
    }
    Ok(())
}

fn plot_gamma(dir: &Path, summary: &[SummaryRow]) -> Result<()> {
    for (cf, sigma) in noise_settings(summary) {
        let rows: Vec<_> = summary
            .iter()
            .filter(|x| x.mode == "cosmo" && x.center_fraction == cf && x.sigma == sigma)
            .collect();
        let mut rs: Vec<f64> = rows.iter().map(|x| x.r).collect();
        rs.sort_by(f64::total_cmp);
        rs.dedup();
        let mut gs: Vec<f64> = rows.iter().map(|x| x.gamma).collect();
        gs.sort_by(f64::total_cmp);
        gs.dedup();
        let values: Vec<Vec<f64>> = rs
            .iter()
            .map(|&r| {
                gs.iter()
                    .map(|&g| {
                        rows.iter()
                            .find(|x| x.r == r && x.gamma == g)
                            .map_or(f64::NAN, |x| x.psnr_mean)
                    })
                    .collect()
            })
            .collect();
        plot::heatmap(
            &dir.join(format!("gamma_cf{cf}_s{sigma}.png")),
            &rs.iter().map(|r| format!("R={r}")).collect::<Vec<_>>(),
            &gs.iter().map(|g| format!("gamma={g}")).collect::<Vec<_>>(),
            &values,
        )?;
    }
    Ok(())
}

fn plot_style(dir: &Path, summary: &[SummaryRow]) -> Result<()> {
    let mut nmse: Vec<Series> = Vec::new();
    let mut cc: Vec<Series> = Vec::new();
    for s in summary {
        let (Some(e), Some(p)) = (s.style_nmse_mean, s.cc_psnr_mean) else {
            continue;
        };
        let label = format!("{} {} R={} sigma={}", s.variant, s.mode, s.r, s.sigma);
        match nmse.iter().position(|x| x.label == label) {
            Some(i) => {
                nmse[i].points.push((s.center_fraction, e));
                cc[i].points.push((s.center_fraction, p));
            }
            None => {
                nmse.push(Series {
                    label: label.clone(),
                    points: vec![(s.center_fraction, e)],
                });
                cc.push(Series {
                    label,
                    points: vec![(s.center_fraction, p)],
                });
            }
        }
    }
    for s in nmse.iter_mut().chain(cc.iter_mut()) {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    plot::line_plot(&dir.join("style_nmse_vs_cf.png"), &nmse, false)?;
    plot::line_plot(&dir.join("cc_psnr_vs_cf.png"), &cc, false)
}

/// Per-iteration PSNR and refinement objective of the first slice.
fn plot_traces(dir: &Path, traces: &[TraceRow]) -> Result<()> {
    let Some(first) = traces.first() else {
        return Ok(());
    };
    let groups: Vec<_> = analysis::trace_groups(traces)
        .into_iter()
        .filter(|g| g[0].phantom == first.phantom && g[0].slice == first.slice)
        .collect();
    let label = |t: &TraceRow| {
        let g = if t.mode == "cosmo" {
            format!(" gamma={}", t.gamma)
        } else {
            String::new()
        };
        format!(
            "{} {} R={} cf={} sigma={}{g}",
            t.variant, t.mode, t.r, t.center_fraction, t.sigma
        )
    };
    let psnr: Vec<Series> = groups
        .iter()
        .filter(|g| g.iter().all(|t| t.psnr.is_some()))
        .map(|g| Series {
            label: label(g[0]),
            points: g
                .iter()
                .map(|t| (t.iteration as f64, t.psnr.unwrap_or(f64::NAN)))
                .collect(),
        })
        .collect();
    if !psnr.is_empty() {
        plot::line_plot(&dir.join("trace_psnr.png"), &psnr, false)?;
    }
    let cr: Vec<Series> = groups
        .iter()
        .filter(|g| g.iter().all(|t| t.cr_objective.is_some()))
        .map(|g| Series {
            label: label(g[0]),
            points: g
                .iter()
                .map(|t| (t.iteration as f64, t.cr_objective.unwrap_or(f64::NAN)))
                .collect(),
        })
        .collect();
    if !cr.is_empty() {
        plot::line_plot(&dir.join("trace_cr_objective.png"), &cr, false)?;
    }
    Ok(())
}

/// Findings as aligned text lines for the terminal.
pub fn format_findings(findings: &[Finding]) -> String {
    let width = findings.iter().map(|f| f.name.len()).max().unwrap_or(0);
    findings
        .iter()
        .map(|f| {
            let tag = match f.holds {
                Some(true) => "holds",
                Some(false) => "FAILS",
                None => "",
            };
            format!("{:width$}  {:>5}  {}\n", f.name, tag, f.value)
        })
        .collect()
}
