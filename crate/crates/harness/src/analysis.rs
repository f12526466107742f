//! Aggregation of per-slice metrics and the checks reported per experiment.

use std::collections::BTreeMap;

use pnp_cosmo::metrics::mean_std;
use pnp_cosmo::recon::ReconMode;
use serde::{Deserialize, Serialize};

use crate::run::{MetricRow, TraceRow};
use crate::spec::ExperimentKind;

/// Mean and spread over slices of one setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
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
    pub n: usize,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub roi_psnr_mean: Option<f64>,
    pub roi_psnr_std: Option<f64>,
    pub style_nmse_mean: Option<f64>,
    pub cc_psnr_mean: Option<f64>,
}

/// Groups by setting, in order of first appearance.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut groups: Vec<(SummaryRow, Vec<&MetricRow>)> = Vec::new();
    for row in rows {
        let same = |s: &SummaryRow| {
            s.variant == row.variant
                && s.mode == row.mode
                && s.r == row.r
                && s.center_fraction == row.center_fraction
                && s.sigma == row.sigma
                && s.gamma == row.gamma
        };
        match groups.iter_mut().find(|(s, _)| same(s)) {
            Some((_, members)) => members.push(row),
            None => groups.push((
                SummaryRow {
                    variant: row.variant.clone(),
                    alpha: row.alpha,
                    capacity: row.capacity,
                    degrade: row.degrade,
                    mode: row.mode.clone(),
                    r: row.r,
                    center_fraction: row.center_fraction,
                    sigma: row.sigma,
                    gamma: row.gamma,
                    n: 0,
                    psnr_mean: 0.0,
                    psnr_std: 0.0,
                    ssim_mean: 0.0,
                    ssim_std: 0.0,
                    roi_psnr_mean: None,
                    roi_psnr_std: None,
                    style_nmse_mean: None,
                    cc_psnr_mean: None,
                },
                vec![row],
            )),
        }
    }
    groups
        .into_iter()
        .map(|(mut s, members)| {
            let psnr: Vec<f64> = members.iter().map(|m| m.psnr).collect();
            let ssim: Vec<f64> = members.iter().map(|m| m.ssim).collect();
            let roi: Vec<f64> = members.iter().filter_map(|m| m.roi_psnr).collect();
            s.n = members.len();
            (s.psnr_mean, s.psnr_std) = mean_std(&psnr);
            (s.ssim_mean, s.ssim_std) = mean_std(&ssim);
            if !roi.is_empty() {
                let (m, sd) = mean_std(&roi);
                s.roi_psnr_mean = Some(m);
                s.roi_psnr_std = Some(sd);
            }
            s.style_nmse_mean = mean_of(members.iter().map(|m| m.style_nmse));
            s.cc_psnr_mean = mean_of(members.iter().map(|m| m.cc_psnr));
            s
        })
        .collect()
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.collect::<Option<_>>()?;
    (!v.is_empty()).then(|| mean_std(&v).0)
}

/// One reported check or number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub name: String,
    pub value: String,
    /// `None` for plain measurements.
    pub holds: Option<bool>,
}

impl Finding {
    fn check(name: impl Into<String>, value: impl Into<String>, holds: bool) -> Self {
        Finding {
            name: name.into(),
            value: value.into(),
            holds: Some(holds),
        }
    }

    fn note(name: impl Into<String>, value: impl Into<String>) -> Self {
        Finding {
            name: name.into(),
            value: value.into(),
            holds: None,
        }
    }
}

fn distinct<T: PartialEq + Copy>(it: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for v in it {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Summary rows of one sampling setting.
pub fn at(summary: &[SummaryRow], r: f64, cf: f64, sigma: f64) -> Vec<&SummaryRow> {
    summary
        .iter()
        .filter(|s| s.r == r && s.center_fraction == cf && s.sigma == sigma)
        .collect()
}

fn best<'a>(rows: impl Iterator<Item = &'a SummaryRow>) -> Option<&'a SummaryRow> {
    rows.max_by(|a, b| a.psnr_mean.total_cmp(&b.psnr_mean))
}

/// Mean PSNR of `mode`; for `cosmo` either at the given gamma or at the
/// best one present.
pub fn mode_psnr(rows: &[&SummaryRow], mode: ReconMode, gamma: Option<f64>) -> Option<f64> {
    best(
        rows.iter()
            .copied()
            .filter(|s| s.mode == mode.as_str() && gamma.is_none_or(|g| s.gamma == g)),
    )
    .map(|s| s.psnr_mean)
}

/// Gamma with the highest mean PSNR of `cosmo` at one sampling setting.
pub fn argmax_gamma(summary: &[SummaryRow], r: f64, cf: f64, sigma: f64) -> Option<f64> {
    best(
        at(summary, r, cf, sigma)
            .into_iter()
            .filter(|s| s.mode == ReconMode::Cosmo.as_str()),
    )
    .map(|s| s.gamma)
}

/// Sampling settings present, as `(R, cf, sigma)`.
pub fn settings(summary: &[SummaryRow]) -> Vec<(f64, f64, f64)> {
    distinct(summary.iter().map(|s| (s.r, s.center_fraction, s.sigma)))
}

/// Tuned gamma per `(R, cf, sigma)`, for acceptance-style lookups.
pub fn tuned_gammas(summary: &[SummaryRow]) -> BTreeMap<String, f64> {
    settings(summary)
        .into_iter()
        .filter_map(|(r, cf, s)| {
            argmax_gamma(summary, r, cf, s).map(|g| (format!("R{r}_cf{cf}_s{s}"), g))
        })
        .collect()
}

/// `(alpha, mean PSNR)` of one mode at one setting, sorted by alpha.
pub fn alpha_curve(
    summary: &[SummaryRow],
    mode: &str,
    r: f64,
    cf: f64,
    sigma: f64,
) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = at(summary, r, cf, sigma)
        .into_iter()
        .filter(|s| s.mode == mode)
        .filter_map(|s| s.alpha.map(|a| (a, s.psnr_mean)))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts
}

/// True when the maximum lies strictly inside the curve.
pub fn is_inverted_u(curve: &[(f64, f64)]) -> bool {
    if curve.len() < 3 {
        return false;
    }
    let i = curve
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    i > 0 && i + 1 < curve.len()
}

/// For each reference degradation, the content capacity with the highest
/// mean PSNR.
pub fn capacity_argmax(
    summary: &[SummaryRow],
    mode: &str,
    r: f64,
    cf: f64,
    sigma: f64,
) -> Vec<(usize, f64)> {
    let rows: Vec<_> = at(summary, r, cf, sigma)
        .into_iter()
        .filter(|s| s.mode == mode)
        .collect();
    let mut degrades = distinct(rows.iter().filter_map(|s| s.degrade));
    degrades.sort_unstable();
    degrades
        .into_iter()
        .filter_map(|n| {
            best(rows.iter().copied().filter(|s| s.degrade == Some(n)))
                .and_then(|s| s.capacity)
                .map(|c| (n, c))
        })
        .collect()
}

pub fn non_increasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

/// Trace rows grouped per reconstruction, keyed by everything except the
/// iteration.
pub fn trace_groups(traces: &[TraceRow]) -> Vec<Vec<&TraceRow>> {
    let mut groups: Vec<Vec<&TraceRow>> = Vec::new();
    for t in traces {
        let same = |g: &Vec<&TraceRow>| {
            let h = g[0];
            h.variant == t.variant
                && h.mode == t.mode
                && h.r == t.r
                && h.center_fraction == t.center_fraction
                && h.sigma == t.sigma
                && h.gamma == t.gamma
                && h.phantom == t.phantom
                && h.slice == t.slice
        };
        match groups.iter_mut().find(|g| same(g)) {
            Some(g) => g.push(t),
            None => groups.push(vec![t]),
        }
    }
    groups
}

/// First iteration after which every PSNR step stays below `tol` dB.
pub fn plateau_iteration(trace: &[&TraceRow], tol: f64) -> Option<usize> {
    let psnr: Vec<f64> = trace.iter().map(|t| t.psnr).collect::<Option<_>>()?;
    let mut last = 0;
    for (k, w) in psnr.windows(2).enumerate() {
        if (w[1] - w[0]).abs() >= tol {
            last = k + 1;
        }
    }
    Some(trace.get(last).map_or(0, |t| t.iteration))
}

/// Largest style change over iterations after `after`.
pub fn late_style_change(trace: &[&TraceRow], after: usize) -> f64 {
    trace
        .iter()
        .filter(|t| t.iteration > after)
        .map(|t| t.style_change)
        .fold(0.0, f64::max)
}

/// Whether the refinement objective does not increase over the first `k`
/// records.
pub fn cr_objective_monotone(trace: &[&TraceRow], k: usize) -> Option<bool> {
    let obj: Vec<f64> = trace
        .iter()
        .take(k)
        .map(|t| t.cr_objective)
        .collect::<Option<_>>()?;
    Some(non_increasing(&obj))
}

fn f(x: f64) -> String {
    format!("{x:.3}")
}

fn ordering_findings(summary: &[SummaryRow], out: &mut Vec<Finding>) {
    for (r, cf, s) in settings(summary) {
        let rows = at(summary, r, cf, s);
        let tag = format!("R{r}_cf{cf}_s{s}");
        let p = |m| mode_psnr(&rows, m, None);
        for m in ReconMode::ALL {
            if let Some(v) = p(m) {
                out.push(Finding::note(format!("psnr_{}_{tag}", m.as_str()), f(v)));
            }
        }
        let pairs = [
            (ReconMode::CosmoOracle, ReconMode::Cosmo),
            (ReconMode::Cosmo, ReconMode::CosmoNoCr),
            (ReconMode::Cosmo, ReconMode::CsWt),
            (ReconMode::CosmoNoCr, ReconMode::CsWt),
        ];
        for (hi, lo) in pairs {
            if let (Some(a), Some(b)) = (p(hi), p(lo)) {
                out.push(Finding::check(
                    format!("{}_ge_{}_{tag}", hi.as_str(), lo.as_str()),
                    f(a - b),
                    a >= b,
                ));
            }
        }
    }
}

fn gamma_findings(summary: &[SummaryRow], out: &mut Vec<Finding>) {
    let sets = settings(summary);
    for (cf, s) in distinct(sets.iter().map(|&(_, cf, s)| (cf, s))) {
        let rs = sorted(distinct(
            sets.iter().filter(|x| x.1 == cf && x.2 == s).map(|x| x.0),
        ));
        let best: Vec<f64> = rs
            .iter()
            .filter_map(|&r| argmax_gamma(summary, r, cf, s))
            .collect();
        for (r, g) in rs.iter().zip(&best) {
            out.push(Finding::note(
                format!("best_gamma_R{r}_cf{cf}_s{s}"),
                g.to_string(),
            ));
        }
        if best.len() > 1 {
            out.push(Finding::check(
                format!("best_gamma_non_increasing_in_R_cf{cf}_s{s}"),
                format!("{best:?}"),
                non_increasing(&best),
            ));
        }
    }
}

fn alpha_findings(summary: &[SummaryRow], out: &mut Vec<Finding>) {
    let modes = distinct(
        summary
            .iter()
            .filter(|s| s.alpha.is_some())
            .map(|s| s.mode.as_str()),
    );
    for mode in modes {
        for (r, cf, s) in settings(summary) {
            let curve = alpha_curve(summary, mode, r, cf, s);
            if curve.is_empty() {
                continue;
            }
            let tag = format!("{mode}_R{r}_cf{cf}_s{s}");
            for (a, p) in &curve {
                out.push(Finding::note(format!("psnr_alpha{a}_{tag}"), f(*p)));
            }
            out.push(Finding::check(
                format!("alpha_inverted_u_{tag}"),
                format!("{curve:?}"),
                is_inverted_u(&curve),
            ));
        }
    }
}

fn capacity_findings(summary: &[SummaryRow], out: &mut Vec<Finding>) {
    let modes = distinct(
        summary
            .iter()
            .filter(|s| s.capacity.is_some())
            .map(|s| s.mode.as_str()),
    );
    for mode in modes {
        for (r, cf, s) in settings(summary) {
            let arg = capacity_argmax(summary, mode, r, cf, s);
            if arg.len() < 2 {
                continue;
            }
            let tag = format!("{mode}_R{r}_cf{cf}_s{s}");
            for (n, c) in &arg {
                out.push(Finding::note(
                    format!("best_capacity_n{n}_{tag}"),
                    c.to_string(),
                ));
            }
            let caps: Vec<f64> = arg.iter().map(|a| a.1).collect();
            out.push(Finding::check(
                format!("best_capacity_non_increasing_in_n_{tag}"),
                format!("{caps:?}"),
                non_increasing(&caps),
            ));
        }
    }
}

fn roi_findings(summary: &[SummaryRow], out: &mut Vec<Finding>) {
    for (r, cf, s) in settings(summary) {
        let rows = at(summary, r, cf, s);
        let roi = |m: ReconMode| {
            best(rows.iter().copied().filter(|x| x.mode == m.as_str()))
                .and_then(|x| x.roi_psnr_mean)
        };
        if let (Some(a), Some(b)) = (roi(ReconMode::Cosmo), roi(ReconMode::CosmoNoCr)) {
            out.push(Finding::check(
                format!("roi_cosmo_gt_cosmo_no_cr_R{r}_cf{cf}_s{s}"),
                f(a - b),
                a > b,
            ));
        }
    }
}

fn style_findings(summary: &[SummaryRow], out: &mut Vec<Finding>) {
    let sets = settings(summary);
    for (r, s) in distinct(sets.iter().map(|&(r, _, s)| (r, s))) {
        let mut rows: Vec<&SummaryRow> = summary
            .iter()
            .filter(|x| x.r == r && x.sigma == s && x.style_nmse_mean.is_some())
            .collect();
        rows.sort_by(|a, b| a.center_fraction.total_cmp(&b.center_fraction));
        rows.dedup_by(|a, b| a.center_fraction == b.center_fraction);
        if rows.len() < 2 {
            continue;
        }
        let nmse: Vec<f64> = rows.iter().filter_map(|x| x.style_nmse_mean).collect();
        let cc: Vec<f64> = rows.iter().filter_map(|x| x.cc_psnr_mean).collect();
        for x in &rows {
            let tag = format!("cf{}_R{r}_s{s}", x.center_fraction);
            out.push(Finding::note(
                format!("style_nmse_{tag}"),
                format!("{:.4}", x.style_nmse_mean.unwrap_or(f64::NAN)),
            ));
            out.push(Finding::note(
                format!("cc_psnr_{tag}"),
                f(x.cc_psnr_mean.unwrap_or(f64::NAN)),
            ));
        }
        out.push(Finding::check(
            format!("style_nmse_non_increasing_in_cf_R{r}_s{s}"),
            format!("{nmse:.4?}"),
            non_increasing(&nmse),
        ));
        let neg: Vec<f64> = cc.iter().map(|v| -v).collect();
        out.push(Finding::check(
            format!("cc_psnr_non_decreasing_in_cf_R{r}_s{s}"),
            format!("{cc:.3?}"),
            non_increasing(&neg),
        ));
    }
}

fn convergence_findings(traces: &[TraceRow], out: &mut Vec<Finding>) {
    let groups = trace_groups(traces);
    let plateaus: Vec<usize> = groups
        .iter()
        .filter(|g| g[0].mode == ReconMode::CosmoOracle.as_str())
        .filter_map(|g| plateau_iteration(g, 0.05))
        .collect();
    if let Some(&worst) = plateaus.iter().max() {
        out.push(Finding::check(
            "oracle_plateau_within_3",
            worst.to_string(),
            worst <= 3,
        ));
    }
    let style = groups
        .iter()
        .map(|g| late_style_change(g, 5))
        .fold(0.0, f64::max);
    if !groups.is_empty() {
        out.push(Finding::check(
            "style_change_after_5_below_1e-3",
            format!("{style:.2e}"),
            style < 1e-3,
        ));
    }
    let mono: Vec<bool> = groups
        .iter()
        .filter(|g| g[0].mode == ReconMode::Cosmo.as_str())
        .filter_map(|g| cr_objective_monotone(g, 10))
        .collect();
    if !mono.is_empty() {
        let frac = mono.iter().filter(|&&b| b).count() as f64 / mono.len() as f64;
        out.push(Finding::check(
            "cr_objective_monotone_fraction",
            f(frac),
            frac >= 0.9,
        ));
    }
}

/// Checks reported for each experiment kind.
pub fn findings(kind: ExperimentKind, summary: &[SummaryRow], traces: &[TraceRow]) -> Vec<Finding> {
    let mut out = Vec::new();
    match kind {
        ExperimentKind::Sweep | ExperimentKind::Misalign => ordering_findings(summary, &mut out),
        ExperimentKind::Disentanglement => alpha_findings(summary, &mut out),
        ExperimentKind::Capacity => capacity_findings(summary, &mut out),
        ExperimentKind::Convergence => {
            ordering_findings(summary, &mut out);
            convergence_findings(traces, &mut out);
        }
        ExperimentKind::Lesion => {
            ordering_findings(summary, &mut out);
            roi_findings(summary, &mut out);
        }
        ExperimentKind::Gamma => gamma_findings(summary, &mut out),
        ExperimentKind::Style => style_findings(summary, &mut out),
    }
    out
}
