//! Comparison and ablation tables, and the plots that go with them.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::plot::{line_chart, Series};
use crate::paneval::MetricRow;
use crate::scenegen::OcclusionLevel;
use crate::trainhar::{Mode, StepRecord, TrainConfig, TrainOutcome};

/// What `report` needs from one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub seed: u64,
    pub tau_lh: f64,
    pub tau_m: f64,
    pub lambda_weight: f64,
    pub best_epoch: usize,
    pub separation: Option<f64>,
    /// Held-out rows: low, mid, high, all.
    pub rows: Vec<MetricRow>,
}

impl RunSummary {
    pub fn new(cfg: &TrainConfig, out: &TrainOutcome) -> Self {
        RunSummary {
            mode: cfg.mode,
            seed: cfg.seed,
            tau_lh: cfg.margins.tau_lh,
            tau_m: cfg.margins.tau_m,
            lambda_weight: cfg.margins.lambda_weight,
            best_epoch: out.best_epoch,
            separation: out.separation,
            rows: out.validation.rows.clone(),
        }
    }

    /// Baseline runs, counting contrastive runs with zero weight.
    pub fn is_baseline(&self) -> bool {
        self.mode == Mode::Baseline || self.lambda_weight == 0.0
    }

    pub fn label(&self) -> String {
        let kind = if self.is_baseline() { "baseline" } else { "contrastive" };
        format!("{kind} seed {}", self.seed)
    }

    pub fn pq(&self, subset: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.subset == subset).and_then(|r| r.pq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub tau_lh: f64,
    pub tau_m: f64,
    pub pq: Option<f64>,
    pub pq_th: Option<f64>,
    pub pq_st: Option<f64>,
}

/// Median of the present values; `None` when there are none.
pub fn median(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// `value` with one decimal and its signed difference to `reference`, both
/// already on the display scale: `format_delta(48.1, 47.5) == "48.1(+0.6)"`.
///
/// The difference is taken between the rounded values, so the printed numbers
/// always add up.
pub fn format_delta(value: f64, reference: f64) -> String {
    let d = round1(round1(value) - round1(reference));
    let d = if d == 0.0 { 0.0 } else { d };
    format!("{:.1}({d:+.1})", round1(value))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.1}", 100.0 * x))
}

const SUBSETS: [&str; 4] = ["low", "mid", "high", "all"];

/// Median PQ per subset (baseline column) against median contrastive PQ with
/// deltas, followed by the separation comparison.
pub fn comparison_text(baseline: &[&RunSummary], contrastive: &[&RunSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "PQ by occlusion level (median over {} baseline / {} contrastive runs)",
        baseline.len(),
        contrastive.len()
    );
    let _ = writeln!(s, "{:<8}{:>12}{:>16}", "subset", "baseline", "contrastive");
    for subset in SUBSETS {
        let b = median(baseline.iter().map(|r| r.pq(subset)));
        let c = median(contrastive.iter().map(|r| r.pq(subset)));
        let cell = match (b, c) {
            (Some(b), Some(c)) => format_delta(100.0 * c, 100.0 * b),
            (_, c) => pct(c),
        };
        let _ = writeln!(s, "{:<8}{:>12}{:>16}", subset, pct(b), cell);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<14}{:>6}{:>12}", "separation", "runs", "median");
    let sb = median(baseline.iter().map(|r| r.separation));
    let sc = median(contrastive.iter().map(|r| r.separation));
    let f4 = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    let _ = writeln!(s, "{:<14}{:>6}{:>12}", "baseline", baseline.len(), f4(sb));
    let _ = writeln!(s, "{:<14}{:>6}{:>12}", "contrastive", contrastive.len(), f4(sc));
    s
}

pub fn comparison_csv(baseline: &[&RunSummary], contrastive: &[&RunSummary]) -> String {
    let mut s = String::from("subset,baseline_PQ,contrastive_PQ,delta\n");
    let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.3}", 100.0 * x));
    for subset in SUBSETS {
        let b = median(baseline.iter().map(|r| r.pq(subset)));
        let c = median(contrastive.iter().map(|r| r.pq(subset)));
        let d = b.zip(c).map(|(b, c)| c - b);
        let _ = writeln!(s, "{subset},{},{},{}", f(b), f(c), f(d));
    }
    let g = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"));
    let _ = writeln!(s, "separation,{},{},{}",
        g(median(baseline.iter().map(|r| r.separation))),
        g(median(contrastive.iter().map(|r| r.separation))),
        g(median(baseline.iter().map(|r| r.separation))
            .zip(median(contrastive.iter().map(|r| r.separation)))
            .map(|(b, c)| c - b)));
    s
}

pub fn ablation_text(rows: &[AblationRow]) -> String {
    let mut s = format!("{:>8}{:>8}{:>8}{:>8}{:>8}\n", "tau_lh", "tau_m", "PQ", "PQ_th", "PQ_st");
    for r in rows {
        let _ = writeln!(
            s,
            "{:>8}{:>8}{:>8}{:>8}{:>8}",
            r.tau_lh,
            r.tau_m,
            pct(r.pq),
            pct(r.pq_th),
            pct(r.pq_st)
        );
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("tau_lh,tau_m,PQ,PQ_th,PQ_st\n");
    let f = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{:.3}", 100.0 * x));
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.tau_lh, r.tau_m, f(r.pq), f(r.pq_th), f(r.pq_st));
    }
    s
}

pub fn pq_vs_level_svg(baseline: &[&RunSummary], contrastive: &[&RunSummary]) -> String {
    let series = |name: &str, runs: &[&RunSummary]| Series {
        name: name.to_string(),
        points: OcclusionLevel::ALL
            .iter()
            .enumerate()
            .filter_map(|(i, l)| median(runs.iter().map(|r| r.pq(l.as_str()))).map(|v| (i as f64, 100.0 * v)))
            .collect(),
    };
    line_chart(
        "PQ by occlusion level",
        "occlusion level",
        "PQ",
        &[series("baseline", baseline), series("contrastive", contrastive)],
        Some(&["low", "mid", "high"]),
    )
}

pub fn loss_curves_svg(logs: &[(String, Vec<StepRecord>)]) -> String {
    let series: Vec<Series> = logs
        .iter()
        .map(|(name, log)| Series {
            name: name.clone(),
            points: log.iter().map(|r| (r.step as f64, r.l_fin)).collect(),
        })
        .collect();
    line_chart("Training loss", "step", "L_fin", &series, None)
}
