use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ap::ApAccumulator;
use super::matching::match_segments;
use super::miou::ConfusionAccumulator;
use super::pq::{pq_breakdown, PqAccumulator};
use crate::error::{Error, Result};
use crate::pandata::{Dataset, PanopticMap, Taxonomy};
use crate::scenegen::OcclusionLevel;

pub const CSV_HEADER: &str = "subset,PQ,PQ_th,PQ_st,SQ,RQ,AP_th_pan,mIoU_pan";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EvalOptions {
    pub ignore_void: bool,
    /// Off when predictions carry no scores (`--no-ap`).
    pub compute_ap: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ignore_void: true,
            compute_ap: true,
        }
    }
}

/// One table row; every metric is in [0, 1] and `None` prints as `n/a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub subset: String,
    pub images: usize,
    pub pq: Option<f64>,
    pub pq_th: Option<f64>,
    pub pq_st: Option<f64>,
    pub sq: Option<f64>,
    pub rq: Option<f64>,
    pub ap_th_pan: Option<f64>,
    pub miou_pan: Option<f64>,
}

impl MetricRow {
    fn empty(subset: &str) -> Self {
        MetricRow {
            subset: subset.to_string(),
            images: 0,
            pq: None,
            pq_th: None,
            pq_st: None,
            sq: None,
            rq: None,
            ap_th_pan: None,
            miou_pan: None,
        }
    }

    /// Values in CSV column order (after `subset`).
    pub fn values(&self) -> [Option<f64>; 7] {
        [self.pq, self.pq_th, self.pq_st, self.sq, self.rq, self.ap_th_pan, self.miou_pan]
    }
}

/// Running sums for one subset; merging two accumulators equals accumulating the union.
#[derive(Debug, Clone)]
pub struct SubsetAccumulator {
    images: usize,
    pq: PqAccumulator,
    confusion: ConfusionAccumulator,
    ap: ApAccumulator,
}

impl SubsetAccumulator {
    pub fn new(taxonomy: &Taxonomy) -> Self {
        SubsetAccumulator {
            images: 0,
            pq: PqAccumulator::default(),
            confusion: ConfusionAccumulator::new(taxonomy),
            ap: ApAccumulator::default(),
        }
    }

    pub fn add(
        &mut self,
        image_id: u64,
        pred: &PanopticMap,
        gt: &PanopticMap,
        taxonomy: &Taxonomy,
        opts: &EvalOptions,
    ) -> Result<()> {
        let m = match_segments(pred, gt, taxonomy, opts.ignore_void)?;
        debug_assert!(m.is_partial_bijection());
        self.pq.add(&m);
        self.confusion.add(pred, gt, taxonomy)?;
        if opts.compute_ap {
            self.ap.add(image_id, pred, gt, taxonomy)?;
        }
        self.images += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &SubsetAccumulator) {
        self.images += other.images;
        self.pq.merge(&other.pq);
        self.confusion.merge(&other.confusion);
        self.ap.merge(&other.ap);
    }

    pub fn pq_accumulator(&self) -> &PqAccumulator {
        &self.pq
    }

    pub fn row(&self, subset: &str, taxonomy: &Taxonomy, opts: &EvalOptions) -> MetricRow {
        let mut row = MetricRow::empty(subset);
        row.images = self.images;
        if self.images == 0 {
            return row;
        }
        if let Ok(b) = pq_breakdown(&self.pq, taxonomy) {
            row.pq = Some(b.all.pq);
            row.sq = Some(b.all.sq);
            row.rq = Some(b.all.rq);
            row.pq_th = b.things.map(|s| s.pq);
            row.pq_st = b.stuff.map(|s| s.pq);
        }
        if opts.compute_ap {
            row.ap_th_pan = self.ap.ap();
        }
        row.miou_pan = self.confusion.miou();
        row
    }
}

/// Rows for low, mid, high, then all images.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratifiedReport {
    pub rows: Vec<MetricRow>,
}

impl StratifiedReport {
    pub fn row(&self, subset: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.subset == subset)
    }

    pub fn level(&self, level: OcclusionLevel) -> &MetricRow {
        self.row(level.as_str()).expect("report has a row per level")
    }

    pub fn all(&self) -> &MetricRow {
        self.row("all").expect("report has an overall row")
    }

    /// Metrics ×100 with three decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.subset);
            for v in r.values() {
                match v {
                    Some(v) => write!(out, ",{:.3}", v * 100.0).unwrap(),
                    None => out.push_str(",n/a"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Aligned table, metrics ×100 with one decimal.
    pub fn to_text(&self) -> String {
        let cols = ["PQ", "PQ_th", "PQ_st", "SQ", "RQ", "AP_th_pan", "mIoU_pan"];
        let mut out = format!("{:<8}{:>8}", "subset", "images");
        for c in cols {
            write!(out, "{c:>11}").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{:<8}{:>8}", r.subset, r.images).unwrap();
            for v in r.values() {
                match v {
                    Some(v) => write!(out, "{:>11.1}", v * 100.0).unwrap(),
                    None => write!(out, "{:>11}", "n/a").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Writes `report.csv` and `report.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [("report.csv", self.to_csv()), ("report.txt", self.to_text())] {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Stratified report from in-memory `(image_id, level, pred, gt)` items.
pub fn report_from_maps<I>(items: I, taxonomy: &Taxonomy, opts: &EvalOptions) -> Result<StratifiedReport>
where
    I: IntoIterator<Item = Result<(u64, OcclusionLevel, PanopticMap, PanopticMap)>>,
{
    let mut levels: [SubsetAccumulator; 3] = std::array::from_fn(|_| SubsetAccumulator::new(taxonomy));
    for item in items {
        let (image_id, level, pred, gt) = item?;
        levels[level.index()].add(image_id, &pred, &gt, taxonomy, opts)?;
    }
    let mut all = SubsetAccumulator::new(taxonomy);
    for acc in &levels {
        all.merge(acc);
    }
    if all.images == 0 {
        return Err(Error::EmptyEvaluation("no images to evaluate".into()));
    }
    let mut rows: Vec<MetricRow> = OcclusionLevel::ALL
        .iter()
        .map(|l| levels[l.index()].row(l.as_str(), taxonomy, opts))
        .collect();
    rows.push(all.row("all", taxonomy, opts));
    Ok(StratifiedReport { rows })
}

fn check_same_images(pred: &Dataset, gt: &Dataset) -> Result<()> {
    let p: BTreeSet<u64> = pred.image_ids().into_iter().collect();
    let g: BTreeSet<u64> = gt.image_ids().into_iter().collect();
    if p != g {
        let only_pred: Vec<u64> = p.difference(&g).copied().collect();
        let only_gt: Vec<u64> = g.difference(&p).copied().collect();
        return Err(Error::Contract(format!(
            "prediction and ground-truth image ids differ: only in predictions {only_pred:?}, only in ground truth {only_gt:?}"
        )));
    }
    Ok(())
}

fn paired_maps<'a>(
    pred: &'a Dataset,
    gt: &'a Dataset,
) -> impl Iterator<Item = Result<(u64, PanopticMap, PanopticMap)>> + 'a {
    let index: HashMap<u64, usize> = pred.entries.iter().enumerate().map(|(i, e)| (e.image_id, i)).collect();
    gt.entries.iter().map(move |g| {
        let p = &pred.entries[index[&g.image_id]];
        Ok((g.image_id, pred.load_panoptic(p)?, gt.load_panoptic(g)?))
    })
}

/// Metrics over a whole prediction/ground-truth pair of datasets, unstratified.
pub fn evaluate_datasets(pred: &Dataset, gt: &Dataset, subset: &str, opts: &EvalOptions) -> Result<MetricRow> {
    check_same_images(pred, gt)?;
    let mut acc = SubsetAccumulator::new(&gt.taxonomy);
    for item in paired_maps(pred, gt) {
        let (id, p, g) = item?;
        acc.add(id, &p, &g, &gt.taxonomy, opts)?;
    }
    Ok(acc.row(subset, &gt.taxonomy, opts))
}

/// Every metric on the low, mid and high subsets (by the ground-truth sidecar)
/// and on all images. The overall row is computed from pooled counts.
pub fn stratified_report(pred: &Dataset, gt: &Dataset, opts: &EvalOptions) -> Result<StratifiedReport> {
    check_same_images(pred, gt)?;
    let sidecar = gt.require_sidecar()?;
    let items = paired_maps(pred, gt).map(|item| {
        let (id, p, g) = item?;
        let level = sidecar
            .get(&id)
            .ok_or_else(|| Error::MissingSidecar(vec![id]))?
            .occlusion_level;
        Ok((id, level, p, g))
    });
    report_from_maps(items, &gt.taxonomy, opts)
}
