use std::collections::BTreeMap;

use super::matching::MatchResult;
use crate::error::{Error, Result};
use crate::pandata::Taxonomy;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CategoryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
}

impl CategoryCounts {
    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn score(&self) -> PqScore {
        let denom = self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64;
        PqScore {
            pq: self.iou_sum / denom,
            sq: if self.tp > 0 { self.iou_sum / self.tp as f64 } else { 0.0 },
            rq: self.tp as f64 / denom,
            categories: 1,
        }
    }
}

/// Per-category TP/FP/FN counts and IoU sums over a set of images.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PqAccumulator {
    pub per_category: BTreeMap<u32, CategoryCounts>,
}

impl PqAccumulator {
    pub fn add(&mut self, m: &MatchResult) {
        for tp in &m.true_positives {
            let c = self.per_category.entry(tp.category_id).or_default();
            c.tp += 1;
            c.iou_sum += tp.iou;
        }
        for fp in &m.false_positives {
            self.per_category.entry(fp.category_id).or_default().fp += 1;
        }
        for fn_ in &m.false_negatives {
            self.per_category.entry(fn_.category_id).or_default().fn_ += 1;
        }
    }

    /// Merging in any order gives the same sums; iteration is in category order.
    pub fn merge(&mut self, other: &PqAccumulator) {
        for (&cat, c) in &other.per_category {
            let e = self.per_category.entry(cat).or_default();
            e.tp += c.tp;
            e.fp += c.fp;
            e.fn_ += c.fn_;
            e.iou_sum += c.iou_sum;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PqScore {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    /// Number of categories averaged.
    pub categories: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqBreakdown {
    pub all: PqScore,
    pub things: Option<PqScore>,
    pub stuff: Option<PqScore>,
    pub per_category: BTreeMap<u32, PqScore>,
}

/// Mean of per-category PQ, SQ and RQ over the categories selected by `keep`
/// that have at least one TP, FP or FN.
pub fn averaged(acc: &PqAccumulator, keep: impl Fn(u32) -> bool) -> Option<PqScore> {
    let scores: Vec<PqScore> = acc
        .per_category
        .iter()
        .filter(|(&cat, c)| keep(cat) && !c.is_empty())
        .map(|(_, c)| c.score())
        .collect();
    if scores.is_empty() {
        return None;
    }
    let n = scores.len() as f64;
    Some(PqScore {
        pq: scores.iter().map(|s| s.pq).sum::<f64>() / n,
        sq: scores.iter().map(|s| s.sq).sum::<f64>() / n,
        rq: scores.iter().map(|s| s.rq).sum::<f64>() / n,
        categories: scores.len(),
    })
}

/// PQ, SQ, RQ with the thing/stuff split, averaged per category.
pub fn pq_breakdown(acc: &PqAccumulator, taxonomy: &Taxonomy) -> Result<PqBreakdown> {
    let all = averaged(acc, |_| true)
        .ok_or_else(|| Error::EmptyEvaluation("no ground-truth or predicted segments".into()))?;
    let is_thing = |c: u32| taxonomy.get(c).map(|c| c.isthing).unwrap_or(false);
    Ok(PqBreakdown {
        all,
        things: averaged(acc, is_thing),
        stuff: averaged(acc, |c| !is_thing(c)),
        per_category: acc
            .per_category
            .iter()
            .filter(|(_, c)| !c.is_empty())
            .map(|(&k, c)| (k, c.score()))
            .collect(),
    })
}

/// PQ over a set of per-image match results.
pub fn pq(matches: &[MatchResult], taxonomy: &Taxonomy) -> Result<PqBreakdown> {
    let mut acc = PqAccumulator::default();
    for m in matches {
        acc.add(m);
    }
    pq_breakdown(&acc, taxonomy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paneval::matching::{TruePositive, Unmatched};

    #[test]
    fn single_category_formula() {
        let m = MatchResult {
            true_positives: vec![TruePositive { pred_id: 1, gt_id: 1, category_id: 1, iou: 0.8 }],
            false_positives: vec![Unmatched { id: 2, category_id: 1 }],
            false_negatives: vec![Unmatched { id: 3, category_id: 1 }],
        };
        let b = pq(&[m], &Taxonomy::default()).unwrap();
        assert_eq!(b.all.pq, 0.8 / 2.0);
        assert_eq!(b.all.pq, 0.40);
        assert_eq!(b.all.sq, 0.8);
        assert_eq!(b.all.rq, 0.5);
        assert!(b.stuff.is_none());
    }

    #[test]
    fn perfect_is_one() {
        let m = MatchResult {
            true_positives: vec![
                TruePositive { pred_id: 1, gt_id: 1, category_id: 1, iou: 1.0 },
                TruePositive { pred_id: 2, gt_id: 2, category_id: 8, iou: 1.0 },
            ],
            ..Default::default()
        };
        let b = pq(&[m], &Taxonomy::default()).unwrap();
        assert_eq!((b.all.pq, b.all.sq, b.all.rq), (1.0, 1.0, 1.0));
        assert_eq!(b.things.unwrap().pq, 1.0);
        assert_eq!(b.stuff.unwrap().pq, 1.0);
    }

    #[test]
    fn per_category_pq_is_sq_times_rq() {
        let mut acc = PqAccumulator::default();
        acc.per_category.insert(1, CategoryCounts { tp: 3, fp: 1, fn_: 2, iou_sum: 2.1 });
        acc.per_category.insert(2, CategoryCounts { tp: 0, fp: 2, fn_: 0, iou_sum: 0.0 });
        let b = pq_breakdown(&acc, &Taxonomy::default()).unwrap();
        for s in b.per_category.values() {
            assert!((s.pq - s.sq * s.rq).abs() < 1e-12);
        }
        // a prediction-only category counts with PQ 0
        assert_eq!(b.all.categories, 2);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(matches!(pq(&[], &Taxonomy::default()), Err(Error::EmptyEvaluation(_))));
        assert!(matches!(pq(&[MatchResult::default()], &Taxonomy::default()), Err(Error::EmptyEvaluation(_))));
    }
}
