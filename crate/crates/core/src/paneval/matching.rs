use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::pandata::{PanopticMap, Taxonomy};

/// IoU strictly above this makes a TP; at most one match per segment is then possible.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruePositive {
    pub pred_id: u32,
    pub gt_id: u32,
    pub category_id: u32,
    pub iou: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unmatched {
    pub id: u32,
    pub category_id: u32,
}

/// Segment matching for one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub true_positives: Vec<TruePositive>,
    pub false_positives: Vec<Unmatched>,
    pub false_negatives: Vec<Unmatched>,
}

impl MatchResult {
    /// No pred or gt id occurs in two TP pairs.
    pub fn is_partial_bijection(&self) -> bool {
        let mut preds: Vec<u32> = self.true_positives.iter().map(|t| t.pred_id).collect();
        let mut gts: Vec<u32> = self.true_positives.iter().map(|t| t.gt_id).collect();
        preds.sort_unstable();
        gts.sort_unstable();
        preds.windows(2).all(|w| w[0] != w[1]) && gts.windows(2).all(|w| w[0] != w[1])
    }
}

/// Pixel co-occurrence counts between gt ids and pred ids (0 = void on either side).
pub(crate) fn pair_counts(pred: &PanopticMap, gt: &PanopticMap) -> HashMap<(u32, u32), u64> {
    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    for (&g, &p) in gt.ids.iter().zip(&pred.ids) {
        *counts.entry((g, p)).or_insert(0) += 1;
    }
    counts
}

pub(crate) fn check_pair(pred: &PanopticMap, gt: &PanopticMap, taxonomy: &Taxonomy) -> Result<()> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    for s in pred.segments.iter().chain(&gt.segments) {
        if taxonomy.get(s.category_id).is_none() {
            return Err(Error::UnknownCategory(s.category_id));
        }
    }
    Ok(())
}

/// Matches predicted to ground-truth segments by IoU > 0.5 within a category.
///
/// With `ignore_void`, prediction pixels that fall on gt void are removed from
/// the union. Unmatched predictions that lie mostly (> 50%) on void or on a
/// crowd region of their own category are dropped instead of counted as FP;
/// crowd gt segments never produce FNs.
pub fn match_segments(pred: &PanopticMap, gt: &PanopticMap, taxonomy: &Taxonomy, ignore_void: bool) -> Result<MatchResult> {
    check_pair(pred, gt, taxonomy)?;
    let counts = pair_counts(pred, gt);
    let gt_segs: HashMap<u32, &crate::pandata::Segment> = gt.segments.iter().map(|s| (s.id, s)).collect();
    let pred_segs: HashMap<u32, &crate::pandata::Segment> = pred.segments.iter().map(|s| (s.id, s)).collect();

    let mut crowd_by_category: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for s in gt.segments.iter().filter(|s| s.iscrowd) {
        crowd_by_category.entry(s.category_id).or_default().push(s.id);
    }

    let mut pairs: Vec<(&(u32, u32), &u64)> = counts.iter().collect();
    pairs.sort_unstable_by_key(|(k, _)| **k);

    let mut result = MatchResult::default();
    let mut gt_matched = std::collections::HashSet::new();
    let mut pred_matched = std::collections::HashSet::new();
    for (&(g, p), &inter) in pairs {
        if g == 0 || p == 0 {
            continue;
        }
        let (gs, ps) = (gt_segs[&g], pred_segs[&p]);
        if gs.iscrowd || gs.category_id != ps.category_id {
            continue;
        }
        let void_overlap = if ignore_void { counts.get(&(0, p)).copied().unwrap_or(0) } else { 0 };
        let union = ps.area + gs.area - inter - void_overlap;
        let iou = inter as f64 / union as f64;
        if iou > MATCH_IOU {
            gt_matched.insert(g);
            pred_matched.insert(p);
            result.true_positives.push(TruePositive {
                pred_id: p,
                gt_id: g,
                category_id: gs.category_id,
                iou,
            });
        }
    }

    for gs in &gt.segments {
        if gs.iscrowd || gt_matched.contains(&gs.id) {
            continue;
        }
        result.false_negatives.push(Unmatched {
            id: gs.id,
            category_id: gs.category_id,
        });
    }

    for ps in &pred.segments {
        if pred_matched.contains(&ps.id) {
            continue;
        }
        let mut covered = if ignore_void { counts.get(&(0, ps.id)).copied().unwrap_or(0) } else { 0 };
        if let Some(crowds) = crowd_by_category.get(&ps.category_id) {
            covered += crowds.iter().map(|c| counts.get(&(*c, ps.id)).copied().unwrap_or(0)).sum::<u64>();
        }
        if covered as f64 / ps.area as f64 > MATCH_IOU {
            continue;
        }
        result.false_positives.push(Unmatched {
            id: ps.id,
            category_id: ps.category_id,
        });
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pandata::SegmentLabel;

    fn map(w: u32, h: u32, ids: Vec<u32>, cats: &[(u32, u32, bool)]) -> PanopticMap {
        let labels: Vec<SegmentLabel> = cats
            .iter()
            .map(|&(id, category_id, iscrowd)| SegmentLabel { id, category_id, iscrowd, score: None })
            .collect();
        PanopticMap::from_raster(w, h, ids, &labels).unwrap()
    }

    fn tax() -> Taxonomy {
        Taxonomy::default()
    }

    #[test]
    fn identity_matches_everything() {
        let gt = map(4, 1, vec![1, 1, 2, 2], &[(1, 1, false), (2, 7, false)]);
        let m = match_segments(&gt, &gt, &tax(), true).unwrap();
        assert_eq!(m.true_positives.len(), 2);
        assert!(m.true_positives.iter().all(|t| t.iou == 1.0));
        assert!(m.false_positives.is_empty() && m.false_negatives.is_empty());
    }

    #[test]
    fn partial_overlap_iou_by_pixel_count() {
        // 16x16 canvas. gt: 10x10 block at (0,0) = 100 px. pred covers 60 of them
        // (rows 0..6) plus 20 px outside (rows 10..12, cols 0..10).
        let mut gt_ids = vec![2u32; 256];
        let mut pred_ids = vec![2u32; 256];
        for y in 0..16 {
            for x in 0..16 {
                let i = y * 16 + x;
                if x < 10 && y < 10 {
                    gt_ids[i] = 1;
                }
                if x < 10 && (y < 6 || (10..12).contains(&y)) {
                    pred_ids[i] = 1;
                }
            }
        }
        let gt = map(16, 16, gt_ids.clone(), &[(1, 1, false), (2, 7, false)]);
        let pred = map(16, 16, pred_ids.clone(), &[(1, 1, false), (2, 7, false)]);

        // oracle: direct pixel counting
        let inter = (0..256).filter(|&i| gt_ids[i] == 1 && pred_ids[i] == 1).count();
        let union = (0..256).filter(|&i| gt_ids[i] == 1 || pred_ids[i] == 1).count();
        assert_eq!((inter, union), (60, 120));
        let oracle = inter as f64 / union as f64;

        let m = match_segments(&pred, &gt, &tax(), true).unwrap();
        // IoU exactly 0.5 is not a match
        assert_eq!(oracle, 0.5);
        assert!(m.true_positives.iter().all(|t| t.gt_id != 1));
        assert_eq!(m.false_negatives.iter().filter(|u| u.id == 1).count(), 1);
        assert_eq!(m.false_positives.iter().filter(|u| u.id == 1).count(), 1);

        // shrink the extra area to 10 px: IoU = 60 / 110 > 0.5
        for x in 0..10 {
            pred_ids[11 * 16 + x] = 2;
        }
        let pred = map(16, 16, pred_ids.clone(), &[(1, 1, false), (2, 7, false)]);
        let m = match_segments(&pred, &gt, &tax(), true).unwrap();
        let tp = m.true_positives.iter().find(|t| t.gt_id == 1).unwrap();
        assert!((tp.iou - 60.0 / 110.0).abs() < 1e-15);
    }

    #[test]
    fn two_weak_predictions_do_not_match() {
        // gt segment of 10 px; each pred covers 4 of them plus 6 elsewhere -> IoU 4/16 < 0.5
        let gt = map(20, 1, [vec![1; 10], vec![3; 10]].concat(), &[(1, 1, false), (3, 7, false)]);
        let mut pred_ids = vec![3u32; 20];
        for i in 0..4 {
            pred_ids[i] = 1;
            pred_ids[10 + i] = 1;
        }
        for i in 4..8 {
            pred_ids[i] = 2;
            pred_ids[14 + i - 4] = 2;
        }
        let pred = map(20, 1, pred_ids, &[(1, 1, false), (2, 1, false), (3, 7, false)]);
        let m = match_segments(&pred, &gt, &tax(), true).unwrap();
        assert!(m.true_positives.iter().all(|t| t.gt_id != 1));
        assert_eq!(m.false_positives.iter().filter(|u| u.category_id == 1).count(), 2);
        assert_eq!(m.false_negatives.iter().filter(|u| u.category_id == 1).count(), 1);
    }

    #[test]
    fn category_must_agree() {
        let gt = map(2, 1, vec![1, 1], &[(1, 1, false)]);
        let pred = map(2, 1, vec![1, 1], &[(1, 2, false)]);
        let m = match_segments(&pred, &gt, &tax(), true).unwrap();
        assert!(m.true_positives.is_empty());
        assert_eq!(m.false_positives.len(), 1);
        assert_eq!(m.false_negatives.len(), 1);
    }

    #[test]
    fn void_excluded_from_union_when_ignored() {
        // gt: 4 px of seg 1, 4 px void. pred covers all 8 px as seg 1.
        let gt = map(8, 1, vec![1, 1, 1, 1, 0, 0, 0, 0], &[(1, 1, false)]);
        let pred = map(8, 1, vec![1; 8], &[(1, 1, false)]);
        let m = match_segments(&pred, &gt, &tax(), true).unwrap();
        assert_eq!(m.true_positives[0].iou, 1.0);
        let m = match_segments(&pred, &gt, &tax(), false).unwrap();
        assert!(m.true_positives.is_empty());
    }

    #[test]
    fn prediction_on_void_or_crowd_is_not_penalized() {
        // gt: seg 1 (thing) on 2 px, crowd seg 2 of category 1 on 4 px, void on 4 px
        let gt = map(10, 1, vec![1, 1, 2, 2, 2, 2, 0, 0, 0, 0], &[(1, 1, false), (2, 1, true)]);
        // pred 5 sits on the crowd region, pred 6 on void, both unmatched
        let pred = map(
            10,
            1,
            vec![1, 1, 5, 5, 5, 5, 6, 6, 6, 6],
            &[(1, 1, false), (5, 1, false), (6, 3, false)],
        );
        let m = match_segments(&pred, &gt, &tax(), true).unwrap();
        assert_eq!(m.true_positives.len(), 1);
        assert!(m.false_positives.is_empty(), "{:?}", m.false_positives);
        assert!(m.false_negatives.is_empty());

        // crowd of another category does not absorb the prediction
        let pred = map(10, 1, vec![1, 1, 5, 5, 5, 5, 0, 0, 0, 0], &[(1, 1, false), (5, 2, false)]);
        let m = match_segments(&pred, &gt, &tax(), true).unwrap();
        assert_eq!(m.false_positives, vec![Unmatched { id: 5, category_id: 2 }]);
    }

    #[test]
    fn errors() {
        let a = map(2, 1, vec![1, 1], &[(1, 1, false)]);
        let b = map(1, 2, vec![1, 1], &[(1, 1, false)]);
        assert!(matches!(match_segments(&a, &b, &tax(), true), Err(Error::DimensionMismatch(_))));
        let c = map(2, 1, vec![1, 1], &[(1, 99, false)]);
        assert!(matches!(match_segments(&c, &a, &tax(), true), Err(Error::UnknownCategory(99))));
    }
}
