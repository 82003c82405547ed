//! Mask AP for thing categories from panoptic predictions, following the COCO
//! protocol: IoU thresholds 0.50:0.05:0.95, 101 recall points, 100 detections
//! per image and category, crowd ground truth ignored.

use std::collections::BTreeMap;

use super::matching::{check_pair, pair_counts};
use crate::error::{Error, Result};
use crate::pandata::{PanopticMap, Segment, Taxonomy};

pub const NUM_THRESHOLDS: usize = 10;
pub const RECALL_POINTS: usize = 101;
pub const MAX_DETECTIONS: usize = 100;

/// 0.50:0.05:0.95 computed as `np.linspace` does, so ties at a threshold resolve
/// the same way as in the reference toolkit (the ninth value is 0.8999999999999999).
pub fn iou_thresholds() -> [f64; NUM_THRESHOLDS] {
    let step = (0.95 - 0.5) / (NUM_THRESHOLDS - 1) as f64;
    std::array::from_fn(|i| 0.5 + i as f64 * step)
}

#[derive(Debug, Clone, PartialEq)]
struct Detection {
    score: f64,
    matched: [bool; NUM_THRESHOLDS],
    ignored: [bool; NUM_THRESHOLDS],
}

#[derive(Debug, Clone, Default, PartialEq)]
struct CategoryDetections {
    /// in arrival order: image by image, score-descending within an image
    detections: Vec<Detection>,
    num_gt: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ApAccumulator {
    per_category: BTreeMap<u32, CategoryDetections>,
}

fn segment_score(image_id: u64, s: &Segment) -> Result<f64> {
    s.score.ok_or(Error::MissingScores {
        image_id,
        segment_id: s.id,
    })
}

impl ApAccumulator {
    pub fn add(&mut self, image_id: u64, pred: &PanopticMap, gt: &PanopticMap, taxonomy: &Taxonomy) -> Result<()> {
        check_pair(pred, gt, taxonomy)?;
        let counts = pair_counts(pred, gt);
        for cat in taxonomy.thing_ids() {
            let mut gts: Vec<&Segment> = gt.segments.iter().filter(|s| s.category_id == cat).collect();
            // non-crowd first, as in the reference matcher
            gts.sort_by_key(|s| s.iscrowd);
            let mut dts: Vec<(&Segment, f64)> = pred
                .segments
                .iter()
                .filter(|s| s.category_id == cat)
                .map(|s| Ok((s, segment_score(image_id, s)?)))
                .collect::<Result<_>>()?;
            if gts.is_empty() && dts.is_empty() {
                continue;
            }
            dts.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
            dts.truncate(MAX_DETECTIONS);

            let ious: Vec<Vec<f64>> = dts
                .iter()
                .map(|(d, _)| {
                    gts.iter()
                        .map(|g| {
                            let inter = counts.get(&(g.id, d.id)).copied().unwrap_or(0) as f64;
                            if g.iscrowd {
                                inter / d.area as f64
                            } else {
                                inter / ((d.area + g.area) as f64 - inter)
                            }
                        })
                        .collect()
                })
                .collect();

            let entry = self.per_category.entry(cat).or_default();
            entry.num_gt += gts.iter().filter(|g| !g.iscrowd).count();
            let mut dets: Vec<Detection> = dts
                .iter()
                .map(|(_, score)| Detection {
                    score: *score,
                    matched: [false; NUM_THRESHOLDS],
                    ignored: [false; NUM_THRESHOLDS],
                })
                .collect();
            for (t, &thr) in iou_thresholds().iter().enumerate() {
                let mut gt_taken = vec![false; gts.len()];
                for (d, det) in dets.iter_mut().enumerate() {
                    let mut best = thr.min(1.0 - 1e-10);
                    let mut m: Option<usize> = None;
                    for (g, gs) in gts.iter().enumerate() {
                        if gt_taken[g] && !gs.iscrowd {
                            continue;
                        }
                        // once a regular gt is matched, stop before the crowd tail
                        if let Some(mi) = m {
                            if !gts[mi].iscrowd && gs.iscrowd {
                                break;
                            }
                        }
                        if ious[d][g] < best {
                            continue;
                        }
                        best = ious[d][g];
                        m = Some(g);
                    }
                    if let Some(g) = m {
                        gt_taken[g] = true;
                        det.matched[t] = true;
                        det.ignored[t] = gts[g].iscrowd;
                    }
                }
            }
            entry.detections.extend(dets);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ApAccumulator) {
        for (&cat, c) in &other.per_category {
            let e = self.per_category.entry(cat).or_default();
            e.num_gt += c.num_gt;
            e.detections.extend(c.detections.iter().cloned());
        }
    }

    /// AP per thing category with at least one non-crowd gt instance.
    pub fn per_category_ap(&self) -> Vec<(u32, f64)> {
        let mut out = Vec::new();
        for (&cat, c) in &self.per_category {
            if c.num_gt == 0 {
                continue;
            }
            let mut order: Vec<usize> = (0..c.detections.len()).collect();
            // stable: equal scores keep arrival order
            order.sort_by(|&a, &b| {
                c.detections[b]
                    .score
                    .partial_cmp(&c.detections[a].score)
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            let mut total = 0.0;
            for t in 0..NUM_THRESHOLDS {
                total += average_precision(
                    order.iter().map(|&i| &c.detections[i]).map(|d| (d.matched[t], d.ignored[t])),
                    c.num_gt,
                );
            }
            out.push((cat, total / NUM_THRESHOLDS as f64));
        }
        out
    }

    pub fn ap(&self) -> Option<f64> {
        let per = self.per_category_ap();
        if per.is_empty() {
            None
        } else {
            Some(per.iter().map(|(_, v)| v).sum::<f64>() / per.len() as f64)
        }
    }
}

/// 101-point interpolated AP from score-ordered `(matched, ignored)` flags.
fn average_precision(flags: impl Iterator<Item = (bool, bool)>, num_gt: usize) -> f64 {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    for (matched, ignored) in flags {
        if ignored {
            continue;
        }
        if matched {
            tp += 1.0;
        } else {
            fp += 1.0;
        }
        recall.push(tp / num_gt as f64);
        precision.push(tp / (tp + fp));
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut sum = 0.0;
    let mut ptr = 0;
    for r in 0..RECALL_POINTS {
        // same grid as np.linspace(0, 1, 101)
        let thr = r as f64 * 0.01;
        while ptr < recall.len() && recall[ptr] < thr {
            ptr += 1;
        }
        if ptr < recall.len() {
            sum += precision[ptr];
        }
    }
    sum / RECALL_POINTS as f64
}

/// AP^Th over a set of `(image_id, pred, gt)` triples.
pub fn ap_pan<'a>(
    pairs: impl IntoIterator<Item = (u64, &'a PanopticMap, &'a PanopticMap)>,
    taxonomy: &Taxonomy,
) -> Result<Option<f64>> {
    let mut acc = ApAccumulator::default();
    for (image_id, pred, gt) in pairs {
        acc.add(image_id, pred, gt, taxonomy)?;
    }
    Ok(acc.ap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pandata::SegmentLabel;

    fn label(id: u32, category_id: u32, score: Option<f64>) -> SegmentLabel {
        SegmentLabel { id, category_id, iscrowd: false, score }
    }

    /// One-row map from `(start, end, id)` runs; other pixels are void.
    fn row(width: u32, runs: &[(usize, usize, u32)], labels: &[SegmentLabel]) -> PanopticMap {
        let mut ids = vec![0; width as usize];
        for &(a, b, id) in runs {
            ids[a..b].iter_mut().for_each(|p| *p = id);
        }
        PanopticMap::from_raster(width, 1, ids, labels).unwrap()
    }

    #[test]
    fn thresholds_match_linspace() {
        let t = iou_thresholds();
        assert_eq!(t[0], 0.5);
        assert_eq!(t[8], 0.8999999999999999);
        assert_eq!(t[9], 0.95);
    }

    #[test]
    fn perfect_prediction_is_one() {
        let gt = row(8, &[(0, 3, 1), (3, 8, 2)], &[label(1, 1, None), label(2, 2, None)]);
        let pred = row(8, &[(0, 3, 1), (3, 8, 2)], &[label(1, 1, Some(1.0)), label(2, 2, Some(1.0))]);
        let ap = ap_pan([(1, &pred, &gt)], &Taxonomy::default()).unwrap();
        assert_eq!(ap, Some(1.0));
    }

    #[test]
    fn no_predictions_is_zero() {
        let gt = row(8, &[(0, 3, 1)], &[label(1, 1, None)]);
        let pred = row(8, &[], &[]);
        assert_eq!(ap_pan([(1, &pred, &gt)], &Taxonomy::default()).unwrap(), Some(0.0));
    }

    #[test]
    fn stuff_only_ground_truth_has_no_ap() {
        let gt = row(4, &[(0, 4, 1)], &[label(1, 7, None)]);
        let pred = row(4, &[(0, 4, 1)], &[label(1, 7, Some(0.5))]);
        assert_eq!(ap_pan([(1, &pred, &gt)], &Taxonomy::default()).unwrap(), None);
    }

    #[test]
    fn three_predictions_two_instances_hand_enumerated() {
        // gt A = [0,16), B = [16,32); P1 = [1,16) IoU 15/16, P2 = [16,26) IoU 10/16,
        // P3 = [26,32) IoU 6/16. Score order: P3, P1, P2.
        let gt = row(32, &[(0, 16, 1), (16, 32, 2)], &[label(1, 1, None), label(2, 1, None)]);
        let pred = row(
            32,
            &[(1, 16, 1), (16, 26, 2), (26, 32, 3)],
            &[label(1, 1, Some(0.9)), label(2, 1, Some(0.8)), label(3, 1, Some(0.95))],
        );
        // t <= 0.625 (3 thresholds): F, T, T -> interpolated precision 2/3 at all 101 points
        // 0.625 < t <= 0.9375 (6 thresholds): F, T, F -> precision 1/2 up to recall 0.5 (51 points)
        // t = 0.95: nothing matches -> 0
        let expected = (3.0 * (2.0 / 3.0) + 6.0 * (0.5 * 51.0 / 101.0)) / 10.0;
        let ap = ap_pan([(7, &pred, &gt)], &Taxonomy::default()).unwrap().unwrap();
        assert!((ap - expected).abs() < 1e-12, "{ap} vs {expected}");
    }

    #[test]
    fn detections_on_crowd_are_ignored() {
        let gt = row(
            12,
            &[(0, 6, 1), (6, 12, 2)],
            &[label(1, 1, None), SegmentLabel { id: 2, category_id: 1, iscrowd: true, score: None }],
        );
        let pred = row(12, &[(0, 6, 1), (7, 12, 2)], &[label(1, 1, Some(0.5)), label(2, 1, Some(0.9))]);
        // the higher-scored detection sits on the crowd region and must not count as FP
        assert_eq!(ap_pan([(1, &pred, &gt)], &Taxonomy::default()).unwrap(), Some(1.0));
    }

    #[test]
    fn images_are_pooled_per_category() {
        let gt = row(4, &[(0, 4, 1)], &[label(1, 1, None)]);
        let hit = row(4, &[(0, 4, 1)], &[label(1, 1, Some(0.9))]);
        let miss = row(4, &[], &[]);
        // two gts, one found at full precision: recall reaches 0.5 -> 51 of 101 points
        let ap = ap_pan([(1, &hit, &gt), (2, &miss, &gt)], &Taxonomy::default()).unwrap().unwrap();
        assert!((ap - 51.0 / 101.0).abs() < 1e-12);
    }

    #[test]
    fn missing_score_is_an_error() {
        let gt = row(4, &[(0, 4, 1)], &[label(1, 1, None)]);
        let pred = row(4, &[(0, 4, 5)], &[label(5, 1, None)]);
        let err = ap_pan([(3, &pred, &gt)], &Taxonomy::default()).unwrap_err();
        assert!(matches!(err, Error::MissingScores { image_id: 3, segment_id: 5 }));
        assert!(err.to_string().contains("--no-ap"));
    }
}
