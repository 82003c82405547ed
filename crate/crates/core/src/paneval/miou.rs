use super::matching::check_pair;
use crate::error::{Error, Result};
use crate::pandata::{PanopticMap, Taxonomy};

/// Pixel confusion matrix over categories, with an extra column for void predictions.
/// Pixels that are void in the ground truth are skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionAccumulator {
    categories: Vec<u32>,
    /// row = gt category index, column = pred category index (last column = void)
    counts: Vec<u64>,
}

impl ConfusionAccumulator {
    pub fn new(taxonomy: &Taxonomy) -> Self {
        let k = taxonomy.len();
        ConfusionAccumulator {
            categories: taxonomy.categories.iter().map(|c| c.id).collect(),
            counts: vec![0; k * (k + 1)],
        }
    }

    fn cols(&self) -> usize {
        self.categories.len() + 1
    }

    pub fn add(&mut self, pred: &PanopticMap, gt: &PanopticMap, taxonomy: &Taxonomy) -> Result<()> {
        check_pair(pred, gt, taxonomy)?;
        let k = self.categories.len();
        let index = |cat: u32| -> usize {
            if cat == 0 {
                k
            } else {
                taxonomy.index_of(cat).expect("categories checked against the taxonomy")
            }
        };
        let gt_cats = gt.category_raster();
        let pred_cats = pred.category_raster();
        let cols = self.cols();
        for (&g, &p) in gt_cats.iter().zip(&pred_cats) {
            if g == 0 {
                continue;
            }
            self.counts[index(g) * cols + index(p)] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionAccumulator) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// IoU per category present in the ground truth.
    pub fn per_category_iou(&self) -> Vec<(u32, f64)> {
        let k = self.categories.len();
        let cols = self.cols();
        let mut out = Vec::new();
        for c in 0..k {
            let row: u64 = self.counts[c * cols..(c + 1) * cols].iter().sum();
            if row == 0 {
                continue;
            }
            let col: u64 = (0..k).map(|r| self.counts[r * cols + c]).sum();
            let tp = self.counts[c * cols + c];
            out.push((self.categories[c], tp as f64 / (row + col - tp) as f64));
        }
        out
    }

    pub fn miou(&self) -> Option<f64> {
        let ious = self.per_category_iou();
        if ious.is_empty() {
            None
        } else {
            Some(ious.iter().map(|(_, v)| v).sum::<f64>() / ious.len() as f64)
        }
    }
}

/// Semantic mIoU of a single prediction: segments collapsed to categories.
pub fn miou_pan(pred: &PanopticMap, gt: &PanopticMap, taxonomy: &Taxonomy) -> Result<f64> {
    let mut acc = ConfusionAccumulator::new(taxonomy);
    acc.add(pred, gt, taxonomy)?;
    acc.miou()
        .ok_or_else(|| Error::EmptyEvaluation("ground truth is entirely void".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pandata::SegmentLabel;

    fn map(ids: Vec<u32>, cats: &[(u32, u32)]) -> PanopticMap {
        let labels: Vec<SegmentLabel> = cats
            .iter()
            .map(|&(id, category_id)| SegmentLabel { id, category_id, iscrowd: false, score: None })
            .collect();
        PanopticMap::from_raster(ids.len() as u32, 1, ids, &labels).unwrap()
    }

    #[test]
    fn identity_is_one() {
        let gt = map(vec![1, 1, 2, 3], &[(1, 1), (2, 1), (3, 7)]);
        assert_eq!(miou_pan(&gt, &gt, &Taxonomy::default()).unwrap(), 1.0);
    }

    #[test]
    fn single_category_prediction_on_even_split() {
        let gt = map(vec![1, 1, 2, 2], &[(1, 1), (2, 7)]);
        let pred = map(vec![5, 5, 5, 5], &[(5, 1)]);
        // IoU(1) = 2/4, IoU(7) = 0
        assert_eq!(miou_pan(&pred, &gt, &Taxonomy::default()).unwrap(), 0.25);
    }

    #[test]
    fn instance_ids_do_not_matter() {
        let gt = map(vec![1, 2, 3, 3], &[(1, 1), (2, 1), (3, 7)]);
        let pred = map(vec![9, 9, 4, 4], &[(9, 1), (4, 7)]);
        assert_eq!(miou_pan(&pred, &gt, &Taxonomy::default()).unwrap(), 1.0);
    }

    #[test]
    fn void_gt_pixels_are_skipped_and_void_pred_counts_as_miss() {
        let gt = map(vec![0, 1, 1, 0], &[(1, 1)]);
        let pred = map(vec![2, 0, 2, 2], &[(2, 1)]);
        // over non-void gt: pixels 1 (pred void) and 2 (pred cat 1) -> IoU = 1/2
        assert_eq!(miou_pan(&pred, &gt, &Taxonomy::default()).unwrap(), 0.5);
    }
}
