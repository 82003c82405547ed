//! Random panoptic maps and brute-force reference metrics shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use occlbench::pandata::{Category, PanopticMap, SegmentLabel, Taxonomy};
use rand::Rng;

/// Two thing categories and one stuff category.
pub fn small_taxonomy() -> Taxonomy {
    Taxonomy::new(vec![
        Category { id: 1, name: "a".into(), isthing: true },
        Category { id: 2, name: "b".into(), isthing: true },
        Category { id: 3, name: "c".into(), isthing: false },
    ])
    .unwrap()
}

fn paint_rect<R: Rng>(rng: &mut R, ids: &mut [u32], w: usize, h: usize, id: u32) {
    let x0 = rng.gen_range(0..w);
    let y0 = rng.gen_range(0..h);
    let x1 = rng.gen_range(x0 + 1..=w);
    let y1 = rng.gen_range(y0 + 1..=h);
    for y in y0..y1 {
        for x in x0..x1 {
            ids[y * w + x] = id;
        }
    }
}

fn finish(w: usize, h: usize, ids: Vec<u32>, cats: &BTreeMap<u32, u32>, scored: bool, rng: &mut impl Rng) -> PanopticMap {
    let present: BTreeSet<u32> = ids.iter().copied().filter(|&i| i != 0).collect();
    let labels: Vec<SegmentLabel> = present
        .iter()
        .map(|&id| SegmentLabel {
            id,
            category_id: cats[&id],
            iscrowd: false,
            score: scored.then(|| rng.gen_range(0.0..1.0)),
        })
        .collect();
    PanopticMap::from_raster(w as u32, h as u32, ids, &labels).unwrap()
}

/// A prediction/ground-truth pair on a canvas of at most 16x16 with at most
/// five segments per map and categories drawn from [`small_taxonomy`]. The
/// prediction is a perturbed copy of the ground truth so that matches occur.
pub fn random_pair<R: Rng>(rng: &mut R) -> (PanopticMap, PanopticMap) {
    let w = rng.gen_range(2..=16usize);
    let h = rng.gen_range(2..=16usize);
    let n_gt = rng.gen_range(1..=5u32);
    let mut gt_ids = vec![1u32; w * h];
    for id in 2..=n_gt {
        paint_rect(rng, &mut gt_ids, w, h, id);
    }
    if rng.gen_bool(0.5) {
        for p in gt_ids.iter_mut() {
            if rng.gen_bool(0.08) {
                *p = 0;
            }
        }
    }
    let gt_cats: BTreeMap<u32, u32> = (1..=n_gt).map(|id| (id, rng.gen_range(1..=3))).collect();

    // relabel gt ids into pred ids (possibly merging), then paint noise rectangles
    let n_pred = rng.gen_range(1..=5u32);
    let remap: BTreeMap<u32, u32> = (0..=n_gt)
        .map(|id| (id, if id == 0 { rng.gen_range(0..=n_pred) } else { rng.gen_range(1..=n_pred) }))
        .collect();
    let mut pred_ids: Vec<u32> = gt_ids.iter().map(|g| remap[g]).collect();
    for _ in 0..rng.gen_range(0..=3) {
        let id = rng.gen_range(0..=n_pred);
        paint_rect(rng, &mut pred_ids, w, h, id);
    }
    let pred_cats: BTreeMap<u32, u32> = (1..=n_pred)
        .map(|id| {
            let inherited = remap.iter().find(|(g, p)| **g != 0 && **p == id).map(|(g, _)| gt_cats[g]);
            match inherited {
                Some(c) if rng.gen_bool(0.8) => (id, c),
                _ => (id, rng.gen_range(1..=3)),
            }
        })
        .collect();
    let gt = finish(w, h, gt_ids, &gt_cats, false, rng);
    let pred = finish(w, h, pred_ids, &pred_cats, true, rng);
    (pred, gt)
}

/// IoU of a pred and gt segment by direct pixel counting.
pub fn pixel_iou(pred: &PanopticMap, gt: &PanopticMap, p: u32, g: u32, ignore_void: bool) -> f64 {
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&pp, &gg) in pred.ids.iter().zip(&gt.ids) {
        let in_p = pp == p && !(ignore_void && gg == 0);
        let in_g = gg == g;
        if in_p && in_g {
            inter += 1;
        }
        if in_p || in_g {
            union += 1;
        }
    }
    inter as f64 / union as f64
}

/// Maximum-cardinality matching over all injective pred -> gt assignments
/// restricted to same-category pairs with IoU > 0.5, found by enumeration.
/// Returns the matched `(pred, gt, iou)` triples.
pub fn exhaustive_matching(pred: &PanopticMap, gt: &PanopticMap, ignore_void: bool) -> Vec<(u32, u32, f64)> {
    let preds: Vec<(u32, u32)> = pred.segments.iter().map(|s| (s.id, s.category_id)).collect();
    let gts: Vec<(u32, u32)> = gt.segments.iter().map(|s| (s.id, s.category_id)).collect();
    let allowed = |pi: usize, gi: usize| -> Option<f64> {
        if preds[pi].1 != gts[gi].1 {
            return None;
        }
        let iou = pixel_iou(pred, gt, preds[pi].0, gts[gi].0, ignore_void);
        (iou > 0.5).then_some(iou)
    };
    let mut best: Vec<(u32, u32, f64)> = Vec::new();
    let mut current: Vec<(u32, u32, f64)> = Vec::new();
    let mut used = vec![false; gts.len()];
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        pi: usize,
        n_pred: usize,
        used: &mut Vec<bool>,
        current: &mut Vec<(u32, u32, f64)>,
        best: &mut Vec<(u32, u32, f64)>,
        allowed: &dyn Fn(usize, usize) -> Option<f64>,
        preds: &[(u32, u32)],
        gts: &[(u32, u32)],
    ) {
        if pi == n_pred {
            let score = |m: &[(u32, u32, f64)]| (m.len(), m.iter().map(|t| t.2).sum::<f64>());
            let (cl, cs) = score(current);
            let (bl, bs) = score(best);
            if cl > bl || (cl == bl && cs > bs) {
                *best = current.clone();
            }
            return;
        }
        recurse(pi + 1, n_pred, used, current, best, allowed, preds, gts);
        for gi in 0..gts.len() {
            if used[gi] {
                continue;
            }
            if let Some(iou) = allowed(pi, gi) {
                used[gi] = true;
                current.push((preds[pi].0, gts[gi].0, iou));
                recurse(pi + 1, n_pred, used, current, best, allowed, preds, gts);
                current.pop();
                used[gi] = false;
            }
        }
    }
    recurse(0, preds.len(), &mut used, &mut current, &mut best, &allowed, &preds, &gts);
    best.sort_by_key(|t| (t.0, t.1));
    best
}

/// Per-category `(tp, fp, fn, iou_sum)` from the exhaustive matching, with the
/// void rule for unmatched predictions applied by pixel counting.
pub fn oracle_counts(pred: &PanopticMap, gt: &PanopticMap, ignore_void: bool) -> BTreeMap<u32, (u64, u64, u64, f64)> {
    let matching = exhaustive_matching(pred, gt, ignore_void);
    let mut out: BTreeMap<u32, (u64, u64, u64, f64)> = BTreeMap::new();
    for &(p, _, iou) in &matching {
        let cat = pred.segment(p).unwrap().category_id;
        let e = out.entry(cat).or_default();
        e.0 += 1;
        e.3 += iou;
    }
    for s in &gt.segments {
        if !matching.iter().any(|m| m.1 == s.id) {
            out.entry(s.category_id).or_default().2 += 1;
        }
    }
    for s in &pred.segments {
        if matching.iter().any(|m| m.0 == s.id) {
            continue;
        }
        let on_void = pred.ids.iter().zip(&gt.ids).filter(|(&p, &g)| p == s.id && g == 0).count();
        let area = pred.ids.iter().filter(|&&p| p == s.id).count();
        if ignore_void && on_void as f64 / area as f64 > 0.5 {
            continue;
        }
        out.entry(s.category_id).or_default().1 += 1;
    }
    out
}

/// Category-averaged `(PQ, SQ, RQ)` over pooled per-category counts.
pub fn oracle_pq(counts: &BTreeMap<u32, (u64, u64, u64, f64)>) -> Option<(f64, f64, f64)> {
    let mut rows = Vec::new();
    for &(tp, fp, fn_, iou) in counts.values() {
        if tp + fp + fn_ == 0 {
            continue;
        }
        let denom = tp as f64 + fp as f64 / 2.0 + fn_ as f64 / 2.0;
        let sq = if tp == 0 { 0.0 } else { iou / tp as f64 };
        rows.push((iou / denom, sq, tp as f64 / denom));
    }
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    Some((
        rows.iter().map(|r| r.0).sum::<f64>() / n,
        rows.iter().map(|r| r.1).sum::<f64>() / n,
        rows.iter().map(|r| r.2).sum::<f64>() / n,
    ))
}

pub fn merge_counts(into: &mut BTreeMap<u32, (u64, u64, u64, f64)>, from: &BTreeMap<u32, (u64, u64, u64, f64)>) {
    for (&k, v) in from {
        let e = into.entry(k).or_default();
        e.0 += v.0;
        e.1 += v.1;
        e.2 += v.2;
        e.3 += v.3;
    }
}

/// Mean over gt-present categories of per-category IoU, counted pixel by pixel
/// with gt void skipped.
pub fn oracle_miou(pairs: &[(PanopticMap, PanopticMap)], taxonomy: &Taxonomy) -> Option<f64> {
    let mut ious = Vec::new();
    for c in &taxonomy.categories {
        let (mut inter, mut union, mut in_gt) = (0u64, 0u64, 0u64);
        for (pred, gt) in pairs {
            let cat = |m: &PanopticMap, id: u32| if id == 0 { 0 } else { m.segment(id).unwrap().category_id };
            for (&p, &g) in pred.ids.iter().zip(&gt.ids) {
                if g == 0 {
                    continue;
                }
                let (pc, gc) = (cat(pred, p), cat(gt, g));
                in_gt += (gc == c.id) as u64;
                inter += (pc == c.id && gc == c.id) as u64;
                union += (pc == c.id || gc == c.id) as u64;
            }
        }
        if in_gt > 0 {
            ious.push(inter as f64 / union as f64);
        }
    }
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

pub const FD_STEP: f64 = 1e-5;
pub const KINK_GAP: f64 = 1e-3;
/// Below this norm both gradients are finite-difference noise and the
/// relative error is undefined.
pub const ZERO_GRADIENT: f64 = 1e-8;

/// One random gradient check of the contrastive loss with respect to the raw
/// `B x D x 2 x 2` feature tensor, against central differences. Returns the
/// relative error `|g - g_fd| / max(|g|, |g_fd|)` (Euclidean norms), or `None`
/// when some negative pair lies within [`KINK_GAP`] of its margin or both
/// gradients are below [`ZERO_GRADIENT`].
pub fn gradient_check<R: Rng>(rng: &mut R) -> Option<f64> {
    use occlbench::occlcon::{contrastive_loss, contrastive_loss_grad, embed, MarginConfig};
    use occlbench::scenegen::OcclusionLevel;

    let b = rng.gen_range(2..=8usize);
    let d = rng.gen_range(4..=32usize);
    let tau_lh = rng.gen_range(0.1..0.5);
    let cfg = MarginConfig::new(tau_lh, rng.gen_range(tau_lh..0.9), 1.0).unwrap();
    let shape = [b, d, 2, 2];
    // a shared direction keeps similarities spread over (-1, 1) so hinges fire
    let common: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut x: Vec<f64> = (0..b * d * 4)
        .map(|i| common[(i / 4) % d] + rng.gen_range(-1.0..1.0))
        .collect();
    let labels: Vec<OcclusionLevel> = (0..b).map(|_| OcclusionLevel::ALL[rng.gen_range(0..3)]).collect();

    let e = embed(&x, shape, &labels).unwrap();
    for i in 0..b {
        for j in 0..b {
            if labels[i] != labels[j] {
                let tau = occlbench::occlcon::pair_margin(labels[i], labels[j], &cfg).unwrap();
                if (e.batch.sim(i, j) - tau).abs() <= KINK_GAP {
                    return None;
                }
            }
        }
    }
    let (_, grad_rows) = contrastive_loss_grad(&e.batch, &cfg).unwrap();
    let analytic = e.backward(&grad_rows);

    let loss_at = |x: &[f64]| contrastive_loss(&embed(x, shape, &labels).unwrap().batch, &cfg).unwrap();
    let mut numeric = vec![0.0; x.len()];
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + FD_STEP;
        let up = loss_at(&x);
        x[k] = orig - FD_STEP;
        let down = loss_at(&x);
        x[k] = orig;
        numeric[k] = (up - down) / (2.0 * FD_STEP);
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    (scale >= ZERO_GRADIENT).then(|| diff / scale)
}

/// Generates a `size x size` synthetic dataset of `n` images under `root/name`.
pub fn generate(root: &std::path::Path, name: &str, n: usize, size: u32, seed: u64, first_image_id: u64) -> std::path::PathBuf {
    let cfg = occlbench::scenegen::GeneratorConfig {
        num_images: n,
        height: size,
        width: size,
        first_image_id,
        ..Default::default()
    };
    let out = root.join(name);
    occlbench::scenegen::generate_dataset(&cfg, seed, &out).unwrap();
    out
}
