use std::collections::VecDeque;

use super::layers::Tensor;
use super::model::softmax;
use crate::error::Result;
use crate::pandata::{PanopticMap, SegmentLabel, Taxonomy};

/// Turns per-pixel category logits (channel `k` = `taxonomy.categories[k]`)
/// into a panoptic map.
///
/// Pixels take their argmax category (lowest index on ties). Thing pixels are
/// split into 4-connected components; a component with fewer than
/// `min_area` pixels becomes void. Each stuff category present forms one
/// segment. Segment ids follow raster order of each segment's first pixel, and
/// a segment's score is the mean softmax probability of its category over its
/// pixels.
pub fn panoptic_postprocess(logits: &Tensor, taxonomy: &Taxonomy, min_area: usize) -> Result<PanopticMap> {
    assert_eq!(logits.c, taxonomy.len(), "one logit channel per category");
    let (h, w, n) = (logits.h, logits.w, logits.plane());
    let probs = softmax(logits);
    let argmax: Vec<usize> = (0..n)
        .map(|p| {
            let mut best = 0;
            for c in 1..logits.c {
                if logits.data[c * n + p] > logits.data[best * n + p] {
                    best = c;
                }
            }
            best
        })
        .collect();
    let is_thing: Vec<bool> = taxonomy.categories.iter().map(|c| c.isthing).collect();

    // component label per pixel: things by flood fill, stuff by category
    const UNSET: usize = usize::MAX;
    let mut comp = vec![UNSET; n];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut comp_class: Vec<usize> = Vec::new();
    let mut stuff_comp = vec![UNSET; logits.c];
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != UNSET {
            continue;
        }
        let class = argmax[start];
        if !is_thing[class] {
            if stuff_comp[class] == UNSET {
                stuff_comp[class] = members.len();
                members.push(Vec::new());
                comp_class.push(class);
            }
            comp[start] = stuff_comp[class];
            members[stuff_comp[class]].push(start);
            continue;
        }
        let id = members.len();
        let mut pixels = Vec::new();
        comp[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            pixels.push(p);
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if comp[q] == UNSET && argmax[q] == class {
                    comp[q] = id;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        members.push(pixels);
        comp_class.push(class);
    }

    let mut seg_of_comp = vec![0u32; members.len()];
    let mut labels = Vec::new();
    let mut first_pixel: Vec<(usize, usize)> = members
        .iter()
        .enumerate()
        .map(|(i, px)| (*px.iter().min().expect("components are non-empty"), i))
        .collect();
    first_pixel.sort_unstable();
    for (_, ci) in first_pixel {
        let class = comp_class[ci];
        let px = &members[ci];
        if is_thing[class] && px.len() < min_area {
            continue;
        }
        let id = labels.len() as u32 + 1;
        seg_of_comp[ci] = id;
        let score = px.iter().map(|&p| probs.data[class * n + p] as f64).sum::<f64>() / px.len() as f64;
        labels.push(SegmentLabel {
            id,
            category_id: taxonomy.categories[class].id,
            iscrowd: false,
            score: Some(score),
        });
    }
    let ids: Vec<u32> = comp.iter().map(|&c| seg_of_comp[c]).collect();
    PanopticMap::from_raster(w as u32, h as u32, ids, &labels)
}

/// Logits that put `confidence` on each pixel's category of `map` (void pixels get all zeros).
pub fn one_hot_logits(map: &PanopticMap, taxonomy: &Taxonomy, confidence: f32) -> Tensor {
    let cats = map.category_raster();
    let mut t = Tensor::zeros(taxonomy.len(), map.height as usize, map.width as usize);
    let n = t.plane();
    for (p, &c) in cats.iter().enumerate() {
        if c != 0 {
            let k = taxonomy.index_of(c).expect("map categories are in the taxonomy");
            t.data[k * n + p] = confidence;
        }
    }
    t
}
