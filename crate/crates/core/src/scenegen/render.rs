use std::collections::{BTreeMap, HashSet};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::shape::{occlusion_rate, Mask, ShapeSpec};
use crate::error::{Error, Result};
use crate::pandata::{OcclusionRecord, PanopticMap, SegmentLabel, Taxonomy};

pub const MIN_CANVAS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: u32,
    pub width: u32,
    pub shapes: Vec<ShapeSpec>,
    pub background_category: u32,
    pub rng_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// Thing instances with fewer visible pixels are dropped from the annotation.
    pub min_visible_pixels: usize,
    /// When set, stuff shapes must sit behind every thing, so only things occlude things.
    pub things_only_occlusion: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            min_visible_pixels: 10,
            things_only_occlusion: true,
        }
    }
}

/// A retained thing instance with its amodal and visible extents.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub segment_id: u32,
    pub category_id: u32,
    pub full: Mask,
    pub visible: Mask,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSample {
    pub image: RgbImage,
    pub panoptic: PanopticMap,
    pub instances: Vec<Instance>,
    pub occlusion: OcclusionRecord,
}

impl RenderedSample {
    pub fn with_image_id(mut self, image_id: u64) -> Self {
        self.occlusion.image_id = image_id;
        self
    }
}

fn validate(spec: &SceneSpec, taxonomy: &Taxonomy, opts: &RenderOptions) -> Result<()> {
    if spec.width < MIN_CANVAS || spec.height < MIN_CANVAS {
        return Err(Error::Config(format!(
            "canvas {}x{} is below the {MIN_CANVAS}x{MIN_CANVAS} minimum",
            spec.width, spec.height
        )));
    }
    if taxonomy.is_thing(spec.background_category)? {
        return Err(Error::Config(format!(
            "background category {} is a thing category",
            spec.background_category
        )));
    }
    let mut ranks = HashSet::new();
    let mut any_thing = false;
    for s in &spec.shapes {
        if !(s.size.0 > 0.0 && s.size.1 > 0.0) {
            return Err(Error::Config(format!("shape at depth {} has non-positive size", s.depth_rank)));
        }
        if !ranks.insert(s.depth_rank) {
            return Err(Error::Config(format!("depth rank {} is used twice", s.depth_rank)));
        }
        any_thing |= taxonomy.is_thing(s.category_id)?;
    }
    if !any_thing {
        return Err(Error::Config("scene has no thing-category shape".into()));
    }
    if opts.things_only_occlusion {
        let nearest_stuff = spec
            .shapes
            .iter()
            .filter(|s| !taxonomy.is_thing(s.category_id).unwrap_or(false))
            .map(|s| s.depth_rank)
            .min();
        let farthest_thing = spec
            .shapes
            .iter()
            .filter(|s| taxonomy.is_thing(s.category_id).unwrap_or(false))
            .map(|s| s.depth_rank)
            .max();
        if let (Some(st), Some(th)) = (nearest_stuff, farthest_thing) {
            if st < th {
                return Err(Error::Config(
                    "things_only_occlusion requires every stuff shape behind every thing".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Composites the scene nearest-first and annotates every surviving thing instance.
///
/// A thing whose visible area falls below `min_visible_pixels` (or is empty) is dropped;
/// its pixels go to whatever lies beneath. Stuff pixels are merged per category.
pub fn render_scene(spec: &SceneSpec, taxonomy: &Taxonomy, opts: &RenderOptions) -> Result<RenderedSample> {
    validate(spec, taxonomy, opts)?;
    let (w, h) = (spec.width, spec.height);
    let npix = (w * h) as usize;

    let mut order: Vec<usize> = (0..spec.shapes.len()).collect();
    order.sort_by_key(|&i| spec.shapes[i].depth_rank);

    let mut fulls: Vec<Mask> = Vec::with_capacity(spec.shapes.len());
    for s in &spec.shapes {
        let m = s.rasterize(w, h);
        if m.area() == 0 {
            return Err(Error::Config(format!(
                "shape at depth {} lies entirely outside the canvas",
                s.depth_rank
            )));
        }
        fulls.push(m);
    }

    // owner[p] = index into spec.shapes of the shape that shows at p
    let mut owner: Vec<Option<usize>> = vec![None; npix];
    let mut retained_things: Vec<(usize, Mask)> = Vec::new();
    let min_visible = opts.min_visible_pixels.max(1);
    for &i in &order {
        let shape = &spec.shapes[i];
        let mut visible = Mask::empty(w, h);
        let mut count = 0;
        for p in 0..npix {
            if fulls[i].bits[p] && owner[p].is_none() {
                visible.bits[p] = true;
                count += 1;
            }
        }
        let is_thing = taxonomy.is_thing(shape.category_id)?;
        if is_thing && count < min_visible {
            continue;
        }
        for p in 0..npix {
            if visible.bits[p] {
                owner[p] = Some(i);
            }
        }
        if is_thing {
            retained_things.push((i, visible));
        }
    }
    if retained_things.is_empty() {
        return Err(Error::Resample("every thing instance is hidden or below min_visible_pixels".into()));
    }

    // things keep their list order; stuff categories follow in taxonomy order
    retained_things.sort_by_key(|(i, _)| *i);
    let mut shape_to_segment: BTreeMap<usize, u32> = BTreeMap::new();
    let mut labels = Vec::new();
    let mut instances = Vec::new();
    let mut next_id = 1u32;
    for (i, visible) in retained_things {
        let shape = &spec.shapes[i];
        shape_to_segment.insert(i, next_id);
        labels.push(SegmentLabel {
            id: next_id,
            category_id: shape.category_id,
            iscrowd: false,
            score: None,
        });
        let rate = occlusion_rate(&fulls[i], &visible)?;
        instances.push(Instance {
            segment_id: next_id,
            category_id: shape.category_id,
            full: fulls[i].clone(),
            visible,
            rate,
        });
        next_id += 1;
    }

    let pixel_category = |p: usize| match owner[p] {
        Some(i) => spec.shapes[i].category_id,
        None => spec.background_category,
    };
    let mut stuff_segment: BTreeMap<u32, u32> = BTreeMap::new();
    for stuff_id in taxonomy.stuff_ids() {
        if (0..npix).any(|p| owner[p].map_or(true, |i| !shape_to_segment.contains_key(&i)) && pixel_category(p) == stuff_id) {
            stuff_segment.insert(stuff_id, next_id);
            labels.push(SegmentLabel {
                id: next_id,
                category_id: stuff_id,
                iscrowd: false,
                score: None,
            });
            next_id += 1;
        }
    }

    let ids: Vec<u32> = (0..npix)
        .map(|p| match owner[p].and_then(|i| shape_to_segment.get(&i)) {
            Some(&seg) => seg,
            None => stuff_segment[&pixel_category(p)],
        })
        .collect();
    let panoptic = PanopticMap::from_raster(w, h, ids, &labels)?;

    let rates: BTreeMap<u32, f64> = instances.iter().map(|inst| (inst.segment_id, inst.rate)).collect();
    let occlusion = OcclusionRecord::from_rates(0, rates)?;

    let image = paint(spec, &owner);
    Ok(RenderedSample {
        image,
        panoptic,
        instances,
        occlusion,
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Base color for a category; the first nine ids get hand-picked, well separated colors.
pub fn category_color(category_id: u32) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 9] = [
        [220, 40, 40],
        [40, 180, 60],
        [40, 70, 220],
        [230, 200, 30],
        [200, 60, 210],
        [30, 200, 210],
        [120, 90, 60],
        [150, 150, 150],
        [150, 200, 245],
    ];
    match category_id {
        1..=9 => PALETTE[category_id as usize - 1],
        _ => {
            let h = splitmix64(category_id as u64);
            [h as u8, (h >> 8) as u8, (h >> 16) as u8]
        }
    }
}

fn jitter(base: u8, delta: i32) -> u8 {
    (base as i32 + delta).clamp(0, 255) as u8
}

fn paint(spec: &SceneSpec, owner: &[Option<usize>]) -> RgbImage {
    let (w, h) = (spec.width, spec.height);
    let mut img = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = (y * w + x) as usize;
            let (cat, seed) = match owner[p] {
                Some(i) => (spec.shapes[i].category_id, spec.shapes[i].fill_seed),
                None => (spec.background_category, spec.rng_seed),
            };
            let base = category_color(cat);
            let shape_hash = splitmix64(seed);
            let px_hash = splitmix64(seed ^ ((x as u64) << 32 | y as u64));
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let shape_shift = ((shape_hash >> (8 * c)) & 0x1f) as i32 - 16;
                let noise = ((px_hash >> (8 * c)) & 0x0f) as i32 - 8;
                rgb[c] = jitter(base[c], shape_shift + noise);
            }
            img.put_pixel(x, y, image::Rgb(rgb));
        }
    }
    img
}
