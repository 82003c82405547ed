use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::level::{bucket, OcclusionLevel};
use super::render::{render_scene, RenderOptions, RenderedSample, SceneSpec};
use super::shape::{ShapeKind, ShapeSpec};
use crate::error::{Error, Result};
use crate::pandata::{round6, DatasetWriter, SampleRef, Taxonomy};
use crate::provenance::{config_hash, tree_checksum};

/// Relative weight of each occlusion level; renormalized before use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelProportions {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

impl Default for LevelProportions {
    /// Relative level weights 6668 : 11251 : 12081 (low : mid : high).
    fn default() -> Self {
        LevelProportions {
            low: 6668.0,
            mid: 11251.0,
            high: 12081.0,
        }
    }
}

impl LevelProportions {
    pub fn as_array(&self) -> [f64; 3] {
        [self.low, self.mid, self.high]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub num_images: usize,
    pub height: u32,
    pub width: u32,
    pub level_proportions: LevelProportions,
    pub taxonomy: Taxonomy,
    pub min_visible_pixels: usize,
    pub things_only_occlusion: bool,
    /// Upper bound on thing shapes per scene.
    pub max_things: usize,
    /// Upper bound on extra stuff regions on top of the background.
    pub max_stuff_shapes: usize,
    pub max_attempts: u64,
    pub first_image_id: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_images: 30,
            height: 128,
            width: 128,
            level_proportions: LevelProportions::default(),
            taxonomy: Taxonomy::default(),
            min_visible_pixels: 10,
            things_only_occlusion: true,
            max_things: 7,
            max_stuff_shapes: 2,
            max_attempts: 200_000,
            first_image_id: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        self.taxonomy.validate()?;
        if self.taxonomy.thing_ids().is_empty() || self.taxonomy.stuff_ids().is_empty() {
            return Err(Error::Config("taxonomy needs at least one thing and one stuff category".into()));
        }
        if self.width < super::render::MIN_CANVAS || self.height < super::render::MIN_CANVAS {
            return Err(Error::Config(format!(
                "canvas {}x{} is below the 16x16 minimum",
                self.width, self.height
            )));
        }
        let p = self.level_proportions.as_array();
        if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || p.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("level proportions must be non-negative with a positive sum".into()));
        }
        if self.max_things == 0 {
            return Err(Error::Config("max_things must be at least 1".into()));
        }
        Ok(())
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            min_visible_pixels: self.min_visible_pixels,
            things_only_occlusion: self.things_only_occlusion,
        }
    }

    /// Exact per-level image counts: largest-remainder apportionment of `num_images`.
    pub fn quotas(&self) -> [usize; 3] {
        apportion(self.num_images, self.level_proportions.as_array())
    }
}

/// Largest-remainder apportionment; ties go to the earlier level.
pub fn apportion(n: usize, weights: [f64; 3]) -> [usize; 3] {
    let total: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| n as f64 * w / total).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = exact[i].floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in &order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub image_id: u64,
    pub level: OcclusionLevel,
    pub spec: SceneSpec,
    pub rendered: RenderedSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub seed: u64,
    pub num_images: usize,
    pub counts: [usize; 3],
    pub attempts: u64,
    pub config_hash: String,
}

/// Draws a candidate scene whose layout is biased toward `target`.
pub fn propose_scene(config: &GeneratorConfig, target: OcclusionLevel, rng: &mut impl Rng) -> SceneSpec {
    let (w, h) = (config.width as f64, config.height as f64);
    let side = w.min(h);
    let things = config.taxonomy.thing_ids();
    let stuff = config.taxonomy.stuff_ids();
    let background_category = stuff[rng.gen_range(0..stuff.len())];

    let max_things = config.max_things;
    let (lo, hi, spread) = match target {
        OcclusionLevel::Low => (1, 3.min(max_things), 1.0),
        OcclusionLevel::Mid => (2.min(max_things), 5.min(max_things), 0.35),
        OcclusionLevel::High => (3.min(max_things), max_things, 0.18),
    };
    let n_things = rng.gen_range(lo..=hi.max(lo));
    let cluster = (rng.gen_range(0.3..0.7) * w, rng.gen_range(0.3..0.7) * h);

    let mut shapes = Vec::new();
    for _ in 0..n_things {
        let center = if spread >= 1.0 {
            (rng.gen_range(0.0..w), rng.gen_range(0.0..h))
        } else {
            let r = spread * side;
            (
                (cluster.0 + rng.gen_range(-r..r)).clamp(0.0, w),
                (cluster.1 + rng.gen_range(-r..r)).clamp(0.0, h),
            )
        };
        shapes.push(ShapeSpec {
            kind: ShapeKind::ALL[rng.gen_range(0..3)],
            category_id: things[rng.gen_range(0..things.len())],
            center,
            size: (rng.gen_range(0.16..0.42) * side, rng.gen_range(0.16..0.42) * side),
            rotation: rng.gen_range(0.0..std::f64::consts::PI),
            depth_rank: 0,
            fill_seed: rng.gen(),
        });
    }
    let n_stuff = rng.gen_range(0..=config.max_stuff_shapes);
    for _ in 0..n_stuff {
        // wide bands read as floor / wall regions
        let horizontal = rng.gen_bool(0.5);
        let size = if horizontal {
            (w * 1.5, rng.gen_range(0.2..0.5) * h)
        } else {
            (rng.gen_range(0.2..0.5) * w, h * 1.5)
        };
        shapes.push(ShapeSpec {
            kind: ShapeKind::Rectangle,
            category_id: stuff[rng.gen_range(0..stuff.len())],
            center: (rng.gen_range(0.0..w), rng.gen_range(0.0..h)),
            size,
            rotation: 0.0,
            depth_rank: 0,
            fill_seed: rng.gen(),
        });
    }

    // depth: random order among things; stuff behind them unless interleaving is allowed
    let mut ranks: Vec<u32> = (0..shapes.len() as u32).collect();
    if config.things_only_occlusion {
        shuffle(&mut ranks[..n_things], rng);
        shuffle(&mut ranks[n_things..], rng);
    } else {
        shuffle(&mut ranks, rng);
    }
    for (s, r) in shapes.iter_mut().zip(ranks) {
        s.depth_rank = r;
    }

    SceneSpec {
        height: config.height,
        width: config.width,
        shapes,
        background_category,
        rng_seed: rng.gen(),
    }
}

fn shuffle(xs: &mut [u32], rng: &mut impl Rng) {
    use rand::seq::SliceRandom;
    xs.shuffle(rng);
}

/// Rejection-samples scenes until every level quota is filled, calling `sink`
/// for each accepted sample in image-id order.
///
/// Attempt `k` draws from ChaCha stream `k` of `seed`, so any attempt can be
/// replayed on its own.
pub fn generate_with(
    config: &GeneratorConfig,
    seed: u64,
    mut sink: impl FnMut(GeneratedSample) -> Result<()>,
) -> Result<GenerationSummary> {
    config.validate()?;
    let quotas = config.quotas();
    let mut filled = [0usize; 3];
    let opts = config.render_options();
    let mut next_id = config.first_image_id;
    let mut attempt: u64 = 0;
    while filled != quotas {
        if attempt >= config.max_attempts {
            let starved = (0..3)
                .filter(|&i| filled[i] < quotas[i])
                .max_by_key(|&i| quotas[i] - filled[i])
                .unwrap();
            return Err(Error::QuotaStarved {
                level: OcclusionLevel::ALL[starved],
                attempts: attempt,
                filled: filled[starved],
                target: quotas[starved],
            });
        }
        // aim at the level with the largest remaining deficit
        let target = (0..3)
            .filter(|&i| filled[i] < quotas[i])
            .max_by_key(|&i| (quotas[i] - filled[i], std::cmp::Reverse(i)))
            .map(|i| OcclusionLevel::ALL[i])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        attempt += 1;

        let spec = propose_scene(config, target, &mut rng);
        let rendered = match render_scene(&spec, &config.taxonomy, &opts) {
            Ok(r) => r,
            Err(Error::Resample(_)) | Err(Error::Config(_)) => continue,
            Err(e) => return Err(e),
        };
        let level = rendered.occlusion.occlusion_level;
        // the sidecar stores six decimals; skip scenes whose level would flip when rounded
        if bucket(round6(rendered.occlusion.max_occlusion_rate))? != level {
            continue;
        }
        if filled[level.index()] >= quotas[level.index()] {
            continue;
        }
        filled[level.index()] += 1;
        let image_id = next_id;
        next_id += 1;
        sink(GeneratedSample {
            image_id,
            level,
            spec,
            rendered: rendered.with_image_id(image_id),
        })?;
    }
    Ok(GenerationSummary {
        seed,
        num_images: config.num_images,
        counts: filled,
        attempts: attempt,
        config_hash: config_hash(config),
    })
}

pub fn generate_samples(config: &GeneratorConfig, seed: u64) -> Result<Vec<GeneratedSample>> {
    let mut out = Vec::with_capacity(config.num_images);
    generate_with(config, seed, |s| {
        out.push(s);
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub generator: GenerationSummary,
    pub counts: LevelCounts,
    pub checksum: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelCounts {
    pub low: usize,
    pub mid: usize,
    pub high: usize,
}

impl From<[usize; 3]> for LevelCounts {
    fn from(c: [usize; 3]) -> Self {
        LevelCounts {
            low: c[0],
            mid: c[1],
            high: c[2],
        }
    }
}

pub const GENERATION_MANIFEST: &str = "manifest.json";

/// Generates a dataset into `out` (images, panoptic PNG + JSON, sidecar, amodal masks,
/// manifest). Output bytes depend only on `(config, seed)`.
pub fn generate_dataset(config: &GeneratorConfig, seed: u64, out: &Path) -> Result<DatasetManifest> {
    let mut writer = DatasetWriter::create(out, &config.taxonomy)?;
    let summary = generate_with(config, seed, |s| {
        let amodal = s.rendered.instances.iter().map(|i| (i.segment_id, &i.full)).collect();
        writer.add(SampleRef {
            image_id: s.image_id,
            image: Some(&s.rendered.image),
            panoptic: &s.rendered.panoptic,
            occlusion: Some(&s.rendered.occlusion),
            amodal,
        })
    })?;
    writer.finish()?;
    let manifest = DatasetManifest {
        counts: summary.counts.into(),
        generator: summary,
        checksum: tree_checksum(out, &[GENERATION_MANIFEST])?,
    };
    let path = out.join(GENERATION_MANIFEST);
    let text = crate::pandata::json::to_canonical_string(&manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
