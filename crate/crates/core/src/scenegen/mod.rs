//! Procedural scenes with exact occlusion ground truth.
//!
//! Every shape is rasterized twice: alone (its amodal extent) and after
//! nearest-first compositing (what survives). The occlusion rate of an
//! instance is `1 - |visible| / |full|`, and the image level is the bucket of
//! the largest rate among annotated things.

mod generate;
mod level;
mod render;
mod shape;

pub use generate::{
    apportion, generate_dataset, generate_samples, generate_with, propose_scene, DatasetManifest, GeneratedSample,
    GenerationSummary, GeneratorConfig, LevelCounts, LevelProportions, GENERATION_MANIFEST,
};
pub use level::{bucket, image_occlusion_level, OcclusionLevel};
pub use render::{category_color, render_scene, Instance, RenderOptions, RenderedSample, SceneSpec, MIN_CANVAS};
pub use shape::{occlusion_rate, Mask, ShapeKind, ShapeSpec};
