//! COCO-panoptic datasets on disk plus the per-image occlusion sidecar.
//!
//! Layout of a dataset root:
//!
//! ```text
//! root/
//!   panoptic.json        COCO panoptic annotations (images, annotations, categories)
//!   panoptic/<id>.png    segment ids, id = R + 256 G + 256^2 B
//!   images/<id>.png      RGB input (absent for prediction roots)
//!   occlusion.json       sidecar: one record per image
//!   amodal/<id>_<seg>.png  full masks of thing instances (generator output only)
//! ```
//!
//! JSON is written canonically (sorted keys, six-decimal floats) so that
//! reading and re-writing a dataset reproduces the same bytes.

mod category;
mod io;
pub mod json;
mod map;
mod record;
mod split;

pub use category::{Category, Taxonomy};
pub use io::{
    image_stem, read_dataset, read_dataset_with_sidecar, read_sidecar, write_dataset, write_sidecar, Dataset,
    DatasetWriter, Entry, Layout, Sample, SampleRef, AMODAL_DIR, IMAGES_DIR, PANOPTIC_DIR, PANOPTIC_JSON,
    SIDECAR_JSON,
};
pub use map::{decode_id_map, encode_id_map, id_to_rgb, rgb_to_id, PanopticMap, Segment, SegmentLabel, MAX_SEGMENT_ID};
pub use record::{round6, OcclusionRecord};
pub use split::{split_by_level, LevelSplit, SubsetSummary};
