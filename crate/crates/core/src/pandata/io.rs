use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::json::to_canonical_string;
use super::map::{decode_id_map, encode_id_map, PanopticMap, Segment};
use super::record::OcclusionRecord;
use super::{Category, Taxonomy};
use crate::error::{Error, Result};
use crate::scenegen::{Mask, OcclusionLevel};

pub const PANOPTIC_JSON: &str = "panoptic.json";
pub const PANOPTIC_DIR: &str = "panoptic";
pub const IMAGES_DIR: &str = "images";
pub const SIDECAR_JSON: &str = "occlusion.json";
pub const AMODAL_DIR: &str = "amodal";

/// Where the pieces of a dataset live under its root.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub root: PathBuf,
    pub panoptic_json: PathBuf,
    pub panoptic_dir: PathBuf,
    pub images_dir: PathBuf,
    pub sidecar: PathBuf,
}

impl Layout {
    pub fn standard(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
            panoptic_json: root.join(PANOPTIC_JSON),
            panoptic_dir: root.join(PANOPTIC_DIR),
            images_dir: root.join(IMAGES_DIR),
            sidecar: root.join(SIDECAR_JSON),
        }
    }

    /// Our own layout, or the COCO release layout (`panoptic_<split>.json`, `panoptic_<split>/`, `<split>/`).
    pub fn detect(root: &Path) -> Result<Self> {
        let standard = Layout::standard(root);
        if standard.panoptic_json.is_file() {
            return Ok(standard);
        }
        let listing = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
        let mut candidates: Vec<PathBuf> = listing
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension().is_some_and(|x| x == "json")
                    && p.file_stem()
                        .and_then(|s| s.to_str())
                        .is_some_and(|s| s.starts_with("panoptic_"))
            })
            .collect();
        candidates.sort();
        let json = match candidates.as_slice() {
            [one] => one.clone(),
            [] => {
                return Err(Error::io(
                    root.join(PANOPTIC_JSON),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "no panoptic JSON in dataset root"),
                ))
            }
            _ => {
                return Err(Error::Format(format!(
                    "{}: several panoptic_*.json files, cannot pick one",
                    root.display()
                )))
            }
        };
        let stem = json.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let split = stem.trim_start_matches("panoptic_").to_string();
        let images_dir = if root.join(IMAGES_DIR).is_dir() {
            root.join(IMAGES_DIR)
        } else {
            root.join(&split)
        };
        Ok(Layout {
            root: root.to_path_buf(),
            panoptic_json: json,
            panoptic_dir: root.join(&stem),
            images_dir,
            sidecar: root.join(SIDECAR_JSON),
        })
    }

    pub fn amodal_dir(&self) -> PathBuf {
        self.root.join(AMODAL_DIR)
    }
}

pub fn image_stem(image_id: u64) -> String {
    format!("{image_id:012}")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SegmentInfoJson {
    id: u32,
    category_id: u32,
    iscrowd: u8,
    area: u64,
    bbox: [u32; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnnotationJson {
    image_id: u64,
    file_name: String,
    segments_info: Vec<SegmentInfoJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ImageJson {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CategoryJson {
    id: u32,
    name: String,
    isthing: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PanopticJson {
    #[serde(default)]
    images: Vec<ImageJson>,
    annotations: Vec<AnnotationJson>,
    categories: Vec<CategoryJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SidecarEntryJson {
    image_id: u64,
    occlusion_level: OcclusionLevel,
    max_occlusion_rate: f64,
    instance_rates: BTreeMap<String, f64>,
}

impl From<&Segment> for SegmentInfoJson {
    fn from(s: &Segment) -> Self {
        SegmentInfoJson {
            id: s.id,
            category_id: s.category_id,
            iscrowd: s.iscrowd as u8,
            area: s.area,
            bbox: s.bbox,
            score: s.score,
        }
    }
}

impl SegmentInfoJson {
    fn to_segment(&self) -> Result<Segment> {
        if self.iscrowd > 1 {
            return Err(Error::invariant("segments_info.iscrowd", format!("segment {}: {}", self.id, self.iscrowd)));
        }
        Ok(Segment {
            id: self.id,
            category_id: self.category_id,
            iscrowd: self.iscrowd == 1,
            area: self.area,
            bbox: self.bbox,
            score: self.score,
        })
    }
}

fn sidecar_to_json(rec: &OcclusionRecord) -> SidecarEntryJson {
    SidecarEntryJson {
        image_id: rec.image_id,
        occlusion_level: rec.occlusion_level,
        max_occlusion_rate: rec.max_occlusion_rate,
        instance_rates: rec.instance_rates.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

fn sidecar_from_json(e: SidecarEntryJson) -> Result<OcclusionRecord> {
    let mut rates = BTreeMap::new();
    for (k, v) in e.instance_rates {
        let id: u32 = k
            .parse()
            .map_err(|_| Error::invariant("instance_rates", format!("image {}: key `{k}` is not a segment id", e.image_id)))?;
        rates.insert(id, v);
    }
    let rec = OcclusionRecord {
        image_id: e.image_id,
        occlusion_level: e.occlusion_level,
        max_occlusion_rate: e.max_occlusion_rate,
        instance_rates: rates,
    };
    rec.validate()?;
    Ok(rec)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads and validates a sidecar file.
pub fn read_sidecar(path: &Path) -> Result<BTreeMap<u64, OcclusionRecord>> {
    let entries: Vec<SidecarEntryJson> = read_json(path)?;
    let mut out = BTreeMap::new();
    for e in entries {
        let rec = sidecar_from_json(e)?;
        if out.insert(rec.image_id, rec).is_some() {
            return Err(Error::Format(format!("{}: duplicate image_id in sidecar", path.display())));
        }
    }
    Ok(out)
}

pub fn write_sidecar<'a>(path: &Path, records: impl IntoIterator<Item = &'a OcclusionRecord>) -> Result<()> {
    let json: Vec<SidecarEntryJson> = records.into_iter().map(sidecar_to_json).collect();
    let text = to_canonical_string(&json).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_text(path, &text)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub image_id: u64,
    pub image_file: Option<String>,
    pub panoptic_file: String,
    pub segments: Vec<Segment>,
}

/// A dataset on disk: JSON metadata is held in memory, rasters are loaded on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub layout: Layout,
    pub taxonomy: Taxonomy,
    pub entries: Vec<Entry>,
    pub sidecar: Option<BTreeMap<u64, OcclusionRecord>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_id: u64,
    pub image: Option<RgbImage>,
    pub panoptic: PanopticMap,
    pub occlusion: Option<OcclusionRecord>,
}

/// Opens a dataset root. The sidecar is optional, but when present it must
/// cover every image.
pub fn read_dataset(root: &Path) -> Result<Dataset> {
    let layout = Layout::detect(root)?;
    read_dataset_with_sidecar(&layout, Some(&layout.sidecar.clone()))
}

/// Like [`read_dataset`] but with the sidecar taken from an explicit path (or none).
pub fn read_dataset_with_sidecar(layout: &Layout, sidecar: Option<&Path>) -> Result<Dataset> {
    let pj: PanopticJson = read_json(&layout.panoptic_json)?;
    let taxonomy = Taxonomy::new(
        pj.categories
            .iter()
            .map(|c| Category {
                id: c.id,
                name: c.name.clone(),
                isthing: c.isthing == 1,
            })
            .collect(),
    )?;
    let image_files: BTreeMap<u64, String> = pj.images.iter().map(|i| (i.id, i.file_name.clone())).collect();
    let mut seen = BTreeSet::new();
    let mut entries = Vec::with_capacity(pj.annotations.len());
    for ann in pj.annotations {
        if !seen.insert(ann.image_id) {
            return Err(Error::Format(format!("duplicate annotation for image_id {}", ann.image_id)));
        }
        let segments = ann
            .segments_info
            .iter()
            .map(SegmentInfoJson::to_segment)
            .collect::<Result<Vec<_>>>()?;
        for s in &segments {
            if taxonomy.get(s.category_id).is_none() {
                return Err(Error::UnknownCategory(s.category_id));
            }
        }
        entries.push(Entry {
            image_id: ann.image_id,
            image_file: image_files.get(&ann.image_id).cloned(),
            panoptic_file: ann.file_name,
            segments,
        });
    }

    let sidecar = match sidecar {
        Some(path) if path.is_file() => {
            let records = read_sidecar(path)?;
            let missing: Vec<u64> = entries
                .iter()
                .map(|e| e.image_id)
                .filter(|id| !records.contains_key(id))
                .collect();
            if !missing.is_empty() {
                return Err(Error::MissingSidecar(missing));
            }
            Some(records)
        }
        Some(path) if path != layout.sidecar => {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "sidecar file not found"),
            ))
        }
        _ => None,
    };

    Ok(Dataset {
        layout: layout.clone(),
        taxonomy,
        entries,
        sidecar,
    })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn image_ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.image_id).collect()
    }

    pub fn occlusion(&self, image_id: u64) -> Option<&OcclusionRecord> {
        self.sidecar.as_ref().and_then(|s| s.get(&image_id))
    }

    pub fn require_sidecar(&self) -> Result<&BTreeMap<u64, OcclusionRecord>> {
        self.sidecar.as_ref().ok_or_else(|| {
            Error::MissingSidecar(self.image_ids())
        })
    }

    pub fn level_of(&self, image_id: u64) -> Result<OcclusionLevel> {
        self.occlusion(image_id)
            .map(|r| r.occlusion_level)
            .ok_or_else(|| Error::MissingSidecar(vec![image_id]))
    }

    pub fn load_panoptic(&self, entry: &Entry) -> Result<PanopticMap> {
        let path = self.layout.panoptic_dir.join(&entry.panoptic_file);
        let img = image::open(&path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .to_rgb8();
        decode_id_map(&img, entry.segments.clone()).map_err(|e| match e {
            Error::Invariant { field, detail } => Error::Invariant {
                field,
                detail: format!("image {}: {detail}", entry.image_id),
            },
            other => other,
        })
    }

    pub fn has_images(&self) -> bool {
        self.layout.images_dir.is_dir()
    }

    pub fn load_image(&self, entry: &Entry) -> Result<RgbImage> {
        let name = entry
            .image_file
            .clone()
            .unwrap_or_else(|| format!("{}.png", image_stem(entry.image_id)));
        let path = self.layout.images_dir.join(name);
        Ok(image::open(&path)
            .map_err(|source| Error::Image { path, source })?
            .to_rgb8())
    }

    pub fn load_sample(&self, index: usize, with_image: bool) -> Result<Sample> {
        let entry = &self.entries[index];
        let panoptic = self.load_panoptic(entry)?;
        let occlusion = self.occlusion(entry.image_id).cloned();
        if let Some(rec) = &occlusion {
            for id in rec.instance_rates.keys() {
                match panoptic.segment(*id) {
                    Some(s) if self.taxonomy.is_thing(s.category_id)? => {}
                    _ => {
                        return Err(Error::invariant(
                            "instance_rates",
                            format!("image {}: segment {id} is not a thing segment", entry.image_id),
                        ))
                    }
                }
            }
        }
        let image = if with_image {
            let img = self.load_image(entry)?;
            if img.width() != panoptic.width || img.height() != panoptic.height {
                return Err(Error::DimensionMismatch(format!(
                    "image {}: RGB {}x{} vs panoptic {}x{}",
                    entry.image_id,
                    img.width(),
                    img.height(),
                    panoptic.width,
                    panoptic.height
                )));
            }
            Some(img)
        } else {
            None
        };
        Ok(Sample {
            image_id: entry.image_id,
            image,
            panoptic,
            occlusion,
        })
    }

    /// Lazily loads every sample, including RGB images when the dataset has them.
    pub fn samples(&self) -> impl Iterator<Item = Result<Sample>> + '_ {
        let with_image = self.has_images();
        (0..self.len()).map(move |i| self.load_sample(i, with_image))
    }

    /// Restriction of the dataset to the given image ids, keeping entry order.
    pub fn subset(&self, ids: &BTreeSet<u64>) -> Dataset {
        Dataset {
            layout: self.layout.clone(),
            taxonomy: self.taxonomy.clone(),
            entries: self.entries.iter().filter(|e| ids.contains(&e.image_id)).cloned().collect(),
            sidecar: self
                .sidecar
                .as_ref()
                .map(|s| s.iter().filter(|(k, _)| ids.contains(k)).map(|(k, v)| (*k, v.clone())).collect()),
        }
    }

    pub fn load_amodal(&self, image_id: u64, segment_id: u32) -> Result<Mask> {
        let path = amodal_path(&self.layout, image_id, segment_id);
        let img = image::open(&path)
            .map_err(|source| Error::Image { path, source })?
            .to_luma8();
        Ok(Mask {
            width: img.width(),
            height: img.height(),
            bits: img.pixels().map(|p| p.0[0] > 127).collect(),
        })
    }
}

fn amodal_path(layout: &Layout, image_id: u64, segment_id: u32) -> PathBuf {
    layout.amodal_dir().join(format!("{}_{segment_id}.png", image_stem(image_id)))
}

/// One sample to be written; borrowed so large datasets can be streamed.
pub struct SampleRef<'a> {
    pub image_id: u64,
    pub image: Option<&'a RgbImage>,
    pub panoptic: &'a PanopticMap,
    pub occlusion: Option<&'a OcclusionRecord>,
    /// Amodal masks keyed by segment id.
    pub amodal: Vec<(u32, &'a Mask)>,
}

/// Streams samples into a fresh dataset root; JSON files are written by `finish`.
pub struct DatasetWriter {
    layout: Layout,
    taxonomy: Taxonomy,
    images: Vec<ImageJson>,
    annotations: Vec<AnnotationJson>,
    sidecar: Vec<OcclusionRecord>,
}

impl DatasetWriter {
    pub fn create(root: &Path, taxonomy: &Taxonomy) -> Result<Self> {
        let layout = Layout::standard(root);
        fs::create_dir_all(&layout.panoptic_dir).map_err(|e| Error::io(&layout.panoptic_dir, e))?;
        Ok(DatasetWriter {
            layout,
            taxonomy: taxonomy.clone(),
            images: Vec::new(),
            annotations: Vec::new(),
            sidecar: Vec::new(),
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn add(&mut self, sample: SampleRef<'_>) -> Result<()> {
        sample.panoptic.validate()?;
        for s in &sample.panoptic.segments {
            if self.taxonomy.get(s.category_id).is_none() {
                return Err(Error::UnknownCategory(s.category_id));
            }
        }
        let stem = image_stem(sample.image_id);
        let png_name = format!("{stem}.png");
        let pan_path = self.layout.panoptic_dir.join(&png_name);
        encode_id_map(sample.panoptic)?
            .save(&pan_path)
            .map_err(|source| Error::Image { path: pan_path, source })?;
        if let Some(img) = sample.image {
            fs::create_dir_all(&self.layout.images_dir).map_err(|e| Error::io(&self.layout.images_dir, e))?;
            let path = self.layout.images_dir.join(&png_name);
            img.save(&path).map_err(|source| Error::Image { path, source })?;
            self.images.push(ImageJson {
                id: sample.image_id,
                file_name: png_name.clone(),
                width: img.width(),
                height: img.height(),
            });
        }
        if !sample.amodal.is_empty() {
            let dir = self.layout.amodal_dir();
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for (seg, mask) in &sample.amodal {
                let path = amodal_path(&self.layout, sample.image_id, *seg);
                let img = GrayImage::from_raw(mask.width, mask.height, mask.bits.iter().map(|&b| if b { 255 } else { 0 }).collect())
                    .expect("mask buffer matches its dimensions");
                img.save(&path).map_err(|source| Error::Image { path, source })?;
            }
        }
        if let Some(rec) = sample.occlusion {
            let rec = rec.rounded();
            rec.validate()?;
            self.sidecar.push(rec);
        }
        self.annotations.push(AnnotationJson {
            image_id: sample.image_id,
            file_name: png_name,
            segments_info: sample.panoptic.segments.iter().map(SegmentInfoJson::from).collect(),
        });
        Ok(())
    }

    pub fn finish(self) -> Result<Layout> {
        if !self.sidecar.is_empty() && self.sidecar.len() != self.annotations.len() {
            let have: BTreeSet<u64> = self.sidecar.iter().map(|r| r.image_id).collect();
            return Err(Error::MissingSidecar(
                self.annotations.iter().map(|a| a.image_id).filter(|id| !have.contains(id)).collect(),
            ));
        }
        let pj = PanopticJson {
            images: self.images,
            annotations: self.annotations,
            categories: self
                .taxonomy
                .categories
                .iter()
                .map(|c| CategoryJson {
                    id: c.id,
                    name: c.name.clone(),
                    isthing: c.isthing as u8,
                })
                .collect(),
        };
        let text = to_canonical_string(&pj).map_err(|source| Error::Json {
            path: self.layout.panoptic_json.clone(),
            source,
        })?;
        write_text(&self.layout.panoptic_json, &text)?;
        if !self.sidecar.is_empty() {
            write_sidecar(&self.layout.sidecar, &self.sidecar)?;
        }
        Ok(self.layout)
    }
}

/// Writes an in-memory dataset; inverse of [`read_dataset`] for the JSON and PNG parts.
pub fn write_dataset(root: &Path, taxonomy: &Taxonomy, samples: &[Sample]) -> Result<Layout> {
    let mut writer = DatasetWriter::create(root, taxonomy)?;
    for s in samples {
        writer.add(SampleRef {
            image_id: s.image_id,
            image: s.image.as_ref(),
            panoptic: &s.panoptic,
            occlusion: s.occlusion.as_ref(),
            amodal: Vec::new(),
        })?;
    }
    writer.finish()
}
