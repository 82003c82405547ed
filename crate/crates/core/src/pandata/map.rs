use std::collections::{BTreeMap, HashMap};

use image::RgbImage;

use crate::error::{Error, Result};

/// Largest segment id representable in a 24-bit panoptic PNG.
pub const MAX_SEGMENT_ID: u32 = (1 << 24) - 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: u32,
    pub category_id: u32,
    pub iscrowd: bool,
    pub area: u64,
    /// Tight box `[x, y, w, h]`.
    pub bbox: [u32; 4],
    pub score: Option<f64>,
}

/// Per-pixel segment ids (0 = void) plus per-segment metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticMap {
    pub width: u32,
    pub height: u32,
    pub ids: Vec<u32>,
    pub segments: Vec<Segment>,
}

/// Metadata for a segment whose area and bbox are still to be measured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentLabel {
    pub id: u32,
    pub category_id: u32,
    pub iscrowd: bool,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Extent {
    area: u64,
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

fn measure(width: u32, ids: &[u32]) -> HashMap<u32, Extent> {
    let mut out: HashMap<u32, Extent> = HashMap::new();
    for (i, &id) in ids.iter().enumerate() {
        if id == 0 {
            continue;
        }
        let x = i as u32 % width;
        let y = i as u32 / width;
        out.entry(id)
            .and_modify(|e| {
                e.area += 1;
                e.x0 = e.x0.min(x);
                e.y0 = e.y0.min(y);
                e.x1 = e.x1.max(x);
                e.y1 = e.y1.max(y);
            })
            .or_insert(Extent {
                area: 1,
                x0: x,
                y0: y,
                x1: x,
                y1: y,
            });
    }
    out
}

impl PanopticMap {
    /// Builds a map from a raster, measuring area and bbox for each label.
    /// Labels must cover exactly the nonzero ids of the raster.
    pub fn from_raster(width: u32, height: u32, ids: Vec<u32>, labels: &[SegmentLabel]) -> Result<Self> {
        if ids.len() != (width as usize) * (height as usize) {
            return Err(Error::DimensionMismatch(format!(
                "raster has {} pixels, expected {}x{}",
                ids.len(),
                width,
                height
            )));
        }
        let extents = measure(width, &ids);
        let mut segments = Vec::with_capacity(labels.len());
        for label in labels {
            let e = extents.get(&label.id).ok_or_else(|| {
                Error::invariant("segments", format!("segment {} has no pixels", label.id))
            })?;
            segments.push(Segment {
                id: label.id,
                category_id: label.category_id,
                iscrowd: label.iscrowd,
                area: e.area,
                bbox: [e.x0, e.y0, e.x1 - e.x0 + 1, e.y1 - e.y0 + 1],
                score: label.score,
            });
        }
        let map = PanopticMap {
            width,
            height,
            ids,
            segments,
        };
        map.validate()?;
        Ok(map)
    }

    /// Checks the raster/segment-list bijection and the recorded area and bbox.
    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != (self.width as usize) * (self.height as usize) {
            return Err(Error::invariant("id_raster", "pixel count does not match dimensions"));
        }
        let extents = measure(self.width, &self.ids);
        let mut seen = BTreeMap::new();
        for seg in &self.segments {
            if seg.id == 0 || seg.id > MAX_SEGMENT_ID {
                return Err(Error::invariant("segments.id", format!("invalid segment id {}", seg.id)));
            }
            if seen.insert(seg.id, ()).is_some() {
                return Err(Error::invariant("segments.id", format!("duplicate segment id {}", seg.id)));
            }
            let e = extents.get(&seg.id).ok_or_else(|| {
                Error::invariant("segments", format!("segment {} does not occur in the raster", seg.id))
            })?;
            if e.area != seg.area {
                return Err(Error::invariant(
                    "segments.area",
                    format!("segment {}: recorded {} but raster has {}", seg.id, seg.area, e.area),
                ));
            }
            let bbox = [e.x0, e.y0, e.x1 - e.x0 + 1, e.y1 - e.y0 + 1];
            if bbox != seg.bbox {
                return Err(Error::invariant(
                    "segments.bbox",
                    format!("segment {}: recorded {:?} but raster gives {:?}", seg.id, seg.bbox, bbox),
                ));
            }
            if let Some(s) = seg.score {
                if !(0.0..=1.0).contains(&s) {
                    return Err(Error::invariant("segments.score", format!("segment {}: score {s}", seg.id)));
                }
            }
        }
        if let Some(id) = extents.keys().find(|id| !seen.contains_key(id)) {
            return Err(Error::invariant(
                "id_raster",
                format!("raster id {id} has no segment entry"),
            ));
        }
        Ok(())
    }

    pub fn segment(&self, id: u32) -> Option<&Segment> {
        self.segments.iter().find(|s| s.id == id)
    }

    /// Per-pixel category ids, 0 where void.
    pub fn category_raster(&self) -> Vec<u32> {
        let lookup: HashMap<u32, u32> = self.segments.iter().map(|s| (s.id, s.category_id)).collect();
        self.ids
            .iter()
            .map(|id| if *id == 0 { 0 } else { lookup.get(id).copied().unwrap_or(0) })
            .collect()
    }

    /// Segment ids renumbered 1.. in raster-scan order of first appearance.
    pub fn canonicalize(&self) -> PanopticMap {
        let mut remap: HashMap<u32, u32> = HashMap::new();
        let mut next = 1;
        let ids: Vec<u32> = self
            .ids
            .iter()
            .map(|&id| {
                if id == 0 {
                    0
                } else {
                    *remap.entry(id).or_insert_with(|| {
                        next += 1;
                        next - 1
                    })
                }
            })
            .collect();
        let mut segments: Vec<Segment> = self
            .segments
            .iter()
            .map(|s| Segment {
                id: remap[&s.id],
                ..s.clone()
            })
            .collect();
        segments.sort_by_key(|s| s.id);
        PanopticMap {
            width: self.width,
            height: self.height,
            ids,
            segments,
        }
    }
}

/// COCO panoptic PNG convention: `id = R + 256 G + 256^2 B`.
pub fn id_to_rgb(id: u32) -> [u8; 3] {
    [(id & 0xff) as u8, ((id >> 8) & 0xff) as u8, ((id >> 16) & 0xff) as u8]
}

pub fn rgb_to_id(rgb: [u8; 3]) -> u32 {
    rgb[0] as u32 + 256 * rgb[1] as u32 + 256 * 256 * rgb[2] as u32
}

pub fn encode_id_map(map: &PanopticMap) -> Result<RgbImage> {
    if let Some(&id) = map.ids.iter().find(|&&id| id > MAX_SEGMENT_ID) {
        return Err(Error::Format(format!("segment id {id} does not fit in 24 bits")));
    }
    let mut img = RgbImage::new(map.width, map.height);
    for (px, &id) in img.pixels_mut().zip(&map.ids) {
        px.0 = id_to_rgb(id);
    }
    Ok(img)
}

/// Inverse of [`encode_id_map`]; the segment list comes from the JSON side.
pub fn decode_id_map(img: &RgbImage, segments: Vec<Segment>) -> Result<PanopticMap> {
    let ids: Vec<u32> = img.pixels().map(|p| rgb_to_id(p.0)).collect();
    let known: std::collections::HashSet<u32> = segments.iter().map(|s| s.id).collect();
    if let Some(id) = ids.iter().find(|&&id| id != 0 && !known.contains(&id)) {
        return Err(Error::Format(format!("PNG contains id {id} absent from segments_info")));
    }
    let map = PanopticMap {
        width: img.width(),
        height: img.height(),
        ids,
        segments,
    };
    map.validate()?;
    Ok(map)
}
