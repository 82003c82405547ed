use std::collections::BTreeSet;

use serde::Serialize;

use super::io::Dataset;
use crate::error::Result;
use crate::scenegen::OcclusionLevel;

/// The evaluation set partitioned by image occlusion level.
#[derive(Debug, Clone)]
pub struct LevelSplit {
    pub low: Dataset,
    pub mid: Dataset,
    pub high: Dataset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubsetSummary {
    pub level: OcclusionLevel,
    pub count: usize,
    pub empty: bool,
}

impl LevelSplit {
    pub fn get(&self, level: OcclusionLevel) -> &Dataset {
        match level {
            OcclusionLevel::Low => &self.low,
            OcclusionLevel::Mid => &self.mid,
            OcclusionLevel::High => &self.high,
        }
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.low.len(), self.mid.len(), self.high.len()]
    }

    /// One summary per level; empty subsets are flagged rather than omitted.
    pub fn manifest(&self) -> Vec<SubsetSummary> {
        OcclusionLevel::ALL
            .iter()
            .map(|&level| SubsetSummary {
                level,
                count: self.get(level).len(),
                empty: self.get(level).is_empty(),
            })
            .collect()
    }
}

pub fn split_by_level(dataset: &Dataset) -> Result<LevelSplit> {
    let sidecar = dataset.require_sidecar()?;
    let mut ids: [BTreeSet<u64>; 3] = Default::default();
    for entry in &dataset.entries {
        let rec = sidecar
            .get(&entry.image_id)
            .ok_or_else(|| crate::error::Error::MissingSidecar(vec![entry.image_id]))?;
        ids[rec.occlusion_level.index()].insert(entry.image_id);
    }
    Ok(LevelSplit {
        low: dataset.subset(&ids[0]),
        mid: dataset.subset(&ids[1]),
        high: dataset.subset(&ids[2]),
    })
}
