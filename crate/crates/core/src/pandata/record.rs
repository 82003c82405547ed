use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scenegen::{bucket, OcclusionLevel};

/// Per-image occlusion annotation stored in the sidecar file.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionRecord {
    pub image_id: u64,
    pub occlusion_level: OcclusionLevel,
    pub max_occlusion_rate: f64,
    /// Segment id to occlusion rate, for every annotated thing instance.
    pub instance_rates: BTreeMap<u32, f64>,
}

impl OcclusionRecord {
    pub fn from_rates(image_id: u64, instance_rates: BTreeMap<u32, f64>) -> Result<Self> {
        let rates: Vec<f64> = instance_rates.values().copied().collect();
        let (occlusion_level, max_occlusion_rate) = crate::scenegen::image_occlusion_level(&rates)?;
        Ok(OcclusionRecord {
            image_id,
            occlusion_level,
            max_occlusion_rate,
            instance_rates,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (id, &rate) in &self.instance_rates {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::invariant(
                    "instance_rates",
                    format!("image {}: segment {id} has rate {rate}", self.image_id),
                ));
            }
        }
        let level = bucket(self.max_occlusion_rate).map_err(|_| {
            Error::invariant(
                "max_occlusion_rate",
                format!("image {}: {} outside [0, 1]", self.image_id, self.max_occlusion_rate),
            )
        })?;
        if level != self.occlusion_level {
            return Err(Error::invariant(
                "occlusion_level",
                format!(
                    "image {}: level `{}` contradicts max rate {} (bucket `{}`)",
                    self.image_id, self.occlusion_level, self.max_occlusion_rate, level
                ),
            ));
        }
        if !self.instance_rates.is_empty() {
            let max = self.instance_rates.values().copied().fold(f64::NEG_INFINITY, f64::max);
            if max != self.max_occlusion_rate {
                return Err(Error::invariant(
                    "max_occlusion_rate",
                    format!(
                        "image {}: recorded {} but instance rates peak at {max}",
                        self.image_id, self.max_occlusion_rate
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Rates rounded to the sidecar's fixed 6-decimal precision.
    pub fn rounded(&self) -> OcclusionRecord {
        OcclusionRecord {
            image_id: self.image_id,
            occlusion_level: self.occlusion_level,
            max_occlusion_rate: round6(self.max_occlusion_rate),
            instance_rates: self.instance_rates.iter().map(|(&k, &v)| (k, round6(v))).collect(),
        }
    }
}

pub fn round6(x: f64) -> f64 {
    format!("{x:.6}").parse().expect("formatted float parses")
}
