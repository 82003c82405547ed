use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-image occlusion level: the bucket of the largest instance occlusion rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionLevel {
    Low,
    Mid,
    High,
}

impl OcclusionLevel {
    pub const ALL: [OcclusionLevel; 3] = [OcclusionLevel::Low, OcclusionLevel::Mid, OcclusionLevel::High];

    pub fn as_str(self) -> &'static str {
        match self {
            OcclusionLevel::Low => "low",
            OcclusionLevel::Mid => "mid",
            OcclusionLevel::High => "high",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for OcclusionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OcclusionLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(OcclusionLevel::Low),
            "mid" => Ok(OcclusionLevel::Mid),
            "high" => Ok(OcclusionLevel::High),
            other => Err(Error::Format(format!("unknown occlusion level `{other}`"))),
        }
    }
}

/// Maps an occlusion rate to its level: exactly 0 is low, (0, 0.5] is mid,
/// anything above 0.5 is high.
pub fn bucket(rate: f64) -> Result<OcclusionLevel> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Domain(format!("occlusion rate {rate} outside [0, 1]")));
    }
    Ok(if rate == 0.0 {
        OcclusionLevel::Low
    } else if rate <= 0.5 {
        OcclusionLevel::Mid
    } else {
        OcclusionLevel::High
    })
}

/// Image level from the rates of all retained instances: `(bucket(max), max)`.
pub fn image_occlusion_level(rates: &[f64]) -> Result<(OcclusionLevel, f64)> {
    if rates.is_empty() {
        return Err(Error::Resample("no annotated instances to derive a level from".into()));
    }
    let max = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((bucket(max)?, max))
}
