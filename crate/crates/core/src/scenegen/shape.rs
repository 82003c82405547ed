use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn empty(width: u32, height: u32) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; (width * height) as usize],
        }
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        self.bits[(y * self.width + x) as usize] = value;
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// Fraction of the full (amodal) extent hidden in the visible mask: `1 - |visible| / |full|`.
pub fn occlusion_rate(full: &Mask, visible: &Mask) -> Result<f64> {
    if full.width != visible.width || full.height != visible.height {
        return Err(Error::DimensionMismatch(format!(
            "full mask {}x{} vs visible mask {}x{}",
            full.width, full.height, visible.width, visible.height
        )));
    }
    let full_area = full.area();
    if full_area == 0 {
        return Err(Error::Domain("occlusion rate of an empty full mask".into()));
    }
    if !visible.is_subset_of(full) {
        return Err(Error::Domain("visible mask is not contained in the full mask".into()));
    }
    Ok(1.0 - visible.area() as f64 / full_area as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::Triangle];
}

/// One layer of a scene. Smaller `depth_rank` is nearer the camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub category_id: u32,
    /// (x, y) in pixels.
    pub center: (f64, f64),
    /// (width, height) in pixels, before rotation.
    pub size: (f64, f64),
    /// Radians, counter-clockwise in image coordinates.
    pub rotation: f64,
    pub depth_rank: u32,
    pub fill_seed: u64,
}

impl ShapeSpec {
    fn contains(&self, px: f64, py: f64) -> bool {
        let (cx, cy) = self.center;
        let (dx, dy) = (px - cx, py - cy);
        let (sin, cos) = self.rotation.sin_cos();
        let lx = dx * cos + dy * sin;
        let ly = -dx * sin + dy * cos;
        let (hw, hh) = (self.size.0 / 2.0, self.size.1 / 2.0);
        match self.kind {
            ShapeKind::Rectangle => lx.abs() <= hw && ly.abs() <= hh,
            ShapeKind::Ellipse => (lx / hw).powi(2) + (ly / hh).powi(2) <= 1.0,
            ShapeKind::Triangle => {
                // apex at (0, -hh), base from (-hw, hh) to (hw, hh)
                if ly > hh || ly < -hh {
                    return false;
                }
                let half_width_at = hw * (ly + hh) / (2.0 * hh);
                lx.abs() <= half_width_at
            }
        }
    }

    /// The shape drawn alone on the canvas, sampled at pixel centers.
    pub fn rasterize(&self, width: u32, height: u32) -> Mask {
        let mut mask = Mask::empty(width, height);
        let radius = (self.size.0.hypot(self.size.1) / 2.0).ceil() + 1.0;
        let (cx, cy) = self.center;
        let x0 = (cx - radius).floor().max(0.0) as u32;
        let y0 = (cy - radius).floor().max(0.0) as u32;
        let x1 = ((cx + radius).ceil().max(0.0) as u32).min(width);
        let y1 = ((cy + radius).ceil().max(0.0) as u32).min(height);
        for y in y0..y1 {
            for x in x0..x1 {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    mask.set(x, y, true);
                }
            }
        }
        mask
    }
}
