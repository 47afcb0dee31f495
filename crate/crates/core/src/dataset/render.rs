//! Rasterization of one PreserveTask sample.
//!
//! Geometry: a single hard-edged filled shape whose circumscribed circle has
//! diameter `d`; `d/side` lies in 0.16..0.20, 0.28..0.32 or 0.40..0.44 for
//! small, medium and large. The shape is centered in its quadrant cell, then
//! shifted by a uniform offset bounded by `jitter * cell` and by the room
//! left inside the cell, so the shape never leaves its quadrant.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::RgbImage;
use super::palette::{Rgb, BLACK, VIBGYOR, WHITE};
use crate::error::{Error, Result};

/// Diameter band centers as a fraction of the image side.
pub const SIZE_BANDS: [f64; 3] = [0.18, 0.30, 0.42];
pub const SIZE_JITTER: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VariationLabel {
    pub shape: usize,
    pub color: usize,
    pub size: usize,
    pub location: usize,
    pub background: usize,
}

pub const TASK_CLASS_COUNTS: [usize; 5] = [5, 7, 3, 4, 3];

impl VariationLabel {
    pub const COUNT: usize = 5 * 7 * 3 * 4 * 3;

    /// Mixed-radix decoding; `shape` is the slowest digit.
    pub fn from_index(mut index: usize) -> Self {
        assert!(index < Self::COUNT);
        let mut digits = [0usize; 5];
        for t in (0..5).rev() {
            digits[t] = index % TASK_CLASS_COUNTS[t];
            index /= TASK_CLASS_COUNTS[t];
        }
        Self::from_classes(&digits)
    }

    pub fn from_classes(c: &[usize]) -> Self {
        VariationLabel {
            shape: c[0],
            color: c[1],
            size: c[2],
            location: c[3],
            background: c[4],
        }
    }

    pub fn index(&self) -> usize {
        self.classes()
            .iter()
            .zip(TASK_CLASS_COUNTS)
            .fold(0, |acc, (&c, n)| acc * n + c)
    }

    pub fn classes(&self) -> [usize; 5] {
        [self.shape, self.color, self.size, self.location, self.background]
    }

    pub fn is_valid(&self) -> bool {
        self.classes()
            .iter()
            .zip(TASK_CLASS_COUNTS)
            .all(|(&c, n)| c < n)
    }

    pub fn all() -> impl Iterator<Item = VariationLabel> {
        (0..Self::COUNT).map(Self::from_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub image_side: usize,
    pub train_per_variation: usize,
    pub test_per_variation: usize,
    pub seed: u64,
    pub jitter: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            image_side: 256,
            train_per_variation: 50,
            test_per_variation: 10,
            seed: 0,
            jitter: 0.15,
        }
    }
}

impl GenConfig {
    /// 64 px images, few instances per variation.
    pub fn desk_scale(seed: u64) -> Self {
        GenConfig {
            image_side: 64,
            train_per_variation: 2,
            test_per_variation: 1,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_side < 32 {
            return Err(Error::InvalidConfig(format!(
                "image_side {} < 32",
                self.image_side
            )));
        }
        if self.train_per_variation == 0 || self.test_per_variation == 0 {
            return Err(Error::InvalidConfig("per-variation counts must be >= 1".into()));
        }
        if !(0.0..=0.25).contains(&self.jitter) {
            return Err(Error::InvalidConfig(format!(
                "jitter {} outside [0, 0.25]",
                self.jitter
            )));
        }
        Ok(())
    }
}

/// Continuous placement of a shape, in pixel units (y grows downward).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
}

/// Vertex count and angular offset (radians, 0 = pointing right, y down)
/// of each polygonal shape class; `None` for the circle.
pub fn polygon_params(shape: usize) -> Option<(usize, f64)> {
    use std::f64::consts::FRAC_PI_2;
    match shape {
        0 => None,
        1 => Some((3, -FRAC_PI_2)), // triangle, apex up
        2 => Some((4, -FRAC_PI_2)), // diamond
        3 => Some((5, -FRAC_PI_2)), // pentagon, apex up
        4 => Some((6, std::f64::consts::PI / 12.0)), // hexagon, tilted 15° off flat-top
        _ => panic!("shape class {shape} out of range"),
    }
}

pub fn polygon_vertices(shape: usize, p: Placement) -> Vec<(f64, f64)> {
    let Some((n, phase)) = polygon_params(shape) else {
        return Vec::new();
    };
    (0..n)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / n as f64;
            (p.cx + p.radius * a.cos(), p.cy + p.radius * a.sin())
        })
        .collect()
}

fn inside_convex(verts: &[(f64, f64)], x: f64, y: f64) -> bool {
    // vertices wind clockwise on screen (counter-clockwise in math axes)
    (0..verts.len()).all(|i| {
        let (ax, ay) = verts[i];
        let (bx, by) = verts[(i + 1) % verts.len()];
        (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0.0
    })
}

/// Pixel-center coverage mask of the shape.
pub fn rasterize(shape: usize, p: Placement, side: usize) -> Vec<bool> {
    let verts = polygon_vertices(shape, p);
    let mut mask = vec![false; side * side];
    let x0 = (p.cx - p.radius).floor().max(0.0) as usize;
    let x1 = ((p.cx + p.radius).ceil() as usize).min(side);
    let y0 = (p.cy - p.radius).floor().max(0.0) as usize;
    let y1 = ((p.cy + p.radius).ceil() as usize).min(side);
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let hit = if verts.is_empty() {
                (px - p.cx).powi(2) + (py - p.cy).powi(2) <= p.radius * p.radius
            } else {
                inside_convex(&verts, px, py)
            };
            mask[y * side + x] = hit;
        }
    }
    mask
}

/// Quadrant cell center. Quadrants follow the Cartesian convention:
/// 1 upper-right, 2 upper-left, 3 lower-left, 4 lower-right.
pub fn quadrant_center(location: usize, side: usize) -> (f64, f64) {
    let c = side as f64 / 2.0;
    match location {
        0 => (1.5 * c, 0.5 * c),
        1 => (0.5 * c, 0.5 * c),
        2 => (0.5 * c, 1.5 * c),
        3 => (1.5 * c, 1.5 * c),
        _ => panic!("location class {location} out of range"),
    }
}

/// Draws the placement and background color for `label` from `rng`.
pub fn sample_layout(label: &VariationLabel, cfg: &GenConfig, rng: &mut ChaCha8Rng) -> (Placement, Rgb) {
    let side = cfg.image_side as f64;
    let cell = side / 2.0;
    let d = (SIZE_BANDS[label.size] + rng.gen_range(-SIZE_JITTER..=SIZE_JITTER)) * side;
    let room = ((cell - d) / 2.0).max(0.0);
    let max_off = (cfg.jitter * cell).min(room);
    let (qx, qy) = quadrant_center(label.location, cfg.image_side);
    let (dx, dy) = if max_off > 0.0 {
        (
            rng.gen_range(-max_off..=max_off),
            rng.gen_range(-max_off..=max_off),
        )
    } else {
        (0.0, 0.0)
    };
    let background = match label.background {
        0 => WHITE,
        1 => BLACK,
        _ => {
            // uniform over the six palette colors other than the foreground
            let mut pick = rng.gen_range(0..VIBGYOR.len() - 1);
            if pick >= label.color {
                pick += 1;
            }
            VIBGYOR[pick]
        }
    };
    (
        Placement {
            cx: qx + dx,
            cy: qy + dy,
            radius: d / 2.0,
        },
        background,
    )
}

pub fn render_sample(label: &VariationLabel, cfg: &GenConfig, rng: &mut ChaCha8Rng) -> RgbImage {
    assert!(label.is_valid(), "invalid label {label:?}");
    let (placement, background) = sample_layout(label, cfg, rng);
    let side = cfg.image_side;
    let mut img = RgbImage::filled(side, side, background);
    let fg = VIBGYOR[label.color];
    for (i, &hit) in rasterize(label.shape, placement, side).iter().enumerate() {
        if hit {
            img.put(i % side, i / side, fg);
        }
    }
    img
}
