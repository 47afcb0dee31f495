//! Pixel-analysis oracle that recovers every task label from a rendered
//! sample. Used to check the rendering contract, never by the trainers.

use std::f64::consts::{PI, TAU};

use super::image::RgbImage;
use super::palette::{Rgb, BLACK, VIBGYOR, WHITE};
use super::render::{GenConfig, VariationLabel, SIZE_BANDS, SIZE_JITTER};
use crate::error::{Error, Result};

/// (vertex count, phase) per shape class, 0 vertices meaning circle.
const SHAPE_TABLE: [(usize, f64); 5] = [
    (0, 0.0),
    (3, -PI / 2.0),
    (4, -PI / 2.0),
    (5, -PI / 2.0),
    (6, PI / 12.0),
];

fn area_coefficient(vertices: usize) -> f64 {
    if vertices == 0 {
        PI
    } else {
        0.5 * vertices as f64 * (TAU / vertices as f64).sin()
    }
}

/// Even-odd ray casting; independent of the renderer's half-plane test.
fn point_in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Pixel window `[x0, x1) x [y0, y1)` outside of which neither the mask nor
/// any candidate template can have set pixels.
#[derive(Clone, Copy)]
struct Window {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

fn template_mismatch(mask: &[bool], side: usize, win: Window, shape: usize, cx: f64, cy: f64, r: f64) -> usize {
    let (n, phase) = SHAPE_TABLE[shape];
    let poly: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let a = phase + TAU * i as f64 / n as f64;
            (cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    let mut diff = 0;
    for y in win.y0..win.y1 {
        for x in win.x0..win.x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let hit = if n == 0 {
                (px - cx).hypot(py - cy) <= r
            } else {
                point_in_polygon(&poly, px, py)
            };
            if hit != mask[y * side + x] {
                diff += 1;
            }
        }
    }
    diff
}

/// Best template fit of `shape` around the area-matched radius, searching
/// sub-pixel center shifts and radius scalings.
fn refined_mismatch(mask: &[bool], side: usize, win: Window, shape: usize, cx: f64, cy: f64, r: f64) -> (usize, f64) {
    let mut best = (usize::MAX, r);
    for sy in -4..=4 {
        for sx in -4..=4 {
            for sr in -5..=5 {
                let rr = clamp_to_bands(r * (1.0 + 0.012 * sr as f64), side);
                let miss = template_mismatch(mask, side, win, shape, cx + 0.125 * sx as f64, cy + 0.125 * sy as f64, rr);
                if miss < best.0 {
                    best = (miss, rr);
                }
            }
        }
    }
    best
}

/// Snaps a circumradius to the closest radius any size band can produce.
fn clamp_to_bands(r: f64, side: usize) -> f64 {
    let side = side as f64;
    let mut best = r;
    let mut best_gap = f64::INFINITY;
    for center in SIZE_BANDS {
        let lo = (center - SIZE_JITTER) * side / 2.0;
        let hi = (center + SIZE_JITTER) * side / 2.0;
        let snapped = r.clamp(lo, hi);
        if (snapped - r).abs() < best_gap {
            best_gap = (snapped - r).abs();
            best = snapped;
        }
    }
    best
}

fn exact_palette_index(c: Rgb) -> Option<usize> {
    VIBGYOR.iter().position(|&p| p == c)
}

pub fn decode_label_oracle(img: &RgbImage, cfg: &GenConfig) -> Result<VariationLabel> {
    let side = cfg.image_side;
    if img.width != side || img.height != side {
        return Err(Error::UndecodableImage(format!(
            "expected {side}x{side}, got {}x{}",
            img.width, img.height
        )));
    }
    let corners = [
        img.get(0, 0),
        img.get(side - 1, 0),
        img.get(0, side - 1),
        img.get(side - 1, side - 1),
    ];
    if corners.iter().any(|&c| c != corners[0]) {
        return Err(Error::UndecodableImage("corners disagree".into()));
    }
    let bg = corners[0];
    let background = match bg {
        WHITE => 0,
        BLACK => 1,
        c if exact_palette_index(c).is_some() => 2,
        c => return Err(Error::UndecodableImage(format!("unknown background {c:?}"))),
    };

    let mask: Vec<bool> = (0..side * side)
        .map(|i| img.get(i % side, i / side) != bg)
        .collect();
    let area = mask.iter().filter(|&&m| m).count();
    if area == 0 {
        return Err(Error::UndecodableImage("no foreground component".into()));
    }
    let components = count_components(&mask, side);
    if components != 1 {
        return Err(Error::UndecodableImage(format!(
            "{components} foreground components"
        )));
    }

    let mut fg = None;
    let (mut sx, mut sy) = (0.0, 0.0);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let (x, y) = (i % side, i / side);
        let c = img.get(x, y);
        if *fg.get_or_insert(c) != c {
            return Err(Error::UndecodableImage("foreground is not a flat color".into()));
        }
        sx += x as f64 + 0.5;
        sy += y as f64 + 0.5;
    }
    let fg = fg.unwrap();
    let color = exact_palette_index(fg)
        .ok_or_else(|| Error::UndecodableImage(format!("foreground {fg:?} not in palette")))?;
    let (cx, cy) = (sx / area as f64, sy / area as f64);
    let half = side as f64 / 2.0;
    let location = match (cx >= half, cy >= half) {
        (true, false) => 0,
        (false, false) => 1,
        (false, true) => 2,
        (true, true) => 3,
    };

    let radii: Vec<f64> = (0..SHAPE_TABLE.len())
        .map(|s| clamp_to_bands((area as f64 / area_coefficient(SHAPE_TABLE[s].0)).sqrt(), side))
        .collect();
    let reach = radii.iter().cloned().fold(0.0, f64::max) * 1.1 + 2.0;
    let win = Window {
        x0: (cx - reach).floor().max(0.0) as usize,
        x1: ((cx + reach).ceil() as usize).min(side),
        y0: (cy - reach).floor().max(0.0) as usize,
        y1: ((cy + reach).ceil() as usize).min(side),
    };
    let mut fits: Vec<(usize, usize, f64)> = (0..SHAPE_TABLE.len())
        .map(|s| (template_mismatch(&mask, side, win, s, cx, cy, radii[s]), s, radii[s]))
        .collect();
    fits.sort_by_key(|&(miss, s, _)| (miss, s));
    // close call: refit the two leading candidates before deciding
    if fits[1].0 <= 2 * fits[0].0 + 2 {
        for fit in fits.iter_mut().take(2) {
            let (miss, r) = refined_mismatch(&mask, side, win, fit.1, cx, cy, fit.2);
            *fit = (miss, fit.1, r);
        }
        fits[..2].sort_by_key(|&(miss, s, _)| (miss, s));
    }
    let (_, shape, radius) = fits[0];
    let diameter = 2.0 * radius / side as f64;
    let size = if diameter < 0.24 {
        0
    } else if diameter < 0.36 {
        1
    } else {
        2
    };
    Ok(VariationLabel {
        shape,
        color,
        size,
        location,
        background,
    })
}

fn count_components(mask: &[bool], side: usize) -> usize {
    let mut seen = vec![false; mask.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % side) as isize, (i / side) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= side as isize || ny >= side as isize {
                        continue;
                    }
                    let j = ny as usize * side + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
    }
    count
}
