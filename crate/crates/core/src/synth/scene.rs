//! Procedural scenes: textured object templates on textured backgrounds,
//! with occluder patches composited to a requested occlusion band.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::image::GrayImage;
use crate::instances::rng;
use crate::synth::backbone::STRIDE;

/// Number of object classes in the template palette.
pub const NUM_CLASSES: usize = 4;
/// Pose variants per class: upright and rotated by 90 degrees.
pub const NUM_POSES: usize = 2;
/// Template extent in pixels at pose 0 (rows, columns).
pub const TEMPLATE_HEIGHT: usize = 40;
pub const TEMPLATE_WIDTH: usize = 28;

const CLASS_NAMES: [&str; NUM_CLASSES] = ["stripes", "checker", "diagonal", "dots"];

pub fn class_name(class: usize) -> &'static str {
    CLASS_NAMES[class]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    L0,
    L1,
    L2,
    L3,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::L0, Level::L1, Level::L2, Level::L3];

    /// Inclusive band of occluded object fraction.
    pub fn band(self) -> (f64, f64) {
        match self {
            Level::L0 => (0.0, 0.0),
            Level::L1 => (0.2, 0.4),
            Level::L2 => (0.4, 0.6),
            Level::L3 => (0.6, 0.8),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Level::L0 => "L0",
            Level::L1 => "L1",
            Level::L2 => "L2",
            Level::L3 => "L3",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Level::ALL.into_iter().find(|l| l.tag() == tag)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OccluderType {
    None,
    White,
    Noise,
    Texture,
    Object,
}

impl OccluderType {
    pub const OCCLUDING: [OccluderType; 4] =
        [OccluderType::White, OccluderType::Noise, OccluderType::Texture, OccluderType::Object];

    pub fn tag(self) -> &'static str {
        match self {
            OccluderType::None => "none",
            OccluderType::White => "white",
            OccluderType::Noise => "noise",
            OccluderType::Texture => "texture",
            OccluderType::Object => "object",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        [OccluderType::None].into_iter().chain(OccluderType::OCCLUDING).find(|t| t.tag() == tag)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub image: GrayImage,
    pub label: usize,
    pub pose: usize,
    /// Tight pixel box of the object mask.
    pub bbox: BBox,
    pub object_mask: Vec<bool>,
    pub occluder_mask: Vec<bool>,
    pub level: Level,
    pub occluder: OccluderType,
}

impl SyntheticScene {
    pub fn object_area(&self) -> usize {
        self.object_mask.iter().filter(|&&m| m).count()
    }

    /// Fraction of object pixels covered by occluders.
    pub fn occluded_fraction(&self) -> f64 {
        let area = self.object_area();
        if area == 0 {
            return 0.0;
        }
        let hit = self.object_mask.iter().zip(&self.occluder_mask).filter(|(&o, &c)| o && c).count();
        hit as f64 / area as f64
    }

    /// Occluded fraction of object cells at feature resolution.
    pub fn grid_occluded_fraction(&self) -> f64 {
        let (obj, occ) = (self.object_grid(), self.occluder_grid());
        let cells = obj.iter().filter(|&&o| o).count();
        if cells == 0 {
            return 0.0;
        }
        obj.iter().zip(&occ).filter(|(&o, &c)| o && c).count() as f64 / cells as f64
    }

    pub fn grid_size(&self) -> (usize, usize) {
        (self.image.height / STRIDE, self.image.width / STRIDE)
    }

    pub fn object_grid(&self) -> Vec<bool> {
        downsample_mask(&self.object_mask, self.image.width, self.image.height)
    }

    pub fn occluder_grid(&self) -> Vec<bool> {
        downsample_mask(&self.occluder_mask, self.image.width, self.image.height)
    }

    /// Box in feature cells.
    pub fn grid_bbox(&self) -> BBox {
        self.bbox.scale(1.0 / STRIDE as f64)
    }
}

/// A cell is set when more than half of its stride x stride pixels are.
pub fn downsample_mask(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let (gh, gw) = (height / STRIDE, width / STRIDE);
    let mut out = vec![false; gh * gw];
    for r in 0..gh {
        for c in 0..gw {
            let mut n = 0;
            for y in r * STRIDE..(r + 1) * STRIDE {
                for x in c * STRIDE..(c + 1) * STRIDE {
                    n += usize::from(mask[y * width + x]);
                }
            }
            out[r * gw + c] = 2 * n > STRIDE * STRIDE;
        }
    }
    out
}

/// Extent in pixels (rows, columns) of a template in the given pose.
pub fn template_size(pose: usize) -> (usize, usize) {
    if pose.is_multiple_of(2) {
        (TEMPLATE_HEIGHT, TEMPLATE_WIDTH)
    } else {
        (TEMPLATE_WIDTH, TEMPLATE_HEIGHT)
    }
}

/// Template-frame coordinates of pixel `(r, c)` of a posed template.
fn to_template(pose: usize, r: usize, c: usize) -> (usize, usize) {
    if pose.is_multiple_of(2) {
        (r, c)
    } else {
        (c, TEMPLATE_WIDTH - 1 - r)
    }
}

fn in_silhouette(class: usize, y: usize, x: usize) -> bool {
    let (h, w) = (TEMPLATE_HEIGHT as f64, TEMPLATE_WIDTH as f64);
    let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
    match class {
        0 => true,
        1 => {
            let (dy, dx) = ((fy - h / 2.0) / (h / 2.0), (fx - w / 2.0) / (w / 2.0));
            dy * dy + dx * dx <= 1.0
        }
        // rectangle with a notch cut into the top edge
        2 => !(y < 12 && (10..18).contains(&x)),
        _ => {
            let (dy, dx) = ((fy - h / 2.0).abs() / (h / 2.0), (fx - w / 2.0).abs() / (w / 2.0));
            dy + dx <= 1.25
        }
    }
}

fn texture(class: usize, y: usize, x: usize) -> f64 {
    match class {
        0 => {
            if (y / 4).is_multiple_of(2) {
                215.0
            } else {
                45.0
            }
        }
        1 => {
            if (y / 5 + x / 5).is_multiple_of(2) {
                200.0
            } else {
                60.0
            }
        }
        2 => {
            if ((x + y) / 4).is_multiple_of(2) {
                225.0
            } else {
                35.0
            }
        }
        _ => {
            let (dy, dx) = ((y % 7) as f64 - 3.0, (x % 7) as f64 - 3.0);
            if dy * dy + dx * dx <= 4.5 {
                240.0
            } else {
                80.0
            }
        }
    }
}

/// Smooth low-contrast background with a little pixel noise.
pub fn background(width: usize, height: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.04..0.12),
                rng.random_range(0.04..0.12),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(8.0..16.0),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let mut v = 128.0;
            for &(fx, fy, ph, amp) in &waves {
                v += amp * (fx * x as f64 + fy * y as f64 + ph).sin();
            }
            out.push(v + rng.random_range(-6.0..6.0));
        }
    }
    out
}

fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// An unoccluded scene with the object's top-left pixel at `position` (x, y).
pub fn synth_scene(
    class: usize,
    pose: usize,
    position: (usize, usize),
    canvas: (usize, usize),
    seed: u64,
) -> Result<SyntheticScene> {
    if class >= NUM_CLASSES || pose >= NUM_POSES {
        return Err(Error::Config(format!("no template for class {class} pose {pose}")));
    }
    let (width, height) = canvas;
    let (th, tw) = template_size(pose);
    let (x0, y0) = position;
    if x0 + tw > width || y0 + th > height {
        return Err(Error::Config(format!(
            "object at ({x0}, {y0}) of size {tw}x{th} leaves the {width}x{height} canvas"
        )));
    }
    let mut rng = rng(seed);
    let mut pixels = background(width, height, &mut rng);
    let gain = rng.random_range(0.85..1.15);
    let mut object_mask = vec![false; width * height];
    for r in 0..th {
        for c in 0..tw {
            let (ty, tx) = to_template(pose, r, c);
            if !in_silhouette(class, ty, tx) {
                continue;
            }
            let i = (y0 + r) * width + x0 + c;
            object_mask[i] = true;
            let v = 128.0 + gain * (texture(class, ty, tx) - 128.0);
            pixels[i] = v + rng.random_range(-6.0..6.0);
        }
    }
    Ok(SyntheticScene {
        image: GrayImage::new(width, height, pixels.into_iter().map(quantize).collect())?,
        label: class,
        pose,
        bbox: BBox::new(x0 as f64, y0 as f64, (x0 + tw) as f64, (y0 + th) as f64),
        object_mask,
        occluder_mask: vec![false; width * height],
        level: Level::L0,
        occluder: OccluderType::None,
    })
}

/// Silhouettes of the occluder-object palette, disjoint from the classes.
fn occluder_shape(kind: usize, y: usize, x: usize, h: usize, w: usize) -> bool {
    let (fy, fx) = ((y as f64 + 0.5) / h as f64, (x as f64 + 0.5) / w as f64);
    match kind {
        // triangle
        0 => fx >= 0.5 - fy / 2.0 && fx <= 0.5 + fy / 2.0,
        // cross
        1 => (0.33..0.67).contains(&fx) || (0.33..0.67).contains(&fy),
        // disk
        _ => (fy - 0.5).powi(2) + (fx - 0.5).powi(2) <= 0.25,
    }
}

fn occluder_texture(kind: usize, y: usize, x: usize, period: usize) -> f64 {
    match kind {
        0 => {
            let d = (((y as f64) - 20.0).powi(2) + ((x as f64) - 20.0).powi(2)).sqrt();
            if (d as usize / period).is_multiple_of(2) {
                190.0
            } else {
                70.0
            }
        }
        1 => {
            if (x / period).is_multiple_of(2) {
                30.0
            } else {
                170.0
            }
        }
        _ => {
            if ((x + 2 * y) / period).is_multiple_of(3) {
                210.0
            } else {
                100.0
            }
        }
    }
}

struct Patch {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    shape: Option<usize>,
}

impl Patch {
    fn covers(&self, x: usize, y: usize) -> bool {
        x >= self.x0
            && y >= self.y0
            && x < self.x0 + self.w
            && y < self.y0 + self.h
            && self.shape.is_none_or(|k| occluder_shape(k, y - self.y0, x - self.x0, self.h, self.w))
    }
}

/// Maximum number of patch proposals before giving up on a band.
pub const PATCH_BUDGET: usize = 2000;

/// Largest accepted gap between the pixel and feature-grid occluded fractions.
pub const GRID_AGREEMENT: f64 = 0.1;
const PLACEMENTS: usize = 50;

/// Composite occluders onto `scene` until the occluded object fraction lies
/// in the band of `level`. `L0` returns the scene unchanged. Placements whose
/// grid-resolution fraction strays from the pixel fraction are redrawn.
pub fn apply_occlusion(scene: &SyntheticScene, level: Level, kind: OccluderType, seed: u64) -> Result<SyntheticScene> {
    if level == Level::L0 || kind == OccluderType::None {
        return Ok(scene.clone());
    }
    let mut rng = rng(seed);
    for _ in 0..PLACEMENTS {
        let out = occlude_once(scene, level, kind, &mut rng)?;
        if (out.grid_occluded_fraction() - out.occluded_fraction()).abs() <= GRID_AGREEMENT {
            return Ok(out);
        }
    }
    Err(Error::Data(format!("no {} placement in band {:?} agrees with the feature grid", kind.tag(), level.band())))
}

fn occlude_once(
    scene: &SyntheticScene,
    level: Level,
    kind: OccluderType,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticScene> {
    let (lo, hi) = level.band();
    let (width, height) = (scene.image.width, scene.image.height);
    let target = rng.random_range(lo + 0.03..hi - 0.03);
    let area = scene.object_area() as f64;
    let mut occ = scene.occluder_mask.clone();
    let mut covered = scene.object_mask.iter().zip(&occ).filter(|(&o, &c)| o && c).count() as f64;
    let mut patches = Vec::new();
    let bb = scene.bbox;
    let mut attempts = 0;
    while covered / area < target {
        attempts += 1;
        if attempts > PATCH_BUDGET {
            return Err(Error::Data(format!("could not reach occlusion band {lo}-{hi} within {PATCH_BUDGET} patches")));
        }
        let w = rng.random_range(10..=28).min(width);
        let h = rng.random_range(10..=28).min(height);
        // mostly on the object, sometimes spilling onto the background
        let (cx, cy) = if rng.random_bool(0.85) {
            (rng.random_range(bb.x0..bb.x1), rng.random_range(bb.y0..bb.y1))
        } else {
            (rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64))
        };
        let x0 = (cx as isize - w as isize / 2).clamp(0, (width - w) as isize) as usize;
        let y0 = (cy as isize - h as isize / 2).clamp(0, (height - h) as isize) as usize;
        let shape = (kind == OccluderType::Object).then(|| rng.random_range(0..3));
        let patch = Patch { x0, y0, w, h, shape };
        let mut gain = 0.0;
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                let i = y * width + x;
                if !occ[i] && scene.object_mask[i] && patch.covers(x, y) {
                    gain += 1.0;
                }
            }
        }
        if (covered + gain) / area > hi {
            continue;
        }
        covered += gain;
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                if patch.covers(x, y) {
                    occ[y * width + x] = true;
                }
            }
        }
        patches.push(patch);
    }

    let mut image = scene.image.clone();
    for patch in &patches {
        let period = rng.random_range(3..7);
        let kind_id = rng.random_range(0..3);
        let (fx, fy) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        for y in patch.y0..patch.y0 + patch.h {
            for x in patch.x0..patch.x0 + patch.w {
                if !patch.covers(x, y) {
                    continue;
                }
                let v = match kind {
                    OccluderType::White => 255.0,
                    OccluderType::Noise => rng.random_range(0.0..256.0),
                    OccluderType::Texture => {
                        let t = (fx * x as f64 + fy * y as f64) / period as f64;
                        128.0 + 90.0 * (t * std::f64::consts::TAU).sin().signum()
                    }
                    OccluderType::Object => {
                        let k = patch.shape.unwrap_or(kind_id);
                        occluder_texture(k, y - patch.y0, x - patch.x0, period)
                    }
                    OccluderType::None => unreachable!("handled above"),
                };
                image.set(x, y, quantize(v));
            }
        }
    }
    Ok(SyntheticScene { image, occluder_mask: occ, level, occluder: kind, ..scene.clone() })
}

/// An object-free image of background and occluder-like clutter.
pub fn clutter_image(width: usize, height: usize, seed: u64) -> Result<GrayImage> {
    let mut rng = rng(seed);
    let pixels = background(width, height, &mut rng);
    let blank = SyntheticScene {
        image: GrayImage::new(width, height, pixels.into_iter().map(quantize).collect())?,
        label: 0,
        pose: 0,
        bbox: BBox::new(0.0, 0.0, width as f64, height as f64),
        object_mask: vec![true; width * height],
        occluder_mask: vec![false; width * height],
        level: Level::L0,
        occluder: OccluderType::None,
    };
    let kind = OccluderType::OCCLUDING[rng.random_range(0..4)];
    let level = [Level::L1, Level::L2][rng.random_range(0..2)];
    Ok(apply_occlusion(&blank, level, kind, rng.random())?.image)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_tight() {
        for class in 0..NUM_CLASSES {
            for pose in 0..NUM_POSES {
                let a = synth_scene(class, pose, (8, 12), (64, 64), 3).unwrap();
                assert_eq!(a, synth_scene(class, pose, (8, 12), (64, 64), 3).unwrap());
                let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
                let mut area = 0;
                for (i, &m) in a.object_mask.iter().enumerate() {
                    if m {
                        let (x, y) = (i % 64, i / 64);
                        x0 = x0.min(x);
                        y0 = y0.min(y);
                        x1 = x1.max(x + 1);
                        y1 = y1.max(y + 1);
                        area += 1;
                    }
                }
                assert_eq!(a.bbox, BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64));
                let (th, tw) = template_size(pose);
                let template_area = (0..th)
                    .flat_map(|r| (0..tw).map(move |c| (r, c)))
                    .filter(|&(r, c)| {
                        let (ty, tx) = to_template(pose, r, c);
                        in_silhouette(class, ty, tx)
                    })
                    .count();
                assert_eq!(area, template_area);
            }
        }
        assert!(synth_scene(0, 0, (40, 0), (64, 64), 1).is_err());
    }

    #[test]
    fn occlusion_bands() {
        let scene = synth_scene(1, 0, (16, 12), (64, 64), 9).unwrap();
        assert_eq!(apply_occlusion(&scene, Level::L0, OccluderType::White, 1).unwrap(), scene);
        for level in [Level::L1, Level::L2, Level::L3] {
            for kind in OccluderType::OCCLUDING {
                for seed in 0..3 {
                    let occ = apply_occlusion(&scene, level, kind, seed).unwrap();
                    let f = occ.occluded_fraction();
                    let (lo, hi) = level.band();
                    assert!((lo..=hi).contains(&f), "{level:?} {kind:?}: {f}");
                    let grid_f = occ.grid_occluded_fraction();
                    assert!((grid_f - f).abs() <= GRID_AGREEMENT, "{kind:?}: {grid_f} vs {f}");
                }
            }
        }
    }
}
