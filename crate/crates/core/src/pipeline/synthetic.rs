//! Synthetic scenes with per-pixel ground truth: a textured square on a
//! uniform background, rendered analytically at any pose.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::{GrayImage, RgbImage};

pub const BACKGROUND: [u8; 3] = [40, 60, 200];
/// Same luma as [`BACKGROUND`], so the square's outline is a pure chroma edge.
pub const OBJECT_BASE: [u8; 3] = [144, 40, 30];

const PALETTE: [[u8; 3]; 6] = [
    [235, 220, 70],
    [245, 245, 240],
    [15, 15, 20],
    [120, 230, 120],
    [150, 230, 240],
    [60, 10, 70],
];

/// Texture-space margin kept free of blobs so the base colour forms a ring
/// around the pattern.
const MARGIN: f64 = 0.14;
/// Ring radii and gap half-width; at the training size the hole is about 5 px across the radius.
const RING_INNER: f64 = 0.052;
const RING_OUTER: f64 = 0.094;
const RING_GAP: f64 = 0.018;
const RING_COLORS: [[u8; 3]; 3] = [[15, 15, 20], [245, 245, 240], [235, 220, 70]];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Ellipse,
    Rect,
    /// Annulus between `ry` and `rx` with a radial gap towards `angle`. The base-coloured
    /// hole joins the surrounding base through the gap, so the blob-like keypoint at the
    /// ring centre falls inside the base region.
    OpenRing,
}

/// A pattern element in unit texture coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub shape: Shape,
    pub cx: f64,
    pub cy: f64,
    pub rx: f64,
    pub ry: f64,
    pub angle: f64,
    pub color: [u8; 3],
}

impl Blob {
    fn contains(&self, u: f64, v: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (du, dv) = (u - self.cx, v - self.cy);
        let a = (c * du + s * dv) / self.rx;
        let b = (-s * du + c * dv) / self.ry;
        match self.shape {
            Shape::Ellipse => a * a + b * b <= 1.0,
            Shape::Rect => a.abs() <= 1.0 && b.abs() <= 1.0,
            Shape::OpenRing => {
                let r = du.hypot(dv);
                let along = c * du + s * dv;
                let across = -s * du + c * dv;
                let in_gap = along > 0.0 && across.abs() < RING_GAP;
                r >= self.ry && r <= self.rx && !in_gap
            }
        }
    }

    /// Conservative half-extent of the blob's bounding box.
    fn reach(&self) -> f64 {
        match self.shape {
            Shape::Ellipse | Shape::OpenRing => self.rx.max(self.ry),
            Shape::Rect => self.rx.hypot(self.ry),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTexture {
    pub base: [u8; 3],
    pub blobs: Vec<Blob>,
}

impl ObjectTexture {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // one element per cell of a jittered 3x3 grid keeps the pattern spread out
        let cell = (1.0 - 2.0 * MARGIN) / 3.0;
        let mut cells: Vec<usize> = (0..9).collect();
        for i in (1..cells.len()).rev() {
            cells.swap(i, rng.random_range(0..=i));
        }
        let rings = &cells[..4];
        let mut blobs = Vec::new();
        for idx in 0..9 {
            let (gx, gy) = (idx % 3, idx / 3);
            let mut blob = if rings.contains(&idx) {
                Blob {
                    shape: Shape::OpenRing,
                    cx: 0.0,
                    cy: 0.0,
                    rx: RING_OUTER,
                    ry: RING_INNER,
                    angle: rng.random_range(0.0..std::f64::consts::TAU),
                    color: RING_COLORS[rng.random_range(0..RING_COLORS.len())],
                }
            } else if rng.random_bool(0.7) {
                Blob {
                    shape: if rng.random_bool(0.5) { Shape::Ellipse } else { Shape::Rect },
                    cx: 0.0,
                    cy: 0.0,
                    rx: rng.random_range(0.04..0.08),
                    ry: rng.random_range(0.04..0.08),
                    angle: rng.random_range(0.0..std::f64::consts::PI),
                    color: PALETTE[rng.random_range(0..PALETTE.len())],
                }
            } else {
                continue;
            };
            let slack = (cell / 2.0 - blob.reach()).max(0.0);
            blob.cx = MARGIN + cell * (gx as f64 + 0.5) + rng.random_range(-slack..=slack);
            blob.cy = MARGIN + cell * (gy as f64 + 0.5) + rng.random_range(-slack..=slack);
            blobs.push(blob);
        }
        ObjectTexture {
            base: OBJECT_BASE,
            blobs,
        }
    }

    /// Colour at texture coordinates in the unit square; later blobs paint over earlier ones.
    pub fn color_at(&self, u: f64, v: f64) -> [u8; 3] {
        self.blobs
            .iter()
            .rev()
            .find(|b| b.contains(u, v))
            .map_or(self.base, |b| b.color)
    }
}

/// Placement of the square in a scene, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub center_x: f64,
    pub center_y: f64,
    pub side: f64,
    pub rotation: f64,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub image: RgbImage,
    /// Ground-truth object pixels, row-major.
    pub truth: Vec<bool>,
}

impl Pose {
    fn texture_coords(&self, x: usize, y: usize) -> Option<(f64, f64)> {
        let (dx, dy) = (x as f64 + 0.5 - self.center_x, y as f64 + 0.5 - self.center_y);
        let (s, c) = self.rotation.sin_cos();
        let u = (c * dx + s * dy) / self.side + 0.5;
        let v = (-s * dx + c * dy) / self.side + 0.5;
        ((0.0..1.0).contains(&u) && (0.0..1.0).contains(&v)).then_some((u, v))
    }
}

pub fn render_scene(texture: &ObjectTexture, pose: &Pose, width: usize, height: usize) -> Scene {
    let mut truth = vec![false; width * height];
    let image = RgbImage::from_fn(width, height, |x, y| match pose.texture_coords(x, y) {
        Some((u, v)) => {
            truth[y * width + x] = true;
            texture.color_at(u, v)
        }
        None => BACKGROUND,
    });
    Scene { image, truth }
}

pub const SCENE_SIZE: usize = 256;
pub const TRAINING_SIDE: f64 = 96.0;

/// Object centred at its training size.
pub fn identity_pose() -> Pose {
    Pose {
        center_x: SCENE_SIZE as f64 / 2.0,
        center_y: SCENE_SIZE as f64 / 2.0,
        side: TRAINING_SIDE,
        rotation: 0.0,
    }
}

/// Isolated object used to train a model.
pub fn training_image(texture: &ObjectTexture) -> RgbImage {
    render_scene(texture, &identity_pose(), SCENE_SIZE, SCENE_SIZE).image
}

/// One generated evaluation case.
#[derive(Debug, Clone)]
pub struct SyntheticCase {
    pub name: String,
    pub texture: ObjectTexture,
    pub pose: Pose,
    pub scene: Scene,
}

/// Translated, ×1.5 pose derived from the seed.
pub fn shifted_pose(seed: u64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed0ff5e7);
    let c = SCENE_SIZE as f64 / 2.0;
    Pose {
        center_x: c + rng.random_range(-20.0..20.0),
        center_y: c + rng.random_range(-20.0..20.0),
        side: TRAINING_SIDE * 1.5,
        rotation: 0.0,
    }
}

/// `count` texture seeds starting at `seed`; each yields an identity case and a shifted, scaled case.
pub fn synthetic_suite(count: usize, seed: u64) -> Vec<SyntheticCase> {
    let mut cases = Vec::with_capacity(count * 2);
    for i in 0..count as u64 {
        let s = seed.wrapping_add(i);
        let texture = ObjectTexture::random(s);
        for (tag, pose) in [("identity", identity_pose()), ("shifted", shifted_pose(s))] {
            cases.push(SyntheticCase {
                name: format!("seed{s}_{tag}"),
                scene: render_scene(&texture, &pose, SCENE_SIZE, SCENE_SIZE),
                texture: texture.clone(),
                pose,
            });
        }
    }
    cases
}

/// Smoothly shaded random blobs in [0.05, 0.65], clear of clipping under gain 1.5 or offset 0.3.
pub fn texture_image(size: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (size * size) / 250;
    let blobs: Vec<(f64, f64, f64, f64, f64)> = (0..n)
        .map(|_| {
            (
                rng.random_range(0.0..size as f64),
                rng.random_range(0.0..size as f64),
                rng.random_range(2.5..10.0),
                rng.random_range(0.12..0.3) * if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                rng.random_range(0.6..1.6),
            )
        })
        .collect();
    GrayImage::from_fn(size, size, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let mut v = 0.35 + 0.04 * (fx * 0.05).sin() * (fy * 0.07).cos();
        for &(cx, cy, r, amp, aspect) in &blobs {
            let (dx, dy) = ((fx - cx) / (r * aspect), (fy - cy) * aspect / r);
            let d2 = dx * dx + dy * dy;
            if d2 < 25.0 {
                v += amp * (-0.5 * d2).exp();
            }
        }
        // soft limit keeps the surface smooth instead of flat-topped
        0.35 + 0.3 * ((v - 0.35) / 0.3).tanh()
    })
}
