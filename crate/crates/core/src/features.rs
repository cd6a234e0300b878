//! Keypoint refinement, orientation assignment and 128-d descriptors.
//!
//! Raw DoG extrema are refined with a 3-D quadratic fit, filtered for low
//! contrast and edge responses, given one or more dominant gradient
//! orientations and finally described by a 4x4 grid of 8-bin orientation
//! histograms sampled on a rotated 16x16 lattice.

use std::cmp::Ordering;
use std::f64::consts::TAU;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{gradients, wrap_angle, GradientField, GrayImage, RasterImage};
use crate::scale_space::{
    build_dog_pyramid, build_gaussian_pyramid, find_extrema, DogPyramid, GaussianPyramid, PyramidConfig,
    RawExtremum, MIN_OCTAVE_SIDE,
};

pub const DESCRIPTOR_LEN: usize = 128;
pub const ORIENTATION_BINS: usize = 36;

const DESCRIPTOR_GRID: usize = 16;
const DESCRIPTOR_CELLS: usize = 4;
const DESCRIPTOR_ORIENTATIONS: usize = 8;
const MAX_REFINE_STEPS: usize = 5;
const ORIENTATION_WINDOW_FACTOR: f64 = 1.5;
const ORIENTATION_PEAK_RATIO: f64 = 0.8;
/// Width of one descriptor cell in units of the keypoint scale.
const DESCRIPTOR_CELL_SCALE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub pyramid: PyramidConfig,
    pub contrast_threshold: f64,
    pub edge_ratio: f64,
    pub multi_orientation: bool,
    /// Per-component clamp applied between the two normalizations; `None` disables it.
    pub descriptor_clamp: Option<f64>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            pyramid: PyramidConfig::default(),
            contrast_threshold: 0.03,
            edge_ratio: 10.0,
            multi_orientation: true,
            descriptor_clamp: Some(0.2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    /// Sub-pixel position in the original image frame.
    pub x: f64,
    pub y: f64,
    /// Absolute blur sigma in the original image frame.
    pub scale: f64,
    pub orientation: f64,
    pub octave: usize,
    pub plane: usize,
    /// Integer sample in the octave frame where the quadratic fit converged.
    pub sample_x: usize,
    pub sample_y: usize,
    /// Interpolated |D| at the refined location.
    pub response: f64,
}

impl Keypoint {
    #[inline]
    pub fn octave_factor(&self) -> f64 {
        (1usize << self.octave) as f64
    }

    /// Position and scale expressed in the keypoint's own octave frame.
    #[inline]
    pub fn in_octave(&self) -> (f64, f64, f64) {
        let f = self.octave_factor();
        (self.x / f, self.y / f, self.scale / f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub [f64; DESCRIPTOR_LEN]);

impl Descriptor {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub keypoint: Keypoint,
    pub descriptor: Descriptor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationHistogram(pub [f64; ORIENTATION_BINS]);

/// Why a candidate extremum did not become a keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    /// Fit did not converge, left the valid sample range or hit a singular Hessian.
    Unstable,
    LowContrast,
    Edge,
}

/// Gradient fields for every Gaussian plane, computed once per pyramid.
#[derive(Debug, Clone)]
pub struct GradientPyramid {
    pub octaves: Vec<Vec<GradientField>>,
}

impl GradientPyramid {
    pub fn new(gp: &GaussianPyramid) -> Result<Self> {
        let octaves = gp
            .octaves
            .iter()
            .map(|planes| planes.par_iter().map(gradients).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(GradientPyramid { octaves })
    }

    pub fn plane(&self, octave: usize, plane: usize) -> &GradientField {
        &self.octaves[octave][plane]
    }
}

/// First and second derivatives of D at an integer sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalFit {
    pub gradient: [f64; 3],
    pub hessian: [[f64; 3]; 3],
    pub value: f64,
}

pub(crate) fn local_fit(stack: &[GrayImage], plane: usize, x: usize, y: usize) -> LocalFit {
    let d = |p: usize, xx: usize, yy: usize| stack[p].get(xx, yy);
    let v = d(plane, x, y);
    let dx = 0.5 * (d(plane, x + 1, y) - d(plane, x - 1, y));
    let dy = 0.5 * (d(plane, x, y + 1) - d(plane, x, y - 1));
    let ds = 0.5 * (d(plane + 1, x, y) - d(plane - 1, x, y));
    let dxx = d(plane, x + 1, y) + d(plane, x - 1, y) - 2.0 * v;
    let dyy = d(plane, x, y + 1) + d(plane, x, y - 1) - 2.0 * v;
    let dss = d(plane + 1, x, y) + d(plane - 1, x, y) - 2.0 * v;
    let dxy = 0.25 * (d(plane, x + 1, y + 1) - d(plane, x - 1, y + 1) - d(plane, x + 1, y - 1)
        + d(plane, x - 1, y - 1));
    let dxs = 0.25 * (d(plane + 1, x + 1, y) - d(plane + 1, x - 1, y) - d(plane - 1, x + 1, y)
        + d(plane - 1, x - 1, y));
    let dys = 0.25 * (d(plane + 1, x, y + 1) - d(plane + 1, x, y - 1) - d(plane - 1, x, y + 1)
        + d(plane - 1, x, y - 1));
    LocalFit {
        gradient: [dx, dy, ds],
        hessian: [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]],
        value: v,
    }
}

/// Solves `a * x = b` by Cramer's rule; `None` when `a` is (numerically) singular.
fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let det3 = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let det = det3(a);
    let scale = a.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if scale == 0.0 || det.abs() <= 1e-12 * scale.powi(3) {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, slot) in out.iter_mut().enumerate() {
        let mut m = *a;
        for row in 0..3 {
            m[row][col] = b[row];
        }
        *slot = det3(&m) / det;
    }
    Some(out)
}

/// Principal-curvature test on the 2x2 spatial Hessian: `true` when the
/// sample looks like an edge (or a saddle) and must be discarded.
pub fn is_edge_like(hessian: &[[f64; 3]; 3], edge_ratio: f64) -> bool {
    let tr = hessian[0][0] + hessian[1][1];
    let det = hessian[0][0] * hessian[1][1] - hessian[0][1] * hessian[1][0];
    if det <= 0.0 {
        return true;
    }
    tr * tr / det >= (edge_ratio + 1.0).powi(2) / edge_ratio
}

pub fn refine_keypoint(
    dp: &DogPyramid,
    e: &RawExtremum,
    cfg: &FeatureConfig,
) -> std::result::Result<Keypoint, Rejection> {
    let stack = &dp.octaves[e.octave];
    let (w, h) = (stack[0].width(), stack[0].height());
    let max_plane = stack.len() - 2;
    let (mut x, mut y, mut plane) = (e.x, e.y, e.plane);

    let mut converged = None;
    for _ in 0..MAX_REFINE_STEPS {
        let fit = local_fit(stack, plane, x, y);
        let neg_g = fit.gradient.map(|g| -g);
        let offset = solve3(&fit.hessian, &neg_g).ok_or(Rejection::Unstable)?;
        if offset.iter().all(|o| o.abs() <= 0.5) {
            converged = Some((fit, offset));
            break;
        }
        let nx = x as i64 + offset[0].round() as i64;
        let ny = y as i64 + offset[1].round() as i64;
        let np = plane as i64 + offset[2].round() as i64;
        if nx < 1 || ny < 1 || nx > w as i64 - 2 || ny > h as i64 - 2 || np < 1 || np > max_plane as i64 {
            return Err(Rejection::Unstable);
        }
        (x, y, plane) = (nx as usize, ny as usize, np as usize);
    }
    let (fit, offset) = converged.ok_or(Rejection::Unstable)?;

    let refined = fit.value + 0.5 * (0..3).map(|i| fit.gradient[i] * offset[i]).sum::<f64>();
    if refined.abs() < cfg.contrast_threshold {
        return Err(Rejection::LowContrast);
    }
    if is_edge_like(&fit.hessian, cfg.edge_ratio) {
        return Err(Rejection::Edge);
    }

    let factor = (1usize << e.octave) as f64;
    let kx = (x as f64 + offset[0]) * factor;
    let ky = (y as f64 + offset[1]) * factor;
    let full_w = (w << e.octave) as f64;
    let full_h = (h << e.octave) as f64;
    if !(0.0..full_w).contains(&kx) || !(0.0..full_h).contains(&ky) {
        return Err(Rejection::Unstable);
    }
    Ok(Keypoint {
        x: kx,
        y: ky,
        scale: dp.config.plane_sigma(plane as f64 + offset[2]) * factor,
        orientation: 0.0,
        octave: e.octave,
        plane,
        sample_x: x,
        sample_y: y,
        response: refined.abs(),
    })
}

/// Magnitude-weighted 36-bin histogram of gradient directions around a keypoint.
pub fn orientation_histogram(grads: &GradientPyramid, kp: &Keypoint) -> OrientationHistogram {
    let field = grads.plane(kp.octave, kp.plane);
    let (ox, oy, sigma_oct) = kp.in_octave();
    let sigma = ORIENTATION_WINDOW_FACTOR * sigma_oct;
    let radius = (3.0 * sigma).round() as i64;
    let (cx, cy) = (ox.round() as i64, oy.round() as i64);
    let denom = 2.0 * sigma * sigma;
    let mut bins = [0.0; ORIENTATION_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy > radius * radius {
                continue;
            }
            let (px, py) = (cx + dx, cy + dy);
            if px < 0 || py < 0 || px >= field.width as i64 || py >= field.height as i64 {
                continue;
            }
            let (m, theta) = field.at(px as usize, py as usize);
            if m == 0.0 {
                continue;
            }
            let weight = (-((dx * dx + dy * dy) as f64) / denom).exp();
            let bin = (theta * ORIENTATION_BINS as f64 / TAU).round() as usize % ORIENTATION_BINS;
            bins[bin] += m * weight;
        }
    }
    OrientationHistogram(bins)
}

/// Dominant directions of a histogram, parabolically refined, in `[0, 2π)`.
pub fn orientation_peaks(hist: &OrientationHistogram, multi: bool) -> Vec<f64> {
    let bins = &hist.0;
    let n = bins.len();
    let max = bins.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let refine = |i: usize| {
        let l = bins[(i + n - 1) % n];
        let c = bins[i];
        let r = bins[(i + 1) % n];
        let denom = l - 2.0 * c + r;
        let offset = if denom != 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
        wrap_angle((i as f64 + offset) * TAU / n as f64)
    };
    if !multi {
        let best = (0..n)
            .max_by(|&a, &b| bins[a].partial_cmp(&bins[b]).unwrap().then(b.cmp(&a)))
            .expect("non-empty");
        return vec![refine(best)];
    }
    (0..n)
        .filter(|&i| {
            let c = bins[i];
            c >= ORIENTATION_PEAK_RATIO * max && c > bins[(i + n - 1) % n] && c > bins[(i + 1) % n]
        })
        .map(refine)
        .collect()
}

pub fn assign_orientations(grads: &GradientPyramid, kp: &Keypoint, cfg: &FeatureConfig) -> Vec<Keypoint> {
    let hist = orientation_histogram(grads, kp);
    orientation_peaks(&hist, cfg.multi_orientation)
        .into_iter()
        .map(|orientation| Keypoint { orientation, ..*kp })
        .collect()
}

/// Normalize, optionally clamp and renormalize; `None` for an all-zero vector.
fn normalize_descriptor(mut v: [f64; DESCRIPTOR_LEN], clamp: Option<f64>) -> Option<Descriptor> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    if let Some(limit) = clamp {
        v.iter_mut().for_each(|x| *x = x.min(limit));
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Some(Descriptor(v))
}

pub fn compute_descriptor(grads: &GradientPyramid, kp: &Keypoint, cfg: &FeatureConfig) -> Option<Descriptor> {
    let field = grads.plane(kp.octave, kp.plane);
    let (ox, oy, sigma_oct) = kp.in_octave();
    let spacing = DESCRIPTOR_CELL_SCALE * sigma_oct * DESCRIPTOR_CELLS as f64 / DESCRIPTOR_GRID as f64;
    let (sin, cos) = kp.orientation.sin_cos();
    let half = DESCRIPTOR_GRID as f64 / 2.0;
    let cell = (DESCRIPTOR_GRID / DESCRIPTOR_CELLS) as f64;
    // Gaussian weight with sigma of half the window width, in grid units
    let weight_denom = 2.0 * half * half;
    let obins = DESCRIPTOR_ORIENTATIONS as f64;

    let mut raw = [0.0; DESCRIPTOR_LEN];
    let mut inside = 0usize;
    for gy in 0..DESCRIPTOR_GRID {
        let v = gy as f64 + 0.5 - half;
        for gx in 0..DESCRIPTOR_GRID {
            let u = gx as f64 + 0.5 - half;
            let px = ox + spacing * (cos * u - sin * v);
            let py = oy + spacing * (sin * u + cos * v);
            let (ix, iy) = (px.round(), py.round());
            if ix < 0.0 || iy < 0.0 || ix >= field.width as f64 || iy >= field.height as f64 {
                continue;
            }
            inside += 1;
            let (m, theta) = field.at(ix as usize, iy as usize);
            if m == 0.0 {
                continue;
            }
            let weight = m * (-(u * u + v * v) / weight_denom).exp();
            let rel = wrap_angle(theta - kp.orientation);

            let rb = (v + half) / cell - 0.5;
            let cb = (u + half) / cell - 0.5;
            let ob = rel * obins / TAU;
            let (r0, c0, o0) = (rb.floor(), cb.floor(), ob.floor());
            let (dr, dc, dob) = (rb - r0, cb - c0, ob - o0);
            for (ri, wr) in [(r0 as i64, 1.0 - dr), (r0 as i64 + 1, dr)] {
                if ri < 0 || ri >= DESCRIPTOR_CELLS as i64 {
                    continue;
                }
                for (ci, wc) in [(c0 as i64, 1.0 - dc), (c0 as i64 + 1, dc)] {
                    if ci < 0 || ci >= DESCRIPTOR_CELLS as i64 {
                        continue;
                    }
                    for (oi, wo) in [(o0 as usize, 1.0 - dob), (o0 as usize + 1, dob)] {
                        let oi = oi % DESCRIPTOR_ORIENTATIONS;
                        let idx = ((ri as usize * DESCRIPTOR_CELLS) + ci as usize) * DESCRIPTOR_ORIENTATIONS + oi;
                        raw[idx] += weight * wr * wc * wo;
                    }
                }
            }
        }
    }
    if inside == 0 {
        return None;
    }
    normalize_descriptor(raw, cfg.descriptor_clamp)
}

/// Total order used for the output of [`detect_and_describe`].
pub fn feature_order(a: &Keypoint, b: &Keypoint) -> Ordering {
    a.octave
        .cmp(&b.octave)
        .then(a.plane.cmp(&b.plane))
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
        .then(a.orientation.total_cmp(&b.orientation))
}

/// Scale-space state shared by the per-keypoint stages.
pub struct ScaleSpace {
    pub gaussian: GaussianPyramid,
    pub dog: DogPyramid,
    pub gradients: GradientPyramid,
}

impl ScaleSpace {
    pub fn build(gray: &GrayImage, pyramid: &PyramidConfig) -> Result<Self> {
        let gaussian = build_gaussian_pyramid(gray, pyramid)?;
        let dog = build_dog_pyramid(&gaussian);
        let gradients = GradientPyramid::new(&gaussian)?;
        Ok(ScaleSpace {
            gaussian,
            dog,
            gradients,
        })
    }

    /// Refined, oriented keypoints (without descriptors).
    pub fn keypoints(&self, cfg: &FeatureConfig) -> Vec<Keypoint> {
        let extrema = find_extrema(&self.dog);
        extrema
            .par_iter()
            .filter_map(|e| refine_keypoint(&self.dog, e, cfg).ok())
            .flat_map_iter(|kp| assign_orientations(&self.gradients, &kp, cfg))
            .collect()
    }

    pub fn describe(&self, keypoints: &[Keypoint], cfg: &FeatureConfig) -> Vec<Feature> {
        keypoints
            .par_iter()
            .filter_map(|kp| {
                compute_descriptor(&self.gradients, kp, cfg).map(|descriptor| Feature {
                    keypoint: *kp,
                    descriptor,
                })
            })
            .collect()
    }
}

/// Largest octave count not exceeding the request that fits the image.
pub fn fitting_octaves(width: usize, height: usize, requested: usize) -> usize {
    let min_side = width.min(height);
    (1..=requested.max(1))
        .rev()
        .find(|&n| (min_side >> (n - 1)) >= MIN_OCTAVE_SIDE)
        .unwrap_or(0)
}

/// Full detection and description; the octave count is reduced to what the image allows.
pub fn detect_and_describe(img: &RasterImage, cfg: &FeatureConfig) -> Result<Vec<Feature>> {
    let gray = img.to_gray();
    let octaves = fitting_octaves(gray.width(), gray.height(), cfg.pyramid.num_octaves);
    if octaves == 0 {
        return Err(Error::param(format!(
            "{}x{} image is smaller than the minimum octave size {MIN_OCTAVE_SIDE}",
            gray.width(),
            gray.height()
        )));
    }
    let pyramid = PyramidConfig {
        num_octaves: octaves,
        ..cfg.pyramid
    };
    let space = ScaleSpace::build(&gray, &pyramid)?;
    let keypoints = space.keypoints(cfg);
    let mut features = space.describe(&keypoints, cfg);
    features.sort_by(|a, b| feature_order(&a.keypoint, &b.keypoint));
    Ok(features)
}
