//! Initial over-segmentation: joint spatial-range mean shift filtering
//! followed by connected-component labeling and small-region absorption.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{RasterImage, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanShiftConfig {
    /// Half-width of the square spatial window, in pixels.
    pub spatial_bandwidth: f64,
    /// Radius of the colour window (Euclidean, RGB units).
    pub range_bandwidth: f64,
    pub min_region_size: usize,
    pub max_iterations: usize,
    pub convergence_eps: f64,
}

impl Default for MeanShiftConfig {
    fn default() -> Self {
        MeanShiftConfig {
            spatial_bandwidth: 8.0,
            range_bandwidth: 7.0,
            min_region_size: 30,
            max_iterations: 50,
            convergence_eps: 0.1,
        }
    }
}

impl MeanShiftConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.spatial_bandwidth > 0.0
            && self.range_bandwidth > 0.0
            && self.min_region_size > 0
            && self.max_iterations > 0
            && self.convergence_eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("mean shift parameters must all be positive: {self:?}")))
        }
    }
}

/// Dense per-pixel region ids in `[0, region_count)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    pub region_count: usize,
}

impl LabelMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.region_count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Labels as 16-bit samples for PGM dumps (saturating above 65535).
    pub fn to_u16(&self) -> Vec<u16> {
        self.labels.iter().map(|&l| l.min(u16::MAX as u32) as u16).collect()
    }

    /// Deterministic pseudo-random colour per region.
    pub fn colorize(&self) -> RgbImage {
        let color = |l: u32| {
            let mut h = (l as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            h ^= h >> 29;
            h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
            h ^= h >> 32;
            [(h & 0xff) as u8, ((h >> 8) & 0xff) as u8, ((h >> 16) & 0xff) as u8]
        };
        RgbImage::from_fn(self.width, self.height, |x, y| color(self.get(x, y)))
    }
}

/// Anything able to produce an initial over-segmentation.
pub trait Presegmenter {
    fn segment(&self, img: &RgbImage) -> Result<LabelMap>;
}

impl Presegmenter for MeanShiftConfig {
    fn segment(&self, img: &RgbImage) -> Result<LabelMap> {
        let filtered = mean_shift_filter(&RasterImage::Rgb(img.clone()), self)?;
        Ok(label_regions(&filtered, self))
    }
}

/// Fixed square blocks, used to exercise region merging independently of mean shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSegmenter {
    pub block: usize,
}

impl Default for GridSegmenter {
    fn default() -> Self {
        GridSegmenter { block: 16 }
    }
}

impl Presegmenter for GridSegmenter {
    fn segment(&self, img: &RgbImage) -> Result<LabelMap> {
        if self.block == 0 {
            return Err(Error::param("grid block size must be positive"));
        }
        let (w, h) = (img.width(), img.height());
        let cols = w.div_ceil(self.block);
        let rows = h.div_ceil(self.block);
        let labels = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                ((y / self.block) * cols + x / self.block) as u32
            })
            .collect();
        Ok(LabelMap {
            width: w,
            height: h,
            labels,
            region_count: cols * rows,
        })
    }
}

#[inline]
fn color_dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

#[inline]
fn to_f(c: [u8; 3]) -> [f64; 3] {
    [c[0] as f64, c[1] as f64, c[2] as f64]
}

/// Runs the flat-kernel mean shift from pixel `(x, y)` and returns the mode colour.
fn seek_mode(img: &RgbImage, x: usize, y: usize, cfg: &MeanShiftConfig) -> [f64; 3] {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let hs = cfg.spatial_bandwidth;
    let hr2 = cfg.range_bandwidth * cfg.range_bandwidth;
    let eps2 = cfg.convergence_eps * cfg.convergence_eps;
    let (mut px, mut py) = (x as f64, y as f64);
    let mut pc = to_f(img.get(x, y));
    for _ in 0..cfg.max_iterations {
        let x0 = (px - hs).ceil().max(0.0) as usize;
        let x1 = (px + hs).floor().min(w - 1.0) as usize;
        let y0 = (py - hs).ceil().max(0.0) as usize;
        let y1 = (py + hs).floor().min(h - 1.0) as usize;
        let mut n = 0usize;
        let (mut sx, mut sy) = (0.0, 0.0);
        let mut sc = [0.0; 3];
        for qy in y0..=y1 {
            for qx in x0..=x1 {
                let c = to_f(img.get(qx, qy));
                if color_dist2(c, pc) <= hr2 {
                    n += 1;
                    sx += qx as f64;
                    sy += qy as f64;
                    sc[0] += c[0];
                    sc[1] += c[1];
                    sc[2] += c[2];
                }
            }
        }
        if n == 0 {
            break;
        }
        let inv = 1.0 / n as f64;
        let (nx, ny) = (sx * inv, sy * inv);
        let nc = [sc[0] * inv, sc[1] * inv, sc[2] * inv];
        let shift2 = (nx - px).powi(2) + (ny - py).powi(2) + color_dist2(nc, pc);
        (px, py, pc) = (nx, ny, nc);
        if shift2 < eps2 {
            break;
        }
    }
    pc
}

/// Replaces each pixel's colour by the colour of its joint-domain mode.
pub fn mean_shift_filter(img: &RasterImage, cfg: &MeanShiftConfig) -> Result<RgbImage> {
    cfg.validate()?;
    let rgb = match img {
        RasterImage::Rgb(c) => c,
        RasterImage::Gray(_) => return Err(Error::param("mean shift filtering needs an RGB image")),
    };
    let (w, h) = (rgb.width(), rgb.height());
    let mut out = vec![0u8; w * h * 3];
    out.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let mode = seek_mode(rgb, x, y, cfg);
            for c in 0..3 {
                row[3 * x + c] = mode[c].round().clamp(0.0, 255.0) as u8;
            }
        }
    });
    RgbImage::new(w, h, out)
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    /// Joins two sets; the smaller root index survives so roots stay raster-ordered.
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Fuses 4-neighbours whose colours differ by at most `h_r`, absorbs regions
/// smaller than `min_region_size` into their closest-coloured neighbour and
/// numbers regions in raster order of their first pixel.
pub fn label_regions(filtered: &RgbImage, cfg: &MeanShiftConfig) -> LabelMap {
    let (w, h) = (filtered.width(), filtered.height());
    let hr2 = cfg.range_bandwidth * cfg.range_bandwidth;
    let colors: Vec<[f64; 3]> = filtered.pixels().map(to_f).collect();
    let mut sets = DisjointSet::new(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w && color_dist2(colors[i], colors[i + 1]) <= hr2 {
                sets.union(i, i + 1);
            }
            if y + 1 < h && color_dist2(colors[i], colors[i + w]) <= hr2 {
                sets.union(i, i + w);
            }
        }
    }

    // dense component ids in raster order
    let mut comp = vec![0usize; w * h];
    let mut root_to_comp = BTreeMap::new();
    for i in 0..w * h {
        let r = sets.find(i);
        let next = root_to_comp.len();
        comp[i] = *root_to_comp.entry(r).or_insert(next);
    }
    let n = root_to_comp.len();

    let mut size = vec![0usize; n];
    let mut sum = vec![[0.0f64; 3]; n];
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let c = comp[i];
            size[c] += 1;
            for k in 0..3 {
                sum[c][k] += colors[i][k];
            }
            if x + 1 < w && comp[i + 1] != c {
                adj[c].insert(comp[i + 1]);
                adj[comp[i + 1]].insert(c);
            }
            if y + 1 < h && comp[i + w] != c {
                adj[c].insert(comp[i + w]);
                adj[comp[i + w]].insert(c);
            }
        }
    }

    let mean = |size: &[usize], sum: &[[f64; 3]], c: usize| {
        let s = size[c] as f64;
        [sum[c][0] / s, sum[c][1] / s, sum[c][2] / s]
    };
    let mut owner = DisjointSet::new(n);
    let mut small: BTreeSet<(usize, usize)> =
        (0..n).filter(|&c| size[c] < cfg.min_region_size).map(|c| (size[c], c)).collect();
    while let Some((_, c)) = small.pop_first() {
        if adj[c].is_empty() {
            continue;
        }
        let mc = mean(&size, &sum, c);
        let target = *adj[c]
            .iter()
            .min_by(|&&a, &&b| {
                color_dist2(mean(&size, &sum, a), mc)
                    .total_cmp(&color_dist2(mean(&size, &sum, b), mc))
                    .then(a.cmp(&b))
            })
            .expect("non-empty adjacency");
        // absorb c into target
        small.remove(&(size[target], target));
        size[target] += size[c];
        for k in 0..3 {
            sum[target][k] += sum[c][k];
        }
        let neighbours = std::mem::take(&mut adj[c]);
        for nb in neighbours {
            adj[nb].remove(&c);
            if nb != target {
                adj[nb].insert(target);
                adj[target].insert(nb);
            }
        }
        owner.parent[c] = target;
        size[c] = 0;
        if size[target] < cfg.min_region_size {
            small.insert((size[target], target));
        }
    }

    let mut dense = BTreeMap::new();
    let labels = comp
        .iter()
        .map(|&c| {
            let r = owner.find(c);
            let next = dense.len() as u32;
            *dense.entry(r).or_insert(next)
        })
        .collect();
    LabelMap {
        width: w,
        height: h,
        labels,
        region_count: dense.len(),
    }
}
