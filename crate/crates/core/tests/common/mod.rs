//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sift_merge::presegment::LabelMap;
use sift_merge::raster::RgbImage;
use sift_merge::region_merge::{quantize_color, RegionGraph, RegionLabel, HIST_BINS};

/// Voronoi label map with at most `max_regions` regions, each painted from a
/// few palette colours, plus a label assignment with both seed kinds present.
pub struct RandomGraphCase {
    pub image: RgbImage,
    pub labels: LabelMap,
    pub seeds: Vec<RegionLabel>,
}

pub fn random_graph_case(seed: u64, max_regions: usize) -> RandomGraphCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (rng.random_range(12..=24usize), rng.random_range(12..=24usize));
    let k = rng.random_range(3..=max_regions);
    let sites: Vec<(f64, f64)> = (0..k)
        .map(|_| (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)))
        .collect();
    let raw: Vec<usize> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            (0..k)
                .min_by(|&a, &b| {
                    let da = (sites[a].0 - x).powi(2) + (sites[a].1 - y).powi(2);
                    let db = (sites[b].0 - x).powi(2) + (sites[b].1 - y).powi(2);
                    da.total_cmp(&db).then(a.cmp(&b))
                })
                .unwrap()
        })
        .collect();
    // dense renumbering in raster order of first pixel
    let mut remap = vec![usize::MAX; k];
    let mut next = 0;
    let labels: Vec<u32> = raw
        .iter()
        .map(|&r| {
            if remap[r] == usize::MAX {
                remap[r] = next;
                next += 1;
            }
            remap[r] as u32
        })
        .collect();
    let n = next;
    assert!(n >= 2, "degenerate Voronoi fixture for seed {seed}");

    // a small palette makes exact histogram ties common
    let palette: Vec<[u8; 3]> = (0..rng.random_range(3..=6))
        .map(|_| [rng.random_range(0..8u8) * 32, rng.random_range(0..8u8) * 32, rng.random_range(0..8u8) * 32])
        .collect();
    let region_colors: Vec<Vec<[u8; 3]>> = (0..n)
        .map(|_| {
            (0..rng.random_range(1..=3))
                .map(|_| palette[rng.random_range(0..palette.len())])
                .collect()
        })
        .collect();
    let image = RgbImage::from_fn(w, h, |x, y| {
        let cs = &region_colors[labels[y * w + x] as usize];
        cs[rng.random_range(0..cs.len())]
    });

    let mut seeds: Vec<RegionLabel> = (0..n)
        .map(|_| match rng.random_range(0..10) {
            0..=1 => RegionLabel::Object,
            2..=4 => RegionLabel::Background,
            _ => RegionLabel::Unlabeled,
        })
        .collect();
    if !seeds.contains(&RegionLabel::Object) {
        seeds[rng.random_range(0..n)] = RegionLabel::Object;
    }
    if !seeds.contains(&RegionLabel::Background) {
        let only_object = seeds.iter().filter(|&&s| s == RegionLabel::Object).count() == 1;
        let mut i = rng.random_range(0..n);
        if only_object && seeds[i] == RegionLabel::Object {
            i = (i + 1) % n;
        }
        seeds[i] = RegionLabel::Background;
    }
    RandomGraphCase {
        image,
        labels: LabelMap {
            width: w,
            height: h,
            labels,
            region_count: n,
        },
        seeds,
    }
}

pub fn apply_seeds(graph: &mut RegionGraph, seeds: &[RegionLabel]) {
    for (r, &s) in graph.regions.iter_mut().zip(seeds) {
        r.label = s;
    }
}

/// Straightforward pixel-level re-implementation of the merging procedure.
/// Adjacency and histograms are recomputed from the pixel ownership map
/// whenever they are needed.
pub struct ReferenceMerge {
    pub width: usize,
    pub height: usize,
    pub owner: Vec<usize>,
    pub bins: Vec<usize>,
    pub alive: Vec<bool>,
    pub label: Vec<RegionLabel>,
    pub merges: usize,
}

impl ReferenceMerge {
    pub fn new(image: &RgbImage, labels: &LabelMap, seeds: &[RegionLabel]) -> Self {
        let bins = image.pixels().map(|[r, g, b]| quantize_color(r, g, b)).collect();
        ReferenceMerge {
            width: labels.width,
            height: labels.height,
            owner: labels.labels.iter().map(|&l| l as usize).collect(),
            bins,
            alive: vec![true; labels.region_count],
            label: seeds.to_vec(),
            merges: 0,
        }
    }

    pub fn neighbours(&self, r: usize) -> BTreeSet<usize> {
        pixel_neighbours(&self.owner, self.width, self.height, r)
    }

    fn histogram(&self, r: usize) -> (Vec<u64>, u64) {
        let mut c = vec![0u64; HIST_BINS];
        let mut n = 0;
        for (p, &o) in self.owner.iter().enumerate() {
            if o == r {
                c[self.bins[p]] += 1;
                n += 1;
            }
        }
        (c, n)
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (ca, na) = self.histogram(a);
        let (cb, nb) = self.histogram(b);
        l1_from_counts(&ca, na, &cb, nb)
    }

    pub fn best_neighbour(&self, y: usize) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for z in self.neighbours(y) {
            let d = self.distance(y, z);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((z, d));
            }
        }
        best.map(|(z, _)| z)
    }

    fn sweep(&mut self, active: RegionLabel) -> usize {
        let absorbers: Vec<usize> = (0..self.alive.len())
            .filter(|&r| self.alive[r] && self.label[r] == active)
            .collect();
        let mut merged = 0;
        for x in absorbers {
            if !self.alive[x] {
                continue;
            }
            for y in self.neighbours(x) {
                let eligible = self.alive[y]
                    && self.label[y] == RegionLabel::Unlabeled
                    && self.neighbours(x).contains(&y);
                if eligible && self.best_neighbour(y) == Some(x) {
                    for o in self.owner.iter_mut() {
                        if *o == y {
                            *o = x;
                        }
                    }
                    self.alive[y] = false;
                    merged += 1;
                }
            }
        }
        self.merges += merged;
        merged
    }

    pub fn run(&mut self) {
        loop {
            let mut round = 0;
            for active in [RegionLabel::Background, RegionLabel::Unlabeled] {
                loop {
                    let m = self.sweep(active);
                    round += m;
                    if m == 0 {
                        break;
                    }
                }
            }
            if round == 0 {
                break;
            }
        }
        for r in 0..self.alive.len() {
            if self.alive[r] && self.label[r] == RegionLabel::Unlabeled {
                self.label[r] = RegionLabel::Object;
            }
        }
    }
}

pub fn pixel_neighbours(owner: &[usize], w: usize, h: usize, r: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            let a = owner[y * w + x];
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx < w && ny < h {
                    let b = owner[ny * w + nx];
                    if a != b {
                        if a == r {
                            out.insert(b);
                        } else if b == r {
                            out.insert(a);
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn l1_from_counts(ca: &[u64], na: u64, cb: &[u64], nb: u64) -> f64 {
    let (fa, fb) = (na as f64, nb as f64);
    ca.iter()
        .zip(cb)
        .map(|(&a, &b)| (a as f64 / fa - b as f64 / fb).abs())
        .sum()
}

/// Conservation checks on a graph snapshot; returns a description of the first violation.
pub fn conservation_violation(graph: &RegionGraph, total_pixels: usize) -> Option<String> {
    let mut pixels = 0;
    for r in graph.alive() {
        pixels += r.pixel_count;
        if r.histogram.total() as usize != r.pixel_count {
            return Some(format!("region {} histogram total {} != pixel count {}", r.id, r.histogram.total(), r.pixel_count));
        }
        let s: f64 = r.histogram.normalized().iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Some(format!("region {} normalized sum {s}", r.id));
        }
    }
    (pixels != total_pixels).then(|| format!("pixel count {pixels} != {total_pixels}"))
}
