//! Keypoint-seeded maximal-similarity region merging.
//!
//! Regions of the initial over-segmentation are described by 512-bin RGB
//! histograms (8 levels per channel) and compared with the City Block (L1)
//! distance. A region `Y` is absorbed by its neighbour `X` only when `X` is
//! the most similar region among all of `Y`'s neighbours. Background regions
//! (seeded from the image frame) absorb first; unlabeled regions then merge
//! among themselves; the two stages alternate until nothing changes and the
//! remaining unlabeled regions are declared object. Object regions (seeded
//! from matched keypoints) never take part in a merge.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::presegment::LabelMap;
use crate::raster::RgbImage;

pub const HIST_BINS: usize = 512;
const LEVEL_WIDTH: u8 = 32;

/// Joint RGB bin with 8 uniform levels per channel.
#[inline]
pub fn quantize_color(r: u8, g: u8, b: u8) -> usize {
    let q = |c: u8| (c / LEVEL_WIDTH) as usize;
    64 * q(r) + 8 * q(g) + q(b)
}

#[derive(Clone, PartialEq)]
pub struct RegionHistogram {
    counts: Box<[u64; HIST_BINS]>,
    normalized: Box<[f64; HIST_BINS]>,
    total: u64,
}

impl std::fmt::Debug for RegionHistogram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nonzero: Vec<(usize, u64)> = self
            .counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i, c))
            .collect();
        f.debug_struct("RegionHistogram")
            .field("total", &self.total)
            .field("bins", &nonzero)
            .finish()
    }
}

impl Default for RegionHistogram {
    fn default() -> Self {
        RegionHistogram {
            counts: Box::new([0; HIST_BINS]),
            normalized: Box::new([0.0; HIST_BINS]),
            total: 0,
        }
    }
}

impl RegionHistogram {
    pub fn from_counts(counts: [u64; HIST_BINS]) -> Self {
        let mut h = RegionHistogram {
            counts: Box::new(counts),
            ..Default::default()
        };
        h.renormalize();
        h
    }

    fn renormalize(&mut self) {
        self.total = self.counts.iter().sum();
        if self.total == 0 {
            self.normalized.fill(0.0);
            return;
        }
        let t = self.total as f64;
        for (n, &c) in self.normalized.iter_mut().zip(self.counts.iter()) {
            *n = c as f64 / t;
        }
    }

    pub fn counts(&self) -> &[u64; HIST_BINS] {
        &self.counts
    }

    pub fn normalized(&self) -> &[f64; HIST_BINS] {
        &self.normalized
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Adds raw counts of `other` and recomputes the normalized bins.
    pub fn absorb(&mut self, other: &RegionHistogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
        self.renormalize();
    }
}

#[inline]
fn l1(a: &RegionHistogram, b: &RegionHistogram) -> f64 {
    a.normalized
        .iter()
        .zip(b.normalized.iter())
        .map(|(x, y)| (x - y).abs())
        .sum()
}

/// Sum of absolute bin differences between two normalized histograms, in `[0, 2]`.
pub fn city_block_distance(a: &RegionHistogram, b: &RegionHistogram) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::param("city block distance of an empty histogram"));
    }
    Ok(l1(a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegionLabel {
    Object,
    Background,
    Unlabeled,
}

#[derive(Debug, Clone)]
pub struct Region {
    pub id: usize,
    pub pixel_count: usize,
    pub histogram: RegionHistogram,
    pub label: RegionLabel,
    pub adjacency: BTreeSet<usize>,
    /// Set once this region has been absorbed.
    pub merged_into: Option<usize>,
}

impl Region {
    pub fn is_alive(&self) -> bool {
        self.merged_into.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeRecord {
    pub step: usize,
    pub absorber: usize,
    pub absorbed: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct RegionGraph {
    pub width: usize,
    pub height: usize,
    pub regions: Vec<Region>,
    /// Number of merges applied so far.
    pub generation: usize,
    pub log: Vec<MergeRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeedCounts {
    /// Regions labeled object from matched keypoints.
    pub object: usize,
    /// Border regions labeled background.
    pub background: usize,
}

pub fn build_graph(img: &RgbImage, labels: &LabelMap) -> Result<RegionGraph> {
    if (img.width(), img.height()) != (labels.width, labels.height) {
        return Err(Error::param(format!(
            "label map {}x{} does not match image {}x{}",
            labels.width,
            labels.height,
            img.width(),
            img.height()
        )));
    }
    let (w, h) = (labels.width, labels.height);
    let n = labels.region_count;
    let mut counts = vec![[0u64; HIST_BINS]; n];
    let mut sizes = vec![0usize; n];
    let mut adjacency = vec![BTreeSet::new(); n];
    for y in 0..h {
        for x in 0..w {
            let l = labels.get(x, y) as usize;
            if l >= n {
                return Err(Error::param(format!("label {l} out of range (region_count {n})")));
            }
            let [r, g, b] = img.get(x, y);
            counts[l][quantize_color(r, g, b)] += 1;
            sizes[l] += 1;
            if x + 1 < w {
                let o = labels.get(x + 1, y) as usize;
                if o != l && o < n {
                    adjacency[l].insert(o);
                    adjacency[o].insert(l);
                }
            }
            if y + 1 < h {
                let o = labels.get(x, y + 1) as usize;
                if o != l && o < n {
                    adjacency[l].insert(o);
                    adjacency[o].insert(l);
                }
            }
        }
    }
    let regions = counts
        .into_iter()
        .zip(sizes)
        .zip(adjacency)
        .enumerate()
        .map(|(id, ((c, pixel_count), adjacency))| Region {
            id,
            pixel_count,
            histogram: RegionHistogram::from_counts(c),
            label: RegionLabel::Unlabeled,
            adjacency,
            merged_into: None,
        })
        .collect();
    Ok(RegionGraph {
        width: w,
        height: h,
        regions,
        generation: 0,
        log: Vec::new(),
    })
}

impl RegionGraph {
    pub fn region(&self, id: usize) -> &Region {
        &self.regions[id]
    }

    pub fn alive(&self) -> impl Iterator<Item = &Region> {
        self.regions.iter().filter(|r| r.is_alive())
    }

    pub fn alive_count(&self) -> usize {
        self.alive().count()
    }

    pub fn count_label(&self, label: RegionLabel) -> usize {
        self.alive().filter(|r| r.label == label).count()
    }

    /// Surviving region that currently owns original region `id`.
    pub fn owner(&self, mut id: usize) -> usize {
        while let Some(next) = self.regions[id].merged_into {
            id = next;
        }
        id
    }

    /// Distance between two live regions.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        l1(&self.regions[a].histogram, &self.regions[b].histogram)
    }

    /// `Y`'s most similar neighbour: minimal distance, lowest id on ties.
    pub fn most_similar_neighbor(&self, y: usize) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for &z in &self.regions[y].adjacency {
            let d = self.distance(y, z);
            // adjacency is visited in ascending id, so strict < keeps the lowest id
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((z, d));
            }
        }
        best
    }

    /// `X` absorbs `Y`: counts summed, adjacency united, `Y` retired.
    fn absorb(&mut self, x: usize, y: usize, distance: f64) {
        let taken = std::mem::take(&mut self.regions[y].adjacency);
        let (y_hist, y_count) = {
            let ry = &mut self.regions[y];
            ry.merged_into = Some(x);
            (std::mem::take(&mut ry.histogram), std::mem::replace(&mut ry.pixel_count, 0))
        };
        for nb in taken {
            self.regions[nb].adjacency.remove(&y);
            if nb != x {
                self.regions[nb].adjacency.insert(x);
                self.regions[x].adjacency.insert(nb);
            }
        }
        let rx = &mut self.regions[x];
        rx.histogram.absorb(&y_hist);
        rx.pixel_count += y_count;
        self.generation += 1;
        self.log.push(MergeRecord {
            step: self.generation,
            absorber: x,
            absorbed: y,
            distance,
        });
    }

    /// Merge log, one line per merge: `step absorber absorbed distance`.
    pub fn merge_log_text(&self) -> String {
        let mut out = String::new();
        for r in &self.log {
            let _ = writeln!(out, "{} {} {} {:.6}", r.step, r.absorber, r.absorbed, r.distance);
        }
        out
    }
}

/// Assigns object labels from keypoint positions and background labels from the image frame.
pub fn seed_labels(
    graph: &mut RegionGraph,
    labels: &LabelMap,
    keypoints: &[(f64, f64)],
    min_seed_matches: usize,
) -> Result<SeedCounts> {
    if (graph.width, graph.height) != (labels.width, labels.height) || graph.regions.len() != labels.region_count {
        return Err(Error::param("label map does not match region graph"));
    }
    let (w, h) = (labels.width, labels.height);
    let mut hits = vec![0usize; graph.regions.len()];
    for &(x, y) in keypoints {
        if !x.is_finite() || !y.is_finite() {
            continue;
        }
        let px = (x.round().max(0.0) as usize).min(w - 1);
        let py = (y.round().max(0.0) as usize).min(h - 1);
        hits[graph.owner(labels.get(px, py) as usize)] += 1;
    }
    let mut on_border = vec![false; graph.regions.len()];
    for x in 0..w {
        on_border[graph.owner(labels.get(x, 0) as usize)] = true;
        on_border[graph.owner(labels.get(x, h - 1) as usize)] = true;
    }
    for y in 0..h {
        on_border[graph.owner(labels.get(0, y) as usize)] = true;
        on_border[graph.owner(labels.get(w - 1, y) as usize)] = true;
    }

    let threshold = min_seed_matches.max(1);
    let mut counts = SeedCounts::default();
    for region in graph.regions.iter_mut().filter(|r| r.is_alive()) {
        region.label = if hits[region.id] >= threshold {
            counts.object += 1;
            RegionLabel::Object
        } else if on_border[region.id] {
            counts.background += 1;
            RegionLabel::Background
        } else {
            RegionLabel::Unlabeled
        };
    }
    if counts.object == 0 {
        return Err(Error::ObjectNotFound);
    }
    Ok(counts)
}

/// A merge about to be applied, reported to observers before the graph changes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingMerge {
    pub absorber: usize,
    pub absorbed: usize,
    pub distance: f64,
}

/// One sweep of the merging rule over regions carrying `active` (background
/// or unlabeled). Returns the number of merges performed.
pub fn merge_step(graph: &mut RegionGraph, active: RegionLabel) -> usize {
    merge_step_observed(graph, active, &mut |_, _| {})
}

/// [`merge_step`] with a hook invoked on the pre-merge graph for every merge.
pub fn merge_step_observed(
    graph: &mut RegionGraph,
    active: RegionLabel,
    observer: &mut dyn FnMut(&RegionGraph, &PendingMerge),
) -> usize {
    assert!(
        active != RegionLabel::Object,
        "object regions never absorb during sweeps"
    );
    let absorbers: Vec<usize> = graph.alive().filter(|r| r.label == active).map(|r| r.id).collect();
    let mut merges = 0;
    for x in absorbers {
        if !graph.regions[x].is_alive() || graph.regions[x].label != active {
            continue;
        }
        let candidates: Vec<usize> = graph.regions[x].adjacency.iter().copied().collect();
        for y in candidates {
            let ry = &graph.regions[y];
            if !ry.is_alive() || ry.label != RegionLabel::Unlabeled || !graph.regions[x].adjacency.contains(&y) {
                continue;
            }
            if let Some((best, d)) = graph.most_similar_neighbor(y) {
                if best == x {
                    let pending = PendingMerge {
                        absorber: x,
                        absorbed: y,
                        distance: d,
                    };
                    observer(graph, &pending);
                    graph.absorb(x, y, d);
                    merges += 1;
                }
            }
        }
    }
    merges
}

/// Alternates background and unlabeled sweeps until a full round performs
/// no merge, then relabels the remaining unlabeled regions as object.
/// Returns the total number of merges.
pub fn run_merging(graph: &mut RegionGraph) -> Result<usize> {
    run_merging_observed(graph, &mut |_, _| {})
}

pub fn run_merging_observed(
    graph: &mut RegionGraph,
    observer: &mut dyn FnMut(&RegionGraph, &PendingMerge),
) -> Result<usize> {
    if graph.count_label(RegionLabel::Object) == 0 {
        return Err(Error::Detection("merging needs at least one object region".into()));
    }
    if graph.count_label(RegionLabel::Background) == 0 {
        return Err(Error::Detection("merging needs at least one background region".into()));
    }
    let mut total = 0;
    loop {
        let mut round = 0;
        for active in [RegionLabel::Background, RegionLabel::Unlabeled] {
            loop {
                let m = merge_step_observed(graph, active, observer);
                round += m;
                if m == 0 {
                    break;
                }
            }
        }
        total += round;
        if round == 0 {
            break;
        }
    }
    for r in graph.regions.iter_mut().filter(|r| r.merged_into.is_none()) {
        if r.label == RegionLabel::Unlabeled {
            r.label = RegionLabel::Object;
        }
    }
    Ok(total)
}

/// Ordered 8-connected boundary pixels; the first point is repeated at the end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    pub points: Vec<(usize, usize)>,
    /// Traced around a hole rather than around the outside of a component.
    pub inner: bool,
}

impl Contour {
    pub fn is_closed(&self) -> bool {
        self.points.len() >= 2 && self.points.first() == self.points.last()
    }

    pub fn is_8_connected(&self) -> bool {
        self.points.windows(2).all(|w| {
            let dx = w[0].0.abs_diff(w[1].0);
            let dy = w[0].1.abs_diff(w[1].1);
            dx <= 1 && dy <= 1
        })
    }
}

#[derive(Debug, Clone)]
pub struct DetectionResult {
    pub width: usize,
    pub height: usize,
    pub object_mask: Vec<bool>,
    pub boundaries: Vec<Contour>,
    pub merge_steps: usize,
    pub seed_counts: SeedCounts,
}

impl DetectionResult {
    pub fn object_pixels(&self) -> usize {
        self.object_mask.iter().filter(|&&m| m).count()
    }

    /// Mask as 8-bit samples, 255 for object.
    pub fn mask_bytes(&self) -> Vec<u8> {
        self.object_mask.iter().map(|&m| if m { 255 } else { 0 }).collect()
    }
}

/// Clockwise from west, in image coordinates (y down).
const MOORE: [(i64, i64); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn direction_index(from: (i64, i64), to: (i64, i64)) -> usize {
    let d = (to.0 - from.0, to.1 - from.1);
    MOORE.iter().position(|&m| m == d).expect("backtrack must neighbour the current pixel")
}

/// Moore-neighbour tracing from `start`, whose neighbour `backtrack` is not in the mask.
pub fn trace_contour(mask: &[bool], width: usize, height: usize, start: (usize, usize), backtrack: (i64, i64)) -> Vec<(usize, usize)> {
    let inside = |p: (i64, i64)| {
        p.0 >= 0 && p.1 >= 0 && (p.0 as usize) < width && (p.1 as usize) < height && mask[p.1 as usize * width + p.0 as usize]
    };
    let start_i = (start.0 as i64, start.1 as i64);
    let step = |p: (i64, i64), b: (i64, i64)| -> Option<((i64, i64), (i64, i64))> {
        let d = direction_index(p, b);
        let mut prev = b;
        for k in 1..=8 {
            let m = MOORE[(d + k) % 8];
            let q = (p.0 + m.0, p.1 + m.1);
            if inside(q) {
                return Some((q, prev));
            }
            prev = q;
        }
        None
    };

    let mut points = vec![start];
    let (mut p, mut b) = (start_i, backtrack);
    let mut first_move = None;
    let limit = 4 * width * height + 8;
    loop {
        let Some((q, nb)) = step(p, b) else {
            points.push(start);
            break;
        };
        if p == start_i {
            match first_move {
                Some(f) if f == q => break,
                None => first_move = Some(q),
                _ => {}
            }
        }
        points.push((q.0 as usize, q.1 as usize));
        (p, b) = (q, nb);
        if points.len() > limit {
            break;
        }
    }
    if points.last() != Some(&start) {
        points.push(start);
    }
    points
}

/// Outer contours of 8-connected mask components plus inner contours of holes.
pub fn trace_boundaries(mask: &[bool], width: usize, height: usize) -> Vec<Contour> {
    let mut contours = Vec::new();
    let idx = |x: usize, y: usize| y * width + x;

    let mut seen = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            if !mask[idx(x, y)] || seen[idx(x, y)] {
                continue;
            }
            // mark the 8-connected component
            let mut queue = VecDeque::from([(x, y)]);
            seen[idx(x, y)] = true;
            while let Some((cx, cy)) = queue.pop_front() {
                for (dx, dy) in MOORE {
                    let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if mask[idx(nx, ny)] && !seen[idx(nx, ny)] {
                        seen[idx(nx, ny)] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
            contours.push(Contour {
                points: trace_contour(mask, width, height, (x, y), (x as i64 - 1, y as i64)),
                inner: false,
            });
        }
    }

    // holes: 4-connected background components that do not reach the frame
    let mut seen = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            if mask[idx(x, y)] || seen[idx(x, y)] {
                continue;
            }
            let mut queue = VecDeque::from([(x, y)]);
            seen[idx(x, y)] = true;
            let mut touches_frame = false;
            while let Some((cx, cy)) = queue.pop_front() {
                if cx == 0 || cy == 0 || cx + 1 == width || cy + 1 == height {
                    touches_frame = true;
                }
                for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    if !mask[idx(nx, ny)] && !seen[idx(nx, ny)] {
                        seen[idx(nx, ny)] = true;
                        queue.push_back((nx, ny));
                    }
                }
            }
            if !touches_frame {
                // (x, y) is the hole's first pixel in raster order, so the pixel above is object
                contours.push(Contour {
                    points: trace_contour(mask, width, height, (x, y - 1), (x as i64, y as i64)),
                    inner: true,
                });
            }
        }
    }
    contours
}

pub fn extract_boundary(graph: &RegionGraph, labels: &LabelMap) -> Result<DetectionResult> {
    let is_object: Vec<bool> = (0..graph.regions.len())
        .map(|id| graph.regions[graph.owner(id)].label == RegionLabel::Object)
        .collect();
    let object_mask: Vec<bool> = labels.labels.iter().map(|&l| is_object[l as usize]).collect();
    if !object_mask.iter().any(|&m| m) {
        return Err(Error::ObjectNotFound);
    }
    let boundaries = trace_boundaries(&object_mask, labels.width, labels.height);
    Ok(DetectionResult {
        width: labels.width,
        height: labels.height,
        object_mask,
        boundaries,
        merge_steps: graph.generation,
        seed_counts: SeedCounts::default(),
    })
}
