//! Nearest-neighbour descriptor matching with the distance-ratio test.

use crate::error::{Error, Result};
use crate::features::{Descriptor, Feature, Keypoint};

/// Keypoints and descriptors pooled from every training image of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    pub name: String,
    pub entries: Vec<ModelEntry>,
    /// Number of training images; 0 when unknown (not stored in model files).
    pub source_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEntry {
    pub feature: Feature,
    /// Index of the training image the entry came from.
    pub source: usize,
}

impl ObjectModel {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub model_index: usize,
    pub test_index: usize,
    pub test_keypoint: Keypoint,
    pub distance: f64,
    pub ratio: f64,
}

pub fn euclidean_distance(a: &Descriptor, b: &Descriptor) -> f64 {
    a.0.iter()
        .zip(&b.0)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Indices and distances of the two closest candidates; ties go to the lower index.
fn two_nearest<'a>(
    query: &Descriptor,
    candidates: impl Iterator<Item = &'a Descriptor>,
) -> Option<((usize, f64), (usize, f64))> {
    let mut best: Option<(usize, f64)> = None;
    let mut second: Option<(usize, f64)> = None;
    for (i, c) in candidates.enumerate() {
        let d = euclidean_distance(query, c);
        match best {
            Some((_, bd)) if d >= bd => {
                if second.is_none_or(|(_, sd)| d < sd) {
                    second = Some((i, d));
                }
            }
            _ => {
                second = best;
                best = Some((i, d));
            }
        }
    }
    Some((best?, second?))
}

/// Matches every test descriptor against the model (test -> model direction).
pub fn match_descriptors(model: &ObjectModel, test: &[Feature], ratio_threshold: f64) -> Result<Vec<Match>> {
    match_against(
        &model.entries.iter().map(|e| &e.feature.descriptor).collect::<Vec<_>>(),
        test,
        ratio_threshold,
    )
}

/// Ratio-test matching of `test` against an arbitrary descriptor list.
pub fn match_against(reference: &[&Descriptor], test: &[Feature], ratio_threshold: f64) -> Result<Vec<Match>> {
    if reference.len() < 2 {
        return Err(Error::param(format!(
            "ratio matching needs at least 2 reference descriptors, got {}",
            reference.len()
        )));
    }
    if !(ratio_threshold > 0.0 && ratio_threshold < 1.0) {
        return Err(Error::param(format!("ratio threshold must lie in (0, 1), got {ratio_threshold}")));
    }
    let mut matches: Vec<Match> = test
        .iter()
        .enumerate()
        .filter_map(|(ti, f)| {
            let ((mi, d1), (_, d2)) = two_nearest(&f.descriptor, reference.iter().copied())?;
            if d2 == 0.0 {
                return None;
            }
            let ratio = d1 / d2;
            (ratio < ratio_threshold).then_some(Match {
                model_index: mi,
                test_index: ti,
                test_keypoint: f.keypoint,
                distance: d1,
                ratio,
            })
        })
        .collect();
    matches.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.test_index.cmp(&b.test_index)));
    Ok(matches)
}
