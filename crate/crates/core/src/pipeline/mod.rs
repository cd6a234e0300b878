//! Training, detection and evaluation over the component modules.

pub mod config;
pub mod model_io;
pub mod report;
pub mod synthetic;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{PipelineConfig, SegmenterKind};
pub use model_io::{load_model, save_model};
pub use report::{format_rate, EvalReport, ImageOutcome};

use crate::error::{Error, Result, Stage, StageExt};
use crate::features::detect_and_describe;
use crate::matcher::{match_descriptors, Match, ModelEntry, ObjectModel};
use crate::presegment::{GridSegmenter, LabelMap, Presegmenter};
use crate::raster::{load_image, GrayImage, RasterImage, RgbImage};
use crate::region_merge::{
    build_graph, extract_boundary, run_merging_observed, seed_labels, DetectionResult, PendingMerge, RegionGraph,
};

/// Pools features of every training image into one model.
pub fn train(images: &[RasterImage], name: &str, cfg: &PipelineConfig) -> Result<ObjectModel> {
    if images.is_empty() {
        return Err(Error::Training("no training images given".into()));
    }
    let per_image = images
        .par_iter()
        .map(|img| detect_and_describe(img, &cfg.features))
        .collect::<Result<Vec<_>>>()
        .stage(Stage::Features)?;
    let entries: Vec<ModelEntry> = per_image
        .into_iter()
        .enumerate()
        .flat_map(|(source, feats)| feats.into_iter().map(move |feature| ModelEntry { feature, source }))
        .collect();
    if entries.is_empty() {
        return Err(Error::Training("no keypoints found in any training image".into())).stage(Stage::Features);
    }
    Ok(ObjectModel {
        name: name.to_string(),
        entries,
        source_count: images.len(),
    })
}

/// Loads and trains; the model is named after the first image unless `name` is given.
pub fn train_paths<P: AsRef<Path>>(paths: &[P], name: Option<&str>, cfg: &PipelineConfig) -> Result<ObjectModel> {
    let images = paths
        .iter()
        .map(load_image)
        .collect::<Result<Vec<_>>>()
        .stage(Stage::Load)?;
    let default_name = paths
        .first()
        .and_then(|p| p.as_ref().file_stem())
        .and_then(|s| s.to_str())
        .unwrap_or("object")
        .to_string();
    train(&images, name.unwrap_or(&default_name), cfg)
}

/// Everything produced by one detection, for output and inspection.
#[derive(Debug, Clone)]
pub struct Detection {
    pub result: DetectionResult,
    pub matches: Vec<Match>,
    pub labels: LabelMap,
    pub initial_regions: usize,
    pub merge_log: String,
}

pub fn presegment(img: &RgbImage, cfg: &PipelineConfig) -> Result<LabelMap> {
    match cfg.segmenter {
        SegmenterKind::MeanShift => cfg.meanshift.segment(img),
        SegmenterKind::Grid(block) => GridSegmenter { block }.segment(img),
    }
}

pub fn detect(model: &ObjectModel, img: &RasterImage, cfg: &PipelineConfig) -> Result<Detection> {
    detect_observed(model, img, cfg, &mut |_, _| {})
}

/// [`detect`] with a hook called before every region merge.
pub fn detect_observed(
    model: &ObjectModel,
    img: &RasterImage,
    cfg: &PipelineConfig,
    observer: &mut dyn FnMut(&RegionGraph, &PendingMerge),
) -> Result<Detection> {
    cfg.validate()?;
    if model.len() < 2 {
        return Err(Error::param(format!("model {:?} has {} entries, need at least 2", model.name, model.len())))
            .stage(Stage::Matching);
    }
    let features = detect_and_describe(img, &cfg.features).stage(Stage::Features)?;
    let matches = match_descriptors(model, &features, cfg.ratio_threshold).stage(Stage::Matching)?;
    if matches.is_empty() {
        return Err(Error::ObjectNotFound).stage(Stage::Matching);
    }

    let rgb = img.to_rgb();
    let labels = presegment(&rgb, cfg).stage(Stage::Presegment)?;
    let mut graph = build_graph(&rgb, &labels).stage(Stage::Seeding)?;
    let seeds: Vec<(f64, f64)> = matches.iter().map(|m| (m.test_keypoint.x, m.test_keypoint.y)).collect();
    let seed_counts = seed_labels(&mut graph, &labels, &seeds, cfg.min_seed_matches).stage(Stage::Seeding)?;
    run_merging_observed(&mut graph, observer).stage(Stage::Merging)?;
    let mut result = extract_boundary(&graph, &labels).stage(Stage::Boundary)?;
    result.seed_counts = seed_counts;
    Ok(Detection {
        result,
        matches,
        initial_regions: labels.region_count,
        merge_log: graph.merge_log_text(),
        labels,
    })
}

pub fn detect_path(model: &ObjectModel, path: impl AsRef<Path>, cfg: &PipelineConfig) -> Result<Detection> {
    let img = load_image(path).stage(Stage::Load)?;
    detect(model, &img, cfg)
}

pub const CONTOUR_COLOR: [u8; 3] = [0, 255, 0];
pub const SEED_COLOR: [u8; 3] = [255, 255, 0];

/// Input with contours drawn in [`CONTOUR_COLOR`] and matched keypoints as small [`SEED_COLOR`] crosses.
pub fn overlay(img: &RgbImage, detection: &Detection) -> RgbImage {
    let mut out = img.clone();
    let (w, h) = (out.width() as i64, out.height() as i64);
    for m in &detection.matches {
        let (cx, cy) = (m.test_keypoint.x.round() as i64, m.test_keypoint.y.round() as i64);
        for d in -2..=2i64 {
            for (x, y) in [(cx + d, cy), (cx, cy + d)] {
                if (0..w).contains(&x) && (0..h).contains(&y) {
                    out.set(x as usize, y as usize, SEED_COLOR);
                }
            }
        }
    }
    for c in &detection.result.boundaries {
        for &(x, y) in &c.points {
            out.set(x, y, CONTOUR_COLOR);
        }
    }
    out
}

/// Object mask as an 8-bit gray image (0 or 255).
pub fn mask_image(result: &DetectionResult) -> RasterImage {
    RasterImage::Gray(GrayImage::from_fn(result.width, result.height, |x, y| {
        if result.object_mask[y * result.width + x] {
            1.0
        } else {
            0.0
        }
    }))
}

/// Intersection over union of two masks of equal length; two empty masks give 1.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "masks differ in size");
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.iter().zip(b) {
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Nonzero samples are object.
pub fn load_mask(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<bool>)> {
    let g = load_image(path)?.to_gray();
    Ok((g.width(), g.height(), g.data().iter().map(|&v| v > 0.0).collect()))
}

#[derive(Debug, Clone)]
pub struct EvalItem {
    pub path: String,
    pub image: RasterImage,
    pub truth: Option<Vec<bool>>,
}

/// Success rule: with ground truth, IoU at least `success_iou`; otherwise any completed detection.
pub fn judge(path: &str, mask: Result<Vec<bool>>, truth: Option<&[bool]>, success_iou: f64) -> ImageOutcome {
    match mask {
        Ok(mask) => {
            let iou = truth.map(|t| iou(&mask, t));
            ImageOutcome {
                path: path.to_string(),
                detected: iou.is_none_or(|v| v >= success_iou),
                iou,
                error: None,
            }
        }
        Err(e) => ImageOutcome {
            path: path.to_string(),
            detected: false,
            iou: truth.map(|_| 0.0),
            error: Some(e.to_string()),
        },
    }
}

/// Evaluates with an arbitrary detector returning an object mask; items are processed in parallel,
/// outcomes keep input order.
pub fn evaluate_with<F>(object: &str, items: &[EvalItem], success_iou: f64, detector: F) -> Result<EvalReport>
where
    F: Fn(&EvalItem) -> Result<Vec<bool>> + Sync,
{
    for item in items {
        if let Some(t) = &item.truth {
            if t.len() != item.image.width() * item.image.height() {
                return Err(Error::param(format!("truth mask for {} does not match the image size", item.path)));
            }
        }
    }
    let outcomes = items
        .par_iter()
        .map(|item| judge(&item.path, detector(item), item.truth.as_deref(), success_iou))
        .collect();
    EvalReport::from_outcomes(object, outcomes)
}

pub fn evaluate_items(model: &ObjectModel, items: &[EvalItem], cfg: &PipelineConfig) -> Result<EvalReport> {
    cfg.validate()?;
    evaluate_with(&model.name, items, cfg.success_iou, |item| {
        detect(model, &item.image, cfg).map(|d| d.result.object_mask)
    })
}

fn is_image_file(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm" | "ppm" | "pnm"))
}

/// Image files in a directory, sorted by path.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if is_image_file(&p) {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

fn find_truth(truth_dir: &Path, image: &Path) -> Result<PathBuf> {
    let stem = image.file_stem().unwrap_or_default();
    list_images(truth_dir)?
        .into_iter()
        .find(|p| p.file_stem() == Some(stem))
        .ok_or_else(|| Error::param(format!("no truth mask for {} in {}", image.display(), truth_dir.display())))
}

pub fn evaluate(model: &ObjectModel, test_dir: &Path, truth_dir: Option<&Path>, cfg: &PipelineConfig) -> Result<EvalReport> {
    let paths = list_images(test_dir).stage(Stage::Load)?;
    if paths.is_empty() {
        return Err(Error::param(format!("no test images in {}", test_dir.display()))).stage(Stage::Load);
    }
    let items = paths
        .iter()
        .map(|p| {
            let image = load_image(p)?;
            let truth = match truth_dir {
                Some(dir) => {
                    let (w, h, mask) = load_mask(find_truth(dir, p)?)?;
                    if (w, h) != (image.width(), image.height()) {
                        return Err(Error::param(format!("truth mask for {} has a different size", p.display())));
                    }
                    Some(mask)
                }
                None => None,
            };
            Ok(EvalItem {
                path: p.display().to_string(),
                image,
                truth,
            })
        })
        .collect::<Result<Vec<_>>>()
        .stage(Stage::Load)?;
    evaluate_items(model, &items, cfg)
}

/// Generated scenes, each scored against a model trained on its own isolated object.
pub fn evaluate_synthetic(count: usize, seed: u64, cfg: &PipelineConfig) -> Result<EvalReport> {
    if count == 0 {
        return Err(Error::param("synthetic evaluation needs at least one scene"));
    }
    cfg.validate()?;
    let cases = synthetic::synthetic_suite(count, seed);
    let outcomes = cases
        .par_iter()
        .map(|case| {
            let mask = train(
                &[RasterImage::Rgb(synthetic::training_image(&case.texture))],
                &case.name,
                cfg,
            )
            .and_then(|model| detect(&model, &RasterImage::Rgb(case.scene.image.clone()), cfg))
            .map(|d| d.result.object_mask);
            judge(&case.name, mask, Some(&case.scene.truth), cfg.success_iou)
        })
        .collect();
    EvalReport::from_outcomes("synthetic", outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_basics() {
        assert_eq!(iou(&[true, false], &[true, false]), 1.0);
        assert_eq!(iou(&[true, true, false, false], &[false, true, true, false]), 1.0 / 3.0);
        assert_eq!(iou(&[false; 3], &[false; 3]), 1.0);
    }

    #[test]
    fn judge_rules() {
        let truth = [true, true, false, false];
        assert!(judge("a", Ok(vec![true, true, false, false]), Some(&truth), 0.9).detected);
        assert!(!judge("a", Ok(vec![true, false, false, false]), Some(&truth), 0.9).detected);
        assert!(judge("a", Ok(vec![true, false, false, false]), None, 0.9).detected);
        let missed = judge("a", Err(Error::ObjectNotFound), None, 0.9);
        assert!(!missed.detected);
        assert_eq!(missed.error.as_deref(), Some("object not found"));
    }

    #[test]
    fn constant_training_image_fails() {
        let img = RasterImage::Gray(GrayImage::filled(64, 64, 0.5));
        let err = train(&[img], "flat", &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err.root(), Error::Training(_)));
    }
}
