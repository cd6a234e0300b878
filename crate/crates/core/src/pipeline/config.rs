use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::presegment::MeanShiftConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmenterKind {
    MeanShift,
    /// Fixed square blocks of the given side.
    Grid(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub features: FeatureConfig,
    pub meanshift: MeanShiftConfig,
    pub segmenter: SegmenterKind,
    pub ratio_threshold: f64,
    pub min_seed_matches: usize,
    /// IoU needed for an evaluated image to count as a full detection.
    pub success_iou: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            features: FeatureConfig::default(),
            meanshift: MeanShiftConfig::default(),
            segmenter: SegmenterKind::MeanShift,
            ratio_threshold: 0.8,
            min_seed_matches: 1,
            success_iou: 0.9,
        }
    }
}

/// Every key understood by [`PipelineConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "num_octaves",
    "scales_per_octave",
    "base_sigma",
    "contrast_threshold",
    "edge_ratio",
    "multi_orientation",
    "descriptor_clamp",
    "spatial_bandwidth",
    "range_bandwidth",
    "min_region_size",
    "max_iterations",
    "convergence_eps",
    "segmenter",
    "grid_block",
    "ratio_threshold",
    "min_seed_matches",
    "success_iou",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::param(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "1" | "true" | "on" | "yes" => Ok(true),
        "0" | "false" | "off" | "no" => Ok(false),
        _ => Err(Error::param(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "num_octaves" => self.features.pyramid.num_octaves = parse(key, value)?,
            "scales_per_octave" => self.features.pyramid.scales_per_octave = parse(key, value)?,
            "base_sigma" => self.features.pyramid.base_sigma = parse(key, value)?,
            "contrast_threshold" => self.features.contrast_threshold = parse(key, value)?,
            "edge_ratio" => self.features.edge_ratio = parse(key, value)?,
            "multi_orientation" => self.features.multi_orientation = parse_bool(key, value)?,
            "descriptor_clamp" => {
                self.features.descriptor_clamp = match value {
                    "none" | "off" | "0" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "spatial_bandwidth" => self.meanshift.spatial_bandwidth = parse(key, value)?,
            "range_bandwidth" => self.meanshift.range_bandwidth = parse(key, value)?,
            "min_region_size" => self.meanshift.min_region_size = parse(key, value)?,
            "max_iterations" => self.meanshift.max_iterations = parse(key, value)?,
            "convergence_eps" => self.meanshift.convergence_eps = parse(key, value)?,
            "segmenter" => {
                self.segmenter = match value {
                    "meanshift" => SegmenterKind::MeanShift,
                    "grid" => SegmenterKind::Grid(match self.segmenter {
                        SegmenterKind::Grid(b) => b,
                        SegmenterKind::MeanShift => 16,
                    }),
                    other => return Err(Error::param(format!("unknown segmenter {other:?}"))),
                }
            }
            "grid_block" => {
                let b: usize = parse(key, value)?;
                if let SegmenterKind::Grid(block) = &mut self.segmenter {
                    *block = b;
                } else {
                    self.segmenter = SegmenterKind::Grid(b);
                }
            }
            "ratio_threshold" => self.ratio_threshold = parse(key, value)?,
            "min_seed_matches" => self.min_seed_matches = parse(key, value)?,
            "success_iou" => self.success_iou = parse(key, value)?,
            other => return Err(Error::param(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::param(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::param(format!("config line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.features.pyramid.validate()?;
        self.meanshift.validate()?;
        let f = &self.features;
        if !(f.contrast_threshold > 0.0) || !(f.edge_ratio > 0.0) {
            return Err(Error::param("contrast_threshold and edge_ratio must be positive"));
        }
        if f.descriptor_clamp.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::param("descriptor_clamp must be positive"));
        }
        if !(self.ratio_threshold > 0.0 && self.ratio_threshold < 1.0) {
            return Err(Error::param("ratio_threshold must lie in (0, 1)"));
        }
        if self.min_seed_matches == 0 {
            return Err(Error::param("min_seed_matches must be >= 1"));
        }
        if !(self.success_iou > 0.0 && self.success_iou <= 1.0) {
            return Err(Error::param("success_iou must lie in (0, 1]"));
        }
        if self.segmenter == SegmenterKind::Grid(0) {
            return Err(Error::param("grid_block must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_format() {
        let cfg = PipelineConfig::parse_str(
            "# tuned\nratio_threshold = 0.7\nnum_octaves=3\n\nmulti_orientation = off # single\ndescriptor_clamp = none\n",
        )
        .unwrap();
        assert_eq!(cfg.ratio_threshold, 0.7);
        assert_eq!(cfg.features.pyramid.num_octaves, 3);
        assert!(!cfg.features.multi_orientation);
        assert_eq!(cfg.features.descriptor_clamp, None);
    }

    #[test]
    fn every_key_is_settable() {
        let values = [
            "3", "4", "1.8", "0.02", "8", "true", "0.25", "6", "9", "20", "30", "0.2", "grid", "8", "0.6", "2", "0.8",
        ];
        let mut cfg = PipelineConfig::default();
        for (k, v) in CONFIG_KEYS.iter().zip(values) {
            cfg.set(k, v).unwrap();
        }
        cfg.validate().unwrap();
        assert_eq!(cfg.segmenter, SegmenterKind::Grid(8));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(PipelineConfig::parse_str("nonsense = 1").is_err());
        assert!(PipelineConfig::parse_str("ratio_threshold = 1.5").is_err());
        assert!(PipelineConfig::parse_str("ratio_threshold 0.5").is_err());
        let mut cfg = PipelineConfig::default();
        assert!(cfg.apply_override("edge_ratio").is_err());
        cfg.apply_override("edge_ratio=12").unwrap();
        assert_eq!(cfg.features.edge_ratio, 12.0);
    }
}
