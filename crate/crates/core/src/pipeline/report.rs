use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutcome {
    pub path: String,
    pub detected: bool,
    pub iou: Option<f64>,
    /// Error message when detection did not complete.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub object: String,
    pub n_test: usize,
    pub n_detected: usize,
    /// Percent of tested images with a full detection.
    pub accuracy_rate: f64,
    pub per_image: Vec<ImageOutcome>,
}

impl EvalReport {
    pub fn from_outcomes(object: impl Into<String>, per_image: Vec<ImageOutcome>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::param("evaluation needs at least one test image"));
        }
        let n_test = per_image.len();
        let n_detected = per_image.iter().filter(|o| o.detected).count();
        Ok(EvalReport {
            object: object.into(),
            n_test,
            n_detected,
            accuracy_rate: 100.0 * n_detected as f64 / n_test as f64,
            per_image,
        })
    }

    /// Rate truncated to two decimals, trailing zeros dropped: 22/24 gives `91.66`.
    pub fn rate_text(&self) -> String {
        format_rate(self.n_detected, self.n_test)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let name_w = self.object.len().max(6);
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>21}  {:>23}  {:>13}",
            "Object", "Number of test images", "Number of full detected", "Accuracy rate"
        );
        let _ = writeln!(
            out,
            "{:<name_w$}  {:>21}  {:>23}  {:>13}",
            self.object,
            self.n_test,
            self.n_detected,
            format!("{} %", self.rate_text())
        );
        out.push('\n');
        for o in &self.per_image {
            let iou = o.iou.map_or("-".to_string(), |v| format!("{v:.4}"));
            let status = if o.detected { "detected" } else { "missed" };
            let _ = write!(out, "{}\t{status}\tiou={iou}", o.path);
            if let Some(e) = &o.error {
                let _ = write!(out, "\terror={e}");
            }
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&self.to_key_values());
        out
    }

    /// Machine-readable `key=value` block.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "object={}", self.object);
        let _ = writeln!(out, "n_test={}", self.n_test);
        let _ = writeln!(out, "n_detected={}", self.n_detected);
        let _ = writeln!(out, "accuracy_rate={}", self.rate_text());
        for (i, o) in self.per_image.iter().enumerate() {
            let _ = writeln!(out, "image.{i}.path={}", o.path);
            let _ = writeln!(out, "image.{i}.detected={}", o.detected);
            if let Some(v) = o.iou {
                let _ = writeln!(out, "image.{i}.iou={v:.6}");
            }
        }
        out
    }
}

/// `100 * detected / tested` truncated (not rounded) to two decimals.
pub fn format_rate(detected: usize, tested: usize) -> String {
    if tested == 0 {
        return "0".into();
    }
    let hundredths = (10_000 * detected as u128) / tested as u128;
    let (whole, frac) = (hundredths / 100, hundredths % 100);
    match frac {
        0 => format!("{whole}"),
        f if f % 10 == 0 => format!("{whole}.{}", f / 10),
        f => format!("{whole}.{f:02}"),
    }
}
