//! `KPDB 1` text model files.
//!
//! ```text
//! KPDB 1 <count>
//! x y scale orientation d0 d1 ... d127
//! ```
//! All values are written with 6 significant digits.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::{Descriptor, Feature, Keypoint, DESCRIPTOR_LEN};
use crate::matcher::{ModelEntry, ObjectModel};

const MAGIC: &str = "KPDB";
const VERSION: &str = "1";
const FIELDS: usize = 4 + DESCRIPTOR_LEN;

/// `%g`-style formatting with 6 significant digits.
pub fn format_sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".into() } else { format!("{v}") };
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..6).contains(&exp) {
        let s = format!("{v:.5e}");
        let (mantissa, e) = s.split_once('e').expect("scientific notation");
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{mantissa}e{e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn model_to_string(model: &ObjectModel) -> String {
    let mut out = format!("{MAGIC} {VERSION} {}\n", model.entries.len());
    for e in &model.entries {
        let kp = &e.feature.keypoint;
        let fields = [kp.x, kp.y, kp.scale, kp.orientation]
            .into_iter()
            .chain(e.feature.descriptor.0.iter().copied())
            .map(format_sig6)
            .collect::<Vec<_>>();
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

pub fn parse_model(text: &str, name: &str) -> Result<ObjectModel> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::format("empty model file"))?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 3 || tokens[0] != MAGIC {
        return Err(Error::format(format!("bad model header {header:?}")));
    }
    if tokens[1] != VERSION {
        return Err(Error::format(format!("unsupported model version {}", tokens[1])));
    }
    let count: usize = tokens[2]
        .parse()
        .map_err(|_| Error::format(format!("bad entry count {:?}", tokens[2])))?;

    let mut entries = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        if i >= count {
            return Err(Error::format(format!("model declares {count} entries but has more lines")));
        }
        let values = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(format!("entry {i}: {e}")))?;
        if values.len() != FIELDS {
            return Err(Error::format(format!(
                "entry {i}: expected {FIELDS} fields, found {}",
                values.len()
            )));
        }
        let mut d = [0.0; DESCRIPTOR_LEN];
        d.copy_from_slice(&values[4..]);
        let (x, y) = (values[0], values[1]);
        entries.push(ModelEntry {
            feature: Feature {
                keypoint: Keypoint {
                    x,
                    y,
                    scale: values[2],
                    orientation: values[3],
                    octave: 0,
                    plane: 0,
                    sample_x: x.max(0.0).round() as usize,
                    sample_y: y.max(0.0).round() as usize,
                    response: 0.0,
                },
                descriptor: Descriptor(d),
            },
            source: 0,
        });
    }
    if entries.len() != count {
        return Err(Error::format(format!(
            "truncated model: declared {count} entries, found {}",
            entries.len()
        )));
    }
    Ok(ObjectModel {
        name: name.to_string(),
        entries,
        source_count: 0,
    })
}

pub fn save_model(model: &ObjectModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model_to_string(model))?;
    Ok(())
}

/// Loads a model; its name is the file stem. Training-image counts are not stored.
pub fn load_model(path: impl AsRef<Path>) -> Result<ObjectModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model");
    parse_model(&text, name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64, n: usize) -> ObjectModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..n)
            .map(|_| {
                let x = rng.random_range(0.0..2000.0);
                let y = rng.random_range(0.0..2000.0);
                ModelEntry {
                    feature: Feature {
                        keypoint: Keypoint {
                            x,
                            y,
                            scale: rng.random_range(1.0..40.0),
                            orientation: rng.random_range(0.0..std::f64::consts::TAU),
                            octave: 0,
                            plane: 0,
                            sample_x: x.round() as usize,
                            sample_y: y.round() as usize,
                            response: 0.0,
                        },
                        descriptor: Descriptor(std::array::from_fn(|_| rng.random_range(0.0..0.3))),
                    },
                    source: 0,
                }
            })
            .collect();
        ObjectModel {
            name: "m".into(),
            entries,
            source_count: 0,
        }
    }

    #[test]
    fn empty_model_header_only() {
        let m = ObjectModel {
            name: "e".into(),
            entries: vec![],
            source_count: 0,
        };
        assert_eq!(model_to_string(&m), "KPDB 1 0\n");
        assert!(parse_model("KPDB 1 0\n", "e").unwrap().entries.is_empty());
    }

    #[test]
    fn single_entry_has_132_fields() {
        let text = model_to_string(&random_model(1, 1));
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1].split_whitespace().count(), 132);
    }

    #[test]
    fn random_round_trip() {
        let m = random_model(42, 25);
        let back = parse_model(&model_to_string(&m), "m").unwrap();
        for (a, b) in m.entries.iter().zip(&back.entries) {
            let (ka, kb) = (&a.feature.keypoint, &b.feature.keypoint);
            for (u, v) in [(ka.x, kb.x), (ka.y, kb.y), (ka.scale, kb.scale), (ka.orientation, kb.orientation)] {
                assert!((u - v).abs() <= 1e-5 * u.abs().max(1.0));
            }
            for (u, v) in a.feature.descriptor.0.iter().zip(&b.feature.descriptor.0) {
                assert!((u - v).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn malformed_files() {
        assert!(matches!(parse_model("KPDX 1 0\n", "m"), Err(Error::Format(_))));
        assert!(matches!(parse_model("KPDB 2 0\n", "m"), Err(Error::Format(_))));
        let text = model_to_string(&random_model(3, 3));
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_model(&truncated, "m"), Err(Error::Format(_))));
        let short_line = "KPDB 1 1\n1 2 3\n";
        assert!(matches!(parse_model(short_line, "m"), Err(Error::Format(_))));
    }

    #[test]
    fn sig6_examples() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(123.456789), "123.457");
        assert_eq!(format_sig6(0.000123456789), "0.000123457");
        assert_eq!(format_sig6(1234567.0), "1.23457e6");
        assert_eq!(format_sig6(-2.5e-9), "-2.5e-9");
    }

    proptest! {
        #[test]
        fn sig6_relative_error(v in -1e9f64..1e9) {
            let back: f64 = format_sig6(v).parse().unwrap();
            prop_assert!((back - v).abs() <= 5e-6 * v.abs() + 1e-300);
        }
    }
}
