//! Gaussian and difference-of-Gaussian pyramids and 26-neighbour extrema.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{gaussian_blur, GrayImage};

/// Blur already present in an input image, in pixels.
pub const ASSUMED_INPUT_BLUR: f64 = 0.5;

/// Smallest octave side length accepted by [`build_gaussian_pyramid`].
pub const MIN_OCTAVE_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidConfig {
    pub num_octaves: usize,
    /// Intervals per octave (`s`); each octave holds `s + 3` Gaussian planes.
    pub scales_per_octave: usize,
    pub base_sigma: f64,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            num_octaves: 4,
            scales_per_octave: 3,
            base_sigma: 1.6,
        }
    }
}

impl PyramidConfig {
    /// Constant factor between adjacent scales, `2^(1/s)`.
    pub fn k(&self) -> f64 {
        2f64.powf(1.0 / self.scales_per_octave as f64)
    }

    pub fn planes_per_octave(&self) -> usize {
        self.scales_per_octave + 3
    }

    /// Blur of Gaussian plane `i` relative to its octave's sampling grid.
    pub fn plane_sigma(&self, i: f64) -> f64 {
        self.base_sigma * self.k().powf(i)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_octaves < 1 {
            return Err(Error::param("num_octaves must be >= 1"));
        }
        if self.scales_per_octave < 1 {
            return Err(Error::param("scales_per_octave must be >= 1"));
        }
        if !(self.base_sigma > ASSUMED_INPUT_BLUR) {
            return Err(Error::param(format!(
                "base_sigma must exceed the assumed input blur {ASSUMED_INPUT_BLUR}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GaussianPyramid {
    pub config: PyramidConfig,
    pub octaves: Vec<Vec<GrayImage>>,
}

#[derive(Debug, Clone)]
pub struct DogPyramid {
    pub config: PyramidConfig,
    pub octaves: Vec<Vec<GrayImage>>,
}

/// A sample that is strictly above or strictly below all 26 neighbours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawExtremum {
    pub octave: usize,
    pub plane: usize,
    pub x: usize,
    pub y: usize,
    pub value: f64,
}

pub fn build_gaussian_pyramid(img: &GrayImage, cfg: &PyramidConfig) -> Result<GaussianPyramid> {
    cfg.validate()?;
    let min_side = img.width().min(img.height());
    let coarsest = min_side >> (cfg.num_octaves - 1);
    if coarsest < MIN_OCTAVE_SIDE {
        return Err(Error::param(format!(
            "{}x{} image is too small for {} octaves (coarsest side {coarsest} < {MIN_OCTAVE_SIDE})",
            img.width(),
            img.height(),
            cfg.num_octaves
        )));
    }

    let n_planes = cfg.planes_per_octave();
    // incremental blur taking plane i-1 to plane i
    let increments: Vec<f64> = (1..n_planes)
        .map(|i| {
            let prev = cfg.plane_sigma((i - 1) as f64);
            let next = cfg.plane_sigma(i as f64);
            (next * next - prev * prev).sqrt()
        })
        .collect();

    let initial = (cfg.base_sigma.powi(2) - ASSUMED_INPUT_BLUR.powi(2)).sqrt();
    let mut base = gaussian_blur(img, initial)?;
    let mut octaves = Vec::with_capacity(cfg.num_octaves);
    for o in 0..cfg.num_octaves {
        let mut planes = Vec::with_capacity(n_planes);
        planes.push(base);
        for &inc in &increments {
            let next = gaussian_blur(planes.last().expect("non-empty"), inc)?;
            planes.push(next);
        }
        if o + 1 < cfg.num_octaves {
            // plane s carries twice the base blur
            base = planes[cfg.scales_per_octave].decimate2();
        } else {
            base = GrayImage::filled(1, 1, 0.0);
        }
        octaves.push(planes);
    }
    Ok(GaussianPyramid {
        config: *cfg,
        octaves,
    })
}

pub fn build_dog_pyramid(gp: &GaussianPyramid) -> DogPyramid {
    let octaves = gp
        .octaves
        .iter()
        .map(|planes| planes.windows(2).map(|w| w[1].sub(&w[0])).collect())
        .collect();
    DogPyramid {
        config: gp.config,
        octaves,
    }
}

/// Strict 26-neighbour comparison at `(x, y)` on DoG plane `plane` of `stack`.
#[inline]
pub(crate) fn is_strict_extremum(stack: &[GrayImage], plane: usize, x: usize, y: usize) -> bool {
    let v = stack[plane].get(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for p in &stack[plane - 1..=plane + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if std::ptr::eq(p, &stack[plane]) && xx == x && yy == y {
                    continue;
                }
                let n = p.get(xx, yy);
                is_max &= v > n;
                is_min &= v < n;
                if !is_max && !is_min {
                    return false;
                }
            }
        }
    }
    is_max || is_min
}

/// Scans the interior of every DoG plane that has a plane above and below it.
pub fn find_extrema(dp: &DogPyramid) -> Vec<RawExtremum> {
    let mut out = Vec::new();
    for (o, stack) in dp.octaves.iter().enumerate() {
        if stack.len() < 3 {
            continue;
        }
        let (w, h) = (stack[0].width(), stack[0].height());
        if w < 3 || h < 3 {
            continue;
        }
        let found: Vec<Vec<RawExtremum>> = (1..stack.len() - 1)
            .into_par_iter()
            .map(|plane| {
                let mut local = Vec::new();
                for y in 1..h - 1 {
                    for x in 1..w - 1 {
                        if is_strict_extremum(stack, plane, x, y) {
                            local.push(RawExtremum {
                                octave: o,
                                plane,
                                x,
                                y,
                                value: stack[plane].get(x, y),
                            });
                        }
                    }
                }
                local
            })
            .collect();
        out.extend(found.into_iter().flatten());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dog_from_stack(stack: Vec<GrayImage>) -> DogPyramid {
        DogPyramid {
            config: PyramidConfig::default(),
            octaves: vec![stack],
        }
    }

    fn brute_force(dp: &DogPyramid) -> Vec<(usize, usize, usize, usize)> {
        let mut out = Vec::new();
        for (o, stack) in dp.octaves.iter().enumerate() {
            let (w, h) = (stack[0].width(), stack[0].height());
            for p in 1..stack.len() - 1 {
                for y in 1..h - 1 {
                    for x in 1..w - 1 {
                        let v = stack[p].get(x, y);
                        let mut greater = 0;
                        let mut less = 0;
                        for dp_ in [-1i32, 0, 1] {
                            for dy in [-1i32, 0, 1] {
                                for dx in [-1i32, 0, 1] {
                                    if dp_ == 0 && dy == 0 && dx == 0 {
                                        continue;
                                    }
                                    let n = stack[(p as i32 + dp_) as usize]
                                        .get((x as i32 + dx) as usize, (y as i32 + dy) as usize);
                                    if v > n {
                                        greater += 1;
                                    }
                                    if v < n {
                                        less += 1;
                                    }
                                }
                            }
                        }
                        if greater == 26 || less == 26 {
                            out.push((o, p, x, y));
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn blur_schedule_matches_closed_form() {
        let cfg = PyramidConfig::default();
        let expected = [1.600, 2.016, 2.540, 3.200, 4.032, 5.080];
        for (i, e) in expected.iter().enumerate() {
            assert!((cfg.plane_sigma(i as f64) - e).abs() < 5e-4);
        }
        assert_eq!(cfg.planes_per_octave(), 6);
    }

    #[test]
    fn octave_dimensions_halve() {
        let img = GrayImage::filled(64, 64, 0.3);
        let gp = build_gaussian_pyramid(&img, &PyramidConfig::default()).unwrap();
        let dims: Vec<usize> = gp.octaves.iter().map(|o| o[0].width()).collect();
        assert_eq!(dims, vec![64, 32, 16, 8]);
        for octave in &gp.octaves {
            assert_eq!(octave.len(), 6);
            for plane in octave {
                assert!(plane.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
            }
        }
        let dp = build_dog_pyramid(&gp);
        for octave in &dp.octaves {
            assert_eq!(octave.len(), 5);
            assert!(octave.iter().all(|p| p.data().iter().all(|&v| v.abs() < 1e-12)));
        }
        assert!(find_extrema(&dp).is_empty());
    }

    #[test]
    fn odd_dimensions_floor() {
        let img = GrayImage::filled(67, 45, 0.0);
        let cfg = PyramidConfig {
            num_octaves: 3,
            ..Default::default()
        };
        let gp = build_gaussian_pyramid(&img, &cfg).unwrap();
        let dims: Vec<(usize, usize)> = gp.octaves.iter().map(|o| (o[0].width(), o[0].height())).collect();
        assert_eq!(dims, vec![(67, 45), (33, 22), (16, 11)]);
    }

    #[test]
    fn too_small_for_octaves() {
        let img = GrayImage::filled(40, 40, 0.0);
        assert!(matches!(
            build_gaussian_pyramid(&img, &PyramidConfig::default()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn dog_of_offset_planes_is_constant() {
        let p = GrayImage::from_fn(9, 9, |x, y| (x * y) as f64 / 81.0);
        let q = p.map(|v| v + 0.25);
        let gp = GaussianPyramid {
            config: PyramidConfig::default(),
            octaves: vec![vec![p, q]],
        };
        let dp = build_dog_pyramid(&gp);
        assert_eq!(dp.octaves[0].len(), 1);
        assert!(dp.octaves[0][0].data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn single_spike_is_unique_maximum() {
        let mut stack: Vec<GrayImage> = (0..5).map(|_| GrayImage::filled(12, 12, 0.0)).collect();
        stack[2].set(5, 7, 1.0);
        let found = find_extrema(&dog_from_stack(stack));
        assert_eq!(found.len(), 1);
        assert_eq!((found[0].plane, found[0].x, found[0].y), (2, 5, 7));
        assert_eq!(found[0].value, 1.0);
    }

    #[test]
    fn border_pixels_are_never_candidates() {
        let mut stack: Vec<GrayImage> = (0..3).map(|_| GrayImage::filled(6, 6, 0.0)).collect();
        stack[1].set(0, 3, 1.0);
        stack[1].set(5, 5, -1.0);
        assert!(find_extrema(&dog_from_stack(stack)).is_empty());
    }

    #[test]
    fn random_stacks_match_brute_force() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let stack: Vec<GrayImage> = (0..5)
                .map(|_| GrayImage::from_fn(32, 32, |_, _| rng.random::<f64>()))
                .collect();
            let dp = dog_from_stack(stack);
            let got: Vec<_> = find_extrema(&dp)
                .into_iter()
                .map(|e| (e.octave, e.plane, e.x, e.y))
                .collect();
            assert_eq!(got, brute_force(&dp));
        }
    }

    #[test]
    fn extrema_count_invariant_to_global_offset() {
        let img = GrayImage::from_fn(64, 64, |x, y| {
            0.4 + 0.2 * ((x as f64 * 0.4).sin() * (y as f64 * 0.3).cos())
        });
        let cfg = PyramidConfig::default();
        let count = |im: &GrayImage| {
            let dp = build_dog_pyramid(&build_gaussian_pyramid(im, &cfg).unwrap());
            find_extrema(&dp)
                .iter()
                .filter(|e| e.value.abs() > 1e-6)
                .count()
        };
        assert_eq!(count(&img), count(&img.map(|v| v + 0.3)));
    }
}
