//! Image containers, PNG/PNM I/O, grayscale conversion, separable Gaussian
//! blur and central-difference gradients.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Single-channel image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

/// Three-channel 8-bit image, row-major, interleaved RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

/// A decoded image, either grayscale or RGB.
#[derive(Debug, Clone, PartialEq)]
pub enum RasterImage {
    Gray(GrayImage),
    Rgb(RgbImage),
}

/// Per-pixel gradient magnitude and orientation in `[0, 2π)`.
#[derive(Debug, Clone)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f64>,
    pub orientation: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("image dimensions must be at least 1x1"));
        }
        if data.len() != width * height {
            return Err(Error::param(format!(
                "gray buffer holds {} values, expected {}",
                data.len(),
                width * height
            )));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Pixel access with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.data[cy * self.width + cx]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Clockwise quarter turn: source pixel `(x, y)` lands at `(height - 1 - y, x)`.
    pub fn rotate90(&self) -> GrayImage {
        let (w, h) = (self.height, self.width);
        GrayImage::from_fn(w, h, |x, y| self.get(y, self.height - 1 - x))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> GrayImage {
        assert!(factor >= 1);
        GrayImage::from_fn(self.width * factor, self.height * factor, |x, y| {
            self.get(x / factor, y / factor)
        })
    }

    /// Keeps every even-indexed pixel; output dimensions are `floor(w/2) x floor(h/2)`.
    pub fn decimate2(&self) -> GrayImage {
        let (w, h) = ((self.width / 2).max(1), (self.height / 2).max(1));
        GrayImage::from_fn(w, h, |x, y| self.get(2 * x, 2 * y))
    }

    pub fn sub(&self, other: &GrayImage) -> GrayImage {
        assert_eq!((self.width, self.height), (other.width, other.height));
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::param("image dimensions must be at least 1x1"));
        }
        if data.len() != width * height * 3 {
            return Err(Error::param(format!(
                "rgb buffer holds {} bytes, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        RgbImage { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        RgbImage { width, height, data }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, color: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&color);
    }

    /// Iterates pixels in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }
}

impl RasterImage {
    pub fn width(&self) -> usize {
        match self {
            RasterImage::Gray(g) => g.width,
            RasterImage::Rgb(c) => c.width,
        }
    }

    pub fn height(&self) -> usize {
        match self {
            RasterImage::Gray(g) => g.height,
            RasterImage::Rgb(c) => c.height,
        }
    }

    pub fn channels(&self) -> usize {
        match self {
            RasterImage::Gray(_) => 1,
            RasterImage::Rgb(_) => 3,
        }
    }

    /// Grayscale view; RGB images are converted with Rec. 601 luma.
    pub fn to_gray(&self) -> GrayImage {
        match self {
            RasterImage::Gray(g) => g.clone(),
            RasterImage::Rgb(c) => rgb_to_gray(c),
        }
    }

    /// RGB view; gray images are replicated into three channels.
    pub fn to_rgb(&self) -> RgbImage {
        match self {
            RasterImage::Rgb(c) => c.clone(),
            RasterImage::Gray(g) => RgbImage {
                width: g.width,
                height: g.height,
                data: g
                    .data
                    .iter()
                    .flat_map(|&v| {
                        let b = unit_to_u8(v);
                        [b, b, b]
                    })
                    .collect(),
            },
        }
    }
}

/// Rec. 601 luma on 8-bit RGB, scaled to `[0, 1]`.
#[inline]
pub fn luma(rgb: [u8; 3]) -> f64 {
    (0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64) / 255.0
}

fn rgb_to_gray(img: &RgbImage) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        data: img.pixels().map(luma).collect(),
    }
}

/// Converts to a single intensity channel. Gray input passes through unchanged.
pub fn to_grayscale(img: &RasterImage) -> RasterImage {
    match img {
        RasterImage::Gray(_) => img.clone(),
        RasterImage::Rgb(c) => RasterImage::Gray(rgb_to_gray(c)),
    }
}

#[inline]
fn unit_to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn load_image(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)?
        .with_guessed_format()
        .map_err(Error::Io)?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => {
            return Err(Error::format(format!(
                "{}: unsupported image format {other:?}",
                path.display()
            )))
        }
        None => {
            return Err(Error::format(format!(
                "{}: unrecognised image format",
                path.display()
            )))
        }
    }
    let decoded = reader
        .decode()
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    Ok(from_dynamic(decoded))
}

fn from_dynamic(img: DynamicImage) -> RasterImage {
    let (width, height) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => RasterImage::Gray(GrayImage {
            width,
            height,
            data: buf.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        }),
        DynamicImage::ImageLuma16(buf) => RasterImage::Gray(GrayImage {
            width,
            height,
            data: buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
        }),
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            let buf = img.to_luma16();
            RasterImage::Gray(GrayImage {
                width,
                height,
                data: buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
            })
        }
        DynamicImage::ImageRgb8(buf) => RasterImage::Rgb(RgbImage {
            width,
            height,
            data: buf.into_raw(),
        }),
        other => {
            // 16-bit and alpha variants: rescale to 8 bits, drop alpha.
            let buf = other.to_rgb16();
            RasterImage::Rgb(RgbImage {
                width,
                height,
                data: buf
                    .into_raw()
                    .into_iter()
                    .map(|v| ((v as u32 * 255 + 32767) / 65535) as u8)
                    .collect(),
            })
        }
    }
}

fn to_dynamic(img: &RasterImage) -> DynamicImage {
    match img {
        RasterImage::Gray(g) => {
            let raw: Vec<u8> = g.data.iter().map(|&v| unit_to_u8(v)).collect();
            let buf = ImageBuffer::<Luma<u8>, _>::from_raw(g.width as u32, g.height as u32, raw)
                .expect("buffer length matches dimensions");
            DynamicImage::ImageLuma8(buf)
        }
        RasterImage::Rgb(c) => {
            let buf =
                ImageBuffer::<Rgb<u8>, _>::from_raw(c.width as u32, c.height as u32, c.data.clone())
                    .expect("buffer length matches dimensions");
            DynamicImage::ImageRgb8(buf)
        }
    }
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "pgm" | "ppm" | "pnm" => Ok(ImageFormat::Pnm),
        _ => Err(Error::format(format!(
            "{}: cannot infer output format (expected .png, .pgm, .ppm)",
            path.display()
        ))),
    }
}

fn write_dynamic(img: &DynamicImage, path: &Path) -> Result<()> {
    let format = format_for(path)?;
    let mut out = BufWriter::new(File::create(path)?);
    let written = match format {
        // the encoder defaults to PAM; pin classic binary P5/P6 headers
        ImageFormat::Pnm => {
            let subtype = if img.color().has_color() {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            };
            img.write_with_encoder(PnmEncoder::new(&mut out).with_subtype(subtype))
        }
        _ => img.write_to(&mut out, format),
    };
    written.map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
    out.flush()?;
    Ok(())
}

/// Writes PNG or binary PNM (P5/P6), chosen from the file extension.
pub fn save_image(img: &RasterImage, path: impl AsRef<Path>) -> Result<()> {
    write_dynamic(&to_dynamic(img), path.as_ref())
}

/// Writes a 16-bit grayscale image (binary PGM or PNG).
pub fn save_gray16(width: usize, height: usize, values: &[u16], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if values.len() != width * height {
        return Err(Error::param("16-bit buffer length does not match dimensions"));
    }
    match format_for(path)? {
        // 16-bit PNM is not supported by the encoder; samples are big-endian
        ImageFormat::Pnm => {
            let mut out = BufWriter::new(File::create(path)?);
            write!(out, "P5\n{width} {height}\n65535\n")?;
            for v in values {
                out.write_all(&v.to_be_bytes())?;
            }
            out.flush()?;
            Ok(())
        }
        _ => {
            let buf = ImageBuffer::<Luma<u16>, _>::from_raw(width as u32, height as u32, values.to_vec())
                .expect("buffer length checked");
            write_dynamic(&DynamicImage::ImageLuma16(buf), path)
        }
    }
}

/// Discrete Gaussian of radius `ceil(4σ)`, renormalized to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("gaussian sigma must be > 0, got {sigma}")));
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let denom = 2.0 * sigma * sigma;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / denom).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= sum);
    Ok(kernel)
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = (img.width, img.height);

    let mut horizontal = vec![0.0; w * h];
    horizontal
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(y, row)| {
            let src = &img.data[y * w..(y + 1) * w];
            for (x, out) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let sx = (x as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += kv * src[sx];
                }
                *out = acc;
            }
        });

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (k, &kv) in kernel.iter().enumerate() {
            let sy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
            let src = &horizontal[sy * w..(sy + 1) * w];
            for (o, &s) in row.iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    });

    Ok(GrayImage {
        width: w,
        height: h,
        data: out,
    })
}

/// Central-difference gradient magnitude and orientation with replicated borders.
pub fn gradients(img: &GrayImage) -> Result<GradientField> {
    let (w, h) = (img.width, img.height);
    if w < 3 || h < 3 {
        return Err(Error::param(format!(
            "gradients need at least a 3x3 image, got {w}x{h}"
        )));
    }
    let mut magnitude = vec![0.0; w * h];
    let mut orientation = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xi, yi) = (x as isize, y as isize);
            let dx = img.get_clamped(xi + 1, yi) - img.get_clamped(xi - 1, yi);
            let dy = img.get_clamped(xi, yi + 1) - img.get_clamped(xi, yi - 1);
            let i = y * w + x;
            magnitude[i] = (dx * dx + dy * dy).sqrt();
            orientation[i] = wrap_angle(dy.atan2(dx));
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        magnitude,
        orientation,
    })
}

/// Maps any angle into `[0, 2π)`.
#[inline]
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    if t >= TAU {
        0.0
    } else {
        t
    }
}

impl GradientField {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.magnitude[i], self.orientation[i])
    }
}
