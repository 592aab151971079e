//! Frames, chromaticity, log-domain conversion and forward-difference gradients.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::par;

pub type Rgb = [f64; 3];

/// Transfer exponent applied to 8-bit sources on ingest.
pub const DECODE_GAMMA: f64 = 2.2;
/// Pixels whose channel sum falls below this are flagged dark.
pub const DARK_FLOOR: f64 = 0.02;
/// Clamp applied before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-4;
/// Chromaticity assigned to dark pixels.
pub const NEUTRAL_CHROMA: [f64; 2] = [1.0 / 3.0, 1.0 / 3.0];

/// Linear-light RGB image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<Rgb>,
}

impl Frame {
    /// Builds a frame, clamping every channel into `[0, 1]` and mapping
    /// non-finite values to zero.
    pub fn new(width: usize, height: usize, data: Vec<Rgb>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimensions {
                expected: (width, height),
                actual: (data.len(), 1),
            });
        }
        let data = data
            .into_iter()
            .map(|p| p.map(|c| if c.is_finite() { c.clamp(0.0, 1.0) } else { 0.0 }))
            .collect();
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: Rgb) -> Self {
        Frame::new(width, height, vec![value; width * height]).expect("dimensions are consistent")
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Frame::new(width, height, data).expect("dimensions are consistent")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.data[y * self.width + x]
    }

    /// Rejects frames smaller than the 8x8 minimum the decomposition needs.
    pub fn ensure_min_size(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::FrameTooSmall {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    /// Copies the window `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Frame {
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Frame {
            width: w,
            height: h,
            data,
        }
    }
}

/// Intensity-normalized color plus the intensity it was normalized by.
#[derive(Debug, Clone)]
pub struct ChromaticityImage {
    pub width: usize,
    pub height: usize,
    /// `(r, g)` with `r = R / (R + G + B)` and `g = G / (R + G + B)`.
    pub chroma: Vec<[f64; 2]>,
    /// Channel sum `R + G + B`.
    pub intensity: Vec<f64>,
    pub dark: Vec<bool>,
}

impl ChromaticityImage {
    pub fn at(&self, x: usize, y: usize) -> [f64; 2] {
        self.chroma[y * self.width + x]
    }

    pub fn non_dark_count(&self) -> usize {
        self.dark.iter().filter(|d| !**d).count()
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> ChromaticityImage {
        let mut out = ChromaticityImage {
            width: w,
            height: h,
            chroma: Vec::with_capacity(w * h),
            intensity: Vec::with_capacity(w * h),
            dark: Vec::with_capacity(w * h),
        };
        for y in y0..y0 + h {
            let row = y * self.width + x0..y * self.width + x0 + w;
            out.chroma.extend_from_slice(&self.chroma[row.clone()]);
            out.intensity.extend_from_slice(&self.intensity[row.clone()]);
            out.dark.extend_from_slice(&self.dark[row]);
        }
        out
    }
}

/// Chromaticity of a single color; `None` when the color is dark.
pub fn chroma_of(rgb: Rgb) -> Option<[f64; 2]> {
    let sum = rgb[0] + rgb[1] + rgb[2];
    if sum < DARK_FLOOR {
        None
    } else {
        Some([rgb[0] / sum, rgb[1] / sum])
    }
}

pub fn chroma_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn chromaticity(frame: &Frame) -> ChromaticityImage {
    let per_pixel = par::map_indexed(frame.len(), |i| {
        let p = frame.data[i];
        let sum = p[0] + p[1] + p[2];
        match chroma_of(p) {
            Some(c) => (c, sum, false),
            None => (NEUTRAL_CHROMA, sum, true),
        }
    });
    let mut out = ChromaticityImage {
        width: frame.width,
        height: frame.height,
        chroma: Vec::with_capacity(frame.len()),
        intensity: Vec::with_capacity(frame.len()),
        dark: Vec::with_capacity(frame.len()),
    };
    for (c, s, d) in per_pixel {
        out.chroma.push(c);
        out.intensity.push(s);
        out.dark.push(d);
    }
    out
}

/// Element-wise natural log after clamping to [`LOG_FLOOR`].
pub fn log_rgb(rgb: Rgb) -> Rgb {
    rgb.map(|c| c.max(LOG_FLOOR).ln())
}

pub fn log_reflectance(reflectance: &Frame) -> Vec<Rgb> {
    par::map_indexed(reflectance.len(), |i| log_rgb(reflectance.data[i]))
}

/// Forward differences with zero difference across the right and bottom borders.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `dx[(y * width + x) * channels + c] = v(x + 1, y, c) - v(x, y, c)`.
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

/// Forward-difference gradient of a `channels`-interleaved image.
pub fn gradient(values: &[f64], width: usize, height: usize, channels: usize) -> GradientField {
    assert_eq!(values.len(), width * height * channels);
    let n = width * height;
    let mut dx = vec![0.0; n * channels];
    let mut dy = vec![0.0; n * channels];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            for c in 0..channels {
                let v = values[i * channels + c];
                if x + 1 < width {
                    dx[i * channels + c] = values[(i + 1) * channels + c] - v;
                }
                if y + 1 < height {
                    dy[i * channels + c] = values[(i + width) * channels + c] - v;
                }
            }
        }
    }
    GradientField {
        width,
        height,
        channels,
        dx,
        dy,
    }
}

pub fn frame_gradient(frame: &Frame) -> GradientField {
    let flat: Vec<f64> = frame.data.iter().flat_map(|p| p.iter().copied()).collect();
    gradient(&flat, frame.width, frame.height, 3)
}

// ---------------------------------------------------------------------------
// File formats

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Loads a PNG (de-gamma'd) or PFM (taken as linear) frame.
pub fn load_frame(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    match ext.as_deref() {
        Some("pfm") => {
            let (w, h, channels, values) = decode_pfm(&bytes).map_err(|r| format_err(path, r))?;
            let data = (0..w * h)
                .map(|i| {
                    if channels == 3 {
                        [values[3 * i], values[3 * i + 1], values[3 * i + 2]]
                    } else {
                        [values[i]; 3]
                    }
                })
                .collect();
            Frame::new(w, h, data)
        }
        Some("png") => decode_png(&bytes).map_err(|r| format_err(path, r)),
        _ => Err(format_err(path, "expected a .png or .pfm file")),
    }
}

/// Linear value of an 8-bit code.
pub fn decode_u8(code: u8) -> f64 {
    (code as f64 / 255.0).powf(DECODE_GAMMA)
}

fn decode_png(bytes: &[u8]) -> std::result::Result<Frame, String> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| e.to_string())?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        image::DynamicImage::ImageRgb16(_)
        | image::DynamicImage::ImageRgba16(_)
        | image::DynamicImage::ImageLuma16(_)
        | image::DynamicImage::ImageLumaA16(_) => img
            .to_rgb16()
            .pixels()
            .map(|p| p.0.map(|c| (c as f64 / 65535.0).powf(DECODE_GAMMA)))
            .collect(),
        _ => {
            let lut: Vec<f64> = (0..=255u8).map(decode_u8).collect();
            img.to_rgb8()
                .pixels()
                .map(|p| p.0.map(|c| lut[c as usize]))
                .collect()
        }
    };
    Frame::new(w, h, data).map_err(|e| e.to_string())
}

/// Parses a PFM byte stream into `(width, height, channels, top-down values)`.
pub fn decode_pfm(bytes: &[u8]) -> std::result::Result<(usize, usize, usize, Vec<f64>), String> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PFM header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let channels = match fields[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(format!("bad PFM magic {other:?}")),
    };
    let w: usize = fields[1].parse().map_err(|_| "bad PFM width")?;
    let h: usize = fields[2].parse().map_err(|_| "bad PFM height")?;
    let scale: f64 = fields[3].parse().map_err(|_| "bad PFM scale")?;
    let little = scale < 0.0;
    let count = w * h * channels;
    let raster = bytes.get(pos..pos + 4 * count).ok_or("truncated PFM raster")?;
    let mut values = vec![0.0; count];
    for row in 0..h {
        // PFM stores rows bottom-to-top
        let dst_row = h - 1 - row;
        for j in 0..w * channels {
            let k = (row * w * channels + j) * 4;
            let b = [raster[k], raster[k + 1], raster[k + 2], raster[k + 3]];
            let v = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            values[dst_row * w * channels + j] = v as f64;
        }
    }
    Ok((w, h, channels, values))
}

/// Encodes a little-endian PFM (`scale = -1.0`). `values` are top-down rows.
pub fn encode_pfm(width: usize, height: usize, channels: usize, values: &[f64]) -> Vec<u8> {
    assert!(channels == 1 || channels == 3);
    assert_eq!(values.len(), width * height * channels);
    let magic = if channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{magic}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(values.len() * 4);
    for row in (0..height).rev() {
        for v in &values[row * width * channels..(row + 1) * width * channels] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_pfm_rgb(path: &Path, width: usize, height: usize, data: &[Rgb]) -> Result<()> {
    let flat: Vec<f64> = data.iter().flat_map(|p| p.iter().copied()).collect();
    write_bytes(path, &encode_pfm(width, height, 3, &flat))
}

pub fn save_pfm_scalar(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    write_bytes(path, &encode_pfm(width, height, 1, data))
}

pub fn save_frame_pfm(path: &Path, frame: &Frame) -> Result<()> {
    save_pfm_rgb(path, frame.width, frame.height, &frame.data)
}

/// Gamma-encodes linear values (after multiplying by `scale`) into 8-bit sRGB-ish codes.
pub fn encode_preview(data: &[Rgb], scale: f64) -> Vec<u8> {
    data.iter()
        .flat_map(|p| {
            p.map(|c| {
                let v = (c * scale).clamp(0.0, 1.0).powf(1.0 / DECODE_GAMMA);
                (v * 255.0).round() as u8
            })
        })
        .collect()
}

pub fn png_bytes(width: usize, height: usize, data: &[Rgb], scale: f64) -> Result<Vec<u8>> {
    let raw = encode_preview(data, scale);
    let img = image::RgbImage::from_raw(width as u32, height as u32, raw).ok_or(
        Error::Dimensions {
            expected: (width, height),
            actual: (data.len(), 1),
        },
    )?;
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| format_err(Path::new("<memory>"), e.to_string()))?;
    Ok(out.into_inner())
}

pub fn save_png_preview(path: &Path, width: usize, height: usize, data: &[Rgb], scale: f64) -> Result<()> {
    write_bytes(path, &png_bytes(width, height, data, scale)?)
}

/// Saves a 16-bit single-channel PNG (used for cluster id maps).
pub fn save_png_u16(path: &Path, width: usize, height: usize, data: &[u16]) -> Result<()> {
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        width as u32,
        height as u32,
        data.to_vec(),
    )
    .ok_or(Error::Dimensions {
        expected: (width, height),
        actual: (data.len(), 1),
    })?;
    img.save(path)
        .map_err(|e| format_err(path, e.to_string()))
}

pub fn frame_file_name(index: usize, ext: &str) -> String {
    format!("frame_{:06}.{ext}", index)
}

/// Lists `frame_NNNNNN.{png,pfm}` files in `dir`, ordered by frame number.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut frames = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(stem) = name
            .strip_suffix(".png")
            .or_else(|| name.strip_suffix(".pfm"))
        else {
            continue;
        };
        if let Some(num) = stem.strip_prefix("frame_") {
            if let Ok(n) = num.parse::<usize>() {
                frames.push((n, path));
            }
        }
    }
    frames.sort();
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn write_png(dir: &Path, name: &str, value: u8) -> PathBuf {
        let path = dir.join(name);
        image::RgbImage::from_pixel(2, 2, image::Rgb([value; 3]))
            .save(&path)
            .unwrap();
        path
    }

    #[test]
    fn png_white_and_black() {
        let dir = tempfile::tempdir().unwrap();
        let white = load_frame(&write_png(dir.path(), "w.png", 255)).unwrap();
        assert!(white.pixels().iter().all(|p| *p == [1.0, 1.0, 1.0]));
        let black = load_frame(&write_png(dir.path(), "b.png", 0)).unwrap();
        assert!(black.pixels().iter().all(|p| *p == [0.0, 0.0, 0.0]));
    }

    #[test]
    fn png_mid_gray_is_degammad() {
        let dir = tempfile::tempdir().unwrap();
        let f = load_frame(&write_png(dir.path(), "g.png", 128)).unwrap();
        // (128/255)^2.2
        assert_relative_eq!(f.get(0, 0)[0], 0.219_519_718, epsilon = 1e-6);
    }

    #[test]
    fn unknown_extension_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bmp");
        fs::write(&p, b"nope").unwrap();
        assert!(matches!(load_frame(&p), Err(Error::Format { .. })));
        assert!(matches!(
            load_frame(&dir.path().join("missing.png")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn pfm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let f = Frame::from_fn(9, 8, |x, y| [x as f64 / 9.0, y as f64 / 8.0, 0.123_456]);
        let p = dir.path().join("f.pfm");
        save_frame_pfm(&p, &f).unwrap();
        let raw = fs::read(&p).unwrap();
        assert!(raw.starts_with(b"PF\n9 8\n-1.0\n"));
        let g = load_frame(&p).unwrap();
        for (a, b) in f.pixels().iter().zip(g.pixels()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn chromaticity_examples() {
        let f = Frame::new(
            3,
            1,
            vec![[0.6, 0.3, 0.1], [0.2, 0.2, 0.2], [0.0, 0.0, 0.0]],
        )
        .unwrap();
        let c = chromaticity(&f);
        assert_relative_eq!(c.chroma[0][0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(c.chroma[0][1], 0.3, epsilon = 1e-12);
        assert_relative_eq!(c.chroma[1][0], 1.0 / 3.0, epsilon = 1e-12);
        assert!(!c.dark[1]);
        assert!(c.dark[2]);
        assert_eq!(c.chroma[2], NEUTRAL_CHROMA);
    }

    #[test]
    fn log_of_unity_and_floor() {
        assert_eq!(log_rgb([1.0; 3]), [0.0; 3]);
        assert_relative_eq!(log_rgb([0.0; 3])[0], (1e-4f64).ln());
        for x in [1e-4, 0.01, 0.37, 1.0] {
            let back = log_rgb([x; 3])[0].exp();
            assert!((back - x).abs() / x < 1e-6);
        }
    }

    #[test]
    fn gradient_examples() {
        let (w, h) = (8, 6);
        let constant = vec![0.7; w * h];
        let g = gradient(&constant, w, h, 1);
        assert!(g.dx.iter().chain(&g.dy).all(|v| *v == 0.0));

        let ramp: Vec<f64> = (0..w * h).map(|i| (i % w) as f64 / w as f64).collect();
        let g = gradient(&ramp, w, h, 1);
        for y in 0..h {
            for x in 0..w - 1 {
                assert_relative_eq!(g.dx[y * w + x], 1.0 / w as f64, epsilon = 1e-12);
            }
        }
        assert!(g.dy.iter().all(|v| *v == 0.0));

        let mut spike = vec![0.0; w * h];
        spike[3 * w + 4] = 1.0;
        let g = gradient(&spike, w, h, 1);
        let nonzero: Vec<usize> = (0..w * h)
            .filter(|&i| g.dx[i] != 0.0 || g.dy[i] != 0.0)
            .collect();
        assert_eq!(nonzero, vec![2 * w + 4, 3 * w + 3, 3 * w + 4]);
    }
}
