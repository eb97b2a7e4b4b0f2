//! 8-bit images, PPM/PNG I/O and the bilinear resampler shared by the encoder
//! and the low-resolution transform.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColorSpace {
    #[default]
    Srgb,
}

/// Row-major, channel-interleaved 8-bit image with 1 or 3 channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
    colorspace: ColorSpace,
}

/// ITU-R BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!("empty image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Input(format!("unsupported channel count {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Input(format!(
                "pixel buffer holds {} samples, expected {width}x{height}x{channels}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, channels, pixels, colorspace: ColorSpace::Srgb })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an RGB image from a per-pixel function of `(x, y)`.
    pub fn from_fn_rgb(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, 3, pixels)
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
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    #[inline]
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    /// Number of samples, `H·W·C`.
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn same_dimensions(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// BT.601 luma plane in `[0, 255]` (the samples themselves for 1 channel).
    pub fn luma(&self) -> Vec<f64> {
        match self.channels {
            1 => self.pixels.iter().map(|&p| f64::from(p)).collect(),
            _ => self
                .pixels
                .chunks_exact(3)
                .map(|p| {
                    LUMA_WEIGHTS[0] * f64::from(p[0])
                        + LUMA_WEIGHTS[1] * f64::from(p[1])
                        + LUMA_WEIGHTS[2] * f64::from(p[2])
                })
                .collect(),
        }
    }

    /// Replicates a single channel to RGB; RGB images are returned as is.
    pub fn to_rgb(&self) -> Image {
        if self.channels == 3 {
            return self.clone();
        }
        let pixels = self.pixels.iter().flat_map(|&p| [p, p, p]).collect();
        Image { width: self.width, height: self.height, channels: 3, pixels, colorspace: self.colorspace }
    }
}

/// Bilinear resampling of an interleaved `f32` plane with half-pixel centers
/// (`align_corners = false`) and edge clamping.
pub fn resize_bilinear(
    src: &[f32],
    width: usize,
    height: usize,
    channels: usize,
    new_width: usize,
    new_height: usize,
) -> Vec<f32> {
    debug_assert_eq!(src.len(), width * height * channels);
    let taps = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f32)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (pos.floor() as usize).min(in_len - 1);
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, (pos - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = taps(new_width, width);
    let ys = taps(new_height, height);
    let mut out = vec![0.0f32; new_width * new_height * channels];
    for (oy, &(y0, y1, wy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, wx)) in xs.iter().enumerate() {
            for c in 0..channels {
                let at = |x: usize, y: usize| src[(y * width + x) * channels + c];
                let top = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * wx;
                let bottom = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * wx;
                out[(oy * new_width + ox) * channels + c] = top + (bottom - top) * wy;
            }
        }
    }
    out
}

/// Loads a binary PPM/PGM (`P6`/`P5`, maxval 255) or a PNG. PNGs are decoded to
/// 8-bit RGB; 16-bit PNGs are rejected.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P6") || bytes.starts_with(b"P5") {
        decode_pnm(&bytes).map_err(|reason| Error::CorruptImage { path: path.to_path_buf(), reason })
    } else if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(&bytes, path)
    } else {
        Err(Error::UnsupportedFormat(format!("{}: expected PNG or binary PPM/PGM", path.display())))
    }
}

/// Saves as PPM/PGM (`.ppm`, `.pgm`, `.pnm`) or PNG (`.png`) by extension.
pub fn save_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).unwrap_or_default();
    let bytes = match ext.as_str() {
        "ppm" | "pgm" | "pnm" => encode_pnm(img),
        "png" => encode_png(img)?,
        other => return Err(Error::UnsupportedFormat(format!("cannot save `.{other}`; use .ppm or .png"))),
    };
    fs::write(path, bytes)?;
    Ok(())
}

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

fn decode_pnm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let channels = if bytes.starts_with(b"P6") { 3 } else { 1 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("header ends early".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format!("expected a number at byte {start}"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|e| format!("bad header number: {e}"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after header".into());
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported (only 255)"));
    }
    let expected = width.checked_mul(height).and_then(|n| n.checked_mul(channels)).ok_or("dimensions overflow")?;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(format!("truncated pixel data: {} of {expected} bytes", data.len()));
    }
    Image::new(width, height, channels, data[..expected].to_vec()).map_err(|e| e.to_string())
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    use image::ImageDecoder;
    let corrupt = |reason: String| Error::CorruptImage { path: path.to_path_buf(), reason };
    let decoder = image::codecs::png::PngDecoder::new(Cursor::new(bytes)).map_err(|e| corrupt(e.to_string()))?;
    let color = decoder.color_type();
    if color.bytes_per_pixel() / color.channel_count() != 1 {
        return Err(Error::UnsupportedDepth(format!("{}: {color:?} has more than 8 bits per sample", path.display())));
    }
    let img = image::DynamicImage::from_decoder(decoder).map_err(|e| corrupt(e.to_string()))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Image::new(w as usize, h as usize, 3, rgb.into_raw())
}

fn encode_png(img: &Image) -> Result<Vec<u8>> {
    use image::ImageEncoder;
    let mut out = Vec::new();
    let color = if img.channels == 3 { image::ExtendedColorType::Rgb8 } else { image::ExtendedColorType::L8 };
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&img.pixels, img.width as u32, img.height as u32, color)
        .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(out)
}

/// Sorted `.png`/`.ppm`/`.pgm`/`.pnm` files directly inside `dir`.
pub fn list_dataset(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pgm" | "pnm"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}
