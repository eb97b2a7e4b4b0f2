//! PSNR, SSIM and MS-SSIM.
//!
//! SSIM follows the usual reference procedure: BT.601 luma, an 11×11 Gaussian
//! window with σ = 1.5 applied without padding, `c1 = (0.01·255)²`,
//! `c2 = (0.03·255)²`, `c3 = c2/2` and unit exponents, averaged over the map.
//! MS-SSIM uses five scales separated by 2×2 average pooling. It takes the
//! contrast-structure mean at every scale, adds luminance at the coarsest
//! scale only, and weights the scales by
//! `[0.0448, 0.2856, 0.3001, 0.2363, 0.1333]`. Negative per-scale means are
//! clamped to zero before exponentiation; the single-scale SSIM is clamped
//! the same way.

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const MAX_PIXEL: f64 = 255.0;
pub const WINDOW_SIZE: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// Smallest side MS-SSIM accepts: the window must still fit after four halvings.
pub const MS_SSIM_MIN_SIZE: usize = WINDOW_SIZE << (MS_SSIM_WEIGHTS.len() - 1);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalScores {
    /// `f64::INFINITY` for identical images.
    pub psnr_db: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub ms_ssim_db: f64,
}

pub fn classical_scores(a: &Image, b: &Image) -> Result<ClassicalScores> {
    let ms = ms_ssim(a, b)?;
    Ok(ClassicalScores { psnr_db: psnr(a, b)?, ssim: ssim(a, b)?, ms_ssim: ms, ms_ssim_db: ms_ssim_db(ms)? })
}

fn check_dims(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if a.same_dimensions(b) {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            left: vec![a.height(), a.width(), a.channels()],
            right: vec![b.height(), b.width(), b.channels()],
        })
    }
}

/// `10·log10(255² / MSE)` over every sample; `+∞` when the images are equal.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_dims("psnr", a, b)?;
    let sse: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    let mse = sse / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (MAX_PIXEL * MAX_PIXEL / mse).log10())
}

/// Single-channel `f64` plane.
#[derive(Debug, Clone)]
struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    fn luma(img: &Image) -> Self {
        Self { width: img.width(), height: img.height(), data: img.luma() }
    }

    fn zip_map(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    /// 2×2 average pooling with stride 2; a trailing odd row or column is dropped.
    fn downsample(&self) -> Plane {
        let (w, h) = (self.width / 2, self.height / 2);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let at = |dx: usize, dy: usize| self.data[(2 * y + dy) * self.width + 2 * x + dx];
                data.push((at(0, 0) + at(1, 0) + at(0, 1) + at(1, 1)) / 4.0);
            }
        }
        Plane { width: w, height: h, data }
    }

    /// Separable "valid" filtering with a symmetric kernel.
    fn filter_valid(&self, kernel: &[f64]) -> Plane {
        let k = kernel.len();
        let ow = self.width + 1 - k;
        let oh = self.height + 1 - k;
        let mut horiz = vec![0.0; ow * self.height];
        for y in 0..self.height {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            for x in 0..ow {
                horiz[y * ow + x] = row[x..x + k].iter().zip(kernel).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                out[y * ow + x] = (0..k).map(|t| horiz[(y + t) * ow + x] * kernel[t]).sum();
            }
        }
        Plane { width: ow, height: oh, data: out }
    }
}

fn gaussian_kernel() -> Vec<f64> {
    let center = (WINDOW_SIZE / 2) as f64;
    let raw: Vec<f64> = (0..WINDOW_SIZE)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Means of the SSIM map and of the contrast-structure map.
fn ssim_components(a: &Plane, b: &Plane, kernel: &[f64]) -> (f64, f64) {
    let c1 = (K1 * MAX_PIXEL).powi(2);
    let c2 = (K2 * MAX_PIXEL).powi(2);
    let mu_a = a.filter_valid(kernel);
    let mu_b = b.filter_valid(kernel);
    let aa = a.zip_map(a, |x, y| x * y).filter_valid(kernel);
    let bb = b.zip_map(b, |x, y| x * y).filter_valid(kernel);
    let ab = a.zip_map(b, |x, y| x * y).filter_valid(kernel);

    let n = mu_a.data.len() as f64;
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let var_a = aa.data[i] - ma * ma;
        let var_b = bb.data[i] - mb * mb;
        let cov = ab.data[i] - ma * mb;
        let cs = (2.0 * cov + c2) / (var_a + var_b + c2);
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim_sum += lum * cs;
        cs_sum += cs;
    }
    (ssim_sum / n, cs_sum / n)
}

/// Mean SSIM over the luma plane.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims("ssim", a, b)?;
    if a.width() < WINDOW_SIZE || a.height() < WINDOW_SIZE {
        return Err(Error::Input(format!(
            "SSIM needs at least {WINDOW_SIZE}x{WINDOW_SIZE} pixels, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    let (s, _) = ssim_components(&Plane::luma(a), &Plane::luma(b), &gaussian_kernel());
    Ok(s.max(0.0))
}

/// Five-scale MS-SSIM over the luma plane.
pub fn ms_ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims("ms_ssim", a, b)?;
    if a.width().min(a.height()) < MS_SSIM_MIN_SIZE {
        return Err(Error::Input(format!(
            "MS-SSIM needs a minimum side of {MS_SSIM_MIN_SIZE} px, got {}x{}",
            a.width(),
            a.height()
        )));
    }
    let kernel = gaussian_kernel();
    let mut pa = Plane::luma(a);
    let mut pb = Plane::luma(b);
    let last = MS_SSIM_WEIGHTS.len() - 1;
    let mut score = 1.0;
    for (scale, &weight) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let (s, cs) = ssim_components(&pa, &pb, &kernel);
        let term = if scale == last { s } else { cs };
        score *= term.max(0.0).powf(weight);
        if scale != last {
            pa = pa.downsample();
            pb = pb.downsample();
        }
    }
    Ok(score)
}

/// `−10·log10(1 − v)`, `+∞` at `v = 1`.
pub fn ms_ssim_db(v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("MS-SSIM value {v} outside [0, 1]")));
    }
    if v == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * (1.0 - v).log10())
}
