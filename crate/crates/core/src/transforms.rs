//! Image transforms used as semantic attacks, and the sweep that scores an
//! image against each of its transformed versions.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classical::{ms_ssim, psnr, ssim};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, Image};
use crate::stats::{standard_score, Cell, MetricId, PairStats, Report};
use crate::vitscore::{vitscore, vitscore_mean};
use crate::weights::WeightBundle;

pub const DEFAULT_LOW_RES_FACTOR: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Inverse,
    Grayscale,
    FlipV,
    FlipH,
    /// 90° clockwise.
    Rot90,
    Rot180,
    RandomNoise(u64),
    /// Box downsample by the factor, then bilinear upsample back.
    LowResolution(u32),
}

impl TransformKind {
    /// The seven transforms of the attack figure: RN, GS, I, R90, R180, VF, HF.
    pub fn figure_set(noise_seed: u64) -> Vec<TransformKind> {
        vec![
            TransformKind::RandomNoise(noise_seed),
            TransformKind::Grayscale,
            TransformKind::Inverse,
            TransformKind::Rot90,
            TransformKind::Rot180,
            TransformKind::FlipV,
            TransformKind::FlipH,
        ]
    }

    /// [`Self::figure_set`] plus the low-resolution case.
    pub fn full_set(noise_seed: u64) -> Vec<TransformKind> {
        let mut set = Self::figure_set(noise_seed);
        set.push(TransformKind::LowResolution(DEFAULT_LOW_RES_FACTOR));
        set
    }

    pub fn name(&self) -> &'static str {
        match self {
            TransformKind::Inverse => "inverse",
            TransformKind::Grayscale => "grayscale",
            TransformKind::FlipV => "flip_v",
            TransformKind::FlipH => "flip_h",
            TransformKind::Rot90 => "rot90",
            TransformKind::Rot180 => "rot180",
            TransformKind::RandomNoise(_) => "random_noise",
            TransformKind::LowResolution(_) => "low_resolution",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let TransformKind::LowResolution(f) = self {
            if *f < 2 || !f.is_power_of_two() {
                return Err(Error::Domain(format!("low-resolution factor must be a power of two >= 2, got {f}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    /// Accepts the [`TransformKind::name`] spellings; `random_noise:SEED` and
    /// `low_resolution:FACTOR` set the parameter.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let parse_arg = |default: u64| -> Result<u64> {
            arg.map_or(Ok(default), |a| {
                a.parse().map_err(|_| Error::Input(format!("bad transform parameter in `{s}`")))
            })
        };
        let kind = match name.to_ascii_lowercase().as_str() {
            "inverse" | "i" => TransformKind::Inverse,
            "grayscale" | "gs" => TransformKind::Grayscale,
            "flip_v" | "vf" => TransformKind::FlipV,
            "flip_h" | "hf" => TransformKind::FlipH,
            "rot90" | "r90" => TransformKind::Rot90,
            "rot180" | "r180" => TransformKind::Rot180,
            "random_noise" | "rn" => TransformKind::RandomNoise(parse_arg(0)?),
            "low_resolution" | "lr" => {
                let f = parse_arg(u64::from(DEFAULT_LOW_RES_FACTOR))?;
                TransformKind::LowResolution(
                    u32::try_from(f).map_err(|_| Error::Domain(format!("factor {f} too large")))?,
                )
            }
            _ => return Err(Error::Input(format!("unknown transform `{s}`"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

pub fn apply_transform(img: &Image, kind: TransformKind) -> Result<Image> {
    kind.validate()?;
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let px = img.pixels();
    match kind {
        TransformKind::Inverse => Image::new(w, h, c, px.iter().map(|p| 255 - p).collect()),
        TransformKind::Grayscale => {
            let pixels = img
                .luma()
                .into_iter()
                .flat_map(|y| {
                    let v = y.round().clamp(0.0, 255.0) as u8;
                    [v, v, v]
                })
                .collect();
            Image::new(w, h, 3, pixels)
        }
        TransformKind::FlipV => remap(img, w, h, |x, y| (x, h - 1 - y)),
        TransformKind::FlipH => remap(img, w, h, |x, y| (w - 1 - x, y)),
        // Output (x, y) shows source (y, h - 1 - x); output is h wide.
        TransformKind::Rot90 => remap(img, h, w, |x, y| (y, h - 1 - x)),
        TransformKind::Rot180 => remap(img, w, h, |x, y| (w - 1 - x, h - 1 - y)),
        TransformKind::RandomNoise(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Image::new(w, h, c, (0..px.len()).map(|_| rng.random::<u8>()).collect())
        }
        TransformKind::LowResolution(factor) => low_resolution(img, factor as usize),
    }
}

/// Builds a `new_w × new_h` image whose pixel `(x, y)` is source pixel `src(x, y)`.
fn remap(img: &Image, new_w: usize, new_h: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> Result<Image> {
    let c = img.channels();
    let mut out = Vec::with_capacity(img.len());
    for y in 0..new_h {
        for x in 0..new_w {
            let (sx, sy) = src(x, y);
            let at = (sy * img.width() + sx) * c;
            out.extend_from_slice(&img.pixels()[at..at + c]);
        }
    }
    Image::new(new_w, new_h, c, out)
}

fn low_resolution(img: &Image, factor: usize) -> Result<Image> {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    if w < factor || h < factor {
        return Err(Error::Input(format!("{w}x{h} image too small for low-resolution factor {factor}")));
    }
    let (sw, sh) = (w / factor, h / factor);
    let inv_area = 1.0 / (factor * factor) as f32;
    let mut small = vec![0.0f32; sw * sh * c];
    for y in 0..sh * factor {
        for x in 0..sw * factor {
            let dst = ((y / factor) * sw + x / factor) * c;
            let src = (y * w + x) * c;
            for ch in 0..c {
                small[dst + ch] += f32::from(img.pixels()[src + ch]) * inv_area;
            }
        }
    }
    let up = resize_bilinear(&small, sw, sh, c, w, h);
    Image::new(w, h, c, up.into_iter().map(quantize).collect())
}

#[inline]
fn quantize(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Resizes `img` to `width × height` (bilinear), keeping channels.
pub fn resize_image(img: &Image, width: usize, height: usize) -> Result<Image> {
    if img.width() == width && img.height() == height {
        return Ok(img.clone());
    }
    let src: Vec<f32> = img.pixels().iter().map(|&p| f32::from(p)).collect();
    let out = resize_bilinear(&src, img.width(), img.height(), img.channels(), width, height);
    Image::new(width, height, img.channels(), out.into_iter().map(quantize).collect())
}

/// Per-image noise seed derived from the sweep seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Metrics computed for every (image, transformed image) pair in a sweep.
pub const SWEEP_METRICS: [MetricId; 5] =
    [MetricId::VitScore, MetricId::VitScoreMean, MetricId::Psnr, MetricId::Ssim, MetricId::MsSsim];

#[derive(Debug, Clone, PartialEq)]
pub struct TransformSweepRow {
    pub transform: TransformKind,
    pub metric: MetricId,
    /// Mean raw score.
    pub mean: f64,
    /// Mean standard score, when pair statistics for the metric were supplied.
    pub standard_score: Option<f64>,
    pub count: usize,
}

/// Raw per-image scores, `[transform][metric]`.
pub type PairScores = Vec<Vec<f64>>;

/// Scores every image against each transform of itself.
///
/// Images are promoted to RGB first. When a transform changes the dimensions
/// (`Rot90` on non-square input) the transformed image is resized back to the
/// original size for the pixel metrics; ViTScore sees it unmodified.
/// `RandomNoise(seed)` draws a distinct noise image per dataset index from
/// [`derive_seed`].
pub fn transform_sweep(
    dataset: &[Image],
    weights: &WeightBundle,
    kinds: &[TransformKind],
    pair_stats: &[PairStats],
) -> Result<Vec<TransformSweepRow>> {
    if dataset.is_empty() {
        return Err(Error::DatasetTooSmall { needed: 1, found: 0 });
    }
    for k in kinds {
        k.validate()?;
    }
    let per_image = transform_scores(dataset, weights, kinds)?;

    let mut rows = Vec::with_capacity(kinds.len() * SWEEP_METRICS.len());
    for (t, kind) in kinds.iter().enumerate() {
        for (m, metric) in SWEEP_METRICS.iter().enumerate() {
            let values: Vec<f64> = per_image.iter().map(|s| s[t][m]).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let standard_score = match pair_stats.iter().find(|p| p.metric_id == metric.as_str()) {
                Some(stats) => {
                    let mut total = 0.0;
                    for &v in &values {
                        total += standard_score(v, stats, metric.sign())?;
                    }
                    Some(total / values.len() as f64)
                }
                None => None,
            };
            rows.push(TransformSweepRow {
                transform: *kind,
                metric: *metric,
                mean,
                standard_score,
                count: values.len(),
            });
        }
    }
    Ok(rows)
}

/// One row per transform with a mean column per metric, followed by a
/// `<metric>_standard` column for each metric that has standard scores.
pub fn transform_report(rows: &[TransformSweepRow]) -> Result<Report> {
    let mut kinds: Vec<TransformKind> = Vec::new();
    let mut metrics: Vec<MetricId> = Vec::new();
    let mut standardized: Vec<MetricId> = Vec::new();
    for row in rows {
        if !kinds.contains(&row.transform) {
            kinds.push(row.transform);
        }
        if !metrics.contains(&row.metric) {
            metrics.push(row.metric);
        }
        if row.standard_score.is_some() && !standardized.contains(&row.metric) {
            standardized.push(row.metric);
        }
    }
    let mut columns: Vec<String> = vec!["transform".into()];
    columns.extend(metrics.iter().map(|m| m.as_str().to_string()));
    columns.extend(standardized.iter().map(|m| format!("{m}_standard")));
    columns.push("count".into());
    let names: Vec<&str> = columns.iter().map(String::as_str).collect();
    let mut report = Report::new(&names, 1);

    for kind in &kinds {
        let of_kind: Vec<&TransformSweepRow> = rows.iter().filter(|r| r.transform == *kind).collect();
        let find = |m: &MetricId| of_kind.iter().find(|r| r.metric == *m);
        let mut cells = vec![Cell::Text(kind.name().into())];
        for m in &metrics {
            cells.push(find(m).map_or(Cell::Text(String::new()), |r| Cell::Real(r.mean)));
        }
        for m in &standardized {
            cells.push(match find(m).and_then(|r| r.standard_score) {
                Some(s) => Cell::Real(s),
                None => Cell::Text(String::new()),
            });
        }
        cells.push(Cell::Int(of_kind.first().map_or(0, |r| r.count) as u64));
        report.push(cells)?;
    }
    Ok(report)
}

/// Per-image raw scores in dataset order, `[image][transform][metric]`.
pub fn transform_scores(dataset: &[Image], weights: &WeightBundle, kinds: &[TransformKind]) -> Result<Vec<PairScores>> {
    let encoder = Encoder::new(weights)?;
    dataset.par_iter().enumerate().map(|(idx, img)| score_image(&encoder, &img.to_rgb(), idx as u64, kinds)).collect()
}

fn score_image(encoder: &Encoder<'_>, img: &Image, index: u64, kinds: &[TransformKind]) -> Result<PairScores> {
    let reference = encoder.encode(img)?;
    kinds
        .iter()
        .map(|&kind| {
            let kind = match kind {
                TransformKind::RandomNoise(seed) => TransformKind::RandomNoise(derive_seed(seed, index)),
                other => other,
            };
            let transformed = apply_transform(img, kind)?;
            let features = encoder.encode(&transformed)?;
            let origin = vitscore(&reference, &features)?;
            let mean = vitscore_mean(&reference, &features)?;
            let aligned = resize_image(&transformed, img.width(), img.height())?;
            Ok(vec![origin.f1, mean.f1, psnr(img, &aligned)?, ssim(img, &aligned)?, ms_ssim(img, &aligned)?])
        })
        .collect()
}
