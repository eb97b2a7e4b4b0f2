//! Separate source-channel transmission: JPEG at the largest quality whose
//! file fits the bit budget a capacity-achieving code could deliver over an
//! AWGN or block Rayleigh-fading channel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use image::codecs::jpeg::{JpegDecoder, JpegEncoder};
use image::{DynamicImage, ExtendedColorType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::classical::{ms_ssim, psnr};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::stats::{Cell, Report};
use crate::transforms::derive_seed;
use crate::vitscore::{vitscore, FeatureMatrix};
use crate::weights::WeightBundle;

pub const DEFAULT_FADING_REALIZATIONS: usize = 10;
/// Pixel value of the reconstruction shown on outage.
pub const OUTAGE_GRAY: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChannelFamily {
    Awgn,
    Rayleigh,
}

impl ChannelFamily {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelFamily::Awgn => "awgn",
            ChannelFamily::Rayleigh => "rayleigh",
        }
    }
}

impl fmt::Display for ChannelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "awgn" => Ok(ChannelFamily::Awgn),
            "rayleigh" => Ok(ChannelFamily::Rayleigh),
            _ => Err(Error::Input(format!("unknown channel family `{s}` (awgn, rayleigh)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub family: ChannelFamily,
    pub snr_db: f64,
    /// Channel uses per source sample, `k / n`.
    pub cbr: f64,
    /// Seeds the fading gain; unused for AWGN.
    pub seed: u64,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.snr_db.is_finite() {
            return Err(Error::Domain(format!("snr_db must be finite, got {}", self.snr_db)));
        }
        if !(self.cbr > 0.0 && self.cbr <= 1.0) {
            return Err(Error::Domain(format!("cbr must lie in (0, 1], got {}", self.cbr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionOutcome {
    pub reconstructed: Image,
    /// Size of the chosen JPEG file; on outage, the size of the quality-1 file
    /// that did not fit.
    pub bits_used: u64,
    pub bit_budget: u64,
    /// `None` signals outage.
    pub jpeg_quality: Option<u8>,
    /// Bits per channel use.
    pub realized_capacity: f64,
    /// Fading power gain, Rayleigh only.
    pub channel_gain: Option<f64>,
}

impl TransmissionOutcome {
    pub fn is_outage(&self) -> bool {
        self.jpeg_quality.is_none()
    }
}

fn db_to_linear(snr_db: f64) -> f64 {
    10f64.powf(0.1 * snr_db)
}

/// `½·log₂(1 + 10^(SNR/10))` bits per channel use.
pub fn awgn_capacity(snr_db: f64) -> f64 {
    0.5 * (1.0 + db_to_linear(snr_db)).log2()
}

/// `½·log₂(1 + h·10^(SNR/10))` for power gain `h ≥ 0`.
pub fn rayleigh_capacity(snr_db: f64, h: f64) -> Result<f64> {
    if !(h >= 0.0) || !h.is_finite() {
        return Err(Error::Domain(format!("channel gain must be finite and non-negative, got {h}")));
    }
    Ok(0.5 * (1.0 + h * db_to_linear(snr_db)).log2())
}

/// Power gain `g₁² + g₂²` with `g₁, g₂ ~ N(0, ½)`; exponential with mean 1.
pub fn sample_fading_gain<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let g1: f64 = rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2;
    let g2: f64 = rng.sample::<f64, _>(StandardNormal) * std::f64::consts::FRAC_1_SQRT_2;
    g1 * g1 + g2 * g2
}

/// Channel capacity and gain realized for one transmission.
fn realize(cfg: &ChannelConfig) -> Result<(f64, Option<f64>)> {
    match cfg.family {
        ChannelFamily::Awgn => Ok((awgn_capacity(cfg.snr_db), None)),
        ChannelFamily::Rayleigh => {
            let h = sample_fading_gain(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
            Ok((rayleigh_capacity(cfg.snr_db, h)?, Some(h)))
        }
    }
}

/// Baseline JPEG file at `quality` (1..=100).
pub fn encode_jpeg(img: &Image, quality: u8) -> Result<Vec<u8>> {
    let color = match img.channels() {
        1 => ExtendedColorType::L8,
        _ => ExtendedColorType::Rgb8,
    };
    let mut bytes = Vec::new();
    JpegEncoder::new_with_quality(&mut bytes, quality)
        .encode(img.pixels(), img.width() as u32, img.height() as u32, color)
        .map_err(|e| Error::Codec(e.to_string()))?;
    Ok(bytes)
}

/// Decodes a JPEG file to an image with `channels` channels.
pub fn decode_jpeg(bytes: &[u8], channels: usize) -> Result<Image> {
    let decoder = JpegDecoder::new(Cursor::new(bytes)).map_err(|e| Error::Codec(e.to_string()))?;
    let decoded = DynamicImage::from_decoder(decoder).map_err(|e| Error::Codec(e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match channels {
        1 => Image::new(w, h, 1, decoded.into_luma8().into_raw()),
        _ => Image::new(w, h, 3, decoded.into_rgb8().into_raw()),
    }
}

/// Result of the rate search: the chosen quality (or outage) and file size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct RateChoice {
    quality: Option<u8>,
    bits: u64,
}

/// Largest JPEG quality whose file fits in `budget` bits.
///
/// Binary search assuming size grows with quality; if the sizes around the
/// found boundary contradict that assumption, a linear scan from the top
/// decides instead.
fn search_quality(img: &Image, budget: u64) -> Result<(RateChoice, Vec<u8>)> {
    let mut cache: BTreeMap<u8, Vec<u8>> = BTreeMap::new();
    let mut size = |q: u8| -> Result<u64> {
        if let std::collections::btree_map::Entry::Vacant(slot) = cache.entry(q) {
            slot.insert(encode_jpeg(img, q)?);
        }
        Ok(cache[&q].len() as u64 * 8)
    };

    let floor_bits = size(1)?;
    if floor_bits > budget {
        return Ok((RateChoice { quality: None, bits: floor_bits }, Vec::new()));
    }
    let quality = if size(100)? <= budget {
        100
    } else {
        // size(lo) <= budget < size(hi)
        let (mut lo, mut hi) = (1u8, 100u8);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if size(mid)? <= budget {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let monotone = lo == 1 || size(lo - 1)? <= size(lo)?;
        if monotone && size(lo)? <= size(hi)? {
            lo
        } else {
            let mut best = 1;
            for q in (1..=100u8).rev() {
                if size(q)? <= budget {
                    best = q;
                    break;
                }
            }
            best
        }
    };
    let bits = size(quality)?;
    let bytes = cache.remove(&quality).unwrap_or_default();
    Ok((RateChoice { quality: Some(quality), bits }, bytes))
}

fn budget_bits(img: &Image, cfg: &ChannelConfig, capacity: f64) -> u64 {
    let n = img.len() as f64;
    let k = (cfg.cbr * n).round();
    (k * capacity).floor() as u64
}

/// Sends `img` through the configured channel.
pub fn transmit(img: &Image, cfg: &ChannelConfig) -> Result<TransmissionOutcome> {
    cfg.validate()?;
    let (capacity, gain) = realize(cfg)?;
    let budget = budget_bits(img, cfg, capacity);
    let (choice, bytes) = search_quality(img, budget)?;
    let reconstructed = match choice.quality {
        Some(_) => decode_jpeg(&bytes, img.channels())?,
        None => Image::filled(img.width(), img.height(), img.channels(), OUTAGE_GRAY)?,
    };
    Ok(TransmissionOutcome {
        reconstructed,
        bits_used: choice.bits,
        bit_budget: budget,
        jpeg_quality: choice.quality,
        realized_capacity: capacity,
        channel_gain: gain,
    })
}

/// Grid and repetition settings for [`channel_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSweep {
    pub family: ChannelFamily,
    pub snr_list: Vec<f64>,
    pub cbr_list: Vec<f64>,
    pub seed: u64,
    /// Fading realizations per image and grid point; AWGN always uses one.
    pub realizations: usize,
}

impl ChannelSweep {
    pub fn new(family: ChannelFamily, snr_list: Vec<f64>, cbr_list: Vec<f64>, seed: u64) -> Self {
        ChannelSweep { family, snr_list, cbr_list, seed, realizations: DEFAULT_FADING_REALIZATIONS }
    }

    fn realizations(&self) -> usize {
        match self.family {
            ChannelFamily::Awgn => 1,
            ChannelFamily::Rayleigh => self.realizations,
        }
    }
}

/// Mean metrics at one `(snr, cbr)` grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSweepPoint {
    pub family: ChannelFamily,
    pub snr_db: f64,
    pub cbr: f64,
    pub vitscore: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    /// Fraction of transmissions that ended in outage.
    pub outage_rate: f64,
    /// Transmissions averaged (images × realizations).
    pub count: usize,
}

/// What the receiver ends up with; equal keys mean equal pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Reconstruction {
    Coded { image: usize, quality: u8 },
    Outage { width: usize, height: usize, channels: usize },
}

impl Reconstruction {
    fn render(&self, dataset: &[Image]) -> Result<Image> {
        match *self {
            Reconstruction::Coded { image, quality } => {
                let img = &dataset[image];
                decode_jpeg(&encode_jpeg(img, quality)?, img.channels())
            }
            Reconstruction::Outage { width, height, channels } => Image::filled(width, height, channels, OUTAGE_GRAY),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Scores {
    vitscore: f64,
    psnr: f64,
    ms_ssim: f64,
}

/// Mean ViTScore, PSNR and MS-SSIM per grid point, in `snr_list × cbr_list`
/// order.
///
/// A Rayleigh image keeps one fading gain per realization across the grid.
/// Identical reconstructions (for example all outages of one size) are
/// encoded once.
pub fn channel_sweep(
    dataset: &[Image],
    weights: &WeightBundle,
    sweep: &ChannelSweep,
) -> Result<Vec<ChannelSweepPoint>> {
    if dataset.is_empty() {
        return Err(Error::DatasetTooSmall { needed: 1, found: 0 });
    }
    if sweep.snr_list.is_empty() || sweep.cbr_list.is_empty() {
        return Err(Error::Input("channel sweep needs at least one snr and one cbr".into()));
    }
    let encoder = Encoder::new(weights)?;
    let realizations = sweep.realizations().max(1);

    let mut jobs = Vec::new();
    for (point, (&snr_db, &cbr)) in
        sweep.snr_list.iter().flat_map(|s| sweep.cbr_list.iter().map(move |c| (s, c))).enumerate()
    {
        for image in 0..dataset.len() {
            for r in 0..realizations {
                let seed = derive_seed(derive_seed(sweep.seed, image as u64), r as u64);
                let cfg = ChannelConfig { family: sweep.family, snr_db, cbr, seed };
                cfg.validate()?;
                jobs.push((point, image, cfg));
            }
        }
    }

    let received: Vec<(usize, usize, Reconstruction)> = jobs
        .par_iter()
        .map(|&(point, image, cfg)| {
            let img = &dataset[image];
            let (capacity, _) = realize(&cfg)?;
            let (choice, _) = search_quality(img, budget_bits(img, &cfg, capacity))?;
            let recon = match choice.quality {
                Some(quality) => Reconstruction::Coded { image, quality },
                None => Reconstruction::Outage { width: img.width(), height: img.height(), channels: img.channels() },
            };
            Ok((point, image, recon))
        })
        .collect::<Result<_>>()?;

    let originals: Vec<FeatureMatrix> = dataset.par_iter().map(|img| encoder.encode(img)).collect::<Result<_>>()?;
    let distinct: Vec<Reconstruction> = received.iter().map(|r| r.2).collect::<BTreeSet<_>>().into_iter().collect();
    let rendered: BTreeMap<Reconstruction, (Image, FeatureMatrix)> = distinct
        .par_iter()
        .map(|key| {
            let img = key.render(dataset)?;
            let features = encoder.encode(&img)?;
            Ok((*key, (img, features)))
        })
        .collect::<Result<_>>()?;

    let pairs: BTreeSet<(usize, Reconstruction)> = received.iter().map(|&(_, i, r)| (i, r)).collect();
    let scores: BTreeMap<(usize, Reconstruction), Scores> = pairs
        .into_par_iter()
        .map(|(image, key)| {
            let (recon, features) = &rendered[&key];
            let original = &dataset[image];
            let s = Scores {
                vitscore: vitscore(&originals[image], features)?.f1,
                psnr: psnr(original, recon)?,
                ms_ssim: ms_ssim(original, recon)?,
            };
            Ok(((image, key), s))
        })
        .collect::<Result<_>>()?;

    let grid: Vec<(f64, f64)> =
        sweep.snr_list.iter().flat_map(|&s| sweep.cbr_list.iter().map(move |&c| (s, c))).collect();
    let mut points = Vec::with_capacity(grid.len());
    for (point, &(snr_db, cbr)) in grid.iter().enumerate() {
        let (mut v, mut p, mut m, mut outages, mut count) = (0.0, 0.0, 0.0, 0usize, 0usize);
        for &(_, image, key) in received.iter().filter(|r| r.0 == point) {
            let s = scores[&(image, key)];
            v += s.vitscore;
            p += s.psnr;
            m += s.ms_ssim;
            outages += usize::from(matches!(key, Reconstruction::Outage { .. }));
            count += 1;
        }
        let n = count as f64;
        points.push(ChannelSweepPoint {
            family: sweep.family,
            snr_db,
            cbr,
            vitscore: v / n,
            psnr: p / n,
            ms_ssim: m / n,
            outage_rate: outages as f64 / n,
            count,
        });
    }
    Ok(points)
}

/// One row per grid point.
pub fn channel_report(points: &[ChannelSweepPoint]) -> Result<Report> {
    let mut report =
        Report::new(&["family", "snr_db", "cbr", "vitscore", "psnr", "ms_ssim", "outage_rate", "count"], 3);
    for p in points {
        report.push(vec![
            Cell::Text(p.family.as_str().into()),
            Cell::Real(p.snr_db),
            Cell::Real(p.cbr),
            Cell::Real(p.vitscore),
            Cell::Real(p.psnr),
            Cell::Real(p.ms_ssim),
            Cell::Real(p.outage_rate),
            Cell::Int(p.count as u64),
        ])?;
    }
    Ok(report)
}
