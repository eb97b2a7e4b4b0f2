//! Correlation, standard scores over dataset pair statistics, and report
//! emission.
//!
//! Variances are population (biased) variances throughout.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::classical::{ms_ssim, psnr, ssim};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::transforms::resize_image;
use crate::vitscore::{vitscore, vitscore_mean, FeatureMatrix};
use crate::weights::WeightBundle;

pub const DEFAULT_PAIR_SAMPLE: usize = 2000;

/// Metrics known to the reporting layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricId {
    VitScore,
    VitScoreMean,
    Psnr,
    Ssim,
    MsSsim,
    /// Only available through external score ingestion.
    Lpips,
}

impl MetricId {
    pub const ALL: [MetricId; 6] =
        [MetricId::VitScore, MetricId::VitScoreMean, MetricId::Psnr, MetricId::Ssim, MetricId::MsSsim, MetricId::Lpips];

    pub fn as_str(&self) -> &'static str {
        match self {
            MetricId::VitScore => "vitscore",
            MetricId::VitScoreMean => "vitscore_mean",
            MetricId::Psnr => "psnr",
            MetricId::Ssim => "ssim",
            MetricId::MsSsim => "ms_ssim",
            MetricId::Lpips => "lpips",
        }
    }

    /// +1 when larger means more similar, −1 for distances such as LPIPS.
    pub fn sign(&self) -> f64 {
        match self {
            MetricId::Lpips => -1.0,
            _ => 1.0,
        }
    }

    fn needs_encoder(&self) -> bool {
        matches!(self, MetricId::VitScore | MetricId::VitScoreMean)
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Input(format!("unknown metric `{s}`")))
    }
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Pearson correlation `Cov(x, y) / √(Var(x)·Var(y))`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape { op: "pearson", left: vec![x.len()], right: vec![y.len()] });
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput(format!("pearson needs at least 2 samples, got {}", x.len())));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 || !(sxx * syy).is_finite() {
        return Err(Error::DegenerateInput("pearson input has zero or non-finite variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mean and spread of a metric over unordered image pairs of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct PairStats {
    pub dataset_id: String,
    pub metric_id: String,
    pub mu: f64,
    pub sigma: f64,
    pub pair_count: usize,
    pub sample_seed: u64,
}

impl PairStats {
    /// σ = 0: standard scores are undefined against these statistics.
    pub fn is_degenerate(&self) -> bool {
        self.sigma == 0.0
    }
}

/// `sign·(r − μ)/σ`.
pub fn standard_score(r: f64, stats: &PairStats, sign: f64) -> Result<f64> {
    if !(stats.sigma > 0.0) {
        return Err(Error::DegenerateStats { dataset: stats.dataset_id.clone(), metric: stats.metric_id.clone() });
    }
    Ok(sign * (r - stats.mu) / stats.sigma)
}

/// Unordered pairs `(i, j)`, `i < j`, over `n` items: every pair when there
/// are at most `sample_size`, otherwise `sample_size` distinct pairs drawn
/// uniformly with `seed`. Returned in lexicographic order.
pub fn sample_pairs(n: usize, sample_size: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = n * n.saturating_sub(1) / 2;
    let decode = |mut idx: usize| {
        let mut i = 0;
        while idx >= n - 1 - i {
            idx -= n - 1 - i;
            i += 1;
        }
        (i, i + 1 + idx)
    };
    if total <= sample_size {
        return (0..total).map(decode).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, total, sample_size).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(decode).collect()
}

fn stats_from_scores(dataset_id: &str, metric_id: &str, scores: &[f64], seed: u64) -> Result<PairStats> {
    if scores.is_empty() {
        return Err(Error::DatasetTooSmall { needed: 2, found: scores.len() });
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::DegenerateInput(format!("pair score {bad} for {metric_id} on {dataset_id} is not finite")));
    }
    let (mu, sigma) = mean_and_std(scores);
    Ok(PairStats {
        dataset_id: dataset_id.to_string(),
        metric_id: metric_id.to_string(),
        mu,
        sigma,
        pair_count: scores.len(),
        sample_seed: seed,
    })
}

/// Pair statistics from an arbitrary pair scorer over `n_items` items.
pub fn estimate_pair_stats_with<F>(
    dataset_id: &str,
    metric_id: &str,
    n_items: usize,
    sample_size: usize,
    seed: u64,
    score: F,
) -> Result<PairStats>
where
    F: Fn(usize, usize) -> Result<f64> + Sync,
{
    if n_items < 2 {
        return Err(Error::DatasetTooSmall { needed: 2, found: n_items });
    }
    let pairs = sample_pairs(n_items, sample_size.max(1), seed);
    let scores: Vec<f64> = pairs.par_iter().map(|&(i, j)| score(i, j)).collect::<Result<_>>()?;
    stats_from_scores(dataset_id, metric_id, &scores, seed)
}

/// Pair statistics of `metric` over `images`.
///
/// Pixel metrics compare the second image resized to the first one's size.
/// ViTScore variants need `weights`; each image is encoded once.
pub fn estimate_pair_stats(
    dataset_id: &str,
    images: &[Image],
    metric: MetricId,
    weights: Option<&WeightBundle>,
    sample_size: usize,
    seed: u64,
) -> Result<PairStats> {
    if images.len() < 2 {
        return Err(Error::DatasetTooSmall { needed: 2, found: images.len() });
    }
    let features: Vec<Option<FeatureMatrix>> = if metric.needs_encoder() {
        let weights = weights.ok_or_else(|| Error::Input(format!("{metric} pair statistics need a weight bundle")))?;
        let encoder = Encoder::new(weights)?;
        // Encode only images that appear in some sampled pair.
        let pairs = sample_pairs(images.len(), sample_size.max(1), seed);
        let mut used = vec![false; images.len()];
        for (i, j) in &pairs {
            used[*i] = true;
            used[*j] = true;
        }
        images
            .par_iter()
            .zip(used)
            .map(|(img, used)| used.then(|| encoder.encode(img)).transpose())
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let score = |i: usize, j: usize| -> Result<f64> {
        let (a, b) = (images[i].to_rgb(), &images[j]);
        let pixel_b = || resize_image(&b.to_rgb(), a.width(), a.height());
        // Every sampled index was encoded above.
        let feature = |k: usize| features[k].as_ref().ok_or_else(|| Error::Input(format!("image {k} was not encoded")));
        match metric {
            MetricId::VitScore => Ok(vitscore(feature(i)?, feature(j)?)?.f1),
            MetricId::VitScoreMean => Ok(vitscore_mean(feature(i)?, feature(j)?)?.f1),
            MetricId::Psnr => psnr(&a, &pixel_b()?),
            MetricId::Ssim => ssim(&a, &pixel_b()?),
            MetricId::MsSsim => ms_ssim(&a, &pixel_b()?),
            MetricId::Lpips => Err(Error::Input("lpips is not computed here; ingest external scores instead".into())),
        }
    };
    estimate_pair_stats_with(dataset_id, metric.as_str(), images.len(), sample_size, seed, score)
}

/// One row of an externally computed score file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ExternalScore {
    pub image_a: String,
    pub image_b: String,
    pub score: f64,
}

/// Reads a `{image_a, image_b, score}` CSV.
pub fn read_external_scores(path: &Path) -> Result<Vec<ExternalScore>> {
    let mut reader = csv::Reader::from_path(path)?;
    let rows: Vec<ExternalScore> = reader.deserialize().collect::<Result<_, csv::Error>>()?;
    Ok(rows)
}

/// Pair statistics over externally supplied pair scores (every row counts).
pub fn pair_stats_from_external(dataset_id: &str, metric_id: &str, rows: &[ExternalScore]) -> Result<PairStats> {
    let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
    stats_from_scores(dataset_id, metric_id, &scores, 0)
}

/// A report cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    Real(f64),
}

impl Cell {
    pub fn real(&self) -> Option<f64> {
        match self {
            Cell::Real(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            Cell::Text(_) => None,
        }
    }

    fn parse(s: &str) -> Cell {
        match s {
            "inf" => return Cell::Real(f64::INFINITY),
            "-inf" => return Cell::Real(f64::NEG_INFINITY),
            "nan" => return Cell::Real(f64::NAN),
            _ => {}
        }
        if let Ok(v) = s.parse::<u64>() {
            return Cell::Int(v);
        }
        if s.contains('.') {
            if let Ok(v) = s.parse::<f64>() {
                return Cell::Real(v);
            }
        }
        Cell::Text(s.to_string())
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Text(s) => f.write_str(s),
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Real(v) => f.write_str(&format_real(*v)),
        }
    }
}

/// Fixed six-decimal rendering; non-finite values as `inf`, `-inf`, `nan`.
pub fn format_real(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        let s = format!("{v:.6}");
        // No negative zero in output.
        if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
            s.trim_start_matches('-').to_string()
        } else {
            s
        }
    }
}

/// A table whose first `key_count` columns identify a row.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub columns: Vec<String>,
    pub key_count: usize,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// One row per record, as stored.
    Csv,
    /// One series per column: the last key column becomes the x axis and each
    /// (value column, remaining keys) combination becomes its own column.
    PlotData,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "plotdata" => Ok(ReportFormat::PlotData),
            _ => Err(Error::Input(format!("unknown report format `{s}` (csv, plotdata)"))),
        }
    }
}

impl Report {
    pub fn new(columns: &[&str], key_count: usize) -> Report {
        Report { columns: columns.iter().map(|c| c.to_string()).collect(), key_count, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Shape { op: "report row", left: vec![self.columns.len()], right: vec![row.len()] });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        if self.rows.is_empty() {
            return Err(Error::EmptyReport);
        }
        let table = match format {
            ReportFormat::Csv => self.clone(),
            ReportFormat::PlotData => self.pivot(),
        };
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(&table.columns)?;
        for row in &table.rows {
            writer.write_record(row.iter().map(|c| c.to_string()))?;
        }
        let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Input(e.to_string()))
    }

    fn pivot(&self) -> Report {
        if self.key_count <= 1 {
            return self.clone();
        }
        let x = self.key_count - 1;
        let group_of = |row: &[Cell]| row[..x].iter().map(|c| c.to_string()).collect::<Vec<_>>().join(":");
        let mut groups: Vec<String> = Vec::new();
        let mut xs: Vec<String> = Vec::new();
        for row in &self.rows {
            let g = group_of(row);
            if !groups.contains(&g) {
                groups.push(g);
            }
            let xv = row[x].to_string();
            if !xs.contains(&xv) {
                xs.push(xv);
            }
        }
        let value_cols = &self.columns[self.key_count..];
        let mut columns = vec![self.columns[x].clone()];
        for v in value_cols {
            for g in &groups {
                columns.push(format!("{v}:{g}"));
            }
        }
        let mut cells: HashMap<(String, String), &[Cell]> = HashMap::new();
        for row in &self.rows {
            cells.insert((group_of(row), row[x].to_string()), &row[self.key_count..]);
        }
        let rows = xs
            .iter()
            .map(|xv| {
                let mut out = vec![Cell::parse(xv)];
                for (vi, _) in value_cols.iter().enumerate() {
                    for g in &groups {
                        out.push(match cells.get(&(g.clone(), xv.clone())) {
                            Some(vals) => vals[vi].clone(),
                            None => Cell::Text(String::new()),
                        });
                    }
                }
                out
            })
            .collect();
        Report { columns, key_count: 1, rows }
    }

    /// Parses text produced by [`Report::render`] with [`ReportFormat::Csv`].
    pub fn parse_csv(text: &str, key_count: usize) -> Result<Report> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let columns: Vec<String> = reader.headers()?.iter().map(String::from).collect();
        let mut report = Report { columns, key_count, rows: Vec::new() };
        for record in reader.records() {
            let row = record?.iter().map(Cell::parse).collect();
            report.push(row)?;
        }
        Ok(report)
    }
}

/// Writes `report` to `path`.
pub fn emit_report(report: &Report, path: &Path, format: ReportFormat) -> Result<()> {
    let text = report.render(format)?;
    std::fs::write(path, text)?;
    Ok(())
}
