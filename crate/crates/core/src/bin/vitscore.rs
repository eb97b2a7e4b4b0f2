//! `vitscore` command-line interface.
//!
//! Exit codes: 0 on success, 1 for usage errors and missing files, 2 for
//! every other failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vitscore_core::channel::{channel_report, channel_sweep, ChannelFamily, ChannelSweep, DEFAULT_FADING_REALIZATIONS};
use vitscore_core::classical::classical_scores;
use vitscore_core::encoder::Encoder;
use vitscore_core::imaging::{list_dataset, load_image, Image};
use vitscore_core::stats::{
    estimate_pair_stats, format_real, pair_stats_from_external, read_external_scores, Cell, MetricId, PairStats,
    Report, ReportFormat, DEFAULT_PAIR_SAMPLE,
};
use vitscore_core::transforms::{transform_report, transform_sweep, TransformKind};
use vitscore_core::vitscore::{score_features, Pooling};
use vitscore_core::weights::{
    generate_random_bundle_for, read_bundle, write_bundle, EncoderConfig, WeightBundle, CANONICAL_MODEL_ID,
};
use vitscore_core::Error;

#[derive(Parser)]
#[command(name = "vitscore", version, about = "ViTScore and classical image similarity metrics")]
struct Cli {
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score one image pair; prints a single CSV row.
    Score(ScoreArgs),
    /// Score every dataset image against its transformed versions.
    SweepTransforms(SweepTransformsArgs),
    /// Mean metrics after JPEG transmission over a channel grid.
    SweepChannel(SweepChannelArgs),
    /// Create or inspect weight bundles.
    #[command(subcommand)]
    Bundle(BundleCommand),
    /// Dataset statistics.
    #[command(subcommand)]
    Stats(StatsCommand),
}

#[derive(Args)]
struct WeightsArg {
    /// Weight bundle (VSWB1).
    #[arg(long, env = "VITSCORE_WEIGHTS")]
    weights: PathBuf,
}

#[derive(Args)]
struct OutputArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or plotdata.
    #[arg(long, default_value = "csv")]
    format: ReportFormat,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    image_a: PathBuf,
    #[arg(long)]
    image_b: PathBuf,
    #[command(flatten)]
    weights: WeightsArg,
    /// Use mean pooling instead of greedy matching.
    #[arg(long)]
    ablation_mean: bool,
    /// Also report PSNR, SSIM and MS-SSIM.
    #[arg(long)]
    classical: bool,
}

#[derive(Args)]
struct SweepTransformsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    weights: WeightsArg,
    /// Comma-separated transforms; defaults to the seven attack transforms.
    #[arg(long, value_delimiter = ',')]
    transforms: Option<Vec<TransformKind>>,
    /// Base seed for the random-noise transform.
    #[arg(long, default_value_t = 0)]
    noise_seed: u64,
    /// Pair-statistics CSV files (from `stats pairs`) enabling standard scores.
    #[arg(long = "pair-stats", value_delimiter = ',')]
    pair_stats: Vec<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct SweepChannelArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    weights: WeightsArg,
    #[arg(long, default_value = "awgn")]
    family: ChannelFamily,
    /// Comma-separated SNRs in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    snr_list: Vec<f64>,
    /// Comma-separated channel bandwidth ratios in (0, 1].
    #[arg(long, value_delimiter = ',', required = true)]
    cbr_list: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fading realizations per image (Rayleigh only).
    #[arg(long, default_value_t = DEFAULT_FADING_REALIZATIONS)]
    realizations: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Subcommand)]
enum BundleCommand {
    /// Write a bundle of seeded uniform random weights.
    GenRandom(GenRandomArgs),
    /// Describe a bundle.
    Inspect {
        /// Bundle path.
        bundle: PathBuf,
    },
}

#[derive(Args)]
struct GenRandomArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Architecture overrides; the defaults give ViT-B/16 at 224 px.
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    mlp_dim: Option<usize>,
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Mean and standard deviation of a metric over image pairs.
    Pairs(PairsArgs),
    /// Pair statistics from an external `image_a,image_b,score` CSV.
    External(ExternalArgs),
}

#[derive(Args)]
struct PairsArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    metric: MetricId,
    /// Needed for ViTScore metrics.
    #[arg(long, env = "VITSCORE_WEIGHTS")]
    weights: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_PAIR_SAMPLE)]
    sample: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExternalArgs {
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    dataset_id: String,
    #[arg(long, default_value = "lpips")]
    metric: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 1,
            Error::Input(_) => 1,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Score(args) => cmd_score(args),
        Command::SweepTransforms(args) => cmd_sweep_transforms(args),
        Command::SweepChannel(args) => cmd_sweep_channel(args),
        Command::Bundle(BundleCommand::GenRandom(args)) => cmd_gen_random(args),
        Command::Bundle(BundleCommand::Inspect { bundle }) => cmd_inspect(&bundle),
        Command::Stats(StatsCommand::Pairs(args)) => cmd_pairs(args),
        Command::Stats(StatsCommand::External(args)) => cmd_external(args),
    }
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure { code: 1, message: format!("{what} not found: {}", path.display()) })
    }
}

fn load_weights(path: &Path) -> CliResult<WeightBundle> {
    require_file(path, "weight bundle")?;
    Ok(read_bundle(path)?)
}

fn load_dataset(dir: &Path) -> CliResult<Vec<Image>> {
    require_file(dir, "dataset directory")?;
    let paths = list_dataset(dir)?;
    if paths.is_empty() {
        return Err(Failure { code: 1, message: format!("no PNG or PPM images in {}", dir.display()) });
    }
    Ok(paths.iter().map(load_image).collect::<Result<_, _>>()?)
}

fn write_output(text: &str, out: Option<&Path>) -> CliResult {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn emit(report: &Report, output: &OutputArgs) -> CliResult {
    write_output(&report.render(output.format)?, output.out.as_deref())
}

fn cmd_score(args: ScoreArgs) -> CliResult {
    require_file(&args.image_a, "image")?;
    require_file(&args.image_b, "image")?;
    let weights = load_weights(&args.weights.weights)?;
    let a = load_image(&args.image_a)?;
    let b = load_image(&args.image_b)?;
    let encoder = Encoder::new(&weights)?;
    let pooling = if args.ablation_mean { Pooling::MeanPooling } else { Pooling::Origin };
    let result = score_features(&encoder.encode(&a)?, &encoder.encode(&b)?, pooling)?;

    let mut fields = vec![format_real(result.f1), format_real(result.recall), format_real(result.precision)];
    if args.classical {
        let c = classical_scores(&a.to_rgb(), &b.to_rgb())?;
        fields.extend([format_real(c.psnr_db), format_real(c.ssim), format_real(c.ms_ssim)]);
    }
    fields.push(result.variant.as_str().to_string());
    write_output(&(fields.join(",") + "\n"), None)
}

fn read_pair_stats(path: &Path) -> CliResult<Vec<PairStats>> {
    require_file(path, "pair statistics")?;
    let text = std::fs::read_to_string(path)?;
    let report = Report::parse_csv(&text, 2)?;
    let col = |name: &str| {
        report
            .column(name)
            .ok_or_else(|| Failure { code: 1, message: format!("{}: missing column {name}", path.display()) })
    };
    let (d, m, mu, sigma, count, seed) =
        (col("dataset_id")?, col("metric_id")?, col("mu")?, col("sigma")?, col("pair_count")?, col("sample_seed")?);
    let bad = || Failure { code: 1, message: format!("{}: malformed pair statistics", path.display()) };
    report
        .rows
        .iter()
        .map(|row| {
            Ok(PairStats {
                dataset_id: row[d].to_string(),
                metric_id: row[m].to_string(),
                mu: row[mu].real().ok_or_else(bad)?,
                sigma: row[sigma].real().ok_or_else(bad)?,
                pair_count: row[count].real().ok_or_else(bad)? as usize,
                sample_seed: row[seed].real().ok_or_else(bad)? as u64,
            })
        })
        .collect()
}

fn cmd_sweep_transforms(args: SweepTransformsArgs) -> CliResult {
    let weights = load_weights(&args.weights.weights)?;
    let dataset = load_dataset(&args.dataset)?;
    let kinds = args.transforms.unwrap_or_else(|| TransformKind::figure_set(args.noise_seed));
    let mut stats = Vec::new();
    for path in &args.pair_stats {
        stats.extend(read_pair_stats(path)?);
    }
    let rows = transform_sweep(&dataset, &weights, &kinds, &stats)?;
    emit(&transform_report(&rows)?, &args.output)
}

fn cmd_sweep_channel(args: SweepChannelArgs) -> CliResult {
    let weights = load_weights(&args.weights.weights)?;
    let dataset = load_dataset(&args.dataset)?;
    let sweep = ChannelSweep {
        realizations: args.realizations,
        ..ChannelSweep::new(args.family, args.snr_list, args.cbr_list, args.seed)
    };
    let points = channel_sweep(&dataset, &weights, &sweep)?;
    emit(&channel_report(&points)?, &args.output)
}

fn cmd_gen_random(args: GenRandomArgs) -> CliResult {
    let base = EncoderConfig::vit_base_16();
    let cfg = EncoderConfig {
        image_size: args.image_size.unwrap_or(base.image_size),
        patch_size: args.patch_size.unwrap_or(base.patch_size),
        embed_dim: args.embed_dim.unwrap_or(base.embed_dim),
        depth: args.depth.unwrap_or(base.depth),
        num_heads: args.heads.unwrap_or(base.num_heads),
        mlp_dim: args.mlp_dim.unwrap_or(base.mlp_dim),
        layer_norm_eps: base.layer_norm_eps,
    };
    let bundle =
        generate_random_bundle_for(&cfg, args.seed).map_err(|e| Failure { code: 1, message: e.to_string() })?;
    write_bundle(&bundle, &args.out)?;
    Ok(())
}

fn cmd_inspect(path: &Path) -> CliResult {
    let bundle = load_weights(path)?;
    let cfg = bundle.config();
    let meta = &bundle.metadata;
    let mut text = String::new();
    let canonical = if meta.model_id == CANONICAL_MODEL_ID { " (canonical)" } else { "" };
    text += &format!("model_id: {}{canonical}\n", meta.model_id);
    text += &format!(
        "image_size: {}\npatch_size: {}\nembed_dim: {}\ndepth: {}\nnum_heads: {}\nmlp_dim: {}\nlayer_norm_eps: {:e}\n",
        cfg.image_size, cfg.patch_size, cfg.embed_dim, cfg.depth, cfg.num_heads, cfg.mlp_dim, cfg.layer_norm_eps
    );
    for (key, value) in &meta.provenance {
        text += &format!("provenance.{key}: {value}\n");
    }
    text += &format!("parameters: {}\n", bundle.parameter_count());

    // Group tensors by their owning layer, in forward order.
    let mut groups: Vec<String> = vec!["embedding".into()];
    groups.extend((0..cfg.depth).map(|i| format!("blocks.{i}")));
    groups.push("norm".into());
    let group_of = |name: &str| -> String {
        if let Some(rest) = name.strip_prefix("blocks.") {
            let idx = rest.split('.').next().unwrap_or_default();
            format!("blocks.{idx}")
        } else if name.starts_with("norm.") {
            "norm".into()
        } else {
            "embedding".into()
        }
    };
    text += "layer,tensors,parameters\n";
    for group in &groups {
        let (mut tensors, mut params) = (0usize, 0usize);
        for (name, _) in cfg.manifest() {
            if group_of(&name) == *group {
                tensors += 1;
                params += bundle.get(&name)?.numel();
            }
        }
        text += &format!("{group},{tensors},{params}\n");
    }
    write_output(&text, None)
}

fn stats_report(stats: &PairStats) -> CliResult<Report> {
    let mut report =
        Report::new(&["dataset_id", "metric_id", "mu", "sigma", "pair_count", "sample_seed", "degenerate"], 2);
    report.push(vec![
        Cell::Text(stats.dataset_id.clone()),
        Cell::Text(stats.metric_id.clone()),
        Cell::Real(stats.mu),
        Cell::Real(stats.sigma),
        Cell::Int(stats.pair_count as u64),
        Cell::Int(stats.sample_seed),
        Cell::Text(stats.is_degenerate().to_string()),
    ])?;
    Ok(report)
}

fn cmd_pairs(args: PairsArgs) -> CliResult {
    let dataset = load_dataset(&args.dataset)?;
    let weights = args.weights.as_deref().map(load_weights).transpose()?;
    let dataset_id = args
        .dataset
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| args.dataset.display().to_string());
    let stats = estimate_pair_stats(&dataset_id, &dataset, args.metric, weights.as_ref(), args.sample, args.seed)?;
    write_output(&stats_report(&stats)?.render(ReportFormat::Csv)?, args.out.as_deref())
}

fn cmd_external(args: ExternalArgs) -> CliResult {
    require_file(&args.scores, "score file")?;
    let rows = read_external_scores(&args.scores)?;
    let stats = pair_stats_from_external(&args.dataset_id, &args.metric, &rows)?;
    write_output(&stats_report(&stats)?.render(ReportFormat::Csv)?, args.out.as_deref())
}
