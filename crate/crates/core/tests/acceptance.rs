//! Acceptance suite. Runs every criterion in sequence (so timings are not
//! skewed by parallel tests) and prints one PASS/FAIL line per criterion.

mod common;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use vitscore_core::channel::{
    awgn_capacity, channel_sweep, rayleigh_capacity, sample_fading_gain, transmit, ChannelConfig, ChannelFamily,
    ChannelSweep,
};
use vitscore_core::classical::{ms_ssim, ms_ssim_db, psnr, ssim, K1, MAX_PIXEL};
use vitscore_core::imaging::{save_image, Image};
use vitscore_core::stats::{pearson, standard_score, PairStats, Report, ReportFormat};
use vitscore_core::tensor::{matmul, Matrix};
use vitscore_core::vitscore::{vitscore, vitscore_mean, FeatureMatrix};
use vitscore_core::weights::{
    generate_random_bundle, read_bundle, read_features, write_bundle, write_features, WeightBundle,
};
use vitscore_core::Error;

const THEOREM_SEED: u64 = 1;
const ORACLE_SEED: u64 = 2;
const FADING_SEED: u64 = 3;
const SWEEP_BUNDLE_SEED: u64 = 7;
const SWEEP_SEED: u64 = 11;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 7] = [
        ("theorem-suite", theorem_suite),
        ("greedy-match-oracle", greedy_match_oracle),
        ("classical-anchors", classical_anchors),
        ("capacity-anchors", capacity_anchors),
        ("channel-sweep-monotonicity", channel_sweep_monotonicity),
        ("cli-determinism", cli_determinism),
        ("degenerate-input-guards", degenerate_input_guards),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        let verdict = if result.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {name} ({:.2}s): {}", start.elapsed().as_secs_f64(), result.detail);
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| loop {
            let row: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                break row.iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Symmetry, boundedness and normalization over 200 random pairs.
fn theorem_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(THEOREM_SEED);
    let (mut sym_dev, mut norm_dev) = (0.0f64, 0.0f64);
    let mut out_of_range = Vec::new();
    let mut undefined = 0;
    for _ in 0..200 {
        let dim = rng.random_range(2..=8);
        let (n, m) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let a = FeatureMatrix::from_rows(&random_unit_rows(&mut rng, n, dim)).unwrap();
        let b = FeatureMatrix::from_rows(&random_unit_rows(&mut rng, m, dim)).unwrap();
        match (vitscore(&a, &b), vitscore(&b, &a)) {
            (Ok(ab), Ok(ba)) => {
                sym_dev = sym_dev.max((ab.f1 - ba.f1).abs());
                if !(-1.0..=1.0).contains(&ab.f1) {
                    out_of_range.push((ab.recall, ab.precision, ab.f1));
                }
            }
            _ => undefined += 1,
        }
        for x in [&a, &b] {
            norm_dev = norm_dev.max((vitscore(x, x).unwrap().f1 - 1.0).abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = sym_dev <= 1e-9
        && out_of_range.is_empty()
        && norm_dev <= 1e-9
        && undefined == 0
        && elapsed < Duration::from_secs(5);
    let mut detail = format!(
        "symmetry max dev {sym_dev:.1e}; normalization max dev {norm_dev:.1e}; {} of 200 F1 values outside [-1, 1]; {undefined} undefined; {:.2}s",
        out_of_range.len(),
        elapsed.as_secs_f64()
    );
    if let Some((r, p, f)) = out_of_range.first() {
        detail += &format!("; first violation R={r:.4} P={p:.4} F1={f:.4} (R and P of opposite sign)");
    }
    outcome(pass, detail)
}

/// Independent brute force: explicit loops over raw rows.
/// Returns (recall, precision, mean similarity).
fn brute_force(a: &[Vec<f64>], b: &[Vec<f64>]) -> (f64, f64, f64) {
    let unit = |v: &Vec<f64>| {
        let mut s = 0.0;
        for x in v {
            s += x * x;
        }
        let norm = s.sqrt();
        v.iter().map(|x| x / norm).collect::<Vec<f64>>()
    };
    let a: Vec<Vec<f64>> = a.iter().map(unit).collect();
    let b: Vec<Vec<f64>> = b.iter().map(unit).collect();
    let cos = |x: &Vec<f64>, y: &Vec<f64>| {
        let mut s = 0.0;
        for k in 0..x.len() {
            s += x[k] * y[k];
        }
        s
    };
    let mut recall = 0.0;
    for x in &a {
        let mut best = f64::NEG_INFINITY;
        for y in &b {
            best = best.max(cos(x, y));
        }
        recall += best;
    }
    recall /= a.len() as f64;
    let mut precision = 0.0;
    for y in &b {
        let mut best = f64::NEG_INFINITY;
        for x in &a {
            best = best.max(cos(x, y));
        }
        precision += best;
    }
    precision /= b.len() as f64;

    let mut total = 0.0;
    for x in &a {
        for y in &b {
            total += cos(x, y);
        }
    }
    (recall, precision, total / (a.len() * b.len()) as f64)
}

fn greedy_match_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(ORACLE_SEED);
    let (mut max_origin, mut max_mean) = (0.0f64, 0.0f64);
    let (mut compared, mut undefined, mut mismatched_undefined) = (0, 0, 0);
    for _ in 0..500 {
        let dim = rng.random_range(1..=4);
        let (n, m) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let gen = |rng: &mut ChaCha8Rng, rows: usize| -> Vec<Vec<f64>> {
            (0..rows).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let (ra, rb) = (gen(&mut rng, n), gen(&mut rng, m));
        let (Ok(a), Ok(b)) = (FeatureMatrix::from_rows(&ra), FeatureMatrix::from_rows(&rb)) else {
            continue;
        };
        let (recall, precision, mean) = brute_force(&ra, &rb);
        match vitscore(&a, &b) {
            Ok(r) => {
                let f1 = 2.0 * recall * precision / (recall + precision);
                max_origin = max_origin.max((r.f1 - f1).abs());
            }
            Err(_) => {
                undefined += 1;
                mismatched_undefined += usize::from((recall + precision).abs() > 1e-12);
            }
        }
        max_mean = max_mean.max((vitscore_mean(&a, &b).unwrap().f1 - mean).abs());
        compared += 1;
    }
    let elapsed = start.elapsed();
    let pass = compared == 500
        && mismatched_undefined == 0
        && max_origin <= 1e-12
        && max_mean <= 1e-12
        && elapsed < Duration::from_secs(5);
    outcome(
        pass,
        format!(
            "{compared} instances ({undefined} with R+P=0, {mismatched_undefined} disputed by the oracle); max |Δ| origin {max_origin:.1e}, mean pooling {max_mean:.1e}; {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn classical_anchors() -> Outcome {
    let black = Image::filled(32, 32, 3, 0).unwrap();
    let white = Image::filled(32, 32, 3, 255).unwrap();
    let psnr_bw = psnr(&black, &white).unwrap();

    let fixture = common::fixture_image(0, common::FIXTURE_SIZE);
    let ms_identity = ms_ssim(&fixture, &fixture).unwrap();
    let db = ms_ssim_db(0.9).unwrap();

    let (x, y) = (100.0, 150.0);
    let c1 = (K1 * MAX_PIXEL).powi(2);
    let expected = (2.0 * x * y + c1) / (x * x + y * y + c1);
    let ssim_const = ssim(&Image::filled(32, 32, 3, 100).unwrap(), &Image::filled(32, 32, 3, 150).unwrap()).unwrap();

    let pass =
        psnr_bw == 0.0 && (ms_identity - 1.0).abs() <= 1e-9 && db == 10.0 && (ssim_const - expected).abs() <= 1e-6;
    outcome(
        pass,
        format!(
            "psnr(0,255)={psnr_bw}; ms_ssim identity={ms_identity:.12}; ms_ssim_db(0.9)={db}; ssim const={ssim_const:.9} vs {expected:.9}"
        ),
    )
}

fn capacity_anchors() -> Outcome {
    let at0 = awgn_capacity(0.0);
    let unit_gain_dev = [-20.0, -5.0, 0.0, 3.0, 10.0, 25.0]
        .iter()
        .map(|&s| (rayleigh_capacity(s, 1.0).unwrap() - awgn_capacity(s)).abs())
        .fold(0.0f64, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(FADING_SEED);
    let draws = 1_000_000;
    let mean = (0..draws).map(|_| sample_fading_gain(&mut rng)).sum::<f64>() / draws as f64;
    let pass = at0 == 0.5 && unit_gain_dev <= 1e-12 && (mean - 1.0).abs() <= 0.01;
    outcome(
        pass,
        format!(
            "awgn(0 dB)={at0}; max |rayleigh(s,1)-awgn(s)|={unit_gain_dev:.1e}; fading mean over 1e6 draws={mean:.5}"
        ),
    )
}

fn non_decreasing_fraction(values: &[f64]) -> (usize, usize) {
    let ok = values.windows(2).filter(|w| w[1] >= w[0]).count();
    (ok, values.len().saturating_sub(1))
}

fn channel_sweep_monotonicity() -> Outcome {
    let dataset = common::fixture_set(5);
    let weights = generate_random_bundle(SWEEP_BUNDLE_SEED);
    let sweep = ChannelSweep::new(ChannelFamily::Awgn, vec![10.0], vec![0.05, 0.1, 0.3], SWEEP_SEED);
    let start = Instant::now();
    let points = channel_sweep(&dataset, &weights, &sweep).unwrap();
    let elapsed = start.elapsed();

    let vit: Vec<f64> = points.iter().map(|p| p.vitscore).collect();
    let ps: Vec<f64> = points.iter().map(|p| p.psnr).collect();
    let (vok, vn) = non_decreasing_fraction(&vit);
    let (pok, pn) = non_decreasing_fraction(&ps);
    let frac = |ok: usize, n: usize| ok as f64 / n as f64;
    let pass = frac(vok, vn) >= 0.9 && frac(pok, pn) >= 0.9 && elapsed < Duration::from_secs(120);
    let curve = points
        .iter()
        .map(|p| format!("cbr {}: vit {:.4} psnr {:.2} outage {:.1}", p.cbr, p.vitscore, p.psnr, p.outage_rate))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        pass,
        format!(
            "ViTScore {vok}/{vn}, PSNR {pok}/{pn} adjacent pairs non-decreasing; {:.1}s; {curve}",
            elapsed.as_secs_f64()
        ),
    )
}

struct Run {
    status: i32,
    stdout: Vec<u8>,
}

fn vitscore_cli(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_vitscore"))
        .args(args)
        .env_remove("VITSCORE_WEIGHTS")
        .output()
        .expect("spawn vitscore");
    Run { status: out.status.code().unwrap_or(-1), stdout: out.stdout }
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let (data, three) = (p("data"), p("three"));
    common::write_fixture_dir(Path::new(&data), 2);
    common::write_fixture_dir(Path::new(&three), 3);
    std::fs::write(p("external.csv"), "image_a,image_b,score\na,b,0.2\na,c,0.4\nb,c,0.9\n").unwrap();
    let img_a = format!("{data}/fixture_0.ppm");
    let img_b = format!("{data}/fixture_1.ppm");
    let tiny = [
        "--image-size",
        "32",
        "--patch-size",
        "8",
        "--embed-dim",
        "32",
        "--depth",
        "2",
        "--heads",
        "4",
        "--mlp-dim",
        "64",
    ];

    let mut failures = Vec::new();
    let mut run_twice = |label: &str, args: Vec<String>, out_file: Option<String>| -> Vec<u8> {
        let argv: Vec<&str> = args.iter().map(String::as_str).collect();
        let mut outputs = Vec::new();
        for _ in 0..2 {
            let run = vitscore_cli(&argv);
            if run.status != 0 {
                failures.push(format!("{label} exited {}", run.status));
            }
            let mut bytes = run.stdout;
            if let Some(f) = &out_file {
                bytes.extend(std::fs::read(f).unwrap_or_default());
                let _ = std::fs::remove_file(f);
            }
            outputs.push(bytes);
        }
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            failures.push(format!("{label} output differs or is empty"));
        }
        outputs.swap_remove(0)
    };
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<String>>();

    let bundle = p("tiny.vswb");
    let mut gen = s(&["bundle", "gen-random", "--seed", "7", "--out", &bundle]);
    gen.extend(s(&tiny));
    run_twice("bundle gen-random", gen.clone(), Some(bundle.clone()));
    let _ = vitscore_cli(&gen.iter().map(String::as_str).collect::<Vec<_>>());

    run_twice("bundle inspect", s(&["bundle", "inspect", &bundle]), None);
    run_twice(
        "score",
        s(&["score", "--image-a", &img_a, "--image-b", &img_b, "--weights", &bundle, "--classical"]),
        None,
    );
    run_twice(
        "score --ablation-mean",
        s(&["score", "--image-a", &img_a, "--image-b", &img_b, "--weights", &bundle, "--ablation-mean"]),
        None,
    );
    let transforms = run_twice(
        "sweep-transforms",
        s(&["sweep-transforms", "--dataset", &three, "--weights", &bundle, "--out", &p("t.csv")]),
        Some(p("t.csv")),
    );
    let channel = run_twice(
        "sweep-channel",
        s(&["sweep-channel", "--dataset", &data, "--weights", &bundle, "--snr-list", "0", "--cbr-list", "0.05,0.1"]),
        None,
    );
    run_twice(
        "sweep-channel rayleigh",
        s(&[
            "sweep-channel",
            "--dataset",
            &data,
            "--weights",
            &bundle,
            "--family",
            "rayleigh",
            "--snr-list",
            "5",
            "--cbr-list",
            "0.2",
            "--realizations",
            "3",
            "--seed",
            "4",
            "--format",
            "plotdata",
        ]),
        None,
    );
    for metric in ["vitscore", "psnr"] {
        run_twice(
            &format!("stats pairs {metric}"),
            s(&[
                "stats",
                "pairs",
                "--dataset",
                &three,
                "--metric",
                metric,
                "--weights",
                &bundle,
                "--sample",
                "2",
                "--seed",
                "5",
            ]),
            None,
        );
    }
    run_twice("stats external", s(&["stats", "external", "--scores", &p("external.csv"), "--dataset-id", "x"]), None);

    let lines = |b: &[u8]| String::from_utf8_lossy(b).lines().count();
    if lines(&transforms) != 8 {
        failures.push(format!("sweep-transforms produced {} lines, expected header + 7", lines(&transforms)));
    }
    if lines(&channel) != 3 {
        failures.push(format!("sweep-channel produced {} lines, expected header + 2", lines(&channel)));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "11 invocations byte-identical across two runs".to_string()
        } else {
            failures.join("; ")
        },
    )
}

fn degenerate_input_guards() -> Outcome {
    let mut checks: Vec<(&str, bool)> = Vec::new();

    // Shape mismatch
    let a = Matrix::zeros(2, 3);
    checks.push(("matmul shape", matches!(matmul(&a, &a), Err(Error::Shape { .. }))));
    let f2 = FeatureMatrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
    let f3 = FeatureMatrix::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
    checks.push(("vitscore dims", matches!(vitscore(&f2, &f3), Err(Error::Shape { .. }))));
    let small = Image::filled(8, 8, 3, 0).unwrap();
    let other = Image::filled(9, 8, 3, 0).unwrap();
    checks.push(("psnr dims", matches!(psnr(&small, &other), Err(Error::Shape { .. }))));

    // Zero variance and degenerate features
    checks.push((
        "pearson zero variance",
        matches!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(Error::DegenerateInput(_))),
    ));
    let flat = PairStats {
        dataset_id: "d".into(),
        metric_id: "vitscore".into(),
        mu: 0.5,
        sigma: 0.0,
        pair_count: 1,
        sample_seed: 0,
    };
    checks.push((
        "standard score sigma 0",
        matches!(standard_score(0.7, &flat, 1.0), Err(Error::DegenerateStats { .. })),
    ));
    checks.push((
        "zero feature row",
        matches!(FeatureMatrix::from_rows(&[vec![0.0, 0.0]]), Err(Error::DegenerateFeature { row: 0 })),
    ));
    let e1 = FeatureMatrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
    let e2 = FeatureMatrix::from_rows(&[vec![0.0, 1.0]]).unwrap();
    checks.push(("undefined F1", matches!(vitscore(&e1, &e2), Err(Error::UndefinedF1))));
    checks.push(("ms-ssim too small", matches!(ms_ssim(&small, &small), Err(Error::Input(_)))));
    checks.push(("empty report", matches!(Report::new(&["a"], 1).render(ReportFormat::Csv), Err(Error::EmptyReport))));

    // Outage
    let fixture = common::fixture_image(1, 64);
    let out =
        transmit(&fixture, &ChannelConfig { family: ChannelFamily::Awgn, snr_db: 0.0, cbr: 1e-6, seed: 0 }).unwrap();
    checks.push(("outage flagged", out.is_outage() && out.reconstructed.pixels().iter().all(|&p| p == 128)));
    checks.push(("negative gain", matches!(rayleigh_capacity(0.0, -1.0), Err(Error::Domain(_)))));

    // Corrupt bundles, injected into a written file
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.vswb");
    let bundle: WeightBundle = common::tiny_bundle(1);
    write_bundle(&bundle, &path).unwrap();
    let good = std::fs::read(&path).unwrap();
    let inject = |bytes: &[u8]| {
        let p = dir.path().join("bad.vswb");
        std::fs::write(&p, bytes).unwrap();
        read_bundle(&p)
    };
    let mut bad_magic = good.clone();
    bad_magic[0] ^= 0xFF;
    checks.push(("bad magic", matches!(inject(&bad_magic), Err(Error::BadMagic))));
    checks.push(("truncated payload", matches!(inject(&good[..good.len() - 10]), Err(Error::Truncated { .. }))));
    checks.push(("truncated header", matches!(inject(&good[..12]), Err(Error::Truncated { .. } | Error::Header(_)))));
    let mut incomplete = bundle.clone();
    incomplete.entries.remove("blocks.1.mlp.fc2.bias");
    checks.push((
        "missing tensor",
        matches!(write_bundle(&incomplete, dir.path().join("x.vswb")), Err(Error::ManifestIncomplete { ref tensor }) if tensor == "blocks.1.mlp.fc2.bias"),
    ));
    let header_len = u64::from_le_bytes(good[6..14].try_into().unwrap()) as usize;
    let header = String::from_utf8(good[14..14 + header_len].to_vec()).unwrap();
    let patched = header.replacen("[1,32]", "[1,33]", 1);
    let mut shape_bad = good[..6].to_vec();
    shape_bad.extend((patched.len() as u64).to_le_bytes());
    shape_bad.extend(patched.as_bytes());
    shape_bad.extend(&good[14 + header_len..]);
    checks.push((
        "shape/payload mismatch",
        patched != header && matches!(inject(&shape_bad), Err(Error::ShapeProductMismatch { .. })),
    ));
    let feat = dir.path().join("f.vswb");
    write_features(&Matrix::identity(3), &feat).unwrap();
    checks.push(("features round trip", read_features(&feat).map(|m| m == Matrix::identity(3)).unwrap_or(false)));

    // CLI exit codes under faults
    let img = dir.path().join("i.ppm");
    save_image(&fixture, &img).unwrap();
    let (img_s, path_s) = (img.to_string_lossy().into_owned(), path.to_string_lossy().into_owned());
    let missing = vitscore_cli(&["score", "--image-a", &img_s, "--image-b", &img_s, "--weights", "/nonexistent.vswb"]);
    checks.push(("cli missing weights exit 1", missing.status == 1));
    let bad = dir.path().join("bad.vswb").to_string_lossy().into_owned();
    std::fs::write(&bad, &bad_magic).unwrap();
    let corrupt = vitscore_cli(&["score", "--image-a", &img_s, "--image-b", &img_s, "--weights", &bad]);
    checks.push(("cli corrupt bundle exit 2", corrupt.status == 2));
    let usage = vitscore_cli(&["score", "--no-such-flag"]);
    checks.push(("cli usage exit 1", usage.status == 1));
    let stats_file = dir.path().join("flat.csv");
    std::fs::write(
        &stats_file,
        "dataset_id,metric_id,mu,sigma,pair_count,sample_seed,degenerate\nd,psnr,10.000000,0.000000,1,0,true\n",
    )
    .unwrap();
    let ds = dir.path().join("ds");
    std::fs::create_dir(&ds).unwrap();
    save_image(&common::fixture_image(1, common::FIXTURE_SIZE), ds.join("a.ppm")).unwrap();
    let degenerate = vitscore_cli(&[
        "sweep-transforms",
        "--dataset",
        &ds.to_string_lossy(),
        "--weights",
        &path_s,
        "--transforms",
        "inverse",
        "--pair-stats",
        &stats_file.to_string_lossy(),
    ]);
    checks.push(("cli degenerate stats exit 2", degenerate.status == 2));

    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} guards raised their named errors", checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    )
}
