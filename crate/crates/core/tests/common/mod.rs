//! Deterministic synthetic fixture images shared by the integration tests.

#![allow(dead_code)]

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vitscore_core::imaging::{save_image, Image};
use vitscore_core::weights::{generate_random_bundle_for, EncoderConfig, WeightBundle};

pub const FIXTURE_SIZE: usize = 192;

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Smoothly interpolated random lattice, in [0, 1].
fn value_noise(rng: &mut ChaCha8Rng, cells: usize) -> impl Fn(f64, f64) -> f64 {
    let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.random()).collect();
    move |u: f64, v: f64| {
        let (x, y) = (u * cells as f64, v * cells as f64);
        let (x0, y0) = ((x.floor() as usize).min(cells - 1), (y.floor() as usize).min(cells - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let s = |t: f64| t * t * (3.0 - 2.0 * t);
        let at = |i: usize, j: usize| lattice[j * (cells + 1) + i];
        let top = at(x0, y0) + (at(x0 + 1, y0) - at(x0, y0)) * s(fx);
        let bottom = at(x0, y0 + 1) + (at(x0 + 1, y0 + 1) - at(x0, y0 + 1)) * s(fx);
        top + (bottom - top) * s(fy)
    }
}

/// Fixture scene `index` (0..5 are distinct designs; larger indices reuse
/// them with a different seed).
pub fn fixture_image(index: usize, size: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1C5 + index as u64);
    let coarse = value_noise(&mut rng, 6);
    let fine = value_noise(&mut rng, 24);
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..5)
        .map(|_| {
            let c = [rng.random_range(40.0..220.0), rng.random_range(40.0..220.0), rng.random_range(40.0..220.0)];
            (rng.random(), rng.random(), rng.random_range(0.05..0.2), c)
        })
        .collect();
    let grain: Vec<f64> = (0..size * size * 3).map(|_| rng.random_range(-4.0..4.0)).collect();
    let design = index % 5;
    let n = size as f64;

    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (x as f64 / n, y as f64 / n);
            let base: [f64; 3] = match design {
                // Sky, sun and textured ground.
                0 => {
                    if v < 0.55 + 0.05 * (u * 9.0).sin() {
                        let sun = if (u - 0.7).hypot(v - 0.25) < 0.1 { 90.0 } else { 0.0 };
                        [90.0 + 80.0 * v + sun, 140.0 + 60.0 * v + sun, 230.0 - 40.0 * v]
                    } else {
                        let t = fine(u, v);
                        [60.0 + 90.0 * t, 110.0 + 80.0 * t, 40.0 + 30.0 * t]
                    }
                }
                // Shaded stripes.
                1 => {
                    let stripe = if ((u * 8.0 + v * 3.0).floor() as i64) % 2 == 0 { 1.0 } else { 0.35 };
                    let shade = 0.5 + 0.5 * coarse(u, v);
                    [220.0 * stripe * shade, 160.0 * shade, 200.0 * (1.0 - stripe) * shade + 30.0]
                }
                // Colored blobs over a gradient.
                2 => {
                    let mut c = [50.0 + 100.0 * u, 60.0, 80.0 + 80.0 * v];
                    for (bx, by, r, col) in &blobs {
                        let w = (-((u - bx).powi(2) + (v - by).powi(2)) / (2.0 * r * r)).exp();
                        for ch in 0..3 {
                            c[ch] = c[ch] * (1.0 - w) + col[ch] * w;
                        }
                    }
                    c
                }
                // Multi-scale texture.
                3 => {
                    let t = 0.6 * coarse(u, v) + 0.4 * fine(u, v);
                    [255.0 * t, 200.0 * t + 30.0, 255.0 * (1.0 - t)]
                }
                // Rings with a diagonal ramp.
                _ => {
                    let r = (u - 0.45).hypot(v - 0.55);
                    let ring = 0.5 + 0.5 * (r * 40.0).cos();
                    [200.0 * ring + 40.0 * u, 120.0 + 100.0 * (u + v) / 2.0, 220.0 * (1.0 - ring) * coarse(u, v)]
                }
            };
            let at = (y * size + x) * 3;
            for ch in 0..3 {
                pixels.push(clamp_u8(base[ch] + grain[at + ch]));
            }
        }
    }
    Image::new(size, size, 3, pixels).expect("valid fixture")
}

pub fn fixture_set(count: usize) -> Vec<Image> {
    (0..count).map(|i| fixture_image(i, FIXTURE_SIZE)).collect()
}

/// Writes `count` fixtures as `fixture_<i>.ppm` into `dir`.
pub fn write_fixture_dir(dir: &Path, count: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, img) in fixture_set(count).iter().enumerate() {
        save_image(img, dir.join(format!("fixture_{i}.ppm"))).unwrap();
    }
}

/// A four-head, two-block encoder that runs in milliseconds.
pub fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        image_size: 32,
        patch_size: 8,
        embed_dim: 32,
        depth: 2,
        num_heads: 4,
        mlp_dim: 64,
        layer_norm_eps: 1e-6,
    }
}

pub fn tiny_bundle(seed: u64) -> WeightBundle {
    generate_random_bundle_for(&tiny_config(), seed).unwrap()
}
