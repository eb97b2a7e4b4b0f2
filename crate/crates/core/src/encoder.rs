//! Inference-only ViT forward pass producing per-patch feature rows.
//!
//! Pipeline: bilinear resize to the configured input size, per-channel
//! normalization `(x/255 − 0.5) / 0.5`, non-overlapping patches, linear patch
//! embedding, class token and position embedding, `depth` pre-norm
//! transformer blocks, final layer norm. The class-token row is dropped and
//! the remaining rows are ℓ2-normalized.

use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, Image};
use crate::tensor::{self, gelu_inplace, layer_norm, linear, matmul, Matrix};
use crate::vitscore::FeatureMatrix;
use crate::weights::{EncoderConfig, Tensor, WeightBundle, CHANNELS};

/// Normalized `height × width × 3` input, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelTensor {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// Resizes to `size × size`, expands grayscale to RGB and normalizes to
/// `[-1, 1]`.
pub fn preprocess(img: &Image, size: usize) -> Result<PixelTensor> {
    if img.is_empty() {
        return Err(Error::Input("empty image".into()));
    }
    let rgb = img.to_rgb();
    let raw: Vec<f32> = rgb.pixels().iter().map(|&p| f32::from(p)).collect();
    let resized = if rgb.width() == size && rgb.height() == size {
        raw
    } else {
        resize_bilinear(&raw, rgb.width(), rgb.height(), CHANNELS, size, size)
    };
    Ok(PixelTensor { height: size, width: size, data: resized.into_iter().map(normalize_sample).collect() })
}

#[inline]
fn normalize_sample(v: f32) -> f32 {
    (v / 255.0 - 0.5) / 0.5
}

/// Splits into `patch × patch` tiles, enumerated row-major over the grid, each
/// flattened in (row, column, channel) order.
pub fn patchify(t: &PixelTensor, patch: usize) -> Result<Matrix> {
    if patch == 0
        || !t.height.is_multiple_of(patch)
        || !t.width.is_multiple_of(patch)
        || t.data.len() != t.height * t.width * CHANNELS
    {
        return Err(Error::Shape { op: "patchify", left: vec![t.height, t.width, CHANNELS], right: vec![patch] });
    }
    let (gh, gw) = (t.height / patch, t.width / patch);
    let dim = patch * patch * CHANNELS;
    let mut out = Matrix::zeros(gh * gw, dim);
    for gy in 0..gh {
        for gx in 0..gw {
            let row = out.row_mut(gy * gw + gx);
            for py in 0..patch {
                let y = gy * patch + py;
                let src = (y * t.width + gx * patch) * CHANNELS;
                let dst = py * patch * CHANNELS;
                row[dst..dst + patch * CHANNELS].copy_from_slice(&t.data[src..src + patch * CHANNELS]);
            }
        }
    }
    Ok(out)
}

/// A validated view over a weight bundle.
#[derive(Debug, Clone, Copy)]
pub struct Encoder<'w> {
    cfg: EncoderConfig,
    weights: &'w WeightBundle,
}

impl<'w> Encoder<'w> {
    pub fn new(weights: &'w WeightBundle) -> Result<Self> {
        weights.validate()?;
        Ok(Self { cfg: weights.config(), weights })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    fn tensor(&self, name: &str) -> Result<&'w Tensor> {
        self.weights.get(name)
    }

    fn data(&self, name: &str) -> Result<&'w [f32]> {
        Ok(&self.tensor(name)?.data)
    }

    pub fn encode(&self, img: &Image) -> Result<FeatureMatrix> {
        FeatureMatrix::from_matrix(&self.encode_matrix(img)?)
    }

    /// Unit-norm feature rows as an `f32` matrix, one row per patch.
    pub fn encode_matrix(&self, img: &Image) -> Result<Matrix> {
        let hidden = self.forward(img)?;
        let patches = Matrix::from_vec(hidden.rows() - 1, hidden.cols(), hidden.data()[hidden.cols()..].to_vec())?;
        tensor::l2_normalize_rows(&patches)
    }

    /// Final-layer-norm hidden states for all tokens, class token first.
    pub fn forward(&self, img: &Image) -> Result<Matrix> {
        let cfg = &self.cfg;
        let d = cfg.embed_dim;
        let pixels = preprocess(img, cfg.image_size)?;
        let patches = patchify(&pixels, cfg.patch_size)?;
        let embedded = linear(&patches, self.data("patch_embed.weight")?, d, self.data("patch_embed.bias")?)?;

        let mut tokens = Matrix::zeros(embedded.rows() + 1, d);
        tokens.row_mut(0).copy_from_slice(self.data("cls_token")?);
        tokens.data_mut()[d..].copy_from_slice(embedded.data());
        let pos = self.tensor("pos_embed")?.to_matrix()?;
        tokens.add_assign(&pos)?;

        for layer in 0..cfg.depth {
            self.block(&mut tokens, layer)?;
        }
        layer_norm(&tokens, self.data("norm.weight")?, self.data("norm.bias")?, cfg.layer_norm_eps)
    }

    fn block(&self, x: &mut Matrix, layer: usize) -> Result<()> {
        let cfg = &self.cfg;
        let d = cfg.embed_dim;
        let p = format!("blocks.{layer}");
        let name = |suffix: &str| format!("{p}.{suffix}");

        let h = layer_norm(x, self.data(&name("norm1.weight"))?, self.data(&name("norm1.bias"))?, cfg.layer_norm_eps)?;
        let qkv = linear(&h, self.data(&name("attn.qkv.weight"))?, 3 * d, self.data(&name("attn.qkv.bias"))?)?;
        let attended = self.attention(&qkv)?;
        let projected =
            linear(&attended, self.data(&name("attn.proj.weight"))?, d, self.data(&name("attn.proj.bias"))?)?;
        x.add_assign(&projected)?;

        let h = layer_norm(x, self.data(&name("norm2.weight"))?, self.data(&name("norm2.bias"))?, cfg.layer_norm_eps)?;
        let mut hidden =
            linear(&h, self.data(&name("mlp.fc1.weight"))?, cfg.mlp_dim, self.data(&name("mlp.fc1.bias"))?)?;
        gelu_inplace(&mut hidden);
        let out = linear(&hidden, self.data(&name("mlp.fc2.weight"))?, d, self.data(&name("mlp.fc2.bias"))?)?;
        x.add_assign(&out)
    }

    /// Multi-head scaled dot-product attention over a fused `[T, 3D]` qkv.
    fn attention(&self, qkv: &Matrix) -> Result<Matrix> {
        let d = self.cfg.embed_dim;
        let hd = self.cfg.head_dim();
        let scale = 1.0 / (hd as f32).sqrt();
        let tokens = qkv.rows();
        let mut out = Matrix::zeros(tokens, d);
        for head in 0..self.cfg.num_heads {
            let mut q = qkv.column_slice(head * hd, hd)?;
            let k = qkv.column_slice(d + head * hd, hd)?;
            let v = qkv.column_slice(2 * d + head * hd, hd)?;
            q.scale(scale);
            let mut weights = tensor::matmul_transposed(&q, &k)?;
            tensor::softmax_rows_inplace(&mut weights);
            let ctx = matmul(&weights, &v)?;
            for t in 0..tokens {
                out.row_mut(t)[head * hd..(head + 1) * hd].copy_from_slice(ctx.row(t));
            }
        }
        Ok(out)
    }
}

/// One-shot encode; prefer [`Encoder`] when encoding many images.
pub fn encode(img: &Image, weights: &WeightBundle) -> Result<FeatureMatrix> {
    Encoder::new(weights)?.encode(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::generate_random_bundle_for;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn small_config() -> EncoderConfig {
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

    fn noise_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::new(w, h, 3, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn preprocess_maps_white_to_one() {
        let t = preprocess(&Image::filled(224, 224, 3, 255).unwrap(), 224).unwrap();
        assert!(t.data.iter().all(|&x| x == 1.0));
        let t = preprocess(&Image::filled(224, 224, 3, 0).unwrap(), 224).unwrap();
        assert!(t.data.iter().all(|&x| x == -1.0));
    }

    #[test]
    fn preprocess_mid_gray_is_zero() {
        // Alternating 127/128 columns at 448 px halve to exactly 127.5.
        let img = Image::from_fn_rgb(448, 448, |x, _| {
            let v = if x % 2 == 0 { 127 } else { 128 };
            [v, v, v]
        })
        .unwrap();
        let t = preprocess(&img, 224).unwrap();
        assert_eq!((t.height, t.width, t.data.len()), (224, 224, 224 * 224 * 3));
        assert!(t.data.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn preprocess_expands_grayscale_and_rejects_nothing_valid() {
        let gray = Image::filled(10, 20, 1, 255).unwrap();
        let t = preprocess(&gray, 32).unwrap();
        assert_eq!(t.data.len(), 32 * 32 * 3);
        assert!(t.data.iter().all(|&x| (x - 1.0).abs() < 1e-6));
    }

    #[test]
    fn patchify_layout() {
        let mut t = PixelTensor { height: 32, width: 32, data: vec![0.0; 32 * 32 * 3] };
        let m = patchify(&t, 8).unwrap();
        assert_eq!(m.shape(), (16, 192));

        t.data[0] = 5.0;
        let m = patchify(&t, 8).unwrap();
        assert_eq!(m.get(0, 0), 5.0);
        assert_eq!(m.data().iter().filter(|&&x| x != 0.0).count(), 1);

        // pixel (y=9, x=17, c=2) lives in patch (1, 2) at (1, 1, 2)
        let mut t2 = t.clone();
        t2.data.iter_mut().for_each(|x| *x = 0.0);
        t2.data[(9 * 32 + 17) * 3 + 2] = 1.0;
        let m = patchify(&t2, 8).unwrap();
        assert_eq!(m.get(4 + 2, (8 + 1) * 3 + 2), 1.0);

        assert!(matches!(
            patchify(&PixelTensor { height: 30, width: 32, data: vec![0.0; 30 * 32 * 3] }, 8),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn constant_image_gives_identical_patch_rows() {
        let t = preprocess(&Image::filled(32, 32, 3, 77).unwrap(), 32).unwrap();
        let m = patchify(&t, 8).unwrap();
        for i in 1..m.rows() {
            assert_eq!(m.row(i), m.row(0));
        }
    }

    #[test]
    fn swapping_patches_swaps_rows() {
        let img = noise_image(32, 32, 1);
        let t = preprocess(&img, 32).unwrap();
        let mut swapped = t.clone();
        // swap grid cells (0, 0) and (3, 2)
        for py in 0..8 {
            for px in 0..8 {
                for c in 0..3 {
                    let a = (py * 32 + px) * 3 + c;
                    let b = ((24 + py) * 32 + 16 + px) * 3 + c;
                    swapped.data.swap(a, b);
                }
            }
        }
        let m = patchify(&t, 8).unwrap();
        let s = patchify(&swapped, 8).unwrap();
        assert_eq!(m.row(0), s.row(14));
        assert_eq!(m.row(14), s.row(0));
        assert_eq!(m.row(5), s.row(5));
    }

    #[test]
    fn encode_shape_norm_and_determinism() {
        let bundle = generate_random_bundle_for(&small_config(), 3).unwrap();
        let enc = Encoder::new(&bundle).unwrap();
        let img = noise_image(40, 28, 9);
        let a = enc.encode(&img).unwrap();
        let b = enc.encode(&img).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.len(), a.dim()), (16, 32));
        let m = enc.encode_matrix(&img).unwrap();
        for i in 0..m.rows() {
            assert!((tensor::dot_f64(m.row(i), m.row(i)).sqrt() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn encode_rejects_incomplete_bundle() {
        let mut bundle = generate_random_bundle_for(&small_config(), 3).unwrap();
        bundle.entries.remove("cls_token");
        assert!(matches!(Encoder::new(&bundle), Err(Error::ManifestIncomplete { .. })));
    }
}
