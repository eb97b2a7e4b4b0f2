//! VSWB1 tensor containers and the ViT weight bundle built on top of them.
//!
//! Layout of a container file:
//!
//! ```text
//! b"VSWB1\0"                      6 bytes
//! header_len                      u64, little-endian
//! header                          header_len bytes of UTF-8 JSON
//! payload                         raw little-endian f32 tensor data
//! ```
//!
//! The header is `{"metadata": {...}, "tensors": [{"name", "dtype", "shape",
//! "offset", "nbytes"}, ...]}` with offsets relative to the payload start.
//! Tensors are stored contiguously in descriptor order.
//!
//! Weight bundles sort tensors by name. Linear weights use the `[out, in]`
//! layout. The patch-embedding weight is `[embed_dim, P·P·3]`, and its input
//! axis is flattened in (row, column, channel) order to match
//! [`crate::encoder::patchify`]. The fused attention projection
//! `blocks.{i}.attn.qkv.weight` stacks the query, key and value rows in that
//! order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 6] = b"VSWB1\0";
pub const CANONICAL_MODEL_ID: &str = "vit_base_patch16_224";
pub const RANDOM_INIT_SCALE: f32 = 0.02;
pub const FEATURES_TENSOR: &str = "features";

/// Hyperparameters of a ViT encoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    pub layer_norm_eps: f64,
}

pub const CHANNELS: usize = 3;

impl EncoderConfig {
    /// ViT-Base/16 at 224 px.
    pub const fn vit_base_16() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            embed_dim: 768,
            depth: 12,
            num_heads: 12,
            mlp_dim: 3072,
            layer_norm_eps: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidBundle(msg));
        if self.patch_size == 0 || self.image_size == 0 {
            return bad("image_size and patch_size must be positive".into());
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!("image_size {} not divisible by patch_size {}", self.image_size, self.patch_size));
        }
        if self.num_heads == 0 || self.embed_dim == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad(format!("embed_dim {} not divisible by num_heads {}", self.embed_dim, self.num_heads));
        }
        if self.depth == 0 || self.mlp_dim == 0 {
            return bad("depth and mlp_dim must be positive".into());
        }
        if !(self.layer_norm_eps > 0.0) {
            return bad("layer_norm_eps must be positive".into());
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_size() * self.grid_size()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * CHANNELS
    }

    /// Every tensor an encoder with this config needs, with its shape, in a
    /// fixed order.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.embed_dim;
        let mut out = vec![
            ("patch_embed.weight".to_string(), vec![d, self.patch_dim()]),
            ("patch_embed.bias".to_string(), vec![d]),
            ("cls_token".to_string(), vec![1, d]),
            ("pos_embed".to_string(), vec![self.num_patches() + 1, d]),
        ];
        for i in 0..self.depth {
            let p = format!("blocks.{i}");
            out.extend([
                (format!("{p}.norm1.weight"), vec![d]),
                (format!("{p}.norm1.bias"), vec![d]),
                (format!("{p}.attn.qkv.weight"), vec![3 * d, d]),
                (format!("{p}.attn.qkv.bias"), vec![3 * d]),
                (format!("{p}.attn.proj.weight"), vec![d, d]),
                (format!("{p}.attn.proj.bias"), vec![d]),
                (format!("{p}.norm2.weight"), vec![d]),
                (format!("{p}.norm2.bias"), vec![d]),
                (format!("{p}.mlp.fc1.weight"), vec![self.mlp_dim, d]),
                (format!("{p}.mlp.fc1.bias"), vec![self.mlp_dim]),
                (format!("{p}.mlp.fc2.weight"), vec![d, self.mlp_dim]),
                (format!("{p}.mlp.fc2.bias"), vec![d]),
            ]);
        }
        out.push(("norm.weight".to_string(), vec![d]));
        out.push(("norm.bias".to_string(), vec![d]));
        out
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::vit_base_16()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self { shape, data }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Views a rank-1 or rank-2 tensor as a matrix (rank 1 becomes one row).
    pub fn to_matrix(&self) -> Result<Matrix> {
        let (rows, cols) = match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            other => return Err(Error::Shape { op: "to_matrix", left: other.to_vec(), right: vec![] }),
        };
        Matrix::from_vec(rows, cols, self.data.clone())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct Descriptor {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    metadata: serde_json::Value,
    tensors: Vec<Descriptor>,
}

/// A raw VSWB1 container: free-form JSON metadata plus ordered tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn write_container(file: &TensorFile, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_container(file)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

pub fn encode_container(file: &TensorFile) -> Result<Vec<u8>> {
    let mut offset = 0u64;
    let mut descriptors = Vec::with_capacity(file.tensors.len());
    for (name, t) in &file.tensors {
        if t.numel() != t.data.len() {
            return Err(Error::ShapeProductMismatch {
                tensor: name.clone(),
                shape: t.shape.clone(),
                values: t.data.len(),
            });
        }
        let nbytes = (t.data.len() * 4) as u64;
        descriptors.push(Descriptor {
            name: name.clone(),
            dtype: "f32".into(),
            shape: t.shape.clone(),
            offset,
            nbytes,
        });
        offset += nbytes;
    }
    let header = serde_json::to_vec(&Header { metadata: file.metadata.clone(), tensors: descriptors })
        .map_err(|e| Error::Header(e.to_string()))?;

    let mut bytes = Vec::with_capacity(MAGIC.len() + 8 + header.len() + offset as usize);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for (_, t) in &file.tensors {
        for x in &t.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<TensorFile> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_container(&bytes)
}

pub fn decode_container(bytes: &[u8]) -> Result<TensorFile> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    if rest.len() < 8 {
        return Err(Error::Header("missing header length".into()));
    }
    let header_len = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
    let rest = &rest[8..];
    if rest.len() < header_len {
        return Err(Error::Header(format!("header declares {header_len} bytes, file has {}", rest.len())));
    }
    let header: Header = serde_json::from_slice(&rest[..header_len]).map_err(|e| Error::Header(e.to_string()))?;
    let payload = &rest[header_len..];

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for d in header.tensors {
        if d.dtype != "f32" {
            return Err(Error::Header(format!("tensor `{}` has unsupported dtype {}", d.name, d.dtype)));
        }
        let values = (d.nbytes / 4) as usize;
        let numel: usize = d.shape.iter().product();
        if d.nbytes % 4 != 0 || values != numel {
            return Err(Error::ShapeProductMismatch { tensor: d.name, shape: d.shape, values });
        }
        let start = d.offset as usize;
        let end = start.checked_add(d.nbytes as usize).ok_or_else(|| Error::Truncated { tensor: d.name.clone() })?;
        if end > payload.len() {
            return Err(Error::Truncated { tensor: d.name });
        }
        let data =
            payload[start..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        tensors.push((d.name, Tensor::new(d.shape, data)));
    }
    Ok(TensorFile { metadata: header.metadata, tensors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMetadata {
    pub model_id: String,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_norm_eps: Option<f64>,
    /// Free-form provenance (source checkpoint revision, exporter version).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, String>,
}

fn default_image_size() -> usize {
    224
}

impl BundleMetadata {
    pub fn for_config(model_id: &str, cfg: &EncoderConfig) -> Self {
        Self {
            model_id: model_id.to_string(),
            patch_size: cfg.patch_size,
            embed_dim: cfg.embed_dim,
            depth: cfg.depth,
            num_heads: cfg.num_heads,
            image_size: cfg.image_size,
            mlp_dim: Some(cfg.mlp_dim),
            layer_norm_eps: Some(cfg.layer_norm_eps),
            provenance: BTreeMap::new(),
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            image_size: self.image_size,
            patch_size: self.patch_size,
            embed_dim: self.embed_dim,
            depth: self.depth,
            num_heads: self.num_heads,
            mlp_dim: self.mlp_dim.unwrap_or(4 * self.embed_dim),
            layer_norm_eps: self.layer_norm_eps.unwrap_or(1e-6),
        }
    }
}

/// All parameters of one ViT encoder, keyed by manifest name.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightBundle {
    pub metadata: BundleMetadata,
    pub entries: BTreeMap<String, Tensor>,
}

impl WeightBundle {
    pub fn config(&self) -> EncoderConfig {
        self.metadata.encoder_config()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries.get(name).ok_or_else(|| Error::ManifestIncomplete { tensor: name.to_string() })
    }

    pub fn parameter_count(&self) -> usize {
        self.entries.values().map(|t| t.data.len()).sum()
    }

    /// Checks metadata, manifest completeness and per-tensor shapes.
    pub fn validate(&self) -> Result<()> {
        if self.metadata.model_id.trim().is_empty() {
            return Err(Error::InvalidBundle("metadata.model_id is empty".into()));
        }
        let cfg = self.config();
        cfg.validate()?;
        for (name, t) in &self.entries {
            if t.numel() != t.data.len() {
                return Err(Error::ShapeProductMismatch {
                    tensor: name.clone(),
                    shape: t.shape.clone(),
                    values: t.data.len(),
                });
            }
        }
        for (name, shape) in cfg.manifest() {
            let t = self.entries.get(&name).ok_or_else(|| Error::ManifestIncomplete { tensor: name.clone() })?;
            if t.shape != shape {
                return Err(Error::UnexpectedShape { tensor: name, found: t.shape.clone(), expected: shape });
            }
        }
        Ok(())
    }

    pub fn to_container(&self) -> Result<TensorFile> {
        let metadata = serde_json::to_value(&self.metadata).map_err(|e| Error::Header(e.to_string()))?;
        Ok(TensorFile { metadata, tensors: self.entries.iter().map(|(k, v)| (k.clone(), v.clone())).collect() })
    }

    pub fn from_container(file: TensorFile) -> Result<Self> {
        let metadata: BundleMetadata =
            serde_json::from_value(file.metadata).map_err(|e| Error::InvalidBundle(format!("metadata: {e}")))?;
        let mut entries = BTreeMap::new();
        for (name, t) in file.tensors {
            if entries.insert(name.clone(), t).is_some() {
                return Err(Error::InvalidBundle(format!("duplicate tensor `{name}`")));
            }
        }
        let bundle = Self { metadata, entries };
        bundle.validate()?;
        Ok(bundle)
    }
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<WeightBundle> {
    WeightBundle::from_container(read_container(path)?)
}

/// Validates `bundle` and writes it. Nothing touches disk if validation fails.
pub fn write_bundle(bundle: &WeightBundle, path: impl AsRef<Path>) -> Result<()> {
    bundle.validate()?;
    write_container(&bundle.to_container()?, path)
}

/// Canonical ViT-B/16 bundle with every entry drawn from U(−0.02, 0.02).
pub fn generate_random_bundle(seed: u64) -> WeightBundle {
    generate_random_bundle_for(&EncoderConfig::vit_base_16(), seed).expect("canonical config is valid")
}

pub fn generate_random_bundle_for(cfg: &EncoderConfig, seed: u64) -> Result<WeightBundle> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = BTreeMap::new();
    for (name, shape) in cfg.manifest() {
        let numel = shape.iter().product();
        let data = (0..numel).map(|_| rng.random_range(-RANDOM_INIT_SCALE..RANDOM_INIT_SCALE)).collect();
        entries.insert(name, Tensor::new(shape, data));
    }
    let model_id = if *cfg == EncoderConfig::vit_base_16() {
        format!("random-{CANONICAL_MODEL_ID}")
    } else {
        "random-vit".to_string()
    };
    let mut metadata = BundleMetadata::for_config(&model_id, cfg);
    metadata.provenance.insert("init".into(), format!("uniform(-0.02,0.02) seed={seed}"));
    Ok(WeightBundle { metadata, entries })
}

/// Writes a single `features` tensor, the golden-file layout.
pub fn write_features(features: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let file = TensorFile {
        metadata: serde_json::json!({ "kind": "features" }),
        tensors: vec![(
            FEATURES_TENSOR.to_string(),
            Tensor::new(vec![features.rows(), features.cols()], features.data().to_vec()),
        )],
    };
    write_container(&file, path)
}

/// Reads the `features` tensor of a golden feature file.
pub fn read_features(path: impl AsRef<Path>) -> Result<Matrix> {
    let file = read_container(path)?;
    let (_, t) = file
        .tensors
        .into_iter()
        .find(|(name, _)| name == FEATURES_TENSOR)
        .ok_or_else(|| Error::ManifestIncomplete { tensor: FEATURES_TENSOR.to_string() })?;
    if t.shape.len() != 2 {
        return Err(Error::UnexpectedShape {
            tensor: FEATURES_TENSOR.to_string(),
            found: t.shape,
            expected: vec![0, 0],
        });
    }
    Matrix::from_vec(t.shape[0], t.shape[1], t.data)
}
