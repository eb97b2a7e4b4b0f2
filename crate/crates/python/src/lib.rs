//! Python bindings: images, weight bundles, ViTScore, classical metrics,
//! transforms and the simulated channel.

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use vitscore_core::channel::{self, ChannelConfig, ChannelFamily};
use vitscore_core::classical;
use vitscore_core::encoder::Encoder;
use vitscore_core::imaging;
use vitscore_core::stats;
use vitscore_core::transforms::{self, TransformKind};
use vitscore_core::vitscore::{self as metric, FeatureMatrix, Pooling, VitScoreResult};
use vitscore_core::weights::{self, EncoderConfig};

create_exception!(vitscore, VitScoreError, PyValueError, "Raised for invalid inputs and degenerate scores.");

fn to_py(err: vitscore_core::Error) -> PyErr {
    match err {
        vitscore_core::Error::Io(e) => PyOSError::new_err(e.to_string()),
        other => VitScoreError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for vitscore_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// 8-bit grayscale or RGB image, row-major and interleaved.
#[pyclass(module = "vitscore", frozen)]
struct Image {
    inner: imaging::Image,
}

#[pymethods]
impl Image {
    #[new]
    fn new(width: usize, height: usize, channels: usize, pixels: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: imaging::Image::new(width, height, channels, pixels.to_vec()).py()? })
    }

    /// Reads PNG or binary PPM/PGM.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: imaging::load_image(path).py()? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        imaging::save_image(&self.inner, path).py()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    fn pixels<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, self.inner.pixels())
    }

    /// Applies a transform by name, e.g. `"rot90"`, `"random_noise:3"` or `"lr:4"`.
    fn transform(&self, name: &str) -> PyResult<Image> {
        let kind: TransformKind = name.parse().py()?;
        Ok(Image { inner: transforms::apply_transform(&self.inner, kind).py()? })
    }

    fn resize(&self, width: usize, height: usize) -> PyResult<Image> {
        Ok(Image { inner: transforms::resize_image(&self.inner, width, height).py()? })
    }

    fn __repr__(&self) -> String {
        format!("Image({}x{}x{})", self.inner.width(), self.inner.height(), self.inner.channels())
    }
}

/// Encoder weights in the VSWB1 container format.
#[pyclass(module = "vitscore", frozen)]
struct Bundle {
    inner: weights::WeightBundle,
}

#[pymethods]
impl Bundle {
    /// Seeded random weights; the defaults give ViT-B/16 at 224 px.
    #[staticmethod]
    #[pyo3(signature = (seed, image_size=None, patch_size=None, embed_dim=None, depth=None, num_heads=None, mlp_dim=None))]
    fn random(
        seed: u64,
        image_size: Option<usize>,
        patch_size: Option<usize>,
        embed_dim: Option<usize>,
        depth: Option<usize>,
        num_heads: Option<usize>,
        mlp_dim: Option<usize>,
    ) -> PyResult<Self> {
        let base = EncoderConfig::vit_base_16();
        let cfg = EncoderConfig {
            image_size: image_size.unwrap_or(base.image_size),
            patch_size: patch_size.unwrap_or(base.patch_size),
            embed_dim: embed_dim.unwrap_or(base.embed_dim),
            depth: depth.unwrap_or(base.depth),
            num_heads: num_heads.unwrap_or(base.num_heads),
            mlp_dim: mlp_dim.unwrap_or(base.mlp_dim),
            layer_norm_eps: base.layer_norm_eps,
        };
        Ok(Self { inner: weights::generate_random_bundle_for(&cfg, seed).py()? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: weights::read_bundle(path).py()? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        weights::write_bundle(&self.inner, path).py()
    }

    #[getter]
    fn model_id(&self) -> String {
        self.inner.metadata.model_id.clone()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let cfg = self.inner.config();
        let d = PyDict::new(py);
        d.set_item("image_size", cfg.image_size)?;
        d.set_item("patch_size", cfg.patch_size)?;
        d.set_item("embed_dim", cfg.embed_dim)?;
        d.set_item("depth", cfg.depth)?;
        d.set_item("num_heads", cfg.num_heads)?;
        d.set_item("mlp_dim", cfg.mlp_dim)?;
        d.set_item("layer_norm_eps", cfg.layer_norm_eps)?;
        Ok(d)
    }

    /// Unit-norm patch features, one list per patch.
    fn encode(&self, py: Python<'_>, image: &Image) -> PyResult<Vec<Vec<f64>>> {
        let f = py.detach(|| encode(&self.inner, &image.inner)).py()?;
        Ok(f.rows().map(<[f64]>::to_vec).collect())
    }
}

fn encode(bundle: &weights::WeightBundle, img: &imaging::Image) -> vitscore_core::Result<FeatureMatrix> {
    Encoder::new(bundle)?.encode(img)
}

/// Recall, precision and F1 of one comparison.
#[pyclass(module = "vitscore", frozen, get_all)]
struct Score {
    recall: f64,
    precision: f64,
    f1: f64,
    variant: &'static str,
}

impl From<VitScoreResult> for Score {
    fn from(r: VitScoreResult) -> Self {
        Score { recall: r.recall, precision: r.precision, f1: r.f1, variant: r.variant.as_str() }
    }
}

#[pymethods]
impl Score {
    fn __repr__(&self) -> String {
        format!(
            "Score(f1={:.6}, recall={:.6}, precision={:.6}, variant={})",
            self.f1, self.recall, self.precision, self.variant
        )
    }
}

fn pooling(mean_pooling: bool) -> Pooling {
    if mean_pooling {
        Pooling::MeanPooling
    } else {
        Pooling::Origin
    }
}

/// ViTScore between two images.
#[pyfunction(name = "vitscore")]
#[pyo3(signature = (a, b, bundle, mean_pooling=false))]
fn score_images(py: Python<'_>, a: &Image, b: &Image, bundle: &Bundle, mean_pooling: bool) -> PyResult<Score> {
    let r = py.detach(|| metric::score_pair_with(&a.inner, &b.inner, &bundle.inner, pooling(mean_pooling))).py()?;
    Ok(r.into())
}

/// ViTScore between two feature sets; rows are L2-normalized first.
#[pyfunction]
#[pyo3(signature = (fa, fb, mean_pooling=false))]
fn vitscore_features(fa: Vec<Vec<f64>>, fb: Vec<Vec<f64>>, mean_pooling: bool) -> PyResult<Score> {
    let fa = FeatureMatrix::from_rows(&fa).py()?;
    let fb = FeatureMatrix::from_rows(&fb).py()?;
    Ok(metric::score_features(&fa, &fb, pooling(mean_pooling)).py()?.into())
}

/// PSNR in dB; `inf` for identical images.
#[pyfunction]
fn psnr(a: &Image, b: &Image) -> PyResult<f64> {
    classical::psnr(&a.inner, &b.inner).py()
}

#[pyfunction]
fn ssim(a: &Image, b: &Image) -> PyResult<f64> {
    classical::ssim(&a.inner, &b.inner).py()
}

#[pyfunction]
fn ms_ssim(a: &Image, b: &Image) -> PyResult<f64> {
    classical::ms_ssim(&a.inner, &b.inner).py()
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    stats::pearson(&x, &y).py()
}

/// Bits per channel use at `snr_db`.
#[pyfunction]
fn awgn_capacity(snr_db: f64) -> f64 {
    channel::awgn_capacity(snr_db)
}

#[pyfunction]
fn rayleigh_capacity(snr_db: f64, gain: f64) -> PyResult<f64> {
    channel::rayleigh_capacity(snr_db, gain).py()
}

/// Outcome of sending one image over the simulated channel.
#[pyclass(module = "vitscore", frozen, get_all)]
struct Transmission {
    image: Py<Image>,
    bits_used: u64,
    bit_budget: u64,
    jpeg_quality: Option<u8>,
    capacity: f64,
    gain: Option<f64>,
    outage: bool,
}

/// JPEG over an AWGN or Rayleigh channel at the given SNR and bandwidth ratio.
#[pyfunction]
#[pyo3(signature = (image, snr_db, cbr, family="awgn", seed=0))]
fn transmit(py: Python<'_>, image: &Image, snr_db: f64, cbr: f64, family: &str, seed: u64) -> PyResult<Transmission> {
    let family: ChannelFamily = family.parse().py()?;
    let cfg = ChannelConfig { family, snr_db, cbr, seed };
    let out = py.detach(|| channel::transmit(&image.inner, &cfg)).py()?;
    Ok(Transmission {
        outage: out.is_outage(),
        image: Py::new(py, Image { inner: out.reconstructed })?,
        bits_used: out.bits_used,
        bit_budget: out.bit_budget,
        jpeg_quality: out.jpeg_quality,
        capacity: out.realized_capacity,
        gain: out.channel_gain,
    })
}

#[pymodule]
fn vitscore(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("VitScoreError", m.py().get_type::<VitScoreError>())?;
    m.add_class::<Image>()?;
    m.add_class::<Bundle>()?;
    m.add_class::<Score>()?;
    m.add_class::<Transmission>()?;
    m.add_function(wrap_pyfunction!(score_images, m)?)?;
    m.add_function(wrap_pyfunction!(vitscore_features, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(ms_ssim, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(awgn_capacity, m)?)?;
    m.add_function(wrap_pyfunction!(rayleigh_capacity, m)?)?;
    m.add_function(wrap_pyfunction!(transmit, m)?)?;
    Ok(())
}
