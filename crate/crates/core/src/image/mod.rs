//! RGB rasters, PNG I/O, resampling, synthetic film grain and training pairs.

mod dataset;
mod grain;
mod png_io;
mod resample;

use thiserror::Error;

use crate::config::ConfigError;
use crate::tensor::{Real, Tensor, TensorError};

pub use dataset::{
    generate_corpus, random_crop_flip, read_manifest, synthetic_clean_image, write_manifest,
    CorpusSpec, ManifestEntry, Split, TrainingPair,
};
pub use grain::{ar_filter_field, lag_offsets, synthesize_grain, GrainConfig};
pub use png_io::{load_png, save_png};
pub use resample::{bicubic_downscale_x2, bicubic_kernel, BICUBIC_A};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("png decode error: {0}")]
    Decode(String),
    #[error("png encode error: {0}")]
    Encode(String),
    #[error("unsupported color type {0}")]
    UnsupportedColorType(String),
    #[error("image dimensions {width}x{height} must be even")]
    OddDimensions { width: usize, height: usize },
    #[error("image {width}x{height} is smaller than the {size}x{size} crop")]
    TooSmall {
        width: usize,
        height: usize,
        size: usize,
    },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("unstable AR coefficients: sum of magnitudes {0} must be < 1")]
    UnstableAr(f64),
    #[error("invalid grain configuration: {0}")]
    InvalidGrain(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// BT.601 luma on display-referred values.
pub fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Planar RGB image with display-referred values, nominally in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Image({}x{})", self.width, self.height)
    }
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(ImageError::Tensor(TensorError::DataLength {
                shape: vec![3, height, width],
                expected: 3 * width * height,
                actual: data.len(),
            }));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(width, height, |c, _, _| rgb[c])
    }

    /// Build from `f(channel, y, x)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Per-pixel BT.601 luma, row-major.
    pub fn luma_plane(&self) -> Vec<f64> {
        let n = self.width * self.height;
        (0..n)
            .map(|i| {
                luma(
                    self.data[i] as f64,
                    self.data[n + i] as f64,
                    self.data[2 * n + i] as f64,
                )
            })
            .collect()
    }

    pub fn clamped(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    /// Round to the nearest 8-bit level, half away from zero, and back.
    pub fn quantized_8bit(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| quantize_8bit(v) as f32 / 255.0)
                .collect(),
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Image {
        Image::from_fn(width, height, |c, y, x| self.get(c, y0 + y, x0 + x))
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.width, self.height, |c, y, x| {
            self.get(c, y, self.width - 1 - x)
        })
    }

    pub fn flip_vertical(&self) -> Image {
        Image::from_fn(self.width, self.height, |c, y, x| {
            self.get(c, self.height - 1 - y, x)
        })
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a as f64 - *b as f64).abs())
            .fold(0.0, f64::max)
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            vec![1, 3, self.height, self.width],
            self.data
                .iter()
                .map(|&v| T::from_f64_lossy(v as f64))
                .collect(),
        )
        .expect("image extents are positive")
    }

    /// Batch several equally sized images into `[B, 3, H, W]`.
    pub fn batch_to_tensor<T: Real>(images: &[Image]) -> Result<Tensor<T>, ImageError> {
        let parts: Vec<Tensor<T>> = images.iter().map(Image::to_tensor).collect();
        Ok(Tensor::stack_batch(&parts)?)
    }

    /// Sample `index` of a `[B, 3, H, W]` tensor, values kept as they are.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Result<Image, ImageError> {
        let (b, c, h, w) = t.dims4()?;
        if c != 3 || index >= b {
            return Err(ImageError::Tensor(TensorError::InvalidArgument {
                op: "Image::from_tensor",
                reason: format!("need 3 channels and index < {b}, got shape {:?}", t.shape()),
            }));
        }
        let per = 3 * h * w;
        let data = t.data()[index * per..(index + 1) * per]
            .iter()
            .map(|v| v.as_f64() as f32)
            .collect();
        Image::new(w, h, data)
    }
}

/// Round-half-away-from-zero to an 8-bit code.
pub fn quantize_8bit(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0).round() as u8
}
