//! Raster images and the four controlled degradations applied to meter photos:
//! scaling, box blurring, gamma correction and salt-and-pepper noise.
//!
//! All effects are pure functions of their inputs. Intensity arithmetic rounds
//! half away from zero everywhere so the results are bit-exact across platforms.

mod degrade;
mod io;

pub use degrade::{apply_spec, box_blur, gamma_correct, gamma_lut, salt_pepper, scale, scaled_dim};
pub use io::{decode_image, encode_png, load_image, save_image};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum ImagingError {
    #[error("image not found: {0}")]
    NotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image: {0}")]
    CorruptImage(String),
    #[error("i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("invalid scale factor {0}, expected 0 < factor <= 1")]
    InvalidFactor(f64),
    #[error("invalid kernel size {0}, expected an integer >= 1")]
    InvalidKernel(f64),
    #[error("invalid gamma {0}, expected gamma > 0")]
    InvalidGamma(f64),
    #[error("invalid noise density {0}, expected 0 <= density <= 1")]
    InvalidDensity(f64),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
}

/// Decoded 8-bit pixel buffer, row-major with interleaved channels.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: u8,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidRaster(format!("zero dimension {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(ImagingError::InvalidRaster(format!("{channels} channels")));
        }
        let expected = width as usize * height as usize * channels as usize;
        if pixels.len() != expected {
            return Err(ImagingError::InvalidRaster(format!(
                "pixel buffer has {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Self { width, height, channels, pixels })
    }

    /// Image filled with one intensity on every channel.
    pub fn filled(width: u32, height: u32, channels: u8, value: u8) -> Result<Self, ImagingError> {
        let len = width as usize * height as usize * channels as usize;
        Self::new(width, height, channels, vec![value; len])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: u8) -> u8 {
        self.pixels[self.index(x, y) + c as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: u8, value: u8) {
        let i = self.index(x, y) + c as usize;
        self.pixels[i] = value;
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    /// Luma view used by matchers; RGB is reduced with Rec. 601 weights.
    pub fn to_gray_f32(&self) -> Vec<f32> {
        match self.channels {
            1 => self.pixels.iter().map(|&p| p as f32).collect(),
            _ => self
                .pixels
                .chunks_exact(3)
                .map(|px| 0.299 * px[0] as f32 + 0.587 * px[1] as f32 + 0.114 * px[2] as f32)
                .collect(),
        }
    }
}

impl fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .field("bytes", &self.pixels.len())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DegradationKind {
    Scale,
    Blur,
    Gamma,
    SaltPepper,
}

impl DegradationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DegradationKind::Scale => "scale",
            DegradationKind::Blur => "blur",
            DegradationKind::Gamma => "gamma",
            DegradationKind::SaltPepper => "sp",
        }
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DegradationKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "scale" => Ok(Self::Scale),
            "blur" => Ok(Self::Blur),
            "gamma" => Ok(Self::Gamma),
            "sp" | "salt_pepper" | "saltpepper" | "noise" => Ok(Self::SaltPepper),
            other => Err(format!("unknown degradation kind `{other}`")),
        }
    }
}

/// One degradation with its parameter.
///
/// `level` is the factor for `Scale`, the kernel size for `Blur`, the exponent for
/// `Gamma` and the per-pixel corruption probability for `SaltPepper`. The seed is
/// only consulted by `SaltPepper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

impl DegradationSpec {
    pub fn new(kind: DegradationKind, level: f64) -> Self {
        Self { kind, level, seed: 0 }
    }

    pub fn scale(factor: f64) -> Self {
        Self::new(DegradationKind::Scale, factor)
    }

    pub fn blur(k: u32) -> Self {
        Self::new(DegradationKind::Blur, k as f64)
    }

    pub fn gamma(gamma: f64) -> Self {
        Self::new(DegradationKind::Gamma, gamma)
    }

    pub fn salt_pepper(density: f64, seed: u64) -> Self {
        Self { kind: DegradationKind::SaltPepper, level: density, seed }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ImagingError> {
        let level = self.level;
        match self.kind {
            DegradationKind::Scale if !(level > 0.0 && level <= 1.0) => Err(ImagingError::InvalidFactor(level)),
            DegradationKind::Blur if !(level >= 1.0 && level.fract() == 0.0 && level <= u32::MAX as f64) => {
                Err(ImagingError::InvalidKernel(level))
            }
            DegradationKind::Gamma if !(level > 0.0 && level.is_finite()) => Err(ImagingError::InvalidGamma(level)),
            DegradationKind::SaltPepper if !(0.0..=1.0).contains(&level) => Err(ImagingError::InvalidDensity(level)),
            _ => Ok(()),
        }
    }

    /// True for the parameter value that leaves every image untouched.
    pub fn is_identity(&self) -> bool {
        match self.kind {
            DegradationKind::Scale | DegradationKind::Blur | DegradationKind::Gamma => self.level == 1.0,
            DegradationKind::SaltPepper => self.level == 0.0,
        }
    }
}

impl fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind, self.level)
    }
}
