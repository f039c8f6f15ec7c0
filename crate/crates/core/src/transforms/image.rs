use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Magic prefix of the raw tensor interchange format.
pub const TENSOR_MAGIC: &[u8; 4] = b"BBCT";
pub const TENSOR_VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {0}x{1}x{2}")]
    ZeroDimension(usize, usize, usize),
    #[error("pixel buffer holds {actual} values, shape requires {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("pixel {index} = {value} is not a finite value in [0, 1]")]
    OutOfRange { index: usize, value: f32 },
    #[error("raw tensor: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Dense row-major `H x W x C` image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    shape: Shape,
    data: Vec<f32>,
}

impl Image {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self, ImageError> {
        if shape.height == 0 || shape.width == 0 || shape.channels == 0 {
            return Err(ImageError::ZeroDimension(shape.height, shape.width, shape.channels));
        }
        if data.len() != shape.len() {
            return Err(ImageError::LengthMismatch {
                expected: shape.len(),
                actual: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(ImageError::OutOfRange { index, value });
        }
        Ok(Self { shape, data })
    }

    /// Builds from values already known to be finite; clamps into `[0, 1]`.
    pub(crate) fn from_clamped(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
        Self { shape, data }
    }

    pub fn filled(shape: Shape, value: f32) -> Result<Self, ImageError> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.shape.width + col) * self.shape.channels + channel]
    }

    /// Encodes as `BBCT | u32 version | u32 H | u32 W | u32 C | f32 LE data`.
    pub fn to_tensor_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        for dim in self.shape.as_array() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.pixel_bytes());
        out
    }

    pub fn from_tensor_bytes(bytes: &[u8]) -> Result<Self, ImageError> {
        if bytes.len() < HEADER_LEN {
            return Err(ImageError::Format(format!("truncated header ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != TENSOR_MAGIC {
            return Err(ImageError::Format("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        let version = word(1);
        if version != TENSOR_VERSION {
            return Err(ImageError::Format(format!("unsupported version {version}")));
        }
        let shape = Shape::new(word(2) as usize, word(3) as usize, word(4) as usize);
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * shape.len() {
            return Err(ImageError::Format(format!(
                "payload is {} bytes, shape {shape} needs {}",
                body.len(),
                4 * shape.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(shape, data)
    }

    /// Little-endian f32 pixel bytes, row-major.
    pub fn pixel_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    /// SHA-256 of the tensor encoding; the identity of a query.
    pub fn content_hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_tensor_bytes()).into()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}
