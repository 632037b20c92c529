//! Tensor, mask and logit containers plus the ADGT/ADGM binary formats.
//!
//! ADGT (tensor), little-endian:
//! - magic `b"ADGT"`
//! - version: u32 (= 1)
//! - channels, height, width: u32 each
//! - data: `channels * height * width` f32, index `(c * H + h) * W + w`
//!
//! ADGM (mask), little-endian:
//! - magic `b"ADGM"`
//! - version: u32 (= 1)
//! - height, width: u32 each
//! - data: `height * width` u8, row-major
//!
//! Decoders check the declared payload size against the actual byte length
//! before allocating anything proportional to the header.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub const TENSOR_MAGIC: [u8; 4] = *b"ADGT";
pub const MASK_MAGIC: [u8; 4] = *b"ADGM";
pub const FORMAT_VERSION: u32 = 1;
/// Magic + version + C + H + W.
pub const TENSOR_HEADER_LEN: usize = 20;
/// Magic + version + H + W.
pub const MASK_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: header declares {expected} bytes, file holds {actual}")]
    TruncatedPayload { expected: u64, actual: u64 },
    #[error("non-finite value at flat index {0}")]
    NonFiniteValue(usize),
    #[error("zero-sized dimension in {0}")]
    ZeroDimension(&'static str),
    #[error("data length {actual} does not match dimensions (expected {expected})")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("mask value {value} at flat index {index} violates {role} role")]
    RoleViolation { index: usize, value: u8, role: String },
    #[error("no palette entry for category {0}")]
    MissingPaletteEntry(u8),
    #[error("channel {channel} out of range for tensor with {channels} channels")]
    ChannelOutOfRange { channel: usize, channels: usize },
    #[error("crop {h0}+{h}x{w0}+{w} exceeds {height}x{width}")]
    CropOutOfBounds {
        h0: usize,
        w0: usize,
        h: usize,
        w: usize,
        height: usize,
        width: usize,
    },
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Channel-major `C x H x W` grid of f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorChw {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl TensorChw {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        check_dims(&[channels, height, width], "tensor")?;
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(RasterError::LengthMismatch {
                expected,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(RasterError::NonFiniteValue(i));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(channels > 0 && height > 0 && width > 0 && value.is_finite());
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.height + h) * self.width + w
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.index(c, h, w)]
    }

    /// Sets one value. Non-finite values are rejected by panicking, since the
    /// tensor invariant would otherwise be broken silently.
    pub fn set(&mut self, c: usize, h: usize, w: usize, value: f32) {
        assert!(value.is_finite(), "non-finite tensor value");
        let i = self.index(c, h, w);
        self.data[i] = value;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Returns a single-channel tensor holding channel `c`.
    pub fn select_channel(&self, c: usize) -> Result<TensorChw, RasterError> {
        if c >= self.channels {
            return Err(RasterError::ChannelOutOfRange {
                channel: c,
                channels: self.channels,
            });
        }
        Ok(Self {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.channel(c).to_vec(),
        })
    }

    pub fn crop(&self, h0: usize, w0: usize, h: usize, w: usize) -> Result<TensorChw, RasterError> {
        check_crop(h0, w0, h, w, self.height, self.width)?;
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for row in h0..h0 + h {
                let start = self.index(c, row, w0);
                data.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Ok(Self {
            channels: self.channels,
            height: h,
            width: w,
            data,
        })
    }
}

/// Row-major `H x W` grid of u8 labels or flags.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask2D {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask2D {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        check_dims(&[height, width], "mask")?;
        if data.len() != height * width {
            return Err(RasterError::LengthMismatch {
                expected: height * width,
                actual: data.len(),
            });
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        assert!(height > 0 && width > 0);
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> u8 {
        self.data[h * self.width + w]
    }

    pub fn set(&mut self, h: usize, w: usize, value: u8) {
        self.data[h * self.width + w] = value;
    }

    pub fn same_shape(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Checks the binary role: every value is 0 or 1.
    pub fn validate_binary(&self) -> Result<(), RasterError> {
        self.validate_categories(2, "binary")
    }

    /// Checks the categorical role: every value is below `count`.
    pub fn validate_categories(&self, count: usize, role: &str) -> Result<(), RasterError> {
        match self.data.iter().position(|&v| (v as usize) >= count) {
            Some(index) => Err(RasterError::RoleViolation {
                index,
                value: self.data[index],
                role: role.to_string(),
            }),
            None => Ok(()),
        }
    }

    pub fn crop(&self, h0: usize, w0: usize, h: usize, w: usize) -> Result<Mask2D, RasterError> {
        check_crop(h0, w0, h, w, self.height, self.width)?;
        let mut data = Vec::with_capacity(h * w);
        for row in h0..h0 + h {
            let start = row * self.width + w0;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Ok(Self {
            height: h,
            width: w,
            data,
        })
    }
}

/// Model output of shape `n_class x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap {
    n_class: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl LogitMap {
    pub fn new(n_class: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        check_dims(&[n_class, height, width], "logit map")?;
        if data.len() != n_class * height * width {
            return Err(RasterError::LengthMismatch {
                expected: n_class * height * width,
                actual: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(RasterError::NonFiniteValue(i));
        }
        Ok(Self {
            n_class,
            height,
            width,
            data,
        })
    }

    pub fn n_class(&self) -> usize {
        self.n_class
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, cls: usize, h: usize, w: usize) -> f32 {
        self.data[(cls * self.height + h) * self.width + w]
    }

    /// Per-pixel predicted class. With a single logit, class 1 iff logit > 0;
    /// otherwise argmax with ties going to the lower class index.
    pub fn predicted_classes(&self) -> Mask2D {
        let n = self.height * self.width;
        let data = (0..n)
            .map(|p| {
                if self.n_class == 1 {
                    u8::from(self.data[p] > 0.0)
                } else {
                    let mut best = 0usize;
                    for cls in 1..self.n_class {
                        if self.data[cls * n + p] > self.data[best * n + p] {
                            best = cls;
                        }
                    }
                    best as u8
                }
            })
            .collect();
        Mask2D {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Reinterprets the logits as a tensor (classes become channels).
    pub fn into_tensor(self) -> TensorChw {
        TensorChw {
            channels: self.n_class,
            height: self.height,
            width: self.width,
            data: self.data,
        }
    }
}

fn check_dims(dims: &[usize], what: &'static str) -> Result<(), RasterError> {
    if dims.contains(&0) {
        return Err(RasterError::ZeroDimension(what));
    }
    Ok(())
}

fn check_crop(h0: usize, w0: usize, h: usize, w: usize, height: usize, width: usize) -> Result<(), RasterError> {
    if h == 0 || w == 0 || h0 + h > height || w0 + w > width {
        return Err(RasterError::CropOutOfBounds {
            h0,
            w0,
            h,
            w,
            height,
            width,
        });
    }
    Ok(())
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]])
}

fn check_header(bytes: &[u8], magic: [u8; 4], header_len: usize) -> Result<(), RasterError> {
    if bytes.len() < 4 || bytes[..4] != magic {
        return Err(RasterError::MagicMismatch {
            expected: magic,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < header_len {
        return Err(RasterError::TruncatedPayload {
            expected: header_len as u64,
            actual: bytes.len() as u64,
        });
    }
    let version = read_u32(bytes, 4);
    if version != FORMAT_VERSION {
        return Err(RasterError::UnsupportedVersion(version));
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header_len: usize, dims: &[u32], elem: u64) -> Result<(), RasterError> {
    // u32 dims and a 4-byte element cannot overflow u128.
    let declared = dims.iter().fold(elem as u128, |acc, &d| acc * d as u128) + header_len as u128;
    if declared != bytes.len() as u128 {
        return Err(RasterError::TruncatedPayload {
            expected: u64::try_from(declared).unwrap_or(u64::MAX),
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

pub fn encode_tensor(t: &TensorChw) -> Vec<u8> {
    let mut out = Vec::with_capacity(TENSOR_HEADER_LEN + 4 * t.data.len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for d in [t.channels, t.height, t.width] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<TensorChw, RasterError> {
    check_header(bytes, TENSOR_MAGIC, TENSOR_HEADER_LEN)?;
    let dims = [read_u32(bytes, 8), read_u32(bytes, 12), read_u32(bytes, 16)];
    check_payload(bytes, TENSOR_HEADER_LEN, &dims, 4)?;
    let data: Vec<f32> = bytes[TENSOR_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    TensorChw::new(dims[0] as usize, dims[1] as usize, dims[2] as usize, data)
}

pub fn encode_mask(m: &Mask2D) -> Vec<u8> {
    let mut out = Vec::with_capacity(MASK_HEADER_LEN + m.data.len());
    out.extend_from_slice(&MASK_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.height as u32).to_le_bytes());
    out.extend_from_slice(&(m.width as u32).to_le_bytes());
    out.extend_from_slice(&m.data);
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<Mask2D, RasterError> {
    check_header(bytes, MASK_MAGIC, MASK_HEADER_LEN)?;
    let dims = [read_u32(bytes, 8), read_u32(bytes, 12)];
    check_payload(bytes, MASK_HEADER_LEN, &dims, 1)?;
    Mask2D::new(dims[0] as usize, dims[1] as usize, bytes[MASK_HEADER_LEN..].to_vec())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorChw, RasterError> {
    decode_tensor(&fs::read(path)?)
}

pub fn write_tensor(t: &TensorChw, path: impl AsRef<Path>) -> Result<(), RasterError> {
    write_bytes(path.as_ref(), &encode_tensor(t))
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask2D, RasterError> {
    decode_mask(&fs::read(path)?)
}

pub fn write_mask(m: &Mask2D, path: impl AsRef<Path>) -> Result<(), RasterError> {
    write_bytes(path.as_ref(), &encode_mask(m))
}

/// Maps mask categories to PGM gray levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    levels: [Option<u8>; 256],
}

impl Default for Palette {
    fn default() -> Self {
        Self::new()
    }
}

impl Palette {
    pub fn new() -> Self {
        Self { levels: [None; 256] }
    }

    pub fn with(mut self, category: u8, gray: u8) -> Self {
        self.levels[category as usize] = Some(gray);
        self
    }

    pub fn insert(&mut self, category: u8, gray: u8) {
        self.levels[category as usize] = Some(gray);
    }

    pub fn get(&self, category: u8) -> Option<u8> {
        self.levels[category as usize]
    }

    /// Evenly spread gray levels for `k` groups, plus `sentinel -> 0`.
    /// Group 0 maps to 255 so it stays distinguishable from the sentinel.
    pub fn for_groups(k: usize, sentinel: u8) -> Self {
        let mut p = Self::new();
        for g in 0..k {
            let level = if k == 1 { 255 } else { 255 - (g * 200 / (k - 1)) as u8 };
            p.insert(g as u8, level);
        }
        p.insert(sentinel, 0);
        p
    }
}

pub fn encode_pgm(m: &Mask2D, palette: &Palette) -> Result<Vec<u8>, RasterError> {
    let header = format!("P5\n{} {}\n255\n", m.width, m.height);
    let mut out = Vec::with_capacity(header.len() + m.data.len());
    out.extend_from_slice(header.as_bytes());
    for &v in &m.data {
        out.push(palette.get(v).ok_or(RasterError::MissingPaletteEntry(v))?);
    }
    Ok(out)
}

pub fn write_pgm(m: &Mask2D, palette: &Palette, path: impl AsRef<Path>) -> Result<(), RasterError> {
    write_bytes(path.as_ref(), &encode_pgm(m, palette)?)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), RasterError> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    f.flush()?;
    Ok(())
}
