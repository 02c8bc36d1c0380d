//! Dense real-valued grids, discrete convolution, bilinear resampling and
//! binary PGM/PPM I/O.
//!
//! Samples are stored row-major in `(row, column, channel)` order. All public
//! constructors reject non-finite samples, so every [`Image`] observed outside
//! this module holds finite data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Kernel;

/// An `H×W×C` grid of 64-bit samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

/// Rule for reading samples outside the grid during convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryRule {
    /// Nearest edge sample is repeated.
    #[default]
    Replicate,
    /// Mirror about the edge sample, without repeating it (`d c b | a b c d`).
    Reflect,
    /// Samples outside the grid read as zero.
    Zero,
}

impl BoundaryRule {
    /// Maps a possibly out-of-range coordinate onto the grid. `None` means the
    /// sample reads as zero.
    #[inline]
    pub fn map(self, i: isize, n: usize) -> Option<usize> {
        let n = n as isize;
        if (0..n).contains(&i) {
            return Some(i as usize);
        }
        match self {
            BoundaryRule::Replicate => Some(i.clamp(0, n - 1) as usize),
            BoundaryRule::Reflect => {
                if n == 1 {
                    return Some(0);
                }
                // Period of the mirrored sequence is 2(n-1).
                let period = 2 * (n - 1);
                let mut j = i.rem_euclid(period);
                if j >= n {
                    j = period - j;
                }
                Some(j as usize)
            }
            BoundaryRule::Zero => None,
        }
    }
}

fn check_dims(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::Dimension(format!(
            "image dimensions must be positive, got {height}x{width}x{channels}"
        )));
    }
    Ok(())
}

impl Image {
    /// Builds an image from raw samples, validating the length and finiteness.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(height, width, channels)?;
        let expected = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::Dimension("image size overflows".into()))?;
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "expected {expected} samples for {height}x{width}x{channels}, got {}",
                data.len()
            )));
        }
        let image = Image {
            height,
            width,
            channels,
            data,
        };
        image.check_finite()?;
        Ok(image)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        check_dims(height, width, channels)?;
        if !value.is_finite() {
            return Err(Error::Data(format!("fill value {value} is not finite")));
        }
        Ok(Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds an image by evaluating `f(row, col, channel)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(height, width, channels)?;
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Image::new(height, width, channels, data)
    }

    /// Same-shaped image of zeros.
    pub fn zeros_like(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: vec![0.0; self.data.len()],
        }
    }

    /// Internal constructor for buffers produced by in-crate arithmetic.
    pub(crate) fn from_parts(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(height, width, channels)`.
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[self.index(row, col, channel)]
    }

    /// Sets one sample. Non-finite values are rejected.
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::Data(format!("sample {value} is not finite")));
        }
        let i = self.index(row, col, channel);
        self.data[i] = value;
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => {
                let c = i % self.channels;
                let x = (i / self.channels) % self.width;
                let y = i / (self.channels * self.width);
                Err(Error::Data(format!(
                    "non-finite sample {} at ({y}, {x}, {c})",
                    self.data[i]
                )))
            }
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn require_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: shape {:?} does not match {:?}",
                other.shape(),
                self.shape()
            )))
        }
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, channel: usize) -> Result<Image> {
        if channel >= self.channels {
            return Err(Error::Dimension(format!(
                "channel {channel} out of range for {} channels",
                self.channels
            )));
        }
        let data = self
            .data
            .iter()
            .skip(channel)
            .step_by(self.channels)
            .copied()
            .collect();
        Ok(Image::from_parts(self.height, self.width, 1, data))
    }

    /// Euclidean inner product of the sample vectors.
    pub fn dot(&self, other: &Image) -> Result<f64> {
        self.require_same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Largest absolute sample difference between two same-shaped images.
    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        self.require_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// `a·self + b·other`, sample by sample.
    pub fn lincomb(&self, a: f64, other: &Image, b: f64) -> Result<Image> {
        self.require_same_shape(other, "lincomb")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        let out = Image::from_parts(self.height, self.width, self.channels, data);
        out.check_finite()?;
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> Result<Image> {
        let out = self.map(|v| v * factor);
        out.check_finite()?;
        Ok(out)
    }

    pub(crate) fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_parts(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Clamps every sample into `[lo, hi]`.
    pub fn clamped(&self, lo: f64, hi: f64) -> Image {
        self.map(|v| v.clamp(lo, hi))
    }
}

/// Convolves every channel of `input` with `kernel`.
///
/// Computes `out(y, x) = Σ k(i, j) · in(y - (i - r), x - (j - r))` with `r` the
/// kernel radius; out-of-grid reads follow `boundary`.
pub fn convolve(input: &Image, kernel: &Kernel, boundary: BoundaryRule) -> Result<Image> {
    let side = kernel.side();
    if side.is_multiple_of(2) {
        return Err(Error::Dimension(format!("kernel side {side} is even")));
    }
    if side > input.height.min(input.width) {
        return Err(Error::Dimension(format!(
            "kernel side {side} exceeds image size {}x{}",
            input.height, input.width
        )));
    }
    input.check_finite()?;

    let (h, w, ch) = input.shape();
    let r = (side / 2) as isize;
    let weights = kernel.weights();
    let mut out = vec![0.0; input.len()];
    let mut acc = vec![0.0; ch];
    for y in 0..h {
        for x in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for i in 0..side {
                let Some(sy) = boundary.map(y as isize - (i as isize - r), h) else {
                    continue;
                };
                for j in 0..side {
                    let Some(sx) = boundary.map(x as isize - (j as isize - r), w) else {
                        continue;
                    };
                    let k = weights[i * side + j];
                    let base = (sy * w + sx) * ch;
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += k * input.data[base + c];
                    }
                }
            }
            let base = (y * w + x) * ch;
            out[base..base + ch].copy_from_slice(&acc);
        }
    }
    let out = Image::from_parts(h, w, ch, out);
    out.check_finite()?;
    Ok(out)
}

/// Bilinear resampling by `scale`; output size is `round(scale · dim)`, at least 1.
pub fn resample(input: &Image, scale: f64) -> Result<Image> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Parameter(format!("scale must be positive, got {scale}")));
    }
    let h = (scale * input.height as f64).round();
    let w = (scale * input.width as f64).round();
    if h < 1.0 || w < 1.0 {
        return Err(Error::Dimension(format!(
            "resampling {}x{} by {scale} yields an empty image",
            input.height, input.width
        )));
    }
    resample_to(input, h as usize, w as usize)
}

/// Bilinear resampling to an explicit size with corner-aligned sample mapping:
/// output sample `k` of `n_out` reads input coordinate `k·(n_in-1)/(n_out-1)`.
pub fn resample_to(input: &Image, height: usize, width: usize) -> Result<Image> {
    check_dims(height, width, 1)?;
    if (height, width) == (input.height, input.width) {
        return Ok(input.clone());
    }
    let coord = |k: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let s = if n_out > 1 {
            k as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
        } else {
            (n_in - 1) as f64 / 2.0
        };
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let ch = input.channels;
    let mut out = Vec::with_capacity(height * width * ch);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, height, input.height);
        for x in 0..width {
            let (x0, x1, fx) = coord(x, width, input.width);
            for c in 0..ch {
                let v00 = input.get(y0, x0, c);
                let v01 = input.get(y0, x1, c);
                let v10 = input.get(y1, x0, c);
                let v11 = input.get(y1, x1, c);
                let top = v00 + fx * (v01 - v00);
                let bottom = v10 + fx * (v11 - v10);
                out.push(top + fy * (bottom - top));
            }
        }
    }
    Ok(Image::from_parts(height, width, ch, out))
}

/// Quantizes a sample to 8 bits: `round(clamp(v, 0, 1) · 255)`.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a 1-channel image as PGM (P5) or a 3-channel image as PPM (P6).
pub fn encode_ppm_bytes(image: &Image) -> Result<Vec<u8>> {
    let magic = match image.channels {
        1 => "P5",
        3 => "P6",
        c => {
            return Err(Error::Dimension(format!(
                "PGM/PPM output needs 1 or 3 channels, got {c}"
            )))
        }
    };
    let header = format!("{magic}\n{} {}\n255\n", image.width, image.height);
    let mut bytes = Vec::with_capacity(header.len() + image.len());
    bytes.extend_from_slice(header.as_bytes());
    bytes.extend(image.data.iter().map(|&v| quantize(v)));
    Ok(bytes)
}

pub fn encode_ppm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ppm_bytes(image)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm_bytes(&bytes)
}

/// Decodes binary PGM (P5) or PPM (P6) with maxval 255. Samples map to `b/255`.
pub fn decode_ppm_bytes(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Format("missing P5/P6 magic".into())),
    };
    let mut pos = 2;
    let width = read_header_number(bytes, &mut pos, "width")?;
    let height = read_header_number(bytes, &mut pos, "height")?;
    let maxval = read_header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}, expected 255")));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("missing whitespace after maxval".into())),
    }
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty image {width}x{height}")));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::Format("image size overflows".into()))?;
    let payload = &bytes[pos..];
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Image::from_parts(height, width, channels, data))
}

fn read_header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    // Skip whitespace and comments.
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(&b) = bytes.get(*pos) {
                    *pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format(format!("expected {what} in header")));
    }
    // Digits only, so the slice is valid UTF-8.
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&v: &usize| v <= 1 << 24)
        .ok_or_else(|| Error::Format(format!("{what} out of range")))
}
