//! Image containers.
//!
//! [`Image`] is a single `H×W×C` float image in `[0, 1]`, stored interleaved
//! (channel fastest). [`ImageBatch`] is the planar `N×C×H×W` layout the network
//! consumes.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            data.len() == height * width * channels,
            InvalidInput,
            "image buffer has {} values, expected {height}x{width}x{channels}",
            data.len()
        );
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    /// Builds an image by evaluating `f(row, col, channel)`.
    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for i in 0..height {
            for j in 0..width {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Self { height, width, channels, data }
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

    #[inline]
    pub fn is_square(&self) -> bool {
        self.height == self.width
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f32) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f32] {
        let o = (row * self.width + col) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// Rotates counter-clockwise by `quarter_turns × 90°`.
    ///
    /// A single quarter turn maps `out[i][j] = in[j][W−1−i]`.
    pub fn rotate_ccw(&self, quarter_turns: u8) -> Result<Self> {
        let q = quarter_turns % 4;
        if q == 0 {
            return Ok(self.clone());
        }
        ensure!(self.is_square() || q == 2, InvalidInput, "90° rotations need a square image, got {}x{}", self.height, self.width);
        let (h, w) = (self.height, self.width);
        let (oh, ow) = if q == 2 { (h, w) } else { (w, h) };
        let mut out = Image::zeros(oh, ow, self.channels);
        for i in 0..oh {
            for j in 0..ow {
                let (si, sj) = match q {
                    1 => (j, w - 1 - i),
                    2 => (h - 1 - i, w - 1 - j),
                    _ => (h - 1 - j, i),
                };
                let o = (i * ow + j) * self.channels;
                out.data[o..o + self.channels].copy_from_slice(self.pixel(si, sj));
            }
        }
        Ok(out)
    }

    /// Output channel `c` takes input channel `source[c]`.
    pub fn permute_channels(&self, source: &[usize]) -> Result<Self> {
        ensure!(source.len() == self.channels, InvalidInput, "permutation of length {} for {} channels", source.len(), self.channels);
        let mut out = self.clone();
        for (dst, src) in out.data.chunks_exact_mut(self.channels).zip(self.data.chunks_exact(self.channels)) {
            for (c, &s) in source.iter().enumerate() {
                dst[c] = src[s];
            }
        }
        Ok(out)
    }
}

/// Planar `N×C×H×W` batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub n: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageBatch {
    pub fn from_images<'a, I>(images: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Image>,
    {
        let mut iter = images.into_iter().peekable();
        let Some(first) = iter.peek() else {
            return Ok(Self { n: 0, channels: 0, height: 0, width: 0, data: Vec::new() });
        };
        let (h, w, c) = (first.height, first.width, first.channels);
        let plane = h * w;
        let mut data = Vec::new();
        let mut n = 0;
        for img in iter {
            ensure!(
                img.height == h && img.width == w && img.channels == c,
                InvalidInput,
                "mixed image shapes in batch: {}x{}x{} vs {h}x{w}x{c}",
                img.height,
                img.width,
                img.channels
            );
            let base = data.len();
            data.resize(base + plane * c, 0.0);
            for (p, px) in img.data.chunks_exact(c).enumerate() {
                for (ch, &v) in px.iter().enumerate() {
                    data[base + ch * plane + p] = v;
                }
            }
            n += 1;
        }
        Ok(Self { n, channels: c, height: h, width: w, data })
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}
