//! Rank-3 feature maps and the differentiable primitives composed by the
//! cells and the encoder/decoder.
//!
//! Layout is row-major `(row, col, channel)`; the channel index varies fastest.

mod conv;
pub mod ops;

pub use conv::{conv2d, conv2d_backward, deconv2d, deconv2d_backward, ConvGrads, ConvKernel};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    rows: usize,
    cols: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || channels == 0 {
            return Err(Error::Config(format!(
                "feature map dims must be positive, got {rows}x{cols}x{channels}"
            )));
        }
        contract!(
            data.len() == rows * cols * channels,
            "data length {} != {rows}*{cols}*{channels}",
            data.len()
        );
        Ok(Self {
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        Self::filled(rows, cols, channels, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, channels: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0 && channels > 0, "empty feature map");
        Self {
            rows,
            cols,
            channels,
            data: vec![value; rows * cols * channels],
        }
    }

    pub fn zeros_like(other: &FeatureMap) -> Self {
        Self::zeros(other.rows, other.cols, other.channels)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rows, self.cols, self.channels)
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
    pub fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.cols + col) * self.channels + channel
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[self.index(row, col, channel)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, channel: usize, value: f64) {
        let i = self.index(row, col, channel);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.shape() == other.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Applies `f` elementwise, returning a new map.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> FeatureMap {
        FeatureMap {
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip_map(&self, other: &FeatureMap, f: impl Fn(f64, f64) -> f64) -> FeatureMap {
        debug_assert!(self.same_shape(other));
        FeatureMap {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            rows: self.rows,
            cols: self.cols,
            channels: self.channels,
        }
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &FeatureMap) -> Result<()> {
        contract!(
            self.same_shape(other),
            "add_assign shape mismatch {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Inner product of two equally shaped maps.
    pub fn dot(&self, other: &FeatureMap) -> Result<f64> {
        contract!(
            self.same_shape(other),
            "dot shape mismatch {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Extracts channels `[start, start + count)`.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<FeatureMap> {
        contract!(
            count > 0 && start + count <= self.channels,
            "channel slice [{start}, {}) out of range for {} channels",
            start + count,
            self.channels
        );
        let mut data = Vec::with_capacity(self.rows * self.cols * count);
        for px in self.data.chunks_exact(self.channels) {
            data.extend_from_slice(&px[start..start + count]);
        }
        Ok(FeatureMap {
            rows: self.rows,
            cols: self.cols,
            channels: count,
            data,
        })
    }
}
