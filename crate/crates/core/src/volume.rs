//! Multi-channel 3D volumes as stored on disk: `(slice, row, col, channel)`
//! order, 32-bit values on the `[0, 255]` storage scale.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::tensor::FeatureMap;

/// Storage value at or above which a mask voxel counts as foreground.
pub const MASK_THRESHOLD: f32 = 128.0;
pub const STORAGE_MAX: f32 = 255.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Volume {
    pub slices: usize,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn zeros(slices: usize, rows: usize, cols: usize, channels: usize) -> Self {
        Self {
            slices,
            rows,
            cols,
            channels,
            data: vec![0.0; slices * rows * cols * channels],
        }
    }

    pub fn from_data(
        slices: usize,
        rows: usize,
        cols: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        contract!(
            data.len() == slices * rows * cols * channels,
            "volume data length {} != {slices}x{rows}x{cols}x{channels}",
            data.len()
        );
        Ok(Self {
            slices,
            rows,
            cols,
            channels,
            data,
        })
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.slices, self.rows, self.cols, self.channels]
    }

    #[inline]
    pub fn index(&self, s: usize, r: usize, c: usize, ch: usize) -> usize {
        ((s * self.rows + r) * self.cols + c) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, s: usize, r: usize, c: usize, ch: usize) -> f32 {
        self.data[self.index(s, r, c, ch)]
    }

    #[inline]
    pub fn set(&mut self, s: usize, r: usize, c: usize, ch: usize, v: f32) {
        let i = self.index(s, r, c, ch);
        self.data[i] = v;
    }

    pub fn voxels(&self) -> usize {
        self.slices * self.rows * self.cols
    }

    /// Values of one channel in voxel order.
    pub fn channel(&self, ch: usize) -> Vec<f32> {
        self.data
            .iter()
            .skip(ch)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Foreground indicator of a mask channel (`value >= 128`).
    pub fn mask(&self, ch: usize) -> Vec<bool> {
        self.data
            .iter()
            .skip(ch)
            .step_by(self.channels)
            .map(|&v| v >= MASK_THRESHOLD)
            .collect()
    }

    pub fn mask_count(&self, ch: usize) -> usize {
        self.mask(ch).iter().filter(|&&m| m).count()
    }

    /// Slice `s` rescaled from `[0, 255]` to `[0, 1]` as a network frame.
    pub fn frame(&self, s: usize) -> FeatureMap {
        let n = self.rows * self.cols * self.channels;
        let data = self.data[s * n..(s + 1) * n]
            .iter()
            .map(|&v| f64::from(v) / f64::from(STORAGE_MAX))
            .collect();
        FeatureMap::new(self.rows, self.cols, self.channels, data).expect("slice dims")
    }

    /// Writes a `[0, 1]` frame back onto slice `s` at storage scale.
    pub fn set_frame(&mut self, s: usize, frame: &FeatureMap) -> Result<()> {
        contract!(
            frame.shape() == (self.rows, self.cols, self.channels),
            "frame shape {:?} does not match volume slice {:?}",
            frame.shape(),
            (self.rows, self.cols, self.channels)
        );
        let n = self.rows * self.cols * self.channels;
        for (d, &v) in self.data[s * n..(s + 1) * n].iter_mut().zip(frame.data()) {
            *d = (v * f64::from(STORAGE_MAX)) as f32;
        }
        Ok(())
    }

    /// Indices of slices whose mask channel has any foreground voxel.
    pub fn mask_slices(&self, ch: usize) -> Vec<usize> {
        let per_slice = self.rows * self.cols;
        let mask = self.mask(ch);
        (0..self.slices)
            .filter(|&s| mask[s * per_slice..(s + 1) * per_slice].iter().any(|&m| m))
            .collect()
    }

    /// Centroid `(slice, row, col)` of a mask channel, `None` if empty.
    pub fn mask_centroid(&self, ch: usize) -> Option<[f64; 3]> {
        let mask = self.mask(ch);
        let mut acc = [0.0; 3];
        let mut n = 0usize;
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            let c = i % self.cols;
            let r = (i / self.cols) % self.rows;
            let s = i / (self.cols * self.rows);
            acc[0] += s as f64;
            acc[1] += r as f64;
            acc[2] += c as f64;
            n += 1;
        }
        (n > 0).then(|| acc.map(|a| a / n as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_roundtrip_and_mask() {
        let mut v = Volume::zeros(2, 2, 2, 2);
        v.set(1, 0, 1, 1, 255.0);
        v.set(1, 1, 1, 1, 127.0);
        v.set(0, 0, 0, 0, 51.0);
        assert_eq!(v.mask_count(1), 1);
        assert_eq!(v.mask_slices(1), vec![1]);
        assert_eq!(v.mask_centroid(1), Some([1.0, 0.0, 1.0]));
        let f = v.frame(0);
        assert!((f.get(0, 0, 0) - 0.2).abs() < 1e-7);
        let mut w = Volume::zeros(2, 2, 2, 2);
        w.set_frame(0, &f).unwrap();
        assert_eq!(w.get(0, 0, 0, 0), 51.0);
    }
}
