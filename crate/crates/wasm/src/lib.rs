//! Browser bindings over the synthetic phantom generator, the linear growth
//! baseline and the augmentation group. Images cross the boundary as 8-bit
//! row-major buffers.

use wasm_bindgen::prelude::*;

use stcl::datagen::augment::{Augmentation, Plane};
use stcl::datagen::{generate_patient, DatasetRecord, MASK};
use stcl::network::baseline::{linear_baseline, MaskRef};
use stcl::volume::Volume;

fn slice_pixels(v: &Volume, s: usize, channel: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(v.rows * v.cols);
    for r in 0..v.rows {
        for c in 0..v.cols {
            out.push(v.get(s, r, c, channel).round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

fn plane_from(index: u8) -> Plane {
    match index {
        1 => Plane::Coronal,
        2 => Plane::Sagittal,
        _ => Plane::Axial,
    }
}

/// One synthetic patient with four aligned time points.
#[wasm_bindgen]
pub struct Phantom {
    record: DatasetRecord,
}

#[wasm_bindgen]
impl Phantom {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32) -> Phantom {
        Phantom {
            record: generate_patient(1, u64::from(seed)),
        }
    }

    /// Edge length of the cubic crop.
    pub fn size(&self) -> usize {
        self.record.volumes[0].slices
    }

    pub fn time_points(&self) -> usize {
        self.record.time_points()
    }

    /// Days between consecutive time points.
    pub fn intervals(&self) -> Vec<f64> {
        self.record.intervals.clone()
    }

    /// Tumor voxel count at each time point.
    pub fn volumes(&self) -> Vec<u32> {
        (0..self.record.time_points())
            .map(|k| self.record.mask_volume(k) as u32)
            .collect()
    }

    /// Slice `s` of channel `channel` (0 ICVF, 1 CT, 2 mask) at time `time`.
    pub fn slice(&self, time: usize, channel: usize, s: usize) -> Vec<u8> {
        slice_pixels(&self.record.volumes[time], s, channel)
    }

    /// Linear-baseline mask for the time point `interval_days` after time 2,
    /// as a full volume of 0/255 bytes. Empty if the baseline is undefined.
    pub fn baseline(&self, interval_days: f64) -> Vec<u8> {
        let (v1, v2) = (&self.record.volumes[0], &self.record.volumes[1]);
        let dims = [v1.slices, v1.rows, v1.cols];
        let (m1, m2) = (v1.mask(MASK), v2.mask(MASK));
        match linear_baseline(
            MaskRef { dims, data: &m1 },
            MaskRef { dims, data: &m2 },
            self.record.intervals[0],
            interval_days.max(0.0),
        ) {
            Ok(mask) => mask.into_iter().map(|b| if b { 255 } else { 0 }).collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Slice `s` of an augmented copy of time point `time`.
    pub fn augmented(&self, time: usize, channel: usize, s: usize, plane: u8, quarter_turns: u8, reversed: bool) -> Vec<u8> {
        let a = Augmentation {
            plane: plane_from(plane),
            quarter_turns,
            reversed,
            shift: (0, 0),
        };
        let v = a.apply_window(&self.record.volumes[time], s, 1);
        slice_pixels(&v, 0, channel)
    }
}
