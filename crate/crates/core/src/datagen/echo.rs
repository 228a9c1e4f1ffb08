//! Synthetic 3D+time sequences for the segmentation mode: a deforming
//! ellipsoidal cavity with a bright wall in multiplicative speckle, ten
//! 96x96 slices at six time points, labeled only at the first and last.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use super::io::{read_time_point, time_point_path, write_time_point, TimePointMeta};
use crate::error::{Error, Result};
use crate::volume::Volume;

pub const SIZE: usize = 96;
pub const SLICES: usize = 10;
pub const TIMES: usize = 6;
pub const IMAGE: usize = 0;
pub const LABEL: usize = 1;
pub const ECHO_CHANNELS: [&str; 2] = ["image", "mask"];

/// Time points carrying a label (0-based).
pub fn labeled_times() -> Vec<usize> {
    vec![0, TIMES - 1]
}

#[derive(Clone, Debug, PartialEq)]
pub struct EchoSequence {
    pub id: u32,
    pub seed: u64,
    /// Per time point, channels `[image, mask]`; the mask channel is zero
    /// where `labeled` is false.
    pub volumes: Vec<Volume>,
    pub labeled: Vec<bool>,
}

impl EchoSequence {
    /// Image frames `[t][s]` in `[0, 1]`.
    pub fn frames(&self) -> Vec<Vec<crate::tensor::FeatureMap>> {
        self.volumes
            .iter()
            .map(|v| {
                (0..v.slices)
                    .map(|s| {
                        let f = v.frame(s);
                        f.slice_channels(IMAGE, 1).expect("image channel")
                    })
                    .collect()
            })
            .collect()
    }

    /// Ground-truth mask of slice `s` at time `t`, row-major.
    pub fn label(&self, t: usize, s: usize) -> Option<Vec<bool>> {
        if !self.labeled[t] {
            return None;
        }
        let v = &self.volumes[t];
        let n = v.rows * v.cols;
        Some(v.mask(LABEL)[s * n..(s + 1) * n].to_vec())
    }
}

/// Deformation parameters of one sequence.
#[derive(Clone, Debug)]
struct EchoSpec {
    center: [f64; 3],
    drift: [f64; 2],
    radii: [f64; 3],
    contraction: f64,
    wall: f64,
    tilt: f64,
    cavity: f64,
    tissue: f64,
    background: f64,
}

impl EchoSpec {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        let c = SIZE as f64 / 2.0;
        Self {
            center: [
                (SLICES as f64 - 1.0) / 2.0 + rng.random_range(-0.5..0.5),
                c + rng.random_range(-8.0..8.0),
                c + rng.random_range(-8.0..8.0),
            ],
            drift: [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)],
            radii: [
                rng.random_range(7.5..10.0),
                rng.random_range(16.0..26.0),
                rng.random_range(16.0..26.0),
            ],
            contraction: rng.random_range(0.18..0.35),
            wall: rng.random_range(4.0..7.0),
            tilt: rng.random_range(0.0..std::f64::consts::PI),
            cavity: rng.random_range(0.12..0.25),
            tissue: rng.random_range(0.6..0.8),
            background: rng.random_range(0.35..0.5),
        }
    }

    fn factor(&self, t: usize) -> f64 {
        let phase = t as f64 / (TIMES - 1) as f64;
        1.0 - self.contraction * (1.0 - (std::f64::consts::PI * phase).cos()) / 2.0
    }

    /// Normalised radius of `(s, y, x)` at time `t`, and the wall thickness
    /// in the same units.
    fn rho(&self, t: usize, s: usize, y: usize, x: usize) -> (f64, f64) {
        let f = self.factor(t);
        let phase = t as f64 / (TIMES - 1) as f64;
        let cy = self.center[1] + self.drift[0] * phase;
        let cx = self.center[2] + self.drift[1] * phase;
        let (dy, dx) = (y as f64 - cy, x as f64 - cx);
        let (sn, cs) = self.tilt.sin_cos();
        let (u, v) = (cs * dx + sn * dy, -sn * dx + cs * dy);
        let dz = (s as f64 - self.center[0]) / self.radii[0];
        let ry = self.radii[1] * f;
        let rx = self.radii[2] * f;
        let rho = (dz * dz + (v / ry).powi(2) + (u / rx).powi(2)).sqrt();
        (rho, self.wall / ry.min(rx))
    }
}

pub fn generate_echo(id: u32, seed: u64) -> EchoSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = EchoSpec::sample(&mut rng);
    let speckle = Gamma::new(4.0, 0.25).expect("shape");
    let blur = Normal::new(0.0, 0.03).expect("sd");
    let labels = labeled_times();
    let mut volumes = Vec::with_capacity(TIMES);
    for t in 0..TIMES {
        let mut v = Volume::zeros(SLICES, SIZE, SIZE, 2);
        for s in 0..SLICES {
            for y in 0..SIZE {
                for x in 0..SIZE {
                    let (rho, wall) = spec.rho(t, s, y, x);
                    let base = if rho <= 1.0 {
                        spec.cavity
                    } else if rho <= 1.0 + wall {
                        spec.tissue
                    } else {
                        spec.background
                    };
                    let value = (base * speckle.sample(&mut rng) + blur.sample(&mut rng)).clamp(0.0, 1.0);
                    v.set(s, y, x, IMAGE, (value * 255.0) as f32);
                    if labels.contains(&t) && rho <= 1.0 {
                        v.set(s, y, x, LABEL, 255.0);
                    }
                }
            }
        }
        volumes.push(v);
    }
    EchoSequence {
        id,
        seed,
        volumes,
        labeled: (0..TIMES).map(|t| labels.contains(&t)).collect(),
    }
}

/// `n` sequences with ids `1..=n` from a set seed.
pub fn generate_echo_set(seed: u64, n: usize) -> Vec<EchoSequence> {
    use rayon::prelude::*;
    super::patient_seeds(seed, n)
        .into_par_iter()
        .enumerate()
        .map(|(i, s)| generate_echo(i as u32 + 1, s))
        .collect()
}

pub fn write_echo(dir: &Path, seq: &EchoSequence) -> Result<()> {
    for (t, v) in seq.volumes.iter().enumerate() {
        let meta = TimePointMeta {
            patient_id: seq.id,
            time_index: t + 1,
            intervals: Vec::new(),
            seed: seq.seed,
            channels: ECHO_CHANNELS.iter().map(|s| s.to_string()).collect(),
            labeled: Some(seq.labeled[t]),
        };
        write_time_point(&time_point_path(dir, seq.id, t), &meta, v)?;
    }
    Ok(())
}

pub fn read_echo(dir: &Path, id: u32, times: usize) -> Result<EchoSequence> {
    let mut volumes = Vec::with_capacity(times);
    let mut labeled = Vec::with_capacity(times);
    let mut seed = 0;
    for t in 0..times {
        let path = time_point_path(dir, id, t);
        let (meta, v) = read_time_point(&path)?;
        if v.channels != 2 {
            return Err(Error::Config(format!(
                "{}: segmentation volumes have 2 channels, found {}",
                path.display(),
                v.channels
            )));
        }
        seed = meta.seed;
        labeled.push(meta.labeled.unwrap_or(false));
        volumes.push(v);
    }
    Ok(EchoSequence { id, seed, volumes, labeled })
}
