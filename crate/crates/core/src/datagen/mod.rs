//! Synthetic longitudinal tumor phantoms, augmentation, sub-sequence
//! windows, the segmentation sequence generator and dataset I/O.
//!
//! A phantom is a perturbed ellipsoid rendered into a 48^3 field at four
//! time points. Its volume follows a per-interval growth rate; ICVF and CT
//! channels are textured inside and around the tumor. Each time point is
//! cropped to a 32^3 cube centred on its own mask centroid, so that the
//! time points are aligned.

pub mod augment;
pub mod echo;
pub mod io;
pub mod window;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::volume::Volume;

pub const CROP: usize = 32;
pub const FIELD: usize = 48;
pub const TIME_POINTS: usize = 4;
pub const CHANNELS: usize = 3;
pub const ICVF: usize = 0;
pub const CT: usize = 1;
pub const MASK: usize = 2;

/// Soft-tissue CT window in HU mapped onto `[0, 255]`.
pub const HU_MIN: f64 = -100.0;
pub const HU_MAX: f64 = 200.0;

pub fn hu_to_storage(hu: f64) -> f64 {
    ((hu - HU_MIN) / (HU_MAX - HU_MIN) * 255.0).clamp(0.0, 255.0)
}

pub fn storage_to_hu(v: f64) -> f64 {
    v / 255.0 * (HU_MAX - HU_MIN) + HU_MIN
}

/// ICVF in `[0, 100]` to storage.
pub fn icvf_to_storage(icvf: f64) -> f64 {
    (icvf * 2.55).clamp(0.0, 255.0)
}

pub fn storage_to_icvf(v: f64) -> f64 {
    v / 2.55
}

/// Interval statistics: `(mean days, growth mean, growth sd, growth min,
/// growth max)` for the first interval and for all later ones.
const FIRST_INTERVAL: (f64, f64, f64, f64, f64) = (379.0, 0.240, 0.231, -0.105, 0.956);
const LATER_INTERVAL: (f64, f64, f64, f64, f64) = (416.0, 0.088, 0.197, -0.232, 0.688);
pub const INTERVAL_MEAN_DAYS: f64 = 398.0;
pub const INTERVAL_SD_DAYS: f64 = 90.0;
pub const INTERVAL_RANGE_DAYS: (f64, f64) = (168.0, 804.0);
pub const GROWTH_RANGE: (f64, f64) = (-0.23, 0.96);

/// Low-frequency boundary harmonic `a cos(m theta + p) cos(n phi + q)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub amplitude: f64,
    pub m: f64,
    pub n: f64,
    pub phase_theta: f64,
    pub phase_phi: f64,
}

/// Everything needed to render one synthetic patient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub seed: u64,
    /// Tumor centre in field voxels `(z, y, x)`.
    pub center: [f64; 3],
    /// Semi-axes `(z, y, x)` at time 1, in voxels.
    pub radii: [f64; 3],
    /// Fractional volume change over each interval.
    pub growth: Vec<f64>,
    /// Days between consecutive time points.
    pub intervals: Vec<f64>,
    pub icvf_base: f64,
    pub icvf_noise: f64,
    pub ct_tumor_hu: f64,
    pub ct_background_hu: f64,
    pub ct_noise_hu: f64,
    /// Boundary shape at each time point.
    pub harmonics: Vec<Vec<Harmonic>>,
    /// Per-time-point drift of the ICVF level.
    pub icvf_drift: Vec<f64>,
}

fn truncated_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let dist = Normal::new(mean, sd).expect("positive sd");
    for _ in 0..1000 {
        let v = dist.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    mean.clamp(lo, hi)
}

/// Growth over `days` for a tumor whose growth over the reference duration
/// `ref_days` is `reference`; longer intervals compound further.
pub fn growth_for_interval(reference: f64, ref_days: f64, days: f64) -> f64 {
    ((1.0 + reference).powf(days / ref_days) - 1.0).clamp(GROWTH_RANGE.0, GROWTH_RANGE.1)
}

/// Radius scale after each time point for the given per-interval growth.
pub fn radius_factors(growth: &[f64]) -> Vec<f64> {
    let mut f = vec![1.0];
    for g in growth {
        let last = *f.last().expect("nonempty");
        f.push(last * (1.0 + g).cbrt());
    }
    f
}

impl PhantomSpec {
    /// Draws a patient from the cohort envelope.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intervals: Vec<f64> = (0..TIME_POINTS - 1)
            .map(|_| {
                truncated_normal(
                    &mut rng,
                    INTERVAL_MEAN_DAYS,
                    INTERVAL_SD_DAYS,
                    INTERVAL_RANGE_DAYS.0,
                    INTERVAL_RANGE_DAYS.1,
                )
            })
            .collect();
        let growth: Vec<f64> = intervals
            .iter()
            .enumerate()
            .map(|(k, &days)| {
                let (ref_days, mean, sd, lo, hi) = if k == 0 { FIRST_INTERVAL } else { LATER_INTERVAL };
                let reference = truncated_normal(&mut rng, mean, sd, lo, hi);
                growth_for_interval(reference, ref_days, days)
            })
            .collect();

        let mut radii: [f64; 3] = [
            rng.random_range(3.5..7.0),
            rng.random_range(4.0..8.0),
            rng.random_range(4.0..8.0),
        ];
        // Keep every time point inside the crop and at least five slices thick.
        let factors = radius_factors(&growth);
        let fmax = factors.iter().cloned().fold(f64::MIN, f64::max);
        let fmin = factors.iter().cloned().fold(f64::MAX, f64::min);
        for r in radii.iter_mut() {
            *r = r.min(12.0 / fmax);
        }
        radii[0] = radii[0].max(2.6 / fmin);

        let c = FIELD as f64 / 2.0;
        let center = [
            c + rng.random_range(-2.0..2.0),
            c + rng.random_range(-2.0..2.0),
            c + rng.random_range(-2.0..2.0),
        ];
        let base: Vec<Harmonic> = (0..3)
            .map(|_| Harmonic {
                amplitude: rng.random_range(0.0..0.06),
                m: rng.random_range(1..=3) as f64,
                n: rng.random_range(1..=2) as f64,
                phase_theta: rng.random_range(0.0..std::f64::consts::TAU),
                phase_phi: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        let harmonics = (0..TIME_POINTS)
            .map(|_| {
                base.iter()
                    .map(|h| Harmonic {
                        amplitude: (h.amplitude + rng.random_range(-0.01..0.01)).max(0.0),
                        phase_theta: h.phase_theta + rng.random_range(-0.15..0.15),
                        ..*h
                    })
                    .collect()
            })
            .collect();
        let icvf_drift = (0..TIME_POINTS).map(|_| rng.random_range(-3.0..3.0)).collect();
        Self {
            seed,
            center,
            radii,
            growth,
            intervals,
            icvf_base: rng.random_range(40.0..90.0),
            icvf_noise: rng.random_range(2.0..5.0),
            ct_tumor_hu: rng.random_range(20.0..70.0),
            ct_background_hu: rng.random_range(90.0..140.0),
            ct_noise_hu: rng.random_range(5.0..12.0),
            harmonics,
            icvf_drift,
        }
    }

    /// A perfectly smooth ellipsoid without noise, useful for checks.
    pub fn smooth(seed: u64, radii: [f64; 3], growth: Vec<f64>, intervals: Vec<f64>) -> Self {
        let n = growth.len() + 1;
        let c = FIELD as f64 / 2.0;
        Self {
            seed,
            center: [c, c, c],
            radii,
            growth,
            intervals,
            icvf_base: 60.0,
            icvf_noise: 0.0,
            ct_tumor_hu: 40.0,
            ct_background_hu: 110.0,
            ct_noise_hu: 0.0,
            harmonics: vec![Vec::new(); n],
            icvf_drift: vec![0.0; n],
        }
    }

    pub fn time_points(&self) -> usize {
        self.growth.len() + 1
    }

    /// Semi-axes at time point `k` (0-based).
    pub fn radii_at(&self, k: usize) -> [f64; 3] {
        let f = radius_factors(&self.growth)[k];
        self.radii.map(|r| r * f)
    }

    /// Normalised radial coordinate and boundary level at a field point.
    fn shape_at(&self, k: usize, p: [f64; 3]) -> (f64, f64) {
        let r = self.radii_at(k);
        let d = [
            (p[0] - self.center[0]) / r[0],
            (p[1] - self.center[1]) / r[1],
            (p[2] - self.center[2]) / r[2],
        ];
        let rho = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let theta = d[1].atan2(d[2]);
        let phi = if rho > 0.0 { (d[0] / rho).clamp(-1.0, 1.0).acos() } else { 0.0 };
        let delta: f64 = self.harmonics[k]
            .iter()
            .map(|h| h.amplitude * (h.m * theta + h.phase_theta).cos() * (h.n * phi + h.phase_phi).cos())
            .sum();
        (rho, 1.0 + delta)
    }

    /// Renders time point `k` into a `FIELD^3` three-channel volume.
    pub fn render_field(&self, k: usize) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1 + k as u64);
        let icvf_noise = Normal::new(0.0, self.icvf_noise.max(0.0)).expect("sd");
        let ct_noise = Normal::new(0.0, self.ct_noise_hu.max(0.0)).expect("sd");
        let mut vol = Volume::zeros(FIELD, FIELD, FIELD, CHANNELS);
        let icvf_level = self.icvf_base + self.icvf_drift[k];
        for z in 0..FIELD {
            for y in 0..FIELD {
                for x in 0..FIELD {
                    let p = [z as f64, y as f64, x as f64];
                    let (rho, edge) = self.shape_at(k, p);
                    let inside = rho <= edge;
                    // A gentle background gradient keeps the texture non-trivial.
                    let bg = self.ct_background_hu + 6.0 * ((x as f64) / FIELD as f64 - 0.5);
                    let (icvf, hu) = if inside {
                        let core = 1.0 - (rho / edge).powi(2);
                        (
                            (icvf_level * (0.85 + 0.25 * core) + icvf_noise.sample(&mut rng)).clamp(1.0, 100.0),
                            self.ct_tumor_hu + ct_noise.sample(&mut rng),
                        )
                    } else {
                        let _ = icvf_noise.sample(&mut rng);
                        (0.0, bg + ct_noise.sample(&mut rng))
                    };
                    vol.set(z, y, x, ICVF, icvf_to_storage(icvf) as f32);
                    vol.set(z, y, x, CT, hu_to_storage(hu) as f32);
                    vol.set(z, y, x, MASK, if inside { 255.0 } else { 0.0 });
                }
            }
        }
        vol
    }
}

/// Integer crop origin placing the mask centroid at the crop centre.
pub fn crop_origin(field: &Volume) -> [isize; 3] {
    let c = field
        .mask_centroid(MASK)
        .unwrap_or([FIELD as f64 / 2.0; 3]);
    c.map(|v| v.round() as isize - (CROP / 2) as isize)
}

/// Cuts a `CROP^3` cube at `origin`, zero-filling outside the field.
pub fn crop(field: &Volume, origin: [isize; 3]) -> Volume {
    let mut out = Volume::zeros(CROP, CROP, CROP, field.channels);
    for z in 0..CROP {
        for y in 0..CROP {
            for x in 0..CROP {
                let (fz, fy, fx) = (origin[0] + z as isize, origin[1] + y as isize, origin[2] + x as isize);
                let inside = [fz, fy, fx]
                    .iter()
                    .zip([field.slices, field.rows, field.cols])
                    .all(|(&v, n)| v >= 0 && (v as usize) < n);
                if inside {
                    for ch in 0..field.channels {
                        let v = field.get(fz as usize, fy as usize, fx as usize, ch);
                        out.set(z, y, x, ch, v);
                    }
                }
            }
        }
    }
    out
}

/// One patient: aligned crops at each time point plus the intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub patient_id: u32,
    pub seed: u64,
    pub intervals: Vec<f64>,
    pub volumes: Vec<Volume>,
}

impl DatasetRecord {
    pub fn time_points(&self) -> usize {
        self.volumes.len()
    }

    /// Foreground voxel count of the mask at time point `k`.
    pub fn mask_volume(&self, k: usize) -> usize {
        self.volumes[k].mask_count(MASK)
    }

    /// True growth rate `(V_{k+1} - V_k) / V_k` of the masks.
    pub fn growth_rate(&self, k: usize) -> f64 {
        let (a, b) = (self.mask_volume(k) as f64, self.mask_volume(k + 1) as f64);
        (b - a) / a
    }
}

/// Renders and aligns every time point of a phantom.
pub fn render_record(patient_id: u32, spec: &PhantomSpec) -> DatasetRecord {
    let volumes = (0..spec.time_points())
        .map(|k| {
            let field = spec.render_field(k);
            crop(&field, crop_origin(&field))
        })
        .collect();
    DatasetRecord {
        patient_id,
        seed: spec.seed,
        intervals: spec.intervals.clone(),
        volumes,
    }
}

/// Samples and renders one patient.
pub fn generate_patient(patient_id: u32, seed: u64) -> DatasetRecord {
    render_record(patient_id, &PhantomSpec::sample(seed))
}

/// Seeds of `n` patients derived from a cohort seed.
pub fn patient_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

/// Generates a cohort of `n` patients with ids `1..=n`, in parallel.
pub fn generate_cohort(seed: u64, n: usize) -> Vec<DatasetRecord> {
    use rayon::prelude::*;
    patient_seeds(seed, n)
        .into_par_iter()
        .enumerate()
        .map(|(i, s)| generate_patient(i as u32 + 1, s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_conversions() {
        assert_eq!(hu_to_storage(200.0), 255.0);
        assert_eq!(hu_to_storage(-100.0), 0.0);
        assert_eq!(storage_to_hu(255.0), 200.0);
        assert_eq!(storage_to_hu(0.0), -100.0);
        assert!((storage_to_icvf(icvf_to_storage(37.0)) - 37.0).abs() < 1e-12);
    }

    #[test]
    fn growth_compounds_with_interval_length() {
        assert!((growth_for_interval(0.2, 400.0, 400.0) - 0.2).abs() < 1e-12);
        assert!(growth_for_interval(0.2, 400.0, 800.0) > 0.2);
        assert!(growth_for_interval(-0.1, 400.0, 800.0) < -0.1);
        assert_eq!(growth_for_interval(5.0, 100.0, 800.0), GROWTH_RANGE.1);
    }

    #[test]
    fn sampled_patients_respect_the_envelope() {
        for seed in 0..40 {
            let s = PhantomSpec::sample(seed);
            assert!(s.intervals.iter().all(|d| (168.0..=804.0).contains(d)));
            assert!(s.growth.iter().all(|g| (-0.23..=0.96).contains(g)));
            assert!((40.0..90.0).contains(&s.icvf_base));
            for k in 0..s.time_points() {
                assert!(s.radii_at(k)[0] >= 2.6 - 1e-9);
                assert!(s.radii_at(k).iter().all(|&r| r <= 12.0 + 1e-9));
            }
        }
    }
}
