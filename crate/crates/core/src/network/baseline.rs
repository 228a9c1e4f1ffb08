//! Linear growth baseline: boundary radii measured along rays from the
//! tumor centroid are extrapolated linearly in time, and the latest mask is
//! warped radially to match.

use crate::error::{contract, Error, Result};

/// Rays used for volumetric (multi-slice) masks.
const RAYS_3D: usize = 1024;
/// Rays used for single-slice masks.
const RAYS_2D: usize = 720;
const MARCH_STEP: f64 = 0.25;

/// Binary volume `(slice, row, col)` borrowed from a mask buffer.
#[derive(Clone, Copy, Debug)]
pub struct MaskRef<'a> {
    pub dims: [usize; 3],
    pub data: &'a [bool],
}

impl MaskRef<'_> {
    fn at(&self, p: [f64; 3]) -> bool {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let v = p[a].round();
            if v < 0.0 || v >= self.dims[a] as f64 {
                return false;
            }
            idx[a] = v as usize;
        }
        self.data[(idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]]
    }

    fn centroid(&self) -> Option<[f64; 3]> {
        let [_, rows, cols] = self.dims;
        let mut acc = [0.0; 3];
        let mut n = 0usize;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &m)| m) {
            acc[0] += (i / (rows * cols)) as f64;
            acc[1] += ((i / cols) % rows) as f64;
            acc[2] += (i % cols) as f64;
            n += 1;
        }
        (n > 0).then(|| acc.map(|a| a / n as f64))
    }
}

fn ray_directions(planar: bool) -> Vec<[f64; 3]> {
    if planar {
        (0..RAYS_2D)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / RAYS_2D as f64;
                [0.0, a.sin(), a.cos()]
            })
            .collect()
    } else {
        // Fibonacci sphere.
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..RAYS_3D)
            .map(|k| {
                let z = 1.0 - 2.0 * (k as f64 + 0.5) / RAYS_3D as f64;
                let rho = (1.0 - z * z).sqrt();
                let a = golden * k as f64;
                [z, rho * a.sin(), rho * a.cos()]
            })
            .collect()
    }
}

/// Distance from `origin` to the farthest foreground sample along `dir`.
fn ray_radius(mask: &MaskRef<'_>, origin: [f64; 3], dir: [f64; 3]) -> f64 {
    let reach = mask.dims.iter().map(|&d| (d * d) as f64).sum::<f64>().sqrt();
    let mut r = 0.0;
    let mut last = 0.0;
    while r <= reach {
        if mask.at([
            origin[0] + dir[0] * r,
            origin[1] + dir[1] * r,
            origin[2] + dir[2] * r,
        ]) {
            last = r;
        }
        r += MARCH_STEP;
    }
    last
}

fn nearest_ray(dirs: &[[f64; 3]], u: [f64; 3]) -> usize {
    let mut best = 0;
    let mut best_dot = f64::NEG_INFINITY;
    for (k, d) in dirs.iter().enumerate() {
        let dot = d[0] * u[0] + d[1] * u[1] + d[2] * u[2];
        if dot > best_dot {
            best_dot = dot;
            best = k;
        }
    }
    best
}

/// Boundary radii of `mask` along the baseline's ray set around `origin`.
pub fn boundary_radii(mask: MaskRef<'_>, origin: [f64; 3]) -> Vec<f64> {
    ray_directions(mask.dims[0] == 1)
        .into_iter()
        .map(|d| ray_radius(&mask, origin, d))
        .collect()
}

/// Predicts the time-3 mask from masks at times 1 and 2 and the intervals
/// `dt12` and `dt23` (days): `r3 = r2 + (r2 - r1) * dt23 / dt12` per ray.
pub fn linear_baseline(
    mask1: MaskRef<'_>,
    mask2: MaskRef<'_>,
    dt12: f64,
    dt23: f64,
) -> Result<Vec<bool>> {
    contract!(mask1.dims == mask2.dims, "mask dims differ");
    let n: usize = mask1.dims.iter().product();
    contract!(
        mask1.data.len() == n && mask2.data.len() == n,
        "mask buffers do not match dims"
    );
    contract!(dt12 > 0.0 && dt23 >= 0.0, "intervals must be positive");
    if !mask1.data.iter().any(|&b| b) || !mask2.data.iter().any(|&b| b) {
        return Err(Error::Contract("linear baseline needs nonempty masks".into()));
    }
    let origin = mask2.centroid().expect("nonempty");
    let planar = mask1.dims[0] == 1;
    let dirs = ray_directions(planar);
    let scale: Vec<f64> = dirs
        .iter()
        .map(|&d| {
            let r1 = ray_radius(&mask1, origin, d);
            let r2 = ray_radius(&mask2, origin, d);
            let r3 = r2 + (r2 - r1) * dt23 / dt12;
            if r3 <= 0.0 {
                0.0
            } else {
                r2 / r3
            }
        })
        .collect();

    let [slices, rows, cols] = mask1.dims;
    let mut out = vec![false; n];
    for s in 0..slices {
        for r in 0..rows {
            for c in 0..cols {
                let v = [
                    s as f64 - origin[0],
                    r as f64 - origin[1],
                    c as f64 - origin[2],
                ];
                let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                let k = if d == 0.0 {
                    0
                } else {
                    nearest_ray(&dirs, [v[0] / d, v[1] / d, v[2] / d])
                };
                let f = scale[k];
                if f == 0.0 {
                    continue;
                }
                // Pull the voxel back to where its boundary point sat at time 2.
                let src = [
                    origin[0] + v[0] * f,
                    origin[1] + v[1] * f,
                    origin[2] + v[2] * f,
                ];
                out[(s * rows + r) * cols + c] = mask2.at(src);
            }
        }
    }
    Ok(out)
}
