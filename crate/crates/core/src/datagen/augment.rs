//! Geometric augmentation of aligned multi-time-point volumes. The same
//! transform is applied to every time point so sequences stay aligned.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::volume::Volume;

/// Which anatomical axis becomes the slice axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Axial,
    Coronal,
    Sagittal,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Axial, Plane::Coronal, Plane::Sagittal];
}

/// Reslices so that the requested plane's normal is the slice axis.
/// Axial keeps `(z, y, x)`; coronal gives `(y, z, x)`; sagittal `(x, z, y)`.
pub fn reslice(v: &Volume, plane: Plane) -> Volume {
    let (d, h, w, c) = (v.slices, v.rows, v.cols, v.channels);
    match plane {
        Plane::Axial => v.clone(),
        Plane::Coronal => {
            let mut out = Volume::zeros(h, d, w, c);
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        for ch in 0..c {
                            out.set(y, z, x, ch, v.get(z, y, x, ch));
                        }
                    }
                }
            }
            out
        }
        Plane::Sagittal => {
            let mut out = Volume::zeros(w, d, h, c);
            for z in 0..d {
                for y in 0..h {
                    for x in 0..w {
                        for ch in 0..c {
                            out.set(x, z, y, ch, v.get(z, y, x, ch));
                        }
                    }
                }
            }
            out
        }
    }
}

/// In-plane rotation by `quarter_turns` x 90 degrees (counter-clockwise).
pub fn rotate90(v: &Volume, quarter_turns: u8) -> Volume {
    let k = quarter_turns % 4;
    if k == 0 {
        return v.clone();
    }
    let (d, h, w, c) = (v.slices, v.rows, v.cols, v.channels);
    let (oh, ow) = if k % 2 == 1 { (w, h) } else { (h, w) };
    let mut out = Volume::zeros(d, oh, ow, c);
    for s in 0..d {
        for r in 0..oh {
            for col in 0..ow {
                let (sr, sc) = match k {
                    1 => (col, w - 1 - r),
                    2 => (h - 1 - r, w - 1 - col),
                    _ => (h - 1 - col, r),
                };
                for ch in 0..c {
                    out.set(s, r, col, ch, v.get(s, sr, sc, ch));
                }
            }
        }
    }
    out
}

/// Reverses the slice order.
pub fn reverse_slices(v: &Volume) -> Volume {
    let mut out = v.clone();
    let n = v.rows * v.cols * v.channels;
    for s in 0..v.slices {
        let src = v.slices - 1 - s;
        out.data[s * n..(s + 1) * n].copy_from_slice(&v.data[src * n..(src + 1) * n]);
    }
    out
}

/// Shifts every slice by `(dy, dx)` pixels, zero-filling uncovered pixels.
pub fn translate(v: &Volume, dy: i32, dx: i32) -> Volume {
    let mut out = Volume::zeros(v.slices, v.rows, v.cols, v.channels);
    for s in 0..v.slices {
        for r in 0..v.rows {
            let sr = r as i64 - dy as i64;
            if sr < 0 || sr >= v.rows as i64 {
                continue;
            }
            for col in 0..v.cols {
                let sc = col as i64 - dx as i64;
                if sc < 0 || sc >= v.cols as i64 {
                    continue;
                }
                for ch in 0..v.channels {
                    out.set(s, r, col, ch, v.get(s, sr as usize, sc as usize, ch));
                }
            }
        }
    }
    out
}

/// One element of the augmentation group plus a translation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Augmentation {
    pub plane: Plane,
    pub quarter_turns: u8,
    pub reversed: bool,
    pub shift: (i32, i32),
}

impl Augmentation {
    pub const IDENTITY: Augmentation = Augmentation {
        plane: Plane::Axial,
        quarter_turns: 0,
        reversed: false,
        shift: (0, 0),
    };

    /// Applies reslice, rotation, reversal and translation in that order.
    pub fn apply(&self, v: &Volume) -> Volume {
        let mut out = reslice(v, self.plane);
        out = rotate90(&out, self.quarter_turns);
        if self.reversed {
            out = reverse_slices(&out);
        }
        if self.shift != (0, 0) {
            out = translate(&out, self.shift.0, self.shift.1);
        }
        out
    }

    /// Dimensions of `apply(v)` for a volume of dimensions `(d, h, w)`.
    pub fn output_dims(&self, d: usize, h: usize, w: usize) -> (usize, usize, usize) {
        let (a, b, c) = match self.plane {
            Plane::Axial => (d, h, w),
            Plane::Coronal => (h, d, w),
            Plane::Sagittal => (w, d, h),
        };
        if self.quarter_turns % 2 == 1 {
            (a, c, b)
        } else {
            (a, b, c)
        }
    }

    /// Slices `start..start + count` of `apply(v)`, computed directly.
    pub fn apply_window(&self, v: &Volume, start: usize, count: usize) -> Volume {
        let (d, h, w) = self.output_dims(v.slices, v.rows, v.cols);
        assert!(start + count <= d, "window {start}+{count} exceeds {d} slices");
        // Dimensions after reslicing, before rotation.
        let (rh, rw) = if self.quarter_turns % 2 == 1 { (w, h) } else { (h, w) };
        let mut out = Volume::zeros(count, h, w, v.channels);
        for k in 0..count {
            let s = start + k;
            let rs = if self.reversed { d - 1 - s } else { s };
            for orow in 0..h {
                let tr = orow as i64 - self.shift.0 as i64;
                if tr < 0 || tr >= h as i64 {
                    continue;
                }
                for ocol in 0..w {
                    let tc = ocol as i64 - self.shift.1 as i64;
                    if tc < 0 || tc >= w as i64 {
                        continue;
                    }
                    let (r, c) = (tr as usize, tc as usize);
                    let (a, b) = match self.quarter_turns % 4 {
                        0 => (r, c),
                        1 => (c, rw - 1 - r),
                        2 => (rh - 1 - r, rw - 1 - c),
                        _ => (rh - 1 - c, r),
                    };
                    let (z, y, x) = match self.plane {
                        Plane::Axial => (rs, a, b),
                        Plane::Coronal => (a, rs, b),
                        Plane::Sagittal => (a, b, rs),
                    };
                    for ch in 0..v.channels {
                        out.set(k, orow, ocol, ch, v.get(z, y, x, ch));
                    }
                }
            }
        }
        out
    }

    /// All 24 plane/rotation/reversal combinations, each with its own random
    /// shift of up to `max_shift` pixels per axis.
    pub fn enumerate<R: Rng + ?Sized>(rng: &mut R, max_shift: i32) -> Vec<Augmentation> {
        let mut out = Vec::with_capacity(24);
        for plane in Plane::ALL {
            for quarter_turns in 0..4u8 {
                for reversed in [false, true] {
                    let shift = (
                        rng.random_range(-max_shift..=max_shift),
                        rng.random_range(-max_shift..=max_shift),
                    );
                    out.push(Augmentation {
                        plane,
                        quarter_turns,
                        reversed,
                        shift,
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_volume(seed: u64, d: usize, h: usize, w: usize) -> Volume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..d * h * w * 2).map(|_| rng.random_range(0.0..255.0f32)).collect();
        Volume::from_data(d, h, w, 2, data).unwrap()
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let v = random_volume(1, 3, 5, 4);
        let mut r = v.clone();
        for _ in 0..4 {
            r = rotate90(&r, 1);
        }
        assert_eq!(r, v);
        assert_eq!(rotate90(&rotate90(&v, 1), 3), v);
        assert_eq!(rotate90(&v, 1).dims(), [3, 4, 5, 2]);
    }

    #[test]
    fn rotation_moves_a_marked_pixel() {
        let mut v = Volume::zeros(1, 3, 3, 1);
        v.set(0, 0, 2, 0, 1.0); // top-right
        let r = rotate90(&v, 1);
        assert_eq!(r.get(0, 0, 0, 0), 1.0); // counter-clockwise: top-left
    }

    #[test]
    fn reversal_is_an_involution() {
        let v = random_volume(2, 4, 3, 3);
        assert_eq!(reverse_slices(&reverse_slices(&v)), v);
        assert_ne!(reverse_slices(&v), v);
    }

    #[test]
    fn translation_round_trip_on_interior() {
        let v = random_volume(3, 2, 10, 10);
        let back = translate(&translate(&v, 2, 0), -2, 0);
        for s in 0..2 {
            for r in 0..10 {
                for c in 0..10 {
                    for ch in 0..2 {
                        let expect = if r < 8 { v.get(s, r, c, ch) } else { 0.0 };
                        assert_eq!(back.get(s, r, c, ch), expect);
                    }
                }
            }
        }
    }

    #[test]
    fn reslice_permutes_axes() {
        let v = random_volume(4, 3, 4, 5);
        let c = reslice(&v, Plane::Coronal);
        assert_eq!(c.dims(), [4, 3, 5, 2]);
        assert_eq!(c.get(1, 2, 3, 1), v.get(2, 1, 3, 1));
        let s = reslice(&v, Plane::Sagittal);
        assert_eq!(s.dims(), [5, 3, 4, 2]);
        assert_eq!(s.get(4, 0, 2, 0), v.get(0, 2, 4, 0));
    }

    #[test]
    fn windowed_application_matches_the_full_transform() {
        let v = random_volume(6, 5, 6, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for a in Augmentation::enumerate(&mut rng, 2) {
            let full = a.apply(&v);
            let (d, h, w) = a.output_dims(5, 6, 7);
            assert_eq!(full.dims(), [d, h, w, 2]);
            for start in [0, d - 3] {
                let win = a.apply_window(&v, start, 3);
                let n = h * w * 2;
                assert_eq!(win.data, full.data[start * n..(start + 3) * n], "{a:?}");
            }
        }
    }

    #[test]
    fn group_elements_preserve_value_multisets() {
        let v = random_volume(5, 4, 4, 4);
        let sorted = |v: &Volume| {
            let mut d = v.data.clone();
            d.sort_by(f32::total_cmp);
            d
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for mut a in Augmentation::enumerate(&mut rng, 2) {
            a.shift = (0, 0);
            assert_eq!(sorted(&a.apply(&v)), sorted(&v));
        }
    }
}
