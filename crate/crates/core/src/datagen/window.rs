//! Sub-sequence windows of `S` consecutive slices over the tumor extent.

use crate::network::SpatioTemporalSequence;
use crate::volume::Volume;

use super::MASK;

/// Inclusive slice range containing foreground in any of `masks` (mask
/// channel `ch`), widened by `margin` and clipped to the volume.
pub fn tumor_extent(volumes: &[&Volume], ch: usize, margin: usize) -> Option<(usize, usize)> {
    let mut lo = usize::MAX;
    let mut hi = 0;
    let mut slices = 0;
    for v in volumes {
        slices = v.slices;
        for s in v.mask_slices(ch) {
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    (lo != usize::MAX).then(|| (lo.saturating_sub(margin), (hi + margin).min(slices - 1)))
}

/// Number of tumor-bearing slices (union over `volumes`).
pub fn tumor_slice_count(volumes: &[&Volume], ch: usize) -> usize {
    tumor_extent(volumes, ch, 0).map_or(0, |(a, b)| b - a + 1)
}

/// Window starts over the inclusive range `[first, last]`.
///
/// With `overlap` every start `first..=last-S+1` is returned (stride 1);
/// otherwise windows are laid end to end and, if slices remain, a final
/// window is re-anchored to end at `last`. A range shorter than `S` yields
/// no windows.
pub fn window_starts(first: usize, last: usize, s: usize, overlap: bool) -> Vec<usize> {
    if s == 0 || last < first || last - first + 1 < s {
        return Vec::new();
    }
    let end = last + 1 - s;
    if overlap {
        return (first..=end).collect();
    }
    let mut starts: Vec<usize> = (first..=end).step_by(s).collect();
    if *starts.last().expect("nonempty") != end {
        starts.push(end);
    }
    starts
}

/// Windows of a record: start slices of `S`-slice sub-sequences covering
/// the tumor extent of the time points listed in `extent_times`. Records
/// with fewer than `S` tumor-bearing slices yield nothing.
pub fn crop_windows(
    volumes: &[Volume],
    extent_times: &[usize],
    s: usize,
    overlap: bool,
    margin: usize,
) -> Vec<usize> {
    let refs: Vec<&Volume> = extent_times.iter().map(|&k| &volumes[k]).collect();
    if tumor_slice_count(&refs, MASK) < s {
        log::warn!("record has fewer than {s} tumor slices; skipped");
        return Vec::new();
    }
    let (lo, hi) = tumor_extent(&refs, MASK, margin).expect("nonempty extent");
    window_starts(lo, hi, s, overlap)
}

/// Frames `[t][s]` of slices `start..start+S` at the given time points.
pub fn subsequence(volumes: &[Volume], times: &[usize], start: usize, s: usize, intervals: &[f64]) -> SpatioTemporalSequence {
    SpatioTemporalSequence {
        frames: times
            .iter()
            .map(|&k| (start..start + s).map(|sl| volumes[k].frame(sl)).collect())
            .collect(),
        intervals: intervals.to_vec(),
    }
}
