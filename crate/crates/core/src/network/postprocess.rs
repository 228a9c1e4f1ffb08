//! Mask binarization and connected-component filtering.

use crate::volume::MASK_THRESHOLD;

/// Storage-scale value to a binary mask value (`>= 128` is foreground),
/// returned on the storage scale so that it can be applied repeatedly.
pub fn binarize_storage(v: f32) -> f32 {
    if v >= MASK_THRESHOLD {
        255.0
    } else {
        0.0
    }
}

/// Unit-interval mask value to foreground, matching [`binarize_storage`]
/// after scaling by 255.
pub fn is_foreground_unit(v: f64) -> bool {
    (v * 255.0) as f32 >= MASK_THRESHOLD
}

/// 4-connected component labels of a `rows x cols` mask; background is 0
/// and components are numbered from 1 in raster order of their first pixel.
pub fn label_components(mask: &[bool], rows: usize, cols: usize) -> (Vec<usize>, Vec<usize>) {
    assert_eq!(mask.len(), rows * cols, "mask length");
    let mut labels = vec![0usize; mask.len()];
    let mut sizes = vec![0usize];
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len();
        sizes.push(0);
        labels[start] = id;
        stack.push(start);
        while let Some(i) = stack.pop() {
            sizes[id] += 1;
            let (r, c) = (i / cols, i % cols);
            let mut visit = |j: usize| {
                if mask[j] && labels[j] == 0 {
                    labels[j] = id;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
    }
    (labels, sizes)
}

/// Keeps only the largest 4-connected component; ties go to the component
/// found first in raster order.
pub fn largest_component(mask: &[bool], rows: usize, cols: usize) -> Vec<bool> {
    let (labels, sizes) = label_components(mask, rows, cols);
    let Some((best, _)) = sizes
        .iter()
        .enumerate()
        .skip(1)
        .fold(None, |acc: Option<(usize, usize)>, (id, &n)| match acc {
            Some((_, m)) if m >= n => acc,
            _ => Some((id, n)),
        })
    else {
        return vec![false; mask.len()];
    };
    labels.iter().map(|&l| l == best).collect()
}
