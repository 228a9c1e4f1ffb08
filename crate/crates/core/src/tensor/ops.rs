//! Elementwise primitives and their backward passes.

use super::FeatureMap;
use crate::error::{contract, Result};

#[inline]
fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &FeatureMap) -> FeatureMap {
    x.map(sigmoid_scalar)
}

/// Backward of sigmoid given its output `y`.
pub fn sigmoid_backward(y: &FeatureMap, grad: &FeatureMap) -> Result<FeatureMap> {
    same(y, grad, "sigmoid_backward")?;
    Ok(y.zip_map(grad, |y, g| g * y * (1.0 - y)))
}

pub fn tanh(x: &FeatureMap) -> FeatureMap {
    x.map(f64::tanh)
}

/// Backward of tanh given its output `y`.
pub fn tanh_backward(y: &FeatureMap, grad: &FeatureMap) -> Result<FeatureMap> {
    same(y, grad, "tanh_backward")?;
    Ok(y.zip_map(grad, |y, g| g * (1.0 - y * y)))
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    x.map(|v| v.max(0.0))
}

/// Backward of ReLU given its input `x`.
pub fn relu_backward(x: &FeatureMap, grad: &FeatureMap) -> Result<FeatureMap> {
    same(x, grad, "relu_backward")?;
    Ok(x.zip_map(grad, |x, g| if x > 0.0 { g } else { 0.0 }))
}

pub fn hadamard(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    same(a, b, "hadamard")?;
    Ok(a.zip_map(b, |a, b| a * b))
}

/// Returns `(grad_a, grad_b)`.
pub fn hadamard_backward(
    a: &FeatureMap,
    b: &FeatureMap,
    grad: &FeatureMap,
) -> Result<(FeatureMap, FeatureMap)> {
    same(a, b, "hadamard_backward")?;
    same(a, grad, "hadamard_backward")?;
    Ok((grad.zip_map(b, |g, b| g * b), grad.zip_map(a, |g, a| g * a)))
}

pub fn add(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    same(a, b, "add")?;
    Ok(a.zip_map(b, |a, b| a + b))
}

/// Addition passes the gradient through unchanged to both operands.
pub fn add_backward(grad: &FeatureMap) -> (FeatureMap, FeatureMap) {
    (grad.clone(), grad.clone())
}

/// Stacks channels of `parts` in order; all parts must share spatial dims.
pub fn concat_channels(parts: &[&FeatureMap]) -> Result<FeatureMap> {
    contract!(!parts.is_empty(), "concat_channels of zero maps");
    let (rows, cols) = (parts[0].rows(), parts[0].cols());
    for p in parts {
        contract!(
            p.rows() == rows && p.cols() == cols,
            "concat_channels spatial mismatch {}x{} vs {}x{}",
            p.rows(),
            p.cols(),
            rows,
            cols
        );
    }
    let channels: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(rows * cols * channels);
    for px in 0..rows * cols {
        for p in parts {
            let c = p.channels();
            data.extend_from_slice(&p.data()[px * c..(px + 1) * c]);
        }
    }
    FeatureMap::new(rows, cols, channels, data)
}

/// Backward of [`concat_channels`]: splits `grad` into the given channel widths.
pub fn concat_channels_backward(grad: &FeatureMap, widths: &[usize]) -> Result<Vec<FeatureMap>> {
    contract!(
        widths.iter().sum::<usize>() == grad.channels(),
        "split widths {:?} do not sum to {} channels",
        widths,
        grad.channels()
    );
    let mut start = 0;
    widths
        .iter()
        .map(|&w| {
            let part = grad.slice_channels(start, w);
            start += w;
            part
        })
        .collect()
}

/// Spatially constant map holding `value` in every one of `channels` channels.
pub fn tile(value: f64, rows: usize, cols: usize, channels: usize) -> FeatureMap {
    FeatureMap::filled(rows, cols, channels, value)
}

fn same(a: &FeatureMap, b: &FeatureMap, op: &str) -> Result<()> {
    contract!(
        a.same_shape(b),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_fixed_points() {
        let z = FeatureMap::zeros(2, 2, 1);
        assert!(sigmoid(&z).data().iter().all(|&v| v == 0.5));
        assert!(tanh(&z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        let x = FeatureMap::new(1, 1, 4, vec![-800.0, -40.0, 40.0, 800.0]).unwrap();
        let y = sigmoid(&x);
        assert!(y.is_finite());
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn hadamard_with_ones_is_identity() {
        let a = FeatureMap::new(1, 2, 2, vec![1.0, -2.0, 3.5, 0.25]).unwrap();
        let ones = FeatureMap::filled(1, 2, 2, 1.0);
        assert_eq!(hadamard(&a, &ones).unwrap(), a);
    }

    #[test]
    fn concat_and_split_roundtrip() {
        let a = FeatureMap::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let b = FeatureMap::new(1, 2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.channels(), 3);
        assert_eq!(c.data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let parts = concat_channels_backward(&c, &[1, 2]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn shape_mismatch_is_contract_violation() {
        let a = FeatureMap::zeros(2, 2, 1);
        let b = FeatureMap::zeros(2, 3, 1);
        assert!(add(&a, &b).is_err());
        assert!(hadamard(&a, &b).is_err());
        assert!(concat_channels(&[&a, &b]).is_err());
    }
}
