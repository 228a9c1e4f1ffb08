//! "Same"-padded strided convolution and its exact adjoint (transposed
//! convolution), both lowered to im2col + GEMM.
//!
//! Weights are stored `(ky, kx, in, out)` so the kernel is directly the
//! `(kh*kw*in) x out` right-hand matrix of the GEMM.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{contract, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvKernel {
    pub kh: usize,
    pub kw: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of a scalar loss through one (de)convolution.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: FeatureMap,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvKernel {
    /// Zero-initialised kernel.
    pub fn zeros(
        kh: usize,
        kw: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Result<Self> {
        let k = Self {
            kh,
            kw,
            in_channels,
            out_channels,
            stride,
            weights: vec![0.0; kh * kw * in_channels * out_channels],
            bias: vec![0.0; out_channels],
        };
        k.validate()?;
        Ok(k)
    }

    /// Uniform `[-sqrt(1/fan_in), sqrt(1/fan_in)]` weights, zero bias.
    pub fn uniform<R: Rng + ?Sized>(
        kh: usize,
        kw: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::uniform_scaled(kh, kw, in_channels, out_channels, stride, 1.0, rng)
    }

    /// Uniform weights with variance `gain / (3 fan_in)`, zero bias. A gain
    /// of 6 keeps activation variance roughly constant through ReLU layers.
    pub fn uniform_scaled<R: Rng + ?Sized>(
        kh: usize,
        kw: usize,
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut k = Self::zeros(kh, kw, in_channels, out_channels, stride)?;
        let bound = (gain / k.fan_in() as f64).sqrt();
        for w in &mut k.weights {
            *w = rng.random_range(-bound..bound);
        }
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kh == 0 || self.kw == 0 || self.kh % 2 == 0 || self.kw % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel must be odd-sized, got {}x{}",
                self.kh, self.kw
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("kernel channel counts must be positive".into()));
        }
        if self.stride != 1 && self.stride != 2 {
            return Err(Error::Config(format!(
                "stride must be 1 or 2, got {}",
                self.stride
            )));
        }
        if self.weights.len() != self.kh * self.kw * self.in_channels * self.out_channels {
            return Err(Error::Config(format!(
                "weights length {} does not match {}x{}x{}x{}",
                self.weights.len(),
                self.kh,
                self.kw,
                self.in_channels,
                self.out_channels
            )));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::Config(format!(
                "bias length {} != out channels {}",
                self.bias.len(),
                self.out_channels
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn weight_index(&self, ky: usize, kx: usize, ci: usize, co: usize) -> usize {
        ((ky * self.kw + kx) * self.in_channels + ci) * self.out_channels + co
    }

    #[inline]
    pub fn weight(&self, ky: usize, kx: usize, ci: usize, co: usize) -> f64 {
        self.weights[self.weight_index(ky, kx, ci, co)]
    }

    pub fn fan_in(&self) -> usize {
        self.kh * self.kw * self.in_channels
    }

    /// Same kernel with the channel axes swapped and zero bias; the
    /// transposed convolution with `self` is the adjoint of the convolution
    /// with `self.transposed()`.
    pub fn transposed(&self) -> ConvKernel {
        let mut t = ConvKernel {
            kh: self.kh,
            kw: self.kw,
            in_channels: self.out_channels,
            out_channels: self.in_channels,
            stride: self.stride,
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.in_channels],
        };
        for ky in 0..self.kh {
            for kx in 0..self.kw {
                for ci in 0..self.in_channels {
                    for co in 0..self.out_channels {
                        let dst = t.weight_index(ky, kx, co, ci);
                        t.weights[dst] = self.weight(ky, kx, ci, co);
                    }
                }
            }
        }
        t
    }
}

/// Output spatial size of a "same" convolution.
#[inline]
pub(crate) fn same_out(len: usize, stride: usize) -> usize {
    len.div_ceil(stride)
}

/// `c = alpha * a * b + beta * c` on row-major buffers with explicit strides.
#[allow(clippy::too_many_arguments)]
#[inline]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserted extents keep every strided access in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Patch matrix of `src` for a `kh x kw` window at `stride`, one row per
/// output pixel, columns ordered `(ky, kx, channel)`.
fn im2col(src: &FeatureMap, kh: usize, kw: usize, stride: usize) -> (Vec<f64>, usize, usize) {
    let (h, w, ch) = src.shape();
    let (oh, ow) = (same_out(h, stride), same_out(w, stride));
    let (py, px) = (kh / 2, kw / 2);
    let kdim = kh * kw * ch;
    let mut col = vec![0.0; oh * ow * kdim];
    let data = src.data();
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &mut col[(oy * ow + ox) * kdim..(oy * ow + ox + 1) * kdim];
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - py as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - px as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let s = (iy as usize * w + ix as usize) * ch;
                    let d = (ky * kw + kx) * ch;
                    row[d..d + ch].copy_from_slice(&data[s..s + ch]);
                }
            }
        }
    }
    (col, oh, ow)
}

/// Adjoint of [`im2col`]: scatters-and-adds patch rows back onto an
/// `h x w x ch` map.
fn col2im(
    col: &[f64],
    (h, w, ch): (usize, usize, usize),
    kh: usize,
    kw: usize,
    stride: usize,
) -> FeatureMap {
    let (oh, ow) = (same_out(h, stride), same_out(w, stride));
    let (py, px) = (kh / 2, kw / 2);
    let kdim = kh * kw * ch;
    let mut out = FeatureMap::zeros(h, w, ch);
    let data = out.data_mut();
    for oy in 0..oh {
        for ox in 0..ow {
            let row = &col[(oy * ow + ox) * kdim..(oy * ow + ox + 1) * kdim];
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - py as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - px as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let d = (iy as usize * w + ix as usize) * ch;
                    let s = (ky * kw + kx) * ch;
                    for (o, v) in data[d..d + ch].iter_mut().zip(&row[s..s + ch]) {
                        *o += v;
                    }
                }
            }
        }
    }
    out
}

fn add_bias(out: &mut FeatureMap, bias: &[f64]) {
    for px in out.data_mut().chunks_exact_mut(bias.len()) {
        for (v, b) in px.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn channel_sums(map: &FeatureMap) -> Vec<f64> {
    let mut sums = vec![0.0; map.channels()];
    for px in map.data().chunks_exact(map.channels()) {
        for (s, v) in sums.iter_mut().zip(px) {
            *s += v;
        }
    }
    sums
}

/// Strided "same" convolution. Output is `ceil(h/stride) x ceil(w/stride) x out`.
pub fn conv2d(input: &FeatureMap, k: &ConvKernel) -> Result<FeatureMap> {
    k.validate()?;
    if input.channels() != k.in_channels {
        return Err(Error::Config(format!(
            "conv2d: input has {} channels, kernel expects {}",
            input.channels(),
            k.in_channels
        )));
    }
    let (col, oh, ow) = im2col(input, k.kh, k.kw, k.stride);
    let kdim = k.fan_in();
    let n = k.out_channels;
    let mut out = FeatureMap::zeros(oh, ow, n);
    gemm(
        oh * ow,
        kdim,
        n,
        &col,
        (kdim, 1),
        &k.weights,
        (n, 1),
        0.0,
        out.data_mut(),
        (n, 1),
    );
    add_bias(&mut out, &k.bias);
    debug_assert!(out.is_finite());
    Ok(out)
}

pub fn conv2d_backward(
    input: &FeatureMap,
    k: &ConvKernel,
    grad_out: &FeatureMap,
) -> Result<ConvGrads> {
    k.validate()?;
    contract!(
        input.channels() == k.in_channels,
        "conv2d_backward: input channels {} != kernel {}",
        input.channels(),
        k.in_channels
    );
    let (oh, ow) = (
        same_out(input.rows(), k.stride),
        same_out(input.cols(), k.stride),
    );
    contract!(
        grad_out.shape() == (oh, ow, k.out_channels),
        "conv2d_backward: grad_out shape {:?}, expected {:?}",
        grad_out.shape(),
        (oh, ow, k.out_channels)
    );
    let (col, _, _) = im2col(input, k.kh, k.kw, k.stride);
    let kdim = k.fan_in();
    let n = k.out_channels;
    let p = oh * ow;

    // dW = col^T * g
    let mut gw = vec![0.0; kdim * n];
    gemm(
        kdim,
        p,
        n,
        &col,
        (1, kdim),
        grad_out.data(),
        (n, 1),
        0.0,
        &mut gw,
        (n, 1),
    );
    // dcol = g * W^T
    let mut gcol = vec![0.0; p * kdim];
    gemm(
        p,
        n,
        kdim,
        grad_out.data(),
        (n, 1),
        &k.weights,
        (1, n),
        0.0,
        &mut gcol,
        (kdim, 1),
    );
    let gx = col2im(&gcol, input.shape(), k.kh, k.kw, k.stride);
    Ok(ConvGrads {
        input: gx,
        weights: gw,
        bias: channel_sums(grad_out),
    })
}

/// Transposed convolution: the exact adjoint of [`conv2d`] (up to bias), so
/// stride 2 doubles and stride 1 preserves the spatial dims.
pub fn deconv2d(input: &FeatureMap, k: &ConvKernel) -> Result<FeatureMap> {
    k.validate()?;
    if input.channels() != k.in_channels {
        return Err(Error::Config(format!(
            "deconv2d: input has {} channels, kernel expects {}",
            input.channels(),
            k.in_channels
        )));
    }
    let (h, w, c) = input.shape();
    let o = k.out_channels;
    let taps = k.kh * k.kw;
    let kdim = taps * o;
    let p = h * w;
    // col[:, tap] = y * W[tap]   (W[tap] is a contiguous c x o block)
    let mut col = vec![0.0; p * kdim];
    for tap in 0..taps {
        gemm(
            p,
            c,
            o,
            input.data(),
            (c, 1),
            &k.weights[tap * c * o..(tap + 1) * c * o],
            (o, 1),
            0.0,
            &mut col[tap * o..],
            (kdim, 1),
        );
    }
    let mut out = col2im(&col, (h * k.stride, w * k.stride, o), k.kh, k.kw, k.stride);
    add_bias(&mut out, &k.bias);
    debug_assert!(out.is_finite());
    Ok(out)
}

pub fn deconv2d_backward(
    input: &FeatureMap,
    k: &ConvKernel,
    grad_out: &FeatureMap,
) -> Result<ConvGrads> {
    k.validate()?;
    contract!(
        input.channels() == k.in_channels,
        "deconv2d_backward: input channels {} != kernel {}",
        input.channels(),
        k.in_channels
    );
    let (h, w, c) = input.shape();
    let o = k.out_channels;
    contract!(
        grad_out.shape() == (h * k.stride, w * k.stride, o),
        "deconv2d_backward: grad_out shape {:?}, expected {:?}",
        grad_out.shape(),
        (h * k.stride, w * k.stride, o)
    );
    let taps = k.kh * k.kw;
    let kdim = taps * o;
    let p = h * w;
    let (gcol, _, _) = im2col(grad_out, k.kh, k.kw, k.stride);

    let mut gx = FeatureMap::zeros(h, w, c);
    let mut gw = vec![0.0; k.weights.len()];
    for tap in 0..taps {
        let wblock = &k.weights[tap * c * o..(tap + 1) * c * o];
        // dy += gcol[:, tap] * W[tap]^T
        gemm(
            p,
            o,
            c,
            &gcol[tap * o..],
            (kdim, 1),
            wblock,
            (1, o),
            1.0,
            gx.data_mut(),
            (c, 1),
        );
        // dW[tap] = y^T * gcol[:, tap]
        gemm(
            c,
            p,
            o,
            input.data(),
            (1, c),
            &gcol[tap * o..],
            (kdim, 1),
            0.0,
            &mut gw[tap * c * o..(tap + 1) * c * o],
            (o, 1),
        );
    }
    Ok(ConvGrads {
        input: gx,
        weights: gw,
        bias: channel_sums(grad_out),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMap {
        let data = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        FeatureMap::new(h, w, c, data).unwrap()
    }

    /// Direct loop transcription of a zero-padded strided convolution.
    fn naive_conv(x: &FeatureMap, k: &ConvKernel) -> FeatureMap {
        let oh = x.rows().div_ceil(k.stride);
        let ow = x.cols().div_ceil(k.stride);
        let mut out = FeatureMap::zeros(oh, ow, k.out_channels);
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..k.out_channels {
                    let mut acc = k.bias[co];
                    for ky in 0..k.kh {
                        for kx in 0..k.kw {
                            for ci in 0..k.in_channels {
                                let iy = (oy * k.stride + ky) as i64 - (k.kh / 2) as i64;
                                let ix = (ox * k.stride + kx) as i64 - (k.kw / 2) as i64;
                                if iy >= 0
                                    && ix >= 0
                                    && (iy as usize) < x.rows()
                                    && (ix as usize) < x.cols()
                                {
                                    acc += x.get(iy as usize, ix as usize, ci)
                                        * k.weight(ky, kx, ci, co);
                                }
                            }
                        }
                    }
                    out.set(oy, ox, co, acc);
                }
            }
        }
        out
    }

    fn max_abs_diff(a: &FeatureMap, b: &FeatureMap) -> f64 {
        assert_eq!(a.shape(), b.shape());
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_map(&mut rng, 5, 5, 1);
        let mut k = ConvKernel::zeros(3, 3, 1, 1, 1).unwrap();
        let center = k.weight_index(1, 1, 0, 0);
        k.weights[center] = 1.0;
        assert_eq!(conv2d(&x, &k).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant_input() {
        let x = FeatureMap::filled(6, 6, 1, 0.7);
        let mut k = ConvKernel::zeros(3, 3, 1, 1, 1).unwrap();
        k.weights.iter_mut().for_each(|w| *w = 1.0);
        let y = conv2d(&x, &k).unwrap();
        for r in 1..5 {
            for c in 1..5 {
                assert!((y.get(r, c, 0) - 9.0 * 0.7).abs() < 1e-14);
            }
        }
        // corners see only 4 taps
        assert!((y.get(0, 0, 0) - 4.0 * 0.7).abs() < 1e-14);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for stride in [1, 2] {
            let x = random_map(&mut rng, 8, 8, 2);
            let mut k = ConvKernel::uniform(3, 3, 2, 4, stride, &mut rng).unwrap();
            k.bias = vec![0.1, -0.2, 0.3, 0.0];
            let d = max_abs_diff(&conv2d(&x, &k).unwrap(), &naive_conv(&x, &k));
            assert!(d <= 1e-12, "stride {stride}: {d}");
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(
            ConvKernel::zeros(2, 3, 1, 1, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ConvKernel::zeros(3, 3, 1, 1, 3),
            Err(Error::Config(_))
        ));
        let k = ConvKernel::zeros(3, 3, 2, 1, 1).unwrap();
        let x = FeatureMap::zeros(4, 4, 3);
        assert!(matches!(conv2d(&x, &k), Err(Error::Config(_))));
        assert!(matches!(deconv2d(&x, &k), Err(Error::Config(_))));
        let g = FeatureMap::zeros(3, 3, 1);
        let x = FeatureMap::zeros(4, 4, 2);
        assert!(matches!(
            conv2d_backward(&x, &k, &g),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads_and_bias_is_channel_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_map(&mut rng, 6, 6, 2);
        let k = ConvKernel::uniform(3, 3, 2, 3, 2, &mut rng).unwrap();
        let g0 = FeatureMap::zeros(3, 3, 3);
        let grads = conv2d_backward(&x, &k, &g0).unwrap();
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
        assert!(grads.weights.iter().all(|&v| v == 0.0));
        assert!(grads.bias.iter().all(|&v| v == 0.0));

        let g = random_map(&mut rng, 3, 3, 3);
        let grads = conv2d_backward(&x, &k, &g).unwrap();
        for co in 0..3 {
            let s: f64 = (0..3)
                .flat_map(|r| (0..3).map(move |c| (r, c)))
                .map(|(r, c)| g.get(r, c, co))
                .sum();
            assert!((grads.bias[co] - s).abs() < 1e-14);
        }
    }

    #[test]
    fn deconv_shapes_and_bias() {
        let k = ConvKernel {
            bias: vec![0.25, -1.0],
            ..ConvKernel::zeros(3, 3, 3, 2, 2).unwrap()
        };
        let y = deconv2d(&FeatureMap::zeros(4, 4, 3), &k).unwrap();
        assert_eq!(y.shape(), (8, 8, 2));
        for px in y.data().chunks_exact(2) {
            assert_eq!(px, &[0.25, -1.0]);
        }
        let k1 = ConvKernel::zeros(3, 3, 3, 2, 1).unwrap();
        assert_eq!(
            deconv2d(&FeatureMap::zeros(5, 7, 3), &k1).unwrap().shape(),
            (5, 7, 2)
        );
    }

    #[test]
    fn deconv_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for stride in [1, 2] {
            let kd = ConvKernel::uniform(3, 3, 3, 2, stride, &mut rng).unwrap();
            let kc = kd.transposed();
            let x = random_map(&mut rng, 8, 8, 2);
            let y = random_map(&mut rng, 8 / stride, 8 / stride, 3);
            let lhs = conv2d(&x, &kc).unwrap().dot(&y).unwrap();
            let rhs = x.dot(&deconv2d(&y, &kd).unwrap()).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10, "stride {stride}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn inputs_are_not_mutated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_map(&mut rng, 6, 6, 2);
        let k = ConvKernel::uniform(3, 3, 2, 2, 2, &mut rng).unwrap();
        let (x0, k0) = (x.clone(), k.clone());
        let y = conv2d(&x, &k).unwrap();
        conv2d_backward(&x, &k, &y).unwrap();
        let z = deconv2d(&y, &k.transposed()).unwrap();
        deconv2d_backward(&y, &k.transposed(), &z).unwrap();
        assert_eq!(x, x0);
        assert_eq!(k, k0);
    }
}
