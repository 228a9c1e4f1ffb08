//! Encoder / ST-ConvLSTM / decoder network and the spatio-temporal
//! unrolling grid.
//!
//! Every grid unit `(s, t)` encodes its frame, optionally concatenates a
//! tiled clinical factor (the normalized time interval), runs the
//! ST-ConvLSTM cell on its spatial and temporal predecessor states and
//! decodes the new hidden state into an output frame.
//!
//! State routing: unit `(0, 0)` sees zero states, column `t = 0` sees zero
//! temporal states, and the spatial predecessor of the first slice at
//! `t > 0` is the final unit `(S-1, t-1)` of the previous column.

pub mod baseline;
pub mod postprocess;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{CellCache, CellState, StConvLstmParams};
use crate::error::{contract, Error, Result};
use crate::tensor::ops::{self, concat_channels};
use crate::tensor::{conv2d, deconv2d, ConvKernel, FeatureMap};

/// Days per unit of the tiled interval factor.
pub const INTERVAL_SCALE_DAYS: f64 = 365.0;

const RELU_GAIN: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Prediction,
    Segmentation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub mode: Mode,
    pub input_channels: usize,
    pub input_size: usize,
    pub encoder_channels: Vec<usize>,
    pub encoder_strides: Vec<usize>,
    /// Output widths of the decoder layers; the last is the frame channel count.
    pub decoder_channels: Vec<usize>,
    pub decoder_strides: Vec<usize>,
    pub hidden: usize,
    /// Channels of the tiled clinical factor map (`m`).
    pub factor_dim: usize,
}

impl NetworkConfig {
    /// ICVF-CT-Mask prediction network: 32x32x3 frames, 8x8x8 bottleneck,
    /// one interval factor channel, 8 hidden states.
    pub fn prediction() -> Self {
        Self {
            mode: Mode::Prediction,
            input_channels: 3,
            input_size: 32,
            encoder_channels: vec![16, 32, 16, 8],
            encoder_strides: vec![2, 1, 2, 1],
            decoder_channels: vec![16, 32, 16, 3],
            decoder_strides: vec![1, 2, 1, 2],
            hidden: 8,
            factor_dim: 1,
        }
    }

    /// 1-8-16-32-64 / 64 / 64-32-16-1 segmentation network on 96x96 frames.
    pub fn segmentation() -> Self {
        Self {
            mode: Mode::Segmentation,
            input_channels: 1,
            input_size: 96,
            encoder_channels: vec![8, 16, 32, 64],
            encoder_strides: vec![2, 2, 2, 1],
            decoder_channels: vec![64, 32, 16, 1],
            decoder_strides: vec![1, 2, 2, 2],
            hidden: 64,
            factor_dim: 0,
        }
    }

    /// Small prediction network used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            mode: Mode::Prediction,
            input_channels: 3,
            input_size: 8,
            encoder_channels: vec![3, 4, 3, 2],
            encoder_strides: vec![2, 1, 2, 1],
            decoder_channels: vec![3, 4, 3, 3],
            decoder_strides: vec![1, 2, 1, 2],
            hidden: 2,
            factor_dim: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.encoder_channels.len() != self.encoder_strides.len()
            || self.decoder_channels.len() != self.decoder_strides.len()
        {
            return cfg("layer channel and stride lists differ in length".into());
        }
        if self.mode == Mode::Prediction
            && (self.encoder_channels.len() != 4 || self.decoder_channels.len() != 4)
        {
            return cfg("prediction mode needs 4 encoder and 4 decoder layers".into());
        }
        if self.encoder_channels.is_empty() || self.decoder_channels.is_empty() {
            return cfg("encoder and decoder need at least one layer".into());
        }
        if self
            .encoder_strides
            .iter()
            .chain(&self.decoder_strides)
            .any(|&s| s != 1 && s != 2)
        {
            return cfg("strides must be 1 or 2".into());
        }
        let down: usize = self.encoder_strides.iter().product();
        let up: usize = self.decoder_strides.iter().product();
        if down != up {
            return cfg(format!("encoder downsamples by {down}, decoder upsamples by {up}"));
        }
        if self.input_size == 0 || self.input_size % down != 0 {
            return cfg(format!(
                "input size {} not divisible by total stride {down}",
                self.input_size
            ));
        }
        if self.hidden == 0 || self.input_channels == 0 {
            return cfg("hidden and input channel counts must be positive".into());
        }
        let out = *self.decoder_channels.last().unwrap();
        match self.mode {
            Mode::Prediction => {
                if self.factor_dim == 0 {
                    return cfg("prediction mode requires factor_dim >= 1".into());
                }
                if out != self.input_channels {
                    return cfg(format!(
                        "prediction output channels {out} != input channels {}",
                        self.input_channels
                    ));
                }
            }
            Mode::Segmentation => {
                if self.factor_dim != 0 {
                    return cfg("segmentation mode has no factor branch".into());
                }
                if out != 1 {
                    return cfg("segmentation output must be a single mask channel".into());
                }
            }
        }
        Ok(())
    }

    pub fn bottleneck_size(&self) -> usize {
        self.input_size / self.encoder_strides.iter().product::<usize>()
    }

    /// Channels entering the cell: encoder output plus factor channels.
    pub fn cell_input_channels(&self) -> usize {
        self.encoder_channels.last().copied().unwrap_or(0) + self.factor_dim
    }

    pub fn output_channels(&self) -> usize {
        *self.decoder_channels.last().unwrap()
    }
}

/// All learnable kernels of the encoder, the cell and the decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub encoder: Vec<ConvKernel>,
    pub cell: StConvLstmParams,
    pub decoder: Vec<ConvKernel>,
}

impl NetworkParams {
    /// Variance-preserving uniform initialisation for the ReLU layers,
    /// fan-in scaling elsewhere; forget-gate biases start at `+1`.
    pub fn init<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut encoder = Vec::new();
        let mut c_in = cfg.input_channels;
        for (&c, &s) in cfg.encoder_channels.iter().zip(&cfg.encoder_strides) {
            encoder.push(ConvKernel::uniform_scaled(3, 3, c_in, c, s, RELU_GAIN, rng)?);
            c_in = c;
        }
        let cell = StConvLstmParams::init(cfg.cell_input_channels(), cfg.hidden, 1.0, rng)?;
        let mut decoder = Vec::new();
        let mut c_in = cfg.hidden;
        let last = cfg.decoder_channels.len() - 1;
        for (i, (&c, &s)) in cfg.decoder_channels.iter().zip(&cfg.decoder_strides).enumerate() {
            // A stride-s transposed convolution sums only 1/s^2 of its taps
            // into each output pixel.
            let gain = if i == last { 1.0 } else { RELU_GAIN } * (s * s) as f64;
            decoder.push(ConvKernel::uniform_scaled(3, 3, c_in, c, s, gain, rng)?);
            c_in = c;
        }
        Ok(Self {
            encoder,
            cell,
            decoder,
        })
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Parameter tensors in a fixed order (encoder, cell, decoder; weights
    /// before bias).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for k in &self.encoder {
            out.push(&k.weights);
            out.push(&k.bias);
        }
        out.push(&self.cell.0.kernel.weights);
        out.push(&self.cell.0.kernel.bias);
        for k in &self.decoder {
            out.push(&k.weights);
            out.push(&k.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for k in &mut self.encoder {
            out.push(&mut k.weights);
            out.push(&mut k.bias);
        }
        out.push(&mut self.cell.0.kernel.weights);
        out.push(&mut self.cell.0.kernel.bias);
        for k in &mut self.decoder {
            out.push(&mut k.weights);
            out.push(&mut k.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &NetworkParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Checks that the parameter shapes match `cfg`.
    pub fn check(&self, cfg: &NetworkConfig) -> Result<()> {
        cfg.validate()?;
        let fresh = Self::init(cfg, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        let shapes = |p: &NetworkParams| p.tensors().iter().map(|t| t.len()).collect::<Vec<_>>();
        if shapes(self) != shapes(&fresh) || self.encoder.len() != fresh.encoder.len() {
            return Err(Error::Config(
                "parameter shapes do not match the network configuration".into(),
            ));
        }
        Ok(())
    }
}

/// Days between scans mapped to the factor scale.
pub fn normalize_interval(days: f64) -> f64 {
    days / INTERVAL_SCALE_DAYS
}

/// Spatially tiled `m`-channel factor map.
pub fn tile_factor(value: f64, rows: usize, cols: usize, m: usize) -> Result<FeatureMap> {
    if m == 0 {
        return Err(Error::Config("factor tiling needs m >= 1".into()));
    }
    Ok(ops::tile(value, rows, cols, m))
}

#[derive(Clone, Debug)]
pub(crate) struct LayerCache {
    pub input: FeatureMap,
    /// Pre-activation output.
    pub pre: FeatureMap,
}

#[derive(Clone, Debug)]
pub(crate) struct EncoderCache {
    pub layers: Vec<LayerCache>,
}

#[derive(Clone, Debug)]
pub(crate) struct DecoderCache {
    pub layers: Vec<LayerCache>,
    pub output: FeatureMap,
}

fn check_frame(frame: &FeatureMap, cfg: &NetworkConfig) -> Result<()> {
    if frame.shape() != (cfg.input_size, cfg.input_size, cfg.input_channels) {
        return Err(Error::Config(format!(
            "frame shape {:?} does not match network input {:?}",
            frame.shape(),
            (cfg.input_size, cfg.input_size, cfg.input_channels)
        )));
    }
    Ok(())
}

pub(crate) fn encode_cached(
    frame: &FeatureMap,
    params: &NetworkParams,
    cfg: &NetworkConfig,
) -> Result<(FeatureMap, EncoderCache)> {
    check_frame(frame, cfg)?;
    let mut layers = Vec::with_capacity(params.encoder.len());
    let mut x = frame.clone();
    for k in &params.encoder {
        let pre = conv2d(&x, k)?;
        let next = ops::relu(&pre);
        layers.push(LayerCache { input: x, pre });
        x = next;
    }
    Ok((x, EncoderCache { layers }))
}

/// Four strided convolutions with ReLU; in prediction mode a 32x32x3 frame
/// becomes the 8x8x8 bottleneck.
pub fn encode(frame: &FeatureMap, params: &NetworkParams, cfg: &NetworkConfig) -> Result<FeatureMap> {
    Ok(encode_cached(frame, params, cfg)?.0)
}

pub(crate) fn decode_cached(
    hidden: &FeatureMap,
    params: &NetworkParams,
) -> Result<(FeatureMap, DecoderCache)> {
    let mut layers = Vec::with_capacity(params.decoder.len());
    let mut x = hidden.clone();
    let last = params.decoder.len() - 1;
    for (l, k) in params.decoder.iter().enumerate() {
        let pre = deconv2d(&x, k)?;
        let next = if l == last {
            ops::sigmoid(&pre)
        } else {
            ops::relu(&pre)
        };
        layers.push(LayerCache { input: x, pre });
        x = next;
    }
    let output = x.clone();
    Ok((x, DecoderCache { layers, output }))
}

/// Transposed-convolution decoder; ReLU on hidden layers, sigmoid head.
pub fn decode(hidden: &FeatureMap, params: &NetworkParams) -> Result<FeatureMap> {
    Ok(decode_cached(hidden, params)?.0)
}

/// Frames of a sub-sequence, stored column-major in time: `frames[t][s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatioTemporalSequence {
    pub frames: Vec<Vec<FeatureMap>>,
    /// `intervals[t]` is the number of days between time `t` and `t + 1`.
    pub intervals: Vec<f64>,
}

impl SpatioTemporalSequence {
    pub fn slices(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn times(&self) -> usize {
        self.frames.len()
    }

    pub fn frame(&self, s: usize, t: usize) -> &FeatureMap {
        &self.frames[t][s]
    }

    pub fn validate(&self) -> Result<()> {
        contract!(self.times() >= 1 && self.slices() >= 1, "empty sequence");
        let shape = self.frames[0][0].shape();
        for col in &self.frames {
            contract!(col.len() == self.slices(), "ragged sequence columns");
            for f in col {
                contract!(f.shape() == shape, "frames differ in shape");
            }
        }
        Ok(())
    }
}

/// Per-unit intermediates of one grid evaluation.
#[derive(Clone, Debug)]
pub(crate) struct UnitCache {
    pub encoder: EncoderCache,
    pub cell: CellCache,
    pub decoder: DecoderCache,
}

/// Result of unrolling the grid: outputs `[t][s]` in `(0, 1)`, the final
/// states and the caches needed by the backward pass.
#[derive(Clone, Debug)]
pub struct GridForward {
    pub outputs: Vec<Vec<FeatureMap>>,
    pub states: Vec<Vec<CellState>>,
    pub(crate) units: Vec<Vec<UnitCache>>,
    pub(crate) factor_dim: usize,
}

/// The canonical evaluation order: time-major, slices ascending.
pub fn grid_order(slices: usize, times: usize) -> Vec<(usize, usize)> {
    (0..times)
        .flat_map(|t| (0..slices).map(move |s| (s, t)))
        .collect()
}

/// Predecessors `(spatial, temporal)` of unit `(s, t)`; `None` is the zero state.
pub fn predecessors(
    s: usize,
    t: usize,
    slices: usize,
) -> (Option<(usize, usize)>, Option<(usize, usize)>) {
    let spatial = if s > 0 {
        Some((s - 1, t))
    } else if t > 0 {
        Some((slices - 1, t - 1))
    } else {
        None
    };
    let temporal = (t > 0).then(|| (s, t - 1));
    (spatial, temporal)
}

/// True if every unit appears once, after both of its predecessors.
pub fn is_topological(order: &[(usize, usize)], slices: usize, times: usize) -> bool {
    if order.len() != slices * times {
        return false;
    }
    let mut done = vec![vec![false; slices]; times];
    for &(s, t) in order {
        if s >= slices || t >= times || done[t][s] {
            return false;
        }
        let (sp, tp) = predecessors(s, t, slices);
        if sp.is_some_and(|(a, b)| !done[b][a]) || tp.is_some_and(|(a, b)| !done[b][a]) {
            return false;
        }
        done[t][s] = true;
    }
    true
}

/// Unrolls the grid in the canonical order. `factors[t]` is the factor value
/// tiled at column `t` (ignored when the config has no factor branch).
pub fn grid_forward(
    frames: &[Vec<FeatureMap>],
    factors: &[f64],
    params: &NetworkParams,
    cfg: &NetworkConfig,
) -> Result<GridForward> {
    let slices = frames.first().map_or(0, Vec::len);
    grid_forward_in_order(frames, factors, params, cfg, &grid_order(slices, frames.len()))
}

/// Unrolls the grid visiting units in `order`, which must be topological.
pub fn grid_forward_in_order(
    frames: &[Vec<FeatureMap>],
    factors: &[f64],
    params: &NetworkParams,
    cfg: &NetworkConfig,
    order: &[(usize, usize)],
) -> Result<GridForward> {
    cfg.validate()?;
    let times = frames.len();
    let slices = frames.first().map_or(0, Vec::len);
    contract!(times >= 1 && slices >= 1, "grid needs S >= 1 and T >= 1");
    contract!(
        frames.iter().all(|c| c.len() == slices),
        "ragged frame grid"
    );
    if cfg.factor_dim > 0 {
        contract!(
            factors.len() >= times,
            "missing interval factor: {} factors for {} columns",
            factors.len(),
            times
        );
    }
    contract!(
        is_topological(order, slices, times),
        "evaluation order is not a topological order of the grid"
    );

    let b = cfg.bottleneck_size();
    let zero = CellState::zero(b, b, cfg.hidden);
    let mut states: Vec<Vec<Option<CellState>>> = vec![vec![None; slices]; times];
    let mut outputs: Vec<Vec<Option<FeatureMap>>> = vec![vec![None; slices]; times];
    let mut units: Vec<Vec<Option<UnitCache>>> = vec![vec![None; slices]; times];

    for &(s, t) in order {
        let (encoded, enc_cache) = encode_cached(&frames[t][s], params, cfg)?;
        let cell_input = if cfg.factor_dim > 0 {
            let tile = tile_factor(factors[t], b, b, cfg.factor_dim)?;
            concat_channels(&[&encoded, &tile])?
        } else {
            encoded
        };
        let (sp, tp) = predecessors(s, t, slices);
        let spatial = sp.map_or(&zero, |(a, c)| states[c][a].as_ref().expect("topological"));
        let temporal = tp.map_or(&zero, |(a, c)| states[c][a].as_ref().expect("topological"));
        let (state, cell_cache) = params.cell.0.forward(&cell_input, &[spatial, temporal])?;
        let (out, dec_cache) = decode_cached(&state.hidden, params)?;
        states[t][s] = Some(state);
        outputs[t][s] = Some(out);
        units[t][s] = Some(UnitCache {
            encoder: enc_cache,
            cell: cell_cache,
            decoder: dec_cache,
        });
    }

    Ok(GridForward {
        outputs: unwrap(outputs),
        states: unwrap(states),
        units: unwrap(units),
        factor_dim: cfg.factor_dim,
    })
}

fn unwrap<T>(v: Vec<Vec<Option<T>>>) -> Vec<Vec<T>> {
    v.into_iter()
        .map(|c| c.into_iter().map(|x| x.expect("visited")).collect())
        .collect()
}

/// Interval factors for the input columns of a prediction: column `t`
/// carries the interval from time `t` to `t + 1`.
pub fn interval_factors(intervals: &[f64], columns: usize) -> Result<Vec<f64>> {
    contract!(
        intervals.len() >= columns,
        "missing interval: need {columns}, have {}",
        intervals.len()
    );
    Ok(intervals[..columns]
        .iter()
        .map(|&d| normalize_interval(d))
        .collect())
}

/// Predicted frames for times 2 and 3 from inputs at times 1 and 2.
#[derive(Clone, Debug)]
pub struct FuturePrediction {
    /// Output of the time-1 column (prediction of time 2), per slice, `[0, 1]`.
    pub time2: Vec<FeatureMap>,
    /// Output of the time-2 column (prediction of time 3), per slice, `[0, 1]`.
    pub time3: Vec<FeatureMap>,
}

/// Runs the `T = 2` grid on slices from times 1 and 2. `intervals` holds the
/// days (t1 -> t2, t2 -> target); substituting a longer second interval
/// predicts a later future.
pub fn predict_future(
    time1: &[FeatureMap],
    time2: &[FeatureMap],
    intervals: &[f64],
    params: &NetworkParams,
    cfg: &NetworkConfig,
) -> Result<FuturePrediction> {
    if cfg.mode != Mode::Prediction {
        return Err(Error::Config("predict_future needs a prediction-mode network".into()));
    }
    contract!(
        intervals.len() >= 2,
        "predict_future needs intervals (t1->t2) and (t2->t3), got {}",
        intervals.len()
    );
    let frames = vec![time1.to_vec(), time2.to_vec()];
    let factors = interval_factors(intervals, 2)?;
    let mut fwd = grid_forward(&frames, &factors, params, cfg)?;
    let time3 = fwd.outputs.pop().expect("two columns");
    let time2 = fwd.outputs.pop().expect("two columns");
    Ok(FuturePrediction { time2, time3 })
}

/// Per-frame mask probabilities for every `(s, t)` of a segmentation sequence.
pub fn segment_probabilities(
    frames: &[Vec<FeatureMap>],
    params: &NetworkParams,
    cfg: &NetworkConfig,
) -> Result<Vec<Vec<FeatureMap>>> {
    if cfg.mode != Mode::Segmentation {
        return Err(Error::Config("segment needs a segmentation-mode network".into()));
    }
    if let Some(f) = frames.first().and_then(|c| c.first()) {
        if f.channels() != cfg.input_channels {
            return Err(Error::Config(format!(
                "segmentation input has {} channels, expected {}",
                f.channels(),
                cfg.input_channels
            )));
        }
    }
    Ok(grid_forward(frames, &[], params, cfg)?.outputs)
}

/// Binary masks `[t][s]` (row-major per frame): probability strictly above
/// 0.5, then the largest 4-connected component of each frame.
pub fn segment(
    frames: &[Vec<FeatureMap>],
    params: &NetworkParams,
    cfg: &NetworkConfig,
) -> Result<Vec<Vec<Vec<bool>>>> {
    let probs = segment_probabilities(frames, params, cfg)?;
    Ok(probs
        .iter()
        .map(|col| {
            col.iter()
                .map(|p| {
                    let fg: Vec<bool> = p.data().iter().map(|&v| v > 0.5).collect();
                    postprocess::largest_component(&fg, p.rows(), p.cols())
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_frames(rng: &mut ChaCha8Rng, cfg: &NetworkConfig, s: usize, t: usize) -> Vec<Vec<FeatureMap>> {
        (0..t)
            .map(|_| {
                (0..s)
                    .map(|_| {
                        let n = cfg.input_size * cfg.input_size * cfg.input_channels;
                        let d = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
                        FeatureMap::new(cfg.input_size, cfg.input_size, cfg.input_channels, d).unwrap()
                    })
                    .collect()
            })
            .collect()
    }

    fn zero_params(cfg: &NetworkConfig) -> NetworkParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = NetworkParams::init(cfg, &mut rng).unwrap();
        for t in p.tensors_mut() {
            t.fill(0.0);
        }
        p
    }

    #[test]
    fn presets_validate() {
        NetworkConfig::prediction().validate().unwrap();
        NetworkConfig::segmentation().validate().unwrap();
        NetworkConfig::tiny().validate().unwrap();
        let mut bad = NetworkConfig::prediction();
        bad.factor_dim = 0;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = NetworkConfig::prediction();
        bad.encoder_channels.pop();
        bad.encoder_strides.pop();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn prediction_encoder_reaches_8x8x8() {
        let cfg = NetworkConfig::prediction();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = NetworkParams::init(&cfg, &mut rng).unwrap();
        let f = &random_frames(&mut rng, &cfg, 1, 1)[0][0];
        assert_eq!(encode(f, &p, &cfg).unwrap().shape(), (8, 8, 8));
        assert_eq!(cfg.cell_input_channels(), 9);
    }

    #[test]
    fn segmentation_bottleneck_is_12x12x64() {
        let cfg = NetworkConfig::segmentation();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = NetworkParams::init(&cfg, &mut rng).unwrap();
        let f = &random_frames(&mut rng, &cfg, 1, 1)[0][0];
        assert_eq!(encode(f, &p, &cfg).unwrap().shape(), (12, 12, 64));
        let out = decode(&FeatureMap::zeros(12, 12, 64), &p).unwrap();
        assert_eq!(out.shape(), (96, 96, 1));
    }

    #[test]
    fn zero_input_zero_bias_encodes_to_zero() {
        let cfg = NetworkConfig::prediction();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = NetworkParams::init(&cfg, &mut rng).unwrap();
        let y = encode(&FeatureMap::zeros(32, 32, 3), &p, &cfg).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            encode(&FeatureMap::zeros(16, 16, 3), &p, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn factor_tiling() {
        let t = tile_factor(0.5, 8, 8, 1).unwrap();
        assert_eq!(t.shape(), (8, 8, 1));
        assert!(t.data().iter().all(|&v| v == 0.5));
        let cat = concat_channels(&[&FeatureMap::zeros(8, 8, 8), &t]).unwrap();
        assert_eq!(cat.shape(), (8, 8, 9));
        assert!(matches!(tile_factor(0.5, 8, 8, 0), Err(Error::Config(_))));
        assert!((normalize_interval(398.0) - 1.090_410_958_904_109_6).abs() < 1e-15);
    }

    #[test]
    fn single_unit_zero_params_hand_trace() {
        // Zero weights: encoder output 0, cell input 0 except the factor
        // channel (which has zero weights), gates 0.5, candidate 0, so C = 0,
        // H = 0; every decoder layer outputs its (zero) bias, and the sigmoid
        // head emits 0.5 everywhere.
        let cfg = NetworkConfig::tiny();
        let p = zero_params(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames = random_frames(&mut rng, &cfg, 1, 1);
        let fwd = grid_forward(&frames, &[1.0], &p, &cfg).unwrap();
        assert!(fwd.outputs[0][0].data().iter().all(|&v| v == 0.5));
        assert!(fwd.states[0][0].cell.data().iter().all(|&v| v == 0.0));

        // With a candidate bias b and input bias a: C = sig(a) tanh(b),
        // H = sig(0) tanh(C); decoder with zero weights still yields 0.5.
        let mut p2 = p.clone();
        let q = &mut p2.cell.0;
        for co in 0..cfg.hidden {
            let (i, c) = (q.gate_channel(q.input_gate(), co), q.gate_channel(q.candidate_gate(), co));
            q.kernel.bias[i] = 0.4;
            q.kernel.bias[c] = 0.9;
        }
        let fwd = grid_forward(&frames, &[1.0], &p2, &cfg).unwrap();
        let c = (1.0 / (1.0 + (-0.4f64).exp())) * 0.9f64.tanh();
        let h = 0.5 * c.tanh();
        assert!(fwd.states[0][0].cell.data().iter().all(|v| (v - c).abs() < 1e-15));
        assert!(fwd.states[0][0].hidden.data().iter().all(|v| (v - h).abs() < 1e-15));
    }

    #[test]
    fn canonical_order_is_the_unique_topological_order() {
        // The global-context link chains every column onto the previous one,
        // so the grid DAG admits exactly one topological order.
        let (s, t) = (2, 2);
        let units = grid_order(s, t);
        let mut valid = Vec::new();
        let mut perm: Vec<usize> = (0..units.len()).collect();
        permute(&mut perm, 0, &mut |p| {
            let order: Vec<_> = p.iter().map(|&i| units[i]).collect();
            if is_topological(&order, s, t) {
                valid.push(order);
            }
        });
        assert_eq!(valid, vec![units.clone()]);
        assert!(is_topological(&grid_order(5, 3), 5, 3));
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn rejects_non_topological_order() {
        let cfg = NetworkConfig::tiny();
        let p = zero_params(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames = random_frames(&mut rng, &cfg, 2, 2);
        let order = vec![(0, 0), (0, 1), (1, 0), (1, 1)];
        assert!(grid_forward_in_order(&frames, &[1.0, 1.0], &p, &cfg, &order).is_err());
    }

    #[test]
    fn global_context_link_is_live() {
        let cfg = NetworkConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = NetworkParams::init(&cfg, &mut rng).unwrap();
        let frames = random_frames(&mut rng, &cfg, 5, 2);
        let base = grid_forward(&frames, &[1.0, 1.0], &p, &cfg).unwrap();
        let mut perturbed = frames.clone();
        perturbed[0][0].data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
        let out = grid_forward(&perturbed, &[1.0, 1.0], &p, &cfg).unwrap();
        let delta: f64 = out.outputs[1][4]
            .data()
            .iter()
            .zip(base.outputs[1][4].data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(delta > 0.0);
    }

    #[test]
    fn no_cross_slice_leakage_without_spatial_pathway() {
        // Zero spatial kernels and zero spatial-forget bias does not remove
        // f^S * C_{s-1}; cutting the spatial pathway means the spatial
        // hidden kernels AND the spatial forget gate contribute nothing. The
        // forget gate is forced to ~0 with a very negative bias.
        let cfg = NetworkConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = NetworkParams::init(&cfg, &mut rng).unwrap();
        p.cell.0.zero_source(1 + crate::cells::SPATIAL);
        let q = &mut p.cell.0;
        for co in 0..cfg.hidden {
            let fs = q.gate_channel(q.forget_gate(crate::cells::SPATIAL), co);
            q.kernel.bias[fs] = -800.0;
            for ky in 0..3 {
                for kx in 0..3 {
                    for ci in 0..q.kernel.in_channels {
                        let i = q.kernel.weight_index(ky, kx, ci, fs);
                        q.kernel.weights[i] = 0.0;
                    }
                }
            }
        }
        let frames = random_frames(&mut rng, &cfg, 3, 2);
        let base = grid_forward(&frames, &[1.0, 1.0], &p, &cfg).unwrap();
        let mut perturbed = frames.clone();
        perturbed[0][1].data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
        perturbed[1][0].data_mut().iter_mut().for_each(|v| *v = 1.0 - *v);
        let out = grid_forward(&perturbed, &[1.0, 1.0], &p, &cfg).unwrap();
        for t in 0..2 {
            assert_eq!(out.outputs[t][2], base.outputs[t][2]);
        }
        assert_ne!(out.outputs[1][1], base.outputs[1][1]);
    }

    #[test]
    fn outputs_in_unit_interval_and_shape_preserved() {
        for cfg in [NetworkConfig::tiny(), NetworkConfig::prediction()] {
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let p = NetworkParams::init(&cfg, &mut rng).unwrap();
            let frames = random_frames(&mut rng, &cfg, 2, 2);
            let fwd = grid_forward(&frames, &[1.0, 1.2], &p, &cfg).unwrap();
            for col in &fwd.outputs {
                for o in col {
                    assert_eq!(o.shape(), (cfg.input_size, cfg.input_size, cfg.output_channels()));
                    assert!(o.data().iter().all(|&v| v > 0.0 && v < 1.0));
                }
            }
        }
    }

    #[test]
    fn constant_inputs_with_zero_params_give_constant_outputs() {
        let cfg = NetworkConfig::prediction();
        let p = zero_params(&cfg);
        let frame = FeatureMap::filled(32, 32, 3, 0.3);
        let slices = vec![frame; 5];
        let pred = predict_future(&slices, &slices, &[398.0, 400.0], &p, &cfg).unwrap();
        for f in pred.time2.iter().chain(&pred.time3) {
            let v0 = f.data()[0];
            assert!(f.data().iter().all(|&v| v == v0));
        }
        assert!(predict_future(&pred.time2, &pred.time2, &[398.0], &p, &cfg).is_err());
    }

    #[test]
    fn segment_rejects_wrong_mode_and_channels() {
        let cfg = NetworkConfig::tiny();
        let p = zero_params(&cfg);
        let frames = vec![vec![FeatureMap::zeros(8, 8, 3)]];
        assert!(matches!(segment(&frames, &p, &cfg), Err(Error::Config(_))));
    }
}
