//! Grid loss, backpropagation through the unrolling grid, ADAM and the
//! training loop.

pub mod checkpoint;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cells::CellState;
use crate::error::{contract, Error, Result};
use crate::network::{
    grid_forward, grid_order, predecessors, DecoderCache, EncoderCache, GridForward, NetworkConfig,
    NetworkParams,
};
use crate::tensor::ops::{self, concat_channels_backward};
use crate::tensor::{conv2d_backward, deconv2d_backward, FeatureMap};

/// Supervision for a grid: `targets[t][s]` is compared with the output of
/// unit `(s, t)`; `None` marks an unlabeled unit.
pub type GridTargets = Vec<Vec<Option<FeatureMap>>>;

/// One training example: input frames `[t][s]`, per-column factors and
/// per-unit targets.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingItem {
    pub inputs: Vec<Vec<FeatureMap>>,
    pub factors: Vec<f64>,
    pub targets: GridTargets,
}

impl TrainingItem {
    /// Prediction supervision: columns are times 1..T, targets are the
    /// frames one time step later. `frames` holds `T + 1` columns.
    pub fn prediction(frames: Vec<Vec<FeatureMap>>, factors: Vec<f64>) -> Result<Self> {
        contract!(frames.len() >= 2, "prediction item needs at least two time points");
        let mut inputs = frames;
        let targets = inputs[1..]
            .iter()
            .map(|col| col.iter().cloned().map(Some).collect())
            .collect();
        inputs.pop();
        Ok(Self {
            inputs,
            factors,
            targets,
        })
    }
}

/// Source of training items; items are materialised on demand so that
/// large augmented sets never need to be resident at once.
pub trait Dataset: Sync {
    fn len(&self) -> usize;
    fn item(&self, index: usize) -> Result<TrainingItem>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset for Vec<TrainingItem> {
    fn len(&self) -> usize {
        <[TrainingItem]>::len(self)
    }

    fn item(&self, index: usize) -> Result<TrainingItem> {
        Ok(self[index].clone())
    }
}

fn check_targets(outputs: &[Vec<FeatureMap>], targets: &GridTargets) -> Result<usize> {
    contract!(
        targets.len() == outputs.len(),
        "targets have {} columns, outputs {}",
        targets.len(),
        outputs.len()
    );
    let mut elements = 0;
    for (oc, tc) in outputs.iter().zip(targets) {
        contract!(tc.len() == oc.len(), "targets and outputs differ in slice count");
        for (o, t) in oc.iter().zip(tc) {
            if let Some(t) = t {
                contract!(
                    o.same_shape(t),
                    "target shape {:?} != prediction shape {:?}",
                    t.shape(),
                    o.shape()
                );
                elements += o.len();
            }
        }
    }
    Ok(elements)
}

/// Sum of squared differences over all labeled units.
pub fn grid_sse(predictions: &[Vec<FeatureMap>], targets: &GridTargets) -> Result<f64> {
    check_targets(predictions, targets)?;
    let mut sse = 0.0;
    for (oc, tc) in predictions.iter().zip(targets) {
        for (o, t) in oc.iter().zip(tc) {
            if let Some(t) = t {
                sse += o
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
        }
    }
    Ok(sse)
}

/// Mean squared error over every pixel, channel and labeled unit.
pub fn grid_loss(predictions: &[Vec<FeatureMap>], targets: &GridTargets) -> Result<f64> {
    let n = check_targets(predictions, targets)?;
    contract!(n > 0, "grid loss over zero labeled elements");
    Ok(grid_sse(predictions, targets)? / n as f64)
}

fn encoder_backward(
    cache: &EncoderCache,
    params: &NetworkParams,
    grad_out: &FeatureMap,
    grads: &mut NetworkParams,
) -> Result<()> {
    let mut g = grad_out.clone();
    for (l, layer) in cache.layers.iter().enumerate().rev() {
        let g_pre = ops::relu_backward(&layer.pre, &g)?;
        let cg = conv2d_backward(&layer.input, &params.encoder[l], &g_pre)?;
        accumulate(&mut grads.encoder[l].weights, &cg.weights);
        accumulate(&mut grads.encoder[l].bias, &cg.bias);
        g = cg.input;
    }
    Ok(())
}

fn decoder_backward(
    cache: &DecoderCache,
    params: &NetworkParams,
    grad_out: &FeatureMap,
    grads: &mut NetworkParams,
) -> Result<FeatureMap> {
    let last = cache.layers.len() - 1;
    let mut g = grad_out.clone();
    for (l, layer) in cache.layers.iter().enumerate().rev() {
        let g_pre = if l == last {
            ops::sigmoid_backward(&cache.output, &g)?
        } else {
            ops::relu_backward(&layer.pre, &g)?
        };
        let cg = deconv2d_backward(&layer.input, &params.decoder[l], &g_pre)?;
        accumulate(&mut grads.decoder[l].weights, &cg.weights);
        accumulate(&mut grads.decoder[l].bias, &cg.bias);
        g = cg.input;
    }
    Ok(g)
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Loss value and parameter gradients of one grid evaluation.
#[derive(Clone, Debug)]
pub struct GridGradients {
    pub loss: f64,
    pub grads: NetworkParams,
}

/// Backpropagates the mean-squared grid loss through a cached forward pass.
///
/// Units are visited in reverse evaluation order. A unit's state gradient
/// is its own output term, then the contribution of its spatial successor,
/// then that of its temporal successor, always summed in that order.
pub fn grid_backward(
    fwd: &GridForward,
    targets: &GridTargets,
    params: &NetworkParams,
) -> Result<GridGradients> {
    let (g, _) = backward_impl(fwd, targets, params, false)?;
    Ok(g)
}

/// Like [`grid_backward`] but also returns each unit's local parameter
/// gradient, indexed `[t][s]`.
pub fn grid_backward_traced(
    fwd: &GridForward,
    targets: &GridTargets,
    params: &NetworkParams,
) -> Result<(GridGradients, Vec<Vec<NetworkParams>>)> {
    let (g, trace) = backward_impl(fwd, targets, params, true)?;
    Ok((g, trace.expect("trace requested")))
}

fn backward_impl(
    fwd: &GridForward,
    targets: &GridTargets,
    params: &NetworkParams,
    trace: bool,
) -> Result<(GridGradients, Option<Vec<Vec<NetworkParams>>>)> {
    let times = fwd.outputs.len();
    let slices = fwd.outputs.first().map_or(0, Vec::len);
    contract!(
        fwd.units.len() == times && fwd.units.iter().all(|c| c.len() == slices),
        "forward cache missing for some grid units"
    );
    let n = check_targets(&fwd.outputs, targets)?;
    contract!(n > 0, "no labeled units to backpropagate");
    let loss = grid_sse(&fwd.outputs, targets)? / n as f64;
    let scale = 2.0 / n as f64;

    let mut grads = params.zeros_like();
    let zero_local = params.zeros_like();
    let mut traced: Vec<Vec<NetworkParams>> = if trace {
        vec![vec![zero_local.clone(); slices]; times]
    } else {
        Vec::new()
    };
    // Gradient deposits on each unit's state from its two successors.
    let mut from_spatial: Vec<Vec<Option<CellState>>> = vec![vec![None; slices]; times];
    let mut from_temporal: Vec<Vec<Option<CellState>>> = vec![vec![None; slices]; times];

    let mut order = grid_order(slices, times);
    order.reverse();
    for (s, t) in order {
        let unit = &fwd.units[t][s];
        let state = &fwd.states[t][s];
        let mut local = if trace {
            zero_local.clone()
        } else {
            std::mem::replace(&mut grads, zero_local.clone())
        };

        let mut g_state = CellState::zeros_like(state);
        if let Some(target) = &targets[t][s] {
            let out = &fwd.outputs[t][s];
            let g_out = out.zip_map(target, |y, x| scale * (y - x));
            g_state.hidden = decoder_backward(&unit.decoder, params, &g_out, &mut local)?;
        }
        if let Some(g) = from_spatial[t][s].take() {
            g_state.add_assign(&g)?;
        }
        if let Some(g) = from_temporal[t][s].take() {
            g_state.add_assign(&g)?;
        }

        let cg = params
            .cell
            .0
            .backward(&unit.cell, &g_state.cell, &g_state.hidden)?;
        accumulate(&mut local.cell.0.kernel.weights, &cg.weights);
        accumulate(&mut local.cell.0.kernel.bias, &cg.bias);

        let encoded_width = params.cell.0.input_channels - fwd.factor_dim;
        let g_encoded = if fwd.factor_dim > 0 {
            concat_channels_backward(&cg.input, &[encoded_width, fwd.factor_dim])?
                .into_iter()
                .next()
                .expect("encoded part")
        } else {
            cg.input
        };
        encoder_backward(&unit.encoder, params, &g_encoded, &mut local)?;

        let mut prev = cg.prev.into_iter();
        let (g_spatial, g_temporal) = (prev.next().expect("spatial"), prev.next().expect("temporal"));
        let (sp, tp) = predecessors(s, t, slices);
        if let Some((a, b)) = sp {
            // The only unit whose spatial slot is fed by (a, b).
            from_spatial[b][a] = Some(g_spatial);
        }
        if let Some((a, b)) = tp {
            from_temporal[b][a] = Some(g_temporal);
        }

        if trace {
            grads.add_assign(&local);
            traced[t][s] = local;
        } else {
            grads = local;
        }
    }
    Ok((
        GridGradients { loss, grads },
        trace.then_some(traced),
    ))
}

/// Forward plus backward for one item.
pub fn item_gradients(
    item: &TrainingItem,
    params: &NetworkParams,
    cfg: &NetworkConfig,
) -> Result<GridGradients> {
    let fwd = grid_forward(&item.inputs, &item.factors, params, cfg)?;
    grid_backward(&fwd, &item.targets, params)
}

/// Forward-only loss for one item.
pub fn item_loss(item: &TrainingItem, params: &NetworkParams, cfg: &NetworkConfig) -> Result<f64> {
    let fwd = grid_forward(&item.inputs, &item.factors, params, cfg)?;
    grid_loss(&fwd.outputs, &item.targets)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected ADAM update of one parameter tensor at step `step`
/// (1-based).
pub fn adam_update(w: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], step: u64, hp: &AdamConfig) {
    let c1 = 1.0 - hp.beta1.powi(step as i32);
    let c2 = 1.0 - hp.beta2.powi(step as i32);
    for i in 0..w.len() {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        w[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

/// First and second moments for every parameter plus the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub hyper: AdamConfig,
    pub step: u64,
    pub m: NetworkParams,
    pub v: NetworkParams,
}

impl OptimizerState {
    pub fn new(params: &NetworkParams, hyper: AdamConfig) -> Self {
        Self {
            hyper,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

pub fn adam_step(
    params: &mut NetworkParams,
    grads: &NetworkParams,
    opt: &mut OptimizerState,
) -> Result<()> {
    let shapes = |p: &NetworkParams| p.tensors().iter().map(|t| t.len()).collect::<Vec<_>>();
    contract!(
        shapes(params) == shapes(grads) && shapes(params) == shapes(&opt.m),
        "parameter, gradient and moment shapes differ"
    );
    opt.step += 1;
    let hyper = opt.hyper;
    let step = opt.step;
    for (((w, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(opt.m.tensors_mut())
        .zip(opt.v.tensors_mut())
    {
        adam_update(w, g, m, v, step, &hyper);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub slices: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn prediction(seed: u64) -> Self {
        Self {
            epochs: 5,
            batch_size: 16,
            slices: 5,
            seed,
            adam: AdamConfig::default(),
        }
    }

    pub fn segmentation(seed: u64) -> Self {
        Self {
            epochs: 30,
            batch_size: 1,
            slices: 10,
            seed,
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.slices == 0 {
            return Err(Error::Config(
                "epochs, batch size and slice count must be >= 1".into(),
            ));
        }
        if !(self.adam.lr >= 0.0 && self.adam.eps > 0.0) {
            return Err(Error::Config("invalid optimizer hyper-parameters".into()));
        }
        Ok(())
    }
}

/// Per-epoch progress handed to the training callback.
#[derive(Clone, Debug)]
pub struct EpochReport<'a> {
    pub epoch: usize,
    pub mean_loss: f64,
    pub params: &'a NetworkParams,
    pub optimizer: &'a OptimizerState,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub optimizer: OptimizerState,
    /// Mean item loss of each epoch, measured before each batch's update.
    pub history: Vec<f64>,
}

/// Trains from a seeded initialisation. Item order is a fresh seeded
/// permutation every epoch; batch items run in parallel and their gradients
/// are averaged in batch order.
pub fn train(
    data: &dyn Dataset,
    cfg: &NetworkConfig,
    tc: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochReport<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let params = NetworkParams::init(cfg, &mut init_rng)?;
    train_from(data, cfg, tc, params, None, on_epoch)
}

/// Continues training from given parameters and optional optimizer state.
pub fn train_from(
    data: &dyn Dataset,
    cfg: &NetworkConfig,
    tc: &TrainConfig,
    mut params: NetworkParams,
    optimizer: Option<OptimizerState>,
    on_epoch: &mut dyn FnMut(&EpochReport<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    tc.validate()?;
    cfg.validate()?;
    params.check(cfg)?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut opt = optimizer.unwrap_or_else(|| OptimizerState::new(&params, tc.adam));
    opt.hyper = tc.adam;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    shuffle_rng.set_stream(1);
    let mut history = Vec::with_capacity(tc.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let results: Vec<Result<GridGradients>> = batch
                .par_iter()
                .map(|&i| item_gradients(&data.item(i)?, &params, cfg))
                .collect();
            let mut total = params.zeros_like();
            for r in results {
                let g = r?;
                loss_sum += g.loss;
                total.add_assign(&g.grads);
            }
            total.scale(1.0 / batch.len() as f64);
            adam_step(&mut params, &total, &mut opt)?;
        }
        let mean_loss = loss_sum / data.len() as f64;
        log::info!("epoch {} mean loss {mean_loss:.6}", epoch + 1);
        history.push(mean_loss);
        on_epoch(&EpochReport {
            epoch: epoch + 1,
            mean_loss,
            params: &params,
            optimizer: &opt,
        })?;
    }
    Ok(TrainOutcome {
        params,
        optimizer: opt,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_map(rng: &mut ChaCha8Rng, r: usize, c: usize, ch: usize) -> FeatureMap {
        let d = (0..r * c * ch).map(|_| rng.random_range(0.0..1.0)).collect();
        FeatureMap::new(r, c, ch, d).unwrap()
    }

    fn tiny_item(rng: &mut ChaCha8Rng, s: usize, t: usize) -> TrainingItem {
        let frames = (0..=t)
            .map(|_| (0..s).map(|_| random_map(rng, 8, 8, 3)).collect())
            .collect();
        TrainingItem::prediction(frames, (0..t).map(|_| rng.random_range(0.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn loss_examples() {
        let a = FeatureMap::filled(2, 2, 1, 0.5);
        let mut b = a.clone();
        let preds = vec![vec![a.clone()]];
        assert_eq!(grid_loss(&preds, &vec![vec![Some(a.clone())]]).unwrap(), 0.0);
        b.set(1, 1, 0, 0.5 + 0.25);
        assert_eq!(grid_sse(&preds, &vec![vec![Some(b.clone())]]).unwrap(), 0.0625);
        assert_eq!(grid_loss(&preds, &vec![vec![Some(b)]]).unwrap(), 0.0625 / 4.0);
        assert!(grid_loss(&preds, &vec![vec![None]]).is_err());
        assert!(grid_loss(&preds, &vec![vec![Some(FeatureMap::zeros(3, 2, 1))]]).is_err());
    }

    #[test]
    fn loss_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let preds: Vec<Vec<FeatureMap>> = (0..2).map(|_| vec![random_map(&mut rng, 4, 4, 3)]).collect();
        let targets: GridTargets = (0..2).map(|_| vec![Some(random_map(&mut rng, 4, 4, 3))]).collect();
        let mut sum = 0.0;
        let mut count = 0;
        for t in 0..2 {
            let (p, q) = (&preds[t][0], targets[t][0].as_ref().unwrap());
            for r in 0..4 {
                for c in 0..4 {
                    for ch in 0..3 {
                        let d = p.get(r, c, ch) - q.get(r, c, ch);
                        sum += d * d;
                        count += 1;
                    }
                }
            }
        }
        let loss = grid_loss(&preds, &targets).unwrap();
        assert!((loss - sum / count as f64).abs() < 1e-14);
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let cfg = NetworkConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = NetworkParams::init(&cfg, &mut rng).unwrap();
        let item = tiny_item(&mut rng, 2, 2);
        let fwd = grid_forward(&item.inputs, &item.factors, &params, &cfg).unwrap();
        let targets = fwd.outputs.iter().map(|c| c.iter().cloned().map(Some).collect()).collect();
        let g = grid_backward(&fwd, &targets, &params).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.grads.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn shared_weight_gradient_is_sum_of_unit_gradients() {
        let cfg = NetworkConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = NetworkParams::init(&cfg, &mut rng).unwrap();
        let item = tiny_item(&mut rng, 3, 2);
        let fwd = grid_forward(&item.inputs, &item.factors, &params, &cfg).unwrap();
        let plain = grid_backward(&fwd, &item.targets, &params).unwrap();
        let (traced, units) = grid_backward_traced(&fwd, &item.targets, &params).unwrap();
        assert_eq!(plain.grads, traced.grads);
        let mut sum = params.zeros_like();
        for (s, t) in grid_order(3, 2).into_iter().rev() {
            sum.add_assign(&units[t][s]);
        }
        assert_eq!(sum.cell, plain.grads.cell);
        assert!(units[0][0].cell.0.kernel.weights.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn backward_is_repeatable() {
        let cfg = NetworkConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let params = NetworkParams::init(&cfg, &mut rng).unwrap();
        let item = tiny_item(&mut rng, 2, 2);
        let a = item_gradients(&item, &params, &cfg).unwrap();
        let b = item_gradients(&item, &params, &cfg).unwrap();
        assert_eq!(a.grads, b.grads);
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut w = vec![0.3, -1.2];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_update(&mut w, &[0.0, 0.0], &mut m, &mut v, 1, &AdamConfig::default());
        assert_eq!(w, vec![0.3, -1.2]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let hp = AdamConfig::default();
        for g in [1e-3, 0.02, 1.0, -7.5, 300.0] {
            let mut w = vec![0.0];
            let (mut m, mut v) = (vec![0.0], vec![0.0]);
            adam_update(&mut w, &[g], &mut m, &mut v, 1, &hp);
            assert!((w[0].abs() - hp.lr).abs() <= 0.01 * hp.lr, "g={g} dw={}", w[0]);
            assert_eq!(w[0].signum(), -g.signum());
        }
    }

    #[test]
    fn adam_minimises_a_parabola() {
        let hp = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut w = vec![1.0];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        for step in 1..=100 {
            let g = [2.0 * w[0]];
            adam_update(&mut w, &g, &mut m, &mut v, step, &hp);
        }
        assert!(w[0].abs() < 0.05, "w = {}", w[0]);
    }

    #[test]
    fn empty_dataset_is_config_error() {
        let cfg = NetworkConfig::tiny();
        let data: Vec<TrainingItem> = Vec::new();
        let r = train(&data, &cfg, &TrainConfig::prediction(1), &mut |_| Ok(()));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_params_and_loss() {
        let cfg = NetworkConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let data: Vec<TrainingItem> = (0..4).map(|_| tiny_item(&mut rng, 2, 2)).collect();
        let mut tc = TrainConfig::prediction(3);
        tc.epochs = 3;
        tc.batch_size = 2;
        tc.adam.lr = 0.0;
        let init = NetworkParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let out = train(&data, &cfg, &tc, &mut |_| Ok(())).unwrap();
        assert_eq!(out.params, init);
        assert!(out.history.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-15));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let cfg = NetworkConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let data: Vec<TrainingItem> = (0..6).map(|_| tiny_item(&mut rng, 2, 2)).collect();
        let mut tc = TrainConfig::prediction(9);
        tc.epochs = 8;
        tc.batch_size = 2;
        tc.adam.lr = 1e-2;
        let a = train(&data, &cfg, &tc, &mut |_| Ok(())).unwrap();
        let b = train(&data, &cfg, &tc, &mut |_| Ok(())).unwrap();
        let bits = |h: &[f64]| h.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.history), bits(&b.history));
        assert_eq!(a.params, b.params);
        assert!(a.history.last().unwrap() < a.history.first().unwrap());
    }
}
