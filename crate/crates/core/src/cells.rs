//! Convolutional LSTM units.
//!
//! Both units are instances of one gated cell with `n` predecessor states:
//! a forget gate per predecessor, then the input gate, the tanh input
//! modulation and the output gate,
//!
//! ```text
//! C = sum_k f_k ⊙ C_k + i ⊙ tanh(W_c * [X, H_1..H_n] + b_c)
//! H = o ⊙ tanh(C)
//! ```
//!
//! With `n = 1` this is the ConvLSTM unit; with `n = 2` (spatial predecessor
//! first, temporal second) it is the ST-ConvLSTM unit with its two forget
//! gates.
//!
//! All gate convolutions are fused into one kernel whose input channels are
//! `[X, H_1, .., H_n]` and whose output channels are the gate blocks
//! `[f_1, .., f_n, i, c~, o]`, each `hidden` wide. Slicing that kernel gives
//! back the per-gate `W_x*` / `W_h*` kernels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::tensor::ops::{self, concat_channels, concat_channels_backward, hadamard};
use crate::tensor::{conv2d, conv2d_backward, ConvKernel, FeatureMap};

/// Paired memory cell and hidden output of one grid unit.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub cell: FeatureMap,
    pub hidden: FeatureMap,
}

impl CellState {
    /// The all-zero state fed to boundary units.
    pub fn zero(rows: usize, cols: usize, hidden: usize) -> Self {
        Self {
            cell: FeatureMap::zeros(rows, cols, hidden),
            hidden: FeatureMap::zeros(rows, cols, hidden),
        }
    }

    pub fn zeros_like(other: &CellState) -> Self {
        Self {
            cell: FeatureMap::zeros_like(&other.cell),
            hidden: FeatureMap::zeros_like(&other.hidden),
        }
    }

    pub fn add_assign(&mut self, other: &CellState) -> Result<()> {
        self.cell.add_assign(&other.cell)?;
        self.hidden.add_assign(&other.hidden)
    }
}

/// Parameters of a gated convolutional cell with `predecessors` incoming states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatedCellParams {
    pub predecessors: usize,
    pub input_channels: usize,
    pub hidden: usize,
    pub kernel: ConvKernel,
}

impl GatedCellParams {
    pub fn zeros(predecessors: usize, input_channels: usize, hidden: usize) -> Result<Self> {
        if predecessors == 0 {
            return Err(Error::Config("cell needs at least one predecessor".into()));
        }
        let kernel = ConvKernel::zeros(
            3,
            3,
            input_channels + predecessors * hidden,
            (predecessors + 3) * hidden,
            1,
        )?;
        Ok(Self {
            predecessors,
            input_channels,
            hidden,
            kernel,
        })
    }

    /// Uniform fan-in initialisation, forget-gate biases set to `forget_bias`.
    pub fn init<R: Rng + ?Sized>(
        predecessors: usize,
        input_channels: usize,
        hidden: usize,
        forget_bias: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(predecessors, input_channels, hidden)?;
        p.kernel = ConvKernel::uniform(
            3,
            3,
            p.kernel.in_channels,
            p.kernel.out_channels,
            1,
            rng,
        )?;
        for b in &mut p.kernel.bias[..predecessors * hidden] {
            *b = forget_bias;
        }
        Ok(p)
    }

    pub fn gates(&self) -> usize {
        self.predecessors + 3
    }

    /// Output channel of the fused kernel for `gate` (see module docs), hidden unit `co`.
    #[inline]
    pub fn gate_channel(&self, gate: usize, co: usize) -> usize {
        gate * self.hidden + co
    }

    /// Input channel of the fused kernel. Source 0 is the input frame,
    /// source `k >= 1` is the hidden state of predecessor `k`.
    #[inline]
    pub fn source_channel(&self, source: usize, ci: usize) -> usize {
        if source == 0 {
            ci
        } else {
            self.input_channels + (source - 1) * self.hidden + ci
        }
    }

    pub fn forget_gate(&self, k: usize) -> usize {
        k
    }

    pub fn input_gate(&self) -> usize {
        self.predecessors
    }

    pub fn candidate_gate(&self) -> usize {
        self.predecessors + 1
    }

    pub fn output_gate(&self) -> usize {
        self.predecessors + 2
    }

    /// Zeroes every weight reading from predecessor `k`'s hidden state.
    pub fn zero_source(&mut self, source: usize) {
        let width = if source == 0 {
            self.input_channels
        } else {
            self.hidden
        };
        let out = self.kernel.out_channels;
        for ky in 0..3 {
            for kx in 0..3 {
                for ci in 0..width {
                    let c = self.source_channel(source, ci);
                    let base = self.kernel.weight_index(ky, kx, c, 0);
                    self.kernel.weights[base..base + out].fill(0.0);
                }
            }
        }
    }

    pub fn forward(&self, x: &FeatureMap, prev: &[&CellState]) -> Result<(CellState, CellCache)> {
        contract!(
            prev.len() == self.predecessors,
            "cell expects {} predecessor states, got {}",
            self.predecessors,
            prev.len()
        );
        contract!(
            x.channels() == self.input_channels,
            "cell input has {} channels, expected {}",
            x.channels(),
            self.input_channels
        );
        for p in prev {
            contract!(
                p.hidden.shape() == (x.rows(), x.cols(), self.hidden)
                    && p.cell.shape() == p.hidden.shape(),
                "predecessor state shape {:?} incompatible with input {}x{} and hidden {}",
                p.hidden.shape(),
                x.rows(),
                x.cols(),
                self.hidden
            );
        }
        let mut parts = vec![x];
        parts.extend(prev.iter().map(|p| &p.hidden));
        let input = concat_channels(&parts)?;
        let pre = conv2d(&input, &self.kernel)?;

        let f = self.hidden;
        let n = self.predecessors;
        let forget = (0..n)
            .map(|k| Ok(ops::sigmoid(&pre.slice_channels(k * f, f)?)))
            .collect::<Result<Vec<_>>>()?;
        let input_gate = ops::sigmoid(&pre.slice_channels(n * f, f)?);
        let candidate = ops::tanh(&pre.slice_channels((n + 1) * f, f)?);
        let output_gate = ops::sigmoid(&pre.slice_channels((n + 2) * f, f)?);

        let mut cell = hadamard(&input_gate, &candidate)?;
        for (fk, pk) in forget.iter().zip(prev) {
            cell.add_assign(&hadamard(fk, &pk.cell)?)?;
        }
        let tanh_cell = ops::tanh(&cell);
        let hidden = hadamard(&output_gate, &tanh_cell)?;

        let cache = CellCache {
            input,
            prev_cells: prev.iter().map(|p| p.cell.clone()).collect(),
            forget,
            input_gate,
            candidate,
            output_gate,
            tanh_cell,
        };
        Ok((CellState { cell, hidden }, cache))
    }

    /// Backward from upstream gradients on the produced `(C, H)`.
    pub fn backward(
        &self,
        cache: &CellCache,
        grad_cell: &FeatureMap,
        grad_hidden: &FeatureMap,
    ) -> Result<CellGrads> {
        contract!(
            cache.forget.len() == self.predecessors,
            "cell cache holds {} forget gates, params expect {}",
            cache.forget.len(),
            self.predecessors
        );
        let (d_out, d_tanh) = ops::hadamard_backward(&cache.output_gate, &cache.tanh_cell, grad_hidden)?;
        let mut dc = ops::tanh_backward(&cache.tanh_cell, &d_tanh)?;
        dc.add_assign(grad_cell)?;

        let mut d_pre_parts = Vec::with_capacity(self.gates());
        let mut d_prev_cells = Vec::with_capacity(self.predecessors);
        for (fk, ck) in cache.forget.iter().zip(&cache.prev_cells) {
            let (dfk, dck) = ops::hadamard_backward(fk, ck, &dc)?;
            d_pre_parts.push(ops::sigmoid_backward(fk, &dfk)?);
            d_prev_cells.push(dck);
        }
        let (di, dg) = ops::hadamard_backward(&cache.input_gate, &cache.candidate, &dc)?;
        d_pre_parts.push(ops::sigmoid_backward(&cache.input_gate, &di)?);
        d_pre_parts.push(ops::tanh_backward(&cache.candidate, &dg)?);
        d_pre_parts.push(ops::sigmoid_backward(&cache.output_gate, &d_out)?);

        let refs: Vec<&FeatureMap> = d_pre_parts.iter().collect();
        let d_pre = concat_channels(&refs)?;
        let conv = conv2d_backward(&cache.input, &self.kernel, &d_pre)?;

        let mut widths = vec![self.input_channels];
        widths.extend(std::iter::repeat_n(self.hidden, self.predecessors));
        let mut split = concat_channels_backward(&conv.input, &widths)?.into_iter();
        let input = split.next().expect("input slice");
        let prev = d_prev_cells
            .into_iter()
            .zip(split)
            .map(|(cell, hidden)| CellState { cell, hidden })
            .collect();
        Ok(CellGrads {
            input,
            prev,
            weights: conv.weights,
            bias: conv.bias,
        })
    }
}

/// Forward intermediates retained for the backward pass.
#[derive(Clone, Debug)]
pub struct CellCache {
    input: FeatureMap,
    prev_cells: Vec<FeatureMap>,
    forget: Vec<FeatureMap>,
    input_gate: FeatureMap,
    candidate: FeatureMap,
    output_gate: FeatureMap,
    tanh_cell: FeatureMap,
}

impl CellCache {
    pub fn forget_gates(&self) -> &[FeatureMap] {
        &self.forget
    }

    pub fn input_gate(&self) -> &FeatureMap {
        &self.input_gate
    }

    pub fn candidate(&self) -> &FeatureMap {
        &self.candidate
    }

    pub fn output_gate(&self) -> &FeatureMap {
        &self.output_gate
    }
}

#[derive(Clone, Debug)]
pub struct CellGrads {
    /// Gradient on the input frame features.
    pub input: FeatureMap,
    /// Gradients on each predecessor state, in predecessor order.
    pub prev: Vec<CellState>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// ConvLSTM unit: one predecessor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLstmParams(pub GatedCellParams);

/// ST-ConvLSTM unit: spatial predecessor `(s-1, t)` then temporal `(s, t-1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StConvLstmParams(pub GatedCellParams);

pub const SPATIAL: usize = 0;
pub const TEMPORAL: usize = 1;

impl ConvLstmParams {
    pub fn zeros(input_channels: usize, hidden: usize) -> Result<Self> {
        Ok(Self(GatedCellParams::zeros(1, input_channels, hidden)?))
    }
}

impl StConvLstmParams {
    pub fn zeros(input_channels: usize, hidden: usize) -> Result<Self> {
        Ok(Self(GatedCellParams::zeros(2, input_channels, hidden)?))
    }

    pub fn init<R: Rng + ?Sized>(
        input_channels: usize,
        hidden: usize,
        forget_bias: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self(GatedCellParams::init(
            2,
            input_channels,
            hidden,
            forget_bias,
            rng,
        )?))
    }

    /// The ConvLSTM obtained by dropping the spatial pathway: the temporal
    /// forget gate becomes the single forget gate and the temporal hidden
    /// kernels become `W_h*`.
    pub fn temporal_only(&self) -> ConvLstmParams {
        let p = &self.0;
        let mut out = GatedCellParams::zeros(1, p.input_channels, p.hidden).expect("valid dims");
        // new gates [f, i, c~, o] <- old [f_T, i, c~, o]
        let gate_map = [p.forget_gate(TEMPORAL), p.input_gate(), p.candidate_gate(), p.output_gate()];
        for (ng, &og) in gate_map.iter().enumerate() {
            for co in 0..p.hidden {
                let (nco, oco) = (out.gate_channel(ng, co), p.gate_channel(og, co));
                out.kernel.bias[nco] = p.kernel.bias[oco];
                for ky in 0..3 {
                    for kx in 0..3 {
                        for (ns, os) in [(0, 0), (1, 1 + TEMPORAL)] {
                            let width = if ns == 0 { p.input_channels } else { p.hidden };
                            for ci in 0..width {
                                let w = p.kernel.weight(ky, kx, p.source_channel(os, ci), oco);
                                let idx = out.kernel.weight_index(ky, kx, out.source_channel(ns, ci), nco);
                                out.kernel.weights[idx] = w;
                            }
                        }
                    }
                }
            }
        }
        ConvLstmParams(out)
    }
}

pub fn convlstm_step(x: &FeatureMap, prev: &CellState, p: &ConvLstmParams) -> Result<CellState> {
    Ok(p.0.forward(x, &[prev])?.0)
}

pub fn st_convlstm_step(
    x: &FeatureMap,
    spatial_prev: &CellState,
    temporal_prev: &CellState,
    p: &StConvLstmParams,
) -> Result<CellState> {
    Ok(p.0.forward(x, &[spatial_prev, temporal_prev])?.0)
}
