//! Central finite-difference verification of every hand-written backward
//! pass: tensor primitives, both cells and the full unrolled network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cells::{CellState, GatedCellParams};
use crate::error::Result;
use crate::network::{grid_forward, NetworkConfig, NetworkParams, Mode};
use crate::tensor::ops;
use crate::tensor::{conv2d, conv2d_backward, deconv2d, deconv2d_backward, ConvKernel, FeatureMap};
use crate::training::{grid_backward, GridTargets};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-5;
/// Magnitude below which errors are measured absolutely.
const FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub entries: usize,
    pub worst_relative_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub checks: Vec<CheckResult>,
    pub worst_relative_error: f64,
    pub passed: bool,
}

/// Worst relative error between `analytic` and central differences of
/// `loss` around `point`.
pub fn check_vector(point: &[f64], analytic: &[f64], loss: impl Fn(&[f64]) -> f64) -> f64 {
    check_terms(point, analytic, |x| vec![loss(x)])
}

/// Central differences of a loss given as a sum of terms. The two
/// perturbed evaluations are differenced term by term before summing, which
/// keeps large loss totals from swamping the `O(step)` differences.
pub fn check_terms(point: &[f64], analytic: &[f64], terms: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    assert_eq!(point.len(), analytic.len());
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + STEP;
        let up = terms(&x);
        x[i] = orig - STEP;
        let down = terms(&x);
        x[i] = orig;
        let diff: f64 = up.iter().zip(&down).map(|(u, d)| u - d).sum();
        let numeric = diff / (2.0 * STEP);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

fn weighted_terms(y: &FeatureMap, r: &FeatureMap) -> Vec<f64> {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).collect()
}

fn random_map(rng: &mut ChaCha8Rng, r: usize, c: usize, ch: usize, lo: f64, hi: f64) -> FeatureMap {
    let d = (0..r * c * ch).map(|_| rng.random_range(lo..hi)).collect();
    FeatureMap::new(r, c, ch, d).expect("dims")
}

/// Keeps values at least `gap` away from the ReLU kink.
fn away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize, ch: usize, gap: f64) -> FeatureMap {
    random_map(rng, r, c, ch, -1.0, 1.0).map(|v| if v >= 0.0 { v + gap } else { v - gap })
}

fn with_data(like: &FeatureMap, data: &[f64]) -> FeatureMap {
    FeatureMap::new(like.rows(), like.cols(), like.channels(), data.to_vec()).expect("dims")
}

struct Collector {
    suite: &'static str,
    checks: Vec<CheckResult>,
}

impl Collector {
    fn push(&mut self, name: impl Into<String>, entries: usize, worst: f64) {
        self.checks.push(CheckResult {
            suite: self.suite.into(),
            name: name.into(),
            entries,
            worst_relative_error: worst,
        });
    }
}

fn conv_case(rng: &mut ChaCha8Rng, out: &mut Collector, transposed: bool, stride: usize) -> Result<()> {
    let (h, cin, cout) = (6, 2, 3);
    let x = random_map(rng, h, h, cin, -1.0, 1.0);
    let mut k = ConvKernel::uniform(3, 3, cin, cout, stride, rng)?;
    k.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    let fwd = |x: &FeatureMap, k: &ConvKernel| if transposed { deconv2d(x, k) } else { conv2d(x, k) };
    let y = fwd(&x, &k)?;
    let r = random_map(rng, y.rows(), y.cols(), y.channels(), -1.0, 1.0);
    let g = if transposed {
        deconv2d_backward(&x, &k, &r)?
    } else {
        conv2d_backward(&x, &k, &r)?
    };
    let name = format!("{}2d stride {stride}", if transposed { "deconv" } else { "conv" });
    let loss_x = |d: &[f64]| weighted_terms(&fwd(&with_data(&x, d), &k).unwrap(), &r);
    out.push(format!("{name} input"), x.len(), check_terms(x.data(), g.input.data(), loss_x));
    let loss_w = |d: &[f64]| {
        let mut k2 = k.clone();
        k2.weights.copy_from_slice(d);
        weighted_terms(&fwd(&x, &k2).unwrap(), &r)
    };
    out.push(format!("{name} weights"), k.weights.len(), check_terms(&k.weights, &g.weights, loss_w));
    let loss_b = |d: &[f64]| {
        let mut k2 = k.clone();
        k2.bias.copy_from_slice(d);
        weighted_terms(&fwd(&x, &k2).unwrap(), &r)
    };
    out.push(format!("{name} bias"), k.bias.len(), check_terms(&k.bias, &g.bias, loss_b));
    Ok(())
}

/// Primitive operations: (de)convolutions, activations, elementwise algebra.
pub fn primitives(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Collector {
        suite: "tensor",
        checks: Vec::new(),
    };
    for transposed in [false, true] {
        for stride in [1, 2] {
            conv_case(&mut rng, &mut out, transposed, stride)?;
        }
    }

    let (h, c) = (4, 3);
    let x = random_map(&mut rng, h, h, c, -2.0, 2.0);
    let r = random_map(&mut rng, h, h, c, -1.0, 1.0);
    type Act = (&'static str, fn(&FeatureMap) -> FeatureMap);
    let acts: [Act; 2] = [("sigmoid", ops::sigmoid), ("tanh", ops::tanh)];
    for (name, f) in acts {
        let y = f(&x);
        let g = if name == "sigmoid" {
            ops::sigmoid_backward(&y, &r)?
        } else {
            ops::tanh_backward(&y, &r)?
        };
        let loss = |d: &[f64]| weighted_terms(&f(&with_data(&x, d)), &r);
        out.push(name, x.len(), check_terms(x.data(), g.data(), loss));
    }
    let xr = away_from_zero(&mut rng, h, h, c, 0.05);
    let g = ops::relu_backward(&xr, &r)?;
    let loss = |d: &[f64]| weighted_terms(&ops::relu(&with_data(&xr, d)), &r);
    out.push("relu", xr.len(), check_terms(xr.data(), g.data(), loss));

    let b = random_map(&mut rng, h, h, c, -2.0, 2.0);
    let (ga, gb) = ops::hadamard_backward(&x, &b, &r)?;
    let la = |d: &[f64]| weighted_terms(&ops::hadamard(&with_data(&x, d), &b).unwrap(), &r);
    let lb = |d: &[f64]| weighted_terms(&ops::hadamard(&x, &with_data(&b, d)).unwrap(), &r);
    out.push("hadamard lhs", x.len(), check_terms(x.data(), ga.data(), la));
    out.push("hadamard rhs", b.len(), check_terms(b.data(), gb.data(), lb));

    let (sa, sb) = ops::add_backward(&r);
    let la = |d: &[f64]| weighted_terms(&ops::add(&with_data(&x, d), &b).unwrap(), &r);
    let lb = |d: &[f64]| weighted_terms(&ops::add(&x, &with_data(&b, d)).unwrap(), &r);
    out.push("add lhs", x.len(), check_terms(x.data(), sa.data(), la));
    out.push("add rhs", b.len(), check_terms(b.data(), sb.data(), lb));

    let y = random_map(&mut rng, h, h, 2, -1.0, 1.0);
    let rc = random_map(&mut rng, h, h, c + 2, -1.0, 1.0);
    let parts = ops::concat_channels_backward(&rc, &[c, 2])?;
    let la = |d: &[f64]| weighted_terms(&ops::concat_channels(&[&with_data(&x, d), &y]).unwrap(), &rc);
    let lb = |d: &[f64]| weighted_terms(&ops::concat_channels(&[&x, &with_data(&y, d)]).unwrap(), &rc);
    out.push("concat first", x.len(), check_terms(x.data(), parts[0].data(), la));
    out.push("concat second", y.len(), check_terms(y.data(), parts[1].data(), lb));
    Ok(out.checks)
}

fn cell_case(
    rng: &mut ChaCha8Rng,
    out: &mut Collector,
    name: &str,
    predecessors: usize,
    (h, cin, hidden): (usize, usize, usize),
) -> Result<()> {
    let mut p = GatedCellParams::init(predecessors, cin, hidden, 1.0, rng)?;
    p.kernel.bias.iter_mut().for_each(|b| *b += rng.random_range(-0.5..0.5));
    let x = random_map(rng, h, h, cin, -1.0, 1.0);
    let prev: Vec<CellState> = (0..predecessors)
        .map(|_| CellState {
            cell: random_map(rng, h, h, hidden, -1.5, 1.5),
            hidden: random_map(rng, h, h, hidden, -0.9, 0.9),
        })
        .collect();
    let rc = random_map(rng, h, h, hidden, -1.0, 1.0);
    let rh = random_map(rng, h, h, hidden, -1.0, 1.0);

    let eval = |p: &GatedCellParams, x: &FeatureMap, prev: &[CellState]| -> Vec<f64> {
        let refs: Vec<&CellState> = prev.iter().collect();
        let (s, _) = p.forward(x, &refs).unwrap();
        let mut t = weighted_terms(&s.cell, &rc);
        t.extend(weighted_terms(&s.hidden, &rh));
        t
    };
    let refs: Vec<&CellState> = prev.iter().collect();
    let (_, cache) = p.forward(&x, &refs)?;
    let g = p.backward(&cache, &rc, &rh)?;

    let lx = |d: &[f64]| eval(&p, &with_data(&x, d), &prev);
    out.push(format!("{name} input"), x.len(), check_terms(x.data(), g.input.data(), lx));
    for k in 0..predecessors {
        let lc = |d: &[f64]| {
            let mut pv = prev.clone();
            pv[k].cell = with_data(&prev[k].cell, d);
            eval(&p, &x, &pv)
        };
        let lh = |d: &[f64]| {
            let mut pv = prev.clone();
            pv[k].hidden = with_data(&prev[k].hidden, d);
            eval(&p, &x, &pv)
        };
        let slot = if predecessors == 1 {
            "previous".to_string()
        } else {
            ["spatial", "temporal"][k].to_string()
        };
        out.push(
            format!("{name} {slot} cell"),
            hidden * h * h,
            check_terms(prev[k].cell.data(), g.prev[k].cell.data(), lc),
        );
        out.push(
            format!("{name} {slot} hidden"),
            hidden * h * h,
            check_terms(prev[k].hidden.data(), g.prev[k].hidden.data(), lh),
        );
    }
    let lw = |d: &[f64]| {
        let mut q = p.clone();
        q.kernel.weights.copy_from_slice(d);
        eval(&q, &x, &prev)
    };
    out.push(format!("{name} weights"), g.weights.len(), check_terms(&p.kernel.weights, &g.weights, lw));
    let lb = |d: &[f64]| {
        let mut q = p.clone();
        q.kernel.bias.copy_from_slice(d);
        eval(&q, &x, &prev)
    };
    out.push(format!("{name} bias"), g.bias.len(), check_terms(&p.kernel.bias, &g.bias, lb));
    Ok(())
}

/// ConvLSTM and ST-ConvLSTM cells on small random instances.
pub fn cells(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Collector {
        suite: "cells",
        checks: Vec::new(),
    };
    cell_case(&mut rng, &mut out, "convlstm", 1, (4, 3, 2))?;
    cell_case(&mut rng, &mut out, "st-convlstm", 2, (4, 2, 2))?;
    cell_case(&mut rng, &mut out, "st-convlstm 6x6x3", 2, (6, 3, 3))?;
    Ok(out.checks)
}

/// Small network configurations used by the network suite, with grid sizes.
pub fn network_cases() -> Vec<(String, NetworkConfig, usize, usize)> {
    let tiny = NetworkConfig::tiny();
    let mut wide = NetworkConfig::tiny();
    wide.hidden = 3;
    wide.factor_dim = 2;
    wide.encoder_channels = vec![2, 3, 4, 2];
    let mut seg = NetworkConfig::tiny();
    seg.mode = Mode::Segmentation;
    seg.input_channels = 1;
    seg.factor_dim = 0;
    seg.encoder_channels = vec![2, 3];
    seg.encoder_strides = vec![2, 2];
    seg.decoder_channels = vec![3, 1];
    seg.decoder_strides = vec![2, 2];
    vec![
        ("tiny S=2 T=2".into(), tiny, 2, 2),
        ("tiny hidden=3 m=2 S=3 T=2".into(), wide, 3, 2),
        ("tiny segmentation S=2 T=3".into(), seg, 2, 3),
    ]
}

/// Full network gradient of the grid loss with respect to every parameter.
pub fn network(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Collector {
        suite: "network",
        checks: Vec::new(),
    };
    for (name, cfg, s, t) in network_cases() {
        let mut params = NetworkParams::init(&cfg, &mut rng)?;
        for tensor in params.tensors_mut() {
            tensor.iter_mut().for_each(|v| *v += rng.random_range(-0.05..0.05));
        }
        let n = cfg.input_size;
        let frames: Vec<Vec<FeatureMap>> = (0..t)
            .map(|_| (0..s).map(|_| random_map(&mut rng, n, n, cfg.input_channels, 0.0, 1.0)).collect())
            .collect();
        let factors: Vec<f64> = (0..t).map(|_| rng.random_range(0.5..2.0)).collect();
        // Segmentation supervises the first and last columns only.
        let targets: GridTargets = (0..t)
            .map(|ti| {
                (0..s)
                    .map(|_| {
                        let labeled = cfg.mode == Mode::Prediction || ti == 0 || ti + 1 == t;
                        labeled.then(|| random_map(&mut rng, n, n, cfg.output_channels(), 0.0, 1.0))
                    })
                    .collect()
            })
            .collect();
        let fwd = grid_forward(&frames, &factors, &params, &cfg)?;
        let g = grid_backward(&fwd, &targets, &params)?;

        let mut flat: Vec<f64> = Vec::new();
        let mut analytic: Vec<f64> = Vec::new();
        for (p, a) in params.tensors().into_iter().zip(g.grads.tensors()) {
            flat.extend_from_slice(p);
            analytic.extend_from_slice(a);
        }
        let loss = |d: &[f64]| {
            let mut q = params.clone();
            let mut off = 0;
            for tensor in q.tensors_mut() {
                tensor.copy_from_slice(&d[off..off + tensor.len()]);
                off += tensor.len();
            }
            let f = grid_forward(&frames, &factors, &q, &cfg).unwrap();
            squared_error_terms(&f.outputs, &targets)
        };
        out.push(format!("{name} all parameters"), flat.len(), check_terms(&flat, &analytic, loss));
    }
    Ok(out.checks)
}

/// Per-element terms of the mean squared grid loss.
fn squared_error_terms(outputs: &[Vec<FeatureMap>], targets: &GridTargets) -> Vec<f64> {
    let mut terms = Vec::new();
    for (oc, tc) in outputs.iter().zip(targets) {
        for (o, t) in oc.iter().zip(tc) {
            if let Some(t) = t {
                terms.extend(o.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)));
            }
        }
    }
    let n = terms.len() as f64;
    terms.iter_mut().for_each(|v| *v /= n);
    terms
}

/// Runs all three suites.
pub fn run(seed: u64) -> Result<GradcheckReport> {
    let mut checks = primitives(seed)?;
    checks.extend(cells(seed.wrapping_add(1))?);
    checks.extend(network(seed.wrapping_add(2))?);
    let worst = checks
        .iter()
        .map(|c| c.worst_relative_error)
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        seed,
        step: STEP,
        tolerance: TOLERANCE,
        passed: worst < TOLERANCE && checks.iter().all(|c| c.worst_relative_error.is_finite()),
        worst_relative_error: worst,
        checks,
    })
}
