//! Acceptance criteria 1-8. Each test prints one verdict line straight to
//! stderr (bypassing the test harness capture) and then asserts it.

use std::io::Write;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stcl::cells::{convlstm_step, st_convlstm_step, CellState, StConvLstmParams, SPATIAL};
use stcl::datagen::echo::{generate_echo_set, read_echo, write_echo};
use stcl::datagen::io::assign_folds;
use stcl::datagen::{generate_cohort, hu_to_storage, DatasetRecord};
use stcl::gradcheck;
use stcl::metrics::{self, Channels};
use stcl::network::NetworkConfig;
use stcl::pipeline::dataset::{load_prediction_dataset, write_prediction_dataset};
use stcl::pipeline::export::write_raw;
use stcl::pipeline::prediction::{evaluate_patient, later_future_volumes, run_fold, FoldOutcome, PredictionData, SamplingConfig};
use stcl::pipeline::report::CohortReport;
use stcl::pipeline::segmentation::{evaluate_sequences, mean_dice, SegmentationData};
use stcl::tensor::{conv2d, ConvKernel};
use stcl::tensor::FeatureMap;
use stcl::training::checkpoint::Checkpoint;
use stcl::training::{train, TrainConfig};

const SEED: u64 = 7;

/// Heavy criteria run one at a time so their timings do not interfere.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, title: &str, pass: bool, detail: &str) {
    let line = format!("criterion {n} [{}] {title}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMap {
    let data = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureMap::new(h, w, c, data).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_1_gradient_fidelity() {
    let _g = serial();
    let start = Instant::now();
    let report = gradcheck::run(SEED).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let suites: Vec<&str> = report.checks.iter().map(|c| c.suite.as_str()).collect();
    let covers = ["tensor", "cells", "network"].iter().all(|s| suites.contains(s));
    let pass = report.worst_relative_error < 1e-5 && secs < 120.0 && covers && report.passed;
    verdict(
        1,
        "gradient fidelity",
        pass,
        &format!("worst relative error {:.2e} over {} checks in {secs:.1}s", report.worst_relative_error, report.checks.len()),
    );
}

#[test]
fn criterion_2_cell_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let (c, hidden) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let mut p = StConvLstmParams::init(c, hidden, rng.random_range(-1.0..2.0), &mut rng).unwrap();
        for b in p.0.kernel.bias.iter_mut() {
            *b += rng.random_range(-0.5..0.5);
        }
        p.0.zero_source(1 + SPATIAL);
        let x = random_map(&mut rng, h, w, c);
        let temporal = CellState {
            cell: random_map(&mut rng, h, w, hidden),
            hidden: random_map(&mut rng, h, w, hidden),
        };
        let zero = CellState::zero(h, w, hidden);
        let st = st_convlstm_step(&x, &zero, &temporal, &p).unwrap();
        let plain = convlstm_step(&x, &temporal, &p.temporal_only()).unwrap();
        worst = worst
            .max(max_abs_diff(st.cell.data(), plain.cell.data()))
            .max(max_abs_diff(st.hidden.data(), plain.hidden.data()));
    }
    verdict(2, "cell reduction oracle", worst <= 1e-12, &format!("100 instances, max |diff| {worst:.2e}"));
}

fn naive_conv(input: &FeatureMap, k: &ConvKernel) -> Vec<f64> {
    let (h, w, ci) = input.shape();
    let s = k.stride;
    let (oh, ow) = (h.div_ceil(s), w.div_ceil(s));
    let (py, px) = ((k.kh / 2) as isize, (k.kw / 2) as isize);
    let mut out = vec![0.0; oh * ow * k.out_channels];
    for oy in 0..oh {
        for ox in 0..ow {
            for co in 0..k.out_channels {
                let mut acc = k.bias[co];
                for ky in 0..k.kh {
                    for kx in 0..k.kw {
                        let iy = (oy * s + ky) as isize - py;
                        let ix = (ox * s + kx) as isize - px;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for c in 0..ci {
                            let wv = k.weights[((ky * k.kw + kx) * ci + c) * k.out_channels + co];
                            acc += wv * input.get(iy as usize, ix as usize, c);
                        }
                    }
                }
                out[(oy * ow + ox) * k.out_channels + co] = acc;
            }
        }
    }
    out
}

#[test]
fn criterion_3_convolution_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 1);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let (ci, co) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let ksize = [1, 3, 5][rng.random_range(0..3)];
        let stride = rng.random_range(1..=2);
        let mut k = ConvKernel::uniform(ksize, ksize, ci, co, stride, &mut rng).unwrap();
        for b in k.bias.iter_mut() {
            *b = rng.random_range(-1.0..1.0);
        }
        let x = random_map(&mut rng, h, w, ci);
        let fast = conv2d(&x, &k).unwrap();
        worst = worst.max(max_abs_diff(fast.data(), &naive_conv(&x, &k)));
    }
    verdict(3, "convolution oracle", worst <= 1e-12, &format!("100 shapes up to 16x16x4, max |diff| {worst:.2e}"));
}

/// Independent scalar recomputation of the four volume metrics.
fn scalar_metrics(pi: &[f64], gi: &[f64], pc: &[f64], gc: &[f64], pm: &[bool], gm: &[bool]) -> [f64; 4] {
    let mut tpv = 0.0;
    let mut vp = 0.0;
    let mut vg = 0.0;
    let mut sq = 0.0;
    let mut nq = 0.0;
    let mut hp = 0.0;
    let mut hg = 0.0;
    for i in 0..pm.len() {
        if pm[i] {
            vp += 1.0;
        }
        if gm[i] {
            vg += 1.0;
        }
        if pm[i] && gm[i] {
            tpv += 1.0;
            if gi[i] != 0.0 {
                sq += ((pi[i] - gi[i]) / gi[i]).powi(2);
                nq += 1.0;
            }
            hp += pc[i] / 255.0 * 300.0 - 100.0;
            hg += gc[i] / 255.0 * 300.0 - 100.0;
        }
    }
    let dice = 2.0 * tpv / (vp + vg);
    let rvd = (vp - vg as f64).abs() / vg;
    let rmse = (sq / nq).sqrt();
    let dhu = ((hp - hg) / tpv).abs() / (hg / tpv).abs();
    [dice, rvd, rmse, dhu]
}

#[test]
fn criterion_4_metric_algebra() {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    let m = |n: usize, f: &dyn Fn(usize) -> bool| (0..n).map(f).collect::<Vec<bool>>();
    let a = m(10, &|i| i < 4);
    check("dice identical", metrics::dice(&a, &a).unwrap() == 1.0);
    check("dice disjoint", metrics::dice(&a, &m(10, &|i| i >= 4)).unwrap() == 0.0);
    check(
        "dice 200/200/150",
        metrics::dice(&m(400, &|i| i < 200), &m(400, &|i| (50..250).contains(&i))).unwrap() == 0.75,
    );
    check("dice empty is an error", metrics::dice(&[false; 4], &[false; 4]).is_err());
    let g = m(200, &|i| i < 100);
    check("rvd equal", metrics::rvd(&g, &g).unwrap() == 0.0);
    check("rvd 120/100", metrics::rvd(&m(200, &|i| i < 120), &g).unwrap() == 0.2);
    check("rvd 80/100", metrics::rvd(&m(200, &|i| i < 80), &g).unwrap() == 0.2);
    check("rvd empty gt is an error", metrics::rvd(&g, &[false; 200]).is_err());
    let t = [true; 4];
    check("rmse identical", metrics::icvf_rmse(&[50.0; 4], &[50.0; 4], &t, &t).unwrap().value == 0.0);
    check(
        "rmse 55 vs 50",
        (metrics::icvf_rmse(&[55.0; 4], &[50.0; 4], &t, &t).unwrap().value - 0.1).abs() < 1e-15,
    );
    check(
        "rmse two voxels",
        (metrics::icvf_rmse(&[10.0, 12.0], &[10.0, 10.0], &[true; 2], &[true; 2]).unwrap().value - 0.02f64.sqrt()).abs()
            < 1e-15,
    );
    check("rmse empty tpv is an error", metrics::icvf_rmse(&[1.0], &[1.0], &[true], &[false]).is_err());
    let s100 = hu_to_storage(100.0);
    check("diff.HU identical", metrics::diff_hu(&[s100; 3], &[s100; 3], &[true; 3], &[true; 3]).unwrap() == 0.0);
    check(
        "diff.HU 110 vs 100",
        (metrics::diff_hu(&[hu_to_storage(110.0); 3], &[s100; 3], &[true; 3], &[true; 3]).unwrap() - 0.1).abs() < 1e-12,
    );
    check("window endpoints", hu_to_storage(200.0) == 255.0 && hu_to_storage(-100.0) == 0.0);
    let truth = [0.2, -0.1, 0.3, -0.4];
    let p = metrics::progression_scores(&truth, &truth).unwrap();
    check("progression perfect", p.sensitivity == Some(1.0) && p.specificity == Some(1.0));
    let mut cohort = vec![0.1; 21];
    cohort.extend(vec![-0.1; 12]);
    let p = metrics::progression_scores(&[1.0; 33], &cohort).unwrap();
    check("progression degenerate", p.sensitivity == Some(1.0) && p.specificity == Some(0.0));
    check("pearson +1", (metrics::pearson_r(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap() - 1.0).abs() < 1e-15);
    check("pearson -1", (metrics::pearson_r(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
    check("pearson 0.5", (metrics::pearson_r(&[1.0, 2.0, 3.0], &[2.0, 1.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = 12 * 12 * 6;
        let gm: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let pm: Vec<bool> = gm.iter().map(|&g| if rng.random_bool(0.2) { !g } else { g }).collect();
        let gi: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.05) { 0.0 } else { rng.random_range(1.0..255.0) }).collect();
        let pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..255.0)).collect();
        let gc: Vec<f64> = (0..n).map(|_| rng.random_range(120.0..255.0)).collect();
        let pc: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..255.0)).collect();
        let r = metrics::evaluate(
            Channels { icvf: &pi, ct: &pc, mask: &pm },
            Channels { icvf: &gi, ct: &gc, mask: &gm },
        )
        .unwrap();
        let s = scalar_metrics(&pi, &gi, &pc, &gc, &pm, &gm);
        let got = [r.dice, r.rvd, r.icvf_rmse.unwrap(), r.diff_hu.unwrap()];
        for (a, b) in got.iter().zip(s) {
            worst = worst.max((a - b).abs());
        }
    }
    check("random volumes", worst <= 1e-12);
    verdict(
        4,
        "metric algebra",
        failures.is_empty(),
        &format!("examples failing: {failures:?}; 20 random volumes max |diff| {worst:.2e}"),
    );
}

struct CrossValidation {
    records: Vec<DatasetRecord>,
    folds: Vec<usize>,
    outcomes: Vec<FoldOutcome>,
    seconds: f64,
}

/// The 3-fold synthetic prediction run, shared by criteria 5 and 6.
fn cross_validation() -> &'static CrossValidation {
    static RUN: OnceLock<CrossValidation> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let records = generate_cohort(SEED, 33);
        let ids: Vec<u32> = records.iter().map(|r| r.patient_id).collect();
        let folds: Vec<usize> = assign_folds(&ids, SEED, 3).into_iter().map(|(_, f)| f).collect();
        let cfg = NetworkConfig::prediction();
        let tc = TrainConfig::prediction(SEED);
        let sampling = SamplingConfig::default();
        let outcomes = (0..3)
            .map(|f| run_fold(&records, &folds, f, &cfg, &tc, &sampling, &mut |_| Ok(())).unwrap())
            .collect();
        CrossValidation {
            records,
            folds,
            outcomes,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_5_prediction_end_to_end() {
    let _g = serial();
    let cv = cross_validation();
    let results: Vec<_> = cv.outcomes.iter().flat_map(|o| o.results.iter().cloned()).collect();
    let n = results.len() as f64;
    let mean = |f: &dyn Fn(&stcl::pipeline::prediction::PatientResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let dice = mean(&|r| r.model.dice);
    let rvd = mean(&|r| r.model.rvd);
    let base = mean(&|r| r.baseline.dice);
    let first_last: Vec<String> = cv
        .outcomes
        .iter()
        .map(|o| format!("{:.4}->{:.4}", o.history[0], o.history[o.history.len() - 1]))
        .collect();
    let loss_drops = cv.outcomes.iter().all(|o| o.history[o.history.len() - 1] < o.history[0]);
    let pass = results.len() == 33 && dice >= 0.70 && rvd <= 0.30 && dice > base && cv.seconds < 45.0 * 60.0 && loss_drops;
    verdict(
        5,
        "synthetic prediction end-to-end",
        pass,
        &format!(
            "{} patients, mean Dice {dice:.3}, mean RVD {rvd:.3}, baseline Dice {base:.3}, epoch loss {first_last:?}, {:.1} min",
            results.len(),
            cv.seconds / 60.0
        ),
    );
}

#[test]
fn criterion_6_interval_monotonicity() {
    let _g = serial();
    let cv = cross_validation();
    let cfg = NetworkConfig::prediction();
    let days = [200.0, 400.0, 800.0];
    let mut growing = 0usize;
    let mut monotone = 0usize;
    for (rec, &fold) in cv.records.iter().zip(&cv.folds) {
        if rec.growth_rate(1) <= 0.0 {
            continue;
        }
        growing += 1;
        let v = later_future_volumes(rec, &days, &cv.outcomes[fold].params, &cfg, 5, SamplingConfig::default().test_margin).unwrap();
        if v.windows(2).all(|w| w[0] <= w[1]) {
            monotone += 1;
        }
    }
    let frac = monotone as f64 / growing.max(1) as f64;
    verdict(
        6,
        "temporal-factor monotonicity",
        growing > 0 && frac >= 0.8,
        &format!("{monotone}/{growing} growing patients non-decreasing over 200/400/800 days ({:.1}%)", 100.0 * frac),
    );
}

#[test]
fn criterion_7_segmentation_end_to_end() {
    let _g = serial();
    let seqs = generate_echo_set(SEED, 15);
    let (train_set, test_set) = seqs.split_at(12);
    let cfg = NetworkConfig::segmentation();
    let tc = TrainConfig::segmentation(SEED);
    let data = SegmentationData { sequences: train_set.to_vec() };
    let outcome = train(&data, &cfg, &tc, &mut |_| Ok(())).unwrap();
    let results = evaluate_sequences(test_set, &outcome.params, &cfg).unwrap();
    let dice = mean_dice(&results).unwrap_or(0.0);
    let slowest = results.iter().map(|r| r.seconds).fold(0.0, f64::max);
    verdict(
        7,
        "synthetic segmentation end-to-end",
        dice >= 0.85 && slowest < 5.0,
        &format!(
            "{} test sequences, mean Dice at labeled time points {dice:.3}, slowest inference {slowest:.2}s, {} epochs",
            results.len(),
            tc.epochs
        ),
    );
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn criterion_8_determinism_and_format() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let mut problems = Vec::new();

    // Datasets: identical bytes on regeneration and bit-exact reload.
    let (da, db) = (tmp.path().join("data_a"), tmp.path().join("data_b"));
    write_prediction_dataset(&da, SEED, 3, 3).unwrap();
    write_prediction_dataset(&db, SEED, 3, 3).unwrap();
    if dir_bytes(&da) != dir_bytes(&db) {
        problems.push("dataset bytes differ");
    }
    let (_, loaded) = load_prediction_dataset(&da, |_| true).unwrap();
    if loaded != generate_cohort(SEED, 3) {
        problems.push("dataset reload is not bit-exact");
    }
    let echo = generate_echo_set(SEED, 1);
    std::fs::create_dir_all(tmp.path().join("echo")).unwrap();
    write_echo(&tmp.path().join("echo"), &echo[0]).unwrap();
    if read_echo(&tmp.path().join("echo"), 1, echo[0].volumes.len()).unwrap() != echo[0] {
        problems.push("segmentation reload is not bit-exact");
    }

    // Training: identical checkpoints from identical seeds.
    let cfg = NetworkConfig::prediction();
    let tc = TrainConfig {
        epochs: 1,
        batch_size: 4,
        ..TrainConfig::prediction(SEED)
    };
    let sampling = SamplingConfig {
        items_per_patient: Some(4),
        ..SamplingConfig::default()
    };
    let run = |dir: &std::path::Path| {
        let data = PredictionData::build(loaded[..2].to_vec(), tc.slices, &sampling, SEED).unwrap();
        let o = train(&data, &cfg, &tc, &mut |_| Ok(())).unwrap();
        let ck = Checkpoint {
            network: cfg.clone(),
            train: Some(tc.clone()),
            epoch: o.history.len(),
            history: o.history,
            params: o.params,
            optimizer: o.optimizer,
        };
        ck.save(dir).unwrap();
        ck
    };
    let (ca, cb) = (tmp.path().join("ck_a"), tmp.path().join("ck_b"));
    let ck = run(&ca);
    run(&cb);
    if dir_bytes(&ca) != dir_bytes(&cb) {
        problems.push("checkpoint bytes differ");
    }
    let reloaded = Checkpoint::load(&ca).unwrap();
    if reloaded != ck {
        problems.push("checkpoint reload is not bit-exact");
    }
    let cc = tmp.path().join("ck_c");
    reloaded.save(&cc).unwrap();
    if dir_bytes(&ca) != dir_bytes(&cc) {
        problems.push("checkpoint resave differs");
    }

    // Predictions and reports.
    let predict = |dir: &std::path::Path| {
        std::fs::create_dir_all(dir).unwrap();
        let mut results = Vec::new();
        for rec in &loaded {
            let (r, vol) = evaluate_patient(rec, 0, &ck.params, &cfg, 5, 2).unwrap();
            write_raw(&dir.join(format!("patient{}.stcl", rec.patient_id)), Default::default(), &vol).unwrap();
            results.push(r);
        }
        let report = CohortReport::new(SEED, serde_json::json!({"seed": SEED}), results).unwrap();
        report.write_json(&dir.join("report.json")).unwrap();
        report.write_csv(&dir.join("report.csv")).unwrap();
    };
    let (pa, pb) = (tmp.path().join("pred_a"), tmp.path().join("pred_b"));
    predict(&pa);
    predict(&pb);
    if dir_bytes(&pa) != dir_bytes(&pb) {
        problems.push("prediction or report bytes differ");
    }

    verdict(
        8,
        "determinism and format",
        problems.is_empty(),
        &if problems.is_empty() {
            "datasets, checkpoints, predictions and reports byte-identical; round-trips bit-exact".to_string()
        } else {
            format!("{problems:?}")
        },
    );
}
