//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits nonzero if any failed.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use qrnn_core::data::{make_synthetic_digits, FeatureDataset, FeatureSample, WhiteningStats};
use qrnn_core::lowbit::{
    matvec_shift, matvec_ternary, pack, Encoding, StoredModel, UnpackedNetwork,
};
use qrnn_core::metrics::{bpc, fmt_f64};
use qrnn_core::models::{init_gru, init_vanilla};
use qrnn_core::quantize::{
    exp_quantize_deterministic, exp_quantize_stochastic, quantize_tensor, ternarize_deterministic,
    ternarize_stochastic, ClipMode, QmfFormat,
};
use qrnn_core::train::{
    bptt_step, clip_gradients, train_loop, AdamState, EarlyStopping, Network, TrainConfig, INIT_STREAM,
    SHUFFLE_STREAM,
};
use qrnn_core::{
    AdamConfig, CharCorpus, Direction, EpochRecord, GruClassifier, LabeledSequence, QuantMethod, RandomSource,
    RunLog, RunMetadata, Split, Tensor, VanillaRnnLm,
};

// Pinned sizes, budgets and tolerances.
const C1_INPUTS: usize = 100_000;
const C1_LIMIT: Duration = Duration::from_secs(1);
const C2_EPS: f64 = 1e-9;
const C2_INPUTS: usize = 10_000;
const C3_WEIGHTS: usize = 50;
const C3_DRAWS: usize = 100_000;
const C3_SIGMAS: f64 = 5.0;
const C3_LIMIT: Duration = Duration::from_secs(10);
const C5_STEP: f64 = 1e-5;
const C5_REL_TOL: f64 = 1e-4;
/// Denominator floor for relative errors of near-zero gradients.
const C5_ABS_FLOOR: f64 = 1e-6;
const C5_LIMIT: Duration = Duration::from_secs(30);
const C7_INSTANCES: usize = 10_000;
const C7_EXP_RANGE: i32 = 10;
const C9_EPOCHS: usize = 200;
const C9_BASELINE_BPC: f64 = 0.5;
const C9_EXP_BPC: f64 = 1.0;
const C9_LIMIT: Duration = Duration::from_secs(300);
const C10_SEEDS: [u64; 3] = [1, 2, 3];
const C10_BASELINE_ACC: f64 = 0.90;
const C10_EXP_MARGIN: f64 = 0.02;
const C10_TERNARY_MARGIN: f64 = 0.05;
const C10_LIMIT: Duration = Duration::from_secs(900);
const C11_SEQUENCES: usize = 2_000;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    check(took < limit, || format!("took {took:?}, limit {limit:?}"))?;
    Ok(took)
}

// 1. Every output lies in the method's declared value set.
fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = RandomSource::new(101);
    let inputs: Vec<f64> = (0..C1_INPUTS).map(|_| rng.uniform_range(-4.0, 4.0)).collect();
    let q11 = QmfFormat::new(1, 1).unwrap();
    let q22 = QmfFormat::new(2, 2).unwrap();
    let ternary = |v: f64| v == -1.0 || v == 0.0 || v == 1.0;
    let on_grid = |v: f64, step: f64, bound: f64| v.abs() <= bound && (v / step).fract() == 0.0;
    let power_of_two = |v: f64| {
        v == 0.0 || (-63..=63).any(|k| v.abs() == 2f64.powi(k))
    };
    let cases: Vec<(QuantMethod, Box<dyn Fn(f64) -> bool>)> = vec![
        (QuantMethod::TernaryStochastic, Box::new(ternary)),
        (QuantMethod::TernaryDeterministic, Box::new(ternary)),
        (
            QuantMethod::Pow2Ternary { format: q11, clip: ClipMode::Literal },
            Box::new(move |v| on_grid(v, 0.5, 2.0)),
        ),
        (
            QuantMethod::Pow2Ternary { format: q11, clip: ClipMode::Strict },
            Box::new(move |v| on_grid(v, 0.5, 0.5)),
        ),
        (
            QuantMethod::Pow2Ternary { format: q22, clip: ClipMode::Literal },
            Box::new(move |v| on_grid(v, 0.25, 4.0)),
        ),
        (QuantMethod::ExpStochastic, Box::new(power_of_two)),
        (QuantMethod::ExpDeterministic, Box::new(power_of_two)),
    ];
    let t = Tensor::from_vec(1, C1_INPUTS, inputs).unwrap();
    for (method, member) in &cases {
        let q = quantize_tensor(&t, *method, &mut rng).map_err(|e| e.to_string())?;
        if let Some((i, v)) = q.data().iter().enumerate().find(|(_, v)| !member(**v)) {
            return Err(format!("{method}: input {} gave {v}", t.data()[i]));
        }
    }
    let took = within(C1_LIMIT, started)?;
    Ok(format!("{} methods x {C1_INPUTS} inputs in {took:.2?}", cases.len()))
}

// 2. Deterministic thresholds and nearest power of two.
fn criterion_2() -> Outcome {
    let grid = [
        (-0.5 - C2_EPS, -1.0),
        (-0.5, -1.0),
        (0.0, 0.0),
        (0.5, 0.0),
        (0.5 + C2_EPS, 1.0),
    ];
    for (w, want) in grid {
        let got = ternarize_deterministic(w);
        check(got == want, || format!("ternarize_deterministic({w}) = {got}, want {want}"))?;
    }
    // brute force: scan every exponent, keep the closest, lower one on ties
    let nearest = |w: f64| -> f64 {
        let a = w.abs();
        let mut best = 2f64.powi(-63);
        for k in -62..=63 {
            let c = 2f64.powi(k);
            if (a - c).abs() < (a - best).abs() {
                best = c;
            }
        }
        best.copysign(w)
    };
    let mut rng = RandomSource::new(202);
    for i in 0..C2_INPUTS {
        // half the inputs sit exactly on a midpoint 1.5 * 2^k
        let w = if i % 2 == 0 {
            rng.uniform_range(-4.0, 4.0)
        } else {
            let k = rng.below(40) as i32 - 30;
            let s = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
            s * 1.5 * 2f64.powi(k)
        };
        let got = exp_quantize_deterministic(w);
        let want = nearest(w);
        check(got == want, || format!("exp_quantize_deterministic({w}) = {got}, want {want}"))?;
    }
    Ok(format!("5 threshold points, {C2_INPUTS} nearest-power inputs"))
}

// 3. Monte Carlo means of the stochastic quantizers.
fn criterion_3() -> Outcome {
    let started = Instant::now();
    let mut rng = RandomSource::new(303);
    let mut worst: f64 = 0.0;
    for _ in 0..C3_WEIGHTS {
        let w = rng.uniform_range(-1.0, 1.0);

        let p = (2.0 * w.abs()).min(1.0);
        let expect = w.signum() * p;
        let sigma = (p * (1.0 - p)).sqrt();
        let mean = (0..C3_DRAWS).map(|_| ternarize_stochastic(w, &mut rng)).sum::<f64>() / C3_DRAWS as f64;
        let bound = C3_SIGMAS * sigma / (C3_DRAWS as f64).sqrt();
        check((mean - expect).abs() <= bound, || format!("ternary w={w}: mean {mean}, expected {expect}, bound {bound}"))?;
        if sigma > 0.0 {
            worst = worst.max((mean - expect).abs() / (sigma / (C3_DRAWS as f64).sqrt()));
        }

        let w = rng.uniform_range(-4.0, 4.0);
        let a = w.abs();
        let lo = 2f64.powi(a.log2().floor() as i32);
        let lo = if lo > a { lo / 2.0 } else if 2.0 * lo <= a { lo * 2.0 } else { lo };
        let hi = 2.0 * lo;
        let q = (a - lo) / lo;
        let sigma = (q * (1.0 - q)).sqrt() * (hi - lo);
        let mean = (0..C3_DRAWS).map(|_| exp_quantize_stochastic(w, &mut rng)).sum::<f64>() / C3_DRAWS as f64;
        let bound = C3_SIGMAS * sigma / (C3_DRAWS as f64).sqrt();
        check((mean - w).abs() <= bound, || format!("exp w={w}: mean {mean}, bound {bound}"))?;
        if sigma > 0.0 {
            worst = worst.max((mean - w).abs() / (sigma / (C3_DRAWS as f64).sqrt()));
        }
    }
    let took = within(C3_LIMIT, started)?;
    Ok(format!("2 x {C3_WEIGHTS} weights, worst deviation {worst:.2} sigma, {took:.2?}"))
}

// 4. Pow2-ternarization value sets for Q1.1.
fn criterion_4() -> Outcome {
    let fmt = QmfFormat::new(1, 1).unwrap();
    let mut rng = RandomSource::new(404);
    let inputs: Vec<f64> = (0..C1_INPUTS).map(|_| rng.uniform_range(-4.0, 4.0)).collect();
    let t = Tensor::from_vec(1, inputs.len(), inputs).unwrap();
    let set = |clip| -> Result<BTreeSet<i64>, String> {
        let q = quantize_tensor(&t, QuantMethod::Pow2Ternary { format: fmt, clip }, &mut rng.clone())
            .map_err(|e| e.to_string())?;
        Ok(q.data().iter().map(|v| (v * 4.0) as i64).collect())
    };
    let strict = set(ClipMode::Strict)?;
    check(strict == BTreeSet::from([-2, 0, 2]), || format!("strict set (x4) {strict:?}"))?;
    let literal = set(ClipMode::Literal)?;
    check(
        literal.iter().all(|&v| v % 2 == 0 && (-8..=8).contains(&v)),
        || format!("literal set (x4) {literal:?}"),
    )?;
    Ok(format!("strict {{-0.5, 0, 0.5}}, literal {} points on the 0.5 grid", literal.len()))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(C5_ABS_FLOOR)
}

/// Compares analytic gradients with central differences of `loss`.
fn finite_difference<N: Network>(
    model: &N,
    grads: &[Tensor],
    loss: impl Fn(&N) -> f64,
) -> Result<(usize, f64), String> {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let names = model.param_names();
    for (k, g) in grads.iter().enumerate() {
        for idx in 0..g.len() {
            let eval = |delta: f64| {
                let mut m = model.clone();
                m.params_mut()[k].data_mut()[idx] += delta;
                loss(&m)
            };
            let fd = (eval(C5_STEP) - eval(-C5_STEP)) / (2.0 * C5_STEP);
            let e = rel_err(fd, g.data()[idx]);
            check(e <= C5_REL_TOL, || {
                format!("{}[{idx}]: analytic {} vs numeric {fd} (rel {e:.2e})", names[k], g.data()[idx])
            })?;
            worst = worst.max(e);
            count += 1;
        }
    }
    Ok((count, worst))
}

// 5. BPTT against central finite differences.
fn criterion_5() -> Outcome {
    let started = Instant::now();
    let mut rng = RandomSource::new(505);
    let mut lm = init_vanilla(&mut rng, 5, 4, 0.5).unwrap();
    for (_, p) in lm.named_mut() {
        *p = Tensor::uniform_fill(&mut rng, -0.6, 0.6, p.rows(), p.cols()).unwrap();
    }
    let chunk = vec![1usize, 4, 2];
    let (_, g) = bptt_step(&lm, &[&chunk]).map_err(|e| e.to_string())?;
    let (n_lm, w_lm) = finite_difference(&lm, &g, |m: &VanillaRnnLm| {
        let (nats, count) = m.chunk_nll(&chunk).unwrap();
        nats / count as f64
    })?;

    let mut gru = init_gru(&mut rng, 3, 4, 3, 2).unwrap();
    for (_, p) in gru.named_mut() {
        *p = Tensor::uniform_fill(&mut rng, -0.8, 0.8, p.rows(), p.cols()).unwrap();
    }
    let sample = LabeledSequence {
        frames: Tensor::uniform_fill(&mut rng, -1.0, 1.0, 2, 3).unwrap(),
        label: 1,
    };
    let (_, g) = bptt_step(&gru, &[&sample]).map_err(|e| e.to_string())?;
    let (n_gru, w_gru) = finite_difference(&gru, &g, |m: &GruClassifier| {
        let (_, logp) = m.forward(&sample.frames, None).unwrap();
        -logp[sample.label]
    })?;
    let took = within(C5_LIMIT, started)?;
    Ok(format!(
        "{n_lm} LM + {n_gru} GRU entries, worst rel err {:.1e}, {took:.2?}",
        w_lm.max(w_gru)
    ))
}

// 6. method=none equals a hand-written full-precision loop.
fn criterion_6() -> Outcome {
    let text: Vec<u8> = b"abcabdabeabf ".iter().cycle().take(400).copied().collect();
    let corpus = CharCorpus::from_bytes(&text, (0.8, 0.1, 0.1), 10).unwrap();
    let train = corpus.train_sequences();
    let valid = corpus.eval_chunks(Split::Valid);
    let seed = 66;
    let model = init_vanilla(&mut RandomSource::derive(seed, INIT_STREAM), corpus.alphabet_size(), 8, 0.2).unwrap();
    let config = TrainConfig {
        max_epochs: 5,
        patience: 5,
        batch_size: 4,
        seed,
        grad_clip_norm: Some(1.0),
        method: QuantMethod::None,
        record_wall_time: false,
        ..TrainConfig::default()
    };
    let out = train_loop(&model, &train, &valid, &config, RunMetadata::default()).map_err(|e| e.to_string())?;

    let mut plain = model.clone();
    let mut adam = AdamState::new(config.adam, plain.params());
    let mut shuffle = RandomSource::derive(seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::new();
    for _ in 0..config.max_epochs {
        shuffle.shuffle(&mut order);
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Vec<usize>> = idx.iter().map(|&i| &train[i]).collect();
            let (_, mut grads) = bptt_step(&plain, &batch).map_err(|e| e.to_string())?;
            clip_gradients(&mut grads, 1.0).map_err(|e| e.to_string())?;
            adam.update(plain.params_mut().into_iter(), &grads).map_err(|e| e.to_string())?;
        }
        metrics.push(bpc(&plain, &valid).map_err(|e| e.to_string())?);
    }
    let bits = |m: &VanillaRnnLm| -> Vec<u64> {
        m.params().iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
    };
    check(bits(&out.last) == bits(&plain), || "final parameters differ".into())?;
    let logged: Vec<u64> = out.log.records.iter().map(|r| r.val_full.to_bits()).collect();
    let plain_bits: Vec<u64> = metrics.iter().map(|v| v.to_bits()).collect();
    check(logged == plain_bits, || format!("validation traces differ: {logged:?} vs {plain_bits:?}"))?;
    check(
        out.log.records.iter().all(|r| r.val_full.to_bits() == r.val_quant.to_bits()),
        || "quantized metric differs from full metric".into(),
    )?;
    Ok(format!("{} epochs, {} parameters bitwise equal", config.max_epochs, bits(&plain).len()))
}

// 7. Packed kernels against the float matvec.
fn criterion_7() -> Outcome {
    let mut rng = RandomSource::new(707);
    for i in 0..C7_INSTANCES {
        let rows = 1 + rng.below(8);
        let cols = 1 + rng.below(40);
        let x: Vec<f64> = (0..cols)
            .map(|_| if rng.uniform() < 0.05 { 0.0 } else { rng.uniform_range(-1.0, 1.0) })
            .collect();
        let (w, encoding) = if i % 2 == 0 {
            let t = Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.below(3) as f64 - 1.0).collect()).unwrap();
            (t, Encoding::Tern2)
        } else {
            let data = (0..rows * cols)
                .map(|_| {
                    if rng.uniform() < 0.1 {
                        0.0
                    } else {
                        let k = rng.below(2 * C7_EXP_RANGE as usize + 1) as i32 - C7_EXP_RANGE;
                        let s = if rng.uniform() < 0.5 { -1.0 } else { 1.0 };
                        s * 2f64.powi(k)
                    }
                })
                .collect();
            (Tensor::from_vec(rows, cols, data).unwrap(), Encoding::Exp8)
        };
        let packed = pack(&w, encoding).map_err(|e| e.to_string())?;
        let got = match encoding {
            Encoding::Tern2 => matvec_ternary(&packed, &x),
            _ => matvec_shift(&packed, &x),
        }
        .map_err(|e| e.to_string())?;
        let want = w.matvec(&x).map_err(|e| e.to_string())?;
        let same = got.iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits());
        check(same, || format!("instance {i} ({}): {got:?} vs {want:?}", encoding.name()))?;
    }
    Ok(format!("{C7_INSTANCES} instances, TERN2 and EXP8, bitwise equal"))
}

// 8. QFD, QRNN and CSV round trips.
fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = RandomSource::new(808);

    let samples = (0..7)
        .map(|i| FeatureSample {
            features: Tensor::from_vec(3, 5, (0..15).map(|_| (rng.normal() * 3.0) as f32 as f64).collect()).unwrap(),
            label: i % 3,
        })
        .collect();
    let ds = FeatureDataset::new(samples, 3).map_err(|e| e.to_string())?;
    let path = dir.path().join("d.qfd");
    qrnn_core::data::write_qfd(&ds, &path).map_err(|e| e.to_string())?;
    let back = qrnn_core::data::read_qfd(&path).map_err(|e| e.to_string())?;
    let bits = |d: &FeatureDataset| -> Vec<u64> {
        d.samples.iter().flat_map(|s| s.features.data().iter().map(|v| v.to_bits())).collect()
    };
    check(bits(&back) == bits(&ds) && back == ds, || "QFD round trip changed data".into())?;
    check(std::fs::read(&path).unwrap() == back.to_qfd_bytes().unwrap(), || "QFD bytes differ".into())?;

    let gru = init_gru(&mut rng, 4, 5, 3, 2).unwrap();
    let quantized = gru
        .try_map(|name, w| match name {
            "w_z" | "u_z" | "b_z" => quantize_tensor(w, QuantMethod::ExpDeterministic, &mut rng),
            "w_r" | "u_r" | "b_r" => quantize_tensor(w, QuantMethod::TernaryStochastic, &mut rng),
            _ => Ok(w.clone()),
        })
        .unwrap();
    let encoding = |name: &str| match name {
        "w_z" | "u_z" | "b_z" => Encoding::Exp8,
        "w_r" | "u_r" | "b_r" => Encoding::Tern2,
        _ => Encoding::F64,
    };
    let whitening = Some(WhiteningStats { mean: vec![0.25, -1.5, 3.0, 1e-3], std: vec![1.0, 2.0, 1e-8, 0.3] });
    let stored = StoredModel::pack(&UnpackedNetwork::SeqClass(quantized.clone()), encoding)
        .map_err(|e| e.to_string())?
        .with_whitening(whitening);
    let mpath = dir.path().join("m.qrnn");
    qrnn_core::lowbit::export_model(&stored, &mpath).map_err(|e| e.to_string())?;
    let imported = qrnn_core::lowbit::import_model(&mpath).map_err(|e| e.to_string())?;
    check(imported == stored, || "QRNN import differs".into())?;
    check(
        imported.to_bytes().unwrap() == std::fs::read(&mpath).unwrap(),
        || "QRNN re-export bytes differ".into(),
    )?;
    check(
        imported.unpacked().unwrap() == UnpackedNetwork::SeqClass(quantized),
        || "unpacked tensors differ".into(),
    )?;

    let mut log = RunLog::new(RunMetadata::default(), Direction::Minimize);
    let specials = [f64::MIN_POSITIVE, 5e-324, f64::MAX, -0.0, 0.1, 1.0 / 3.0, std::f64::consts::PI];
    for e in 1..=40 {
        let v = |rng: &mut RandomSource| {
            if e <= specials.len() {
                specials[e - 1]
            } else {
                rng.normal() * 10f64.powi(rng.below(40) as i32 - 20)
            }
        };
        log.push(EpochRecord {
            epoch: e,
            train_loss: v(&mut rng),
            val_full: v(&mut rng),
            val_quant: v(&mut rng),
            seconds: v(&mut rng),
        })
        .unwrap();
    }
    let mut buf = Vec::new();
    log.write_csv_to(&mut buf).map_err(|e| e.to_string())?;
    let back = RunLog::read_csv_from(buf.as_slice(), Direction::Minimize).map_err(|e| e.to_string())?;
    let rec_bits = |l: &RunLog| -> Vec<u64> {
        l.records
            .iter()
            .flat_map(|r| [r.train_loss, r.val_full, r.val_quant, r.seconds].map(f64::to_bits))
            .collect()
    };
    check(rec_bits(&back) == rec_bits(&log), || "CSV round trip changed values".into())?;
    check(
        fmt_f64(1.0 / 3.0).chars().filter(char::is_ascii_digit).count() >= 17,
        || "CSV values use fewer than 17 significant digits".into(),
    )?;
    Ok("QFD, QRNN (TERN2/EXP8/F64 + whitening) and CSV bitwise".into())
}

fn pattern_corpus() -> CharCorpus {
    let text: Vec<u8> = b"the cat sat on the mat. ".iter().cycle().take(1000).copied().collect();
    CharCorpus::from_bytes(&text, (0.8, 0.1, 0.1), 50).unwrap()
}

fn char_lm_run(method: QuantMethod, seed: u64) -> Result<f64, String> {
    let corpus = pattern_corpus();
    let train = corpus.train_sequences();
    let valid = corpus.eval_chunks(Split::Valid);
    let model = init_vanilla(&mut RandomSource::derive(seed, INIT_STREAM), corpus.alphabet_size(), 64, 0.1).unwrap();
    let config = TrainConfig {
        max_epochs: C9_EPOCHS,
        patience: C9_EPOCHS,
        batch_size: 4,
        seed,
        adam: AdamConfig { learning_rate: 3e-3, ..AdamConfig::default() },
        grad_clip_norm: Some(1.0),
        method,
        record_wall_time: false,
        ..TrainConfig::default()
    };
    let out = train_loop(&model, &train, &valid, &config, RunMetadata::default()).map_err(|e| e.to_string())?;
    bpc(&out.last, &train).map_err(|e| e.to_string())
}

// 9. Char-LM smoke test.
fn criterion_9() -> Outcome {
    let started = Instant::now();
    let base = char_lm_run(QuantMethod::None, 1)?;
    let exp = char_lm_run(QuantMethod::ExpStochastic, 1)?;
    check(base < C9_BASELINE_BPC, || format!("baseline train BPC {base:.4} >= {C9_BASELINE_BPC}"))?;
    check(exp < C9_EXP_BPC, || format!("exp-stochastic train BPC {exp:.4} >= {C9_EXP_BPC}"))?;
    let took = within(C9_LIMIT, started)?;
    Ok(format!("train BPC baseline {base:.4}, exp-stochastic {exp:.4}, {took:.1?}"))
}

fn digits_run(method: QuantMethod, seed: u64) -> Result<f64, String> {
    let mut train = make_synthetic_digits(&mut RandomSource::derive(seed, 10), 100, 10, 39, 200).unwrap();
    let mut valid = make_synthetic_digits(&mut RandomSource::derive(seed, 11), 50, 10, 39, 200).unwrap();
    let stats = WhiteningStats::from_dataset(&train);
    stats.apply(&mut train).map_err(|e| e.to_string())?;
    stats.apply(&mut valid).map_err(|e| e.to_string())?;
    let model = init_gru(&mut RandomSource::derive(seed, INIT_STREAM), 39, 64, 64, 10).unwrap();
    let config = TrainConfig {
        max_epochs: 6,
        patience: 2,
        batch_size: 20,
        seed,
        adam: AdamConfig { learning_rate: 3e-3, ..AdamConfig::default() },
        method,
        record_wall_time: false,
        ..TrainConfig::default()
    };
    let out = train_loop(&model, &train.sequences(), &valid.sequences(), &config, RunMetadata::default())
        .map_err(|e| e.to_string())?;
    Ok(out.log.best().expect("at least one epoch").val_full)
}

// 10. Sequence classification smoke test.
fn criterion_10() -> Outcome {
    let started = Instant::now();
    let mean = |method| -> Result<f64, String> {
        let accs = C10_SEEDS.iter().map(|&s| digits_run(method, s)).collect::<Result<Vec<_>, _>>()?;
        Ok(accs.iter().sum::<f64>() / accs.len() as f64)
    };
    let base = mean(QuantMethod::None)?;
    let exp = mean(QuantMethod::ExpStochastic)?;
    let ter = mean(QuantMethod::TernaryStochastic)?;
    let summary = format!("mean accuracy baseline {base:.3}, exp-stochastic {exp:.3}, ternary-stochastic {ter:.3}");
    check(base >= C10_BASELINE_ACC, || format!("{summary}; baseline below {C10_BASELINE_ACC}"))?;
    check(exp >= base - C10_EXP_MARGIN, || format!("{summary}; exp more than {C10_EXP_MARGIN} below baseline"))?;
    check(ter >= base - C10_TERNARY_MARGIN, || format!("{summary}; ternary more than {C10_TERNARY_MARGIN} below baseline"))?;
    let took = within(C10_LIMIT, started)?;
    Ok(format!("{summary}, {took:.1?}"))
}

/// Reference stopping epoch: the first epoch `e >= patience` at which the
/// best value so far is at least `patience` epochs old.
fn reference_stop(metrics: &[f64], patience: usize, minimize: bool) -> Option<usize> {
    let mut best_epoch = 0;
    let mut best = if minimize { f64::INFINITY } else { f64::NEG_INFINITY };
    for (i, &m) in metrics.iter().enumerate() {
        let epoch = i + 1;
        if (minimize && m < best) || (!minimize && m > best) {
            best = m;
            best_epoch = epoch;
        }
        if epoch >= patience && epoch - best_epoch >= patience {
            return Some(epoch);
        }
    }
    None
}

fn run_stopper(metrics: &[f64], patience: usize, direction: Direction) -> Option<usize> {
    let mut s = EarlyStopping::new(patience, direction);
    metrics.iter().enumerate().find(|(i, &m)| s.observe(i + 1, m)).map(|(i, _)| i + 1)
}

// 11. Early stopping semantics.
fn criterion_11() -> Outcome {
    let constructed: [(&[f64], usize, Option<usize>); 5] = [
        // improvement only at epoch 1: stop at 1 + patience
        (&[1.0, 2.0, 2.0, 2.0, 2.0, 2.0], 3, Some(4)),
        // never improves after epoch 1 but patience has not elapsed
        (&[1.0, 1.0, 1.0], 3, None),
        // equal values are not improvements
        (&[5.0, 4.0, 4.0, 4.0, 4.0, 4.0], 3, Some(5)),
        // steady improvement never stops
        (&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0], 2, None),
        // patience 100: no stop before epoch 100 even without improvement
        (&[0.5; 150], 100, Some(101)),
    ];
    for (seq, p, want) in constructed {
        let got = run_stopper(seq, p, Direction::Minimize);
        check(got == want, || format!("patience {p} on {:?}...: stopped at {got:?}, want {want:?}", &seq[..3]))?;
    }
    let mut rng = RandomSource::new(1111);
    for _ in 0..C11_SEQUENCES {
        let len = 1 + rng.below(60);
        let patience = 1 + rng.below(12);
        let levels = 1 + rng.below(6);
        let seq: Vec<f64> = (0..len).map(|_| rng.below(levels) as f64).collect();
        for (direction, minimize) in [(Direction::Minimize, true), (Direction::Maximize, false)] {
            let got = run_stopper(&seq, patience, direction);
            let want = reference_stop(&seq, patience, minimize);
            check(got == want, || format!("{seq:?} patience {patience}: {got:?} vs {want:?}"))?;
        }
    }
    Ok(format!("5 constructed traces, {C11_SEQUENCES} random traces x 2 directions"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("quantizer value sets", criterion_1),
        ("deterministic thresholds", criterion_2),
        ("stochastic unbiasedness", criterion_3),
        ("pow2-ternarization Q1.1", criterion_4),
        ("gradient correctness", criterion_5),
        ("baseline identity", criterion_6),
        ("multiplication-free equivalence", criterion_7),
        ("format round trips", criterion_8),
        ("char-LM smoke", criterion_9),
        ("classification smoke", criterion_10),
        ("patience semantics", criterion_11),
    ];
    let filter: Vec<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect())
        .unwrap_or_default();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        match run() {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n:>2} FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
