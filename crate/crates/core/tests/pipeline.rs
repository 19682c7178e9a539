mod common;

use std::fs;
use std::path::{Path, PathBuf};

use common::rng;
use rand::Rng;
use topowmamba::error::Error;
use topowmamba::eval::LabelMask;
use topowmamba::network::{save_checkpoint, CheckpointMeta, Model, ModelConfig};
use topowmamba::params::ParamStore;
use topowmamba::pipeline::*;
use topowmamba::tensor::Tensor;

fn small_spec(n: usize) -> PhantomSpec {
    PhantomSpec { n_samples: n, ..Default::default() }
}

fn dir_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn phantom_generation_is_byte_deterministic() {
    let d = tempfile::tempdir().unwrap();
    gen_phantoms(&small_spec(12), d.path().join("a")).unwrap();
    gen_phantoms(&small_spec(12), d.path().join("b")).unwrap();
    let (a, b) = (dir_bytes(&d.path().join("a")), dir_bytes(&d.path().join("b")));
    assert_eq!(a.len(), 25);
    assert_eq!(a, b);
    gen_phantoms(&PhantomSpec { seed: 1, ..small_spec(12) }, d.path().join("c")).unwrap();
    assert_ne!(a, dir_bytes(&d.path().join("c")));
}

#[test]
fn manifest_layout_and_splits() {
    let d = tempfile::tempdir().unwrap();
    let m = gen_phantoms(&small_spec(40), d.path()).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&fs::read(d.path().join("manifest.json")).unwrap()).unwrap();
    for key in ["h", "w", "num_classes", "class_names", "spacing_mm", "samples"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    for key in ["id", "image", "mask", "split"] {
        assert!(json["samples"][0].get(key).is_some(), "{key}");
    }
    let count = |s: &str| m.samples.iter().filter(|e| e.split == s).count();
    assert_eq!((count("train"), count("val"), count("test")), (28, 6, 6));
    assert_eq!(split_sizes(200), (140, 30, 30));
    let ds = Dataset::open(d.path()).unwrap();
    let s = ds.load(&m.samples[3]).unwrap();
    assert_eq!(s.image.shape(), &[1, 64, 64]);
    assert_eq!(s.image.data(), small_spec(40).sample(3).image.as_slice());
    assert_eq!(s.mask.classes, small_spec(40).sample(3).mask);
}

#[test]
fn masks_use_only_declared_labels_and_contain_foreground() {
    for classes in [2usize, 3, 4] {
        let mut radius = vec![[12.0, 20.0]; classes - 1];
        if classes >= 3 {
            radius[classes - 2] = [2.0, 3.5];
        }
        let spec = PhantomSpec {
            num_classes: classes,
            class_names: vec![],
            radius_ranges: radius,
            intensity_ranges: (0..classes).map(|c| [c as f64 / classes as f64; 2]).collect(),
            ..small_spec(30)
        };
        for i in 0..30 {
            let s = spec.sample(i);
            let mut hist = vec![0usize; 256];
            for &c in &s.mask {
                hist[c as usize] += 1;
            }
            assert!(hist[classes..].iter().all(|&n| n == 0));
            assert!(hist[0] > 0 && hist[1..classes].iter().any(|&n| n > 0));
            assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn foreground_fraction_matches_monte_carlo_area() {
    let spec = small_spec(100);
    let [lo, hi] = spec.radius_ranges[0];
    let hw = (spec.h * spec.w) as f64;
    let mut r = rng(41);
    // Expected ellipse area fraction under the generating distribution.
    let draws = 200_000;
    let mc_mean: f64 = (0..draws)
        .map(|_| std::f64::consts::PI * r.gen_range(lo..=hi) * r.gen_range(lo..=hi) / hw)
        .sum::<f64>()
        / draws as f64;
    let mut total = 0.0;
    for i in 0..100 {
        let s = spec.sample(i);
        let frac = s.mask.iter().filter(|&&c| c > 0).count() as f64 / hw;
        // Monte-Carlo area of this sample's outer ellipse.
        let e = s.geometry.ellipses[0];
        let pts = 20_000;
        let hits = (0..pts)
            .filter(|_| e.contains(r.gen_range(0.0..spec.h as f64), r.gen_range(0.0..spec.w as f64)))
            .count();
        let mc = hits as f64 / pts as f64;
        let perimeter = 2.0 * std::f64::consts::PI * e.a.max(e.b);
        assert!((frac - mc).abs() < perimeter / hw + 0.01, "sample {i}: {frac} vs {mc}");
        let slack = perimeter / hw;
        assert!(frac >= std::f64::consts::PI * lo * lo / hw - slack && frac <= std::f64::consts::PI * hi * hi / hw + slack);
        total += frac;
    }
    let mean = total / 100.0;
    assert!((mean - mc_mean).abs() < 0.03, "{mean} vs {mc_mean}");
}

#[test]
fn degenerate_specs_are_rejected() {
    let bad = [
        PhantomSpec { radius_ranges: vec![[0.0, 10.0], [3.0, 5.0]], ..small_spec(4) },
        PhantomSpec { radius_ranges: vec![[14.0, 40.0], [3.0, 5.0]], ..small_spec(4) },
        PhantomSpec { radius_ranges: vec![[14.0, 20.0], [0.2, 0.5]], ..small_spec(4) },
        PhantomSpec { radius_ranges: vec![[14.0, 20.0]], ..small_spec(4) },
        PhantomSpec { n_samples: 0, ..small_spec(4) },
        PhantomSpec { num_classes: 1, ..small_spec(4) },
        PhantomSpec { noise_sigma: -1.0, ..small_spec(4) },
    ];
    let d = tempfile::tempdir().unwrap();
    for s in bad {
        assert!(matches!(gen_phantoms(&s, d.path()), Err(Error::InvalidConfig(_))), "{s:?}");
    }
}

#[test]
fn preprocess_fixed_point_constant_and_window() {
    let mut r = rng(42);
    let img: Vec<f32> = (0..48).map(|_| r.gen_range(0.0..1.0)).collect();
    let mut scaled = img.clone();
    scaled[0] = 0.0;
    scaled[1] = 1.0;
    let out = preprocess_slice(&scaled, 6, 8, (6, 8), None).unwrap();
    assert_eq!(out.shape(), &[1, 6, 8]);
    for (a, b) in out.data().iter().zip(&scaled) {
        assert!((a - b).abs() < 1e-7);
    }
    let flat = preprocess_slice(&[3.5; 20], 4, 5, (8, 10), None).unwrap();
    assert!(flat.data().iter().all(|&v| v == 0.0));

    let hu: Vec<f32> = (0..64).map(|_| r.gen_range(-1000.0..1000.0)).collect();
    let out = preprocess_slice(&hu, 8, 8, (8, 8), Some((-100.0, 300.0))).unwrap();
    let clamped: Vec<f64> = hu.iter().map(|&v| (v as f64).clamp(-100.0, 300.0)).collect();
    let (mn, mx) = clamped.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    for (o, c) in out.data().iter().zip(&clamped) {
        assert!((*o as f64 - (c - mn) / (mx - mn)).abs() < 1e-6);
    }
}

#[test]
fn preprocess_resize_and_errors() {
    let img: Vec<f32> = vec![0.0, 1.0, 0.0, 1.0];
    let out = preprocess_slice(&img, 2, 2, (4, 4), None).unwrap();
    // Half-pixel centres: output columns sample 0, 0.25, 0.75, 1 of the ramp.
    let row = [0.0, 0.25, 0.75, 1.0];
    for y in 0..4 {
        for x in 0..4 {
            assert!((out.data()[y * 4 + x] - row[x]).abs() < 1e-7);
        }
    }
    assert!(matches!(preprocess_slice(&[], 0, 0, (4, 4), None), Err(Error::InvalidArgument(_))));
    assert!(preprocess_slice(&[1.0, f32::NAN], 1, 2, (1, 2), None).is_err());
    assert!(preprocess_slice(&[1.0; 4], 2, 2, (2, 2), Some((5.0, 5.0))).is_err());
    assert_eq!(resize_nearest(&[1u8, 2, 3, 4], 2, 2, 4, 4), vec![1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]);
}

fn scalar_store(values: &[f64]) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    for (i, &v) in values.iter().enumerate() {
        s.add(format!("p{i}"), Tensor::from_f64(&[1], &[v]).unwrap()).unwrap();
    }
    s
}

#[test]
fn first_adamw_step_moves_by_lr_times_sign() {
    let mut p = scalar_store(&[1.0, -2.0, 0.5]);
    let grads: Vec<Tensor<f64>> = [3.0, -0.01, 7.0].iter().map(|&g| Tensor::from_f64(&[1], &[g]).unwrap()).collect();
    let mut st = OptimizerState::new(&p);
    let cfg = AdamConfig { weight_decay: 0.0, ..Default::default() };
    adamw_step(&mut p, &grads, &mut st, 1e-3, &cfg).unwrap();
    for (k, (before, g)) in [(1.0, 3.0), (-2.0, -0.01), (0.5, 7.0f64)].iter().enumerate() {
        let after = p.tensors()[k].data()[0];
        assert!((after - (before - 1e-3 * g.signum())).abs() < 1e-8);
    }
}

#[test]
fn zero_gradient_updates() {
    let zero = || vec![Tensor::from_f64(&[1], &[0.0]).unwrap(); 2];
    let mut p = scalar_store(&[1.5, -4.0]);
    let mut st = OptimizerState::new(&p);
    adamw_step(&mut p, &zero(), &mut st, 1e-2, &AdamConfig { weight_decay: 0.0, ..Default::default() }).unwrap();
    assert_eq!(p.tensors()[0].data()[0], 1.5);

    let cfg = AdamConfig { weight_decay: 0.1, ..Default::default() };
    let mut st = OptimizerState::new(&p);
    for _ in 0..5 {
        let before: Vec<f64> = p.tensors().iter().map(|t| t.data()[0]).collect();
        adamw_step(&mut p, &zero(), &mut st, 1e-2, &cfg).unwrap();
        for (t, b) in p.tensors().iter().zip(before) {
            assert_eq!(t.data()[0], b * (1.0 - 1e-2 * 0.1));
        }
    }
}

#[test]
fn adamw_trace_on_a_quadratic() {
    // f(p) = 0.5 * a * (p - c)^2, gradient a * (p - c)
    let (a, c, lr) = (3.0, 0.7, 0.05);
    let cfg = AdamConfig::default();
    let mut p = scalar_store(&[2.0]);
    let mut st = OptimizerState::new(&p);
    let (mut x, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
    for t in 1..=5 {
        let g = a * (x - c);
        let grads = vec![Tensor::from_f64(&[1], &[a * (p.tensors()[0].data()[0] - c)]).unwrap()];
        adamw_step(&mut p, &grads, &mut st, lr, &cfg).unwrap();
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        x = x - lr * (mh / (vh.sqrt() + 1e-8) + 0.01 * x);
        assert!((p.tensors()[0].data()[0] - x).abs() < 1e-10, "step {t}");
    }
}

#[test]
fn plain_adam_folds_decay_into_the_gradient() {
    let cfg = AdamConfig { kind: OptimizerKind::Adam, weight_decay: 0.5, ..Default::default() };
    let mut p = scalar_store(&[2.0]);
    let mut st = OptimizerState::new(&p);
    adamw_step(&mut p, &[Tensor::from_f64(&[1], &[-0.4]).unwrap()], &mut st, 0.1, &cfg).unwrap();
    // effective gradient -0.4 + 0.5 * 2 = 0.6 > 0, so the first step is -lr
    assert!((p.tensors()[0].data()[0] - 1.9).abs() < 1e-8);
    assert_eq!(serde_json::to_string(&OptimizerKind::Adamw).unwrap(), "\"adamw\"");
}

#[test]
fn non_finite_gradient_aborts_the_step() {
    let mut p = scalar_store(&[1.0, 2.0]);
    let mut st = OptimizerState::new(&p);
    let grads = vec![Tensor::from_f64(&[1], &[0.5]).unwrap(), Tensor::from_f64(&[1], &[f64::NAN]).unwrap()];
    match adamw_step(&mut p, &grads, &mut st, 0.1, &AdamConfig::default()) {
        Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "p1"),
        r => panic!("{r:?}"),
    }
    assert_eq!(p.tensors()[0].data()[0], 1.0);
    assert_eq!(st.t, 0);
}

#[test]
fn cosine_schedule() {
    let (hi, lo) = (1e-3, 1e-6);
    assert_eq!(cosine_lr(0, 100, hi, lo).unwrap(), hi);
    assert!((cosine_lr(100, 100, hi, lo).unwrap() - lo).abs() < 1e-18);
    assert!((cosine_lr(50, 100, hi, lo).unwrap() - (hi + lo) / 2.0).abs() < 1e-15);
    let lrs: Vec<f64> = (0..=100).map(|s| cosine_lr(s, 100, hi, lo).unwrap()).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert!(cosine_lr(0, 0, hi, lo).is_err());
    assert!(cosine_lr(101, 100, hi, lo).is_err());
}

#[test]
fn early_stopping_counts_non_improving_epochs() {
    let mut es = EarlyStopping::new(3);
    let log = [50.0, 60.0, 59.0, 60.0, 58.0];
    let verdicts: Vec<EarlyStop> = log.iter().enumerate().map(|(e, &m)| es.update(e + 1, m)).collect();
    assert_eq!(verdicts, vec![EarlyStop::Improved, EarlyStop::Improved, EarlyStop::Waiting, EarlyStop::Waiting, EarlyStop::Stop]);
    assert_eq!((es.best, es.best_epoch), (Some(60.0), 2));
    let mut es = EarlyStopping::new(2);
    assert_eq!(es.update(1, 1.0), EarlyStop::Improved);
    assert_eq!(es.update(2, 0.5), EarlyStop::Waiting);
    assert_eq!(es.update(3, 2.0), EarlyStop::Improved);
    assert_eq!(es.update(4, 2.0), EarlyStop::Waiting);
    assert_eq!(es.update(5, 1.0), EarlyStop::Stop);
}

#[test]
fn train_config_json_and_validation() {
    let cfg: TrainConfig = serde_json::from_str(r#"{"lr": 0.002, "batch_size": 2, "optimizer": {"kind": "adam"}}"#).unwrap();
    assert_eq!(cfg.lr, 0.002);
    assert_eq!(cfg.optimizer.kind, OptimizerKind::Adam);
    assert_eq!(cfg.optimizer.beta2, 0.999);
    assert_eq!((cfg.epochs, cfg.patience, cfg.lr_min), (100, 15, 1e-6));
    assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rate": 1}"#).is_err());
    assert!(TrainConfig { lr_min: 1e-3, lr: 1e-4, ..Default::default() }.validate().is_err());
    assert!(TrainConfig { patience: 0, ..Default::default() }.validate().is_err());
    let spec: PhantomSpec = serde_json::from_str(r#"{"n_samples": 5, "noise_sigma": 0.0}"#).unwrap();
    assert_eq!((spec.n_samples, spec.h), (5, 64));
}

fn quick_train() -> TrainConfig {
    TrainConfig { lr: 1e-3, epochs: 2, batch_size: 4, seed: 3, ..Default::default() }
}

#[test]
fn training_is_bitwise_reproducible() {
    let d = tempfile::tempdir().unwrap();
    gen_phantoms(&small_spec(8), d.path().join("data")).unwrap();
    let cfg = ModelConfig::toy(3);
    let a = run_training(&cfg, &quick_train(), d.path().join("data"), d.path().join("a")).unwrap();
    run_training(&cfg, &quick_train(), d.path().join("data"), d.path().join("b")).unwrap();
    assert_eq!(a.epochs_run, 2);
    assert_eq!(a.steps, 4);
    for f in ["train_log.jsonl", "best.twmb", "last.twmb"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
    let log = read_log(&a.log).unwrap();
    assert_eq!(log.iter().filter(|l| l["kind"] == "step").count(), 4);
    let epoch = log.iter().find(|l| l["kind"] == "epoch").unwrap();
    for key in ["epoch", "step", "lr", "loss", "val_dice", "val_iou", "val_hd95"] {
        assert!(epoch.get(key).is_some(), "{key}");
    }
}

#[test]
fn training_rejects_mismatched_dataset_and_diverging_loss() {
    let d = tempfile::tempdir().unwrap();
    gen_phantoms(&small_spec(8), d.path().join("data")).unwrap();
    let four = ModelConfig::toy(4);
    assert!(matches!(run_training(&four, &quick_train(), d.path().join("data"), d.path().join("x")), Err(Error::Data(_))));
    let small = ModelConfig { input_size: [32, 32], ..ModelConfig::toy(3) };
    assert!(matches!(run_training(&small, &quick_train(), d.path().join("data"), d.path().join("y")), Err(Error::Data(_))));

    let wild = TrainConfig { lr: 1e30, lr_min: 0.0, epochs: 3, ..quick_train() };
    match run_training(&ModelConfig::toy(3), &wild, d.path().join("data"), d.path().join("z")) {
        Err(Error::NonFiniteLoss { .. }) => {}
        r => panic!("expected a non-finite loss abort, got {:?}", r.map(|s| s.final_loss)),
    }
}

fn dataset_with_checkpoint(d: &Path, n: usize) -> PathBuf {
    gen_phantoms(&small_spec(n), d.join("data")).unwrap();
    let m: Model<f32> = Model::build(&ModelConfig::toy(3), 0).unwrap();
    let p = d.join("m.twmb");
    save_checkpoint(&p, &m, None, &CheckpointMeta::default()).unwrap();
    p
}

#[test]
fn evaluation_identity_path_is_perfect() {
    let d = tempfile::tempdir().unwrap();
    gen_phantoms(&small_spec(10), d.path()).unwrap();
    let ds = Dataset::open(d.path()).unwrap();
    let samples = ds.load_split("train").unwrap();
    let cases: Vec<(&str, &LabelMask, &LabelMask)> = samples.iter().map(|s| (s.id.as_str(), &s.mask, &s.mask)).collect();
    let (_, rep) = evaluate_masks(&cases, 3, &ds.manifest.class_names).unwrap();
    assert_eq!((rep.mean.dice, rep.mean.hd95, rep.mean.iou), (100.0, Some(0.0), 100.0));
}

#[test]
fn evaluation_report_matches_csv_and_is_stable() {
    let d = tempfile::tempdir().unwrap();
    let ck = dataset_with_checkpoint(d.path(), 10);
    let r1 = d.path().join("r1.json");
    let rep = run_evaluation(&ck, d.path().join("data"), "train", &r1).unwrap();
    let r2 = d.path().join("r2.json");
    run_evaluation(&ck, d.path().join("data"), "train", &r2).unwrap();
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());
    assert_eq!(fs::read(r1.with_extension("csv")).unwrap(), fs::read(r2.with_extension("csv")).unwrap());

    let csv = fs::read_to_string(r1.with_extension("csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("case,class,dice,iou,hd95,support,flag"));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 7 * 2);
    for cr in &rep.per_class {
        let col = |i: usize| {
            let v: Vec<f64> = rows.iter().filter(|r| r[1] == cr.id.to_string()).map(|r| r[i].parse().unwrap()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((cr.dice - col(2)).abs() < 1e-9);
        assert!((cr.iou - col(3)).abs() < 1e-9);
        assert!((cr.hd95.unwrap() - col(4)).abs() < 1e-9);
    }
    let four = d.path().join("four.twmb");
    save_checkpoint(&four, &Model::build(&ModelConfig::toy(4), 0).unwrap(), None, &CheckpointMeta::default()).unwrap();
    assert!(matches!(run_evaluation(&four, d.path().join("data"), "train", d.path().join("x.json")), Err(Error::Data(_))));
}

#[test]
fn prediction_writes_masks_of_the_input_size() {
    let d = tempfile::tempdir().unwrap();
    let ck = dataset_with_checkpoint(d.path(), 3);
    let (h, w) = (40, 48);
    let mut pgm = format!("P5\n# phantom\n{w} {h}\n65535\n").into_bytes();
    for i in 0..h * w {
        pgm.extend_from_slice(&(((i * 37) % 65536) as u16).to_be_bytes());
    }
    let input = d.path().join("slice.pgm");
    fs::write(&input, &pgm).unwrap();
    let raw = d.path().join("data/images/case0000.f32");
    let out1 = run_prediction(&ck, &[input.clone(), raw.clone()], d.path().join("o1"), true).unwrap();
    let out2 = run_prediction(&ck, &[input, raw], d.path().join("o2"), true).unwrap();
    assert_eq!(out1.len(), 4);
    for (a, b) in out1.iter().zip(&out2) {
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }
    let mask = fs::read(&out1[0]).unwrap();
    assert!(mask.starts_with(format!("P5\n{w} {h}\n255\n").as_bytes()));
    assert_eq!(mask.len(), format!("P5\n{w} {h}\n255\n").len() + h * w);
    assert!(mask[mask.len() - h * w..].iter().all(|&c| c < 3));
    let overlay = fs::read(&out1[1]).unwrap();
    assert!(overlay.starts_with(format!("P6\n{w} {h}\n255\n").as_bytes()));
    assert!(fs::read(&out1[2]).unwrap().starts_with(b"P5\n64 64\n255\n"));

    let missing = d.path().join("nope.pgm");
    assert!(matches!(run_prediction(&ck, &[missing], d.path().join("o3"), false), Err(Error::Io { .. })));
    let garbage = d.path().join("bad.pgm");
    fs::write(&garbage, b"P2\n1 1\n255\n0").unwrap();
    assert!(matches!(run_prediction(&ck, &[garbage], d.path().join("o4"), false), Err(Error::Data(_))));
}

#[test]
fn pgm_reader_handles_both_depths() {
    let img = read_pgm(b"P5 2 1 255 \x00\xff").unwrap();
    assert_eq!((img.h, img.w, img.pixels.clone()), (1, 2, vec![0.0, 1.0]));
    let img = read_pgm(b"P5\n1 2\n1000\n\x01\xf4\x03\xe8").unwrap();
    assert_eq!(img.pixels, vec![0.5, 1.0]);
    assert!(read_pgm(b"P5\n4 4\n255\n\x00").is_err());
    let rgb = overlay(&[0.0, 1.0], &[0, 1]);
    assert_eq!(rgb[0], [0, 0, 0]);
    assert_eq!(rgb[1], PALETTE[1].map(|c| ((255.0 + c as f32) / 2.0).round() as u8));
    assert_eq!(encode_pgm(1, 2, &[7, 8]), b"P5\n2 1\n255\n\x07\x08".to_vec());
}
