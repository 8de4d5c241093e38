//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero on any unexpected result.
//!
//! Run alone with `cargo test -p sar2eo --test acceptance`.
//! `ACCEPTANCE_ONLY=1,3` restricts the run to the listed criteria.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sar2eo::cli::run_with;
use sar2eo::config::RunConfig;
use sar2eo::dataset::{synth_paired, DatasetManifest, PairedSample};
use sar2eo::denoise::{median_filter, median_filter_naive, DenoiseConfig};
use sar2eo::gradsuite::{run_suite, TOLERANCE};
use sar2eo::loss::feature_matching_loss;
use sar2eo::metrics::{
    compute_feature_stats, final_score, frechet_distance, l2_metric, matrix_sqrt_psd, round2, EvalOptions,
    FeatureExtractor, FeatureStats,
};
use sar2eo::pipeline::{ablation, split_for_run, translate_samples};
use sar2eo::tensor::{ops, ParamStore, Tape, Tensor};
use sar2eo::trainer::{initial_checkpoint, prepare_sar, train, train_observed, Stage, StepEvent, TrainObserver};
use sar2eo::ImageChip;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// ---- 1: gradient suite ----

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let entries = run_suite(0).expect("suite runs");
    let elapsed = t.elapsed();
    let worst = entries.iter().max_by(|a, b| a.result.max_rel_err.total_cmp(&b.result.max_rel_err)).unwrap();
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed()).map(|e| e.name.as_str()).collect();
    let composites = ["network g1", "network generator", "network discriminator scale 1", "loss total generator"];
    let have_all = composites.iter().all(|c| entries.iter().any(|e| e.name == *c));
    outcome(
        failed.is_empty() && have_all && elapsed < Duration::from_secs(120),
        format!(
            "{} checks, worst {:.2e} ({}) vs {TOLERANCE:e}, failed {failed:?}, {} < 120s",
            entries.len(),
            worst.result.max_rel_err,
            worst.name,
            secs(elapsed)
        ),
    )
}

// ---- 2: median filter ----

fn random_chip(rng: &mut ChaCha8Rng, w: usize, h: usize) -> ImageChip {
    ImageChip::from_fn(w, h, 1, |_, _, _| rng.gen()).unwrap()
}

fn border_matches(input: &ImageChip, out: &ImageChip, cfg: &DenoiseConfig) -> bool {
    let (rn, rm) = (cfg.window_n / 2, cfg.window_m / 2);
    (0..input.height()).all(|y| {
        (0..input.width()).all(|x| {
            let border = y < rn || y >= input.height() - rn || x < rm || x >= input.width() - rm;
            !border || input.get(0, y, x) == out.get(0, y, x)
        })
    })
}

fn best_of<F: FnMut()>(runs: usize, mut f: F) -> Duration {
    (0..runs)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed()
        })
        .min()
        .unwrap()
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let windows = [DenoiseConfig::new(3, 3).unwrap(), DenoiseConfig::new(5, 5).unwrap()];
    let mut mismatches = 0;
    let mut border_bad = 0;
    for _ in 0..20 {
        let chip = random_chip(&mut rng, 32, 32);
        for w in &windows {
            let fast = median_filter(&chip, w).unwrap();
            if fast != median_filter_naive(&chip, w).unwrap() {
                mismatches += 1;
            }
            if !border_matches(&chip, &fast, w) {
                border_bad += 1;
            }
        }
    }
    let oracle_time = t.elapsed();

    let big = random_chip(&mut rng, 512, 512);
    let w5 = windows[1];
    let fast = best_of(3, || {
        median_filter(&big, &w5).unwrap();
    });
    let naive = best_of(3, || {
        median_filter_naive(&big, &w5).unwrap();
    });
    let speedup = naive.as_secs_f64() / fast.as_secs_f64();
    outcome(
        mismatches == 0 && border_bad == 0 && oracle_time < Duration::from_secs(10) && speedup >= 5.0,
        format!(
            "40 oracle comparisons: {mismatches} mismatches, {border_bad} border diffs, {} < 10s; 512x512 5x5 speedup {speedup:.1}x >= 5x",
            secs(oracle_time)
        ),
    )
}

// ---- 3: Fréchet identities ----

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ex = FeatureExtractor::default();
    let a: Vec<_> = (0..12).map(|_| ImageChip::from_fn(32, 32, 3, |_, _, _| rng.gen()).unwrap()).collect();
    let b: Vec<_> = (0..12).map(|_| ImageChip::from_fn(32, 32, 3, |_, _, _| rng.gen_range(0..200)).unwrap()).collect();
    let sa = compute_feature_stats(&a, &ex).unwrap();
    let sb = compute_feature_stats(&b, &ex).unwrap();
    let self_d = frechet_distance(&sa, &sa).unwrap().max(frechet_distance(&sb, &sb).unwrap());
    let (ab, ba) = (frechet_distance(&sa, &sb).unwrap(), frechet_distance(&sb, &sa).unwrap());
    let sym = (ab - ba).abs() / ab.abs().max(1e-300);

    let scalar = |m: f64, v: f64| FeatureStats::new(DVector::from_vec(vec![m]), DMatrix::from_element(1, 1, v), 2).unwrap();
    let closed = frechet_distance(&scalar(0.0, 1.0), &scalar(3.0, 4.0)).unwrap();

    let mut worst_sqrt = 0.0f64;
    for _ in 0..5 {
        let s0 = DMatrix::from_fn(64, 64, |_, _| rng.gen_range(-1.0..1.0));
        let psd = &s0 * s0.transpose();
        let r = matrix_sqrt_psd(&psd).unwrap();
        worst_sqrt = worst_sqrt.max((&r * &r - &psd).norm() / psd.norm());
    }
    outcome(
        self_d < 1e-8 && sym < 1e-8 && (closed - 10.0).abs() <= 1e-6 && worst_sqrt < 1e-6,
        format!(
            "self {self_d:.1e} < 1e-8, symmetry {sym:.1e} < 1e-8, 1-D case {closed} vs 10 ± 1e-6, 64x64 sqrt round trip {worst_sqrt:.1e} < 1e-6"
        ),
    )
}

// ---- 4: feature-matching arithmetic ----

fn criterion_4() -> Outcome {
    let mut tape = Tape::<f64>::new();
    let r1 = tape.constant(Tensor::new([1], vec![1.0]).unwrap());
    let f1 = tape.constant(Tensor::new([1], vec![0.0]).unwrap());
    let r2 = tape.constant(Tensor::new([2], vec![1.0, 1.0]).unwrap());
    let f2 = tape.constant(Tensor::new([2], vec![0.0, 0.0]).unwrap());
    let fm = feature_matching_loss(&mut tape, &[r1, r2], &[f1, f2]).unwrap();
    let hand = tape.value(fm).data()[0];

    // one layer with a fixed per-element gap, at two sizes
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let gap: f64 = rng.gen_range(-3.0..3.0);
        let (c, h) = (rng.gen_range(1..4), rng.gen_range(1..6));
        let term = |scale: usize| {
            let mut t = Tape::<f64>::new();
            let shape = [1, c, h * scale, h];
            let base = Tensor::from_fn(shape, |i| (i as f64 * 0.7).sin());
            let shifted = base.map(|v| v + gap);
            let r = t.constant(base);
            let f = t.constant(shifted);
            let l = feature_matching_loss(&mut t, &[r], &[f]).unwrap();
            t.value(l).data()[0]
        };
        worst = worst.max((term(1) - term(2)).abs());
    }
    outcome(hand == 2.0 && worst < 1e-12, format!("T=2 example = {hand} (exactly 2.0); doubling N_i changes the term by at most {worst:.1e} < 1e-12"))
}

// ---- 5: leaderboard scoring arithmetic ----

// (final, lpips, fvd, l2) as printed, two decimals each.
const LEADERBOARD: [(&str, f64, f64, f64, f64); 8] = [
    ("rank 1", 0.09, 0.25, 0.02, 0.01),
    ("rank 2", 0.14, 0.35, 0.04, 0.01),
    ("rank 3", 0.14, 0.38, 0.02, 0.01),
    ("rank 4", 0.18, 0.43, 0.10, 0.01),
    ("rank 5", 0.26, 0.50, 0.27, 0.02),
    ("rank 6", 0.30, 0.30, 0.59, 0.01),
    ("rank 7", 0.33, 0.54, 0.43, 0.02),
    ("rank 8", 0.33, 0.46, 0.53, 0.01),
];

fn criterion_5() -> Outcome {
    let mut bad = Vec::new();
    for (who, printed, lpips, fvd, l2) in LEADERBOARD {
        let mean = final_score(l2, lpips, fvd).unwrap();
        if round2(mean) != printed {
            bad.push(format!("{who}: mean {mean:.4} rounds to {:.2}, printed {printed:.2}", round2(mean)));
        }
    }
    let top = round2(final_score(0.01, 0.25, 0.02).unwrap());
    outcome(
        bad.is_empty(),
        format!("{} rows; top row {top:.2} vs 0.09; mismatches: {}", LEADERBOARD.len(), if bad.is_empty() { "none".into() } else { bad.join("; ") }),
    )
}

// ---- 6: end-to-end learning ----

fn mean_abs_unit(pred: &[ImageChip], reference: &[PairedSample]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (p, r) in pred.iter().zip(reference) {
        for (a, b) in p.data().iter().zip(r.eo.data()) {
            s += (*a as f64 - *b as f64).abs() / 255.0;
            n += 1;
        }
    }
    s / n as f64
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let samples = synth_paired(16, 64, 7, 0.3).unwrap();
    let cfg = RunConfig { train: sar2eo::trainer::TrainConfig { seed: 1, ..Default::default() }, ..Default::default() };
    let manifest = DatasetManifest { root: ".".into(), resolution: 64, samples };
    let (train_set, held) = split_for_run(&manifest, &cfg).unwrap();

    let untrained = initial_checkpoint(&cfg.train).unwrap();
    let trained = train(&train_set, &cfg.train).unwrap();
    let l1_untrained = mean_abs_unit(&translate_samples(&untrained, &held).unwrap(), &held);
    let pred = translate_samples(&trained, &held).unwrap();
    let l1_trained = mean_abs_unit(&pred, &held);
    let eo: Vec<ImageChip> = held.iter().map(|s| s.eo.clone()).collect();
    let identity: Vec<ImageChip> = held.iter().map(|s| s.sar.to_rgb()).collect();
    let l2_trained = l2_metric(&pred, &eo).unwrap();
    let l2_identity = l2_metric(&identity, &eo).unwrap();
    let elapsed = t.elapsed();
    outcome(
        l1_trained <= 0.7 * l1_untrained && l2_trained < l2_identity && elapsed < Duration::from_secs(600),
        format!(
            "{} train / {} held out; held-out L1 {l1_trained:.4} <= 0.7 x {l1_untrained:.4} = {:.4}; l2 {l2_trained:.4} < identity {l2_identity:.4}; {} < 600s",
            train_set.len(),
            held.len(),
            0.7 * l1_untrained,
            secs(elapsed)
        ),
    )
}

// ---- 7: ablation direction ----

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let speckle = 0.5;
    let samples = synth_paired(48, 64, 7, speckle).unwrap();
    let cfg = RunConfig { train: sar2eo::trainer::TrainConfig { seed: 1, ..Default::default() }, ..Default::default() };
    let manifest = DatasetManifest { root: ".".into(), resolution: 64, samples };
    let (train_set, held) = split_for_run(&manifest, &cfg).unwrap();
    let r = ablation(&train_set, &held, &cfg, &FeatureExtractor::default(), EvalOptions::default()).unwrap();
    let elapsed = t.elapsed();
    outcome(
        r.denoised.final_score <= r.base.final_score && elapsed < Duration::from_secs(1200),
        format!(
            "speckle {speckle}, {} train / {} held out; +denoise {:.4} <= base {:.4}; {} < 1200s",
            train_set.len(),
            held.len(),
            r.denoised.final_score,
            r.base.final_score,
            secs(elapsed)
        ),
    )
}

// ---- 8: staging contract and denoise placement ----

#[derive(Default)]
struct Contract<'a> {
    data: &'a [PairedSample],
    denoise: Option<DenoiseConfig>,
    before: Option<ParamStore<f32>>,
    frozen_changed: Vec<String>,
    trained_unchanged: usize,
    raw_inputs: usize,
    wrong_inputs: usize,
    steps: usize,
}

impl TrainObserver for Contract<'_> {
    fn before_step(&mut self, e: &StepEvent<'_>) {
        self.before = Some(e.generator_params.clone());
        let tensor = |f: &dyn Fn(&PairedSample) -> ImageChip| {
            let chips: Vec<ImageChip> = e.batch_ids.iter().map(|id| f(self.data.iter().find(|s| s.id == *id).unwrap())).collect();
            let t = ImageChip::batch_tensor(&chips.iter().collect::<Vec<_>>()).unwrap();
            if e.stage == Stage::Global {
                ops::avg_downsample2(&t).unwrap()
            } else {
                t
            }
        };
        if e.generator_input == &tensor(&|s| s.sar.clone()) {
            self.raw_inputs += 1;
        }
        if e.generator_input != &tensor(&|s| prepare_sar(&s.sar, self.denoise.as_ref()).unwrap()) {
            self.wrong_inputs += 1;
        }
    }

    fn after_step(&mut self, e: &StepEvent<'_>) {
        self.steps += 1;
        let before = self.before.take().unwrap();
        let mut any_trained_moved = false;
        for ((_, name, a), (_, _, b)) in before.iter().zip(e.generator_params.iter()) {
            let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            if !e.stage.trains(name) && !same {
                self.frozen_changed.push(format!("{}:{name}", e.stage));
            }
            any_trained_moved |= e.stage.trains(name) && !same;
        }
        if !any_trained_moved {
            self.trained_unchanged += 1;
        }
    }
}

fn criterion_8() -> Outcome {
    let data = synth_paired(6, 64, 8, 0.4).unwrap();
    let cfg = sar2eo::trainer::TrainConfig { stage_epochs: [2, 2, 1], batch_size: 3, ..Default::default() };
    let mut obs = Contract { data: &data, denoise: cfg.denoise, ..Default::default() };
    train_observed(&data, &cfg, &mut obs).unwrap();
    outcome(
        obs.frozen_changed.is_empty() && obs.trained_unchanged == 0 && obs.raw_inputs == 0 && obs.wrong_inputs == 0 && obs.steps == 10,
        format!(
            "{} steps; frozen params changed: {}; steps where trainable params did not move: {}; raw SAR inputs {}, inputs differing from filtered SAR {}",
            obs.steps,
            obs.frozen_changed.len(),
            obs.trained_unchanged,
            obs.raw_inputs,
            obs.wrong_inputs
        ),
    )
}

// ---- 9: determinism ----

fn pipeline(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let steps: Vec<Vec<String>> = vec![
        vec!["synth-data".into(), "--n".into(), "8".into(), "--res".into(), "64".into(), "--out".into(), p("data")],
        vec![
            "train".into(),
            "--data".into(),
            p("data"),
            "--out".into(),
            p("model.s2e"),
            "--set".into(),
            "train.epochs_g1=2".into(),
            "--set".into(),
            "train.epochs_g2=2".into(),
            "--set".into(),
            "train.epochs_joint=3".into(),
        ],
        vec!["translate".into(), "--ckpt".into(), p("model.s2e"), "--in".into(), p("data/sar"), "--out".into(), p("pred")],
        vec!["evaluate".into(), "--pred".into(), p("pred"), "--ref".into(), p("data/eo"), "--report".into(), p("report.txt")],
    ];
    for s in steps {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let args = ["sar2eo".to_string(), "--seed".into(), "7".into()].into_iter().chain(s.iter().cloned());
        let code = run_with(args, &mut o, &mut e);
        assert_eq!(code, 0, "{s:?}: {}", String::from_utf8_lossy(&e));
    }
    let mut files = vec![("model.s2e".to_string(), std::fs::read(dir.join("model.s2e")).unwrap())];
    files.push(("report.txt".into(), std::fs::read(dir.join("report.txt")).unwrap()));
    let mut preds: Vec<_> = std::fs::read_dir(dir.join("pred")).unwrap().map(|e| e.unwrap().path()).collect();
    preds.sort();
    for f in preds {
        files.push((format!("pred/{}", f.file_name().unwrap().to_string_lossy()), std::fs::read(&f).unwrap()));
    }
    files
}

fn criterion_9() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = pipeline(a.path());
    let fb = pipeline(b.path());
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    let differing: Vec<&str> = fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    outcome(
        fa.len() == fb.len() && differing.is_empty() && names.len() == 10,
        format!("compared {} artifacts (checkpoint, report, {} chips); differing: {differing:?}", fa.len(), fa.len().saturating_sub(2)),
    )
}

/// Criteria that cannot hold as written; they still run and print FAIL.
const KNOWN_UNATTAINABLE: [(usize, &str); 1] =
    [(5, "the second row averages to 0.1333, which rounds to 0.13; the printed inputs are themselves rounded")];

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let only: Option<Vec<usize>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let criteria: [Criterion; 9] = [
        (1, "gradient suite", criterion_1),
        (2, "median filter oracle", criterion_2),
        (3, "frechet identities", criterion_3),
        (4, "feature matching arithmetic", criterion_4),
        (5, "leaderboard scoring", criterion_5),
        (6, "end-to-end learning", criterion_6),
        (7, "ablation direction", criterion_7),
        (8, "staging contract", criterion_8),
        (9, "determinism", criterion_9),
    ];
    let mut unexpected = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        let known = KNOWN_UNATTAINABLE.iter().find(|(k, _)| *k == id);
        let verdict = match (o.pass, known) {
            (true, None) => "PASS".to_string(),
            (false, None) => {
                unexpected += 1;
                "FAIL".to_string()
            }
            (false, Some((_, why))) => format!("FAIL (known: {why})"),
            (true, Some(_)) => {
                unexpected += 1;
                "PASS (unexpected; listed as unattainable)".to_string()
            }
        };
        println!("criterion {id} [{name}] {verdict}: {} [{}]", o.detail, secs(t.elapsed()));
    }
    if unexpected > 0 {
        println!("{unexpected} unexpected result(s)");
        std::process::exit(1);
    }
}
