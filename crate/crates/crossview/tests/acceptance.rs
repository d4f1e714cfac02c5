//! End-to-end acceptance gate. Each test checks one release criterion and
//! prints a single pass/fail line (visible with `--nocapture`).

#[path = "common/straight_loop.rs"]
#[allow(dead_code)]
mod straight_loop;

use std::path::Path;
use std::time::Instant;

use crossview::cli::{self, DatasetConfig, GradCheckOptions};
use crossview::metrics::{
    evaluate, iou, label_detections, report_from_labeled, Detection, EvalConfig,
};
use crossview::model::identity_w3_block;
use crossview::numerics::Rng;
use crossview::relation::{
    aggregate, geometric_gate, geometric_normalize, relation_stack_forward, visual_affinity,
    RelationBlockParams, RelationStackParams, RoiCandidate, RoiGeometry, View,
    DEFAULT_DENOM_EPS, DEFAULT_GEOMETRY_EPS, DEFAULT_WAVELENGTH,
};
use crossview::synth::{generate_dataset, GeneratorConfig};
use crossview::trainer::{train, TrainConfig};
use straight_loop::{max_abs_diff, o_block, random_cands};

fn verdict(criterion: &str, ok: bool) {
    println!("ACCEPTANCE {criterion}: {}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion failed: {criterion}");
}

fn config_path(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn load_dataset_config(name: &str) -> DatasetConfig {
    let text = std::fs::read_to_string(config_path(name)).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    let mut ok = true;
    for seed in 0..20 {
        let report = cli::cmd_gradcheck(&GradCheckOptions {
            seed,
            ..GradCheckOptions::default()
        })
        .unwrap();
        if !report.pass {
            println!(
                "  seed {seed}: max relative error {:.3e} in {:?}",
                report.max_relative_error,
                report.worst_tensor()
            );
            ok = false;
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    ok &= elapsed < 60.0;
    verdict(
        "1 (gradient check, 20 seeds at toy dimensions, < 60 s)",
        ok,
    );
}

#[test]
fn criterion_2_oracle_equivalence() {
    let mut rng = Rng::from_seed(9001);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let d_f = 2 + rng.index(7);
        let n1 = 1 + rng.index(8);
        let n2 = 1 + rng.index(8);
        let targets = random_cands(&mut rng, View::View1, n1, d_f);
        let sources = random_cands(&mut rng, View::View2, n2, d_f);
        let params = RelationBlockParams::init(&mut rng, d_f, 4, 8).unwrap();
        let got = crossview::relation::relation_block_forward(&targets, &sources, &params).unwrap();
        let want = o_block(&targets, &sources, &params, DEFAULT_WAVELENGTH);
        worst = worst.max(max_abs_diff(&got, &want));
    }
    verdict(
        "2 (forward matches straight-loop oracle within 1e-10 on 100 instances)",
        worst < 1e-10,
    );
}

struct Trial {
    target: RoiCandidate,
    sources: Vec<RoiCandidate>,
    params: RelationBlockParams,
}

fn random_trial(rng: &mut Rng, d_f: usize) -> Trial {
    let n = 1 + rng.index(5);
    Trial {
        target: random_cands(rng, View::View1, 1, d_f).pop().unwrap(),
        sources: random_cands(rng, View::View2, n, d_f),
        params: RelationBlockParams::init(rng, d_f, 3, 8).unwrap(),
    }
}

/// Stabilized gated weights exactly as the aggregate computes them, with an
/// optional constant added to every affinity.
fn weights_of(t: &Trial, params: &RelationBlockParams, shift: f64) -> Vec<f64> {
    let affinities: Vec<f64> = t
        .sources
        .iter()
        .map(|s| visual_affinity(&t.target.feature, &s.feature, params).unwrap() + shift)
        .collect();
    let gates: Vec<f64> = t
        .sources
        .iter()
        .map(|s| {
            let g = geometric_normalize(&t.target.geometry, &s.geometry, DEFAULT_GEOMETRY_EPS)
                .unwrap();
            geometric_gate(&g, params, DEFAULT_WAVELENGTH).unwrap()
        })
        .collect();
    let max_w = affinities
        .iter()
        .zip(&gates)
        .filter(|(_, v)| **v > 0.0)
        .map(|(w, _)| *w)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max_w.is_finite() {
        return vec![0.0; t.sources.len()];
    }
    affinities
        .iter()
        .zip(&gates)
        .map(|(w, v)| if *v > 0.0 { v * (w - max_w).exp() } else { 0.0 })
        .collect()
}

#[test]
fn criterion_3_algebraic_invariants() {
    const D_F: usize = 5;
    let mut ok = true;

    // weight simplex
    let mut rng = Rng::from_seed(9101);
    for _ in 0..1000 {
        let t = random_trial(&mut rng, D_F);
        let weights = weights_of(&t, &t.params, 0.0);
        let denom: f64 = weights.iter().sum();
        if denom <= DEFAULT_DENOM_EPS {
            continue;
        }
        let mut total = 0.0;
        for w in &weights {
            let s = w / denom;
            ok &= (0.0..=1.0).contains(&s);
            total += s;
        }
        ok &= (total - 1.0).abs() < 1e-12;
    }

    // convex hull with identity W3
    let mut rng = Rng::from_seed(9102);
    for _ in 0..1000 {
        let mut t = random_trial(&mut rng, D_F);
        t.params = identity_w3_block(D_F, 3, 8, &mut rng).unwrap();
        let weights = weights_of(&t, &t.params, 0.0);
        if weights.iter().sum::<f64>() <= DEFAULT_DENOM_EPS {
            continue;
        }
        let out = aggregate(&t.target, &t.sources, &t.params, DEFAULT_DENOM_EPS).unwrap();
        for i in 0..D_F {
            let lo = t.sources.iter().map(|s| s.feature[i]).fold(f64::INFINITY, f64::min);
            let hi = t.sources.iter().map(|s| s.feature[i]).fold(f64::NEG_INFINITY, f64::max);
            ok &= out[i] >= lo - 1e-12 && out[i] <= hi + 1e-12;
        }
    }

    // source permutation invariance
    let mut rng = Rng::from_seed(9103);
    for _ in 0..1000 {
        let t = random_trial(&mut rng, D_F);
        let base = aggregate(&t.target, &t.sources, &t.params, DEFAULT_DENOM_EPS).unwrap();
        let mut shuffled = t.sources.clone();
        rng.shuffle(&mut shuffled);
        let permuted = aggregate(&t.target, &shuffled, &t.params, DEFAULT_DENOM_EPS).unwrap();
        for (a, b) in base.iter().zip(&permuted) {
            ok &= (a - b).abs() < 1e-12;
        }
    }

    // affinity shift invariance
    let mut rng = Rng::from_seed(9104);
    for _ in 0..1000 {
        let t = random_trial(&mut rng, D_F);
        let shift = rng.uniform(-30.0, 30.0);
        let out = aggregate(&t.target, &t.sources, &t.params, DEFAULT_DENOM_EPS).unwrap();
        let weights = weights_of(&t, &t.params, shift);
        let denom: f64 = weights.iter().sum();
        let shifted: Vec<f64> = if denom <= DEFAULT_DENOM_EPS {
            vec![0.0; D_F]
        } else {
            let mut acc = vec![0.0; D_F];
            for (s, w) in t.sources.iter().zip(&weights) {
                if *w == 0.0 {
                    continue;
                }
                let transformed = t.params.w3.matvec(&s.feature).unwrap();
                for (a, v) in acc.iter_mut().zip(&transformed) {
                    *a += w / denom * v;
                }
            }
            acc
        };
        for (a, b) in out.iter().zip(&shifted) {
            ok &= (a - b).abs() < 1e-12;
        }
    }

    // geometry translation and scale invariance
    let mut rng = Rng::from_seed(9105);
    for _ in 0..1000 {
        let boxes = random_cands(&mut rng, View::View1, 2, 1);
        let (a, b) = (boxes[0].geometry, boxes[1].geometry);
        let base = geometric_normalize(&a, &b, DEFAULT_GEOMETRY_EPS).unwrap();
        let (dx, dy) = (rng.uniform(-500.0, 500.0), rng.uniform(-500.0, 500.0));
        let scale = rng.uniform(0.01, 100.0);
        let at = RoiGeometry::new(a.x + dx, a.y + dy, a.w, a.h).unwrap();
        let bt = RoiGeometry::new(b.x + dx, b.y + dy, b.w, b.h).unwrap();
        let translated = geometric_normalize(&at, &bt, DEFAULT_GEOMETRY_EPS).unwrap();
        let asq = RoiGeometry::new(a.x * scale, a.y * scale, a.w * scale, a.h * scale).unwrap();
        let bsq = RoiGeometry::new(b.x * scale, b.y * scale, b.w * scale, b.h * scale).unwrap();
        let scaled = geometric_normalize(&asq, &bsq, DEFAULT_GEOMETRY_EPS).unwrap();
        for ((p, q), r) in base.iter().zip(&translated).zip(&scaled) {
            ok &= (p - q).abs() < 1e-9 && (p - r).abs() < 1e-9;
        }
    }

    // N=0 stack identity
    let mut rng = Rng::from_seed(9106);
    for _ in 0..1000 {
        let n1 = 1 + rng.index(5);
        let n2 = 1 + rng.index(5);
        let view1 = random_cands(&mut rng, View::View1, n1, D_F);
        let view2 = random_cands(&mut rng, View::View2, n2, D_F);
        let stack = RelationStackParams::init(&mut rng, 0, D_F, 3, 8).unwrap();
        let (o1, o2) = relation_stack_forward(&view1, &view2, &stack).unwrap();
        ok &= view1.iter().zip(&o1).all(|(c, o)| &c.feature == o);
        ok &= view2.iter().zip(&o2).all(|(c, o)| &c.feature == o);
    }

    verdict("3 (six algebraic invariants, 1000 trials each)", ok);
}

#[test]
fn criterion_4_ablation_trend() {
    let started = Instant::now();
    let train_cfg = load_dataset_config("benchmark_train.json");
    let test_cfg = load_dataset_config("benchmark_test.json");
    let train_set = generate_dataset(&train_cfg.generator, train_cfg.cases).unwrap();
    let test_set = generate_dataset(&test_cfg.generator, test_cfg.cases).unwrap();

    let summary = cli::ablate(
        &train_set,
        &test_set,
        &TrainConfig::default(),
        &[0, 3],
        &[0, 1, 2, 3, 4],
    )
    .unwrap();
    let row = |n: usize| summary.means.iter().find(|m| m.n_blocks == n).unwrap();
    let (f1_0, fpi_0) = (row(0).f1, row(0).fpi);
    let (f1_3, fpi_3) = (row(3).f1, row(3).fpi);
    let elapsed = started.elapsed().as_secs_f64();
    println!(
        "  N=0: f1 {f1_0:.4} fpi {fpi_0:.4}; N=3: f1 {f1_3:.4} fpi {fpi_3:.4}; {elapsed:.0} s"
    );
    let ok = f1_3 >= f1_0 + 0.03 && fpi_3 <= fpi_0 && elapsed < 1800.0;
    verdict(
        "4 (benchmark trend: F1(N=3) >= F1(N=0)+0.03 and FPI(N=3) <= FPI(N=0), < 30 min)",
        ok,
    );
}

#[test]
fn criterion_5_overfit_sanity() {
    let gen = GeneratorConfig {
        feature_noise_sigma: 0.0,
        geometry_noise_sigma: 0.0,
        distractor_confusability: 0.0,
        seed: 42,
        ..GeneratorConfig::default()
    };
    let data = generate_dataset(&gen, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let ckpt = train(&data, &cfg).unwrap();
    let final_loss = *ckpt.train_loss_history.last().unwrap();
    let report = evaluate(&ckpt.model, &data, &EvalConfig::default()).unwrap();
    println!("  final loss {final_loss:.4}, f1 {:.4}", report.f1);
    verdict(
        "5 (overfit one noiseless case: loss < 0.05 and F1 = 1.0)",
        final_loss < 0.05 && report.f1 == 1.0,
    );
}

#[test]
fn criterion_6_metrics_unit_fidelity() {
    let g = |x: f64, y: f64| RoiGeometry::new(x, y, 4.0, 4.0).unwrap();
    let d = |x: f64, y: f64, score: f64| Detection {
        geometry: g(x, y),
        score,
        view: View::View1,
    };

    // image 1: two ground truths, both hit
    let gts1 = vec![g(10.0, 10.0), g(30.0, 30.0)];
    let dets1 = vec![d(10.0, 10.0, 0.9), d(30.0, 30.0, 0.8)];
    // image 2: two ground truths, one hit, one missed, plus a false positive
    let gts2 = vec![g(10.0, 10.0), g(50.0, 50.0)];
    let dets2 = vec![d(10.0, 10.0, 0.95), d(80.0, 80.0, 0.7)];

    let mut labeled = label_detections(&dets1, &gts1, 0.5);
    labeled.extend(label_detections(&dets2, &gts2, 0.5));
    let report = report_from_labeled(&mut labeled, 4, 2, 0.5);

    let counts_ok = report.precision == 0.75
        && report.recall == 0.75
        && report.f1 == 0.75
        && report.fpi == 0.5;

    let a = RoiGeometry::new(1.0, 1.0, 2.0, 2.0).unwrap();
    let b = RoiGeometry::new(2.0, 1.0, 2.0, 2.0).unwrap();
    let iou_ok = (iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12;

    verdict(
        "6 (micro-case precision/recall/F1 = 0.75, FPI = 0.5 exactly; offset-box IoU = 1/3)",
        counts_ok && iou_ok,
    );
}

#[test]
fn criterion_7_pipeline_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let gen_cfg = dir.path().join("gen.json");
    std::fs::write(&gen_cfg, "{\"cases\": 10, \"seed\": 99}").unwrap();
    let train_cfg = Path::new(&config_path("train_default.json")).to_path_buf();

    let run = |tag: &str| {
        let data = dir.path().join(format!("{tag}.jsonl"));
        let ckpt = dir.path().join(format!("{tag}.ckpt.json"));
        let metrics = dir.path().join(format!("{tag}.metrics.json"));
        cli::cmd_generate(&gen_cfg, &data, None).unwrap();
        cli::cmd_train(&data, &train_cfg, &ckpt).unwrap();
        cli::cmd_eval(&ckpt, &data, &EvalConfig::default(), Some(&metrics)).unwrap();
        (
            std::fs::read(&data).unwrap(),
            std::fs::read(&ckpt).unwrap(),
            std::fs::read(&metrics).unwrap(),
        )
    };
    let first = run("a");
    let second = run("b");
    verdict(
        "7 (generate/train/eval byte-identical across two runs)",
        first == second,
    );
}
