use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use latentaug_core::autodiff::{Tape, Var};
use latentaug_core::classifier::{images_to_input, Architecture};
use latentaug_core::data::manifest::{
    check_no_synthetic_leak, image_rel_path, ManifestRow, Provenance, Split,
};
use latentaug_core::data::{
    assign_validation, holdout_count, stratified_split, ImageBuffer, ImageGeometry,
};
use latentaug_core::eval::report::BASELINE_CONFIG as BASELINE_NAME;
use latentaug_core::eval::{build_confusion, metrics_from_confusion, ConfusionMatrix};
use latentaug_core::nn::{Conv2dLayer, DenseLayer};
use latentaug_core::pipeline::{self, ExperimentSummary, RunConfig};
use latentaug_core::vae::kl_divergence;
use latentaug_core::{
    grad_check_many, interpolate, ClassifierConfig, ClassifierModel, DatasetManifest,
    ElementwiseOp, ReduceOp, Result, RngStream, Tensor, ToySpec, VaeModel,
};

const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-5;
const GRAD_CONFIGS: usize = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const KL_SAMPLES: usize = 100_000;
const KL_REL_TOL: f64 = 0.02;
const METRIC_TOL: f64 = 1e-12;
const CLASS1_GAIN_MIN: f64 = 5.0;
const OVERALL_DROP_MAX: f64 = 1.0;
const PIPELINE_BUDGET: Duration = Duration::from_secs(20 * 60);
const VAE_RATIO_MAX: f64 = 0.5;
const SEEDS: [u64; 3] = [42, 43, 44];

fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr();
    let _ = writeln!(
        err,
        "[acceptance] criterion {criterion} {verdict} {name}: {detail}"
    );
    assert!(pass, "criterion {criterion} ({name}) failed: {detail}");
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut RngStream) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.uniform_range(lo, hi)).collect(),
    )
    .unwrap()
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, out: Var, rng_seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let mut rng = RngStream::new(rng_seed, "weights");
    let w = tape.constant(random_tensor(&shape, -1.0, 1.0, &mut rng));
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

/// Central-difference check of a model's parameter gradients.
fn model_grad_check(
    params: Vec<Tensor>,
    loss: impl Fn(&[Tensor]) -> Result<f64>,
    analytic: &[Tensor],
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = params;
    for t in 0..probe.len() {
        for i in 0..probe[t].len() {
            let orig = probe[t].data()[i];
            probe[t].data_mut()[i] = orig + GRAD_STEP;
            let up = loss(&probe).unwrap();
            probe[t].data_mut()[i] = orig - GRAD_STEP;
            let down = loss(&probe).unwrap();
            probe[t].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * GRAD_STEP);
            let a = analytic[t].data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    worst
}

fn set_params(dst: Vec<&mut Tensor>, src: &[Tensor]) {
    for (d, s) in dst.into_iter().zip(src) {
        d.data_mut().copy_from_slice(s.data());
    }
}

fn op_checks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = RngStream::new(seed, "ops");
    let (r, c) = (1 + rng.below(4), 1 + rng.below(5));
    let a = random_tensor(&[r, c], -2.0, 2.0, &mut rng);
    let b = random_tensor(&[r, c], -2.0, 2.0, &mut rng);
    let pos = random_tensor(&[r, c], 0.2, 3.0, &mut rng);
    let k = 1 + rng.below(4);
    let m = random_tensor(&[c, k], -1.0, 1.0, &mut rng);
    let bias = random_tensor(&[k], -1.0, 1.0, &mut rng);
    let w = random_tensor(&[k, c], -1.0, 1.0, &mut rng);
    let s = rng.uniform_range(-3.0, 3.0);
    let labels: Vec<usize> = (0..r).map(|_| rng.below(k)).collect();
    let probs = random_tensor(&[r, c], 0.05, 0.95, &mut rng);
    let target = random_tensor(&[r, c], 0.0, 1.0, &mut rng);
    let (ci, co, hw) = (1 + rng.below(2), 1 + rng.below(3), 3 + rng.below(3));
    let x4 = random_tensor(&[2, ci, hw, hw], -1.0, 1.0, &mut rng);
    let k4 = random_tensor(&[co, ci, 3, 3], -1.0, 1.0, &mut rng);
    let b4 = random_tensor(&[co], -1.0, 1.0, &mut rng);
    let stride = 1 + rng.below(2);

    let unary = |op: ElementwiseOp, x: &Tensor| {
        grad_check_many(
            |t, v| {
                let o = t.elementwise(op, v[0], None)?;
                weighted_sum(t, o, seed)
            },
            std::slice::from_ref(x),
            GRAD_STEP,
        )
        .unwrap()
    };
    let binary = |op: ElementwiseOp| {
        grad_check_many(
            |t, v| {
                let o = t.elementwise(op, v[0], Some(v[1]))?;
                weighted_sum(t, o, seed)
            },
            &[a.clone(), b.clone()],
            GRAD_STEP,
        )
        .unwrap()
    };
    let check = |f: &dyn Fn(&mut Tape, &[Var]) -> Result<Var>, xs: &[Tensor]| {
        grad_check_many(f, xs, GRAD_STEP).unwrap()
    };

    vec![
        ("add", binary(ElementwiseOp::Add)),
        ("sub", binary(ElementwiseOp::Sub)),
        ("mul", binary(ElementwiseOp::Mul)),
        ("neg", unary(ElementwiseOp::Neg, &a)),
        ("exp", unary(ElementwiseOp::Exp, &a)),
        ("log", unary(ElementwiseOp::Log, &pos)),
        ("sigmoid", unary(ElementwiseOp::Sigmoid, &a)),
        ("relu", unary(ElementwiseOp::Relu, &a)),
        ("square", unary(ElementwiseOp::Square, &a)),
        (
            "scale",
            check(
                &|t, v| {
                    let o = t.scale(v[0], s)?;
                    weighted_sum(t, o, seed)
                },
                std::slice::from_ref(&a),
            ),
        ),
        (
            "add_scalar",
            check(
                &|t, v| {
                    let o = t.add_scalar(v[0], s)?;
                    weighted_sum(t, o, seed)
                },
                std::slice::from_ref(&a),
            ),
        ),
        (
            "matmul",
            check(
                &|t, v| {
                    let o = t.matmul(v[0], v[1])?;
                    weighted_sum(t, o, seed)
                },
                &[a.clone(), m.clone()],
            ),
        ),
        (
            "linear",
            check(
                &|t, v| {
                    let o = t.linear(v[0], v[1], v[2])?;
                    weighted_sum(t, o, seed)
                },
                &[a.clone(), w.clone(), bias.clone()],
            ),
        ),
        (
            "sum",
            check(
                &|t, v| {
                    let o = t.reduce(ReduceOp::Sum, v[0], Some(1))?;
                    weighted_sum(t, o, seed)
                },
                std::slice::from_ref(&a),
            ),
        ),
        (
            "mean",
            check(
                &|t, v| {
                    let o = t.reduce(ReduceOp::Mean, v[0], Some(0))?;
                    let o = weighted_sum(t, o, seed)?;
                    let all = t.mean(v[0])?;
                    t.add(o, all)
                },
                std::slice::from_ref(&a),
            ),
        ),
        (
            "reshape",
            check(
                &|t, v| {
                    let o = t.reshape(v[0], &[c, r])?;
                    weighted_sum(t, o, seed)
                },
                std::slice::from_ref(&a),
            ),
        ),
        (
            "conv2d",
            check(
                &|t, v| {
                    let o = t.conv2d(v[0], v[1], v[2], stride)?;
                    weighted_sum(t, o, seed)
                },
                &[x4.clone(), k4.clone(), b4.clone()],
            ),
        ),
        (
            "softmax_cross_entropy",
            check(
                &|t, v| {
                    let o = t.matmul(v[0], v[1])?;
                    t.softmax_cross_entropy(o, &labels)
                },
                &[a.clone(), m.clone()],
            ),
        ),
        (
            "binary_cross_entropy",
            check(
                &|t, v| t.binary_cross_entropy(v[0], v[1]),
                &[target.clone(), probs.clone()],
            ),
        ),
    ]
}

fn layer_checks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = RngStream::new(seed, "layers");
    let (n, i, o) = (1 + rng.below(3), 1 + rng.below(6), 1 + rng.below(5));
    let dense = DenseLayer::init(i, o, &mut rng).unwrap();
    let x = random_tensor(&[n, i], -1.0, 1.0, &mut rng);
    let dense_err = grad_check_many(
        |t, v| {
            let b = latentaug_core::nn::BoundDense {
                weights: v[1],
                bias: v[2],
            };
            let out = dense.forward_tape(t, b, v[0])?;
            weighted_sum(t, out, seed)
        },
        &[x, dense.weights.clone(), dense.bias.clone()],
        GRAD_STEP,
    )
    .unwrap();

    let (ci, co, hw, stride) = (
        1 + rng.below(2),
        1 + rng.below(3),
        4 + rng.below(3),
        1 + rng.below(2),
    );
    let conv = Conv2dLayer::init(ci, co, 3, stride, &mut rng).unwrap();
    let x = random_tensor(&[2, ci, hw, hw], -1.0, 1.0, &mut rng);
    let conv_err = grad_check_many(
        |t, v| {
            let b = latentaug_core::nn::BoundConv {
                kernels: v[1],
                bias: v[2],
            };
            let out = conv.forward_tape(t, b, v[0])?;
            weighted_sum(t, out, seed)
        },
        &[x, conv.kernels.clone(), conv.bias.clone()],
        GRAD_STEP,
    )
    .unwrap();
    vec![("dense", dense_err), ("conv", conv_err)]
}

fn elbo_check(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, "elbo");
    let side = 3 + rng.below(2);
    let geometry = ImageGeometry::gray(side, side);
    let hidden = vec![2 + rng.below(5)];
    let latent = 1 + rng.below(3);
    let model = VaeModel::new(0, geometry, latent, &hidden, &mut rng).unwrap();
    let batch = 1 + rng.below(3);
    let x = random_tensor(&[batch, side * side], 0.0, 1.0, &mut rng);
    let eps = random_tensor(&[batch, latent], -1.5, 1.5, &mut rng);

    let loss_of = |m: &VaeModel| -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let ev = tape.constant(eps.clone());
        let (total, _, _) = m.loss_tape(&mut tape, &b, xv, ev)?;
        let grads = tape.backward(total)?;
        let g = b.vars().iter().map(|v| grads.wrt(*v).clone()).collect();
        Ok((tape.value(total).item()?, g))
    };
    let (_, analytic) = loss_of(&model).unwrap();
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    model_grad_check(
        params,
        |p| {
            let mut m = model.clone();
            set_params(m.params_mut(), p);
            Ok(loss_of(&m)?.0)
        },
        &analytic,
    )
}

fn classifier_check(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, "clf");
    let side = 5 + rng.below(3);
    let arch = if rng.below(2) == 0 {
        Architecture::SmallCnn
    } else {
        Architecture::Mlp
    };
    let config = ClassifierConfig {
        arch,
        conv_channels: vec![1 + rng.below(2), 1 + rng.below(3)],
        hidden: vec![2 + rng.below(4)],
        ..ClassifierConfig::default()
    };
    let classes = 2 + rng.below(2);
    let model =
        ClassifierModel::new(ImageGeometry::gray(side, side), classes, &config, &mut rng).unwrap();
    let n = 2 + rng.below(3);
    let images: Vec<ImageBuffer> = (0..n)
        .map(|_| {
            let px = (0..side * side).map(|_| rng.uniform()).collect();
            ImageBuffer::new(side, side, 1, px).unwrap()
        })
        .collect();
    let x = images_to_input(&images.iter().collect::<Vec<_>>()).unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();

    let loss_of = |m: &ClassifierModel| -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (vars, logits) = m.logits_tape(&mut tape, xv)?;
        let loss = tape.softmax_cross_entropy(logits, &labels)?;
        let grads = tape.backward(loss)?;
        let g = vars.iter().map(|v| grads.wrt(*v).clone()).collect();
        Ok((tape.value(loss).item()?, g))
    };
    let (_, analytic) = loss_of(&model).unwrap();
    let params: Vec<Tensor> = model.params().into_iter().cloned().collect();
    model_grad_check(
        params,
        |p| {
            let mut m = model.clone();
            set_params(m.params_mut(), p);
            Ok(loss_of(&m)?.0)
        },
        &analytic,
    )
}

#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, err: f64| match worst.iter_mut().find(|(n, _)| n == name) {
        Some(entry) => entry.1 = entry.1.max(err),
        None => worst.push((name.to_string(), err)),
    };
    for seed in 0..GRAD_CONFIGS as u64 {
        for (name, err) in op_checks(seed).into_iter().chain(layer_checks(seed)) {
            record(name, err);
        }
        record("elbo", elbo_check(seed));
        record("classifier_cross_entropy", classifier_check(seed));
    }
    let elapsed = start.elapsed();
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let failing: Vec<String> = worst
        .iter()
        .filter(|(_, e)| e.is_nan() || *e > GRAD_TOL)
        .map(|(n, e)| format!("{n}={e:.2e}"))
        .collect();
    let pass = failing.is_empty() && elapsed < GRAD_BUDGET;
    report(
        1,
        "gradient correctness",
        pass,
        &format!(
            "{} checks x {GRAD_CONFIGS} configs, max rel err {max:.2e} (tol {GRAD_TOL:.0e}), {:.1}s; failing {failing:?}",
            worst.len(),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_kl_closed_form_matches_monte_carlo() {
    let mut rng = RngStream::new(2, "kl");
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let d = 1 + rng.below(4);
        let mu: Vec<f64> = (0..d).map(|_| rng.uniform_range(-2.0, 2.0)).collect();
        let logvar: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1.5, 1.5)).collect();
        let closed = kl_divergence(&mu, &logvar).unwrap();
        let mut acc = 0.0;
        for _ in 0..KL_SAMPLES {
            for (m, lv) in mu.iter().zip(&logvar) {
                let e = rng.normal();
                let z = m + (0.5 * lv).exp() * e;
                // ln q(z) − ln p(z); the 2π terms cancel
                acc += 0.5 * (z * z - e * e - lv);
            }
        }
        let mc = acc / KL_SAMPLES as f64;
        worst = worst.max((mc - closed).abs() / closed);
    }
    let zero = kl_divergence(&[0.0; 4], &[0.0; 4]).unwrap();
    report(
        2,
        "KL oracle",
        worst <= KL_REL_TOL && zero == 0.0,
        &format!("max rel err {worst:.4} (tol {KL_REL_TOL}), KL(0,0) = {zero}"),
    );
}

#[test]
fn criterion_3_interpolation_exactness() {
    let mut rng = RngStream::new(3, "interp");
    let mut ok = true;
    for _ in 0..1000 {
        let d = 1 + rng.below(16);
        let z1: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1e3, 1e3)).collect();
        let z2: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1e3, 1e3)).collect();
        let alpha = rng.uniform();
        ok &= interpolate(&z1, &z2, 1.0).unwrap() == z1;
        ok &= interpolate(&z1, &z2, 0.0).unwrap() == z2;
        let fwd = interpolate(&z1, &z2, alpha).unwrap();
        let rev = interpolate(&z2, &z1, 1.0 - alpha).unwrap();
        ok &= fwd
            .iter()
            .zip(&rev)
            .all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let worked = interpolate(&[4.0, 0.0], &[0.0, 4.0], 0.25).unwrap();
    report(
        3,
        "interpolation exactness",
        ok && worked == [1.0, 3.0],
        &format!("1000 random endpoint/symmetry cases exact: {ok}; worked example {worked:?}"),
    );
}

#[test]
fn criterion_4_metrics_oracle() {
    let mut rng = RngStream::new(4, "metrics");
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let c = 2 + rng.below(4);
        let n = 1 + rng.below(60);
        let truth: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.below(c)).collect();
        let m = metrics_from_confusion(&build_confusion(&truth, &pred, c).unwrap()).unwrap();
        let hits = truth.iter().zip(&pred).filter(|(t, p)| t == p).count();
        let mut diffs = vec![(m.overall_acc - hits as f64 / n as f64).abs()];
        let (mut ps, mut rs, mut fs) = (0.0, 0.0, 0.0);
        for k in 0..c {
            let tp = (0..n).filter(|&i| truth[i] == k && pred[i] == k).count() as f64;
            let predicted = pred.iter().filter(|&&p| p == k).count() as f64;
            let actual = truth.iter().filter(|&&t| t == k).count() as f64;
            let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let r = if actual > 0.0 { tp / actual } else { 0.0 };
            let f = if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            };
            diffs.extend([
                (m.precision[k] - p).abs(),
                (m.class_acc[k] - r).abs(),
                (m.f1[k] - f).abs(),
            ]);
            (ps, rs, fs) = (ps + p, rs + r, fs + f);
        }
        let cf = c as f64;
        diffs.extend([
            (m.macro_precision - ps / cf).abs(),
            (m.macro_recall - rs / cf).abs(),
            (m.macro_f1 - fs / cf).abs(),
        ]);
        worst = diffs.into_iter().fold(worst, f64::max);
    }
    let cm =
        ConfusionMatrix::from_counts(vec![vec![2, 0, 0], vec![1, 1, 0], vec![0, 0, 3]]).unwrap();
    let hand = metrics_from_confusion(&cm).unwrap();
    let hand_ok = hand.overall_acc == 6.0 / 7.0 && hand.class_acc == [1.0, 0.5, 1.0];
    report(
        4,
        "metrics oracle",
        worst <= METRIC_TOL && hand_ok,
        &format!(
            "1000 random cases max diff {worst:.1e} (tol {METRIC_TOL:.0e}); hand case acc {:.6} recall {:?}",
            hand.overall_acc, hand.class_acc
        ),
    );
}

fn manifest(counts: &[usize], synthetic: &[usize]) -> DatasetManifest {
    let mut rows = Vec::new();
    for (label, (&n, &s)) in counts.iter().zip(synthetic).enumerate() {
        for i in 0..n + s {
            let real = i < n;
            let id = if real {
                format!("c{label}_{i:04}")
            } else {
                format!("syn_c{label}_{i:04}")
            };
            rows.push(ManifestRow {
                path: image_rel_path(label, &id),
                image_id: id,
                label,
                split: if real {
                    Split::Unassigned
                } else {
                    Split::Train
                },
                provenance: if real {
                    Provenance::Real
                } else {
                    Provenance::Synthetic
                },
            });
        }
    }
    DatasetManifest::new(rows).unwrap()
}

#[test]
fn criterion_5_split_fidelity() {
    let mut rng = RngStream::new(5, "split");
    let m = stratified_split(&manifest(&[65, 91, 165], &[0, 0, 0]), 0.2, &mut rng).unwrap();
    let test = m.class_counts(|r| r.split == Split::Test);
    let mut leaks = 0;
    for _ in 0..100 {
        let c = 2 + rng.below(3);
        let counts: Vec<usize> = (0..c).map(|_| 2 + rng.below(40)).collect();
        let synth: Vec<usize> = (0..c).map(|_| rng.below(20)).collect();
        let tf = rng.uniform_range(0.05, 0.5);
        let vf = rng.uniform_range(0.05, 0.5);
        let base = manifest(&counts, &synth);
        let split = stratified_split(&base, tf, &mut rng).unwrap();
        let held = split.class_counts(|r| r.split == Split::Test);
        let expected: Vec<usize> = counts.iter().map(|&n| holdout_count(n, tf)).collect();
        if held != expected || check_no_synthetic_leak(&split).is_err() {
            leaks += 1;
            continue;
        }
        let train_real: Vec<usize> =
            split.class_counts(|r| r.split == Split::Train && r.provenance == Provenance::Real);
        if train_real.iter().all(|&n| n >= 2) {
            let with_val = assign_validation(&split, vf, &mut rng).unwrap();
            if check_no_synthetic_leak(&with_val).is_err()
                || with_val
                    .rows
                    .iter()
                    .any(|r| r.provenance == Provenance::Synthetic && r.split != Split::Train)
            {
                leaks += 1;
            }
        }
    }
    report(
        5,
        "split fidelity",
        test == [13, 18, 33] && leaks == 0,
        &format!("test counts {test:?} (expected [13, 18, 33]); 100 random manifests, {leaks} violations"),
    );
}

struct SeedRun {
    seed: u64,
    summary: ExperimentSummary,
    vae_epochs: usize,
    elapsed: Duration,
}

fn run_seed(dir: &Path, seed: u64) -> SeedRun {
    let data = dir.join("data");
    let out = dir.join("out");
    pipeline::gen_toy(
        &ToySpec {
            seed,
            ..ToySpec::default()
        },
        &data,
        false,
    )
    .unwrap();
    let mut cli = serde_json::Map::new();
    cli.insert("seed".into(), seed.into());
    cli.insert("data_root".into(), data.display().to_string().into());
    cli.insert("out_dir".into(), out.display().to_string().into());
    let cfg = RunConfig::resolve(None, &cli).unwrap();
    let start = Instant::now();
    let summary = pipeline::run_experiment(&cfg).unwrap();
    SeedRun {
        seed,
        summary,
        vae_epochs: cfg.vae_epochs,
        elapsed: start.elapsed(),
    }
}

fn desk_runs() -> &'static Vec<SeedRun> {
    static RUNS: OnceLock<Vec<SeedRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        SEEDS
            .iter()
            .map(|&s| run_seed(&tmp.path().join(s.to_string()), s))
            .collect()
    })
}

fn row<'a>(run: &'a SeedRun, name: &str) -> &'a latentaug_core::eval::MetricsRow {
    run.summary.rows.iter().find(|r| r.config == name).unwrap()
}

#[test]
fn criterion_6_desk_scale_augmentation_gain() {
    let runs = desk_runs();
    let n = runs.len() as f64;
    let mean = |name: &str, f: &dyn Fn(&latentaug_core::eval::MetricsRow) -> f64| {
        runs.iter().map(|r| f(row(r, name))).sum::<f64>() / n
    };
    let class1_gain =
        mean("real_gen_aug", &|r| r.class_acc[1]) - mean(BASELINE_NAME, &|r| r.class_acc[1]);
    let overall_change =
        mean("real_gen_aug", &|r| r.overall_acc) - mean(BASELINE_NAME, &|r| r.overall_acc);
    let slowest = runs.iter().map(|r| r.elapsed).max().unwrap();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: class1 {:.2} -> {:.2}, overall {:.2} -> {:.2}",
                r.seed,
                row(r, BASELINE_NAME).class_acc[1],
                row(r, "real_gen_aug").class_acc[1],
                row(r, BASELINE_NAME).overall_acc,
                row(r, "real_gen_aug").overall_acc
            )
        })
        .collect();
    report(
        6,
        "desk-scale augmentation gain",
        class1_gain >= CLASS1_GAIN_MIN && overall_change >= -OVERALL_DROP_MAX && slowest < PIPELINE_BUDGET,
        &format!(
            "class-1 gain {class1_gain:+.2} pts (min +{CLASS1_GAIN_MIN}), overall change {overall_change:+.2} pts (min -{OVERALL_DROP_MAX}), slowest pipeline {:.0}s; {}",
            slowest.as_secs_f64(),
            per_seed.join("; ")
        ),
    );
}

#[test]
fn criterion_7_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        pipeline::gen_toy(
            &ToySpec {
                seed: 7,
                ..ToySpec::default()
            },
            &dir.join("data"),
            false,
        )
        .unwrap();
        let cli = serde_json::json!({
            "seed": 7,
            "data_root": dir.join("data").display().to_string(),
            "out_dir": dir.join("out").display().to_string(),
            "vae_epochs": 5,
            "clf_epochs": 5,
            "synthetic_per_class": 40,
        });
        let cfg = RunConfig::resolve(None, cli.as_object().unwrap()).unwrap();
        pipeline::run_experiment(&cfg).unwrap();
        let metrics = std::fs::read(dir.join("out").join("metrics.csv")).unwrap();
        let vae = pipeline::tree_digests(&cfg.vae_dir()).unwrap();
        let clf = pipeline::tree_digests(&cfg.clf_dir()).unwrap();
        (metrics, vae, clf)
    };
    let (m1, v1, c1) = run("a");
    let (m2, v2, c2) = run("b");
    let ckpts = v1.keys().filter(|k| k.ends_with(".ckpt")).count()
        + c1.keys().filter(|k| k.ends_with(".ckpt")).count();
    report(
        7,
        "determinism",
        m1 == m2 && v1 == v2 && c1 == c2 && ckpts == 7,
        &format!(
            "metrics.csv identical: {}; {ckpts} checkpoints, VAE files identical: {}, classifier files identical: {}",
            m1 == m2,
            v1 == v2,
            c1 == c2
        ),
    );
}

#[test]
fn criterion_8_pca_density() {
    let runs = desk_runs();
    let mut pass = true;
    let mut detail = Vec::new();
    for r in runs {
        for p in &r.summary.pca {
            pass &= p.synthetic_points > 0 && p.combined_nn_distance < p.real_nn_distance;
            detail.push(format!(
                "seed {} class {}: {:.3} -> {:.3}",
                r.seed, p.class, p.real_nn_distance, p.combined_nn_distance
            ));
        }
        pass &= r.summary.pca.len() == 3;
    }
    report(
        8,
        "PCA density",
        pass,
        &format!(
            "mean NN distance real -> real+synthetic; {}",
            detail.join("; ")
        ),
    );
}

#[test]
fn criterion_9_vae_training_sanity() {
    let runs = desk_runs();
    let mut pass = true;
    let mut worst: f64 = 0.0;
    for r in runs {
        pass &= r.summary.vae_histories.len() == 3;
        for h in &r.summary.vae_histories {
            pass &= h.len() == r.vae_epochs;
            let ratio = h[h.len() - 1].total / h[0].total;
            worst = worst.max(ratio);
        }
    }
    let lengths_ok = pass;
    pass &= worst <= VAE_RATIO_MAX;
    report(
        9,
        "VAE training sanity",
        pass,
        &format!(
            "worst final/first loss ratio {worst:.3} (max {VAE_RATIO_MAX}) over {} class VAEs; history lengths match epochs: {lengths_ok}",
            runs.len() * 3
        ),
    );
}
