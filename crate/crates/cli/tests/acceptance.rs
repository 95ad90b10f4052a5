//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! The experiment output is kept under the cargo target tmp dir so failures can
//! be inspected afterwards.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use stagewise::dataset::{load_dataset, read_features, read_probs, write_features, write_probs};
use stagewise::disturb::{audit_cross_validate, read_disturbed, Provenance};
use stagewise::eval::{accuracy, phase_jaccard, phase_recall};
use stagewise::losses::{cross_entropy_dp, predictor_loss, predictor_loss_grad};
use stagewise::models::bundle::BUNDLE_WEIGHTS_FILE;
use stagewise::models::{
    streaming_infer, ModelBundle, MultiStageModel, PredictorConfig, PredictorModel, RefinerConfig, RefinerModel,
    RefinerVariant,
};
use stagewise::nncore::ops::Padding;
use stagewise::nncore::{
    conv1d_backward, conv1d_forward, finite_difference_check, gru_sequence_backward, gru_sequence_forward,
    linear_backward, linear_forward, read_checkpoint, softmax_rows, softmax_rows_backward, write_checkpoint,
    GradCheckReport, GruGrads, GruWeights, ParamSet, RngStream, Tensor,
};
use stagewise::{FeatureSeq, ProbSeq};
use stagewise_cli::experiment::{Summary, SUMMARY_FILE};

const SEEDS: [u64; 3] = [1, 2, 3];
const STACKS: [usize; 4] = [1, 2, 3, 4];
/// Single refinement model for the headline and ablation comparisons; the
/// stack sweep covers the rest.
const HEADLINE_STACKS: usize = 1;
const BUDGET_SECS: f64 = 30.0 * 60.0;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// Criterion 1: gradients.

const GRAD_SEEDS: u64 = 20;

fn random(shape: &[usize], scale: f64, rng: &mut RngStream) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.normal() * scale);
    t
}

fn weighted_sum(out: &Tensor, weights: &Tensor) -> f64 {
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

fn random_labels(t: usize, c: usize, rng: &mut RngStream) -> Vec<usize> {
    (0..t).map(|_| rng.below(c)).collect()
}

fn grad_linear(seed: u64) -> GradCheckReport {
    let mut rng = RngStream::derive(seed, 101);
    let (t, din, dout) = (1 + rng.below(5), 1 + rng.below(4), 1 + rng.below(4));
    let mut ps = ParamSet::new();
    let x = ps.add("x", random(&[t, din], 1.0, &mut rng)).unwrap();
    let w = ps.add("w", random(&[din, dout], 1.0, &mut rng)).unwrap();
    let b = ps.add("b", random(&[dout], 1.0, &mut rng)).unwrap();
    let proj = random(&[t, dout], 1.0, &mut rng);
    let [px, pw, pb] = ps.many_mut([x, w, b]);
    px.grad = linear_backward(&px.value, &pw.value, &proj, &mut pw.grad, &mut pb.grad).unwrap();
    let loss = |p: &ParamSet| weighted_sum(&linear_forward(p.value(x), p.value(w), p.value(b)).unwrap(), &proj);
    finite_difference_check(loss, &ps, 1e-6, 1e-4).unwrap()
}

fn grad_conv(seed: u64, padding: Padding) -> GradCheckReport {
    let mut rng = RngStream::derive(seed, 103);
    let (t, din, dout) = (2 + rng.below(8), 1 + rng.below(3), 1 + rng.below(3));
    let k = if padding == Padding::Symmetric {
        [1, 3][rng.below(2)]
    } else {
        1 + rng.below(3)
    };
    let dilation = 1 + rng.below(3);
    let mut ps = ParamSet::new();
    let x = ps.add("x", random(&[t, din], 1.0, &mut rng)).unwrap();
    let kern = ps.add("kernel", random(&[k, din, dout], 1.0, &mut rng)).unwrap();
    let b = ps.add("b", random(&[dout], 1.0, &mut rng)).unwrap();
    let proj = random(&[t, dout], 1.0, &mut rng);
    let [px, pk, pb] = ps.many_mut([x, kern, b]);
    px.grad = conv1d_backward(
        &px.value,
        &pk.value,
        &proj,
        dilation,
        padding,
        &mut pk.grad,
        &mut pb.grad,
    )
    .unwrap();
    let loss = |p: &ParamSet| {
        weighted_sum(
            &conv1d_forward(p.value(x), p.value(kern), p.value(b), dilation, padding).unwrap(),
            &proj,
        )
    };
    finite_difference_check(loss, &ps, 1e-6, 1e-4).unwrap()
}

fn grad_gru(seed: u64) -> GradCheckReport {
    let mut rng = RngStream::derive(seed, 107);
    let (t, d, h) = (1 + rng.below(6), 1 + rng.below(3), 1 + rng.below(4));
    let mut ps = ParamSet::new();
    let x = ps.add("x", random(&[t, d], 1.0, &mut rng)).unwrap();
    let w = ps.add("w", random(&[d, 3 * h], 0.7, &mut rng)).unwrap();
    let u = ps.add("u", random(&[h, 3 * h], 0.7, &mut rng)).unwrap();
    let b = ps.add("b", random(&[3 * h], 0.5, &mut rng)).unwrap();
    let proj = random(&[t, h], 1.0, &mut rng);
    let [px, pw, pu, pb] = ps.many_mut([x, w, u, b]);
    let (_, cache) = gru_sequence_forward(
        &px.value,
        GruWeights {
            w: &pw.value,
            u: &pu.value,
            b: &pb.value,
        },
    )
    .unwrap();
    let grads = GruGrads {
        w: &mut pw.grad,
        u: &mut pu.grad,
        b: &mut pb.grad,
    };
    let weights = GruWeights {
        w: &pw.value,
        u: &pu.value,
        b: &pb.value,
    };
    px.grad = gru_sequence_backward(&px.value, weights, &cache, &proj, grads).unwrap();
    let loss = |p: &ParamSet| {
        let weights = GruWeights {
            w: p.value(w),
            u: p.value(u),
            b: p.value(b),
        };
        weighted_sum(&gru_sequence_forward(p.value(x), weights).unwrap().0, &proj)
    };
    finite_difference_check(loss, &ps, 1e-6, 1e-4).unwrap()
}

fn grad_softmax_ce(seed: u64) -> GradCheckReport {
    let mut rng = RngStream::derive(seed, 109);
    let (t, c) = (1 + rng.below(6), 2 + rng.below(4));
    let labels = random_labels(t, c, &mut rng);
    let mut ps = ParamSet::new();
    let z = ps.add("logits", random(&[t, c], 2.0, &mut rng)).unwrap();
    let p = softmax_rows(ps.value(z)).unwrap();
    let dp = cross_entropy_dp(&ProbSeq::new(p.clone()).unwrap(), &labels).unwrap();
    *ps.grad_mut(z) = softmax_rows_backward(&p, &dp);
    let loss = |ps: &ParamSet| {
        let p = softmax_rows(ps.value(z)).unwrap();
        labels.iter().enumerate().map(|(r, &l)| -p.row(r)[l].ln()).sum::<f64>() / t as f64
    };
    finite_difference_check(loss, &ps, 1e-6, 1e-4).unwrap()
}

fn grad_predictor_loss(seed: u64) -> GradCheckReport {
    let mut rng = RngStream::derive(seed, 113);
    let (t, c) = (2 + rng.below(6), 2 + rng.below(4));
    let lambda = [0.0, 0.5, 1.0, 3.0][rng.below(4)];
    let labels = random_labels(t, c, &mut rng);
    let mut ps = ParamSet::new();
    let z = ps.add("logits", random(&[t, c], 2.0, &mut rng)).unwrap();
    let p = ProbSeq::new(softmax_rows(ps.value(z)).unwrap()).unwrap();
    *ps.grad_mut(z) = predictor_loss_grad(&p, &labels, lambda).unwrap().1;
    let loss = |ps: &ParamSet| {
        let p = ProbSeq::new(softmax_rows(ps.value(z)).unwrap()).unwrap();
        predictor_loss(&p, &labels, lambda).unwrap().total
    };
    finite_difference_check(loss, &ps, 1e-6, 1e-4).unwrap()
}

fn criterion_gradients() -> Outcome {
    let start = Instant::now();
    let layers: [(&str, &dyn Fn(u64) -> GradCheckReport); 6] = [
        ("linear", &grad_linear),
        ("causal conv", &|s| grad_conv(s, Padding::Causal)),
        ("acausal conv", &|s| grad_conv(s, Padding::Symmetric)),
        ("gru", &grad_gru),
        ("softmax+ce", &grad_softmax_ce),
        ("smoothed loss", &grad_predictor_loss),
    ];
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for (name, f) in layers {
        for seed in 0..GRAD_SEEDS {
            let r = f(seed);
            worst = worst.max(r.max_rel_err());
            if !r.passed() {
                failures.push(format!("{name} seed {seed} ({:.2e})", r.max_rel_err()));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("6 layers x {GRAD_SEEDS} seeds, max rel err {worst:.2e}, {secs:.1}s");
    check(failures.is_empty() && secs < 60.0, format!("{detail} {failures:?}"))
}

// Criterion 2: metrics oracle.

fn oracle(pred: &[usize], gt: &[usize]) -> (f64, f64, f64) {
    let agree = (0..gt.len()).filter(|&t| pred[t] == gt[t]).count();
    let phases: BTreeSet<usize> = gt.iter().copied().collect();
    let set = |s: &[usize], c: usize| (0..s.len()).filter(|&t| s[t] == c).collect::<BTreeSet<_>>();
    let (mut j, mut r) = (0.0, 0.0);
    for &c in &phases {
        let (p, g) = (set(pred, c), set(gt, c));
        let inter = p.intersection(&g).count() as f64;
        j += inter / p.union(&g).count() as f64;
        r += inter / g.len() as f64;
    }
    let n = phases.len() as f64;
    (agree as f64 / gt.len() as f64, j / n, r / n)
}

fn criterion_metrics() -> Outcome {
    let mut rng = RngStream::new(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (t, c) = (1 + rng.below(50), 1 + rng.below(4));
        let pred = random_labels(t, c, &mut rng);
        let gt = random_labels(t, c, &mut rng);
        let (a, j, r) = oracle(&pred, &gt);
        worst = worst
            .max((accuracy(&pred, &gt).unwrap() - a).abs())
            .max((phase_jaccard(&pred, &gt).unwrap().1 - j).abs())
            .max((phase_recall(&pred, &gt).unwrap().1 - r).abs());
    }
    let (pred, gt) = ([0, 0, 1, 1], [0, 1, 1, 1]);
    let hand = [
        accuracy(&pred, &gt).unwrap() - 0.75,
        phase_jaccard(&pred, &gt).unwrap().1 - 7.0 / 12.0,
        phase_recall(&pred, &gt).unwrap().1 - 5.0 / 6.0,
    ];
    let hand_ok = hand.iter().all(|d| d.abs() <= 1e-12);
    check(
        worst <= 1e-12 && hand_ok,
        format!(
            "1000 pairs max diff {worst:.1e}, hand examples {}",
            if hand_ok { "ok" } else { "wrong" }
        ),
    )
}

// Criterion 3: causality.

fn outputs(m: &MultiStageModel, x: &FeatureSeq) -> Vec<Vec<f64>> {
    let inf = m.infer(x).unwrap();
    (0..x.frames())
        .map(|t| {
            let mut row = inf.initial.row(t).to_vec();
            inf.stages.iter().for_each(|s| row.extend_from_slice(s.row(t)));
            row
        })
        .collect()
}

fn causal_models(trained: &Path, dim: usize, classes: usize) -> Vec<(String, MultiStageModel)> {
    let mut models = Vec::new();
    let b = ModelBundle::load(trained).unwrap();
    models.push((
        "trained gru".to_string(),
        MultiStageModel::new(b.predictor.clone().unwrap(), b.refiner.clone()).unwrap(),
    ));
    models.push((
        "trained predictor".to_string(),
        MultiStageModel::new(b.predictor.unwrap(), None).unwrap(),
    ));
    for (i, variant) in [RefinerVariant::Gru, RefinerVariant::CausalTcn].into_iter().enumerate() {
        let mut rng = RngStream::new(40 + i as u64);
        let p = PredictorModel::new(PredictorConfig::new(dim, classes), &mut rng).unwrap();
        let r = RefinerModel::new(RefinerConfig::new(variant, classes, 2 + i), &mut rng).unwrap();
        models.push((
            format!("random {}", variant.name()),
            MultiStageModel::new(p, Some(r)).unwrap(),
        ));
    }
    models
}

fn criterion_causality(seed_dir: &Path) -> Outcome {
    let data = load_dataset(&seed_dir.join("data")).map_err(|e| e.to_string())?;
    let models = causal_models(&seed_dir.join("non-e2e"), data.dim, data.classes);
    let mut rng = RngStream::new(77);
    let (mut prefix_checks, mut worst) = (0usize, 0.0f64);
    for v in 0..20 {
        let t = 100 + rng.below(200);
        let mut x = Tensor::zeros(&[t, data.dim]);
        x.data_mut().iter_mut().for_each(|e| *e = rng.normal());
        let x = FeatureSeq::new(x).unwrap();
        for (name, m) in &models {
            let cut = 1 + rng.below(t - 1);
            let mut y = x.clone();
            for r in cut..t {
                y.tensor_mut()
                    .row_mut(r)
                    .iter_mut()
                    .for_each(|e| *e += 3.0 * rng.normal());
            }
            if outputs(m, &x)[..cut] != outputs(m, &y)[..cut] {
                return Err(format!("{name}: prefix changed on video {v} before frame {cut}"));
            }
            prefix_checks += 1;
            let batch = m.infer(&x).unwrap();
            let online = streaming_infer((0..t).map(|i| x.frame(i)), m).unwrap();
            for (i, o) in online.iter().enumerate() {
                for (a, b) in o.final_probs().iter().zip(batch.final_probs().row(i)) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
    }
    check(
        worst <= 1e-5,
        format!("{prefix_checks} suffix perturbations exact, streaming vs batch max diff {worst:.1e}"),
    )
}

// Criterion 4: loss values.

fn criterion_loss_values() -> Outcome {
    let ps = |rows: &[Vec<f64>]| ProbSeq::new(Tensor::from_rows(rows).unwrap()).unwrap();
    let cases = [
        (
            predictor_loss(&ps(&[vec![0.5, 0.5]]), &[0], 1.0).unwrap().total,
            0.693147,
        ),
        (
            predictor_loss(&ps(&[vec![0.9, 0.1], vec![0.9, 0.1]]), &[0, 0], 1.0)
                .unwrap()
                .total,
            0.105361,
        ),
        (
            predictor_loss(&ps(&[vec![0.9, 0.1], vec![0.1, 0.9]]), &[0, 1], 1.0)
                .unwrap()
                .total,
            0.425361,
        ),
    ];
    let worst = cases.iter().map(|(got, want)| (got - want).abs()).fold(0.0, f64::max);
    let values: Vec<String> = cases.iter().map(|(g, _)| format!("{g:.6}")).collect();
    check(worst <= 1e-6, format!("{} (max diff {worst:.1e})", values.join(" / ")))
}

// Experiment-driven criteria.

fn run_cli(args: &[&str]) -> i32 {
    stagewise_cli::run(std::iter::once("stagewise").chain(args.iter().copied()))
}

fn write_config(path: &Path, seeds: &[u64]) {
    let cfg = serde_json::json!({
        "refiner": {"stacks": HEADLINE_STACKS},
        "ablation": ["mhf", "rm"],
        "stack_sweep": STACKS,
        "seeds": seeds,
    });
    fs::write(path, serde_json::to_vec_pretty(&cfg).unwrap()).unwrap();
}

fn load_summary(dir: &Path) -> Summary {
    serde_json::from_slice(&fs::read(dir.join(SUMMARY_FILE)).unwrap()).unwrap()
}

fn criterion_cross_validate(out: &Path, summary: &Summary) -> Outcome {
    let mut details = Vec::new();
    for s in &summary.replicates {
        let dir = out.join(format!("seed-{}", s.seed)).join("disturbed");
        let (index, samples) = read_disturbed(&dir, Some(&[Provenance::CrossValidate])).map_err(|e| e.to_string())?;
        if samples.len() != 40 {
            return Err(format!("seed {}: {} cv samples", s.seed, samples.len()));
        }
        audit_cross_validate(&samples, &index.folds).map_err(|e| format!("seed {}: {e}", s.seed))?;
        let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
        samples
            .iter()
            .for_each(|x| *sizes.entry(x.fold.unwrap()).or_default() += 1);
        let (lo, hi) = (sizes.values().min().unwrap(), sizes.values().max().unwrap());
        if sizes.len() != 10 || hi - lo > 1 {
            return Err(format!("seed {}: fold sizes {sizes:?}", s.seed));
        }
        let cv = s.diagnostics.cv_disagreement.unwrap();
        let own = s.diagnostics.predictor_train_disagreement.unwrap();
        if cv <= 2.0 * own {
            return Err(format!("seed {}: cv disagreement {cv:.4} vs own {own:.4}", s.seed));
        }
        details.push(format!(
            "seed {}: cv {:.1}% vs own {:.1}%",
            s.seed,
            100.0 * cv,
            100.0 * own
        ));
    }
    Ok(format!("40 samples, 10 folds, no leakage; {}", details.join(", ")))
}

fn criterion_headline(summary: &Summary, secs: f64) -> Outcome {
    let acc = |m: &str| summary.methods[m].acc * 100.0;
    let (pred, e2e, ours) = (acc("predictor"), acc("e2e"), acc("non-e2e"));
    let ok = ours >= pred + 0.5 && ours >= e2e && secs <= BUDGET_SECS;
    check(
        ok,
        format!(
            "{} mean acc: predictor {pred:.2}, e2e {e2e:.2}, non-e2e {ours:.2} (margin {:+.2}); {:.1} min",
            summary.refiner_types,
            ours - pred,
            secs / 60.0
        ),
    )
}

fn criterion_ablation(summary: &Summary) -> Outcome {
    let (mhf, rm) = (&summary.ablation["mhf"], &summary.ablation["rm"]);
    let violations = mhf
        .acc_per_seed
        .iter()
        .zip(&rm.acc_per_seed)
        .filter(|(a, b)| a < b)
        .count();
    check(
        mhf.acc >= rm.acc && violations <= 1,
        format!(
            "mhf {:.2} vs rm {:.2} mean acc, {violations} seed violation(s)",
            100.0 * mhf.acc,
            100.0 * rm.acc
        ),
    )
}

fn criterion_stacking(summary: &Summary) -> Outcome {
    let mut table = Vec::new();
    for n in STACKS {
        let m = summary
            .stack_sweep
            .get(&n)
            .ok_or(format!("n={n} missing from summary"))?;
        table.push(format!("n{n} {:.2}", 100.0 * m.acc));
        for s in &summary.replicates {
            let r = &s.stacks[&n];
            if r.first_epoch_stage_losses.len() != n || r.last_epoch_stage_losses.len() != n {
                return Err(format!("seed {} n={n}: wrong stage loss count", s.seed));
            }
            for (k, (a, b)) in r
                .first_epoch_stage_losses
                .iter()
                .zip(&r.last_epoch_stage_losses)
                .enumerate()
            {
                if b >= a {
                    return Err(format!("seed {} n={n} stage {}: loss {a:.4} -> {b:.4}", s.seed, k + 1));
                }
            }
        }
    }
    Ok(format!("all stage losses decrease; {}", table.join(", ")))
}

/// Every file under `root`, relative, excluding the wall-clock ledger and the
/// config copy that records the output directory. Training histories keep
/// everything except the per-epoch wall-clock `seconds`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(root).unwrap().to_path_buf();
            if rel == Path::new("ledger.json") || rel == Path::new("config.json") {
                continue;
            }
            let bytes = fs::read(&p).unwrap();
            let bytes = if p.extension().is_some_and(|e| e == "jsonl") {
                without_seconds(&bytes)
            } else {
                bytes
            };
            files.insert(rel, bytes);
        }
    }
    files
}

fn without_seconds(history: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    for line in String::from_utf8_lossy(history).lines() {
        let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
        v.as_object_mut().unwrap().remove("seconds");
        out.extend(serde_json::to_vec(&v).unwrap());
        out.push(b'\n');
    }
    out
}

fn criterion_determinism(a: &Path, b: &Path) -> Outcome {
    let (ta, tb) = (tree(a), tree(b));
    if ta.keys().ne(tb.keys()) {
        return Err("file sets differ".into());
    }
    let differing: Vec<_> = ta
        .iter()
        .filter(|(k, v)| tb[*k] != **v)
        .map(|(k, _)| k.display().to_string())
        .collect();
    let reports = ta
        .keys()
        .filter(|k| k.ends_with(SUMMARY_FILE) || k.components().any(|c| c.as_os_str() == "reports"))
        .count();
    check(
        differing.is_empty(),
        format!(
            "{} files compared, {reports} reports/summaries byte-identical; differing: {differing:?}",
            ta.len()
        ),
    )
}

fn first_with_ext(dir: &Path, ext: &str) -> PathBuf {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    paths.sort();
    paths.remove(0)
}

fn criterion_formats(out: &Path, scratch: &Path) -> Outcome {
    let seed = out.join("seed-1");
    let mspf = first_with_ext(&seed.join("data/videos"), "mspf");
    let mspp = first_with_ext(&seed.join("disturbed"), "mspp");
    let msck = seed.join("non-e2e").join(BUNDLE_WEIGHTS_FILE);
    fs::create_dir_all(scratch).unwrap();
    let copies = [scratch.join("a.mspf"), scratch.join("a.mspp"), scratch.join("a.msck")];
    write_features(&copies[0], &read_features(&mspf).unwrap()).unwrap();
    write_probs(&copies[1], &read_probs(&mspp).unwrap()).unwrap();
    write_checkpoint(&copies[2], &read_checkpoint(&msck).unwrap()).unwrap();
    for (orig, copy) in [&mspf, &mspp, &msck].into_iter().zip(&copies) {
        if fs::read(orig).unwrap() != fs::read(copy).unwrap() {
            return Err(format!("{} changed on rewrite", orig.display()));
        }
    }

    let data = scratch.join("data");
    let _ = fs::remove_dir_all(&data);
    copy_tree(&seed.join("data"), &data);
    let mut codes = Vec::new();
    for (target, ext) in [(first_with_ext(&data.join("videos"), "mspf"), "mspf")] {
        let mut bytes = fs::read(&target).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        fs::write(&target, bytes).unwrap();
        let status = Command::new(env!("CARGO_BIN_EXE_stagewise"))
            .env_remove("STAGEWISE_OUT")
            .args(["eval", "--data"])
            .arg(&data)
            .arg("--model")
            .arg(seed.join("non-e2e"))
            .arg("--out")
            .arg(scratch.join("eval"))
            .output()
            .unwrap();
        codes.push((ext, status.status.code()));
    }
    let weights = scratch.join("bundle");
    let _ = fs::remove_dir_all(&weights);
    copy_tree(&seed.join("non-e2e"), &weights);
    let ck = weights.join(BUNDLE_WEIGHTS_FILE);
    let mut bytes = fs::read(&ck).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    fs::write(&ck, bytes).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_stagewise"))
        .env_remove("STAGEWISE_OUT")
        .args(["eval", "--data"])
        .arg(seed.join("data"))
        .arg("--model")
        .arg(&weights)
        .arg("--out")
        .arg(scratch.join("eval2"))
        .output()
        .unwrap();
    codes.push(("msck", status.status.code()));
    let ok = codes.iter().all(|(_, c)| *c == Some(4));
    check(
        ok,
        format!("mspf/mspp/msck rewrite byte-identical; corrupted header exit codes {codes:?}"),
    )
}

fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let p = e.unwrap().path();
        let dest = to.join(p.file_name().unwrap());
        if p.is_dir() {
            copy_tree(&p, &dest);
        } else {
            fs::copy(&p, &dest).unwrap();
        }
    }
}

fn main() {
    let root = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    let _ = fs::remove_dir_all(&root);
    fs::create_dir_all(&root).unwrap();

    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "gradient suite", criterion_gradients()));
    results.push((2, "metrics oracle", criterion_metrics()));
    results.push((4, "loss values", criterion_loss_values()));

    let config = root.join("config.json");
    write_config(&config, &SEEDS);
    let (run_a, run_b) = (root.join("run-a"), root.join("run-b"));
    let start = Instant::now();
    let code = run_cli(&[
        "--config",
        config.to_str().unwrap(),
        "experiment",
        "--out",
        run_a.to_str().unwrap(),
    ]);
    let secs = start.elapsed().as_secs_f64();
    if code != 0 {
        for (n, name) in [
            (3, "causality"),
            (5, "cross-validate"),
            (6, "headline"),
            (7, "ablation"),
            (8, "stacking"),
            (9, "determinism"),
            (10, "formats"),
        ] {
            results.push((n, name, Err(format!("experiment exited with {code}"))));
        }
    } else {
        let summary = load_summary(&run_a);
        results.push((3, "causality", criterion_causality(&run_a.join("seed-1"))));
        results.push((5, "cross-validate", criterion_cross_validate(&run_a, &summary)));
        results.push((6, "headline", criterion_headline(&summary, secs)));
        results.push((7, "ablation", criterion_ablation(&summary)));
        results.push((8, "stacking", criterion_stacking(&summary)));
        let code = run_cli(&[
            "--config",
            config.to_str().unwrap(),
            "experiment",
            "--out",
            run_b.to_str().unwrap(),
        ]);
        let det = if code == 0 {
            criterion_determinism(&run_a, &run_b)
        } else {
            Err(format!("rerun exited with {code}"))
        };
        results.push((9, "determinism", det));
        results.push((10, "formats", criterion_formats(&run_a, &root.join("formats"))));
    }

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(d) => println!("criterion {n:>2} [{name}]: PASS {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} [{name}]: FAIL {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
