//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Correctness criteria (1-5, 8, 10) gate the exit status. The empirical
//! comparisons (6, 7) and the PCA diagnostic (9) train real models and
//! report their outcome without gating, because a directional result on
//! three seeds is an observation rather than a property of the code.
//!
//! `ACCEPTANCE_ONLY=1,2,10` restricts the run to the listed criteria.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use adaptseg::adapt::{infer, meta_gradients, train, AdaptConfig, Setup, TrainState, Variant, VariantMask};
use adaptseg::envsim::{
    generate_dataset, Action, CameraConfig, Dataset, DatasetConfig, DatasetPoint, Mask, SceneConfig, Split, UNLABELED,
};
use adaptseg::fusion::{EmbedderVariant, FusionConfig};
use adaptseg::params::ParamStore;
use adaptseg::segmodel::{forward, image_tensor, semantic_map, ModelConfig, SegOutput, GROUPS};
use adaptseg::setloss::{
    assignment_cost, hungarian, matched_loss, metrics, segm_loss, targets_from_mask, LossWeights, TargetSet,
};
use adaptseg_cli::config::RunConfig;
use adaptseg_cli::pipeline::{run_suite, Suite, SuiteResult};
use anyhow::{ensure, Context, Result};
use autograd::check::{
    gradcheck, hessian_vector_check, op_cases, random_composite, random_input, relative_error, Input,
};
use autograd::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { pass, detail: detail.into() })
}

// ---------------------------------------------------------------- 1

fn autodiff() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = (0.0f64, "");
    let cases = op_cases();
    for case in &cases {
        for _ in 0..100 {
            let (inputs, f) = (case.make)(&mut rng);
            let err = gradcheck(&*f, &inputs, 1e-5)?;
            if err > worst.0 {
                worst = (err, case.name);
            }
        }
    }
    let mut worst2 = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=5);
        let depth = rng.gen_range(2..=5);
        let f = random_composite(&mut rng, n, depth);
        let x = random_input(&mut rng, n);
        let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        worst2 = worst2.max(hessian_vector_check(&*f, &x, &dir, 1e-5)?);
    }
    outcome(
        worst.0 < 1e-5 && worst2 < 1e-4,
        format!(
            "{} ops x 100 trials, worst first-order rel err {:.1e} ({}), worst second-order {:.1e}",
            cases.len(),
            worst.0,
            worst.1,
            worst2
        ),
    )
}

// ---------------------------------------------------------------- 2

fn injections(n: usize, m: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == m {
            out.push(cur.clone());
            return;
        }
        for q in 0..n {
            if !cur.contains(&q) {
                cur.push(q);
                rec(n, m, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = vec![];
    rec(n, m, &mut vec![], &mut out);
    out
}

fn hungarian_oracle() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let m = rng.gen_range(1..=6);
        let n = rng.gen_range(m..=6);
        let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
        let found = hungarian(&cost)?;
        let best = injections(n, m)
            .into_iter()
            .map(|inj| inj.iter().enumerate().map(|(t, &q)| cost[q][t]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        if assignment_cost(&cost, &found) != best {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("1000 random matrices up to 6x6, {mismatches} differ from brute force"))
}

// ---------------------------------------------------------------- 3

fn instance(rng: &mut ChaCha8Rng, q: usize, k: usize, h: usize, w: usize, n_targets: usize) -> (SegOutput, TargetSet) {
    let cl: Vec<f64> = (0..q * k).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let ml: Vec<f64> = (0..q * h * w).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let out = SegOutput {
        class_logits: Tensor::constant(cl, &[q, k]).unwrap(),
        mask_logits: Tensor::constant(ml, &[q, h, w]).unwrap(),
        mask_features: Tensor::zeros(&[q, 2]),
        feat_1_32: Tensor::zeros(&[2, 1, 1]),
    };
    let mut labels: Vec<u8> = (0..h * w).map(|_| rng.gen_range(0..n_targets) as u8).collect();
    for (c, l) in labels.iter_mut().take(n_targets).enumerate() {
        *l = c as u8;
    }
    for l in labels.iter_mut().skip(n_targets) {
        if rng.gen_bool(0.1) {
            *l = UNLABELED;
        }
    }
    let up: Vec<u8> =
        (0..4 * h).flat_map(|y| (0..4 * w).map(move |x| (y, x))).map(|(y, x)| labels[(y / 4) * w + x / 4]).collect();
    let mask = Mask { width: 4 * w, height: 4 * h, labels: up };
    let targets = targets_from_mask(&mask, (h, w), k - 1);
    (out, targets)
}

/// The matched loss evaluated term by term, with matching by enumeration.
fn oracle_loss(out: &SegOutput, t: &TargetSet, wt: &LossWeights) -> [f64; 4] {
    let (q, k) = (out.class_logits.shape()[0], out.class_logits.shape()[1]);
    let hw = t.size.0 * t.size.1;
    let cl = |i: usize, c: usize| out.class_logits.data()[i * k + c].clamp(-20.0, 20.0);
    let ml = |i: usize, p: usize| out.mask_logits.data()[i * hw + p].clamp(-20.0, 20.0);
    let nll = |i: usize, c: usize| (0..k).map(|j| cl(i, j).exp()).sum::<f64>().ln() - cl(i, c);
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let nvalid: f64 = t.valid.iter().sum();
    let bce = |i: usize, ti: usize| {
        (0..hw)
            .filter(|&p| t.valid[p] > 0.0)
            .map(|p| {
                let (pr, y) = (sig(ml(i, p)), t.masks[ti][p]);
                -(y * pr.ln() + (1.0 - y) * (1.0 - pr).ln())
            })
            .sum::<f64>()
            / nvalid
    };
    let dice = |i: usize, ti: usize| {
        let valid = (0..hw).filter(|&p| t.valid[p] > 0.0);
        let (mut inter, mut ps, mut gs) = (0.0, 0.0, 0.0);
        for p in valid {
            let pr = sig(ml(i, p));
            inter += pr * t.masks[ti][p];
            ps += pr;
            gs += t.masks[ti][p];
        }
        1.0 - (2.0 * inter + wt.dice_smooth) / (ps + gs + wt.dice_smooth)
    };
    let m = t.len();
    let pair_cost = |ti: usize, i: usize| wt.cls * nll(i, t.classes[ti]) + wt.bce * bce(i, ti) + wt.dice * dice(i, ti);
    let best = injections(q, m)
        .into_iter()
        .map(|inj| (inj.iter().enumerate().map(|(ti, &i)| pair_cost(ti, i)).sum::<f64>(), inj))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .unwrap()
        .1;
    let lcls = (0..q)
        .map(|i| match best.iter().position(|&x| x == i) {
            Some(ti) => nll(i, t.classes[ti]),
            None => wt.no_object * nll(i, k - 1),
        })
        .sum::<f64>()
        / q as f64;
    let lbce = best.iter().enumerate().map(|(ti, &i)| bce(i, ti)).sum::<f64>() / m as f64;
    let ldice = best.iter().enumerate().map(|(ti, &i)| dice(i, ti)).sum::<f64>() / m as f64;
    [lcls, lbce, ldice, wt.cls * lcls + wt.bce * lbce + wt.dice * ldice]
}

/// Per-class pixel counts written out directly.
fn oracle_metrics(pred: &[u8], gt: &[u8], classes: usize) -> [f64; 4] {
    let mut inter = vec![0.0; classes];
    let mut gt_n = vec![0.0; classes];
    let mut pred_n = vec![0.0; classes];
    for (&p, &g) in pred.iter().zip(gt) {
        if g == UNLABELED {
            continue;
        }
        gt_n[g as usize] += 1.0;
        if (p as usize) < classes {
            pred_n[p as usize] += 1.0;
        }
        if p == g {
            inter[g as usize] += 1.0;
        }
    }
    let total: f64 = gt_n.iter().sum();
    let present: Vec<usize> = (0..classes).filter(|&c| gt_n[c] > 0.0).collect();
    let iou = |c: usize| inter[c] / (gt_n[c] + pred_n[c] - inter[c]);
    let n = present.len() as f64;
    [
        100.0 * present.iter().map(|&c| iou(c)).sum::<f64>() / n,
        100.0 * present.iter().map(|&c| gt_n[c] / total * iou(c)).sum::<f64>(),
        100.0 * present.iter().map(|&c| inter[c] / gt_n[c]).sum::<f64>() / n,
        100.0 * inter.iter().sum::<f64>() / total,
    ]
}

fn loss_and_metrics() -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = LossWeights::default();
    let mut worst_loss = 0.0f64;
    for _ in 0..200 {
        let (out, targets) = instance(&mut rng, 4, 4, 8, 8, 2);
        let got = segm_loss(&out, &targets, &w)?.values();
        let want = oracle_loss(&out, &targets, &w);
        for (a, b) in [got.0, got.1, got.2, got.3].iter().zip(want) {
            worst_loss = worst_loss.max((a - b).abs());
        }
    }
    let mut worst_grad = 0.0f64;
    for _ in 0..20 {
        let (out, targets) = instance(&mut rng, 4, 4, 4, 4, 2);
        let matching = segm_loss(&out, &targets, &w)?.matching;
        let f = |xs: &[Tensor]| {
            let o = SegOutput {
                class_logits: xs[0].clone(),
                mask_logits: xs[1].clone(),
                mask_features: Tensor::zeros(&[4, 2]),
                feat_1_32: Tensor::zeros(&[2, 1, 1]),
            };
            match matched_loss(&o, &targets, &w, matching.clone()) {
                Ok(l) => Ok(l.total),
                Err(adaptseg::Error::Autograd(e)) => Err(e),
                Err(e) => panic!("{e}"),
            }
        };
        let inputs = [
            Input::new(out.class_logits.to_vec(), out.class_logits.shape()),
            Input::new(out.mask_logits.to_vec(), out.mask_logits.shape()),
        ];
        worst_grad = worst_grad.max(gradcheck(&f, &inputs, 1e-5)?);
    }
    let mut order_violations = 0;
    let mut worst_metric = 0.0f64;
    for _ in 0..1000 {
        let classes = rng.gen_range(2..=6);
        let n = rng.gen_range(1..=64);
        let gt: Vec<u8> =
            (0..n).map(|_| if rng.gen_bool(0.1) { UNLABELED } else { rng.gen_range(0..classes) as u8 }).collect();
        let pred: Vec<u8> = (0..n).map(|_| rng.gen_range(0..classes) as u8).collect();
        if gt.iter().all(|&g| g == UNLABELED) {
            continue;
        }
        let r = metrics(&pred, &gt, classes)?;
        if r.miou > r.macc + 1e-9 || r.fwiou > r.pacc + 1e-9 {
            order_violations += 1;
        }
        for (a, b) in r.values().iter().zip(oracle_metrics(&pred, &gt, classes)) {
            worst_metric = worst_metric.max((a - b).abs());
        }
    }
    let hand = metrics(&[0, 1, 1, 1], &[0, 0, 1, 1], 2)?;
    let hand_ok = (hand.miou * 100.0).round() / 100.0 == 58.33 && hand.pacc == 75.0;
    outcome(
        worst_loss < 1e-10 && worst_grad < 1e-5 && order_violations == 0 && worst_metric < 1e-9 && hand_ok,
        format!(
            "loss vs oracle {worst_loss:.1e}, gradient rel err {worst_grad:.1e}, {order_violations} ordering violations in 1000 maps, \
             metrics vs pixel counting {worst_metric:.1e}, hand example mIoU {:.2} pACC {:.1}",
            hand.miou, hand.pacc
        ),
    )
}

// ---------------------------------------------------------------- 4

fn bits(s: &ParamStore) -> Vec<u64> {
    s.params().iter().flat_map(|p| p.data.iter().map(|v| v.to_bits())).collect()
}

fn degeneracy() -> Result<Outcome> {
    let ds = generate_dataset(&DatasetConfig {
        seed: 4,
        train_points: 0,
        val_points: 6,
        test_points: 0,
        ..Default::default()
    })?;
    let mut checked = 0;
    let mut failures = vec![];
    for (label, adapt) in [
        ("alpha 0", AdaptConfig { alpha: 0.0, ..Default::default() }),
        ("adaptation off", AdaptConfig { alpha: 0.5, adapt_on_inference: false, ..Default::default() }),
    ] {
        let s = Setup { model: ModelConfig::default(), fusion: FusionConfig::default(), adapt };
        let st = TrainState::new(&s, 4, None)?;
        let before = bits(&st.theta);
        for p in ds.split(Split::Val) {
            let r = infer(&s, &st.theta, &st.phi, p, 1)?;
            let f = &p.tree.root().frame;
            let out = forward(&s.model, &st.theta.constants(), &image_tensor(&s.model, &f.image)?)?;
            let plain = semantic_map(&s.model, &out, f.mask.width, f.mask.height);
            let loss =
                segm_loss(&out, &targets_from_mask(&f.mask, s.model.mask_size(), s.model.classes), &s.adapt.loss)?;
            let same_loss = r.trajectory.loss.3.to_bits() == loss.total.item().to_bits();
            if r.prediction != plain || !same_loss {
                failures.push(format!("{label}: point {}", p.tree.point_id));
            }
            checked += 1;
        }
        if bits(&st.theta) != before {
            failures.push(format!("{label}: parameters changed"));
        }
    }
    outcome(
        failures.is_empty(),
        format!("{checked} inferences bit-identical to plain forward, parameters restored; {failures:?}"),
    )
}

// ---------------------------------------------------------------- 5

fn small_data(seed: u64, side: usize, train: usize, val: usize) -> Result<Dataset> {
    let scene = SceneConfig {
        class_count: 3,
        camera: CameraConfig { width: side, height: side, ..CameraConfig::default() },
        ..SceneConfig::default()
    };
    Ok(generate_dataset(&DatasetConfig {
        seed,
        train_points: train,
        val_points: val,
        test_points: 0,
        scene,
        ..Default::default()
    })?)
}

fn miniature(adapt: AdaptConfig) -> Setup {
    Setup { model: ModelConfig::miniature(), fusion: FusionConfig::miniature(), adapt }
}

fn meta_gradient() -> Result<Outcome> {
    let ds = small_data(5, 16, 0, 1)?;
    let p = ds.split(Split::Val).next().context("no point")?;
    let s = miniature(AdaptConfig { alpha: 0.05, variant: Variant::Full, ..Default::default() });
    ensure!(s.model.queries == 4 && s.model.width == 16);
    let st = TrainState::new(&s, 5, None)?;
    let actions = [Action::TurnRight];
    let probe = [("loss_decoder/fc1.w", 3), ("transformer/latents", 5), ("prediction_embedder/fc1.w", 7)];
    let g = meta_gradients(&s, &st.theta, &st.phi, p, &actions, None)?;
    let analytic: Vec<f64> =
        probe.iter().map(|(n, k)| g.phi[st.phi.index_of(n).unwrap()].as_ref().map_or(0.0, |v| v[*k])).collect();
    let h = 1e-5;
    let mut numeric = vec![];
    for (n, k) in probe {
        let at = |d: f64| -> Result<f64> {
            let mut phi = st.phi.clone();
            phi.get_mut(n).context("probe")?.data[k] += d;
            Ok(meta_gradients(&s, &st.theta, &phi, p, &actions, None)?.loss)
        };
        numeric.push((at(h)? - at(-h)?) / (2.0 * h));
    }
    let err = relative_error(&analytic, &numeric);
    let nonzero = analytic.iter().any(|v| v.abs() > 1e-8);
    let shown: Vec<String> = analytic.iter().map(|v| format!("{v:.2e}")).collect();
    outcome(
        nonzero && err < 1e-3,
        format!("16x16 frames, Q=4, d=16: rel err {err:.1e} over fusion probes [{}]", shown.join(", ")),
    )
}

// ---------------------------------------------------------------- 8

fn variant_contract() -> Result<Outcome> {
    let ds = small_data(8, 32, 8, 1)?;
    let train_pts: Vec<&DatasetPoint> = ds.split(Split::Train).collect();
    let p = ds.split(Split::Val).next().context("no point")?;
    let mut problems = vec![];
    for variant in [Variant::Tiny, Variant::Small, Variant::Full] {
        let mask = VariantMask::new(variant);
        let mut s = miniature(AdaptConfig { epochs: 1, batch: 4, alpha: 0.5, variant, ..Default::default() });
        s.fusion.embedder = EmbedderVariant::Vanilla;
        let init = TrainState::new(&s, 8, None)?;
        let out = train(&s, &train_pts, &[], 8, None, |_| {})?;
        for g in GROUPS {
            let unchanged = init.theta.checksum(g) == out.last.theta.checksum(g);
            if unchanged == mask.trainable(g) {
                problems.push(format!(
                    "{variant}: training {} {g}",
                    if unchanged { "never touched" } else { "moved frozen" }
                ));
            }
        }
        let r = adaptseg::adapt::infer_with_actions(&s, &init.theta, &init.phi, p, &[Action::MoveBackward])?;
        let touched: Vec<&str> =
            r.trajectory.deltas.iter().filter(|(_, d)| *d > 0.0).map(|(g, _)| g.as_str()).collect();
        if touched != mask.adaptive_groups() {
            problems.push(format!("{variant}: adaptation touched {touched:?}, expected {:?}", mask.adaptive_groups()));
        }
    }
    outcome(problems.is_empty(), format!("tiny/small/full checksums and adaptive groups; {problems:?}"))
}

// ---------------------------------------------------------------- 10

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_adaptseg")
}

const SMALL: &[&str] = &[
    "--points",
    "8",
    "--val-points",
    "2",
    "--test-points",
    "2",
    "--image-size",
    "32",
    "--canvas",
    "32",
    "--classes",
    "3",
    "--queries",
    "4",
    "--width",
    "16",
    "--heads",
    "2",
    "--stages",
    "2",
    "--fusion-width",
    "8",
    "--fusion-layers",
    "1",
    "--fusion-heads",
    "2",
    "--latents",
    "2",
    "--epochs",
    "2",
    "--batch",
    "4",
];

fn cli(args: &[&str], extra: &[&str]) -> Result<()> {
    let out = Command::new(bin()).args(args).args(extra).output()?;
    ensure!(out.status.success(), "{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn tree_bytes(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>> {
    let mut out = vec![];
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d)? {
            let path = e?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir)?.to_path_buf(), std::fs::read(&path)?));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn determinism() -> Result<Outcome> {
    let tmp = tempfile::tempdir()?;
    let dir = |n: &str| tmp.path().join(n).to_string_lossy().into_owned();
    let (d1, d2) = (dir("data1"), dir("data2"));
    for d in [&d1, &d2] {
        cli(&["gen-data", "--seed", "7", "--out", d], SMALL)?;
    }
    let same_data = tree_bytes(Path::new(&d1))? == tree_bytes(Path::new(&d2))?;
    cli(&["validate", "--dataset", &d1], &[])?;
    let (r1, r2) = (dir("run1"), dir("run2"));
    for r in [&r1, &r2] {
        cli(&["train", "--dataset", &d1, "--seed", "3", "--alpha", "0.1", "--out", r], SMALL)?;
    }
    let read = |r: &str, f: &str| std::fs::read(Path::new(r).join(f));
    let same_log = read(&r1, "train.log")? == read(&r2, "train.log")?;
    let same_ckpt = read(&r1, "checkpoint.bin")? == read(&r2, "checkpoint.bin")?;
    let (e1, e2) = (dir("eval1"), dir("eval2"));
    for (e, _) in [(&e1, 0), (&e2, 1)] {
        let ckpt = Path::new(&r1).join("checkpoint.bin").to_string_lossy().into_owned();
        cli(
            &[
                "eval",
                "--dataset",
                &d1,
                "--checkpoint",
                &ckpt,
                "--seed",
                "3",
                "--alpha",
                "0.1",
                "--per-point",
                "true",
                "--out",
                e,
            ],
            SMALL,
        )?;
    }
    let same_eval =
        read(&e1, "eval.tsv")? == read(&e2, "eval.tsv")? && read(&e1, "per_point.tsv")? == read(&e2, "per_point.tsv")?;
    cli(&["report", "--out", &r1], &[])?;
    cli(&["report", "--out", &e1], &[])?;
    outcome(
        same_data && same_log && same_ckpt && same_eval,
        format!("reruns identical: dataset {same_data}, train.log {same_log}, checkpoint {same_ckpt}, eval tables {same_eval}"),
    )
}

// ---------------------------------------------------------------- 6, 7, 9

/// Shared settings of the trained comparisons.
fn experiment(overrides: &[(&str, &str)]) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    for (k, v) in [
        ("points", "128"),
        ("val_points", "16"),
        ("test_points", "16"),
        ("image_size", "64"),
        ("classes", "8"),
        ("seeds", "1,2,3"),
        ("alpha", "0.03"),
    ] {
        c.set(k, v)?;
    }
    for (k, v) in overrides {
        c.set(k, v)?;
    }
    Ok(c)
}

fn artifacts(name: &str) -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name)
}

fn miou_line(r: &SuiteResult) -> String {
    r.cells
        .iter()
        .map(|c| {
            let per: Vec<String> = c.per_seed.iter().map(|(s, m)| format!("{s}:{:.2}", m.miou)).collect();
            format!("{} mean {:.2} [{}]", c.cell.name, c.mean().map_or(f64::NAN, |m| m.miou), per.join(" "))
        })
        .collect::<Vec<_>>()
        .join("; ")
}

fn main_comparison() -> Result<Outcome> {
    let cfg = experiment(&[])?;
    let r = run_suite(Suite::Main, &cfg, &artifacts("main"), |_| {})?;
    ensure!(r.failed_cells().is_empty(), "failed cells: {:?}", r.failed_cells());
    let [base, off, on] = [&r.cells[0], &r.cells[1], &r.cells[2]];
    let wins = on.per_seed.iter().filter(|(s, m)| base.seed(*s).is_some_and(|b| m.miou > b.miou)).count();
    let (on_mean, off_mean) = (on.mean().context("no runs")?.miou, off.mean().context("no runs")?.miou);
    outcome(
        wins >= 2 && on_mean >= off_mean,
        format!("adaptive beats baseline on {wins}/3 seeds, on {on_mean:.2} vs off {off_mean:.2}; {}", miou_line(&r)),
    )
}

fn policy_comparison() -> Result<Outcome> {
    let cfg = experiment(&[("kind", "occlusion")])?;
    let r = run_suite(Suite::Policy, &cfg, &artifacts("policy"), |_| {})?;
    ensure!(r.failed_cells().is_empty(), "failed cells: {:?}", r.failed_cells());
    let random = r.cells[0].mean().context("no runs")?.miou;
    let best = r.cells[1].mean().context("no runs")?.miou;
    outcome(best >= random, format!("bestloss {best:.2} vs random {random:.2} on occlusion scenes; {}", miou_line(&r)))
}

fn pca_diagnostic() -> Result<Outcome> {
    let cfg = experiment(&[("seeds", "1"), ("split", "val")])?;
    let r = run_suite(Suite::Pca, &cfg, &artifacts("pca"), |_| {})?;
    ensure!(r.failed_cells().is_empty(), "failed cells: {:?}", r.failed_cells());
    let scores: Vec<_> = r.pca.iter().flat_map(|(_, s)| s.iter()).collect();
    let wins = scores.iter().filter(|(_, v, m)| m > v).count();
    outcome(
        2 * wins > scores.len(),
        format!("mlp separation above vanilla on {wins}/{} validation points", scores.len()),
    )
}

// ----------------------------------------------------------------

type Criterion = (u32, &'static str, bool, fn() -> Result<Outcome>);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "autodiff gradients", true, autodiff),
        (2, "hungarian vs brute force", true, hungarian_oracle),
        (3, "loss and metrics", true, loss_and_metrics),
        (4, "zero-step degeneracy", true, degeneracy),
        (5, "meta-gradient", true, meta_gradient),
        (6, "adaptive vs single-frame baseline", false, main_comparison),
        (7, "best-loss vs random policy", false, policy_comparison),
        (8, "variant contract", true, variant_contract),
        (9, "embedding separation (soft)", false, pca_diagnostic),
        (10, "determinism", true, determinism),
    ];
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut gating_failures = 0;
    for (id, name, gating, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            println!("criterion {id:>2} {name}: SKIP");
            continue;
        }
        let t0 = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        let status = if pass { "PASS" } else { "FAIL" };
        let kind = if gating { "" } else { " [reported]" };
        println!("criterion {id:>2} {name}: {status}{kind} ({:.1} s) {detail}", t0.elapsed().as_secs_f64());
        if gating && !pass {
            gating_failures += 1;
        }
    }
    if gating_failures > 0 {
        println!("{gating_failures} gating criteria failed");
        std::process::exit(1);
    }
}
