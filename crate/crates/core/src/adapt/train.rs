use std::collections::BTreeMap;

use autograd::{grad_allow_unused, Graph, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::inner::inner_adapt;
use super::optim::{clip_global_norm, Adam};
use super::{Policy, Setup};
use crate::envsim::{Action, ActionTreePoint, DatasetPoint, EnvError, Mask};
use crate::fusion::{fusion_forward, init_fusion};
use crate::params::{Checkpoint, ParamStore};
use crate::segmodel::{forward, image_tensor, init_params, semantic_map, SegOutput};
use crate::setloss::{metrics, segm_loss, targets_from_mask, MetricAccumulator, MetricReport, TargetSet};
use crate::{Error, Result};

pub const LOG_HEADER: &str = "epoch\ttrain_loss\tval_mIoU\tval_fwIoU\tval_mACC\tval_pACC";

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parameters and optimizer state of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub theta: ParamStore,
    pub phi: ParamStore,
    pub opt_theta: Adam,
    pub opt_phi: Adam,
    /// Latest frame-0 loss per `(point, parent node)` and action, for the
    /// best-loss policy targets.
    pub siblings: BTreeMap<(usize, usize), [Option<f64>; 5]>,
}

impl TrainState {
    /// Fresh state; `theta` overrides the seeded segmentation initialization.
    pub fn new(setup: &Setup, seed: u64, theta: Option<ParamStore>) -> Result<Self> {
        setup.validate()?;
        let init = init_params(&setup.model, seed)?;
        let theta = match theta {
            Some(t) if t.same_layout(&init) => t,
            Some(_) => return Err(Error::Config("initial parameters do not match the model configuration".into())),
            None => init,
        };
        let phi = init_fusion(&setup.fusion, &setup.model, seed)?;
        let a = &setup.adapt;
        Ok(TrainState {
            opt_theta: Adam::new(&theta, a.beta1, a.beta2, a.adam_eps),
            opt_phi: Adam::new(&phi, a.beta1, a.beta2, a.adam_eps),
            theta,
            phi,
            siblings: BTreeMap::new(),
        })
    }

    fn sibling_target(&self, point: usize, parent: usize) -> Option<usize> {
        let row = self.siblings.get(&(point, parent))?;
        row.iter().enumerate().filter_map(|(i, l)| l.map(|l| (i, l))).min_by(|a, b| a.1.total_cmp(&b.1)).map(|(i, _)| i)
    }
}

/// Summary of one adapted prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub actions: Vec<Action>,
    /// Learned loss before each inner step; empty without adaptation.
    pub learned_losses: Vec<f64>,
    pub action_logits: Option<Vec<f64>>,
    /// L2 norm of the parameter change per segmentation group.
    pub deltas: Vec<(String, f64)>,
    /// `(cls, bce, dice, total)` of frame 0 against its ground truth.
    pub loss: (f64, f64, f64, f64),
}

pub struct Inference {
    pub prediction: Mask,
    pub report: MetricReport,
    pub trajectory: Trajectory,
}

fn images(setup: &Setup, tree: &ActionTreePoint, actions: &[Action]) -> Result<(Vec<Tensor>, TargetSet)> {
    let seq = tree.sequence(actions)?;
    let imgs = seq.frames.iter().map(|f| image_tensor(&setup.model, &f.image)).collect::<Result<Vec<_>>>()?;
    let targets = targets_from_mask(&seq.frames[0].mask, setup.model.mask_size(), setup.model.classes);
    Ok((imgs, targets))
}

/// Node whose children the last action chooses between.
fn decision_node(tree: &ActionTreePoint, actions: &[Action]) -> Option<usize> {
    tree.follow(&actions[..actions.len().saturating_sub(1)])
}

/// Action logits after observing the frames along `prefix`.
fn action_logits(
    setup: &Setup,
    theta: &ParamStore,
    phi: &ParamStore,
    tree: &ActionTreePoint,
    prefix: &[Action],
) -> Result<Vec<f64>> {
    let (imgs, _) = images(setup, tree, prefix)?;
    let tb = theta.constants();
    let pb = phi.constants();
    let outs = imgs.iter().map(|x| forward(&setup.model, &tb, x)).collect::<Result<Vec<_>>>()?;
    Ok(fusion_forward(&setup.fusion, &pb, &outs)?.action_logits.to_vec())
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &x)| if x > b.1 { (i, x) } else { b }).0
}

/// Picks the additional frames for `tree`. `epsilon` is the exploration rate
/// of the best-loss policy (0 at evaluation).
pub fn choose_actions(
    setup: &Setup,
    theta: &ParamStore,
    phi: &ParamStore,
    tree: &ActionTreePoint,
    rng: &mut impl Rng,
    epsilon: f64,
) -> Result<Vec<Action>> {
    let steps = setup.adapt.steps;
    if setup.adapt.policy == Policy::SingleFrame {
        return Ok(vec![]);
    }
    if tree.depth() < steps {
        return Err(EnvError::TreeTooShallow { point: tree.point_id, depth: tree.depth(), requested: steps }.into());
    }
    let mut actions = Vec::with_capacity(steps);
    for _ in 0..steps {
        let a = match setup.adapt.policy {
            Policy::BestLoss if !rng.gen_bool(epsilon) => {
                Action::ALL[argmax(&action_logits(setup, theta, phi, tree, &actions)?)]
            }
            _ => Action::ALL[rng.gen_range(0..Action::ALL.len())],
        };
        actions.push(a);
    }
    Ok(actions)
}

/// Gradients of one sequence's outer objective, aligned with the parameter
/// stores; `None` where a parameter is not trained.
pub struct MetaGrads {
    /// Frame-0 segmentation loss after adaptation.
    pub loss: f64,
    pub action_loss: f64,
    pub theta: Vec<Option<Vec<f64>>>,
    pub phi: Vec<Option<Vec<f64>>>,
}

/// Outer objective for one point: frame-0 set loss under the adapted
/// parameters, plus the auxiliary and action terms when enabled.
pub fn meta_gradients(
    setup: &Setup,
    theta: &ParamStore,
    phi: &ParamStore,
    point: &DatasetPoint,
    actions: &[Action],
    action_target: Option<usize>,
) -> Result<MetaGrads> {
    let cfg = &setup.adapt;
    let mask = cfg.mask();
    let fusion_on = cfg.uses_fusion();
    let g = Graph::new();
    let tb = theta.bind(&g, |p| mask.trainable(p.group()) || mask.adaptive(p.group()));
    let pb = phi.bind(&g, |_| fusion_on);
    let (imgs, targets) = images(setup, &point.tree, actions)?;

    let mut total;
    let loss_value;
    let mut action_loss = 0.0;
    if fusion_on {
        let adapted = inner_adapt(setup, &tb, &pb, &imgs, cfg.meta_order == 2)?;
        let out0 = forward(&setup.model, &adapted.theta, &imgs[0])?;
        let segm = segm_loss(&out0, &targets, &cfg.loss)?;
        loss_value = segm.total.item();
        total = segm.total;
        if cfg.aux_weight > 0.0 {
            let aux = SegOutput {
                class_logits: adapted.fusion.aux_logits.clone(),
                mask_logits: adapted.fusion.aux_masks.clone(),
                ..adapted.frame_outputs[0].clone()
            };
            total = total.add(&segm_loss(&aux, &targets, &cfg.loss)?.total.scale(cfg.aux_weight)?)?;
        }
        if let Some(target) = action_target {
            // the action head sees only the frames before the last action
            let prefix: Vec<SegOutput> = adapted.frame_outputs[..actions.len()].iter().map(SegOutput::detach).collect();
            let logits = fusion_forward(&setup.fusion, &pb, &prefix)?.action_logits;
            let mut onehot = vec![0.0; Action::ALL.len()];
            onehot[target] = 1.0;
            let ce =
                logits.reshape(&[1, Action::ALL.len()])?.log_softmax()?.mul(&Tensor::constant(onehot, &[1, 5])?)?;
            let ce = ce.sum()?.neg()?;
            action_loss = ce.item();
            total = total.add(&ce)?;
        }
    } else {
        let out0 = forward(&setup.model, &tb, &imgs[0])?;
        let segm = segm_loss(&out0, &targets, &cfg.loss)?;
        loss_value = segm.total.item();
        total = segm.total;
    }
    if !total.item().is_finite() {
        return Err(Error::NonFinite(format!(
            "outer loss for point {} (actions {:?}): {}",
            point.tree.point_id,
            actions,
            total.item()
        )));
    }

    let theta_idx: Vec<usize> = (0..theta.len()).filter(|&i| mask.trainable(theta.params()[i].group())).collect();
    let phi_idx: Vec<usize> = if fusion_on { (0..phi.len()).collect() } else { vec![] };
    let mut wrt: Vec<&Tensor> = theta_idx.iter().map(|&i| &tb.tensors[i]).collect();
    wrt.extend(phi_idx.iter().map(|&i| &pb.tensors[i]));
    let grads = if wrt.is_empty() { vec![] } else { grad_allow_unused(&total, &wrt, false)? };

    let mut gtheta = vec![None; theta.len()];
    let mut gphi = vec![None; phi.len()];
    for (k, gt) in grads.iter().enumerate() {
        let v = gt.to_vec();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("outer gradient for point {}", point.tree.point_id)));
        }
        if k < theta_idx.len() {
            gtheta[theta_idx[k]] = Some(v);
        } else {
            gphi[phi_idx[k - theta_idx.len()]] = Some(v);
        }
    }
    Ok(MetaGrads { loss: loss_value, action_loss, theta: gtheta, phi: gphi })
}

fn accumulate(into: &mut [Option<Vec<f64>>], from: &[Option<Vec<f64>>]) {
    for (a, b) in into.iter_mut().zip(from) {
        match (a.as_mut(), b) {
            (Some(a), Some(b)) => a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
            (None, Some(b)) => *a = Some(b.clone()),
            _ => {}
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    /// Mean frame-0 segmentation loss over the batch.
    pub loss: f64,
    pub action_loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    /// Per-point frame-0 losses, in batch order.
    pub point_losses: Vec<f64>,
}

/// One meta-update over `batch` (point, chosen actions) pairs.
pub fn outer_step(setup: &Setup, state: &mut TrainState, batch: &[(&DatasetPoint, Vec<Action>)]) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let cfg = &setup.adapt;
    let targets: Vec<Option<usize>> = batch
        .iter()
        .map(|(p, actions)| {
            if cfg.policy != Policy::BestLoss || actions.is_empty() {
                return None;
            }
            decision_node(&p.tree, actions).and_then(|n| state.sibling_target(p.tree.point_id, n))
        })
        .collect();
    let snapshot = &*state;
    let results: Vec<MetaGrads> = batch
        .par_iter()
        .zip(&targets)
        .map(|((p, actions), t)| meta_gradients(setup, &snapshot.theta, &snapshot.phi, p, actions, *t))
        .collect::<Result<_>>()?;

    let n = results.len() as f64;
    let mut gt = vec![None; state.theta.len()];
    let mut gp = vec![None; state.phi.len()];
    for r in &results {
        accumulate(&mut gt, &r.theta);
        accumulate(&mut gp, &r.phi);
    }
    for g in gt.iter_mut().chain(gp.iter_mut()).flatten() {
        g.iter_mut().for_each(|v| *v /= n);
    }
    let grad_norm = clip_global_norm(&mut [&mut gt, &mut gp], cfg.clip_norm);
    state.opt_theta.step(&mut state.theta, &gt, cfg.lr_model);
    if cfg.uses_fusion() {
        state.opt_phi.step(&mut state.phi, &gp, cfg.lr_fusion);
    }

    if cfg.policy == Policy::BestLoss {
        for ((p, actions), r) in batch.iter().zip(&results) {
            if let (Some(last), Some(node)) = (actions.last(), decision_node(&p.tree, actions)) {
                state.siblings.entry((p.tree.point_id, node)).or_insert([None; 5])[last.index()] = Some(r.loss);
            }
        }
    }
    let point_losses: Vec<f64> = results.iter().map(|r| r.loss).collect();
    Ok(StepStats {
        loss: point_losses.iter().sum::<f64>() / n,
        action_loss: results.iter().map(|r| r.action_loss).sum::<f64>() / n,
        grad_norm,
        point_losses,
    })
}

fn group_deltas(before: &ParamStore, after: &ParamStore) -> Vec<(String, f64)> {
    before
        .groups()
        .into_iter()
        .map(|g| {
            let sq: f64 = before
                .params()
                .iter()
                .zip(after.params())
                .filter(|(p, _)| p.group() == g)
                .flat_map(|(a, b)| a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)))
                .sum();
            (g, sq.sqrt())
        })
        .collect()
}

/// Predicts frame 0 of `point` after adapting on the frames reached by
/// `actions`. Parameters are read, never written.
pub fn infer_with_actions(
    setup: &Setup,
    theta: &ParamStore,
    phi: &ParamStore,
    point: &DatasetPoint,
    actions: &[Action],
) -> Result<Inference> {
    let cfg = &setup.adapt;
    let mask = cfg.mask();
    let (imgs, targets) = images(setup, &point.tree, actions)?;
    let g = Graph::new();
    let adapting = cfg.adapts() && !actions.is_empty();
    let tb = theta.bind(&g, |p| adapting && mask.adaptive(p.group()));
    let (out0, learned_losses, action_logits, deltas) = if adapting {
        let pb = phi.constants();
        let adapted = inner_adapt(setup, &tb, &pb, &imgs, false)?;
        let out0 = forward(&setup.model, &adapted.theta, &imgs[0])?;
        let deltas = group_deltas(theta, &adapted.theta.to_store());
        (out0, adapted.learned_losses, Some(adapted.fusion.action_logits.to_vec()), deltas)
    } else {
        (forward(&setup.model, &tb, &imgs[0])?, vec![], None, vec![])
    };
    let out0 = out0.detach();
    let loss = segm_loss(&out0, &targets, &cfg.loss)?.values();
    let gt = &point.tree.root().frame.mask;
    let prediction = semantic_map(&setup.model, &out0, gt.width, gt.height);
    let report = metrics(&prediction.labels, &gt.labels, setup.model.classes)?;
    Ok(Inference {
        prediction,
        report,
        trajectory: Trajectory { actions: actions.to_vec(), learned_losses, action_logits, deltas, loss },
    })
}

/// Metrics, trajectory and prediction of one evaluated point.
pub type PointResult = (MetricReport, Trajectory, Mask);

/// Policy-driven inference on one point. `seed` drives the random policy.
pub fn infer(
    setup: &Setup,
    theta: &ParamStore,
    phi: &ParamStore,
    point: &DatasetPoint,
    seed: u64,
) -> Result<Inference> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, point.tree.point_id as u64));
    let actions = choose_actions(setup, theta, phi, &point.tree, &mut rng, 0.0)?;
    infer_with_actions(setup, theta, phi, point, &actions)
}

/// Evaluation over a set of points: the global (confusion-matrix) report
/// plus each point's own inference.
pub fn evaluate(
    setup: &Setup,
    theta: &ParamStore,
    phi: &ParamStore,
    points: &[&DatasetPoint],
    seed: u64,
) -> Result<(MetricReport, Vec<PointResult>)> {
    let per: Vec<PointResult> = points
        .par_iter()
        .map(|p| infer(setup, theta, phi, p, seed).map(|r| (r.report, r.trajectory, r.prediction)))
        .collect::<Result<_>>()?;
    let mut acc = MetricAccumulator::new(setup.model.classes);
    for (p, (_, _, pred)) in points.iter().zip(&per) {
        acc.add(&pred.labels, &p.tree.root().frame.mask.labels)?;
    }
    Ok((acc.global()?, per))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricReport,
}

impl EpochRecord {
    /// One tab-separated log line, matching [`LOG_HEADER`].
    pub fn log_line(&self) -> String {
        format!("{}\t{}\t{}", self.epoch, self.train_loss, self.val)
    }
}

/// Epoch with the highest validation fwIoU; the earliest wins ties.
pub fn best_epoch(log: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<&EpochRecord> = None;
    for r in log {
        if best.is_none_or(|b| r.val.fwiou > b.val.fwiou) {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch)
}

pub struct TrainOutcome {
    /// State after the epoch with the best validation fwIoU (earliest on
    /// ties), or the initial state when no epoch ran.
    pub best: TrainState,
    pub best_epoch: Option<usize>,
    pub last: TrainState,
    pub log: Vec<EpochRecord>,
}

/// Meta-trains on `train` and selects by validation fwIoU on `val`.
/// `on_epoch` sees every record as soon as it is produced.
pub fn train(
    setup: &Setup,
    train: &[&DatasetPoint],
    val: &[&DatasetPoint],
    seed: u64,
    init_theta: Option<ParamStore>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    setup.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("no training points".into()));
    }
    let cfg = &setup.adapt;
    let mut state = TrainState::new(setup, seed, init_theta)?;
    let mut best = state.clone();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, epoch as u64));
        let mut order: Vec<&DatasetPoint> = train.to_vec();
        order.shuffle(&mut rng);
        let eps = cfg.epsilon(epoch);
        let mut losses = Vec::with_capacity(order.len());
        for chunk in order.chunks(cfg.batch) {
            let plans: Vec<(&DatasetPoint, Vec<Action>)> = {
                let snap = &state;
                let seeds: Vec<u64> = chunk.iter().map(|_| rng.gen()).collect();
                chunk
                    .par_iter()
                    .zip(seeds)
                    .map(|(p, s)| {
                        let mut prng = ChaCha8Rng::seed_from_u64(s);
                        choose_actions(setup, &snap.theta, &snap.phi, &p.tree, &mut prng, eps).map(|a| (*p, a))
                    })
                    .collect::<Result<_>>()?
            };
            let stats = outer_step(setup, &mut state, &plans)?;
            losses.extend(stats.point_losses);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let val_report = if val.is_empty() {
            MetricReport::from_values([0.0; 4])
        } else {
            evaluate(setup, &state.theta, &state.phi, val, seed)?.0
        };
        let rec = EpochRecord { epoch, train_loss, val: val_report };
        on_epoch(&rec);
        log.push(rec);
        if best_epoch(&log) == Some(epoch) {
            best = state.clone();
        }
    }
    Ok(TrainOutcome { best, best_epoch: best_epoch(&log), last: state, log })
}

/// Checkpoint of `state` with the run description in its metadata.
pub fn save_state(setup: &Setup, state: &TrainState, extra: &[(String, String)]) -> Checkpoint {
    let mut meta = setup.meta();
    meta.push(("adam.t_theta".into(), state.opt_theta.t.to_string()));
    meta.push(("adam.t_phi".into(), state.opt_phi.t.to_string()));
    meta.extend(extra.iter().cloned());
    Checkpoint {
        meta,
        sections: vec![
            ("theta".into(), state.theta.clone()),
            ("phi".into(), state.phi.clone()),
            ("adam.theta.m".into(), state.opt_theta.m.clone()),
            ("adam.theta.v".into(), state.opt_theta.v.clone()),
            ("adam.phi.m".into(), state.opt_phi.m.clone()),
            ("adam.phi.v".into(), state.opt_phi.v.clone()),
        ],
    }
}

/// Restores a state saved by [`save_state`] and checks it fits `setup`.
pub fn load_state(setup: &Setup, ckpt: &Checkpoint) -> Result<TrainState> {
    let fresh = TrainState::new(setup, 0, None)?;
    let section = |name: &str, like: &ParamStore| -> Result<ParamStore> {
        let s = ckpt.section(name).ok_or_else(|| Error::Invalid(format!("checkpoint has no {name} section")))?;
        if !s.same_layout(like) {
            return Err(Error::Invalid(format!("checkpoint section {name} does not match the configuration")));
        }
        Ok(s.clone())
    };
    let t = |key: &str| ckpt.meta(key).and_then(|v| v.parse::<u64>().ok()).unwrap_or(0);
    let a = &setup.adapt;
    Ok(TrainState {
        theta: section("theta", &fresh.theta)?,
        phi: section("phi", &fresh.phi)?,
        opt_theta: Adam {
            m: section("adam.theta.m", &fresh.theta)?,
            v: section("adam.theta.v", &fresh.theta)?,
            t: t("adam.t_theta"),
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.adam_eps,
        },
        opt_phi: Adam {
            m: section("adam.phi.m", &fresh.phi)?,
            v: section("adam.phi.v", &fresh.phi)?,
            t: t("adam.t_phi"),
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.adam_eps,
        },
        siblings: BTreeMap::new(),
    })
}
