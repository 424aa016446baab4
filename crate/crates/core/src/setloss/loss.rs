use autograd::kernels::{sigmoid, softplus};
use autograd::Tensor;

use super::hungarian::{hungarian, MatchResult};
use crate::envsim::{Mask, UNLABELED};
use crate::segmodel::SegOutput;
use crate::{Error, Result};

/// Logits are clamped to `[-LOGIT_CLAMP, LOGIT_CLAMP]` before every loss term.
pub const LOGIT_CLAMP: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub bce: f64,
    pub dice: f64,
    pub no_object: f64,
    /// Additive smoothing in the Dice numerator and denominator.
    pub dice_smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { cls: 2.0, bce: 5.0, dice: 5.0, no_object: 0.1, dice_smooth: 1.0 }
    }
}

/// One binary target per semantic class present, at mask resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetSet {
    pub classes: Vec<usize>,
    /// `{0, 1}` masks, row-major `[h, w]`, zero on invalid pixels.
    pub masks: Vec<Vec<f64>>,
    /// 1 where the ground truth is labelled.
    pub valid: Vec<f64>,
    pub size: (usize, usize),
}

impl TargetSet {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Builds targets on an `(h, w)` grid from a full-resolution mask by nearest
/// sampling of pixel `(4i + 2, 4j + 2)`. Cells that fall outside the mask
/// (canvas padding) are invalid.
pub fn targets_from_mask(mask: &Mask, size: (usize, usize), classes: usize) -> TargetSet {
    let (h, w) = size;
    let mut labels = vec![UNLABELED; h * w];
    for i in 0..h {
        for j in 0..w {
            let (y, x) = (4 * i + 2, 4 * j + 2);
            if y < mask.height && x < mask.width {
                labels[i * w + j] = mask.labels[y * mask.width + x];
            }
        }
    }
    let valid: Vec<f64> = labels.iter().map(|&l| if (l as usize) < classes { 1.0 } else { 0.0 }).collect();
    let mut set = TargetSet { classes: vec![], masks: vec![], valid, size };
    for c in 0..classes {
        if labels.iter().any(|&l| l as usize == c) {
            set.classes.push(c);
            set.masks.push(labels.iter().map(|&l| if l as usize == c { 1.0 } else { 0.0 }).collect());
        }
    }
    set
}

#[derive(Clone)]
pub struct LossBreakdown {
    pub cls: Tensor,
    pub bce: Tensor,
    pub dice: Tensor,
    pub total: Tensor,
    pub matching: MatchResult,
}

impl LossBreakdown {
    /// `(cls, bce, dice, total)` as plain numbers.
    pub fn values(&self) -> (f64, f64, f64, f64) {
        (self.cls.item(), self.bce.item(), self.dice.item(), self.total.item())
    }
}

/// Upper bound on the loss of a perfect prediction whose logits saturate at
/// the clamp, for `k` class slots and `pixels` mask cells.
pub fn saturation_bound(w: &LossWeights, k: usize, pixels: usize) -> f64 {
    let ce = ((k - 1) as f64 * (-2.0 * LOGIT_CLAMP).exp()).ln_1p();
    let bce = softplus(-LOGIT_CLAMP);
    // every cell is off by at most sigmoid(-clamp); the target has >= 1 cell
    let dice = pixels as f64 * sigmoid(-LOGIT_CLAMP);
    w.cls * ce + w.bce * bce + w.dice * dice
}

fn clamp(x: f64) -> f64 {
    x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
}

/// Pairwise matching cost `[Q, |targets|]` from detached predictions.
pub fn match_cost(out: &SegOutput, targets: &TargetSet, w: &LossWeights) -> Result<Vec<Vec<f64>>> {
    if targets.is_empty() {
        return Err(Error::Invalid("empty target set".into()));
    }
    let (q, k) = (out.class_logits.shape()[0], out.class_logits.shape()[1]);
    let hw = targets.size.0 * targets.size.1;
    if out.mask_logits.numel() != q * hw {
        return Err(Error::Invalid(format!(
            "mask logits {:?} do not match target size {:?}",
            out.mask_logits.shape(),
            targets.size
        )));
    }
    let logits = out.class_logits.data();
    let masks = out.mask_logits.data();
    let n_valid: f64 = targets.valid.iter().sum::<f64>().max(1.0);
    let mut cost = vec![vec![0.0; targets.len()]; q];
    for (i, row) in cost.iter_mut().enumerate() {
        let lr: Vec<f64> = logits[i * k..(i + 1) * k].iter().map(|&v| clamp(v)).collect();
        let mx = lr.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + lr.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        let ml = &masks[i * hw..(i + 1) * hw];
        for (t, slot) in row.iter_mut().enumerate() {
            let g = &targets.masks[t];
            let (mut bce, mut inter, mut psum, mut gsum) = (0.0, 0.0, 0.0, 0.0);
            for p in 0..hw {
                if targets.valid[p] == 0.0 {
                    continue;
                }
                let x = clamp(ml[p]);
                bce += softplus(x) - x * g[p];
                let s = sigmoid(x);
                inter += s * g[p];
                psum += s;
                gsum += g[p];
            }
            let sm = w.dice_smooth;
            let dice = 1.0 - (2.0 * inter + sm) / (psum + gsum + sm);
            *slot = w.cls * (lse - lr[targets.classes[t]]) + w.bce * bce / n_valid + w.dice * dice;
        }
    }
    Ok(cost)
}

/// Hungarian-matched loss. The matching is computed on detached values and
/// enters the graph only as constant indices.
pub fn segm_loss(out: &SegOutput, targets: &TargetSet, w: &LossWeights) -> Result<LossBreakdown> {
    let matching =
        if targets.is_empty() { MatchResult { pairs: vec![] } } else { hungarian(&match_cost(out, targets, w)?)? };
    matched_loss(out, targets, w, matching)
}

/// Loss for a given matching.
pub fn matched_loss(
    out: &SegOutput,
    targets: &TargetSet,
    w: &LossWeights,
    matching: MatchResult,
) -> Result<LossBreakdown> {
    let (q, k) = (out.class_logits.shape()[0], out.class_logits.shape()[1]);
    let hw = targets.size.0 * targets.size.1;

    // weighted cross-entropy, averaged over all queries
    let mut sel = vec![0.0; q * k];
    let assigned = matching.target_of(q);
    for (i, t) in assigned.iter().enumerate() {
        match t {
            Some(t) => sel[i * k + targets.classes[*t]] = 1.0,
            None => sel[i * k + k - 1] = w.no_object,
        }
    }
    let logp = out.class_logits.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)?.log_softmax()?;
    let cls = logp.mul(&Tensor::constant(sel, &[q, k])?)?.sum()?.scale(-1.0 / q as f64)?;

    let (bce, dice) = if matching.pairs.is_empty() {
        (Tensor::scalar(0.0), Tensor::scalar(0.0))
    } else {
        let m = matching.pairs.len();
        let rows: Vec<usize> = matching.pairs.iter().map(|&(qi, _)| qi).collect();
        let x = out.mask_logits.reshape(&[q, hw])?.gather_rows(&rows)?.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)?;
        let gt: Vec<f64> = matching.pairs.iter().flat_map(|&(_, t)| targets.masks[t].iter().copied()).collect();
        let gt = Tensor::constant(gt, &[m, hw])?;
        let valid_rows: Vec<f64> = (0..m).flat_map(|_| targets.valid.iter().copied()).collect();
        let valid = Tensor::constant(valid_rows, &[m, hw])?;
        let n_valid = targets.valid.iter().sum::<f64>().max(1.0);

        let bce = x.softplus()?.sub(&x.mul(&gt)?)?.mul(&valid)?.sum()?.scale(1.0 / (n_valid * m as f64))?;

        let s = x.sigmoid()?.mul(&valid)?;
        let sm = w.dice_smooth;
        let num = s.mul(&gt)?.sum_axis(1)?.scale(2.0)?.add_scalar(sm)?;
        let gsum: Vec<f64> = matching.pairs.iter().map(|&(_, t)| targets.masks[t].iter().sum::<f64>()).collect();
        let den = s.sum_axis(1)?.add(&Tensor::constant(gsum, &[m])?)?.add_scalar(sm)?;
        let dice = num.div(&den)?.neg()?.add_scalar(1.0)?.mean()?;
        (bce, dice)
    };
    let total = cls.scale(w.cls)?.add(&bce.scale(w.bce)?)?.add(&dice.scale(w.dice)?)?;
    Ok(LossBreakdown { cls, bce, dice, total, matching })
}
