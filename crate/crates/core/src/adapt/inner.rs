use autograd::{grad_allow_unused, Tensor};

use super::Setup;
use crate::fusion::{fusion_forward, FusionOutput};
use crate::params::Bound;
use crate::segmodel::{forward, SegOutput};
use crate::{Error, Result};

/// Result of the inner loop.
pub struct Adapted<'a> {
    /// Adapted parameters; non-adaptive entries are the input tensors.
    pub theta: Bound<'a>,
    /// Per-frame predictions of the last inner iteration, before its update.
    pub frame_outputs: Vec<SegOutput>,
    /// Fusion output of the last inner iteration.
    pub fusion: FusionOutput,
    /// Learned loss at every inner iteration.
    pub learned_losses: Vec<f64>,
}

/// Runs `inner_steps` descent steps on the learned loss over `frames`
/// (image tensors, frame 0 first).
///
/// Only parameters whose group is adaptive under the configured variant and
/// that are bound as graph leaves move. With `create_graph` the update stays
/// differentiable in both parameter sets; without it the step direction is
/// a constant and only the identity path back to `theta` remains.
pub fn inner_adapt<'a>(
    setup: &Setup,
    theta: &Bound<'a>,
    phi: &Bound,
    frames: &[Tensor],
    create_graph: bool,
) -> Result<Adapted<'a>> {
    if frames.is_empty() {
        return Err(Error::Invalid("inner step needs at least one frame".into()));
    }
    let cfg = &setup.adapt;
    let mask = cfg.mask();
    let movable: Vec<usize> = theta
        .store
        .params()
        .iter()
        .enumerate()
        .filter(|(i, p)| mask.adaptive(p.group()) && theta.tensors[*i].requires_grad())
        .map(|(i, _)| i)
        .collect();

    let mut cur = theta.clone();
    let mut learned_losses = Vec::with_capacity(cfg.inner_steps);
    for step in 0..cfg.inner_steps {
        let outs = frames.iter().map(|f| forward(&setup.model, &cur, f)).collect::<Result<Vec<_>>>()?;
        let fusion = fusion_forward(&setup.fusion, phi, &outs)?;
        let value = fusion.learned_loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("learned loss at inner step {step}")));
        }
        learned_losses.push(value);
        let last = step + 1 == cfg.inner_steps;
        if cfg.alpha != 0.0 && !movable.is_empty() {
            let wrt: Vec<&Tensor> = movable.iter().map(|&i| &cur.tensors[i]).collect();
            let grads = grad_allow_unused(&fusion.learned_loss, &wrt, create_graph)?;
            let mut tensors = cur.tensors.clone();
            for (&i, g) in movable.iter().zip(&grads) {
                if g.data().iter().any(|v| !v.is_finite()) {
                    let p = &theta.store.params()[i];
                    return Err(Error::NonFinite(format!("inner gradient of group {} ({})", p.group(), p.name)));
                }
                let g = if create_graph { g.clone() } else { g.detach() };
                tensors[i] = cur.tensors[i].sub(&g.scale(cfg.alpha)?)?;
            }
            cur = cur.with_tensors(tensors);
        }
        if last {
            return Ok(Adapted { theta: cur, frame_outputs: outs, fusion, learned_losses });
        }
    }
    unreachable!("inner_steps validated positive")
}
