//! Multi-frame fusion transformer producing the learned adaptation loss.
//!
//! Each frame contributes spatial tokens (its 1/32 feature map, projected)
//! and one prediction token per query. Learned frame-index and token-type
//! embeddings are added, then either a latent-query decoder (fixed sequence
//! length) or a causal self-attention stack (any length up to the maximum)
//! mixes the tokens. Small MLP heads read the pooled state.

mod pca;

use std::fmt;
use std::str::FromStr;

use autograd::nn::{attention, causal_mask, layer_norm, linear};
use autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envsim::Action;
use crate::params::{normal_vec, Bound, ParamStore};
use crate::segmodel::{ModelConfig, SegOutput};
use crate::{Error, Result};

pub use pca::{canonical_sign, pca_embeddings, symmetric_eigen, PcaResult};

pub const GROUPS: [&str; 7] = [
    "image_feature_embedder",
    "prediction_embedder",
    "transformer",
    "loss_decoder",
    "action_decoder",
    "logits_decoder",
    "masks_decoder",
];

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedderVariant {
    /// One linear layer over (mask logits, class logits, mask features).
    Vanilla,
    /// Two-layer MLP over (mask features, class logits) only.
    Mlp,
}

impl EmbedderVariant {
    pub fn tag(self) -> &'static str {
        match self {
            EmbedderVariant::Vanilla => "vanilla",
            EmbedderVariant::Mlp => "mlp",
        }
    }
}

impl fmt::Display for EmbedderVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for EmbedderVariant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" => Ok(EmbedderVariant::Vanilla),
            "mlp" => Ok(EmbedderVariant::Mlp),
            _ => Err(format!("unknown embedder {s:?} (vanilla, mlp)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    /// Latent-query decoder over a fixed number of frames.
    FixedLengthDecoder,
    /// Causal self-attention over any number of frames.
    Causal,
}

impl FusionMode {
    pub fn tag(self) -> &'static str {
        match self {
            FusionMode::FixedLengthDecoder => "decoder",
            FusionMode::Causal => "causal",
        }
    }
}

impl FromStr for FusionMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "decoder" => Ok(FusionMode::FixedLengthDecoder),
            "causal" => Ok(FusionMode::Causal),
            _ => Err(format!("unknown fusion mode {s:?} (decoder, causal)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    pub latents: usize,
    pub embedder: EmbedderVariant,
    pub mode: FusionMode,
    /// Frame count the decoder mode expects (1 + additional frames).
    pub frames: usize,
    /// Size of the frame-index embedding table.
    pub max_frames: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            width: 64,
            layers: 2,
            heads: 4,
            latents: 8,
            embedder: EmbedderVariant::Mlp,
            mode: FusionMode::FixedLengthDecoder,
            frames: 2,
            max_frames: 5,
        }
    }
}

impl FusionConfig {
    pub fn miniature() -> Self {
        FusionConfig { width: 8, layers: 1, heads: 2, latents: 2, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("fusion width {} not divisible by {} heads", self.width, self.heads)));
        }
        if self.layers == 0 || self.latents == 0 {
            return Err(Error::Config("fusion layers and latents must be positive".into()));
        }
        if self.frames == 0 || self.frames > self.max_frames {
            return Err(Error::Config(format!("fusion frames {} not in 1..={}", self.frames, self.max_frames)));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct FusionOutput {
    /// Scalar, non-negative.
    pub learned_loss: Tensor,
    /// `[5]`, indexed by [`Action::index`].
    pub action_logits: Tensor,
    /// `[Q, C + 1]`.
    pub aux_logits: Tensor,
    /// `[Q, H/4, W/4]`.
    pub aux_masks: Tensor,
}

/// Token sequence for one set of frames.
#[derive(Clone)]
pub struct FrameTokens {
    /// `[frames * (spatial + Q), width]`, frame-major.
    pub tokens: Tensor,
    /// Raw prediction-embedder output per frame, `[Q, width]`.
    pub predictions: Vec<Tensor>,
    pub frames: usize,
    pub spatial: usize,
    pub queries: usize,
}

fn prediction_input_width(model: &ModelConfig, variant: EmbedderVariant) -> usize {
    let (h4, w4) = model.mask_size();
    match variant {
        EmbedderVariant::Vanilla => h4 * w4 + model.classes + 1 + model.width,
        EmbedderVariant::Mlp => model.width + model.classes + 1,
    }
}

fn attn_params(s: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, f: usize) {
    for p in ["q", "k", "v", "o"] {
        s.init_linear(rng, &format!("{name}.{p}"), f, f);
    }
}

pub fn init_fusion(cfg: &FusionConfig, model: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf0_5e);
    let mut s = ParamStore::new();
    let f = cfg.width;
    let k = model.classes + 1;

    s.init_linear(&mut rng, "image_feature_embedder/proj", model.width, f);
    let fin = prediction_input_width(model, cfg.embedder);
    match cfg.embedder {
        EmbedderVariant::Vanilla => s.init_linear(&mut rng, "prediction_embedder/proj", fin, f),
        EmbedderVariant::Mlp => {
            s.init_linear(&mut rng, "prediction_embedder/fc1", fin, f);
            s.init_linear(&mut rng, "prediction_embedder/fc2", f, f);
        }
    }

    s.push("transformer/frame_index", &[cfg.max_frames, f], normal_vec(&mut rng, cfg.max_frames * f, 1));
    s.push("transformer/token_type", &[2, f], normal_vec(&mut rng, 2 * f, 1));
    if cfg.mode == FusionMode::FixedLengthDecoder {
        s.push("transformer/latents", &[cfg.latents, f], normal_vec(&mut rng, cfg.latents * f, 1));
    }
    for l in 0..cfg.layers {
        let p = format!("transformer/layer{l}");
        if cfg.mode == FusionMode::FixedLengthDecoder {
            attn_params(&mut s, &mut rng, &format!("{p}.cross"), f);
            s.init_layer_norm(&format!("{p}.ln_cross"), f);
        }
        attn_params(&mut s, &mut rng, &format!("{p}.self"), f);
        s.init_layer_norm(&format!("{p}.ln_self"), f);
        s.init_linear(&mut rng, &format!("{p}.ffn1"), f, 2 * f);
        s.init_linear(&mut rng, &format!("{p}.ffn2"), 2 * f, f);
        s.init_layer_norm(&format!("{p}.ln_ffn"), f);
    }

    for (head, out) in [("loss_decoder", 1), ("action_decoder", Action::ALL.len())] {
        s.init_linear(&mut rng, &format!("{head}/fc1"), f, f);
        s.init_linear(&mut rng, &format!("{head}/fc2"), f, out);
    }
    s.init_linear(&mut rng, "logits_decoder/fc", f, k);
    s.init_linear(&mut rng, "masks_decoder/fc", f, 1);
    Ok(s)
}

fn lin(p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    Ok(linear(x, p.t(&format!("{name}.w")), Some(p.t(&format!("{name}.b"))))?)
}

fn ln(p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    Ok(layer_norm(x, p.t(&format!("{name}.g")), p.t(&format!("{name}.b")), LN_EPS)?)
}

fn mha(p: &Bound, name: &str, q: &Tensor, kv: &Tensor, heads: usize, mask: Option<&Tensor>) -> Result<Tensor> {
    let qp = lin(p, &format!("{name}.q"), q)?;
    let kp = lin(p, &format!("{name}.k"), kv)?;
    let vp = lin(p, &format!("{name}.v"), kv)?;
    lin(p, &format!("{name}.o"), &attention(&qp, &kp, &vp, heads, mask)?)
}

/// Prediction-embedder output `[Q, width]` for one frame.
pub fn embed_predictions(cfg: &FusionConfig, p: &Bound, out: &SegOutput) -> Result<Tensor> {
    let q = out.class_logits.shape()[0];
    let input = match cfg.embedder {
        EmbedderVariant::Vanilla => {
            let masks = out.mask_logits.reshape(&[q, out.mask_logits.numel() / q])?;
            Tensor::concat(&[&masks, &out.class_logits, &out.mask_features], 1)?
        }
        EmbedderVariant::Mlp => Tensor::concat(&[&out.mask_features, &out.class_logits], 1)?,
    };
    match cfg.embedder {
        EmbedderVariant::Vanilla => lin(p, "prediction_embedder/proj", &input),
        EmbedderVariant::Mlp => lin(p, "prediction_embedder/fc2", &lin(p, "prediction_embedder/fc1", &input)?.gelu()?),
    }
}

pub fn embed_frames(cfg: &FusionConfig, p: &Bound, outs: &[SegOutput]) -> Result<FrameTokens> {
    let first = outs.first().ok_or_else(|| Error::Invalid("fusion needs at least one frame".into()))?;
    if outs.len() > cfg.max_frames {
        return Err(Error::Invalid(format!("{} frames exceed the maximum of {}", outs.len(), cfg.max_frames)));
    }
    for o in outs {
        if o.feat_1_32.shape() != first.feat_1_32.shape() || o.class_logits.shape() != first.class_logits.shape() {
            return Err(Error::Invalid("frames have inconsistent output shapes".into()));
        }
    }
    let f = cfg.width;
    let fs = first.feat_1_32.shape();
    let (spatial, q) = (fs[1] * fs[2], first.class_logits.shape()[0]);
    let frame_index = p.t("transformer/frame_index");
    let token_type = p.t("transformer/token_type");
    let mut parts = Vec::with_capacity(2 * outs.len());
    let mut predictions = Vec::with_capacity(outs.len());
    for (i, o) in outs.iter().enumerate() {
        let fe = frame_index.slice(0, i, 1)?.reshape(&[f])?;
        let sp = o.feat_1_32.reshape(&[fs[0], spatial])?.transpose_last()?;
        let sp = lin(p, "image_feature_embedder/proj", &sp)?;
        let sp_bias = fe.add(&token_type.slice(0, 0, 1)?.reshape(&[f])?)?.broadcast_axis(0, spatial)?;
        parts.push(sp.add(&sp_bias)?);
        let pred = embed_predictions(cfg, p, o)?;
        let pr_bias = fe.add(&token_type.slice(0, 1, 1)?.reshape(&[f])?)?.broadcast_axis(0, q)?;
        parts.push(pred.add(&pr_bias)?);
        predictions.push(pred);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Ok(FrameTokens { tokens: Tensor::concat(&refs, 0)?, predictions, frames: outs.len(), spatial, queries: q })
}

fn head(p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    lin(p, &format!("{name}/fc2"), &lin(p, &format!("{name}/fc1"), x)?.gelu()?)
}

/// Runs the transformer and the heads. `first` supplies frame 0's
/// predictions for the auxiliary heads.
pub fn fuse(cfg: &FusionConfig, p: &Bound, toks: &FrameTokens, first: &SegOutput) -> Result<FusionOutput> {
    let n = toks.tokens.shape()[0];
    let pooled = match cfg.mode {
        FusionMode::FixedLengthDecoder => {
            if toks.frames != cfg.frames {
                return Err(Error::Invalid(format!(
                    "decoder mode expects {} frames, got {}; use causal mode for variable length",
                    cfg.frames, toks.frames
                )));
            }
            let mut x = p.t("transformer/latents").clone();
            for l in 0..cfg.layers {
                let pre = format!("transformer/layer{l}");
                let c = mha(p, &format!("{pre}.cross"), &x, &toks.tokens, cfg.heads, None)?;
                x = ln(p, &format!("{pre}.ln_cross"), &x.add(&c)?)?;
                let s = mha(p, &format!("{pre}.self"), &x, &x, cfg.heads, None)?;
                x = ln(p, &format!("{pre}.ln_self"), &x.add(&s)?)?;
                let h = lin(p, &format!("{pre}.ffn2"), &lin(p, &format!("{pre}.ffn1"), &x)?.gelu()?)?;
                x = ln(p, &format!("{pre}.ln_ffn"), &x.add(&h)?)?;
            }
            x.sum_axis(0)?.scale(1.0 / cfg.latents as f64)?
        }
        FusionMode::Causal => {
            let mask = causal_mask(n);
            let mut x = toks.tokens.clone();
            for l in 0..cfg.layers {
                let pre = format!("transformer/layer{l}");
                let s = mha(p, &format!("{pre}.self"), &x, &x, cfg.heads, Some(&mask))?;
                x = ln(p, &format!("{pre}.ln_self"), &x.add(&s)?)?;
                let h = lin(p, &format!("{pre}.ffn2"), &lin(p, &format!("{pre}.ffn1"), &x)?.gelu()?)?;
                x = ln(p, &format!("{pre}.ln_ffn"), &x.add(&h)?)?;
            }
            x.sum_axis(0)?.scale(1.0 / n as f64)?
        }
    };
    let pooled = pooled.reshape(&[1, cfg.width])?;
    let learned_loss = head(p, "loss_decoder", &pooled)?.softplus()?.reshape(&[])?;
    let action_logits = head(p, "action_decoder", &pooled)?.reshape(&[Action::ALL.len()])?;

    // auxiliary heads refine frame 0's predictions from its prediction tokens
    let q = toks.queries;
    let ctx = toks.predictions[0].add(&pooled.reshape(&[cfg.width])?.broadcast_axis(0, q)?)?;
    let aux_logits = first.class_logits.add(&lin(p, "logits_decoder/fc", &ctx)?)?;
    let ms = first.mask_logits.shape().to_vec();
    let cells = ms[1] * ms[2];
    let bias = lin(p, "masks_decoder/fc", &ctx)?.reshape(&[q])?.broadcast_axis(1, cells)?.reshape(&ms)?;
    let aux_masks = first.mask_logits.add(&bias)?;
    Ok(FusionOutput { learned_loss, action_logits, aux_logits, aux_masks })
}

/// Embeds and fuses in one call.
pub fn fusion_forward(cfg: &FusionConfig, p: &Bound, outs: &[SegOutput]) -> Result<FusionOutput> {
    let toks = embed_frames(cfg, p, outs)?;
    fuse(cfg, p, &toks, &outs[0])
}

pub fn fusion_meta(cfg: &FusionConfig) -> Vec<(String, String)> {
    vec![
        ("fusion.width".into(), cfg.width.to_string()),
        ("fusion.layers".into(), cfg.layers.to_string()),
        ("fusion.heads".into(), cfg.heads.to_string()),
        ("fusion.latents".into(), cfg.latents.to_string()),
        ("fusion.embedder".into(), cfg.embedder.tag().into()),
        ("fusion.mode".into(), cfg.mode.tag().into()),
        ("fusion.frames".into(), cfg.frames.to_string()),
        ("fusion.max_frames".into(), cfg.max_frames.to_string()),
    ]
}
