//! Miniature query-based mask-classification segmentation network.
//!
//! Conv backbone (five stride-2 convs, /32) -> FPN pixel decoder -> learned
//! queries refined by a transformer block over the 1/32 map -> multi-stage
//! decoder cross-attending to the 1/32, 1/16 and 1/8 maps in turn -> class
//! head and mask head. Mask logits are dot products between per-query mask
//! embeddings and per-pixel embeddings at 1/4 resolution.

use autograd::nn::{attention, conv2d, layer_norm, linear};
use autograd::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envsim::{Image, Mask};
use crate::params::{normal_vec, Bound, ParamStore};
use crate::{Error, Result};

pub const GROUPS: [&str; 7] =
    ["backbone", "pixel_decoder", "task_mlp", "transformer_block", "multistage_decoder", "class_head", "mask_head"];

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub queries: usize,
    /// Number of real classes; the class head has one extra no-object slot.
    pub classes: usize,
    pub width: usize,
    pub heads: usize,
    pub stages: usize,
    /// Input canvas `(H, W)`; both multiples of 32.
    pub input: (usize, usize),
    /// Class assigned by [`semantic_map`] where every class score is zero.
    pub fallback_class: u8,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { queries: 16, classes: 8, width: 64, heads: 4, stages: 3, input: (64, 64), fallback_class: 0 }
    }
}

impl ModelConfig {
    /// The small configuration used by gradient-check style tests.
    pub fn miniature() -> Self {
        ModelConfig { queries: 4, classes: 3, width: 16, heads: 2, stages: 2, input: (32, 32), fallback_class: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.queries == 0 || self.classes == 0 || self.stages == 0 || self.heads == 0 {
            return bad("queries, classes, stages and heads must be positive".into());
        }
        if self.classes > 255 {
            return bad(format!("at most 255 classes, got {}", self.classes));
        }
        if self.width == 0 || !self.width.is_multiple_of(8) || !self.width.is_multiple_of(self.heads) {
            return bad(format!("width {} must be a multiple of 8 and of heads {}", self.width, self.heads));
        }
        let (h, w) = self.input;
        if h == 0 || w == 0 || h % 32 != 0 || w % 32 != 0 {
            return bad(format!("input {h}x{w} must be a positive multiple of 32"));
        }
        Ok(())
    }

    /// Backbone widths: stem, then the four strided blocks.
    pub fn backbone_widths(&self) -> [usize; 5] {
        let d = self.width;
        [d / 4, 3 * d / 8, d / 2, 3 * d / 4, d]
    }

    pub fn mask_size(&self) -> (usize, usize) {
        (self.input.0 / 4, self.input.1 / 4)
    }

    fn ffn_width(&self) -> usize {
        2 * self.width
    }
}

/// Full prediction record of one forward pass.
#[derive(Clone)]
pub struct SegOutput {
    /// `[Q, C + 1]`, no-object last.
    pub class_logits: Tensor,
    /// `[Q, H/4, W/4]`.
    pub mask_logits: Tensor,
    /// `[Q, d]`, the residual stream entering the last feed-forward sublayer.
    pub mask_features: Tensor,
    /// `[d, H/32, W/32]`.
    pub feat_1_32: Tensor,
}

impl SegOutput {
    pub fn detach(&self) -> SegOutput {
        SegOutput {
            class_logits: self.class_logits.detach(),
            mask_logits: self.mask_logits.detach(),
            mask_features: self.mask_features.detach(),
            feat_1_32: self.feat_1_32.detach(),
        }
    }
}

fn attn_params(s: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, d: usize) {
    for p in ["q", "k", "v", "o"] {
        s.init_linear(rng, &format!("{name}.{p}"), d, d);
    }
}

/// Deterministic initialization from `(config, seed)`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    let d = cfg.width;
    let c = cfg.backbone_widths();

    s.init_conv(&mut rng, "backbone/stem", 3, c[0]);
    for i in 1..5 {
        s.init_conv(&mut rng, &format!("backbone/block{i}"), c[i - 1], c[i]);
    }

    for (i, &cin) in c[1..].iter().enumerate() {
        let name = format!("pixel_decoder/lat{}", i + 2);
        s.push(format!("{name}.w"), &[d, cin], normal_vec(&mut rng, d * cin, cin));
        s.push(format!("{name}.b"), &[d], vec![0.0; d]);
    }
    s.init_conv(&mut rng, "pixel_decoder/out32", d, d);
    s.push("pixel_decoder/mask_proj.w", &[d, d], normal_vec(&mut rng, d * d, d));
    s.push("pixel_decoder/mask_proj.b", &[d], vec![0.0; d]);

    s.push("task_mlp/token", &[1, d], normal_vec(&mut rng, d, 1));
    s.init_linear(&mut rng, "task_mlp/fc1", d, d);
    s.init_linear(&mut rng, "task_mlp/fc2", d, d);

    s.push("transformer_block/queries", &[cfg.queries, d], normal_vec(&mut rng, cfg.queries * d, 1));
    attn_params(&mut s, &mut rng, "transformer_block/self", d);
    s.init_layer_norm("transformer_block/ln1", d);
    attn_params(&mut s, &mut rng, "transformer_block/cross", d);
    s.init_layer_norm("transformer_block/ln2", d);
    s.init_linear(&mut rng, "transformer_block/ffn1", d, cfg.ffn_width());
    s.init_linear(&mut rng, "transformer_block/ffn2", cfg.ffn_width(), d);
    s.init_layer_norm("transformer_block/ln3", d);

    for st in 0..cfg.stages {
        let p = format!("multistage_decoder/stage{st}");
        attn_params(&mut s, &mut rng, &format!("{p}.cross"), d);
        s.init_layer_norm(&format!("{p}.ln_cross"), d);
        attn_params(&mut s, &mut rng, &format!("{p}.self"), d);
        s.init_layer_norm(&format!("{p}.ln_self"), d);
        s.init_linear(&mut rng, &format!("{p}.ffn1"), d, cfg.ffn_width());
        s.init_linear(&mut rng, &format!("{p}.ffn2"), cfg.ffn_width(), d);
        s.init_layer_norm(&format!("{p}.ln_ffn"), d);
    }

    s.init_linear(&mut rng, "class_head/fc", d, cfg.classes + 1);
    // Class logits start out roughly standard normal; the extra 0.5 offsets
    // E[exp(z)] = exp(1/2) so the mean no-object probability lands near 0.9.
    let b = s.get_mut("class_head/fc.b").expect("just pushed");
    b.data[cfg.classes] = (9.0 * cfg.classes as f64).ln() + 0.5;

    s.init_linear(&mut rng, "mask_head/fc1", d, d);
    s.init_linear(&mut rng, "mask_head/fc2", d, d);
    Ok(s)
}

/// Fixed 2-D sinusoidal encoding `[h*w, d]`: the first half of the channels
/// encodes the row, the second half the column.
pub fn position_encoding(h: usize, w: usize, d: usize) -> Tensor {
    let half = d / 2;
    let mut out = vec![0.0; h * w * d];
    for y in 0..h {
        for x in 0..w {
            let row = &mut out[(y * w + x) * d..(y * w + x + 1) * d];
            for (offset, pos) in [(0, y), (half, x)] {
                for k in 0..half / 2 {
                    let freq = 1.0 / 100f64.powf(2.0 * k as f64 / half as f64);
                    row[offset + 2 * k] = (pos as f64 * freq).sin();
                    row[offset + 2 * k + 1] = (pos as f64 * freq).cos();
                }
            }
        }
    }
    Tensor::constant(out, &[h * w, d]).expect("sized above")
}

fn conv1x1(p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let wt = p.t(&format!("{name}.w"));
    let out = wt.shape()[0];
    let y = wt.matmul(&x.reshape(&[c, h * w])?)?;
    Ok(y.add(&p.t(&format!("{name}.b")).broadcast_axis(1, h * w)?)?.reshape(&[out, h, w])?)
}

fn lin(p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    Ok(linear(x, p.t(&format!("{name}.w")), Some(p.t(&format!("{name}.b"))))?)
}

fn ln(p: &Bound, name: &str, x: &Tensor) -> Result<Tensor> {
    Ok(layer_norm(x, p.t(&format!("{name}.g")), p.t(&format!("{name}.b")), LN_EPS)?)
}

/// Multi-head attention with input/output projections. Positional encodings,
/// when given, are added to keys only.
pub(crate) fn mha(
    p: &Bound,
    name: &str,
    q: &Tensor,
    kv: &Tensor,
    key_pos: Option<&Tensor>,
    heads: usize,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    let k_in = match key_pos {
        Some(pos) => kv.add(pos)?,
        None => kv.clone(),
    };
    let qp = lin(p, &format!("{name}.q"), q)?;
    let kp = lin(p, &format!("{name}.k"), &k_in)?;
    let vp = lin(p, &format!("{name}.v"), kv)?;
    lin(p, &format!("{name}.o"), &attention(&qp, &kp, &vp, heads, mask)?)
}

fn ffn(p: &Bound, prefix: &str, x: &Tensor) -> Result<Tensor> {
    lin(p, &format!("{prefix}ffn2"), &lin(p, &format!("{prefix}ffn1"), x)?.gelu()?)
}

/// `[d, h, w]` feature map as `[h*w, d]` tokens.
fn tokens(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    Ok(x.reshape(&[c, h * w])?.transpose_last()?)
}

pub fn forward(cfg: &ModelConfig, p: &Bound, image: &Tensor) -> Result<SegOutput> {
    let (h, w) = cfg.input;
    if image.shape() != [3, h, w] {
        return Err(Error::Invalid(format!(
            "image shape {:?} does not match model input [3, {h}, {w}]",
            image.shape()
        )));
    }
    let d = cfg.width;

    // backbone: stride 2 at every stage
    let conv = |name: &str, x: &Tensor| -> Result<Tensor> {
        Ok(conv2d(x, p.t(&format!("{name}.w")), Some(p.t(&format!("{name}.b"))), 2)?.gelu()?)
    };
    let c1 = conv("backbone/stem", image)?;
    let c2 = conv("backbone/block1", &c1)?; // 1/4
    let c3 = conv("backbone/block2", &c2)?; // 1/8
    let c4 = conv("backbone/block3", &c3)?; // 1/16
    let c5 = conv("backbone/block4", &c4)?; // 1/32

    // pixel decoder
    let lat5 = conv1x1(p, "pixel_decoder/lat5", &c5)?;
    let feat32 = conv2d(&lat5, p.t("pixel_decoder/out32.w"), Some(p.t("pixel_decoder/out32.b")), 1)?.gelu()?;
    let p16 = conv1x1(p, "pixel_decoder/lat4", &c4)?.add(&feat32.upsample2()?)?;
    let p8 = conv1x1(p, "pixel_decoder/lat3", &c3)?.add(&p16.upsample2()?)?;
    let p4 = conv1x1(p, "pixel_decoder/lat2", &c2)?.add(&p8.upsample2()?)?;
    let pixel = conv1x1(p, "pixel_decoder/mask_proj", &p4.gelu()?)?;
    let (h4, w4) = (pixel.shape()[1], pixel.shape()[2]);
    let pixel = pixel.reshape(&[d, h4 * w4])?;

    let scales = [&feat32, &p16, &p8];
    let scale_tokens = scales.iter().map(|m| tokens(m)).collect::<Result<Vec<_>>>()?;
    let scale_pos: Vec<Tensor> = scales.iter().map(|m| position_encoding(m.shape()[1], m.shape()[2], d)).collect();

    // learned queries conditioned on the task embedding
    let task = lin(p, "task_mlp/fc2", &lin(p, "task_mlp/fc1", p.t("task_mlp/token"))?.gelu()?)?;
    let mut q = p.t("transformer_block/queries").add(&task.reshape(&[d])?.broadcast_axis(0, cfg.queries)?)?;

    let tb = "transformer_block";
    q = ln(p, &format!("{tb}/ln1"), &q.add(&mha(p, &format!("{tb}/self"), &q, &q, None, cfg.heads, None)?)?)?;
    let cross = mha(p, &format!("{tb}/cross"), &q, &scale_tokens[0], Some(&scale_pos[0]), cfg.heads, None)?;
    q = ln(p, &format!("{tb}/ln2"), &q.add(&cross)?)?;
    q = ln(p, &format!("{tb}/ln3"), &q.add(&ffn(p, &format!("{tb}/"), &q)?)?)?;

    let mut mask_features = q.clone();
    for st in 0..cfg.stages {
        let pre = format!("multistage_decoder/stage{st}");
        let lvl = st % 3;
        let cross = mha(p, &format!("{pre}.cross"), &q, &scale_tokens[lvl], Some(&scale_pos[lvl]), cfg.heads, None)?;
        q = ln(p, &format!("{pre}.ln_cross"), &q.add(&cross)?)?;
        q = ln(p, &format!("{pre}.ln_self"), &q.add(&mha(p, &format!("{pre}.self"), &q, &q, None, cfg.heads, None)?)?)?;
        mask_features = q.clone();
        q = ln(p, &format!("{pre}.ln_ffn"), &q.add(&ffn(p, &format!("{pre}."), &q)?)?)?;
    }

    let class_logits = lin(p, "class_head/fc", &q)?;
    let mask_embed = lin(p, "mask_head/fc2", &lin(p, "mask_head/fc1", &q)?.gelu()?)?;
    let mask_logits = mask_embed.matmul(&pixel)?.reshape(&[cfg.queries, h4, w4])?;
    Ok(SegOutput { class_logits, mask_logits, mask_features, feat_1_32: feat32 })
}

/// Places `image` at the top-left of the model canvas as `[3, H, W]` in
/// `[0, 1]`, zero padding the remainder.
pub fn image_tensor(cfg: &ModelConfig, image: &Image) -> Result<Tensor> {
    let (h, w) = cfg.input;
    if image.height > h || image.width > w {
        return Err(Error::Invalid(format!("{}x{} image does not fit the {w}x{h} canvas", image.width, image.height)));
    }
    let mut out = vec![0.0; 3 * h * w];
    for y in 0..image.height {
        for x in 0..image.width {
            for c in 0..3 {
                out[c * h * w + y * w + x] = image.rgb[(y * image.width + x) * 3 + c] as f64 / 255.0;
            }
        }
    }
    Ok(Tensor::constant(out, &[3, h, w])?)
}

/// Per-pixel class map at full canvas resolution, cropped to `(width, height)`.
///
/// Each 1/4-resolution cell takes the argmax over real classes of
/// `sum_q softmax(class_logits_q)[c] * sigmoid(mask_logits_q)` and is
/// replicated over its 4x4 block.
pub fn semantic_map(cfg: &ModelConfig, out: &SegOutput, width: usize, height: usize) -> Mask {
    let (q, k) = (out.class_logits.shape()[0], out.class_logits.shape()[1]);
    let classes = k - 1;
    let (h4, w4) = (out.mask_logits.shape()[1], out.mask_logits.shape()[2]);
    let logits = out.class_logits.data();
    let probs: Vec<f64> = (0..q)
        .flat_map(|i| {
            let row = &logits[i * k..(i + 1) * k];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            row.iter().map(move |v| (v - m).exp() / z).collect::<Vec<_>>()
        })
        .collect();
    let masks: Vec<f64> = out.mask_logits.data().iter().map(|&v| autograd::kernels::sigmoid(v)).collect();
    let mut cell = vec![cfg.fallback_class; h4 * w4];
    for (pix, slot) in cell.iter_mut().enumerate() {
        let mut best = (0.0, cfg.fallback_class);
        for c in 0..classes {
            let score: f64 = (0..q).map(|i| probs[i * k + c] * masks[i * h4 * w4 + pix]).sum();
            if score > best.0 {
                best = (score, c as u8);
            }
        }
        *slot = best.1;
    }
    let labels = (0..height).flat_map(|y| (0..width).map(move |x| (y, x))).map(|(y, x)| {
        let (cy, cx) = ((y / 4).min(h4 - 1), (x / 4).min(w4 - 1));
        cell[cy * w4 + cx]
    });
    Mask { width, height, labels: labels.collect() }
}

/// No-object probability of every query.
pub fn no_object_probability(out: &SegOutput) -> Vec<f64> {
    let k = out.class_logits.shape()[1];
    out.class_logits
        .data()
        .chunks(k)
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            (row[k - 1] - m).exp() / z
        })
        .collect()
}

/// Checkpoint metadata describing the architecture.
pub fn model_meta(cfg: &ModelConfig) -> Vec<(String, String)> {
    vec![
        ("model.queries".into(), cfg.queries.to_string()),
        ("model.classes".into(), cfg.classes.to_string()),
        ("model.width".into(), cfg.width.to_string()),
        ("model.heads".into(), cfg.heads.to_string()),
        ("model.stages".into(), cfg.stages.to_string()),
        ("model.input".into(), format!("{}x{}", cfg.input.0, cfg.input.1)),
    ]
}

pub fn model_config_from_meta(meta: &[(String, String)]) -> std::result::Result<ModelConfig, String> {
    let get = |k: &str| meta.iter().find(|(m, _)| m == k).map(|(_, v)| v.clone()).ok_or(format!("missing {k}"));
    let num = |k: &str| get(k)?.parse::<usize>().map_err(|_| format!("bad {k}"));
    let input = get("model.input")?;
    let (h, w) = input.split_once('x').ok_or("bad model.input")?;
    Ok(ModelConfig {
        queries: num("model.queries")?,
        classes: num("model.classes")?,
        width: num("model.width")?,
        heads: num("model.heads")?,
        stages: num("model.stages")?,
        input: (h.parse().map_err(|_| "bad model.input")?, w.parse().map_err(|_| "bad model.input")?),
        fallback_class: 0,
    })
}
