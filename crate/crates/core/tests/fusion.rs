use adaptseg::fusion::{
    canonical_sign, embed_frames, fusion_forward, init_fusion, pca_embeddings, EmbedderVariant, FusionConfig,
    FusionMode,
};
use adaptseg::params::ParamStore;
use adaptseg::segmodel::{forward, init_params, ModelConfig, SegOutput, GROUPS};
use autograd::{grad_allow_unused, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(cfg: &ModelConfig, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = cfg.input;
    Tensor::constant((0..3 * h * w).map(|_| rng.gen::<f64>()).collect(), &[3, h, w]).unwrap()
}

fn outputs(cfg: &ModelConfig, store: &ParamStore, n: usize) -> Vec<SegOutput> {
    let b = store.constants();
    (0..n).map(|i| forward(cfg, &b, &image(cfg, 100 + i as u64)).unwrap()).collect()
}

fn learned_loss(f: &FusionConfig, phi: &ParamStore, outs: &[SegOutput]) -> f64 {
    fusion_forward(f, &phi.constants(), outs).unwrap().learned_loss.item()
}

#[test]
fn token_count_for_two_frames() {
    let m = ModelConfig::default();
    let f = FusionConfig::default();
    let theta = init_params(&m, 0).unwrap();
    let phi = init_fusion(&f, &m, 0).unwrap();
    let toks = embed_frames(&f, &phi.constants(), &outputs(&m, &theta, 2)).unwrap();
    assert_eq!(toks.tokens.shape(), [2 * (4 + 16), 64]);
}

#[test]
fn embedder_inputs() {
    let m = ModelConfig::miniature();
    let theta = init_params(&m, 1).unwrap();
    let outs = outputs(&m, &theta, 2);
    let mut changed = outs.clone();
    let ml: Vec<f64> = changed[0].mask_logits.data().iter().map(|v| v + 1.5).collect();
    changed[0].mask_logits = Tensor::constant(ml, changed[0].mask_logits.shape()).unwrap();
    for (variant, should_change) in [(EmbedderVariant::Mlp, false), (EmbedderVariant::Vanilla, true)] {
        let f = FusionConfig { embedder: variant, ..FusionConfig::miniature() };
        let phi = init_fusion(&f, &m, 1).unwrap();
        let b = phi.constants();
        let a = embed_frames(&f, &b, &outs).unwrap().tokens.to_vec();
        let c = embed_frames(&f, &b, &changed).unwrap().tokens.to_vec();
        assert_eq!(a != c, should_change, "{variant}");
    }
}

#[test]
fn zeroed_loss_head_is_constant() {
    let m = ModelConfig::miniature();
    let f = FusionConfig::miniature();
    let theta = init_params(&m, 2).unwrap();
    let mut phi = init_fusion(&f, &m, 2).unwrap();
    for name in ["loss_decoder/fc2.w", "loss_decoder/fc2.b"] {
        phi.get_mut(name).unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    }
    let g = Graph::new();
    let tb = theta.bind(&g, |_| true);
    let outs: Vec<SegOutput> = (0..2).map(|i| forward(&m, &tb, &image(&m, i)).unwrap()).collect();
    let out = fusion_forward(&f, &phi.constants(), &outs).unwrap();
    assert_eq!(out.learned_loss.item(), 2f64.ln());
    let wrt: Vec<&Tensor> = tb.tensors.iter().collect();
    for gr in grad_allow_unused(&out.learned_loss, &wrt, false).unwrap() {
        assert!(gr.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn frame_order_matters_unless_index_embeddings_are_zero() {
    let m = ModelConfig::miniature();
    let f = FusionConfig::miniature();
    let theta = init_params(&m, 3).unwrap();
    let mut phi = init_fusion(&f, &m, 3).unwrap();
    let outs = outputs(&m, &theta, 2);
    let swapped = vec![outs[1].clone(), outs[0].clone()];
    let (a, b) = (learned_loss(&f, &phi, &outs), learned_loss(&f, &phi, &swapped));
    assert_ne!(a, b);
    phi.get_mut("transformer/frame_index").unwrap().data.iter_mut().for_each(|v| *v = 0.0);
    let (a, b) = (learned_loss(&f, &phi, &outs), learned_loss(&f, &phi, &swapped));
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
}

#[test]
fn learned_loss_reaches_model_groups() {
    let m = ModelConfig::miniature();
    for (variant, unreached) in [(EmbedderVariant::Vanilla, None), (EmbedderVariant::Mlp, Some("mask_head"))] {
        let f = FusionConfig { embedder: variant, ..FusionConfig::miniature() };
        let theta = init_params(&m, 4).unwrap();
        let phi = init_fusion(&f, &m, 4).unwrap();
        let g = Graph::new();
        let tb = theta.bind(&g, |_| true);
        let outs: Vec<SegOutput> = (0..2).map(|i| forward(&m, &tb, &image(&m, i)).unwrap()).collect();
        let out = fusion_forward(&f, &phi.bind(&g, |_| false), &outs).unwrap();
        assert!(out.learned_loss.item() >= 0.0);
        let wrt: Vec<&Tensor> = tb.tensors.iter().collect();
        let grads = grad_allow_unused(&out.learned_loss, &wrt, false).unwrap();
        for group in GROUPS {
            let norm: f64 = theta
                .params()
                .iter()
                .zip(&grads)
                .filter(|(p, _)| p.group() == group)
                .flat_map(|(_, g)| g.to_vec())
                .map(|v| v * v)
                .sum();
            // the MLP embedder never sees mask logits, so the mask head is out of reach
            assert_eq!(norm > 0.0, unreached != Some(group), "{variant} {group}");
        }
    }
}

/// Directional derivative along random probes against central differences.
#[test]
fn gradients_match_finite_differences() {
    let m = ModelConfig::miniature();
    for mode in [FusionMode::FixedLengthDecoder, FusionMode::Causal] {
        let f = FusionConfig { mode, ..FusionConfig::miniature() };
        let theta = init_params(&m, 5).unwrap();
        let phi = init_fusion(&f, &m, 5).unwrap();
        let imgs: Vec<Tensor> = (0..2).map(|i| image(&m, 50 + i)).collect();
        let eval = |th: &ParamStore, ph: &ParamStore| {
            let tb = th.constants();
            let outs: Vec<SegOutput> = imgs.iter().map(|x| forward(&m, &tb, x).unwrap()).collect();
            learned_loss(&f, ph, &outs)
        };
        let g = Graph::new();
        let tb = theta.bind(&g, |_| true);
        let pb = phi.bind(&g, |_| true);
        let outs: Vec<SegOutput> = imgs.iter().map(|x| forward(&m, &tb, x).unwrap()).collect();
        let out = fusion_forward(&f, &pb, &outs).unwrap();
        let wrt: Vec<&Tensor> = tb.tensors.iter().chain(&pb.tensors).collect();
        let grads = grad_allow_unused(&out.learned_loss, &wrt, false).unwrap();
        let (gt, gp) = grads.split_at(theta.len());

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..3 {
            let dir_t: Vec<Vec<f64>> =
                theta.params().iter().map(|p| p.data.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let dir_p: Vec<Vec<f64>> =
                phi.params().iter().map(|p| p.data.iter().map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let shift = |s: &ParamStore, dir: &[Vec<f64>], h: f64| {
                let mut out = s.clone();
                for (p, d) in out.params_mut().iter_mut().zip(dir) {
                    p.data.iter_mut().zip(d).for_each(|(v, dv)| *v += h * dv);
                }
                out
            };
            let dot = |g: &[Tensor], d: &[Vec<f64>]| -> f64 {
                g.iter().zip(d).map(|(g, d)| g.data().iter().zip(d).map(|(a, b)| a * b).sum::<f64>()).sum()
            };
            let h = 1e-5;
            let num_t = (eval(&shift(&theta, &dir_t, h), &phi) - eval(&shift(&theta, &dir_t, -h), &phi)) / (2.0 * h);
            let num_p = (eval(&theta, &shift(&phi, &dir_p, h)) - eval(&theta, &shift(&phi, &dir_p, -h))) / (2.0 * h);
            let (ana_t, ana_p) = (dot(gt, &dir_t), dot(gp, &dir_p));
            assert!(
                (num_t - ana_t).abs() <= 1e-4 * num_t.abs().max(ana_t.abs()).max(1e-8),
                "{mode:?} theta {num_t} vs {ana_t}"
            );
            assert!(
                (num_p - ana_p).abs() <= 1e-4 * num_p.abs().max(ana_p.abs()).max(1e-8),
                "{mode:?} phi {num_p} vs {ana_p}"
            );
        }
    }
}

#[test]
fn sequence_length_rules() {
    let m = ModelConfig::miniature();
    let theta = init_params(&m, 7).unwrap();
    let outs = outputs(&m, &theta, 5);
    let dec = FusionConfig { frames: 2, ..FusionConfig::miniature() };
    let phi = init_fusion(&dec, &m, 7).unwrap();
    assert!(fusion_forward(&dec, &phi.constants(), &outs[..3]).is_err());
    let causal = FusionConfig { mode: FusionMode::Causal, ..FusionConfig::miniature() };
    let phi = init_fusion(&causal, &m, 7).unwrap();
    for n in 1..=5 {
        let out = fusion_forward(&causal, &phi.constants(), &outs[..n]).unwrap();
        assert!(out.learned_loss.item() >= 0.0);
        assert_eq!(out.action_logits.shape(), [5]);
        assert_eq!(out.aux_logits.shape(), outs[0].class_logits.shape());
        assert_eq!(out.aux_masks.shape(), outs[0].mask_logits.shape());
    }
    let six: Vec<SegOutput> = outs.iter().chain(&outs[..1]).cloned().collect();
    assert!(fusion_forward(&causal, &phi.constants(), &six).is_err());
}

#[test]
fn learned_loss_is_non_negative_and_deterministic() {
    let m = ModelConfig::miniature();
    let f = FusionConfig::miniature();
    let theta = init_params(&m, 8).unwrap();
    for seed in 0..10 {
        let phi = init_fusion(&f, &m, seed).unwrap();
        let outs = outputs(&m, &theta, 2);
        let a = learned_loss(&f, &phi, &outs);
        assert!(a >= 0.0 && a.is_finite());
        assert_eq!(a, learned_loss(&f, &phi, &outs));
    }
}

#[test]
fn pca_matches_dense_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for d in [2usize, 5, 11, 16] {
        let frames: Vec<Vec<Vec<f64>>> =
            (0..3).map(|_| (0..12).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()).collect();
        let r = pca_embeddings(&frames);

        let all: Vec<&Vec<f64>> = frames.iter().flatten().collect();
        let n = all.len() as f64;
        let mean = nalgebra::DVector::from_fn(d, |k, _| all.iter().map(|t| t[k]).sum::<f64>() / n);
        let x = nalgebra::DMatrix::from_fn(all.len(), d, |i, k| all[i][k] - mean[k]);
        let cov = x.transpose() * &x / n;
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        let axes: Vec<Vec<f64>> =
            order[..2].iter().map(|&i| canonical_sign(eig.eigenvectors.column(i).iter().copied().collect())).collect();
        for (fi, f) in frames.iter().enumerate() {
            for (ti, t) in f.iter().enumerate() {
                for (c, axis) in axes.iter().enumerate() {
                    let want: f64 = (0..d).map(|k| (t[k] - mean[k]) * axis[k]).sum();
                    let got = r.coords[fi][ti][c];
                    assert!((want - got).abs() < 1e-8, "d {d}: {want} vs {got}");
                }
            }
        }
    }
}
