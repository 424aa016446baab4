//! Flat `key = value` run configuration.
//!
//! Every knob has a default; files and command-line overrides may only set
//! known keys. The resolved configuration is what gets written next to a
//! command's outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adaptseg::adapt::{AdaptConfig, Policy, Setup, Variant};
use adaptseg::envsim::{CameraConfig, DatasetConfig, SceneConfig, SceneKind, Split};
use adaptseg::fusion::{EmbedderVariant, FusionConfig, FusionMode};
use adaptseg::segmodel::ModelConfig;
use adaptseg::setloss::LossWeights;

use crate::CliError;

/// `(key, default, description)`, in the order the resolved file lists them.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "1", "seed for data generation, initialization and shuffling"),
    ("out", "out", "output directory"),
    ("dataset", "", "dataset directory; empty generates one in memory from the data keys"),
    ("checkpoint", "", "checkpoint to evaluate"),
    ("init", "", "checkpoint whose segmentation weights initialize training"),
    ("baseline", "", "table whose first row is the reference for relative deltas"),
    ("name", "model", "row label for this run in emitted tables"),
    // data
    ("points", "128", "training points"),
    ("val_points", "16", "validation points"),
    ("test_points", "16", "test points"),
    ("depth", "1", "action-tree depth"),
    ("kind", "standard", "scene family: standard or occlusion"),
    ("backward_step", "0.25", "MoveBackward distance in metres"),
    ("image_size", "64", "rendered frame width and height"),
    ("hfov", "42", "horizontal field of view in degrees"),
    ("classes", "8", "semantic classes including the floor"),
    ("objects_min", "6", "fewest objects per scene"),
    ("objects_max", "10", "most objects per scene"),
    ("room_min", "4", "smallest room side in metres"),
    ("room_max", "6", "largest room side in metres"),
    ("camera_height", "0.88", "camera height in metres"),
    // segmentation model
    ("queries", "16", "object queries"),
    ("width", "64", "model width"),
    ("heads", "4", "attention heads"),
    ("stages", "3", "multi-stage decoder stages"),
    ("canvas", "64", "square input canvas; a multiple of 32"),
    // fusion module
    ("fusion_width", "64", "fusion width"),
    ("fusion_layers", "2", "fusion transformer layers"),
    ("fusion_heads", "4", "fusion attention heads"),
    ("latents", "8", "latent queries of the decoder fusion"),
    ("embedder", "mlp", "prediction embedder: vanilla or mlp"),
    ("fusion_mode", "decoder", "decoder (fixed length) or causal (variable length)"),
    ("max_frames", "5", "largest sequence the fusion module accepts"),
    // loss
    ("cls_weight", "2", "classification weight"),
    ("bce_weight", "5", "mask binary cross-entropy weight"),
    ("dice_weight", "5", "mask Dice weight"),
    ("no_object_weight", "0.1", "no-object class weight"),
    ("dice_smooth", "1", "Dice smoothing constant"),
    // adaptation and training
    ("alpha", "1e-3", "inner step size"),
    ("inner_steps", "1", "gradient steps per adaptation"),
    ("steps", "1", "additional frames per sequence"),
    ("meta_order", "2", "1 detaches the inner gradient, 2 differentiates through it"),
    ("variant", "tiny", "full, small, tiny or baseline"),
    ("policy", "random", "single, random or bestloss"),
    ("adapt_on_inference", "true", "run the inner step at evaluation"),
    ("epochs", "20", "training epochs"),
    ("batch", "16", "sequences per update"),
    ("lr_model", "3e-4", "segmentation learning rate"),
    ("lr_fusion", "1e-3", "fusion learning rate"),
    ("beta1", "0.9", "Adam beta1"),
    ("beta2", "0.999", "Adam beta2"),
    ("clip_norm", "1", "global gradient-norm clip"),
    ("epsilon_start", "1", "best-loss exploration rate in the first epoch"),
    ("epsilon_end", "0.1", "best-loss exploration rate in the last epoch"),
    ("aux_weight", "0", "weight of the auxiliary refined-prediction loss"),
    ("pretrain_epochs", "30", "single-frame pretraining epochs before ablation cells"),
    ("pretrain_lr", "1e-3", "pretraining learning rate"),
    // evaluation and suites
    ("split", "test", "split scored by eval and ablate"),
    ("per_point", "false", "also write per-point metrics"),
    ("exhaustive", "false", "also report the mean over every possible action sequence"),
    ("decimals", "1", "decimals of metric values in tables"),
    ("seeds", "1,2,3", "seeds an ablation averages over"),
    ("variants", "tiny,small,full", "variants of the steps and variants suites"),
    ("steps_list", "1,4", "step counts of the steps suite"),
];

/// Keys that name output locations and so are left out of the resolved file.
const LOCATION_KEYS: &[&str] = &["out"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: KEYS.iter().map(|(k, v, _)| (*k, v.to_string())).collect() }
    }
}

fn canonical(key: &str) -> Option<&'static str> {
    let k = key.trim().replace('-', "_");
    KEYS.iter().map(|(k, _, _)| *k).find(|known| *known == k)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let k = canonical(key).ok_or_else(|| CliError::Usage(format!("unknown configuration key {key:?}")))?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{origin}:{}: expected `key = value`", n + 1)))?;
            self.set(k, v).map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies `--key value` / `--key=value` pairs.
    pub fn apply_args(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut i = 0;
        while i < args.len() {
            let flag = args[i]
                .strip_prefix("--")
                .ok_or_else(|| CliError::Usage(format!("expected a --key, got {:?}", args[i])))?;
            if let Some((k, v)) = flag.split_once('=') {
                self.set(k, v)?;
                i += 1;
            } else {
                let v = args.get(i + 1).ok_or_else(|| CliError::Usage(format!("--{flag} needs a value")))?;
                self.set(flag, v)?;
                i += 2;
            }
        }
        Ok(())
    }

    pub fn from_sources(file: Option<&Path>, args: &[String]) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        if let Some(f) = file {
            c.apply_file(f)?;
        }
        c.apply_args(args)?;
        Ok(c)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.raw(key);
        v.parse::<T>().map_err(|_| CliError::Usage(format!("invalid value {v:?} for {key}")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        self.raw(key)
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<T>().map_err(|_| CliError::Usage(format!("invalid entry {s:?} in {key}"))))
            .collect()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out"))
    }

    /// Every key except output locations, one `key = value` per line.
    pub fn resolved(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, _, _) in KEYS {
            if !LOCATION_KEYS.contains(k) {
                let _ = writeln!(s, "{k} = {}", self.values[k]);
            }
        }
        s
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("config.txt");
        std::fs::write(&path, self.resolved()).map_err(|e| CliError::io(&path, e))
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig, CliError> {
        let side: usize = self.get("image_size")?;
        Ok(DatasetConfig {
            seed: self.get("seed")?,
            kind: self.get::<SceneKind>("kind")?,
            depth: self.get("depth")?,
            backward_step: self.get("backward_step")?,
            train_points: self.get("points")?,
            val_points: self.get("val_points")?,
            test_points: self.get("test_points")?,
            scene: SceneConfig {
                room_min: self.get("room_min")?,
                room_max: self.get("room_max")?,
                objects_min: self.get("objects_min")?,
                objects_max: self.get("objects_max")?,
                class_count: self.get("classes")?,
                camera_height: self.get("camera_height")?,
                camera: CameraConfig { width: side, height: side, hfov_deg: self.get("hfov")? },
            },
        })
    }

    pub fn setup(&self) -> Result<Setup, CliError> {
        let canvas: usize = self.get("canvas")?;
        let model = ModelConfig {
            queries: self.get("queries")?,
            classes: self.get("classes")?,
            width: self.get("width")?,
            heads: self.get("heads")?,
            stages: self.get("stages")?,
            input: (canvas, canvas),
            fallback_class: 0,
        };
        let steps: usize = self.get("steps")?;
        let fusion = FusionConfig {
            width: self.get("fusion_width")?,
            layers: self.get("fusion_layers")?,
            heads: self.get("fusion_heads")?,
            latents: self.get("latents")?,
            embedder: self.get::<EmbedderVariant>("embedder")?,
            mode: self.get::<FusionMode>("fusion_mode")?,
            frames: steps + 1,
            max_frames: self.get("max_frames")?,
        };
        let adapt = AdaptConfig {
            alpha: self.get("alpha")?,
            inner_steps: self.get("inner_steps")?,
            steps,
            meta_order: self.get("meta_order")?,
            variant: self.get::<Variant>("variant")?,
            policy: self.get::<Policy>("policy")?,
            adapt_on_inference: self.get("adapt_on_inference")?,
            epochs: self.get("epochs")?,
            batch: self.get("batch")?,
            lr_model: self.get("lr_model")?,
            lr_fusion: self.get("lr_fusion")?,
            beta1: self.get("beta1")?,
            beta2: self.get("beta2")?,
            clip_norm: self.get("clip_norm")?,
            epsilon_start: self.get("epsilon_start")?,
            epsilon_end: self.get("epsilon_end")?,
            aux_weight: self.get("aux_weight")?,
            loss: LossWeights {
                cls: self.get("cls_weight")?,
                bce: self.get("bce_weight")?,
                dice: self.get("dice_weight")?,
                no_object: self.get("no_object_weight")?,
                dice_smooth: self.get("dice_smooth")?,
            },
            ..AdaptConfig::default()
        };
        let setup = Setup { model, fusion, adapt };
        setup.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(setup)
    }

    pub fn split(&self) -> Result<Split, CliError> {
        self.get::<Split>("split")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_build_valid_configs() {
        let c = RunConfig::default();
        let s = c.setup().unwrap();
        assert_eq!(s.fusion.frames, 2);
        assert_eq!(s.model.input, (64, 64));
        let d = c.dataset_config().unwrap();
        assert_eq!((d.train_points, d.val_points, d.test_points), (128, 16, 16));
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let mut c = RunConfig::default();
        c.apply_args(&["--seed".into(), "7".into(), "--lr-model=0.01".into()]).unwrap();
        assert_eq!(c.raw("seed"), "7");
        assert_eq!(c.raw("lr_model"), "0.01");
        assert!(matches!(c.apply_args(&["--bogus".into(), "1".into()]), Err(CliError::Usage(_))));
        assert!(matches!(c.apply_args(&["--seed".into()]), Err(CliError::Usage(_))));
        assert!(matches!(c.apply_text("nope = 3", "f"), Err(CliError::Usage(_))));
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nalpha = 0.5 # inline\nvariant=small\n", "f").unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.resolved(), "resolved").unwrap();
        assert_eq!(c, d);
        assert!(!c.resolved().contains("\nout ="));
    }

    #[test]
    fn bad_values_are_usage_errors() {
        let mut c = RunConfig::default();
        c.set("variant", "huge").unwrap();
        assert!(matches!(c.setup(), Err(CliError::Usage(_))));
        let mut c = RunConfig::default();
        c.set("canvas", "48").unwrap();
        assert!(matches!(c.setup(), Err(CliError::Usage(_))));
    }
}
