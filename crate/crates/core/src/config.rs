//! Run configuration: one flat, human-editable key=value file.
//!
//! Every key has a default; a fully defaulted config runs the desk-scale
//! synthetic pipeline end to end. Command-line overrides are applied on top
//! of the file. The resolved config (all defaults materialized) is echoed
//! into every output directory so a run can be reproduced from its echo.

use crate::attack::{ApplyTo, AttackKind, AttackSpec, HeatmapStat};
use crate::data::{AugmentConfig, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::loss::LossWeights;
use crate::model::{ModelConfig, Preset};
use crate::nn::PoolKind;
use crate::perturb::TransformMode;
use crate::region::PerturbationConfig;
use crate::trainer::{GameMode, TrainConfig};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth,
    Dir(PathBuf),
}

/// The union of model, training, dataset, evaluation and attack settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DataSource,
    // model
    pub preset: Preset,
    pub desk_channels: Vec<usize>,
    pub pooling: PoolKind,
    pub image_h: usize,
    pub image_w: usize,
    // training
    pub epochs: u32,
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: Vec<u32>,
    pub batch_p: usize,
    pub batch_k: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub epsilon: f64,
    pub game_mode: GameMode,
    pub transform_mode: TransformMode,
    pub fresh_forward: bool,
    pub augment: bool,
    pub augment_flip_prob: f64,
    pub augment_pad: usize,
    pub augment_erase_prob: f64,
    pub checkpoint_every: u32,
    // feature-level region sampling
    pub area_min: f64,
    pub area_max: f64,
    pub aspect_min: f64,
    pub aspect_max: f64,
    pub fixed_mode: bool,
    pub fixed_area: f64,
    pub fixed_aspect: f64,
    pub max_rejection_attempts: u32,
    // synthetic dataset
    pub synth_identities: usize,
    pub synth_images_per_identity: usize,
    pub synth_query_per_identity: usize,
    pub synth_gallery_per_identity: usize,
    pub synth_occlusion_prob: f64,
    pub synth_train_occlusion_prob: f64,
    pub synth_occ_area_min: f64,
    pub synth_occ_area_max: f64,
    // evaluation
    pub metric: Metric,
    pub max_rank: usize,
    pub cross_camera_filter: bool,
    pub normalize: bool,
    pub heatmap_stat: HeatmapStat,
    // attack
    pub attack_kind: AttackKind,
    pub attack_apply_to: ApplyTo,
    pub attack_seed: u64,
    // ablation
    pub ablate_seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PerturbationConfig::default();
        let w = LossWeights::default();
        Self {
            seed: 42,
            dataset: DataSource::Synth,
            preset: Preset::Desk,
            desk_channels: vec![16, 32, 48, 64, 64],
            pooling: PoolKind::Avg,
            image_h: 64,
            image_w: 32,
            epochs: 20,
            base_lr: 3e-4,
            lr_decay_factor: 0.1,
            lr_decay_epochs: vec![8, 14],
            batch_p: 8,
            batch_k: 8,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda3: w.lambda3,
            epsilon: 0.1,
            game_mode: GameMode::Full,
            transform_mode: TransformMode::Copy,
            fresh_forward: false,
            augment: true,
            augment_flip_prob: 0.5,
            augment_pad: 10,
            augment_erase_prob: 0.5,
            checkpoint_every: 0,
            area_min: p.area_min,
            area_max: p.area_max,
            aspect_min: p.aspect_min,
            aspect_max: p.aspect_max,
            fixed_mode: p.fixed_mode,
            fixed_area: p.fixed_area,
            fixed_aspect: p.fixed_aspect,
            max_rejection_attempts: p.max_rejection_attempts,
            synth_identities: 50,
            synth_images_per_identity: 8,
            synth_query_per_identity: 4,
            synth_gallery_per_identity: 4,
            synth_occlusion_prob: 1.0,
            synth_train_occlusion_prob: 0.15,
            synth_occ_area_min: 0.25,
            synth_occ_area_max: 0.5,
            metric: Metric::Euclidean,
            max_rank: 20,
            cross_camera_filter: true,
            normalize: true,
            heatmap_stat: HeatmapStat::Mean,
            attack_kind: AttackKind::FeatureErase,
            attack_apply_to: ApplyTo::Both,
            attack_seed: 42,
            ablate_seeds: vec![0, 1, 2],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::InvalidConfig(format!("key '{key}': cannot parse '{value}'")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::InvalidConfig(format!("key '{key}': cannot parse '{value}'")))
        })
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!(
            "key '{key}': expected a boolean, got '{value}'"
        ))),
    }
}

impl RunConfig {
    /// Apply one key=value assignment with a field-level error message.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => {
                self.seed = parse(key, v)?;
                self.attack_seed = self.seed;
            }
            "dataset" => {
                self.dataset = if v == "synth" {
                    DataSource::Synth
                } else if v.is_empty() {
                    return Err(Error::InvalidConfig(
                        "key 'dataset': expected 'synth' or a directory path".into(),
                    ));
                } else {
                    DataSource::Dir(PathBuf::from(v))
                };
            }
            "mode" => match v {
                "etnd" => {
                    let w = LossWeights::default();
                    self.lambda1 = w.lambda1;
                    self.lambda2 = w.lambda2;
                    self.lambda3 = w.lambda3;
                }
                "baseline" => {
                    self.lambda1 = 0.0;
                    self.lambda2 = 0.0;
                    self.lambda3 = 0.0;
                }
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "key 'mode': expected etnd|baseline, got '{other}'"
                    )))
                }
            },
            "preset" => self.preset = v.parse()?,
            "desk_channels" => self.desk_channels = parse_list(key, v)?,
            "pooling" => {
                self.pooling = match v {
                    "avg" => PoolKind::Avg,
                    "max" => PoolKind::Max,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "key 'pooling': expected avg|max, got '{v}'"
                        )))
                    }
                }
            }
            "image_h" => self.image_h = parse(key, v)?,
            "image_w" => self.image_w = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "base_lr" => self.base_lr = parse(key, v)?,
            "lr_decay_factor" => self.lr_decay_factor = parse(key, v)?,
            "lr_decay_epochs" => self.lr_decay_epochs = parse_list(key, v)?,
            "batch_p" => self.batch_p = parse(key, v)?,
            "batch_k" => self.batch_k = parse(key, v)?,
            "lambda1" => self.lambda1 = parse(key, v)?,
            "lambda2" => self.lambda2 = parse(key, v)?,
            "lambda3" => self.lambda3 = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "game_mode" => self.game_mode = v.parse()?,
            "transform_mode" => {
                self.transform_mode = match v {
                    "copy" => TransformMode::Copy,
                    "swap" => TransformMode::Swap,
                    _ => {
                        return Err(Error::InvalidConfig(format!(
                            "key 'transform_mode': expected copy|swap, got '{v}'"
                        )))
                    }
                }
            }
            "fresh_forward" => self.fresh_forward = parse_bool(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "augment_flip_prob" => self.augment_flip_prob = parse(key, v)?,
            "augment_pad" => self.augment_pad = parse(key, v)?,
            "augment_erase_prob" => self.augment_erase_prob = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "area_min" => self.area_min = parse(key, v)?,
            "area_max" => self.area_max = parse(key, v)?,
            "aspect_min" => self.aspect_min = parse(key, v)?,
            "aspect_max" => self.aspect_max = parse(key, v)?,
            "fixed_mode" => self.fixed_mode = parse_bool(key, v)?,
            "fixed_area" => self.fixed_area = parse(key, v)?,
            "fixed_aspect" => self.fixed_aspect = parse(key, v)?,
            "max_rejection_attempts" => self.max_rejection_attempts = parse(key, v)?,
            "synth_identities" => self.synth_identities = parse(key, v)?,
            "synth_images_per_identity" => self.synth_images_per_identity = parse(key, v)?,
            "synth_query_per_identity" => self.synth_query_per_identity = parse(key, v)?,
            "synth_gallery_per_identity" => self.synth_gallery_per_identity = parse(key, v)?,
            "synth_occlusion_prob" => self.synth_occlusion_prob = parse(key, v)?,
            "synth_train_occlusion_prob" => self.synth_train_occlusion_prob = parse(key, v)?,
            "synth_occ_area_min" => self.synth_occ_area_min = parse(key, v)?,
            "synth_occ_area_max" => self.synth_occ_area_max = parse(key, v)?,
            "metric" => self.metric = v.parse()?,
            "max_rank" => self.max_rank = parse(key, v)?,
            "cross_camera_filter" => self.cross_camera_filter = parse_bool(key, v)?,
            "normalize" => self.normalize = parse_bool(key, v)?,
            "heatmap_stat" => self.heatmap_stat = v.parse()?,
            "attack_kind" => self.attack_kind = v.parse()?,
            "attack_apply_to" => self.attack_apply_to = v.parse()?,
            "attack_seed" => self.attack_seed = parse(key, v)?,
            "ablate_seeds" => self.ablate_seeds = parse_list(key, v)?,
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    /// Parse a whole key=value document ('#' starts a comment).
    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            self.apply_kv(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_str(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Serialize with every value materialized; `apply_str` on the output
    /// reproduces this config exactly.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let list = |v: &[u32]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let _ = writeln!(s, "# run");
        let _ = writeln!(s, "seed = {}", self.seed);
        let dataset = match &self.dataset {
            DataSource::Synth => "synth".to_string(),
            DataSource::Dir(p) => p.display().to_string(),
        };
        let _ = writeln!(s, "dataset = {dataset}");
        let _ = writeln!(s, "\n# model");
        let _ = writeln!(
            s,
            "preset = {}",
            match self.preset {
                Preset::Desk => "desk",
                Preset::Paper => "paper",
            }
        );
        let _ = writeln!(
            s,
            "desk_channels = {}",
            self.desk_channels
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(
            s,
            "pooling = {}",
            match self.pooling {
                PoolKind::Avg => "avg",
                PoolKind::Max => "max",
            }
        );
        let _ = writeln!(s, "image_h = {}", self.image_h);
        let _ = writeln!(s, "image_w = {}", self.image_w);
        let _ = writeln!(s, "\n# training");
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "base_lr = {}", self.base_lr);
        let _ = writeln!(s, "lr_decay_factor = {}", self.lr_decay_factor);
        let _ = writeln!(s, "lr_decay_epochs = {}", list(&self.lr_decay_epochs));
        let _ = writeln!(s, "batch_p = {}", self.batch_p);
        let _ = writeln!(s, "batch_k = {}", self.batch_k);
        let _ = writeln!(s, "lambda1 = {}", self.lambda1);
        let _ = writeln!(s, "lambda2 = {}", self.lambda2);
        let _ = writeln!(s, "lambda3 = {}", self.lambda3);
        let _ = writeln!(s, "epsilon = {}", self.epsilon);
        let _ = writeln!(
            s,
            "game_mode = {}",
            match self.game_mode {
                GameMode::Full => "full",
                GameMode::NoGame => "no_game",
            }
        );
        let _ = writeln!(
            s,
            "transform_mode = {}",
            match self.transform_mode {
                TransformMode::Copy => "copy",
                TransformMode::Swap => "swap",
            }
        );
        let _ = writeln!(s, "fresh_forward = {}", self.fresh_forward);
        let _ = writeln!(s, "augment = {}", self.augment);
        let _ = writeln!(s, "augment_flip_prob = {}", self.augment_flip_prob);
        let _ = writeln!(s, "augment_pad = {}", self.augment_pad);
        let _ = writeln!(s, "augment_erase_prob = {}", self.augment_erase_prob);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "\n# feature-level region sampling");
        let _ = writeln!(s, "area_min = {}", self.area_min);
        let _ = writeln!(s, "area_max = {}", self.area_max);
        let _ = writeln!(s, "aspect_min = {}", self.aspect_min);
        let _ = writeln!(s, "aspect_max = {}", self.aspect_max);
        let _ = writeln!(s, "fixed_mode = {}", self.fixed_mode);
        let _ = writeln!(s, "fixed_area = {}", self.fixed_area);
        let _ = writeln!(s, "fixed_aspect = {}", self.fixed_aspect);
        let _ = writeln!(s, "max_rejection_attempts = {}", self.max_rejection_attempts);
        let _ = writeln!(s, "\n# synthetic dataset");
        let _ = writeln!(s, "synth_identities = {}", self.synth_identities);
        let _ = writeln!(
            s,
            "synth_images_per_identity = {}",
            self.synth_images_per_identity
        );
        let _ = writeln!(
            s,
            "synth_query_per_identity = {}",
            self.synth_query_per_identity
        );
        let _ = writeln!(
            s,
            "synth_gallery_per_identity = {}",
            self.synth_gallery_per_identity
        );
        let _ = writeln!(s, "synth_occlusion_prob = {}", self.synth_occlusion_prob);
        let _ = writeln!(
            s,
            "synth_train_occlusion_prob = {}",
            self.synth_train_occlusion_prob
        );
        let _ = writeln!(s, "synth_occ_area_min = {}", self.synth_occ_area_min);
        let _ = writeln!(s, "synth_occ_area_max = {}", self.synth_occ_area_max);
        let _ = writeln!(s, "\n# evaluation");
        let _ = writeln!(
            s,
            "metric = {}",
            match self.metric {
                Metric::Euclidean => "euclidean",
                Metric::Cosine => "cosine",
            }
        );
        let _ = writeln!(s, "max_rank = {}", self.max_rank);
        let _ = writeln!(s, "cross_camera_filter = {}", self.cross_camera_filter);
        let _ = writeln!(s, "normalize = {}", self.normalize);
        let _ = writeln!(
            s,
            "heatmap_stat = {}",
            match self.heatmap_stat {
                HeatmapStat::Mean => "mean",
                HeatmapStat::Max => "max",
            }
        );
        let _ = writeln!(s, "\n# attack");
        let _ = writeln!(
            s,
            "attack_kind = {}",
            match self.attack_kind {
                AttackKind::FeatureErase => "feature_erase",
                AttackKind::FeatureTransform => "feature_transform",
                AttackKind::FeatureNoise => "feature_noise",
                AttackKind::ImageErase => "image_erase",
            }
        );
        let _ = writeln!(
            s,
            "attack_apply_to = {}",
            match self.attack_apply_to {
                ApplyTo::Query => "query",
                ApplyTo::Gallery => "gallery",
                ApplyTo::Both => "both",
            }
        );
        let _ = writeln!(s, "attack_seed = {}", self.attack_seed);
        let _ = writeln!(s, "\n# ablation");
        let _ = writeln!(
            s,
            "ablate_seeds = {}",
            self.ablate_seeds
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        s
    }

    pub fn perturbation(&self) -> PerturbationConfig {
        PerturbationConfig {
            area_min: self.area_min,
            area_max: self.area_max,
            aspect_min: self.aspect_min,
            aspect_max: self.aspect_max,
            fixed_mode: self.fixed_mode,
            fixed_area: self.fixed_area,
            fixed_aspect: self.fixed_aspect,
            max_rejection_attempts: self.max_rejection_attempts,
        }
    }

    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            preset: self.preset,
            desk_channels: self.desk_channels.clone(),
            num_classes,
            image_h: self.image_h,
            image_w: self.image_w,
            pooling: self.pooling,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            base_lr: self.base_lr,
            lr_decay_factor: self.lr_decay_factor,
            lr_decay_epochs: self.lr_decay_epochs.clone(),
            batch_p: self.batch_p,
            batch_k: self.batch_k,
            loss_weights: LossWeights {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                lambda3: self.lambda3,
            },
            epsilon: self.epsilon,
            perturbation: self.perturbation(),
            transform_mode: self.transform_mode,
            seed: self.seed,
            game_mode: self.game_mode,
            fresh_forward: self.fresh_forward,
            skip_adversarial: false,
            adam: Default::default(),
            augment: AugmentConfig {
                flip_prob: self.augment_flip_prob,
                pad: self.augment_pad,
                erase_prob: self.augment_erase_prob,
                erase: PerturbationConfig::default(),
            },
            augment_enabled: self.augment,
            checkpoint_every: self.checkpoint_every,
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            num_identities: self.synth_identities,
            images_per_identity: self.synth_images_per_identity,
            query_per_identity: self.synth_query_per_identity,
            gallery_per_identity: self.synth_gallery_per_identity,
            image_h: self.image_h,
            image_w: self.image_w,
            occlusion_prob: self.synth_occlusion_prob,
            train_occlusion_prob: self.synth_train_occlusion_prob,
            occ_area_min: self.synth_occ_area_min,
            occ_area_max: self.synth_occ_area_max,
            seed: self.seed,
        }
    }

    pub fn attack_spec(&self) -> AttackSpec {
        AttackSpec {
            kind: self.attack_kind,
            perturbation: self.perturbation(),
            seed: self.attack_seed,
            apply_to: self.attack_apply_to,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_roundtrips_exactly() {
        let mut cfg = RunConfig::default();
        cfg.apply_kv("seed", "7").unwrap();
        cfg.apply_kv("mode", "baseline").unwrap();
        cfg.apply_kv("synth_identities", "12").unwrap();
        let echo = cfg.to_kv_string();
        let mut reparsed = RunConfig::default();
        reparsed.apply_str(&echo).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn modes_differ_only_in_loss_weights() {
        let mut base = RunConfig::default();
        base.apply_kv("mode", "baseline").unwrap();
        let mut etnd = RunConfig::default();
        etnd.apply_kv("mode", "etnd").unwrap();
        let a = base.to_kv_string();
        let b = etnd.to_kv_string();
        let differing: Vec<(&str, &str)> = a
            .lines()
            .zip(b.lines())
            .filter(|(x, y)| x != y)
            .collect();
        assert_eq!(differing.len(), 3);
        for (x, _) in &differing {
            assert!(x.starts_with("lambda"), "unexpected diff line: {x}");
        }
    }

    #[test]
    fn unknown_and_malformed_keys_name_the_problem() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_kv("no_such_key", "1").unwrap_err();
        assert!(err.to_string().contains("no_such_key"));
        let err = cfg.apply_kv("epochs", "many").unwrap_err();
        assert!(err.to_string().contains("epochs"));
        let err = cfg.apply_str("dataset =").unwrap_err();
        assert!(err.to_string().contains("dataset"));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let mut cfg = RunConfig::default();
        cfg.apply_str("# full line comment\n\nseed = 9 # trailing\n")
            .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.attack_seed, 9);
    }
}
