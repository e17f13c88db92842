//! The alternating training loop.
//!
//! Each iteration extracts feature maps once, samples one batch-shared
//! region set, builds the three perturbed representations, and then plays
//! one round of the game:
//!
//! 1. classifier phase — with the extractor frozen, minimize
//!    `L(clean) - l1*L(erased) - l2*L(transformed) - l3*L(noised)` over the
//!    classifier and apply one optimizer step to it;
//! 2. extractor phase — recompute the four logit sets through the updated
//!    classifier (same maps, same regions, same noise), minimize
//!    `L(clean) + l1*L(erased) + l2*L(transformed) + l3*L(noised)` over the
//!    extractor and apply one optimizer step to it.
//!
//! In `no_game` mode the classifier phase is skipped and the single
//! extractor-phase objective updates both parameter sets jointly (the
//! perturbed maps act as plain supervision, with no maximization side).
//!
//! Every random draw derives from (master seed, stream, counter), so a run
//! is reproducible from its seed alone and checkpoint resume continues the
//! exact stream sequence.

use crate::data::{
    augment, batches_per_epoch, pk_sample, to_input_batch, AugmentConfig, DatasetIndex, Split,
};
use crate::error::{Error, Result};
use crate::loss::{ce_loss_and_grad, smoothed_targets, LossWeights};
use crate::model::{Classifier, Extractor, ModelConfig};
use crate::nn::{Adam, AdamConfig};
use crate::perturb::{
    erase_backward, grid_of, make_adversarial_batch, noise_backward, transform_backward,
    AdversarialBatch, FeatureBatch, TransformMode,
};
use crate::region::{sample_batch_regions, PerturbationConfig};
use crate::rng::{derive_rng, stream};
use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameMode {
    Full,
    NoGame,
}

impl std::str::FromStr for GameMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(GameMode::Full),
            "no_game" => Ok(GameMode::NoGame),
            other => Err(Error::InvalidConfig(format!(
                "unknown game mode '{other}' (expected full|no_game)"
            ))),
        }
    }
}

/// Training hyper-parameters. Defaults are the full-scale recipe; desk runs
/// shrink epochs and decay boundaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub base_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epochs: Vec<u32>,
    pub batch_p: usize,
    pub batch_k: usize,
    pub loss_weights: LossWeights,
    pub epsilon: f64,
    pub perturbation: PerturbationConfig,
    pub transform_mode: TransformMode,
    pub seed: u64,
    pub game_mode: GameMode,
    /// Re-run the extractor forward before the extractor phase instead of
    /// reusing the maps extracted at the top of the iteration.
    pub fresh_forward: bool,
    /// Reference baseline path: no perturbations are built at all. For
    /// checking that zero loss weights match a plain cross-entropy trainer.
    pub skip_adversarial: bool,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
    pub augment_enabled: bool,
    /// Checkpoint every k epochs (0 = only final).
    pub checkpoint_every: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            base_lr: 3e-4,
            lr_decay_factor: 0.1,
            lr_decay_epochs: vec![40, 70],
            batch_p: 8,
            batch_k: 8,
            loss_weights: LossWeights::default(),
            epsilon: 0.1,
            perturbation: PerturbationConfig::default(),
            transform_mode: TransformMode::Copy,
            seed: 42,
            game_mode: GameMode::Full,
            fresh_forward: false,
            skip_adversarial: false,
            adam: AdamConfig::default(),
            augment: AugmentConfig::default(),
            augment_enabled: true,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_p == 0 || self.batch_k == 0 {
            return Err(Error::InvalidConfig(
                "batch_p and batch_k must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::InvalidConfig("epsilon must lie in [0, 1)".into()));
        }
        self.loss_weights.validate()?;
        self.perturbation.validate()
    }

    /// Desk-scale profile: same schedule shape, compressed.
    pub fn desk(seed: u64) -> Self {
        Self {
            epochs: 20,
            lr_decay_epochs: vec![8, 14],
            seed,
            ..Default::default()
        }
    }
}

/// Piecewise-constant schedule: the base rate decays by the factor at each
/// boundary epoch.
pub fn learning_rate(cfg: &TrainConfig, epoch: u32) -> f64 {
    let mut lr = cfg.base_lr;
    for &d in &cfg.lr_decay_epochs {
        if epoch >= d {
            lr *= cfg.lr_decay_factor;
        }
    }
    lr
}

/// One log record per iteration. The four loss terms are the extractor-phase
/// values (the total-loss decomposition); adversarial fields are absent on
/// the plain baseline path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepMetrics {
    pub iteration: u64,
    pub epoch: u32,
    pub lr: f64,
    pub loss_clean: f64,
    pub loss_e: Option<f64>,
    pub loss_t: Option<f64>,
    pub loss_n: Option<f64>,
    pub classifier_objective: Option<f64>,
    pub extractor_objective: f64,
}

/// Log header written once per run, recording the optimizer settings and
/// the resolved training configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunHeader {
    pub record: String,
    pub adam: AdamConfig,
    pub config: TrainConfig,
    pub model: ModelConfig,
}

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model_cfg: ModelConfig,
    pub extractor: Extractor,
    pub classifier: Classifier,
    pub optimizer: Adam,
    pub epoch: u32,
    pub iteration: u64,
    pub master_seed: u64,
}

impl TrainState {
    /// Fresh state with seed-derived initialization.
    pub fn init(model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = derive_rng(cfg.seed, stream::INIT, 0);
        let extractor = Extractor::new(model_cfg, &mut rng)?;
        let classifier = Classifier::new(
            model_cfg.feature_channels(),
            model_cfg.num_classes,
            model_cfg.pooling,
            &mut rng,
        );
        Ok(Self {
            model_cfg: model_cfg.clone(),
            extractor,
            classifier,
            optimizer: Adam::new(cfg.adam),
            epoch: 0,
            iteration: 0,
            master_seed: cfg.seed,
        })
    }
}

fn ensure_finite(v: f64, state: &TrainState) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss {
            epoch: state.epoch,
            iteration: state.iteration,
        })
    }
}

fn adversarial_terms<'a>(
    adv: &'a AdversarialBatch,
    w: &LossWeights,
    sign: f64,
) -> [(&'a FeatureBatch, f64); 4] {
    [
        (&adv.clean, 1.0),
        (&adv.erased, sign * w.lambda1),
        (&adv.transformed, sign * w.lambda2),
        (&adv.noised, sign * w.lambda3),
    ]
}

/// One alternating update on one labeled batch. Returns the step metrics;
/// parameters, optimizer state and counters advance in place.
pub fn train_step(
    state: &mut TrainState,
    images: &Array4<f64>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<StepMetrics> {
    let lr = learning_rate(cfg, state.epoch);
    let targets = smoothed_targets(labels, state.classifier.num_classes(), cfg.epsilon)?;
    let t = state.iteration;

    // one extraction per iteration
    let maps = state.extractor.forward(images, true)?;
    let adv = if cfg.skip_adversarial {
        None
    } else {
        let grid = grid_of(&maps);
        let regions = sample_batch_regions(
            &mut derive_rng(state.master_seed, stream::REGION, t),
            grid,
            &cfg.perturbation,
        )?;
        Some(make_adversarial_batch(
            &maps,
            regions,
            &mut derive_rng(state.master_seed, stream::NOISE, t),
            cfg.transform_mode,
        )?)
    };

    // --- classifier phase --------------------------------------------------
    let mut classifier_objective = None;
    if cfg.game_mode == GameMode::Full {
        state.classifier.zero_grads();
        let mut objective = 0.0;
        match &adv {
            Some(adv) => {
                for (rep, coeff) in adversarial_terms(adv, &cfg.loss_weights, -1.0) {
                    let logits = state.classifier.forward(rep, true)?;
                    let (l, mut dl) = ce_loss_and_grad(&logits, &targets)?;
                    objective += coeff * l;
                    dl *= coeff;
                    let _ = state.classifier.backward(&dl, true);
                }
            }
            None => {
                let logits = state.classifier.forward(&maps, true)?;
                let (l, dl) = ce_loss_and_grad(&logits, &targets)?;
                objective += l;
                let _ = state.classifier.backward(&dl, true);
            }
        }
        ensure_finite(objective, state)?;
        let opt = &mut state.optimizer;
        state
            .classifier
            .visit_params("classifier", &mut |path, p| opt.update(path, p, lr));
        state.classifier.zero_grads();
        classifier_objective = Some(objective);
    }

    // --- extractor phase ---------------------------------------------------
    // recompute logits through the (possibly updated) classifier; with
    // fresh_forward the maps themselves are re-extracted, which re-runs the
    // batch statistics but produces identical values for unchanged weights
    let (maps, adv) = if cfg.fresh_forward {
        let maps2 = state.extractor.forward(images, true)?;
        let adv2 = match &adv {
            Some(a) => Some(make_adversarial_batch(
                &maps2,
                a.regions,
                &mut derive_rng(state.master_seed, stream::NOISE, t),
                cfg.transform_mode,
            )?),
            None => None,
        };
        (maps2, adv2)
    } else {
        (maps, adv)
    };

    let joint_update = cfg.game_mode == GameMode::NoGame;
    state.extractor.zero_grads();
    if joint_update {
        state.classifier.zero_grads();
    }
    let mut grad_maps = FeatureBatch::zeros(maps.dim());
    let mut objective = 0.0;
    let mut per_term = [f64::NAN; 4];
    match &adv {
        Some(adv) => {
            for (i, (rep, coeff)) in adversarial_terms(adv, &cfg.loss_weights, 1.0)
                .into_iter()
                .enumerate()
            {
                let logits = state.classifier.forward(rep, true)?;
                let (l, mut dl) = ce_loss_and_grad(&logits, &targets)?;
                per_term[i] = l;
                objective += coeff * l;
                dl *= coeff;
                let g = state.classifier.backward(&dl, joint_update);
                let routed = match i {
                    0 => g,
                    1 => erase_backward(&g, adv.regions.erase)?,
                    2 => transform_backward(
                        &g,
                        adv.regions.transform_src,
                        adv.regions.transform_dst,
                        cfg.transform_mode,
                    )?,
                    _ => noise_backward(&g, adv.regions.noise)?,
                };
                grad_maps += &routed;
            }
        }
        None => {
            let logits = state.classifier.forward(&maps, true)?;
            let (l, dl) = ce_loss_and_grad(&logits, &targets)?;
            per_term[0] = l;
            objective += l;
            let g = state.classifier.backward(&dl, joint_update);
            grad_maps += &g;
        }
    }
    ensure_finite(objective, state)?;
    state.extractor.backward(&grad_maps);
    {
        let opt = &mut state.optimizer;
        state
            .extractor
            .visit_params("extractor", &mut |path, p| opt.update(path, p, lr));
        if joint_update {
            state
                .classifier
                .visit_params("classifier", &mut |path, p| opt.update(path, p, lr));
        }
    }
    state.extractor.zero_grads();
    if joint_update {
        state.classifier.zero_grads();
    }

    let metrics = StepMetrics {
        iteration: t,
        epoch: state.epoch,
        lr,
        loss_clean: ensure_finite(per_term[0], state)?,
        loss_e: adv.as_ref().map(|_| per_term[1]),
        loss_t: adv.as_ref().map(|_| per_term[2]),
        loss_n: adv.as_ref().map(|_| per_term[3]),
        classifier_objective,
        extractor_objective: objective,
    };
    state.iteration += 1;
    Ok(metrics)
}

/// Assemble the augmented input batch for a list of record indices.
pub fn build_batch(
    data: &DatasetIndex,
    picks: &[usize],
    cfg: &TrainConfig,
    master_seed: u64,
    iteration: u64,
) -> (Array4<f64>, Vec<usize>) {
    let mut aug_rng = derive_rng(master_seed, stream::AUGMENT, iteration);
    let augmented: Vec<_> = picks
        .iter()
        .map(|&i| {
            augment(
                &data.records[i].pixels,
                &mut aug_rng,
                cfg.augment_enabled,
                &cfg.augment,
            )
        })
        .collect();
    let refs: Vec<&ndarray::Array3<u8>> = augmented.iter().collect();
    let images = to_input_batch(&refs);
    let labels: Vec<usize> = picks.iter().map(|&i| data.records[i].identity).collect();
    (images, labels)
}

/// Run the epoch loop from `state.epoch` to `cfg.epochs`. `on_step` sees
/// every metrics record; `on_epoch_end` runs after each completed epoch
/// (checkpointing lives there).
pub fn train(
    state: &mut TrainState,
    cfg: &TrainConfig,
    data: &DatasetIndex,
    mut on_step: Option<&mut dyn FnMut(&StepMetrics)>,
    mut on_epoch_end: Option<&mut dyn FnMut(&mut TrainState) -> Result<()>>,
) -> Result<Vec<StepMetrics>> {
    cfg.validate()?;
    let train_indices = data.split_indices(Split::Train);
    if train_indices.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let iters = batches_per_epoch(train_indices.len(), cfg.batch_p, cfg.batch_k);
    let mut all = Vec::new();
    for epoch in state.epoch..cfg.epochs {
        let mut batch_rng = derive_rng(state.master_seed, stream::BATCH, epoch as u64);
        for _ in 0..iters {
            let picks = pk_sample(&mut batch_rng, data, cfg.batch_p, cfg.batch_k)?;
            let (images, labels) =
                build_batch(data, &picks, cfg, state.master_seed, state.iteration);
            let m = train_step(state, &images, &labels, cfg)?;
            if let Some(f) = on_step.as_mut() {
                f(&m);
            }
            all.push(m);
        }
        state.epoch = epoch + 1;
        if let Some(f) = on_epoch_end.as_mut() {
            f(state)?;
        }
    }
    Ok(all)
}

/// Eval-mode embeddings for a set of record indices, in order.
pub fn embed_records(
    state: &mut TrainState,
    data: &DatasetIndex,
    indices: &[usize],
    batch: usize,
) -> Result<Array2<f64>> {
    let dim = state.classifier.channels();
    let mut out = Array2::zeros((indices.len(), dim));
    let mut written = 0;
    for chunk in indices.chunks(batch.max(1)) {
        let imgs: Vec<&ndarray::Array3<u8>> =
            chunk.iter().map(|&i| &data.records[i].pixels).collect();
        let input = to_input_batch(&imgs);
        let emb = crate::model::embed_images(&mut state.extractor, &mut state.classifier, &input)?;
        for row in 0..chunk.len() {
            out.row_mut(written + row).assign(&emb.row(row));
        }
        written += chunk.len();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};

    fn tiny_data() -> DatasetIndex {
        synth_generate(&SynthSpec {
            num_identities: 6,
            images_per_identity: 4,
            query_per_identity: 2,
            gallery_per_identity: 2,
            ..Default::default()
        })
        .unwrap()
    }

    fn tiny_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 2,
            lr_decay_epochs: vec![1],
            batch_p: 3,
            batch_k: 2,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_matches_decay_boundaries() {
        let cfg = TrainConfig::default();
        assert!((learning_rate(&cfg, 0) - 3e-4).abs() < 1e-18);
        assert!((learning_rate(&cfg, 39) - 3e-4).abs() < 1e-18);
        assert!((learning_rate(&cfg, 40) - 3e-5).abs() < 1e-18);
        assert!((learning_rate(&cfg, 69) - 3e-5).abs() < 1e-18);
        assert!((learning_rate(&cfg, 70) - 3e-6).abs() < 1e-18);
        assert!((learning_rate(&cfg, 119) - 3e-6).abs() < 1e-18);
        let desk = TrainConfig {
            epochs: 20,
            lr_decay_epochs: vec![8, 14],
            ..Default::default()
        };
        assert!((learning_rate(&desk, 7) - 3e-4).abs() < 1e-18);
        assert!((learning_rate(&desk, 8) - 3e-5).abs() < 1e-18);
        assert!((learning_rate(&desk, 14) - 3e-6).abs() < 1e-18);
    }

    #[test]
    fn identical_seeds_identical_trajectories() {
        let data = tiny_data();
        let cfg = tiny_cfg(11);
        let model = ModelConfig::desk(data.num_identities);
        let mut s1 = TrainState::init(&model, &cfg).unwrap();
        let mut s2 = TrainState::init(&model, &cfg).unwrap();
        let m1 = train(&mut s1, &cfg, &data, None, None).unwrap();
        let m2 = train(&mut s2, &cfg, &data, None, None).unwrap();
        assert_eq!(m1.len(), m2.len());
        for (a, b) in m1.iter().zip(m2.iter()) {
            assert!((a.loss_clean - b.loss_clean).abs() <= 1e-6);
            assert!((a.extractor_objective - b.extractor_objective).abs() <= 1e-6);
        }
    }

    #[test]
    fn full_mode_steps_both_parties_every_iteration() {
        let data = tiny_data();
        let cfg = tiny_cfg(5);
        let model = ModelConfig::desk(data.num_identities);
        let mut state = TrainState::init(&model, &cfg).unwrap();
        let mut batch_rng = derive_rng(cfg.seed, stream::BATCH, 0);
        for _ in 0..3 {
            let picks = pk_sample(&mut batch_rng, &data, 3, 2).unwrap();
            let (images, labels) = build_batch(&data, &picks, &cfg, cfg.seed, state.iteration);
            let mut before_ext = Vec::new();
            state
                .extractor
                .visit_params("extractor", &mut |_, p| before_ext.push(p.value.clone()));
            train_step(&mut state, &images, &labels, &cfg).unwrap();
            let mut moved = false;
            let mut i = 0;
            state.extractor.visit_params("extractor", &mut |_, p| {
                if p.value != before_ext[i] {
                    moved = true;
                }
                i += 1;
            });
            assert!(moved, "extractor should move every iteration");
        }
        // slot step counters: classifier and extractor advance in lockstep,
        // one step per phase per iteration
        for (path, slot) in &state.optimizer.slots {
            assert_eq!(slot.t, 3, "{path}");
        }
    }

    #[test]
    fn no_game_is_one_joint_update_per_iteration() {
        let data = tiny_data();
        let cfg = TrainConfig {
            game_mode: GameMode::NoGame,
            ..tiny_cfg(6)
        };
        let model = ModelConfig::desk(data.num_identities);
        let mut state = TrainState::init(&model, &cfg).unwrap();
        let picks: Vec<usize> = data.split_indices(Split::Train)[..6].to_vec();
        let (images, labels) = build_batch(&data, &picks, &cfg, cfg.seed, 0);
        let m = train_step(&mut state, &images, &labels, &cfg).unwrap();
        assert!(m.classifier_objective.is_none());
        for slot in state.optimizer.slots.values() {
            assert_eq!(slot.t, 1);
        }
        assert!(state
            .optimizer
            .slots
            .keys()
            .any(|k| k.starts_with("classifier/")));
        assert!(state
            .optimizer
            .slots
            .keys()
            .any(|k| k.starts_with("extractor/")));
    }

    #[test]
    fn zero_weights_match_plain_baseline_trainer() {
        let data = tiny_data();
        let mut zero_cfg = tiny_cfg(9);
        zero_cfg.loss_weights = LossWeights::ZERO;
        let mut base_cfg = zero_cfg.clone();
        base_cfg.skip_adversarial = true;
        let model = ModelConfig::desk(data.num_identities);
        let mut sz = TrainState::init(&model, &zero_cfg).unwrap();
        let mut sb = TrainState::init(&model, &base_cfg).unwrap();
        let mz = train(&mut sz, &zero_cfg, &data, None, None).unwrap();
        let mb = train(&mut sb, &base_cfg, &data, None, None).unwrap();
        for (a, b) in mz.iter().zip(mb.iter()) {
            assert!((a.loss_clean - b.loss_clean).abs() <= 1e-6);
            assert!((a.extractor_objective - b.extractor_objective).abs() <= 1e-6);
            assert!(
                (a.classifier_objective.unwrap() - b.classifier_objective.unwrap()).abs() <= 1e-6
            );
        }
    }

    #[test]
    fn nan_injection_aborts_with_location() {
        let data = tiny_data();
        let cfg = tiny_cfg(10);
        let model = ModelConfig::desk(data.num_identities);
        let mut state = TrainState::init(&model, &cfg).unwrap();
        // poison one classifier weight: a diverged parameter must abort the
        // run, not be skipped
        state.classifier.visit_params("classifier", &mut |path, p| {
            if path.ends_with("fc/weight") {
                p.value.as_slice_mut().unwrap()[0] = f64::NAN;
            }
        });
        let picks: Vec<usize> = data.split_indices(Split::Train)[..6].to_vec();
        let (images, labels) = build_batch(&data, &picks, &cfg, cfg.seed, 0);
        let err = train_step(&mut state, &images, &labels, &cfg);
        assert!(matches!(err, Err(Error::NonFiniteLoss { .. })));
    }
}
