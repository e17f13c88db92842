//! Sanity probe: overfit a tiny synthetic set and print the loss curve.

use etndnet_core::data::{synth_generate, SynthSpec};
use etndnet_core::model::ModelConfig;
use etndnet_core::trainer::{train, TrainConfig, TrainState};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let epochs: u32 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let augment: bool = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(false);
    let data = synth_generate(&SynthSpec {
        num_identities: 8,
        images_per_identity: 8,
        query_per_identity: 1,
        gallery_per_identity: 1,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs,
        base_lr: lr,
        lr_decay_epochs: vec![epochs * 2 / 3],
        batch_p: 4,
        batch_k: 4,
        augment_enabled: augment,
        seed: 0,
        ..Default::default()
    };
    let model = ModelConfig::desk(data.num_identities);
    let mut state = TrainState::init(&model, &cfg).unwrap();
    let metrics = train(&mut state, &cfg, &data, None, None).unwrap();
    for (i, m) in metrics.iter().enumerate() {
        if i % 8 == 0 || i + 1 == metrics.len() {
            println!(
                "iter {:4} epoch {:3} lr {:.1e} clean {:.4} ext_obj {:.4}",
                m.iteration, m.epoch, m.lr, m.loss_clean, m.extractor_objective
            );
        }
    }
}
