//! Desk-scale calibration driver: trains baseline/defense variants on the
//! synthetic occluded set and prints Rank-1/mAP per variant and seed.

use etndnet_core::attack::{collect_cams, l2_normalize_rows};
use etndnet_core::data::{synth_generate, Split, SynthSpec};
use etndnet_core::eval::{evaluate, EvalSet, Metric};
use etndnet_core::loss::LossWeights;
use etndnet_core::model::ModelConfig;
use etndnet_core::trainer::{embed_records, train, TrainConfig, TrainState};
use std::time::Instant;

fn eval_state(
    state: &mut TrainState,
    data: &etndnet_core::data::DatasetIndex,
) -> (f64, f64) {
    let q = data.split_indices(Split::Query);
    let g = data.split_indices(Split::Gallery);
    let mut qe = embed_records(state, data, &q, 64).unwrap();
    let mut ge = embed_records(state, data, &g, 64).unwrap();
    l2_normalize_rows(&mut qe);
    l2_normalize_rows(&mut ge);
    let set = EvalSet {
        query: qe,
        query_ids: q.iter().map(|&i| data.records[i].identity).collect(),
        query_cams: collect_cams(data, &q),
        gallery: ge,
        gallery_ids: g.iter().map(|&i| data.records[i].identity).collect(),
        gallery_cams: collect_cams(data, &g),
    };
    let r = evaluate(&set, Metric::Euclidean, 10, true).unwrap();
    (r.rank1(), r.map)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: u32 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let seeds: Vec<u64> = args
        .get(2)
        .map(|s| s.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or_else(|| vec![0, 1, 2]);
    let ids: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(50);
    let lr: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(3e-4);
    let pad: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(10);
    let lscale: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let occ_min: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let occ_max: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let train_occ: f64 = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(0.15);

    let l = |a: f64, b: f64, c: f64| LossWeights {
        lambda1: a * lscale,
        lambda2: b * lscale,
        lambda3: c * lscale,
    };
    let variants: Vec<(&str, LossWeights)> = vec![
        ("baseline", LossWeights::ZERO),
        ("ed", l(0.1, 0.0, 0.0)),
        ("td", l(0.0, 0.15, 0.0)),
        ("nd", l(0.0, 0.0, 0.1)),
        ("etnd", l(0.1, 0.15, 0.1)),
    ];

    for &seed in &seeds {
        let occluded = synth_generate(&SynthSpec {
            num_identities: ids,
            occ_area_min: occ_min,
            occ_area_max: occ_max,
            train_occlusion_prob: train_occ,
            seed,
            ..Default::default()
        })
        .unwrap();
        let clean = synth_generate(&SynthSpec {
            num_identities: ids,
            occlusion_prob: 0.0,
            occ_area_min: occ_min,
            occ_area_max: occ_max,
            train_occlusion_prob: train_occ,
            seed,
            ..Default::default()
        })
        .unwrap();
        for (name, w) in &variants {
            let t0 = Instant::now();
            let mut cfg = TrainConfig {
                epochs,
                base_lr: lr,
                lr_decay_epochs: vec![(epochs * 2 / 5).max(1), (epochs * 7 / 10).max(2)],
                loss_weights: *w,
                seed,
                ..TrainConfig::desk(seed)
            };
            cfg.augment.pad = pad;
            let model = ModelConfig::desk(occluded.num_identities);
            let mut state = TrainState::init(&model, &cfg).unwrap();
            let metrics = train(&mut state, &cfg, &occluded, None, None).unwrap();
            let train_secs = t0.elapsed().as_secs_f64();
            let (r1_occ, map_occ) = eval_state(&mut state, &occluded);
            let (r1_clean, map_clean) = eval_state(&mut state, &clean);
            let final_loss = metrics.last().map(|m| m.loss_clean).unwrap_or(f64::NAN);
            println!(
                "seed={seed} variant={name:8} occ_r1={:.3} occ_map={:.3} clean_r1={:.3} clean_map={:.3} loss={:.3} secs={:.1}",
                r1_occ, map_occ, r1_clean, map_clean, final_loss, train_secs
            );
        }
    }
}
