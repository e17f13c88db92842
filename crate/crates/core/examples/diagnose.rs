//! Diagnostic: where do occluded-query failures come from? Splits Rank-1 by
//! whether the occluder covered the unique band, and reports the feature
//! norms of occluder-covered vs clean cells.

use etndnet_core::attack::l2_normalize_rows;
use etndnet_core::data::{synth_generate, to_input_batch, Split, SynthSpec};
use etndnet_core::eval::{pairwise_distances, Metric};
use etndnet_core::loss::LossWeights;
use etndnet_core::model::ModelConfig;
use etndnet_core::trainer::{embed_records, train, TrainConfig, TrainState};
use ndarray::s;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: u32 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let lambda_scale: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let spec = SynthSpec {
        num_identities: 50,
        seed: 0,
        ..Default::default()
    };
    let data = synth_generate(&spec).unwrap();
    // the unique band sits at rows ~[box_top + box_h/4, box_top + box_h/2]
    let (h, _w) = (spec.image_h, spec.image_w);
    let top = (h / 12).max(2);
    let box_h = h - 2 * top;
    let band_y0 = top + box_h / 4;
    let band_y1 = top + box_h / 2;

    for (name, w) in [
        ("baseline", LossWeights::ZERO),
        (
            "etnd",
            LossWeights {
                lambda1: 0.1 * lambda_scale,
                lambda2: 0.15 * lambda_scale,
                lambda3: 0.1 * lambda_scale,
            },
        ),
    ] {
        let mut cfg = TrainConfig {
            epochs,
            base_lr: lr,
            lr_decay_epochs: vec![(epochs * 2 / 5).max(1), (epochs * 7 / 10).max(2)],
            loss_weights: w,
            seed: 0,
            ..TrainConfig::desk(0)
        };
        cfg.augment.pad = 4;
        let model = ModelConfig::desk(data.num_identities);
        let mut state = TrainState::init(&model, &cfg).unwrap();
        train(&mut state, &cfg, &data, None, None).unwrap();

        let q = data.split_indices(Split::Query);
        let g = data.split_indices(Split::Gallery);
        let mut qe = embed_records(&mut state, &data, &q, 64).unwrap();
        let mut ge = embed_records(&mut state, &data, &g, 64).unwrap();
        l2_normalize_rows(&mut qe);
        l2_normalize_rows(&mut ge);
        let d = pairwise_distances(&qe, &ge, Metric::Euclidean).unwrap();
        let gids: Vec<usize> = g.iter().map(|&i| data.records[i].identity).collect();

        let mut hit = (0usize, 0usize); // band covered: (correct, total)
        let mut miss = (0usize, 0usize);
        for (qi, &ri) in q.iter().enumerate() {
            let rec = &data.records[ri];
            let mut best = (f64::INFINITY, 0usize);
            for gi in 0..gids.len() {
                if d[[qi, gi]] < best.0 {
                    best = (d[[qi, gi]], gids[gi]);
                }
            }
            let correct = best.1 == rec.identity;
            let covered = rec
                .occluder
                .map(|o| o.y < band_y1 && o.y + o.h > band_y0)
                .unwrap_or(false);
            let slot = if covered { &mut hit } else { &mut miss };
            slot.1 += 1;
            if correct {
                slot.0 += 1;
            }
        }
        println!(
            "{name:8} band-covered r1 {:.3} ({} queries)   band-missed r1 {:.3} ({} queries)",
            hit.0 as f64 / hit.1.max(1) as f64,
            hit.1,
            miss.0 as f64 / miss.1.max(1) as f64,
            miss.1
        );

        // feature norms of occluder-covered vs clean cells on queries
        let mut occ_norm = (0.0f64, 0usize);
        let mut clean_norm = (0.0f64, 0usize);
        for &ri in q.iter().take(60) {
            let rec = &data.records[ri];
            let input = to_input_batch(&[&rec.pixels]);
            let maps = state.extractor.forward(&input, false).unwrap();
            let (_, gh, gw, _) = maps.dim();
            for cy in 0..gh {
                for cx in 0..gw {
                    let cell = maps.slice(s![0, cy, cx, ..]);
                    let norm = cell.iter().map(|v| v * v).sum::<f64>().sqrt();
                    // cell pixel footprint at stride 16
                    let (py0, py1) = (cy * 16, cy * 16 + 16);
                    let (px0, px1) = (cx * 16, cx * 16 + 16);
                    let covered = rec
                        .occluder
                        .map(|o| {
                            o.y < py1 && o.y + o.h > py0 && o.x < px1 && o.x + o.w > px0
                        })
                        .unwrap_or(false);
                    if covered {
                        occ_norm.0 += norm;
                        occ_norm.1 += 1;
                    } else {
                        clean_norm.0 += norm;
                        clean_norm.1 += 1;
                    }
                }
            }
        }
        println!(
            "{name:8} mean cell norm: occluded {:.3}  clean {:.3}",
            occ_norm.0 / occ_norm.1.max(1) as f64,
            clean_norm.0 / clean_norm.1.max(1) as f64
        );
    }
}
