//! Implementations of the six subcommands.

use crate::output::{resolve_out_dir, OutDir};
use etndnet_core::attack::{attack_eval, collect_cams, export_heatmap, l2_normalize_rows};
use etndnet_core::checkpoint::{load_checkpoint, save_checkpoint};
use etndnet_core::config::{DataSource, RunConfig};
use etndnet_core::data::{load_directory, synth_generate, write_dataset, DatasetIndex, Split};
use etndnet_core::eval::{evaluate as evaluate_set, EvalSet, Metric, RankingResult};
use etndnet_core::loss::LossWeights;
use etndnet_core::trainer::{embed_records, train as run_training, RunHeader, TrainState};
use etndnet_core::viz::save_cmc_plot;
use etndnet_core::{Error, Result};
use serde::Serialize;
use std::io::Write as _;
use std::path::PathBuf;

fn load_dataset(cfg: &RunConfig) -> Result<DatasetIndex> {
    match &cfg.dataset {
        DataSource::Synth => synth_generate(&cfg.synth_spec()),
        DataSource::Dir(path) => {
            if !path.exists() {
                return Err(Error::InvalidConfig(format!(
                    "key 'dataset': directory {} does not exist",
                    path.display()
                )));
            }
            load_directory(path, cfg.image_h, cfg.image_w)
        }
    }
}

/// Embeddings for the query/gallery splits plus their labels.
fn embed_eval_set(state: &mut TrainState, data: &DatasetIndex, normalize: bool) -> Result<EvalSet> {
    let q = data.split_indices(Split::Query);
    let g = data.split_indices(Split::Gallery);
    let mut query = embed_records(state, data, &q, 64)?;
    let mut gallery = embed_records(state, data, &g, 64)?;
    if normalize {
        l2_normalize_rows(&mut query);
        l2_normalize_rows(&mut gallery);
    }
    Ok(EvalSet {
        query,
        query_ids: q.iter().map(|&i| data.records[i].identity).collect(),
        query_cams: collect_cams(data, &q),
        gallery,
        gallery_ids: g.iter().map(|&i| data.records[i].identity).collect(),
        gallery_cams: collect_cams(data, &g),
    })
}

#[derive(Serialize)]
struct ResultFile<'a> {
    config: String,
    metric: &'a str,
    cross_camera_filter: bool,
    normalize: bool,
    cmc: &'a [f64],
    map: f64,
    num_skipped_queries: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    attack: Option<serde_json::Value>,
}

fn metric_name(m: Metric) -> &'static str {
    match m {
        Metric::Euclidean => "euclidean",
        Metric::Cosine => "cosine",
    }
}

fn write_result(
    out: &OutDir,
    name: &str,
    cfg: &RunConfig,
    result: &RankingResult,
    attack: Option<serde_json::Value>,
) -> Result<()> {
    out.write_json(
        name,
        &ResultFile {
            config: cfg.to_kv_string(),
            metric: metric_name(cfg.metric),
            cross_camera_filter: cfg.cross_camera_filter,
            normalize: cfg.normalize,
            cmc: &result.cmc,
            map: result.map,
            num_skipped_queries: result.num_skipped_queries,
            attack,
        },
    )
}

/// Persist the identity remap next to the checkpoint.
fn write_id_map(out: &OutDir, data: &DatasetIndex) -> Result<()> {
    let map: std::collections::BTreeMap<String, usize> = data
        .id_map
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
    out.write_json("id_map.json", &map)
}

pub fn train(cfg: RunConfig, out: Option<PathBuf>, command: &str) -> Result<()> {
    let out = OutDir::acquire(resolve_out_dir(out, command, cfg.seed))?;
    out.write_config_echo(&cfg)?;
    let data = load_dataset(&cfg)?;
    if data.num_identities == 0 {
        return Err(Error::EmptyDataset);
    }
    let model_cfg = cfg.model_config(data.num_identities);
    let train_cfg = cfg.train_config();
    let mut state = TrainState::init(&model_cfg, &train_cfg)?;

    let mut log = std::io::BufWriter::new(std::fs::File::create(out.file("train_log.jsonl"))?);
    let header = RunHeader {
        record: "header".to_string(),
        adam: train_cfg.adam,
        config: train_cfg.clone(),
        model: model_cfg.clone(),
    };
    writeln!(log, "{}", serde_json::to_string(&header)?)?;
    let mut on_step = |m: &etndnet_core::trainer::StepMetrics| {
        let _ = writeln!(log, "{}", serde_json::to_string(m).unwrap());
    };
    let every = train_cfg.checkpoint_every;
    let ckpt_dir = out.path().to_path_buf();
    let mut on_epoch = |state: &mut TrainState| -> Result<()> {
        if every > 0 && state.epoch % every == 0 {
            save_checkpoint(&ckpt_dir.join(format!("epoch{:04}.etnd", state.epoch)), state)?;
        }
        Ok(())
    };
    let result = run_training(
        &mut state,
        &train_cfg,
        &data,
        Some(&mut on_step),
        Some(&mut on_epoch),
    );
    log.flush()?;
    if let Err(e) = result {
        // dump the diverged state for inspection before surfacing the error
        let _ = save_checkpoint(&out.file("aborted.etnd"), &mut state);
        return Err(e);
    }
    save_checkpoint(&out.file("checkpoint.etnd"), &mut state)?;
    write_id_map(&out, &data)?;
    println!(
        "trained {} epochs ({} iterations) -> {}",
        state.epoch,
        state.iteration,
        out.path().display()
    );
    Ok(())
}

fn check_compat(state: &TrainState, cfg: &RunConfig, data: &DatasetIndex) -> Result<()> {
    let (h, w) = (state.model_cfg.image_h, state.model_cfg.image_w);
    if (h, w) != (data.image_h, data.image_w) {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint expects {h}x{w} images but the dataset provides {}x{}",
            data.image_h, data.image_w
        )));
    }
    let _ = cfg;
    Ok(())
}

pub fn evaluate(cfg: RunConfig, checkpoint: &PathBuf, out: Option<PathBuf>) -> Result<()> {
    let out = OutDir::acquire(resolve_out_dir(out, "evaluate", cfg.seed))?;
    out.write_config_echo(&cfg)?;
    let mut state = load_checkpoint(checkpoint)?;
    let data = load_dataset(&cfg)?;
    check_compat(&state, &cfg, &data)?;
    let set = embed_eval_set(&mut state, &data, cfg.normalize)?;
    let result = evaluate_set(&set, cfg.metric, cfg.max_rank, cfg.cross_camera_filter)?;
    write_result(&out, "result.json", &cfg, &result, None)?;
    save_cmc_plot(&result.cmc, &out.file("cmc.png"))?;
    println!(
        "rank-1 {:.4}  mAP {:.4}  ({} queries skipped) -> {}",
        result.rank1(),
        result.map,
        result.num_skipped_queries,
        out.path().display()
    );
    Ok(())
}

pub fn attack(cfg: RunConfig, checkpoint: &PathBuf, out: Option<PathBuf>) -> Result<()> {
    let out = OutDir::acquire(resolve_out_dir(out, "attack", cfg.seed))?;
    out.write_config_echo(&cfg)?;
    let mut state = load_checkpoint(checkpoint)?;
    let data = load_dataset(&cfg)?;
    check_compat(&state, &cfg, &data)?;
    // clean reference first, then the attacked pass
    let set = embed_eval_set(&mut state, &data, cfg.normalize)?;
    let clean = evaluate_set(&set, cfg.metric, cfg.max_rank, cfg.cross_camera_filter)?;
    let spec = cfg.attack_spec();
    let attacked = attack_eval(
        &mut state.extractor,
        &mut state.classifier,
        &data,
        &spec,
        cfg.metric,
        cfg.max_rank,
        cfg.cross_camera_filter,
        cfg.normalize,
    )?;
    let attack_obj = serde_json::json!({
        "spec": spec,
        "clean": { "rank1": clean.rank1(), "map": clean.map, "cmc": clean.cmc },
    });
    write_result(&out, "attack_result.json", &cfg, &attacked, Some(attack_obj))?;
    save_cmc_plot(&attacked.cmc, &out.file("cmc_attacked.png"))?;
    println!("            rank-1      mAP");
    println!("clean       {:.4}    {:.4}", clean.rank1(), clean.map);
    println!("attacked    {:.4}    {:.4}", attacked.rank1(), attacked.map);
    println!(
        "drop        {:.4}    {:.4}  -> {}",
        clean.rank1() - attacked.rank1(),
        clean.map - attacked.map,
        out.path().display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    combination: String,
    seed: u64,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
    rank1: f64,
    map: f64,
}

/// The eight defense combinations in canonical order.
fn combinations(w: &LossWeights) -> Vec<(&'static str, LossWeights)> {
    let z = 0.0;
    vec![
        ("B", LossWeights { lambda1: z, lambda2: z, lambda3: z }),
        ("ED", LossWeights { lambda1: w.lambda1, lambda2: z, lambda3: z }),
        ("TD", LossWeights { lambda1: z, lambda2: w.lambda2, lambda3: z }),
        ("ND", LossWeights { lambda1: z, lambda2: z, lambda3: w.lambda3 }),
        ("ETD", LossWeights { lambda1: w.lambda1, lambda2: w.lambda2, lambda3: z }),
        ("END", LossWeights { lambda1: w.lambda1, lambda2: z, lambda3: w.lambda3 }),
        ("TND", LossWeights { lambda1: z, lambda2: w.lambda2, lambda3: w.lambda3 }),
        ("ETND", LossWeights { lambda1: w.lambda1, lambda2: w.lambda2, lambda3: w.lambda3 }),
    ]
}

pub fn ablate(cfg: RunConfig, out: Option<PathBuf>) -> Result<()> {
    let out = OutDir::acquire(resolve_out_dir(out, "ablate", cfg.seed))?;
    out.write_config_echo(&cfg)?;
    let full = LossWeights {
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        lambda3: cfg.lambda3,
    };
    let combos = combinations(&full);
    let mut rows: Vec<AblationRow> = Vec::new();
    for &seed in &cfg.ablate_seeds {
        let mut seed_cfg = cfg.clone();
        seed_cfg.apply_kv("seed", &seed.to_string())?;
        let data = load_dataset(&seed_cfg)?;
        for (name, w) in &combos {
            let model_cfg = seed_cfg.model_config(data.num_identities);
            let mut train_cfg = seed_cfg.train_config();
            train_cfg.loss_weights = *w;
            let mut state = TrainState::init(&model_cfg, &train_cfg)?;
            run_training(&mut state, &train_cfg, &data, None, None)?;
            let set = embed_eval_set(&mut state, &data, seed_cfg.normalize)?;
            let r = evaluate_set(
                &set,
                seed_cfg.metric,
                seed_cfg.max_rank,
                seed_cfg.cross_camera_filter,
            )?;
            println!(
                "seed {seed}  {name:5}  rank-1 {:.4}  mAP {:.4}",
                r.rank1(),
                r.map
            );
            rows.push(AblationRow {
                combination: name.to_string(),
                seed,
                lambda1: w.lambda1,
                lambda2: w.lambda2,
                lambda3: w.lambda3,
                rank1: r.rank1(),
                map: r.map,
            });
        }
    }
    // per-combination means over seeds
    let mut means: Vec<serde_json::Value> = Vec::new();
    println!("--- means over {} seeds ---", cfg.ablate_seeds.len());
    for (name, _) in &combos {
        let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.combination == *name).collect();
        let n = sel.len().max(1) as f64;
        let r1 = sel.iter().map(|r| r.rank1).sum::<f64>() / n;
        let map = sel.iter().map(|r| r.map).sum::<f64>() / n;
        println!("{name:5}  rank-1 {r1:.4}  mAP {map:.4}");
        means.push(serde_json::json!({ "combination": name, "rank1": r1, "map": map }));
    }
    out.write_json(
        "ablation.json",
        &serde_json::json!({ "rows": rows, "means": means, "config": cfg.to_kv_string() }),
    )?;
    let mut csv = String::from("combination,seed,lambda1,lambda2,lambda3,rank1,map\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.combination, r.seed, r.lambda1, r.lambda2, r.lambda3, r.rank1, r.map
        ));
    }
    std::fs::write(out.file("ablation.csv"), csv)?;
    Ok(())
}

pub fn heatmap(cfg: RunConfig, checkpoint: &PathBuf, out: Option<PathBuf>, count: usize) -> Result<()> {
    let out = OutDir::acquire(resolve_out_dir(out, "heatmap", cfg.seed))?;
    out.write_config_echo(&cfg)?;
    let mut state = load_checkpoint(checkpoint)?;
    let data = load_dataset(&cfg)?;
    check_compat(&state, &cfg, &data)?;
    let queries = data.split_indices(Split::Query);
    let take = if count == 0 { queries.len() } else { count.min(queries.len()) };
    for (n, &i) in queries.iter().take(take).enumerate() {
        let rec = &data.records[i];
        let path = out.file(&format!("heatmap_{n:03}_id{}.png", rec.orig_identity));
        export_heatmap(
            &mut state.extractor,
            &state.classifier,
            &rec.pixels,
            cfg.heatmap_stat,
            &path,
        )?;
    }
    println!("wrote {take} heatmaps -> {}", out.path().display());
    Ok(())
}

pub fn synth(cfg: RunConfig, out: Option<PathBuf>) -> Result<()> {
    let out = OutDir::acquire(resolve_out_dir(out, "synth", cfg.seed))?;
    out.write_config_echo(&cfg)?;
    let data = synth_generate(&cfg.synth_spec())?;
    write_dataset(&data, out.path())?;
    println!(
        "{} images ({} identities) -> {}  [hash {}]",
        data.records.len(),
        data.num_identities,
        out.path().display(),
        &data.content_hash()[..16]
    );
    Ok(())
}
