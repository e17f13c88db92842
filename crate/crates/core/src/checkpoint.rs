//! Self-describing checkpoint container.
//!
//! Layout: an 8-byte magic, a little-endian u32 header length, a JSON
//! header, then raw little-endian f64 tensor data. The header carries the
//! format version, the model architecture, epoch/iteration counters, the
//! run's master seed, and an index of every tensor (model parameters,
//! normalization running statistics, optimizer moments) keyed by path.

use crate::error::{Error, Result};
use crate::model::{Classifier, Extractor, ModelConfig};
use crate::nn::{Adam, AdamConfig, AdamSlot};
use crate::rng::{derive_rng, stream};
use crate::trainer::TrainState;
use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"ETNDCKPT";
pub const FORMAT_VERSION: &str = "etndnet-checkpoint/1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    path: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: String,
    model: ModelConfig,
    adam: AdamConfig,
    adam_steps: BTreeMap<String, u64>,
    epoch: u32,
    iteration: u64,
    master_seed: u64,
    tensors: Vec<TensorEntry>,
}

fn collect_tensors(state: &mut TrainState) -> Vec<(String, ArrayD<f64>)> {
    let mut out: Vec<(String, ArrayD<f64>)> = Vec::new();
    state.extractor.visit_tensors("extractor", &mut |path, t| {
        out.push((path.to_string(), t.clone()));
    });
    state
        .classifier
        .visit_tensors("classifier", &mut |path, t| {
            out.push((path.to_string(), t.clone()));
        });
    for (path, slot) in &state.optimizer.slots {
        out.push((format!("adam/m/{path}"), slot.m.clone()));
        out.push((format!("adam/v/{path}"), slot.v.clone()));
    }
    out
}

/// Write the full training state to `path`.
pub fn save_checkpoint(path: &Path, state: &mut TrainState) -> Result<()> {
    let tensors = collect_tensors(state);
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (tpath, t) in &tensors {
        let len = t.len() as u64;
        entries.push(TensorEntry {
            path: tpath.clone(),
            shape: t.shape().to_vec(),
            offset,
            len,
        });
        offset += len * 8;
    }
    let header = Header {
        format_version: FORMAT_VERSION.to_string(),
        model: state.model_cfg.clone(),
        adam: state.optimizer.cfg,
        adam_steps: state
            .optimizer
            .slots
            .iter()
            .map(|(k, v)| (k.clone(), v.t))
            .collect(),
        epoch: state.epoch,
        iteration: state.iteration,
        master_seed: state.master_seed,
        tensors: entries,
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&(header_json.len() as u32).to_le_bytes())?;
    file.write_all(&header_json)?;
    for (_, t) in &tensors {
        for &v in t.as_slice().expect("tensors are standard layout") {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

/// Rebuild a training state from `path`.
pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)?;
    let header: Header = serde_json::from_slice(&header_json)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version '{}'",
            header.format_version
        )));
    }
    let mut data = Vec::new();
    file.read_to_end(&mut data)?;

    let mut tensors: BTreeMap<String, ArrayD<f64>> = BTreeMap::new();
    for e in &header.tensors {
        let start = e.offset as usize;
        let end = start + e.len as usize * 8;
        if end > data.len() {
            return Err(Error::Checkpoint(format!(
                "tensor '{}' extends past end of file",
                e.path
            )));
        }
        let values: Vec<f64> = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(e.shape.clone(), values)
            .map_err(|err| Error::Checkpoint(format!("tensor '{}': {err}", e.path)))?;
        tensors.insert(e.path.clone(), arr);
    }

    // rebuild the architecture, then overwrite every tensor by path
    let mut init_rng = derive_rng(header.master_seed, stream::INIT, 0);
    let mut extractor = Extractor::new(&header.model, &mut init_rng)?;
    let mut classifier = Classifier::new(
        header.model.feature_channels(),
        header.model.num_classes,
        header.model.pooling,
        &mut init_rng,
    );
    let mut problems: Vec<String> = Vec::new();
    {
        let mut fill = |path: &str, t: &mut ArrayD<f64>| match tensors.get(path) {
            Some(stored) if stored.shape() == t.shape() => t.assign(stored),
            Some(stored) => problems.push(format!(
                "{path}: shape {:?} vs stored {:?}",
                t.shape(),
                stored.shape()
            )),
            None => problems.push(format!("{path}: absent")),
        };
        extractor.visit_tensors("extractor", &mut fill);
        classifier.visit_tensors("classifier", &mut fill);
    }
    if !problems.is_empty() {
        return Err(Error::Checkpoint(format!(
            "tensor mismatches: {}",
            problems.join("; ")
        )));
    }
    let mut optimizer = Adam::new(header.adam);
    for (param_path, t) in &header.adam_steps {
        let m = tensors
            .get(&format!("adam/m/{param_path}"))
            .ok_or_else(|| Error::Checkpoint(format!("missing moment adam/m/{param_path}")))?;
        let v = tensors
            .get(&format!("adam/v/{param_path}"))
            .ok_or_else(|| Error::Checkpoint(format!("missing moment adam/v/{param_path}")))?;
        optimizer.slots.insert(
            param_path.clone(),
            AdamSlot {
                m: m.clone(),
                v: v.clone(),
                t: *t,
            },
        );
    }
    Ok(TrainState {
        model_cfg: header.model,
        extractor,
        classifier,
        optimizer,
        epoch: header.epoch,
        iteration: header.iteration,
        master_seed: header.master_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};
    use crate::trainer::{train, TrainConfig, TrainState};
    use tempfile::tempdir;

    #[test]
    fn roundtrip_preserves_resumed_trajectory() {
        let data = synth_generate(&SynthSpec {
            num_identities: 4,
            images_per_identity: 4,
            query_per_identity: 1,
            gallery_per_identity: 1,
            ..Default::default()
        })
        .unwrap();
        let model = ModelConfig::desk(data.num_identities);
        let full_cfg = TrainConfig {
            epochs: 4,
            lr_decay_epochs: vec![2],
            batch_p: 2,
            batch_k: 2,
            seed: 3,
            ..Default::default()
        };
        // uninterrupted run
        let mut direct = TrainState::init(&model, &full_cfg).unwrap();
        let metrics_direct = train(&mut direct, &full_cfg, &data, None, None).unwrap();

        // run half, save, load, resume
        let half_cfg = TrainConfig {
            epochs: 2,
            ..full_cfg.clone()
        };
        let mut first = TrainState::init(&model, &half_cfg).unwrap();
        let metrics_first = train(&mut first, &half_cfg, &data, None, None).unwrap();
        let dir = tempdir().unwrap();
        let ckpt = dir.path().join("state.etnd");
        save_checkpoint(&ckpt, &mut first).unwrap();
        let mut resumed = load_checkpoint(&ckpt).unwrap();
        assert_eq!(resumed.epoch, 2);
        let metrics_resumed = train(&mut resumed, &full_cfg, &data, None, None).unwrap();

        let stitched: Vec<f64> = metrics_first
            .iter()
            .chain(metrics_resumed.iter())
            .map(|m| m.extractor_objective)
            .collect();
        let straight: Vec<f64> = metrics_direct
            .iter()
            .map(|m| m.extractor_objective)
            .collect();
        assert_eq!(stitched.len(), straight.len());
        for (a, b) in stitched.iter().zip(straight.iter()) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("junk.etnd");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(Error::Checkpoint(_)) | Err(Error::Io(_))
        ));
    }
}
