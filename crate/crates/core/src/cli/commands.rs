use std::fs;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use super::RunConfig;
use crate::data::{augment_offline, generate_synthetic, load_dataset, load_volume, save_volume, split_indices, write_manifest};
use crate::error::{config_err, Error, Result};
use crate::evaluation::{compute_metrics, export_overlay, positive_probability, rollout_map, Metrics, OverlayFiles, PredictionSet};
use crate::models::{Model, Variant};
use crate::tensor::{load_checkpoint, save_checkpoint};
use crate::training::{stream_seed, train_loop, EpochMetrics};

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    let d = cfg.out.as_deref().ok_or_else(|| config_err!("an output directory is required (--out or `out = …`)"))?;
    fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    Ok(d)
}

fn data_dir(cfg: &RunConfig) -> Result<&Path> {
    cfg.data_dir.as_deref().ok_or_else(|| config_err!("a dataset directory is required (`data.dir = …`)"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `volumes/`, `train.tsv`, `val.tsv`, `test.tsv` and `config.txt`.
/// Only the training split is augmented. Returns the three split sizes.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<[usize; 3]> {
    let out = out_dir(cfg)?;
    let base = generate_synthetic(&cfg.synthetic)?;
    let (tr, va, te) = split_indices(base.len(), &cfg.split)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| base[i].clone()).collect::<Vec<_>>();
    let train = augment_offline(&pick(&tr), &cfg.aug, stream_seed(cfg.seed, &[3]))?;
    let vols = out.join("volumes");
    fs::create_dir_all(&vols).map_err(|e| Error::io(&vols, e))?;
    let mut counts = [0; 3];
    for (k, (name, set)) in [("train", train), ("val", pick(&va)), ("test", pick(&te))].into_iter().enumerate() {
        let mut entries = Vec::with_capacity(set.len());
        for (i, v) in set.iter().enumerate() {
            let rel = format!("volumes/{name}_{i:05}.json");
            save_volume(v, &out.join(&rel))?;
            entries.push((rel, v.label));
        }
        write_manifest(&out.join(format!("{name}.tsv")), &entries)?;
        counts[k] = set.len();
    }
    write_text(&out.join("config.txt"), &cfg.to_text())?;
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub log: Vec<EpochMetrics>,
}

/// Writes `best.ckpt`, `final.ckpt` (only after at least one epoch),
/// `metrics.jsonl` and `config.txt` into the output directory.
pub fn cmd_train(cfg: &RunConfig, mut on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainSummary> {
    let out = out_dir(cfg)?;
    let dir = data_dir(cfg)?;
    let train = load_dataset(&dir.join("train.tsv"))?;
    let val = load_dataset(&dir.join("val.tsv"))?;
    let mut model = Model::<f32>::new(cfg.model, cfg.seed)?;
    write_text(&out.join("config.txt"), &cfg.to_text())?;
    let log_path = out.join("metrics.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let outcome = train_loop(&mut model, &train, &val, &cfg.train, |m| {
        on_epoch(m);
        writeln!(log, "{}", serde_json::to_string(m).expect("metrics serialize")).map_err(|e| Error::io(&log_path, e))?;
        Ok(ControlFlow::Continue(()))
    })?;
    save_checkpoint(&outcome.best, &out.join("best.ckpt"))?;
    if !outcome.log.is_empty() {
        save_checkpoint(&model.params, &out.join("final.ckpt"))?;
    }
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        best_val_acc: outcome.best_epoch.map(|e| outcome.log[e].val_acc),
        log: outcome.log,
    })
}

/// Builds the configured architecture and loads `checkpoint` into it.
pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<Model<f32>> {
    Model::with_params(cfg.model, load_checkpoint(checkpoint)?)
}

fn checkpoint_path(cfg: &RunConfig, given: Option<&Path>) -> Result<PathBuf> {
    match given {
        Some(p) => Ok(p.to_path_buf()),
        None => Ok(out_dir(cfg)?.join("best.ckpt")),
    }
}

/// Returns the metrics JSON together with the outcome: an undefined AUC is
/// reported in the JSON and surfaces as an error afterwards.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>, split: &str) -> Result<(String, Result<()>)> {
    if !["train", "val", "test"].contains(&split) {
        return Err(config_err!("unknown split {split:?} (expected train, val or test)"));
    }
    let model = load_model(cfg, &checkpoint_path(cfg, checkpoint)?)?;
    if model.config.classes != 2 {
        return Err(config_err!("binary metrics need a two-class model"));
    }
    let data = load_dataset(&data_dir(cfg)?.join(format!("{split}.tsv")))?;
    if data.is_empty() {
        return Err(config_err!("split {split} is empty"));
    }
    let mut scores = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    for v in &data {
        scores.push(positive_probability(&model.predict(v)?));
        labels.push(v.label.ok_or_else(|| config_err!("evaluation volume without a label"))?);
    }
    let m: Metrics = compute_metrics(&PredictionSet::new(scores, labels)?, cfg.threshold)?;
    let json = serde_json::to_string(&m).expect("metrics serialize");
    if let Some(out) = cfg.out.as_deref() {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        write_text(&out.join(format!("eval_{split}.json")), &json)?;
    }
    let result = match m.auc {
        Some(_) => Ok(()),
        None => Err(Error::Undefined(format!("AUC on split {split}: only one class present"))),
    };
    Ok((json, result))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutOutput {
    pub files: OverlayFiles,
    /// Block count when the two-level rollout ran.
    pub blocks: Option<usize>,
}

/// Writes the attribution volume and three slice images into `<out>/rollout`.
pub fn cmd_rollout(cfg: &RunConfig, checkpoint: Option<&Path>, volume: &Path) -> Result<RolloutOutput> {
    let model = load_model(cfg, &checkpoint_path(cfg, checkpoint)?)?;
    let v = load_volume(volume)?;
    let (_, rec) = model.predict_recorded(&v)?;
    let map = rollout_map(&model.config, &rec)?;
    let files = export_overlay(&map, &out_dir(cfg)?.join("rollout"), cfg.overlay[0], cfg.overlay[1])?;
    let blocks = matches!(model.config.variant, Variant::Minit | Variant::Mignit).then(|| rec.blocks.len());
    Ok(RolloutOutput { files, blocks })
}
