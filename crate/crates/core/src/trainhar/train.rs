use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::layers::Tensor;
use super::model::{cross_entropy, normalize_image, Gradients, ToyPanopticModel};
use super::postprocess::panoptic_postprocess;
use super::sampler::StratifiedSampler;
use crate::error::{Error, Result};
use crate::occlcon::{contrastive_loss_grad, embed, separation_score, total_loss, Embedding, EmbeddingBatch, MarginConfig};
use crate::pandata::{read_dataset, Dataset, DatasetWriter, PanopticMap, SampleRef, Taxonomy};
use crate::paneval::{report_from_maps, EvalOptions, StratifiedReport};
use crate::provenance::config_hash;
use crate::scenegen::OcclusionLevel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Contrastive,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::Contrastive => "contrastive",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "contrastive" => Ok(Mode::Contrastive),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected baseline or contrastive)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    /// Held-out root for checkpoint selection; when absent, `val_fraction` of
    /// each level of `dataset` is held out instead.
    pub val_dataset: Option<PathBuf>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub mode: Mode,
    pub margins: MarginConfig,
    /// Square training crop; smaller images are used whole.
    pub crop_size: u32,
    pub min_segment_area: usize,
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: PathBuf::from("data/train"),
            val_dataset: None,
            epochs: 10,
            batch_size: 8,
            learning_rate: 0.1,
            seed: 0,
            mode: Mode::Contrastive,
            margins: MarginConfig::default(),
            crop_size: 128,
            min_segment_area: 8,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.margins.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.mode == Mode::Contrastive && self.batch_size < 2 {
            return Err(Error::Config("contrastive mode needs batch_size >= 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.crop_size < 8 {
            return Err(Error::Config(format!("crop_size {} is below 8", self.crop_size)));
        }
        if self.min_segment_area == 0 {
            return Err(Error::Config("min_segment_area must be at least 1".into()));
        }
        if self.val_dataset.is_none() && !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction {} must lie in (0, 1) when no val_dataset is given",
                self.val_fraction
            )));
        }
        Ok(())
    }

    /// Margins as applied to the objective: baseline mode trains with weight zero.
    pub fn effective_margins(&self) -> MarginConfig {
        match self.mode {
            Mode::Baseline => MarginConfig {
                lambda_weight: 0.0,
                ..self.margins
            },
            Mode::Contrastive => self.margins,
        }
    }
}

/// One image held in memory for training or evaluation.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub image_id: u64,
    pub level: OcclusionLevel,
    pub input: Tensor,
    /// Taxonomy index per pixel; `None` on void.
    pub targets: Vec<Option<u16>>,
    pub gt: PanopticMap,
}

/// Loads every sample of `dataset` with its RGB image and occlusion level.
pub fn load_items(dataset: &Dataset) -> Result<Vec<TrainItem>> {
    if !dataset.has_images() {
        return Err(Error::Contract(format!(
            "dataset {} has no RGB images to train or predict on",
            dataset.layout.root.display()
        )));
    }
    let sidecar = dataset.require_sidecar()?;
    dataset
        .samples()
        .map(|s| {
            let s = s?;
            let level = sidecar
                .get(&s.image_id)
                .ok_or_else(|| Error::MissingSidecar(vec![s.image_id]))?
                .occlusion_level;
            let targets = s
                .panoptic
                .category_raster()
                .iter()
                .map(|&c| match c {
                    0 => Ok(None),
                    c => dataset
                        .taxonomy
                        .index_of(c)
                        .map(|k| Some(k as u16))
                        .ok_or(Error::UnknownCategory(c)),
                })
                .collect::<Result<_>>()?;
            Ok(TrainItem {
                image_id: s.image_id,
                level,
                input: normalize_image(s.image.as_ref().expect("dataset has images")),
                targets,
                gt: s.panoptic,
            })
        })
        .collect()
}

fn crop(item: &TrainItem, size: usize, rng: &mut ChaCha8Rng) -> (Tensor, Vec<Option<u16>>) {
    let (h, w) = (item.input.h, item.input.w);
    if h <= size && w <= size {
        return (item.input.clone(), item.targets.clone());
    }
    let (ch, cw) = (h.min(size), w.min(size));
    let y0 = rng.gen_range(0..=h - ch);
    let x0 = rng.gen_range(0..=w - cw);
    let mut t = Tensor::zeros(item.input.c, ch, cw);
    let mut targets = Vec::with_capacity(ch * cw);
    for y in 0..ch {
        for c in 0..item.input.c {
            let src = (c * h + y0 + y) * w + x0;
            t.data[(c * ch + y) * cw..(c * ch + y + 1) * cw].copy_from_slice(&item.input.data[src..src + cw]);
        }
        targets.extend_from_slice(&item.targets[(y0 + y) * w + x0..(y0 + y) * w + x0 + cw]);
    }
    (t, targets)
}

/// Pooled, normalized embedding of one feature map.
fn embed_features(features: &Tensor, level: OcclusionLevel) -> Result<Embedding> {
    let f: Vec<f64> = features.data.iter().map(|&v| v as f64).collect();
    embed(&f, [1, features.c, features.h, features.w], &[level])
}

/// Logged losses of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    #[serde(rename = "L_seg")]
    pub l_seg: f64,
    #[serde(rename = "L_con")]
    pub l_con: f64,
    #[serde(rename = "L_fin")]
    pub l_fin: f64,
}

/// Held-out metrics after an epoch; epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub pq: f64,
    pub pq_th: Option<f64>,
    pub pq_st: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the epoch with the best held-out PQ.
    pub checkpoint: Checkpoint,
    pub best_epoch: usize,
    pub log: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Held-out report of the selected checkpoint.
    pub validation: StratifiedReport,
    /// Held-out separation score of the selected checkpoint; `None` when the
    /// held-out set lacks the pairs it needs.
    pub separation: Option<f64>,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }
}

/// Predictions of `model` on `items`, in order.
pub fn predict_items(model: &ToyPanopticModel, taxonomy: &Taxonomy, items: &[TrainItem], min_area: usize) -> Result<Vec<PanopticMap>> {
    items
        .iter()
        .map(|it| panoptic_postprocess(&model.forward(&it.input).logits, taxonomy, min_area))
        .collect()
}

/// Stratified report of `model` against the ground truth held in `items`.
pub fn evaluate_items(
    model: &ToyPanopticModel,
    taxonomy: &Taxonomy,
    items: &[TrainItem],
    min_area: usize,
    opts: &EvalOptions,
) -> Result<StratifiedReport> {
    report_from_maps(
        items.iter().map(|it| {
            let pred = panoptic_postprocess(&model.forward(&it.input).logits, taxonomy, min_area)?;
            Ok((it.image_id, it.level, pred, it.gt.clone()))
        }),
        taxonomy,
        opts,
    )
}

const SELECTION_OPTIONS: EvalOptions = EvalOptions {
    ignore_void: true,
    compute_ap: false,
};

fn epoch_record(epoch: usize, report: &StratifiedReport) -> EpochRecord {
    let all = report.all();
    EpochRecord {
        epoch,
        pq: all.pq.unwrap_or(0.0),
        pq_th: all.pq_th,
        pq_st: all.pq_st,
    }
}

/// Splits `items` into (train, held-out), holding out `fraction` of each level.
fn hold_out(items: Vec<TrainItem>, fraction: f64, seed: u64) -> (Vec<TrainItem>, Vec<TrainItem>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut held = BTreeSet::new();
    for level in OcclusionLevel::ALL {
        let mut idx: Vec<usize> = (0..items.len()).filter(|&i| items[i].level == level).collect();
        idx.shuffle(&mut rng);
        let k = ((fraction * idx.len() as f64).round() as usize).min(idx.len().saturating_sub(1));
        held.extend(idx.into_iter().take(k));
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, it) in items.into_iter().enumerate() {
        if held.contains(&i) {
            val.push(it);
        } else {
            train.push(it);
        }
    }
    (train, val)
}

/// Trains on `train`, selecting the checkpoint by PQ on `val`.
pub fn train_on(config: &TrainConfig, taxonomy: &Taxonomy, train: &[TrainItem], val: &[TrainItem]) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::Contract("held-out set is empty".into()));
    }
    let levels: Vec<OcclusionLevel> = train.iter().map(|it| it.level).collect();
    let sampler = StratifiedSampler::new(&levels, config.batch_size, config.seed);
    if config.mode == Mode::Contrastive && sampler.levels_present() < 2 {
        return Err(Error::Config(
            "the training set has a single occlusion level, so the contrastive loss has no negative pairs; use mode = baseline"
                .into(),
        ));
    }
    let margins = config.effective_margins();
    let lambda = margins.lambda_weight;
    let mut model = ToyPanopticModel::new(taxonomy.len(), config.seed);
    let mut crop_rng = ChaCha8Rng::seed_from_u64(config.seed);
    crop_rng.set_stream(2);
    let crop_size = config.crop_size as usize;
    let lr = config.learning_rate as f32;

    let report = evaluate_items(&model, taxonomy, val, config.min_segment_area, &SELECTION_OPTIONS)?;
    let mut epochs = vec![epoch_record(0, &report)];
    let mut best = (epochs[0].pq, 0, model.clone());
    let mut log = Vec::new();
    let mut step = 0u64;

    for epoch in 1..=config.epochs {
        for batch in sampler.epoch(epoch as u64) {
            let mut acts = Vec::with_capacity(batch.len());
            let mut dlogits = Vec::with_capacity(batch.len());
            let (mut ce_sum, mut count) = (0.0, 0usize);
            for &i in &batch {
                let (input, targets) = crop(&train[i], crop_size, &mut crop_rng);
                let a = model.forward(&input);
                let (loss, n, grad) = cross_entropy(&a.logits, &targets);
                ce_sum += loss;
                count += n;
                acts.push(a);
                dlogits.push(grad);
            }
            let l_seg = if count > 0 { ce_sum / count as f64 } else { 0.0 };
            let scale = if count > 0 { 1.0 / count as f32 } else { 0.0 };
            for g in &mut dlogits {
                g.data.iter_mut().for_each(|v| *v *= scale);
            }

            let embeddings: Vec<Embedding> = acts
                .iter()
                .zip(&batch)
                .map(|(a, &i)| embed_features(&a.e3, train[i].level))
                .collect::<Result<_>>()?;
            let dim = model.embedding_dim();
            let rows: Vec<f64> = embeddings.iter().flat_map(|e| e.batch.rows.iter().copied()).collect();
            let labels: Vec<OcclusionLevel> = batch.iter().map(|&i| train[i].level).collect();
            let (l_con, grad_rows) = contrastive_loss_grad(&EmbeddingBatch::new(dim, rows, labels)?, &margins)?;
            let l_fin = total_loss(l_seg, l_con, &margins)?;
            if !l_seg.is_finite() || !l_fin.is_finite() {
                return Err(Error::NonFinite(format!("step {step}: L_seg {l_seg}, L_fin {l_fin}")));
            }

            let mut grads = Gradients::zeros(&model);
            for (k, (a, dl)) in acts.iter().zip(&dlogits).enumerate() {
                let d_features = (config.mode == Mode::Contrastive).then(|| {
                    let g = embeddings[k].backward(&grad_rows[k * dim..(k + 1) * dim]);
                    Tensor {
                        c: a.e3.c,
                        h: a.e3.h,
                        w: a.e3.w,
                        data: g.iter().map(|&v| (lambda * v) as f32).collect(),
                    }
                });
                model.backward(a, dl, d_features.as_ref(), &mut grads);
            }
            model.apply(&grads, lr);
            log.push(StepRecord { step, l_seg, l_con, l_fin });
            step += 1;
        }
        let report = evaluate_items(&model, taxonomy, val, config.min_segment_area, &SELECTION_OPTIONS)?;
        let rec = epoch_record(epoch, &report);
        if rec.pq > best.0 {
            best = (rec.pq, epoch, model.clone());
        }
        epochs.push(rec);
    }

    let (_, best_epoch, best_model) = best;
    let validation = evaluate_items(&best_model, taxonomy, val, config.min_segment_area, &EvalOptions::default())?;
    let separation = separation_score(&embed_items(&best_model, val)?).ok();
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model: best_model,
            taxonomy: taxonomy.clone(),
            config_hash: config_hash(config),
        },
        best_epoch,
        log,
        epochs,
        validation,
        separation,
    })
}

/// Loads the configured datasets and trains.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let dataset = read_dataset(&config.dataset)?;
    let items = load_items(&dataset)?;
    let (train_items, val_items) = match &config.val_dataset {
        Some(root) => {
            let val = read_dataset(root)?;
            if val.taxonomy != dataset.taxonomy {
                return Err(Error::Contract("validation and training taxonomies differ".into()));
            }
            (items, load_items(&val)?)
        }
        None => hold_out(items, config.val_fraction, config.seed),
    };
    train_on(config, &dataset.taxonomy, &train_items, &val_items)
}

/// One unit embedding row per image of `dataset`, labelled by its occlusion level.
pub fn extract_embeddings(checkpoint: &Checkpoint, dataset: &Dataset) -> Result<EmbeddingBatch> {
    check_taxonomy(checkpoint, &dataset.taxonomy)?;
    let items = load_items(dataset)?;
    embed_items(&checkpoint.model, &items)
}

pub fn embed_items(model: &ToyPanopticModel, items: &[TrainItem]) -> Result<EmbeddingBatch> {
    let mut rows = Vec::with_capacity(items.len() * model.embedding_dim());
    for it in items {
        rows.extend(embed_features(&model.encode(&it.input), it.level)?.batch.rows);
    }
    EmbeddingBatch::new(model.embedding_dim(), rows, items.iter().map(|it| it.level).collect())
}

fn check_taxonomy(checkpoint: &Checkpoint, taxonomy: &Taxonomy) -> Result<()> {
    if &checkpoint.taxonomy != taxonomy {
        return Err(Error::Checkpoint(
            "the checkpoint was trained on a different category taxonomy".into(),
        ));
    }
    Ok(())
}

/// Writes scored panoptic predictions for every image of `dataset` to `out`.
pub fn predict_dataset(checkpoint: &Checkpoint, dataset: &Dataset, out: &Path, min_area: usize) -> Result<()> {
    check_taxonomy(checkpoint, &dataset.taxonomy)?;
    let mut writer = DatasetWriter::create(out, &dataset.taxonomy)?;
    for entry in &dataset.entries {
        let image = dataset.load_image(entry)?;
        let logits = checkpoint.model.forward(&normalize_image(&image)).logits;
        let pred = panoptic_postprocess(&logits, &dataset.taxonomy, min_area)?;
        writer.add(SampleRef {
            image_id: entry.image_id,
            image: None,
            panoptic: &pred,
            occlusion: None,
            amodal: Vec::new(),
        })?;
    }
    writer.finish()?;
    Ok(())
}
