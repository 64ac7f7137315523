use std::collections::HashMap;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{augment_pair, AugmentConfig};
use super::loss::nt_xent_loss;
use super::retrieve::score_pairs;
use crate::dataset::{Dataset, FrameRef};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::metrics::{roc_auc, ScoredLabel};
use crate::model::{
    frames_to_batch, pair_batch, Classifier, Encoder, Projection, SslModel, SupervisedModel, EMBED_DIM, PROJ_DIM,
};
use crate::nn::{adam_step, AdamState, Mode, Tensor};
use crate::pairs::{PairExample, PairLabel};
use crate::rng::Rng;

const INIT_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;
const AUGMENT_STREAM: u64 = 3;
const DROPOUT_STREAM: u64 = 4;
const CLF_INIT_STREAM: u64 = 11;
const CLF_ORDER_STREAM: u64 = 12;
const CLF_DROPOUT_STREAM: u64 = 13;
const SUP_INIT_STREAM: u64 = 21;
const SUP_ORDER_STREAM: u64 = 22;

/// One line of the training metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SslTrainConfig {
    pub lr: f32,
    /// Frames per step (N); each contributes two views.
    pub batch_size: usize,
    pub epochs: usize,
    /// Optimizer steps per epoch; `None` means one pass over the frames.
    pub steps_per_epoch: Option<usize>,
    pub temperature: f32,
    pub l2_weight: f32,
    pub dropout: f32,
    pub augment: AugmentConfig,
    /// Set from the run-level seed, not read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SslTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            batch_size: 128,
            epochs: 500,
            steps_per_epoch: None,
            temperature: 0.5,
            l2_weight: 1e-5,
            dropout: 0.2,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl SslTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("ssl batch_size must be at least 2"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("temperature must be positive"));
        }
        if !(self.lr >= 0.0) || !(self.l2_weight >= 0.0) {
            return Err(Error::config("lr and l2_weight must be non-negative"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(Error::config("steps_per_epoch must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        self.augment.validate()
    }
}

fn zero_grads(params: &mut [&mut Tensor]) {
    params.iter_mut().for_each(|p| p.zero_grad());
}

fn ssl_params(model: &mut SslModel) -> Vec<&mut Tensor> {
    let mut p = model.encoder.params_mut();
    p.extend(model.projection.params_mut());
    p
}

/// Contrastive pretraining of encoder and projection head on unlabeled
/// frames. Each step samples N distinct frames, builds two augmented views of
/// each, and minimizes NT-Xent with every other view as a negative.
pub fn train_ssl(frames: &[&Frame], cfg: &SslTrainConfig) -> Result<(SslModel, Vec<EpochLog>)> {
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::config("contrastive training needs at least one frame"));
    }
    if cfg.batch_size > frames.len() {
        return Err(Error::config(format!(
            "ssl batch_size {} exceeds the {} available frames",
            cfg.batch_size,
            frames.len()
        )));
    }
    let mut init = Rng::stream(cfg.seed, &[INIT_STREAM]);
    let mut model = SslModel {
        encoder: Encoder::new(&mut init),
        projection: Projection::new(cfg.dropout, &mut init),
    };
    let steps = cfg
        .steps_per_epoch
        .unwrap_or_else(|| frames.len().div_ceil(cfg.batch_size));
    let mut adam = AdamState::new(cfg.lr);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut total = 0.0f64;
        for step in 0..steps {
            let tag = [epoch as u64, step as u64];
            let picks = Rng::stream(cfg.seed, &[SAMPLE_STREAM, tag[0], tag[1]])
                .sample_distinct(frames.len(), cfg.batch_size);
            let views = picks
                .par_iter()
                .enumerate()
                .map(|(i, &f)| {
                    let mut rng = Rng::stream(cfg.seed, &[AUGMENT_STREAM, tag[0], tag[1], i as u64]);
                    augment_pair(frames[f], &cfg.augment, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            let flat: Vec<&Frame> = views.iter().flat_map(|(a, b)| [a, b]).collect();
            let images = frames_to_batch(&flat)?;

            zero_grads(&mut ssl_params(&mut model));
            let (h, etrace) = model.encoder.forward_train(&images)?;
            let mut drop_rng = Rng::stream(cfg.seed, &[DROPOUT_STREAM, tag[0], tag[1]]);
            let (mut z, ptrace) = model.projection.forward(h, Mode::Train, &mut drop_rng)?;
            let (loss, gz) = nt_xent_loss(z.data(), PROJ_DIM, cfg.temperature)?;
            z.set_grad(&gz)?;
            let gh = model.projection.backward(ptrace, &z)?;
            model.encoder.backward(etrace, &gh)?;
            adam_step(&mut ssl_params(&mut model), &mut adam, cfg.l2_weight)?;
            total += loss;
        }
        let loss = total / steps as f64;
        info!("ssl epoch {} loss {loss:.5}", epoch + 1);
        logs.push(EpochLog {
            epoch: epoch + 1,
            loss,
            val_auc: None,
        });
    }
    Ok((model, logs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClfTrainConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: f32,
    pub l2_weight: f32,
    /// Set from the run-level seed, not read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ClfTrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 42,
            epochs: 60,
            dropout: 0.2,
            l2_weight: 1e-5,
            seed: 0,
        }
    }
}

impl ClfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("classifier batch_size must be at least 2"));
        }
        if !(self.lr >= 0.0) || !(self.l2_weight >= 0.0) {
            return Err(Error::config("lr and l2_weight must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must be in [0, 1)"));
        }
        Ok(())
    }
}

fn require_both_classes(pairs: &[PairExample]) -> Result<()> {
    let pos = pairs.iter().filter(|p| p.label == PairLabel::Positive).count();
    if pos == 0 || pos == pairs.len() {
        return Err(Error::config(format!(
            "training pairs must contain both classes ({pos} of {} positive)",
            pairs.len()
        )));
    }
    Ok(())
}

/// Frozen eval-mode embeddings of every frame referenced by a pair set.
pub struct EmbeddingCache {
    index: HashMap<FrameRef, usize>,
    rows: Vec<f32>,
}

impl EmbeddingCache {
    pub fn build(encoder: &Encoder, data: &Dataset, refs: impl IntoIterator<Item = FrameRef>) -> Result<Self> {
        let mut order: Vec<FrameRef> = refs.into_iter().collect();
        order.sort();
        order.dedup();
        let frames = order.iter().map(|r| data.frame(r)).collect::<Result<Vec<_>>>()?;
        let mut rows = Vec::with_capacity(order.len() * EMBED_DIM);
        for h in encoder.embed_frames(&frames, 64)? {
            rows.extend_from_slice(&h);
        }
        let index = order.into_iter().enumerate().map(|(i, r)| (r, i)).collect();
        Ok(Self { index, rows })
    }

    pub fn for_pairs(encoder: &Encoder, data: &Dataset, pairs: &[PairExample]) -> Result<Self> {
        Self::build(encoder, data, pairs.iter().flat_map(|p| [p.a, p.b]))
    }

    pub fn get(&self, r: &FrameRef) -> Result<&[f32]> {
        let i = *self
            .index
            .get(r)
            .ok_or_else(|| Error::Input(format!("frame {r:?} was not embedded")))?;
        Ok(&self.rows[i * EMBED_DIM..(i + 1) * EMBED_DIM])
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// `p_pos` for every pair.
    pub fn score(&self, pairs: &[PairExample], classifier: &Classifier) -> Result<Vec<f64>> {
        let rows = pairs
            .iter()
            .map(|p| Ok((self.get(&p.a)?, self.get(&p.b)?)))
            .collect::<Result<Vec<_>>>()?;
        score_pairs(&rows, classifier)
    }
}

fn labeled(pairs: &[PairExample], scores: &[f64]) -> Vec<ScoredLabel> {
    pairs
        .iter()
        .zip(scores)
        .map(|(p, &score)| ScoredLabel {
            score,
            label: p.label.class() as u8,
        })
        .collect()
}

fn val_auc(pairs: &[PairExample], scores: &[f64]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    match roc_auc(&labeled(pairs, scores)) {
        Ok(a) => Some(a),
        Err(e) => {
            warn!("validation auc unavailable: {e}");
            None
        }
    }
}

/// Trains the pair classifier on embeddings from the frozen `encoder`,
/// logging validation AUC after each epoch.
pub fn train_classifier(
    encoder: &Encoder,
    data: &Dataset,
    train: &[PairExample],
    val: &[PairExample],
    cfg: &ClfTrainConfig,
) -> Result<(Classifier, Vec<EpochLog>)> {
    cfg.validate()?;
    require_both_classes(train)?;
    let cache = EmbeddingCache::build(encoder, data, train.iter().chain(val).flat_map(|p| [p.a, p.b]))?;
    let mut clf = Classifier::new(cfg.dropout, &mut Rng::stream(cfg.seed, &[CLF_INIT_STREAM]));
    let mut adam = AdamState::new(cfg.lr);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::stream(cfg.seed, &[CLF_ORDER_STREAM, epoch as u64]).shuffle(&mut order);
        let mut total = 0.0f64;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let rows = chunk
                .iter()
                .map(|&i| Ok((cache.get(&train[i].a)?, cache.get(&train[i].b)?)))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label.class()).collect();
            let x = pair_batch(&rows)?;
            zero_grads(&mut clf.params_mut());
            let mut rng = Rng::stream(cfg.seed, &[CLF_DROPOUT_STREAM, epoch as u64, step as u64]);
            let (logits, trace) = clf.forward(x, Mode::Train, &mut rng)?;
            let (loss, _) = clf.backward_ce(trace, logits, &labels)?;
            adam_step(&mut clf.params_mut(), &mut adam, cfg.l2_weight)?;
            total += loss as f64 * chunk.len() as f64;
        }
        let loss = total / train.len() as f64;
        let auc = val_auc(val, &cache.score(val, &clf)?);
        info!("classifier epoch {} loss {loss:.5} val auc {auc:?}", epoch + 1);
        logs.push(EpochLog {
            epoch: epoch + 1,
            loss,
            val_auc: auc,
        });
    }
    Ok((clf, logs))
}

fn pair_images(data: &Dataset, pairs: &[&PairExample]) -> Result<Tensor> {
    let frames = pairs
        .iter()
        .flat_map(|p| [data.frame(&p.a), data.frame(&p.b)])
        .collect::<Result<Vec<_>>>()?;
    frames_to_batch(&frames)
}

/// `p_pos` of the supervised baseline for every pair.
pub fn supervised_scores(model: &SupervisedModel, data: &Dataset, pairs: &[PairExample]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(32) {
        let refs: Vec<&PairExample> = chunk.iter().collect();
        let p = model.predict(&pair_images(data, &refs)?)?;
        out.extend(p.data().chunks(2).map(|r| r[1] as f64));
    }
    Ok(out)
}

/// Trains the supervised baseline (encoder from scratch plus a single dense
/// head) end to end on labeled pairs.
pub fn train_supervised(
    data: &Dataset,
    train: &[PairExample],
    val: &[PairExample],
    cfg: &ClfTrainConfig,
) -> Result<(SupervisedModel, Vec<EpochLog>)> {
    cfg.validate()?;
    require_both_classes(train)?;
    let mut model = SupervisedModel::new(&mut Rng::stream(cfg.seed, &[SUP_INIT_STREAM]));
    let mut adam = AdamState::new(cfg.lr);
    let mut logs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        Rng::stream(cfg.seed, &[SUP_ORDER_STREAM, epoch as u64]).shuffle(&mut order);
        let mut total = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let pairs: Vec<&PairExample> = chunk.iter().map(|&i| &train[i]).collect();
            let labels: Vec<usize> = pairs.iter().map(|p| p.label.class()).collect();
            let images = pair_images(data, &pairs)?;
            zero_grads(&mut model.params_mut());
            let loss = model.train_step(&images, &labels)?;
            adam_step(&mut model.params_mut(), &mut adam, cfg.l2_weight)?;
            total += loss as f64 * chunk.len() as f64;
        }
        let loss = total / train.len() as f64;
        let auc = val_auc(val, &supervised_scores(&model, data, val)?);
        info!("supervised epoch {} loss {loss:.5} val auc {auc:?}", epoch + 1);
        logs.push(EpochLog {
            epoch: epoch + 1,
            loss,
            val_auc: auc,
        });
    }
    Ok((model, logs))
}

/// Writes one JSON object per epoch.
pub fn logs_to_jsonl(logs: &[EpochLog]) -> String {
    logs.iter()
        .map(|l| serde_json::to_string(l).expect("log serializes") + "\n")
        .collect()
}
