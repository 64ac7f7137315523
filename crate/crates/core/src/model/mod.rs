//! The encoder f, projection head g, pair classifier and supervised baseline,
//! plus checkpoint persistence for each.

mod encoder;
mod heads;

use std::path::Path;

pub use encoder::{frames_to_batch, ConvBlock, Encoder, EncoderTrace, EMBED_DIM, ENCODER_CHANNELS, FEATURE_SIDE};
pub use heads::{
    pair_batch, Classifier, ClassifierTrace, Linear, Projection, ProjectionTrace, SupervisedModel,
    CLASSIFIER_WIDTHS, PAIR_DIM, PROJ_DIM,
};

use crate::checkpoint::{save_tensors, Checkpoint};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::nn::Tensor;

/// Eval-mode embedding `h` of one frame.
pub fn encode(image: &Frame, encoder: &Encoder) -> Result<Vec<f32>> {
    Ok(encoder.embed(&frames_to_batch(&[image])?)?.into_data())
}

/// Eval-mode projection `z = g(h)` of one embedding.
pub fn project(h: &[f32], projection: &Projection) -> Result<Vec<f32>> {
    let t = Tensor::from_vec(&[1, h.len()], h.to_vec())?;
    Ok(projection.project(&t)?.into_data())
}

/// `[p_neg, p_pos]` for the embedding pair `(h_i, h_j)`.
pub fn classify_pair(h_i: &[f32], h_j: &[f32], classifier: &Classifier) -> Result<[f32; 2]> {
    let p = classifier.predict(&pair_batch(&[(h_i, h_j)])?)?;
    Ok([p.data()[0], p.data()[1]])
}

/// `[p_neg, p_pos]` from the supervised baseline for one frame pair.
pub fn supervised_forward(x_i: &Frame, x_j: &Frame, model: &SupervisedModel) -> Result<[f32; 2]> {
    let p = model.predict(&frames_to_batch(&[x_i, x_j])?)?;
    Ok([p.data()[0], p.data()[1]])
}

/// Writes `tensors` as one checkpoint file.
pub fn save_checkpoint(path: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    let view: Vec<(&str, &Tensor)> = tensors.iter().map(|(n, t)| (n.as_str(), *t)).collect();
    save_tensors(path, &view)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

/// Encoder and projection head trained together by contrastive pretraining.
#[derive(Clone, Debug, PartialEq)]
pub struct SslModel {
    pub encoder: Encoder,
    pub projection: Projection,
}

impl SslModel {
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.encoder.named_tensors();
        v.extend(self.projection.named_tensors());
        v
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.named_tensors())
    }

    pub fn load(path: &Path, dropout: f32) -> Result<Self> {
        let mut ck = Checkpoint::load(path)?;
        Ok(Self {
            encoder: Encoder::from_checkpoint(&mut ck)?,
            projection: Projection::from_checkpoint(&mut ck, dropout)?,
        })
    }
}

/// Loads the encoder tensors of any checkpoint that carries them.
pub fn load_encoder(path: &Path) -> Result<Encoder> {
    let mut ck = Checkpoint::load(path)?;
    if !ck.contains_prefix("encoder.") {
        return Err(Error::Input(format!("{} holds no encoder tensors", path.display())));
    }
    Encoder::from_checkpoint(&mut ck)
}

pub fn load_classifier(path: &Path, dropout: f32) -> Result<Classifier> {
    let mut ck = Checkpoint::load(path)?;
    Classifier::from_checkpoint(&mut ck, dropout)
}

pub fn load_supervised(path: &Path) -> Result<SupervisedModel> {
    let mut ck = Checkpoint::load(path)?;
    SupervisedModel::from_checkpoint(&mut ck)
}

impl Classifier {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.named_tensors())
    }
}

impl SupervisedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.named_tensors())
    }
}
