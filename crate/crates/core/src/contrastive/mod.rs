//! Contrastive pretraining, downstream pair-classifier training and ranked
//! retrieval.

mod augment;
mod loss;
mod retrieve;
mod train;

pub use augment::{augment_pair, augment_view, AugmentConfig, AugmentDraw};
pub use loss::{cosine_sim, nt_xent_loss};
pub use retrieve::{retrieve, retrieve_embedded, score_pairs};
pub use train::{
    logs_to_jsonl, supervised_scores, train_classifier, train_ssl, train_supervised, ClfTrainConfig,
    EmbeddingCache, EpochLog, SslTrainConfig,
};
