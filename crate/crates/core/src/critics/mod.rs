//! Evaluation networks: a contrastive feature extractor whose 256-wide layer
//! defines the feature space, and a prototypical one-shot classifier.

mod augment;
mod embedding;
mod protonet;
mod simclr;

pub use augment::{augment, AugmentParams, AugmentationPolicy};
pub use embedding::{
    embeddings_to_le_bytes, normalize_features, pairwise_distances, squared_l2, Embedder, EmbeddingVector,
    FEATURE_DIM,
};
pub use protonet::{
    episode_accuracy, one_shot_classify, train_prototype_classifier, EpisodeHyper, PrototypeClassifier,
    PrototypeSet,
};
pub use simclr::{nt_xent, train_feature_extractor, ContrastiveHyper, CriticConfig, FeatureExtractor};
