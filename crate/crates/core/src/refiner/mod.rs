//! The semantic box-prompt refiner: feature extraction, class prototypes,
//! multiple-instance bag loss with analytic gradients, and proposal selection.

pub mod bag;
pub mod checkpoint;
pub mod mil;
pub mod network;
pub mod optim;
pub mod prototype;
pub mod train;

pub use bag::{make_proposal_bag, select_best_box, ProposalBag, DEFAULT_SCALES};
pub use mil::{
    bag_loss, bag_loss_with_grad, bag_score, cosine_similarity, instance_probability, mil_loss,
    BagAggregation, ClassProbabilities,
};
pub use network::{extract_feature, extract_features, stem, FeatureVector, Gradient, RefinerDims, RefinerParams};
pub use optim::{sgd_step, SgdConfig, SgdState};
pub use prototype::PrototypeBuffer;
pub use train::{loss_gradient, PositiveSeed, ProposalConfig, TrainConfig, TrainSample, Trainer};
