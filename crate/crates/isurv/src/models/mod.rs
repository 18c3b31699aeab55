//! The imprecise survival models: losses, training strategies, fine-tuning
//! and prediction.

pub mod config;
pub mod loss;
pub mod predict;
pub mod store;
pub mod train;

pub use config::{ModelConfig, Variant};
pub use loss::{instance_loss, loss_isurvj, loss_isurvm, loss_isurvq, mix_probabilities, window_range};
pub use predict::{
    expected_time, expected_time_from_distribution, interval_envelope, predict_distribution,
    predict_distributions, predict_interval_survival, predict_survival, survival_from_distribution,
};
pub use store::{load_model, save_model};
pub use train::{
    fine_tune, fit, gaussian_weights_graph, generation_loss_nodes, joint_loss_nodes,
    neural_weights_graph, reduce_generation_losses, train, ModelParams, NeuralLeaves, TrainedModel,
};
