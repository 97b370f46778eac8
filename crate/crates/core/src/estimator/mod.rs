//! Stage II: a classification head that predicts token indices from
//! partial, noisy pose observations, plus regression and bins baselines.

pub mod baselines;
pub mod config;
pub mod head;
pub mod model;
pub mod observation;
pub mod train;

pub use baselines::{bin_index, train_bins, train_regression, BinsModel, RegressionModel};
pub use config::{EstimatorConfig, HEAD_BLOCKS};
pub use head::{Featurizer, HeadParams};
pub use model::{argmax_rows, estimator_loss, gt_labels, soft_tokens, EstimatorLoss, EstimatorModel};
pub use observation::{observation_tensor, Observation};
pub use train::{train_estimator, PosePredictor, StageTwoLog, OCCLUDED_PCK_THRESHOLD, PCK_THRESHOLD};
