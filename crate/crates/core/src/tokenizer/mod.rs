//! Stage I: compositional encoder, shared EMA codebook, decoder, loss and
//! training loop.

pub mod codebook;
pub mod config;
pub mod loss;
pub mod model;
pub mod train;

pub use codebook::{squared_distance, Codebook};
pub use config::{TokenizerConfig, TrainConfig};
pub use loss::{neighbor_context, pct_loss, prepare_batch, standardized_smooth_l1, PctLoss, QuantMode, TokenizerBatch};
pub use model::{CoordNorm, Decoder, Encoder, EncoderInput, TokenSeq, TokenizerModel};
pub use train::{train_tokenizer, EpochLog};
