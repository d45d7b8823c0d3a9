//! Toy-scale style-based waveform GAN: mapping network, modulated causal
//! convolution generator with shaped noise, autofaded residual critic, and
//! WGAN-LP training with an optional descriptor loss.

mod checkpoint;
mod config;
mod loss;
mod model;
mod params;
mod train;


pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{GanConfig, TrainConfig, KERNEL_LEN, LRELU_SLOPE};
pub use loss::{lipschitz_penalty, wgan_lp_loss};
pub use model::{
    autofade, noise_fade, noise_layer, sample_latent, ConditionVector, Discriminator, DiscriminatorPath, Generator,
    NoiseDraw,
};
pub use params::{Adam, ParamStore};
pub use train::{
    envelope_params_for, generate_batch, generate_one, stream_rng, train, GenerationReport, LossRecord, TrainOutcome,
    TrainingSet,
};
