//! The learned tracker: a predictive autoencoder (PAE) that propagates a
//! recurrent belief state from image observations, plus an adversarially
//! trained sampler that draws crisp state hypotheses from that belief.

mod arch;
mod model;
pub(crate) mod net;

pub use arch::{ArchConfig, OUTPUT_BIAS_INIT};
pub use model::{
    draw_noise, expected_obs_via_samples, expected_obs_with_noise, BeliefState, DiscriminatorModel, PaeModel,
    SamplerModel,
};
mod schedule;
mod train_pae;

pub use schedule::{draw_mask, mask_probability, CurriculumSchedule};
pub use train_pae::{accumulate_pae_gradients, pae_loss, pae_minibatch, pae_update, train_pae, PaeLogRow, TrainPaeConfig};
mod train_sampler;

pub use train_sampler::{
    accumulate_sampler_gradients, SamplerBatch,
    averager_loss, belief_bank, discriminator_step, generator_loss, sampler_loss, train_sampler_gan, SamplerLogRow,
    SamplerLossConfig, TrainSamplerConfig,
};
pub mod io;
