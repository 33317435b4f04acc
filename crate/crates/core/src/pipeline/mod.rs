mod block;
mod denoise;
mod guider;
mod latent;
mod lora;
mod loss;
mod model;
mod schedule;
mod timestep;
mod weights;

pub use block::{Modulation, SelfAttention, TransformerBlock};
pub use denoise::{denoise_loop, gaussian_latent, CachePolicy, DenoiseOutput};
pub use guider::{Conditioning, GuiderFeatures, LineArtGuider, GUIDER_CHANNELS};
pub use latent::{decode_latent, encode_latent, patchify, unpatchify, LATENT_CHANNELS};
pub use lora::{lora_linear, Linear, LoraAdapter};
pub use loss::{sample_training_loss, training_loss, EpsilonPredictor, TrainingSample};
pub use model::{Backend, CausalSparseDiT, DiTConfig, EncodedReferences, PassCount};
pub use schedule::{forward_diffuse, NoiseSchedule, BETA_END, BETA_START, TRAIN_STEPS};
pub use timestep::{timestep_sinusoid, TimestepEmbedder};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights};
