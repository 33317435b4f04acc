//! Images, synthetic scenes, line-art augmentation, colour hints and
//! pixel metrics.

pub mod hints;
pub mod image;
pub mod io;
pub mod metrics;
pub mod synth;

pub use hints::{render_hint_latents, sample_hints, HintPoint, HintSampling, HintSpec, MAX_HINT_VARIANCE};
pub use image::{blend_styles, Image};
pub use io::{load_image, save_image};
pub use metrics::{psnr, psnr_capped, ssim, PSNR_CAP_DB};
pub use synth::{synth_scene, synth_scene_sized, SynthScene};
