//! End-to-end colourisation: retrieval, reference encoding, cached denoising.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::attention::{count_flops, AttentionMode, FlopReport};
use crate::dataprep::{load_image, save_image, synth_scene_sized, HintSpec, Image};
use crate::error::{Error, Result};
use crate::pipeline::{
    decode_latent, denoise_loop, encode_latent, load_weights, CachePolicy, CausalSparseDiT, Conditioning, DiTConfig,
};
use crate::posenc::{assemble_references, load_pool, retrieve_quadrant_sets, HistogramCosine, Quadrant};

use super::config::BenchConfig;

pub const DEFAULT_TOP_K: usize = 6;
pub const DEFAULT_SYNTH_SIZE: usize = 128;
pub const PIPELINE_PATCH: usize = 2;
pub const PIPELINE_FACTOR: usize = 8;

#[derive(Debug, Clone)]
pub enum LineArtSource {
    File(PathBuf),
    Synth(u64),
}

#[derive(Debug, Clone)]
pub enum PoolSource {
    Dir(PathBuf),
    /// That many synthetic colour scenes.
    Synth(usize),
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub line_art: LineArtSource,
    pub pool: PoolSource,
    /// JSON-lines hint points in the coordinates of the resized line art.
    pub hints: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub top_k: usize,
    pub synth_size: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub output: PathBuf,
    pub image_dims: (usize, usize),
    pub ref_pass_count: u64,
    pub noise_steps: u64,
    pub steps: usize,
    pub n_refs: usize,
    pub reference_quadrants: Vec<Quadrant>,
    pub reference_pass_s: f64,
    pub step_times_s: Vec<f64>,
    pub flops: Vec<FlopReport>,
    pub fingerprint: String,
}

/// Sides are rounded down to a multiple of `2·patch·factor`, at least one
/// such block, so quadrant references tile into whole patches.
pub fn conform_dims(height: usize, width: usize, patch: usize, factor: usize) -> (usize, usize) {
    let block = 2 * patch * factor;
    let snap = |v: usize| (v / block).max(1) * block;
    (snap(height), snap(width))
}

fn pipeline_model(config: &BenchConfig, weights: Option<&Path>) -> Result<CausalSparseDiT> {
    match weights {
        Some(path) => load_weights(path, config.precision),
        None => CausalSparseDiT::new(
            DiTConfig {
                depth: config.depth,
                dim: config.dim,
                heads: config.heads,
                patch: PIPELINE_PATCH,
                factor: PIPELINE_FACTOR,
                guider_depth: config.depth,
                mlp_ratio: 2,
                lora_rank: Some(4),
            },
            config.seed,
            config.precision,
        ),
    }
}

fn load_line_art(source: &LineArtSource, size: usize) -> Result<Image> {
    match source {
        LineArtSource::File(p) => load_image(p),
        LineArtSource::Synth(seed) => Ok(synth_scene_sized(*seed, size, size).line_a),
    }
}

fn load_reference_pool(source: &PoolSource, size: usize, seed: u64) -> Result<Vec<Image>> {
    let pool: Vec<Image> = match source {
        PoolSource::Dir(dir) => load_pool(dir)?.into_iter().map(|(_, img)| img).collect(),
        PoolSource::Synth(n) => (0..*n as u64)
            .map(|i| synth_scene_sized(seed.wrapping_add(1 + i), size, size).color)
            .collect(),
    };
    if pool.is_empty() {
        return Err(Error::Capacity("reference pool is empty".into()));
    }
    Ok(pool)
}

pub fn run_pipeline(config: &BenchConfig, opts: &PipelineOptions) -> Result<PipelineReport> {
    config.validate()?;
    let model = pipeline_model(config, opts.weights.as_deref())?;
    let mc = *model.config();

    let raw = load_line_art(&opts.line_art, opts.synth_size)?;
    let (h, w) = conform_dims(raw.height(), raw.width(), mc.patch, mc.factor);
    let line_art = if (h, w) == raw.dims() { raw } else { raw.resize(h, w)? };
    let pool = load_reference_pool(&opts.pool, opts.synth_size, config.seed)?;

    let sets = retrieve_quadrant_sets(&line_art, &pool, opts.top_k, &HistogramCosine::default())?;
    let chosen = assemble_references(&sets);
    info!("retrieved {} distinct references from a pool of {}", chosen.len(), pool.len());

    let mut latents = Vec::with_capacity(chosen.len());
    for &(idx, q) in &chosen {
        let img = pool[idx].resize(h / 2, w / 2)?;
        latents.push((encode_latent(&img, mc.factor, config.precision)?, q));
    }

    let hints = match &opts.hints {
        Some(p) => HintSpec::from_json_lines(&fs::read_to_string(p)?, h, w)?,
        None => HintSpec::empty(h, w),
    };
    let cond = Conditioning::from_images(&line_art, &hints, mc.factor, config.precision)?;
    let (lh, lw) = cond.latent_dims();
    let table = model.positional_table(lh, lw)?;
    let refs = model.encode_references(&latents, &table)?;

    let out = denoise_loop(&model, &cond, &refs, config.steps, config.seed, CachePolicy::Cached)?;
    let image = decode_latent(&out.latent, mc.factor)?;

    fs::create_dir_all(&opts.out_dir)?;
    let output = opts.out_dir.join("colorized.png");
    save_image(&image, &output)?;

    let flops = AttentionMode::ALL
        .iter()
        .map(|&m| count_flops(&refs.layout, m, config.steps as u64))
        .collect::<Result<Vec<_>>>()?;
    let report = PipelineReport {
        output,
        image_dims: image.dims(),
        ref_pass_count: out.passes.reference,
        noise_steps: out.passes.noise,
        steps: config.steps,
        n_refs: refs.layout.n_refs(),
        reference_quadrants: refs.quadrants.clone(),
        reference_pass_s: out.reference_pass_s,
        step_times_s: out.step_times_s,
        flops,
        fingerprint: config.fingerprint(),
    };
    fs::write(
        opts.out_dir.join("instrumentation.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}
