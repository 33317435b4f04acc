//! Per-step wall-clock timing of the three attention regimes.
//!
//! Full and Sparse re-encode references on every step, so one step is one
//! joint forward. CausalSparse pays the reference pass once per run; its
//! per-step time is the noise-only forward plus the reference pass divided
//! by the step count.

use std::fmt::Write as _;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use log::warn;
use serde::Serialize;

use crate::attention::{count_flops, AttentionMode};
use crate::error::{Error, Result};
use crate::pipeline::{gaussian_latent, Backend, CausalSparseDiT, EncodedReferences, GuiderFeatures};
use crate::tensor::Tensor;

use super::config::BenchConfig;
use super::fit::{polyfit, PolyFit};
use super::csv_err;

/// A single timed run must span at least this many timer ticks.
pub const MIN_TICKS: u32 = 10;
const MAX_BATCH: u32 = 1 << 20;
const CAUSAL_REPEAT_FACTOR: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub mode: AttentionMode,
    pub n_refs: usize,
    pub steps: usize,
    /// Median per-step wall time in seconds.
    pub time_s: f64,
    pub flops: u64,
    pub fingerprint: String,
}

/// Smallest positive difference between consecutive clock readings.
pub fn timer_tick() -> Duration {
    static TICK: OnceLock<Duration> = OnceLock::new();
    *TICK.get_or_init(|| {
        let mut best = Duration::MAX;
        for _ in 0..1000 {
            let a = Instant::now();
            let mut b = Instant::now();
            while b == a {
                b = Instant::now();
            }
            best = best.min(b - a);
        }
        best
    })
}

/// Median seconds per call over `repeats` samples after one discarded
/// warmup call. Calls that finish within [`MIN_TICKS`] ticks are batched,
/// doubling the batch until a sample is long enough.
pub fn median_time(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    let floor = timer_tick() * MIN_TICKS;
    let repeats = repeats.max(1);
    f()?;
    let mut batch = 1u32;
    let mut samples = Vec::with_capacity(repeats);
    loop {
        let start = Instant::now();
        for _ in 0..batch {
            std::hint::black_box(&mut f)()?;
        }
        let elapsed = start.elapsed();
        if elapsed >= floor || batch >= MAX_BATCH {
            // the calibration run already has the final batch size
            samples.push(elapsed.as_secs_f64() / batch as f64);
            break;
        }
        warn!("run shorter than {MIN_TICKS} timer ticks; batching {} calls per sample", batch * 2);
        batch *= 2;
    }
    while samples.len() < repeats {
        let start = Instant::now();
        for _ in 0..batch {
            std::hint::black_box(&mut f)()?;
        }
        samples.push(start.elapsed().as_secs_f64() / batch as f64);
    }
    samples.sort_by(f64::total_cmp);
    Ok(samples[samples.len() / 2])
}

/// Random reference and noise tokens for one `(config, N)` point.
pub struct BenchInputs {
    pub refs: EncodedReferences,
    pub noise: Tensor,
}

pub fn bench_inputs(config: &BenchConfig, n_refs: usize) -> Result<BenchInputs> {
    let layout = config.layout(n_refs)?;
    let d = config.dim;
    let refs = EncodedReferences {
        tokens: gaussian_latent(vec![layout.ref_tokens(), d], config.seed.wrapping_add(1), config.precision),
        layout,
        quadrants: Vec::new(),
    };
    let noise = gaussian_latent(vec![layout.noise_len(), d], config.seed.wrapping_add(2), config.precision);
    Ok(BenchInputs { refs, noise })
}

pub fn bench_point(model: &CausalSparseDiT, config: &BenchConfig, mode: AttentionMode, n_refs: usize) -> Result<BenchResult> {
    let inputs = bench_inputs(config, n_refs)?;
    let none = GuiderFeatures::new(Vec::new());
    let t = 500;
    let time_s = match mode {
        AttentionMode::Full | AttentionMode::Sparse => median_time(config.repeats, || {
            model
                .forward_joint(&inputs.refs, &inputs.noise, &none, mode, t, Backend::Kernel)
                .map(drop)
        })?,
        AttentionMode::CausalSparse => {
            // cheap calls, so relative jitter is larger; more samples steady the median
            let repeats = config.repeats * CAUSAL_REPEAT_FACTOR;
            let ref_pass = median_time(repeats, || model.reference_pass(&inputs.refs).map(drop))?;
            let cache = model.reference_pass(&inputs.refs)?;
            let step = median_time(repeats, || model.dit_forward(&inputs.noise, &none, &cache, t).map(drop))?;
            step + ref_pass / config.steps as f64
        }
    };
    if time_s <= 0.0 {
        return Err(Error::Range(format!("non-positive timing {time_s} for {mode} N={n_refs}")));
    }
    Ok(BenchResult {
        mode,
        n_refs,
        steps: config.steps,
        time_s,
        flops: count_flops(&inputs.refs.layout, mode, config.steps as u64)?.total,
        fingerprint: config.fingerprint(),
    })
}

/// Every `(mode, N)` point, modes in [`AttentionMode::ALL`] order.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchResult>> {
    config.validate()?;
    let model = CausalSparseDiT::new(config.model_config(None), config.seed, config.precision)?;
    let mut out = Vec::new();
    for mode in AttentionMode::ALL {
        for &n in &config.n_refs {
            out.push(bench_point(&model, config, mode, n)?);
        }
    }
    Ok(out)
}

pub fn write_bench_csv(results: &[BenchResult], sink: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["mode", "N", "steps", "time_s", "flops"]).map_err(csv_err)?;
    for r in results {
        w.write_record([
            r.mode.as_str().to_string(),
            r.n_refs.to_string(),
            r.steps.to_string(),
            format!("{:.9}", r.time_s),
            r.flops.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn series(results: &[BenchResult], mode: AttentionMode) -> (Vec<f64>, Vec<f64>) {
    results
        .iter()
        .filter(|r| r.mode == mode)
        .map(|r| (r.n_refs as f64, r.time_s))
        .unzip()
}

/// Shape checks over a benchmark sweep.
#[derive(Debug, Clone, Serialize)]
pub struct ScalingSummary {
    pub full_quadratic: PolyFit,
    pub causal_linear: PolyFit,
    /// `time(Full) / time(CausalSparse)` per N, ascending N.
    pub ratios: Vec<(usize, f64)>,
    /// N values where `Full > Sparse > CausalSparse` fails.
    pub ordering_violations: Vec<usize>,
}

impl ScalingSummary {
    pub fn ratios_increasing(&self) -> bool {
        self.ratios.windows(2).all(|w| w[1].1 > w[0].1)
    }
}

pub fn summarize(results: &[BenchResult]) -> Result<ScalingSummary> {
    let (xf, yf) = series(results, AttentionMode::Full);
    let (xc, yc) = series(results, AttentionMode::CausalSparse);
    let (_, ys) = series(results, AttentionMode::Sparse);
    let mut ratios: Vec<(usize, f64)> = xf.iter().zip(yf.iter().zip(&yc)).map(|(&n, (f, c))| (n as usize, f / c)).collect();
    ratios.sort_by_key(|r| r.0);
    let ordering_violations = xf
        .iter()
        .enumerate()
        .filter(|&(i, &n)| n >= 2.0 && !(yf[i] > ys[i] && ys[i] > yc[i]))
        .map(|(_, &n)| n as usize)
        .collect();
    Ok(ScalingSummary {
        full_quadratic: polyfit(&xf, &yf, 2)?,
        causal_linear: polyfit(&xc, &yc, 1)?,
        ratios,
        ordering_violations,
    })
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 60.0;

/// Per-step time against N, one polyline per mode. Layout depends only on
/// the results.
pub fn render_svg(results: &[BenchResult]) -> String {
    let max_n = results.iter().map(|r| r.n_refs).max().unwrap_or(1).max(1) as f64;
    let max_t = results.iter().map(|r| r.time_s).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let px = |n: f64| MARGIN + n / max_n * (SVG_W - 2.0 * MARGIN);
    let py = |t: f64| SVG_H - MARGIN - t / max_t * (SVG_H - 2.0 * MARGIN);
    let colors = ["#d62728", "#1f77b4", "#2ca02c"];

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0, x1, y1) = (MARGIN, SVG_H - MARGIN, SVG_W - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">reference images N</text>"#,
        SVG_W / 2.0,
        SVG_H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 15 {})">seconds per step</text>"#,
        SVG_H / 2.0,
        SVG_H / 2.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11">{max_n}</text>"#, x1 - 10.0, y0 + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{max_t:.4}</text>"#, x0 - 4.0, y1 + 4.0);
    for (i, mode) in AttentionMode::ALL.into_iter().enumerate() {
        let mut pts: Vec<(f64, f64)> = results
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| (r.n_refs as f64, r.time_s))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = pts.iter().map(|&(n, t)| format!("{:.2},{:.2}", px(n), py(t))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            colors[i],
            path.join(" ")
        );
        let ly = MARGIN + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-size="12" fill="{}">{mode}</text>"#,
            MARGIN + 10.0,
            colors[i]
        );
    }
    s.push_str("</svg>\n");
    s
}
