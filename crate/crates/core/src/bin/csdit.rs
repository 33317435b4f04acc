use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::warn;

use csdit_core::bench::{
    self, exit, exit_code, flops_table, parse_count_list, render_flops_table, render_svg, resolve_threads, run_bench,
    run_equiv, run_pipeline, summarize, write_bench_csv, write_flops_csv, BenchConfig, EquivOptions, LineArtSource,
    PipelineOptions, PoolSource,
};
use csdit_core::{Error, Precision, Result};

#[derive(Parser)]
#[command(name = "csdit", version, about = "Causal sparse reference attention: FLOPs, timing, equivalence, pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic attention FLOPs per mode and reference count.
    Flops(Common),
    /// Wall-clock per-step timing of the three attention modes.
    Bench(Common),
    /// Cached route against the dense masked oracle.
    Equiv {
        #[command(flatten)]
        common: Common,
        /// Shift cached keys/values; the run must then fail.
        #[arg(long)]
        corrupt_cache: bool,
        #[arg(long, default_value_t = bench::equiv::DEFAULT_CASES)]
        cases: usize,
    },
    /// Colourise one line-art image with retrieved references.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Line-art image (png or ppm).
        #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
        line_art: Option<PathBuf>,
        /// Use the synthetic scene with this seed as line art.
        #[arg(long)]
        synth: Option<u64>,
        /// Directory of reference images.
        #[arg(long, conflicts_with = "synth_refs", required_unless_present = "synth_refs")]
        refs: Option<PathBuf>,
        /// Use this many synthetic colour scenes as the reference pool.
        #[arg(long)]
        synth_refs: Option<usize>,
        /// JSON-lines colour hints.
        #[arg(long)]
        hints: Option<PathBuf>,
        /// Weights file; random initialisation from --seed otherwise.
        #[arg(long)]
        weights: Option<PathBuf>,
        /// References retrieved per quadrant.
        #[arg(long, default_value_t = bench::run::DEFAULT_TOP_K)]
        top_k: usize,
        /// Side length of synthetic images.
        #[arg(long, default_value_t = bench::run::DEFAULT_SYNTH_SIZE)]
        size: usize,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON file with the same keys as the flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sl: Option<usize>,
    #[arg(long)]
    sr: Option<usize>,
    /// Comma-separated reference counts.
    #[arg(long)]
    n_refs: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    precision: Option<Precision>,
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn resolve(&self) -> Result<BenchConfig> {
        let mut c = match &self.config {
            Some(p) => BenchConfig::from_json_file(p)?,
            None => BenchConfig::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        take!(sl, sr, steps, dim, depth, heads, seed, repeats, precision);
        if let Some(list) = &self.n_refs {
            c.n_refs = parse_count_list(list)?;
        }
        if self.threads.is_some() {
            c.threads = self.threads;
        }
        c.validate()?;
        Ok(c)
    }
}

/// Timing defaults to one worker so measurements are comparable.
fn install_pool(threads: Option<usize>, fallback: Option<usize>) -> Result<()> {
    if let Some(n) = resolve_threads(threads, fallback)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Flops(common) => {
            let c = common.resolve()?;
            let table = flops_table(&c)?;
            write!(stdout, "{}", render_flops_table(&table))?;
            fs::create_dir_all(&common.out)?;
            write_flops_csv(&table, fs::File::create(common.out.join("flops.csv"))?)?;
        }
        Command::Bench(common) => {
            let c = common.resolve()?;
            install_pool(c.threads, Some(1))?;
            let results = run_bench(&c)?;
            fs::create_dir_all(&common.out)?;
            write_bench_csv(&results, fs::File::create(common.out.join("bench.csv"))?)?;
            fs::write(common.out.join("bench.svg"), render_svg(&results))?;
            write_bench_csv(&results, &mut stdout)?;
            match summarize(&results) {
                Ok(s) => {
                    fs::write(common.out.join("summary.json"), serde_json::to_string_pretty(&s)?)?;
                    writeln!(
                        stdout,
                        "full quadratic R2 {:.4}, causal_sparse linear R2 {:.4}, ratios increasing: {}",
                        s.full_quadratic.r_squared,
                        s.causal_linear.r_squared,
                        s.ratios_increasing()
                    )?;
                }
                Err(e) => warn!("no scaling summary: {e}"),
            }
        }
        Command::Equiv {
            common,
            corrupt_cache,
            cases,
        } => {
            let c = common.resolve()?;
            install_pool(c.threads, None)?;
            let report = run_equiv(&EquivOptions {
                seed: c.seed,
                cases,
                precision: c.precision,
                corrupt_cache,
            })?;
            for s in &report.suites {
                let status = if s.passed() { "PASS" } else { "FAIL" };
                write!(
                    stdout,
                    "{status} {:<13} cases={:<3} max_abs={:.3e} tol={:.0e}",
                    s.name, s.cases, s.max_abs, s.tolerance
                )?;
                if let Some(seed) = s.failing_seed {
                    write!(stdout, " failing_seed={seed}")?;
                }
                writeln!(stdout)?;
            }
            fs::create_dir_all(&common.out)?;
            fs::write(common.out.join("equiv.json"), serde_json::to_string_pretty(&report)?)?;
            if !report.passed() {
                return Ok(exit::VERIFICATION);
            }
        }
        Command::Pipeline {
            common,
            line_art,
            synth,
            refs,
            synth_refs,
            hints,
            weights,
            top_k,
            size,
        } => {
            let c = common.resolve()?;
            install_pool(c.threads, None)?;
            let opts = PipelineOptions {
                line_art: match (line_art, synth) {
                    (Some(p), _) => LineArtSource::File(p),
                    (None, Some(s)) => LineArtSource::Synth(s),
                    (None, None) => unreachable!("clap requires one source"),
                },
                pool: match (refs, synth_refs) {
                    (Some(p), _) => PoolSource::Dir(p),
                    (None, Some(n)) => PoolSource::Synth(n),
                    (None, None) => unreachable!("clap requires one pool"),
                },
                hints,
                weights,
                top_k,
                synth_size: size,
                out_dir: common.out.clone(),
            };
            let r = run_pipeline(&c, &opts)?;
            writeln!(
                stdout,
                "wrote {} ({} refs, {} reference pass, {} noise steps)",
                r.output.display(),
                r.n_refs,
                r.ref_pass_count,
                r.noise_steps
            )?;
        }
    }
    Ok(exit::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::SUCCESS });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
