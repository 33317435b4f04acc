//! Drivers behind the `csdit` binary: FLOP tables, timing sweeps, equivalence
//! suites and the end-to-end pipeline.

pub mod config;
pub mod equiv;
pub mod fit;
pub mod run;
pub mod timing;

use std::fmt::Write as _;
use std::io::Write;

pub use config::{parse_count_list, resolve_threads, BenchConfig, THREADS_ENV};
pub use equiv::{run_equiv, EquivOptions, EquivReport, SuiteReport};
pub use fit::{polyfit, PolyFit};
pub use run::{conform_dims, run_pipeline, LineArtSource, PipelineOptions, PipelineReport, PoolSource};
pub use timing::{
    bench_point, median_time, render_svg, run_bench, summarize, write_bench_csv, BenchResult, ScalingSummary,
};

use crate::attention::{count_flops, AttentionMode, FlopReport};
use crate::error::{Error, Result};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: u8 = 0;
    pub const USAGE: u8 = 1;
    pub const VERIFICATION: u8 = 2;
    pub const IO: u8 = 3;
}

/// Maps a library error to the exit code the binary reports.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Parse { .. } => exit::IO,
        Error::Structural(_) | Error::ShapeMismatch { .. } | Error::PrecisionMismatch(_) => exit::VERIFICATION,
        Error::Config(_)
        | Error::Capacity(_)
        | Error::Range(_)
        | Error::Dimension(_)
        | Error::Index { .. }
        | Error::Overflow(_)
        | Error::Json(_) => exit::USAGE,
    }
}

/// One report per `(N, mode)`, N in config order.
pub fn flops_table(config: &BenchConfig) -> Result<Vec<FlopReport>> {
    let mut out = Vec::new();
    for &n in &config.n_refs {
        let layout = config.layout(n)?;
        for mode in AttentionMode::ALL {
            out.push(count_flops(&layout, mode, config.steps as u64)?);
        }
    }
    Ok(out)
}

pub fn render_flops_table(reports: &[FlopReport]) -> String {
    let mut s = format!(
        "{:>6} {:>14} {:>20} {:>20} {:>20} {:>20}\n",
        "N", "mode", "noise_self", "noise_ref", "ref_self", "total"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:>6} {:>14} {:>20} {:>20} {:>20} {:>20}",
            r.layout.n_refs(),
            r.mode.as_str(),
            r.noise_self,
            r.noise_ref,
            r.ref_self,
            r.total
        );
    }
    s
}

pub fn write_flops_csv(reports: &[FlopReport], sink: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["n_refs", "mode", "sl", "sr", "steps", "noise_self", "noise_ref", "ref_self", "total"])
        .map_err(csv_err)?;
    for r in reports {
        w.write_record([
            r.layout.n_refs().to_string(),
            r.mode.as_str().to_string(),
            r.layout.noise_len().to_string(),
            r.layout.ref_len().to_string(),
            r.steps.to_string(),
            r.noise_self.to_string(),
            r.noise_ref.to_string(),
            r.ref_self.to_string(),
            r.total.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}
