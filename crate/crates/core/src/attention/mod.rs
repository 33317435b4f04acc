//! Full, sparse and causal-sparse attention over a `[references ∥ noise]`
//! token sequence, the reference KV-cache, and exact cost accounting.

pub mod cache;
pub mod flops;
pub mod kernel;
pub mod layout;
pub mod mask;

pub use cache::{cached_attend, reference_pass, KVCache, LayerKV};
pub use flops::{count_flops, FlopReport};
pub use kernel::{attend, attend_dense};
pub use layout::{AttentionMode, Segment, TokenLayout};
pub use mask::{AttentionMask, MaskRows, PairCounts};
