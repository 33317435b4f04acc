mod layout;
mod retrieve;
mod sampler;
mod sincos;

pub use layout::{
    assign_encodings, extract_region, grid_to_tokens, partition_layout, tokens_to_grid, EncodedSequence, PosEncLayout,
    PositionalTable, Quadrant, Region,
};
pub use retrieve::{
    assemble_references, load_pool, quadrant_split, retrieve_quadrant_sets, retrieve_topk, HistogramCosine,
    QuadrantSplit, RefSet, SimilarityScorer,
};
pub use sampler::{sample_training_refs, TRAINING_TOTALS};
pub use sincos::sincos_grid;
