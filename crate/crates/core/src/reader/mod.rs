//! Extractive reader: contextualizer, similarity and attention, fusion, and
//! pointer heads, plus the checkpoint format.

mod checkpoint;
mod model;
mod params;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use model::{
    attend_and_fuse, attend_fuse_graph, bind, bind_full, encode, encode_graph, forward, forward_graph, similarity,
    similarity_graph, Bound, ParamVars, ReaderGraph, ReaderOutput,
};
pub use params::{ReaderDims, ReaderParams, INIT_SCALE, PARAM_NAMES};
