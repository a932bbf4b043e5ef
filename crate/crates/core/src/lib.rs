//! Extractive reading-comprehension readers trained from scratch, and
//! compression of a reader ensemble into a single student through soft
//! answer distributions, margin penalties on confusing answers, and
//! attention matching.

pub mod corpus;
pub mod decode_eval;
pub mod distill;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod reader;

pub use error::{Error, Result};
