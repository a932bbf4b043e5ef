//! Examples, tokenization, vocabularies, SQuAD-format I/O, the synthetic
//! corpus generator, and the adversarial distractor transform.

mod adversarial;
mod example;
mod squad;
mod synth;
mod tokenize;
mod vocab;

pub use adversarial::{append_adversarial, near_duplicate};
pub use example::{Example, Span};
pub use squad::{load_squad_json, load_squad_json_with_report, parse_squad_json, to_squad_json, write_squad_json, LoadReport};
pub use synth::{generate_synthetic, SynthSpec};
pub use tokenize::{char_slice, tokenize, Token};
pub use vocab::{EncodedExample, Vocabulary, PAD, UNK};
