//! Interchange formats: dependency parses, word embeddings, triad listings,
//! model checkpoints and scene files.

mod checkpoint;
mod conllu;
mod embeddings;
mod triads_tsv;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CheckpointError, FORMAT_VERSION};
pub use conllu::{parse_conllu, read_parses, write_parses, DependencyParse, DependencyToken, ParseError};
pub use embeddings::{
    load_embeddings, normalize_word, write_embeddings, EmbeddingError, EmbeddingTable, OOV_TOKEN, SELF_TOKEN,
    SPECIAL_TOKENS, UNKNOWN_TOKEN,
};
pub use triads_tsv::{read_triads, write_triads, TriadRow, TriadTsvError};
