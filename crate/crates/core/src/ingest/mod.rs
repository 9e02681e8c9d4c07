//! CoNLL-U trees, JSONL aspect records and token embeddings.

pub mod conllu;
pub mod dataset;
pub mod embeddings;

pub use conllu::{parse_conllu, serialize_conllu, validate_tree, Skeleton};
pub use dataset::{
    assemble_sentences, attach_embeddings, dataset_dd_stats, dd_stats, load_dataset,
    load_sentences, parse_records, Dataset, DdStats, Example, Label, Record, Sentence, Span,
};
pub use embeddings::{
    load_embeddings, parse_otev1, parse_word_vectors, write_otev1, EmbeddingTable, OTEV1_MAGIC,
};
