//! Treebank and task-data ingestion.

pub mod conllu;
pub mod sdoi;
pub mod tsv;
pub mod vocab;

pub use conllu::{parse_conllu, write_minimal_conllu, ParsedSentence};
pub use sdoi::{align_sdoi_to_tokens, build_sdoi, build_sdoi_with, SdoiMatrix, SdoiRule};
pub use tsv::{
    load_labeled_tsv, load_labeled_tsv_with_labels, write_labeled_tsv, Label, LabeledData, LabeledExample, TaskKind,
};
pub use vocab::{split_words, tokenize, Vocabulary, CLS, PAD, UNK};
