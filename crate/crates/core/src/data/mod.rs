//! Corpora, vocabularies, tag schemas and synthetic generators.

mod corpus;
mod schema;
pub mod synthetic;
mod vocab;

pub use corpus::{
    load_parallel, load_tagged, parse_tagged, tokenize, write_parallel, LoadReport, ParallelCorpus,
    Sentence, Split, TagKind, TaggedCorpus, TaggedSentence,
};
pub use schema::TagSchema;
pub use synthetic::{
    make_synthetic, Generator, LanguageParams, SyntheticCorpus, SyntheticLanguage, SyntheticSpec,
    Transform,
};
pub use vocab::{Vocab, BOS, EOS, PAD, RESERVED, UNK};
