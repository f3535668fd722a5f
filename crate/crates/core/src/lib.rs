//! Layer-wise probing of NMT encoder representations.
//!
//! Trains attentional LSTM encoder-decoders on parallel text, extracts the
//! hidden state of every encoder layer for each word, and trains small
//! feed-forward classifiers on those features to measure how much tagging
//! information (part of speech, semantic tags) each layer carries. Baselines,
//! metrics and significance testing live alongside.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod nmt;
pub mod optim;
pub mod probe;
pub mod skipgram;
pub mod tensor;

pub use baselines::{fit_mft, train_word2tag, MftModel};
pub use checkpoint::Checkpoint;
pub use data::{ParallelCorpus, Split, TagKind, TagSchema, TaggedCorpus, Vocab};
pub use error::{CheckpointError, DataError, EvalError, GraphError, TensorError, TrainError};
pub use eval::{accuracy, approx_randomization, bleu, SignificanceReport, TaggingResult};
pub use graph::{grad_check, Gradients, Graph, NodeId, ParamId, ParamStore, Parameter};
pub use nmt::{LayerStates, NmtConfig, Seq2SeqModel};
pub use optim::{Adam, Sgd};
pub use probe::{extract_features, train_probe, FeatureDataset, ProbeClassifier, ProbeConfig};
pub use skipgram::{train_skipgram, EmbeddingTable, SkipGramConfig};
pub use tensor::Tensor;
