use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} does not match data length {len}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero dimension")]
    ZeroDim(Vec<usize>),
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("expected rank {expected}, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Incompatible {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error(transparent)]
    Shape(#[from] TensorError),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("loss node must be scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("node {0} does not exist in this graph")]
    UnknownNode(usize),
    #[error("parameter {0} does not exist")]
    UnknownParam(usize),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("line count mismatch: source has {source_lines} lines, target has {target_lines}")]
    LineCountMismatch {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("{0}: file is empty")]
    EmptyFile(PathBuf),
    #[error("line {line}: unknown tag `{tag}`")]
    UnknownTag { line: usize, tag: String },
    #[error("line {line}: expected `token<TAB>tag`")]
    Malformed { line: usize },
    #[error("line {line}: duplicate fine tag `{tag}`")]
    DuplicateTag { line: usize, tag: String },
    #[error("empty sentence at index {0}")]
    EmptySentence(usize),
    #[error("sentence {index} has {tokens} tokens but {tags} tags")]
    TagCount {
        index: usize,
        tokens: usize,
        tags: usize,
    },
    #[error("vocabulary size {0} is smaller than the {1} reserved ids")]
    VocabTooSmall(usize, usize),
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("unknown synthetic generator `{0}`")]
    UnknownGenerator(String),
    #[error("invalid synthetic setting: {0}")]
    InvalidSynthetic(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("descriptor: {0}")]
    Descriptor(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("learning rate must be positive, got {0}")]
    LearningRate(f64),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("tag id {tag} outside inventory of {inventory} tags")]
    TagOutOfRange { tag: usize, inventory: usize },
    #[error("feature width mismatch: {0} vs {1}")]
    Width(usize, usize),
    #[error("layer {requested} out of range for a model with {layers} layers")]
    LayerOutOfRange { requested: usize, layers: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("results are not aligned: {0}")]
    Misaligned(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("tag `{0}` is not in the schema")]
    Unmapped(String),
    #[error("hypothesis count {0} differs from reference count {1}")]
    CountMismatch(usize, usize),
}
