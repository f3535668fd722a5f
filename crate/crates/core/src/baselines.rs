//! Most-frequent-tag baseline and the Word2Tag encoder-decoder upper bound.

use std::collections::{BTreeMap, HashMap};

use crate::data::{ParallelCorpus, Split, TaggedCorpus};
use crate::error::{DataError, EvalError, GraphError, TrainError};
use crate::eval::TaggingResult;
use crate::nmt::{train_nmt, translate_greedy, NmtConfig, Seq2SeqModel, TrainOutcome};

/// Per-token most frequent training tag, with the global majority tag for
/// unseen tokens. Ties go to the lexicographically smallest tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MftModel {
    pub by_token: BTreeMap<String, String>,
    pub global: String,
}

fn argmax_tag(counts: &HashMap<&str, usize>) -> String {
    let mut best: Option<(&str, usize)> = None;
    for (&tag, &c) in counts {
        best = match best {
            Some((bt, bc)) if bc > c || (bc == c && bt < tag) => Some((bt, bc)),
            _ => Some((tag, c)),
        };
    }
    best.expect("non-empty counts").0.to_string()
}

pub fn fit_mft(train: &TaggedCorpus) -> Result<MftModel, DataError> {
    if train.token_count() == 0 {
        return Err(DataError::EmptyCorpus);
    }
    let mut per: HashMap<&str, HashMap<&str, usize>> = HashMap::new();
    let mut global: HashMap<&str, usize> = HashMap::new();
    for (tok, tag) in train.tokens_and_tags() {
        *per.entry(tok).or_default().entry(tag).or_default() += 1;
        *global.entry(tag).or_default() += 1;
    }
    Ok(MftModel {
        by_token: per
            .iter()
            .map(|(tok, c)| (tok.to_string(), argmax_tag(c)))
            .collect(),
        global: argmax_tag(&global),
    })
}

impl MftModel {
    pub fn predict<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        tokens
            .iter()
            .map(|t| {
                self.by_token
                    .get(t.as_ref())
                    .unwrap_or(&self.global)
                    .clone()
            })
            .collect()
    }

    pub fn predict_corpus(&self, corpus: &TaggedCorpus) -> Vec<String> {
        corpus
            .sentences
            .iter()
            .flat_map(|s| self.predict(&s.tokens))
            .collect()
    }

    pub fn evaluate(&self, corpus: &TaggedCorpus) -> Result<TaggingResult, EvalError> {
        TaggingResult::from_corpus(corpus, self.predict_corpus(corpus), "mft")
    }

    /// `token<TAB>tag` lines in token order; the global tag is stored under
    /// the empty token on the first line.
    pub fn to_tsv(&self) -> String {
        let mut s = format!("\t{}\n", self.global);
        for (tok, tag) in &self.by_token {
            s.push_str(&format!("{tok}\t{tag}\n"));
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate();
        let global = match lines.next() {
            Some((_, l)) if l.starts_with('\t') && l.len() > 1 => l[1..].to_string(),
            _ => return Err(DataError::Malformed { line: 1 }),
        };
        let mut by_token = BTreeMap::new();
        for (i, line) in lines {
            let (tok, tag) = line
                .split_once('\t')
                .filter(|(a, b)| !a.is_empty() && !b.is_empty())
                .ok_or(DataError::Malformed { line: i + 1 })?;
            by_token.insert(tok.to_string(), tag.to_string());
        }
        Ok(MftModel { by_token, global })
    }
}

/// Word sequence to tag sequence parallel corpus.
pub fn word2tag_corpus(corpus: &TaggedCorpus, split: Split) -> ParallelCorpus {
    ParallelCorpus {
        pairs: corpus
            .sentences
            .iter()
            .map(|s| (s.tokens.clone(), s.tags.clone()))
            .collect(),
        split,
    }
}

/// Trains a standard encoder-decoder whose target language is the tag sequence.
pub fn train_word2tag(
    train: &TaggedCorpus,
    dev: &TaggedCorpus,
    config: &NmtConfig,
) -> Result<TrainOutcome, TrainError> {
    train_nmt(
        &word2tag_corpus(train, Split::Train),
        &word2tag_corpus(dev, Split::Dev),
        config,
    )
}

/// Aligns a greedy output with the input position-wise: extra output tokens
/// are dropped and missing positions become `None` (scored as errors).
pub fn align_word2tag(output: &[String], len: usize) -> Vec<Option<String>> {
    (0..len).map(|i| output.get(i).cloned()).collect()
}

/// Placeholder prediction for positions the decoder never produced.
pub const MISSING_TAG: &str = "<missing>";

pub fn word2tag_predict(
    model: &Seq2SeqModel,
    tokens: &[String],
) -> Result<Vec<Option<String>>, GraphError> {
    let out = translate_greedy(
        model,
        &model.src_vocab.encode(tokens),
        model.config.max_len.max(tokens.len() * 2),
    )?;
    Ok(align_word2tag(&out, tokens.len()))
}

pub fn word2tag_evaluate(
    model: &Seq2SeqModel,
    corpus: &TaggedCorpus,
) -> Result<TaggingResult, TrainError> {
    let mut pred = Vec::with_capacity(corpus.token_count());
    for s in &corpus.sentences {
        pred.extend(
            word2tag_predict(model, &s.tokens)?
                .into_iter()
                .map(|p| p.unwrap_or_else(|| MISSING_TAG.to_string())),
        );
    }
    TaggingResult::from_corpus(corpus, pred, "word2tag")
        .map_err(|e| TrainError::Config(e.to_string()))
}
