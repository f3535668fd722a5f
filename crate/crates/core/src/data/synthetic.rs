//! Reproducible toy languages for desk-scale experiments.
//!
//! Tokens `w00..` are drawn uniformly and each belongs to one of `C` classes
//! (`index mod C`). Two tag sets are defined over the same sentences:
//!
//! * POS-like tags `P<c>`: a function of the token alone.
//! * SEM-like fine tags `C<c><b>` where `b` depends on the class of the
//!   *previous* token (`b = 1` iff that class is odd; `b = 0` at sentence
//!   start). Fine tags group into coarse categories `C<c>`.
//!
//! The SEM tags cannot be recovered from the token alone; the best
//! context-free accuracy is available in closed form from
//! [`SyntheticLanguage::context_free_ceiling`].
//!
//! Target "languages" are transforms of the source sentence, see [`Transform`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{ParallelCorpus, Sentence, Split, TagKind, TaggedCorpus, TaggedSentence};
use super::schema::TagSchema;
use crate::error::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    Copy,
    Reverse,
    ContextTag,
}

impl FromStr for Generator {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "copy" => Ok(Generator::Copy),
            "reverse" => Ok(Generator::Reverse),
            "context-tag" => Ok(Generator::ContextTag),
            other => Err(DataError::UnknownGenerator(other.to_string())),
        }
    }
}

/// How a target sentence is derived from a source sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    /// Target equals source (autoencoder).
    Copy,
    /// Source tokens in reverse order.
    Reverse,
    /// Each token translated to `t<token>_<b>`, where `b` is the context bit
    /// from the previous token's class.
    Context,
    /// [`Transform::Context`] followed by reversal.
    ContextReverse,
}

impl Transform {
    pub fn all() -> [Transform; 4] {
        [
            Transform::Copy,
            Transform::Reverse,
            Transform::Context,
            Transform::ContextReverse,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Copy => "copy",
            Transform::Reverse => "reverse",
            Transform::Context => "context",
            Transform::ContextReverse => "context-reverse",
        }
    }

    pub fn is_autoencoder(self) -> bool {
        self == Transform::Copy
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transform {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Transform::all()
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| DataError::UnknownGenerator(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageParams {
    pub vocab_size: usize,
    pub num_classes: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for LanguageParams {
    fn default() -> Self {
        LanguageParams {
            vocab_size: 30,
            num_classes: 4,
            min_len: 5,
            max_len: 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticLanguage {
    params: LanguageParams,
    tokens: Vec<String>,
    /// `[num_classes + 1][num_classes]`; row `num_classes` is sentence start.
    table: Vec<Vec<usize>>,
}

impl SyntheticLanguage {
    pub fn new(params: LanguageParams) -> Result<Self, DataError> {
        let LanguageParams {
            vocab_size,
            num_classes,
            min_len,
            max_len,
        } = params;
        if num_classes < 2 || vocab_size < num_classes {
            return Err(DataError::InvalidSynthetic(format!(
                "need 2 <= classes <= vocab size, got {num_classes} classes and {vocab_size} tokens"
            )));
        }
        if min_len == 0 || min_len > max_len {
            return Err(DataError::InvalidSynthetic(format!(
                "bad length range {min_len}..={max_len}"
            )));
        }
        let width = (vocab_size - 1).to_string().len().max(2);
        let tokens = (0..vocab_size).map(|i| format!("w{i:0width$}")).collect();
        let table = (0..=num_classes)
            .map(|prev| {
                let bit = if prev < num_classes { prev % 2 } else { 0 };
                (0..num_classes).map(|c| c * 2 + bit).collect()
            })
            .collect();
        Ok(SyntheticLanguage {
            params,
            tokens,
            table,
        })
    }

    pub fn params(&self) -> &LanguageParams {
        &self.params
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn num_classes(&self) -> usize {
        self.params.num_classes
    }

    /// Fine tag index for (previous class or `None` at sentence start, class).
    pub fn context_tag_index(&self, prev: Option<usize>, class: usize) -> usize {
        let row = prev.unwrap_or(self.params.num_classes);
        self.table[row][class]
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        let idx: usize = token.strip_prefix('w')?.parse().ok()?;
        (idx < self.tokens.len() && self.tokens[idx] == token).then_some(idx)
    }

    pub fn class_of(&self, token: &str) -> Option<usize> {
        self.token_index(token).map(|i| i % self.params.num_classes)
    }

    pub fn sample_sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> Sentence {
        let len = rng.gen_range(self.params.min_len..=self.params.max_len);
        (0..len)
            .map(|_| self.tokens[rng.gen_range(0..self.tokens.len())].clone())
            .collect()
    }

    pub fn sample_sentences<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Sentence> {
        (0..n).map(|_| self.sample_sentence(rng)).collect()
    }

    fn classes(&self, s: &[String]) -> Vec<usize> {
        s.iter()
            .map(|t| self.class_of(t).expect("token from this language"))
            .collect()
    }

    pub fn pos_tag_names(&self) -> Vec<String> {
        (0..self.params.num_classes)
            .map(|c| format!("P{c}"))
            .collect()
    }

    pub fn fine_tag_names(&self) -> Vec<String> {
        (0..self.params.num_classes)
            .flat_map(|c| [format!("C{c}0"), format!("C{c}1")])
            .collect()
    }

    pub fn pos_schema(&self) -> TagSchema {
        TagSchema::flat(self.pos_tag_names()).expect("non-empty")
    }

    pub fn sem_schema(&self) -> TagSchema {
        TagSchema::from_pairs(
            self.fine_tag_names()
                .into_iter()
                .enumerate()
                .map(|(i, f)| (f, format!("C{}", i / 2))),
        )
        .expect("unique tags")
    }

    pub fn pos_tags(&self, s: &[String]) -> Vec<String> {
        self.classes(s)
            .into_iter()
            .map(|c| format!("P{c}"))
            .collect()
    }

    pub fn sem_tags(&self, s: &[String]) -> Vec<String> {
        let names = self.fine_tag_names();
        let cls = self.classes(s);
        (0..cls.len())
            .map(|j| {
                let prev = j.checked_sub(1).map(|p| cls[p]);
                names[self.context_tag_index(prev, cls[j])].clone()
            })
            .collect()
    }

    pub fn tags(&self, kind: TagKind, s: &[String]) -> Vec<String> {
        match kind {
            TagKind::Pos => self.pos_tags(s),
            TagKind::Sem => self.sem_tags(s),
        }
    }

    pub fn schema(&self, kind: TagKind) -> TagSchema {
        match kind {
            TagKind::Pos => self.pos_schema(),
            TagKind::Sem => self.sem_schema(),
        }
    }

    pub fn translate(&self, transform: Transform, s: &[String]) -> Sentence {
        let context = || -> Sentence {
            let cls = self.classes(s);
            s.iter()
                .enumerate()
                .map(|(j, t)| {
                    let bit = match j.checked_sub(1) {
                        Some(p) => cls[p] % 2,
                        None => 0,
                    };
                    format!("t{t}_{bit}")
                })
                .collect()
        };
        match transform {
            Transform::Copy => s.to_vec(),
            Transform::Reverse => s.iter().rev().cloned().collect(),
            Transform::Context => context(),
            Transform::ContextReverse => context().into_iter().rev().collect(),
        }
    }

    pub fn parallel(
        &self,
        sources: &[Sentence],
        transform: Transform,
        split: Split,
    ) -> ParallelCorpus {
        let pairs = sources
            .iter()
            .map(|s| (s.clone(), self.translate(transform, s)))
            .collect();
        ParallelCorpus::new(pairs, split).expect("sentences are non-empty")
    }

    pub fn tagged(&self, sources: &[Sentence], kind: TagKind) -> TaggedCorpus {
        let sentences = sources
            .iter()
            .map(|s| TaggedSentence {
                tokens: s.clone(),
                tags: self.tags(kind, s),
            })
            .collect();
        TaggedCorpus { sentences, kind }
    }

    /// Expected accuracy of the best tagger that sees only the current token,
    /// for the SEM-like tags (POS-like tags have ceiling 1).
    ///
    /// A corpus token is sentence-initial with probability `1 / E[len]`;
    /// otherwise its predecessor class follows the class sizes. The ceiling
    /// sums, per class, the largest probability mass any single tag gets.
    pub fn context_free_ceiling(&self) -> f64 {
        let c = self.params.num_classes;
        let v = self.params.vocab_size as f64;
        let class_size = |k: usize| ((self.params.vocab_size - k) as f64 / c as f64).ceil();
        let mean_len = (self.params.min_len + self.params.max_len) as f64 / 2.0;
        let p_first = 1.0 / mean_len;
        let n_tags = 2 * c;
        let mut ceiling = 0.0;
        for cls in 0..c {
            let mut mass = vec![0.0; n_tags];
            mass[self.context_tag_index(None, cls)] += p_first;
            for prev in 0..c {
                mass[self.context_tag_index(Some(prev), cls)] +=
                    (1.0 - p_first) * class_size(prev) / v;
            }
            let best = mass.iter().cloned().fold(0.0, f64::max);
            ceiling += class_size(cls) / v * best;
        }
        ceiling
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub sentences: usize,
    #[serde(flatten)]
    pub language: LanguageParams,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub parallel: ParallelCorpus,
    pub tagged: TaggedCorpus,
    pub schema: TagSchema,
    /// Best achievable accuracy of a tagger that sees only the current token.
    pub context_free_ceiling: f64,
}

/// Parallel and tagged corpora over the same sampled source sentences.
///
/// * `copy` / `reverse`: target is the source / reversed source; tags are POS-like.
/// * `context-tag`: target is the context-dependent translation in reverse
///   order; tags are the SEM-like context tags.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus, DataError> {
    if spec.sentences == 0 {
        return Err(DataError::InvalidSynthetic("zero sentences".into()));
    }
    let lang = SyntheticLanguage::new(spec.language.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sources = lang.sample_sentences(spec.sentences, &mut rng);
    let (transform, kind) = match spec.generator {
        Generator::Copy => (Transform::Copy, TagKind::Pos),
        Generator::Reverse => (Transform::Reverse, TagKind::Pos),
        Generator::ContextTag => (Transform::ContextReverse, TagKind::Sem),
    };
    let ceiling = match kind {
        TagKind::Pos => 1.0,
        TagKind::Sem => lang.context_free_ceiling(),
    };
    Ok(SyntheticCorpus {
        parallel: lang.parallel(&sources, transform, Split::Train),
        tagged: lang.tagged(&sources, kind),
        schema: lang.schema(kind),
        context_free_ceiling: ceiling,
    })
}
