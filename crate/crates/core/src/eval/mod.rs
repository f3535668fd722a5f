//! Tagging metrics, BLEU, significance testing and disagreement listings.

mod bleu;
mod significance;

use std::collections::HashSet;

pub use bleu::{bleu, BleuStats};
pub use significance::{approx_randomization, SignificanceReport};

use crate::data::{TagSchema, TaggedCorpus};
use crate::error::EvalError;

/// Gold and predicted tags for every token of a corpus, in corpus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggingResult {
    pub gold: Vec<String>,
    pub predicted: Vec<String>,
    /// Token counts per sentence; sums to `gold.len()`.
    pub sentence_lengths: Vec<usize>,
    pub system: String,
}

impl TaggingResult {
    pub fn new(
        gold: Vec<String>,
        predicted: Vec<String>,
        sentence_lengths: Vec<usize>,
        system: impl Into<String>,
    ) -> Result<Self, EvalError> {
        if gold.len() != predicted.len() {
            return Err(EvalError::Misaligned(format!(
                "{} gold tags vs {} predictions",
                gold.len(),
                predicted.len()
            )));
        }
        if sentence_lengths.iter().sum::<usize>() != gold.len() {
            return Err(EvalError::Misaligned(
                "sentence lengths do not cover the tokens".into(),
            ));
        }
        Ok(TaggingResult {
            gold,
            predicted,
            sentence_lengths,
            system: system.into(),
        })
    }

    /// Pairs `predicted` with the gold tags of `corpus`.
    pub fn from_corpus(
        corpus: &TaggedCorpus,
        predicted: Vec<String>,
        system: impl Into<String>,
    ) -> Result<Self, EvalError> {
        Self::new(
            corpus.gold_tags(),
            predicted,
            corpus.sentence_lengths(),
            system,
        )
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }

    pub fn correct(&self) -> usize {
        self.gold
            .iter()
            .zip(&self.predicted)
            .filter(|(g, p)| g == p)
            .count()
    }

    /// Per-sentence correct counts.
    pub fn correct_per_sentence(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.sentence_lengths.len());
        let mut i = 0;
        for &n in &self.sentence_lengths {
            out.push(
                (i..i + n)
                    .filter(|&j| self.gold[j] == self.predicted[j])
                    .count(),
            );
            i += n;
        }
        out
    }

    pub(crate) fn check_aligned(&self, other: &TaggingResult) -> Result<(), EvalError> {
        if self.gold != other.gold || self.sentence_lengths != other.sentence_lengths {
            return Err(EvalError::Misaligned(format!(
                "`{}` and `{}` are not over the same gold tokens",
                self.system, other.system
            )));
        }
        Ok(())
    }
}

pub fn accuracy(result: &TaggingResult) -> Result<f64, EvalError> {
    if result.is_empty() {
        return Err(EvalError::Empty("tagging result"));
    }
    Ok(result.correct() as f64 / result.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Zero denominators give zero for the affected quantity.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

fn counts(result: &TaggingResult, member: impl Fn(&str) -> bool) -> (usize, usize, usize) {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (g, p) in result.gold.iter().zip(&result.predicted) {
        let (gm, pm) = (member(g), member(p));
        if g == p {
            if gm {
                tp += 1;
            }
        } else {
            if pm {
                fp += 1;
            }
            if gm {
                fn_ += 1;
            }
        }
    }
    (tp, fp, fn_)
}

pub fn per_tag_f1(result: &TaggingResult, tag: &str) -> Prf {
    let (tp, fp, fn_) = counts(result, |t| t == tag);
    Prf::from_counts(tp, fp, fn_)
}

/// Maps gold and predicted fine tags to their coarse categories.
pub fn coarse_collapse(
    result: &TaggingResult,
    schema: &TagSchema,
) -> Result<TaggingResult, EvalError> {
    let map = |tags: &[String]| -> Result<Vec<String>, EvalError> {
        tags.iter()
            .map(|t| {
                schema
                    .coarse_of(t)
                    .map(str::to_string)
                    .ok_or_else(|| EvalError::Unmapped(t.clone()))
            })
            .collect()
    };
    Ok(TaggingResult {
        gold: map(&result.gold)?,
        predicted: map(&result.predicted)?,
        sentence_lengths: result.sentence_lengths.clone(),
        system: result.system.clone(),
    })
}

/// F1 over the fine tags of one coarse category, with TP/FP/FN pooled across
/// those fine tags. A token counts as TP when its (fine) prediction is exactly
/// right and the gold tag is a member; wrong predictions add FP to the
/// predicted member and FN to the gold member.
pub fn micro_f1_within_coarse(
    result: &TaggingResult,
    schema: &TagSchema,
    coarse: &str,
) -> Result<f64, EvalError> {
    if schema.coarse_id(coarse).is_none() {
        return Err(EvalError::Unmapped(coarse.to_string()));
    }
    let members: HashSet<&str> = schema.members(coarse).into_iter().collect();
    let (tp, fp, fn_) = counts(result, |t| members.contains(t));
    Ok(Prf::from_counts(tp, fp, fn_).f1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Disagreement {
    pub sentence_index: usize,
    pub position: usize,
    pub sentence: Vec<String>,
    pub gold: String,
    pub predicted_a: String,
    pub predicted_b: String,
}

impl Disagreement {
    pub fn token(&self) -> &str {
        &self.sentence[self.position]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DisagreementReport {
    /// B right, A wrong; test-set order.
    pub b_correct: Vec<Disagreement>,
    /// A right, B wrong; test-set order.
    pub a_correct: Vec<Disagreement>,
}

impl DisagreementReport {
    pub fn is_empty(&self) -> bool {
        self.b_correct.is_empty() && self.a_correct.is_empty()
    }

    /// TSV with header; `correct` names the system that got the token right.
    pub fn to_tsv(&self, name_a: &str, name_b: &str) -> String {
        let mut s =
            String::from("correct\tsentence\tposition\ttoken\tgold\tpred_a\tpred_b\tcontext\n");
        for (who, list) in [(name_b, &self.b_correct), (name_a, &self.a_correct)] {
            for d in list {
                s.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    who,
                    d.sentence_index,
                    d.position,
                    d.token(),
                    d.gold,
                    d.predicted_a,
                    d.predicted_b,
                    d.sentence.join(" ")
                ));
            }
        }
        s
    }
}

/// Tokens where exactly one of two aligned systems is right. With
/// `filter = Some((schema, coarse))` only tokens whose gold tag maps to
/// `coarse` are listed.
pub fn disagreement_report(
    a: &TaggingResult,
    b: &TaggingResult,
    corpus: &TaggedCorpus,
    filter: Option<(&TagSchema, &str)>,
) -> Result<DisagreementReport, EvalError> {
    a.check_aligned(b)?;
    if corpus.gold_tags() != a.gold {
        return Err(EvalError::Misaligned(
            "corpus does not match results".into(),
        ));
    }
    let mut report = DisagreementReport::default();
    let mut i = 0;
    for (si, s) in corpus.sentences.iter().enumerate() {
        for pos in 0..s.tokens.len() {
            let gold = &a.gold[i];
            let keep = match filter {
                Some((schema, coarse)) => schema.coarse_of(gold) == Some(coarse),
                None => true,
            };
            let (ra, rb) = (&a.predicted[i] == gold, &b.predicted[i] == gold);
            if keep && ra != rb {
                let d = Disagreement {
                    sentence_index: si,
                    position: pos,
                    sentence: s.tokens.clone(),
                    gold: gold.clone(),
                    predicted_a: a.predicted[i].clone(),
                    predicted_b: b.predicted[i].clone(),
                };
                if rb {
                    report.b_correct.push(d);
                } else {
                    report.a_correct.push(d);
                }
            }
            i += 1;
        }
    }
    Ok(report)
}
