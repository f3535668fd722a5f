use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::schema::TagSchema;
use crate::error::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TagKind {
    Pos,
    Sem,
}

impl fmt::Display for TagKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TagKind::Pos => "pos",
            TagKind::Sem => "sem",
        })
    }
}

impl FromStr for TagKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pos" => Ok(TagKind::Pos),
            "sem" => Ok(TagKind::Sem),
            other => Err(format!("unknown task `{other}` (expected pos or sem)")),
        }
    }
}

pub type Sentence = Vec<String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Sentence, Sentence)>,
    pub split: Split,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<(Sentence, Sentence)>, split: Split) -> Result<Self, DataError> {
        if let Some(i) = pairs.iter().position(|(s, t)| s.is_empty() || t.is_empty()) {
            return Err(DataError::EmptySentence(i));
        }
        Ok(ParallelCorpus { pairs, split })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(|(s, _)| s.as_slice())
    }

    pub fn targets(&self) -> impl Iterator<Item = &[String]> {
        self.pairs.iter().map(|(_, t)| t.as_slice())
    }

    /// First `n` pairs.
    pub fn truncated(&self, n: usize) -> ParallelCorpus {
        ParallelCorpus {
            pairs: self.pairs.iter().take(n).cloned().collect(),
            split: self.split,
        }
    }
}

/// Pairs dropped while loading a parallel corpus.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub dropped_too_long: usize,
    pub dropped_empty: usize,
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn tokenize(line: &str) -> Sentence {
    line.split_whitespace().map(String::from).collect()
}

/// Reads two line-aligned, whitespace-tokenized files. Pairs with either side
/// longer than `max_len` tokens, or empty, are dropped and counted.
pub fn load_parallel(
    src: &Path,
    tgt: &Path,
    max_len: usize,
    split: Split,
) -> Result<(ParallelCorpus, LoadReport), DataError> {
    let (s, t) = (read(src)?, read(tgt)?);
    if s.trim().is_empty() {
        return Err(DataError::EmptyFile(src.to_path_buf()));
    }
    if t.trim().is_empty() {
        return Err(DataError::EmptyFile(tgt.to_path_buf()));
    }
    let (sl, tl): (Vec<&str>, Vec<&str>) = (s.lines().collect(), t.lines().collect());
    if sl.len() != tl.len() {
        return Err(DataError::LineCountMismatch {
            source_lines: sl.len(),
            target_lines: tl.len(),
        });
    }
    let mut report = LoadReport::default();
    let mut pairs = Vec::with_capacity(sl.len());
    for (a, b) in sl.into_iter().zip(tl) {
        let (a, b) = (tokenize(a), tokenize(b));
        if a.is_empty() || b.is_empty() {
            report.dropped_empty += 1;
        } else if a.len() > max_len || b.len() > max_len {
            report.dropped_too_long += 1;
        } else {
            pairs.push((a, b));
        }
    }
    Ok((ParallelCorpus::new(pairs, split)?, report))
}

pub fn write_parallel(corpus: &ParallelCorpus, src: &Path, tgt: &Path) -> std::io::Result<()> {
    let join = |it: &mut dyn Iterator<Item = &[String]>| {
        it.map(|s| s.join(" ") + "\n").collect::<String>()
    };
    fs::write(src, join(&mut corpus.sources()))?;
    fs::write(tgt, join(&mut corpus.targets()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Sentence,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedCorpus {
    pub sentences: Vec<TaggedSentence>,
    pub kind: TagKind,
}

impl TaggedCorpus {
    /// Checks equal token/tag counts, non-empty sentences and tag membership.
    pub fn new(
        sentences: Vec<TaggedSentence>,
        kind: TagKind,
        schema: &TagSchema,
    ) -> Result<Self, DataError> {
        for (i, s) in sentences.iter().enumerate() {
            if s.tokens.is_empty() {
                return Err(DataError::EmptySentence(i));
            }
            if s.tokens.len() != s.tags.len() {
                return Err(DataError::TagCount {
                    index: i,
                    tokens: s.tokens.len(),
                    tags: s.tags.len(),
                });
            }
            if let Some(t) = s.tags.iter().find(|t| !schema.contains(t)) {
                return Err(DataError::UnknownTag {
                    line: 0,
                    tag: t.clone(),
                });
            }
        }
        Ok(TaggedCorpus { sentences, kind })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(|s| s.tokens.len()).sum()
    }

    pub fn sentence_lengths(&self) -> Vec<usize> {
        self.sentences.iter().map(|s| s.tokens.len()).collect()
    }

    /// Flattened (token, tag) pairs in corpus order.
    pub fn tokens_and_tags(&self) -> impl Iterator<Item = (&str, &str)> {
        self.sentences.iter().flat_map(|s| {
            s.tokens
                .iter()
                .zip(&s.tags)
                .map(|(a, b)| (a.as_str(), b.as_str()))
        })
    }

    pub fn gold_tags(&self) -> Vec<String> {
        self.tokens_and_tags().map(|(_, t)| t.to_string()).collect()
    }

    /// Same sentences with every tag replaced by its coarse category.
    pub fn to_coarse(&self, schema: &TagSchema) -> Result<TaggedCorpus, DataError> {
        let mut sentences = Vec::with_capacity(self.sentences.len());
        for s in &self.sentences {
            let mut tags = Vec::with_capacity(s.tags.len());
            for t in &s.tags {
                let c = schema.coarse_of(t).ok_or_else(|| DataError::UnknownTag {
                    line: 0,
                    tag: t.clone(),
                })?;
                tags.push(c.to_string());
            }
            sentences.push(TaggedSentence {
                tokens: s.tokens.clone(),
                tags,
            });
        }
        Ok(TaggedCorpus {
            sentences,
            kind: self.kind,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.sentences.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            for (tok, tag) in s.tokens.iter().zip(&s.tags) {
                out.push_str(tok);
                out.push('\t');
                out.push_str(tag);
                out.push('\n');
            }
        }
        out
    }
}

/// Parses `token<TAB>tag` lines with blank lines between sentences. Runs of
/// blank lines (including trailing ones) never produce empty sentences.
pub fn parse_tagged(
    text: &str,
    schema: &TagSchema,
    kind: TagKind,
) -> Result<TaggedCorpus, DataError> {
    let mut sentences = Vec::new();
    let mut cur = TaggedSentence {
        tokens: Vec::new(),
        tags: Vec::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !cur.tokens.is_empty() {
                sentences.push(std::mem::replace(
                    &mut cur,
                    TaggedSentence {
                        tokens: Vec::new(),
                        tags: Vec::new(),
                    },
                ));
            }
            continue;
        }
        let (tok, tag) = match line.split_once('\t') {
            Some((a, b)) if !a.is_empty() && !b.is_empty() && !b.contains('\t') => (a, b),
            _ => return Err(DataError::Malformed { line: i + 1 }),
        };
        if !schema.contains(tag) {
            return Err(DataError::UnknownTag {
                line: i + 1,
                tag: tag.to_string(),
            });
        }
        cur.tokens.push(tok.to_string());
        cur.tags.push(tag.to_string());
    }
    if !cur.tokens.is_empty() {
        sentences.push(cur);
    }
    if sentences.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    Ok(TaggedCorpus { sentences, kind })
}

pub fn load_tagged(
    path: &Path,
    schema: &TagSchema,
    kind: TagKind,
) -> Result<TaggedCorpus, DataError> {
    parse_tagged(&read(path)?, schema, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn sem_schema() -> TagSchema {
        TagSchema::parse("PRX\tDXS\nDST\tDXS\nNIL\tLOG\n").unwrap()
    }

    fn files(src: &str, tgt: &str) -> (tempfile::NamedTempFile, tempfile::NamedTempFile) {
        let mut a = tempfile::NamedTempFile::new().unwrap();
        let mut b = tempfile::NamedTempFile::new().unwrap();
        a.write_all(src.as_bytes()).unwrap();
        b.write_all(tgt.as_bytes()).unwrap();
        (a, b)
    }

    #[test]
    fn aligned_files_load() {
        let (a, b) = files("a b\nc d e\n", "x\ny z\n");
        let (c, r) = load_parallel(a.path(), b.path(), 50, Split::Train).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(r, LoadReport::default());
        assert_eq!(c.pairs[1].0, vec!["c", "d", "e"]);
    }

    #[test]
    fn overlong_pairs_are_dropped_and_counted() {
        let (a, b) = files("1 2 3 4 5 6\n1 2\n", "x\ny\n");
        let (c, r) = load_parallel(a.path(), b.path(), 5, Split::Train).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(r.dropped_too_long, 1);
    }

    #[test]
    fn mismatched_line_counts_are_fatal() {
        let (a, b) = files("a\nb\nc\n", "x\ny\n");
        assert!(matches!(
            load_parallel(a.path(), b.path(), 50, Split::Train),
            Err(DataError::LineCountMismatch {
                source_lines: 3,
                target_lines: 2
            })
        ));
    }

    #[test]
    fn empty_file_is_fatal() {
        let (a, b) = files("", "");
        assert!(matches!(
            load_parallel(a.path(), b.path(), 50, Split::Train),
            Err(DataError::EmptyFile(_))
        ));
    }

    #[test]
    fn demonstratives_are_accepted() {
        let c = parse_tagged("this\tPRX\nthat\tDST\n", &sem_schema(), TagKind::Sem).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.sentences[0].tags, vec!["PRX", "DST"]);
    }

    #[test]
    fn unknown_tag_names_tag_and_line() {
        let err = parse_tagged("this\tPRX\n\nfoo\tBAR\n", &sem_schema(), TagKind::Sem).unwrap_err();
        match err {
            DataError::UnknownTag { line, tag } => {
                assert_eq!(line, 3);
                assert_eq!(tag, "BAR");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn trailing_blank_lines_add_no_sentence() {
        let c = parse_tagged(
            "this\tPRX\n.\tNIL\n\n\n\nthat\tDST\n\n\n",
            &sem_schema(),
            TagKind::Sem,
        )
        .unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.token_count(), 3);
    }

    #[test]
    fn tsv_round_trip() {
        let schema = sem_schema();
        let c = parse_tagged("this\tPRX\n.\tNIL\n\nthat\tDST\n", &schema, TagKind::Sem).unwrap();
        assert_eq!(parse_tagged(&c.to_tsv(), &schema, TagKind::Sem).unwrap(), c);
    }

    #[test]
    fn coarse_conversion_maps_every_tag() {
        let schema = sem_schema();
        let c = parse_tagged("this\tPRX\nthat\tDST\n.\tNIL\n", &schema, TagKind::Sem).unwrap();
        let coarse = c.to_coarse(&schema).unwrap();
        assert_eq!(coarse.sentences[0].tags, vec!["DXS", "DXS", "LOG"]);
    }
}
