use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::DataError;

/// Fine tag inventory with a total fine-to-coarse mapping.
///
/// On disk: one `FINE<TAB>COARSE` pair per line, `#` starts a comment line.
/// Fine tags keep file order; coarse tags are ordered by first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSchema {
    fine: Vec<String>,
    coarse: Vec<String>,
    fine_to_coarse: Vec<usize>,
    fine_index: HashMap<String, usize>,
    coarse_index: HashMap<String, usize>,
}

impl TagSchema {
    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut s = TagSchema {
            fine: Vec::new(),
            coarse: Vec::new(),
            fine_to_coarse: Vec::new(),
            fine_index: HashMap::new(),
            coarse_index: HashMap::new(),
        };
        for (line, (f, c)) in pairs.into_iter().enumerate() {
            let (f, c) = (f.into(), c.into());
            if s.fine_index.contains_key(&f) {
                return Err(DataError::DuplicateTag {
                    line: line + 1,
                    tag: f,
                });
            }
            let ci = match s.coarse_index.get(&c) {
                Some(&i) => i,
                None => {
                    s.coarse_index.insert(c.clone(), s.coarse.len());
                    s.coarse.push(c);
                    s.coarse.len() - 1
                }
            };
            s.fine_index.insert(f.clone(), s.fine.len());
            s.fine.push(f);
            s.fine_to_coarse.push(ci);
        }
        if s.fine.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        Ok(s)
    }

    /// Every tag is its own coarse category.
    pub fn flat<I, S>(tags: I) -> Result<Self, DataError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from_pairs(tags.into_iter().map(|t| {
            let t = t.into();
            (t.clone(), t)
        }))
    }

    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut it = line.split('\t');
            match (it.next(), it.next(), it.next()) {
                (Some(f), Some(c), None) if !f.is_empty() && !c.is_empty() => {
                    pairs.push((i + 1, f.to_string(), c.to_string()))
                }
                _ => return Err(DataError::Malformed { line: i + 1 }),
            }
        }
        // Re-run duplicate detection with real line numbers.
        let mut seen = HashMap::new();
        for (line, f, _) in &pairs {
            if seen.insert(f.clone(), *line).is_some() {
                return Err(DataError::DuplicateTag {
                    line: *line,
                    tag: f.clone(),
                });
            }
        }
        Self::from_pairs(pairs.into_iter().map(|(_, f, c)| (f, c)))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (f, &c) in self.fine.iter().zip(&self.fine_to_coarse) {
            out.push_str(f);
            out.push('\t');
            out.push_str(&self.coarse[c]);
            out.push('\n');
        }
        out
    }

    pub fn fine_tags(&self) -> &[String] {
        &self.fine
    }

    pub fn coarse_tags(&self) -> &[String] {
        &self.coarse
    }

    pub fn num_fine(&self) -> usize {
        self.fine.len()
    }

    pub fn num_coarse(&self) -> usize {
        self.coarse.len()
    }

    pub fn fine_id(&self, tag: &str) -> Option<usize> {
        self.fine_index.get(tag).copied()
    }

    pub fn coarse_id(&self, tag: &str) -> Option<usize> {
        self.coarse_index.get(tag).copied()
    }

    pub fn contains(&self, fine: &str) -> bool {
        self.fine_index.contains_key(fine)
    }

    pub fn coarse_of(&self, fine: &str) -> Option<&str> {
        self.fine_id(fine)
            .map(|i| self.coarse[self.fine_to_coarse[i]].as_str())
    }

    pub fn coarse_index_of_fine(&self, fine_id: usize) -> usize {
        self.fine_to_coarse[fine_id]
    }

    /// Fine tags belonging to `coarse`, in schema order.
    pub fn members(&self, coarse: &str) -> Vec<&str> {
        match self.coarse_id(coarse) {
            Some(ci) => self
                .fine
                .iter()
                .zip(&self.fine_to_coarse)
                .filter(|(_, &c)| c == ci)
                .map(|(f, _)| f.as_str())
                .collect(),
            None => Vec::new(),
        }
    }

    /// The schema whose fine tags are this schema's coarse tags.
    pub fn coarse_schema(&self) -> TagSchema {
        Self::flat(self.coarse.iter().cloned()).expect("non-empty")
    }
}
