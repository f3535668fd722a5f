//! Skip-gram with negative sampling, for the unsupervised-embedding baseline.

use std::fmt::Write as _;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::error::{DataError, TrainError};
use crate::tensor::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Starting learning rate, decayed linearly towards `lr * 1e-4`.
    pub lr: f64,
    pub min_count: usize,
    /// Vocabulary cap including reserved entries.
    pub max_vocab: usize,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 500,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            min_count: 1,
            max_vocab: 50_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub vocab: Vocab,
    pub dim: usize,
    /// `vocab.len() x dim`, row-major.
    pub matrix: Vec<f64>,
}

impl EmbeddingTable {
    pub fn row(&self, id: usize) -> &[f64] {
        &self.matrix[id * self.dim..(id + 1) * self.dim]
    }

    /// Out-of-vocabulary tokens get the UNK row.
    pub fn lookup(&self, token: &str) -> &[f64] {
        self.row(self.vocab.id(token))
    }

    /// `|V| d` header, then `token v1 .. vd` per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.vocab.len(), self.dim);
        for (i, tok) in self.vocab.tokens().iter().enumerate() {
            s.push_str(tok);
            for v in self.row(i) {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(DataError::Malformed { line: 1 })?;
        let mut h = header.split_whitespace().map(str::parse::<usize>);
        let (n, dim) = match (h.next(), h.next(), h.next()) {
            (Some(Ok(n)), Some(Ok(d)), None) if d > 0 => (n, d),
            _ => return Err(DataError::Malformed { line: 1 }),
        };
        let mut tokens = Vec::with_capacity(n);
        let mut matrix = Vec::with_capacity(n * dim);
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            let tok = parts
                .next()
                .filter(|t| !t.is_empty())
                .ok_or(DataError::Malformed { line: i + 2 })?;
            let vals: Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let vals = vals.map_err(|_| DataError::Malformed { line: i + 2 })?;
            if vals.len() != dim {
                return Err(DataError::Malformed { line: i + 2 });
            }
            tokens.push(tok.to_string());
            matrix.extend(vals);
        }
        if tokens.len() != n {
            return Err(DataError::Malformed { line: n + 2 });
        }
        let vocab = Vocab::from_tokens(tokens.iter().skip(crate::data::RESERVED.len()));
        if vocab.tokens() != tokens.as_slice() {
            return Err(DataError::Malformed { line: 2 });
        }
        Ok(EmbeddingTable { vocab, dim, matrix })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }
}

/// Noise distribution proportional to `count^0.75`.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    probs: Vec<f64>,
    dist: WeightedIndex<f64>,
}

impl NoiseSampler {
    pub fn new(counts: &[usize]) -> Result<Self, TrainError> {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(TrainError::Empty("noise distribution"));
        }
        let dist = WeightedIndex::new(&weights).map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(NoiseSampler {
            probs: weights.iter().map(|w| w / total).collect(),
            dist,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

#[derive(Debug, Clone)]
pub struct SkipGramOutcome {
    pub table: EmbeddingTable,
    /// Mean negative-sampling loss per (center, context) pair, per epoch.
    pub losses: Vec<f64>,
}

/// Trains input vectors with SGNS; the input vectors become the table.
pub fn train_skipgram<'a, I>(
    sentences: I,
    config: &SkipGramConfig,
) -> Result<SkipGramOutcome, TrainError>
where
    I: IntoIterator<Item = &'a [String]> + Clone,
{
    if config.dim == 0 {
        return Err(TrainError::Config("dim must be positive".into()));
    }
    if config.window == 0 {
        return Err(TrainError::Config("window must be positive".into()));
    }
    if !(config.lr > 0.0) {
        return Err(TrainError::LearningRate(config.lr));
    }
    let vocab = Vocab::build(sentences.clone(), config.max_vocab, config.min_count)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let data: Vec<Vec<usize>> = sentences
        .into_iter()
        .map(|s| vocab.encode(s))
        .filter(|s| !s.is_empty())
        .collect();
    let n_tokens: usize = data.iter().map(Vec::len).sum();
    if n_tokens == 0 {
        return Err(TrainError::Empty("skip-gram corpus"));
    }
    let mut counts = vec![0usize; vocab.len()];
    for &id in data.iter().flatten() {
        counts[id] += 1;
    }
    let sampler = NoiseSampler::new(&counts)?;

    let (v, d) = (vocab.len(), config.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let range = 0.5 / d as f64;
    let mut input: Vec<f64> = (0..v * d).map(|_| rng.gen_range(-range..range)).collect();
    let mut output = vec![0.0; v * d];
    let mut grad = vec![0.0; d];
    let total_steps = (config.epochs * n_tokens).max(1) as f64;
    let mut step = 0usize;
    let mut losses = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        let mut loss = 0.0;
        let mut pairs = 0usize;
        for sent in &data {
            for (pos, &center) in sent.iter().enumerate() {
                let lr = (config.lr * (1.0 - step as f64 / total_steps)).max(config.lr * 1e-4);
                step += 1;
                let b = rng.gen_range(1..=config.window);
                let lo = pos.saturating_sub(b);
                let hi = (pos + b).min(sent.len() - 1);
                for cpos in lo..=hi {
                    if cpos == pos {
                        continue;
                    }
                    let ctx = sent[cpos];
                    let ci = &input[center * d..(center + 1) * d];
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    pairs += 1;
                    for n in 0..=config.negatives {
                        let (target, label) = if n == 0 {
                            (ctx, 1.0)
                        } else {
                            let t = sampler.sample(&mut rng);
                            if t == ctx {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let out = &mut output[target * d..(target + 1) * d];
                        let dot: f64 = ci.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
                        let p = sigmoid(dot);
                        loss -= if label > 0.0 {
                            p.max(1e-12).ln()
                        } else {
                            (1.0 - p).max(1e-12).ln()
                        };
                        let g = lr * (label - p);
                        for k in 0..d {
                            grad[k] += g * out[k];
                            out[k] += g * ci[k];
                        }
                    }
                    for (w, g) in input[center * d..(center + 1) * d].iter_mut().zip(&grad) {
                        *w += g;
                    }
                }
            }
        }
        losses.push(loss / pairs.max(1) as f64);
    }
    Ok(SkipGramOutcome {
        table: EmbeddingTable {
            vocab,
            dim: d,
            matrix: input,
        },
        losses,
    })
}
