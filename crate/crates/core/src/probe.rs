//! Per-token feature extraction and the feed-forward probing classifier.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Split, TagSchema, TaggedCorpus};
use crate::error::{CheckpointError, GraphError, TrainError};
use crate::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::nmt::{encode_tokens, Seq2SeqModel};
use crate::optim::Adam;
use crate::tensor::{argmax, Tensor};

/// One feature row per token, in corpus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDataset {
    pub dim: usize,
    /// Row-major, `len() * dim` values.
    pub features: Vec<f64>,
    pub tags: Vec<usize>,
    pub sentence_idx: Vec<usize>,
    pub token_idx: Vec<usize>,
    pub layer: usize,
    pub model_id: String,
    pub split: Split,
}

impl FeatureDataset {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// Builds a dataset from any per-sentence feature function
    /// (`f(tokens) -> one vector per token`).
    pub fn from_sentences<F>(
        corpus: &TaggedCorpus,
        schema: &TagSchema,
        layer: usize,
        model_id: &str,
        split: Split,
        mut f: F,
    ) -> Result<Self, TrainError>
    where
        F: FnMut(&[String]) -> Result<Vec<Vec<f64>>, TrainError>,
    {
        let mut ds = FeatureDataset {
            dim: 0,
            features: Vec::new(),
            tags: Vec::new(),
            sentence_idx: Vec::new(),
            token_idx: Vec::new(),
            layer,
            model_id: model_id.to_string(),
            split,
        };
        for (si, s) in corpus.sentences.iter().enumerate() {
            let rows = f(&s.tokens)?;
            if rows.len() != s.tokens.len() {
                return Err(TrainError::Config(format!(
                    "sentence {si}: {} feature rows for {} tokens",
                    rows.len(),
                    s.tokens.len()
                )));
            }
            for (ti, (row, tag)) in rows.into_iter().zip(&s.tags).enumerate() {
                if ds.dim == 0 {
                    ds.dim = row.len();
                } else if row.len() != ds.dim {
                    return Err(TrainError::Width(ds.dim, row.len()));
                }
                ds.features.extend(row);
                ds.tags.push(
                    schema.fine_id(tag).ok_or_else(|| {
                        TrainError::Config(format!("tag `{tag}` not in the schema"))
                    })?,
                );
                ds.sentence_idx.push(si);
                ds.token_idx.push(ti);
            }
        }
        Ok(ds)
    }
}

fn check_layer(model: &Seq2SeqModel, k: usize) -> Result<(), TrainError> {
    let layers = model.num_layers();
    if k > layers {
        return Err(TrainError::LayerOutOfRange {
            requested: k,
            layers,
        });
    }
    Ok(())
}

/// Features from encoder layer `k` (`0` = word embeddings) for every token.
pub fn extract_features(
    model: &Seq2SeqModel,
    corpus: &TaggedCorpus,
    schema: &TagSchema,
    k: usize,
    model_id: &str,
    split: Split,
) -> Result<FeatureDataset, TrainError> {
    check_layer(model, k)?;
    FeatureDataset::from_sentences(corpus, schema, k, model_id, split, |tokens| {
        Ok(encode_tokens(model, tokens)?.states.swap_remove(k))
    })
}

/// Features from every layer `0..=L`, encoding each sentence once.
pub fn extract_all_layers(
    model: &Seq2SeqModel,
    corpus: &TaggedCorpus,
    schema: &TagSchema,
    model_id: &str,
    split: Split,
) -> Result<Vec<FeatureDataset>, TrainError> {
    let encoded: Vec<Vec<Vec<Vec<f64>>>> = corpus
        .sentences
        .iter()
        .map(|s| encode_tokens(model, &s.tokens).map(|ls| ls.states))
        .collect::<Result<_, GraphError>>()?;
    (0..=model.num_layers())
        .map(|k| {
            let mut it = encoded.iter();
            FeatureDataset::from_sentences(corpus, schema, k, model_id, split, |_| {
                Ok(it.next().expect("one entry per sentence")[k].clone())
            })
        })
        .collect()
}

pub const FEATURE_MAGIC: &[u8; 8] = b"LPFEAT01";

#[derive(Serialize, Deserialize)]
struct FeatureHeader {
    dim: usize,
    rows: usize,
    layer: usize,
    model_id: String,
    split: Split,
}

/// Writes features as f32 after a JSON header:
/// magic, u32 header length, header, rows x (u32 tag, u32 sentence, u32 token),
/// rows x dim f32 values. All little-endian.
pub fn write_features(ds: &FeatureDataset, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = serde_json::to_string(&FeatureHeader {
        dim: ds.dim,
        rows: ds.len(),
        layer: ds.layer,
        model_id: ds.model_id.clone(),
        split: ds.split,
    })?;
    w.write_all(FEATURE_MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(header.as_bytes())?;
    for i in 0..ds.len() {
        for v in [ds.tags[i], ds.sentence_idx[i], ds.token_idx[i]] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
    }
    for &v in &ds.features {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureDataset, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let mut hbuf = vec![0u8; u32::from_le_bytes(b4) as usize];
    r.read_exact(&mut hbuf)?;
    let h: FeatureHeader = serde_json::from_slice(&hbuf)?;
    let mut next = |r: &mut BufReader<File>| -> Result<u32, CheckpointError> {
        r.read_exact(&mut b4)?;
        Ok(u32::from_le_bytes(b4))
    };
    let (mut tags, mut sentence_idx, mut token_idx) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..h.rows {
        tags.push(next(&mut r)? as usize);
        sentence_idx.push(next(&mut r)? as usize);
        token_idx.push(next(&mut r)? as usize);
    }
    let mut features = Vec::with_capacity(h.rows * h.dim);
    for _ in 0..h.rows * h.dim {
        features.push(f32::from_bits(next(&mut r)?) as f64);
    }
    Ok(FeatureDataset {
        dim: h.dim,
        features,
        tags,
        sentence_idx,
        token_idx,
        layer: h.layer,
        model_id: h.model_id,
        split: h.split,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub init_range: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            dropout: 0.5,
            init_range: 0.1,
            seed: 1,
        }
    }
}

/// `x -> ReLU(x W1 + b1) -> dropout -> W2 + b2`, hidden width = input width.
#[derive(Debug, Clone)]
pub struct ProbeClassifier {
    pub params: ParamStore,
    pub dim: usize,
    pub num_tags: usize,
    pub dropout: f64,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl ProbeClassifier {
    pub fn new<R: rand::Rng + ?Sized>(
        dim: usize,
        num_tags: usize,
        dropout: f64,
        init_range: f64,
        rng: &mut R,
    ) -> Result<Self, TrainError> {
        if dim == 0 || num_tags == 0 {
            return Err(TrainError::Config(
                "probe needs a positive width and tag count".into(),
            ));
        }
        let mut params = ParamStore::new();
        let w1 = params.add_uniform("probe.w1", &[dim, dim], init_range, rng)?;
        let b1 = params.add_zeros("probe.b1", &[1, dim])?;
        let w2 = params.add_uniform("probe.w2", &[dim, num_tags], init_range, rng)?;
        let b2 = params.add_zeros("probe.b2", &[1, num_tags])?;
        Ok(ProbeClassifier {
            params,
            dim,
            num_tags,
            dropout,
            w1,
            b1,
            w2,
            b2,
        })
    }

    /// Logits node for a block of rows.
    pub fn forward<R: rand::Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        x: NodeId,
        rng: &mut R,
    ) -> Result<NodeId, GraphError> {
        let (w1, b1, w2, b2) = (
            g.param(self.w1)?,
            g.param(self.b1)?,
            g.param(self.w2)?,
            g.param(self.b2)?,
        );
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h)?;
        let h = g.dropout(h, self.dropout, rng)?;
        let o = g.matmul(h, w2)?;
        g.add_row(o, b2)
    }

    /// Logits for `rows` (row-major, `dim` wide) in evaluation mode.
    pub fn logits(&self, rows: &[f64]) -> Result<Tensor, GraphError> {
        let n = rows.len() / self.dim;
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::new(vec![n, self.dim], rows.to_vec())?);
        let out = self.forward(&mut g, x, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        Ok(g.value(out)?.clone())
    }

    /// Argmax tag per row; the lowest tag id wins ties.
    pub fn predict_rows(&self, rows: &[f64]) -> Result<Vec<usize>, TrainError> {
        if rows.is_empty() {
            return Ok(Vec::new());
        }
        if rows.len() % self.dim != 0 {
            return Err(TrainError::Width(self.dim, rows.len()));
        }
        let l = self.logits(rows)?;
        Ok((0..l.rows()).map(|r| argmax(l.row_slice(r))).collect())
    }

    pub fn predict(&self, ds: &FeatureDataset) -> Result<Vec<usize>, TrainError> {
        if ds.dim != self.dim && !ds.is_empty() {
            return Err(TrainError::Width(self.dim, ds.dim));
        }
        let mut out = Vec::with_capacity(ds.len());
        for chunk in ds.features.chunks(self.dim * 512) {
            out.extend(self.predict_rows(chunk)?);
        }
        Ok(out)
    }

    /// Mean cross-entropy over a dataset in evaluation mode.
    pub fn loss(&self, ds: &FeatureDataset) -> Result<f64, TrainError> {
        let mut sum = 0.0;
        for start in (0..ds.len()).step_by(512) {
            let end = (start + 512).min(ds.len());
            let mut g = Graph::new(&self.params);
            let x = g.input(
                Tensor::new(
                    vec![end - start, self.dim],
                    ds.features[start * self.dim..end * self.dim].to_vec(),
                )
                .map_err(GraphError::from)?,
            );
            let out = self.forward(&mut g, x, &mut rand::rngs::mock::StepRng::new(0, 0))?;
            let t: Vec<Option<usize>> = ds.tags[start..end].iter().map(|&t| Some(t)).collect();
            let ce = g.cross_entropy(out, &t)?;
            sum += g.value(ce)?.data()[0];
        }
        Ok(sum / ds.len().max(1) as f64)
    }
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    /// Parameters from the epoch with the lowest dev loss.
    pub classifier: ProbeClassifier,
    /// `(train_loss, dev_loss)` per epoch.
    pub history: Vec<(f64, f64)>,
    /// 1-based.
    pub best_epoch: usize,
}

/// Adam training with mini-batches; keeps the best-dev-loss snapshot.
pub fn train_probe(
    train: &FeatureDataset,
    dev: &FeatureDataset,
    num_tags: usize,
    config: &ProbeConfig,
) -> Result<ProbeOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::Empty("probe training set"));
    }
    if dev.is_empty() {
        return Err(TrainError::Empty("probe dev set"));
    }
    if train.dim != dev.dim {
        return Err(TrainError::Width(train.dim, dev.dim));
    }
    if let Some(&tag) = train.tags.iter().chain(&dev.tags).find(|&&t| t >= num_tags) {
        return Err(TrainError::TagOutOfRange {
            tag,
            inventory: num_tags,
        });
    }
    if config.batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut clf = ProbeClassifier::new(
        train.dim,
        num_tags,
        config.dropout,
        config.init_range,
        &mut rng,
    )?;
    let mut adam = Adam::new(config.lr, 0.9, 0.999, 1e-8)?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let d = train.dim;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut x = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                x.extend_from_slice(train.row(i));
            }
            let targets: Vec<Option<usize>> = chunk.iter().map(|&i| Some(train.tags[i])).collect();
            let grads = {
                let mut g = Graph::training(&clf.params);
                let xi = g.input(Tensor::new(vec![chunk.len(), d], x).map_err(GraphError::from)?);
                let out = clf.forward(&mut g, xi, &mut rng)?;
                let ce = g.cross_entropy(out, &targets)?;
                sum += g.value(ce)?.data()[0];
                let mean = g.scale(ce, 1.0 / chunk.len() as f64)?;
                g.backward(mean)?
            };
            clf.params.zero_grad();
            clf.params.accumulate(&grads);
            adam.step(&mut clf.params);
        }
        let dev_loss = clf.loss(dev)?;
        history.push((sum / train.len() as f64, dev_loss));
        if best.as_ref().map_or(true, |(_, b, _)| dev_loss < *b) {
            best = Some((epoch, dev_loss, clf.params.clone()));
        }
    }
    let best_epoch = match best {
        Some((e, _, p)) => {
            clf.params = p;
            e
        }
        None => 0,
    };
    clf.params.zero_grad();
    Ok(ProbeOutcome {
        classifier: clf,
        history,
        best_epoch,
    })
}

/// CSV prediction dump: `sentence,token_index,token,gold,predicted`.
pub fn predictions_csv(corpus: &TaggedCorpus, predicted: &[String]) -> String {
    let mut s = String::from("sentence,token_index,token,gold,predicted\n");
    let mut i = 0;
    for (si, sent) in corpus.sentences.iter().enumerate() {
        for (ti, (tok, gold)) in sent.tokens.iter().zip(&sent.tags).enumerate() {
            let p = predicted.get(i).map(String::as_str).unwrap_or("");
            s.push_str(&format!("{si},{ti},{},{gold},{p}\n", csv_field(tok)));
            i += 1;
        }
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Reads a dump written by [`predictions_csv`] back into `(gold, predicted,
/// sentence_lengths)`.
pub fn parse_predictions_csv(
    text: &str,
) -> Result<(Vec<String>, Vec<String>, Vec<usize>), TrainError> {
    let mut gold = Vec::new();
    let mut pred = Vec::new();
    let mut lens: Vec<usize> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        // Token may be quoted; gold and predicted are the last two fields.
        let mut it = line.rsplitn(3, ',');
        let (p, g, rest) = match (it.next(), it.next(), it.next()) {
            (Some(p), Some(g), Some(rest)) => (p, g, rest),
            _ => {
                return Err(TrainError::Config(format!(
                    "line {}: malformed dump row",
                    n + 1
                )))
            }
        };
        let si: usize = rest
            .split(',')
            .next()
            .and_then(|x| x.parse().ok())
            .ok_or_else(|| TrainError::Config(format!("line {}: bad sentence index", n + 1)))?;
        while lens.len() <= si {
            lens.push(0);
        }
        lens[si] += 1;
        gold.push(g.to_string());
        pred.push(p.to_string());
    }
    Ok((gold, pred, lens))
}
