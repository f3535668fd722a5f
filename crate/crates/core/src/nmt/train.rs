use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::NmtConfig;
use super::model::Seq2SeqModel;
use crate::data::{ParallelCorpus, Vocab, BOS, EOS};
use crate::error::{GraphError, TrainError};
use crate::graph::{Gradients, Graph, NodeId};
use crate::optim::Sgd;

/// One encoded sentence pair.
#[derive(Debug, Clone)]
pub struct EncodedPair {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

pub fn encode_corpus(corpus: &ParallelCorpus, src: &Vocab, tgt: &Vocab) -> Vec<EncodedPair> {
    corpus
        .pairs
        .iter()
        .map(|(s, t)| EncodedPair {
            src: src.encode(s),
            tgt: tgt.encode(t),
        })
        .collect()
}

/// Records the summed token loss of a batch on `g` and returns it with the
/// number of target tokens (including EOS). Parameters are read through `g`,
/// so any store with the model's layout can be used.
pub fn batch_loss<R: Rng + ?Sized>(
    model: &Seq2SeqModel,
    g: &mut Graph<'_>,
    batch: &[&EncodedPair],
    rng: &mut R,
) -> Result<(NodeId, usize), GraphError> {
    let src: Vec<Vec<usize>> = batch.iter().map(|p| p.src.clone()).collect();
    let enc = model.run_encoder(g, &src, rng)?;
    let top = enc.layers.last().expect("at least one layer").clone();
    let keys = super::model::attention_keys(g, model.attention(), &top)?;
    let mut state = model.decoder_init(g, &enc);
    let steps = batch.iter().map(|p| p.tgt.len() + 1).max().unwrap_or(1);
    let mut total: Option<NodeId> = None;
    let mut count = 0;
    for t in 0..steps {
        let prev: Vec<usize> = batch
            .iter()
            .map(|p| {
                if t == 0 {
                    BOS
                } else {
                    p.tgt.get(t - 1).copied().unwrap_or(EOS)
                }
            })
            .collect();
        let targets: Vec<Option<usize>> = batch
            .iter()
            .map(|p| match t.cmp(&p.tgt.len()) {
                std::cmp::Ordering::Less => Some(p.tgt[t]),
                std::cmp::Ordering::Equal => Some(EOS),
                std::cmp::Ordering::Greater => None,
            })
            .collect();
        count += targets.iter().filter(|t| t.is_some()).count();
        let logits = model.decoder_step(g, &prev, &mut state, &keys, &top, enc.score_mask, rng)?;
        let ce = g.cross_entropy(logits, &targets)?;
        total = Some(match total {
            None => ce,
            Some(acc) => g.add(acc, ce)?,
        });
    }
    Ok((total.expect("at least one step"), count))
}

/// Mean per-token loss over a corpus in evaluation mode.
pub fn corpus_loss(
    model: &Seq2SeqModel,
    data: &[EncodedPair],
    batch_size: usize,
) -> Result<f64, GraphError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut sum = 0.0;
    let mut n = 0;
    for chunk in data.chunks(batch_size.max(1)) {
        let refs: Vec<&EncodedPair> = chunk.iter().collect();
        let mut g = Graph::new(&model.params);
        let (loss, count) = batch_loss(model, &mut g, &refs, &mut rng)?;
        sum += g.value(loss)?.data()[0];
        n += count;
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Summed loss, target token count, and gradients of the loss summed over
/// tokens and averaged over the sentences of the batch.
pub fn batch_gradients<R: Rng + ?Sized>(
    model: &Seq2SeqModel,
    batch: &[&EncodedPair],
    train: bool,
    rng: &mut R,
) -> Result<(f64, usize, Gradients), GraphError> {
    let mut g = if train {
        Graph::training(&model.params)
    } else {
        Graph::new(&model.params)
    };
    let (sum, count) = batch_loss(model, &mut g, batch, rng)?;
    let mean = g.scale(sum, 1.0 / batch.len().max(1) as f64)?;
    let grads = g.backward(mean)?;
    Ok((g.value(sum)?.data()[0], count, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest dev loss.
    pub model: Seq2SeqModel,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch the returned model comes from.
    pub best_epoch: usize,
}

impl TrainOutcome {
    /// Training log as CSV: `epoch,train_loss,dev_loss,lr`.
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,dev_loss,lr\n");
        for r in &self.history {
            s.push_str(&format!(
                "{},{:.6},{:.6},{}\n",
                r.epoch, r.train_loss, r.dev_loss, r.lr
            ));
        }
        s
    }
}

/// 1-based index of the smallest loss; earliest wins ties.
pub fn select_best_epoch(dev_losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &l) in dev_losses.iter().enumerate() {
        if best.map_or(true, |(_, b)| l < b) {
            best = Some((i, l));
        }
    }
    best.map(|(i, _)| i + 1)
}

/// Builds source/target vocabularies from `train` and trains a new model.
pub fn train_nmt(
    train: &ParallelCorpus,
    dev: &ParallelCorpus,
    config: &NmtConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let train = filter_len(train, config.max_len);
    if train.is_empty() {
        return Err(TrainError::Empty("training corpus"));
    }
    if dev.is_empty() {
        return Err(TrainError::Empty("dev corpus"));
    }
    let src_vocab = Vocab::build(train.sources(), config.src_vocab_size, 1)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let tgt_vocab = Vocab::build(train.targets(), config.tgt_vocab_size, 1)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = Seq2SeqModel::new(config.clone(), src_vocab, tgt_vocab, &mut rng)?;
    train_model(model, &train, dev, &mut rng)
}

fn filter_len(c: &ParallelCorpus, max_len: usize) -> ParallelCorpus {
    ParallelCorpus {
        pairs: c
            .pairs
            .iter()
            .filter(|(s, t)| s.len() <= max_len && t.len() <= max_len)
            .cloned()
            .collect(),
        split: c.split,
    }
}

/// Learning rate across epochs: starts at `lr` and, once `decay_patience`
/// consecutive epochs fail to beat the best dev loss so far, is multiplied by
/// `lr_decay` after every epoch from then on.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    lr: f64,
    decay: f64,
    patience: usize,
    misses: usize,
    decaying: bool,
    best: f64,
}

impl LrSchedule {
    pub fn new(cfg: &NmtConfig) -> Self {
        LrSchedule {
            lr: cfg.lr,
            decay: cfg.lr_decay,
            patience: cfg.decay_patience.max(1),
            misses: 0,
            decaying: false,
            best: f64::INFINITY,
        }
    }

    /// Rate for the next epoch.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records an epoch's dev loss; `true` when it is a new best.
    pub fn observe(&mut self, dev_loss: f64) -> bool {
        let improved = dev_loss < self.best;
        if improved {
            self.best = dev_loss;
            self.misses = 0;
        } else {
            self.misses += 1;
            self.decaying |= self.misses >= self.patience;
        }
        if self.decaying {
            self.lr *= self.decay;
        }
        improved
    }
}

/// SGD training of an initialized model under [`LrSchedule`]; returns the
/// best-dev-loss snapshot.
pub fn train_model(
    mut model: Seq2SeqModel,
    train: &ParallelCorpus,
    dev: &ParallelCorpus,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome, TrainError> {
    let cfg = model.config.clone();
    let train_data = encode_corpus(train, &model.src_vocab, &model.tgt_vocab);
    let dev_data = encode_corpus(dev, &model.src_vocab, &model.tgt_vocab);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut schedule = LrSchedule::new(&cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, crate::graph::ParamStore)> = None;

    let diverged = |epoch: usize| {
        move |e: GraphError| match e {
            GraphError::NonFinite { .. } => TrainError::Diverged { epoch },
            other => TrainError::Graph(other),
        }
    };

    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let sgd = Sgd::new(schedule.lr())?;
        let mut sum = 0.0;
        let mut n = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&EncodedPair> = chunk.iter().map(|&i| &train_data[i]).collect();
            let (loss, count, grads) =
                batch_gradients(&model, &batch, true, rng).map_err(diverged(epoch))?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            sum += loss;
            n += count;
            model.params.zero_grad();
            model.params.accumulate(&grads);
            model.params.clip_grad_norm(cfg.max_grad_norm);
            sgd.step(&mut model.params);
        }
        let train_loss = sum / n.max(1) as f64;
        let dev_loss = corpus_loss(&model, &dev_data, cfg.batch_size).map_err(diverged(epoch))?;
        if !dev_loss.is_finite() || !train_loss.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            dev_loss,
            lr: schedule.lr(),
        });
        if schedule.observe(dev_loss) {
            best = Some((epoch, dev_loss, model.params.clone()));
        }
    }

    let best_epoch = match best {
        Some((epoch, _, params)) => {
            model.params = params;
            epoch
        }
        None => 0,
    };
    model.params.zero_grad();
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}
