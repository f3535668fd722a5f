//! Attentional LSTM encoder-decoder.
//!
//! The encoder is a stack of `L` LSTM layers (optionally bidirectional, with
//! each direction `hidden_dim / 2` wide and the two halves concatenated, and
//! optionally residual from layer 2 up). The decoder mirrors the depth, starts
//! from the encoder's final states, attends over the top encoder layer with
//! additive scoring, and combines state and context through
//! `tanh([s; ctx] Wc)` before the output projection. That combined vector is
//! also fed to the first decoder layer at the next step (input feeding).

mod config;
mod model;
mod train;

use rand::rngs::mock::StepRng;
use serde::{Deserialize, Serialize};

pub use config::NmtConfig;
pub use model::{attend, attention_keys, lstm_step, Attention, LstmCell, Seq2SeqModel};
pub use train::{
    batch_gradients, batch_loss, corpus_loss, encode_corpus, select_best_epoch, train_model, train_nmt,
    EncodedPair, EpochRecord, LrSchedule, TrainOutcome,
};

use crate::data::{BOS, EOS, PAD};
use crate::error::GraphError;
use crate::graph::{Graph, ParamStore};
use crate::tensor::{argmax, Tensor};

/// `states[k][j]` is the output of encoder layer `k` at source position `j`;
/// `k = 0` is the word embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStates {
    pub states: Vec<Vec<Vec<f64>>>,
}

impl LayerStates {
    pub fn num_layers(&self) -> usize {
        self.states.len() - 1
    }

    pub fn layer(&self, k: usize) -> &[Vec<f64>] {
        &self.states[k]
    }
}

/// Dropout never fires in evaluation graphs; any RNG will do.
fn eval_rng() -> StepRng {
    StepRng::new(0, 0)
}

/// Encoder states for every layer of one sentence, in evaluation mode.
pub fn encode(model: &Seq2SeqModel, src_ids: &[usize]) -> Result<LayerStates, GraphError> {
    if src_ids.is_empty() {
        return Err(GraphError::Invalid(
            "cannot encode an empty sentence".into(),
        ));
    }
    if let Some(&bad) = src_ids.iter().find(|&&i| i >= model.src_vocab.len()) {
        return Err(GraphError::Invalid(format!(
            "source id {bad} out of vocabulary"
        )));
    }
    let mut g = Graph::new(&model.params);
    let run = model.run_encoder(&mut g, &[src_ids.to_vec()], &mut eval_rng())?;
    let mut states = Vec::with_capacity(run.layers.len());
    for layer in &run.layers {
        let mut seq = Vec::with_capacity(layer.len());
        for &n in layer {
            seq.push(g.value(n)?.data().to_vec());
        }
        states.push(seq);
    }
    Ok(LayerStates { states })
}

/// [`encode`] on whitespace tokens; out-of-vocabulary tokens use the UNK row.
pub fn encode_tokens<S: AsRef<str>>(
    model: &Seq2SeqModel,
    tokens: &[S],
) -> Result<LayerStates, GraphError> {
    encode(model, &model.src_vocab.encode(tokens))
}

/// Standalone attention: returns `(context, weights)` for one decoder state
/// over a sequence of encoder states.
pub fn attention_context(
    params: &ParamStore,
    att: &Attention,
    decoder_state: &[f64],
    encoder_states: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<f64>), GraphError> {
    if encoder_states.is_empty() {
        return Err(GraphError::Invalid("no encoder states".into()));
    }
    let mut g = Graph::new(params);
    let s = g.input(Tensor::row(decoder_state));
    let values: Vec<_> = encoder_states
        .iter()
        .map(|h| g.input(Tensor::row(h)))
        .collect();
    let keys = attention_keys(&mut g, att, &values)?;
    let (ctx, alpha) = attend(&mut g, att, s, &keys, &values, None)?;
    Ok((
        g.value(ctx)?.data().to_vec(),
        g.value(alpha)?.data().to_vec(),
    ))
}

/// Greedy decoding until EOS or `max_len` tokens. EOS is not accepted as the
/// first token, so the output is never empty.
pub fn translate_greedy(
    model: &Seq2SeqModel,
    src_ids: &[usize],
    max_len: usize,
) -> Result<Vec<String>, GraphError> {
    let ids = translate_ids(model, src_ids, max_len)?;
    Ok(model.tgt_vocab.decode(&ids))
}

pub fn translate_ids(
    model: &Seq2SeqModel,
    src_ids: &[usize],
    max_len: usize,
) -> Result<Vec<usize>, GraphError> {
    if src_ids.is_empty() {
        return Err(GraphError::Invalid(
            "cannot translate an empty sentence".into(),
        ));
    }
    let mut rng = eval_rng();
    let mut g = Graph::new(&model.params);
    let run = model.run_encoder(&mut g, &[src_ids.to_vec()], &mut rng)?;
    let top = run.layers.last().expect("layers").clone();
    let keys = attention_keys(&mut g, model.attention(), &top)?;
    let mut state = model.decoder_init(&mut g, &run);
    let mut out = Vec::new();
    let mut prev = BOS;
    while out.len() < max_len.max(1) {
        let logits =
            model.decoder_step(&mut g, &[prev], &mut state, &keys, &top, None, &mut rng)?;
        let mut scores = g.value(logits)?.data().to_vec();
        scores[PAD] = f64::NEG_INFINITY;
        scores[BOS] = f64::NEG_INFINITY;
        if out.is_empty() {
            scores[EOS] = f64::NEG_INFINITY;
        }
        let next = argmax(&scores);
        if next == EOS {
            break;
        }
        out.push(next);
        prev = next;
    }
    Ok(out)
}
