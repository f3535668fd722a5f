use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::NmtConfig;
use crate::checkpoint::Checkpoint;
use crate::data::{Vocab, PAD};
use crate::error::{CheckpointError, GraphError, TrainError};
use crate::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Parameter ids of one LSTM cell: `gates = x W + h U + b`, gate blocks in
/// the order input, forget, output, candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmCell {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn add<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        init: f64,
        rng: &mut R,
    ) -> Result<Self, GraphError> {
        Ok(LstmCell {
            w: store.add_uniform(format!("{prefix}.w"), &[input, 4 * hidden], init, rng)?,
            u: store.add_uniform(format!("{prefix}.u"), &[hidden, 4 * hidden], init, rng)?,
            b: store.add_zeros(format!("{prefix}.b"), &[1, 4 * hidden])?,
            hidden,
        })
    }

    fn lookup(store: &ParamStore, prefix: &str) -> Result<Self, CheckpointError> {
        let id = |s: &str| {
            store
                .id(&format!("{prefix}.{s}"))
                .ok_or_else(|| CheckpointError::Corrupt(format!("missing {prefix}.{s}")))
        };
        let u = id("u")?;
        Ok(LstmCell {
            w: id("w")?,
            u,
            b: id("b")?,
            hidden: store.get(u).value.shape()[0],
        })
    }
}

/// One LSTM step on a batch: `x [B, in]`, `h, c [B, hidden]` to `(h', c')`.
///
/// `i, f, o = sigmoid(.)`, `g = tanh(.)`, `c' = f*c + i*g`, `h' = o*tanh(c')`.
pub fn lstm_step(
    g: &mut Graph<'_>,
    cell: &LstmCell,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId), GraphError> {
    let hd = cell.hidden;
    let w = g.param(cell.w)?;
    let u = g.param(cell.u)?;
    let b = g.param(cell.b)?;
    let xw = g.matmul(x, w)?;
    let hu = g.matmul(h_prev, u)?;
    let pre = g.add(xw, hu)?;
    let pre = g.add_row(pre, b)?;
    let i = g.slice_cols(pre, 0, hd)?;
    let i = g.sigmoid(i)?;
    let f = g.slice_cols(pre, hd, 2 * hd)?;
    let f = g.sigmoid(f)?;
    let o = g.slice_cols(pre, 2 * hd, 3 * hd)?;
    let o = g.sigmoid(o)?;
    let cand = g.slice_cols(pre, 3 * hd, 4 * hd)?;
    let cand = g.tanh(cand)?;
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c)?;
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Bahdanau-style additive attention parameters:
/// `score_j = v . tanh(s W + h_j U)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attention {
    pub w: ParamId,
    pub u: ParamId,
    pub v: ParamId,
}

/// Precomputed `h_j U` for every source position.
pub fn attention_keys(
    g: &mut Graph<'_>,
    att: &Attention,
    values: &[NodeId],
) -> Result<Vec<NodeId>, GraphError> {
    let u = g.param(att.u)?;
    values.iter().map(|&h| g.matmul(h, u)).collect()
}

/// Context vector and attention weights for decoder state `s [B, H]` over
/// encoder `values` (one `[B, D]` node per source position). `score_mask`,
/// when given, is an additive `[B, T]` mask with large negatives on padding.
pub fn attend(
    g: &mut Graph<'_>,
    att: &Attention,
    s: NodeId,
    keys: &[NodeId],
    values: &[NodeId],
    score_mask: Option<NodeId>,
) -> Result<(NodeId, NodeId), GraphError> {
    if values.is_empty() || keys.len() != values.len() {
        return Err(GraphError::Invalid(
            "attention over no source states".into(),
        ));
    }
    let w = g.param(att.w)?;
    let v = g.param(att.v)?;
    let q = g.matmul(s, w)?;
    let mut scores = Vec::with_capacity(keys.len());
    for &k in keys {
        let e = g.add(q, k)?;
        let e = g.tanh(e)?;
        scores.push(g.matmul(e, v)?);
    }
    let mut scores = g.concat(&scores)?;
    if let Some(m) = score_mask {
        scores = g.add(scores, m)?;
    }
    let alpha = g.softmax(scores)?;
    let mut ctx = None;
    for (j, &h) in values.iter().enumerate() {
        let a = g.slice_cols(alpha, j, j + 1)?;
        let term = g.mul_col(h, a)?;
        ctx = Some(match ctx {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok((ctx.expect("non-empty"), alpha))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ModelParams {
    pub src_emb: ParamId,
    pub tgt_emb: ParamId,
    /// `[layer][direction]`, layer index 0 is encoder layer 1.
    pub enc: Vec<Vec<LstmCell>>,
    pub dec: Vec<LstmCell>,
    pub att: Attention,
    pub comb_w: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

/// Architecture descriptor stored alongside checkpoint tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Descriptor {
    kind: String,
    config: NmtConfig,
    src_vocab: Vocab,
    tgt_vocab: Vocab,
}

const DESCRIPTOR_KIND: &str = "seq2seq-attention-lstm";

/// Attentional LSTM encoder-decoder.
#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    pub config: NmtConfig,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
    pub params: ParamStore,
    pub(crate) ids: ModelParams,
}

/// Decoder layer states plus the attentional vector fed into the next step.
pub(crate) struct DecoderState {
    pub h: Vec<NodeId>,
    pub c: Vec<NodeId>,
    pub feed: NodeId,
}

/// Encoder activations for a batch.
pub(crate) struct EncoderRun {
    /// `layers[k][t]` is `h^k_t` for the batch, `k = 0` the embeddings.
    pub layers: Vec<Vec<NodeId>>,
    pub final_h: Vec<NodeId>,
    pub final_c: Vec<NodeId>,
    /// Additive attention mask `[B, T]`, `None` when nothing is padded.
    pub score_mask: Option<NodeId>,
}

impl Seq2SeqModel {
    /// Freshly initialized (untrained) model.
    pub fn new<R: Rng + ?Sized>(
        config: NmtConfig,
        src_vocab: Vocab,
        tgt_vocab: Vocab,
        rng: &mut R,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let mut s = ParamStore::new();
        let r = config.init_range;
        let (e, h) = (config.embed_dim, config.hidden_dim);
        let src_emb = s.add_uniform("src_emb", &[src_vocab.len(), e], r, rng)?;
        let tgt_emb = s.add_uniform("tgt_emb", &[tgt_vocab.len(), e], r, rng)?;
        let mut enc = Vec::new();
        for l in 0..config.num_layers {
            let input = if l == 0 { e } else { h };
            let mut dirs = vec![LstmCell::add(
                &mut s,
                &format!("enc.l{}.fwd", l + 1),
                input,
                config.direction_dim(),
                r,
                rng,
            )?];
            if config.bidirectional {
                dirs.push(LstmCell::add(
                    &mut s,
                    &format!("enc.l{}.bwd", l + 1),
                    input,
                    config.direction_dim(),
                    r,
                    rng,
                )?);
            }
            enc.push(dirs);
        }
        let mut dec = Vec::new();
        for l in 0..config.num_layers {
            // The first layer also reads the previous attentional vector.
            let input = if l == 0 { e + h } else { h };
            dec.push(LstmCell::add(
                &mut s,
                &format!("dec.l{}", l + 1),
                input,
                h,
                r,
                rng,
            )?);
        }
        let att = Attention {
            w: s.add_uniform("att.w", &[h, h], r, rng)?,
            u: s.add_uniform("att.u", &[h, h], r, rng)?,
            v: s.add_uniform("att.v", &[h, 1], r, rng)?,
        };
        let comb_w = s.add_uniform("comb.w", &[2 * h, h], r, rng)?;
        let out_w = s.add_uniform("out.w", &[h, tgt_vocab.len()], r, rng)?;
        let out_b = s.add_zeros("out.b", &[1, tgt_vocab.len()])?;
        Ok(Seq2SeqModel {
            config,
            src_vocab,
            tgt_vocab,
            params: s,
            ids: ModelParams {
                src_emb,
                tgt_emb,
                enc,
                dec,
                att,
                comb_w,
                out_w,
                out_b,
            },
        })
    }

    pub fn num_layers(&self) -> usize {
        self.config.num_layers
    }

    /// Encoder cell for layer `k` (1-based) and direction (0 forward, 1 backward).
    pub fn encoder_cell(&self, k: usize, direction: usize) -> Option<&LstmCell> {
        self.ids.enc.get(k.checked_sub(1)?)?.get(direction)
    }

    pub fn decoder_cell(&self, k: usize) -> Option<&LstmCell> {
        self.ids.dec.get(k.checked_sub(1)?)
    }

    pub fn attention(&self) -> &Attention {
        &self.ids.att
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let desc = Descriptor {
            kind: DESCRIPTOR_KIND.into(),
            config: self.config.clone(),
            src_vocab: self.src_vocab.clone(),
            tgt_vocab: self.tgt_vocab.clone(),
        };
        Checkpoint::from_store(
            serde_json::to_string(&desc).expect("serializable"),
            &self.params,
        )
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, CheckpointError> {
        let desc: Descriptor = serde_json::from_str(&ck.descriptor)?;
        if desc.kind != DESCRIPTOR_KIND {
            return Err(CheckpointError::Corrupt(format!(
                "unexpected model kind `{}`",
                desc.kind
            )));
        }
        let store = ck.to_store()?;
        let id = |n: &str| {
            store
                .id(n)
                .ok_or_else(|| CheckpointError::Corrupt(format!("missing {n}")))
        };
        let c = &desc.config;
        let mut enc = Vec::new();
        for l in 1..=c.num_layers {
            let mut dirs = vec![LstmCell::lookup(&store, &format!("enc.l{l}.fwd"))?];
            if c.bidirectional {
                dirs.push(LstmCell::lookup(&store, &format!("enc.l{l}.bwd"))?);
            }
            enc.push(dirs);
        }
        let dec = (1..=c.num_layers)
            .map(|l| LstmCell::lookup(&store, &format!("dec.l{l}")))
            .collect::<Result<_, _>>()?;
        let ids = ModelParams {
            src_emb: id("src_emb")?,
            tgt_emb: id("tgt_emb")?,
            enc,
            dec,
            att: Attention {
                w: id("att.w")?,
                u: id("att.u")?,
                v: id("att.v")?,
            },
            comb_w: id("comb.w")?,
            out_w: id("out.w")?,
            out_b: id("out.b")?,
        };
        // Shapes must agree with a freshly built model of the same config.
        let reference = Seq2SeqModel::new(
            desc.config.clone(),
            desc.src_vocab.clone(),
            desc.tgt_vocab.clone(),
            &mut rand::rngs::mock::StepRng::new(0, 1),
        )
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        for ((_, a), (_, b)) in reference.params.iter().zip(store.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(CheckpointError::Corrupt(format!(
                    "parameter {} has shape {:?}, expected {} {:?}",
                    b.name,
                    b.value.shape(),
                    a.name,
                    a.value.shape()
                )));
            }
        }
        if reference.params.len() != store.len() {
            return Err(CheckpointError::Corrupt("parameter count mismatch".into()));
        }
        Ok(Seq2SeqModel {
            config: desc.config,
            src_vocab: desc.src_vocab,
            tgt_vocab: desc.tgt_vocab,
            params: store,
            ids,
        })
    }

    /// Runs the encoder over a batch of unpadded id sequences.
    pub(crate) fn run_encoder<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        src: &[Vec<usize>],
        rng: &mut R,
    ) -> Result<EncoderRun, GraphError> {
        let b = src.len();
        let t_max = src.iter().map(Vec::len).max().unwrap_or(0);
        if b == 0 || src.iter().any(Vec::is_empty) {
            return Err(GraphError::Invalid("empty source sentence".into()));
        }
        let padded = src.iter().any(|s| s.len() != t_max);
        let cfg = &self.config;
        let emb = g.param(self.ids.src_emb)?;
        let mut layer0 = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let ids: Vec<usize> = src
                .iter()
                .map(|s| s.get(t).copied().unwrap_or(PAD))
                .collect();
            layer0.push(g.embedding(emb, &ids)?);
        }

        // Per-step carry masks: 1 where the row has a real token at t.
        let dd = cfg.direction_dim();
        let masks = if padded {
            let mut m = Vec::with_capacity(t_max);
            for t in 0..t_max {
                let mut keep = Vec::with_capacity(b * dd);
                let mut carry = Vec::with_capacity(b * dd);
                for s in src {
                    let real = if t < s.len() { 1.0 } else { 0.0 };
                    keep.extend(std::iter::repeat(real).take(dd));
                    carry.extend(std::iter::repeat(1.0 - real).take(dd));
                }
                let keep = g.input(Tensor::new(vec![b, dd], keep)?);
                let carry = g.input(Tensor::new(vec![b, dd], carry)?);
                m.push((keep, carry));
            }
            Some(m)
        } else {
            None
        };

        let zero = g.input(Tensor::zeros(&[b, dd]));
        let mut layers = vec![layer0];
        let mut final_h = Vec::new();
        let mut final_c = Vec::new();
        for (l, dirs) in self.ids.enc.iter().enumerate() {
            let below = &layers[l];
            let inputs: Vec<NodeId> = if l == 0 {
                below.clone()
            } else {
                below
                    .iter()
                    .map(|&x| g.dropout(x, cfg.dropout, rng))
                    .collect::<Result<_, _>>()?
            };
            let mut outs_per_dir = Vec::new();
            let mut fh = Vec::new();
            let mut fc = Vec::new();
            for (d, cell) in dirs.iter().enumerate() {
                let order: Vec<usize> = if d == 0 {
                    (0..t_max).collect()
                } else {
                    (0..t_max).rev().collect()
                };
                let (mut h, mut c) = (zero, zero);
                let mut outs = vec![zero; t_max];
                for t in order {
                    let (nh, nc) = lstm_step(g, cell, inputs[t], h, c)?;
                    match &masks {
                        Some(m) => {
                            let (keep, carry) = m[t];
                            h = blend(g, nh, h, keep, carry)?;
                            c = blend(g, nc, c, keep, carry)?;
                        }
                        None => {
                            h = nh;
                            c = nc;
                        }
                    }
                    outs[t] = h;
                }
                outs_per_dir.push(outs);
                fh.push(h);
                fc.push(c);
            }
            let mut out = Vec::with_capacity(t_max);
            for t in 0..t_max {
                let mut o = if outs_per_dir.len() == 2 {
                    g.concat(&[outs_per_dir[0][t], outs_per_dir[1][t]])?
                } else {
                    outs_per_dir[0][t]
                };
                if cfg.residual && l >= 1 {
                    o = g.add(o, below[t])?;
                }
                out.push(o);
            }
            let (h, c) = if fh.len() == 2 {
                (g.concat(&fh)?, g.concat(&fc)?)
            } else {
                (fh[0], fc[0])
            };
            final_h.push(h);
            final_c.push(c);
            layers.push(out);
        }

        let score_mask = if padded {
            let mut data = Vec::with_capacity(b * t_max);
            for s in src {
                for t in 0..t_max {
                    data.push(if t < s.len() { 0.0 } else { -1e9 });
                }
            }
            Some(g.input(Tensor::new(vec![b, t_max], data)?))
        } else {
            None
        };
        Ok(EncoderRun {
            layers,
            final_h,
            final_c,
            score_mask,
        })
    }

    /// Decoder state before the first step: encoder final states and a zero
    /// attentional vector.
    pub(crate) fn decoder_init(&self, g: &mut Graph<'_>, enc: &EncoderRun) -> DecoderState {
        let b = g.value(enc.final_h[0]).map(|t| t.shape()[0]).unwrap_or(1);
        DecoderState {
            h: enc.final_h.clone(),
            c: enc.final_c.clone(),
            feed: g.input(Tensor::zeros(&[b, self.config.hidden_dim])),
        }
    }

    /// One decoder step from previous target ids; returns output logits.
    pub(crate) fn decoder_step<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        prev_ids: &[usize],
        state: &mut DecoderState,
        keys: &[NodeId],
        values: &[NodeId],
        score_mask: Option<NodeId>,
        rng: &mut R,
    ) -> Result<NodeId, GraphError> {
        let cfg = &self.config;
        let emb = g.param(self.ids.tgt_emb)?;
        let e = g.embedding(emb, prev_ids)?;
        let mut input = g.concat(&[e, state.feed])?;
        for (l, cell) in self.ids.dec.iter().enumerate() {
            let fed = if l == 0 {
                input
            } else {
                g.dropout(input, cfg.dropout, rng)?
            };
            let (h, c) = lstm_step(g, cell, fed, state.h[l], state.c[l])?;
            state.h[l] = h;
            state.c[l] = c;
            input = if cfg.residual && l >= 1 {
                g.add(h, input)?
            } else {
                h
            };
        }
        let (ctx, _) = attend(g, &self.ids.att, input, keys, values, score_mask)?;
        let cat = g.concat(&[input, ctx])?;
        let cw = g.param(self.ids.comb_w)?;
        let comb = g.matmul(cat, cw)?;
        let comb = g.tanh(comb)?;
        state.feed = comb;
        let comb = g.dropout(comb, cfg.dropout, rng)?;
        let ow = g.param(self.ids.out_w)?;
        let ob = g.param(self.ids.out_b)?;
        let logits = g.matmul(comb, ow)?;
        g.add_row(logits, ob)
    }
}

/// `keep * new + carry * old`, with `carry = 1 - keep` elementwise.
fn blend(
    g: &mut Graph<'_>,
    new: NodeId,
    old: NodeId,
    keep: NodeId,
    carry: NodeId,
) -> Result<NodeId, GraphError> {
    let a = g.mul(new, keep)?;
    let b = g.mul(old, carry)?;
    g.add(a, b)
}
