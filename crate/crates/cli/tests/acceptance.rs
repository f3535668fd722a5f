//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines come out in order. Numeric
//! arguments select criteria, e.g. `cargo test --test acceptance -- 3 6`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use layerprobe::data::{
    tokenize, LanguageParams, Split, SyntheticLanguage, TagKind, TagSchema, TaggedCorpus,
    TaggedSentence, Transform,
};
use layerprobe::eval::{accuracy, approx_randomization, bleu, coarse_collapse, TaggingResult};
use layerprobe::graph::{grad_check, ParamStore};
use layerprobe::nmt::{
    attend, attention_keys, batch_loss, encode, lstm_step, train_model, Attention, EncodedPair,
    LstmCell,
};
use layerprobe::probe::{extract_all_layers, train_probe, ProbeClassifier, ProbeConfig};
use layerprobe::{fit_mft, NmtConfig, Seq2SeqModel, Tensor, Vocab};
use layerprobe_cli::{execute, Cli};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(t: Instant, budget: Duration) -> Result<(), String> {
    ensure(
        t.elapsed() <= budget,
        format!("took {:.1?}, budget {budget:?}", t.elapsed()),
    )
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut check = |what: &'static str, seed: u64, err: f64| -> Result<(), String> {
        let w = worst.entry(what).or_default();
        *w = w.max(err);
        ensure(err < 1e-4, format!("{what} seed {seed}: relative error {err:e}"))
    };
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let mut store = ParamStore::new();
        let cell = LstmCell::add(&mut store, "c", 3, 4, 0.8, &mut rng).unwrap();
        store.get_mut(cell.b).value = Tensor::uniform(&[1, 16], 0.5, &mut rng);
        let x = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let h0 = Tensor::uniform(&[2, 4], 1.0, &mut rng);
        let c0 = Tensor::uniform(&[2, 4], 1.0, &mut rng);
        let err = grad_check(&store, 1e-5, |g| {
            let (x, h0, c0) = (g.input(x.clone()), g.input(h0.clone()), g.input(c0.clone()));
            let (h, c) = lstm_step(g, &cell, x, h0, c0)?;
            let hc = g.mul(h, c)?;
            g.cross_entropy(hc, &[Some(1), Some(3)])
        })
        .unwrap();
        check("lstm step", seed, err)?;

        let mut store = ParamStore::new();
        let att = Attention {
            w: store.add_uniform("w", &[3, 3], 1.0, &mut rng).unwrap(),
            u: store.add_uniform("u", &[3, 3], 1.0, &mut rng).unwrap(),
            v: store.add_uniform("v", &[3, 1], 1.0, &mut rng).unwrap(),
        };
        let s = Tensor::uniform(&[2, 3], 1.0, &mut rng);
        let hs: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(&[2, 3], 1.0, &mut rng)).collect();
        let err = grad_check(&store, 1e-5, |g| {
            let s = g.input(s.clone());
            let vals: Vec<_> = hs.iter().map(|h| g.input(h.clone())).collect();
            let keys = attention_keys(g, &att, &vals)?;
            let (ctx, _) = attend(g, &att, s, &keys, &vals, None)?;
            let t = g.tanh(ctx)?;
            g.cross_entropy(t, &[Some(0), Some(2)])
        })
        .unwrap();
        check("attention", seed, err)?;

        let probe = ProbeClassifier::new(5, 4, 0.0, 1.0, &mut rng).unwrap();
        let rows = Tensor::uniform(&[6, 5], 1.0, &mut rng);
        let gold: Vec<Option<usize>> = (0..6).map(|_| Some(rng.gen_range(0..4))).collect();
        let err = grad_check(&probe.params, 1e-5, |g| {
            let x = g.input(rows.clone());
            let out = probe.forward(g, x, &mut rand::rngs::mock::StepRng::new(0, 0))?;
            g.cross_entropy(out, &gold)
        })
        .unwrap();
        check("probe", seed, err)?;

        let cfg = NmtConfig {
            embed_dim: 4,
            hidden_dim: 4,
            num_layers: 2,
            dropout: 0.0,
            init_range: 1.0,
            ..NmtConfig::default()
        };
        let vocab = Vocab::from_tokens((0..3).map(|i| format!("x{i}")));
        let model = Seq2SeqModel::new(cfg, vocab.clone(), vocab, &mut rng).unwrap();
        let batch = [
            EncodedPair { src: vec![4, 5, 6], tgt: vec![5] },
            EncodedPair { src: vec![6, 4], tgt: vec![4] },
        ];
        let refs: Vec<&EncodedPair> = batch.iter().collect();
        let err = grad_check(&model.params, 1e-2, |g| {
            let mut r = ChaCha8Rng::seed_from_u64(0);
            Ok(batch_loss(&model, g, &refs, &mut r)?.0)
        })
        .unwrap();
        check("seq2seq one-step loss", seed, err)?;
    }
    within(t, Duration::from_secs(60))?;
    let per: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    Ok(format!("max relative error over 10 seeds: {}", per.join(", ")))
}

/// Counts every (token, tag) pair by scanning the corpus once per candidate.
fn mft_oracle(train: &TaggedCorpus, token: &str) -> String {
    let pairs: Vec<(&str, &str)> = train.tokens_and_tags().collect();
    let tags: BTreeSet<&str> = pairs.iter().map(|p| p.1).collect();
    let seen = pairs.iter().any(|p| p.0 == token);
    let mut best = ("", 0usize);
    for tag in tags {
        let n = pairs
            .iter()
            .filter(|(w, t)| *t == tag && (!seen || *w == token))
            .count();
        if n > best.1 {
            best = (tag, n);
        }
    }
    best.0.to_string()
}

fn random_tagged(rng: &mut ChaCha8Rng, schema: &TagSchema, words: usize) -> TaggedCorpus {
    let tags = schema.fine_tags();
    let n = rng.gen_range(1..=50);
    let sentences = (0..n)
        .map(|_| {
            let len = rng.gen_range(1..8);
            let tokens: Vec<String> =
                (0..len).map(|_| format!("w{}", rng.gen_range(0..words))).collect();
            // Skew tags so ties and clear winners both occur.
            let tags = (0..len)
                .map(|_| tags[rng.gen_range(0..tags.len()).min(rng.gen_range(0..tags.len()))].clone())
                .collect();
            TaggedSentence { tokens, tags }
        })
        .collect();
    TaggedCorpus::new(sentences, TagKind::Pos, schema).unwrap()
}

fn mft() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    for trial in 0..100 {
        let schema = TagSchema::flat((0..rng.gen_range(1..6)).map(|i| format!("T{i}"))).unwrap();
        let words = rng.gen_range(1..15);
        let train = random_tagged(&mut rng, &schema, words);
        let test = random_tagged(&mut rng, &schema, words + 5);
        let model = fit_mft(&train).unwrap();
        for s in &test.sentences {
            let got = model.predict(&s.tokens);
            for (tok, g) in s.tokens.iter().zip(got) {
                let want = mft_oracle(&train, tok);
                ensure(g == want, format!("corpus {trial}, token {tok}: {g} vs oracle {want}"))?;
                checked += 1;
            }
        }
    }
    within(t, Duration::from_secs(60))?;
    Ok(format!("100 corpora, {checked} predictions identical to the counting oracle"))
}

/// Two systems over the same gold tokens, from per-token correctness flags.
fn systems(a: &[Vec<bool>], b: &[Vec<bool>]) -> (TaggingResult, TaggingResult) {
    let lens: Vec<usize> = a.iter().map(Vec::len).collect();
    let gold: Vec<String> = lens.iter().flat_map(|&n| vec!["G".to_string(); n]).collect();
    let pred = |f: &[Vec<bool>]| {
        f.iter()
            .flatten()
            .map(|&ok| if ok { "G" } else { "X" }.to_string())
            .collect::<Vec<_>>()
    };
    (
        TaggingResult::new(gold.clone(), pred(a), lens.clone(), "a").unwrap(),
        TaggingResult::new(gold, pred(b), lens, "b").unwrap(),
    )
}

fn exact_p(a: &[Vec<bool>], b: &[Vec<bool>]) -> f64 {
    let count = |f: &Vec<bool>| f.iter().filter(|&&x| x).count() as i64;
    let d: Vec<i64> = a.iter().zip(b).map(|(x, y)| count(x) - count(y)).collect();
    let obs = d.iter().sum::<i64>().abs();
    let n = d.len();
    let hits = (0u32..1 << n)
        .filter(|mask| {
            let s: i64 = (0..n).map(|i| if mask >> i & 1 == 1 { -d[i] } else { d[i] }).sum();
            s.abs() >= obs
        })
        .count();
    hits as f64 / (1u64 << n) as f64
}

fn flags(rng: &mut ChaCha8Rng, lens: &[usize], p: f64) -> Vec<Vec<bool>> {
    lens.iter().map(|&n| (0..n).map(|_| rng.gen_bool(p)).collect()).collect()
}

fn significance() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for pair in 0..50 {
        let n = rng.gen_range(1..=10);
        let lens: Vec<usize> = (0..n).map(|_| rng.gen_range(1..9)).collect();
        let (pa, pb) = (rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0));
        let (fa, fb) = (flags(&mut rng, &lens, pa), flags(&mut rng, &lens, pb));
        let (a, b) = systems(&fa, &fb);
        let p = approx_randomization(&a, &b, 10_000, pair).unwrap().p_value;
        let e = exact_p(&fa, &fb);
        worst = worst.max((p - e).abs());
        ensure((p - e).abs() <= 0.02, format!("pair {pair}: approx {p:.4} vs exact {e:.4}"))?;
    }
    let mut rejections = 0;
    for trial in 0..500 {
        let lens: Vec<usize> = (0..50).map(|_| rng.gen_range(5..15)).collect();
        let (fa, fb) = (flags(&mut rng, &lens, 0.8), flags(&mut rng, &lens, 0.8));
        let (a, b) = systems(&fa, &fb);
        if approx_randomization(&a, &b, 10_000, 1000 + trial).unwrap().p_value <= 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / 500.0;
    ensure(
        (rate - 0.05).abs() <= 0.02,
        format!("null rejection rate {rate:.3} outside 0.05 +- 0.02"),
    )?;
    within(t, Duration::from_secs(300))?;
    Ok(format!("max |approx - exact| {worst:.4}; null rejection rate {rate:.3}"))
}

fn bleu_cases() -> Outcome {
    let corpus = |lines: &[&str]| lines.iter().map(|l| tokenize(l)).collect::<Vec<_>>();
    let refs = corpus(&["the cat sat on the mat", "a b c d e f g", "one two three four"]);
    let id = bleu(&refs, &refs).unwrap();
    ensure((id - 100.0).abs() < 1e-9, format!("identity scored {id}"))?;
    let cases = [
        // p = 4/5, 3/4, 2/3, 1/2, no brevity penalty.
        (vec!["a b c d f"], vec!["a b c d e"], 66.87),
        // Perfect precision, BP = exp(1 - 6/4).
        (vec!["a b c d"], vec!["a b c d e f"], 60.65),
        // Pooled counts 8/9, 6/7, 4/5, 2/3 with BP = exp(1 - 11/9).
        (
            vec!["a b c d f", "a b c d"],
            vec!["a b c d e", "a b c d e f"],
            63.93,
        ),
    ];
    for (h, r, want) in &cases {
        let got = bleu(&corpus(h), &corpus(r)).unwrap();
        ensure((got - want).abs() <= 0.01, format!("{h:?}: {got:.4} vs {want}"))?;
    }
    Ok("identity 100.00, three hand cases within 0.01".into())
}

fn coarse_monotone() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    for i in 0..1000 {
        let n_fine = rng.gen_range(1..12);
        let n_coarse = rng.gen_range(1..=n_fine);
        let pairs: Vec<(String, String)> = (0..n_fine)
            .map(|f| {
                let c = if f < n_coarse { f } else { rng.gen_range(0..n_coarse) };
                (format!("F{f}"), format!("C{c}"))
            })
            .collect();
        let schema = TagSchema::from_pairs(pairs).unwrap();
        let tags = schema.fine_tags();
        let lens: Vec<usize> = (0..rng.gen_range(1..10)).map(|_| rng.gen_range(1..10)).collect();
        let total: usize = lens.iter().sum();
        let gold: Vec<String> = (0..total).map(|_| tags.choose(&mut rng).unwrap().clone()).collect();
        let keep = rng.gen::<f64>();
        let predicted = gold
            .iter()
            .map(|g| if rng.gen_bool(keep) { g.clone() } else { tags.choose(&mut rng).unwrap().clone() })
            .collect();
        let r = TaggingResult::new(gold, predicted, lens, format!("r{i}")).unwrap();
        let fine = accuracy(&r).unwrap();
        let coarse = accuracy(&coarse_collapse(&r, &schema).unwrap()).unwrap();
        if coarse < fine {
            violations += 1;
        }
    }
    ensure(violations == 0, format!("{violations} violations"))?;
    Ok("1000 random results, zero violations".into())
}

fn layer_ordering() -> Outcome {
    let t = Instant::now();
    let seed = 1;
    let lang = SyntheticLanguage::new(LanguageParams {
        vocab_size: 120,
        ..LanguageParams::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train_src = lang.sample_sentences(2000, &mut rng);
    let dev_src = lang.sample_sentences(200, &mut rng);
    let test_src = lang.sample_sentences(400, &mut rng);
    let train = lang.parallel(&train_src, Transform::ContextReverse, Split::Train);
    let dev = lang.parallel(&dev_src, Transform::ContextReverse, Split::Dev);
    let cfg = NmtConfig {
        embed_dim: 64,
        hidden_dim: 64,
        num_layers: 2,
        epochs: 20,
        batch_size: 32,
        lr: 1.0,
        decay_patience: 3,
        init_range: 0.3,
        dropout: 0.2,
        seed,
        ..NmtConfig::default()
    };
    let sv = Vocab::build(train.sources(), 1000, 1).unwrap();
    let tv = Vocab::build(train.targets(), 1000, 1).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let untrained = Seq2SeqModel::new(cfg, sv, tv, &mut r).unwrap();
    let trained = train_model(untrained.clone(), &train, &dev, &mut r).unwrap().model;

    let schema = lang.sem_schema();
    let [pt, pd, ps] = [&train_src, &dev_src, &test_src].map(|s| lang.tagged(s, TagKind::Sem));
    let probe_cfg = ProbeConfig {
        epochs: 60,
        ..ProbeConfig::default()
    };
    let probe_layers = |m: &Seq2SeqModel| -> Vec<f64> {
        let [tr, dv, ts] = [(&pt, Split::Train), (&pd, Split::Dev), (&ps, Split::Test)]
            .map(|(c, s)| extract_all_layers(m, c, &schema, "m", s).unwrap());
        (0..tr.len())
            .map(|k| {
                let p = train_probe(&tr[k], &dv[k], schema.num_fine(), &probe_cfg).unwrap();
                let pred = p.classifier.predict(&ts[k]).unwrap();
                let hits = pred.iter().zip(&ts[k].tags).filter(|(a, b)| a == b).count();
                hits as f64 / pred.len() as f64
            })
            .collect()
    };
    let tr = probe_layers(&trained);
    let un = probe_layers(&untrained);
    let ceiling = lang.context_free_ceiling();
    let summary = format!(
        "ceiling {ceiling:.4}; trained k0 {:.4} k1 {:.4}; untrained k1 {:.4}",
        tr[0],
        tr[1],
        un[1]
    );
    ensure(tr[0] <= ceiling + 0.02, format!("layer 0 above ceiling + 2: {summary}"))?;
    ensure(tr[1] >= ceiling + 0.20, format!("layer 1 below ceiling + 20: {summary}"))?;
    ensure(tr[1] - un[1] >= 0.10, format!("trained layer 1 not 10 above untrained: {summary}"))?;
    within(t, Duration::from_secs(15 * 60))?;
    Ok(summary)
}

fn encoder_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vocab = Vocab::from_tokens((0..3).map(|i| format!("x{i}")));
    for case in 0..100 {
        let layers = rng.gen_range(2..5);
        let h = 2 * rng.gen_range(1..4);
        let residual = rng.gen_bool(0.5);
        let len = rng.gen_range(2..8);
        let cfg = NmtConfig {
            embed_dim: h,
            hidden_dim: h,
            num_layers: layers,
            residual,
            dropout: 0.0,
            init_range: 0.5,
            ..NmtConfig::default()
        };
        let m = Seq2SeqModel::new(cfg.clone(), vocab.clone(), vocab.clone(), &mut rng).unwrap();
        let a: Vec<usize> = (0..len).map(|_| rng.gen_range(4..7)).collect();
        let cut = rng.gen_range(0..len);
        let mut b = a.clone();
        for t in b.iter_mut().skip(cut + 1) {
            *t = rng.gen_range(4..7);
        }
        b.push(5);
        let (sa, sb) = (encode(&m, &a).unwrap(), encode(&m, &b).unwrap());
        for k in 0..=layers {
            for j in 0..=cut {
                ensure(
                    sa.states[k][j] == sb.states[k][j],
                    format!("case {case}: layer {k} position {j} depends on later tokens"),
                )?;
            }
        }

        let bi = rng.gen_bool(0.5);
        let cfg = NmtConfig { residual: true, bidirectional: bi, ..cfg };
        let mut m = Seq2SeqModel::new(cfg, vocab.clone(), vocab.clone(), &mut rng).unwrap();
        let k = rng.gen_range(2..=layers);
        for d in 0..if bi { 2 } else { 1 } {
            let cell = *m.encoder_cell(k, d).unwrap();
            for id in [cell.w, cell.u, cell.b] {
                m.params.get_mut(id).value.fill(0.0);
            }
        }
        let s = encode(&m, &a).unwrap();
        for j in 0..len {
            ensure(
                s.states[k][j] == s.states[k - 1][j],
                format!("case {case}: zeroed residual layer {k} is not the identity"),
            )?;
        }
    }
    Ok("100 configurations: causality and residual identity exact".into())
}

const GRID: &str = r#"
[run]
jobs = 1
seeds = [1]

[data]
kind = "synthetic"
vocab_size = 20
train = 60
dev = 10
test = 20

[nmt]
targets = ["context-reverse", "reverse", "copy"]
depths = [1, 2]
variants = ["uni", "bi", "res"]
data_sizes = [30]
untrained_control = true
embed_dim = 8
hidden_dim = 8
epochs = 2

[probe]
tasks = ["pos", "sem", "sem-coarse"]
epochs = 3

[baselines.skipgram]
epochs = 1

[significance]
shuffles = 200
"#;

fn run_grid(dir: &Path, out: &str) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let config = dir.join("grid.toml");
    fs::write(&config, GRID).map_err(|e| e.to_string())?;
    let out = dir.join(out);
    let args = ["layerprobe", "run", "-q", "--config"];
    let cli = Cli::try_parse_from(
        args.iter()
            .map(|s| s.to_string())
            .chain([config.display().to_string(), "--out".into(), out.display().to_string()]),
    )
    .map_err(|e| e.to_string())?;
    execute(&cli.command).map_err(|e| e.to_string())?;
    let mut files = BTreeMap::new();
    for e in fs::read_dir(out.join("reports")).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        files.insert(name, fs::read(&p).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = run_grid(dir.path(), "a")?;
    let b = run_grid(dir.path(), "b")?;
    ensure(!a.is_empty(), "no reports written")?;
    ensure(
        a.keys().eq(b.keys()),
        format!("different report sets: {:?} vs {:?}", a.keys(), b.keys()),
    )?;
    for (name, bytes) in &a {
        ensure(&b[name] == bytes, format!("{name} differs between runs"))?;
    }
    Ok(format!("{} report files byte-identical across two runs", a.len()))
}

fn csv(files: &BTreeMap<String, Vec<u8>>, name: &str) -> Result<Vec<Vec<String>>, String> {
    let text = files
        .get(name)
        .ok_or_else(|| format!("missing {name}"))
        .map(|b| String::from_utf8_lossy(b).into_owned())?;
    Ok(text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect())
}

fn report_shapes() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = run_grid(dir.path(), "out")?;
    let layers: Vec<String> = (0..=2).map(|k| k.to_string()).collect();
    let ks: Vec<String> = (0..=2).map(|k| format!("k{k}")).collect();
    for task in ["pos", "sem", "sem-coarse"] {
        let t = csv(&files, &format!("layers_{task}.csv"))?;
        ensure(
            t[0] == ["layer", "context-reverse", "reverse", "copy", "cells"],
            format!("layers_{task} header {:?}", t[0]),
        )?;
        let keys: Vec<&String> = t[1..].iter().map(|r| &r[0]).collect();
        let want: Vec<&String> = layers.iter().collect();
        ensure(keys[..3] == want[..] && keys[3] == "bleu" && t.len() == 5, format!("layers_{task} rows {keys:?}"))?;
        ensure(t.iter().all(|r| r.len() == 5), format!("layers_{task} ragged"))?;
    }
    for (name, key, rows) in [
        ("variants.csv", "variant", vec!["uni", "bi", "res"]),
        ("depths.csv", "depth", vec!["1", "2"]),
    ] {
        let t = csv(&files, name)?;
        let mut head = vec![key.to_string(), "task".into()];
        head.extend(ks.iter().cloned());
        head.push("cells".into());
        ensure(t[0] == head, format!("{name} header {:?}", t[0]))?;
        ensure(t.len() == 1 + rows.len() * 3, format!("{name} has {} rows", t.len() - 1))?;
        for r in &t[1..] {
            ensure(rows.contains(&r[0].as_str()) && r.len() == head.len(), format!("{name} row {r:?}"))?;
        }
    }
    let t = csv(&files, "coarse_f1_delta.csv")?;
    ensure(
        t[0] == ["coarse_tag", "mode", "layer_a", "layer_b", "f1_a", "f1_b", "delta", "cells"],
        format!("coarse header {:?}", t[0]),
    )?;
    let lang = SyntheticLanguage::new(LanguageParams {
        vocab_size: 20,
        ..LanguageParams::default()
    })
    .unwrap();
    let coarse = lang.sem_schema().num_coarse();
    ensure(t.len() == 1 + 2 * coarse, format!("{} coarse rows for {coarse} tags", t.len() - 1))?;
    for pair in t[1..].chunks(2) {
        ensure(
            pair[0][0] == pair[1][0] && pair[0][1] == "direct-coarse" && pair[1][1] == "fine-micro",
            format!("coarse rows {pair:?}"),
        )?;
    }
    Ok(format!(
        "layer tables, variant/depth tables and {} coarse delta rows conform",
        2 * coarse
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient correctness", gradients),
        ("MFT oracle equivalence", mft),
        ("significance test exactness", significance),
        ("BLEU correctness", bleu_cases),
        ("coarse-collapse monotonicity", coarse_monotone),
        ("layer ordering on context-tag", layer_ordering),
        ("encoder causality and residual identity", encoder_invariants),
        ("end-to-end determinism", determinism),
        ("report shape conformance", report_shapes),
    ];
    let picked: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !picked.is_empty() && !picked.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {n} {name} ({:.1?}): {detail}", t.elapsed());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
