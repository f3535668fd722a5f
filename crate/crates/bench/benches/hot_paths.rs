use criterion::{black_box, criterion_group, criterion_main, Criterion};
use layerprobe::eval::TaggingResult;
use layerprobe::nmt::{batch_gradients, encode_corpus, encode_tokens};
use layerprobe::probe::extract_all_layers;
use layerprobe::{approx_randomization, bleu, train_probe, ProbeConfig, Split};
use layerprobe_bench::fixture;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn nmt(c: &mut Criterion) {
    let f = fixture(32, 64);
    let data = encode_corpus(&f.parallel, &f.model.src_vocab, &f.model.tgt_vocab);
    let batch: Vec<_> = data.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    c.bench_function("nmt batch gradients (32 x h64)", |b| {
        b.iter(|| batch_gradients(&f.model, black_box(&batch), true, &mut rng).unwrap())
    });
    let s = &f.parallel.pairs[0].0;
    c.bench_function("encode one sentence", |b| {
        b.iter(|| encode_tokens(&f.model, black_box(s)).unwrap())
    });
}

fn probe(c: &mut Criterion) {
    let f = fixture(200, 64);
    let sets = extract_all_layers(&f.model, &f.tagged, &f.schema, "bench", Split::Train).unwrap();
    let cfg = ProbeConfig {
        epochs: 1,
        ..ProbeConfig::default()
    };
    c.bench_function("probe epoch (~1.7k tokens x 64)", |b| {
        b.iter(|| train_probe(&sets[1], &sets[1], f.schema.num_fine(), &cfg).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let f = fixture(400, 8);
    let hyps: Vec<Vec<String>> = f.parallel.sources().map(<[String]>::to_vec).collect();
    let refs: Vec<Vec<String>> = f.parallel.targets().map(<[String]>::to_vec).collect();
    c.bench_function("corpus bleu (400 sentences)", |b| {
        b.iter(|| bleu(black_box(&hyps), black_box(&refs)).unwrap())
    });
    let gold = f.tagged.gold_tags();
    let lens = f.tagged.sentence_lengths();
    let mut other = gold.clone();
    for t in other.iter_mut().step_by(7) {
        *t = "X".into();
    }
    let a = TaggingResult::new(gold.clone(), gold.clone(), lens.clone(), "a").unwrap();
    let b_ = TaggingResult::new(gold, other, lens, "b").unwrap();
    c.bench_function("approximate randomization (R = 1000)", |b| {
        b.iter(|| approx_randomization(&a, &b_, 1000, 1).unwrap())
    });
}

criterion_group!(benches, nmt, probe, metrics);
criterion_main!(benches);
