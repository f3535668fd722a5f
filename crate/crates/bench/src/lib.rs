//! Shared fixtures for the benchmarks.

use layerprobe::data::{LanguageParams, Split, SyntheticLanguage, Transform};
use layerprobe::{NmtConfig, ParallelCorpus, Seq2SeqModel, TagKind, TagSchema, TaggedCorpus, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub parallel: ParallelCorpus,
    pub tagged: TaggedCorpus,
    pub schema: TagSchema,
    pub model: Seq2SeqModel,
}

/// A small synthetic corpus and an untrained 2-layer model over it.
pub fn fixture(sentences: usize, hidden: usize) -> Fixture {
    let lang = SyntheticLanguage::new(LanguageParams {
        vocab_size: 60,
        ..LanguageParams::default()
    })
    .expect("valid language");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let src = lang.sample_sentences(sentences, &mut rng);
    let parallel = lang.parallel(&src, Transform::ContextReverse, Split::Train);
    let cfg = NmtConfig {
        embed_dim: hidden,
        hidden_dim: hidden,
        num_layers: 2,
        ..NmtConfig::default()
    };
    let sv = Vocab::build(parallel.sources(), 1000, 1).expect("vocab");
    let tv = Vocab::build(parallel.targets(), 1000, 1).expect("vocab");
    let model = Seq2SeqModel::new(cfg, sv, tv, &mut rng).expect("model");
    Fixture {
        tagged: lang.tagged(&src, TagKind::Sem),
        schema: lang.sem_schema(),
        parallel,
        model,
    }
}
