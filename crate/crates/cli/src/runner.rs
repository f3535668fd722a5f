//! Stage execution over the grid.
//!
//! Stages run in dependency order: NMT models and skip-gram tables, then
//! feature extraction, then probes and baselines. Within a stage independent
//! cells run on a rayon pool of `run.jobs` threads. Every cell writes into
//! the cache and is skipped on later runs once its marker exists.

use std::path::PathBuf;

use layerprobe::baselines::{word2tag_evaluate, MftModel};
use layerprobe::data::Vocab;
use layerprobe::nmt::{train_nmt, translate_greedy};
use layerprobe::probe::{predictions_csv, read_features, write_features};
use layerprobe::{
    bleu, fit_mft, train_skipgram, train_word2tag, Checkpoint, EmbeddingTable,
    FeatureDataset, Seq2SeqModel, Split,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::cache::{fingerprint, Cache};
use crate::config::{ExperimentConfig, Task};
use crate::dataset::Dataset;
use crate::error::CliError;
use crate::grid::{BaselineCell, FeatureSource, Grid, NmtCell, ProbeCell};

pub const STAGE_NMT: &str = "nmt";
pub const STAGE_EMB: &str = "embeddings";
pub const STAGE_FEATURES: &str = "features";
pub const STAGE_PROBE: &str = "probe";
pub const STAGE_BASELINE: &str = "baseline";

pub const MODEL_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

/// Which stages a command runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Nmt,
    Embeddings,
    Extract,
    Probe,
    Baseline,
}

pub struct Runner {
    pub cfg: ExperimentConfig,
    pub data: Dataset,
    pub grid: Grid,
    pub cache: Cache,
    pool: rayon::ThreadPool,
    quiet: bool,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct StageSummary {
    pub ran: usize,
    pub cached: usize,
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Dev => "dev",
        Split::Test => "test",
    }
}

const SPLITS: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let data = Dataset::load(&cfg)?;
        let grid = Grid::plan(&cfg);
        let cache = Cache::new(cfg.run.out.join("cache"));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.jobs.max(1))
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        Ok(Runner {
            cfg,
            data,
            grid,
            cache,
            pool,
            quiet: false,
        })
    }

    pub fn quiet(mut self, quiet: bool) -> Self {
        self.quiet = quiet;
        self
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.cfg.run.out.join("reports")
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageSummary, CliError> {
        match stage {
            Stage::Nmt => self.for_cells(&self.grid.nmt, |c| self.nmt_cell(c)),
            Stage::Embeddings => self.for_cells(&self.grid.embeddings, |s| self.embedding_cell(*s)),
            Stage::Extract => {
                let jobs = self.feature_jobs();
                self.for_cells(&jobs, |(src, task)| self.feature_cell(src, *task))
            }
            Stage::Probe => self.for_cells(&self.grid.probes, |c| self.probe_cell(c)),
            Stage::Baseline => self.for_cells(&self.grid.baselines, |c| self.baseline_cell(c)),
        }
    }

    /// Every stage in dependency order.
    pub fn run_all(&self) -> Result<(), CliError> {
        for stage in [Stage::Nmt, Stage::Embeddings, Stage::Extract, Stage::Probe, Stage::Baseline] {
            let s = self.run_stage(stage)?;
            self.note(format!("{stage:?}: {} ran, {} cached", s.ran, s.cached));
        }
        Ok(())
    }

    fn for_cells<T: Sync>(
        &self,
        cells: &[T],
        f: impl Fn(&T) -> Result<bool, CliError> + Sync,
    ) -> Result<StageSummary, CliError> {
        let done: Vec<bool> = self
            .pool
            .install(|| cells.par_iter().map(&f).collect::<Result<_, _>>())?;
        let ran = done.iter().filter(|&&r| r).count();
        Ok(StageSummary {
            ran,
            cached: done.len() - ran,
        })
    }

    // ---- NMT ----

    pub fn nmt_fingerprint(&self, c: &NmtCell) -> String {
        c.fingerprint(&self.cfg, &self.data.fingerprint)
    }

    /// Returns `true` when the cell was computed, `false` on a cache hit.
    fn nmt_cell(&self, c: &NmtCell) -> Result<bool, CliError> {
        let fp = self.nmt_fingerprint(c);
        if self.cache.is_complete(STAGE_NMT, &fp) {
            return Ok(false);
        }
        let id = c.id();
        self.note(format!("training {id}"));
        let err = |e: &dyn std::fmt::Display| CliError::stage(STAGE_NMT, &id, e);
        let cfg = self.cfg.nmt.model_config(c.depth, c.variant, c.seed);
        let train = self.data.train_pairs(&c.target, c.size);
        let dev = &self.data.parallel[&c.target].dev;
        let (model, log, best_epoch) = if c.trained {
            let out = train_nmt(&train, dev, &cfg).map_err(|e| err(&e))?;
            let log = out.log_csv();
            (out.model, log, out.best_epoch)
        } else {
            let src = Vocab::build(train.sources(), cfg.src_vocab_size, 1).map_err(|e| err(&e))?;
            let tgt = Vocab::build(train.targets(), cfg.tgt_vocab_size, 1).map_err(|e| err(&e))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let model = Seq2SeqModel::new(cfg.clone(), src, tgt, &mut rng).map_err(|e| err(&e))?;
            (model, String::from("epoch,train_loss,dev_loss,lr\n"), 0)
        };
        let test = &self.data.parallel[&c.target].test;
        let mut hyps = Vec::with_capacity(test.len());
        for (src, tgt) in &test.pairs {
            let ids = model.src_vocab.encode(src);
            let limit = cfg.max_len.max(2 * tgt.len());
            hyps.push(translate_greedy(&model, &ids, limit).map_err(|e| err(&e))?);
        }
        let refs: Vec<Vec<String>> = test.targets().map(<[String]>::to_vec).collect();
        let score = bleu(&hyps, &refs).map_err(|e| err(&e))?;
        let mut ck = Vec::new();
        model.to_checkpoint().write_to(&mut ck).map_err(|e| err(&e))?;
        self.cache.write(STAGE_NMT, &fp, MODEL_FILE, &ck)?;
        self.cache.write(STAGE_NMT, &fp, LOG_FILE, log.as_bytes())?;
        let metrics = json!({ "id": id, "bleu": score, "best_epoch": best_epoch });
        self.cache.write(STAGE_NMT, &fp, METRICS_FILE, metrics.to_string().as_bytes())?;
        self.cache.finish(STAGE_NMT, &fp, &json!({ "id": id, "cell": c }))?;
        Ok(true)
    }

    pub fn load_model(&self, c: &NmtCell) -> Result<Seq2SeqModel, CliError> {
        let fp = self.nmt_fingerprint(c);
        if !self.cache.is_complete(STAGE_NMT, &fp) {
            return Err(CliError::MissingCells(vec![c.id()]));
        }
        let path = self.cache.dir(STAGE_NMT, &fp).join(MODEL_FILE);
        let ck = Checkpoint::load(&path).map_err(|e| CliError::io(&path, e))?;
        Seq2SeqModel::from_checkpoint(&ck).map_err(|e| CliError::io(&path, e))
    }

    pub fn nmt_metrics(&self, c: &NmtCell) -> Result<serde_json::Value, CliError> {
        let fp = self.nmt_fingerprint(c);
        if !self.cache.is_complete(STAGE_NMT, &fp) {
            return Err(CliError::MissingCells(vec![c.id()]));
        }
        let text = self.cache.read_string(STAGE_NMT, &fp, METRICS_FILE)?;
        serde_json::from_str(&text).map_err(|e| CliError::stage(STAGE_NMT, &c.id(), e))
    }

    // ---- skip-gram ----

    pub fn embedding_fingerprint(&self, seed: u64) -> String {
        let sg = self.cfg.baselines.skipgram.config(self.cfg.nmt.embed_dim, seed);
        fingerprint(&("skipgram", &self.data.fingerprint, &sg))
    }

    fn embedding_cell(&self, seed: u64) -> Result<bool, CliError> {
        let fp = self.embedding_fingerprint(seed);
        if self.cache.is_complete(STAGE_EMB, &fp) {
            return Ok(false);
        }
        let id = FeatureSource::UnsupEmb(seed).id();
        self.note(format!("training {id}"));
        let sg = self.cfg.baselines.skipgram.config(self.cfg.nmt.embed_dim, seed);
        let out = train_skipgram(self.data.source_train.iter().map(Vec::as_slice), &sg)
            .map_err(|e| CliError::stage(STAGE_EMB, &id, e))?;
        self.cache.write(STAGE_EMB, &fp, EMBEDDINGS_FILE, out.table.to_text().as_bytes())?;
        self.cache.finish(STAGE_EMB, &fp, &json!({ "id": id, "losses": out.losses }))?;
        Ok(true)
    }

    fn load_embeddings(&self, seed: u64) -> Result<EmbeddingTable, CliError> {
        let fp = self.embedding_fingerprint(seed);
        if !self.cache.is_complete(STAGE_EMB, &fp) {
            return Err(CliError::MissingCells(vec![FeatureSource::UnsupEmb(seed).id()]));
        }
        let path = self.cache.dir(STAGE_EMB, &fp).join(EMBEDDINGS_FILE);
        EmbeddingTable::load(&path).map_err(|e| CliError::io(&path, e))
    }

    // ---- features ----

    fn feature_jobs(&self) -> Vec<(FeatureSource, Task)> {
        let mut jobs: Vec<(FeatureSource, Task)> = self
            .grid
            .probes
            .iter()
            .map(|p| (p.source.clone(), p.task))
            .collect();
        jobs.dedup();
        jobs
    }

    fn source_fingerprint(&self, src: &FeatureSource) -> String {
        match src {
            FeatureSource::Nmt(c) => self.nmt_fingerprint(c),
            FeatureSource::UnsupEmb(seed) => self.embedding_fingerprint(*seed),
        }
    }

    pub fn feature_fingerprint(&self, src: &FeatureSource, task: Task) -> String {
        fingerprint(&("features", self.source_fingerprint(src), &self.data.fingerprint, task))
    }

    fn feature_file(layer: usize, split: Split) -> String {
        format!("k{layer}.{}.feat", split_name(split))
    }

    fn feature_cell(&self, src: &FeatureSource, task: Task) -> Result<bool, CliError> {
        let fp = self.feature_fingerprint(src, task);
        if self.cache.is_complete(STAGE_FEATURES, &fp) {
            return Ok(false);
        }
        let id = format!("{}.{}", src.id(), task.name());
        let err = |e: &dyn std::fmt::Display| CliError::stage(STAGE_FEATURES, &id, e);
        let data = self.data.task(task);
        let dir = self.cache.dir(STAGE_FEATURES, &fp);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        for split in SPLITS {
            let corpus = split_of(&data.corpora, split);
            let sets: Vec<FeatureDataset> = match src {
                FeatureSource::Nmt(c) => {
                    let model = self.load_model(c)?;
                    layerprobe::probe::extract_all_layers(&model, corpus, &data.schema, &c.id(), split)
                        .map_err(|e| err(&e))?
                }
                FeatureSource::UnsupEmb(seed) => {
                    let table = self.load_embeddings(*seed)?;
                    vec![FeatureDataset::from_sentences(
                        corpus,
                        &data.schema,
                        0,
                        &src.id(),
                        split,
                        |toks| Ok(toks.iter().map(|t| table.lookup(t).to_vec()).collect()),
                    )
                    .map_err(|e| err(&e))?]
                }
            };
            for ds in &sets {
                let path = dir.join(Self::feature_file(ds.layer, split));
                let tmp = dir.join(format!(".{}.tmp", Self::feature_file(ds.layer, split)));
                write_features(ds, &tmp).map_err(|e| err(&e))?;
                std::fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
            }
        }
        self.cache.finish(STAGE_FEATURES, &fp, &json!({ "id": id }))?;
        Ok(true)
    }

    fn load_features(
        &self,
        src: &FeatureSource,
        task: Task,
        layer: usize,
        split: Split,
    ) -> Result<FeatureDataset, CliError> {
        let fp = self.feature_fingerprint(src, task);
        if !self.cache.is_complete(STAGE_FEATURES, &fp) {
            return Err(CliError::MissingCells(vec![format!("{}.{}", src.id(), task.name())]));
        }
        let path = self.cache.dir(STAGE_FEATURES, &fp).join(Self::feature_file(layer, split));
        read_features(&path).map_err(|e| CliError::io(&path, e))
    }

    // ---- probes ----

    pub fn probe_fingerprint(&self, c: &ProbeCell) -> String {
        let pc = self.cfg.probe.probe_config(c.seed());
        fingerprint(&(
            "probe",
            self.feature_fingerprint(&c.source, c.task),
            c.layer,
            &pc,
        ))
    }

    fn probe_cell(&self, c: &ProbeCell) -> Result<bool, CliError> {
        let fp = self.probe_fingerprint(c);
        if self.cache.is_complete(STAGE_PROBE, &fp) {
            return Ok(false);
        }
        let id = c.id();
        let err = |e: &dyn std::fmt::Display| CliError::stage(STAGE_PROBE, &id, e);
        let data = self.data.task(c.task);
        let [train, dev, test] =
            SPLITS.map(|s| self.load_features(&c.source, c.task, c.layer, s));
        let (train, dev, test) = (train?, dev?, test?);
        let pc = self.cfg.probe.probe_config(c.seed());
        let out = layerprobe::train_probe(&train, &dev, data.schema.num_fine(), &pc)
            .map_err(|e| err(&e))?;
        let pred = out.classifier.predict(&test).map_err(|e| err(&e))?;
        let names: Vec<String> = pred
            .into_iter()
            .map(|i| data.schema.fine_tags()[i].clone())
            .collect();
        let csv = predictions_csv(&data.corpora.test, &names);
        self.cache.write(STAGE_PROBE, &fp, PREDICTIONS_FILE, csv.as_bytes())?;
        let history: Vec<String> = out
            .history
            .iter()
            .enumerate()
            .map(|(i, (t, d))| format!("{},{t:.6},{d:.6}", i + 1))
            .collect();
        let log = format!("epoch,train_loss,dev_loss\n{}\n", history.join("\n"));
        self.cache.write(STAGE_PROBE, &fp, LOG_FILE, log.as_bytes())?;
        self.cache.finish(
            STAGE_PROBE,
            &fp,
            &json!({ "id": id, "best_epoch": out.best_epoch }),
        )?;
        Ok(true)
    }

    pub fn probe_predictions(&self, c: &ProbeCell) -> Result<String, CliError> {
        let fp = self.probe_fingerprint(c);
        if !self.cache.is_complete(STAGE_PROBE, &fp) {
            return Err(CliError::MissingCells(vec![c.id()]));
        }
        self.cache.read_string(STAGE_PROBE, &fp, PREDICTIONS_FILE)
    }

    // ---- baselines ----

    pub fn baseline_fingerprint(&self, c: &BaselineCell) -> String {
        let nmt = match c {
            BaselineCell::Mft(_) => None,
            BaselineCell::Word2Tag { seed, .. } => Some(self.cfg.nmt.model_config(
                self.cfg.nmt.max_depth(),
                self.cfg.nmt.base_variant(),
                *seed,
            )),
        };
        fingerprint(&("baseline", &self.data.fingerprint, c, &nmt))
    }

    fn baseline_cell(&self, c: &BaselineCell) -> Result<bool, CliError> {
        let fp = self.baseline_fingerprint(c);
        if self.cache.is_complete(STAGE_BASELINE, &fp) {
            return Ok(false);
        }
        let id = c.id();
        let err = |e: &dyn std::fmt::Display| CliError::stage(STAGE_BASELINE, &id, e);
        let data = self.data.task(c.task());
        let test = &data.corpora.test;
        let predicted = match c {
            BaselineCell::Mft(_) => {
                let m: MftModel = fit_mft(&data.corpora.train).map_err(|e| err(&e))?;
                self.cache.write(STAGE_BASELINE, &fp, "mft.tsv", m.to_tsv().as_bytes())?;
                m.predict_corpus(test)
            }
            BaselineCell::Word2Tag { seed, .. } => {
                self.note(format!("training {id}"));
                let n = &self.cfg.nmt;
                let cfg = n.model_config(n.max_depth(), n.base_variant(), *seed);
                let out = train_word2tag(&data.corpora.train, &data.corpora.dev, &cfg)
                    .map_err(|e| err(&e))?;
                self.cache.write(STAGE_BASELINE, &fp, LOG_FILE, out.log_csv().as_bytes())?;
                word2tag_evaluate(&out.model, test).map_err(|e| err(&e))?.predicted
            }
        };
        let csv = predictions_csv(test, &predicted);
        self.cache.write(STAGE_BASELINE, &fp, PREDICTIONS_FILE, csv.as_bytes())?;
        self.cache.finish(STAGE_BASELINE, &fp, &json!({ "id": id }))?;
        Ok(true)
    }

    pub fn baseline_predictions(&self, c: &BaselineCell) -> Result<String, CliError> {
        let fp = self.baseline_fingerprint(c);
        if !self.cache.is_complete(STAGE_BASELINE, &fp) {
            return Err(CliError::MissingCells(vec![c.id()]));
        }
        self.cache.read_string(STAGE_BASELINE, &fp, PREDICTIONS_FILE)
    }
}

pub(crate) fn split_of<T>(s: &crate::dataset::Splits<T>, split: Split) -> &T {
    match split {
        Split::Train => &s.train,
        Split::Dev => &s.dev,
        Split::Test => &s.test,
    }
}
