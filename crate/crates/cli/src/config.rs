//! Experiment configuration: a TOML file of `key = value` sections.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use layerprobe::data::{LanguageParams, Transform};
use layerprobe::{NmtConfig, ProbeConfig, SkipGramConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub run: RunSection,
    pub data: DataSection,
    #[serde(default)]
    pub nmt: NmtSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub baselines: BaselineSection,
    #[serde(default)]
    pub significance: SignificanceSection,
    #[serde(default)]
    pub reports: ReportSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub out: PathBuf,
    pub jobs: usize,
    pub seeds: Vec<u64>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            out: PathBuf::from("out"),
            jobs: 1,
            seeds: vec![1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSection {
    Synthetic(SyntheticData),
    Files(FileData),
}

/// Source sentences are sampled once; every target is a transform of them
/// and the tag sets are computed from the same sentences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticData {
    pub vocab_size: usize,
    pub num_classes: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticData {
    fn default() -> Self {
        SyntheticData {
            vocab_size: 120,
            num_classes: 4,
            min_len: 5,
            max_len: 12,
            train: 2000,
            dev: 200,
            test: 400,
            seed: 7,
        }
    }
}

impl SyntheticData {
    pub fn language(&self) -> LanguageParams {
        LanguageParams {
            vocab_size: self.vocab_size,
            num_classes: self.num_classes,
            min_len: self.min_len,
            max_len: self.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFiles {
    #[serde(flatten)]
    pub paths: SplitPaths,
    /// Fine-to-coarse TSV. Without one the tag set is read off the data and
    /// every tag is its own category.
    #[serde(default)]
    pub schema: Option<PathBuf>,
}

/// Multi-parallel text files: one source side shared by every target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileData {
    pub source: SplitPaths,
    #[serde(default)]
    pub targets: BTreeMap<String, SplitPaths>,
    /// Adds a target named `autoencoder` whose target side is the source.
    #[serde(default)]
    pub autoencoder: bool,
    #[serde(default)]
    pub pos: Option<TaskFiles>,
    #[serde(default)]
    pub sem: Option<TaskFiles>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Uni,
    Bi,
    Res,
    BiRes,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Uni => "uni",
            Variant::Bi => "bi",
            Variant::Res => "res",
            Variant::BiRes => "bi-res",
        }
    }

    pub fn bidirectional(self) -> bool {
        matches!(self, Variant::Bi | Variant::BiRes)
    }

    pub fn residual(self) -> bool {
        matches!(self, Variant::Res | Variant::BiRes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmtSection {
    /// Synthetic transforms or names of `data.targets` entries.
    pub targets: Vec<String>,
    pub depths: Vec<usize>,
    pub variants: Vec<Variant>,
    /// Training-set sizes for the data ablation; the full set is always run.
    pub data_sizes: Vec<usize>,
    /// Also probe a randomly initialized model of the base architecture.
    pub untrained_control: bool,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs without a new best dev loss before decay starts.
    pub decay_patience: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub init_range: f64,
    pub max_grad_norm: f64,
    pub max_len: usize,
    pub src_vocab_size: usize,
    pub tgt_vocab_size: usize,
}

impl Default for NmtSection {
    fn default() -> Self {
        let d = NmtConfig::default();
        NmtSection {
            targets: Vec::new(),
            depths: vec![4],
            variants: vec![Variant::Uni],
            data_sizes: Vec::new(),
            untrained_control: false,
            embed_dim: d.embed_dim,
            hidden_dim: d.hidden_dim,
            epochs: d.epochs,
            lr: d.lr,
            lr_decay: d.lr_decay,
            decay_patience: d.decay_patience,
            batch_size: d.batch_size,
            dropout: d.dropout,
            init_range: d.init_range,
            max_grad_norm: d.max_grad_norm,
            max_len: d.max_len,
            src_vocab_size: d.src_vocab_size,
            tgt_vocab_size: d.tgt_vocab_size,
        }
    }
}

impl NmtSection {
    pub fn model_config(&self, depth: usize, variant: Variant, seed: u64) -> NmtConfig {
        NmtConfig {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_layers: depth,
            bidirectional: variant.bidirectional(),
            residual: variant.residual(),
            dropout: self.dropout,
            epochs: self.epochs,
            lr: self.lr,
            lr_decay: self.lr_decay,
            decay_patience: self.decay_patience,
            batch_size: self.batch_size,
            max_grad_norm: self.max_grad_norm,
            init_range: self.init_range,
            max_len: self.max_len,
            src_vocab_size: self.src_vocab_size,
            tgt_vocab_size: self.tgt_vocab_size,
            seed,
        }
    }

    pub fn max_depth(&self) -> usize {
        self.depths.iter().copied().max().unwrap_or(0)
    }

    /// Uni if listed, otherwise the first variant.
    pub fn base_variant(&self) -> Variant {
        if self.variants.contains(&Variant::Uni) {
            Variant::Uni
        } else {
            self.variants.first().copied().unwrap_or(Variant::Uni)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Pos,
    Sem,
    /// SEM with gold and training labels mapped to coarse categories.
    SemCoarse,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Pos => "pos",
            Task::Sem => "sem",
            Task::SemCoarse => "sem-coarse",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Task::Pos => "POS",
            Task::Sem => "SEM",
            Task::SemCoarse => "SEM-coarse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub tasks: Vec<Task>,
    /// Empty means every layer of every model.
    pub layers: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub dropout: f64,
    pub init_range: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let d = ProbeConfig::default();
        ProbeSection {
            tasks: vec![Task::Pos, Task::Sem],
            layers: Vec::new(),
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            dropout: d.dropout,
            init_range: d.init_range,
        }
    }
}

impl ProbeSection {
    pub fn probe_config(&self, seed: u64) -> ProbeConfig {
        ProbeConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            dropout: self.dropout,
            init_range: self.init_range,
            seed,
        }
    }

    pub fn layers_for(&self, depth: usize) -> Vec<usize> {
        if self.layers.is_empty() {
            (0..=depth).collect()
        } else {
            self.layers.iter().copied().filter(|&k| k <= depth).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub mft: bool,
    pub unsup_emb: bool,
    pub word2tag: bool,
    pub skipgram: SkipGramSection,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection {
            mft: true,
            unsup_emb: true,
            word2tag: true,
            skipgram: SkipGramSection::default(),
        }
    }
}

/// `dim = 0` mirrors the NMT embedding width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkipGramSection {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    pub min_count: usize,
}

impl Default for SkipGramSection {
    fn default() -> Self {
        let d = SkipGramConfig::default();
        SkipGramSection {
            dim: 0,
            window: d.window,
            negatives: d.negatives,
            epochs: d.epochs,
            lr: d.lr,
            min_count: d.min_count,
        }
    }
}

impl SkipGramSection {
    pub fn config(&self, embed_dim: usize, seed: u64) -> SkipGramConfig {
        SkipGramConfig {
            dim: if self.dim == 0 { embed_dim } else { self.dim },
            window: self.window,
            negatives: self.negatives,
            epochs: self.epochs,
            lr: self.lr,
            min_count: self.min_count,
            seed,
            ..SkipGramConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignificanceSection {
    pub shuffles: usize,
    pub seed: u64,
}

impl Default for SignificanceSection {
    fn default() -> Self {
        SignificanceSection {
            shuffles: 10_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Restricts the disagreement listing to gold tags of this coarse category.
    pub disagreement_coarse: Option<String>,
}

fn invalid(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config {
            field: e
                .span()
                .map(|s| format!("bytes {}..{}", s.start, s.end))
                .unwrap_or_else(|| "<file>".into()),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        if let DataSection::Files(f) = &mut cfg.data {
            f.resolve(path.parent().unwrap_or(Path::new(".")));
        }
        Ok(cfg)
    }

    /// Target names in report column order.
    pub fn targets(&self) -> Vec<String> {
        let mut t = self.nmt.targets.clone();
        if let DataSection::Files(f) = &self.data {
            if f.autoencoder && !t.iter().any(|x| x == AUTOENCODER) {
                t.push(AUTOENCODER.to_string());
            }
        }
        t
    }

    pub fn is_autoencoder(&self, target: &str) -> bool {
        match &self.data {
            DataSection::Synthetic(_) => target
                .parse::<Transform>()
                .map(Transform::is_autoencoder)
                .unwrap_or(false),
            DataSection::Files(_) => target == AUTOENCODER,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let n = &self.nmt;
        if self.run.jobs == 0 {
            return Err(invalid("run.jobs", "must be at least 1"));
        }
        if self.run.seeds.is_empty() {
            return Err(invalid("run.seeds", "at least one seed is required"));
        }
        if n.targets.is_empty() {
            return Err(invalid("nmt.targets", "at least one target is required"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &n.targets {
            if !seen.insert(t) {
                return Err(invalid("nmt.targets", format!("`{t}` listed twice")));
            }
        }
        match &self.data {
            DataSection::Synthetic(s) => {
                for t in &n.targets {
                    t.parse::<Transform>().map_err(|_| {
                        invalid(
                            "nmt.targets",
                            format!(
                                "`{t}` is not a synthetic transform (copy, reverse, context, context-reverse)"
                            ),
                        )
                    })?;
                }
                if s.train == 0 || s.dev == 0 || s.test == 0 {
                    return Err(invalid("data.train", "every split needs at least one sentence"));
                }
                layerprobe::data::SyntheticLanguage::new(s.language())
                    .map_err(|e| invalid("data", e.to_string()))?;
            }
            DataSection::Files(f) => {
                for t in &n.targets {
                    if t != AUTOENCODER && !f.targets.contains_key(t) {
                        return Err(invalid(
                            "nmt.targets",
                            format!("`{t}` has no entry under data.targets"),
                        ));
                    }
                }
                for task in &self.probe.tasks {
                    let present = match task {
                        Task::Pos => f.pos.is_some(),
                        Task::Sem | Task::SemCoarse => f.sem.is_some(),
                    };
                    if !present {
                        return Err(invalid(
                            "probe.tasks",
                            format!("task `{}` has no data files", task.name()),
                        ));
                    }
                }
            }
        }
        if n.depths.is_empty() {
            return Err(invalid("nmt.depths", "at least one depth is required"));
        }
        if n.depths.contains(&0) {
            return Err(invalid("nmt.depths", "depth must be at least 1"));
        }
        if n.variants.is_empty() {
            return Err(invalid("nmt.variants", "at least one variant is required"));
        }
        if n.variants.iter().any(|v| v.residual()) && n.embed_dim != n.hidden_dim {
            return Err(invalid(
                "nmt.hidden_dim",
                "residual variants need embed_dim == hidden_dim",
            ));
        }
        if n.variants.iter().any(|v| v.bidirectional()) && n.hidden_dim % 2 != 0 {
            return Err(invalid(
                "nmt.hidden_dim",
                "bidirectional variants need an even hidden_dim",
            ));
        }
        if n.data_sizes.contains(&0) {
            return Err(invalid("nmt.data_sizes", "sizes must be positive"));
        }
        for v in &n.variants {
            n.model_config(n.max_depth(), *v, 1)
                .validate()
                .map_err(|e| invalid("nmt", e.to_string()))?;
        }
        if self.probe.tasks.is_empty() {
            return Err(invalid("probe.tasks", "at least one task is required"));
        }
        let max = n.max_depth();
        if let Some(&k) = self.probe.layers.iter().find(|&&k| k > max) {
            return Err(invalid(
                "probe.layers",
                format!("layer {k} requested but the deepest model has {max} layers"),
            ));
        }
        if self.probe.epochs == 0 || self.probe.batch_size == 0 {
            return Err(invalid("probe.epochs", "epochs and batch_size must be positive"));
        }
        if !(self.probe.lr > 0.0) {
            return Err(invalid("probe.lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.probe.dropout) {
            return Err(invalid("probe.dropout", "must be in [0, 1)"));
        }
        if self.significance.shuffles == 0 {
            return Err(invalid("significance.shuffles", "must be positive"));
        }
        Ok(())
    }
}

pub const AUTOENCODER: &str = "autoencoder";

impl SplitPaths {
    fn resolve(&mut self, base: &Path) {
        for p in [&mut self.train, &mut self.dev, &mut self.test] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

impl FileData {
    /// Makes relative paths relative to the config file's directory.
    fn resolve(&mut self, base: &Path) {
        self.source.resolve(base);
        for t in self.targets.values_mut() {
            t.resolve(base);
        }
        for task in [&mut self.pos, &mut self.sem].into_iter().flatten() {
            task.paths.resolve(base);
            if let Some(s) = &mut task.schema {
                if s.is_relative() {
                    *s = base.join(&*s);
                }
            }
        }
    }
}
