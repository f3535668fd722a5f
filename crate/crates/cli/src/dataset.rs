//! Materialized corpora for one experiment config.

use std::collections::BTreeMap;
use std::path::Path;

use layerprobe::data::{
    load_parallel, parse_tagged, tokenize, Sentence, SyntheticLanguage, Transform,
};
use layerprobe::{ParallelCorpus, Split, TagKind, TagSchema, TaggedCorpus};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cache::{fingerprint, fingerprint_bytes};
use crate::config::{DataSection, ExperimentConfig, FileData, SplitPaths, Task, TaskFiles, AUTOENCODER};
use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct Splits<T> {
    pub train: T,
    pub dev: T,
    pub test: T,
}

#[derive(Debug, Clone)]
pub struct TaskData {
    pub schema: TagSchema,
    pub corpora: Splits<TaggedCorpus>,
    /// Best accuracy reachable from the current token alone, when known.
    pub context_free_ceiling: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Hash of everything the corpora were built from.
    pub fingerprint: String,
    pub parallel: BTreeMap<String, Splits<ParallelCorpus>>,
    pub tasks: BTreeMap<Task, TaskData>,
    /// Source side of the training split, for skip-gram.
    pub source_train: Vec<Sentence>,
}

impl Dataset {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        match &cfg.data {
            DataSection::Synthetic(s) => {
                let lang = SyntheticLanguage::new(s.language())
                    .map_err(|e| CliError::Data(e.to_string()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
                let train = lang.sample_sentences(s.train, &mut rng);
                let dev = lang.sample_sentences(s.dev, &mut rng);
                let test = lang.sample_sentences(s.test, &mut rng);
                let mut parallel = BTreeMap::new();
                for t in &cfg.nmt.targets {
                    let tr: Transform = t.parse().map_err(|e: layerprobe::DataError| {
                        CliError::Data(e.to_string())
                    })?;
                    parallel.insert(
                        t.clone(),
                        Splits {
                            train: lang.parallel(&train, tr, Split::Train),
                            dev: lang.parallel(&dev, tr, Split::Dev),
                            test: lang.parallel(&test, tr, Split::Test),
                        },
                    );
                }
                let mut tasks = BTreeMap::new();
                for &task in &cfg.probe.tasks {
                    let kind = match task {
                        Task::Pos => TagKind::Pos,
                        Task::Sem | Task::SemCoarse => TagKind::Sem,
                    };
                    let schema = lang.schema(kind);
                    let corpora = Splits {
                        train: lang.tagged(&train, kind),
                        dev: lang.tagged(&dev, kind),
                        test: lang.tagged(&test, kind),
                    };
                    let ceiling = match task {
                        Task::Pos => Some(1.0),
                        Task::Sem => Some(lang.context_free_ceiling()),
                        Task::SemCoarse => Some(1.0),
                    };
                    let data = TaskData {
                        schema,
                        corpora,
                        context_free_ceiling: ceiling,
                    };
                    tasks.insert(task, maybe_coarse(task, data)?);
                }
                Ok(Dataset {
                    fingerprint: fingerprint(&("synthetic", s)),
                    parallel,
                    tasks,
                    source_train: train,
                })
            }
            DataSection::Files(f) => load_files(cfg, f),
        }
    }

    pub fn task(&self, task: Task) -> &TaskData {
        &self.tasks[&task]
    }

    /// Training pairs for `target`, truncated for the data-size ablation.
    pub fn train_pairs(&self, target: &str, size: Option<usize>) -> ParallelCorpus {
        let full = &self.parallel[target].train;
        match size {
            Some(n) => full.truncated(n),
            None => full.clone(),
        }
    }
}

fn maybe_coarse(task: Task, data: TaskData) -> Result<TaskData, CliError> {
    if task != Task::SemCoarse {
        return Ok(data);
    }
    let s = &data.schema;
    let conv = |c: &TaggedCorpus| c.to_coarse(s).map_err(|e| CliError::Data(e.to_string()));
    Ok(TaskData {
        corpora: Splits {
            train: conv(&data.corpora.train)?,
            dev: conv(&data.corpora.dev)?,
            test: conv(&data.corpora.test)?,
        },
        schema: s.coarse_schema(),
        context_free_ceiling: data.context_free_ceiling,
    })
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn load_files(cfg: &ExperimentConfig, f: &FileData) -> Result<Dataset, CliError> {
    let max_len = cfg.nmt.max_len;
    let mut hashed: Vec<Vec<u8>> = Vec::new();
    let mut parallel = BTreeMap::new();
    let src = &f.source;
    for t in cfg.targets() {
        let tgt: &SplitPaths = if t == AUTOENCODER { src } else { &f.targets[&t] };
        let load = |s: &Path, g: &Path, split| {
            load_parallel(s, g, max_len, split)
                .map(|(c, _)| c)
                .map_err(|e| CliError::Data(format!("target {t}: {e}")))
        };
        parallel.insert(
            t.clone(),
            Splits {
                train: load(&src.train, &tgt.train, Split::Train)?,
                dev: load(&src.dev, &tgt.dev, Split::Dev)?,
                test: load(&src.test, &tgt.test, Split::Test)?,
            },
        );
        hashed.push(t.as_bytes().to_vec());
        for p in [&tgt.train, &tgt.dev, &tgt.test] {
            hashed.push(read(p)?.into_bytes());
        }
    }
    let source_text = read(&src.train)?;
    for p in [&src.dev, &src.test] {
        hashed.push(read(p)?.into_bytes());
    }
    let source_train: Vec<Sentence> = source_text
        .lines()
        .map(tokenize)
        .filter(|s| !s.is_empty())
        .collect();
    hashed.push(source_text.into_bytes());

    let mut tasks = BTreeMap::new();
    for &task in &cfg.probe.tasks {
        let (files, kind) = match task {
            Task::Pos => (f.pos.as_ref(), TagKind::Pos),
            Task::Sem | Task::SemCoarse => (f.sem.as_ref(), TagKind::Sem),
        };
        let files = files.expect("validated: task has files");
        let (data, bytes) = load_task(files, kind)?;
        hashed.extend(bytes);
        tasks.insert(task, maybe_coarse(task, data)?);
    }
    let parts: Vec<&[u8]> = hashed.iter().map(Vec::as_slice).collect();
    Ok(Dataset {
        fingerprint: fingerprint_bytes(&parts),
        parallel,
        tasks,
        source_train,
    })
}

fn load_task(files: &TaskFiles, kind: TagKind) -> Result<(TaskData, Vec<Vec<u8>>), CliError> {
    let p = &files.paths;
    let texts = [read(&p.train)?, read(&p.dev)?, read(&p.test)?];
    let mut bytes: Vec<Vec<u8>> = texts.iter().map(|t| t.as_bytes().to_vec()).collect();
    let schema = match &files.schema {
        Some(path) => {
            let text = read(path)?;
            bytes.push(text.as_bytes().to_vec());
            TagSchema::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        }
        None => {
            let mut tags: Vec<&str> = texts
                .iter()
                .flat_map(|t| t.lines())
                .filter_map(|l| l.trim_end_matches('\r').split_once('\t').map(|(_, t)| t))
                .filter(|t| !t.is_empty())
                .collect();
            tags.sort_unstable();
            tags.dedup();
            TagSchema::flat(tags).map_err(|e| CliError::Data(e.to_string()))?
        }
    };
    let parse = |text: &str, path: &Path| {
        parse_tagged(text, &schema, kind).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    };
    let corpora = Splits {
        train: parse(&texts[0], &p.train)?,
        dev: parse(&texts[1], &p.dev)?,
        test: parse(&texts[2], &p.test)?,
    };
    Ok((
        TaskData {
            schema,
            corpora,
            context_free_ceiling: None,
        },
        bytes,
    ))
}
