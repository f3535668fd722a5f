//! Report tables, recomputed from the persisted prediction dumps.
//!
//! Every file lands in `<out>/reports/`. Accuracies and F1 are fractions
//! with four decimals, BLEU has two. Rows that aggregate several grid cells
//! list their ids in a trailing `cells` column.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use layerprobe::eval::{coarse_collapse, disagreement_report, micro_f1_within_coarse, per_tag_f1};
use layerprobe::probe::parse_predictions_csv;
use layerprobe::{accuracy, approx_randomization, SignificanceReport, TagSchema, TaggingResult};

use crate::cache::write_atomic;
use crate::config::{Task, Variant};
use crate::error::CliError;
use crate::grid::{control_target, BaselineCell, FeatureSource, NmtCell, ProbeCell};
use crate::runner::Runner;

pub const RESULTS: &str = "results.csv";
pub const BLEU: &str = "bleu.csv";
pub const VARIANTS: &str = "variants.csv";
pub const DEPTHS: &str = "depths.csv";
pub const DATA_SIZES: &str = "data_sizes.csv";
pub const BASELINES: &str = "baselines.csv";
pub const COARSE_DELTA: &str = "coarse_f1_delta.csv";
pub const SIGNIFICANCE: &str = "significance.csv";

pub fn layers_file(task: Task) -> String {
    format!("layers_{}.csv", task.name())
}

pub fn untrained_file(task: Task) -> String {
    format!("untrained_{}.csv", task.name())
}

pub fn disagreements_file(target: &str) -> String {
    format!("disagreements_{target}.tsv")
}

/// Which files a command writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportSet {
    /// `results.csv` and `bleu.csv` only.
    Evaluate,
    Significance,
    All,
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn opt4(x: Option<f64>) -> String {
    x.map(f4).unwrap_or_default()
}

/// All grid results, loaded from the cache.
pub struct Results<'r> {
    runner: &'r Runner,
    pub probes: BTreeMap<ProbeCell, TaggingResult>,
    pub baselines: BTreeMap<BaselineCell, TaggingResult>,
    pub bleu: BTreeMap<NmtCell, f64>,
}

fn parse_dump(text: &str, system: &str) -> Result<TaggingResult, CliError> {
    let (gold, pred, lens) =
        parse_predictions_csv(text).map_err(|e| CliError::Data(format!("{system}: {e}")))?;
    TaggingResult::new(gold, pred, lens, system).map_err(|e| CliError::Data(format!("{system}: {e}")))
}

impl<'r> Results<'r> {
    /// Fails with every missing cell id when any result is absent.
    pub fn load(runner: &'r Runner) -> Result<Self, CliError> {
        let grid = &runner.grid;
        if grid.probes.is_empty() {
            return Err(CliError::Data("empty grid: no probe cells to report".into()));
        }
        let mut missing = Vec::new();
        let mut note = |e: CliError| -> Result<(), CliError> {
            match e {
                CliError::MissingCells(ids) => {
                    missing.extend(ids);
                    Ok(())
                }
                other => Err(other),
            }
        };
        let mut bleu = BTreeMap::new();
        for c in &grid.nmt {
            match runner.nmt_metrics(c) {
                Ok(m) => {
                    let b = m["bleu"].as_f64().ok_or_else(|| {
                        CliError::Data(format!("{}: metrics lack bleu", c.id()))
                    })?;
                    bleu.insert(c.clone(), b);
                }
                Err(e) => note(e)?,
            }
        }
        let mut probes = BTreeMap::new();
        for c in &grid.probes {
            match runner.probe_predictions(c) {
                Ok(text) => {
                    probes.insert(c.clone(), parse_dump(&text, &c.id())?);
                }
                Err(e) => note(e)?,
            }
        }
        let mut baselines = BTreeMap::new();
        for c in &grid.baselines {
            match runner.baseline_predictions(c) {
                Ok(text) => {
                    baselines.insert(c.clone(), parse_dump(&text, &c.id())?);
                }
                Err(e) => note(e)?,
            }
        }
        if !missing.is_empty() {
            return Err(CliError::MissingCells(missing));
        }
        Ok(Results {
            runner,
            probes,
            baselines,
            bleu,
        })
    }

    fn cfg(&self) -> &crate::config::ExperimentConfig {
        &self.runner.cfg
    }

    fn depth(&self) -> usize {
        self.cfg().nmt.max_depth()
    }

    fn base(&self) -> Variant {
        self.cfg().nmt.base_variant()
    }

    /// Translation targets first, autoencoder targets last.
    fn ordered_targets(&self) -> Vec<String> {
        let cfg = self.cfg();
        let (mut mt, ae): (Vec<String>, Vec<String>) =
            cfg.targets().into_iter().partition(|t| !cfg.is_autoencoder(t));
        mt.extend(ae);
        mt
    }

    /// Non-autoencoder targets, or every target when all are autoencoders.
    fn averaged_targets(&self) -> Vec<String> {
        let cfg = self.cfg();
        let mt: Vec<String> = cfg
            .targets()
            .into_iter()
            .filter(|t| !cfg.is_autoencoder(t))
            .collect();
        if mt.is_empty() {
            cfg.targets()
        } else {
            mt
        }
    }

    fn is_base(&self, c: &NmtCell) -> bool {
        c.trained && c.depth == self.depth() && c.variant == self.base() && c.size.is_none()
    }

    /// Probe results on trained NMT features matching `keep`.
    fn nmt_probes<'a>(
        &'a self,
        task: Task,
        layer: usize,
        keep: impl Fn(&NmtCell) -> bool + 'a,
    ) -> impl Iterator<Item = (&'a ProbeCell, &'a NmtCell, &'a TaggingResult)> + 'a {
        self.probes.iter().filter_map(move |(p, r)| match &p.source {
            FeatureSource::Nmt(c) if p.task == task && p.layer == layer && keep(c) => Some((p, c, r)),
            _ => None,
        })
    }

    /// Mean accuracy and contributing ids.
    fn mean_acc<'a>(
        &self,
        rows: impl Iterator<Item = (&'a ProbeCell, &'a NmtCell, &'a TaggingResult)>,
    ) -> Result<(Option<f64>, Vec<String>), CliError> {
        let mut accs = Vec::new();
        let mut ids = Vec::new();
        for (p, _, r) in rows {
            accs.push(acc(r)?);
            ids.push(p.id());
        }
        Ok((mean(&accs), ids))
    }

    fn layers(&self) -> Vec<usize> {
        self.cfg().probe.layers_for(self.depth())
    }

    fn layer_header(&self, first: &str) -> String {
        let ks: Vec<String> = self.layers().iter().map(|k| format!("k{k}")).collect();
        format!("{first},{},cells\n", ks.join(","))
    }

    pub fn results_csv(&self) -> Result<String, CliError> {
        let mut s = String::from(
            "cell,kind,task,target,depth,variant,size,seed,trained,layer,accuracy,tokens\n",
        );
        for (p, r) in &self.probes {
            let a = f4(acc(r)?);
            let n = r.len();
            let task = p.task.name();
            match &p.source {
                FeatureSource::Nmt(c) => {
                    let size = c.size.map(|n| n.to_string()).unwrap_or_else(|| "full".into());
                    let _ = writeln!(
                        s,
                        "{},probe,{task},{},{},{},{size},{},{},{},{a},{n}",
                        p.id(),
                        c.target,
                        c.depth,
                        c.variant.name(),
                        c.seed,
                        c.trained,
                        p.layer
                    );
                }
                FeatureSource::UnsupEmb(seed) => {
                    let _ = writeln!(s, "{},unsup-emb,{task},,,,,{seed},,0,{a},{n}", p.id());
                }
            }
        }
        for (b, r) in &self.baselines {
            let a = f4(acc(r)?);
            let n = r.len();
            let task = b.task().name();
            match b {
                BaselineCell::Mft(_) => {
                    let _ = writeln!(s, "{},mft,{task},,,,,,,,{a},{n}", b.id());
                }
                BaselineCell::Word2Tag { seed, .. } => {
                    let _ = writeln!(s, "{},word2tag,{task},,,,,{seed},,,{a},{n}", b.id());
                }
            }
        }
        Ok(s)
    }

    pub fn bleu_csv(&self) -> String {
        let mut s = String::from("cell,target,depth,variant,size,seed,trained,bleu\n");
        for (c, b) in &self.bleu {
            let size = c.size.map(|n| n.to_string()).unwrap_or_else(|| "full".into());
            let _ = writeln!(
                s,
                "{},{},{},{},{size},{},{},{b:.2}",
                c.id(),
                c.target,
                c.depth,
                c.variant.name(),
                c.seed,
                c.trained
            );
        }
        s
    }

    /// Layer x target accuracies for the base models, then a BLEU row.
    pub fn layers_csv(&self, task: Task) -> Result<String, CliError> {
        let targets = self.ordered_targets();
        let mut s = format!("layer,{},cells\n", targets.join(","));
        for k in self.layers() {
            let mut cols = Vec::new();
            let mut ids = Vec::new();
            for t in &targets {
                let (m, i) = self.mean_acc(self.nmt_probes(task, k, |c| self.is_base(c) && &c.target == t))?;
                cols.push(opt4(m));
                ids.extend(i);
            }
            let _ = writeln!(s, "{k},{},{}", cols.join(","), ids.join(";"));
        }
        let mut cols = Vec::new();
        let mut ids = Vec::new();
        for t in &targets {
            let b: Vec<f64> = self
                .bleu
                .iter()
                .filter(|(c, _)| self.is_base(c) && &c.target == t)
                .map(|(c, &b)| {
                    ids.push(c.id());
                    b
                })
                .collect();
            cols.push(mean(&b).map(|x| format!("{x:.2}")).unwrap_or_default());
        }
        let _ = writeln!(s, "bleu,{},{}", cols.join(","), ids.join(";"));
        Ok(s)
    }

    /// One row per (row key, task); columns are layers averaged over
    /// translation targets and seeds.
    fn grid_table<K: std::fmt::Display>(
        &self,
        first: &str,
        keys: &[K],
        keep: impl Fn(&K, &NmtCell) -> bool,
    ) -> Result<String, CliError> {
        let targets = self.averaged_targets();
        let mut s = self.layer_header(&format!("{first},task"));
        for key in keys {
            for &task in &self.cfg().probe.tasks {
                let mut cols = Vec::new();
                let mut ids = Vec::new();
                for k in self.layers() {
                    let (m, i) = self.mean_acc(self.nmt_probes(task, k, |c| {
                        c.trained && targets.contains(&c.target) && keep(key, c)
                    }))?;
                    cols.push(opt4(m));
                    ids.extend(i);
                }
                if ids.is_empty() {
                    continue;
                }
                let _ = writeln!(s, "{key},{},{},{}", task.name(), cols.join(","), ids.join(";"));
            }
        }
        Ok(s)
    }

    pub fn variants_csv(&self) -> Result<String, CliError> {
        let mut vs = vec![self.base()];
        for &v in &self.cfg().nmt.variants {
            if !vs.contains(&v) {
                vs.push(v);
            }
        }
        let names: Vec<&str> = vs.iter().map(|v| v.name()).collect();
        let depth = self.depth();
        self.grid_table("variant", &names, |name, c| {
            c.variant.name() == *name && c.depth == depth && c.size.is_none()
        })
    }

    pub fn depths_csv(&self) -> Result<String, CliError> {
        let mut ds = self.cfg().nmt.depths.clone();
        ds.sort_unstable();
        ds.dedup();
        let base = self.base();
        self.grid_table("depth", &ds, |d, c| {
            c.depth == *d && c.variant == base && c.size.is_none()
        })
    }

    pub fn data_sizes_csv(&self) -> Result<String, CliError> {
        let mut sizes: Vec<Option<usize>> = self.cfg().nmt.data_sizes.iter().copied().map(Some).collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes.push(None);
        let labels: Vec<String> = sizes
            .iter()
            .map(|s| s.map(|n| n.to_string()).unwrap_or_else(|| "full".into()))
            .collect();
        let (depth, base) = (self.depth(), self.base());
        self.grid_table("size", &labels, |label, c| {
            let l = c.size.map(|n| n.to_string()).unwrap_or_else(|| "full".into());
            &l == label && c.depth == depth && c.variant == base
        })
    }

    /// Baseline x task accuracies, averaged over seeds.
    pub fn baselines_csv(&self) -> Result<String, CliError> {
        let tasks = &self.cfg().probe.tasks;
        let names: Vec<&str> = tasks.iter().map(|t| t.name()).collect();
        let mut s = format!("baseline,{},cells\n", names.join(","));
        for name in ["mft", "unsup-emb", "word2tag"] {
            let mut cols = Vec::new();
            let mut ids = Vec::new();
            for &t in tasks {
                let mut accs = Vec::new();
                for (id, r) in self.baseline_rows(name, t) {
                    accs.push(acc(r)?);
                    ids.push(id);
                }
                cols.push(opt4(mean(&accs)));
            }
            if ids.is_empty() {
                continue;
            }
            let _ = writeln!(s, "{name},{},{}", cols.join(","), ids.join(";"));
        }
        Ok(s)
    }

    fn baseline_rows(&self, name: &str, t: Task) -> Vec<(String, &TaggingResult)> {
        if name == "unsup-emb" {
            return self
                .probes
                .iter()
                .filter(|(p, _)| p.task == t && matches!(p.source, FeatureSource::UnsupEmb(_)))
                .map(|(p, r)| (p.id(), r))
                .collect();
        }
        self.baselines
            .iter()
            .filter(|(b, _)| {
                b.task() == t
                    && match b {
                        BaselineCell::Mft(_) => name == "mft",
                        BaselineCell::Word2Tag { .. } => name == "word2tag",
                    }
            })
            .map(|(b, r)| (b.id(), r))
            .collect()
    }

    /// Trained vs untrained features of the control target, per layer.
    pub fn untrained_csv(&self, task: Task) -> Result<Option<String>, CliError> {
        if !self.cfg().nmt.untrained_control {
            return Ok(None);
        }
        let target = control_target(self.cfg());
        let (depth, base) = (self.depth(), self.base());
        let mut s = String::from("layer,trained,untrained,delta,cells\n");
        for k in self.layers() {
            let (tr, mut ids) =
                self.mean_acc(self.nmt_probes(task, k, |c| self.is_base(c) && c.target == target))?;
            let (un, i) = self.mean_acc(self.probes.iter().filter_map(|(p, r)| match &p.source {
                FeatureSource::Nmt(c)
                    if !c.trained
                        && p.task == task
                        && p.layer == k
                        && c.depth == depth
                        && c.variant == base =>
                {
                    Some((p, c, r))
                }
                _ => None,
            }))?;
            ids.extend(i);
            let delta = tr.zip(un).map(|(a, b)| a - b);
            let _ = writeln!(s, "{k},{},{},{},{}", opt4(tr), opt4(un), opt4(delta), ids.join(";"));
        }
        Ok(Some(s))
    }

    /// Per-coarse-tag F1 change from layer 1 to the top layer, directly on
    /// coarse predictions and micro-averaged over fine tags.
    pub fn coarse_delta_csv(&self) -> Result<Option<String>, CliError> {
        if !self.cfg().probe.tasks.contains(&Task::Sem) {
            return Ok(None);
        }
        let schema: &TagSchema = &self.runner.data.task(Task::Sem).schema;
        let top = self.depth();
        let targets = self.averaged_targets();
        let has_coarse = self.cfg().probe.tasks.contains(&Task::SemCoarse);
        let pick = |task: Task, k: usize| -> Vec<(&ProbeCell, &TaggingResult)> {
            self.nmt_probes(task, k, |c| self.is_base(c) && targets.contains(&c.target))
                .map(|(p, _, r)| (p, r))
                .collect()
        };
        // direct-coarse: sem-coarse probes when trained, else collapsed fine output.
        let direct = |k: usize| -> Result<Vec<(String, TaggingResult)>, CliError> {
            if has_coarse {
                Ok(pick(Task::SemCoarse, k)
                    .into_iter()
                    .map(|(p, r)| (p.id(), r.clone()))
                    .collect())
            } else {
                pick(Task::Sem, k)
                    .into_iter()
                    .map(|(p, r)| {
                        coarse_collapse(r, schema)
                            .map(|c| (p.id(), c))
                            .map_err(|e| CliError::Data(format!("{}: {e}", p.id())))
                    })
                    .collect()
            }
        };
        let (d1, dt) = (direct(1)?, direct(top)?);
        let (f1s, ft) = (pick(Task::Sem, 1), pick(Task::Sem, top));
        let mut s = String::from("coarse_tag,mode,layer_a,layer_b,f1_a,f1_b,delta,cells\n");
        let ids = |a: &[String], b: &[String]| [a, b].concat().join(";");
        for coarse in schema.coarse_tags() {
            let fa: Vec<f64> = d1.iter().map(|(_, r)| per_tag_f1(r, coarse).f1).collect();
            let fb: Vec<f64> = dt.iter().map(|(_, r)| per_tag_f1(r, coarse).f1).collect();
            let ia: Vec<String> = d1.iter().map(|(i, _)| i.clone()).collect();
            let ib: Vec<String> = dt.iter().map(|(i, _)| i.clone()).collect();
            row(&mut s, coarse, "direct-coarse", top, &fa, &fb, &ids(&ia, &ib));
            let micro = |rs: &[(&ProbeCell, &TaggingResult)]| -> Result<Vec<f64>, CliError> {
                rs.iter()
                    .map(|(_, r)| {
                        micro_f1_within_coarse(r, schema, coarse).map_err(|e| CliError::Data(e.to_string()))
                    })
                    .collect()
            };
            let ia: Vec<String> = f1s.iter().map(|(p, _)| p.id()).collect();
            let ib: Vec<String> = ft.iter().map(|(p, _)| p.id()).collect();
            row(&mut s, coarse, "fine-micro", top, &micro(&f1s)?, &micro(&ft)?, &ids(&ia, &ib));
        }
        Ok(Some(s))
    }

    /// Adjacent-layer comparisons for every base model, and trained vs
    /// untrained at each layer for the control.
    pub fn significance_csv(&self) -> Result<String, CliError> {
        let sig = &self.cfg().significance;
        let mut s = format!("{}\n", SignificanceReport::CSV_HEADER);
        let mut push = |a: &TaggingResult, b: &TaggingResult| -> Result<(), CliError> {
            let r = approx_randomization(a, b, sig.shuffles, sig.seed)
                .map_err(|e| CliError::Data(format!("{} vs {}: {e}", a.system, b.system)))?;
            s.push_str(&r.csv_row());
            s.push('\n');
            Ok(())
        };
        let layers = self.layers();
        let by_key: BTreeMap<(Task, &NmtCell, usize), &TaggingResult> = self
            .probes
            .iter()
            .filter_map(|(p, r)| match &p.source {
                FeatureSource::Nmt(c) => Some(((p.task, c, p.layer), r)),
                _ => None,
            })
            .collect();
        for &task in &self.cfg().probe.tasks {
            for c in self.runner.grid.nmt.iter().filter(|c| self.is_base(c)) {
                for w in layers.windows(2) {
                    if let (Some(a), Some(b)) = (by_key.get(&(task, c, w[0])), by_key.get(&(task, c, w[1]))) {
                        push(a, b)?;
                    }
                }
                if !self.cfg().nmt.untrained_control || c.target != control_target(self.cfg()) {
                    continue;
                }
                let control = NmtCell {
                    trained: false,
                    ..c.clone()
                };
                for &k in &layers {
                    if let (Some(a), Some(b)) = (by_key.get(&(task, c, k)), by_key.get(&(task, &control, k))) {
                        push(a, b)?;
                    }
                }
            }
        }
        Ok(s)
    }

    /// Layer 1 vs top layer on SEM test tokens, per base model of the first seed.
    pub fn disagreements(&self) -> Result<Vec<(String, String)>, CliError> {
        let top = self.depth();
        if !self.cfg().probe.tasks.contains(&Task::Sem) || top < 2 {
            return Ok(Vec::new());
        }
        let data = self.runner.data.task(Task::Sem);
        let coarse = self.cfg().reports.disagreement_coarse.as_deref();
        if let Some(c) = coarse {
            if data.schema.coarse_id(c).is_none() {
                return Err(CliError::Config {
                    field: "reports.disagreement_coarse".into(),
                    reason: format!("`{c}` is not a coarse SEM category"),
                });
            }
        }
        let seed = self.cfg().run.seeds[0];
        let mut out = Vec::new();
        for t in self.ordered_targets() {
            let find = |k| {
                self.nmt_probes(Task::Sem, k, |c| self.is_base(c) && c.target == t && c.seed == seed)
                    .map(|(_, _, r)| r)
                    .next()
            };
            if let (Some(a), Some(b)) = (find(1), find(top)) {
                let rep = disagreement_report(a, b, &data.corpora.test, coarse.map(|c| (&data.schema, c)))
                    .map_err(|e| CliError::Data(e.to_string()))?;
                out.push((disagreements_file(&t), rep.to_tsv("k1", &format!("k{top}"))));
            }
        }
        Ok(out)
    }

    /// Renders the requested files as `(name, contents)`.
    pub fn render(&self, set: ReportSet) -> Result<Vec<(String, String)>, CliError> {
        let mut files = Vec::new();
        if matches!(set, ReportSet::Evaluate | ReportSet::All) {
            files.push((RESULTS.to_string(), self.results_csv()?));
            files.push((BLEU.to_string(), self.bleu_csv()));
        }
        if matches!(set, ReportSet::Significance | ReportSet::All) {
            files.push((SIGNIFICANCE.to_string(), self.significance_csv()?));
        }
        if set == ReportSet::All {
            for &task in &self.cfg().probe.tasks {
                files.push((layers_file(task), self.layers_csv(task)?));
                if let Some(u) = self.untrained_csv(task)? {
                    files.push((untrained_file(task), u));
                }
            }
            files.push((VARIANTS.to_string(), self.variants_csv()?));
            files.push((DEPTHS.to_string(), self.depths_csv()?));
            files.push((DATA_SIZES.to_string(), self.data_sizes_csv()?));
            files.push((BASELINES.to_string(), self.baselines_csv()?));
            if let Some(c) = self.coarse_delta_csv()? {
                files.push((COARSE_DELTA.to_string(), c));
            }
            files.extend(self.disagreements()?);
        }
        Ok(files)
    }
}

fn acc(r: &TaggingResult) -> Result<f64, CliError> {
    accuracy(r).map_err(|e| CliError::Data(format!("{}: {e}", r.system)))
}

fn row(s: &mut String, coarse: &str, mode: &str, top: usize, a: &[f64], b: &[f64], cells: &str) {
    let (ma, mb) = (mean(a), mean(b));
    let delta = ma.zip(mb).map(|(x, y)| y - x);
    let _ = writeln!(
        s,
        "{coarse},{mode},1,{top},{},{},{},{cells}",
        opt4(ma),
        opt4(mb),
        opt4(delta)
    );
}

/// Loads every result and writes the requested report files.
pub fn write_reports(runner: &Runner, set: ReportSet) -> Result<Vec<PathBuf>, CliError> {
    let results = Results::load(runner)?;
    let files = results.render(set)?;
    let dir = runner.reports_dir();
    let mut written = Vec::new();
    for (name, text) in files {
        let path = dir.join(&name);
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
