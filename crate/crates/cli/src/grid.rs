//! Grid cells, their ids and cache fingerprints.
//!
//! The grid varies one axis at a time around a base setting (deepest model,
//! base variant, full data): every target gets the base model, every variant
//! is trained at base depth, every depth with the base variant, and every
//! ablation size with the base architecture.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::cache::fingerprint;
use crate::config::{ExperimentConfig, Task, Variant};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NmtCell {
    pub target: String,
    pub depth: usize,
    pub variant: Variant,
    /// Training sentences for the ablation; `None` is the full set.
    pub size: Option<usize>,
    pub seed: u64,
    /// `false` for the randomly initialized control model.
    pub trained: bool,
}

impl NmtCell {
    pub fn id(&self) -> String {
        let size = self.size.map_or("full".to_string(), |n| format!("n{n}"));
        let kind = if self.trained { "nmt" } else { "untrained" };
        format!(
            "{kind}.{}.L{}.{}.{size}.s{}",
            self.target,
            self.depth,
            self.variant.name(),
            self.seed
        )
    }

    pub fn fingerprint(&self, cfg: &ExperimentConfig, data_fp: &str) -> String {
        let model = cfg.nmt.model_config(self.depth, self.variant, self.seed);
        fingerprint(&("nmt", data_fp, self, &model))
    }
}

/// Where probe features come from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum FeatureSource {
    Nmt(NmtCell),
    /// Skip-gram embeddings trained with this seed.
    UnsupEmb(u64),
}

impl FeatureSource {
    pub fn id(&self) -> String {
        match self {
            FeatureSource::Nmt(c) => c.id(),
            FeatureSource::UnsupEmb(seed) => format!("unsup-emb.s{seed}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ProbeCell {
    pub source: FeatureSource,
    pub task: Task,
    pub layer: usize,
}

impl ProbeCell {
    pub fn id(&self) -> String {
        format!("probe.{}.{}.k{}", self.source.id(), self.task.name(), self.layer)
    }

    pub fn seed(&self) -> u64 {
        match &self.source {
            FeatureSource::Nmt(c) => c.seed,
            FeatureSource::UnsupEmb(s) => *s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum BaselineCell {
    Mft(Task),
    Word2Tag { task: Task, seed: u64 },
}

impl BaselineCell {
    pub fn id(&self) -> String {
        match self {
            BaselineCell::Mft(t) => format!("mft.{}", t.name()),
            BaselineCell::Word2Tag { task, seed } => format!("word2tag.{}.s{seed}", task.name()),
        }
    }

    pub fn task(&self) -> Task {
        match self {
            BaselineCell::Mft(t) => *t,
            BaselineCell::Word2Tag { task, .. } => *task,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Grid {
    pub nmt: Vec<NmtCell>,
    pub embeddings: Vec<u64>,
    pub probes: Vec<ProbeCell>,
    pub baselines: Vec<BaselineCell>,
}

impl Grid {
    pub fn plan(cfg: &ExperimentConfig) -> Grid {
        let n = &cfg.nmt;
        let depth = n.max_depth();
        let base = n.base_variant();
        let targets = cfg.targets();
        let mut nmt = BTreeSet::new();
        for &seed in &cfg.run.seeds {
            for t in &targets {
                let cell = |depth, variant, size| NmtCell {
                    target: t.clone(),
                    depth,
                    variant,
                    size,
                    seed,
                    trained: true,
                };
                nmt.insert(cell(depth, base, None));
                for &v in &n.variants {
                    nmt.insert(cell(depth, v, None));
                }
                for &d in &n.depths {
                    nmt.insert(cell(d, base, None));
                }
                for &s in &n.data_sizes {
                    nmt.insert(cell(depth, base, Some(s)));
                }
            }
            if n.untrained_control {
                nmt.insert(NmtCell {
                    target: control_target(cfg),
                    depth,
                    variant: base,
                    size: None,
                    seed,
                    trained: false,
                });
            }
        }
        let nmt: Vec<NmtCell> = nmt.into_iter().collect();

        let mut probes = Vec::new();
        for c in &nmt {
            for &task in &cfg.probe.tasks {
                for layer in cfg.probe.layers_for(c.depth) {
                    probes.push(ProbeCell {
                        source: FeatureSource::Nmt(c.clone()),
                        task,
                        layer,
                    });
                }
            }
        }
        let b = &cfg.baselines;
        let embeddings = if b.unsup_emb { cfg.run.seeds.clone() } else { Vec::new() };
        for &seed in &embeddings {
            for &task in &cfg.probe.tasks {
                probes.push(ProbeCell {
                    source: FeatureSource::UnsupEmb(seed),
                    task,
                    layer: 0,
                });
            }
        }
        let mut baselines = Vec::new();
        for &task in &cfg.probe.tasks {
            if b.mft {
                baselines.push(BaselineCell::Mft(task));
            }
            if b.word2tag {
                for &seed in &cfg.run.seeds {
                    baselines.push(BaselineCell::Word2Tag { task, seed });
                }
            }
        }
        Grid {
            nmt,
            embeddings,
            probes,
            baselines,
        }
    }

    pub fn probe_count(&self) -> usize {
        self.probes.len()
    }
}

/// The control model shares the vocabulary of the first translation target.
pub fn control_target(cfg: &ExperimentConfig) -> String {
    let targets = cfg.targets();
    targets
        .iter()
        .find(|t| !cfg.is_autoencoder(t))
        .unwrap_or(&targets[0])
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(&format!(
            "[data]\nkind = \"synthetic\"\n\n[nmt]\ntargets = [\"context-reverse\", \"reverse\", \"copy\"]\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn one_axis_at_a_time() {
        let c = cfg("depths = [2, 3, 4]\nvariants = [\"uni\", \"bi\", \"res\"]\ndata_sizes = [100]\n");
        let g = Grid::plan(&c);
        // per target: base, bi, res, L2, L3, n100
        assert_eq!(g.nmt.len(), 3 * 6);
        assert!(g
            .nmt
            .iter()
            .all(|n| n.depth == 4 || (n.variant == Variant::Uni && n.size.is_none())));
    }

    #[test]
    fn probe_cells_cover_every_layer() {
        let c = cfg("depths = [2]\n[probe]\ntasks = [\"pos\", \"sem\"]\n");
        let g = Grid::plan(&c);
        assert_eq!(g.nmt.len(), 3);
        // 3 models x 2 tasks x 3 layers, plus unsup-emb for 2 tasks
        assert_eq!(g.probe_count(), 3 * 2 * 3 + 2);
        assert_eq!(g.baselines.len(), 2 * 2);
    }

    #[test]
    fn control_uses_first_translation_target() {
        let c = cfg("depths = [2]\nuntrained_control = true\n");
        let g = Grid::plan(&c);
        let ctl: Vec<_> = g.nmt.iter().filter(|n| !n.trained).collect();
        assert_eq!(ctl.len(), 1);
        assert_eq!(ctl[0].target, "context-reverse");
        assert_eq!(ctl[0].id(), "untrained.context-reverse.L2.uni.full.s1");
    }

    proptest! {
        #[test]
        fn ids_and_fingerprints_are_unique(
            depths in prop::collection::btree_set(1usize..5, 1..4),
            sizes in prop::collection::btree_set(1usize..500, 0..3),
            seeds in prop::collection::btree_set(0u64..5, 1..3),
        ) {
            let d: Vec<String> = depths.iter().map(|x| x.to_string()).collect();
            let s: Vec<String> = sizes.iter().map(|x| x.to_string()).collect();
            let se: Vec<String> = seeds.iter().map(|x| x.to_string()).collect();
            let c = cfg(&format!(
                "depths = [{}]\nvariants = [\"uni\", \"bi-res\"]\nembed_dim = 8\nhidden_dim = 8\ndata_sizes = [{}]\nuntrained_control = true\n[run]\nseeds = [{}]\n",
                d.join(","), s.join(","), se.join(",")
            ));
            let g = Grid::plan(&c);
            let ids: BTreeSet<String> = g.nmt.iter().map(NmtCell::id).collect();
            prop_assert_eq!(ids.len(), g.nmt.len());
            let fps: BTreeSet<String> = g.nmt.iter().map(|n| n.fingerprint(&c, "d")).collect();
            prop_assert_eq!(fps.len(), g.nmt.len());
            let pids: BTreeSet<String> = g.probes.iter().map(ProbeCell::id).collect();
            prop_assert_eq!(pids.len(), g.probes.len());
            // Same settings, same fingerprint.
            let again = Grid::plan(&c);
            prop_assert_eq!(
                g.nmt.iter().map(|n| n.fingerprint(&c, "d")).collect::<Vec<_>>(),
                again.nmt.iter().map(|n| n.fingerprint(&c, "d")).collect::<Vec<_>>()
            );
        }
    }
}
