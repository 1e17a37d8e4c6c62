//! Run configuration: one flat `key = value` file, overridable key by key.
//!
//! ```text
//! # comments start with '#'
//! run_dir = runs/demo
//! seed = 7
//! k = 4
//! sweep_k = 0,1,2,3,4
//! ```
//!
//! [`RunConfig::documented`] renders every key with its default and a short
//! description.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::embeddings::SkipgramConfig;
use crate::error::{Error, Result};
use crate::eval::SliceConfig;
use crate::models::{SamplingConfig, Summary};
use crate::neural::{StopCriterion, TrainConfig};
use crate::syngen::SynSpec;

/// Conversion between a config value and its text form.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! parse_via_fromstr {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|_| format!("cannot parse {s:?}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

parse_via_fromstr!(u64, usize, f64, bool);

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s.is_empty() {
            return Err("empty path".into());
        }
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for Option<f64> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            f64::parse_value(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.map_or_else(|| "none".into(), |v| v.to_string())
    }
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(|p| T::parse_value(p.trim())).collect()
    }
    fn render(&self) -> String {
        self.iter()
            .map(ConfigValue::render)
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl ConfigValue for Summary {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|e: Error| e.to_string())
    }
    fn render(&self) -> String {
        match self {
            Summary::Mean => "mean",
            Summary::Median => "median",
            Summary::Max => "max",
        }
        .into()
    }
}

impl ConfigValue for StopCriterion {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dev-loss" => Ok(StopCriterion::DevLoss),
            "dev-micro-f1" => Ok(StopCriterion::DevMicroF1),
            _ => Err(format!("unknown stopping criterion {s:?}")),
        }
    }
    fn render(&self) -> String {
        match self {
            StopCriterion::DevLoss => "dev-loss",
            StopCriterion::DevMicroF1 => "dev-micro-f1",
        }
        .into()
    }
}

macro_rules! run_config {
    ($($name:ident : $ty:ty = $default:expr, $doc:literal;)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $(#[doc = $doc] pub $name: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($name: $default,)* }
            }
        }

        impl RunConfig {
            /// Sets one key from its text form.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key.trim() {
                    $(stringify!($name) => {
                        self.$name = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| Error::invalid(format!("config key {key}: {e}")))?;
                    })*
                    other => return Err(Error::invalid(format!("unknown config key {other:?}"))),
                }
                Ok(())
            }

            /// Every key with its current value, in declaration order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$((stringify!($name), self.$name.render()),)*]
            }

            /// Every key with its default and description, as a config file.
            pub fn documented() -> String {
                let d = RunConfig::default();
                let mut out = String::new();
                $(
                    out.push_str(&format!("# {}\n{} = {}\n", $doc, stringify!($name), d.$name.render()));
                )*
                out
            }
        }
    };
}

run_config! {
    run_dir: PathBuf = PathBuf::from("run"), "Directory receiving all artifacts.";
    corpus: PathBuf = PathBuf::from("data/corpus.jsonl"), "Annotated corpus, JSONL.";
    entity_file: PathBuf = PathBuf::from("data/entities.tsv"), "Entity file: entity, notable type, comma-separated types.";
    type_file: PathBuf = PathBuf::from("data/types.txt"), "Type inventory, one type per line.";
    seed: u64 = 1, "Seed for every random stream.";
    deterministic: bool = true, "Single-threaded embedding training and fixed-order reductions.";
    workers: usize = 1, "Embedding training threads when not deterministic.";
    split_train: f64 = 0.5, "Share of entities in train.";
    split_dev: f64 = 0.2, "Share of entities in dev.";
    split_test: f64 = 0.3, "Share of entities in test.";
    gm_emb_dim: usize = 200, "Entity embedding dimension.";
    cm_emb_dim: usize = 100, "Word and type embedding dimension.";
    emb_window: usize = 5, "Skipgram window.";
    emb_negatives: usize = 5, "Negative samples per pair.";
    emb_epochs: usize = 5, "Skipgram passes over the corpus.";
    emb_min_count: u64 = 5, "Minimum token frequency for an embedding.";
    emb_learning_rate: f64 = 0.025, "Initial skipgram learning rate.";
    emb_subsample: Option<f64> = None, "Frequent-token subsampling threshold, or none.";
    k: usize = 4, "Positional context width per side.";
    l: usize = 5, "Averaged context width per side.";
    h_gm: usize = 200, "Hidden units of the global model.";
    h_cm: usize = 300, "Hidden units of the context model.";
    cm_summary: Summary = Summary::Mean, "Per-entity summary of context scores: mean, median or max.";
    gm_learning_rate: f64 = 0.1, "Global model AdaGrad learning rate.";
    gm_adagrad_epsilon: f64 = 1e-8, "Global model AdaGrad epsilon.";
    gm_batch_size: usize = 128, "Global model minibatch size.";
    gm_max_epochs: usize = 50, "Global model epoch limit.";
    gm_patience: usize = 3, "Global model early-stopping patience.";
    gm_stop_on: StopCriterion = StopCriterion::DevLoss, "Global model stopping criterion: dev-loss or dev-micro-f1.";
    cm_learning_rate: f64 = 0.1, "Context model AdaGrad learning rate.";
    cm_adagrad_epsilon: f64 = 1e-8, "Context model AdaGrad epsilon.";
    cm_batch_size: usize = 128, "Context model minibatch size.";
    cm_max_epochs: usize = 50, "Context model epoch limit.";
    cm_patience: usize = 3, "Context model early-stopping patience.";
    cm_stop_on: StopCriterion = StopCriterion::DevLoss, "Context model stopping criterion: dev-loss or dev-micro-f1.";
    min_per_type: usize = 10_000, "Training contexts kept per type when the pool is larger.";
    max_per_type: usize = 20_000, "Cap on training contexts per type.";
    dev_contexts_per_entity: usize = 200, "Contexts sampled per dev entity.";
    test_contexts_per_entity: usize = 300, "Contexts sampled per test entity.";
    head_entity_min: usize = 100, "Head entities have more mentions than this.";
    tail_entity_max: usize = 5, "Tail entities have fewer mentions than this.";
    head_type_min: usize = 3000, "Head types have more training entities than this.";
    tail_type_max: usize = 200, "Tail types have fewer training entities than this.";
    sweep_k: Vec<usize> = vec![0, 1, 2, 3, 4], "Context widths tried by sweep-context.";
    syn_num_types: usize = 8, "Synthetic: number of types.";
    syn_entities_per_type: usize = 200, "Synthetic: entities per notable type.";
    syn_types_per_entity: Vec<f64> = vec![0.4, 0.4, 0.2], "Synthetic: probabilities of 1, 2, ... types per entity.";
    syn_vocab_per_type: usize = 50, "Synthetic: words per type vocabulary.";
    syn_background_vocab: usize = 200, "Synthetic: background words.";
    syn_informativeness: f64 = 0.7, "Synthetic: probability a context carries type signal.";
    syn_mentions_per_entity: f64 = 50.0, "Synthetic: mean mentions per entity.";
    syn_sentence_length: usize = 12, "Synthetic: tokens per sentence.";
    syn_vocab_overlap: f64 = 0.0, "Synthetic: vocabulary shared between neighbouring types.";
    syn_positional: bool = false, "Synthetic: word order around the mention separates paired types.";
}

const PATH_KEYS: [&str; 4] = ["run_dir", "corpus", "entity_file", "type_file"];

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected `key = value`"))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::parse(origin, i + 1, format!("duplicate key {key}")));
            }
            cfg.set(key, value)
                .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_file_string(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let ratios = [self.split_train, self.split_dev, self.split_test];
        if ratios.iter().any(|&r| !(r > 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("split ratios must be positive and sum to 1"));
        }
        let positive = [
            ("workers", self.workers),
            ("gm_emb_dim", self.gm_emb_dim),
            ("cm_emb_dim", self.cm_emb_dim),
            ("emb_window", self.emb_window),
            ("emb_epochs", self.emb_epochs),
            ("h_gm", self.h_gm),
            ("h_cm", self.h_cm),
            ("gm_batch_size", self.gm_batch_size),
            ("cm_batch_size", self.cm_batch_size),
            ("gm_max_epochs", self.gm_max_epochs),
            ("cm_max_epochs", self.cm_max_epochs),
            ("dev_contexts_per_entity", self.dev_contexts_per_entity),
            ("test_contexts_per_entity", self.test_contexts_per_entity),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.min_per_type > self.max_per_type {
            return Err(Error::invalid("min_per_type exceeds max_per_type"));
        }
        if self.sweep_k.is_empty() {
            return Err(Error::invalid("sweep_k must list at least one width"));
        }
        if !(self.emb_learning_rate > 0.0) {
            return Err(Error::invalid("emb_learning_rate must be positive"));
        }
        self.train_config(false).validate()?;
        self.train_config(true).validate()
    }

    /// Window built into the context datasets: wide enough for `k`, `l` and
    /// every sweep width.
    pub fn built_k(&self) -> usize {
        self.sweep_k
            .iter()
            .copied()
            .chain([self.k])
            .max()
            .unwrap_or(self.k)
    }

    /// Parameters that determine artifacts: everything except paths.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.entries()
            .into_iter()
            .filter(|(k, _)| !PATH_KEYS.contains(k))
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    /// SHA-256 over every key except `run_dir`, in canonical form.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "run_dir" {
                h.update(format!("{k}={v}\n"));
            }
        }
        hex::encode(h.finalize())
    }

    fn emb_workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.workers
        }
    }

    pub fn skipgram_config(&self, entities: bool, seed: u64) -> SkipgramConfig {
        SkipgramConfig {
            dim: if entities {
                self.gm_emb_dim
            } else {
                self.cm_emb_dim
            },
            window: self.emb_window,
            negatives: self.emb_negatives,
            epochs: self.emb_epochs,
            min_count: self.emb_min_count,
            learning_rate: self.emb_learning_rate as f32,
            subsample: self.emb_subsample,
            seed,
            workers: self.emb_workers(),
        }
    }

    /// Training settings of the context model (`cm = true`) or the global
    /// model.
    pub fn train_config(&self, cm: bool) -> TrainConfig {
        if cm {
            TrainConfig {
                learning_rate: self.cm_learning_rate,
                adagrad_epsilon: self.cm_adagrad_epsilon,
                batch_size: self.cm_batch_size,
                max_epochs: self.cm_max_epochs,
                patience: self.cm_patience,
                seed: self.seed,
                stop_on: self.cm_stop_on,
            }
        } else {
            TrainConfig {
                learning_rate: self.gm_learning_rate,
                adagrad_epsilon: self.gm_adagrad_epsilon,
                batch_size: self.gm_batch_size,
                max_epochs: self.gm_max_epochs,
                patience: self.gm_patience,
                seed: self.seed,
                stop_on: self.gm_stop_on,
            }
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            min_per_type: self.min_per_type,
            max_per_type: self.max_per_type,
        }
    }

    pub fn slices(&self) -> SliceConfig {
        SliceConfig {
            head_entity_min: self.head_entity_min,
            tail_entity_max: self.tail_entity_max,
            head_type_min: self.head_type_min,
            tail_type_max: self.tail_type_max,
        }
    }

    pub fn syn_spec(&self) -> SynSpec {
        SynSpec {
            num_types: self.syn_num_types,
            entities_per_type: self.syn_entities_per_type,
            types_per_entity: self.syn_types_per_entity.clone(),
            vocab_per_type: self.syn_vocab_per_type,
            background_vocab: self.syn_background_vocab,
            informativeness: self.syn_informativeness,
            mentions_per_entity: self.syn_mentions_per_entity,
            sentence_length: self.syn_sentence_length,
            vocab_overlap: self.syn_vocab_overlap,
            positional: self.syn_positional,
            type_names: None,
            seed: self.seed,
        }
    }
}
