//! Pipeline stages over a run directory.
//!
//! ```text
//! <run_dir>/
//!   manifest.json
//!   datasets/  corpus.jsonl split.tsv entity_stream.txt type_stream.txt
//!              train.jsonl dev.jsonl test.jsonl sampling.tsv
//!   embeddings/ entities.txt words.txt
//!   models/    gm.json cm.json gm.history.tsv cm.history.tsv
//!   scores/    {gm,cm,jm,mft}.{dev,test}.tsv
//!   reports/   {gm,cm,jm,mft}.json sweep.tsv
//! ```
//!
//! Each stage checks that its inputs exist, writes its outputs atomically and
//! records input and output hashes in the manifest. A run directory is tied
//! to one configuration hash.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::corpus::{self, AnnotatedCorpus, RewriteMode};
use crate::embeddings::{train_skipgram, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::kb::{load_kb, KnowledgeBase, Split};
use crate::models::{self, DistantExample, Provenance, SavedModel, ScoreMatrix};
use crate::neural::{self, LabeledExample, TrainOutcome};
use crate::syngen;
use crate::util;

pub const MANIFEST_VERSION: u32 = 1;

/// Artifact paths inside a run directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("datasets/corpus.jsonl")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("datasets/split.tsv")
    }

    pub fn entity_stream(&self) -> PathBuf {
        self.root.join("datasets/entity_stream.txt")
    }

    pub fn type_stream(&self) -> PathBuf {
        self.root.join("datasets/type_stream.txt")
    }

    pub fn examples(&self, split: Split) -> PathBuf {
        self.root.join(format!("datasets/{split}.jsonl"))
    }

    pub fn sampling_report(&self) -> PathBuf {
        self.root.join("datasets/sampling.tsv")
    }

    pub fn entity_embeddings(&self) -> PathBuf {
        self.root.join("embeddings/entities.txt")
    }

    pub fn word_embeddings(&self) -> PathBuf {
        self.root.join("embeddings/words.txt")
    }

    pub fn model(&self, model: Provenance) -> PathBuf {
        self.root.join(format!("models/{model}.json"))
    }

    pub fn history(&self, model: Provenance) -> PathBuf {
        self.root.join(format!("models/{model}.history.tsv"))
    }

    pub fn scores(&self, model: Provenance, split: Split) -> PathBuf {
        self.root.join(format!("scores/{model}.{split}.tsv"))
    }

    pub fn report(&self, model: Provenance) -> PathBuf {
        self.root.join(format!("reports/{model}.json"))
    }

    pub fn sweep(&self) -> PathBuf {
        self.root.join("reports/sweep.tsv")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Path to SHA-256 of contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(h.finalize()))
}

/// One row of the context-width sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub micro_f1: f64,
    pub precision_at_1: f64,
}

pub struct Pipeline {
    cfg: RunConfig,
    layout: Layout,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(&cfg.run_dir);
        Ok(Pipeline { cfg, layout })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn manifest(&self) -> Result<Manifest> {
        let path = self.layout.manifest();
        let current = self.cfg.hash();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let m: Manifest = serde_json::from_str(&text)?;
            if m.config_hash != current {
                return Err(Error::ConfigMismatch {
                    manifest: path,
                    stored: m.config_hash,
                    current,
                });
            }
            Ok(m)
        } else {
            Ok(Manifest {
                schema_version: MANIFEST_VERSION,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: current,
                config: self.cfg.echo(),
                stages: BTreeMap::new(),
            })
        }
    }

    /// Fails early, before any work, if the run directory belongs to another
    /// configuration.
    fn begin(&self, stage: &str) -> Result<()> {
        self.manifest()?;
        log::info!("stage {stage}");
        Ok(())
    }

    fn record(&self, stage: &str, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
        let mut m = self.manifest()?;
        let mut rec = StageRecord::default();
        for p in inputs {
            rec.inputs.insert(self.display(p), file_sha256(p)?);
        }
        for p in outputs {
            rec.outputs.insert(self.display(p), file_sha256(p)?);
        }
        m.stages.insert(stage.to_string(), rec);
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        util::write_atomic(&self.layout.manifest(), text.as_bytes())
    }

    fn display(&self, p: &Path) -> String {
        p.strip_prefix(self.layout.root())
            .unwrap_or(p)
            .display()
            .to_string()
    }

    fn require(&self, path: &Path, hint: &str) -> Result<()> {
        if path.is_file() {
            Ok(())
        } else {
            Err(Error::MissingArtifact {
                path: path.to_path_buf(),
                hint: hint.to_string(),
            })
        }
    }

    fn require_kb(&self) -> Result<()> {
        self.require(&self.cfg.entity_file, "entity file from the config")?;
        self.require(&self.cfg.type_file, "type file from the config")
    }

    fn kb(&self) -> Result<KnowledgeBase> {
        self.require_kb()?;
        load_kb(&self.cfg.entity_file, &self.cfg.type_file)
    }

    fn split_kb(&self) -> Result<KnowledgeBase> {
        self.require(&self.layout.split(), "run the split stage first")?;
        self.kb()?.load_split(&self.layout.split())
    }

    fn kb_inputs(&self) -> Vec<PathBuf> {
        vec![
            self.cfg.entity_file.clone(),
            self.cfg.type_file.clone(),
            self.layout.split(),
        ]
    }

    /// Writes a synthetic corpus and knowledge base to the configured input
    /// paths.
    pub fn generate_synthetic(&self) -> Result<()> {
        self.begin("generate-synthetic")?;
        let (corpus, kb) = syngen::generate(self.cfg.syn_spec())?;
        corpus.save(&self.cfg.corpus)?;
        kb.save(&self.cfg.entity_file, &self.cfg.type_file)?;
        log::info!(
            "generated {} sentences for {} entities",
            corpus.sentences.len(),
            kb.num_entities()
        );
        self.record(
            "generate-synthetic",
            &[],
            &[
                self.cfg.corpus.clone(),
                self.cfg.entity_file.clone(),
                self.cfg.type_file.clone(),
            ],
        )
    }

    pub fn preprocess(&self) -> Result<()> {
        self.begin("preprocess")?;
        self.require(&self.cfg.corpus, "annotated corpus from the config")?;
        let raw = AnnotatedCorpus::load(&self.cfg.corpus)?;
        let before = raw.sentences.len();
        let kept: Vec<_> = raw
            .sentences
            .iter()
            .filter_map(corpus::normalize_sentence)
            .collect();
        log::info!("preprocess kept {} of {before} sentences", kept.len());
        AnnotatedCorpus::new(kept).save(&self.layout.corpus())?;
        self.record(
            "preprocess",
            &[self.cfg.corpus.clone()],
            &[self.layout.corpus()],
        )
    }

    pub fn split(&self) -> Result<()> {
        self.begin("split")?;
        let kb = self.kb()?;
        let ratios = (
            self.cfg.split_train,
            self.cfg.split_dev,
            self.cfg.split_test,
        );
        let kb = kb.split_entities(ratios, util::sub_seed(self.cfg.seed, "split"))?;
        if let Some((mean, median)) = kb.types_per_entity(Split::Train) {
            log::info!("types per train entity: mean {mean:.3}, median {median}");
        }
        kb.save_split(&self.layout.split())?;
        self.record(
            "split",
            &[self.cfg.entity_file.clone(), self.cfg.type_file.clone()],
            &[self.layout.split()],
        )
    }

    fn preprocessed_corpus(&self) -> Result<AnnotatedCorpus> {
        self.require(&self.layout.corpus(), "run the preprocess stage first")?;
        AnnotatedCorpus::load(&self.layout.corpus())
    }

    pub fn rewrite(&self) -> Result<()> {
        self.begin("rewrite")?;
        let corpus = self.preprocessed_corpus()?;
        let kb = self.split_kb()?;
        let entity_stream =
            corpus::rewrite_corpus(&corpus, &kb, RewriteMode::EntityId, &HashSet::new());
        let test: HashSet<String> = kb
            .entities_in(Split::Test)
            .into_iter()
            .map(str::to_string)
            .collect();
        let type_stream = corpus::rewrite_corpus(&corpus, &kb, RewriteMode::NotableType, &test);
        log::info!(
            "rewrite: {} entity-id lines, {} notable-type lines",
            entity_stream.len(),
            type_stream.len()
        );
        util::write_atomic(
            &self.layout.entity_stream(),
            corpus::token_stream_to_string(&entity_stream).as_bytes(),
        )?;
        util::write_atomic(
            &self.layout.type_stream(),
            corpus::token_stream_to_string(&type_stream).as_bytes(),
        )?;
        let mut inputs = self.kb_inputs();
        inputs.push(self.layout.corpus());
        self.record(
            "rewrite",
            &inputs,
            &[self.layout.entity_stream(), self.layout.type_stream()],
        )
    }

    pub fn embed(&self) -> Result<()> {
        self.begin("embed")?;
        for (stream, out, entities) in [
            (
                self.layout.entity_stream(),
                self.layout.entity_embeddings(),
                true,
            ),
            (
                self.layout.type_stream(),
                self.layout.word_embeddings(),
                false,
            ),
        ] {
            self.require(&stream, "run the rewrite stage first")?;
            let sentences = corpus::load_token_stream(&stream)?;
            let name = if entities {
                "emb-entities"
            } else {
                "emb-words"
            };
            let cfg = self
                .cfg
                .skipgram_config(entities, util::sub_seed(self.cfg.seed, name));
            let table = train_skipgram(&sentences, &cfg)?;
            log::info!("{name}: {} vectors of dim {}", table.len(), table.dim());
            table.save(&out)?;
        }
        self.record(
            "embed",
            &[self.layout.entity_stream(), self.layout.type_stream()],
            &[
                self.layout.entity_embeddings(),
                self.layout.word_embeddings(),
            ],
        )
    }

    pub fn build_dataset(&self) -> Result<()> {
        self.begin("build-dataset")?;
        let corpus = self.preprocessed_corpus()?;
        let kb = self.split_kb()?;
        let k = self.cfg.built_k();
        let mut outputs = Vec::new();
        for split in Split::ALL {
            let entities: BTreeSet<String> = kb
                .entities_in(split)
                .into_iter()
                .map(str::to_string)
                .collect();
            let all = models::build_distant_dataset(&corpus, &kb, &entities, k, self.cfg.l)?;
            let seed = util::sub_seed(self.cfg.seed, &format!("sample-{split}"));
            let sampled = match split {
                Split::Train => {
                    let (sampled, report) =
                        models::sample_train_contexts(&all, &kb, self.cfg.sampling(), seed)?;
                    let mut tsv = String::from("type\ttrain_entities\tpool\tquota\tkept\n");
                    for r in &report {
                        writeln!(
                            tsv,
                            "{}\t{}\t{}\t{}\t{}",
                            r.type_name, r.train_entities, r.pool, r.quota, r.kept
                        )
                        .expect("string write");
                    }
                    util::write_atomic(&self.layout.sampling_report(), tsv.as_bytes())?;
                    outputs.push(self.layout.sampling_report());
                    sampled
                }
                Split::Dev => {
                    models::sample_eval_contexts(&all, self.cfg.dev_contexts_per_entity, seed)
                }
                Split::Test => {
                    models::sample_eval_contexts(&all, self.cfg.test_contexts_per_entity, seed)
                }
            };
            log::info!("{split}: {} of {} contexts", sampled.len(), all.len());
            util::write_atomic(
                &self.layout.examples(split),
                models::examples_to_jsonl(&sampled).as_bytes(),
            )?;
            outputs.push(self.layout.examples(split));
        }
        let mut inputs = self.kb_inputs();
        inputs.push(self.layout.corpus());
        self.record("build-dataset", &inputs, &outputs)
    }

    fn entity_table(&self) -> Result<EmbeddingTable> {
        self.require(
            &self.layout.entity_embeddings(),
            "run the embed stage first",
        )?;
        EmbeddingTable::load(&self.layout.entity_embeddings())
    }

    fn word_table(&self) -> Result<EmbeddingTable> {
        self.require(&self.layout.word_embeddings(), "run the embed stage first")?;
        EmbeddingTable::load(&self.layout.word_embeddings())
    }

    fn examples(&self, split: Split) -> Result<Vec<DistantExample>> {
        let path = self.layout.examples(split);
        self.require(&path, "run the build-dataset stage first")?;
        models::load_examples(&path)
    }

    fn featurize(
        &self,
        examples: &[DistantExample],
        table: &EmbeddingTable,
        k: usize,
        num_types: usize,
    ) -> Result<Vec<LabeledExample>> {
        examples
            .iter()
            .map(|e| e.to_labeled(table, k, self.cfg.l, num_types))
            .collect()
    }

    fn train_cm_at(
        &self,
        kb: &KnowledgeBase,
        table: &EmbeddingTable,
        k: usize,
    ) -> Result<TrainOutcome> {
        let built = self.cfg.built_k();
        if k > built {
            return Err(Error::invalid(format!(
                "context width {k} exceeds the built window {built}; rebuild the dataset"
            )));
        }
        let t = kb.types().len();
        let train = self.featurize(&self.examples(Split::Train)?, table, k, t)?;
        let dev = self.featurize(&self.examples(Split::Dev)?, table, k, t)?;
        if train.is_empty() || dev.is_empty() {
            return Err(Error::invalid("context model needs train and dev contexts"));
        }
        neural::train(&train, &dev, self.cfg.h_cm, &self.cfg.train_config(true))
    }

    pub fn train(&self, model: Provenance) -> Result<()> {
        let stage = format!("train-{model}");
        self.begin(&stage)?;
        let kb = self.split_kb()?;
        let (outcome, k, l, inputs) = match model {
            Provenance::Gm => {
                let table = self.entity_table()?;
                let train = models::gm_examples(&table, &kb, &kb.entities_in(Split::Train));
                let dev = models::gm_examples(&table, &kb, &kb.entities_in(Split::Dev));
                if train.is_empty() || dev.is_empty() {
                    return Err(Error::invalid(
                        "global model needs embedded train and dev entities",
                    ));
                }
                let outcome =
                    neural::train(&train, &dev, self.cfg.h_gm, &self.cfg.train_config(false))?;
                (outcome, 0, 0, vec![self.layout.entity_embeddings()])
            }
            Provenance::Cm => {
                let table = self.word_table()?;
                let outcome = self.train_cm_at(&kb, &table, self.cfg.k)?;
                let inputs = vec![
                    self.layout.word_embeddings(),
                    self.layout.examples(Split::Train),
                    self.layout.examples(Split::Dev),
                ];
                (outcome, self.cfg.k, self.cfg.l, inputs)
            }
            Provenance::Jm | Provenance::Mft => {
                return Err(Error::invalid(format!(
                    "{model} has no trainable parameters"
                )));
            }
        };
        log::info!(
            "{model}: best epoch {} of {}",
            outcome.best_epoch,
            outcome.history.len() - 1
        );
        let saved = SavedModel {
            model,
            types: kb.types().names().to_vec(),
            k,
            l,
            best_epoch: outcome.best_epoch,
            mlp: outcome.mlp.to_checkpoint(),
        };
        saved.save(&self.layout.model(model))?;
        let mut hist = String::from("epoch\ttrain_loss\tdev_loss\tdev_micro_f1\n");
        for h in &outcome.history {
            writeln!(
                hist,
                "{}\t{}\t{}\t{}",
                h.epoch, h.train_loss, h.dev_loss, h.dev_micro_f1
            )
            .expect("string write");
        }
        util::write_atomic(&self.layout.history(model), hist.as_bytes())?;
        let mut all_inputs = self.kb_inputs();
        all_inputs.extend(inputs);
        self.record(
            &stage,
            &all_inputs,
            &[self.layout.model(model), self.layout.history(model)],
        )
    }

    fn saved_model(&self, model: Provenance, kb: &KnowledgeBase) -> Result<SavedModel> {
        let path = self.layout.model(model);
        self.require(&path, &format!("run `train {model}` first"))?;
        let saved = SavedModel::load(&path)?;
        if saved.model != model || saved.types != kb.types().names() {
            return Err(Error::invalid(format!(
                "{} does not hold a {model} model for this type inventory",
                path.display()
            )));
        }
        Ok(saved)
    }

    fn load_scores(
        &self,
        model: Provenance,
        split: Split,
        kb: &KnowledgeBase,
    ) -> Result<ScoreMatrix> {
        let path = self.layout.scores(model, split);
        self.require(&path, &format!("run `score {model}` first"))?;
        ScoreMatrix::load(&path, model, kb.types().names(), &kb.entities_in(split))
    }

    pub fn score(&self, model: Provenance) -> Result<()> {
        let stage = format!("score-{model}");
        self.begin(&stage)?;
        let kb = self.split_kb()?;
        let types = kb.types().names().to_vec();
        let mut inputs = self.kb_inputs();
        let mut outputs = Vec::new();
        let mut matrices = Vec::new();
        match model {
            Provenance::Gm => {
                let saved = self.saved_model(model, &kb)?;
                let mlp = saved.network()?;
                let table = self.entity_table()?;
                for split in [Split::Dev, Split::Test] {
                    matrices.push((
                        split,
                        models::score_gm(&table, &mlp, &types, &kb.entities_in(split))?,
                    ));
                }
                inputs.extend([self.layout.model(model), self.layout.entity_embeddings()]);
            }
            Provenance::Cm => {
                let saved = self.saved_model(model, &kb)?;
                let mlp = saved.network()?;
                let table = self.word_table()?;
                for split in [Split::Dev, Split::Test] {
                    let examples = self.examples(split)?;
                    let m = models::score_cm(
                        &mlp,
                        &table,
                        &examples,
                        &kb.entities_in(split),
                        saved.k,
                        saved.l,
                        &types,
                        self.cfg.cm_summary,
                    )?;
                    matrices.push((split, m));
                    inputs.push(self.layout.examples(split));
                }
                inputs.extend([self.layout.model(model), self.layout.word_embeddings()]);
            }
            Provenance::Jm => {
                for split in [Split::Dev, Split::Test] {
                    let gm = self.load_scores(Provenance::Gm, split, &kb)?;
                    let cm = self.load_scores(Provenance::Cm, split, &kb)?;
                    matrices.push((split, models::score_jm(&gm, &cm)?));
                    inputs.extend([
                        self.layout.scores(Provenance::Gm, split),
                        self.layout.scores(Provenance::Cm, split),
                    ]);
                }
            }
            Provenance::Mft => {
                for split in [Split::Dev, Split::Test] {
                    matrices.push((split, models::score_mft(&kb, &kb.entities_in(split))?));
                }
            }
        }
        for (split, m) in matrices {
            let unscored = m.unscored_entities();
            if !unscored.is_empty() {
                log::warn!(
                    "{model} {split}: {} entities could not be scored",
                    unscored.len()
                );
            }
            let path = self.layout.scores(model, split);
            m.save(&path)?;
            outputs.push(path);
        }
        self.record(&stage, &inputs, &outputs)
    }

    fn evaluate_matrices(
        &self,
        kb: &KnowledgeBase,
        dev: &ScoreMatrix,
        test: &ScoreMatrix,
    ) -> Result<EvalReport> {
        let counts = self.preprocessed_corpus()?.mention_counts();
        eval::evaluate(dev, test, kb, &counts, self.cfg.slices(), self.cfg.echo())
    }

    pub fn evaluate(&self, model: Provenance) -> Result<EvalReport> {
        let stage = format!("evaluate-{model}");
        self.begin(&stage)?;
        let kb = self.split_kb()?;
        let dev = self.load_scores(model, Split::Dev, &kb)?;
        let test = self.load_scores(model, Split::Test, &kb)?;
        let report = self.evaluate_matrices(&kb, &dev, &test)?;
        util::write_atomic(&self.layout.report(model), report.to_json().as_bytes())?;
        log::info!(
            "{model}: P@1 {:.4}, BEP {:.4}, micro F1 {:.4}",
            report.precision_at_1,
            report.breakeven_point,
            report.classification.micro_f1
        );
        let mut inputs = self.kb_inputs();
        inputs.extend([
            self.layout.corpus(),
            self.layout.scores(model, Split::Dev),
            self.layout.scores(model, Split::Test),
        ]);
        self.record(&stage, &inputs, &[self.layout.report(model)])?;
        Ok(report)
    }

    /// Trains one context model per width in `ks` (features truncated from
    /// the built dataset) and reports test micro F1 and P@1 for each.
    pub fn sweep_context(&self, ks: &[usize]) -> Result<Vec<SweepRow>> {
        self.begin("sweep-context")?;
        if ks.is_empty() {
            return Err(Error::invalid("no context widths to sweep"));
        }
        let built = self.cfg.built_k();
        if let Some(&bad) = ks.iter().find(|&&k| k > built) {
            return Err(Error::invalid(format!(
                "context width {bad} exceeds the built window {built}; rebuild the dataset"
            )));
        }
        let kb = self.split_kb()?;
        let table = self.word_table()?;
        let types = kb.types().names().to_vec();
        let mut rows = Vec::with_capacity(ks.len());
        let mut tsv = String::from("2k\tmicro_f1\tp_at_1\n");
        for &k in ks {
            let outcome = self.train_cm_at(&kb, &table, k)?;
            let mut m = Vec::new();
            for split in [Split::Dev, Split::Test] {
                m.push(models::score_cm(
                    &outcome.mlp,
                    &table,
                    &self.examples(split)?,
                    &kb.entities_in(split),
                    k,
                    self.cfg.l,
                    &types,
                    self.cfg.cm_summary,
                )?);
            }
            let report = self.evaluate_matrices(&kb, &m[0], &m[1])?;
            let row = SweepRow {
                k,
                micro_f1: report.classification.micro_f1,
                precision_at_1: report.precision_at_1,
            };
            log::info!(
                "sweep 2k={}: micro F1 {:.4}, P@1 {:.4}",
                2 * k,
                row.micro_f1,
                row.precision_at_1
            );
            writeln!(tsv, "{}\t{}\t{}", 2 * k, row.micro_f1, row.precision_at_1)
                .expect("string write");
            rows.push(row);
        }
        util::write_atomic(&self.layout.sweep(), tsv.as_bytes())?;
        let mut inputs = self.kb_inputs();
        inputs.extend([
            self.layout.word_embeddings(),
            self.layout.examples(Split::Train),
            self.layout.examples(Split::Dev),
            self.layout.examples(Split::Test),
        ]);
        self.record("sweep-context", &inputs, &[self.layout.sweep()])?;
        Ok(rows)
    }

    /// Every stage from preprocessing to evaluation of all four models.
    pub fn run_all(&self) -> Result<BTreeMap<Provenance, EvalReport>> {
        self.preprocess()?;
        self.split()?;
        self.rewrite()?;
        self.embed()?;
        self.build_dataset()?;
        self.train(Provenance::Gm)?;
        self.train(Provenance::Cm)?;
        let mut reports = BTreeMap::new();
        for model in [
            Provenance::Gm,
            Provenance::Cm,
            Provenance::Jm,
            Provenance::Mft,
        ] {
            self.score(model)?;
            reports.insert(model, self.evaluate(model)?);
        }
        Ok(reports)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(dir: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.run_dir = dir.join("run");
        cfg.corpus = dir.join("data/corpus.jsonl");
        cfg.entity_file = dir.join("data/entities.tsv");
        cfg.type_file = dir.join("data/types.txt");
        cfg.syn_num_types = 4;
        cfg.syn_entities_per_type = 10;
        cfg.syn_mentions_per_entity = 8.0;
        cfg.gm_emb_dim = 8;
        cfg.cm_emb_dim = 8;
        cfg.emb_epochs = 2;
        cfg.emb_min_count = 1;
        cfg.h_gm = 6;
        cfg.h_cm = 6;
        cfg.gm_max_epochs = 3;
        cfg.cm_max_epochs = 3;
        cfg.min_per_type = 20;
        cfg.max_per_type = 40;
        cfg.sweep_k = vec![0, 1];
        cfg
    }

    #[test]
    fn missing_artifacts_are_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(tiny(dir.path())).unwrap();
        match p.train(Provenance::Gm) {
            Err(Error::MissingArtifact { path, .. }) => {
                assert!(path.ends_with("datasets/split.tsv"), "{}", path.display())
            }
            other => panic!("{other:?}"),
        }
        p.generate_synthetic().unwrap();
        p.preprocess().unwrap();
        p.split().unwrap();
        match p.train(Provenance::Gm) {
            Err(Error::MissingArtifact { path, .. }) => {
                assert!(path.ends_with("embeddings/entities.txt"))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_change_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny(dir.path());
        let p = Pipeline::new(cfg.clone()).unwrap();
        p.generate_synthetic().unwrap();
        p.preprocess().unwrap();
        let mut other = cfg;
        other.seed = 99;
        let err = Pipeline::new(other).unwrap().split().unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch { .. }), "{err}");
    }

    #[test]
    fn full_run_and_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(tiny(dir.path())).unwrap();
        p.generate_synthetic().unwrap();
        let reports = p.run_all().unwrap();
        assert_eq!(reports.len(), 4);
        for r in reports.values() {
            assert!((0.0..=1.0).contains(&r.precision_at_1));
        }
        let rows = p.sweep_context(&[0, 1]).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(p.sweep_context(&[7]).is_err());
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(p.layout().manifest()).unwrap()).unwrap();
        assert!(manifest.stages.contains_key("evaluate-jm"));
        assert!(manifest.stages["embed"]
            .outputs
            .contains_key("embeddings/words.txt"));
    }
}
