//! Global, context and joint scorers, the distant-supervision dataset for the
//! context model, context sampling, and the most-frequent-type baseline.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_contexts, AnnotatedCorpus, MentionContext, PAD};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Split};
use crate::neural::{LabeledExample, Mlp};
use crate::util;

/// Feature vector of one mention context:
/// `[x_{-k}, …, x_{-1}, x_{+1}, …, x_{+k}, avg(x_{-l}, …, x_{-1}, x_{+1}, …, x_{+l})]`,
/// `(2k + 1) · d` values in total.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextFeatures {
    pub k: usize,
    pub l: usize,
    pub dim: usize,
    pub phi: Vec<f64>,
}

impl ContextFeatures {
    /// PAD and out-of-vocabulary units contribute zero vectors to the
    /// concatenation and are left out of the average's divisor.
    pub fn build(ctx: &MentionContext, table: &EmbeddingTable, k: usize, l: usize) -> Result<Self> {
        let width = k.max(l);
        if ctx.left.len() < width || ctx.right.len() < width {
            return Err(Error::invalid(format!(
                "context of {} has window {} but k={k}, l={l} need {width}",
                ctx.entity,
                ctx.left.len().min(ctx.right.len())
            )));
        }
        let d = table.dim();
        let mut phi = Vec::with_capacity((2 * k + 1) * d);
        let push = |token: &str, phi: &mut Vec<f64>| {
            phi.extend(table.lookup(token).iter().map(|&v| f64::from(v)));
        };
        for token in ctx.left[..k].iter().rev() {
            push(token, &mut phi);
        }
        for token in &ctx.right[..k] {
            push(token, &mut phi);
        }
        let mut avg = vec![0.0; d];
        let mut count = 0usize;
        for token in ctx.left[..l].iter().chain(&ctx.right[..l]) {
            if token == PAD {
                continue;
            }
            if let Some(i) = table.index(token) {
                for (a, &v) in avg.iter_mut().zip(table.row(i)) {
                    *a += f64::from(v);
                }
                count += 1;
            }
        }
        if count > 0 {
            avg.iter_mut().for_each(|a| *a /= count as f64);
        }
        phi.extend(avg);
        Ok(ContextFeatures { k, l, dim: d, phi })
    }

    /// Keeps the `k_new` nearest positions on each side and the average block.
    pub fn truncate(&self, k_new: usize) -> Result<ContextFeatures> {
        if k_new > self.k {
            return Err(Error::invalid(format!(
                "cannot widen context from k={} to k={k_new}",
                self.k
            )));
        }
        let d = self.dim;
        let mut phi = Vec::with_capacity((2 * k_new + 1) * d);
        phi.extend_from_slice(&self.phi[(self.k - k_new) * d..(self.k + k_new) * d]);
        phi.extend_from_slice(&self.phi[2 * self.k * d..]);
        Ok(ContextFeatures {
            k: k_new,
            l: self.l,
            dim: d,
            phi,
        })
    }
}

/// A mention context labelled with every type of its entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistantExample {
    pub entity: String,
    pub left: Vec<String>,
    pub right: Vec<String>,
    /// Type ordinals, sorted.
    pub labels: Vec<usize>,
}

impl DistantExample {
    pub fn context(&self) -> MentionContext {
        MentionContext {
            entity: self.entity.clone(),
            left: self.left.clone(),
            right: self.right.clone(),
        }
    }

    pub fn label_vector(&self, num_types: usize) -> Vec<f64> {
        let mut v = vec![0.0; num_types];
        for &t in &self.labels {
            v[t] = 1.0;
        }
        v
    }

    pub fn featurize(&self, table: &EmbeddingTable, k: usize, l: usize) -> Result<ContextFeatures> {
        let ctx = MentionContext {
            entity: String::new(),
            left: self.left.clone(),
            right: self.right.clone(),
        };
        ContextFeatures::build(&ctx, table, k, l)
    }

    pub fn to_labeled(
        &self,
        table: &EmbeddingTable,
        k: usize,
        l: usize,
        num_types: usize,
    ) -> Result<LabeledExample> {
        Ok(LabeledExample::new(
            self.featurize(table, k, l)?.phi,
            self.label_vector(num_types),
        ))
    }
}

pub fn examples_to_jsonl(examples: &[DistantExample]) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).expect("example serialises"));
        out.push('\n');
    }
    out
}

pub fn load_examples(path: &Path) -> Result<Vec<DistantExample>> {
    let name = path.display().to_string();
    util::read_lines(path)?
        .into_iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(&l).map_err(|e| Error::parse(&name, i + 1, e.to_string()))
        })
        .collect()
}

/// One example per mention of each entity in `entities`, labelled with all of
/// that entity's types.
pub fn build_distant_dataset(
    corpus: &AnnotatedCorpus,
    kb: &KnowledgeBase,
    entities: &BTreeSet<String>,
    k: usize,
    l: usize,
) -> Result<Vec<DistantExample>> {
    if let Some(missing) = entities.iter().find(|e| !kb.contains(e)) {
        return Err(Error::invalid(format!(
            "entity {missing} is not in the knowledge base"
        )));
    }
    let mut out = Vec::new();
    for sentence in &corpus.sentences {
        if !sentence
            .mentions
            .iter()
            .any(|m| entities.contains(&m.entity))
        {
            continue;
        }
        for ctx in extract_contexts(sentence, kb, k, l) {
            if entities.contains(&ctx.entity) {
                let labels = kb.entity(&ctx.entity).expect("checked above").types.clone();
                out.push(DistantExample {
                    entity: ctx.entity,
                    left: ctx.left,
                    right: ctx.right,
                    labels,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub min_per_type: usize,
    pub max_per_type: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            min_per_type: 10_000,
            max_per_type: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSample {
    pub type_name: String,
    pub train_entities: usize,
    pub pool: usize,
    pub quota: usize,
    pub kept: usize,
}

/// Downsamples training contexts per notable type.
///
/// The pool of type `t` is the contexts of entities whose notable type is `t`.
/// Pools no larger than `min_per_type` are kept whole. Larger pools receive
/// `clamp(round(min · n_t / median(n)), min, max)` contexts, where `n_t` is the
/// number of training entities holding `t`. Within a pool, entities with
/// fewer distinct types are drawn first; among entities with the same number
/// of types, contexts are sampled uniformly.
pub fn sample_train_contexts(
    examples: &[DistantExample],
    kb: &KnowledgeBase,
    cfg: SamplingConfig,
    seed: u64,
) -> Result<(Vec<DistantExample>, Vec<TypeSample>)> {
    if cfg.min_per_type > cfg.max_per_type {
        return Err(Error::invalid("min_per_type exceeds max_per_type"));
    }
    let num_types = kb.types().len();
    let train_counts = kb.type_counts(Split::Train);
    let mut positive: Vec<f64> = train_counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| c as f64)
        .collect();
    let median = util::median(&mut positive).unwrap_or(1.0);

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); num_types];
    for (i, ex) in examples.iter().enumerate() {
        let notable = kb.notable(&ex.entity).ok_or_else(|| {
            Error::invalid(format!("entity {} is not in the knowledge base", ex.entity))
        })?;
        pools[notable].push(i);
    }

    let mut rng = util::rng(seed);
    let mut selected = Vec::new();
    let mut report = Vec::with_capacity(num_types);
    for (t, pool) in pools.iter().enumerate() {
        let quota = if pool.len() <= cfg.min_per_type {
            pool.len()
        } else {
            let scaled =
                (cfg.min_per_type as f64 * train_counts[t] as f64 / median).round() as usize;
            scaled
                .clamp(cfg.min_per_type, cfg.max_per_type)
                .min(pool.len())
        };

        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in pool {
            let n_types = kb.entity(&examples[i].entity).map_or(0, |r| r.types.len());
            groups.entry(n_types).or_default().push(i);
        }
        let mut chosen = Vec::with_capacity(quota);
        for (_, mut group) in groups {
            let room = quota - chosen.len();
            if room == 0 {
                break;
            }
            if group.len() > room {
                group.shuffle(&mut rng);
                group.truncate(room);
            }
            chosen.extend(group);
        }
        chosen.sort_unstable();
        if pool.is_empty() {
            log::info!("type {} has no training contexts", kb.types().name(t));
        }
        report.push(TypeSample {
            type_name: kb.types().name(t).to_string(),
            train_entities: train_counts[t],
            pool: pool.len(),
            quota,
            kept: chosen.len(),
        });
        selected.extend(chosen);
    }
    selected.sort_unstable();
    Ok((
        selected.into_iter().map(|i| examples[i].clone()).collect(),
        report,
    ))
}

/// Keeps at most `per_entity` contexts of each entity, chosen uniformly
/// without replacement. Original order is preserved.
pub fn sample_eval_contexts(
    examples: &[DistantExample],
    per_entity: usize,
    seed: u64,
) -> Vec<DistantExample> {
    let mut by_entity: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, ex) in examples.iter().enumerate() {
        by_entity.entry(&ex.entity).or_default().push(i);
    }
    let mut rng = util::rng(seed);
    let mut keep = Vec::with_capacity(examples.len());
    for (_, idx) in by_entity {
        if idx.len() <= per_entity {
            keep.extend(idx);
        } else {
            keep.extend(
                index::sample(&mut rng, idx.len(), per_entity)
                    .into_iter()
                    .map(|j| idx[j]),
            );
        }
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| examples[i].clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Gm,
    Cm,
    Jm,
    Mft,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Gm => "gm",
            Provenance::Cm => "cm",
            Provenance::Jm => "jm",
            Provenance::Mft => "mft",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gm" => Ok(Provenance::Gm),
            "cm" => Ok(Provenance::Cm),
            "jm" => Ok(Provenance::Jm),
            "mft" => Ok(Provenance::Mft),
            _ => Err(Error::invalid(format!("unknown model {s:?}"))),
        }
    }
}

/// Scores S(e, t) for a set of entities. An entity whose row is `None` could
/// not be scored (no embedding, no contexts) and is reported rather than
/// silently treated as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub provenance: Provenance,
    types: Vec<String>,
    rows: BTreeMap<String, Option<Vec<f64>>>,
}

impl ScoreMatrix {
    pub fn new(
        provenance: Provenance,
        types: Vec<String>,
        rows: BTreeMap<String, Option<Vec<f64>>>,
    ) -> Result<Self> {
        let m = ScoreMatrix {
            provenance,
            types,
            rows,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let upper = match self.provenance {
            Provenance::Gm | Provenance::Cm => Some(1.0),
            Provenance::Jm => Some(2.0),
            Provenance::Mft => None,
        };
        for (e, row) in &self.rows {
            let Some(row) = row else { continue };
            if row.len() != self.types.len() {
                return Err(Error::Dimension {
                    expected: self.types.len(),
                    got: row.len(),
                });
            }
            for &s in row {
                let ok = s.is_finite() && upper.is_none_or(|u| s > 0.0 && s < u);
                if !ok {
                    return Err(Error::invalid(format!(
                        "{} score {s} for {e} outside its valid range",
                        self.provenance
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn row(&self, entity: &str) -> Option<&[f64]> {
        self.rows.get(entity)?.as_deref()
    }

    pub fn entities(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    /// Entities present with a real score row.
    pub fn scored_entities(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|(_, r)| r.is_some())
            .map(|(e, _)| e.as_str())
            .collect()
    }

    pub fn unscored_entities(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|(_, r)| r.is_none())
            .map(|(e, _)| e.as_str())
            .collect()
    }

    /// `entity \t type \t score`, entities in id order and types in ordinal
    /// order. Unscored entities have no lines.
    pub fn to_tsv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for (e, row) in &self.rows {
            if let Some(row) = row {
                for (t, s) in self.types.iter().zip(row) {
                    writeln!(out, "{e}\t{t}\t{s}").unwrap();
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, self.to_tsv().as_bytes())
    }

    /// Reads a score TSV. Entities in `expected` with no lines become
    /// unscored rows.
    pub fn load(
        path: &Path,
        provenance: Provenance,
        types: &[String],
        expected: &[&str],
    ) -> Result<Self> {
        let name = path.display().to_string();
        let ordinal: HashMap<&str, usize> = types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let mut partial: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
        for (i, line) in util::read_lines(path)?.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(Error::parse(
                    &name,
                    i + 1,
                    "expected `entity\\ttype\\tscore`",
                ));
            }
            let t = *ordinal
                .get(f[1])
                .ok_or_else(|| Error::parse(&name, i + 1, format!("unknown type {:?}", f[1])))?;
            let s: f64 = f[2]
                .parse()
                .map_err(|_| Error::parse(&name, i + 1, format!("bad score {:?}", f[2])))?;
            let row = partial
                .entry(f[0].to_string())
                .or_insert_with(|| vec![None; types.len()]);
            if row[t].replace(s).is_some() {
                return Err(Error::parse(&name, i + 1, "duplicate (entity, type) pair"));
            }
        }
        let mut rows = BTreeMap::new();
        for (e, row) in partial {
            let full: Option<Vec<f64>> = row.into_iter().collect();
            match full {
                Some(r) => rows.insert(e, Some(r)),
                None => {
                    return Err(Error::invalid(format!(
                        "{name}: incomplete score row for {e}"
                    )))
                }
            };
        }
        for e in expected {
            rows.entry(e.to_string()).or_insert(None);
        }
        ScoreMatrix::new(provenance, types.to_vec(), rows)
    }
}

/// S_GM(e, ·) = forward(mlp, v(e)). Entities without an embedding get an
/// unscored row.
pub fn score_gm(
    table: &EmbeddingTable,
    mlp: &Mlp,
    types: &[String],
    entities: &[&str],
) -> Result<ScoreMatrix> {
    if table.dim() != mlp.input_dim() {
        return Err(Error::Dimension {
            expected: mlp.input_dim(),
            got: table.dim(),
        });
    }
    let mut rows = BTreeMap::new();
    for &e in entities {
        let row = match table.index(e) {
            Some(i) => {
                let v: Vec<f64> = table.row(i).iter().map(|&x| f64::from(x)).collect();
                Some(mlp.forward(&v)?)
            }
            None => None,
        };
        rows.insert(e.to_string(), row);
    }
    ScoreMatrix::new(Provenance::Gm, types.to_vec(), rows)
}

/// Training examples for the global model: one per entity with an embedding,
/// labelled with its full membership row.
pub fn gm_examples(
    table: &EmbeddingTable,
    kb: &KnowledgeBase,
    entities: &[&str],
) -> Vec<LabeledExample> {
    entities
        .iter()
        .filter_map(|&e| {
            let i = table.index(e)?;
            let labels = kb.label_vector(e)?;
            Some(LabeledExample::new(
                table.row(i).iter().map(|&x| f64::from(x)).collect(),
                labels,
            ))
        })
        .collect()
}

/// Per-type probabilities for a single context.
pub fn score_context(mlp: &Mlp, features: &ContextFeatures) -> Result<Vec<f64>> {
    mlp.forward(&features.phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Summary {
    #[default]
    Mean,
    Median,
    Max,
}

impl FromStr for Summary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Summary::Mean),
            "median" => Ok(Summary::Median),
            "max" => Ok(Summary::Max),
            _ => Err(Error::invalid(format!("unknown summary {s:?}"))),
        }
    }
}

impl Summary {
    fn apply(self, values: &mut [f64]) -> f64 {
        match self {
            Summary::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Summary::Median => util::median(values).expect("non-empty"),
            Summary::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// S_CM(e, t) = g({S_c2t(c, t) : c a context of e}). Entities with no
/// contexts get an unscored row.
pub fn aggregate_cm(
    types: &[String],
    context_scores: &BTreeMap<String, Vec<Vec<f64>>>,
    summary: Summary,
) -> Result<ScoreMatrix> {
    let mut rows = BTreeMap::new();
    for (e, scores) in context_scores {
        if scores.is_empty() {
            rows.insert(e.clone(), None);
            continue;
        }
        if let Some(bad) = scores.iter().find(|s| s.len() != types.len()) {
            return Err(Error::Dimension {
                expected: types.len(),
                got: bad.len(),
            });
        }
        let row = (0..types.len())
            .map(|t| {
                let mut column: Vec<f64> = scores.iter().map(|s| s[t]).collect();
                summary.apply(&mut column)
            })
            .collect();
        rows.insert(e.clone(), Some(row));
    }
    ScoreMatrix::new(Provenance::Cm, types.to_vec(), rows)
}

/// Scores every example with the context model and aggregates per entity.
/// Every entity in `entities` gets a row, unscored if it has no contexts.
pub fn score_cm(
    mlp: &Mlp,
    table: &EmbeddingTable,
    examples: &[DistantExample],
    entities: &[&str],
    k: usize,
    l: usize,
    types: &[String],
    summary: Summary,
) -> Result<ScoreMatrix> {
    let mut per_entity: BTreeMap<String, Vec<Vec<f64>>> = entities
        .iter()
        .map(|e| (e.to_string(), Vec::new()))
        .collect();
    for ex in examples {
        if let Some(list) = per_entity.get_mut(&ex.entity) {
            let phi = ex.featurize(table, k, l)?;
            list.push(score_context(mlp, &phi)?);
        }
    }
    aggregate_cm(types, &per_entity, summary)
}

/// S_JM = S_GM + S_CM. An entity scored by only one model takes that model's
/// row.
pub fn score_jm(gm: &ScoreMatrix, cm: &ScoreMatrix) -> Result<ScoreMatrix> {
    if gm.types != cm.types {
        return Err(Error::invalid(
            "global and context score matrices use different type inventories",
        ));
    }
    let entities: BTreeSet<&str> = gm.entities().chain(cm.entities()).collect();
    let mut rows = BTreeMap::new();
    for e in entities {
        let row = match (gm.row(e), cm.row(e)) {
            (Some(g), Some(c)) => Some(g.iter().zip(c).map(|(a, b)| a + b).collect()),
            (Some(g), None) => {
                log::warn!(
                    "{e}: no context-model scores, joint model falls back to the global model"
                );
                Some(g.to_vec())
            }
            (None, Some(c)) => {
                log::warn!(
                    "{e}: no global-model scores, joint model falls back to the context model"
                );
                Some(c.to_vec())
            }
            (None, None) => None,
        };
        rows.insert(e.to_string(), row);
    }
    ScoreMatrix::new(Provenance::Jm, gm.types.clone(), rows)
}

/// Ranks types by how many training entities hold them; every entity gets
/// the same row.
pub fn score_mft(kb: &KnowledgeBase, entities: &[&str]) -> Result<ScoreMatrix> {
    if kb.entities_in(Split::Train).is_empty() {
        return Err(Error::invalid(
            "most-frequent-type baseline needs training entities",
        ));
    }
    let row: Vec<f64> = kb
        .type_counts(Split::Train)
        .into_iter()
        .map(|c| c as f64)
        .collect();
    let rows = entities
        .iter()
        .map(|e| (e.to_string(), Some(row.clone())))
        .collect();
    ScoreMatrix::new(Provenance::Mft, kb.types().names().to_vec(), rows)
}

/// Which of the two trained networks a saved model holds, plus everything
/// needed to rebuild its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub model: Provenance,
    pub types: Vec<String>,
    /// Context window sizes; zero for the global model.
    pub k: usize,
    pub l: usize,
    pub best_epoch: usize,
    pub mlp: crate::neural::Checkpoint,
}

impl SavedModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn network(&self) -> Result<Mlp> {
        Mlp::from_checkpoint(self.mlp.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Mention, Sentence};
    use crate::kb::TypeInventory;
    use proptest::prelude::*;

    fn names(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn table() -> EmbeddingTable {
        // d = 2; token i has vector (i, -i)
        let tokens = names("a b c d e f");
        let vectors = (1..=6).flat_map(|i| [i as f32, -(i as f32)]).collect();
        EmbeddingTable::new(tokens, 2, vectors, None).unwrap()
    }

    fn ctx(left: &str, right: &str) -> MentionContext {
        MentionContext {
            entity: "x".into(),
            left: names(left),
            right: names(right),
        }
    }

    #[test]
    fn features_layout() {
        // left is nearest-first; k = 2, l = 1: [x-2, x-1, x+1, x+2, avg(x-1, x+1)]
        let f = ContextFeatures::build(&ctx("b a", "c d"), &table(), 2, 1).unwrap();
        assert_eq!(f.phi.len(), (2 * 2 + 1) * 2);
        assert_eq!(
            f.phi,
            vec![1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 4.0, -4.0, 2.5, -2.5]
        );
    }

    #[test]
    fn features_pad_and_oov_are_zero_and_skip_the_average() {
        let f = ContextFeatures::build(&ctx("a <PAD>", "zzz c"), &table(), 2, 2).unwrap();
        assert_eq!(&f.phi[0..2], &[0.0, 0.0]);
        assert_eq!(&f.phi[4..6], &[0.0, 0.0]);
        // average of a (1) and c (3) only
        assert_eq!(&f.phi[8..10], &[2.0, -2.0]);
        let all_pad =
            ContextFeatures::build(&ctx("<PAD> <PAD>", "<PAD> <PAD>"), &table(), 2, 2).unwrap();
        assert!(all_pad.phi.iter().all(|&v| v == 0.0));
        assert!(ContextFeatures::build(&ctx("a", "b"), &table(), 2, 1).is_err());
    }

    #[test]
    fn truncation_matches_direct_build() {
        let c = ctx("a b c d", "e f a b");
        let full = ContextFeatures::build(&c, &table(), 4, 3).unwrap();
        for k in 0..=4 {
            let direct = ContextFeatures::build(&c, &table(), k, 3).unwrap();
            assert_eq!(full.truncate(k).unwrap(), direct);
        }
        assert!(full.truncate(5).is_err());
    }

    fn kb() -> KnowledgeBase {
        let types = TypeInventory::new(names("politician author city food")).unwrap();
        KnowledgeBase::from_rows(
            types,
            vec![
                ("obama", "politician", vec!["politician", "author"]),
                ("paris", "city", vec!["city"]),
                ("beef", "food", vec!["food"]),
            ],
        )
        .unwrap()
    }

    fn sentence(text: &str, mentions: &[(usize, &str)]) -> Sentence {
        Sentence::new(
            names(text),
            mentions
                .iter()
                .map(|&(i, e)| Mention {
                    start: i,
                    end: i + 1,
                    entity: e.into(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn distant_labels_are_full_type_sets() {
        let corpus = AnnotatedCorpus::new(vec![
            sentence("OBAMA visited PARIS today", &[(0, "obama"), (2, "paris")]),
            sentence("OBAMA wrote a book", &[(0, "obama")]),
            sentence("they ate BEEF", &[(2, "beef")]),
        ]);
        let ents: BTreeSet<String> = ["obama".to_string(), "beef".to_string()].into();
        let ds = build_distant_dataset(&corpus, &kb(), &ents, 2, 2).unwrap();
        let obama: Vec<_> = ds.iter().filter(|e| e.entity == "obama").collect();
        assert_eq!(obama.len(), 2);
        assert!(obama.iter().all(|e| e.labels == vec![0, 1]));
        let beef: Vec<_> = ds.iter().filter(|e| e.entity == "beef").collect();
        assert_eq!(beef.len(), 1);
        assert_eq!(beef[0].labels, vec![3]);
        assert_eq!(obama[0].right, names("visited city"));
        let bad: BTreeSet<String> = ["nobody".to_string()].into();
        assert!(build_distant_dataset(&corpus, &kb(), &bad, 2, 2).is_err());
    }

    fn ex(entity: &str, n: usize, labels: &[usize]) -> Vec<DistantExample> {
        (0..n)
            .map(|i| DistantExample {
                entity: entity.into(),
                left: vec![format!("w{i}")],
                right: vec![],
                labels: labels.to_vec(),
            })
            .collect()
    }

    #[test]
    fn eval_sampling_quota() {
        let mut all = ex("a", 50, &[0]);
        all.extend(ex("b", 1000, &[0]));
        let s = sample_eval_contexts(&all, 300, 7);
        assert_eq!(s.iter().filter(|e| e.entity == "a").count(), 50);
        assert_eq!(s.iter().filter(|e| e.entity == "b").count(), 300);
        assert_eq!(s, sample_eval_contexts(&all, 300, 7));
        assert_ne!(s, sample_eval_contexts(&all, 300, 8));
    }

    fn sampling_kb(entities: &[(&str, &str, Vec<&str>)]) -> KnowledgeBase {
        let types = TypeInventory::new(names("t0 t1 t2 t3")).unwrap();
        let kb =
            KnowledgeBase::from_rows(types, entities.iter().map(|(a, b, c)| (*a, *b, c.clone())))
                .unwrap();
        let split = kb
            .entity_ids()
            .map(|e| (e.to_string(), Split::Train))
            .collect();
        kb.with_split(split).unwrap()
    }

    #[test]
    fn small_pools_are_kept_whole() {
        let kb = sampling_kb(&[("e1", "t0", vec!["t0"])]);
        let all = ex("e1", 50, &[0]);
        let (s, report) = sample_train_contexts(
            &all,
            &kb,
            SamplingConfig {
                min_per_type: 100,
                max_per_type: 200,
            },
            1,
        )
        .unwrap();
        assert_eq!(s.len(), 50);
        assert_eq!(report[0].kept, 50);
        assert_eq!(report[1].pool, 0);
    }

    #[test]
    fn large_pools_are_bounded() {
        let kb = sampling_kb(&[("e1", "t0", vec!["t0"]), ("e2", "t0", vec!["t0", "t1"])]);
        let mut all = ex("e1", 600, &[0]);
        all.extend(ex("e2", 400, &[0, 1]));
        let cfg = SamplingConfig {
            min_per_type: 100,
            max_per_type: 200,
        };
        let (s, _) = sample_train_contexts(&all, &kb, cfg, 1).unwrap();
        assert!((100..=200).contains(&s.len()), "{}", s.len());
    }

    #[test]
    fn fewer_types_are_preferred() {
        // budget is exactly one entity's contexts
        let kb = sampling_kb(&[
            ("one", "t0", vec!["t0"]),
            ("three", "t0", vec!["t0", "t1", "t2"]),
        ]);
        let mut all = ex("three", 20, &[0, 1, 2]);
        all.extend(ex("one", 10, &[0]));
        let cfg = SamplingConfig {
            min_per_type: 10,
            max_per_type: 10,
        };
        let (s, _) = sample_train_contexts(&all, &kb, cfg, 5).unwrap();
        assert_eq!(s.len(), 10);
        assert!(s.iter().all(|e| e.entity == "one"));
    }

    #[test]
    fn quota_scales_with_training_entities() {
        let kb = sampling_kb(&[
            ("a1", "t0", vec!["t0"]),
            ("a2", "t0", vec!["t0"]),
            ("a3", "t0", vec!["t0"]),
            ("a4", "t0", vec!["t0"]),
            ("b1", "t1", vec!["t1"]),
            ("c1", "t2", vec!["t2"]),
            ("c2", "t2", vec!["t2"]),
        ]);
        let mut all = Vec::new();
        for e in ["a1", "a2", "a3", "a4"] {
            all.extend(ex(e, 100, &[0]));
        }
        all.extend(ex("b1", 400, &[1]));
        all.extend(ex("c1", 200, &[2]));
        all.extend(ex("c2", 200, &[2]));
        // counts (4, 1, 2) -> median 2
        let cfg = SamplingConfig {
            min_per_type: 100,
            max_per_type: 300,
        };
        let (_, report) = sample_train_contexts(&all, &kb, cfg, 5).unwrap();
        assert_eq!(report[0].quota, 200);
        assert_eq!(report[1].quota, 100);
        assert_eq!(report[2].quota, 100);
    }

    #[test]
    fn aggregate_mean_median_max() {
        let types = names("t");
        let mut per: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        per.insert("e".into(), vec![vec![0.2], vec![0.4], vec![0.6]]);
        per.insert("single".into(), vec![vec![0.3]]);
        per.insert("none".into(), vec![]);
        let m = aggregate_cm(&types, &per, Summary::Mean).unwrap();
        assert!((m.row("e").unwrap()[0] - 0.4).abs() < 1e-12);
        assert_eq!(m.row("single").unwrap()[0], 0.3);
        assert!(m.row("none").is_none());
        assert_eq!(m.unscored_entities(), vec!["none"]);
        assert_eq!(
            aggregate_cm(&types, &per, Summary::Max)
                .unwrap()
                .row("e")
                .unwrap()[0],
            0.6
        );
        assert_eq!(
            aggregate_cm(&types, &per, Summary::Median)
                .unwrap()
                .row("e")
                .unwrap()[0],
            0.4
        );
    }

    fn matrix(p: Provenance, rows: &[(&str, Option<Vec<f64>>)]) -> ScoreMatrix {
        ScoreMatrix::new(
            p,
            names("a b c"),
            rows.iter()
                .map(|(e, r)| (e.to_string(), r.clone()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn joint_sums_and_falls_back() {
        let gm = matrix(
            Provenance::Gm,
            &[
                ("x", Some(vec![0.3, 0.1, 0.2])),
                ("y", Some(vec![0.5, 0.5, 0.5])),
            ],
        );
        let cm = matrix(
            Provenance::Cm,
            &[("x", Some(vec![0.5, 0.1, 0.1])), ("y", None)],
        );
        let jm = score_jm(&gm, &cm).unwrap();
        assert!((jm.row("x").unwrap()[0] - 0.8).abs() < 1e-12);
        assert_eq!(jm.row("y").unwrap(), gm.row("y").unwrap());
        let other = ScoreMatrix::new(Provenance::Cm, names("a b"), BTreeMap::new()).unwrap();
        assert!(score_jm(&gm, &other).is_err());
    }

    #[test]
    fn joint_argmax_can_differ_from_both_models() {
        // types: written_work, artist, author
        let gm = matrix(Provenance::Gm, &[("e", Some(vec![0.6, 0.1, 0.5]))]);
        let cm = matrix(Provenance::Cm, &[("e", Some(vec![0.1, 0.6, 0.5]))]);
        let jm = score_jm(&gm, &cm).unwrap();
        let argmax = |r: &[f64]| (0..3).max_by(|&a, &b| r[a].total_cmp(&r[b])).unwrap();
        assert_eq!(argmax(gm.row("e").unwrap()), 0);
        assert_eq!(argmax(cm.row("e").unwrap()), 1);
        assert_eq!(argmax(jm.row("e").unwrap()), 2);
    }

    #[test]
    fn mft_counts_train_memberships() {
        let types = TypeInventory::new(names("a b")).unwrap();
        let kb = KnowledgeBase::from_rows(
            types,
            vec![
                ("e1", "a", vec!["a"]),
                ("e2", "a", vec!["a", "b"]),
                ("e3", "b", vec!["b"]),
            ],
        )
        .unwrap();
        let split = [
            ("e1", Split::Train),
            ("e2", Split::Train),
            ("e3", Split::Test),
        ]
        .into_iter()
        .map(|(e, s)| (e.to_string(), s))
        .collect();
        let kb = kb.with_split(split).unwrap();
        let m = score_mft(&kb, &["e1", "e3"]).unwrap();
        assert_eq!(m.row("e1").unwrap(), &[2.0, 1.0]);
        assert_eq!(m.row("e3").unwrap(), m.row("e1").unwrap());
    }

    #[test]
    fn gm_scores_and_missing_embeddings() {
        let mlp = Mlp::zeros(2, 3, 3);
        let m = score_gm(&table(), &mlp, &names("x y z"), &["a", "nobody"]).unwrap();
        assert_eq!(m.row("a").unwrap(), &[0.5, 0.5, 0.5]);
        assert!(m.row("nobody").is_none());
        assert!(score_gm(&table(), &Mlp::zeros(3, 3, 3), &names("x y z"), &["a"]).is_err());
    }

    #[test]
    fn score_range_is_enforced() {
        let bad = ScoreMatrix::new(
            Provenance::Gm,
            names("a"),
            [("e".to_string(), Some(vec![1.5]))].into(),
        );
        assert!(bad.is_err());
        let ok = ScoreMatrix::new(
            Provenance::Jm,
            names("a"),
            [("e".to_string(), Some(vec![1.5]))].into(),
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn score_tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = matrix(
            Provenance::Cm,
            &[("x", Some(vec![0.25, 0.125, 0.3])), ("y", None)],
        );
        let p = dir.path().join("cm.tsv");
        m.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "x\ta\t0.25\nx\tb\t0.125\nx\tc\t0.3\n");
        let back = ScoreMatrix::load(&p, Provenance::Cm, &names("a b c"), &["x", "y"]).unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn mean_is_permutation_invariant(scores in prop::collection::vec(prop::collection::vec(0.01f64..0.99, 3), 1..12), seed in any::<u64>()) {
            let types = names("a b c");
            let mut shuffled = scores.clone();
            shuffled.shuffle(&mut util::rng(seed));
            let a = aggregate_cm(&types, &[("e".to_string(), scores)].into(), Summary::Mean).unwrap();
            let b = aggregate_cm(&types, &[("e".to_string(), shuffled)].into(), Summary::Mean).unwrap();
            for (x, y) in a.row("e").unwrap().iter().zip(b.row("e").unwrap()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn joint_shift_is_linear(gm in prop::collection::vec(0.01f64..0.99, 4), cm in prop::collection::vec(0.01f64..0.5, 4), c in 0.0f64..0.45) {
            let types = names("a b c d");
            let g = ScoreMatrix::new(Provenance::Gm, types.clone(), [("e".to_string(), Some(gm))].into()).unwrap();
            let c0 = ScoreMatrix::new(Provenance::Cm, types.clone(), [("e".to_string(), Some(cm.clone()))].into()).unwrap();
            let shifted: Vec<f64> = cm.iter().map(|v| v + c).collect();
            let c1 = ScoreMatrix::new(Provenance::Cm, types, [("e".to_string(), Some(shifted))].into()).unwrap();
            let j0 = score_jm(&g, &c0).unwrap();
            let j1 = score_jm(&g, &c1).unwrap();
            for (a, b) in j0.row("e").unwrap().iter().zip(j1.row("e").unwrap()) {
                prop_assert!((b - a - c).abs() < 1e-12);
            }
        }

        #[test]
        fn train_sampling_respects_bounds(
            pools in prop::collection::vec((1usize..4, 0usize..400), 1..8),
            min in 10usize..60,
            extra in 0usize..60,
            seed in any::<u64>(),
        ) {
            let max = min + extra;
            let mut rows = Vec::new();
            let mut all = Vec::new();
            for (i, (n_types, n_ctx)) in pools.iter().enumerate() {
                let t = i % 4;
                let members: Vec<String> = (0..*n_types).map(|j| format!("t{}", (t + j) % 4)).collect();
                rows.push((format!("e{i}"), format!("t{t}"), members));
                let labels: Vec<usize> = (0..*n_types).map(|j| (t + j) % 4).collect();
                all.extend(ex(&format!("e{i}"), *n_ctx, &labels));
            }
            let types = TypeInventory::new(names("t0 t1 t2 t3")).unwrap();
            let kb = KnowledgeBase::from_rows(types, rows).unwrap();
            let split = kb.entity_ids().map(|e| (e.to_string(), Split::Train)).collect();
            let kb = kb.with_split(split).unwrap();
            let (_, report) = sample_train_contexts(&all, &kb, SamplingConfig { min_per_type: min, max_per_type: max }, seed).unwrap();
            for r in report {
                prop_assert!(r.kept <= max.max(r.pool.min(min)));
                prop_assert!(r.kept >= r.pool.min(min));
                prop_assert!(r.kept <= r.pool);
            }
        }
    }
}
