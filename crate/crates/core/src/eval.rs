//! Ranking and classification metrics, per-type threshold selection and
//! frequency slices.
//!
//! Score tables are row-per-entity; `None` marks an entity no model could
//! score. Such an entity counts as a miss for P@1, contributes no ranked
//! pairs, and is assigned no types.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, Split};
use crate::models::{Provenance, ScoreMatrix};
use crate::util;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

fn check_shapes(scores: &[Option<Vec<f64>>], gold: &[Vec<bool>]) -> Result<usize> {
    if scores.len() != gold.len() {
        return Err(Error::Dimension {
            expected: gold.len(),
            got: scores.len(),
        });
    }
    let t = gold.first().map_or(0, Vec::len);
    for (s, g) in scores.iter().zip(gold) {
        if g.len() != t {
            return Err(Error::Dimension {
                expected: t,
                got: g.len(),
            });
        }
        if let Some(s) = s {
            if s.len() != t {
                return Err(Error::Dimension {
                    expected: t,
                    got: s.len(),
                });
            }
        }
    }
    Ok(t)
}

/// Index of the highest score; ties go to the lowest type ordinal.
pub fn top_type(row: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (t, &s) in row.iter().enumerate() {
        if best.is_none_or(|b| s > row[b]) {
            best = Some(t);
        }
    }
    best
}

/// Fraction of entities whose top-ranked type is one of theirs.
pub fn precision_at_1(scores: &[Option<Vec<f64>>], gold: &[Vec<bool>]) -> Result<f64> {
    check_shapes(scores, gold)?;
    if scores.is_empty() {
        return Err(Error::invalid("precision at 1 of an empty entity set"));
    }
    let hits = scores
        .iter()
        .zip(gold)
        .filter(|(s, g)| s.as_deref().and_then(top_type).is_some_and(|t| g[t]))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Break-even point of the precision/recall curve over all (entity, type)
/// pairs ranked by score, ties broken by entity order then type ordinal.
///
/// Precision equals recall exactly where the cutoff equals the number of
/// gold pairs, so this is the precision at that cutoff. If unscored entities
/// hold so much gold that the list is shorter than that, the curve never
/// crosses; the cutoff with the smallest nonzero-hit |P - R| is used instead
/// (earliest on ties). Zero when there are no gold pairs.
pub fn breakeven_point(scores: &[Option<Vec<f64>>], gold: &[Vec<bool>]) -> Result<f64> {
    check_shapes(scores, gold)?;
    let total_gold: usize = gold.iter().map(|g| g.iter().filter(|&&b| b).count()).sum();
    if total_gold == 0 {
        return Ok(0.0);
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (e, row) in scores.iter().enumerate() {
        if let Some(row) = row {
            pairs.extend(row.iter().enumerate().map(|(t, &s)| (s, e, t)));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    if total_gold <= pairs.len() {
        let hits = pairs
            .iter()
            .take(total_gold)
            .filter(|&&(_, e, t)| gold[e][t])
            .count();
        return Ok(hits as f64 / total_gold as f64);
    }
    // P - R = hits * (G - c) / (c * G) > 0 at every cutoff c
    let g = total_gold as u128;
    let mut best: Option<(usize, usize)> = None;
    let mut hits = 0usize;
    for (i, &(_, e, t)) in pairs.iter().enumerate() {
        hits += usize::from(gold[e][t]);
        let c = i + 1;
        if hits == 0 {
            continue;
        }
        let closer = best.is_none_or(|(bc, bh)| {
            // hits*(G-c)/c < bh*(G-bc)/bc
            (hits as u128) * (g - c as u128) * (bc as u128)
                < (bh as u128) * (g - bc as u128) * (c as u128)
        });
        if closer {
            best = Some((c, hits));
        }
    }
    Ok(best.map_or(0.0, |(c, h)| 2.0 * h as f64 / (c + total_gold) as f64))
}

/// For each type, the threshold maximising that type's F1 on the given
/// (dev) entities. Candidates are the midpoints between consecutive distinct
/// scores plus `-inf` (assign all) and `+inf` (assign none); ties go to the
/// higher threshold. A type with no positives gets `+inf`. A type is
/// assigned when `score >= threshold`.
pub fn select_thresholds(scores: &[Option<Vec<f64>>], gold: &[Vec<bool>]) -> Result<Vec<f64>> {
    let num_types = check_shapes(scores, gold)?;
    let mut out = Vec::with_capacity(num_types);
    for t in 0..num_types {
        let mut col: Vec<(f64, bool)> = scores
            .iter()
            .zip(gold)
            .filter_map(|(s, g)| s.as_ref().map(|s| (s[t], g[t])))
            .collect();
        let positives = col.iter().filter(|c| c.1).count();
        // unscored entities are never assigned: their positives are false
        // negatives at every threshold
        let missed = gold.iter().filter(|g| g[t]).count() - positives;
        if positives == 0 {
            out.push(f64::INFINITY);
            continue;
        }
        col.sort_by(|a, b| a.0.total_cmp(&b.0));
        // sweep from assign-all upwards; `i` is the number of entities below
        // the threshold
        let mut tp = positives;
        let mut fp = col.len() - positives;
        let mut best = (util::f1(tp, fp, missed), f64::NEG_INFINITY);
        let mut i = 0;
        while i < col.len() {
            let v = col[i].0;
            while i < col.len() && col[i].0 == v {
                if col[i].1 {
                    tp -= 1;
                } else {
                    fp -= 1;
                }
                i += 1;
            }
            let threshold = if i < col.len() {
                let upper = col[i].0;
                let mid = v + (upper - v) / 2.0;
                if mid > v {
                    mid
                } else {
                    upper
                }
            } else {
                f64::INFINITY
            };
            let f = util::f1(tp, fp, positives - tp + missed);
            if f >= best.0 {
                best = (f, threshold);
            }
        }
        out.push(best.1);
    }
    Ok(out)
}

pub fn assign(scores: &[Option<Vec<f64>>], thresholds: &[f64]) -> Vec<Vec<bool>> {
    scores
        .iter()
        .map(|s| match s {
            Some(row) => row
                .iter()
                .zip(thresholds)
                .map(|(&v, &th)| v >= th)
                .collect(),
            None => vec![false; thresholds.len()],
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub strict_accuracy: f64,
    pub micro_f1: f64,
    pub entity_macro_f1: f64,
    /// `None` when every type has neither gold members nor assignments.
    pub type_macro_f1: Option<f64>,
}

pub fn classification_metrics(
    assigned: &[Vec<bool>],
    gold: &[Vec<bool>],
) -> Result<ClassificationMetrics> {
    if assigned.len() != gold.len() {
        return Err(Error::Dimension {
            expected: gold.len(),
            got: assigned.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::invalid(
            "classification metrics of an empty entity set",
        ));
    }
    let num_types = gold[0].len();
    let mut per_type = vec![(0usize, 0usize, 0usize); num_types];
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    let mut strict = 0usize;
    let mut entity_f1 = 0.0;
    for (a, g) in assigned.iter().zip(gold) {
        if a.len() != num_types || g.len() != num_types {
            return Err(Error::Dimension {
                expected: num_types,
                got: a.len().min(g.len()),
            });
        }
        let (mut etp, mut efp, mut efn) = (0, 0, 0);
        for t in 0..num_types {
            match (a[t], g[t]) {
                (true, true) => {
                    etp += 1;
                    per_type[t].0 += 1;
                }
                (true, false) => {
                    efp += 1;
                    per_type[t].1 += 1;
                }
                (false, true) => {
                    efn += 1;
                    per_type[t].2 += 1;
                }
                (false, false) => {}
            }
        }
        if a == g {
            strict += 1;
        }
        entity_f1 += util::f1(etp, efp, efn);
        tp += etp;
        fp += efp;
        fn_ += efn;
    }
    let active: Vec<f64> = per_type
        .iter()
        .filter(|&&(tp, fp, fn_)| tp + fp + fn_ > 0)
        .map(|&(tp, fp, fn_)| util::f1(tp, fp, fn_))
        .collect();
    let n = gold.len() as f64;
    Ok(ClassificationMetrics {
        strict_accuracy: strict as f64 / n,
        micro_f1: util::f1(tp, fp, fn_),
        entity_macro_f1: entity_f1 / n,
        type_macro_f1: (!active.is_empty())
            .then(|| active.iter().sum::<f64>() / active.len() as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub entities: usize,
    pub types: usize,
    pub precision_at_1: f64,
    pub breakeven_point: f64,
    pub classification: ClassificationMetrics,
}

fn slice_metrics(
    scores: &[Option<Vec<f64>>],
    gold: &[Vec<bool>],
    thresholds: &[f64],
    entities: &[usize],
    types: &[usize],
) -> Result<Option<SliceMetrics>> {
    if entities.is_empty() || types.is_empty() {
        return Ok(None);
    }
    let sub_scores: Vec<Option<Vec<f64>>> = entities
        .iter()
        .map(|&e| {
            scores[e]
                .as_ref()
                .map(|r| types.iter().map(|&t| r[t]).collect())
        })
        .collect();
    let sub_gold: Vec<Vec<bool>> = entities
        .iter()
        .map(|&e| types.iter().map(|&t| gold[e][t]).collect())
        .collect();
    let sub_thresholds: Vec<f64> = types.iter().map(|&t| thresholds[t]).collect();
    Ok(Some(SliceMetrics {
        entities: entities.len(),
        types: types.len(),
        precision_at_1: precision_at_1(&sub_scores, &sub_gold)?,
        breakeven_point: breakeven_point(&sub_scores, &sub_gold)?,
        classification: classification_metrics(&assign(&sub_scores, &sub_thresholds), &sub_gold)?,
    }))
}

/// Frequency cut-offs for head/tail slices. Entity frequency is the number
/// of corpus mentions; type frequency is the number of training entities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceConfig {
    pub head_entity_min: usize,
    pub tail_entity_max: usize,
    pub head_type_min: usize,
    pub tail_type_max: usize,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            head_entity_min: 100,
            tail_entity_max: 5,
            head_type_min: 3000,
            tail_type_max: 200,
        }
    }
}

/// A threshold as stored in reports: a number, or the strings `"-inf"` /
/// `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Threshold(pub f64);

impl Serialize for Threshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Threshold(v)),
            Repr::Str(s) if s == "inf" => Ok(Threshold(f64::INFINITY)),
            Repr::Str(s) if s == "-inf" => Ok(Threshold(f64::NEG_INFINITY)),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad threshold {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub model: Provenance,
    pub dev_entities: usize,
    pub test_entities: usize,
    /// Test entities the model could not score.
    pub unscored: Vec<String>,
    pub precision_at_1: f64,
    pub breakeven_point: f64,
    pub classification: ClassificationMetrics,
    pub thresholds: BTreeMap<String, Threshold>,
    pub slices: BTreeMap<String, Option<SliceMetrics>>,
    pub slice_config: SliceConfig,
    /// Settings the scores were produced with, echoed verbatim.
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

fn gold_rows(kb: &KnowledgeBase, entities: &[&str]) -> Result<Vec<Vec<bool>>> {
    entities
        .iter()
        .map(|e| {
            kb.label_vector(e)
                .map(|v| v.into_iter().map(|x| x > 0.5).collect())
                .ok_or_else(|| Error::invalid(format!("entity {e} is not in the knowledge base")))
        })
        .collect()
}

fn score_rows(m: &ScoreMatrix, entities: &[&str]) -> Vec<Option<Vec<f64>>> {
    entities
        .iter()
        .map(|e| m.row(e).map(<[f64]>::to_vec))
        .collect()
}

/// Selects thresholds on `dev`, then scores `test` with them. The two
/// matrices must cover disjoint entity sets.
pub fn evaluate(
    dev: &ScoreMatrix,
    test: &ScoreMatrix,
    kb: &KnowledgeBase,
    mention_counts: &BTreeMap<String, usize>,
    slice_cfg: SliceConfig,
    config: BTreeMap<String, String>,
) -> Result<EvalReport> {
    if dev.provenance != test.provenance {
        return Err(Error::invalid(
            "dev and test scores come from different models",
        ));
    }
    if dev.types() != kb.types().names() || test.types() != kb.types().names() {
        return Err(Error::invalid(
            "score matrices do not use the knowledge base's type inventory",
        ));
    }
    let dev_entities: Vec<&str> = dev.entities().collect();
    let test_entities: Vec<&str> = test.entities().collect();
    let dev_set: BTreeSet<&str> = dev_entities.iter().copied().collect();
    if let Some(shared) = test_entities.iter().find(|e| dev_set.contains(*e)) {
        return Err(Error::invalid(format!(
            "entity {shared} appears in both dev and test scores; thresholds must be tuned on held-out entities"
        )));
    }
    if dev_entities.is_empty() || test_entities.is_empty() {
        return Err(Error::invalid("dev and test scores must be non-empty"));
    }

    let dev_scores = score_rows(dev, &dev_entities);
    let dev_gold = gold_rows(kb, &dev_entities)?;
    let thresholds = select_thresholds(&dev_scores, &dev_gold)?;

    let scores = score_rows(test, &test_entities);
    let gold = gold_rows(kb, &test_entities)?;
    let unscored: Vec<String> = test
        .unscored_entities()
        .into_iter()
        .map(str::to_string)
        .collect();
    if !unscored.is_empty() {
        log::warn!(
            "{} test entities have no {} scores",
            unscored.len(),
            test.provenance
        );
    }

    let all_entities: Vec<usize> = (0..test_entities.len()).collect();
    let all_types: Vec<usize> = (0..kb.types().len()).collect();
    let freq = |e: &str| mention_counts.get(e).copied().unwrap_or(0);
    let head_entities: Vec<usize> = all_entities
        .iter()
        .copied()
        .filter(|&i| freq(test_entities[i]) > slice_cfg.head_entity_min)
        .collect();
    let tail_entities: Vec<usize> = all_entities
        .iter()
        .copied()
        .filter(|&i| freq(test_entities[i]) < slice_cfg.tail_entity_max)
        .collect();
    let type_counts = kb.type_counts(Split::Train);
    let head_types: Vec<usize> = all_types
        .iter()
        .copied()
        .filter(|&t| type_counts[t] > slice_cfg.head_type_min)
        .collect();
    let tail_types: Vec<usize> = all_types
        .iter()
        .copied()
        .filter(|&t| type_counts[t] < slice_cfg.tail_type_max)
        .collect();

    let mut slices = BTreeMap::new();
    for (name, ents, types) in [
        ("head_entities", &head_entities, &all_types),
        ("tail_entities", &tail_entities, &all_types),
        ("head_types", &all_entities, &head_types),
        ("tail_types", &all_entities, &tail_types),
    ] {
        slices.insert(
            name.to_string(),
            slice_metrics(&scores, &gold, &thresholds, ents, types)?,
        );
    }

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        model: test.provenance,
        dev_entities: dev_entities.len(),
        test_entities: test_entities.len(),
        unscored,
        precision_at_1: precision_at_1(&scores, &gold)?,
        breakeven_point: breakeven_point(&scores, &gold)?,
        classification: classification_metrics(&assign(&scores, &thresholds), &gold)?,
        thresholds: kb
            .types()
            .names()
            .iter()
            .cloned()
            .zip(thresholds.iter().map(|&t| Threshold(t)))
            .collect(),
        slices,
        slice_config: slice_cfg,
        config,
    })
}
