//! Synthetic annotated corpora with known type ground truth.
//!
//! Every sentence holds exactly one mention. With probability
//! `informativeness` its other tokens are drawn from the vocabulary of one of
//! the entity's types (chosen uniformly), otherwise from a shared background
//! vocabulary. Word order carries no signal unless `positional` is set: then
//! types are paired, both members of a pair share one bag of words, and only
//! the order of two marker words around the mention tells them apart.
//!
//! Generated words and entity ids contain no digits, so preprocessing leaves
//! them intact.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedCorpus, Mention, Sentence};
use crate::error::{Error, Result};
use crate::kb::{KnowledgeBase, TypeInventory};
use crate::util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynSpec {
    pub num_types: usize,
    /// Entities per notable type.
    pub entities_per_type: usize,
    /// `types_per_entity[i]` is the probability of an entity having `i + 1`
    /// types.
    pub types_per_entity: Vec<f64>,
    pub vocab_per_type: usize,
    pub background_vocab: usize,
    pub informativeness: f64,
    /// Mean mentions per entity; counts are `1 + Poisson(mean - 1)`.
    pub mentions_per_entity: f64,
    pub sentence_length: usize,
    /// Fraction of each type's vocabulary shared with the next type. Zero
    /// gives disjoint, type-prefixed vocabularies.
    pub vocab_overlap: f64,
    pub positional: bool,
    /// Type names; `type_a`, `type_b`, … when absent. With disjoint
    /// vocabularies they prefix the words, so they may not contain digits.
    pub type_names: Option<Vec<String>>,
    pub seed: u64,
}

impl Default for SynSpec {
    fn default() -> Self {
        SynSpec {
            num_types: 8,
            entities_per_type: 200,
            types_per_entity: vec![0.4, 0.4, 0.2],
            vocab_per_type: 50,
            background_vocab: 200,
            informativeness: 0.7,
            mentions_per_entity: 50.0,
            sentence_length: 12,
            vocab_overlap: 0.0,
            positional: false,
            type_names: None,
            seed: 1,
        }
    }
}

impl SynSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_types", self.num_types),
            ("entities_per_type", self.entities_per_type),
            ("vocab_per_type", self.vocab_per_type),
            ("background_vocab", self.background_vocab),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.sentence_length < 3 {
            return Err(Error::invalid("sentence_length must be at least 3"));
        }
        if !(self.mentions_per_entity >= 1.0) || !self.mentions_per_entity.is_finite() {
            return Err(Error::invalid("mentions_per_entity must be at least 1"));
        }
        for (name, p) in [
            ("informativeness", self.informativeness),
            ("vocab_overlap", self.vocab_overlap),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must be in [0, 1]")));
            }
        }
        if self.vocab_overlap >= 1.0 {
            return Err(Error::invalid("vocab_overlap must be below 1"));
        }
        let dist = &self.types_per_entity;
        if dist.is_empty()
            || dist.iter().any(|p| !(0.0..=1.0).contains(p))
            || (dist.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(
                "types_per_entity must be probabilities summing to 1",
            ));
        }
        if dist.len() > self.num_types {
            return Err(Error::invalid(
                "types_per_entity allows more types than exist",
            ));
        }
        if let Some(names) = &self.type_names {
            if names.len() != self.num_types {
                return Err(Error::invalid("type_names must list num_types names"));
            }
        }
        Ok(())
    }
}

/// Bijective base-26 name: 0 -> "a", 25 -> "z", 26 -> "aa".
fn letters(mut i: usize) -> String {
    let mut out = Vec::new();
    loop {
        out.push(b'a' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

/// Vocabularies derived from a [`SynSpec`].
#[derive(Debug, Clone)]
pub struct SynWorld {
    spec: SynSpec,
    types: Vec<String>,
    type_vocab: Vec<Vec<String>>,
    /// Positional mode: (left, right) marker for each type.
    markers: Option<Vec<(String, String)>>,
    background: Vec<String>,
}

impl SynWorld {
    pub fn new(spec: SynSpec) -> Result<Self> {
        spec.validate()?;
        let types: Vec<String> = spec.type_names.clone().unwrap_or_else(|| {
            (0..spec.num_types)
                .map(|t| format!("type_{}", letters(t)))
                .collect()
        });
        let disjoint = spec.vocab_overlap == 0.0;
        if disjoint && !spec.positional {
            if let Some(t) = types.iter().find(|t| t.bytes().any(|b| b.is_ascii_digit())) {
                return Err(Error::invalid(format!(
                    "type name {t:?} contains digits, which preprocessing would rewrite in its words"
                )));
            }
        }
        let (type_vocab, markers) = if spec.positional {
            let pairs = spec.num_types.div_ceil(2);
            let pair_vocab: Vec<Vec<String>> = (0..pairs)
                .map(|p| {
                    (0..spec.vocab_per_type)
                        .map(|i| format!("pair{}_{}", letters(p), letters(i)))
                        .collect()
                })
                .collect();
            let vocab = (0..spec.num_types)
                .map(|t| pair_vocab[t / 2].clone())
                .collect();
            let markers = (0..spec.num_types)
                .map(|t| {
                    let (a, b) = marker_pair(t / 2);
                    if t % 2 == 0 {
                        (a, b)
                    } else {
                        (b, a)
                    }
                })
                .collect();
            (vocab, Some(markers))
        } else if disjoint {
            let vocab = types
                .iter()
                .map(|t| {
                    (0..spec.vocab_per_type)
                        .map(|i| format!("{t}_{}", letters(i)))
                        .collect()
                })
                .collect();
            (vocab, None)
        } else {
            let stride =
                ((spec.vocab_per_type as f64 * (1.0 - spec.vocab_overlap)).round() as usize).max(1);
            let vocab = (0..spec.num_types)
                .map(|t| {
                    (0..spec.vocab_per_type)
                        .map(|i| format!("w_{}", letters(t * stride + i)))
                        .collect()
                })
                .collect();
            (vocab, None)
        };
        let background: Vec<String> = (0..spec.background_vocab)
            .map(|i| format!("bg_{}", letters(i)))
            .collect();

        let world = SynWorld {
            spec,
            types,
            type_vocab,
            markers,
            background,
        };
        if disjoint || world.spec.positional {
            world.check_collisions()?;
        }
        Ok(world)
    }

    fn check_collisions(&self) -> Result<()> {
        let mut seen: HashSet<&str> = HashSet::new();
        let mut words: Vec<&str> = self.types.iter().map(String::as_str).collect();
        words.extend(self.background.iter().map(String::as_str));
        if let Some(markers) = &self.markers {
            for (t, (a, _)) in markers.iter().enumerate() {
                if t % 2 == 0 {
                    words.push(a);
                    words.push(&markers[t].1);
                }
            }
        }
        for (t, vocab) in self.type_vocab.iter().enumerate() {
            if self.spec.positional && t % 2 == 1 {
                continue;
            }
            words.extend(vocab.iter().map(String::as_str));
        }
        for w in words {
            if !seen.insert(w) {
                return Err(Error::invalid(format!("vocabulary collision on {w:?}")));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &SynSpec {
        &self.spec
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn type_vocab(&self, t: usize) -> &[String] {
        &self.type_vocab[t]
    }

    pub fn background(&self) -> &[String] {
        &self.background
    }

    fn entity_id(&self, i: usize) -> String {
        // fixed width keeps id order equal to generation order
        let total = self.spec.num_types * self.spec.entities_per_type;
        let mut width = 1;
        while 26usize.pow(width) < total {
            width += 1;
        }
        let mut s = vec![b'a'; width as usize];
        let mut rest = i;
        for c in s.iter_mut().rev() {
            *c = b'a' + (rest % 26) as u8;
            rest /= 26;
        }
        format!("ent_{}", String::from_utf8(s).expect("ascii"))
    }

    fn sentence(
        &self,
        entity: &str,
        informative_type: Option<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Sentence {
        let len = self.spec.sentence_length;
        let pos = if self.spec.positional {
            rng.random_range(1..len - 1)
        } else {
            rng.random_range(0..len)
        };
        let pool = match informative_type {
            Some(t) => &self.type_vocab[t],
            None => &self.background,
        };
        let mut tokens: Vec<String> = (0..len)
            .map(|i| {
                if i == pos {
                    entity.to_string()
                } else {
                    pool.choose(rng).expect("non-empty vocabulary").clone()
                }
            })
            .collect();
        if let (Some(t), Some(markers)) = (informative_type, &self.markers) {
            tokens[pos - 1] = markers[t].0.clone();
            tokens[pos + 1] = markers[t].1.clone();
        }
        Sentence {
            tokens,
            mentions: vec![Mention {
                start: pos,
                end: pos + 1,
                entity: entity.to_string(),
            }],
        }
    }

    fn context_type(&self, types: &[usize], rng: &mut ChaCha8Rng) -> Option<usize> {
        rng.random_bool(self.spec.informativeness)
            .then(|| *types.choose(rng).expect("entity has a type"))
    }

    /// Builds the knowledge base and corpus. Sentences appear in a seeded
    /// random order.
    pub fn generate(&self) -> Result<(AnnotatedCorpus, KnowledgeBase)> {
        let spec = &self.spec;
        let mut rng = util::rng(util::sub_seed(spec.seed, "syngen"));
        let extra = if spec.mentions_per_entity > 1.0 {
            Some(
                Poisson::new(spec.mentions_per_entity - 1.0)
                    .map_err(|e| Error::invalid(e.to_string()))?,
            )
        } else {
            None
        };
        let mut rows = Vec::with_capacity(spec.num_types * spec.entities_per_type);
        let mut sentences = Vec::new();
        for notable in 0..spec.num_types {
            for j in 0..spec.entities_per_type {
                let id = self.entity_id(notable * spec.entities_per_type + j);
                let n_types = self.draw_type_count(&mut rng);
                let mut others: Vec<usize> =
                    (0..spec.num_types).filter(|&t| t != notable).collect();
                others.shuffle(&mut rng);
                let mut types = vec![notable];
                types.extend(&others[..n_types - 1]);
                types.sort_unstable();

                let mentions = 1 + extra.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
                for _ in 0..mentions {
                    let t = self.context_type(&types, &mut rng);
                    sentences.push(self.sentence(&id, t, &mut rng));
                }
                rows.push((
                    id,
                    self.types[notable].clone(),
                    types
                        .iter()
                        .map(|&t| self.types[t].clone())
                        .collect::<Vec<_>>(),
                ));
            }
        }
        sentences.shuffle(&mut rng);
        let kb = KnowledgeBase::from_rows(TypeInventory::new(self.types.clone())?, rows)?;
        Ok((AnnotatedCorpus::new(sentences), kb))
    }

    fn draw_type_count(&self, rng: &mut ChaCha8Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.spec.types_per_entity.iter().enumerate() {
            acc += p;
            if u < acc {
                return i + 1;
            }
        }
        self.spec.types_per_entity.len()
    }

    /// Appends `count` sentences whose contexts are informative of
    /// `rare_type` for `entity`. The entity's knowledge-base types are not
    /// changed.
    pub fn plant_rare_signal(
        &self,
        corpus: &AnnotatedCorpus,
        kb: &KnowledgeBase,
        entity: &str,
        rare_type: &str,
        count: usize,
        seed: u64,
    ) -> Result<AnnotatedCorpus> {
        if !kb.contains(entity) {
            return Err(Error::invalid(format!(
                "entity {entity} is not in the knowledge base"
            )));
        }
        let t = self
            .types
            .iter()
            .position(|n| n == rare_type)
            .ok_or_else(|| Error::invalid(format!("type {rare_type} has no vocabulary")))?;
        let mut rng = util::rng(util::sub_seed(seed, "plant"));
        let mut out = corpus.clone();
        for _ in 0..count {
            out.sentences.push(self.sentence(entity, Some(t), &mut rng));
        }
        Ok(out)
    }
}

/// Marker words for a positional type pair: `(first, second)`.
pub fn marker_pair(pair: usize) -> (String, String) {
    (
        format!("mark{}_a", letters(pair)),
        format!("mark{}_b", letters(pair)),
    )
}

pub fn generate(spec: SynSpec) -> Result<(AnnotatedCorpus, KnowledgeBase)> {
    SynWorld::new(spec)?.generate()
}
