//! Annotated corpus handling: text normalisation, mention-context extraction
//! and the two corpus rewrites used to train embeddings.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::util;

/// Fills context positions that fall outside the sentence.
pub const PAD: &str = "<PAD>";
/// Replacement for every maximal run of ASCII digits.
pub const NUMBER_TOKEN: &str = "7";
/// Replacement for web links and e-mail addresses.
pub const LINK_TOKEN: &str = "HTTP";
/// Sentences shorter than this many characters are dropped.
pub const MIN_SENTENCE_CHARS: usize = 40;

static LINK_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"(?i)\b(?:(?:https?|ftp)://|www\.)[^\s]*[^\s.,;:!?)\]'"]|[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(?:\.[A-Za-z0-9\-]+)+"#,
    )
    .unwrap()
});
static DIGITS_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new("[0-9]+").unwrap());

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub entity: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<String>,
    #[serde(default)]
    pub mentions: Vec<Mention>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, mentions: Vec<Mention>) -> Result<Self> {
        let s = Sentence { tokens, mentions };
        s.validate()?;
        Ok(s)
    }

    /// Checks span bounds, non-empty entity ids and that spans do not overlap.
    pub fn validate(&self) -> Result<()> {
        for m in &self.mentions {
            if m.entity.is_empty() {
                return Err(Error::invalid("mention with empty entity id"));
            }
            if m.start >= m.end || m.end > self.tokens.len() {
                return Err(Error::invalid(format!(
                    "mention span [{}, {}) out of bounds for {} tokens",
                    m.start,
                    m.end,
                    self.tokens.len()
                )));
            }
        }
        let mut spans: Vec<(usize, usize)> =
            self.mentions.iter().map(|m| (m.start, m.end)).collect();
        spans.sort_unstable();
        if spans.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(Error::invalid("overlapping mention spans"));
        }
        Ok(())
    }

    fn sorted_mentions(&self) -> Vec<&Mention> {
        let mut ms: Vec<&Mention> = self.mentions.iter().collect();
        ms.sort_by_key(|m| m.start);
        ms
    }
}

/// Sentences with linked entity mentions, stored as JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AnnotatedCorpus {
    pub sentences: Vec<Sentence>,
}

impl AnnotatedCorpus {
    pub fn new(sentences: Vec<Sentence>) -> Self {
        AnnotatedCorpus { sentences }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let mut sentences = Vec::new();
        for (i, line) in util::read_lines(path)?.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let s: Sentence = serde_json::from_str(&line)
                .map_err(|e| Error::parse(&name, i + 1, e.to_string()))?;
            s.validate()
                .map_err(|e| Error::parse(&name, i + 1, e.to_string()))?;
            sentences.push(s);
        }
        Ok(AnnotatedCorpus { sentences })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&serde_json::to_string(s).expect("sentence serialises"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, self.to_jsonl().as_bytes())
    }

    /// Number of mentions per entity id.
    pub fn mention_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for s in &self.sentences {
            for m in &s.mentions {
                *counts.entry(m.entity.clone()).or_insert(0) += 1;
            }
        }
        counts
    }
}

/// Splits on whitespace and emits every non-alphanumeric character as its own
/// token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

fn substitute(text: &str) -> String {
    let text = LINK_RE.replace_all(text, LINK_TOKEN);
    DIGITS_RE.replace_all(&text, NUMBER_TOKEN).into_owned()
}

/// Normalises one raw line of plain text: links and e-mail addresses become
/// `HTTP`, digit runs become `7`, and the line is dropped if it is shorter
/// than [`MIN_SENTENCE_CHARS`] (whitespace collapsed) after substitution.
/// Each input line is one sentence, so the result has zero or one element.
pub fn preprocess(raw_text_line: &str) -> Vec<Sentence> {
    let substituted = substitute(raw_text_line);
    let normalised: Vec<&str> = substituted.split_whitespace().collect();
    let normalised = normalised.join(" ");
    if normalised.chars().count() < MIN_SENTENCE_CHARS {
        return Vec::new();
    }
    let tokens = tokenize(&normalised);
    if tokens.is_empty() {
        return Vec::new();
    }
    vec![Sentence {
        tokens,
        mentions: Vec::new(),
    }]
}

/// Applies the same substitutions and length filter to an already tokenised
/// sentence, token by token, so mention spans stay valid.
pub fn normalize_sentence(sentence: &Sentence) -> Option<Sentence> {
    let tokens: Vec<String> = sentence
        .tokens
        .iter()
        .map(|t| if t == PAD { t.clone() } else { substitute(t) })
        .collect();
    let chars =
        tokens.iter().map(|t| t.chars().count()).sum::<usize>() + tokens.len().saturating_sub(1);
    if chars < MIN_SENTENCE_CHARS {
        return None;
    }
    Some(Sentence {
        tokens,
        mentions: sentence.mentions.clone(),
    })
}

/// Window of units around one mention, nearest position first on both sides.
/// The mention itself is never included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionContext {
    pub entity: String,
    pub left: Vec<String>,
    pub right: Vec<String>,
}

/// One position of a sentence after multi-token mentions of known entities
/// are collapsed to a single slot.
struct Unit<'a> {
    token: &'a str,
    entity: Option<&'a str>,
}

fn units<'a>(sentence: &'a Sentence, kb: &'a KnowledgeBase) -> Vec<Unit<'a>> {
    let mut out = Vec::with_capacity(sentence.tokens.len());
    let mut pos = 0;
    for m in sentence.sorted_mentions() {
        out.extend(sentence.tokens[pos..m.start].iter().map(|t| Unit {
            token: t,
            entity: None,
        }));
        match kb.notable(&m.entity) {
            Some(notable) => out.push(Unit {
                token: kb.types().name(notable),
                entity: Some(&m.entity),
            }),
            None => out.extend(sentence.tokens[m.start..m.end].iter().map(|t| Unit {
                token: t,
                entity: None,
            })),
        }
        pos = m.end;
    }
    out.extend(sentence.tokens[pos..].iter().map(|t| Unit {
        token: t,
        entity: None,
    }));
    out
}

/// One context per mention of a knowledge-base entity, each side holding
/// `max(k, l)` units. Other known mentions in the window appear as their
/// notable type; mentions of unknown entities stay as their surface words.
pub fn extract_contexts(
    sentence: &Sentence,
    kb: &KnowledgeBase,
    k: usize,
    l: usize,
) -> Vec<MentionContext> {
    let width = k.max(l);
    let units = units(sentence, kb);
    let at = |i: isize| -> String {
        if i < 0 || i as usize >= units.len() {
            PAD.to_string()
        } else {
            units[i as usize].token.to_string()
        }
    };
    units
        .iter()
        .enumerate()
        .filter_map(|(p, u)| u.entity.map(|e| (p as isize, e)))
        .map(|(p, entity)| MentionContext {
            entity: entity.to_string(),
            left: (1..=width as isize).map(|d| at(p - d)).collect(),
            right: (1..=width as isize).map(|d| at(p + d)).collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewriteMode {
    /// Every mention span becomes the single token of its entity id.
    EntityId,
    /// Every mention of a known entity becomes its notable type.
    NotableType,
}

impl std::str::FromStr for RewriteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity-id" => Ok(RewriteMode::EntityId),
            "notable-type" => Ok(RewriteMode::NotableType),
            _ => Err(Error::invalid(format!("unknown rewrite mode {s:?}"))),
        }
    }
}

/// Produces the token stream an embedding trainer consumes, one token list per
/// sentence. Sentences mentioning any entity in `exclusions` are dropped.
pub fn rewrite_corpus(
    corpus: &AnnotatedCorpus,
    kb: &KnowledgeBase,
    mode: RewriteMode,
    exclusions: &HashSet<String>,
) -> Vec<Vec<String>> {
    corpus
        .sentences
        .iter()
        .filter(|s| !s.mentions.iter().any(|m| exclusions.contains(&m.entity)))
        .map(|s| {
            let mut out = Vec::with_capacity(s.tokens.len());
            let mut pos = 0;
            for m in s.sorted_mentions() {
                out.extend_from_slice(&s.tokens[pos..m.start]);
                match mode {
                    RewriteMode::EntityId => out.push(m.entity.clone()),
                    RewriteMode::NotableType => match kb.notable(&m.entity) {
                        Some(t) => out.push(kb.types().name(t).to_string()),
                        None => out.extend_from_slice(&s.tokens[m.start..m.end]),
                    },
                }
                pos = m.end;
            }
            out.extend_from_slice(&s.tokens[pos..]);
            out
        })
        .collect()
}

/// Token streams are stored one sentence per line, space separated.
pub fn token_stream_to_string(stream: &[Vec<String>]) -> String {
    let mut out = String::new();
    for s in stream {
        out.push_str(&s.join(" "));
        out.push('\n');
    }
    out
}

pub fn load_token_stream(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(util::read_lines(path)?
        .into_iter()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect())
}
