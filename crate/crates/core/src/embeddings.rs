//! Skipgram embeddings with negative sampling, and the text-format table they
//! are stored in.
//!
//! The trainer follows the classic word2vec recipe: for every token, a window
//! size is drawn uniformly from `1..=window`, each neighbour's input vector is
//! trained to predict the centre token against `negatives` noise tokens drawn
//! from the unigram distribution raised to 0.75, and the learning rate decays
//! linearly to `1e-4` of its starting value.
//!
//! Parameters live in `AtomicU32` cells holding `f32` bits. With one worker
//! the updates are sequential and fully reproducible; with several workers
//! the threads update shared rows without locks (Hogwild-style), which is
//! fast but not deterministic.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::PAD;
use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipgramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub min_count: u64,
    pub learning_rate: f32,
    /// Frequent-token subsampling threshold (word2vec's `-sample`); off when
    /// `None`.
    pub subsample: Option<f64>,
    pub seed: u64,
    pub workers: usize,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig {
            dim: 100,
            window: 5,
            negatives: 5,
            epochs: 5,
            min_count: 5,
            learning_rate: 0.025,
            subsample: None,
            seed: 1,
            workers: 1,
        }
    }
}

impl SkipgramConfig {
    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.window == 0 || self.epochs == 0 || self.workers == 0 {
            return Err(Error::invalid(
                "skipgram dim, window, epochs and workers must be positive",
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("skipgram learning rate must be positive"));
        }
        Ok(())
    }
}

/// Token vectors of a fixed dimension.
#[derive(Debug)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    vocab: HashMap<String, usize>,
    vectors: Vec<f32>,
    counts: Option<Vec<u64>>,
    zeros: Vec<f32>,
    oov: AtomicU64,
}

impl Clone for EmbeddingTable {
    fn clone(&self) -> Self {
        EmbeddingTable {
            dim: self.dim,
            tokens: self.tokens.clone(),
            vocab: self.vocab.clone(),
            vectors: self.vectors.clone(),
            counts: self.counts.clone(),
            zeros: self.zeros.clone(),
            oov: AtomicU64::new(self.oov_lookups()),
        }
    }
}

impl EmbeddingTable {
    pub fn new(
        tokens: Vec<String>,
        dim: usize,
        vectors: Vec<f32>,
        counts: Option<Vec<u64>>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if vectors.len() != tokens.len() * dim {
            return Err(Error::Dimension {
                expected: tokens.len() * dim,
                got: vectors.len(),
            });
        }
        if let Some(c) = &counts {
            if c.len() != tokens.len() {
                return Err(Error::invalid("counts length differs from vocabulary size"));
            }
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite embedding component"));
        }
        let mut vocab = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("bad vocabulary token {t:?}")));
            }
            if vocab.insert(t.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(EmbeddingTable {
            dim,
            tokens,
            vocab,
            vectors,
            counts,
            zeros: vec![0.0; dim],
            oov: AtomicU64::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index(&self, token: &str) -> Option<usize> {
        self.vocab.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.contains_key(token)
    }

    /// Corpus frequency, known only for tables produced by training.
    pub fn count(&self, token: &str) -> Option<u64> {
        let i = self.index(token)?;
        self.counts.as_ref().map(|c| c[i])
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    /// Vector of `token`. PAD and unknown tokens map to the zero vector;
    /// unknown tokens also bump [`oov_lookups`](Self::oov_lookups).
    pub fn lookup(&self, token: &str) -> &[f32] {
        match self.vocab.get(token) {
            Some(&i) => self.row(i),
            None => {
                if token != PAD {
                    self.oov.fetch_add(1, Ordering::Relaxed);
                }
                &self.zeros
            }
        }
    }

    pub fn oov_lookups(&self) -> u64 {
        self.oov.load(Ordering::Relaxed)
    }

    pub fn to_text(&self) -> Result<String> {
        use std::fmt::Write;
        let mut out = String::with_capacity(self.vectors.len() * 12);
        writeln!(out, "{} {}", self.tokens.len(), self.dim).unwrap();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(t);
            for v in self.row(i) {
                if !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "non-finite component in vector of {t}"
                    )));
                }
                write!(out, " {v}").unwrap();
            }
            out.push('\n');
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_atomic(path, self.to_text()?.as_bytes())
    }

    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
        let mut parts = header.split_whitespace();
        let mut field = |what: &str| -> Result<usize> {
            parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(origin, 1, format!("bad header: missing {what}")))
        };
        let size = field("vocab size")?;
        let dim = field("dim")?;
        if dim == 0 {
            return Err(Error::parse(origin, 1, "dimension must be positive"));
        }
        let mut tokens = Vec::with_capacity(size);
        let mut vectors = Vec::with_capacity(size * dim);
        for (i, line) in lines {
            if tokens.len() == size {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!("more rows than the header's {size}"),
                ));
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap();
            let before = vectors.len();
            for p in parts {
                let v: f32 = p
                    .parse()
                    .map_err(|_| Error::parse(origin, i + 1, format!("bad float {p:?}")))?;
                if !v.is_finite() {
                    return Err(Error::parse(origin, i + 1, "non-finite component"));
                }
                vectors.push(v);
            }
            if vectors.len() - before != dim {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    format!(
                        "expected {dim} components, found {}",
                        vectors.len() - before
                    ),
                ));
            }
            tokens.push(token.to_string());
        }
        if tokens.len() != size {
            return Err(Error::parse(
                origin,
                tokens.len() + 2,
                format!("header announces {size} rows, found {}", tokens.len()),
            ));
        }
        Self::new(tokens, dim, vectors, None)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        dot += f64::from(x) * f64::from(y);
        na += f64::from(x) * f64::from(x);
        nb += f64::from(y) * f64::from(y);
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Token frequencies of the stream, as `(token, count)` sorted by descending
/// count and then by token, keeping tokens seen at least `min_count` times.
pub fn build_vocab(sentences: &[Vec<String>], min_count: u64) -> Vec<(String, u64)> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for s in sentences {
        for t in s {
            *counts.entry(t.as_str()).or_insert(0) += 1;
        }
    }
    let mut vocab: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|&(t, c)| c >= min_count && t != PAD)
        .map(|(t, c)| (t.to_string(), c))
        .collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    vocab
}

/// Negative-sampling distribution: counts raised to 0.75, normalised.
pub fn noise_distribution(counts: &[u64]) -> Vec<f64> {
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

struct NoiseSampler {
    cumulative: Vec<f64>,
}

impl NoiseSampler {
    fn new(probabilities: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        NoiseSampler { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

struct SharedMatrix {
    cells: Vec<AtomicU32>,
    dim: usize,
}

impl SharedMatrix {
    fn from_values(values: impl IntoIterator<Item = f32>, dim: usize) -> Self {
        SharedMatrix {
            cells: values
                .into_iter()
                .map(|v| AtomicU32::new(v.to_bits()))
                .collect(),
            dim,
        }
    }

    #[inline]
    fn get(&self, row: usize, col: usize) -> f32 {
        f32::from_bits(self.cells[row * self.dim + col].load(Ordering::Relaxed))
    }

    #[inline]
    fn add(&self, row: usize, col: usize, delta: f32) {
        let cell = &self.cells[row * self.dim + col];
        let v = f32::from_bits(cell.load(Ordering::Relaxed)) + delta;
        cell.store(v.to_bits(), Ordering::Relaxed);
    }

    fn into_values(self) -> Vec<f32> {
        self.cells
            .into_iter()
            .map(|c| f32::from_bits(c.into_inner()))
            .collect()
    }
}

struct Trainer<'a> {
    cfg: &'a SkipgramConfig,
    input: SharedMatrix,
    output: SharedMatrix,
    noise: NoiseSampler,
    keep_prob: Option<Vec<f64>>,
    processed: AtomicU64,
    total: u64,
}

impl Trainer<'_> {
    fn run_shard(&self, sentences: &[Vec<usize>], shard: usize, stride: usize, seed: u64) {
        let mut rng = util::rng(seed);
        let dim = self.cfg.dim;
        let mut grad = vec![0.0f32; dim];
        let mut kept = Vec::new();
        for _ in 0..self.cfg.epochs {
            for sentence in sentences.iter().skip(shard).step_by(stride) {
                let done = self
                    .processed
                    .fetch_add(sentence.len() as u64, Ordering::Relaxed);
                let progress = done as f32 / (self.total as f32 + 1.0);
                let alpha = self.cfg.learning_rate * (1.0 - progress).max(1e-4);
                kept.clear();
                match &self.keep_prob {
                    None => kept.extend_from_slice(sentence),
                    Some(p) => kept.extend(
                        sentence
                            .iter()
                            .copied()
                            .filter(|&w| p[w] >= rng.random::<f64>()),
                    ),
                }
                for centre in 0..kept.len() {
                    let reduce = rng.random_range(0..self.cfg.window);
                    let span = self.cfg.window - reduce;
                    let lo = centre.saturating_sub(span);
                    let hi = (centre + span).min(kept.len() - 1);
                    for ctx in lo..=hi {
                        if ctx != centre {
                            self.train_pair(kept[ctx], kept[centre], alpha, &mut grad, &mut rng);
                        }
                    }
                }
            }
        }
    }

    fn train_pair<R: Rng>(
        &self,
        input: usize,
        target: usize,
        alpha: f32,
        grad: &mut [f32],
        rng: &mut R,
    ) {
        let dim = self.cfg.dim;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for n in 0..=self.cfg.negatives {
            let (out, label) = if n == 0 {
                (target, 1.0f32)
            } else {
                let w = self.noise.sample(rng);
                if w == target {
                    continue;
                }
                (w, 0.0)
            };
            let mut dot = 0.0f32;
            for d in 0..dim {
                dot += self.input.get(input, d) * self.output.get(out, d);
            }
            let g = (label - util::sigmoid(f64::from(dot)) as f32) * alpha;
            for (d, gd) in grad.iter_mut().enumerate() {
                *gd += g * self.output.get(out, d);
                self.output.add(out, d, g * self.input.get(input, d));
            }
        }
        for (d, gd) in grad.iter().enumerate() {
            self.input.add(input, d, *gd);
        }
    }
}

/// Trains skipgram embeddings over `sentences` (each a token list; windows do
/// not cross sentence boundaries).
pub fn train_skipgram(sentences: &[Vec<String>], cfg: &SkipgramConfig) -> Result<EmbeddingTable> {
    cfg.validate()?;
    let vocab = build_vocab(sentences, cfg.min_count);
    if vocab.is_empty() {
        return Err(Error::invalid(format!(
            "empty vocabulary after min_count {} filtering",
            cfg.min_count
        )));
    }
    let index: HashMap<&str, usize> = vocab
        .iter()
        .enumerate()
        .map(|(i, (t, _))| (t.as_str(), i))
        .collect();
    let encoded: Vec<Vec<usize>> = sentences
        .iter()
        .map(|s| {
            s.iter()
                .filter_map(|t| index.get(t.as_str()).copied())
                .collect::<Vec<_>>()
        })
        .filter(|s| s.len() > 1)
        .collect();
    let counts: Vec<u64> = vocab.iter().map(|(_, c)| *c).collect();
    let total_tokens: u64 = counts.iter().sum();

    let keep_prob = cfg.subsample.map(|s| {
        let threshold = s * total_tokens as f64;
        counts
            .iter()
            .map(|&c| {
                let c = c as f64;
                ((c / threshold).sqrt() + 1.0) * threshold / c
            })
            .collect()
    });

    let dim = cfg.dim;
    let mut init_rng = util::rng(util::sub_seed(cfg.seed, "skipgram-init"));
    let input_init: Vec<f32> = (0..vocab.len() * dim)
        .map(|_| (init_rng.random::<f32>() - 0.5) / dim as f32)
        .collect();
    let trainer = Trainer {
        cfg,
        input: SharedMatrix::from_values(input_init, dim),
        output: SharedMatrix::from_values(std::iter::repeat_n(0.0, vocab.len() * dim), dim),
        noise: NoiseSampler::new(&noise_distribution(&counts)),
        keep_prob,
        processed: AtomicU64::new(0),
        total: encoded.iter().map(|s| s.len() as u64).sum::<u64>() * cfg.epochs as u64,
    };

    if cfg.workers == 1 {
        trainer.run_shard(
            &encoded,
            0,
            1,
            util::sub_seed(cfg.seed, "skipgram-worker-0"),
        );
    } else {
        std::thread::scope(|scope| {
            for w in 0..cfg.workers {
                let trainer = &trainer;
                let encoded = &encoded;
                scope.spawn(move || {
                    trainer.run_shard(
                        encoded,
                        w,
                        cfg.workers,
                        util::sub_seed(cfg.seed, &format!("skipgram-worker-{w}")),
                    )
                });
            }
        });
    }

    let vectors = trainer.input.into_values();
    let tokens = vocab.into_iter().map(|(t, _)| t).collect();
    EmbeddingTable::new(tokens, dim, vectors, Some(counts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sents(text: &str) -> Vec<Vec<String>> {
        text.lines()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    fn small_cfg() -> SkipgramConfig {
        SkipgramConfig {
            dim: 8,
            window: 2,
            epochs: 2,
            min_count: 1,
            ..SkipgramConfig::default()
        }
    }

    #[test]
    fn vocab_counts() {
        let table = train_skipgram(&sents("a b a"), &small_cfg()).unwrap();
        assert_eq!(table.tokens(), &["a".to_string(), "b".to_string()]);
        assert_eq!(table.count("a"), Some(2));
        assert_eq!(table.count("b"), Some(1));
    }

    #[test]
    fn vocab_matches_brute_force_count() {
        let stream = sents("x y z x\nz z q\nx");
        let vocab = build_vocab(&stream, 1);
        for (tok, c) in &vocab {
            let brute = stream.iter().flatten().filter(|t| *t == tok).count() as u64;
            assert_eq!(*c, brute);
        }
        assert_eq!(vocab.iter().map(|v| v.1).sum::<u64>(), 8);
        assert_eq!(build_vocab(&stream, 3).len(), 2);
    }

    #[test]
    fn empty_vocab_is_an_error() {
        let err = train_skipgram(
            &sents("a b c"),
            &SkipgramConfig {
                min_count: 5,
                ..small_cfg()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("empty vocabulary"));
    }

    #[test]
    fn noise_distribution_sums_to_one() {
        let p = noise_distribution(&[100, 7, 1, 33, 2]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p[0] > p[3] && p[3] > p[1]);
    }

    #[test]
    fn single_worker_training_is_bit_identical() {
        let stream = sents("a b c d\nb c d e\nc d e a\na c e b");
        let a = train_skipgram(&stream, &small_cfg()).unwrap();
        let b = train_skipgram(&stream, &small_cfg()).unwrap();
        assert_eq!(a.vectors, b.vectors);
        let c = train_skipgram(
            &stream,
            &SkipgramConfig {
                seed: 9,
                ..small_cfg()
            },
        )
        .unwrap();
        assert_ne!(a.vectors, c.vectors);
    }

    #[test]
    fn multi_worker_training_produces_finite_vectors() {
        let stream: Vec<Vec<String>> = (0..200)
            .map(|i| sents(&format!("w{} w{} w{} w{}", i % 7, i % 5, i % 3, i % 11)).remove(0))
            .collect();
        let t = train_skipgram(
            &stream,
            &SkipgramConfig {
                workers: 4,
                ..small_cfg()
            },
        )
        .unwrap();
        assert!(t.vectors.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn subsampling_runs() {
        let stream: Vec<Vec<String>> = (0..100)
            .map(|_| sents("the the the cat sat").remove(0))
            .collect();
        let t = train_skipgram(
            &stream,
            &SkipgramConfig {
                subsample: Some(1e-3),
                ..small_cfg()
            },
        )
        .unwrap();
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn lookup_pad_and_oov() {
        let t = EmbeddingTable::new(vec!["a".into()], 2, vec![0.5, -1.0], None).unwrap();
        assert_eq!(t.lookup("a"), &[0.5, -1.0]);
        assert_eq!(t.lookup(PAD), &[0.0, 0.0]);
        assert_eq!(t.oov_lookups(), 0);
        assert_eq!(t.lookup("held-out"), &[0.0, 0.0]);
        assert_eq!(t.lookup("held-out"), &[0.0, 0.0]);
        assert_eq!(t.oov_lookups(), 2);
    }

    #[test]
    fn text_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let table = train_skipgram(&sents("a b c a\nb c a b"), &small_cfg()).unwrap();
        let p = dir.path().join("emb.txt");
        table.save(&p).unwrap();
        let back = EmbeddingTable::load(&p).unwrap();
        assert_eq!(back.tokens(), table.tokens());
        for (x, y) in back.vectors.iter().zip(&table.vectors) {
            assert!((x - y).abs() <= 1e-6);
        }
        assert_eq!(back.to_text().unwrap(), table.to_text().unwrap());
    }

    #[test]
    fn malformed_files_are_rejected() {
        assert!(EmbeddingTable::from_text("2 3\na 1 2 3\nb 1 2 3\nc 1 2 3\n", "t").is_err());
        assert!(EmbeddingTable::from_text("2 3\na 1 2 3\nb 1 2\n", "t").is_err());
        assert!(EmbeddingTable::from_text("2 3\na 1 2 3\n", "t").is_err());
        assert!(EmbeddingTable::from_text("", "t").is_err());
        assert!(EmbeddingTable::from_text("1 2\na 1 NaN\n", "t").is_err());
        assert!(EmbeddingTable::from_text("1 2\na 1 x\n", "t").is_err());
        assert!(EmbeddingTable::from_text("2 1\na 1\na 2\n", "t").is_err());
        assert!(EmbeddingTable::from_text("1 2\na 1 2\n", "t").is_ok());
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!(cosine(&[1.0, 0.0], &[0.0, 3.0]).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }
}
