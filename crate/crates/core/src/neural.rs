//! One-hidden-layer perceptron with a logistic output unit per type.
//!
//! `p_t(x) = sigmoid(head_t · tanh(W x + b) + c_t)`, trained on the mean over
//! examples of the summed per-type binary cross-entropy with minibatch
//! AdaGrad and dev-set early stopping.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    n: usize,
    h: usize,
    num_types: usize,
    /// h × n, row-major.
    w_input: Vec<f64>,
    b_input: Vec<f64>,
    /// num_types × h, row-major; row t is the weight vector of head t.
    w_heads: Vec<f64>,
    b_heads: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub features: Vec<f64>,
    /// Multi-hot, one entry per type.
    pub labels: Vec<f64>,
}

impl LabeledExample {
    pub fn new(features: Vec<f64>, labels: Vec<f64>) -> Self {
        LabeledExample { features, labels }
    }
}

/// Cached activations of one forward pass.
struct Pass {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl Mlp {
    pub fn zeros(n: usize, h: usize, num_types: usize) -> Self {
        Mlp {
            n,
            h,
            num_types,
            w_input: vec![0.0; h * n],
            b_input: vec![0.0; h],
            w_heads: vec![0.0; num_types * h],
            b_heads: vec![0.0; num_types],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(n: usize, h: usize, num_types: usize, seed: u64) -> Result<Self> {
        if n == 0 || h == 0 || num_types == 0 {
            return Err(Error::invalid("MLP sizes must be positive"));
        }
        let mut rng = util::rng(seed);
        let mut mlp = Mlp::zeros(n, h, num_types);
        let r_in = (6.0 / (n + h) as f64).sqrt();
        let r_out = (6.0 / (h + num_types) as f64).sqrt();
        mlp.w_input
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-r_in..r_in));
        mlp.w_heads
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-r_out..r_out));
        Ok(mlp)
    }

    pub fn from_parts(
        n: usize,
        h: usize,
        num_types: usize,
        w_input: Vec<f64>,
        b_input: Vec<f64>,
        w_heads: Vec<f64>,
        b_heads: Vec<f64>,
    ) -> Result<Self> {
        let mlp = Mlp {
            n,
            h,
            num_types,
            w_input,
            b_input,
            w_heads,
            b_heads,
        };
        mlp.check_shapes()?;
        Ok(mlp)
    }

    fn check_shapes(&self) -> Result<()> {
        let expect = [
            (self.w_input.len(), self.h * self.n),
            (self.b_input.len(), self.h),
            (self.w_heads.len(), self.num_types * self.h),
            (self.b_heads.len(), self.num_types),
        ];
        for (got, expected) in expect {
            if got != expected {
                return Err(Error::Dimension { expected, got });
            }
        }
        if self
            .params()
            .iter()
            .any(|g| g.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid("non-finite MLP parameter"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.n
    }

    pub fn hidden_dim(&self) -> usize {
        self.h
    }

    pub fn num_types(&self) -> usize {
        self.num_types
    }

    /// Parameter groups in a fixed order: input weights, input bias, head
    /// weights, head biases.
    pub fn params(&self) -> [&[f64]; 4] {
        [&self.w_input, &self.b_input, &self.w_heads, &self.b_heads]
    }

    pub fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            &mut self.w_input,
            &mut self.b_input,
            &mut self.w_heads,
            &mut self.b_heads,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|g| g.len()).sum()
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                got: features.len(),
            });
        }
        Ok(())
    }

    fn pass(&self, x: &[f64]) -> Pass {
        let hidden: Vec<f64> = (0..self.h)
            .map(|j| {
                let row = &self.w_input[j * self.n..(j + 1) * self.n];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b_input[j];
                z.tanh()
            })
            .collect();
        let logits = (0..self.num_types)
            .map(|t| {
                let row = &self.w_heads[t * self.h..(t + 1) * self.h];
                row.iter().zip(&hidden).map(|(w, a)| w * a).sum::<f64>() + self.b_heads[t]
            })
            .collect();
        Pass { hidden, logits }
    }

    /// Per-type probabilities, each strictly inside (0, 1).
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.check_input(features)?;
        Ok(self
            .pass(features)
            .logits
            .into_iter()
            .map(|z| util::sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
            .collect())
    }

    fn check_example(&self, ex: &LabeledExample) -> Result<()> {
        self.check_input(&ex.features)?;
        if ex.labels.len() != self.num_types {
            return Err(Error::Dimension {
                expected: self.num_types,
                got: ex.labels.len(),
            });
        }
        Ok(())
    }

    /// Mean summed binary cross-entropy over `batch`.
    pub fn loss(&self, batch: &[LabeledExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut total = 0.0;
        for ex in batch {
            self.check_example(ex)?;
            total += bce_with_logits(&self.pass(&ex.features).logits, &ex.labels);
        }
        Ok(total / batch.len() as f64)
    }

    /// Loss and its exact gradient, returned as an `Mlp` of the same shape.
    pub fn loss_and_gradient(&self, batch: &[LabeledExample]) -> Result<(f64, Mlp)> {
        let refs: Vec<&LabeledExample> = batch.iter().collect();
        self.loss_and_gradient_refs(&refs)
    }

    fn loss_and_gradient_refs(&self, batch: &[&LabeledExample]) -> Result<(f64, Mlp)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut grad = Mlp::zeros(self.n, self.h, self.num_types);
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        let mut d_hidden = vec![0.0; self.h];
        for ex in batch {
            self.check_example(ex)?;
            let Pass { hidden, logits } = self.pass(&ex.features);
            total += bce_with_logits(&logits, &ex.labels);

            d_hidden.iter_mut().for_each(|v| *v = 0.0);
            for t in 0..self.num_types {
                let dz = (util::sigmoid(logits[t]) - ex.labels[t]) * scale;
                grad.b_heads[t] += dz;
                let w_row = &self.w_heads[t * self.h..(t + 1) * self.h];
                let g_row = &mut grad.w_heads[t * self.h..(t + 1) * self.h];
                for j in 0..self.h {
                    g_row[j] += dz * hidden[j];
                    d_hidden[j] += dz * w_row[j];
                }
            }
            for j in 0..self.h {
                let du = d_hidden[j] * (1.0 - hidden[j] * hidden[j]);
                if du == 0.0 {
                    continue;
                }
                grad.b_input[j] += du;
                let g_row = &mut grad.w_input[j * self.n..(j + 1) * self.n];
                for (g, x) in g_row.iter_mut().zip(&ex.features) {
                    *g += du * x;
                }
            }
        }
        Ok((total * scale, grad))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                n: self.n,
                h: self.h,
                num_types: self.num_types,
                version: CHECKPOINT_VERSION,
            },
            w_input: self.w_input.clone(),
            b_input: self.b_input.clone(),
            w_heads: self.w_heads.clone(),
            b_heads: self.b_heads.clone(),
        }
    }

    pub fn from_checkpoint(c: Checkpoint) -> Result<Self> {
        if c.header.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {}",
                c.header.version
            )));
        }
        Mlp::from_parts(
            c.header.n,
            c.header.h,
            c.header.num_types,
            c.w_input,
            c.b_input,
            c.w_heads,
            c.b_heads,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())?;
        util::write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Mlp::from_checkpoint(serde_json::from_str(&text)?)
    }
}

/// On-disk form: a header followed by row-major parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub w_input: Vec<f64>,
    pub b_input: Vec<f64>,
    pub w_heads: Vec<f64>,
    pub b_heads: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub n: usize,
    pub h: usize,
    pub num_types: usize,
    pub version: u32,
}

fn bce_with_logits(logits: &[f64], labels: &[f64]) -> f64 {
    logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z)
        .sum()
}

/// `acc += g²; p -= lr · g / (sqrt(acc) + eps)`, element-wise.
pub fn adagrad_step(
    params: &mut [f64],
    grads: &[f64],
    accumulators: &mut [f64],
    learning_rate: f64,
    epsilon: f64,
) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), accumulators.len());
    for ((p, &g), a) in params.iter_mut().zip(grads).zip(accumulators.iter_mut()) {
        *a += g * g;
        *p -= learning_rate * g / (a.sqrt() + epsilon);
    }
}

/// AdaGrad state for a whole network.
#[derive(Debug, Clone)]
pub struct AdaGrad {
    accumulators: Mlp,
}

impl AdaGrad {
    pub fn new(like: &Mlp) -> Self {
        AdaGrad {
            accumulators: Mlp::zeros(like.n, like.h, like.num_types),
        }
    }

    pub fn step(&mut self, mlp: &mut Mlp, grad: &Mlp, cfg: &TrainConfig) {
        for ((p, g), a) in mlp
            .params_mut()
            .into_iter()
            .zip(grad.params())
            .zip(self.accumulators.params_mut())
        {
            adagrad_step(p, g, a, cfg.learning_rate, cfg.adagrad_epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopCriterion {
    DevLoss,
    /// Micro F1 of example-level decisions at probability 0.5.
    DevMicroF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adagrad_epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub stop_on: StopCriterion,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            adagrad_epsilon: 1e-8,
            batch_size: 128,
            max_epochs: 50,
            patience: 3,
            seed: 1,
            stop_on: StopCriterion::DevLoss,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.adagrad_epsilon > 0.0) {
            return Err(Error::invalid(
                "learning rate and AdaGrad epsilon must be positive",
            ));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch size and max epochs must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    pub dev_micro_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev score.
    pub mlp: Mlp,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

fn dev_micro_f1(mlp: &Mlp, dev: &[LabeledExample]) -> Result<f64> {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for ex in dev {
        for (p, y) in mlp.forward(&ex.features)?.into_iter().zip(&ex.labels) {
            match (p >= 0.5, *y > 0.5) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    Ok(util::f1(tp, fp, fn_))
}

/// Trains a network with `hidden` units. Epoch 0 is the initialisation; after
/// every epoch the dev criterion is measured and training stops once it has
/// failed to improve for more than `patience` consecutive epochs.
pub fn train(
    examples: &[LabeledExample],
    dev: &[LabeledExample],
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() || dev.is_empty() {
        return Err(Error::invalid("training and dev sets must be non-empty"));
    }
    let n = examples[0].features.len();
    let num_types = examples[0].labels.len();
    for ex in examples.iter().chain(dev) {
        if ex.features.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: ex.features.len(),
            });
        }
        if ex.labels.len() != num_types {
            return Err(Error::Dimension {
                expected: num_types,
                got: ex.labels.len(),
            });
        }
    }

    let mut mlp = Mlp::init(n, hidden, num_types, util::sub_seed(cfg.seed, "mlp-init"))?;
    let mut opt = AdaGrad::new(&mlp);
    let mut rng = util::rng(util::sub_seed(cfg.seed, "mlp-shuffle"));
    let mut order: Vec<usize> = (0..examples.len()).collect();

    // higher is better for both criteria after negating the loss
    let score = |stats: &EpochStats| match cfg.stop_on {
        StopCriterion::DevLoss => -stats.dev_loss,
        StopCriterion::DevMicroF1 => stats.dev_micro_f1,
    };
    let initial = EpochStats {
        epoch: 0,
        train_loss: mlp.loss(examples)?,
        dev_loss: mlp.loss(dev)?,
        dev_micro_f1: dev_micro_f1(&mlp, dev)?,
    };
    let mut best_score = score(&initial);
    let mut best = (mlp.clone(), 0usize);
    let mut history = vec![initial];
    let mut stale = 0;

    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &examples[i]));
            let (loss, grad) = mlp.loss_and_gradient_refs(&batch)?;
            opt.step(&mut mlp, &grad, cfg);
            loss_sum += loss;
            batches += 1;
        }
        if mlp
            .params()
            .iter()
            .any(|g| g.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid(format!(
                "training diverged at epoch {epoch}"
            )));
        }
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / batches as f64,
            dev_loss: mlp.loss(dev)?,
            dev_micro_f1: dev_micro_f1(&mlp, dev)?,
        };
        log::debug!(
            "epoch {epoch}: train loss {:.5}, dev loss {:.5}, dev micro-F1 {:.4}",
            stats.train_loss,
            stats.dev_loss,
            stats.dev_micro_f1
        );
        let s = score(&stats);
        history.push(stats);
        if s > best_score {
            best_score = s;
            best = (mlp.clone(), epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        mlp: best.0,
        best_epoch: best.1,
        history,
    })
}
