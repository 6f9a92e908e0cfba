//! Character-level LSTM trainer used to evaluate and retrain quantized models.

pub mod corpus;
pub mod lstm;
pub mod optim;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prune::PruneMask;
use crate::scalar::Scalar;

pub use corpus::{synthetic_text, Corpus, Split, SplitFractions};
pub use lstm::{backward, forward, init_params, sequence_nll, Batch, LstmParams, LstmState};
pub use optim::{apply_param_mask, clip_gradients, grad_check, relative_error, sgd_step, GradCheckReport};

/// How the learning rate behaves across successive retraining runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    /// Every retraining restarts at `lr_init / retrain_lr_divisor`.
    #[default]
    Rewind,
    /// Retraining `i` picks up the decay where retraining `i - 1` stopped.
    Continue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: usize,
    pub layers: usize,
    /// Embedding width; `None` feeds one-hot bytes to the first layer.
    pub embed_dim: Option<usize>,
    pub bptt_len: usize,
    pub batch: usize,
    pub epochs: usize,
    /// Epochs per retraining; `None` uses `epochs`.
    pub retrain_epochs: Option<usize>,
    pub lr_init: f64,
    pub lr_decay: f64,
    pub decay_start_epoch: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub retrain_lr_divisor: f64,
    pub init_scale: f64,
    pub schedule: LrSchedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            layers: 1,
            embed_dim: None,
            bptt_len: 32,
            batch: 16,
            epochs: 6,
            retrain_epochs: None,
            lr_init: 5.0,
            lr_decay: 0.5,
            decay_start_epoch: 3,
            clip_norm: 5.0,
            seed: 1,
            retrain_lr_divisor: 100.0,
            init_scale: 0.1,
            schedule: LrSchedule::Rewind,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("bptt_len", self.bptt_len),
            ("batch", self.batch),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("trainer {name} must be positive")));
        }
        if self.embed_dim == Some(0) {
            return Err(Error::Validation("embed_dim must be positive".into()));
        }
        let reals = [
            ("lr_init", self.lr_init),
            ("lr_decay", self.lr_decay),
            ("clip_norm", self.clip_norm),
            ("init_scale", self.init_scale),
        ];
        if let Some((name, v)) = reals.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Validation(format!("trainer {name} = {v} must be positive")));
        }
        if !(self.retrain_lr_divisor >= 1.0 && self.retrain_lr_divisor.is_finite()) {
            return Err(Error::Validation(format!(
                "retrain_lr_divisor = {} must be at least 1",
                self.retrain_lr_divisor
            )));
        }
        Ok(())
    }

    pub fn retrain_epoch_count(&self) -> usize {
        self.retrain_epochs.unwrap_or(self.epochs)
    }

    pub fn init<T: Scalar>(&self, vocab: usize) -> LstmParams<T> {
        init_params(vocab, self.hidden, self.layers, self.embed_dim, self.init_scale, self.seed)
    }

    /// Learning rate for `epoch` (0-based) of a run in `mode`.
    pub fn lr_at(&self, mode: TrainMode, epoch: usize) -> f64 {
        let (base, e) = match mode {
            TrainMode::Initial => (self.lr_init, epoch),
            TrainMode::Retrain { iteration } => {
                let offset = match self.schedule {
                    LrSchedule::Rewind => 0,
                    LrSchedule::Continue => iteration * self.retrain_epoch_count(),
                };
                (self.lr_init / self.retrain_lr_divisor, offset + epoch)
            }
        };
        base * self.lr_decay.powi(e.saturating_sub(self.decay_start_epoch) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Initial,
    /// The `iteration`-th retraining (0-based), which matters only for
    /// [`LrSchedule::Continue`].
    Retrain { iteration: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_ppl: f64,
}

/// Cuts `tokens` into `batch` contiguous streams and returns the successive
/// `bptt_len` windows across them. A trailing partial window is dropped.
pub fn make_batches(tokens: &[usize], batch: usize, bptt_len: usize) -> Vec<Batch> {
    let stream = tokens.len() / batch;
    if stream < 2 {
        return Vec::new();
    }
    let windows = (stream - 1) / bptt_len;
    (0..windows)
        .map(|w| {
            let start = w * bptt_len;
            let mut inputs = Vec::with_capacity(batch);
            let mut targets = Vec::with_capacity(batch);
            for b in 0..batch {
                let s = &tokens[b * stream..(b + 1) * stream];
                inputs.push(s[start..start + bptt_len].to_vec());
                targets.push(s[start + 1..start + bptt_len + 1].to_vec());
            }
            Batch { inputs, targets }
        })
        .collect()
}

/// Trains `params` in place on the corpus' train split and returns one
/// metrics row per epoch. The recurrent state is carried from window to
/// window and reset at every epoch start.
pub fn train<T: Scalar>(
    params: &mut LstmParams<T>,
    corpus: &Corpus,
    cfg: &TrainConfig,
    mask: Option<&PruneMask>,
    mode: TrainMode,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    if params.vocab != corpus.vocab_size() {
        return Err(Error::Dimension(format!(
            "model vocabulary {} vs corpus vocabulary {}",
            params.vocab,
            corpus.vocab_size()
        )));
    }
    let epochs = match mode {
        TrainMode::Initial => cfg.epochs,
        TrainMode::Retrain { .. } => cfg.retrain_epoch_count(),
    };
    let batches = make_batches(corpus.train(), cfg.batch, cfg.bptt_len);
    if epochs > 0 && batches.is_empty() {
        return Err(Error::Validation(format!(
            "train split of {} tokens is too short for batch {} x bptt {}",
            corpus.train().len(),
            cfg.batch,
            cfg.bptt_len
        )));
    }
    if let Some(mask) = mask {
        apply_param_mask(params, mask);
    }
    let clip = T::of(cfg.clip_norm);
    let mut metrics = Vec::with_capacity(epochs);
    let mut global_step = 0;
    for epoch in 0..epochs {
        let lr = cfg.lr_at(mode, epoch);
        let lr_t = T::of(lr);
        let mut state = LstmState::zeros(params.layers.len(), cfg.batch, params.hidden);
        let mut loss_sum = 0.0;
        for batch in &batches {
            let (loss, next, cache) = forward(params, batch, &state).map_err(|e| match e {
                Error::Numerical { detail, .. } => Error::Numerical {
                    step: global_step,
                    detail: format!("epoch {epoch}: {detail}"),
                },
                other => other,
            })?;
            let mut grads = backward(params, &cache);
            sgd_step(params, &mut grads, lr_t, clip, mask);
            state = next;
            loss_sum += loss.as_f64();
            global_step += 1;
        }
        let valid_ppl = evaluate_perplexity(params, corpus.valid())?;
        metrics.push(EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / batches.len() as f64,
            valid_ppl,
        });
    }
    Ok(metrics)
}

/// `exp(mean NLL)` over `tokens`, read sequentially with batch size 1.
pub fn evaluate_perplexity<T: Scalar>(params: &LstmParams<T>, tokens: &[usize]) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::Validation("perplexity needs at least two tokens".into()));
    }
    let (total, n) = sequence_nll(params, tokens)?;
    Ok((total.as_f64() / n as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_corpus() -> Corpus {
        Corpus::from_bytes(synthetic_text(20_000, 3).as_bytes(), SplitFractions::default()).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            hidden: 24,
            bptt_len: 16,
            batch: 8,
            epochs: 2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn retrain_lr_is_reduced_by_divisor() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(TrainMode::Retrain { iteration: 4 }, 0), cfg.lr_init / 100.0);
        assert_eq!(cfg.lr_at(TrainMode::Initial, 0), cfg.lr_init);
        let late = cfg.decay_start_epoch + 2;
        assert_eq!(cfg.lr_at(TrainMode::Initial, late), cfg.lr_init * 0.25);
        let cont = TrainConfig {
            schedule: LrSchedule::Continue,
            ..cfg.clone()
        };
        assert!(cont.lr_at(TrainMode::Retrain { iteration: 1 }, 0) < cfg.lr_at(TrainMode::Retrain { iteration: 1 }, 0));
    }

    #[test]
    fn zero_epochs_is_identity() {
        let corpus = small_corpus();
        let cfg = TrainConfig { epochs: 0, ..small_cfg() };
        let mut p = cfg.init::<f64>(corpus.vocab_size());
        let before = p.clone();
        assert!(train(&mut p, &corpus, &cfg, None, TrainMode::Initial).unwrap().is_empty());
        assert_eq!(p, before);
    }

    #[test]
    fn zero_params_perplexity_is_vocab_size() {
        let p = LstmParams::<f64>::zeros(13, 4, 1, None);
        let tokens: Vec<usize> = (0..50).map(|i| i % 13).collect();
        let ppl = evaluate_perplexity(&p, &tokens).unwrap();
        assert!((ppl - 13.0).abs() < 1e-9);
    }

    #[test]
    fn training_beats_untrained_and_is_deterministic() {
        let corpus = small_corpus();
        let cfg = small_cfg();
        let mut a = cfg.init::<f64>(corpus.vocab_size());
        let untrained = evaluate_perplexity(&a, corpus.valid()).unwrap();
        let m = train(&mut a, &corpus, &cfg, None, TrainMode::Initial).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m[1].valid_ppl < untrained);
        assert!(m[1].valid_ppl >= 1.0);
        let mut b = cfg.init::<f64>(corpus.vocab_size());
        train(&mut b, &corpus, &cfg, None, TrainMode::Initial).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batches_cover_streams() {
        let tokens: Vec<usize> = (0..103).collect();
        let b = make_batches(&tokens, 4, 5);
        // streams of 25 tokens give (25 - 1) / 5 = 4 windows
        assert_eq!(b.len(), 4);
        assert_eq!(b[1].inputs[2], vec![55, 56, 57, 58, 59]);
        assert_eq!(b[1].targets[2], vec![56, 57, 58, 59, 60]);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = TrainConfig {
            retrain_lr_divisor: 0.5,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
    }
}
