//! The iterative loop: quantize, record, dequantize as initialization,
//! retrain at full precision, repeat. Optional magnitude pruning runs once up
//! front.

mod histogram;
mod records;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::bundle::{save_model, ModelBundle};
use crate::error::{Error, Result};
use crate::prune::{magnitude_prune, save_mask, PruneMask, PruneScope};
use crate::quant::{dequantize, quantize_tensor, save_quantized, AlphaDtype, Method, QuantConfig, QuantizedTensor};
use crate::tensor::sse;
use crate::train::{train, evaluate_perplexity, Corpus, EpochMetrics, LstmParams, SplitFractions, TrainConfig, TrainMode};

pub use histogram::{histogram, histogram_export, histogram_export_quantized, write_histogram_csv};
pub use records::{early_stop_check, EpochLog, IterationRecord, RecordWriter, StopDecision};

/// Recurrent weight matrices of every LSTM layer.
pub const DEFAULT_TENSOR_FILTER: &str = r"^lstm\.\d+\.w_[xh]$";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub bits: usize,
    pub tables_per_row: usize,
    pub method: Method,
    pub alt_tol: f64,
    pub alt_max_iters: usize,
    pub iterations: usize,
    pub prune_rate: f64,
    pub prune_scope: PruneScope,
    /// Regex over tensor names selecting what gets pruned and quantized.
    pub tensor_filter: String,
    pub trainer: TrainConfig,
    /// Stop once quantized perplexity has not improved for this many iterations.
    pub early_stop_patience: Option<usize>,
    /// Text file to train on; `None` uses the built-in synthetic prose.
    pub corpus: Option<PathBuf>,
    pub synthetic_bytes: usize,
    pub synthetic_seed: u64,
    pub splits: SplitFractions,
    /// Start from this IQWT checkpoint instead of training from scratch.
    pub initial_checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub save_quantized: bool,
    pub alpha_dtype: AlphaDtype,
    /// Bins per exported histogram; 0 disables histograms.
    pub histogram_bins: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let q = QuantConfig::default();
        Self {
            bits: 1,
            tables_per_row: 1,
            method: Method::Alternating,
            alt_tol: q.tol,
            alt_max_iters: q.max_iters,
            iterations: 5,
            prune_rate: 0.0,
            prune_scope: PruneScope::PerTensor,
            tensor_filter: DEFAULT_TENSOR_FILTER.into(),
            trainer: TrainConfig::default(),
            early_stop_patience: None,
            corpus: None,
            synthetic_bytes: 200_000,
            synthetic_seed: 1,
            splits: SplitFractions::default(),
            initial_checkpoint: None,
            output_dir: None,
            save_quantized: false,
            alpha_dtype: AlphaDtype::F32,
            histogram_bins: 0,
        }
    }
}

impl PipelineConfig {
    pub fn quant_config(&self) -> QuantConfig {
        QuantConfig {
            bits: self.bits,
            tables_per_row: self.tables_per_row,
            method: self.method,
            tol: self.alt_tol,
            max_iters: self.alt_max_iters,
        }
    }

    pub fn filter(&self) -> Result<Regex> {
        Regex::new(&self.tensor_filter)
            .map_err(|e| Error::Validation(format!("tensor_filter {:?}: {e}", self.tensor_filter)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Validation("iterations must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.prune_rate) {
            return Err(Error::Validation(format!("prune_rate {} outside [0, 1)", self.prune_rate)));
        }
        if self.early_stop_patience == Some(0) {
            return Err(Error::Validation("early_stop_patience must be at least 1".into()));
        }
        if self.histogram_bins == 1 {
            return Err(Error::Validation("histogram_bins must be 0 or at least 2".into()));
        }
        crate::quant::QuantizedTensor::<f64>::validate_layout(1, self.tables_per_row, self.bits, self.tables_per_row)?;
        self.filter()?;
        self.trainer.validate()
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        match &self.corpus {
            Some(path) => Corpus::from_file(path, self.splits),
            None => Corpus::from_bytes(
                crate::train::synthetic_text(self.synthetic_bytes, self.synthetic_seed).as_bytes(),
                self.splits,
            ),
        }
    }
}

/// Training backend driven by the pipeline.
pub trait Retrainer {
    fn train(&mut self, weights: &mut ModelBundle<f64>, mask: Option<&PruneMask>, mode: TrainMode) -> Result<Vec<EpochMetrics>>;

    /// Validation perplexity of `weights`.
    fn evaluate(&self, weights: &ModelBundle<f64>) -> Result<f64>;
}

/// [`Retrainer`] backed by the character LSTM.
pub struct LstmRetrainer<'a> {
    pub corpus: &'a Corpus,
    pub cfg: TrainConfig,
}

impl Retrainer for LstmRetrainer<'_> {
    fn train(&mut self, weights: &mut ModelBundle<f64>, mask: Option<&PruneMask>, mode: TrainMode) -> Result<Vec<EpochMetrics>> {
        let mut p = LstmParams::from_bundle(weights)?;
        let metrics = train(&mut p, self.corpus, &self.cfg, mask, mode)?;
        let metadata = std::mem::take(&mut weights.metadata);
        *weights = p.to_bundle();
        weights.metadata.extend(metadata);
        Ok(metrics)
    }

    fn evaluate(&self, weights: &ModelBundle<f64>) -> Result<f64> {
        evaluate_perplexity(&LstmParams::from_bundle(weights)?, self.corpus.valid())
    }
}

/// Squared distance between the dequantized values of two quantizations of
/// the same tensor.
pub fn drift(prev: &QuantizedTensor<f64>, curr: &QuantizedTensor<f64>) -> Result<f64> {
    if prev.shape() != curr.shape() || prev.bits() != curr.bits() || prev.tables_per_row() != curr.tables_per_row() {
        return Err(Error::Dimension(format!(
            "drift between {:?} k={} T={} and {:?} k={} T={}",
            prev.shape(),
            prev.bits(),
            prev.tables_per_row(),
            curr.shape(),
            curr.bits(),
            curr.tables_per_row()
        )));
    }
    sse(&dequantize(prev), &dequantize(curr))
}

/// Weights the pipeline starts from.
pub enum Start {
    /// Train these from scratch first.
    Untrained(ModelBundle<f64>),
    /// Already trained; go straight to pruning or quantization.
    Trained(ModelBundle<f64>),
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub records: Vec<IterationRecord>,
    pub epochs: Vec<EpochLog>,
    /// Full-precision weights after the first training phase (and pruning).
    pub initial: ModelBundle<f64>,
    /// Full-precision weights after the last retraining.
    pub final_weights: ModelBundle<f64>,
    /// Quantized tensors of the iteration with the lowest quantized perplexity.
    pub best_iteration: usize,
    pub best_quantized: Vec<(String, QuantizedTensor<f64>)>,
    pub mask: Option<PruneMask>,
    pub stopped_early: bool,
}

impl PipelineOutcome {
    /// The best quantized tensors dequantized into the weights they came from.
    pub fn best_dequantized(&self, template: &ModelBundle<f64>) -> Result<ModelBundle<f64>> {
        let mut b = template.clone();
        for (name, q) in &self.best_quantized {
            b.replace(name, dequantize(q))?;
        }
        Ok(b)
    }
}

fn quantize_selected(
    weights: &ModelBundle<f64>,
    names: &[String],
    qcfg: &QuantConfig,
    mask: Option<&PruneMask>,
) -> Result<Vec<(String, QuantizedTensor<f64>, f64)>> {
    names
        .iter()
        .map(|name| {
            let m = weights
                .get(name)
                .ok_or_else(|| Error::Validation(format!("tensor {name:?} disappeared from the model")))?;
            let bits = mask.and_then(|mk| mk.bits(name));
            let (q, report) = quantize_tensor(m, qcfg, bits)?;
            Ok((name.clone(), q, report.total_sse()))
        })
        .collect()
}

/// Runs the whole procedure and, when `cfg.output_dir` is set, writes
/// `config.json`, `records.csv` (flushed every iteration), `epochs.csv`,
/// the final model and the optional quantized artifacts and histograms.
pub fn run_pipeline(cfg: &PipelineConfig, retrainer: &mut dyn Retrainer, start: Start) -> Result<PipelineOutcome> {
    run_pipeline_observed(cfg, retrainer, start, &mut |_| {})
}

/// [`run_pipeline`] that hands every record to `on_record` as soon as it is
/// complete.
pub fn run_pipeline_observed(
    cfg: &PipelineConfig,
    retrainer: &mut dyn Retrainer,
    start: Start,
    on_record: &mut dyn FnMut(&IterationRecord),
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let qcfg = cfg.quant_config();
    let filter = cfg.filter()?;
    let out = cfg.output_dir.as_deref();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(cfg).expect("config serializes");
        fs::write(dir.join("config.json"), json).map_err(|e| Error::io(dir.join("config.json"), e))?;
        if cfg.histogram_bins > 0 {
            let h = dir.join("histograms");
            fs::create_dir_all(&h).map_err(|e| Error::io(&h, e))?;
        }
    }

    let mut epochs: Vec<EpochLog> = Vec::new();
    let (mut weights, needs_training) = match start {
        Start::Untrained(b) => (b, true),
        Start::Trained(b) => (b, false),
    };
    let names: Vec<String> = weights.names().filter(|n| filter.is_match(n)).map(str::to_string).collect();
    if names.is_empty() {
        return Err(Error::Validation(format!("tensor_filter {:?} selects no tensors", cfg.tensor_filter)));
    }
    let mut writer = match out {
        Some(dir) => Some(RecordWriter::create(dir, &names)?),
        None => None,
    };
    let log_epochs = |phase: &str, metrics: Vec<EpochMetrics>, epochs: &mut Vec<EpochLog>, writer: &mut Option<RecordWriter>| -> Result<()> {
        let rows: Vec<EpochLog> = metrics.into_iter().map(|m| EpochLog::new(phase, m)).collect();
        if let Some(w) = writer {
            w.write_epochs(&rows)?;
        }
        epochs.extend(rows);
        Ok(())
    };

    if needs_training {
        let m = retrainer.train(&mut weights, None, TrainMode::Initial)?;
        log_epochs("initial", m, &mut epochs, &mut writer)?;
    }
    let mask = if cfg.prune_rate > 0.0 {
        let mask = magnitude_prune(&weights, cfg.prune_rate, cfg.prune_scope, |n| filter.is_match(n))?;
        mask.apply_to_bundle(&mut weights)?;
        let m = retrainer.train(&mut weights, Some(&mask), TrainMode::Initial)?;
        log_epochs("prune", m, &mut epochs, &mut writer)?;
        if let Some(dir) = out {
            save_mask(&mask, dir.join("mask.iqmk"))?;
        }
        Some(mask)
    } else {
        None
    };
    let initial = weights.clone();

    let mut records: Vec<IterationRecord> = Vec::new();
    let mut previous: Option<Vec<(String, QuantizedTensor<f64>, f64)>> = None;
    let mut best: Option<(usize, f64, Vec<(String, QuantizedTensor<f64>)>)> = None;
    let mut stopped_early = false;
    for n in 1..=cfg.iterations {
        let started = Instant::now();
        let quantized = quantize_selected(&weights, &names, &qcfg, mask.as_ref())?;
        let mut q_weights = weights.clone();
        for (name, q, _) in &quantized {
            q_weights.replace(name, dequantize(q))?;
        }
        let fp_ppl = retrainer.evaluate(&weights)?;
        let q_ppl = retrainer.evaluate(&q_weights)?;
        let drift_total = match &previous {
            Some(prev) => {
                let mut total = 0.0;
                for ((_, a, _), (_, b, _)) in prev.iter().zip(&quantized) {
                    total += drift(a, b)?;
                }
                Some(total)
            }
            None => None,
        };
        let tensor_sse: BTreeMap<String, f64> = quantized.iter().map(|(n, _, s)| (n.clone(), *s)).collect();

        if let Some(dir) = out {
            if cfg.save_quantized {
                let qdir = dir.join(format!("iter_{n:03}"));
                fs::create_dir_all(&qdir).map_err(|e| Error::io(&qdir, e))?;
                for (name, q, _) in &quantized {
                    save_quantized(q, cfg.alpha_dtype, qdir.join(format!("{name}.iqqt")))?;
                }
            }
            if cfg.histogram_bins > 0 {
                let h = dir.join("histograms");
                for (name, q, _) in &quantized {
                    let fp = weights.get(name).expect("selected tensor exists");
                    histogram_export(fp, cfg.histogram_bins, &h.join(format!("iter_{n:03}_{name}_fp.csv")))?;
                    histogram_export_quantized(q, cfg.histogram_bins, &h.join(format!("iter_{n:03}_{name}_q.csv")))?;
                }
            }
        }

        if best.as_ref().is_none_or(|(_, p, _)| q_ppl < *p) {
            best = Some((n, q_ppl, quantized.iter().map(|(n, q, _)| (n.clone(), q.clone())).collect()));
        }
        let mut record = IterationRecord {
            n,
            total_sse: tensor_sse.values().sum(),
            tensor_sse,
            fp_ppl,
            q_ppl,
            drift: drift_total,
            seconds: 0.0,
        };
        previous = Some(quantized);

        let q_history: Vec<f64> = records.iter().map(|r| r.q_ppl).chain([q_ppl]).collect();
        let stop = cfg
            .early_stop_patience
            .is_some_and(|p| early_stop_check(&q_history, p) == StopDecision::Stop);
        if !stop {
            weights = q_weights;
            let result = retrainer.train(&mut weights, mask.as_ref(), TrainMode::Retrain { iteration: n - 1 });
            record.seconds = started.elapsed().as_secs_f64();
            match result {
                Ok(m) => log_epochs(&format!("retrain_{n}"), m, &mut epochs, &mut writer)?,
                Err(e) => {
                    if let Some(w) = &mut writer {
                        w.write_record(&record)?;
                    }
                    return Err(e);
                }
            }
        } else {
            record.seconds = started.elapsed().as_secs_f64();
        }
        if let Some(w) = &mut writer {
            w.write_record(&record)?;
        }
        on_record(&record);
        records.push(record);
        if stop {
            stopped_early = true;
            break;
        }
    }

    let (best_iteration, _, best_quantized) = best.expect("at least one iteration ran");
    let outcome = PipelineOutcome {
        records,
        epochs,
        initial,
        final_weights: weights,
        best_iteration,
        best_quantized,
        mask,
        stopped_early,
    };
    if let Some(dir) = out {
        write_final_artifacts(dir, cfg, &outcome)?;
    }
    Ok(outcome)
}

fn write_final_artifacts(dir: &Path, cfg: &PipelineConfig, outcome: &PipelineOutcome) -> Result<()> {
    save_model(&outcome.final_weights.cast::<f32>(), dir.join("model_final.iqwt"))?;
    let best = outcome.best_dequantized(&outcome.final_weights)?;
    save_model(&best.cast::<f32>(), dir.join("model_best_quantized.iqwt"))?;
    let bdir = dir.join("best");
    fs::create_dir_all(&bdir).map_err(|e| Error::io(&bdir, e))?;
    for (name, q) in &outcome.best_quantized {
        save_quantized(q, cfg.alpha_dtype, bdir.join(format!("{name}.iqqt")))?;
    }
    Ok(())
}

/// Builds the LSTM, trains it (or loads `cfg.initial_checkpoint`) and runs the
/// pipeline on the configured corpus.
pub fn run_lstm_pipeline(
    cfg: &PipelineConfig,
    corpus: &Corpus,
    on_record: &mut dyn FnMut(&IterationRecord),
) -> Result<PipelineOutcome> {
    let start = match &cfg.initial_checkpoint {
        Some(path) => Start::Trained(crate::bundle::load_model::<f64>(path)?),
        None => Start::Untrained(cfg.trainer.init::<f64>(corpus.vocab_size()).to_bundle()),
    };
    let mut retrainer = LstmRetrainer {
        corpus,
        cfg: cfg.trainer.clone(),
    };
    run_pipeline_observed(cfg, &mut retrainer, start, on_record)
}
