//! Training loop: cross-entropy over softmax logits, Adam with a staged
//! learning-rate schedule, per-epoch validation, and checkpointing keyed by
//! the configuration hash. Per-sample gradients inside a minibatch run in
//! parallel but are reduced in index order, so results do not depend on the
//! number of worker threads.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint, CheckpointMeta};
use crate::config::NetworkConfig;
use crate::data::{minibatches, Dataset, Split};
use crate::error::{ModelError, Result};
use crate::metrics::{accuracy, auc_macro_ovr};
use crate::net::Network;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const HISTORY_HEADER: &str = "epoch,loss,lr,val_auc,val_acc\n";

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Loss and logit gradient of softmax cross-entropy for one sample.
pub fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    let loss = log_sum - logits[label];
    let mut d = softmax(logits);
    d[label] -= 1.0;
    (loss, d)
}

/// Staged step sizes: 1e-3 for the first fifty epochs, then 1e-4 to
/// seventy-five, then 1e-5.
pub fn lr_schedule(epoch: usize) -> f64 {
    if epoch < 50 {
        1e-3
    } else if epoch < 75 {
        1e-4
    } else {
        1e-5
    }
}

pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(len: usize) -> Adam {
        Adam { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn from_state(m: Vec<f64>, v: Vec<f64>, step: u64) -> Adam {
        Adam { m, v, step }
    }

    pub fn apply(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.step += 1;
        let bias1 = 1.0 - BETA1.powi(self.step as i32);
        let bias2 = 1.0 - BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grads[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub auc: f64,
    pub acc: f64,
    /// Classes absent from the split, skipped by the macro AUC.
    pub skipped: Vec<usize>,
}

pub fn evaluate(
    net: &Network,
    params: &[f64],
    split: &Split,
    num_classes: usize,
) -> Result<EvalResult> {
    let scores: Vec<Vec<f64>> = (0..split.n)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let (logits, _) = net.forward(params, &split.image_f64(i))?;
            Ok(softmax(&logits))
        })
        .collect::<Result<_>>()?;
    let acc = accuracy(&scores, &split.labels)?;
    let (auc, skipped) = auc_macro_ovr(&scores, &split.labels, num_classes)?;
    Ok(EvalResult { auc, acc, skipped })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub arch: String,
    pub dataset: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub test_auc: f64,
    pub test_acc: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub summary: RunSummary,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| ModelError::Io(e.error))?;
    Ok(())
}

/// Drop any history rows at or past `epoch_next` so an interrupted run and
/// its resumed continuation produce exactly the same file.
fn rewrite_history(path: &Path, epoch_next: usize) -> Result<()> {
    let mut out = String::from(HISTORY_HEADER);
    if path.exists() {
        let text = std::fs::read_to_string(path)?;
        for line in text.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let epoch: usize = line
                .split(',')
                .next()
                .and_then(|f| f.parse().ok())
                .ok_or_else(|| ModelError::Format(format!("bad history row: {line}")))?;
            if epoch < epoch_next {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    write_atomic(path, out.as_bytes())
}

pub fn run_dir_name(config: &NetworkConfig) -> String {
    format!("{}-seed{}", config.config_hash(), config.seed)
}

/// Train to the configured epoch budget, checkpointing every epoch. With
/// `resume` the run picks up from `last.ckpt` in its run directory — same
/// parameters, optimizer moments, and step counter — and appends to the
/// existing history. Returns the test metrics of the best-validation epoch.
pub fn train_run(
    config: &NetworkConfig,
    dataset: &Dataset,
    output_dir: &Path,
    resume: bool,
) -> Result<TrainOutcome> {
    if config.num_classes != dataset.num_classes || config.channels != dataset.channels {
        return Err(ModelError::Config(format!(
            "configuration expects {} classes × {} channels but dataset {} has {} × {}",
            config.num_classes, config.channels, dataset.id, dataset.num_classes, dataset.channels
        )));
    }
    let net = Network::new(config.clone())?;
    let run_dir = output_dir.join(run_dir_name(config));
    std::fs::create_dir_all(&run_dir)?;
    let last_path = run_dir.join("last.ckpt");
    let best_path = run_dir.join("best.ckpt");
    let history_path = run_dir.join("history.csv");

    let (mut params, mut adam, epoch_next, mut best_val_auc, mut best_epoch) =
        if resume && last_path.exists() {
            let ckpt = checkpoint::load(&last_path)?;
            if ckpt.meta.config.config_hash() != config.config_hash() {
                return Err(ModelError::Checkpoint(format!(
                    "{} belongs to configuration {}, not {}",
                    last_path.display(),
                    ckpt.meta.config.config_hash(),
                    config.config_hash()
                )));
            }
            if ckpt.meta.seed != config.seed {
                return Err(ModelError::Checkpoint(format!(
                    "{} was trained with seed {}, not {}",
                    last_path.display(),
                    ckpt.meta.seed,
                    config.seed
                )));
            }
            (
                ckpt.params,
                Adam::from_state(ckpt.adam_m, ckpt.adam_v, ckpt.meta.adam_step),
                ckpt.meta.epoch_next,
                ckpt.meta.best_val_auc,
                ckpt.meta.best_epoch,
            )
        } else {
            (net.init_params(config.seed), Adam::new(net.layout.total), 0, -1.0, 0)
        };
    rewrite_history(&history_path, epoch_next)?;

    for epoch in epoch_next..config.epochs {
        let lr = lr_schedule(epoch);
        let mut loss_sum = 0.0;
        for batch in minibatches(dataset.train.n, config.batch_size, config.seed, epoch) {
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&idx| -> Result<(f64, Vec<f64>)> {
                    let image = dataset.train.image_f64(idx);
                    let (logits, cache) = net.forward(&params, &image)?;
                    let (loss, d_logits) = cross_entropy(&logits, dataset.train.labels[idx]);
                    let grads = net.backward(&params, &cache, &d_logits)?;
                    Ok((loss, grads))
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / results.len() as f64;
            let mut grad = vec![0.0; net.layout.total];
            for (loss, g) in &results {
                loss_sum += loss;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v * scale;
                }
            }
            adam.apply(&mut params, &grad, lr);
        }
        let train_loss = loss_sum / dataset.train.n as f64;
        let val = evaluate(&net, &params, &dataset.val, dataset.num_classes)?;
        let mut history = OpenOptions::new().append(true).open(&history_path)?;
        writeln!(history, "{epoch},{train_loss},{lr},{},{}", val.auc, val.acc)?;
        history.flush()?;

        let improved = val.auc > best_val_auc;
        if improved {
            best_val_auc = val.auc;
            best_epoch = epoch;
        }
        let ckpt = Checkpoint {
            meta: CheckpointMeta {
                config: config.clone(),
                manifest: net.layout.entries.clone(),
                epoch_next: epoch + 1,
                adam_step: adam.step,
                best_val_auc,
                best_epoch,
                seed: config.seed,
            },
            params: params.clone(),
            adam_m: adam.m.clone(),
            adam_v: adam.v.clone(),
        };
        if improved {
            checkpoint::save(&best_path, &ckpt)?;
        }
        checkpoint::save(&last_path, &ckpt)?;
    }

    let best = checkpoint::load(&best_path)?;
    let test = evaluate(&net, &best.params, &dataset.test, dataset.num_classes)?;
    let summary = RunSummary {
        config_hash: config.config_hash(),
        seed: config.seed,
        arch: config.arch.name().to_string(),
        dataset: dataset.id.clone(),
        epochs: config.epochs,
        best_epoch: best.meta.best_epoch,
        best_val_auc: best.meta.best_val_auc,
        test_auc: test.auc,
        test_acc: test.acc,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| ModelError::Format(format!("summary encoding: {e}")))?;
    write_atomic(&run_dir.join("summary.json"), json.as_bytes())?;
    Ok(TrainOutcome { run_dir, summary })
}
