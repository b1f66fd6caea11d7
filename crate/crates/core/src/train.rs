//! Seeded splitting, the deferred-update training loop, and evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::features::SampleMode;
use crate::loss::{argmax, multitask_loss, PolarityMap};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{AvModel, PreparedSample};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::ParamStore;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Batches whose gradients are summed before one optimizer step.
    pub accumulation_steps: usize,
    pub seed: u64,
    /// Weights of the fused, visual-branch and audio-branch losses.
    pub branch_loss_weights: [f64; 3],
    /// Stop once the post-epoch training accuracy reaches this value.
    pub target_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1.5e-4,
            weight_decay: 2e-2,
            epochs: 30,
            batch_size: 8,
            accumulation_steps: 4,
            seed: 0,
            branch_loss_weights: [1.0; 3],
            target_acc: None,
        }
    }
}

impl TrainConfig {
    /// Settings for small synthetic sets: a larger step size and more epochs.
    pub fn desk() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 200,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.accumulation_steps == 0 || self.epochs == 0 {
            return Err(Error::Config(
                "train.batch_size, train.accumulation_steps and train.epochs must be >= 1".into(),
            ));
        }
        if self.branch_loss_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("branch loss weights must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..Default::default()
        }
    }
}

/// Split `n` items into `(train, test)` index lists by a seeded shuffle;
/// the train part has `round(n·train_fraction)` items.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Config(format!("split fraction {train_fraction} outside [0, 1]")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = (n as f64 * train_fraction).round() as usize;
    let test = idx.split_off(k);
    Ok((idx, test))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub acc: f64,
    pub wa_f1: f64,
    pub uar: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    pub optimizer_steps: u64,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |e| e.loss)
    }
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub preds: Vec<usize>,
    /// `E⁴_a ‖ E⁴_v` per sample.
    pub embeddings: Vec<Vec<f64>>,
}

fn labelled(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::Numerical { op, detail } => Error::Numerical {
            op,
            detail: format!("{detail} (epoch {epoch}, batch {batch})"),
        },
        other => other,
    }
}

/// Train `params` in place. `on_epoch` sees each epoch's log as soon as it
/// is computed. Epoch metrics come from an eval-mode pass over the training
/// set after the epoch's updates.
pub fn train<T: Scalar>(
    model: &AvModel,
    params: &mut ParamStore<T>,
    data: &[PreparedSample],
    cfg: &TrainConfig,
    pm: &PolarityMap,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    pm.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if pm.num_classes() != model.cfg.num_classes {
        return Err(Error::Config(format!(
            "polarity map covers {} classes, model predicts {}",
            pm.num_classes(),
            model.cfg.num_classes
        )));
    }
    let mut opt = AdamW::new(cfg.optimizer(), params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    params.zero_grad();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut pending = 0usize;
        let mut loss_sum = 0.0;
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for (b, batch) in batches.iter().enumerate() {
            let inputs = batch
                .iter()
                .map(|&i| data[i].input::<T, _>(&model.cfg, SampleMode::Train, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let labels: Vec<usize> = batch.iter().map(|&i| data[i].label).collect();
            let grads = {
                let mut tape = Tape::with_params(params);
                let mut step = || -> Result<_> {
                    let (fused, visual, audio, _) = model.forward_batch(&mut tape, &inputs)?;
                    let loss = multitask_loss(&mut tape, fused, visual, audio, &labels, pm, cfg.branch_loss_weights)?;
                    let value = tape.value(loss).item().as_f64();
                    if !value.is_finite() {
                        return Err(Error::Numerical {
                            op: "loss",
                            detail: format!("loss is {value}"),
                        });
                    }
                    Ok((tape.backward(loss)?, value))
                };
                step().map_err(|e| labelled(e, epoch, b + 1))?
            };
            loss_sum += grads.1;
            params.accumulate(&grads.0);
            pending += 1;
            if pending == cfg.accumulation_steps {
                opt.step(params, 1.0 / pending as f64);
                params.zero_grad();
                pending = 0;
            }
        }
        if pending > 0 {
            opt.step(params, 1.0 / pending as f64);
            params.zero_grad();
        }
        let eval = evaluate(model, params, data)?;
        let log = EpochLog {
            epoch,
            loss: loss_sum / batches.len() as f64,
            acc: eval.report.acc,
            wa_f1: eval.report.wa_f1,
            uar: eval.report.uar,
        };
        on_epoch(&log);
        let done = cfg.target_acc.is_some_and(|t| log.acc >= t);
        history.push(log);
        if done {
            break;
        }
    }
    Ok(TrainOutcome {
        history,
        optimizer_steps: opt.steps(),
    })
}

/// Eval-mode predictions, metrics and embeddings.
pub fn evaluate<T: Scalar>(model: &AvModel, params: &ParamStore<T>, data: &[PreparedSample]) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Input("evaluation set is empty".into()));
    }
    // eval mode draws nothing; the generator only satisfies the signature
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut preds = Vec::with_capacity(data.len());
    let mut embeddings = Vec::with_capacity(data.len());
    for chunk in data.chunks(16) {
        let inputs = chunk
            .iter()
            .map(|s| s.input::<T, _>(&model.cfg, SampleMode::Eval, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::with_params(params);
        let (fused, _, _, outs) = model.forward_batch(&mut tape, &inputs)?;
        let logits = tape.value(fused);
        for (i, o) in outs.iter().enumerate() {
            preds.push(argmax(logits.row(i)));
            let mut e: Vec<f64> = tape.value(o.e4_a).data().iter().map(|v| v.as_f64()).collect();
            e.extend(tape.value(o.e4_v).data().iter().map(|v| v.as_f64()));
            embeddings.push(e);
        }
    }
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    Ok(Evaluation {
        report: compute_metrics(&preds, &labels, model.cfg.num_classes)?,
        preds,
        embeddings,
    })
}
