use std::path::PathBuf;

use facedeblur_tensor::Graph;
use serde::Serialize;

use crate::checkpoint::parser_checkpoint;
use crate::data::{Augmentation, Batches, Dataset};
use crate::error::{Error, Result};
use crate::image::{Image, LabelMap};
use crate::parse_net::{images_to_tensor, pixel_accuracy, ParsingModel};
use crate::trainer::config::{OptimizerConfig, TrainConfig};
use crate::trainer::write_csv;

#[derive(Clone, Debug, PartialEq)]
pub struct ParseTrainOptions {
    pub iters: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    /// Train on degraded inputs with unchanged labels (fine-tuning).
    pub blurred_inputs: bool,
    pub optimizer: OptimizerConfig,
    pub eval_every: u64,
    /// Stop after this many evaluations without a lower validation loss.
    pub patience: usize,
    /// Stop once validation pixel accuracy reaches this value.
    pub target_accuracy: Option<f64>,
    /// Validation entries; the first training entries when empty.
    pub val_entries: Vec<usize>,
    pub checkpoint_every: u64,
    pub out_dir: Option<PathBuf>,
}

impl ParseTrainOptions {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        ParseTrainOptions {
            iters: cfg.parse_iters,
            lr: cfg.lr_parsing,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            augment: cfg.augment,
            blurred_inputs: false,
            optimizer: cfg.optimizer,
            eval_every: cfg.parse_eval_every,
            patience: cfg.parse_patience,
            target_accuracy: None,
            val_entries: Vec::new(),
            checkpoint_every: cfg.checkpoint_every,
            out_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParseEval {
    pub iter: u64,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParseTrainReport {
    pub loss_history: Vec<f64>,
    pub evals: Vec<ParseEval>,
    pub iters_run: u64,
    pub stop_reason: String,
}

fn flat_labels(labels: &[&LabelMap]) -> Vec<usize> {
    labels.iter().flat_map(|l| l.data().iter().map(|&v| v as usize)).collect()
}

/// Mean cross-entropy and pixel accuracy of `model` on `entries`.
pub fn evaluate_parser(model: &ParsingModel<f32>, dataset: &Dataset, entries: &[usize], blurred: bool) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut acc = 0.0;
    for &e in entries {
        let img = if blurred { dataset.blurred(e)? } else { dataset.clear(e).clone() };
        let gt = dataset.labels(e).ok_or_else(|| Error::Config("dataset has no labels".into()))?;
        let mut g = Graph::new();
        let x = g.constant(images_to_tensor::<f32>(&[&img])?);
        let logits = model.forward_graph(&mut g, x, false)?;
        let ce = g.softmax_cross_entropy(logits, &flat_labels(&[gt]))?;
        loss += g.value(ce).item() as f64;
        let scores = g.value(logits);
        let hw = gt.height() * gt.width();
        let pred: Vec<u8> = (0..hw)
            .map(|p| {
                let v = |k: usize| scores.data()[k * hw + p];
                (1..scores.shape()[1]).fold(0, |best, k| if v(k) > v(best) { k } else { best }) as u8
            })
            .collect();
        acc += pixel_accuracy(&LabelMap::new(gt.height(), gt.width(), pred)?, gt);
    }
    let n = entries.len().max(1) as f64;
    Ok((loss / n, acc / n))
}

/// Per-pixel cross-entropy training with Adam, periodic validation, early
/// stopping on a validation-loss plateau and optional checkpoints.
pub fn train_parsing(model: &mut ParsingModel<f32>, dataset: &Dataset, opts: &ParseTrainOptions) -> Result<ParseTrainReport> {
    if !dataset.has_labels() {
        return Err(Error::Config("parsing training needs a dataset with labels".into()));
    }
    if opts.eval_every == 0 {
        return Err(Error::Config("eval_every must be >= 1".into()));
    }
    let val: Vec<usize> =
        if opts.val_entries.is_empty() { (0..dataset.len().min(8)).collect() } else { opts.val_entries.clone() };
    let mut batches = Batches::new(
        dataset,
        (0..dataset.len()).collect(),
        opts.batch_size,
        opts.augment.then(Augmentation::default),
        opts.seed,
    )?;
    let mut adam = opts.optimizer.adam(model.store(), opts.lr);
    let mut report = ParseTrainReport { loss_history: Vec::new(), evals: Vec::new(), iters_run: 0, stop_reason: "budget".into() };
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for it in 1..=opts.iters {
        let batch = batches.next_batch()?;
        let inputs: Vec<&Image> =
            if opts.blurred_inputs { batch.blurred.iter().collect() } else { batch.clear.iter().collect() };
        let labels: Vec<&LabelMap> = batch.labels.iter().map(|l| l.as_ref().expect("labelled dataset")).collect();
        let mut g = Graph::new();
        let x = g.constant(images_to_tensor::<f32>(&inputs)?);
        let logits = model.forward_graph(&mut g, x, true)?;
        let loss = g.softmax_cross_entropy(logits, &flat_labels(&labels))?;
        let lv = g.value(loss).item() as f64;
        if !lv.is_finite() {
            return Err(Error::Numeric(format!("parsing loss {lv} at iteration {it}")));
        }
        let grads = g.param_grads(loss, model.store())?;
        adam.update(model.store_mut(), &grads);
        report.loss_history.push(lv);
        report.iters_run = it;

        if let Some(dir) = &opts.out_dir {
            if opts.checkpoint_every > 0 && it % opts.checkpoint_every == 0 {
                parser_checkpoint(model, &serde_json::json!({ "iter": it }))?.save(&dir.join("parse_last.ckpt"))?;
            }
        }
        if it % opts.eval_every == 0 || it == opts.iters {
            let (vl, va) = evaluate_parser(model, dataset, &val, opts.blurred_inputs)?;
            log::info!("parse iter {it}: train {lv:.5} val {vl:.5} acc {va:.4}");
            report.evals.push(ParseEval { iter: it, loss: vl, accuracy: va });
            if opts.target_accuracy.is_some_and(|t| va >= t) {
                report.stop_reason = "target accuracy".into();
                break;
            }
            if vl < best {
                best = vl;
                stale = 0;
            } else {
                stale += 1;
                if stale >= opts.patience {
                    report.stop_reason = "plateau".into();
                    break;
                }
            }
        }
    }
    if let Some(dir) = &opts.out_dir {
        let meta = serde_json::json!({ "iter": report.iters_run, "stop_reason": report.stop_reason });
        parser_checkpoint(model, &meta)?.save(&dir.join("parse.ckpt"))?;
        let rows: Vec<Vec<String>> =
            report.loss_history.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), l.to_string()]).collect();
        write_csv(&dir.join("parse_loss.csv"), &["iter", "loss"], &rows)?;
    }
    Ok(report)
}
