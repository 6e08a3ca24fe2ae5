use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::prediction_from_logits;
use super::{Hyperparams, TrafficNet};
use crate::error::{Error, Result};
use crate::nn::{seeded_rng, AdamState};

/// One line of the training history stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the training-mode forward passes made during the epoch.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrafficNet,
    pub history: Vec<EpochRecord>,
    pub optimizer_steps: u64,
}

/// Mini-batch Adam training with seeded shuffling and dropout.
///
/// Each epoch shuffles the sample order, walks it in `hp.batchsize` chunks
/// (the final short chunk is kept) and takes one optimizer step per chunk.
/// `on_epoch` sees every finished epoch and may stop training by returning
/// `ControlFlow::Break`.
pub fn train<G, F>(
    mut model: TrafficNet,
    graphs: &[G],
    labels: &[usize],
    hp: &Hyperparams,
    seed: u64,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    G: AsRef<[u8]>,
    F: FnMut(&EpochRecord, &TrafficNet) -> ControlFlow<()>,
{
    hp.validate()?;
    if graphs.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    if graphs.len() != labels.len() {
        return Err(Error::arg(format!("{} graphs but {} labels", graphs.len(), labels.len())));
    }
    let mut rng = seeded_rng(seed);
    let mut adam = AdamState::new(model.tensors());
    let mut grads = model.zeros_like();
    let mut order: Vec<usize> = (0..graphs.len()).collect();
    let mut history = Vec::new();

    for epoch in 1..=hp.epoch {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(hp.batchsize) {
            let batch: Vec<&[u8]> = chunk.iter().map(|&i| graphs[i].as_ref()).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, logits) = model.loss_into(&batch, &batch_labels, hp, Some(&mut rng), &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::arg(format!("non-finite loss at epoch {epoch}")));
            }
            loss_sum += loss * chunk.len() as f64;
            correct += batch_labels
                .iter()
                .enumerate()
                .filter(|&(r, &l)| prediction_from_logits(logits.row(r)).label == l)
                .count();
            let grad_refs = grads.tensors();
            adam.step(&mut model.tensors_mut(), &grad_refs, hp.learn_rate)?;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / graphs.len() as f64,
            train_accuracy: correct as f64 / graphs.len() as f64,
        };
        let flow = on_epoch(&record, &model);
        history.push(record);
        if flow.is_break() {
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        optimizer_steps: adam.t,
    })
}
