use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Tape, Tensor};
use crate::error::{Error, Result};
use crate::gnn::{masked_cross_entropy, Batch, DiffModel, ModelConfig};
use crate::graph::{Dataset, Task, Unit};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: DiffModel,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub curve: Vec<EpochRecord>,
}

/// One optimizer step on `batch`; returns the training loss before the step.
fn step(model: &mut DiffModel, adam: &mut Adam, batch: &Batch, gumbel: &mut rng::Rng) -> Result<f64> {
    let mut tape = Tape::new();
    let fwd = model.forward_train(&mut tape, batch, gumbel)?;
    let loss = tape.value(fwd.loss).data()[0];
    let grads = tape.backward(fwd.loss)?;
    let mut grad_list: Vec<Tensor> = Vec::with_capacity(6 * fwd.params.len());
    for (mlp, vars) in model.blocks().zip(&fwd.params) {
        for (param, &v) in mlp.params().into_iter().zip(&vars.0) {
            grad_list.push(grads.get_or_zeros(v, param));
        }
    }
    drop(tape);
    let mut params: Vec<&mut Tensor> = model.blocks_mut().flat_map(|m| m.params_mut()).collect();
    adam.step(&mut params, &grad_list)?;
    for (mlp, stats) in model.blocks_mut().zip(&fwd.stats) {
        if let Some(s) = stats {
            mlp.update_running_stats(s, crate::autodiff::BN_MOMENTUM);
        }
    }
    Ok(loss)
}

/// Trains on `fit` with early stopping on the validation loss. `stream` separates the
/// random streams of independent runs (e.g. folds) that share a config seed.
pub fn train(
    dataset: &Dataset,
    fit: &[Unit],
    validation: &[Unit],
    config: &ModelConfig,
    stream: u64,
) -> Result<TrainedModel> {
    config.validate()?;
    config.check_dataset(dataset)?;
    if fit.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut model = DiffModel::initialized_stream(config.clone(), stream)?;
    let mut adam = Adam::new(config.adam);
    let mut gumbel = rng::substream(config.seed, "gumbel", stream);
    let mut shuffler = rng::substream(config.seed, "minibatch", stream);

    let minibatched =
        config.task == Task::GraphClassification && dataset.graphs.len() > config.full_batch_limit;
    let full_batch = (!minibatched).then(|| Batch::from_units(dataset, fit));
    let val_batch = (!validation.is_empty()).then(|| Batch::from_units(dataset, validation));

    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut curve = Vec::new();
    let mut order = fit.to_vec();

    for epoch in 0..config.epochs {
        let train_loss = match &full_batch {
            Some(batch) => step(&mut model, &mut adam, batch, &mut gumbel)?,
            None => {
                order.shuffle(&mut shuffler);
                let mut sum = 0.0;
                let mut chunks = 0;
                for chunk in order.chunks(config.batch_size) {
                    let batch = Batch::from_units(dataset, chunk);
                    sum += step(&mut model, &mut adam, &batch, &mut gumbel)?;
                    chunks += 1;
                }
                sum / chunks as f64
            }
        };
        if !train_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: train_loss,
            });
        }
        let validation_loss = match &val_batch {
            Some(batch) => {
                let trace = model.forward_eval(batch)?;
                masked_cross_entropy(&trace.logits, &batch.targets)
            }
            None => train_loss,
        };
        curve.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
        if validation_loss < best_loss {
            best_loss = validation_loss;
            best_epoch = epoch;
            best = model.clone();
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    Ok(TrainedModel {
        model: best,
        best_epoch,
        epochs_run: curve.len(),
        curve,
    })
}
