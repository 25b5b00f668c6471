//! Training loop, batched prediction, and the whole-model finite-difference
//! gradient check.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::SampleBatch;
use crate::error::{Error, Result};
use crate::graph::DetectorGraph;
use crate::layers::Mode;
use crate::model::{masked_mae_loss, DetectorNet, ModelConfig};
use crate::optim::AdamState;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative decay applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Early-stop patience in epochs of non-improving validation MAE.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainRunConfig {
    fn default() -> Self {
        TrainRunConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 100,
            weight_decay: 1e-5,
            max_epochs: 100,
            patience: 20,
            seed: 42,
        }
    }
}

impl TrainRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.max_epochs == 0
            || self.patience == 0
            || self.lr_decay_every == 0
        {
            return Err(Error::Config(
                "batch_size, max_epochs, patience, and lr_decay_every must be positive".into(),
            ));
        }
        if self.learning_rate <= 0.0 || self.lr_decay <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "learning_rate and lr_decay must be positive, weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate in effect during a 0-indexed epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mae: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    /// True if any batch in the run had an all-zero mask and was skipped.
    pub saw_empty_mask: bool,
}

/// Full training run: seeded shuffling, Adam with the stepped learning-rate
/// schedule, per-epoch validation masked MAE on the raw scale, best-val
/// checkpointing, and early stopping.
pub fn train(
    model: &mut DetectorNet,
    graph: &DetectorGraph,
    train_batch: &SampleBatch,
    val_batch: &SampleBatch,
    run: &TrainRunConfig,
) -> Result<TrainOutcome> {
    run.validate()?;
    if train_batch.is_empty() {
        return Err(Error::Data("training split has no samples".into()));
    }
    let mut adam = AdamState::new(run.learning_rate, run.weight_decay);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut indices: Vec<usize> = (0..train_batch.n_samples).collect();

    let mut trace = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Option<Vec<(String, Vec<f64>)>> = None;
    let mut epochs_since_best = 0usize;
    let mut saw_empty_mask = false;

    for epoch in 0..run.max_epochs {
        adam.lr = run.lr_at(epoch);
        indices.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut loss_batches = 0usize;
        for (batch_no, chunk) in indices.chunks(run.batch_size).enumerate() {
            let x = train_batch.input_tensor(chunk)?;
            let target = train_batch.normalize(&train_batch.target_tensor(chunk)?)?;
            let mask = train_batch.mask_tensor(chunk)?;
            let pred = model.forward(&x, graph, Mode::Train)?;
            let (loss, empty) = masked_mae_loss(&pred, &target, &mask)?;
            if empty {
                saw_empty_mask = true;
                continue;
            }
            let loss_value = loss.to_vec()[0];
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged: non-finite loss at epoch {epoch}, batch {batch_no}"
                )));
            }
            model.params().zero_grads();
            loss.backward()?;
            adam.step(model.params())?;
            loss_sum += loss_value;
            loss_batches += 1;
        }
        let train_loss = if loss_batches > 0 {
            loss_sum / loss_batches as f64
        } else {
            0.0
        };

        let val_mae = if val_batch.is_empty() {
            train_loss
        } else {
            validation_mae(model, graph, val_batch, run.batch_size)?
        };
        trace.push(EpochRecord {
            epoch,
            lr: adam.lr,
            train_loss,
            val_mae,
        });
        if val_mae < best_val {
            best_val = val_mae;
            best_epoch = epoch;
            best_params = Some(snapshot(model));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= run.patience {
                break;
            }
        }
    }

    if let Some(params) = best_params {
        restore(model, &params)?;
    }
    let checkpoint = Checkpoint::from_model(model, train_batch.mean, train_batch.std);
    Ok(TrainOutcome {
        checkpoint,
        trace,
        best_epoch,
        best_val_mae: best_val,
        saw_empty_mask,
    })
}

fn snapshot(model: &DetectorNet) -> Vec<(String, Vec<f64>)> {
    model
        .params()
        .iter()
        .map(|(n, t)| (n.to_string(), t.to_vec()))
        .collect()
}

fn restore(model: &mut DetectorNet, params: &[(String, Vec<f64>)]) -> Result<()> {
    for (name, data) in params {
        model
            .params()
            .get(name)
            .ok_or_else(|| Error::State(format!("snapshot parameter '{name}' missing")))?
            .set_data(data)?;
    }
    Ok(())
}

/// Raw-scale predictions for a whole batch, computed in eval mode chunk by
/// chunk. Output layout matches `batch.targets`.
pub fn predict_batch(
    model: &mut DetectorNet,
    graph: &DetectorGraph,
    batch: &SampleBatch,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(batch.targets.len());
    let indices: Vec<usize> = (0..batch.n_samples).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let x = batch.input_tensor(chunk)?;
        let pred = model.forward(&x, graph, Mode::Eval)?;
        let raw = batch.denormalize(&pred)?;
        out.extend_from_slice(&raw.to_vec());
    }
    Ok(out)
}

/// Masked MAE of raw-scale predictions against raw targets.
pub fn validation_mae(
    model: &mut DetectorNet,
    graph: &DetectorGraph,
    batch: &SampleBatch,
    batch_size: usize,
) -> Result<f64> {
    let preds = predict_batch(model, graph, batch, batch_size)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..preds.len() {
        if batch.masks[i] != 0.0 {
            sum += (preds[i] - batch.targets[i]).abs();
            count += 1;
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    /// Parameters whose worst coordinate exceeds the tolerance.
    pub fn failures(&self, tol: f64) -> Vec<&GradCheckEntry> {
        self.entries.iter().filter(|e| e.max_rel_err > tol).collect()
    }
}

/// Compare the analytic gradient of `loss_fn` against central finite
/// differences on a seeded subsample of at least `min_coords` coordinates per
/// parameter. `loss_fn` must be deterministic.
pub fn gradient_check(
    params: &[(String, Tensor)],
    mut loss_fn: impl FnMut() -> Result<Tensor>,
    h: f64,
    min_coords: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = loss_fn()?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|(name, p)| {
            p.grad_vec()
                .ok_or_else(|| Error::State(format!("parameter '{name}' got no gradient")))
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(params.len());
    let mut overall: f64 = 0.0;
    for (i, (name, p)) in params.iter().enumerate() {
        let n = p.numel();
        let coords: Vec<usize> = if n <= min_coords {
            (0..n).collect()
        } else {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            let mut picked: Vec<usize> = all.into_iter().take(min_coords).collect();
            picked.sort_unstable();
            picked
        };
        let mut worst: f64 = 0.0;
        let mut data = p.to_vec();
        for &j in &coords {
            let original = data[j];
            data[j] = original + h;
            p.set_data(&data)?;
            let plus = loss_fn()?.to_vec()[0];
            data[j] = original - h;
            p.set_data(&data)?;
            let minus = loss_fn()?.to_vec()[0];
            data[j] = original;
            p.set_data(&data)?;
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic[i][j];
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
            }
        }
        overall = overall.max(worst);
        entries.push(GradCheckEntry {
            name: name.clone(),
            coords_checked: coords.len(),
            max_rel_err: worst,
        });
    }
    Ok(GradCheckReport {
        entries,
        max_rel_err: overall,
    })
}

/// Whole-model gradient check on a given (intended tiny) config: random
/// input and target, squared-error readout, eval-mode forward so the map is
/// deterministic and smooth almost everywhere.
pub fn gradient_check_model(config: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    config.validate()?;
    let mut model = DetectorNet::new(config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.n_nodes;
    let mut adjacency = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            adjacency[i * n + j] = if i == j { 0.0 } else { rng.gen_range(0.1..1.0) };
        }
    }
    if n == 1 {
        adjacency[0] = 1.0;
    }
    let graph = DetectorGraph::new(n, adjacency)?;
    let x = Tensor::from_vec(
        &[n, config.input_len, config.input_width],
        (0..n * config.input_len * config.input_width)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )?;
    let target = Tensor::from_vec(
        &[n, config.output_len, config.output_width],
        (0..n * config.output_len * config.output_width)
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )?;
    let params: Vec<(String, Tensor)> = model
        .params()
        .iter()
        .map(|(name, t)| (name.to_string(), t.clone()))
        .collect();
    let loss_fn = || -> Result<Tensor> {
        let pred = model.forward(&x, &graph, Mode::Eval)?;
        let diff = pred.sub(&target)?;
        diff.mul(&diff)?.mean_all()
    };
    gradient_check(&params, loss_fn, 1e-5, 32, seed)
}
