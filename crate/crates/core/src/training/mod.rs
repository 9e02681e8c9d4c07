//! Losses, optimizer, the training loop and evaluation.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod metrics;
pub mod model;

use std::fmt::Write as _;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_FILE, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Ablations, ModelConfig};
pub use loss::{contrastive_loss, cross_entropy, cross_entropy_from_logits, total_loss};
pub use metrics::Metrics;
pub use model::{
    argmax_label, prepare, BatchLoss, ClassifierParams, Forward, FusionParams, LayerParams, Model,
    ModelParams, ParamVars, Prepared,
};

use crate::dropout::Dropout;
use crate::error::{Error, Result};
use crate::ingest::{Dataset, Label};
use crate::tensor::Tape;

/// One row of the per-epoch training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// `ce + λ·cl`.
    pub loss: f64,
    /// Mean cross-entropy per example.
    pub ce: f64,
    /// Mean contrastive loss per batch.
    pub cl: f64,
    pub lambda: f64,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub accuracy: f64,
    pub macro_f1: f64,
    /// β after the epoch's last step, as applied by the forward pass.
    pub beta: f64,
}

pub const LOG_HEADER: &str = "epoch,loss,ce,cl,lambda,accuracy,macro_f1,beta";

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for e in log {
        let _ = writeln!(
            s,
            "{},{:.10},{:.10},{:.10},{},{:.6},{:.6},{:.10}",
            e.epoch, e.loss, e.ce, e.cl, e.lambda, e.accuracy, e.macro_f1, e.beta
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub adam: Adam,
    pub rng: ChaCha8Rng,
    pub log: Vec<EpochLog>,
}

impl TrainState {
    /// Fresh parameters drawn from the config seed.
    pub fn init(config: &ModelConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        if let Some(d) = config.dim {
            if d != dim {
                return Err(Error::Config(format!(
                    "config dim {d} but embeddings have dim {dim}"
                )));
            }
        }
        let mut config = config.clone();
        config.dim = Some(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = ModelParams::init(dim, &config, &mut rng);
        let adam = Adam::new(config.lr, &params.tensors());
        Ok(Self {
            config,
            params,
            adam,
            rng,
            log: Vec::new(),
        })
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.params.clone(),
        }
    }

    /// One pass over the shuffled data.
    pub fn run_epoch(&mut self, dataset: &Dataset, prepared: &[Prepared]) -> Result<EpochLog> {
        let model = Model::new(&self.config)?;
        let names = self.params.names();
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut self.rng);

        let (mut ce_sum, mut cl_sum, mut batches) = (0.0, 0.0, 0usize);
        let mut gold = Vec::with_capacity(order.len());
        let mut predicted = Vec::with_capacity(order.len());
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&i| (&dataset.examples[i], &prepared[i]))
                .collect();
            let tape = Tape::new();
            let pv = self.params.on_tape(&tape, true);
            let rate = self.config.dropout;
            let mut dropout = (rate > 0.0).then(|| Dropout::new(rate, &mut self.rng));
            let out = model.batch_loss(&pv, &batch, dropout.as_mut())?;
            out.loss.backward()?;
            let grads: Vec<_> = pv
                .all()
                .iter()
                .map(|v| v.grad().expect("parameters are trainable"))
                .collect();
            let mut tensors = self.params.tensors();
            self.adam.step(&mut tensors, &grads, &names)?;
            self.params = ModelParams::from_tensors(tensors)?;
            self.params.clamp_beta();

            ce_sum += out.ce.item();
            cl_sum += out.cl.item();
            batches += 1;
            gold.extend(batch.iter().map(|(ex, _)| ex.sentence.label));
            predicted.extend(out.predictions);
        }

        let metrics = Metrics::from_predictions(&gold, &predicted);
        let lambda = self.config.effective_lambda();
        let ce = ce_sum / dataset.len() as f64;
        let cl = cl_sum / batches as f64;
        let entry = EpochLog {
            epoch: self.log.len() + 1,
            loss: ce + lambda * cl,
            ce,
            cl,
            lambda,
            accuracy: metrics.accuracy,
            macro_f1: metrics.macro_f1,
            beta: model.effective_beta(&self.params),
        };
        info!(
            "epoch {} loss {:.6} acc {:.4} f1 {:.4} beta {:.4}",
            entry.epoch, entry.loss, entry.accuracy, entry.macro_f1, entry.beta
        );
        self.log.push(entry.clone());
        Ok(entry)
    }
}

pub fn prepare_all(dataset: &Dataset, config: &ModelConfig) -> Result<Vec<Prepared>> {
    dataset
        .examples
        .iter()
        .map(|ex| prepare(ex, config))
        .collect()
}

/// Trains for `config.epochs` epochs from a fresh initialization.
pub fn train(dataset: &Dataset, config: &ModelConfig) -> Result<TrainState> {
    let mut state = TrainState::init(config, dataset.dim)?;
    let prepared = prepare_all(dataset, &state.config)?;
    for _ in 0..state.config.epochs {
        state.run_epoch(dataset, &prepared)?;
    }
    Ok(state)
}

/// Argmax predictions with dropout off.
pub fn predict(
    config: &ModelConfig,
    params: &ModelParams,
    dataset: &Dataset,
) -> Result<Vec<Label>> {
    let model = Model::new(config)?;
    dataset
        .examples
        .iter()
        .map(|ex| Ok(model.predict(params, ex, &prepare(ex, config)?)?.0))
        .collect()
}

pub fn evaluate(config: &ModelConfig, params: &ModelParams, dataset: &Dataset) -> Result<Metrics> {
    let predicted = predict(config, params, dataset)?;
    let gold: Vec<Label> = dataset.sentences().map(|s| s.label).collect();
    Ok(Metrics::from_predictions(&gold, &predicted))
}
