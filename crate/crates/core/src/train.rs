//! Mini-batch training machinery shared by both networks.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, ParamSet, Tape, Var};
use crate::dataset::Spectrum;
use crate::error::{Error, Result};
use crate::par;
use crate::seed::{rng_for, stream, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            patience: 30,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("epochs, batch_size and patience must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Loss on the training split before the first update.
    pub initial_train_loss: f64,
    pub initial_validation_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
}

/// Tracks the best validation loss and decides when to stop.
pub(crate) struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, initial: f64) -> Self {
        EarlyStopping {
            patience,
            best: initial,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Returns true when `loss` is a new best.
    pub fn observe(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

pub(crate) fn check_finite(what: &str, epoch: usize, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} became {value} during epoch {epoch}")))
    }
}

/// Extra spectra for one epoch, given the 1-based epoch index.
pub type Augmenter<'x> = dyn FnMut(usize) -> Result<Vec<Spectrum>> + 'x;

/// A network that can be fitted with [`fit`].
pub(crate) trait Trainable: Sync {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// Scalar mean loss over `batch`. `training` enables dropout; `rng`
    /// drives any stochastic layers.
    fn batch_loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        vars: &[Var],
        batch: &[&Spectrum],
        rng: &mut SeededRng,
        training: bool,
    ) -> Result<Var>;
}

/// Mean evaluation-mode loss over `spectra`. Batches are evaluated in
/// parallel, each with a fixed RNG stream.
pub(crate) fn evaluate_loss<M: Trainable>(model: &M, spectra: &[&Spectrum], batch_size: usize, seed: u64) -> Result<f64> {
    if spectra.is_empty() {
        return Err(Error::Config("cannot evaluate a loss on an empty set".into()));
    }
    let n_batches = spectra.len().div_ceil(batch_size);
    let parts = par::map_indexed(n_batches, |b| -> Result<f64> {
        let chunk = &spectra[b * batch_size..((b + 1) * batch_size).min(spectra.len())];
        let mut rng = rng_for(seed, &[stream::LATENT, b as u64]);
        let mut tape = Tape::new();
        let vars = model.params().bind(&mut tape);
        let loss = model.batch_loss(&mut tape, &vars, chunk, &mut rng, false)?;
        Ok(tape.value(loss).item() * chunk.len() as f64)
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / spectra.len() as f64)
}

/// Mini-batch Adam with per-epoch shuffling and early stopping on the
/// validation loss. The parameters of the best epoch are restored.
pub(crate) fn fit<M: Trainable>(
    model: &mut M,
    train: &[&Spectrum],
    validation: &[&Spectrum],
    config: &TrainConfig,
    mut augment: Option<&mut Augmenter<'_>>,
) -> Result<History> {
    config.validate()?;
    if train.is_empty() || validation.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let eval_batch = config.batch_size.max(64);
    let initial_train_loss = evaluate_loss(model, train, eval_batch, config.seed)?;
    let initial_validation_loss = evaluate_loss(model, validation, eval_batch, config.seed)?;
    check_finite("initial validation loss", 0, initial_validation_loss)?;

    let mut history = History {
        initial_train_loss,
        initial_validation_loss,
        epochs: Vec::new(),
        best_epoch: 0,
    };
    let mut stopper = EarlyStopping::new(config.patience, initial_validation_loss);
    let mut best = model.params().flat_values();
    let mut optimizer = match config.optimizer {
        OptimizerKind::Adam => Adam::new(config.learning_rate),
    };
    let mut shuffle_rng = rng_for(config.seed, &[stream::SHUFFLE]);
    let mut dropout_rng = rng_for(config.seed, &[stream::DROPOUT]);

    for epoch in 1..=config.epochs {
        let extra = match augment.as_deref_mut() {
            Some(f) => f(epoch)?,
            None => Vec::new(),
        };
        let mut pool: Vec<&Spectrum> = train.iter().copied().chain(extra.iter()).collect();
        pool.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for batch in pool.chunks(config.batch_size) {
            let (value, grads, vars) = {
                let mut tape = Tape::new();
                let vars = model.params().bind(&mut tape);
                let loss = model.batch_loss(&mut tape, &vars, batch, &mut dropout_rng, true)?;
                let value = tape.value(loss).item();
                check_finite("training loss", epoch, value)?;
                (value, tape.backward(loss)?, vars)
            };
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate(&grads, &vars);
            optimizer.step(params);
            if !params.is_finite() {
                return Err(Error::Numerical(format!("parameters became non-finite during epoch {epoch}")));
            }
            loss_sum += value * batch.len() as f64;
        }
        let train_loss = loss_sum / pool.len() as f64;
        let validation_loss = evaluate_loss(model, validation, eval_batch, config.seed)?;
        check_finite("validation loss", epoch, validation_loss)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            validation_loss,
        });
        if stopper.observe(epoch, validation_loss) {
            best = model.params().flat_values();
        }
        if stopper.should_stop() {
            break;
        }
    }
    model.params_mut().load_flat(&best)?;
    history.best_epoch = stopper.best_epoch();
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_counts_stale_epochs() {
        let mut es = EarlyStopping::new(2, 10.0);
        assert!(es.observe(1, 9.0));
        assert!(!es.observe(2, 9.5));
        assert!(!es.should_stop());
        assert!(!es.observe(3, 9.0));
        assert!(es.should_stop());
        assert_eq!(es.best_epoch(), 1);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
