use rand::Rng;
use rand_distr::StandardNormal;

use super::model::{cvae_loss_tape, reparameterize_tape, CvaeArch, CvaeModel};
use crate::autodiff::{Array, ParamSet, Tape, Var};
use crate::checkpoint::{spectra_digest, TrainedOn};
use crate::dataset::{Corpus, Spectrum};
use crate::discriminator::{stack_spectra, stack_targets};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, stream, SeededRng};
use crate::train::{fit, History, TrainConfig, Trainable};

impl Trainable for CvaeModel {
    fn params(&self) -> &ParamSet {
        CvaeModel::params(self)
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        CvaeModel::params_mut(self)
    }

    fn batch_loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        vars: &[Var],
        batch: &[&Spectrum],
        rng: &mut SeededRng,
        _training: bool,
    ) -> Result<Var> {
        let a = self.arch();
        let x = tape.constant(stack_spectra(batch, a.input_len)?);
        let (_, cond) = stack_targets(batch)?;
        let cond = tape.constant(cond);
        let (mu, log_var) = self.encode_tape(tape, vars, x, cond)?;
        let eps: Vec<f64> = (0..batch.len() * a.latent).map(|_| rng.sample(StandardNormal)).collect();
        let z = reparameterize_tape(tape, mu, log_var, Array::new([batch.len(), a.latent], eps)?)?;
        let recon = self.decode_tape(tape, vars, z, cond)?;
        cvae_loss_tape(tape, x, recon, mu, log_var, a.kl_weight)
    }
}

/// Fits a CVAE on `train`, early-stopping on `validation`. The output bias
/// starts at the log of the mean training absorbance.
pub fn train_cvae(
    arch: CvaeArch,
    train: &[&Spectrum],
    validation: &[&Spectrum],
    config: &TrainConfig,
) -> Result<(CvaeModel, History)> {
    if train.is_empty() {
        return Err(Error::Config("cvae training set is empty".into()));
    }
    let mut model = CvaeModel::new(arch, derive_seed(config.seed, &[stream::INIT]))?;
    let n: usize = train.iter().map(|s| s.absorbance().len()).sum();
    let mean = train.iter().flat_map(|s| s.absorbance()).sum::<f64>() / n as f64;
    let id = model.output_bias_id();
    model.params_mut().get_mut(id).value.data_mut().fill(mean.max(1e-6).ln());
    let history = fit(&mut model, train, validation, config, None)?;
    Ok((model, history))
}

/// A CVAE fitted on one fold's training split.
#[derive(Clone, Debug)]
pub struct CvaeFold {
    pub fold: usize,
    pub model: CvaeModel,
    pub history: History,
    /// Corpus indices the model was trained on.
    pub train: Vec<usize>,
}

/// Trains on every fold but `fold`. The held-out fold serves as the
/// early-stopping set and never enters the gradient.
pub fn train_cvae_fold(corpus: &Corpus, fold: usize, arch: &CvaeArch, config: &TrainConfig) -> Result<CvaeFold> {
    let split = corpus.kfold_split(fold)?;
    let config = TrainConfig {
        seed: derive_seed(config.seed, &[fold as u64]),
        ..config.clone()
    };
    let (model, history) = train_cvae(arch.clone(), &corpus.select(&split.train), &corpus.select(&split.validation), &config)?;
    Ok(CvaeFold {
        fold,
        model,
        history,
        train: split.train,
    })
}

impl CvaeFold {
    /// Provenance record for checkpoints and leakage checks.
    pub fn trained_on(&self, corpus: &Corpus) -> TrainedOn {
        TrainedOn {
            fold: Some(self.fold),
            train_digest: spectra_digest(corpus.select(&self.train)),
        }
    }
}
