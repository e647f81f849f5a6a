
use super::model::{composite_loss_tape, stack_spectra, stack_targets, DiscriminatorArch, DiscriminatorModel};
use crate::autodiff::{Tape, Var};
use crate::dataset::{Corpus, Spectrum, VocClass, N_FOLDS};
use crate::error::{Error, Result};
use crate::par;
use crate::seed::{derive_seed, stream, SeededRng};
use crate::train::{fit, Augmenter, History, TrainConfig, Trainable};

impl Trainable for DiscriminatorModel {
    fn params(&self) -> &crate::autodiff::ParamSet {
        DiscriminatorModel::params(self)
    }

    fn params_mut(&mut self) -> &mut crate::autodiff::ParamSet {
        DiscriminatorModel::params_mut(self)
    }

    fn batch_loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        vars: &[Var],
        batch: &[&Spectrum],
        rng: &mut SeededRng,
        training: bool,
    ) -> Result<Var> {
        let x = tape.constant(stack_spectra(batch, self.arch().input_len)?);
        let (oh, rt) = stack_targets(batch)?;
        let out = self.forward_tape(tape, vars, x, training.then_some(rng))?;
        let oh = tape.constant(oh);
        let rt = tape.constant(rt);
        composite_loss_tape(tape, out.probs, out.conc, oh, rt)
    }
}

/// Fits a freshly initialised discriminator. `augment`, when given, adds
/// spectra to each epoch's training pool.
pub fn train_discriminator(
    arch: DiscriminatorArch,
    train: &[&Spectrum],
    validation: &[&Spectrum],
    config: &TrainConfig,
    augment: Option<&mut Augmenter<'_>>,
) -> Result<(DiscriminatorModel, History)> {
    let mut model = DiscriminatorModel::new(arch, derive_seed(config.seed, &[stream::INIT]))?;
    let history = fit(&mut model, train, validation, config, augment)?;
    Ok((model, history))
}

/// Errors unless every class has at least one training spectrum.
pub fn check_class_coverage(train: &[&Spectrum]) -> Result<()> {
    for class in VocClass::ALL {
        if !train.iter().any(|s| s.class() == class) {
            return Err(Error::Config(format!("training split has no {class} spectra")));
        }
    }
    Ok(())
}

/// One cross-validation fold's model and its held-out indices.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub model: DiscriminatorModel,
    pub history: History,
    pub validation: Vec<usize>,
}


/// Trains on every fold but `fold` and validates on `fold`.
pub fn train_fold(
    corpus: &Corpus,
    fold: usize,
    arch: &DiscriminatorArch,
    config: &TrainConfig,
    augment: Option<&mut Augmenter<'_>>,
) -> Result<FoldOutcome> {
    let split = corpus.kfold_split(fold)?;
    let train = corpus.select(&split.train);
    check_class_coverage(&train)?;
    let validation = corpus.select(&split.validation);
    let config = TrainConfig {
        seed: derive_seed(config.seed, &[fold as u64]),
        ..config.clone()
    };
    let (model, history) = train_discriminator(arch.clone(), &train, &validation, &config, augment)?;
    Ok(FoldOutcome {
        fold,
        model,
        history,
        validation: split.validation,
    })
}

/// All five folds without augmentation, trained in parallel.
pub fn train_kfold(corpus: &Corpus, arch: &DiscriminatorArch, config: &TrainConfig) -> Result<Vec<FoldOutcome>> {
    par::map_indexed(N_FOLDS, |fold| train_fold(corpus, fold, arch, config, None))
        .into_iter()
        .collect()
}
