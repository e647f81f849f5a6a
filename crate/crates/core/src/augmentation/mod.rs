//! Enhanced training regimes: per-epoch oversampling and CVAE-synthetic
//! augmentation, with the sweep that picks the augmentation size.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{accuracy, mean_se, mse, Score};
use crate::checkpoint::{spectra_digest, TrainedOn};
use crate::cvae::CvaeModel;
use crate::dataset::{Corpus, Spectrum, VocClass, N_FOLDS};
use crate::discriminator::{train_fold, DiscriminatorArch, FoldOutcome};
use crate::error::{Error, Result};
use crate::par;
use crate::seed::{rng_for, stream};
use crate::train::TrainConfig;

/// Per-class augmentation sizes tried by the sweep.
pub const SWEEP_GRID: [usize; 6] = [10, 20, 50, 100, 150, 200];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMode {
    Oversample,
    Synthetic,
}

impl AugmentMode {
    pub fn name(self) -> &'static str {
        match self {
            AugmentMode::Oversample => "oversample",
            AugmentMode::Synthetic => "synthetic",
        }
    }

    fn tag(self) -> u64 {
        match self {
            AugmentMode::Oversample => 1,
            AugmentMode::Synthetic => 2,
        }
    }
}

impl std::str::FromStr for AugmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oversample" => Ok(AugmentMode::Oversample),
            "synthetic" => Ok(AugmentMode::Synthetic),
            other => Err(Error::Config(format!("unknown augmentation mode `{other}`"))),
        }
    }
}

/// Settings for one enhanced training regime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub mode: AugmentMode,
    pub per_class_count: usize,
    /// Augmented spectra are redrawn every epoch; always true.
    pub reshuffle_each_epoch: bool,
    /// Where the per-fold CVAEs came from (synthetic mode only).
    pub cvae: Option<String>,
    pub seed: u64,
}

impl AugmentPlan {
    pub fn validate(&self) -> Result<()> {
        if !SWEEP_GRID.contains(&self.per_class_count) {
            return Err(Error::Config(format!(
                "per_class_count {} is not in the grid {SWEEP_GRID:?}",
                self.per_class_count
            )));
        }
        if !self.reshuffle_each_epoch {
            return Err(Error::Config("augmented spectra must be redrawn every epoch".into()));
        }
        if self.mode == AugmentMode::Synthetic && self.cvae.is_none() {
            return Err(Error::Config("synthetic augmentation needs a CVAE".into()));
        }
        Ok(())
    }
}

fn members<'a>(train: &[&'a Spectrum], class: VocClass) -> Result<Vec<&'a Spectrum>> {
    let m: Vec<&Spectrum> = train.iter().copied().filter(|s| s.class() == class).collect();
    if m.is_empty() {
        Err(Error::Config(format!("training split has no {class} spectra to augment")))
    } else {
        Ok(m)
    }
}

/// Spectra to append to `train` for one epoch: `per_class_count` exact
/// copies per class, drawn with replacement from that class's members.
pub fn oversample_epoch<R: Rng + ?Sized>(train: &[&Spectrum], per_class_count: usize, rng: &mut R) -> Result<Vec<Spectrum>> {
    let mut out = Vec::with_capacity(per_class_count * VocClass::ALL.len());
    for class in VocClass::ALL {
        let m = members(train, class)?;
        for _ in 0..per_class_count {
            out.push(m[rng.random_range(0..m.len())].clone());
        }
    }
    Ok(out)
}

/// Spectra to append to `train` for one epoch: `per_class_count` CVAE
/// samples per class at concentrations drawn uniformly from that class's
/// training range (air at zero).
pub fn synthetic_epoch<R: Rng + ?Sized>(
    train: &[&Spectrum],
    cvae: Option<&CvaeModel>,
    per_class_count: usize,
    rng: &mut R,
) -> Result<Vec<Spectrum>> {
    let cvae = cvae.ok_or_else(|| Error::Config("synthetic augmentation needs a trained CVAE".into()))?;
    if per_class_count == 0 {
        return Ok(Vec::new());
    }
    let mut requests = Vec::with_capacity(per_class_count * VocClass::ALL.len());
    for class in VocClass::ALL {
        let m = members(train, class)?;
        let lo = m.iter().map(|s| s.concentration()).fold(f64::INFINITY, f64::min);
        let hi = m.iter().map(|s| s.concentration()).fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..per_class_count {
            let c = if class.is_air() || hi <= lo { lo } else { rng.random_range(lo..=hi) };
            requests.push((class, c));
        }
    }
    cvae.generate_many(&requests, rng)
}

/// A CVAE together with the record of the data it was fitted on.
#[derive(Clone, Copy, Debug)]
pub struct FoldCvae<'a> {
    pub model: &'a CvaeModel,
    pub trained_on: &'a TrainedOn,
}

/// Errors unless `cvae` was trained on exactly the training split of `fold`.
pub fn check_no_leakage(corpus: &Corpus, fold: usize, cvae: &FoldCvae<'_>) -> Result<()> {
    let split = corpus.kfold_split(fold)?;
    let digest = spectra_digest(corpus.select(&split.train));
    if cvae.trained_on.fold != Some(fold) || cvae.trained_on.train_digest != digest {
        return Err(Error::Config(format!(
            "the CVAE supplied for fold {fold} was not trained on that fold's training split"
        )));
    }
    Ok(())
}

/// Held-out scores of one sweep cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mode: AugmentMode,
    pub per_class_count: usize,
    pub fold: usize,
    pub validation_mse: f64,
    pub validation_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub per_class_count: usize,
    pub validation_mse: Score,
    pub validation_accuracy: Score,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub mode: AugmentMode,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
    pub selected_count: usize,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,per_class_count,fold,validation_mse,validation_accuracy\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.mode.name(),
                r.per_class_count,
                r.fold,
                r.validation_mse,
                r.validation_accuracy
            ));
        }
        out
    }
}

/// Held-out MSE (predicted vs true concentration) and accuracy of a fold model.
pub fn validation_scores(corpus: &Corpus, outcome: &FoldOutcome) -> Result<(f64, f64)> {
    let val = corpus.select(&outcome.validation);
    let preds = outcome.model.predict_batch(&val)?;
    let yt: Vec<f64> = val.iter().map(|s| s.concentration()).collect();
    let yp: Vec<f64> = preds.iter().map(|p| p.predicted_concentration).collect();
    let ct: Vec<VocClass> = val.iter().map(|s| s.class()).collect();
    let cp: Vec<VocClass> = preds.iter().map(|p| p.predicted_class).collect();
    Ok((mse(&yt, &yp)?, accuracy(&cp, &ct)?))
}

/// Trains one fold with `mode` augmentation at `count` spectra per class.
pub fn train_augmented_fold(
    corpus: &Corpus,
    fold: usize,
    mode: AugmentMode,
    count: usize,
    cvae: Option<&FoldCvae<'_>>,
    arch: &DiscriminatorArch,
    config: &TrainConfig,
) -> Result<FoldOutcome> {
    let split = corpus.kfold_split(fold)?;
    let train = corpus.select(&split.train);
    if mode == AugmentMode::Synthetic {
        let c = cvae.ok_or_else(|| Error::Config(format!("no CVAE supplied for fold {fold}")))?;
        check_no_leakage(corpus, fold, c)?;
    }
    let model = cvae.map(|c| c.model);
    let mut rng = rng_for(config.seed, &[stream::AUGMENT, mode.tag(), count as u64, fold as u64]);
    let mut augment = |_epoch: usize| match mode {
        AugmentMode::Oversample => oversample_epoch(&train, count, &mut rng),
        AugmentMode::Synthetic => synthetic_epoch(&train, model, count, &mut rng),
    };
    train_fold(corpus, fold, arch, config, Some(&mut augment)).map_err(|e| annotate(e, mode, count, fold))
}

fn annotate(e: Error, mode: AugmentMode, count: usize, fold: usize) -> Error {
    let ctx = format!("{} augmentation, count {count}, fold {fold}", mode.name());
    match e {
        Error::Numerical(m) => Error::Numerical(format!("{ctx}: {m}")),
        Error::Config(m) => Error::Config(format!("{ctx}: {m}")),
        other => other,
    }
}

/// Result of an augmentation sweep: the five fold models at the selected
/// count and the full table.
#[derive(Clone, Debug)]
pub struct EnhancedOutcome {
    pub models: Vec<FoldOutcome>,
    pub report: SweepReport,
}

/// Trains five fold-rotated models for each count in `grid` and keeps the
/// count with the lowest mean validation MSE (the smaller count on ties).
/// Cells run in parallel.
pub fn train_enhanced(
    corpus: &Corpus,
    mode: AugmentMode,
    cvaes: Option<&[FoldCvae<'_>]>,
    grid: &[usize],
    arch: &DiscriminatorArch,
    config: &TrainConfig,
) -> Result<EnhancedOutcome> {
    if grid.is_empty() {
        return Err(Error::Config("augmentation grid is empty".into()));
    }
    if mode == AugmentMode::Synthetic {
        match cvaes {
            Some(c) if c.len() == N_FOLDS => {}
            _ => return Err(Error::Config(format!("synthetic augmentation needs {N_FOLDS} per-fold CVAEs"))),
        }
    }
    let cells: Vec<(usize, usize)> = grid.iter().flat_map(|&c| (0..N_FOLDS).map(move |f| (c, f))).collect();
    let results = par::map_indexed(cells.len(), |i| -> Result<(FoldOutcome, f64, f64)> {
        let (count, fold) = cells[i];
        let cvae = cvaes.map(|c| &c[fold]);
        let outcome = train_augmented_fold(corpus, fold, mode, count, cvae, arch, config)?;
        let (m, a) = validation_scores(corpus, &outcome)?;
        Ok((outcome, m, a))
    });
    let mut outcomes = Vec::with_capacity(cells.len());
    let mut rows = Vec::with_capacity(cells.len());
    for (&(count, fold), r) in cells.iter().zip(results) {
        let (outcome, m, a) = r?;
        rows.push(SweepRow {
            mode,
            per_class_count: count,
            fold,
            validation_mse: m,
            validation_accuracy: a,
        });
        outcomes.push(outcome);
    }
    let mut summary = Vec::new();
    for &count in grid {
        let of = |f: &dyn Fn(&SweepRow) -> f64| {
            let v: Vec<f64> = rows.iter().filter(|r| r.per_class_count == count).map(f).collect();
            mean_se(&v).expect("five folds per count")
        };
        summary.push(SweepSummary {
            per_class_count: count,
            validation_mse: of(&|r| r.validation_mse),
            validation_accuracy: of(&|r| r.validation_accuracy),
        });
    }
    let selected_count = select_count(&summary);
    let models = cells
        .iter()
        .zip(outcomes)
        .filter(|((c, _), _)| *c == selected_count)
        .map(|(_, o)| o)
        .collect();
    Ok(EnhancedOutcome {
        models,
        report: SweepReport {
            mode,
            rows,
            summary,
            selected_count,
        },
    })
}

/// Count with the smallest mean validation MSE; the first such on ties.
pub fn select_count(summary: &[SweepSummary]) -> usize {
    let mut best = &summary[0];
    for s in &summary[1..] {
        if s.validation_mse.mean < best.validation_mse.mean {
            best = s;
        }
    }
    best.per_class_count
}
