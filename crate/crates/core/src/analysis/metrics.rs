use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::{Spectrum, VocClass};
use crate::discriminator::{DiscriminatorModel, Prediction};
use crate::error::{Error, Result};

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2_score(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.len() < 2 {
        return Err(Error::invalid(
            "r2_score",
            format!("need two equal-length series of at least 2 values, got {} and {}", y_true.len(), y_pred.len()),
        ));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Undefined("r2_score: ground truth has zero variance".into()));
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn accuracy(predicted: &[VocClass], truth: &[VocClass]) -> Result<f64> {
    if predicted.len() != truth.len() || truth.is_empty() {
        return Err(Error::invalid(
            "accuracy",
            format!("need equal non-zero lengths, got {} and {}", predicted.len(), truth.len()),
        ));
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Mean squared residual.
pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() || y_true.is_empty() {
        return Err(Error::invalid(
            "mse",
            format!("need equal non-zero lengths, got {} and {}", y_true.len(), y_pred.len()),
        ));
    }
    Ok(y_true.iter().zip(y_pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y_true.len() as f64)
}

/// Mean and standard error of the mean (sample standard deviation over
/// `sqrt(n)`; zero for a single value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(values: &[f64]) -> Option<Score> {
    if values.is_empty() {
        return None;
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Some(Score { mean, se, n })
}

/// One labelled spectrum and the model's prediction for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluated {
    pub class: VocClass,
    pub concentration: f64,
    pub prediction: Prediction,
}

/// Runs `model` over `spectra` and pairs each prediction with its label.
pub fn evaluate(model: &DiscriminatorModel, spectra: &[&Spectrum]) -> Result<Vec<Evaluated>> {
    let preds = model.predict_batch(spectra)?;
    Ok(spectra
        .iter()
        .zip(preds)
        .map(|(s, prediction)| Evaluated {
            class: s.class(),
            concentration: s.concentration(),
            prediction,
        })
        .collect())
}

/// Metrics for one set of predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub accuracy: f64,
    pub mse: f64,
    pub per_class_mse: BTreeMap<VocClass, f64>,
    /// Absent when the class has fewer than two spectra or a constant
    /// ground truth.
    pub per_class_r2: BTreeMap<VocClass, f64>,
    pub n: usize,
}

impl SetMetrics {
    pub fn compute(items: &[Evaluated]) -> Result<Self> {
        let pred: Vec<VocClass> = items.iter().map(|e| e.prediction.predicted_class).collect();
        let truth: Vec<VocClass> = items.iter().map(|e| e.class).collect();
        let yt: Vec<f64> = items.iter().map(|e| e.concentration).collect();
        let yp: Vec<f64> = items.iter().map(|e| e.prediction.predicted_concentration).collect();
        let mut per_class_mse = BTreeMap::new();
        let mut per_class_r2 = BTreeMap::new();
        for class in VocClass::ALL {
            let (t, p): (Vec<f64>, Vec<f64>) = items
                .iter()
                .filter(|e| e.class == class)
                .map(|e| (e.concentration, e.prediction.predicted_concentration))
                .unzip();
            if t.is_empty() {
                continue;
            }
            per_class_mse.insert(class, mse(&t, &p)?);
            if !class.is_air() {
                if let Ok(r2) = r2_score(&t, &p) {
                    per_class_r2.insert(class, r2);
                }
            }
        }
        Ok(SetMetrics {
            accuracy: accuracy(&pred, &truth)?,
            mse: mse(&yt, &yp)?,
            per_class_mse,
            per_class_r2,
            n: items.len(),
        })
    }
}

/// Scores as mean and standard error over folds, plus the same metrics on
/// the pooled predictions of all folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: Score,
    pub mse: Score,
    pub per_class_mse: BTreeMap<VocClass, Score>,
    pub per_class_r2: BTreeMap<VocClass, Score>,
    pub folds: Vec<SetMetrics>,
    pub pooled: SetMetrics,
}

impl MetricReport {
    pub fn from_folds(folds: &[Vec<Evaluated>]) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::invalid("metric report", "no folds"));
        }
        let per_fold: Vec<SetMetrics> = folds.iter().map(|f| SetMetrics::compute(f)).collect::<Result<_>>()?;
        let pooled_items: Vec<Evaluated> = folds.iter().flatten().cloned().collect();
        let pooled = SetMetrics::compute(&pooled_items)?;
        let collect = |get: &dyn Fn(&SetMetrics) -> Option<f64>| -> Option<Score> {
            mean_se(&per_fold.iter().filter_map(get).collect::<Vec<_>>())
        };
        let mut per_class_mse = BTreeMap::new();
        let mut per_class_r2 = BTreeMap::new();
        for class in VocClass::ALL {
            if let Some(s) = collect(&|m| m.per_class_mse.get(&class).copied()) {
                per_class_mse.insert(class, s);
            }
            if let Some(s) = collect(&|m| m.per_class_r2.get(&class).copied()) {
                per_class_r2.insert(class, s);
            }
        }
        Ok(MetricReport {
            accuracy: collect(&|m| Some(m.accuracy)).expect("at least one fold"),
            mse: collect(&|m| Some(m.mse)).expect("at least one fold"),
            per_class_mse,
            per_class_r2,
            folds: per_fold,
            pooled,
        })
    }

    /// Per-fold overall MSE values, the samples used for model comparison.
    pub fn fold_mses(&self) -> Vec<f64> {
        self.folds.iter().map(|f| f.mse).collect()
    }

    /// Long-format CSV: `metric,class,mean,se,n,pooled`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,class,mean,se,n,pooled\n");
        let mut row = |metric: &str, class: &str, s: &Score, pooled: Option<f64>| {
            let pooled = pooled.map(|p| p.to_string()).unwrap_or_default();
            out.push_str(&format!("{metric},{class},{},{},{},{pooled}\n", s.mean, s.se, s.n));
        };
        row("accuracy", "all", &self.accuracy, Some(self.pooled.accuracy));
        row("mse", "all", &self.mse, Some(self.pooled.mse));
        for (c, s) in &self.per_class_mse {
            row("mse", c.name(), s, self.pooled.per_class_mse.get(c).copied());
        }
        for (c, s) in &self.per_class_r2 {
            row("r2", c.name(), s, self.pooled.per_class_r2.get(c).copied());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r2_examples() {
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(r2_score(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!((r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(r2_score(&[2.0, 2.0], &[1.0, 2.0]), Err(Error::Undefined(_))));
        assert!(r2_score(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        use VocClass::*;
        assert_eq!(accuracy(&[Air, Benzene], &[Air, Benzene]).unwrap(), 1.0);
        assert_eq!(accuracy(&[Air, Benzene], &[Benzene, Air]).unwrap(), 0.0);
        assert_eq!(accuracy(&[Air, Air, Air, Toluene], &[Air, Air, Air, Air]).unwrap(), 0.75);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 5.0], &[1.0, 5.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[3.0, -3.0]).unwrap(), 9.0);
        assert_eq!(mse(&[0.0, 1.0], &[3.0, 4.0]).unwrap(), mse(&[1.0, 0.0], &[4.0, 3.0]).unwrap());
    }

    #[test]
    fn mean_se_of_constant_is_zero() {
        let s = mean_se(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.se, s.n), (2.0, 0.0, 3));
        let s = mean_se(&[1.0, 3.0]).unwrap();
        assert!((s.se - 1.0).abs() < 1e-15);
        assert!(mean_se(&[]).is_none());
    }
}
