use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Tape};
use crate::dataset::{channel_grid, one_hot, regression_target};
use crate::discriminator::{argmax, composite_loss_tape, DiscriminatorModel, Prediction};
use crate::error::{Error, Result};

/// A max-normalised saliency map over input channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Saliency {
    pub values: Vec<f64>,
    /// Set when the weighted activations vanish everywhere; `values` is then
    /// all zeros.
    pub degenerate: bool,
}

impl Saliency {
    /// Two-column CSV `wavenumber,saliency`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("wavenumber,saliency\n");
        for (nu, s) in channel_grid().iter().zip(&self.values) {
            out.push_str(&format!("{nu},{s}\n"));
        }
        out
    }
}

/// Linear interpolation with both endpoints aligned.
pub fn upsample_linear(values: &[f64], len: usize) -> Vec<f64> {
    match (values.len(), len) {
        (_, 0) => Vec::new(),
        (0, _) => vec![0.0; len],
        (1, _) => vec![values[0]; len],
        (n, 1) => vec![values[n / 2]],
        (n, _) => (0..len)
            .map(|i| {
                let pos = i as f64 * (n - 1) as f64 / (len - 1) as f64;
                let lo = (pos.floor() as usize).min(n - 2);
                let frac = pos - lo as f64;
                values[lo] * (1.0 - frac) + values[lo + 1] * frac
            })
            .collect(),
    }
}

/// Abs-CAM on the last convolutional block. Channel weights are the mean
/// absolute gradient of the composite loss, evaluated at the model's own
/// prediction, with respect to that block's pooled activations.
pub fn abs_cam(model: &DiscriminatorModel, spectrum: &[f64]) -> Result<Saliency> {
    let arch = model.arch();
    if spectrum.len() != arch.input_len {
        return Err(Error::Shape {
            op: "abs_cam",
            left: vec![arch.input_len],
            right: vec![spectrum.len()],
        });
    }
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let x = tape.constant(Array::new([1, 1, spectrum.len()], spectrum.to_vec())?);
    let out = model.forward_tape(&mut tape, &vars, x, None)?;
    let pred = Prediction::from_outputs(
        tape.value(out.probs).data().to_vec(),
        tape.value(out.conc).data().to_vec(),
    );
    let class_index = argmax(&pred.class_probs);
    let mut oh = vec![0.0; arch.n_classes];
    oh[class_index] = 1.0;
    let target = if arch.n_classes == one_hot(pred.predicted_class).len() {
        regression_target(pred.predicted_class, pred.predicted_concentration).to_vec()
    } else {
        vec![0.0; arch.n_slots]
    };
    let oh = tape.constant(Array::new([1, arch.n_classes], oh)?);
    let target = tape.constant(Array::new([1, arch.n_slots], target)?);
    let loss = composite_loss_tape(&mut tape, out.probs, out.conc, oh, target)?;
    let grads = tape.backward(loss)?;
    let acts = tape.value(out.features);
    let (channels, len) = (acts.dim(1), acts.dim(2));
    let zero = Array::zeros(acts.shape().to_vec());
    let g = grads.get(out.features).unwrap_or(&zero);
    let mut cam = vec![0.0; len];
    for c in 0..channels {
        let row = c * len..(c + 1) * len;
        let w = g.data()[row.clone()].iter().map(|v| v.abs()).sum::<f64>() / len as f64;
        for (m, a) in cam.iter_mut().zip(&acts.data()[row]) {
            *m += w * a.abs();
        }
    }
    let mut values = upsample_linear(&cam, arch.input_len);
    let max = values.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Ok(Saliency {
            values: vec![0.0; arch.input_len],
            degenerate: true,
        });
    }
    values.iter_mut().for_each(|v| *v /= max);
    Ok(Saliency {
        values,
        degenerate: false,
    })
}

/// Mask of the `ceil(fraction * n)` largest values; ties break toward the
/// lower index.
pub fn top_fraction(values: &[f64], fraction: f64) -> Vec<bool> {
    let k = ((fraction * values.len() as f64).ceil() as usize).min(values.len());
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut mask = vec![false; values.len()];
    for &i in &order[..k] {
        mask[i] = true;
    }
    mask
}

/// Intersection over union of two masks; 0 when both are empty.
pub fn jaccard(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}
