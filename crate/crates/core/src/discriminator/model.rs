use serde::{Deserialize, Serialize};

use crate::autodiff::{fan_in_uniform, he_normal, Array, ParamSet, Tape, Var};
use crate::dataset::{one_hot, regression_target, Spectrum, VocClass, N_CHANNELS, N_CLASSES, N_SLOTS};
use crate::error::{Error, Result};
use crate::par;
use crate::seed::{rng_for, stream, SeededRng};

/// Floor applied to probabilities inside the cross-entropy logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
const PREDICT_BATCH: usize = 64;

/// Layer geometry of the two-head network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorArch {
    pub input_len: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    pub pool: usize,
    /// Hidden widths shared by both heads.
    pub hidden: Vec<usize>,
    pub n_classes: usize,
    pub n_slots: usize,
    pub dropout: f64,
}

impl DiscriminatorArch {
    /// Conv(3) -> pool -> conv(3) -> pool on 622 channels, heads 465-256-64-{10, 9}.
    pub fn standard() -> Self {
        DiscriminatorArch {
            input_len: N_CHANNELS,
            conv_channels: vec![3, 3],
            kernel: 3,
            padding: 1,
            pool: 2,
            hidden: vec![256, 64],
            n_classes: N_CLASSES,
            n_slots: N_SLOTS,
            dropout: 0.5,
        }
    }

    /// Same topology on 22-channel inputs with narrow heads, for gradient checks.
    pub fn miniature() -> Self {
        DiscriminatorArch {
            input_len: 22,
            hidden: vec![12, 8],
            ..Self::standard()
        }
    }

    /// Signal length after the conv/pool stack.
    pub fn feature_len(&self) -> usize {
        self.conv_channels.iter().fold(self.input_len, |len, _| {
            (len + 2 * self.padding - self.kernel + 1) / self.pool
        })
    }

    pub fn flat_features(&self) -> usize {
        self.conv_channels.last().copied().unwrap_or(1) * self.feature_len()
    }

    pub fn validate(&self) -> Result<()> {
        let ok = !self.conv_channels.is_empty()
            && self.kernel >= 1
            && self.pool >= 1
            && self.feature_len() >= 1
            && self.n_classes >= 1
            && (0.0..1.0).contains(&self.dropout);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid discriminator architecture {self:?}")))
        }
    }
}

/// Classifier probabilities and regression outputs for one spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class_probs: Vec<f64>,
    pub conc_vector: Vec<f64>,
    pub predicted_class: VocClass,
    /// Regression output at the predicted class's slot, clipped at zero;
    /// zero when the prediction is air.
    pub predicted_concentration: f64,
}

impl Prediction {
    pub fn from_outputs(class_probs: Vec<f64>, conc_vector: Vec<f64>) -> Self {
        let predicted_class = VocClass::from_index(argmax(&class_probs)).unwrap_or(VocClass::Air);
        let predicted_concentration = predicted_class
            .slot()
            .and_then(|s| conc_vector.get(s).copied())
            .map_or(0.0, |c| c.max(0.0));
        Prediction {
            class_probs,
            conc_vector,
            predicted_class,
            predicted_concentration,
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Variables produced by one forward pass on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Pooled output of the last conv block, `[B, C, feature_len]`.
    pub features: Var,
    pub logits: Var,
    pub probs: Var,
    pub conc: Var,
}

/// Two-head CNN: a shared conv trunk feeding a softmax classifier and a
/// linear concentration regressor.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorModel {
    arch: DiscriminatorArch,
    params: ParamSet,
}

impl DiscriminatorModel {
    pub fn new(arch: DiscriminatorArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng_for(seed, &[stream::INIT]);
        let mut params = ParamSet::new();
        let mut c_in = 1;
        for (i, &c_out) in arch.conv_channels.iter().enumerate() {
            let fan_in = c_in * arch.kernel;
            params.add(format!("conv{i}.weight"), he_normal(&mut rng, &[c_out, c_in, arch.kernel], fan_in));
            params.add(format!("conv{i}.bias"), Array::zeros([c_out]));
            c_in = c_out;
        }
        for (head, n_out) in [("classifier", arch.n_classes), ("regressor", arch.n_slots)] {
            let mut n_in = arch.flat_features();
            for (j, &width) in arch.hidden.iter().enumerate() {
                params.add(format!("{head}.{j}.weight"), he_normal(&mut rng, &[width, n_in], n_in));
                params.add(format!("{head}.{j}.bias"), Array::zeros([width]));
                n_in = width;
            }
            let j = arch.hidden.len();
            params.add(format!("{head}.{j}.weight"), fan_in_uniform(&mut rng, &[n_out, n_in], n_in));
            params.add(format!("{head}.{j}.bias"), Array::zeros([n_out]));
        }
        Ok(DiscriminatorModel { arch, params })
    }

    /// Rebuilds a model from stored parameter values.
    pub fn from_params(arch: DiscriminatorArch, values: &[f64]) -> Result<Self> {
        let mut m = Self::new(arch, 0)?;
        m.params.load_flat(values)?;
        Ok(m)
    }

    pub fn arch(&self) -> &DiscriminatorArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn head_offset(&self, head: usize) -> usize {
        2 * self.arch.conv_channels.len() + head * 2 * (self.arch.hidden.len() + 1)
    }

    /// Parameter ids `(weight, bias)` of the final classifier layer.
    pub fn classifier_output_ids(&self) -> (usize, usize) {
        let base = self.head_offset(0) + 2 * self.arch.hidden.len();
        (base, base + 1)
    }

    /// Parameter ids `(weight, bias)` of the final regression layer.
    pub fn regressor_output_ids(&self) -> (usize, usize) {
        let base = self.head_offset(1) + 2 * self.arch.hidden.len();
        (base, base + 1)
    }

    fn head(
        &self,
        tape: &mut Tape<'_>,
        vars: &[Var],
        head: usize,
        mut h: Var,
        rng: &mut Option<&mut SeededRng>,
    ) -> Result<Var> {
        let base = self.head_offset(head);
        for j in 0..self.arch.hidden.len() {
            h = tape.linear(h, vars[base + 2 * j], Some(vars[base + 2 * j + 1]))?;
            h = tape.relu(h);
            if let Some(r) = rng.as_deref_mut() {
                h = tape.dropout(h, self.arch.dropout, r, true)?;
            }
        }
        let j = self.arch.hidden.len();
        tape.linear(h, vars[base + 2 * j], Some(vars[base + 2 * j + 1]))
    }

    /// Records a forward pass of `x` (`[B, 1, L]`). Dropout is active only
    /// when an RNG is supplied.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<'_>,
        vars: &[Var],
        x: Var,
        mut rng: Option<&mut SeededRng>,
    ) -> Result<ForwardVars> {
        let a = &self.arch;
        let shape = tape.value(x).shape();
        if shape.len() != 3 || shape[1] != 1 || shape[2] != a.input_len {
            return Err(Error::Shape {
                op: "discriminator",
                left: vec![shape.first().copied().unwrap_or(0), 1, a.input_len],
                right: shape.to_vec(),
            });
        }
        let mut h = x;
        for i in 0..a.conv_channels.len() {
            h = tape.conv1d(h, vars[2 * i], Some(vars[2 * i + 1]), 1, a.padding)?;
            h = tape.relu(h);
            h = tape.avg_pool1d(h, a.pool)?;
        }
        let features = h;
        let flat = tape.flatten(features)?;
        let logits = self.head(tape, vars, 0, flat, &mut rng)?;
        let probs = tape.softmax(logits)?;
        let conc = self.head(tape, vars, 1, flat, &mut rng)?;
        Ok(ForwardVars {
            features,
            logits,
            probs,
            conc,
        })
    }

    /// Class probabilities and concentration vector for one spectrum.
    pub fn forward(&self, spectrum: &[f64], rng: Option<&mut SeededRng>) -> Result<(Vec<f64>, Vec<f64>)> {
        if spectrum.len() != self.arch.input_len {
            return Err(Error::Shape {
                op: "discriminator",
                left: vec![self.arch.input_len],
                right: vec![spectrum.len()],
            });
        }
        if spectrum.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("spectrum contains non-finite values".into()));
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let x = tape.constant(Array::new([1, 1, spectrum.len()], spectrum.to_vec())?);
        let out = self.forward_tape(&mut tape, &vars, x, rng)?;
        Ok((
            tape.value(out.probs).data().to_vec(),
            tape.value(out.conc).data().to_vec(),
        ))
    }

    pub fn predict(&self, spectrum: &[f64]) -> Result<Prediction> {
        let (p, c) = self.forward(spectrum, None)?;
        Ok(Prediction::from_outputs(p, c))
    }

    /// Evaluation-mode predictions, batched and parallel across batches.
    pub fn predict_batch(&self, spectra: &[&Spectrum]) -> Result<Vec<Prediction>> {
        let n_batches = spectra.len().div_ceil(PREDICT_BATCH);
        let parts = par::map_indexed(n_batches, |b| -> Result<Vec<Prediction>> {
            let chunk = &spectra[b * PREDICT_BATCH..((b + 1) * PREDICT_BATCH).min(spectra.len())];
            let mut tape = Tape::new();
            let vars = self.params.bind(&mut tape);
            let x = tape.constant(stack_spectra(chunk, self.arch.input_len)?);
            let out = self.forward_tape(&mut tape, &vars, x, None)?;
            let probs = tape.value(out.probs).data();
            let conc = tape.value(out.conc).data();
            let (nc, ns) = (self.arch.n_classes, self.arch.n_slots);
            Ok((0..chunk.len())
                .map(|i| {
                    Prediction::from_outputs(
                        probs[i * nc..(i + 1) * nc].to_vec(),
                        conc[i * ns..(i + 1) * ns].to_vec(),
                    )
                })
                .collect())
        });
        let mut out = Vec::with_capacity(spectra.len());
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }
}

/// Packs spectra into a `[B, 1, len]` array.
pub fn stack_spectra(spectra: &[&Spectrum], len: usize) -> Result<Array> {
    let mut data = Vec::with_capacity(spectra.len() * len);
    for s in spectra {
        if s.absorbance().len() != len {
            return Err(Error::Shape {
                op: "stack_spectra",
                left: vec![len],
                right: vec![s.absorbance().len()],
            });
        }
        data.extend_from_slice(s.absorbance());
    }
    Array::new([spectra.len(), 1, len], data)
}

/// One-hot and regression targets, `[B, 10]` and `[B, 9]`.
pub fn stack_targets(spectra: &[&Spectrum]) -> Result<(Array, Array)> {
    let mut oh = Vec::with_capacity(spectra.len() * N_CLASSES);
    let mut rt = Vec::with_capacity(spectra.len() * N_SLOTS);
    for s in spectra {
        oh.extend_from_slice(&one_hot(s.class()));
        rt.extend_from_slice(&regression_target(s.class(), s.concentration()));
    }
    Ok((
        Array::new([spectra.len(), N_CLASSES], oh)?,
        Array::new([spectra.len(), N_SLOTS], rt)?,
    ))
}

/// Slot-averaged squared concentration error plus cross-entropy, averaged
/// over the batch.
pub fn composite_loss_tape(tape: &mut Tape<'_>, probs: Var, conc: Var, one_hot: Var, target: Var) -> Result<Var> {
    let batch = tape.value(probs).shape().first().copied().unwrap_or(1).max(1);
    let diff = tape.sub(conc, target)?;
    let sq = tape.square(diff);
    let mse = tape.mean(sq);
    let logp = tape.log_clamped(probs, PROB_FLOOR);
    let picked = tape.mul(one_hot, logp)?;
    let total = tape.sum(picked);
    let ce = tape.scale(total, -1.0 / batch as f64);
    tape.add(mse, ce)
}

/// Single-spectrum composite loss: MSE over the concentration slots plus
/// `-sum y_i ln max(p_i, 1e-12)`.
pub fn composite_loss(class_probs: &[f64], conc: &[f64], one_hot: &[f64], target: &[f64]) -> Result<f64> {
    if class_probs.len() != one_hot.len() || conc.len() != target.len() || conc.is_empty() {
        return Err(Error::Shape {
            op: "composite_loss",
            left: vec![class_probs.len(), conc.len()],
            right: vec![one_hot.len(), target.len()],
        });
    }
    let mse = conc.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / conc.len() as f64;
    let ce = -one_hot
        .iter()
        .zip(class_probs)
        .map(|(y, p)| y * p.max(PROB_FLOOR).ln())
        .sum::<f64>();
    Ok(mse + ce)
}
