use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{fan_in_uniform, he_normal, Array, ParamSet, Tape, Var};
use crate::dataset::{regression_target, Provenance, Spectrum, VocClass, N_CHANNELS, N_SLOTS};
use crate::error::{Error, Result};
use crate::par;
use crate::seed::{rng_for, stream};

const DECODE_BATCH: usize = 64;

/// Layer geometry of the conditional autoencoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvaeArch {
    pub input_len: usize,
    pub n_cond: usize,
    pub enc_channels: Vec<usize>,
    pub kernel: usize,
    pub padding: usize,
    pub pool: usize,
    /// Encoder condition branch widths.
    pub enc_cond_hidden: Vec<usize>,
    pub emb_hidden: usize,
    pub latent: usize,
    pub dec_hidden: usize,
    /// Channels produced by the latent branch of the decoder.
    pub dec_latent_channels: usize,
    pub base_len: usize,
    /// Decoder condition branch widths before the `base_len` output.
    pub dec_cond_hidden: Vec<usize>,
    pub deconv_kernels: Vec<usize>,
    pub deconv_channels: Vec<usize>,
    pub deconv_stride: usize,
    pub deconv_padding: usize,
    /// Multiplier on the KL term of the loss.
    pub kl_weight: f64,
    /// Fixed factor applied to the ppm condition vector before either branch.
    pub cond_scale: f64,
}

impl CvaeArch {
    pub fn standard() -> Self {
        CvaeArch {
            input_len: N_CHANNELS,
            n_cond: N_SLOTS,
            enc_channels: vec![16, 16, 32, 32],
            kernel: 3,
            padding: 1,
            pool: 2,
            enc_cond_hidden: vec![32, 64],
            emb_hidden: 64,
            latent: 16,
            dec_hidden: 32,
            dec_latent_channels: 7,
            base_len: 77,
            dec_cond_hidden: vec![32, 64],
            deconv_kernels: vec![5, 5, 4],
            deconv_channels: vec![8, 8, 1],
            deconv_stride: 2,
            deconv_padding: 1,
            kl_weight: 1.0,
            cond_scale: 0.02,
        }
    }

    /// Same topology on 22-channel inputs (decoder chain 2 -> 5 -> 11 -> 22).
    pub fn miniature() -> Self {
        CvaeArch {
            input_len: 22,
            enc_channels: vec![3, 3, 4, 4],
            enc_cond_hidden: vec![6, 8],
            emb_hidden: 8,
            latent: 4,
            dec_hidden: 6,
            dec_latent_channels: 3,
            base_len: 2,
            dec_cond_hidden: vec![6, 8],
            deconv_channels: vec![4, 4, 1],
            ..Self::standard()
        }
    }

    pub fn encoder_lengths(&self) -> Vec<usize> {
        let mut lens = vec![self.input_len];
        for _ in &self.enc_channels {
            let l = *lens.last().unwrap_or(&0);
            lens.push((l + 2 * self.padding + 1).saturating_sub(self.kernel) / self.pool);
        }
        lens
    }

    pub fn decoder_lengths(&self) -> Vec<usize> {
        let mut lens = vec![self.base_len];
        for &k in &self.deconv_kernels {
            let l = *lens.last().unwrap_or(&0);
            lens.push(((l.max(1) - 1) * self.deconv_stride + k).saturating_sub(2 * self.deconv_padding));
        }
        lens
    }

    pub fn flat_features(&self) -> usize {
        self.enc_channels.last().copied().unwrap_or(0) * self.encoder_lengths().last().copied().unwrap_or(0)
    }

    /// Checks that both length chains close: the encoder reaches a non-empty
    /// feature map and the decoder ends exactly at `input_len` with one channel.
    pub fn validate(&self) -> Result<()> {
        let dec = self.decoder_lengths();
        let problems = [
            (self.flat_features() == 0, "encoder collapses to zero length".to_string()),
            (
                *dec.last().unwrap_or(&0) != self.input_len,
                format!("decoder chain {dec:?} does not end at {}", self.input_len),
            ),
            (
                self.deconv_kernels.len() != self.deconv_channels.len() || self.deconv_channels.last() != Some(&1),
                "decoder must end in a single channel".to_string(),
            ),
            (self.latent == 0 || self.n_cond == 0, "latent and condition sizes must be positive".to_string()),
            (!(self.kl_weight >= 0.0 && self.kl_weight.is_finite()), "kl_weight must be non-negative".to_string()),
            (!(self.cond_scale > 0.0 && self.cond_scale.is_finite()), "cond_scale must be positive".to_string()),
        ];
        match problems.into_iter().find(|(bad, _)| *bad) {
            Some((_, msg)) => Err(Error::Config(format!("invalid cvae architecture: {msg}"))),
            None => Ok(()),
        }
    }
}

struct Cursor<'v> {
    vars: &'v [Var],
    next: usize,
}

impl Cursor<'_> {
    fn pair(&mut self) -> (Var, Var) {
        let p = (self.vars[self.next], self.vars[self.next + 1]);
        self.next += 2;
        p
    }
}

/// Conditional VAE over spectra, conditioned on a 9-slot concentration
/// vector in both the encoder and the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct CvaeModel {
    arch: CvaeArch,
    params: ParamSet,
    decoder_offset: usize,
}

impl CvaeModel {
    pub fn new(arch: CvaeArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng_for(seed, &[stream::INIT]);
        let mut params = ParamSet::new();
        let dense = |params: &mut ParamSet, rng: &mut _, name: String, n_in: usize, n_out: usize, last: bool| {
            let w = if last {
                fan_in_uniform(rng, &[n_out, n_in], n_in)
            } else {
                he_normal(rng, &[n_out, n_in], n_in)
            };
            params.add(format!("{name}.weight"), w);
            params.add(format!("{name}.bias"), Array::zeros([n_out]));
        };

        let mut c_in = 1;
        for (i, &c) in arch.enc_channels.iter().enumerate() {
            params.add(format!("enc.conv{i}.weight"), he_normal(&mut rng, &[c, c_in, arch.kernel], c_in * arch.kernel));
            params.add(format!("enc.conv{i}.bias"), Array::zeros([c]));
            c_in = c;
        }
        let mut n_in = arch.n_cond;
        for (j, &w) in arch.enc_cond_hidden.iter().enumerate() {
            dense(&mut params, &mut rng, format!("enc.cond{j}"), n_in, w, false);
            n_in = w;
        }
        let joint = arch.flat_features() + n_in;
        dense(&mut params, &mut rng, "enc.emb0".into(), joint, arch.emb_hidden, false);
        // the posterior starts at the prior so the KL term starts at zero
        for head in ["mu", "log_var"] {
            params.add(format!("enc.{head}.weight"), Array::zeros([arch.latent, arch.emb_hidden]));
            params.add(format!("enc.{head}.bias"), Array::zeros([arch.latent]));
        }

        let decoder_offset = params.len();
        dense(&mut params, &mut rng, "dec.emb0".into(), arch.latent, arch.dec_hidden, false);
        dense(
            &mut params,
            &mut rng,
            "dec.emb1".into(),
            arch.dec_hidden,
            arch.dec_latent_channels * arch.base_len,
            true,
        );
        let mut n_in = arch.n_cond;
        for (j, &w) in arch.dec_cond_hidden.iter().enumerate() {
            dense(&mut params, &mut rng, format!("dec.cond{j}"), n_in, w, false);
            n_in = w;
        }
        dense(
            &mut params,
            &mut rng,
            format!("dec.cond{}", arch.dec_cond_hidden.len()),
            n_in,
            arch.base_len,
            true,
        );
        let mut c_in = arch.dec_latent_channels + 1;
        for (i, (&c, &k)) in arch.deconv_channels.iter().zip(&arch.deconv_kernels).enumerate() {
            let fan_in = (c_in * k).div_ceil(arch.deconv_stride);
            params.add(format!("dec.deconv{i}.weight"), he_normal(&mut rng, &[c_in, c, k], fan_in));
            params.add(format!("dec.deconv{i}.bias"), Array::zeros([c]));
            c_in = c;
        }
        Ok(CvaeModel {
            arch,
            params,
            decoder_offset,
        })
    }

    pub fn from_params(arch: CvaeArch, values: &[f64]) -> Result<Self> {
        let mut m = Self::new(arch, 0)?;
        m.params.load_flat(values)?;
        Ok(m)
    }

    pub fn arch(&self) -> &CvaeArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Parameter ids of the `(mu, log_var)` output layers' weights and biases.
    pub fn latent_output_ids(&self) -> [usize; 4] {
        let base = self.decoder_offset - 4;
        [base, base + 1, base + 2, base + 3]
    }

    /// Parameter id of the last transposed convolution's bias.
    pub fn output_bias_id(&self) -> usize {
        self.params.len() - 1
    }

    fn mlp(tape: &mut Tape<'_>, cur: &mut Cursor<'_>, mut h: Var, layers: usize, relu_last: bool) -> Result<Var> {
        for j in 0..layers {
            let (w, b) = cur.pair();
            h = tape.linear(h, w, Some(b))?;
            if j + 1 < layers || relu_last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Records the encoder on `x` (`[B, 1, L]`) and `cond` (`[B, 9]`),
    /// returning `(mu, log_var)`.
    pub fn encode_tape(&self, tape: &mut Tape<'_>, vars: &[Var], x: Var, cond: Var) -> Result<(Var, Var)> {
        let a = &self.arch;
        let mut cur = Cursor { vars, next: 0 };
        let mut h = x;
        for _ in &a.enc_channels {
            let (w, b) = cur.pair();
            h = tape.conv1d(h, w, Some(b), 1, a.padding)?;
            h = tape.relu(h);
            h = tape.avg_pool1d(h, a.pool)?;
        }
        let feats = tape.flatten(h)?;
        let cond = tape.scale(cond, a.cond_scale);
        let c = Self::mlp(tape, &mut cur, cond, a.enc_cond_hidden.len(), false)?;
        let joint = tape.concat(&[feats, c], 1)?;
        let h = Self::mlp(tape, &mut cur, joint, 1, true)?;
        let (wm, bm) = cur.pair();
        let mu = tape.linear(h, wm, Some(bm))?;
        let (wv, bv) = cur.pair();
        let log_var = tape.linear(h, wv, Some(bv))?;
        Ok((mu, log_var))
    }

    /// Records the decoder on `z` (`[B, latent]`) and `cond` (`[B, 9]`),
    /// returning the reconstruction `[B, 1, L]`.
    pub fn decode_tape(&self, tape: &mut Tape<'_>, vars: &[Var], z: Var, cond: Var) -> Result<Var> {
        let a = &self.arch;
        let batch = tape.value(z).shape()[0];
        let mut cur = Cursor {
            vars,
            next: self.decoder_offset,
        };
        let hz = Self::mlp(tape, &mut cur, z, 2, false)?;
        let hz = tape.reshape(hz, &[batch, a.dec_latent_channels, a.base_len])?;
        let cond = tape.scale(cond, a.cond_scale);
        let hc = Self::mlp(tape, &mut cur, cond, a.dec_cond_hidden.len() + 1, false)?;
        let hc = tape.reshape(hc, &[batch, 1, a.base_len])?;
        let mut h = tape.concat(&[hz, hc], 1)?;
        let n = a.deconv_kernels.len();
        for i in 0..n {
            let (w, b) = cur.pair();
            h = tape.conv1d_transpose(h, w, Some(b), a.deconv_stride, a.deconv_padding)?;
            if i + 1 < n {
                h = tape.relu(h);
            }
        }
        Ok(tape.exp(h))
    }

    fn check_condition(&self, condition: &[f64]) -> Result<()> {
        if condition.len() != self.arch.n_cond {
            return Err(Error::Shape {
                op: "cvae condition",
                left: vec![self.arch.n_cond],
                right: vec![condition.len()],
            });
        }
        Ok(())
    }

    /// Posterior mean and log-variance for one spectrum.
    pub fn encode(&self, spectrum: &[f64], condition: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if spectrum.len() != self.arch.input_len {
            return Err(Error::Shape {
                op: "cvae encode",
                left: vec![self.arch.input_len],
                right: vec![spectrum.len()],
            });
        }
        self.check_condition(condition)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let x = tape.constant(Array::new([1, 1, spectrum.len()], spectrum.to_vec())?);
        let c = tape.constant(Array::new([1, condition.len()], condition.to_vec())?);
        let (mu, lv) = self.encode_tape(&mut tape, &vars, x, c)?;
        Ok((tape.value(mu).data().to_vec(), tape.value(lv).data().to_vec()))
    }

    /// Decodes a batch of latent vectors sharing the layout `[n, latent]`.
    fn decode_many(&self, zs: &[f64], conditions: &[f64]) -> Result<Vec<f64>> {
        let (lat, nc, len) = (self.arch.latent, self.arch.n_cond, self.arch.input_len);
        let n = zs.len() / lat;
        let n_batches = n.div_ceil(DECODE_BATCH);
        let parts = par::map_indexed(n_batches, |b| -> Result<Vec<f64>> {
            let (lo, hi) = (b * DECODE_BATCH, ((b + 1) * DECODE_BATCH).min(n));
            let mut tape = Tape::new();
            let vars = self.params.bind(&mut tape);
            let z = tape.constant(Array::new([hi - lo, lat], zs[lo * lat..hi * lat].to_vec())?);
            let c = tape.constant(Array::new([hi - lo, nc], conditions[lo * nc..hi * nc].to_vec())?);
            let out = self.decode_tape(&mut tape, &vars, z, c)?;
            Ok(tape.value(out).data().to_vec())
        });
        let mut out = Vec::with_capacity(n * len);
        for p in parts {
            out.extend(p?);
        }
        Ok(out)
    }

    pub fn decode(&self, z: &[f64], condition: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.arch.latent {
            return Err(Error::Shape {
                op: "cvae decode",
                left: vec![self.arch.latent],
                right: vec![z.len()],
            });
        }
        self.check_condition(condition)?;
        self.decode_many(z, condition)
    }

    /// Draws `n` spectra from the prior, conditioned on `class` at
    /// `concentration` ppm.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        class: VocClass,
        concentration: f64,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<Spectrum>> {
        self.generate_many(&vec![(class, concentration); n], rng)
    }

    /// One generated spectrum per `(class, concentration)` request.
    pub fn generate_many<R: Rng + ?Sized>(&self, requests: &[(VocClass, f64)], rng: &mut R) -> Result<Vec<Spectrum>> {
        if requests.is_empty() {
            return Err(Error::invalid("generate", "n must be at least 1"));
        }
        if self.arch.input_len != N_CHANNELS || self.arch.n_cond != N_SLOTS {
            return Err(Error::Config("generation needs the full-size architecture".into()));
        }
        let mut conds = Vec::with_capacity(requests.len() * N_SLOTS);
        for &(class, c) in requests {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::Domain(format!("concentration {c} must be non-negative")));
            }
            if class.is_air() && c != 0.0 {
                return Err(Error::Domain("air can only be generated at zero concentration".into()));
            }
            conds.extend_from_slice(&regression_target(class, c));
        }
        let zs: Vec<f64> = (0..requests.len() * self.arch.latent)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let out = self.decode_many(&zs, &conds)?;
        requests
            .iter()
            .zip(out.chunks(N_CHANNELS))
            .map(|(&(class, c), x)| Spectrum::new(x.to_vec(), class, c, Provenance::CvaeGenerated))
            .collect()
    }

    /// Posterior means for each spectrum, conditioned on its own label.
    pub fn embed(&self, spectra: &[&Spectrum]) -> Result<Vec<Vec<f64>>> {
        par::map_indexed(spectra.len(), |i| {
            let s = spectra[i];
            self.encode(s.absorbance(), &regression_target(s.class(), s.concentration()))
                .map(|(mu, _)| mu)
        })
        .into_iter()
        .collect()
    }
}

/// `z = mu + exp(log_var / 2) * eps` with `eps ~ N(0, I)`.
pub fn reparameterize<R: Rng + ?Sized>(mu: &[f64], log_var: &[f64], rng: &mut R) -> Vec<f64> {
    let eps: Vec<f64> = (0..mu.len()).map(|_| rng.sample(StandardNormal)).collect();
    reparameterize_with(mu, log_var, &eps)
}

/// Reparameterization with caller-supplied noise.
pub fn reparameterize_with(mu: &[f64], log_var: &[f64], eps: &[f64]) -> Vec<f64> {
    mu.iter()
        .zip(log_var)
        .zip(eps)
        .map(|((m, lv), e)| {
            let sd = (0.5 * lv).exp();
            if *e == 0.0 {
                *m
            } else {
                m + sd * e
            }
        })
        .collect()
}

/// `0.5 * sum(mu^2 + exp(lv) - 1 - lv)`.
pub fn kl_divergence(mu: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Channel-averaged reconstruction MSE plus the KL term.
pub fn cvae_loss(x: &[f64], x_recon: &[f64], mu: &[f64], log_var: &[f64]) -> Result<f64> {
    if x.len() != x_recon.len() || x.is_empty() || mu.len() != log_var.len() {
        return Err(Error::Shape {
            op: "cvae_loss",
            left: vec![x.len(), mu.len()],
            right: vec![x_recon.len(), log_var.len()],
        });
    }
    let mse = x.iter().zip(x_recon).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64;
    Ok(mse + kl_divergence(mu, log_var))
}

/// Batched loss on the tape: per-sample channel MSE plus `kl_weight` times
/// the per-sample KL, both averaged over the batch.
pub fn cvae_loss_tape(tape: &mut Tape<'_>, x: Var, x_recon: Var, mu: Var, log_var: Var, kl_weight: f64) -> Result<Var> {
    let batch = tape.value(x).shape().first().copied().unwrap_or(1).max(1) as f64;
    let diff = tape.sub(x_recon, x)?;
    let sq = tape.square(diff);
    let mse = tape.mean(sq);
    let m2 = tape.square(mu);
    let v = tape.exp(log_var);
    let t = tape.add(m2, v)?;
    let t = tape.sub(t, log_var)?;
    let t = tape.offset(t, -1.0);
    let kl = tape.sum(t);
    let kl = tape.scale(kl, 0.5 * kl_weight / batch);
    tape.add(mse, kl)
}

/// Latent sample on the tape with externally drawn noise `eps`.
pub fn reparameterize_tape(tape: &mut Tape<'_>, mu: Var, log_var: Var, eps: Array) -> Result<Var> {
    let half = tape.scale(log_var, 0.5);
    let sd = tape.exp(half);
    let e = tape.constant(eps);
    let noise = tape.mul(sd, e)?;
    tape.add(mu, noise)
}
