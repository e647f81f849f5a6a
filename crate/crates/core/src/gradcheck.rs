//! Central finite-difference checks of the reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::autodiff::{Array, Tape, Var};
use crate::cvae::{cvae_loss_tape, reparameterize_tape, CvaeArch, CvaeModel};
use crate::dataset::{one_hot, regression_target, VocClass};
use crate::discriminator::{composite_loss_tape, DiscriminatorArch, DiscriminatorModel};
use crate::error::Result;
use crate::seed::SeededRng;

pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn random_array(rng: &mut SeededRng, shape: &[usize], scale: f64) -> Array {
    let n = shape.iter().product();
    let data = (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
    Array::new(shape.to_vec(), data).expect("shape matches data")
}

type Build = dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var>;

/// Largest relative error between the tape's gradient of
/// `sum(build(inputs) * r)` (random fixed `r`) and central differences,
/// over every entry of every input.
pub fn check_op(inputs: &[Array], build: &Build, seed: u64) -> Result<f64> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let eval = |inputs: &[Array], want_grads: bool, r: Option<&Array>| -> Result<(f64, Array, Vec<Array>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| tape.variable(a.clone())).collect();
        let out = build(&mut tape, &vars)?;
        let weights = match r {
            Some(r) => r.clone(),
            None => Array::zeros(tape.value(out).shape().to_vec()),
        };
        let rv = tape.constant(weights.clone());
        let prod = tape.mul(out, rv)?;
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        let grads = if want_grads {
            let g = tape.backward(loss)?;
            vars.iter()
                .zip(inputs)
                .map(|(v, a)| g.get(*v).cloned().unwrap_or_else(|| Array::zeros(a.shape().to_vec())))
                .collect()
        } else {
            Vec::new()
        };
        Ok((value, tape.value(out).clone(), grads))
    };
    let (_, out, _) = eval(inputs, false, None)?;
    let r = random_array(&mut rng, out.shape(), 1.0);
    let (_, _, analytic) = eval(inputs, true, Some(&r))?;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (eval(&plus, false, Some(&r))?.0 - eval(&minus, false, Some(&r))?.0) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[k].data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Positive inputs bounded away from zero, for ops with a kink or a log.
fn positive(rng: &mut SeededRng, shape: &[usize]) -> Array {
    random_array(rng, shape, 1.0).map(|v| 0.2 + v.abs())
}

/// One `(operator, worst relative error)` entry per differentiable op.
pub fn operator_suite(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = SeededRng::seed_from_u64(seed);
    let mut r = |shape: &[usize]| random_array(&mut rng, shape, 1.0);
    let x3 = r(&[2, 2, 9]);
    let w3 = r(&[3, 2, 3]);
    let b3 = r(&[3]);
    let xt = r(&[2, 3, 5]);
    let wt = r(&[3, 2, 4]);
    let bt = r(&[2]);
    let xl = r(&[3, 6]);
    let wl = r(&[4, 6]);
    let bl = r(&[4]);
    let a = r(&[2, 5]);
    let b = r(&[2, 5]);
    let c = r(&[2, 3]);
    // keep relu inputs away from the kink
    let kinked = r(&[2, 7]).map(|v| if v.abs() < 0.1 { v + 0.3 } else { v });
    let mut prng = SeededRng::seed_from_u64(seed ^ 0x5eed);
    let pos = positive(&mut prng, &[2, 6]);

    let mut out = Vec::new();
    let mut run = |name: &'static str, inputs: Vec<Array>, build: &Build| -> Result<()> {
        out.push((name, check_op(&inputs, build, seed)?));
        Ok(())
    };
    run("conv1d", vec![x3.clone(), w3.clone(), b3.clone()], &|t, v| t.conv1d(v[0], v[1], Some(v[2]), 1, 1))?;
    run("conv1d_strided", vec![x3.clone(), w3.clone()], &|t, v| t.conv1d(v[0], v[1], None, 2, 2))?;
    run("conv1d_transpose", vec![xt.clone(), wt.clone(), bt.clone()], &|t, v| {
        t.conv1d_transpose(v[0], v[1], Some(v[2]), 2, 1)
    })?;
    run("avg_pool1d", vec![x3.clone()], &|t, v| t.avg_pool1d(v[0], 2))?;
    run("linear", vec![xl.clone(), wl.clone(), bl.clone()], &|t, v| t.linear(v[0], v[1], Some(v[2])))?;
    run("relu", vec![kinked], &|t, v| Ok(t.relu(v[0])))?;
    run("exp", vec![a.clone()], &|t, v| Ok(t.exp(v[0])))?;
    run("softmax", vec![a.clone()], &|t, v| t.softmax(v[0]))?;
    run("log_clamped", vec![pos], &|t, v| Ok(t.log_clamped(v[0], 1e-12)))?;
    run("dropout", vec![a.clone()], &|t, v| {
        let mut rng = SeededRng::seed_from_u64(7);
        t.dropout(v[0], 0.5, &mut rng, true)
    })?;
    run("add", vec![a.clone(), b.clone()], &|t, v| t.add(v[0], v[1]))?;
    run("sub", vec![a.clone(), b.clone()], &|t, v| t.sub(v[0], v[1]))?;
    run("mul", vec![a.clone(), b.clone()], &|t, v| t.mul(v[0], v[1]))?;
    run("scale", vec![a.clone()], &|t, v| Ok(t.scale(v[0], -1.7)))?;
    run("offset", vec![a.clone()], &|t, v| Ok(t.offset(v[0], 0.4)))?;
    run("square", vec![a.clone()], &|t, v| Ok(t.square(v[0])))?;
    run("sum", vec![a.clone()], &|t, v| Ok(t.sum(v[0])))?;
    run("mean", vec![a.clone()], &|t, v| Ok(t.mean(v[0])))?;
    run("reshape", vec![a.clone()], &|t, v| t.reshape(v[0], &[5, 2]))?;
    run("flatten", vec![x3.clone()], &|t, v| t.flatten(v[0]))?;
    run("concat", vec![a.clone(), c.clone()], &|t, v| t.concat(&[v[0], v[1]], 1))?;
    Ok(out)
}

fn model_check(
    values: &[Array],
    loss_of: &dyn Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let eval = |values: &[Array], grads: bool| -> Result<(f64, Vec<Array>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|a| tape.variable(a.clone())).collect();
        let loss = loss_of(&mut tape, &vars)?;
        let value = tape.value(loss).item();
        let g = if grads {
            let g = tape.backward(loss)?;
            vars.iter()
                .zip(values)
                .map(|(v, a)| g.get(*v).cloned().unwrap_or_else(|| Array::zeros(a.shape().to_vec())))
                .collect()
        } else {
            Vec::new()
        };
        Ok((value, g))
    };
    let (_, analytic) = eval(values, true)?;
    let mut worst: f64 = 0.0;
    for k in 0..values.len() {
        for i in 0..values[k].len() {
            let mut p = values.to_vec();
            p[k].data_mut()[i] += STEP;
            let mut m = values.to_vec();
            m[k].data_mut()[i] -= STEP;
            let numeric = (eval(&p, false)?.0 - eval(&m, false)?.0) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[k].data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Composite-loss gradient check of the 22-channel discriminator with
/// respect to every parameter and the input, with dropout active under a
/// pinned mask.
pub fn discriminator_check(seed: u64) -> Result<f64> {
    let model = DiscriminatorModel::new(DiscriminatorArch::miniature(), seed)?;
    let mut rng = SeededRng::seed_from_u64(seed);
    let len = model.arch().input_len;
    let x = positive(&mut rng, &[2, 1, len]).map(|v| 0.3 * v);
    let oh: Vec<f64> = [one_hot(VocClass::Benzene), one_hot(VocClass::Air)].concat();
    let rt: Vec<f64> = [regression_target(VocClass::Benzene, 7.0), regression_target(VocClass::Air, 0.0)].concat();
    let mut values: Vec<Array> = model.params().iter().map(|p| p.value.clone()).collect();
    values.push(x);
    let n_params = model.params().len();
    model_check(&values, &|tape, vars| {
        let mut mask_rng = SeededRng::seed_from_u64(11);
        let out = model.forward_tape(tape, &vars[..n_params], vars[n_params], Some(&mut mask_rng))?;
        let o = tape.constant(Array::new([2, 10], oh.clone())?);
        let t = tape.constant(Array::new([2, 9], rt.clone())?);
        composite_loss_tape(tape, out.probs, out.conc, o, t)
    })
}

/// CVAE loss gradient check on the miniature CVAE with the
/// reparameterisation noise pinned.
pub fn cvae_check(seed: u64) -> Result<f64> {
    let mut model = CvaeModel::new(CvaeArch::miniature(), seed)?;
    let mut rng = SeededRng::seed_from_u64(seed);
    // give the zero-initialised latent heads non-trivial values
    for id in model.latent_output_ids() {
        let shape = model.params().get(id).value.shape().to_vec();
        model.params_mut().get_mut(id).value = random_array(&mut rng, &shape, 0.3);
    }
    let a = model.arch().clone();
    let x = positive(&mut rng, &[2, 1, a.input_len]).map(|v| 0.2 * v);
    let cond: Vec<f64> = [regression_target(VocClass::Toluene, 12.0), regression_target(VocClass::Ethanol, 30.0)].concat();
    let eps = random_array(&mut rng, &[2, a.latent], 1.0);
    let mut values: Vec<Array> = model.params().iter().map(|p| p.value.clone()).collect();
    values.push(x);
    let n_params = model.params().len();
    model_check(&values, &|tape, vars| {
        let x = vars[n_params];
        let c = tape.constant(Array::new([2, a.n_cond], cond.clone())?);
        let (mu, lv) = model.encode_tape(tape, &vars[..n_params], x, c)?;
        let z = reparameterize_tape(tape, mu, lv, eps.clone())?;
        let recon = model.decode_tape(tape, &vars[..n_params], z, c)?;
        cvae_loss_tape(tape, x, recon, mu, lv, a.kl_weight)
    })
}
