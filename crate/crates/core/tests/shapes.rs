use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vocspec::autodiff::{Array, Tape};
use vocspec::cvae::{CvaeArch, CvaeModel};
use vocspec::discriminator::{DiscriminatorArch, DiscriminatorModel};

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `<conv(x), y> == <x, conv_transpose(y)>` with shared weights.
fn adjoint_gap(rng: &mut ChaCha8Rng, batch: usize, c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize, len: usize) -> f64 {
    let x = random(rng, &[batch, c_in, len]);
    let w = random(rng, &[c_out, c_in, k]);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.constant(w);
    let y = tape.conv1d(xv, wv, None, stride, pad).unwrap();
    let out_len = tape.value(y).dim(2);
    let r = random(rng, &[batch, c_out, out_len]);
    let lhs = tape.value(y).dot(&r);
    let rv = tape.constant(r);
    let back = tape.conv1d_transpose(rv, wv, None, stride, pad).unwrap();
    assert_eq!(tape.value(back).shape(), x.shape());
    let rhs = x.dot(tape.value(back));
    (lhs - rhs).abs() / lhs.abs().max(1.0)
}

#[test]
fn convolution_and_transpose_are_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cases = [
        (2, 1, 3, 3, 1, 1, 622),
        (3, 3, 3, 3, 1, 1, 311),
        (2, 8, 8, 5, 2, 1, 155),
        (1, 8, 1, 4, 2, 1, 622),
        (4, 2, 5, 3, 2, 0, 21),
    ];
    for _ in 0..5 {
        for &(b, ci, co, k, s, p, l) in &cases {
            let gap = adjoint_gap(&mut rng, b, ci, co, k, s, p, l);
            assert!(gap < 1e-10, "case {:?}: gap {gap:e}", (b, ci, co, k, s, p, l));
        }
    }
}

#[test]
fn discriminator_features_are_155_long() {
    let m = DiscriminatorModel::new(DiscriminatorArch::standard(), 0).unwrap();
    let mut tape = Tape::new();
    let vars = m.params().bind(&mut tape);
    let x = tape.constant(Array::zeros([1, 1, 622]));
    let out = m.forward_tape(&mut tape, &vars, x, None).unwrap();
    assert_eq!(tape.value(out.features).shape(), &[1, 3, 155]);
}

#[test]
fn decoder_chain_is_77_155_311_622() {
    let m = CvaeModel::new(CvaeArch::standard(), 0).unwrap();
    let mut tape = Tape::new();
    let vars = m.params().bind(&mut tape);
    let z = tape.constant(Array::zeros([2, 16]));
    let c = tape.constant(Array::zeros([2, 9]));
    let out = m.decode_tape(&mut tape, &vars, z, c).unwrap();
    assert_eq!(tape.value(out).shape(), &[2, 1, 622]);
    assert_eq!(m.arch().decoder_lengths(), vec![77, 155, 311, 622]);
}
