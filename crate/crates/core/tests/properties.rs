use proptest::prelude::*;
use vocspec::analysis::{kruskal_wallis, r2_score, PValueMethod};
use vocspec::autodiff::{Array, Tape};
use vocspec::cvae::kl_divergence;
use vocspec::dataset::{channel_grid, one_hot, VocClass};
use vocspec::discriminator::{composite_loss, Prediction};

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..20)) {
        let n = v.len();
        let mut tape = Tape::new();
        let x = tape.constant(Array::new([1, n], v).unwrap());
        let p = tape.softmax(x).unwrap();
        let s: f64 = tape.value(p).data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kl_is_non_negative(pairs in prop::collection::vec((-5.0f64..5.0, -8.0f64..8.0), 1..16)) {
        let (mu, lv): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(kl_divergence(&mu, &lv) >= 0.0);
    }

    #[test]
    fn r2_never_exceeds_one(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..30)) {
        let (t, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        if let Ok(r) = r2_score(&t, &p) {
            prop_assert!(r <= 1.0);
        }
    }

    #[test]
    fn loss_splits_into_its_terms(probs in prop::collection::vec(0.01f64..1.0, 10), conc in prop::collection::vec(-5.0f64..5.0, 9), k in 0usize..10) {
        let total: f64 = probs.iter().sum();
        let probs: Vec<f64> = probs.iter().map(|p| p / total).collect();
        let oh = one_hot(VocClass::from_index(k).unwrap());
        let with_exact_conc = composite_loss(&probs, &conc, &oh, &conc).unwrap();
        prop_assert!((with_exact_conc + probs[k].ln()).abs() < 1e-12);
        let zero = [0.0; 9];
        let with_exact_class = composite_loss(&oh, &conc, &oh, &zero).unwrap();
        let mse = conc.iter().map(|c| c * c).sum::<f64>() / 9.0;
        prop_assert!((with_exact_class - mse).abs() < 1e-12);
    }

    #[test]
    fn predictions_are_consistent(probs in prop::collection::vec(0.0f64..1.0, 10), conc in prop::collection::vec(-20.0f64..20.0, 9), shift in -3.0f64..3.0) {
        let p = Prediction::from_outputs(probs.clone(), conc.clone());
        prop_assert!(p.predicted_concentration >= 0.0);
        if p.predicted_class.is_air() {
            prop_assert_eq!(p.predicted_concentration, 0.0);
        }
        // shifting logits leaves the softmax, and hence the argmax, unchanged
        let logits: Vec<f64> = probs.iter().map(|v| v * 4.0).collect();
        let mut tape = Tape::new();
        let a = tape.constant(Array::new([1, 10], logits.clone()).unwrap());
        let b = tape.constant(Array::new([1, 10], logits.iter().map(|v| v + shift).collect()).unwrap());
        let (pa, pb) = (tape.softmax(a).unwrap(), tape.softmax(b).unwrap());
        let ca = Prediction::from_outputs(tape.value(pa).data().to_vec(), conc.clone()).predicted_class;
        let cb = Prediction::from_outputs(tape.value(pb).data().to_vec(), conc).predicted_class;
        prop_assert_eq!(ca, cb);
    }

    #[test]
    fn kruskal_ignores_monotone_transforms(g in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 1..4), 2..4)) {
        let total: usize = g.iter().map(Vec::len).sum();
        prop_assume!(total >= 3);
        if let Ok(a) = kruskal_wallis(&g, PValueMethod::Auto) {
            let t: Vec<Vec<f64>> = g.iter().map(|v| v.iter().map(|x| x.powi(3) + 2.0 * x).collect()).collect();
            let b = kruskal_wallis(&t, PValueMethod::Auto).unwrap();
            prop_assert!((a.h - b.h).abs() < 1e-12);
            prop_assert!((a.p - b.p).abs() < 1e-12);
        }
    }
}

#[test]
fn grid_spans_the_window() {
    let g = channel_grid();
    assert_eq!(g.len(), 622);
    assert_eq!((g[0], g[621]), (700.0, 1300.0));
}
