use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use undesir_core::gradcheck::check_input_gradient;
use undesir_core::metrics::{consistency_score, pixel_ratio};
use undesir_core::perturbation::{bilinear_upsample, gaussian_blur, mask_apply, BlurConfig};
use undesir_core::tensor::softmax;
use undesir_core::{Classifier, ClassifierSpec, Tensor, ToyLinearModel};

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masking_identities_and_convexity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[9, 7, 3], 0.0, 1.0);
        let h = gaussian_blur(&x, &BlurConfig::DESK_SCALE).unwrap();
        prop_assert_eq!(mask_apply(&x, &Tensor::full(&[9, 7], 1.0), &h).unwrap(), x.clone());
        prop_assert_eq!(mask_apply(&x, &Tensor::zeros(&[9, 7]), &h).unwrap(), h.clone());
        let m = random(&mut rng, &[9, 7], 0.0, 1.0);
        let q = mask_apply(&x, &m, &h).unwrap();
        for ((qv, xv), hv) in q.data().iter().zip(x.data()).zip(h.data()) {
            prop_assert!(*qv >= xv.min(*hv) - 1e-15 && *qv <= xv.max(*hv) + 1e-15);
        }
    }

    #[test]
    fn masking_is_affine_in_the_mask(seed in any::<u64>(), a in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[6, 6, 3], 0.0, 1.0);
        let h = gaussian_blur(&x, &BlurConfig::DESK_SCALE).unwrap();
        let m1 = random(&mut rng, &[6, 6], 0.0, 1.0);
        let m2 = random(&mut rng, &[6, 6], 0.0, 1.0);
        let mix = Tensor::from_fn(&[6, 6], |i| a * m1.data()[i] + (1.0 - a) * m2.data()[i]);
        let q = mask_apply(&x, &mix, &h).unwrap();
        let q1 = mask_apply(&x, &m1, &h).unwrap();
        let q2 = mask_apply(&x, &m2, &h).unwrap();
        for i in 0..q.len() {
            prop_assert!((q.data()[i] - (a * q1.data()[i] + (1.0 - a) * q2.data()[i])).abs() <= 1e-12);
        }
    }

    #[test]
    fn upsampling_a_constant_is_constant(c in 0.0f64..1.0, h in 1usize..6, w in 1usize..6) {
        let up = bilinear_upsample(&Tensor::full(&[h, w], c), (4 * h, 3 * w)).unwrap();
        prop_assert!(up.data().iter().all(|v| (v - c).abs() <= 1e-12));
    }

    #[test]
    fn pixel_ratio_is_monotone(seed in any::<u64>(), t1 in 0.01f64..0.99, t2 in 0.01f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random(&mut rng, &[8, 8], 0.0, 1.0);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(pixel_ratio(&m, lo) >= pixel_ratio(&m, hi));
    }

    #[test]
    fn consistency_ignores_mask_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let masks: Vec<Tensor> = (0..4).map(|_| random(&mut rng, &[5, 5], 0.0, 1.0)).collect();
        let mut rev = masks.clone();
        rev.reverse();
        let a = consistency_score(&masks).unwrap();
        prop_assert!((a - consistency_score(&rev).unwrap()).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0f64..50.0, 2..12)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|v| *v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    // Blurring region R raises logit_k exactly when ⟨W_k on R, X − h(X)⟩ < 0.
    #[test]
    fn toy_blur_region_moves_logit_by_inner_product(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<Tensor> = (0..3).map(|_| random(&mut rng, &[8, 8, 3], -1.0, 1.0)).collect();
        let m = ToyLinearModel::new(w.clone(), vec![0.1, 0.0, -0.1]).unwrap();
        let x = random(&mut rng, &[8, 8, 3], 0.0, 1.0);
        let h = gaussian_blur(&x, &BlurConfig::DESK_SCALE).unwrap();
        let (y0, x0) = (rng.gen_range(0..6), rng.gen_range(0..6));
        let region = Tensor::from_fn(&[8, 8], |i| {
            let (r, c) = (i / 8, i % 8);
            if (y0..y0 + 3).contains(&r) && (x0..x0 + 3).contains(&c) { 0.0 } else { 1.0 }
        });
        let q = mask_apply(&x, &region, &h).unwrap();
        let k = rng.gen_range(0..3);
        let delta = m.logits(&q).unwrap()[k] - m.logits(&x).unwrap()[k];
        let mut inner = 0.0;
        for i in 0..x.len() {
            if region.data()[i / 3] == 0.0 {
                inner += w[k].data()[i] * (x.data()[i] - h.data()[i]);
            }
        }
        prop_assert!((delta + inner).abs() <= 1e-10);
        prop_assert_eq!(delta > 0.0, inner < 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn input_gradients_match_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cnn = ClassifierSpec::init_reference([8, 8, 3], 3, rng.gen()).unwrap();
        let toy = ToyLinearModel::new((0..3).map(|_| random(&mut rng, &[8, 8, 3], -1.0, 1.0)).collect(), vec![0.0; 3]).unwrap();
        let x = random(&mut rng, &[8, 8, 3], 0.0, 1.0);
        let cot = [0.5, -1.0, 0.25];
        let pixels: Vec<usize> = (0..20).map(|_| rng.gen_range(0..x.len())).collect();
        prop_assert!(check_input_gradient(&cnn, &x, &cot, &pixels).unwrap() <= 1e-5);
        prop_assert!(check_input_gradient(&toy, &x, &cot, &pixels).unwrap() <= 1e-5);
        prop_assert_eq!(cnn.num_classes(), toy.num_classes());
    }
}
