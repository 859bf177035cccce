mod common;

use common::{naive_conv, rng, to_rows, uniform};
use ecapa_core::ops::{batchnorm1d, conv1d, dense, relu, sigmoid, softmax_over_time, BnMode};
use ecapa_core::Tensor;
use proptest::prelude::*;

fn weight_rows(w: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let [o, i, k] = *w.shape() else { panic!() };
    (0..o)
        .map(|a| (0..i).map(|b| w.data()[(a * i + b) * k..(a * i + b + 1) * k].to_vec()).collect())
        .collect()
}

#[test]
fn dilated_box_kernel_matches_direct_summation() {
    let x = Tensor::new(vec![1, 5], vec![1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let w = Tensor::new(vec![1, 1, 3], vec![1.0; 3]).unwrap();
    let b = Tensor::zeros(vec![1]);
    let y = conv1d(&x, &w, &b, 2).unwrap();
    let oracle = naive_conv(&to_rows(&x), &weight_rows(&w), &[0.0], 2);
    assert_eq!(y.data(), oracle[0].as_slice());
    // y[t] = x[t-2] + x[t] + x[t+2] with zeros outside.
    assert_eq!(y.data(), &[1.0, 0.0, 2.0, 0.0, 1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conv1d_matches_the_naive_oracle(
        seed in any::<u64>(),
        cin in 1usize..6,
        cout in 1usize..6,
        half in 0usize..3,
        dilation in 1usize..4,
        t in 1usize..20,
    ) {
        let k = 2 * half + 1;
        let mut r = rng(seed);
        let x = uniform(&mut r, &[cin, t], -2.0, 2.0);
        let w = uniform(&mut r, &[cout, cin, k], -1.0, 1.0);
        let b = uniform(&mut r, &[cout], -1.0, 1.0);
        let y = conv1d(&x, &w, &b, dilation).unwrap();
        let oracle = naive_conv(&to_rows(&x), &weight_rows(&w), b.data(), dilation);
        prop_assert_eq!(y.shape(), &[cout, t]);
        for (got, want) in y.data().iter().zip(oracle.iter().flatten()) {
            prop_assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn dense_matches_brute_force_dot_products(seed in any::<u64>(), cin in 1usize..8, cout in 1usize..8, t in 1usize..6) {
        let mut r = rng(seed);
        let w = uniform(&mut r, &[cout, cin], -1.0, 1.0);
        let b = uniform(&mut r, &[cout], -1.0, 1.0);
        let x = uniform(&mut r, &[cin, t], -1.0, 1.0);
        let y = dense(&x, &w, &b).unwrap();
        for o in 0..cout {
            for tt in 0..t {
                let want: f64 = b.data()[o] + (0..cin).map(|i| w.at(&[o, i]) * x.at(&[i, tt])).sum::<f64>();
                prop_assert!((y.at(&[o, tt]) - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn softmax_ignores_row_offsets(seed in any::<u64>(), c in 1usize..5, t in 1usize..12, shift in -50.0f64..50.0) {
        let mut r = rng(seed);
        let x = uniform(&mut r, &[c, t], -5.0, 5.0);
        let row = seed as usize % c;
        let mut shifted = x.clone();
        for v in &mut shifted.data_mut()[row * t..(row + 1) * t] {
            *v += shift;
        }
        let (a, b) = (softmax_over_time(&x), softmax_over_time(&shifted));
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() <= 1e-9);
        }
        for row in a.data().chunks(t) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn batchnorm_train_output_is_standardized(seed in any::<u64>(), b in 1usize..4, c in 1usize..5, t in 2usize..16) {
        let mut r = rng(seed);
        let x = uniform(&mut r, &[b, c, t], -3.0, 7.0);
        let y = batchnorm1d(&x, &Tensor::ones(vec![c]), &Tensor::zeros(vec![c]), BnMode::Train).unwrap();
        for ch in 0..c {
            let vals: Vec<f64> = (0..b).flat_map(|bi| (0..t).map(move |tt| (bi, tt))).map(|(bi, tt)| y.at(&[bi, ch, tt])).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-5);
            // ε = 1e-5 pulls the variance slightly below one for low-variance channels.
            let xs: Vec<f64> = (0..b).flat_map(|bi| (0..t).map(move |tt| (bi, tt))).map(|(bi, tt)| x.at(&[bi, ch, tt])).collect();
            let xm = xs.iter().sum::<f64>() / n;
            let xv = xs.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / n;
            if xv > 0.1 {
                prop_assert!((var - 1.0).abs() < 1e-4, "var {var}");
            }
        }
    }

    #[test]
    fn forward_ops_keep_finite_inputs_finite(seed in any::<u64>(), c in 1usize..4, t in 1usize..10) {
        let mut r = rng(seed);
        let x = uniform(&mut r, &[c, t], -800.0, 800.0);
        prop_assert!(relu(&x).all_finite());
        prop_assert!(sigmoid(&x).all_finite());
        prop_assert!(softmax_over_time(&x).all_finite());
        let bn = batchnorm1d(&x, &Tensor::ones(vec![c]), &Tensor::zeros(vec![c]), BnMode::Train).unwrap();
        prop_assert!(bn.all_finite());
    }
}

#[test]
fn constant_batch_norm_input_returns_beta() {
    let x = Tensor::full(vec![2, 3, 4], 7.5);
    let beta = Tensor::vector(vec![0.5, -1.0, 2.0]);
    let y = batchnorm1d(&x, &Tensor::ones(vec![3]), &beta, BnMode::Train).unwrap();
    for b in 0..2 {
        for c in 0..3 {
            for t in 0..4 {
                assert_eq!(y.at(&[b, c, t]), beta.data()[c]);
            }
        }
    }
}
