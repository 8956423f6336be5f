mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{dot, max_rel_error, naive_conv, numeric_grad};
use tgocr::layers::{Dense, Dropout, Flatten, ForwardCtx, Layer};
use tgocr::ops::{
    conv2d_valid, conv2d_valid_backward, maxpool2x2, maxpool2x2_backward, relu, relu_backward, softmax_rows,
};
use tgocr::optim::{adadelta_step, softmax_cross_entropy, AdadeltaConfig};
use tgocr::{seed, Tensor};

fn random(seed: u64, dims: &[usize]) -> Tensor<f64> {
    let mut rng = seed::rng(seed);
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn one_hot_rows(seed: u64, rows: usize, classes: usize) -> Tensor<f64> {
    let mut rng = seed::rng(seed);
    let mut t = Tensor::zeros(&[rows, classes]).unwrap();
    for row in t.data_mut().chunks_exact_mut(classes) {
        row[rng.gen_range(0..classes)] = 1.0;
    }
    t
}

/// `(c_in, h, w, c_out, kh, kw)` with inputs up to 3×8×8.
fn conv_geometry() -> impl Strategy<Value = (usize, usize, usize, usize, usize, usize)> {
    (1usize..=3, 1usize..=8, 1usize..=8, 1usize..=3).prop_flat_map(|(c, h, w, o)| {
        (Just(c), Just(h), Just(w), Just(o), 1..=h, 1..=w)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn conv_matches_naive_oracle((c, h, w, o, kh, kw) in conv_geometry(), s in any::<u64>()) {
        let x = random(s, &[c, h, w]);
        let k = random(s ^ 1, &[o, c, kh, kw]);
        let b = random(s ^ 2, &[o]);
        let fast = conv2d_valid(&x, &k, &b).unwrap();
        let slow = naive_conv(&x, &k, &b);
        prop_assert_eq!(fast.dims(), slow.dims());
        prop_assert!(max_rel_error(fast.data(), slow.data(), 1e-9) < 1e-6);
    }

    #[test]
    fn conv_f32_matches_f64_oracle((c, h, w, o, kh, kw) in conv_geometry(), s in any::<u64>()) {
        // Round inputs to f32 first so only accumulation error remains, then
        // apply the forward error bound (terms + 1) * eps * sum|x * k| + |b|.
        let x = random(s, &[c, h, w]).cast::<f32>().cast::<f64>();
        let k = random(s ^ 1, &[o, c, kh, kw]).cast::<f32>().cast::<f64>();
        let b = random(s ^ 2, &[o]).cast::<f32>().cast::<f64>();
        let fast = conv2d_valid(&x.cast::<f32>(), &k.cast::<f32>(), &b.cast::<f32>()).unwrap();
        let slow = naive_conv(&x, &k, &b);
        let magnitude = naive_conv(&x.map(f64::abs), &k.map(f64::abs), &b.map(f64::abs));
        let eps = f64::from(f32::EPSILON) * (c * kh * kw + 1) as f64;
        for ((&f, &e), &m) in fast.data().iter().zip(slow.data()).zip(magnitude.data()) {
            prop_assert!((f64::from(f) - e).abs() <= eps * m, "{f} vs {e}, bound {}", eps * m);
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences((c, h, w, o, kh, kw) in conv_geometry(), s in any::<u64>()) {
        let x = random(s, &[c, h, w]);
        let k = random(s ^ 1, &[o, c, kh, kw]);
        let b = random(s ^ 2, &[o]);
        let r = random(s ^ 3, &[o, h - kh + 1, w - kw + 1]);
        let grads = conv2d_valid_backward(&x, &k, &r).unwrap();
        let nx = numeric_grad(&x, 1e-3, |x| dot(&naive_conv(x, &k, &b), &r));
        let nk = numeric_grad(&k, 1e-3, |k| dot(&naive_conv(&x, k, &b), &r));
        let nb = numeric_grad(&b, 1e-3, |b| dot(&naive_conv(&x, &k, b), &r));
        prop_assert!(max_rel_error(grads.input.data(), &nx, 1e-6) < 1e-6);
        prop_assert!(max_rel_error(grads.kernels.data(), &nk, 1e-6) < 1e-6);
        prop_assert!(max_rel_error(grads.bias.data(), &nb, 1e-6) < 1e-6);
    }

    #[test]
    fn dense_backward_matches_finite_differences(n in 1usize..4, i in 1usize..9, o in 1usize..7, s in any::<u64>()) {
        let mut layer = Layer::Dense(Dense::new(i, o, &mut seed::rng(s)).unwrap());
        let x = random(s ^ 1, &[n, i]);
        let r = random(s ^ 2, &[n, o]);
        layer.forward(&x, &ForwardCtx::train(0)).unwrap();
        let gx = layer.backward(&r).unwrap();
        let nx = numeric_grad(&x, 1e-3, |x| dot(&layer.infer(x).unwrap(), &r));
        prop_assert!(max_rel_error(gx.data(), &nx, 1e-6) < 1e-6);
        let gw = layer.params().unwrap().weights.grad.clone();
        let w = layer.params().unwrap().weights.value.clone();
        let nw = numeric_grad(&w, 1e-3, |w| {
            let mut l = layer.clone();
            l.params_mut().unwrap().weights.value = w.clone();
            dot(&l.infer(&x).unwrap(), &r)
        });
        prop_assert!(max_rel_error(gw.data(), &nw, 1e-6) < 1e-6);
    }

    #[test]
    fn pool_routes_each_gradient_to_one_window_winner(
        n in 1usize..3, c in 1usize..4, hh in 1usize..5, hw in 1usize..5, s in any::<u64>()
    ) {
        let x = random(s, &[n, c, 2 * hh, 2 * hw]);
        let (y, map) = maxpool2x2(&x).unwrap();
        let g = random(s ^ 1, y.dims());
        let gx = maxpool2x2_backward(&map, &g).unwrap();
        // Mass conservation.
        prop_assert!((gx.sum() - g.sum()).abs() < 1e-12);
        // Each window holds exactly its output gradient at its maximum.
        let (h, w) = (2 * hh, 2 * hw);
        for plane in 0..n * c {
            for oy in 0..hh {
                for ox in 0..hw {
                    let idx = |dy: usize, dx: usize| (plane * h + 2 * oy + dy) * w + 2 * ox + dx;
                    let cells = [idx(0, 0), idx(0, 1), idx(1, 0), idx(1, 1)];
                    let out = (plane * hh + oy) * hw + ox;
                    let max = cells.iter().map(|&i| x.data()[i]).fold(f64::NEG_INFINITY, f64::max);
                    prop_assert_eq!(y.data()[out], max);
                    let nonzero: Vec<usize> = cells.iter().copied().filter(|&i| gx.data()[i] != 0.0).collect();
                    prop_assert!(nonzero.len() <= 1);
                    if let [i] = nonzero[..] {
                        prop_assert_eq!(x.data()[i], max);
                        prop_assert_eq!(gx.data()[i], g.data()[out]);
                    }
                }
            }
        }
    }

    #[test]
    fn relu_is_idempotent_and_gates_gradients(len in 1usize..64, s in any::<u64>()) {
        let x = random(s, &[len]);
        let y = relu(&x);
        prop_assert_eq!(relu(&y), y.clone());
        let g = random(s ^ 1, &[len]);
        let gx = relu_backward(&x, &g).unwrap();
        for i in 0..len {
            let expected = if x.data()[i] > 0.0 { g.data()[i] } else { 0.0 };
            prop_assert_eq!(gx.data()[i], expected);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..12, scale in 0.1f64..50.0, shift in -100.0f64..100.0, s in any::<u64>()) {
        let x = random(s, &[rows, cols]).map(|v| v * scale);
        let p = softmax_rows(&x).unwrap();
        for row in p.data().chunks_exact(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let shifted = softmax_rows(&x.map(|v| v + shift)).unwrap();
        prop_assert!(max_rel_error(p.data(), shifted.data(), 1e-12) < 1e-9);
    }

    #[test]
    fn loss_gradient_rows_sum_to_zero(rows in 1usize..8, cols in 2usize..12, s in any::<u64>()) {
        let z = random(s, &[rows, cols]).map(|v| 5.0 * v);
        let t = one_hot_rows(s ^ 1, rows, cols);
        let l = softmax_cross_entropy(&z, &t).unwrap();
        prop_assert!(l.mean_loss > 0.0);
        for row in l.grad_logits.data().chunks_exact(cols) {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
        let n = numeric_grad(&z, 1e-3, |z| softmax_cross_entropy(z, &t).unwrap().mean_loss);
        prop_assert!(max_rel_error(l.grad_logits.data(), &n, 1e-3) < 1e-4);
    }

    #[test]
    fn uniform_logits_cost_ln_classes(rows in 1usize..8, cols in 2usize..12, level in -20.0f64..20.0, s in any::<u64>()) {
        let z = Tensor::full(&[rows, cols], level).unwrap();
        let t = one_hot_rows(s, rows, cols);
        let l = softmax_cross_entropy(&z, &t).unwrap();
        prop_assert!((l.mean_loss - (cols as f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn dropout_keeps_or_rescales(len in 1usize..200, rate in 0.0f64..0.9, s in any::<u64>()) {
        let x = random(s, &[1, len]);
        let mut layer = Layer::Dropout(Dropout::new(rate).unwrap());
        prop_assert_eq!(layer.forward(&x, &ForwardCtx::eval()).unwrap(), x.clone());
        let y = layer.forward(&x, &ForwardCtx::train(s)).unwrap();
        let g = random(s ^ 1, &[1, len]);
        let gx = layer.backward(&g).unwrap();
        let Layer::Dropout(d) = &layer else { unreachable!() };
        let mask = d.mask().unwrap();
        let scale = 1.0 / (1.0 - rate);
        for i in 0..len {
            let m = mask.data()[i];
            prop_assert!(m == 0.0 || m == scale);
            prop_assert_eq!(y.data()[i], x.data()[i] * m);
            prop_assert_eq!(gx.data()[i], g.data()[i] * m);
        }
    }

    #[test]
    fn flatten_backward_inverts_forward(n in 1usize..4, c in 1usize..4, h in 1usize..6, w in 1usize..6, s in any::<u64>()) {
        let x = random(s, &[n, c, h, w]);
        let mut layer = Layer::Flatten(Flatten::new());
        let y = layer.forward(&x, &ForwardCtx::train(0)).unwrap();
        prop_assert_eq!(y.dims(), &[n, c * h * w][..]);
        prop_assert_eq!(layer.backward(&y).unwrap(), x);
    }

    #[test]
    fn adadelta_accumulators_stay_nonnegative(steps in 1usize..30, s in any::<u64>()) {
        let mut layer = Layer::Dense(Dense::new(3, 2, &mut seed::rng(s)).unwrap());
        let config = AdadeltaConfig::default();
        for k in 0..steps {
            let x = random(s ^ k as u64, &[2, 3]).map(|v| 10.0 * v);
            let r = random(!s ^ k as u64, &[2, 2]);
            layer.forward(&x, &ForwardCtx::train(0)).unwrap();
            layer.backward(&r).unwrap();
            let ps = layer.params_mut().unwrap();
            adadelta_step(ps, &config).unwrap();
            for p in ps.params() {
                prop_assert!(p.acc_grad.data().iter().all(|&v| v >= 0.0));
                prop_assert!(p.acc_delta.data().iter().all(|&v| v >= 0.0));
                prop_assert!(p.value.is_finite());
            }
        }
    }
}
