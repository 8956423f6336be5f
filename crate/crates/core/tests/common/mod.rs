//! Reference implementations shared by the integration and acceptance tests.
#![allow(dead_code)]

use tgocr::Tensor;

/// Quadruple-loop valid cross-correlation of a `C_in × H × W` input.
pub fn naive_conv(input: &Tensor<f64>, kernels: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
    let [c_in, h, w] = input.dims().try_into().unwrap();
    let [c_out, kc, kh, kw] = kernels.dims().try_into().unwrap();
    assert_eq!(c_in, kc);
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0.0; c_out * oh * ow];
    for o in 0..c_out {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias.data()[o];
                for c in 0..c_in {
                    for i in 0..kh {
                        for j in 0..kw {
                            acc += input.at(&[c, y + i, x + j]) * kernels.at(&[o, c, i, j]);
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    Tensor::from_vec(&[c_out, oh, ow], out).unwrap()
}

/// Central differences of the scalar `f` at `x`.
pub fn numeric_grad(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut x = x.clone();
    (0..x.numel())
        .map(|i| {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let plus = f(&x);
            x.data_mut()[i] = orig - h;
            let minus = f(&x);
            x.data_mut()[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Largest elementwise `|a - b| / max(|a|, |b|, floor)`.
pub fn max_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
