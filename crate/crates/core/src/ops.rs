//! Numerical kernels: matrix product, valid convolution, 2×2 max pooling,
//! ReLU and row softmax, with their hand-written backward passes.
//!
//! Convolution is cross-correlation (no kernel flip), stride 1, no padding.
//! Pooling uses disjoint 2×2 windows with stride 2. Both are fixed by the
//! layer geometry the networks use (32→28→14→12→6).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{MatRef, Scalar, Tensor};

/// `a (m×k) · b (k×n)`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[m, k], &[k2, n]) = (a.dims(), b.dims()) else {
        return Err(Error::Shape(format!(
            "matmul needs rank-2 operands, got {} and {}",
            a.shape(),
            b.shape()
        )));
    };
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[m, n])?;
    T::gemm(
        m,
        k,
        n,
        T::one(),
        MatRef::row_major(a.data(), k),
        MatRef::row_major(b.data(), n),
        T::zero(),
        out.data_mut(),
    );
    Ok(out)
}

/// Geometry of one valid convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
}

impl ConvGeometry {
    pub fn new(input: &[usize], kernels: &[usize]) -> Result<Self> {
        let (&[c_in, h, w], &[c_out, kc, kh, kw]) = (input, kernels) else {
            return Err(Error::Shape(format!(
                "conv needs C×H×W input and O×C×kH×kW kernels, got {input:?} and {kernels:?}"
            )));
        };
        if kc != c_in {
            return Err(Error::Shape(format!(
                "kernel expects {kc} input channels, input has {c_in}"
            )));
        }
        if kh > h || kw > w {
            return Err(Error::Shape(format!(
                "kernel {kh}×{kw} larger than input {h}×{w}"
            )));
        }
        Ok(ConvGeometry {
            in_channels: c_in,
            height: h,
            width: w,
            out_channels: c_out,
            kernel_h: kh,
            kernel_w: kw,
        })
    }

    pub fn out_h(&self) -> usize {
        self.height - self.kernel_h + 1
    }

    pub fn out_w(&self) -> usize {
        self.width - self.kernel_w + 1
    }

    pub fn out_positions(&self) -> usize {
        self.out_h() * self.out_w()
    }

    /// Rows of the patch matrix: one per (channel, ky, kx).
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.out_positions()
    }

    pub fn output_dims(&self) -> [usize; 3] {
        [self.out_channels, self.out_h(), self.out_w()]
    }
}

/// Unrolls every receptive field of `input` into a column of `cols`
/// (`patch_len × out_positions`, row-major).
fn im2col<T: Scalar>(g: &ConvGeometry, input: &[T], cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let positions = oh * ow;
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let src = &plane[(oy + ky) * g.width + kx..][..ow];
                    dst[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
fn col2im<T: Scalar>(g: &ConvGeometry, cols: &[T], grad_input: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let positions = oh * ow;
    grad_input.iter_mut().for_each(|v| *v = T::zero());
    let mut row = 0;
    for c in 0..g.in_channels {
        let plane = &mut grad_input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel_h {
            for kx in 0..g.kernel_w {
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..oh {
                    let dst = &mut plane[(oy + ky) * g.width + kx..][..ow];
                    for (d, &s) in dst.iter_mut().zip(&src[oy * ow..(oy + 1) * ow]) {
                        *d = *d + s;
                    }
                }
                row += 1;
            }
        }
    }
}

fn conv_forward_one<T: Scalar>(
    g: &ConvGeometry,
    kernels: &[T],
    bias: &[T],
    cols: &[T],
    out: &mut [T],
) {
    let positions = g.out_positions();
    for (plane, &b) in out.chunks_exact_mut(positions).zip(bias) {
        plane.iter_mut().for_each(|v| *v = b);
    }
    T::gemm(
        g.out_channels,
        g.patch_len(),
        positions,
        T::one(),
        MatRef::row_major(kernels, g.patch_len()),
        MatRef::row_major(cols, positions),
        T::one(),
        out,
    );
}

/// Forward pass over a batch laid out `N × C × H × W`.
///
/// Returns the output and the per-sample patch matrices, which the backward
/// pass reuses.
pub(crate) fn conv2d_forward_batch<T: Scalar>(
    g: &ConvGeometry,
    batch: usize,
    input: &[T],
    kernels: &[T],
    bias: &[T],
) -> (Vec<T>, Vec<T>) {
    let patch = g.patch_len() * g.out_positions();
    let mut cols = vec![T::zero(); batch * patch];
    let mut out = vec![T::zero(); batch * g.output_len()];
    out.par_chunks_mut(g.output_len())
        .zip(cols.par_chunks_mut(patch))
        .zip(input.par_chunks(g.input_len()))
        .for_each(|((o, c), x)| {
            im2col(g, x, c);
            conv_forward_one(g, kernels, bias, c, o);
        });
    (out, cols)
}

/// Backward pass over a batch, given the patch matrices cached by
/// [`conv2d_forward_batch`]. Parameter gradients are summed over the batch
/// in sample order so the result does not depend on the thread count.
pub(crate) fn conv2d_backward_batch<T: Scalar>(
    g: &ConvGeometry,
    batch: usize,
    cols: &[T],
    kernels: &[T],
    grad_output: &[T],
    grad_kernels: &mut [T],
    grad_bias: &mut [T],
) -> Vec<T> {
    let positions = g.out_positions();
    let patch = g.patch_len();
    grad_kernels.iter_mut().for_each(|v| *v = T::zero());
    grad_bias.iter_mut().for_each(|v| *v = T::zero());

    for (go, c) in grad_output
        .chunks_exact(g.output_len())
        .zip(cols.chunks_exact(patch * positions))
    {
        T::gemm(
            g.out_channels,
            positions,
            patch,
            T::one(),
            MatRef::row_major(go, positions),
            MatRef::transposed(c, positions),
            T::one(),
            grad_kernels,
        );
        for (gb, plane) in grad_bias.iter_mut().zip(go.chunks_exact(positions)) {
            *gb = *gb + plane.iter().copied().sum::<T>();
        }
    }

    let mut grad_input = vec![T::zero(); batch * g.input_len()];
    grad_input
        .par_chunks_mut(g.input_len())
        .zip(grad_output.par_chunks(g.output_len()))
        .for_each_init(
            || vec![T::zero(); patch * positions],
            |gcols, (gi, go)| {
                T::gemm(
                    patch,
                    g.out_channels,
                    positions,
                    T::one(),
                    MatRef::transposed(kernels, patch),
                    MatRef::row_major(go, positions),
                    T::zero(),
                    gcols,
                );
                col2im(g, gcols, gi);
            },
        );
    grad_input
}

/// Valid cross-correlation of a `C_in × H × W` input with
/// `C_out × C_in × kH × kW` kernels plus a per-channel bias.
pub fn conv2d_valid<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input.dims(), kernels.dims())?;
    if bias.dims() != [g.out_channels] {
        return Err(Error::Shape(format!(
            "bias shape {} does not match {} output channels",
            bias.shape(),
            g.out_channels
        )));
    }
    let (out, _) = conv2d_forward_batch(&g, 1, input.data(), kernels.data(), bias.data());
    Tensor::from_vec(&g.output_dims(), out)
}

#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Exact gradients of [`conv2d_valid`] with respect to input, kernels and bias.
pub fn conv2d_valid_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_output: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = ConvGeometry::new(input.dims(), kernels.dims())?;
    if grad_output.dims() != g.output_dims() {
        return Err(Error::Shape(format!(
            "grad_output shape {} does not match forward output {:?}",
            grad_output.shape(),
            g.output_dims()
        )));
    }
    let mut cols = vec![T::zero(); g.patch_len() * g.out_positions()];
    im2col(&g, input.data(), &mut cols);
    let mut gk = vec![T::zero(); kernels.numel()];
    let mut gb = vec![T::zero(); g.out_channels];
    let gi = conv2d_backward_batch(&g, 1, &cols, kernels.data(), grad_output.data(), &mut gk, &mut gb);
    Ok(ConvGrads {
        input: Tensor::from_vec(input.dims(), gi)?,
        kernels: Tensor::from_vec(kernels.dims(), gk)?,
        bias: Tensor::from_vec(&[g.out_channels], gb)?,
    })
}

/// Winning input position of every 2×2 pooling window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArgmaxMap {
    input_dims: Vec<usize>,
    /// Flat input index per output element.
    winners: Vec<usize>,
}

impl ArgmaxMap {
    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn output_dims(&self) -> Vec<usize> {
        let mut d = self.input_dims.clone();
        let r = d.len();
        d[r - 2] /= 2;
        d[r - 1] /= 2;
        d
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

/// 2×2 max pooling, stride 2, over the last two axes of a tensor of rank ≥ 3
/// (`C×H×W` or `N×C×H×W`). Ties resolve to the first maximum in row-major
/// window order.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, ArgmaxMap)> {
    let dims = input.dims();
    if dims.len() < 3 {
        return Err(Error::Shape(format!(
            "max pooling needs at least C×H×W, got {}",
            input.shape()
        )));
    }
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "2×2 pooling needs even height and width, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let planes = input.numel() / (h * w);
    let x = input.data();
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut winners = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for idx in [top + 1, top + w, top + w + 1] {
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                winners.push(best);
            }
        }
    }
    let map = ArgmaxMap {
        input_dims: dims.to_vec(),
        winners,
    };
    Ok((Tensor::from_vec(&map.output_dims(), out)?, map))
}

/// Routes each output gradient to the input position that won its window.
pub fn maxpool2x2_backward<T: Scalar>(map: &ArgmaxMap, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_output.dims() != map.output_dims().as_slice() {
        return Err(Error::Shape(format!(
            "grad_output shape {} does not match pooled shape {:?}",
            grad_output.shape(),
            map.output_dims()
        )));
    }
    let mut grad = Tensor::zeros(&map.input_dims)?;
    let gi = grad.data_mut();
    for (&idx, &g) in map.winners.iter().zip(grad_output.data()) {
        gi[idx] = gi[idx] + g;
    }
    Ok(grad)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of ReLU; the derivative at exactly zero is taken as 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    if input.dims() != grad_output.dims() {
        return Err(Error::Shape(format!(
            "relu input {} and grad {} differ",
            input.shape(),
            grad_output.shape()
        )));
    }
    let data = input
        .data()
        .iter()
        .zip(grad_output.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.dims(), data)
}

fn rows<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize)> {
    match *t.dims() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Shape(format!(
            "{what} needs a rank-2 batch×classes tensor, got {}",
            t.shape()
        ))),
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, cols) = rows(input, "softmax")?;
    let mut out = input.clone();
    for row in out.data_mut().chunks_exact_mut(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of [`softmax_rows`] given its output `probs`.
pub fn softmax_rows_backward<T: Scalar>(probs: &Tensor<T>, grad_output: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, cols) = rows(probs, "softmax backward")?;
    if probs.dims() != grad_output.dims() {
        return Err(Error::Shape(format!(
            "softmax output {} and grad {} differ",
            probs.shape(),
            grad_output.shape()
        )));
    }
    let mut out = grad_output.clone();
    for (g, p) in out
        .data_mut()
        .chunks_exact_mut(cols)
        .zip(probs.data().chunks_exact(cols))
    {
        let dot: T = g.iter().zip(p).map(|(&a, &b)| a * b).sum();
        for (gi, &pi) in g.iter_mut().zip(p) {
            *gi = pi * (*gi - dot);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(dims, data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let id = t(&[2, 2], &[1., 0., 0., 1.]);
        assert_eq!(matmul(&a, &id).unwrap(), a);
    }

    #[test]
    fn matmul_dot_product() {
        let a = t(&[1, 2], &[1., 2.]);
        let b = t(&[2, 1], &[3., 4.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = t(&[2, 3], &[0.; 6]);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn conv_sliding_sum() {
        let x = t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = t(&[1, 1, 2, 2], &[1.; 4]);
        let b = t(&[1], &[0.]);
        let y = conv2d_valid(&x, &k, &b).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2]);
        assert_eq!(y.data(), &[12., 16., 24., 28.]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[1, 3, 3], &[1., -2., 3., 4., 5., -6., 7., 8., 9.]);
        let k = t(&[1, 1, 1, 1], &[1.]);
        let y = conv2d_valid(&x, &k, &t(&[1], &[0.])).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_first_layer_shape() {
        let x = Tensor::<f32>::zeros(&[1, 32, 32]).unwrap();
        let k = Tensor::<f32>::zeros(&[30, 1, 5, 5]).unwrap();
        let b = Tensor::<f32>::zeros(&[30]).unwrap();
        assert_eq!(conv2d_valid(&x, &k, &b).unwrap().dims(), &[30, 28, 28]);
    }

    #[test]
    fn conv_kernel_too_large() {
        let x = t(&[1, 2, 2], &[0.; 4]);
        let k = t(&[1, 1, 3, 3], &[0.; 9]);
        assert!(matches!(
            conv2d_valid(&x, &k, &t(&[1], &[0.])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv_backward_zero_grad() {
        let x = t(&[1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = t(&[2, 1, 2, 2], &[0.5; 8]);
        let g = conv2d_valid_backward(&x, &k, &Tensor::zeros(&[2, 2, 2]).unwrap()).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernels.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_backward_scalar_chain_rule() {
        let (x, w, g) = (1.5, -0.75, 2.0);
        let grads = conv2d_valid_backward(
            &t(&[1, 1, 1], &[x]),
            &t(&[1, 1, 1, 1], &[w]),
            &t(&[1, 1, 1], &[g]),
        )
        .unwrap();
        assert_eq!(grads.input.data(), &[w * g]);
        assert_eq!(grads.kernels.data(), &[x * g]);
        assert_eq!(grads.bias.data(), &[g]);
    }

    #[test]
    fn conv_backward_shape_mismatch() {
        let x = t(&[1, 3, 3], &[0.; 9]);
        let k = t(&[1, 1, 2, 2], &[0.; 4]);
        assert!(conv2d_valid_backward(&x, &k, &t(&[1, 3, 3], &[0.; 9])).is_err());
    }

    #[test]
    fn pool_max_of_window() {
        let (y, map) = maxpool2x2(&t(&[1, 2, 2], &[1., 2., 3., 4.])).unwrap();
        assert_eq!(y.data(), &[4.]);
        assert_eq!(map.winners(), &[3]);
    }

    #[test]
    fn pool_tie_takes_first() {
        let (y, map) = maxpool2x2(&t(&[1, 2, 4], &[7.; 8])).unwrap();
        assert_eq!(y.data(), &[7., 7.]);
        assert_eq!(map.winners(), &[0, 2]);
    }

    #[test]
    fn pool_shapes() {
        let x = Tensor::<f32>::zeros(&[30, 28, 28]).unwrap();
        assert_eq!(maxpool2x2(&x).unwrap().0.dims(), &[30, 14, 14]);
        assert!(maxpool2x2(&Tensor::<f32>::zeros(&[1, 3, 4]).unwrap()).is_err());
    }

    #[test]
    fn pool_backward_routes_to_max() {
        let (_, map) = maxpool2x2(&t(&[1, 2, 2], &[1., 2., 3., 4.])).unwrap();
        let g = maxpool2x2_backward(&map, &t(&[1, 1, 1], &[5.])).unwrap();
        assert_eq!(g.data(), &[0., 0., 0., 5.]);
        let z = maxpool2x2_backward(&map, &t(&[1, 1, 1], &[0.])).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        assert!(maxpool2x2_backward(&map, &t(&[1, 2, 1], &[0., 0.])).is_err());
    }

    #[test]
    fn relu_cases() {
        let x = t(&[3], &[-1., 0., 2.]);
        assert_eq!(relu(&x).data(), &[0., 0., 2.]);
        let g = relu_backward(&x, &t(&[3], &[1., 1., 1.])).unwrap();
        assert_eq!(g.data(), &[0., 0., 1.]);
        let pos = t(&[2], &[0.5, 3.]);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn softmax_cases() {
        let p = softmax_rows(&t(&[1, 2], &[0., 0.])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        let p = softmax_rows(&t(&[1, 2], &[2f64.ln(), 0.])).unwrap();
        assert!((p.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.data()[1] - 1.0 / 3.0).abs() < 1e-15);
        let p = softmax_rows(&t(&[1, 2], &[1000., 0.])).unwrap();
        assert!(p.is_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-12);
        assert!(p.data()[1] >= 0.0 && p.data()[1] < 1e-300);
    }
}
