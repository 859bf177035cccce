//! Functional forward operators on [`Tensor`] values.
//!
//! These are the value-level counterparts of the differentiable nodes in
//! [`crate::graph`]; both route through the same kernels. Inputs shaped
//! `[C, T]` are treated as a batch of one.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims};
use crate::tensor::Tensor;

/// Variance floor added inside batch normalization.
pub const BN_EPS: f64 = 1e-5;
/// Weight of the current batch in the running-statistic update.
pub const BN_MOMENTUM: f64 = 0.1;

/// Batch-norm statistics source.
#[derive(Clone, Copy, Debug)]
pub enum BnMode<'a> {
    /// Normalize with the per-channel statistics of this batch.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

pub(crate) fn conv_dims(
    op: &'static str,
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    dilation: usize,
) -> Result<ConvDims> {
    let (batch, cin, time) = input.btc(op)?;
    let [cout, wcin, kernel] = *weight.shape() else {
        return Err(Error::shape(op, "weight [Cout, Cin, K]", weight.shape()));
    };
    if wcin != cin {
        return Err(Error::shape(op, format!("weight with Cin = {cin}"), weight.shape()));
    }
    if kernel % 2 == 0 {
        return Err(Error::EvenKernel { op, kernel });
    }
    if dilation == 0 {
        return Err(Error::InvalidArgument(format!("{op}: dilation must be positive")));
    }
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(Error::shape(op, format!("bias [{cout}]"), b.shape()));
        }
    }
    Ok(ConvDims {
        batch,
        cin,
        cout,
        time,
        kernel,
        dilation,
    })
}

fn with_channels(input: &Tensor, channels: usize) -> Vec<usize> {
    let mut shape = input.shape().to_vec();
    let rank = shape.len();
    shape[rank - 2] = channels;
    shape
}

/// Dilated 1-D cross-correlation with symmetric zero padding of `(k - 1) * dilation / 2`.
///
/// `y[c, t] = Σ_{i, j} w[c, i, j] · x[i, t + (j - k/2) · dilation] + bias[c]`
pub fn conv1d(input: &Tensor, weight: &Tensor, bias: &Tensor, dilation: usize) -> Result<Tensor> {
    let d = conv_dims("conv1d", input, weight, Some(bias), dilation)?;
    let mut out = vec![0.0; d.batch * d.cout * d.time];
    kernels::conv1d_forward(d, input.data(), weight.data(), Some(bias.data()), &mut out);
    Ok(Tensor::from_parts(with_channels(input, d.cout), out))
}

/// Affine map applied to a vector `[Cin]` or framewise to `[Cin, T]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [cout, cin] = *weight.shape() else {
        return Err(Error::shape("dense", "weight [Cout, Cin]", weight.shape()));
    };
    if bias.shape() != [cout] {
        return Err(Error::shape("dense", format!("bias [{cout}]"), bias.shape()));
    }
    match *input.shape() {
        [n] if n == cin => Ok(Tensor::vector(kernels::linear_forward(
            1,
            cin,
            cout,
            input.data(),
            weight.data(),
            Some(bias.data()),
        ))),
        [n, _] | [_, n, _] if n == cin => {
            let w3 = weight.clone().reshape(vec![cout, cin, 1])?;
            conv1d(input, &w3, bias, 1)
        }
        _ => Err(Error::shape("dense", format!("input with {cin} channels"), input.shape())),
    }
}

/// Batch normalization over batch and time per channel.
pub fn batchnorm1d(input: &Tensor, gamma: &Tensor, beta: &Tensor, mode: BnMode<'_>) -> Result<Tensor> {
    let (b, c, t) = input.btc("batchnorm1d")?;
    if t == 0 {
        return Err(Error::EmptyTime("batchnorm1d"));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape("batchnorm1d", format!("gamma/beta [{c}]"), gamma.shape()));
    }
    let (mean, var) = match mode {
        BnMode::Train => kernels::channel_moments(input.data(), b, c, t),
        BnMode::Eval { mean, var } => {
            if mean.len() != c || var.len() != c {
                return Err(Error::InvalidArgument("running statistics length".into()));
            }
            (mean.to_vec(), var.to_vec())
        }
    };
    let mut out = input.data().to_vec();
    for bi in 0..b {
        for ch in 0..c {
            let inv = 1.0 / (var[ch] + BN_EPS).sqrt();
            let (g, be, m) = (gamma.data()[ch], beta.data()[ch], mean[ch]);
            for v in &mut out[(bi * c + ch) * t..(bi * c + ch + 1) * t] {
                *v = (*v - m) * inv * g + be;
            }
        }
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), out))
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(kernels::sigmoid)
}

/// Softmax along the last (time) axis, independently per channel row.
pub fn softmax_over_time(x: &Tensor) -> Tensor {
    let t = *x.shape().last().unwrap_or(&1);
    let mut data = x.data().to_vec();
    kernels::softmax_rows(&mut data, t);
    Tensor::from_parts(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let x = t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let y = conv1d(&x, &t(&[1, 1, 1], &[1.0]), &t(&[1], &[0.0]), 1).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn difference_kernel_with_zero_padding() {
        // y[t] = x[t-1] - x[t+1], zero outside [0, 4)
        let x = t(&[1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let y = conv1d(&x, &t(&[1, 1, 3], &[1.0, 0.0, -1.0]), &t(&[1], &[0.0]), 1).unwrap();
        assert_eq!(y.data(), &[-2.0, -2.0, -2.0, 3.0]);
    }

    #[test]
    fn dilated_box_kernel() {
        // y[t] = x[t-2] + x[t] + x[t+2]
        let x = t(&[1, 5], &[1.0, 0.0, 0.0, 0.0, 1.0]);
        let y = conv1d(&x, &t(&[1, 1, 3], &[1.0, 1.0, 1.0]), &t(&[1], &[0.0]), 2).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0, 2.0, 0.0, 1.0]);
    }

    #[test]
    fn conv1d_rejects_bad_shapes() {
        let x = t(&[2, 4], &[0.0; 8]);
        let b = t(&[1], &[0.0]);
        assert!(matches!(
            conv1d(&x, &t(&[1, 3, 1], &[0.0; 3]), &b, 1),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(
            conv1d(&x, &t(&[1, 2, 2], &[0.0; 4]), &b, 1),
            Err(Error::EvenKernel { .. })
        ));
    }

    #[test]
    fn dense_cases() {
        let w = t(&[1, 2], &[1.0, 1.0]);
        let y = dense(&t(&[2], &[2.0, 3.0]), &w, &t(&[1], &[0.0])).unwrap();
        assert_eq!(y.data(), &[5.0]);

        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(dense(&x, &eye, &t(&[2], &[0.0, 0.0])).unwrap(), x);
        assert!(dense(&t(&[3], &[0.0; 3]), &w, &t(&[1], &[0.0])).is_err());
    }

    #[test]
    fn dense_matches_naive_dot_products() {
        let w: Vec<f64> = (0..12).map(|i| ((i * 7) % 5) as f64 - 2.0 + 0.25 * i as f64).collect();
        let x = [0.3, -1.2, 2.0, 0.7];
        let bias = [0.1, -0.2, 0.3];
        let y = dense(&t(&[4], &x), &t(&[3, 4], &w), &t(&[3], &bias)).unwrap();
        for o in 0..3 {
            let mut acc = bias[o];
            for i in 0..4 {
                acc += w[o * 4 + i] * x[i];
            }
            assert!((y.data()[o] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_cases() {
        let g = t(&[1], &[1.0]);
        let b = t(&[1], &[0.0]);
        let y = batchnorm1d(&t(&[1, 2], &[1.0, 3.0]), &g, &b, BnMode::Train).unwrap();
        let s = 1.0 / (1.0 + BN_EPS).sqrt();
        assert!((y.data()[0] + s).abs() < 1e-15 && (y.data()[1] - s).abs() < 1e-15);

        let beta = t(&[1], &[0.7]);
        let y = batchnorm1d(&t(&[1, 3], &[4.0; 3]), &g, &beta, BnMode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));

        let gamma = t(&[1], &[2.0]);
        let mode = BnMode::Eval { mean: &[0.0], var: &[1.0] };
        let y = batchnorm1d(&t(&[1, 2], &[1.0, -3.0]), &gamma, &beta, mode).unwrap();
        let s = 2.0 / (1.0 + BN_EPS).sqrt();
        assert!((y.data()[0] - (s + 0.7)).abs() < 1e-12);
        assert!((y.data()[1] - (-3.0 * s + 0.7)).abs() < 1e-12);
    }

    #[test]
    fn activation_fixtures() {
        let s = softmax_over_time(&t(&[1, 4], &[2.0; 4]));
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let s = softmax_over_time(&t(&[1, 2], &[0.0, 3f64.ln()]));
        assert!((s.data()[0] - 0.25).abs() < 1e-12 && (s.data()[1] - 0.75).abs() < 1e-12);
        assert_eq!(sigmoid(&Tensor::scalar(0.0)).item(), Some(0.5));
        assert_eq!(relu(&t(&[2], &[-1.0, 2.0])).data(), &[0.0, 2.0]);
        // stable at extremes
        let s = softmax_over_time(&t(&[1, 2], &[1000.0, 0.0]));
        assert!(s.all_finite());
    }
}
