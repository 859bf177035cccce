//! Slice-level numeric kernels shared by the functional ops and the autodiff graph.
//!
//! Layouts are fixed: activations are `[B, C, T]` row-major, convolution weights
//! `[Cout, Cin, K]`, dense weights `[Cout, Cin]`.

/// Strided read-only matrix view into a slice.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], offset: usize, rs: usize, cs: usize) -> Self {
        Self { data, offset, rs, cs }
    }

    fn last_index(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `C[m, n] += A[m, k] · B[k, n]` on strided views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: View<'_>,
    b: View<'_>,
    c: &mut [f64],
    c_off: usize,
    rsc: usize,
    csc: usize,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(a.last_index(m, k) < a.data.len(), "gemm: A out of bounds");
    assert!(b.last_index(k, n) < b.data.len(), "gemm: B out of bounds");
    assert!(c_off + (m - 1) * rsc + (n - 1) * csc < c.len(), "gemm: C out of bounds");
    // SAFETY: every element touched by dgemm lies within the bounds asserted above,
    // and `c` is exclusively borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            1.0,
            c.as_mut_ptr().add(c_off),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub time: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvDims {
    /// Output columns `lo..hi` that read input columns `lo + off..hi + off` for tap `j`.
    fn tap(&self, j: usize) -> Option<(usize, usize, isize)> {
        let off = (j as isize - (self.kernel / 2) as isize) * self.dilation as isize;
        let t = self.time as isize;
        let lo = 0.max(-off);
        let hi = t.min(t - off);
        (lo < hi).then_some((lo as usize, hi as usize, off))
    }
}

/// Same-padded dilated cross-correlation. `out` must be zero or hold a value to accumulate onto.
pub(crate) fn conv1d_forward(
    d: ConvDims,
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    out: &mut [f64],
) {
    let (cin, cout, t, k) = (d.cin, d.cout, d.time, d.kernel);
    for b in 0..d.batch {
        let ob = b * cout * t;
        if let Some(bias) = bias {
            for (c, &bv) in bias.iter().enumerate() {
                out[ob + c * t..ob + (c + 1) * t].iter_mut().for_each(|v| *v += bv);
            }
        }
        for j in 0..k {
            let Some((lo, hi, off)) = d.tap(j) else { continue };
            let xin = (b * cin * t) as isize + lo as isize + off;
            gemm_acc(
                cout,
                cin,
                hi - lo,
                View::new(w, j, cin * k, k),
                View::new(x, xin as usize, t, 1),
                out,
                ob + lo,
                t,
                1,
            );
        }
    }
}

/// Accumulates input, weight and bias gradients of [`conv1d_forward`].
pub(crate) fn conv1d_backward(
    d: ConvDims,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
) {
    let (cin, cout, t, k) = (d.cin, d.cout, d.time, d.kernel);
    if let Some(dbias) = dbias {
        for b in 0..d.batch {
            for (c, g) in dbias.iter_mut().enumerate() {
                let row = &dy[(b * cout + c) * t..(b * cout + c + 1) * t];
                *g += row.iter().sum::<f64>();
            }
        }
    }
    if let Some(dw) = dw {
        for b in 0..d.batch {
            for j in 0..k {
                let Some((lo, hi, off)) = d.tap(j) else { continue };
                let xin = (b * cin * t) as isize + lo as isize + off;
                // dW_j[cout, cin] += dY[:, lo..hi] · X[:, lo+off..hi+off]^T
                gemm_acc(
                    cout,
                    hi - lo,
                    cin,
                    View::new(dy, b * cout * t + lo, t, 1),
                    View::new(x, xin as usize, 1, t),
                    dw,
                    j,
                    cin * k,
                    k,
                );
            }
        }
    }
    if let Some(dx) = dx {
        for b in 0..d.batch {
            for j in 0..k {
                let Some((lo, hi, off)) = d.tap(j) else { continue };
                let xin = (b * cin * t) as isize + lo as isize + off;
                // dX[:, lo+off..hi+off] += W_j^T · dY[:, lo..hi]
                gemm_acc(
                    cin,
                    cout,
                    hi - lo,
                    View::new(w, j, k, cin * k),
                    View::new(dy, b * cout * t + lo, t, 1),
                    dx,
                    xin as usize,
                    t,
                    1,
                );
            }
        }
    }
}

/// `y[B, O] = x[B, F] · W[O, F]^T (+ bias)`.
pub(crate) fn linear_forward(
    batch: usize,
    fin: usize,
    fout: usize,
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let mut y = vec![0.0; batch * fout];
    if let Some(bias) = bias {
        for row in y.chunks_mut(fout) {
            row.copy_from_slice(bias);
        }
    }
    gemm_acc(
        batch,
        fin,
        fout,
        View::new(x, 0, fin, 1),
        View::new(w, 0, 1, fin),
        &mut y,
        0,
        fout,
        1,
    );
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn linear_backward(
    batch: usize,
    fin: usize,
    fout: usize,
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    dbias: Option<&mut [f64]>,
) {
    if let Some(dx) = dx {
        gemm_acc(
            batch,
            fout,
            fin,
            View::new(dy, 0, fout, 1),
            View::new(w, 0, fin, 1),
            dx,
            0,
            fin,
            1,
        );
    }
    if let Some(dw) = dw {
        gemm_acc(
            fout,
            batch,
            fin,
            View::new(dy, 0, 1, fout),
            View::new(x, 0, fin, 1),
            dw,
            0,
            fin,
            1,
        );
    }
    if let Some(db) = dbias {
        for row in dy.chunks(fout) {
            db.iter_mut().zip(row).for_each(|(g, v)| *g += v);
        }
    }
}

/// Per-channel population mean and variance over batch and time of a `[B, C, T]` buffer.
pub(crate) fn channel_moments(x: &[f64], b: usize, c: usize, t: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (b * t) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let rows = (0..b).map(|bi| &x[(bi * c + ch) * t..(bi * c + ch + 1) * t]);
        let m = rows.clone().flatten().sum::<f64>() / n;
        let v = rows.flatten().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
        mean[ch] = m;
        var[ch] = v;
    }
    (mean, var)
}

/// Numerically stable softmax of each contiguous row of length `t`, in place.
pub(crate) fn softmax_rows(x: &mut [f64], t: usize) {
    for row in x.chunks_mut(t) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
