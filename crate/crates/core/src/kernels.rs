//! Raw loops behind the graph ops. Everything here works on flat row-major
//! slices; shape checking happens in the graph layer.

/// `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is `m×k` and `op(b)`
/// is `k×n`. `ta`/`tb` select the transposed view of the stored matrix.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold m·k, k·n and m·n elements (asserted above) and
    // the strides describe row-major or transposed-row-major layouts of them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn conv1d_len(len: usize, kernel: usize, stride: usize) -> usize {
    (len - kernel) / stride + 1
}

/// Valid cross-correlation of one signal with one kernel.
pub(crate) fn conv1d(signal: &[f64], kernel: &[f64], stride: usize) -> Vec<f64> {
    let out = conv1d_len(signal.len(), kernel.len(), stride);
    (0..out)
        .map(|t| {
            let window = &signal[t * stride..t * stride + kernel.len()];
            window.iter().zip(kernel).map(|(x, w)| x * w).sum()
        })
        .collect()
}

/// Every row of `x` (`rows×len`) convolved with every kernel (`channels×k`),
/// plus per-kernel bias. Output is `rows×channels×(len−k+1)`.
pub(crate) fn space_conv(
    x: &[f64],
    rows: usize,
    len: usize,
    w: &[f64],
    channels: usize,
    k: usize,
    bias: &[f64],
) -> Vec<f64> {
    let out_len = len - k + 1;
    let mut y = vec![0.0; rows * channels * out_len];
    for s in 0..rows {
        let row = &x[s * len..(s + 1) * len];
        for c in 0..channels {
            let kern = &w[c * k..(c + 1) * k];
            let dst = &mut y[(s * channels + c) * out_len..(s * channels + c + 1) * out_len];
            dst.fill(bias[c]);
            for (j, &wj) in kern.iter().enumerate() {
                for (d, &xv) in dst.iter_mut().zip(&row[j..j + out_len]) {
                    *d += wj * xv;
                }
            }
        }
    }
    y
}

pub(crate) struct SpaceConvGrads {
    pub x: Option<Vec<f64>>,
    pub w: Vec<f64>,
    pub bias: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn space_conv_backward(
    g: &[f64],
    x: &[f64],
    rows: usize,
    len: usize,
    w: &[f64],
    channels: usize,
    k: usize,
    want_x: bool,
) -> SpaceConvGrads {
    let out_len = len - k + 1;
    let mut gx = want_x.then(|| vec![0.0; rows * len]);
    let mut gw = vec![0.0; channels * k];
    let mut gb = vec![0.0; channels];
    for s in 0..rows {
        let row = &x[s * len..(s + 1) * len];
        for c in 0..channels {
            let gsc = &g[(s * channels + c) * out_len..(s * channels + c + 1) * out_len];
            gb[c] += gsc.iter().sum::<f64>();
            for j in 0..k {
                gw[c * k + j] += gsc.iter().zip(&row[j..j + out_len]).map(|(a, b)| a * b).sum::<f64>();
                if let Some(gx) = gx.as_mut() {
                    let wj = w[c * k + j];
                    let dst = &mut gx[s * len + j..s * len + j + out_len];
                    for (d, &gv) in dst.iter_mut().zip(gsc) {
                        *d += wj * gv;
                    }
                }
            }
        }
    }
    SpaceConvGrads { x: gx, w: gw, bias: gb }
}

/// Geometry of a per-frame 2D valid convolution over `frames×cin×h×w`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Conv2dGeom {
    pub frames: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub size: usize,
    pub stride: usize,
}

impl Conv2dGeom {
    pub fn out_h(&self) -> usize {
        conv1d_len(self.h, self.size, self.stride)
    }

    pub fn out_w(&self) -> usize {
        conv1d_len(self.w, self.size, self.stride)
    }

    /// Rows of the unfolded patch matrix.
    pub fn patch(&self) -> usize {
        self.cin * self.size * self.size
    }

    /// Columns of the unfolded patch matrix (all frames side by side).
    pub fn cols(&self) -> usize {
        self.frames * self.out_h() * self.out_w()
    }
}

pub(crate) fn im2col(x: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncols = g.cols();
    let mut cols = vec![0.0; g.patch() * ncols];
    for t in 0..g.frames {
        for ci in 0..g.cin {
            let plane = &x[(t * g.cin + ci) * g.h * g.w..(t * g.cin + ci + 1) * g.h * g.w];
            for ky in 0..g.size {
                for kx in 0..g.size {
                    let prow = (ci * g.size + ky) * g.size + kx;
                    let dst = &mut cols[prow * ncols + t * oh * ow..prow * ncols + (t + 1) * oh * ow];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            dst[oy * ow + ox] = plane[(oy * g.stride + ky) * g.w + ox * g.stride + kx];
                        }
                    }
                }
            }
        }
    }
    cols
}

pub(crate) fn col2im(cols: &[f64], g: &Conv2dGeom) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let ncols = g.cols();
    let mut x = vec![0.0; g.frames * g.cin * g.h * g.w];
    for t in 0..g.frames {
        for ci in 0..g.cin {
            let base = (t * g.cin + ci) * g.h * g.w;
            for ky in 0..g.size {
                for kx in 0..g.size {
                    let prow = (ci * g.size + ky) * g.size + kx;
                    let src = &cols[prow * ncols + t * oh * ow..prow * ncols + (t + 1) * oh * ow];
                    for oy in 0..oh {
                        for ox in 0..ow {
                            x[base + (oy * g.stride + ky) * g.w + ox * g.stride + kx] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(outer, n, inner)` view of `shape` around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_axis(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut y = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let max = (0..n).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for j in 0..n {
                let e = (x[at(j)] - max).exp();
                y[at(j)] = e;
                total += e;
            }
            for j in 0..n {
                y[at(j)] /= total;
            }
        }
    }
    y
}

pub(crate) fn softmax_axis_backward(y: &[f64], g: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, n, inner) = axis_split(shape, axis);
    let mut gx = vec![0.0; y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * n + j) * inner + i;
            let dot: f64 = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
            for j in 0..n {
                gx[at(j)] = y[at(j)] * (g[at(j)] - dot);
            }
        }
    }
    gx
}
