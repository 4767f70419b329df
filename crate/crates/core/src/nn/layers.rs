use ndarray::{s, Array1, Array2, Array3, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;

use super::{uniform, Scalar};

/// `y = x·W + b` applied row-wise; `W` is `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S: Scalar> {
    pub w: Array2<S>,
    pub b: Array1<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, inputs: usize, outputs: usize, limit: f64) -> Self {
        Self {
            w: uniform(rng, (inputs, outputs), limit),
            b: Array1::zeros(outputs),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.w.nrows(), self.w.ncols())
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<S>) -> Array2<S> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<S>, dy: &Array2<S>, grad: &mut Self) -> Array2<S> {
        self.accumulate(x, dy, grad);
        dy.dot(&self.w.t())
    }

    /// Parameter gradients only.
    pub fn accumulate(&self, x: &Array2<S>, dy: &Array2<S>, grad: &mut Self) {
        ndarray::linalg::general_mat_mul(S::one(), &x.t(), dy, S::one(), &mut grad.w);
        grad.b += &dy.sum_axis(Axis(0));
    }

    pub fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, S>)>) {
        out.push((format!("{prefix}.w"), self.w.view().into_dyn()));
        out.push((format!("{prefix}.b"), self.b.view().into_dyn()));
    }

    pub fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, S>>) {
        out.push(self.w.view_mut().into_dyn());
        out.push(self.b.view_mut().into_dyn());
    }
}

/// Dilated causal 1-D convolution over a `[T, C]` sequence.
///
/// Output position `t` reads inputs `t - (k-1-j)·d` for taps `j = 0..k`;
/// positions before the sequence start are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalConv<S: Scalar> {
    /// `[k, c_in, c_out]`
    pub w: Array3<S>,
    pub b: Array1<S>,
    pub dilation: usize,
}

impl<S: Scalar> CausalConv<S> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, k: usize, c_in: usize, c_out: usize, dilation: usize, limit: f64) -> Self {
        let flat = uniform(rng, (k * c_in, c_out), limit);
        Self {
            w: flat.into_shape_with_order((k, c_in, c_out)).expect("shape"),
            b: Array1::zeros(c_out),
            dilation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array3::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.len()),
            dilation: self.dilation,
        }
    }

    pub fn kernel_size(&self) -> usize {
        self.w.shape()[0]
    }

    /// Left shift of tap `j`.
    pub fn shift(&self, j: usize) -> usize {
        (self.kernel_size() - 1 - j) * self.dilation
    }

    pub fn forward(&self, x: &Array2<S>) -> Array2<S> {
        let t = x.nrows();
        let mut y = Array2::from_shape_fn((t, self.b.len()), |(_, c)| self.b[c]);
        for j in 0..self.kernel_size() {
            let s = self.shift(j);
            if s >= t {
                continue;
            }
            let wj = self.w.index_axis(Axis(0), j);
            let mut out = y.slice_mut(s![s.., ..]);
            ndarray::linalg::general_mat_mul(S::one(), &x.slice(s![..t - s, ..]), &wj, S::one(), &mut out);
        }
        y
    }

    /// Output at the last position given per-tap input rows (`None` = zero padding).
    pub fn forward_step(&self, taps: &[Option<ndarray::ArrayView1<'_, S>>]) -> Array1<S> {
        let mut y = self.b.clone();
        for (j, tap) in taps.iter().enumerate() {
            if let Some(row) = tap {
                y += &row.dot(&self.w.index_axis(Axis(0), j));
            }
        }
        y
    }

    pub fn backward(&self, x: &Array2<S>, dy: &Array2<S>, grad: &mut Self) -> Array2<S> {
        let t = x.nrows();
        let mut dx = Array2::zeros(x.raw_dim());
        grad.b += &dy.sum_axis(Axis(0));
        for j in 0..self.kernel_size() {
            let s = self.shift(j);
            if s >= t {
                continue;
            }
            let dys = dy.slice(s![s.., ..]);
            let xs = x.slice(s![..t - s, ..]);
            let mut gw = grad.w.index_axis_mut(Axis(0), j);
            ndarray::linalg::general_mat_mul(S::one(), &xs.t(), &dys, S::one(), &mut gw);
            let wj = self.w.index_axis(Axis(0), j);
            let mut dxs = dx.slice_mut(s![..t - s, ..]);
            ndarray::linalg::general_mat_mul(S::one(), &dys, &wj.t(), S::one(), &mut dxs);
        }
        dx
    }

    pub fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, S>)>) {
        out.push((format!("{prefix}.w"), self.w.view().into_dyn()));
        out.push((format!("{prefix}.b"), self.b.view().into_dyn()));
    }

    pub fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, S>>) {
        out.push(self.w.view_mut().into_dyn());
        out.push(self.b.view_mut().into_dyn());
    }
}

/// Strided "valid" 1-D convolution over a batch `[B, L, C]`, computed via im2col.
#[derive(Debug, Clone, PartialEq)]
pub struct StridedConv<S: Scalar> {
    /// `[k·c_in, c_out]`, rows ordered tap-major.
    pub w: Array2<S>,
    pub b: Array1<S>,
    pub kernel: usize,
    pub stride: usize,
    pub c_in: usize,
}

impl<S: Scalar> StridedConv<S> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        kernel: usize,
        stride: usize,
        c_in: usize,
        c_out: usize,
        limit: f64,
    ) -> Self {
        Self {
            w: uniform(rng, (kernel * c_in, c_out), limit),
            b: Array1::zeros(c_out),
            kernel,
            stride,
            c_in,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.len()),
            ..*self
        }
    }

    pub fn c_out(&self) -> usize {
        self.w.ncols()
    }

    /// Output length for an input of length `len`, or 0 if the kernel does not fit.
    pub fn out_len(&self, len: usize) -> usize {
        if len < self.kernel {
            0
        } else {
            (len - self.kernel) / self.stride + 1
        }
    }

    fn im2col(&self, x: &Array3<S>) -> Array2<S> {
        let (batch, len, c) = x.dim();
        debug_assert_eq!(c, self.c_in);
        let p = self.out_len(len);
        let width = self.kernel * c;
        let mut cols = Array2::zeros((batch * p, width));
        let x = x.as_standard_layout();
        let data = x.as_slice().expect("standard layout");
        let dst = cols.as_slice_mut().expect("fresh array");
        for b in 0..batch {
            for i in 0..p {
                let start = (b * len + i * self.stride) * c;
                let row = (b * p + i) * width;
                dst[row..row + width].copy_from_slice(&data[start..start + width]);
            }
        }
        cols
    }

    /// Returns the output `[B, P, c_out]` and the im2col matrix needed for backward.
    pub fn forward(&self, x: &Array3<S>) -> (Array3<S>, Array2<S>) {
        let (batch, len, _) = x.dim();
        let p = self.out_len(len);
        let cols = self.im2col(x);
        let y = cols.dot(&self.w) + &self.b;
        let y = y.into_shape_with_order((batch, p, self.c_out())).expect("shape");
        (y, cols)
    }

    /// Accumulates parameter gradients; returns `dL/dx` when `input_len` is given.
    pub fn backward(
        &self,
        cols: &Array2<S>,
        dy: &Array3<S>,
        grad: &mut Self,
        input_len: Option<usize>,
    ) -> Option<Array3<S>> {
        let (batch, p, c_out) = dy.dim();
        let dy2 = dy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((batch * p, c_out))
            .expect("shape");
        ndarray::linalg::general_mat_mul(S::one(), &cols.t(), &dy2, S::one(), &mut grad.w);
        grad.b += &dy2.sum_axis(Axis(0));
        let len = input_len?;
        let dcols = dy2.dot(&self.w.t());
        let c = self.c_in;
        let width = self.kernel * c;
        let mut dx = Array3::<S>::zeros((batch, len, c));
        let dst = dx.as_slice_mut().expect("fresh array");
        let src = dcols.as_slice().expect("fresh array");
        for b in 0..batch {
            for i in 0..p {
                let start = (b * len + i * self.stride) * c;
                let row = (b * p + i) * width;
                for (d, &g) in dst[start..start + width].iter_mut().zip(&src[row..row + width]) {
                    *d += g;
                }
            }
        }
        Some(dx)
    }

    pub fn push_tensors<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, S>)>) {
        out.push((format!("{prefix}.w"), self.w.view().into_dyn()));
        out.push((format!("{prefix}.b"), self.b.view().into_dyn()));
    }

    pub fn push_tensors_mut<'a>(&'a mut self, out: &mut Vec<ArrayViewMutD<'a, S>>) {
        out.push(self.w.view_mut().into_dyn());
        out.push(self.b.view_mut().into_dyn());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct definition of the causal convolution, one output at a time.
    fn naive_causal(conv: &CausalConv<f64>, x: &Array2<f64>) -> Array2<f64> {
        let (t, _) = x.dim();
        let k = conv.kernel_size();
        Array2::from_shape_fn((t, conv.b.len()), |(pos, o)| {
            let mut acc = conv.b[o];
            for j in 0..k {
                let back = (k - 1 - j) * conv.dilation;
                if pos >= back {
                    for c in 0..x.ncols() {
                        acc += x[[pos - back, c]] * conv.w[[j, c, o]];
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn causal_conv_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = CausalConv::<f64>::new(&mut rng, 3, 4, 5, 2, 0.5);
        conv.b = Array1::from_shape_fn(5, |i| i as f64 * 0.1);
        let x = uniform(&mut rng, (11, 4), 1.0);
        let fast = conv.forward(&x);
        let slow = naive_causal(&conv, &x);
        assert!(fast.iter().zip(&slow).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn strided_conv_matches_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let conv = StridedConv::<f64>::new(&mut rng, 3, 2, 2, 3, 0.5);
        let x = Array3::from_shape_fn((2, 9, 2), |(b, i, c)| (b * 100 + i * 10 + c) as f64 * 0.01);
        let (y, _) = conv.forward(&x);
        assert_eq!(y.dim(), (2, 4, 3));
        for b in 0..2 {
            for p in 0..4 {
                for o in 0..3 {
                    let mut acc = conv.b[o];
                    for j in 0..3 {
                        for c in 0..2 {
                            acc += x[[b, p * 2 + j, c]] * conv.w[[j * 2 + c, o]];
                        }
                    }
                    assert!((y[[b, p, o]] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn strided_conv_input_gradient_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let conv = StridedConv::<f64>::new(&mut rng, 4, 2, 3, 2, 0.5);
        let x = Array3::from_shape_fn((1, 10, 3), |_| rng.gen_range(-1.0..1.0));
        let (y, cols) = conv.forward(&x);
        let dy = y.mapv(|_| 1.0);
        let mut grad = conv.zeros_like();
        let dx = conv.backward(&cols, &dy, &mut grad, Some(10)).unwrap();
        let h = 1e-6;
        for idx in [(0, 0, 0), (0, 3, 1), (0, 9, 2), (0, 5, 0)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (conv.forward(&xp).0.sum() - conv.forward(&xm).0.sum()) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-6, "{idx:?}: {fd} vs {}", dx[idx]);
        }
    }

    #[test]
    fn step_matches_full_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let conv = CausalConv::<f64>::new(&mut rng, 3, 3, 2, 4, 0.5);
        let x = uniform(&mut rng, (13, 3), 1.0);
        let full = conv.forward(&x);
        let t = 12;
        let taps: Vec<_> = (0..3)
            .map(|j| {
                let back = conv.shift(j);
                (t >= back).then(|| x.row(t - back))
            })
            .collect();
        let y = conv.forward_step(&taps);
        assert!(y.iter().zip(full.row(t)).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
