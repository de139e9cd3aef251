//! Dense row-major `f64` tensors.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::dim("tensor", format!("zero-sized dimension in {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Builds a tensor whose shape is known to be consistent with `data`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_parts(vec![1], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_parts(shape.to_vec(), (0..n).map(&mut f).collect())
    }

    /// 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::dim("from_rows", "ragged rows"));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the trailing dimension.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensors have rank >= 1")
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of bounds for dim {d}");
                acc * d + i
            })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(Error::dim(
                "reshape",
                format!("cannot reshape {:?} into {shape:?}", self.shape),
            ));
        }
        Ok(Tensor::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> std::slice::Chunks<'_, f64> {
        self.data.chunks(self.last_dim())
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

/// Raw numeric kernels shared by the tape ops and the model code.
pub(crate) mod kernels {
    /// `c[m×n] = a[m×k] · b[k×n]`, i-k-j order.
    pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            let crow = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (cv, &bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
        c
    }

    pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; a.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = a[r * cols + c];
            }
        }
        t
    }

    pub fn softmax_rows(x: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (src, dst) in x.chunks(n).zip(out.chunks_mut(n)) {
            let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - max).exp();
                total += *d;
            }
            for d in dst.iter_mut() {
                *d /= total;
            }
        }
        out
    }

    /// Normalises each row of length `n`; returns `(xhat, inv_std)`.
    pub fn normalize_rows(x: &[f64], n: usize, eps: f64) -> (Vec<f64>, Vec<f64>) {
        let mut xhat = vec![0.0; x.len()];
        let mut inv = Vec::with_capacity(x.len() / n);
        let nf = n as f64;
        for (src, dst) in x.chunks(n).zip(xhat.chunks_mut(n)) {
            let mean = src.iter().sum::<f64>() / nf;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
            let is = 1.0 / (var + eps).sqrt();
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * is;
            }
            inv.push(is);
        }
        (xhat, inv)
    }

    const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

    /// Standard normal CDF.
    pub fn phi_cdf(x: f64) -> f64 {
        0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
    }

    pub fn gelu(x: f64) -> f64 {
        x * phi_cdf(x)
    }

    pub fn gelu_grad(x: f64) -> f64 {
        phi_cdf(x) + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
    }

    #[derive(Clone, Copy, Debug)]
    pub struct ConvGeom {
        pub batch: usize,
        pub c_in: usize,
        pub h: usize,
        pub w: usize,
        pub c_out: usize,
        pub kh: usize,
        pub kw: usize,
        pub stride: usize,
        pub pad: usize,
    }

    impl ConvGeom {
        pub fn out_h(&self) -> usize {
            (self.h + 2 * self.pad - self.kh) / self.stride + 1
        }

        pub fn out_w(&self) -> usize {
            (self.w + 2 * self.pad - self.kw) / self.stride + 1
        }

        fn col_rows(&self) -> usize {
            self.c_in * self.kh * self.kw
        }

        fn col_cols(&self) -> usize {
            self.batch * self.out_h() * self.out_w()
        }

        /// Source pixel for kernel tap (i, j) at output (y, x), if inside the image.
        #[inline]
        fn source(&self, y: usize, x: usize, i: usize, j: usize) -> Option<(usize, usize)> {
            let sy = (y * self.stride + i).checked_sub(self.pad)?;
            let sx = (x * self.stride + j).checked_sub(self.pad)?;
            (sy < self.h && sx < self.w).then_some((sy, sx))
        }
    }

    /// Unfolds `x[N×C×H×W]` into `[C·kh·kw × N·Ho·Wo]`.
    pub fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let cols = g.col_cols();
        let mut col = vec![0.0; g.col_rows() * cols];
        for c in 0..g.c_in {
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let row = (c * g.kh + i) * g.kw + j;
                    let dst = &mut col[row * cols..(row + 1) * cols];
                    for n in 0..g.batch {
                        let plane = &x[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                        for y in 0..oh {
                            for xx in 0..ow {
                                if let Some((sy, sx)) = g.source(y, xx, i, j) {
                                    dst[(n * oh + y) * ow + xx] = plane[sy * g.w + sx];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    /// Adjoint of [`im2col`]: folds column gradients back onto the input.
    pub fn col2im(col: &[f64], g: &ConvGeom) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let cols = g.col_cols();
        let mut x = vec![0.0; g.batch * g.c_in * g.h * g.w];
        for c in 0..g.c_in {
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let row = (c * g.kh + i) * g.kw + j;
                    let src = &col[row * cols..(row + 1) * cols];
                    for n in 0..g.batch {
                        let plane = &mut x[(n * g.c_in + c) * g.h * g.w..][..g.h * g.w];
                        for y in 0..oh {
                            for xx in 0..ow {
                                if let Some((sy, sx)) = g.source(y, xx, i, j) {
                                    plane[sy * g.w + sx] += src[(n * oh + y) * ow + xx];
                                }
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// `[C_out × N·Ho·Wo]` (matmul layout) → `[N × C_out × Ho × Wo]`.
    pub fn cols_to_nchw(y: &[f64], g: &ConvGeom) -> Vec<f64> {
        let hw = g.out_h() * g.out_w();
        let mut out = vec![0.0; y.len()];
        for o in 0..g.c_out {
            for n in 0..g.batch {
                let src = &y[o * g.batch * hw + n * hw..][..hw];
                out[(n * g.c_out + o) * hw..][..hw].copy_from_slice(src);
            }
        }
        out
    }

    /// Inverse of [`cols_to_nchw`].
    pub fn nchw_to_cols(y: &[f64], g: &ConvGeom) -> Vec<f64> {
        let hw = g.out_h() * g.out_w();
        let mut out = vec![0.0; y.len()];
        for o in 0..g.c_out {
            for n in 0..g.batch {
                let src = &y[(n * g.c_out + o) * hw..][..hw];
                out[o * g.batch * hw + n * hw..][..hw].copy_from_slice(src);
            }
        }
        out
    }
}
