//! Dense row-major f64 matrices and the handful of kernels the network needs.
//!
//! Both the inference path and the training tape call into these functions, so
//! the two paths produce bit-identical values for the same inputs.

/// Row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

/// Widest result row that accumulates on the stack (kept in registers).
const ACC_WIDTH: usize = 64;

/// `a * b`.
pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Mat::zeros(a.rows, b.cols);
    matmul_body(a, b, &mut out);
    out
}

/// `a * b` written into `out` (overwritten, shape must match).
pub fn matmul_into(a: &Mat, b: &Mat, out: &mut Mat) {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    assert_eq!(out.shape(), (a.rows, b.cols));
    matmul_body(a, b, out);
}

fn matmul_body(a: &Mat, b: &Mat, out: &mut Mat) {
    if b.cols <= ACC_WIDTH {
        // Accumulate each output row on the stack so the compiler can hold it
        // in vector registers across the k loop.
        let mut acc = [0.0f64; ACC_WIDTH];
        for i in 0..a.rows {
            let acc = &mut acc[..b.cols];
            acc.fill(0.0);
            let a_row = a.row(i);
            for (k, &aik) in a_row.iter().enumerate() {
                let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
                for (o, &bkj) in acc.iter_mut().zip(b_row) {
                    *o = aik.mul_add(bkj, *o);
                }
            }
            out.data[i * b.cols..(i + 1) * b.cols].copy_from_slice(acc);
        }
    } else {
        out.data.fill(0.0);
        for i in 0..a.rows {
            let a_row = a.row(i);
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (k, &aik) in a_row.iter().enumerate() {
                let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
                for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                    *o = aik.mul_add(bkj, *o);
                }
            }
        }
    }
}

/// `a * b^T` (rows of `a` dotted with rows of `b`).
pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols, "matmul_nt shape mismatch");
    let mut out = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            let b_row = b.row(j);
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out.data[i * b.rows + j] = acc;
        }
    }
    out
}

/// `a * b^T` written into `out` (overwritten, shape must match).
pub fn matmul_nt_into(a: &Mat, b: &Mat, out: &mut Mat) {
    assert_eq!(a.cols, b.cols, "matmul_nt shape mismatch");
    assert_eq!(out.shape(), (a.rows, b.rows));
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            let b_row = b.row(j);
            let mut acc = 0.0;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out.data[i * b.rows + j] = acc;
        }
    }
}

/// `a^T * b`.
pub fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows, "matmul_tn shape mismatch");
    let mut out = Mat::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aki * bkj;
            }
        }
    }
    out
}

/// Elementwise sum.
pub fn add(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.shape(), b.shape(), "add shape mismatch");
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Mat { rows: a.rows, cols: a.cols, data }
}

/// Add a single-row bias to every row.
pub fn add_row_broadcast(a: &Mat, bias: &Mat) -> Mat {
    assert_eq!(bias.rows, 1, "bias must be a single row");
    assert_eq!(a.cols, bias.cols, "bias width mismatch");
    let mut out = a.clone();
    for i in 0..out.rows {
        for (o, b) in out.row_mut(i).iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    out
}

pub fn scale(a: &Mat, c: f64) -> Mat {
    let data = a.data.iter().map(|x| x * c).collect();
    Mat { rows: a.rows, cols: a.cols, data }
}

/// Row-wise softmax with max-shift.
pub fn softmax_rows(a: &Mat) -> Mat {
    let mut out = a.clone();
    softmax_rows_inplace(&mut out);
    out
}

/// In-place row-wise softmax with max-shift.
pub fn softmax_rows_inplace(a: &mut Mat) {
    for i in 0..a.rows {
        let row = a.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise layer normalization with learned gain and bias (single rows).
pub fn layer_norm_rows(a: &Mat, gain: &Mat, bias: &Mat) -> Mat {
    assert_eq!(gain.rows, 1);
    assert_eq!(bias.rows, 1);
    assert_eq!(gain.cols, a.cols);
    assert_eq!(bias.cols, a.cols);
    let n = a.cols as f64;
    let mut out = a.clone();
    for i in 0..out.rows {
        let row = out.row_mut(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (j, v) in row.iter_mut().enumerate() {
            *v = gain.data[j] * ((*v - mean) * inv_std) + bias.data[j];
        }
    }
    out
}

pub fn relu(a: &Mat) -> Mat {
    let data = a.data.iter().map(|x| x.max(0.0)).collect();
    Mat { rows: a.rows, cols: a.cols, data }
}

/// Copy of columns `[start, start+len)`.
pub fn slice_cols(a: &Mat, start: usize, len: usize) -> Mat {
    assert!(start + len <= a.cols);
    let mut out = Mat::zeros(a.rows, len);
    for i in 0..a.rows {
        out.row_mut(i).copy_from_slice(&a.row(i)[start..start + len]);
    }
    out
}

/// Horizontal concatenation.
pub fn concat_cols(parts: &[&Mat]) -> Mat {
    assert!(!parts.is_empty());
    let rows = parts[0].rows;
    assert!(parts.iter().all(|m| m.rows == rows));
    let cols: usize = parts.iter().map(|m| m.cols).sum();
    let mut out = Mat::zeros(rows, cols);
    for i in 0..rows {
        let mut off = 0;
        for m in parts {
            out.row_mut(i)[off..off + m.cols].copy_from_slice(m.row(i));
            off += m.cols;
        }
    }
    out
}

/// Copy of row `i` as a 1-row matrix.
pub fn take_row(a: &Mat, i: usize) -> Mat {
    Mat::from_vec(1, a.cols, a.row(i).to_vec())
}
