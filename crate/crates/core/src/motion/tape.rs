//! Minimal reverse-mode automatic differentiation over [`Mat`] values.
//!
//! The tape records the forward graph as a flat vector of nodes; backward
//! walks it in reverse, accumulating gradients. Forward computations delegate
//! to the kernels in [`super::mat`], so tape results match the plain inference
//! path bit for bit.

use super::mat::{self, Mat};

pub type VarId = usize;

enum Op {
    /// Trainable parameter.
    Leaf,
    /// Input data; gradient not propagated further.
    Const,
    MatMul(VarId, VarId),
    /// `a * b^T`
    MatMulNT(VarId, VarId),
    Add(VarId, VarId),
    /// matrix + single-row bias broadcast over rows
    AddRowBroadcast(VarId, VarId),
    Scale(VarId, f64),
    SoftmaxRows(VarId),
    /// x, gain, bias
    LayerNorm(VarId, VarId, VarId),
    Relu(VarId),
    SliceCols(VarId, usize),
    ConcatCols(Vec<VarId>),
    TakeRow(VarId, usize),
    /// Sum of squared differences against a constant target, yielding 1x1.
    SqDiff(VarId, Mat),
}

struct Node {
    value: Mat,
    op: Op,
}

pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Mat, op: Op) -> VarId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: VarId) -> &Mat {
        &self.nodes[id].value
    }

    pub fn leaf(&mut self, value: Mat) -> VarId {
        self.push(value, Op::Leaf)
    }

    pub fn constant(&mut self, value: Mat) -> VarId {
        self.push(value, Op::Const)
    }

    pub fn matmul(&mut self, a: VarId, b: VarId) -> VarId {
        let v = mat::matmul(&self.nodes[a].value, &self.nodes[b].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: VarId, b: VarId) -> VarId {
        let v = mat::matmul_nt(&self.nodes[a].value, &self.nodes[b].value);
        self.push(v, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> VarId {
        let v = mat::add(&self.nodes[a].value, &self.nodes[b].value);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row_broadcast(&mut self, a: VarId, bias: VarId) -> VarId {
        let v = mat::add_row_broadcast(&self.nodes[a].value, &self.nodes[bias].value);
        self.push(v, Op::AddRowBroadcast(a, bias))
    }

    pub fn scale(&mut self, a: VarId, c: f64) -> VarId {
        let v = mat::scale(&self.nodes[a].value, c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn softmax_rows(&mut self, a: VarId) -> VarId {
        let v = mat::softmax_rows(&self.nodes[a].value);
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: VarId, gain: VarId, bias: VarId) -> VarId {
        let v = mat::layer_norm_rows(&self.nodes[x].value, &self.nodes[gain].value, &self.nodes[bias].value);
        self.push(v, Op::LayerNorm(x, gain, bias))
    }

    pub fn relu(&mut self, a: VarId) -> VarId {
        let v = mat::relu(&self.nodes[a].value);
        self.push(v, Op::Relu(a))
    }

    pub fn slice_cols(&mut self, a: VarId, start: usize, len: usize) -> VarId {
        let v = mat::slice_cols(&self.nodes[a].value, start, len);
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[VarId]) -> VarId {
        let values: Vec<&Mat> = parts.iter().map(|&p| &self.nodes[p].value).collect();
        let v = mat::concat_cols(&values);
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn take_row(&mut self, a: VarId, i: usize) -> VarId {
        let v = mat::take_row(&self.nodes[a].value, i);
        self.push(v, Op::TakeRow(a, i))
    }

    pub fn sq_diff(&mut self, pred: VarId, target: Mat) -> VarId {
        let p = &self.nodes[pred].value;
        assert_eq!(p.shape(), target.shape());
        let loss: f64 = p.data.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum();
        self.push(Mat::from_vec(1, 1, vec![loss]), Op::SqDiff(pred, target))
    }

    /// Backpropagate from a scalar node; returns per-node gradients.
    pub fn backward(&self, loss: VarId) -> Vec<Option<Mat>> {
        assert_eq!(self.nodes[loss].value.shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Mat::from_vec(1, 1, vec![1.0]));

        for id in (0..=loss).rev() {
            let Some(gout) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf | Op::Const => {
                    grads[id] = Some(gout);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = mat::matmul_nt(&gout, &self.nodes[*b].value);
                    let gb = mat::matmul_tn(&self.nodes[*a].value, &gout);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulNT(a, b) => {
                    // C = A B^T: dA = dC B, dB = dC^T A
                    let ga = mat::matmul(&gout, &self.nodes[*b].value);
                    let gb = mat::matmul_tn(&gout, &self.nodes[*a].value);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, gout.clone());
                    accumulate(&mut grads, *b, gout);
                }
                Op::AddRowBroadcast(a, bias) => {
                    let mut gb = Mat::zeros(1, gout.cols);
                    for i in 0..gout.rows {
                        for (acc, g) in gb.data.iter_mut().zip(gout.row(i)) {
                            *acc += g;
                        }
                    }
                    accumulate(&mut grads, *a, gout);
                    accumulate(&mut grads, *bias, gb);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, mat::scale(&gout, *c));
                }
                Op::SoftmaxRows(a) => {
                    let s = &self.nodes[id].value;
                    let mut gx = Mat::zeros(s.rows, s.cols);
                    for i in 0..s.rows {
                        let srow = s.row(i);
                        let grow = gout.row(i);
                        let dot: f64 = srow.iter().zip(grow).map(|(x, y)| x * y).sum();
                        for (o, (sv, gv)) in gx.row_mut(i).iter_mut().zip(srow.iter().zip(grow)) {
                            *o = sv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::LayerNorm(x, gain, bias) => {
                    let xval = &self.nodes[*x].value;
                    let gval = &self.nodes[*gain].value;
                    let n = xval.cols as f64;
                    let mut gx = Mat::zeros(xval.rows, xval.cols);
                    let mut ggain = Mat::zeros(1, xval.cols);
                    let mut gbias = Mat::zeros(1, xval.cols);
                    for i in 0..xval.rows {
                        let row = xval.row(i);
                        let mean = row.iter().sum::<f64>() / n;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv_std = 1.0 / (var + mat::LAYER_NORM_EPS).sqrt();
                        let grow = gout.row(i);
                        // h = dy .* gain; dx = inv_std * (h - mean(h) - xhat * mean(h .* xhat))
                        let mut h_mean = 0.0;
                        let mut hx_mean = 0.0;
                        for j in 0..xval.cols {
                            let xhat = (row[j] - mean) * inv_std;
                            let h = grow[j] * gval.data[j];
                            h_mean += h;
                            hx_mean += h * xhat;
                            ggain.data[j] += grow[j] * xhat;
                            gbias.data[j] += grow[j];
                        }
                        h_mean /= n;
                        hx_mean /= n;
                        for j in 0..xval.cols {
                            let xhat = (row[j] - mean) * inv_std;
                            let h = grow[j] * gval.data[j];
                            gx.row_mut(i)[j] = inv_std * (h - h_mean - xhat * hx_mean);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gain, ggain);
                    accumulate(&mut grads, *bias, gbias);
                }
                Op::Relu(a) => {
                    let xval = &self.nodes[*a].value;
                    let data = xval.data.iter().zip(&gout.data).map(|(x, g)| if *x > 0.0 { *g } else { 0.0 }).collect();
                    accumulate(&mut grads, *a, Mat { rows: gout.rows, cols: gout.cols, data });
                }
                Op::SliceCols(a, start) => {
                    let src = &self.nodes[*a].value;
                    let mut gx = Mat::zeros(src.rows, src.cols);
                    for i in 0..gout.rows {
                        gx.row_mut(i)[*start..*start + gout.cols].copy_from_slice(gout.row(i));
                    }
                    accumulate(&mut grads, *a, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[*p].value.cols;
                        let gp = mat::slice_cols(&gout, off, w);
                        accumulate(&mut grads, *p, gp);
                        off += w;
                    }
                }
                Op::TakeRow(a, i) => {
                    let src = &self.nodes[*a].value;
                    let mut gx = Mat::zeros(src.rows, src.cols);
                    gx.row_mut(*i).copy_from_slice(gout.row(0));
                    accumulate(&mut grads, *a, gx);
                }
                Op::SqDiff(pred, target) => {
                    let p = &self.nodes[*pred].value;
                    let g = gout.get(0, 0);
                    let data = p.data.iter().zip(&target.data).map(|(a, b)| 2.0 * (a - b) * g).collect();
                    accumulate(&mut grads, *pred, Mat { rows: p.rows, cols: p.cols, data });
                }
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Mat>], id: VarId, g: Mat) {
    match &mut grads[id] {
        Some(existing) => {
            debug_assert_eq!(existing.shape(), g.shape());
            for (a, b) in existing.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite difference of an arbitrary tape program with respect to
    /// one leaf entry.
    fn finite_diff<F>(build: F, leaf_data: &[f64], idx: usize) -> f64
    where
        F: Fn(&[f64]) -> f64,
    {
        let h = 1e-6;
        let mut plus = leaf_data.to_vec();
        plus[idx] += h;
        let mut minus = leaf_data.to_vec();
        minus[idx] -= h;
        (build(&plus) - build(&minus)) / (2.0 * h)
    }

    #[test]
    fn gradients_of_composite_program_match_finite_differences() {
        // loss = sqdiff(softmax_rows(layer_norm(x W + b)) row 0, target)
        let x_data = vec![0.3, -0.7, 1.2, 0.5, -0.2, 0.9];
        let w_data = vec![0.11, -0.3, 0.21, 0.42, 0.5, -0.17, -0.08, 0.33, 0.25];
        let eval = |w: &[f64]| -> f64 {
            let mut t = Tape::new();
            let x = t.constant(Mat::from_vec(2, 3, x_data.clone()));
            let wv = t.leaf(Mat::from_vec(3, 3, w.to_vec()));
            let gain = t.leaf(Mat::from_vec(1, 3, vec![1.1, 0.9, 1.0]));
            let bias = t.leaf(Mat::from_vec(1, 3, vec![0.0, 0.1, -0.1]));
            let y = t.matmul(x, wv);
            let ln = t.layer_norm(y, gain, bias);
            let s = t.softmax_rows(ln);
            let r = t.take_row(s, 0);
            let l = t.sq_diff(r, Mat::from_vec(1, 3, vec![1.0, 0.0, 0.0]));
            t.value(l).get(0, 0)
        };

        let mut t = Tape::new();
        let x = t.constant(Mat::from_vec(2, 3, x_data.clone()));
        let wv = t.leaf(Mat::from_vec(3, 3, w_data.clone()));
        let gain = t.leaf(Mat::from_vec(1, 3, vec![1.1, 0.9, 1.0]));
        let bias = t.leaf(Mat::from_vec(1, 3, vec![0.0, 0.1, -0.1]));
        let y = t.matmul(x, wv);
        let ln = t.layer_norm(y, gain, bias);
        let s = t.softmax_rows(ln);
        let r = t.take_row(s, 0);
        let l = t.sq_diff(r, Mat::from_vec(1, 3, vec![1.0, 0.0, 0.0]));
        let grads = t.backward(l);
        let gw = grads[wv].as_ref().unwrap();

        for idx in 0..w_data.len() {
            let fd = finite_diff(eval, &w_data, idx);
            let an = gw.data[idx];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(
                ((an - fd) / denom).abs() < 1e-5,
                "grad mismatch at {idx}: analytic {an}, fd {fd}"
            );
        }
    }

    #[test]
    fn slice_concat_and_matmul_nt_gradients() {
        let a_data = vec![0.5, -0.4, 0.3, 0.2, 0.1, -0.6, 0.7, 0.8];
        let eval = |a: &[f64]| -> f64 {
            let mut t = Tape::new();
            let av = t.leaf(Mat::from_vec(2, 4, a.to_vec()));
            let left = t.slice_cols(av, 0, 2);
            let right = t.slice_cols(av, 2, 2);
            let prod = t.matmul_nt(left, right);
            let sm = t.softmax_rows(prod);
            let cat = t.concat_cols(&[sm, prod]);
            let row = t.take_row(cat, 1);
            let l = t.sq_diff(row, Mat::from_vec(1, 4, vec![0.2, 0.8, 0.0, 1.0]));
            t.value(l).get(0, 0)
        };

        let mut t = Tape::new();
        let av = t.leaf(Mat::from_vec(2, 4, a_data.clone()));
        let left = t.slice_cols(av, 0, 2);
        let right = t.slice_cols(av, 2, 2);
        let prod = t.matmul_nt(left, right);
        let sm = t.softmax_rows(prod);
        let cat = t.concat_cols(&[sm, prod]);
        let row = t.take_row(cat, 1);
        let l = t.sq_diff(row, Mat::from_vec(1, 4, vec![0.2, 0.8, 0.0, 1.0]));
        let grads = t.backward(l);
        let ga = grads[av].as_ref().unwrap();

        for idx in 0..a_data.len() {
            let fd = finite_diff(eval, &a_data, idx);
            let an = ga.data[idx];
            let denom = an.abs().max(fd.abs()).max(1e-8);
            assert!(
                ((an - fd) / denom).abs() < 1e-5,
                "grad mismatch at {idx}: analytic {an}, fd {fd}"
            );
        }
    }
}
