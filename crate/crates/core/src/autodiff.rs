//! A minimal reverse-mode gradient tape over dense row-major matrices.
//!
//! Supports exactly the operations the weighting networks need: matrix
//! products, row-broadcast bias, sigmoid, row-wise softmax, scaling,
//! column means, transposition, elementwise products and full sums.

use serde::{Deserialize, Serialize};

/// Dense row-major `f64` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix payload does not match shape");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self { rows: 1, cols: data.len(), data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                orow.iter_mut().zip(brow).for_each(|(o, b)| *o += a * b);
            }
        }
        out
    }

    /// `self * other^T`.
    pub fn matmul_transb(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_transb shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = a.iter().zip(other.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    /// `self^T * other`.
    pub fn transa_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "transa_matmul shape mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let brow = other.row(k);
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                orow.iter_mut().zip(brow).for_each(|(o, b)| *o += a * b);
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    /// Position of this node in the gradient list returned by [`Tape::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulTransB(Var, Var),
    AddRowBias(Var, Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Scale(Var, f64),
    MeanRows(Var),
    Transpose(Var),
    Mul(Var, Var),
    Sum(Var),
}

/// Records a computation graph and replays it backwards.
#[derive(Debug, Default)]
pub struct Tape {
    values: Vec<Matrix>,
    ops: Vec<Op>,
}

fn softmax_row_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.values[v.0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.values[a.0].matmul(&self.values[b.0]);
        self.push(out, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_transb(&mut self, a: Var, b: Var) -> Var {
        let out = self.values[a.0].matmul_transb(&self.values[b.0]);
        self.push(out, Op::MatMulTransB(a, b))
    }

    /// Adds the `1 x cols` row `bias` to every row of `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Var {
        let (av, bv) = (&self.values[a.0], &self.values[bias.0]);
        assert_eq!((bv.rows, bv.cols), (1, av.cols), "bias shape mismatch");
        let mut out = av.clone();
        for r in 0..out.rows {
            out.data[r * out.cols..(r + 1) * out.cols].iter_mut().zip(&bv.data).for_each(|(o, b)| *o += b);
        }
        self.push(out, Op::AddRowBias(a, bias))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.values[a.0].map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(out, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.values[a.0].clone();
        let cols = out.cols;
        out.data.chunks_mut(cols.max(1)).for_each(softmax_row_in_place);
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.values[a.0].map(|v| v * s);
        self.push(out, Op::Scale(a, s))
    }

    /// Mean over rows, giving a `1 x cols` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = &self.values[a.0];
        let mut out = Matrix::zeros(1, av.cols);
        for r in 0..av.rows {
            out.data.iter_mut().zip(av.row(r)).for_each(|(o, v)| *o += v);
        }
        let inv = 1.0 / av.rows as f64;
        out.data.iter_mut().for_each(|o| *o *= inv);
        self.push(out, Op::MeanRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.values[a.0].transpose();
        self.push(out, Op::Transpose(a))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "elementwise shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        let out = Matrix { rows: av.rows, cols: av.cols, data };
        self.push(out, Op::Mul(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.values[a.0].data.iter().sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::Sum(a))
    }

    /// Gradients of the scalar `output` with respect to every node.
    pub fn backward(&self, output: Var) -> Vec<Matrix> {
        let mut grads: Vec<Matrix> = self.values.iter().map(|v| Matrix::zeros(v.rows, v.cols)).collect();
        assert_eq!(self.values[output.0].data.len(), 1, "backward needs a scalar output");
        grads[output.0].data[0] = 1.0;
        for idx in (0..=output.0).rev() {
            let g = std::mem::replace(&mut grads[idx], Matrix::zeros(0, 0));
            match &self.ops[idx] {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_transb(&self.values[b.0]);
                    let db = self.values[a.0].transa_matmul(&g);
                    grads[a.0].add_assign(&da);
                    grads[b.0].add_assign(&db);
                }
                Op::MatMulTransB(a, b) => {
                    let da = g.matmul(&self.values[b.0]);
                    let db = g.transa_matmul(&self.values[a.0]);
                    grads[a.0].add_assign(&da);
                    grads[b.0].add_assign(&db);
                }
                Op::AddRowBias(a, bias) => {
                    grads[a.0].add_assign(&g);
                    let gb = &mut grads[bias.0];
                    for r in 0..g.rows {
                        gb.data.iter_mut().zip(g.row(r)).for_each(|(o, v)| *o += v);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &self.values[idx];
                    let ga = &mut grads[a.0];
                    for ((o, gv), yv) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                        *o += gv * yv * (1.0 - yv);
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.values[idx];
                    let cols = y.cols;
                    let ga = &mut grads[a.0];
                    for r in 0..y.rows {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..cols {
                            ga.data[r * cols + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = &mut grads[a.0];
                    ga.data.iter_mut().zip(&g.data).for_each(|(o, v)| *o += s * v);
                }
                Op::MeanRows(a) => {
                    let ga = &mut grads[a.0];
                    let inv = 1.0 / ga.rows as f64;
                    let cols = ga.cols;
                    for r in 0..ga.rows {
                        ga.data[r * cols..(r + 1) * cols].iter_mut().zip(&g.data).for_each(|(o, v)| *o += v * inv);
                    }
                }
                Op::Transpose(a) => {
                    grads[a.0].add_assign(&g.transpose());
                }
                Op::Mul(a, b) => {
                    let da = Matrix { rows: g.rows, cols: g.cols, data: g.data.iter().zip(&self.values[b.0].data).map(|(x, y)| x * y).collect() };
                    let db = Matrix { rows: g.rows, cols: g.cols, data: g.data.iter().zip(&self.values[a.0].data).map(|(x, y)| x * y).collect() };
                    grads[a.0].add_assign(&da);
                    grads[b.0].add_assign(&db);
                }
                Op::Sum(a) => {
                    let s = g.data[0];
                    grads[a.0].data.iter_mut().for_each(|o| *o += s);
                }
            }
            grads[idx] = g;
        }
        grads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, input: Matrix) {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let out = build(&mut tape, x);
        let grads = tape.backward(out);
        let h = 1e-6;
        for k in 0..input.data.len() {
            let eval = |delta: f64| {
                let mut m = input.clone();
                m.data[k] += delta;
                let mut t = Tape::new();
                let v = t.leaf(m);
                let o = build(&mut t, v);
                t.value(o).data[0]
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = grads[x.0].data[k];
            assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()), "k={k} fd={fd} an={an}");
        }
    }

    fn sample(rows: usize, cols: usize, seed: f64) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|i| ((i as f64 + 1.0) * seed).sin()).collect())
    }

    #[test]
    fn matmul_shapes() {
        let a = sample(2, 3, 0.3);
        let b = sample(3, 4, 0.7);
        let c = a.matmul(&b);
        assert_eq!((c.rows, c.cols), (2, 4));
        let expected: f64 = (0..3).map(|k| a.get(1, k) * b.get(k, 2)).sum();
        assert!((c.get(1, 2) - expected).abs() < 1e-15);
        let bt = b.transpose();
        assert_eq!(a.matmul_transb(&bt), c);
        assert_eq!(a.transpose().transa_matmul(&b), c);
    }

    #[test]
    fn gradients_of_each_op() {
        let w = sample(3, 2, 0.9);
        let bias = sample(1, 2, 0.4);
        fd_check(
            move |t, x| {
                let wv = t.leaf(w.clone());
                let bv = t.leaf(bias.clone());
                let y = t.matmul(x, wv);
                let y = t.add_row_bias(y, bv);
                let y = t.sigmoid(y);
                let y = t.softmax_rows(y);
                let y = t.scale(y, 1.7);
                let yt = t.transpose(y);
                let z = t.matmul_transb(yt, yt);
                let z = t.mean_rows(z);
                let z2 = t.mul(z, z);
                t.sum(z2)
            },
            sample(4, 3, 0.37),
        );
    }

    #[test]
    fn attention_like_graph() {
        let wq = sample(3, 5, 0.21);
        let wk = sample(3, 5, 0.33);
        let wv = sample(3, 3, 0.45);
        let target = sample(1, 3, 1.3);
        fd_check(
            move |t, a| {
                let at = t.transpose(a);
                let q = t.leaf(wq.clone());
                let k = t.leaf(wk.clone());
                let v = t.leaf(wv.clone());
                let q = t.matmul(at, q);
                let k = t.matmul(at, k);
                let v = t.matmul(at, v);
                let s = t.matmul_transb(q, k);
                let s = t.scale(s, 1.0 / 5f64.sqrt());
                let s = t.softmax_rows(s);
                let o = t.matmul(s, v);
                let o = t.mean_rows(o);
                let o = t.softmax_rows(o);
                let w = t.leaf(target.clone());
                let o = t.mul(o, w);
                t.sum(o)
            },
            sample(3, 4, 0.77),
        );
    }
}
