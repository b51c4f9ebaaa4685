//! Reverse-mode differentiation over matrices.
//!
//! Every op appends a node holding its value; `backward` walks the nodes in
//! reverse and accumulates gradients into each input.

use super::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Transpose(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    CausalSoftmax(Var),
    MeanRows(Var),
    Im2Col {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Mse(Var, Var),
    Cosine(Var, Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    /// Scalar computed outside the tape with its local gradient.
    Fused {
        x: Var,
        grad: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let av = a.data[i * a.cols + k];
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.cols, a.rows);
    for i in 0..a.rows {
        for j in 0..a.cols {
            out.data[j * a.rows + i] = a.data[i * a.cols + j];
        }
    }
    out
}

/// Cell `(r, c)` neighbour for tap `k` (row-major over the 3x3 window).
fn tap(r: usize, c: usize, k: usize, rows: usize, cols: usize) -> Option<usize> {
    let rr = r as isize + (k / 3) as isize - 1;
    let cc = c as isize + (k % 3) as isize - 1;
    (rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols).then(|| rr as usize * cols + cc as usize)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Matrix { rows: 1, cols: 1, data: vec![v] })
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = matmul(self.value(a), self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Matrix {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        Matrix { rows: x.rows, cols: x.cols, data: x.data.iter().zip(&y.data).map(|(a, b)| f(*a, *b)).collect() }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip(a, b, |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, b) = (self.value(a), self.value(row));
        assert_eq!((b.rows, b.cols), (1, x.cols), "add_row shape mismatch");
        let mut v = x.clone();
        for r in 0..v.rows {
            for (o, bv) in v.data[r * v.cols..(r + 1) * v.cols].iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let v = Matrix { rows: x.rows, cols: x.cols, data: x.data.iter().map(|v| v * s).collect() };
        self.push(v, Op::Scale(a, s))
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Matrix {
        let x = self.value(a);
        Matrix { rows: x.rows, cols: x.cols, data: x.data.iter().map(|v| f(*v)).collect() }
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.map(a, gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.map(a, sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Row-wise layer norm with `1 x c` gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (xv, g, b) = (self.value(x), self.value(gamma), self.value(beta));
        let c = xv.cols;
        let mut out = Matrix::zeros(xv.rows, c);
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; xv.rows];
        for r in 0..xv.rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = s;
            for j in 0..c {
                let h = (row[j] - mean) * s;
                xhat[r * c + j] = h;
                out.data[r * c + j] = h * g.data[j] + b.data[j];
            }
        }
        self.push(out, Op::LayerNorm { x, gamma, beta, xhat, rstd })
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = transpose(self.value(a));
        self.push(v, Op::Transpose(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let mut v = Matrix::zeros(x.rows, len);
        for r in 0..x.rows {
            v.data[r * len..(r + 1) * len].copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut v = Matrix::zeros(rows, cols);
        let mut off = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.data[r * cols + off..r * cols + off + x.cols].copy_from_slice(x.row(r));
            }
            off += x.cols;
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let v = Matrix { rows: len, cols: x.cols, data: x.data[start * x.cols..(start + len) * x.cols].to_vec() };
        self.push(v, Op::SliceRows(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.cols, cols, "concat_rows col mismatch");
            data.extend_from_slice(&x.data);
        }
        let rows = data.len() / cols;
        self.push(Matrix { rows, cols, data }, Op::ConcatRows(parts.to_vec()))
    }

    /// Row-wise softmax where row `i` only sees columns `0..=i`; the rest are 0.
    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Matrix::zeros(x.rows, x.cols);
        for i in 0..x.rows {
            let row = x.row(i);
            let n = (i + 1).min(x.cols);
            let m = row[..n].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut v.data[i * x.cols..i * x.cols + n];
            for (o, r) in out.iter_mut().zip(&row[..n]) {
                *o = (r - m).exp();
            }
            let sum: f64 = out.iter().sum();
            for o in out {
                *o /= sum;
            }
        }
        self.push(v, Op::CausalSoftmax(a))
    }

    /// Column means, `1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Matrix::zeros(1, x.cols);
        for r in 0..x.rows {
            for (o, xv) in v.data.iter_mut().zip(x.row(r)) {
                *o += xv;
            }
        }
        let n = x.rows as f64;
        v.data.iter_mut().for_each(|o| *o /= n);
        self.push(v, Op::MeanRows(a))
    }

    /// Gathers each cell's zero-padded 3x3 neighbourhood. `a` stacks one or
    /// more `rows x cols` grids; output row width is `9 * c`.
    pub fn im2col3x3(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let x = self.value(a);
        let cells = rows * cols;
        assert_eq!(x.rows % cells, 0, "im2col grid mismatch");
        let d = x.cols;
        let mut v = Matrix::zeros(x.rows, 9 * d);
        for g in 0..x.rows / cells {
            for r in 0..rows {
                for c in 0..cols {
                    let out_row = g * cells + r * cols + c;
                    for k in 0..9 {
                        if let Some(src) = tap(r, c, k, rows, cols) {
                            let dst = out_row * 9 * d + k * d;
                            v.data[dst..dst + d].copy_from_slice(x.row(g * cells + src));
                        }
                    }
                }
            }
        }
        self.push(v, Op::Im2Col { x: a, rows, cols })
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.zip(a, b, |x, y| (x - y) * (x - y));
        let v = d.data.iter().sum::<f64>() / d.len() as f64;
        self.push(Matrix { rows: 1, cols: 1, data: vec![v] }, Op::Mse(a, b))
    }

    /// Mean over rows of `1 - cos(a_r, b_r)`; zero rows count as cosine 0.
    pub fn cosine_distance(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "cosine shape mismatch");
        let mut total = 0.0;
        for r in 0..x.rows {
            total += 1.0 - cosine_row(x.row(r), y.row(r)).0;
        }
        let v = total / x.rows as f64;
        self.push(Matrix { rows: 1, cols: 1, data: vec![v] }, Op::Cosine(a, b))
    }

    /// Mean token cross-entropy of `n x V` logits against `n` targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.rows, targets.len(), "one target per row");
        let mut probs = vec![0.0; x.len()];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = x.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
            for (j, v) in row.iter().enumerate() {
                probs[r * x.cols + j] = (v - m).exp() / sum;
            }
            loss += sum.ln() + m - row[t];
        }
        let v = loss / targets.len().max(1) as f64;
        self.push(
            Matrix { rows: 1, cols: 1, data: vec![v] },
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
        )
    }

    /// A scalar whose value and gradient with respect to `x` were computed
    /// elsewhere.
    pub fn fused(&mut self, x: Var, value: f64, grad: Vec<f64>) -> Var {
        assert_eq!(grad.len(), self.value(x).len(), "fused gradient size");
        self.push(Matrix { rows: 1, cols: 1, data: vec![value] }, Op::Fused { x, grad })
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
        grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    /// Backpropagates from scalar `root`. Gradients of earlier calls are
    /// discarded.
    pub fn backward(&mut self, root: Var) {
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(vec![1.0; self.nodes[root.0].value.len()]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let out = &nodes[i].value;
        let len = |v: &Var| nodes[v.0].value.len();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                let gm = Matrix { rows: out.rows, cols: out.cols, data: g.to_vec() };
                let ga = matmul(&gm, &transpose(bv));
                let gb = matmul(&transpose(av), &gm);
                add_into(Self::acc(grads, *a, len(a)), &ga.data);
                add_into(Self::acc(grads, *b, len(b)), &gb.data);
            }
            Op::Add(a, b) => {
                add_into(Self::acc(grads, *a, len(a)), g);
                add_into(Self::acc(grads, *b, len(b)), g);
            }
            Op::Sub(a, b) => {
                add_into(Self::acc(grads, *a, len(a)), g);
                let gb = Self::acc(grads, *b, len(b));
                for (o, v) in gb.iter_mut().zip(g) {
                    *o -= v;
                }
            }
            Op::AddRow(a, row) => {
                add_into(Self::acc(grads, *a, len(a)), g);
                let c = out.cols;
                let gr = Self::acc(grads, *row, c);
                for r in 0..out.rows {
                    for j in 0..c {
                        gr[j] += g[r * c + j];
                    }
                }
            }
            Op::Scale(a, s) => {
                let ga = Self::acc(grads, *a, len(a));
                for (o, v) in ga.iter_mut().zip(g) {
                    *o += v * s;
                }
            }
            Op::Gelu(a) => {
                let x = &nodes[a.0].value.data;
                let ga = Self::acc(grads, *a, x.len());
                for ((o, v), xv) in ga.iter_mut().zip(g).zip(x) {
                    *o += v * gelu_grad(*xv);
                }
            }
            Op::Sigmoid(a) => {
                let ga = Self::acc(grads, *a, out.len());
                for ((o, v), y) in ga.iter_mut().zip(g).zip(&out.data) {
                    *o += v * y * (1.0 - y);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let c = out.cols;
                let gam = &nodes[gamma.0].value.data;
                let mut gx = vec![0.0; out.len()];
                let mut gg = vec![0.0; c];
                let mut gbeta = vec![0.0; c];
                for r in 0..out.rows {
                    let dy = &g[r * c..(r + 1) * c];
                    let xh = &xhat[r * c..(r + 1) * c];
                    let mut mean_d = 0.0;
                    let mut mean_dx = 0.0;
                    for j in 0..c {
                        let d = dy[j] * gam[j];
                        mean_d += d;
                        mean_dx += d * xh[j];
                        gg[j] += dy[j] * xh[j];
                        gbeta[j] += dy[j];
                    }
                    mean_d /= c as f64;
                    mean_dx /= c as f64;
                    for j in 0..c {
                        let d = dy[j] * gam[j];
                        gx[r * c + j] = rstd[r] * (d - mean_d - xh[j] * mean_dx);
                    }
                }
                add_into(Self::acc(grads, *x, gx.len()), &gx);
                add_into(Self::acc(grads, *gamma, c), &gg);
                add_into(Self::acc(grads, *beta, c), &gbeta);
            }
            Op::Transpose(a) => {
                let gm = Matrix { rows: out.rows, cols: out.cols, data: g.to_vec() };
                add_into(Self::acc(grads, *a, len(a)), &transpose(&gm).data);
            }
            Op::SliceCols(a, start) => {
                let src_cols = nodes[a.0].value.cols;
                let ga = Self::acc(grads, *a, len(a));
                for r in 0..out.rows {
                    for j in 0..out.cols {
                        ga[r * src_cols + start + j] += g[r * out.cols + j];
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let pc = nodes[p.0].value.cols;
                    let gp = Self::acc(grads, *p, len(p));
                    for r in 0..out.rows {
                        for j in 0..pc {
                            gp[r * pc + j] += g[r * out.cols + off + j];
                        }
                    }
                    off += pc;
                }
            }
            Op::SliceRows(a, start) => {
                let c = out.cols;
                let ga = Self::acc(grads, *a, len(a));
                add_into(&mut ga[start * c..start * c + g.len()], g);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = len(p);
                    add_into(Self::acc(grads, *p, n), &g[off..off + n]);
                    off += n;
                }
            }
            Op::CausalSoftmax(a) => {
                let c = out.cols;
                let ga = Self::acc(grads, *a, out.len());
                for r in 0..out.rows {
                    let n = (r + 1).min(c);
                    let y = &out.data[r * c..r * c + n];
                    let dy = &g[r * c..r * c + n];
                    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        ga[r * c + j] += y[j] * (dy[j] - dot);
                    }
                }
            }
            Op::MeanRows(a) => {
                let x = &nodes[a.0].value;
                let n = x.rows as f64;
                let ga = Self::acc(grads, *a, x.len());
                for r in 0..x.rows {
                    for j in 0..x.cols {
                        ga[r * x.cols + j] += g[j] / n;
                    }
                }
            }
            Op::Im2Col { x, rows, cols } => {
                let xv = &nodes[x.0].value;
                let d = xv.cols;
                let cells = rows * cols;
                let gx = Self::acc(grads, *x, xv.len());
                for grid in 0..xv.rows / cells {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            let out_row = grid * cells + r * cols + c;
                            for k in 0..9 {
                                if let Some(src) = tap(r, c, k, *rows, *cols) {
                                    let from = out_row * 9 * d + k * d;
                                    let to = (grid * cells + src) * d;
                                    add_into(&mut gx[to..to + d], &g[from..from + d]);
                                }
                            }
                        }
                    }
                }
            }
            Op::Mse(a, b) => {
                let (x, y) = (&nodes[a.0].value.data, &nodes[b.0].value.data);
                let n = x.len() as f64;
                let diff: Vec<f64> = x.iter().zip(y).map(|(x, y)| 2.0 * (x - y) / n * g[0]).collect();
                add_into(Self::acc(grads, *a, x.len()), &diff);
                let gb = Self::acc(grads, *b, y.len());
                for (o, v) in gb.iter_mut().zip(&diff) {
                    *o -= v;
                }
            }
            Op::Cosine(a, b) => {
                let (x, y) = (&nodes[a.0].value, &nodes[b.0].value);
                let c = x.cols;
                let n = x.rows as f64;
                let mut gx = vec![0.0; x.len()];
                let mut gy = vec![0.0; y.len()];
                for r in 0..x.rows {
                    let (cos, na, nb) = cosine_row(x.row(r), y.row(r));
                    if na == 0.0 || nb == 0.0 {
                        continue;
                    }
                    for j in 0..c {
                        let (xa, yb) = (x.data[r * c + j], y.data[r * c + j]);
                        gx[r * c + j] = -(yb / (na * nb) - cos * xa / (na * na)) / n * g[0];
                        gy[r * c + j] = -(xa / (na * nb) - cos * yb / (nb * nb)) / n * g[0];
                    }
                }
                add_into(Self::acc(grads, *a, gx.len()), &gx);
                add_into(Self::acc(grads, *b, gy.len()), &gy);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let c = nodes[logits.0].value.cols;
                let n = targets.len().max(1) as f64;
                let gl = Self::acc(grads, *logits, probs.len());
                for (r, &t) in targets.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        gl[r * c + j] += (probs[r * c + j] - onehot) / n * g[0];
                    }
                }
            }
            Op::Fused { x, grad } => {
                let gx = Self::acc(grads, *x, grad.len());
                for (o, v) in gx.iter_mut().zip(grad) {
                    *o += v * g[0];
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// `(cos, |a|, |b|)`, cosine 0 when either norm is 0.
fn cosine_row(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return (0.0, na, nb);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb), na, nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix { rows: r, cols: c, data: (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect() }
    }

    /// Central-difference check of d(root)/d(leaf) for a tape builder.
    fn check(build: impl Fn(&mut Tape, &[Var]) -> Var, shapes: &[(usize, usize)]) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs: Vec<Matrix> = shapes.iter().map(|&(r, c)| rand_matrix(&mut rng, r, c)).collect();
        let eval = |inputs: &[Matrix]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = inputs.iter().map(|m| t.leaf(m.clone())).collect();
            let out = build(&mut t, &vs);
            (t, vs, out)
        };
        let (mut t, vs, out) = eval(&inputs);
        t.backward(out);
        let h = 1e-6;
        for (k, m) in inputs.iter().enumerate() {
            let g = t.grad(vs[k]).map(<[f64]>::to_vec).unwrap_or(vec![0.0; m.len()]);
            for (i, &gi) in g.iter().enumerate() {
                let mut plus = inputs.clone();
                plus[k].data[i] += h;
                let mut minus = inputs.clone();
                minus[k].data[i] -= h;
                let (tp, _, op) = eval(&plus);
                let (tm, _, om) = eval(&minus);
                let num = (tp.scalar_value(op) - tm.scalar_value(om)) / (2.0 * h);
                assert!((num - gi).abs() < 1e-6, "input {k}[{i}]: numeric {num} analytic {gi}");
            }
        }
    }

    #[test]
    fn matmul_bias_gelu() {
        check(
            |t, v| {
                let m = t.matmul(v[0], v[1]);
                let b = t.add_row(m, v[2]);
                let g = t.gelu(b);
                t.mse(g, v[3])
            },
            &[(3, 4), (4, 2), (1, 2), (3, 2)],
        );
    }

    #[test]
    fn layer_norm_grad() {
        check(
            |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2]);
                t.mse(y, v[3])
            },
            &[(3, 5), (1, 5), (1, 5), (3, 5)],
        );
    }

    #[test]
    fn attention_pieces() {
        check(
            |t, v| {
                let kt = t.transpose(v[1]);
                let s = t.matmul(v[0], kt);
                let s = t.scale(s, 0.5);
                let a = t.causal_softmax(s);
                let o = t.matmul(a, v[2]);
                let l = t.slice_cols(o, 1, 2);
                let r = t.slice_cols(o, 0, 1);
                let c = t.concat_cols(&[r, l]);
                let top = t.slice_rows(c, 0, 2);
                let bottom = t.slice_rows(c, 2, 2);
                let c = t.concat_rows(&[bottom, top]);
                let s = t.sigmoid(c);
                t.cosine_distance(s, v[3])
            },
            &[(4, 3), (4, 3), (4, 3), (4, 3)],
        );
    }

    #[test]
    fn conv_pool_xent() {
        check(
            |t, v| {
                let cols = t.im2col3x3(v[0], 2, 3);
                let y = t.matmul(cols, v[1]);
                let p = t.mean_rows(y);
                let st = t.concat_rows(&[p, y]);
                let ce = t.cross_entropy(st, &[0, 1, 2, 0, 1, 2, 1]);
                let d = t.sub(y, v[2]);
                let m = t.mse(d, v[2]);
                t.add(ce, m)
            },
            &[(6, 2), (18, 3), (6, 3)],
        );
    }

    #[test]
    fn causal_softmax_masks_future() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix { rows: 2, cols: 2, data: vec![1.0, 5.0, 1.0, 1.0] });
        let y = t.causal_softmax(x);
        assert_eq!(t.value(y).data, vec![1.0, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn fused_scales_by_upstream() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix { rows: 1, cols: 2, data: vec![1.0, 2.0] });
        let f = t.fused(x, 3.0, vec![0.5, -1.0]);
        let s = t.scale(f, 2.0);
        t.backward(s);
        assert_eq!(t.grad(x).unwrap(), &[1.0, -2.0]);
    }
}
