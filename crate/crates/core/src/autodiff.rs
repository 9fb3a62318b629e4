//! Dense row-major `f64` matrices and a reverse-mode tape over the handful of
//! operations the denoiser needs.

use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a · b`
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul inner dimensions");
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &av) in a.row(i).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(b.row(k)) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a · bᵀ`
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols, "matmul_nt inner dimensions");
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · b`
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows, b.rows, "matmul_tn inner dimensions");
    let mut out = Matrix::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let br = b.row(k);
        for (i, &av) in a.row(k).iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, bv) in orow.iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

pub const LAYER_NORM_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Tanh approximation.
pub fn gelu(x: f64) -> f64 {
    let k = (2.0 / PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let k = (2.0 / PI).sqrt();
    let t = (k * (x + GELU_C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddConst(Var),
    Scale(Var, f64),
    LayerNorm(Var, Vec<f64>),
    Softmax(Var),
    Silu(Var),
    Gelu(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Mse(Var, Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Records operations for one forward pass. Parameter leaves are created at
/// most once per tape and remembered by index.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    /// Leaf for parameter `index`, created on first use.
    pub fn param(&mut self, index: usize, value: &Matrix) -> Var {
        if self.params.len() <= index {
            self.params.resize(index + 1, None);
        }
        if let Some(v) = self.params[index] {
            return v;
        }
        let v = self.push(value.clone(), Op::Leaf);
        self.params[index] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let m = matmul(self.value(a), self.value(b));
        self.push(m, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let m = matmul_nt(self.value(a), self.value(b));
        self.push(m, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "add shapes");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let m = Matrix::from_vec(x.rows, x.cols, data);
        self.push(m, Op::Add(a, b))
    }

    /// Adds the `1×c` row `r` to every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (x, row) = (self.value(a), self.value(r));
        assert_eq!((1, x.cols), row.shape(), "add_row shapes");
        let mut m = x.clone();
        for chunk in m.data.chunks_exact_mut(x.cols) {
            for (v, b) in chunk.iter_mut().zip(&row.data) {
                *v += b;
            }
        }
        self.push(m, Op::AddRow(a, r))
    }

    /// Multiplies every row of `a` elementwise by the `1×c` row `r`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (x, row) = (self.value(a), self.value(r));
        assert_eq!((1, x.cols), row.shape(), "mul_row shapes");
        let mut m = x.clone();
        for chunk in m.data.chunks_exact_mut(x.cols) {
            for (v, b) in chunk.iter_mut().zip(&row.data) {
                *v *= b;
            }
        }
        self.push(m, Op::MulRow(a, r))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let mut m = self.value(a).clone();
        m.data.iter_mut().for_each(|v| *v += c);
        self.push(m, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut m = self.value(a).clone();
        m.data.iter_mut().for_each(|v| *v *= s);
        self.push(m, Op::Scale(a, s))
    }

    /// Row-wise normalization to zero mean and unit variance, no affine.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut m = x.clone();
        let mut inv = Vec::with_capacity(x.rows);
        for chunk in m.data.chunks_exact_mut(x.cols) {
            let n = chunk.len() as f64;
            let mean = chunk.iter().sum::<f64>() / n;
            let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            chunk.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv.push(is);
        }
        self.push(m, Op::LayerNorm(a, inv))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut m = x.clone();
        for chunk in m.data.chunks_exact_mut(x.cols) {
            let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in chunk.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            chunk.iter_mut().for_each(|v| *v /= sum);
        }
        self.push(m, Op::Softmax(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let mut m = self.value(a).clone();
        m.data.iter_mut().for_each(|v| *v = silu(*v));
        self.push(m, Op::Silu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut m = self.value(a).clone();
        m.data.iter_mut().for_each(|v| *v = gelu(*v));
        self.push(m, Op::Gelu(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(x.rows * len);
        for r in 0..x.rows {
            data.extend_from_slice(&x.row(r)[start..start + len]);
        }
        let m = Matrix::from_vec(x.rows, len, data);
        self.push(m, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|p| self.value(*p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                let x = self.value(*p);
                assert_eq!(x.rows, rows, "concat_cols rows");
                data.extend_from_slice(x.row(r));
            }
        }
        let m = Matrix::from_vec(rows, cols, data);
        self.push(m, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let x = self.value(*p);
            assert_eq!(x.cols, cols, "concat_rows cols");
            data.extend_from_slice(&x.data);
            rows += x.rows;
        }
        let m = Matrix::from_vec(rows, cols, data);
        self.push(m, Op::ConcatRows(parts.to_vec()))
    }

    /// Mean squared difference as a `1×1` matrix.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "mse shapes");
        let n = x.data.len() as f64;
        let s = x.data.iter().zip(&y.data).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n;
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::Mse(a, b))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
                Some(e) => e.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    acc(*a, matmul_nt(&g, self.value(*b)));
                    acc(*b, matmul_tn(self.value(*a), &g));
                }
                Op::MatMulNt(a, b) => {
                    acc(*a, matmul(&g, self.value(*b)));
                    acc(*b, matmul_tn(&g, self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddRow(a, r) => {
                    let mut dr = Matrix::zeros(1, g.cols);
                    for chunk in g.data.chunks_exact(g.cols) {
                        for (d, v) in dr.data.iter_mut().zip(chunk) {
                            *d += v;
                        }
                    }
                    acc(*r, dr);
                    acc(*a, g);
                }
                Op::MulRow(a, r) => {
                    let x = self.value(*a);
                    let row = self.value(*r);
                    let mut da = g.clone();
                    let mut dr = Matrix::zeros(1, g.cols);
                    for (k, chunk) in da.data.chunks_exact_mut(g.cols).enumerate() {
                        let xr = x.row(k);
                        for j in 0..g.cols {
                            dr.data[j] += chunk[j] * xr[j];
                            chunk[j] *= row.data[j];
                        }
                    }
                    acc(*a, da);
                    acc(*r, dr);
                }
                Op::AddConst(a) => acc(*a, g),
                Op::Scale(a, s) => {
                    let mut d = g;
                    d.data.iter_mut().for_each(|v| *v *= s);
                    acc(*a, d);
                }
                Op::LayerNorm(a, inv) => {
                    let y = &node.value;
                    let mut d = g;
                    let n = y.cols as f64;
                    for (k, chunk) in d.data.chunks_exact_mut(y.cols).enumerate() {
                        let yr = y.row(k);
                        let mg = chunk.iter().sum::<f64>() / n;
                        let mgy = chunk.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / n;
                        for (c, yv) in chunk.iter_mut().zip(yr) {
                            *c = inv[k] * (*c - mg - yv * mgy);
                        }
                    }
                    acc(*a, d);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut d = g;
                    for (k, chunk) in d.data.chunks_exact_mut(y.cols).enumerate() {
                        let yr = y.row(k);
                        let dot = chunk.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>();
                        for (c, yv) in chunk.iter_mut().zip(yr) {
                            *c = yv * (*c - dot);
                        }
                    }
                    acc(*a, d);
                }
                Op::Silu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (c, xv) in d.data.iter_mut().zip(&x.data) {
                        let s = sigmoid(*xv);
                        *c *= s * (1.0 + xv * (1.0 - s));
                    }
                    acc(*a, d);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut d = g;
                    for (c, xv) in d.data.iter_mut().zip(&x.data) {
                        *c *= gelu_grad(*xv);
                    }
                    acc(*a, d);
                }
                Op::SliceCols(a, start) => {
                    let x = self.value(*a);
                    let mut d = Matrix::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        d.data[r * x.cols + start..r * x.cols + start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let cols = self.value(*p).cols;
                        let mut d = Vec::with_capacity(g.rows * cols);
                        for r in 0..g.rows {
                            d.extend_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        acc(*p, Matrix::from_vec(g.rows, cols, d));
                        offset += cols;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let rows = self.value(*p).rows;
                        let d = g.data[offset * g.cols..(offset + rows) * g.cols].to_vec();
                        acc(*p, Matrix::from_vec(rows, g.cols, d));
                        offset += rows;
                    }
                }
                Op::Mse(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    let s = 2.0 * g.data[0] / x.data.len() as f64;
                    let da: Vec<f64> = x.data.iter().zip(&y.data).map(|(p, q)| s * (p - q)).collect();
                    let db = da.iter().map(|v| -v).collect();
                    acc(*a, Matrix::from_vec(x.rows, x.cols, da));
                    acc(*b, Matrix::from_vec(y.rows, y.cols, db));
                }
            }
        }
        Gradients { grads }
    }

    /// Parameter index to gradient, for every parameter leaf used on this tape.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(usize, Matrix)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                let g = grads.get(v)?.clone();
                Some((i, g))
            })
            .collect()
    }
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Builds a scalar from every op and compares each input gradient with
    /// central differences.
    fn check(build: impl Fn(&mut Tape, &[Var]) -> Var, inputs: Vec<Matrix>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss);
        let h = 1e-6;
        for (k, m) in inputs.iter().enumerate() {
            let g = grads.get(vars[k]).cloned().unwrap_or(Matrix::zeros(m.rows, m.cols));
            for idx in 0..m.data.len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, x)| {
                            let mut x = x.clone();
                            if j == k {
                                x.data[idx] += delta;
                            }
                            t.constant(x)
                        })
                        .collect();
                    let l = build(&mut t, &vs);
                    t.value(l).data[0]
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = g.data[idx];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs().max(an.abs())),
                    "input {k} entry {idx}: analytic {an} vs numeric {fd}"
                );
            }
        }
    }

    #[test]
    fn matmul_kernels_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 5);
        let c = matmul(&a, &b);
        let bt = Matrix::from_vec(
            5,
            4,
            (0..20).map(|i| b.data[(i % 4) * 5 + i / 4]).collect(),
        );
        assert!(matmul_nt(&a, &bt).data.iter().zip(&c.data).all(|(x, y)| (x - y).abs() < 1e-12));
        let at = Matrix::from_vec(4, 3, (0..12).map(|i| a.data[(i % 3) * 4 + i / 3]).collect());
        assert!(matmul_tn(&at, &b).data.iter().zip(&c.data).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn gradients_of_every_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = random(&mut rng, 3, 4);
        let t2 = target.clone();
        check(
            move |t, v| {
                let x = t.matmul(v[0], v[1]);
                let x = t.layer_norm(x);
                let x = t.mul_row(x, v[2]);
                let x = t.add_row(x, v[3]);
                let s = t.softmax_rows(x);
                let g = t.gelu(x);
                let x = t.add(s, g);
                let x = t.silu(x);
                let x = t.scale(x, 1.7);
                let x = t.add_const(x, 0.3);
                let a = t.slice_cols(x, 1, 2);
                let b = t.slice_cols(x, 0, 2);
                let x = t.concat_cols(&[a, b]);
                let y = t.matmul_nt(x, v[4]);
                let x = t.concat_rows(&[y, y]);
                let x = t.slice_cols(x, 0, 4);
                let tgt = t.constant(Matrix::from_vec(6, 4, [t2.data.clone(), t2.data.clone()].concat()));
                t.mse(x, tgt)
            },
            vec![
                random(&mut rng, 3, 5),
                random(&mut rng, 5, 4),
                random(&mut rng, 1, 4),
                random(&mut rng, 1, 4),
                random(&mut rng, 4, 4),
            ],
        );
    }

    #[test]
    fn repeated_param_leaf_accumulates() {
        let p = Matrix::from_vec(1, 2, vec![0.5, -1.0]);
        let mut tape = Tape::new();
        let a = tape.param(0, &p);
        let b = tape.param(0, &p);
        assert_eq!(a, b);
        let s = tape.add(a, b);
        let z = tape.constant(Matrix::zeros(1, 2));
        let l = tape.mse(s, z);
        let g = tape.backward(l);
        let pg = tape.param_grads(&g);
        // d/dp mean((2p)^2) = 4p
        assert_eq!(pg[0].1.data, vec![2.0, -4.0]);
    }

    #[test]
    fn activations_known_values() {
        assert_eq!(silu(0.0), 0.0);
        assert_eq!(gelu(0.0), 0.0);
        assert!((silu(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((gelu(1.0) - 0.841_191_990_607_477_3).abs() < 1e-12);
    }
}
