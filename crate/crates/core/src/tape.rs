//! Reverse-mode automatic differentiation over small batched tensors.
//!
//! A [`Tape`] is a define-by-run arena of `[rows, cols]` row-major buffers.
//! The primitive set is exactly what the inner-loop losses need: affine
//! layers, tanh/relu/swish, softmax/log-softmax, log, exp, square, clip,
//! min/max, Gaussian log-density (composed), and mean/sum reductions.
//! Anything else is rejected with [`Error::UnsupportedOp`] rather than
//! silently producing a zero gradient.
//!
//! The tape is generic over the float type: agents run in `f32`; the 64-bit
//! instantiation exists solely for gradient verification against finite
//! differences.

use num_traits::Float;

use crate::nn::NetworkSpec;
use crate::{Error, Result};

/// Float type usable on the tape. `f32` routes tanh through a vectorizable
/// Pade approximation (the hidden-layer hot path); `f64` keeps exact libm
/// tanh so gradient verification is clean.
pub trait TapeFloat: Float {
    fn act_tanh(self) -> Self;
}

impl TapeFloat for f32 {
    #[inline(always)]
    fn act_tanh(self) -> f32 {
        let x = self.clamp(-4.97, 4.97);
        let x2 = x * x;
        let p = x * (135135.0 + x2 * (17325.0 + x2 * (378.0 + x2)));
        let q = 135135.0 + x2 * (62370.0 + x2 * (3150.0 + x2 * 28.0));
        p / q
    }
}

impl TapeFloat for f64 {
    #[inline(always)]
    fn act_tanh(self) -> f64 {
        self.tanh()
    }
}

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Id(usize);

#[derive(Debug, Clone, Copy)]
enum Unary<F> {
    Tanh,
    Relu,
    Swish,
    Exp,
    Log,
    Square,
    Neg,
    Clip(F, F),
    Scale(F),
    AddConst(F),
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Min,
    Max,
}

#[derive(Debug, Clone, Copy)]
enum Op<F> {
    Leaf,
    Affine { x: Id, params: Id, offset: usize, fan_in: usize, fan_out: usize },
    Unary { x: Id, kind: Unary<F> },
    Binary { a: Id, b: Id, kind: Binary },
    Softmax { x: Id },
    LogSoftmax { x: Id },
    RowSum { x: Id },
    SumAll { x: Id },
    MeanAll { x: Id },
    ConcatCols { a: Id, b: Id },
    SliceCols { x: Id, start: usize },
    RepeatRows { x: Id },
    MulBcastCol { col: Id, x: Id },
}

struct Node<F> {
    op: Op<F>,
    rows: usize,
    cols: usize,
    value: Vec<F>,
    requires_grad: bool,
}

/// Reverse-mode tape. Values are computed eagerly on construction; a single
/// [`Tape::backward`] call fills adjoints for every differentiable leaf.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: TapeFloat> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: TapeFloat> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op<F>, rows: usize, cols: usize, value: Vec<F>, rg: bool) -> Id {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { op, rows, cols, value, requires_grad: rg });
        Id(self.nodes.len() - 1)
    }

    pub fn value(&self, id: Id) -> &[F] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: Id) -> (usize, usize) {
        (self.nodes[id.0].rows, self.nodes[id.0].cols)
    }

    pub fn scalar_value(&self, id: Id) -> F {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    /// Non-differentiable input buffer.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<F>) -> Id {
        self.push(Op::Leaf, rows, cols, data, false)
    }

    /// Differentiable leaf; its adjoint is available after `backward`.
    pub fn param(&mut self, rows: usize, cols: usize, data: Vec<F>) -> Id {
        self.push(Op::Leaf, rows, cols, data, true)
    }

    fn rg(&self, id: Id) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Affine layer `y = x W^T + b` with weights and bias read from the flat
    /// `params` leaf at `offset` ([`crate::nn`] layout).
    pub fn affine(&mut self, x: Id, params: Id, offset: usize, fan_in: usize, fan_out: usize) -> Id {
        let (rows, cols) = self.shape(x);
        assert_eq!(cols, fan_in, "affine input width mismatch");
        assert!(
            offset + (fan_in + 1) * fan_out <= self.nodes[params.0].value.len(),
            "affine params out of range"
        );
        let mut value = vec![F::zero(); rows * fan_out];
        {
            let xs = &self.nodes[x.0].value;
            let ps = &self.nodes[params.0].value;
            let w = &ps[offset..offset + fan_in * fan_out];
            let b = &ps[offset + fan_in * fan_out..offset + (fan_in + 1) * fan_out];
            // Transposed weights turn the row kernel into independent saxpy
            // lanes over fan_out, which vectorizes; the transpose cost is
            // amortized over the batch.
            let mut wt = vec![F::zero(); fan_in * fan_out];
            for o in 0..fan_out {
                for i in 0..fan_in {
                    wt[i * fan_out + o] = w[o * fan_in + i];
                }
            }
            for r in 0..rows {
                let xrow = &xs[r * fan_in..(r + 1) * fan_in];
                let yrow = &mut value[r * fan_out..(r + 1) * fan_out];
                yrow.copy_from_slice(b);
                for i in 0..fan_in {
                    let xv = xrow[i];
                    let wrow = &wt[i * fan_out..(i + 1) * fan_out];
                    for o in 0..fan_out {
                        yrow[o] = yrow[o] + xv * wrow[o];
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(params);
        self.push(Op::Affine { x, params, offset, fan_in, fan_out }, rows, fan_out, value, rg)
    }

    /// Full MLP forward per `spec`, parameters starting at offset 0 of the
    /// `params` leaf. Hidden layers use the spec activation; output is linear.
    pub fn mlp(&mut self, spec: &NetworkSpec, params: Id, x: Id) -> Id {
        let dims = spec.layer_dims();
        let n = dims.len();
        let mut h = x;
        let mut offset = 0;
        for (l, (fan_in, fan_out)) in dims.into_iter().enumerate() {
            h = self.affine(h, params, offset, fan_in, fan_out);
            offset += (fan_in + 1) * fan_out;
            if l + 1 < n {
                h = match spec.activation {
                    crate::nn::Activation::Tanh => self.tanh(h),
                    crate::nn::Activation::Relu => self.relu(h),
                    crate::nn::Activation::Swish => self.swish(h),
                };
            }
        }
        h
    }

    fn unary(&mut self, x: Id, kind: Unary<F>) -> Id {
        let (rows, cols) = self.shape(x);
        let value: Vec<F> = self.nodes[x.0]
            .value
            .iter()
            .map(|&v| match kind {
                Unary::Tanh => v.act_tanh(),
                Unary::Relu => {
                    if v > F::zero() {
                        v
                    } else {
                        F::zero()
                    }
                }
                Unary::Swish => v / (F::one() + (-v).exp()),
                Unary::Exp => v.exp(),
                Unary::Log => v.ln(),
                Unary::Square => v * v,
                Unary::Neg => -v,
                Unary::Clip(lo, hi) => v.max(lo).min(hi),
                Unary::Scale(c) => v * c,
                Unary::AddConst(c) => v + c,
            })
            .collect();
        let rg = self.rg(x);
        self.push(Op::Unary { x, kind }, rows, cols, value, rg)
    }

    pub fn tanh(&mut self, x: Id) -> Id {
        self.unary(x, Unary::Tanh)
    }
    pub fn relu(&mut self, x: Id) -> Id {
        self.unary(x, Unary::Relu)
    }
    pub fn swish(&mut self, x: Id) -> Id {
        self.unary(x, Unary::Swish)
    }
    pub fn exp(&mut self, x: Id) -> Id {
        self.unary(x, Unary::Exp)
    }
    pub fn log(&mut self, x: Id) -> Id {
        self.unary(x, Unary::Log)
    }
    pub fn square(&mut self, x: Id) -> Id {
        self.unary(x, Unary::Square)
    }
    pub fn neg(&mut self, x: Id) -> Id {
        self.unary(x, Unary::Neg)
    }
    pub fn clip(&mut self, x: Id, lo: F, hi: F) -> Id {
        self.unary(x, Unary::Clip(lo, hi))
    }
    pub fn scale(&mut self, x: Id, c: F) -> Id {
        self.unary(x, Unary::Scale(c))
    }
    pub fn add_const(&mut self, x: Id, c: F) -> Id {
        self.unary(x, Unary::AddConst(c))
    }

    fn binary(&mut self, a: Id, b: Id, kind: Binary) -> Id {
        let (rows, cols) = self.shape(a);
        assert_eq!(self.shape(b), (rows, cols), "binary op shape mismatch");
        let value: Vec<F> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(&x, &y)| match kind {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Min => {
                    if x <= y {
                        x
                    } else {
                        y
                    }
                }
                Binary::Max => {
                    if x >= y {
                        x
                    } else {
                        y
                    }
                }
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::Binary { a, b, kind }, rows, cols, value, rg)
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        self.binary(a, b, Binary::Add)
    }
    pub fn sub(&mut self, a: Id, b: Id) -> Id {
        self.binary(a, b, Binary::Sub)
    }
    pub fn mul(&mut self, a: Id, b: Id) -> Id {
        self.binary(a, b, Binary::Mul)
    }
    pub fn min(&mut self, a: Id, b: Id) -> Id {
        self.binary(a, b, Binary::Min)
    }
    pub fn max(&mut self, a: Id, b: Id) -> Id {
        self.binary(a, b, Binary::Max)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Id) -> Id {
        let (rows, cols) = self.shape(x);
        let mut value = vec![F::zero(); rows * cols];
        for r in 0..rows {
            let row = &self.nodes[x.0].value[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - m).exp();
                value[r * cols + j] = e;
                sum = sum + e;
            }
            for j in 0..cols {
                value[r * cols + j] = value[r * cols + j] / sum;
            }
        }
        let rg = self.rg(x);
        self.push(Op::Softmax { x }, rows, cols, value, rg)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, x: Id) -> Id {
        let (rows, cols) = self.shape(x);
        let mut value = vec![F::zero(); rows * cols];
        for r in 0..rows {
            let row = &self.nodes[x.0].value[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for &v in row {
                sum = sum + (v - m).exp();
            }
            let lse = m + sum.ln();
            for (j, &v) in row.iter().enumerate() {
                value[r * cols + j] = v - lse;
            }
        }
        let rg = self.rg(x);
        self.push(Op::LogSoftmax { x }, rows, cols, value, rg)
    }

    /// `[B, k] -> [B, 1]` sum over columns.
    pub fn row_sum(&mut self, x: Id) -> Id {
        let (rows, cols) = self.shape(x);
        let mut value = vec![F::zero(); rows];
        for r in 0..rows {
            let row = &self.nodes[x.0].value[r * cols..(r + 1) * cols];
            value[r] = row.iter().fold(F::zero(), |a, &b| a + b);
        }
        let rg = self.rg(x);
        self.push(Op::RowSum { x }, rows, 1, value, rg)
    }

    /// Sum of every element, producing a `[1, 1]` scalar.
    pub fn sum_all(&mut self, x: Id) -> Id {
        let s = self.nodes[x.0].value.iter().fold(F::zero(), |a, &b| a + b);
        let rg = self.rg(x);
        self.push(Op::SumAll { x }, 1, 1, vec![s], rg)
    }

    /// Mean of every element, producing a `[1, 1]` scalar.
    pub fn mean_all(&mut self, x: Id) -> Id {
        let n = self.nodes[x.0].value.len();
        let s = self.nodes[x.0].value.iter().fold(F::zero(), |a, &b| a + b);
        let mean = s / F::from(n).unwrap();
        let rg = self.rg(x);
        self.push(Op::MeanAll { x }, 1, 1, vec![mean], rg)
    }

    /// Column-wise concatenation `[B, m] ++ [B, n] -> [B, m+n]`.
    pub fn concat_cols(&mut self, a: Id, b: Id) -> Id {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        assert_eq!(ra, rb, "concat_cols row mismatch");
        let mut value = vec![F::zero(); ra * (ca + cb)];
        for r in 0..ra {
            value[r * (ca + cb)..r * (ca + cb) + ca]
                .copy_from_slice(&self.nodes[a.0].value[r * ca..(r + 1) * ca]);
            value[r * (ca + cb) + ca..(r + 1) * (ca + cb)]
                .copy_from_slice(&self.nodes[b.0].value[r * cb..(r + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Op::ConcatCols { a, b }, ra, ca + cb, value, rg)
    }

    /// Column slice `[B, n] -> [B, len]` starting at column `start`.
    pub fn slice_cols(&mut self, x: Id, start: usize, len: usize) -> Id {
        let (rows, cols) = self.shape(x);
        assert!(start + len <= cols, "slice_cols out of range");
        let mut value = Vec::with_capacity(rows * len);
        for r in 0..rows {
            value.extend_from_slice(&self.nodes[x.0].value[r * cols + start..r * cols + start + len]);
        }
        let rg = self.rg(x);
        self.push(Op::SliceCols { x, start }, rows, len, value, rg)
    }

    /// Tiles a `[1, k]` row to `[rows, k]`; backward sums over rows.
    pub fn repeat_rows(&mut self, x: Id, rows: usize) -> Id {
        let (r, cols) = self.shape(x);
        assert_eq!(r, 1, "repeat_rows expects a single-row input");
        let mut value = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            value.extend_from_slice(&self.nodes[x.0].value);
        }
        let rg = self.rg(x);
        self.push(Op::RepeatRows { x }, rows, cols, value, rg)
    }

    /// Broadcast multiply: `col [B,1] * x [B,k] -> [B,k]`.
    pub fn mul_bcast_col(&mut self, col: Id, x: Id) -> Id {
        let (rc, cc) = self.shape(col);
        let (rx, cx) = self.shape(x);
        assert_eq!(cc, 1, "mul_bcast_col expects a column");
        assert_eq!(rc, rx, "mul_bcast_col row mismatch");
        let mut value = vec![F::zero(); rx * cx];
        for r in 0..rx {
            let c = self.nodes[col.0].value[r];
            for j in 0..cx {
                value[r * cx + j] = c * self.nodes[x.0].value[r * cx + j];
            }
        }
        let rg = self.rg(col) || self.rg(x);
        self.push(Op::MulBcastCol { col, x }, rx, cx, value, rg)
    }

    /// Diagonal-Gaussian log-density, summed across dimensions to `[B, 1]`:
    /// `sum_j -0.5 ((x_j - mean_j)/sigma_j)^2 - log_std_j - 0.5 log(2 pi)`,
    /// with `sigma = exp(log_std)`. Composed from supported primitives so the
    /// gradient flows into `x`, `mean`, and `log_std` alike.
    pub fn gaussian_log_density(&mut self, x: Id, mean: Id, log_std: Id) -> Id {
        let half_log_2pi = F::from(0.5 * (2.0 * std::f64::consts::PI).ln()).unwrap();
        let d = self.sub(x, mean);
        let neg_ls = self.neg(log_std);
        let inv_sigma = self.exp(neg_ls);
        let z = self.mul(d, inv_sigma);
        let z2 = self.square(z);
        let quad = self.scale(z2, F::from(-0.5).unwrap());
        let t = self.sub(quad, log_std);
        let per_dim = self.add_const(t, -half_log_2pi);
        self.row_sum(per_dim)
    }

    /// Builds a unary op by name; unknown names are an explicit error. This is
    /// the dynamic surface used when compositions are assembled from data.
    pub fn apply_named(&mut self, name: &str, x: Id) -> Result<Id> {
        Ok(match name {
            "tanh" => self.tanh(x),
            "relu" => self.relu(x),
            "swish" => self.swish(x),
            "exp" => self.exp(x),
            "log" => self.log(x),
            "square" => self.square(x),
            "neg" => self.neg(x),
            "softmax" => self.softmax(x),
            "log_softmax" => self.log_softmax(x),
            "row_sum" => self.row_sum(x),
            "sum" => self.sum_all(x),
            "mean" => self.mean_all(x),
            other => return Err(Error::UnsupportedOp(format!("no primitive named '{other}'"))),
        })
    }

    /// Reverse pass from a scalar `loss` node. Returns per-node adjoints for
    /// differentiable leaves; query with [`Grads::get`].
    pub fn backward(&mut self, loss: Id) -> Result<Grads<F>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract("backward requires a scalar loss node".into()));
        }
        let n = self.nodes.len();
        let mut adj: Vec<Option<Vec<F>>> = (0..n).map(|_| None).collect();
        adj[loss.0] = Some(vec![F::one()]);

        macro_rules! ensure {
            ($id:expr) => {{
                let node = &self.nodes[$id.0];
                let len = node.value.len();
                adj[$id.0].get_or_insert_with(|| vec![F::zero(); len])
            }};
        }

        for idx in (0..=loss.0).rev() {
            if adj[idx].is_none() || !self.nodes[idx].requires_grad {
                continue;
            }
            let dy = adj[idx].take().unwrap();
            let op = self.nodes[idx].op;
            match op {
                Op::Leaf => {
                    adj[idx] = Some(dy);
                    continue;
                }
                Op::Affine { x, params, offset, fan_in, fan_out } => {
                    let rows = self.nodes[x.0].rows;
                    if self.rg(params) {
                        // dw[o,i] += sum_b dy[b,o] x[b,i]; db[o] += sum_b dy[b,o]
                        let xs = &self.nodes[x.0].value;
                        let pa = ensure!(params);
                        let (wgrad, rest) =
                            pa[offset..offset + (fan_in + 1) * fan_out].split_at_mut(fan_in * fan_out);
                        for r in 0..rows {
                            let dyr = &dy[r * fan_out..(r + 1) * fan_out];
                            let xr = &xs[r * fan_in..(r + 1) * fan_in];
                            for o in 0..fan_out {
                                let g = dyr[o];
                                let wrow = &mut wgrad[o * fan_in..(o + 1) * fan_in];
                                for i in 0..fan_in {
                                    wrow[i] = wrow[i] + g * xr[i];
                                }
                                rest[o] = rest[o] + g;
                            }
                        }
                    }
                    if self.rg(x) {
                        let ps = &self.nodes[params.0].value;
                        let dx = ensure!(x);
                        let w = &ps[offset..offset + fan_in * fan_out];
                        for r in 0..rows {
                            let dyr = &dy[r * fan_out..(r + 1) * fan_out];
                            let dxr = &mut dx[r * fan_in..(r + 1) * fan_in];
                            for o in 0..fan_out {
                                let g = dyr[o];
                                let wrow = &w[o * fan_in..(o + 1) * fan_in];
                                for i in 0..fan_in {
                                    dxr[i] = dxr[i] + g * wrow[i];
                                }
                            }
                        }
                    }
                }
                Op::Unary { x, kind } => {
                    if self.rg(x) {
                        let xv = &self.nodes[x.0].value;
                        let yv = &self.nodes[idx].value;
                        let dx = ensure!(x);
                        for i in 0..dy.len() {
                            let v = xv[i];
                            let d = match kind {
                                // reuse the stored outputs: tanh' = 1 - y^2, exp' = y
                                Unary::Tanh => {
                                    let t = yv[i];
                                    F::one() - t * t
                                }
                                Unary::Relu => {
                                    if v > F::zero() {
                                        F::one()
                                    } else {
                                        F::zero()
                                    }
                                }
                                Unary::Swish => {
                                    let s = F::one() / (F::one() + (-v).exp());
                                    s + v * s * (F::one() - s)
                                }
                                Unary::Exp => yv[i],
                                Unary::Log => F::one() / v,
                                Unary::Square => v + v,
                                Unary::Neg => -F::one(),
                                Unary::Clip(lo, hi) => {
                                    if v >= lo && v <= hi {
                                        F::one()
                                    } else {
                                        F::zero()
                                    }
                                }
                                Unary::Scale(c) => c,
                                Unary::AddConst(_) => F::one(),
                            };
                            dx[i] = dx[i] + dy[i] * d;
                        }
                    }
                }
                Op::Binary { a, b, kind } => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    if self.rg(a) {
                        let da = ensure!(a);
                        for i in 0..dy.len() {
                            let d = match kind {
                                Binary::Add | Binary::Sub => F::one(),
                                Binary::Mul => bv[i],
                                Binary::Min => {
                                    if av[i] <= bv[i] {
                                        F::one()
                                    } else {
                                        F::zero()
                                    }
                                }
                                Binary::Max => {
                                    if av[i] >= bv[i] {
                                        F::one()
                                    } else {
                                        F::zero()
                                    }
                                }
                            };
                            da[i] = da[i] + dy[i] * d;
                        }
                    }
                    if self.rg(b) {
                        let db = ensure!(b);
                        for i in 0..dy.len() {
                            let d = match kind {
                                Binary::Add => F::one(),
                                Binary::Sub => -F::one(),
                                Binary::Mul => av[i],
                                Binary::Min => {
                                    if av[i] <= bv[i] {
                                        F::zero()
                                    } else {
                                        F::one()
                                    }
                                }
                                Binary::Max => {
                                    if av[i] >= bv[i] {
                                        F::zero()
                                    } else {
                                        F::one()
                                    }
                                }
                            };
                            db[i] = db[i] + dy[i] * d;
                        }
                    }
                }
                Op::Softmax { x } => {
                    if self.rg(x) {
                        let rows = self.nodes[idx].rows;
                        let cols = self.nodes[idx].cols;
                        let yv = &self.nodes[idx].value;
                        let dx = ensure!(x);
                        // dx = y * (dy - sum_j dy_j y_j)
                        for r in 0..rows {
                            let y = &yv[r * cols..(r + 1) * cols];
                            let g = &dy[r * cols..(r + 1) * cols];
                            let dot =
                                y.iter().zip(g).fold(F::zero(), |acc, (&yj, &gj)| acc + yj * gj);
                            for j in 0..cols {
                                dx[r * cols + j] = dx[r * cols + j] + y[j] * (g[j] - dot);
                            }
                        }
                    }
                }
                Op::LogSoftmax { x } => {
                    if self.rg(x) {
                        let rows = self.nodes[idx].rows;
                        let cols = self.nodes[idx].cols;
                        let yv = &self.nodes[idx].value;
                        let dx = ensure!(x);
                        // dx = dy - softmax(x) * sum_j dy_j
                        for r in 0..rows {
                            let y = &yv[r * cols..(r + 1) * cols];
                            let g = &dy[r * cols..(r + 1) * cols];
                            let gsum = g.iter().fold(F::zero(), |a, &b| a + b);
                            for j in 0..cols {
                                dx[r * cols + j] = dx[r * cols + j] + g[j] - y[j].exp() * gsum;
                            }
                        }
                    }
                }
                Op::RowSum { x } => {
                    if self.rg(x) {
                        let cols = self.nodes[x.0].cols;
                        let dx = ensure!(x);
                        for r in 0..dy.len() {
                            for j in 0..cols {
                                dx[r * cols + j] = dx[r * cols + j] + dy[r];
                            }
                        }
                    }
                }
                Op::SumAll { x } => {
                    if self.rg(x) {
                        let dx = ensure!(x);
                        for v in dx.iter_mut() {
                            *v = *v + dy[0];
                        }
                    }
                }
                Op::MeanAll { x } => {
                    if self.rg(x) {
                        let n = self.nodes[x.0].value.len();
                        let scale = dy[0] / F::from(n).unwrap();
                        let dx = ensure!(x);
                        for v in dx.iter_mut() {
                            *v = *v + scale;
                        }
                    }
                }
                Op::ConcatCols { a, b } => {
                    let ca = self.nodes[a.0].cols;
                    let cb = self.nodes[b.0].cols;
                    let rows = self.nodes[idx].rows;
                    if self.rg(a) {
                        let da = ensure!(a);
                        for r in 0..rows {
                            for j in 0..ca {
                                da[r * ca + j] = da[r * ca + j] + dy[r * (ca + cb) + j];
                            }
                        }
                    }
                    if self.rg(b) {
                        let db = ensure!(b);
                        for r in 0..rows {
                            for j in 0..cb {
                                db[r * cb + j] = db[r * cb + j] + dy[r * (ca + cb) + ca + j];
                            }
                        }
                    }
                }
                Op::SliceCols { x, start } => {
                    if self.rg(x) {
                        let xcols = self.nodes[x.0].cols;
                        let rows = self.nodes[idx].rows;
                        let cols = self.nodes[idx].cols;
                        let dx = ensure!(x);
                        for r in 0..rows {
                            for j in 0..cols {
                                dx[r * xcols + start + j] = dx[r * xcols + start + j] + dy[r * cols + j];
                            }
                        }
                    }
                }
                Op::RepeatRows { x } => {
                    if self.rg(x) {
                        let cols = self.nodes[x.0].cols;
                        let rows = self.nodes[idx].rows;
                        let dx = ensure!(x);
                        for r in 0..rows {
                            for j in 0..cols {
                                dx[j] = dx[j] + dy[r * cols + j];
                            }
                        }
                    }
                }
                Op::MulBcastCol { col, x } => {
                    let cols = self.nodes[x.0].cols;
                    let rows = self.nodes[idx].rows;
                    let cv = &self.nodes[col.0].value;
                    let xv = &self.nodes[x.0].value;
                    if self.rg(col) {
                        let dc = ensure!(col);
                        for r in 0..rows {
                            let mut acc = F::zero();
                            for j in 0..cols {
                                acc = acc + dy[r * cols + j] * xv[r * cols + j];
                            }
                            dc[r] = dc[r] + acc;
                        }
                    }
                    if self.rg(x) {
                        let dx = ensure!(x);
                        for r in 0..rows {
                            for j in 0..cols {
                                dx[r * cols + j] = dx[r * cols + j] + dy[r * cols + j] * cv[r];
                            }
                        }
                    }
                }
            }
        }
        Ok(Grads { adj })
    }
}

/// Adjoints produced by [`Tape::backward`].
pub struct Grads<F> {
    adj: Vec<Option<Vec<F>>>,
}

impl<F: TapeFloat> Grads<F> {
    /// Gradient buffer of a leaf; zeros if the leaf was never reached.
    pub fn get(&self, id: Id) -> Option<&[F]> {
        self.adj[id.0].as_deref()
    }

    pub fn take(&mut self, id: Id) -> Option<Vec<F>> {
        self.adj[id.0].take()
    }
}

/// Gradient of a scalar loss with respect to a flat parameter vector.
///
/// `build` receives the tape and the parameter leaf, and must return a scalar
/// loss node composed from the tape's primitives.
pub fn gradient<F: TapeFloat>(
    params: &[F],
    build: impl FnOnce(&mut Tape<F>, Id) -> Result<Id>,
) -> Result<Vec<F>> {
    let mut tape = Tape::new();
    let p = tape.param(1, params.len(), params.to_vec());
    let loss = build(&mut tape, p)?;
    let mut grads = tape.backward(loss)?;
    Ok(grads.take(p).unwrap_or_else(|| vec![F::zero(); params.len()]))
}
