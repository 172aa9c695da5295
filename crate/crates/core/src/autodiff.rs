//! Reverse-mode differentiation over a recorded operation tape.
//!
//! A [`Graph`] borrows a [`ParamStore`] and records every operation applied
//! to its [`Var`] handles. [`Graph::backward`] replays the tape in reverse
//! from a scalar and returns gradients for parameters marked trainable and
//! for inputs created with [`Graph::input_with_grad`]. Nodes that cannot
//! reach a gradient-carrying leaf are skipped entirely, so frozen weights
//! cost no weight-gradient work.
//!
//! A graph built with [`Graph::inference`] keeps no backward state.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::kernels::{self, AttnDims};
use crate::params::{ParamId, ParamStore};
use crate::real::Strides;
use crate::{Real, Tensor};

const RMS_EPS: f64 = 1e-6;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

/// Per-row rotation angles for rotary embeddings: `half` cos/sin pairs per
/// row, shared by all heads.
#[derive(Debug, Clone, PartialEq)]
pub struct RotaryAngles<T> {
    pub half: usize,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
}

impl<T: Real> RotaryAngles<T> {
    pub fn rows(&self) -> usize {
        self.cos.len().checked_div(self.half).unwrap_or(0)
    }
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize, batch: usize, shared_b: bool },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddRow { a: Var, row: Var },
    MulRow { a: Var, row: Var },
    Scale { a: Var, factor: T },
    AddScalar { a: Var },
    Silu { a: Var },
    RmsNorm { x: Var, gain: Var, group: usize, inv: Vec<T> },
    Softmax { a: Var },
    Attention { q: Var, k: Var, v: Var, dims: AttnDims, scale: T, probs: Vec<T> },
    Rotary { a: Var, angles: Arc<RotaryAngles<T>>, heads: usize, head_dim: usize },
    Reshape { a: Var },
    ConcatRows { parts: Vec<Var> },
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    Mean { a: Var },
    MeanRows { a: Var },
    Mse { a: Var, b: Var },
    Gather { table: Var, ids: Vec<usize> },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
#[derive(Debug, Clone, Default)]
pub struct Gradients<T> {
    leaves: BTreeMap<Var, Tensor<T>>,
    params: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of an input created with [`Graph::input_with_grad`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(&id, t)| (id, t))
    }

    pub fn into_params(self) -> BTreeMap<ParamId, Tensor<T>> {
        self.params
    }
}

pub struct Graph<'p, T: Real> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    record: bool,
    fully_masked_rows: usize,
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        bail!(Shape, "{}: shapes {:?} and {:?} differ", what, a.shape(), b.shape());
    }
    Ok(())
}

fn tensor<T: Real>(shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
    Tensor::new(shape, data).expect("internal shape bookkeeping")
}

impl<'p, T: Real> Graph<'p, T> {
    /// A recording graph; backward is available.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph { params, nodes: Vec::new(), record: true, fully_masked_rows: 0 }
    }

    /// A forward-only graph: nothing requires gradients and no backward
    /// state is kept.
    pub fn inference(params: &'p ParamStore<T>) -> Self {
        Graph { params, nodes: Vec::new(), record: false, fully_masked_rows: 0 }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Softmax rows (including attention rows) that had every entry masked.
    pub fn fully_masked_rows(&self) -> usize {
        self.fully_masked_rows
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = self.record && inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value: Value::Owned(value), op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn input_with_grad(&mut self, value: Tensor<T>) -> Var {
        let requires_grad = self.record;
        self.nodes.push(Node { value: Value::Owned(value), op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let requires_grad = self.record && self.params.entry(id).trainable;
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param(id), requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.params.require(name)?;
        Ok(self.param(id))
    }

    /// Matrix product over the last two axes. Leading axes are batch axes;
    /// a rank-2 right operand is shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            bail!(Shape, "matmul needs rank >= 2 operands, got {:?} and {:?}", sa, sb);
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            bail!(Shape, "matmul inner dims differ: {:?} x {:?}", sa, sb);
        }
        let lead = &sa[..sa.len() - 2];
        let shared_b = sb.len() == 2;
        if !shared_b && sb[..sb.len() - 2] != *lead {
            bail!(Shape, "matmul batch dims differ: {:?} x {:?}", sa, sb);
        }
        let batch: usize = lead.iter().product();
        let mut out = vec![T::zero(); batch * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for bi in 0..batch {
                let boff = if shared_b { 0 } else { bi * k * n };
                T::gemm(
                    m,
                    k,
                    n,
                    T::one(),
                    &av[bi * m * k..],
                    Strides::row_major(k),
                    &bv[boff..],
                    Strides::row_major(n),
                    T::zero(),
                    &mut out[bi * m * n..],
                    Strides::row_major(n),
                );
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        Ok(self.push(tensor(shape, out), Op::MatMul { a, b, m, k, n, batch, shared_b }, &[a, b]))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, what)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(tensor(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub { a, b }, &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_with(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul { a, b }, &[a, b]))
    }

    fn row_broadcast(&self, a: Var, row: Var, what: &str) -> Result<usize> {
        let cols = self.value(a).as_matrix().1;
        let n = self.value(row).numel();
        if n != cols {
            bail!(Shape, "{}: row of {} elements against {:?}", what, n, self.shape(a));
        }
        Ok(cols)
    }

    /// Adds a row vector (any shape with `last_dim` elements) to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let cols = self.row_broadcast(a, row, "add_row")?;
        let ta = self.value(a);
        let r = self.value(row).data();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(cols.max(1)) {
            chunk.iter_mut().zip(r).for_each(|(x, &y)| *x += y);
        }
        let t = tensor(ta.shape().to_vec(), data);
        Ok(self.push(t, Op::AddRow { a, row }, &[a, row]))
    }

    /// Multiplies every row elementwise by a row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let cols = self.row_broadcast(a, row, "mul_row")?;
        let ta = self.value(a);
        let r = self.value(row).data();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(cols.max(1)) {
            chunk.iter_mut().zip(r).for_each(|(x, &y)| *x *= y);
        }
        let t = tensor(ta.shape().to_vec(), data);
        Ok(self.push(t, Op::MulRow { a, row }, &[a, row]))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let t = self.value(a).map(|x| x * factor);
        self.push(t, Op::Scale { a, factor }, &[a])
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::AddScalar { a }, &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(kernels::silu);
        self.push(t, Op::Silu { a }, &[a])
    }

    /// RMS normalization over contiguous groups of the last axis, scaled by
    /// a `group`-element gain. `group == last_dim` is plain RMSNorm.
    pub fn rmsnorm(&mut self, x: Var, gain: Var, group: usize) -> Result<Var> {
        let cols = self.value(x).as_matrix().1;
        if group == 0 || !cols.is_multiple_of(group) || self.value(gain).numel() != group {
            bail!(Shape, "rmsnorm: group {} with gain {:?} over rows of {}", group, self.shape(gain), cols);
        }
        let (out, inv) = kernels::rmsnorm_groups(self.value(x).data(), self.value(gain).data(), group, T::from_f64(RMS_EPS));
        let t = tensor(self.shape(x).to_vec(), out);
        Ok(self.push(t, Op::RmsNorm { x, gain, group, inv }, &[x, gain]))
    }

    /// Softmax over the last axis with an optional additive mask laid out
    /// like the input (`0` or `-inf` entries).
    pub fn softmax(&mut self, a: Var, mask: Option<&[f32]>) -> Result<Var> {
        let ta = self.value(a);
        let (_, cols) = ta.as_matrix();
        if let Some(m) = mask {
            if m.len() != ta.numel() {
                bail!(Shape, "softmax mask has {} entries for input {:?}", m.len(), ta.shape());
            }
        }
        let mut data = ta.data().to_vec();
        let shape = ta.shape().to_vec();
        self.fully_masked_rows += kernels::softmax_rows(&mut data, cols, mask);
        Ok(self.push(tensor(shape, data), Op::Softmax { a }, &[a]))
    }

    /// Multi-head scaled dot-product attention. `q` is `[q_len, heads *
    /// head_dim]`, `k` and `v` are `[k_len, heads * head_dim]`; the optional
    /// additive mask is `[q_len, k_len]`, shared by all heads.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, mask: Option<&[f32]>) -> Result<Var> {
        let (q_len, width) = self.value(q).as_matrix();
        let (k_len, kw) = self.value(k).as_matrix();
        let (v_len, vw) = self.value(v).as_matrix();
        if heads == 0 || width % heads != 0 || kw != width || vw != width || v_len != k_len {
            bail!(Shape, "attention: q {:?}, k {:?}, v {:?} with {} heads", self.shape(q), self.shape(k), self.shape(v), heads);
        }
        if let Some(m) = mask {
            if m.len() != q_len * k_len {
                bail!(Layout, "attention mask has {} entries, expected {}x{}", m.len(), q_len, k_len);
            }
        }
        let head_dim = width / heads;
        let dims = AttnDims { q_len, k_len, heads, head_dim };
        let scale = T::one() / T::from_f64(head_dim as f64).sqrt();
        let keep = self.record && (self.nodes[q.0].requires_grad || self.nodes[k.0].requires_grad || self.nodes[v.0].requires_grad);
        let fwd = kernels::attention_forward(self.value(q).data(), self.value(k).data(), self.value(v).data(), dims, mask, scale, keep);
        self.fully_masked_rows += fwd.fully_masked_rows;
        let t = tensor(vec![q_len, width], fwd.out);
        Ok(self.push(t, Op::Attention { q, k, v, dims, scale, probs: fwd.probs }, &[q, k, v]))
    }

    /// Rotates consecutive pairs within every head by per-row angles.
    pub fn rotary(&mut self, a: Var, angles: Arc<RotaryAngles<T>>, heads: usize) -> Result<Var> {
        let (rows, width) = self.value(a).as_matrix();
        if heads == 0 || width % heads != 0 || (width / heads) != 2 * angles.half || angles.rows() != rows {
            bail!(Shape, "rotary: input {:?} with {} heads against {} rows of {} angles", self.shape(a), heads, angles.rows(), angles.half);
        }
        let head_dim = width / heads;
        let out = kernels::rotate_pairs(self.value(a).data(), &angles.cos, &angles.sin, heads, head_dim, false);
        let t = tensor(self.shape(a).to_vec(), out);
        Ok(self.push(t, Op::Rotary { a, angles, heads, head_dim }, &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        Ok(self.push(t, Op::Reshape { a }, &[a]))
    }

    /// Concatenates matrices along the row (token) axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            bail!(Shape, "concat_rows needs at least one input");
        }
        let cols = self.value(parts[0]).as_matrix().1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.value(p).as_matrix();
            if c != cols {
                bail!(Shape, "concat_rows: width {} against {}", c, cols);
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let t = tensor(vec![rows, cols], data);
        Ok(self.push(t, Op::ConcatRows { parts: parts.to_vec() }, parts))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(a).as_matrix();
        if start + len > rows {
            bail!(Shape, "slice_rows {}..{} of {} rows", start, start + len, rows);
        }
        let data = self.value(a).data()[start * cols..(start + len) * cols].to_vec();
        let t = tensor(vec![len, cols], data);
        Ok(self.push(t, Op::SliceRows { a, start }, &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.value(a).as_matrix();
        if start + len > cols {
            bail!(Shape, "slice_cols {}..{} of {} cols", start, start + len, cols);
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * cols + start..r * cols + start + len]);
        }
        let t = tensor(vec![rows, len], data);
        Ok(self.push(t, Op::SliceCols { a, start }, &[a]))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let m = ta.sum() / T::from_f64(ta.numel().max(1) as f64);
        self.push(Tensor::scalar(m), Op::Mean { a }, &[a])
    }

    /// Mean over rows: `[rows, cols] -> [1, cols]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let (rows, cols) = self.value(a).as_matrix();
        let mut out = vec![T::zero(); cols];
        for r in self.value(a).data().chunks(cols.max(1)) {
            out.iter_mut().zip(r).for_each(|(o, &x)| *o += x);
        }
        let inv = T::one() / T::from_f64(rows.max(1) as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        self.push(tensor(vec![1, cols], out), Op::MeanRows { a }, &[a])
    }

    /// Mean squared difference, as a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(ta, tb, "mse")?;
        let s: T = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let m = s / T::from_f64(ta.numel().max(1) as f64);
        Ok(self.push(Tensor::scalar(m), Op::Mse { a, b }, &[a, b]))
    }

    /// Row lookup into an embedding table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (rows, cols) = self.value(table).as_matrix();
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= rows {
                bail!(Shape, "gather index {} out of {} rows", i, rows);
            }
            data.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        let t = tensor(vec![ids.len(), cols], data);
        Ok(self.push(t, Op::Gather { table, ids: ids.to_vec() }, &[table]))
    }

    /// `x @ w + bias`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match bias {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.record {
            bail!(Config, "backward on an inference graph");
        }
        if self.value(loss).numel() != 1 {
            bail!(Shape, "backward needs a scalar, got {:?}", self.shape(loss));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out = Gradients { leaves: BTreeMap::new(), params: BTreeMap::new() };
        if !self.nodes[loss.0].requires_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if node.requires_grad {
                        out.leaves.insert(Var(i), g);
                    }
                }
                Op::Param(id) => match out.params.get_mut(id) {
                    Some(acc) => add_into(acc.data_mut(), g.data()),
                    None => {
                        out.params.insert(*id, g);
                    }
                },
                op => self.backward_op(op, Var(i), g, &mut grads),
            }
        }
        Ok(out)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => add_into(acc.data_mut(), g.data()),
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_op(&self, op: &Op<T>, out: Var, g: Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match op {
            Op::Leaf | Op::Param(_) => unreachable!(),
            Op::MatMul { a, b, m, k, n, batch, shared_b } => {
                let (m, k, n, batch) = (*m, *k, *n, *batch);
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut da = vec![T::zero(); batch * m * k];
                    for bi in 0..batch {
                        let boff = if *shared_b { 0 } else { bi * k * n };
                        T::gemm(
                            m,
                            n,
                            k,
                            T::one(),
                            &g.data()[bi * m * n..],
                            Strides::row_major(n),
                            &bv.data()[boff..],
                            Strides::transposed(n),
                            T::zero(),
                            &mut da[bi * m * k..],
                            Strides::row_major(k),
                        );
                    }
                    self.accumulate(grads, *a, tensor(av.shape().to_vec(), da));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); bv.numel()];
                    for bi in 0..batch {
                        let (boff, beta) = if *shared_b { (0, T::one()) } else { (bi * k * n, T::zero()) };
                        T::gemm(
                            k,
                            m,
                            n,
                            T::one(),
                            &av.data()[bi * m * k..],
                            Strides::transposed(k),
                            &g.data()[bi * m * n..],
                            Strides::row_major(n),
                            beta,
                            &mut db[boff..],
                            Strides::row_major(n),
                        );
                    }
                    self.accumulate(grads, *b, tensor(bv.shape().to_vec(), db));
                }
            }
            Op::Add { a, b } => {
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.clone());
                }
                self.accumulate(grads, *a, g);
            }
            Op::Sub { a, b } => {
                if self.needs(*b) {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
                self.accumulate(grads, *a, g);
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let d = zip(g.data(), self.value(*b).data(), |x, y| x * y);
                    self.accumulate(grads, *a, tensor(g.shape().to_vec(), d));
                }
                if self.needs(*b) {
                    let d = zip(g.data(), self.value(*a).data(), |x, y| x * y);
                    self.accumulate(grads, *b, tensor(g.shape().to_vec(), d));
                }
            }
            Op::AddRow { a, row } => {
                if self.needs(*row) {
                    let r = self.value(*row);
                    let d = col_sums(g.data(), r.numel());
                    self.accumulate(grads, *row, tensor(r.shape().to_vec(), d));
                }
                self.accumulate(grads, *a, g);
            }
            Op::MulRow { a, row } => {
                let r = self.value(*row);
                let cols = r.numel();
                if self.needs(*row) {
                    let prod = zip(g.data(), self.value(*a).data(), |x, y| x * y);
                    let d = col_sums(&prod, cols);
                    self.accumulate(grads, *row, tensor(r.shape().to_vec(), d));
                }
                if self.needs(*a) {
                    let mut d = g.into_data();
                    for chunk in d.chunks_mut(cols.max(1)) {
                        chunk.iter_mut().zip(r.data()).for_each(|(x, &y)| *x *= y);
                    }
                    self.accumulate(grads, *a, tensor(self.shape(*a).to_vec(), d));
                }
            }
            Op::Scale { a, factor } => {
                let f = *factor;
                self.accumulate(grads, *a, g.map(|x| x * f));
            }
            Op::AddScalar { a } | Op::Reshape { a } => {
                let shape = self.shape(*a).to_vec();
                self.accumulate(grads, *a, g.into_reshaped(&shape).expect("same numel"));
            }
            Op::Silu { a } => {
                let d = zip(g.data(), self.value(*a).data(), |gv, x| gv * kernels::silu_grad(x));
                self.accumulate(grads, *a, tensor(g.shape().to_vec(), d));
            }
            Op::RmsNorm { x, gain, group, inv } => {
                let (dx, dg) = kernels::rmsnorm_groups_backward(self.value(*x).data(), self.value(*gain).data(), inv, g.data(), *group);
                if self.needs(*gain) {
                    self.accumulate(grads, *gain, tensor(self.shape(*gain).to_vec(), dg));
                }
                self.accumulate(grads, *x, tensor(self.shape(*x).to_vec(), dx));
            }
            Op::Softmax { a } => {
                let y = self.value(out);
                let cols = y.as_matrix().1;
                let dx = kernels::softmax_rows_backward(y.data(), g.data(), cols);
                self.accumulate(grads, *a, tensor(y.shape().to_vec(), dx));
            }
            Op::Attention { q, k, v, dims, scale, probs } => {
                let ag = kernels::attention_backward(
                    self.value(*q).data(),
                    self.value(*k).data(),
                    self.value(*v).data(),
                    probs,
                    g.data(),
                    *dims,
                    *scale,
                );
                self.accumulate(grads, *q, tensor(self.shape(*q).to_vec(), ag.dq));
                self.accumulate(grads, *k, tensor(self.shape(*k).to_vec(), ag.dk));
                self.accumulate(grads, *v, tensor(self.shape(*v).to_vec(), ag.dv));
            }
            Op::Rotary { a, angles, heads, head_dim } => {
                let d = kernels::rotate_pairs(g.data(), &angles.cos, &angles.sin, *heads, *head_dim, true);
                self.accumulate(grads, *a, tensor(g.shape().to_vec(), d));
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.needs(p) {
                        let d = g.data()[offset..offset + n].to_vec();
                        self.accumulate(grads, p, tensor(self.shape(p).to_vec(), d));
                    }
                    offset += n;
                }
            }
            Op::SliceRows { a, start } => {
                let ta = self.value(*a);
                let cols = ta.as_matrix().1;
                let mut d = vec![T::zero(); ta.numel()];
                d[start * cols..start * cols + g.numel()].copy_from_slice(g.data());
                self.accumulate(grads, *a, tensor(ta.shape().to_vec(), d));
            }
            Op::SliceCols { a, start } => {
                let ta = self.value(*a);
                let (rows, cols) = ta.as_matrix();
                let len = g.as_matrix().1;
                let mut d = vec![T::zero(); ta.numel()];
                for r in 0..rows {
                    d[r * cols + start..r * cols + start + len].copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *a, tensor(ta.shape().to_vec(), d));
            }
            Op::Mean { a } => {
                let ta = self.value(*a);
                let s = g.data()[0] / T::from_f64(ta.numel().max(1) as f64);
                self.accumulate(grads, *a, Tensor::full(ta.shape(), s));
            }
            Op::MeanRows { a } => {
                let ta = self.value(*a);
                let (rows, cols) = ta.as_matrix();
                let inv = T::one() / T::from_f64(rows.max(1) as f64);
                let mut d = Vec::with_capacity(ta.numel());
                for _ in 0..rows {
                    d.extend(g.data().iter().map(|&x| x * inv));
                }
                debug_assert_eq!(d.len(), rows * cols);
                self.accumulate(grads, *a, tensor(ta.shape().to_vec(), d));
            }
            Op::Mse { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = g.data()[0] * T::from_f64(2.0 / ta.numel().max(1) as f64);
                let diff = zip(ta.data(), tb.data(), |x, y| (x - y) * c);
                if self.needs(*b) {
                    let neg = diff.iter().map(|&x| -x).collect();
                    self.accumulate(grads, *b, tensor(tb.shape().to_vec(), neg));
                }
                self.accumulate(grads, *a, tensor(ta.shape().to_vec(), diff));
            }
            Op::Gather { table, ids } => {
                let tt = self.value(*table);
                let cols = tt.as_matrix().1;
                let mut d = vec![T::zero(); tt.numel()];
                for (r, &i) in ids.iter().enumerate() {
                    add_into(&mut d[i * cols..(i + 1) * cols], &g.data()[r * cols..(r + 1) * cols]);
                }
                self.accumulate(grads, *table, tensor(tt.shape().to_vec(), d));
            }
        }
    }
}

fn add_into<T: Real>(acc: &mut [T], x: &[T]) {
    acc.iter_mut().zip(x).for_each(|(a, &b)| *a += b);
}

fn zip<T: Real>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn col_sums<T: Real>(data: &[T], cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); cols];
    for r in data.chunks(cols.max(1)) {
        add_into(&mut out, r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let i = g.input(mat(2, 2, &[1., 0., 0., 1.]));
        let b = g.input(mat(2, 2, &[2., 3., 4., 5.]));
        let c = g.matmul(i, b).unwrap();
        assert_eq!(g.value(c).data(), &[2., 3., 4., 5.]);

        let x = g.input(mat(1, 2, &[1., 2.]));
        let y = g.input(mat(2, 1, &[3., 4.]));
        let z = g.matmul(x, y).unwrap();
        assert_eq!(g.value(z).data(), &[11.]);

        let bad = g.input(mat(3, 1, &[0.; 3]));
        assert!(g.matmul(x, bad).is_err());
    }

    #[test]
    fn concat_then_slice_is_identity() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let a = g.input(mat(2, 3, &[1., 2., 3., 4., 5., 6.]));
        let b = g.input(mat(1, 3, &[7., 8., 9.]));
        let c = g.concat_rows(&[a, b]).unwrap();
        let a2 = g.slice_rows(c, 0, 2).unwrap();
        let b2 = g.slice_rows(c, 2, 1).unwrap();
        assert_eq!(g.value(a2), g.value(a));
        assert_eq!(g.value(b2), g.value(b));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut store = ParamStore::new();
        let w = store.insert("w", mat(2, 2, &[1., 2., 3., 4.]), false).unwrap();
        let u = store.insert("u", mat(2, 2, &[1., 0., 0., 1.]), true).unwrap();
        let mut g = Graph::new(&store);
        let x = g.input(mat(1, 2, &[1., 1.]));
        let wv = g.param(w);
        let uv = g.param(u);
        let h = g.matmul(x, wv).unwrap();
        let y = g.matmul(h, uv).unwrap();
        let l = g.mean(y);
        let grads = g.backward(l).unwrap();
        assert!(grads.param(w).is_none());
        // d/dU mean(h U) = h^T * 1/2
        assert_eq!(grads.param(u).unwrap().data(), &[2., 2., 3., 3.]);
    }

    #[test]
    fn inference_graph_refuses_backward() {
        let mut store = ParamStore::new();
        let w = store.insert("w", mat(1, 1, &[2.]), true).unwrap();
        let mut g = Graph::inference(&store);
        let wv = g.param(w);
        let l = g.mean(wv);
        assert!(!g.requires_grad(l));
        assert!(g.backward(l).is_err());
    }
}
