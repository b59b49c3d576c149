//! Reverse-mode tape over dense vectors and matrices.
//!
//! Every forward pass records its nodes on a fresh [`Tape`]. Parameters are
//! referenced in place from a [`ParameterStore`], so building a graph never
//! copies weight matrices.

use super::tensor::{ParamId, ParameterStore, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatVec { w: Var, x: Var },
    GatherMatVec { w: Var, rows: Vec<usize>, x: Var },
    Gather { x: Var, idx: Vec<usize> },
    Row { w: Var, row: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Var),
    Dot(Var, Var),
    Max { x: Var, arg: usize },
    Softmax(Var),
    WeightedSum { weights: Var, items: Vec<Var> },
    Nll { logits: Var, target: usize },
    Bce { p: Var, terms: Vec<(usize, T)> },
    Cosine(Var, Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Vec<T>,
    rows: usize,
    cols: usize,
    needs_grad: bool,
    op: Op<T>,
}

/// Accumulated parameter gradients, indexed like the store they came from.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new(params: &ParameterStore<T>) -> Self {
        Gradients {
            grads: vec![None; params.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads[id.0].as_deref()
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Vec<T>> {
        self.grads[id.0].as_mut()
    }

    pub fn clear(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn scale(&mut self, c: T) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v = *v * c);
        }
    }

    /// L2 norm over the selected parameters.
    pub fn norm(&self, include: impl Fn(ParamId) -> bool) -> T {
        self.grads
            .iter()
            .enumerate()
            .filter(|(i, _)| include(ParamId(*i)))
            .filter_map(|(_, g)| g.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| *v * *v)
            .sum::<T>()
            .sqrt()
    }

    fn slot(&mut self, id: ParamId, len: usize) -> &mut [T] {
        self.grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
    }
}

#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8 * 8;
    for (ca, cb) in a[..chunks].chunks_exact(8).zip(b[..chunks].chunks_exact(8)) {
        for k in 0..8 {
            acc[k] = acc[k] + ca[k] * cb[k];
        }
    }
    let mut s = (acc[0] + acc[4]) + (acc[1] + acc[5]) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        s = s + *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = *yi + a * *xi;
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn log_sum_exp<T: Scalar>(xs: &[T]) -> T {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    m + xs.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

pub fn softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let m = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = xs.iter().map(|&x| (x - m).exp()).collect();
    let z: T = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v = *v / z);
    out
}

pub fn log_softmax<T: Scalar>(xs: &[T]) -> Vec<T> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|&x| x - lse).collect()
}

pub(crate) const BCE_CLAMP: f64 = 1e-7;
const COSINE_FLOOR: f64 = 1e-8;

pub struct Tape<'p, T: Scalar> {
    params: &'p ParameterStore<T>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Scalar> Tape<'p, T> {
    pub fn new(params: &'p ParameterStore<T>) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParameterStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id).data(),
            _ => &node.value,
        }
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    pub fn numel(&self, v: Var) -> usize {
        let (r, c) = self.dims(v);
        r * c
    }

    fn push(&mut self, value: Vec<T>, rows: usize, cols: usize, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<usize> {
        let (na, nb) = (self.numel(a), self.numel(b));
        if na != nb {
            return Err(Error::shape(format!("{what}: {na} vs {nb}")));
        }
        Ok(na)
    }

    pub fn input(&mut self, value: Vec<T>) -> Var {
        let n = value.len();
        self.push(value, n, 1, Op::Input, &[])
    }

    pub fn input_matrix(&mut self, value: Vec<T>, rows: usize, cols: usize) -> Result<Var> {
        if rows * cols != value.len() {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} from {} values",
                value.len()
            )));
        }
        Ok(self.push(value, rows, cols, Op::Input, &[]))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let t = self.params.get(id);
        let (rows, cols) = t.matrix_dims();
        self.nodes.push(Node {
            value: Vec::new(),
            rows,
            cols,
            needs_grad: t.requires_grad,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// Copies the value of `v` into a fresh input node; no gradient flows back.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).to_vec();
        let (r, c) = self.dims(v);
        self.push(value, r, c, Op::Input, &[])
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (rows, cols) = self.dims(w);
        if self.numel(x) != cols {
            return Err(Error::shape(format!(
                "matvec: matrix {rows}x{cols} times vector of {}",
                self.numel(x)
            )));
        }
        let (wv, xv) = (self.value(w), self.value(x));
        let out = wv.chunks_exact(cols).map(|row| dot(row, xv)).collect();
        Ok(self.push(out, rows, 1, Op::MatVec { w, x }, &[w, x]))
    }

    /// `matvec` restricted to the listed rows of `w`; cost scales with `rows.len()`.
    pub fn gather_matvec(&mut self, w: Var, rows: &[usize], x: Var) -> Result<Var> {
        let (nrows, cols) = self.dims(w);
        if self.numel(x) != cols {
            return Err(Error::shape(format!(
                "gather_matvec: matrix {nrows}x{cols} times vector of {}",
                self.numel(x)
            )));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= nrows) {
            return Err(Error::shape(format!("gather_matvec: row {bad} of {nrows}")));
        }
        let (wv, xv) = (self.value(w), self.value(x));
        let out = rows
            .iter()
            .map(|&r| dot(&wv[r * cols..(r + 1) * cols], xv))
            .collect();
        let op = Op::GatherMatVec {
            w,
            rows: rows.to_vec(),
            x,
        };
        Ok(self.push(out, rows.len(), 1, op, &[w, x]))
    }

    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let n = self.numel(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape(format!("gather: index {bad} of {n}")));
        }
        let xv = self.value(x);
        let out = idx.iter().map(|&i| xv[i]).collect();
        let op = Op::Gather {
            x,
            idx: idx.to_vec(),
        };
        Ok(self.push(out, idx.len(), 1, op, &[x]))
    }

    pub fn row(&mut self, w: Var, row: usize) -> Result<Var> {
        let (rows, cols) = self.dims(w);
        if row >= rows {
            return Err(Error::shape(format!("row {row} of {rows}")));
        }
        let out = self.value(w)[row * cols..(row + 1) * cols].to_vec();
        Ok(self.push(out, cols, 1, Op::Row { w, row }, &[w]))
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let n = self.same_len(a, b, what)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(out, n, 1, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out: Vec<T> = self.value(x).iter().map(|&v| f(v)).collect();
        let n = out.len();
        self.push(out, n, 1, op, &[x])
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        self.map(x, |v| T::one() - v, Op::OneMinus(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, T::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::with_capacity(parts.iter().map(|&p| self.numel(p)).sum());
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        self.push(out, n, 1, Op::Concat(parts.to_vec()), parts)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.numel(x);
        if start + len > n {
            return Err(Error::shape(format!("slice {start}..{} of {n}", start + len)));
        }
        let out = self.value(x)[start..start + len].to_vec();
        Ok(self.push(out, len, 1, Op::Slice { x, start }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![s], 1, 1, Op::Sum(x), &[x])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "dot")?;
        let s = dot(self.value(a), self.value(b));
        Ok(self.push(vec![s], 1, 1, Op::Dot(a, b), &[a, b]))
    }

    /// Maximum entry; the gradient goes to the first maximiser.
    pub fn max(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::EmptyInput("max over empty vector"));
        }
        let mut arg = 0;
        for (i, &v) in xv.iter().enumerate() {
            if v > xv[arg] {
                arg = i;
            }
        }
        let m = xv[arg];
        Ok(self.push(vec![m], 1, 1, Op::Max { x, arg }, &[x]))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if self.numel(x) == 0 {
            return Err(Error::EmptyInput("softmax over empty vector"));
        }
        let out = softmax(self.value(x));
        let n = out.len();
        Ok(self.push(out, n, 1, Op::Softmax(x), &[x]))
    }

    /// `sum_t weights[t] * items[t]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        if self.numel(weights) != items.len() || items.is_empty() {
            return Err(Error::shape(format!(
                "weighted_sum: {} weights for {} items",
                self.numel(weights),
                items.len()
            )));
        }
        let dim = self.numel(items[0]);
        let mut out = vec![T::zero(); dim];
        for (t, &item) in items.iter().enumerate() {
            if self.numel(item) != dim {
                return Err(Error::shape("weighted_sum: ragged items"));
            }
            axpy(&mut out, self.value(weights)[t], self.value(item));
        }
        let mut inputs = items.to_vec();
        inputs.push(weights);
        let op = Op::WeightedSum {
            weights,
            items: items.to_vec(),
        };
        Ok(self.push(out, dim, 1, op, &inputs))
    }

    /// `-log softmax(logits)[target]`.
    pub fn nll(&mut self, logits: Var, target: usize) -> Result<Var> {
        let lv = self.value(logits);
        if target >= lv.len() {
            return Err(Error::TargetNotActive(target));
        }
        let loss = log_sum_exp(lv) - lv[target];
        Ok(self.push(vec![loss], 1, 1, Op::Nll { logits, target }, &[logits]))
    }

    /// Mean binary cross-entropy of probabilities `p` against `(index, target)`
    /// terms; probabilities are clamped to `[1e-7, 1 - 1e-7]`.
    pub fn bce(&mut self, p: Var, terms: &[(usize, T)]) -> Result<Var> {
        if terms.is_empty() {
            return Err(Error::EmptyInput("bce without terms"));
        }
        let pv = self.value(p);
        let (lo, hi) = (T::of(BCE_CLAMP), T::one() - T::of(BCE_CLAMP));
        let mut total = T::zero();
        for &(i, t) in terms {
            let q = *pv
                .get(i)
                .ok_or_else(|| Error::shape(format!("bce: index {i} of {}", pv.len())))?;
            let q = q.max(lo).min(hi);
            total = total - (t * q.ln() + (T::one() - t) * (T::one() - q).ln());
        }
        let loss = total / T::of(terms.len() as f64);
        let op = Op::Bce {
            p,
            terms: terms.to_vec(),
        };
        Ok(self.push(vec![loss], 1, 1, op, &[p]))
    }

    /// Cosine similarity; 0 (with zero gradient) when either side is ~0.
    pub fn cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "cosine")?;
        let (av, bv) = (self.value(a), self.value(b));
        let norm = (dot(av, av) * dot(bv, bv)).sqrt();
        let c = if norm < T::of(COSINE_FLOOR) {
            T::zero()
        } else {
            dot(av, bv) / norm
        };
        Ok(self.push(vec![c], 1, 1, Op::Cosine(a, b), &[a, b]))
    }

    /// Accumulates d loss / d parameter into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients<T>) -> Result<()> {
        let n = self.numel(loss);
        if n != 1 {
            return Err(Error::NonScalarLoss(n));
        }
        if !self.nodes[loss.0].needs_grad {
            return Err(Error::Detached);
        }
        if grads.grads.len() != self.params.len() {
            return Err(Error::shape("gradient buffer built for a different store"));
        }
        let mut node_grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        node_grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = node_grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut sink = Sink {
                tape: self,
                node_grads: &mut node_grads,
                params: grads,
            };
            sink.propagate(&node.op, &node.value, &g);
        }
        Ok(())
    }
}

struct Sink<'a, 'p, T: Scalar> {
    tape: &'a Tape<'p, T>,
    node_grads: &'a mut [Option<Vec<T>>],
    params: &'a mut Gradients<T>,
}

impl<T: Scalar> Sink<'_, '_, T> {
    /// Gradient buffer for `v`, or `None` when nothing upstream needs it.
    fn buf(&mut self, v: Var) -> Option<&mut [T]> {
        let node = &self.tape.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let len = node.rows * node.cols;
        match node.op {
            Op::Param(id) => Some(self.params.slot(id, len)),
            _ => Some(self.node_grads[v.0].get_or_insert_with(|| vec![T::zero(); len])),
        }
    }

    fn val(&self, v: Var) -> &[T] {
        self.tape.value(v)
    }

    fn add_scaled(&mut self, v: Var, g: &[T], c: T) {
        if let Some(b) = self.buf(v) {
            axpy(b, c, g);
        }
    }

    fn add_elementwise(&mut self, v: Var, g: &[T], f: impl Fn(usize, T) -> T) {
        if let Some(b) = self.buf(v) {
            for (k, (bk, &gk)) in b.iter_mut().zip(g).enumerate() {
                *bk = *bk + f(k, gk);
            }
        }
    }

    fn propagate(&mut self, op: &Op<T>, out: &[T], g: &[T]) {
        let tape = self.tape;
        match op {
            Op::Input | Op::Param(_) => {}
            Op::MatVec { w, x } => {
                let (_, cols) = tape.dims(*w);
                let (wv, xv) = (tape.value(*w), tape.value(*x));
                if let Some(gw) = self.buf(*w) {
                    for (r, &gr) in g.iter().enumerate() {
                        axpy(&mut gw[r * cols..(r + 1) * cols], gr, xv);
                    }
                }
                if let Some(gx) = self.buf(*x) {
                    for (r, &gr) in g.iter().enumerate() {
                        axpy(gx, gr, &wv[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::GatherMatVec { w, rows, x } => {
                let (_, cols) = tape.dims(*w);
                let (wv, xv) = (tape.value(*w), tape.value(*x));
                if let Some(gw) = self.buf(*w) {
                    for (&r, &gr) in rows.iter().zip(g) {
                        axpy(&mut gw[r * cols..(r + 1) * cols], gr, xv);
                    }
                }
                if let Some(gx) = self.buf(*x) {
                    for (&r, &gr) in rows.iter().zip(g) {
                        axpy(gx, gr, &wv[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::Gather { x, idx } => {
                if let Some(gx) = self.buf(*x) {
                    for (&i, &gi) in idx.iter().zip(g) {
                        gx[i] = gx[i] + gi;
                    }
                }
            }
            Op::Row { w, row } => {
                let cols = g.len();
                if let Some(gw) = self.buf(*w) {
                    axpy(&mut gw[row * cols..(row + 1) * cols], T::one(), g);
                }
            }
            Op::Add(a, b) => {
                self.add_scaled(*a, g, T::one());
                self.add_scaled(*b, g, T::one());
            }
            Op::Sub(a, b) => {
                self.add_scaled(*a, g, T::one());
                self.add_scaled(*b, g, -T::one());
            }
            Op::Mul(a, b) => {
                let bv = self.val(*b).to_vec();
                let av = self.val(*a).to_vec();
                self.add_elementwise(*a, g, |k, gk| gk * bv[k]);
                self.add_elementwise(*b, g, |k, gk| gk * av[k]);
            }
            Op::Scale(x, c) => self.add_scaled(*x, g, *c),
            Op::OneMinus(x) => self.add_scaled(*x, g, -T::one()),
            Op::Sigmoid(x) => self.add_elementwise(*x, g, |k, gk| gk * out[k] * (T::one() - out[k])),
            Op::Tanh(x) => self.add_elementwise(*x, g, |k, gk| gk * (T::one() - out[k] * out[k])),
            Op::Relu(x) => self.add_elementwise(*x, g, |k, gk| {
                if out[k] > T::zero() {
                    gk
                } else {
                    T::zero()
                }
            }),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = tape.numel(p);
                    self.add_scaled(p, &g[offset..offset + n], T::one());
                    offset += n;
                }
            }
            Op::Slice { x, start } => {
                if let Some(gx) = self.buf(*x) {
                    axpy(&mut gx[*start..*start + g.len()], T::one(), g);
                }
            }
            Op::Sum(x) => self.add_elementwise(*x, &vec![g[0]; tape.numel(*x)], |_, gk| gk),
            Op::Dot(a, b) => {
                let av = self.val(*a).to_vec();
                let bv = self.val(*b).to_vec();
                self.add_scaled(*a, &bv, g[0]);
                self.add_scaled(*b, &av, g[0]);
            }
            Op::Max { x, arg } => {
                if let Some(gx) = self.buf(*x) {
                    gx[*arg] = gx[*arg] + g[0];
                }
            }
            Op::Softmax(x) => {
                let gy = dot(g, out);
                self.add_elementwise(*x, g, |k, gk| out[k] * (gk - gy));
            }
            Op::WeightedSum { weights, items } => {
                let wv = tape.value(*weights);
                let gw: Vec<T> = items.iter().map(|&it| dot(g, tape.value(it))).collect();
                for (t, &it) in items.iter().enumerate() {
                    self.add_scaled(it, g, wv[t]);
                }
                self.add_scaled(*weights, &gw, T::one());
            }
            Op::Nll { logits, target } => {
                let probs = softmax(tape.value(*logits));
                let t = *target;
                self.add_elementwise(*logits, &probs, |k, pk| {
                    let onehot = if k == t { T::one() } else { T::zero() };
                    g[0] * (pk - onehot)
                });
            }
            Op::Bce { p, terms } => {
                let pv = tape.value(*p);
                let (lo, hi) = (T::of(BCE_CLAMP), T::one() - T::of(BCE_CLAMP));
                let scale = g[0] / T::of(terms.len() as f64);
                if let Some(gp) = self.buf(*p) {
                    for &(i, t) in terms {
                        let q = pv[i];
                        if q <= lo || q >= hi {
                            continue;
                        }
                        let d = -t / q + (T::one() - t) / (T::one() - q);
                        gp[i] = gp[i] + scale * d;
                    }
                }
            }
            Op::Cosine(a, b) => {
                let av = tape.value(*a).to_vec();
                let bv = tape.value(*b).to_vec();
                let (aa, bb) = (dot(&av, &av), dot(&bv, &bv));
                let norm = (aa * bb).sqrt();
                if norm < T::of(COSINE_FLOOR) {
                    return;
                }
                let c = out[0];
                let ga: Vec<T> = av
                    .iter()
                    .zip(&bv)
                    .map(|(&x, &y)| g[0] * (y / norm - c * x / aa))
                    .collect();
                let gb: Vec<T> = av
                    .iter()
                    .zip(&bv)
                    .map(|(&x, &y)| g[0] * (x / norm - c * y / bb))
                    .collect();
                self.add_scaled(*a, &ga, T::one());
                self.add_scaled(*b, &gb, T::one());
            }
        }
    }
}
