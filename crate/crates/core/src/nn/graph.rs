//! Reverse-mode tape covering the operations the three architectures need.
//!
//! Every recorded value is a 2-D `rows x cols` block (scalars are `1 x 1`,
//! bias vectors `1 x n`). Nodes are appended in evaluation order, so the
//! reverse of insertion order is a valid topological order for backward.

use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, Real};
use super::param::{ParamId, ParamStore};
use super::tensor::PROB_EPS;
use super::{NnError, Tensor};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    idx: usize,
    graph: u64,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Leaf,
    Param(ParamId),
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// `scale * x + shift` with constant coefficients.
    Affine { x: usize, scale: T },
    Relu(usize),
    Sigmoid(usize),
    Softmax(usize),
    Mixture { gate: usize, experts: Vec<usize> },
    Gather { table: usize, ids: Vec<usize> },
    Concat(Vec<usize>),
    Bce { p: usize, labels: Vec<T> },
    WeightedSum(Vec<(usize, T)>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Vec<T>,
    rows: usize,
    cols: usize,
    op: Op<T>,
}

#[derive(Debug)]
pub struct Graph<T: Real> {
    id: u64,
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, usize>,
    leaf_grads: HashMap<usize, Vec<T>>,
    consumed: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            params: HashMap::new(),
            leaf_grads: HashMap::new(),
            consumed: false,
        }
    }

    fn push(&mut self, value: Vec<T>, rows: usize, cols: usize, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
        });
        Var {
            idx: self.nodes.len() - 1,
            graph: self.id,
        }
    }

    fn node(&self, v: Var) -> Result<&Node<T>, NnError> {
        if v.graph != self.id {
            return Err(NnError::ForeignVar);
        }
        self.nodes.get(v.idx).ok_or(NnError::ForeignVar)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.idx];
        (n.rows, n.cols)
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.idx].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Result<Tensor, NnError> {
        let n = &self.nodes[v.idx];
        Tensor::new(
            vec![n.rows, n.cols],
            n.value.iter().map(|x| x.as_f32()).collect(),
        )
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var, NnError> {
        check_len(rows, cols, data.len())?;
        Ok(self.push(data, rows, cols, Op::Input))
    }

    pub fn input_tensor(&mut self, t: &Tensor) -> Var {
        let data = t.data().iter().map(|&v| T::of_f32(v)).collect();
        self.push(data, t.rows(), t.cols(), Op::Input)
    }

    /// Free variable whose gradient is kept and readable via [`Graph::grad`].
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var, NnError> {
        check_len(rows, cols, data.len())?;
        Ok(self.push(data, rows, cols, Op::Leaf))
    }

    /// Records a parameter. Repeated calls with the same id reuse one node.
    /// Vectors are laid out as a single row.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&idx) = self.params.get(&id) {
            return Var {
                idx,
                graph: self.id,
            };
        }
        let t = &store.get(id).value;
        let data = t.data().iter().map(|&v| T::of_f32(v)).collect();
        let v = self.push(data, t.rows(), t.cols(), Op::Param(id));
        self.params.insert(id, v.idx);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                left: vec![ar, ac],
                right: vec![br, bc],
            });
        }
        let mut out = vec![T::zero(); ar * bc];
        kernels::matmul(self.value(a), self.value(b), ar, ac, bc, &mut out);
        Ok(self.push(out, ar, bc, Op::MatMul(a.idx, b.idx)))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NnError> {
        let (xr, xc) = self.shape(x);
        let (br, bc) = self.shape(bias);
        if br != 1 || bc != xc {
            return Err(NnError::ShapeMismatch {
                op: "add_bias",
                left: vec![xr, xc],
                right: vec![br, bc],
            });
        }
        let mut out = self.value(x).to_vec();
        kernels::add_row_broadcast(&mut out, self.value(bias));
        Ok(self.push(out, xr, xc, Op::AddBias(x.idx, bias.idx)))
    }

    /// `x * weights + bias`.
    pub fn affine(&mut self, x: Var, weights: Var, bias: Var) -> Result<Var, NnError> {
        let h = self.matmul(x, weights)?;
        self.add_bias(h, bias)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize), NnError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sa != sb {
            return Err(NnError::ShapeMismatch {
                op,
                left: vec![sa.0, sa.1],
                right: vec![sb.0, sb.1],
            });
        }
        Ok(sa)
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, rec: Op<T>) -> Result<Var, NnError> {
        let (r, c) = self.same_shape(op, a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(out, r, c, rec))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a.idx, b.idx))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a.idx, b.idx))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a.idx, b.idx))
    }

    /// `scale * x + shift`.
    pub fn affine_scalar(&mut self, x: Var, scale: T, shift: T) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| scale * v + shift).collect();
        self.push(out, r, c, Op::Affine { x: x.idx, scale })
    }

    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine_scalar(x, -T::one(), T::one())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        self.push(out, r, c, Op::Relu(x.idx))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out = self.value(x).iter().map(|&v| kernels::sigmoid(v)).collect();
        self.push(out, r, c, Op::Sigmoid(x.idx))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_exact_mut(c) {
            kernels::softmax_row(row);
        }
        self.push(out, r, c, Op::Softmax(x.idx))
    }

    /// Per-row convex mixture: `out[b] = sum_e gate[b, e] * experts[e][b]`.
    pub fn mixture(&mut self, gate: Var, experts: &[Var]) -> Result<Var, NnError> {
        let (gr, gc) = self.shape(gate);
        let first = *experts.first().ok_or(NnError::Empty("mixture experts"))?;
        if gc != experts.len() {
            return Err(NnError::ShapeMismatch {
                op: "mixture",
                left: vec![gr, gc],
                right: vec![experts.len()],
            });
        }
        let (er, ec) = self.shape(first);
        for &e in experts {
            let s = self.shape(e);
            if s != (gr, ec) || er != gr {
                return Err(NnError::ShapeMismatch {
                    op: "mixture",
                    left: vec![gr, gc],
                    right: vec![s.0, s.1],
                });
            }
        }
        let mut out = vec![T::zero(); gr * ec];
        let g = self.value(gate);
        for (e_idx, &e) in experts.iter().enumerate() {
            let ev = &self.nodes[e.idx].value;
            for b in 0..gr {
                let w = g[b * gc + e_idx];
                let src = &ev[b * ec..(b + 1) * ec];
                for (o, &s) in out[b * ec..(b + 1) * ec].iter_mut().zip(src) {
                    *o = *o + w * s;
                }
            }
        }
        let experts = experts.iter().map(|e| e.idx).collect();
        Ok(self.push(
            out,
            gr,
            ec,
            Op::Mixture {
                gate: gate.idx,
                experts,
            },
        ))
    }

    /// Row lookup into a `[vocab, dim]` table.
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Result<Var, NnError> {
        let (vocab, dim) = self.shape(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(NnError::IndexOutOfRange { index: bad, len: vocab });
        }
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &i in &ids {
            out.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        let rows = ids.len();
        Ok(self.push(out, rows, dim, Op::Gather { table: table.idx, ids }))
    }

    /// Column-wise concatenation of equal-height blocks.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, NnError> {
        let first = *parts.first().ok_or(NnError::Empty("concat parts"))?;
        let rows = self.shape(first).0;
        let mut cols = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(NnError::ShapeMismatch {
                    op: "concat",
                    left: vec![rows],
                    right: vec![r, c],
                });
            }
            cols += c;
        }
        let mut out = Vec::with_capacity(rows * cols);
        for b in 0..rows {
            for &p in parts {
                let c = self.nodes[p.idx].cols;
                out.extend_from_slice(&self.nodes[p.idx].value[b * c..(b + 1) * c]);
            }
        }
        Ok(self.push(out, rows, cols, Op::Concat(parts.iter().map(|p| p.idx).collect())))
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 labels.
    pub fn bce(&mut self, p: Var, labels: &[T]) -> Result<Var, NnError> {
        let pv = self.value(p);
        if pv.len() != labels.len() || labels.is_empty() {
            return Err(NnError::ShapeMismatch {
                op: "bce",
                left: vec![pv.len()],
                right: vec![labels.len()],
            });
        }
        for &y in labels {
            super::tensor::check_label(y)?;
        }
        let eps = T::of_f64(PROB_EPS);
        let mut total = T::zero();
        for (&pi, &yi) in pv.iter().zip(labels) {
            total = total + kernels::bce_term(pi, yi, eps);
        }
        let n = T::of_f64(labels.len() as f64);
        Ok(self.push(
            vec![total / n],
            1,
            1,
            Op::Bce {
                p: p.idx,
                labels: labels.to_vec(),
            },
        ))
    }

    /// `sum_i w_i * x_i` over equally shaped terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Result<Var, NnError> {
        let &(first, _) = terms.first().ok_or(NnError::Empty("weighted_sum terms"))?;
        let (r, c) = self.shape(first);
        let mut out = vec![T::zero(); r * c];
        for &(v, w) in terms {
            self.same_shape("weighted_sum", first, v)?;
            for (o, &x) in out.iter_mut().zip(self.value(v)) {
                *o = *o + w * x;
            }
        }
        Ok(self.push(
            out,
            r,
            c,
            Op::WeightedSum(terms.iter().map(|&(v, w)| (v.idx, w)).collect()),
        ))
    }

    /// Fingerprint of every ReLU's active set. Two evaluations with equal
    /// fingerprints followed the same piecewise-linear branch.
    pub fn relu_signature(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for n in &self.nodes {
            if let Op::Relu(x) = n.op {
                for &v in &self.nodes[x].value {
                    (v > T::zero()).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        if v.graph != self.id {
            return None;
        }
        self.leaf_grads.get(&v.idx).map(Vec::as_slice)
    }

    /// Backpropagates from a `1 x 1` loss, accumulating parameter gradients
    /// into `store` and keeping leaf gradients on the graph. A graph can be
    /// backpropagated once.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<(), NnError> {
        if self.consumed || self.nodes.is_empty() {
            return Err(NnError::BackwardWithoutForward);
        }
        let root = self.node(loss)?;
        if root.rows != 1 || root.cols != 1 {
            return Err(NnError::ShapeMismatch {
                op: "backward",
                left: vec![root.rows, root.cols],
                right: vec![1, 1],
            });
        }
        self.consumed = true;

        let mut grads: Vec<Vec<T>> = vec![Vec::new(); loss.idx + 1];
        grads[loss.idx] = vec![T::one()];
        let mut leaves = Vec::new();

        for idx in (0..=loss.idx).rev() {
            if grads[idx].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Leaf => leaves.push((idx, g)),
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    for (acc, &v) in p.grad.data_mut().iter_mut().zip(&g) {
                        *acc += v.as_f32();
                    }
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (m, k) = (self.nodes[a].rows, self.nodes[a].cols);
                    let n = self.nodes[b].cols;
                    let ga = ensure(&mut grads, a, m * k);
                    kernels::matmul_grad_lhs(&g, &self.nodes[b].value, m, k, n, ga);
                    let gb = ensure(&mut grads, b, k * n);
                    kernels::matmul_grad_rhs(&self.nodes[a].value, &g, m, k, n, gb);
                }
                Op::AddBias(x, bias) => {
                    let (x, bias) = (*x, *bias);
                    let cols = node.cols;
                    add_into(ensure(&mut grads, x, g.len()), &g);
                    let gb = ensure(&mut grads, bias, cols);
                    for row in g.chunks_exact(cols) {
                        add_into(gb, row);
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    add_into(ensure(&mut grads, a, g.len()), &g);
                    add_into(ensure(&mut grads, b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    add_into(ensure(&mut grads, a, g.len()), &g);
                    let gb = ensure(&mut grads, b, g.len());
                    for (o, &v) in gb.iter_mut().zip(&g) {
                        *o = *o - v;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = ensure(&mut grads, a, g.len());
                    for ((o, &gv), &bv) in ga.iter_mut().zip(&g).zip(&self.nodes[b].value) {
                        *o = *o + gv * bv;
                    }
                    let gb = ensure(&mut grads, b, g.len());
                    for ((o, &gv), &av) in gb.iter_mut().zip(&g).zip(&self.nodes[a].value) {
                        *o = *o + gv * av;
                    }
                }
                Op::Affine { x, scale } => {
                    let (x, scale) = (*x, *scale);
                    let gx = ensure(&mut grads, x, g.len());
                    for (o, &gv) in gx.iter_mut().zip(&g) {
                        *o = *o + scale * gv;
                    }
                }
                Op::Relu(x) => {
                    let x = *x;
                    let gx = ensure(&mut grads, x, g.len());
                    for ((o, &gv), &xv) in gx.iter_mut().zip(&g).zip(&self.nodes[x].value) {
                        if xv > T::zero() {
                            *o = *o + gv;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    let gx = ensure(&mut grads, x, g.len());
                    for ((o, &gv), &s) in gx.iter_mut().zip(&g).zip(&node.value) {
                        *o = *o + gv * s * (T::one() - s);
                    }
                }
                Op::Softmax(x) => {
                    let x = *x;
                    let cols = node.cols;
                    let gx = ensure(&mut grads, x, g.len());
                    for ((grow, srow), orow) in g
                        .chunks_exact(cols)
                        .zip(node.value.chunks_exact(cols))
                        .zip(gx.chunks_exact_mut(cols))
                    {
                        let dot = grow
                            .iter()
                            .zip(srow)
                            .fold(T::zero(), |acc, (&a, &b)| acc + a * b);
                        for ((o, &gv), &s) in orow.iter_mut().zip(grow).zip(srow) {
                            *o = *o + s * (gv - dot);
                        }
                    }
                }
                Op::Mixture { gate, experts } => {
                    let gate = *gate;
                    let (rows, cols) = (node.rows, node.cols);
                    let n_exp = experts.len();
                    for (e_idx, &e) in experts.iter().enumerate() {
                        let ge = ensure(&mut grads, e, rows * cols);
                        let gate_v = &self.nodes[gate].value;
                        for b in 0..rows {
                            let w = gate_v[b * n_exp + e_idx];
                            for (o, &gv) in ge[b * cols..(b + 1) * cols]
                                .iter_mut()
                                .zip(&g[b * cols..(b + 1) * cols])
                            {
                                *o = *o + w * gv;
                            }
                        }
                    }
                    let gg = ensure(&mut grads, gate, rows * n_exp);
                    for (e_idx, &e) in experts.iter().enumerate() {
                        let ev = &self.nodes[e].value;
                        for b in 0..rows {
                            let dot = g[b * cols..(b + 1) * cols]
                                .iter()
                                .zip(&ev[b * cols..(b + 1) * cols])
                                .fold(T::zero(), |acc, (&a, &v)| acc + a * v);
                            gg[b * n_exp + e_idx] = gg[b * n_exp + e_idx] + dot;
                        }
                    }
                }
                Op::Gather { table, ids } => {
                    let table = *table;
                    let (vocab, dim) = (self.nodes[table].rows, self.nodes[table].cols);
                    let gt = ensure(&mut grads, table, vocab * dim);
                    for (r, &i) in ids.iter().enumerate() {
                        add_into(&mut gt[i * dim..(i + 1) * dim], &g[r * dim..(r + 1) * dim]);
                    }
                }
                Op::Concat(parts) => {
                    let rows = node.rows;
                    let total = node.cols;
                    let mut offset = 0;
                    for &p in parts {
                        let c = self.nodes[p].cols;
                        let gp = ensure(&mut grads, p, rows * c);
                        for b in 0..rows {
                            add_into(
                                &mut gp[b * c..(b + 1) * c],
                                &g[b * total + offset..b * total + offset + c],
                            );
                        }
                        offset += c;
                    }
                }
                Op::Bce { p, labels } => {
                    let p = *p;
                    let eps = T::of_f64(PROB_EPS);
                    let n = T::of_f64(labels.len() as f64);
                    let upstream = g[0];
                    let gp = ensure(&mut grads, p, labels.len());
                    for ((o, &pv), &y) in gp.iter_mut().zip(&self.nodes[p].value).zip(labels) {
                        if pv < eps || pv > T::one() - eps {
                            continue;
                        }
                        let d = -(y / pv) + (T::one() - y) / (T::one() - pv);
                        *o = *o + upstream * d / n;
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(t, w) in terms {
                        let gt = ensure(&mut grads, t, g.len());
                        for (o, &gv) in gt.iter_mut().zip(&g) {
                            *o = *o + w * gv;
                        }
                    }
                }
            }
        }
        self.leaf_grads.extend(leaves);
        Ok(())
    }
}

fn check_len(rows: usize, cols: usize, len: usize) -> Result<(), NnError> {
    if rows == 0 || cols == 0 || rows * cols != len {
        return Err(NnError::DataLength {
            shape: vec![rows, cols],
            len,
        });
    }
    Ok(())
}

fn ensure<T: Real>(grads: &mut [Vec<T>], idx: usize, len: usize) -> &mut [T] {
    if grads[idx].is_empty() {
        grads[idx] = vec![T::zero(); len];
    }
    &mut grads[idx]
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
