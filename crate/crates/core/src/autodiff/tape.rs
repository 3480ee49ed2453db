use rand::Rng;

use super::{DiffArray, ParamId, ParamStore};
use crate::{kernels, Error, Real, Result};

/// Handle to an array recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Backward rule of a user-supplied operation: given the inputs, the output
/// and the upstream gradient, returns one gradient buffer per input.
pub type CustomBackward = Box<dyn Fn(&[&DiffArray], &DiffArray, &[Real]) -> Vec<Vec<Real>>>;

/// Per-feature statistics of one train-mode batch norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<Real>,
    /// Unbiased (n-1) variance, the convention for running estimates.
    pub var: Vec<Real>,
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, Real),
    MaskMul(Var, Vec<Real>),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    ScaleRowsByColumn {
        x: Var,
        weights: Var,
        col: usize,
    },
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    AssembleRows(Vec<(Var, Vec<usize>)>),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<Real>,
        inv_std: Vec<Real>,
        batch_stats: bool,
    },
    Bce(Var, Vec<Real>),
    Sum(Var),
    Custom(Vec<Var>, CustomBackward),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::MatMulNt(a, b)
            | Op::Add(a, b)
            | Op::Mul(a, b)
            | Op::AddRowBias(a, b)
            | Op::ConcatCols(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::MaskMul(x, _)
            | Op::Relu(x)
            | Op::Tanh(x)
            | Op::Sigmoid(x)
            | Op::SoftmaxRows(x)
            | Op::GatherRows(x, _)
            | Op::Bce(x, _)
            | Op::Sum(x) => vec![*x],
            Op::ScaleRowsByColumn { x, weights, .. } => vec![*x, *weights],
            Op::AssembleRows(parts) => parts.iter().map(|(v, _)| *v).collect(),
            Op::BatchNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Custom(inputs, _) => inputs.clone(),
        }
    }
}

struct Node {
    array: DiffArray,
    op: Op,
    param: Option<ParamId>,
}

/// Linear record of one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Floor applied inside the logarithms of the cross-entropy.
const LOG_CLAMP: Real = 1e-12;

// `Real::max` drops NaN; the loss must not.
fn clamp_log(p: Real) -> Real {
    if p.is_nan() {
        p
    } else {
        p.max(LOG_CLAMP).ln()
    }
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

    fn push(&mut self, shape: Vec<usize>, values: Vec<Real>, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].array.requires_grad());
        let array = DiffArray::new(shape, values)
            .expect("op produced inconsistent shape")
            .with_requires_grad(requires_grad);
        self.nodes.push(Node {
            array,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf. Gradients flow to it iff `array.requires_grad()`.
    pub fn leaf(&mut self, array: DiffArray) -> Var {
        let mut array = array;
        array.zero_grad();
        self.nodes.push(Node {
            array,
            op: Op::Leaf,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<Real>) -> Result<Var> {
        Ok(self.leaf(DiffArray::new(shape, values)?))
    }

    /// Copies a stored parameter onto the tape as a gradient-tracking leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let mut array = store.value(id).clone();
        array.zero_grad();
        self.nodes.push(Node {
            array,
            op: Op::Leaf,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn array(&self, v: Var) -> &DiffArray {
        &self.nodes[v.0].array
    }

    pub fn value(&self, v: Var) -> &[Real] {
        self.nodes[v.0].array.values()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].array.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[Real]> {
        self.nodes[v.0].array.grad()
    }

    /// Gradients of every parameter leaf that received one.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[Real])> {
        self.nodes
            .iter()
            .filter_map(|n| Some((n.param?, n.array.grad()?)))
    }

    /// Adds the tape's parameter gradients into the store.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (id, g) in self.param_grads() {
            store.get_mut(id).value.accumulate_grad(g);
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.array.zero_grad();
        }
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0].array.expect_matrix(op)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(Real) -> Real) -> Var {
        let values = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, values, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.matrix(a, "matmul")?;
        let (n2, p) = self.matrix(b, "matmul")?;
        if n != n2 {
            return Err(Error::shape("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(self.value(a), self.value(b), m, n, p);
        Ok(self.push(vec![m, p], out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`; the affine-map and scoring workhorse.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, n) = self.matrix(a, "matmul_nt")?;
        let (p, n2) = self.matrix(b, "matmul_nt")?;
        if n != n2 {
            return Err(Error::shape("matmul_nt", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul_nt(self.value(a), self.value(b), m, n, p);
        Ok(self.push(vec![m, p], out, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let values = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, values, Op::Add(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let values = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, values, Op::Mul(a, b)))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.matrix(x, "add_row_bias")?;
        if self.array(bias).numel() != n {
            return Err(Error::shape("add_row_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias);
        let mut values = self.value(x).to_vec();
        for row in values.chunks_mut(n) {
            row.iter_mut().zip(b).for_each(|(v, b)| *v += b);
        }
        Ok(self.push(vec![m, n], values, Op::AddRowBias(x, bias)))
    }

    pub fn scale(&mut self, x: Var, c: Real) -> Var {
        self.map(x, Op::Scale(x, c), |v| v * c)
    }

    /// Multiplies elementwise by a constant (sparsity masks, dropout masks).
    pub fn mask_mul(&mut self, x: Var, mask: Vec<Real>) -> Result<Var> {
        if mask.len() != self.array(x).numel() {
            return Err(Error::shape("mask_mul", self.shape(x), &[mask.len()]));
        }
        let values = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(shape, values, Op::MaskMul(x, mask)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), Real::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, k) = self.matrix(x, "softmax_rows")?;
        let mut values = self.value(x).to_vec();
        for row in values.chunks_mut(k.max(1)) {
            let max = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        Ok(self.push(vec![m, k], values, Op::SoftmaxRows(x)))
    }

    /// Row `b` of `x` scaled by `weights[b, col]`.
    pub fn scale_rows_by_column(&mut self, x: Var, weights: Var, col: usize) -> Result<Var> {
        let (m, n) = self.matrix(x, "scale_rows_by_column")?;
        let (wm, wk) = self.matrix(weights, "scale_rows_by_column")?;
        if wm != m {
            return Err(Error::shape("scale_rows_by_column", self.shape(x), self.shape(weights)));
        }
        if col >= wk {
            return Err(Error::Index {
                what: "weight column",
                index: col,
                len: wk,
            });
        }
        let w = self.value(weights);
        let mut values = self.value(x).to_vec();
        for (b, row) in values.chunks_mut(n.max(1)).enumerate() {
            let s = w[b * wk + col];
            row.iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.push(vec![m, n], values, Op::ScaleRowsByColumn { x, weights, col }))
    }

    /// `[a ; b]` along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, na) = self.matrix(a, "concat_cols")?;
        let (mb, nb) = self.matrix(b, "concat_cols")?;
        if m != mb {
            return Err(Error::shape("concat_cols", self.shape(a), self.shape(b)));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let mut values = Vec::with_capacity(m * (na + nb));
        for r in 0..m {
            values.extend_from_slice(&va[r * na..(r + 1) * na]);
            values.extend_from_slice(&vb[r * nb..(r + 1) * nb]);
        }
        Ok(self.push(vec![m, na + nb], values, Op::ConcatCols(a, b)))
    }

    /// Selects rows of a matrix (embedding lookup, relation grouping).
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = self.matrix(x, "gather_rows")?;
        let src = self.value(x);
        let mut values = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(Error::Index {
                    what: "row",
                    index: i,
                    len: m,
                });
            }
            values.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        Ok(self.push(vec![idx.len(), n], values, Op::GatherRows(x, idx.to_vec())))
    }

    /// Inverse of grouping: places the rows of each part at the given
    /// positions of a `rows`-row output. Every position must be covered once.
    pub fn assemble_rows(&mut self, parts: Vec<(Var, Vec<usize>)>, rows: usize) -> Result<Var> {
        let cols = match parts.first() {
            Some((v, _)) => self.matrix(*v, "assemble_rows")?.1,
            None => 0,
        };
        let mut values = vec![0.0; rows * cols];
        let mut seen = vec![false; rows];
        for (v, idx) in &parts {
            let (m, n) = self.matrix(*v, "assemble_rows")?;
            if n != cols || m != idx.len() {
                return Err(Error::shape("assemble_rows", self.shape(*v), &[idx.len(), cols]));
            }
            let src = self.value(*v);
            for (r, &dst) in idx.iter().enumerate() {
                if dst >= rows || seen[dst] {
                    return Err(Error::Index {
                        what: "assembled row",
                        index: dst,
                        len: rows,
                    });
                }
                seen[dst] = true;
                values[dst * cols..(dst + 1) * cols].copy_from_slice(&src[r * n..(r + 1) * n]);
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Index {
                what: "unassembled row",
                index: missing,
                len: rows,
            });
        }
        Ok(self.push(vec![rows, cols], values, Op::AssembleRows(parts)))
    }

    /// Batch norm over the rows of `x` using the batch's own statistics.
    pub fn batchnorm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: Real,
    ) -> Result<(Var, BatchStats)> {
        let (b, d) = self.matrix(x, "batchnorm")?;
        self.check_affine_params(gamma, beta, d)?;
        if b < 2 {
            return Err(Error::BatchSize(b));
        }
        let xs = self.value(x);
        let mut mean = vec![0.0; d];
        for row in xs.chunks(d) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= b as Real);
        let mut var = vec![0.0; d];
        for row in xs.chunks(d) {
            for j in 0..d {
                let c = row[j] - mean[j];
                var[j] += c * c;
            }
        }
        let biased: Vec<Real> = var.iter().map(|v| v / b as Real).collect();
        let unbiased: Vec<Real> = var.iter().map(|v| v / (b - 1) as Real).collect();
        let inv_std: Vec<Real> = biased.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let stats = BatchStats {
            mean: mean.clone(),
            var: unbiased,
        };
        let v = self.normalize(x, gamma, beta, &mean, inv_std, true);
        Ok((v, stats))
    }

    /// Batch norm with fixed (running) statistics.
    pub fn batchnorm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[Real],
        running_var: &[Real],
        eps: Real,
    ) -> Result<Var> {
        let (_, d) = self.matrix(x, "batchnorm")?;
        self.check_affine_params(gamma, beta, d)?;
        if running_mean.len() != d || running_var.len() != d {
            return Err(Error::shape("batchnorm", self.shape(x), &[running_mean.len()]));
        }
        let inv_std = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        Ok(self.normalize(x, gamma, beta, running_mean, inv_std, false))
    }

    fn check_affine_params(&self, gamma: Var, beta: Var, d: usize) -> Result<()> {
        for p in [gamma, beta] {
            if self.array(p).numel() != d {
                return Err(Error::shape("batchnorm", &[d], self.shape(p)));
            }
        }
        Ok(())
    }

    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[Real],
        inv_std: Vec<Real>,
        batch_stats: bool,
    ) -> Var {
        let shape = self.shape(x).to_vec();
        let d = mean.len();
        let (g, bt) = (self.value(gamma), self.value(beta));
        let mut xhat = self.value(x).to_vec();
        let mut out = vec![0.0; xhat.len()];
        for (xr, or) in xhat.chunks_mut(d).zip(out.chunks_mut(d)) {
            for j in 0..d {
                xr[j] = (xr[j] - mean[j]) * inv_std[j];
                or[j] = g[j] * xr[j] + bt[j];
            }
        }
        self.push(
            shape,
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
        )
    }

    /// Inverted dropout. `rng == None` (eval mode) or `p == 0` is the identity.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: Real, rng: Option<&mut R>) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::param(format!("dropout probability {p} outside [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(x) };
        if p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask = (0..self.array(x).numel())
            .map(|_| if (rng.random::<f64>() as Real) < p { 0.0 } else { keep })
            .collect();
        self.mask_mul(x, mask)
    }

    /// Mean binary cross-entropy of post-sigmoid `scores` against `labels`.
    pub fn bce(&mut self, scores: Var, labels: &[Real]) -> Result<Var> {
        let s = self.value(scores);
        if s.len() != labels.len() {
            return Err(Error::shape("bce", self.shape(scores), &[labels.len()]));
        }
        if s.is_empty() {
            return Err(Error::shape("bce", self.shape(scores), &[0]));
        }
        let mut total = 0.0;
        for (&p, &y) in s.iter().zip(labels) {
            total -= y * clamp_log(p) + (1.0 - y) * clamp_log(1.0 - p);
        }
        let loss = total / s.len() as Real;
        Ok(self.push(vec![], vec![loss], Op::Bce(scores, labels.to_vec())))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().sum();
        self.push(vec![], vec![total], Op::Sum(x))
    }

    /// Records an operation with a caller-supplied backward rule.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: DiffArray,
        backward: CustomBackward,
    ) -> Var {
        let shape = output.shape().to_vec();
        self.push(shape, output.into_values(), Op::Custom(inputs.to_vec(), backward))
    }

    /// Propagates d(loss)/d(node) to every node. Intermediate gradients are
    /// recomputed from scratch; leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let numel = self.array(loss).numel();
        if numel != 1 {
            return Err(Error::Rank(self.shape(loss).to_vec()));
        }
        for n in &mut self.nodes {
            if !matches!(n.op, Op::Leaf) {
                n.array.zero_grad();
            }
        }
        if !self.array(loss).requires_grad() {
            return Ok(());
        }
        self.nodes[loss.0].array.accumulate_grad(&[1.0]);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(upstream) = node.array.take_grad() else { continue };
            backward_node(node, &upstream, before);
            node.array.accumulate_grad(&upstream);
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn sigmoid(v: Real) -> Real {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn accumulate(nodes: &mut [Node], v: Var, delta: &[Real]) {
    let a = &mut nodes[v.0].array;
    if a.requires_grad() {
        a.accumulate_grad(delta);
    }
}

fn wants_grad(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].array.requires_grad()
}

fn backward_node(node: &Node, dy: &[Real], nodes: &mut [Node]) {
    let y = node.array.values();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, n) = nodes[a.0].array.expect_matrix("matmul").unwrap();
            let p = nodes[b.0].array.cols();
            if wants_grad(nodes, *a) {
                let da = kernels::matmul_nt(dy, nodes[b.0].array.values(), m, p, n);
                accumulate(nodes, *a, &da);
            }
            if wants_grad(nodes, *b) {
                let db = kernels::matmul_tn(nodes[a.0].array.values(), dy, m, n, p);
                accumulate(nodes, *b, &db);
            }
        }
        Op::MatMulNt(a, b) => {
            let (m, n) = nodes[a.0].array.expect_matrix("matmul_nt").unwrap();
            let p = nodes[b.0].array.rows();
            if wants_grad(nodes, *a) {
                let da = kernels::matmul(dy, nodes[b.0].array.values(), m, p, n);
                accumulate(nodes, *a, &da);
            }
            if wants_grad(nodes, *b) {
                let db = kernels::matmul_tn(dy, nodes[a.0].array.values(), m, p, n);
                accumulate(nodes, *b, &db);
            }
        }
        Op::Add(a, b) => {
            accumulate(nodes, *a, dy);
            accumulate(nodes, *b, dy);
        }
        Op::Mul(a, b) => {
            if wants_grad(nodes, *a) {
                let da: Vec<Real> = dy.iter().zip(nodes[b.0].array.values()).map(|(g, v)| g * v).collect();
                accumulate(nodes, *a, &da);
            }
            if wants_grad(nodes, *b) {
                let db: Vec<Real> = dy.iter().zip(nodes[a.0].array.values()).map(|(g, v)| g * v).collect();
                accumulate(nodes, *b, &db);
            }
        }
        Op::AddRowBias(x, bias) => {
            accumulate(nodes, *x, dy);
            if wants_grad(nodes, *bias) {
                let n = nodes[bias.0].array.numel();
                let mut db = vec![0.0; n];
                for row in dy.chunks(n.max(1)) {
                    db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                }
                accumulate(nodes, *bias, &db);
            }
        }
        Op::Scale(x, c) => {
            let dx: Vec<Real> = dy.iter().map(|g| g * c).collect();
            accumulate(nodes, *x, &dx);
        }
        Op::MaskMul(x, mask) => {
            let dx: Vec<Real> = dy.iter().zip(mask).map(|(g, m)| g * m).collect();
            accumulate(nodes, *x, &dx);
        }
        Op::Relu(x) => {
            let dx: Vec<Real> = dy
                .iter()
                .zip(nodes[x.0].array.values())
                .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(nodes, *x, &dx);
        }
        Op::Tanh(x) => {
            let dx: Vec<Real> = dy.iter().zip(y).map(|(g, t)| g * (1.0 - t * t)).collect();
            accumulate(nodes, *x, &dx);
        }
        Op::Sigmoid(x) => {
            let dx: Vec<Real> = dy.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
            accumulate(nodes, *x, &dx);
        }
        Op::SoftmaxRows(x) => {
            let k = node.array.cols().max(1);
            let mut dx = vec![0.0; dy.len()];
            for ((dxr, dyr), yr) in dx.chunks_mut(k).zip(dy.chunks(k)).zip(y.chunks(k)) {
                let inner: Real = dyr.iter().zip(yr).map(|(g, s)| g * s).sum();
                for j in 0..k {
                    dxr[j] = yr[j] * (dyr[j] - inner);
                }
            }
            accumulate(nodes, *x, &dx);
        }
        Op::ScaleRowsByColumn { x, weights, col } => {
            let n = node.array.cols().max(1);
            let wk = nodes[weights.0].array.cols();
            if wants_grad(nodes, *x) {
                let w = nodes[weights.0].array.values();
                let mut dx = dy.to_vec();
                for (b, row) in dx.chunks_mut(n).enumerate() {
                    let s = w[b * wk + col];
                    row.iter_mut().for_each(|v| *v *= s);
                }
                accumulate(nodes, *x, &dx);
            }
            if wants_grad(nodes, *weights) {
                let xs = nodes[x.0].array.values();
                let mut dw = vec![0.0; nodes[weights.0].array.numel()];
                for (b, (gr, xr)) in dy.chunks(n).zip(xs.chunks(n)).enumerate() {
                    dw[b * wk + col] = gr.iter().zip(xr).map(|(g, v)| g * v).sum();
                }
                accumulate(nodes, *weights, &dw);
            }
        }
        Op::ConcatCols(a, b) => {
            let na = nodes[a.0].array.cols();
            let nb = nodes[b.0].array.cols();
            let width = na + nb;
            let mut da = Vec::with_capacity(dy.len() / width.max(1) * na);
            let mut db = Vec::with_capacity(dy.len() / width.max(1) * nb);
            for row in dy.chunks(width.max(1)) {
                da.extend_from_slice(&row[..na]);
                db.extend_from_slice(&row[na..]);
            }
            accumulate(nodes, *a, &da);
            accumulate(nodes, *b, &db);
        }
        Op::GatherRows(x, idx) => {
            if wants_grad(nodes, *x) {
                let n = node.array.cols();
                let mut dx = vec![0.0; nodes[x.0].array.numel()];
                for (r, &src) in idx.iter().enumerate() {
                    let target = &mut dx[src * n..(src + 1) * n];
                    target.iter_mut().zip(&dy[r * n..(r + 1) * n]).for_each(|(d, g)| *d += g);
                }
                accumulate(nodes, *x, &dx);
            }
        }
        Op::AssembleRows(parts) => {
            let n = node.array.cols();
            for (v, idx) in parts {
                if !wants_grad(nodes, *v) {
                    continue;
                }
                let mut dv = Vec::with_capacity(idx.len() * n);
                for &dst in idx {
                    dv.extend_from_slice(&dy[dst * n..(dst + 1) * n]);
                }
                accumulate(nodes, *v, &dv);
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats,
        } => {
            let d = inv_std.len();
            let b = dy.len() / d.max(1);
            let mut sum_dy = vec![0.0; d];
            let mut sum_dy_xhat = vec![0.0; d];
            for (gr, xr) in dy.chunks(d).zip(xhat.chunks(d)) {
                for j in 0..d {
                    sum_dy[j] += gr[j];
                    sum_dy_xhat[j] += gr[j] * xr[j];
                }
            }
            if wants_grad(nodes, *x) {
                let g = nodes[gamma.0].array.values();
                let mut dx = vec![0.0; dy.len()];
                for ((dxr, gr), xr) in dx.chunks_mut(d).zip(dy.chunks(d)).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        dxr[j] = if *batch_stats {
                            g[j] * inv_std[j] / b as Real
                                * (b as Real * gr[j] - sum_dy[j] - xr[j] * sum_dy_xhat[j])
                        } else {
                            g[j] * inv_std[j] * gr[j]
                        };
                    }
                }
                accumulate(nodes, *x, &dx);
            }
            accumulate(nodes, *gamma, &sum_dy_xhat);
            accumulate(nodes, *beta, &sum_dy);
        }
        Op::Bce(scores, labels) => {
            let s = nodes[scores.0].array.values();
            let scale = dy[0] / s.len() as Real;
            let ds: Vec<Real> = s
                .iter()
                .zip(labels)
                .map(|(&p, &y)| {
                    let pos = if p > LOG_CLAMP { -y / p } else { 0.0 };
                    let neg = if 1.0 - p > LOG_CLAMP { (1.0 - y) / (1.0 - p) } else { 0.0 };
                    scale * (pos + neg)
                })
                .collect();
            accumulate(nodes, *scores, &ds);
        }
        Op::Sum(x) => {
            let dx = vec![dy[0]; nodes[x.0].array.numel()];
            accumulate(nodes, *x, &dx);
        }
        Op::Custom(inputs, rule) => {
            let grads = {
                let arrays: Vec<&DiffArray> = inputs.iter().map(|v| &nodes[v.0].array).collect();
                rule(&arrays, &node.array, dy)
            };
            for (v, g) in inputs.iter().zip(grads) {
                accumulate(nodes, *v, &g);
            }
        }
    }
}
