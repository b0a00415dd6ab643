//! Dense f64 tensors and a reverse-mode differentiation tape.
//!
//! The tape is an arena: every operation appends a node holding its output
//! value, its gradient buffer, and enough information to replay the chain
//! rule in reverse. Leaves are copied in from [`Tensor`] values; after
//! [`Tape::backward`] the per-leaf gradients can be read back out and folded
//! into persistent tensors with [`Tensor::accumulate_grad`].

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Additive penalty applied to masked attention logits. Large enough that
/// `exp` underflows to exactly 0.0 after max subtraction for any score this
/// crate produces.
pub const MASK_PENALTY: f64 = 1e9;

// ── Tensor ──────────────────────────────────────────────────────────────

/// Shape-tagged multidimensional array of f64 in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor, validating that dimensions are positive, the data
    /// length matches the shape product, and every element is finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements but data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("tensor data contains NaN/Inf".into()));
        }
        Ok(Tensor { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel])
    }

    pub fn ones(shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![1.0; numel])
    }

    pub fn scalar(v: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![v])
    }

    /// Normal(0, std) initialization.
    pub fn randn(shape: Vec<usize>, std: f64, rng: &mut SplitMix64) -> Result<Self> {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.normal() * std).collect();
        Tensor::new(shape, data)
    }

    pub fn requires_grad(mut self, yes: bool) -> Self {
        self.requires_grad = yes;
        self
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into this tensor's gradient buffer, allocating it at zero on
    /// first use. The caller is responsible for zeroing between steps.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "gradient length {} does not match tensor length {}",
                g.len(),
                self.data.len()
            )));
        }
        let buf = self.grad.get_or_insert_with(|| vec![0.0; self.data.len()]);
        for (dst, src) in buf.iter_mut().zip(g) {
            *dst += src;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

// ── Raw matrix kernels ──────────────────────────────────────────────────

/// C[m,n] = A[m,k] · B[k,n]
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

/// C[m,n] = A[m,k] · B[n,k]ᵀ
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += arow[p] * brow[p];
            }
            c[i * n + j] = s;
        }
    }
    c
}

/// C[k,n] = A[m,k]ᵀ · B[m,n]
fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = arow[p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += av * brow[j];
            }
        }
    }
    c
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

// ── Tape ────────────────────────────────────────────────────────────────

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    /// a[m,k] · b[n,k]ᵀ — used for the tied output projection.
    MatMulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    /// [r,c] plus a [1,c] row broadcast across all rows.
    AddRow { a: NodeId, row: NodeId },
    Scale { a: NodeId, factor: f64 },
    Relu { a: NodeId },
    Sum { a: NodeId },
    Softmax { a: NodeId, axis: usize },
    /// Softmax along rows of a 2-D tensor after adding -MASK_PENALTY to
    /// masked logits; a row with no visible entry yields all zeros. The
    /// backward rule only needs the output weights, not the mask itself.
    MaskedSoftmax { a: NodeId },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, eps: f64 },
    CrossEntropy { logits: NodeId, targets: Vec<usize> },
    Embedding { table: NodeId, ids: Vec<usize> },
    GatherRows { a: NodeId, rows: Vec<usize> },
    MeanRows { a: NodeId, rows: Vec<usize> },
    SliceCols { a: NodeId, start: usize, width: usize },
    ConcatCols { parts: Vec<NodeId> },
    ConcatRows { parts: Vec<NodeId> },
    Dropout { a: NodeId, scale_mask: Vec<f64> },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Vec<f64>,
    needs_grad: bool,
}

/// Recorded forward computation: an append-only arena of operations in
/// topological order (every node's inputs precede it).
pub struct Tape {
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Copies a tensor onto the tape as a leaf.
    pub fn leaf(&mut self, t: &Tensor) -> NodeId {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad_flag())
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    /// Gradient buffer of a node (zeros until `backward` has run).
    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].grad
    }

    /// Value of a scalar node.
    pub fn scalar_value(&self, id: NodeId) -> Result<f64> {
        if self.nodes[id].data.len() != 1 {
            return Err(Error::Shape(format!(
                "expected scalar node, got shape {:?}",
                self.nodes[id].shape
            )));
        }
        Ok(self.nodes[id].data[0])
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> NodeId {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value produced by {op:?}"
        );
        let grad = vec![0.0; data.len()];
        self.nodes.push(Node { op, shape, data, grad, needs_grad });
        self.nodes.len() - 1
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    fn dims2(&self, id: NodeId, what: &str) -> Result<(usize, usize)> {
        let s = &self.nodes[id].shape;
        if s.len() != 2 {
            return Err(Error::Shape(format!("{what}: expected 2-D tensor, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    // ── Forward operations ──────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (kb, n) = self.dims2(b, "matmul rhs")?;
        if k != kb {
            return Err(Error::Shape(format!(
                "matmul: inner dimensions disagree, {:?} x {:?}",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        let data = mm(&self.nodes[a].data, &self.nodes[b].data, m, k, n);
        let needs = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], data, Op::MatMul { a, b }, needs))
    }

    /// `a · bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul_nt lhs")?;
        let (n, kb) = self.dims2(b, "matmul_nt rhs")?;
        if k != kb {
            return Err(Error::Shape(format!(
                "matmul_nt: inner dimensions disagree, {:?} x transpose of {:?}",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        let data = mm_nt(&self.nodes[a].data, &self.nodes[b].data, m, k, n);
        let needs = self.needs(&[a, b]);
        Ok(self.push(vec![m, n], data, Op::MatMulNT { a, b }, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::Shape(format!(
                "add: shapes disagree, {:?} vs {:?}",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        let data = self.nodes[a]
            .data
            .iter()
            .zip(&self.nodes[b].data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a].shape.clone();
        let needs = self.needs(&[a, b]);
        Ok(self.push(shape, data, Op::Add { a, b }, needs))
    }

    /// Adds a `[1,c]` row vector to every row of a `[r,c]` tensor.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "add_row lhs")?;
        let (rr, rc) = self.dims2(row, "add_row row")?;
        if rr != 1 || rc != c {
            return Err(Error::Shape(format!(
                "add_row: row shape {:?} does not broadcast over {:?}",
                self.nodes[row].shape, self.nodes[a].shape
            )));
        }
        let rowv = &self.nodes[row].data;
        let data = self.nodes[a]
            .data
            .iter()
            .enumerate()
            .map(|(i, x)| x + rowv[i % c])
            .collect();
        let needs = self.needs(&[a, row]);
        Ok(self.push(vec![r, c], data, Op::AddRow { a, row }, needs))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(Error::Parameter("scale: factor must be finite".into()));
        }
        let data = self.nodes[a].data.iter().map(|x| x * factor).collect();
        let shape = self.nodes[a].shape.clone();
        let needs = self.needs(&[a]);
        Ok(self.push(shape, data, Op::Scale { a, factor }, needs))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let data = self.nodes[a].data.iter().map(|&x| x.max(0.0)).collect();
        let shape = self.nodes[a].shape.clone();
        let needs = self.needs(&[a]);
        Ok(self.push(shape, data, Op::Relu { a }, needs))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[a].data.iter().sum();
        let needs = self.needs(&[a]);
        Ok(self.push(vec![1], vec![s], Op::Sum { a }, needs))
    }

    /// Numerically stable softmax along `axis`: the slice maximum is
    /// subtracted before exponentiation, so inputs up to ~1e4 in magnitude
    /// cannot overflow.
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.nodes[a].shape.clone();
        if axis >= shape.len() {
            return Err(Error::Shape(format!(
                "softmax: axis {axis} out of range for shape {shape:?}"
            )));
        }
        if shape[axis] == 0 {
            return Err(Error::Shape(format!("softmax: axis {axis} is empty in {shape:?}")));
        }
        let axis_len = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = &self.nodes[a].data;
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * axis_len * inner + j * inner + i;
                let mut maxv = f64::NEG_INFINITY;
                for j in 0..axis_len {
                    maxv = maxv.max(src[at(j)]);
                }
                let mut total = 0.0;
                for j in 0..axis_len {
                    let e = libm::exp(src[at(j)] - maxv);
                    data[at(j)] = e;
                    total += e;
                }
                for j in 0..axis_len {
                    data[at(j)] /= total;
                }
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(shape, data, Op::Softmax { a, axis }, needs))
    }

    /// Row-wise softmax of a 2-D score matrix with an additive visibility
    /// mask: hidden entries get -[`MASK_PENALTY`] before the (stable)
    /// softmax, which drives their weights to exactly zero. A row with no
    /// visible entry yields all zeros — the query attends to nothing rather
    /// than to a uniform mixture.
    pub fn masked_softmax(&mut self, a: NodeId, mask: &[bool]) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "masked_softmax")?;
        if mask.len() != r * c {
            return Err(Error::Shape(format!(
                "masked_softmax: mask length {} does not match {:?}",
                mask.len(),
                self.nodes[a].shape
            )));
        }
        let src = &self.nodes[a].data;
        let mut data = vec![0.0; src.len()];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mrow = &mask[i * c..(i + 1) * c];
            if !mrow.iter().any(|&v| v) {
                continue; // no visible keys: zero context
            }
            let mut maxv = f64::NEG_INFINITY;
            for j in 0..c {
                let s = if mrow[j] { row[j] } else { row[j] - MASK_PENALTY };
                maxv = maxv.max(s);
            }
            let mut total = 0.0;
            for j in 0..c {
                let s = if mrow[j] { row[j] } else { row[j] - MASK_PENALTY };
                let e = libm::exp(s - maxv);
                data[i * c + j] = e;
                total += e;
            }
            for j in 0..c {
                data[i * c + j] /= total;
            }
        }
        let needs = self.needs(&[a]);
        Ok(self.push(vec![r, c], data, Op::MaskedSoftmax { a }, needs))
    }

    /// Layer normalization over the last dimension followed by the
    /// elementwise affine `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        if eps <= 0.0 || !eps.is_finite() {
            return Err(Error::Parameter(format!("layer_norm: eps must be > 0, got {eps}")));
        }
        let shape = self.nodes[x].shape.clone();
        let d = *shape.last().ok_or_else(|| {
            Error::Shape("layer_norm: input must have at least one dimension".into())
        })?;
        for (name, id) in [("gamma", gamma), ("beta", beta)] {
            let s = &self.nodes[id].shape;
            if s.len() != 1 || s[0] != d {
                return Err(Error::Shape(format!(
                    "layer_norm: {name} shape {s:?} does not match last dimension {d}"
                )));
            }
        }
        let src = &self.nodes[x].data;
        let gv = &self.nodes[gamma].data;
        let bv = &self.nodes[beta].data;
        let rows = src.len() / d;
        let mut data = vec![0.0; src.len()];
        for row in 0..rows {
            let xs = &src[row * d..(row + 1) * d];
            let mean = xs.iter().sum::<f64>() / d as f64;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv_std = 1.0 / libm::sqrt(var + eps);
            for j in 0..d {
                data[row * d + j] = (xs[j] - mean) * inv_std * gv[j] + bv[j];
            }
        }
        let needs = self.needs(&[x, gamma, beta]);
        Ok(self.push(shape, data, Op::LayerNorm { x, gamma, beta, eps }, needs))
    }

    /// Mean over the batch of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let (batch, classes) = self.dims2(logits, "cross_entropy logits")?;
        if targets.len() != batch {
            return Err(Error::Shape(format!(
                "cross_entropy: {} targets for a batch of {batch}",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::Index(format!(
                "cross_entropy: target {bad} out of range for {classes} classes"
            )));
        }
        let src = &self.nodes[logits].data;
        let mut total = 0.0;
        for (b, &t) in targets.iter().enumerate() {
            let row = &src[b * classes..(b + 1) * classes];
            let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = libm::log(row.iter().map(|&v| libm::exp(v - maxv)).sum::<f64>());
            total -= row[t] - maxv - lse;
        }
        let loss = total / batch as f64;
        let needs = self.needs(&[logits]);
        Ok(self.push(vec![1], vec![loss], Op::CrossEntropy { logits, targets: targets.to_vec() }, needs))
    }

    /// Row lookup into an embedding table: output row `t` is `table[ids[t]]`.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (v, d) = self.dims2(table, "embedding table")?;
        if ids.is_empty() {
            return Err(Error::Shape("embedding: empty id sequence".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Index(format!(
                "embedding: id {bad} out of range for table with {v} rows"
            )));
        }
        let src = &self.nodes[table].data;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        let needs = self.needs(&[table]);
        Ok(self.push(vec![ids.len(), d], data, Op::Embedding { table, ids: ids.to_vec() }, needs))
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "gather_rows")?;
        if rows.is_empty() {
            return Err(Error::Shape("gather_rows: empty row selection".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!("gather_rows: row {bad} out of range for {r} rows")));
        }
        let src = &self.nodes[a].data;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &row in rows {
            data.extend_from_slice(&src[row * c..(row + 1) * c]);
        }
        let needs = self.needs(&[a]);
        Ok(self.push(vec![rows.len(), c], data, Op::GatherRows { a, rows: rows.to_vec() }, needs))
    }

    /// Mean of the selected rows, as a `[1,c]` tensor.
    pub fn mean_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "mean_rows")?;
        if rows.is_empty() {
            return Err(Error::Shape("mean_rows: empty row selection".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::Index(format!("mean_rows: row {bad} out of range for {r} rows")));
        }
        let src = &self.nodes[a].data;
        let mut data = vec![0.0; c];
        for &row in rows {
            for j in 0..c {
                data[j] += src[row * c + j];
            }
        }
        let inv = 1.0 / rows.len() as f64;
        data.iter_mut().for_each(|v| *v *= inv);
        let needs = self.needs(&[a]);
        Ok(self.push(vec![1, c], data, Op::MeanRows { a, rows: rows.to_vec() }, needs))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> Result<NodeId> {
        let (r, c) = self.dims2(a, "slice_cols")?;
        if width == 0 || start + width > c {
            return Err(Error::Shape(format!(
                "slice_cols: columns {start}..{} out of range for {c} columns",
                start + width
            )));
        }
        let src = &self.nodes[a].data;
        let mut data = Vec::with_capacity(r * width);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + width]);
        }
        let needs = self.needs(&[a]);
        Ok(self.push(vec![r, width], data, Op::SliceCols { a, start, width }, needs))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_cols: no parts".into()));
        }
        let (r, _) = self.dims2(parts[0], "concat_cols")?;
        let mut total_c = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols part")?;
            if pr != r {
                return Err(Error::Shape(format!(
                    "concat_cols: row counts disagree, {} vs {}",
                    r, pr
                )));
            }
            total_c += pc;
        }
        let mut data = Vec::with_capacity(r * total_c);
        for i in 0..r {
            for &p in parts {
                let pc = self.nodes[p].shape[1];
                let src = &self.nodes[p].data;
                data.extend_from_slice(&src[i * pc..(i + 1) * pc]);
            }
        }
        let needs = self.needs(parts);
        Ok(self.push(vec![r, total_c], data, Op::ConcatCols { parts: parts.to_vec() }, needs))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Shape("concat_rows: no parts".into()));
        }
        let (_, c) = self.dims2(parts[0], "concat_rows")?;
        let mut total_r = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_rows part")?;
            if pc != c {
                return Err(Error::Shape(format!(
                    "concat_rows: column counts disagree, {} vs {}",
                    c, pc
                )));
            }
            total_r += pr;
        }
        let mut data = Vec::with_capacity(total_r * c);
        for &p in parts {
            data.extend_from_slice(&self.nodes[p].data);
        }
        let needs = self.needs(parts);
        Ok(self.push(vec![total_r, c], data, Op::ConcatRows { parts: parts.to_vec() }, needs))
    }

    /// Inverted dropout: keeps each element with probability `1-p`, scaling
    /// survivors by `1/(1-p)`. `p == 0` is a no-op that records nothing.
    pub fn dropout(&mut self, a: NodeId, p: f64, rng: &mut SplitMix64) -> Result<NodeId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout: p must be in [0, 1), got {p}")));
        }
        if p == 0.0 {
            return Ok(a);
        }
        let keep_scale = 1.0 / (1.0 - p);
        let scale_mask: Vec<f64> = (0..self.nodes[a].data.len())
            .map(|_| if rng.next_f64() >= p { keep_scale } else { 0.0 })
            .collect();
        let data = self.nodes[a]
            .data
            .iter()
            .zip(&scale_mask)
            .map(|(x, s)| x * s)
            .collect();
        let shape = self.nodes[a].shape.clone();
        let needs = self.needs(&[a]);
        Ok(self.push(shape, data, Op::Dropout { a, scale_mask }, needs))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar loss. Non-leaf gradient buffers are
    /// reset, then the chain rule is replayed in reverse node order; leaf
    /// gradients accumulate across calls, so the caller zeroes (or rebuilds
    /// the tape) between optimizer steps.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if loss >= self.nodes.len() {
            return Err(Error::Index(format!("backward: node {loss} is not on this tape")));
        }
        if self.nodes[loss].data.len() != 1 {
            return Err(Error::Shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss].shape
            )));
        }
        for node in self.nodes.iter_mut() {
            if !matches!(node.op, Op::Leaf) {
                node.grad.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        self.nodes[loss].grad[0] += 1.0;

        for i in (0..=loss).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = self.nodes[i].grad.clone();
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                    let n = self.nodes[b].shape[1];
                    let da = mm_nt(&g, &self.nodes[b].data, m, n, k);
                    let db = mm_tn(&self.nodes[a].data, &g, m, k, n);
                    add_into(&mut self.nodes[a].grad, &da);
                    add_into(&mut self.nodes[b].grad, &db);
                }
                Op::MatMulNT { a, b } => {
                    let (m, k) = (self.nodes[a].shape[0], self.nodes[a].shape[1]);
                    let n = self.nodes[b].shape[0];
                    let da = mm(&g, &self.nodes[b].data, m, n, k);
                    let db = mm_tn(&g, &self.nodes[a].data, m, n, k);
                    add_into(&mut self.nodes[a].grad, &da);
                    add_into(&mut self.nodes[b].grad, &db);
                }
                Op::Add { a, b } => {
                    add_into(&mut self.nodes[a].grad, &g);
                    add_into(&mut self.nodes[b].grad, &g);
                }
                Op::AddRow { a, row } => {
                    add_into(&mut self.nodes[a].grad, &g);
                    let c = self.nodes[row].shape[1];
                    for (i, gv) in g.iter().enumerate() {
                        self.nodes[row].grad[i % c] += gv;
                    }
                }
                Op::Scale { a, factor } => {
                    for (dst, gv) in self.nodes[a].grad.iter_mut().zip(&g) {
                        *dst += gv * factor;
                    }
                }
                Op::Relu { a } => {
                    let xs = self.nodes[a].data.clone();
                    for ((dst, gv), x) in self.nodes[a].grad.iter_mut().zip(&g).zip(&xs) {
                        if *x > 0.0 {
                            *dst += gv;
                        }
                    }
                }
                Op::Sum { a } => {
                    let gv = g[0];
                    self.nodes[a].grad.iter_mut().for_each(|v| *v += gv);
                }
                Op::Softmax { a, axis } => {
                    let shape = self.nodes[i].shape.clone();
                    let out = self.nodes[i].data.clone();
                    let axis_len = shape[axis];
                    let outer: usize = shape[..axis].iter().product();
                    let inner: usize = shape[axis + 1..].iter().product();
                    let mut dg = vec![0.0; out.len()];
                    for o in 0..outer {
                        for ii in 0..inner {
                            let at = |j: usize| o * axis_len * inner + j * inner + ii;
                            let mut dot = 0.0;
                            for j in 0..axis_len {
                                dot += g[at(j)] * out[at(j)];
                            }
                            for j in 0..axis_len {
                                dg[at(j)] = out[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                    add_into(&mut self.nodes[a].grad, &dg);
                }
                Op::MaskedSoftmax { a } => {
                    // Same Jacobian as softmax; zeroed entries (masked or
                    // empty rows) have weight 0 and thus zero sensitivity.
                    let (r, c) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
                    let out = self.nodes[i].data.clone();
                    let mut dg = vec![0.0; out.len()];
                    for row in 0..r {
                        let mut dot = 0.0;
                        for j in 0..c {
                            dot += g[row * c + j] * out[row * c + j];
                        }
                        for j in 0..c {
                            dg[row * c + j] = out[row * c + j] * (g[row * c + j] - dot);
                        }
                    }
                    add_into(&mut self.nodes[a].grad, &dg);
                }
                Op::LayerNorm { x, gamma, beta, eps } => {
                    let d = *self.nodes[x].shape.last().unwrap();
                    let xs = self.nodes[x].data.clone();
                    let gv = self.nodes[gamma].data.clone();
                    let rows = xs.len() / d;
                    let mut dx = vec![0.0; xs.len()];
                    let mut dgamma = vec![0.0; d];
                    let mut dbeta = vec![0.0; d];
                    for row in 0..rows {
                        let xrow = &xs[row * d..(row + 1) * d];
                        let grow = &g[row * d..(row + 1) * d];
                        let mean = xrow.iter().sum::<f64>() / d as f64;
                        let var =
                            xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                        let inv_std = 1.0 / libm::sqrt(var + eps);
                        let xhat: Vec<f64> =
                            xrow.iter().map(|&v| (v - mean) * inv_std).collect();
                        let mut dxhat = vec![0.0; d];
                        for j in 0..d {
                            dgamma[j] += grow[j] * xhat[j];
                            dbeta[j] += grow[j];
                            dxhat[j] = grow[j] * gv[j];
                        }
                        let sum_dxhat: f64 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f64 =
                            dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                        let df = d as f64;
                        for j in 0..d {
                            dx[row * d + j] = inv_std / df
                                * (df * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                        }
                    }
                    add_into(&mut self.nodes[x].grad, &dx);
                    add_into(&mut self.nodes[gamma].grad, &dgamma);
                    add_into(&mut self.nodes[beta].grad, &dbeta);
                }
                Op::CrossEntropy { logits, targets } => {
                    let (batch, classes) =
                        (self.nodes[logits].shape[0], self.nodes[logits].shape[1]);
                    let src = self.nodes[logits].data.clone();
                    let scale = g[0] / batch as f64;
                    let mut dl = vec![0.0; src.len()];
                    for (b, &t) in targets.iter().enumerate() {
                        let row = &src[b * classes..(b + 1) * classes];
                        let maxv = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let exps: Vec<f64> = row.iter().map(|&v| libm::exp(v - maxv)).collect();
                        let total: f64 = exps.iter().sum();
                        for j in 0..classes {
                            let p = exps[j] / total;
                            let y = if j == t { 1.0 } else { 0.0 };
                            dl[b * classes + j] = scale * (p - y);
                        }
                    }
                    add_into(&mut self.nodes[logits].grad, &dl);
                }
                Op::Embedding { table, ids } => {
                    let d = self.nodes[table].shape[1];
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..d {
                            self.nodes[table].grad[id * d + j] += g[row * d + j];
                        }
                    }
                }
                Op::GatherRows { a, rows } => {
                    let c = self.nodes[a].shape[1];
                    for (out_row, &in_row) in rows.iter().enumerate() {
                        for j in 0..c {
                            self.nodes[a].grad[in_row * c + j] += g[out_row * c + j];
                        }
                    }
                }
                Op::MeanRows { a, rows } => {
                    let c = self.nodes[a].shape[1];
                    let inv = 1.0 / rows.len() as f64;
                    for &in_row in &rows {
                        for j in 0..c {
                            self.nodes[a].grad[in_row * c + j] += g[j] * inv;
                        }
                    }
                }
                Op::SliceCols { a, start, width } => {
                    let c = self.nodes[a].shape[1];
                    let r = self.nodes[a].shape[0];
                    for i2 in 0..r {
                        for j in 0..width {
                            self.nodes[a].grad[i2 * c + start + j] += g[i2 * width + j];
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let r = self.nodes[i].shape[0];
                    let total_c = self.nodes[i].shape[1];
                    let mut offset = 0;
                    for &p in &parts {
                        let pc = self.nodes[p].shape[1];
                        for i2 in 0..r {
                            for j in 0..pc {
                                self.nodes[p].grad[i2 * pc + j] +=
                                    g[i2 * total_c + offset + j];
                            }
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in &parts {
                        let len = self.nodes[p].data.len();
                        let gp = &g[offset..offset + len];
                        add_into(&mut self.nodes[p].grad, gp);
                        offset += len;
                    }
                }
                Op::Dropout { a, scale_mask } => {
                    for ((dst, gv), s) in
                        self.nodes[a].grad.iter_mut().zip(&g).zip(&scale_mask)
                    {
                        *dst += gv * s;
                    }
                }
            }
        }
        Ok(())
    }
}
