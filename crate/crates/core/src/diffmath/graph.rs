use super::tensor::{dot, norm, Tensor};
use super::DiffError;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    EmbedGather {
        table: NodeId,
        indices: Vec<usize>,
    },
    Conv1d {
        input: NodeId,
        filters: NodeId,
        bias: NodeId,
    },
    Tanh {
        input: NodeId,
    },
    MeanRows {
        input: NodeId,
    },
    Cosine {
        u: NodeId,
        v: NodeId,
    },
    Dot {
        u: NodeId,
        v: NodeId,
    },
    Scale {
        input: NodeId,
        factor: f64,
    },
    Add {
        lhs: NodeId,
        rhs: NodeId,
    },
    Hinge {
        input: NodeId,
    },
    LogSumExp {
        inputs: Vec<NodeId>,
    },
    MaxOver {
        inputs: Vec<NodeId>,
        argmax: usize,
    },
    NegLogSoftmaxAt {
        inputs: Vec<NodeId>,
        target: usize,
    },
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Tensor,
    op: Op,
}

/// An append-only computation graph for reverse-mode differentiation.
///
/// Every operation appends a node holding its value, a gradient slot of the
/// same shape (initialized to zeros), and the identities of its parents.
/// Parents always precede children, so reverse creation order is a valid
/// reverse topological order for backpropagation.
///
/// A graph instance is single-threaded; independent graphs share nothing and
/// may be used concurrently.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let grad = Tensor::zeros(value.shape());
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Inserts an input node. Both trainable parameters and constants enter
    /// the graph this way; the distinction is the caller's.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.leaf(Tensor::scalar(v))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].grad
    }

    /// Value of a scalar node.
    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad.data_mut().fill(0.0);
        }
    }

    /// Gathers rows of a `[rows, dim]` table into a `[indices.len(), dim]`
    /// matrix.
    pub fn embed_gather(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId, DiffError> {
        let t = self.value(table);
        let &[rows, dim] = t.shape() else {
            return Err(DiffError::ShapeMismatch {
                op: "embed_gather",
                detail: format!("table must be 2-D, got {:?}", t.shape()),
            });
        };
        if indices.is_empty() {
            return Err(DiffError::EmptyInput { op: "embed_gather" });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(DiffError::IndexOutOfRange {
                op: "embed_gather",
                index: bad,
                limit: rows,
            });
        }
        let mut out = vec![0.0; indices.len() * dim];
        for (r, &ix) in indices.iter().enumerate() {
            out[r * dim..(r + 1) * dim].copy_from_slice(&t.data()[ix * dim..(ix + 1) * dim]);
        }
        let value = Tensor::new(vec![indices.len(), dim], out).expect("sized above");
        Ok(self.push(
            value,
            Op::EmbedGather {
                table,
                indices: indices.to_vec(),
            },
        ))
    }

    /// 1-D convolution over the rows of a `[len, in_dim]` input with
    /// `[n_filters, width, in_dim]` filters and `[n_filters]` bias.
    ///
    /// Zero same-padding keeps the output length equal to the input length:
    /// `floor((width-1)/2)` virtual rows on the left, the remainder on the
    /// right.
    pub fn conv1d(
        &mut self,
        input: NodeId,
        filters: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, DiffError> {
        let (len, in_dim) = {
            let v = self.value(input);
            let &[len, in_dim] = v.shape() else {
                return Err(DiffError::ShapeMismatch {
                    op: "conv1d",
                    detail: format!("input must be 2-D, got {:?}", v.shape()),
                });
            };
            (len, in_dim)
        };
        let (n_filters, width) = {
            let f = self.value(filters);
            let &[n_filters, width, f_dim] = f.shape() else {
                return Err(DiffError::ShapeMismatch {
                    op: "conv1d",
                    detail: format!("filters must be 3-D, got {:?}", f.shape()),
                });
            };
            if f_dim != in_dim {
                return Err(DiffError::ShapeMismatch {
                    op: "conv1d",
                    detail: format!("filter dim {f_dim} != input dim {in_dim}"),
                });
            }
            if width == 0 {
                return Err(DiffError::ShapeMismatch {
                    op: "conv1d",
                    detail: "kernel width must be >= 1".into(),
                });
            }
            (n_filters, width)
        };
        if self.value(bias).shape() != [n_filters] {
            return Err(DiffError::ShapeMismatch {
                op: "conv1d",
                detail: format!(
                    "bias shape {:?} != [{n_filters}]",
                    self.value(bias).shape()
                ),
            });
        }

        let lpad = (width - 1) / 2;
        let x = self.value(input).data();
        let f = self.value(filters).data();
        let b = self.value(bias).data();
        let mut out = vec![0.0; len * n_filters];
        for t in 0..len {
            out[t * n_filters..(t + 1) * n_filters].copy_from_slice(b);
        }
        for t in 0..len {
            for w in 0..width {
                let s = t + w;
                if s < lpad || s - lpad >= len {
                    continue;
                }
                let row = &x[(s - lpad) * in_dim..(s - lpad + 1) * in_dim];
                for k in 0..n_filters {
                    let filt = &f[(k * width + w) * in_dim..(k * width + w + 1) * in_dim];
                    out[t * n_filters + k] += dot(row, filt);
                }
            }
        }
        let value = Tensor::new(vec![len, n_filters], out).expect("sized above");
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                filters,
                bias,
            },
        ))
    }

    /// Element-wise hyperbolic tangent.
    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let value = Tensor::new(
            self.value(input).shape().to_vec(),
            self.value(input).data().iter().map(|x| x.tanh()).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Tanh { input })
    }

    /// Mean over the rows of a `[rows, cols]` matrix, producing `[cols]`.
    pub fn mean_rows(&mut self, input: NodeId) -> Result<NodeId, DiffError> {
        let v = self.value(input);
        let &[rows, cols] = v.shape() else {
            return Err(DiffError::ShapeMismatch {
                op: "mean_rows",
                detail: format!("input must be 2-D, got {:?}", v.shape()),
            });
        };
        if rows == 0 {
            return Err(DiffError::EmptyInput { op: "mean_rows" });
        }
        let mut out = vec![0.0; cols];
        for r in 0..rows {
            for (c, o) in out.iter_mut().enumerate() {
                *o += v.data()[r * cols + c];
            }
        }
        let inv = 1.0 / rows as f64;
        for o in &mut out {
            *o *= inv;
        }
        Ok(self.push(Tensor::vector(&out), Op::MeanRows { input }))
    }

    /// Cosine similarity of two equal-length vectors, as a scalar node.
    pub fn cosine(&mut self, u: NodeId, v: NodeId) -> Result<NodeId, DiffError> {
        let (a, b) = (self.value(u), self.value(v));
        if a.shape().len() != 1 || b.shape().len() != 1 || a.len() != b.len() {
            return Err(DiffError::ShapeMismatch {
                op: "cosine",
                detail: format!("need equal-length vectors, got {:?} and {:?}", a.shape(), b.shape()),
            });
        }
        let nu = norm(a.data());
        let nv = norm(b.data());
        if nu == 0.0 {
            return Err(DiffError::ZeroNorm { which: "first" });
        }
        if nv == 0.0 {
            return Err(DiffError::ZeroNorm { which: "second" });
        }
        let c = dot(a.data(), b.data()) / (nu * nv);
        Ok(self.push(Tensor::scalar(c), Op::Cosine { u, v }))
    }

    /// Inner product of two equal-length vectors, as a scalar node.
    pub fn dot(&mut self, u: NodeId, v: NodeId) -> Result<NodeId, DiffError> {
        let (a, b) = (self.value(u), self.value(v));
        if a.shape().len() != 1 || b.shape().len() != 1 || a.len() != b.len() {
            return Err(DiffError::ShapeMismatch {
                op: "dot",
                detail: format!("need equal-length vectors, got {:?} and {:?}", a.shape(), b.shape()),
            });
        }
        let d = dot(a.data(), b.data());
        Ok(self.push(Tensor::scalar(d), Op::Dot { u, v }))
    }

    /// Element-wise multiplication by a constant.
    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let value = Tensor::new(
            self.value(input).shape().to_vec(),
            self.value(input).data().iter().map(|x| x * factor).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Scale { input, factor })
    }

    /// Element-wise sum of two same-shape nodes.
    pub fn add(&mut self, lhs: NodeId, rhs: NodeId) -> Result<NodeId, DiffError> {
        if self.value(lhs).shape() != self.value(rhs).shape() {
            return Err(DiffError::ShapeMismatch {
                op: "add",
                detail: format!(
                    "{:?} vs {:?}",
                    self.value(lhs).shape(),
                    self.value(rhs).shape()
                ),
            });
        }
        let value = Tensor::new(
            self.value(lhs).shape().to_vec(),
            self.value(lhs)
                .data()
                .iter()
                .zip(self.value(rhs).data())
                .map(|(a, b)| a + b)
                .collect(),
        )
        .expect("same shape");
        Ok(self.push(value, Op::Add { lhs, rhs }))
    }

    /// Element-wise `max(0, x)`. The subgradient at 0 is 0.
    pub fn hinge(&mut self, input: NodeId) -> NodeId {
        let value = Tensor::new(
            self.value(input).shape().to_vec(),
            self.value(input).data().iter().map(|x| x.max(0.0)).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Hinge { input })
    }

    /// `log(sum_i exp(x_i))` over scalar nodes, computed with max
    /// subtraction so moderately large inputs cannot overflow.
    pub fn log_sum_exp(&mut self, inputs: &[NodeId]) -> Result<NodeId, DiffError> {
        let xs = self.scalar_inputs("log_sum_exp", inputs)?;
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = xs.iter().map(|x| (x - m).exp()).sum();
        let value = m + sum.ln();
        Ok(self.push(
            Tensor::scalar(value),
            Op::LogSumExp {
                inputs: inputs.to_vec(),
            },
        ))
    }

    /// Maximum over scalar nodes. Ties resolve to the first maximal input,
    /// which alone receives gradient.
    pub fn max_over(&mut self, inputs: &[NodeId]) -> Result<NodeId, DiffError> {
        let xs = self.scalar_inputs("max_over", inputs)?;
        let mut argmax = 0;
        for (i, &x) in xs.iter().enumerate() {
            if x > xs[argmax] {
                argmax = i;
            }
        }
        Ok(self.push(
            Tensor::scalar(xs[argmax]),
            Op::MaxOver {
                inputs: inputs.to_vec(),
                argmax,
            },
        ))
    }

    /// `-log softmax(xs)[target]` over scalar nodes, via stabilized
    /// log-sum-exp: `LSE(xs) - xs[target]`.
    pub fn neg_log_softmax_at(
        &mut self,
        inputs: &[NodeId],
        target: usize,
    ) -> Result<NodeId, DiffError> {
        let xs = self.scalar_inputs("neg_log_softmax_at", inputs)?;
        if target >= xs.len() {
            return Err(DiffError::IndexOutOfRange {
                op: "neg_log_softmax_at",
                index: target,
                limit: xs.len(),
            });
        }
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = xs.iter().map(|x| (x - m).exp()).sum();
        let value = m + sum.ln() - xs[target];
        Ok(self.push(
            Tensor::scalar(value),
            Op::NegLogSoftmaxAt {
                inputs: inputs.to_vec(),
                target,
            },
        ))
    }

    /// Affine map of a `[in_dim]` vector through `[in_dim, out_dim]` weights
    /// plus `[out_dim]` bias.
    pub fn linear(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, DiffError> {
        let in_len = {
            let v = self.value(input);
            if v.shape().len() != 1 {
                return Err(DiffError::ShapeMismatch {
                    op: "linear",
                    detail: format!("input must be 1-D, got {:?}", v.shape()),
                });
            }
            v.len()
        };
        let (w_in, w_out) = {
            let w = self.value(weight);
            let &[w_in, w_out] = w.shape() else {
                return Err(DiffError::ShapeMismatch {
                    op: "linear",
                    detail: format!("weight must be 2-D, got {:?}", w.shape()),
                });
            };
            (w_in, w_out)
        };
        if w_in != in_len || self.value(bias).shape() != [w_out] {
            return Err(DiffError::ShapeMismatch {
                op: "linear",
                detail: format!(
                    "input [{in_len}] x weight [{w_in}, {w_out}] + bias {:?}",
                    self.value(bias).shape()
                ),
            });
        }
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let mut out = self.value(bias).data().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            for (o, out_o) in out.iter_mut().enumerate() {
                *out_o += xi * w[i * w_out + o];
            }
        }
        Ok(self.push(
            Tensor::vector(&out),
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    fn scalar_inputs(&self, op: &'static str, inputs: &[NodeId]) -> Result<Vec<f64>, DiffError> {
        if inputs.is_empty() {
            return Err(DiffError::EmptyInput { op });
        }
        inputs
            .iter()
            .map(|&id| {
                let v = self.value(id);
                if v.is_scalar() {
                    Ok(v.item())
                } else {
                    Err(DiffError::ShapeMismatch {
                        op,
                        detail: format!("inputs must be scalars, got {:?}", v.shape()),
                    })
                }
            })
            .collect()
    }

    /// Accumulates `d root / d node` into every reachable node's `grad`.
    ///
    /// The root must be a scalar. Adjoints are computed in a scratch buffer
    /// and added into the persistent `grad` slots at the end, so calling
    /// `backward` repeatedly without [`Graph::zero_grads`] sums the
    /// gradients of each call.
    pub fn backward(&mut self, root: NodeId) -> Result<(), DiffError> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(DiffError::NonScalarRoot {
                shape: self.nodes[root.0].value.shape().to_vec(),
            });
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let seed_shape = self.nodes[root.0].value.shape().to_vec();
        adjoints[root.0] = Some(Tensor::new(seed_shape, vec![1.0]).expect("scalar"));

        for idx in (0..=root.0).rev() {
            let Some(adj) = adjoints[idx].take() else {
                continue;
            };
            self.propagate(idx, &adj, &mut adjoints);
            self.nodes[idx].grad.add_assign(&adj);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, adj: &Tensor, adjoints: &mut [Option<Tensor>]) {
        let g = adj.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::EmbedGather { table, indices } => {
                let dim = self.value(NodeId(idx)).shape()[1];
                let slot = slot(adjoints, *table, self.value(*table).shape());
                for (r, &ix) in indices.iter().enumerate() {
                    for d in 0..dim {
                        slot[ix * dim + d] += g[r * dim + d];
                    }
                }
            }
            Op::Conv1d {
                input,
                filters,
                bias,
            } => {
                let in_shape = self.value(*input).shape().to_vec();
                let f_shape = self.value(*filters).shape().to_vec();
                let (len, in_dim) = (in_shape[0], in_shape[1]);
                let (n_filters, width) = (f_shape[0], f_shape[1]);
                let lpad = (width - 1) / 2;
                let x = self.value(*input).data();
                let f = self.value(*filters).data();

                {
                    let b_slot = slot(adjoints, *bias, &[n_filters]);
                    for t in 0..len {
                        for k in 0..n_filters {
                            b_slot[k] += g[t * n_filters + k];
                        }
                    }
                }
                {
                    let f_slot = slot(adjoints, *filters, &f_shape);
                    for t in 0..len {
                        for w in 0..width {
                            let s = t + w;
                            if s < lpad || s - lpad >= len {
                                continue;
                            }
                            let row = &x[(s - lpad) * in_dim..(s - lpad + 1) * in_dim];
                            for k in 0..n_filters {
                                let go = g[t * n_filters + k];
                                let frow =
                                    &mut f_slot[(k * width + w) * in_dim..(k * width + w + 1) * in_dim];
                                for (fr, xr) in frow.iter_mut().zip(row) {
                                    *fr += go * xr;
                                }
                            }
                        }
                    }
                }
                {
                    let x_slot = slot(adjoints, *input, &in_shape);
                    for t in 0..len {
                        for w in 0..width {
                            let s = t + w;
                            if s < lpad || s - lpad >= len {
                                continue;
                            }
                            let xrow = &mut x_slot[(s - lpad) * in_dim..(s - lpad + 1) * in_dim];
                            for k in 0..n_filters {
                                let go = g[t * n_filters + k];
                                let frow = &f[(k * width + w) * in_dim..(k * width + w + 1) * in_dim];
                                for (xr, fr) in xrow.iter_mut().zip(frow) {
                                    *xr += go * fr;
                                }
                            }
                        }
                    }
                }
            }
            Op::Tanh { input } => {
                let y = self.value(NodeId(idx)).data();
                let slot = slot(adjoints, *input, self.value(*input).shape());
                for i in 0..g.len() {
                    slot[i] += g[i] * (1.0 - y[i] * y[i]);
                }
            }
            Op::MeanRows { input } => {
                let shape = self.value(*input).shape().to_vec();
                let (rows, cols) = (shape[0], shape[1]);
                let inv = 1.0 / rows as f64;
                let slot = slot(adjoints, *input, &shape);
                for r in 0..rows {
                    for c in 0..cols {
                        slot[r * cols + c] += g[c] * inv;
                    }
                }
            }
            Op::Cosine { u, v } => {
                let go = g[0];
                let a = self.value(*u).data();
                let b = self.value(*v).data();
                let nu = norm(a);
                let nv = norm(b);
                let cos = self.value(NodeId(idx)).item();
                {
                    let su = slot(adjoints, *u, &[a.len()]);
                    for i in 0..a.len() {
                        su[i] += go * (b[i] / (nu * nv) - cos * a[i] / (nu * nu));
                    }
                }
                {
                    let sv = slot(adjoints, *v, &[b.len()]);
                    for i in 0..b.len() {
                        sv[i] += go * (a[i] / (nu * nv) - cos * b[i] / (nv * nv));
                    }
                }
            }
            Op::Dot { u, v } => {
                let go = g[0];
                let a = self.value(*u).data().to_vec();
                let b = self.value(*v).data().to_vec();
                {
                    let su = slot(adjoints, *u, &[a.len()]);
                    for (s, bi) in su.iter_mut().zip(&b) {
                        *s += go * bi;
                    }
                }
                {
                    let sv = slot(adjoints, *v, &[b.len()]);
                    for (s, ai) in sv.iter_mut().zip(&a) {
                        *s += go * ai;
                    }
                }
            }
            Op::Scale { input, factor } => {
                let slot = slot(adjoints, *input, self.value(*input).shape());
                for i in 0..g.len() {
                    slot[i] += g[i] * factor;
                }
            }
            Op::Add { lhs, rhs } => {
                {
                    let sl = slot(adjoints, *lhs, self.value(*lhs).shape());
                    for i in 0..g.len() {
                        sl[i] += g[i];
                    }
                }
                {
                    let sr = slot(adjoints, *rhs, self.value(*rhs).shape());
                    for i in 0..g.len() {
                        sr[i] += g[i];
                    }
                }
            }
            Op::Hinge { input } => {
                let x = self.value(*input).data();
                let slot = slot(adjoints, *input, self.value(*input).shape());
                for i in 0..g.len() {
                    if x[i] > 0.0 {
                        slot[i] += g[i];
                    }
                }
            }
            Op::LogSumExp { inputs } => {
                let go = g[0];
                let p = self.softmax_of(inputs);
                for (i, &id) in inputs.iter().enumerate() {
                    slot(adjoints, id, &[1])[0] += go * p[i];
                }
            }
            Op::MaxOver { inputs, argmax } => {
                slot(adjoints, inputs[*argmax], &[1])[0] += g[0];
            }
            Op::NegLogSoftmaxAt { inputs, target } => {
                let go = g[0];
                let p = self.softmax_of(inputs);
                for (i, &id) in inputs.iter().enumerate() {
                    let indicator = if i == *target { 1.0 } else { 0.0 };
                    slot(adjoints, id, &[1])[0] += go * (p[i] - indicator);
                }
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                let (in_len, out_len) = (x.len(), g.len());
                {
                    let sb = slot(adjoints, *bias, &[out_len]);
                    for (s, go) in sb.iter_mut().zip(g) {
                        *s += go;
                    }
                }
                {
                    let sw = slot(adjoints, *weight, &[in_len, out_len]);
                    for (i, &xi) in x.iter().enumerate() {
                        for (o, &go) in g.iter().enumerate() {
                            sw[i * out_len + o] += xi * go;
                        }
                    }
                }
                {
                    let sx = slot(adjoints, *input, &[in_len]);
                    for (i, sxi) in sx.iter_mut().enumerate() {
                        for (o, &go) in g.iter().enumerate() {
                            *sxi += go * w[i * out_len + o];
                        }
                    }
                }
            }
        }
    }

    fn softmax_of(&self, inputs: &[NodeId]) -> Vec<f64> {
        let xs: Vec<f64> = inputs.iter().map(|&id| self.value(id).item()).collect();
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ws: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
        let sum: f64 = ws.iter().sum();
        ws.into_iter().map(|w| w / sum).collect()
    }

    /// Smallest distance from any nondifferentiable point in the graph:
    /// `|x|` over hinge inputs and the top-two gap over `max_over` inputs.
    /// Returns infinity when the graph has no kinked op. Useful for
    /// excluding kink-adjacent configurations from finite-difference checks.
    pub fn min_kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Hinge { input } => {
                    for &x in self.value(*input).data() {
                        margin = margin.min(x.abs());
                    }
                }
                Op::MaxOver { inputs, argmax } => {
                    let top = self.value(inputs[*argmax]).item();
                    for (i, &id) in inputs.iter().enumerate() {
                        if i != *argmax {
                            margin = margin.min(top - self.value(id).item());
                        }
                    }
                }
                _ => {}
            }
        }
        margin
    }
}

fn slot<'a>(adjoints: &'a mut [Option<Tensor>], id: NodeId, shape: &[usize]) -> &'a mut [f64] {
    adjoints[id.0]
        .get_or_insert_with(|| Tensor::zeros(shape))
        .data_mut()
}
