use super::{dim_err, softmax_in_place, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Transpose(NodeId),
    SliceCols {
        src: NodeId,
        start: usize,
    },
    ConcatCols(Vec<NodeId>),
    SliceRows {
        src: NodeId,
        start: usize,
    },
    GatherRows {
        table: NodeId,
        ids: Vec<usize>,
    },
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gelu(NodeId),
    RelationGather {
        src: NodeId,
        index: Vec<usize>,
        transposed: bool,
    },
    RelationScatter {
        src: NodeId,
        index: Vec<usize>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// A recorded computation. Nodes are appended in execution order, so the
/// recording order is a topological order and `backward` walks it once in
/// reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient populated by the last `backward` call(s), if any reached `id`.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Gradient as a tensor shaped like the node value; zeros when nothing
    /// flowed into it.
    pub fn grad_tensor(&self, id: NodeId) -> Tensor {
        let node = &self.nodes[id.0];
        match &node.grad {
            Some(g) => Tensor::new(node.value.shape().to_vec(), g.clone()).unwrap(),
            None => Tensor::zeros(node.value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn dims2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize), TensorError> {
        let shape = self.value(id).shape();
        if shape.len() != 2 {
            return Err(dim_err(
                op,
                format!("expected a matrix, got shape {shape:?}"),
            ));
        }
        Ok((shape[0], shape[1]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(dim_err("matmul", format!("inner dims {k} vs {k2}")));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(dim_err(
                "add",
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let (_, n) = self.value(a).matrix_dims();
        let b = self.value(bias);
        if b.numel() != n {
            return Err(dim_err(
                "add_bias",
                format!("bias has {} values for {n} columns", b.numel()),
            ));
        }
        let bd = b.data();
        let x = self.value(a);
        let mut data = x.data().to_vec();
        if n > 0 {
            for row in data.chunks_mut(n) {
                for (v, &c) in row.iter_mut().zip(bd) {
                    *v += c;
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::AddBias(a, bias), &[a, bias]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(dim_err(
                "mul",
                format!("{:?} vs {:?}", x.shape(), y.shape()),
            ));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = self.value(a).map(|v| v * c);
        self.push(value, Op::Scale(a, c), &[a])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), &[a])
    }

    /// Adds a list of same-shaped nodes left to right.
    pub fn add_all(&mut self, ids: &[NodeId]) -> Result<NodeId, TensorError> {
        let (&first, rest) = ids
            .split_first()
            .ok_or_else(|| dim_err("add_all", "no inputs"))?;
        rest.iter().try_fold(first, |acc, &id| self.add(acc, id))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let (m, n) = self.dims2(a, "transpose")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        Ok(self.push(value, Op::Transpose(a), &[a]))
    }

    pub fn slice_cols(
        &mut self,
        src: NodeId,
        start: usize,
        len: usize,
    ) -> Result<NodeId, TensorError> {
        let (m, n) = self.dims2(src, "slice_cols")?;
        if start + len > n {
            return Err(dim_err(
                "slice_cols",
                format!("columns {start}..{} of {n}", start + len),
            ));
        }
        let x = self.value(src).data();
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&x[i * n + start..i * n + start + len]);
        }
        let value = Tensor::new(vec![m, len], out)?;
        Ok(self.push(value, Op::SliceCols { src, start }, &[src]))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(dim_err("concat_cols", "no inputs"));
        }
        let mut widths = Vec::with_capacity(parts.len());
        let mut rows = None;
        for &p in parts {
            let (m, n) = self.dims2(p, "concat_cols")?;
            if *rows.get_or_insert(m) != m {
                return Err(dim_err("concat_cols", "row counts differ"));
            }
            widths.push(n);
        }
        let m = rows.unwrap_or(0);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let value = Tensor::new(vec![m, total], out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_rows(
        &mut self,
        src: NodeId,
        start: usize,
        len: usize,
    ) -> Result<NodeId, TensorError> {
        let (m, n) = self.value(src).matrix_dims();
        if start + len > m {
            return Err(dim_err(
                "slice_rows",
                format!("rows {start}..{} of {m}", start + len),
            ));
        }
        let data = self.value(src).data()[start * n..(start + len) * n].to_vec();
        let value = Tensor::new(vec![len, n], data)?;
        Ok(self.push(value, Op::SliceRows { src, start }, &[src]))
    }

    /// Row lookup: output row `r` is `table[ids[r]]`.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, TensorError> {
        let (v, n) = self.dims2(table, "gather_rows")?;
        let t = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * n);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: id,
                    limit: v,
                });
            }
            out.extend_from_slice(&t[id * n..(id + 1) * n]);
        }
        let value = Tensor::new(vec![ids.len(), n], out)?;
        Ok(self.push(
            value,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Softmax over the last dimension, stabilized by max subtraction.
    pub fn softmax_lastdim(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.masked_softmax(x, None)
    }

    /// Softmax over the last dimension where columns with `keep[j] == false`
    /// are treated as −∞ and receive weight exactly 0.
    pub fn masked_softmax(
        &mut self,
        x: NodeId,
        keep: Option<&[bool]>,
    ) -> Result<NodeId, TensorError> {
        let src = self.value(x);
        let (_, n) = src.matrix_dims();
        if n == 0 || src.shape().is_empty() {
            return Err(dim_err("softmax", "empty last dimension"));
        }
        if let Some(keep) = keep {
            if keep.len() != n {
                return Err(dim_err(
                    "softmax",
                    format!("mask length {} for {n} columns", keep.len()),
                ));
            }
            if !keep.iter().any(|&k| k) {
                return Err(dim_err("softmax", "every column is masked"));
            }
        }
        let mut data = src.data().to_vec();
        for row in data.chunks_mut(n) {
            match keep {
                None => softmax_in_place(row),
                Some(keep) => {
                    let max = row
                        .iter()
                        .zip(keep)
                        .filter(|(_, &k)| k)
                        .map(|(&v, _)| v)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for (v, &k) in row.iter_mut().zip(keep) {
                        *v = if k { (*v - max).exp() } else { 0.0 };
                        total += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= total;
                    }
                }
            }
        }
        let value = Tensor::new(src.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Softmax(x), &[x]))
    }

    /// Row-wise layer normalization over the last dimension followed by the
    /// affine map `gamma * x̂ + beta`.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let src = self.value(x);
        let (m, n) = src.matrix_dims();
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.numel() != n || b.numel() != n {
            return Err(dim_err(
                "layer_norm",
                format!("gamma/beta sizes {}/{} for width {n}", g.numel(), b.numel()),
            ));
        }
        if n == 0 {
            return Err(dim_err("layer_norm", "empty last dimension"));
        }
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src.data()[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[i] = r;
            for j in 0..n {
                let h = (row[j] - mean) * r;
                xhat[i * n + j] = h;
                out[i * n + j] = g.data()[j] * h + b.data()[j];
            }
        }
        let value = Tensor::new(src.shape().to_vec(), out)?;
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        ))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).map(|v| {
            let inner = SQRT_2_OVER_PI * (v + GELU_C * v * v * v);
            0.5 * v * (1.0 + inner.tanh())
        });
        self.push(value, Op::Gelu(x), &[x])
    }

    /// For a `T×C` source and a `T×T` index matrix, returns the `T×T` matrix
    /// with `out[i][j] = src[i][index[i][j]]`, or `src[j][index[i][j]]` when
    /// `transposed`.
    pub fn relation_gather(
        &mut self,
        src: NodeId,
        index: &[usize],
        transposed: bool,
    ) -> Result<NodeId, TensorError> {
        let (t, c) = self.dims2(src, "relation_gather")?;
        if index.len() != t * t {
            return Err(dim_err(
                "relation_gather",
                format!("index has {} entries for T={t}", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&k| k >= c) {
            return Err(TensorError::Index {
                op: "relation_gather",
                index: bad,
                limit: c,
            });
        }
        let s = self.value(src).data();
        let mut out = vec![0.0; t * t];
        for i in 0..t {
            for j in 0..t {
                let k = index[i * t + j];
                let row = if transposed { j } else { i };
                out[i * t + j] = s[row * c + k];
            }
        }
        let value = Tensor::new(vec![t, t], out)?;
        Ok(self.push(
            value,
            Op::RelationGather {
                src,
                index: index.to_vec(),
                transposed,
            },
            &[src],
        ))
    }

    /// For a `T×T` source, returns the `T×width` matrix with
    /// `out[i][k] = Σ_{j : index[i][j] = k} src[i][j]`.
    pub fn relation_scatter(
        &mut self,
        src: NodeId,
        index: &[usize],
        width: usize,
    ) -> Result<NodeId, TensorError> {
        let (t, t2) = self.dims2(src, "relation_scatter")?;
        if t != t2 || index.len() != t * t {
            return Err(dim_err(
                "relation_scatter",
                format!("source {t}×{t2} with {} index entries", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&k| k >= width) {
            return Err(TensorError::Index {
                op: "relation_scatter",
                index: bad,
                limit: width,
            });
        }
        let s = self.value(src).data();
        let mut out = vec![0.0; t * width];
        for i in 0..t {
            for j in 0..t {
                out[i * width + index[i * t + j]] += s[i * t + j];
            }
        }
        let value = Tensor::new(vec![t, width], out)?;
        Ok(self.push(
            value,
            Op::RelationScatter {
                src,
                index: index.to_vec(),
            },
            &[src],
        ))
    }

    /// Summed cross-entropy `Σ_r −log softmax(logits_r)[targets_r]` over the
    /// rows of `logits`. A 1-D logits vector is a single row.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
    ) -> Result<NodeId, TensorError> {
        let x = self.value(logits);
        let (m, k) = x.matrix_dims();
        if k == 0 {
            return Err(dim_err("cross_entropy", "no classes"));
        }
        if targets.len() != m {
            return Err(dim_err(
                "cross_entropy",
                format!("{} targets for {m} rows", targets.len()),
            ));
        }
        let mut probs = x.data().to_vec();
        let mut total = 0.0;
        for (r, &target) in targets.iter().enumerate() {
            if target >= k {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: target,
                    limit: k,
                });
            }
            let row = &x.data()[r * k..(r + 1) * k];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[target];
            softmax_in_place(&mut probs[r * k..(r + 1) * k]);
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients accumulate into
    /// every node that requires grad, including across repeated calls.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut finished: Vec<(usize, Vec<f64>)> = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            finished.push((i, g));
        }

        for (i, g) in finished {
            let slot = &mut self.nodes[i].grad;
            match slot {
                Some(existing) => existing.iter_mut().zip(&g).for_each(|(e, v)| *e += v),
                None => *slot = Some(g),
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_lines)]
    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                let (m, k) = nodes[a.0].value.matrix_dims();
                let n = nodes[b.0].value.matrix_dims().1;
                if let Some(ga) = slot(nodes, grads, *a) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            let gbrow = &mut gb[p * n..(p + 1) * n];
                            for (o, &y) in gbrow.iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [a, b] {
                    if let Some(ga) = slot(nodes, grads, *id) {
                        ga.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                    }
                }
            }
            Op::AddBias(a, bias) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(o, v)| *o += v);
                }
                if let Some(gb) = slot(nodes, grads, *bias) {
                    let n = gb.len();
                    if n > 0 {
                        for row in g.chunks(n) {
                            gb.iter_mut().zip(row).for_each(|(o, v)| *o += v);
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                if let Some(ga) = slot(nodes, grads, *a) {
                    for ((o, v), y) in ga.iter_mut().zip(g).zip(bv) {
                        *o += v * y;
                    }
                }
                if let Some(gb) = slot(nodes, grads, *b) {
                    for ((o, v), x) in gb.iter_mut().zip(g).zip(av) {
                        *o += v * x;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(o, v)| *o += v * c);
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = nodes[a.0].value.matrix_dims();
                if let Some(ga) = slot(nodes, grads, *a) {
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::SliceCols { src, start } => {
                let (m, n) = nodes[src.0].value.matrix_dims();
                let len = node.value.matrix_dims().1;
                if let Some(gs) = slot(nodes, grads, *src) {
                    for i in 0..m {
                        for j in 0..len {
                            gs[i * n + start + j] += g[i * len + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = node.value.matrix_dims();
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].value.matrix_dims().1;
                    if let Some(gp) = slot(nodes, grads, *p) {
                        for i in 0..m {
                            for j in 0..w {
                                gp[i * w + j] += g[i * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceRows { src, start } => {
                let n = nodes[src.0].value.matrix_dims().1;
                if let Some(gs) = slot(nodes, grads, *src) {
                    let base = start * n;
                    for (j, v) in g.iter().enumerate() {
                        gs[base + j] += v;
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                let n = nodes[table.0].value.matrix_dims().1;
                if let Some(gt) = slot(nodes, grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..n {
                            gt[id * n + j] += g[r * n + j];
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let n = node.value.matrix_dims().1;
                if let Some(gx) = slot(nodes, grads, *x) {
                    for (r, (yrow, grow)) in y.chunks(n).zip(g.chunks(n)).enumerate() {
                        let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            gx[r * n + j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let n = node.value.matrix_dims().1;
                let gam = nodes[gamma.0].value.data();
                if let Some(gg) = slot(nodes, grads, *gamma) {
                    for (grow, hrow) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *beta) {
                    for grow in g.chunks(n) {
                        gb.iter_mut().zip(grow).for_each(|(o, v)| *o += v);
                    }
                }
                if let Some(gx) = slot(nodes, grads, *x) {
                    let mut dxhat = vec![0.0; n];
                    for (r, (grow, hrow)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        for j in 0..n {
                            dxhat[j] = grow[j] * gam[j];
                        }
                        let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                        let mean_dh =
                            dxhat.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                        for j in 0..n {
                            gx[r * n + j] += rstd[r] * (dxhat[j] - mean_d - hrow[j] * mean_dh);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = nodes[x.0].value.data();
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ((o, &v), &gv) in gx.iter_mut().zip(xv).zip(g) {
                        let inner = SQRT_2_OVER_PI * (v + GELU_C * v * v * v);
                        let t = inner.tanh();
                        let d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * v * v);
                        let d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * d_inner;
                        *o += gv * d;
                    }
                }
            }
            Op::RelationGather {
                src,
                index,
                transposed,
            } => {
                let (t, c) = nodes[src.0].value.matrix_dims();
                if let Some(gs) = slot(nodes, grads, *src) {
                    for i in 0..t {
                        for j in 0..t {
                            let row = if *transposed { j } else { i };
                            gs[row * c + index[i * t + j]] += g[i * t + j];
                        }
                    }
                }
            }
            Op::RelationScatter { src, index } => {
                let t = nodes[src.0].value.matrix_dims().0;
                let width = node.value.matrix_dims().1;
                if let Some(gs) = slot(nodes, grads, *src) {
                    for i in 0..t {
                        for j in 0..t {
                            gs[i * t + j] += g[i * width + index[i * t + j]];
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let k = nodes[logits.0].value.matrix_dims().1;
                if let Some(gl) = slot(nodes, grads, *logits) {
                    for (r, &target) in targets.iter().enumerate() {
                        for j in 0..k {
                            let onehot = if j == target { 1.0 } else { 0.0 };
                            gl[r * k + j] += g[0] * (probs[r * k + j] - onehot);
                        }
                    }
                }
            }
        }
    }
}

fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    id: NodeId,
) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[id.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[id.0].get_or_insert_with(|| vec![0.0; n.value.numel()]))
}
