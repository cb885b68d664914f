use super::kernels::gemm;
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Block decomposition of a shape around one axis: `outer × len × inner`.
#[derive(Clone, Copy, Debug)]
struct AxisBlocks {
    outer: usize,
    len: usize,
    inner: usize,
}

impl AxisBlocks {
    fn of(shape: &[usize], axis: usize) -> Self {
        Self {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }
}

enum Op {
    Leaf,
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    MatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Transpose {
        a: Var,
        batch: usize,
        rows: usize,
        cols: usize,
    },
    Reshape {
        a: Var,
    },
    Concat {
        parts: Vec<(Var, usize)>,
        outer: usize,
        inner: usize,
        total: usize,
    },
    Slice {
        a: Var,
        blocks: AxisBlocks,
        start: usize,
        len: usize,
    },
    Gelu {
        a: Var,
    },
    Relu {
        a: Var,
    },
    Softmax {
        a: Var,
        blocks: AxisBlocks,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
///
/// A tape belongs to one logical computation; build a fresh one per forward
/// pass. Node ids increase monotonically, so every node's inputs precede it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(value.all_finite(), "non-finite value produced by tape op");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Element-wise sum. `b` may also be broadcast when its shape is a suffix
    /// of `a`'s shape (bias vectors, shared positional tables).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::Shape(format!("cannot add {sb:?} to {sa:?}")));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = av.to_vec();
        for chunk in out.chunks_exact_mut(bv.len()) {
            for (o, &x) in chunk.iter_mut().zip(bv) {
                *o += x;
            }
        }
        let shape = sa.to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape, data: out }, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "mul operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a);
        let data = value.data().iter().map(|x| x * factor).collect();
        let shape = value.shape().to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor { shape, data }, Op::Scale { a, factor }, rg)
    }

    /// Matrix product over the last two axes. Leading axes must match, or `b`
    /// may be a plain matrix shared by every leading index of `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::Shape(format!(
                "matmul needs rank >= 2, got {sa:?} and {sb:?}"
            )));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(Error::Shape(format!(
                "inner dimensions differ: {sa:?} x {sb:?}"
            )));
        }
        let lead = &sa[..sa.len() - 2];
        let shared_rhs = sb.len() == 2;
        if !shared_rhs && lead != &sb[..sb.len() - 2] {
            return Err(Error::Shape(format!(
                "batch dimensions differ: {sa:?} x {sb:?}"
            )));
        }
        let batch: usize = lead.iter().product();
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let mut out = vec![0.0; batch * m * n];
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let op = if shared_rhs {
            gemm(batch * m, k, n, av, false, bv, false, &mut out, false);
            Op::MatMul {
                a,
                b,
                batch: 1,
                m: batch * m,
                k,
                n,
                shared_rhs,
            }
        } else {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &av[i * m * k..(i + 1) * m * k],
                    false,
                    &bv[i * k * n..(i + 1) * k * n],
                    false,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
            Op::MatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                shared_rhs,
            }
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor { shape, data: out }, op, rg))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(Error::Shape(format!("transpose needs rank >= 2, got {s:?}")));
        }
        let (rows, cols) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = s[..s.len() - 2].iter().product();
        let data = transpose_blocks(self.value(a).data(), batch, rows, cols);
        let mut shape = s;
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor { shape, data },
            Op::Transpose {
                a,
                batch,
                rows,
                cols,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshaped(shape.to_vec())?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape { a }, rg))
    }

    /// Joins tensors along `axis`; all other axes must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::Shape(format!("axis {axis} out of range for {base:?}")));
        }
        let mut parts = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::Shape(format!(
                    "cannot concat {s:?} with {base:?} along axis {axis}"
                )));
            }
            parts.push((v, s[axis]));
        }
        let total: usize = parts.iter().map(|p| p.1).sum();
        let blocks = AxisBlocks::of(&base, axis);
        let mut data = Vec::with_capacity(blocks.outer * total * blocks.inner);
        for o in 0..blocks.outer {
            for &(v, len) in &parts {
                let chunk = len * blocks.inner;
                data.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(
            Tensor { shape, data },
            Op::Concat {
                parts,
                outer: blocks.outer,
                inner: blocks.inner,
                total,
            },
            rg,
        ))
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) on axis {axis} of {s:?}",
                start + len
            )));
        }
        let blocks = AxisBlocks::of(&s, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(blocks.outer * len * blocks.inner);
        for o in 0..blocks.outer {
            let base = (o * blocks.len + start) * blocks.inner;
            data.extend_from_slice(&src[base..base + len * blocks.inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(&[a]);
        Ok(self.push(
            Tensor { shape, data },
            Op::Slice {
                a,
                blocks,
                start,
                len,
            },
            rg,
        ))
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a);
        let data = value.data().iter().map(|&x| gelu(x)).collect();
        let shape = value.shape().to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor { shape, data }, Op::Gelu { a }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a);
        let data = value.data().iter().map(|&x| x.max(0.0)).collect();
        let shape = value.shape().to_vec();
        let rg = self.rg(&[a]);
        self.push(Tensor { shape, data }, Op::Relu { a }, rg)
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() {
            return Err(Error::Shape(format!("axis {axis} out of range for {s:?}")));
        }
        let blocks = AxisBlocks::of(&s, axis);
        let mut data = self.value(a).data().to_vec();
        if blocks.inner == 1 {
            for row in data.chunks_exact_mut(blocks.len) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    total += *v;
                }
                row.iter_mut().for_each(|v| *v /= total);
            }
            let rg = self.rg(&[a]);
            return Ok(self.push(Tensor { shape: s, data }, Op::Softmax { a, blocks }, rg));
        }
        for o in 0..blocks.outer {
            for i in 0..blocks.inner {
                let base = o * blocks.len * blocks.inner + i;
                let idx = |j: usize| base + j * blocks.inner;
                let max = (0..blocks.len)
                    .map(|j| data[idx(j)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..blocks.len {
                    let e = (data[idx(j)] - max).exp();
                    data[idx(j)] = e;
                    total += e;
                }
                for j in 0..blocks.len {
                    data[idx(j)] /= total;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor { shape: s, data }, Op::Softmax { a, blocks }, rg))
    }

    /// Normalizes each vector along the last axis, then applies `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let dim = *s
            .last()
            .ok_or_else(|| Error::Shape("layer_norm of a scalar".into()))?;
        if self.shape(gain) != [dim] || self.shape(bias) != [dim] {
            return Err(Error::Shape(format!(
                "layer_norm affine params {:?}/{:?} do not match last dim {dim}",
                self.shape(gain),
                self.shape(bias)
            )));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xv.len() / dim;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * dim..(r + 1) * dim];
            let mean = row.iter().sum::<f64>() / dim as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..dim {
                let h = (row[j] - mean) * is;
                xhat[r * dim + j] = h;
                out[r * dim + j] = g[j] * h + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor {
                shape: s,
                data: out,
            },
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// `-log softmax(logits)[label]` via log-sum-exp; `logits` holds one row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if label >= z.len() {
            return Err(Error::Contract(format!(
                "label {label} outside [0, {})",
                z.len()
            )));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let loss = max + total.ln() - z[label];
        let probs = exps.into_iter().map(|e| e / total).collect();
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                label,
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(total), Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).data();
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(m), Op::Mean { a }, rg)
    }

    /// Accumulates d`loss`/d`v` into every node that requires a gradient.
    ///
    /// Gradients from earlier calls are discarded. Intermediate gradients are
    /// released as the sweep passes them; leaf gradients stay readable through
    /// [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            propagate(nodes, grads, node, &g);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(())
    }
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_derivative(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

fn transpose_blocks(src: &[f64], batch: usize, rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for b in 0..batch {
        let off = b * rows * cols;
        for r in 0..rows {
            for c in 0..cols {
                out[off + c * rows + r] = src[off + r * cols + c];
            }
        }
    }
    out
}

fn slot<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
}

fn accumulate(dst: &mut [f64], src: impl IntoIterator<Item = f64>) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], node: &Node, g: &[f64]) {
    let val = |v: Var| nodes[v.0].value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                accumulate(ga, g.iter().copied());
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                let n = gb.len();
                for chunk in g.chunks_exact(n) {
                    accumulate(gb, chunk.iter().copied());
                }
            }
        }
        Op::Mul { a, b } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                accumulate(ga, g.iter().zip(val(*b)).map(|(g, y)| g * y));
            }
            if let Some(gb) = slot(nodes, grads, *b) {
                accumulate(gb, g.iter().zip(val(*a)).map(|(g, x)| g * x));
            }
        }
        Op::Scale { a, factor } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                accumulate(ga, g.iter().map(|g| g * factor));
            }
        }
        &Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            shared_rhs,
        } => {
            let (av, bv) = (val(a), val(b));
            if let Some(ga) = slot(nodes, grads, a) {
                for i in 0..batch {
                    let bi = if shared_rhs { 0 } else { i };
                    gemm(
                        m,
                        n,
                        k,
                        &g[i * m * n..(i + 1) * m * n],
                        false,
                        &bv[bi * k * n..(bi + 1) * k * n],
                        true,
                        &mut ga[i * m * k..(i + 1) * m * k],
                        true,
                    );
                }
            }
            if let Some(gb) = slot(nodes, grads, b) {
                for i in 0..batch {
                    let bi = if shared_rhs { 0 } else { i };
                    gemm(
                        k,
                        m,
                        n,
                        &av[i * m * k..(i + 1) * m * k],
                        true,
                        &g[i * m * n..(i + 1) * m * n],
                        false,
                        &mut gb[bi * k * n..(bi + 1) * k * n],
                        true,
                    );
                }
            }
        }
        &Op::Transpose {
            a,
            batch,
            rows,
            cols,
        } => {
            if let Some(ga) = slot(nodes, grads, a) {
                // g has the transposed layout (cols x rows).
                accumulate(ga, transpose_blocks(g, batch, cols, rows));
            }
        }
        Op::Reshape { a } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                accumulate(ga, g.iter().copied());
            }
        }
        Op::Concat {
            parts,
            outer,
            inner,
            total,
        } => {
            let mut offset = 0;
            for &(v, len) in parts {
                if let Some(gv) = slot(nodes, grads, v) {
                    let chunk = len * inner;
                    for o in 0..*outer {
                        let src = o * total * inner + offset * inner;
                        accumulate(
                            &mut gv[o * chunk..(o + 1) * chunk],
                            g[src..src + chunk].iter().copied(),
                        );
                    }
                }
                offset += len;
            }
        }
        &Op::Slice {
            a,
            blocks,
            start,
            len,
        } => {
            if let Some(ga) = slot(nodes, grads, a) {
                let chunk = len * blocks.inner;
                for o in 0..blocks.outer {
                    let dst = (o * blocks.len + start) * blocks.inner;
                    accumulate(
                        &mut ga[dst..dst + chunk],
                        g[o * chunk..(o + 1) * chunk].iter().copied(),
                    );
                }
            }
        }
        Op::Gelu { a } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                accumulate(
                    ga,
                    g.iter().zip(val(*a)).map(|(g, &x)| g * gelu_derivative(x)),
                );
            }
        }
        Op::Relu { a } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                accumulate(
                    ga,
                    g.iter()
                        .zip(val(*a))
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }),
                );
            }
        }
        &Op::Softmax { a, blocks } => {
            if let Some(ga) = slot(nodes, grads, a) {
                let y = node.value.data();
                if blocks.inner == 1 {
                    let rows = ga.chunks_exact_mut(blocks.len);
                    for ((gar, yr), gr) in rows.zip(y.chunks_exact(blocks.len)).zip(g.chunks_exact(blocks.len)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, yv), gv) in gar.iter_mut().zip(yr).zip(gr) {
                            *d += yv * (gv - dot);
                        }
                    }
                    return;
                }
                for o in 0..blocks.outer {
                    for i in 0..blocks.inner {
                        let base = o * blocks.len * blocks.inner + i;
                        let idx = |j: usize| base + j * blocks.inner;
                        let dot: f64 = (0..blocks.len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..blocks.len {
                            ga[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let gv = val(*gain);
            let dim = gv.len();
            if let Some(gg) = slot(nodes, grads, *gain) {
                for (gr, hr) in g.chunks_exact(dim).zip(xhat.chunks_exact(dim)) {
                    accumulate(gg, gr.iter().zip(hr).map(|(a, b)| a * b));
                }
            }
            if let Some(gb) = slot(nodes, grads, *bias) {
                for gr in g.chunks_exact(dim) {
                    accumulate(gb, gr.iter().copied());
                }
            }
            if let Some(gx) = slot(nodes, grads, *x) {
                let mut dxhat = vec![0.0; dim];
                for (r, &is) in inv_std.iter().enumerate() {
                    let gr = &g[r * dim..(r + 1) * dim];
                    let hr = &xhat[r * dim..(r + 1) * dim];
                    for j in 0..dim {
                        dxhat[j] = gr[j] * gv[j];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / dim as f64;
                    let mean_dh = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / dim as f64;
                    let out = &mut gx[r * dim..(r + 1) * dim];
                    for j in 0..dim {
                        out[j] += is * (dxhat[j] - mean_d - hr[j] * mean_dh);
                    }
                }
            }
        }
        Op::CrossEntropy {
            logits,
            label,
            probs,
        } => {
            if let Some(gl) = slot(nodes, grads, *logits) {
                let up = g[0];
                for (j, p) in probs.iter().enumerate() {
                    let target = if j == *label { 1.0 } else { 0.0 };
                    gl[j] += up * (p - target);
                }
            }
        }
        Op::Sum { a } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                let up = g[0];
                ga.iter_mut().for_each(|x| *x += up);
            }
        }
        Op::Mean { a } => {
            if let Some(ga) = slot(nodes, grads, *a) {
                let up = g[0] / ga.len() as f64;
                ga.iter_mut().for_each(|x| *x += up);
            }
        }
    }
}
