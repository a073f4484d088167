use crate::kernels::{self, ConvGeom, MatRef};
use crate::{ParamGrads, ParamId, ParamStore, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside this crate.
///
/// `backward` returns one optional gradient per input, shaped like that
/// input; `None` means "no contribution".
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor]) -> Tensor;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowBias(Var, Var),
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Transpose(Var),
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Concat(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    Reshape(Var),
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Upsample2x(Var),
    AvgPool2(Var),
    ScaleChannels(Var, Var),
    Sum(Var),
    Mean(Var),
    Custom {
        op: Box<dyn CustomOp>,
        inputs: Vec<Var>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Define-by-run computation tape.
///
/// Ops evaluate eagerly; [`Graph::backward`] then walks the tape in reverse.
/// A node needs a gradient only if some leaf beneath it does, so frozen
/// parameters and constants cost nothing on the backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, if `v` required one.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every trainable parameter that took part in the graph.
    pub fn param_grads(&self, num_params: usize) -> ParamGrads {
        let mut out = ParamGrads::new(num_params);
        self.accumulate_into(&mut out);
        out
    }

    pub fn accumulate_into(&self, out: &mut ParamGrads) {
        for &(node, id) in &self.params {
            if let Some(g) = &self.grads[node] {
                out.add(id, g);
            }
        }
    }
}

pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let t = (C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64 + Sync + Send) -> Tensor {
    let mut out = x.clone();
    kernels::map_inplace(out.data_mut(), f);
    out
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn dims2(t: &Tensor) -> (usize, usize) {
    assert_eq!(t.rank(), 2, "expected rank-2 tensor, got {:?}", t.shape());
    (t.dim(0), t.dim(1))
}

fn dims3(t: &Tensor) -> (usize, usize, usize) {
    assert_eq!(t.rank(), 3, "expected [C, H, W], got {:?}", t.shape());
    (t.dim(0), t.dim(1), t.dim(2))
}

fn transpose2(t: &Tensor) -> Tensor {
    let (m, n) = dims2(t);
    let d = t.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::new([n, m], out)
}

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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A free input that receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a parameter. Frozen parameters enter as constants.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).clone(),
            op: Op::Leaf,
            requires_grad: store.is_trainable(id),
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = unary(self.value(a), move |x| x * factor);
        self.push(v, Op::Scale(a, factor), &[a])
    }

    /// `x[..., D] + b[D]`, broadcasting `b` over leading dimensions.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Var {
        let xv = self.value(x);
        let bv = self.value(b);
        let d = *xv.shape().last().expect("rank >= 1");
        assert_eq!(bv.numel(), d, "bias width {} vs rows of {}", bv.numel(), d);
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(d) {
            row.iter_mut().zip(bv.data()).for_each(|(o, b)| *o += b);
        }
        self.push(out, Op::AddRowBias(x, b), &[x, b])
    }

    /// `a[M, K] @ b[K, N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = dims2(self.value(a));
        let (k2, n) = dims2(self.value(b));
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            MatRef::row_major(self.value(a).data(), k),
            MatRef::row_major(self.value(b).data(), n),
            &mut out,
            false,
        );
        self.push(Tensor::new([m, n], out), Op::MatMul(a, b), &[a, b])
    }

    /// `a[M, K] @ b[N, K]^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = dims2(self.value(a));
        let (n, k2) = dims2(self.value(b));
        assert_eq!(k, k2, "matmul_bt inner dims {k} vs {k2}");
        let mut out = vec![0.0; m * n];
        kernels::gemm(
            m,
            k,
            n,
            MatRef::row_major(self.value(a).data(), k),
            MatRef::transposed(self.value(b).data(), k),
            &mut out,
            false,
        );
        self.push(Tensor::new([m, n], out), Op::MatMulBT(a, b), &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let v = transpose2(self.value(x));
        self.push(v, Op::Transpose(x), &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = unary(self.value(x), gelu);
        self.push(v, Op::Gelu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = unary(self.value(x), |x| x.max(0.0));
        self.push(v, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = unary(self.value(x), sigmoid);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = unary(self.value(x), f64::tanh);
        self.push(v, Op::Tanh(x), &[x])
    }

    /// Row-wise softmax of a square `[T, T]` score matrix with a causal
    /// mask: row `i` only attends to columns `0..=i`.
    pub fn causal_softmax(&mut self, x: Var) -> Var {
        let (t, t2) = dims2(self.value(x));
        assert_eq!(t, t2, "causal softmax needs a square matrix");
        let xv = self.value(x).data();
        let mut out = vec![0.0; t * t];
        for i in 0..t {
            let row = &xv[i * t..i * t + i + 1];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[i * t..i * t + i + 1];
            let mut total = 0.0;
            for (d, &s) in dst.iter_mut().zip(row) {
                *d = (s - max).exp();
                total += *d;
            }
            dst.iter_mut().for_each(|d| *d /= total);
        }
        self.push(Tensor::new([t, t], out), Op::Softmax(x), &[x])
    }

    /// Layer normalization over the last dimension of `x[N, D]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let (n, d) = dims2(self.value(x));
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        assert_eq!((g.len(), b.len()), (d, d));
        let mut xhat = vec![0.0; n * d];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        self.push(
            Tensor::new([n, d], out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Looks up rows of `table[V, D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let (v, d) = dims2(self.value(table));
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            assert!(id < v, "embedding id {id} out of range {v}");
            out.extend_from_slice(tv.row(id));
        }
        self.push(
            Tensor::new([ids.len(), d], out),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Concatenates along the leading axis; trailing dims must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let tail: Vec<usize> = self.shape(parts[0])[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(&t.shape()[1..], &tail[..], "concat trailing dims differ");
            lead += t.dim(0);
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.push(Tensor::new(shape, data), Op::Concat(parts.to_vec()), parts)
    }

    /// Concatenates rank-2 tensors along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let m = self.value(parts[0]).dim(0);
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = dims2(self.value(p));
                assert_eq!(r, m, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(
            Tensor::new([m, total], out),
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    /// Rows `start..end` of the leading axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let t = self.value(x);
        assert!(start <= end && end <= t.dim(0), "row slice {start}..{end} of {:?}", t.shape());
        let inner: usize = t.shape()[1..].iter().product();
        let data = t.data()[start * inner..end * inner].to_vec();
        let mut shape = t.shape().to_vec();
        shape[0] = end - start;
        self.push(Tensor::new(shape, data), Op::SliceRows { x, start }, &[x])
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (m, n) = dims2(self.value(x));
        assert!(start <= end && end <= n);
        let t = self.value(x);
        let mut out = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            out.extend_from_slice(&t.row(r)[start..end]);
        }
        self.push(
            Tensor::new([m, end - start], out),
            Op::SliceCols { x, start },
            &[x],
        )
    }

    /// Picks rows of a rank-2 tensor (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Var {
        let (m, n) = dims2(self.value(x));
        let t = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            assert!(r < m, "gather row {r} out of range {m}");
            out.extend_from_slice(t.row(r));
        }
        self.push(
            Tensor::new([rows.len(), n], out),
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshape(shape.to_vec());
        self.push(v, Op::Reshape(x), &[x])
    }

    /// 2-D convolution of `x[C, H, W]` with `weight[O, C, k, k]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Var {
        let (c, h, w) = dims3(self.value(x));
        let ws = self.shape(weight).to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be [O, C, k, k]");
        assert_eq!(ws[1], c, "conv expects {} input channels, got {c}", ws[1]);
        assert_eq!(ws[2], ws[3], "square kernels only");
        let out_channels = ws[0];
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kernel: ws[2],
            stride,
            pad,
        };
        let (out, cols) = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            out_channels,
        );
        let shape = [out_channels, geom.out_height(), geom.out_width()];
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.push(
            Tensor::new(shape, out),
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
                cols,
            },
            &inputs,
        )
    }

    /// Nearest-neighbour 2x upsampling of `[C, H, W]`.
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let (c, h, w) = dims3(self.value(x));
        let src = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[(ch * h2 + y) * w2 + xx] = src[(ch * h + y / 2) * w + xx / 2];
                }
            }
        }
        self.push(Tensor::new([c, h2, w2], out), Op::Upsample2x(x), &[x])
    }

    /// 2x2 average pooling of `[C, H, W]` (even H, W).
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (c, h, w) = dims3(self.value(x));
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even sides");
        let src = self.value(x).data();
        let (h2, w2) = (h / 2, w / 2);
        let mut out = vec![0.0; c * h2 * w2];
        for ch in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    let at = |dy: usize, dx: usize| src[(ch * h + 2 * y + dy) * w + 2 * xx + dx];
                    out[(ch * h2 + y) * w2 + xx] = 0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
                }
            }
        }
        self.push(Tensor::new([c, h2, w2], out), Op::AvgPool2(x), &[x])
    }

    /// `x[C, H, W] * g[C]` per channel.
    pub fn scale_channels(&mut self, x: Var, g: Var) -> Var {
        let (c, h, w) = dims3(self.value(x));
        assert_eq!(self.value(g).numel(), c);
        let gv = self.value(g).data().to_vec();
        let mut out = self.value(x).clone();
        for (ch, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
            plane.iter_mut().for_each(|v| *v *= gv[ch]);
        }
        self.push(out, Op::ScaleChannels(x, g), &[x, g])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.sum() / t.numel() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Records a [`CustomOp`] applied to `inputs`.
    pub fn custom(&mut self, op: Box<dyn CustomOp>, inputs: &[Var]) -> Var {
        let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = op.forward(&vals);
        self.push(
            out,
            Op::Custom {
                op,
                inputs: inputs.to_vec(),
            },
            inputs,
        )
    }

    /// Reverse pass from a one-element `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        let n = self.nodes.len();
        assert_eq!(self.value(root).numel(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(Tensor::new(self.shape(root), vec![1.0]));
        }
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, nd)| nd.param.filter(|_| nd.requires_grad).map(|p| (i, p)))
            .collect();
        Gradients { grads, params }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.shape(v), "gradient shape mismatch");
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                if self.needs(*b) {
                    self.acc(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.acc(grads, *a, zip_map(g, self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    self.acc(grads, *b, zip_map(g, self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, f) => {
                let f = *f;
                self.acc(grads, *a, g.map(|x| x * f));
            }
            Op::AddRowBias(x, b) => {
                self.acc(grads, *x, g.clone());
                if self.needs(*b) {
                    let d = self.value(*b).numel();
                    let mut gb = vec![0.0; d];
                    for row in g.data().chunks(d) {
                        gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                    }
                    self.acc(grads, *b, Tensor::new(self.shape(*b), gb));
                }
            }
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.value(*a));
                let n = self.value(*b).dim(1);
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(
                        m,
                        n,
                        k,
                        MatRef::row_major(g.data(), n),
                        MatRef::transposed(self.value(*b).data(), n),
                        &mut ga,
                        false,
                    );
                    self.acc(grads, *a, Tensor::new([m, k], ga));
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::gemm(
                        k,
                        m,
                        n,
                        MatRef::transposed(self.value(*a).data(), k),
                        MatRef::row_major(g.data(), n),
                        &mut gb,
                        false,
                    );
                    self.acc(grads, *b, Tensor::new([k, n], gb));
                }
            }
            Op::MatMulBT(a, b) => {
                let (m, k) = dims2(self.value(*a));
                let n = self.value(*b).dim(0);
                if self.needs(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::gemm(
                        m,
                        n,
                        k,
                        MatRef::row_major(g.data(), n),
                        MatRef::row_major(self.value(*b).data(), k),
                        &mut ga,
                        false,
                    );
                    self.acc(grads, *a, Tensor::new([m, k], ga));
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; n * k];
                    kernels::gemm(
                        n,
                        m,
                        k,
                        MatRef::transposed(g.data(), n),
                        MatRef::row_major(self.value(*a).data(), k),
                        &mut gb,
                        false,
                    );
                    self.acc(grads, *b, Tensor::new([n, k], gb));
                }
            }
            Op::Transpose(x) => self.acc(grads, *x, transpose2(g)),
            Op::Gelu(x) => {
                let gx = zip_map(g, self.value(*x), |g, x| g * gelu_grad(x));
                self.acc(grads, *x, gx);
            }
            Op::Relu(x) => {
                let gx = zip_map(g, self.value(*x), |g, x| if x > 0.0 { g } else { 0.0 });
                self.acc(grads, *x, gx);
            }
            Op::Sigmoid(x) => {
                let gx = zip_map(g, &node.value, |g, y| g * y * (1.0 - y));
                self.acc(grads, *x, gx);
            }
            Op::Tanh(x) => {
                let gx = zip_map(g, &node.value, |g, y| g * (1.0 - y * y));
                self.acc(grads, *x, gx);
            }
            Op::Softmax(x) => {
                let t = node.value.dim(0);
                let y = node.value.data();
                let gd = g.data();
                let mut gx = vec![0.0; t * t];
                for i in 0..t {
                    let r = i * t..i * t + i + 1;
                    let dot: f64 = y[r.clone()].iter().zip(&gd[r.clone()]).map(|(a, b)| a * b).sum();
                    for j in r {
                        gx[j] = y[j] * (gd[j] - dot);
                    }
                }
                self.acc(grads, *x, Tensor::new([t, t], gx));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, d) = dims2(g);
                let gd = g.data();
                let gam = self.value(*gamma).data();
                if self.needs(*gamma) || self.needs(*beta) {
                    let mut gg = vec![0.0; d];
                    let mut gbt = vec![0.0; d];
                    for r in 0..n {
                        for j in 0..d {
                            gg[j] += gd[r * d + j] * xhat[r * d + j];
                            gbt[j] += gd[r * d + j];
                        }
                    }
                    self.acc(grads, *gamma, Tensor::new([d], gg).reshape(self.shape(*gamma)));
                    self.acc(grads, *beta, Tensor::new([d], gbt).reshape(self.shape(*beta)));
                }
                if self.needs(*x) {
                    let mut gx = vec![0.0; n * d];
                    for r in 0..n {
                        let dxhat: Vec<f64> = (0..d).map(|j| gd[r * d + j] * gam[j]).collect();
                        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx = dxhat
                            .iter()
                            .zip(&xhat[r * d..(r + 1) * d])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / d as f64;
                        for j in 0..d {
                            gx[r * d + j] = inv_std[r] * (dxhat[j] - mean_d - xhat[r * d + j] * mean_dx);
                        }
                    }
                    self.acc(grads, *x, Tensor::new([n, d], gx));
                }
            }
            Op::Embedding { table, ids } => {
                let (v, d) = dims2(self.value(*table));
                let mut gt = vec![0.0; v * d];
                for (row, &id) in ids.iter().enumerate() {
                    gt[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(g.row(row))
                        .for_each(|(s, x)| *s += x);
                }
                self.acc(grads, *table, Tensor::new([v, d], gt));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.needs(p) {
                        let gp = g.data()[offset..offset + len].to_vec();
                        self.acc(grads, p, Tensor::new(self.shape(p), gp));
                    }
                    offset += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = dims2(g);
                let mut col = 0;
                for &p in parts {
                    let w = self.value(p).dim(1);
                    if self.needs(p) {
                        let mut gp = Vec::with_capacity(m * w);
                        for r in 0..m {
                            gp.extend_from_slice(&g.data()[r * total + col..r * total + col + w]);
                        }
                        self.acc(grads, p, Tensor::new([m, w], gp));
                    }
                    col += w;
                }
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let inner: usize = xv.shape()[1..].iter().product();
                let mut gx = vec![0.0; xv.numel()];
                gx[start * inner..start * inner + g.numel()].copy_from_slice(g.data());
                self.acc(grads, *x, Tensor::new(xv.shape(), gx));
            }
            Op::SliceCols { x, start } => {
                let (m, n) = dims2(self.value(*x));
                let w = g.dim(1);
                let mut gx = vec![0.0; m * n];
                for r in 0..m {
                    gx[r * n + start..r * n + start + w].copy_from_slice(g.row(r));
                }
                self.acc(grads, *x, Tensor::new([m, n], gx));
            }
            Op::GatherRows { x, rows } => {
                let (m, n) = dims2(self.value(*x));
                let mut gx = vec![0.0; m * n];
                for (i, &r) in rows.iter().enumerate() {
                    gx[r * n..(r + 1) * n]
                        .iter_mut()
                        .zip(g.row(i))
                        .for_each(|(s, v)| *s += v);
                }
                self.acc(grads, *x, Tensor::new([m, n], gx));
            }
            Op::Reshape(x) => self.acc(grads, *x, g.clone().reshape(self.shape(*x))),
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
                cols,
            } => {
                let out_channels = self.value(*weight).dim(0);
                let (dx, dw, db) = kernels::conv2d_backward(
                    geom,
                    cols,
                    self.value(*weight).data(),
                    g.data(),
                    out_channels,
                    self.needs(*x),
                );
                if let Some(dx) = dx {
                    self.acc(grads, *x, Tensor::new(self.shape(*x), dx));
                }
                self.acc(grads, *weight, Tensor::new(self.shape(*weight), dw));
                if let Some(b) = bias {
                    self.acc(grads, *b, Tensor::new(self.shape(*b), db));
                }
            }
            Op::Upsample2x(x) => {
                let (c, h, w) = dims3(self.value(*x));
                let w2 = 2 * w;
                let gd = g.data();
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..2 * h {
                        for xx in 0..w2 {
                            gx[(ch * h + y / 2) * w + xx / 2] += gd[(ch * 2 * h + y) * w2 + xx];
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new([c, h, w], gx));
            }
            Op::AvgPool2(x) => {
                let (c, h, w) = dims3(self.value(*x));
                let (h2, w2) = (h / 2, w / 2);
                let gd = g.data();
                let mut gx = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            gx[(ch * h + y) * w + xx] = 0.25 * gd[(ch * h2 + y / 2) * w2 + xx / 2];
                        }
                    }
                }
                self.acc(grads, *x, Tensor::new([c, h, w], gx));
            }
            Op::ScaleChannels(x, s) => {
                let (c, h, w) = dims3(self.value(*x));
                let plane = h * w;
                if self.needs(*x) {
                    let sv = self.value(*s).data();
                    let mut gx = g.clone();
                    for (ch, p) in gx.data_mut().chunks_mut(plane).enumerate() {
                        p.iter_mut().for_each(|v| *v *= sv[ch]);
                    }
                    self.acc(grads, *x, gx);
                }
                if self.needs(*s) {
                    let xv = self.value(*x).data();
                    let gs: Vec<f64> = (0..c)
                        .map(|ch| {
                            let r = ch * plane..(ch + 1) * plane;
                            g.data()[r.clone()].iter().zip(&xv[r]).map(|(a, b)| a * b).sum()
                        })
                        .collect();
                    self.acc(grads, *s, Tensor::new(self.shape(*s), gs));
                }
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.acc(grads, *x, Tensor::full(self.shape(*x), gv));
            }
            Op::Mean(x) => {
                let numel = self.value(*x).numel() as f64;
                let gv = g.item() / numel;
                self.acc(grads, *x, Tensor::full(self.shape(*x), gv));
            }
            Op::Custom { op, inputs } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let gs = op.backward(&vals, &node.value, g);
                assert_eq!(gs.len(), inputs.len(), "custom op {} gradient arity", op.name());
                for (&v, gv) in inputs.iter().zip(gs) {
                    if let Some(gv) = gv {
                        self.acc(grads, v, gv);
                    }
                }
            }
        }
    }
}
