use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::params::ParamStore;

use super::kernels::{self, Conv2dGeom};
use super::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    MatMul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, shared_b: bool },
    Permute { x: Var, axes: Vec<usize> },
    Reshape(Var),
    Expand(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Gelu(Var),
    Sigmoid(Var),
    SumAll(Var),
    MeanAxis { x: Var, axis: usize },
    Conv2d { input: Var, kernel: Var, geom: Conv2dGeom },
    Bilinear { x: Var, h: usize, w: usize },
    Concat { parts: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Pad2d { x: Var, pad: [usize; 4] },
    MinMax { x: Var, len: usize, scale: f64, eps: f64, args: Vec<(usize, usize)> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations. Nodes are appended in evaluation order, so
/// the tape is always topologically sorted.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(Var, String)>,
}

/// Gradients of a scalar loss with respect to every differentiable leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    by_node: HashMap<usize, Tensor>,
    params: Vec<(Var, String)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.by_node.get(&v.0)
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }

    /// Gradients keyed by parameter name, summed over repeated uses.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        let mut out: BTreeMap<String, Tensor> = BTreeMap::new();
        for (v, name) in &self.params {
            if let Some(g) = self.by_node.get(&v.0) {
                match out.get_mut(name) {
                    Some(acc) => acc.add_assign(g),
                    None => {
                        out.insert(name.clone(), g.clone());
                    }
                }
            }
        }
        out
    }
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        self.push(t, Op::Leaf, requires_grad, "leaf")
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, false)
    }

    /// Records a parameter from `store` as a leaf; trainable parameters
    /// require gradients.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let p = store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name:?}")))?;
        let v = self.leaf(p.value.clone(), p.trainable)?;
        self.params.push((v, name.to_string()));
        Ok(v)
    }

    /// Copy of `v`'s value as a fresh constant, cut from the gradient path.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = self.value(v).clone();
        self.constant(t)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out = kernels::broadcast_shape(&sa, &sb).ok_or_else(|| {
            Error::dim(name, format!("shapes {} and {} do not broadcast", shape_str(&sa), shape_str(&sb)))
        })?;
        let oa = kernels::broadcast_offsets(&sa, &out);
        let ob = kernels::broadcast_offsets(&sb, &out);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = oa.iter().zip(&ob).map(|(&i, &j)| f(da[i], db[j])).collect();
        Ok((Tensor::new(&out, data)?, self.rg(&[a, b])))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(t, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul(a, b), rg, "mul")
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        let t = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(&[x]);
        self.push(t, Op::Affine { x, scale }, rg, "affine")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.affine(x, s, 0.0)
    }

    /// Batched matrix product. `a` is `[..., m, k]`; `b` is either `[k, n]`
    /// (shared across the batch) or `[..., k, n]` with the same leading dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let err = || {
            Error::dim(
                "matmul",
                format!("cannot multiply {} by {}", shape_str(&sa), shape_str(&sb)),
            )
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != kb {
            return Err(err());
        }
        let lead = &sa[..sa.len() - 2];
        let shared_b = sb.len() == 2;
        if !shared_b && &sb[..sb.len() - 2] != lead {
            return Err(err());
        }
        let batch: usize = lead.iter().product();
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for bi in 0..batch {
            let bslice = if shared_b { db } else { &db[bi * k * n..(bi + 1) * k * n] };
            kernels::matmul_acc(
                &da[bi * m * k..(bi + 1) * m * k],
                bslice,
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let rg = self.rg(&[a, b]);
        self.push(
            Tensor::new(&shape, out)?,
            Op::MatMul { a, b, batch, m, k, n, shared_b },
            rg,
            "matmul",
        )
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let t = kernels::permute(self.value(x), axes)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Permute { x, axes: axes.to_vec() }, rg, "permute")
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let nd = self.shape(x).len();
        if nd < 2 {
            return Err(Error::dim("transpose", "need at least two axes"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(x, &axes)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).reshape(shape)?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Reshape(x), rg, "reshape")
    }

    /// Broadcasts `x` to `shape`.
    pub fn expand(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let src = self.shape(x).to_vec();
        match kernels::broadcast_shape(&src, shape) {
            Some(s) if s == shape => {}
            _ => {
                return Err(Error::dim(
                    "expand",
                    format!("cannot broadcast {} to {}", shape_str(&src), shape_str(shape)),
                ))
            }
        }
        let offs = kernels::broadcast_offsets(&src, shape);
        let d = self.value(x).data();
        let t = Tensor::new(shape, offs.iter().map(|&i| d[i]).collect())?;
        let rg = self.rg(&[x]);
        self.push(t, Op::Expand(x), rg, "expand")
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("softmax", format!("axis {axis} out of range for {shape:?}")));
        }
        let (o, l, i) = kernels::axis_split(&shape, axis);
        let y = kernels::softmax(self.value(x).data(), o, l, i);
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&shape, y)?, Op::Softmax { x, axis }, rg, "softmax")
    }

    /// Normalises over the last axis (no affine part).
    pub fn layer_norm_core(&mut self, x: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::dim("layer_norm", "scalar input"))?;
        if d == 0 {
            return Err(Error::dim("layer_norm", "empty last axis"));
        }
        let (y, inv_std) = kernels::layer_norm(self.value(x).data(), d, eps);
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&shape, y)?, Op::LayerNorm { x, inv_std }, rg, "layer_norm")
    }

    /// Layer normalisation over the last axis followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let xh = self.layer_norm_core(x, eps)?;
        let scaled = self.mul(xh, gain)?;
        self.add(scaled, bias)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(kernels::gelu);
        let rg = self.rg(&[x]);
        self.push(t, Op::Gelu(x), rg, "gelu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x).map(kernels::sigmoid);
        let rg = self.rg(&[x]);
        self.push(t, Op::Sigmoid(x), rg, "sigmoid")
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg, "sum")
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel();
        let s = self.sum_all(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim("mean", format!("axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = kernels::axis_split(&shape, axis);
        let d = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let src = &d[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        for v in &mut out {
            *v /= len as f64;
        }
        let mut oshape = shape.clone();
        oshape.remove(axis);
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&oshape, out)?, Op::MeanAxis { x, axis }, rg, "mean")
    }

    /// Cross-correlation of `[b, c_in, h, w]` with `[c_out, c_in, kh, kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: (usize, usize), padding: (usize, usize)) -> Result<Var> {
        let geom = Conv2dGeom::new(self.shape(input), self.shape(kernel), stride, padding)?;
        let y = kernels::conv2d(self.value(input).data(), self.value(kernel).data(), &geom);
        let rg = self.rg(&[input, kernel]);
        self.push(
            Tensor::new(&geom.out_shape(), y)?,
            Op::Conv2d { input, kernel, geom },
            rg,
            "conv2d",
        )
    }

    /// 1-D cross-correlation of `[b, c_in, l]` with `[c_out, c_in, k]`.
    pub fn conv1d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 3 || sk.len() != 3 {
            return Err(Error::dim("conv1d", format!("expected 3-D input and kernel, got {si:?} and {sk:?}")));
        }
        let x4 = self.reshape(input, &[si[0], si[1], 1, si[2]])?;
        let k4 = self.reshape(kernel, &[sk[0], sk[1], 1, sk[2]])?;
        let y = self.conv2d(x4, k4, (1, stride), (0, padding))?;
        let ys = self.shape(y).to_vec();
        self.reshape(y, &[ys[0], ys[1], ys[3]])
    }

    /// Align-corners bilinear resize of the last two axes.
    pub fn bilinear_resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::dim("bilinear_resize", format!("need at least 2 axes, got {shape:?}")));
        }
        if out_h == 0 || out_w == 0 {
            return Err(Error::Domain(format!("bilinear resize to {out_h}×{out_w}")));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if h == 0 || w == 0 {
            return Err(Error::Domain("bilinear resize of an empty image".into()));
        }
        let planes: usize = shape[..shape.len() - 2].iter().product();
        let y = kernels::bilinear(self.value(x).data(), planes, h, w, out_h, out_w);
        let mut oshape = shape[..shape.len() - 2].to_vec();
        oshape.extend([out_h, out_w]);
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&oshape, y)?, Op::Bilinear { x, h, w }, rg, "bilinear_resize")
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::dim(
                    "concat",
                    format!("shape {} incompatible with {} along axis {axis}", shape_str(s), shape_str(&base)),
                ));
            }
            total += s[axis];
        }
        let (outer, _, inner) = kernels::axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = self.shape(*p)[axis];
                let d = self.value(*p).data();
                out.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = self.rg(parts);
        self.push(Tensor::new(&shape, out)?, Op::Concat { parts: parts.to_vec(), axis }, rg, "concat")
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::dim(
                "narrow",
                format!("range {start}..{} on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = kernels::axis_split(&shape, axis);
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&d[from..from + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&oshape, out)?, Op::Narrow { x, axis, start }, rg, "narrow")
    }

    /// Zero padding of the last two axes by `[top, bottom, left, right]`.
    pub fn pad2d(&mut self, x: Var, pad: [usize; 4]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::dim("pad2d", format!("need at least 2 axes, got {shape:?}")));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let (oh, ow) = (h + pad[0] + pad[1], w + pad[2] + pad[3]);
        let planes: usize = shape[..shape.len() - 2].iter().product();
        let d = self.value(x).data();
        let mut out = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            for y in 0..h {
                let src = &d[(p * h + y) * w..(p * h + y + 1) * w];
                let at = (p * oh + y + pad[0]) * ow + pad[2];
                out[at..at + w].copy_from_slice(src);
            }
        }
        let mut oshape = shape[..shape.len() - 2].to_vec();
        oshape.extend([oh, ow]);
        let rg = self.rg(&[x]);
        self.push(Tensor::new(&oshape, out)?, Op::Pad2d { x, pad }, rg, "pad2d")
    }

    /// Per-instance min-max rescaling over everything but the first axis:
    /// `scale·(x − min)/(max − min + eps)`. Gradients flow through the
    /// extremes as well as through the affine part.
    pub fn min_max_scale(&mut self, x: Var, scale: f64, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || shape[0] == 0 {
            return Err(Error::dim("min_max_scale", format!("bad shape {shape:?}")));
        }
        let len = shape[1..].iter().product::<usize>();
        if len == 0 {
            return Err(Error::dim("min_max_scale", format!("empty instances in {shape:?}")));
        }
        let (y, args) = kernels::min_max_scale(self.value(x).data(), len, scale, eps);
        let rg = self.rg(&[x]);
        self.push(
            Tensor::new(&shape, y)?,
            Op::MinMax { x, len, scale, eps, args },
            rg,
            "min_max_scale",
        )
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        if self.shape(pred) != self.shape(target) {
            return Err(Error::dim(
                "mse",
                format!("prediction {} vs target {}", shape_str(self.shape(pred)), shape_str(self.shape(target))),
            ));
        }
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        self.mean_all(sq)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients {
                by_node: HashMap::new(),
                params: self.params.clone(),
            });
        }
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        let mut by_node = HashMap::new();
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                by_node.insert(idx, g);
                continue;
            }
            self.propagate(idx, &g, &mut grads)?;
        }
        Ok(Gradients {
            by_node,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Sums `g` (shaped like the broadcast output) back onto `shape`.
    fn reduce_to(shape: &[usize], out_shape: &[usize], g: &[f64], f: impl Fn(usize, f64) -> f64) -> Tensor {
        let offs = kernels::broadcast_offsets(shape, out_shape);
        let mut acc = Tensor::zeros(shape);
        let d = acc.data_mut();
        for (i, (&o, &gv)) in offs.iter().zip(g).enumerate() {
            d[o] += f(i, gv);
        }
        acc
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let out_shape = node.value.shape();
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.requires_grad(*a) {
                    let t = Self::reduce_to(self.shape(*a), out_shape, gd, |_, v| v);
                    self.accumulate(grads, *a, t);
                }
                if self.requires_grad(*b) {
                    let t = Self::reduce_to(self.shape(*b), out_shape, gd, |_, v| sign * v);
                    self.accumulate(grads, *b, t);
                }
            }
            Op::Mul(a, b) => {
                for (this, other) in [(*a, *b), (*b, *a)] {
                    if !self.requires_grad(this) {
                        continue;
                    }
                    let offs = kernels::broadcast_offsets(self.shape(other), out_shape);
                    let od = self.value(other).data();
                    let t = Self::reduce_to(self.shape(this), out_shape, gd, |i, v| v * od[offs[i]]);
                    self.accumulate(grads, this, t);
                }
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                self.accumulate(grads, *x, g.map(|v| v * s));
            }
            Op::MatMul { a, b, batch, m, k, n, shared_b } => {
                let (m, k, n) = (*m, *k, *n);
                let (da, db) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let mut ga = Tensor::zeros(self.shape(*a));
                    for bi in 0..*batch {
                        let bs = if *shared_b { db } else { &db[bi * k * n..(bi + 1) * k * n] };
                        kernels::matmul_grad_a(
                            &gd[bi * m * n..(bi + 1) * m * n],
                            bs,
                            &mut ga.data_mut()[bi * m * k..(bi + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let mut gb = Tensor::zeros(self.shape(*b));
                    for bi in 0..*batch {
                        let range = if *shared_b { 0..k * n } else { bi * k * n..(bi + 1) * k * n };
                        kernels::matmul_grad_b(
                            &da[bi * m * k..(bi + 1) * m * k],
                            &gd[bi * m * n..(bi + 1) * m * n],
                            &mut gb.data_mut()[range],
                            m,
                            k,
                            n,
                        );
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Permute { x, axes } => {
                let t = kernels::permute(g, &kernels::inverse_axes(axes))?;
                self.accumulate(grads, *x, t);
            }
            Op::Reshape(x) => {
                let t = g.reshape(self.shape(*x))?;
                self.accumulate(grads, *x, t);
            }
            Op::Expand(x) => {
                let t = Self::reduce_to(self.shape(*x), out_shape, gd, |_, v| v);
                self.accumulate(grads, *x, t);
            }
            Op::Softmax { x, axis } => {
                let (o, l, i) = kernels::axis_split(out_shape, *axis);
                let dx = kernels::softmax_backward(node.value.data(), gd, o, l, i);
                self.accumulate(grads, *x, Tensor::new(out_shape, dx)?);
            }
            Op::LayerNorm { x, inv_std } => {
                let d = *out_shape.last().unwrap_or(&1);
                let dx = kernels::layer_norm_backward(node.value.data(), inv_std, gd, d);
                self.accumulate(grads, *x, Tensor::new(out_shape, dx)?);
            }
            Op::Gelu(x) => {
                let xd = self.value(*x).data();
                let dx = xd.iter().zip(gd).map(|(&v, &gv)| gv * kernels::gelu_grad(v)).collect();
                self.accumulate(grads, *x, Tensor::new(out_shape, dx)?);
            }
            Op::Sigmoid(x) => {
                let y = node.value.data();
                let dx = y.iter().zip(gd).map(|(&s, &gv)| gv * s * (1.0 - s)).collect();
                self.accumulate(grads, *x, Tensor::new(out_shape, dx)?);
            }
            Op::SumAll(x) => {
                let v = gd[0];
                self.accumulate(grads, *x, Tensor::full(self.shape(*x), v));
            }
            Op::MeanAxis { x, axis } => {
                let shape = self.shape(*x);
                let (outer, len, inner) = kernels::axis_split(shape, *axis);
                let mut dx = Tensor::zeros(shape);
                let d = dx.data_mut();
                let s = 1.0 / len as f64;
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            d[(o * len + j) * inner + i] = gd[o * inner + i] * s;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Conv2d { input, kernel, geom } => {
                let (di, dk) = kernels::conv2d_backward(
                    self.value(*input).data(),
                    self.value(*kernel).data(),
                    gd,
                    geom,
                    self.requires_grad(*input),
                    self.requires_grad(*kernel),
                );
                if let Some(di) = di {
                    self.accumulate(grads, *input, Tensor::new(self.shape(*input), di)?);
                }
                if let Some(dk) = dk {
                    self.accumulate(grads, *kernel, Tensor::new(self.shape(*kernel), dk)?);
                }
            }
            Op::Bilinear { x, h, w } => {
                let nd = out_shape.len();
                let (oh, ow) = (out_shape[nd - 2], out_shape[nd - 1]);
                let planes: usize = out_shape[..nd - 2].iter().product();
                let dx = kernels::bilinear_backward(gd, planes, *h, *w, oh, ow);
                self.accumulate(grads, *x, Tensor::new(self.shape(*x), dx)?);
            }
            Op::Concat { parts, axis } => {
                let (outer, total, inner) = kernels::axis_split(out_shape, *axis);
                let mut start = 0;
                for p in parts {
                    let len = self.shape(*p)[*axis];
                    if self.requires_grad(*p) {
                        let mut out = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let from = (o * total + start) * inner;
                            out.extend_from_slice(&gd[from..from + len * inner]);
                        }
                        self.accumulate(grads, *p, Tensor::new(self.shape(*p), out)?);
                    }
                    start += len;
                }
            }
            Op::Narrow { x, axis, start } => {
                let shape = self.shape(*x);
                let (outer, full, inner) = kernels::axis_split(shape, *axis);
                let len = out_shape[*axis];
                let mut dx = Tensor::zeros(shape);
                let d = dx.data_mut();
                for o in 0..outer {
                    let to = (o * full + start) * inner;
                    d[to..to + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Pad2d { x, pad } => {
                let shape = self.shape(*x);
                let nd = shape.len();
                let (h, w) = (shape[nd - 2], shape[nd - 1]);
                let (oh, ow) = (out_shape[nd - 2], out_shape[nd - 1]);
                let planes: usize = shape[..nd - 2].iter().product();
                let mut dx = Tensor::zeros(shape);
                let d = dx.data_mut();
                for p in 0..planes {
                    for y in 0..h {
                        let at = (p * oh + y + pad[0]) * ow + pad[2];
                        d[(p * h + y) * w..(p * h + y + 1) * w].copy_from_slice(&gd[at..at + w]);
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::MinMax { x, len, scale, eps, args } => {
                let dx = kernels::min_max_scale_backward(self.value(*x).data(), gd, args, *len, *scale, *eps);
                self.accumulate(grads, *x, Tensor::new(self.shape(*x), dx)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_by_hand() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.])).unwrap();
        let b = g.constant(t(&[2, 1], &[1., 1.])).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).data(), &[3., 7.]);
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(3)).unwrap();
        let bt = t(&[3, 2], &[1., -2., 0.5, 4., 3., 9.]);
        let b = g.constant(bt.clone()).unwrap();
        let c = g.matmul(i, b).unwrap();
        assert_eq!(g.value(c), &bt);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let msg = g.matmul(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("cannot multiply"), "{msg}");
    }

    #[test]
    fn grad_of_sum_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[1., -2., 5.]), true).unwrap();
        let s = g.sum_all(x).unwrap();
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[1., 1., 1.]);
    }

    #[test]
    fn grad_of_sum_of_squares_is_two_x() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[1., -2., 5.]), true).unwrap();
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq).unwrap();
        let gr = g.backward(s).unwrap();
        assert_eq!(gr.get(x).unwrap().data(), &[2., -4., 10.]);
    }

    #[test]
    fn grad_of_sum_ab_wrt_a_is_ones_times_bt() {
        let mut g = Graph::new();
        let a = g.leaf(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]), true).unwrap();
        let bt = t(&[3, 2], &[0.5, -1., 2., 3., -4., 0.25]);
        let b = g.constant(bt.clone()).unwrap();
        let c = g.matmul(a, b).unwrap();
        let s = g.sum_all(c).unwrap();
        let gr = g.backward(s).unwrap();
        let ga = gr.get(a).unwrap();
        for i in 0..2 {
            for p in 0..3 {
                let expected = bt.at(&[p, 0]) + bt.at(&[p, 1]);
                assert!((ga.at(&[i, p]) - expected).abs() < 1e-12);
            }
        }
        // constants get no entry
        assert!(gr.get(b).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::ones(&[2]), true).unwrap();
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_extremes() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[0., 0., 0.])).unwrap();
        let y = g.softmax(x, 0).unwrap();
        for v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(t(&[2], &[1000., 0.])).unwrap();
        let y = g.softmax(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 0.0]);
    }

    #[test]
    fn layer_norm_by_hand() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1., 3., 4., 4.])).unwrap();
        let y = g.layer_norm_core(x, 1e-5).unwrap();
        let v = g.value(y).data();
        // population variance of [1,3] is 1
        assert!((v[0] + 1.0).abs() < 1e-5 && (v[1] - 1.0).abs() < 1e-5);
        assert_eq!(&v[2..], &[0.0, 0.0]);
    }

    #[test]
    fn conv_hand_values() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::ones(&[1, 1, 3, 3])).unwrap();
        let k = g.constant(Tensor::ones(&[1, 1, 3, 3])).unwrap();
        let y = g.conv2d(x, k, (1, 1), (0, 0)).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).item(), 9.0);

        // 1×1 kernel of ones sums channels
        let xt = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64);
        let x = g.constant(xt.clone()).unwrap();
        let k = g.constant(Tensor::ones(&[1, 2, 1, 1])).unwrap();
        let y = g.conv2d(x, k, (1, 1), (0, 0)).unwrap();
        let v = g.value(y);
        for p in 0..4 {
            assert_eq!(v.data()[p], xt.data()[p] + xt.data()[4 + p]);
        }
    }

    #[test]
    fn bilinear_hand_values() {
        let mut g = Graph::new();
        let xt = t(&[1, 1, 2, 2], &[0., 1., 2., 3.]);
        let x = g.constant(xt.clone()).unwrap();
        let y = g.bilinear_resize(x, 3, 3).unwrap();
        assert_eq!(g.value(y).at(&[0, 0, 1, 1]), 1.5);
        let same = g.bilinear_resize(x, 2, 2).unwrap();
        assert_eq!(g.value(same), &xt);
        assert!(matches!(g.bilinear_resize(x, 0, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[2], 1e300)).unwrap();
        assert!(matches!(g.mul(x, x), Err(Error::NonFinite { op: "mul" })));
    }

    #[test]
    fn mean_axis_and_expand_round_trip_grads() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_fn(&[2, 3], |i| i as f64), true).unwrap();
        let m = g.mean_axis(x, 1).unwrap();
        assert_eq!(g.value(m).data(), &[1.0, 4.0]);
        let r = g.reshape(m, &[2, 1]).unwrap();
        let e = g.expand(r, &[2, 4]).unwrap();
        let s = g.sum_all(e).unwrap();
        let gr = g.backward(s).unwrap();
        for v in gr.get(x).unwrap().data() {
            assert!((v - 4.0 / 3.0).abs() < 1e-12);
        }
    }
}
