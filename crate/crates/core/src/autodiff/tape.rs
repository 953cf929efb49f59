use indexmap::IndexMap;

use super::kernels::{col2im, conv_out, gemm, im2col, ConvGeom};
use super::{ParameterSet, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<R> {
    Leaf,
    Linear { x: usize, w: usize, b: usize },
    Conv2d { x: usize, w: usize, b: usize, stride: usize },
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Minimum(usize, usize),
    Scale(usize, R),
    AddScalar(usize),
    MulScalarVar { x: usize, s: usize },
    SumAll(usize),
    MeanAll(usize),
    SumLast(usize),
    ConcatLast(usize, usize),
    SliceLast { x: usize, start: usize },
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Reshape(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<R>, rstd: Vec<R> },
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<R> },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    requires_grad: bool,
}

/// Leaf handles for every entry of a [`ParameterSet`] bound to a tape.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("parameter {name:?} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Gradients of a scalar loss with respect to the leaves of a tape.
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    /// `None` when the leaf does not influence the loss or is a constant.
    pub fn get(&self, var: Var) -> Option<&Tensor<R>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient as a tensor, zero-filled when the leaf was not reached.
    pub fn get_or_zeros(&self, tape: &Tape<R>, var: Var) -> Tensor<R> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(var).shape()))
    }
}

/// Record of one forward pass, replayed in reverse by [`Tape::backward`].
pub struct Tape<R> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Tape { nodes: Vec::new() }
    }
}

fn acc<R: Real>(grads: &mut [Option<Tensor<R>>], idx: usize, g: Tensor<R>) {
    match &mut grads[idx] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor<R>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copy of `v` cut off from gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Binds every entry of `params` as a differentiable leaf.
    pub fn bind(&mut self, params: &ParameterSet<R>) -> BoundParams {
        self.bind_with(params, true)
    }

    /// Binds `params` as constants; no gradient will ever reach them.
    pub fn bind_frozen(&mut self, params: &ParameterSet<R>) -> BoundParams {
        self.bind_with(params, false)
    }

    fn bind_with(&mut self, params: &ParameterSet<R>, grad: bool) -> BoundParams {
        let vars = params
            .iter()
            .map(|(name, t)| (name.to_owned(), self.push(t.clone(), Op::Leaf, grad)))
            .collect();
        BoundParams { vars }
    }

    fn unary(&mut self, x: Var, f: impl Fn(R) -> R, op: Op<R>) -> Var {
        let value = self.nodes[x.0].value.map(f);
        let rg = self.rg(x.0);
        self.push(value, op, rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::config(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(R, R) -> R, op: Op<R>) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, op, rg))
    }

    /// Affine map over the last dimension: `x · wᵀ + b` with `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape().len() != 2 {
            return Err(Error::config(format!("dense weight must be 2-D, got {:?}", wv.shape())));
        }
        let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
        if xv.last_dim() != in_dim {
            return Err(Error::config(format!(
                "dense input dimension {} != weight input dimension {in_dim}",
                xv.last_dim()
            )));
        }
        if bv.shape() != [out_dim] {
            return Err(Error::config(format!("dense bias shape {:?} != [{out_dim}]", bv.shape())));
        }
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * out_dim);
        for _ in 0..rows {
            out.extend_from_slice(bv.data());
        }
        gemm(false, true, rows, out_dim, in_dim, R::one(), xv.data(), wv.data(), R::one(), &mut out);
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().expect("non-empty shape") = out_dim;
        let value = Tensor::new(shape, out)?;
        let rg = self.rg(x.0) || self.rg(w.0) || self.rg(b.0);
        Ok(self.push(value, Op::Linear { x: x.0, w: w.0, b: b.0 }, rg))
    }

    fn conv_geom(&self, x: usize, w: usize, stride: usize) -> Result<(usize, usize, ConvGeom)> {
        let xs = self.nodes[x].value.shape();
        let ws = self.nodes[w].value.shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::config(format!(
                "conv2d expects [B,C,H,W] input and [O,C,k,k] kernel, got {xs:?} and {ws:?}"
            )));
        }
        let (batch, channels, height, width) = (xs[0], xs[1], xs[2], xs[3]);
        let (out_ch, k) = (ws[0], ws[2]);
        if ws[1] != channels || ws[3] != k {
            return Err(Error::config(format!(
                "conv2d kernel {ws:?} incompatible with {channels} input channels"
            )));
        }
        let (out_h, out_w) = match (conv_out(height, k, stride), conv_out(width, k, stride)) {
            (Some(h), Some(w)) => (h, w),
            _ => {
                return Err(Error::config(format!(
                    "conv2d kernel {k} with stride {stride} does not fit a {height}x{width} input"
                )))
            }
        };
        Ok((
            batch,
            out_ch,
            ConvGeom {
                channels,
                height,
                width,
                kernel: k,
                stride,
                out_h,
                out_w,
            },
        ))
    }

    /// Valid-padding 2-D cross-correlation over a `[B, C, H, W]` batch.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (batch, out_ch, g) = self.conv_geom(x.0, w.0, stride)?;
        let bv = self.value(b);
        if bv.shape() != [out_ch] {
            return Err(Error::config(format!("conv2d bias shape {:?} != [{out_ch}]", bv.shape())));
        }
        let (patch, pos) = (g.patch(), g.positions());
        let img = g.channels * g.height * g.width;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let mut cols = vec![R::zero(); patch * pos];
        let mut out = vec![R::zero(); batch * out_ch * pos];
        for n in 0..batch {
            im2col(&g, &xv[n * img..(n + 1) * img], &mut cols);
            let dst = &mut out[n * out_ch * pos..(n + 1) * out_ch * pos];
            for (o, chunk) in dst.chunks_mut(pos).enumerate() {
                chunk.fill(bv.data()[o]);
            }
            gemm(false, false, out_ch, pos, patch, R::one(), wv, &cols, R::one(), dst);
        }
        let value = Tensor::new(vec![batch, out_ch, g.out_h, g.out_w], out)?;
        let rg = self.rg(x.0) || self.rg(w.0) || self.rg(b.0);
        Ok(self.push(value, Op::Conv2d { x: x.0, w: w.0, b: b.0, stride }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(R::zero()), Op::Relu(x.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x.0))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x.0))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x.0))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x.0))
    }

    pub fn scale(&mut self, x: Var, c: R) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x.0, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -R::one())
    }

    pub fn add_scalar(&mut self, x: Var, c: R) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "minimum", |x, y| if x <= y { x } else { y }, Op::Minimum(a.0, b.0))
    }

    /// `x * s` where `s` is a one-element node.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(Error::config(format!("scalar factor has shape {:?}", sv.shape())));
        }
        let c = sv.data()[0];
        let value = self.value(x).map(|v| v * c);
        let rg = self.rg(x.0) || self.rg(s.0);
        Ok(self.push(value, Op::MulScalarVar { x: x.0, s: s.0 }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: R = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x.0);
        self.push(Tensor::scalar(s), Op::SumAll(x.0), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = R::lit(v.len().max(1) as f64);
        let s: R = v.data().iter().copied().sum();
        let rg = self.rg(x.0);
        self.push(Tensor::scalar(s / n), Op::MeanAll(x.0), rg)
    }

    /// Sums over the last dimension, keeping it with size 1.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let d = v.last_dim();
        let data: Vec<R> = v.data().chunks(d.max(1)).map(|r| r.iter().copied().sum()).collect();
        let mut shape = v.shape().to_vec();
        *shape.last_mut().expect("non-empty shape") = 1;
        let value = Tensor::new(shape, data).expect("consistent shape");
        let rg = self.rg(x.0);
        self.push(value, Op::SumLast(x.0), rg)
    }

    /// Concatenates two 2-D arrays along the last dimension.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.rows() != vb.rows() {
            return Err(Error::config(format!(
                "concat expects 2-D inputs with equal rows, got {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let (da, db) = (va.last_dim(), vb.last_dim());
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for r in 0..va.rows() {
            data.extend_from_slice(va.row(r));
            data.extend_from_slice(vb.row(r));
        }
        let value = Tensor::new(vec![va.rows(), da + db], data)?;
        let rg = self.rg(a.0) || self.rg(b.0);
        Ok(self.push(value, Op::ConcatLast(a.0, b.0), rg))
    }

    /// Columns `start..start + len` of a 2-D array.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        if v.shape().len() != 2 || start + len > v.last_dim() || len == 0 {
            return Err(Error::config(format!(
                "slice {start}..{} out of range for {:?}",
                start + len,
                v.shape()
            )));
        }
        let data: Vec<R> = (0..v.rows())
            .flat_map(|r| v.row(r)[start..start + len].iter().copied())
            .collect();
        let value = Tensor::new(vec![v.rows(), len], data)?;
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::SliceLast { x: x.0, start }, rg))
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        match (va.shape(), vb.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => {
                let mut out = vec![R::zero(); m * n];
                gemm(false, false, m, n, k, R::one(), va.data(), vb.data(), R::zero(), &mut out);
                let rg = self.rg(a.0) || self.rg(b.0);
                Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a.0, b.0), rg))
            }
            (sa, sb) => Err(Error::config(format!("matmul shapes {sa:?} x {sb:?}"))),
        }
    }

    /// `[m, k] x [n, k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        match (va.shape(), vb.shape()) {
            (&[m, k], &[n, k2]) if k == k2 => {
                let mut out = vec![R::zero(); m * n];
                gemm(false, true, m, n, k, R::one(), va.data(), vb.data(), R::zero(), &mut out);
                let rg = self.rg(a.0) || self.rg(b.0);
                Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a.0, b.0), rg))
            }
            (sa, sb) => Err(Error::config(format!("matmul_nt shapes {sa:?} x {sb:?}ᵀ"))),
        }
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(x.0);
        Ok(self.push(value, Op::Reshape(x.0), rg))
    }

    /// Normalizes each row over the last dimension, then scales and shifts.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.last_dim();
        if self.value(gamma).shape() != [d] || self.value(beta).shape() != [d] {
            return Err(Error::config(format!("layer norm affine parameters must be [{d}]")));
        }
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let eps = R::lit(eps);
        let dn = R::lit(d as f64);
        let rows = xv.rows();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for r in 0..rows {
            let row = xv.row(r);
            let mu = row.iter().copied().sum::<R>() / dn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<R>() / dn;
            let s = R::one() / (var + eps).sqrt();
            rstd.push(s);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mu) * s;
                xhat.push(h);
                out.push(h * gv[j] + bv[j]);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x.0) || self.rg(gamma.0) || self.rg(beta.0);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Mean softmax cross-entropy of `[N, M]` logits against class indices.
    ///
    /// Each row is shifted by its maximum before exponentiation, and the
    /// loss is formed as `ln Σ exp(x - max) - (x_target - max)`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape().len() != 2 || lv.rows() != targets.len() {
            return Err(Error::config(format!(
                "cross entropy: logits {:?} vs {} targets",
                lv.shape(),
                targets.len()
            )));
        }
        let m = lv.last_dim();
        if let Some(&t) = targets.iter().find(|&&t| t >= m) {
            return Err(Error::config(format!("target class {t} >= {m}")));
        }
        if !lv.is_finite() {
            return Err(Error::non_finite("cross entropy logits", format!("{:?}", lv.shape())));
        }
        let n = targets.len();
        let mut probs = Vec::with_capacity(lv.len());
        let mut total = R::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let mx = row.iter().copied().fold(R::neg_infinity(), R::max);
            let z: R = row.iter().map(|&v| (v - mx).exp()).sum();
            total += z.ln() - (row[t] - mx);
            probs.extend(row.iter().map(|&v| (v - mx).exp() / z));
        }
        let loss = if n == 0 { R::zero() } else { total / R::lit(n as f64) };
        let rg = self.rg(logits.0);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<R>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(lv.shape(), R::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<R>, g: Tensor<R>, grads: &mut [Option<Tensor<R>>]) {
        let val = |i: usize| &self.nodes[i].value;
        let zip_map = |a: &Tensor<R>, b: &Tensor<R>, f: &dyn Fn(R, R) -> R| {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(a.shape().to_vec(), data).expect("same shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (out_dim, in_dim) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.rows();
                if self.rg(*x) {
                    let mut dx = vec![R::zero(); rows * in_dim];
                    gemm(false, false, rows, in_dim, out_dim, R::one(), g.data(), wv.data(), R::zero(), &mut dx);
                    acc(grads, *x, Tensor::new(xv.shape().to_vec(), dx).expect("shape"));
                }
                if self.rg(*w) {
                    let mut dw = vec![R::zero(); out_dim * in_dim];
                    gemm(true, false, out_dim, in_dim, rows, R::one(), g.data(), xv.data(), R::zero(), &mut dw);
                    acc(grads, *w, Tensor::new(vec![out_dim, in_dim], dw).expect("shape"));
                }
                if self.rg(*b) {
                    let mut db = vec![R::zero(); out_dim];
                    for row in g.data().chunks(out_dim) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    acc(grads, *b, Tensor::new(vec![out_dim], db).expect("shape"));
                }
            }
            Op::Conv2d { x, w, b, stride } => {
                let (batch, out_ch, geom) = self.conv_geom(*x, *w, *stride).expect("validated in forward");
                let (patch, pos) = (geom.patch(), geom.positions());
                let img = geom.channels * geom.height * geom.width;
                let (xv, wv) = (val(*x).data(), val(*w).data());
                let need_x = self.rg(*x);
                let need_w = self.rg(*w);
                let mut dw = vec![R::zero(); out_ch * patch];
                let mut db = vec![R::zero(); out_ch];
                let mut dx = if need_x { vec![R::zero(); batch * img] } else { Vec::new() };
                let mut cols = vec![R::zero(); patch * pos];
                let mut dcols = vec![R::zero(); patch * pos];
                for n in 0..batch {
                    let gy = &g.data()[n * out_ch * pos..(n + 1) * out_ch * pos];
                    for (o, chunk) in gy.chunks(pos).enumerate() {
                        db[o] += chunk.iter().copied().sum::<R>();
                    }
                    if need_w {
                        im2col(&geom, &xv[n * img..(n + 1) * img], &mut cols);
                        gemm(false, true, out_ch, patch, pos, R::one(), gy, &cols, R::one(), &mut dw);
                    }
                    if need_x {
                        gemm(true, false, patch, pos, out_ch, R::one(), wv, gy, R::zero(), &mut dcols);
                        col2im(&geom, &dcols, &mut dx[n * img..(n + 1) * img]);
                    }
                }
                if need_x {
                    acc(grads, *x, Tensor::new(val(*x).shape().to_vec(), dx).expect("shape"));
                }
                if need_w {
                    acc(grads, *w, Tensor::new(val(*w).shape().to_vec(), dw).expect("shape"));
                }
                if self.rg(*b) {
                    acc(grads, *b, Tensor::new(vec![out_ch], db).expect("shape"));
                }
            }
            Op::Relu(x) => {
                let d = zip_map(&g, val(*x), &|gv, xv| if xv > R::zero() { gv } else { R::zero() });
                acc(grads, *x, d);
            }
            Op::Tanh(x) => {
                let d = zip_map(&g, &node.value, &|gv, y| gv * (R::one() - y * y));
                acc(grads, *x, d);
            }
            Op::Exp(x) => {
                let d = zip_map(&g, &node.value, &|gv, y| gv * y);
                acc(grads, *x, d);
            }
            Op::Log(x) => {
                let d = zip_map(&g, val(*x), &|gv, xv| gv / xv);
                acc(grads, *x, d);
            }
            Op::Square(x) => {
                let two = R::lit(2.0);
                let d = zip_map(&g, val(*x), &|gv, xv| two * xv * gv);
                acc(grads, *x, d);
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    acc(grads, *b, g);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    acc(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, zip_map(&g, val(*b), &|gv, bv| gv * bv));
                }
                if self.rg(*b) {
                    acc(grads, *b, zip_map(&g, val(*a), &|gv, av| gv * av));
                }
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let pick_a: Vec<bool> = va.data().iter().zip(vb.data()).map(|(x, y)| x <= y).collect();
                let route = |take_a: bool| {
                    let data = g
                        .data()
                        .iter()
                        .zip(&pick_a)
                        .map(|(&gv, &pa)| if pa == take_a { gv } else { R::zero() })
                        .collect();
                    Tensor::new(g.shape().to_vec(), data).expect("shape")
                };
                if self.rg(*a) {
                    acc(grads, *a, route(true));
                }
                if self.rg(*b) {
                    acc(grads, *b, route(false));
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                acc(grads, *x, g.map(|v| v * c));
            }
            Op::AddScalar(x) => acc(grads, *x, g),
            Op::MulScalarVar { x, s } => {
                let c = val(*s).data()[0];
                if self.rg(*s) {
                    let ds: R = g.data().iter().zip(val(*x).data()).map(|(&a, &b)| a * b).sum();
                    acc(grads, *s, Tensor::new(val(*s).shape().to_vec(), vec![ds]).expect("shape"));
                }
                if self.rg(*x) {
                    acc(grads, *x, g.map(|v| v * c));
                }
            }
            Op::SumAll(x) => {
                acc(grads, *x, Tensor::full(val(*x).shape(), g.data()[0]));
            }
            Op::MeanAll(x) => {
                let n = R::lit(val(*x).len().max(1) as f64);
                acc(grads, *x, Tensor::full(val(*x).shape(), g.data()[0] / n));
            }
            Op::SumLast(x) => {
                let xv = val(*x);
                let d = xv.last_dim();
                let data = g.data().iter().flat_map(|&v| std::iter::repeat(v).take(d)).collect();
                acc(grads, *x, Tensor::new(xv.shape().to_vec(), data).expect("shape"));
            }
            Op::ConcatLast(a, b) => {
                let (da, db) = (val(*a).last_dim(), val(*b).last_dim());
                let rows = g.rows();
                if self.rg(*a) {
                    let data = (0..rows).flat_map(|r| g.row(r)[..da].iter().copied()).collect();
                    acc(grads, *a, Tensor::new(vec![rows, da], data).expect("shape"));
                }
                if self.rg(*b) {
                    let data = (0..rows).flat_map(|r| g.row(r)[da..da + db].iter().copied()).collect();
                    acc(grads, *b, Tensor::new(vec![rows, db], data).expect("shape"));
                }
            }
            Op::SliceLast { x, start } => {
                let xv = val(*x);
                let d = xv.last_dim();
                let len = g.last_dim();
                let mut data = vec![R::zero(); xv.len()];
                for r in 0..g.rows() {
                    data[r * d + start..r * d + start + len].copy_from_slice(g.row(r));
                }
                acc(grads, *x, Tensor::new(xv.shape().to_vec(), data).expect("shape"));
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.rg(*a) {
                    let mut da = vec![R::zero(); m * k];
                    gemm(false, true, m, k, n, R::one(), g.data(), vb.data(), R::zero(), &mut da);
                    acc(grads, *a, Tensor::new(vec![m, k], da).expect("shape"));
                }
                if self.rg(*b) {
                    let mut db = vec![R::zero(); k * n];
                    gemm(true, false, k, n, m, R::one(), va.data(), g.data(), R::zero(), &mut db);
                    acc(grads, *b, Tensor::new(vec![k, n], db).expect("shape"));
                }
            }
            Op::MatMulNt(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[0]);
                if self.rg(*a) {
                    let mut da = vec![R::zero(); m * k];
                    gemm(false, false, m, k, n, R::one(), g.data(), vb.data(), R::zero(), &mut da);
                    acc(grads, *a, Tensor::new(vec![m, k], da).expect("shape"));
                }
                if self.rg(*b) {
                    let mut db = vec![R::zero(); n * k];
                    gemm(true, false, n, k, m, R::one(), g.data(), va.data(), R::zero(), &mut db);
                    acc(grads, *b, Tensor::new(vec![n, k], db).expect("shape"));
                }
            }
            Op::Reshape(x) => {
                let shape = val(*x).shape().to_vec();
                acc(grads, *x, g.reshaped(&shape).expect("same size"));
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = val(*x).last_dim();
                let gv = val(*gamma).data();
                let dn = R::lit(d as f64);
                if self.rg(*gamma) || self.rg(*beta) {
                    let mut dg = vec![R::zero(); d];
                    let mut dbeta = vec![R::zero(); d];
                    for (grow, hrow) in g.data().chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * hrow[j];
                            dbeta[j] += grow[j];
                        }
                    }
                    if self.rg(*gamma) {
                        acc(grads, *gamma, Tensor::new(vec![d], dg).expect("shape"));
                    }
                    if self.rg(*beta) {
                        acc(grads, *beta, Tensor::new(vec![d], dbeta).expect("shape"));
                    }
                }
                if self.rg(*x) {
                    let mut dx = Vec::with_capacity(g.len());
                    for ((grow, hrow), &s) in g.data().chunks(d).zip(xhat.chunks(d)).zip(rstd) {
                        let dh: Vec<R> = grow.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                        let mean_dh = dh.iter().copied().sum::<R>() / dn;
                        let mean_dh_h = dh.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<R>() / dn;
                        dx.extend(dh.iter().zip(hrow).map(|(&a, &h)| s * (a - mean_dh - h * mean_dh_h)));
                    }
                    acc(grads, *x, Tensor::new(val(*x).shape().to_vec(), dx).expect("shape"));
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let m = val(*logits).last_dim();
                let scale = g.data()[0] / R::lit(targets.len().max(1) as f64);
                let mut d: Vec<R> = probs.iter().map(|&p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    d[r * m + t] -= scale;
                }
                acc(grads, *logits, Tensor::new(val(*logits).shape().to_vec(), d).expect("shape"));
            }
        }
    }
}
