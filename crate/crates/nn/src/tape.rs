//! Operation record and reverse pass.

use crate::error::{shape_err, NnError, Result};
use crate::kernels::{self, ConvGeom};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn from_index(index: usize) -> Self {
        Var(index)
    }
}

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Param(ParamId),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    MaxPool2 {
        input: Var,
        argmax: Vec<u32>,
    },
    Upsample2(Var),
    Concat(Var, Var),
    Cosine {
        a: Var,
        b: Var,
        eps2: F,
    },
    BroadcastMul {
        map: Var,
        x: Var,
    },
    Affine {
        x: Var,
        scale: F,
    },
    Subpixel {
        x: Var,
        r: usize,
    },
    Add(Var, Var),
    L1 {
        pred: Var,
        target: Var,
    },
    TvL1(Var),
    WeightedSum {
        x: Var,
        weights: Tensor<F>,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

#[cfg(test)]
thread_local! {
    /// Negative control for the gradient-check suite: scales the ReLU
    /// input gradient when set.
    pub(crate) static CORRUPT_RELU_BACKWARD: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

/// Records operations in execution order.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Tape::new()
    }
}

/// Gradients of the leaves of one backward pass.
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor<F>) -> Tensor<F> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn same_shape<F: Scalar>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A constant input.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// An input whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable parameter; its gradient is added to the store by
    /// [`Tape::backward_into`].
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.get(id).value.clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// 2-D cross-correlation with zero padding. `weight` is
    /// `out × in × k × k`, `bias` has `out` entries.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let (batch, cin, h, w) = self.value(input).dims4("conv2d")?;
        let (cout, wcin, k, k2) = self.value(weight).dims4("conv2d weight")?;
        if wcin != cin || k != k2 || k == 0 {
            return Err(shape_err(
                "conv2d",
                format!("input has {cin} channels, weight is {:?}", self.value(weight).shape()),
            ));
        }
        if self.value(bias).numel() != cout {
            return Err(shape_err("conv2d", format!("bias has {} values for {cout} outputs", self.value(bias).numel())));
        }
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return Err(shape_err("conv2d", format!("kernel {k} does not fit {h}x{w} with pad {pad}")));
        }
        if !(h + 2 * pad - k).is_multiple_of(stride) || !(w + 2 * pad - k).is_multiple_of(stride) {
            return Err(shape_err(
                "conv2d",
                format!("stride {stride} does not tile {h}x{w} (pad {pad}, kernel {k})"),
            ));
        }
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w,
            cout,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        };
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            &geom,
        );
        let value = Tensor::new(vec![batch, cout, geom.ho, geom.wo], out)?;
        Ok(self.push(value, Op::Conv2d { input, weight, bias, geom }, &[input, weight, bias]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| if a > F::zero() { a } else { F::zero() }).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4("maxpool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err("maxpool2", format!("spatial dims {h}x{w} must be even")));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.value(input).data(), b * c, h, w);
        let value = Tensor::new(vec![b, c, h / 2, w / 2], out)?;
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, &[input]))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(input).dims4("upsample2")?;
        let out = kernels::upsample2_forward(self.value(input).data(), b * c, h, w);
        let value = Tensor::new(vec![b, c, 2 * h, 2 * w], out)?;
        Ok(self.push(value, Op::Upsample2(input), &[input]))
    }

    /// Stacks `a` then `b` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ba, ca, ha, wa) = self.value(a).dims4("concat_channels")?;
        let (bb, cb, hb, wb) = self.value(b).dims4("concat_channels")?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(shape_err(
                "concat_channels",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let plane = ha * wa;
        let mut out = Vec::with_capacity(ba * (ca + cb) * plane);
        for i in 0..ba {
            out.extend_from_slice(&self.value(a).data()[i * ca * plane..(i + 1) * ca * plane]);
            out.extend_from_slice(&self.value(b).data()[i * cb * plane..(i + 1) * cb * plane]);
        }
        let value = Tensor::new(vec![ba, ca + cb, ha, wa], out)?;
        Ok(self.push(value, Op::Concat(a, b), &[a, b]))
    }

    /// Cosine similarity along channels, one channel out:
    /// `Σ_c a·b / (max(‖a‖, ε) · max(‖b‖, ε))`, clamped to `[−1, 1]`.
    pub fn cosine_channels(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        same_shape("cosine_channels", self.value(a), self.value(b))?;
        let (batch, c, h, w) = self.value(a).dims4("cosine_channels")?;
        let eps2 = F::from_f64_lossy(eps * eps);
        let parts = kernels::cosine_parts(self.value(a).data(), self.value(b).data(), batch, c, h * w);
        let one = F::one();
        let out = (0..batch * h * w)
            .map(|i| {
                // sqrt(x·x) == x, so identical inputs give exactly 1.
                let denom = (parts.na2[i].max(eps2) * parts.nb2[i].max(eps2)).sqrt();
                (parts.dot[i] / denom).max(-one).min(one)
            })
            .collect();
        let value = Tensor::new(vec![batch, 1, h, w], out)?;
        Ok(self.push(value, Op::Cosine { a, b, eps2 }, &[a, b]))
    }

    /// `map` (one channel) times every channel of `x`.
    pub fn broadcast_mul(&mut self, map: Var, x: Var) -> Result<Var> {
        let (bm, cm, hm, wm) = self.value(map).dims4("broadcast_mul")?;
        let (bx, cx, hx, wx) = self.value(x).dims4("broadcast_mul")?;
        if cm != 1 || (bm, hm, wm) != (bx, hx, wx) {
            return Err(shape_err(
                "broadcast_mul",
                format!("map {:?} vs input {:?}", self.value(map).shape(), self.value(x).shape()),
            ));
        }
        let plane = hx * wx;
        let (md, xd) = (self.value(map).data(), self.value(x).data());
        let mut out = Vec::with_capacity(xd.len());
        for b in 0..bx {
            let m = &md[b * plane..(b + 1) * plane];
            for c in 0..cx {
                let off = (b * cx + c) * plane;
                out.extend(xd[off..off + plane].iter().zip(m).map(|(&v, &s)| v * s));
            }
        }
        let value = Tensor::new(self.value(x).shape().to_vec(), out)?;
        Ok(self.push(value, Op::BroadcastMul { map, x }, &[map, x]))
    }

    /// `scale · x + shift` elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, t) = (F::from_f64_lossy(scale), F::from_f64_lossy(shift));
        let v = self.value(x);
        let value = Tensor::new(v.shape().to_vec(), v.data().iter().map(|&a| s * a + t).collect()).expect("same shape");
        self.push(value, Op::Affine { x, scale: s }, &[x])
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.affine(x, factor, 0.0)
    }

    /// Sub-pixel rearrangement `C·r² × H × W → C × rH × rW`:
    /// `out(c, y, x) = in(c·r² + (y mod r)·r + (x mod r), y / r, x / r)`.
    pub fn subpixel_upsample(&mut self, x: Var, r: usize) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("subpixel_upsample")?;
        if r == 0 || c % (r * r) != 0 {
            return Err(shape_err("subpixel_upsample", format!("{c} channels not divisible by r^2 = {}", r * r)));
        }
        let out = kernels::subpixel(self.value(x).data(), b, c / (r * r), h, w, r, false);
        let value = Tensor::new(vec![b, c / (r * r), h * r, w * r], out)?;
        Ok(self.push(value, Op::Subpixel { x, r }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Mean absolute difference.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape("l1_loss", self.value(pred), self.value(target))?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        if p.is_empty() {
            return Err(shape_err("l1_loss", "empty input"));
        }
        let sum: f64 = p.iter().zip(t).map(|(&a, &b)| (a - b).abs().as_f64()).sum();
        let value = Tensor::scalar(F::from_f64_lossy(sum / p.len() as f64));
        Ok(self.push(value, Op::L1 { pred, target }, &[pred, target]))
    }

    /// Mean |horizontal forward difference| plus mean |vertical forward
    /// difference|, within each plane.
    pub fn tv_l1(&mut self, x: Var) -> Result<Var> {
        let (b, c, h, w) = self.value(x).dims4("tv_l1")?;
        if h < 2 || w < 2 {
            return Err(shape_err("tv_l1", format!("needs at least 2x2 planes, got {h}x{w}")));
        }
        let d = self.value(x).data();
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        for p in 0..b * c {
            let plane = &d[p * h * w..(p + 1) * h * w];
            for y in 0..h {
                for xi in 0..w {
                    let v = plane[y * w + xi];
                    if xi + 1 < w {
                        sx += (plane[y * w + xi + 1] - v).abs().as_f64();
                    }
                    if y + 1 < h {
                        sy += (plane[(y + 1) * w + xi] - v).abs().as_f64();
                    }
                }
            }
        }
        let nx = (b * c * h * (w - 1)) as f64;
        let ny = (b * c * (h - 1) * w) as f64;
        let value = Tensor::scalar(F::from_f64_lossy(sx / nx + sy / ny));
        Ok(self.push(value, Op::TvL1(x), &[x]))
    }

    /// `Σ weights ⊙ x` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: Tensor<F>) -> Result<Var> {
        same_shape("weighted_sum", self.value(x), &weights)?;
        let s: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &b)| (a * b).as_f64())
            .sum();
        let value = Tensor::scalar(F::from_f64_lossy(s));
        Ok(self.push(value, Op::WeightedSum { x, weights }, &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let ones = Tensor::full(self.value(x).shape(), F::one());
        self.weighted_sum(x, ones).expect("same shape")
    }

    /// Reverse pass from a scalar `loss`. Returns the gradients of every leaf
    /// and parameter node that the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.nodes.is_empty() {
            return Err(NnError::EmptyTape);
        }
        let last = self.nodes.get(loss.0).ok_or(NnError::UnknownVar(loss.0))?;
        if !last.value.is_scalar() {
            return Err(NnError::NotScalar(last.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..=loss.0).map(|_| None).collect();
        if !last.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(last.value.shape(), F::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[i] = Some(g);
                }
                op => self.backward_op(op, &g, &mut grads)?,
            }
        }
        Ok(Gradients { grads })
    }

    /// [`Tape::backward`], then adds every parameter gradient into `store`.
    /// Repeated calls accumulate.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<F>) -> Result<Gradients<F>> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate().take(grads.grads.len()) {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                let p = store.get_mut(*id);
                if p.grad.shape() != g.shape() {
                    return Err(shape_err(
                        "backward",
                        format!("parameter {} is {:?}, gradient is {:?}", p.name, p.grad.shape(), g.shape()),
                    ));
                }
                p.grad.add_assign(g);
            }
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_op(&self, op: &Op<F>, g: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) -> Result<()> {
        let zero = F::zero();
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let wv = self.value(*weight);
                let mut dw = vec![zero; wv.numel()];
                let mut db = vec![zero; geom.cout];
                let dx = kernels::conv2d_backward(
                    self.value(*input).data(),
                    wv.data(),
                    g.data(),
                    geom,
                    self.wants(*input),
                    &mut dw,
                    &mut db,
                );
                if let Some(dx) = dx {
                    self.accumulate(grads, *input, Tensor::new(self.value(*input).shape().to_vec(), dx)?);
                }
                self.accumulate(grads, *weight, Tensor::new(wv.shape().to_vec(), dw)?);
                self.accumulate(grads, *bias, Tensor::new(self.value(*bias).shape().to_vec(), db)?);
            }
            Op::Relu(x) => {
                #[allow(unused_mut)]
                let mut pass = F::one();
                #[cfg(test)]
                if CORRUPT_RELU_BACKWARD.with(|c| c.get()) {
                    pass = F::from_f64_lossy(1.5);
                }
                let xv = self.value(*x);
                let dx = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&a, &gi)| if a > zero { gi * pass } else { zero })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::MaxPool2 { input, argmax } => {
                let mut dx = Tensor::zeros(self.value(*input).shape());
                let d = dx.data_mut();
                for (&idx, &gi) in argmax.iter().zip(g.data()) {
                    d[idx as usize] += gi;
                }
                self.accumulate(grads, *input, dx);
            }
            Op::Upsample2(x) => {
                let (b, c, h, w) = self.value(*x).dims4("upsample2")?;
                let dx = kernels::upsample2_backward(g.data(), b * c, h, w);
                self.accumulate(grads, *x, Tensor::new(vec![b, c, h, w], dx)?);
            }
            Op::Concat(a, b) => {
                let (batch, ca, h, w) = self.value(*a).dims4("concat_channels")?;
                let cb = self.value(*b).shape()[1];
                let plane = h * w;
                let (mut ga, mut gb) = (Vec::new(), Vec::new());
                for i in 0..batch {
                    let base = i * (ca + cb) * plane;
                    ga.extend_from_slice(&g.data()[base..base + ca * plane]);
                    gb.extend_from_slice(&g.data()[base + ca * plane..base + (ca + cb) * plane]);
                }
                self.accumulate(grads, *a, Tensor::new(vec![batch, ca, h, w], ga)?);
                self.accumulate(grads, *b, Tensor::new(vec![batch, cb, h, w], gb)?);
            }
            Op::Cosine { a, b, eps2 } => {
                let (batch, c, h, w) = self.value(*a).dims4("cosine_channels")?;
                let plane = h * w;
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let parts = kernels::cosine_parts(ad, bd, batch, c, plane);
                let n = batch * plane;
                // per location: ∂cos/∂a = b/s − cos·a/‖a‖² (norm term only when above ε)
                let mut coef_b = vec![zero; n];
                let mut coef_a = vec![zero; n];
                let mut self_a = vec![zero; n];
                let mut self_b = vec![zero; n];
                for i in 0..n {
                    let na2 = parts.na2[i].max(*eps2);
                    let nb2 = parts.nb2[i].max(*eps2);
                    let s = (na2 * nb2).sqrt();
                    let cos = parts.dot[i] / s;
                    let gi = g.data()[i];
                    coef_b[i] = gi / s;
                    coef_a[i] = gi / s;
                    self_a[i] = if parts.na2[i] > *eps2 { gi * cos / na2 } else { zero };
                    self_b[i] = if parts.nb2[i] > *eps2 { gi * cos / nb2 } else { zero };
                }
                let mut da = vec![zero; ad.len()];
                let mut db = vec![zero; bd.len()];
                for bi in 0..batch {
                    for ci in 0..c {
                        let off = (bi * c + ci) * plane;
                        for p in 0..plane {
                            let i = bi * plane + p;
                            da[off + p] = coef_b[i] * bd[off + p] - self_a[i] * ad[off + p];
                            db[off + p] = coef_a[i] * ad[off + p] - self_b[i] * bd[off + p];
                        }
                    }
                }
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::new(shape.clone(), da)?);
                self.accumulate(grads, *b, Tensor::new(shape, db)?);
            }
            Op::BroadcastMul { map, x } => {
                let (batch, c, h, w) = self.value(*x).dims4("broadcast_mul")?;
                let plane = h * w;
                let (md, xd) = (self.value(*map).data(), self.value(*x).data());
                if self.wants(*x) {
                    let mut dx = Vec::with_capacity(xd.len());
                    for b in 0..batch {
                        let m = &md[b * plane..(b + 1) * plane];
                        for ci in 0..c {
                            let off = (b * c + ci) * plane;
                            dx.extend(g.data()[off..off + plane].iter().zip(m).map(|(&gi, &s)| gi * s));
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![batch, c, h, w], dx)?);
                }
                if self.wants(*map) {
                    let mut dm = vec![zero; batch * plane];
                    for b in 0..batch {
                        for ci in 0..c {
                            let off = (b * c + ci) * plane;
                            for p in 0..plane {
                                dm[b * plane + p] += g.data()[off + p] * xd[off + p];
                            }
                        }
                    }
                    self.accumulate(grads, *map, Tensor::new(vec![batch, 1, h, w], dm)?);
                }
            }
            Op::Affine { x, scale } => {
                let dx = g.data().iter().map(|&gi| gi * *scale).collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
            }
            Op::Subpixel { x, r } => {
                let (b, c, h, w) = self.value(*x).dims4("subpixel_upsample")?;
                let dx = kernels::subpixel(g.data(), b, c / (r * r), h, w, *r, true);
                self.accumulate(grads, *x, Tensor::new(vec![b, c, h, w], dx)?);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::L1 { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let scale = g.item() / F::from_usize(p.numel()).expect("size");
                let dp: Vec<F> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&a, &b)| {
                        if a > b {
                            scale
                        } else if a < b {
                            -scale
                        } else {
                            zero
                        }
                    })
                    .collect();
                if self.wants(*target) {
                    let dt = dp.iter().map(|&v| -v).collect();
                    self.accumulate(grads, *target, Tensor::new(t.shape().to_vec(), dt)?);
                }
                self.accumulate(grads, *pred, Tensor::new(p.shape().to_vec(), dp)?);
            }
            Op::TvL1(x) => {
                let xv = self.value(*x);
                let (b, c, h, w) = xv.dims4("tv_l1")?;
                let gx = g.item() / F::from_usize(b * c * h * (w - 1)).expect("size");
                let gy = g.item() / F::from_usize(b * c * (h - 1) * w).expect("size");
                let sign = |d: F| {
                    if d > zero {
                        F::one()
                    } else if d < zero {
                        -F::one()
                    } else {
                        zero
                    }
                };
                let mut dx = vec![zero; xv.numel()];
                for p in 0..b * c {
                    let plane = &xv.data()[p * h * w..(p + 1) * h * w];
                    let dplane = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..h {
                        for xi in 0..w {
                            let i = y * w + xi;
                            if xi + 1 < w {
                                let s = sign(plane[i + 1] - plane[i]) * gx;
                                dplane[i + 1] += s;
                                dplane[i] -= s;
                            }
                            if y + 1 < h {
                                let s = sign(plane[i + w] - plane[i]) * gy;
                                dplane[i + w] += s;
                                dplane[i] -= s;
                            }
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::WeightedSum { x, weights } => {
                let gi = g.item();
                let dx = weights.data().iter().map(|&w| w * gi).collect();
                self.accumulate(grads, *x, Tensor::new(weights.shape().to_vec(), dx)?);
            }
        }
        Ok(())
    }
}

/// Inverse of [`Tape::subpixel_upsample`] on a plain tensor.
pub fn subpixel_downsample<F: Scalar>(x: &Tensor<F>, r: usize) -> Result<Tensor<F>> {
    let (b, c, h, w) = x.dims4("subpixel_downsample")?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(shape_err("subpixel_downsample", format!("{h}x{w} not divisible by {r}")));
    }
    let out = kernels::subpixel(x.data(), b, c, h / r, w / r, r, true);
    Tensor::new(vec![b, c * r * r, h / r, w / r], out)
}
