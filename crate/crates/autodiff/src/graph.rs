//! Tape-based computation graph.
//!
//! A [`Graph`] records every operation applied to [`Var`] handles. Values are
//! computed eagerly during construction; [`Graph::backward`] walks the tape in
//! reverse and accumulates gradients into each node. Gradients are additive
//! across multiple uses of a value (multivariate chain rule).
//!
//! Forward/backward of a single graph is single-threaded at the tape level;
//! the heavy kernels (convolution, dense) parallelize internally over fixed
//! work partitions so results do not depend on worker count.

use rayon::prelude::*;

use crate::{Error, Result, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Gelu(usize),
    LnFloored {
        x: usize,
        floor: f64,
    },
    Dense {
        x: usize,
        w: usize,
        b: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        pad: (usize, usize),
    },
    ChannelBias {
        x: usize,
        b: usize,
    },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        axes: Vec<usize>,
        eps: f64,
    },
    SoftmaxRows(usize),
    L2NormalizeRows {
        x: usize,
        eps: f64,
    },
    Reshape(usize),
    ConcatChannels(Vec<usize>),
    SumAll(usize),
    MeanAll(usize),
    DotConst {
        x: usize,
        weights: Tensor,
    },
    RowLogsumexpMasked {
        x: usize,
        mask: Tensor,
    },
    Gram(usize),
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape. Build with the op methods, then call [`Graph::backward`]
/// on a scalar node and read gradients back with [`Graph::grad`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

// Fixed partition count for internally parallel kernels. Work is split into
// this many index-contiguous chunks and partial results are combined in chunk
// order, so numeric output is independent of how many threads execute them.
const PAR_CHUNKS: usize = 8;

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a tensor as a graph input. Gradients are tracked when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to `v`, if tracked.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, parents: &[usize]) -> bool {
        parents.iter().any(|&p| self.nodes[p].requires_grad)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    // ---- elementwise -----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = zip_same("add", self.val(a.0), self.val(b.0), |x, y| x + y)?;
        let req = self.requires(&[a.0, b.0]);
        Ok(self.push(out, Op::Add(a.0, b.0), req))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = zip_same("sub", self.val(a.0), self.val(b.0), |x, y| x - y)?;
        let req = self.requires(&[a.0, b.0]);
        Ok(self.push(out, Op::Sub(a.0, b.0), req))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = zip_same("mul", self.val(a.0), self.val(b.0), |x, y| x * y)?;
        let req = self.requires(&[a.0, b.0]);
        Ok(self.push(out, Op::Mul(a.0, b.0), req))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.val(a.0);
        let out = Tensor::new(v.shape().to_vec(), v.data().iter().map(|x| x * c).collect())
            .expect("same shape");
        let req = self.requires(&[a.0]);
        self.push(out, Op::Scale(a.0, c), req)
    }

    /// Exact-erf GELU: `x * Phi(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.val(a.0);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&x| x * std_normal_cdf(x)).collect(),
        )
        .expect("same shape");
        let req = self.requires(&[a.0]);
        self.push(out, Op::Gelu(a.0), req)
    }

    /// `ln(max(x, floor))`; gradient is zero where the floor is active.
    pub fn ln_floored(&mut self, a: Var, floor: f64) -> Var {
        let v = self.val(a.0);
        let out = Tensor::new(
            v.shape().to_vec(),
            v.data().iter().map(|&x| x.max(floor).ln()).collect(),
        )
        .expect("same shape");
        let req = self.requires(&[a.0]);
        self.push(out, Op::LnFloored { x: a.0, floor }, req)
    }

    // ---- linear layers ----------------------------------------------------

    /// `x [N,Din] · w [Din,Dout] + b [Dout]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.val(x.0), self.val(w.0), self.val(b.0));
        let (n, din) = as_2d("dense", xs.shape())?;
        let (wdin, dout) = as_2d("dense", ws.shape())?;
        if wdin != din || bs.shape() != [dout] {
            return Err(Error::shape(
                "dense",
                format!(
                    "x {:?} w {:?} b {:?}",
                    xs.shape(),
                    ws.shape(),
                    bs.shape()
                ),
            ));
        }
        let mut out = vec![0.0; n * dout];
        for row in out.chunks_mut(dout) {
            row.copy_from_slice(bs.data());
        }
        gemm_par(xs.data(), ws.data(), &mut out, n, din, dout);
        let req = self.requires(&[x.0, w.0, b.0]);
        Ok(self.push(
            Tensor::new(vec![n, dout], out).expect("sized"),
            Op::Dense { x: x.0, w: w.0, b: b.0 },
            req,
        ))
    }

    /// 2-D cross-correlation with zero padding, stride 1.
    ///
    /// `x` is `[N,Cin,H,W]` or `[Cin,H,W]` (treated as a single sample, output
    /// rank matches the input); kernels are `[Cout,Cin,kH,kW]`.
    pub fn conv2d(&mut self, x: Var, w: Var, pad: (usize, usize)) -> Result<Var> {
        let xs = self.val(x.0);
        let ws = self.val(w.0);
        let (batched, n, cin, h, wdt) = match *xs.shape() {
            [n, c, h, w] => (true, n, c, h, w),
            [c, h, w] => (false, 1, c, h, w),
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("input must be 3-D or 4-D, got {:?}", xs.shape()),
                ))
            }
        };
        let [cout, wcin, kh, kw] = match *ws.shape() {
            [a, b, c, d] => [a, b, c, d],
            _ => {
                return Err(Error::shape(
                    "conv2d",
                    format!("kernels must be 4-D, got {:?}", ws.shape()),
                ))
            }
        };
        let (ph, pw) = pad;
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {} channels, kernels expect {}", cin, wcin),
            ));
        }
        if kh > h + 2 * ph || kw > wdt + 2 * pw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {}x{} larger than padded input {}x{}", kh, kw, h + 2 * ph, wdt + 2 * pw),
            ));
        }
        let ho = h + 2 * ph - kh + 1;
        let wo = wdt + 2 * pw - kw + 1;
        let k = cin * kh * kw;
        let l = ho * wo;
        let sample_in = cin * h * wdt;
        let sample_out = cout * l;

        let mut out = vec![0.0; n * sample_out];
        let xd = xs.data();
        let wd = ws.data();
        // Parallel over fixed sample chunks with one im2col buffer per chunk.
        let chunk = n.div_ceil(PAR_CHUNKS).max(1);
        out.par_chunks_mut(chunk * sample_out)
            .enumerate()
            .for_each(|(ci, out_chunk)| {
                let mut col = vec![0.0; k * l];
                for (s, out_s) in out_chunk.chunks_mut(sample_out).enumerate() {
                    let ni = ci * chunk + s;
                    im2col(
                        &xd[ni * sample_in..(ni + 1) * sample_in],
                        cin,
                        h,
                        wdt,
                        kh,
                        kw,
                        ph,
                        pw,
                        ho,
                        wo,
                        &mut col,
                    );
                    gemm(wd, &col, out_s, cout, k, l);
                }
            });

        let shape = if batched {
            vec![n, cout, ho, wo]
        } else {
            vec![cout, ho, wo]
        };
        let req = self.requires(&[x.0, w.0]);
        Ok(self.push(
            Tensor::new(shape, out).expect("sized"),
            Op::Conv2d { x: x.0, w: w.0, pad },
            req,
        ))
    }

    /// Per-channel bias add for `[N,C,H,W]` (or `[C,H,W]`) feature maps.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.val(x.0);
        let bs = self.val(b.0);
        let (c, hw) = match *xs.shape() {
            [_, c, h, w] | [c, h, w] => (c, h * w),
            _ => {
                return Err(Error::shape(
                    "channel_bias",
                    format!("expected 3-D/4-D input, got {:?}", xs.shape()),
                ))
            }
        };
        if bs.shape() != [c] {
            return Err(Error::shape(
                "channel_bias",
                format!("bias {:?} does not match {} channels", bs.shape(), c),
            ));
        }
        let bd = bs.data();
        let mut out = xs.data().to_vec();
        for sample in out.chunks_mut(c * hw) {
            for (ch, slice) in sample.chunks_mut(hw).enumerate() {
                let b = bd[ch];
                for v in slice {
                    *v += b;
                }
            }
        }
        let req = self.requires(&[x.0, b.0]);
        Ok(self.push(
            Tensor::new(xs.shape().to_vec(), out).expect("same shape"),
            Op::ChannelBias { x: x.0, b: b.0 },
            req,
        ))
    }

    /// Layer normalization over `axes` with learnable gain/bias shaped like
    /// the normalized slice: `(x - mean) / sqrt(var + eps) * gain + bias`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gain: Var,
        bias: Var,
        axes: &[usize],
        eps: f64,
    ) -> Result<Var> {
        let xs = self.val(x.0);
        let plan = LayerNormPlan::new("layer_norm", xs.shape(), axes)?;
        let gs = self.val(gain.0);
        let bs = self.val(bias.0);
        if gs.elem_count() != plan.m || bs.elem_count() != plan.m {
            return Err(Error::shape(
                "layer_norm",
                format!(
                    "gain/bias must have {} elements for axes {:?} of {:?}",
                    plan.m,
                    axes,
                    xs.shape()
                ),
            ));
        }
        let xd = xs.data();
        let gd = gs.data();
        let bd = bs.data();
        let mut out = vec![0.0; xd.len()];
        for &o in &plan.outer_offsets {
            let mut mean = 0.0;
            for &i in &plan.inner_offsets {
                mean += xd[o + i];
            }
            mean /= plan.m as f64;
            let mut var = 0.0;
            for &i in &plan.inner_offsets {
                let d = xd[o + i] - mean;
                var += d * d;
            }
            var /= plan.m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (slot, &i) in plan.inner_offsets.iter().enumerate() {
                out[o + i] = (xd[o + i] - mean) * inv * gd[slot] + bd[slot];
            }
        }
        let req = self.requires(&[x.0, gain.0, bias.0]);
        Ok(self.push(
            Tensor::new(xs.shape().to_vec(), out).expect("same shape"),
            Op::LayerNorm {
                x: x.0,
                gain: gain.0,
                bias: bias.0,
                axes: axes.to_vec(),
                eps,
            },
            req,
        ))
    }

    /// Row-wise softmax of a `[N,M]` tensor, log-sum-exp stabilized.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xs = self.val(x.0);
        let (n, m) = as_2d("softmax_rows", xs.shape())?;
        let mut out = vec![0.0; n * m];
        for (row_out, row) in out.chunks_mut(m).zip(xs.data().chunks(m)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (o, &v) in row_out.iter_mut().zip(row) {
                *o = (v - max).exp();
                sum += *o;
            }
            for o in row_out.iter_mut() {
                *o /= sum;
            }
        }
        let req = self.requires(&[x.0]);
        Ok(self.push(
            Tensor::new(vec![n, m], out).expect("sized"),
            Op::SoftmaxRows(x.0),
            req,
        ))
    }

    /// Normalize each row of a `[N,D]` tensor to unit Euclidean norm.
    /// Rows with norm below `eps` are scaled by `1/eps` instead (floored).
    pub fn l2_normalize_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xs = self.val(x.0);
        let (n, d) = as_2d("l2_normalize_rows", xs.shape())?;
        let mut out = vec![0.0; n * d];
        let mut floored = 0usize;
        for (row_out, row) in out.chunks_mut(d).zip(xs.data().chunks(d)) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = if norm < eps {
                floored += 1;
                eps
            } else {
                norm
            };
            for (o, &v) in row_out.iter_mut().zip(row) {
                *o = v / denom;
            }
        }
        if floored > 0 {
            log::warn!(
                "l2_normalize_rows: {} of {} rows had norm below {:e}; floored",
                floored,
                n,
                eps
            );
        }
        let req = self.requires(&[x.0]);
        Ok(self.push(
            Tensor::new(vec![n, d], out).expect("sized"),
            Op::L2NormalizeRows { x: x.0, eps },
            req,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.val(x.0).reshaped(shape)?;
        let req = self.requires(&[x.0]);
        Ok(self.push(out, Op::Reshape(x.0), req))
    }

    /// Concatenate feature maps `[N,Ci,H,W]` along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArg("concat_channels: no inputs".into()));
        }
        let first = self.val(parts[0].0).shape().to_vec();
        let [n, _, h, w] = match *first.as_slice() {
            [n, c, h, w] => [n, c, h, w],
            _ => {
                return Err(Error::shape(
                    "concat_channels",
                    format!("expected 4-D inputs, got {:?}", first),
                ))
            }
        };
        let mut channels = Vec::with_capacity(parts.len());
        for p in parts {
            match *self.val(p.0).shape() {
                [pn, pc, phh, pww] if pn == n && phh == h && pww == w => channels.push(pc),
                ref s => {
                    return Err(Error::shape(
                        "concat_channels",
                        format!("incompatible input {:?} vs [{},_,{},{}]", s, n, h, w),
                    ))
                }
            }
        }
        let ctot: usize = channels.iter().sum();
        let hw = h * w;
        let mut out = vec![0.0; n * ctot * hw];
        for ni in 0..n {
            let mut coff = 0;
            for (p, &pc) in parts.iter().zip(&channels) {
                let src = self.val(p.0).data();
                let block = pc * hw;
                out[ni * ctot * hw + coff * hw..ni * ctot * hw + (coff + pc) * hw]
                    .copy_from_slice(&src[ni * block..(ni + 1) * block]);
                coff += pc;
            }
        }
        let req = self.requires(&parts.iter().map(|p| p.0).collect::<Vec<_>>());
        Ok(self.push(
            Tensor::new(vec![n, ctot, h, w], out).expect("sized"),
            Op::ConcatChannels(parts.iter().map(|p| p.0).collect()),
            req,
        ))
    }

    // ---- reductions and loss assembly --------------------------------------

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.val(x.0).data().iter().sum();
        let req = self.requires(&[x.0]);
        self.push(Tensor::scalar(s), Op::SumAll(x.0), req)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.val(x.0);
        let s = v.data().iter().sum::<f64>() / v.elem_count() as f64;
        let req = self.requires(&[x.0]);
        self.push(Tensor::scalar(s), Op::MeanAll(x.0), req)
    }

    /// Weighted sum with a constant weight tensor: `sum(x .* weights)`.
    pub fn dot_const(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        let xs = self.val(x.0);
        if xs.shape() != weights.shape() {
            return Err(Error::shape(
                "dot_const",
                format!("x {:?} vs weights {:?}", xs.shape(), weights.shape()),
            ));
        }
        let s = xs
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        let req = self.requires(&[x.0]);
        Ok(self.push(Tensor::scalar(s), Op::DotConst { x: x.0, weights }, req))
    }

    /// Row-wise `log(sum_j mask[i,j] * exp(x[i,j]))` with a constant 0/1 mask,
    /// stabilized by the masked row maximum. Every row must keep at least one
    /// active entry.
    pub fn row_logsumexp_masked(&mut self, x: Var, mask: Tensor) -> Result<Var> {
        let xs = self.val(x.0);
        let (n, m) = as_2d("row_logsumexp_masked", xs.shape())?;
        if mask.shape() != xs.shape() {
            return Err(Error::shape(
                "row_logsumexp_masked",
                format!("mask {:?} vs x {:?}", mask.shape(), xs.shape()),
            ));
        }
        let mut out = vec![0.0; n];
        for (i, (row, mrow)) in xs.data().chunks(m).zip(mask.data().chunks(m)).enumerate() {
            let mut max = f64::NEG_INFINITY;
            for (&v, &msk) in row.iter().zip(mrow) {
                if msk != 0.0 && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(Error::InvalidArg(format!(
                    "row_logsumexp_masked: row {} has no active entries",
                    i
                )));
            }
            let mut sum = 0.0;
            for (&v, &msk) in row.iter().zip(mrow) {
                if msk != 0.0 {
                    sum += (v - max).exp();
                }
            }
            out[i] = max + sum.ln();
        }
        let req = self.requires(&[x.0]);
        Ok(self.push(
            Tensor::new(vec![n], out).expect("sized"),
            Op::RowLogsumexpMasked { x: x.0, mask },
            req,
        ))
    }

    /// Gram matrix of row vectors: `z [N,D] -> z z^T [N,N]`.
    pub fn gram(&mut self, z: Var) -> Result<Var> {
        let zs = self.val(z.0);
        let (n, d) = as_2d("gram", zs.shape())?;
        let mut out = vec![0.0; n * n];
        gemm_nt(zs.data(), zs.data(), &mut out, n, d, n);
        let req = self.requires(&[z.0]);
        Ok(self.push(
            Tensor::new(vec![n, n], out).expect("sized"),
            Op::Gram(z.0),
            req,
        ))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse-mode accumulation from a scalar loss. Any previous gradients in
    /// the graph are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.elem_count() != 1 {
            return Err(Error::NonScalarLoss(
                self.nodes[loss.0].value.shape().to_vec(),
            ));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let g = self.nodes[i].grad.take().expect("checked");
            self.step_backward(i, &g)?;
            self.nodes[i].grad = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: usize, update: impl FnOnce(&mut [f64])) {
        if !self.nodes[target].requires_grad {
            return;
        }
        if self.nodes[target].grad.is_none() {
            self.nodes[target].grad = Some(vec![0.0; self.nodes[target].value.elem_count()]);
        }
        update(self.nodes[target].grad.as_mut().expect("just set"));
    }

    fn step_backward(&mut self, i: usize, g: &[f64]) -> Result<()> {
        // Ops are immutable once pushed; clone the light descriptor so we can
        // mutate gradient buffers while reading parent values.
        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                self.accumulate(a, |ga| add_assign(ga, g, 1.0));
                self.accumulate(b, |gb| add_assign(gb, g, 1.0));
            }
            &Op::Sub(a, b) => {
                self.accumulate(a, |ga| add_assign(ga, g, 1.0));
                self.accumulate(b, |gb| add_assign(gb, g, -1.0));
            }
            &Op::Mul(a, b) => {
                let av: Vec<f64> = self.val(a).data().to_vec();
                let bv: Vec<f64> = self.val(b).data().to_vec();
                self.accumulate(a, |ga| {
                    for ((ga, &go), &b) in ga.iter_mut().zip(g).zip(&bv) {
                        *ga += go * b;
                    }
                });
                self.accumulate(b, |gb| {
                    for ((gb, &go), &a) in gb.iter_mut().zip(g).zip(&av) {
                        *gb += go * a;
                    }
                });
            }
            &Op::Scale(a, c) => {
                self.accumulate(a, |ga| add_assign(ga, g, c));
            }
            &Op::Gelu(a) => {
                let xv: Vec<f64> = self.val(a).data().to_vec();
                self.accumulate(a, |ga| {
                    for ((ga, &go), &x) in ga.iter_mut().zip(g).zip(&xv) {
                        *ga += go * gelu_grad(x);
                    }
                });
            }
            &Op::LnFloored { x, floor } => {
                let xv: Vec<f64> = self.val(x).data().to_vec();
                self.accumulate(x, |gx| {
                    for ((gx, &go), &x) in gx.iter_mut().zip(g).zip(&xv) {
                        if x > floor {
                            *gx += go / x;
                        }
                    }
                });
            }
            &Op::Dense { x, w, b } => self.backward_dense(x, w, b, g),
            &Op::Conv2d { x, w, pad } => self.backward_conv2d(x, w, pad, g),
            &Op::ChannelBias { x, b } => {
                let (c, hw) = match *self.val(x).shape() {
                    [_, c, h, w] | [c, h, w] => (c, h * w),
                    _ => unreachable!("validated at forward"),
                };
                self.accumulate(x, |gx| add_assign(gx, g, 1.0));
                self.accumulate(b, |gb| {
                    for sample in g.chunks(c * hw) {
                        for (ch, slice) in sample.chunks(hw).enumerate() {
                            gb[ch] += slice.iter().sum::<f64>();
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                axes,
                eps,
            } => {
                let (x, gain, bias, axes, eps) = (*x, *gain, *bias, axes.clone(), *eps);
                self.backward_layer_norm(x, gain, bias, &axes, eps, g)?;
            }
            &Op::SoftmaxRows(x) => {
                let p: Vec<f64> = self.nodes[i].value.data().to_vec();
                let m = self.nodes[i].value.shape()[1];
                self.accumulate(x, |gx| {
                    for ((gx_row, g_row), p_row) in
                        gx.chunks_mut(m).zip(g.chunks(m)).zip(p.chunks(m))
                    {
                        let dot: f64 = g_row.iter().zip(p_row).map(|(a, b)| a * b).sum();
                        for ((gx, &go), &p) in gx_row.iter_mut().zip(g_row).zip(p_row) {
                            *gx += p * (go - dot);
                        }
                    }
                });
            }
            &Op::L2NormalizeRows { x, eps } => {
                let xv: Vec<f64> = self.val(x).data().to_vec();
                let d = self.val(x).shape()[1];
                let y: Vec<f64> = self.nodes[i].value.data().to_vec();
                self.accumulate(x, |gx| {
                    for (((gx_row, g_row), x_row), y_row) in gx
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(xv.chunks(d))
                        .zip(y.chunks(d))
                    {
                        let norm = x_row.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if norm < eps {
                            for (gx, &go) in gx_row.iter_mut().zip(g_row) {
                                *gx += go / eps;
                            }
                        } else {
                            let dot: f64 = g_row.iter().zip(y_row).map(|(a, b)| a * b).sum();
                            for ((gx, &go), &y) in gx_row.iter_mut().zip(g_row).zip(y_row) {
                                *gx += (go - y * dot) / norm;
                            }
                        }
                    }
                });
            }
            &Op::Reshape(x) => {
                self.accumulate(x, |gx| add_assign(gx, g, 1.0));
            }
            Op::ConcatChannels(parts) => {
                let parts = parts.clone();
                let out_shape = self.nodes[i].value.shape().to_vec();
                let (n, h, w) = (out_shape[0], out_shape[2], out_shape[3]);
                let hw = h * w;
                let ctot = out_shape[1];
                let mut coff = 0;
                for p in parts {
                    let pc = self.val(p).shape()[1];
                    let block = pc * hw;
                    self.accumulate(p, |gp| {
                        for ni in 0..n {
                            let src = &g[ni * ctot * hw + coff * hw..ni * ctot * hw + (coff + pc) * hw];
                            for (dst, &s) in gp[ni * block..(ni + 1) * block].iter_mut().zip(src) {
                                *dst += s;
                            }
                        }
                    });
                    coff += pc;
                }
            }
            &Op::SumAll(x) => {
                let go = g[0];
                self.accumulate(x, |gx| {
                    for v in gx {
                        *v += go;
                    }
                });
            }
            &Op::MeanAll(x) => {
                let n = self.val(x).elem_count() as f64;
                let go = g[0] / n;
                self.accumulate(x, |gx| {
                    for v in gx {
                        *v += go;
                    }
                });
            }
            Op::DotConst { x, weights } => {
                let x = *x;
                let w: Vec<f64> = weights.data().to_vec();
                let go = g[0];
                self.accumulate(x, |gx| {
                    for (gx, &w) in gx.iter_mut().zip(&w) {
                        *gx += go * w;
                    }
                });
            }
            Op::RowLogsumexpMasked { x, mask } => {
                let x = *x;
                let mask = mask.clone();
                let xv: Vec<f64> = self.val(x).data().to_vec();
                let m = self.val(x).shape()[1];
                let out: Vec<f64> = self.nodes[i].value.data().to_vec();
                self.accumulate(x, |gx| {
                    for (i_row, ((gx_row, x_row), m_row)) in gx
                        .chunks_mut(m)
                        .zip(xv.chunks(m))
                        .zip(mask.data().chunks(m))
                        .enumerate()
                    {
                        let go = g[i_row];
                        let lse = out[i_row];
                        for ((gx, &x), &msk) in gx_row.iter_mut().zip(x_row).zip(m_row) {
                            if msk != 0.0 {
                                *gx += go * (x - lse).exp();
                            }
                        }
                    }
                });
            }
            &Op::Gram(z) => {
                let zv: Vec<f64> = self.val(z).data().to_vec();
                let (n, d) = (self.val(z).shape()[0], self.val(z).shape()[1]);
                // dZ += (G + G^T) Z
                let mut gsym = vec![0.0; n * n];
                for r in 0..n {
                    for c in 0..n {
                        gsym[r * n + c] = g[r * n + c] + g[c * n + r];
                    }
                }
                self.accumulate(z, |gz| {
                    gemm(&gsym, &zv, gz, n, n, d);
                });
            }
        }
        Ok(())
    }

    fn backward_dense(&mut self, x: usize, w: usize, b: usize, g: &[f64]) {
        let xv: Vec<f64> = self.val(x).data().to_vec();
        let wv: Vec<f64> = self.val(w).data().to_vec();
        let (n, din) = (self.val(x).shape()[0], self.val(x).shape()[1]);
        let dout = self.val(w).shape()[1];
        self.accumulate(x, |gx| {
            gemm_nt(g, &wv, gx, n, dout, din);
        });
        self.accumulate(w, |gw| {
            gemm_tn(&xv, g, gw, din, n, dout);
        });
        self.accumulate(b, |gb| {
            for row in g.chunks(dout) {
                for (gb, &v) in gb.iter_mut().zip(row) {
                    *gb += v;
                }
            }
        });
    }

    fn backward_conv2d(&mut self, x: usize, w: usize, pad: (usize, usize), g: &[f64]) {
        let (n, cin, h, wdt) = match *self.val(x).shape() {
            [n, c, h, w] => (n, c, h, w),
            [c, h, w] => (1, c, h, w),
            _ => unreachable!("validated at forward"),
        };
        let ws = self.val(w).shape();
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        let (ph, pw) = pad;
        let ho = h + 2 * ph - kh + 1;
        let wo = wdt + 2 * pw - kw + 1;
        let k = cin * kh * kw;
        let l = ho * wo;
        let sample_in = cin * h * wdt;
        let sample_out = cout * l;
        let xv: Vec<f64> = self.val(x).data().to_vec();
        let wv: Vec<f64> = self.val(w).data().to_vec();

        self.accumulate(w, |gw| {
            // Fixed chunking over samples; partials summed in chunk order.
            let chunk = n.div_ceil(PAR_CHUNKS).max(1);
            let partials: Vec<Vec<f64>> = (0..n.div_ceil(chunk))
                .into_par_iter()
                .map(|ci| {
                    let mut part = vec![0.0; cout * k];
                    let mut col = vec![0.0; k * l];
                    for ni in ci * chunk..((ci + 1) * chunk).min(n) {
                        im2col(
                            &xv[ni * sample_in..(ni + 1) * sample_in],
                            cin,
                            h,
                            wdt,
                            kh,
                            kw,
                            ph,
                            pw,
                            ho,
                            wo,
                            &mut col,
                        );
                        gemm_nt(
                            &g[ni * sample_out..(ni + 1) * sample_out],
                            &col,
                            &mut part,
                            cout,
                            l,
                            k,
                        );
                    }
                    part
                })
                .collect();
            for part in partials {
                for (gw, p) in gw.iter_mut().zip(part) {
                    *gw += p;
                }
            }
        });

        self.accumulate(x, |gx| {
            let chunk = n.div_ceil(PAR_CHUNKS).max(1);
            gx.par_chunks_mut(chunk * sample_in)
                .enumerate()
                .for_each(|(ci, gx_chunk)| {
                    let mut col = vec![0.0; k * l];
                    for (s, gx_s) in gx_chunk.chunks_mut(sample_in).enumerate() {
                        let ni = ci * chunk + s;
                        col.iter_mut().for_each(|v| *v = 0.0);
                        gemm_tn(
                            &wv,
                            &g[ni * sample_out..(ni + 1) * sample_out],
                            &mut col,
                            k,
                            cout,
                            l,
                        );
                        col2im(&col, cin, h, wdt, kh, kw, ph, pw, ho, wo, gx_s);
                    }
                });
        });
    }

    fn backward_layer_norm(
        &mut self,
        x: usize,
        gain: usize,
        bias: usize,
        axes: &[usize],
        eps: f64,
        g: &[f64],
    ) -> Result<()> {
        let xs = self.val(x);
        let plan = LayerNormPlan::new("layer_norm", xs.shape(), axes)?;
        let xv: Vec<f64> = xs.data().to_vec();
        let gd: Vec<f64> = self.val(gain).data().to_vec();
        let m = plan.m as f64;

        // Shared per-group statistics, recomputed from x.
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_sigma = vec![0.0; plan.outer_offsets.len()];
        for (oi, &o) in plan.outer_offsets.iter().enumerate() {
            let mut mean = 0.0;
            for &i in &plan.inner_offsets {
                mean += xv[o + i];
            }
            mean /= m;
            let mut var = 0.0;
            for &i in &plan.inner_offsets {
                let d = xv[o + i] - mean;
                var += d * d;
            }
            var /= m;
            let inv = 1.0 / (var + eps).sqrt();
            inv_sigma[oi] = inv;
            for &i in &plan.inner_offsets {
                xhat[o + i] = (xv[o + i] - mean) * inv;
            }
        }

        self.accumulate(gain, |gg| {
            for &o in &plan.outer_offsets {
                for (slot, &i) in plan.inner_offsets.iter().enumerate() {
                    gg[slot] += g[o + i] * xhat[o + i];
                }
            }
        });
        self.accumulate(bias, |gb| {
            for &o in &plan.outer_offsets {
                for (slot, &i) in plan.inner_offsets.iter().enumerate() {
                    gb[slot] += g[o + i];
                }
            }
        });
        self.accumulate(x, |gx| {
            for (oi, &o) in plan.outer_offsets.iter().enumerate() {
                let inv = inv_sigma[oi];
                let mut mean_gy = 0.0;
                let mut mean_gy_xhat = 0.0;
                for (slot, &i) in plan.inner_offsets.iter().enumerate() {
                    let gy = g[o + i] * gd[slot];
                    mean_gy += gy;
                    mean_gy_xhat += gy * xhat[o + i];
                }
                mean_gy /= m;
                mean_gy_xhat /= m;
                for (slot, &i) in plan.inner_offsets.iter().enumerate() {
                    let gy = g[o + i] * gd[slot];
                    gx[o + i] += inv * (gy - mean_gy - xhat[o + i] * mean_gy_xhat);
                }
            }
        });
        Ok(())
    }
}

// ---- shared kernels --------------------------------------------------------

fn zip_same(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Tensor::new(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn as_2d(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [n, m] => Ok((n, m)),
        _ => Err(Error::shape(op, format!("expected 2-D, got {:?}", shape))),
    }
}

fn add_assign(dst: &mut [f64], src: &[f64], c: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s * c;
    }
}

/// Standard normal CDF via the error function.
fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    std_normal_cdf(x) + x * pdf
}

/// `c += a · b` for row-major `a [m,k]`, `b [k,n]`, `c [m,n]`, parallel over
/// row blocks of `c`.
fn gemm_par(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let chunk = m.div_ceil(PAR_CHUNKS).max(1);
    c.par_chunks_mut(chunk * n).enumerate().for_each(|(ci, c_chunk)| {
        let row0 = ci * chunk;
        let rows = c_chunk.len() / n;
        gemm(&a[row0 * k..(row0 + rows) * k], b, c_chunk, rows, k, n);
    });
}

/// `c += a · b`, row-major, single-threaded.
fn gemm(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (l, &a_il) in a_row.iter().enumerate() {
            if a_il == 0.0 {
                continue;
            }
            let b_row = &b[l * n..(l + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_il * bv;
            }
        }
    }
}

/// `c += a · b^T` for `a [m,k]`, `b [n,k]`, `c [m,n]`.
fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *cv += acc;
        }
    }
}

/// `c += a^T · b` for `a [k,m]`, `b [k,n]`, `c [m,n]`.
fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for l in 0..k {
        let a_row = &a[l * m..(l + 1) * m];
        let b_row = &b[l * n..(l + 1) * n];
        for (i, &a_li) in a_row.iter().enumerate() {
            if a_li == 0.0 {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += a_li * bv;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
    col: &mut [f64],
) {
    let l = ho * wo;
    for ci in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &mut col[((ci * kh + ki) * kw + kj) * l..((ci * kh + ki) * kw + kj + 1) * l];
                for oh in 0..ho {
                    let ih = (oh + ki) as isize - ph as isize;
                    let dst = &mut row[oh * wo..(oh + 1) * wo];
                    if ih < 0 || ih >= h as isize {
                        dst.iter_mut().for_each(|v| *v = 0.0);
                        continue;
                    }
                    let src_base = (ci * h + ih as usize) * w;
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow + kj) as isize - pw as isize;
                        *d = if iw < 0 || iw >= w as isize {
                            0.0
                        } else {
                            x[src_base + iw as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    col: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
    x: &mut [f64],
) {
    let l = ho * wo;
    for ci in 0..cin {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = &col[((ci * kh + ki) * kw + kj) * l..((ci * kh + ki) * kw + kj + 1) * l];
                for oh in 0..ho {
                    let ih = (oh + ki) as isize - ph as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let dst_base = (ci * h + ih as usize) * w;
                    for ow in 0..wo {
                        let iw = (ow + kj) as isize - pw as isize;
                        if iw >= 0 && iw < w as isize {
                            x[dst_base + iw as usize] += row[oh * wo + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Index bookkeeping for layer normalization over an arbitrary axis subset.
struct LayerNormPlan {
    /// Flat offsets of every normalized group start (complement axes).
    outer_offsets: Vec<usize>,
    /// Flat offsets within one group (normalized axes, row-major order).
    inner_offsets: Vec<usize>,
    /// Elements per group.
    m: usize,
}

impl LayerNormPlan {
    fn new(op: &'static str, shape: &[usize], axes: &[usize]) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidArg(format!("{}: empty axis list", op)));
        }
        let mut seen = vec![false; shape.len()];
        for &ax in axes {
            if ax >= shape.len() || seen[ax] {
                return Err(Error::shape(
                    op,
                    format!("bad axes {:?} for shape {:?}", axes, shape),
                ));
            }
            seen[ax] = true;
        }
        let mut strides = vec![1usize; shape.len()];
        for i in (0..shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let mut sorted_axes = axes.to_vec();
        sorted_axes.sort_unstable();
        let inner_offsets = enumerate_offsets(shape, &strides, &sorted_axes);
        let complement: Vec<usize> = (0..shape.len()).filter(|d| !seen[*d]).collect();
        let outer_offsets = enumerate_offsets(shape, &strides, &complement);
        let m = inner_offsets.len();
        Ok(LayerNormPlan {
            outer_offsets,
            inner_offsets,
            m,
        })
    }
}

/// All flat offsets reachable by varying only `dims` (row-major order).
fn enumerate_offsets(shape: &[usize], strides: &[usize], dims: &[usize]) -> Vec<usize> {
    let mut offsets = vec![0usize];
    for &d in dims {
        let mut next = Vec::with_capacity(offsets.len() * shape[d]);
        for &o in &offsets {
            for i in 0..shape[d] {
                next.push(o + i * strides[d]);
            }
        }
        offsets = next;
    }
    offsets
}
