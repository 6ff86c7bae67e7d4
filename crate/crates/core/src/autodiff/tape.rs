use std::fmt;
use std::str::FromStr;

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(Error::invalid(format!("unknown activation '{s}'"))),
        }
    }
}

/// Reduction axis of [`Tape::pool`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolAxis {
    /// `[c, m, n] -> [c, n]`, over frames.
    Frames,
    /// `[c, n] -> [c]`, over unordered joint pairs of `|x_i - x_j|`.
    Pairs,
    /// `[c, ...] -> [c]`, over everything but the channel axis.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Mean,
    Max,
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        p: usize,
        q: usize,
        r: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    AddBias {
        x: Var,
        b: Var,
    },
    Scale {
        x: Var,
        s: T,
    },
    ScaleChannels {
        x: Var,
        w: Var,
    },
    ConvTemporal {
        x: Var,
        w: Var,
        dilation: usize,
        stride: usize,
    },
    MaxPoolTemporal {
        x: Var,
        argmax: Vec<usize>,
    },
    Pool {
        x: Var,
        axis: PoolAxis,
        kind: PoolKind,
        argmax: Vec<usize>,
    },
    ChannelConv {
        x: Var,
        w: Var,
        b: Var,
    },
    Activate {
        x: Var,
        kind: Activation,
    },
    Exp(Var),
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    Concat(Vec<Var>),
    Sum(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
    CategoricalKl {
        p: Var,
        q: Var,
        p_probs: Vec<T>,
        q_probs: Vec<T>,
        kl: T,
    },
    GaussianKl {
        mu: Var,
        log_var: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in execution order; [`Tape::backward`] replays them in
/// reverse. A tape is single-threaded; use one tape per sample.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(what: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{what}: {a:?} vs {b:?}")));
    }
    Ok(())
}

fn log_softmax<T: Real>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + x.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    x.iter().map(|&v| v - lse).collect()
}

/// Dot product with eight interleaved partial sums, combined in a fixed
/// order.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(&x, &y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Valid output range `[t0, t1)` for a stride-1 shift `t + offset` into
/// `[0, len)`.
fn shifted_range(out_len: usize, len: usize, offset: isize) -> (usize, usize) {
    let t0 = (-offset).max(0) as usize;
    let t1 = (len as isize - offset).clamp(0, out_len as isize) as usize;
    (t0.min(t1), t1)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let value = Tensor::new(shape, data).expect("op produced a consistent tensor");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Contracts the last axis of `a` with the first axis of `b`:
    /// `[.., q] x [q, ..] -> [.., ..]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (Some(&q), Some(&qb)) = (sa.last(), sb.first()) else {
            return Err(Error::shape("matmul needs operands of rank >= 1"));
        };
        if q != qb {
            return Err(Error::shape(format!("matmul inner dims: {sa:?} x {sb:?}")));
        }
        let shape: Vec<usize> = sa[..sa.len() - 1].iter().chain(&sb[1..]).copied().collect();
        let p = self.value(a).numel() / q;
        let r = self.value(b).numel() / q;
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![T::zero(); p * r];
        for i in 0..p {
            let row = &mut out[i * r..(i + 1) * r];
            for k in 0..q {
                let av = ad[i * q + k];
                for (o, &bv) in row.iter_mut().zip(&bd[k * r..(k + 1) * r]) {
                    *o = *o + av * bv;
                }
            }
        }
        Ok(self.push(shape, out, Op::MatMul { a, b, p, q, r }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b]))
    }

    fn channel_split(&self, x: Var, w: Var, what: &str) -> Result<(usize, usize)> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.is_empty() || sw.len() != 1 || sw[0] != sx[0] {
            return Err(Error::shape(format!(
                "{what}: {sx:?} with per-channel {sw:?}"
            )));
        }
        Ok((sx[0], self.value(x).numel() / sx[0]))
    }

    /// `x[c, ..] + b[c]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (c, inner) = self.channel_split(x, b, "add_bias")?;
        let (xd, bd) = (self.data(x), self.data(b));
        let mut out = xd.to_vec();
        for ch in 0..c {
            out[ch * inner..(ch + 1) * inner]
                .iter_mut()
                .for_each(|v| *v = *v + bd[ch]);
        }
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias { x, b }, &[x, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.data(x).iter().map(|&v| v * s).collect();
        self.push(self.shape(x).to_vec(), out, Op::Scale { x, s }, &[x])
    }

    /// `x[c, ..] * w[c]`.
    pub fn scale_channels(&mut self, x: Var, w: Var) -> Result<Var> {
        let (c, inner) = self.channel_split(x, w, "scale_channels")?;
        let (xd, wd) = (self.data(x), self.data(w));
        let mut out = xd.to_vec();
        for ch in 0..c {
            out[ch * inner..(ch + 1) * inner]
                .iter_mut()
                .for_each(|v| *v = *v * wd[ch]);
        }
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::ScaleChannels { x, w },
            &[x, w],
        ))
    }

    /// Convolution along the frame axis of `x[c_in, m, n]` with
    /// `w[c_out, c_in, k]`, independently per joint. Zero padding
    /// `dilation * (k - 1) / 2` keeps the length at `ceil(m / stride)`.
    pub fn conv_temporal(&mut self, x: Var, w: Var, dilation: usize, stride: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sw[1] != sx[0] {
            return Err(Error::shape(format!(
                "conv_temporal: input {sx:?}, weights {sw:?}"
            )));
        }
        let (ci, m, n) = (sx[0], sx[1], sx[2]);
        let (co, k) = (sw[0], sw[2]);
        if k % 2 == 0 || dilation == 0 || stride == 0 {
            return Err(Error::invalid(format!(
                "conv_temporal: kernel {k} must be odd, dilation {dilation} and stride {stride} positive"
            )));
        }
        let pad = (dilation * (k - 1) / 2) as isize;
        let m_out = (m - 1) / stride + 1;
        let (xd, wd) = (self.data(x), self.data(w));
        let mut out = vec![T::zero(); co * m_out * n];
        for o in 0..co {
            let out_o = &mut out[o * m_out * n..(o + 1) * m_out * n];
            for c in 0..ci {
                let x_c = &xd[c * m * n..(c + 1) * m * n];
                for j in 0..k {
                    let wv = wd[(o * ci + c) * k + j];
                    let offset = (j * dilation) as isize - pad;
                    if stride == 1 {
                        let (t0, t1) = shifted_range(m_out, m, offset);
                        let src = (t0 as isize + offset) as usize;
                        let dst = &mut out_o[t0 * n..t1 * n];
                        for (d, &s) in dst.iter_mut().zip(&x_c[src * n..]) {
                            *d = *d + wv * s;
                        }
                    } else {
                        for t in 0..m_out {
                            let ti = (t * stride) as isize + offset;
                            if ti < 0 || ti >= m as isize {
                                continue;
                            }
                            let ti = ti as usize;
                            let src = &x_c[ti * n..(ti + 1) * n];
                            for (d, &sv) in out_o[t * n..(t + 1) * n].iter_mut().zip(src) {
                                *d = *d + wv * sv;
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            vec![co, m_out, n],
            out,
            Op::ConvTemporal {
                x,
                w,
                dilation,
                stride,
            },
            &[x, w],
        ))
    }

    /// Sliding max over frames of `x[c, m, n]` with an odd `window`, padding
    /// `window / 2` (padded frames never win). Ties go to the earliest frame.
    pub fn max_pool_temporal(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 3 {
            return Err(Error::shape(format!("max_pool_temporal: input {sx:?}")));
        }
        if window.is_multiple_of(2) || stride == 0 {
            return Err(Error::invalid(
                "max_pool_temporal: window must be odd, stride positive",
            ));
        }
        let (c, m, n) = (sx[0], sx[1], sx[2]);
        let pad = (window / 2) as isize;
        let m_out = (m - 1) / stride + 1;
        let xd = self.data(x);
        let mut out = Vec::with_capacity(c * m_out * n);
        let mut argmax = Vec::with_capacity(c * m_out * n);
        for ch in 0..c {
            for t in 0..m_out {
                for i in 0..n {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for j in 0..window as isize {
                        let ti = (t * stride) as isize + j - pad;
                        if ti < 0 || ti >= m as isize {
                            continue;
                        }
                        let idx = (ch * m + ti as usize) * n + i;
                        if best_idx == usize::MAX || xd[idx] > best {
                            best = xd[idx];
                            best_idx = idx;
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        Ok(self.push(
            vec![c, m_out, n],
            out,
            Op::MaxPoolTemporal { x, argmax },
            &[x],
        ))
    }

    pub fn pool(&mut self, x: Var, axis: PoolAxis, kind: PoolKind) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let xd = self.data(x);
        let mut argmax = Vec::new();
        let mut reduce = |groups: &mut dyn Iterator<Item = Vec<(usize, T)>>| -> Result<Vec<T>> {
            let mut out = Vec::new();
            for group in groups {
                if group.is_empty() {
                    return Err(Error::invalid("pool over an empty axis"));
                }
                match kind {
                    PoolKind::Mean => {
                        let s: T = group.iter().map(|&(_, v)| v).sum();
                        out.push(s / T::lit(group.len() as f64));
                    }
                    PoolKind::Max => {
                        let (mut bi, mut bv) = group[0];
                        for &(i, v) in &group[1..] {
                            if v > bv {
                                bi = i;
                                bv = v;
                            }
                        }
                        out.push(bv);
                        argmax.push(bi);
                    }
                }
            }
            Ok(out)
        };
        let (shape, out) = match axis {
            PoolAxis::Frames => {
                if sx.len() != 3 {
                    return Err(Error::shape(format!(
                        "frame pooling needs [c, m, n], got {sx:?}"
                    )));
                }
                let (c, m, n) = (sx[0], sx[1], sx[2]);
                let mut groups = (0..c * n).map(|g| {
                    let (ch, i) = (g / n, g % n);
                    (0..m)
                        .map(|t| ((ch * m + t) * n + i, xd[(ch * m + t) * n + i]))
                        .collect()
                });
                (vec![c, n], reduce(&mut groups)?)
            }
            PoolAxis::Global => {
                if sx.is_empty() {
                    return Err(Error::shape("global pooling needs a channel axis"));
                }
                let c = sx[0];
                let inner = xd.len() / c;
                let mut groups =
                    (0..c).map(|ch| (ch * inner..(ch + 1) * inner).map(|k| (k, xd[k])).collect());
                (vec![c], reduce(&mut groups)?)
            }
            PoolAxis::Pairs => {
                if sx.len() != 2 {
                    return Err(Error::shape(format!(
                        "pair pooling needs [c, n], got {sx:?}"
                    )));
                }
                let (c, n) = (sx[0], sx[1]);
                // pair (i, j), i < j, is encoded as i * n + j
                let mut groups = (0..c).map(|ch| {
                    let row = &xd[ch * n..(ch + 1) * n];
                    (0..n)
                        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                        .map(|(i, j)| (i * n + j, (row[i] - row[j]).abs()))
                        .collect()
                });
                (vec![c], reduce(&mut groups)?)
            }
        };
        Ok(self.push(
            shape,
            out,
            Op::Pool {
                x,
                axis,
                kind,
                argmax,
            },
            &[x],
        ))
    }

    /// 1D convolution across the channel axis of `x[c]` with `w[k]` (odd
    /// `k`, zero padding) plus a scalar bias `b[1]`.
    pub fn channel_conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 1 || sw.len() != 1 || sw[0] % 2 == 0 || sb != [1] {
            return Err(Error::shape(format!(
                "channel_conv: x {sx:?}, w {sw:?}, b {sb:?}"
            )));
        }
        let (c, k) = (sx[0], sw[0]);
        let half = (k / 2) as isize;
        let (xd, wd, bias) = (self.data(x), self.data(w), self.data(b)[0]);
        let out = (0..c as isize)
            .map(|ch| {
                let mut acc = bias;
                for j in 0..k as isize {
                    let src = ch + j - half;
                    if (0..c as isize).contains(&src) {
                        acc = acc + wd[j as usize] * xd[src as usize];
                    }
                }
                acc
            })
            .collect();
        Ok(self.push(vec![c], out, Op::ChannelConv { x, w, b }, &[x, w, b]))
    }

    pub fn activate(&mut self, x: Var, kind: Activation) -> Var {
        let xd = self.data(x);
        let out = match kind {
            Activation::Relu => xd.iter().map(|&v| v.max(T::zero())).collect(),
            Activation::Sigmoid => xd.iter().map(|&v| sigmoid(v)).collect(),
            Activation::Tanh => xd.iter().map(|&v| v.tanh()).collect(),
        };
        self.push(self.shape(x).to_vec(), out, Op::Activate { x, kind }, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activate(x, Activation::Relu)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.data(x).iter().map(|v| v.exp()).collect();
        self.push(self.shape(x).to_vec(), out, Op::Exp(x), &[x])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let out = self.data(x).iter().map(|&v| v.max(lo).min(hi)).collect();
        self.push(self.shape(x).to_vec(), out, Op::Clamp { x, lo, hi }, &[x])
    }

    /// Concatenates along the first axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat of nothing"))?;
        let tail = self.shape(*first)[1..].to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[1..] != tail[..] {
                return Err(Error::shape(format!("concat: {s:?} vs trailing {tail:?}")));
            }
            lead += s[0];
            out.extend_from_slice(self.data(p));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        Ok(self.push(shape, out, Op::Concat(parts.to_vec()), parts))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().copied().sum();
        self.push(Vec::new(), vec![s], Op::Sum(x), &[x])
    }

    /// `-log softmax(logits)[target]`, via log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 1 {
            return Err(Error::shape(format!("logits must be a vector, got {s:?}")));
        }
        if target >= s[0] {
            return Err(Error::invalid(format!(
                "target class {target} out of range for {} classes",
                s[0]
            )));
        }
        let lsm = log_softmax(self.data(logits));
        let loss = -lsm[target];
        let probs = lsm.iter().map(|v| v.exp()).collect();
        Ok(self.push(
            Vec::new(),
            vec![loss],
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                probs,
            },
            &[logits],
        ))
    }

    /// `KL(softmax(p) || softmax(q))`.
    pub fn categorical_kl(&mut self, p: Var, q: Var) -> Result<Var> {
        same_shape("categorical_kl", self.shape(p), self.shape(q))?;
        if self.shape(p).len() != 1 {
            return Err(Error::shape("categorical_kl expects logit vectors"));
        }
        let lp = log_softmax(self.data(p));
        let lq = log_softmax(self.data(q));
        let p_probs: Vec<T> = lp.iter().map(|v| v.exp()).collect();
        let q_probs: Vec<T> = lq.iter().map(|v| v.exp()).collect();
        let kl = p_probs
            .iter()
            .zip(lp.iter().zip(&lq))
            .map(|(&pp, (&a, &b))| pp * (a - b))
            .sum::<T>()
            .max(T::zero());
        Ok(self.push(
            Vec::new(),
            vec![kl],
            Op::CategoricalKl {
                p,
                q,
                p_probs,
                q_probs,
                kl,
            },
            &[p, q],
        ))
    }

    /// `KL(N(mu, diag(exp(log_var))) || N(0, I))`.
    pub fn gaussian_kl(&mut self, mu: Var, log_var: Var) -> Result<Var> {
        same_shape("gaussian_kl", self.shape(mu), self.shape(log_var))?;
        let half = T::lit(0.5);
        let kl = self
            .data(mu)
            .iter()
            .zip(self.data(log_var))
            .map(|(&m, &lv)| half * (m * m + lv.exp() - T::one() - lv))
            .sum();
        Ok(self.push(
            Vec::new(),
            vec![kl],
            Op::GaussianKl { mu, log_var },
            &[mu, log_var],
        ))
    }

    /// Reverse pass from a scalar root. Gradients are accumulated in reverse
    /// record order, so the result is deterministic.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.value(root).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(vec![T::one()]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        macro_rules! slot {
            ($v:expr) => {{
                let v: Var = $v;
                let n = nodes[v.0].value.numel();
                grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
            }};
        }
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, p, q, r } => {
                let (ad, bd) = (self.data(a), self.data(b));
                if self.wants(a) {
                    let ga = slot!(a);
                    for i in 0..p {
                        let gr = &g[i * r..(i + 1) * r];
                        for k in 0..q {
                            let br = &bd[k * r..(k + 1) * r];
                            let s = dot(gr, br);
                            ga[i * q + k] = ga[i * q + k] + s;
                        }
                    }
                }
                if self.wants(b) {
                    let gb = slot!(b);
                    for i in 0..p {
                        let gr = &g[i * r..(i + 1) * r];
                        for k in 0..q {
                            let av = ad[i * q + k];
                            for (d, &gv) in gb[k * r..(k + 1) * r].iter_mut().zip(gr) {
                                *d = *d + av * gv;
                            }
                        }
                    }
                }
            }
            &Op::Add(a, b) => {
                for v in [a, b] {
                    if self.wants(v) {
                        let s = slot!(v);
                        s.iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv);
                    }
                }
            }
            &Op::Mul(a, b) => {
                for (v, other) in [(a, b), (b, a)] {
                    if self.wants(v) {
                        let od = self.data(other);
                        let s = slot!(v);
                        for ((d, &gv), &o) in s.iter_mut().zip(g).zip(od) {
                            *d = *d + gv * o;
                        }
                    }
                }
            }
            &Op::AddBias { x, b } => {
                if self.wants(x) {
                    slot!(x).iter_mut().zip(g).for_each(|(d, &gv)| *d = *d + gv);
                }
                if self.wants(b) {
                    let c = self.value(b).numel();
                    let inner = g.len() / c;
                    let s = slot!(b);
                    for ch in 0..c {
                        s[ch] = s[ch] + g[ch * inner..(ch + 1) * inner].iter().copied().sum();
                    }
                }
            }
            &Op::Scale { x, s } => {
                if self.wants(x) {
                    slot!(x)
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, &gv)| *d = *d + gv * s);
                }
            }
            &Op::ScaleChannels { x, w } => {
                let (xd, wd) = (self.data(x), self.data(w));
                let c = wd.len();
                let inner = g.len() / c;
                if self.wants(x) {
                    let s = slot!(x);
                    for ch in 0..c {
                        for k in ch * inner..(ch + 1) * inner {
                            s[k] = s[k] + g[k] * wd[ch];
                        }
                    }
                }
                if self.wants(w) {
                    let s = slot!(w);
                    for ch in 0..c {
                        let r = ch * inner..(ch + 1) * inner;
                        s[ch] = s[ch] + dot(&g[r.clone()], &xd[r]);
                    }
                }
            }
            &Op::ConvTemporal {
                x,
                w,
                dilation,
                stride,
            } => self.conv_temporal_backward(x, w, dilation, stride, &node.value, g, grads),
            Op::MaxPoolTemporal { x, argmax } => {
                if self.wants(*x) {
                    let s = slot!(*x);
                    for (&idx, &gv) in argmax.iter().zip(g) {
                        s[idx] = s[idx] + gv;
                    }
                }
            }
            Op::Pool {
                x,
                axis,
                kind,
                argmax,
            } => {
                if self.wants(*x) {
                    self.pool_backward(*x, *axis, *kind, argmax, g, slot!(*x));
                }
            }
            &Op::ChannelConv { x, w, b } => {
                let (xd, wd) = (self.data(x), self.data(w));
                let (c, k) = (xd.len(), wd.len());
                let half = k / 2;
                // tap (ch, j) reads x[ch + j - half]
                let taps = (0..c)
                    .flat_map(|ch| (0..k).map(move |j| (ch, j)))
                    .filter_map(|(ch, j)| {
                        (ch + j)
                            .checked_sub(half)
                            .filter(|&src| src < c)
                            .map(|src| (ch, j, src))
                    });
                if self.wants(x) {
                    let s = slot!(x);
                    for (ch, j, src) in taps.clone() {
                        s[src] = s[src] + g[ch] * wd[j];
                    }
                }
                if self.wants(w) {
                    let s = slot!(w);
                    for (ch, j, src) in taps {
                        s[j] = s[j] + g[ch] * xd[src];
                    }
                }
                if self.wants(b) {
                    let s = slot!(b);
                    s[0] = s[0] + g.iter().copied().sum();
                }
            }
            &Op::Activate { x, kind } => {
                if self.wants(x) {
                    let (xd, yd) = (self.data(x), node.value.data());
                    let s = slot!(x);
                    match kind {
                        Activation::Relu => {
                            for ((d, &gv), &xv) in s.iter_mut().zip(g).zip(xd) {
                                if xv > T::zero() {
                                    *d = *d + gv;
                                }
                            }
                        }
                        Activation::Sigmoid => {
                            for ((d, &gv), &y) in s.iter_mut().zip(g).zip(yd) {
                                *d = *d + gv * y * (T::one() - y);
                            }
                        }
                        Activation::Tanh => {
                            for ((d, &gv), &y) in s.iter_mut().zip(g).zip(yd) {
                                *d = *d + gv * (T::one() - y * y);
                            }
                        }
                    }
                }
            }
            &Op::Exp(x) => {
                if self.wants(x) {
                    let yd = node.value.data();
                    let s = slot!(x);
                    for k in 0..g.len() {
                        s[k] = s[k] + g[k] * yd[k];
                    }
                }
            }
            &Op::Clamp { x, lo, hi } => {
                if self.wants(x) {
                    let xd = self.data(x);
                    let s = slot!(x);
                    for k in 0..g.len() {
                        if xd[k] >= lo && xd[k] <= hi {
                            s[k] = s[k] + g[k];
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    if self.wants(p) {
                        let s = slot!(p);
                        for (d, &gv) in s.iter_mut().zip(&g[offset..offset + len]) {
                            *d = *d + gv;
                        }
                    }
                    offset += len;
                }
            }
            &Op::Sum(x) => {
                if self.wants(x) {
                    slot!(x).iter_mut().for_each(|d| *d = *d + g[0]);
                }
            }
            Op::SoftmaxCrossEntropy {
                logits,
                target,
                probs,
            } => {
                if self.wants(*logits) {
                    let s = slot!(*logits);
                    for (k, &pk) in probs.iter().enumerate() {
                        let onehot = if k == *target { T::one() } else { T::zero() };
                        s[k] = s[k] + g[0] * (pk - onehot);
                    }
                }
            }
            Op::CategoricalKl {
                p,
                q,
                p_probs,
                q_probs,
                kl,
            } => {
                if self.wants(*p) {
                    let (lp, lq) = (log_softmax(self.data(*p)), log_softmax(self.data(*q)));
                    let s = slot!(*p);
                    for k in 0..p_probs.len() {
                        s[k] = s[k] + g[0] * p_probs[k] * (lp[k] - lq[k] - *kl);
                    }
                }
                if self.wants(*q) {
                    let s = slot!(*q);
                    for k in 0..q_probs.len() {
                        s[k] = s[k] + g[0] * (q_probs[k] - p_probs[k]);
                    }
                }
            }
            &Op::GaussianKl { mu, log_var } => {
                if self.wants(mu) {
                    let md = self.data(mu);
                    let s = slot!(mu);
                    for k in 0..md.len() {
                        s[k] = s[k] + g[0] * md[k];
                    }
                }
                if self.wants(log_var) {
                    let ld = self.data(log_var);
                    let s = slot!(log_var);
                    let half = T::lit(0.5);
                    for k in 0..ld.len() {
                        s[k] = s[k] + g[0] * half * (ld[k].exp() - T::one());
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_temporal_backward(
        &self,
        x: Var,
        w: Var,
        dilation: usize,
        stride: usize,
        out: &Tensor<T>,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (sx, sw) = (self.shape(x), self.shape(w));
        let (ci, m, n) = (sx[0], sx[1], sx[2]);
        let (co, k) = (sw[0], sw[2]);
        let m_out = out.shape()[1];
        let pad = (dilation * (k - 1) / 2) as isize;
        let (xd, wd) = (self.data(x), self.data(w));
        let mut gx = self.wants(x).then(|| vec![T::zero(); xd.len()]);
        let mut gw = self.wants(w).then(|| vec![T::zero(); wd.len()]);
        for o in 0..co {
            let g_o = &g[o * m_out * n..(o + 1) * m_out * n];
            for c in 0..ci {
                let x_c = &xd[c * m * n..(c + 1) * m * n];
                for j in 0..k {
                    let widx = (o * ci + c) * k + j;
                    let wv = wd[widx];
                    let offset = (j * dilation) as isize - pad;
                    let mut acc = T::zero();
                    if stride == 1 {
                        let (t0, t1) = shifted_range(m_out, m, offset);
                        let src = (t0 as isize + offset) as usize;
                        let gs = &g_o[t0 * n..t1 * n];
                        let xs = &x_c[src * n..src * n + gs.len()];
                        if let Some(gx) = gx.as_mut() {
                            let dst = &mut gx[c * m * n + src * n..c * m * n + src * n + gs.len()];
                            for (d, &gv) in dst.iter_mut().zip(gs) {
                                *d = *d + wv * gv;
                            }
                        }
                        if gw.is_some() {
                            acc = dot(gs, xs);
                        }
                    } else {
                        for t in 0..m_out {
                            let ti = (t * stride) as isize + offset;
                            if ti < 0 || ti >= m as isize {
                                continue;
                            }
                            let ti = ti as usize;
                            let gs = &g_o[t * n..(t + 1) * n];
                            if let Some(gx) = gx.as_mut() {
                                let dst = &mut gx[(c * m + ti) * n..(c * m + ti + 1) * n];
                                for (d, &gv) in dst.iter_mut().zip(gs) {
                                    *d = *d + wv * gv;
                                }
                            }
                            acc = acc + dot(gs, &x_c[ti * n..(ti + 1) * n]);
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        gw[widx] = gw[widx] + acc;
                    }
                }
            }
        }
        for (v, delta) in [(x, gx), (w, gw)] {
            if let Some(delta) = delta {
                let s = grads[v.0].get_or_insert_with(|| vec![T::zero(); delta.len()]);
                s.iter_mut().zip(&delta).for_each(|(d, &dv)| *d = *d + dv);
            }
        }
    }

    fn pool_backward(
        &self,
        x: Var,
        axis: PoolAxis,
        kind: PoolKind,
        argmax: &[usize],
        g: &[T],
        s: &mut [T],
    ) {
        let sx = self.shape(x);
        let xd = self.data(x);
        let sign = |v: T| {
            if v > T::zero() {
                T::one()
            } else if v < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        };
        match (axis, kind) {
            (PoolAxis::Frames, PoolKind::Mean) => {
                let (m, n) = (sx[1], sx[2]);
                let scale = T::one() / T::lit(m as f64);
                for (gi, &gv) in g.iter().enumerate() {
                    let (ch, i) = (gi / n, gi % n);
                    for t in 0..m {
                        let k = (ch * m + t) * n + i;
                        s[k] = s[k] + gv * scale;
                    }
                }
            }
            (PoolAxis::Global, PoolKind::Mean) => {
                let inner = xd.len() / sx[0];
                let scale = T::one() / T::lit(inner as f64);
                for (ch, &gv) in g.iter().enumerate() {
                    for d in &mut s[ch * inner..(ch + 1) * inner] {
                        *d = *d + gv * scale;
                    }
                }
            }
            (PoolAxis::Frames | PoolAxis::Global, PoolKind::Max) => {
                for (&k, &gv) in argmax.iter().zip(g) {
                    s[k] = s[k] + gv;
                }
            }
            (PoolAxis::Pairs, PoolKind::Mean) => {
                let n = sx[1];
                let scale = T::one() / T::lit((n * (n - 1) / 2) as f64);
                for (ch, &gv) in g.iter().enumerate() {
                    let row = ch * n;
                    for i in 0..n {
                        for j in i + 1..n {
                            let d = sign(xd[row + i] - xd[row + j]) * gv * scale;
                            s[row + i] = s[row + i] + d;
                            s[row + j] = s[row + j] - d;
                        }
                    }
                }
            }
            (PoolAxis::Pairs, PoolKind::Max) => {
                let n = sx[1];
                for (ch, (&pair, &gv)) in argmax.iter().zip(g).enumerate() {
                    let (i, j) = (ch * n + pair / n, ch * n + pair % n);
                    let d = sign(xd[i] - xd[j]) * gv;
                    s[i] = s[i] + d;
                    s[j] = s[j] - d;
                }
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the root with respect to `v`, or `None` if `v` does not
    /// influence the root or was recorded as a constant.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`get`](Self::get) but returns zeros for unreached inputs.
    pub fn get_or_zeros(&self, tape: &Tape<T>, v: Var) -> Vec<T> {
        self.get(v)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); tape.value(v).numel()])
    }
}
