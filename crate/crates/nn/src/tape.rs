//! Recording tape for reverse-mode differentiation.
//!
//! Operations append nodes to an arena; node ids only ever reference
//! earlier nodes, so the insertion order is a topological order and the
//! backward pass is a single reverse sweep that visits each node once.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{axis_split, Scalar, TensorData};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    /// x: (n, m), b: (m) broadcast over rows.
    AddRowBroadcast(Var, Var),
    /// b indexes `axis` of x.
    AddChannelBias {
        x: Var,
        b: Var,
        axis: usize,
    },
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat {
        axis: usize,
        parts: Vec<Var>,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    Relu(Var),
    SoftmaxLastAxis(Var),
    /// mean |a - b|
    L1Loss(Var, Var),
    /// x: (batch, c_in, len), w: (c_out, c_in, k) odd k, zero-pad same.
    Conv1d {
        x: Var,
        w: Var,
    },
    /// x: (c_in, h, w), w: (c_out, c_in, kh, kw) odd kernels, zero-pad same.
    Conv2d {
        x: Var,
        w: Var,
    },
    AvgPool2(Var),
    Upsample2(Var),
    LayerNormRows {
        x: Var,
        eps: f64,
    },
    /// Scalar with an externally supplied gradient w.r.t. `x`.
    ScalarWithGrad {
        x: Var,
        grad: Vec<T>,
    },
}

struct Node<T> {
    value: TensorData<T>,
    op: Op<T>,
}

/// Gradients keyed by [`Var`], produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`; zeros if `v` did not influence it.
    pub fn grad(&self, v: Var, len: usize) -> Vec<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![T::zero(); len],
        }
    }

    pub fn grad_opt(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: TensorData<T>, op: Op<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    pub fn leaf(&self, value: TensorData<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn leaf_from(&self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        Ok(self.leaf(TensorData::new(shape, data)?))
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape.clone()
    }

    pub fn value(&self, v: Var) -> Vec<T> {
        self.nodes.borrow()[v.0].value.data.clone()
    }

    pub fn value_len(&self, v: Var) -> usize {
        self.nodes.borrow()[v.0].value.data.len()
    }

    pub fn scalar_value(&self, v: Var) -> Result<T> {
        let nodes = self.nodes.borrow();
        let d = &nodes[v.0].value.data;
        if d.len() != 1 {
            return Err(Error::shape("expected a scalar node"));
        }
        Ok(d[0])
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<Vec<usize>> {
        let nodes = self.nodes.borrow();
        let sa = &nodes[a.0].value.shape;
        let sb = &nodes[b.0].value.shape;
        if sa != sb {
            return Err(Error::shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(sa.clone())
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "add")?;
        let nodes = self.nodes.borrow();
        let data: Vec<T> = nodes[a.0]
            .value
            .data
            .iter()
            .zip(&nodes[b.0].value.data)
            .map(|(x, y)| *x + *y)
            .collect();
        drop(nodes);
        Ok(self.push(TensorData { shape, data }, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "sub")?;
        let nodes = self.nodes.borrow();
        let data: Vec<T> = nodes[a.0]
            .value
            .data
            .iter()
            .zip(&nodes[b.0].value.data)
            .map(|(x, y)| *x - *y)
            .collect();
        drop(nodes);
        Ok(self.push(TensorData { shape, data }, Op::Sub(a, b)))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let shape = self.same_shape(a, b, "mul")?;
        let nodes = self.nodes.borrow();
        let data: Vec<T> = nodes[a.0]
            .value
            .data
            .iter()
            .zip(&nodes[b.0].value.data)
            .map(|(x, y)| *x * *y)
            .collect();
        drop(nodes);
        Ok(self.push(TensorData { shape, data }, Op::Mul(a, b)))
    }

    pub fn neg(&self, a: Var) -> Var {
        let nodes = self.nodes.borrow();
        let value = TensorData {
            shape: nodes[a.0].value.shape.clone(),
            data: nodes[a.0].value.data.iter().map(|x| -*x).collect(),
        };
        drop(nodes);
        self.push(value, Op::Neg(a))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let cf = T::from_f64(c);
        let nodes = self.nodes.borrow();
        let value = TensorData {
            shape: nodes[a.0].value.shape.clone(),
            data: nodes[a.0].value.data.iter().map(|x| *x * cf).collect(),
        };
        drop(nodes);
        self.push(value, Op::Scale(a, c))
    }

    /// x: (n, m) plus row vector b: (m).
    pub fn add_row_broadcast(&self, x: Var, b: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let xs = nodes[x.0].value.shape.clone();
        let bs = nodes[b.0].value.shape.clone();
        if xs.len() != 2 || bs.len() != 1 || bs[0] != xs[1] {
            return Err(Error::shape(format!(
                "add_row_broadcast wants (n,m)+(m), got {xs:?}+{bs:?}"
            )));
        }
        let m = xs[1];
        let mut data = nodes[x.0].value.data.clone();
        for (k, v) in data.iter_mut().enumerate() {
            *v = *v + nodes[b.0].value.data[k % m];
        }
        drop(nodes);
        Ok(self.push(
            TensorData { shape: xs, data },
            Op::AddRowBroadcast(x, b),
        ))
    }

    /// Add bias `b` indexed by axis `axis` of `x`.
    pub fn add_channel_bias(&self, x: Var, b: Var, axis: usize) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let xs = nodes[x.0].value.shape.clone();
        let bs = nodes[b.0].value.shape.clone();
        if axis >= xs.len() || bs.len() != 1 || bs[0] != xs[axis] {
            return Err(Error::shape(format!(
                "add_channel_bias axis {axis} of {xs:?} with bias {bs:?}"
            )));
        }
        let (_, c, inner) = axis_split(&xs, axis);
        let mut data = nodes[x.0].value.data.clone();
        for (k, v) in data.iter_mut().enumerate() {
            *v = *v + nodes[b.0].value.data[(k / inner) % c];
        }
        drop(nodes);
        Ok(self.push(
            TensorData { shape: xs, data },
            Op::AddChannelBias { x, b, axis },
        ))
    }

    /// (n, k) x (k, m) -> (n, m).
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let sa = nodes[a.0].value.shape.clone();
        let sb = nodes[b.0].value.shape.clone();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape(format!("matmul {sa:?} x {sb:?}")));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let mut data = vec![T::zero(); n * m];
        matmul_kernel(
            &nodes[a.0].value.data,
            &nodes[b.0].value.data,
            &mut data,
            n,
            k,
            m,
        );
        drop(nodes);
        Ok(self.push(
            TensorData {
                shape: vec![n, m],
                data,
            },
            Op::Matmul(a, b),
        ))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let s = nodes[a.0].value.shape.clone();
        if s.len() != 2 {
            return Err(Error::shape(format!("transpose wants 2 axes, got {s:?}")));
        }
        let (n, m) = (s[0], s[1]);
        let src = &nodes[a.0].value.data;
        let mut data = vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = src[i * m + j];
            }
        }
        drop(nodes);
        Ok(self.push(
            TensorData {
                shape: vec![m, n],
                data,
            },
            Op::Transpose(a),
        ))
    }

    pub fn reshape(&self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > crate::tensor::MAX_AXES || n != nodes[a.0].value.data.len() {
            return Err(Error::shape(format!(
                "reshape {:?} -> {shape:?}",
                nodes[a.0].value.shape
            )));
        }
        let data = nodes[a.0].value.data.clone();
        drop(nodes);
        Ok(self.push(TensorData { shape, data }, Op::Reshape(a)))
    }

    pub fn concat(&self, axis: usize, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat of zero parts"));
        }
        let nodes = self.nodes.borrow();
        let base = nodes[parts[0].0].value.shape.clone();
        if axis >= base.len() {
            return Err(Error::shape(format!("concat axis {axis} of {base:?}")));
        }
        let mut axis_total = 0usize;
        for p in parts {
            let s = &nodes[p.0].value.shape;
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(format!("concat {s:?} onto {base:?}")));
            }
            axis_total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = axis_total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut data = vec![T::zero(); outer * axis_total * inner];
        for o in 0..outer {
            let mut offset = 0usize;
            for p in parts {
                let s = &nodes[p.0].value;
                let alen = s.shape[axis];
                let src = &s.data[o * alen * inner..(o + 1) * alen * inner];
                let dst_start = (o * axis_total + offset) * inner;
                data[dst_start..dst_start + alen * inner].copy_from_slice(src);
                offset += alen;
            }
        }
        drop(nodes);
        Ok(self.push(
            TensorData { shape, data },
            Op::Concat {
                axis,
                parts: parts.to_vec(),
            },
        ))
    }

    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let s = nodes[x.0].value.shape.clone();
        if axis >= s.len() || start + len > s[axis] || len == 0 {
            return Err(Error::shape(format!(
                "slice axis {axis} [{start}, {start}+{len}) of {s:?}"
            )));
        }
        let (outer, alen, inner) = axis_split(&s, axis);
        let mut shape = s.clone();
        shape[axis] = len;
        let mut data = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            let src_start = (o * alen + start) * inner;
            let dst_start = o * len * inner;
            data[dst_start..dst_start + len * inner]
                .copy_from_slice(&nodes[x.0].value.data[src_start..src_start + len * inner]);
        }
        drop(nodes);
        Ok(self.push(TensorData { shape, data }, Op::Slice { x, axis, start }))
    }

    pub fn sum(&self, a: Var) -> Var {
        let nodes = self.nodes.borrow();
        let total: T = nodes[a.0].value.data.iter().cloned().sum();
        drop(nodes);
        self.push(TensorData::scalar(total), Op::Sum(a))
    }

    pub fn mean(&self, a: Var) -> Var {
        let nodes = self.nodes.borrow();
        let n = nodes[a.0].value.data.len();
        let total: T = nodes[a.0].value.data.iter().cloned().sum();
        drop(nodes);
        self.push(
            TensorData::scalar(total / T::from_f64(n as f64)),
            Op::Mean(a),
        )
    }

    pub fn relu(&self, a: Var) -> Var {
        let nodes = self.nodes.borrow();
        let value = TensorData {
            shape: nodes[a.0].value.shape.clone(),
            data: nodes[a.0]
                .value
                .data
                .iter()
                .map(|x| if *x > T::zero() { *x } else { T::zero() })
                .collect(),
        };
        drop(nodes);
        self.push(value, Op::Relu(a))
    }

    /// Row-wise softmax over the last axis (max-shifted).
    pub fn softmax_last_axis(&self, a: Var) -> Var {
        let nodes = self.nodes.borrow();
        let shape = nodes[a.0].value.shape.clone();
        let m = *shape.last().unwrap();
        let src = &nodes[a.0].value.data;
        let mut data = vec![T::zero(); src.len()];
        for r in 0..src.len() / m {
            let row = &src[r * m..(r + 1) * m];
            let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for (k, v) in row.iter().enumerate() {
                let e = (*v - mx).exp();
                data[r * m + k] = e;
                total = total + e;
            }
            for k in 0..m {
                data[r * m + k] = data[r * m + k] / total;
            }
        }
        drop(nodes);
        self.push(TensorData { shape, data }, Op::SoftmaxLastAxis(a))
    }

    /// Mean absolute difference, reduced to a scalar.
    pub fn l1_loss(&self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l1_loss")?;
        let nodes = self.nodes.borrow();
        let n = nodes[a.0].value.data.len();
        let total: T = nodes[a.0]
            .value
            .data
            .iter()
            .zip(&nodes[b.0].value.data)
            .map(|(x, y)| (*x - *y).abs())
            .sum();
        drop(nodes);
        Ok(self.push(
            TensorData::scalar(total / T::from_f64(n as f64)),
            Op::L1Loss(a, b),
        ))
    }

    /// Cross-correlation with zero padding preserving length.
    pub fn conv1d(&self, x: Var, w: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let xs = nodes[x.0].value.shape.clone();
        let ws = nodes[w.0].value.shape.clone();
        if xs.len() != 3 || ws.len() != 3 || xs[1] != ws[1] {
            return Err(Error::shape(format!(
                "conv1d wants (b,ci,l) with (co,ci,k), got {xs:?} with {ws:?}"
            )));
        }
        if ws[2] % 2 == 0 {
            return Err(Error::config(format!("conv1d kernel must be odd, got {}", ws[2])));
        }
        let (bsz, ci, l) = (xs[0], xs[1], xs[2]);
        let (co, _, k) = (ws[0], ws[1], ws[2]);
        let half = (k / 2) as i64;
        let xv = &nodes[x.0].value.data;
        let wv = &nodes[w.0].value.data;
        let mut data = vec![T::zero(); bsz * co * l];
        for bi in 0..bsz {
            for o in 0..co {
                for t in 0..l {
                    let mut acc = T::zero();
                    for c in 0..ci {
                        for kk in 0..k {
                            let u = t as i64 + kk as i64 - half;
                            if u >= 0 && (u as usize) < l {
                                acc = acc
                                    + xv[(bi * ci + c) * l + u as usize]
                                        * wv[(o * ci + c) * k + kk];
                            }
                        }
                    }
                    data[(bi * co + o) * l + t] = acc;
                }
            }
        }
        drop(nodes);
        Ok(self.push(
            TensorData {
                shape: vec![bsz, co, l],
                data,
            },
            Op::Conv1d { x, w },
        ))
    }

    /// Cross-correlation with zero padding preserving the spatial size.
    pub fn conv2d(&self, x: Var, w: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let xs = nodes[x.0].value.shape.clone();
        let ws = nodes[w.0].value.shape.clone();
        if xs.len() != 3 || ws.len() != 4 || xs[0] != ws[1] {
            return Err(Error::shape(format!(
                "conv2d wants (ci,h,w) with (co,ci,kh,kw), got {xs:?} with {ws:?}"
            )));
        }
        if ws[2] % 2 == 0 || ws[3] % 2 == 0 {
            return Err(Error::config(format!(
                "conv2d kernels must be odd, got {}x{}",
                ws[2], ws[3]
            )));
        }
        let (ci, h, wdt) = (xs[0], xs[1], xs[2]);
        let (co, _, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let (hh, hw) = ((kh / 2) as i64, (kw / 2) as i64);
        let xv = &nodes[x.0].value.data;
        let wv = &nodes[w.0].value.data;
        let mut data = vec![T::zero(); co * h * wdt];
        for o in 0..co {
            for c in 0..ci {
                let wbase = ((o * ci) + c) * kh * kw;
                for r in 0..h {
                    for col in 0..wdt {
                        let mut acc = T::zero();
                        for dr in 0..kh {
                            let rr = r as i64 + dr as i64 - hh;
                            if rr < 0 || rr >= h as i64 {
                                continue;
                            }
                            for dc in 0..kw {
                                let cc = col as i64 + dc as i64 - hw;
                                if cc < 0 || cc >= wdt as i64 {
                                    continue;
                                }
                                acc = acc
                                    + xv[(c * h + rr as usize) * wdt + cc as usize]
                                        * wv[wbase + dr * kw + dc];
                            }
                        }
                        data[(o * h + r) * wdt + col] = data[(o * h + r) * wdt + col] + acc;
                    }
                }
            }
        }
        drop(nodes);
        Ok(self.push(
            TensorData {
                shape: vec![co, h, wdt],
                data,
            },
            Op::Conv2d { x, w },
        ))
    }

    /// 2x2 average pooling on (c, h, w); h and w must be even.
    pub fn avg_pool2(&self, x: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let s = nodes[x.0].value.shape.clone();
        if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
            return Err(Error::shape(format!("avg_pool2 wants (c,2h,2w), got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (h / 2, w / 2);
        let src = &nodes[x.0].value.data;
        let quarter = T::from_f64(0.25);
        let mut data = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for r in 0..oh {
                for col in 0..ow {
                    let base = (ch * h + 2 * r) * w + 2 * col;
                    data[(ch * oh + r) * ow + col] =
                        (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]) * quarter;
                }
            }
        }
        drop(nodes);
        Ok(self.push(
            TensorData {
                shape: vec![c, oh, ow],
                data,
            },
            Op::AvgPool2(x),
        ))
    }

    /// Nearest-neighbor 2x upsampling on (c, h, w).
    pub fn upsample2(&self, x: Var) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let s = nodes[x.0].value.shape.clone();
        if s.len() != 3 {
            return Err(Error::shape(format!("upsample2 wants (c,h,w), got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (oh, ow) = (2 * h, 2 * w);
        let src = &nodes[x.0].value.data;
        let mut data = vec![T::zero(); c * oh * ow];
        for ch in 0..c {
            for r in 0..oh {
                for col in 0..ow {
                    data[(ch * oh + r) * ow + col] = src[(ch * h + r / 2) * w + col / 2];
                }
            }
        }
        drop(nodes);
        Ok(self.push(
            TensorData {
                shape: vec![c, oh, ow],
                data,
            },
            Op::Upsample2(x),
        ))
    }

    /// Standardize each row of a 2-D tensor to zero mean, unit variance.
    pub fn layer_norm_rows(&self, x: Var, eps: f64) -> Result<Var> {
        let nodes = self.nodes.borrow();
        let s = nodes[x.0].value.shape.clone();
        if s.len() != 2 {
            return Err(Error::shape(format!("layer_norm_rows wants 2 axes, got {s:?}")));
        }
        let (n, m) = (s[0], s[1]);
        let src = &nodes[x.0].value.data;
        let mut data = vec![T::zero(); n * m];
        let mf = T::from_f64(m as f64);
        let epst = T::from_f64(eps);
        for r in 0..n {
            let row = &src[r * m..(r + 1) * m];
            let mean = row.iter().cloned().sum::<T>() / mf;
            let var = row
                .iter()
                .map(|v| (*v - mean) * (*v - mean))
                .sum::<T>()
                / mf;
            let inv = (var + epst).sqrt().recip();
            for k in 0..m {
                data[r * m + k] = (row[k] - mean) * inv;
            }
        }
        drop(nodes);
        Ok(self.push(
            TensorData { shape: s, data },
            Op::LayerNormRows { x, eps },
        ))
    }

    /// Register a scalar whose value and gradient w.r.t. `x` were computed
    /// outside the tape (used to bridge analytic losses into the graph).
    pub fn scalar_with_grad(&self, x: Var, value: f64, grad: Vec<T>) -> Result<Var> {
        let nodes = self.nodes.borrow();
        if grad.len() != nodes[x.0].value.data.len() {
            return Err(Error::shape("scalar_with_grad gradient length mismatch"));
        }
        drop(nodes);
        Ok(self.push(
            TensorData::scalar(T::from_f64(value)),
            Op::ScalarWithGrad { x, grad },
        ))
    }

    /// Reverse sweep from a scalar loss. Gradients of fan-out nodes are
    /// accumulated by summation.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.data.len() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {:?}",
                nodes[loss.0].value.shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(&nodes[..], id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(&self, nodes: &[Node<T>], id: usize, g: &[T], grads: &mut Vec<Option<Vec<T>>>) {
        let ensure = |grads: &mut Vec<Option<Vec<T>>>, v: Var| {
            if grads[v.0].is_none() {
                grads[v.0] = Some(vec![T::zero(); nodes[v.0].value.data.len()]);
            }
        };
        match &nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [a, b] {
                    ensure(grads, *v);
                    let ga = grads[v.0].as_mut().unwrap();
                    for (dst, s) in ga.iter_mut().zip(g) {
                        *dst = *dst + *s;
                    }
                }
            }
            Op::Sub(a, b) => {
                ensure(grads, *a);
                for (dst, s) in grads[a.0].as_mut().unwrap().iter_mut().zip(g) {
                    *dst = *dst + *s;
                }
                ensure(grads, *b);
                for (dst, s) in grads[b.0].as_mut().unwrap().iter_mut().zip(g) {
                    *dst = *dst - *s;
                }
            }
            Op::Mul(a, b) => {
                ensure(grads, *a);
                {
                    let bv = &nodes[b.0].value.data;
                    let ga = grads[a.0].as_mut().unwrap();
                    for k in 0..g.len() {
                        ga[k] = ga[k] + g[k] * bv[k];
                    }
                }
                ensure(grads, *b);
                let av = &nodes[a.0].value.data;
                let gb = grads[b.0].as_mut().unwrap();
                for k in 0..g.len() {
                    gb[k] = gb[k] + g[k] * av[k];
                }
            }
            Op::Neg(a) => {
                ensure(grads, *a);
                for (dst, s) in grads[a.0].as_mut().unwrap().iter_mut().zip(g) {
                    *dst = *dst - *s;
                }
            }
            Op::Scale(a, c) => {
                ensure(grads, *a);
                let cf = T::from_f64(*c);
                for (dst, s) in grads[a.0].as_mut().unwrap().iter_mut().zip(g) {
                    *dst = *dst + *s * cf;
                }
            }
            Op::AddRowBroadcast(x, b) => {
                ensure(grads, *x);
                for (dst, s) in grads[x.0].as_mut().unwrap().iter_mut().zip(g) {
                    *dst = *dst + *s;
                }
                ensure(grads, *b);
                let m = nodes[b.0].value.data.len();
                let gb = grads[b.0].as_mut().unwrap();
                for (k, s) in g.iter().enumerate() {
                    gb[k % m] = gb[k % m] + *s;
                }
            }
            Op::AddChannelBias { x, b, axis } => {
                ensure(grads, *x);
                for (dst, s) in grads[x.0].as_mut().unwrap().iter_mut().zip(g) {
                    *dst = *dst + *s;
                }
                ensure(grads, *b);
                let (_, c, inner) = axis_split(&nodes[x.0].value.shape, *axis);
                let gb = grads[b.0].as_mut().unwrap();
                for (k, s) in g.iter().enumerate() {
                    let ch = (k / inner) % c;
                    gb[ch] = gb[ch] + *s;
                }
            }
            Op::Matmul(a, b) => {
                let sa = &nodes[a.0].value.shape;
                let sb = &nodes[b.0].value.shape;
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                let av = &nodes[a.0].value.data;
                let bv = &nodes[b.0].value.data;
                ensure(grads, *a);
                {
                    // gA = g . B^T
                    let ga = grads[a.0].as_mut().unwrap();
                    for i in 0..n {
                        for kk in 0..k {
                            let mut acc = T::zero();
                            let grow = &g[i * m..(i + 1) * m];
                            let brow = &bv[kk * m..(kk + 1) * m];
                            for j in 0..m {
                                acc = acc + grow[j] * brow[j];
                            }
                            ga[i * k + kk] = ga[i * k + kk] + acc;
                        }
                    }
                }
                ensure(grads, *b);
                // gB = A^T . g
                let gb = grads[b.0].as_mut().unwrap();
                for i in 0..n {
                    let grow = &g[i * m..(i + 1) * m];
                    for kk in 0..k {
                        let a_ik = av[i * k + kk];
                        if a_ik != T::zero() {
                            let gbrow = &mut gb[kk * m..(kk + 1) * m];
                            for j in 0..m {
                                gbrow[j] = gbrow[j] + a_ik * grow[j];
                            }
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                ensure(grads, *a);
                let s_out = &nodes[id].value.shape; // (m, n)
                let (m, n) = (s_out[0], s_out[1]);
                let ga = grads[a.0].as_mut().unwrap();
                for i in 0..m {
                    for j in 0..n {
                        ga[j * m + i] = ga[j * m + i] + g[i * n + j];
                    }
                }
            }
            Op::Reshape(a) => {
                ensure(grads, *a);
                for (dst, s) in grads[a.0].as_mut().unwrap().iter_mut().zip(g) {
                    *dst = *dst + *s;
                }
            }
            Op::Concat { axis, parts } => {
                let shape = &nodes[id].value.shape;
                let (outer, total, inner) = axis_split(shape, *axis);
                let mut offset = 0usize;
                for p in parts {
                    ensure(grads, *p);
                    let alen = nodes[p.0].value.shape[*axis];
                    let gp = grads[p.0].as_mut().unwrap();
                    for o in 0..outer {
                        let src_start = (o * total + offset) * inner;
                        let dst_start = o * alen * inner;
                        for k in 0..alen * inner {
                            gp[dst_start + k] = gp[dst_start + k] + g[src_start + k];
                        }
                    }
                    offset += alen;
                }
            }
            Op::Slice { x, axis, start } => {
                ensure(grads, *x);
                let xs = &nodes[x.0].value.shape;
                let (outer, alen, inner) = axis_split(xs, *axis);
                let out_alen = nodes[id].value.shape[*axis];
                let gx = grads[x.0].as_mut().unwrap();
                for o in 0..outer {
                    let dst_start = (o * alen + start) * inner;
                    let src_start = o * out_alen * inner;
                    for k in 0..out_alen * inner {
                        gx[dst_start + k] = gx[dst_start + k] + g[src_start + k];
                    }
                }
            }
            Op::Sum(a) => {
                ensure(grads, *a);
                let s = g[0];
                for dst in grads[a.0].as_mut().unwrap().iter_mut() {
                    *dst = *dst + s;
                }
            }
            Op::Mean(a) => {
                ensure(grads, *a);
                let n = nodes[a.0].value.data.len();
                let s = g[0] / T::from_f64(n as f64);
                for dst in grads[a.0].as_mut().unwrap().iter_mut() {
                    *dst = *dst + s;
                }
            }
            Op::Relu(a) => {
                ensure(grads, *a);
                let av = &nodes[a.0].value.data;
                let ga = grads[a.0].as_mut().unwrap();
                for k in 0..g.len() {
                    if av[k] > T::zero() {
                        ga[k] = ga[k] + g[k];
                    }
                }
            }
            Op::SoftmaxLastAxis(a) => {
                ensure(grads, *a);
                let y = &nodes[id].value.data;
                let m = *nodes[id].value.shape.last().unwrap();
                let ga = grads[a.0].as_mut().unwrap();
                for r in 0..y.len() / m {
                    let yr = &y[r * m..(r + 1) * m];
                    let gr = &g[r * m..(r + 1) * m];
                    let mut dot = T::zero();
                    for k in 0..m {
                        dot = dot + yr[k] * gr[k];
                    }
                    for k in 0..m {
                        ga[r * m + k] = ga[r * m + k] + yr[k] * (gr[k] - dot);
                    }
                }
            }
            Op::L1Loss(a, b) => {
                let av = &nodes[a.0].value.data;
                let bv = &nodes[b.0].value.data;
                let n = T::from_f64(av.len() as f64);
                let s = g[0] / n;
                ensure(grads, *a);
                {
                    let ga = grads[a.0].as_mut().unwrap();
                    for k in 0..av.len() {
                        let d = av[k] - bv[k];
                        if d > T::zero() {
                            ga[k] = ga[k] + s;
                        } else if d < T::zero() {
                            ga[k] = ga[k] - s;
                        }
                    }
                }
                ensure(grads, *b);
                let gb = grads[b.0].as_mut().unwrap();
                for k in 0..av.len() {
                    let d = av[k] - bv[k];
                    if d > T::zero() {
                        gb[k] = gb[k] - s;
                    } else if d < T::zero() {
                        gb[k] = gb[k] + s;
                    }
                }
            }
            Op::Conv1d { x, w } => {
                let xs = &nodes[x.0].value.shape;
                let ws = &nodes[w.0].value.shape;
                let (bsz, ci, l) = (xs[0], xs[1], xs[2]);
                let (co, k) = (ws[0], ws[2]);
                let half = (k / 2) as i64;
                let xv = &nodes[x.0].value.data;
                let wv = &nodes[w.0].value.data;
                ensure(grads, *x);
                {
                    let gx = grads[x.0].as_mut().unwrap();
                    for bi in 0..bsz {
                        for o in 0..co {
                            for t in 0..l {
                                let s = g[(bi * co + o) * l + t];
                                if s == T::zero() {
                                    continue;
                                }
                                for c in 0..ci {
                                    for kk in 0..k {
                                        let u = t as i64 + kk as i64 - half;
                                        if u >= 0 && (u as usize) < l {
                                            let idx = (bi * ci + c) * l + u as usize;
                                            gx[idx] = gx[idx] + s * wv[(o * ci + c) * k + kk];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                ensure(grads, *w);
                let gw = grads[w.0].as_mut().unwrap();
                for bi in 0..bsz {
                    for o in 0..co {
                        for t in 0..l {
                            let s = g[(bi * co + o) * l + t];
                            if s == T::zero() {
                                continue;
                            }
                            for c in 0..ci {
                                for kk in 0..k {
                                    let u = t as i64 + kk as i64 - half;
                                    if u >= 0 && (u as usize) < l {
                                        let idx = (o * ci + c) * k + kk;
                                        gw[idx] = gw[idx] + s * xv[(bi * ci + c) * l + u as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Conv2d { x, w } => {
                let xs = &nodes[x.0].value.shape;
                let ws = &nodes[w.0].value.shape;
                let (ci, h, wdt) = (xs[0], xs[1], xs[2]);
                let (co, kh, kw) = (ws[0], ws[2], ws[3]);
                let (hh, hw) = ((kh / 2) as i64, (kw / 2) as i64);
                let xv = &nodes[x.0].value.data;
                let wv = &nodes[w.0].value.data;
                ensure(grads, *x);
                ensure(grads, *w);
                // split the two grad buffers out of the arena
                let (gx_slot, gw_slot) = if x.0 < w.0 {
                    let (lo, hi) = grads.split_at_mut(w.0);
                    (lo[x.0].as_mut().unwrap(), hi[0].as_mut().unwrap())
                } else {
                    let (lo, hi) = grads.split_at_mut(x.0);
                    (hi[0].as_mut().unwrap(), lo[w.0].as_mut().unwrap())
                };
                for o in 0..co {
                    for r in 0..h {
                        for col in 0..wdt {
                            let s = g[(o * h + r) * wdt + col];
                            if s == T::zero() {
                                continue;
                            }
                            for c in 0..ci {
                                let wbase = ((o * ci) + c) * kh * kw;
                                for dr in 0..kh {
                                    let rr = r as i64 + dr as i64 - hh;
                                    if rr < 0 || rr >= h as i64 {
                                        continue;
                                    }
                                    for dc in 0..kw {
                                        let cc = col as i64 + dc as i64 - hw;
                                        if cc < 0 || cc >= wdt as i64 {
                                            continue;
                                        }
                                        let xi = (c * h + rr as usize) * wdt + cc as usize;
                                        gx_slot[xi] = gx_slot[xi] + s * wv[wbase + dr * kw + dc];
                                        gw_slot[wbase + dr * kw + dc] =
                                            gw_slot[wbase + dr * kw + dc] + s * xv[xi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::AvgPool2(x) => {
                ensure(grads, *x);
                let xs = &nodes[x.0].value.shape;
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (oh, ow) = (h / 2, w / 2);
                let quarter = T::from_f64(0.25);
                let gx = grads[x.0].as_mut().unwrap();
                for ch in 0..c {
                    for r in 0..oh {
                        for col in 0..ow {
                            let s = g[(ch * oh + r) * ow + col] * quarter;
                            let base = (ch * h + 2 * r) * w + 2 * col;
                            gx[base] = gx[base] + s;
                            gx[base + 1] = gx[base + 1] + s;
                            gx[base + w] = gx[base + w] + s;
                            gx[base + w + 1] = gx[base + w + 1] + s;
                        }
                    }
                }
            }
            Op::Upsample2(x) => {
                ensure(grads, *x);
                let xs = &nodes[x.0].value.shape;
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (oh, ow) = (2 * h, 2 * w);
                let gx = grads[x.0].as_mut().unwrap();
                for ch in 0..c {
                    for r in 0..oh {
                        for col in 0..ow {
                            let idx = (ch * h + r / 2) * w + col / 2;
                            gx[idx] = gx[idx] + g[(ch * oh + r) * ow + col];
                        }
                    }
                }
            }
            Op::LayerNormRows { x, eps } => {
                ensure(grads, *x);
                let xs = &nodes[x.0].value.shape;
                let (n, m) = (xs[0], xs[1]);
                let xv = &nodes[x.0].value.data;
                let y = &nodes[id].value.data;
                let mf = T::from_f64(m as f64);
                let epst = T::from_f64(*eps);
                let gx = grads[x.0].as_mut().unwrap();
                for r in 0..n {
                    let row = &xv[r * m..(r + 1) * m];
                    let mean = row.iter().cloned().sum::<T>() / mf;
                    let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / mf;
                    let inv = (var + epst).sqrt().recip();
                    let yr = &y[r * m..(r + 1) * m];
                    let gr = &g[r * m..(r + 1) * m];
                    let gmean = gr.iter().cloned().sum::<T>() / mf;
                    let mut gydot = T::zero();
                    for k in 0..m {
                        gydot = gydot + gr[k] * yr[k];
                    }
                    gydot = gydot / mf;
                    for k in 0..m {
                        gx[r * m + k] = gx[r * m + k] + inv * (gr[k] - gmean - yr[k] * gydot);
                    }
                }
            }
            Op::ScalarWithGrad { x, grad } => {
                ensure(grads, *x);
                let s = g[0];
                let gx = grads[x.0].as_mut().unwrap();
                for k in 0..grad.len() {
                    gx[k] = gx[k] + s * grad[k];
                }
            }
        }
    }
}

fn matmul_kernel<T: Scalar>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let crow = &mut c[i * m..(i + 1) * m];
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == T::zero() {
                continue;
            }
            let brow = &b[kk * m..(kk + 1) * m];
            for j in 0..m {
                crow[j] = crow[j] + aik * brow[j];
            }
        }
    }
}
