//! Reverse-mode automatic differentiation on dense f64 tensors.
//!
//! A [`Tape`] records every operation of a forward pass as a node; calling
//! [`Tape::backward`] replays the tape in reverse and accumulates gradients
//! into the [`ParamStore`] leaves. Each training step builds a fresh tape,
//! so the graph is always exactly the computation that was run.
//!
//! Tapes hold no global state: independent tapes may live on different
//! threads, but a single tape is not shared.

mod adam;
mod backward;
mod params;

pub use adam::{AdamConfig, AdamState};
pub use params::{ParamId, ParamStore, Parameter};

use crate::error::{Error, Result};
use crate::linalg::gemm_nn;
use crate::tensor::Tensor;
use rand::Rng;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;
pub(crate) const L2_NORM_FLOOR: f64 = 1e-12;

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
pub(crate) enum Op {
    Leaf { param: Option<ParamId> },
    Matmul { a: NodeId, b: NodeId },
    BatchMatmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, k: f64 },
    AddBias { a: NodeId, bias: NodeId },
    Concat { parts: Vec<NodeId>, axis: usize },
    Reshape { a: NodeId },
    TransposeLast { a: NodeId },
    RowSoftmax { a: NodeId },
    Sum { a: NodeId },
    Mean { a: NodeId },
    Square { a: NodeId },
    Sqrt { a: NodeId },
    Exp { a: NodeId },
    Log { a: NodeId },
    Relu { a: NodeId },
    LayerNorm { a: NodeId, gamma: NodeId, beta: NodeId },
    Dropout { a: NodeId, factor: Vec<f64> },
    L2Normalize { a: NodeId },
    EmbedFeatures { x: NodeId, w: NodeId, b: NodeId },
    SliceFeature { a: NodeId, index: usize },
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub op: Op,
    pub needs_grad: bool,
}

/// Records a forward pass for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn data(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn to_tensor(&self, id: NodeId) -> Tensor {
        Tensor::new(self.nodes[id.0].shape.clone(), self.nodes[id.0].data.clone())
            .expect("node shape is consistent")
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// A constant input; never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let (shape, data) = t.into_parts();
        self.push(shape, data, Op::Leaf { param: None }, false)
    }

    /// Bind one parameter of `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let t = store.value(id);
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf { param: Some(id) },
            true,
        )
    }

    /// 2-D matrix product `a(m,k) @ b(k,n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, 1.0, self.data(a), self.data(b), 0.0, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![m, n], out, Op::Matmul { a, b }, ng))
    }

    /// Batched 3-D matrix product `a(B,m,k) @ b(B,k,n)`.
    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::ShapeMismatch { op: "batch_matmul", lhs: sa, rhs: sb });
        }
        let (bt, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bt * m * n];
        for i in 0..bt {
            gemm_nn(
                m, k, n, 1.0,
                &self.data(a)[i * m * k..(i + 1) * m * k],
                &self.data(b)[i * k * n..(i + 1) * k * n],
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(vec![bt, m, n], out, Op::BatchMatmul { a, b }, ng))
    }

    fn elementwise_pair(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
    ) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let na: usize = sa.iter().product();
        let nb: usize = sb.iter().product();
        if sa == sb {
            Ok(sa.to_vec())
        } else if na == 1 {
            Ok(sb.to_vec())
        } else if nb == 1 {
            Ok(sa.to_vec())
        } else {
            Err(Error::ShapeMismatch { op: op_name, lhs: sa.to_vec(), rhs: sb.to_vec() })
        }
    }

    fn binary_data(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (da, db) = (self.data(a), self.data(b));
        match (da.len(), db.len()) {
            (1, _) => db.iter().map(|&y| f(da[0], y)).collect(),
            (_, 1) => da.iter().map(|&x| f(x, db[0])).collect(),
            _ => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    /// Elementwise add; one operand may be a scalar.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.elementwise_pair("add", a, b)?;
        let data = self.binary_data(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, data, Op::Add { a, b }, ng))
    }

    /// Elementwise subtract; one operand may be a scalar.
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.elementwise_pair("sub", a, b)?;
        let data = self.binary_data(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, data, Op::Sub { a, b }, ng))
    }

    /// Elementwise multiply; one operand may be a scalar.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.elementwise_pair("mul", a, b)?;
        let data = self.binary_data(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, data, Op::Mul { a, b }, ng))
    }

    /// Multiply by a compile-time-known scalar.
    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let data = self.data(a).iter().map(|&x| x * k).collect();
        let ng = self.needs(a);
        self.push(self.shape(a).to_vec(), data, Op::Scale { a, k }, ng)
    }

    /// Broadcast-add a rank-1 bias over the last axis.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(bias).to_vec());
        if sb.len() != 1 || sa.is_empty() || *sa.last().unwrap() != sb[0] {
            return Err(Error::ShapeMismatch { op: "add_bias", lhs: sa, rhs: sb });
        }
        let d = sb[0];
        let mut out = self.data(a).to_vec();
        let bd = self.data(bias);
        for row in out.chunks_mut(d) {
            for (o, &bv) in row.iter_mut().zip(bd) {
                *o += bv;
            }
        }
        let ng = self.needs(a) || self.needs(bias);
        Ok(self.push(sa, out, Op::AddBias { a, bias }, ng))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::invalid("concat: no inputs"));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::invalid(format!(
                "concat: axis {} out of range for rank {}",
                axis,
                first.len()
            )));
        }
        let mut axis_total = 0;
        for &p in parts {
            let sp = self.shape(p);
            if sp.len() != first.len()
                || sp.iter().enumerate().any(|(i, &e)| i != axis && e != first[i])
            {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: sp.to_vec(),
                });
            }
            axis_total += sp[axis];
        }
        let mut shape = first.clone();
        shape[axis] = axis_total;
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * axis_total * inner];
        let mut offset = 0;
        for &p in parts {
            let ext = self.shape(p)[axis];
            let src = self.data(p);
            for o in 0..outer {
                let dst_start = (o * axis_total + offset) * inner;
                let src_start = o * ext * inner;
                out[dst_start..dst_start + ext * inner]
                    .copy_from_slice(&src[src_start..src_start + ext * inner]);
            }
            offset += ext;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(shape, out, Op::Concat { parts: parts.to_vec(), axis }, ng))
    }

    /// Row-major reshape (data order preserved).
    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.data(a).len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let data = self.data(a).to_vec();
        let ng = self.needs(a);
        Ok(self.push(shape, data, Op::Reshape { a }, ng))
    }

    /// Swap the last two axes.
    pub fn transpose_last(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        if sa.len() < 2 {
            return Err(Error::ShapeMismatch { op: "transpose", lhs: sa, rhs: vec![] });
        }
        let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut shape = sa.clone();
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let src = self.data(a);
        let mut out = vec![0.0; src.len()];
        for bi in 0..batch {
            let base = bi * p * q;
            for i in 0..p {
                for j in 0..q {
                    out[base + j * p + i] = src[base + i * q + j];
                }
            }
        }
        let ng = self.needs(a);
        Ok(self.push(shape, out, Op::TransposeLast { a }, ng))
    }

    /// Numerically-stable softmax along the last axis.
    pub fn row_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let d = *sa.last().ok_or_else(|| Error::invalid("softmax on empty shape"))?;
        let mut out = self.data(a).to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let ng = self.needs(a);
        Ok(self.push(sa, out, Op::RowSoftmax { a }, ng))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.data(a).iter().sum();
        let ng = self.needs(a);
        self.push(vec![1], vec![s], Op::Sum { a }, ng)
    }

    /// Mean of all elements, as a scalar node.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.data(a).len() as f64;
        let s: f64 = self.data(a).iter().sum();
        let ng = self.needs(a);
        self.push(vec![1], vec![s / n], Op::Mean { a }, ng)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let data = self.data(a).iter().map(|&x| x * x).collect();
        let ng = self.needs(a);
        self.push(self.shape(a).to_vec(), data, Op::Square { a }, ng)
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let data = self.data(a).iter().map(|&x| x.sqrt()).collect();
        let ng = self.needs(a);
        self.push(self.shape(a).to_vec(), data, Op::Sqrt { a }, ng)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let data = self.data(a).iter().map(|&x| x.exp()).collect();
        let ng = self.needs(a);
        self.push(self.shape(a).to_vec(), data, Op::Exp { a }, ng)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let data = self.data(a).iter().map(|&x| x.ln()).collect();
        let ng = self.needs(a);
        self.push(self.shape(a).to_vec(), data, Op::Log { a }, ng)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let data = self.data(a).iter().map(|&x| x.max(0.0)).collect();
        let ng = self.needs(a);
        self.push(self.shape(a).to_vec(), data, Op::Relu { a }, ng)
    }

    /// Layer normalization over the last axis with learnable scale and shift.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let d = *sa.last().ok_or_else(|| Error::invalid("layer_norm on empty shape"))?;
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            let sp = self.shape(p);
            if sp.len() != 1 || sp[0] != d {
                return Err(Error::invalid(format!(
                    "layer_norm: {} has shape {:?}, expected [{}]",
                    name, sp, d
                )));
            }
        }
        let mut out = self.data(a).to_vec();
        let gd = self.data(gamma).to_vec();
        let bd = self.data(beta).to_vec();
        for row in out.chunks_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (c, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv * gd[c] + bd[c];
            }
        }
        let ng = self.needs(a) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(sa, out, Op::LayerNorm { a, gamma, beta }, ng))
    }

    /// Inverted dropout. With `rate == 0` or `train == false` this is the
    /// identity and records nothing.
    pub fn dropout(
        &mut self,
        a: NodeId,
        rate: f64,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {} outside [0,1)", rate)));
        }
        if !train || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 - rate;
        let factor: Vec<f64> = (0..self.data(a).len())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let data = self
            .data(a)
            .iter()
            .zip(&factor)
            .map(|(&x, &f)| x * f)
            .collect();
        let ng = self.needs(a);
        Ok(self.push(self.shape(a).to_vec(), data, Op::Dropout { a, factor }, ng))
    }

    /// Scale each last-axis slice to unit Euclidean norm.
    pub fn l2_normalize(&mut self, a: NodeId) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        let d = *sa.last().ok_or_else(|| Error::invalid("l2_normalize on empty shape"))?;
        let mut out = self.data(a).to_vec();
        for row in out.chunks_mut(d) {
            let norm = row.iter().map(|&x| x * x).sum::<f64>().sqrt().max(L2_NORM_FLOOR);
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        let ng = self.needs(a);
        Ok(self.push(sa, out, Op::L2Normalize { a }, ng))
    }

    /// Per-feature linear embedding: `out[i,j,:] = x[i,j] * w[j,:] + b[j,:]`.
    pub fn embed_features(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        if sx.len() != 2 || sw.len() != 2 || sw[0] != sx[1] || sb != sw {
            return Err(Error::ShapeMismatch { op: "embed_features", lhs: sx, rhs: sw });
        }
        let (rows, n, d) = (sx[0], sx[1], sw[1]);
        let xd = self.data(x);
        let wd = self.data(w);
        let bd = self.data(b);
        let mut out = vec![0.0; rows * n * d];
        for i in 0..rows {
            for j in 0..n {
                let v = xd[i * n + j];
                let dst = (i * n + j) * d;
                for c in 0..d {
                    out[dst + c] = v * wd[j * d + c] + bd[j * d + c];
                }
            }
        }
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(vec![rows, n, d], out, Op::EmbedFeatures { x, w, b }, ng))
    }

    /// Select feature `index` from a `(rows, n, d)` tensor, yielding `(rows, d)`.
    pub fn slice_feature(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let sa = self.shape(a).to_vec();
        if sa.len() != 3 || index >= sa[1] {
            return Err(Error::invalid(format!(
                "slice_feature: index {} invalid for shape {:?}",
                index, sa
            )));
        }
        let (rows, n, d) = (sa[0], sa[1], sa[2]);
        let src = self.data(a);
        let mut out = vec![0.0; rows * d];
        for i in 0..rows {
            out[i * d..(i + 1) * d]
                .copy_from_slice(&src[(i * n + index) * d..(i * n + index) * d + d]);
        }
        let ng = self.needs(a);
        Ok(self.push(vec![rows, d], out, Op::SliceFeature { a, index }, ng))
    }
}
