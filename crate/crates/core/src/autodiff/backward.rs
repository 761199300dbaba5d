//! Reverse sweep over a recorded tape.

use super::{Node, NodeId, Op, Tape, L2_NORM_FLOOR, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::linalg::{gemm_nt, gemm_tn};

fn acc<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: NodeId,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[id.0].needs_grad {
        return None;
    }
    Some(grads[id.0].get_or_insert_with(|| vec![0.0; nodes[id.0].data.len()]))
}

impl Tape {
    /// Propagate `dLoss/d(node)` from a scalar loss back to every reachable
    /// differentiable leaf, accumulating parameter gradients into `store`.
    pub fn backward(&self, loss: NodeId, store: &mut super::ParamStore) -> Result<()> {
        let loss_node = &self.nodes[loss.0];
        if loss_node.data.len() != 1 {
            return Err(Error::invalid(format!(
                "backward: loss must be a scalar, got shape {:?}",
                loss_node.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.step_back(id, &g, &mut grads, store)?;
        }
        Ok(())
    }

    fn step_back(
        &self,
        id: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        store: &mut super::ParamStore,
    ) -> Result<()> {
        let nodes = &self.nodes;
        match &nodes[id].op {
            Op::Leaf { param } => {
                if let Some(pid) = *param {
                    store.accumulate_grad(pid, g)?;
                }
            }
            Op::Matmul { a, b } => {
                let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                let n = nodes[b.0].shape[1];
                if let Some(da) = acc(grads, nodes, *a) {
                    gemm_nt(m, n, k, 1.0, g, &nodes[b.0].data, 1.0, da);
                }
                if let Some(db) = acc(grads, nodes, *b) {
                    gemm_tn(k, m, n, 1.0, &nodes[a.0].data, g, 1.0, db);
                }
            }
            Op::BatchMatmul { a, b } => {
                let (bt, m, k) = (
                    nodes[a.0].shape[0],
                    nodes[a.0].shape[1],
                    nodes[a.0].shape[2],
                );
                let n = nodes[b.0].shape[2];
                if let Some(da) = acc(grads, nodes, *a) {
                    for i in 0..bt {
                        gemm_nt(
                            m, n, k, 1.0,
                            &g[i * m * n..(i + 1) * m * n],
                            &nodes[b.0].data[i * k * n..(i + 1) * k * n],
                            1.0,
                            &mut da[i * m * k..(i + 1) * m * k],
                        );
                    }
                }
                if let Some(db) = acc(grads, nodes, *b) {
                    for i in 0..bt {
                        gemm_tn(
                            k, m, n, 1.0,
                            &nodes[a.0].data[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            1.0,
                            &mut db[i * k * n..(i + 1) * k * n],
                        );
                    }
                }
            }
            Op::Add { a, b } => {
                for (side, sign) in [(*a, 1.0), (*b, 1.0)] {
                    self.acc_broadcast(side, g, sign, grads);
                }
            }
            Op::Sub { a, b } => {
                self.acc_broadcast(*a, g, 1.0, grads);
                self.acc_broadcast(*b, g, -1.0, grads);
            }
            Op::Mul { a, b } => {
                let (da_len, db_len) = (nodes[a.0].data.len(), nodes[b.0].data.len());
                if let Some(da) = acc(grads, nodes, *a) {
                    let bd = &nodes[b.0].data;
                    if da_len == 1 && g.len() > 1 {
                        da[0] += g.iter().zip(bd).map(|(&gi, &bi)| gi * bi).sum::<f64>();
                    } else if db_len == 1 {
                        for (d, &gi) in da.iter_mut().zip(g) {
                            *d += gi * bd[0];
                        }
                    } else {
                        for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(bd) {
                            *d += gi * bi;
                        }
                    }
                }
                if let Some(db) = acc(grads, nodes, *b) {
                    let ad = &nodes[a.0].data;
                    if db_len == 1 && g.len() > 1 {
                        db[0] += g.iter().zip(ad).map(|(&gi, &ai)| gi * ai).sum::<f64>();
                    } else if da_len == 1 {
                        for (d, &gi) in db.iter_mut().zip(g) {
                            *d += gi * ad[0];
                        }
                    } else {
                        for ((d, &gi), &ai) in db.iter_mut().zip(g).zip(ad) {
                            *d += gi * ai;
                        }
                    }
                }
            }
            Op::Scale { a, k } => {
                let k = *k;
                if let Some(da) = acc(grads, nodes, *a) {
                    for (d, &gi) in da.iter_mut().zip(g) {
                        *d += k * gi;
                    }
                }
            }
            Op::AddBias { a, bias } => {
                if let Some(da) = acc(grads, nodes, *a) {
                    for (d, &gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
                let d = nodes[bias.0].shape[0];
                if let Some(dbias) = acc(grads, nodes, *bias) {
                    for row in g.chunks(d) {
                        for (db, &gi) in dbias.iter_mut().zip(row) {
                            *db += gi;
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let shape = &nodes[id].shape;
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[*axis + 1..].iter().product();
                let axis_total = shape[*axis];
                let mut offset = 0;
                for &p in parts {
                    let ext = nodes[p.0].shape[*axis];
                    if let Some(dp) = acc(grads, nodes, p) {
                        for o in 0..outer {
                            let src_start = (o * axis_total + offset) * inner;
                            let dst_start = o * ext * inner;
                            for t in 0..ext * inner {
                                dp[dst_start + t] += g[src_start + t];
                            }
                        }
                    }
                    offset += ext;
                }
            }
            Op::Reshape { a } => {
                if let Some(da) = acc(grads, nodes, *a) {
                    for (d, &gi) in da.iter_mut().zip(g) {
                        *d += gi;
                    }
                }
            }
            Op::TransposeLast { a } => {
                let sa = &nodes[a.0].shape;
                let (p, q) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let batch: usize = sa[..sa.len() - 2].iter().product();
                if let Some(da) = acc(grads, nodes, *a) {
                    for bi in 0..batch {
                        let base = bi * p * q;
                        for i in 0..p {
                            for j in 0..q {
                                da[base + i * q + j] += g[base + j * p + i];
                            }
                        }
                    }
                }
            }
            Op::RowSoftmax { a } => {
                let d = *nodes[id].shape.last().unwrap();
                let y = &nodes[id].data;
                if let Some(da) = acc(grads, nodes, *a) {
                    for r in 0..y.len() / d {
                        let (ys, gs) = (&y[r * d..(r + 1) * d], &g[r * d..(r + 1) * d]);
                        let dot: f64 = ys.iter().zip(gs).map(|(&yi, &gi)| yi * gi).sum();
                        for c in 0..d {
                            da[r * d + c] += ys[c] * (gs[c] - dot);
                        }
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(da) = acc(grads, nodes, *a) {
                    for d in da.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Mean { a } => {
                let n = nodes[a.0].data.len() as f64;
                if let Some(da) = acc(grads, nodes, *a) {
                    for d in da.iter_mut() {
                        *d += g[0] / n;
                    }
                }
            }
            Op::Square { a } => {
                let x = &nodes[a.0].data;
                if let Some(da) = acc(grads, nodes, *a) {
                    for ((d, &gi), &xi) in da.iter_mut().zip(g).zip(x) {
                        *d += 2.0 * xi * gi;
                    }
                }
            }
            Op::Sqrt { a } => {
                let y = &nodes[id].data;
                if let Some(da) = acc(grads, nodes, *a) {
                    for ((d, &gi), &yi) in da.iter_mut().zip(g).zip(y) {
                        *d += 0.5 * gi / yi;
                    }
                }
            }
            Op::Exp { a } => {
                let y = &nodes[id].data;
                if let Some(da) = acc(grads, nodes, *a) {
                    for ((d, &gi), &yi) in da.iter_mut().zip(g).zip(y) {
                        *d += gi * yi;
                    }
                }
            }
            Op::Log { a } => {
                let x = &nodes[a.0].data;
                if let Some(da) = acc(grads, nodes, *a) {
                    for ((d, &gi), &xi) in da.iter_mut().zip(g).zip(x) {
                        *d += gi / xi;
                    }
                }
            }
            Op::Relu { a } => {
                let x = &nodes[a.0].data;
                if let Some(da) = acc(grads, nodes, *a) {
                    for ((d, &gi), &xi) in da.iter_mut().zip(g).zip(x) {
                        if xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::LayerNorm { a, gamma, beta } => {
                self.layer_norm_back(*a, *gamma, *beta, g, grads);
            }
            Op::Dropout { a, factor } => {
                if let Some(da) = acc(grads, nodes, *a) {
                    for ((d, &gi), &f) in da.iter_mut().zip(g).zip(factor) {
                        *d += gi * f;
                    }
                }
            }
            Op::L2Normalize { a } => {
                let d = *nodes[id].shape.last().unwrap();
                let x = &nodes[a.0].data;
                let y = &nodes[id].data;
                if let Some(da) = acc(grads, nodes, *a) {
                    for r in 0..y.len() / d {
                        let xs = &x[r * d..(r + 1) * d];
                        let ys = &y[r * d..(r + 1) * d];
                        let gs = &g[r * d..(r + 1) * d];
                        let norm = xs.iter().map(|&v| v * v).sum::<f64>().sqrt().max(L2_NORM_FLOOR);
                        let dot: f64 = ys.iter().zip(gs).map(|(&yi, &gi)| yi * gi).sum();
                        for c in 0..d {
                            da[r * d + c] += (gs[c] - ys[c] * dot) / norm;
                        }
                    }
                }
            }
            Op::EmbedFeatures { x, w, b } => {
                let sx = &nodes[x.0].shape;
                let (rows, n) = (sx[0], sx[1]);
                let d = nodes[w.0].shape[1];
                let xd = &nodes[x.0].data;
                let wd = &nodes[w.0].data;
                if let Some(dx) = acc(grads, nodes, *x) {
                    for i in 0..rows {
                        for j in 0..n {
                            let gsl = &g[(i * n + j) * d..(i * n + j + 1) * d];
                            dx[i * n + j] += gsl
                                .iter()
                                .zip(&wd[j * d..(j + 1) * d])
                                .map(|(&gi, &wi)| gi * wi)
                                .sum::<f64>();
                        }
                    }
                }
                if let Some(dw) = acc(grads, nodes, *w) {
                    for i in 0..rows {
                        for j in 0..n {
                            let v = xd[i * n + j];
                            let gsl = &g[(i * n + j) * d..(i * n + j + 1) * d];
                            for c in 0..d {
                                dw[j * d + c] += gsl[c] * v;
                            }
                        }
                    }
                }
                if let Some(db) = acc(grads, nodes, *b) {
                    for i in 0..rows {
                        for j in 0..n {
                            let gsl = &g[(i * n + j) * d..(i * n + j + 1) * d];
                            for c in 0..d {
                                db[j * d + c] += gsl[c];
                            }
                        }
                    }
                }
            }
            Op::SliceFeature { a, index } => {
                let sa = &nodes[a.0].shape;
                let (n, d) = (sa[1], sa[2]);
                let rows = sa[0];
                if let Some(da) = acc(grads, nodes, *a) {
                    for i in 0..rows {
                        let dst = (i * n + index) * d;
                        for c in 0..d {
                            da[dst + c] += g[i * d + c];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulate `sign * g` into an operand of an elementwise op, summing
    /// when the operand was a broadcast scalar.
    fn acc_broadcast(
        &self,
        target: NodeId,
        g: &[f64],
        sign: f64,
        grads: &mut [Option<Vec<f64>>],
    ) {
        let nodes = &self.nodes;
        let t_len = nodes[target.0].data.len();
        if let Some(dt) = acc(grads, nodes, target) {
            if t_len == 1 && g.len() > 1 {
                dt[0] += sign * g.iter().sum::<f64>();
            } else {
                for (d, &gi) in dt.iter_mut().zip(g) {
                    *d += sign * gi;
                }
            }
        }
    }

    fn layer_norm_back(
        &self,
        a: NodeId,
        gamma: NodeId,
        beta: NodeId,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let nodes = &self.nodes;
        let d = *nodes[a.0].shape.last().unwrap();
        let x = &nodes[a.0].data;
        let gd = &nodes[gamma.0].data;
        let rows = x.len() / d;

        // Recompute the per-row normalization rather than caching it.
        let mut xhat = vec![0.0; x.len()];
        let mut invs = vec![0.0; rows];
        for r in 0..rows {
            let xs = &x[r * d..(r + 1) * d];
            let mean = xs.iter().sum::<f64>() / d as f64;
            let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            invs[r] = inv;
            for c in 0..d {
                xhat[r * d + c] = (xs[c] - mean) * inv;
            }
        }

        if let Some(dgamma) = acc(grads, nodes, gamma) {
            for r in 0..rows {
                for c in 0..d {
                    dgamma[c] += g[r * d + c] * xhat[r * d + c];
                }
            }
        }
        if let Some(dbeta) = acc(grads, nodes, beta) {
            for r in 0..rows {
                for c in 0..d {
                    dbeta[c] += g[r * d + c];
                }
            }
        }
        if let Some(da) = acc(grads, nodes, a) {
            for r in 0..rows {
                let gs = &g[r * d..(r + 1) * d];
                let xh = &xhat[r * d..(r + 1) * d];
                let mut m1 = 0.0;
                let mut m2 = 0.0;
                for c in 0..d {
                    let dxh = gs[c] * gd[c];
                    m1 += dxh;
                    m2 += dxh * xh[c];
                }
                m1 /= d as f64;
                m2 /= d as f64;
                for c in 0..d {
                    let dxh = gs[c] * gd[c];
                    da[r * d + c] += invs[r] * (dxh - m1 - xh[c] * m2);
                }
            }
        }
    }
}
