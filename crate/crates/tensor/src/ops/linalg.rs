use crate::error::{shape_err, Result};
use crate::real::{gemm, Real};
use crate::tape::{GradSink, Node, Op, Tape, Var};

impl<T: Real> Tape<T> {
    /// Affine map over the last axis: `x [..., D] · w [D, E] + b [E]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 {
            return shape_err("dense", format!("weight must be rank 2, got {ws:?}"));
        }
        let (d, e) = (ws[0], ws[1]);
        let xd = *xs.last().expect("rank >= 1");
        if xs.len() < 2 || xd != d {
            return shape_err("dense", format!("inner dimension: input {xs:?}, weight {ws:?}"));
        }
        if self.shape(b) != [e] {
            return shape_err("dense", format!("bias must be [{e}], got {:?}", self.shape(b)));
        }
        let rows = self.value(x).len() / d;
        let mut out = vec![T::zero(); rows * e];
        gemm(rows, d, e, self.value(x), false, self.value(w), false, &mut out, false);
        let bv = self.value(b);
        for r in 0..rows {
            out[r * e..(r + 1) * e]
                .iter_mut()
                .zip(bv)
                .for_each(|(o, &bi)| *o += bi);
        }
        let mut shape = xs;
        *shape.last_mut().expect("rank >= 1") = e;
        Ok(self.push(shape, out, Op::Linear { x, w, b }))
    }

    /// Batched product `a [B,M,K] · b [B,K,N]`, or `a · bᵀ` with `b [B,N,K]`
    /// when `trans_b`.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let a_s = self.shape(a).to_vec();
        let b_s = self.shape(b).to_vec();
        if a_s.len() != 3 || b_s.len() != 3 || a_s[0] != b_s[0] {
            return shape_err("batch_matmul", format!("{a_s:?} x {b_s:?}"));
        }
        let (bt, m, k) = (a_s[0], a_s[1], a_s[2]);
        let (bk, n) = if trans_b { (b_s[2], b_s[1]) } else { (b_s[1], b_s[2]) };
        if bk != k {
            return shape_err("batch_matmul", format!("inner dimension: {a_s:?} x {b_s:?}"));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![T::zero(); bt * m * n];
        for i in 0..bt {
            gemm(
                m,
                k,
                n,
                &av[i * m * k..(i + 1) * m * k],
                false,
                &bv[i * k * n..(i + 1) * k * n],
                trans_b,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        Ok(self.push(vec![bt, m, n], out, Op::BatchMatMul { a, b, trans_b }))
    }
}

pub(crate) fn linear_backward<T: Real>(x: Var, w: Var, b: Var, g: &[T], sink: &mut GradSink<'_, T>) {
    let ws = &sink.node(w).shape;
    let (d, e) = (ws[0], ws[1]);
    let rows = g.len() / e;
    let xv = &sink.node(x).value;
    let wv = &sink.node(w).value;
    if sink.wants(x) {
        gemm(rows, e, d, g, false, wv, true, sink.buf(x), true);
    }
    if sink.wants(w) {
        gemm(d, rows, e, xv, true, g, false, sink.buf(w), true);
    }
    if sink.wants(b) {
        let db = sink.buf(b);
        for r in 0..rows {
            db.iter_mut()
                .zip(&g[r * e..(r + 1) * e])
                .for_each(|(o, &gi)| *o += gi);
        }
    }
}

pub(crate) fn batch_matmul_backward<T: Real>(
    node: &Node<T>,
    a: Var,
    b: Var,
    trans_b: bool,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let (bt, m, n) = (node.shape[0], node.shape[1], node.shape[2]);
    let k = sink.node(a).shape[2];
    let av = &sink.node(a).value;
    let bv = &sink.node(b).value;
    if sink.wants(a) {
        let da = sink.buf(a);
        for i in 0..bt {
            let gi = &g[i * m * n..(i + 1) * m * n];
            let bi = &bv[i * k * n..(i + 1) * k * n];
            // trans_b: b is [N,K] so da = g·b; otherwise b is [K,N] and da = g·bᵀ
            gemm(m, n, k, gi, false, bi, !trans_b, &mut da[i * m * k..(i + 1) * m * k], true);
        }
    }
    if sink.wants(b) {
        let db = sink.buf(b);
        for i in 0..bt {
            let gi = &g[i * m * n..(i + 1) * m * n];
            let ai = &av[i * m * k..(i + 1) * m * k];
            let dbi = &mut db[i * k * n..(i + 1) * k * n];
            if trans_b {
                gemm(n, m, k, gi, true, ai, false, dbi, true);
            } else {
                gemm(k, m, n, ai, true, gi, false, dbi, true);
            }
        }
    }
}
