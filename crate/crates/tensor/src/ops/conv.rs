use crate::error::{arg_err, shape_err, Result};
use crate::real::{gemm, Real};
use crate::tape::{GradSink, Node, Op, Padding, Tape, Var};

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    /// 1×1 kernels at unit stride read the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let hw_out = g.oh * g.ow;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let hw_out = g.oh * g.ow;
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            line[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn expect_rank4(op: &'static str, what: &str, s: &[usize]) -> Result<()> {
    if s.len() != 4 {
        return shape_err(op, format!("{what} must be rank 4, got {s:?}"));
    }
    Ok(())
}

impl<T: Real> Tape<T> {
    /// 2-D convolution of `x [N,C,H,W]` with `w [F,C,k,k]` plus bias `b [F]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        expect_rank4(OP, "input", &xs)?;
        expect_rank4(OP, "weight", &ws)?;
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (f, wc, k) = (ws[0], ws[1], ws[2]);
        if wc != c {
            return shape_err(OP, format!("input channels: input has {c}, weight expects {wc}"));
        }
        if ws[3] != k || k % 2 == 0 {
            return shape_err(OP, format!("kernel must be square and odd, got {}x{}", k, ws[3]));
        }
        if self.shape(b) != [f] {
            return shape_err(OP, format!("bias must be [{f}], got {:?}", self.shape(b)));
        }
        if stride == 0 {
            return arg_err(OP, "stride must be at least 1");
        }
        let pad = match padding {
            Padding::Same => k / 2,
            Padding::Valid => 0,
        };
        if h + 2 * pad < k || wd + 2 * pad < k {
            return shape_err(OP, format!("kernel {k} larger than padded input {h}x{wd}"));
        }
        let g = ConvGeom {
            c,
            h,
            w: wd,
            k,
            stride,
            pad,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (wd + 2 * pad - k) / stride + 1,
        };
        let ckk = c * k * k;
        let hw_out = g.oh * g.ow;
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut out = vec![T::zero(); n * f * hw_out];
        let mut col = if g.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); ckk * hw_out]
        };
        for ni in 0..n {
            let xn = &xv[ni * c * h * wd..(ni + 1) * c * h * wd];
            let on = &mut out[ni * f * hw_out..(ni + 1) * f * hw_out];
            let cols: &[T] = if g.is_pointwise() {
                xn
            } else {
                im2col(xn, &g, &mut col);
                &col
            };
            gemm(f, ckk, hw_out, wv, false, cols, false, on, false);
            for fi in 0..f {
                let bias = bv[fi];
                on[fi * hw_out..(fi + 1) * hw_out]
                    .iter_mut()
                    .for_each(|v| *v += bias);
            }
        }
        Ok(self.push(
            vec![n, f, g.oh, g.ow],
            out,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            },
        ))
    }

    /// Stride-2 transposed convolution with a 2×2 kernel `w [C,F,2,2]`;
    /// doubles both spatial extents.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        expect_rank4(OP, "input", &xs)?;
        expect_rank4(OP, "weight", &ws)?;
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        if ws[0] != c {
            return shape_err(OP, format!("input channels: input has {c}, weight expects {}", ws[0]));
        }
        if ws[2] != 2 || ws[3] != 2 {
            return shape_err(OP, format!("kernel must be 2x2, got {}x{}", ws[2], ws[3]));
        }
        let f = ws[1];
        if self.shape(b) != [f] {
            return shape_err(OP, format!("bias must be [{f}], got {:?}", self.shape(b)));
        }
        let hw = h * wd;
        let (oh, ow) = (2 * h, 2 * wd);
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let mut tmp = vec![T::zero(); f * 4 * hw];
        let mut out = vec![T::zero(); n * f * oh * ow];
        for ni in 0..n {
            let xn = &xv[ni * c * hw..(ni + 1) * c * hw];
            gemm(f * 4, c, hw, wv, true, xn, false, &mut tmp, false);
            let on = &mut out[ni * f * oh * ow..(ni + 1) * f * oh * ow];
            for fi in 0..f {
                for a in 0..2 {
                    for bb in 0..2 {
                        let row = &tmp[(fi * 4 + a * 2 + bb) * hw..(fi * 4 + a * 2 + bb + 1) * hw];
                        for i in 0..h {
                            for j in 0..wd {
                                on[(fi * oh + 2 * i + a) * ow + 2 * j + bb] = row[i * wd + j] + bv[fi];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(vec![n, f, oh, ow], out, Op::ConvTranspose2x2 { x, w, b }))
    }

    /// 2×2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major window order.
    pub fn maxpool2d(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        expect_rank4("maxpool2d", "input", &xs)?;
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err("maxpool2d", format!("spatial extents must be even, got {h}x{w}"));
        }
        let (oh, ow) = (h / 2, w / 2);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if xv[idx] > xv[best] {
                            best = idx;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        self.note_kinks(argmax.iter().map(|&i| i as u64));
        Ok(self.push(vec![n, c, oh, ow], out, Op::MaxPool2 { x, argmax }))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Real>(
    node: &Node<T>,
    x: Var,
    w: Var,
    b: Var,
    stride: usize,
    pad: usize,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let xs = &sink.node(x).shape;
    let ws = &sink.node(w).shape;
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let (f, k) = (ws[0], ws[2]);
    let geom = ConvGeom {
        c,
        h,
        w: wd,
        k,
        stride,
        pad,
        oh: node.shape[2],
        ow: node.shape[3],
    };
    let ckk = c * k * k;
    let hw_out = geom.oh * geom.ow;
    let xv = &sink.node(x).value;
    let wv = &sink.node(w).value;

    if sink.wants(b) {
        let db = sink.buf(b);
        for ni in 0..n {
            for fi in 0..f {
                let off = (ni * f + fi) * hw_out;
                db[fi] += g[off..off + hw_out].iter().copied().sum::<T>();
            }
        }
    }
    let want_w = sink.wants(w);
    let want_x = sink.wants(x);
    if !want_w && !want_x {
        return;
    }
    let mut col = vec![T::zero(); if geom.is_pointwise() { 0 } else { ckk * hw_out }];
    let mut dcol = vec![T::zero(); if want_x && !geom.is_pointwise() { ckk * hw_out } else { 0 }];
    let mut dw = vec![T::zero(); if want_w { f * ckk } else { 0 }];
    let mut dx = vec![T::zero(); if want_x { n * c * h * wd } else { 0 }];
    for ni in 0..n {
        let gn = &g[ni * f * hw_out..(ni + 1) * f * hw_out];
        let xn = &xv[ni * c * h * wd..(ni + 1) * c * h * wd];
        if want_w {
            let cols: &[T] = if geom.is_pointwise() {
                xn
            } else {
                im2col(xn, &geom, &mut col);
                &col
            };
            gemm(f, hw_out, ckk, gn, false, cols, true, &mut dw, true);
        }
        if want_x {
            let dxn = &mut dx[ni * c * h * wd..(ni + 1) * c * h * wd];
            if geom.is_pointwise() {
                gemm(ckk, f, hw_out, wv, true, gn, false, dxn, false);
            } else {
                gemm(ckk, f, hw_out, wv, true, gn, false, &mut dcol, false);
                col2im(&dcol, &geom, dxn);
            }
        }
    }
    if want_w {
        sink.add(w, dw);
    }
    if want_x {
        sink.add(x, dx);
    }
}

pub(crate) fn conv_transpose_backward<T: Real>(
    x: Var,
    w: Var,
    b: Var,
    g: &[T],
    sink: &mut GradSink<'_, T>,
) {
    let xs = &sink.node(x).shape;
    let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
    let f = sink.node(w).shape[1];
    let hw = h * wd;
    let (oh, ow) = (2 * h, 2 * wd);
    let xv = &sink.node(x).value;
    let wv = &sink.node(w).value;
    let want_x = sink.wants(x);
    let want_w = sink.wants(w);
    let want_b = sink.wants(b);
    let mut gt = vec![T::zero(); f * 4 * hw];
    let mut dx = vec![T::zero(); if want_x { n * c * hw } else { 0 }];
    let mut dw = vec![T::zero(); if want_w { c * f * 4 } else { 0 }];
    let mut db = vec![T::zero(); f];
    for ni in 0..n {
        let gn = &g[ni * f * oh * ow..(ni + 1) * f * oh * ow];
        for fi in 0..f {
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &mut gt[(fi * 4 + a * 2 + bb) * hw..(fi * 4 + a * 2 + bb + 1) * hw];
                    for i in 0..h {
                        for j in 0..wd {
                            row[i * wd + j] = gn[(fi * oh + 2 * i + a) * ow + 2 * j + bb];
                        }
                    }
                }
            }
            if want_b {
                db[fi] += gn[fi * oh * ow..(fi + 1) * oh * ow].iter().copied().sum::<T>();
            }
        }
        if want_x {
            gemm(c, f * 4, hw, wv, false, &gt, false, &mut dx[ni * c * hw..(ni + 1) * c * hw], false);
        }
        if want_w {
            let xn = &xv[ni * c * hw..(ni + 1) * c * hw];
            gemm(c, hw, f * 4, xn, false, &gt, true, &mut dw, true);
        }
    }
    if want_x {
        sink.add(x, dx);
    }
    if want_w {
        sink.add(w, dw);
    }
    if want_b {
        sink.add(b, db);
    }
}
