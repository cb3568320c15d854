//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] is built fresh for every forward pass. Parameters enter the
//! graph through [`Graph::param`], which memoizes one leaf per parameter so
//! gradients from every use accumulate into a single buffer.

use std::collections::HashMap;
use std::sync::Arc;

use crate::nn::{ParamId, ParamStore};
use crate::tensor::{gemm, sigmoid, MatView, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    /// `a` viewed as `[n, b.len()]` plus `b` on every row.
    AddBroadcast(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom, cols: Vec<Vec<f64>> },
    /// `[d0, d1, rest] -> [d1, d0, rest]`.
    SwapAxes01 { a: Var, d0: usize, d1: usize, rest: usize },
    Reshape(Var),
    Softmax { a: Var, cols: usize },
    LayerNorm { a: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    /// Concatenation of `[a, b_i, c]` blocks along axis 1.
    Concat1 { parts: Vec<Var>, a: usize, c: usize },
    Bce { logits: Var, targets: Arc<Vec<f64>>, weights: Arc<Vec<f64>> },
    CrossEntropy { logits: Var, targets: Vec<(usize, usize, f64)>, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is retrievable with [`Graph::grad`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let av = view(self.shape(a), ta);
        let bv = view(self.shape(b), tb);
        let mut out = vec![0.0; av.rows * bv.cols];
        gemm(
            1.0,
            self.value(a).data(),
            av,
            self.value(b).data(),
            bv,
            0.0,
            &mut out,
            MatView::dense(av.rows, bv.cols),
        );
        self.push(Tensor::new(vec![av.rows, bv.cols], out), Op::MatMul { a, b, ta, tb })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let data = zip(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, data), Op::Add(a, b))
    }

    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Var {
        let width = self.value(b).len();
        let av = self.value(a);
        assert_eq!(av.len() % width, 0, "add_broadcast: trailing size mismatch");
        let bv = self.value(b).data();
        let data = av
            .data()
            .chunks(width)
            .flat_map(|row| row.iter().zip(bv).map(|(x, y)| x + y))
            .collect();
        let shape = av.shape().to_vec();
        self.push(Tensor::new(shape, data), Op::AddBroadcast(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|v| v * s);
        self.push(t, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|v| v.max(0.0));
        self.push(t, Op::Relu(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshaped(shape);
        self.push(t, Op::Reshape(a))
    }

    /// `[d0, d1, ...] -> [d1, d0, ...]`.
    pub fn swap_axes01(&mut self, a: Var) -> Var {
        let shape = self.shape(a).to_vec();
        let (d0, d1) = (shape[0], shape[1]);
        let rest: usize = shape[2..].iter().product();
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for i in 0..d0 {
            for j in 0..d1 {
                let s = (i * d1 + j) * rest;
                let d = (j * d0 + i) * rest;
                out[d..d + rest].copy_from_slice(&src[s..s + rest]);
            }
        }
        let mut new_shape = shape;
        new_shape.swap(0, 1);
        self.push(Tensor::new(new_shape, out), Op::SwapAxes01 { a, d0, d1, rest })
    }

    /// Row softmax of `a` (viewed `[.., cols]`) after adding `bias`.
    ///
    /// `bias` entries are `0` or `-inf`; masked entries get exactly zero
    /// weight. A row that is entirely `-inf` yields all-zero weights, so
    /// callers that need a distribution must resolve empty rows first.
    pub fn softmax_rows(&mut self, a: Var, bias: Option<&[f64]>) -> Var {
        let shape = self.shape(a).to_vec();
        let cols = *shape.last().expect("softmax on scalar");
        let mut data = self.value(a).data().to_vec();
        if let Some(bias) = bias {
            assert_eq!(bias.len(), data.len(), "softmax bias shape mismatch");
            for (v, b) in data.iter_mut().zip(bias) {
                *v = if *b == f64::NEG_INFINITY { f64::NEG_INFINITY } else { *v + b };
            }
        }
        crate::tensor::softmax_rows_in_place(&mut data, cols);
        self.push(Tensor::new(shape, data), Op::Softmax { a, cols })
    }

    pub fn layer_norm(&mut self, a: Var, gamma: Var, beta: Var) -> Var {
        const EPS: f64 = 1e-5;
        let shape = self.shape(a).to_vec();
        let d = *shape.last().unwrap();
        let x = self.value(a).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(x.len() / d);
        let mut out = vec![0.0; x.len()];
        for (r, row) in x.chunks(d).enumerate() {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + EPS).sqrt();
            inv_std.push(inv);
            for i in 0..d {
                let xh = (row[i] - mean) * inv;
                xhat[r * d + i] = xh;
                out[r * d + i] = xh * g[i] + bt[i];
            }
        }
        self.push(Tensor::new(shape, out), Op::LayerNorm { a, gamma, beta, xhat, inv_std })
    }

    /// 2-D convolution of `x: [n, c, h, w]` with `w: [o, c*k*k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let xs = self.shape(x).to_vec();
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let o = self.shape(w)[0];
        let ckk = c * geom.kernel * geom.kernel;
        assert_eq!(self.shape(w)[1], ckk, "conv2d: weight shape mismatch");
        let (ho, wo) = (geom.out_size(h), geom.out_size(wd));
        let hw_out = ho * wo;
        let mut out = vec![0.0; n * o * hw_out];
        let mut cols = Vec::with_capacity(n);
        let xdata = self.value(x).data();
        let wdata = self.value(w).data();
        for img in 0..n {
            let src = &xdata[img * c * h * wd..(img + 1) * c * h * wd];
            let col = im2col(src, c, h, wd, geom, ho, wo);
            let dst = &mut out[img * o * hw_out..(img + 1) * o * hw_out];
            if let Some(b) = b {
                for (oc, bv) in self.value(b).data().iter().enumerate() {
                    dst[oc * hw_out..(oc + 1) * hw_out].iter_mut().for_each(|v| *v = *bv);
                }
            }
            gemm(
                1.0,
                wdata,
                MatView::dense(o, ckk),
                &col,
                MatView::dense(ckk, hw_out),
                1.0,
                dst,
                MatView::dense(o, hw_out),
            );
            cols.push(col);
        }
        self.push(Tensor::new(vec![n, o, ho, wo], out), Op::Conv2d { x, w, b, geom, cols })
    }

    /// Concatenate `[a, b_i, c]` tensors along axis 1.
    pub fn concat1(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let first = self.shape(parts[0]).to_vec();
        let a = first[0];
        let c: usize = first[2..].iter().product();
        let total_b: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
        let mut out = vec![0.0; a * total_b * c];
        let mut offset = 0;
        for &p in parts {
            let b = self.shape(p)[1];
            let src = self.value(p).data();
            assert_eq!(src.len(), a * b * c, "concat1: incompatible part");
            for i in 0..a {
                let d = (i * total_b + offset) * c;
                out[d..d + b * c].copy_from_slice(&src[i * b * c..(i + 1) * b * c]);
            }
            offset += b;
        }
        let mut shape = first;
        shape[1] = total_b;
        self.push(Tensor::new(shape, out), Op::Concat1 { parts: parts.to_vec(), a, c })
    }

    /// `sum_i weights[i] * bce(logits[i], targets[i])`, entries with zero
    /// weight skipped.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Arc<Vec<f64>>, weights: Arc<Vec<f64>>) -> Var {
        let x = self.value(logits).data();
        assert_eq!(x.len(), targets.len());
        assert_eq!(x.len(), weights.len());
        let mut total = 0.0;
        for i in 0..x.len() {
            if weights[i] != 0.0 {
                total += weights[i] * crate::tensor::bce_with_logit(x[i], targets[i]);
            }
        }
        self.push(Tensor::scalar(total), Op::Bce { logits, targets, weights })
    }

    /// `sum w * -log softmax(logits[row])[class]` over `(row, class, w)`.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<(usize, usize, f64)>) -> Var {
        let cols = *self.shape(logits).last().unwrap();
        let mut probs = self.value(logits).data().to_vec();
        crate::tensor::softmax_rows_in_place(&mut probs, cols);
        let x = self.value(logits).data();
        let mut total = 0.0;
        for &(r, k, w) in &targets {
            let row = &x[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += w * (lse - row[k]);
        }
        self.push(Tensor::scalar(total), Op::CrossEntropy { logits, targets, probs })
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter that took part in the graph.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> + '_ {
        self.params
            .iter()
            .filter_map(|(id, v)| self.grad(*v).map(|g| (*id, g)))
    }

    /// Back-propagate from a scalar output.
    pub fn backward(&mut self, out: Var) {
        assert_eq!(self.value(out).len(), 1, "backward from non-scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(vec![1.0]);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let av = view(self.shape(*a), *ta);
                let bv = view(self.shape(*b), *tb);
                let (m, k, n) = (av.rows, av.cols, bv.cols);
                let gv = MatView::dense(m, n);
                // d op(a) = g @ op(b)^T, written back through op's transpose.
                let ga = grad_buf(grads, *a, m * k);
                let ga_view = if *ta { MatView::dense(k, m).t() } else { MatView::dense(m, k) };
                gemm(1.0, g, gv, self.value(*b).data(), bv.t(), 1.0, ga, ga_view);
                let gb = grad_buf(grads, *b, k * n);
                let gb_view = if *tb { MatView::dense(n, k).t() } else { MatView::dense(k, n) };
                gemm(1.0, self.value(*a).data(), av.t(), g, gv, 1.0, gb, gb_view);
            }
            Op::Add(a, b) => {
                axpy(grad_buf(grads, *a, g.len()), g, 1.0);
                axpy(grad_buf(grads, *b, g.len()), g, 1.0);
            }
            Op::AddBroadcast(a, b) => {
                axpy(grad_buf(grads, *a, g.len()), g, 1.0);
                let width = self.value(*b).len();
                let gb = grad_buf(grads, *b, width);
                for row in g.chunks(width) {
                    axpy(gb, row, 1.0);
                }
            }
            Op::Scale(a, s) => axpy(grad_buf(grads, *a, g.len()), g, *s),
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let ga = grad_buf(grads, *a, g.len());
                for i in 0..g.len() {
                    if x[i] > 0.0 {
                        ga[i] += g[i];
                    }
                }
            }
            Op::Reshape(a) => axpy(grad_buf(grads, *a, g.len()), g, 1.0),
            Op::SwapAxes01 { a, d0, d1, rest } => {
                let ga = grad_buf(grads, *a, g.len());
                for i in 0..*d0 {
                    for j in 0..*d1 {
                        let s = (i * d1 + j) * rest;
                        let d = (j * d0 + i) * rest;
                        axpy(&mut ga[s..s + rest], &g[d..d + rest], 1.0);
                    }
                }
            }
            Op::Softmax { a, cols } => {
                let y = node.value.data();
                let ga = grad_buf(grads, *a, g.len());
                for (r, (yr, gr)) in y.chunks(*cols).zip(g.chunks(*cols)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for c in 0..*cols {
                        ga[r * cols + c] += yr[c] * (gr[c] - dot);
                    }
                }
            }
            Op::LayerNorm { a, gamma, beta, xhat, inv_std } => {
                let d = self.value(*gamma).len();
                let gam = self.value(*gamma).data();
                {
                    let ga = grad_buf(grads, *a, g.len());
                    for (r, inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let xh = &xhat[r * d..(r + 1) * d];
                        let dxh: Vec<f64> = (0..d).map(|i| gr[i] * gam[i]).collect();
                        let sum_dxh: f64 = dxh.iter().sum();
                        let sum_dxh_xh: f64 = dxh.iter().zip(xh).map(|(a, b)| a * b).sum();
                        for i in 0..d {
                            ga[r * d + i] +=
                                inv / d as f64 * (d as f64 * dxh[i] - sum_dxh - xh[i] * sum_dxh_xh);
                        }
                    }
                }
                {
                    let gg = grad_buf(grads, *gamma, d);
                    for (gr, xh) in g.chunks(d).zip(xhat.chunks(d)) {
                        for i in 0..d {
                            gg[i] += gr[i] * xh[i];
                        }
                    }
                }
                let gbt = grad_buf(grads, *beta, d);
                for gr in g.chunks(d) {
                    axpy(gbt, gr, 1.0);
                }
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let xs = self.shape(*x).to_vec();
                let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let o = self.shape(*w)[0];
                let ckk = c * geom.kernel * geom.kernel;
                let os = node.value.shape();
                let (ho, wo) = (os[2], os[3]);
                let hw_out = ho * wo;
                if let Some(b) = b {
                    let gb = grad_buf(grads, *b, o);
                    for img in 0..n {
                        for oc in 0..o {
                            let s = (img * o + oc) * hw_out;
                            gb[oc] += g[s..s + hw_out].iter().sum::<f64>();
                        }
                    }
                }
                {
                    let gw = grad_buf(grads, *w, o * ckk);
                    for img in 0..n {
                        let gi = &g[img * o * hw_out..(img + 1) * o * hw_out];
                        gemm(
                            1.0,
                            gi,
                            MatView::dense(o, hw_out),
                            &cols[img],
                            MatView::dense(ckk, hw_out).t(),
                            1.0,
                            gw,
                            MatView::dense(o, ckk),
                        );
                    }
                }
                let wdata = self.value(*w).data();
                let gx = grad_buf(grads, *x, n * c * h * wd);
                let mut dcol = vec![0.0; ckk * hw_out];
                for img in 0..n {
                    let gi = &g[img * o * hw_out..(img + 1) * o * hw_out];
                    gemm(
                        1.0,
                        wdata,
                        MatView::dense(o, ckk).t(),
                        gi,
                        MatView::dense(o, hw_out),
                        0.0,
                        &mut dcol,
                        MatView::dense(ckk, hw_out),
                    );
                    col2im(&dcol, &mut gx[img * c * h * wd..(img + 1) * c * h * wd], c, h, wd, *geom, ho, wo);
                }
            }
            Op::Concat1 { parts, a, c } => {
                let total_b = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let b = self.shape(p)[1];
                    let gp = grad_buf(grads, p, a * b * c);
                    for i in 0..*a {
                        let s = (i * total_b + offset) * c;
                        axpy(&mut gp[i * b * c..(i + 1) * b * c], &g[s..s + b * c], 1.0);
                    }
                    offset += b;
                }
            }
            Op::Bce { logits, targets, weights } => {
                let x = self.value(*logits).data();
                let gl = grad_buf(grads, *logits, x.len());
                for i in 0..x.len() {
                    if weights[i] != 0.0 {
                        gl[i] += g[0] * weights[i] * (sigmoid(x[i]) - targets[i]);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let cols = *self.shape(*logits).last().unwrap();
                let gl = grad_buf(grads, *logits, probs.len());
                for &(r, k, w) in targets {
                    for c in 0..cols {
                        let onehot = if c == k { 1.0 } else { 0.0 };
                        gl[r * cols + c] += g[0] * w * (probs[r * cols + c] - onehot);
                    }
                }
            }
        }
    }
}

fn view(shape: &[usize], transposed: bool) -> MatView {
    assert_eq!(shape.len(), 2, "matmul operands must be 2-D, got {shape:?}");
    let v = MatView::dense(shape[0], shape[1]);
    if transposed {
        v.t()
    } else {
        v
    }
}

fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

fn grad_buf(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn im2col(src: &[f64], c: usize, h: usize, w: usize, geom: ConvGeom, ho: usize, wo: usize) -> Vec<f64> {
    let k = geom.kernel;
    let hw_out = ho * wo;
    let mut col = vec![0.0; c * k * k * hw_out];
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &src[(ch * h + iy as usize) * w..(ch * h + iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * wo + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im(col: &[f64], dst: &mut [f64], c: usize, h: usize, w: usize, geom: ConvGeom, ho: usize, wo: usize) {
    let k = geom.kernel;
    let hw_out = ho * wo;
    for ch in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[(ch * h + iy as usize) * w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Scalar-valued function of one input tensor, for finite-difference checks.
pub fn numeric_grad(x: &Tensor, eps: f64, mut f: impl FnMut(&Tensor) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let up = f(&probe);
            probe.data_mut()[i] = orig - eps;
            let down = f(&probe);
            probe.data_mut()[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}
