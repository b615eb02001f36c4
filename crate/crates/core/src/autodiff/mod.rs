//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Tape`] records every operation of a forward pass in execution order.
//! [`Tape::backward`] seeds the scalar target with 1 and sweeps the tape in
//! reverse, so each input's gradient is the sum over all paths from that
//! input to the target.
//!
//! Tensors are `(channels, rows, cols)`. Images use all three axes; token
//! matrices use `channels = 1` with one token per row.
//!
//! Conventions that decide gradient routing on non-smooth points:
//! ReLU passes no gradient at exactly zero, and max-pool ties go to the first
//! cell of the window in row-major order.

mod attention;
mod matrix;
mod noise;

pub use attention::{attention_backward_closed_form, attention_forward, AttentionWeights};
pub use matrix::{softmax_rows, Mat};
pub use noise::{kernel_noise_variance, relu_noise_excess, relu_noise_expectation};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::fields::RoiBox;
use crate::{Error, Result};
use matrix::matmul_into;

/// `(channels, rows, cols)` extents of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape {
        channels: 1,
        rows: 1,
        cols: 1,
    };

    pub fn image(channels: usize, rows: usize, cols: usize) -> Self {
        Self {
            channels,
            rows,
            cols,
        }
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        Self {
            channels: 1,
            rows,
            cols,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.channels * self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn plane(&self) -> usize {
        self.rows * self.cols
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Convolution weights `[out][in][kh][kw]` with odd spatial extents, plus one
/// bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvKernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kh: usize,
        kw: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("kernel must be odd-sized, got {kh}x{kw}")));
        }
        if weights.len() != out_channels * in_channels * kh * kw || bias.len() != out_channels {
            return Err(Error::Shape("kernel weight or bias length mismatch".into()));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kh,
            kw,
            weights,
            bias,
        })
    }

    /// Single-channel kernel without bias.
    pub fn single(kh: usize, kw: usize, weights: Vec<f64>) -> Result<Self> {
        Self::new(1, 1, kh, kw, weights, vec![0.0])
    }

    #[inline]
    fn w(&self, o: usize, i: usize, m: usize, n: usize) -> f64 {
        self.weights[((o * self.in_channels + i) * self.kh + m) * self.kw + n]
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { x: Var, kernel: ConvKernel },
    Relu { x: Var },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Upsample2 { x: Var },
    ToTokens { x: Var },
    ToImage { x: Var },
    /// `a @ b` or `a @ b^T`.
    MatMul { a: Var, b: Var, transpose_b: bool },
    AddRowBias { x: Var, bias: Var },
    SoftmaxRows { x: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, k: f64 },
    Sum { x: Var },
    RoiMean { x: Var, channel: usize, roi: RoiBox },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Shape,
    value: Vec<f64>,
    op: Op,
}

/// Forward-execution record. Nodes are appended in topological order.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Shape, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.len(), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    /// Registers an input (or parameter) tensor.
    pub fn leaf(&mut self, shape: Shape, value: Vec<f64>) -> Result<Var> {
        if value.len() != shape.len() {
            return Err(Error::Shape(format!(
                "leaf shape {shape:?} needs {} values, got {}",
                shape.len(),
                value.len()
            )));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tape leaf"));
        }
        Ok(self.push(shape, value, Op::Leaf))
    }

    pub fn matrix_leaf(&mut self, m: &Mat) -> Var {
        self.push(Shape::matrix(m.rows, m.cols), m.data.clone(), Op::Leaf)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    #[inline]
    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    /// Same-padded cross-correlation `z[o,h,w] = b[o] + sum K[o,i,m,n] x[i,h+m-V,w+n-U]`.
    pub fn conv2d(&mut self, x: Var, kernel: &ConvKernel) -> Result<Var> {
        let s = self.shape(x);
        if s.channels != kernel.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                kernel.in_channels, s.channels
            )));
        }
        let (h, w) = (s.rows, s.cols);
        let (v, u) = ((kernel.kh / 2) as isize, (kernel.kw / 2) as isize);
        let out_shape = Shape::image(kernel.out_channels, h, w);
        let mut out = vec![0.0; out_shape.len()];
        let xv = self.value(x);
        for o in 0..kernel.out_channels {
            let plane = &mut out[o * h * w..(o + 1) * h * w];
            plane.iter_mut().for_each(|p| *p = kernel.bias[o]);
            for i in 0..kernel.in_channels {
                let xp = &xv[i * h * w..(i + 1) * h * w];
                for m in 0..kernel.kh {
                    let dm = m as isize - v;
                    for n in 0..kernel.kw {
                        let dn = n as isize - u;
                        let k = kernel.w(o, i, m, n);
                        if k == 0.0 {
                            continue;
                        }
                        for r in 0..h {
                            let rr = r as isize + dm;
                            if rr < 0 || rr >= h as isize {
                                continue;
                            }
                            let (c_lo, c_hi) = valid_cols(w, dn);
                            let src = rr as usize * w;
                            for c in c_lo..c_hi {
                                plane[r * w + c] += k * xp[src + (c as isize + dn) as usize];
                            }
                        }
                    }
                }
            }
        }
        Ok(self.push(
            out_shape,
            out,
            Op::Conv2d {
                x,
                kernel: kernel.clone(),
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let shape = self.shape(x);
        self.push(shape, out, Op::Relu { x })
    }

    /// 2x2 non-overlapping max pooling.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.rows % 2 != 0 || s.cols % 2 != 0 {
            return Err(Error::Shape(format!(
                "maxpool2 needs even extents, got {}x{}",
                s.rows, s.cols
            )));
        }
        let out_shape = Shape::image(s.channels, s.rows / 2, s.cols / 2);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(out_shape.len());
        let mut argmax = Vec::with_capacity(out_shape.len());
        for ch in 0..s.channels {
            let base = ch * s.plane();
            for r in 0..out_shape.rows {
                for c in 0..out_shape.cols {
                    let mut best = base + 2 * r * s.cols + 2 * c;
                    for (dr, dc) in [(0, 1), (1, 0), (1, 1)] {
                        let k = base + (2 * r + dr) * s.cols + 2 * c + dc;
                        // Strict comparison: ties keep the earlier row-major cell.
                        if xv[k] > xv[best] {
                            best = k;
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(self.push(out_shape, out, Op::MaxPool2 { x, argmax }))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let out_shape = Shape::image(s.channels, s.rows * 2, s.cols * 2);
        let xv = self.value(x);
        let mut out = Vec::with_capacity(out_shape.len());
        for ch in 0..s.channels {
            for r in 0..out_shape.rows {
                for c in 0..out_shape.cols {
                    out.push(xv[ch * s.plane() + (r / 2) * s.cols + c / 2]);
                }
            }
        }
        self.push(out_shape, out, Op::Upsample2 { x })
    }

    /// `(C, H, W)` image to an `(H*W) x C` token matrix.
    pub fn to_tokens(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let n = s.plane();
        let xv = self.value(x);
        let mut out = vec![0.0; s.len()];
        for ch in 0..s.channels {
            for i in 0..n {
                out[i * s.channels + ch] = xv[ch * n + i];
            }
        }
        self.push(Shape::matrix(n, s.channels), out, Op::ToTokens { x })
    }

    /// Token matrix back to a `(d, rows, cols)` image.
    pub fn to_image(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.channels != 1 || s.rows != rows * cols {
            return Err(Error::Shape(format!(
                "cannot fold {} tokens into a {rows}x{cols} image",
                s.rows
            )));
        }
        let d = s.cols;
        let n = s.rows;
        let xv = self.value(x);
        let mut out = vec![0.0; s.len()];
        for i in 0..n {
            for ch in 0..d {
                out[ch * n + i] = xv[i * d + ch];
            }
        }
        Ok(self.push(Shape::image(d, rows, cols), out, Op::ToImage { x }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a @ b^T`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (bk, bm) = if transpose_b {
            (sb.cols, sb.rows)
        } else {
            (sb.rows, sb.cols)
        };
        if sa.channels != 1 || sb.channels != 1 || sa.cols != bk {
            return Err(Error::Shape(format!("matmul mismatch: {sa:?} x {sb:?}")));
        }
        let (n, k, m) = (sa.rows, sa.cols, bm);
        let mut out = vec![0.0; n * m];
        if transpose_b {
            let bt = Mat {
                rows: sb.rows,
                cols: sb.cols,
                data: self.value(b).to_vec(),
            }
            .transpose();
            matmul_into(self.value(a), &bt.data, &mut out, n, k, m);
        } else {
            matmul_into(self.value(a), self.value(b), &mut out, n, k, m);
        }
        Ok(self.push(Shape::matrix(n, m), out, Op::MatMul { a, b, transpose_b }))
    }

    /// Adds a bias row vector (a leaf of shape `1 x cols`) to every row.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != sx.cols || sx.channels != 1 {
            return Err(Error::Shape("bias length must equal matrix columns".into()));
        }
        let bv = self.value(bias).to_vec();
        let out = self
            .value(x)
            .chunks(sx.cols)
            .flat_map(|row| row.iter().zip(&bv).map(|(a, b)| a + b))
            .collect();
        Ok(self.push(sx, out, Op::AddRowBias { x, bias }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.channels != 1 {
            return Err(Error::Shape("softmax_rows expects a matrix".into()));
        }
        let a = softmax_rows(&Mat {
            rows: s.rows,
            cols: s.cols,
            data: self.value(x).to_vec(),
        });
        Ok(self.push(s, a.data, Op::SoftmaxRows { x }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let s = self.shape(a);
        Ok(self.push(s, out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let s = self.shape(a);
        Ok(self.push(s, out, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * k).collect();
        let s = self.shape(x);
        self.push(s, out, Op::Scale { x, k })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).iter().sum();
        self.push(Shape::SCALAR, vec![total], Op::Sum { x })
    }

    /// Scalar mean of one channel over a box.
    pub fn roi_mean(&mut self, x: Var, channel: usize, roi: &RoiBox) -> Result<Var> {
        let s = self.shape(x);
        if channel >= s.channels {
            return Err(Error::Channel {
                channel,
                channels: s.channels,
            });
        }
        if roi.row_max >= s.rows || roi.col_max >= s.cols {
            return Err(Error::OutOfBounds {
                what: "roi",
                height: s.rows,
                width: s.cols,
            });
        }
        let xv = self.value(x);
        let base = channel * s.plane();
        let mut total = 0.0;
        for r in roi.row_min..=roi.row_max {
            for c in roi.col_min..=roi.col_max {
                total += xv[base + r * s.cols + c];
            }
        }
        let mean = total / roi.len() as f64;
        Ok(self.push(
            Shape::SCALAR,
            vec![mean],
            Op::RoiMean {
                x,
                channel,
                roi: *roi,
            },
        ))
    }

    /// Scaled dot-product attention assembled from tape primitives:
    /// `softmax(x Wq (x Wk)^T / sqrt(dk)) x Wv`.
    pub fn attention(&mut self, x: Var, w: &AttentionWeights) -> Result<Var> {
        let wq = self.matrix_leaf(&w.wq);
        let wk = self.matrix_leaf(&w.wk);
        let wv = self.matrix_leaf(&w.wv);
        let q = self.matmul(x, wq)?;
        let k = self.matmul(x, wk)?;
        let v = self.matmul(x, wv)?;
        let s = self.matmul_t(q, k)?;
        let s = self.scale(s, w.scale());
        let a = self.softmax_rows(s)?;
        self.matmul(a, v)
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    /// ReLU gate states and max-pool winners recorded so far, in tape order.
    pub fn activation_pattern(&self) -> ActivationPattern {
        let mut pattern = ActivationPattern::default();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => pattern
                    .relu_gates
                    .extend(self.value(*x).iter().map(|&v| v > 0.0)),
                Op::MaxPool2 { argmax, .. } => pattern.pool_winners.extend_from_slice(argmax),
                _ => {}
            }
        }
        pattern
    }

    /// Reverse sweep from a scalar `target`.
    pub fn backward(&self, target: Var) -> Result<Gradients> {
        let len = self.nodes[target.0].value.len();
        if len != 1 {
            return Err(Error::NotScalar { len });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; target.0 + 1];
        grads[target.0] = Some(vec![1.0]);

        for id in (0..=target.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, kernel } => {
                    let s = self.shape(*x);
                    let (h, w) = (s.rows, s.cols);
                    let (v, u) = ((kernel.kh / 2) as isize, (kernel.kw / 2) as isize);
                    let gx = slot(&mut grads, *x, s.len());
                    for o in 0..kernel.out_channels {
                        let gp = &g[o * h * w..(o + 1) * h * w];
                        for i in 0..kernel.in_channels {
                            let gxi = &mut gx[i * h * w..(i + 1) * h * w];
                            for m in 0..kernel.kh {
                                let dm = m as isize - v;
                                for n in 0..kernel.kw {
                                    let dn = n as isize - u;
                                    let k = kernel.w(o, i, m, n);
                                    if k == 0.0 {
                                        continue;
                                    }
                                    for r in 0..h {
                                        let rr = r as isize + dm;
                                        if rr < 0 || rr >= h as isize {
                                            continue;
                                        }
                                        let (c_lo, c_hi) = valid_cols(w, dn);
                                        let dst = rr as usize * w;
                                        for c in c_lo..c_hi {
                                            gxi[dst + (c as isize + dn) as usize] +=
                                                k * gp[r * w + c];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let gx = slot(&mut grads, *x, xv.len());
                    for ((gi, &xi), &gu) in gx.iter_mut().zip(xv).zip(&g) {
                        if xi > 0.0 {
                            *gi += gu;
                        }
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    let gx = slot(&mut grads, *x, self.shape(*x).len());
                    for (&k, &gu) in argmax.iter().zip(&g) {
                        gx[k] += gu;
                    }
                }
                Op::Upsample2 { x } => {
                    let s = self.shape(*x);
                    let so = node.shape;
                    let gx = slot(&mut grads, *x, s.len());
                    for ch in 0..so.channels {
                        for r in 0..so.rows {
                            for c in 0..so.cols {
                                gx[ch * s.plane() + (r / 2) * s.cols + c / 2] +=
                                    g[ch * so.plane() + r * so.cols + c];
                            }
                        }
                    }
                }
                Op::ToTokens { x } => {
                    let s = self.shape(*x);
                    let n = s.plane();
                    let gx = slot(&mut grads, *x, s.len());
                    for ch in 0..s.channels {
                        for i in 0..n {
                            gx[ch * n + i] += g[i * s.channels + ch];
                        }
                    }
                }
                Op::ToImage { x } => {
                    let s = self.shape(*x);
                    let (n, d) = (s.rows, s.cols);
                    let gx = slot(&mut grads, *x, s.len());
                    for i in 0..n {
                        for ch in 0..d {
                            gx[i * d + ch] += g[ch * n + i];
                        }
                    }
                }
                Op::MatMul { a, b, transpose_b } => {
                    let (sa, sb) = (self.shape(*a), self.shape(*b));
                    let (n, k) = (sa.rows, sa.cols);
                    let m = node.shape.cols;
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    // Effective right operand B' is k x m.
                    let b_eff: Vec<f64> = if *transpose_b {
                        Mat {
                            rows: sb.rows,
                            cols: sb.cols,
                            data: bv.to_vec(),
                        }
                        .transpose()
                        .data
                    } else {
                        bv.to_vec()
                    };
                    // dA = G B'^T  (n x k)
                    let mut da = vec![0.0; n * k];
                    let b_eff_t = Mat {
                        rows: k,
                        cols: m,
                        data: b_eff,
                    }
                    .transpose();
                    matmul_into(&g, &b_eff_t.data, &mut da, n, m, k);
                    // dB' = A^T G  (k x m)
                    let at = Mat {
                        rows: n,
                        cols: k,
                        data: av.to_vec(),
                    }
                    .transpose();
                    let mut db_eff = vec![0.0; k * m];
                    matmul_into(&at.data, &g, &mut db_eff, k, n, m);
                    let db = if *transpose_b {
                        Mat {
                            rows: k,
                            cols: m,
                            data: db_eff,
                        }
                        .transpose()
                        .data
                    } else {
                        db_eff
                    };
                    accumulate(slot(&mut grads, *a, sa.len()), &da);
                    accumulate(slot(&mut grads, *b, sb.len()), &db);
                }
                Op::AddRowBias { x, bias } => {
                    let cols = node.shape.cols;
                    accumulate(slot(&mut grads, *x, g.len()), &g);
                    let gb = slot(&mut grads, *bias, cols);
                    for row in g.chunks(cols) {
                        accumulate(gb, row);
                    }
                }
                Op::SoftmaxRows { x } => {
                    let s = node.shape;
                    let a = &node.value;
                    let gx = slot(&mut grads, *x, s.len());
                    for r in 0..s.rows {
                        let ar = &a[r * s.cols..(r + 1) * s.cols];
                        let gr = &g[r * s.cols..(r + 1) * s.cols];
                        let dot: f64 = ar.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..s.cols {
                            gx[r * s.cols + c] += ar[c] * (gr[c] - dot);
                        }
                    }
                }
                Op::Add { a, b } => {
                    accumulate(slot(&mut grads, *a, g.len()), &g);
                    accumulate(slot(&mut grads, *b, g.len()), &g);
                }
                Op::Mul { a, b } => {
                    let av = self.value(*a).to_vec();
                    let bv = self.value(*b).to_vec();
                    let ga: Vec<f64> = g.iter().zip(&bv).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(&av).map(|(x, y)| x * y).collect();
                    accumulate(slot(&mut grads, *a, g.len()), &ga);
                    accumulate(slot(&mut grads, *b, g.len()), &gb);
                }
                Op::Scale { x, k } => {
                    let gx = slot(&mut grads, *x, g.len());
                    for (gi, gu) in gx.iter_mut().zip(&g) {
                        *gi += k * gu;
                    }
                }
                Op::Sum { x } => {
                    let gx = slot(&mut grads, *x, self.shape(*x).len());
                    gx.iter_mut().for_each(|gi| *gi += g[0]);
                }
                Op::RoiMean { x, channel, roi } => {
                    let s = self.shape(*x);
                    let gx = slot(&mut grads, *x, s.len());
                    let share = g[0] / roi.len() as f64;
                    let base = channel * s.plane();
                    for r in roi.row_min..=roi.row_max {
                        for c in roi.col_min..=roi.col_max {
                            gx[base + r * s.cols + c] += share;
                        }
                    }
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Column range `[lo, hi)` of outputs whose source column `c + dn` is inside `[0, w)`.
#[inline]
fn valid_cols(w: usize, dn: isize) -> (usize, usize) {
    let lo = if dn < 0 { (-dn) as usize } else { 0 };
    let hi = if dn > 0 {
        w.saturating_sub(dn as usize)
    } else {
        w
    };
    (lo.min(w), hi)
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients of a scalar target with respect to the tape's leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the target with respect to leaf `v`; `None` if the target
    /// does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to `v`, zero-filled if unreached.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tape.shape(v).len()])
    }
}

/// Discrete routing state of a forward pass: which ReLUs are open and which
/// cell won each max-pool window. Two inputs with equal patterns lie in the
/// same linear region of the piecewise-smooth network.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActivationPattern {
    pub relu_gates: Vec<bool>,
    pub pool_winners: Vec<usize>,
}

impl ActivationPattern {
    /// `(relu gates flipped, pool winners switched)` relative to `other`.
    pub fn flips(&self, other: &ActivationPattern) -> (usize, usize) {
        let gates = self
            .relu_gates
            .iter()
            .zip(&other.relu_gates)
            .filter(|(a, b)| a != b)
            .count();
        let winners = self
            .pool_winners
            .iter()
            .zip(&other.pool_winners)
            .filter(|(a, b)| a != b)
            .count();
        (gates, winners)
    }
}
