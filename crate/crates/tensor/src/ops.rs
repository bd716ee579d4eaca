//! Forward kernels and their vector-Jacobian products.
//!
//! Every function here is a pure function of its tensor arguments; the tape in
//! [`crate::graph`] decides which of them to call and where gradients go.

use crate::error::{config_err, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub dilation: usize,
    pub stride: usize,
    /// Zero padding applied to every side.
    pub padding: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1, padding chosen so the spatial extent is preserved.
    pub fn same(in_channels: usize, out_channels: usize, kernel: usize, dilation: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            dilation,
            stride: 1,
            padding: dilation * (kernel - 1) / 2,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    /// Output extent along one axis, or `None` when the window does not fit.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            self.output_extent(h, self.kernel.0)?,
            self.output_extent(w, self.kernel.1)?,
        ))
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return config_err(op, "channel counts must be positive");
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.dilation == 0 || self.stride == 0 {
            return config_err(
                op,
                format!("kernel, dilation and stride must be positive: {self:?}"),
            );
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => {
                if v > T::zero() {
                    v
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => {
                // Kept strictly inside (0, 1): saturated inputs would otherwise round to 0 or 1.
                let s = T::one() / (T::one() + (-v).exp());
                let hi = T::one() - T::epsilon() / (T::one() + T::one());
                s.max(T::min_positive_value()).min(hi)
            }
            Activation::Linear => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Mul,
    Add,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    None,
    /// `b` is `[B, C]` and is spread over the spatial positions of `a: [B, C, H, W]`.
    ChannelScalar,
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, zero padding) via im2col + GEMM.

struct ConvGeom {
    b: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    dilation: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn n(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Range of output columns whose tap `kx` lands inside the input row.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let off = (kx * self.dilation) as isize - self.pad as isize;
        let s = self.stride as isize;
        // smallest ox with ox*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest ox with ox*s + off <= w - 1
        let hi_num = self.w as isize - 1 - off;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.min(self.wo as isize) as usize;
        let hi = (hi + 1).clamp(0, self.wo as isize) as usize;
        (lo, hi.max(lo))
    }
}

fn conv_geom<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGeom> {
    const OP: &str = "conv2d";
    spec.validate(OP)?;
    let [bn, cin, h, wd] = x.dims4(OP)?;
    if cin != spec.in_channels {
        return shape_err(
            OP,
            format!(
                "input has {cin} channels, spec expects {}",
                spec.in_channels
            ),
        );
    }
    let ws = spec.weight_shape();
    if w.shape() != ws {
        return shape_err(
            OP,
            format!("weights shaped {:?}, spec expects {ws:?}", w.shape()),
        );
    }
    if b.shape() != [spec.out_channels] {
        return shape_err(
            OP,
            format!(
                "bias shaped {:?}, spec expects [{}]",
                b.shape(),
                spec.out_channels
            ),
        );
    }
    let Some((ho, wo)) = spec.output_hw(h, wd) else {
        return shape_err(OP, format!("input extent {h}x{wd} too small for {spec:?}"));
    };
    Ok(ConvGeom {
        b: bn,
        cin,
        h,
        w: wd,
        cout: spec.out_channels,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        ho,
        wo,
        dilation: spec.dilation,
        stride: spec.stride,
        pad: spec.padding,
    })
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let n = g.n();
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                let (lo, hi) = g.valid_cols(kx);
                let xoff = (kx * g.dilation) as isize - g.pad as isize;
                for oy in 0..g.ho {
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(T::zero());
                    out_row[hi..].fill(T::zero());
                    if g.stride == 1 {
                        let start = (lo as isize + xoff) as usize;
                        out_row[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (ox, o) in out_row.iter_mut().enumerate().take(hi).skip(lo) {
                            *o = src[(ox as isize * g.stride as isize + xoff) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let n = g.n();
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * n..(row + 1) * n];
                let (lo, hi) = g.valid_cols(kx);
                let xoff = (kx * g.dilation) as isize - g.pad as isize;
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky * g.dilation) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let s_row = &src[oy * g.wo..(oy + 1) * g.wo];
                    for ox in lo..hi {
                        dst[(ox as isize * g.stride as isize + xoff) as usize] += s_row[ox];
                    }
                }
            }
        }
    }
}

pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = conv_geom(x, w, bias, spec)?;
    let (k, n) = (g.k(), g.n());
    let mut out = Tensor::zeros(&[g.b, g.cout, g.ho, g.wo]);
    let mut col = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * n]
    };
    let in_per = g.cin * g.h * g.w;
    for bi in 0..g.b {
        let xb = &x.data()[bi * in_per..(bi + 1) * in_per];
        let ob = &mut out.data_mut()[bi * g.cout * n..(bi + 1) * g.cout * n];
        for (co, plane) in ob.chunks_mut(n).enumerate() {
            plane.fill(bias.data()[co]);
        }
        let cols: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(&g, xb, &mut col);
            &col
        };
        T::gemm(
            g.cout,
            k,
            n,
            T::one(),
            w.data(),
            (k as isize, 1),
            cols,
            (n as isize, 1),
            T::one(),
            ob,
            (n as isize, 1),
        );
    }
    Ok(out)
}

/// Gradients of [`conv2d`] with respect to (input, weights, bias).
///
/// The input gradient is only formed when `need_input` is set.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
    dout: &Tensor<T>,
    need_input: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let g = conv_geom(x, w, bias, spec)?;
    let (k, n) = (g.k(), g.n());
    if dout.shape() != [g.b, g.cout, g.ho, g.wo] {
        return shape_err(
            "conv2d_backward",
            format!("upstream gradient shaped {:?}", dout.shape()),
        );
    }
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(bias.shape());
    let mut dx = need_input.then(|| Tensor::zeros(x.shape()));
    let pointwise = g.is_pointwise();
    let mut col = if pointwise {
        Vec::new()
    } else {
        vec![T::zero(); k * n]
    };
    let mut dcol = if need_input && !pointwise {
        vec![T::zero(); k * n]
    } else {
        Vec::new()
    };
    let in_per = g.cin * g.h * g.w;
    for bi in 0..g.b {
        let xb = &x.data()[bi * in_per..(bi + 1) * in_per];
        let gb = &dout.data()[bi * g.cout * n..(bi + 1) * g.cout * n];
        for (co, plane) in gb.chunks(n).enumerate() {
            db.data_mut()[co] += plane.iter().copied().sum();
        }
        let cols: &[T] = if pointwise {
            xb
        } else {
            im2col(&g, xb, &mut col);
            &col
        };
        // dW += dOut (cout x n) * cols^T (n x k)
        T::gemm(
            g.cout,
            n,
            k,
            T::one(),
            gb,
            (n as isize, 1),
            cols,
            (1, n as isize),
            T::one(),
            dw.data_mut(),
            (k as isize, 1),
        );
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx.data_mut()[bi * in_per..(bi + 1) * in_per];
            if pointwise {
                // dX += W^T (k x cout) * dOut (cout x n)
                T::gemm(
                    k,
                    g.cout,
                    n,
                    T::one(),
                    w.data(),
                    (1, k as isize),
                    gb,
                    (n as isize, 1),
                    T::one(),
                    dxb,
                    (n as isize, 1),
                );
            } else {
                T::gemm(
                    k,
                    g.cout,
                    n,
                    T::one(),
                    w.data(),
                    (1, k as isize),
                    gb,
                    (n as isize, 1),
                    T::zero(),
                    &mut dcol,
                    (n as isize, 1),
                );
                col2im_add(&g, &dcol, dxb);
            }
        }
    }
    Ok((dx, dw, db))
}

// ---------------------------------------------------------------------------
// Pooling and rearrangement.

/// 2x2 / stride-2 max pooling.
///
/// Odd extents are handled by replicating the last row/column, so the output
/// is `ceil(H/2) x ceil(W/2)`. Returns the pooled tensor and, per output
/// element, the flat index of the input element that won (first in row-major
/// window order on ties).
pub fn max_pool2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let [b, c, h, w] = x.dims4("max_pool2")?;
    if h == 0 || w == 0 {
        return shape_err("max_pool2", "empty spatial extent");
    }
    let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor::zeros(&[b, c, ho, wo]);
    let mut arg = vec![0usize; b * c * ho * wo];
    let xd = x.data();
    for p in 0..b * c {
        let base = p * h * w;
        for oy in 0..ho {
            let rows = [2 * oy, (2 * oy + 1).min(h - 1)];
            for ox in 0..wo {
                let cols = [2 * ox, (2 * ox + 1).min(w - 1)];
                let mut best = base + rows[0] * w + cols[0];
                for &iy in &rows {
                    for &ix in &cols {
                        let idx = base + iy * w + ix;
                        if xd[idx] > xd[best] {
                            best = idx;
                        }
                    }
                }
                let o = (p * ho + oy) * wo + ox;
                out.data_mut()[o] = xd[best];
                arg[o] = best;
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool2_backward<T: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    dout: &Tensor<T>,
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    for (&src, &g) in argmax.iter().zip(dout.data()) {
        dx.data_mut()[src] += g;
    }
    dx
}

/// Sub-pixel rearrangement `[B, C*r*r, H, W] -> [B, C, r*H, r*W]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [b, crr, h, w] = x.dims4("pixel_shuffle")?;
    if r == 0 {
        return config_err("pixel_shuffle", "upscale factor must be positive");
    }
    if crr % (r * r) != 0 {
        return config_err(
            "pixel_shuffle",
            format!("{crr} channels not divisible by r^2 = {}", r * r),
        );
    }
    let c = crr / (r * r);
    let (ho, wo) = (h * r, w * r);
    let mut out = Tensor::zeros(&[b, c, ho, wo]);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let src_plane = ((bi * crr) + ci * r * r + dy * r + dx) * h * w;
                    let dst_plane = (bi * c + ci) * ho * wo;
                    for y in 0..h {
                        let dst_row = dst_plane + (r * y + dy) * wo + dx;
                        for xx in 0..w {
                            od[dst_row + r * xx] = xd[src_plane + y * w + xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pixel_shuffle`]: `[B, C, r*H, r*W] -> [B, C*r*r, H, W]`.
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let [b, c, ho, wo] = x.dims4("pixel_unshuffle")?;
    if r == 0 || ho % r != 0 || wo % r != 0 {
        return config_err(
            "pixel_unshuffle",
            format!("extent {ho}x{wo} not divisible by r = {r}"),
        );
    }
    let (h, w) = (ho / r, wo / r);
    let crr = c * r * r;
    let mut out = Tensor::zeros(&[b, crr, h, w]);
    let xd = x.data();
    let od = out.data_mut();
    for bi in 0..b {
        for ci in 0..c {
            for dy in 0..r {
                for dx in 0..r {
                    let dst_plane = ((bi * crr) + ci * r * r + dy * r + dx) * h * w;
                    let src_plane = (bi * c + ci) * ho * wo;
                    for y in 0..h {
                        let src_row = src_plane + (r * y + dy) * wo + dx;
                        for xx in 0..w {
                            od[dst_plane + y * w + xx] = xd[src_row + r * xx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, c, h, w] = x.dims4("global_avg_pool")?;
    let hw = h * w;
    if hw == 0 {
        return shape_err("global_avg_pool", "empty spatial extent");
    }
    let inv = T::one() / T::from_usize(hw).unwrap();
    let data = x
        .data()
        .chunks(hw)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new(&[b, c], data)
}

pub fn global_avg_pool_backward<T: Scalar>(input_shape: &[usize], dout: &Tensor<T>) -> Tensor<T> {
    let hw = input_shape[2] * input_shape[3];
    let inv = T::one() / T::from_usize(hw).unwrap();
    let mut dx = Tensor::zeros(input_shape);
    for (plane, &g) in dx.data_mut().chunks_mut(hw).zip(dout.data()) {
        plane.fill(g * inv);
    }
    dx
}

// ---------------------------------------------------------------------------
// Dense, activations, elementwise, concatenation.

/// `x[B, N] * w[N, M] + bias[M]`.
pub fn dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let [b, n] = x.dims2("dense")?;
    let [wn, m] = w.dims2("dense")?;
    if wn != n || bias.shape() != [m] {
        return shape_err(
            "dense",
            format!(
                "input {:?}, weights {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                bias.shape()
            ),
        );
    }
    let mut out = Tensor::zeros(&[b, m]);
    for row in out.data_mut().chunks_mut(m) {
        row.copy_from_slice(bias.data());
    }
    T::gemm(
        b,
        n,
        m,
        T::one(),
        x.data(),
        (n as isize, 1),
        w.data(),
        (m as isize, 1),
        T::one(),
        out.data_mut(),
        (m as isize, 1),
    );
    Ok(out)
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let (b, n) = (x.shape()[0], x.shape()[1]);
    let m = w.shape()[1];
    let mut dw = Tensor::zeros(w.shape());
    // dW = x^T (n x b) * dout (b x m)
    T::gemm(
        n,
        b,
        m,
        T::one(),
        x.data(),
        (1, n as isize),
        dout.data(),
        (m as isize, 1),
        T::zero(),
        dw.data_mut(),
        (m as isize, 1),
    );
    let mut db = Tensor::zeros(&[m]);
    for row in dout.data().chunks(m) {
        for (d, &g) in db.data_mut().iter_mut().zip(row) {
            *d += g;
        }
    }
    let dx = need_input.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        // dX = dout (b x m) * W^T (m x n)
        T::gemm(
            b,
            m,
            n,
            T::one(),
            dout.data(),
            (m as isize, 1),
            w.data(),
            (1, m as isize),
            T::zero(),
            dx.data_mut(),
            (n as isize, 1),
        );
        dx
    });
    (dx, dw, db)
}

pub fn activate<T: Scalar>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    match kind {
        Activation::Linear => x.clone(),
        _ => x.map(|v| kind.apply(v)),
    }
}

/// Gradient of an activation given its input `x`, output `y` and upstream `dout`.
pub fn activate_backward<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    kind: Activation,
    dout: &Tensor<T>,
) -> Tensor<T> {
    let data = match kind {
        Activation::Relu => x
            .data()
            .iter()
            .zip(dout.data())
            .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
            .collect(),
        Activation::Sigmoid => y
            .data()
            .iter()
            .zip(dout.data())
            .map(|(&s, &g)| g * s * (T::one() - s))
            .collect(),
        Activation::Linear => dout.data().to_vec(),
    };
    Tensor::new(x.shape(), data).expect("same shape as input")
}

pub fn elementwise<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: BinaryOp,
    broadcast: Broadcast,
) -> Result<Tensor<T>> {
    let f = |x: T, y: T| match op {
        BinaryOp::Mul => x * y,
        BinaryOp::Add => x + y,
    };
    match broadcast {
        Broadcast::None => {
            if a.shape() != b.shape() {
                return shape_err("elementwise", format!("{:?} vs {:?}", a.shape(), b.shape()));
            }
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(a.shape(), data)
        }
        Broadcast::ChannelScalar => {
            let [bn, c, h, w] = a.dims4("elementwise")?;
            if b.shape() != [bn, c] {
                return shape_err(
                    "elementwise",
                    format!("channel scalars {:?} against {:?}", b.shape(), a.shape()),
                );
            }
            let hw = h * w;
            let mut out = a.clone();
            for (plane, &s) in out.data_mut().chunks_mut(hw).zip(b.data()) {
                plane.iter_mut().for_each(|v| *v = f(*v, s));
            }
            Ok(out)
        }
    }
}

/// Gradients of [`elementwise`] with respect to `a` and `b`.
pub fn elementwise_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: BinaryOp,
    broadcast: Broadcast,
    dout: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    match (op, broadcast) {
        (BinaryOp::Add, Broadcast::None) => (dout.clone(), dout.clone()),
        (BinaryOp::Mul, Broadcast::None) => {
            let da = dout
                .data()
                .iter()
                .zip(b.data())
                .map(|(&g, &y)| g * y)
                .collect();
            let db = dout
                .data()
                .iter()
                .zip(a.data())
                .map(|(&g, &x)| g * x)
                .collect();
            (
                Tensor::new(a.shape(), da).unwrap(),
                Tensor::new(b.shape(), db).unwrap(),
            )
        }
        (_, Broadcast::ChannelScalar) => {
            let hw = a.shape()[2] * a.shape()[3];
            let mut da = dout.clone();
            let mut db = Tensor::zeros(b.shape());
            for (i, ((gp, ap), &s)) in dout
                .data()
                .chunks(hw)
                .zip(a.data().chunks(hw))
                .zip(b.data())
                .enumerate()
            {
                match op {
                    BinaryOp::Add => db.data_mut()[i] = gp.iter().copied().sum(),
                    BinaryOp::Mul => {
                        db.data_mut()[i] = gp.iter().zip(ap).map(|(&g, &x)| g * x).sum();
                        da.data_mut()[i * hw..(i + 1) * hw]
                            .iter_mut()
                            .for_each(|v| *v *= s);
                    }
                }
            }
            (da, db)
        }
    }
}

pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = xs.first() else {
        return shape_err("concat_channels", "no inputs");
    };
    let [b, _, h, w] = first.dims4("concat_channels")?;
    let mut total = 0;
    for x in xs {
        let [xb, xc, xh, xw] = x.dims4("concat_channels")?;
        if (xb, xh, xw) != (b, h, w) {
            return shape_err(
                "concat_channels",
                format!("{:?} vs {:?}", x.shape(), first.shape()),
            );
        }
        total += xc;
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(b * total * hw);
    for bi in 0..b {
        for x in xs {
            let per = x.shape()[1] * hw;
            data.extend_from_slice(&x.data()[bi * per..(bi + 1) * per]);
        }
    }
    Tensor::new(&[b, total, h, w], data)
}

/// Splits along the channel axis into pieces of the given channel counts.
pub fn split_channels<T: Scalar>(x: &Tensor<T>, channels: &[usize]) -> Result<Vec<Tensor<T>>> {
    let [b, c, h, w] = x.dims4("split_channels")?;
    if channels.iter().sum::<usize>() != c {
        return shape_err(
            "split_channels",
            format!("{channels:?} does not sum to {c}"),
        );
    }
    let hw = h * w;
    let mut parts: Vec<Vec<T>> = channels
        .iter()
        .map(|&ci| Vec::with_capacity(b * ci * hw))
        .collect();
    for bi in 0..b {
        let mut off = bi * c * hw;
        for (part, &ci) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&x.data()[off..off + ci * hw]);
            off += ci * hw;
        }
    }
    parts
        .into_iter()
        .zip(channels)
        .map(|(d, &ci)| Tensor::new(&[b, ci, h, w], d))
        .collect()
}
