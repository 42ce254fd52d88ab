//! Convolution, activation and pooling kernels with explicit backward passes.
//!
//! Feature maps are channel-major `[channel][row][col]` buffers of `f64`.
//! Convolutions use "same" zero padding (`k / 2`), so only a stride larger
//! than one changes the spatial size. Stride-one convolutions run as one
//! GEMM per kernel tap on a zero-padded copy of the input; strided ones use
//! im2col over bands of output rows followed by a GEMM, which bounds scratch
//! memory for large spectrograms.

/// Negative-side slope of the leaky rectifier used after every convolution.
pub const LEAKY_SLOPE: f64 = 0.1;

/// Upper bound on im2col scratch size, in elements.
const MAX_COLS: usize = 1 << 21;

/// A feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    /// The first `channels` channels as a contiguous slice.
    pub fn prefix(&self, channels: usize) -> &[f64] {
        &self.data[..channels * self.plane_len()]
    }
}

/// Geometry of one convolution layer and the indices of its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub weight: usize,
    pub bias: usize,
}

pub fn out_dim(n: usize, k: usize, stride: usize) -> usize {
    (n + 2 * (k / 2) - k) / stride + 1
}

impl Conv {
    pub fn fan_in(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (out_dim(h, self.k, self.stride), out_dim(w, self.k, self.stride))
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    /// Stride-one layers skip im2col.
    fn is_direct(&self) -> bool {
        self.k > 1 && self.stride == 1
    }

    /// One GEMM per kernel tap on the zero-padded input. Outputs are computed
    /// in the padded row layout (row width `w + 2 * pad`) and cropped.
    fn direct_forward(&self, weight: &[f64], x: &[f64], h: usize, w: usize, y: &mut [f64]) {
        let k = self.k;
        let pad = k / 2;
        let (xp, pw) = pad_planes(x, self.cin, h, w, pad);
        let plane = (h + 2 * pad) * pw;
        let n = h * pw;
        let mut yp = vec![0.0; self.cout * n];
        let tap_stride = k * k;
        for ky in 0..k {
            for kx in 0..k {
                let t = ky * k + kx;
                let shift = ky * pw + kx;
                gemm(self.cout, self.cin, n, &weight[t..], self.cin * tap_stride, tap_stride, &xp[shift..], plane, 1, &mut yp, n, 1, 1.0);
            }
        }
        for co in 0..self.cout {
            for r in 0..h {
                let src = &yp[co * n + r * pw..co * n + r * pw + w];
                for (o, s) in y[(co * h + r) * w..(co * h + r + 1) * w].iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn direct_backward(
        &self,
        weight: &[f64],
        dweight: &mut [f64],
        x: &[f64],
        h: usize,
        w: usize,
        dy: &[f64],
        dx: Option<&mut Vec<f64>>,
    ) {
        let k = self.k;
        let pad = k / 2;
        let (xp, pw) = pad_planes(x, self.cin, h, w, pad);
        let plane = (h + 2 * pad) * pw;
        let n = h * pw;
        // Output gradient in the padded row layout; the extra columns stay zero.
        let mut dyp = vec![0.0; self.cout * n];
        for co in 0..self.cout {
            for r in 0..h {
                dyp[co * n + r * pw..co * n + r * pw + w].copy_from_slice(&dy[(co * h + r) * w..(co * h + r + 1) * w]);
            }
        }
        let tap_stride = k * k;
        let mut dxp = dx.is_some().then(|| vec![0.0; xp.len()]);
        for ky in 0..k {
            for kx in 0..k {
                let t = ky * k + kx;
                let shift = ky * pw + kx;
                gemm(self.cout, n, self.cin, &dyp, n, 1, &xp[shift..], 1, plane, &mut dweight[t..], self.cin * tap_stride, tap_stride, 1.0);
                if let Some(dxp) = dxp.as_mut() {
                    gemm(self.cin, self.cout, n, &weight[t..], tap_stride, self.cin * tap_stride, &dyp, n, 1, &mut dxp[shift..], plane, 1, 1.0);
                }
            }
        }
        if let (Some(dx), Some(dxp)) = (dx, dxp) {
            for ci in 0..self.cin {
                for r in 0..h {
                    let start = ci * plane + (r + pad) * pw + pad;
                    for (d, s) in dx[(ci * h + r) * w..(ci * h + r + 1) * w].iter_mut().zip(&dxp[start..start + w]) {
                        *d += s;
                    }
                }
            }
        }
    }

    fn rows_per_band(&self, wo: usize) -> usize {
        (MAX_COLS / (self.fan_in() * wo).max(1)).max(1)
    }

    /// Fill `cols` with the receptive fields of output rows `r0..r1`.
    fn im2col(&self, x: &[f64], h: usize, w: usize, wo: usize, r0: usize, r1: usize, cols: &mut [f64]) {
        let pad = (self.k / 2) as isize;
        let pc = (r1 - r0) * wo;
        for ci in 0..self.cin {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * pc..(row + 1) * pc];
                    for (ri, r) in (r0..r1).enumerate() {
                        let iy = (r * self.stride + ky) as isize - pad;
                        let out = &mut dst[ri * wo..(ri + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (c, o) in out.iter_mut().enumerate() {
                            let ix = (c * self.stride + kx) as isize - pad;
                            *o = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, dcols: &[f64], h: usize, w: usize, wo: usize, r0: usize, r1: usize, dx: &mut [f64]) {
        let pad = (self.k / 2) as isize;
        let pc = (r1 - r0) * wo;
        for ci in 0..self.cin {
            let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &dcols[row * pc..(row + 1) * pc];
                    for (ri, r) in (r0..r1).enumerate() {
                        let iy = (r * self.stride + ky) as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for (c, &g) in src[ri * wo..(ri + 1) * wo].iter().enumerate() {
                            let ix = (c * self.stride + kx) as isize - pad;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    /// `y = W * x + b` for an input of `cin` channels of size `h x w`.
    pub fn forward(&self, params: &[&[f64]], x: &[f64], h: usize, w: usize) -> Tensor3 {
        debug_assert_eq!(x.len(), self.cin * h * w);
        let (ho, wo) = self.out_hw(h, w);
        let p = ho * wo;
        let weight = params[self.weight];
        let bias = params[self.bias];
        let mut y = Tensor3::zeros(self.cout, ho, wo);
        for (co, plane) in y.data.chunks_exact_mut(p).enumerate() {
            plane.fill(bias[co]);
        }
        let kk = self.fan_in();
        if self.is_pointwise() {
            gemm(self.cout, kk, p, weight, kk, 1, x, p, 1, &mut y.data, p, 1, 1.0);
            return y;
        }
        if self.is_direct() {
            self.direct_forward(weight, x, h, w, &mut y.data);
            return y;
        }
        let band = self.rows_per_band(wo);
        let mut cols = vec![0.0; kk * band.min(ho) * wo];
        let mut r0 = 0;
        while r0 < ho {
            let r1 = (r0 + band).min(ho);
            let pc = (r1 - r0) * wo;
            self.im2col(x, h, w, wo, r0, r1, &mut cols[..kk * pc]);
            gemm(self.cout, kk, pc, weight, kk, 1, &cols[..kk * pc], pc, 1, &mut y.data[r0 * wo..], p, 1, 1.0);
            r0 = r1;
        }
        y
    }

    /// Accumulate parameter gradients for output gradient `dy` and return the
    /// input gradient when `need_dx` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[&[f64]],
        grads: &mut [Vec<f64>],
        x: &[f64],
        h: usize,
        w: usize,
        dy: &[f64],
        need_dx: bool,
    ) -> Option<Vec<f64>> {
        let (ho, wo) = self.out_hw(h, w);
        let p = ho * wo;
        let kk = self.fan_in();
        {
            let db = &mut grads[self.bias];
            for (co, plane) in dy.chunks_exact(p).enumerate() {
                db[co] += plane.iter().sum::<f64>();
            }
        }
        let weight = params[self.weight];
        let mut dx = need_dx.then(|| vec![0.0; self.cin * h * w]);
        if self.is_pointwise() {
            gemm(self.cout, p, kk, dy, p, 1, x, 1, p, &mut grads[self.weight], kk, 1, 1.0);
            if let Some(dx) = dx.as_mut() {
                gemm(kk, self.cout, p, weight, 1, kk, dy, p, 1, dx, p, 1, 1.0);
            }
            return dx;
        }
        if self.is_direct() {
            self.direct_backward(weight, &mut grads[self.weight], x, h, w, dy, dx.as_mut());
            return dx;
        }
        let band = self.rows_per_band(wo);
        let mut cols = vec![0.0; kk * band.min(ho) * wo];
        let mut dcols = if need_dx { vec![0.0; cols.len()] } else { Vec::new() };
        let mut r0 = 0;
        while r0 < ho {
            let r1 = (r0 + band).min(ho);
            let pc = (r1 - r0) * wo;
            let dy_band = &dy[r0 * wo..];
            self.im2col(x, h, w, wo, r0, r1, &mut cols[..kk * pc]);
            gemm(self.cout, pc, kk, dy_band, p, 1, &cols[..kk * pc], 1, pc, &mut grads[self.weight], kk, 1, 1.0);
            if let Some(dx) = dx.as_mut() {
                gemm(kk, self.cout, pc, weight, 1, kk, dy_band, p, 1, &mut dcols[..kk * pc], pc, 1, 0.0);
                self.col2im(&dcols[..kk * pc], h, w, wo, r0, r1, dx);
            }
            r0 = r1;
        }
        dx
    }
}

/// Copy of `c` planes of `h x w` with `pad` zeros on every side; returns the
/// buffer and the padded row width. A few trailing zeros let the last tap of
/// the last channel read whole padded rows.
fn pad_planes(x: &[f64], c: usize, h: usize, w: usize, pad: usize) -> (Vec<f64>, usize) {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0; c * ph * pw + 2 * pad];
    for ci in 0..c {
        for r in 0..h {
            let dst = (ci * ph + r + pad) * pw + pad;
            out[dst..dst + w].copy_from_slice(&x[(ci * h + r) * w..(ci * h + r + 1) * w]);
        }
    }
    (out, pw)
}

/// `C = A * B + beta * C` with explicit row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, csc) < c.len());
    // SAFETY: every index touched by the kernel is bounded by the asserts above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

pub fn leaky_relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
}

/// Multiply `dy` by the rectifier derivative, read off the activation output
/// (the leaky rectifier preserves sign).
pub fn leaky_relu_backward(y: &[f64], dy: &mut [f64]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
