//! Dilated, strided 2-D convolution with mirror padding, lowered to GEMM.
//!
//! The padding is `d * (k - 1) / 2` on every side and reflects without
//! repeating the edge pixel, so output pixel `(oy, ox)` is centred on input
//! pixel `(oy * s, ox * s)` and the output extent is `ceil(H / s)`.

use crate::error::{invalid_arg, Result};
use crate::tensor::{Real, Tensor};

/// Reflects an index into `0..n` without repeating the border sample.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    debug_assert!((0..n).contains(&r), "reflection out of range");
    r as usize
}

/// Precomputed tap-to-source index tables for one input geometry.
#[derive(Clone, Debug)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
    /// `rows[ky * out_height + oy]` is the source row of tap `ky` at output row `oy`.
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl ConvGeometry {
    pub fn new(
        in_channels: usize,
        height: usize,
        width: usize,
        kernel: usize,
        dilation: usize,
        stride: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) || kernel == 0 {
            return Err(invalid_arg!("kernel size must be odd, got {kernel}"));
        }
        if dilation == 0 || stride == 0 {
            return Err(invalid_arg!("dilation and stride must be positive"));
        }
        let pad = dilation * (kernel - 1) / 2;
        if pad >= height || pad >= width {
            return Err(invalid_arg!(
                "mirror padding {pad} is too wide for a {height}x{width} input"
            ));
        }
        let out_height = height.div_ceil(stride);
        let out_width = width.div_ceil(stride);
        let table = |n: usize, out: usize| {
            let mut t = Vec::with_capacity(kernel * out);
            for tap in 0..kernel {
                let offset = (tap as isize - (kernel / 2) as isize) * dilation as isize;
                for o in 0..out {
                    t.push(reflect((o * stride) as isize + offset, n));
                }
            }
            t
        };
        Ok(Self {
            in_channels,
            height,
            width,
            kernel,
            dilation,
            stride,
            out_height,
            out_width,
            rows: table(height, out_height),
            cols: table(width, out_width),
        })
    }

    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    fn col_rows(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    /// Gathers one sample `[Cin, H, W]` into the `[Cin*k*k, Ho*Wo]` patch matrix.
    fn im2col<T: Real>(&self, x: &[T], col: &mut [T]) {
        let (k, ho, wo) = (self.kernel, self.out_height, self.out_width);
        let plane = self.height * self.width;
        let mut dst = col.chunks_exact_mut(ho * wo);
        for c in 0..self.in_channels {
            let src = &x[c * plane..(c + 1) * plane];
            for ky in 0..k {
                let rows = &self.rows[ky * ho..(ky + 1) * ho];
                for kx in 0..k {
                    let cols = &self.cols[kx * wo..(kx + 1) * wo];
                    let out = dst.next().expect("col buffer sized for taps");
                    for (oy, &ry) in rows.iter().enumerate() {
                        let line = &src[ry * self.width..(ry + 1) * self.width];
                        let o = &mut out[oy * wo..(oy + 1) * wo];
                        for (v, &rx) in o.iter_mut().zip(cols) {
                            *v = line[rx];
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a patch-matrix gradient back onto one sample's input gradient.
    fn col2im<T: Real>(&self, col: &[T], dx: &mut [T]) {
        let (k, ho, wo) = (self.kernel, self.out_height, self.out_width);
        let plane = self.height * self.width;
        let mut src = col.chunks_exact(ho * wo);
        for c in 0..self.in_channels {
            let dst = &mut dx[c * plane..(c + 1) * plane];
            for ky in 0..k {
                let rows = &self.rows[ky * ho..(ky + 1) * ho];
                for kx in 0..k {
                    let cols = &self.cols[kx * wo..(kx + 1) * wo];
                    let g = src.next().expect("col buffer sized for taps");
                    for (oy, &ry) in rows.iter().enumerate() {
                        let line = &mut dst[ry * self.width..(ry + 1) * self.width];
                        for (&v, &rx) in g[oy * wo..(oy + 1) * wo].iter().zip(cols) {
                            line[rx] += v;
                        }
                    }
                }
            }
        }
    }
}

fn check_shapes<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<([usize; 4], [usize; 4])> {
    let x = input.dims4()?;
    let w = kernel.dims4()?;
    if w[2] != w[3] {
        return Err(invalid_arg!("kernel must be square, got {:?}", kernel.shape()));
    }
    if w[1] != x[1] {
        return Err(invalid_arg!(
            "input has {} channels but kernel expects {}",
            x[1],
            w[1]
        ));
    }
    if bias.shape() != [w[0]] {
        return Err(invalid_arg!(
            "bias shape {:?} does not match {} output channels",
            bias.shape(),
            w[0]
        ));
    }
    Ok((x, w))
}

pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    dilation: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let ([batch, cin, h, w], [cout, _, k, _]) = check_shapes(input, kernel, bias)?;
    let geo = ConvGeometry::new(cin, h, w, k, dilation, stride)?;
    let (ck, p) = (geo.col_rows(), geo.out_pixels());
    let mut col = vec![T::zero(); ck * p];
    let mut out = Vec::with_capacity(batch * cout * p);
    let sample = cin * h * w;
    for b in 0..batch {
        geo.im2col(&input.data()[b * sample..(b + 1) * sample], &mut col);
        let start = out.len();
        for &bv in bias.data() {
            out.extend(std::iter::repeat_n(bv, p));
        }
        T::gemm(
            cout,
            ck,
            p,
            T::one(),
            kernel.data(),
            (ck as isize, 1),
            &col,
            (p as isize, 1),
            T::one(),
            &mut out[start..],
            (p as isize, 1),
        );
    }
    Tensor::new(&[batch, cout, geo.out_height, geo.out_width], out)
}

/// Gradients of a convolution. `None` entries were not requested.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    dilation: usize,
    stride: usize,
    grad_out: &Tensor<T>,
    want: [bool; 3],
) -> Result<ConvGrads<T>> {
    let ([batch, cin, h, w], [cout, _, k, _]) = check_shapes(input, kernel, bias)?;
    let geo = ConvGeometry::new(cin, h, w, k, dilation, stride)?;
    let (ck, p) = (geo.col_rows(), geo.out_pixels());
    if grad_out.shape() != [batch, cout, geo.out_height, geo.out_width] {
        return Err(invalid_arg!(
            "output gradient shape {:?} does not match convolution output",
            grad_out.shape()
        ));
    }
    let [want_x, want_w, want_b] = want;
    let sample = cin * h * w;
    let mut col = vec![T::zero(); ck * p];
    let mut dcol = if want_x { vec![T::zero(); ck * p] } else { Vec::new() };
    let mut dx = want_x.then(|| vec![T::zero(); input.numel()]);
    let mut dw = want_w.then(|| vec![T::zero(); kernel.numel()]);
    let mut db = want_b.then(|| vec![T::zero(); cout]);

    for b in 0..batch {
        let gy = &grad_out.data()[b * cout * p..(b + 1) * cout * p];
        if let Some(db) = db.as_mut() {
            for (acc, row) in db.iter_mut().zip(gy.chunks_exact(p)) {
                *acc += row.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = dw.as_mut() {
            geo.im2col(&input.data()[b * sample..(b + 1) * sample], &mut col);
            // dW[cout, ck] += dY[cout, p] * col^T[p, ck]
            T::gemm(
                cout,
                p,
                ck,
                T::one(),
                gy,
                (p as isize, 1),
                &col,
                (1, p as isize),
                T::one(),
                dw,
                (ck as isize, 1),
            );
        }
        if let Some(dx) = dx.as_mut() {
            // dcol[ck, p] = W^T[ck, cout] * dY[cout, p]
            T::gemm(
                ck,
                cout,
                p,
                T::one(),
                kernel.data(),
                (1, ck as isize),
                gy,
                (p as isize, 1),
                T::zero(),
                &mut dcol,
                (p as isize, 1),
            );
            geo.col2im(&dcol, &mut dx[b * sample..(b + 1) * sample]);
        }
    }
    Ok(ConvGrads {
        input: dx.map(|d| Tensor::new(input.shape(), d)).transpose()?,
        kernel: dw.map(|d| Tensor::new(kernel.shape(), d)).transpose()?,
        bias: db.map(|d| Tensor::new(bias.shape(), d)).transpose()?,
    })
}
