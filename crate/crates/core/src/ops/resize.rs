//! Separable bilinear resampling with the half-pixel (align-corners-false)
//! convention: output index `i` samples input coordinate
//! `(i + 0.5) * in / out - 0.5`, clamped to the valid range.

use crate::error::{invalid_arg, Result};
use crate::tensor::{Real, Tensor};

/// One output sample: the two input taps and their weights.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Tap {
    lo: usize,
    hi: usize,
    w_lo: f64,
    w_hi: f64,
}

fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let w_hi = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap {
                lo,
                hi,
                w_lo: 1.0 - w_hi,
                w_hi,
            }
        })
        .collect()
}

/// Reusable resampling plan between two spatial sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct ResizePlan {
    in_hw: (usize, usize),
    out_hw: (usize, usize),
    rows: Vec<Tap>,
    cols: Vec<Tap>,
}

impl ResizePlan {
    pub fn new(in_hw: (usize, usize), out_hw: (usize, usize)) -> Result<Self> {
        if in_hw.0 == 0 || in_hw.1 == 0 || out_hw.0 == 0 || out_hw.1 == 0 {
            return Err(invalid_arg!("resize extents must be positive"));
        }
        Ok(Self {
            in_hw,
            out_hw,
            rows: axis_taps(in_hw.0, out_hw.0),
            cols: axis_taps(in_hw.1, out_hw.1),
        })
    }

    pub fn output_size(&self) -> (usize, usize) {
        self.out_hw
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, h, w] = x.dims4()?;
        if (h, w) != self.in_hw {
            return Err(invalid_arg!(
                "resize plan expects {:?} input, got {h}x{w}",
                self.in_hw
            ));
        }
        let (oh, ow) = self.out_hw;
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for plane in x.data().chunks_exact(h * w) {
            for ty in &self.rows {
                let (wy0, wy1) = (T::lit(ty.w_lo), T::lit(ty.w_hi));
                let r0 = &plane[ty.lo * w..(ty.lo + 1) * w];
                let r1 = &plane[ty.hi * w..(ty.hi + 1) * w];
                for tx in &self.cols {
                    let (wx0, wx1) = (T::lit(tx.w_lo), T::lit(tx.w_hi));
                    let top = wx0 * r0[tx.lo] + wx1 * r0[tx.hi];
                    let bottom = wx0 * r1[tx.lo] + wx1 * r1[tx.hi];
                    out.push(wy0 * top + wy1 * bottom);
                }
            }
        }
        Tensor::new(&[b, c, oh, ow], out)
    }

    /// Adjoint of [`forward`](Self::forward): scatters output gradients onto the input grid.
    pub fn backward<T: Real>(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, c, oh, ow] = grad_out.dims4()?;
        if (oh, ow) != self.out_hw {
            return Err(invalid_arg!("resize gradient has wrong spatial size"));
        }
        let (h, w) = self.in_hw;
        let mut dx = vec![T::zero(); b * c * h * w];
        for (plane, g) in dx
            .chunks_exact_mut(h * w)
            .zip(grad_out.data().chunks_exact(oh * ow))
        {
            for (ty, grow) in self.rows.iter().zip(g.chunks_exact(ow)) {
                let (wy0, wy1) = (T::lit(ty.w_lo), T::lit(ty.w_hi));
                for (tx, &gv) in self.cols.iter().zip(grow) {
                    let (wx0, wx1) = (T::lit(tx.w_lo), T::lit(tx.w_hi));
                    plane[ty.lo * w + tx.lo] += wy0 * wx0 * gv;
                    plane[ty.lo * w + tx.hi] += wy0 * wx1 * gv;
                    plane[ty.hi * w + tx.lo] += wy1 * wx0 * gv;
                    plane[ty.hi * w + tx.hi] += wy1 * wx1 * gv;
                }
            }
        }
        Tensor::new(&[b, c, h, w], dx)
    }
}
