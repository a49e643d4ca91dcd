//! Direct 2-D convolution with stride, zero padding, and dilation.
//!
//! The kernel taps are spaced `dilation` pixels apart; dilation 1 is a plain
//! dense convolution. Padding is implicit: instead of materializing a padded
//! buffer, each (tap, output-row) pair is clipped to the valid output range
//! once, so the inner loops run over contiguous slices with no bounds tests.

use super::{Element, GradFn, Shape, Tensor};
use crate::error::{Error, Result};

/// `y[i] += a * x[i]`. The inner loop of the stride-1 paths; kept free of
/// bounds checks so it vectorizes.
#[inline]
fn axpy<E: Element>(a: E, x: &[E], y: &mut [E]) {
    for (yi, xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * *xi;
    }
}

/// Dot product with four independent accumulators; the split breaks the
/// add-latency chain that otherwise dominates the weight-gradient pass.
#[inline]
fn dot4<E: Element>(x: &[E], y: &[E]) -> E {
    let n = x.len().min(y.len());
    let mut a0 = E::zero();
    let mut a1 = E::zero();
    let mut a2 = E::zero();
    let mut a3 = E::zero();
    let chunks = n / 4;
    for i in 0..chunks {
        let j = i * 4;
        a0 += x[j] * y[j];
        a1 += x[j + 1] * y[j + 1];
        a2 += x[j + 2] * y[j + 2];
        a3 += x[j + 3] * y[j + 3];
    }
    let mut tail = E::zero();
    for j in chunks * 4..n {
        tail += x[j] * y[j];
    }
    (a0 + a1) + (a2 + a3) + tail
}

/// Inclusive output range `[lo, hi]` with `0 <= o*stride + offset < size_in`;
/// empty when `lo > hi`.
#[inline]
fn valid_range(size_in: usize, size_out: usize, stride: usize, offset: isize) -> (usize, usize) {
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) as usize).div_ceil(stride)
    };
    let hi_num = size_in as isize - 1 - offset;
    if hi_num < 0 || lo >= size_out {
        return (1, 0);
    }
    ((lo), ((hi_num as usize) / stride).min(size_out - 1))
}

struct ConvParams {
    stride: usize,
    padding: usize,
    dilation: usize,
}

struct Conv2dGrad<E: Element> {
    input: Tensor<E>,
    weight: Tensor<E>,
    bias: Option<Tensor<E>>,
    p: ConvParams,
    out_shape: Shape,
}

impl<E: Element> GradFn<E> for Conv2dGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        let mut v = vec![self.input.clone(), self.weight.clone()];
        if let Some(b) = &self.bias {
            v.push(b.clone());
        }
        v
    }

    fn backward(&self, grad_out: &[E]) {
        let ish = self.input.shape();
        let wsh = self.weight.shape();
        let osh = self.out_shape;
        let (stride, dil) = (self.p.stride, self.p.dilation);
        let pad = self.p.padding as isize;
        let (cin, cout) = (wsh.c, wsh.n);
        let (kh, kw) = (wsh.h, wsh.w);
        let xd = self.input.data();
        let wd = self.weight.data();

        if let Some(bias) = &self.bias {
            if bias.requires_grad() {
                let mut db = vec![E::zero(); cout];
                let plane = osh.h * osh.w;
                for n in 0..osh.n {
                    for (co, dbc) in db.iter_mut().enumerate() {
                        let base = (n * cout + co) * plane;
                        let mut acc = E::zero();
                        for g in &grad_out[base..base + plane] {
                            acc += *g;
                        }
                        *dbc += acc;
                    }
                }
                bias.accumulate_grad(&db);
            }
        }

        if self.weight.requires_grad() {
            let mut dw = vec![E::zero(); self.weight.numel()];
            for n in 0..osh.n {
                let x_n = &xd[n * cin * ish.h * ish.w..][..cin * ish.h * ish.w];
                let g_n = &grad_out[n * cout * osh.h * osh.w..][..cout * osh.h * osh.w];
                for co in 0..cout {
                    let g_p = &g_n[co * osh.h * osh.w..][..osh.h * osh.w];
                    for ci in 0..cin {
                        let x_p = &x_n[ci * ish.h * ish.w..][..ish.h * ish.w];
                        for ky in 0..kh {
                            let yoff = (ky * dil) as isize - pad;
                            let (oy0, oy1) = valid_range(ish.h, osh.h, stride, yoff);
                            if oy0 > oy1 {
                                continue;
                            }
                            for kx in 0..kw {
                                let xoff = (kx * dil) as isize - pad;
                                let (ox0, ox1) = valid_range(ish.w, osh.w, stride, xoff);
                                if ox0 > ox1 {
                                    continue;
                                }
                                let mut acc = E::zero();
                                for oy in oy0..=oy1 {
                                    let iy = (oy * stride) as isize + yoff;
                                    let x_row = &x_p[iy as usize * ish.w..][..ish.w];
                                    let g_row = &g_p[oy * osh.w..][..osh.w];
                                    if stride == 1 {
                                        let ix0 = (ox0 as isize + xoff) as usize;
                                        let len = ox1 - ox0 + 1;
                                        acc += dot4(&g_row[ox0..ox0 + len], &x_row[ix0..ix0 + len]);
                                    } else {
                                        for ox in ox0..=ox1 {
                                            let ix = (ox * stride) as isize + xoff;
                                            acc += g_row[ox] * x_row[ix as usize];
                                        }
                                    }
                                }
                                dw[((co * cin + ci) * kh + ky) * kw + kx] += acc;
                            }
                        }
                    }
                }
            }
            self.weight.accumulate_grad(&dw);
        }

        if self.input.requires_grad() {
            let mut dx = vec![E::zero(); self.input.numel()];
            for n in 0..osh.n {
                let dx_n = &mut dx[n * cin * ish.h * ish.w..][..cin * ish.h * ish.w];
                let g_n = &grad_out[n * cout * osh.h * osh.w..][..cout * osh.h * osh.w];
                for co in 0..cout {
                    let g_p = &g_n[co * osh.h * osh.w..][..osh.h * osh.w];
                    for ci in 0..cin {
                        let dx_p = &mut dx_n[ci * ish.h * ish.w..][..ish.h * ish.w];
                        for ky in 0..kh {
                            let yoff = (ky * dil) as isize - pad;
                            let (oy0, oy1) = valid_range(ish.h, osh.h, stride, yoff);
                            if oy0 > oy1 {
                                continue;
                            }
                            for kx in 0..kw {
                                let wv = wd[((co * cin + ci) * kh + ky) * kw + kx];
                                let xoff = (kx * dil) as isize - pad;
                                let (ox0, ox1) = valid_range(ish.w, osh.w, stride, xoff);
                                if ox0 > ox1 {
                                    continue;
                                }
                                for oy in oy0..=oy1 {
                                    let iy = (oy * stride) as isize + yoff;
                                    let dx_row = &mut dx_p[iy as usize * ish.w..][..ish.w];
                                    let g_row = &g_p[oy * osh.w..][..osh.w];
                                    if stride == 1 {
                                        let ix0 = (ox0 as isize + xoff) as usize;
                                        let len = ox1 - ox0 + 1;
                                        axpy(wv, &g_row[ox0..ox0 + len], &mut dx_row[ix0..ix0 + len]);
                                    } else {
                                        for ox in ox0..=ox1 {
                                            let ix = (ox * stride) as isize + xoff;
                                            dx_row[ix as usize] += wv * g_row[ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            self.input.accumulate_grad(&dx);
        }
    }
}

impl<E: Element> Tensor<E> {
    /// 2-D convolution of `self` `(N,Cin,H,W)` with `weight` `(Cout,Cin,kh,kw)`
    /// and optional `bias` `(1,Cout,1,1)`.
    ///
    /// Output spatial size is
    /// `floor((H + 2*padding - dilation*(kh-1) - 1) / stride) + 1` and
    /// likewise for `W`.
    pub fn conv2d(
        &self,
        weight: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        stride: usize,
        padding: usize,
        dilation: usize,
    ) -> Result<Tensor<E>> {
        let ish = self.shape();
        let wsh = weight.shape();
        if dilation == 0 {
            return Err(Error::InvalidArgument(
                "conv2d dilation must be >= 1".into(),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if wsh.c != ish.c {
            return Err(Error::shape(
                "conv2d input channels",
                format!("{} (weight Cin)", wsh.c),
                format!("{} (input C)", ish.c),
            ));
        }
        if let Some(b) = bias {
            let expect = Shape::new(1, wsh.n, 1, 1);
            if b.shape() != expect {
                return Err(Error::shape("conv2d bias", expect.to_string(), b.shape().to_string()));
            }
        }
        let span_h = dilation * (wsh.h - 1) + 1;
        let span_w = dilation * (wsh.w - 1) + 1;
        let eff_h = ish.h + 2 * padding;
        let eff_w = ish.w + 2 * padding;
        if eff_h < span_h || eff_w < span_w {
            return Err(Error::InvalidArgument(format!(
                "conv2d kernel span {span_h}x{span_w} exceeds padded input {eff_h}x{eff_w}"
            )));
        }
        let oh = (eff_h - span_h) / stride + 1;
        let ow = (eff_w - span_w) / stride + 1;
        let (cin, cout) = (wsh.c, wsh.n);
        let (kh, kw) = (wsh.h, wsh.w);
        let pad = padding as isize;
        let out_shape = Shape::new(ish.n, cout, oh, ow);

        let xd = self.data();
        let wd = weight.data();
        let mut out = vec![E::zero(); out_shape.numel()];
        for n in 0..ish.n {
            let x_n = &xd[n * cin * ish.h * ish.w..][..cin * ish.h * ish.w];
            let o_n = &mut out[n * cout * oh * ow..][..cout * oh * ow];
            for co in 0..cout {
                let o_p = &mut o_n[co * oh * ow..][..oh * ow];
                if let Some(b) = bias {
                    let bv = b.data()[co];
                    for o in o_p.iter_mut() {
                        *o = bv;
                    }
                }
                for ci in 0..cin {
                    let x_p = &x_n[ci * ish.h * ish.w..][..ish.h * ish.w];
                    for ky in 0..kh {
                        let yoff = (ky * dilation) as isize - pad;
                        let (oy0, oy1) = valid_range(ish.h, oh, stride, yoff);
                        if oy0 > oy1 {
                            continue;
                        }
                        for kx in 0..kw {
                            let wv = wd[((co * cin + ci) * kh + ky) * kw + kx];
                            let xoff = (kx * dilation) as isize - pad;
                            let (ox0, ox1) = valid_range(ish.w, ow, stride, xoff);
                            if ox0 > ox1 {
                                continue;
                            }
                            for oy in oy0..=oy1 {
                                let iy = (oy * stride) as isize + yoff;
                                let x_row = &x_p[iy as usize * ish.w..][..ish.w];
                                let o_row = &mut o_p[oy * ow..][..ow];
                                if stride == 1 {
                                    let ix0 = (ox0 as isize + xoff) as usize;
                                    let len = ox1 - ox0 + 1;
                                    axpy(wv, &x_row[ix0..ix0 + len], &mut o_row[ox0..ox0 + len]);
                                } else {
                                    for ox in ox0..=ox1 {
                                        let ix = (ox * stride) as isize + xoff;
                                        o_row[ox] += wv * x_row[ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }

        Ok(Tensor::from_op(
            out_shape,
            out,
            Box::new(Conv2dGrad {
                input: self.clone(),
                weight: weight.clone(),
                bias: bias.cloned(),
                p: ConvParams {
                    stride,
                    padding,
                    dilation,
                },
                out_shape,
            }),
        ))
    }
}
