//! Forward operations and their recorded backward rules.
//!
//! Every op validates shapes up front, computes the forward result into a
//! fresh buffer, and, when any input requires gradients, records a node whose
//! `backward` accumulates into the inputs. All loops run in a fixed order, so
//! results are deterministic for identical inputs.

use super::{Element, GradFn, Shape, Tensor};
use crate::error::{Error, Result};

fn check_same_shape<E: Element>(context: &str, a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            context,
            a.shape().to_string(),
            b.shape().to_string(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Elementwise binary ops
// ---------------------------------------------------------------------------

struct AddGrad<E: Element> {
    a: Tensor<E>,
    b: Tensor<E>,
}

impl<E: Element> GradFn<E> for AddGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.a.clone(), self.b.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        if self.a.requires_grad() {
            self.a.accumulate_grad(grad_out);
        }
        if self.b.requires_grad() {
            self.b.accumulate_grad(grad_out);
        }
    }
}

struct SubGrad<E: Element> {
    a: Tensor<E>,
    b: Tensor<E>,
}

impl<E: Element> GradFn<E> for SubGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.a.clone(), self.b.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        if self.a.requires_grad() {
            self.a.accumulate_grad(grad_out);
        }
        if self.b.requires_grad() {
            let neg: Vec<E> = grad_out.iter().map(|g| -*g).collect();
            self.b.accumulate_grad(&neg);
        }
    }
}

struct MulGrad<E: Element> {
    a: Tensor<E>,
    b: Tensor<E>,
}

impl<E: Element> GradFn<E> for MulGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.a.clone(), self.b.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        if self.a.requires_grad() {
            let da: Vec<E> = grad_out
                .iter()
                .zip(self.b.data())
                .map(|(g, b)| *g * *b)
                .collect();
            self.a.accumulate_grad(&da);
        }
        if self.b.requires_grad() {
            let db: Vec<E> = grad_out
                .iter()
                .zip(self.a.data())
                .map(|(g, a)| *g * *a)
                .collect();
            self.b.accumulate_grad(&db);
        }
    }
}

struct ScaleGrad<E: Element> {
    x: Tensor<E>,
    k: E,
}

impl<E: Element> GradFn<E> for ScaleGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.x.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        let dx: Vec<E> = grad_out.iter().map(|g| *g * self.k).collect();
        self.x.accumulate_grad(&dx);
    }
}

// ---------------------------------------------------------------------------
// Elementwise activations
// ---------------------------------------------------------------------------

struct ReluGrad<E: Element> {
    x: Tensor<E>,
}

impl<E: Element> GradFn<E> for ReluGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.x.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        let dx: Vec<E> = grad_out
            .iter()
            .zip(self.x.data())
            .map(|(g, x)| if *x > E::zero() { *g } else { E::zero() })
            .collect();
        self.x.accumulate_grad(&dx);
    }
}

struct SigmoidGrad<E: Element> {
    x: Tensor<E>,
    y: Vec<E>,
}

impl<E: Element> GradFn<E> for SigmoidGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.x.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        let dx: Vec<E> = grad_out
            .iter()
            .zip(&self.y)
            .map(|(g, y)| *g * *y * (E::one() - *y))
            .collect();
        self.x.accumulate_grad(&dx);
    }
}

struct TanhGrad<E: Element> {
    x: Tensor<E>,
    y: Vec<E>,
}

impl<E: Element> GradFn<E> for TanhGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.x.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        let dx: Vec<E> = grad_out
            .iter()
            .zip(&self.y)
            .map(|(g, y)| *g * (E::one() - *y * *y))
            .collect();
        self.x.accumulate_grad(&dx);
    }
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

struct ConcatGrad<E: Element> {
    parts: Vec<Tensor<E>>,
}

impl<E: Element> GradFn<E> for ConcatGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        self.parts.clone()
    }
    fn backward(&self, grad_out: &[E]) {
        let sh0 = self.parts[0].shape();
        let (n, h, w) = (sh0.n, sh0.h, sh0.w);
        let c_total: usize = self.parts.iter().map(|p| p.shape().c).sum();
        let mut c_off = 0;
        for part in &self.parts {
            let c = part.shape().c;
            if part.requires_grad() {
                let mut dp = vec![E::zero(); part.numel()];
                for ni in 0..n {
                    let src = ((ni * c_total) + c_off) * h * w;
                    let dst = ni * c * h * w;
                    dp[dst..dst + c * h * w].copy_from_slice(&grad_out[src..src + c * h * w]);
                }
                part.accumulate_grad(&dp);
            }
            c_off += c;
        }
    }
}

struct SliceChannelsGrad<E: Element> {
    x: Tensor<E>,
    c0: usize,
    c1: usize,
}

impl<E: Element> GradFn<E> for SliceChannelsGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.x.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        let sh = self.x.shape();
        let mut dx = vec![E::zero(); self.x.numel()];
        let c_out = self.c1 - self.c0;
        let plane = sh.h * sh.w;
        for n in 0..sh.n {
            let src = n * c_out * plane;
            let dst = (n * sh.c + self.c0) * plane;
            dx[dst..dst + c_out * plane].copy_from_slice(&grad_out[src..src + c_out * plane]);
        }
        self.x.accumulate_grad(&dx);
    }
}

struct SumAllGrad<E: Element> {
    x: Tensor<E>,
}

impl<E: Element> GradFn<E> for SumAllGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.x.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        let dx = vec![grad_out[0]; self.x.numel()];
        self.x.accumulate_grad(&dx);
    }
}

struct GlobalAvgPoolGrad<E: Element> {
    x: Tensor<E>,
}

impl<E: Element> GradFn<E> for GlobalAvgPoolGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.x.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        let sh = self.x.shape();
        let plane = sh.h * sh.w;
        let inv = E::one() / E::from_f64(plane as f64);
        let mut dx = vec![E::zero(); self.x.numel()];
        for nc in 0..sh.n * sh.c {
            let g = grad_out[nc] * inv;
            for v in &mut dx[nc * plane..(nc + 1) * plane] {
                *v = g;
            }
        }
        self.x.accumulate_grad(&dx);
    }
}

struct BroadcastSpatialGrad<E: Element> {
    x: Tensor<E>,
}

impl<E: Element> GradFn<E> for BroadcastSpatialGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.x.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        let nc = self.x.numel();
        let plane = grad_out.len() / nc;
        let mut dx = vec![E::zero(); nc];
        for (i, d) in dx.iter_mut().enumerate() {
            let mut acc = E::zero();
            for g in &grad_out[i * plane..(i + 1) * plane] {
                acc += *g;
            }
            *d = acc;
        }
        self.x.accumulate_grad(&dx);
    }
}

struct ChannelAffineGrad<E: Element> {
    x: Tensor<E>,
    gamma: Tensor<E>,
    beta: Tensor<E>,
}

impl<E: Element> GradFn<E> for ChannelAffineGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.x.clone(), self.gamma.clone(), self.beta.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        let sh = self.x.shape();
        let plane = sh.h * sh.w;
        let gd = self.gamma.data();
        if self.x.requires_grad() {
            let mut dx = vec![E::zero(); self.x.numel()];
            for n in 0..sh.n {
                for c in 0..sh.c {
                    let base = (n * sh.c + c) * plane;
                    let g = gd[c];
                    for i in 0..plane {
                        dx[base + i] = grad_out[base + i] * g;
                    }
                }
            }
            self.x.accumulate_grad(&dx);
        }
        if self.gamma.requires_grad() {
            let xd = self.x.data();
            let mut dg = vec![E::zero(); sh.c];
            for n in 0..sh.n {
                for c in 0..sh.c {
                    let base = (n * sh.c + c) * plane;
                    let mut acc = E::zero();
                    for i in 0..plane {
                        acc += grad_out[base + i] * xd[base + i];
                    }
                    dg[c] += acc;
                }
            }
            self.gamma.accumulate_grad(&dg);
        }
        if self.beta.requires_grad() {
            let mut db = vec![E::zero(); sh.c];
            for n in 0..sh.n {
                for c in 0..sh.c {
                    let base = (n * sh.c + c) * plane;
                    let mut acc = E::zero();
                    for i in 0..plane {
                        acc += grad_out[base + i];
                    }
                    db[c] += acc;
                }
            }
            self.beta.accumulate_grad(&db);
        }
    }
}

// ---------------------------------------------------------------------------
// Pooling, resize, softmax
// ---------------------------------------------------------------------------

struct MaxPoolGrad<E: Element> {
    x: Tensor<E>,
    argmax: Vec<usize>,
}

impl<E: Element> GradFn<E> for MaxPoolGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.x.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        let mut dx = vec![E::zero(); self.x.numel()];
        for (g, &idx) in grad_out.iter().zip(&self.argmax) {
            dx[idx] += *g;
        }
        self.x.accumulate_grad(&dx);
    }
}

struct BilinearGrad<E: Element> {
    x: Tensor<E>,
    out_shape: Shape,
    ys: Vec<(usize, usize, E)>,
    xs: Vec<(usize, usize, E)>,
}

impl<E: Element> GradFn<E> for BilinearGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.x.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        let sh = self.x.shape();
        let (oh, ow) = (self.out_shape.h, self.out_shape.w);
        let mut dx = vec![E::zero(); self.x.numel()];
        for nc in 0..sh.n * sh.c {
            let in_base = nc * sh.h * sh.w;
            let out_base = nc * oh * ow;
            for (oy, &(y0, y1, fy)) in self.ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in self.xs.iter().enumerate() {
                    let g = grad_out[out_base + oy * ow + ox];
                    let one = E::one();
                    dx[in_base + y0 * sh.w + x0] += g * (one - fy) * (one - fx);
                    dx[in_base + y0 * sh.w + x1] += g * (one - fy) * fx;
                    dx[in_base + y1 * sh.w + x0] += g * fy * (one - fx);
                    dx[in_base + y1 * sh.w + x1] += g * fy * fx;
                }
            }
        }
        self.x.accumulate_grad(&dx);
    }
}

struct IdentityGrad<E: Element> {
    x: Tensor<E>,
}

impl<E: Element> GradFn<E> for IdentityGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.x.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        self.x.accumulate_grad(grad_out);
    }
}

struct SpatialSoftmaxGrad<E: Element> {
    x: Tensor<E>,
    y: Vec<E>,
}

impl<E: Element> GradFn<E> for SpatialSoftmaxGrad<E> {
    fn parents(&self) -> Vec<Tensor<E>> {
        vec![self.x.clone()]
    }
    fn backward(&self, grad_out: &[E]) {
        let sh = self.x.shape();
        let plane = sh.h * sh.w;
        let mut dx = vec![E::zero(); self.x.numel()];
        for nc in 0..sh.n * sh.c {
            let base = nc * plane;
            let y = &self.y[base..base + plane];
            let g = &grad_out[base..base + plane];
            let mut dot = E::zero();
            for i in 0..plane {
                dot += g[i] * y[i];
            }
            for i in 0..plane {
                dx[base + i] = y[i] * (g[i] - dot);
            }
        }
        self.x.accumulate_grad(&dx);
    }
}

// ---------------------------------------------------------------------------
// Public surface
// ---------------------------------------------------------------------------

impl<E: Element> Tensor<E> {
    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        check_same_shape("add", self, other)?;
        let data: Vec<E> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| *a + *b)
            .collect();
        Ok(Tensor::from_op(
            self.shape(),
            data,
            Box::new(AddGrad {
                a: self.clone(),
                b: other.clone(),
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        check_same_shape("sub", self, other)?;
        let data: Vec<E> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| *a - *b)
            .collect();
        Ok(Tensor::from_op(
            self.shape(),
            data,
            Box::new(SubGrad {
                a: self.clone(),
                b: other.clone(),
            }),
        ))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        check_same_shape("mul", self, other)?;
        let data: Vec<E> = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| *a * *b)
            .collect();
        Ok(Tensor::from_op(
            self.shape(),
            data,
            Box::new(MulGrad {
                a: self.clone(),
                b: other.clone(),
            }),
        ))
    }

    pub fn scale(&self, k: E) -> Tensor<E> {
        let data: Vec<E> = self.data().iter().map(|a| *a * k).collect();
        Tensor::from_op(self.shape(), data, Box::new(ScaleGrad { x: self.clone(), k }))
    }

    pub fn relu(&self) -> Tensor<E> {
        let data: Vec<E> = self
            .data()
            .iter()
            .map(|a| if *a > E::zero() { *a } else { E::zero() })
            .collect();
        Tensor::from_op(self.shape(), data, Box::new(ReluGrad { x: self.clone() }))
    }

    pub fn sigmoid(&self) -> Tensor<E> {
        let data: Vec<E> = self
            .data()
            .iter()
            .map(|a| E::one() / (E::one() + (-*a).exp()))
            .collect();
        Tensor::from_op(
            self.shape(),
            data.clone(),
            Box::new(SigmoidGrad {
                x: self.clone(),
                y: data,
            }),
        )
    }

    pub fn tanh_act(&self) -> Tensor<E> {
        let data: Vec<E> = self.data().iter().map(|a| a.tanh()).collect();
        Tensor::from_op(
            self.shape(),
            data.clone(),
            Box::new(TanhGrad {
                x: self.clone(),
                y: data,
            }),
        )
    }

    /// Sum of all elements as a `(1,1,1,1)` tensor.
    pub fn sum_all(&self) -> Tensor<E> {
        let s: E = self.data().iter().copied().sum();
        Tensor::from_op(
            Shape::new(1, 1, 1, 1),
            vec![s],
            Box::new(SumAllGrad { x: self.clone() }),
        )
    }

    /// Mean over the spatial extent per `(sample, channel)`.
    pub fn global_avg_pool(&self) -> Tensor<E> {
        let sh = self.shape();
        let plane = sh.h * sh.w;
        let inv = E::one() / E::from_f64(plane as f64);
        let mut data = vec![E::zero(); sh.n * sh.c];
        for nc in 0..sh.n * sh.c {
            let mut acc = E::zero();
            for v in &self.data()[nc * plane..(nc + 1) * plane] {
                acc += *v;
            }
            data[nc] = acc * inv;
        }
        Tensor::from_op(
            Shape::new(sh.n, sh.c, 1, 1),
            data,
            Box::new(GlobalAvgPoolGrad { x: self.clone() }),
        )
    }

    /// Nearest-broadcast of a `(N,C,1,1)` tensor to `(N,C,out_h,out_w)`.
    pub fn broadcast_spatial(&self, out_h: usize, out_w: usize) -> Result<Tensor<E>> {
        let sh = self.shape();
        if sh.h != 1 || sh.w != 1 {
            return Err(Error::shape(
                "broadcast_spatial",
                format!("{}x{}x1x1", sh.n, sh.c),
                sh.to_string(),
            ));
        }
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(
                "broadcast_spatial output size must be positive".into(),
            ));
        }
        let plane = out_h * out_w;
        let mut data = vec![E::zero(); sh.n * sh.c * plane];
        for (nc, v) in self.data().iter().enumerate() {
            for d in &mut data[nc * plane..(nc + 1) * plane] {
                *d = *v;
            }
        }
        Ok(Tensor::from_op(
            Shape::new(sh.n, sh.c, out_h, out_w),
            data,
            Box::new(BroadcastSpatialGrad { x: self.clone() }),
        ))
    }

    /// Channel slice `[c0, c1)`.
    pub fn slice_channels(&self, c0: usize, c1: usize) -> Result<Tensor<E>> {
        let sh = self.shape();
        if c0 >= c1 || c1 > sh.c {
            return Err(Error::InvalidArgument(format!(
                "slice_channels [{c0}, {c1}) out of range for {} channels",
                sh.c
            )));
        }
        let plane = sh.h * sh.w;
        let c_out = c1 - c0;
        let mut data = vec![E::zero(); sh.n * c_out * plane];
        for n in 0..sh.n {
            let src = (n * sh.c + c0) * plane;
            let dst = n * c_out * plane;
            data[dst..dst + c_out * plane].copy_from_slice(&self.data()[src..src + c_out * plane]);
        }
        Ok(Tensor::from_op(
            Shape::new(sh.n, c_out, sh.h, sh.w),
            data,
            Box::new(SliceChannelsGrad {
                x: self.clone(),
                c0,
                c1,
            }),
        ))
    }

    /// Per-channel affine `x * gamma[c] + beta[c]`; `gamma` and `beta` are
    /// `(1,C,1,1)`.
    pub fn channel_affine(&self, gamma: &Tensor<E>, beta: &Tensor<E>) -> Result<Tensor<E>> {
        let sh = self.shape();
        let expect = Shape::new(1, sh.c, 1, 1);
        for (name, t) in [("gamma", gamma), ("beta", beta)] {
            if t.shape() != expect {
                return Err(Error::shape(
                    format!("channel_affine {name}"),
                    expect.to_string(),
                    t.shape().to_string(),
                ));
            }
        }
        let plane = sh.h * sh.w;
        let gd = gamma.data();
        let bd = beta.data();
        let mut data = vec![E::zero(); self.numel()];
        for n in 0..sh.n {
            for c in 0..sh.c {
                let base = (n * sh.c + c) * plane;
                let (g, b) = (gd[c], bd[c]);
                for i in 0..plane {
                    data[base + i] = self.data()[base + i] * g + b;
                }
            }
        }
        Ok(Tensor::from_op(
            sh,
            data,
            Box::new(ChannelAffineGrad {
                x: self.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
            }),
        ))
    }

    /// Max pooling; the gradient routes to the first (row-major) maximal
    /// element of each window.
    pub fn max_pool2d(&self, window: usize, stride: usize) -> Result<Tensor<E>> {
        let sh = self.shape();
        if window == 0 || stride == 0 {
            return Err(Error::InvalidArgument(
                "max_pool2d window and stride must be >= 1".into(),
            ));
        }
        if window > sh.h || window > sh.w {
            return Err(Error::InvalidArgument(format!(
                "max_pool2d window {window} larger than input spatial extent {}x{}",
                sh.h, sh.w
            )));
        }
        let oh = (sh.h - window) / stride + 1;
        let ow = (sh.w - window) / stride + 1;
        let mut data = vec![E::zero(); sh.n * sh.c * oh * ow];
        let mut argmax = vec![0usize; data.len()];
        let plane = sh.h * sh.w;
        for nc in 0..sh.n * sh.c {
            let x = &self.data()[nc * plane..(nc + 1) * plane];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = E::neg_infinity();
                    let mut best_idx = 0usize;
                    for ky in 0..window {
                        for kx in 0..window {
                            let idx = (oy * stride + ky) * sh.w + (ox * stride + kx);
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let out_idx = (nc * oh + oy) * ow + ox;
                    data[out_idx] = best;
                    argmax[out_idx] = nc * plane + best_idx;
                }
            }
        }
        Ok(Tensor::from_op(
            Shape::new(sh.n, sh.c, oh, ow),
            data,
            Box::new(MaxPoolGrad {
                x: self.clone(),
                argmax,
            }),
        ))
    }

    /// Bilinear resize with the align-corners convention: input corners map
    /// exactly onto output corners, and resizing to the same size is the
    /// identity, bit for bit.
    pub fn bilinear_resize(&self, out_h: usize, out_w: usize) -> Result<Tensor<E>> {
        let sh = self.shape();
        if out_h == 0 || out_w == 0 {
            return Err(Error::InvalidArgument(
                "bilinear_resize output size must be positive".into(),
            ));
        }
        if out_h == sh.h && out_w == sh.w {
            return Ok(Tensor::from_op(
                sh,
                self.data().to_vec(),
                Box::new(IdentityGrad { x: self.clone() }),
            ));
        }
        let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, E)> {
            (0..n_out)
                .map(|o| {
                    if n_out == 1 || n_in == 1 {
                        return (0, 0, E::zero());
                    }
                    let scale = E::from_f64((n_in - 1) as f64) / E::from_f64((n_out - 1) as f64);
                    let src = E::from_f64(o as f64) * scale;
                    let i0 = src.floor().to_f64() as usize;
                    let i0 = i0.min(n_in - 1);
                    let i1 = (i0 + 1).min(n_in - 1);
                    let f = src - E::from_f64(i0 as f64);
                    (i0, i1, f)
                })
                .collect()
        };
        let ys = axis(sh.h, out_h);
        let xs = axis(sh.w, out_w);
        let mut data = vec![E::zero(); sh.n * sh.c * out_h * out_w];
        let one = E::one();
        for nc in 0..sh.n * sh.c {
            let x = &self.data()[nc * sh.h * sh.w..(nc + 1) * sh.h * sh.w];
            let out = &mut data[nc * out_h * out_w..(nc + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let v = x[y0 * sh.w + x0] * (one - fy) * (one - fx)
                        + x[y0 * sh.w + x1] * (one - fy) * fx
                        + x[y1 * sh.w + x0] * fy * (one - fx)
                        + x[y1 * sh.w + x1] * fy * fx;
                    out[oy * out_w + ox] = v;
                }
            }
        }
        let out_shape = Shape::new(sh.n, sh.c, out_h, out_w);
        Ok(Tensor::from_op(
            out_shape,
            data,
            Box::new(BilinearGrad {
                x: self.clone(),
                out_shape,
                ys,
                xs,
            }),
        ))
    }

    /// Softmax over the spatial extent of each `(sample, channel)` plane,
    /// stabilized by max subtraction.
    pub fn spatial_softmax(&self) -> Tensor<E> {
        let sh = self.shape();
        let plane = sh.h * sh.w;
        let mut data = vec![E::zero(); self.numel()];
        for nc in 0..sh.n * sh.c {
            let x = &self.data()[nc * plane..(nc + 1) * plane];
            let out = &mut data[nc * plane..(nc + 1) * plane];
            let mut m = E::neg_infinity();
            for v in x {
                if *v > m {
                    m = *v;
                }
            }
            // The denominator accumulates in f64 so the normalized channel
            // sums to 1 within one rounding per element even in f32.
            let mut sum = 0.0f64;
            for (o, v) in out.iter_mut().zip(x) {
                *o = (*v - m).exp();
                sum += o.to_f64();
            }
            for o in out.iter_mut() {
                *o = E::from_f64(o.to_f64() / sum);
            }
        }
        Tensor::from_op(
            sh,
            data.clone(),
            Box::new(SpatialSoftmaxGrad {
                x: self.clone(),
                y: data,
            }),
        )
    }
}

/// Concatenate along the channel axis. All parts must agree on `(N, H, W)`.
pub fn concat_channels<E: Element>(parts: &[Tensor<E>]) -> Result<Tensor<E>> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("concat_channels of nothing".into()));
    }
    let sh0 = parts[0].shape();
    for p in parts {
        let sh = p.shape();
        if sh.n != sh0.n || sh.h != sh0.h || sh.w != sh0.w {
            return Err(Error::shape(
                "concat_channels",
                format!("{}xCx{}x{}", sh0.n, sh0.h, sh0.w),
                sh.to_string(),
            ));
        }
    }
    let c_total: usize = parts.iter().map(|p| p.shape().c).sum();
    let plane = sh0.h * sh0.w;
    let mut data = vec![E::zero(); sh0.n * c_total * plane];
    for n in 0..sh0.n {
        let mut c_off = 0;
        for p in parts {
            let c = p.shape().c;
            let src = n * c * plane;
            let dst = (n * c_total + c_off) * plane;
            data[dst..dst + c * plane].copy_from_slice(&p.data()[src..src + c * plane]);
            c_off += c;
        }
    }
    Ok(Tensor::from_op(
        Shape::new(sh0.n, c_total, sh0.h, sh0.w),
        data,
        Box::new(ConcatGrad {
            parts: parts.to_vec(),
        }),
    ))
}

/// Stack single-sample tensors along the batch axis. Plain data op; the
/// result is a leaf.
pub fn stack_batch<E: Element>(samples: &[Tensor<E>]) -> Result<Tensor<E>> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("stack_batch of nothing".into()));
    }
    let sh0 = samples[0].shape();
    let mut data = Vec::with_capacity(samples.len() * sh0.numel());
    for s in samples {
        if s.shape() != sh0 {
            return Err(Error::shape(
                "stack_batch",
                sh0.to_string(),
                s.shape().to_string(),
            ));
        }
        data.extend_from_slice(s.data());
    }
    let n_total: usize = samples.iter().map(|s| s.shape().n).sum();
    Tensor::new(Shape::new(n_total, sh0.c, sh0.h, sh0.w), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, grad_check_multi};
    use proptest::prelude::*;

    fn t64(shape: Shape, data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_forward() {
        let a = t64(Shape::new(1, 1, 1, 3), &[1.0, -2.0, 3.0]);
        let b = t64(Shape::new(1, 1, 1, 3), &[4.0, 5.0, -6.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[5.0, 3.0, -3.0]);
        assert_eq!(a.sub(&b).unwrap().data(), &[-3.0, -7.0, 9.0]);
        assert_eq!(a.mul(&b).unwrap().data(), &[4.0, -10.0, -18.0]);
        assert_eq!(a.scale(2.0).data(), &[2.0, -4.0, 6.0]);
        assert_eq!(a.relu().data(), &[1.0, 0.0, 3.0]);
    }

    #[test]
    fn elementwise_shape_mismatch_rejected() {
        let a = t64(Shape::new(1, 1, 1, 3), &[1.0, 2.0, 3.0]);
        let b = t64(Shape::new(1, 1, 3, 1), &[1.0, 2.0, 3.0]);
        assert!(a.add(&b).is_err());
        assert!(a.mul(&b).is_err());
    }

    #[test]
    fn activation_forward_matches_closed_form() {
        let x = t64(Shape::new(1, 1, 1, 3), &[-1.5, 0.0, 2.0]);
        let s = x.sigmoid();
        let t = x.tanh_act();
        for (i, &v) in [-1.5f64, 0.0, 2.0].iter().enumerate() {
            assert!((s.data()[i] - 1.0 / (1.0 + (-v).exp())).abs() < 1e-15);
            assert!((t.data()[i] - v.tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn elementwise_grad_checks() {
        let shape = Shape::new(1, 2, 2, 2);
        let data: Vec<f64> = (0..8).map(|i| 0.3 + 0.17 * i as f64).collect();
        // x*x + 3x, pure polynomial: finite differences are near-exact.
        let err = grad_check(
            |x| Ok(x.mul(x)?.add(&x.scale(3.0))?.sum_all()),
            shape,
            &data,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err {err}");

        let err = grad_check(|x| Ok(x.sigmoid().sum_all()), shape, &data, 1e-5).unwrap();
        assert!(err < 1e-8, "err {err}");
        let err = grad_check(|x| Ok(x.tanh_act().sum_all()), shape, &data, 1e-5).unwrap();
        assert!(err < 1e-8, "err {err}");
        // Inputs are all > 0.1, so no kink in the difference stencil.
        let err = grad_check(|x| Ok(x.relu().mul(x)?.sum_all()), shape, &data, 1e-5).unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn sum_all_and_grad() {
        let x = Tensor::<f64>::new_param(Shape::new(1, 2, 1, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = x.sum_all();
        assert_eq!(s.data(), &[10.0]);
        s.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn global_avg_pool_mean_and_grad() {
        let x = Tensor::<f64>::new_param(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = x.global_avg_pool();
        assert_eq!(p.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(p.data(), &[2.5]);
        p.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![0.25; 4]);

        let c = Tensor::<f64>::full(Shape::new(2, 3, 5, 7), 1.25);
        for &v in c.global_avg_pool().data() {
            assert!((v - 1.25).abs() < 1e-12);
        }
    }

    #[test]
    fn broadcast_spatial_constant_fill() {
        let x = t64(Shape::new(1, 2, 1, 1), &[3.0, -1.0]);
        let y = x.broadcast_spatial(2, 3).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 2, 2, 3));
        assert_eq!(&y.data()[..6], &[3.0; 6]);
        assert_eq!(&y.data()[6..], &[-1.0; 6]);

        let bad = t64(Shape::new(1, 1, 2, 2), &[0.0; 4]);
        assert!(bad.broadcast_spatial(4, 4).is_err());

        let err = grad_check(
            |x| Ok(x.broadcast_spatial(3, 3)?.mul(&x.broadcast_spatial(3, 3)?)?.sum_all()),
            Shape::new(1, 2, 1, 1),
            &[1.5, -0.5],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "err {err}");
    }

    #[test]
    fn slice_channels_layout_and_grad() {
        let x = Tensor::<f64>::new_param(
            Shape::new(2, 3, 1, 2),
            (0..12).map(|i| i as f64).collect(),
        )
        .unwrap();
        let s = x.slice_channels(1, 3).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 1, 2));
        assert_eq!(s.data(), &[2.0, 3.0, 4.0, 5.0, 8.0, 9.0, 10.0, 11.0]);
        s.sum_all().backward().unwrap();
        let g = x.grad().unwrap();
        assert_eq!(g, vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);

        assert!(x.slice_channels(2, 2).is_err());
        assert!(x.slice_channels(0, 4).is_err());
    }

    #[test]
    fn channel_affine_forward_and_grads() {
        let x = t64(Shape::new(1, 2, 1, 2), &[1.0, 2.0, 3.0, 4.0]);
        let gamma = t64(Shape::new(1, 2, 1, 1), &[2.0, -1.0]);
        let beta = t64(Shape::new(1, 2, 1, 1), &[0.5, 1.0]);
        let y = x.channel_affine(&gamma, &beta).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, -2.0, -3.0]);

        let report = grad_check_multi(
            |args| {
                let y = args[0].channel_affine(&args[1], &args[2])?;
                Ok(y.mul(&y)?.sum_all())
            },
            &[
                (Shape::new(2, 2, 2, 2), (0..16).map(|i| 0.1 * i as f64 - 0.7).collect()),
                (Shape::new(1, 2, 1, 1), vec![1.3, -0.4]),
                (Shape::new(1, 2, 1, 1), vec![0.2, 0.9]),
            ],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "err {}", report.max_rel_err);
    }

    #[test]
    fn max_pool_ramp_oracle() {
        let x = t64(Shape::new(1, 1, 4, 4), &(0..16).map(|i| i as f64).collect::<Vec<_>>());
        let y = x.max_pool2d(2, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
    }

    #[test]
    fn max_pool_constant_and_spike() {
        let c = Tensor::<f64>::full(Shape::new(1, 1, 4, 4), 2.5);
        assert_eq!(c.max_pool2d(2, 2).unwrap().data(), &[2.5; 4]);

        // A negative spike under a 0 background never wins a max.
        let mut v = vec![0.0; 16];
        v[5] = -3.0;
        let x = t64(Shape::new(1, 1, 4, 4), &v);
        assert_eq!(x.max_pool2d(2, 2).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn max_pool_tie_routes_to_first() {
        let x = Tensor::<f64>::new_param(Shape::new(1, 1, 2, 2), vec![1.0; 4]).unwrap();
        let y = x.max_pool2d(2, 2).unwrap();
        y.sum_all().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn max_pool_window_too_large_rejected() {
        let x = t64(Shape::new(1, 1, 3, 3), &[0.0; 9]);
        assert!(x.max_pool2d(4, 1).is_err());
        assert!(x.max_pool2d(0, 1).is_err());
    }

    #[test]
    fn max_pool_grad_check() {
        // Distinct values, so the argmax is stable under the h-perturbation.
        let data: Vec<f64> = (0..32).map(|i| ((i * 37) % 61) as f64 * 0.1).collect();
        let err = grad_check(
            |x| Ok(x.max_pool2d(2, 2)?.mul(&x.max_pool2d(2, 2)?)?.sum_all()),
            Shape::new(1, 2, 4, 4),
            &data,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "err {err}");
    }

    #[test]
    fn bilinear_identity_is_bit_equal() {
        let data: Vec<f64> = (0..24).map(|i| (i as f64).sin()).collect();
        let x = t64(Shape::new(1, 2, 3, 4), &data);
        let y = x.bilinear_resize(3, 4).unwrap();
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn bilinear_upsample_oracle_2x2_to_4x4() {
        let x = t64(Shape::new(1, 1, 2, 2), &[0.0, 1.0, 2.0, 3.0]);
        let y = x.bilinear_resize(4, 4).unwrap();
        // Align-corners blend: v(y,x) = x/3 + 2y/3 on the 4x4 grid.
        for oy in 0..4 {
            for ox in 0..4 {
                let want = ox as f64 / 3.0 + 2.0 * oy as f64 / 3.0;
                assert!((y.at(0, 0, oy, ox) - want).abs() < 1e-12, "({oy},{ox})");
            }
        }
        assert_eq!(y.at(0, 0, 0, 0), 0.0);
        assert_eq!(y.at(0, 0, 0, 3), 1.0);
        assert_eq!(y.at(0, 0, 3, 0), 2.0);
        assert_eq!(y.at(0, 0, 3, 3), 3.0);
    }

    #[test]
    fn bilinear_constant_stays_constant() {
        let c = Tensor::<f64>::full(Shape::new(2, 1, 3, 3), 0.75);
        for &v in c.bilinear_resize(7, 5).unwrap().data() {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_grad_checks() {
        let data: Vec<f64> = (0..18).map(|i| (i as f64 * 0.7).cos()).collect();
        for (oh, ow) in [(3, 3), (5, 7), (2, 2), (1, 4)] {
            let err = grad_check(
                |x| {
                    let y = x.bilinear_resize(oh, ow)?;
                    Ok(y.mul(&y)?.sum_all())
                },
                Shape::new(1, 2, 3, 3),
                &data,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-8, "({oh},{ow}) err {err}");
        }
    }

    #[test]
    fn softmax_uniform_and_spike() {
        let c = Tensor::<f64>::full(Shape::new(1, 2, 3, 5), 4.0);
        for &v in c.spatial_softmax().data() {
            assert!((v - 1.0 / 15.0).abs() < 1e-12);
        }

        let mut v = vec![0.0; 15];
        v[7] = 50.0;
        let x = t64(Shape::new(1, 1, 3, 5), &v);
        let y = x.spatial_softmax();
        assert!((y.data()[7] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_matches_direct_oracle() {
        let data: Vec<f64> = (0..15).map(|i| ((i * 13) % 7) as f64 * 0.9 - 2.0).collect();
        let x = t64(Shape::new(1, 1, 3, 5), &data);
        let y = x.spatial_softmax();
        let z: f64 = data.iter().map(|v| v.exp()).sum();
        for (o, v) in y.data().iter().zip(&data) {
            assert!((o - v.exp() / z).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let data: Vec<f64> = (0..12).map(|i| (i as f64 * 1.3).sin() * 5.0).collect();
        let a = t64(Shape::new(1, 1, 3, 4), &data).spatial_softmax();
        let shifted: Vec<f64> = data.iter().map(|v| v + 1000.0).collect();
        let b = t64(Shape::new(1, 1, 3, 4), &shifted).spatial_softmax();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_grad_check() {
        let data: Vec<f64> = (0..16).map(|i| (i as f64 * 0.61).cos() * 2.0).collect();
        let weights: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let err = grad_check(
            |x| {
                let w = Tensor::new(Shape::new(1, 1, 4, 4), weights.clone())?;
                Ok(x.spatial_softmax().mul(&w)?.sum_all())
            },
            Shape::new(1, 1, 4, 4),
            &data,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err {err}");
    }

    #[test]
    fn concat_layout_and_grads() {
        let a = t64(Shape::new(2, 1, 1, 2), &[0.0, 1.0, 2.0, 3.0]);
        let b = t64(Shape::new(2, 2, 1, 2), &[10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0]);
        let y = concat_channels(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 3, 1, 2));
        assert_eq!(
            y.data(),
            &[0.0, 1.0, 10.0, 11.0, 12.0, 13.0, 2.0, 3.0, 14.0, 15.0, 16.0, 17.0]
        );

        let report = grad_check_multi(
            |args| {
                let y = concat_channels(&[args[0].clone(), args[1].clone()])?;
                Ok(y.mul(&y)?.sum_all())
            },
            &[
                (Shape::new(1, 1, 2, 2), vec![0.3, -0.2, 0.9, 0.4]),
                (Shape::new(1, 2, 2, 2), (0..8).map(|i| 0.1 * i as f64).collect()),
            ],
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-9, "err {}", report.max_rel_err);

        let bad = t64(Shape::new(1, 1, 3, 3), &[0.0; 9]);
        assert!(concat_channels(&[a, bad]).is_err());
        assert!(concat_channels::<f64>(&[]).is_err());
    }

    #[test]
    fn stack_batch_concatenates_samples() {
        let a = t64(Shape::new(1, 2, 1, 1), &[1.0, 2.0]);
        let b = t64(Shape::new(1, 2, 1, 1), &[3.0, 4.0]);
        let y = stack_batch(&[a, b]).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 2, 1, 1));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(!y.requires_grad());

        let c = t64(Shape::new(1, 3, 1, 1), &[0.0; 3]);
        assert!(stack_batch(&[y, c]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_channels_sum_to_one(
            n in 1usize..3, c in 1usize..4, h in 1usize..6, w in 1usize..6,
            seed in 0u64..1000,
        ) {
            let count = n * c * h * w;
            let data: Vec<f32> = (0..count)
                .map(|i| {
                    let z = seed
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add((i as u64).wrapping_mul(1442695040888963407));
                    ((z >> 11) as f64 / (1u64 << 53) as f64 * 100.0 - 50.0) as f32
                })
                .collect();
            let x = Tensor::<f32>::new(Shape::new(n, c, h, w), data).unwrap();
            let y = x.spatial_softmax();
            for nc in 0..n * c {
                let s: f32 = y.data()[nc * h * w..(nc + 1) * h * w].iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn bilinear_same_size_identity(
            h in 1usize..7, w in 1usize..7, seed in 0u64..1000,
        ) {
            let data: Vec<f32> = (0..h * w)
                .map(|i| ((seed + i as u64 * 7919) % 1000) as f32 / 500.0 - 1.0)
                .collect();
            let x = Tensor::<f32>::new(Shape::new(1, 1, h, w), data.clone()).unwrap();
            let y = x.bilinear_resize(h, w).unwrap();
            prop_assert_eq!(y.data(), &data[..]);
        }
    }
}
