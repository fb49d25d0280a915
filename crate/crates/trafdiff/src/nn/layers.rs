//! Layers with hand-written backward passes.
//!
//! Activations travel as dynamic-rank arrays: [N,C,H,W] on the 2D path,
//! [N,C,L] on the 1D path, [N,F] for fully-connected heads. A layer caches
//! its forward inputs, so one struct instance serves exactly one position
//! in a model.

use ndarray::{Array1, Array2, Array3, Array4, ArrayD, ArrayView3, Axis, Ix2, Ix3, Ix4};
use rand_chacha::ChaCha8Rng;

use super::{El, Param};

pub trait Layer<E: El> {
    fn forward(&mut self, x: &ArrayD<E>) -> ArrayD<E>;
    /// Propagate loss gradients, accumulating into parameter grads.
    /// Must follow a forward call on the same instance.
    fn backward(&mut self, gy: &ArrayD<E>) -> ArrayD<E>;
    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        Vec::new()
    }
}

fn out_len(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

/// 2D convolution, square kernel, zero padding. Weight layout
/// [out_ch, in_ch*k*k] so the forward pass is one GEMM per sample.
pub struct Conv2d<E> {
    pub weight: Param<E>,
    pub bias: Param<E>,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    cache: Option<Array4<E>>,
}

impl<E: El> Conv2d<E> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (in_ch * k * k) as f64;
        let bound = (1.0 / fan_in).sqrt();
        Self {
            weight: Param::uniform(&[out_ch, in_ch * k * k], bound, rng),
            bias: Param::uniform(&[out_ch], bound, rng),
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            cache: None,
        }
    }

    /// 3x3 convolution preserving spatial size.
    pub fn same(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(in_ch, out_ch, 3, 1, 1, rng)
    }

    /// 3x3 stride-2 convolution halving even spatial sizes.
    pub fn halving(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(in_ch, out_ch, 3, 2, 1, rng)
    }

    /// 1x1 projection.
    pub fn proj(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(in_ch, out_ch, 1, 1, 0, rng)
    }
}

fn im2col2d<E: El>(
    x: &ArrayView3<'_, E>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<E> {
    let (c, h, w) = x.dim();
    let xs = x.as_slice().expect("contiguous input");
    let mut cols = Array2::<E>::zeros((c * k * k, oh * ow));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let mut row_view = cols.row_mut(row);
                let dst = row_view.as_slice_mut().expect("row is contiguous");
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &xs[(ci * h + iy as usize) * w..][..w];
                    let drow = &mut dst[oy * ow..oy * ow + ow];
                    if stride == 1 && pad <= kx {
                        // Contiguous fast path: ix = ox + kx - pad.
                        let off = kx - pad;
                        let len = ow.min(w - off);
                        drow[..len].copy_from_slice(&src[off..off + len]);
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im2d<E: El>(
    cols: &Array2<E>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array3<E> {
    let mut x = Array3::<E>::zeros((c, h, w));
    let xs = x.as_slice_mut().expect("standard layout");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let row_view = cols.row(row);
                let src = row_view.as_slice().expect("row is contiguous");
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut xs[(ci * h + iy as usize) * w..][..w];
                    let srow = &src[oy * ow..oy * ow + ow];
                    for (ox, &s) in srow.iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
    x
}

impl<E: El> Layer<E> for Conv2d<E> {
    fn forward(&mut self, x: &ArrayD<E>) -> ArrayD<E> {
        let x4 = x
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv2d expects [N,C,H,W]");
        let (n, c, h, w) = x4.dim();
        assert_eq!(c, self.in_ch, "channel mismatch");
        let oh = out_len(h, self.k, self.stride, self.pad);
        let ow = out_len(w, self.k, self.stride, self.pad);
        let wmat = self.weight.w.view().into_dimensionality::<Ix2>().unwrap();
        let mut y = Array4::<E>::zeros((n, self.out_ch, oh, ow));
        for i in 0..n {
            let cols = im2col2d(&x4.index_axis(Axis(0), i), self.k, self.stride, self.pad, oh, ow);
            let yi = wmat.dot(&cols);
            let mut dst = y.index_axis_mut(Axis(0), i);
            for oc in 0..self.out_ch {
                let b = self.bias.w.as_slice().unwrap()[oc];
                let src = yi.row(oc);
                let mut plane = dst.index_axis_mut(Axis(0), oc);
                let plane = plane.as_slice_mut().unwrap();
                for (d, &s) in plane.iter_mut().zip(src.iter()) {
                    *d = s + b;
                }
            }
        }
        self.cache = Some(x4.to_owned());
        y.into_dyn()
    }

    fn backward(&mut self, gy: &ArrayD<E>) -> ArrayD<E> {
        let x = self.cache.as_ref().expect("backward before forward");
        let (n, c, h, w) = x.dim();
        let gy4 = gy.view().into_dimensionality::<Ix4>().expect("grad rank");
        let (_, _, oh, ow) = gy4.dim();
        let wmat = self.weight.w.view().into_dimensionality::<Ix2>().unwrap();
        let mut gx = Array4::<E>::zeros((n, c, h, w));
        let mut gw = Array2::<E>::zeros((self.out_ch, self.in_ch * self.k * self.k));
        let mut gb = Array1::<E>::zeros(self.out_ch);
        for i in 0..n {
            let cols = im2col2d(&x.index_axis(Axis(0), i), self.k, self.stride, self.pad, oh, ow);
            let gyi_owned;
            let gyi_view = gy4.index_axis(Axis(0), i);
            let gyi = {
                gyi_owned = gyi_view
                    .to_shape((self.out_ch, oh * ow))
                    .expect("reshape grad")
                    .to_owned();
                &gyi_owned
            };
            gw = gw + gyi.dot(&cols.t());
            gb = gb + gyi.sum_axis(Axis(1));
            let gcols = wmat.t().dot(gyi);
            let gxi = col2im2d(&gcols, c, h, w, self.k, self.stride, self.pad, oh, ow);
            gx.index_axis_mut(Axis(0), i).assign(&gxi);
        }
        self.weight.g.view_mut().into_dimensionality::<Ix2>().unwrap().scaled_add(E::one(), &gw);
        self.bias.g.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap().scaled_add(E::one(), &gb);
        gx.into_dyn()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

// ---------------------------------------------------------------------------
// Conv1d
// ---------------------------------------------------------------------------

/// 1D convolution over [N,C,L], zero padding.
pub struct Conv1d<E> {
    pub weight: Param<E>,
    pub bias: Param<E>,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    pad: usize,
    cache: Option<Array3<E>>,
}

impl<E: El> Conv1d<E> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = (in_ch * k) as f64;
        let bound = (1.0 / fan_in).sqrt();
        Self {
            weight: Param::uniform(&[out_ch, in_ch * k], bound, rng),
            bias: Param::uniform(&[out_ch], bound, rng),
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn same(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(in_ch, out_ch, 3, 1, 1, rng)
    }

    pub fn halving(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(in_ch, out_ch, 3, 2, 1, rng)
    }

    pub fn proj(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::new(in_ch, out_ch, 1, 1, 0, rng)
    }
}

fn im2col1d<E: El>(
    x: &[E],
    c: usize,
    l: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ol: usize,
) -> Array2<E> {
    let mut cols = Array2::<E>::zeros((c * k, ol));
    for ci in 0..c {
        for kk in 0..k {
            let row = ci * k + kk;
            let mut row_view = cols.row_mut(row);
            let dst = row_view.as_slice_mut().unwrap();
            let src = &x[ci * l..(ci + 1) * l];
            for (o, d) in dst.iter_mut().enumerate() {
                let ix = (o * stride + kk) as isize - pad as isize;
                if ix >= 0 && ix < l as isize {
                    *d = src[ix as usize];
                }
            }
        }
    }
    cols
}

fn col2im1d<E: El>(
    cols: &Array2<E>,
    c: usize,
    l: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ol: usize,
) -> Array2<E> {
    let mut x = Array2::<E>::zeros((c, l));
    let xs = x.as_slice_mut().unwrap();
    for ci in 0..c {
        for kk in 0..k {
            let row_view = cols.row(ci * k + kk);
            let src = row_view.as_slice().unwrap();
            let dst = &mut xs[ci * l..(ci + 1) * l];
            for (o, &s) in src.iter().enumerate().take(ol) {
                let ix = (o * stride + kk) as isize - pad as isize;
                if ix >= 0 && ix < l as isize {
                    dst[ix as usize] += s;
                }
            }
        }
    }
    x
}

impl<E: El> Layer<E> for Conv1d<E> {
    fn forward(&mut self, x: &ArrayD<E>) -> ArrayD<E> {
        let x3 = x
            .view()
            .into_dimensionality::<Ix3>()
            .expect("conv1d expects [N,C,L]");
        let (n, c, l) = x3.dim();
        assert_eq!(c, self.in_ch, "channel mismatch");
        let ol = out_len(l, self.k, self.stride, self.pad);
        let wmat = self.weight.w.view().into_dimensionality::<Ix2>().unwrap();
        let mut y = Array3::<E>::zeros((n, self.out_ch, ol));
        for i in 0..n {
            let xi = x3.index_axis(Axis(0), i);
            let cols = im2col1d(
                xi.as_slice().expect("contiguous"),
                c,
                l,
                self.k,
                self.stride,
                self.pad,
                ol,
            );
            let yi = wmat.dot(&cols);
            let mut dst = y.index_axis_mut(Axis(0), i);
            for oc in 0..self.out_ch {
                let b = self.bias.w.as_slice().unwrap()[oc];
                let mut lane = dst.index_axis_mut(Axis(0), oc);
                let lane = lane.as_slice_mut().unwrap();
                for (d, &s) in lane.iter_mut().zip(yi.row(oc).iter()) {
                    *d = s + b;
                }
            }
        }
        self.cache = Some(x3.to_owned());
        y.into_dyn()
    }

    fn backward(&mut self, gy: &ArrayD<E>) -> ArrayD<E> {
        let x = self.cache.as_ref().expect("backward before forward");
        let (n, c, l) = x.dim();
        let gy3 = gy.view().into_dimensionality::<Ix3>().expect("grad rank");
        let (_, _, ol) = gy3.dim();
        let wmat = self.weight.w.view().into_dimensionality::<Ix2>().unwrap();
        let mut gx = Array3::<E>::zeros((n, c, l));
        let mut gw = Array2::<E>::zeros((self.out_ch, self.in_ch * self.k));
        let mut gb = Array1::<E>::zeros(self.out_ch);
        for i in 0..n {
            let xi = x.index_axis(Axis(0), i);
            let cols = im2col1d(xi.as_slice().unwrap(), c, l, self.k, self.stride, self.pad, ol);
            let gyi = gy3
                .index_axis(Axis(0), i)
                .to_shape((self.out_ch, ol))
                .expect("reshape grad")
                .to_owned();
            gw = gw + gyi.dot(&cols.t());
            gb = gb + gyi.sum_axis(Axis(1));
            let gcols = wmat.t().dot(&gyi);
            let gxi = col2im1d(&gcols, c, l, self.k, self.stride, self.pad, ol);
            gx.index_axis_mut(Axis(0), i).assign(&gxi);
        }
        self.weight.g.view_mut().into_dimensionality::<Ix2>().unwrap().scaled_add(E::one(), &gw);
        self.bias.g.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap().scaled_add(E::one(), &gb);
        gx.into_dyn()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

// ---------------------------------------------------------------------------
// GroupNorm
// ---------------------------------------------------------------------------

/// Group normalization over [N,C,spatial...]: per sample, each channel
/// group is standardized over its channels and all spatial positions, then
/// scaled by per-channel affine parameters.
pub struct GroupNorm<E> {
    pub gamma: Param<E>,
    pub beta: Param<E>,
    groups: usize,
    channels: usize,
    eps: f64,
    cache: Option<(Array3<E>, Array2<E>, Vec<usize>)>,
}

impl<E: El> GroupNorm<E> {
    pub fn new(groups: usize, channels: usize) -> Self {
        assert!(groups >= 1 && channels.is_multiple_of(groups), "groups must divide channels");
        let mut gamma = Param::zeros(&[channels]);
        gamma.w.fill(E::one());
        Self { gamma, beta: Param::zeros(&[channels]), groups, channels, eps: 1e-5, cache: None }
    }

    /// Largest group count <= 8 dividing the channel width.
    pub fn auto(channels: usize) -> Self {
        let mut g = 8.min(channels);
        while !channels.is_multiple_of(g) {
            g -= 1;
        }
        Self::new(g, channels)
    }
}

impl<E: El> Layer<E> for GroupNorm<E> {
    fn forward(&mut self, x: &ArrayD<E>) -> ArrayD<E> {
        let shape: Vec<usize> = x.shape().to_vec();
        assert!(shape.len() >= 2, "group norm expects [N,C,...]");
        assert_eq!(shape[1], self.channels, "channel mismatch");
        let n = shape[0];
        let c = shape[1];
        let s: usize = shape[2..].iter().product::<usize>().max(1);
        let x3 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, c, s))
            .expect("reshape");
        let cpg = c / self.groups;
        let m = (cpg * s) as f64;
        let mut xhat = Array3::<E>::zeros((n, c, s));
        let mut inv = Array2::<E>::zeros((n, self.groups));
        for i in 0..n {
            for g in 0..self.groups {
                let c0 = g * cpg;
                let mut mean = 0.0f64;
                for ci in c0..c0 + cpg {
                    for si in 0..s {
                        mean += x3[[i, ci, si]].to_f64();
                    }
                }
                mean /= m;
                let mut var = 0.0f64;
                for ci in c0..c0 + cpg {
                    for si in 0..s {
                        let d = x3[[i, ci, si]].to_f64() - mean;
                        var += d * d;
                    }
                }
                var /= m;
                let iv = 1.0 / (var + self.eps).sqrt();
                inv[[i, g]] = E::from_f64(iv);
                for ci in c0..c0 + cpg {
                    for si in 0..s {
                        xhat[[i, ci, si]] = E::from_f64((x3[[i, ci, si]].to_f64() - mean) * iv);
                    }
                }
            }
        }
        let gamma = self.gamma.w.as_slice().unwrap();
        let beta = self.beta.w.as_slice().unwrap();
        let mut y = Array3::<E>::zeros((n, c, s));
        for i in 0..n {
            for ci in 0..c {
                for si in 0..s {
                    y[[i, ci, si]] = gamma[ci] * xhat[[i, ci, si]] + beta[ci];
                }
            }
        }
        self.cache = Some((xhat, inv, shape.clone()));
        y.into_shape_with_order(shape).expect("reshape back").into_dyn()
    }

    fn backward(&mut self, gy: &ArrayD<E>) -> ArrayD<E> {
        let (xhat, inv, shape) = self.cache.as_ref().expect("backward before forward");
        let n = shape[0];
        let c = shape[1];
        let s: usize = shape[2..].iter().product::<usize>().max(1);
        let gy3 = gy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, c, s))
            .expect("reshape");
        let cpg = c / self.groups;
        let m = (cpg * s) as f64;
        let gamma = self.gamma.w.as_slice().unwrap().to_vec();
        let mut dgamma = vec![0.0f64; c];
        let mut dbeta = vec![0.0f64; c];
        let mut gx = Array3::<E>::zeros((n, c, s));
        for i in 0..n {
            for g in 0..self.groups {
                let c0 = g * cpg;
                // Group means of dxhat and dxhat*xhat.
                let mut a = 0.0f64;
                let mut b = 0.0f64;
                for ci in c0..c0 + cpg {
                    let gm = gamma[ci].to_f64();
                    for si in 0..s {
                        let dy = gy3[[i, ci, si]].to_f64();
                        let xh = xhat[[i, ci, si]].to_f64();
                        dgamma[ci] += dy * xh;
                        dbeta[ci] += dy;
                        let dxh = dy * gm;
                        a += dxh;
                        b += dxh * xh;
                    }
                }
                a /= m;
                b /= m;
                let iv = inv[[i, g]].to_f64();
                for ci in c0..c0 + cpg {
                    let gm = gamma[ci].to_f64();
                    for si in 0..s {
                        let dy = gy3[[i, ci, si]].to_f64();
                        let xh = xhat[[i, ci, si]].to_f64();
                        let dxh = dy * gm;
                        gx[[i, ci, si]] = E::from_f64(iv * (dxh - a - xh * b));
                    }
                }
            }
        }
        let gg = self.gamma.g.as_slice_mut().unwrap();
        let gb = self.beta.g.as_slice_mut().unwrap();
        for ci in 0..c {
            gg[ci] += E::from_f64(dgamma[ci]);
            gb[ci] += E::from_f64(dbeta[ci]);
        }
        gx.into_shape_with_order(shape.clone()).expect("reshape back").into_dyn()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

// ---------------------------------------------------------------------------
// SiLU, Linear, Embedding
// ---------------------------------------------------------------------------

/// x * sigmoid(x), elementwise over any shape.
#[derive(Default)]
pub struct SiLU<E> {
    cache: Option<ArrayD<E>>,
}

impl<E: El> SiLU<E> {
    pub fn new() -> Self {
        Self { cache: None }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl<E: El> Layer<E> for SiLU<E> {
    fn forward(&mut self, x: &ArrayD<E>) -> ArrayD<E> {
        let y = x.mapv(|v| {
            let v = v.to_f64();
            E::from_f64(v * sigmoid(v))
        });
        self.cache = Some(x.clone());
        y
    }

    fn backward(&mut self, gy: &ArrayD<E>) -> ArrayD<E> {
        let x = self.cache.as_ref().expect("backward before forward");
        let mut gx = gy.clone();
        ndarray::Zip::from(&mut gx).and(x).for_each(|g, &v| {
            let v = v.to_f64();
            let s = sigmoid(v);
            *g = E::from_f64(g.to_f64() * (s * (1.0 + v * (1.0 - s))));
        });
        gx
    }
}

/// Fully connected layer on [N,F].
pub struct Linear<E> {
    pub weight: Param<E>,
    pub bias: Param<E>,
    in_f: usize,
    out_f: usize,
    cache: Option<Array2<E>>,
}

impl<E: El> Linear<E> {
    pub fn new(in_f: usize, out_f: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (1.0 / in_f as f64).sqrt();
        Self {
            weight: Param::uniform(&[out_f, in_f], bound, rng),
            bias: Param::uniform(&[out_f], bound, rng),
            in_f,
            out_f,
            cache: None,
        }
    }
}

impl<E: El> Layer<E> for Linear<E> {
    fn forward(&mut self, x: &ArrayD<E>) -> ArrayD<E> {
        let x2 = x
            .view()
            .into_dimensionality::<Ix2>()
            .expect("linear expects [N,F]");
        assert_eq!(x2.ncols(), self.in_f, "feature mismatch");
        let w = self.weight.w.view().into_dimensionality::<Ix2>().unwrap();
        let mut y = x2.dot(&w.t());
        let b = self.bias.w.as_slice().unwrap();
        for mut row in y.rows_mut() {
            for (v, &bi) in row.iter_mut().zip(b.iter()) {
                *v += bi;
            }
        }
        self.cache = Some(x2.to_owned());
        y.into_dyn()
    }

    fn backward(&mut self, gy: &ArrayD<E>) -> ArrayD<E> {
        let x = self.cache.as_ref().expect("backward before forward");
        let gy2 = gy.view().into_dimensionality::<Ix2>().expect("grad rank");
        assert_eq!(gy2.ncols(), self.out_f);
        let gw = gy2.t().dot(x);
        self.weight.g.view_mut().into_dimensionality::<Ix2>().unwrap().scaled_add(E::one(), &gw);
        let gb = gy2.sum_axis(Axis(0));
        self.bias.g.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap().scaled_add(E::one(), &gb);
        let w = self.weight.w.view().into_dimensionality::<Ix2>().unwrap();
        gy2.dot(&w).into_dyn()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Class-label lookup table. Not a [`Layer`]: its input is labels.
pub struct Embedding<E> {
    pub table: Param<E>,
    num: usize,
    dim: usize,
    cache: Option<Vec<usize>>,
}

impl<E: El> Embedding<E> {
    pub fn new(num: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { table: Param::randn(&[num, dim], 0.1, rng), num, dim, cache: None }
    }

    pub fn forward(&mut self, labels: &[usize]) -> Array2<E> {
        let t = self.table.w.view().into_dimensionality::<Ix2>().unwrap();
        let mut y = Array2::<E>::zeros((labels.len(), self.dim));
        for (i, &l) in labels.iter().enumerate() {
            assert!(l < self.num, "label {l} out of range");
            y.row_mut(i).assign(&t.row(l));
        }
        self.cache = Some(labels.to_vec());
        y
    }

    pub fn backward(&mut self, gy: &Array2<E>) {
        let labels = self.cache.as_ref().expect("backward before forward");
        let mut g = self.table.g.view_mut().into_dimensionality::<Ix2>().unwrap();
        for (i, &l) in labels.iter().enumerate() {
            let mut row = g.row_mut(l);
            row += &gy.row(i);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        vec![&mut self.table]
    }
}

// ---------------------------------------------------------------------------
// Resampling and pooling
// ---------------------------------------------------------------------------

/// Nearest-neighbor 2x upsampling on [N,C,H,W]. No parameters.
#[derive(Default)]
pub struct Upsample2d {
    in_shape: Option<Vec<usize>>,
}

impl Upsample2d {
    pub fn new() -> Self {
        Self { in_shape: None }
    }
}

impl<E: El> Layer<E> for Upsample2d {
    fn forward(&mut self, x: &ArrayD<E>) -> ArrayD<E> {
        let x4 = x.view().into_dimensionality::<Ix4>().expect("upsample2d rank");
        let (n, c, h, w) = x4.dim();
        let mut y = Array4::<E>::zeros((n, c, 2 * h, 2 * w));
        for i in 0..n {
            for ci in 0..c {
                for yy in 0..2 * h {
                    for xx in 0..2 * w {
                        y[[i, ci, yy, xx]] = x4[[i, ci, yy / 2, xx / 2]];
                    }
                }
            }
        }
        self.in_shape = Some(vec![n, c, h, w]);
        y.into_dyn()
    }

    fn backward(&mut self, gy: &ArrayD<E>) -> ArrayD<E> {
        let shape = self.in_shape.as_ref().expect("backward before forward");
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let gy4 = gy.view().into_dimensionality::<Ix4>().expect("grad rank");
        let mut gx = Array4::<E>::zeros((n, c, h, w));
        for i in 0..n {
            for ci in 0..c {
                for yy in 0..2 * h {
                    for xx in 0..2 * w {
                        let v = gy4[[i, ci, yy, xx]];
                        gx[[i, ci, yy / 2, xx / 2]] += v;
                    }
                }
            }
        }
        gx.into_dyn()
    }
}

/// Nearest-neighbor 2x upsampling on [N,C,L].
#[derive(Default)]
pub struct Upsample1d {
    in_shape: Option<Vec<usize>>,
}

impl Upsample1d {
    pub fn new() -> Self {
        Self { in_shape: None }
    }
}

impl<E: El> Layer<E> for Upsample1d {
    fn forward(&mut self, x: &ArrayD<E>) -> ArrayD<E> {
        let x3 = x.view().into_dimensionality::<Ix3>().expect("upsample1d rank");
        let (n, c, l) = x3.dim();
        let mut y = Array3::<E>::zeros((n, c, 2 * l));
        for i in 0..n {
            for ci in 0..c {
                for t in 0..2 * l {
                    y[[i, ci, t]] = x3[[i, ci, t / 2]];
                }
            }
        }
        self.in_shape = Some(vec![n, c, l]);
        y.into_dyn()
    }

    fn backward(&mut self, gy: &ArrayD<E>) -> ArrayD<E> {
        let shape = self.in_shape.as_ref().expect("backward before forward");
        let (n, c, l) = (shape[0], shape[1], shape[2]);
        let gy3 = gy.view().into_dimensionality::<Ix3>().expect("grad rank");
        let mut gx = Array3::<E>::zeros((n, c, l));
        for i in 0..n {
            for ci in 0..c {
                for t in 0..2 * l {
                    let v = gy3[[i, ci, t]];
                    gx[[i, ci, t / 2]] += v;
                }
            }
        }
        gx.into_dyn()
    }
}

/// Mean over all spatial positions: [N,C,...] -> [N,C].
pub fn global_avg_pool<E: El>(x: &ArrayD<E>) -> Array2<E> {
    let shape = x.shape();
    let (n, c) = (shape[0], shape[1]);
    let s: usize = shape[2..].iter().product::<usize>().max(1);
    let x3 = x
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, c, s))
        .expect("reshape");
    let inv = E::from_f64(1.0 / s as f64);
    let mut y = Array2::<E>::zeros((n, c));
    for i in 0..n {
        for ci in 0..c {
            let mut acc = E::zero();
            for si in 0..s {
                acc += x3[[i, ci, si]];
            }
            y[[i, ci]] = acc * inv;
        }
    }
    y
}

/// Gradient of [`global_avg_pool`] given the pooled grads and the input
/// spatial shape.
pub fn global_avg_pool_backward<E: El>(gy: &Array2<E>, in_shape: &[usize]) -> ArrayD<E> {
    let (n, c) = (in_shape[0], in_shape[1]);
    let s: usize = in_shape[2..].iter().product::<usize>().max(1);
    let inv = E::from_f64(1.0 / s as f64);
    let mut gx = Array3::<E>::zeros((n, c, s));
    for i in 0..n {
        for ci in 0..c {
            let v = gy[[i, ci]] * inv;
            for si in 0..s {
                gx[[i, ci, si]] = v;
            }
        }
    }
    gx.into_shape_with_order(in_shape.to_vec()).expect("reshape").into_dyn()
}

/// [`Layer`] wrapper around global average pooling for sequential stacks.
#[derive(Default)]
pub struct GlobalAvgPool {
    in_shape: Option<Vec<usize>>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self { in_shape: None }
    }
}

impl<E: El> Layer<E> for GlobalAvgPool {
    fn forward(&mut self, x: &ArrayD<E>) -> ArrayD<E> {
        self.in_shape = Some(x.shape().to_vec());
        global_avg_pool(x).into_dyn()
    }

    fn backward(&mut self, gy: &ArrayD<E>) -> ArrayD<E> {
        let shape = self.in_shape.as_ref().expect("backward before forward");
        let gy2 = gy.view().into_dimensionality::<Ix2>().expect("grad rank").to_owned();
        global_avg_pool_backward(&gy2, shape)
    }
}

/// Sinusoidal position features for integer timesteps: dim/2 sin lanes
/// followed by dim/2 cos lanes, geometric frequency ladder down to 1e-4.
pub fn sinusoid_embedding<E: El>(ts: &[f64], dim: usize) -> Array2<E> {
    assert!(dim >= 2 && dim.is_multiple_of(2), "embedding dim must be even");
    let half = dim / 2;
    let mut y = Array2::<E>::zeros((ts.len(), dim));
    for (i, &t) in ts.iter().enumerate() {
        for j in 0..half {
            let denom = if half > 1 { (half - 1) as f64 } else { 1.0 };
            let freq = (-(j as f64) * (10_000.0f64).ln() / denom).exp();
            y[[i, j]] = E::from_f64((t * freq).sin());
            y[[i, half + j]] = E::from_f64((t * freq).cos());
        }
    }
    y
}

/// A straight chain of layers.
pub struct Sequential<E: El> {
    pub layers: Vec<Box<dyn Layer<E>>>,
}

impl<E: El> Sequential<E> {
    pub fn new(layers: Vec<Box<dyn Layer<E>>>) -> Self {
        Self { layers }
    }

    pub fn push(&mut self, layer: impl Layer<E> + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn forward(&mut self, x: &ArrayD<E>) -> ArrayD<E> {
        let mut cur = x.clone();
        for l in &mut self.layers {
            cur = l.forward(&cur);
        }
        cur
    }

    pub fn backward(&mut self, gy: &ArrayD<E>) -> ArrayD<E> {
        let mut cur = gy.clone();
        for l in self.layers.iter_mut().rev() {
            cur = l.backward(&cur);
        }
        cur
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}
