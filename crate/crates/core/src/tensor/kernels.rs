//! Forward and backward kernels on raw NCHW buffers.
//!
//! The tape in [`super::Tape`] owns shapes and bookkeeping; everything here is
//! plain slice arithmetic so the kernels can be tested and benchmarked on
//! their own.

use super::Real;

/// Geometry of a 2-D convolution with a square kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn patch_len(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let k = g.k;
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
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

fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let (ho, wo) = g.out_hw();
    let k = g.k;
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[base + ix as usize] = plane[base + ix as usize] + src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolution through a patch matrix and a matrix product.
pub fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    let kk = g.patch_len();
    let mut out = vec![T::zero(); g.n * g.cout * plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * plane]
    };
    for n in 0..g.n {
        let xn = &x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
        let on = &mut out[n * g.cout * plane..(n + 1) * g.cout * plane];
        if let Some(b) = bias {
            for (co, row) in on.chunks_exact_mut(plane).enumerate() {
                row.fill(b[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        let patches: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        T::gemm(
            g.cout,
            kk,
            plane,
            T::one(),
            weight,
            (kk as isize, 1),
            patches,
            (plane as isize, 1),
            beta,
            on,
            (plane as isize, 1),
        );
    }
    out
}

/// Gradients of a convolution: (d input, d weight, d bias).
pub fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dy: &[T],
    need_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let (ho, wo) = g.out_hw();
    let plane = ho * wo;
    let kk = g.patch_len();
    let mut dw = vec![T::zero(); g.cout * kk];
    let mut db = vec![T::zero(); g.cout];
    let mut dx = need_dx.then(|| vec![T::zero(); x.len()]);
    let mut cols = vec![T::zero(); kk * plane];
    let mut dcols = vec![T::zero(); kk * plane];
    for n in 0..g.n {
        let xn = &x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
        let dyn_ = &dy[n * g.cout * plane..(n + 1) * g.cout * plane];
        for (co, row) in dyn_.chunks_exact(plane).enumerate() {
            db[co] = db[co] + row.iter().copied().sum::<T>();
        }
        let patches: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        // dW += dY · patchesᵀ
        T::gemm(
            g.cout,
            plane,
            kk,
            T::one(),
            dyn_,
            (plane as isize, 1),
            patches,
            (1, plane as isize),
            T::one(),
            &mut dw,
            (kk as isize, 1),
        );
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
            if g.is_pointwise() {
                T::gemm(
                    kk,
                    g.cout,
                    plane,
                    T::one(),
                    weight,
                    (1, kk as isize),
                    dyn_,
                    (plane as isize, 1),
                    T::one(),
                    dxn,
                    (plane as isize, 1),
                );
            } else {
                T::gemm(
                    kk,
                    g.cout,
                    plane,
                    T::one(),
                    weight,
                    (1, kk as isize),
                    dyn_,
                    (plane as isize, 1),
                    T::zero(),
                    &mut dcols,
                    (plane as isize, 1),
                );
                col2im(g, &dcols, dxn);
            }
        }
    }
    (dx, dw, db)
}

/// Reference convolution by explicit window sums.
pub fn conv2d_direct<T: Real>(g: &ConvGeom, x: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let (ho, wo) = g.out_hw();
    let mut out = vec![T::zero(); g.n * g.cout * ho * wo];
    for n in 0..g.n {
        for co in 0..g.cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(T::zero(), |b| b[co]);
                    for ci in 0..g.cin {
                        for ki in 0..g.k {
                            for kj in 0..g.k {
                                let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                let xv = x[((n * g.cin + ci) * g.h + iy as usize) * g.w + ix as usize];
                                let wv = weight[((co * g.cin + ci) * g.k + ki) * g.k + kj];
                                acc = acc + xv * wv;
                            }
                        }
                    }
                    out[((n * g.cout + co) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    out
}

/// Batch statistics from a train-mode normalization pass.
pub struct NormStats<T> {
    pub mean: Vec<T>,
    /// Biased variance, used for normalization.
    pub var: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Per-channel mean and biased variance over N, H, W.
pub fn channel_stats<T: Real>(x: &[T], n: usize, c: usize, hw: usize, eps: T) -> NormStats<T> {
    let count = T::lit((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s = s + x[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().copied().sum::<T>();
        }
        let m = s / count;
        let mut v = T::zero();
        for b in 0..n {
            for &xv in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                v = v + (xv - m) * (xv - m);
            }
        }
        mean[ch] = m;
        var[ch] = v / count;
    }
    let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    NormStats { mean, var, inv_std }
}

/// `y = gamma * (x - mean) * inv_std + beta`, returning (y, xhat).
pub fn affine_normalize<T: Real>(
    x: &[T],
    c: usize,
    hw: usize,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    for (i, block) in x.chunks_exact(hw).enumerate() {
        let ch = i % c;
        for (j, &xv) in block.iter().enumerate() {
            let h = (xv - mean[ch]) * inv_std[ch];
            xhat[i * hw + j] = h;
            y[i * hw + j] = gamma[ch] * h + beta[ch];
        }
    }
    (y, xhat)
}

/// Backward of train-mode batch norm: (dx, dgamma, dbeta).
pub fn batch_norm_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    n: usize,
    c: usize,
    hw: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (dgamma, dbeta) = affine_param_grads(dy, xhat, c, hw);
    let m = T::lit((n * hw) as f64);
    let mut dx = vec![T::zero(); dy.len()];
    for ch in 0..c {
        // Σ dxhat and Σ dxhat·xhat, with dxhat = dy·gamma
        let sum_dxhat = dbeta[ch] * gamma[ch];
        let sum_dxhat_xhat = dgamma[ch] * gamma[ch];
        let k = inv_std[ch] / m;
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for j in off..off + hw {
                let dxhat = dy[j] * gamma[ch];
                dx[j] = k * (m * dxhat - sum_dxhat - xhat[j] * sum_dxhat_xhat);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Backward of the fixed-statistics affine normalization: (dx, dgamma, dbeta).
pub fn affine_normalize_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    inv_std: &[T],
    gamma: &[T],
    c: usize,
    hw: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (dgamma, dbeta) = affine_param_grads(dy, xhat, c, hw);
    let mut dx = vec![T::zero(); dy.len()];
    for (i, block) in dy.chunks_exact(hw).enumerate() {
        let ch = i % c;
        let k = gamma[ch] * inv_std[ch];
        for (j, &d) in block.iter().enumerate() {
            dx[i * hw + j] = d * k;
        }
    }
    (dx, dgamma, dbeta)
}

fn affine_param_grads<T: Real>(dy: &[T], xhat: &[T], c: usize, hw: usize) -> (Vec<T>, Vec<T>) {
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (i, block) in dy.chunks_exact(hw).enumerate() {
        let ch = i % c;
        let xh = &xhat[i * hw..(i + 1) * hw];
        for (&d, &h) in block.iter().zip(xh) {
            dgamma[ch] = dgamma[ch] + d * h;
            dbeta[ch] = dbeta[ch] + d;
        }
    }
    (dgamma, dbeta)
}

/// 3×3 stride-1 max pool with −∞ padding. Returns values and the flat
/// source index of each maximum (first in scan order on ties).
pub fn max_pool3_forward<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let mut out = vec![T::zero(); x.len()];
    let mut arg = vec![0u32; x.len()];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..h {
            for xx in 0..w {
                let mut best = T::neg_infinity();
                let mut best_i = base + y * w + xx;
                for yy in y.saturating_sub(1)..(y + 2).min(h) {
                    for xj in xx.saturating_sub(1)..(xx + 2).min(w) {
                        let i = base + yy * w + xj;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out[base + y * w + xx] = best;
                arg[base + y * w + xx] = best_i as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool3_backward<T: Real>(dy: &[T], arg: &[u32]) -> Vec<T> {
    let mut dx = vec![T::zero(); dy.len()];
    for (&d, &i) in dy.iter().zip(arg) {
        dx[i as usize] = dx[i as usize] + d;
    }
    dx
}

/// Source taps for one axis of half-pixel bilinear resampling.
fn bilinear_taps<T: Real>(src: usize, dst: usize) -> Vec<(usize, usize, T)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, T::lit(pos - i0 as f64))
        })
        .collect()
}

/// Bilinear resize with half-pixel centers (align-corners false).
pub fn upsample_forward<T: Real>(x: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ty = bilinear_taps::<T>(h, oh);
    let tx = bilinear_taps::<T>(w, ow);
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (T::one() - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (T::one() - fx) + src[y1 * w + x1] * fx;
                dst[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn upsample_backward<T: Real>(dy: &[T], planes: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ty = bilinear_taps::<T>(h, oh);
    let tx = bilinear_taps::<T>(w, ow);
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let g = &dy[p * oh * ow..(p + 1) * oh * ow];
        let d = &mut dx[p * h * w..(p + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                d[y0 * w + x0] = d[y0 * w + x0] + top * (T::one() - fx);
                d[y0 * w + x1] = d[y0 * w + x1] + top * fx;
                d[y1 * w + x0] = d[y1 * w + x0] + bot * (T::one() - fx);
                d[y1 * w + x1] = d[y1 * w + x1] + bot * fx;
            }
        }
    }
    dx
}

/// Softmax over the channel axis of an NCHW buffer.
pub fn softmax_channels_forward<T: Real>(x: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut m = T::neg_infinity();
            for ch in 0..c {
                m = m.max(x[base + ch * hw + p]);
            }
            let mut s = T::zero();
            for ch in 0..c {
                let e = (x[base + ch * hw + p] - m).exp();
                y[base + ch * hw + p] = e;
                s = s + e;
            }
            for ch in 0..c {
                y[base + ch * hw + p] = y[base + ch * hw + p] / s;
            }
        }
    }
    y
}

pub fn softmax_channels_backward<T: Real>(y: &[T], dy: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); y.len()];
    for b in 0..n {
        let base = b * c * hw;
        for p in 0..hw {
            let mut dot = T::zero();
            for ch in 0..c {
                let i = base + ch * hw + p;
                dot = dot + dy[i] * y[i];
            }
            for ch in 0..c {
                let i = base + ch * hw + p;
                dx[i] = y[i] * (dy[i] - dot);
            }
        }
    }
    dx
}

/// Probability floor used by sigmoid outputs and log-based losses.
pub const PROB_EPS: f64 = 1e-6;

/// Logistic function clamped to `[PROB_EPS, 1 - PROB_EPS]`.
pub fn sigmoid_clamped<T: Real>(x: T) -> T {
    let eps = T::lit(PROB_EPS);
    let p = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    if p.is_nan() {
        return p;
    }
    p.max(eps).min(T::one() - eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn unrolled_conv_matches_direct_over_geometry_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in [1, 3, 5] {
            for stride in 1..=3 {
                for pad in 0..=2 {
                    let g = ConvGeom { n: 2, cin: 3, h: 7, w: 6, cout: 4, k, stride, pad };
                    if g.h + 2 * pad < k || g.w + 2 * pad < k {
                        continue;
                    }
                    let x = random(&mut rng, 2 * 3 * 7 * 6);
                    let w = random(&mut rng, 4 * 3 * k * k);
                    let b = random(&mut rng, 4);
                    let fast = conv2d_forward(&g, &x, &w, Some(&b));
                    let slow = conv2d_direct(&g, &x, &w, Some(&b));
                    assert_eq!(fast.len(), slow.len());
                    for (a, s) in fast.iter().zip(&slow) {
                        assert!((a - s).abs() < 1e-12, "k={k} stride={stride} pad={pad}");
                    }
                }
            }
        }
    }

    #[test]
    fn conv_output_shape_formula() {
        let g = ConvGeom { n: 1, cin: 1, h: 8, w: 8, cout: 1, k: 3, stride: 2, pad: 1 };
        assert_eq!(g.out_hw(), (4, 4));
    }

    #[test]
    fn max_pool_single_spike_spreads_to_block() {
        let mut x = vec![0.0f64; 25];
        x[12] = 1.0;
        let (y, _) = max_pool3_forward(&x, 1, 5, 5);
        for r in 0..5 {
            for c in 0..5 {
                let want = if (1..=3).contains(&r) && (1..=3).contains(&c) { 1.0 } else { 0.0 };
                assert_eq!(y[r * 5 + c], want);
            }
        }
    }

    #[test]
    fn bilinear_half_pixel_row() {
        let y = upsample_forward(&[0.0f64, 2.0], 1, 1, 2, 1, 4);
        assert_eq!(y, vec![0.0, 0.5, 1.5, 2.0]);
    }

    #[test]
    fn upsample_backward_is_adjoint_of_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 2 * 3 * 5);
        let g = random(&mut rng, 2 * 7 * 11);
        let y = upsample_forward(&x, 2, 3, 5, 7, 11);
        let dx = upsample_backward(&g, 2, 3, 5, 7, 11);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_clamped_and_symmetric() {
        assert_eq!(sigmoid_clamped(0.0f64), 0.5);
        assert_eq!(sigmoid_clamped(1e4f64), 1.0 - PROB_EPS);
        assert_eq!(sigmoid_clamped(-1e4f64), PROB_EPS);
        let p = sigmoid_clamped(1.3f64);
        let q = sigmoid_clamped(-1.3f64);
        assert!((p + q - 1.0).abs() < 1e-15);
    }
}
