//! Forward and backward kernels on plain tensors.
//!
//! Convolutions go through im2col + GEMM; the transposed convolution is the
//! exact adjoint of `conv2d` (its forward pass is `conv2d`'s input gradient).

use super::{Element, Tensor};
use crate::error::{dim_err, Result};

#[derive(Clone, Copy, Debug)]
struct Geom {
    n: usize,
    // `c_lo`/`h_lo`/`w_lo` describe the side that the *forward* conv reads
    // (input of conv2d, output of conv_transpose2d).
    c_lo: usize,
    h_lo: usize,
    w_lo: usize,
    // channels/extent of the side the forward conv writes.
    c_hi: usize,
    h_hi: usize,
    w_hi: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Geom {
    fn col_rows(&self) -> usize {
        self.c_lo * self.kh * self.kw
    }
    fn col_cols(&self) -> usize {
        self.h_hi * self.w_hi
    }
}

fn im2col<T: Element>(img: &[T], g: &Geom, cols: &mut [T]) {
    let (h, w, ho, wo) = (g.h_lo as isize, g.w_lo as isize, g.h_hi, g.w_hi);
    let (s, p) = (g.stride as isize, g.pad as isize);
    let plane = ho * wo;
    for c in 0..g.c_lo {
        let src = &img[c * g.h_lo * g.w_lo..(c + 1) * g.h_lo * g.w_lo];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = oy as isize * s - p + ki as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w_lo..(iy as usize + 1) * g.w_lo];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = ox as isize * s - p + kj as isize;
                        *o = if ix < 0 || ix >= w { T::zero() } else { src_row[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Element>(cols: &[T], g: &Geom, img: &mut [T]) {
    let (h, w, ho, wo) = (g.h_lo as isize, g.w_lo as isize, g.h_hi, g.w_hi);
    let (s, p) = (g.stride as isize, g.pad as isize);
    let plane = ho * wo;
    for c in 0..g.c_lo {
        let dst = &mut img[c * g.h_lo * g.w_lo..(c + 1) * g.h_lo * g.w_lo];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = oy as isize * s - p + ki as isize;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w_lo..(iy as usize + 1) * g.w_lo];
                    for (ox, &v) in src[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = ox as isize * s - p + kj as isize;
                        if ix >= 0 && ix < w {
                            dst_row[ix as usize] = dst_row[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

fn check_stride(stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(dim_err!("stride must be >= 1"));
    }
    Ok(())
}

fn check_bias<T: Element>(bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.numel() != channels {
            return Err(dim_err!("bias has {} entries, expected {}", b.numel(), channels));
        }
    }
    Ok(())
}

fn conv_geom<T: Element>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Geom> {
    check_stride(stride)?;
    let (n, cin, h, wd) = x.dims4()?;
    let (cout, wcin, kh, kw) = w.dims4()?;
    if cin != wcin {
        return Err(dim_err!("conv2d: input has {cin} channels, weight expects {wcin}"));
    }
    if kh > h + 2 * pad || kw > wd + 2 * pad {
        return Err(dim_err!("conv2d: kernel {kh}x{kw} larger than padded input {h}x{wd} (pad {pad})"));
    }
    Ok(Geom {
        n,
        c_lo: cin,
        h_lo: h,
        w_lo: wd,
        c_hi: cout,
        h_hi: (h + 2 * pad - kh) / stride + 1,
        w_hi: (wd + 2 * pad - kw) / stride + 1,
        kh,
        kw,
        stride,
        pad,
    })
}

fn convt_geom<T: Element>(x: &Tensor<T>, w: &Tensor<T>, stride: usize, pad: usize) -> Result<Geom> {
    check_stride(stride)?;
    let (n, cin, h, wd) = x.dims4()?;
    let (wcin, cout, kh, kw) = w.dims4()?;
    if cin != wcin {
        return Err(dim_err!("conv_transpose2d: input has {cin} channels, weight expects {wcin}"));
    }
    let full_h = (h - 1) * stride + kh;
    let full_w = (wd - 1) * stride + kw;
    if full_h <= 2 * pad || full_w <= 2 * pad {
        return Err(dim_err!("conv_transpose2d: padding {pad} consumes the whole output"));
    }
    Ok(Geom {
        n,
        c_lo: cout,
        h_lo: full_h - 2 * pad,
        w_lo: full_w - 2 * pad,
        c_hi: cin,
        h_hi: h,
        w_hi: wd,
        kh,
        kw,
        stride,
        pad,
    })
}

fn add_bias<T: Element>(out: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in out.chunks_mut(plane).zip(bias.iter().cycle()) {
        for v in chunk {
            *v = *v + b;
        }
    }
}

fn bias_grad<T: Element>(dy: &Tensor<T>) -> Result<Vec<T>> {
    let (n, c, h, w) = dy.dims4()?;
    let plane = h * w;
    let mut db = vec![T::zero(); c];
    for b in 0..n {
        for (ch, d) in db.iter_mut().enumerate() {
            let off = (b * c + ch) * plane;
            *d = dy.data()[off..off + plane].iter().fold(*d, |acc, &v| acc + v);
        }
    }
    Ok(db)
}

/// 2-D cross-correlation with zero padding.
///
/// `x: [N,Cin,H,W]`, `weight: [Cout,Cin,kh,kw]`, `bias: [Cout]`.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = conv_geom(x, weight, stride, pad)?;
    check_bias(bias, g.c_hi)?;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut out = Tensor::zeros([g.n, g.c_hi, g.h_hi, g.w_hi]);
    let in_sz = g.c_lo * g.h_lo * g.w_lo;
    let out_sz = g.c_hi * ncols;
    for b in 0..g.n {
        im2col(&x.data()[b * in_sz..(b + 1) * in_sz], &g, &mut cols);
        let dst = &mut out.data_mut()[b * out_sz..(b + 1) * out_sz];
        T::gemm(g.c_hi, rows, ncols, weight.data(), false, &cols, false, dst, false);
    }
    if let Some(bias) = bias {
        add_bias(out.data_mut(), bias.data(), ncols);
    }
    Ok(out)
}

/// `(d input, d weight, d bias)`; the first two are `None` when not requested.
pub type ConvGrads<T> = (Option<Tensor<T>>, Option<Tensor<T>>, Vec<T>);

/// Gradients of [`conv2d`].
pub fn conv2d_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    want_dx: bool,
    want_dw: bool,
) -> Result<ConvGrads<T>> {
    let g = conv_geom(x, weight, stride, pad)?;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let in_sz = g.c_lo * g.h_lo * g.w_lo;
    let out_sz = g.c_hi * ncols;
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut dw = want_dw.then(|| Tensor::zeros(weight.shape().to_vec()));
    for b in 0..g.n {
        let dyb = &dy.data()[b * out_sz..(b + 1) * out_sz];
        if let Some(dw) = dw.as_mut() {
            im2col(&x.data()[b * in_sz..(b + 1) * in_sz], &g, &mut cols);
            T::gemm(g.c_hi, ncols, rows, dyb, false, &cols, true, dw.data_mut(), true);
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(rows, g.c_hi, ncols, weight.data(), true, dyb, false, &mut cols, false);
            col2im(&cols, &g, &mut dx.data_mut()[b * in_sz..(b + 1) * in_sz]);
        }
    }
    Ok((dx, dw, bias_grad(dy)?))
}

/// Transposed convolution, the adjoint of [`conv2d`] with the same weight.
///
/// `x: [N,Cin,H,W]`, `weight: [Cin,Cout,kh,kw]`; output extent is
/// `(H-1)·stride - 2·pad + kh`.
pub fn conv_transpose2d<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = convt_geom(x, weight, stride, pad)?;
    check_bias(bias, g.c_lo)?;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let mut out = Tensor::zeros([g.n, g.c_lo, g.h_lo, g.w_lo]);
    let in_sz = g.c_hi * ncols;
    let out_sz = g.c_lo * g.h_lo * g.w_lo;
    for b in 0..g.n {
        let xb = &x.data()[b * in_sz..(b + 1) * in_sz];
        T::gemm(rows, g.c_hi, ncols, weight.data(), true, xb, false, &mut cols, false);
        col2im(&cols, &g, &mut out.data_mut()[b * out_sz..(b + 1) * out_sz]);
    }
    if let Some(bias) = bias {
        add_bias(out.data_mut(), bias.data(), g.h_lo * g.w_lo);
    }
    Ok(out)
}

/// Gradients of [`conv_transpose2d`]: `(d input, d weight, d bias)`.
pub fn conv_transpose2d_backward<T: Element>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    want_dx: bool,
    want_dw: bool,
) -> Result<ConvGrads<T>> {
    let g = convt_geom(x, weight, stride, pad)?;
    let (rows, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); rows * ncols];
    let in_sz = g.c_hi * ncols;
    let out_sz = g.c_lo * g.h_lo * g.w_lo;
    let mut dx = want_dx.then(|| Tensor::zeros(x.shape().to_vec()));
    let mut dw = want_dw.then(|| Tensor::zeros(weight.shape().to_vec()));
    for b in 0..g.n {
        im2col(&dy.data()[b * out_sz..(b + 1) * out_sz], &g, &mut cols);
        if let Some(dx) = dx.as_mut() {
            let dst = &mut dx.data_mut()[b * in_sz..(b + 1) * in_sz];
            T::gemm(g.c_hi, rows, ncols, weight.data(), false, &cols, false, dst, false);
        }
        if let Some(dw) = dw.as_mut() {
            let xb = &x.data()[b * in_sz..(b + 1) * in_sz];
            T::gemm(g.c_hi, ncols, rows, xb, false, &cols, true, dw.data_mut(), true);
        }
    }
    Ok((dx, dw, bias_grad(dy)?))
}

/// Per-(n, c) normalization without affine terms. Returns the output and
/// the per-slice `1/sqrt(var + eps)`.
pub fn instance_norm<T: Element>(x: &Tensor<T>, eps: T) -> Result<(Tensor<T>, Vec<T>)> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    if plane < 2 {
        return Err(dim_err!("instance_norm: degenerate {h}x{w} slice"));
    }
    let count = T::from_usize(plane).unwrap();
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut inv_stds = Vec::with_capacity(n * c);
    for (src, dst) in x.data().chunks(plane).zip(out.data_mut().chunks_mut(plane)) {
        let mean = src.iter().fold(T::zero(), |a, &v| a + v) / count;
        let var = src.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / count;
        let inv_std = (var + eps).sqrt().recip();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - mean) * inv_std;
        }
        inv_stds.push(inv_std);
    }
    Ok((out, inv_stds))
}

/// Input gradient of [`instance_norm`] from its output `y`.
pub fn instance_norm_backward<T: Element>(y: &Tensor<T>, inv_std: &[T], dy: &Tensor<T>) -> Tensor<T> {
    let (_, _, h, w) = y.dims4().expect("rank-4 by construction");
    let plane = h * w;
    let count = T::from_usize(plane).unwrap();
    let mut dx = Tensor::zeros(y.shape().to_vec());
    let slices = y.data().chunks(plane).zip(dy.data().chunks(plane));
    for ((ys, dys), (dxs, &is)) in slices.zip(dx.data_mut().chunks_mut(plane).zip(inv_std)) {
        let mean_dy = dys.iter().fold(T::zero(), |a, &v| a + v) / count;
        let mean_dy_y = ys.iter().zip(dys).fold(T::zero(), |a, (&yv, &d)| a + yv * d) / count;
        for ((d, &yv), &g) in dxs.iter_mut().zip(ys).zip(dys) {
            *d = is * (g - mean_dy - yv * mean_dy_y);
        }
    }
    dx
}

/// Mean over non-overlapping 2×2 blocks.
pub fn avg_downsample2<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(dim_err!("avg_downsample2: extents {h}x{w} must be even"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for (src, dst) in x.data().chunks(h * w).zip(out.data_mut().chunks_mut(ho * wo)) {
        for oy in 0..ho {
            let r0 = &src[2 * oy * w..(2 * oy + 1) * w];
            let r1 = &src[(2 * oy + 1) * w..(2 * oy + 2) * w];
            for ox in 0..wo {
                dst[oy * wo + ox] =
                    (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter;
            }
        }
    }
    Ok(out)
}

pub fn avg_downsample2_backward<T: Element>(input_shape: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (input_shape[2], input_shape[3]);
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut dx = Tensor::zeros(input_shape.to_vec());
    for (src, dst) in dy.data().chunks(ho * wo).zip(dx.data_mut().chunks_mut(h * w)) {
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * wo + x / 2] * quarter;
            }
        }
    }
    dx
}

/// Concatenate two rank-4 tensors on the channel axis.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (na, ca, ha, wa) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if na != nb || ha != hb || wa != wb {
        return Err(dim_err!("concat: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let (sa, sb) = (ca * ha * wa, cb * hb * wb);
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for i in 0..na {
        data.extend_from_slice(&a.data()[i * sa..(i + 1) * sa]);
        data.extend_from_slice(&b.data()[i * sb..(i + 1) * sb]);
    }
    Tensor::new([na, ca + cb, ha, wa], data)
}

/// Split a channel-concatenated gradient back into its two parts.
pub fn split_channels<T: Element>(
    d: &Tensor<T>,
    a_shape: &[usize],
    b_shape: &[usize],
) -> (Tensor<T>, Tensor<T>) {
    let sa: usize = a_shape[1..].iter().product();
    let sb: usize = b_shape[1..].iter().product();
    let mut da = Vec::with_capacity(sa * a_shape[0]);
    let mut db = Vec::with_capacity(sb * b_shape[0]);
    for chunk in d.data().chunks(sa + sb) {
        da.extend_from_slice(&chunk[..sa]);
        db.extend_from_slice(&chunk[sa..]);
    }
    (
        Tensor::new(a_shape.to_vec(), da).unwrap(),
        Tensor::new(b_shape.to_vec(), db).unwrap(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    // Direct six-loop reference, independent of im2col.
    #[allow(clippy::needless_range_loop)]
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], s: usize, p: usize) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4().unwrap();
        let (cout, _, kh, kw) = w.dims4().unwrap();
        let ho = (h + 2 * p - kh) / s + 1;
        let wo = (wd + 2 * p - kw) / s + 1;
        let mut out = Tensor::zeros([n, cout, ho, wo]);
        for bi in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * s + ki) as isize - p as isize;
                                    let ix = (ox * s + kj) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((bi * cin + ci) * h + iy as usize) * wd + ix as usize;
                                    let wi = ((co * cin + ci) * kh + ki) * kw + kj;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::<f64>::from_fn([1, 1, 3, 3], |i| i as f64);
        let w = Tensor::full([1, 1, 1, 1], 1.0);
        let b = Tensor::zeros([1]);
        assert_eq!(conv2d(&x, &w, Some(&b), 1, 0).unwrap(), x);
    }

    #[test]
    fn conv_ones_stride2() {
        let x = Tensor::<f64>::full([1, 1, 4, 4], 1.0);
        let w = Tensor::full([1, 1, 2, 2], 1.0);
        let y = conv2d(&x, &w, None, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(s, p, k) in &[(1, 1, 3), (2, 1, 3), (2, 2, 4), (1, 0, 1), (3, 2, 5)] {
            let x = rand_tensor(&[2, 3, 8, 8], &mut rng);
            let w = rand_tensor(&[4, 3, k, k], &mut rng);
            let b = rand_tensor(&[4], &mut rng);
            let fast = conv2d(&x, &w, Some(&b), s, p).unwrap();
            let slow = naive_conv(&x, &w, b.data(), s, p);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() <= 1e-12 * e.abs().max(1.0), "{a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros([1, 2, 4, 4]);
        let w = Tensor::zeros([1, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &w, None, 1, 1), Err(crate::Error::Dimension(_))));
        assert!(conv2d(&x, &Tensor::zeros([1, 2, 7, 7]), None, 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros([1, 2, 3, 3]), None, 0, 1).is_err());
    }

    #[test]
    fn transpose_shapes_and_values() {
        let x = Tensor::<f64>::from_fn([1, 1, 2, 2], |i| i as f64 + 1.0);
        let w = Tensor::full([1, 1, 2, 2], 1.0);
        let y = conv_transpose2d(&x, &w, None, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        let x = Tensor::<f64>::full([1, 1, 1, 1], 2.0);
        let y = conv_transpose2d(&x, &w, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 2.0));
        let x = Tensor::<f64>::zeros([1, 2, 2, 2]);
        assert!(conv_transpose2d(&x, &w, None, 2, 0).is_err());
    }

    #[test]
    fn transpose_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // shapes chosen so that (H + 2p - k) is divisible by the stride
        for &(h, s, p, k) in &[(8, 2, 1, 4), (7, 1, 1, 3), (9, 2, 1, 3), (6, 2, 2, 4)] {
            let x = rand_tensor(&[2, 3, h, h], &mut rng);
            let w = rand_tensor(&[5, 3, k, k], &mut rng);
            let cx = conv2d(&x, &w, None, s, p).unwrap();
            let y = rand_tensor(cx.shape(), &mut rng);
            let ty = conv_transpose2d(&y, &w, None, s, p).unwrap();
            assert_eq!(ty.shape(), x.shape());
            let lhs = cx.dot(&y).unwrap();
            let rhs = x.dot(&ty).unwrap();
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn conv_input_grad_is_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&[1, 2, 8, 8], &mut rng);
        let w = rand_tensor(&[3, 2, 4, 4], &mut rng);
        let dy = rand_tensor(&[1, 3, 4, 4], &mut rng);
        let (dx, _, _) = conv2d_backward(&x, &w, &dy, 2, 1, true, false).unwrap();
        let t = conv_transpose2d(&dy, &w, None, 2, 1).unwrap();
        assert_eq!(dx.unwrap(), t);
    }

    #[test]
    fn instance_norm_cases() {
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = instance_norm(&x, 1e-5).unwrap();
        let mean = y.mean();
        let var = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-5);
        // hand values: mean 2.5, var 1.25
        let expect = (1.0 - 2.5) / (1.25f64 + 1e-5).sqrt();
        assert!((y.data()[0] - expect).abs() < 1e-15);

        let (again, _) = instance_norm(&y, 1e-5).unwrap();
        for (a, b) in again.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-5);
        }

        let c = Tensor::<f64>::full([1, 1, 3, 3], 7.0);
        let (z, _) = instance_norm(&c, 1e-5).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));

        assert!(instance_norm(&Tensor::<f64>::zeros([2, 2, 1, 1]), 1e-5).is_err());
    }

    #[test]
    fn downsample_cases() {
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![0.0, 0.0, 4.0, 4.0]).unwrap();
        assert_eq!(avg_downsample2(&x).unwrap().data(), &[2.0]);
        let c = Tensor::<f64>::full([2, 3, 6, 4], 1.5);
        let d = avg_downsample2(&c).unwrap();
        assert_eq!(d.shape(), &[2, 3, 3, 2]);
        assert!(d.data().iter().all(|&v| v == 1.5));
        assert!(avg_downsample2(&Tensor::<f64>::zeros([1, 1, 3, 4])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = rand_tensor(&[1, 1, 8, 8], &mut rng);
        let twice = avg_downsample2(&avg_downsample2(&x).unwrap()).unwrap();
        for by in 0..2 {
            for bx in 0..2 {
                let mut s = 0.0;
                for y in 0..4 {
                    for xx in 0..4 {
                        s += x.data()[(by * 4 + y) * 8 + bx * 4 + xx];
                    }
                }
                assert!((twice.data()[by * 2 + bx] - s / 16.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn concat_then_split_restores() {
        let a = Tensor::<f64>::from_fn([2, 1, 2, 2], |i| i as f64);
        let b = Tensor::<f64>::from_fn([2, 3, 2, 2], |i| -(i as f64));
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 4, 2, 2]);
        let (ra, rb) = split_channels(&c, a.shape(), b.shape());
        assert_eq!((ra, rb), (a, b));
    }
}
