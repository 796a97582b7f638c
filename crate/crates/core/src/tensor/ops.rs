use super::{expect_rank, LayerParams, Tensor, TensorError};
use crate::Scalar;

/// Output indices `j` for which `j * stride + offset` lands inside `[0, in_len)`.
#[inline]
fn tap_range(out_len: usize, in_len: usize, offset: isize, stride: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let last = in_len as isize - 1 - offset;
    let hi = if last < 0 { 0 } else { (last / s + 1).min(out_len as isize) };
    let lo = lo.max(0) as usize;
    (lo, (hi.max(0) as usize).max(lo))
}

fn conv_output_extent(input: usize, kernel: usize, padding: usize, stride: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

fn check_conv_shapes<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
) -> Result<(usize, usize), TensorError> {
    expect_rank(input, 4, "conv2d input must be N x C x H x W")?;
    let ks = params.kernel.shape();
    if input.shape()[1] != ks[1] {
        return Err(TensorError::ShapeMismatch {
            context: "conv2d input channels vs kernel in-features",
            left: input.shape().to_vec(),
            right: ks.to_vec(),
        });
    }
    if params.stride == 0 {
        return Err(TensorError::Invalid("stride must be at least 1".into()));
    }
    let ho = conv_output_extent(input.shape()[2], ks[2], params.padding, params.stride);
    let wo = conv_output_extent(input.shape()[3], ks[3], params.padding, params.stride);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok((ho, wo)),
        _ => Err(TensorError::ShapeMismatch {
            context: "conv2d kernel larger than padded input",
            left: input.shape().to_vec(),
            right: ks.to_vec(),
        }),
    }
}

/// 2-d cross-correlation over an `N x C x H x W` batch.
///
/// `out[n,o,i,j] = bias[o] + sum_{c,a,b} W[o,c,a,b] * x[n,c,i*s+a-p,j*s+b-p]`,
/// with out-of-bounds taps contributing zero.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>) -> Result<Tensor<T>, TensorError> {
    let (ho, wo) = check_conv_shapes(input, params)?;
    if params.stride == 1 {
        return Ok(conv2d_unit_stride(input, params, ho, wo));
    }
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let o_count = params.out_features();
    let k = params.kernel_size();
    let (pad, stride) = (params.padding as isize, params.stride);
    let mut out = Tensor::zeros(&[n, o_count, ho, wo]);
    let kernel = params.kernel.data();
    let inp = input.data();
    let plane_in = h * w;
    let plane_out = ho * wo;
    for (bi, out_batch) in out.data_mut().chunks_mut(o_count * plane_out).enumerate() {
        for (o, out_plane) in out_batch.chunks_mut(plane_out).enumerate() {
            out_plane.fill(params.bias.data()[o]);
            for ci in 0..c {
                let in_plane = &inp[(bi * c + ci) * plane_in..][..plane_in];
                let taps = &kernel[(o * c + ci) * k * k..][..k * k];
                for a in 0..k {
                    for b in 0..k {
                        let wv = taps[a * k + b];
                        let (jlo, jhi) = tap_range(wo, w, b as isize - pad, stride);
                        if jlo >= jhi {
                            continue;
                        }
                        for i in 0..ho {
                            let y = (i * stride) as isize + a as isize - pad;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            let in_row = &in_plane[y as usize * w..][..w];
                            let out_row = &mut out_plane[i * wo..][..wo];
                            for j in jlo..jhi {
                                let x = ((j * stride) as isize + b as isize - pad) as usize;
                                out_row[j] += wv * in_row[x];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Copies `planes` planes of `h x w` into zero-bordered `(h + 2p) x (w + 2p)` planes.
fn pad_planes<T: Scalar>(data: &[T], planes: usize, h: usize, w: usize, p: usize) -> Vec<T> {
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::zero(); planes * hp * wp];
    for (src, dst) in data.chunks(h * w).zip(out.chunks_mut(hp * wp)) {
        for (y, row) in src.chunks(w).enumerate() {
            dst[(y + p) * wp + p..][..w].copy_from_slice(row);
        }
    }
    out
}

/// `acc[i] += sum_t taps[t] * src[i + offsets[t]]`.
#[inline(always)]
fn gather<T: Scalar, const N: usize>(acc: &mut [T], src: &[T], taps: &[T; N], offsets: &[usize; N]) {
    let n = acc.len();
    let views: [&[T]; N] = std::array::from_fn(|t| &src[offsets[t]..offsets[t] + n]);
    for (i, a) in acc.iter_mut().enumerate() {
        let mut s = *a;
        for t in 0..N {
            s += taps[t] * views[t][i];
        }
        *a = s;
    }
}

/// `sum_i g[i] * src[i + offsets[t]]` for every tap `t`, two lanes at a time.
#[inline(always)]
fn tap_dots<T: Scalar, const N: usize>(g: &[T], src: &[T], offsets: &[usize; N]) -> [T; N] {
    let n = g.len();
    let views: [&[T]; N] = std::array::from_fn(|t| &src[offsets[t]..offsets[t] + n]);
    let mut lanes = [[T::zero(); 2]; N];
    let pairs = n / 2;
    for p in 0..pairs {
        let i = 2 * p;
        let (g0, g1) = (g[i], g[i + 1]);
        for t in 0..N {
            lanes[t][0] += g0 * views[t][i];
            lanes[t][1] += g1 * views[t][i + 1];
        }
    }
    if n % 2 == 1 {
        for t in 0..N {
            lanes[t][0] += g[n - 1] * views[t][n - 1];
        }
    }
    std::array::from_fn(|t| lanes[t][0] + lanes[t][1])
}

/// Per-plane kernels for stride-1 convolution over padded planes, with the
/// tap count fixed at compile time when it is one of the common sizes.
trait PlaneKernel<T: Scalar> {
    fn gather(&self, acc: &mut [T], src: &[T], taps: &[T], offsets: &[usize]);
    fn dots(&self, g: &[T], src: &[T], offsets: &[usize], out: &mut [T]);
}

struct Fixed<const N: usize>;
struct Dynamic;

impl<T: Scalar, const N: usize> PlaneKernel<T> for Fixed<N> {
    #[inline(always)]
    fn gather(&self, acc: &mut [T], src: &[T], taps: &[T], offsets: &[usize]) {
        gather::<T, N>(acc, src, taps.try_into().expect("tap count"), offsets.try_into().expect("tap count"));
    }

    #[inline(always)]
    fn dots(&self, g: &[T], src: &[T], offsets: &[usize], out: &mut [T]) {
        let d = tap_dots::<T, N>(g, src, offsets.try_into().expect("tap count"));
        for (o, v) in out.iter_mut().zip(d) {
            *o += v;
        }
    }
}

impl<T: Scalar> PlaneKernel<T> for Dynamic {
    #[inline(always)]
    fn gather(&self, acc: &mut [T], src: &[T], taps: &[T], offsets: &[usize]) {
        for (&w, &off) in taps.iter().zip(offsets) {
            for (a, &x) in acc.iter_mut().zip(&src[off..]) {
                *a += w * x;
            }
        }
    }

    #[inline(always)]
    fn dots(&self, g: &[T], src: &[T], offsets: &[usize], out: &mut [T]) {
        for (o, &off) in out.iter_mut().zip(offsets) {
            *o += g.iter().zip(&src[off..]).map(|(&a, &b)| a * b).sum::<T>();
        }
    }
}

/// Binds `$k` to the plane kernel for `$taps` taps and evaluates `$body`
/// with it, statically dispatched.
macro_rules! with_kernel {
    ($taps:expr, $k:ident => $body:expr) => {
        match $taps {
            1 => {
                let $k = Fixed::<1>;
                $body
            }
            9 => {
                let $k = Fixed::<9>;
                $body
            }
            25 => {
                let $k = Fixed::<25>;
                $body
            }
            _ => {
                let $k = Dynamic;
                $body
            }
        }
    };
}

/// Runs `body` compiled for AVX2 when the CPU supports it. Only the vector
/// width changes (multiply and add are never fused), so results are
/// bit-identical either way.
#[inline(always)]
fn wide_dispatch<R>(body: impl FnOnce() -> R) -> R {
    #[cfg(target_arch = "x86_64")]
    {
        #[target_feature(enable = "avx2")]
        fn wide<R>(body: impl FnOnce() -> R) -> R {
            body()
        }
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature `wide` is compiled for was detected at runtime.
            return unsafe { wide(body) };
        }
    }
    body()
}

/// Stride-1 convolution on zero-padded planes. Outputs are laid out with the
/// padded row pitch so each tap reads one contiguous run; the surplus
/// columns are dropped when copying out.
fn conv2d_unit_stride<T: Scalar>(input: &Tensor<T>, params: &LayerParams<T>, ho: usize, wo: usize) -> Tensor<T> {
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let (o_count, k, p) = (params.out_features(), params.kernel_size(), params.padding);
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let padded = pad_planes(input.data(), n * c, h, w, p);
    let kernel = params.kernel.data();
    let offsets: Vec<usize> = (0..k * k).map(|t| (t / k) * wp + t % k).collect();
    let span = (ho - 1) * wp + wo;
    let mut acc = vec![T::zero(); span];
    let mut out = Tensor::zeros(&[n, o_count, ho, wo]);
    wide_dispatch(#[inline(always)] || with_kernel!(k * k, kern => {
        for (bi, out_batch) in out.data_mut().chunks_mut(o_count * ho * wo).enumerate() {
            for (o, out_plane) in out_batch.chunks_mut(ho * wo).enumerate() {
                acc.fill(params.bias.data()[o]);
                for ci in 0..c {
                    let src = &padded[(bi * c + ci) * hp * wp..][..hp * wp];
                    kern.gather(&mut acc, src, &kernel[(o * c + ci) * k * k..][..k * k], &offsets);
                }
                for (i, row) in out_plane.chunks_mut(wo).enumerate() {
                    row.copy_from_slice(&acc[i * wp..][..wo]);
                }
            }
        }
    }));
    out
}

/// Backward counterpart of [`conv2d_unit_stride`]. The input gradient is a
/// gather of the upstream gradient with the taps mirrored.
#[allow(clippy::too_many_arguments)]
fn conv2d_backward_unit_stride<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    upstream: &Tensor<T>,
    grad_kernel: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
    need_input_grad: bool,
    ho: usize,
    wo: usize,
) -> Option<Tensor<T>> {
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let (o_count, k, p) = (params.out_features(), params.kernel_size(), params.padding);
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let plane = hp * wp;
    let padded = pad_planes(input.data(), n * c, h, w, p);
    let kernel = params.kernel.data();
    let up = upstream.data();
    let span = (ho - 1) * wp + wo;
    let offsets: Vec<usize> = (0..k * k).map(|t| (t / k) * wp + t % k).collect();
    let reach = offsets[k * k - 1];
    let mirrored: Vec<usize> = offsets.iter().map(|&o| reach - o).collect();
    // upstream gradient at padded pitch, preceded by `reach` zeros
    let mut g = vec![T::zero(); plane + reach];
    let mut grad_pad = if need_input_grad {
        vec![T::zero(); n * c * plane]
    } else {
        Vec::new()
    };
    let gk = grad_kernel.data_mut();
    let gb = grad_bias.data_mut();
    wide_dispatch(#[inline(always)] || with_kernel!(k * k, kern => {
        for bi in 0..n {
            for o in 0..o_count {
                let g_plane = &up[(bi * o_count + o) * ho * wo..][..ho * wo];
                gb[o] += g_plane.iter().copied().sum::<T>();
                for (i, row) in g_plane.chunks(wo).enumerate() {
                    g[reach + i * wp..][..wo].copy_from_slice(row);
                }
                let gs = &g[reach..reach + span];
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    let tap_off = (o * c + ci) * k * k;
                    kern.dots(gs, &padded[base..base + plane], &offsets, &mut gk[tap_off..tap_off + k * k]);
                    if need_input_grad {
                        kern.gather(&mut grad_pad[base..base + plane], &g, &kernel[tap_off..tap_off + k * k], &mirrored);
                    }
                }
            }
        }
    }));
    need_input_grad.then(|| {
        let mut gi = Tensor::zeros(input.shape());
        for (dst, src) in gi.data_mut().chunks_mut(h * w).zip(grad_pad.chunks(plane)) {
            for (y, row) in dst.chunks_mut(w).enumerate() {
                row.copy_from_slice(&src[(y + p) * wp + p..][..w]);
            }
        }
        gi
    })
}

/// Backward pass of [`conv2d`]: returns the input gradient and adds the
/// parameter gradients into `params`' accumulators.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &mut LayerParams<T>,
    upstream: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let mut gk = std::mem::replace(&mut params.grad_kernel, Tensor::zeros(&[0]));
    let mut gb = std::mem::replace(&mut params.grad_bias, Tensor::zeros(&[0]));
    let result = conv2d_backward_impl(input, params, upstream, &mut gk, &mut gb, true);
    params.grad_kernel = gk;
    params.grad_bias = gb;
    result.map(|g| g.expect("input gradient requested"))
}

/// Like [`conv2d_backward`] but accumulates parameter gradients into caller
/// owned buffers, so workers can share read-only parameters.
pub fn conv2d_backward_into<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    upstream: &Tensor<T>,
    grad_kernel: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>, TensorError> {
    conv2d_backward_impl(input, params, upstream, grad_kernel, grad_bias, need_input_grad)
}

fn conv2d_backward_impl<T: Scalar>(
    input: &Tensor<T>,
    params: &LayerParams<T>,
    upstream: &Tensor<T>,
    grad_kernel: &mut Tensor<T>,
    grad_bias: &mut Tensor<T>,
    need_input_grad: bool,
) -> Result<Option<Tensor<T>>, TensorError> {
    let (ho, wo) = check_conv_shapes(input, params)?;
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let o_count = params.out_features();
    if upstream.shape() != [n, o_count, ho, wo] {
        return Err(TensorError::ShapeMismatch {
            context: "conv2d upstream gradient vs forward output",
            left: upstream.shape().to_vec(),
            right: vec![n, o_count, ho, wo],
        });
    }
    if grad_kernel.shape() != params.kernel.shape() || grad_bias.shape() != params.bias.shape() {
        return Err(TensorError::ShapeMismatch {
            context: "gradient accumulators vs parameters",
            left: grad_kernel.shape().to_vec(),
            right: params.kernel.shape().to_vec(),
        });
    }
    if params.stride == 1 {
        return Ok(conv2d_backward_unit_stride(
            input,
            params,
            upstream,
            grad_kernel,
            grad_bias,
            need_input_grad,
            ho,
            wo,
        ));
    }
    let k = params.kernel_size();
    let (pad, stride) = (params.padding as isize, params.stride);
    let plane_in = h * w;
    let plane_out = ho * wo;
    let kernel = params.kernel.data();
    let inp = input.data();
    let up = upstream.data();
    let mut grad_in = if need_input_grad {
        Some(Tensor::zeros(input.shape()))
    } else {
        None
    };
    let gk = grad_kernel.data_mut();
    let gb = grad_bias.data_mut();

    for bi in 0..n {
        for o in 0..o_count {
            let g_plane = &up[(bi * o_count + o) * plane_out..][..plane_out];
            gb[o] += g_plane.iter().copied().sum::<T>();
            for ci in 0..c {
                let in_off = (bi * c + ci) * plane_in;
                let in_plane = &inp[in_off..][..plane_in];
                let tap_off = (o * c + ci) * k * k;
                for a in 0..k {
                    for b in 0..k {
                        let wv = kernel[tap_off + a * k + b];
                        let (jlo, jhi) = tap_range(wo, w, b as isize - pad, stride);
                        if jlo >= jhi {
                            continue;
                        }
                        let mut acc = T::zero();
                        for i in 0..ho {
                            let y = (i * stride) as isize + a as isize - pad;
                            if y < 0 || y >= h as isize {
                                continue;
                            }
                            let y = y as usize;
                            let g_row = &g_plane[i * wo..][..wo];
                            let in_row = &in_plane[y * w..][..w];
                            for j in jlo..jhi {
                                let x = ((j * stride) as isize + b as isize - pad) as usize;
                                acc += g_row[j] * in_row[x];
                                if let Some(gi) = grad_in.as_mut() {
                                    gi.data_mut()[in_off + y * w + x] += wv * g_row[j];
                                }
                            }
                        }
                        gk[tap_off + a * k + b] += acc;
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `upstream` where the forward input was positive.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    if input.shape() != upstream.shape() {
        return Err(TensorError::ShapeMismatch {
            context: "relu_backward",
            left: input.shape().to_vec(),
            right: upstream.shape().to_vec(),
        });
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolOutput<T> {
    pub output: Tensor<T>,
    /// Linear index into the input of each output's maximum.
    pub argmax: Vec<usize>,
}

/// Max pooling over square windows; windows may overlap when
/// `window > stride`. Ties resolve to the lowest linear input index.
pub fn maxpool<T: Scalar>(input: &Tensor<T>, window: usize, stride: usize) -> Result<PoolOutput<T>, TensorError> {
    expect_rank(input, 4, "maxpool input must be N x C x H x W")?;
    if window == 0 || stride == 0 {
        return Err(TensorError::Invalid("pool window and stride must be at least 1".into()));
    }
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    if window > h || window > w {
        return Err(TensorError::ShapeMismatch {
            context: "maxpool window larger than input",
            left: input.shape().to_vec(),
            right: vec![window, window],
        });
    }
    let ho = (h - window) / stride + 1;
    let wo = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    let src = input.data();
    let dst = out.data_mut();
    let mut k = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best_idx = base + i * stride * w + j * stride;
                let mut best = src[best_idx];
                for a in 0..window {
                    let row = base + (i * stride + a) * w + j * stride;
                    for (b, &v) in src[row..row + window].iter().enumerate() {
                        if v > best {
                            best = v;
                            best_idx = row + b;
                        }
                    }
                }
                dst[k] = best;
                argmax.push(best_idx);
                k += 1;
            }
        }
    }
    Ok(PoolOutput { output: out, argmax })
}

/// Routes each upstream value to the argmax position it came from.
pub fn maxpool_backward<T: Scalar>(
    upstream: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Result<Tensor<T>, TensorError> {
    if upstream.len() != argmax.len() {
        return Err(TensorError::ShapeMismatch {
            context: "maxpool_backward upstream vs recorded argmax",
            left: upstream.shape().to_vec(),
            right: vec![argmax.len()],
        });
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &u) in argmax.iter().zip(upstream.data()) {
        if idx >= g.len() {
            return Err(TensorError::Invalid(format!("argmax index {idx} outside input")));
        }
        g[idx] += u;
    }
    Ok(grad)
}

/// Logistic function `1 / (1 + e^-x)`, evaluated without overflow.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_tensor<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid)
}

/// Softmax with max-subtraction.
pub fn softmax<T: Scalar>(scores: &[T]) -> Vec<T> {
    if scores.is_empty() {
        return Vec::new();
    }
    let m = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|&s| (s - m).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}
