//! Numeric kernels shared by every stage.

use crate::error::{dim_err, Error, Result};
use crate::flops;
use crate::tensor::{Element, Tensor};

/// Dot product with eight independent accumulators so the loop vectorizes.
/// The reduction order is fixed, so results are deterministic.
#[inline]
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `c[m,n] += a[m,k] @ b[k,n]` on raw slices; no FLOP accounting.
pub(crate) fn gemm_acc<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (t, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[t * n..(t + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// `c[m,n] = a[m,k] @ b[n,k]^T` on raw slices; no FLOP accounting.
pub(crate) fn gemm_bt<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(a_row, &b[j * k..(j + 1) * k]);
        }
    }
}

pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [m, k] = a.dims2()?;
    let [k2, n] = b.dims2()?;
    if k != k2 {
        return dim_err(format!("matmul: {:?} @ {:?} inner dimensions differ", a.shape(), b.shape()));
    }
    let mut c = vec![T::zero(); m * n];
    gemm_acc(a.data(), b.data(), &mut c, m, k, n);
    flops::record(flops::matmul_flops(m, k, n));
    Ok(Tensor::from_parts(vec![m, n], c))
}

/// `x @ w + b` over the rows of `x` (any rank, last dim = `w` rows).
pub fn linear<T: Element>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let [k, n] = w.dims2()?;
    if x.last_dim() != k {
        return dim_err(format!("linear: input {:?} against weight {:?}", x.shape(), w.shape()));
    }
    let m = x.rows();
    let mut c = vec![T::zero(); m * n];
    gemm_acc(x.data(), w.data(), &mut c, m, k, n);
    flops::record(flops::matmul_flops(m, k, n));
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = n;
    let mut out = Tensor::from_parts(shape, c);
    if let Some(b) = b {
        out.add_row_broadcast(b.data())?;
    }
    Ok(out)
}

pub fn softmax_lastdim<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    let d = out.last_dim();
    out.data_mut().chunks_exact_mut(d).for_each(softmax_inplace);
    out
}

/// Stable softmax of one row; `-inf` entries get probability zero. The row
/// must contain at least one finite entry.
pub(crate) fn softmax_inplace<T: Element>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = sum.recip();
    row.iter_mut().for_each(|v| *v = *v * inv);
}

/// Layer normalization over the last dimension with biased variance.
pub fn layer_norm<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    let d = x.last_dim();
    if gamma.len() != d || beta.len() != d {
        return dim_err(format!(
            "layer_norm: width {d} with gamma {:?} / beta {:?}",
            gamma.shape(),
            beta.shape()
        ));
    }
    if eps <= 0.0 {
        return Err(Error::Validation(format!("layer_norm eps must be positive, got {eps}")));
    }
    let eps = T::from_f64_lossy(eps);
    let n = T::from_usize(d).expect("width fits");
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(d) {
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = (var + eps).sqrt().recip();
        for ((v, &g), &b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = g * (*v - mean) * inv + b;
        }
    }
    Ok(out)
}

/// GELU, tanh approximation.
pub fn gelu<T: Element>(x: T) -> T {
    let c = T::from_f64_lossy(0.797_884_560_802_865_4);
    let a = T::from_f64_lossy(0.044_715);
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_tensor<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    x.map(gelu)
}

/// 2-D convolution of a `[c_in, H, W]` map with zero padding.
pub fn conv2d<T: Element>(x: &Tensor<T>, kernel: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let [c_in, h, w] = x.dims3()?;
    let (c_out, kc, kh, kw) = match kernel.shape()[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => return dim_err(format!("conv2d: kernel must be 4-D, got {:?}", kernel.shape())),
    };
    if kc != c_in {
        return dim_err(format!("conv2d: input {:?} against kernel {:?}", x.shape(), kernel.shape()));
    }
    if stride == 0 {
        return Err(Error::Validation("conv2d stride must be >= 1".into()));
    }
    let (hp, wp) = (h + 2 * padding, w + 2 * padding);
    if kh > hp || kw > wp {
        return dim_err(format!(
            "conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp} (input {:?})",
            x.shape()
        ));
    }
    let h_out = (hp - kh) / stride + 1;
    let w_out = (wp - kw) / stride + 1;
    let patch = c_in * kh * kw;
    let spatial = h_out * w_out;

    let out = if kh == 1 && kw == 1 && stride == 1 && padding == 0 {
        let mut out = vec![T::zero(); c_out * spatial];
        gemm_acc(kernel.data(), x.data(), &mut out, c_out, c_in, spatial);
        out
    } else {
        let mut cols = vec![T::zero(); patch * spatial];
        let src = x.data();
        for c in 0..c_in {
            for ky in 0..kh {
                for kx in 0..kw {
                    let row = (c * kh + ky) * kw + kx;
                    let dst = &mut cols[row * spatial..(row + 1) * spatial];
                    for oy in 0..h_out {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[(c * h + iy as usize) * w..(c * h + iy as usize + 1) * w];
                        for ox in 0..w_out {
                            let ix = (ox * stride + kx) as isize - padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[oy * w_out + ox] = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![T::zero(); c_out * spatial];
        gemm_acc(kernel.data(), &cols, &mut out, c_out, patch, spatial);
        out
    };
    flops::record(flops::conv_flops(c_out, c_in, kh, kw, h_out, w_out));
    Ok(Tensor::from_parts(vec![c_out, h_out, w_out], out))
}

/// Adds a per-channel bias to a `[c, H, W]` map.
pub fn add_channel_bias<T: Element>(x: &mut Tensor<T>, bias: &Tensor<T>) -> Result<()> {
    let [c, h, w] = x.dims3()?;
    if bias.len() != c {
        return dim_err(format!("channel bias {:?} for {c} channels", bias.shape()));
    }
    for (plane, &b) in x.data_mut().chunks_exact_mut(h * w).zip(bias.data()) {
        plane.iter_mut().for_each(|v| *v = *v + b);
    }
    Ok(())
}

/// Bilinear corner weights for a normalized coordinate, align-corners-false.
/// Returns `(x0, y0, fx, fy)` in pixel space, or `None` when the sample lies
/// entirely outside the map.
#[inline]
fn bilinear_setup<T: Element>(x: T, y: T, h: usize, w: usize) -> Option<(isize, isize, T, T)> {
    let half = T::from_f64_lossy(0.5);
    let px = x * T::from_usize(w).expect("width") - half;
    let py = y * T::from_usize(h).expect("height") - half;
    let neg1 = -T::one();
    if !(px > neg1 && py > neg1 && px < T::from_usize(w).expect("width") && py < T::from_usize(h).expect("height")) {
        return None;
    }
    let fx0 = px.floor();
    let fy0 = py.floor();
    Some((fx0.to_isize()?, fy0.to_isize()?, px - fx0, py - fy0))
}

/// Samples a `[c, H, W]` map at normalized `(x, y)` points. Corners outside the
/// map contribute zero.
pub fn bilinear_sample<T: Element>(map: &Tensor<T>, points: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, h, w] = map.dims3()?;
    let [p, two] = points.dims2()?;
    if two != 2 {
        return dim_err(format!("bilinear_sample: points must be [P, 2], got {:?}", points.shape()));
    }
    let mut out = vec![T::zero(); p * c];
    let src = map.data();
    for (i, pt) in points.data().chunks_exact(2).enumerate() {
        let Some((x0, y0, fx, fy)) = bilinear_setup(pt[0], pt[1], h, w) else { continue };
        let corners = [
            (x0, y0, (T::one() - fx) * (T::one() - fy)),
            (x0 + 1, y0, fx * (T::one() - fy)),
            (x0, y0 + 1, (T::one() - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ];
        let dst = &mut out[i * c..(i + 1) * c];
        for (cx, cy, wgt) in corners {
            if cx < 0 || cy < 0 || cx >= w as isize || cy >= h as isize {
                continue;
            }
            let off = cy as usize * w + cx as usize;
            for (ch, v) in dst.iter_mut().enumerate() {
                *v = *v + wgt * src[ch * h * w + off];
            }
        }
    }
    flops::record(flops::bilinear_flops(p, c));
    Ok(Tensor::from_parts(vec![p, c], out))
}

/// Token-major bilinear sampling used by deformable attention: `values` is a
/// `[H*W, stride]` block and channels `[ch, ch+out.len())` are accumulated
/// into `out` scaled by `scale`. No FLOP accounting.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn sample_tokens_acc<T: Element>(
    values: &[T],
    h: usize,
    w: usize,
    stride: usize,
    ch: usize,
    x: T,
    y: T,
    scale: T,
    out: &mut [T],
) {
    let Some((x0, y0, fx, fy)) = bilinear_setup(x, y, h, w) else { return };
    let corners = [
        (x0, y0, (T::one() - fx) * (T::one() - fy)),
        (x0 + 1, y0, fx * (T::one() - fy)),
        (x0, y0 + 1, (T::one() - fx) * fy),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    for (cx, cy, wgt) in corners {
        if cx < 0 || cy < 0 || cx >= w as isize || cy >= h as isize {
            continue;
        }
        let base = (cy as usize * w + cx as usize) * stride + ch;
        let wgt = wgt * scale;
        let len = out.len();
        for (o, &v) in out.iter_mut().zip(&values[base..base + len]) {
            *o = *o + wgt * v;
        }
    }
}

pub fn upsample_nearest2x<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, h, w] = x.dims3()?;
    let (h2, w2) = (2 * h, 2 * w);
    let src = x.data();
    let mut out = vec![T::zero(); c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            let s = &src[(ch * h + y / 2) * w..(ch * h + y / 2 + 1) * w];
            let d = &mut out[(ch * h2 + y) * w2..(ch * h2 + y + 1) * w2];
            for (xo, v) in d.iter_mut().enumerate() {
                *v = s[xo / 2];
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, h2, w2], out))
}

/// Concatenates `[c_i, H, W]` maps along channels.
pub fn concat_channels<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [ca, ha, wa] = a.dims3()?;
    let [cb, hb, wb] = b.dims3()?;
    if (ha, wa) != (hb, wb) {
        return dim_err(format!("concat_channels: {:?} and {:?}", a.shape(), b.shape()));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Ok(Tensor::from_parts(vec![ca + cb, ha, wa], data))
}

/// `[c, H, W]` → `[H*W, c]` (row-major tokens).
pub fn chw_to_tokens<T: Element>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, h, w] = x.dims3()?;
    let hw = h * w;
    let src = x.data();
    let mut out = vec![T::zero(); hw * c];
    for ch in 0..c {
        for (p, &v) in src[ch * hw..(ch + 1) * hw].iter().enumerate() {
            out[p * c + ch] = v;
        }
    }
    Ok(Tensor::from_parts(vec![hw, c], out))
}

/// `[H*W, c]` → `[c, H, W]`.
pub fn tokens_to_chw<T: Element>(tokens: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let [n, c] = tokens.dims2()?;
    if n != h * w {
        return dim_err(format!("tokens_to_chw: {n} tokens for a {h}x{w} map"));
    }
    let src = tokens.data();
    let mut out = vec![T::zero(); n * c];
    for p in 0..n {
        for ch in 0..c {
            out[ch * n + p] = src[p * c + ch];
        }
    }
    Ok(Tensor::from_parts(vec![c, h, w], out))
}

pub fn sigmoid<T: Element>(x: T) -> T {
    (T::one() + (-x).exp()).recip()
}

pub fn inverse_sigmoid<T: Element>(p: T, eps: T) -> T {
    let p = p.max(eps).min(T::one() - eps);
    (p / (T::one() - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t2(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let [m, k] = a.dims2().unwrap();
        let [_, n] = b.dims2().unwrap();
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for t in 0..k {
                    s += a.at(&[i, t]) * b.at(&[t, j]);
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let m = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::eye(2).unwrap(), &m).unwrap(), m);
        let v = t2(&[&[5.0], &[6.0]]);
        assert_eq!(matmul(&m, &v).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f32>::zeros([2, 3]).unwrap();
        let err = matmul(&a, &a).unwrap_err().to_string();
        assert!(err.contains("[2, 3] @ [2, 3]"), "{err}");
    }

    #[test]
    fn matmul_matches_triple_loop_exactly_on_small_integers() {
        // Small integer entries keep every partial sum exact in f64.
        let mut seed = 17u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) % 19) as f64 - 9.0
        };
        for _ in 0..10 {
            let a = Tensor::from_fn([8, 8], |_| next()).unwrap();
            let b = Tensor::from_fn([8, 8], |_| next()).unwrap();
            assert_eq!(matmul(&a, &b).unwrap().data(), &naive_matmul(&a, &b)[..]);
        }
    }

    proptest! {
        #[test]
        fn matmul_matches_triple_loop_random(a in prop::collection::vec(-1.0f64..1.0, 64), b in prop::collection::vec(-1.0f64..1.0, 64)) {
            let a = Tensor::new([8, 8], a).unwrap();
            let b = Tensor::new([8, 8], b).unwrap();
            let got = matmul(&a, &b).unwrap();
            for (x, y) in got.data().iter().zip(naive_matmul(&a, &b)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_rows_sum_to_one_and_shift_invariant(row in prop::collection::vec(-50.0f64..50.0, 1..12), shift in -100.0f64..100.0) {
            let n = row.len();
            let x = Tensor::new([1, n], row.clone()).unwrap();
            let s = softmax_lastdim(&x);
            prop_assert!((s.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(s.data().iter().all(|&v| v >= 0.0));
            let shifted = softmax_lastdim(&x.map(|v| v + shift));
            prop_assert!(s.max_abs_diff(&shifted).unwrap() < 1e-6);
        }

        #[test]
        fn bilinear_is_linear_in_map(a in prop::collection::vec(-2.0f64..2.0, 2 * 3 * 4), b in prop::collection::vec(-2.0f64..2.0, 2 * 3 * 4),
                                    alpha in -3.0f64..3.0, beta in -3.0f64..3.0, x in -0.3f64..1.3, y in -0.3f64..1.3) {
            let ma = Tensor::new([2, 3, 4], a).unwrap();
            let mb = Tensor::new([2, 3, 4], b).unwrap();
            let pts = Tensor::new([1, 2], vec![x, y]).unwrap();
            let combo = ma.scale(alpha).add(&mb.scale(beta)).unwrap();
            let lhs = bilinear_sample(&combo, &pts).unwrap();
            let rhs = bilinear_sample(&ma, &pts).unwrap().scale(alpha)
                .add(&bilinear_sample(&mb, &pts).unwrap().scale(beta)).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-6);
        }
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_lastdim(&t2(&[&[0.0, 0.0]]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_lastdim(&t2(&[&[1.0, 2.0, 3.0]]));
        // exp(k)/Σ exp, evaluated independently
        let z: f64 = (1..=3).map(|k| (k as f64).exp()).sum();
        for (k, &v) in s.data().iter().enumerate() {
            assert!((v - ((k + 1) as f64).exp() / z).abs() < 1e-12);
        }
        let rounded: Vec<f64> = s.data().iter().map(|v| (v * 1e4).round() / 1e4).collect();
        assert_eq!(rounded, vec![0.0900, 0.2447, 0.6652]);
        let s = softmax_lastdim(&Tensor::new([1, 2], vec![1000.0f32, 1000.0]).unwrap());
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::full([3], 1.0).unwrap();
        let zeros = Tensor::zeros([3]).unwrap();
        let c = layer_norm(&t2(&[&[4.0, 4.0, 4.0]]), &ones, &zeros, 1e-5).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));

        let y = layer_norm(&t2(&[&[1.0, 2.0, 3.0]]), &ones, &zeros, 1e-5).unwrap();
        let sd = (2.0f64 / 3.0 + 1e-5).sqrt();
        let want = [-1.0 / sd, 0.0, 1.0 / sd];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((y.data()[0] + 1.2247).abs() < 1e-4);

        let b = Tensor::new([3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = layer_norm(&t2(&[&[9.0, -3.0, 0.1]]), &zeros, &b, 1e-5).unwrap();
        assert_eq!(y.data(), b.data());

        assert!(layer_norm(&t2(&[&[1.0, 2.0, 3.0]]), &ones, &zeros, 0.0).is_err());
    }

    #[test]
    fn conv2d_examples() {
        let x = Tensor::from_fn([2, 5, 5], |i| i as f64).unwrap();
        let mut k = Tensor::zeros([2, 2, 1, 1]).unwrap();
        k.data_mut()[0] = 1.0;
        k.data_mut()[3] = 1.0;
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);

        let ones = Tensor::full([1, 6, 6], 1.0).unwrap();
        let k = Tensor::full([1, 1, 3, 3], 1.0).unwrap();
        let y = conv2d(&ones, &k, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 6, 6]);
        for r in 1..5 {
            for c in 1..5 {
                assert_eq!(y.at(&[0, r, c]), 9.0);
            }
        }
        assert_eq!(y.at(&[0, 0, 0]), 4.0);
        assert_eq!(y.at(&[0, 0, 3]), 6.0);

        let x = Tensor::<f32>::zeros([1, 8, 8]).unwrap();
        let k = Tensor::zeros([4, 1, 3, 3]).unwrap();
        assert_eq!(conv2d(&x, &k, 2, 1).unwrap().shape(), &[4, 4, 4]);

        let big = Tensor::<f32>::zeros([1, 1, 5, 5]).unwrap();
        let small = Tensor::<f32>::zeros([1, 2, 2]).unwrap();
        assert!(matches!(conv2d(&small, &big, 1, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv2d_matches_direct_loop() {
        let x = Tensor::from_fn([3, 7, 6], |i| ((i * 37) % 11) as f64 - 5.0).unwrap();
        let k = Tensor::from_fn([2, 3, 3, 3], |i| ((i * 13) % 7) as f64 - 3.0).unwrap();
        for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
            let y = conv2d(&x, &k, stride, pad).unwrap();
            let [co, ho, wo] = y.dims3().unwrap();
            for o in 0..co {
                for r in 0..ho {
                    for c in 0..wo {
                        let mut s = 0.0;
                        for i in 0..3 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (r * stride + ky) as isize - pad as isize;
                                    let ix = (c * stride + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && iy < 7 && ix < 6 {
                                        s += x.at(&[i, iy as usize, ix as usize]) * k.at(&[o, i, ky, kx]);
                                    }
                                }
                            }
                        }
                        assert_eq!(y.at(&[o, r, c]), s);
                    }
                }
            }
        }
    }

    #[test]
    fn bilinear_examples() {
        let m = Tensor::new([1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let center = Tensor::new([1, 2], vec![0.5, 0.5]).unwrap();
        assert_eq!(bilinear_sample(&m, &center).unwrap().data(), &[2.5]);
        let px = Tensor::new([1, 2], vec![0.75, 0.25]).unwrap();
        assert_eq!(bilinear_sample(&m, &px).unwrap().data(), &[2.0]);
        let far = Tensor::new([2, 2], vec![5.0, 5.0, -40.0, 0.5]).unwrap();
        assert_eq!(bilinear_sample(&m, &far).unwrap().data(), &[0.0, 0.0]);
        // half a pixel past the edge: only the in-bounds corners contribute
        let edge = Tensor::new([1, 2], vec![1.0, 0.25]).unwrap();
        assert_eq!(bilinear_sample(&m, &edge).unwrap().data(), &[1.0]);
    }

    #[test]
    fn token_major_sampling_agrees_with_channel_major() {
        let map = Tensor::from_fn([4, 3, 5], |i| (i as f64 * 0.37).sin()).unwrap();
        let tokens = chw_to_tokens(&map).unwrap();
        for &(x, y) in &[(0.1, 0.2), (0.5, 0.5), (0.95, 0.01), (-0.05, 0.4), (1.02, 1.1)] {
            let want = bilinear_sample(&map, &Tensor::new([1, 2], vec![x, y]).unwrap()).unwrap();
            let mut got = vec![0.0; 2];
            sample_tokens_acc(tokens.data(), 3, 5, 4, 1, x, y, 1.0, &mut got);
            assert!((got[0] - want.data()[1]).abs() < 1e-12);
            assert!((got[1] - want.data()[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn token_layout_round_trip() {
        let map = Tensor::from_fn([3, 4, 2], |i| i as f32).unwrap();
        let back = tokens_to_chw(&chw_to_tokens(&map).unwrap(), 4, 2).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn flop_hooks_report_closed_forms() {
        let a = Tensor::<f32>::zeros([4, 8]).unwrap();
        let b = Tensor::<f32>::zeros([8, 2]).unwrap();
        let (_, c) = flops::count(|| matmul(&a, &b).unwrap());
        assert_eq!(c.total(), 128);
        let x = Tensor::<f32>::zeros([3, 8, 8]).unwrap();
        let k = Tensor::<f32>::zeros([5, 3, 3, 3]).unwrap();
        let (_, c) = flops::count(|| conv2d(&x, &k, 2, 1).unwrap());
        assert_eq!(c.total(), flops::conv_flops(5, 3, 3, 3, 4, 4));
        let pts = Tensor::<f32>::zeros([7, 2]).unwrap();
        let (_, c) = flops::count(|| bilinear_sample(&x, &pts).unwrap());
        assert_eq!(c.total(), 7 * 3 * 11);
    }
}
