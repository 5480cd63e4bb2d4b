//! Raw array kernels shared by the tape ops and the plain inference path.
//!
//! Keeping a single set of kernels means the tape forward and the
//! no-grad forward are bit-identical by construction.

use crate::scalar::Scalar;

/// C[m,n] = A[m,k] * B[k,n]
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for v in out.iter_mut() {
        *v = T::zero();
    }
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut out[i * n..(i + 1) * n];
        for (p, &apv) in a_row.iter().enumerate() {
            if apv == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += apv * bv;
            }
        }
    }
}

/// dA[m,k] += dC[m,n] * B^T  (i.e. dA[i,p] += sum_j dC[i,j] * B[p,j])
pub fn matmul_grad_lhs<T: Scalar>(dc: &[T], b: &[T], m: usize, k: usize, n: usize, da: &mut [T]) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        let da_row = &mut da[i * k..(i + 1) * k];
        for (p, dav) in da_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&dcv, &bv) in dc_row.iter().zip(b_row) {
                acc += dcv * bv;
            }
            *dav += acc;
        }
    }
}

/// dB[k,n] += A^T * dC  (i.e. dB[p,j] += sum_i A[i,p] * dC[i,j])
pub fn matmul_grad_rhs<T: Scalar>(a: &[T], dc: &[T], m: usize, k: usize, n: usize, db: &mut [T]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let dc_row = &dc[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let db_row = &mut db[p * n..(p + 1) * n];
            for (dbv, &dcv) in db_row.iter_mut().zip(dc_row) {
                *dbv += av * dcv;
            }
        }
    }
}

/// Output spatial size of a convolution along one axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// 2-D convolution, NHWC single image.
///
/// input `[h, w, cin]`, kernel `[kh, kw, cin, cout]`, bias `[cout]`,
/// output `[oh, ow, cout]`.
#[allow(clippy::too_many_arguments)]
pub fn conv2d<T: Scalar>(
    input: &[T],
    kernel: &[T],
    bias: Option<&[T]>,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    pad: usize,
    out: &mut [T],
) {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    debug_assert_eq!(out.len(), oh * ow * cout);
    match bias {
        Some(b) => {
            for chunk in out.chunks_mut(cout) {
                chunk.copy_from_slice(b);
            }
        }
        None => out.iter_mut().for_each(|v| *v = T::zero()),
    }
    for oy in 0..oh {
        for ox in 0..ow {
            let o_off = (oy * ow + ox) * cout;
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let i_off = ((iy as usize) * w + ix as usize) * cin;
                    let k_off = (ky * kw + kx) * cin * cout;
                    for ci in 0..cin {
                        let iv = input[i_off + ci];
                        if iv == T::zero() {
                            continue;
                        }
                        let k_row = &kernel[k_off + ci * cout..k_off + (ci + 1) * cout];
                        let o_row = &mut out[o_off..o_off + cout];
                        for (ov, &kv) in o_row.iter_mut().zip(k_row) {
                            *ov += iv * kv;
                        }
                    }
                }
            }
        }
    }
}

/// Backward pass of [`conv2d`]. Any of the gradient buffers may be
/// absent when the corresponding operand needs no gradient.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    kernel: &[T],
    dout: &[T],
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    pad: usize,
    mut dinput: Option<&mut [T]>,
    mut dkernel: Option<&mut [T]>,
    dbias: Option<&mut [T]>,
) {
    let oh = conv_out_dim(h, kh, stride, pad);
    let ow = conv_out_dim(w, kw, stride, pad);
    if let Some(db) = dbias {
        for chunk in dout.chunks(cout) {
            for (dbv, &dv) in db.iter_mut().zip(chunk) {
                *dbv += dv;
            }
        }
    }
    for oy in 0..oh {
        for ox in 0..ow {
            let o_off = (oy * ow + ox) * cout;
            let d_row = &dout[o_off..o_off + cout];
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let i_off = ((iy as usize) * w + ix as usize) * cin;
                    let k_off = (ky * kw + kx) * cin * cout;
                    if let Some(di) = dinput.as_deref_mut() {
                        for ci in 0..cin {
                            let k_row = &kernel[k_off + ci * cout..k_off + (ci + 1) * cout];
                            let mut acc = T::zero();
                            for (&dv, &kv) in d_row.iter().zip(k_row) {
                                acc += dv * kv;
                            }
                            di[i_off + ci] += acc;
                        }
                    }
                    if let Some(dk) = dkernel.as_deref_mut() {
                        for ci in 0..cin {
                            let iv = input[i_off + ci];
                            if iv == T::zero() {
                                continue;
                            }
                            let dk_row = &mut dk[k_off + ci * cout..k_off + (ci + 1) * cout];
                            for (dkv, &dv) in dk_row.iter_mut().zip(d_row) {
                                *dkv += iv * dv;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Stable row softmax: `x` is `[rows, n]` flattened, written to `out`.
pub fn softmax_rows<T: Scalar>(x: &[T], n: usize, out: &mut [T]) {
    debug_assert_eq!(x.len() % n, 0);
    for (row, orow) in x.chunks(n).zip(out.chunks_mut(n)) {
        let m = max_val(row);
        let mut sum = T::zero();
        for (o, &v) in orow.iter_mut().zip(row) {
            let e = (v - m).exp();
            *o = e;
            sum += e;
        }
        for o in orow.iter_mut() {
            *o = *o / sum;
        }
    }
}

/// Backward of row softmax: dx_i = p_i * (g_i - sum_j g_j p_j).
pub fn softmax_rows_backward<T: Scalar>(p: &[T], g: &[T], n: usize, dx: &mut [T]) {
    for ((prow, grow), drow) in p.chunks(n).zip(g.chunks(n)).zip(dx.chunks_mut(n)) {
        let mut dot = T::zero();
        for (&pv, &gv) in prow.iter().zip(grow) {
            dot += pv * gv;
        }
        for ((dv, &pv), &gv) in drow.iter_mut().zip(prow).zip(grow) {
            *dv += pv * (gv - dot);
        }
    }
}

/// Stable log(sum(exp(x))) over the whole slice.
pub fn log_sum_exp<T: Scalar>(x: &[T]) -> T {
    let m = max_val(x);
    let mut sum = T::zero();
    for &v in x {
        sum += (v - m).exp();
    }
    m + sum.ln()
}

pub fn max_val<T: Scalar>(x: &[T]) -> T {
    let mut m = x[0];
    for &v in &x[1..] {
        if v > m {
            m = v;
        }
    }
    m
}

/// Index of the maximum, ties resolved to the lowest index.
pub fn argmax<T: Scalar>(x: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Index of the minimum, ties resolved to the lowest index.
pub fn argmin<T: Scalar>(x: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v < x[best] {
            best = i;
        }
    }
    best
}

/// Maximum over all entries except `exclude`; returns (argmax, value).
/// Ties resolved to the lowest index. Requires at least two entries.
pub fn max_excluding<T: Scalar>(x: &[T], exclude: usize) -> (usize, T) {
    let mut best: Option<usize> = None;
    for (i, &v) in x.iter().enumerate() {
        if i == exclude {
            continue;
        }
        match best {
            Some(b) if x[b] >= v => {}
            _ => best = Some(i),
        }
    }
    let b = best.expect("max_excluding needs at least 2 entries");
    (b, x[b])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        matmul(&a, &b, 2, 2, 2, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn conv2d_identity_kernel() {
        // 1x1 kernel with weight 1 reproduces the input at stride 1.
        let input: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let kernel = [1.0f64];
        let mut out = vec![0.0f64; 9];
        conv2d(&input, &kernel, None, 3, 3, 1, 1, 1, 1, 1, 0, &mut out);
        assert_eq!(out, input);
    }

    #[test]
    fn conv2d_stride_and_pad() {
        // 3x3 ones kernel over a 4x4 ones image, stride 2, pad 1: the
        // in-bounds window sizes are 2x2, 2x3, 3x2, 3x3.
        let input = vec![1.0f64; 16];
        let kernel = vec![1.0f64; 9];
        let mut out = vec![0.0f64; 4];
        conv2d(&input, &kernel, None, 4, 4, 1, 3, 3, 1, 2, 1, &mut out);
        assert_eq!(out, [4.0, 6.0, 6.0, 9.0]);
    }

    #[test]
    fn softmax_uniform() {
        let x = [0.0f64, 0.0, 0.0];
        let mut p = [0.0f64; 3];
        softmax_rows(&x, 3, &mut p);
        assert_eq!(p, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    }

    #[test]
    fn log_sum_exp_stable_at_large_inputs() {
        let x = [1000.0f64, 1000.0];
        let v = log_sum_exp(&x);
        assert!((v - (1000.0 + 2.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn max_excluding_skips_index() {
        let x = [5.0f64, 9.0, 7.0];
        assert_eq!(max_excluding(&x, 1), (2, 7.0));
        assert_eq!(max_excluding(&x, 0), (1, 9.0));
    }
}
