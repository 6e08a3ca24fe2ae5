/// Row-major `c = a' · b' + beta · c` where `a'`/`b'` are optionally transposed.
///
/// `a'` is `m × k`, `b'` is `k × n`, `c` is `m × n`. A transposed operand is
/// stored in its untransposed row-major layout (`k × m` or `n × k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs length");
    assert_eq!(b.len(), k * n, "gemm: rhs length");
    assert_eq!(c.len(), m * n, "gemm: output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    if m <= SMALL_M {
        small_m(m, k, n, a, a_trans, b, b_trans, c, beta);
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the length assertions above guarantee every strided access stays in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Below this many output rows, packing the right operand costs more than the product.
const SMALL_M: usize = 4;

#[allow(clippy::too_many_arguments)]
fn small_m(m: usize, k: usize, n: usize, a: &[f64], a_trans: bool, b: &[f64], b_trans: bool, c: &mut [f64], beta: f64) {
    let a_at = |i: usize, p: usize| if a_trans { a[p * m + i] } else { a[i * k + p] };
    for v in c.iter_mut() {
        *v *= beta;
    }
    let mut a_rows = vec![0.0; m * k];
    for i in 0..m {
        for p in 0..k {
            a_rows[i * k + p] = a_at(i, p);
        }
    }
    // one pass over `b`, every row of `a` consumed per pass
    if b_trans {
        for j in 0..n {
            let bj = &b[j * k..(j + 1) * k];
            for i in 0..m {
                c[i * n + j] += dot(&a_rows[i * k..(i + 1) * k], bj);
            }
        }
    } else {
        for p in 0..k {
            let bp = &b[p * n..(p + 1) * n];
            for i in 0..m {
                let s = a_rows[i * k + p];
                if s != 0.0 {
                    for (o, &bv) in c[i * n..(i + 1) * n].iter_mut().zip(bp) {
                        *o += s * bv;
                    }
                }
            }
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were just detected.
            return unsafe { dot_avx2(x, y) };
        }
    }
    dot_portable(x, y)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn dot_avx2(x: &[f64], y: &[f64]) -> f64 {
    dot_lanes::<16, true>(x, y)
}

fn dot_portable(x: &[f64], y: &[f64]) -> f64 {
    dot_lanes::<4, false>(x, y)
}

#[inline(always)]
fn dot_lanes<const L: usize, const FUSED: bool>(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; L];
    let (xc, yc) = (x.chunks_exact(L), y.chunks_exact(L));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        for l in 0..L {
            acc[l] = if FUSED { a[l].mul_add(b[l], acc[l]) } else { acc[l] + a[l] * b[l] };
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], at: bool, b: &[f64], bt: bool) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    let av = if at { a[p * m + i] } else { a[i * k + p] };
                    let bv = if bt { b[j * k + p] } else { b[p * n + j] };
                    c[i * n + j] += av * bv;
                }
            }
        }
        c
    }

    #[test]
    fn all_transpose_combinations_match_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64).sin()).collect();
        for at in [false, true] {
            for bt in [false, true] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, &a, at, &b, bt, &mut c, 0.0);
                let want = naive(m, k, n, &a, at, &b, bt);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn small_and_large_paths_agree() {
        for m in [1, 2, 4, 5, 9] {
            let (k, n) = (7, 6);
            let a: Vec<f64> = (0..m * k).map(|v| (v as f64 * 0.37).cos()).collect();
            let b: Vec<f64> = (0..k * n).map(|v| (v as f64 * 0.11).sin()).collect();
            for at in [false, true] {
                for bt in [false, true] {
                    let mut c = vec![1.0; m * n];
                    gemm(m, k, n, &a, at, &b, bt, &mut c, 0.5);
                    let want = naive(m, k, n, &a, at, &b, bt);
                    for (x, y) in c.iter().zip(&want) {
                        assert!((x - (y + 0.5)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn beta_one_accumulates() {
        let a = [1.0, 2.0];
        let b = [3.0, 4.0];
        let mut c = [10.0];
        gemm(1, 2, 1, &a, false, &b, false, &mut c, 1.0);
        assert_eq!(c[0], 21.0);
    }
}
