/// Borrowed matrix operand addressed as `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub(crate) struct Strided<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> Strided<'a> {
    pub fn rows(data: &'a [f64], ld: usize) -> Self {
        Self {
            data,
            rs: ld,
            cs: 1,
        }
    }

    pub fn cols(data: &'a [f64], ld: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: ld,
        }
    }

    fn fits(&self, r: usize, c: usize) -> bool {
        r == 0 || c == 0 || (r - 1) * self.rs + (c - 1) * self.cs < self.data.len()
    }
}

/// `C = alpha * A * B + beta * C` for an `m x k` operand `a`, a `k x n`
/// operand `b` and a row-major `c` with leading dimension `ldc`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: Strided,
    b: Strided,
    beta: f64,
    c: &mut [f64],
    ldc: usize,
) {
    let c_fits = m == 0 || n == 0 || (m - 1) * ldc + n <= c.len();
    assert!(a.fits(m, k) && b.fits(k, n) && c_fits && n <= ldc.max(n));
    // SAFETY: the asserts above bound every index touched by the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// Row-major `C = alpha * op(A) * op(B) + beta * C` with `op(A)` of size
/// `m x k` and `op(B)` of size `k x n`. A transposed operand is stored with
/// its untransposed row-major layout (`k x m` for A, `n x k` for B).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let a = if a_trans {
        Strided::cols(a, m)
    } else {
        Strided::rows(a, k)
    };
    let b = if b_trans {
        Strided::cols(b, k)
    } else {
        Strided::rows(b, n)
    };
    gemm_strided(m, k, n, alpha, a, b, beta, c, n);
}
