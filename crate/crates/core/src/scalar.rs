//! Scalar abstraction shared by every numeric module.
//!
//! All signal, metric and network code is written against [`Scalar`] so the
//! same routines run in `f32` or `f64`. Training and gradient checks use
//! `f64`; the crate-root aliases fix that choice.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type usable by the separator, metrics and trainers.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Machine-level name, used in diagnostics.
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` for row/column-strided matrices.
    ///
    /// `a` is `m x k`, `b` is `k x n`, `c` is `m x n`. Strides are in
    /// elements, so transposed operands are expressed by swapping them.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every supported scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, strides: (isize, isize), what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    assert!(strides.0 >= 0 && strides.1 >= 0, "negative strides unsupported for {what}");
    let last = (rows - 1) * strides.0 as usize + (cols - 1) * strides.1 as usize;
    assert!(last < len, "{what}: {rows}x{cols} with strides {strides:?} exceeds buffer of {len}");
}

macro_rules! impl_scalar {
    ($t:ty, $name:expr, $kernel:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                check_extent(a.len(), m, k, a_strides, "lhs");
                check_extent(b.len(), k, n, b_strides, "rhs");
                check_extent(c.len(), m, n, c_strides, "out");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every index touched by the kernel lies inside the
                // slices, as verified by `check_extent` above.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

/// Row-major `m x k` times row-major `k x n` into row-major `m x n`.
pub(crate) fn matmul<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    S::gemm(m, k, n, S::one(), a, (k as isize, 1), b, (n as isize, 1), beta, c, (n as isize, 1));
}

/// `a^T b` where `a` is row-major `k x m` and `b` row-major `k x n`.
pub(crate) fn matmul_tn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    S::gemm(m, k, n, S::one(), a, (1, m as isize), b, (n as isize, 1), beta, c, (n as isize, 1));
}

/// `a b^T` where `a` is row-major `m x k` and `b` row-major `n x k`.
pub(crate) fn matmul_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    S::gemm(m, k, n, S::one(), a, (k as isize, 1), b, (1, k as isize), beta, c, (n as isize, 1));
}
