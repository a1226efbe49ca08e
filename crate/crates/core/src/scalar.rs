//! Floating-point element type shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::io::{self, Read, Write};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, NumCast};

/// Element type for feature maps, parameters, losses and optimizer state.
///
/// Implemented for `f32` (training and inference) and `f64` (gradient
/// checks and reference evaluations). The only non-generic piece is the
/// dense matrix product, which dispatches to the matching `matrixmultiply`
/// kernel.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumCast
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Name stored in checkpoint headers.
    const DTYPE: &'static str;

    /// `c = alpha * op(a) * op(b) + beta * c` over row-major storage.
    ///
    /// `op(a)` is `m x k`, `op(b)` is `k x n`, `c` is `m x n`. When a
    /// transpose flag is set the corresponding operand is stored transposed.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn write_le<W: Write>(values: &[Self], out: &mut W) -> io::Result<()>;

    fn read_le<R: Read>(input: &mut R, len: usize) -> io::Result<Vec<Self>>;

    /// Lossy conversion from an `f64` literal; every constant used in the
    /// crate is representable in both implementations.
    fn lit(value: f64) -> Self {
        <Self as NumCast>::from(value).expect("f64 literal converts to scalar")
    }
}

#[inline]
fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // Strides for the logical (rows x cols) operand.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

fn check_gemm_lens(m: usize, k: usize, n: usize, a: usize, b: usize, c: usize) {
    assert_eq!(a, m * k, "gemm: lhs length");
    assert_eq!(b, k * n, "gemm: rhs length");
    assert_eq!(c, m * n, "gemm: output length");
}

macro_rules! impl_scalar {
    ($ty:ty, $name:literal, $kernel:path, $bytes:literal) => {
        impl Scalar for $ty {
            const DTYPE: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                check_gemm_lens(m, k, n, a.len(), b.len(), c.len());
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, a_trans);
                let (rsb, csb) = strides(k, n, b_trans);
                // SAFETY: the slice lengths were checked against the logical
                // shapes above and every stride pair addresses within them.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
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

            fn write_le<W: Write>(values: &[Self], out: &mut W) -> io::Result<()> {
                let mut buf = Vec::with_capacity(values.len() * $bytes);
                for v in values {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                out.write_all(&buf)
            }

            fn read_le<R: Read>(input: &mut R, len: usize) -> io::Result<Vec<Self>> {
                let mut buf = vec![0u8; len * $bytes];
                input.read_exact(&mut buf)?;
                Ok(buf
                    .chunks_exact($bytes)
                    .map(|b| <$ty>::from_le_bytes(b.try_into().unwrap()))
                    .collect())
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm, 4);
impl_scalar!(f64, "f64", matrixmultiply::dgemm, 8);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; a.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = a[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_product_for_all_transpose_flags() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let expected = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (lhs, ta) in [(&a, false), (&at, true)] {
            for (rhs, tb) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                f64::gemm(m, k, n, 1.0, lhs, ta, rhs, tb, 0.0, &mut c);
                for (x, y) in c.iter().zip(&expected) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let values = vec![0.1f32, -3.5, f32::MIN_POSITIVE, 1e-9];
        let mut buf = Vec::new();
        f32::write_le(&values, &mut buf).unwrap();
        let back = f32::read_le(&mut buf.as_slice(), values.len()).unwrap();
        assert_eq!(values, back);
    }
}
