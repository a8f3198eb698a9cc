//! Small dense-vector helpers shared across the crate.

/// Dot product with a fixed four-lane accumulation order:
/// `(acc0 + acc1) + (acc2 + acc3)` over strided lanes, then the tail in
/// sequence. The grouping never depends on input values or thread count, so
/// results are reproducible bit for bit; the independent lanes break the
/// floating-point dependency chain so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for k in 0..chunks {
        let i = 4 * k;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut acc = (s0 + s1) + (s2 + s3);
    for i in 4 * chunks..n {
        acc += a[i] * b[i];
    }
    acc
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub(crate) fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| c * x).collect()
}

/// out += c * a
pub(crate) fn axpy(out: &mut [f64], c: f64, a: &[f64]) {
    debug_assert_eq!(out.len(), a.len());
    for (o, x) in out.iter_mut().zip(a) {
        *o += c * x;
    }
}

pub(crate) fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}
