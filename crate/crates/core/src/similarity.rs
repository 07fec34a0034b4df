//! Dot-product kernels. Rows are assumed unit-normalized, so the dot
//! product is the cosine similarity.

/// Dot product with four independent accumulators so the loop vectorizes.
/// The summation order is fixed, which keeps results bit-stable.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Writes `v · row_j` for every row of a row-major matrix into `out`.
pub fn similarities_into(rows: &[f64], dim: usize, v: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(rows.chunks_exact(dim).map(|r| dot(v, r)));
}

/// Scales `v` to unit length in place. Returns the norm before scaling;
/// a zero vector is left untouched.
pub fn normalize_in_place(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}
