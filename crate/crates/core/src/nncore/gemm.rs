//! Bounds-checked wrapper over `matrixmultiply::dgemm`.
//!
//! Every element of the output is accumulated over the shared dimension in a
//! fixed order that does not depend on how many rows the left operand has, so
//! a sample's activations are bit-identical whether it is evaluated alone or
//! inside a batch.

/// Strided read-only view of a row/column-major matrix.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

pub(crate) struct MatMut<'a> {
    pub data: &'a mut [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major matrix with `cols` columns.
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn t(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }
}

impl<'a> MatMut<'a> {
    pub fn rows(data: &'a mut [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }
}

fn span(r: usize, c: usize, rs: usize, cs: usize) -> usize {
    if r == 0 || c == 0 {
        0
    } else {
        (r - 1) * rs + (c - 1) * cs + 1
    }
}

/// `C ← alpha·A·B + beta·C` with `A: m×k`, `B: k×n`, `C: m×n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: MatMut<'_>,
) {
    assert!(span(m, k, a.rs, a.cs) <= a.data.len(), "gemm: A out of bounds");
    assert!(span(k, n, b.rs, b.cs) <= b.data.len(), "gemm: B out of bounds");
    assert!(span(m, n, c.rs, c.cs) <= c.data.len(), "gemm: C out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above bound every index dgemm can touch for
    // non-negative strides; `c` is uniquely borrowed.
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
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// `y (+)= x · wᵀ` where `x: batch×inner` (row stride `x_rs`), `w: out×inner`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn affine_nt(
    batch: usize,
    inner: usize,
    out: usize,
    x: &[f64],
    x_rs: usize,
    w: &[f64],
    y: &mut [f64],
    accumulate: bool,
) {
    gemm(
        batch,
        inner,
        out,
        1.0,
        MatRef { data: x, rs: x_rs, cs: 1 },
        MatRef::t(w, inner),
        if accumulate { 1.0 } else { 0.0 },
        MatMut::rows(y, out),
    );
}

/// `dx (+)= dy · w` where `dy: batch×out`, `w: out×inner`.
pub(crate) fn backprop_input(
    batch: usize,
    out: usize,
    inner: usize,
    dy: &[f64],
    w: &[f64],
    dx: &mut [f64],
    accumulate: bool,
) {
    gemm(
        batch,
        out,
        inner,
        1.0,
        MatRef::rows(dy, out),
        MatRef::rows(w, inner),
        if accumulate { 1.0 } else { 0.0 },
        MatMut::rows(dx, inner),
    );
}

/// `dw += dyᵀ · x` where `dy: batch×out`, `x: batch×inner` (row stride `x_rs`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn accumulate_weight_grad(
    batch: usize,
    out: usize,
    inner: usize,
    dy: &[f64],
    x: &[f64],
    x_rs: usize,
    dw: &mut [f64],
) {
    gemm(
        out,
        batch,
        inner,
        1.0,
        MatRef::t(dy, out),
        MatRef { data: x, rs: x_rs, cs: 1 },
        1.0,
        MatMut::rows(dw, inner),
    );
}

/// `db += Σ_rows dy`.
pub(crate) fn accumulate_bias_grad(batch: usize, out: usize, dy: &[f64], db: &mut [f64]) {
    for row in dy.chunks_exact(out).take(batch) {
        for (g, d) in db.iter_mut().zip(row) {
            *g += d;
        }
    }
}

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

    #[test]
    fn matches_naive_product() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, 1.0, MatRef::rows(&a, k), MatRef::rows(&b, n), 0.0, MatMut::rows(&mut c, n));
        for (x, y) in c.iter().zip(naive(m, k, n, &a, &b)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn row_results_do_not_depend_on_batch_size() {
        let (k, n) = (58, 50);
        let w: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.013).sin()).collect();
        let x: Vec<f64> = (0..32 * k).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut full = vec![0.0; 32 * n];
        affine_nt(32, k, n, &x, k, &w, &mut full, false);
        for r in [0usize, 7, 31] {
            let mut one = vec![0.0; n];
            affine_nt(1, k, n, &x[r * k..(r + 1) * k], k, &w, &mut one, false);
            assert_eq!(&full[r * n..(r + 1) * n], &one[..]);
        }
    }
}
