//! Row-major matrix products.
//!
//! Every output element is accumulated in increasing `k` order with a single
//! accumulator, so dropping a term that contributes exactly zero leaves the
//! result bit-identical. Removing a dead unit therefore never perturbs the
//! downstream outputs through rounding. Zero entries of `a` are skipped.

/// `c = op(a) * op(b) + beta * c` where `op(a)` is `m x k` and `op(b)` is `k x n`.
///
/// When `trans_a` is set, `a` is stored as a row-major `k x m` matrix; likewise
/// `b` is stored as `n x k` when `trans_b` is set.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let transposed;
    let b_rows: &[f64] = if trans_b {
        transposed = transpose(n, k, b);
        &transposed
    } else {
        b
    };
    for (i, c_row) in c.chunks_exact_mut(n).enumerate() {
        if beta == 0.0 {
            c_row.fill(0.0);
        } else if beta != 1.0 {
            c_row.iter_mut().for_each(|v| *v *= beta);
        }
        for p in 0..k {
            let av = if trans_a { a[p * m + i] } else { a[i * k + p] };
            if av == 0.0 {
                continue;
            }
            let b_row = &b_rows[p * n..(p + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

fn transpose(rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; x.len()];
    for r in 0..rows {
        for (c, v) in x[r * cols..(r + 1) * cols].iter().enumerate() {
            t[c * rows + r] = *v;
        }
    }
    t
}
