//! Small dense routines on row-major buffers for the marginal-likelihood hot
//! loop, plus a jittered Cholesky on nalgebra matrices.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// In-place upper Cholesky factor `U` (`A = UᵀU`) of a symmetric
/// positive-definite `n × n` row-major matrix. Only the upper triangle is
/// read; the strict lower triangle is zeroed. Returns `false` if a pivot is
/// not positive.
pub(crate) fn cholesky_upper_in_place(a: &mut [f64], n: usize) -> bool {
    let mut jb = 0;
    while jb < n {
        let je = (jb + PANEL).min(n);
        // Factor the panel rows, updating only rows inside the panel.
        for j in jb..je {
            let (head, tail) = a.split_at_mut((j + 1) * n);
            let row_j = &mut head[j * n..];
            let d = row_j[j];
            if d <= 0.0 || !d.is_finite() {
                return false;
            }
            let u = d.sqrt();
            let inv_u = 1.0 / u;
            row_j[j] = u;
            for v in &mut row_j[j + 1..] {
                *v *= inv_u;
            }
            for (r, row_i) in tail.chunks_exact_mut(n).take(je - j - 1).enumerate() {
                let i = j + 1 + r;
                axpy(-row_j[i], &row_j[i..], &mut row_i[i..]);
            }
        }
        // Apply the whole panel to each trailing row in one pass.
        let (head, tail) = a.split_at_mut(je * n);
        let panel = &head[jb * n..];
        for (r, row_i) in tail.chunks_exact_mut(n).enumerate() {
            let i = je + r;
            if je - jb == PANEL {
                axpy_panel(
                    std::array::from_fn(|t| -panel[t * n + i]),
                    std::array::from_fn(|t| &panel[t * n + i..(t + 1) * n]),
                    &mut row_i[i..],
                );
            } else {
                for t in 0..je - jb {
                    axpy(-panel[t * n + i], &panel[t * n + i..(t + 1) * n], &mut row_i[i..]);
                }
            }
        }
        jb = je;
    }
    for i in 1..n {
        a[i * n..i * n + i].iter_mut().for_each(|v| *v = 0.0);
    }
    true
}

/// Rows combined per pass in the blocked kernels.
const PANEL: usize = 4;

/// `y += a·x`
#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// `y += Σ_t c_t·x_t`; every `x_t` must be at least as long as `y`.
#[inline]
fn axpy_panel(c: [f64; PANEL], x: [&[f64]; PANEL], y: &mut [f64]) {
    let n = y.len();
    let (x0, x1, x2, x3) = (&x[0][..n], &x[1][..n], &x[2][..n], &x[3][..n]);
    for i in 0..n {
        y[i] += c[0] * x0[i] + c[1] * x1[i] + c[2] * x2[i] + c[3] * x3[i];
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Given the upper factor `u` of `A = UᵀU`, write `A⁻¹` (full, symmetric)
/// into `inv`. `w` receives `U⁻ᵀ` as a lower-triangular row-major matrix.
pub(crate) fn inverse_from_upper(u: &[f64], n: usize, w: &mut [f64], inv: &mut [f64]) {
    // Row i of W = U⁻ᵀ: W[i][j] = −Σ_{j ≤ k < i} U[k][i]·W[k][j] / U[i][i].
    // Rows of W are zero past the diagonal, so a group of rows can share
    // the length of its longest member.
    w.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let (done, rest) = w.split_at_mut(i * n);
        let row_i = &mut rest[..n];
        let mut k = 0;
        while k + PANEL <= i {
            let len = k + PANEL;
            axpy_panel(
                std::array::from_fn(|t| u[(k + t) * n + i]),
                std::array::from_fn(|t| &done[(k + t) * n..]),
                &mut row_i[..len],
            );
            k += PANEL;
        }
        for k in k..i {
            axpy(u[k * n + i], &done[k * n..k * n + k + 1], &mut row_i[..=k]);
        }
        let inv_d = 1.0 / u[i * n + i];
        for v in &mut row_i[..i] {
            *v *= -inv_d;
        }
        row_i[i] = inv_d;
    }
    // A⁻¹ = WᵀW as a sum of outer products of the rows of W; lower half first.
    inv.iter_mut().for_each(|v| *v = 0.0);
    let mut k = 0;
    while k < n {
        let ke = (k + PANEL).min(n);
        if ke - k == PANEL {
            let rows: [&[f64]; PANEL] = std::array::from_fn(|t| &w[(k + t) * n..]);
            for a in 0..ke {
                axpy_panel(rows.map(|r| r[a]), rows, &mut inv[a * n..a * n + a + 1]);
            }
        } else {
            for kk in k..ke {
                let row_k = &w[kk * n..kk * n + kk + 1];
                for (a, &f) in row_k.iter().enumerate() {
                    axpy(f, &row_k[..=a], &mut inv[a * n..a * n + a + 1]);
                }
            }
        }
        k = ke;
    }
    for i in 0..n {
        for j in i + 1..n {
            inv[i * n + j] = inv[j * n + i];
        }
    }
}

/// Solve `UᵀU x = b` in place.
pub(crate) fn upper_solve(u: &[f64], n: usize, b: &mut [f64]) {
    for k in 0..n {
        b[k] /= u[k * n + k];
        let bk = b[k];
        let (_, tail) = b.split_at_mut(k + 1);
        axpy(-bk, &u[k * n + k + 1..(k + 1) * n], tail);
    }
    for i in (0..n).rev() {
        let s = dot(&u[i * n + i + 1..(i + 1) * n], &b[i + 1..]);
        b[i] = (b[i] - s) / u[i * n + i];
    }
}

/// Cholesky factorization, escalating a diagonal jitter by ×10 from
/// `1e-8·trace/n` until it exceeds `1e-4·trace`.
pub fn cholesky_with_jitter(a: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let n = a.nrows();
    let trace = a.trace();
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok(c);
    }
    if !(trace.is_finite() && trace > 0.0) {
        return Err(Error::Numerical(format!("cannot factorize matrix with trace {trace}")));
    }
    let mut jitter = 1e-8 * trace / n as f64;
    while jitter <= 1e-4 * trace {
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(b) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(
        "covariance factorization failed after jitter escalation".into(),
    ))
}
