//! Dense row-major matrix kernels and the data-parallel helpers built on them.
//!
//! Each kernel has a `_seq` and (with the `parallel` feature) a `_par`
//! variant. They share the same per-row routine, so the parallel path only
//! changes which thread computes a row, never the floating point order.

use crate::Real;

/// Below this many multiply-adds the dispatching kernels stay sequential.
pub const PAR_THRESHOLD: usize = 1 << 15;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runs `f(row_index, row)` over every `width`-sized row of `out`.
pub fn for_each_row_seq<F>(out: &mut [Real], width: usize, f: F)
where
    F: Fn(usize, &mut [Real]),
{
    if width == 0 {
        return;
    }
    out.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
}

#[cfg(feature = "parallel")]
pub fn for_each_row_par<F>(out: &mut [Real], width: usize, f: F)
where
    F: Fn(usize, &mut [Real]) + Send + Sync,
{
    if width == 0 {
        return;
    }
    out.par_chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Row loop that goes parallel once `work` crosses [`PAR_THRESHOLD`].
pub fn for_each_row<F>(out: &mut [Real], width: usize, work: usize, f: F)
where
    F: Fn(usize, &mut [Real]) + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if work >= PAR_THRESHOLD {
        return for_each_row_par(out, width, f);
    }
    let _ = work;
    for_each_row_seq(out, width, f)
}

/// Order-preserving map over a slice; parallel when the feature is on.
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Send + Sync,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

#[inline]
fn dot(a: &[Real], b: &[Real]) -> Real {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
fn axpy(alpha: Real, x: &[Real], y: &mut [Real]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

// C[m×p] = A[m×n] · B[n×p]
fn matmul_row(a: &[Real], b: &[Real], n: usize, p: usize, i: usize, row: &mut [Real]) {
    row.fill(0.0);
    let a_row = &a[i * n..(i + 1) * n];
    for (k, &aik) in a_row.iter().enumerate() {
        if aik != 0.0 {
            axpy(aik, &b[k * p..(k + 1) * p], row);
        }
    }
}

// C[m×p] = A[m×n] · B[p×n]ᵀ
fn matmul_nt_row(a: &[Real], b: &[Real], n: usize, i: usize, row: &mut [Real]) {
    let a_row = &a[i * n..(i + 1) * n];
    for (j, c) in row.iter_mut().enumerate() {
        *c = dot(a_row, &b[j * n..(j + 1) * n]);
    }
}

// C[n×p] = A[m×n]ᵀ · B[m×p]
fn matmul_tn_row(a: &[Real], b: &[Real], m: usize, n: usize, p: usize, i: usize, row: &mut [Real]) {
    row.fill(0.0);
    for r in 0..m {
        let ari = a[r * n + i];
        if ari != 0.0 {
            axpy(ari, &b[r * p..(r + 1) * p], row);
        }
    }
}

pub fn matmul_seq(a: &[Real], b: &[Real], m: usize, n: usize, p: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * p];
    for_each_row_seq(&mut out, p, |i, row| matmul_row(a, b, n, p, i, row));
    out
}

pub fn matmul_nt_seq(a: &[Real], b: &[Real], m: usize, n: usize, p: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * p];
    for_each_row_seq(&mut out, p, |i, row| matmul_nt_row(a, b, n, i, row));
    out
}

pub fn matmul_tn_seq(a: &[Real], b: &[Real], m: usize, n: usize, p: usize) -> Vec<Real> {
    let mut out = vec![0.0; n * p];
    for_each_row_seq(&mut out, p, |i, row| matmul_tn_row(a, b, m, n, p, i, row));
    out
}

#[cfg(feature = "parallel")]
pub fn matmul_par(a: &[Real], b: &[Real], m: usize, n: usize, p: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * p];
    for_each_row_par(&mut out, p, |i, row| matmul_row(a, b, n, p, i, row));
    out
}

#[cfg(feature = "parallel")]
pub fn matmul_nt_par(a: &[Real], b: &[Real], m: usize, n: usize, p: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * p];
    for_each_row_par(&mut out, p, |i, row| matmul_nt_row(a, b, n, i, row));
    out
}

#[cfg(feature = "parallel")]
pub fn matmul_tn_par(a: &[Real], b: &[Real], m: usize, n: usize, p: usize) -> Vec<Real> {
    let mut out = vec![0.0; n * p];
    for_each_row_par(&mut out, p, |i, row| matmul_tn_row(a, b, m, n, p, i, row));
    out
}

/// `A[m×n] · B[n×p]`.
pub fn matmul(a: &[Real], b: &[Real], m: usize, n: usize, p: usize) -> Vec<Real> {
    #[cfg(feature = "parallel")]
    if m * n * p >= PAR_THRESHOLD {
        return matmul_par(a, b, m, n, p);
    }
    matmul_seq(a, b, m, n, p)
}

/// `A[m×n] · B[p×n]ᵀ`.
pub fn matmul_nt(a: &[Real], b: &[Real], m: usize, n: usize, p: usize) -> Vec<Real> {
    #[cfg(feature = "parallel")]
    if m * n * p >= PAR_THRESHOLD {
        return matmul_nt_par(a, b, m, n, p);
    }
    matmul_nt_seq(a, b, m, n, p)
}

/// `A[m×n]ᵀ · B[m×p]`.
pub fn matmul_tn(a: &[Real], b: &[Real], m: usize, n: usize, p: usize) -> Vec<Real> {
    #[cfg(feature = "parallel")]
    if m * n * p >= PAR_THRESHOLD {
        return matmul_tn_par(a, b, m, n, p);
    }
    matmul_tn_seq(a, b, m, n, p)
}
