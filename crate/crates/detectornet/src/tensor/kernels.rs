//! Raw numeric kernels shared by forward ops and their backward rules.

use rayon::prelude::*;

/// Row count above which matmul rows are distributed across threads.
/// Each output element is an independent dot product, so the result is
/// bit-identical regardless of thread count.
const PAR_ROWS: usize = 64;

/// C[m,n] += A[m,k] * B[k,n]
pub(crate) fn mm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let row = |i: usize, crow: &mut [f64]| {
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                for (cj, bj) in crow.iter_mut().zip(brow) {
                    *cj += av * bj;
                }
            }
        }
    };
    if m >= PAR_ROWS {
        c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| row(i, crow));
    } else {
        for (i, crow) in c.chunks_mut(n).enumerate() {
            row(i, crow);
        }
    }
}

/// C[m,k] += A[m,n] * B[k,n]^T  (dot products of rows)
pub(crate) fn mm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    let row = |i: usize, crow: &mut [f64]| {
        let arow = &a[i * n..(i + 1) * n];
        for (j, cj) in crow.iter_mut().enumerate() {
            let brow = &b[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cj += acc;
        }
    };
    if m >= PAR_ROWS {
        c.par_chunks_mut(k).enumerate().for_each(|(i, crow)| row(i, crow));
    } else {
        for (i, crow) in c.chunks_mut(k).enumerate() {
            row(i, crow);
        }
    }
}

/// C[k,n] += A[m,k]^T * B[m,n]
pub(crate) fn mm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    let row = |i: usize, crow: &mut [f64]| {
        for p in 0..m {
            let av = a[p * k + i];
            if av != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                for (cj, bj) in crow.iter_mut().zip(brow) {
                    *cj += av * bj;
                }
            }
        }
    };
    if k >= PAR_ROWS {
        c.par_chunks_mut(n).enumerate().for_each(|(i, crow)| row(i, crow));
    } else {
        for (i, crow) in c.chunks_mut(n).enumerate() {
            row(i, crow);
        }
    }
}

/// NumPy-style broadcast of two shapes, aligned on trailing axes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db {
            out[i] = da;
        } else if da == 1 {
            out[i] = db;
        } else if db == 1 {
            out[i] = da;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Row-major strides, with stride 0 on broadcast (size-1) axes, right-aligned
/// against `out_shape`.
pub(crate) fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let offset = rank - shape.len();
    let mut native = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        native[i] = acc;
        acc *= shape[i];
    }
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        if i >= offset && shape[i - offset] != 1 {
            out[i] = native[i - offset];
        }
    }
    out
}

/// Visit every flat index of `out_shape`, yielding the corresponding flat
/// indices into two broadcast operands.
pub(crate) fn for_each_broadcast(
    out_shape: &[usize],
    a_strides: &[usize],
    b_strides: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let rank = out_shape.len();
    let total: usize = out_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut ai = 0usize;
    let mut bi = 0usize;
    for o in 0..total {
        f(o, ai, bi);
        // odometer increment
        for d in (0..rank).rev() {
            idx[d] += 1;
            ai += a_strides[d];
            bi += b_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            ai -= a_strides[d] * out_shape[d];
            bi -= b_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}
