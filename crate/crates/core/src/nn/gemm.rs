//! Single-precision GEMM on top of `matrixmultiply`, split into a fixed
//! number of independent output blocks so that sequential and parallel
//! execution produce bit-identical results.

use crate::exec::Exec;

/// Strided read-only view of a row-major or transposed matrix.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    data: &'a [f32],
    rs: usize,
    cs: usize,
}

impl<'a> MatRef<'a> {
    /// `rows x cols`, row-major.
    pub fn new(data: &'a [f32], _rows: usize, cols: usize) -> Self {
        Self {
            data,
            rs: cols,
            cs: 1,
        }
    }

    /// Transpose of a row-major `rows x cols` matrix (a `cols x rows` view).
    pub fn t(data: &'a [f32], _rows: usize, cols: usize) -> Self {
        Self {
            data,
            rs: 1,
            cs: cols,
        }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

struct SendPtr(*mut f32);
unsafe impl Send for SendPtr {}
unsafe impl Sync for SendPtr {}

/// Below this many multiply-adds the product runs as one block.
const SPLIT_WORK: usize = 1 << 21;
const BLOCKS: usize = 8;

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n` row-major.
pub fn gemm(
    exec: Exec,
    m: usize,
    k: usize,
    n: usize,
    a: MatRef,
    b: MatRef,
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(c.len(), m * n, "output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x *= beta);
        return;
    }
    assert!(a.max_index(m, k) < a.data.len(), "lhs out of range");
    assert!(b.max_index(k, n) < b.data.len(), "rhs out of range");

    let work = m * n * k;
    let split_rows = m >= n;
    let extent = if split_rows { m } else { n };
    let blocks = if work < SPLIT_WORK {
        1
    } else {
        BLOCKS.min(extent)
    };
    let per = extent.div_ceil(blocks);
    let cptr = SendPtr(c.as_mut_ptr());
    let cptr = &cptr;
    exec.map(blocks, |blk| {
        let lo = blk * per;
        let hi = ((blk + 1) * per).min(extent);
        if lo >= hi {
            return;
        }
        // SAFETY: blocks cover disjoint row (or column) ranges of `c`, and
        // every index passed to sgemm was bounds-checked above.
        unsafe {
            if split_rows {
                matrixmultiply::sgemm(
                    hi - lo,
                    k,
                    n,
                    1.0,
                    a.data.as_ptr().add(lo * a.rs),
                    a.rs as isize,
                    a.cs as isize,
                    b.data.as_ptr(),
                    b.rs as isize,
                    b.cs as isize,
                    beta,
                    cptr.0.add(lo * n),
                    n as isize,
                    1,
                );
            } else {
                matrixmultiply::sgemm(
                    m,
                    k,
                    hi - lo,
                    1.0,
                    a.data.as_ptr(),
                    a.rs as isize,
                    a.cs as isize,
                    b.data.as_ptr().add(lo * b.cs),
                    b.rs as isize,
                    b.cs as isize,
                    beta,
                    cptr.0.add(lo),
                    n as isize,
                    1,
                );
            }
        }
    });
}
