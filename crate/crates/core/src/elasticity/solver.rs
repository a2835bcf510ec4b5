//! Block-sparse stiffness on the periodic slab and a Jacobi-preconditioned
//! conjugate gradient.

use rayon::prelude::*;

/// Rows per chunk in parallel reductions. Fixed so sums do not depend on
/// the thread count.
const CHUNK: usize = 1024;

const NO_COLUMN: u32 = u32::MAX;

/// Free nodes `(i, j, k)` with `k = 1..=m`; node id `((i n) + j) m + (k - 1)`.
/// Each row stores 27 neighbour blocks of 3x3.
pub(crate) struct BlockMatrix {
    pub blocks: Vec<[f64; 9]>,
    cols: Vec<[u32; 27]>,
}

#[inline]
pub(crate) fn slot(di: isize, dj: isize, dk: isize) -> usize {
    ((di + 1) * 9 + (dj + 1) * 3 + (dk + 1)) as usize
}

impl BlockMatrix {
    pub fn zeros(n: usize, m: usize) -> Self {
        let rows = n * n * m;
        let mut cols = vec![[NO_COLUMN; 27]; rows];
        for i in 0..n {
            for j in 0..n {
                for k in 1..=m {
                    let r = node_id(n, m, i, j, k);
                    for di in -1isize..=1 {
                        for dj in -1isize..=1 {
                            for dk in -1isize..=1 {
                                let kk = k as isize + dk;
                                if kk < 1 || kk > m as isize {
                                    continue;
                                }
                                let ii = (i as isize + di).rem_euclid(n as isize) as usize;
                                let jj = (j as isize + dj).rem_euclid(n as isize) as usize;
                                cols[r][slot(di, dj, dk)] = node_id(n, m, ii, jj, kk as usize) as u32;
                            }
                        }
                    }
                }
            }
        }
        BlockMatrix {
            blocks: vec![[0.0; 9]; rows * 27],
            cols,
        }
    }

    pub fn rows(&self) -> usize {
        self.cols.len()
    }

    pub fn block_mut(&mut self, row: usize, slot: usize) -> &mut [f64; 9] {
        &mut self.blocks[row * 27 + slot]
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_chunks_mut(3 * CHUNK).enumerate().for_each(|(c, ys)| {
            let r0 = c * CHUNK;
            for (lr, yr) in ys.chunks_mut(3).enumerate() {
                let r = r0 + lr;
                let mut acc = [0.0; 3];
                for (s, &col) in self.cols[r].iter().enumerate() {
                    if col == NO_COLUMN {
                        continue;
                    }
                    let b = &self.blocks[r * 27 + s];
                    let xc = &x[3 * col as usize..3 * col as usize + 3];
                    for a in 0..3 {
                        acc[a] += b[3 * a] * xc[0] + b[3 * a + 1] * xc[1] + b[3 * a + 2] * xc[2];
                    }
                }
                yr.copy_from_slice(&acc);
            }
        });
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let centre = slot(0, 0, 0);
        let mut d = vec![0.0; 3 * self.rows()];
        for r in 0..self.rows() {
            let b = &self.blocks[r * 27 + centre];
            for a in 0..3 {
                d[3 * r + a] = b[4 * a];
            }
        }
        d
    }
}

#[inline]
pub(crate) fn node_id(n: usize, m: usize, i: usize, j: usize, k: usize) -> usize {
    (i * n + j) * m + (k - 1)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

pub(crate) struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` starting from the contents of `x`.
pub(crate) fn pcg(a: &BlockMatrix, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> CgOutcome {
    let dim = b.len();
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut r = vec![0.0; dim];
    a.apply(x, &mut r);
    r.par_iter_mut().zip(b.par_iter()).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; dim];
    let mut res = dot(&r, &r).sqrt() / b_norm;
    let mut it = 0;
    while res > tol && it < max_iter {
        a.apply(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        x.par_iter_mut().zip(p.par_iter()).for_each(|(xi, pi)| *xi += alpha * pi);
        r.par_iter_mut().zip(ap.par_iter()).for_each(|(ri, api)| *ri -= alpha * api);
        z.par_iter_mut()
            .zip(r.par_iter().zip(inv_diag.par_iter()))
            .for_each(|(zi, (ri, di))| *zi = ri * di);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.par_iter_mut().zip(z.par_iter()).for_each(|(pi, zi)| *pi = zi + beta * *pi);
        res = dot(&r, &r).sqrt() / b_norm;
        it += 1;
    }
    // recompute the true residual so drift in the recursion is not reported
    a.apply(x, &mut ap);
    let true_res = ap.iter().zip(b).map(|(q, bi)| (bi - q) * (bi - q)).sum::<f64>().sqrt() / b_norm;
    CgOutcome {
        iterations: it,
        relative_residual: true_res,
        converged: true_res <= tol * 10.0,
    }
}
