//! Quasistatic linear elasticity in the film over the rigid substrate.
//!
//! The displacement is split as `u = ubar + v` with `ubar = (e1 x1, e2 x2, 0)`
//! and `v` periodic, vanishing on the substrate. The film `0 < y < h(x)` is
//! mapped onto a fixed slab of `m` element layers, node `(i, j, k)` sitting at
//! height `k h(x_ij) / m`.

mod element;
mod solver;
mod tensor;

pub use tensor::{ElasticTensor, Mismatch};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridProfile, GridSpec};
use element::{ElementGeometry, Mat3, QuadratureTable};
use solver::{node_id, slot, BlockMatrix};

/// Default relative residual for the conjugate gradient solve.
pub const CG_TOLERANCE: f64 = 1e-10;

/// Elements assembled per parallel batch.
const ASSEMBLY_BATCH: usize = 4096;

/// Reference slab over the periodic base grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SlabMesh {
    grid: GridSpec,
    layers: usize,
}

impl SlabMesh {
    pub fn new(grid: GridSpec, layers: usize) -> Result<Self> {
        if layers < 4 {
            return Err(Error::InvalidParameter(format!("slab needs at least 4 layers, got {layers}")));
        }
        Ok(SlabMesh { grid, layers })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    /// Number of scalar unknowns of the periodic remainder.
    pub fn unknowns(&self) -> usize {
        3 * self.grid.len() * self.layers
    }

    fn elements(&self) -> usize {
        self.grid.len() * self.layers
    }

    /// Element `e = (i n + j) m + k`.
    fn element_index(&self, e: usize) -> (usize, usize, usize) {
        let m = self.layers;
        let n = self.grid.n();
        let k = e % m;
        let ij = e / m;
        (ij / n, ij % n, k)
    }

    fn column_heights(&self, h: &[f64], i: usize, j: usize) -> [f64; 4] {
        let n = self.grid.n();
        let i1 = (i + 1) % n;
        let j1 = (j + 1) % n;
        [h[i * n + j], h[i1 * n + j], h[i * n + j1], h[i1 * n + j1]]
    }

    fn geometry(&self, h: &[f64], i: usize, j: usize, k: usize) -> ElementGeometry {
        ElementGeometry::new(self.grid.spacing(), k, self.layers, self.column_heights(h, i, j))
    }

    /// Global node of local node `a` of element `(i, j, k)`, `None` on the substrate.
    fn local_node(&self, i: usize, j: usize, k: usize, a: usize) -> Option<usize> {
        let n = self.grid.n();
        let c = element::corner(a);
        let kk = k + c[2];
        if kk == 0 {
            return None;
        }
        Some(node_id(n, self.layers, (i + c[0]) % n, (j + c[1]) % n, kk))
    }

    fn gather(&self, v: &[f64], i: usize, j: usize, k: usize) -> [[f64; 3]; 8] {
        let mut out = [[0.0; 3]; 8];
        for (a, va) in out.iter_mut().enumerate() {
            if let Some(node) = self.local_node(i, j, k, a) {
                va.copy_from_slice(&v[3 * node..3 * node + 3]);
            }
        }
        out
    }
}

/// Options for [`solve_equilibrium_with`].
#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tolerance: f64,
    /// Defaults to `20 sqrt(unknowns)`.
    pub max_iterations: Option<usize>,
    /// Heights must stay strictly above this floor.
    pub floor: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: CG_TOLERANCE,
            max_iterations: None,
            floor: 0.0,
        }
    }
}

/// Elastic equilibrium of the film over a given profile.
#[derive(Clone, Debug)]
pub struct ElasticState {
    mesh: SlabMesh,
    tensor: ElasticTensor,
    mismatch: Mismatch,
    heights: GridProfile,
    remainder: Vec<f64>,
    energy: f64,
    surface_trace: Vec<f64>,
    iterations: usize,
    residual: f64,
}

/// Solves with default options from a zero initial guess.
pub fn solve_equilibrium(
    h: &GridProfile,
    tensor: &ElasticTensor,
    mismatch: &Mismatch,
    mesh: &SlabMesh,
) -> Result<ElasticState> {
    solve_equilibrium_with(h, tensor, mismatch, mesh, &SolveOptions::default(), None)
}

/// Solves the equilibrium, optionally warm-started from a previous state on
/// the same mesh.
pub fn solve_equilibrium_with(
    h: &GridProfile,
    tensor: &ElasticTensor,
    mismatch: &Mismatch,
    mesh: &SlabMesh,
    opts: &SolveOptions,
    initial: Option<&[f64]>,
) -> Result<ElasticState> {
    mesh.grid.check_same(h.spec())?;
    let min = h.min();
    if !(min > opts.floor) || !(min > 0.0) {
        return Err(Error::BelowFloor {
            min,
            floor: opts.floor.max(0.0),
        });
    }
    let dim = mesh.unknowns();
    if mismatch.is_zero() {
        return Ok(ElasticState::trivial(h, tensor, mismatch, mesh));
    }
    let base = mismatch.base_strain();
    let (matrix, load) = assemble(mesh, tensor, &base, h.values());
    let mut v = match initial {
        Some(x0) if x0.len() == dim => x0.to_vec(),
        Some(x0) => return Err(Error::GridMismatch(format!("initial guess has {} entries, expected {dim}", x0.len()))),
        None => vec![0.0; dim],
    };
    let cap = opts.max_iterations.unwrap_or_else(|| (20.0 * (dim as f64).sqrt()).ceil() as usize);
    let out = solver::pcg(&matrix, &load, &mut v, opts.tolerance, cap);
    if !out.converged {
        return Err(Error::SolverDiverged {
            iterations: out.iterations,
            residual: out.relative_residual,
        });
    }
    let mut state = ElasticState {
        mesh: mesh.clone(),
        tensor: *tensor,
        mismatch: *mismatch,
        heights: h.clone(),
        remainder: v,
        energy: 0.0,
        surface_trace: Vec::new(),
        iterations: out.iterations,
        residual: out.relative_residual,
    };
    state.energy = state.frozen_energy(h)?;
    state.surface_trace = state.compute_trace();
    Ok(state)
}

fn assemble(mesh: &SlabMesh, tensor: &ElasticTensor, base: &Mat3, h: &[f64]) -> (BlockMatrix, Vec<f64>) {
    let n = mesh.grid.n();
    let m = mesh.layers;
    let table = QuadratureTable::new();
    let mut matrix = BlockMatrix::zeros(n, m);
    let mut load = vec![0.0; mesh.unknowns()];
    let total = mesh.elements();
    let mut start = 0;
    while start < total {
        let end = (start + ASSEMBLY_BATCH).min(total);
        let locals: Vec<_> = (start..end)
            .into_par_iter()
            .map(|e| {
                let (i, j, k) = mesh.element_index(e);
                element::stiffness_and_load(&mesh.geometry(h, i, j, k), tensor, base, &table)
            })
            .collect();
        for (offset, (ke, fe)) in locals.iter().enumerate() {
            let (i, j, k) = mesh.element_index(start + offset);
            for a in 0..8 {
                let Some(row) = mesh.local_node(i, j, k, a) else { continue };
                let ca = element::corner(a);
                for alpha in 0..3 {
                    load[3 * row + alpha] += fe[3 * a + alpha];
                }
                for b in 0..8 {
                    if mesh.local_node(i, j, k, b).is_none() {
                        continue;
                    }
                    let cb = element::corner(b);
                    let s = slot(
                        cb[0] as isize - ca[0] as isize,
                        cb[1] as isize - ca[1] as isize,
                        cb[2] as isize - ca[2] as isize,
                    );
                    let blk = matrix.block_mut(row, s);
                    for alpha in 0..3 {
                        for beta in 0..3 {
                            blk[3 * alpha + beta] += ke[(3 * a + alpha) * 24 + 3 * b + beta];
                        }
                    }
                }
            }
        }
        start = end;
    }
    (matrix, load)
}

/// Closed-form affine equilibrium of the flat film: the vertical gradient
/// `b` of `v = y b` solving `(C(E0 + sym(b x e3))) e3 = 0`.
pub fn affine_vertical_gradient(tensor: &ElasticTensor, mismatch: &Mismatch) -> [f64; 3] {
    let c = tensor.voigt();
    let [e1, e2] = mismatch.components();
    // unknown Voigt strains: e33 = b3, 2e23 = b2, 2e13 = b1
    let rows = [2usize, 3, 4];
    let unknown_cols = [4usize, 3, 2];
    let mut a = [[0.0; 3]; 3];
    let mut rhs = [0.0; 3];
    for (r, &row) in rows.iter().enumerate() {
        for (u, &col) in unknown_cols.iter().enumerate() {
            a[r][u] = c[row][col];
        }
        rhs[r] = -(c[row][0] * e1 + c[row][1] * e2);
    }
    let (_, inv) = element::invert3(&a);
    let mut b = [0.0; 3];
    for (u, bu) in b.iter_mut().enumerate() {
        *bu = inv[u][0] * rhs[0] + inv[u][1] * rhs[1] + inv[u][2] * rhs[2];
    }
    b
}

/// Strain of the affine flat-film equilibrium.
pub fn affine_strain(tensor: &ElasticTensor, mismatch: &Mismatch) -> [[f64; 3]; 3] {
    let b = affine_vertical_gradient(tensor, mismatch);
    let mut e = mismatch.base_strain();
    e[0][2] = 0.5 * b[0];
    e[2][0] = 0.5 * b[0];
    e[1][2] = 0.5 * b[1];
    e[2][1] = 0.5 * b[1];
    e[2][2] = b[2];
    e
}

/// The flat film `h = d` with its affine equilibrium, built in closed form.
pub fn flat_equilibrium(d: f64, tensor: &ElasticTensor, mismatch: &Mismatch, mesh: &SlabMesh) -> Result<ElasticState> {
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::InvalidParameter(format!("flat height must be positive, got {d}")));
    }
    let h = GridProfile::constant(mesh.grid, d);
    if mismatch.is_zero() {
        return Ok(ElasticState::trivial(&h, tensor, mismatch, mesh));
    }
    let b = affine_vertical_gradient(tensor, mismatch);
    let n = mesh.grid.n();
    let m = mesh.layers;
    let mut v = vec![0.0; mesh.unknowns()];
    for i in 0..n {
        for j in 0..n {
            for k in 1..=m {
                let y = k as f64 / m as f64 * d;
                let node = node_id(n, m, i, j, k);
                for c in 0..3 {
                    v[3 * node + c] = y * b[c];
                }
            }
        }
    }
    let w = tensor.energy_density(&affine_strain(tensor, mismatch));
    let ell = mesh.grid.ell();
    Ok(ElasticState {
        mesh: mesh.clone(),
        tensor: *tensor,
        mismatch: *mismatch,
        heights: h,
        remainder: v,
        energy: w * ell * ell * d,
        surface_trace: vec![w; n * n],
        iterations: 0,
        residual: 0.0,
    })
}

/// `W(Eu)` on the film surface at each grid point.
pub fn boundary_energy_density(state: &ElasticState, h: &GridProfile) -> Result<GridProfile> {
    state.mesh.grid.check_same(h.spec())?;
    if h.max_abs_diff(&state.heights) != 0.0 {
        return Err(Error::GridMismatch("state was solved on a different profile".into()));
    }
    Ok(state.surface_trace())
}

impl ElasticState {
    fn trivial(h: &GridProfile, tensor: &ElasticTensor, mismatch: &Mismatch, mesh: &SlabMesh) -> Self {
        ElasticState {
            mesh: mesh.clone(),
            tensor: *tensor,
            mismatch: *mismatch,
            heights: h.clone(),
            remainder: vec![0.0; mesh.unknowns()],
            energy: 0.0,
            surface_trace: vec![0.0; mesh.grid.len()],
            iterations: 0,
            residual: 0.0,
        }
    }

    pub fn mesh(&self) -> &SlabMesh {
        &self.mesh
    }

    pub fn tensor(&self) -> &ElasticTensor {
        &self.tensor
    }

    pub fn mismatch(&self) -> &Mismatch {
        &self.mismatch
    }

    pub fn heights(&self) -> &GridProfile {
        &self.heights
    }

    /// Total elastic energy of the film.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn surface_trace(&self) -> GridProfile {
        GridProfile::new(self.mesh.grid, self.surface_trace.clone()).expect("trace has grid length")
    }

    /// Periodic remainder `v` at the free nodes, three components per node.
    pub fn remainder(&self) -> &[f64] {
        &self.remainder
    }

    pub fn cg_iterations(&self) -> usize {
        self.iterations
    }

    pub fn cg_residual(&self) -> f64 {
        self.residual
    }

    /// Physical position and displacement `u = ubar + v` of node `(i, j, k)`,
    /// with `k = 0` on the substrate.
    pub fn node(&self, i: usize, j: usize, k: usize) -> ([f64; 3], [f64; 3]) {
        let n = self.mesh.grid.n();
        let m = self.mesh.layers;
        let (x1, x2) = self.mesh.grid.coords(i, j);
        let y = k as f64 / m as f64 * self.heights.values()[i * n + j];
        let [e1, e2] = self.mismatch.components();
        let mut u = [e1 * x1, e2 * x2, 0.0];
        if k > 0 {
            let node = node_id(n, m, i, j, k);
            for c in 0..3 {
                u[c] += self.remainder[3 * node + c];
            }
        }
        ([x1, x2, y], u)
    }

    /// Energy of the stored nodal remainder carried over to the film over `h`.
    pub fn frozen_energy(&self, h: &GridProfile) -> Result<f64> {
        self.mesh.grid.check_same(h.spec())?;
        if self.mismatch.is_zero() {
            return Ok(0.0);
        }
        Ok(self.integrate(&self.remainder, h.values()))
    }

    fn integrate(&self, remainder: &[f64], hv: &[f64]) -> f64 {
        let table = QuadratureTable::new();
        let base = self.mismatch.base_strain();
        let parts: Vec<f64> = (0..self.mesh.elements())
            .into_par_iter()
            .with_min_len(ASSEMBLY_BATCH)
            .map(|e| {
                let (i, j, k) = self.mesh.element_index(e);
                let v = self.mesh.gather(remainder, i, j, k);
                element::element_energy(&self.mesh.geometry(hv, i, j, k), &self.tensor, &base, &v, &table)
            })
            .collect();
        sum_chunked(&parts)
    }

    /// Gradient of [`frozen_energy`](Self::frozen_energy) with respect to the
    /// grid heights.
    pub fn frozen_energy_gradient(&self, h: &GridProfile) -> Result<Vec<f64>> {
        self.mesh.grid.check_same(h.spec())?;
        let n = self.mesh.grid.n();
        let mut out = vec![0.0; n * n];
        if self.mismatch.is_zero() {
            return Ok(out);
        }
        let table = QuadratureTable::new();
        let base = self.mismatch.base_strain();
        let hv = h.values();
        let m = self.mesh.layers;
        // one task per column so every column sum has a fixed order
        let per_cell: Vec<[f64; 4]> = (0..n * n)
            .into_par_iter()
            .map(|ij| {
                let (i, j) = (ij / n, ij % n);
                let mut acc = [0.0; 4];
                for k in 0..m {
                    let v = self.mesh.gather(&self.remainder, i, j, k);
                    let g =
                        element::element_height_gradient(&self.mesh.geometry(hv, i, j, k), &self.tensor, &base, &v, &table);
                    for c in 0..4 {
                        acc[c] += g[c];
                    }
                }
                acc
            })
            .collect();
        for i in 0..n {
            for j in 0..n {
                let g = per_cell[i * n + j];
                let i1 = (i + 1) % n;
                let j1 = (j + 1) % n;
                out[i * n + j] += g[0];
                out[i1 * n + j] += g[1];
                out[i * n + j1] += g[2];
                out[i1 * n + j1] += g[3];
            }
        }
        Ok(out)
    }

    /// Relative residual `|K v - f| / |f|` of the assembled system at the
    /// stored remainder.
    pub fn galerkin_residual(&self) -> f64 {
        if self.mismatch.is_zero() {
            return 0.0;
        }
        let (matrix, load) = assemble(&self.mesh, &self.tensor, &self.mismatch.base_strain(), self.heights.values());
        let mut kv = vec![0.0; load.len()];
        matrix.apply(&self.remainder, &mut kv);
        let r: f64 = kv.iter().zip(&load).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let f: f64 = load.iter().map(|x| x * x).sum::<f64>().sqrt();
        if f == 0.0 {
            r
        } else {
            r / f
        }
    }

    /// Discrete energy of an arbitrary remainder on the stored profile.
    pub fn energy_of_remainder(&self, remainder: &[f64]) -> Result<f64> {
        if remainder.len() != self.remainder.len() {
            return Err(Error::GridMismatch(format!(
                "remainder has {} entries, expected {}",
                remainder.len(),
                self.remainder.len()
            )));
        }
        Ok(self.integrate(remainder, self.heights.values()))
    }

    /// Strain at the centroid of element `(i, j, k)`.
    pub fn element_strain(&self, i: usize, j: usize, k: usize) -> [[f64; 3]; 3] {
        self.strain_at(i, j, k, [0.0, 0.0, 0.0])
    }

    fn strain_at(&self, i: usize, j: usize, k: usize, xi: [f64; 3]) -> Mat3 {
        let geom = self.mesh.geometry(self.heights.values(), i, j, k);
        let v = self.mesh.gather(&self.remainder, i, j, k);
        let pm = element::map_point(&geom, &element::shape_derivatives(xi));
        element::total_strain(&self.mismatch.base_strain(), &element::displacement_gradient(&pm, &v))
    }

    /// `W(Eu)` at every element centroid, indexed `(i n + j) m + k`.
    pub fn cell_energy_density(&self) -> Vec<f64> {
        (0..self.mesh.elements())
            .into_par_iter()
            .map(|e| {
                let (i, j, k) = self.mesh.element_index(e);
                self.tensor.energy_density(&self.element_strain(i, j, k))
            })
            .collect()
    }

    /// Strains of the four top-layer elements meeting at a surface node are
    /// extrapolated to their top corners and averaged before taking `W`.
    fn compute_trace(&self) -> Vec<f64> {
        let n = self.mesh.grid.n();
        let top = self.mesh.layers - 1;
        let corner_strains: Vec<[Mat3; 4]> = (0..n * n)
            .into_par_iter()
            .map(|ij| {
                let (i, j) = (ij / n, ij % n);
                let mut out = [[[0.0; 3]; 3]; 4];
                for (c, e) in out.iter_mut().enumerate() {
                    let xi = [2.0 * (c & 1) as f64 - 1.0, 2.0 * (c >> 1) as f64 - 1.0, 1.0];
                    *e = self.strain_at(i, j, top, xi);
                }
                out
            })
            .collect();
        let mut trace = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let im = (i + n - 1) % n;
                let jm = (j + n - 1) % n;
                let contributions = [
                    corner_strains[i * n + j][0],
                    corner_strains[im * n + j][1],
                    corner_strains[i * n + jm][2],
                    corner_strains[im * n + jm][3],
                ];
                let mut avg = [[0.0; 3]; 3];
                for e in &contributions {
                    for a in 0..3 {
                        for b in 0..3 {
                            avg[a][b] += 0.25 * e[a][b];
                        }
                    }
                }
                trace[i * n + j] = self.tensor.energy_density(&avg);
            }
        }
        trace
    }

    /// Text dump: header, one line per node with position and displacement,
    /// then per-element energy density and a summary line.
    pub fn to_text(&self) -> String {
        use crate::grid::fmt_num;
        let n = self.mesh.grid.n();
        let m = self.mesh.layers;
        let mut s = format!("{} {} {}\n", fmt_num(self.mesh.grid.ell()), n, m);
        s.push_str("# nodes: i j k x1 x2 y u1 u2 u3\n");
        for i in 0..n {
            for j in 0..n {
                for k in 0..=m {
                    let (x, u) = self.node(i, j, k);
                    s.push_str(&format!(
                        "{i} {j} {k} {} {} {} {} {} {}\n",
                        fmt_num(x[0]),
                        fmt_num(x[1]),
                        fmt_num(x[2]),
                        fmt_num(u[0]),
                        fmt_num(u[1]),
                        fmt_num(u[2])
                    ));
                }
            }
        }
        s.push_str("# cells: i j k W\n");
        for (e, w) in self.cell_energy_density().iter().enumerate() {
            let (i, j, k) = self.mesh.element_index(e);
            s.push_str(&format!("{i} {j} {k} {}\n", fmt_num(*w)));
        }
        s.push_str(&format!("energy {}\n", fmt_num(self.energy)));
        s
    }
}

fn sum_chunked(parts: &[f64]) -> f64 {
    parts.chunks(ASSEMBLY_BATCH).map(|c| c.iter().sum::<f64>()).sum()
}

/// Dense copy of the assembled system, for small verification problems.
pub fn assembled_system(
    h: &GridProfile,
    tensor: &ElasticTensor,
    mismatch: &Mismatch,
    mesh: &SlabMesh,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    mesh.grid.check_same(h.spec())?;
    let dim = mesh.unknowns();
    if dim > 20_000 {
        return Err(Error::InvalidParameter(format!("dense system of size {dim} is too large")));
    }
    let (matrix, load) = assemble(mesh, tensor, &mismatch.base_strain(), h.values());
    let mut dense = vec![vec![0.0; dim]; dim];
    let mut unit = vec![0.0; dim];
    let mut col = vec![0.0; dim];
    for c in 0..dim {
        unit[c] = 1.0;
        matrix.apply(&unit, &mut col);
        for r in 0..dim {
            dense[r][c] = col[r];
        }
        unit[c] = 0.0;
    }
    Ok((dense, load))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mesh(n: usize, m: usize) -> SlabMesh {
        SlabMesh::new(GridSpec::new(1.0, n).unwrap(), m).unwrap()
    }

    #[test]
    fn isotropic_affine_solution() {
        let t = ElasticTensor::isotropic(1.3, 0.9).unwrap();
        let mm = Mismatch::new(0.02, 0.02).unwrap();
        let b = affine_vertical_gradient(&t, &mm);
        assert!(b[0].abs() < 1e-15 && b[1].abs() < 1e-15);
        assert!((b[2] + 2.0 * 1.3 * 0.02 / (1.3 + 1.8)).abs() < 1e-15);
    }

    #[test]
    fn rejects_few_layers() {
        assert!(SlabMesh::new(GridSpec::new(1.0, 8).unwrap(), 3).is_err());
    }

    #[test]
    fn flat_film_solution_is_affine() {
        let t = ElasticTensor::isotropic(1.0, 1.0).unwrap();
        let mm = Mismatch::new(0.01, 0.015).unwrap();
        let msh = mesh(8, 4);
        let h = GridProfile::constant(*msh.grid(), 0.2);
        let solved = solve_equilibrium(&h, &t, &mm, &msh).unwrap();
        let exact = flat_equilibrium(0.2, &t, &mm, &msh).unwrap();
        let diff = solved
            .remainder()
            .iter()
            .zip(exact.remainder())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "{diff}");
        assert!((solved.energy() - exact.energy()).abs() < 1e-12 * exact.energy());
    }
}
