//! Trilinear hexahedra on the mapped slab. An element spans grid cell
//! `(i, j)` and layer `k`; its eight nodes sit at heights `(k + a3) / m`
//! times the column height of their grid point.

use super::tensor::{to_voigt, ElasticTensor};

pub(crate) type Mat3 = [[f64; 3]; 3];

/// Local node `a = a1 + 2 a2 + 4 a3` with corner offsets `(a1, a2, a3)`.
#[inline]
pub(crate) fn corner(a: usize) -> [usize; 3] {
    [a & 1, (a >> 1) & 1, (a >> 2) & 1]
}

/// Column of local node `a` among the four corner columns `c = a1 + 2 a2`.
#[inline]
pub(crate) fn column_of(a: usize) -> usize {
    a & 3
}

/// Shape-function derivatives `dN_a / d xi` at a reference point in `[-1, 1]^3`.
pub(crate) fn shape_derivatives(xi: [f64; 3]) -> [[f64; 3]; 8] {
    let mut d = [[0.0; 3]; 8];
    for (a, da) in d.iter_mut().enumerate() {
        let c = corner(a);
        let s = [2.0 * c[0] as f64 - 1.0, 2.0 * c[1] as f64 - 1.0, 2.0 * c[2] as f64 - 1.0];
        let f = [1.0 + s[0] * xi[0], 1.0 + s[1] * xi[1], 1.0 + s[2] * xi[2]];
        da[0] = 0.125 * s[0] * f[1] * f[2];
        da[1] = 0.125 * s[1] * f[0] * f[2];
        da[2] = 0.125 * s[2] * f[0] * f[1];
    }
    d
}

/// 2x2x2 Gauss rule (unit weights).
pub(crate) fn gauss_points() -> [[f64; 3]; 8] {
    let g = 1.0 / 3f64.sqrt();
    let mut pts = [[0.0; 3]; 8];
    for (q, p) in pts.iter_mut().enumerate() {
        let c = corner(q);
        *p = [
            if c[0] == 1 { g } else { -g },
            if c[1] == 1 { g } else { -g },
            if c[2] == 1 { g } else { -g },
        ];
    }
    pts
}

/// Geometry of one element: node coordinates relative to the cell corner.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ElementGeometry {
    pub nodes: [[f64; 3]; 8],
    /// `(k + a3) / m` for each node.
    pub eta: [f64; 8],
}

impl ElementGeometry {
    pub fn new(spacing: f64, layer: usize, layers: usize, column_heights: [f64; 4]) -> Self {
        let mut nodes = [[0.0; 3]; 8];
        let mut eta = [0.0; 8];
        for a in 0..8 {
            let c = corner(a);
            eta[a] = (layer + c[2]) as f64 / layers as f64;
            nodes[a] = [
                c[0] as f64 * spacing,
                c[1] as f64 * spacing,
                eta[a] * column_heights[column_of(a)],
            ];
        }
        ElementGeometry { nodes, eta }
    }
}

/// Jacobian data at one reference point.
pub(crate) struct PointMap {
    pub det: f64,
    pub inv: Mat3,
    /// Physical gradients of the eight shape functions.
    pub grads: [[f64; 3]; 8],
}

pub(crate) fn map_point(geom: &ElementGeometry, dn: &[[f64; 3]; 8]) -> PointMap {
    let mut f = [[0.0; 3]; 3];
    for a in 0..8 {
        for i in 0..3 {
            for j in 0..3 {
                f[i][j] += geom.nodes[a][i] * dn[a][j];
            }
        }
    }
    let (det, inv) = invert3(&f);
    let mut grads = [[0.0; 3]; 8];
    for a in 0..8 {
        for j in 0..3 {
            grads[a][j] = dn[a][0] * inv[0][j] + dn[a][1] * inv[1][j] + dn[a][2] * inv[2][j];
        }
    }
    PointMap { det, inv, grads }
}

pub(crate) fn invert3(f: &Mat3) -> (f64, Mat3) {
    let det = f[0][0] * (f[1][1] * f[2][2] - f[1][2] * f[2][1]) - f[0][1] * (f[1][0] * f[2][2] - f[1][2] * f[2][0])
        + f[0][2] * (f[1][0] * f[2][1] - f[1][1] * f[2][0]);
    let inv_det = 1.0 / det;
    let inv = [
        [
            (f[1][1] * f[2][2] - f[1][2] * f[2][1]) * inv_det,
            (f[0][2] * f[2][1] - f[0][1] * f[2][2]) * inv_det,
            (f[0][1] * f[1][2] - f[0][2] * f[1][1]) * inv_det,
        ],
        [
            (f[1][2] * f[2][0] - f[1][0] * f[2][2]) * inv_det,
            (f[0][0] * f[2][2] - f[0][2] * f[2][0]) * inv_det,
            (f[0][2] * f[1][0] - f[0][0] * f[1][2]) * inv_det,
        ],
        [
            (f[1][0] * f[2][1] - f[1][1] * f[2][0]) * inv_det,
            (f[0][1] * f[2][0] - f[0][0] * f[2][1]) * inv_det,
            (f[0][0] * f[1][1] - f[0][1] * f[1][0]) * inv_det,
        ],
    ];
    (det, inv)
}

/// Strain-displacement rows for one node: Voigt strain = `B * v_a`.
#[inline]
fn b_matrix(g: &[f64; 3]) -> [[f64; 3]; 6] {
    [
        [g[0], 0.0, 0.0],
        [0.0, g[1], 0.0],
        [0.0, 0.0, g[2]],
        [0.0, g[2], g[1]],
        [g[2], 0.0, g[0]],
        [g[1], g[0], 0.0],
    ]
}

/// Displacement gradient `du_i / dx_j` of the nodal field.
pub(crate) fn displacement_gradient(pm: &PointMap, v: &[[f64; 3]; 8]) -> Mat3 {
    let mut g = [[0.0; 3]; 3];
    for a in 0..8 {
        for i in 0..3 {
            for j in 0..3 {
                g[i][j] += v[a][i] * pm.grads[a][j];
            }
        }
    }
    g
}

pub(crate) fn total_strain(base: &Mat3, du: &Mat3) -> Mat3 {
    let mut e = *base;
    for i in 0..3 {
        for j in 0..3 {
            e[i][j] += 0.5 * (du[i][j] + du[j][i]);
        }
    }
    e
}

/// Element stiffness (24x24, row-major by `3 a + component`) and the load
/// generated by the constant base strain.
pub(crate) fn stiffness_and_load(
    geom: &ElementGeometry,
    tensor: &ElasticTensor,
    base: &Mat3,
    table: &QuadratureTable,
) -> (Box<[f64; 576]>, [f64; 24]) {
    let c = tensor.voigt();
    let sigma0 = {
        let e0 = to_voigt(base);
        let mut s = [0.0; 6];
        for i in 0..6 {
            for j in 0..6 {
                s[i] += c[i][j] * e0[j];
            }
        }
        s
    };
    let mut k = Box::new([0.0; 576]);
    let mut f = [0.0; 24];
    for dn in &table.points {
        let pm = map_point(geom, dn);
        let w = pm.det;
        let bs: Vec<[[f64; 3]; 6]> = pm.grads.iter().map(b_matrix).collect();
        // C B_b for each node
        let mut cb = [[[0.0; 3]; 6]; 8];
        for b in 0..8 {
            for r in 0..6 {
                for col in 0..3 {
                    let mut acc = 0.0;
                    for t in 0..6 {
                        acc += c[r][t] * bs[b][t][col];
                    }
                    cb[b][r][col] = acc;
                }
            }
        }
        for a in 0..8 {
            for alpha in 0..3 {
                let mut load = 0.0;
                for r in 0..6 {
                    load += bs[a][r][alpha] * sigma0[r];
                }
                f[3 * a + alpha] -= w * load;
                for b in 0..8 {
                    for beta in 0..3 {
                        let mut acc = 0.0;
                        for r in 0..6 {
                            acc += bs[a][r][alpha] * cb[b][r][beta];
                        }
                        k[(3 * a + alpha) * 24 + 3 * b + beta] += w * acc;
                    }
                }
            }
        }
    }
    (k, f)
}

/// `int W(E0 + E v)` over the element.
pub(crate) fn element_energy(
    geom: &ElementGeometry,
    tensor: &ElasticTensor,
    base: &Mat3,
    v: &[[f64; 3]; 8],
    table: &QuadratureTable,
) -> f64 {
    table
        .points
        .iter()
        .map(|dn| {
            let pm = map_point(geom, dn);
            let e = total_strain(base, &displacement_gradient(&pm, v));
            pm.det * tensor.energy_density(&e)
        })
        .sum()
}

/// Derivative of the element energy with respect to the four corner column
/// heights, nodal displacements held fixed in reference coordinates.
pub(crate) fn element_height_gradient(
    geom: &ElementGeometry,
    tensor: &ElasticTensor,
    base: &Mat3,
    v: &[[f64; 3]; 8],
    table: &QuadratureTable,
) -> [f64; 4] {
    let mut out = [0.0; 4];
    for dn in &table.points {
        let pm = map_point(geom, dn);
        let du = displacement_gradient(&pm, v);
        let e = total_strain(base, &du);
        let sigma = tensor.stress(&e);
        let w = tensor.energy_density(&e);
        // d(det F * W) = det F * sum_j dF_3j c_j
        let mut cvec = [0.0; 3];
        for (j, cj) in cvec.iter_mut().enumerate() {
            let mut acc = w * pm.inv[j][2];
            for l in 0..3 {
                let mut m3l = 0.0;
                for i in 0..3 {
                    m3l += du[i][2] * sigma[i][l];
                }
                acc -= m3l * pm.inv[j][l];
            }
            *cj = acc;
        }
        for a in 0..8 {
            let d = geom.eta[a] * (cvec[0] * dn[a][0] + cvec[1] * dn[a][1] + cvec[2] * dn[a][2]);
            out[column_of(a)] += pm.det * d;
        }
    }
    out
}

/// Precomputed reference derivatives at the Gauss points.
pub(crate) struct QuadratureTable {
    pub points: [[[f64; 3]; 8]; 8],
}

impl QuadratureTable {
    pub fn new() -> Self {
        let gp = gauss_points();
        let mut points = [[[0.0; 3]; 8]; 8];
        for (q, p) in gp.iter().enumerate() {
            points[q] = shape_derivatives(*p);
        }
        QuadratureTable { points }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_geometry() -> ElementGeometry {
        ElementGeometry::new(0.25, 1, 4, [0.3, 0.35, 0.28, 0.33])
    }

    #[test]
    fn shape_derivatives_sum_to_zero() {
        let d = shape_derivatives([0.3, -0.2, 0.7]);
        for j in 0..3 {
            let s: f64 = d.iter().map(|r| r[j]).sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn stiffness_is_symmetric_with_rigid_translations_in_kernel() {
        let t = ElasticTensor::isotropic(1.2, 0.8).unwrap();
        let table = QuadratureTable::new();
        let (k, _) = stiffness_and_load(&sample_geometry(), &t, &[[0.0; 3]; 3], &table);
        for r in 0..24 {
            for c in 0..24 {
                assert!((k[r * 24 + c] - k[c * 24 + r]).abs() < 1e-12);
            }
        }
        for comp in 0..3 {
            for r in 0..24 {
                let s: f64 = (0..8).map(|b| k[r * 24 + 3 * b + comp]).sum();
                assert!(s.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn height_gradient_matches_finite_differences() {
        let t = ElasticTensor::isotropic(1.0, 0.6).unwrap();
        let table = QuadratureTable::new();
        let base = [[0.02, 0.0, 0.0], [0.0, 0.01, 0.0], [0.0, 0.0, 0.0]];
        let mut v = [[0.0; 3]; 8];
        for (a, va) in v.iter_mut().enumerate() {
            *va = [0.001 * a as f64, -0.002 * (a % 3) as f64, 0.0015 * (a % 5) as f64];
        }
        let hc = [0.3, 0.35, 0.28, 0.33];
        let g = element_height_gradient(&ElementGeometry::new(0.25, 1, 4, hc), &t, &base, &v, &table);
        for c in 0..4 {
            let step = 1e-6;
            let mut hp = hc;
            let mut hm = hc;
            hp[c] += step;
            hm[c] -= step;
            let ep = element_energy(&ElementGeometry::new(0.25, 1, 4, hp), &t, &base, &v, &table);
            let em = element_energy(&ElementGeometry::new(0.25, 1, 4, hm), &t, &base, &v, &table);
            let fd = (ep - em) / (2.0 * step);
            assert!((fd - g[c]).abs() < 1e-8 * g[c].abs().max(1e-6), "{fd} {}", g[c]);
        }
    }
}
