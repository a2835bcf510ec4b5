use crate::error::{Error, Result};

/// Elasticity tensor in Voigt form, ordering `(11, 22, 33, 23, 13, 12)` with
/// engineering shear strains, so `W(E) = e . C e / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElasticTensor {
    voigt: [[f64; 6]; 6],
    coercivity: f64,
}

impl ElasticTensor {
    pub fn isotropic(lambda: f64, mu: f64) -> Result<Self> {
        let mut c = [[0.0; 6]; 6];
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] = lambda;
            }
            c[i][i] += 2.0 * mu;
            c[i + 3][i + 3] = mu;
        }
        Self::from_voigt(c)
    }

    /// Validates major symmetry and coercivity. Minor symmetries are implied
    /// by the Voigt representation.
    pub fn from_voigt(voigt: [[f64; 6]; 6]) -> Result<Self> {
        for i in 0..6 {
            for j in 0..6 {
                if !voigt[i][j].is_finite() {
                    return Err(Error::InvalidParameter("elastic tensor has non-finite entries".into()));
                }
                if (voigt[i][j] - voigt[j][i]).abs() > 1e-12 * (1.0 + voigt[i][j].abs()) {
                    return Err(Error::InvalidParameter("elastic tensor lacks major symmetry".into()));
                }
            }
        }
        // Mandel scaling turns C M : M into an ordinary quadratic form with M : M = |m|^2
        let mut mandel = voigt;
        for (i, row) in mandel.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let si = if i >= 3 { std::f64::consts::SQRT_2 } else { 1.0 };
                let sj = if j >= 3 { std::f64::consts::SQRT_2 } else { 1.0 };
                *v *= si * sj;
            }
        }
        let min_eig = symmetric_eigenvalues(mandel).into_iter().fold(f64::INFINITY, f64::min);
        if !(min_eig > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "elastic tensor is not coercive (smallest eigenvalue {min_eig:e})"
            )));
        }
        Ok(ElasticTensor {
            voigt,
            coercivity: 0.5 * min_eig,
        })
    }

    pub fn voigt(&self) -> &[[f64; 6]; 6] {
        &self.voigt
    }

    /// Largest `k` with `C M : M >= 2 k M : M`.
    pub fn coercivity(&self) -> f64 {
        self.coercivity
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        let mut v = self.voigt;
        for row in v.iter_mut() {
            for x in row.iter_mut() {
                *x *= s;
            }
        }
        Self::from_voigt(v)
    }

    /// Stress of a symmetric strain, both as 3x3 matrices.
    pub fn stress(&self, e: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let ev = to_voigt(e);
        let mut sv = [0.0; 6];
        for i in 0..6 {
            for j in 0..6 {
                sv[i] += self.voigt[i][j] * ev[j];
            }
        }
        [[sv[0], sv[5], sv[4]], [sv[5], sv[1], sv[3]], [sv[4], sv[3], sv[2]]]
    }

    /// `W(E) = C E : E / 2`.
    pub fn energy_density(&self, e: &[[f64; 3]; 3]) -> f64 {
        let s = self.stress(e);
        let mut w = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                w += s[i][j] * e[i][j];
            }
        }
        0.5 * w
    }
}

/// Engineering-shear Voigt vector of a symmetric matrix.
pub(crate) fn to_voigt(e: &[[f64; 3]; 3]) -> [f64; 6] {
    [e[0][0], e[1][1], e[2][2], e[1][2] + e[2][1], e[0][2] + e[2][0], e[0][1] + e[1][0]]
}

/// Cyclic Jacobi eigenvalues of a small symmetric matrix.
fn symmetric_eigenvalues<const N: usize>(mut a: [[f64; N]; N]) -> [f64; N] {
    for _sweep in 0..100 {
        let off: f64 = (0..N)
            .flat_map(|i| (0..N).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..N).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = a[i][i];
    }
    out
}

/// Lattice mismatch `e0` imposed at the substrate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mismatch {
    e0: [f64; 2],
}

impl Mismatch {
    pub fn new(e1: f64, e2: f64) -> Result<Self> {
        if !(e1.is_finite() && e2.is_finite() && e1 > 0.0 && e2 > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mismatch components must be positive, got ({e1}, {e2})"
            )));
        }
        Ok(Mismatch { e0: [e1, e2] })
    }

    /// Degenerate zero mismatch: the film carries no elastic energy.
    pub fn zero() -> Self {
        Mismatch { e0: [0.0, 0.0] }
    }

    pub fn components(&self) -> [f64; 2] {
        self.e0
    }

    pub fn is_zero(&self) -> bool {
        self.e0 == [0.0, 0.0]
    }

    /// Strain of the affine substrate field `(e1 x1, e2 x2, 0)`.
    pub fn base_strain(&self) -> [[f64; 3]; 3] {
        [[self.e0[0], 0.0, 0.0], [0.0, self.e0[1], 0.0], [0.0, 0.0, 0.0]]
    }
}
