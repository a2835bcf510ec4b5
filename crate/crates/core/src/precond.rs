//! Constant-coefficient spectral preconditioner for the incremental objective.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::GridSpec;

/// Inverse of the periodic operator with symbol `c0 + alpha lam + beta lam^2`,
/// where `lam` is the symbol of `-(D1 D1 + D2 D2)` for the central difference.
pub(crate) struct SpectralPreconditioner {
    n: usize,
    inverse_symbol: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    backward: Arc<dyn Fft<f64>>,
}

impl SpectralPreconditioner {
    pub fn new(spec: &GridSpec, c0: f64, alpha: f64, beta: f64) -> Self {
        let n = spec.n();
        let s = spec.spacing();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let backward = planner.plan_fft_inverse(n);
        let sin2: Vec<f64> = (0..n)
            .map(|k| {
                let v = (2.0 * std::f64::consts::PI * k as f64 / n as f64).sin();
                v * v / (s * s)
            })
            .collect();
        let mut inverse_symbol = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let lam = sin2[a] + sin2[b];
                inverse_symbol[a * n + b] = 1.0 / (c0 + alpha * lam + beta * lam * lam);
            }
        }
        SpectralPreconditioner {
            n,
            inverse_symbol,
            forward,
            backward,
        }
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut buf: Vec<Complex64> = g.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        for (v, w) in buf.iter_mut().zip(&self.inverse_symbol) {
            *v *= *w;
        }
        self.transform(&mut buf, &self.backward);
        let scale = 1.0 / (n * n) as f64;
        buf.iter().map(|c| c.re * scale).collect()
    }

    fn transform(&self, buf: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        // rows are contiguous
        fft.process(buf);
        let mut column = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                column[i] = buf[i * n + j];
            }
            fft.process(&mut column);
            for i in 0..n {
                buf[i * n + j] = column[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::stencil;

    #[test]
    fn inverts_the_constant_coefficient_operator() {
        let spec = GridSpec::new(1.0, 16).unwrap();
        let (c0, alpha) = (3.0, 0.7);
        let pc = SpectralPreconditioner::new(&spec, c0, alpha, 0.0);
        let f: Vec<f64> = (0..256).map(|k| ((k * 37 % 11) as f64 - 5.0) * 0.1).collect();
        let u = pc.apply(&f);
        let d1 = stencil::central(&spec, &u, 0);
        let d2 = stencil::central(&spec, &u, 1);
        let div = stencil::divergence(&spec, &d1, &d2);
        for k in 0..256 {
            let back = c0 * u[k] - alpha * div[k];
            assert!((back - f[k]).abs() < 1e-12, "{back} {}", f[k]);
        }
    }
}
