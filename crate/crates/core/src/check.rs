//! Self-test battery run by the `check` subcommand.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anisotropy::fibonacci_sphere;
use crate::config::RunConfig;
use crate::elasticity::{flat_equilibrium, solve_equilibrium, Mismatch};
use crate::energy::{first_variation, incremental_objective, penalization};
use crate::error::Result;
use crate::geometry::differentiate;
use crate::grid::{GridProfile, GridSpec};

#[derive(Clone, Debug)]
pub struct CheckItem {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckItem {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        CheckItem { name, passed, detail }
    }
}

/// A smooth positive profile built from a few random Fourier modes.
pub fn random_profile(spec: GridSpec, mean: f64, amplitude: f64, rng: &mut impl Rng) -> GridProfile {
    let modes: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(-2..=2) as f64,
                rng.gen_range(-2..=2) as f64,
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let scale = amplitude / 4.0;
    GridProfile::from_fn(spec, |x, y| {
        mean + modes
            .iter()
            .map(|&(k1, k2, a, ph)| scale * a * (2.0 * PI * (k1 * x + k2 * y) / spec.ell() + ph).cos())
            .sum::<f64>()
    })
    .expect("finite by construction")
}

pub fn run_battery(cfg: &RunConfig) -> Result<Vec<CheckItem>> {
    let spec = cfg.grid()?;
    let mesh = cfg.mesh()?;
    let psi = cfg.anisotropy()?;
    let tensor = cfg.tensor()?;
    let mismatch = if cfg.mismatch == [0.0, 0.0] {
        Mismatch::new(0.01, 0.01)?
    } else {
        cfg.mismatch()?
    };
    let reg = cfg.regularization()?;
    let h0 = cfg.initial_profile()?;
    let d = h0.mean();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut out = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..20 {
        let h = random_profile(spec, d, 0.05 * spec.ell(), &mut rng);
        let g = differentiate(&h)?;
        worst = worst.max((g.curvature_sum.iter().sum::<f64>() / spec.len() as f64).abs());
    }
    out.push(CheckItem::new("curvature-zero-mean", worst <= 1e-12, format!("max |mean H| = {worst:e}")));

    let g = differentiate(&random_profile(spec, d, 0.05 * spec.ell(), &mut rng))?;
    let worst = (0..spec.len())
        .map(|k| {
            let (k1, k2) = g.principal_curvatures(k);
            (k1 + k2 - g.curvature_sum[k]).abs()
        })
        .fold(0.0, f64::max);
    out.push(CheckItem::new("shape-operator-trace", worst <= 1e-10, format!("max |k1 + k2 - H| = {worst:e}")));

    let (mut euler, mut homog, mut kernel) = (0.0f64, 0.0f64, 0.0f64);
    for xi in fibonacci_sphere(200) {
        let v = psi.evaluate(xi)?;
        let g = psi.gradient(xi)?;
        let h = psi.hessian(xi)?;
        euler = euler.max((g[0] * xi[0] + g[1] * xi[1] + g[2] * xi[2] - v).abs() / v);
        let scaled = psi.evaluate([2.5 * xi[0], 2.5 * xi[1], 2.5 * xi[2]])?;
        homog = homog.max((scaled - 2.5 * v).abs() / v);
        for row in h {
            kernel = kernel.max((row[0] * xi[0] + row[1] * xi[1] + row[2] * xi[2]).abs());
        }
    }
    out.push(CheckItem::new(
        "anisotropy-euler-relation",
        euler <= 1e-12 && homog <= 1e-12,
        format!("max relative |Dpsi.xi - psi| = {euler:e}, homogeneity {homog:e}"),
    ));
    out.push(CheckItem::new("anisotropy-hessian-kernel", kernel <= 1e-9, format!("max |D2psi xi| = {kernel:e}")));

    let c = tensor.coercivity();
    let mut ratio = f64::INFINITY;
    for _ in 0..200 {
        let mut e = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in i..3 {
                let v: f64 = rng.gen_range(-1.0..1.0);
                e[i][j] = v;
                e[j][i] = v;
            }
        }
        let norm: f64 = e.iter().flatten().map(|x| x * x).sum();
        ratio = ratio.min(tensor.energy_density(&e) / (0.5 * norm));
    }
    out.push(CheckItem::new(
        "elastic-coercivity",
        c > 0.0 && ratio >= c * (1.0 - 1e-12),
        format!("coercivity {c:e}, min 2W/|E|^2 = {ratio:e}"),
    ));

    let flat = GridProfile::constant(spec, d);
    let solved = solve_equilibrium(&flat, &tensor, &mismatch, &mesh)?;
    let exact = flat_equilibrium(d, &tensor, &mismatch, &mesh)?;
    let patch = solved
        .remainder()
        .iter()
        .zip(exact.remainder())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    out.push(CheckItem::new("elastic-patch-test", patch <= 1e-9, format!("max nodal deviation {patch:e}")));

    let h = random_profile(spec, d, 0.2 * d, &mut rng);
    let h_prev = h.map(|v| 0.99 * v + 0.005 * d);
    let state = solve_equilibrium(&h, &tensor, &mismatch, &mesh)?;
    let grad = first_variation(&h, &state, &h_prev, &psi, &reg)?;
    let mut gradient_err = 0.0f64;
    for _ in 0..4 {
        let mean = rng.gen_range(-1.0..1.0);
        let dir = random_profile(spec, mean, 1.0, &mut rng);
        let central = |s: f64| -> Result<f64> {
            let gp = incremental_objective(&h.offset(dir.values(), s), &h_prev, &state, &psi, &reg)?.objective();
            let gm = incremental_objective(&h.offset(dir.values(), -s), &h_prev, &state, &psi, &reg)?.objective();
            Ok((gp - gm) / (2.0 * s))
        };
        // Richardson on a step large enough to sit well above summation noise
        let fd = (4.0 * central(5e-5)? - central(1e-4)?) / 3.0;
        let an: f64 = grad.iter().zip(dir.values()).map(|(a, b)| a * b).sum::<f64>() * spec.cell_area();
        gradient_err = gradient_err.max((fd - an).abs() / an.abs().max(f64::MIN_POSITIVE));
    }
    out.push(CheckItem::new(
        "gradient-consistency",
        gradient_err <= 1e-5,
        format!("max relative error {gradient_err:e} over 4 directions"),
    ));

    let free = solve_equilibrium(&flat, &tensor, &Mismatch::zero(), &mesh)?;
    let g = first_variation(&flat, &free, &flat, &psi, &reg)?;
    let stationary = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    out.push(CheckItem::new(
        "flat-stationarity",
        stationary <= 1e-12,
        format!("max |first variation| at unstressed flat film {stationary:e}"),
    ));

    let pen = penalization(&h, &h, reg.tau)?;
    out.push(CheckItem::new("penalization-zero", pen == 0.0, format!("P(h, h) = {pen:e}")));

    let round = RunConfig::from_text(&cfg.to_toml(), &[]).map(|c| c == *cfg).unwrap_or(false);
    out.push(CheckItem::new("config-round-trip", round, String::new()));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_on_small_default() {
        let cfg = RunConfig::from_text(
            "[grid]\nn = 16\nlayers = 4\n[physics]\nanisotropy = \"cubic\"\ncubic_a = 0.1\nmismatch = [0.02, 0.02]\n",
            &[],
        )
        .unwrap();
        let items = run_battery(&cfg).unwrap();
        for i in &items {
            assert!(i.passed, "{} {}", i.name, i.detail);
        }
        assert_eq!(items.len(), 10);
    }
}
