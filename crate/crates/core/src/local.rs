//! Cell-centered Neumann Laplacian with reflecting ghost cells.
//!
//! The stencil couples each cell to its in-domain face neighbours only, so the
//! matrix has zero row and column sums: constants are in the kernel and every
//! output has zero mean.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{inner_h, mean, Field, Grid};

/// Largest mean tolerated by [`NeumannLaplacian::inverse`].
pub const ZERO_MEAN_TOL: f64 = 1e-10;
/// Relative residual required from the zero-mean Poisson solve.
pub const POISSON_TOL: f64 = 1e-11;

/// Discrete `−Δ` with homogeneous Neumann boundary conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeumannLaplacian {
    grid: Grid,
}

impl NeumannLaplacian {
    pub fn new(grid: Grid) -> Self {
        Self { grid }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn neighbours(&self, i: usize) -> impl Iterator<Item = usize> {
        let n = self.grid.n();
        let [ix, iy] = self.grid.cell(i);
        let dim = self.grid.dim();
        let mut out = [usize::MAX; 4];
        if ix > 0 {
            out[0] = i - 1;
        }
        if ix + 1 < n {
            out[1] = i + 1;
        }
        if dim == 2 {
            if iy > 0 {
                out[2] = i - n;
            }
            if iy + 1 < n {
                out[3] = i + n;
            }
        }
        out.into_iter().filter(|&j| j != usize::MAX)
    }

    pub(crate) fn apply_raw(&self, v: &[f64]) -> Vec<f64> {
        let inv_h2 = 1.0 / (self.grid.h() * self.grid.h());
        (0..v.len())
            .map(|i| self.neighbours(i).fold(0.0, |acc, j| acc + (v[i] - v[j])) * inv_h2)
            .collect()
    }

    /// `−Δφ`.
    pub fn apply(&self, phi: &Field) -> Result<Field> {
        self.grid.check_same(phi.grid())?;
        Ok(phi.with_values(self.apply_raw(phi.values())))
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let len = self.grid.len();
        let inv_h2 = 1.0 / (self.grid.h() * self.grid.h());
        let mut m = DMatrix::zeros(len, len);
        for i in 0..len {
            for j in self.neighbours(i) {
                m[(i, i)] += inv_h2;
                m[(i, j)] -= inv_h2;
            }
        }
        m
    }

    /// Zero-mean solution of `−Δψ = f` for zero-mean `f` (conjugate gradients
    /// on the zero-mean subspace).
    pub fn inverse(&self, f: &Field) -> Result<Field> {
        self.grid.check_same(f.grid())?;
        let m = mean(f);
        if m.abs() > ZERO_MEAN_TOL {
            return Err(Error::NonZeroMean {
                mean: m,
                tol: ZERO_MEAN_TOL,
            });
        }
        let rhs: Vec<f64> = f.values().iter().map(|v| v - m).collect();
        let len = rhs.len();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y);
        let rhs_norm = dot(&rhs, &rhs).sqrt();
        if rhs_norm == 0.0 {
            return Ok(Field::zeros(self.grid));
        }
        let target = POISSON_TOL * rhs_norm;
        let mut x = vec![0.0; len];
        let mut r = rhs.clone();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        let max_iter = 20 * len + 100;
        let mut iterations = 0;
        // Iterate to a quarter of the target, then verify with the true residual.
        while rr.sqrt() > 0.25 * target && iterations < max_iter {
            let ap = self.apply_raw(&p);
            let alpha = rr / dot(&p, &ap);
            for k in 0..len {
                x[k] += alpha * p[k];
                r[k] -= alpha * ap[k];
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            for k in 0..len {
                p[k] = r[k] + beta * p[k];
            }
            rr = rr_new;
            iterations += 1;
        }
        let xm = x.iter().sum::<f64>() / len as f64;
        x.iter_mut().for_each(|v| *v -= xm);
        let lx = self.apply_raw(&x);
        let true_res = rhs
            .iter()
            .zip(&lx)
            .fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b))
            .sqrt();
        if true_res > target {
            return Err(Error::NoConvergence {
                what: "Neumann Poisson solve",
                iterations,
                residual: true_res / rhs_norm,
            });
        }
        Field::new(self.grid, x)
    }

    /// `√((f₀, N f₀)_H + mean(f)²)` with `f₀ = f − mean(f)`.
    pub fn norm_vstar(&self, f: &Field) -> Result<f64> {
        let m = mean(f);
        let f0 = f.shift(-m);
        let psi = self.inverse(&f0)?;
        Ok((inner_h(&f0, &psi)?.max(0.0) + m * m).sqrt())
    }

    /// `½ (−Δφ, φ)_H`.
    pub fn dirichlet_energy(&self, phi: &Field) -> Result<f64> {
        Ok(0.5 * inner_h(&self.apply(phi)?, phi)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_field, Admissible, InitSpec};
    use std::f64::consts::PI;

    fn random_zero_mean(g: Grid, seed: u64) -> Field {
        make_field(
            g,
            &InitSpec::Random {
                mean: 0.0,
                amplitude: 1.0,
                seed,
            },
            Admissible::All,
        )
        .unwrap()
    }

    fn cos1(g: Grid) -> Field {
        Field::from_fn(g, |x| (PI * x[0]).cos()).unwrap()
    }

    #[test]
    fn constants_in_kernel() {
        for g in [Grid::new(1, 16).unwrap(), Grid::new(2, 8).unwrap()] {
            let l = NeumannLaplacian::new(g);
            assert_eq!(l.apply(&Field::constant(g, 2.5)).unwrap().max_abs(), 0.0);
            let m = l.matrix();
            assert_eq!(m, m.transpose());
            for i in 0..g.len() {
                assert_eq!(m.row(i).sum(), 0.0);
            }
        }
    }

    #[test]
    fn cosine_mode_values() {
        let g = Grid::new(1, 256).unwrap();
        let l = NeumannLaplacian::new(g);
        let c = cos1(g);
        let q = inner_h(&l.apply(&c).unwrap(), &c).unwrap();
        assert!((q - PI * PI / 2.0).abs() < 0.02 * PI * PI / 2.0);
        let e = l.dirichlet_energy(&c).unwrap();
        assert!((e - PI * PI / 4.0).abs() < 0.02 * PI * PI / 4.0);
        let psi = l.inverse(&c).unwrap();
        let expect = c.scale(1.0 / (PI * PI));
        assert!(psi.sub(&expect).unwrap().max_abs() < 0.02 / (PI * PI));
        let vs = l.norm_vstar(&c).unwrap();
        let target = (0.5f64).sqrt() / PI;
        assert!((vs - target).abs() < 0.02 * target);
    }

    #[test]
    fn inverse_contract() {
        for g in [Grid::new(1, 64).unwrap(), Grid::new(2, 16).unwrap()] {
            let l = NeumannLaplacian::new(g);
            assert_eq!(l.inverse(&Field::zeros(g)).unwrap().max_abs(), 0.0);
            let f = random_zero_mean(g, 21);
            let psi = l.inverse(&f).unwrap();
            assert!(mean(&psi).abs() <= 1e-12);
            assert!(l.apply(&psi).unwrap().sub(&f).unwrap().max_abs() <= 1e-10);
            let back = l.inverse(&l.apply(&f).unwrap()).unwrap();
            assert!(back.sub(&f).unwrap().max_abs() <= 1e-10);
        }
    }

    #[test]
    fn inverse_rejects_nonzero_mean() {
        let g = Grid::new(1, 16).unwrap();
        let l = NeumannLaplacian::new(g);
        assert!(matches!(
            l.inverse(&Field::constant(g, 1e-3)),
            Err(Error::NonZeroMean { .. })
        ));
        assert_eq!(l.norm_vstar(&Field::zeros(g)).unwrap(), 0.0);
    }

    #[test]
    fn vstar_spectral_bound() {
        // (f, N f) ≤ ‖f‖²/λ₁ with λ₁ the smallest nonzero eigenvalue.
        let g = Grid::new(1, 16).unwrap();
        let l = NeumannLaplacian::new(g);
        let eig = l.matrix().symmetric_eigenvalues();
        let lambda1 = eig.iter().copied().filter(|v| *v > 1e-8).fold(f64::INFINITY, f64::min);
        let c = 1.0 / lambda1 + 1.0;
        for seed in 0..20 {
            let f = make_field(
                g,
                &InitSpec::Random {
                    mean: 0.3,
                    amplitude: 1.0,
                    seed,
                },
                Admissible::All,
            )
            .unwrap();
            assert!(l.norm_vstar(&f).unwrap() <= c * f.norm_h());
        }
    }

    #[test]
    fn dirichlet_energy_matches_face_sum() {
        let g = Grid::new(2, 12).unwrap();
        let l = NeumannLaplacian::new(g);
        let phi = random_zero_mean(g, 2).shift(0.4);
        let n = g.n();
        let v = phi.values();
        let mut faces = 0.0;
        for iy in 0..n {
            for ix in 0..n {
                let i = ix + n * iy;
                if ix + 1 < n {
                    faces += (v[i] - v[i + 1]).powi(2);
                }
                if iy + 1 < n {
                    faces += (v[i] - v[i + n]).powi(2);
                }
            }
        }
        // face differences over h², times cell volume h²
        let oracle = 0.5 * faces;
        let e = l.dirichlet_energy(&phi).unwrap();
        assert!((e - oracle).abs() <= 1e-11 * oracle);
        assert!(l.dirichlet_energy(&Field::constant(g, 3.0)).unwrap() == 0.0);
        assert!(e > 0.0);
    }

    #[test]
    fn outputs_are_zero_mean_and_symmetric() {
        let g = Grid::new(2, 10).unwrap();
        let l = NeumannLaplacian::new(g);
        let a = random_zero_mean(g, 1).shift(0.5);
        let b = random_zero_mean(g, 2).shift(-0.2);
        assert!(mean(&l.apply(&a).unwrap()).abs() < 1e-12);
        let lhs = inner_h(&l.apply(&a).unwrap(), &b).unwrap();
        let rhs = inner_h(&a, &l.apply(&b).unwrap()).unwrap();
        assert!((lhs - rhs).abs() < 1e-11 * lhs.abs().max(1.0));
    }
}
