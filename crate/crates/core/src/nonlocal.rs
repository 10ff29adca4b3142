//! The nonlocal operator `B_ε φ = (K_ε*1)φ − K_ε*φ`, its energy `E_ε`, the
//! `V_ε` norm and the resolvent `(I + δB_ε)^{-1}`.
//!
//! On a grid every field has finite energy, so there is no discrete analogue
//! of the `V_ε`/`W_ε` distinction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{inner_h, Field};
use crate::kernels::KernelMatrix;

/// Relative residual accepted from the resolvent solve.
pub const RESOLVENT_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy)]
pub struct NonlocalOperator<'a> {
    kernel: &'a KernelMatrix,
}

impl<'a> NonlocalOperator<'a> {
    pub fn new(kernel: &'a KernelMatrix) -> Self {
        Self { kernel }
    }

    pub fn kernel(&self) -> &'a KernelMatrix {
        self.kernel
    }

    fn check(&self, phi: &Field) -> Result<()> {
        self.kernel.grid().check_same(phi.grid())
    }

    /// `(B φ)_i = Σ_j K_ij (φ_i − φ_j)`. Summing differences avoids the
    /// cancellation of `row_sum_i φ_i − (Kφ)_i`.
    pub fn apply(&self, phi: &Field) -> Result<Field> {
        self.check(phi)?;
        Ok(phi.with_values(self.apply_raw(phi.values())))
    }

    pub(crate) fn apply_raw(&self, v: &[f64]) -> Vec<f64> {
        let k = self.kernel.matrix();
        (0..v.len())
            .map(|i| {
                let vi = v[i];
                k.column(i)
                    .iter()
                    .zip(v)
                    .fold(0.0, |acc, (kij, vj)| acc + kij * (vi - vj))
            })
            .collect()
    }

    /// `E_ε(φ) = ¼ Σ_{i,j} K_ij (φ_i − φ_j)² h^d`.
    pub fn energy(&self, phi: &Field) -> Result<f64> {
        self.check(phi)?;
        let k = self.kernel.matrix();
        let v = phi.values();
        let mut total = 0.0;
        for (i, &pi) in v.iter().enumerate() {
            let row = k
                .column(i)
                .iter()
                .zip(v)
                .fold(0.0, |acc, (kij, pj)| acc + kij * (pi - pj) * (pi - pj));
            total += row;
        }
        Ok(0.25 * total * phi.grid().cell_volume())
    }

    /// `‖φ‖_{V_ε} = √(‖φ‖_H² + 2E_ε(φ))`.
    pub fn norm_veps(&self, phi: &Field) -> Result<f64> {
        Ok((inner_h(phi, phi)? + 2.0 * self.energy(phi)?).sqrt())
    }

    /// Dense `diag(row_sums) − K`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut b = -self.kernel.matrix().clone();
        for (i, rs) in self.kernel.row_sums().iter().enumerate() {
            b[(i, i)] += rs;
        }
        b
    }

    /// Solves `φ_δ + δ B φ_δ = φ` by Cholesky factorization.
    pub fn resolvent(&self, delta: f64, phi: &Field) -> Result<Field> {
        self.check(phi)?;
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid("delta", format!("must be > 0, got {delta}")));
        }
        let n = phi.len();
        let mut a = self.matrix() * delta;
        for i in 0..n {
            a[(i, i)] += 1.0;
        }
        let rhs = DVector::from_column_slice(phi.values());
        let chol = a
            .clone()
            .cholesky()
            .ok_or(Error::SingularSystem("nonlocal resolvent"))?;
        let mut x = chol.solve(&rhs);
        let scale = phi.norm_h().max(f64::MIN_POSITIVE);
        let vol = phi.grid().cell_volume();
        let mut residual = 0.0;
        for _ in 0..3 {
            let r = &rhs - &a * &x;
            residual = (r.norm_squared() * vol).sqrt();
            if residual <= RESOLVENT_TOL * scale {
                return Field::new(*phi.grid(), x.as_slice().to_vec());
            }
            x += chol.solve(&r);
        }
        Err(Error::NoConvergence {
            what: "nonlocal resolvent",
            iterations: 3,
            residual,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_field, mean, Admissible, Grid, InitSpec};
    use crate::kernels::{assemble_kernel, make_mollifier, MollifierFamily, Quadrature};
    use std::f64::consts::PI;

    fn kernel(dim: usize, n: usize, eps: f64, fam: MollifierFamily) -> KernelMatrix {
        let g = Grid::new(dim, n).unwrap();
        assemble_kernel(g, make_mollifier(fam, eps, dim).unwrap(), Quadrature::Punctured).unwrap()
    }

    fn random(g: Grid, seed: u64) -> Field {
        make_field(
            g,
            &InitSpec::Random {
                mean: 0.1,
                amplitude: 1.0,
                seed,
            },
            Admissible::All,
        )
        .unwrap()
    }

    /// Brute-force `∫∫ K (φ(x) − φ(y)) ψ(x)` straight from the pair sum.
    fn double_sum_pairing(k: &KernelMatrix, phi: &Field, psi: &Field) -> f64 {
        let (p, q) = (phi.values(), psi.values());
        let mut s = 0.0;
        for i in 0..p.len() {
            for j in 0..p.len() {
                s += k.entry(i, j) * (p[i] - p[j]) * q[i];
            }
        }
        s * phi.grid().cell_volume()
    }

    #[test]
    fn constants_are_annihilated() {
        let k = kernel(1, 64, 0.1, MollifierFamily::Bump);
        let op = NonlocalOperator::new(&k);
        let c = Field::constant(*k.grid(), 0.7);
        let scale = k.row_sums().iter().fold(0.0f64, |a, &b| a.max(b)) * 0.7;
        assert!(op.apply(&c).unwrap().max_abs() <= 1e-13 * scale);
        assert_eq!(op.energy(&c).unwrap(), 0.0);
        // I + δB ≥ I, so the error is bounded by the solver's residual contract
        let r = op.resolvent(0.5, &c).unwrap();
        assert!(r.sub(&c).unwrap().norm_h() <= RESOLVENT_TOL * c.norm_h());
    }

    #[test]
    fn output_has_zero_mean_and_is_self_adjoint() {
        for (dim, n, eps) in [(1, 64, 0.1), (2, 16, 0.25)] {
            for fam in [MollifierFamily::Bump, MollifierFamily::Indicator] {
                let k = kernel(dim, n, eps, fam);
                let op = NonlocalOperator::new(&k);
                let phi = random(*k.grid(), 3);
                let psi = random(*k.grid(), 4);
                let bphi = op.apply(&phi).unwrap();
                assert!(mean(&bphi).abs() < 1e-12);
                let lhs = inner_h(&bphi, &psi).unwrap();
                let rhs = inner_h(&phi, &op.apply(&psi).unwrap()).unwrap();
                assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
                let oracle = double_sum_pairing(&k, &phi, &psi);
                assert!((lhs - oracle).abs() < 1e-12 * oracle.abs().max(1.0));
            }
        }
    }

    #[test]
    fn energy_equals_half_pairing() {
        let k = kernel(1, 128, 0.1, MollifierFamily::Indicator);
        let op = NonlocalOperator::new(&k);
        let phi = random(*k.grid(), 11);
        let two_e = 2.0 * op.energy(&phi).unwrap();
        let pair = inner_h(&op.apply(&phi).unwrap(), &phi).unwrap();
        assert!((two_e - pair).abs() <= 1e-11 * pair);
    }

    #[test]
    fn cosine_energy_near_dirichlet_limit() {
        let k = kernel(1, 256, 0.05, MollifierFamily::Bump);
        let op = NonlocalOperator::new(&k);
        let phi = Field::from_fn(*k.grid(), |x| (PI * x[0]).cos()).unwrap();
        let e = op.energy(&phi).unwrap();
        let target = PI * PI / 4.0;
        assert!((e - target).abs() < 0.1 * target, "{e}");
    }

    #[test]
    fn resolvent_contracts() {
        let k = kernel(1, 64, 0.1, MollifierFamily::Bump);
        let op = NonlocalOperator::new(&k);
        let phi = random(*k.grid(), 5);
        let mut prev = f64::INFINITY;
        for delta in [0.1, 0.01, 0.001] {
            let pd = op.resolvent(delta, &phi).unwrap();
            assert!(op.norm_veps(&pd).unwrap() <= op.norm_veps(&phi).unwrap());
            assert!(pd.norm_h() <= phi.norm_h());
            let gap = pd.sub(&phi).unwrap().norm_h();
            assert!(gap < prev);
            prev = gap;
        }
        assert!(op.resolvent(0.0, &phi).is_err());
    }

    #[test]
    fn veps_norm() {
        let k = kernel(1, 32, 0.2, MollifierFamily::Bump);
        let op = NonlocalOperator::new(&k);
        assert!((op.norm_veps(&Field::constant(*k.grid(), 1.0)).unwrap() - 1.0).abs() < 1e-15);
        let phi = random(*k.grid(), 9);
        let direct = (inner_h(&phi, &phi).unwrap() + 2.0 * op.energy(&phi).unwrap()).sqrt();
        assert_eq!(op.norm_veps(&phi).unwrap(), direct);
        assert!(op.norm_veps(&phi).unwrap() >= phi.norm_h());
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let k = kernel(1, 32, 0.2, MollifierFamily::Bump);
        let op = NonlocalOperator::new(&k);
        let other = Field::zeros(Grid::new(1, 16).unwrap());
        assert!(matches!(op.apply(&other), Err(Error::GridMismatch { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn linear_and_monotone(
                a in -3.0f64..3.0, b in -3.0f64..3.0, s1 in any::<u64>(), s2 in any::<u64>()
            ) {
                let k = kernel(1, 48, 0.15, MollifierFamily::Bump);
                let op = NonlocalOperator::new(&k);
                let phi = random(*k.grid(), s1);
                let psi = random(*k.grid(), s2);
                let combo = phi.lin_comb(a, &psi, b).unwrap();
                let lhs = op.apply(&combo).unwrap();
                let rhs = op.apply(&phi).unwrap().lin_comb(a, &op.apply(&psi).unwrap(), b).unwrap();
                prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-12 * lhs.max_abs().max(1.0));
                prop_assert!(inner_h(&op.apply(&phi).unwrap(), &phi).unwrap() >= 0.0);
            }
        }
    }
}
