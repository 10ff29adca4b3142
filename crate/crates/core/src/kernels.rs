//! Radial mollifier families and dense quadrature of the singular kernel
//! `K_ε(x,y) = ρ_ε(|x−y|) / |x−y|²`.
//!
//! A family is `ρ_ε(r) = A_d ε^{-d} ρ̂(|r|/ε)` with a compactly supported
//! profile `ρ̂` on `[0,1)`. The amplitude `A_d` is fixed by the normalization
//! `∫₀^∞ ρ_ε(r) r^{d−1} dr = 2/C_d`, which makes the nonlocal energy consistent
//! with `½∫|∇φ|²` as `ε → 0`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::Grid;
use crate::quadrature;

/// Largest grid accepted for dense kernel assembly.
pub const MAX_DENSE_CELLS: usize = 8192;

/// `C_d = ∫_{S^{d−1}} |e₁·σ|² dσ`.
pub fn c_d(dim: usize) -> Result<f64> {
    match dim {
        1 => Ok(2.0),
        2 => Ok(PI),
        3 => Ok(4.0 * PI / 3.0),
        _ => Err(Error::UnsupportedDimension(dim)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MollifierFamily {
    /// `exp(−1/(1−s²))` for `s < 1`.
    Bump,
    /// `1_{[0,1)}(s)`.
    Indicator,
}

impl MollifierFamily {
    pub fn profile(self, s: f64) -> f64 {
        let s = s.abs();
        if s >= 1.0 {
            return 0.0;
        }
        match self {
            MollifierFamily::Bump => (-1.0 / (1.0 - s * s)).exp(),
            MollifierFamily::Indicator => 1.0,
        }
    }

    /// `∫₀¹ ρ̂(s) s^{d−1} ds`.
    fn radial_moment(self, dim: usize) -> f64 {
        match self {
            MollifierFamily::Indicator => 1.0 / dim as f64,
            MollifierFamily::Bump => {
                quadrature::gauss_legendre(|s| self.profile(s) * s.powi(dim as i32 - 1), 0.0, 1.0, 512)
            }
        }
    }
}

impl fmt::Display for MollifierFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MollifierFamily::Bump => "bump",
            MollifierFamily::Indicator => "indicator",
        })
    }
}

impl FromStr for MollifierFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bump" => Ok(MollifierFamily::Bump),
            "indicator" => Ok(MollifierFamily::Indicator),
            other => Err(Error::Config(format!("unknown mollifier family `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierSpec {
    family: MollifierFamily,
    epsilon: f64,
    dim: usize,
    amplitude: f64,
    c_d: f64,
}

pub fn make_mollifier(family: MollifierFamily, epsilon: f64, dim: usize) -> Result<MollifierSpec> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid("epsilon", format!("must be > 0, got {epsilon}")));
    }
    let c_d = c_d(dim)?;
    let amplitude = match family {
        // closed form 2d / C_d
        MollifierFamily::Indicator => 2.0 * dim as f64 / c_d,
        MollifierFamily::Bump => 2.0 / c_d / family.radial_moment(dim),
    };
    Ok(MollifierSpec {
        family,
        epsilon,
        dim,
        amplitude,
        c_d,
    })
}

impl MollifierSpec {
    pub fn family(&self) -> MollifierFamily {
        self.family
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Normalization constant `A_d`.
    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn c_d(&self) -> f64 {
        self.c_d
    }

    /// Radius beyond which `ρ_ε` vanishes.
    pub fn support(&self) -> f64 {
        self.epsilon
    }

    /// `ρ_ε(r)`; even in `r`.
    pub fn rho(&self, r: f64) -> f64 {
        self.amplitude * self.epsilon.powi(-(self.dim as i32)) * self.family.profile(r / self.epsilon)
    }

    /// `K_ε` as a function of the distance `r > 0`.
    pub fn kernel(&self, r: f64) -> f64 {
        self.rho(r) / (r * r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierReport {
    pub family: MollifierFamily,
    pub epsilon: f64,
    /// `∫₀^∞ ρ_ε(r) r^{d−1} dr`.
    pub normalization: f64,
    /// `|normalization − 2/C_d| / (2/C_d)`.
    pub normalization_error: f64,
    /// `∫_δ^∞ ρ_ε(r) r^{d−1} dr`.
    pub tail_mass: f64,
}

/// Checks the normalization and tail conditions by adaptive quadrature on
/// `[0, support]`, independently of how the amplitude was computed.
pub fn validate_mollifier(m: &MollifierSpec, delta: f64) -> Result<MollifierReport> {
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", format!("must be > 0, got {delta}")));
    }
    let d = m.dim as i32;
    let integrand = |r: f64| m.rho(r) * r.powi(d - 1);
    let support = m.support();
    let target = 2.0 / m.c_d;
    let normalization = quadrature::integrate_adaptive(integrand, 0.0, support, 1e-15, 1e-13)?;
    let tail_mass = if delta >= support {
        0.0
    } else {
        quadrature::integrate_adaptive(integrand, delta, support, 1e-15, 1e-13)?
    };
    Ok(MollifierReport {
        family: m.family,
        epsilon: m.epsilon,
        normalization,
        normalization_error: (normalization - target).abs() / target,
        tail_mass,
    })
}

/// How the punctured midpoint sum is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Quadrature {
    /// `K_ij = ρ_ε(r_ij)/r_ij² · h^d` for `i ≠ j`.
    #[default]
    Punctured,
    /// Punctured weights times one scalar chosen so that the lattice second
    /// moment `Σ_{z≠0} h^d ρ_ε(|z|) z₁²/|z|²` equals its continuum value 2.
    /// Removes the `O(h/ε)` consistency error of the plain rule in 1D.
    MomentNormalized,
}

impl fmt::Display for Quadrature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quadrature::Punctured => "punctured",
            Quadrature::MomentNormalized => "moment",
        })
    }
}

impl FromStr for Quadrature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "punctured" => Ok(Quadrature::Punctured),
            "moment" | "moment_normalized" => Ok(Quadrature::MomentNormalized),
            other => Err(Error::Config(format!("unknown kernel quadrature `{other}`"))),
        }
    }
}

/// Dense symmetric quadrature matrix of `K_ε` on a grid, with zero diagonal.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    grid: Grid,
    mollifier: MollifierSpec,
    quadrature: Quadrature,
    scale: f64,
    entries: DMatrix<f64>,
    row_sums: Vec<f64>,
}

/// Offsets `(dx, dy) ≥ 0` with their weight `scale·K_ε(r)·h^d`, zero offset excluded.
fn offset_weights(grid: &Grid, m: &MollifierSpec, scale: f64) -> Vec<Vec<f64>> {
    let n = grid.n();
    let h = grid.h();
    let vol = grid.cell_volume();
    let reach = ((m.support() / h).ceil() as usize + 1).min(n - 1);
    let ny = if grid.dim() == 1 { 0 } else { reach };
    let mut w = vec![vec![0.0; ny + 1]; reach + 1];
    for (dx, row) in w.iter_mut().enumerate() {
        for (dy, slot) in row.iter_mut().enumerate() {
            if dx == 0 && dy == 0 {
                continue;
            }
            let r = h * ((dx * dx + dy * dy) as f64).sqrt();
            *slot = scale * m.kernel(r) * vol;
        }
    }
    w
}

/// `Σ_{z∈hℤ^d∖0} h^d ρ_ε(|z|) z₁²/|z|²`, the discrete analogue of
/// `∫ ρ_ε(|z|) z₁²/|z|² dz = 2`.
fn lattice_second_moment(grid: &Grid, m: &MollifierSpec) -> f64 {
    let h = grid.h();
    let reach = (m.support() / h).ceil() as i64 + 1;
    let vol = grid.cell_volume();
    let mut total = 0.0;
    if grid.dim() == 1 {
        for j in 1..=reach {
            total += 2.0 * vol * m.rho(j as f64 * h);
        }
    } else {
        for jy in -reach..=reach {
            for jx in -reach..=reach {
                if jx == 0 && jy == 0 {
                    continue;
                }
                let r2 = (jx * jx + jy * jy) as f64;
                total += vol * m.rho(h * r2.sqrt()) * (jx * jx) as f64 / r2;
            }
        }
    }
    total
}

/// Assembles the dense kernel matrix. Requires `ε ≥ 2h` and at most
/// [`MAX_DENSE_CELLS`] cells.
pub fn assemble_kernel(grid: Grid, m: MollifierSpec, quadrature: Quadrature) -> Result<KernelMatrix> {
    if m.dim() != grid.dim() {
        return Err(Error::invalid(
            "mollifier",
            format!("mollifier dimension {} does not match {}", m.dim(), grid),
        ));
    }
    let min = 2.0 * grid.h();
    if m.epsilon() < min {
        return Err(Error::UnresolvedKernel {
            epsilon: m.epsilon(),
            min,
        });
    }
    let cells = grid.len();
    if cells > MAX_DENSE_CELLS {
        return Err(Error::TooManyCells {
            cells,
            limit: MAX_DENSE_CELLS,
        });
    }
    let scale = match quadrature {
        Quadrature::Punctured => 1.0,
        Quadrature::MomentNormalized => 2.0 / lattice_second_moment(&grid, &m),
    };
    let w = offset_weights(&grid, &m, scale);
    let reach_x = w.len() - 1;
    let reach_y = w[0].len() - 1;
    let mut entries = DMatrix::<f64>::zeros(cells, cells);
    for i in 0..cells {
        let [ix, iy] = grid.cell(i);
        for j in (i + 1)..cells {
            let [jx, jy] = grid.cell(j);
            let dx = ix.abs_diff(jx);
            let dy = iy.abs_diff(jy);
            if dx > reach_x || dy > reach_y {
                continue;
            }
            let v = w[dx][dy];
            if v != 0.0 {
                entries[(i, j)] = v;
                entries[(j, i)] = v;
            }
        }
    }
    let row_sums = (0..cells)
        .map(|i| entries.column(i).iter().fold(0.0, |acc, v| acc + v))
        .collect();
    Ok(KernelMatrix {
        grid,
        mollifier: m,
        quadrature,
        scale,
        entries,
        row_sums,
    })
}

impl KernelMatrix {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mollifier(&self) -> &MollifierSpec {
        &self.mollifier
    }

    pub fn quadrature(&self) -> Quadrature {
        self.quadrature
    }

    /// Factor applied on top of the punctured weights (1 for [`Quadrature::Punctured`]).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Discrete `(K_ε * 1)(x_i)`.
    pub fn row_sums(&self) -> &[f64] {
        &self.row_sums
    }

    /// True when `ε < 3h`: accepted, but the kernel is barely resolved.
    pub fn is_marginal(&self) -> bool {
        self.mollifier.epsilon() < 3.0 * self.grid.h()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_constants() {
        assert_eq!(c_d(1).unwrap(), 2.0);
        assert!((c_d(2).unwrap() - PI).abs() < 1e-15);
        assert!(matches!(c_d(4), Err(Error::UnsupportedDimension(4))));
    }

    #[test]
    fn indicator_amplitudes() {
        let m2 = make_mollifier(MollifierFamily::Indicator, 0.3, 2).unwrap();
        assert!((m2.amplitude() - 4.0 / PI).abs() < 1e-15);
        let m1 = make_mollifier(MollifierFamily::Indicator, 0.3, 1).unwrap();
        assert_eq!(m1.amplitude(), 1.0);
        assert!(make_mollifier(MollifierFamily::Bump, 0.0, 1).is_err());
        assert!(make_mollifier(MollifierFamily::Bump, -1.0, 1).is_err());
    }

    #[test]
    fn rho_is_even_and_supported() {
        let m = make_mollifier(MollifierFamily::Bump, 0.2, 2).unwrap();
        assert_eq!(m.rho(0.1), m.rho(-0.1));
        assert_eq!(m.rho(0.2), 0.0);
        assert!(m.rho(0.199) > 0.0);
    }

    #[test]
    fn validate_reports() {
        let bump = make_mollifier(MollifierFamily::Bump, 0.1, 2).unwrap();
        let r = validate_mollifier(&bump, 0.2).unwrap();
        assert_eq!(r.tail_mass, 0.0);
        assert!(r.normalization_error <= 1e-8);
        let ind = make_mollifier(MollifierFamily::Indicator, 0.1, 2).unwrap();
        let r = validate_mollifier(&ind, 0.05).unwrap();
        assert!(r.normalization_error <= 1e-12);
        // ∫_{0.05}^{0.1} (4/π) ε^{-2} r dr = (4/π)(1/2)(1 − 1/4)
        assert!((r.tail_mass - 1.5 / PI).abs() < 1e-12);
        assert!(validate_mollifier(&ind, 0.0).is_err());
    }

    #[test]
    fn resolution_and_memory_guards() {
        let g = Grid::new(1, 16).unwrap();
        let m = make_mollifier(MollifierFamily::Indicator, 0.1, 1).unwrap();
        assert!(matches!(
            assemble_kernel(g, m, Quadrature::Punctured),
            Err(Error::UnresolvedKernel { .. })
        ));
        let m = make_mollifier(MollifierFamily::Indicator, 0.15, 1).unwrap();
        let k = assemble_kernel(g, m, Quadrature::Punctured).unwrap();
        assert!(k.is_marginal());
        let big = Grid::new(2, 91).unwrap();
        let m = make_mollifier(MollifierFamily::Indicator, 0.1, 2).unwrap();
        assert!(matches!(
            assemble_kernel(big, m, Quadrature::Punctured),
            Err(Error::TooManyCells { .. })
        ));
        let m3 = make_mollifier(MollifierFamily::Indicator, 0.5, 2).unwrap();
        assert!(assemble_kernel(g, m3, Quadrature::Punctured).is_err());
    }

    #[test]
    fn indicator_support_pattern() {
        let g = Grid::new(1, 8).unwrap();
        let m = make_mollifier(MollifierFamily::Indicator, 0.5, 1).unwrap();
        let k = assemble_kernel(g, m, Quadrature::Punctured).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                let r = (i as f64 - j as f64).abs() / 8.0;
                assert_eq!(k.entry(i, j) > 0.0, r > 0.0 && r < 0.5, "({i},{j})");
                assert_eq!(k.entry(i, j), k.entry(j, i));
            }
        }
    }

    #[test]
    fn symmetric_nonnegative_zero_diagonal() {
        for (dim, n, eps) in [(1, 64, 0.1), (2, 20, 0.2)] {
            for fam in [MollifierFamily::Bump, MollifierFamily::Indicator] {
                for q in [Quadrature::Punctured, Quadrature::MomentNormalized] {
                    let g = Grid::new(dim, n).unwrap();
                    let k = assemble_kernel(g, make_mollifier(fam, eps, dim).unwrap(), q).unwrap();
                    let a = k.matrix();
                    assert_eq!(a, &a.transpose());
                    assert!(a.iter().all(|&v| v >= 0.0));
                    assert!((0..g.len()).all(|i| a[(i, i)] == 0.0));
                }
            }
        }
    }

    #[test]
    fn row_sums_match_resummation() {
        let g = Grid::new(2, 12).unwrap();
        let m = make_mollifier(MollifierFamily::Bump, 0.3, 2).unwrap();
        let k = assemble_kernel(g, m, Quadrature::Punctured).unwrap();
        let h = g.h();
        for i in 0..g.len() {
            let xi = g.center(i);
            let mut s = 0.0;
            for j in 0..g.len() {
                if i == j {
                    continue;
                }
                let xj = g.center(j);
                let r = ((xi[0] - xj[0]).powi(2) + (xi[1] - xj[1]).powi(2)).sqrt();
                s += m.rho(r) / (r * r) * h * h;
            }
            assert!((k.row_sums()[i] - s).abs() <= 1e-12 * s.max(1.0), "row {i}");
        }
    }

    #[test]
    fn moment_normalization_restores_second_moment() {
        let g = Grid::new(1, 256).unwrap();
        for fam in [MollifierFamily::Bump, MollifierFamily::Indicator] {
            let m = make_mollifier(fam, 0.05, 1).unwrap();
            let k = assemble_kernel(g, m, Quadrature::MomentNormalized).unwrap();
            // Interior row: Σ_j K_ij (x_i − x_j)² = 2 exactly after scaling.
            let i = 128;
            let s: f64 = (0..256)
                .map(|j| k.entry(i, j) * ((i as f64 - j as f64) * g.h()).powi(2))
                .sum();
            assert!((s - 2.0).abs() < 1e-12, "{fam}: {s}");
            assert!(k.scale() > 1.0);
        }
    }
}
