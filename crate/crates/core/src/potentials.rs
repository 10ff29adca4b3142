//! Double-well potentials split as `Ψ = γ̂ + Π̂` with `γ = ∂γ̂` maximal
//! monotone and `Π` Lipschitz, plus the Yosida regularization of `γ`.
//!
//! | kind            | `γ̂(r)`                                   | `Π(r)`    |
//! |-----------------|-------------------------------------------|-----------|
//! | polynomial      | `r⁴/4`                                    | `−r`      |
//! | logarithmic     | `ϑ/2 [(1+r)ln(1+r) + (1−r)ln(1−r)]`       | `−ϑ₀ r`   |
//! | double obstacle | indicator of `[−1, 1]`                    | `−2c r`   |
//!
//! Constant offsets of the textbook potentials are dropped: `γ̂ + Π̂` equals
//! `¼(r²−1)² − ¼` for the polynomial kind and `c(1−r²) − c` for the obstacle.
//! `Π̂` is concave in every case, which the time stepper relies on.

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{Admissible, Field};

/// Margin kept between the initial mean and the boundary of `D(γ)`.
pub const MEAN_MARGIN: f64 = 1e-3;
/// Residual accepted from the scalar resolvent solve, relative to `max(1, |r|)`.
pub const RESOLVENT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Potential {
    Polynomial,
    /// Requires `0 < theta < theta0`.
    Logarithmic {
        theta: f64,
        theta0: f64,
    },
    /// Requires `c > 0`.
    DoubleObstacle {
        c: f64,
    },
}

impl fmt::Display for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Potential {
    pub fn logarithmic(theta: f64, theta0: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < theta0 && theta0.is_finite()) {
            return Err(Error::invalid(
                "theta",
                format!("need 0 < theta < theta0, got theta={theta}, theta0={theta0}"),
            ));
        }
        Ok(Potential::Logarithmic { theta, theta0 })
    }

    pub fn double_obstacle(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid("c", format!("must be > 0, got {c}")));
        }
        Ok(Potential::DoubleObstacle { c })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Potential::Polynomial => "polynomial",
            Potential::Logarithmic { .. } => "logarithmic",
            Potential::DoubleObstacle { .. } => "double_obstacle",
        }
    }

    /// Closure of `D(γ̂)` as a value range.
    pub fn admissible(&self) -> Admissible {
        match self {
            Potential::Polynomial => Admissible::All,
            Potential::Logarithmic { .. } => Admissible::Open(-1.0, 1.0),
            Potential::DoubleObstacle { .. } => Admissible::Closed(-1.0, 1.0),
        }
    }

    /// Checks that a mean value lies in the interior of `D(γ)` with margin.
    pub fn check_mean(&self, m: f64) -> Result<()> {
        match self {
            Potential::Polynomial => Ok(()),
            _ if m.abs() < 1.0 - MEAN_MARGIN => Ok(()),
            _ => Err(Error::OutsideDomain {
                potential: self.name(),
                value: m,
            }),
        }
    }

    /// `γ(r)` where it is single valued; `None` outside the interior of `D(γ)`.
    pub fn gamma(&self, r: f64) -> Option<f64> {
        match *self {
            Potential::Polynomial => Some(r * r * r),
            Potential::Logarithmic { theta, .. } => (r.abs() < 1.0).then(|| theta * r.atanh()),
            Potential::DoubleObstacle { .. } => (r.abs() < 1.0).then_some(0.0),
        }
    }

    /// `γ̂(r)`, `+∞` outside `D(γ̂)`.
    pub fn gamma_hat(&self, r: f64) -> f64 {
        match *self {
            Potential::Polynomial => 0.25 * r.powi(4),
            Potential::Logarithmic { theta, .. } => {
                let a = r.abs();
                if a > 1.0 {
                    f64::INFINITY
                } else if a == 1.0 {
                    theta * std::f64::consts::LN_2
                } else {
                    0.5 * theta * ((1.0 + a) * a.ln_1p() + (1.0 - a) * (-a).ln_1p())
                }
            }
            Potential::DoubleObstacle { .. } => {
                if r.abs() <= 1.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Lipschitz part `Π(r)`.
    pub fn pi_part(&self, r: f64) -> f64 {
        -self.lipschitz_pi() * r
    }

    /// `Π̂(r) = ∫₀^r Π`.
    pub fn pi_hat(&self, r: f64) -> f64 {
        -0.5 * self.lipschitz_pi() * r * r
    }

    /// Lipschitz constant `C_Π`.
    pub fn lipschitz_pi(&self) -> f64 {
        match *self {
            Potential::Polynomial => 1.0,
            Potential::Logarithmic { theta0, .. } => theta0,
            Potential::DoubleObstacle { c } => 2.0 * c,
        }
    }
}

/// Resolvent point `J = (I + λγ)^{-1}(r)` together with `γ(J)` and `γ_λ'(r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Resolved {
    j: f64,
    gamma_j: f64,
    slope: f64,
}

/// Yosida approximation `γ_λ = (I − J_λ)/λ` of the potential's `γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Yosida {
    potential: Potential,
    lambda: f64,
}

impl Yosida {
    pub fn new(potential: Potential, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid("lambda", format!("must be > 0, got {lambda}")));
        }
        Ok(Self { potential, lambda })
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    fn resolve(&self, r: f64) -> Result<Resolved> {
        if !r.is_finite() {
            return Err(Error::NonFinite { index: 0 });
        }
        let lam = self.lambda;
        let sign = if r < 0.0 { -1.0 } else { 1.0 };
        let a = r.abs();
        let tol = RESOLVENT_TOL * a.max(1.0);
        match self.potential {
            Potential::DoubleObstacle { .. } => {
                let j = r.clamp(-1.0, 1.0);
                let slope = if a > 1.0 { 1.0 / lam } else { 0.0 };
                Ok(Resolved {
                    j,
                    gamma_j: (r - j) / lam,
                    slope,
                })
            }
            Potential::Polynomial => {
                // J + λJ³ = a is convex increasing on [0, ∞); Newton from an upper
                // bound of the root decreases monotonically onto it.
                let mut j = a.min((a / lam).cbrt());
                let mut res = j + lam * j * j * j - a;
                let mut iterations = 0;
                while res.abs() > 0.01 * tol && iterations < 100 {
                    let next = j - res / (1.0 + 3.0 * lam * j * j);
                    let next_res = next + lam * next * next * next - a;
                    if next_res.abs() >= res.abs() {
                        break;
                    }
                    j = next;
                    res = next_res;
                    iterations += 1;
                }
                if res.abs() > tol {
                    return Err(Error::NoConvergence {
                        what: "polynomial resolvent",
                        iterations,
                        residual: res.abs(),
                    });
                }
                let j2 = j * j;
                Ok(Resolved {
                    j: sign * j,
                    gamma_j: sign * j2 * j,
                    slope: 3.0 * j2 / (1.0 + 3.0 * lam * j2),
                })
            }
            Potential::Logarithmic { theta, .. } => {
                // With J = tanh(t/2), γ(J) = ϑt/2 and the resolvent equation reads
                // tanh(t/2) + κt = a, κ = λϑ/2: defined for every t, concave and
                // increasing on t ≥ 0, so Newton from t = 0 climbs monotonically.
                let kappa = 0.5 * lam * theta;
                let f = |t: f64| (0.5 * t).tanh() + kappa * t - a;
                let mut lo = 0.0;
                let mut hi = a / kappa;
                let mut t = 0.0;
                let mut res = f(t);
                let mut iterations = 0;
                while res.abs() > 0.01 * tol && iterations < 200 {
                    let sech2 = 1.0 / (0.5 * t).cosh().powi(2);
                    let mut next = t - res / (0.5 * sech2 + kappa);
                    if !(next > lo && next < hi) || !next.is_finite() {
                        next = 0.5 * (lo + hi);
                    }
                    let next_res = f(next);
                    if next_res < 0.0 {
                        lo = next;
                    } else {
                        hi = next;
                    }
                    let stalled = next == t;
                    t = next;
                    res = next_res;
                    iterations += 1;
                    if stalled {
                        break;
                    }
                }
                if res.abs() > tol {
                    return Err(Error::NoConvergence {
                        what: "logarithmic resolvent",
                        iterations,
                        residual: res.abs(),
                    });
                }
                let sech2 = 1.0 / (0.5 * t).cosh().powi(2);
                Ok(Resolved {
                    j: sign * (0.5 * t).tanh(),
                    gamma_j: sign * 0.5 * theta * t,
                    slope: 1.0 / (lam + sech2 / theta),
                })
            }
        }
    }

    /// `J_λ(r) = (I + λγ)^{-1}(r)`.
    pub fn resolvent(&self, r: f64) -> Result<f64> {
        Ok(self.resolve(r)?.j)
    }

    /// `|J + λγ(J) − r|` at the computed resolvent point.
    pub fn resolvent_residual(&self, r: f64) -> Result<f64> {
        let p = self.resolve(r)?;
        Ok(match self.potential {
            // J + λ·(r − J)/λ reproduces r; report the projection error instead.
            Potential::DoubleObstacle { .. } => (p.j - r.clamp(-1.0, 1.0)).abs(),
            _ => (p.j + self.lambda * p.gamma_j - r).abs(),
        })
    }

    /// `γ_λ(r)`. Equal to `(r − J_λ(r))/λ`; evaluated as `γ(J_λ(r))` for the
    /// smooth kinds, which avoids the cancellation at small `λ`.
    pub fn gamma(&self, r: f64) -> Result<f64> {
        Ok(self.resolve(r)?.gamma_j)
    }

    /// `γ_λ'(r)`; for the obstacle the one-sided value `1/λ` is used at `|r| > 1`.
    pub fn slope(&self, r: f64) -> Result<f64> {
        Ok(self.resolve(r)?.slope)
    }

    /// `(γ_λ(r), γ_λ'(r))`.
    pub fn gamma_and_slope(&self, r: f64) -> Result<(f64, f64)> {
        let p = self.resolve(r)?;
        Ok((p.gamma_j, p.slope))
    }

    /// Moreau envelope `γ̂_λ(r) = γ̂(J) + (λ/2)γ_λ(r)²`, finite everywhere.
    pub fn gamma_hat(&self, r: f64) -> Result<f64> {
        let p = self.resolve(r)?;
        let base = match self.potential {
            Potential::Logarithmic { theta, .. } => {
                // γ̂(tanh(t/2)) = ϑ[ln2 − ln(1+e^{−|t|}) − (1−|J|)|t|/2]
                let t = (2.0 * p.gamma_j / theta).abs();
                let e = (-t).exp();
                let one_minus_j = 2.0 * e / (1.0 + e);
                theta * (std::f64::consts::LN_2 - e.ln_1p() - 0.5 * one_minus_j * t)
            }
            Potential::Polynomial => {
                // γ̂(r) − D(r, J) − (λ/2)γ(J)² with the convexity gap
                // D = δ²((J + δ/2)² + J²/2), δ = λγ(J); stays ≤ γ̂(r) when J rounds to r.
                let d = self.lambda * p.gamma_j;
                let gap = d * d * ((p.j + 0.5 * d).powi(2) + 0.5 * p.j * p.j);
                return Ok(self.potential.gamma_hat(r) - gap - 0.5 * self.lambda * p.gamma_j * p.gamma_j);
            }
            Potential::DoubleObstacle { .. } => self.potential.gamma_hat(p.j),
        };
        Ok(base + 0.5 * self.lambda * p.gamma_j * p.gamma_j)
    }

    /// `∫_Ω (γ̂_λ + Π̂)(u)` by the cell-volume rule.
    pub fn potential_energy(&self, u: &Field) -> Result<f64> {
        let mut total = 0.0;
        for &v in u.values() {
            total += self.gamma_hat(v)? + self.potential.pi_hat(v);
        }
        Ok(total * u.grid().cell_volume())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn kinds() -> [Potential; 3] {
        [
            Potential::Polynomial,
            Potential::logarithmic(0.8, 1.0).unwrap(),
            Potential::double_obstacle(1.0).unwrap(),
        ]
    }

    #[test]
    fn parameter_validation() {
        assert!(Potential::logarithmic(1.0, 0.5).is_err());
        assert!(Potential::logarithmic(0.0, 0.5).is_err());
        assert!(Potential::double_obstacle(0.0).is_err());
        assert!(Yosida::new(Potential::Polynomial, 0.0).is_err());
    }

    #[test]
    fn origin_is_fixed() {
        for p in kinds() {
            for lam in [1.0, 1e-2, 1e-5] {
                let y = Yosida::new(p, lam).unwrap();
                assert_eq!(y.resolvent(0.0).unwrap(), 0.0);
                assert_eq!(y.gamma(0.0).unwrap(), 0.0);
                assert_eq!(y.gamma_hat(0.0).unwrap(), 0.0);
            }
            assert_eq!(p.pi_part(0.0), 0.0);
            assert_eq!(p.gamma_hat(0.0), 0.0);
        }
    }

    #[test]
    fn closed_form_points() {
        let ob = Yosida::new(Potential::double_obstacle(1.0).unwrap(), 0.3).unwrap();
        assert_eq!(ob.resolvent(1.5).unwrap(), 1.0);
        let ob = Yosida::new(Potential::double_obstacle(1.0).unwrap(), 0.5).unwrap();
        assert_eq!(ob.gamma(1.5).unwrap(), 1.0);
        let pol = Yosida::new(Potential::Polynomial, 1.0).unwrap();
        assert!((pol.resolvent(2.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn log_yosida_approaches_gamma() {
        let p = Potential::logarithmic(0.8, 1.0).unwrap();
        let y = Yosida::new(p, 1e-3).unwrap();
        let exact = 0.4 * 3.0f64.ln();
        assert!((y.gamma(0.5).unwrap() - exact).abs() < 0.01 * exact);
        assert_eq!(p.gamma(0.5).unwrap(), 0.8 * 0.5f64.atanh());
    }

    #[test]
    fn log_resolvent_far_outside_domain() {
        let y = Yosida::new(Potential::logarithmic(0.8, 1.0).unwrap(), 1e-4).unwrap();
        let j = y.resolvent(3.0).unwrap();
        assert!(j <= 1.0);
        assert!(y.resolvent_residual(3.0).unwrap() <= 3.0 * RESOLVENT_TOL);
        // γ_λ(3) = (3 − J)/λ with J = 1 to double precision
        assert!((y.gamma(3.0).unwrap() - 2.0e4).abs() < 1e-6);
        assert!(y.gamma_hat(3.0).unwrap().is_finite());
    }

    #[test]
    fn splitting_identities() {
        assert!((Potential::Polynomial.gamma(0.7).unwrap() + Potential::Polynomial.pi_part(0.7) + 0.357).abs() < 1e-15);
        let ob = Potential::double_obstacle(1.0).unwrap();
        for r in [-1.0, -0.3, 0.0, 0.8, 1.0] {
            let psi = 1.0 - r * r;
            assert!((ob.gamma_hat(r) + ob.pi_hat(r) + 1.0 - psi).abs() < 1e-15);
        }
        let poly = Potential::Polynomial;
        for r in [-1.5, 0.2, 1.0] {
            let psi = 0.25 * (r * r - 1.0f64).powi(2);
            assert!((poly.gamma_hat(r) + poly.pi_hat(r) + 0.25 - psi).abs() < 1e-14);
        }
    }

    #[test]
    fn potential_energy_of_constants() {
        let g = Grid::new(1, 8).unwrap();
        for p in kinds() {
            let y = Yosida::new(p, 0.1).unwrap();
            assert_eq!(y.potential_energy(&Field::zeros(g)).unwrap(), 0.0);
        }
        let y = Yosida::new(Potential::Polynomial, 1e-9).unwrap();
        let e = y.potential_energy(&Field::constant(g, 1.0)).unwrap();
        assert!((e + 0.25).abs() < 1e-8);
    }

    #[test]
    fn lipschitz_pi_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for p in kinds() {
            for _ in 0..1000 {
                let a: f64 = rng.random_range(-1.0..1.0);
                let b: f64 = rng.random_range(-1.0..1.0);
                assert!((p.pi_part(a) - p.pi_part(b)).abs() <= p.lipschitz_pi() * (a - b).abs() * (1.0 + 1e-14));
                if let (Some(ga), Some(gb)) = (p.gamma(a), p.gamma(b)) {
                    assert!((ga - gb) * (a - b) >= 0.0);
                }
                assert!(p.gamma_hat(a) >= 0.0);
            }
        }
    }

    #[test]
    fn envelope_derivative_matches_gamma() {
        let step = 1e-5;
        for p in kinds() {
            for lam in [0.5, 0.05, 0.005] {
                let y = Yosida::new(p, lam).unwrap();
                for k in 0..41 {
                    let r = -2.0 + 0.1 * k as f64 + 0.0123;
                    let fd = (y.gamma_hat(r + step).unwrap() - y.gamma_hat(r - step).unwrap()) / (2.0 * step);
                    let g = y.gamma(r).unwrap();
                    assert!(
                        (fd - g).abs() <= 1e-6 * g.abs().max(1.0),
                        "{p} λ={lam} r={r}: {fd} vs {g}"
                    );
                }
            }
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        for p in [Potential::Polynomial, Potential::logarithmic(0.8, 1.0).unwrap()] {
            let y = Yosida::new(p, 0.01).unwrap();
            for r in [-1.7, -0.4, 0.1, 0.9, 1.3] {
                let fd = (y.gamma(r + 1e-6).unwrap() - y.gamma(r - 1e-6).unwrap()) / 2e-6;
                let s = y.slope(r).unwrap();
                assert!((fd - s).abs() <= 1e-5 * s.max(1.0), "{p} r={r}: {fd} vs {s}");
            }
        }
    }

    #[test]
    fn mean_margin() {
        let p = Potential::logarithmic(0.8, 1.0).unwrap();
        assert!(p.check_mean(0.99).is_ok());
        assert!(p.check_mean(0.9995).is_err());
        assert!(Potential::Polynomial.check_mean(5.0).is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn kind() -> impl Strategy<Value = Potential> {
            prop_oneof![
                Just(Potential::Polynomial),
                (0.1f64..0.9).prop_map(|t| Potential::logarithmic(t, 1.0).unwrap()),
                (0.5f64..2.0).prop_map(|c| Potential::double_obstacle(c).unwrap()),
            ]
        }

        proptest! {
            #[test]
            fn yosida_is_monotone_and_lipschitz(
                pot in kind(), log_lambda in -6.0f64..0.0, a in -3.0f64..3.0, b in -3.0f64..3.0
            ) {
                let lambda = 10f64.powf(log_lambda);
                let y = Yosida::new(pot, lambda).unwrap();
                let (ga, gb) = (y.gamma(a).unwrap(), y.gamma(b).unwrap());
                prop_assert!((ga - gb) * (a - b) >= 0.0);
                prop_assert!((ga - gb).abs() <= (1.0 + 1e-10) * (a - b).abs() / lambda);
                prop_assert!(y.resolvent_residual(a).unwrap() <= RESOLVENT_TOL);
            }

            #[test]
            fn envelope_below_potential(pot in kind(), log_lambda in -6.0f64..0.0, r in -1.0f64..1.0) {
                let y = Yosida::new(pot, 10f64.powf(log_lambda)).unwrap();
                let env = y.gamma_hat(r).unwrap();
                prop_assert!(env >= 0.0);
                prop_assert!(env <= pot.gamma_hat(r));
            }
        }
    }
}
