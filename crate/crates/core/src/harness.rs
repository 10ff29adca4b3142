//! Convergence and stability experiments.
//!
//! Each experiment returns a [`ConvergenceReport`]: one row per swept value,
//! named metric columns, scalar summaries and a PASS/FAIL verdict. Verdicts
//! are monotonicity or boundedness statements; empirical rates are reported
//! but never asserted.
//!
//! The `C⁰([0,T]; X)` norms are maxima over stored snapshots, so runs compared
//! here must share one snapshot schedule.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, TauRule};
use crate::error::{Error, Result};
use crate::geometry::{fmt17, make_field, mean, Field, Grid};
use crate::kernels::{
    assemble_kernel, make_mollifier, validate_mollifier, KernelMatrix, MollifierFamily, MollifierReport, Quadrature,
};
use crate::local::NeumannLaplacian;
use crate::nonlocal::NonlocalOperator;
use crate::potentials::Yosida;
use crate::quadrature::{gauss_legendre, gauss_legendre_2d};
use crate::stepper::{Mode, Stepper, Trajectory};

/// Largest self-test error accepted by [`eps_sweep`].
pub const SELF_TEST_TOL: f64 = 1e-10;
/// Largest spread of stability ratios accepted by [`stability_check`].
pub const STABILITY_SPREAD: f64 = 10.0;
/// `h ≤ ε / MIN_GRID_RATIO` in the Γ-check.
pub const MIN_GRID_RATIO: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub value: f64,
    pub metrics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub experiment: &'static str,
    pub parameter: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<ReportRow>,
    pub summary: Vec<(&'static str, f64)>,
    pub pass: bool,
}

impl ConvergenceReport {
    pub fn values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.value).collect()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| r.metrics[j]).collect())
    }

    pub fn summary_value(&self, name: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| *k == name).map(|(_, v)| *v)
    }

    pub fn verdict(&self) -> &'static str {
        if self.pass {
            "PASS"
        } else {
            "FAIL"
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![self.parameter];
        header.extend(&self.columns);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![fmt17(r.value)];
            rec.extend(r.metrics.iter().map(|v| fmt17(*v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl std::fmt::Display for ConvergenceReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:>12}", self.parameter)?;
        for c in &self.columns {
            write!(f, " {c:>14}")?;
        }
        writeln!(f)?;
        for r in &self.rows {
            write!(f, "{:>12.4e}", r.value)?;
            for v in &r.metrics {
                write!(f, " {v:>14.6e}")?;
            }
            writeln!(f)?;
        }
        for (k, v) in &self.summary {
            writeln!(f, "{k} = {v:.6e}")?;
        }
        write!(f, "{}: {}", self.experiment, self.verdict())
    }
}

/// `true` if every entry is finite and each is below its predecessor.
pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[1] < w[0])
}

/// `log(e_{k−1}/e_k) / log(p_{k−1}/p_k)`; NaN in the first row.
pub fn empirical_rates(params: &[f64], errors: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::NAN; errors.len()];
    for k in 1..errors.len() {
        out[k] = (errors[k - 1] / errors[k]).ln() / (params[k - 1] / params[k]).ln();
    }
    out
}

fn check_list(name: &'static str, v: &[f64]) -> Result<()> {
    if v.len() < 2 {
        return Err(Error::invalid(name, "needs at least two values"));
    }
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::invalid(name, "values must be positive and finite"));
    }
    if v.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid(name, "values must be non-increasing"));
    }
    Ok(())
}

fn sweep_err(parameter: &'static str, value: f64) -> impl Fn(Error) -> Error {
    move |e| Error::SweepPoint {
        parameter,
        value,
        source: Box::new(e),
    }
}

/// Analytic test field `cos(k₁πx)cos(k₂πy)` (the second factor only in 2D).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineField {
    pub k: [u32; 2],
    pub dim: usize,
}

impl CosineField {
    pub fn value(&self, x: [f64; 2]) -> f64 {
        let a = (self.k[0] as f64 * PI * x[0]).cos();
        if self.dim == 2 {
            a * (self.k[1] as f64 * PI * x[1]).cos()
        } else {
            a
        }
    }

    pub fn gradient(&self, x: [f64; 2]) -> [f64; 2] {
        let (a, b) = (self.k[0] as f64 * PI, self.k[1] as f64 * PI);
        if self.dim == 2 {
            [
                -a * (a * x[0]).sin() * (b * x[1]).cos(),
                -b * (a * x[0]).cos() * (b * x[1]).sin(),
            ]
        } else {
            [-a * (a * x[0]).sin(), 0.0]
        }
    }

    /// `½∫|∇φ|²` by composite Gauss–Legendre quadrature.
    pub fn dirichlet_target(&self) -> f64 {
        let density = |x: [f64; 2]| {
            let g = self.gradient(x);
            0.5 * (g[0] * g[0] + g[1] * g[1])
        };
        if self.dim == 2 {
            gauss_legendre_2d(|x, y| density([x, y]), 32)
        } else {
            gauss_legendre(|x| density([x, 0.0]), 0.0, 1.0, 64)
        }
    }
}

pub fn default_grid_ratio(dim: usize) -> f64 {
    if dim == 2 {
        4.4
    } else {
        32.4
    }
}

/// Cells per dimension used for `ε` at grid ratio `c`.
pub fn gamma_grid(epsilon: f64, ratio: f64) -> usize {
    // tiny slack so that e.g. 4.4 / 0.05 does not round up to 89
    ((ratio / epsilon) * (1.0 - 1e-12)).ceil() as usize
}

/// `E_ε(φ)` against `½∫|∇φ|²` on grids refined with ε (`n = ⌈ratio/ε⌉`).
/// PASS if the smallest ε has the smallest error.
pub fn gamma_check(
    field: CosineField,
    family: MollifierFamily,
    quadrature: Quadrature,
    epsilons: &[f64],
    ratio: f64,
) -> Result<ConvergenceReport> {
    check_list("epsilons", epsilons)?;
    if ratio < MIN_GRID_RATIO {
        return Err(Error::invalid(
            "grid_ratio",
            format!("must be >= {MIN_GRID_RATIO} so that h <= eps/4, got {ratio}"),
        ));
    }
    let target = field.dirichlet_target();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for &eps in epsilons {
        let grid = Grid::new(field.dim, gamma_grid(eps, ratio))?;
        let kernel = assemble_kernel(grid, make_mollifier(family, eps, field.dim)?, quadrature)
            .map_err(sweep_err("epsilon", eps))?;
        let phi = Field::from_fn(grid, |x| field.value(x))?;
        let e = NonlocalOperator::new(&kernel).energy(&phi)?;
        let err = (e - target).abs();
        let rel = if target != 0.0 { err / target } else { err };
        errors.push(err);
        rows.push(ReportRow {
            value: eps,
            metrics: vec![grid.n() as f64, e, target, e - target, rel],
        });
    }
    for (row, rate) in rows.iter_mut().zip(empirical_rates(epsilons, &errors)) {
        row.metrics.push(rate);
    }
    let last = *errors.last().expect("non-empty list");
    let pass = errors.iter().all(|e| e.is_finite()) && errors.iter().all(|&e| last <= e);
    Ok(ConvergenceReport {
        experiment: "gamma_check",
        parameter: "epsilon",
        columns: vec!["n", "energy", "target", "signed_error", "rel_error", "rate"],
        rows,
        summary: vec![("target", target), ("final_rel_error", rows_last_rel(last, target))],
        pass,
    })
}

fn rows_last_rel(err: f64, target: f64) -> f64 {
    if target != 0.0 {
        err / target
    } else {
        err
    }
}

/// Seeded random smooth field: cosine modes with `1 ≤ |k|₁ ≤ 4` and
/// coefficients uniform in `[−1, 1] / |k|²`.
pub fn random_smooth_field(grid: Grid, rng: &mut ChaCha8Rng) -> Result<Field> {
    let mut modes = Vec::new();
    let ky_max = if grid.dim() == 2 { 4 } else { 0 };
    for ky in 0..=ky_max {
        for kx in 0..=4u32 {
            let s = kx + ky;
            if s == 0 || s > 4 {
                continue;
            }
            let a = rng.random_range(-1.0..=1.0) / f64::from(kx * kx + ky * ky);
            modes.push(([kx, ky], a));
        }
    }
    Field::from_fn(grid, |x| {
        modes
            .iter()
            .map(|&(k, a)| a * (f64::from(k[0]) * PI * x[0]).cos() * (f64::from(k[1]) * PI * x[1]).cos())
            .sum()
    })
}

/// Nonlocal Poincaré ratio `‖φ − φ̄‖²_H / (2E_ε(φ))`; `None` for constant fields.
pub fn poincare_ratio(op: &NonlocalOperator<'_>, phi: &Field) -> Result<Option<f64>> {
    let centered = phi.shift(-mean(phi));
    let num = crate::geometry::inner_h(&centered, &centered)?;
    let den = 2.0 * op.energy(phi)?;
    if num == 0.0 || den == 0.0 {
        return Ok(None);
    }
    Ok(Some(num / den))
}

/// Poincaré bound used as PASS threshold: ten times the unit-box constant `1/π²`.
pub fn poincare_bound() -> f64 {
    10.0 / (PI * PI)
}

/// Maximum nonlocal Poincaré ratio over seeded smooth samples, per ε on one
/// grid. PASS if every maximum stays below [`poincare_bound`].
pub fn poincare_check(
    grid: Grid,
    family: MollifierFamily,
    quadrature: Quadrature,
    epsilons: &[f64],
    samples: usize,
    seed: u64,
) -> Result<ConvergenceReport> {
    check_list("epsilons", epsilons)?;
    if samples == 0 {
        return Err(Error::invalid("samples", "must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fields = (0..samples)
        .map(|_| random_smooth_field(grid, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mut per_sample = vec![Vec::new(); samples];
    let mut rows = Vec::new();
    for &eps in epsilons {
        let kernel = assemble_kernel(grid, make_mollifier(family, eps, grid.dim())?, quadrature)
            .map_err(sweep_err("epsilon", eps))?;
        let op = NonlocalOperator::new(&kernel);
        let (mut lo, mut hi, mut used) = (f64::INFINITY, 0.0f64, 0usize);
        for (s, phi) in fields.iter().enumerate() {
            if let Some(r) = poincare_ratio(&op, phi)? {
                lo = lo.min(r);
                hi = hi.max(r);
                used += 1;
                per_sample[s].push(r);
            }
        }
        rows.push(ReportRow {
            value: eps,
            metrics: vec![hi, lo, used as f64],
        });
    }
    // Relative variation across ε of each sample's ratio.
    let spread = per_sample
        .iter()
        .filter(|v| v.len() == epsilons.len())
        .map(|v| {
            let hi = v.iter().copied().fold(0.0, f64::max);
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            hi / lo - 1.0
        })
        .fold(0.0, f64::max);
    let worst = rows.iter().map(|r| r.metrics[0]).fold(0.0, f64::max);
    let pass = rows.iter().all(|r| r.metrics[2] > 0.0) && worst.is_finite() && worst <= poincare_bound();
    Ok(ConvergenceReport {
        experiment: "poincare_check",
        parameter: "epsilon",
        columns: vec!["max_ratio", "min_ratio", "samples"],
        rows,
        summary: vec![
            ("max_ratio", worst),
            ("bound", poincare_bound()),
            ("max_spread", spread),
        ],
        pass,
    })
}

/// Initial field, kernel and forcing shared by all runs of a sweep.
struct Prepared {
    grid: Grid,
    u0: Field,
    forcing: crate::stepper::Forcing,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let grid = cfg.grid()?;
    let u0 = make_field(grid, &cfg.init, cfg.potential.admissible())?;
    cfg.potential.check_mean(mean(&u0))?;
    Ok(Prepared {
        grid,
        forcing: cfg.forcing(grid)?,
        u0,
    })
}

fn build_kernel(cfg: &RunConfig, grid: Grid) -> Result<Option<KernelMatrix>> {
    match cfg.solver.mode {
        Mode::Nonlocal => Ok(Some(assemble_kernel(
            grid,
            make_mollifier(cfg.kernel.family, cfg.kernel.epsilon, grid.dim())?,
            cfg.kernel.quadrature,
        )?)),
        Mode::Local => Ok(None),
    }
}

fn simulate(
    cfg: &RunConfig,
    kernel: Option<&KernelMatrix>,
    u0: &Field,
    p: &Prepared,
    stride: usize,
) -> Result<Trajectory> {
    cfg.validate()?;
    let yosida = Yosida::new(cfg.potential, cfg.solver.lambda_yosida)?;
    let stepper = Stepper::new(cfg.solver, p.grid, yosida, kernel)?;
    Ok(stepper.integrate(u0, &p.forcing, stride)?)
}

fn check_schedules(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.steps != b.steps || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-12) {
        return Err(Error::invalid(
            "snapshots",
            "trajectories use different snapshot schedules",
        ));
    }
    Ok(())
}

/// `max_k ‖a_k − b_k‖_H` over shared snapshots.
pub fn sup_distance(a: &[Field], b: &[Field]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("snapshots", "snapshot counts differ"));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| Ok(x.sub(y)?.norm_h()))
        .try_fold(0.0f64, |acc, d: Result<f64>| Ok(acc.max(d?)))
}

/// Successive differences `‖u^{λ_k} − u^{λ_{k+1}}‖_{C⁰(H)}` with
/// `λ_reg = λ_γ = λ`. PASS if strictly decreasing.
pub fn lambda_sweep(base: &RunConfig, lambdas: &[f64]) -> Result<ConvergenceReport> {
    check_list("lambdas", lambdas)?;
    base.validate()?;
    let p = prepare(base)?;
    let kernel = build_kernel(base, p.grid)?;
    let stride = base.snapshot_stride();
    let mut prev: Option<Trajectory> = None;
    let mut rows = Vec::new();
    let mut diffs = Vec::new();
    for &lam in lambdas {
        let mut cfg = base.clone();
        cfg.solver.lambda_reg = lam;
        cfg.solver.lambda_yosida = lam;
        let traj = simulate(&cfg, kernel.as_ref(), &p.u0, &p, stride).map_err(sweep_err("lambda", lam))?;
        let overshoot = traj.u.iter().map(|u| (u.max_abs() - 1.0).max(0.0)).fold(0.0, f64::max);
        let diff = match &prev {
            Some(q) => {
                check_schedules(q, &traj)?;
                let d = sup_distance(&q.u, &traj.u)?;
                diffs.push(d);
                d
            }
            None => f64::NAN,
        };
        rows.push(ReportRow {
            value: lam,
            metrics: vec![diff, overshoot],
        });
        prev = Some(traj);
    }
    let mut rates = vec![f64::NAN];
    rates.extend(empirical_rates(&lambdas[1..], &diffs));
    for (row, rate) in rows.iter_mut().zip(rates) {
        row.metrics.push(rate);
    }
    Ok(ConvergenceReport {
        experiment: "lambda_sweep",
        parameter: "lambda",
        columns: vec!["diff_to_previous", "overshoot", "rate"],
        rows,
        summary: vec![],
        pass: strictly_decreasing(&diffs),
    })
}

/// Nonlocal runs at each ε against one local reference on the same grid.
///
/// `TauRule::Fixed` compares with the viscous local problem at the same τ;
/// `TauRule::Eps` uses `τ_ε = ε` and the pure local problem (`τ = 0`). The
/// local-vs-local self test must agree to [`SELF_TEST_TOL`]. The distance of
/// the chemical potentials is informational.
pub fn eps_sweep(base: &RunConfig, epsilons: &[f64], rule: TauRule) -> Result<ConvergenceReport> {
    check_list("epsilons", epsilons)?;
    let p = prepare(base)?;
    let stride = base.snapshot_stride();

    let mut local = base.clone();
    local.solver.mode = Mode::Local;
    local.solver.tau = match rule {
        TauRule::Fixed => base.solver.tau,
        TauRule::Eps => 0.0,
    };
    let reference = simulate(&local, None, &p.u0, &p, stride)?;
    let twin = simulate(&local, None, &p.u0, &p, stride)?;
    check_schedules(&reference, &twin)?;
    let self_test = sup_distance(&reference.u, &twin.u)?;

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    let mut flux = Vec::new();
    for &eps in epsilons {
        let mut cfg = base.clone();
        cfg.solver.mode = Mode::Nonlocal;
        cfg.kernel.epsilon = eps;
        if rule == TauRule::Eps {
            cfg.solver.tau = eps;
        }
        let point = || -> Result<Trajectory> {
            cfg.validate()?;
            let kernel = build_kernel(&cfg, p.grid)?;
            simulate(&cfg, kernel.as_ref(), &p.u0, &p, stride)
        };
        let traj = point().map_err(sweep_err("epsilon", eps))?;
        check_schedules(&reference, &traj)?;
        let err = sup_distance(&traj.u, &reference.u)?;
        let mu_dist = sup_distance(&traj.mu, &reference.mu)?;
        let tau_flux = traj.viscous_flux_norm();
        errors.push(err);
        flux.push(tau_flux);
        rows.push(ReportRow {
            value: eps,
            metrics: vec![cfg.solver.tau, err, mu_dist, tau_flux],
        });
    }
    for (row, rate) in rows.iter_mut().zip(empirical_rates(epsilons, &errors)) {
        row.metrics.push(rate);
    }
    let mut pass = strictly_decreasing(&errors) && self_test <= SELF_TEST_TOL;
    if rule == TauRule::Eps {
        pass &= strictly_decreasing(&flux);
    }
    Ok(ConvergenceReport {
        experiment: "eps_sweep",
        parameter: "epsilon",
        columns: vec!["tau", "sup_error_H", "mu_distance_H", "tau_dtu_L2H", "rate"],
        rows,
        summary: vec![("self_test", self_test), ("reference_tau", local.solver.tau)],
        pass,
    })
}

/// Default zero-mean perturbation direction, normalized in `H`.
pub fn default_perturbation(grid: Grid) -> Result<Field> {
    let p = Field::from_fn(grid, |x| {
        let a = (2.0 * PI * x[0]).cos() + 0.5 * (3.0 * PI * x[0]).cos();
        if grid.dim() == 2 {
            a + 0.5 * (PI * x[0]).cos() * (PI * x[1]).cos()
        } else {
            a
        }
    })?;
    let p = p.shift(-mean(&p));
    let norm = p.norm_h();
    Ok(p.scale(1.0 / norm))
}

/// Left and right sides of the continuous-dependence estimate for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityTerms {
    pub lhs: f64,
    pub rhs: f64,
}

/// `LHS = sup‖δu‖²_{V*} + τ sup‖δu‖²_H + Σ Δt E(δu)`,
/// `RHS = ‖δu₀‖²_{V*} + τ‖δu₀‖²_H` (equal forcing). Needs every step stored.
pub fn stability_terms(a: &Trajectory, b: &Trajectory, kernel: Option<&KernelMatrix>) -> Result<StabilityTerms> {
    check_schedules(a, b)?;
    if a.stride != 1 {
        return Err(Error::invalid("stride", "stability terms need every step"));
    }
    let tau = a.params.tau;
    let dt = a.params.dt;
    let grid = *a.u[0].grid();
    let lap = NeumannLaplacian::new(grid);
    let energy = |f: &Field| match kernel {
        Some(k) => NonlocalOperator::new(k).energy(f),
        None => lap.dirichlet_energy(f),
    };
    let (mut sup_v, mut sup_h, mut e_int) = (0.0f64, 0.0f64, 0.0);
    let mut rhs = 0.0;
    for (k, (x, y)) in a.u.iter().zip(&b.u).enumerate() {
        let d = x.sub(y)?;
        let v = lap.norm_vstar(&d)?.powi(2);
        let h = crate::geometry::inner_h(&d, &d)?;
        sup_v = sup_v.max(v);
        sup_h = sup_h.max(h);
        if k == 0 {
            rhs = v + tau * h;
        } else {
            e_int += dt * energy(&d)?;
        }
    }
    Ok(StabilityTerms {
        lhs: sup_v + tau * sup_h + e_int,
        rhs,
    })
}

/// Paired runs from `u₀` and `u₀ + s·p` for each size `s`. PASS if the ratios
/// LHS/RHS stay within a factor [`STABILITY_SPREAD`] of each other; the
/// largest ratio is reported as `M_hat`.
pub fn stability_check(base: &RunConfig, sizes: &[f64], direction: Option<&Field>) -> Result<ConvergenceReport> {
    if sizes.is_empty() {
        return Err(Error::invalid("perturbations", "needs at least one size"));
    }
    if sizes.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(Error::invalid("perturbations", "sizes must be finite and >= 0"));
    }
    base.validate()?;
    let p = prepare(base)?;
    let dir = match direction {
        Some(d) => {
            p.grid.check_same(d.grid())?;
            d.clone()
        }
        None => default_perturbation(p.grid)?,
    };
    let m = mean(&dir);
    if m.abs() > 1e-12 {
        return Err(Error::NonZeroMean { mean: m, tol: 1e-12 });
    }
    let kernel = build_kernel(base, p.grid)?;
    let reference = simulate(base, kernel.as_ref(), &p.u0, &p, 1)?;
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for &s in sizes {
        if s == 0.0 {
            rows.push(ReportRow {
                value: s,
                metrics: vec![0.0, 0.0, f64::NAN],
            });
            continue;
        }
        let u0 = p.u0.lin_comb(1.0, &dir, s)?;
        let point = || -> Result<StabilityTerms> {
            if !u0.values().iter().all(|&v| base.potential.admissible().contains(v)) {
                return Err(Error::invalid(
                    "perturbations",
                    "perturbed data leaves the potential domain",
                ));
            }
            let traj = simulate(base, kernel.as_ref(), &u0, &p, 1)?;
            stability_terms(&reference, &traj, kernel.as_ref())
        };
        let t = point().map_err(sweep_err("perturbation", s))?;
        let ratio = t.lhs / t.rhs;
        ratios.push(ratio);
        rows.push(ReportRow {
            value: s,
            metrics: vec![t.lhs, t.rhs, ratio],
        });
    }
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = !ratios.is_empty() && ratios.iter().all(|r| r.is_finite()) && hi <= STABILITY_SPREAD * lo;
    Ok(ConvergenceReport {
        experiment: "stability_check",
        parameter: "perturbation",
        columns: vec!["lhs", "rhs", "ratio"],
        rows,
        summary: vec![
            ("M_hat", hi),
            ("ratio_spread", if lo > 0.0 { hi / lo } else { f64::NAN }),
        ],
        pass,
    })
}

/// `validate_mollifier` for both families over a list of ε.
#[derive(Debug, Clone)]
pub struct KernelValidation {
    pub reports: Vec<MollifierReport>,
    pub tolerance: f64,
}

impl KernelValidation {
    pub fn pass(&self) -> bool {
        self.reports.iter().all(|r| r.normalization_error <= self.tolerance)
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        w.write_record(["family", "epsilon", "normalization_error", "tail_mass"])?;
        for r in &self.reports {
            w.write_record([
                r.family.to_string(),
                fmt17(r.epsilon),
                fmt17(r.normalization_error),
                fmt17(r.tail_mass),
            ])?;
        }
        w.flush().map_err(|e| Error::io(Path::new("<csv>"), e))
    }
}

pub fn kernel_validate(dim: usize, epsilons: &[f64], delta: f64) -> Result<KernelValidation> {
    let mut reports = Vec::new();
    for family in [MollifierFamily::Bump, MollifierFamily::Indicator] {
        for &eps in epsilons {
            reports.push(validate_mollifier(&make_mollifier(family, eps, dim)?, delta)?);
        }
    }
    Ok(KernelValidation {
        reports,
        tolerance: 1e-8,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::InitSpec;

    #[test]
    fn cosine_targets() {
        let f1 = CosineField { k: [1, 0], dim: 1 };
        assert!((f1.dirichlet_target() - PI * PI / 4.0).abs() < 1e-12);
        let f2 = CosineField { k: [1, 1], dim: 2 };
        assert!((f2.dirichlet_target() - PI * PI / 4.0).abs() < 1e-12);
        let f3 = CosineField { k: [2, 1], dim: 2 };
        assert!((f3.dirichlet_target() - 5.0 * PI * PI / 8.0).abs() < 1e-12);
        assert_eq!(CosineField { k: [0, 0], dim: 2 }.dirichlet_target(), 0.0);
    }

    #[test]
    fn gamma_grid_schedule() {
        assert_eq!(gamma_grid(0.05, 4.4), 88);
        assert_eq!(gamma_grid(0.1, 32.4), 324);
        assert_eq!(gamma_grid(0.4, 4.0), 10);
    }

    #[test]
    fn gamma_check_constant_field() {
        let r = gamma_check(
            CosineField { k: [0, 0], dim: 1 },
            MollifierFamily::Bump,
            Quadrature::Punctured,
            &[0.4, 0.2, 0.1],
            8.0,
        )
        .unwrap();
        assert!(r.pass);
        assert!(r.column("energy").unwrap().iter().all(|&e| e == 0.0));
        assert!(gamma_check(
            CosineField { k: [1, 0], dim: 1 },
            MollifierFamily::Bump,
            Quadrature::Punctured,
            &[0.4, 0.2],
            3.0
        )
        .is_err());
    }

    #[test]
    fn list_validation_and_helpers() {
        assert!(check_list("x", &[0.1]).is_err());
        assert!(check_list("x", &[0.1, 0.2]).is_err());
        assert!(check_list("x", &[0.1, -0.1]).is_err());
        assert!(check_list("x", &[0.1, 0.1]).is_ok());
        assert!(strictly_decreasing(&[3.0, 2.0, 1.0]));
        assert!(!strictly_decreasing(&[3.0, 3.0]));
        assert!(!strictly_decreasing(&[f64::NAN, 1.0]));
        let r = empirical_rates(&[0.2, 0.1, 0.05], &[4.0, 2.0, 0.5]);
        assert!(r[0].is_nan());
        assert!((r[1] - 1.0).abs() < 1e-14 && (r[2] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn poincare_single_mode_and_constant() {
        let g = Grid::new(1, 256).unwrap();
        let k = assemble_kernel(
            g,
            make_mollifier(MollifierFamily::Bump, 0.05, 1).unwrap(),
            Quadrature::MomentNormalized,
        )
        .unwrap();
        let op = NonlocalOperator::new(&k);
        assert_eq!(poincare_ratio(&op, &Field::constant(g, 0.3)).unwrap(), None);
        let c = Field::from_fn(g, |x| (PI * x[0]).cos()).unwrap();
        let r = poincare_ratio(&op, &c).unwrap().unwrap();
        assert!((r * PI * PI - 1.0).abs() < 0.05, "{r}");
    }

    fn small_config() -> RunConfig {
        let mut c = RunConfig {
            n: 32,
            ..RunConfig::default()
        };
        c.kernel.epsilon = 0.2;
        c.solver.t_final = 0.01;
        c.solver.dt = 1e-3;
        c
    }

    #[test]
    fn lambda_sweep_identical_values_give_zero() {
        let r = lambda_sweep(&small_config(), &[1e-1, 1e-1]).unwrap();
        assert_eq!(r.column("diff_to_previous").unwrap()[1], 0.0);
    }

    #[test]
    fn eps_sweep_self_test_is_exact() {
        let mut c = small_config();
        c.kernel.quadrature = Quadrature::MomentNormalized;
        let r = eps_sweep(&c, &[0.4, 0.2], TauRule::Fixed).unwrap();
        assert_eq!(r.summary_value("self_test"), Some(0.0));
        assert_eq!(r.rows.len(), 2);
    }

    #[test]
    fn stability_rejects_nonzero_mean_and_skips_zero() {
        let c = small_config();
        let g = c.grid().unwrap();
        assert!(matches!(
            stability_check(&c, &[1e-2], Some(&Field::constant(g, 1.0))),
            Err(Error::NonZeroMean { .. })
        ));
        let r = stability_check(&c, &[0.0, 1e-3], None).unwrap();
        assert!(r.rows[0].metrics[2].is_nan());
        assert!(r.rows[1].metrics[2].is_finite());
    }

    #[test]
    fn stability_is_quadratic_in_small_perturbations() {
        let c = small_config();
        let r = stability_check(&c, &[2e-3, 1e-3], None).unwrap();
        let lhs = r.column("lhs").unwrap();
        let q = lhs[1] / lhs[0];
        assert!((q - 0.25).abs() <= 0.3 * 0.25, "{q}");
    }

    #[test]
    fn random_smooth_fields_are_seeded() {
        let g = Grid::new(2, 8).unwrap();
        let a = random_smooth_field(g, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = random_smooth_field(g, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(mean(&a).abs() < 1e-14);
        let _ = make_field(g, &InitSpec::Constant(0.0), crate::geometry::Admissible::All).unwrap();
    }

    #[test]
    fn kernel_validation_rows() {
        let v = kernel_validate(1, &[0.4, 0.1], 0.5).unwrap();
        assert_eq!(v.reports.len(), 4);
        assert!(v.pass());
        let mut out = Vec::new();
        v.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("family,epsilon,normalization_error,tail_mass\nbump,"));
    }
}
