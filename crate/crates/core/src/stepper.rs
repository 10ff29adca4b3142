//! Energy-stable implicit time stepping for the regularized nonlocal system and
//! for the local viscous Cahn–Hilliard system.
//!
//! One step solves, for `u = u^{n+1}`,
//!
//! ```text
//! (u − u^n)/Δt = −L μ
//! μ = τ(u − u^n)/Δt + M u + γ_λ(u) + Π(u^n) − g(t^{n+1})
//! ```
//!
//! with `L` the Neumann Laplacian (`−Δ`) and `M = λ_reg L + B_ε` (nonlocal) or
//! `M = L` (local). The convex parts (`M`, `γ_λ`) are implicit and the concave
//! part `Π` is explicit, so the discrete energy decreases for every `Δt` when
//! `g = 0`. Eliminating `μ` leaves one nonlinear system in `u`, solved by Newton
//! with the dense Jacobian `I + τL + Δt L (M + diag γ_λ'(u))`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::{inner_h, make_field, mean, CosineMode, Field, Grid, TimeGrid};
use crate::kernels::{assemble_kernel, make_mollifier, KernelMatrix};
use crate::local::NeumannLaplacian;
use crate::nonlocal::NonlocalOperator;
use crate::potentials::Yosida;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Nonlocal,
    Local,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Nonlocal => "nonlocal",
            Mode::Local => "local",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nonlocal" => Ok(Mode::Nonlocal),
            "local" => Ok(Mode::Local),
            other => Err(Error::Config(format!("unknown solver mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub mode: Mode,
    /// Viscosity `τ ≥ 0`; nonlocal runs need `τ > 0`.
    pub tau: f64,
    /// Weight of the elliptic regularization `−λΔu` (nonlocal mode only).
    pub lambda_reg: f64,
    /// Yosida parameter of `γ`.
    pub lambda_yosida: f64,
    pub dt: f64,
    pub t_final: f64,
    /// Newton stops once `‖F‖_H` or the last correction `‖δ‖_H` is at most this.
    pub newton_tol: f64,
    pub newton_max: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            mode: Mode::Nonlocal,
            tau: 0.05,
            lambda_reg: 1e-5,
            lambda_yosida: 1e-5,
            dt: 1e-3,
            t_final: 0.05,
            newton_tol: 1e-10,
            newton_max: 50,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", format!("must be >= 0, got {}", self.tau)));
        }
        if self.mode == Mode::Nonlocal && self.tau <= 0.0 {
            return Err(Error::invalid("tau", "the nonlocal system needs tau > 0"));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::invalid(
                "lambda_reg",
                format!("must be >= 0, got {}", self.lambda_reg),
            ));
        }
        if !(self.lambda_yosida > 0.0 && self.lambda_yosida.is_finite()) {
            return Err(Error::invalid(
                "lambda_yosida",
                format!("must be > 0, got {}", self.lambda_yosida),
            ));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::invalid("newton_tol", "must be > 0"));
        }
        if self.newton_max == 0 {
            return Err(Error::invalid("newton_max", "must be >= 1"));
        }
        TimeGrid::new(self.t_final, self.dt)?;
        Ok(())
    }

    /// `λ_reg` as it enters the equations (zero in local mode).
    pub fn effective_lambda_reg(&self) -> f64 {
        match self.mode {
            Mode::Nonlocal => self.lambda_reg,
            Mode::Local => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForcingKind {
    Zero,
    /// Constant in time.
    Constant,
    /// `(1 − e^{−t/t_ramp})` times the profile; smooth in `t`.
    TimeRamp {
        t_ramp: f64,
    },
}

/// Distributed forcing `g(t, x) = s(t) · amplitude · cos(k π x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    kind: ForcingKind,
    profile: Field,
}

impl Forcing {
    pub fn zero(grid: Grid) -> Self {
        Self {
            kind: ForcingKind::Zero,
            profile: Field::zeros(grid),
        }
    }

    pub fn new(grid: Grid, kind: ForcingKind, mode: CosineMode) -> Result<Self> {
        if let ForcingKind::TimeRamp { t_ramp } = kind {
            if !(t_ramp > 0.0) {
                return Err(Error::invalid("t_ramp", format!("must be > 0, got {t_ramp}")));
            }
        }
        let profile = match kind {
            ForcingKind::Zero => Field::zeros(grid),
            _ => Field::from_fn(grid, |x| mode.eval(x, grid.dim()))?,
        };
        Ok(Self { kind, profile })
    }

    pub fn kind(&self) -> ForcingKind {
        self.kind
    }

    pub fn time_factor(&self, t: f64) -> f64 {
        match self.kind {
            ForcingKind::Zero => 0.0,
            ForcingKind::Constant => 1.0,
            ForcingKind::TimeRamp { t_ramp } => -(-t / t_ramp).exp_m1(),
        }
    }

    pub fn at(&self, t: f64) -> Field {
        self.profile.scale(self.time_factor(t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub t: f64,
    pub mass: f64,
    /// `E_ε(u)` in nonlocal mode, `½∫|∇u|²` in local mode.
    pub e_nl: f64,
    pub e_pot: f64,
    pub e_reg: f64,
    pub e_total: f64,
    /// `(−Δμ, μ)_H`.
    pub grad_mu_sq: f64,
    pub newton_iters: usize,
    pub step_residual: f64,
    /// `‖(u^{n+1} − u^n)/Δt‖_H²`.
    pub dudt_sq: f64,
    /// Newton residual after each iteration, starting from the initial guess.
    pub newton_residuals: Vec<f64>,
}

impl DiagnosticsRecord {
    pub const CSV_HEADER: [&'static str; 10] = [
        "step",
        "t",
        "mass",
        "E_nl",
        "E_pot",
        "E_reg",
        "E_total",
        "grad_mu_sq",
        "newton_iters",
        "step_residual",
    ];

    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.mass,
            self.e_nl,
            self.e_pot,
            self.e_reg,
            self.e_total,
            self.grad_mu_sq,
            self.step_residual,
            self.dudt_sq,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Stored solution history. Snapshots are taken every `stride` steps and at the
/// final step; diagnostics are kept for every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub params: SolverParams,
    pub stride: usize,
    pub times: Vec<f64>,
    pub steps: Vec<usize>,
    pub u: Vec<Field>,
    /// Chemical potential at the snapshot steps; at step 0 the viscous term is
    /// omitted.
    pub mu: Vec<Field>,
    pub diagnostics: Vec<DiagnosticsRecord>,
}

impl Trajectory {
    pub fn final_state(&self) -> &Field {
        self.u.last().expect("trajectory holds the initial state")
    }

    /// `‖τ ∂_t u‖_{L²(0,T;H)}` from the per-step difference quotients.
    pub fn viscous_flux_norm(&self) -> f64 {
        let dt = self.params.dt;
        let tau = self.params.tau;
        self.diagnostics
            .iter()
            .skip(1)
            .fold(0.0, |acc, r| acc + dt * tau * tau * r.dudt_sq)
            .sqrt()
    }

    pub fn write_diagnostics_csv(&self, path: &std::path::Path) -> Result<()> {
        use crate::geometry::fmt17;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(DiagnosticsRecord::CSV_HEADER)?;
        for r in &self.diagnostics {
            w.write_record([
                r.step.to_string(),
                fmt17(r.t),
                fmt17(r.mass),
                fmt17(r.e_nl),
                fmt17(r.e_pot),
                fmt17(r.e_reg),
                fmt17(r.e_total),
                fmt17(r.grad_mu_sq),
                r.newton_iters.to_string(),
                fmt17(r.step_residual),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Elliptic regularization: solves `(I + λL) v = u₀`; identity for `λ = 0`.
pub fn regularize_initial(u0: &Field, lambda: f64, laplacian: &NeumannLaplacian) -> Result<Field> {
    laplacian.grid().check_same(u0.grid())?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::invalid("lambda", format!("must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(u0.clone());
    }
    let mut a = laplacian.matrix() * lambda;
    for i in 0..a.nrows() {
        a[(i, i)] += 1.0;
    }
    let rhs = DVector::from_column_slice(u0.values());
    let chol = a
        .clone()
        .cholesky()
        .ok_or(Error::SingularSystem("elliptic regularization"))?;
    let mut x = chol.solve(&rhs);
    let scale = u0.norm_h().max(f64::MIN_POSITIVE);
    let vol = u0.grid().cell_volume();
    for _ in 0..3 {
        let r = &rhs - &a * &x;
        if (r.norm_squared() * vol).sqrt() <= 1e-11 * scale {
            return Field::new(*u0.grid(), x.as_slice().to_vec());
        }
        x += chol.solve(&r);
    }
    Err(Error::NoConvergence {
        what: "elliptic regularization",
        iterations: 3,
        residual: ((&rhs - &a * &x).norm_squared() * vol).sqrt(),
    })
}

/// Result of one time step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub u: Field,
    pub mu: Field,
    /// `ξ = γ_λ(u)`.
    pub xi: Field,
    pub record: DiagnosticsRecord,
}

/// Energy split of a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energies {
    pub e_nl: f64,
    pub e_pot: f64,
    pub e_reg: f64,
}

impl Energies {
    pub fn total(&self) -> f64 {
        self.e_nl + self.e_pot + self.e_reg
    }
}

/// Assembled operators for one grid and one parameter set.
pub struct Stepper<'a> {
    params: SolverParams,
    grid: Grid,
    laplacian: NeumannLaplacian,
    kernel: Option<&'a KernelMatrix>,
    yosida: Yosida,
    l_mat: DMatrix<f64>,
    /// `I + τL + Δt L M`, the part of the Jacobian that does not change.
    base_jac: DMatrix<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(params: SolverParams, grid: Grid, yosida: Yosida, kernel: Option<&'a KernelMatrix>) -> Result<Self> {
        params.validate()?;
        let laplacian = NeumannLaplacian::new(grid);
        let l_mat = laplacian.matrix();
        // M = λ_reg L + B_ε or L
        let m_mat = match params.mode {
            Mode::Local => l_mat.clone(),
            Mode::Nonlocal => {
                let k = kernel.ok_or_else(|| Error::invalid("kernel", "nonlocal mode needs a kernel"))?;
                grid.check_same(k.grid())?;
                NonlocalOperator::new(k).matrix() + &l_mat * params.lambda_reg
            }
        };
        let mut base_jac = &l_mat * params.tau + (&l_mat * &m_mat) * params.dt;
        for i in 0..grid.len() {
            base_jac[(i, i)] += 1.0;
        }
        Ok(Self {
            params,
            grid,
            laplacian,
            kernel: match params.mode {
                Mode::Nonlocal => kernel,
                Mode::Local => None,
            },
            yosida,
            l_mat,
            base_jac,
        })
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn laplacian(&self) -> &NeumannLaplacian {
        &self.laplacian
    }

    /// `M u` in difference form.
    fn apply_m(&self, u: &[f64]) -> Vec<f64> {
        match self.kernel {
            None => self.laplacian.apply_raw(u),
            Some(k) => {
                let mut out = NonlocalOperator::new(k).apply_raw(u);
                let lam = self.params.lambda_reg;
                if lam > 0.0 {
                    for (o, l) in out.iter_mut().zip(self.laplacian.apply_raw(u)) {
                        *o += lam * l;
                    }
                }
                out
            }
        }
    }

    pub fn energies(&self, u: &Field) -> Result<Energies> {
        let e_nl = match self.kernel {
            Some(k) => NonlocalOperator::new(k).energy(u)?,
            None => self.laplacian.dirichlet_energy(u)?,
        };
        let e_pot = self.yosida.potential_energy(u)?;
        let lam = self.params.effective_lambda_reg();
        let e_reg = if lam > 0.0 {
            lam * self.laplacian.dirichlet_energy(u)?
        } else {
            0.0
        };
        Ok(Energies { e_nl, e_pot, e_reg })
    }

    /// `M u_prev + Π(u_prev) − g`, the part of `μ` fixed during a step.
    fn frozen_part(&self, u_prev: &[f64], g: &[f64]) -> Vec<f64> {
        let pot = self.yosida.potential();
        let mut base = self.apply_m(u_prev);
        for ((b, &u), &gi) in base.iter_mut().zip(u_prev).zip(g) {
            *b += pot.pi_part(u) - gi;
        }
        base
    }

    /// `μ` and `γ_λ'` at `u_prev + w` given the frozen part:
    /// `rate·w + frozen + M w + γ_λ(u_prev + w)`.
    fn chemical_potential(&self, w: &[f64], u_prev: &[f64], frozen: &[f64], rate: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let mw = self.apply_m(w);
        let mut mu = Vec::with_capacity(w.len());
        let mut slopes = Vec::with_capacity(w.len());
        for i in 0..w.len() {
            let (gam, slope) = self.yosida.gamma_and_slope(u_prev[i] + w[i])?;
            mu.push(rate * w[i] + frozen[i] + mw[i] + gam);
            slopes.push(slope);
        }
        Ok((mu, slopes))
    }

    /// `μ` of a state without the viscous term (used for the initial snapshot).
    pub fn static_potential(&self, u: &Field, g: &Field) -> Result<Field> {
        self.grid.check_same(u.grid())?;
        self.grid.check_same(g.grid())?;
        let frozen = self.frozen_part(u.values(), g.values());
        let zero = vec![0.0; u.len()];
        let (mu, _) = self.chemical_potential(&zero, u.values(), &frozen, 0.0)?;
        Field::new(self.grid, mu)
    }

    pub fn initial_record(&self, u: &Field) -> Result<DiagnosticsRecord> {
        let en = self.energies(u)?;
        Ok(DiagnosticsRecord {
            step: 0,
            t: 0.0,
            mass: mean(u),
            e_nl: en.e_nl,
            e_pot: en.e_pot,
            e_reg: en.e_reg,
            e_total: en.total(),
            grad_mu_sq: 0.0,
            newton_iters: 0,
            step_residual: 0.0,
            dudt_sq: 0.0,
            newton_residuals: Vec::new(),
        })
    }

    /// Advances `u_prev` by one step with forcing `g_next = g(t^{n+1})`.
    pub fn step(&self, u_prev: &Field, g_next: &Field, step: usize, t_next: f64) -> Result<StepOutput> {
        self.grid.check_same(u_prev.grid())?;
        self.grid.check_same(g_next.grid())?;
        u_prev.ensure_finite()?;
        let dt = self.params.dt;
        let vol = self.grid.cell_volume();
        let up = u_prev.values();
        let g = g_next.values();
        let len = up.len();
        let h_norm = |v: &[f64]| (v.iter().fold(0.0, |a, x| a + x * x) * vol).sqrt();

        // Newton runs on the increment w = u^{n+1} − u^n, so rounding of the
        // iterate scales with |w| rather than |u| before Δt L² amplifies it.
        let frozen = self.frozen_part(up, g);
        let rate = self.params.tau / dt;
        let mut w = vec![0.0; len];
        let mut history = Vec::new();
        let mut iterations = 0;
        let mut last_correction = f64::INFINITY;
        let (mu, residual) = loop {
            let (mu, slopes) = self.chemical_potential(&w, up, &frozen, rate)?;
            let lmu = self.laplacian.apply_raw(&mu);
            let f: Vec<f64> = (0..len).map(|i| w[i] + dt * lmu[i]).collect();
            let res = h_norm(&f);
            history.push(res);
            if !res.is_finite() {
                return Err(Error::NewtonFailed {
                    step,
                    t: t_next,
                    iterations,
                    residual: res,
                });
            }
            // ‖F‖_H bottoms out near eps·‖Δt L²‖·‖w‖ on fine grids, so a
            // correction below tolerance also counts as converged.
            if res <= self.params.newton_tol || last_correction <= self.params.newton_tol {
                break (mu, res);
            }
            if iterations >= self.params.newton_max {
                return Err(Error::NewtonFailed {
                    step,
                    t: t_next,
                    iterations,
                    residual: res,
                });
            }
            let mut jac = self.base_jac.clone();
            for (j, &d) in slopes.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let scale = dt * d;
                for (dst, lij) in jac.column_mut(j).iter_mut().zip(self.l_mat.column(j).iter()) {
                    *dst += scale * lij;
                }
            }
            let rhs = DVector::from_vec(f);
            let delta = jac.lu().solve(&rhs).ok_or(Error::SingularSystem("Newton step"))?;
            last_correction = h_norm(delta.as_slice());
            for (wi, di) in w.iter_mut().zip(delta.iter()) {
                *wi -= di;
            }
            iterations += 1;
        };

        let u: Vec<f64> = up.iter().zip(&w).map(|(a, b)| a + b).collect();
        let u_new = Field::new(self.grid, u).map_err(|_| Error::NewtonFailed {
            step,
            t: t_next,
            iterations,
            residual,
        })?;
        let mu = Field::new(self.grid, mu)?;
        let xi = Field::new(
            self.grid,
            u_new
                .values()
                .iter()
                .map(|&v| self.yosida.gamma(v))
                .collect::<Result<Vec<_>>>()?,
        )?;
        let en = self.energies(&u_new)?;
        let grad_mu_sq = inner_h(&self.laplacian.apply(&mu)?, &mu)?;
        let dudt = Field::new(self.grid, w)?.scale(1.0 / dt);
        let record = DiagnosticsRecord {
            step,
            t: t_next,
            mass: mean(&u_new),
            e_nl: en.e_nl,
            e_pot: en.e_pot,
            e_reg: en.e_reg,
            e_total: en.total(),
            grad_mu_sq,
            newton_iters: iterations,
            step_residual: residual,
            dudt_sq: inner_h(&dudt, &dudt)?,
            newton_residuals: history,
        };
        if !record.is_finite() {
            return Err(Error::NewtonFailed {
                step,
                t: t_next,
                iterations,
                residual,
            });
        }
        Ok(StepOutput {
            u: u_new,
            mu,
            xi,
            record,
        })
    }

    /// Applies the elliptic regularization (nonlocal mode) and integrates to
    /// `t_final`, snapshotting every `stride` steps and at the end.
    pub fn integrate(&self, u0: &Field, forcing: &Forcing, stride: usize) -> Result<Trajectory, Aborted> {
        let stride = stride.max(1);
        let fail = |source: Error, partial: Option<Trajectory>| Aborted {
            source,
            partial: partial.map(Box::new),
        };
        let time = TimeGrid::new(self.params.t_final, self.params.dt).map_err(|e| fail(e, None))?;
        let start =
            regularize_initial(u0, self.params.effective_lambda_reg(), &self.laplacian).map_err(|e| fail(e, None))?;
        let g0 = forcing.at(0.0);
        let mut traj = Trajectory {
            params: self.params,
            stride,
            times: vec![0.0],
            steps: vec![0],
            u: vec![start.clone()],
            mu: vec![self.static_potential(&start, &g0).map_err(|e| fail(e, None))?],
            diagnostics: vec![self.initial_record(&start).map_err(|e| fail(e, None))?],
        };
        let mut u = start;
        for n in 1..=time.steps() {
            let t = time.time(n);
            let out = match self.step(&u, &forcing.at(t), n, t) {
                Ok(o) => o,
                Err(e) => return Err(fail(e, Some(traj))),
            };
            if n % stride == 0 || n == time.steps() {
                traj.times.push(t);
                traj.steps.push(n);
                traj.u.push(out.u.clone());
                traj.mu.push(out.mu);
            }
            traj.diagnostics.push(out.record);
            u = out.u;
        }
        Ok(traj)
    }
}

/// A run that stopped early, with what it computed before the failure.
#[derive(Debug)]
pub struct Aborted {
    pub source: Error,
    pub partial: Option<Box<Trajectory>>,
}

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "run aborted: {}", self.source)
    }
}

impl std::error::Error for Aborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

impl From<Aborted> for Error {
    fn from(a: Aborted) -> Self {
        a.source
    }
}

/// Builds every operator from a validated config and integrates it.
pub fn run(config: &RunConfig) -> Result<Trajectory, Aborted> {
    let setup = || -> Result<_> {
        config.validate()?;
        let grid = config.grid()?;
        let u0 = make_field(grid, &config.init, config.potential.admissible())?;
        config.potential.check_mean(mean(&u0))?;
        let kernel = match config.solver.mode {
            Mode::Nonlocal => Some(assemble_kernel(
                grid,
                make_mollifier(config.kernel.family, config.kernel.epsilon, grid.dim())?,
                config.kernel.quadrature,
            )?),
            Mode::Local => None,
        };
        let forcing = config.forcing(grid)?;
        let yosida = Yosida::new(config.potential, config.solver.lambda_yosida)?;
        Ok((grid, u0, kernel, forcing, yosida))
    };
    let (grid, u0, kernel, forcing, yosida) = setup().map_err(|source| Aborted { source, partial: None })?;
    let stepper = Stepper::new(config.solver, grid, yosida, kernel.as_ref())
        .map_err(|source| Aborted { source, partial: None })?;
    stepper.integrate(&u0, &forcing, config.snapshot_stride())
}
