//! Run and sweep configuration in `[section] key = value` form.
//!
//! Sections: `domain`, `kernel`, `potential`, `solver`, `forcing`, `init`,
//! `output`, `sweep`. Every key is optional; missing keys take the values of
//! [`RunConfig::default`]. Unknown sections and keys are rejected.
//!
//! Lists are comma separated. Cosine modes are written `k:amplitude` in 1D and
//! `kxXky:amplitude` in 2D, e.g. `modes = 1:0.3, 2:0.15` or `modes = 1x1:0.2`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::error::{Error, Result};
use crate::geometry::{CosineMode, Grid, InitSpec};
use crate::kernels::{MollifierFamily, Quadrature};
use crate::potentials::Potential;
use crate::stepper::{Forcing, ForcingKind, Mode, SolverParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub family: MollifierFamily,
    pub epsilon: f64,
    pub quadrature: Quadrature,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcingConfig {
    pub kind: ForcingKind,
    pub amplitude: f64,
    pub k: [u32; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Minimum number of stored snapshots after the initial one.
    pub snapshots: usize,
    pub write_snapshots: bool,
}

/// How the viscosity follows ε in an ε-sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauRule {
    /// `τ_ε = τ` for every ε; the local reference uses the same τ.
    Fixed,
    /// `τ_ε = ε`; the local reference is the pure equation (`τ = 0`).
    Eps,
}

impl fmt::Display for TauRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TauRule::Fixed => "fixed",
            TauRule::Eps => "eps",
        })
    }
}

impl FromStr for TauRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fixed" => Ok(TauRule::Fixed),
            "eps" | "proportional_to_eps" => Ok(TauRule::Eps),
            other => Err(Error::Config(format!("unknown tau rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub tau_rule: TauRule,
    pub perturbations: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    /// `n = ceil(grid_ratio / ε)` in the Γ-check; `None` picks the dimension default.
    pub grid_ratio: Option<f64>,
    /// Cosine mode of the Γ-check test field.
    pub test_mode: [u32; 2],
    /// Tail radius for `kernel-validate`.
    pub delta: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.2, 0.1, 0.05],
            lambdas: vec![1e-1, 1e-2, 1e-3, 1e-4],
            tau_rule: TauRule::Fixed,
            perturbations: vec![1e-2, 1e-3, 1e-4],
            samples: 20,
            seed: 2024,
            grid_ratio: None,
            test_mode: [1, 1],
            delta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dim: usize,
    pub n: usize,
    pub kernel: KernelConfig,
    pub potential: Potential,
    pub solver: SolverParams,
    pub forcing: ForcingConfig,
    pub init: InitSpec,
    pub output: OutputConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            n: 128,
            kernel: KernelConfig {
                family: MollifierFamily::Bump,
                epsilon: 0.1,
                quadrature: Quadrature::Punctured,
            },
            potential: Potential::Polynomial,
            solver: SolverParams::default(),
            forcing: ForcingConfig {
                kind: ForcingKind::Zero,
                amplitude: 0.0,
                k: [1, 0],
            },
            init: InitSpec::Cosine {
                mean: 0.1,
                modes: vec![
                    CosineMode {
                        k: [1, 0],
                        amplitude: 0.3,
                    },
                    CosineMode {
                        k: [2, 0],
                        amplitude: 0.15,
                    },
                ],
            },
            output: OutputConfig {
                dir: PathBuf::from("out"),
                snapshots: 50,
                write_snapshots: true,
            },
            sweep: SweepConfig::default(),
        }
    }
}

const KNOWN: &[(&str, &[&str])] = &[
    ("domain", &["dim", "n"]),
    ("kernel", &["family", "epsilon", "quadrature"]),
    ("potential", &["type", "theta", "theta0", "c"]),
    (
        "solver",
        &[
            "mode",
            "tau",
            "lambda_reg",
            "lambda_yosida",
            "lambda",
            "dt",
            "t_final",
            "newton_tol",
            "newton_max",
        ],
    ),
    ("forcing", &["kind", "amplitude", "mode", "t_ramp"]),
    ("init", &["kind", "mean", "value", "modes", "amplitude", "seed"]),
    ("output", &["dir", "snapshots", "write_snapshots"]),
    (
        "sweep",
        &[
            "epsilons",
            "lambdas",
            "tau_rule",
            "perturbations",
            "samples",
            "seed",
            "grid_ratio",
            "test_mode",
            "delta",
        ],
    ),
];

fn cfg_err(section: &str, key: &str, msg: impl fmt::Display) -> Error {
    Error::Config(format!("[{section}] {key}: {msg}"))
}

fn parse_num<T: FromStr>(section: &str, key: &str, raw: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    raw.trim()
        .parse::<T>()
        .map_err(|e| cfg_err(section, key, format!("`{raw}`: {e}")))
}

fn parse_list(section: &str, key: &str, raw: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(section, key, s))
        .collect()
}

fn parse_bool(section: &str, key: &str, raw: &str) -> Result<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(cfg_err(section, key, format!("`{raw}` is not a boolean"))),
    }
}

/// `3` or `2x1`.
fn parse_wavenumber(section: &str, key: &str, raw: &str) -> Result<[u32; 2]> {
    let raw = raw.trim();
    match raw.split_once(['x', 'X']) {
        Some((a, b)) => Ok([parse_num(section, key, a)?, parse_num(section, key, b)?]),
        None => Ok([parse_num(section, key, raw)?, 0]),
    }
}

fn format_wavenumber(k: [u32; 2], dim: usize) -> String {
    if dim == 2 || k[1] != 0 {
        format!("{}x{}", k[0], k[1])
    } else {
        k[0].to_string()
    }
}

fn parse_modes(raw: &str) -> Result<Vec<CosineMode>> {
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|entry| {
            let (k, a) = entry
                .split_once(':')
                .ok_or_else(|| cfg_err("init", "modes", format!("`{entry}` is not `k:amplitude`")))?;
            Ok(CosineMode {
                k: parse_wavenumber("init", "modes", k)?,
                amplitude: parse_num("init", "modes", a)?,
            })
        })
        .collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = RunConfig::default();

        for (section, props) in ini.iter() {
            let Some(name) = section else {
                if props.iter().next().is_some() {
                    return Err(Error::Config("keys must appear under a [section] header".into()));
                }
                continue;
            };
            let allowed = KNOWN
                .iter()
                .find(|(s, _)| *s == name)
                .ok_or_else(|| Error::Config(format!("unknown section [{name}]")))?
                .1;
            for (key, _) in props.iter() {
                if !allowed.contains(&key) {
                    return Err(cfg_err(name, key, "unknown key"));
                }
            }
        }

        let get = |s: &str, k: &str| ini.section(Some(s)).and_then(|p| p.get(k));

        if let Some(v) = get("domain", "dim") {
            cfg.dim = parse_num("domain", "dim", v)?;
        }
        if let Some(v) = get("domain", "n") {
            cfg.n = parse_num("domain", "n", v)?;
        }

        if let Some(v) = get("kernel", "family") {
            cfg.kernel.family = v.parse()?;
        }
        if let Some(v) = get("kernel", "epsilon") {
            cfg.kernel.epsilon = parse_num("kernel", "epsilon", v)?;
        }
        if let Some(v) = get("kernel", "quadrature") {
            cfg.kernel.quadrature = v.parse()?;
        }

        let num =
            |s: &str, k: &str, default: f64| -> Result<f64> { get(s, k).map_or(Ok(default), |v| parse_num(s, k, v)) };
        let kind = get("potential", "type")
            .unwrap_or("polynomial")
            .trim()
            .to_ascii_lowercase();
        cfg.potential = match kind.as_str() {
            "polynomial" => Potential::Polynomial,
            "logarithmic" | "log" => {
                Potential::logarithmic(num("potential", "theta", 0.8)?, num("potential", "theta0", 1.0)?)?
            }
            "double_obstacle" | "obstacle" => Potential::double_obstacle(num("potential", "c", 1.0)?)?,
            other => return Err(cfg_err("potential", "type", format!("unknown potential `{other}`"))),
        };

        let s = &mut cfg.solver;
        if let Some(v) = get("solver", "mode") {
            s.mode = v.parse()?;
        }
        s.tau = num("solver", "tau", s.tau)?;
        if let Some(v) = get("solver", "lambda") {
            let l = parse_num("solver", "lambda", v)?;
            s.lambda_reg = l;
            s.lambda_yosida = l;
        }
        s.lambda_reg = num("solver", "lambda_reg", s.lambda_reg)?;
        s.lambda_yosida = num("solver", "lambda_yosida", s.lambda_yosida)?;
        s.dt = num("solver", "dt", s.dt)?;
        s.t_final = num("solver", "t_final", s.t_final)?;
        s.newton_tol = num("solver", "newton_tol", s.newton_tol)?;
        if let Some(v) = get("solver", "newton_max") {
            s.newton_max = parse_num("solver", "newton_max", v)?;
        }

        let fkind = get("forcing", "kind").unwrap_or("zero").trim().to_ascii_lowercase();
        cfg.forcing.amplitude = num("forcing", "amplitude", 1.0)?;
        if let Some(v) = get("forcing", "mode") {
            cfg.forcing.k = parse_wavenumber("forcing", "mode", v)?;
        }
        cfg.forcing.kind = match fkind.as_str() {
            "zero" => {
                cfg.forcing.amplitude = 0.0;
                ForcingKind::Zero
            }
            "constant" => ForcingKind::Constant,
            "time_ramp" | "ramp" => ForcingKind::TimeRamp {
                t_ramp: num("forcing", "t_ramp", cfg.solver.t_final)?,
            },
            other => return Err(cfg_err("forcing", "kind", format!("unknown forcing `{other}`"))),
        };

        if let Some(kind) = get("init", "kind") {
            let mean = num("init", "mean", 0.0)?;
            cfg.init = match kind.trim().to_ascii_lowercase().as_str() {
                "constant" => InitSpec::Constant(num("init", "value", mean)?),
                "cosine" => InitSpec::Cosine {
                    mean,
                    modes: get("init", "modes").map_or(Ok(Vec::new()), parse_modes)?,
                },
                "random" => InitSpec::Random {
                    mean,
                    amplitude: num("init", "amplitude", 0.1)?,
                    seed: get("init", "seed").map_or(Ok(0), |v| parse_num("init", "seed", v))?,
                },
                other => return Err(cfg_err("init", "kind", format!("unknown initial data `{other}`"))),
            };
        } else if ini.section(Some("init")).is_some_and(|p| p.iter().next().is_some()) {
            return Err(cfg_err("init", "kind", "missing"));
        }

        if let Some(v) = get("output", "dir") {
            cfg.output.dir = PathBuf::from(v.trim());
        }
        if let Some(v) = get("output", "snapshots") {
            cfg.output.snapshots = parse_num("output", "snapshots", v)?;
        }
        if let Some(v) = get("output", "write_snapshots") {
            cfg.output.write_snapshots = parse_bool("output", "write_snapshots", v)?;
        }

        let sw = &mut cfg.sweep;
        if let Some(v) = get("sweep", "epsilons") {
            sw.epsilons = parse_list("sweep", "epsilons", v)?;
        }
        if let Some(v) = get("sweep", "lambdas") {
            sw.lambdas = parse_list("sweep", "lambdas", v)?;
        }
        if let Some(v) = get("sweep", "tau_rule") {
            sw.tau_rule = v.parse()?;
        }
        if let Some(v) = get("sweep", "perturbations") {
            sw.perturbations = parse_list("sweep", "perturbations", v)?;
        }
        if let Some(v) = get("sweep", "samples") {
            sw.samples = parse_num("sweep", "samples", v)?;
        }
        if let Some(v) = get("sweep", "seed") {
            sw.seed = parse_num("sweep", "seed", v)?;
        }
        if let Some(v) = get("sweep", "grid_ratio") {
            sw.grid_ratio = Some(parse_num("sweep", "grid_ratio", v)?);
        }
        if let Some(v) = get("sweep", "test_mode") {
            sw.test_mode = parse_wavenumber("sweep", "test_mode", v)?;
        }
        if let Some(v) = get("sweep", "delta") {
            sw.delta = parse_num("sweep", "delta", v)?;
        }

        Ok(cfg)
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dim, self.n)
    }

    /// Checks everything a single run needs before any operator is built.
    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.solver.validate()?;
        if self.solver.mode == Mode::Nonlocal {
            let eps = self.kernel.epsilon;
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::invalid("epsilon", format!("must be > 0, got {eps}")));
            }
            if eps < 2.0 * grid.h() {
                return Err(Error::UnresolvedKernel {
                    epsilon: eps,
                    min: 2.0 * grid.h(),
                });
            }
        }
        let m = match &self.init {
            InitSpec::Constant(c) => *c,
            InitSpec::Cosine { mean, .. } | InitSpec::Random { mean, .. } => *mean,
        };
        self.potential.check_mean(m)?;
        if self.output.snapshots == 0 {
            return Err(Error::invalid("snapshots", "must be >= 1"));
        }
        Ok(())
    }

    pub fn forcing(&self, grid: Grid) -> Result<Forcing> {
        match self.forcing.kind {
            ForcingKind::Zero => Ok(Forcing::zero(grid)),
            kind => Forcing::new(
                grid,
                kind,
                CosineMode {
                    k: self.forcing.k,
                    amplitude: self.forcing.amplitude,
                },
            ),
        }
    }

    /// Step stride giving at least `output.snapshots` stored states.
    pub fn snapshot_stride(&self) -> usize {
        let steps = crate::geometry::TimeGrid::new(self.solver.t_final, self.solver.dt)
            .map(|t| t.steps())
            .unwrap_or(1);
        (steps / self.output.snapshots.max(1)).max(1)
    }

    /// The resolved configuration in the input format.
    pub fn to_ini_string(&self) -> String {
        let mut ini = Ini::new();
        ini.with_section(Some("domain"))
            .set("dim", self.dim.to_string())
            .set("n", self.n.to_string());
        ini.with_section(Some("kernel"))
            .set("family", self.kernel.family.to_string())
            .set("epsilon", self.kernel.epsilon.to_string())
            .set("quadrature", self.kernel.quadrature.to_string());
        {
            let mut p = ini.with_section(Some("potential"));
            p.set("type", self.potential.name());
            match self.potential {
                Potential::Polynomial => {}
                Potential::Logarithmic { theta, theta0 } => {
                    p.set("theta", theta.to_string()).set("theta0", theta0.to_string());
                }
                Potential::DoubleObstacle { c } => {
                    p.set("c", c.to_string());
                }
            }
        }
        let s = &self.solver;
        ini.with_section(Some("solver"))
            .set("mode", s.mode.to_string())
            .set("tau", s.tau.to_string())
            .set("lambda_reg", s.lambda_reg.to_string())
            .set("lambda_yosida", s.lambda_yosida.to_string())
            .set("dt", s.dt.to_string())
            .set("t_final", s.t_final.to_string())
            .set("newton_tol", s.newton_tol.to_string())
            .set("newton_max", s.newton_max.to_string());
        {
            let mut f = ini.with_section(Some("forcing"));
            match self.forcing.kind {
                ForcingKind::Zero => {
                    f.set("kind", "zero");
                }
                ForcingKind::Constant => {
                    f.set("kind", "constant");
                }
                ForcingKind::TimeRamp { t_ramp } => {
                    f.set("kind", "time_ramp").set("t_ramp", t_ramp.to_string());
                }
            }
            if self.forcing.kind != ForcingKind::Zero {
                f.set("amplitude", self.forcing.amplitude.to_string())
                    .set("mode", format_wavenumber(self.forcing.k, self.dim));
            }
        }
        {
            let mut i = ini.with_section(Some("init"));
            match &self.init {
                InitSpec::Constant(c) => {
                    i.set("kind", "constant").set("value", c.to_string());
                }
                InitSpec::Cosine { mean, modes } => {
                    let modes = modes
                        .iter()
                        .map(|m| format!("{}:{}", format_wavenumber(m.k, self.dim), m.amplitude))
                        .collect::<Vec<_>>()
                        .join(", ");
                    i.set("kind", "cosine")
                        .set("mean", mean.to_string())
                        .set("modes", modes);
                }
                InitSpec::Random { mean, amplitude, seed } => {
                    i.set("kind", "random")
                        .set("mean", mean.to_string())
                        .set("amplitude", amplitude.to_string())
                        .set("seed", seed.to_string());
                }
            }
        }
        ini.with_section(Some("output"))
            .set("dir", self.output.dir.display().to_string())
            .set("snapshots", self.output.snapshots.to_string())
            .set("write_snapshots", self.output.write_snapshots.to_string());
        {
            let sw = &self.sweep;
            let mut p = ini.with_section(Some("sweep"));
            p.set("epsilons", join(&sw.epsilons))
                .set("lambdas", join(&sw.lambdas))
                .set("tau_rule", sw.tau_rule.to_string())
                .set("perturbations", join(&sw.perturbations))
                .set("samples", sw.samples.to_string())
                .set("seed", sw.seed.to_string())
                .set("test_mode", format_wavenumber(sw.test_mode, self.dim))
                .set("delta", sw.delta.to_string());
            if let Some(r) = sw.grid_ratio {
                p.set("grid_ratio", r.to_string());
            }
        }
        let mut buf = Vec::new();
        ini.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ini output is utf-8")
    }

    /// Writes `manifest.txt` with the tool version, a command label and the
    /// resolved configuration.
    pub fn write_manifest(&self, dir: &Path, command: &str, extra: &[(String, String)]) -> Result<()> {
        use std::io::Write;
        let path = dir.join("manifest.txt");
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut text = format!("# nlch {}\n# command: {command}\n", crate::VERSION);
        for (k, v) in extra {
            text.push_str(&format!("# {k}: {v}\n"));
        }
        text.push('\n');
        text.push_str(&self.to_ini_string());
        f.write_all(text.as_bytes()).map_err(|e| Error::io(&path, e))
    }
}
