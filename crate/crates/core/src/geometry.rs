//! Uniform cell-centered grids on the unit box `(0,1)^d`, grid functions and
//! the discrete `L²` pairing.
//!
//! Cells are indexed with the first coordinate running fastest, so in 2D the
//! cell `(ix, iy)` has flat index `ix + n * iy`. Every reduction in this module
//! sums left to right in flat index order; results are reproducible bit for bit.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Uniform grid with `n` cells per dimension on `(0,1)^dim`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    dim: usize,
    n: usize,
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        if n < 4 {
            return Err(Error::GridTooCoarse(n));
        }
        Ok(Self { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Cell width `1/n`.
    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Volume of one cell, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Integer coordinates of a flat cell index.
    pub fn cell(&self, index: usize) -> [usize; 2] {
        match self.dim {
            1 => [index, 0],
            _ => [index % self.n, index / self.n],
        }
    }

    /// Coordinates of the center of cell `index`; unused trailing entries are 0.
    pub fn center(&self, index: usize) -> [f64; 2] {
        let [ix, iy] = self.cell(index);
        let c = |i: usize| (i as f64 + 0.5) / self.n as f64;
        match self.dim {
            1 => [c(ix), 0.0],
            _ => [c(ix), c(iy)],
        }
    }

    pub fn centers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        (0..self.len()).map(move |i| self.center(i))
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}D grid n={}", self.dim, self.n)
    }
}

/// Real-valued grid function, one value per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Samples `f` at the cell centers.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = grid.centers().map(f).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Builds a field on the same grid; callers guarantee length and finiteness.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.grid.len());
        Self {
            grid: self.grid,
            values,
        }
    }

    pub(crate) fn ensure_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }

    /// `a·self + b·other`.
    pub fn lin_comb(&self, a: f64, other: &Field, b: f64) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(self.with_values(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &Field) -> Result<Self> {
        self.lin_comb(1.0, other, -1.0)
    }

    pub fn add(&self, other: &Field) -> Result<Self> {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn shift(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `‖self‖_H`.
    pub fn norm_h(&self) -> f64 {
        (sum_sq(&self.values) * self.grid.cell_volume()).sqrt()
    }

    /// Writes the field as CSV rows `index,x[,y],value` with 17 significant digits.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        let header = if self.grid.dim == 1 {
            "index,x,value"
        } else {
            "index,x,y,value"
        };
        let io = |e| Error::io(path, e);
        writeln!(w, "{header}").map_err(io)?;
        for (i, v) in self.values.iter().enumerate() {
            let [x, y] = self.grid.center(i);
            if self.grid.dim == 1 {
                writeln!(w, "{i},{},{}", fmt17(x), fmt17(*v)).map_err(io)?;
            } else {
                writeln!(w, "{i},{},{},{}", fmt17(x), fmt17(y), fmt17(*v)).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }
}

/// Formats with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x * x)
}

/// Discrete `L²(Ω)` pairing `h^d Σ a_i b_i`.
pub fn inner_h(a: &Field, b: &Field) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    let s = a.values.iter().zip(&b.values).fold(0.0, |acc, (x, y)| acc + x * y);
    Ok(s * a.grid.cell_volume())
}

/// Mean value on Ω (`|Ω| = 1`).
pub fn mean(a: &Field) -> f64 {
    a.values.iter().fold(0.0, |acc, x| acc + x) * a.grid.cell_volume()
}

/// Uniform time grid; the final step may overshoot `t_final` by less than `dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t_final: f64,
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, dt: f64) -> Result<Self> {
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::invalid("t_final", format!("must be > 0, got {t_final}")));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be > 0, got {dt}")));
        }
        let ratio = t_final / dt;
        // T/dt = 50.000000000000007 should mean 50 steps, not 51.
        let nearest = ratio.round();
        let steps = if (ratio - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest as usize
        } else {
            ratio.ceil() as usize
        };
        Ok(Self {
            t_final,
            dt,
            steps: steps.max(1),
        })
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}

/// Range of admissible order-parameter values, set by the potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Admissible {
    All,
    /// Open interval `(lo, hi)`.
    Open(f64, f64),
    /// Closed interval `[lo, hi]`.
    Closed(f64, f64),
}

impl Admissible {
    pub fn contains(&self, v: f64) -> bool {
        match *self {
            Admissible::All => v.is_finite(),
            Admissible::Open(lo, hi) => v > lo && v < hi,
            Admissible::Closed(lo, hi) => v >= lo && v <= hi,
        }
    }
}

/// One cosine mode `amplitude · cos(kx π x) · cos(ky π y)`; `ky` is ignored in 1D.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineMode {
    pub k: [u32; 2],
    pub amplitude: f64,
}

impl CosineMode {
    pub fn eval(&self, x: [f64; 2], dim: usize) -> f64 {
        let pi = std::f64::consts::PI;
        let mut v = self.amplitude * (self.k[0] as f64 * pi * x[0]).cos();
        if dim == 2 {
            v *= (self.k[1] as f64 * pi * x[1]).cos();
        }
        v
    }
}

/// Initial-data constructors.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Constant(f64),
    Cosine {
        mean: f64,
        modes: Vec<CosineMode>,
    },
    /// Uniform samples in `[mean − amplitude, mean + amplitude]`, shifted afterwards
    /// so the discrete mean is exactly `mean` up to rounding.
    Random {
        mean: f64,
        amplitude: f64,
        seed: u64,
    },
}

/// Builds an initial field and checks it against the admissible value range.
pub fn make_field(grid: Grid, init: &InitSpec, admissible: Admissible) -> Result<Field> {
    let field = match init {
        InitSpec::Constant(c) => Field::constant(grid, *c),
        InitSpec::Cosine { mean, modes } => {
            Field::from_fn(grid, |x| modes.iter().fold(*mean, |acc, m| acc + m.eval(x, grid.dim())))?
        }
        InitSpec::Random {
            mean: m,
            amplitude,
            seed,
        } => {
            if !(*amplitude >= 0.0 && amplitude.is_finite()) {
                return Err(Error::invalid("amplitude", format!("{amplitude}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let raw: Vec<f64> = (0..grid.len())
                .map(|_| m + amplitude * (2.0 * rng.random::<f64>() - 1.0))
                .collect();
            let raw = Field::new(grid, raw)?;
            let shift = m - mean(&raw);
            raw.shift(shift)
        }
    };
    field.ensure_finite()?;
    if let Some(&bad) = field.values.iter().find(|v| !admissible.contains(**v)) {
        return Err(Error::OutsideDomain {
            potential: "configured",
            value: bad,
        });
    }
    Ok(field)
}
