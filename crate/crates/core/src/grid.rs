//! Discretization of the `(e, y)` box and boundary data.
//!
//! Nodes are `e_i = i de` for `i = -N_e..=N_e` and `y_j = j dy` for
//! `j = -N_y..=N_y`, so `e = 0` and `y = 0` are always nodes. A [`Field`]
//! stores one value per node, rows indexed by `e` and contiguous in `y`.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::model::{terminal_payoff, FirmModel, MarketDynamics, ModelError};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Computational box `[-L_e, L_e] x [-L_y, L_y]` and node counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub l_e: f64,
    pub l_y: f64,
    pub n_e: usize,
    pub n_y: usize,
    pub n_t: usize,
}

impl GridSpec {
    pub fn new(l_e: f64, l_y: f64, n_e: usize, n_y: usize, n_t: usize) -> Result<Self, GridError> {
        if !(l_e > 0.0 && l_e.is_finite()) || !(l_y > 0.0 && l_y.is_finite()) {
            return Err(GridError::Invalid(format!(
                "half-widths must be finite and > 0, got L_e = {l_e}, L_y = {l_y}"
            )));
        }
        if n_e < 8 || n_y < 8 {
            return Err(GridError::Invalid(format!(
                "need at least 8 half nodes per axis, got N_e = {n_e}, N_y = {n_y}"
            )));
        }
        if n_t < 1 {
            return Err(GridError::Invalid("need at least one time step".into()));
        }
        Ok(Self {
            l_e,
            l_y,
            n_e,
            n_y,
            n_t,
        })
    }

    /// Same box with every node count doubled.
    pub fn refined(&self) -> Self {
        Self {
            n_e: 2 * self.n_e,
            n_y: 2 * self.n_y,
            n_t: 2 * self.n_t,
            ..*self
        }
    }

    #[inline]
    pub fn de(&self) -> f64 {
        self.l_e / self.n_e as f64
    }

    #[inline]
    pub fn dy(&self) -> f64 {
        self.l_y / self.n_y as f64
    }

    #[inline]
    pub fn dt(&self, horizon: f64) -> f64 {
        horizon / self.n_t as f64
    }

    /// `t^(k) = k dt`.
    pub fn time(&self, k: usize, horizon: f64) -> f64 {
        if k == self.n_t {
            horizon
        } else {
            k as f64 * self.dt(horizon)
        }
    }

    /// Number of `e` nodes, `2 N_e + 1`.
    #[inline]
    pub fn rows(&self) -> usize {
        2 * self.n_e + 1
    }

    /// Number of `y` nodes, `2 N_y + 1`.
    #[inline]
    pub fn cols(&self) -> usize {
        2 * self.n_y + 1
    }

    #[inline]
    pub fn e(&self, i: isize) -> f64 {
        i as f64 * self.de()
    }

    #[inline]
    pub fn y(&self, j: isize) -> f64 {
        j as f64 * self.dy()
    }

    /// Signed index of an on-grid `e`, or `None` off the lattice.
    pub fn e_index(&self, e: f64) -> Option<isize> {
        snap(e, self.de(), self.n_e)
    }

    /// Signed index of an on-grid `y`, or `None` off the lattice.
    pub fn y_index(&self, y: f64) -> Option<isize> {
        snap(y, self.dy(), self.n_y)
    }

    #[inline]
    pub fn row_of(&self, i: isize) -> usize {
        (i + self.n_e as isize) as usize
    }

    #[inline]
    pub fn col_of(&self, j: isize) -> usize {
        (j + self.n_y as isize) as usize
    }

    #[inline]
    pub fn e_of_row(&self, r: usize) -> f64 {
        self.e(r as isize - self.n_e as isize)
    }

    #[inline]
    pub fn y_of_col(&self, c: usize) -> f64 {
        self.y(c as isize - self.n_y as isize)
    }
}

fn snap(x: f64, h: f64, n: usize) -> Option<isize> {
    let k = (x / h).round();
    if k.abs() > n as f64 {
        return None;
    }
    let k = k as isize;
    ((k as f64 * h - x).abs() <= 1e-9 * h.max(x.abs())).then_some(k)
}

/// Values on every grid node at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    time: f64,
    values: Vec<f64>,
}

impl Field {
    pub fn from_fn(grid: GridSpec, time: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.rows() * grid.cols());
        for r in 0..grid.rows() {
            let e = grid.e_of_row(r);
            for c in 0..grid.cols() {
                values.push(f(e, grid.y_of_col(c)));
            }
        }
        Self { grid, time, values }
    }

    pub fn constant(grid: GridSpec, time: f64, value: f64) -> Self {
        Self {
            grid,
            time,
            values: vec![value; grid.rows() * grid.cols()],
        }
    }

    pub(crate) fn from_values(grid: GridSpec, time: f64, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.rows() * grid.cols());
        Self { grid, time, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at signed node indices `(i, j)`.
    #[inline]
    pub fn at(&self, i: isize, j: isize) -> f64 {
        self.get(self.grid.row_of(i), self.grid.col_of(j))
    }

    /// Value at storage row `r` (e) and column `c` (y).
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.grid.cols() + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.grid.cols();
        &self.values[r * n..(r + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Bilinear interpolation at `(e, y)`.
    ///
    /// `y` is clamped to the box; `e` outside the box is extrapolated linearly
    /// from the outermost cell.
    #[inline]
    pub fn interpolate(&self, e: f64, y: f64) -> f64 {
        let g = &self.grid;
        let fe = (e + g.l_e) / g.de();
        let r0 = (fe.floor().max(0.0) as usize).min(g.rows() - 2);
        let we = fe - r0 as f64;
        let yc = y.clamp(-g.l_y, g.l_y);
        let fy = (yc + g.l_y) / g.dy();
        let c0 = (fy.floor().max(0.0) as usize).min(g.cols() - 2);
        let wy = fy - c0 as f64;
        let n = g.cols();
        let base = r0 * n + c0;
        let v00 = self.values[base];
        let v01 = self.values[base + 1];
        let v10 = self.values[base + n];
        let v11 = self.values[base + n + 1];
        let lo = v00 + wy * (v01 - v00);
        let hi = v10 + wy * (v11 - v10);
        lo + we * (hi - lo)
    }

    /// Bilinear interpolation with both coordinates clamped to the box.
    #[inline]
    pub fn interpolate_clamped(&self, e: f64, y: f64) -> f64 {
        self.interpolate(e.clamp(-self.grid.l_e, self.grid.l_e), y)
    }

    /// Writes `e,y,value` rows, `e` outer and `y` inner, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "e,y,value")?;
        for r in 0..self.grid.rows() {
            let e = self.grid.e_of_row(r);
            for c in 0..self.grid.cols() {
                writeln!(
                    out,
                    "{:.16e},{:.16e},{:.16e}",
                    e,
                    self.grid.y_of_col(c),
                    self.get(r, c)
                )?;
            }
        }
        Ok(())
    }

    /// Parses the output of [`Field::write_csv`] back onto `grid`.
    pub fn read_csv<R: BufRead>(input: R, grid: GridSpec, time: f64) -> Result<Self, GridError> {
        let mut lines = input.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "e,y,value" => {}
            Some(Ok(h)) => {
                return Err(GridError::Csv {
                    line: 1,
                    message: format!("unexpected header `{h}`"),
                })
            }
            Some(Err(e)) => return Err(e.into()),
            None => {
                return Err(GridError::Csv {
                    line: 1,
                    message: "empty input".into(),
                })
            }
        }
        let expected = grid.rows() * grid.cols();
        let mut values = Vec::with_capacity(expected);
        for (k, line) in lines.enumerate() {
            let line = line?;
            let lineno = k + 2;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|err| GridError::Csv {
                    line: lineno,
                    message: format!("bad number `{s}`: {err}"),
                })
            };
            if parts.len() != 3 {
                return Err(GridError::Csv {
                    line: lineno,
                    message: format!("expected 3 columns, found {}", parts.len()),
                });
            }
            let (e, y, v) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
            let n = values.len();
            if n >= expected {
                return Err(GridError::Csv {
                    line: lineno,
                    message: "more rows than grid nodes".into(),
                });
            }
            let (r, c) = (n / grid.cols(), n % grid.cols());
            let (ge, gy) = (grid.e_of_row(r), grid.y_of_col(c));
            if (e - ge).abs() > 1e-12 * (1.0 + ge.abs()) || (y - gy).abs() > 1e-12 * (1.0 + gy.abs())
            {
                return Err(GridError::Csv {
                    line: lineno,
                    message: format!("node ({e}, {y}) does not match grid node ({ge}, {gy})"),
                });
            }
            values.push(v);
        }
        if values.len() != expected {
            return Err(GridError::Csv {
                line: values.len() + 1,
                message: format!("expected {expected} rows, found {}", values.len()),
            });
        }
        Ok(Self { grid, time, values })
    }
}

/// Discrete terminal data `-alpha 1{y_j >= 0} e_i` at `t = T`.
pub fn build_terminal_field(grid: GridSpec, market: &MarketDynamics) -> Field {
    let alpha = market.alpha();
    Field::from_fn(grid, market.horizon(), |e, y| terminal_payoff(alpha, y, e))
}

const BOUNDARY_PANELS: usize = 32;

/// `int_t^T sup_q [reward(s, q) - penalty eta(s, q)] ds`.
fn deterministic_value(
    t: f64,
    market: &MarketDynamics,
    firm: &FirmModel,
    penalty: f64,
) -> Result<f64, ModelError> {
    let horizon = market.horizon();
    let span = horizon - t;
    if span <= 0.0 {
        return Ok(0.0);
    }
    if firm.technology().linear_quadratic().is_some() {
        return Ok(firm.best_rate_under_penalty(t, penalty)? * span);
    }
    // Composite Simpson; exact for time-homogeneous technologies.
    let h = span / BOUNDARY_PANELS as f64;
    let mut acc = 0.0;
    for k in 0..=BOUNDARY_PANELS {
        let w = if k == 0 || k == BOUNDARY_PANELS {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * firm.best_rate_under_penalty(t + k as f64 * h, penalty)?;
    }
    Ok(acc * h / 3.0)
}

/// Value on the wall `y = L_y`, where the allowance surely pays `alpha`:
/// `-alpha e + int_t^T sup_q [reward - alpha eta] ds`.
///
/// For the quadratic firm this is `-alpha e + (1 - alpha)^2 (T - t) / (4 rho)`.
pub fn upper_y_boundary(
    t: f64,
    e: f64,
    market: &MarketDynamics,
    firm: &FirmModel,
) -> Result<f64, ModelError> {
    Ok(-market.alpha() * e + deterministic_value(t, market, firm, market.alpha())?)
}

/// Value on the wall `y = -L_y`, where the allowance surely expires
/// worthless: `int_t^T sup_q reward ds`, i.e. `(T - t) / (4 rho)` for the
/// quadratic firm.
pub fn lower_y_boundary(t: f64, market: &MarketDynamics, firm: &FirmModel) -> Result<f64, ModelError> {
    deterministic_value(t, market, firm, 0.0)
}

/// Both wall values at one time level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallValues {
    pub alpha: f64,
    pub upper_offset: f64,
    pub lower: f64,
}

impl WallValues {
    pub fn at(t: f64, market: &MarketDynamics, firm: &FirmModel) -> Result<Self, ModelError> {
        Ok(Self {
            alpha: market.alpha(),
            upper_offset: upper_y_boundary(t, 0.0, market, firm)?,
            lower: lower_y_boundary(t, market, firm)?,
        })
    }

    /// Terminal walls: exactly the terminal payoff at `y = +-L_y`.
    pub fn terminal(alpha: f64) -> Self {
        Self {
            alpha,
            upper_offset: 0.0,
            lower: 0.0,
        }
    }

    #[inline]
    pub fn upper(&self, e: f64) -> f64 {
        -self.alpha * e + self.upper_offset
    }
}

/// Forward difference `(V(e_{i+1}, y_j) - V(e_i, y_j)) / de`; backward at the
/// top row `i = N_e`.
#[inline]
pub fn e_forward_difference(field: &Field, i: isize, j: isize) -> f64 {
    let g = field.grid();
    let r = g.row_of(i);
    let c = g.col_of(j);
    e_difference_at(field, r, c)
}

#[inline]
pub(crate) fn e_difference_at(field: &Field, r: usize, c: usize) -> f64 {
    let g = field.grid();
    let r0 = r.min(g.rows() - 2);
    (field.get(r0 + 1, c) - field.get(r0, c)) / g.de()
}

/// Central difference in `y`; one-sided on the walls.
#[inline]
pub fn y_central_difference(field: &Field, i: isize, j: isize) -> f64 {
    let g = field.grid();
    y_difference_at(field, g.row_of(i), g.col_of(j))
}

#[inline]
pub(crate) fn y_difference_at(field: &Field, r: usize, c: usize) -> f64 {
    let g = field.grid();
    let last = g.cols() - 1;
    let dy = g.dy();
    if c == 0 {
        (field.get(r, 1) - field.get(r, 0)) / dy
    } else if c == last {
        (field.get(r, last) - field.get(r, last - 1)) / dy
    } else {
        (field.get(r, c + 1) - field.get(r, c - 1)) / (2.0 * dy)
    }
}

/// Second difference in `y` at an interior column.
#[inline]
pub(crate) fn y_second_difference_at(field: &Field, r: usize, c: usize) -> f64 {
    let dy = field.grid().dy();
    (field.get(r, c + 1) - 2.0 * field.get(r, c) + field.get(r, c - 1)) / (dy * dy)
}
