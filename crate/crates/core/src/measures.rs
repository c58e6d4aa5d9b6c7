//! Finite signed measures on the positive half-line.
//!
//! A [`SignedMeasure`] is the sum of finitely many atoms and a piecewise
//! constant density on a bounded maturity grid. All masses are consumed
//! through half-open intervals `(a, b]`, so disjoint partitions add up
//! exactly and the adjoint shift semigroup acts without resampling error
//! as long as shifts are cell-aligned.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used to decide whether a time is a multiple of the cell width.
const ALIGN_TOL: f64 = 1e-9;

/// Uniform grid of half-open maturity cells `((k-1)h, kh]`, `k = 1..=n_cells`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaturityGrid {
    cell_width: f64,
    n_cells: usize,
}

impl MaturityGrid {
    pub fn new(cell_width: f64, n_cells: usize) -> Result<Self> {
        if !(cell_width > 0.0) || !cell_width.is_finite() {
            return Err(Error::invalid(format!(
                "cell_width must be positive and finite, got {cell_width}"
            )));
        }
        if n_cells == 0 {
            return Err(Error::invalid("n_cells must be at least 1"));
        }
        Ok(MaturityGrid { cell_width, n_cells })
    }

    pub fn cell_width(&self) -> f64 {
        self.cell_width
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Right end of the covered window `(0, n_cells * h]`.
    pub fn window(&self) -> f64 {
        self.n_cells as f64 * self.cell_width
    }

    /// Right boundary of cell `k` (0-based): `(k+1) * h`.
    pub fn boundary(&self, cell: usize) -> f64 {
        (cell + 1) as f64 * self.cell_width
    }

    /// All cell boundaries `h, 2h, ..., n_cells * h`.
    pub fn boundaries(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_cells).map(|c| self.boundary(c))
    }

    /// Number of whole cells in `t`, if `t` is a nonnegative multiple of the cell width.
    pub fn cells_in(&self, t: f64) -> Option<usize> {
        if !(t >= 0.0) {
            return None;
        }
        let ratio = t / self.cell_width;
        let rounded = ratio.round();
        if (ratio - rounded).abs() <= ALIGN_TOL * ratio.max(1.0) {
            Some(rounded as usize)
        } else {
            None
        }
    }

    pub fn is_aligned(&self, t: f64) -> bool {
        self.cells_in(t).is_some()
    }

    fn check_same(&self, other: &MaturityGrid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: format!("{}x{}", self.n_cells, self.cell_width),
                right: format!("{}x{}", other.n_cells, other.cell_width),
            })
        }
    }
}

/// Finite signed measure on `(0, window]`: sorted atoms plus a piecewise
/// constant density (one value per grid cell).
///
/// Serializes to `{cell_width, n_cells, atoms: [[loc, w], ...], density: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SignedMeasureRepr", into = "SignedMeasureRepr")]
pub struct SignedMeasure {
    grid: MaturityGrid,
    /// (location, weight), locations strictly increasing in (0, window], weights nonzero.
    atoms: Vec<(f64, f64)>,
    /// Constant density value per cell, length `n_cells`.
    density: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SignedMeasureRepr {
    cell_width: f64,
    n_cells: usize,
    #[serde(default)]
    atoms: Vec<(f64, f64)>,
    #[serde(default)]
    density: Vec<f64>,
}

impl TryFrom<SignedMeasureRepr> for SignedMeasure {
    type Error = Error;

    fn try_from(r: SignedMeasureRepr) -> Result<Self> {
        let grid = MaturityGrid::new(r.cell_width, r.n_cells)?;
        let density = if r.density.is_empty() {
            vec![0.0; r.n_cells]
        } else {
            r.density
        };
        SignedMeasure::new(grid, r.atoms, density)
    }
}

impl From<SignedMeasure> for SignedMeasureRepr {
    fn from(m: SignedMeasure) -> Self {
        SignedMeasureRepr {
            cell_width: m.grid.cell_width,
            n_cells: m.grid.n_cells,
            atoms: m.atoms,
            density: m.density,
        }
    }
}

impl SignedMeasure {
    /// Builds a measure from atoms and per-cell density values.
    ///
    /// Atoms may be given unsorted; coincident locations are summed and zero
    /// weights dropped. Locations must lie in `(0, window]`.
    pub fn new(grid: MaturityGrid, atoms: Vec<(f64, f64)>, density: Vec<f64>) -> Result<Self> {
        if density.len() != grid.n_cells {
            return Err(Error::DimensionMismatch {
                what: "density cells",
                expected: grid.n_cells,
                got: density.len(),
            });
        }
        for &(loc, w) in &atoms {
            if !(loc > 0.0 && loc <= grid.window()) {
                return Err(Error::invalid(format!(
                    "atom location {loc} outside (0, {}]",
                    grid.window()
                )));
            }
            if !w.is_finite() || !loc.is_finite() {
                return Err(Error::invalid("atom with non-finite location or weight"));
            }
        }
        let mut m = SignedMeasure { grid, atoms, density };
        m.normalize_atoms();
        Ok(m)
    }

    /// Internal constructor for values already known to live on `grid`;
    /// normalizes the atom list but skips range validation.
    pub(crate) fn from_parts(grid: MaturityGrid, atoms: Vec<(f64, f64)>, density: Vec<f64>) -> Self {
        debug_assert_eq!(density.len(), grid.n_cells);
        let mut m = SignedMeasure { grid, atoms, density };
        m.normalize_atoms();
        m
    }

    /// The zero measure on `grid`.
    pub fn zero(grid: MaturityGrid) -> Self {
        SignedMeasure {
            grid,
            atoms: Vec::new(),
            density: vec![0.0; grid.n_cells],
        }
    }

    /// Single atom of the given weight.
    pub fn atom(grid: MaturityGrid, location: f64, weight: f64) -> Result<Self> {
        SignedMeasure::new(grid, vec![(location, weight)], vec![0.0; grid.n_cells])
    }

    /// Constant density `value` on the whole window.
    pub fn constant_density(grid: MaturityGrid, value: f64) -> Self {
        SignedMeasure {
            grid,
            atoms: Vec::new(),
            density: vec![value; grid.n_cells],
        }
    }

    fn normalize_atoms(&mut self) {
        if self.atoms.is_empty() {
            return;
        }
        self.atoms
            .sort_by(|a, b| a.0.partial_cmp(&b.0).expect("atom locations are finite"));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(self.atoms.len());
        for &(loc, w) in &self.atoms {
            match merged.last_mut() {
                Some(last) if last.0 == loc => last.1 += w,
                _ => merged.push((loc, w)),
            }
        }
        merged.retain(|&(_, w)| w != 0.0);
        self.atoms = merged;
    }

    pub fn grid(&self) -> &MaturityGrid {
        &self.grid
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty() && self.density.iter().all(|&d| d == 0.0)
    }

    pub fn all_finite(&self) -> bool {
        self.density.iter().all(|d| d.is_finite()) && self.atoms.iter().all(|(_, w)| w.is_finite())
    }

    /// Mass of the continuous part on `(0, x]`, truncated to the window.
    fn density_cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let h = self.grid.cell_width;
        let x = x.min(self.grid.window());
        let full = ((x / h).floor() as usize).min(self.grid.n_cells);
        let mut acc = 0.0;
        for c in 0..full {
            acc += self.density[c] * h;
        }
        let rest = x - full as f64 * h;
        if rest > 0.0 && full < self.grid.n_cells {
            acc += self.density[full] * rest;
        }
        acc
    }

    /// Mass of the half-open interval `(a, b]`; an atom at `a` is excluded,
    /// an atom at `b` included. `b` beyond the window truncates to the window.
    pub fn eval_interval(&self, a: f64, b: f64) -> f64 {
        debug_assert!(a >= 0.0 && b >= a, "require 0 <= a <= b");
        if b <= a {
            return 0.0;
        }
        let atom_part: f64 = self
            .atoms
            .iter()
            .skip_while(|&&(loc, _)| loc <= a)
            .take_while(|&&(loc, _)| loc <= b)
            .map(|&(_, w)| w)
            .sum();
        atom_part + self.density_cdf(b) - self.density_cdf(a)
    }

    /// Distribution-function values `mu(0, x]` at every cell boundary,
    /// atom jumps included. Entry `k` is the mass of `(0, (k+1)h]`.
    pub fn boundary_cdf(&self) -> Vec<f64> {
        let h = self.grid.cell_width;
        let mut out = Vec::with_capacity(self.grid.n_cells);
        let mut acc = 0.0;
        let mut ai = 0;
        for c in 0..self.grid.n_cells {
            let right = self.grid.boundary(c);
            acc += self.density[c] * h;
            while ai < self.atoms.len() && self.atoms[ai].0 <= right {
                acc += self.atoms[ai].1;
                ai += 1;
            }
            out.push(acc);
        }
        out
    }

    /// `alpha * self + beta * other`; both measures must share the grid.
    pub fn linear_combine(&self, alpha: f64, beta: f64, other: &SignedMeasure) -> Result<SignedMeasure> {
        self.grid.check_same(&other.grid)?;
        let density = self
            .density
            .iter()
            .zip(&other.density)
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        let mut atoms = Vec::with_capacity(self.atoms.len() + other.atoms.len());
        atoms.extend(self.atoms.iter().map(|&(l, w)| (l, alpha * w)));
        atoms.extend(other.atoms.iter().map(|&(l, w)| (l, beta * w)));
        let mut out = SignedMeasure {
            grid: self.grid,
            atoms,
            density,
        };
        out.normalize_atoms();
        Ok(out)
    }

    /// `self * alpha`.
    pub fn scale(&self, alpha: f64) -> SignedMeasure {
        if alpha == 0.0 {
            return SignedMeasure::zero(self.grid);
        }
        SignedMeasure {
            grid: self.grid,
            atoms: self.atoms.iter().map(|&(l, w)| (l, alpha * w)).collect(),
            density: self.density.iter().map(|d| alpha * d).collect(),
        }
    }

    /// Adjoint shift semigroup: returns `nu` with `nu(a, b] = self(a+t, b+t]`.
    ///
    /// `t` must be a nonnegative multiple of the cell width so density cells
    /// shift exactly; atoms at locations `<= t` are dropped (mass exits at 0).
    pub fn shift_adjoint(&self, t: f64) -> Result<SignedMeasure> {
        let cells = self.grid.cells_in(t).ok_or(Error::Misaligned {
            what: "shift amount",
            value: t,
            cell_width: self.grid.cell_width,
        })?;
        Ok(self.shift_cells(cells))
    }

    /// Shift by a whole number of cells (internal exact form of `shift_adjoint`).
    pub(crate) fn shift_cells(&self, cells: usize) -> SignedMeasure {
        if cells == 0 {
            return self.clone();
        }
        let n = self.grid.n_cells;
        let t = cells as f64 * self.grid.cell_width;
        let mut density = Vec::with_capacity(n);
        density.extend_from_slice(&self.density[cells.min(n)..]);
        density.resize(n, 0.0);
        let atoms = self
            .atoms
            .iter()
            .filter(|&&(loc, _)| loc > t)
            .map(|&(loc, w)| (loc - t, w))
            .collect();
        SignedMeasure {
            grid: self.grid,
            atoms,
            density,
        }
    }

    /// Total variation of the representation: atom part and continuous part
    /// are mutually singular, so this is the total variation of the measure.
    pub fn total_variation(&self) -> f64 {
        let atom_tv: f64 = self.atoms.iter().map(|&(_, w)| w.abs()).sum();
        let dens_tv: f64 = self.density.iter().map(|d| d.abs() * self.grid.cell_width).sum();
        atom_tv + dens_tv
    }

    /// Midpoint value of the distribution function at `y`:
    /// `(mu(0, y-] + mu(0, y]) / 2`. Away from atoms this is the plain
    /// distribution function.
    pub fn distribution_mid(&self, y: f64) -> f64 {
        let at_y: f64 = self
            .atoms
            .iter()
            .find(|&&(loc, _)| loc == y)
            .map(|&(_, w)| w)
            .unwrap_or(0.0);
        self.eval_interval(0.0, y) - 0.5 * at_y
    }

    /// Product of the measure with its own distribution function,
    /// `nu = mu * int(mu)`, under the midpoint convention at atoms.
    ///
    /// Atom `(x, w)` maps to `(x, w * distribution_mid(x))`. On each cell the
    /// continuous contribution is integrated exactly (the distribution
    /// function is affine between atoms) and stored as the cell average, so
    /// `nu(0, x] = mu(0, x]^2 / 2` holds exactly at every cell boundary, and
    /// at every atom location that is a cell boundary.
    pub fn mul_distribution(&self) -> SignedMeasure {
        let h = self.grid.cell_width;
        let n = self.grid.n_cells;
        let mut atoms = Vec::with_capacity(self.atoms.len());
        let mut density = Vec::with_capacity(n);

        let mut cdf_left = 0.0; // mu(0, left boundary], atoms included
        let mut ai = 0;
        for c in 0..n {
            let left = c as f64 * h;
            let right = self.grid.boundary(c);
            let rho = self.density[c];

            // Integrate int(mu) over the cell, splitting at interior atoms;
            // collect the transformed atoms along the way.
            let mut integral = 0.0;
            let mut seg_start = left;
            let mut cdf = cdf_left;
            while ai < self.atoms.len() && self.atoms[ai].0 <= right {
                let (loc, w) = self.atoms[ai];
                let len = loc - seg_start;
                integral += (cdf + rho * (seg_start - left)) * len + rho * len * len / 2.0;
                cdf += rho * len;
                atoms.push((loc, w * (cdf + 0.5 * w)));
                cdf += w;
                seg_start = loc;
                ai += 1;
            }
            let len = right - seg_start;
            integral += (cdf + rho * (seg_start - left)) * len + rho * len * len / 2.0;
            cdf += rho * len;
            density.push(rho * integral / h);
            cdf_left = cdf;
        }

        let mut out = SignedMeasure {
            grid: self.grid,
            atoms,
            density,
        };
        out.normalize_atoms();
        out
    }

    /// Riesz pairing `int f dmu` against a piecewise constant function with
    /// explicit point values at atom locations.
    pub fn pair_with_function(&self, f: &CellFunction) -> Result<f64> {
        self.grid.check_same(&f.grid)?;
        let mut acc = 0.0;
        for &(loc, w) in &self.atoms {
            let v = f
                .point_value(loc)
                .ok_or(Error::MissingPointValue { location: loc })?;
            acc += v * w;
        }
        let h = self.grid.cell_width;
        for (fv, d) in f.cell_values.iter().zip(&self.density) {
            acc += fv * d * h;
        }
        Ok(acc)
    }
}

/// Bounded piecewise constant test function on a maturity grid: one value per
/// cell plus explicit point values at selected locations.
///
/// Pairing a measure against the function requires a point value at every
/// atom location; cell values alone never stand in for the value at a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFunction {
    grid: MaturityGrid,
    cell_values: Vec<f64>,
    /// (location, value), sorted by location.
    point_values: Vec<(f64, f64)>,
}

impl CellFunction {
    pub fn new(grid: MaturityGrid, cell_values: Vec<f64>, mut point_values: Vec<(f64, f64)>) -> Result<Self> {
        if cell_values.len() != grid.n_cells {
            return Err(Error::DimensionMismatch {
                what: "cell function values",
                expected: grid.n_cells,
                got: cell_values.len(),
            });
        }
        point_values.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite locations"));
        Ok(CellFunction {
            grid,
            cell_values,
            point_values,
        })
    }

    /// Constant function `value` with point values at every cell boundary.
    pub fn constant(grid: MaturityGrid, value: f64) -> Self {
        let cell_values = vec![value; grid.n_cells()];
        let point_values = grid.boundaries().map(|x| (x, value)).collect();
        CellFunction {
            grid,
            cell_values,
            point_values,
        }
    }

    /// Indicator of the cell-aligned interval `(a, b]`, with point values at
    /// every cell boundary.
    pub fn indicator(grid: MaturityGrid, a: f64, b: f64) -> Result<Self> {
        let ca = grid.cells_in(a).ok_or(Error::Misaligned {
            what: "indicator left end",
            value: a,
            cell_width: grid.cell_width(),
        })?;
        let cb = grid.cells_in(b).ok_or(Error::Misaligned {
            what: "indicator right end",
            value: b,
            cell_width: grid.cell_width(),
        })?;
        let mut cell_values = vec![0.0; grid.n_cells()];
        for v in cell_values.iter_mut().take(cb.min(grid.n_cells())).skip(ca) {
            *v = 1.0;
        }
        let point_values = (0..grid.n_cells())
            .map(|c| (grid.boundary(c), cell_values[c]))
            .collect();
        Ok(CellFunction {
            grid,
            cell_values,
            point_values,
        })
    }

    /// Adds point values at all cell boundaries equal to the containing cell's
    /// value (boundary `kh` lies in cell `k-1`). Existing point values win.
    pub fn with_boundary_point_values(mut self) -> Self {
        for c in 0..self.grid.n_cells() {
            let x = self.grid.boundary(c);
            if self.point_value(x).is_none() {
                self.point_values.push((x, self.cell_values[c]));
            }
        }
        self.point_values
            .sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite locations"));
        self
    }

    pub fn grid(&self) -> &MaturityGrid {
        &self.grid
    }

    pub fn cell_values(&self) -> &[f64] {
        &self.cell_values
    }

    /// Explicit point value at `x`, if one was supplied (exact match).
    pub fn point_value(&self, x: f64) -> Option<f64> {
        self.point_values
            .binary_search_by(|probe| probe.0.partial_cmp(&x).expect("finite locations"))
            .ok()
            .map(|i| self.point_values[i].1)
    }

    /// Supremum of |f| over cell and point values.
    pub fn sup_norm(&self) -> f64 {
        self.cell_values
            .iter()
            .map(|v| v.abs())
            .chain(self.point_values.iter().map(|(_, v)| v.abs()))
            .fold(0.0, f64::max)
    }
}
