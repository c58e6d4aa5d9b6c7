//! Mild solutions of measure-valued stochastic evolution equations.
//!
//! The exponential-Euler recursion
//!
//! ```text
//! X[j+1] = S_dt^* ( X[j] + F_j dt + sum_k G_j^(k) dW_j^(k) )
//! ```
//!
//! equals the discretized variation-of-constants formula exactly, by
//! linearity and the semigroup law, so the scheme commits no splitting
//! error beyond the time discretization of the coefficients. The Picard
//! iteration re-applies the same sweep with coefficients frozen on the
//! previous iterate and a fixed noise realization, which makes the
//! contraction ratios of the fixed-point map observable.

use std::borrow::Cow;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::{MaturityGrid, SignedMeasure};
use crate::noise::{BrownianDriver, TimeGrid};

/// Hilbert-Schmidt volatility value: one measure per noise factor.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityValue {
    components: Vec<SignedMeasure>,
}

impl VolatilityValue {
    pub fn new(components: Vec<SignedMeasure>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("volatility needs at least one component"));
        }
        let grid = *components[0].grid();
        if components.iter().any(|c| *c.grid() != grid) {
            return Err(Error::invalid("volatility components on mixed grids"));
        }
        Ok(VolatilityValue { components })
    }

    pub fn zero(grid: MaturityGrid, factors: usize) -> Self {
        VolatilityValue {
            components: vec![SignedMeasure::zero(grid); factors.max(1)],
        }
    }

    pub fn components(&self) -> &[SignedMeasure] {
        &self.components
    }

    pub fn factors(&self) -> usize {
        self.components.len()
    }

    pub fn grid(&self) -> &MaturityGrid {
        self.components[0].grid()
    }

    /// Squared U-norm of the interval evaluation: `sum_k (G^(k)(a, b])^2`.
    pub fn norm_squared_on(&self, a: f64, b: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.eval_interval(a, b).powi(2))
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.components.iter().all(|c| c.all_finite())
    }
}

/// Semigroup acting on the measure between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Semigroup {
    /// Adjoint shift (time-to-maturity rolling), the HJM rates case.
    ShiftAdjoint,
    /// Identity (time-of-maturity parameterization), the energy case.
    Identity,
}

/// Coefficient functions of the evolution equation.
///
/// `history` is one path's values `X[0..=step]` (callers may pass more;
/// implementations must only read up to `step`). Implementations must be
/// pure: same inputs, same outputs.
pub trait CoefficientMap: Sync {
    fn grid(&self) -> &MaturityGrid;

    /// Number of noise factors the volatility produces.
    fn factors(&self) -> usize;

    /// Drift measure `F(X)_step` for the given path.
    fn drift(&self, history: &[SignedMeasure], step: usize, path: usize) -> Cow<'_, SignedMeasure>;

    /// Volatility value `G(X)_step` for the given path.
    fn vol(&self, history: &[SignedMeasure], step: usize, path: usize) -> Cow<'_, VolatilityValue>;

    /// True if drift and volatility never read the path history. Lets
    /// consumers hoist coefficient evaluation out of per-path loops.
    fn is_state_independent(&self) -> bool {
        false
    }

    /// Declared Lipschitz bounds `(L_F, L_G)`; diagnostics only.
    fn declared_lipschitz(&self) -> (f64, f64) {
        (0.0, 0.0)
    }
}

impl<T: CoefficientMap + ?Sized> CoefficientMap for Box<T> {
    fn grid(&self) -> &MaturityGrid {
        (**self).grid()
    }

    fn factors(&self) -> usize {
        (**self).factors()
    }

    fn drift(&self, history: &[SignedMeasure], step: usize, path: usize) -> Cow<'_, SignedMeasure> {
        (**self).drift(history, step, path)
    }

    fn vol(&self, history: &[SignedMeasure], step: usize, path: usize) -> Cow<'_, VolatilityValue> {
        (**self).vol(history, step, path)
    }

    fn is_state_independent(&self) -> bool {
        (**self).is_state_independent()
    }

    fn declared_lipschitz(&self) -> (f64, f64) {
        (**self).declared_lipschitz()
    }
}

/// Time-dependent but state-independent value.
#[derive(Debug, Clone)]
pub enum TimeDep<T> {
    Constant(T),
    PerStep(Vec<T>),
}

impl<T> TimeDep<T> {
    fn at(&self, step: usize) -> &T {
        match self {
            TimeDep::Constant(v) => v,
            TimeDep::PerStep(vs) => &vs[step],
        }
    }
}

/// Deterministic coefficients: `F` and `G` depend on time at most.
#[derive(Debug, Clone)]
pub struct StateIndependentCoefficients {
    grid: MaturityGrid,
    factors: usize,
    drift: TimeDep<SignedMeasure>,
    vol: TimeDep<VolatilityValue>,
}

impl StateIndependentCoefficients {
    pub fn new(drift: TimeDep<SignedMeasure>, vol: TimeDep<VolatilityValue>) -> Result<Self> {
        let grid = *match &drift {
            TimeDep::Constant(m) => m.grid(),
            TimeDep::PerStep(ms) => ms
                .first()
                .ok_or_else(|| Error::invalid("per-step drift must not be empty"))?
                .grid(),
        };
        let factors = match &vol {
            TimeDep::Constant(v) => v.factors(),
            TimeDep::PerStep(vs) => vs
                .first()
                .ok_or_else(|| Error::invalid("per-step volatility must not be empty"))?
                .factors(),
        };
        let drift_ok = match &drift {
            TimeDep::Constant(m) => *m.grid() == grid,
            TimeDep::PerStep(ms) => ms.iter().all(|m| *m.grid() == grid),
        };
        let vol_ok = match &vol {
            TimeDep::Constant(v) => *v.grid() == grid && v.factors() == factors,
            TimeDep::PerStep(vs) => vs.iter().all(|v| *v.grid() == grid && v.factors() == factors),
        };
        if !drift_ok || !vol_ok {
            return Err(Error::invalid(
                "state-independent coefficients on mixed grids or factor counts",
            ));
        }
        Ok(StateIndependentCoefficients {
            grid,
            factors,
            drift,
            vol,
        })
    }

    /// Zero drift and volatility (pure transport).
    pub fn zero(grid: MaturityGrid, factors: usize) -> Self {
        StateIndependentCoefficients {
            grid,
            factors,
            drift: TimeDep::Constant(SignedMeasure::zero(grid)),
            vol: TimeDep::Constant(VolatilityValue::zero(grid, factors)),
        }
    }
}

impl CoefficientMap for StateIndependentCoefficients {
    fn grid(&self) -> &MaturityGrid {
        &self.grid
    }

    fn factors(&self) -> usize {
        self.factors
    }

    fn drift(&self, _history: &[SignedMeasure], step: usize, _path: usize) -> Cow<'_, SignedMeasure> {
        Cow::Borrowed(self.drift.at(step))
    }

    fn vol(&self, _history: &[SignedMeasure], step: usize, _path: usize) -> Cow<'_, VolatilityValue> {
        Cow::Borrowed(self.vol.at(step))
    }

    fn is_state_independent(&self) -> bool {
        true
    }
}

/// Initial condition: one measure for all paths, or one per (local) path.
#[derive(Debug, Clone)]
pub enum InitialState {
    Deterministic(SignedMeasure),
    PerPath(Vec<SignedMeasure>),
}

impl InitialState {
    pub fn get(&self, path: usize) -> &SignedMeasure {
        match self {
            InitialState::Deterministic(m) => m,
            InitialState::PerPath(ms) => &ms[path],
        }
    }

    pub fn grid(&self) -> &MaturityGrid {
        match self {
            InitialState::Deterministic(m) => m.grid(),
            InitialState::PerPath(ms) => ms[0].grid(),
        }
    }
}

/// Discretized cylindrical process: one measure per (step, path).
#[derive(Debug, Clone)]
pub struct MildPath {
    time_grid: TimeGrid,
    /// paths[p][j] is the measure at step j of path p.
    paths: Vec<Vec<SignedMeasure>>,
}

impl MildPath {
    pub fn from_paths(time_grid: TimeGrid, paths: Vec<Vec<SignedMeasure>>) -> Result<Self> {
        if paths.is_empty() || paths.iter().any(|p| p.len() != time_grid.n_steps() + 1) {
            return Err(Error::invalid("every path must have n_steps + 1 entries"));
        }
        Ok(MildPath { time_grid, paths })
    }

    /// Path constant in time at the initial condition (Picard's starting iterate).
    pub fn constant_in_time(time_grid: TimeGrid, x0: &InitialState, n_paths: usize) -> Self {
        let paths = (0..n_paths)
            .map(|p| vec![x0.get(p).clone(); time_grid.n_steps() + 1])
            .collect();
        MildPath { time_grid, paths }
    }

    pub fn time_grid(&self) -> TimeGrid {
        self.time_grid
    }

    pub fn maturity_grid(&self) -> &MaturityGrid {
        self.paths[0][0].grid()
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn n_steps(&self) -> usize {
        self.time_grid.n_steps()
    }

    /// Measure at step `j` of (local) path `p`.
    pub fn at(&self, j: usize, p: usize) -> &SignedMeasure {
        &self.paths[p][j]
    }

    /// Full history of one path, steps `0..=n_steps`.
    pub fn history(&self, p: usize) -> &[SignedMeasure] {
        &self.paths[p]
    }

    /// Keeps every `factor`-th step (a view onto a coarser time grid).
    pub fn subsample(&self, factor: usize) -> Result<MildPath> {
        if factor == 0 || self.n_steps() % factor != 0 {
            return Err(Error::invalid(format!(
                "subsample factor {factor} must divide n_steps {}",
                self.n_steps()
            )));
        }
        let coarse = TimeGrid::new(self.time_grid.dt() * factor as f64, self.n_steps() / factor)?;
        let paths = self
            .paths
            .iter()
            .map(|path| path.iter().step_by(factor).cloned().collect())
            .collect();
        Ok(MildPath {
            time_grid: coarse,
            paths,
        })
    }

    /// First (step, path) holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        for (p, path) in self.paths.iter().enumerate() {
            for (j, m) in path.iter().enumerate() {
                if !m.all_finite() {
                    return Some((j, p));
                }
            }
        }
        None
    }
}

/// One exponential-Euler step: `S^*( x + drift dt + sum_k vol_k dw_k )`.
pub(crate) fn euler_step(
    x: &SignedMeasure,
    drift: &SignedMeasure,
    dt: f64,
    vol: &VolatilityValue,
    dw: &[f64],
    semigroup: Semigroup,
) -> SignedMeasure {
    let grid = *x.grid();
    let n = grid.n_cells();
    let shift = match semigroup {
        Semigroup::ShiftAdjoint => 1usize,
        Semigroup::Identity => 0usize,
    };

    let mut density = Vec::with_capacity(n);
    let xd = x.density();
    let fd = drift.density();
    for c in shift..n {
        let mut v = xd[c] + dt * fd[c];
        for (k, comp) in vol.components().iter().enumerate() {
            v += dw[k] * comp.density()[c];
        }
        density.push(v);
    }
    density.resize(n, 0.0);

    let mut atoms: Vec<(f64, f64)> = Vec::new();
    let t = shift as f64 * grid.cell_width();
    let mut push_atoms = |source: &SignedMeasure, scale: f64| {
        for &(loc, w) in source.atoms() {
            if loc > t {
                atoms.push((loc - t, scale * w));
            }
        }
    };
    push_atoms(x, 1.0);
    push_atoms(drift, dt);
    for (k, comp) in vol.components().iter().enumerate() {
        push_atoms(comp, dw[k]);
    }

    SignedMeasure::from_parts(grid, atoms, density)
}

fn check_alignment(coeffs: &dyn CoefficientMap, driver: &BrownianDriver, x0: &InitialState) -> Result<()> {
    let grid = coeffs.grid();
    if driver.grid().dt() != grid.cell_width() {
        return Err(Error::Misaligned {
            what: "time step (must equal the maturity cell width)",
            value: driver.grid().dt(),
            cell_width: grid.cell_width(),
        });
    }
    if x0.grid() != grid {
        return Err(Error::GridMismatch {
            left: format!("{}x{}", x0.grid().n_cells(), x0.grid().cell_width()),
            right: format!("{}x{}", grid.n_cells(), grid.cell_width()),
        });
    }
    if coeffs.factors() != driver.factors() {
        return Err(Error::DimensionMismatch {
            what: "noise factors",
            expected: coeffs.factors(),
            got: driver.factors(),
        });
    }
    if let InitialState::PerPath(ms) = x0 {
        if ms.len() != driver.n_paths() {
            return Err(Error::DimensionMismatch {
                what: "per-path initial conditions",
                expected: driver.n_paths(),
                got: ms.len(),
            });
        }
    }
    Ok(())
}

/// Solves the evolution equation by the exponential-Euler mild scheme.
///
/// Coefficients are evaluated at the left endpoint of each step on the path
/// built so far, preserving predictability.
pub fn euler_mild_solve(
    x0: &InitialState,
    coeffs: &dyn CoefficientMap,
    driver: &BrownianDriver,
    semigroup: Semigroup,
) -> Result<MildPath> {
    check_alignment(coeffs, driver, x0)?;
    let dt = driver.grid().dt();
    let n_steps = driver.grid().n_steps();
    let paths: Vec<Vec<SignedMeasure>> = (0..driver.n_paths())
        .into_par_iter()
        .map(|p| {
            let gp = driver.global_path(p);
            let mut xs = Vec::with_capacity(n_steps + 1);
            xs.push(x0.get(p).clone());
            for j in 0..n_steps {
                let drift = coeffs.drift(&xs, j, gp);
                let vol = coeffs.vol(&xs, j, gp);
                let next = euler_step(&xs[j], &drift, dt, &vol, driver.dw(p, j), semigroup);
                xs.push(next);
            }
            xs
        })
        .collect();
    Ok(MildPath {
        time_grid: driver.grid(),
        paths,
    })
}

/// Coefficients frozen on a previously computed path (the Picard map `K`).
struct FrozenCoefficients<'a> {
    base: &'a dyn CoefficientMap,
    frozen: &'a MildPath,
    path_offset: usize,
}

impl CoefficientMap for FrozenCoefficients<'_> {
    fn grid(&self) -> &MaturityGrid {
        self.base.grid()
    }

    fn factors(&self) -> usize {
        self.base.factors()
    }

    fn drift(&self, _history: &[SignedMeasure], step: usize, path: usize) -> Cow<'_, SignedMeasure> {
        self.base
            .drift(self.frozen.history(path - self.path_offset), step, path)
    }

    fn vol(&self, _history: &[SignedMeasure], step: usize, path: usize) -> Cow<'_, VolatilityValue> {
        self.base
            .vol(self.frozen.history(path - self.path_offset), step, path)
    }

    fn is_state_independent(&self) -> bool {
        self.base.is_state_independent()
    }
}

/// Result of the Picard fixed-point iteration.
#[derive(Debug, Clone)]
pub struct PicardResult {
    pub path: MildPath,
    /// `distances[k] = d(X^(k+1), X^(k))`.
    pub distances: Vec<f64>,
    /// `ratios[k] = distances[k+1] / distances[k]` (contraction diagnostics).
    pub ratios: Vec<f64>,
    pub converged: bool,
}

/// Iterates `X^(k+1) = K(X^(k))`, where `K` evaluates the coefficients on the
/// previous iterate's full path and re-runs the mild scheme with the same
/// frozen noise. Starts from the constant-in-time initial path.
pub fn picard_iterate(
    x0: &InitialState,
    coeffs: &dyn CoefficientMap,
    driver: &BrownianDriver,
    semigroup: Semigroup,
    k_max: usize,
    tol: f64,
) -> Result<PicardResult> {
    check_alignment(coeffs, driver, x0)?;
    let mut current = MildPath::constant_in_time(driver.grid(), x0, driver.n_paths());
    let mut distances = Vec::new();
    let mut converged = false;
    for _ in 0..k_max {
        let frozen = FrozenCoefficients {
            base: coeffs,
            frozen: &current,
            path_offset: driver.path_offset(),
        };
        let next = euler_mild_solve(x0, &frozen, driver, semigroup)?;
        if let Some((step, path)) = next.first_non_finite() {
            return Err(Error::NonFinite {
                context: "picard iterate",
                step,
                path,
            });
        }
        let d = path_distance(&next, &current)?;
        distances.push(d);
        current = next;
        if d < tol {
            converged = true;
            break;
        }
    }
    let ratios = distances
        .windows(2)
        .map(|w| if w[0] == 0.0 { 0.0 } else { w[1] / w[0] })
        .collect();
    Ok(PicardResult {
        path: current,
        distances,
        ratios,
        converged,
    })
}

/// Distance between two discretized processes: max over cell boundaries `x`
/// and steps `j` of the L2(paths) norm of `X[j](0, x] - Y[j](0, x]`.
pub fn path_distance(x: &MildPath, y: &MildPath) -> Result<f64> {
    if x.n_paths() != y.n_paths() {
        return Err(Error::DimensionMismatch {
            what: "path counts",
            expected: x.n_paths(),
            got: y.n_paths(),
        });
    }
    if x.time_grid != y.time_grid || x.maturity_grid() != y.maturity_grid() {
        return Err(Error::GridMismatch {
            left: format!("{:?}", x.time_grid),
            right: format!("{:?}", y.time_grid),
        });
    }
    let n_cells = x.maturity_grid().n_cells();
    let n_steps = x.n_steps();
    let mut acc = vec![0.0f64; (n_steps + 1) * n_cells];
    for p in 0..x.n_paths() {
        for j in 0..=n_steps {
            let cx = x.at(j, p).boundary_cdf();
            let cy = y.at(j, p).boundary_cdf();
            let row = &mut acc[j * n_cells..(j + 1) * n_cells];
            for c in 0..n_cells {
                let diff = cx[c] - cy[c];
                row[c] += diff * diff;
            }
        }
    }
    let n = x.n_paths() as f64;
    Ok(acc.iter().map(|s| (s / n).sqrt()).fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::MaturityGrid;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn setup(n_cells: usize, n_steps: usize) -> (MaturityGrid, TimeGrid) {
        let h = 0.125;
        (
            MaturityGrid::new(h, n_cells).unwrap(),
            TimeGrid::new(h, n_steps).unwrap(),
        )
    }

    fn random_measure(grid: MaturityGrid, rng: &mut impl Rng) -> SignedMeasure {
        let density = (0..grid.n_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let atoms = if rng.gen_bool(0.5) {
            vec![(
                grid.boundary(rng.gen_range(0..grid.n_cells())),
                rng.gen_range(-1.0..1.0),
            )]
        } else {
            vec![]
        };
        SignedMeasure::new(grid, atoms, density).unwrap()
    }

    /// Brute-force discretized mild formula:
    /// `X[j] = S_{t_j} X0 + sum_{i<j} S_{t_j - t_i} (F_i dt + sum_k G_i dW_i)`.
    fn direct_mild(
        x0: &SignedMeasure,
        coeffs: &dyn CoefficientMap,
        path: &MildPath,
        driver: &BrownianDriver,
        p: usize,
        j: usize,
        semigroup: Semigroup,
    ) -> SignedMeasure {
        let dt = driver.grid().dt();
        let shift = |m: &SignedMeasure, cells: usize| match semigroup {
            Semigroup::ShiftAdjoint => m.shift_adjoint(cells as f64 * dt).unwrap(),
            Semigroup::Identity => m.clone(),
        };
        let mut acc = shift(x0, j);
        for i in 0..j {
            let drift = coeffs.drift(path.history(p), i, driver.global_path(p));
            let vol = coeffs.vol(path.history(p), i, driver.global_path(p));
            let mut inc = drift.scale(dt);
            for (k, comp) in vol.components().iter().enumerate() {
                inc = inc
                    .linear_combine(1.0, driver.dw(p, i)[k], comp)
                    .unwrap();
            }
            acc = acc.linear_combine(1.0, 1.0, &shift(&inc, j - i)).unwrap();
        }
        acc
    }

    #[test]
    fn euler_step_matches_compositional_route() {
        let (grid, _) = setup(10, 4);
        let mut rng = crate::noise::seeded_rng(41, 0);
        for _ in 0..50 {
            let x = random_measure(grid, &mut rng);
            let drift = random_measure(grid, &mut rng);
            let vol = VolatilityValue::new(vec![
                random_measure(grid, &mut rng),
                random_measure(grid, &mut rng),
            ])
            .unwrap();
            let dw = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
            let dt = grid.cell_width();
            for semigroup in [Semigroup::ShiftAdjoint, Semigroup::Identity] {
                let fused = euler_step(&x, &drift, dt, &vol, &dw, semigroup);
                let mut slow = x.linear_combine(1.0, dt, &drift).unwrap();
                slow = slow.linear_combine(1.0, dw[0], &vol.components()[0]).unwrap();
                slow = slow.linear_combine(1.0, dw[1], &vol.components()[1]).unwrap();
                if semigroup == Semigroup::ShiftAdjoint {
                    slow = slow.shift_adjoint(dt).unwrap();
                }
                for c in 0..10 {
                    let x_b = grid.boundary(c);
                    assert_relative_eq!(
                        fused.eval_interval(0.0, x_b),
                        slow.eval_interval(0.0, x_b),
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn pure_transport_is_exact_shift() {
        let (grid, tgrid) = setup(12, 6);
        let mut rng = crate::noise::seeded_rng(42, 0);
        let x0 = random_measure(grid, &mut rng);
        let coeffs = StateIndependentCoefficients::zero(grid, 1);
        let driver = BrownianDriver::sample(tgrid, 1, 3, 8).unwrap();
        let path = euler_mild_solve(
            &InitialState::Deterministic(x0.clone()),
            &coeffs,
            &driver,
            Semigroup::ShiftAdjoint,
        )
        .unwrap();
        for j in 0..=6 {
            let expected = x0.shift_adjoint(tgrid.t(j)).unwrap();
            for p in 0..3 {
                for c in 0..12 {
                    let b = grid.boundary(c);
                    assert_eq!(
                        path.at(j, p).eval_interval(0.0, b),
                        expected.eval_interval(0.0, b),
                        "transport not exact at j={j} x={b}"
                    );
                }
            }
        }
    }

    #[test]
    fn deterministic_drift_unrolls_to_direct_sum() {
        let (grid, tgrid) = setup(12, 5);
        let mut rng = crate::noise::seeded_rng(43, 0);
        let x0 = random_measure(grid, &mut rng);
        let phi = random_measure(grid, &mut rng);
        let coeffs = StateIndependentCoefficients::new(
            TimeDep::Constant(phi.clone()),
            TimeDep::Constant(VolatilityValue::zero(grid, 1)),
        )
        .unwrap();
        let driver = BrownianDriver::zero(tgrid, 1, 1);
        let path = euler_mild_solve(
            &InitialState::Deterministic(x0.clone()),
            &coeffs,
            &driver,
            Semigroup::ShiftAdjoint,
        )
        .unwrap();
        let dt = tgrid.dt();
        for j in 0..=5 {
            let tj = tgrid.t(j);
            for c in 0..12 {
                let x = grid.boundary(c);
                let mut expected = x0.eval_interval(tj, tj + x);
                for i in 0..j {
                    let lag = tj - tgrid.t(i);
                    expected += phi.eval_interval(lag, lag + x) * dt;
                }
                assert_relative_eq!(
                    path.at(j, 0).eval_interval(0.0, x),
                    expected,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn recursion_matches_direct_mild_formula() {
        let (grid, tgrid) = setup(10, 4);
        let mut rng = crate::noise::seeded_rng(44, 0);
        for semigroup in [Semigroup::ShiftAdjoint, Semigroup::Identity] {
            let x0 = random_measure(grid, &mut rng);
            let drifts: Vec<SignedMeasure> =
                (0..4).map(|_| random_measure(grid, &mut rng)).collect();
            let vols: Vec<VolatilityValue> = (0..4)
                .map(|_| {
                    VolatilityValue::new(vec![
                        random_measure(grid, &mut rng),
                        random_measure(grid, &mut rng),
                    ])
                    .unwrap()
                })
                .collect();
            let coeffs = StateIndependentCoefficients::new(
                TimeDep::PerStep(drifts),
                TimeDep::PerStep(vols),
            )
            .unwrap();
            let driver = BrownianDriver::sample(tgrid, 2, 2, 17).unwrap();
            let path = euler_mild_solve(
                &InitialState::Deterministic(x0.clone()),
                &coeffs,
                &driver,
                semigroup,
            )
            .unwrap();
            for p in 0..2 {
                for j in 0..=4 {
                    let direct = direct_mild(&x0, &coeffs, &path, &driver, p, j, semigroup);
                    for c in 0..10 {
                        let b = grid.boundary(c);
                        assert_relative_eq!(
                            path.at(j, p).eval_interval(0.0, b),
                            direct.eval_interval(0.0, b),
                            epsilon = 1e-10
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn solution_scales_linearly() {
        // alpha = 2 scales exactly (exponent arithmetic only).
        let (grid, tgrid) = setup(10, 4);
        let mut rng = crate::noise::seeded_rng(45, 0);
        let x0 = random_measure(grid, &mut rng);
        let drift = random_measure(grid, &mut rng);
        let vol = VolatilityValue::new(vec![random_measure(grid, &mut rng)]).unwrap();
        let driver = BrownianDriver::sample(tgrid, 1, 2, 31).unwrap();
        let base = StateIndependentCoefficients::new(
            TimeDep::Constant(drift.clone()),
            TimeDep::Constant(vol.clone()),
        )
        .unwrap();
        let scaled = StateIndependentCoefficients::new(
            TimeDep::Constant(drift.scale(2.0)),
            TimeDep::Constant(
                VolatilityValue::new(vol.components().iter().map(|c| c.scale(2.0)).collect())
                    .unwrap(),
            ),
        )
        .unwrap();
        let a = euler_mild_solve(
            &InitialState::Deterministic(x0.clone()),
            &base,
            &driver,
            Semigroup::ShiftAdjoint,
        )
        .unwrap();
        let b = euler_mild_solve(
            &InitialState::Deterministic(x0.scale(2.0)),
            &scaled,
            &driver,
            Semigroup::ShiftAdjoint,
        )
        .unwrap();
        for p in 0..2 {
            for j in 0..=4 {
                for c in 0..10 {
                    let x = grid.boundary(c);
                    assert_eq!(
                        2.0 * a.at(j, p).eval_interval(0.0, x),
                        b.at(j, p).eval_interval(0.0, x)
                    );
                }
            }
        }
    }

    #[test]
    fn misaligned_grids_error() {
        let grid = MaturityGrid::new(0.125, 8).unwrap();
        let tgrid = TimeGrid::new(0.1, 4).unwrap();
        let coeffs = StateIndependentCoefficients::zero(grid, 1);
        let driver = BrownianDriver::sample(tgrid, 1, 2, 1).unwrap();
        let x0 = InitialState::Deterministic(SignedMeasure::zero(grid));
        assert!(matches!(
            euler_mild_solve(&x0, &coeffs, &driver, Semigroup::ShiftAdjoint),
            Err(Error::Misaligned { .. })
        ));
    }

    #[test]
    fn path_distance_basics() {
        let (grid, tgrid) = setup(8, 3);
        let mut rng = crate::noise::seeded_rng(46, 0);
        let coeffs = StateIndependentCoefficients::zero(grid, 1);
        let driver = BrownianDriver::sample(tgrid, 1, 4, 3).unwrap();
        let x0 = InitialState::Deterministic(random_measure(grid, &mut rng));
        let x = euler_mild_solve(&x0, &coeffs, &driver, Semigroup::ShiftAdjoint).unwrap();
        assert_eq!(path_distance(&x, &x).unwrap(), 0.0);

        // Constant atom offset: distance is the atom weight.
        let c = -0.75;
        let offset = SignedMeasure::atom(grid, grid.boundary(2), c).unwrap();
        let shifted_paths: Vec<Vec<SignedMeasure>> = (0..4)
            .map(|p| {
                (0..=3)
                    .map(|j| x.at(j, p).linear_combine(1.0, 1.0, &offset).unwrap())
                    .collect()
            })
            .collect();
        let y = MildPath::from_paths(tgrid, shifted_paths).unwrap();
        assert_relative_eq!(path_distance(&x, &y).unwrap(), c.abs(), epsilon = 1e-12);
    }

    #[test]
    fn path_distance_is_a_metric_on_samples() {
        let (grid, tgrid) = setup(6, 2);
        let mut rng = crate::noise::seeded_rng(47, 0);
        let make = |rng: &mut rand_chacha::ChaCha12Rng| {
            let paths = (0..3)
                .map(|_| (0..=2).map(|_| random_measure(grid, rng)).collect())
                .collect();
            MildPath::from_paths(tgrid, paths).unwrap()
        };
        for _ in 0..20 {
            let a = make(&mut rng);
            let b = make(&mut rng);
            let c = make(&mut rng);
            let dab = path_distance(&a, &b).unwrap();
            let dba = path_distance(&b, &a).unwrap();
            assert_relative_eq!(dab, dba, epsilon = 1e-12);
            let dac = path_distance(&a, &c).unwrap();
            let dcb = path_distance(&c, &b).unwrap();
            assert!(dab <= dac + dcb + 1e-12);
        }
    }

    #[test]
    fn picard_state_independent_converges_in_one_application() {
        let (grid, tgrid) = setup(10, 4);
        let mut rng = crate::noise::seeded_rng(48, 0);
        let coeffs = StateIndependentCoefficients::new(
            TimeDep::Constant(random_measure(grid, &mut rng)),
            TimeDep::Constant(VolatilityValue::new(vec![random_measure(grid, &mut rng)]).unwrap()),
        )
        .unwrap();
        let driver = BrownianDriver::sample(tgrid, 1, 3, 5).unwrap();
        let x0 = InitialState::Deterministic(random_measure(grid, &mut rng));
        let result = picard_iterate(&x0, &coeffs, &driver, Semigroup::ShiftAdjoint, 10, 1e-12).unwrap();
        assert!(result.converged);
        // K is constant, so the second application changes nothing at all.
        assert_eq!(result.distances.len(), 2);
        assert_eq!(result.distances[1], 0.0);
        let direct =
            euler_mild_solve(&x0, &coeffs, &driver, Semigroup::ShiftAdjoint).unwrap();
        assert_eq!(path_distance(&result.path, &direct).unwrap(), 0.0);
    }

    #[test]
    fn picard_fixed_point_is_fixed() {
        // Markovian state-dependent coefficients: the Picard fixed point and
        // the explicit Euler recursion satisfy the same equations.
        let (grid, tgrid) = setup(10, 4);
        struct Markov {
            grid: MaturityGrid,
        }
        impl CoefficientMap for Markov {
            fn grid(&self) -> &MaturityGrid {
                &self.grid
            }
            fn factors(&self) -> usize {
                1
            }
            fn drift(&self, history: &[SignedMeasure], step: usize, _p: usize) -> Cow<'_, SignedMeasure> {
                // bounded Lipschitz scalar of the current state
                let y = history[step].eval_interval(0.0, 0.5);
                Cow::Owned(SignedMeasure::constant_density(self.grid, 0.2 * y.tanh()))
            }
            fn vol(&self, history: &[SignedMeasure], step: usize, _p: usize) -> Cow<'_, VolatilityValue> {
                let y = history[step].eval_interval(0.0, 1.0);
                Cow::Owned(
                    VolatilityValue::new(vec![SignedMeasure::constant_density(
                        self.grid,
                        0.1 * (1.0 + y.tanh()),
                    )])
                    .unwrap(),
                )
            }
        }
        let coeffs = Markov { grid };
        let driver = BrownianDriver::sample(tgrid, 1, 4, 23).unwrap();
        let x0 = InitialState::Deterministic(SignedMeasure::constant_density(grid, 0.3));
        let tol = 1e-11;
        let result = picard_iterate(&x0, &coeffs, &driver, Semigroup::ShiftAdjoint, 40, tol).unwrap();
        assert!(result.converged, "distances {:?}", result.distances);
        let euler = euler_mild_solve(&x0, &coeffs, &driver, Semigroup::ShiftAdjoint).unwrap();
        assert!(path_distance(&result.path, &euler).unwrap() < 10.0 * tol);
    }

    #[test]
    fn picard_reports_blow_up_location() {
        let (grid, tgrid) = setup(6, 3);
        struct Exploding {
            grid: MaturityGrid,
        }
        impl CoefficientMap for Exploding {
            fn grid(&self) -> &MaturityGrid {
                &self.grid
            }
            fn factors(&self) -> usize {
                1
            }
            fn drift(&self, _h: &[SignedMeasure], step: usize, _p: usize) -> Cow<'_, SignedMeasure> {
                let v = if step >= 2 { f64::NAN } else { 0.0 };
                Cow::Owned(SignedMeasure::constant_density(self.grid, v))
            }
            fn vol(&self, _h: &[SignedMeasure], _s: usize, _p: usize) -> Cow<'_, VolatilityValue> {
                Cow::Owned(VolatilityValue::zero(self.grid, 1))
            }
        }
        let driver = BrownianDriver::sample(tgrid, 1, 2, 2).unwrap();
        let x0 = InitialState::Deterministic(SignedMeasure::zero(grid));
        let err = picard_iterate(
            &x0,
            &Exploding { grid },
            &driver,
            Semigroup::ShiftAdjoint,
            5,
            1e-10,
        )
        .unwrap_err();
        match err {
            Error::NonFinite { step, .. } => assert!(step >= 2, "blow-up starts at step 2"),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn subsample_restricts_steps() {
        let (grid, tgrid) = setup(8, 4);
        let coeffs = StateIndependentCoefficients::zero(grid, 1);
        let driver = BrownianDriver::sample(tgrid, 1, 2, 3).unwrap();
        let x0 = InitialState::Deterministic(SignedMeasure::constant_density(grid, 1.0));
        let path = euler_mild_solve(&x0, &coeffs, &driver, Semigroup::ShiftAdjoint).unwrap();
        let coarse = path.subsample(2).unwrap();
        assert_eq!(coarse.n_steps(), 2);
        assert_eq!(coarse.at(1, 0), path.at(2, 0));
        assert_eq!(coarse.at(2, 1), path.at(4, 1));
    }
}
