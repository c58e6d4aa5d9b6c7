//! The HJM layer: no-arbitrage coefficient construction, bond and
//! energy-futures pricing, roll-over bank accounts, and Monte Carlo
//! martingale testing.
//!
//! The central identity is exact by construction: with the drift built as
//! `F = sum_k (G_k * int G_k)` under the midpoint convention, the cumulative
//! drift condition `F(0, x] = |G(0, x]|^2 / 2` holds to rounding precision at
//! every cell boundary and grid-aligned atom location. Under that condition
//! the discrete scheme's discounted bond prices are exact martingales, so the
//! Monte Carlo gap in `martingale_test` is pure sampling error.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::evolution::{
    euler_mild_solve, CoefficientMap, InitialState, MildPath, Semigroup, VolatilityValue,
};
use crate::measures::{CellFunction, MaturityGrid, SignedMeasure};
use crate::noise::{BrownianDriver, TimeGrid};

/// Absolute slack in martingale pass checks; covers the degenerate case of a
/// deterministic (zero-variance) discounted price.
const MARTINGALE_ABS_SLACK: f64 = 1e-12;

/// Bounded Lipschitz scalar loading applied to the state vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Loading {
    /// State-independent coefficient value.
    Constant(f64),
    /// Saturating clamp of an affine map: `bound * tanh((w . y + intercept) / bound)`.
    /// Bounded by `bound`, Lipschitz with constant `|w|`.
    Clamped {
        bound: f64,
        weights: Vec<f64>,
        intercept: f64,
    },
}

impl Loading {
    pub fn eval(&self, state: &[f64]) -> f64 {
        match self {
            Loading::Constant(c) => *c,
            Loading::Clamped {
                bound,
                weights,
                intercept,
            } => {
                let z: f64 = intercept + weights.iter().zip(state).map(|(w, y)| w * y).sum::<f64>();
                bound * (z / bound).tanh()
            }
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            Loading::Constant(c) => c.abs(),
            Loading::Clamped { bound, .. } => *bound,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Loading::Constant(_) => 0.0,
            Loading::Clamped { weights, .. } => weights.iter().map(|w| w * w).sum::<f64>().sqrt(),
        }
    }

    fn is_constant(&self) -> bool {
        matches!(self, Loading::Constant(_))
    }
}

/// One basis measure with its loading function.
#[derive(Debug, Clone)]
pub struct BasisLoading {
    pub measure: SignedMeasure,
    pub loading: Loading,
}

/// Specification of the example coefficient family: volatility is a
/// loading-weighted combination of base measures, the state is read through
/// bounded test functions.
#[derive(Debug, Clone)]
pub struct ExampleCoefficientSpec {
    /// Test functions e_1..e_n defining the state vector `X_t(e)`.
    pub state_functions: Vec<CellFunction>,
    /// Per noise factor, the basis measures and loadings of one volatility
    /// component.
    pub vol: Vec<Vec<BasisLoading>>,
}

/// Coefficients of the example family.
///
/// Volatility: `G_k(X)_t = sum_i loading_{k,i}(X_t(e)) * beta_{k,i}`.
/// Drift (rates component): `F = sum_k (G_k * int G_k)`, the finite-rank
/// trace formula, which satisfies the drift condition exactly under the
/// midpoint convention. The energy component carries zero drift.
#[derive(Debug, Clone)]
pub struct ExampleCoefficients {
    grid: MaturityGrid,
    state_functions: Vec<CellFunction>,
    factors: Vec<Vec<BasisLoading>>,
    trace_drift: bool,
    needs_state: bool,
    zero: SignedMeasure,
}

/// Builds the rates coefficients (trace-formula drift) from a spec.
pub fn build_example_coefficients(spec: ExampleCoefficientSpec) -> Result<ExampleCoefficients> {
    ExampleCoefficients::new(spec, true)
}

/// Builds energy coefficients: same volatility family, drift pinned to zero.
pub fn build_energy_coefficients(spec: ExampleCoefficientSpec) -> Result<ExampleCoefficients> {
    ExampleCoefficients::new(spec, false)
}

impl ExampleCoefficients {
    fn new(spec: ExampleCoefficientSpec, trace_drift: bool) -> Result<Self> {
        if spec.vol.is_empty() {
            return Err(Error::invalid("coefficient spec needs at least one factor"));
        }
        let grid = *spec
            .vol
            .iter()
            .flatten()
            .map(|b| b.measure.grid())
            .chain(spec.state_functions.iter().map(|f| f.grid()))
            .next()
            .ok_or_else(|| {
                Error::invalid("coefficient spec needs at least one basis measure or state function")
            })?;
        for f in &spec.state_functions {
            if *f.grid() != grid {
                return Err(Error::invalid("state function on a different grid"));
            }
            for b in f.grid().boundaries() {
                if f.point_value(b).is_none() {
                    return Err(Error::invalid(format!(
                        "state function lacks a point value at cell boundary {b}; \
                         atoms transported along the grid would not be pairable"
                    )));
                }
            }
        }
        let n = spec.state_functions.len();
        for basis in &spec.vol {
            for bl in basis {
                if *bl.measure.grid() != grid {
                    return Err(Error::invalid("basis measure on a different grid"));
                }
                if let Loading::Clamped { bound, weights, .. } = &bl.loading {
                    if !(*bound > 0.0) {
                        return Err(Error::invalid("clamped loading needs a positive bound"));
                    }
                    if weights.len() != n {
                        return Err(Error::DimensionMismatch {
                            what: "loading weights",
                            expected: n,
                            got: weights.len(),
                        });
                    }
                }
            }
        }
        let needs_state = spec.vol.iter().flatten().any(|b| !b.loading.is_constant());
        if needs_state && n == 0 {
            return Err(Error::invalid(
                "state-dependent loadings need at least one state function",
            ));
        }
        Ok(ExampleCoefficients {
            grid,
            state_functions: spec.state_functions,
            factors: spec.vol,
            trace_drift,
            needs_state,
            zero: SignedMeasure::zero(grid),
        })
    }

    fn state(&self, history: &[SignedMeasure], step: usize) -> Vec<f64> {
        if !self.needs_state {
            return Vec::new();
        }
        self.state_functions
            .iter()
            .map(|e| {
                history[step].pair_with_function(e).expect(
                    "state function must carry point values at every atom location; \
                     scenario validation keeps atoms grid-aligned",
                )
            })
            .collect()
    }

    fn vol_value(&self, history: &[SignedMeasure], step: usize) -> VolatilityValue {
        let y = self.state(history, step);
        let components = self
            .factors
            .iter()
            .map(|basis| {
                let mut acc = SignedMeasure::zero(self.grid);
                for bl in basis {
                    let lambda = bl.loading.eval(&y);
                    acc = acc
                        .linear_combine(1.0, lambda, &bl.measure)
                        .expect("grids validated at build time");
                }
                acc
            })
            .collect();
        VolatilityValue::new(components).expect("at least one factor")
    }
}

impl CoefficientMap for ExampleCoefficients {
    fn grid(&self) -> &MaturityGrid {
        &self.grid
    }

    fn factors(&self) -> usize {
        self.factors.len()
    }

    fn drift(&self, history: &[SignedMeasure], step: usize, _path: usize) -> Cow<'_, SignedMeasure> {
        if !self.trace_drift {
            return Cow::Borrowed(&self.zero);
        }
        let vol = self.vol_value(history, step);
        let mut acc = SignedMeasure::zero(self.grid);
        for comp in vol.components() {
            acc = acc
                .linear_combine(1.0, 1.0, &comp.mul_distribution())
                .expect("same grid");
        }
        Cow::Owned(acc)
    }

    fn vol(&self, history: &[SignedMeasure], step: usize, _path: usize) -> Cow<'_, VolatilityValue> {
        Cow::Owned(self.vol_value(history, step))
    }

    fn is_state_independent(&self) -> bool {
        !self.needs_state
    }

    fn declared_lipschitz(&self) -> (f64, f64) {
        let e_norm: f64 = self
            .state_functions
            .iter()
            .map(|f| f.sup_norm().powi(2))
            .sum::<f64>()
            .sqrt();
        let l_g: f64 = self
            .factors
            .iter()
            .flatten()
            .map(|b| (b.loading.lipschitz() * b.measure.total_variation()).powi(2))
            .sum::<f64>()
            .sqrt()
            * e_norm;
        // The drift is quadratic in the (bounded) volatility.
        let vol_tv_bound: f64 = self
            .factors
            .iter()
            .flatten()
            .map(|b| b.loading.bound() * b.measure.total_variation())
            .sum();
        (2.0 * l_g * vol_tv_bound, l_g)
    }
}

/// Wraps coefficients with an additive drift perturbation (negative-control
/// scenarios that violate the drift condition by a known amount).
pub struct DriftPerturbed<C> {
    inner: C,
    extra: SignedMeasure,
}

impl<C: CoefficientMap> DriftPerturbed<C> {
    pub fn new(inner: C, extra: SignedMeasure) -> Result<Self> {
        if inner.grid() != extra.grid() {
            return Err(Error::GridMismatch {
                left: format!("{}", inner.grid().n_cells()),
                right: format!("{}", extra.grid().n_cells()),
            });
        }
        Ok(DriftPerturbed { inner, extra })
    }
}

impl<C: CoefficientMap> CoefficientMap for DriftPerturbed<C> {
    fn grid(&self) -> &MaturityGrid {
        self.inner.grid()
    }

    fn factors(&self) -> usize {
        self.inner.factors()
    }

    fn drift(&self, history: &[SignedMeasure], step: usize, path: usize) -> Cow<'_, SignedMeasure> {
        let base = self.inner.drift(history, step, path);
        Cow::Owned(
            base.linear_combine(1.0, 1.0, &self.extra)
                .expect("grids checked at construction"),
        )
    }

    fn vol(&self, history: &[SignedMeasure], step: usize, path: usize) -> Cow<'_, VolatilityValue> {
        self.inner.vol(history, step, path)
    }

    fn is_state_independent(&self) -> bool {
        self.inner.is_state_independent()
    }

    fn declared_lipschitz(&self) -> (f64, f64) {
        self.inner.declared_lipschitz()
    }
}

/// Worst violation of the cumulative drift condition
/// `|F_j(0, x] - |G_j(0, x]|^2 / 2|` over all steps, paths, cell boundaries,
/// and atom locations of the coefficient measures.
///
/// `path_offset` is the global index of the first path in `x` (coefficients
/// see global path indices).
pub fn drift_condition_gap(coeffs: &dyn CoefficientMap, x: &MildPath, path_offset: usize) -> f64 {
    let grid = x.maturity_grid();
    let n_cells = grid.n_cells();
    let mut worst = 0.0f64;
    for p in 0..x.n_paths() {
        let history = x.history(p);
        for j in 0..x.n_steps() {
            let drift = coeffs.drift(history, j, path_offset + p);
            let vol = coeffs.vol(history, j, path_offset + p);
            let f_cdf = drift.boundary_cdf();
            let g_cdfs: Vec<Vec<f64>> = vol.components().iter().map(|c| c.boundary_cdf()).collect();
            for c in 0..n_cells {
                let g2: f64 = g_cdfs.iter().map(|cdf| cdf[c] * cdf[c]).sum();
                worst = worst.max((f_cdf[c] - 0.5 * g2).abs());
            }
            let mut atom_locs: Vec<f64> = drift.atoms().iter().map(|&(l, _)| l).collect();
            for comp in vol.components() {
                atom_locs.extend(comp.atoms().iter().map(|&(l, _)| l));
            }
            for loc in atom_locs {
                let f_val = drift.eval_interval(0.0, loc);
                let g2: f64 = vol
                    .components()
                    .iter()
                    .map(|c| c.eval_interval(0.0, loc).powi(2))
                    .sum();
                worst = worst.max((f_val - 0.5 * g2).abs());
            }
        }
    }
    worst
}

/// Zero-coupon bond prices `P(t_j, T) = exp(-X[j](0, T - t_j])` per path.
pub fn bond_price(x: &MildPath, j: usize, maturity: f64) -> Result<Vec<f64>> {
    let t_j = x.time_grid().t(j);
    if maturity < t_j - 1e-12 {
        return Err(Error::invalid(format!(
            "bond maturity {maturity} lies before evaluation time {t_j}"
        )));
    }
    if maturity > x.maturity_grid().window() + 1e-12 {
        return Err(Error::invalid(format!(
            "bond maturity {maturity} beyond the measure window {}",
            x.maturity_grid().window()
        )));
    }
    let tau = (maturity - t_j).max(0.0);
    Ok((0..x.n_paths())
        .map(|p| (-x.at(j, p).eval_interval(0.0, tau)).exp())
        .collect())
}

/// Energy futures prices `X~[j](T1, T2]` per path (advance settlement).
pub fn energy_future(x: &MildPath, j: usize, t1: f64, t2: f64) -> Result<Vec<f64>> {
    if !(0.0 <= t1 && t1 <= t2) {
        return Err(Error::invalid(format!(
            "delivery bucket ({t1}, {t2}] is not ordered"
        )));
    }
    Ok((0..x.n_paths())
        .map(|p| x.at(j, p).eval_interval(t1, t2))
        .collect())
}

/// Realized per-step coefficient interval masses `F_i(0, t_j - t_i]` and
/// `G_i^k(0, t_j - t_i]` for one path.
fn coefficient_masses(
    coeffs: &dyn CoefficientMap,
    x: &MildPath,
    driver: &BrownianDriver,
    p: usize,
    j: usize,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let dt = x.time_grid().dt();
    let history = x.history(p);
    let gp = driver.global_path(p);
    let mut f = Vec::with_capacity(j);
    let mut g = Vec::with_capacity(j);
    for i in 0..j {
        let tau = (j - i) as f64 * dt;
        let drift = coeffs.drift(history, i, gp);
        let vol = coeffs.vol(history, i, gp);
        f.push(drift.eval_interval(0.0, tau));
        g.push(
            vol.components()
                .iter()
                .map(|c| c.eval_interval(0.0, tau))
                .collect(),
        );
    }
    (f, g)
}

/// Closed-form roll-over bank account
/// `B_{t_j} = exp( X0(0, t_j] + sum_i F_i(0, t_j - t_i] dt + sum_{i,k} G_i^k(0, t_j - t_i] dW_i^k )`
/// per path, with coefficients evaluated along the realized path. The `i = j`
/// term contributes the empty interval `(0, 0]` and vanishes.
pub fn bank_account_closed(
    coeffs: &dyn CoefficientMap,
    x: &MildPath,
    driver: &BrownianDriver,
    j: usize,
) -> Result<Vec<f64>> {
    if j > x.n_steps() {
        return Err(Error::invalid(format!(
            "step {j} beyond the simulated horizon {}",
            x.n_steps()
        )));
    }
    let dt = x.time_grid().dt();
    let t_j = x.time_grid().t(j);
    // State-independent coefficients: hoist the interval masses out of the
    // path loop.
    let hoisted = if coeffs.is_state_independent() {
        Some(coefficient_masses(coeffs, x, driver, 0, j))
    } else {
        None
    };
    let out = (0..x.n_paths())
        .map(|p| {
            let owned;
            let (f, g) = match &hoisted {
                Some(pair) => (&pair.0, &pair.1),
                None => {
                    owned = coefficient_masses(coeffs, x, driver, p, j);
                    (&owned.0, &owned.1)
                }
            };
            let mut log_b = x.at(0, p).eval_interval(0.0, t_j);
            for i in 0..j {
                log_b += f[i] * dt;
                let dw = driver.dw(p, i);
                for (k, gv) in g[i].iter().enumerate() {
                    log_b += gv * dw[k];
                }
            }
            log_b.exp()
        })
        .collect();
    Ok(out)
}

/// Discretized roll-over bank account over `n` subdivision intervals:
/// `B^n_{t_j} = prod_{i=1..n} P(t_{(i-1)j/n}, t_{ij/n})^{-1}`.
///
/// `n` must divide `j` so the subdivision times are grid times. Converges to
/// the closed form as `n -> j`; equal to it at `n = j` by telescoping.
pub fn bank_account_discrete(x: &MildPath, j: usize, n: usize) -> Result<Vec<f64>> {
    if n == 0 || j == 0 || j % n != 0 {
        return Err(Error::invalid(format!(
            "subdivision count {n} must divide the step index {j}"
        )));
    }
    let q = j / n;
    let tau = q as f64 * x.time_grid().dt();
    Ok((0..x.n_paths())
        .map(|p| {
            let mut log_b = 0.0;
            for i in 0..n {
                log_b += x.at(i * q, p).eval_interval(0.0, tau);
            }
            log_b.exp()
        })
        .collect())
}

/// Discounted bond prices `P(t_j, T) / B_{t_j}` per path.
pub fn discounted_bond_prices(
    coeffs: &dyn CoefficientMap,
    x: &MildPath,
    driver: &BrownianDriver,
    j: usize,
    maturity: f64,
) -> Result<Vec<f64>> {
    let bonds = bond_price(x, j, maturity)?;
    let bank = bank_account_closed(coeffs, x, driver, j)?;
    Ok(bonds.iter().zip(&bank).map(|(p, b)| p / b).collect())
}

/// One checkpoint verdict of the martingale test.
#[derive(Debug, Clone, Copy)]
pub struct CheckpointReport {
    pub t: f64,
    pub mean: f64,
    pub mean_gap: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// Tests `E[Z_t] = Z_0` at each checkpoint: pass iff the gap of the sample
/// mean stays within three standard errors.
pub fn martingale_test(z0: f64, samples_at_checkpoints: &[(f64, Vec<f64>)]) -> Vec<CheckpointReport> {
    samples_at_checkpoints
        .iter()
        .map(|(t, samples)| {
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let stderr = (var / n).sqrt();
            let mean_gap = (mean - z0).abs();
            CheckpointReport {
                t: *t,
                mean,
                mean_gap,
                stderr,
                pass: mean_gap <= 3.0 * stderr + MARTINGALE_ABS_SLACK,
            }
        })
        .collect()
}

/// Driver configuration shared by the model components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DriverSpec {
    pub factors: usize,
    pub n_paths: usize,
    pub seed: u64,
}

/// One model component: initial forward measure plus coefficients.
pub struct HJMComponent {
    pub x0: SignedMeasure,
    pub coeffs: Box<dyn CoefficientMap + Send + Sync>,
}

/// Two-component term structure model: interest rates parameterized by
/// time-to-maturity (shift semigroup), energy futures by time-of-maturity
/// (identity semigroup, zero drift).
pub struct HJMModel {
    maturity_grid: MaturityGrid,
    time_grid: TimeGrid,
    pub driver: DriverSpec,
    pub rates: HJMComponent,
    pub energy: Option<HJMComponent>,
}

impl HJMModel {
    pub fn new(
        maturity_grid: MaturityGrid,
        time_grid: TimeGrid,
        driver: DriverSpec,
        rates: HJMComponent,
        energy: Option<HJMComponent>,
    ) -> Result<Self> {
        if time_grid.dt() != maturity_grid.cell_width() {
            return Err(Error::Misaligned {
                what: "time step (must equal the maturity cell width)",
                value: time_grid.dt(),
                cell_width: maturity_grid.cell_width(),
            });
        }
        let components = [("rates", &rates)]
            .into_iter()
            .chain(energy.iter().map(|e| ("energy", e)));
        for (name, comp) in components {
            if *comp.x0.grid() != maturity_grid || *comp.coeffs.grid() != maturity_grid {
                return Err(Error::invalid(format!(
                    "{name} component lives on a different maturity grid"
                )));
            }
            if comp.coeffs.factors() != driver.factors {
                return Err(Error::DimensionMismatch {
                    what: "component noise factors",
                    expected: driver.factors,
                    got: comp.coeffs.factors(),
                });
            }
        }
        Ok(HJMModel {
            maturity_grid,
            time_grid,
            driver,
            rates,
            energy,
        })
    }

    pub fn maturity_grid(&self) -> &MaturityGrid {
        &self.maturity_grid
    }

    pub fn time_grid(&self) -> TimeGrid {
        self.time_grid
    }

    pub fn horizon(&self) -> f64 {
        self.time_grid.horizon()
    }

    /// Samples increments for a block of global paths.
    pub fn sample_driver_block(&self, offset: usize, count: usize) -> Result<BrownianDriver> {
        BrownianDriver::sample_block(
            self.time_grid,
            self.driver.factors,
            offset,
            count,
            self.driver.seed,
        )
    }

    /// Simulates the rates component (shift semigroup).
    pub fn simulate_rates(&self, driver: &BrownianDriver) -> Result<MildPath> {
        euler_mild_solve(
            &InitialState::Deterministic(self.rates.x0.clone()),
            &self.rates.coeffs,
            driver,
            Semigroup::ShiftAdjoint,
        )
    }

    /// Simulates the energy component (identity semigroup), if present.
    pub fn simulate_energy(&self, driver: &BrownianDriver) -> Result<Option<MildPath>> {
        match &self.energy {
            None => Ok(None),
            Some(comp) => euler_mild_solve(
                &InitialState::Deterministic(comp.x0.clone()),
                &comp.coeffs,
                driver,
                Semigroup::Identity,
            )
            .map(Some),
        }
    }
}
