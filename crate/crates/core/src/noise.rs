//! Finite-factor Brownian drivers on a time grid and elementary Ito
//! integration.
//!
//! Per-path generator streams are derived from `(seed, path index)`, so any
//! partition of paths across workers or chunks reproduces the same
//! increments. Cross-implementation bit-exactness of the normal sampler is
//! not a contract; seed determinism within this implementation is.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Deterministic RNG for `(seed, stream)`; streams are independent.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform time grid `t_j = j * dt`, `j = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, n_steps: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::invalid(format!("dt must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(Error::invalid("n_steps must be at least 1"));
        }
        Ok(TimeGrid { dt, n_steps })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.t(self.n_steps)
    }

    /// Step index of a grid-aligned time.
    pub fn step_of(&self, t: f64) -> Option<usize> {
        if !(t >= 0.0) {
            return None;
        }
        let ratio = t / self.dt;
        let rounded = ratio.round();
        if (ratio - rounded).abs() <= 1e-9 * ratio.max(1.0) && (rounded as usize) <= self.n_steps {
            Some(rounded as usize)
        } else {
            None
        }
    }
}

/// Increments of a `d`-factor Brownian motion for a block of paths.
///
/// Each coordinate of `dw(path, step)` is Normal(0, dt), independent across
/// steps, paths, and coordinates. `path_offset` is the global index of the
/// first path in this block; blocks with different offsets drawn from the
/// same seed tile the same global family of paths.
#[derive(Debug, Clone)]
pub struct BrownianDriver {
    grid: TimeGrid,
    d: usize,
    n_paths: usize,
    path_offset: usize,
    seed: u64,
    /// Layout: [path][step][factor].
    increments: Vec<f64>,
}

impl BrownianDriver {
    /// Samples increments for global paths `0..n_paths`.
    pub fn sample(grid: TimeGrid, d: usize, n_paths: usize, seed: u64) -> Result<Self> {
        Self::sample_block(grid, d, 0, n_paths, seed)
    }

    /// Samples increments for global paths `path_offset..path_offset + n_paths`.
    pub fn sample_block(
        grid: TimeGrid,
        d: usize,
        path_offset: usize,
        n_paths: usize,
        seed: u64,
    ) -> Result<Self> {
        if d == 0 || n_paths == 0 {
            return Err(Error::invalid("factor and path counts must be at least 1"));
        }
        let per_path = grid.n_steps * d;
        let sqrt_dt = grid.dt.sqrt();
        let mut increments = vec![0.0; n_paths * per_path];
        increments
            .par_chunks_mut(per_path)
            .enumerate()
            .for_each(|(p, chunk)| {
                let mut rng = seeded_rng(seed, (path_offset + p) as u64);
                for v in chunk.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = z * sqrt_dt;
                }
            });
        Ok(BrownianDriver {
            grid,
            d,
            n_paths,
            path_offset,
            seed,
            increments,
        })
    }

    /// Wraps externally supplied increments (tests, refinements).
    pub fn from_increments(
        grid: TimeGrid,
        d: usize,
        n_paths: usize,
        path_offset: usize,
        increments: Vec<f64>,
    ) -> Result<Self> {
        if increments.len() != n_paths * grid.n_steps * d {
            return Err(Error::DimensionMismatch {
                what: "increment buffer",
                expected: n_paths * grid.n_steps * d,
                got: increments.len(),
            });
        }
        Ok(BrownianDriver {
            grid,
            d,
            n_paths,
            path_offset,
            seed: 0,
            increments,
        })
    }

    /// All-zero increments (forced degenerate paths in tests).
    pub fn zero(grid: TimeGrid, d: usize, n_paths: usize) -> Self {
        BrownianDriver {
            grid,
            d,
            n_paths,
            path_offset: 0,
            seed: 0,
            increments: vec![0.0; n_paths * grid.n_steps * d],
        }
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn factors(&self) -> usize {
        self.d
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn path_offset(&self) -> usize {
        self.path_offset
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Global index of local path `p`.
    pub fn global_path(&self, p: usize) -> usize {
        self.path_offset + p
    }

    /// Increment vector over step `j` for local path `p` (a `d`-slice).
    #[inline]
    pub fn dw(&self, p: usize, j: usize) -> &[f64] {
        let base = (p * self.grid.n_steps + j) * self.d;
        &self.increments[base..base + self.d]
    }

    /// Brownian path values `W_{t_j}` for local path `p`: `(n_steps + 1) x d`,
    /// starting at zero.
    pub fn path_values(&self, p: usize) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(self.grid.n_steps + 1);
        let mut w = DVector::zeros(self.d);
        out.push(w.clone());
        for j in 0..self.grid.n_steps {
            let dw = self.dw(p, j);
            for k in 0..self.d {
                w[k] += dw[k];
            }
            out.push(w.clone());
        }
        out
    }

    /// Sums consecutive increments into a coarser grid with `factor * dt`.
    pub fn coarsen(&self, factor: usize) -> Result<BrownianDriver> {
        if factor == 0 || self.grid.n_steps % factor != 0 {
            return Err(Error::invalid(format!(
                "coarsening factor {factor} must divide n_steps {}",
                self.grid.n_steps
            )));
        }
        let coarse_grid = TimeGrid::new(self.grid.dt * factor as f64, self.grid.n_steps / factor)?;
        let mut increments = vec![0.0; self.n_paths * coarse_grid.n_steps * self.d];
        for p in 0..self.n_paths {
            for cj in 0..coarse_grid.n_steps {
                for sub in 0..factor {
                    let fine = self.dw(p, cj * factor + sub);
                    let base = (p * coarse_grid.n_steps + cj) * self.d;
                    for k in 0..self.d {
                        increments[base + k] += fine[k];
                    }
                }
            }
        }
        Ok(BrownianDriver {
            grid: coarse_grid,
            d: self.d,
            n_paths: self.n_paths,
            path_offset: self.path_offset,
            seed: self.seed,
            increments,
        })
    }

    /// Brownian-bridge refinement: halves `dt`, splitting each increment into
    /// two conditionally correct halves using independent fill-in noise drawn
    /// from `fill_seed` (use a seed distinct from the sampling seed).
    pub fn refine_bridge(&self, fill_seed: u64) -> Result<BrownianDriver> {
        let fine_grid = TimeGrid::new(self.grid.dt / 2.0, self.grid.n_steps * 2)?;
        let half_sd = (self.grid.dt / 4.0).sqrt();
        let mut increments = vec![0.0; self.n_paths * fine_grid.n_steps * self.d];
        for p in 0..self.n_paths {
            let mut rng = seeded_rng(fill_seed, self.global_path(p) as u64);
            for j in 0..self.grid.n_steps {
                let coarse = self.dw(p, j);
                let base = (p * fine_grid.n_steps + 2 * j) * self.d;
                for k in 0..self.d {
                    let xi: f64 = rng.sample(StandardNormal);
                    let first = 0.5 * coarse[k] + half_sd * xi;
                    increments[base + k] = first;
                    increments[base + self.d + k] = coarse[k] - first;
                }
            }
        }
        Ok(BrownianDriver {
            grid: fine_grid,
            d: self.d,
            n_paths: self.n_paths,
            path_offset: self.path_offset,
            seed: self.seed,
            increments,
        })
    }
}

/// Pathwise elementary Ito integral `sum_j A_j dW_j` for a step integrand
/// given as `m x d` matrices per (step, global path).
///
/// Predictability of the integrand (step `j` values independent of `dW_j`)
/// is a caller contract; it is what makes the isometry hold.
pub fn ito_step_integral<F>(
    m: usize,
    integrand: F,
    driver: &BrownianDriver,
) -> Result<Vec<DVector<f64>>>
where
    F: Fn(usize, usize) -> DMatrix<f64> + Sync,
{
    let d = driver.factors();
    let n_steps = driver.grid().n_steps();
    let results: Vec<Result<DVector<f64>>> = (0..driver.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut acc = DVector::zeros(m);
            for j in 0..n_steps {
                let a = integrand(j, driver.global_path(p));
                if a.nrows() != m || a.ncols() != d {
                    return Err(Error::DimensionMismatch {
                        what: "step integrand matrix",
                        expected: m * d,
                        got: a.nrows() * a.ncols(),
                    });
                }
                let dw = driver.dw(p, j);
                for k in 0..d {
                    let w = dw[k];
                    if w != 0.0 {
                        acc.axpy(w, &a.column(k).into_owned(), 1.0);
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    results.into_iter().collect()
}

/// Monte Carlo check of the Ito isometry for a deterministic step integrand.
#[derive(Debug, Clone, Copy)]
pub struct IsometryReport {
    /// `sum_j |A_j|_HS^2 dt`.
    pub exact_value: f64,
    /// Sample second moment of the integral across paths.
    pub mc_second_moment: f64,
    /// Standard error of the sample second moment.
    pub stderr: f64,
}

impl IsometryReport {
    /// Gap in standard-error units (infinite if stderr is zero but a gap exists).
    pub fn gap_sigmas(&self) -> f64 {
        let gap = (self.mc_second_moment - self.exact_value).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.stderr
        }
    }

    pub fn pass(&self, sigmas: f64) -> bool {
        self.gap_sigmas() <= sigmas
    }
}

/// Compares the sample second moment of `int A dW` against the closed-form
/// isometry value for deterministic per-step matrices `A_j`.
pub fn ito_isometry_gap(steps: &[DMatrix<f64>], driver: &BrownianDriver) -> Result<IsometryReport> {
    if steps.len() != driver.grid().n_steps() {
        return Err(Error::DimensionMismatch {
            what: "integrand steps",
            expected: driver.grid().n_steps(),
            got: steps.len(),
        });
    }
    let m = steps.first().map(|a| a.nrows()).unwrap_or(0);
    let exact_value: f64 = steps
        .iter()
        .map(|a| a.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        * driver.grid().dt();
    let integrals = ito_step_integral(m, |j, _| steps[j].clone(), driver)?;
    let squares: Vec<f64> = integrals.iter().map(|v| v.norm_squared()).collect();
    let n = squares.len() as f64;
    let mc_second_moment = squares.iter().sum::<f64>() / n;
    let var = squares
        .iter()
        .map(|s| (s - mc_second_moment).powi(2))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    let stderr = (var / n).sqrt();
    Ok(IsometryReport {
        exact_value,
        mc_second_moment,
        stderr,
    })
}

/// Max over paths of the defect in the distributional-derivative identity
/// `int_0^t f(t-s) dW_s = int_0^t f'(t-s) W_s ds`, both sides discretized at
/// the left endpoints. The defect shrinks at rate O(dt) under grid
/// refinement when `f` vanishes at 0 and `t`.
pub fn dirac_convolution_identity_gap(
    f: &dyn Fn(f64) -> f64,
    f_prime: &dyn Fn(f64) -> f64,
    t: f64,
    driver: &BrownianDriver,
) -> Result<f64> {
    if driver.factors() != 1 {
        return Err(Error::invalid("dirac identity check requires d = 1"));
    }
    let grid = driver.grid();
    let j_end = grid.step_of(t).ok_or(Error::Misaligned {
        what: "dirac identity time",
        value: t,
        cell_width: grid.dt(),
    })?;
    if j_end == 0 {
        return Err(Error::invalid("dirac identity time must be positive"));
    }
    if f(0.0).abs() > 1e-12 || f(t).abs() > 1e-12 {
        return Err(Error::invalid(
            "integrand must vanish at 0 and t (support strictly inside)",
        ));
    }
    let dt = grid.dt();
    let mut worst = 0.0f64;
    for p in 0..driver.n_paths() {
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        let mut w = 0.0;
        for j in 0..j_end {
            let s = grid.t(j);
            lhs += f(t - s) * driver.dw(p, j)[0];
            rhs += f_prime(t - s) * w * dt;
            w += driver.dw(p, j)[0];
        }
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}
