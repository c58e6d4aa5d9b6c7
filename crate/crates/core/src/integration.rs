//! Vector-measure integration on finite partitions.
//!
//! Everything here lives on a finite set partitioned into cells, with values
//! in Euclidean spaces. That keeps the central quantities computable exactly:
//! semivariation of a scalar-integrand measure by sign-pattern enumeration,
//! and operator norms of cylindrified integrals by singular values.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Hard cap on exact semivariation enumeration (2^24 sign patterns).
pub const MAX_EXACT_CELLS: usize = 24;

/// Partition of a finite set into `n_cells` cells; the algebra of subsets is
/// generated by the cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FiniteSpace {
    n_cells: usize,
}

impl FiniteSpace {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::invalid("a finite space needs at least one cell"));
        }
        Ok(FiniteSpace { n_cells })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }
}

/// Finitely additive vector measure: one value in R^dim_g per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteVectorMeasure {
    space: FiniteSpace,
    values: Vec<DVector<f64>>,
}

impl FiniteVectorMeasure {
    pub fn new(space: FiniteSpace, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != space.n_cells() {
            return Err(Error::DimensionMismatch {
                what: "measure cell values",
                expected: space.n_cells(),
                got: values.len(),
            });
        }
        let dim = values.first().map(|v| v.len()).unwrap_or(0);
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::invalid("measure cell values have mixed dimensions"));
        }
        Ok(FiniteVectorMeasure { space, values })
    }

    /// Scalar measure from per-cell reals.
    pub fn scalar(space: FiniteSpace, values: Vec<f64>) -> Result<Self> {
        let values = values.into_iter().map(|v| DVector::from_element(1, v)).collect();
        FiniteVectorMeasure::new(space, values)
    }

    pub fn space(&self) -> FiniteSpace {
        self.space
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.first().map(|v| v.len()).unwrap_or(0)
    }

    /// Value on the union of the given cells (finite additivity by construction).
    pub fn on_cells(&self, cells: &[usize]) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim());
        for &c in cells {
            acc += &self.values[c];
        }
        acc
    }

    /// Restriction to a subset of cells: values outside are zeroed.
    pub fn restrict(&self, cells: &[usize]) -> FiniteVectorMeasure {
        let mut values = vec![DVector::zeros(self.dim()); self.values.len()];
        for &c in cells {
            values[c] = self.values[c].clone();
        }
        FiniteVectorMeasure {
            space: self.space,
            values,
        }
    }

    pub fn add(&self, other: &FiniteVectorMeasure) -> Result<FiniteVectorMeasure> {
        if self.space != other.space || self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                what: "measure sum",
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + b)
            .collect();
        Ok(FiniteVectorMeasure {
            space: self.space,
            values,
        })
    }
}

/// Measurable function with finite range: one value in R^dim_f per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementaryFunction {
    space: FiniteSpace,
    values: Vec<DVector<f64>>,
}

impl ElementaryFunction {
    pub fn new(space: FiniteSpace, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != space.n_cells() {
            return Err(Error::DimensionMismatch {
                what: "elementary function values",
                expected: space.n_cells(),
                got: values.len(),
            });
        }
        Ok(ElementaryFunction { space, values })
    }

    pub fn scalar(space: FiniteSpace, values: Vec<f64>) -> Result<Self> {
        let values = values.into_iter().map(|v| DVector::from_element(1, v)).collect();
        ElementaryFunction::new(space, values)
    }

    pub fn constant(space: FiniteSpace, value: DVector<f64>) -> Self {
        let values = vec![value; space.n_cells()];
        ElementaryFunction { space, values }
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// sup-norm: max over cells of the Euclidean norm of the value.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Zeroes the function outside the given cells.
    pub fn restrict(&self, cells: &[usize]) -> ElementaryFunction {
        let dim = self.values.first().map(|v| v.len()).unwrap_or(0);
        let mut values = vec![DVector::zeros(dim); self.values.len()];
        for &c in cells {
            values[c] = self.values[c].clone();
        }
        ElementaryFunction {
            space: self.space,
            values,
        }
    }
}

/// Continuous bilinear map `R^dim_f x R^dim_g -> R^dim_h` stored as a
/// coefficient tensor; all three spaces carry the Euclidean norm.
#[derive(Debug, Clone)]
pub struct BilinearPairing {
    dim_f: usize,
    dim_g: usize,
    dim_h: usize,
    /// coeff[(i*dim_g + j)*dim_h + k] multiplies f_i * g_j into output k.
    coeff: Vec<f64>,
}

impl BilinearPairing {
    pub fn new(dim_f: usize, dim_g: usize, dim_h: usize, coeff: Vec<f64>) -> Result<Self> {
        if coeff.len() != dim_f * dim_g * dim_h {
            return Err(Error::DimensionMismatch {
                what: "pairing tensor",
                expected: dim_f * dim_g * dim_h,
                got: coeff.len(),
            });
        }
        Ok(BilinearPairing {
            dim_f,
            dim_g,
            dim_h,
            coeff,
        })
    }

    /// Scalar multiplication R x R -> R.
    pub fn multiplication() -> Self {
        BilinearPairing {
            dim_f: 1,
            dim_g: 1,
            dim_h: 1,
            coeff: vec![1.0],
        }
    }

    /// Canonical pairing R x R^n -> R^n (scalar times vector).
    pub fn scalar_times_vector(n: usize) -> Self {
        let mut coeff = vec![0.0; n * n];
        for j in 0..n {
            coeff[j * n + j] = 1.0;
        }
        BilinearPairing {
            dim_f: 1,
            dim_g: n,
            dim_h: n,
            coeff,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.dim_f, self.dim_g, self.dim_h)
    }

    pub fn apply(&self, f: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        debug_assert_eq!(f.len(), self.dim_f);
        debug_assert_eq!(g.len(), self.dim_g);
        let mut out = DVector::zeros(self.dim_h);
        for i in 0..self.dim_f {
            for j in 0..self.dim_g {
                let fg = f[i] * g[j];
                if fg == 0.0 {
                    continue;
                }
                let base = (i * self.dim_g + j) * self.dim_h;
                for k in 0..self.dim_h {
                    out[k] += self.coeff[base + k] * fg;
                }
            }
        }
        out
    }

    /// Partial application `f -> p(f, g)` as a dim_h x dim_f matrix.
    pub fn contract_right(&self, g: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim_h, self.dim_f);
        for i in 0..self.dim_f {
            for j in 0..self.dim_g {
                let base = (i * self.dim_g + j) * self.dim_h;
                for k in 0..self.dim_h {
                    m[(k, i)] += self.coeff[base + k] * g[j];
                }
            }
        }
        m
    }

    /// Certified bound on the operator norm (Frobenius norm of the tensor).
    pub fn norm_bound(&self) -> f64 {
        self.coeff.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Elementary integral `sum_k p(f_k, mu_k)`.
pub fn elementary_integral(
    f: &ElementaryFunction,
    mu: &FiniteVectorMeasure,
    p: &BilinearPairing,
) -> Result<DVector<f64>> {
    if f.space != mu.space {
        return Err(Error::DimensionMismatch {
            what: "integral cells",
            expected: mu.space.n_cells(),
            got: f.space.n_cells(),
        });
    }
    let (dim_f, dim_g, dim_h) = p.dims();
    let f_dim = f.values.first().map(|v| v.len()).unwrap_or(dim_f);
    if f_dim != dim_f {
        return Err(Error::DimensionMismatch {
            what: "integrand dimension",
            expected: dim_f,
            got: f_dim,
        });
    }
    if mu.dim() != dim_g {
        return Err(Error::DimensionMismatch {
            what: "integrator dimension",
            expected: dim_g,
            got: mu.dim(),
        });
    }
    let mut acc = DVector::zeros(dim_h);
    for (fv, mv) in f.values.iter().zip(&mu.values) {
        acc += p.apply(fv, mv);
    }
    Ok(acc)
}

/// How to compute the semivariation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SemivariationMode {
    /// Enumerate all sign patterns; exact, scalar integrands only.
    ExactScalar,
    /// Random unit-ball integrands plus alternating ascent; lower bound with
    /// a certified upper bound.
    Sampled { samples: usize, seed: u64 },
}

/// Semivariation estimate: `lower == upper` in exact mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Semivariation {
    pub lower: f64,
    pub upper: f64,
}

/// Operator norm of the elementary integral over the sup-norm unit ball.
///
/// For scalar integrands the supremum is attained at a sign pattern
/// (the objective is convex in each cell value), so enumeration over
/// `{-1, +1}^n_cells` is exact.
pub fn semivariation(
    mu: &FiniteVectorMeasure,
    p: &BilinearPairing,
    mode: SemivariationMode,
) -> Result<Semivariation> {
    let (dim_f, dim_g, _) = p.dims();
    if mu.dim() != dim_g {
        return Err(Error::DimensionMismatch {
            what: "integrator dimension",
            expected: dim_g,
            got: mu.dim(),
        });
    }
    match mode {
        SemivariationMode::ExactScalar => {
            if dim_f != 1 {
                return Err(Error::invalid(
                    "exact semivariation requires scalar integrands (dim_f = 1)",
                ));
            }
            let n = mu.space.n_cells();
            if n > MAX_EXACT_CELLS {
                return Err(Error::invalid(format!(
                    "exact semivariation limited to {MAX_EXACT_CELLS} cells, got {n}"
                )));
            }
            // p(eps, mu_k) = eps * v_k with v_k = p(1, mu_k).
            let one = DVector::from_element(1, 1.0);
            let v: Vec<DVector<f64>> = mu.values.iter().map(|g| p.apply(&one, g)).collect();
            // Gray-code walk: flip one sign per step.
            let mut sum: DVector<f64> = v.iter().sum();
            let mut best = sum.norm();
            let mut signs = vec![1.0f64; n];
            for i in 1u64..(1u64 << n) {
                let bit = i.trailing_zeros() as usize;
                let delta = -2.0 * signs[bit];
                signs[bit] = -signs[bit];
                sum.axpy(delta, &v[bit], 1.0);
                best = best.max(sum.norm());
            }
            Ok(Semivariation {
                lower: best,
                upper: best,
            })
        }
        SemivariationMode::Sampled { samples, seed } => {
            let upper: f64 = p.norm_bound() * mu.values.iter().map(|g| g.norm()).sum::<f64>();
            let mats: Vec<DMatrix<f64>> = mu.values.iter().map(|g| p.contract_right(g)).collect();
            let mut rng = crate::noise::seeded_rng(seed, 0);
            let mut lower = 0.0f64;
            for _ in 0..samples {
                let mut fs: Vec<DVector<f64>> = mats
                    .iter()
                    .map(|m| {
                        let mut f = DVector::from_fn(m.ncols(), |_, _| rng.gen_range(-1.0..1.0));
                        let norm = f.norm();
                        if norm > 1.0 {
                            f /= norm;
                        }
                        f
                    })
                    .collect();
                // Alternating ascent: align each f_k with the current sum direction.
                for _ in 0..8 {
                    let sum: DVector<f64> =
                        mats.iter().zip(&fs).map(|(m, f)| m * f).sum();
                    let norm = sum.norm();
                    if norm == 0.0 {
                        break;
                    }
                    let dir = sum / norm;
                    for (m, f) in mats.iter().zip(fs.iter_mut()) {
                        let grad = m.transpose() * &dir;
                        let gnorm = grad.norm();
                        if gnorm > 0.0 {
                            *f = grad / gnorm;
                        }
                    }
                }
                let value: DVector<f64> = mats.iter().zip(&fs).map(|(m, f)| m * f).sum();
                lower = lower.max(value.norm());
            }
            Ok(Semivariation { lower, upper })
        }
    }
}

/// A cylindrified integral: the element-wise application of a continuous
/// integral `T: R^dim_i -> R^dim_h` to operator-valued integrands
/// `f in L(R^dim_e, R^dim_i)`.
#[derive(Debug, Clone)]
pub struct CylindricalIntegral {
    t: DMatrix<f64>,
    dim_e: usize,
    opnorm: f64,
}

/// Norm certificate for a cylindrified integral.
#[derive(Debug, Clone, Copy)]
pub struct CylindrifyNorms {
    /// Exact operator norm of the original integral (top singular value).
    pub opnorm: f64,
    /// Best value achieved by a rank-one witness integrand; equals `opnorm`
    /// up to rounding.
    pub lower_witness: f64,
}

/// Wraps the linear map `T` (as a dim_h x dim_i matrix) into its cylindrified
/// integral over `L(R^dim_e, R^dim_i)`.
pub fn cylindrify(t: DMatrix<f64>, dim_e: usize) -> Result<CylindricalIntegral> {
    if dim_e == 0 {
        return Err(Error::invalid("dim_e must be at least 1"));
    }
    let opnorm = operator_norm(&t);
    Ok(CylindricalIntegral { t, dim_e, opnorm })
}

/// Largest singular value under Euclidean norms.
pub fn operator_norm(t: &DMatrix<f64>) -> f64 {
    if t.is_empty() {
        return 0.0;
    }
    t.clone().singular_values().max()
}

impl CylindricalIntegral {
    pub fn dim_e(&self) -> usize {
        self.dim_e
    }

    pub fn original(&self) -> &DMatrix<f64> {
        &self.t
    }

    /// Applies the cylindrified integral to `f` at the test direction `e`:
    /// `T(f e)`.
    pub fn apply(&self, f: &DMatrix<f64>, e: &DVector<f64>) -> Result<DVector<f64>> {
        if f.nrows() != self.t.ncols() || f.ncols() != self.dim_e {
            return Err(Error::DimensionMismatch {
                what: "cylindrical integrand shape",
                expected: self.t.ncols() * self.dim_e,
                got: f.nrows() * f.ncols(),
            });
        }
        if e.len() != self.dim_e {
            return Err(Error::DimensionMismatch {
                what: "test direction",
                expected: self.dim_e,
                got: e.len(),
            });
        }
        Ok(&self.t * (f * e))
    }

    /// Operator-norm certificate: the upper bound is the exact norm of `T`;
    /// the lower bound comes from the rank-one witness `f = v1 e1*` aligned
    /// with the top right singular vector `v1` of `T`.
    pub fn norms(&self) -> CylindrifyNorms {
        let svd = self.t.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let top = v_t.row(0).transpose();
        let mut witness = DMatrix::zeros(self.t.ncols(), self.dim_e);
        witness.column_mut(0).copy_from(&top);
        let e1 = DVector::from_fn(self.dim_e, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let lower_witness = self
            .apply(&witness, &e1)
            .expect("witness dims are consistent")
            .norm();
        CylindrifyNorms {
            opnorm: self.opnorm,
            lower_witness,
        }
    }

    /// Worst sampled violation of `|T(f e)| <= |T| |f|_op |e|` over random
    /// integrands and directions; nonpositive values mean no violation.
    pub fn max_submultiplicativity_violation(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = crate::noise::seeded_rng(seed, 1);
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..samples {
            let f = DMatrix::from_fn(self.t.ncols(), self.dim_e, |_, _| rng.gen_range(-1.0..1.0));
            let e = DVector::from_fn(self.dim_e, |_, _| rng.gen_range(-1.0..1.0));
            let lhs = self.apply(&f, &e).expect("dims consistent").norm();
            let bound = self.opnorm * operator_norm(&f) * e.norm();
            worst = worst.max(lhs - bound);
        }
        worst
    }
}

/// Left-endpoint quadrature `sum_j values_j * dt`, the finite-grid Bochner
/// integral. Empty input yields the zero vector (dimension 0).
pub fn bochner_quadrature(values: &[DVector<f64>], dt: f64) -> DVector<f64> {
    let dim = values.first().map(|v| v.len()).unwrap_or(0);
    let mut acc = DVector::zeros(dim);
    for v in values {
        acc += v;
    }
    acc * dt
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn scalar_space(values: &[f64]) -> FiniteVectorMeasure {
        let space = FiniteSpace::new(values.len()).unwrap();
        FiniteVectorMeasure::scalar(space, values.to_vec()).unwrap()
    }

    #[test]
    fn elementary_integral_hand_sum() {
        // f = (1, -1), mu = (2, 3), multiplication pairing: 1*2 + (-1)*3 = -1
        let space = FiniteSpace::new(2).unwrap();
        let f = ElementaryFunction::scalar(space, vec![1.0, -1.0]).unwrap();
        let mu = scalar_space(&[2.0, 3.0]);
        let p = BilinearPairing::multiplication();
        let out = elementary_integral(&f, &mu, &p).unwrap();
        assert_eq!(out[0], -1.0);
    }

    #[test]
    fn elementary_integral_constant_integrand() {
        let space = FiniteSpace::new(3).unwrap();
        let mu = scalar_space(&[0.5, -0.25, 2.0]);
        let p = BilinearPairing::multiplication();
        let e = DVector::from_element(1, 3.0);
        let f = ElementaryFunction::constant(space, e.clone());
        let out = elementary_integral(&f, &mu, &p).unwrap();
        let total = mu.on_cells(&[0, 1, 2]);
        assert_relative_eq!(out[0], p.apply(&e, &total)[0]);
    }

    #[test]
    fn elementary_integral_zero_function() {
        let space = FiniteSpace::new(3).unwrap();
        let f = ElementaryFunction::scalar(space, vec![0.0; 3]).unwrap();
        let mu = scalar_space(&[1.0, 2.0, 3.0]);
        let p = BilinearPairing::multiplication();
        assert_eq!(elementary_integral(&f, &mu, &p).unwrap()[0], 0.0);
    }

    #[test]
    fn elementary_integral_dimension_mismatch() {
        let space = FiniteSpace::new(2).unwrap();
        let f = ElementaryFunction::new(
            space,
            vec![DVector::zeros(2), DVector::zeros(2)],
        )
        .unwrap();
        let mu = scalar_space(&[1.0, 1.0]);
        let p = BilinearPairing::multiplication();
        assert!(elementary_integral(&f, &mu, &p).is_err());
    }

    #[test]
    fn semivariation_plus_minus_one() {
        let mu = scalar_space(&[1.0, -1.0]);
        let p = BilinearPairing::multiplication();
        let sv = semivariation(&mu, &p, SemivariationMode::ExactScalar).unwrap();
        assert_eq!(sv.lower, 2.0);
        assert_eq!(sv.upper, 2.0);
    }

    #[test]
    fn semivariation_single_cell_is_operator_norm() {
        // one cell, vector value g: semivariation = |p(1, g)| = |g| for the
        // scalar-times-vector pairing.
        let space = FiniteSpace::new(1).unwrap();
        let g = DVector::from_vec(vec![3.0, 4.0]);
        let mu = FiniteVectorMeasure::new(space, vec![g]).unwrap();
        let p = BilinearPairing::scalar_times_vector(2);
        let sv = semivariation(&mu, &p, SemivariationMode::ExactScalar).unwrap();
        assert_relative_eq!(sv.lower, 5.0);
    }

    #[test]
    fn semivariation_nonnegative_scalar_is_total_mass() {
        let mut rng = crate::noise::seeded_rng(7, 0);
        for _ in 0..20 {
            let n = rng.gen_range(1..10);
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
            let mu = scalar_space(&values);
            let p = BilinearPairing::multiplication();
            let sv = semivariation(&mu, &p, SemivariationMode::ExactScalar).unwrap();
            let total: f64 = values.iter().sum();
            assert_relative_eq!(sv.lower, total, max_relative = 1e-12);
        }
    }

    #[test]
    fn semivariation_bounds_elementary_integral() {
        let mut rng = crate::noise::seeded_rng(11, 0);
        let p = BilinearPairing::multiplication();
        for _ in 0..50 {
            let n = rng.gen_range(1..8);
            let space = FiniteSpace::new(n).unwrap();
            let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mu = FiniteVectorMeasure::scalar(space, values).unwrap();
            let sv = semivariation(&mu, &p, SemivariationMode::ExactScalar).unwrap();
            let fs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = ElementaryFunction::scalar(space, fs).unwrap();
            let integral = elementary_integral(&f, &mu, &p).unwrap().norm();
            assert!(integral <= sv.lower * f.sup_norm() + 1e-12);
        }
    }

    #[test]
    fn semivariation_subadditive() {
        let mut rng = crate::noise::seeded_rng(13, 0);
        let p = BilinearPairing::multiplication();
        for _ in 0..50 {
            let n = rng.gen_range(1..9);
            let space = FiniteSpace::new(n).unwrap();
            let a = FiniteVectorMeasure::scalar(
                space,
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let b = FiniteVectorMeasure::scalar(
                space,
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let sum = a.add(&b).unwrap();
            let sa = semivariation(&a, &p, SemivariationMode::ExactScalar).unwrap().lower;
            let sb = semivariation(&b, &p, SemivariationMode::ExactScalar).unwrap().lower;
            let ss = semivariation(&sum, &p, SemivariationMode::ExactScalar).unwrap().lower;
            assert!(ss <= sa + sb + 1e-12);
        }
    }

    #[test]
    fn semivariation_sampled_brackets_exact() {
        let mu = scalar_space(&[0.7, -0.4, 1.1]);
        let p = BilinearPairing::multiplication();
        let exact = semivariation(&mu, &p, SemivariationMode::ExactScalar).unwrap();
        let sampled = semivariation(
            &mu,
            &p,
            SemivariationMode::Sampled {
                samples: 32,
                seed: 5,
            },
        )
        .unwrap();
        assert!(sampled.lower <= exact.lower + 1e-12);
        assert!(sampled.upper >= exact.lower - 1e-12);
        // Ascent should find the sign pattern here.
        assert_relative_eq!(sampled.lower, exact.lower, max_relative = 1e-9);
    }

    #[test]
    fn semivariation_cell_cap_enforced() {
        let mu = scalar_space(&vec![1.0; MAX_EXACT_CELLS + 1]);
        let p = BilinearPairing::multiplication();
        assert!(semivariation(&mu, &p, SemivariationMode::ExactScalar).is_err());
    }

    #[test]
    fn restriction_consistency() {
        // For f supported on A, integrating against mu equals integrating
        // against mu restricted to A.
        let space = FiniteSpace::new(5).unwrap();
        let mu = scalar_space(&[1.0, -2.0, 0.5, 3.0, -1.0]);
        let p = BilinearPairing::multiplication();
        let f = ElementaryFunction::scalar(space, vec![2.0, 0.0, -1.0, 0.0, 0.0]).unwrap();
        let support = [0usize, 2];
        let full = elementary_integral(&f, &mu, &p).unwrap();
        let restricted = elementary_integral(&f, &mu.restrict(&support), &p).unwrap();
        assert_eq!(full, restricted);
    }

    #[test]
    fn cylindrify_dim_e_one_reproduces_original() {
        let t = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 4.0]);
        let cyl = cylindrify(t.clone(), 1).unwrap();
        let mut rng = crate::noise::seeded_rng(3, 0);
        for _ in 0..10 {
            let x = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
            let f = DMatrix::from_column_slice(3, 1, x.as_slice());
            let e = DVector::from_element(1, 1.0);
            let got = cyl.apply(&f, &e).unwrap();
            assert_eq!(got, &t * &x);
        }
    }

    #[test]
    fn cylindrify_witness_attains_norm() {
        let mut rng = crate::noise::seeded_rng(17, 0);
        for _ in 0..25 {
            let rows = rng.gen_range(1..6);
            let cols = rng.gen_range(1..6);
            let dim_e = rng.gen_range(1..4);
            let t = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..2.0));
            let cyl = cylindrify(t, dim_e).unwrap();
            let norms = cyl.norms();
            assert_relative_eq!(norms.lower_witness, norms.opnorm, max_relative = 1e-10);
        }
    }

    #[test]
    fn cylindrify_no_submultiplicativity_violation() {
        let mut rng = crate::noise::seeded_rng(19, 0);
        for _ in 0..10 {
            let t = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
            let cyl = cylindrify(t, 3).unwrap();
            let worst = cyl.max_submultiplicativity_violation(50, 23);
            assert!(worst <= 1e-9, "violation {worst}");
        }
    }

    #[test]
    fn bochner_constant_and_alternating() {
        let v = DVector::from_vec(vec![1.0, -2.0]);
        let values = vec![v.clone(); 5];
        let dt = 0.25;
        assert_relative_eq!(
            (bochner_quadrature(&values, dt) - &v * 1.25).norm(),
            0.0,
            epsilon = 1e-14
        );

        let alternating: Vec<DVector<f64>> = (0..6)
            .map(|j| if j % 2 == 0 { v.clone() } else { -v.clone() })
            .collect();
        assert_eq!(bochner_quadrature(&alternating, dt).norm(), 0.0);
    }

    #[test]
    fn bochner_arithmetic_series() {
        // values_j = j*dt (scalar), n steps: sum = dt^2 * n(n-1)/2
        let dt = 0.1;
        let n = 7;
        let values: Vec<DVector<f64>> = (0..n)
            .map(|j| DVector::from_element(1, j as f64 * dt))
            .collect();
        let expected = dt * dt * (n * (n - 1)) as f64 / 2.0;
        assert_relative_eq!(bochner_quadrature(&values, dt)[0], expected, max_relative = 1e-13);
    }

    #[test]
    fn bochner_empty_is_zero() {
        assert_eq!(bochner_quadrature(&[], 0.5).len(), 0);
    }

    #[test]
    fn bochner_l1_contraction() {
        let mut rng = crate::noise::seeded_rng(29, 0);
        let values: Vec<DVector<f64>> = (0..12)
            .map(|_| DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let dt = 0.03;
        let result = bochner_quadrature(&values, dt).norm();
        let l1: f64 = values.iter().map(|v| v.norm() * dt).sum();
        assert!(result <= l1 + 1e-14);
    }
}
