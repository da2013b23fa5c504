//! Permutation-invariant power-sum constraints.
//!
//! For observations `y` that are an unknown permutation of `A x*`, every
//! symmetric function of `y` equals the same function of `A x*`. Using the
//! power sums `p_k(z) = z_1^k + ... + z_m^k` for `k = 1..=n` gives `n`
//! polynomial equations
//!
//! ```text
//! f_k(x) = scale_k * (p_k(A x) - p_k(y)) = 0,   k = 1..=n
//! ```
//!
//! in the `n` unknown coefficients, with the permutation eliminated. The
//! system is kept implicitly as `(A, c)` with `c_k = p_k(y)`.
//! [`PowerSumSystem::compress`] additionally collapses `A` into the moment
//! coefficients of each `p_k(A x)`, which makes evaluation independent of `m`.

use std::collections::HashMap;
use std::ops::{Add, Mul};

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::polysolve::SquareSystem;

/// Largest number of unknowns supported by the polynomial route.
pub const MAX_N: usize = 6;

/// Largest power accepted by [`power_sum`].
pub const MAX_POWER: u32 = 64;

const PAIRWISE_BLOCK: usize = 8;

/// Known generating parameters of a synthetic instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub xi_star: Vec<f64>,
    /// `y[pi_star[i]]` is the (noisy) observation of row `i` of `A xi_star`.
    pub pi_star: Vec<usize>,
    pub sigma: f64,
    pub shuffle_fraction: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
}

/// A design matrix together with its (shuffled, possibly noisy) observations.
#[derive(Debug, Clone)]
pub struct RegressionInstance {
    a: DMatrix<f64>,
    y: Vec<f64>,
    ground_truth: Option<GroundTruth>,
}

impl RegressionInstance {
    /// Validates shape (`m > n >= 1`), finiteness and full column rank.
    pub fn new(a: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if n == 0 {
            return Err(Error::invalid("design matrix has no columns"));
        }
        if y.len() != m {
            return Err(Error::invalid(format!(
                "observation vector has length {} but the design matrix has {m} rows",
                y.len()
            )));
        }
        if m <= n {
            return Err(Error::invalid(format!(
                "need more observations than unknowns, got m = {m}, n = {n}"
            )));
        }
        if a.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite entry in the data"));
        }
        linalg::check_full_column_rank(&a)?;
        Ok(RegressionInstance {
            a,
            y,
            ground_truth: None,
        })
    }

    pub fn with_ground_truth(mut self, truth: GroundTruth) -> Self {
        self.ground_truth = Some(truth);
        self
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }
}

/// Pairwise (cascade) summation with a small sequential base case.
pub fn pairwise_sum<T>(xs: &[T]) -> T
where
    T: Copy + Zero + Add<Output = T>,
{
    if xs.len() <= PAIRWISE_BLOCK {
        return xs.iter().fold(T::zero(), |acc, &v| acc + v);
    }
    let (lo, hi) = xs.split_at(xs.len() / 2);
    pairwise_sum(lo) + pairwise_sum(hi)
}

/// `z_1^k + ... + z_m^k`, summed pairwise.
pub fn power_sum<T>(z: &[T], k: u32) -> Result<T>
where
    T: Copy + Zero + One + Add<Output = T> + Mul<Output = T>,
{
    if k == 0 || k > MAX_POWER {
        return Err(Error::invalid(format!(
            "power must lie in 1..={MAX_POWER}, got {k}"
        )));
    }
    if z.is_empty() {
        return Err(Error::invalid("power sum of an empty vector"));
    }
    let powers: Vec<T> = z.iter().map(|&v| num_traits::pow(v, k as usize)).collect();
    Ok(pairwise_sum(&powers))
}

/// The `n` power-sum equations of degrees `1..=n`.
#[derive(Debug, Clone)]
pub struct PowerSumSystem {
    a: DMatrix<f64>,
    constants: Vec<f64>,
    scale: Vec<f64>,
}

/// Builds the power-sum system of an instance with the default `1/m` equation
/// scaling. Constants are summed over `y` sorted ascending, so any
/// permutation of `y` yields bit-identical constants.
pub fn build_system(instance: &RegressionInstance) -> Result<PowerSumSystem> {
    let n = instance.n();
    if n > MAX_N {
        return Err(Error::DimensionCap { n, max: MAX_N });
    }
    let mut sorted = instance.y().to_vec();
    sorted.sort_by(f64::total_cmp);
    let constants = (1..=n as u32)
        .map(|k| power_sum(&sorted, k))
        .collect::<Result<Vec<_>>>()?;
    let scale = vec![1.0 / instance.m() as f64; n];
    Ok(PowerSumSystem {
        a: instance.a().clone(),
        constants,
        scale,
    })
}

impl PowerSumSystem {
    /// Assembles a system from raw parts. `constants[k-1]` is `p_k(y)`.
    pub fn from_parts(a: DMatrix<f64>, constants: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        let n = a.ncols();
        if n == 0 || n > MAX_N {
            return Err(Error::DimensionCap { n, max: MAX_N });
        }
        if constants.len() != n || scale.len() != n {
            return Err(Error::invalid("constants and scale must have length n"));
        }
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("equation scales must be positive and finite"));
        }
        Ok(PowerSumSystem { a, constants, scale })
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Unscaled constants `c_k = p_k(y)`.
    pub fn constants(&self) -> &[f64] {
        &self.constants
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// `scale_k * c_k`, the constants as they appear in [`Self::evaluate`].
    pub fn scaled_constants(&self) -> Vec<f64> {
        self.constants
            .iter()
            .zip(&self.scale)
            .map(|(c, s)| c * s)
            .collect()
    }

    /// The same system with all constants set to zero, i.e. the leading forms
    /// `scale_k * p_k(A x)`.
    pub fn leading_forms(&self) -> PowerSumSystem {
        PowerSumSystem {
            a: self.a.clone(),
            constants: vec![0.0; self.n()],
            scale: self.scale.clone(),
        }
    }

    fn inner_products(&self, x: &[Complex64]) -> Vec<Complex64> {
        let (m, n) = self.a.shape();
        (0..m)
            .map(|i| {
                (0..n).fold(Complex64::zero(), |acc, j| acc + x[j] * self.a[(i, j)])
            })
            .collect()
    }

    fn check_point(&self, x: &[Complex64]) -> Result<()> {
        if x.len() != self.n() {
            return Err(Error::invalid(format!(
                "point has dimension {} but the system has {} unknowns",
                x.len(),
                self.n()
            )));
        }
        if x.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::invalid("non-finite evaluation point"));
        }
        Ok(())
    }

    /// Residuals `scale_k * (sum_i (a_i . x)^k - c_k)`.
    pub fn evaluate(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_point(x)?;
        let mut out = vec![Complex64::zero(); self.n()];
        self.eval_unchecked(x, &mut out);
        Ok(out)
    }

    /// Entry `(k, j)` is `scale_k * k * sum_i (a_i . x)^(k-1) a_ij`.
    pub fn jacobian(&self, x: &[Complex64]) -> Result<DMatrix<Complex64>> {
        self.check_point(x)?;
        let n = self.n();
        let mut out = DMatrix::zeros(n, n);
        self.jac_unchecked(x, &mut out);
        Ok(out)
    }

    fn eval_unchecked(&self, x: &[Complex64], out: &mut [Complex64]) {
        let s = self.inner_products(x);
        let mut pw = s.clone();
        for k in 0..self.n() {
            if k > 0 {
                for (p, &si) in pw.iter_mut().zip(&s) {
                    *p *= si;
                }
            }
            let total = pw.iter().fold(Complex64::zero(), |acc, &v| acc + v);
            out[k] = (total - self.constants[k]) * self.scale[k];
        }
    }

    fn jac_unchecked(&self, x: &[Complex64], out: &mut DMatrix<Complex64>) {
        let (m, n) = self.a.shape();
        let s = self.inner_products(x);
        // pw holds s_i^(k-1) for the row being filled
        let mut pw = vec![Complex64::one(); m];
        for k in 0..n {
            if k > 0 {
                for (p, &si) in pw.iter_mut().zip(&s) {
                    *p *= si;
                }
            }
            let factor = self.scale[k] * (k + 1) as f64;
            for j in 0..n {
                let mut acc = Complex64::zero();
                for i in 0..m {
                    acc += pw[i] * self.a[(i, j)];
                }
                out[(k, j)] = acc * factor;
            }
        }
    }

    /// Rescales unknowns and observations so the system is well balanced:
    /// columns of `A` get unit RMS and `y` gets unit RMS. Roots `w` of the
    /// returned system map back through [`Normalization::to_original`].
    pub fn normalized(&self) -> (PowerSumSystem, Normalization) {
        let (m, n) = self.a.shape();
        let col_rms: Vec<f64> = (0..n)
            .map(|j| {
                let r = (self.a.column(j).norm_squared() / m as f64).sqrt();
                if r > 0.0 { r } else { 1.0 }
            })
            .collect();
        // c_2 / m is the mean square of y when n >= 2; fall back to |c_1| / m.
        let y_rms = if n >= 2 {
            (self.constants[1] / m as f64).sqrt()
        } else {
            self.constants[0].abs() / m as f64
        };
        let y_rms = if y_rms.is_finite() && y_rms > 0.0 { y_rms } else { 1.0 };

        let mut a = self.a.clone();
        for (j, r) in col_rms.iter().enumerate() {
            a.column_mut(j).unscale_mut(*r);
        }
        let constants = self
            .constants
            .iter()
            .enumerate()
            .map(|(k, c)| c / y_rms.powi(k as i32 + 1))
            .collect();
        (
            PowerSumSystem {
                a,
                constants,
                scale: self.scale.clone(),
            },
            Normalization {
                y_rms,
                col_rms,
            },
        )
    }

    /// Collapses the `m` rows into the monomial coefficients of each
    /// `p_k(A x)`. Evaluation of the result no longer depends on `m`.
    pub fn compress(&self) -> MomentSystem {
        let (m, n) = self.a.shape();
        let basis = MonomialBasis::new(n, n as u32);
        let mut moments = vec![0.0; basis.len()];
        let mut vals = vec![0.0; basis.len()];
        for i in 0..m {
            let row: Vec<f64> = (0..n).map(|j| self.a[(i, j)]).collect();
            basis.values_into(&row, &mut vals);
            for (acc, v) in moments.iter_mut().zip(&vals) {
                *acc += v;
            }
        }
        let coeffs = (0..basis.len())
            .map(|idx| {
                let deg = basis.degree(idx);
                if deg == 0 {
                    0.0
                } else {
                    self.scale[deg as usize - 1] * basis.multinomial(idx) * moments[idx]
                }
            })
            .collect();
        MomentSystem {
            basis,
            coeffs,
            scaled_constants: self.scaled_constants(),
        }
    }
}

impl SquareSystem for PowerSumSystem {
    fn dim(&self) -> usize {
        self.n()
    }

    fn degrees(&self) -> Vec<u32> {
        (1..=self.n() as u32).collect()
    }

    fn eval_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        self.eval_unchecked(x, out);
    }

    fn jacobian_into(&self, x: &[Complex64], out: &mut DMatrix<Complex64>) {
        self.jac_unchecked(x, out);
    }
}

/// Variable and observation rescaling applied by [`PowerSumSystem::normalized`].
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub y_rms: f64,
    pub col_rms: Vec<f64>,
}

impl Normalization {
    pub fn to_original(&self, w: &[Complex64]) -> Vec<Complex64> {
        w.iter()
            .zip(&self.col_rms)
            .map(|(v, r)| v * (self.y_rms / r))
            .collect()
    }

    pub fn to_normalized(&self, x: &[Complex64]) -> Vec<Complex64> {
        x.iter()
            .zip(&self.col_rms)
            .map(|(v, r)| v * (r / self.y_rms))
            .collect()
    }
}

/// All monomials in `n` variables of total degree `<= max_degree`, ordered by
/// degree. Each nonconstant monomial records a parent of degree one less so
/// that values can be generated with one multiplication each.
#[derive(Debug, Clone)]
struct MonomialBasis {
    n: usize,
    exps: Vec<Vec<u8>>,
    parent: Vec<(usize, usize)>,
    // derivative[idx * n + j] = Some(index of exps[idx] - e_j) when exps[idx][j] > 0
    derivative: Vec<Option<usize>>,
    degree_start: Vec<usize>,
}

impl MonomialBasis {
    fn new(n: usize, max_degree: u32) -> Self {
        let mut exps = vec![vec![0u8; n]];
        let mut parent = vec![(0, 0)];
        let mut last_var = vec![0usize];
        let mut degree_start = vec![0, 1];
        for _ in 1..=max_degree {
            let lo = degree_start[degree_start.len() - 2];
            let hi = degree_start[degree_start.len() - 1];
            for p in lo..hi {
                for j in last_var[p]..n {
                    let mut e = exps[p].clone();
                    e[j] += 1;
                    exps.push(e);
                    parent.push((p, j));
                    last_var.push(j);
                }
            }
            degree_start.push(exps.len());
        }
        let index: HashMap<Vec<u8>, usize> =
            exps.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        let mut derivative = vec![None; exps.len() * n];
        for (idx, e) in exps.iter().enumerate() {
            for j in 0..n {
                if e[j] > 0 {
                    let mut d = e.clone();
                    d[j] -= 1;
                    derivative[idx * n + j] = Some(index[&d]);
                }
            }
        }
        MonomialBasis {
            n,
            exps,
            parent,
            derivative,
            degree_start,
        }
    }

    fn len(&self) -> usize {
        self.exps.len()
    }

    fn degree(&self, idx: usize) -> u32 {
        self.exps[idx].iter().map(|&e| e as u32).sum()
    }

    fn degree_range(&self, k: usize) -> std::ops::Range<usize> {
        self.degree_start[k]..self.degree_start[k + 1]
    }

    /// `k! / prod(alpha_j!)` for the monomial's exponent vector.
    fn multinomial(&self, idx: usize) -> f64 {
        let fact = |v: u32| (1..=v).map(f64::from).product::<f64>();
        let e = &self.exps[idx];
        fact(self.degree(idx)) / e.iter().map(|&v| fact(v as u32)).product::<f64>()
    }

    fn values_into<T>(&self, x: &[T], out: &mut [T])
    where
        T: Copy + One + Mul<Output = T>,
    {
        out[0] = T::one();
        for idx in 1..self.exps.len() {
            let (p, j) = self.parent[idx];
            out[idx] = out[p] * x[j];
        }
    }
}

/// The power-sum system in monomial-moment form.
#[derive(Debug, Clone)]
pub struct MomentSystem {
    basis: MonomialBasis,
    coeffs: Vec<f64>,
    scaled_constants: Vec<f64>,
}

impl MomentSystem {
    pub fn n(&self) -> usize {
        self.basis.n
    }

    /// Number of monomial coefficients stored.
    pub fn num_terms(&self) -> usize {
        self.basis.len()
    }
}

impl SquareSystem for MomentSystem {
    fn dim(&self) -> usize {
        self.n()
    }

    fn degrees(&self) -> Vec<u32> {
        (1..=self.n() as u32).collect()
    }

    fn eval_into(&self, x: &[Complex64], out: &mut [Complex64]) {
        let mut vals = vec![Complex64::zero(); self.basis.len()];
        self.basis.values_into(x, &mut vals);
        for (k, o) in out.iter_mut().enumerate() {
            let mut acc = Complex64::zero();
            for idx in self.basis.degree_range(k + 1) {
                acc += vals[idx] * self.coeffs[idx];
            }
            *o = acc - self.scaled_constants[k];
        }
    }

    fn jacobian_into(&self, x: &[Complex64], out: &mut DMatrix<Complex64>) {
        let n = self.n();
        let mut vals = vec![Complex64::zero(); self.basis.len()];
        self.basis.values_into(x, &mut vals);
        out.fill(Complex64::zero());
        for k in 0..n {
            for idx in self.basis.degree_range(k + 1) {
                let c = self.coeffs[idx];
                let e = &self.basis.exps[idx];
                for j in 0..n {
                    if let Some(d) = self.basis.derivative[idx * n + j] {
                        out[(k, j)] += vals[d] * (c * e[j] as f64);
                    }
                }
            }
        }
    }

    fn residual_scale(&self) -> f64 {
        1.0 + linalg::norm(&self.scaled_constants)
    }

    /// Endpoints on the normalized form are judged by the caller against the
    /// original system, so a converged polish is enough here.
    fn accepts(&self, residual: f64, tol: f64, polished: bool) -> bool {
        polished || residual <= tol * self.residual_scale()
    }
}
