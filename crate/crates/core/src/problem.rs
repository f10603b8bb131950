//! Finite-sum objectives `F(w) = (1/m) sum_i f_i(w)` over a normalized dataset.
//!
//! Two concrete problems are provided: [`RidgeProblem`] (regularized least
//! squares, with an exact minimizer) and [`LipschitzLinearProblem`] (a convex
//! scalar loss of a linear prediction plus an optional ridge term).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot, norm};

const NORM_TOL: f64 = 1e-12;
/// Below this smallest Hessian eigenvalue the exact solve is refused.
pub const SINGULAR_CUTOFF: f64 = 1e-12;
/// Dimension above which the smallest eigenvalue comes from inverse iteration.
pub const DENSE_EIGEN_MAX_DIM: usize = 512;

/// `m` points `x_i` in `R^d` with `||x_i|| <= 1` and labels `|y_i| <= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    d: usize,
    /// Row-major `m x d`.
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(d: usize, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDataset("dimension must be >= 1".into()));
        }
        if y.is_empty() {
            return Err(Error::InvalidDataset("need at least one point".into()));
        }
        if x.len() != y.len() * d {
            return Err(Error::InvalidDataset(format!(
                "feature buffer has {} entries, expected {} x {}",
                x.len(),
                y.len(),
                d
            )));
        }
        let ds = Dataset { d, x, y };
        for i in 0..ds.m() {
            let n = norm(ds.row(i));
            if !(n <= 1.0 + NORM_TOL) {
                return Err(Error::InvalidDataset(format!("point {i} has norm {n} > 1")));
            }
            let yi = ds.y[i];
            if !(yi.abs() <= 1.0 + NORM_TOL) {
                return Err(Error::InvalidDataset(format!("label {i} is {yi}, |y| > 1")));
            }
        }
        Ok(ds)
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidDataset("rows have differing lengths".into()));
        }
        Dataset::new(d, rows.concat(), y)
    }

    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn features(&self) -> &[f64] {
        &self.x
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    /// `(1/m) sum_i x_i x_i^T`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let d = self.d;
        let mut acc = DMatrix::<f64>::zeros(d, d);
        for i in 0..self.m() {
            let xi = DVector::from_column_slice(self.row(i));
            acc.syger(1.0, &xi, &xi, 1.0);
        }
        acc.fill_upper_triangle_with_lower_triangle();
        acc / self.m() as f64
    }

    /// A copy restricted to the given points, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(indices.len() * self.d);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Dataset { d: self.d, x, y }
    }
}

/// A minimizer (or fixed reference point) and its objective value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub w: Vec<f64>,
    pub value: f64,
}

/// Common interface of the finite-sum problems. Implementors provide the
/// unchecked per-point kernels; the checked operations are derived.
pub trait Objective: Sync {
    fn dataset(&self) -> &Dataset;

    /// `f_i(w)`. Callers guarantee `i < m` and `w.len() == d`.
    fn loss_unchecked(&self, i: usize, w: &[f64]) -> f64;

    /// Adds a (sub)gradient of `f_i` at `w` into `out`.
    fn add_gradient_unchecked(&self, i: usize, w: &[f64], out: &mut [f64]);

    fn optimum(&self) -> Result<&Optimum>;

    /// `F(w) - F(w*)` by a cheaper exact route, if the problem has one.
    fn fast_suboptimality(&self, _w: &[f64]) -> Option<f64> {
        None
    }

    /// Uniform bound on `ln(F(w_t) - F(w*))` for `epochs` SVRG epochs of
    /// length `epoch_len` with step `eta`, when one is known.
    fn svrg_log_safety_bound(&self, _epoch_len: usize, _epochs: usize, _eta: f64) -> Option<f64> {
        None
    }

    fn m(&self) -> usize {
        self.dataset().m()
    }

    fn d(&self) -> usize {
        self.dataset().d()
    }

    fn check_point(&self, i: usize, w: &[f64]) -> Result<()> {
        self.check_dim(w)?;
        if i >= self.m() {
            return Err(Error::IndexOutOfRange { index: i, m: self.m() });
        }
        Ok(())
    }

    fn check_dim(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: w.len(),
            });
        }
        Ok(())
    }

    fn point_loss(&self, i: usize, w: &[f64]) -> Result<f64> {
        self.check_point(i, w)?;
        Ok(self.loss_unchecked(i, w))
    }

    fn point_gradient(&self, i: usize, w: &[f64]) -> Result<Vec<f64>> {
        self.check_point(i, w)?;
        let mut g = vec![0.0; self.d()];
        self.add_gradient_unchecked(i, w, &mut g);
        Ok(g)
    }

    /// Mean loss, summed pairwise in ascending index order.
    fn full_objective(&self, w: &[f64]) -> Result<f64> {
        self.check_dim(w)?;
        Ok(self.objective_unchecked(w))
    }

    fn objective_unchecked(&self, w: &[f64]) -> f64 {
        let m = self.m();
        linalg::pairwise_sum_range(m, &|i| self.loss_unchecked(i, w)) / m as f64
    }

    /// Mean gradient, summed pairwise in ascending index order.
    fn full_gradient(&self, w: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(w)?;
        let all: Vec<usize> = (0..self.m()).collect();
        let mut g = vec![0.0; self.d()];
        self.mean_gradient_over(&all, w, &mut g);
        Ok(g)
    }

    /// Mean gradient over a subset of points (pairwise over the given order).
    fn mean_gradient_over(&self, indices: &[usize], w: &[f64], out: &mut [f64]) {
        let d = self.d();
        linalg::pairwise_sum_vec(
            indices,
            d,
            &|i, acc: &mut [f64]| self.add_gradient_unchecked(i, w, acc),
            out,
        );
        let n = indices.len() as f64;
        out.iter_mut().for_each(|g| *g /= n);
    }

    /// `F(w) - F(w*)`.
    fn suboptimality(&self, w: &[f64]) -> Result<f64> {
        self.check_dim(w)?;
        let opt = self.optimum()?;
        Ok(self
            .fast_suboptimality(w)
            .unwrap_or_else(|| self.objective_unchecked(w) - opt.value))
    }
}

/// `f_i(w) = 1/2 (<w, x_i> - y_i)^2 + (lambda_hat/2) ||w||^2`.
#[derive(Debug, Clone)]
pub struct RidgeProblem {
    data: Dataset,
    lambda_hat: f64,
    lambda: f64,
    mu: f64,
    hessian: DMatrix<f64>,
    optimum: Option<Optimum>,
}

impl RidgeProblem {
    /// Builds the problem and caches `lambda`, `mu` and, when the Hessian is
    /// nonsingular, the exact minimizer.
    pub fn new(data: Dataset, lambda_hat: f64) -> Result<Self> {
        if !(lambda_hat >= 0.0) || !lambda_hat.is_finite() {
            return Err(Error::invalid(format!(
                "lambda_hat must be finite and >= 0, got {lambda_hat}"
            )));
        }
        let d = data.d();
        let moment = data.second_moment();
        // The shift is applied after the eigensolve: inverse iteration on the
        // unshifted moment sees well-separated relative gaps.
        let lambda = (smallest_eigenvalue(&moment).max(0.0) + lambda_hat).max(lambda_hat);
        let hessian = moment + DMatrix::identity(d, d) * lambda_hat;
        let mut p = RidgeProblem {
            data,
            lambda_hat,
            lambda,
            mu: 1.0 + lambda_hat,
            hessian,
            optimum: None,
        };
        p.optimum = p.solve().ok();
        Ok(p)
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn lambda_hat(&self) -> f64 {
        self.lambda_hat
    }

    /// Strong convexity: smallest eigenvalue of the Hessian.
    pub fn strong_convexity(&self) -> f64 {
        self.lambda
    }

    /// Smoothness of every `f_i`: `1 + lambda_hat`.
    pub fn smoothness(&self) -> f64 {
        self.mu
    }

    /// `(1/m) sum x_i x_i^T + lambda_hat I`.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// `(1/m) sum y_i x_i`.
    pub fn linear_term(&self) -> Vec<f64> {
        let d = self.data.d();
        let m = self.data.m();
        let idx: Vec<usize> = (0..m).collect();
        let mut b = vec![0.0; d];
        linalg::pairwise_sum_vec(
            &idx,
            d,
            &|i, acc: &mut [f64]| linalg::axpy(self.data.label(i), self.data.row(i), acc),
            &mut b,
        );
        b.iter_mut().for_each(|v| *v /= m as f64);
        b
    }

    /// `(w*, F(w*))`, solving `H w = b` by Cholesky.
    pub fn exact_minimizer(&self) -> Result<(Vec<f64>, f64)> {
        let opt = self.optimum()?;
        Ok((opt.w.clone(), opt.value))
    }

    fn solve(&self) -> Result<Optimum> {
        if self.lambda < SINGULAR_CUTOFF {
            return Err(Error::SingularHessian { lambda: self.lambda });
        }
        let b = DVector::from_vec(self.linear_term());
        let chol = self
            .hessian
            .clone()
            .cholesky()
            .ok_or(Error::SingularHessian { lambda: self.lambda })?;
        let w = chol.solve(&b).as_slice().to_vec();
        let value = self.objective_unchecked(&w);
        Ok(Optimum { w, value })
    }
}

fn smallest_eigenvalue(h: &DMatrix<f64>) -> f64 {
    if h.nrows() > DENSE_EIGEN_MAX_DIM {
        linalg::min_eigenvalue_inverse_iteration(h, 1e-10, 100_000)
    } else {
        linalg::sym_eigenvalues(h)[0]
    }
}

impl Objective for RidgeProblem {
    fn dataset(&self) -> &Dataset {
        &self.data
    }

    #[inline]
    fn loss_unchecked(&self, i: usize, w: &[f64]) -> f64 {
        let r = dot(w, self.data.row(i)) - self.data.label(i);
        0.5 * r * r + 0.5 * self.lambda_hat * dot(w, w)
    }

    #[inline]
    fn add_gradient_unchecked(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let x = self.data.row(i);
        let r = dot(w, x) - self.data.label(i);
        for ((o, xj), wj) in out.iter_mut().zip(x).zip(w) {
            *o += r * xj + self.lambda_hat * wj;
        }
    }

    fn optimum(&self) -> Result<&Optimum> {
        self.optimum
            .as_ref()
            .ok_or(Error::SingularHessian { lambda: self.lambda })
    }

    /// `(1/2)(w - w*)^T H (w - w*)`, exact for a quadratic and free of the
    /// cancellation in `F(w) - F(w*)`.
    fn fast_suboptimality(&self, w: &[f64]) -> Option<f64> {
        let opt = self.optimum.as_ref()?;
        let d = self.data.d();
        let diff: Vec<f64> = w.iter().zip(&opt.w).map(|(a, b)| a - b).collect();
        let mut q = 0.0;
        for r in 0..d {
            let mut row = 0.0;
            for c in 0..d {
                row += self.hessian[(r, c)] * diff[c];
            }
            q += diff[r] * row;
        }
        Some(0.5 * q)
    }

    fn svrg_log_safety_bound(&self, epoch_len: usize, epochs: usize, eta: f64) -> Option<f64> {
        let applicable = self.lambda > 0.0 && self.lambda < 1.0 && eta > 0.0 && eta < 1.0;
        applicable.then(|| crate::svrg::appendix_b_bound(epoch_len, epochs, self.lambda))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `|z - y|`
    Absolute,
    /// `max(0, 1 - y z)`; subgradient 0 at the kink.
    Hinge,
    /// `(1/2)(z - y)^2`
    Squared,
}

impl LossKind {
    #[inline]
    pub fn value(self, z: f64, y: f64) -> f64 {
        match self {
            LossKind::Absolute => (z - y).abs(),
            LossKind::Hinge => (1.0 - y * z).max(0.0),
            LossKind::Squared => 0.5 * (z - y) * (z - y),
        }
    }

    /// A derivative (subgradient) in `z`. Ties at kinks resolve to 0.
    #[inline]
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            LossKind::Absolute => {
                if z > y {
                    1.0
                } else if z < y {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Hinge => {
                if y * z < 1.0 {
                    -y
                } else {
                    0.0
                }
            }
            LossKind::Squared => z - y,
        }
    }

    /// Bound on the scalar second derivative; `None` for nonsmooth losses.
    pub fn curvature(self) -> Option<f64> {
        match self {
            LossKind::Squared => Some(1.0),
            LossKind::Absolute | LossKind::Hinge => None,
        }
    }
}

/// `f_i(w) = loss(<w, x_i>, y_i) + (lambda_hat/2)||w||^2` over the ball of
/// radius `radius`.
#[derive(Debug, Clone)]
pub struct LipschitzLinearProblem {
    data: Dataset,
    loss: LossKind,
    lambda_hat: f64,
    radius: f64,
    optimum: Option<Optimum>,
}

impl LipschitzLinearProblem {
    pub fn new(data: Dataset, loss: LossKind, lambda_hat: f64, radius: f64) -> Result<Self> {
        if !(lambda_hat >= 0.0) || !lambda_hat.is_finite() {
            return Err(Error::invalid("lambda_hat must be finite and >= 0"));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::invalid("domain radius must be finite and > 0"));
        }
        Ok(LipschitzLinearProblem {
            data,
            loss,
            lambda_hat,
            radius,
            optimum: None,
        })
    }

    /// Uses `w` as the reference optimum (for instance a planted exact minimizer).
    pub fn with_reference(mut self, w: Vec<f64>) -> Result<Self> {
        self.check_dim(&w)?;
        let value = self.objective_unchecked(&w);
        self.optimum = Some(Optimum { w, value });
        Ok(self)
    }

    /// Approximates the constrained minimizer with projected subgradient
    /// descent on the full objective (steps `radius/sqrt(k)`, best iterate).
    pub fn with_estimated_optimum(self, iterations: usize) -> Result<Self> {
        let d = self.d();
        let mut w = vec![0.0; d];
        let mut best = (self.objective_unchecked(&w), w.clone());
        for k in 1..=iterations.max(1) {
            let g = self.full_gradient(&w)?;
            let gn = norm(&g);
            if gn == 0.0 {
                break;
            }
            let step = self.radius / (k as f64).sqrt() / gn;
            linalg::axpy(-step, &g, &mut w);
            linalg::project_ball(&mut w, self.radius);
            let v = self.objective_unchecked(&w);
            if v < best.0 {
                best = (v, w.clone());
            }
        }
        self.with_reference(best.1)
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn lambda_hat(&self) -> f64 {
        self.lambda_hat
    }

    fn max_abs_label(&self) -> f64 {
        self.data.labels().iter().fold(0.0f64, |a, y| a.max(y.abs()))
    }

    fn max_row_norm(&self) -> f64 {
        (0..self.data.m()).fold(0.0f64, |a, i| a.max(norm(self.data.row(i))))
    }

    /// Lipschitz constant of the scalar losses on `[-radius, radius]`.
    pub fn lipschitz(&self) -> f64 {
        match self.loss {
            LossKind::Absolute => 1.0,
            LossKind::Hinge => self.max_abs_label(),
            LossKind::Squared => self.radius + self.max_abs_label(),
        }
    }

    /// Smoothness of each `f_i`: scalar curvature times `max ||x_i||^2 <= 1`,
    /// plus `lambda_hat`. `None` for the nonsmooth losses.
    pub fn smoothness(&self) -> Option<f64> {
        self.loss.curvature().map(|c| c + self.lambda_hat)
    }

    /// Bound on `sup_{||w|| <= radius} ||grad f_i(w)||`.
    pub fn gradient_bound(&self) -> f64 {
        self.lipschitz() * self.max_row_norm() + self.lambda_hat * self.radius
    }

    /// Bound on `sup_{i, ||w|| <= radius} |f_i(w)|`.
    pub fn value_bound(&self) -> f64 {
        let y = self.max_abs_label();
        let b = self.radius;
        let scalar = match self.loss {
            LossKind::Absolute => b + y,
            LossKind::Hinge => 1.0 + y * b,
            LossKind::Squared => 0.5 * (b + y) * (b + y),
        };
        scalar + 0.5 * self.lambda_hat * b * b
    }
}

impl Objective for LipschitzLinearProblem {
    fn dataset(&self) -> &Dataset {
        &self.data
    }

    #[inline]
    fn loss_unchecked(&self, i: usize, w: &[f64]) -> f64 {
        let z = dot(w, self.data.row(i));
        self.loss.value(z, self.data.label(i)) + 0.5 * self.lambda_hat * dot(w, w)
    }

    #[inline]
    fn add_gradient_unchecked(&self, i: usize, w: &[f64], out: &mut [f64]) {
        let x = self.data.row(i);
        let g = self.loss.derivative(dot(w, x), self.data.label(i));
        for ((o, xj), wj) in out.iter_mut().zip(x).zip(w) {
            *o += g * xj + self.lambda_hat * wj;
        }
    }

    fn optimum(&self) -> Result<&Optimum> {
        self.optimum.as_ref().ok_or(Error::MissingOptimum)
    }
}
