//! Closed-form ridge regression from voxel vectors to latent vectors.
//!
//! Weights solve `(Xc^T Xc + lambda I) W = Xc^T Zc` on column-centered data
//! with one Cholesky factorization shared by all `D` targets; the intercept
//! restores the means.

use crate::error::{Error, Result};
use crate::linalg::{condition_estimate, Cholesky, Matrix};
use crate::scalar::Scalar;
use crate::tensor::LatentVector;

/// Systems with `lambda = 0` and a larger condition estimate are refused.
pub const MAX_CONDITION: f64 = 1e12;

pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeOptions {
    pub lambda: f64,
    pub fit_intercept: bool,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            fit_intercept: true,
        }
    }
}

impl RidgeOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel<T> {
    /// `V x D`
    weights: Matrix<T>,
    intercept: Vec<T>,
    lambda: f64,
}

impl<T: Scalar> RidgeModel<T> {
    pub fn new(weights: Matrix<T>, intercept: Vec<T>, lambda: f64) -> Result<Self> {
        if intercept.len() != weights.cols() {
            return Err(Error::shape(weights.cols(), intercept.len()));
        }
        if intercept.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ridge intercept".into()));
        }
        if !(lambda >= 0.0) {
            return Err(Error::validation(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self {
            weights,
            intercept,
            lambda,
        })
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    pub fn intercept(&self) -> &[T] {
        &self.intercept
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn voxel_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.weights.cols()
    }

    /// `z = x^T W + b` written into `out`.
    pub fn predict_into(&self, x: &[T], out: &mut [T]) -> Result<()> {
        if x.len() != self.voxel_dim() {
            return Err(Error::shape(self.voxel_dim(), x.len()));
        }
        out.copy_from_slice(&self.intercept);
        for (v, &xv) in x.iter().enumerate() {
            if xv == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.weights.row(v)) {
                *o = *o + xv * w;
            }
        }
        Ok(())
    }

    /// Predicts every row of `x`.
    pub fn predict_batch(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        if x.cols() != self.voxel_dim() {
            return Err(Error::shape(self.voxel_dim(), x.cols()));
        }
        let d = self.latent_dim();
        let mut out = Matrix::zeros(x.rows(), d);
        for r in 0..x.rows() {
            self.predict_into(x.row(r), out.row_mut(r))?;
        }
        Ok(out)
    }
}

/// Factorized ridge system for a fixed design; refits against new targets
/// only cost the right-hand-side solve.
#[derive(Debug, Clone)]
pub struct RidgeSystem<T> {
    x_mean: Vec<T>,
    x_centered: Matrix<T>,
    factor: Cholesky<T>,
    options: RidgeOptions,
}

impl<T: Scalar> RidgeSystem<T> {
    pub fn new(x: &Matrix<T>, options: RidgeOptions) -> Result<Self> {
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::validation("ridge design must be non-empty"));
        }
        if !(options.lambda >= 0.0) || !options.lambda.is_finite() {
            return Err(Error::validation(format!(
                "lambda must be finite and >= 0, got {}",
                options.lambda
            )));
        }
        let x_mean = if options.fit_intercept {
            x.column_means()
        } else {
            vec![T::zero(); x.cols()]
        };
        let x_centered = x.sub_row(&x_mean);
        let mut gram = x_centered.t_matmul(&x_centered)?;
        let lambda = T::lit(options.lambda);
        for i in 0..gram.rows() {
            gram.set(i, i, gram.get(i, i) + lambda);
        }
        let factor = Cholesky::factor(&gram).map_err(|e| match e {
            Error::Singular(msg) => Error::Singular(format!(
                "ridge normal equations with lambda = {}: {msg}",
                options.lambda
            )),
            other => other,
        })?;
        if options.lambda == 0.0 {
            let cond = condition_estimate(&gram, &factor, 100).as_f64();
            if !(cond <= MAX_CONDITION) {
                return Err(Error::Singular(format!(
                    "lambda = 0 and condition estimate {cond:.3e} exceeds {MAX_CONDITION:e}"
                )));
            }
        }
        Ok(Self {
            x_mean,
            x_centered,
            factor,
            options,
        })
    }

    pub fn samples(&self) -> usize {
        self.x_centered.rows()
    }

    pub fn fit(&self, z: &Matrix<T>) -> Result<RidgeModel<T>> {
        if z.rows() != self.samples() {
            return Err(Error::shape(
                format!("{} target rows", self.samples()),
                z.rows(),
            ));
        }
        let z_mean = if self.options.fit_intercept {
            z.column_means()
        } else {
            vec![T::zero(); z.cols()]
        };
        let rhs = self.x_centered.t_matmul(&z.sub_row(&z_mean))?;
        let weights = self.factor.solve(&rhs)?;
        let mut intercept = z_mean;
        for (v, &xm) in self.x_mean.iter().enumerate() {
            for (b, &w) in intercept.iter_mut().zip(weights.row(v)) {
                *b = *b - xm * w;
            }
        }
        if weights.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("ridge weights".into()));
        }
        RidgeModel::new(weights, intercept, self.options.lambda)
    }
}

/// Fits ridge regression `Z ~ X W + b` with intercept.
pub fn ridge_fit<T: Scalar>(x: &Matrix<T>, z: &Matrix<T>, lambda: f64) -> Result<RidgeModel<T>> {
    ridge_fit_with(x, z, RidgeOptions::with_lambda(lambda))
}

pub fn ridge_fit_with<T: Scalar>(
    x: &Matrix<T>,
    z: &Matrix<T>,
    options: RidgeOptions,
) -> Result<RidgeModel<T>> {
    if x.rows() != z.rows() {
        return Err(Error::shape(format!("{} target rows", x.rows()), z.rows()));
    }
    RidgeSystem::new(x, options)?.fit(z)
}

pub fn ridge_predict<T: Scalar>(model: &RidgeModel<T>, x: &[T]) -> Result<LatentVector<T>> {
    let mut out = vec![T::zero(); model.latent_dim()];
    model.predict_into(x, &mut out)?;
    Ok(LatentVector::from_raw(out))
}

/// `10^-3 .. 10^3`, one point per decade.
pub fn default_lambda_grid() -> Vec<f64> {
    (-3..=3).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSearch {
    pub best: f64,
    /// `(lambda, mean held-out squared error per sample)`
    pub scores: Vec<(f64, f64)>,
}

/// Contiguous k-fold cross-validation over `grid`.
pub fn select_lambda<T: Scalar>(
    x: &Matrix<T>,
    z: &Matrix<T>,
    grid: &[f64],
    folds: usize,
) -> Result<LambdaSearch> {
    let n = x.rows();
    if folds < 2 || folds > n {
        return Err(Error::validation(format!(
            "need 2 <= folds <= samples, got {folds} folds for {n} samples"
        )));
    }
    if grid.is_empty() {
        return Err(Error::validation("empty lambda grid"));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut sse = 0.0;
        for f in 0..folds {
            let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
            let train: Vec<usize> = (0..lo).chain(hi..n).collect();
            let test: Vec<usize> = (lo..hi).collect();
            let model = ridge_fit(&x.select_rows(&train), &z.select_rows(&train), lambda)?;
            let pred = model.predict_batch(&x.select_rows(&test))?;
            let truth = z.select_rows(&test);
            sse += pred
                .data()
                .iter()
                .zip(truth.data())
                .map(|(&p, &t)| (p - t).as_f64().powi(2))
                .sum::<f64>();
        }
        scores.push((lambda, sse / n as f64));
    }
    let best = scores
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|s| s.0)
        .expect("non-empty grid");
    Ok(LambdaSearch { best, scores })
}
