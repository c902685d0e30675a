//! Regularized least-squares estimation and confidence-ellipsoid geometry.
//!
//! Each learner keeps an [`RlsState`] per parameter vector. The state holds the
//! regularized gram matrix `V = ν·I + Σ h hᵀ` and the moment `b = Σ h·x̄`; its
//! [`center`](RlsState::center) is the ridge estimate `V⁻¹ b`. Together with a
//! radius from [`BetaSchedule`] it defines a [`ConfidenceEllipsoid`]
//! `{θ : ‖θ − θ̂‖_V ≤ √β}` whose support functions drive both the safety
//! certificates and the optimistic price selection.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Running regularized least-squares state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RlsState<T: Real> {
    dim: usize,
    regularizer: T,
    gram: DMatrix<T>,
    moment: DVector<T>,
    sample_count: usize,
}

impl<T: Real> RlsState<T> {
    pub fn new(dim: usize, regularizer: T) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("estimator dimension must be positive".into()));
        }
        if !(regularizer > T::zero()) {
            return Err(Error::Config("regularizer must be strictly positive".into()));
        }
        Ok(Self {
            dim,
            regularizer,
            gram: DMatrix::identity(dim, dim) * regularizer,
            moment: DVector::zeros(dim),
            sample_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn regularizer(&self) -> T {
        self.regularizer
    }

    pub fn gram(&self) -> &DMatrix<T> {
        &self.gram
    }

    pub fn moment(&self) -> &DVector<T> {
        &self.moment
    }

    /// Number of rank-one updates absorbed so far.
    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Returns the state after one rank-one update with `features` and the
    /// scalar `observation`.
    pub fn update(&self, features: &[T], observation: T) -> Result<Self> {
        let mut next = self.clone();
        next.update_in_place(features, observation)?;
        Ok(next)
    }

    /// In-place variant of [`update`](Self::update) used by the run loops.
    pub fn update_in_place(&mut self, features: &[T], observation: T) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::Dimension {
                context: "rls update",
                expected: self.dim,
                got: features.len(),
            });
        }
        for r in 0..self.dim {
            self.moment[r] += features[r] * observation;
            for c in 0..self.dim {
                self.gram[(r, c)] += features[r] * features[c];
            }
        }
        self.sample_count += 1;
        Ok(())
    }

    /// Ridge estimate `V⁻¹ b`.
    pub fn center(&self) -> DVector<T> {
        let chol = Cholesky::new(self.gram.clone())
            .expect("gram matrix is positive definite by construction");
        chol.solve(&self.moment)
    }
}

/// Confidence radius schedule `√β^t = σ √(m log((1 + t L²/ν)/(δ/n))) + √ν S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaSchedule<T: Real> {
    pub sigma: T,
    pub dim: usize,
    pub regularizer: T,
    pub norm_bound: T,
    pub confidence: T,
    pub users: usize,
    pub basis_bound: T,
}

impl<T: Real> BetaSchedule<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: T| v > T::zero();
        if self.sigma < T::zero() {
            return Err(Error::Config("sigma must be nonnegative".into()));
        }
        if self.dim == 0 || self.users == 0 {
            return Err(Error::Config("beta schedule needs m ≥ 1 and n ≥ 1".into()));
        }
        if !positive(self.regularizer) || !positive(self.norm_bound) || !positive(self.basis_bound)
        {
            return Err(Error::Config("beta schedule needs ν, S, L > 0".into()));
        }
        if !(self.confidence > T::zero() && self.confidence < T::one()) {
            return Err(Error::Config("confidence δ must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// `√β^t` for `t` absorbed observations.
    pub fn radius(&self, step: usize) -> T {
        let t = T::from_usize_lossy(step);
        let m = T::from_usize_lossy(self.dim);
        let n = T::from_usize_lossy(self.users);
        let growth = T::one() + t * self.basis_bound * self.basis_bound / self.regularizer;
        let log_term = (growth / (self.confidence / n)).ln();
        self.sigma * (m * log_term).sqrt() + self.regularizer.sqrt() * self.norm_bound
    }

    /// `β^t`.
    pub fn beta(&self, step: usize) -> T {
        let r = self.radius(step);
        r * r
    }
}

/// The set `{θ : ‖θ − center‖_gram ≤ radius}`, optionally intersected with the
/// nonnegative orthant for lower bounds on nonnegative directions.
#[derive(Debug, Clone)]
pub struct ConfidenceEllipsoid<T: Real> {
    center: DVector<T>,
    gram: DMatrix<T>,
    chol: Cholesky<T, Dyn>,
    radius: T,
    nonneg_clip: bool,
}

impl<T: Real> ConfidenceEllipsoid<T> {
    pub fn new(center: DVector<T>, gram: DMatrix<T>, radius: T, nonneg_clip: bool) -> Result<Self> {
        if gram.nrows() != center.len() || gram.ncols() != center.len() {
            return Err(Error::Dimension {
                context: "ellipsoid gram",
                expected: center.len(),
                got: gram.nrows(),
            });
        }
        if radius < T::zero() {
            return Err(Error::Config("ellipsoid radius must be nonnegative".into()));
        }
        let chol = Cholesky::new(gram.clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self {
            center,
            gram,
            chol,
            radius,
            nonneg_clip,
        })
    }

    /// Builds the ellipsoid of an RLS state at radius `radius`.
    pub fn from_state(state: &RlsState<T>, radius: T, nonneg_clip: bool) -> Result<Self> {
        Self::new(state.center(), state.gram().clone(), radius, nonneg_clip)
    }

    pub fn center(&self) -> &DVector<T> {
        &self.center
    }

    pub fn gram(&self) -> &DMatrix<T> {
        &self.gram
    }

    pub fn radius(&self) -> T {
        self.radius
    }

    pub fn nonneg_clip(&self) -> bool {
        self.nonneg_clip
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn with_radius(&self, radius: T) -> Self {
        Self {
            radius,
            ..self.clone()
        }
    }

    /// `‖a‖_{V⁻¹} = √(aᵀ V⁻¹ a)`.
    pub fn dual_norm(&self, direction: &[T]) -> T {
        let a = DVector::from_column_slice(direction);
        let y = self.chol.solve(&a);
        a.dot(&y).max(T::zero()).sqrt()
    }

    fn center_dot(&self, direction: &[T]) -> T {
        self.center
            .iter()
            .zip(direction)
            .fold(T::zero(), |acc, (&c, &a)| acc + c * a)
    }

    fn check_dim(&self, direction: &[T]) -> Result<()> {
        if direction.len() != self.dim() {
            return Err(Error::Dimension {
                context: "ellipsoid direction",
                expected: self.dim(),
                got: direction.len(),
            });
        }
        Ok(())
    }

    /// `max aᵀθ` over the ellipsoid: `aᵀθ̂ + r‖a‖_{V⁻¹}`.
    pub fn support_max(&self, direction: &[T]) -> Result<T> {
        self.check_dim(direction)?;
        Ok(self.center_dot(direction) + self.radius * self.dual_norm(direction))
    }

    /// `min aᵀθ` over the ellipsoid: `aᵀθ̂ − r‖a‖_{V⁻¹}`, clamped below at
    /// zero when the nonnegativity clip is set and `a ≥ 0`.
    pub fn support_min(&self, direction: &[T]) -> Result<T> {
        self.check_dim(direction)?;
        let raw = self.center_dot(direction) - self.radius * self.dual_norm(direction);
        if self.nonneg_clip && direction.iter().all(|&a| a >= T::zero()) {
            Ok(raw.max(T::zero()))
        } else {
            Ok(raw)
        }
    }

    /// Membership test `‖p − θ̂‖_V ≤ r` (and `p ≥ 0` when clipped). A relative
    /// slack of `1e-9` absorbs round-off for boundary points.
    pub fn contains(&self, point: &[T]) -> Result<bool> {
        self.check_dim(point)?;
        if self.nonneg_clip && point.iter().any(|&p| p < T::zero()) {
            return Ok(false);
        }
        let d = DVector::from_iterator(
            point.len(),
            point.iter().zip(self.center.iter()).map(|(&p, &c)| p - c),
        );
        let dist = d.dot(&(&self.gram * &d)).max(T::zero()).sqrt();
        let tol = T::lit(1e-9) * (T::one() + self.radius);
        Ok(dist <= self.radius + tol)
    }
}

/// Smallest eigenvalue of a symmetric matrix.
///
/// Inputs whose asymmetry exceeds `1e-8` relative to their magnitude are
/// rejected; smaller asymmetry is removed by projecting onto the symmetric part.
pub fn min_eig<T: Real>(matrix: &DMatrix<T>) -> Result<T> {
    if !matrix.is_square() {
        return Err(Error::Dimension {
            context: "min_eig",
            expected: matrix.nrows(),
            got: matrix.ncols(),
        });
    }
    let asym = (matrix - matrix.transpose()).abs().max();
    let scale = matrix.abs().max().max(T::one());
    if asym > T::lit(1e-8) * scale {
        return Err(Error::NotSymmetric {
            asymmetry: asym.to_f64_lossy(),
        });
    }
    let sym = (matrix + matrix.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(sym);
    Ok(eig.eigenvalues.iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b)))
}
