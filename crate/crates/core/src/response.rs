//! Simulated users: basis functions, parametric price response and noisy
//! consumption observations.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scalar::{norm, Real};

/// Smallest price used when smoothing pushes a coordinate out of a
/// positive-only domain.
pub const PRICE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceDomain {
    AllReals,
    Positive,
}

impl PriceDomain {
    pub fn contains<T: Real>(self, price: &[T]) -> bool {
        match self {
            PriceDomain::AllReals => price.iter().all(|p| p.is_finite()),
            PriceDomain::Positive => price.iter().all(|&p| p.is_finite() && p > T::zero()),
        }
    }

    fn label(self) -> &'static str {
        match self {
            PriceDomain::AllReals => "all reals",
            PriceDomain::Positive => "positive reals",
        }
    }
}

/// A per-user basis `h_i`: maps a `V`-period price profile to a `V×m` matrix
/// whose row `v` is the signature vector for period `v`.
pub trait Basis<T: Real>: Send + Sync + Debug {
    fn periods(&self) -> usize;
    fn dim(&self) -> usize;
    fn domain(&self) -> PriceDomain;

    /// Evaluates the basis without checking the domain.
    fn eval_unchecked(&self, price: &[T]) -> DMatrix<T>;

    fn eval(&self, price: &[T]) -> Result<DMatrix<T>> {
        if price.len() != self.periods() {
            return Err(Error::Dimension {
                context: "basis price",
                expected: self.periods(),
                got: price.len(),
            });
        }
        if !self.domain().contains(price) {
            let bad = price
                .iter()
                .find(|p| !PriceDomain::contains(self.domain(), std::slice::from_ref(*p)))
                .copied()
                .unwrap_or_else(T::zero);
            return Err(Error::Domain {
                price: bad.to_f64_lossy(),
                domain: self.domain().label(),
            });
        }
        Ok(self.eval_unchecked(price))
    }
}

/// Shared handle to a basis.
pub type BasisRef<T> = Arc<dyn Basis<T>>;

/// `h_v(γ) = 1/γ_v` with a single parameter: the response `θ/γ_v` of a user
/// whose utility is `θ log x`.
#[derive(Debug, Clone, Copy)]
pub struct InversePriceBasis {
    pub periods: usize,
}

impl<T: Real> Basis<T> for InversePriceBasis {
    fn periods(&self) -> usize {
        self.periods
    }
    fn dim(&self) -> usize {
        1
    }
    fn domain(&self) -> PriceDomain {
        PriceDomain::Positive
    }
    fn eval_unchecked(&self, price: &[T]) -> DMatrix<T> {
        DMatrix::from_fn(price.len(), 1, |v, _| T::one() / price[v])
    }
}

/// `h_v(γ) = (e^{-γ_v}, …)`, a smooth decreasing signature over all reals,
/// one column per rate.
#[derive(Debug, Clone)]
pub struct ExpDecayBasis<T: Real> {
    pub periods: usize,
    pub rates: Vec<T>,
}

impl<T: Real> Basis<T> for ExpDecayBasis<T> {
    fn periods(&self) -> usize {
        self.periods
    }
    fn dim(&self) -> usize {
        self.rates.len()
    }
    fn domain(&self) -> PriceDomain {
        PriceDomain::AllReals
    }
    fn eval_unchecked(&self, price: &[T]) -> DMatrix<T> {
        DMatrix::from_fn(price.len(), self.rates.len(), |v, k| (-self.rates[k] * price[v]).exp())
    }
}

/// A user's true price response `x(γ) = H(γ)·θ*`.
#[derive(Debug, Clone)]
pub struct ResponseModel<T: Real> {
    basis: BasisRef<T>,
    theta_true: DVector<T>,
    norm_bound: T,
}

impl<T: Real> ResponseModel<T> {
    pub fn new(basis: BasisRef<T>, theta_true: Vec<T>, norm_bound: T) -> Result<Self> {
        if theta_true.len() != basis.dim() {
            return Err(Error::Dimension {
                context: "response parameter",
                expected: basis.dim(),
                got: theta_true.len(),
            });
        }
        if theta_true.iter().any(|&t| t < T::zero()) || theta_true.iter().all(|&t| t == T::zero()) {
            return Err(Error::Config("true parameter must be nonnegative and nonzero".into()));
        }
        if norm(&theta_true) > norm_bound {
            return Err(Error::Config(format!(
                "true parameter norm {} exceeds bound {}",
                norm(&theta_true),
                norm_bound
            )));
        }
        Ok(Self {
            basis,
            theta_true: DVector::from_vec(theta_true),
            norm_bound,
        })
    }

    pub fn basis(&self) -> &BasisRef<T> {
        &self.basis
    }

    pub fn theta_true(&self) -> &DVector<T> {
        &self.theta_true
    }

    pub fn norm_bound(&self) -> T {
        self.norm_bound
    }

    pub fn periods(&self) -> usize {
        self.basis.periods()
    }

    /// Same basis, scaled parameter. Used by linearity checks.
    pub fn with_theta(&self, theta: Vec<T>) -> Result<Self> {
        let bound = self.norm_bound.max(norm(&theta));
        Self::new(self.basis.clone(), theta, bound)
    }

    pub fn mean_consumption(&self, price: &[T]) -> Result<Vec<T>> {
        let h = self.basis.eval(price)?;
        Ok((h * &self.theta_true).iter().copied().collect())
    }

    /// One noisy draw of the consumption; advances only `noise`.
    pub fn observe(&self, user: usize, noise: &mut NoiseSource<T>, price: &[T]) -> Result<Observation<T>> {
        let mut consumption = self.mean_consumption(price)?;
        for x in consumption.iter_mut() {
            *x += noise.draw();
        }
        Ok(Observation { user, consumption })
    }

    /// `(1/2V) Σ_v [x(γ + ρe_v) + x(γ − ρe_v)]`, with perturbed prices clamped
    /// to [`PRICE_FLOOR`] on positive-only domains.
    pub fn smoothed_mean(&self, price: &[T], offset: T) -> Result<Vec<T>> {
        smoothed_response(self.basis.as_ref(), self.theta_true.as_slice(), price, offset)
    }
}

/// Smoothed response of an arbitrary parameter; see [`ResponseModel::smoothed_mean`].
pub fn smoothed_response<T: Real>(basis: &dyn Basis<T>, theta: &[T], price: &[T], offset: T) -> Result<Vec<T>> {
    let periods = basis.periods();
    if price.len() != periods {
        return Err(Error::Dimension {
            context: "smoothed price",
            expected: periods,
            got: price.len(),
        });
    }
    if theta.len() != basis.dim() {
        return Err(Error::Dimension {
            context: "smoothed parameter",
            expected: basis.dim(),
            got: theta.len(),
        });
    }
    let floor = T::lit(PRICE_FLOOR);
    let clamp = |p: T| match basis.domain() {
        PriceDomain::Positive => p.max(floor),
        PriceDomain::AllReals => p,
    };
    let mut acc = vec![T::zero(); periods];
    let mut shifted = price.to_vec();
    for v in 0..periods {
        for sign in [T::one(), -T::one()] {
            shifted[v] = clamp(price[v] + sign * offset);
            let h = basis.eval(&shifted)?;
            for (k, &t) in theta.iter().enumerate() {
                for (a, &x) in acc.iter_mut().zip(h.column(k).iter()) {
                    *a += x * t;
                }
            }
        }
        shifted[v] = price[v];
    }
    let scale = T::one() / T::from_usize_lossy(2 * periods);
    acc.iter_mut().for_each(|x| *x *= scale);
    Ok(acc)
}

/// Seeded Gaussian noise stream with standard deviation `sigma`.
#[derive(Debug, Clone)]
pub struct NoiseSource<T: Real> {
    sigma: T,
    rng: ChaCha8Rng,
}

impl<T: Real> NoiseSource<T> {
    pub fn new(sigma: T, seed: u64) -> Self {
        Self {
            sigma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sigma(&self) -> T {
        self.sigma
    }

    pub fn draw(&mut self) -> T {
        // always advance the stream so σ = 0 runs consume identical randomness
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.sigma * T::lit(z)
    }
}

/// Noisy consumption of one user over all periods.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T: Real> {
    pub user: usize,
    pub consumption: Vec<T>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inverse_model(theta: f64) -> ResponseModel<f64> {
        ResponseModel::new(Arc::new(InversePriceBasis { periods: 1 }), vec![theta], 10.0).unwrap()
    }

    #[test]
    fn scalar_inverse_response() {
        let m = inverse_model(3.0);
        assert_eq!(m.mean_consumption(&[2.0]).unwrap(), vec![1.5]);
    }

    #[test]
    fn response_vanishes_at_large_price() {
        let m = ResponseModel::new(
            Arc::new(ExpDecayBasis { periods: 1, rates: vec![1.0] }),
            vec![0.5],
            1.0,
        )
        .unwrap();
        assert!(m.mean_consumption(&[60.0]).unwrap()[0] < 1e-25);
    }

    #[test]
    fn nonpositive_price_is_a_domain_error() {
        let m = inverse_model(1.0);
        assert!(matches!(m.mean_consumption(&[0.0]), Err(Error::Domain { .. })));
        assert!(matches!(m.mean_consumption(&[-1.0]), Err(Error::Domain { .. })));
    }

    #[test]
    fn model_rejects_bad_parameters() {
        let b: BasisRef<f64> = Arc::new(InversePriceBasis { periods: 1 });
        assert!(ResponseModel::new(b.clone(), vec![0.0], 1.0).is_err());
        assert!(ResponseModel::new(b.clone(), vec![-1.0], 1.0).is_err());
        assert!(ResponseModel::new(b, vec![2.0], 1.0).is_err());
    }

    #[test]
    fn zero_noise_observation_is_the_mean() {
        let m = inverse_model(2.0);
        let mut noise = NoiseSource::new(0.0, 4);
        let o = m.observe(0, &mut noise, &[4.0]).unwrap();
        assert_eq!(o.consumption, vec![0.5]);
    }

    #[test]
    fn same_seed_same_draws() {
        let m = inverse_model(2.0);
        let mut a = NoiseSource::new(1.5, 99);
        let mut b = NoiseSource::new(1.5, 99);
        for _ in 0..50 {
            assert_eq!(
                m.observe(0, &mut a, &[1.0]).unwrap(),
                m.observe(0, &mut b, &[1.0]).unwrap()
            );
        }
    }

    #[test]
    fn noise_mean_concentrates() {
        let m = ResponseModel::new(
            Arc::new(ExpDecayBasis { periods: 2, rates: vec![1.0, 0.5] }),
            vec![0.7, 0.9],
            2.0,
        )
        .unwrap();
        let price = [0.3, 1.2];
        let mean = m.mean_consumption(&price).unwrap();
        let mut noise = NoiseSource::new(1.5, 2024);
        let draws = 100_000;
        let mut acc = [0.0; 2];
        for _ in 0..draws {
            let o = m.observe(0, &mut noise, &price).unwrap();
            acc[0] += o.consumption[0];
            acc[1] += o.consumption[1];
        }
        let bound = 3.0 * 1.5 / (draws as f64).sqrt();
        for v in 0..2 {
            assert!((acc[v] / draws as f64 - mean[v]).abs() < bound);
        }
    }

    #[derive(Debug)]
    struct ConstantBasis;
    impl Basis<f64> for ConstantBasis {
        fn periods(&self) -> usize {
            2
        }
        fn dim(&self) -> usize {
            1
        }
        fn domain(&self) -> PriceDomain {
            PriceDomain::Positive
        }
        fn eval_unchecked(&self, _: &[f64]) -> DMatrix<f64> {
            DMatrix::from_element(2, 1, 0.4)
        }
    }

    #[derive(Debug)]
    struct AffineBasis;
    impl Basis<f64> for AffineBasis {
        fn periods(&self) -> usize {
            2
        }
        fn dim(&self) -> usize {
            1
        }
        fn domain(&self) -> PriceDomain {
            PriceDomain::AllReals
        }
        fn eval_unchecked(&self, p: &[f64]) -> DMatrix<f64> {
            DMatrix::from_fn(2, 1, |v, _| 10.0 - 0.5 * p[0] - (v as f64 + 1.0) * p[1])
        }
    }

    #[test]
    fn smoothing_constant_response_is_identity() {
        let m = ResponseModel::new(Arc::new(ConstantBasis), vec![2.5], 3.0).unwrap();
        let s = m.smoothed_mean(&[2.0, 5.0], 1.0).unwrap();
        for x in s {
            assert!((x - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn smoothing_affine_response_is_exact() {
        let m = ResponseModel::new(Arc::new(AffineBasis), vec![1.0], 3.0).unwrap();
        let p = [1.5, -0.5];
        let s = m.smoothed_mean(&p, 0.7).unwrap();
        let u = m.mean_consumption(&p).unwrap();
        for v in 0..2 {
            assert!((s[v] - u[v]).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothing_clamps_to_positive_domain() {
        let m = inverse_model(1.0);
        // γ − ρ would be negative; the clamp keeps evaluation defined
        let s = m.smoothed_mean(&[0.5], 1.0).unwrap();
        assert!(s[0].is_finite() && s[0] > 0.0);
    }

    #[test]
    fn response_is_linear_in_theta() {
        let m = ResponseModel::<f64>::new(
            Arc::new(ExpDecayBasis { periods: 3, rates: vec![0.3, 1.1] }),
            vec![0.6, 0.8],
            2.0,
        )
        .unwrap();
        let doubled = m.with_theta(vec![1.2, 1.6]).unwrap();
        for p in [[0.0, 1.0, 2.0], [-1.0, 0.5, 3.0]] {
            let a = m.mean_consumption(&p).unwrap();
            let b = doubled.mean_consumption(&p).unwrap();
            for v in 0..3 {
                assert!((2.0 * a[v] - b[v]).abs() < 1e-12);
            }
        }
    }
}
