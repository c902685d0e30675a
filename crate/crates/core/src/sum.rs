//! Safe utility maximization: users maximize profit, so their utility is the
//! line integral of the inverse price response. The coordinator scores
//! candidates with a plug-in parameter `θ̌` and optimistic consumption.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimator::ConfidenceEllipsoid;
use crate::harness::ExperimentTrace;
use crate::response::{smoothed_response, Basis, BasisRef, NoiseSource, ResponseModel};
use crate::safety::{BasisCache, ConsumptionBounds, ConstraintSet, JointPrice, LoadTable, PriceGrid};
use crate::scalar::{norm, Real};
use crate::spr::{best_safe, Engine, LearnerConfig, Scorer};

/// What the inverse solver does when no exact root is found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InverseMode {
    /// Fail with the residual.
    Strict,
    /// Return the price minimizing the squared residual.
    LeastSquares,
}

#[derive(Debug, Clone)]
pub struct InverseOptions<T: Real> {
    /// Smoothing offset `ρ_s`; `None` inverts the raw response.
    pub smoothing: Option<T>,
    /// Root tolerance in consumption units (max norm).
    pub tolerance: T,
    pub max_iterations: usize,
    pub mode: InverseMode,
    /// Search box for each price coordinate.
    pub price_bounds: (T, T),
    /// Try the restart points when the first start stalls.
    pub restarts: bool,
}

impl<T: Real> Default for InverseOptions<T> {
    fn default() -> Self {
        Self {
            smoothing: Some(T::one()),
            tolerance: T::lit(1e-6),
            max_iterations: 200,
            mode: InverseMode::Strict,
            price_bounds: (T::lit(1e-9), T::lit(1e9)),
            restarts: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseSolution<T: Real> {
    pub price: Vec<T>,
    /// `‖x(price) − target‖_∞`.
    pub residual: T,
    pub iterations: usize,
}

/// Mean (optionally smoothed) response of `theta` at `price`.
pub fn response_at<T: Real>(basis: &dyn Basis<T>, theta: &[T], price: &[T], smoothing: Option<T>) -> Result<Vec<T>> {
    match smoothing {
        Some(offset) => smoothed_response(basis, theta, price, offset),
        None => {
            let h = basis.eval(price)?;
            Ok((h * DVector::from_column_slice(theta)).iter().copied().collect())
        }
    }
}

fn max_abs<T: Real>(r: &[T]) -> T {
    r.iter().fold(T::zero(), |a, &x| a.max(x.abs()))
}

/// Largest move of any price in one iteration.
const MAX_STEP: f64 = 1.0;

/// Price `γ ≻ 0` whose response to `theta` equals `target`: damped Newton
/// (Levenberg–Marquardt) on prices with a forward-difference Jacobian, restarted
/// from [`restarts`] when a start stalls, falling back to bisection on the
/// log-price for a single period. In least-squares mode the best point found is
/// returned.
pub fn inverse_response<T: Real>(
    basis: &dyn Basis<T>,
    theta: &[T],
    target: &[T],
    options: &InverseOptions<T>,
    start: Option<&[T]>,
) -> Result<InverseSolution<T>> {
    let periods = basis.periods();
    if target.len() != periods {
        return Err(Error::Dimension {
            context: "inverse target",
            expected: periods,
            got: target.len(),
        });
    }
    if theta.len() != basis.dim() {
        return Err(Error::Dimension {
            context: "inverse parameter",
            expected: basis.dim(),
            got: theta.len(),
        });
    }
    if theta.iter().any(|&t| t < T::zero()) || theta.iter().all(|&t| t == T::zero()) {
        return Err(Error::Config("inverse response needs a nonnegative, nonzero parameter".into()));
    }
    if target.iter().any(|&x| !(x >= T::zero())) {
        return Err(Error::Config("inverse response needs a nonnegative target".into()));
    }
    let (lo, hi) = options.price_bounds;
    let clamp = |p: T| p.max(lo).min(hi);
    let residual = |price: &[T]| -> Result<Vec<T>> {
        let x = response_at(basis, theta, price, options.smoothing)?;
        Ok(x.iter().zip(target).map(|(&a, &b)| a - b).collect())
    };
    let sq = |r: &[T]| r.iter().fold(T::zero(), |a, &x| a + x * x);

    let first: Vec<T> = match start {
        Some(p) if p.len() == periods => p.iter().map(|&x| clamp(x)).collect(),
        _ => vec![clamp(T::one()); periods],
    };
    let mut iterations = 0;
    let mut best: Option<(Vec<T>, Vec<T>)> = None;
    let extra = if options.restarts {
        restarts(&first, options.smoothing.unwrap_or(T::one()))
    } else {
        Vec::new()
    };
    for u0 in std::iter::once(first).chain(extra) {
        let u0: Vec<T> = u0.into_iter().map(clamp).collect();
        let (u, r) = levenberg_marquardt(&residual, u0, &clamp, hi, options, &mut iterations)?;
        if best.as_ref().is_none_or(|(_, br)| sq(&r) < sq(br)) {
            best = Some((u, r));
        }
        if best.as_ref().is_some_and(|(_, br)| max_abs(br) <= options.tolerance) {
            break;
        }
    }
    let (u, r) = best.expect("at least one start");

    if max_abs(&r) > options.tolerance && periods == 1 {
        let in_log = |u: &[T]| residual(&[u[0].exp()]);
        if let Some(sol) = bisect(&in_log, lo.ln(), hi.ln(), options, &mut iterations)? {
            return Ok(sol);
        }
    }
    let res = max_abs(&r);
    if res > options.tolerance && options.mode == InverseMode::Strict {
        return Err(Error::NonConvergence {
            iterations,
            residual: res.to_f64_lossy(),
        });
    }
    Ok(InverseSolution {
        price: u,
        residual: res,
        iterations,
    })
}

/// Restart points, one inside every cell cut out by `γ_v − γ_0 ∈ ρℤ` and
/// `γ_v − γ_w ∈ ρℤ` within `±2ρ` of a common level: offsets `ρ(k_v + π(v)/V)`
/// over integer `k_v ∈ [−2, 1]` and permutations `π`. Empty above three periods.
fn restarts<T: Real>(first: &[T], rho: T) -> Vec<Vec<T>> {
    let periods = first.len();
    if !(2..=3).contains(&periods) {
        return Vec::new();
    }
    let level = first.iter().fold(T::zero(), |a, &b| a + b) / T::from_usize_lossy(periods) + T::lit(2.0) * rho;
    let fractions: Vec<Vec<usize>> = if periods == 2 { vec![vec![1]] } else { vec![vec![1, 2], vec![2, 1]] };
    let free = periods - 1;
    let mut out = Vec::new();
    for perm in &fractions {
        for code in 0..4usize.pow(free as u32) {
            let mut c = code;
            let mut p = vec![level; periods];
            for v in 0..free {
                let k = (c % 4) as f64 - 2.0;
                c /= 4;
                p[v + 1] += rho * T::lit(k + perm[v] as f64 / periods as f64);
            }
            out.push(p);
        }
    }
    out
}

/// Damped Gauss–Newton on prices from `u`; returns the final point and residual.
fn levenberg_marquardt<T: Real>(
    residual: &dyn Fn(&[T]) -> Result<Vec<T>>,
    mut u: Vec<T>,
    clamp: &dyn Fn(T) -> T,
    hi: T,
    options: &InverseOptions<T>,
    iterations: &mut usize,
) -> Result<(Vec<T>, Vec<T>)> {
    let periods = u.len();
    let sq = |r: &[T]| r.iter().fold(T::zero(), |a, &x| a + x * x);
    let mut r = residual(&u)?;
    let mut lambda = T::lit(1e-3);
    let fd = T::lit(1.5e-8);
    let max_step = T::lit(MAX_STEP);
    let mut used = 0;
    while used < options.max_iterations && max_abs(&r) > options.tolerance {
        used += 1;
        *iterations += 1;
        let mut jac = DMatrix::<T>::zeros(periods, periods);
        for k in 0..periods {
            let step = fd * (T::one() + u[k].abs());
            let mut shifted = u.clone();
            let signed = if u[k] + step > hi { -step } else { step };
            shifted[k] = u[k] + signed;
            let rk = residual(&shifted)?;
            for v in 0..periods {
                jac[(v, k)] = (rk[v] - r[v]) / signed;
            }
        }
        let rv = DVector::from_column_slice(&r);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * rv;
        let current = sq(&r);
        let mut accepted = false;
        let mut stalled = false;
        while lambda < T::lit(1e12) {
            let mut damped = jtj.clone();
            for k in 0..periods {
                damped[(k, k)] += lambda * (jtj[(k, k)] + T::lit(1e-12));
            }
            let step = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= T::lit(4.0);
                    continue;
                }
            };
            let len = step.iter().fold(T::zero(), |a, &d| a.max(d.abs()));
            let scale = if len > max_step { max_step / len } else { T::one() };
            let trial: Vec<T> = u.iter().zip(step.iter()).map(|(&a, &d)| clamp(a + d * scale)).collect();
            let rt = residual(&trial)?;
            let next = sq(&rt);
            if next < current {
                stalled = current - next <= T::lit(1e-12) * current;
                u = trial;
                r = rt;
                lambda = (lambda / T::lit(3.0)).max(T::lit(1e-12));
                accepted = true;
                break;
            }
            lambda *= T::lit(4.0);
        }
        if !accepted || stalled {
            break;
        }
    }
    Ok((u, r))
}

/// Bisection on a single log-price; the response is nonincreasing in price.
fn bisect<T: Real>(
    residual: &dyn Fn(&[T]) -> Result<Vec<T>>,
    lo: T,
    hi: T,
    options: &InverseOptions<T>,
    iterations: &mut usize,
) -> Result<Option<InverseSolution<T>>> {
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (residual(&[a])?[0], residual(&[b])?[0]);
    if fa < T::zero() || fb > T::zero() {
        return Ok(None);
    }
    for _ in 0..options.max_iterations {
        *iterations += 1;
        let mid = (a + b) / T::lit(2.0);
        let fm = residual(&[mid])?[0];
        if fm.abs() <= options.tolerance {
            return Ok(Some(InverseSolution {
                price: vec![mid.exp()],
                residual: fm.abs(),
                iterations: *iterations,
            }));
        }
        if fm > T::zero() {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(None)
}

/// Settings of the integral utility.
#[derive(Debug, Clone)]
pub struct UtilityOptions<T: Real> {
    /// Midpoint segments `K`.
    pub segments: usize,
    /// Anchor consumption `x₀`, where the utility is zero.
    pub anchor: Vec<T>,
    pub inverse: InverseOptions<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityValue<T: Real> {
    pub value: T,
    /// Largest inverse residual met along the path.
    pub max_residual: T,
}

/// `Σ_k g̃(x₀ + (k + ½)Δ, θ̌)ᵀ Δ` with `Δ = (x − x₀)/K`: the midpoint rule on
/// the straight path from the anchor to `x`. Each segment starts from the
/// previous solution and only searches the restart points when that start
/// ends more than twice as far off as the previous segment did.
pub fn utility_eval<T: Real>(
    basis: &dyn Basis<T>,
    theta_check: &[T],
    consumption: &[T],
    options: &UtilityOptions<T>,
) -> Result<UtilityValue<T>> {
    if options.segments == 0 {
        return Err(Error::Config("utility needs at least one segment".into()));
    }
    if consumption.len() != options.anchor.len() {
        return Err(Error::Dimension {
            context: "utility consumption",
            expected: options.anchor.len(),
            got: consumption.len(),
        });
    }
    let k = T::from_usize_lossy(options.segments);
    let delta: Vec<T> = consumption
        .iter()
        .zip(&options.anchor)
        .map(|(&x, &a)| (x - a) / k)
        .collect();
    let mut out = UtilityValue {
        value: T::zero(),
        max_residual: T::zero(),
    };
    if delta.iter().all(|&d| d == T::zero()) {
        return Ok(out);
    }
    let warm_only = InverseOptions {
        restarts: false,
        ..options.inverse.clone()
    };
    let mut warm: Option<(Vec<T>, T)> = None;
    for s in 0..options.segments {
        let at = T::from_usize_lossy(s) + T::lit(0.5);
        let point: Vec<T> = options.anchor.iter().zip(&delta).map(|(&a, &d)| a + at * d).collect();
        let sol = match &warm {
            None => inverse_response(basis, theta_check, &point, &options.inverse, None)?,
            Some((start, previous)) => {
                let bar = options.inverse.tolerance.max(T::lit(2.0) * *previous);
                match inverse_response(basis, theta_check, &point, &warm_only, Some(start)) {
                    Ok(sol) if !options.inverse.restarts || sol.residual <= bar => sol,
                    Ok(_) | Err(Error::NonConvergence { .. }) => {
                        inverse_response(basis, theta_check, &point, &options.inverse, Some(start))?
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        out.value += sol.price.iter().zip(&delta).fold(T::zero(), |acc, (&g, &d)| acc + g * d);
        out.max_residual = out.max_residual.max(sol.residual);
        warm = Some((sol.price, sol.residual));
    }
    Ok(out)
}

/// Projected center: negatives clipped, rescaled into the `S`-ball, and
/// `floor/m` per coordinate if nothing is left.
pub fn select_theta_check<T: Real>(ellipsoid: &ConfidenceEllipsoid<T>, norm_bound: T, floor: T) -> Vec<T> {
    let mut theta: Vec<T> = ellipsoid.center().iter().map(|&c| c.max(T::zero())).collect();
    let n = norm(&theta);
    if n > norm_bound {
        let scale = norm_bound / n;
        theta.iter_mut().for_each(|t| *t *= scale);
    }
    if theta.iter().all(|&t| t == T::zero()) {
        let m = T::from_usize_lossy(theta.len());
        theta.iter_mut().for_each(|t| *t = floor / m);
    }
    theta
}

#[derive(Debug, Clone)]
pub struct SumConfig<T: Real> {
    pub learner: LearnerConfig<T>,
    pub utility: UtilityOptions<T>,
    /// Lower bound `ρ` on `1ᵀθ`, used when the projected center vanishes.
    pub parameter_floor: T,
    /// Pool every group into one estimator (users of a group share `θ`).
    pub shared_by_group: bool,
    /// Smallest consumption passed to the utility.
    pub consumption_floor: T,
}

impl<T: Real> SumConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        if self.utility.segments == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if self.utility.anchor.iter().any(|&x| !(x > T::zero())) {
            return Err(Error::Config("anchor x₀ must be positive".into()));
        }
        if self.utility.inverse.smoothing.is_some_and(|s| !(s > T::zero())) {
            return Err(Error::Config("smoothing offset must be positive".into()));
        }
        if !(self.utility.inverse.tolerance > T::zero()) {
            return Err(Error::Config("root tolerance must be positive".into()));
        }
        if !(self.consumption_floor > T::zero()) || !(self.parameter_floor > T::zero()) {
            return Err(Error::Config("consumption and parameter floors must be positive".into()));
        }
        Ok(())
    }
}

fn floored<T: Real>(x: &[T], floor: T) -> Vec<T> {
    x.iter().map(|&v| v.max(floor)).collect()
}

/// Optimistic price under the plug-in utility: per user `θ̌_i` is the
/// projected center, consumption the support function of its ellipsoid.
pub fn optimistic_step_sum<T: Real>(
    grid: &PriceGrid<T>,
    ellipsoids: &[ConfidenceEllipsoid<T>],
    constraints: &ConstraintSet<T>,
    bases: &[BasisRef<T>],
    config: &SumConfig<T>,
) -> Result<Option<(JointPrice, T)>> {
    config.validate()?;
    if ellipsoids.len() != grid.users() || bases.len() != grid.users() {
        return Err(Error::Dimension {
            context: "ellipsoids per user",
            expected: grid.users(),
            got: ellipsoids.len(),
        });
    }
    let cache = BasisCache::new(grid, bases)?;
    let bounds = ConsumptionBounds::from_ellipsoids(grid, &cache, ellipsoids)?;
    let table = LoadTable::build(constraints, grid, &bounds);
    let checks: Vec<Vec<T>> = ellipsoids
        .iter()
        .map(|e| select_theta_check(e, config.learner.norm_bound, config.parameter_floor))
        .collect();
    let per_user: Vec<Vec<T>> = (0..grid.users())
        .into_par_iter()
        .map(|i| {
            (0..grid.option_count())
                .map(|o| {
                    let x = floored(&bounds.upper[i][o], config.consumption_floor);
                    utility_eval(bases[i].as_ref(), &checks[i], &x, &config.utility).map(|u| u.value)
                })
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<_>>()?;
    let scores: Vec<Vec<T>> = grid
        .groups()
        .iter()
        .map(|members| {
            (0..grid.option_count())
                .map(|o| members.iter().fold(T::zero(), |acc, &i| acc + per_user[i][o]))
                .collect()
        })
        .collect();
    Ok(best_safe(grid, constraints, &table, &scores).map(|(j, v, _)| (j, v)))
}

struct SumScorer<'a, T: Real> {
    grid: &'a PriceGrid<T>,
    bases: Vec<BasisRef<T>>,
    config: &'a SumConfig<T>,
    /// Estimator unit of each user.
    user_unit: &'a [usize],
    max_residual: T,
}

impl<T: Real> Scorer<T> for SumScorer<'_, T> {
    fn scores(&mut self, ellipsoids: &[ConfidenceEllipsoid<T>], bounds: &ConsumptionBounds<T>) -> Result<Vec<Vec<T>>> {
        let cfg = self.config;
        let checks: Vec<Vec<T>> = ellipsoids
            .iter()
            .map(|e| select_theta_check(e, cfg.learner.norm_bound, cfg.parameter_floor))
            .collect();
        let options = self.grid.option_count();
        // one evaluation per (group, option) when a group shares its estimator
        let jobs: Vec<(usize, usize, usize, T)> = self
            .grid
            .groups()
            .iter()
            .enumerate()
            .flat_map(|(g, members)| {
                let shared = cfg.shared_by_group;
                let reps: Vec<(usize, T)> = if shared {
                    vec![(members[0], T::from_usize_lossy(members.len()))]
                } else {
                    members.iter().map(|&i| (i, T::one())).collect()
                };
                reps.into_iter()
                    .flat_map(move |(i, w)| (0..options).map(move |o| (g, i, o, w)))
            })
            .collect();
        let values: Vec<(usize, usize, T, T)> = jobs
            .par_iter()
            .map(|&(g, i, o, w)| {
                let x = floored(&bounds.upper[i][o], cfg.consumption_floor);
                let u = utility_eval(self.bases[i].as_ref(), &checks[self.user_unit[i]], &x, &cfg.utility)?;
                Ok((g, o, u.value * w, u.max_residual))
            })
            .collect::<Result<_>>()?;
        let mut scores = vec![vec![T::zero(); options]; self.grid.groups().len()];
        for (g, o, v, res) in values {
            scores[g][o] += v;
            self.max_residual = self.max_residual.max(res);
        }
        Ok(scores)
    }
}

/// Runs the safe utility maximization policy. With `shared_by_group`, one
/// estimator per group absorbs every member's observations.
pub fn run_sum<T: Real>(
    models: &[ResponseModel<T>],
    noise: &mut [NoiseSource<T>],
    constraints: &ConstraintSet<T>,
    grid: &PriceGrid<T>,
    config: &SumConfig<T>,
) -> Result<ExperimentTrace<T>> {
    config.validate()?;
    if config.utility.anchor.len() != grid.periods() {
        return Err(Error::Dimension {
            context: "anchor consumption",
            expected: grid.periods(),
            got: config.utility.anchor.len(),
        });
    }
    let user_unit: Vec<usize> = if config.shared_by_group {
        (0..models.len()).map(|i| grid.group_of(i)).collect()
    } else {
        (0..models.len()).collect()
    };
    let mut engine = Engine::new(models, constraints, grid, &config.learner, user_unit.clone())?;
    let mut scorer = SumScorer {
        grid,
        bases: models.iter().map(|m| m.basis().clone()).collect(),
        config,
        user_unit: &user_unit,
        max_residual: T::zero(),
    };
    let mut trace = engine.run(models, noise, &mut scorer)?;
    trace.max_inverse_residual = Some(scorer.max_residual);
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dr::{Appliance, ApplianceCluster, ClusterBasis, Placement};
    use crate::response::{InversePriceBasis, PriceDomain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn raw(tol: f64) -> InverseOptions<f64> {
        InverseOptions {
            smoothing: None,
            tolerance: tol,
            ..InverseOptions::default()
        }
    }

    fn log_options(segments: usize) -> UtilityOptions<f64> {
        UtilityOptions {
            segments,
            anchor: vec![1.0],
            inverse: raw(1e-12),
        }
    }

    #[test]
    fn closed_form_inverses() {
        let b = InversePriceBasis { periods: 1 };
        let s = inverse_response(&b, &[2.0], &[4.0], &raw(1e-9), None).unwrap();
        assert!((s.price[0] - 0.5).abs() < 1e-8);
        let s = inverse_response(&b, &[1.0], &[1.0], &raw(1e-9), None).unwrap();
        assert!((s.price[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn inverse_rejects_bad_inputs() {
        let b = InversePriceBasis { periods: 1 };
        assert!(inverse_response(&b, &[0.0], &[1.0], &raw(1e-9), None).is_err());
        assert!(inverse_response(&b, &[1.0], &[-1.0], &raw(1e-9), None).is_err());
        assert!(inverse_response(&b, &[1.0], &[1.0, 2.0], &raw(1e-9), None).is_err());
    }

    #[test]
    fn unreachable_target_is_reported() {
        // x = θ/γ ≥ θ/1e9 on the search box, so 1e-12 is out of reach
        let b = InversePriceBasis { periods: 1 };
        match inverse_response(&b, &[1.0], &[1e-12], &raw(1e-15), None) {
            Err(Error::NonConvergence { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
        let mut ls = raw(1e-15);
        ls.mode = InverseMode::LeastSquares;
        let s = inverse_response(&b, &[1.0], &[1e-12], &ls, None).unwrap();
        assert!(s.residual > 0.0);
    }

    #[test]
    fn anchor_utility_is_zero() {
        let b = InversePriceBasis { periods: 1 };
        for th in [0.3, 1.0, 7.0] {
            assert_eq!(utility_eval(&b, &[th], &[1.0], &log_options(5)).unwrap().value, 0.0);
        }
    }

    #[test]
    fn midpoint_rule_on_log() {
        let b = InversePriceBasis { periods: 1 };
        let e = std::f64::consts::E;
        let five = utility_eval(&b, &[1.0], &[e], &log_options(5)).unwrap().value;
        let hand: f64 = (0..5).map(|k| (e - 1.0) / 5.0 / (1.0 + (k as f64 + 0.5) * (e - 1.0) / 5.0)).sum();
        assert!((five - hand).abs() < 1e-9);
        assert!((five - 0.99586).abs() < 1e-4);
        let fine = utility_eval(&b, &[1.0], &[e], &log_options(200)).unwrap().value;
        assert!((fine - 1.0).abs() < 1e-4);
    }

    #[test]
    fn utility_scales_with_theta() {
        let b = InversePriceBasis { periods: 1 };
        for x in [0.2, 1.7, 5.0] {
            let one = utility_eval(&b, &[1.0], &[x], &log_options(5)).unwrap().value;
            let two = utility_eval(&b, &[2.0], &[x], &log_options(5)).unwrap().value;
            assert!((two - 2.0 * one).abs() < 1e-9 * (1.0 + one.abs()));
        }
    }

    #[test]
    fn riemann_error_shrinks() {
        let b = InversePriceBasis { periods: 1 };
        let reference = utility_eval(&b, &[1.0], &[4.0], &log_options(4000)).unwrap().value;
        let mut last = f64::INFINITY;
        for k in [1, 2, 4, 8, 16, 32] {
            let err = (utility_eval(&b, &[1.0], &[4.0], &log_options(k)).unwrap().value - reference).abs();
            assert!(err < last);
            last = err;
        }
    }

    #[test]
    fn derivative_matches_inverse() {
        let b = InversePriceBasis { periods: 1 };
        let th = 1.3;
        let h = 1e-4;
        for x in [1.5, 2.0, 3.0, 4.5] {
            let up = utility_eval(&b, &[th], &[x + h], &log_options(200)).unwrap().value;
            let dn = utility_eval(&b, &[th], &[x - h], &log_options(200)).unwrap().value;
            let g = th / x;
            assert!(((up - dn) / (2.0 * h) - g).abs() < 0.05 * g);
        }
    }

    #[test]
    fn theta_check_projection() {
        let ell = |c: &[f64]| {
            ConfidenceEllipsoid::new(DVector::from_row_slice(c), DMatrix::identity(2, 2), 1.0, true).unwrap()
        };
        assert_eq!(select_theta_check(&ell(&[0.3, 0.4]), 10.0, 1.0), vec![0.3, 0.4]);
        assert_eq!(select_theta_check(&ell(&[-1.0, 2.0]), 10.0, 1.0), vec![0.0, 2.0]);
        let r = select_theta_check(&ell(&[3.0, 4.0]), 2.5, 1.0);
        assert!((r[0] - 1.5).abs() < 1e-12 && (r[1] - 2.0).abs() < 1e-12);
        assert_eq!(select_theta_check(&ell(&[-1.0, -2.0]), 2.5, 1.0), vec![0.5, 0.5]);
    }

    fn dr_basis() -> ClusterBasis<f64> {
        let app = |name: &str, w: f64, p: Placement| Appliance {
            name: name.into(),
            power: w,
            placement: p,
        };
        ClusterBasis::new(
            3,
            vec![
                ApplianceCluster {
                    name: "inflexible".into(),
                    appliances: vec![app("lighting", 200.0, Placement::Fixed(vec![1, 2])), app("cooking", 500.0, Placement::Fixed(vec![2]))],
                    preference_offset: 5.0,
                },
                ApplianceCluster {
                    name: "flexible".into(),
                    appliances: vec![
                        app("ev", 500.0, Placement::OneOf(vec![0, 2])),
                        app("washer", 300.0, Placement::OneOf(vec![1, 2])),
                        app("hvac", 600.0, Placement::OneOf(vec![0, 1, 2])),
                        app("entertainment", 200.0, Placement::OneOf(vec![1, 2])),
                    ],
                    preference_offset: 5.0,
                },
            ],
            PriceDomain::Positive,
        )
    }

    #[test]
    fn smoothed_dr_round_trip() {
        let basis = dr_basis();
        let theta = [0.7, 0.9];
        let opts = InverseOptions::default();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let price: Vec<f64> = (0..3).map(|_| rng.random_range(1.5..5.5)).collect();
            let target = response_at(&basis, &theta, &price, Some(1.0)).unwrap();
            let sol = inverse_response(&basis, &theta, &target, &opts, None).unwrap();
            let back = response_at(&basis, &theta, &sol.price, Some(1.0)).unwrap();
            assert!(max_abs(&back.iter().zip(&target).map(|(a, b)| a - b).collect::<Vec<_>>()) <= 1e-6);
        }
    }

    #[test]
    fn dr_utility_increases_along_coordinates() {
        let basis = dr_basis();
        let theta = [0.8, 0.6];
        let mut opts = UtilityOptions {
            segments: 5,
            anchor: vec![1.0; 3],
            inverse: InverseOptions::default(),
        };
        opts.inverse.mode = InverseMode::LeastSquares;
        let base = [60.0, 40.0, 80.0];
        let u0 = utility_eval(&basis, &theta, &base, &opts).unwrap().value;
        assert!(u0 > 0.0);
        for v in 0..3 {
            let mut more = base;
            more[v] += 20.0;
            assert!(utility_eval(&basis, &theta, &more, &opts).unwrap().value > u0);
        }
    }

    #[test]
    fn single_safe_candidate_sum() {
        let grid = PriceGrid::single_group(1, 1, vec![0.5, 3.0]).unwrap();
        let bases: Vec<BasisRef<f64>> = vec![std::sync::Arc::new(InversePriceBasis { periods: 1 })];
        let cs = ConstraintSet::new(DMatrix::from_row_slice(1, 1, &[1.0]), vec![1.0], vec![]).unwrap();
        let ell = ConfidenceEllipsoid::new(DVector::from_row_slice(&[1.0]), DMatrix::identity(1, 1), 0.0, true).unwrap();
        let cfg = test_config();
        let (joint, _) = optimistic_step_sum(&grid, &[ell], &cs, &bases, &cfg).unwrap().unwrap();
        assert_eq!(joint, vec![1]);
    }

    fn test_config() -> SumConfig<f64> {
        SumConfig {
            learner: LearnerConfig {
                horizon: 0,
                exploration: None,
                confidence: 0.01,
                regularizer: 1.0,
                sigma: 0.0,
                norm_bound: 4.0,
                basis_bound: None,
                margin: 0.0,
                pin_radius: None,
                prior_cap: false,
                seed: 0,
            },
            utility: UtilityOptions {
                segments: 5,
                anchor: vec![1.0],
                inverse: raw(1e-10),
            },
            parameter_floor: 1.0,
            shared_by_group: false,
            consumption_floor: 1e-6,
        }
    }

    /// One group, two candidates, scored by hand with the closed-form `θ ln x`.
    #[test]
    fn two_candidates_match_hand_scores() {
        let grid = PriceGrid::single_group(2, 1, vec![0.8, 2.0]).unwrap();
        let bases: Vec<BasisRef<f64>> = vec![std::sync::Arc::new(InversePriceBasis { periods: 1 }); 2];
        let cs = ConstraintSet::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), vec![10.0], vec![]).unwrap();
        let thetas = [1.2, 0.7];
        let ells: Vec<_> = thetas
            .iter()
            .map(|&t| ConfidenceEllipsoid::new(DVector::from_row_slice(&[t]), DMatrix::identity(1, 1), 0.1, true).unwrap())
            .collect();
        let mut cfg = test_config();
        cfg.utility.segments = 400;
        let (joint, value) = optimistic_step_sum(&grid, &ells, &cs, &bases, &cfg).unwrap().unwrap();
        let score = |p: f64| thetas.iter().map(|&t| t * ((t + 0.1) / p).ln()).sum::<f64>();
        let expect = if score(0.8) >= score(2.0) { 0 } else { 1 };
        assert_eq!(joint, vec![expect]);
        assert!((value - score([0.8, 2.0][expect])).abs() < 1e-4);
    }
}
