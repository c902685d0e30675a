//! Safe price response: uniform exploration over the initial safe set, then
//! optimistic pricing among candidates certified safe by the confidence sets.
//!
//! The learning loop in this module is shared with [`crate::sum`]; the two
//! policies differ only in how a group's price option is scored.

use std::fmt::Debug;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{BetaSchedule, ConfidenceEllipsoid, RlsState};
use crate::harness::{CertificateSource, ExperimentTrace, TraceStep};
use crate::response::{BasisRef, NoiseSource, ResponseModel};
use crate::safety::{
    enumerate_joint, initial_safe_points_from_table, BasisCache, ConsumptionBounds, ConstraintSet, JointPrice,
    LoadTable, PriceGrid, SafetyCertificate,
};
use crate::scalar::Real;

/// A strictly increasing utility of a user's per-period consumption.
pub trait Utility<T: Real>: Send + Sync + Debug {
    fn value(&self, consumption: &[T]) -> T;
}

pub type UtilityRef<T> = Arc<dyn Utility<T>>;

/// `b · Σ_v ln(x_v + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogUtility<T: Real> {
    pub weight: T,
}

impl<T: Real> Utility<T> for LogUtility<T> {
    fn value(&self, consumption: &[T]) -> T {
        consumption
            .iter()
            .fold(T::zero(), |acc, &x| acc + (x + T::one()).ln())
            * self.weight
    }
}

/// Exploration length: the override if given, else `⌈T^{2/3}⌉`.
pub fn exploration_horizon(horizon: usize, explicit: Option<usize>) -> Result<usize> {
    if let Some(e) = explicit {
        if e > horizon {
            return Err(Error::Config(format!("exploration length {e} exceeds horizon {horizon}")));
        }
        return Ok(e);
    }
    // smallest k with k³ ≥ T², in integers
    let t2 = (horizon as u128) * (horizon as u128);
    let mut k = (horizon as f64).powf(2.0 / 3.0).floor().max(0.0) as u128;
    while k > 0 && (k - 1).pow(3) >= t2 {
        k -= 1;
    }
    while k.pow(3) < t2 {
        k += 1;
    }
    Ok((k as usize).min(horizon))
}

/// Uniform draw from the safe points.
pub fn explore_step<R: Rng + ?Sized>(safe_points: &[JointPrice], rng: &mut R) -> Result<JointPrice> {
    if safe_points.is_empty() {
        return Err(Error::Config("no initially safe price to explore".into()));
    }
    Ok(safe_points[rng.random_range(0..safe_points.len())].clone())
}

/// Settings shared by both policies.
#[derive(Debug, Clone)]
pub struct LearnerConfig<T: Real> {
    pub horizon: usize,
    /// Exploration length; `⌈T^{2/3}⌉` when absent.
    pub exploration: Option<usize>,
    pub confidence: T,
    pub regularizer: T,
    pub sigma: T,
    pub norm_bound: T,
    /// Bound `L` on basis row norms; computed from the grid when absent.
    pub basis_bound: Option<T>,
    /// Slack `ζ` required of initially safe prices.
    pub margin: T,
    /// Replaces every confidence radius (zero reproduces the truth oracle).
    pub pin_radius: Option<T>,
    /// Caps each confidence bound by the prior bound `[0, S‖h‖]`.
    pub prior_cap: bool,
    pub seed: u64,
}

impl<T: Real> LearnerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence > T::zero() && self.confidence < T::one()) {
            return Err(Error::Config("confidence δ must lie in (0, 1)".into()));
        }
        if !(self.regularizer > T::zero()) || !(self.norm_bound > T::zero()) {
            return Err(Error::Config("ν and S must be positive".into()));
        }
        if !(self.sigma >= T::zero()) || !(self.margin >= T::zero()) {
            return Err(Error::Config("σ and ζ must be nonnegative".into()));
        }
        if self.pin_radius.is_some_and(|r| !(r >= T::zero())) {
            return Err(Error::Config("pinned radius must be nonnegative".into()));
        }
        if self.basis_bound.is_some_and(|l| !(l > T::zero())) {
            return Err(Error::Config("basis bound L must be positive".into()));
        }
        exploration_horizon(self.horizon, self.exploration)?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SprConfig<T: Real> {
    pub learner: LearnerConfig<T>,
    /// One utility per user.
    pub utilities: Vec<UtilityRef<T>>,
}

/// Best safe joint candidate under separable group scores, ties to the first
/// in enumeration order. Returns the candidate, its score and its margin.
pub(crate) fn best_safe<T: Real>(
    grid: &PriceGrid<T>,
    constraints: &ConstraintSet<T>,
    table: &LoadTable<T>,
    group_scores: &[Vec<T>],
) -> Option<(JointPrice, T, T)> {
    let mut best: Option<(JointPrice, T, T)> = None;
    for joint in enumerate_joint(grid) {
        let value = joint
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (g, &o)| acc + group_scores[g][o]);
        if best.as_ref().is_some_and(|(_, v, _)| value <= *v) {
            continue;
        }
        let margin = table.margin(&joint, constraints.limits(), T::zero());
        if margin >= T::zero() {
            best = Some((joint, value, margin));
        }
    }
    best
}

fn check_users<T: Real>(grid: &PriceGrid<T>, constraints: &ConstraintSet<T>, n: usize, what: &'static str) -> Result<()> {
    for expected in [grid.users(), constraints.users()] {
        if expected != n {
            return Err(Error::Dimension {
                context: what,
                expected,
                got: n,
            });
        }
    }
    Ok(())
}

/// Optimistic price among candidates certified by the ellipsoids: maximizes
/// `Σ_i f_i(x̂_i)` where `x̂_{i,v}` is the support function of user `i`'s
/// ellipsoid in direction `h_{i,v}(γ_i)`. `None` when nothing is certified.
pub fn optimistic_step<T: Real>(
    grid: &PriceGrid<T>,
    ellipsoids: &[ConfidenceEllipsoid<T>],
    constraints: &ConstraintSet<T>,
    bases: &[BasisRef<T>],
    utilities: &[UtilityRef<T>],
) -> Result<Option<(JointPrice, T)>> {
    check_users(grid, constraints, ellipsoids.len(), "ellipsoids per user")?;
    check_users(grid, constraints, utilities.len(), "utilities per user")?;
    let cache = BasisCache::new(grid, bases)?;
    let bounds = ConsumptionBounds::from_ellipsoids(grid, &cache, ellipsoids)?;
    let table = LoadTable::build(constraints, grid, &bounds);
    let scores = spr_scores(grid, &bounds, utilities);
    Ok(best_safe(grid, constraints, &table, &scores).map(|(j, v, _)| (j, v)))
}

fn spr_scores<T: Real>(grid: &PriceGrid<T>, bounds: &ConsumptionBounds<T>, utilities: &[UtilityRef<T>]) -> Vec<Vec<T>> {
    grid.groups()
        .iter()
        .map(|members| {
            (0..grid.option_count())
                .map(|o| {
                    members
                        .iter()
                        .fold(T::zero(), |acc, &i| acc + utilities[i].value(&bounds.upper[i][o]))
                })
                .collect()
        })
        .collect()
}

/// Scores every (group, option) pair from the current ellipsoids and bounds.
pub(crate) trait Scorer<T: Real> {
    /// `ellipsoids` is per estimator unit, `bounds` per user.
    fn scores(&mut self, ellipsoids: &[ConfidenceEllipsoid<T>], bounds: &ConsumptionBounds<T>) -> Result<Vec<Vec<T>>>;
}

/// State of one run: estimator units, grid caches and the initial safe set.
pub(crate) struct Engine<'a, T: Real> {
    pub grid: &'a PriceGrid<T>,
    pub constraints: &'a ConstraintSet<T>,
    pub cache: BasisCache<T>,
    pub units: Vec<RlsState<T>>,
    pub user_unit: Vec<usize>,
    pub schedule: BetaSchedule<T>,
    pub prior: ConsumptionBounds<T>,
    pub prior_table: LoadTable<T>,
    pub safe_points: Vec<JointPrice>,
    pub exploration: usize,
    pub config: &'a LearnerConfig<T>,
}

impl<'a, T: Real> Engine<'a, T> {
    pub fn new(
        models: &[ResponseModel<T>],
        constraints: &'a ConstraintSet<T>,
        grid: &'a PriceGrid<T>,
        config: &'a LearnerConfig<T>,
        user_unit: Vec<usize>,
    ) -> Result<Self> {
        config.validate()?;
        check_users(grid, constraints, models.len(), "response models")?;
        let dim = models.first().map_or(0, |m| m.basis().dim());
        if models.iter().any(|m| m.basis().dim() != dim || m.periods() != grid.periods()) {
            return Err(Error::Config("every response model must share the grid's periods and one dimension".into()));
        }
        let bases: Vec<BasisRef<T>> = models.iter().map(|m| m.basis().clone()).collect();
        let cache = BasisCache::new(grid, &bases)?;
        let basis_bound = match config.basis_bound {
            Some(l) => l,
            None => {
                let l = cache.max_row_norm();
                if l > T::zero() {
                    l
                } else {
                    T::one()
                }
            }
        };
        let unit_count = user_unit.iter().max().map_or(0, |&u| u + 1);
        let schedule = BetaSchedule {
            sigma: config.sigma,
            dim,
            regularizer: config.regularizer,
            norm_bound: config.norm_bound,
            confidence: config.confidence,
            users: unit_count.max(1),
            basis_bound,
        };
        schedule.validate()?;
        let prior = ConsumptionBounds::from_prior(grid, &cache, config.norm_bound);
        let prior_table = LoadTable::build(constraints, grid, &prior);
        let safe_points = initial_safe_points_from_table(grid, constraints, &prior_table, config.margin)?;
        let units = vec![RlsState::new(dim, config.regularizer)?; unit_count];
        Ok(Self {
            grid,
            constraints,
            cache,
            units,
            user_unit,
            schedule,
            prior,
            prior_table,
            safe_points,
            exploration: exploration_horizon(config.horizon, config.exploration)?,
            config,
        })
    }

    pub fn ellipsoids(&self) -> Result<Vec<ConfidenceEllipsoid<T>>> {
        self.units
            .iter()
            .map(|s| {
                let r = self.config.pin_radius.unwrap_or_else(|| self.schedule.radius(s.sample_count()));
                ConfidenceEllipsoid::from_state(s, r, true)
            })
            .collect()
    }

    /// Per-user bounds from the unit ellipsoids, capped by the prior if set.
    pub fn bounds(&self, ellipsoids: &[ConfidenceEllipsoid<T>]) -> Result<ConsumptionBounds<T>> {
        let (options, periods) = (self.grid.option_count(), self.grid.periods());
        let mut upper = Vec::with_capacity(self.grid.users());
        let mut lower = Vec::with_capacity(self.grid.users());
        for (i, &unit) in self.user_unit.iter().enumerate() {
            let ell = &ellipsoids[unit];
            let mut up_i = Vec::with_capacity(options);
            let mut lo_i = Vec::with_capacity(options);
            for o in 0..options {
                let mut up = Vec::with_capacity(periods);
                let mut lo = Vec::with_capacity(periods);
                for v in 0..periods {
                    let h = self.cache.row(i, o, v);
                    let (mut hi, mut low) = (ell.support_max(&h)?, ell.support_min(&h)?);
                    if self.config.prior_cap {
                        hi = hi.min(self.prior.upper[i][o][v]);
                        low = low.max(self.prior.lower[i][o][v]);
                    }
                    up.push(hi);
                    lo.push(low);
                }
                up_i.push(up);
                lo_i.push(lo);
            }
            upper.push(up_i);
            lower.push(lo_i);
        }
        Ok(ConsumptionBounds { upper, lower })
    }

    /// Runs the full horizon: explore, then pick optimistically with `scorer`.
    pub fn run(
        &mut self,
        models: &[ResponseModel<T>],
        noise: &mut [NoiseSource<T>],
        scorer: &mut dyn Scorer<T>,
    ) -> Result<ExperimentTrace<T>> {
        if noise.len() != models.len() {
            return Err(Error::Dimension {
                context: "noise sources",
                expected: models.len(),
                got: noise.len(),
            });
        }
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut steps = Vec::with_capacity(self.config.horizon);
        for t in 0..self.config.horizon {
            let explore = t < self.exploration;
            let (joint, certificate, source, optimistic_value) = if explore {
                let joint = explore_step(&self.safe_points, &mut rng)?;
                let cert = SafetyCertificate::from_load(joint.clone(), self.prior_table.load(&joint), self.constraints);
                (joint, cert, CertificateSource::Prior, None)
            } else {
                let ellipsoids = self.ellipsoids()?;
                let bounds = self.bounds(&ellipsoids)?;
                let table = LoadTable::build(self.constraints, self.grid, &bounds);
                let scores = scorer.scores(&ellipsoids, &bounds)?;
                match best_safe(self.grid, self.constraints, &table, &scores) {
                    Some((joint, value, _)) => {
                        let cert = SafetyCertificate::from_load(joint.clone(), table.load(&joint), self.constraints);
                        (joint, cert, CertificateSource::Confidence, Some(value))
                    }
                    None => {
                        let joint = explore_step(&self.safe_points, &mut rng)?;
                        let cert =
                            SafetyCertificate::from_load(joint.clone(), self.prior_table.load(&joint), self.constraints);
                        (joint, cert, CertificateSource::Fallback, None)
                    }
                }
            };
            let option_of = |i: usize| joint[self.grid.group_of(i)];
            let mut observations = Vec::with_capacity(models.len());
            for (i, (model, stream)) in models.iter().zip(noise.iter_mut()).enumerate() {
                let obs = model.observe(i, stream, self.grid.user_price(&joint, i))?;
                let unit = &mut self.units[self.user_unit[i]];
                for (v, &x) in obs.consumption.iter().enumerate() {
                    unit.update_in_place(&self.cache.row(i, option_of(i), v), x)?;
                }
                observations.push(obs);
            }
            steps.push(TraceStep {
                t,
                joint,
                observations,
                certificate,
                source,
                explore,
                optimistic_value,
                regret: T::zero(),
                violated: false,
            });
        }
        Ok(ExperimentTrace {
            steps,
            exploration: self.exploration.min(self.config.horizon),
            max_inverse_residual: None,
            wall_clock: started.elapsed(),
        })
    }

}

struct SprScorer<'a, T: Real> {
    grid: &'a PriceGrid<T>,
    utilities: &'a [UtilityRef<T>],
}

impl<T: Real> Scorer<T> for SprScorer<'_, T> {
    fn scores(&mut self, _: &[ConfidenceEllipsoid<T>], bounds: &ConsumptionBounds<T>) -> Result<Vec<Vec<T>>> {
        Ok(spr_scores(self.grid, bounds, self.utilities))
    }
}

/// Runs the safe price response policy for `config.learner.horizon` steps with
/// one estimator per user. Regret and violations are filled in by
/// [`crate::harness::score_trace`].
pub fn run_spr<T: Real>(
    models: &[ResponseModel<T>],
    noise: &mut [NoiseSource<T>],
    constraints: &ConstraintSet<T>,
    grid: &PriceGrid<T>,
    config: &SprConfig<T>,
) -> Result<ExperimentTrace<T>> {
    if config.utilities.len() != models.len() {
        return Err(Error::Dimension {
            context: "utilities per user",
            expected: models.len(),
            got: config.utilities.len(),
        });
    }
    let mut engine = Engine::new(models, constraints, grid, &config.learner, (0..models.len()).collect())?;
    let mut scorer = SprScorer {
        grid,
        utilities: &config.utilities,
    };
    engine.run(models, noise, &mut scorer)
}

/// Smallest eigenvalue of every user's gram matrix after `steps` exploration
/// rounds drawn uniformly from the initial safe set.
pub fn exploration_min_eigs<T: Real>(
    models: &[ResponseModel<T>],
    noise: &mut [NoiseSource<T>],
    constraints: &ConstraintSet<T>,
    grid: &PriceGrid<T>,
    config: &LearnerConfig<T>,
    steps: usize,
) -> Result<Vec<T>> {
    let mut cfg = config.clone();
    cfg.horizon = steps;
    cfg.exploration = Some(steps);
    let mut engine = Engine::new(models, constraints, grid, &cfg, (0..models.len()).collect())?;
    let mut idle = IdleScorer;
    engine.run(models, noise, &mut idle)?;
    engine.units.iter().map(|s| crate::estimator::min_eig(s.gram())).collect()
}

struct IdleScorer;

impl<T: Real> Scorer<T> for IdleScorer {
    fn scores(&mut self, _: &[ConfidenceEllipsoid<T>], _: &ConsumptionBounds<T>) -> Result<Vec<Vec<T>>> {
        Err(Error::Config("exploration-only run reached the optimistic phase".into()))
    }
}
