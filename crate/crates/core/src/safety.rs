//! Linear constraints on consumption, the finite price grid, and certificates
//! that a price profile is safe for every parameter in the current sets.
//!
//! A constraint row `j` reads `Σ_i a_ji x_{i,v} ≤ c_j` and is enforced in
//! every period `v`. Certification bounds each user's contribution separately:
//! positive coefficients take the largest plausible consumption, negative ones
//! the smallest.

use nalgebra::DMatrix;

use crate::estimator::ConfidenceEllipsoid;
use crate::error::{Error, Result};
use crate::response::BasisRef;
use crate::scalar::{norm, Real};

#[derive(Debug, Clone)]
pub struct ConstraintSet<T: Real> {
    coefficients: DMatrix<T>,
    limits: Vec<T>,
    coefficient_bound: T,
    names: Vec<String>,
}

impl<T: Real> ConstraintSet<T> {
    /// `coefficients` is `p×n`; `limits` has length `p`.
    pub fn new(coefficients: DMatrix<T>, limits: Vec<T>, names: Vec<String>) -> Result<Self> {
        let p = coefficients.nrows();
        if p == 0 {
            return Err(Error::Config("constraint set needs at least one row".into()));
        }
        if limits.len() != p {
            return Err(Error::Dimension {
                context: "constraint limits",
                expected: p,
                got: limits.len(),
            });
        }
        if limits.iter().any(|c| !c.is_finite()) || coefficients.iter().any(|a| !a.is_finite()) {
            return Err(Error::Config("constraint data must be finite".into()));
        }
        let names = if names.len() == p {
            names
        } else {
            (0..p).map(|j| format!("row{j}")).collect()
        };
        let coefficient_bound = coefficients.iter().fold(T::zero(), |acc, a| acc.max(a.abs()));
        Ok(Self {
            coefficients,
            limits,
            coefficient_bound,
            names,
        })
    }

    pub fn rows(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn users(&self) -> usize {
        self.coefficients.ncols()
    }

    pub fn coefficients(&self) -> &DMatrix<T> {
        &self.coefficients
    }

    pub fn coefficient(&self, row: usize, user: usize) -> T {
        self.coefficients[(row, user)]
    }

    pub fn limits(&self) -> &[T] {
        &self.limits
    }

    /// κ, the largest `|a_ji|`.
    pub fn coefficient_bound(&self) -> T {
        self.coefficient_bound
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `p×V` load matrix of a per-user consumption profile.
    pub fn load(&self, consumption: &[Vec<T>]) -> DMatrix<T> {
        let periods = consumption.first().map_or(0, Vec::len);
        DMatrix::from_fn(self.rows(), periods, |j, v| {
            consumption
                .iter()
                .enumerate()
                .fold(T::zero(), |acc, (i, x)| acc + self.coefficients[(j, i)] * x[v])
        })
    }

    /// `min_{j,v} (c_j − load_jv)`.
    pub fn margin(&self, load: &DMatrix<T>) -> T {
        let mut best = T::max_value().unwrap();
        for j in 0..load.nrows() {
            for v in 0..load.ncols() {
                best = best.min(self.limits[j] - load[(j, v)]);
            }
        }
        best
    }

    pub fn is_feasible(&self, consumption: &[Vec<T>]) -> bool {
        self.margin(&self.load(consumption)) >= T::zero()
    }
}

/// Choice of one price option per group.
pub type JointPrice = Vec<usize>;

/// Finite price grid: users are partitioned into groups, every user in a
/// group sees the same per-period price profile, and each period's price is
/// one of `levels`.
#[derive(Debug, Clone)]
pub struct PriceGrid<T: Real> {
    periods: usize,
    levels: Vec<T>,
    groups: Vec<Vec<usize>>,
    user_group: Vec<usize>,
    options: Vec<Vec<T>>,
}

impl<T: Real> PriceGrid<T> {
    pub fn new(users: usize, periods: usize, levels: Vec<T>, groups: Vec<Vec<usize>>) -> Result<Self> {
        if periods == 0 || levels.is_empty() || groups.is_empty() {
            return Err(Error::Config("price grid needs periods, levels and groups".into()));
        }
        let mut user_group = vec![usize::MAX; users];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Config(format!("group {g} is empty")));
            }
            for &u in members {
                if u >= users {
                    return Err(Error::Config(format!("group {g} names unknown user {u}")));
                }
                if user_group[u] != usize::MAX {
                    return Err(Error::Config(format!("user {u} belongs to more than one group")));
                }
                user_group[u] = g;
            }
        }
        if let Some(u) = user_group.iter().position(|&g| g == usize::MAX) {
            return Err(Error::Config(format!("user {u} belongs to no group")));
        }
        let count = levels
            .len()
            .checked_pow(periods as u32)
            .ok_or_else(|| Error::Config("too many price options".into()))?;
        let options = (0..count)
            .map(|o| {
                let mut rest = o;
                let mut digits = vec![0; periods];
                for v in (0..periods).rev() {
                    digits[v] = rest % levels.len();
                    rest /= levels.len();
                }
                digits.into_iter().map(|d| levels[d]).collect()
            })
            .collect();
        Ok(Self {
            periods,
            levels,
            groups,
            user_group,
            options,
        })
    }

    /// A single group holding every user.
    pub fn single_group(users: usize, periods: usize, levels: Vec<T>) -> Result<Self> {
        Self::new(users, periods, levels, vec![(0..users).collect()])
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn users(&self) -> usize {
        self.user_group.len()
    }

    pub fn group_of(&self, user: usize) -> usize {
        self.user_group[user]
    }

    /// Number of per-group price profiles, `levels^V`.
    pub fn option_count(&self) -> usize {
        self.options.len()
    }

    /// The price profile of option `o`; period 0 is the most significant digit.
    pub fn option_prices(&self, option: usize) -> &[T] {
        &self.options[option]
    }

    /// Joint candidate count `(levels^V)^G`.
    pub fn candidate_count(&self) -> usize {
        self.option_count().pow(self.groups.len() as u32)
    }

    pub fn joint_from_index(&self, mut index: usize) -> JointPrice {
        let o = self.option_count();
        let mut joint = vec![0; self.groups.len()];
        for g in (0..self.groups.len()).rev() {
            joint[g] = index % o;
            index /= o;
        }
        joint
    }

    pub fn joint_index(&self, joint: &[usize]) -> usize {
        joint.iter().fold(0, |acc, &o| acc * self.option_count() + o)
    }

    pub fn user_price<'a>(&'a self, joint: &[usize], user: usize) -> &'a [T] {
        self.option_prices(joint[self.user_group[user]])
    }

    /// Per-user price profiles for a joint candidate.
    pub fn user_prices(&self, joint: &[usize]) -> Vec<Vec<T>> {
        (0..self.users()).map(|u| self.user_price(joint, u).to_vec()).collect()
    }

    /// Sum of the per-period prices over every user.
    pub fn total_price(&self, joint: &[usize]) -> T {
        joint.iter().zip(&self.groups).fold(T::zero(), |acc, (&o, members)| {
            let day = self.option_prices(o).iter().fold(T::zero(), |a, &b| a + b);
            acc + day * T::from_usize_lossy(members.len())
        })
    }
}

/// Every joint candidate once, lexicographic in (group, period, level index).
pub fn enumerate_joint<T: Real>(grid: &PriceGrid<T>) -> impl Iterator<Item = JointPrice> + '_ {
    (0..grid.candidate_count()).map(move |i| grid.joint_from_index(i))
}

/// Basis matrices for every user at every group option.
#[derive(Debug, Clone)]
pub struct BasisCache<T: Real> {
    h: Vec<Vec<DMatrix<T>>>,
}

impl<T: Real> BasisCache<T> {
    pub fn new(grid: &PriceGrid<T>, bases: &[BasisRef<T>]) -> Result<Self> {
        if bases.len() != grid.users() {
            return Err(Error::Dimension {
                context: "bases per user",
                expected: grid.users(),
                got: bases.len(),
            });
        }
        let h = bases
            .iter()
            .map(|b| {
                (0..grid.option_count())
                    .map(|o| b.eval(grid.option_prices(o)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { h })
    }

    /// Row `v` of `h_i` at option `o`.
    pub fn row(&self, user: usize, option: usize, period: usize) -> Vec<T> {
        self.h[user][option].row(period).iter().copied().collect()
    }

    pub fn matrix(&self, user: usize, option: usize) -> &DMatrix<T> {
        &self.h[user][option]
    }

    /// Largest row norm over users and options (the constant `L`).
    pub fn max_row_norm(&self) -> T {
        let mut best = T::zero();
        for per_user in &self.h {
            for m in per_user {
                for v in 0..m.nrows() {
                    let r: Vec<T> = m.row(v).iter().copied().collect();
                    best = best.max(norm(&r));
                }
            }
        }
        best
    }
}

/// Per-user, per-option, per-period bounds on consumption.
pub struct ConsumptionBounds<T: Real> {
    /// `[user][option][period]`
    pub upper: Vec<Vec<Vec<T>>>,
    pub lower: Vec<Vec<Vec<T>>>,
}

impl<T: Real> ConsumptionBounds<T> {
    /// Bounds from per-user confidence ellipsoids via support functions.
    pub fn from_ellipsoids(
        grid: &PriceGrid<T>,
        cache: &BasisCache<T>,
        ellipsoids: &[ConfidenceEllipsoid<T>],
    ) -> Result<Self> {
        let mut upper = Vec::with_capacity(grid.users());
        let mut lower = Vec::with_capacity(grid.users());
        for (i, ell) in ellipsoids.iter().enumerate() {
            let mut up_i = Vec::with_capacity(grid.option_count());
            let mut lo_i = Vec::with_capacity(grid.option_count());
            for o in 0..grid.option_count() {
                let mut up = Vec::with_capacity(grid.periods());
                let mut lo = Vec::with_capacity(grid.periods());
                for v in 0..grid.periods() {
                    let h = cache.row(i, o, v);
                    up.push(ell.support_max(&h)?);
                    lo.push(ell.support_min(&h)?);
                }
                up_i.push(up);
                lo_i.push(lo);
            }
            upper.push(up_i);
            lower.push(lo_i);
        }
        Ok(Self { upper, lower })
    }

    /// Bounds over the prior set `{θ ≥ 0, ‖θ‖ ≤ S}` for nonnegative bases:
    /// `[0, S‖h‖]`.
    pub fn from_prior(grid: &PriceGrid<T>, cache: &BasisCache<T>, norm_bound: T) -> Self {
        let upper: Vec<Vec<Vec<T>>> = (0..grid.users())
            .map(|i| {
                (0..grid.option_count())
                    .map(|o| (0..grid.periods()).map(|v| norm_bound * norm(&cache.row(i, o, v))).collect())
                    .collect()
            })
            .collect();
        let lower = upper
            .iter()
            .map(|u| u.iter().map(|o| vec![T::zero(); o.len()]).collect())
            .collect();
        Self { upper, lower }
    }

    /// Exact consumption under known parameters.
    pub fn exact(grid: &PriceGrid<T>, cache: &BasisCache<T>, thetas: &[nalgebra::DVector<T>]) -> Self {
        let upper: Vec<Vec<Vec<T>>> = (0..grid.users())
            .map(|i| {
                (0..grid.option_count())
                    .map(|o| (cache.matrix(i, o) * &thetas[i]).iter().copied().collect())
                    .collect()
            })
            .collect();
        Self {
            lower: upper.clone(),
            upper,
        }
    }
}

/// Per-group contributions to every constraint row, so that a joint
/// candidate's load is a sum over groups: `load[j][v] = Σ_g part[j][g][o_g][v]`.
#[derive(Debug, Clone)]
pub struct LoadTable<T: Real> {
    rows: usize,
    groups: usize,
    options: usize,
    periods: usize,
    part: Vec<T>,
}

impl<T: Real> LoadTable<T> {
    pub fn build(constraints: &ConstraintSet<T>, grid: &PriceGrid<T>, bounds: &ConsumptionBounds<T>) -> Self {
        let (rows, groups, options, periods) =
            (constraints.rows(), grid.groups().len(), grid.option_count(), grid.periods());
        let mut part = vec![T::zero(); rows * groups * options * periods];
        for j in 0..rows {
            for (g, members) in grid.groups().iter().enumerate() {
                for o in 0..options {
                    let base = ((j * groups + g) * options + o) * periods;
                    for &i in members {
                        let a = constraints.coefficient(j, i);
                        if a == T::zero() {
                            continue;
                        }
                        let b = if a > T::zero() { &bounds.upper[i][o] } else { &bounds.lower[i][o] };
                        for v in 0..periods {
                            part[base + v] += a * b[v];
                        }
                    }
                }
            }
        }
        Self {
            rows,
            groups,
            options,
            periods,
            part,
        }
    }

    pub fn load(&self, joint: &[usize]) -> DMatrix<T> {
        DMatrix::from_fn(self.rows, self.periods, |j, v| self.entry(joint, j, v))
    }

    fn entry(&self, joint: &[usize], row: usize, period: usize) -> T {
        let mut acc = T::zero();
        for (g, &o) in joint.iter().enumerate() {
            acc += self.part[((row * self.groups + g) * self.options + o) * self.periods + period];
        }
        acc
    }

    /// `min_{j,v} (c_j − slack − load_jv)`.
    pub fn margin(&self, joint: &[usize], limits: &[T], slack: T) -> T {
        let mut best = T::max_value().unwrap();
        for (j, &c) in limits.iter().enumerate() {
            for v in 0..self.periods {
                best = best.min(c - slack - self.entry(joint, j, v));
            }
        }
        best
    }

    /// Row and slack of the binding entry at `joint`.
    pub fn tightest(&self, joint: &[usize], limits: &[T], slack: T) -> (usize, T) {
        let mut best = (0, T::max_value().unwrap());
        for (j, &c) in limits.iter().enumerate() {
            for v in 0..self.periods {
                let s = c - slack - self.entry(joint, j, v);
                if s < best.1 {
                    best = (j, s);
                }
            }
        }
        best
    }
}

/// Evidence that a price profile satisfies every constraint for every
/// parameter in the sets it was checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyCertificate<T: Real> {
    pub candidate: JointPrice,
    pub load: DMatrix<T>,
    pub safe: bool,
    pub margin: T,
}

impl<T: Real> SafetyCertificate<T> {
    pub fn from_load(candidate: JointPrice, load: DMatrix<T>, constraints: &ConstraintSet<T>) -> Self {
        let margin = constraints.margin(&load);
        Self {
            candidate,
            safe: margin >= T::zero(),
            load,
            margin,
        }
    }
}

fn check_users<T: Real>(constraints: &ConstraintSet<T>, n: usize, what: &'static str) -> Result<()> {
    if constraints.users() != n {
        return Err(Error::Dimension {
            context: what,
            expected: constraints.users(),
            got: n,
        });
    }
    Ok(())
}

/// Worst-case `p×V` load over the product of per-user ellipsoids.
pub fn worst_case_load<T: Real>(
    constraints: &ConstraintSet<T>,
    prices: &[Vec<T>],
    ellipsoids: &[ConfidenceEllipsoid<T>],
    bases: &[BasisRef<T>],
) -> Result<DMatrix<T>> {
    check_users(constraints, prices.len(), "prices per user")?;
    check_users(constraints, ellipsoids.len(), "ellipsoids per user")?;
    check_users(constraints, bases.len(), "bases per user")?;
    let periods = bases.first().map_or(0, |b| b.periods());
    let mut load = DMatrix::<T>::zeros(constraints.rows(), periods);
    for (i, ((price, ell), basis)) in prices.iter().zip(ellipsoids).zip(bases).enumerate() {
        let h = basis.eval(price)?;
        for v in 0..periods {
            let row: Vec<T> = h.row(v).iter().copied().collect();
            let hi = ell.support_max(&row)?;
            let lo = ell.support_min(&row)?;
            for j in 0..constraints.rows() {
                let a = constraints.coefficient(j, i);
                if a > T::zero() {
                    load[(j, v)] += a * hi;
                } else if a < T::zero() {
                    load[(j, v)] += a * lo;
                }
            }
        }
    }
    Ok(load)
}

/// Certifies a joint price against the ellipsoids.
pub fn certify_safe<T: Real>(
    constraints: &ConstraintSet<T>,
    grid: &PriceGrid<T>,
    joint: &[usize],
    ellipsoids: &[ConfidenceEllipsoid<T>],
    bases: &[BasisRef<T>],
) -> Result<SafetyCertificate<T>> {
    let prices = grid.user_prices(joint);
    let load = worst_case_load(constraints, &prices, ellipsoids, bases)?;
    Ok(SafetyCertificate::from_load(joint.to_vec(), load, constraints))
}

/// Grid candidates safe for every `θ ≥ 0` with `‖θ‖ ≤ S`, with extra slack
/// `margin`. Bases must be nonnegative. An empty result is a configuration
/// error naming the tightest row of the least-violating candidate.
pub fn initial_safe_points<T: Real>(
    grid: &PriceGrid<T>,
    constraints: &ConstraintSet<T>,
    bases: &[BasisRef<T>],
    norm_bound: T,
    margin: T,
) -> Result<Vec<JointPrice>> {
    if !(norm_bound > T::zero()) {
        return Err(Error::Config("norm bound S must be positive".into()));
    }
    check_users(constraints, bases.len(), "bases per user")?;
    let cache = BasisCache::new(grid, bases)?;
    let table = LoadTable::build(constraints, grid, &ConsumptionBounds::from_prior(grid, &cache, norm_bound));
    initial_safe_points_from_table(grid, constraints, &table, margin)
}

pub(crate) fn initial_safe_points_from_table<T: Real>(
    grid: &PriceGrid<T>,
    constraints: &ConstraintSet<T>,
    table: &LoadTable<T>,
    margin: T,
) -> Result<Vec<JointPrice>> {
    let mut safe = Vec::new();
    let mut closest: Option<(JointPrice, T)> = None;
    for joint in enumerate_joint(grid) {
        let m = table.margin(&joint, constraints.limits(), margin);
        if m >= T::zero() {
            safe.push(joint);
        } else if closest.as_ref().is_none_or(|(_, best)| m > *best) {
            closest = Some((joint, m));
        }
    }
    if safe.is_empty() {
        let (joint, _) = closest.expect("grid has at least one candidate");
        let (row, slack) = table.tightest(&joint, constraints.limits(), margin);
        return Err(Error::EmptyInitialSafeSet {
            row,
            name: constraints.names()[row].clone(),
            slack: slack.to_f64_lossy(),
        });
    }
    Ok(safe)
}
