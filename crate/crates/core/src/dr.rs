//! Demand-response scenario: appliance-cluster price response, preference
//! sigmoids, LinDistFlow feeder constraints and the JSON scenario file.
//!
//! Each user's basis has one column per appliance cluster. Column `k` at
//! price profile `γ` is the cost-minimizing schedule of cluster `k` scaled by
//! the preference weight `1/(1 + e^{Σγ − offset_k})`; the unknown parameter
//! counts how much of each cluster the household runs.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::response::{Basis, BasisRef, PriceDomain, ResponseModel};
use crate::safety::{ConstraintSet, PriceGrid};
use crate::scalar::Real;

/// The scenario bundled with the crate (37-user radial feeder, three groups).
pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/default.json");

#[derive(Debug, Clone, PartialEq)]
pub enum Placement {
    /// Runs in every listed interval.
    Fixed(Vec<usize>),
    /// Runs in exactly one interval, the cheapest of those listed.
    OneOf(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Appliance<T: Real> {
    pub name: String,
    /// Power draw in consumption units (W in scenario files).
    pub power: T,
    /// Zero-based period indices.
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplianceCluster<T: Real> {
    pub name: String,
    pub appliances: Vec<Appliance<T>>,
    pub preference_offset: T,
}

/// Cost-minimizing schedule of one cluster; ties go to the lowest period.
pub fn schedule_cluster<T: Real>(cluster: &ApplianceCluster<T>, price: &[T]) -> Vec<T> {
    let mut profile = vec![T::zero(); price.len()];
    add_schedule(cluster, price, T::one(), &mut profile);
    profile
}

fn add_schedule<T: Real>(cluster: &ApplianceCluster<T>, price: &[T], scale: T, profile: &mut [T]) {
    for app in &cluster.appliances {
        match &app.placement {
            Placement::Fixed(slots) => {
                for &v in slots {
                    profile[v] += app.power * scale;
                }
            }
            Placement::OneOf(slots) => {
                let mut best = slots[0];
                for &v in &slots[1..] {
                    if price[v] < price[best] || (price[v] == price[best] && v < best) {
                        best = v;
                    }
                }
                profile[best] += app.power * scale;
            }
        }
    }
}

/// `1/(1 + e^{Σγ − offset})`.
pub fn preference_weight<T: Real>(price: &[T], offset: T) -> T {
    let total = price.iter().fold(T::zero(), |a, &b| a + b);
    T::one() / (T::one() + (total - offset).exp())
}

/// Appliance-cluster basis: `V × m`, column `k` is cluster `k`'s weighted schedule.
#[derive(Debug, Clone)]
pub struct ClusterBasis<T: Real> {
    periods: usize,
    clusters: Vec<ApplianceCluster<T>>,
    domain: PriceDomain,
}

impl<T: Real> ClusterBasis<T> {
    pub fn new(periods: usize, clusters: Vec<ApplianceCluster<T>>, domain: PriceDomain) -> Self {
        Self {
            periods,
            clusters,
            domain,
        }
    }

    pub fn clusters(&self) -> &[ApplianceCluster<T>] {
        &self.clusters
    }
}

/// Column `k` = `schedule_cluster(cluster_k, γ) · preference_weight(γ, offset_k)`.
pub fn basis_eval<T: Real>(clusters: &[ApplianceCluster<T>], price: &[T]) -> DMatrix<T> {
    let mut h = DMatrix::zeros(price.len(), clusters.len());
    for (k, c) in clusters.iter().enumerate() {
        let w = preference_weight(price, c.preference_offset);
        add_schedule(c, price, w, h.column_mut(k).as_mut_slice());
    }
    h
}

impl<T: Real> Basis<T> for ClusterBasis<T> {
    fn periods(&self) -> usize {
        self.periods
    }
    fn dim(&self) -> usize {
        self.clusters.len()
    }
    fn domain(&self) -> PriceDomain {
        self.domain
    }
    fn eval_unchecked(&self, price: &[T]) -> DMatrix<T> {
        basis_eval(&self.clusters, price)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line<T: Real> {
    /// Downstream node of the line.
    pub node: usize,
    pub parent: usize,
    pub r_pu: T,
    pub s_max_kw: T,
}

/// Radial distribution feeder with users attached to nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FeederNetwork<T: Real> {
    /// Node id → zero-based users attached there.
    pub nodes: BTreeMap<usize, Vec<usize>>,
    pub lines: Vec<Line<T>>,
    pub v0_pu: T,
    pub v_min_pu: T,
    pub v_max_pu: T,
    /// kW per unit of user consumption (1e-3 when consumption is in W).
    pub kw_per_unit: T,
}

struct Tree {
    root: usize,
    /// child node → line index
    line_of: BTreeMap<usize, usize>,
    children: BTreeMap<usize, Vec<usize>>,
}

impl<T: Real> FeederNetwork<T> {
    fn tree(&self) -> Result<Tree> {
        let mut line_of = BTreeMap::new();
        let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (idx, line) in self.lines.iter().enumerate() {
            for end in [line.node, line.parent] {
                if !self.nodes.contains_key(&end) {
                    return Err(Error::Network(format!("line references unknown node {end}")));
                }
            }
            if line.node == line.parent {
                return Err(Error::Network(format!("cycle: node {} feeds itself", line.node)));
            }
            if line_of.insert(line.node, idx).is_some() {
                return Err(Error::Network(format!(
                    "cycle: node {} has more than one parent line",
                    line.node
                )));
            }
            children.entry(line.parent).or_default().push(line.node);
        }
        let roots: Vec<usize> = self.nodes.keys().copied().filter(|n| !line_of.contains_key(n)).collect();
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(Error::Network("cycle: no root node (every node has a parent)".into())),
            _ => return Err(Error::Network(format!("disconnected: {} root nodes {:?}", roots.len(), roots))),
        };
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([root]);
        while let Some(n) = queue.pop_front() {
            if !seen.insert(n) {
                return Err(Error::Network(format!("cycle through node {n}")));
            }
            queue.extend(children.get(&n).into_iter().flatten().copied());
        }
        if seen.len() != self.nodes.len() {
            let stray: Vec<usize> = self.nodes.keys().copied().filter(|n| !seen.contains(n)).collect();
            return Err(Error::Network(format!("cycle: nodes {stray:?} are unreachable from the root")));
        }
        Ok(Tree {
            root,
            line_of,
            children,
        })
    }

    pub fn validate(&self, users: usize) -> Result<()> {
        self.tree()?;
        let mut owner = vec![None; users];
        for (&node, attached) in &self.nodes {
            for &u in attached {
                if u >= users {
                    return Err(Error::Network(format!("node {node} hosts unknown user {}", u + 1)));
                }
                if owner[u].replace(node).is_some() {
                    return Err(Error::Network(format!("user {} attached to two nodes", u + 1)));
                }
            }
        }
        if let Some(u) = owner.iter().position(Option::is_none) {
            return Err(Error::Network(format!("user {} is not attached to the network", u + 1)));
        }
        if self.lines.iter().any(|l| !(l.r_pu >= T::zero()) || !(l.s_max_kw > T::zero())) {
            return Err(Error::Network("line resistance must be ≥ 0 and flow limit > 0".into()));
        }
        Ok(())
    }

    /// Lines from the root down to `node`, as line indices.
    fn path(&self, tree: &Tree, node: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut n = node;
        while n != tree.root {
            let l = tree.line_of[&n];
            path.push(l);
            n = self.lines[l].parent;
        }
        path.reverse();
        path
    }

    fn subtree_users(&self, tree: &Tree, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            out.extend(self.nodes[&n].iter().copied());
            stack.extend(tree.children.get(&n).into_iter().flatten().copied());
        }
        out.sort_unstable();
        out
    }
}

/// LinDistFlow constraints for a pure-load feeder: one flow row per line and
/// one lower-voltage row per non-root node, in squared per-unit voltage with
/// loads in kW. Upper-voltage rows are omitted since loads only pull voltage
/// below `v0`.
pub fn build_constraints<T: Real>(network: &FeederNetwork<T>, users: usize) -> Result<ConstraintSet<T>> {
    network.validate(users)?;
    let tree = network.tree()?;
    let mut rows: Vec<Vec<T>> = Vec::new();
    let mut limits = Vec::new();
    let mut names = Vec::new();

    for line in &network.lines {
        let mut a = vec![T::zero(); users];
        for u in network.subtree_users(&tree, line.node) {
            a[u] = network.kw_per_unit;
        }
        rows.push(a);
        limits.push(line.s_max_kw);
        names.push(format!("flow:{}-{}", line.parent, line.node));
    }

    let user_node: BTreeMap<usize, usize> = network
        .nodes
        .iter()
        .flat_map(|(&n, us)| us.iter().map(move |&u| (u, n)))
        .collect();
    let user_paths: Vec<BTreeSet<usize>> = (0..users)
        .map(|u| network.path(&tree, user_node[&u]).into_iter().collect())
        .collect();
    let headroom = network.v0_pu * network.v0_pu - network.v_min_pu * network.v_min_pu;
    let two = T::lit(2.0) * network.kw_per_unit;
    for &node in network.nodes.keys() {
        if node == tree.root {
            continue;
        }
        let node_path: BTreeSet<usize> = network.path(&tree, node).into_iter().collect();
        let a: Vec<T> = user_paths
            .iter()
            .map(|up| {
                two * node_path
                    .intersection(up)
                    .fold(T::zero(), |acc, &l| acc + network.lines[l].r_pu)
            })
            .collect();
        if a.iter().all(|&x| x == T::zero()) {
            continue;
        }
        rows.push(a);
        limits.push(headroom);
        names.push(format!("voltage:{node}"));
    }

    let p = rows.len();
    let coefficients = DMatrix::from_fn(p, users, |j, i| rows[j][i]);
    ConstraintSet::new(coefficients, limits, names)
}

// ---------------------------------------------------------------------------
// scenario file

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub users: usize,
    #[serde(default = "default_periods")]
    pub periods: usize,
    pub clusters: Vec<ClusterSpec>,
    #[serde(default)]
    pub groups: Option<Vec<Vec<usize>>>,
    #[serde(default = "default_levels")]
    pub price_levels: Vec<f64>,
    pub network: NetworkSpec,
    #[serde(default)]
    pub limits: LimitSpec,
    #[serde(default)]
    pub learning: LearningSpec,
    #[serde(default)]
    pub truth: TruthSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub name: String,
    #[serde(default = "default_offset")]
    pub preference_offset: f64,
    pub appliances: Vec<ApplianceSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApplianceSpec {
    pub name: String,
    pub power_w: f64,
    /// One-based intervals the appliance always occupies.
    #[serde(default)]
    pub fixed: Option<Vec<usize>>,
    /// One-based intervals of which exactly one is used.
    #[serde(default)]
    pub one_of: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub nodes: Vec<NodeSpec>,
    pub lines: Vec<LineSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: usize,
    /// One-based user ids attached to this node.
    #[serde(default)]
    pub users: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub node: usize,
    pub parent: usize,
    pub r_pu: f64,
    pub s_max_kw: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitSpec {
    #[serde(default = "default_vmin")]
    pub v_min_pu: f64,
    #[serde(default = "default_vmax")]
    pub v_max_pu: f64,
    #[serde(default = "default_v0")]
    pub v0_pu: f64,
}

impl Default for LimitSpec {
    fn default() -> Self {
        Self {
            v_min_pu: default_vmin(),
            v_max_pu: default_vmax(),
            v0_pu: default_v0(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSpec {
    #[serde(rename = "T", default)]
    pub horizon: Option<usize>,
    #[serde(rename = "T_prime", default)]
    pub exploration: Option<usize>,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Noise standard deviation; defaults depend on the algorithm.
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub zeta: Option<f64>,
    /// Prior bound `S` on `‖θ‖`; defaults to the norm of the largest parameter
    /// allowed by `truth.theta_range`.
    #[serde(default)]
    pub norm_bound: Option<f64>,
    #[serde(default)]
    pub riemann_segments: Option<usize>,
    #[serde(default)]
    pub smoothing_offset: Option<f64>,
    #[serde(default)]
    pub anchor: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    #[serde(default = "default_theta_range")]
    pub theta_range: [f64; 2],
    #[serde(default = "default_b_range")]
    pub b_range: [f64; 2],
    #[serde(default = "default_truth_seed")]
    pub seed: u64,
}

impl Default for TruthSpec {
    fn default() -> Self {
        Self {
            theta_range: default_theta_range(),
            b_range: default_b_range(),
            seed: default_truth_seed(),
        }
    }
}

fn default_periods() -> usize {
    3
}
fn default_levels() -> Vec<f64> {
    vec![2.0, 5.0]
}
fn default_offset() -> f64 {
    5.0
}
fn default_vmin() -> f64 {
    0.95
}
fn default_vmax() -> f64 {
    1.05
}
fn default_v0() -> f64 {
    1.0
}
fn default_theta_range() -> [f64; 2] {
    [0.5, 1.0]
}
fn default_b_range() -> [f64; 2] {
    [0.0, 1.0]
}
fn default_truth_seed() -> u64 {
    1
}

pub const DEFAULT_HORIZON: usize = 365;
pub const DEFAULT_NU: f64 = 10.0;
pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_SIGMA_SPR: f64 = 1.5;
pub const DEFAULT_SIGMA_SUM: f64 = 3.0;

/// Fully validated demand-response configuration.
#[derive(Debug, Clone)]
pub struct DrScenario<T: Real> {
    pub users: usize,
    pub periods: usize,
    pub clusters: Vec<ApplianceCluster<T>>,
    pub groups: Vec<Vec<usize>>,
    pub price_levels: Vec<T>,
    pub network: FeederNetwork<T>,
    pub horizon: usize,
    pub exploration: Option<usize>,
    pub nu: T,
    pub delta: T,
    pub sigma: Option<T>,
    pub zeta: T,
    pub norm_bound: T,
    pub riemann_segments: usize,
    pub smoothing_offset: T,
    pub anchor: Vec<T>,
    pub theta_range: [T; 2],
    pub truth_seed: u64,
    /// Hidden per-user parameters (simulation only).
    pub theta_true: Vec<Vec<T>>,
    /// Per-user weights of the logarithmic utility.
    pub utility_weights: Vec<T>,
    pub constraints: ConstraintSet<T>,
    /// The unmodified file, echoed into run summaries.
    pub source: ScenarioFile,
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

/// Reads and validates a scenario file.
pub fn load_scenario<T: Real>(path: impl AsRef<Path>) -> Result<DrScenario<T>> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

/// The bundled scenario.
pub fn default_scenario<T: Real>() -> Result<DrScenario<T>> {
    parse_scenario(DEFAULT_SCENARIO)
}

pub fn parse_scenario<T: Real>(text: &str) -> Result<DrScenario<T>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(path, e.into_inner().to_string())
    })?;
    from_file(file)
}

pub fn from_file<T: Real>(file: ScenarioFile) -> Result<DrScenario<T>> {
    let lit = T::lit;
    let n = file.users;
    let periods = file.periods;
    if n == 0 {
        return Err(schema("users", "must be positive"));
    }
    if periods == 0 {
        return Err(schema("periods", "must be positive"));
    }
    if file.clusters.is_empty() {
        return Err(schema("clusters", "at least one cluster is required"));
    }

    let mut clusters = Vec::with_capacity(file.clusters.len());
    for (k, c) in file.clusters.iter().enumerate() {
        let mut appliances = Vec::new();
        for (a, app) in c.appliances.iter().enumerate() {
            let at = format!("clusters[{k}].appliances[{a}]");
            if !(app.power_w > 0.0) {
                return Err(schema(format!("{at}.power_w"), "must be positive"));
            }
            let to_slots = |slots: &Vec<usize>, field: &str| -> Result<Vec<usize>> {
                if slots.is_empty() {
                    return Err(schema(format!("{at}.{field}"), "must list at least one interval"));
                }
                slots
                    .iter()
                    .map(|&s| {
                        if s == 0 || s > periods {
                            Err(schema(format!("{at}.{field}"), format!("interval {s} outside 1..={periods}")))
                        } else {
                            Ok(s - 1)
                        }
                    })
                    .collect()
            };
            let placement = match (&app.fixed, &app.one_of) {
                (Some(f), None) => Placement::Fixed(to_slots(f, "fixed")?),
                (None, Some(o)) => Placement::OneOf(to_slots(o, "one_of")?),
                _ => return Err(schema(at, "exactly one of `fixed` or `one_of` is required")),
            };
            appliances.push(Appliance {
                name: app.name.clone(),
                power: lit(app.power_w),
                placement,
            });
        }
        clusters.push(ApplianceCluster {
            name: c.name.clone(),
            appliances,
            preference_offset: lit(c.preference_offset),
        });
    }
    let m = clusters.len();

    let groups: Vec<Vec<usize>> = match &file.groups {
        None => vec![(0..n).collect()],
        Some(gs) => {
            let mut out = Vec::new();
            for (g, members) in gs.iter().enumerate() {
                let mut zero_based = Vec::new();
                for &u in members {
                    if u == 0 || u > n {
                        return Err(schema(format!("groups[{g}]"), format!("user {u} outside 1..={n}")));
                    }
                    zero_based.push(u - 1);
                }
                out.push(zero_based);
            }
            out
        }
    };

    if file.price_levels.is_empty() {
        return Err(schema("price_levels", "at least one level is required"));
    }
    if file.price_levels.iter().any(|&p| !(p > 0.0)) {
        return Err(schema("price_levels", "levels must be positive"));
    }
    let price_levels: Vec<T> = file.price_levels.iter().map(|&p| lit(p)).collect();

    let mut nodes = BTreeMap::new();
    for (k, node) in file.network.nodes.iter().enumerate() {
        let mut us = Vec::new();
        for &u in &node.users {
            if u == 0 || u > n {
                return Err(schema(format!("network.nodes[{k}].users"), format!("user {u} outside 1..={n}")));
            }
            us.push(u - 1);
        }
        if nodes.insert(node.id, us).is_some() {
            return Err(schema(format!("network.nodes[{k}].id"), format!("duplicate node id {}", node.id)));
        }
    }
    let lines = file
        .network
        .lines
        .iter()
        .map(|l| Line {
            node: l.node,
            parent: l.parent,
            r_pu: lit(l.r_pu),
            s_max_kw: lit(l.s_max_kw),
        })
        .collect();
    let limits = &file.limits;
    if !(limits.v_min_pu < limits.v0_pu && limits.v0_pu <= limits.v_max_pu) {
        return Err(schema("limits", "require v_min_pu < v0_pu ≤ v_max_pu"));
    }
    let network = FeederNetwork {
        nodes,
        lines,
        v0_pu: lit(limits.v0_pu),
        v_min_pu: lit(limits.v_min_pu),
        v_max_pu: lit(limits.v_max_pu),
        kw_per_unit: lit(1e-3),
    };
    let constraints = build_constraints(&network, n)?;

    let learn = &file.learning;
    let horizon = learn.horizon.unwrap_or(DEFAULT_HORIZON);
    if let Some(tp) = learn.exploration {
        if tp > horizon {
            return Err(schema("learning.T_prime", "must not exceed T"));
        }
    }
    let nu = learn.nu.unwrap_or(DEFAULT_NU);
    if !(nu > 0.0) {
        return Err(schema("learning.nu", "must be positive"));
    }
    let delta = learn.delta.unwrap_or(DEFAULT_DELTA);
    if !(delta > 0.0 && delta < 1.0) {
        return Err(schema("learning.delta", "must lie in (0, 1)"));
    }
    if let Some(s) = learn.sigma {
        if !(s >= 0.0) {
            return Err(schema("learning.sigma", "must be nonnegative"));
        }
    }
    let min_limit = constraints
        .limits()
        .iter()
        .fold(f64::INFINITY, |a, c| a.min(c.to_f64_lossy()));
    let zeta = learn.zeta.unwrap_or(0.05 * min_limit);
    if !(zeta >= 0.0) {
        return Err(schema("learning.zeta", "must be nonnegative"));
    }

    let truth = &file.truth;
    let [lo, hi] = truth.theta_range;
    if !(0.0 <= lo && lo <= hi && hi > 0.0) {
        return Err(schema("truth.theta_range", "require 0 ≤ lo ≤ hi, hi > 0"));
    }
    let [blo, bhi] = truth.b_range;
    if !(0.0 <= blo && blo <= bhi) {
        return Err(schema("truth.b_range", "require 0 ≤ lo ≤ hi"));
    }
    let norm_bound = learn.norm_bound.unwrap_or(hi * (m as f64).sqrt());
    if !(norm_bound >= hi * (m as f64).sqrt() - 1e-12) {
        return Err(schema("learning.norm_bound", "must cover every parameter in truth.theta_range"));
    }
    let segments = learn.riemann_segments.unwrap_or(5);
    if segments == 0 {
        return Err(schema("learning.riemann_segments", "must be positive"));
    }
    let smoothing = learn.smoothing_offset.unwrap_or(1.0);
    if !(smoothing > 0.0) {
        return Err(schema("learning.smoothing_offset", "must be positive"));
    }
    let anchor = learn.anchor.clone().unwrap_or_else(|| vec![1.0; periods]);
    if anchor.len() != periods || anchor.iter().any(|&x| !(x > 0.0)) {
        return Err(schema("learning.anchor", "must be a positive vector with one entry per period"));
    }

    // hidden truth: θ_i ~ U[lo, hi]^m, b_i ~ U[blo, bhi]
    let mut rng = ChaCha8Rng::seed_from_u64(truth.seed);
    let mut theta_true = Vec::with_capacity(n);
    let mut utility_weights = Vec::with_capacity(n);
    for _ in 0..n {
        let th: Vec<T> = (0..m).map(|_| lit(uniform(&mut rng, lo, hi))).collect();
        theta_true.push(th);
        utility_weights.push(lit(uniform(&mut rng, blo, bhi)));
    }

    // validates the partition
    PriceGrid::new(n, periods, price_levels.clone(), groups.clone())
        .map_err(|e| schema("groups", e.to_string()))?;

    Ok(DrScenario {
        users: n,
        periods,
        clusters,
        groups,
        price_levels,
        network,
        horizon,
        exploration: learn.exploration,
        nu: lit(nu),
        delta: lit(delta),
        sigma: learn.sigma.map(lit),
        zeta: lit(zeta),
        norm_bound: lit(norm_bound),
        riemann_segments: segments,
        smoothing_offset: lit(smoothing),
        anchor: anchor.into_iter().map(lit).collect(),
        theta_range: [lit(lo), lit(hi)],
        truth_seed: truth.seed,
        theta_true,
        utility_weights,
        constraints,
        source: file,
    })
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

impl<T: Real> DrScenario<T> {
    pub fn grid(&self) -> PriceGrid<T> {
        PriceGrid::new(self.users, self.periods, self.price_levels.clone(), self.groups.clone())
            .expect("validated at load")
    }

    pub fn basis(&self, domain: PriceDomain) -> BasisRef<T> {
        Arc::new(ClusterBasis::new(self.periods, self.clusters.clone(), domain))
    }

    /// Per-user response models. With `shared_by_group`, every user takes the
    /// parameter of the first member of its group.
    pub fn response_models(&self, domain: PriceDomain, shared_by_group: bool) -> Result<Vec<ResponseModel<T>>> {
        let basis = self.basis(domain);
        let grid = self.grid();
        (0..self.users)
            .map(|u| {
                let src = if shared_by_group { grid.groups()[grid.group_of(u)][0] } else { u };
                ResponseModel::new(basis.clone(), self.theta_true[src].clone(), self.norm_bound)
            })
            .collect()
    }
}
