//! Traces, the grid oracle, regret and violation metrics, persistence, and
//! the command-line driver.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::dr::{default_scenario, load_scenario, DrScenario, DEFAULT_SIGMA_SPR, DEFAULT_SIGMA_SUM};
use crate::error::{Error, Result};
use crate::response::{NoiseSource, Observation, PriceDomain, ResponseModel};
use crate::safety::{
    enumerate_joint, BasisCache, ConsumptionBounds, ConstraintSet, JointPrice, LoadTable, PriceGrid, SafetyCertificate,
};
use crate::scalar::Real;
use crate::spr::{run_spr, LearnerConfig, LogUtility, SprConfig, UtilityRef};
use crate::sum::{run_sum, utility_eval, InverseMode, InverseOptions, SumConfig, UtilityOptions};

/// Which set certified the broadcast price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CertificateSource {
    /// The prior ball (exploration).
    Prior,
    /// The current confidence sets.
    Confidence,
    /// Nothing was certified; an initially safe price was drawn instead.
    Fallback,
}

#[derive(Debug, Clone)]
pub struct TraceStep<T: Real> {
    /// Zero-based step.
    pub t: usize,
    pub joint: JointPrice,
    pub observations: Vec<Observation<T>>,
    pub certificate: SafetyCertificate<T>,
    pub source: CertificateSource,
    pub explore: bool,
    pub optimistic_value: Option<T>,
    /// Instantaneous regret, filled by [`score_trace`].
    pub regret: T,
    /// True load broke a constraint, filled by [`score_trace`].
    pub violated: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentTrace<T: Real> {
    pub steps: Vec<TraceStep<T>>,
    pub exploration: usize,
    /// Largest inverse-response residual met while scoring (utility runs).
    pub max_inverse_residual: Option<T>,
    pub wall_clock: Duration,
}

impl<T: Real> ExperimentTrace<T> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn regrets(&self) -> Vec<T> {
        self.steps.iter().map(|s| s.regret).collect()
    }

    pub fn cumulative_regret(&self) -> T {
        self.steps.iter().fold(T::zero(), |a, s| a + s.regret)
    }

    pub fn violations(&self) -> usize {
        self.steps.iter().filter(|s| s.violated).count()
    }

    pub fn fallback_steps(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| s.source == CertificateSource::Fallback)
            .count()
    }
}

/// Trailing sums over `window` steps (shorter at the start).
pub fn rolling_sum<T: Real>(series: &[T], window: usize) -> Vec<T> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = T::zero();
    for (t, &x) in series.iter().enumerate() {
        acc += x;
        if t >= w {
            acc -= series[t - w];
        }
        out.push(acc);
    }
    out
}

/// Ground truth over the grid: every user's utility at every option, and the
/// exact loads.
#[derive(Debug, Clone)]
pub struct TruthTable<T: Real> {
    /// `[user][option]`
    pub values: Vec<Vec<T>>,
    pub grid: PriceGrid<T>,
    pub loads: LoadTable<T>,
    pub limits: Vec<T>,
}

impl<T: Real> TruthTable<T> {
    pub fn from_values(
        models: &[ResponseModel<T>],
        grid: &PriceGrid<T>,
        constraints: &ConstraintSet<T>,
        values: Vec<Vec<T>>,
    ) -> Result<Self> {
        let bases: Vec<_> = models.iter().map(|m| m.basis().clone()).collect();
        let cache = BasisCache::new(grid, &bases)?;
        let thetas: Vec<_> = models.iter().map(|m| m.theta_true().clone()).collect();
        let exact = ConsumptionBounds::exact(grid, &cache, &thetas);
        Ok(Self {
            values,
            grid: grid.clone(),
            loads: LoadTable::build(constraints, grid, &exact),
            limits: constraints.limits().to_vec(),
        })
    }

    /// Coordinator-designed utilities of the true mean consumption.
    pub fn spr(
        models: &[ResponseModel<T>],
        grid: &PriceGrid<T>,
        constraints: &ConstraintSet<T>,
        utilities: &[UtilityRef<T>],
    ) -> Result<Self> {
        let values = models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                (0..grid.option_count())
                    .map(|o| Ok(utilities[i].value(&m.mean_consumption(grid.option_prices(o))?)))
                    .collect::<Result<Vec<T>>>()
            })
            .collect::<Result<_>>()?;
        Self::from_values(models, grid, constraints, values)
    }

    /// Integral utilities under the true parameters. Users with identical
    /// parameters and bases are evaluated once.
    pub fn sum(
        models: &[ResponseModel<T>],
        grid: &PriceGrid<T>,
        constraints: &ConstraintSet<T>,
        options: &UtilityOptions<T>,
        consumption_floor: T,
    ) -> Result<Self> {
        let mut reps: Vec<usize> = Vec::new();
        let mut rep_of = Vec::with_capacity(models.len());
        for (i, m) in models.iter().enumerate() {
            let same = reps.iter().position(|&r| {
                Arc::ptr_eq(models[r].basis(), m.basis()) && models[r].theta_true() == m.theta_true()
            });
            rep_of.push(match same {
                Some(k) => k,
                None => {
                    reps.push(i);
                    reps.len() - 1
                }
            });
        }
        let rep_values: Vec<Vec<T>> = reps
            .par_iter()
            .map(|&r| {
                let m = &models[r];
                (0..grid.option_count())
                    .map(|o| {
                        let x: Vec<T> = m
                            .mean_consumption(grid.option_prices(o))?
                            .into_iter()
                            .map(|v| v.max(consumption_floor))
                            .collect();
                        Ok(utility_eval(m.basis().as_ref(), m.theta_true().as_slice(), &x, options)?.value)
                    })
                    .collect::<Result<Vec<T>>>()
            })
            .collect::<Result<_>>()?;
        let values = rep_of.iter().map(|&k| rep_values[k].clone()).collect();
        Self::from_values(models, grid, constraints, values)
    }

    pub fn value(&self, joint: &[usize]) -> T {
        self.grid
            .groups()
            .iter()
            .zip(joint)
            .fold(T::zero(), |acc, (members, &o)| {
                members.iter().fold(acc, |a, &i| a + self.values[i][o])
            })
    }

    /// Smallest slack of the true load.
    pub fn margin(&self, joint: &[usize]) -> T {
        self.loads.margin(joint, &self.limits, T::zero())
    }

    pub fn feasible(&self, joint: &[usize]) -> bool {
        self.margin(joint) >= T::zero()
    }
}

/// Best truly feasible grid candidate, first in enumeration order on ties.
pub fn oracle_optimal<T: Real>(truth: &TruthTable<T>) -> Result<(JointPrice, T)> {
    let mut best: Option<(JointPrice, T)> = None;
    for joint in enumerate_joint(&truth.grid) {
        if !truth.feasible(&joint) {
            continue;
        }
        let v = truth.value(&joint);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((joint, v));
        }
    }
    best.ok_or(Error::NoFeasibleCandidate)
}

/// `r_t = value(γ*) − value(γ^t)` from true means, and `R_T = Σ r_t`.
pub fn regret_series<T: Real>(trace: &ExperimentTrace<T>, oracle_value: T, truth: &TruthTable<T>) -> (Vec<T>, T) {
    let series: Vec<T> = trace.steps.iter().map(|s| oracle_value - truth.value(&s.joint)).collect();
    let total = series.iter().fold(T::zero(), |a, &r| a + r);
    (series, total)
}

/// Steps whose true mean load exceeds a limit.
pub fn violation_count<T: Real>(trace: &ExperimentTrace<T>, truth: &TruthTable<T>) -> usize {
    trace.steps.iter().filter(|s| !truth.feasible(&s.joint)).count()
}

/// Fills regret and violation flags in place.
pub fn score_trace<T: Real>(trace: &mut ExperimentTrace<T>, truth: &TruthTable<T>, oracle_value: T) {
    for s in trace.steps.iter_mut() {
        s.regret = oracle_value - truth.value(&s.joint);
        s.violated = !truth.feasible(&s.joint);
    }
}

/// The initially safe candidate with the lowest total price.
pub fn cheapest_safe_point<T: Real>(grid: &PriceGrid<T>, safe_points: &[JointPrice]) -> Option<JointPrice> {
    let mut best: Option<(&JointPrice, T)> = None;
    for p in safe_points {
        let cost = grid.total_price(p);
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((p, cost));
        }
    }
    best.map(|(p, _)| p.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Spr,
    Sum,
}

/// Overrides applied on top of a scenario.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub horizon: Option<usize>,
    pub exploration: Option<usize>,
    pub delta: Option<f64>,
    pub nu: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum PolicyConfig<T: Real> {
    Spr(SprConfig<T>),
    Sum(SumConfig<T>),
}

/// Everything needed to run seeded trials of one algorithm on one scenario.
#[derive(Debug, Clone)]
pub struct Experiment<T: Real> {
    pub algorithm: Algorithm,
    pub grid: PriceGrid<T>,
    pub constraints: ConstraintSet<T>,
    pub models: Vec<ResponseModel<T>>,
    pub policy: PolicyConfig<T>,
    pub truth: TruthTable<T>,
    pub oracle: (JointPrice, T),
    pub safe_points: Vec<JointPrice>,
    pub sigma: T,
    pub horizon: usize,
    pub exploration: usize,
}

impl<T: Real> Experiment<T> {
    pub fn learner(&self) -> &LearnerConfig<T> {
        match &self.policy {
            PolicyConfig::Spr(c) => &c.learner,
            PolicyConfig::Sum(c) => &c.learner,
        }
    }

    fn learner_mut(&mut self) -> &mut LearnerConfig<T> {
        match &mut self.policy {
            PolicyConfig::Spr(c) => &mut c.learner,
            PolicyConfig::Sum(c) => &mut c.learner,
        }
    }

    /// Cheapest initially safe point, played every step.
    pub fn baseline(&self) -> Option<JointPrice> {
        cheapest_safe_point(&self.grid, &self.safe_points)
    }

    pub fn baseline_regret(&self) -> Option<T> {
        self.baseline()
            .map(|b| (self.oracle.1 - self.truth.value(&b)) * T::from_usize_lossy(self.horizon))
    }

    /// Runs and scores trial `trial`; depends only on the experiment, `base_seed` and `trial`.
    pub fn run_trial(&self, base_seed: u64, trial: u64) -> Result<ExperimentTrace<T>> {
        let mut learner_seeded = self.clone();
        learner_seeded.learner_mut().seed = mix_seed(base_seed, trial, u64::MAX);
        let mut noise: Vec<NoiseSource<T>> = (0..self.models.len())
            .map(|i| NoiseSource::new(self.sigma, mix_seed(base_seed, trial, i as u64)))
            .collect();
        let mut trace = match &learner_seeded.policy {
            PolicyConfig::Spr(c) => run_spr(&self.models, &mut noise, &self.constraints, &self.grid, c)?,
            PolicyConfig::Sum(c) => run_sum(&self.models, &mut noise, &self.constraints, &self.grid, c)?,
        };
        score_trace(&mut trace, &self.truth, self.oracle.1);
        Ok(trace)
    }
}

/// SplitMix64 finalizer over (base, trial, stream).
pub fn mix_seed(base: u64, trial: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(trial.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds the experiment for `algorithm` on a demand-response scenario.
pub fn prepare<T: Real>(scenario: &DrScenario<T>, algorithm: Algorithm, overrides: &RunOverrides) -> Result<Experiment<T>> {
    let lit = T::lit;
    let grid = scenario.grid();
    let horizon = overrides.horizon.unwrap_or(scenario.horizon);
    let exploration_override = overrides.exploration.or(scenario.exploration);
    let default_sigma = match algorithm {
        Algorithm::Spr => lit(DEFAULT_SIGMA_SPR),
        Algorithm::Sum => lit(DEFAULT_SIGMA_SUM),
    };
    let sigma = overrides.sigma.map(lit).or(scenario.sigma).unwrap_or(default_sigma);
    let learner = LearnerConfig {
        horizon,
        exploration: exploration_override.map(|e| e.min(horizon)),
        confidence: overrides.delta.map(lit).unwrap_or(scenario.delta),
        regularizer: overrides.nu.map(lit).unwrap_or(scenario.nu),
        sigma,
        norm_bound: scenario.norm_bound,
        basis_bound: None,
        margin: scenario.zeta,
        pin_radius: None,
        prior_cap: true,
        seed: 0,
    };
    if exploration_override.is_some_and(|e| e > horizon) && overrides.exploration.is_some() {
        return Err(Error::Config("exploration length exceeds horizon".into()));
    }
    learner.validate()?;
    let exploration = crate::spr::exploration_horizon(horizon, learner.exploration)?;
    let constraints = scenario.constraints.clone();
    let (models, policy, truth) = match algorithm {
        Algorithm::Spr => {
            let models = scenario.response_models(PriceDomain::AllReals, false)?;
            let utilities: Vec<UtilityRef<T>> = scenario
                .utility_weights
                .iter()
                .map(|&b| Arc::new(LogUtility { weight: b }) as UtilityRef<T>)
                .collect();
            let truth = TruthTable::spr(&models, &grid, &constraints, &utilities)?;
            (models, PolicyConfig::Spr(SprConfig { learner, utilities }), truth)
        }
        Algorithm::Sum => {
            let models = scenario.response_models(PriceDomain::Positive, true)?;
            let config = SumConfig {
                learner,
                utility: UtilityOptions {
                    segments: scenario.riemann_segments,
                    anchor: scenario.anchor.clone(),
                    inverse: InverseOptions {
                        smoothing: Some(scenario.smoothing_offset),
                        mode: InverseMode::LeastSquares,
                        ..InverseOptions::default()
                    },
                },
                parameter_floor: scenario.theta_range[0] * T::from_usize_lossy(scenario.clusters.len()),
                shared_by_group: true,
                consumption_floor: lit(1e-6),
            };
            config.validate()?;
            let truth =
                TruthTable::sum(&models, &grid, &constraints, &config.utility, config.consumption_floor)?;
            (models, PolicyConfig::Sum(config), truth)
        }
    };
    let oracle = oracle_optimal(&truth)?;
    let bases: Vec<_> = models.iter().map(|m| m.basis().clone()).collect();
    let safe_points =
        crate::safety::initial_safe_points(&grid, &constraints, &bases, scenario.norm_bound, scenario.zeta)?;
    Ok(Experiment {
        algorithm,
        grid,
        constraints,
        models,
        policy,
        truth,
        oracle,
        safe_points,
        sigma,
        horizon,
        exploration,
    })
}

fn num<T: Real>(x: T) -> String {
    format!("{}", x.to_f64_lossy())
}

/// CSV rendering of a scored trace.
pub fn trace_csv<T: Real>(trace: &ExperimentTrace<T>, grid: &PriceGrid<T>, window: usize) -> String {
    let mut out = String::from("t");
    for g in 0..grid.groups().len() {
        for v in 0..grid.periods() {
            let _ = write!(out, ",price_g{}_p{}", g + 1, v + 1);
        }
    }
    for i in 0..grid.users() {
        for v in 0..grid.periods() {
            let _ = write!(out, ",obs_u{}_p{}", i + 1, v + 1);
        }
    }
    out.push_str(",safe,explore,regret,rolling_regret\n");
    let rolling = rolling_sum(&trace.regrets(), window);
    for (s, roll) in trace.steps.iter().zip(rolling) {
        let _ = write!(out, "{}", s.t + 1);
        for &o in &s.joint {
            for &p in grid.option_prices(o) {
                out.push(',');
                out.push_str(&num(p));
            }
        }
        for obs in &s.observations {
            for &x in &obs.consumption {
                out.push(',');
                out.push_str(&num(x));
            }
        }
        let _ = writeln!(
            out,
            ",{},{},{},{}",
            u8::from(s.certificate.safe),
            u8::from(s.explore),
            num(s.regret),
            num(roll)
        );
    }
    out
}

/// Summary document of one scored trial.
pub fn trace_summary<T: Real>(
    trace: &ExperimentTrace<T>,
    experiment: &Experiment<T>,
    seed: u64,
    trial: u64,
    window: usize,
    scenario: &serde_json::Value,
) -> serde_json::Value {
    let learner = experiment.learner();
    json!({
        "algorithm": experiment.algorithm,
        "seed": seed,
        "trial": trial,
        "horizon": experiment.horizon,
        "exploration": trace.exploration,
        "cumulative_regret": trace.cumulative_regret().to_f64_lossy(),
        "violations": trace.violations(),
        "fallback_steps": trace.fallback_steps(),
        "oracle": {
            "joint": experiment.oracle.0,
            "value": experiment.oracle.1.to_f64_lossy(),
        },
        "baseline": {
            "joint": experiment.baseline(),
            "cumulative_regret": experiment.baseline_regret().map(|r| r.to_f64_lossy()),
        },
        "max_inverse_residual": trace.max_inverse_residual.map(|r| r.to_f64_lossy()),
        "wall_clock_s": trace.wall_clock.as_secs_f64(),
        "config": {
            "delta": learner.confidence.to_f64_lossy(),
            "nu": learner.regularizer.to_f64_lossy(),
            "sigma": learner.sigma.to_f64_lossy(),
            "norm_bound": learner.norm_bound.to_f64_lossy(),
            "zeta": learner.margin.to_f64_lossy(),
            "prior_cap": learner.prior_cap,
            "window": window,
        },
        "scenario": scenario,
    })
}

/// Writes `trace.csv` and `summary.json` into `directory`.
pub fn write_outputs<T: Real>(
    trace: &ExperimentTrace<T>,
    experiment: &Experiment<T>,
    directory: &Path,
    seed: u64,
    trial: u64,
    window: usize,
    scenario: &serde_json::Value,
) -> Result<()> {
    std::fs::create_dir_all(directory)?;
    std::fs::write(directory.join("trace.csv"), trace_csv(trace, &experiment.grid, window))?;
    let summary = trace_summary(trace, experiment, seed, trial, window, scenario);
    std::fs::write(
        directory.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(())
}

#[derive(Debug, Parser)]
#[command(name = "safeprice", version, about = "Safe learning-based pricing simulator")]
pub struct Cli {
    /// Scenario file, or `default` for the bundled feeder.
    #[arg(long, default_value = "default")]
    pub scenario: String,
    #[arg(long, value_enum, default_value = "spr")]
    pub algo: Algorithm,
    #[arg(long, default_value_t = 1)]
    pub trials: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Horizon `T` in steps.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Exploration length `T'`.
    #[arg(long)]
    pub explore: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    /// Noise standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Rolling-regret window.
    #[arg(long, default_value_t = 20)]
    pub window: usize,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

/// Aggregate outcome of a CLI invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub trials: Vec<TrialReport>,
    pub violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialReport {
    pub trial: u64,
    pub cumulative_regret: f64,
    pub violations: usize,
    pub directory: PathBuf,
}

/// Executes parsed arguments.
pub fn execute(cli: &Cli) -> Result<RunReport> {
    let scenario: DrScenario<f64> = if cli.scenario == "default" {
        default_scenario()?
    } else {
        load_scenario(&cli.scenario)?
    };
    let overrides = RunOverrides {
        horizon: cli.horizon,
        exploration: cli.explore,
        delta: cli.delta,
        nu: cli.nu,
        sigma: cli.sigma,
    };
    let experiment = prepare(&scenario, cli.algo, &overrides)?;
    let echo = serde_json::to_value(&scenario.source)?;
    std::fs::create_dir_all(&cli.out)?;
    let trials: Vec<TrialReport> = (0..cli.trials)
        .into_par_iter()
        .map(|k| {
            let trace = experiment.run_trial(cli.seed, k)?;
            let dir = cli.out.join(format!("trial_{:03}", k + 1));
            write_outputs(&trace, &experiment, &dir, cli.seed, k, cli.window, &echo)?;
            Ok(TrialReport {
                trial: k + 1,
                cumulative_regret: trace.cumulative_regret(),
                violations: trace.violations(),
                directory: dir,
            })
        })
        .collect::<Result<_>>()?;
    let report = RunReport {
        violations: trials.iter().map(|t| t.violations).sum(),
        trials,
    };
    let aggregate = json!({
        "algorithm": cli.algo,
        "seed": cli.seed,
        "trials": report.trials,
        "violations": report.violations,
        "oracle_value": experiment.oracle.1,
        "baseline_cumulative_regret": experiment.baseline_regret(),
    });
    std::fs::write(cli.out.join("summary.json"), serde_json::to_string_pretty(&aggregate)? + "\n")?;
    Ok(report)
}

/// Parses `args` (program name first), runs, and returns the exit status.
pub fn cli_run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(report) => {
            for t in &report.trials {
                println!(
                    "trial {:>3}: regret {:.4} violations {}",
                    t.trial, t.cumulative_regret, t.violations
                );
            }
            println!("total violations: {}", report.violations);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response::ExpDecayBasis;
    use nalgebra::DMatrix;

    fn toy() -> (Vec<ResponseModel<f64>>, PriceGrid<f64>, ConstraintSet<f64>, Vec<UtilityRef<f64>>) {
        let basis: crate::response::BasisRef<f64> = Arc::new(ExpDecayBasis {
            periods: 1,
            rates: vec![1.0],
        });
        let models = vec![ResponseModel::new(basis, vec![1.0], 1.0).unwrap()];
        let grid = PriceGrid::single_group(1, 1, vec![0.0, 1.0]).unwrap();
        let cs = ConstraintSet::new(DMatrix::from_row_slice(1, 1, &[1.0]), vec![0.5], vec![]).unwrap();
        let utils: Vec<UtilityRef<f64>> = vec![Arc::new(LogUtility { weight: 1.0 })];
        (models, grid, cs, utils)
    }

    fn step(joint: Vec<usize>) -> TraceStep<f64> {
        TraceStep {
            t: 0,
            certificate: SafetyCertificate {
                candidate: joint.clone(),
                load: DMatrix::zeros(1, 1),
                safe: true,
                margin: 0.0,
            },
            joint,
            observations: vec![],
            source: CertificateSource::Confidence,
            explore: false,
            optimistic_value: None,
            regret: 0.0,
            violated: false,
        }
    }

    fn trace_of(joints: &[usize]) -> ExperimentTrace<f64> {
        ExperimentTrace {
            steps: joints
                .iter()
                .enumerate()
                .map(|(t, &o)| TraceStep { t, ..step(vec![o]) })
                .collect(),
            exploration: 0,
            max_inverse_residual: None,
            wall_clock: Duration::ZERO,
        }
    }

    #[test]
    fn oracle_and_hand_regret() {
        let (models, grid, cs, utils) = toy();
        let truth = TruthTable::spr(&models, &grid, &cs, &utils).unwrap();
        // price 0 draws 1.0 > 0.5, so only price 1 (draw e^-1) is feasible
        let (joint, value) = oracle_optimal(&truth).unwrap();
        assert_eq!(joint, vec![1]);
        assert!((value - ((-1.0f64).exp() + 1.0).ln()).abs() < 1e-15);
        let trace = trace_of(&[1, 1]);
        let (series, total) = regret_series(&trace, value, &truth);
        assert_eq!(series, vec![0.0, 0.0]);
        assert_eq!(total, 0.0);
        assert_eq!(violation_count(&trace, &truth), 0);
        let bad = trace_of(&[0, 0, 0]);
        assert_eq!(violation_count(&bad, &truth), 3);
        let (series, _) = regret_series(&bad, value, &truth);
        let hand = ((-1.0f64).exp() + 1.0).ln() - 2.0f64.ln();
        assert!(series.iter().all(|r| (r - hand).abs() < 1e-15));
    }

    #[test]
    fn oracle_without_feasible_candidate() {
        let (models, grid, _, utils) = toy();
        let cs = ConstraintSet::new(DMatrix::from_row_slice(1, 1, &[1.0]), vec![0.1], vec![]).unwrap();
        let truth = TruthTable::spr(&models, &grid, &cs, &utils).unwrap();
        assert!(matches!(oracle_optimal(&truth), Err(Error::NoFeasibleCandidate)));
    }

    #[test]
    fn rolling_sums() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(rolling_sum(&s, 2), vec![1.0, 3.0, 5.0, 7.0, 9.0]);
        assert_eq!(rolling_sum(&s, 20), vec![1.0, 3.0, 6.0, 10.0, 15.0]);
    }

    #[test]
    fn seeds_are_distinct() {
        let a = mix_seed(1, 0, 0);
        assert_ne!(a, mix_seed(1, 1, 0));
        assert_ne!(a, mix_seed(1, 0, 1));
        assert_ne!(a, mix_seed(2, 0, 0));
        assert_eq!(a, mix_seed(1, 0, 0));
    }

    #[test]
    fn cheapest_point_weights_group_sizes() {
        let grid = PriceGrid::new(3, 1, vec![1.0, 2.0], vec![vec![0, 1], vec![2]]).unwrap();
        let pts = vec![vec![1, 0], vec![0, 1]];
        assert_eq!(cheapest_safe_point(&grid, &pts), Some(vec![0, 1]));
        assert_eq!(cheapest_safe_point(&grid, &[]), None);
    }
}
