//! The online learner: per-level weighted regression, interval management,
//! confidence-set construction and planning with DEVI.
//!
//! Regression levels are stored in units normalised by the value bound `B`:
//! level `l` regresses `(V/B)^(2^l)` with weights `sigma_bar^2 / B^(2^(l+1))`.
//! Gram matrices and estimates are invariant under this rescaling, and it
//! keeps every quantity in `[0, 1]` even when the number of levels is large.

use std::fmt;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::devi::{devi, ConstraintSet, DeviParams, DeviStatus, QTable, SolverMode};
use crate::env::{ActionId, LinearMixtureSsp, StateId};
use crate::error::{Error, Result};
use crate::home::{home_weights, HomeParams};
use crate::wls::{
    confidence_radius, det_doubled, ConfidenceEllipsoid, GramInverse, IntervalSnapshot,
    RegressionLevel, DEFAULT_BETA_CONSTANT,
};

/// Schedule for the variance floor `alpha_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSchedule {
    /// `1 / sqrt(t)`
    #[default]
    InvSqrt,
    /// `1 / t^2`
    InvSquare,
}

impl AlphaSchedule {
    pub fn at(self, t: u64) -> f64 {
        let t = t.max(1) as f64;
        match self {
            AlphaSchedule::InvSqrt => 1.0 / t.sqrt(),
            AlphaSchedule::InvSquare => 1.0 / (t * t),
        }
    }
}

/// Which weighting rule the learner uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Variance-aware weights from high-order moment estimation.
    #[default]
    LevisPp,
    /// Every weight is one and only the first moment is regressed.
    Unweighted,
    /// Two levels, variance-aware weights without the uncertainty floor.
    VarianceOnly,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::LevisPp => "levis_pp",
            Variant::Unweighted => "unweighted",
            Variant::VarianceOnly => "variance_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "levis_pp" => Ok(Variant::LevisPp),
            "unweighted" => Ok(Variant::Unweighted),
            "variance_only" => Ok(Variant::VarianceOnly),
            other => Err(Error::Config(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// User-facing learner configuration. Unset options take their defaults
/// when resolved against an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    /// Known upper bound on the optimal value.
    pub b: f64,
    /// Lower bound on non-goal costs; absent means run on perturbed costs.
    #[serde(default)]
    pub c_min: Option<f64>,
    /// Expected hitting time of the optimal policy (perturbation mode only).
    #[serde(default)]
    pub t_star: Option<f64>,
    /// Ridge parameter, default `1/B^2`.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Uncertainty-floor coefficient, default `d^(-1/4)`.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub alpha_schedule: AlphaSchedule,
    /// Number of moment levels, default `max(1, ceil(log2(5B/c_min)))`.
    #[serde(default)]
    pub levels: Option<usize>,
    #[serde(default = "default_fail_prob")]
    pub fail_prob: f64,
    #[serde(default = "default_beta_constant")]
    pub beta_constant: f64,
    /// Multiplier applied to the confidence radius.
    #[serde(default = "default_beta_scale")]
    pub beta_scale: f64,
    #[serde(default)]
    pub devi_mode: SolverMode,
}

fn default_fail_prob() -> f64 {
    0.01
}
fn default_beta_constant() -> f64 {
    DEFAULT_BETA_CONSTANT
}
fn default_beta_scale() -> f64 {
    1.0
}

impl AgentConfig {
    pub fn new(b: f64, c_min: Option<f64>) -> Self {
        Self {
            b,
            c_min,
            t_star: None,
            lambda: None,
            gamma: None,
            alpha_schedule: AlphaSchedule::default(),
            levels: None,
            fail_prob: default_fail_prob(),
            beta_constant: default_beta_constant(),
            beta_scale: default_beta_scale(),
            devi_mode: SolverMode::default(),
        }
    }
}

/// Cost shift `rho` used when no positive cost floor is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub rho: f64,
    pub t_star: f64,
}

impl PerturbationConfig {
    pub fn new(rho: f64, t_star: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "perturbation needs rho > 0, got {rho}"
            )));
        }
        if !(t_star >= 0.0 && t_star.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "perturbation needs a finite T* >= 0, got {t_star}"
            )));
        }
        Ok(Self { rho, t_star })
    }

    /// `rho = 1 / (T* K)`.
    pub fn for_horizon(t_star: f64, episodes: u64) -> Result<Self> {
        Self::new(1.0 / (t_star * episodes as f64), t_star)
    }

    /// `B + T* rho`.
    pub fn b_rho(&self, b: f64) -> f64 {
        b + self.t_star * self.rho
    }
}

/// Fully resolved learner parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentParams {
    pub variant: Variant,
    pub b: f64,
    pub c_min: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub alpha_schedule: AlphaSchedule,
    pub levels: usize,
    pub fail_prob: f64,
    pub beta_constant: f64,
    pub beta_scale: f64,
    pub devi_mode: SolverMode,
    /// Added to every non-goal cost the learner sees.
    pub cost_shift: f64,
}

/// `max(1, ceil(log2(5B/c_min)))`.
pub fn default_levels(b: f64, c_min: f64) -> usize {
    let raw = (5.0 * b / c_min).log2().ceil();
    if raw.is_finite() && raw >= 1.0 {
        raw as usize
    } else {
        1
    }
}

impl AgentParams {
    /// Resolves defaults for a problem with a known positive cost floor.
    pub fn resolve(env: &LinearMixtureSsp, cfg: &AgentConfig, variant: Variant) -> Result<Self> {
        let c_min = cfg.c_min.ok_or_else(|| {
            Error::Config("c_min is required unless a perturbation is configured".into())
        })?;
        Self::build(env, cfg, variant, cfg.b, c_min, 0.0)
    }

    /// Parameters of the learner run on costs `c + rho` with bound `B + T* rho`.
    /// The level count follows `log2(5B/rho)`.
    pub fn perturbed(
        env: &LinearMixtureSsp,
        cfg: &AgentConfig,
        variant: Variant,
        pert: PerturbationConfig,
    ) -> Result<Self> {
        let mut params = Self::build(env, cfg, variant, pert.b_rho(cfg.b), pert.rho, pert.rho)?;
        if cfg.levels.is_none() && variant == Variant::LevisPp {
            params.levels = default_levels(cfg.b, pert.rho);
        }
        Ok(params)
    }

    fn build(
        env: &LinearMixtureSsp,
        cfg: &AgentConfig,
        variant: Variant,
        b: f64,
        c_min: f64,
        shift: f64,
    ) -> Result<Self> {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::Config(format!("B must be positive, got {b}")));
        }
        if !(c_min > 0.0) {
            return Err(Error::Config(format!(
                "c_min must be positive, got {c_min}"
            )));
        }
        if !(cfg.fail_prob > 0.0 && cfg.fail_prob < 1.0) {
            return Err(Error::Config(format!(
                "fail_prob must lie in (0,1), got {}",
                cfg.fail_prob
            )));
        }
        if !(cfg.beta_scale > 0.0) || !(cfg.beta_constant > 0.0) {
            return Err(Error::Config(
                "beta_scale and beta_constant must be positive".into(),
            ));
        }
        let d = env.dim();
        let lambda = cfg.lambda.unwrap_or(1.0 / (b * b));
        if !(lambda > 0.0) {
            return Err(Error::Config(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        let gamma = cfg.gamma.unwrap_or((d as f64).powf(-0.25));
        let levels = match variant {
            Variant::Unweighted => 1,
            Variant::VarianceOnly => 2,
            Variant::LevisPp => cfg.levels.unwrap_or_else(|| default_levels(b, c_min)),
        };
        if levels == 0 {
            return Err(Error::Config("levels must be at least 1".into()));
        }
        Ok(Self {
            variant,
            b,
            c_min,
            lambda,
            gamma,
            alpha_schedule: cfg.alpha_schedule,
            levels,
            fail_prob: cfg.fail_prob,
            beta_constant: cfg.beta_constant,
            beta_scale: cfg.beta_scale,
            devi_mode: cfg.devi_mode,
            cost_shift: shift,
        })
    }

    /// Confidence radius at step `t`. With unit weights the regression noise
    /// ranges over `[0, B]` instead of `[0, 1]`, so the unweighted learner's
    /// radius carries an extra factor `B`. `beta_scale` shrinks only the
    /// stochastic part; the trailing `+1` bounds the ridge bias and is kept.
    pub fn radius(&self, t: u64, d: usize) -> Result<f64> {
        let noise_range = if self.variant == Variant::Unweighted {
            self.b
        } else {
            1.0
        };
        let full = confidence_radius(t, d, self.lambda, self.fail_prob, self.beta_constant)?;
        Ok(noise_range * self.beta_scale * (full - 1.0) + 1.0)
    }
}

/// Bookkeeping of one planning interval.
#[derive(Debug, Clone)]
pub struct IntervalState {
    pub j: u64,
    pub t_j: u64,
    pub epsilon: f64,
    pub q: f64,
    pub snapshot: IntervalSnapshot,
    pub ellipsoid: Option<ConfidenceEllipsoid>,
    pub q_table: QTable,
    pub values: Vec<f64>,
}

/// What happened at one planner call.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateRecord {
    pub t_j: u64,
    pub beta: f64,
    pub epsilon: f64,
    /// `theta*` inside the level-`l` snapshot ellipsoid, per level.
    pub coverage: Vec<bool>,
    pub values: Vec<f64>,
    pub feasible: bool,
    pub devi_iterations: usize,
    pub worst_contraction_ratio: f64,
    pub sup_changes_max_excess: f64,
    /// The trigger that fired: some level's determinant doubled.
    pub det_trigger: bool,
    /// The trigger that fired: the step count doubled.
    pub time_trigger: bool,
}

impl UpdateRecord {
    pub fn covered(&self) -> bool {
        self.coverage.iter().all(|&c| c)
    }
}

/// Running checks of the variance estimate against the true variance.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VarianceDiagnostics {
    pub checks: u64,
    pub within_bonus: u64,
}

/// Online learner for a linear mixture SSP.
#[derive(Debug, Clone)]
pub struct Agent<'e> {
    env: &'e LinearMixtureSsp,
    constraints: ConstraintSet,
    params: AgentParams,
    levels: Vec<RegressionLevel>,
    interval: IntervalState,
    t: u64,
    devi_calls: u64,
    updates: Vec<UpdateRecord>,
    variance: VarianceDiagnostics,
    record_updates: bool,
}

/// One observed transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: StateId,
    pub action: ActionId,
    pub next_state: StateId,
}

impl<'e> Agent<'e> {
    pub fn new(env: &'e LinearMixtureSsp, params: AgentParams) -> Result<Self> {
        let d = env.dim();
        let levels = (0..params.levels)
            .map(|l| RegressionLevel::new(l, d, params.lambda))
            .collect::<Result<Vec<_>>>()?;
        let (ns, na, goal) = (env.num_states(), env.num_actions(), env.goal());
        let q_table = QTable::constant(ns, na, goal, 1.0);
        let values = q_table.state_values();
        let interval = IntervalState {
            j: 0,
            t_j: 0,
            epsilon: f64::INFINITY,
            q: 1.0,
            snapshot: IntervalSnapshot::take(0, &levels),
            ellipsoid: None,
            q_table,
            values,
        };
        Ok(Self {
            env,
            constraints: ConstraintSet::from_env(env),
            params,
            levels,
            interval,
            t: 1,
            devi_calls: 0,
            updates: Vec::new(),
            variance: VarianceDiagnostics::default(),
            record_updates: true,
        })
    }

    pub fn params(&self) -> &AgentParams {
        &self.params
    }
    pub fn levels(&self) -> &[RegressionLevel] {
        &self.levels
    }
    pub fn interval(&self) -> &IntervalState {
        &self.interval
    }
    /// Index of the next step.
    pub fn step_index(&self) -> u64 {
        self.t
    }
    pub fn devi_calls(&self) -> u64 {
        self.devi_calls
    }
    pub fn updates(&self) -> &[UpdateRecord] {
        &self.updates
    }
    pub fn variance_diagnostics(&self) -> &VarianceDiagnostics {
        &self.variance
    }
    pub fn q_table(&self) -> &QTable {
        &self.interval.q_table
    }
    pub fn values(&self) -> &[f64] {
        &self.interval.values
    }

    /// Cost the learner is charged for `(s, a)`, including any perturbation.
    pub fn perceived_cost(&self, s: StateId, a: ActionId) -> f64 {
        if s == self.env.goal() {
            0.0
        } else {
            self.env.cost(s, a) + self.params.cost_shift
        }
    }

    /// Greedy action with lowest-index tie-breaking.
    pub fn act(&self, s: StateId) -> ActionId {
        self.interval.q_table.greedy(s).0
    }

    /// `(V_j / B)^(2^l)` for every level, as per-state tables.
    fn level_values(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.params.levels);
        let mut cur: Vec<f64> = self
            .interval
            .values
            .iter()
            .map(|v| (v / self.params.b).max(0.0))
            .collect();
        for _ in 0..self.params.levels {
            let next = cur.iter().map(|x| x * x).collect();
            out.push(std::mem::replace(&mut cur, next));
        }
        out
    }

    /// Absorbs one transition and replans if an update criterion fires.
    /// Returns `true` when DEVI was called.
    pub fn observe(&mut self, tr: Transition) -> Result<bool> {
        let t = self.t;
        let d = self.env.dim();
        let level_values = self.level_values();
        let features: Vec<DVector<f64>> = level_values
            .iter()
            .map(|vals| self.env.feature_expectation(vals, tr.state, tr.action))
            .collect();

        let inv_sq: Vec<f64> = match self.params.variant {
            Variant::Unweighted => (0..self.params.levels)
                .map(|l| crate::home::moment_scale(self.params.b, l + 1))
                .collect(),
            Variant::LevisPp | Variant::VarianceOnly => {
                let home = HomeParams {
                    beta_hat: self.params.radius(t, d)?,
                    alpha: self.params.alpha_schedule.at(t),
                    gamma: self.params.gamma,
                    b: 1.0,
                    uncertainty_guard: self.params.variant == Variant::LevisPp,
                };
                let bundle = home_weights(&features, &self.levels, &self.interval.snapshot, &home)?;
                let theta_star = self.env.theta_star();
                for l in 0..bundle.var_est.len() {
                    let truth =
                        features[l + 1].dot(theta_star) - features[l].dot(theta_star).powi(2);
                    self.variance.checks += 1;
                    if (bundle.var_est[l] - truth).abs() <= bundle.error_bonus[l] {
                        self.variance.within_bonus += 1;
                    }
                }
                bundle.sigma_bar_sq.iter().map(|s| 1.0 / s).collect()
            }
        };
        for (l, level) in self.levels.iter_mut().enumerate() {
            level.rank1_update_inv_sq(&features[l], inv_sq[l], level_values[l][tr.next_state])?;
        }
        let planned = self.maybe_update()?;
        self.t += 1;
        Ok(planned)
    }

    /// Checks the update criteria at the current step and replans when one holds.
    pub fn maybe_update(&mut self) -> Result<bool> {
        let (det_trigger, time_trigger) = self.triggers(self.t);
        if !(det_trigger || time_trigger) {
            return Ok(false);
        }
        self.replan(det_trigger, time_trigger)?;
        Ok(true)
    }

    /// `(determinant criterion, time criterion)` evaluated at step `t` with the
    /// current regression state. The first interval ends at `t = 1`.
    pub fn triggers(&self, t: u64) -> (bool, bool) {
        let det = self
            .levels
            .iter()
            .zip(&self.interval.snapshot.levels)
            .any(|(live, snap)| det_doubled(live, snap));
        (det, t >= (2 * self.interval.t_j).max(1))
    }

    fn replan(&mut self, det_trigger: bool, time_trigger: bool) -> Result<()> {
        let t = self.t;
        let d = self.env.dim();
        let beta = self.params.radius(t, d)?;
        let snapshot = IntervalSnapshot::take(t, &self.levels);
        let ellipsoid = ConfidenceEllipsoid::from_snapshot(snapshot.level(0), beta)?;
        let step = 1.0 / t as f64;
        let devi_params = DeviParams {
            epsilon: step,
            q: step,
            mode: self.params.devi_mode,
            b: self.params.b,
            cost_shift: self.params.cost_shift,
        };
        let result = devi(self.env, &ellipsoid, &self.constraints, &devi_params)?;
        self.devi_calls += 1;

        if self.record_updates {
            let theta_star = self.env.theta_star();
            let coverage = snapshot
                .levels
                .iter()
                .map(|lv| {
                    let diff = theta_star - &lv.theta;
                    diff.dot(&(&lv.sigma * &diff)).max(0.0).sqrt() <= beta
                })
                .collect();
            let q = devi_params.q;
            let excess = result
                .sup_changes
                .windows(2)
                .map(|w| w[1] - (1.0 - q) * w[0])
                .fold(f64::NEG_INFINITY, f64::max);
            self.updates.push(UpdateRecord {
                t_j: t,
                beta,
                epsilon: step,
                coverage,
                values: result.v.clone(),
                feasible: result.status == DeviStatus::Converged,
                devi_iterations: result.iterations,
                worst_contraction_ratio: result.worst_contraction_ratio(),
                sup_changes_max_excess: excess,
                det_trigger,
                time_trigger,
            });
        }

        self.interval = IntervalState {
            j: self.interval.j + 1,
            t_j: t,
            epsilon: step,
            q: step,
            snapshot,
            ellipsoid: Some(ellipsoid),
            q_table: result.q,
            values: result.v,
        };
        Ok(())
    }

    /// Episode boundary: advances the interval index without replanning.
    pub fn end_episode(&mut self) {
        self.interval.j += 1;
    }

    /// Stop storing per-update records (counts are still kept).
    pub fn set_record_updates(&mut self, on: bool) {
        self.record_updates = on;
    }

    /// `||theta - theta_hat_l||_{Sigma_l}` of the live level `l`.
    pub fn live_distance(&self, l: usize, theta: &DVector<f64>) -> f64 {
        let lv = &self.levels[l];
        let diff = theta - lv.theta();
        diff.dot(&(lv.sigma() * &diff)).max(0.0).sqrt()
    }

    /// Ellipsoid norm of `phi` under the live level `l`.
    pub fn live_norm(&self, l: usize, phi: &DVector<f64>) -> f64 {
        self.levels[l].ellipsoid_norm(phi)
    }
}

/// Upper bound `4 d L log(1 + T/lambda) + 2 log T` on the number of planner calls.
pub fn devi_call_budget(d: usize, levels: usize, total_steps: u64, lambda: f64) -> f64 {
    let t = total_steps.max(1) as f64;
    4.0 * d as f64 * levels as f64 * (t / lambda).ln_1p() + 2.0 * t.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::SyntheticInstance;

    fn env() -> LinearMixtureSsp {
        LinearMixtureSsp::synthetic(SyntheticInstance::new(4, 0.25, 1.0 / 12.0).unwrap())
    }

    fn params(env: &LinearMixtureSsp, variant: Variant) -> AgentParams {
        let mut cfg = AgentConfig::new(3.0, Some(1.0));
        cfg.lambda = Some(1.0);
        AgentParams::resolve(env, &cfg, variant).unwrap()
    }

    #[test]
    fn default_parameters() {
        let env = env();
        let p = AgentParams::resolve(&env, &AgentConfig::new(3.0, Some(1.0)), Variant::LevisPp)
            .unwrap();
        assert_eq!(p.levels, 4);
        assert!((p.lambda - 1.0 / 9.0).abs() < 1e-15);
        assert!((p.gamma - 4f64.powf(-0.25)).abs() < 1e-15);
        assert_eq!(params(&env, Variant::Unweighted).levels, 1);
        assert_eq!(params(&env, Variant::VarianceOnly).levels, 2);
    }

    #[test]
    fn initial_policy_is_lowest_index() {
        let env = env();
        let agent = Agent::new(&env, params(&env, Variant::LevisPp)).unwrap();
        assert_eq!(agent.act(0), 0);
        assert_eq!(agent.act(1), 0);
        assert_eq!(agent.values(), &[1.0, 0.0]);
    }

    #[test]
    fn first_step_triggers_planning() {
        let env = env();
        let mut agent = Agent::new(&env, params(&env, Variant::LevisPp)).unwrap();
        let planned = agent
            .observe(Transition {
                state: 0,
                action: 0,
                next_state: 0,
            })
            .unwrap();
        assert!(planned);
        assert_eq!(agent.devi_calls(), 1);
        assert_eq!(agent.interval().t_j, 1);
        // at t = t_j neither criterion holds yet
        assert_eq!(agent.triggers(agent.interval().t_j), (false, false));
    }

    #[test]
    fn time_doubling_alone_fires() {
        let env = env();
        let mut agent = Agent::new(&env, params(&env, Variant::Unweighted)).unwrap();
        agent
            .observe(Transition {
                state: 0,
                action: 0,
                next_state: 1,
            })
            .unwrap();
        // goal-to-goal transitions carry zero features, so determinants never move
        let calls = agent.devi_calls();
        agent
            .observe(Transition {
                state: 1,
                action: 0,
                next_state: 1,
            })
            .unwrap();
        assert_eq!(agent.devi_calls(), calls + 1, "t = 2 = 2 t_j must replan");
        assert!(agent.updates().last().unwrap().time_trigger);
        assert!(!agent.updates().last().unwrap().det_trigger);
    }

    #[test]
    fn perturbation_arithmetic() {
        let pert = PerturbationConfig::for_horizon(3.0, 2000).unwrap();
        assert!((pert.rho - 1.0 / 6000.0).abs() < 1e-18);
        assert!((pert.b_rho(3.0) - 3.0005).abs() < 1e-12);
        assert!(PerturbationConfig::new(0.0, 3.0).is_err());
        assert!(PerturbationConfig::new(-1.0, 3.0).is_err());
        let env = env();
        let cfg = AgentConfig::new(3.0, None);
        let p = AgentParams::perturbed(&env, &cfg, Variant::LevisPp, pert).unwrap();
        assert_eq!(p.c_min, pert.rho);
        assert_eq!(p.cost_shift, pert.rho);
        assert_eq!(p.levels, default_levels(3.0, pert.rho));
        let agent = Agent::new(&env, p).unwrap();
        assert!((agent.perceived_cost(0, 0) - (1.0 + pert.rho)).abs() < 1e-15);
        assert_eq!(agent.perceived_cost(1, 0), 0.0);
    }

    #[test]
    fn missing_c_min_is_a_config_error() {
        let env = env();
        let err =
            AgentParams::resolve(&env, &AgentConfig::new(3.0, None), Variant::LevisPp).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn alpha_schedules() {
        assert_eq!(AlphaSchedule::InvSqrt.at(4), 0.5);
        assert_eq!(AlphaSchedule::InvSquare.at(2), 0.25);
    }
}
