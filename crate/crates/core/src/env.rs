//! Finite linear mixture SSP models.
//!
//! A model exposes a known feature map `phi(s'|s,a)` and a hidden parameter
//! `theta_star`; transition probabilities are `<phi(s'|s,a), theta_star>`.
//! Two feature representations are supported: the two-state synthetic
//! family (features computed on the fly from the action index, so the
//! `2^(d-1)` action set is never materialised) and an explicit dense tensor.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Numerical slack accepted on probabilities computed from features.
pub const PROB_TOLERANCE: f64 = 1e-9;

pub type StateId = usize;
pub type ActionId = usize;

/// Two-state instance with actions `{-1,+1}^(d-1)`.
///
/// State 0 is the initial state and state 1 is the goal. Action index `i`
/// maps to the sign vector whose `b`-th coordinate is `+1` when bit `b` of
/// `i` is set and `-1` otherwise, so index 0 is `(-1,...,-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticInstance {
    pub d: usize,
    pub delta: f64,
    pub big_delta: f64,
}

impl SyntheticInstance {
    pub const INIT: StateId = 0;
    pub const GOAL: StateId = 1;

    pub fn new(d: usize, delta: f64, big_delta: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidInput(format!(
                "synthetic instance needs d >= 2, got {d}"
            )));
        }
        if d > 31 {
            return Err(Error::InvalidInput(format!(
                "d = {d} gives too many actions"
            )));
        }
        if !(big_delta >= 0.0 && delta > big_delta && delta + big_delta < 1.0) {
            return Err(Error::InvalidInput(format!(
                "need 0 <= Delta < delta and delta + Delta < 1, got delta={delta}, Delta={big_delta}"
            )));
        }
        Ok(Self {
            d,
            delta,
            big_delta,
        })
    }

    /// Parameters satisfying `delta + Delta = 1 / b_star` with the given split.
    pub fn from_b_star(d: usize, b_star: f64, big_delta: f64) -> Result<Self> {
        Self::new(d, 1.0 / b_star - big_delta, big_delta)
    }

    pub fn num_actions(&self) -> usize {
        1usize << (self.d - 1)
    }

    /// Sign of coordinate `coord` of action `a`.
    #[inline]
    pub fn action_sign(&self, a: ActionId, coord: usize) -> f64 {
        if (a >> coord) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn action_vector(&self, a: ActionId) -> Vec<f64> {
        (0..self.d - 1).map(|c| self.action_sign(a, c)).collect()
    }

    pub fn theta_star(&self) -> DVector<f64> {
        let mut theta = DVector::from_element(self.d, self.big_delta / (self.d - 1) as f64);
        theta[self.d - 1] = 1.0;
        theta
    }

    /// Goal-reaching probability from the initial state, `delta + <a, theta*_{1:d-1}>`.
    pub fn exit_probability(&self, a: ActionId) -> f64 {
        let w = self.big_delta / (self.d - 1) as f64;
        self.delta
            + (0..self.d - 1)
                .map(|c| self.action_sign(a, c) * w)
                .sum::<f64>()
    }

    fn write_feature(&self, s_next: StateId, s: StateId, a: ActionId, out: &mut [f64]) {
        let last = self.d - 1;
        match (s, s_next) {
            (Self::INIT, Self::INIT) => {
                for (c, o) in out[..last].iter_mut().enumerate() {
                    *o = -self.action_sign(a, c);
                }
                out[last] = 1.0 - self.delta;
            }
            (Self::INIT, _) => {
                for (c, o) in out[..last].iter_mut().enumerate() {
                    *o = self.action_sign(a, c);
                }
                out[last] = self.delta;
            }
            (_, Self::INIT) => out.fill(0.0),
            _ => {
                out.fill(0.0);
                out[last] = 1.0;
            }
        }
    }
}

/// Dense features `phi(s'|s,a)` stored as `[s][a][s'][k]`, with costs `[s][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitModel {
    pub num_states: usize,
    pub num_actions: usize,
    pub d: usize,
    features: Vec<f64>,
    costs: Vec<f64>,
}

impl ExplicitModel {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        d: usize,
        features: Vec<f64>,
        costs: Vec<f64>,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 || d == 0 {
            return Err(Error::InvalidInput(
                "empty state, action or feature space".into(),
            ));
        }
        if features.len() != num_states * num_actions * num_states * d {
            return Err(Error::InvalidInput(format!(
                "feature tensor has {} entries, expected {}",
                features.len(),
                num_states * num_actions * num_states * d
            )));
        }
        if costs.len() != num_states * num_actions {
            return Err(Error::InvalidInput(format!(
                "cost table has {} entries, expected {}",
                costs.len(),
                num_states * num_actions
            )));
        }
        if features.iter().chain(&costs).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature or cost".into()));
        }
        Ok(Self {
            num_states,
            num_actions,
            d,
            features,
            costs,
        })
    }

    fn offset(&self, s_next: StateId, s: StateId, a: ActionId) -> usize {
        ((s * self.num_actions + a) * self.num_states + s_next) * self.d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureModel {
    Synthetic(SyntheticInstance),
    Explicit(ExplicitModel),
}

/// Finite SSP whose kernel is linear in a known feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMixtureSsp {
    model: FeatureModel,
    theta_star: DVector<f64>,
    init: StateId,
    goal: StateId,
}

impl LinearMixtureSsp {
    pub fn synthetic(instance: SyntheticInstance) -> Self {
        Self {
            theta_star: instance.theta_star(),
            model: FeatureModel::Synthetic(instance),
            init: SyntheticInstance::INIT,
            goal: SyntheticInstance::GOAL,
        }
    }

    /// Builds an explicit model and validates it (distributions, absorbing goal, cost range).
    pub fn explicit(
        model: ExplicitModel,
        theta_star: DVector<f64>,
        init: StateId,
        goal: StateId,
    ) -> Result<Self> {
        if theta_star.len() != model.d {
            return Err(Error::InvalidInput(format!(
                "theta_star has length {}, expected {}",
                theta_star.len(),
                model.d
            )));
        }
        if init >= model.num_states || goal >= model.num_states {
            return Err(Error::InvalidInput(
                "init or goal index out of range".into(),
            ));
        }
        let env = Self {
            model: FeatureModel::Explicit(model),
            theta_star,
            init,
            goal,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn model(&self) -> &FeatureModel {
        &self.model
    }

    pub fn num_states(&self) -> usize {
        match &self.model {
            FeatureModel::Synthetic(_) => 2,
            FeatureModel::Explicit(m) => m.num_states,
        }
    }

    pub fn num_actions(&self) -> usize {
        match &self.model {
            FeatureModel::Synthetic(inst) => inst.num_actions(),
            FeatureModel::Explicit(m) => m.num_actions,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn init(&self) -> StateId {
        self.init
    }

    pub fn goal(&self) -> StateId {
        self.goal
    }

    /// Hidden parameter. Only the simulator and the oracles may read it.
    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    pub fn cost(&self, s: StateId, a: ActionId) -> f64 {
        if s == self.goal {
            return 0.0;
        }
        match &self.model {
            FeatureModel::Synthetic(_) => 1.0,
            FeatureModel::Explicit(m) => m.costs[s * m.num_actions + a],
        }
    }

    /// Smallest cost over non-goal state-action pairs; 0 when some cost vanishes.
    pub fn c_min(&self) -> f64 {
        let mut lo = f64::INFINITY;
        for s in (0..self.num_states()).filter(|&s| s != self.goal) {
            for a in 0..self.num_actions() {
                lo = lo.min(self.cost(s, a));
            }
        }
        if lo.is_finite() {
            lo.max(0.0)
        } else {
            0.0
        }
    }

    /// Writes `phi(s'|s,a)` into `out` (length `d`).
    pub fn write_feature(&self, s_next: StateId, s: StateId, a: ActionId, out: &mut [f64]) {
        match &self.model {
            FeatureModel::Synthetic(inst) => inst.write_feature(s_next, s, a, out),
            FeatureModel::Explicit(m) => {
                let o = m.offset(s_next, s, a);
                out.copy_from_slice(&m.features[o..o + m.d]);
            }
        }
    }

    pub fn feature(&self, s_next: StateId, s: StateId, a: ActionId) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.write_feature(s_next, s, a, out.as_mut_slice());
        out
    }

    /// `phi_V(s,a) = sum_{s'} phi(s'|s,a) V(s')`.
    pub fn feature_expectation(&self, values: &[f64], s: StateId, a: ActionId) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.feature_expectation_into(values, s, a, out.as_mut_slice());
        out
    }

    pub fn feature_expectation_into(
        &self,
        values: &[f64],
        s: StateId,
        a: ActionId,
        out: &mut [f64],
    ) {
        debug_assert_eq!(values.len(), self.num_states());
        match &self.model {
            FeatureModel::Synthetic(inst) => {
                let last = inst.d - 1;
                let (v_init, v_goal) = (
                    values[SyntheticInstance::INIT],
                    values[SyntheticInstance::GOAL],
                );
                if s == SyntheticInstance::INIT {
                    for (c, o) in out[..last].iter_mut().enumerate() {
                        *o = inst.action_sign(a, c) * (v_goal - v_init);
                    }
                    out[last] = (1.0 - inst.delta) * v_init + inst.delta * v_goal;
                } else {
                    out.fill(0.0);
                    out[last] = v_goal;
                }
            }
            FeatureModel::Explicit(m) => {
                out.fill(0.0);
                for (s_next, &v) in values.iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    let o = m.offset(s_next, s, a);
                    for (x, f) in out.iter_mut().zip(&m.features[o..o + m.d]) {
                        *x += f * v;
                    }
                }
            }
        }
    }

    /// Next-state distribution under `theta_star`, validated against [`PROB_TOLERANCE`].
    pub fn transition_probs(&self, s: StateId, a: ActionId) -> Result<Vec<f64>> {
        self.probs_under(&self.theta_star, s, a)
    }

    /// Next-state distribution induced by an arbitrary parameter.
    pub fn probs_under(&self, theta: &DVector<f64>, s: StateId, a: ActionId) -> Result<Vec<f64>> {
        let n = self.num_states();
        let mut buf = vec![0.0; self.dim()];
        let mut probs = Vec::with_capacity(n);
        for s_next in 0..n {
            self.write_feature(s_next, s, a, &mut buf);
            let p: f64 = buf.iter().zip(theta.iter()).map(|(f, t)| f * t).sum();
            if !(-PROB_TOLERANCE..=1.0 + PROB_TOLERANCE).contains(&p) {
                return Err(Error::MalformedEnvironment {
                    state: s,
                    action: a,
                    detail: format!("probability of next state {s_next} is {p}"),
                });
            }
            probs.push(p.clamp(0.0, 1.0));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOLERANCE {
            return Err(Error::MalformedEnvironment {
                state: s,
                action: a,
                detail: format!("probabilities sum to {total}"),
            });
        }
        Ok(probs)
    }

    pub fn sample_transition<R: Rng + ?Sized>(
        &self,
        s: StateId,
        a: ActionId,
        rng: &mut R,
    ) -> Result<StateId> {
        let probs = self.transition_probs(s, a)?;
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (s_next, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(s_next);
            }
        }
        // u landed in the rounding gap above the cumulative sum
        Ok(probs.iter().rposition(|&p| p > 0.0).unwrap_or(self.goal))
    }

    /// True expectation `[P V](s,a)`.
    pub fn expected_value(&self, values: &[f64], s: StateId, a: ActionId) -> f64 {
        self.feature_expectation(values, s, a).dot(&self.theta_star)
    }

    /// Checks every distribution, goal absorption and the cost range.
    pub fn validate(&self) -> Result<()> {
        for s in 0..self.num_states() {
            for a in 0..self.num_actions() {
                let probs = self.transition_probs(s, a)?;
                let c = self.cost(s, a);
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::MalformedEnvironment {
                        state: s,
                        action: a,
                        detail: format!("cost {c} outside [0,1]"),
                    });
                }
                if s == self.goal {
                    if (probs[self.goal] - 1.0).abs() > PROB_TOLERANCE {
                        return Err(Error::MalformedEnvironment {
                            state: s,
                            action: a,
                            detail: "goal is not absorbing".into(),
                        });
                    }
                    if let FeatureModel::Explicit(m) = &self.model {
                        if m.costs[s * m.num_actions + a] != 0.0 {
                            return Err(Error::MalformedEnvironment {
                                state: s,
                                action: a,
                                detail: "goal cost must be zero".into(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// `max_s |V(s) - (L V)(s)|` for the true Bellman operator.
    pub fn bellman_residual(&self, values: &[f64]) -> Result<f64> {
        let backed = self.bellman_backup(values)?;
        Ok(values
            .iter()
            .zip(&backed)
            .map(|(v, b)| (v - b).abs())
            .fold(0.0, f64::max))
    }

    fn bellman_backup(&self, values: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.num_states()];
        for s in (0..self.num_states()).filter(|&s| s != self.goal) {
            let mut best = f64::INFINITY;
            for a in 0..self.num_actions() {
                let probs = self.transition_probs(s, a)?;
                let q = self.cost(s, a) + probs.iter().zip(values).map(|(p, v)| p * v).sum::<f64>();
                best = best.min(q);
            }
            out[s] = best;
        }
        Ok(out)
    }
}

/// Output of [`exact_optimal_value`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalSolution {
    pub values: Vec<f64>,
    pub policy: Vec<ActionId>,
    pub hitting_times: Vec<f64>,
    pub b_star: f64,
    pub t_star: f64,
    pub iterations: usize,
}

pub const ORACLE_TOLERANCE: f64 = 1e-10;
pub const ORACLE_MAX_ITERATIONS: usize = 1_000_000;

/// Solves for `V*` by value iteration on the true kernel, then evaluates the
/// greedy policy exactly by a linear solve (values and hitting times).
pub fn exact_optimal_value(env: &LinearMixtureSsp) -> Result<OptimalSolution> {
    exact_optimal_value_with(env, ORACLE_TOLERANCE, ORACLE_MAX_ITERATIONS)
}

/// Oracle for the costs `c + shift` at every non-goal state.
pub fn exact_optimal_value_shifted(env: &LinearMixtureSsp, shift: f64) -> Result<OptimalSolution> {
    solve_optimal(env, shift, ORACLE_TOLERANCE, ORACLE_MAX_ITERATIONS)
}

pub fn exact_optimal_value_with(
    env: &LinearMixtureSsp,
    tolerance: f64,
    max_iterations: usize,
) -> Result<OptimalSolution> {
    solve_optimal(env, 0.0, tolerance, max_iterations)
}

fn solve_optimal(
    env: &LinearMixtureSsp,
    shift: f64,
    tolerance: f64,
    max_iterations: usize,
) -> Result<OptimalSolution> {
    let n = env.num_states();
    let na = env.num_actions();
    let goal = env.goal();
    let mut kernel = Vec::with_capacity(n * na);
    for s in 0..n {
        for a in 0..na {
            kernel.push(env.transition_probs(s, a)?);
        }
    }
    let cost = |s: StateId, a: ActionId| {
        if s == goal {
            0.0
        } else {
            env.cost(s, a) + shift
        }
    };
    let q_value = |values: &[f64], s: StateId, a: ActionId| {
        cost(s, a)
            + kernel[s * na + a]
                .iter()
                .zip(values)
                .map(|(p, v)| p * v)
                .sum::<f64>()
    };

    let mut values = vec![0.0; n];
    let mut iterations = 0;
    loop {
        if iterations >= max_iterations {
            let residual = if shift == 0.0 {
                env.bellman_residual(&values)?
            } else {
                f64::NAN
            };
            return Err(Error::NonConvergence {
                what: "value iteration",
                iterations,
                residual,
            });
        }
        let mut next = vec![0.0; n];
        for s in (0..n).filter(|&s| s != goal) {
            next[s] = (0..na)
                .map(|a| q_value(&values, s, a))
                .fold(f64::INFINITY, f64::min);
        }
        let change = values
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        values = next;
        iterations += 1;
        if !change.is_finite() {
            return Err(Error::ImproperInstance("value iteration diverged".into()));
        }
        if change < tolerance {
            break;
        }
    }

    let policy: Vec<ActionId> = (0..n)
        .map(|s| {
            let mut best = (0, f64::INFINITY);
            for a in 0..na {
                let q = q_value(&values, s, a);
                if q < best.1 {
                    best = (a, q);
                }
            }
            best.0
        })
        .collect();

    // (I - P_pi) x = rhs restricted to non-goal states
    let others: Vec<StateId> = (0..n).filter(|&s| s != goal).collect();
    let m = others.len();
    let mut system = DMatrix::<f64>::identity(m, m);
    for (i, &s) in others.iter().enumerate() {
        for (j, &s_next) in others.iter().enumerate() {
            system[(i, j)] -= kernel[s * na + policy[s]][s_next];
        }
    }
    let lu = system.lu();
    let costs = DVector::from_iterator(m, others.iter().map(|&s| cost(s, policy[s])));
    let ones = DVector::from_element(m, 1.0);
    let (policy_values, times) = match (lu.solve(&costs), lu.solve(&ones)) {
        (Some(v), Some(t))
            if m == 0 || (v.iter().all(|x| x.is_finite()) && t.iter().all(|x| x.is_finite())) =>
        {
            (v, t)
        }
        _ => {
            return Err(Error::ImproperInstance(
                "greedy policy does not reach the goal".into(),
            ))
        }
    };
    if times.iter().any(|&t| t < 0.0) {
        return Err(Error::ImproperInstance(
            "negative hitting time for greedy policy".into(),
        ));
    }
    let mut hitting_times = vec![0.0; n];
    for (i, &s) in others.iter().enumerate() {
        values[s] = policy_values[i];
        hitting_times[s] = times[i];
    }
    let b_star = values.iter().cloned().fold(0.0, f64::max);
    let t_star = hitting_times.iter().cloned().fold(0.0, f64::max);
    Ok(OptimalSolution {
        values,
        policy,
        hitting_times,
        b_star,
        t_star,
        iterations,
    })
}
