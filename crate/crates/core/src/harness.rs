//! Episode runner, regret accounting, seeded runs and sweeps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{
    devi_call_budget, Agent, AgentConfig, AgentParams, PerturbationConfig, Transition, Variant,
};
use crate::env::{
    exact_optimal_value, exact_optimal_value_shifted, ExplicitModel, LinearMixtureSsp,
    OptimalSolution, SyntheticInstance,
};
use crate::error::{Error, Result};

pub type Rng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Environment section of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvSpec {
    Synthetic {
        #[serde(default = "default_d")]
        d: usize,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default = "default_big_delta")]
        big_delta: f64,
    },
    Explicit {
        num_states: usize,
        num_actions: usize,
        d: usize,
        goal: usize,
        #[serde(default)]
        init: usize,
        theta_star: Vec<f64>,
        /// `cost[s][a]`
        cost: Vec<Vec<f64>>,
        /// `features[s][a][s'] = phi(s'|s,a)`
        features: Vec<Vec<Vec<Vec<f64>>>>,
    },
}

fn default_d() -> usize {
    4
}
fn default_delta() -> f64 {
    0.25
}
fn default_big_delta() -> f64 {
    1.0 / 12.0
}

impl Default for EnvSpec {
    fn default() -> Self {
        EnvSpec::Synthetic {
            d: default_d(),
            delta: default_delta(),
            big_delta: default_big_delta(),
        }
    }
}

impl EnvSpec {
    pub fn build(&self) -> Result<LinearMixtureSsp> {
        match self {
            EnvSpec::Synthetic {
                d,
                delta,
                big_delta,
            } => Ok(LinearMixtureSsp::synthetic(SyntheticInstance::new(
                *d, *delta, *big_delta,
            )?)),
            EnvSpec::Explicit {
                num_states,
                num_actions,
                d,
                goal,
                init,
                theta_star,
                cost,
                features,
            } => {
                let (ns, na, d) = (*num_states, *num_actions, *d);
                let shape_err = |what: &str| {
                    Error::Config(format!("explicit environment: {what} has the wrong shape"))
                };
                if cost.len() != ns || cost.iter().any(|row| row.len() != na) {
                    return Err(shape_err("cost"));
                }
                if features.len() != ns
                    || features.iter().any(|per_a| {
                        per_a.len() != na
                            || per_a.iter().any(|per_s| {
                                per_s.len() != ns || per_s.iter().any(|f| f.len() != d)
                            })
                    })
                {
                    return Err(shape_err("features"));
                }
                let flat_features = features
                    .iter()
                    .flatten()
                    .flatten()
                    .flatten()
                    .copied()
                    .collect();
                let flat_costs = cost.iter().flatten().copied().collect();
                let model = ExplicitModel::new(ns, na, d, flat_features, flat_costs)?;
                LinearMixtureSsp::explicit(
                    model,
                    DVector::from_vec(theta_star.clone()),
                    *init,
                    *goal,
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    /// Defaults to `1 / (T* K)`.
    #[serde(default)]
    pub rho: Option<f64>,
}

/// One run, as read from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub env: EnvSpec,
    #[serde(default)]
    pub algo: Variant,
    pub episodes: u64,
    #[serde(default)]
    pub seed: u64,
    /// Defaults to `1000 B / c_min`.
    #[serde(default)]
    pub max_steps_per_episode: Option<u64>,
    pub agent: AgentConfig,
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialise")
    }

    pub fn check(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::Config("episodes must be at least 1".into()));
        }
        if self.max_steps_per_episode == Some(0) {
            return Err(Error::Config(
                "max_steps_per_episode must be at least 1".into(),
            ));
        }
        if self.agent.c_min.is_none() && self.agent.t_star.is_none() {
            return Err(Error::Config(
                "without c_min the perturbation needs agent.t_star".into(),
            ));
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a digest of the canonical serialisation, ignoring the output path.
    pub fn digest(&self) -> u64 {
        let mut canonical = self.clone();
        canonical.output = None;
        fnv1a(canonical.to_toml().as_bytes())
    }

    /// The cost shift, if the learner runs on perturbed costs.
    pub fn perturbation_config(&self) -> Result<Option<PerturbationConfig>> {
        let wanted = self.agent.c_min.is_none() || self.perturbation.is_some();
        if !wanted {
            return Ok(None);
        }
        let t_star = self
            .agent
            .t_star
            .ok_or_else(|| Error::Config("perturbation requires agent.t_star".into()))?;
        let rho = self.perturbation.and_then(|p| p.rho);
        Ok(Some(match rho {
            Some(rho) => PerturbationConfig::new(rho, t_star)?,
            None => PerturbationConfig::for_horizon(t_star, self.episodes)?,
        }))
    }

    pub fn agent_params(&self, env: &LinearMixtureSsp) -> Result<AgentParams> {
        match self.perturbation_config()? {
            Some(p) => AgentParams::perturbed(env, &self.agent, self.algo, p),
            None => AgentParams::resolve(env, &self.agent, self.algo),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Outcome of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeLog {
    pub steps: u64,
    /// Accumulated original (unperturbed) cost.
    pub cost: f64,
    pub truncated: bool,
    pub devi_calls: u64,
}

/// Plays one episode from the initial state until the goal or the step cap.
pub fn run_episode(
    env: &LinearMixtureSsp,
    agent: &mut Agent<'_>,
    rng: &mut Rng,
    cap: u64,
) -> Result<EpisodeLog> {
    let mut s = env.init();
    let mut log = EpisodeLog {
        steps: 0,
        cost: 0.0,
        truncated: false,
        devi_calls: 0,
    };
    while s != env.goal() {
        if log.steps >= cap {
            log.truncated = true;
            break;
        }
        let a = agent.act(s);
        log.cost += env.cost(s, a);
        let next = env.sample_transition(s, a, rng)?;
        if agent.observe(Transition {
            state: s,
            action: a,
            next_state: next,
        })? {
            log.devi_calls += 1;
        }
        log.steps += 1;
        s = next;
    }
    agent.end_episode();
    Ok(log)
}

/// One CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpisodeRow {
    pub episode: u64,
    pub steps: u64,
    pub episode_cost: f64,
    pub cum_cost: f64,
    pub cum_regret: f64,
    pub avg_regret: f64,
    pub devi_calls_cum: u64,
    pub truncated: bool,
}

pub const CSV_HEADER: &str =
    "episode,steps,episode_cost,cum_cost,cum_regret,avg_regret,devi_calls_cum";

/// Reals are written with 17 significant digits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

impl EpisodeRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.episode,
            self.steps,
            format_real(self.episode_cost),
            format_real(self.cum_cost),
            format_real(self.cum_regret),
            format_real(self.avg_regret),
            self.devi_calls_cum
        )
    }
}

/// Everything recorded about one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub algo: Variant,
    pub seed: u64,
    pub config_digest: u64,
    pub d: usize,
    pub levels: usize,
    pub lambda: f64,
    pub v_star_init: f64,
    pub episodes: Vec<EpisodeRow>,
    pub total_steps: u64,
    pub devi_calls: u64,
    pub truncated_episodes: u64,
    /// Planner calls whose snapshot ellipsoids missed `theta*` at some level.
    pub coverage_violations: u64,
    pub interval_updates: u64,
    /// Updates with coverage where `V_j(s_init) > V*(s_init) + eps_j`.
    pub optimism_violations: u64,
    pub optimism_checks: u64,
    pub variance_checks: u64,
    pub variance_within_bonus: u64,
    /// Largest `change_{i+1} - (1-q) change_i` over all planner sweeps.
    pub contraction_excess: f64,
    pub infeasible_updates: u64,
    /// Largest `V_j` entry observed on covered updates.
    pub max_covered_value: f64,
}

impl RunRecord {
    /// `R_k` after `k` episodes (1-based).
    pub fn regret_at(&self, k: usize) -> f64 {
        self.episodes[k - 1].cum_regret
    }

    pub fn final_regret(&self) -> f64 {
        self.episodes.last().map(|r| r.cum_regret).unwrap_or(0.0)
    }

    pub fn average_regret(&self) -> f64 {
        self.final_regret() / self.episodes.len().max(1) as f64
    }

    pub fn devi_budget(&self) -> f64 {
        devi_call_budget(self.d, self.levels, self.total_steps, self.lambda)
    }
}

/// Default step cap `ceil(1000 B / c_min)`.
pub fn default_step_cap(params: &AgentParams) -> u64 {
    (1000.0 * params.b / params.c_min)
        .ceil()
        .min(u64::MAX as f64) as u64
}

/// Executes `cfg.episodes` episodes, writing the CSV to `cfg.output` when set.
pub fn run(cfg: &RunConfig) -> Result<RunRecord> {
    cfg.check()?;
    let env = cfg.env.build()?;
    let params = cfg.agent_params(&env)?;
    let oracle = exact_optimal_value(&env)?;
    // optimism is judged against the costs the learner actually sees
    let perceived = if params.cost_shift > 0.0 {
        exact_optimal_value_shifted(&env, params.cost_shift)?
    } else {
        oracle.clone()
    };
    let mut sink = match &cfg.output {
        Some(path) => Some(CsvSink::create(path)?),
        None => None,
    };
    let outcome = run_inner(cfg, &env, params, &oracle, &perceived, sink.as_mut());
    if let Some(sink) = sink.as_mut() {
        match &outcome {
            Ok(_) => sink.finish()?,
            Err(e) => sink.abort(e)?,
        }
    }
    outcome
}

fn run_inner(
    cfg: &RunConfig,
    env: &LinearMixtureSsp,
    params: AgentParams,
    oracle: &OptimalSolution,
    perceived: &OptimalSolution,
    mut sink: Option<&mut CsvSink>,
) -> Result<RunRecord> {
    let cap = cfg
        .max_steps_per_episode
        .unwrap_or_else(|| default_step_cap(&params));
    let levels = params.levels;
    let lambda = params.lambda;
    let mut agent = Agent::new(env, params)?;
    let mut rng = seeded_rng(cfg.seed);
    let v_star = oracle.values[env.init()];

    let mut rows = Vec::with_capacity(cfg.episodes as usize);
    let (mut cum_cost, mut total_steps, mut truncated) = (0.0, 0u64, 0u64);
    for k in 1..=cfg.episodes {
        let log = run_episode(env, &mut agent, &mut rng, cap)?;
        cum_cost += log.cost;
        total_steps += log.steps;
        truncated += log.truncated as u64;
        let cum_regret = cum_cost - k as f64 * v_star;
        let row = EpisodeRow {
            episode: k,
            steps: log.steps,
            episode_cost: log.cost,
            cum_cost,
            cum_regret,
            avg_regret: cum_regret / k as f64,
            devi_calls_cum: agent.devi_calls(),
            truncated: log.truncated,
        };
        if let Some(s) = sink.as_deref_mut() {
            s.write_row(&row)?;
        }
        rows.push(row);
    }

    let updates = agent.updates();
    let v_ref = perceived.values[env.init()];
    let mut rec = RunRecord {
        algo: cfg.algo,
        seed: cfg.seed,
        config_digest: cfg.digest(),
        d: env.dim(),
        levels,
        lambda,
        v_star_init: v_star,
        episodes: rows,
        total_steps,
        devi_calls: agent.devi_calls(),
        truncated_episodes: truncated,
        coverage_violations: updates.iter().filter(|u| !u.covered()).count() as u64,
        interval_updates: updates.len() as u64,
        optimism_violations: 0,
        optimism_checks: 0,
        variance_checks: agent.variance_diagnostics().checks,
        variance_within_bonus: agent.variance_diagnostics().within_bonus,
        contraction_excess: updates
            .iter()
            .map(|u| u.sup_changes_max_excess)
            .fold(f64::NEG_INFINITY, f64::max),
        infeasible_updates: updates.iter().filter(|u| !u.feasible).count() as u64,
        max_covered_value: 0.0,
    };
    for u in updates.iter().filter(|u| u.covered()) {
        rec.optimism_checks += 1;
        if u.values[env.init()] > v_ref + u.epsilon {
            rec.optimism_violations += 1;
        }
        rec.max_covered_value = u
            .values
            .iter()
            .cloned()
            .fold(rec.max_covered_value, f64::max);
    }
    Ok(rec)
}

struct CsvSink {
    out: BufWriter<File>,
}

impl CsvSink {
    fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{CSV_HEADER}")?;
        Ok(Self { out })
    }

    fn write_row(&mut self, row: &EpisodeRow) -> Result<()> {
        writeln!(self.out, "{}", row.to_csv())?;
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    fn abort(&mut self, err: &Error) -> Result<()> {
        writeln!(self.out, "# truncated: {err}")?;
        self.out.flush()?;
        Ok(())
    }
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub algo: Variant,
    pub seed: u64,
    pub episodes: u64,
    pub status: String,
    pub final_regret: f64,
    pub average_regret: f64,
    pub total_steps: u64,
    pub devi_calls: u64,
    pub coverage_violations: u64,
}

pub const SWEEP_HEADER: &str = "algo,seed,K,R_K,R_K_over_K,T,J,coverage_violations,status";

impl SweepRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.algo,
            self.seed,
            self.episodes,
            format_real(self.final_regret),
            format_real(self.average_regret),
            self.total_steps,
            self.devi_calls,
            self.coverage_violations,
            self.status
        )
    }
}

/// Runs every config (independent runs in parallel, at most `parallelism` at a time).
/// Failed runs are reported in their row and do not stop the others.
pub fn sweep(
    configs: &[RunConfig],
    parallelism: usize,
) -> Result<(Vec<SweepRow>, Vec<Result<RunRecord>>)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<RunRecord>> = pool.install(|| configs.par_iter().map(run).collect());
    let rows = configs
        .iter()
        .zip(&results)
        .map(|(cfg, res)| match res {
            Ok(rec) => SweepRow {
                algo: cfg.algo,
                seed: cfg.seed,
                episodes: cfg.episodes,
                status: "ok".into(),
                final_regret: rec.final_regret(),
                average_regret: rec.average_regret(),
                total_steps: rec.total_steps,
                devi_calls: rec.devi_calls,
                coverage_violations: rec.coverage_violations,
            },
            Err(e) => SweepRow {
                algo: cfg.algo,
                seed: cfg.seed,
                episodes: cfg.episodes,
                status: format!("error: {e}").replace(',', ";"),
                final_regret: f64::NAN,
                average_regret: f64::NAN,
                total_steps: 0,
                devi_calls: 0,
                coverage_violations: 0,
            },
        })
        .collect();
    Ok((rows, results))
}

pub fn write_sweep_table(path: &Path, rows: &[SweepRow]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{SWEEP_HEADER}")?;
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    out.flush()?;
    Ok(())
}

/// Summary of the exact solution of an environment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub v_star: Vec<f64>,
    pub v_star_init: f64,
    pub b_star: f64,
    pub t_star: f64,
    pub policy: Vec<usize>,
    pub hitting_times: Vec<f64>,
    pub c_min: f64,
}

pub fn oracle(spec: &EnvSpec) -> Result<OracleReport> {
    let env = spec.build()?;
    let sol = exact_optimal_value(&env)?;
    Ok(OracleReport {
        v_star_init: sol.values[env.init()],
        v_star: sol.values,
        b_star: sol.b_star,
        t_star: sol.t_star,
        policy: sol.policy,
        hitting_times: sol.hitting_times,
        c_min: env.c_min(),
    })
}

impl OracleReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("oracle reports always serialise")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> RunConfig {
        RunConfig::from_toml(
            r#"
            episodes = 5
            seed = 7
            [env]
            kind = "synthetic"
            [agent]
            b = 3.0
            c_min = 1.0
            lambda = 1.0
            "#,
        )
        .unwrap()
    }

    #[test]
    fn config_defaults() {
        let cfg = base_config();
        assert_eq!(cfg.env, EnvSpec::default());
        assert_eq!(cfg.algo, Variant::LevisPp);
        assert!(cfg.perturbation_config().unwrap().is_none());
    }

    #[test]
    fn config_rejects_zero_episodes() {
        let err =
            RunConfig::from_toml("episodes = 0\n[agent]\nb = 3.0\nc_min = 1.0\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(
            RunConfig::from_toml("episodes = 1\nbogus = 2\n[agent]\nb = 3.0\nc_min = 1.0\n")
                .is_err()
        );
    }

    #[test]
    fn perturbation_defaults_to_inverse_horizon() {
        let cfg =
            RunConfig::from_toml("episodes = 2000\n[agent]\nb = 3.0\nt_star = 3.0\n").unwrap();
        let p = cfg.perturbation_config().unwrap().unwrap();
        assert!((p.rho - 1.0 / 6000.0).abs() < 1e-18);
    }

    #[test]
    fn digest_ignores_output_path() {
        let a = base_config();
        let mut b = a.clone();
        b.output = Some("x.csv".into());
        assert_eq!(a.digest(), b.digest());
        b.seed += 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn cap_of_one_truncates() {
        let mut cfg = base_config();
        cfg.max_steps_per_episode = Some(1);
        let rec = run(&cfg).unwrap();
        for row in &rec.episodes {
            // an episode ends after one step either at the goal or truncated
            assert_eq!(row.steps, 1);
        }
    }

    #[test]
    fn empty_sweep() {
        let (rows, results) = sweep(&[], 2).unwrap();
        assert!(rows.is_empty() && results.is_empty());
    }

    #[test]
    fn real_format_has_17_significant_digits() {
        assert_eq!(format_real(1.0 / 3.0), "3.3333333333333331e-1");
    }
}
