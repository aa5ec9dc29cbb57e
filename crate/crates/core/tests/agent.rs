use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssp_core::agent::{Agent, AgentConfig, AgentParams, Transition, Variant};
use ssp_core::devi::{devi, ConstraintSet, DeviParams, SolverMode};
use ssp_core::env::{LinearMixtureSsp, SyntheticInstance};
use ssp_core::wls::{det_doubled, ConfidenceEllipsoid, IntervalSnapshot, RegressionLevel};

fn synthetic() -> LinearMixtureSsp {
    LinearMixtureSsp::synthetic(SyntheticInstance::new(4, 0.25, 1.0 / 12.0).unwrap())
}

fn params(env: &LinearMixtureSsp, variant: Variant) -> AgentParams {
    let mut cfg = AgentConfig::new(3.0, Some(1.0));
    cfg.lambda = Some(1.0);
    cfg.beta_scale = 0.0005;
    cfg.devi_mode = SolverMode::Exact;
    AgentParams::resolve(env, &cfg, variant).unwrap()
}

fn stream(env: &LinearMixtureSsp, n: usize) -> Vec<Transition> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut out = Vec::with_capacity(n);
    let mut s = env.init();
    for i in 0..n {
        let action = i % env.num_actions();
        let next = env.sample_transition(s, action, &mut rng).unwrap();
        out.push(Transition {
            state: s,
            action,
            next_state: next,
        });
        s = if next == env.goal() { env.init() } else { next };
    }
    out
}

#[test]
fn planning_with_the_true_model_picks_the_all_plus_action() {
    let env = synthetic();
    let e =
        ConfidenceEllipsoid::new(env.theta_star().clone(), DMatrix::identity(4, 4), 0.0).unwrap();
    let params = DeviParams {
        epsilon: 1e-9,
        q: 0.0,
        mode: SolverMode::Exact,
        b: 3.0,
        cost_shift: 0.0,
    };
    let result = devi(&env, &e, &ConstraintSet::from_env(&env), &params).unwrap();
    assert_eq!(result.q.greedy(env.init()).0, 0b111);
}

#[test]
fn replaying_a_stream_is_deterministic() {
    let env = synthetic();
    let transitions = stream(&env, 400);
    for variant in [Variant::LevisPp, Variant::Unweighted, Variant::VarianceOnly] {
        let replay = || {
            let mut agent = Agent::new(&env, params(&env, variant)).unwrap();
            for tr in &transitions {
                agent.observe(*tr).unwrap();
            }
            (
                agent.values().to_vec(),
                agent.devi_calls(),
                agent.levels()[0].theta().clone(),
            )
        };
        assert_eq!(replay(), replay(), "{variant}");
    }
}

#[test]
fn every_update_has_a_cause_and_intervals_advance() {
    let env = synthetic();
    let mut agent = Agent::new(&env, params(&env, Variant::LevisPp)).unwrap();
    for tr in stream(&env, 3000) {
        agent.observe(tr).unwrap();
    }
    let updates = agent.updates();
    assert!(updates.iter().all(|u| u.det_trigger || u.time_trigger));
    assert!(updates.windows(2).all(|w| w[0].t_j < w[1].t_j));
    assert!(updates.iter().any(|u| u.det_trigger && !u.time_trigger));
    assert_eq!(updates.len() as u64, agent.devi_calls());
}

#[test]
fn determinant_doubling_on_a_higher_level_is_detected_alone() {
    let mut levels: Vec<RegressionLevel> = (0..3)
        .map(|l| RegressionLevel::new(l, 4, 1.0).unwrap())
        .collect();
    let snapshot = IntervalSnapshot::take(1, &levels);
    let phi = DVector::from_vec(vec![0.5, -0.5, 0.5, 1.0]);
    levels[0].rank1_update_inv_sq(&phi, 0.1, 0.3).unwrap();
    levels[2].rank1_update_inv_sq(&phi, 2.0, 0.3).unwrap();
    let doubled: Vec<bool> = levels
        .iter()
        .zip(&snapshot.levels)
        .map(|(l, s)| det_doubled(l, s))
        .collect();
    // det grows by 1 + w ||phi||^2 = 1 + 1.75 w
    assert_eq!(doubled, vec![false, false, true]);
}
