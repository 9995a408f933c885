use super::*;
use crate::gateway::{Gateway, GatewayConfig};
use crate::narrator::{DrivingStyle, Narrator, StyleName};
use crate::reward::RewardWeights;
use crate::rollout::ShapedEnv;
use crate::sim::{EnvRewardParams, SimConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook forward pass: explicit matrix-vector products, `W[o][i]` indexing.
fn oracle_forward(net: &QNetwork, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for (k, layer) in net.layers.iter().enumerate() {
        let mut z = vec![0.0; layer.outputs];
        for o in 0..layer.outputs {
            let mut s = layer.bias[o];
            for i in 0..layer.inputs {
                s += layer.weights[i * layer.outputs + o] * a[i];
            }
            z[o] = if k + 1 < net.layers.len() { s.max(0.0) } else { s };
        }
        a = z;
    }
    a
}

fn oracle_loss(net: &QNetwork, xs: &[f64], actions: &[usize], targets: &[f64]) -> f64 {
    let d = net.input_size();
    actions
        .iter()
        .enumerate()
        .map(|(b, &a)| {
            let q = oracle_forward(net, &xs[b * d..(b + 1) * d]);
            (q[a] - targets[b]).powi(2)
        })
        .sum::<f64>()
        / actions.len() as f64
}

/// Largest relative error between analytic and central-difference gradients.
fn gradient_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.gen_range(2..8);
    let hidden = [rng.gen_range(2..9), rng.gen_range(2..9)];
    let batch = rng.gen_range(1..7);
    let mut net = QNetwork::random(d, &hidden, 5, &mut rng);
    // zero biases would park dead-input units exactly on the ReLU kink
    for layer in &mut net.layers {
        for b in &mut layer.bias {
            *b = rng.gen_range(-0.5..0.5);
        }
    }
    let xs: Vec<f64> = (0..batch * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let actions: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..5)).collect();
    let targets: Vec<f64> = (0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let (_, grad) = net.td_loss_and_grad(&xs, &actions, &targets);
    let analytic = grad.params();
    let base = net.params();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for p in 0..base.len() {
        let mut probe = net.clone();
        let mut params = base.clone();
        params[p] = base[p] + h;
        probe.set_params(&params);
        let up = oracle_loss(&probe, &xs, &actions, &targets);
        params[p] = base[p] - h;
        probe.set_params(&params);
        let down = oracle_loss(&probe, &xs, &actions, &targets);
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[p].abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((analytic[p] - numeric).abs() / scale);
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..20 {
        let err = gradient_check(seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err}");
    }
}

#[test]
fn forward_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let net = QNetwork::random(OBS_LEN, &[12, 7], 5, &mut rng);
        let x: Vec<f64> = (0..OBS_LEN).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let fast = net.forward(&x);
        let slow = oracle_forward(&net, &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

fn transition(rng: &mut ChaCha8Rng, terminal: bool) -> Transition {
    let mut obs = [0.0; OBS_LEN];
    let mut next_obs = [0.0; OBS_LEN];
    for v in obs.iter_mut().chain(next_obs.iter_mut()) {
        *v = rng.gen_range(-1.0..1.0);
    }
    Transition {
        obs,
        action: EgoAction::from_index(rng.gen_range(0..5)).unwrap(),
        reward: rng.gen_range(0.0..1.0),
        next_obs,
        terminal,
        next_available: ActionSet::FULL,
    }
}

#[test]
fn terminal_targets_are_rewards() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = QNetwork::random(OBS_LEN, &[8, 8], 5, &mut rng);
    let batch: Vec<Transition> = (0..16).map(|_| transition(&mut rng, true)).collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let ys = td_targets(&refs, &net, 0.9);
    for (y, t) in ys.iter().zip(&batch) {
        assert_eq!(*y, t.reward);
    }
}

#[test]
fn zero_discount_targets_are_rewards() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = QNetwork::random(OBS_LEN, &[8, 8], 5, &mut rng);
    let batch: Vec<Transition> = (0..16).map(|_| transition(&mut rng, false)).collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    for (y, t) in td_targets(&refs, &net, 0.0).iter().zip(&batch) {
        assert_eq!(*y, t.reward);
    }
}

#[test]
fn bootstrap_uses_only_available_next_actions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = QNetwork::random(OBS_LEN, &[8, 8], 5, &mut rng);
    let mut t = transition(&mut rng, false);
    let q = net.forward(&t.next_obs);
    for bits in 1u8..32 {
        t.next_available = ActionSet::from_bits(bits);
        let best = t.next_available.iter().map(|a| q[a.index()]).fold(f64::NEG_INFINITY, f64::max);
        let y = td_targets(&[&t], &net, 0.5)[0];
        assert!((y - (t.reward + 0.5 * best)).abs() < 1e-12);
    }
}

#[test]
fn td_update_moves_towards_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut online = QNetwork::random(OBS_LEN, &[16, 16], 5, &mut rng);
    let batch: Vec<Transition> = (0..32).map(|_| transition(&mut rng, true)).collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let cfg = AgentConfig {
        learning_rate: 0.01,
        ..AgentConfig::default()
    };
    let target = online.clone();
    let first = td_update(&refs, &mut online, &target, &cfg);
    let mut last = first;
    for _ in 0..50 {
        last = td_update(&refs, &mut online, &target, &cfg);
    }
    assert!(last < first);
}

#[test]
fn config_validation() {
    assert!(AgentConfig::default().validate().is_ok());
    let bad = [
        AgentConfig { discount: 1.0, ..Default::default() },
        AgentConfig { discount: 0.0, ..Default::default() },
        AgentConfig { epsilon_end: 0.5, epsilon_start: 0.2, ..Default::default() },
        AgentConfig { epsilon_start: 1.5, ..Default::default() },
        AgentConfig { buffer_capacity: 10, batch_size: 64, ..Default::default() },
        AgentConfig { hidden_sizes: vec![], ..Default::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    let policy = TrainedPolicy::random(&AgentConfig::default(), 7);
    policy.save(&path).unwrap();
    let loaded = TrainedPolicy::load(&path).unwrap();
    assert_eq!(loaded, policy);

    let missing = dir.path().join("nope.json");
    let err = TrainedPolicy::load(&missing).unwrap_err().to_string();
    assert!(err.contains("nope.json"), "{err}");

    std::fs::write(&path, "{\"format\":\"other\"}").unwrap();
    assert!(TrainedPolicy::load(&path).is_err());
}

struct Fixture {
    sim: SimConfig,
    env_reward: EnvRewardParams,
    weights: RewardWeights,
    narrator: Narrator,
    gateway: Gateway,
    style: DrivingStyle,
}

impl Fixture {
    fn new(style: StyleName) -> Self {
        Self {
            sim: SimConfig { npc_count: 12, episode_steps: 20, ..SimConfig::default() },
            env_reward: EnvRewardParams::default(),
            weights: RewardWeights::default(),
            narrator: Narrator::default(),
            gateway: Gateway::new(GatewayConfig::default()).unwrap(),
            style: style.into(),
        }
    }

    fn env(&self) -> ShapedEnv<'_> {
        ShapedEnv {
            sim: &self.sim,
            env_reward: &self.env_reward,
            weights: &self.weights,
            narrator: &self.narrator,
            gateway: &self.gateway,
            style: &self.style,
        }
    }
}

fn small_agent(steps: u64) -> AgentConfig {
    AgentConfig {
        hidden_sizes: vec![16, 16],
        batch_size: 8,
        buffer_capacity: 100,
        learning_starts: 10,
        epsilon_decay_steps: 100,
        target_sync_every: 20,
        total_train_steps: steps,
        rng_seed: 11,
        ..AgentConfig::default()
    }
}

#[test]
fn zero_steps_returns_initial_policy() {
    let fx = Fixture::new(StyleName::Base);
    let cfg = small_agent(0);
    let (policy, log) = train(&fx.env(), &cfg).unwrap();
    assert!(log.is_empty());
    assert_eq!(policy.train_steps, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let init = QNetwork::random(OBS_LEN, &cfg.hidden_sizes, ACTION_COUNT, &mut rng);
    assert_eq!(policy.network, init);
}

#[test]
fn training_is_deterministic() {
    let fx = Fixture::new(StyleName::Aggressive);
    let cfg = small_agent(300);
    let (p1, l1) = train(&fx.env(), &cfg).unwrap();
    let (p2, l2) = train(&fx.env(), &cfg).unwrap();
    assert_eq!(p1, p2);
    let (mut c1, mut c2) = (Vec::new(), Vec::new());
    l1.write_csv(&mut c1).unwrap();
    l2.write_csv(&mut c2).unwrap();
    assert_eq!(c1, c2);
    assert_eq!(l1.step_matches.len(), 300);
    let steps: u32 = l1.episodes.iter().map(|e| e.steps).sum();
    assert_eq!(steps, 300);
    for e in &l1.episodes {
        assert!((0.0..=1.0).contains(&e.match_rate));
    }
    let parsed = TrainingLog::read_csv(c1.as_slice()).unwrap();
    assert_eq!(parsed, l1.episodes);
}

#[test]
fn moving_average_is_trailing_mean() {
    let log = TrainingLog {
        episodes: vec![],
        step_matches: vec![true, false, true, true],
    };
    let ma = log.match_moving_average(2);
    assert_eq!(ma, vec![(1, 1.0), (2, 0.5), (3, 0.5), (4, 1.0)]);
    assert_eq!(log.mean_match(0, 4), 0.75);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn greedy_policy_respects_mask(seed in any::<u64>(), bits in 1u8..32) {
        let policy = TrainedPolicy::random(&AgentConfig { hidden_sizes: vec![8], ..Default::default() }, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut obs = [0.0; OBS_LEN];
        for v in obs.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let avail = ActionSet::from_bits(bits);
        let a = policy.act(&obs, avail);
        prop_assert!(avail.contains(a));
        prop_assert_eq!(a, policy.act(&obs, avail));
    }
}
