use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use statekl_core::agents::{polyak_update, ActorTerms, Agent, AgentConfig, Algorithm};
use statekl_core::envspace::{Env, EnvKind, EnvSpec};
use statekl_core::numcore::{Activation, Mlp, Module, Tensor};
use statekl_core::replay::{Batch, Transition};
use statekl_core::rng::seeded;
use statekl_core::statedensity::{kl_value, DensityConfig, DensityPair};
use statekl_core::train::{train, TrainConfig};

fn spec() -> EnvSpec {
    EnvKind::Pendulum.make().spec().clone()
}

fn batch(n: usize, seed: u64) -> Batch {
    let mut rng = seeded(seed);
    let items: Vec<Transition> = (0..n)
        .map(|i| {
            let th: f64 = rng.random_range(-3.0..3.0);
            let v: f64 = rng.random_range(-4.0..4.0);
            Transition {
                state: vec![th.cos(), th.sin(), v],
                action: vec![rng.random_range(-2.0..2.0)],
                reward: rng.random_range(-10.0..0.0),
                next_state: vec![(th + 0.1).cos(), (th + 0.1).sin(), v * 0.9],
                done: false,
                episode_id: 1,
                step_id: i as u32,
            }
        })
        .collect();
    Batch::from_transitions(&items, 3, 1)
}

fn small(alg: Algorithm) -> AgentConfig {
    let mut c = AgentConfig::new(alg);
    c.hidden = 16;
    c
}

/// A warm pair whose two models were fit to different feature clouds.
fn warm_pair(seed: u64) -> DensityPair {
    let cfg = DensityConfig::default();
    let mut pair = DensityPair::new(cfg, &mut seeded(seed));
    let mut rng = seeded(seed + 1);
    let cloud = |shift: f64, s: u64| {
        let mut r = seeded(s);
        let data = (0..64 * cfg.feature_dim)
            .map(|_| (shift + 0.5 * r.sample::<f64, _>(StandardNormal)).tanh())
            .collect();
        Tensor::matrix(64, cfg.feature_dim, data).unwrap()
    };
    let (a, b) = (cloud(0.3, seed + 2), cloud(-0.4, seed + 3));
    for _ in 0..4 {
        pair.refresh_mu(&a, &mut rng).unwrap();
        pair.refresh_pi(&b, &mut rng).unwrap();
    }
    pair
}

fn actor_grads(agent: &Agent) -> Vec<f64> {
    agent
        .actor()
        .parameters()
        .iter()
        .flat_map(|p| p.grad().to_vec())
        .collect()
}

fn set_constant(q: &mut Mlp, value: f64) {
    let last = q.weights().len() - 1;
    q.weights_mut()[last]
        .data_mut()
        .iter_mut()
        .for_each(|w| *w = 0.0);
    q.biases_mut()[last].data_mut()[0] = value;
}

#[test]
fn td3_bootstrap_uses_the_smaller_twin() {
    let mut cfg = small(Algorithm::Td3);
    cfg.tau = 1.0;
    cfg.policy_delay = 1;
    cfg.lr_critic = 0.0;
    cfg.lr_actor = 0.0;
    let mut agent = Agent::new(&spec(), cfg, &mut seeded(1)).unwrap();
    set_constant(&mut agent.critics_mut()[0], 3.0);
    set_constant(&mut agent.critics_mut()[1], 2.0);
    let b = batch(8, 2);
    // With tau = 1 the target update copies the constant critics over.
    agent
        .update(&b, None, &mut seeded(3), &mut seeded(4))
        .unwrap();
    let y = agent.critic_targets_for(&b, &mut seeded(5)).unwrap();
    for (yi, r) in y.iter().zip(&b.rewards) {
        assert!((yi - (r + 0.99 * 2.0)).abs() < 1e-12);
    }
}

#[test]
fn terminal_transitions_do_not_bootstrap() {
    let agent = Agent::new(&spec(), small(Algorithm::Ddpg), &mut seeded(6)).unwrap();
    let mut b = batch(4, 7);
    b.dones = vec![1.0; 4];
    let y = agent.critic_targets_for(&b, &mut seeded(8)).unwrap();
    assert_eq!(y, b.rewards);
}

#[test]
fn zero_lambda_is_bit_identical_to_baseline() {
    for alg in Algorithm::ALL {
        let pair = warm_pair(10);
        let base_cfg = small(alg);
        let mut kl_cfg = base_cfg.clone();
        kl_cfg.statekl = true;
        kl_cfg.lambda = 0.0;
        let mut base = Agent::new(&spec(), base_cfg, &mut seeded(11)).unwrap();
        let mut reg = Agent::new(&spec(), kl_cfg, &mut seeded(11)).unwrap();
        let (mut r1, mut r2) = (seeded(12), seeded(12));
        let (mut d1, mut d2) = (seeded(13), seeded(13));
        for k in 0..6 {
            let b = batch(32, 100 + k);
            let s1 = base.update(&b, Some(&pair), &mut r1, &mut d1).unwrap();
            let s2 = reg.update(&b, Some(&pair), &mut r2, &mut d2).unwrap();
            assert_eq!(s1, s2, "{alg}");
            assert_eq!(base.checksum(), reg.checksum(), "{alg} step {k}");
        }
    }
}

#[test]
fn zero_lambda_training_run_is_bit_identical() {
    let mut base = TrainConfig::new(EnvKind::Pendulum, small(Algorithm::Ddpg), 5);
    base.total_steps = 700;
    base.warmup_steps = 400;
    base.eval_every = 350;
    base.eval_episodes = 1;
    base.agent.batch_size = 16;
    let mut reg = base.clone();
    reg.agent.statekl = true;
    let a = train(&base).unwrap();
    let b = train(&reg).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.agent.checksum(), b.agent.checksum());
}

#[test]
fn identical_density_models_contribute_nothing() {
    let mut pair = warm_pair(20);
    pair.pi = pair.mu.clone();
    let mut cfg = small(Algorithm::Ddpg);
    cfg.statekl = true;
    cfg.lambda = 3.0;
    let mut agent = Agent::new(&spec(), cfg, &mut seeded(21)).unwrap();
    let states = batch(32, 22).states;

    let kl = agent
        .actor_gradient(
            &states,
            Some(&pair),
            ActorTerms::KlOnly,
            &mut seeded(0),
            &mut seeded(1),
        )
        .unwrap();
    assert_eq!(kl.kl, Some(0.0));
    assert!(actor_grads(&agent).iter().all(|g| *g == 0.0));

    agent
        .actor_gradient(
            &states,
            Some(&pair),
            ActorTerms::ValueOnly,
            &mut seeded(0),
            &mut seeded(1),
        )
        .unwrap();
    let value = actor_grads(&agent);
    agent
        .actor_gradient(
            &states,
            Some(&pair),
            ActorTerms::Full,
            &mut seeded(0),
            &mut seeded(1),
        )
        .unwrap();
    assert_eq!(actor_grads(&agent), value);
}

#[test]
fn actor_gradient_is_linear_in_lambda() {
    for alg in Algorithm::ALL {
        let pair = warm_pair(30);
        let lambda = 0.7;
        let mut cfg = small(alg);
        cfg.statekl = true;
        cfg.lambda = lambda;
        let mut agent = Agent::new(&spec(), cfg, &mut seeded(31)).unwrap();
        let states = batch(32, 32).states;
        let mut grads = |terms| {
            agent
                .actor_gradient(
                    &states,
                    Some(&pair),
                    terms,
                    &mut seeded(33),
                    &mut seeded(34),
                )
                .unwrap();
            actor_grads(&agent)
        };
        let full = grads(ActorTerms::Full);
        let value = grads(ActorTerms::ValueOnly);
        let kl = grads(ActorTerms::KlOnly);
        assert!(kl.iter().any(|g| *g != 0.0));
        for ((f, v), k) in full.iter().zip(&value).zip(&kl) {
            let want = v + lambda * k;
            assert!(
                (f - want).abs() <= 1e-10 * (1.0 + want.abs()),
                "{alg}: {f} vs {want}"
            );
        }
    }
}

#[test]
fn one_penalized_step_does_not_raise_the_estimate() {
    for alg in [Algorithm::Ddpg, Algorithm::Td3] {
        let pair = warm_pair(40);
        let mut cfg = small(alg);
        cfg.statekl = true;
        cfg.lambda = 1.0;
        cfg.lr_actor = 1e-6;
        cfg.policy_delay = 1;
        let mut agent = Agent::new(&spec(), cfg, &mut seeded(41)).unwrap();
        // A zero critic removes the value gradient.
        for q in agent.critics_mut() {
            q.parameters_mut()
                .into_iter()
                .for_each(|p| p.data_mut().fill(0.0));
        }
        let states = batch(64, 42).states;
        let before = kl_value(&pair, agent.actor(), &states, &mut seeded(43)).unwrap();
        agent
            .actor_update(&states, Some(&pair), &mut seeded(44), &mut seeded(43))
            .unwrap();
        let after = kl_value(&pair, agent.actor(), &states, &mut seeded(43)).unwrap();
        assert!(after <= before + 1e-6, "{alg}: {before} -> {after}");
        assert!(after < before, "{alg}: no descent at all");
    }
}

#[test]
fn polyak_shrinks_the_gap_geometrically() {
    let mut rng = seeded(50);
    let live = Mlp::new(&[3, 8, 2], Activation::Relu, Activation::Linear, &mut rng);
    let mut target = Mlp::new(&[3, 8, 2], Activation::Relu, Activation::Linear, &mut rng);
    let gap = |t: &Mlp| -> f64 {
        t.parameters()
            .iter()
            .zip(live.parameters())
            .flat_map(|(a, b)| {
                a.data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| (x - y) * (x - y))
            })
            .sum::<f64>()
            .sqrt()
    };
    let tau = 0.05;
    let mut prev = gap(&target);
    for _ in 0..50 {
        polyak_update(&live, &mut target, tau);
        let now = gap(&target);
        assert!((now / prev - (1.0 - tau)).abs() < 1e-9);
        prev = now;
    }
}

#[test]
fn exploration_noise_has_the_configured_std() {
    let agent = Agent::new(&spec(), small(Algorithm::Ddpg), &mut seeded(60)).unwrap();
    let s = [1.0, 0.0, 0.0];
    let clean = agent.act(&s, false, &mut seeded(0)).unwrap()[0];
    let mut rng = seeded(61);
    let diffs: Vec<f64> = (0..10_000)
        .map(|_| agent.act(&s, true, &mut rng).unwrap()[0])
        .filter(|a| a.abs() < 2.0)
        .map(|a| a - clean)
        .collect();
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let std = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    let sigma = 0.1 * 4.0;
    assert!((std - sigma).abs() <= 0.05 * sigma, "std {std}");
}

#[test]
fn targets_move_only_through_polyak() {
    for alg in [Algorithm::Ddpg, Algorithm::Td3, Algorithm::Sac] {
        let mut cfg = small(alg);
        cfg.policy_delay = 2;
        let mut agent = Agent::new(&spec(), cfg, &mut seeded(70)).unwrap();
        let hashes = |a: &Agent| -> Vec<u64> {
            let mut h: Vec<u64> = a.critic_targets().iter().map(|q| q.checksum()).collect();
            h.extend(a.actor_target().map(|t| t.checksum()));
            h
        };
        let mut rng = seeded(71);
        for k in 0..4 {
            let b = batch(16, 200 + k);
            let before = agent.clone();
            agent.critic_update(&b, &mut rng).unwrap();
            assert_eq!(
                hashes(&agent),
                hashes(&before),
                "{alg}: critic step touched targets"
            );

            let before = agent.clone();
            let stats = agent.update(&b, None, &mut rng, &mut seeded(0)).unwrap();
            if stats.actor.is_none() {
                assert_eq!(hashes(&agent), hashes(&before));
                continue;
            }
            let tau = agent.config().tau;
            let mut want: Vec<Mlp> = before.critic_targets().to_vec();
            for (l, t) in agent.critics().iter().zip(&mut want) {
                polyak_update(l, t, tau);
            }
            let mut expected: Vec<u64> = want.iter().map(|q| q.checksum()).collect();
            if let Some(t) = before.actor_target() {
                let mut t = t.clone();
                polyak_update(agent.actor(), &mut t, tau);
                expected.push(t.checksum());
            }
            assert_eq!(hashes(&agent), expected, "{alg} step {k}");
        }
    }
}

#[test]
fn statekl_without_warm_models_is_an_error() {
    let mut cfg = small(Algorithm::Ddpg);
    cfg.statekl = true;
    cfg.lambda = 1.0;
    let mut agent = Agent::new(&spec(), cfg, &mut seeded(80)).unwrap();
    let cold = DensityPair::new(DensityConfig::default(), &mut seeded(81));
    let err = agent
        .actor_update(
            &batch(8, 82).states,
            Some(&cold),
            &mut seeded(0),
            &mut seeded(1),
        )
        .unwrap_err();
    assert!(err.to_string().contains("density model cold"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn emitted_actions_stay_in_bounds(
        seed in any::<u64>(),
        alg_idx in 0usize..3,
        state in prop::collection::vec(-50.0..50.0f64, 3),
        explore in any::<bool>(),
    ) {
        let mut cfg = small(Algorithm::ALL[alg_idx]);
        cfg.explore_sigma = 2.0;
        let agent = Agent::new(&spec(), cfg, &mut seeded(seed)).unwrap();
        let mut rng = seeded(seed ^ 1);
        for _ in 0..20 {
            let a = agent.act(&state, explore, &mut rng).unwrap();
            prop_assert!(a.iter().all(|x| (-2.0..=2.0).contains(x)));
        }
    }
}
