//! Online training loop: collect, store, update, evaluate.

use alloc::vec::Vec;

use rand::Rng;

use crate::agents::{Agent, AgentConfig, AgentError};
use crate::envspace::{Env, EnvError, EnvKind};
use crate::metrics::{Mean, MetricsRow};
use crate::numcore::NumError;
use crate::replay::{
    snapshot_states, OnlineBuffer, ReplayBuffer, ReplayError, SamplingScheme, Transition,
};
use crate::rng::{derive_seed, seeded, stream};
use crate::statedensity::{DensityConfig, DensityPair, FeatureMap};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error("invalid training config: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub agent: AgentConfig,
    pub scheme: SamplingScheme,
    pub total_steps: u64,
    /// Steps of uniform random actions before the first update.
    pub warmup_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub replay_capacity: usize,
    /// Completed rollouts kept for the online density model.
    pub online_rollouts: usize,
    pub density: DensityConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(env: EnvKind, agent: AgentConfig, seed: u64) -> Self {
        let density = DensityConfig {
            feature_dim: agent.feature_dim,
            ..DensityConfig::default()
        };
        Self {
            env,
            agent,
            scheme: SamplingScheme::Uniform,
            total_steps: 50_000,
            warmup_steps: 1_000,
            eval_every: 1_000,
            eval_episodes: 10,
            replay_capacity: 1_000_000,
            online_rollouts: 1,
            density,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.agent.validate()?;
        if self.density.feature_dim != self.agent.feature_dim {
            return Err(TrainError::Config(
                "density feature_dim must match the policy feature head",
            ));
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(TrainError::Config(
                "evaluation cadence and episode count must be positive",
            ));
        }
        if self.replay_capacity == 0 || self.online_rollouts == 0 {
            return Err(TrainError::Config("buffer sizes must be positive"));
        }
        if let SamplingScheme::Windowed(0) = self.scheme {
            return Err(TrainError::Config("window must be at least 1 episode"));
        }
        if self.density.latent_dim == 0
            || self.density.hidden == 0
            || self.density.snapshot_size == 0
        {
            return Err(TrainError::Config("density sizes must be positive"));
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub agent: Agent,
    pub episodes: u64,
}

/// Mean undiscounted return of `policy` over `episodes` episodes whose reset
/// seeds derive from `seed`.
pub fn evaluate_with<F>(
    kind: EnvKind,
    episodes: usize,
    seed: u64,
    mut policy: F,
) -> Result<f64, TrainError>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>, TrainError>,
{
    let mut env = kind.make();
    let mut total = 0.0;
    for k in 0..episodes {
        let mut obs = env.reset(derive_seed(seed, k as u64));
        loop {
            let a = policy(&obs)?;
            let step = env.step(&a)?;
            total += step.reward;
            if step.done() {
                break;
            }
            obs = step.observation;
        }
    }
    Ok(total / episodes.max(1) as f64)
}

/// Noise-free evaluation of an agent.
pub fn evaluate(
    agent: &Agent,
    kind: EnvKind,
    episodes: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    let mut unused = seeded(0);
    evaluate_with(kind, episodes, seed, |s| {
        Ok(agent.act(s, false, &mut unused)?)
    })
}

/// Return of uniformly random actions.
pub fn random_policy_return(kind: EnvKind, episodes: usize, seed: u64) -> Result<f64, TrainError> {
    let spec = kind.make().spec().clone();
    let mut rng = stream(seed, crate::rng::stream::EXPLORE);
    evaluate_with(kind, episodes, seed, |_| {
        Ok(uniform_action(
            &spec.action_low,
            &spec.action_high,
            &mut rng,
        ))
    })
}

fn uniform_action<R: Rng + ?Sized>(low: &[f64], high: &[f64], rng: &mut R) -> Vec<f64> {
    low.iter()
        .zip(high)
        .map(|(l, h)| rng.random_range(*l..=*h))
        .collect()
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_observed(config, &mut |_| {})
}

/// Runs one training job; `observe` sees every stored transition in order.
pub fn train_observed(
    config: &TrainConfig,
    observe: &mut dyn FnMut(&Transition),
) -> Result<TrainOutcome, TrainError> {
    use crate::rng::stream as tag;
    config.validate()?;
    let seed = config.seed;
    let mut init_rng = stream(seed, tag::INIT);
    let mut agent_rng = stream(seed, tag::AGENT);
    let mut explore_rng = stream(seed, tag::EXPLORE);
    let mut env_rng = stream(seed, tag::ENV);
    let mut replay_rng = stream(seed, tag::REPLAY);
    let mut density_rng = stream(seed, tag::DENSITY);
    let eval_seed = derive_seed(seed, tag::EVAL);

    let mut env = config.env.make();
    let spec = env.spec().clone();
    let mut agent = Agent::new(&spec, config.agent.clone(), &mut init_rng)?;
    let mut pair = DensityPair::new(config.density, &mut init_rng);
    let mut replay = ReplayBuffer::new(config.replay_capacity, spec.state_dim, spec.action_dim);
    let mut online = OnlineBuffer::new(config.online_rollouts, spec.state_dim);

    let mut rows = Vec::new();
    let (mut actor_loss, mut critic_loss) = (Mean::default(), Mean::default());
    let (mut elbo_mu, mut elbo_pi, mut kl) = (Mean::default(), Mean::default(), Mean::default());

    let mut episode: u64 = 1;
    let mut step_id: u32 = 0;
    let mut obs = env.reset(env_rng.random());
    for t in 1..=config.total_steps {
        let action = if t <= config.warmup_steps {
            uniform_action(&spec.action_low, &spec.action_high, &mut explore_rng)
        } else {
            agent.act(&obs, true, &mut explore_rng)?
        };
        let step = env.step(&action)?;
        let tr = Transition {
            state: obs,
            action,
            reward: step.reward,
            next_state: step.observation.clone(),
            done: step.terminated,
            episode_id: episode,
            step_id,
        };
        observe(&tr);
        online.push(tr.clone())?;
        replay.push(tr)?;
        step_id += 1;

        if step.done() {
            online.finish_rollout();
            let mut r = seeded(density_rng.random());
            let n = config.density.snapshot_size;
            let pi_states = snapshot_states(&online, n, &mut r);
            pair.refresh_pi(&agent.actor().features(&pi_states)?, &mut r)?;
            let mu_states = snapshot_states(&replay, n, &mut r);
            pair.refresh_mu(&agent.actor().features(&mu_states)?, &mut r)?;
            episode += 1;
            step_id = 0;
            obs = env.reset(env_rng.random());
        } else {
            obs = step.observation;
        }

        if t > config.warmup_steps {
            match replay.sample(config.scheme, config.agent.batch_size, &mut replay_rng) {
                Ok(batch) => {
                    let mut dr = seeded(density_rng.random());
                    let stats = agent.update(&batch, Some(&pair), &mut agent_rng, &mut dr)?;
                    critic_loss.push(stats.critic_loss);
                    if let Some(a) = stats.actor {
                        actor_loss.push(a.actor_loss);
                        kl.push_opt(a.kl);
                        elbo_mu.push_opt(a.elbo_mu);
                        elbo_pi.push_opt(a.elbo_pi);
                    }
                }
                Err(ReplayError::NoEligible(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }

        if t % config.eval_every == 0 {
            let ret = evaluate(&agent, config.env, config.eval_episodes, eval_seed)?;
            rows.push(MetricsRow {
                step: t,
                episode,
                eval_return: ret,
                actor_loss: actor_loss.take(),
                critic_loss: critic_loss.take(),
                elbo_mu: elbo_mu.take(),
                elbo_pi: elbo_pi.take(),
                kl_estimate: kl.take(),
            });
        }
    }
    Ok(TrainOutcome {
        rows,
        agent,
        episodes: episode - 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Algorithm;

    fn short(alg: Algorithm, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::new(EnvKind::Pendulum, AgentConfig::new(alg), seed);
        c.total_steps = 600;
        c.warmup_steps = 400;
        c.eval_every = 200;
        c.eval_episodes = 1;
        c.agent.batch_size = 16;
        c
    }

    #[test]
    fn zero_steps_give_no_rows() {
        let mut c = short(Algorithm::Ddpg, 0);
        c.total_steps = 0;
        assert!(train(&c).unwrap().rows.is_empty());
    }

    #[test]
    fn rows_are_reproducible() {
        for alg in Algorithm::ALL {
            let a = train(&short(alg, 3)).unwrap();
            let b = train(&short(alg, 3)).unwrap();
            assert_eq!(a.rows, b.rows);
            assert_eq!(a.rows.len(), 3);
            assert!(a.rows[2].kl_estimate.is_some(), "{alg}");
        }
    }

    #[test]
    fn mismatched_feature_dims_are_rejected() {
        let mut c = short(Algorithm::Sac, 0);
        c.density.feature_dim = 3;
        assert!(matches!(c.validate(), Err(TrainError::Config(_))));
    }
}
