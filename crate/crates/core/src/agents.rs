//! DDPG, TD3 and SAC updaters with the optional state-distribution penalty.
//!
//! The actor objective is `−Q(s, π(s)) + λ·K̂` (SAC: `α·log π − Q + λ·K̂`)
//! where `K̂` is the density surrogate evaluated on the critic batch's states.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::envspace::EnvSpec;
use crate::numcore::{
    math, standard_normal, Activation, Adam, Bound, Mlp, Module, NumError, Tape, Tensor, Var,
    LOG_STD_MAX, LOG_STD_MIN,
};
use crate::replay::Batch;
use crate::statedensity::{kl_surrogate, DensityError, DensityPair, FeatureMap};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error("invalid agent config: {0}")]
    Config(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Ddpg,
    Td3,
    Sac,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ddpg, Algorithm::Td3, Algorithm::Sac];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ddpg => "ddpg",
            Algorithm::Td3 => "td3",
            Algorithm::Sac => "sac",
        }
    }

    fn twin(self) -> bool {
        !matches!(self, Algorithm::Ddpg)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ddpg" => Ok(Algorithm::Ddpg),
            "td3" => Ok(Algorithm::Td3),
            "sac" => Ok(Algorithm::Sac),
            _ => Err(AgentError::Config("unknown algorithm")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Exploration noise std as a fraction of each action dimension's range.
    pub explore_sigma: f64,
    /// Enables the density penalty in the actor objective.
    pub statekl: bool,
    pub lambda: f64,
    pub hidden: usize,
    pub feature_dim: usize,
    pub batch_size: usize,
    pub policy_delay: u64,
    /// Target smoothing noise, as a fraction of the half range.
    pub target_noise_sigma: f64,
    pub target_noise_clip: f64,
    pub entropy_alpha: f64,
    pub auto_alpha: bool,
}

impl AgentConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            gamma: 0.99,
            tau: 0.005,
            lr_actor: if algorithm == Algorithm::Ddpg {
                1e-4
            } else {
                3e-4
            },
            lr_critic: 1e-3,
            explore_sigma: 0.1,
            statekl: false,
            lambda: 0.0,
            hidden: 64,
            feature_dim: 8,
            batch_size: 128,
            policy_delay: 2,
            target_noise_sigma: 0.2,
            target_noise_clip: 0.5,
            entropy_alpha: 0.2,
            auto_alpha: false,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(AgentError::Config("gamma must lie in (0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(AgentError::Config("tau must lie in (0, 1]"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(AgentError::Config("lambda must be finite and non-negative"));
        }
        if self.explore_sigma < 0.0 || self.lr_actor < 0.0 || self.lr_critic < 0.0 {
            return Err(AgentError::Config("rates and noise must be non-negative"));
        }
        if self.hidden == 0
            || self.feature_dim == 0
            || self.batch_size == 0
            || self.policy_delay == 0
        {
            return Err(AgentError::Config("sizes must be positive"));
        }
        Ok(())
    }
}

/// `r + γ·(1 − done)·q_next`.
pub fn td_target(reward: f64, gamma: f64, done: f64, q_next: f64) -> f64 {
    reward + gamma * (1.0 - done) * q_next
}

/// `target ← (1 − τ)·target + τ·live`.
pub fn polyak_update<M: Module>(live: &M, target: &mut M, tau: f64) {
    for (t, l) in target.parameters_mut().into_iter().zip(live.parameters()) {
        assert_eq!(
            t.shape(),
            l.shape(),
            "polyak needs shape-matched parameters"
        );
        for (x, y) in t.data_mut().iter_mut().zip(l.data()) {
            *x = (1.0 - tau) * *x + tau * y;
        }
    }
}

/// Shared relu trunk with an action head and a tanh-bounded feature head.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    trunk: Mlp,
    action_head: Mlp,
    feature_head: Mlp,
    action_dim: usize,
    stochastic: bool,
    mid: Vec<f64>,
    half: Vec<f64>,
}

/// Tape nodes of one policy forward pass.
pub struct PolicyGraph {
    pub bound: Bound,
    pub trunk: Var,
    pub head: Var,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(
        spec: &EnvSpec,
        hidden: usize,
        feature_dim: usize,
        stochastic: bool,
        rng: &mut R,
    ) -> Self {
        let a = spec.action_dim;
        let trunk = Mlp::new(
            &[spec.state_dim, hidden, hidden],
            Activation::Relu,
            Activation::Relu,
            rng,
        );
        let head_out = if stochastic { 2 * a } else { a };
        let mut action_head = Mlp::new(
            &[hidden, head_out],
            Activation::Linear,
            Activation::Linear,
            rng,
        );
        action_head.init_last_layer(3e-3, rng);
        let feature_head = Mlp::new(
            &[hidden, feature_dim],
            Activation::Linear,
            Activation::Tanh,
            rng,
        );
        let mid = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(l, h)| 0.5 * (l + h))
            .collect();
        let half = spec
            .action_low
            .iter()
            .zip(&spec.action_high)
            .map(|(l, h)| 0.5 * (h - l))
            .collect();
        Self {
            trunk,
            action_head,
            feature_head,
            action_dim: a,
            stochastic,
            mid,
            half,
        }
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    pub fn action_head(&self) -> &Mlp {
        &self.action_head
    }

    pub fn feature_head(&self) -> &Mlp {
        &self.feature_head
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn is_stochastic(&self) -> bool {
        self.stochastic
    }

    fn trunk_params(&self) -> usize {
        self.trunk.parameters().len()
    }

    /// Binds all parameters and records trunk and action-head outputs.
    pub fn graph(&self, tape: &mut Tape, states: Var) -> Result<PolicyGraph, NumError> {
        let bound = self.bind(tape);
        let nt = self.trunk_params();
        let nh = self.action_head.parameters().len();
        let trunk = self.trunk.apply(tape, &bound.0[..nt], states)?;
        let head = self.action_head.apply(tape, &bound.0[nt..nt + nh], trunk)?;
        Ok(PolicyGraph { bound, trunk, head })
    }

    /// Features from an already recorded trunk.
    pub fn features_from(&self, tape: &mut Tape, g: &PolicyGraph) -> Result<Var, NumError> {
        let start = self.trunk_params() + self.action_head.parameters().len();
        self.feature_head.apply(tape, &g.bound.0[start..], g.trunk)
    }

    /// `mid + half·tanh(pre)` on the tape.
    pub fn squash_on(&self, tape: &mut Tape, pre: Var) -> Result<Var, NumError> {
        let (n, a) = tape.shape(pre);
        let t = tape.tanh(pre);
        let half = tape.constant(n, a, self.half.repeat(n))?;
        let scaled = tape.mul(t, half)?;
        let mid = tape.constant(1, a, self.mid.clone())?;
        tape.add_bias(scaled, mid)
    }

    fn squash(&self, pre: &[f64]) -> Vec<f64> {
        pre.iter()
            .enumerate()
            .map(|(i, &u)| {
                let j = i % self.action_dim;
                self.mid[j] + self.half[j] * math::tanh(u)
            })
            .collect()
    }

    fn head_forward(&self, states: &Tensor) -> Result<Tensor, NumError> {
        let h = self.trunk.forward(states)?;
        self.action_head.forward(&h)
    }

    /// Deterministic action (SAC: squashed mean) for each state row.
    pub fn mean_action(&self, states: &Tensor) -> Result<Tensor, NumError> {
        let head = self.head_forward(states)?;
        let n = head.rows();
        let a = self.action_dim;
        let pre: Vec<f64> = if self.stochastic {
            (0..n).flat_map(|i| head.row(i)[..a].to_vec()).collect()
        } else {
            head.into_data()
        };
        Tensor::matrix(n, a, self.squash(&pre))
    }

    /// Squashed-Gaussian sample and its log-density, graph-free.
    pub fn sample(&self, states: &Tensor, eps: &[f64]) -> Result<(Tensor, Vec<f64>), NumError> {
        assert!(self.stochastic, "sampling needs a stochastic policy");
        let head = self.head_forward(states)?;
        let n = head.rows();
        let a = self.action_dim;
        let mut acts = Vec::with_capacity(n * a);
        let mut logp = Vec::with_capacity(n);
        for i in 0..n {
            let row = head.row(i);
            let mut lp = 0.0;
            for j in 0..a {
                let ls = row[a + j].clamp(LOG_STD_MIN, LOG_STD_MAX);
                let e = eps[i * a + j];
                let u = row[j] + math::exp(ls) * e;
                acts.push(self.mid[j] + self.half[j] * math::tanh(u));
                lp += -0.5 * e * e - ls - 0.5 * math::LN_2PI - log_squash_jacobian(u, self.half[j]);
            }
            logp.push(lp);
        }
        Ok((Tensor::matrix(n, a, acts)?, logp))
    }

    /// Records a squashed-Gaussian sample and its per-row log-density.
    fn sample_on(&self, tape: &mut Tape, head: Var, eps: Vec<f64>) -> Result<(Var, Var), NumError> {
        let (n, _) = tape.shape(head);
        let a = self.action_dim;
        let mean = tape.slice_cols(head, 0, a)?;
        let log_std = tape.slice_cols(head, a, a)?;
        let log_std = tape.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
        let std = tape.exp(log_std);
        let mut consts = Vec::with_capacity(n * a);
        for i in 0..n {
            for j in 0..a {
                let e = eps[i * a + j];
                consts.push(
                    -0.5 * e * e
                        - 0.5 * math::LN_2PI
                        - 2.0 * core::f64::consts::LN_2
                        - math::ln(self.half[j]),
                );
            }
        }
        let noise = tape.constant(n, a, eps)?;
        let spread = tape.mul(std, noise)?;
        let u = tape.add(mean, spread)?;
        let action = self.squash_on(tape, u)?;
        // log(1 − tanh²u) = 2·(ln 2 − u − softplus(−2u))
        let m2u = tape.scale(u, -2.0);
        let sp = tape.softplus(m2u);
        let jac = tape.add(u, sp)?;
        let jac = tape.scale(jac, 2.0);
        let c = tape.constant(n, a, consts)?;
        let lp = tape.sub(c, log_std)?;
        let lp = tape.add(lp, jac)?;
        let logp = tape.row_sum(lp);
        Ok((action, logp))
    }
}

/// `ln(half·(1 − tanh²u))`, computed stably.
fn log_squash_jacobian(u: f64, half: f64) -> f64 {
    2.0 * (core::f64::consts::LN_2 - u - math::softplus(-2.0 * u)) + math::ln(half)
}

impl Module for PolicyNet {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.trunk.parameters();
        p.extend(self.action_head.parameters());
        p.extend(self.feature_head.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.trunk.parameters_mut();
        p.extend(self.action_head.parameters_mut());
        p.extend(self.feature_head.parameters_mut());
        p
    }
}

impl FeatureMap for PolicyNet {
    fn feature_dim(&self) -> usize {
        self.feature_head.output_dim()
    }

    fn features_on(&self, tape: &mut Tape, states: Var) -> Result<(Var, Bound), NumError> {
        let g = self.graph(tape, states)?;
        let f = self.features_from(tape, &g)?;
        Ok((f, g.bound))
    }

    fn features(&self, states: &Tensor) -> Result<Tensor, NumError> {
        let h = self.trunk.forward(states)?;
        self.feature_head.forward(&h)
    }
}

fn critic_net<R: Rng + ?Sized>(spec: &EnvSpec, hidden: usize, rng: &mut R) -> Mlp {
    let mut q = Mlp::new(
        &[spec.state_dim + spec.action_dim, hidden, hidden, 1],
        Activation::Relu,
        Activation::Linear,
        rng,
    );
    q.init_last_layer(3e-3, rng);
    q
}

fn concat_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, ca) = a.dims2();
    let cb = b.cols();
    let mut out = Vec::with_capacity(n * (ca + cb));
    for i in 0..n {
        out.extend_from_slice(a.row(i));
        out.extend_from_slice(b.row(i));
    }
    Tensor::matrix(n, ca + cb, out).expect("row counts agree")
}

/// Loss values from one call to [`Agent::update`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor: Option<ActorStats>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ActorStats {
    pub actor_loss: f64,
    /// `K̂` on the actor batch, when both density models are warm.
    pub kl: Option<f64>,
    pub elbo_mu: Option<f64>,
    pub elbo_pi: Option<f64>,
}

/// Which terms of the actor objective to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActorTerms {
    /// The configured objective.
    Full,
    /// Only the value term, as if the penalty were off.
    ValueOnly,
    /// Only `K̂` with unit weight.
    KlOnly,
}

/// Off-policy actor-critic agent.
#[derive(Debug, Clone)]
pub struct Agent {
    config: AgentConfig,
    explore_std: Vec<f64>,
    low: Vec<f64>,
    high: Vec<f64>,
    half: Vec<f64>,
    actor: PolicyNet,
    actor_target: Option<PolicyNet>,
    critics: Vec<Mlp>,
    critic_targets: Vec<Mlp>,
    actor_opt: Adam,
    critic_opts: Vec<Adam>,
    log_alpha: Tensor,
    alpha_opt: Adam,
    critic_steps: u64,
    actor_steps: u64,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        spec: &EnvSpec,
        config: AgentConfig,
        rng: &mut R,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        let alg = config.algorithm;
        let actor = PolicyNet::new(
            spec,
            config.hidden,
            config.feature_dim,
            alg == Algorithm::Sac,
            rng,
        );
        let n_critics = if alg.twin() { 2 } else { 1 };
        let critics: Vec<Mlp> = (0..n_critics)
            .map(|_| critic_net(spec, config.hidden, rng))
            .collect();
        let actor_target = (alg != Algorithm::Sac).then(|| actor.clone());
        let range = spec.action_range();
        Ok(Self {
            explore_std: range.iter().map(|r| config.explore_sigma * r).collect(),
            low: spec.action_low.clone(),
            high: spec.action_high.clone(),
            half: range.iter().map(|r| 0.5 * r).collect(),
            actor_opt: Adam::new(config.lr_actor),
            critic_opts: (0..n_critics)
                .map(|_| Adam::new(config.lr_critic))
                .collect(),
            alpha_opt: Adam::new(config.lr_actor),
            log_alpha: Tensor::scalar(math::ln(config.entropy_alpha.max(1e-12))).with_grad(),
            critic_targets: critics.clone(),
            critics,
            actor_target,
            actor,
            config,
            critic_steps: 0,
            actor_steps: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn actor(&self) -> &PolicyNet {
        &self.actor
    }

    pub fn actor_mut(&mut self) -> &mut PolicyNet {
        &mut self.actor
    }

    pub fn actor_target(&self) -> Option<&PolicyNet> {
        self.actor_target.as_ref()
    }

    pub fn critics(&self) -> &[Mlp] {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut [Mlp] {
        &mut self.critics
    }

    pub fn critic_targets(&self) -> &[Mlp] {
        &self.critic_targets
    }

    pub fn critic_steps(&self) -> u64 {
        self.critic_steps
    }

    pub fn actor_steps(&self) -> u64 {
        self.actor_steps
    }

    pub fn alpha(&self) -> f64 {
        math::exp(self.log_alpha.item())
    }

    /// FNV checksum over all live and target parameters.
    pub fn checksum(&self) -> u64 {
        let mut chunks: Vec<&[f64]> = self
            .actor
            .parameters()
            .into_iter()
            .map(|p| p.data())
            .collect();
        if let Some(t) = &self.actor_target {
            chunks.extend(t.parameters().into_iter().map(|p| p.data()));
        }
        for c in self.critics.iter().chain(&self.critic_targets) {
            chunks.extend(c.parameters().into_iter().map(|p| p.data()));
        }
        chunks.push(self.log_alpha.data());
        crate::rng::checksum_f64(chunks)
    }

    /// Action for one state. With `explore`, adds clipped Gaussian noise
    /// (SAC: samples its squashed Gaussian). Always inside the bounds.
    pub fn act<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        explore: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>, AgentError> {
        let s = Tensor::matrix(1, state.len(), state.to_vec())?;
        let mut a = if explore && self.actor.is_stochastic() {
            let eps = standard_normal(rng, self.actor.action_dim());
            self.actor.sample(&s, &eps)?.0.into_data()
        } else {
            self.actor.mean_action(&s)?.into_data()
        };
        if explore && !self.actor.is_stochastic() {
            for (x, sd) in a.iter_mut().zip(&self.explore_std) {
                let n: f64 = rng.sample(rand_distr::StandardNormal);
                *x += sd * n;
            }
        }
        for ((x, lo), hi) in a.iter_mut().zip(&self.low).zip(&self.high) {
            *x = x.clamp(*lo, *hi);
        }
        Ok(a)
    }

    fn q_values(critic: &Mlp, states: &Tensor, actions: &Tensor) -> Result<Vec<f64>, NumError> {
        Ok(critic.forward(&concat_rows(states, actions))?.into_data())
    }

    /// Bootstrapped targets `y` for a batch. `rng` drives TD3 smoothing
    /// noise and SAC next-action samples.
    pub fn critic_targets_for<R: Rng + ?Sized>(
        &self,
        batch: &Batch,
        rng: &mut R,
    ) -> Result<Vec<f64>, AgentError> {
        let n = batch.len();
        let a = self.actor.action_dim();
        let gamma = self.config.gamma;
        let q_next: Vec<f64> = match self.config.algorithm {
            Algorithm::Ddpg => {
                let target = self
                    .actor_target
                    .as_ref()
                    .expect("ddpg keeps a target actor");
                let next_a = target.mean_action(&batch.next_states)?;
                Self::q_values(&self.critic_targets[0], &batch.next_states, &next_a)?
            }
            Algorithm::Td3 => {
                let target = self
                    .actor_target
                    .as_ref()
                    .expect("td3 keeps a target actor");
                let mut next_a = target.mean_action(&batch.next_states)?;
                let noise = standard_normal(rng, n * a);
                for (i, x) in next_a.data_mut().iter_mut().enumerate() {
                    let j = i % a;
                    let clip = self.config.target_noise_clip * self.half[j];
                    let e = (self.config.target_noise_sigma * self.half[j] * noise[i])
                        .clamp(-clip, clip);
                    *x = (*x + e).clamp(self.low[j], self.high[j]);
                }
                let q1 = Self::q_values(&self.critic_targets[0], &batch.next_states, &next_a)?;
                let q2 = Self::q_values(&self.critic_targets[1], &batch.next_states, &next_a)?;
                q1.iter().zip(&q2).map(|(x, y)| x.min(*y)).collect()
            }
            Algorithm::Sac => {
                let eps = standard_normal(rng, n * a);
                let (next_a, logp) = self.actor.sample(&batch.next_states, &eps)?;
                let q1 = Self::q_values(&self.critic_targets[0], &batch.next_states, &next_a)?;
                let q2 = Self::q_values(&self.critic_targets[1], &batch.next_states, &next_a)?;
                let alpha = self.alpha();
                q1.iter()
                    .zip(&q2)
                    .zip(&logp)
                    .map(|((x, y), lp)| x.min(*y) - alpha * lp)
                    .collect()
            }
        };
        Ok((0..n)
            .map(|i| td_target(batch.rewards[i], gamma, batch.dones[i], q_next[i]))
            .collect())
    }

    /// One Adam step of every critic on the squared TD error. Returns the
    /// loss summed over critics.
    pub fn critic_update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        rng: &mut R,
    ) -> Result<f64, AgentError> {
        let y = self.critic_targets_for(batch, rng)?;
        let n = batch.len();
        let x = concat_rows(&batch.states, &batch.actions);
        let mut total = 0.0;
        for (critic, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let mut tape = Tape::new();
            let xv = tape.leaf(&x);
            let (q, bound) = critic.forward_on(&mut tape, xv)?;
            let yv = tape.constant(n, 1, y.clone())?;
            let d = tape.sub(q, yv)?;
            let sq = tape.square(d);
            let loss = tape.mean(sq);
            total += tape.item(loss);
            tape.backward(loss)?;
            critic.zero_grad();
            critic.pull_grads(&tape, &bound);
            opt.step(critic.parameters_mut())?;
        }
        self.critic_steps += 1;
        Ok(total)
    }

    /// Records the actor objective for `states` and runs backward. Leaves
    /// the gradients in the actor's `grad` buffers without stepping.
    pub fn actor_gradient<R: Rng + ?Sized, D: Rng + ?Sized>(
        &mut self,
        states: &Tensor,
        density: Option<&DensityPair>,
        terms: ActorTerms,
        rng: &mut R,
        density_rng: &mut D,
    ) -> Result<ActorStats, AgentError> {
        let n = states.rows();
        let mut tape = Tape::new();
        let s = tape.leaf(states);
        let g = self.actor.graph(&mut tape, s)?;
        let feats = self.actor.features_from(&mut tape, &g)?;

        let value_loss = match self.config.algorithm {
            Algorithm::Ddpg | Algorithm::Td3 => {
                let a = self.actor.squash_on(&mut tape, g.head)?;
                let x = tape.concat_cols(s, a)?;
                let b = self.critics[0].bind_frozen(&mut tape);
                let q = self.critics[0].apply(&mut tape, &b.0, x)?;
                let m = tape.mean(q);
                tape.neg(m)
            }
            Algorithm::Sac => {
                let eps = standard_normal(rng, n * self.actor.action_dim());
                let (a, logp) = self.actor.sample_on(&mut tape, g.head, eps)?;
                let x = tape.concat_cols(s, a)?;
                let b1 = self.critics[0].bind_frozen(&mut tape);
                let q1 = self.critics[0].apply(&mut tape, &b1.0, x)?;
                let b2 = self.critics[1].bind_frozen(&mut tape);
                let q2 = self.critics[1].apply(&mut tape, &b2.0, x)?;
                let q = tape.minimum(q1, q2)?;
                let ent = tape.scale(logp, self.alpha());
                let d = tape.sub(ent, q)?;
                tape.mean(d)
            }
        };

        let mut stats = ActorStats::default();
        let kl = match density {
            Some(pair) if pair.is_warm() => {
                let term = kl_surrogate(&mut tape, pair, feats, density_rng)?;
                stats.kl = Some(tape.item(term.kl));
                stats.elbo_mu = Some(term.elbo_mu);
                stats.elbo_pi = Some(term.elbo_pi);
                Some(term.kl)
            }
            Some(pair) if self.config.statekl && terms != ActorTerms::ValueOnly => {
                pair.check_warm()?;
                None
            }
            None if self.config.statekl && terms != ActorTerms::ValueOnly => {
                return Err(DensityError::Cold("density pair").into());
            }
            _ => None,
        };

        let loss = match (terms, kl) {
            (ActorTerms::KlOnly, Some(k)) => k,
            (ActorTerms::KlOnly, None) => return Err(DensityError::Cold("density pair").into()),
            (ActorTerms::Full, Some(k)) if self.config.statekl => {
                let pen = tape.scale(k, self.config.lambda);
                tape.add(value_loss, pen)?
            }
            _ => value_loss,
        };
        stats.actor_loss = tape.item(loss);
        tape.backward(loss)?;
        self.actor.zero_grad();
        self.actor.pull_grads(&tape, &g.bound);
        Ok(stats)
    }

    /// One actor step on `states` (the critic batch's states).
    pub fn actor_update<R: Rng + ?Sized, D: Rng + ?Sized>(
        &mut self,
        states: &Tensor,
        density: Option<&DensityPair>,
        rng: &mut R,
        density_rng: &mut D,
    ) -> Result<ActorStats, AgentError> {
        let stats = self.actor_gradient(states, density, ActorTerms::Full, rng, density_rng)?;
        self.actor_opt.step(self.actor.parameters_mut())?;
        if self.config.algorithm == Algorithm::Sac && self.config.auto_alpha {
            self.alpha_step(states, rng)?;
        }
        self.actor_steps += 1;
        Ok(stats)
    }

    fn alpha_step<R: Rng + ?Sized>(
        &mut self,
        states: &Tensor,
        rng: &mut R,
    ) -> Result<(), AgentError> {
        let eps = standard_normal(rng, states.rows() * self.actor.action_dim());
        let (_, logp) = self.actor.sample(states, &eps)?;
        let target_entropy = -(self.actor.action_dim() as f64);
        let mean_lp = logp.iter().sum::<f64>() / logp.len().max(1) as f64;
        // d/d log_alpha of −log_alpha·(log π + target_entropy)
        self.log_alpha.zero_grad();
        self.log_alpha
            .accumulate_grad(&[-(mean_lp + target_entropy)]);
        self.alpha_opt.step(vec![&mut self.log_alpha])?;
        Ok(())
    }

    fn update_targets(&mut self) {
        let tau = self.config.tau;
        for (live, target) in self.critics.iter().zip(&mut self.critic_targets) {
            polyak_update(live, target, tau);
        }
        if let Some(t) = &mut self.actor_target {
            polyak_update(&self.actor, t, tau);
        }
    }

    /// Critic step, then the actor step and target updates on the
    /// algorithm's cadence (TD3: every `policy_delay` critic steps).
    pub fn update<R: Rng + ?Sized, D: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        density: Option<&DensityPair>,
        rng: &mut R,
        density_rng: &mut D,
    ) -> Result<UpdateStats, AgentError> {
        let critic_loss = self.critic_update(batch, rng)?;
        let due = match self.config.algorithm {
            Algorithm::Td3 => self.critic_steps.is_multiple_of(self.config.policy_delay),
            _ => true,
        };
        let mut stats = UpdateStats {
            critic_loss,
            actor: None,
        };
        if due {
            stats.actor = Some(self.actor_update(&batch.states, density, rng, density_rng)?);
            self.update_targets();
        }
        Ok(stats)
    }
}
