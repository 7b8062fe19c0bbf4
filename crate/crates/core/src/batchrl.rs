//! Fixed-batch learning: batch generation, BCQ-lite, and the offline trainer.
//!
//! [`BatchTrainer`] owns no environment; evaluation happens outside it
//! through [`BatchTrainer::policy_action`].

use alloc::boxed::Box;
#[cfg(test)]
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use crate::agents::{polyak_update, td_target, Agent, AgentConfig, AgentError, Algorithm};
use crate::envspace::{Env, EnvKind, EnvSpec};
use crate::metrics::{Mean, MetricsRow};
use crate::numcore::{
    standard_normal, Activation, Adam, Mlp, Module, NumError, Tape, Tensor, Var, LOG_STD_MAX,
    LOG_STD_MIN,
};
use crate::replay::{
    decode_transitions, encode_transitions, snapshot_states, Batch, Provenance, ReplayBuffer,
    ReplayError, SamplingScheme, Transition,
};
use crate::rng::{derive_seed, seeded, stream};
use crate::statedensity::{kl_surrogate, DensityConfig, DensityError, DensityPair, FeatureMap};
use crate::train::{evaluate_with, train_observed, TrainConfig, TrainError, TrainOutcome};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BatchError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("action generator is cold: train it before selecting actions")]
    ColdGenerator,
    #[error("invalid batch config: {0}")]
    Config(&'static str),
}

/// Immutable, chronologically ordered transitions with their origin.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedBatch {
    state_dim: usize,
    action_dim: usize,
    provenance: Provenance,
    source_checksum: u64,
    transitions: Vec<Transition>,
}

impl FixedBatch {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        provenance: Provenance,
        source_checksum: u64,
        transitions: Vec<Transition>,
    ) -> Result<Self, BatchError> {
        for w in transitions.windows(2) {
            if w[1].episode_id < w[0].episode_id {
                return Err(ReplayError::EpisodeOrder {
                    current: w[0].episode_id,
                    got: w[1].episode_id,
                }
                .into());
            }
        }
        for t in &transitions {
            if t.state.len() != state_dim
                || t.next_state.len() != state_dim
                || t.action.len() != action_dim
            {
                return Err(BatchError::Config(
                    "transition dims do not match the batch header",
                ));
            }
        }
        Ok(Self {
            state_dim,
            action_dim,
            provenance,
            source_checksum,
            transitions,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn source_checksum(&self) -> u64 {
        self.source_checksum
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_transitions(
            self.state_dim,
            self.action_dim,
            self.provenance,
            self.source_checksum,
            &self.transitions,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BatchError> {
        let (h, ts) = decode_transitions(bytes)?;
        Self::new(
            h.state_dim,
            h.action_dim,
            h.provenance,
            h.source_checksum,
            ts,
        )
    }

    /// Transitions from the last `episodes` episodes of the batch.
    pub fn tail(&self, episodes: u64) -> &[Transition] {
        let Some(last) = self.transitions.last() else {
            return &[];
        };
        let cut = last.episode_id.saturating_sub(episodes);
        let start = self.transitions.partition_point(|t| t.episode_id <= cut);
        &self.transitions[start..]
    }

    /// Mean undiscounted return per episode. A trailing episode cut short
    /// by the batch size is left out.
    pub fn mean_episode_return(&self) -> Option<f64> {
        let mut episodes: Vec<(f64, usize, bool)> = Vec::new();
        let mut last_id = None;
        for t in &self.transitions {
            if last_id != Some(t.episode_id) {
                episodes.push((0.0, 0, false));
                last_id = Some(t.episode_id);
            }
            let e = episodes.last_mut().expect("pushed above");
            e.0 += t.reward;
            e.1 += 1;
            e.2 |= t.done;
        }
        let longest = episodes.iter().map(|e| e.1).max()?;
        if episodes.len() > 1 {
            if let Some(&(_, len, terminal)) = episodes.last() {
                if len < longest && !terminal {
                    episodes.pop();
                }
            }
        }
        Some(episodes.iter().map(|e| e.0).sum::<f64>() / episodes.len() as f64)
    }

    fn to_replay(&self) -> ReplayBuffer {
        let mut r = ReplayBuffer::new(
            self.transitions.len().max(1),
            self.state_dim,
            self.action_dim,
        );
        for t in &self.transitions {
            r.push(t.clone())
                .expect("batch invariants match the buffer's");
        }
        r
    }
}

/// Rolls out `agent` with exploration noise for exactly `n` transitions.
pub fn generate_expert_batch(
    agent: &Agent,
    kind: EnvKind,
    n: usize,
    seed: u64,
) -> Result<FixedBatch, BatchError> {
    use crate::rng::stream as tag;
    let mut env = kind.make();
    let spec = env.spec().clone();
    let mut env_rng = stream(seed, tag::ENV);
    let mut explore = stream(seed, tag::EXPLORE);
    let mut out = Vec::with_capacity(n);
    let mut episode = 1;
    let mut step_id = 0;
    let mut obs = env.reset(env_rng.random());
    while out.len() < n {
        let action = agent.act(&obs, true, &mut explore)?;
        let step = env.step(&action).map_err(TrainError::from)?;
        out.push(Transition {
            state: obs,
            action,
            reward: step.reward,
            next_state: step.observation.clone(),
            done: step.terminated,
            episode_id: episode,
            step_id,
        });
        step_id += 1;
        if step.done() {
            episode += 1;
            step_id = 0;
            obs = env.reset(env_rng.random());
        } else {
            obs = step.observation;
        }
    }
    FixedBatch::new(
        spec.state_dim,
        spec.action_dim,
        Provenance::Expert,
        agent.actor().checksum(),
        out,
    )
}

/// Runs one online training job and keeps every transition it stored.
pub fn generate_transient_batch(
    config: &TrainConfig,
) -> Result<(FixedBatch, TrainOutcome), BatchError> {
    let mut all = Vec::new();
    let outcome = train_observed(config, &mut |t| all.push(t.clone()))?;
    let spec = config.env.make().spec().clone();
    let batch = FixedBatch::new(
        spec.state_dim,
        spec.action_dim,
        Provenance::Transient,
        outcome.agent.actor().checksum(),
        all,
    )?;
    Ok((batch, outcome))
}

// ---- BCQ-lite -------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct BcqConfig {
    pub gamma: f64,
    pub tau: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_vae: f64,
    pub hidden: usize,
    pub feature_dim: usize,
    pub n_candidates: usize,
    /// Perturbation limit as a fraction of each dimension's action range.
    pub phi: f64,
    /// Action-VAE latent size; `None` means twice the action dimension.
    pub latent_dim: Option<usize>,
    pub statekl: bool,
    pub lambda: f64,
}

impl Default for BcqConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            lr_actor: 1e-3,
            lr_critic: 1e-3,
            lr_vae: 1e-3,
            hidden: 64,
            feature_dim: 8,
            n_candidates: 10,
            phi: 0.05,
            latent_dim: None,
            statekl: false,
            lambda: 0.0,
        }
    }
}

/// Prior samples for the action decoder are clipped to this magnitude.
pub const LATENT_CLIP: f64 = 0.5;

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

fn repeat_rows(t: &Tensor, k: usize) -> Tensor {
    let (n, c) = t.dims2();
    let mut out = Vec::with_capacity(n * k * c);
    for i in 0..n {
        for _ in 0..k {
            out.extend_from_slice(t.row(i));
        }
    }
    Tensor::matrix(n * k, c, out).expect("sizes agree")
}

/// Conditional VAE over actions: encodes `(s, a)`, decodes `a | s, z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVae {
    encoder: Mlp,
    decoder: Mlp,
    latent_dim: usize,
    mid: Vec<f64>,
    half: Vec<f64>,
    trained_steps: u64,
}

impl ActionVae {
    fn new<R: Rng + ?Sized>(spec: &EnvSpec, hidden: usize, latent_dim: usize, rng: &mut R) -> Self {
        let (s, a) = (spec.state_dim, spec.action_dim);
        Self {
            encoder: Mlp::new(
                &[s + a, hidden, hidden, 2 * latent_dim],
                Activation::Relu,
                Activation::Linear,
                rng,
            ),
            decoder: Mlp::new(
                &[s + latent_dim, hidden, hidden, a],
                Activation::Relu,
                Activation::Tanh,
                rng,
            ),
            latent_dim,
            mid: mid_of(spec),
            half: half_of(spec),
            trained_steps: 0,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn is_warm(&self) -> bool {
        self.trained_steps > 0
    }

    pub fn decoder_mut(&mut self) -> &mut Mlp {
        &mut self.decoder
    }

    /// Clipped prior draws, `n * latent_dim` values.
    pub fn prior<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        standard_normal(rng, n * self.latent_dim)
            .into_iter()
            .map(|z| z.clamp(-LATENT_CLIP, LATENT_CLIP))
            .collect()
    }

    pub fn decode(&self, states: &Tensor, z: &[f64]) -> Result<Tensor, NumError> {
        let zt = Tensor::matrix(states.rows(), self.latent_dim, z.to_vec())?;
        let mut y = self.decoder.forward(&concat_rows(states, &zt))?;
        let a = self.half.len();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v = self.mid[i % a] + self.half[i % a] * *v;
        }
        Ok(y)
    }

    /// One step on reconstruction MSE plus half the latent KL. Returns the loss.
    fn train_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        opt: &mut Adam,
        rng: &mut R,
    ) -> Result<f64, NumError> {
        let n = batch.len();
        let l = self.latent_dim;
        let a = self.half.len();
        let mut tape = Tape::new();
        let s = tape.leaf(&batch.states);
        let act = tape.leaf(&batch.actions);
        let bound = self.bind(&mut tape);
        let ne = self.encoder.parameters().len();
        let x = tape.concat_cols(s, act)?;
        let h = self.encoder.apply(&mut tape, &bound.0[..ne], x)?;
        let mu = tape.slice_cols(h, 0, l)?;
        let log_std = tape.slice_cols(h, l, l)?;
        let log_std = tape.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
        let std = tape.exp(log_std);
        let eps = tape.constant(n, l, standard_normal(rng, n * l))?;
        let spread = tape.mul(std, eps)?;
        let z = tape.add(mu, spread)?;
        let dz = tape.concat_cols(s, z)?;
        let y = self.decoder.apply(&mut tape, &bound.0[ne..], dz)?;
        let half = tape.constant(n, a, self.half.repeat(n))?;
        let y = tape.mul(y, half)?;
        let mid = tape.constant(1, a, self.mid.clone())?;
        let recon = tape.add_bias(y, mid)?;
        let d = tape.sub(recon, act)?;
        let d = tape.square(d);
        let mse = tape.mean(d);
        let mu2 = tape.square(mu);
        let var = tape.square(std);
        let two_log = tape.scale(log_std, 2.0);
        let k = tape.add(mu2, var)?;
        let k = tape.sub(k, two_log)?;
        let k = tape.offset(k, -1.0);
        let k = tape.row_sum(k);
        let k = tape.mean(k);
        let k = tape.scale(k, 0.25);
        let loss = tape.add(mse, k)?;
        let value = tape.item(loss);
        tape.backward(loss)?;
        self.zero_grad();
        self.pull_grads(&tape, &bound);
        opt.step(self.parameters_mut())?;
        self.trained_steps += 1;
        Ok(value)
    }
}

impl Module for ActionVae {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.parameters();
        p.extend(self.decoder.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.parameters_mut();
        p.extend(self.decoder.parameters_mut());
        p
    }
}

fn mid_of(spec: &EnvSpec) -> Vec<f64> {
    spec.action_low
        .iter()
        .zip(&spec.action_high)
        .map(|(l, h)| 0.5 * (l + h))
        .collect()
}

fn half_of(spec: &EnvSpec) -> Vec<f64> {
    spec.action_low
        .iter()
        .zip(&spec.action_high)
        .map(|(l, h)| 0.5 * (h - l))
        .collect()
}

/// Perturbation network `ξ(s, a) ∈ [−Φ, Φ]` with a state trunk whose
/// feature head supplies `ψ(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbNet {
    trunk: Mlp,
    feature_head: Mlp,
    head: Mlp,
    phi: Vec<f64>,
    mid: Vec<f64>,
    half: Vec<f64>,
}

impl PerturbNet {
    fn new<R: Rng + ?Sized>(
        spec: &EnvSpec,
        hidden: usize,
        feature_dim: usize,
        phi: f64,
        rng: &mut R,
    ) -> Self {
        let a = spec.action_dim;
        Self {
            trunk: Mlp::new(
                &[spec.state_dim, hidden, hidden],
                Activation::Relu,
                Activation::Relu,
                rng,
            ),
            feature_head: Mlp::new(
                &[hidden, feature_dim],
                Activation::Linear,
                Activation::Tanh,
                rng,
            ),
            head: Mlp::new(
                &[hidden + a, hidden, a],
                Activation::Relu,
                Activation::Tanh,
                rng,
            ),
            phi: spec.action_range().iter().map(|r| phi * r).collect(),
            mid: mid_of(spec),
            half: half_of(spec),
        }
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// `clip(a + Φ·ξ(s, a))`, graph-free.
    pub fn perturb(&self, states: &Tensor, actions: &Tensor) -> Result<Tensor, NumError> {
        let h = self.trunk.forward(states)?;
        let xi = self.head.forward(&concat_rows(&h, actions))?;
        let a = self.phi.len();
        let mut out = actions.clone();
        for (i, (v, x)) in out.data_mut().iter_mut().zip(xi.data()).enumerate() {
            let j = i % a;
            *v = (*v + self.phi[j] * x)
                .clamp(self.mid[j] - self.half[j], self.mid[j] + self.half[j]);
        }
        Ok(out)
    }

    /// Records the perturbed actions and the features of `states`.
    fn graph(
        &self,
        tape: &mut Tape,
        states: Var,
        actions: Var,
    ) -> Result<(Var, Var, crate::numcore::Bound), NumError> {
        let (n, a) = tape.shape(actions);
        let bound = self.bind(tape);
        let nt = self.trunk.parameters().len();
        let nf = self.feature_head.parameters().len();
        let h = self.trunk.apply(tape, &bound.0[..nt], states)?;
        let feats = self.feature_head.apply(tape, &bound.0[nt..nt + nf], h)?;
        let x = tape.concat_cols(h, actions)?;
        let xi = self.head.apply(tape, &bound.0[nt + nf..], x)?;
        let phi = tape.constant(n, a, self.phi.repeat(n))?;
        let xi = tape.mul(xi, phi)?;
        let moved = tape.add(actions, xi)?;
        // Per-dimension clip through the normalized action.
        let neg_mid = tape.constant(1, a, self.mid.iter().map(|m| -m).collect())?;
        let centered = tape.add_bias(moved, neg_mid)?;
        let inv = tape.constant(
            n,
            a,
            self.half
                .iter()
                .map(|h| 1.0 / h)
                .collect::<Vec<_>>()
                .repeat(n),
        )?;
        let unit = tape.mul(centered, inv)?;
        let unit = tape.clamp(unit, -1.0, 1.0);
        let half = tape.constant(n, a, self.half.repeat(n))?;
        let scaled = tape.mul(unit, half)?;
        let mid = tape.constant(1, a, self.mid.clone())?;
        let out = tape.add_bias(scaled, mid)?;
        Ok((out, feats, bound))
    }
}

impl Module for PerturbNet {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.trunk.parameters();
        p.extend(self.feature_head.parameters());
        p.extend(self.head.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.trunk.parameters_mut();
        p.extend(self.feature_head.parameters_mut());
        p.extend(self.head.parameters_mut());
        p
    }
}

impl FeatureMap for PerturbNet {
    fn feature_dim(&self) -> usize {
        self.feature_head.output_dim()
    }

    fn features_on(
        &self,
        tape: &mut Tape,
        states: Var,
    ) -> Result<(Var, crate::numcore::Bound), NumError> {
        let bound = self.bind(tape);
        let nt = self.trunk.parameters().len();
        let nf = self.feature_head.parameters().len();
        let h = self.trunk.apply(tape, &bound.0[..nt], states)?;
        let f = self.feature_head.apply(tape, &bound.0[nt..nt + nf], h)?;
        Ok((f, bound))
    }

    fn features(&self, states: &Tensor) -> Result<Tensor, NumError> {
        self.feature_head.forward(&self.trunk.forward(states)?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BcqLosses {
    pub critic_loss: f64,
    pub vae_loss: f64,
    pub actor_loss: f64,
    pub kl: Option<f64>,
    pub elbo_mu: Option<f64>,
    pub elbo_pi: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BcqLiteAgent {
    config: BcqConfig,
    vae: ActionVae,
    perturb: PerturbNet,
    perturb_target: PerturbNet,
    critics: [Mlp; 2],
    critic_targets: [Mlp; 2],
    vae_opt: Adam,
    actor_opt: Adam,
    critic_opts: [Adam; 2],
}

impl BcqLiteAgent {
    pub fn new<R: Rng + ?Sized>(
        spec: &EnvSpec,
        config: BcqConfig,
        rng: &mut R,
    ) -> Result<Self, BatchError> {
        if config.n_candidates == 0 {
            return Err(BatchError::Config("n_candidates must be positive"));
        }
        if !(config.phi >= 0.0 && config.lambda >= 0.0) {
            return Err(BatchError::Config("phi and lambda must be non-negative"));
        }
        if !(config.gamma > 0.0 && config.gamma < 1.0 && config.tau > 0.0 && config.tau <= 1.0) {
            return Err(BatchError::Config(
                "gamma in (0, 1) and tau in (0, 1] required",
            ));
        }
        let latent = config.latent_dim.unwrap_or(2 * spec.action_dim);
        let vae = ActionVae::new(spec, config.hidden, latent, rng);
        let perturb = PerturbNet::new(spec, config.hidden, config.feature_dim, config.phi, rng);
        let q = |rng: &mut R| {
            let mut m = Mlp::new(
                &[
                    spec.state_dim + spec.action_dim,
                    config.hidden,
                    config.hidden,
                    1,
                ],
                Activation::Relu,
                Activation::Linear,
                rng,
            );
            m.init_last_layer(3e-3, rng);
            m
        };
        let critics = [q(rng), q(rng)];
        Ok(Self {
            vae_opt: Adam::new(config.lr_vae),
            actor_opt: Adam::new(config.lr_actor),
            critic_opts: [Adam::new(config.lr_critic), Adam::new(config.lr_critic)],
            perturb_target: perturb.clone(),
            critic_targets: critics.clone(),
            critics,
            perturb,
            vae,
            config,
        })
    }

    pub fn config(&self) -> &BcqConfig {
        &self.config
    }

    pub fn vae(&self) -> &ActionVae {
        &self.vae
    }

    pub fn vae_mut(&mut self) -> &mut ActionVae {
        &mut self.vae
    }

    pub fn perturb(&self) -> &PerturbNet {
        &self.perturb
    }

    pub fn perturb_mut(&mut self) -> &mut PerturbNet {
        &mut self.perturb
    }

    pub fn critics(&self) -> &[Mlp; 2] {
        &self.critics
    }

    pub fn critics_mut(&mut self) -> &mut [Mlp; 2] {
        &mut self.critics
    }

    pub fn checksum(&self) -> u64 {
        let mut chunks: Vec<&[f64]> = Vec::new();
        for m in [&self.perturb, &self.perturb_target] {
            chunks.extend(m.parameters().into_iter().map(|p| p.data()));
        }
        for c in self.critics.iter().chain(&self.critic_targets) {
            chunks.extend(c.parameters().into_iter().map(|p| p.data()));
        }
        chunks.extend(self.vae.parameters().into_iter().map(|p| p.data()));
        crate::rng::checksum_f64(chunks)
    }

    /// Perturbed decoded candidates for each state row: `n_candidates` rows
    /// per state, in state-major order.
    pub fn candidates<R: Rng + ?Sized>(
        &self,
        states: &Tensor,
        target: bool,
        rng: &mut R,
    ) -> Result<(Tensor, Tensor), NumError> {
        let k = self.config.n_candidates;
        let rep = repeat_rows(states, k);
        let z = self.vae.prior(rep.rows(), rng);
        let decoded = self.vae.decode(&rep, &z)?;
        let net = if target {
            &self.perturb_target
        } else {
            &self.perturb
        };
        Ok((rep.clone(), net.perturb(&rep, &decoded)?))
    }

    /// Highest-Q1 candidate; ties go to the lowest index.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>, BatchError> {
        if !self.vae.is_warm() {
            return Err(BatchError::ColdGenerator);
        }
        let s = Tensor::matrix(1, state.len(), state.to_vec())?;
        let (rep, cands) = self.candidates(&s, false, rng)?;
        let q = self.critics[0].forward(&concat_rows(&rep, &cands))?;
        Ok(cands.row(argmax_first(q.data())).to_vec())
    }

    fn critic_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        rng: &mut R,
    ) -> Result<f64, NumError> {
        let n = batch.len();
        let k = self.config.n_candidates;
        let (rep, cands) = self.candidates(&batch.next_states, true, rng)?;
        let x = concat_rows(&rep, &cands);
        let q1 = self.critic_targets[0].forward(&x)?;
        let q2 = self.critic_targets[1].forward(&x)?;
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let best = (0..k)
                    .map(|j| q1.data()[i * k + j].min(q2.data()[i * k + j]))
                    .fold(f64::NEG_INFINITY, f64::max);
                td_target(batch.rewards[i], self.config.gamma, batch.dones[i], best)
            })
            .collect();
        let sa = concat_rows(&batch.states, &batch.actions);
        let mut total = 0.0;
        for (critic, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let mut tape = Tape::new();
            let xv = tape.leaf(&sa);
            let (q, bound) = critic.forward_on(&mut tape, xv)?;
            let yv = tape.constant(n, 1, y.clone())?;
            let d = tape.sub(q, yv)?;
            let d = tape.square(d);
            let loss = tape.mean(d);
            total += tape.item(loss);
            tape.backward(loss)?;
            critic.zero_grad();
            critic.pull_grads(&tape, &bound);
            opt.step(critic.parameters_mut())?;
        }
        Ok(total)
    }

    /// Gradient of the perturbation objective `−Q1(s, ξ-perturbed a) + λ·K̂`
    /// left in the perturbation net's `grad` buffers.
    pub fn perturb_gradient<R: Rng + ?Sized, D: Rng + ?Sized>(
        &mut self,
        states: &Tensor,
        density: Option<&DensityPair>,
        rng: &mut R,
        density_rng: &mut D,
    ) -> Result<BcqLosses, BatchError> {
        let n = states.rows();
        let z = self.vae.prior(n, rng);
        let decoded = self.vae.decode(states, &z)?;
        let mut tape = Tape::new();
        let s = tape.leaf(states);
        let a = tape.leaf(&decoded);
        let (moved, feats, bound) = self.perturb.graph(&mut tape, s, a)?;
        let x = tape.concat_cols(s, moved)?;
        let qb = self.critics[0].bind_frozen(&mut tape);
        let q = self.critics[0].apply(&mut tape, &qb.0, x)?;
        let q = tape.mean(q);
        let value_loss = tape.neg(q);
        let term = match density {
            Some(pair) if pair.is_warm() => {
                Some(kl_surrogate(&mut tape, pair, feats, density_rng)?)
            }
            Some(pair) if self.config.statekl => {
                pair.check_warm()?;
                None
            }
            None if self.config.statekl => return Err(DensityError::Cold("density pair").into()),
            _ => None,
        };
        let loss = match term {
            Some(t) if self.config.statekl => {
                let pen = tape.scale(t.kl, self.config.lambda);
                tape.add(value_loss, pen)?
            }
            _ => value_loss,
        };
        let out = BcqLosses {
            actor_loss: tape.item(loss),
            kl: term.map(|t| tape.item(t.kl)),
            elbo_mu: term.map(|t| t.elbo_mu),
            elbo_pi: term.map(|t| t.elbo_pi),
            ..BcqLosses::default()
        };
        tape.backward(loss)?;
        self.perturb.zero_grad();
        self.perturb.pull_grads(&tape, &bound);
        Ok(out)
    }

    /// Critic, action-VAE and perturbation steps on one minibatch.
    pub fn update<R: Rng + ?Sized, D: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        density: Option<&DensityPair>,
        rng: &mut R,
        density_rng: &mut D,
    ) -> Result<BcqLosses, BatchError> {
        let vae_loss = self.vae.train_step(batch, &mut self.vae_opt, rng)?;
        let critic_loss = self.critic_step(batch, rng)?;
        let actor = self.perturb_gradient(&batch.states, density, rng, density_rng)?;
        self.actor_opt.step(self.perturb.parameters_mut())?;
        let tau = self.config.tau;
        for (live, target) in self.critics.iter().zip(&mut self.critic_targets) {
            polyak_update(live, target, tau);
        }
        polyak_update(&self.perturb, &mut self.perturb_target, tau);
        Ok(BcqLosses {
            critic_loss,
            vae_loss,
            ..actor
        })
    }
}

/// Index of the first maximum.
pub fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

// ---- offline trainer --------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchLearner {
    Bcq,
    Ddpg,
}

impl BatchLearner {
    pub fn name(self) -> &'static str {
        match self {
            BatchLearner::Bcq => "bcq",
            BatchLearner::Ddpg => "ddpg",
        }
    }
}

impl fmt::Display for BatchLearner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BatchLearner {
    type Err = BatchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bcq" => Ok(BatchLearner::Bcq),
            "ddpg" => Ok(BatchLearner::Ddpg),
            _ => Err(BatchError::Config("unknown batch learner")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    pub learner: BatchLearner,
    pub bcq: BcqConfig,
    /// Used when `learner` is DDPG.
    pub agent: AgentConfig,
    pub batch_size: usize,
    pub total_updates: u64,
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// Episodes at the end of the batch standing in for near on-policy data.
    pub dpi_tail_episodes: u64,
    /// Updates between density-model refreshes.
    pub density_refresh_every: u64,
    pub density: DensityConfig,
    pub seed: u64,
}

impl BatchConfig {
    pub fn new(learner: BatchLearner, seed: u64) -> Self {
        Self {
            learner,
            bcq: BcqConfig::default(),
            agent: AgentConfig::new(Algorithm::Ddpg),
            batch_size: 128,
            total_updates: 20_000,
            eval_every: 1_000,
            eval_episodes: 10,
            dpi_tail_episodes: 10,
            density_refresh_every: 200,
            density: DensityConfig::default(),
            seed,
        }
    }

    pub fn statekl(&self) -> bool {
        match self.learner {
            BatchLearner::Bcq => self.bcq.statekl,
            BatchLearner::Ddpg => self.agent.statekl,
        }
    }

    pub fn validate(&self) -> Result<(), BatchError> {
        let fd = match self.learner {
            BatchLearner::Bcq => self.bcq.feature_dim,
            BatchLearner::Ddpg => {
                self.agent.validate()?;
                self.agent.feature_dim
            }
        };
        if fd != self.density.feature_dim {
            return Err(BatchError::Config(
                "density feature_dim must match the learner's feature head",
            ));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.eval_episodes == 0 {
            return Err(BatchError::Config(
                "batch size and evaluation cadence must be positive",
            ));
        }
        if self.dpi_tail_episodes == 0 || self.density_refresh_every == 0 {
            return Err(BatchError::Config(
                "tail width and refresh cadence must be positive",
            ));
        }
        Ok(())
    }
}

enum Learner {
    Bcq(Box<BcqLiteAgent>),
    Ddpg(Box<Agent>),
}

/// Offline learner over a [`FixedBatch`]. Holds no environment.
pub struct BatchTrainer {
    config: BatchConfig,
    data: ReplayBuffer,
    tail: Vec<Transition>,
    learner: Learner,
    pair: DensityPair,
    agent_rng: crate::rng::Rng,
    replay_rng: crate::rng::Rng,
    density_rng: crate::rng::Rng,
    act_rng: crate::rng::Rng,
    updates: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ChunkStats {
    pub actor_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub elbo_mu: Option<f64>,
    pub elbo_pi: Option<f64>,
    pub kl: Option<f64>,
}

impl BatchTrainer {
    pub fn new(
        config: BatchConfig,
        spec: &EnvSpec,
        batch: &FixedBatch,
    ) -> Result<Self, BatchError> {
        use crate::rng::stream as tag;
        config.validate()?;
        if batch.is_empty() {
            return Err(BatchError::Config("batch is empty"));
        }
        if batch.state_dim() != spec.state_dim || batch.action_dim() != spec.action_dim {
            return Err(BatchError::Config(
                "batch dims do not match the environment",
            ));
        }
        let mut init = stream(config.seed, tag::INIT);
        let learner = match config.learner {
            BatchLearner::Bcq => Learner::Bcq(Box::new(BcqLiteAgent::new(
                spec,
                config.bcq.clone(),
                &mut init,
            )?)),
            BatchLearner::Ddpg => {
                Learner::Ddpg(Box::new(Agent::new(spec, config.agent.clone(), &mut init)?))
            }
        };
        let pair = DensityPair::new(config.density, &mut init);
        Ok(Self {
            data: batch.to_replay(),
            tail: batch.tail(config.dpi_tail_episodes).to_vec(),
            learner,
            pair,
            agent_rng: stream(config.seed, tag::AGENT),
            replay_rng: stream(config.seed, tag::REPLAY),
            density_rng: stream(config.seed, tag::DENSITY),
            act_rng: stream(config.seed, tag::EXPLORE),
            updates: 0,
            config,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn density(&self) -> &DensityPair {
        &self.pair
    }

    fn feature_map(&self) -> &dyn FeatureMap {
        match &self.learner {
            Learner::Bcq(b) => b.perturb(),
            Learner::Ddpg(a) => a.actor(),
        }
    }

    fn refresh_density(&mut self) -> Result<(), BatchError> {
        let mut r = seeded(self.density_rng.random());
        let n = self.config.density.snapshot_size;
        let pi_states = snapshot_states(self.tail.as_slice(), n, &mut r);
        let pi_feats = self.feature_map().features(&pi_states)?;
        self.pair.refresh_pi(&pi_feats, &mut r)?;
        let mu_states = snapshot_states(&self.data, n, &mut r);
        let mu_feats = self.feature_map().features(&mu_states)?;
        self.pair.refresh_mu(&mu_feats, &mut r)?;
        Ok(())
    }

    /// Runs `n` updates; the returned values are means over the chunk.
    pub fn train_chunk(&mut self, n: u64) -> Result<ChunkStats, BatchError> {
        let (mut al, mut cl, mut em, mut ep, mut kl) = (
            Mean::default(),
            Mean::default(),
            Mean::default(),
            Mean::default(),
            Mean::default(),
        );
        for _ in 0..n {
            if self
                .updates
                .is_multiple_of(self.config.density_refresh_every)
            {
                self.refresh_density()?;
            }
            let batch = self.data.sample(
                SamplingScheme::Uniform,
                self.config.batch_size,
                &mut self.replay_rng,
            )?;
            let mut dr = seeded(self.density_rng.random());
            match &mut self.learner {
                Learner::Bcq(b) => {
                    let l = b.update(&batch, Some(&self.pair), &mut self.agent_rng, &mut dr)?;
                    cl.push(l.critic_loss);
                    al.push(l.actor_loss);
                    em.push_opt(l.elbo_mu);
                    ep.push_opt(l.elbo_pi);
                    kl.push_opt(l.kl);
                }
                Learner::Ddpg(a) => {
                    let s = a.update(&batch, Some(&self.pair), &mut self.agent_rng, &mut dr)?;
                    cl.push(s.critic_loss);
                    if let Some(x) = s.actor {
                        al.push(x.actor_loss);
                        em.push_opt(x.elbo_mu);
                        ep.push_opt(x.elbo_pi);
                        kl.push_opt(x.kl);
                    }
                }
            }
            self.updates += 1;
        }
        Ok(ChunkStats {
            actor_loss: al.take(),
            critic_loss: cl.take(),
            elbo_mu: em.take(),
            elbo_pi: ep.take(),
            kl: kl.take(),
        })
    }

    /// Greedy action of the current learner (BCQ: best perturbed candidate).
    pub fn policy_action(&mut self, state: &[f64]) -> Result<Vec<f64>, BatchError> {
        match &self.learner {
            Learner::Bcq(b) => b.select_action(state, &mut self.act_rng),
            Learner::Ddpg(a) => Ok(a.act(state, false, &mut self.act_rng)?),
        }
    }
}

pub struct BatchOutcome {
    pub rows: Vec<MetricsRow>,
}

/// Alternates offline training chunks with noise-free evaluation episodes.
/// `episode` is always 0 in batch rows.
pub fn run_batch(
    config: &BatchConfig,
    kind: EnvKind,
    batch: &FixedBatch,
) -> Result<BatchOutcome, BatchError> {
    let spec = kind.make().spec().clone();
    let eval_seed = derive_seed(config.seed, crate::rng::stream::EVAL);
    let mut trainer = BatchTrainer::new(config.clone(), &spec, batch)?;
    let mut rows = Vec::new();
    let mut done = 0;
    while done < config.total_updates {
        let n = config.eval_every.min(config.total_updates - done);
        let stats = trainer.train_chunk(n)?;
        done += n;
        let ret = evaluate_with(kind, config.eval_episodes, eval_seed, |s| {
            trainer.policy_action(s).map_err(|e| match e {
                BatchError::Agent(a) => TrainError::Agent(a),
                BatchError::Num(n) => TrainError::Num(n),
                _ => TrainError::Config("batch policy failed during evaluation"),
            })
        })?;
        rows.push(MetricsRow {
            step: done,
            episode: 0,
            eval_return: ret,
            actor_loss: stats.actor_loss,
            critic_loss: stats.critic_loss,
            elbo_mu: stats.elbo_mu,
            elbo_pi: stats.elbo_pi,
            kl_estimate: stats.kl,
        });
    }
    Ok(BatchOutcome { rows })
}
