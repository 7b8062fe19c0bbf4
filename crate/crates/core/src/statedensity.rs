//! VAE density models over policy state features and the KL surrogate.
//!
//! Each VAE lower-bounds `log p(ψ)` for features `ψ = ψ_θ(s)`. The surrogate
//! `K̂ = mean_s[elbo_mu(ψ_θ(s)) − elbo_pi(ψ_θ(s))]` over replay states
//! estimates `KL(d_mu ‖ d_pi)` with both densities replaced by their ELBOs.
//! VAE parameters are frozen inside the surrogate, so its gradient reaches
//! the policy only through the features.

use alloc::vec::Vec;

use rand::Rng;

use crate::numcore::{
    math, standard_normal, Activation, Adam, Bound, Mlp, Module, NumError, Tape, Tensor, Var,
    LOG_STD_MAX, LOG_STD_MIN,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DensityError {
    #[error("density model cold: {0} has not been trained")]
    Cold(&'static str),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Maps states to feature vectors with a differentiable path to its parameters.
pub trait FeatureMap {
    fn feature_dim(&self) -> usize;

    /// Records `ψ(states)` on the tape. The returned [`Bound`] holds the
    /// parameters the features depend on.
    fn features_on(&self, tape: &mut Tape, states: Var) -> Result<(Var, Bound), NumError>;

    /// Graph-free evaluation.
    fn features(&self, states: &Tensor) -> Result<Tensor, NumError>;
}

/// `ψ(s) = s`, used for density fixtures on raw data.
#[derive(Debug, Clone, Copy)]
pub struct IdentityFeatures(pub usize);

impl FeatureMap for IdentityFeatures {
    fn feature_dim(&self) -> usize {
        self.0
    }

    fn features_on(&self, _tape: &mut Tape, states: Var) -> Result<(Var, Bound), NumError> {
        Ok((states, Bound(Vec::new())))
    }

    fn features(&self, states: &Tensor) -> Result<Tensor, NumError> {
        Ok(states.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityConfig {
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub hidden: usize,
    pub lr: f64,
    /// Gradient steps per refresh of each VAE.
    pub steps_per_refresh: usize,
    /// Replay states drawn per refresh of the behaviour-side VAE.
    pub snapshot_size: usize,
    /// When false the features fed to the behaviour-side ELBO are detached.
    pub kl_grad_both_terms: bool,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            feature_dim: 8,
            latent_dim: 4,
            hidden: 32,
            lr: 1e-3,
            steps_per_refresh: 5,
            snapshot_size: 256,
            kl_grad_both_terms: true,
        }
    }
}

/// Gaussian VAE with a standard-normal prior and unit decoder variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    encoder: Mlp,
    decoder: Mlp,
    latent_dim: usize,
    trained_steps: u64,
}

impl Vae {
    pub fn new<R: Rng + ?Sized>(
        feature_dim: usize,
        latent_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let encoder = Mlp::new(
            &[feature_dim, hidden, 2 * latent_dim],
            Activation::Relu,
            Activation::Linear,
            rng,
        );
        let decoder = Mlp::new(
            &[latent_dim, hidden, feature_dim],
            Activation::Relu,
            Activation::Linear,
            rng,
        );
        Self {
            encoder,
            decoder,
            latent_dim,
            trained_steps: 0,
        }
    }

    pub fn from_parts(encoder: Mlp, decoder: Mlp) -> Self {
        let latent_dim = decoder.input_dim();
        assert_eq!(
            encoder.output_dim(),
            2 * latent_dim,
            "encoder emits mean and log-std"
        );
        assert_eq!(
            encoder.input_dim(),
            decoder.output_dim(),
            "decoder reconstructs the input"
        );
        Self {
            encoder,
            decoder,
            latent_dim,
            trained_steps: 0,
        }
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut Mlp {
        &mut self.encoder
    }

    pub fn decoder_mut(&mut self) -> &mut Mlp {
        &mut self.decoder
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn trained_steps(&self) -> u64 {
        self.trained_steps
    }

    pub fn is_warm(&self) -> bool {
        self.trained_steps > 0
    }

    /// Marks the model as trained without updating it (for fixtures built
    /// from hand-set parameters).
    pub fn mark_trained(&mut self) {
        self.trained_steps = self.trained_steps.max(1);
    }

    fn split(&self, bound: &Bound) -> (Vec<Var>, Vec<Var>) {
        let n = self.encoder.parameters().len();
        (bound.0[..n].to_vec(), bound.0[n..].to_vec())
    }

    /// Per-row ELBO as an `[n, 1]` column, with the latent noise `eps`
    /// (`n * latent_dim` values) supplied by the caller.
    pub fn elbo_rows(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        eps: Vec<f64>,
    ) -> Result<Var, NumError> {
        let (n, f) = tape.shape(x);
        let l = self.latent_dim;
        let (enc, dec) = self.split(bound);
        let h = self.encoder.apply(tape, &enc, x)?;
        let mu = tape.slice_cols(h, 0, l)?;
        let log_std = tape.slice_cols(h, l, l)?;
        let log_std = tape.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
        let std = tape.exp(log_std);
        let noise = tape.constant(n, l, eps)?;
        let spread = tape.mul(std, noise)?;
        let z = tape.add(mu, spread)?;
        let recon = self.decoder.apply(tape, &dec, z)?;

        // log N(x; recon, I) = -0.5 |x - recon|^2 - (f/2) ln 2π
        let resid = tape.sub(x, recon)?;
        let sq = tape.square(resid);
        let sq = tape.row_sum(sq);
        let sq = tape.scale(sq, -0.5);
        let log_lik = tape.offset(sq, -0.5 * f as f64 * math::LN_2PI);

        // KL(N(mu, std²) ‖ N(0, I)) = 0.5 Σ (mu² + std² − 1 − 2 log std)
        let mu2 = tape.square(mu);
        let var = tape.square(std);
        let two_log = tape.scale(log_std, 2.0);
        let t = tape.add(mu2, var)?;
        let t = tape.sub(t, two_log)?;
        let t = tape.offset(t, -1.0);
        let t = tape.row_sum(t);
        let kl = tape.scale(t, 0.5);
        tape.sub(log_lik, kl)
    }

    /// Batch-mean ELBO.
    pub fn elbo_on(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: Var,
        eps: Vec<f64>,
    ) -> Result<Var, NumError> {
        let rows = self.elbo_rows(tape, bound, x, eps)?;
        Ok(tape.mean(rows))
    }

    /// Batch-mean ELBO of `features` with one reparameterized sample per row.
    pub fn elbo<R: Rng + ?Sized>(&self, features: &Tensor, rng: &mut R) -> Result<f64, NumError> {
        let mut tape = Tape::new();
        let x = tape.leaf(&features.clone_detached());
        let bound = self.bind_frozen(&mut tape);
        let eps = standard_normal(rng, features.rows() * self.latent_dim);
        let e = self.elbo_on(&mut tape, &bound, x, eps)?;
        Ok(tape.item(e))
    }

    /// Per-row log importance weights `log p(x, z_k) − log q(z_k | x)` for
    /// `k` latent samples per row, evaluated without a graph. `eps` holds
    /// `k * latent_dim` values per row.
    pub fn log_weights(
        &self,
        features: &Tensor,
        k: usize,
        eps: &[f64],
    ) -> Result<Vec<Vec<f64>>, NumError> {
        let (n, f) = features.dims2();
        let l = self.latent_dim;
        assert_eq!(eps.len(), n * k * l, "eps holds k latent draws per row");
        let h = self.encoder.forward(features)?;
        let mut z = Vec::with_capacity(n * k * l);
        let mut log_q = Vec::with_capacity(n * k);
        let mut log_prior = Vec::with_capacity(n * k);
        for i in 0..n {
            let row = h.row(i);
            for j in 0..k {
                let e = &eps[(i * k + j) * l..(i * k + j + 1) * l];
                let (mut lq, mut lp) = (0.0, 0.0);
                for d in 0..l {
                    let ls = row[l + d].clamp(LOG_STD_MIN, LOG_STD_MAX);
                    let zd = row[d] + math::exp(ls) * e[d];
                    z.push(zd);
                    lq += -0.5 * e[d] * e[d] - ls - 0.5 * math::LN_2PI;
                    lp += -0.5 * zd * zd - 0.5 * math::LN_2PI;
                }
                log_q.push(lq);
                log_prior.push(lp);
            }
        }
        let recon = self.decoder.forward(&Tensor::matrix(n * k, l, z)?)?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let x = features.row(i);
            let mut w = Vec::with_capacity(k);
            for j in 0..k {
                let r = recon.row(i * k + j);
                let sq: f64 = x.iter().zip(r).map(|(a, b)| (a - b) * (a - b)).sum();
                let log_lik = -0.5 * sq - 0.5 * f as f64 * math::LN_2PI;
                w.push(log_lik + log_prior[i * k + j] - log_q[i * k + j]);
            }
            out.push(w);
        }
        Ok(out)
    }

    /// Importance-weighted bound with `k` samples, batch mean.
    pub fn iwae<R: Rng + ?Sized>(
        &self,
        features: &Tensor,
        k: usize,
        rng: &mut R,
    ) -> Result<f64, NumError> {
        let eps = standard_normal(rng, features.rows() * k * self.latent_dim);
        let w = self.log_weights(features, k, &eps)?;
        Ok(iwae_from_weights(&w))
    }
}

/// Batch mean of `logsumexp_k(w) − ln k`.
pub fn iwae_from_weights(w: &[Vec<f64>]) -> f64 {
    let n = w.len().max(1) as f64;
    w.iter()
        .map(|row| math::log_sum_exp(row) - math::ln(row.len() as f64))
        .sum::<f64>()
        / n
}

/// Batch mean of the plain Monte-Carlo ELBO `mean_k(w)`.
pub fn elbo_from_weights(w: &[Vec<f64>]) -> f64 {
    let n = w.len().max(1) as f64;
    w.iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .sum::<f64>()
        / n
}

impl Module for Vae {
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

trait Detach {
    fn clone_detached(&self) -> Tensor;
}

impl Detach for Tensor {
    fn clone_detached(&self) -> Tensor {
        let mut t = self.clone();
        t.set_requires_grad(false);
        t
    }
}

/// One ascent step on the ELBO of detached `features`. Returns the ELBO
/// before the step.
pub fn train_vae_step<R: Rng + ?Sized>(
    vae: &mut Vae,
    features: &Tensor,
    adam: &mut Adam,
    rng: &mut R,
) -> Result<f64, NumError> {
    let mut tape = Tape::new();
    let x = tape.leaf(&features.clone_detached());
    let bound = vae.bind(&mut tape);
    let eps = standard_normal(rng, features.rows() * vae.latent_dim);
    let elbo = vae.elbo_on(&mut tape, &bound, x, eps)?;
    let value = tape.item(elbo);
    let loss = tape.neg(elbo);
    tape.backward(loss)?;
    vae.zero_grad();
    vae.pull_grads(&tape, &bound);
    adam.step(vae.parameters_mut())?;
    vae.trained_steps += 1;
    Ok(value)
}

/// Behaviour-side (`mu`, replay) and target-side (`pi`, online) density
/// models. They share architecture, never parameters.
#[derive(Debug, Clone)]
pub struct DensityPair {
    pub config: DensityConfig,
    pub mu: Vae,
    pub pi: Vae,
    adam_mu: Adam,
    adam_pi: Adam,
}

/// Output of [`kl_surrogate`]: the scalar node plus the two ELBO values.
#[derive(Debug, Clone, Copy)]
pub struct KlTerm {
    pub kl: Var,
    pub elbo_mu: f64,
    pub elbo_pi: f64,
}

impl DensityPair {
    pub fn new<R: Rng + ?Sized>(config: DensityConfig, rng: &mut R) -> Self {
        let mu = Vae::new(config.feature_dim, config.latent_dim, config.hidden, rng);
        let pi = Vae::new(config.feature_dim, config.latent_dim, config.hidden, rng);
        Self::from_models(config, mu, pi)
    }

    pub fn from_models(config: DensityConfig, mu: Vae, pi: Vae) -> Self {
        Self {
            config,
            mu,
            pi,
            adam_mu: Adam::new(config.lr),
            adam_pi: Adam::new(config.lr),
        }
    }

    pub fn is_warm(&self) -> bool {
        self.mu.is_warm() && self.pi.is_warm()
    }

    pub fn check_warm(&self) -> Result<(), DensityError> {
        if !self.mu.is_warm() {
            return Err(DensityError::Cold("replay density model"));
        }
        if !self.pi.is_warm() {
            return Err(DensityError::Cold("online density model"));
        }
        Ok(())
    }

    /// `steps_per_refresh` ELBO steps of the replay-side model. Returns the
    /// last ELBO value.
    pub fn refresh_mu<R: Rng + ?Sized>(
        &mut self,
        features: &Tensor,
        rng: &mut R,
    ) -> Result<f64, NumError> {
        let mut last = f64::NAN;
        for _ in 0..self.config.steps_per_refresh {
            last = train_vae_step(&mut self.mu, features, &mut self.adam_mu, rng)?;
        }
        Ok(last)
    }

    pub fn refresh_pi<R: Rng + ?Sized>(
        &mut self,
        features: &Tensor,
        rng: &mut R,
    ) -> Result<f64, NumError> {
        let mut last = f64::NAN;
        for _ in 0..self.config.steps_per_refresh {
            last = train_vae_step(&mut self.pi, features, &mut self.adam_pi, rng)?;
        }
        Ok(last)
    }
}

/// Records `K̂` for the feature node `features` (replay states pushed through
/// the policy). Both VAEs are bound frozen and share one latent noise draw,
/// so parameter-identical models give exactly zero.
pub fn kl_surrogate<R: Rng + ?Sized>(
    tape: &mut Tape,
    pair: &DensityPair,
    features: Var,
    rng: &mut R,
) -> Result<KlTerm, DensityError> {
    pair.check_warm()?;
    let (n, _) = tape.shape(features);
    let eps = standard_normal(rng, n * pair.config.latent_dim);
    // Each branch gets its own unit-scale node so its gradient is totalled
    // before reaching `features`; identical models then cancel exactly.
    let x_mu = if pair.config.kl_grad_both_terms {
        tape.scale(features, 1.0)
    } else {
        let (r, c) = tape.shape(features);
        let v = tape.value(features).to_vec();
        tape.constant(r, c, v)?
    };
    let x_pi = tape.scale(features, 1.0);
    let b_mu = pair.mu.bind_frozen(tape);
    let b_pi = pair.pi.bind_frozen(tape);
    let e_mu = pair.mu.elbo_on(tape, &b_mu, x_mu, eps.clone())?;
    let e_pi = pair.pi.elbo_on(tape, &b_pi, x_pi, eps)?;
    let kl = tape.sub(e_mu, e_pi)?;
    Ok(KlTerm {
        kl,
        elbo_mu: tape.item(e_mu),
        elbo_pi: tape.item(e_pi),
    })
}

/// `K̂` value for `states` under `map`, without gradients.
pub fn kl_value<M, R>(
    pair: &DensityPair,
    map: &M,
    states: &Tensor,
    rng: &mut R,
) -> Result<f64, DensityError>
where
    M: FeatureMap + ?Sized,
    R: Rng + ?Sized,
{
    let feats = map.features(states)?;
    let mut tape = Tape::new();
    let (r, c) = feats.dims2();
    let x = tape.constant(r, c, feats.into_data())?;
    let term = kl_surrogate(&mut tape, pair, x, rng)?;
    Ok(tape.item(term.kl))
}
