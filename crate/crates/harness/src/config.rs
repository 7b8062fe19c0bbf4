//! Flat `key = value` experiment configs with `[section]` headers.
//!
//! A `[sweep]` section maps dotted keys to comma-separated values; a file
//! expands to one experiment per point of their cartesian product.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::{Ini, ParseOption};
use statekl_core::agents::{AgentConfig, Algorithm};
use statekl_core::batchrl::{BatchConfig, BatchError, BatchLearner};
use statekl_core::envspace::EnvKind;
use statekl_core::replay::SamplingScheme;
use statekl_core::train::{TrainConfig, TrainError};

use crate::ident::short_hash;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{0}` given more than once")]
    Duplicate(String),
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("bad value for `{key}`: `{value}` ({reason})")]
    Invalid {
        key: String,
        value: String,
        reason: String,
    },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Batch(#[from] BatchError),
}

fn invalid(key: &str, value: &str, reason: impl Display) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        value: value.into(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Batch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchSource {
    /// Noisy rollouts of the fully trained source policy.
    Expert,
    /// Every transition the source policy stored while training.
    Transient,
}

impl FromStr for BatchSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "expert" => Ok(BatchSource::Expert),
            "transient" => Ok(BatchSource::Transient),
            _ => Err("expected expert or transient".into()),
        }
    }
}

impl BatchSource {
    pub fn name(self) -> &'static str {
        match self {
            BatchSource::Expert => "expert",
            BatchSource::Transient => "transient",
        }
    }
}

/// The online run whose policy or history becomes the fixed batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    pub kind: BatchSource,
    pub algorithm: Algorithm,
    pub steps: u64,
    pub seed: u64,
    /// Transitions rolled out for an expert batch.
    pub size: usize,
}

impl SourceSpec {
    pub fn train_config(&self, env: EnvKind) -> TrainConfig {
        let mut c = TrainConfig::new(env, AgentConfig::new(self.algorithm), self.seed);
        c.total_steps = self.steps;
        c
    }

    /// Identifies the source run; the expert and transient batches of the
    /// same run share it.
    pub fn run_hash(&self, env: EnvKind) -> String {
        short_hash(&format!("source|{:?}", self.train_config(env)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub source: SourceSpec,
    pub config: BatchConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: Mode,
    /// Online settings; in batch mode only `env` is used.
    pub train: TrainConfig,
    pub batch: Option<BatchPlan>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn env(&self) -> EnvKind {
        self.train.env
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    pub fn batch_config(&self, seed: u64) -> Option<BatchConfig> {
        self.batch.as_ref().map(|b| BatchConfig {
            seed,
            ..b.config.clone()
        })
    }

    /// Hash of every setting that affects results. Name, seeds and output
    /// directory are excluded.
    pub fn config_hash(&self) -> String {
        let canon = match (&self.mode, &self.batch) {
            (Mode::Batch, Some(b)) => format!(
                "batch|{:?}|{:?}|{:?}",
                self.env(),
                b.source,
                BatchConfig {
                    seed: 0,
                    ..b.config.clone()
                }
            ),
            _ => format!("train|{:?}", self.train_config(0)),
        };
        short_hash(&canon)
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }
}

/// A parsed config file before sweep expansion.
#[derive(Debug, Clone)]
pub struct ConfigFile {
    /// Leading `#` comment lines, without the markers.
    pub header: String,
    params: BTreeMap<String, String>,
    sweep: Vec<(String, Vec<String>)>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let opt = ParseOption {
            enabled_quote: false,
            enabled_escape: false,
            ..ParseOption::default()
        };
        let ini =
            Ini::load_from_str_opt(text, opt).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut params = BTreeMap::new();
        let mut sweep = Vec::new();
        let mut sweep_keys = BTreeSet::new();
        let mut seen_sections = BTreeSet::new();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(ConfigError::UnknownKey(format!(
                        "{k} (outside any section)"
                    )));
                }
                continue;
            };
            if !seen_sections.insert(section.to_string()) {
                return Err(ConfigError::Duplicate(format!("[{section}]")));
            }
            for (k, v) in props.iter() {
                let v = v.trim();
                if section == "sweep" {
                    if !sweep_keys.insert(k.to_string()) {
                        return Err(ConfigError::Duplicate(format!("sweep.{k}")));
                    }
                    let values: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
                    if values.iter().any(String::is_empty) {
                        return Err(invalid(k, v, "empty sweep value"));
                    }
                    sweep.push((k.to_string(), values));
                } else {
                    let key = format!("{section}.{k}");
                    if params.insert(key.clone(), v.to_string()).is_some() {
                        return Err(ConfigError::Duplicate(key));
                    }
                }
            }
        }
        let header = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| l.trim_start_matches('#').trim())
            .collect::<Vec<_>>()
            .join("\n");
        Ok(Self {
            header,
            params,
            sweep,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Sets `section.key` before expansion, as command-line flags do.
    pub fn override_param(&mut self, key: &str, value: &str) {
        self.params.insert(key.to_string(), value.to_string());
    }

    pub fn is_sweep(&self) -> bool {
        !self.sweep.is_empty()
    }

    /// One experiment per sweep point, or the file itself without a sweep.
    /// Swept variants are named and placed under `<out>/<base>-<point>`.
    pub fn variants(&self) -> Result<Vec<ExperimentConfig>, ConfigError> {
        let mut points: Vec<Vec<(&str, &str)>> = vec![Vec::new()];
        for (key, values) in &self.sweep {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((key.as_str(), v.as_str()));
                        q
                    })
                })
                .collect();
        }
        let mut out = Vec::with_capacity(points.len());
        for point in points {
            let mut params = self.params.clone();
            for &(k, v) in &point {
                params.insert(k.to_string(), v.to_string());
            }
            let mut cfg = resolve(&params)?;
            if !point.is_empty() {
                let suffix: Vec<String> = point
                    .iter()
                    .map(|(k, v)| format!("{}-{v}", k.rsplit('.').next().unwrap_or(k)))
                    .collect();
                let name = format!("{}-{}", cfg.name, suffix.join("_"));
                cfg.out = cfg.out.join(&name);
                cfg.name = name;
            }
            out.push(cfg);
        }
        Ok(out)
    }

    /// The single experiment of a file without a sweep.
    pub fn experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        if self.is_sweep() {
            return Err(ConfigError::Syntax(
                "file has a [sweep] section; run it as a recipe".into(),
            ));
        }
        resolve(&self.params)
    }
}

/// Parses `0,3,5` and half-open ranges such as `0..10`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|e| format!("{e}"))?;
            let b: u64 = b.trim().parse().map_err(|e| format!("{e}"))?;
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|e| format!("{e}"))?);
        }
    }
    if out.is_empty() {
        return Err("seed list is empty".into());
    }
    let distinct: BTreeSet<u64> = out.iter().copied().collect();
    if distinct.len() != out.len() {
        return Err("seeds must be distinct".into());
    }
    Ok(out)
}

/// Default step budget per environment.
pub fn default_steps(env: EnvKind) -> u64 {
    match env {
        EnvKind::MountainCar => 100_000,
        _ => 50_000,
    }
}

struct Reader<'a> {
    params: &'a BTreeMap<String, String>,
    used: BTreeSet<&'a str>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, key: &str) -> Option<&'a str> {
        let (k, v) = self.params.get_key_value(key)?;
        self.used.insert(k.as_str());
        Some(v.as_str())
    }

    fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| invalid(key, v, e)),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<(), ConfigError>
    where
        T::Err: Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.params.keys().find(|k| !self.used.contains(k.as_str())) {
            Some(k) => Err(ConfigError::UnknownKey(k.clone())),
            None => Ok(()),
        }
    }
}

fn resolve(params: &BTreeMap<String, String>) -> Result<ExperimentConfig, ConfigError> {
    let mut r = Reader {
        params,
        used: BTreeSet::new(),
    };
    let name = r.raw("experiment.name").unwrap_or("experiment").to_string();
    if name.is_empty() || name.contains(['/', '\\']) {
        return Err(invalid(
            "experiment.name",
            &name,
            "must be a plain file name",
        ));
    }
    let mode = match r.raw("experiment.mode").unwrap_or("train") {
        "train" => Mode::Train,
        "batch" => Mode::Batch,
        other => return Err(invalid("experiment.mode", other, "expected train or batch")),
    };
    let seeds = match r.raw("experiment.seeds") {
        Some(s) => parse_seeds(s).map_err(|e| invalid("experiment.seeds", s, e))?,
        None => vec![0],
    };
    let out = PathBuf::from(r.raw("experiment.out").unwrap_or("runs"));
    let env: EnvKind = r.get("env.name")?.ok_or(ConfigError::Missing("env.name"))?;

    let algorithm: Option<Algorithm> = r.get("agent.algorithm")?;
    let algorithm = match (mode, algorithm) {
        (_, Some(a)) => a,
        (Mode::Batch, None) => Algorithm::Ddpg,
        (Mode::Train, None) => return Err(ConfigError::Missing("agent.algorithm")),
    };
    let mut agent = AgentConfig::new(algorithm);
    r.set("agent.gamma", &mut agent.gamma)?;
    r.set("agent.tau", &mut agent.tau)?;
    r.set("agent.lr_actor", &mut agent.lr_actor)?;
    r.set("agent.lr_critic", &mut agent.lr_critic)?;
    r.set("agent.explore_sigma", &mut agent.explore_sigma)?;
    r.set("agent.hidden", &mut agent.hidden)?;
    r.set("agent.feature_dim", &mut agent.feature_dim)?;
    r.set("agent.batch_size", &mut agent.batch_size)?;
    r.set("agent.policy_delay", &mut agent.policy_delay)?;
    r.set("agent.target_noise_sigma", &mut agent.target_noise_sigma)?;
    r.set("agent.target_noise_clip", &mut agent.target_noise_clip)?;
    r.set("agent.entropy_alpha", &mut agent.entropy_alpha)?;
    r.set("agent.auto_alpha", &mut agent.auto_alpha)?;
    r.set("statekl.enabled", &mut agent.statekl)?;
    r.set("statekl.lambda", &mut agent.lambda)?;
    if !agent.statekl {
        // Unused without the penalty; zeroed so equivalent configs share a hash.
        agent.lambda = 0.0;
    }

    let mut train = TrainConfig::new(env, agent.clone(), 0);
    train.total_steps = default_steps(env);
    r.set("density.latent_dim", &mut train.density.latent_dim)?;
    r.set("density.hidden", &mut train.density.hidden)?;
    r.set("density.lr", &mut train.density.lr)?;
    r.set(
        "density.steps_per_refresh",
        &mut train.density.steps_per_refresh,
    )?;
    r.set("density.snapshot_size", &mut train.density.snapshot_size)?;
    r.set(
        "statekl.grad_both_terms",
        &mut train.density.kl_grad_both_terms,
    )?;
    r.set("run.total_steps", &mut train.total_steps)?;
    r.set("run.warmup_steps", &mut train.warmup_steps)?;
    r.set("run.eval_every", &mut train.eval_every)?;
    r.set("run.eval_episodes", &mut train.eval_episodes)?;
    r.set("replay.capacity", &mut train.replay_capacity)?;
    r.set("replay.online_rollouts", &mut train.online_rollouts)?;
    train.scheme = parse_scheme(&mut r)?;

    let batch = match mode {
        Mode::Train => None,
        Mode::Batch => Some(resolve_batch(&mut r, &train, &agent)?),
    };
    r.finish()?;
    match &batch {
        None => train.validate()?,
        Some(b) => {
            b.config.validate()?;
            b.source.train_config(env).validate()?;
        }
    }
    Ok(ExperimentConfig {
        name,
        mode,
        train,
        batch,
        seeds,
        out,
    })
}

/// `delayed` with delay 0 and `windowed` with window `full` admit every
/// stored transition, so both resolve to `Uniform` and share its hash.
fn parse_scheme(r: &mut Reader) -> Result<SamplingScheme, ConfigError> {
    let kind = r.raw("replay.scheme").unwrap_or("uniform");
    match kind {
        "uniform" => Ok(SamplingScheme::Uniform),
        "delayed" => {
            let d: u64 = r
                .get("replay.delay")?
                .ok_or(ConfigError::Missing("replay.delay"))?;
            Ok(if d == 0 {
                SamplingScheme::Uniform
            } else {
                SamplingScheme::Delayed(d)
            })
        }
        "windowed" => match r.raw("replay.window") {
            None => Err(ConfigError::Missing("replay.window")),
            Some("full") => Ok(SamplingScheme::Uniform),
            Some(w) => {
                let n: u64 = w.parse().map_err(|e| invalid("replay.window", w, e))?;
                SamplingScheme::windowed(n).map_err(|e| invalid("replay.window", w, e))
            }
        },
        other => Err(invalid(
            "replay.scheme",
            other,
            "expected uniform, delayed or windowed",
        )),
    }
}

fn resolve_batch(
    r: &mut Reader,
    train: &TrainConfig,
    agent: &AgentConfig,
) -> Result<BatchPlan, ConfigError> {
    let kind: BatchSource = r
        .get("batch.source")?
        .ok_or(ConfigError::Missing("batch.source"))?;
    let mut source = SourceSpec {
        kind,
        algorithm: Algorithm::Ddpg,
        steps: default_steps(train.env),
        seed: 0,
        size: 100_000,
    };
    r.set("batch.source_algorithm", &mut source.algorithm)?;
    r.set("batch.source_steps", &mut source.steps)?;
    r.set("batch.source_seed", &mut source.seed)?;
    r.set("batch.size", &mut source.size)?;

    let learner: BatchLearner = r
        .get("batch.learner")?
        .ok_or(ConfigError::Missing("batch.learner"))?;
    if learner == BatchLearner::Ddpg && agent.algorithm != Algorithm::Ddpg {
        return Err(invalid(
            "agent.algorithm",
            agent.algorithm.name(),
            "the offline actor-critic learner is ddpg",
        ));
    }
    let mut config = BatchConfig::new(learner, 0);
    config.agent = agent.clone();
    config.density = train.density;
    let bcq = &mut config.bcq;
    // Shared agent keys apply to BCQ only when given explicitly.
    r.set("agent.gamma", &mut bcq.gamma)?;
    r.set("agent.tau", &mut bcq.tau)?;
    r.set("agent.lr_actor", &mut bcq.lr_actor)?;
    r.set("agent.lr_critic", &mut bcq.lr_critic)?;
    r.set("agent.hidden", &mut bcq.hidden)?;
    bcq.feature_dim = agent.feature_dim;
    bcq.statekl = agent.statekl;
    bcq.lambda = agent.lambda;
    r.set("batch.lr_vae", &mut bcq.lr_vae)?;
    r.set("batch.n_candidates", &mut bcq.n_candidates)?;
    r.set("batch.phi", &mut bcq.phi)?;
    if let Some(l) = r.get::<usize>("batch.vae_latent_dim")? {
        bcq.latent_dim = Some(l);
    }
    r.set("batch.updates", &mut config.total_updates)?;
    r.set("batch.batch_size", &mut config.batch_size)?;
    r.set("batch.dpi_tail_episodes", &mut config.dpi_tail_episodes)?;
    r.set(
        "batch.density_refresh_every",
        &mut config.density_refresh_every,
    )?;
    config.eval_every = train.eval_every;
    config.eval_episodes = train.eval_episodes;
    Ok(BatchPlan { source, config })
}
