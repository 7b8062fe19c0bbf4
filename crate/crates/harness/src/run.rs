//! Seed fan-out, batch sources and the on-disk run cache.

use std::path::{Path, PathBuf};
use std::time::Instant;

use statekl_core::agents::Algorithm;
use statekl_core::batchrl::{
    generate_expert_batch, generate_transient_batch, run_batch, FixedBatch,
};
use statekl_core::metrics::MetricsRow;
use statekl_core::rng::{derive_seed, stream};
use statekl_core::train::{evaluate, random_policy_return};

use crate::config::{BatchSource, ExperimentConfig, Mode, SourceSpec};
use crate::csvio::{read_metrics, write_metrics, Metadata};
use crate::ident::{env_manifest_hash, BUILD_ID};
use crate::HarnessError;

/// Seed tag for expert rollouts of a source policy.
const EXPERT_TAG: u64 = 0x4558_5045_5254;

/// Results keyed by build id, config hash and file key. Entries from other
/// builds are never read.
#[derive(Debug, Clone)]
pub struct RunCache {
    root: PathBuf,
}

impl RunCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn path(&self, hash: &str, key: &str) -> PathBuf {
        self.root.join(BUILD_ID).join(hash).join(key)
    }

    pub fn get(&self, hash: &str, key: &str) -> Option<Vec<u8>> {
        std::fs::read(self.path(hash, key)).ok()
    }

    /// Writes through a temporary file so readers never see partial entries.
    pub fn put(&self, hash: &str, key: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        let path = self.path(hash, key);
        let dir = path.parent().expect("cache paths have a parent");
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| HarnessError::io(&path, e))
    }
}

/// A fixed batch with the reference returns used to normalise batch scores.
#[derive(Debug, Clone)]
pub struct SourceData {
    pub batch: FixedBatch,
    /// Noise-free return of the source policy at the end of its run.
    pub source_return: f64,
    pub random_return: f64,
}

impl SourceData {
    /// `(r − random) / (source − random)`.
    pub fn normalized(&self, r: f64) -> f64 {
        (r - self.random_return) / (self.source_return - self.random_return)
    }
}

fn batch_key(spec: &SourceSpec) -> String {
    match spec.kind {
        BatchSource::Expert => format!("expert-{}.batch", spec.size),
        BatchSource::Transient => "transient.batch".into(),
    }
}

fn parse_source_meta(bytes: &[u8]) -> Option<(f64, f64)> {
    let text = std::str::from_utf8(bytes).ok()?;
    let mut src = None;
    let mut rnd = None;
    for line in text.lines() {
        match line.split_once('=') {
            Some(("source_return", v)) => src = v.parse().ok(),
            Some(("random_return", v)) => rnd = v.parse().ok(),
            _ => {}
        }
    }
    Some((src?, rnd?))
}

/// Trains the source policy (or loads it from the cache) and returns the
/// batch `spec` asks for. One source run yields both batch kinds.
pub fn prepare_source(
    cfg: &ExperimentConfig,
    cache: Option<&RunCache>,
) -> Result<SourceData, HarnessError> {
    let plan = cfg
        .batch
        .as_ref()
        .ok_or_else(|| HarnessError::Mode("batch data needs a batch-mode config".into()))?;
    let spec = &plan.source;
    let env = cfg.env();
    let hash = spec.run_hash(env);
    let key = batch_key(spec);
    if let Some(c) = cache {
        if let (Some(b), Some(m)) = (c.get(&hash, &key), c.get(&hash, "source.meta")) {
            if let Some((source_return, random_return)) = parse_source_meta(&m) {
                return Ok(SourceData {
                    batch: FixedBatch::from_bytes(&b)?,
                    source_return,
                    random_return,
                });
            }
        }
    }

    let (transient, outcome) = generate_transient_batch(&spec.train_config(env))?;
    let eval_seed = derive_seed(spec.seed, stream::EVAL);
    let episodes = plan.config.eval_episodes;
    let source_return = evaluate(&outcome.agent, env, episodes, eval_seed)?;
    let random_return = random_policy_return(env, episodes, eval_seed)?;
    let expert = generate_expert_batch(
        &outcome.agent,
        env,
        spec.size,
        derive_seed(spec.seed, EXPERT_TAG),
    )?;
    if let Some(c) = cache {
        c.put(&hash, "transient.batch", &transient.to_bytes())?;
        c.put(
            &hash,
            &format!("expert-{}.batch", spec.size),
            &expert.to_bytes(),
        )?;
        c.put(
            &hash,
            "source.meta",
            format!("source_return={source_return:?}\nrandom_return={random_return:?}\n")
                .as_bytes(),
        )?;
    }
    let batch = match spec.kind {
        BatchSource::Expert => expert,
        BatchSource::Transient => transient,
    };
    Ok(SourceData {
        batch,
        source_return,
        random_return,
    })
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub path: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub meta: Metadata,
    /// Wall time of the computation; for a cache hit, the original run's.
    pub seconds: f64,
    pub cached: bool,
}

fn metadata(cfg: &ExperimentConfig, seed: u64, source: Option<&SourceData>) -> Metadata {
    let mut m: Metadata = vec![
        ("config_hash".into(), cfg.config_hash()),
        ("env_manifest_hash".into(), env_manifest_hash(cfg.env())),
        ("build_id".into(), BUILD_ID.into()),
        ("seed".into(), seed.to_string()),
        (
            "mode".into(),
            match cfg.mode {
                Mode::Train => "train".into(),
                Mode::Batch => "batch".into(),
            },
        ),
        ("env".into(), cfg.env().name().into()),
    ];
    match (&cfg.batch, source) {
        (Some(plan), Some(src)) => {
            m.push(("learner".into(), plan.config.learner.name().into()));
            m.push(("source".into(), plan.source.kind.name().into()));
            m.push(("statekl".into(), plan.config.statekl().to_string()));
            m.push(("source_return".into(), format!("{:?}", src.source_return)));
            m.push(("random_return".into(), format!("{:?}", src.random_return)));
        }
        _ => {
            let a = &cfg.train.agent;
            m.push(("algorithm".into(), a.algorithm.name().into()));
            m.push(("statekl".into(), a.statekl.to_string()));
            m.push(("lambda".into(), format!("{:?}", a.lambda)));
        }
    }
    m
}

/// File name of one seed's CSV inside the experiment's output directory.
pub fn seed_file(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.out.join(format!("{}-seed{seed}.csv", cfg.name))
}

/// Runs (or loads) one seed and writes its CSV. Batch-mode configs need
/// `source`.
pub fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    source: Option<&SourceData>,
    cache: Option<&RunCache>,
) -> Result<SeedRun, HarnessError> {
    let hash = cfg.config_hash();
    let csv_key = format!("seed-{seed}.csv");
    let secs_key = format!("seed-{seed}.secs");
    let path = seed_file(cfg, seed);

    let cached = cache.and_then(|c| {
        let bytes = c.get(&hash, &csv_key)?;
        let secs = c
            .get(&hash, &secs_key)
            .and_then(|s| String::from_utf8(s).ok()?.trim().parse().ok())
            .unwrap_or(f64::NAN);
        Some((bytes, secs))
    });
    let (bytes, seconds, hit) = match cached {
        Some((b, s)) => (b, s, true),
        None => {
            let start = Instant::now();
            let rows = match cfg.mode {
                Mode::Train => {
                    let tc = cfg.train_config(seed);
                    statekl_core::train::train(&tc)?.rows
                }
                Mode::Batch => {
                    let src = source.ok_or_else(|| {
                        HarnessError::Mode("batch runs need their source data".into())
                    })?;
                    let bc = cfg.batch_config(seed).expect("batch mode has a plan");
                    run_batch(&bc, cfg.env(), &src.batch)?.rows
                }
            };
            let secs = start.elapsed().as_secs_f64();
            let bytes = write_metrics(&metadata(cfg, seed, source), &rows);
            if let Some(c) = cache {
                c.put(&hash, &csv_key, &bytes)?;
                c.put(&hash, &secs_key, format!("{secs:.3}\n").as_bytes())?;
            }
            (bytes, secs, false)
        }
    };
    std::fs::create_dir_all(&cfg.out).map_err(|e| HarnessError::io(&cfg.out, e))?;
    std::fs::write(&path, &bytes).map_err(|e| HarnessError::io(&path, e))?;
    let (meta, rows) = read_metrics(&bytes)?;
    Ok(SeedRun {
        seed,
        path,
        rows,
        meta,
        seconds,
        cached: hit,
    })
}

/// One CSV per seed under `cfg.out`. `progress` sees each finished seed.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    cache: Option<&RunCache>,
    progress: &mut dyn FnMut(&SeedRun),
) -> Result<Vec<SeedRun>, HarnessError> {
    let source = match cfg.mode {
        Mode::Train => None,
        Mode::Batch => Some(prepare_source(cfg, cache)?),
    };
    let mut out = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let run = run_seed(cfg, seed, source.as_ref(), cache)?;
        progress(&run);
        out.push(run);
    }
    Ok(out)
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    cache: Option<&RunCache>,
) -> Result<Vec<SeedRun>, HarnessError> {
    run_experiment_with(cfg, cache, &mut |_| {})
}

/// Writes the configured batch and its reference returns into `dir`.
pub fn export_source(
    cfg: &ExperimentConfig,
    dir: &Path,
    cache: Option<&RunCache>,
) -> Result<(PathBuf, SourceData), HarnessError> {
    let src = prepare_source(cfg, cache)?;
    let plan = cfg.batch.as_ref().expect("prepare_source checked the mode");
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let stem = format!("{}-{}", cfg.name, plan.source.kind.name());
    let path = dir.join(format!("{stem}.batch"));
    std::fs::write(&path, src.batch.to_bytes()).map_err(|e| HarnessError::io(&path, e))?;
    let meta = dir.join(format!("{stem}.meta"));
    let text = format!(
        "source_hash={}\nsource_algorithm={}\ntransitions={}\nsource_return={:?}\nrandom_return={:?}\n",
        plan.source.run_hash(cfg.env()),
        Algorithm::name(plan.source.algorithm),
        src.batch.len(),
        src.source_return,
        src.random_return
    );
    std::fs::write(&meta, text).map_err(|e| HarnessError::io(&meta, e))?;
    Ok((path, src))
}
