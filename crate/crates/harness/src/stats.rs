//! Cross-seed aggregation and significance tests.

use std::fmt;
use std::path::{Path, PathBuf};

use statekl_core::metrics::{final_window_mean, MetricsRow};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("eval steps differ from {reference}: {}", list(.offending))]
    Misaligned {
        reference: PathBuf,
        offending: Vec<PathBuf>,
    },
    #[error("need at least 2 runs per group, got {a} and {b}")]
    TooFewRuns { a: usize, b: usize },
    #[error("runs without rows: {}", list(.0))]
    EmptyRuns(Vec<PathBuf>),
    #[error("curve table: {0}")]
    Table(String),
}

fn list(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n − 1 denominator; 0 for a single value.
pub fn sample_var(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Per-eval-point mean, sample std and seed count of `eval_return`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub label: String,
    pub steps: Vec<u64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub n: Vec<usize>,
}

impl CurveTable {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "mean", "std", "n"])
            .expect("writing to memory");
        for i in 0..self.len() {
            w.write_record([
                self.steps[i].to_string(),
                format!("{:?}", self.mean[i]),
                format!("{:?}", self.std[i]),
                self.n[i].to_string(),
            ])
            .expect("writing to memory");
        }
        w.into_inner().expect("flushing to memory")
    }

    pub fn from_csv(label: &str, bytes: &[u8]) -> Result<Self, StatsError> {
        let bad = |e: &dyn fmt::Display| StatsError::Table(e.to_string());
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(bytes);
        let header = rdr.headers().map_err(|e| bad(&e))?.clone();
        if header.iter().collect::<Vec<_>>() != ["step", "mean", "std", "n"] {
            return Err(StatsError::Table(format!("unexpected header {header:?}")));
        }
        let mut t = CurveTable {
            label: label.to_string(),
            steps: Vec::new(),
            mean: Vec::new(),
            std: Vec::new(),
            n: Vec::new(),
        };
        for rec in rdr.records() {
            let rec = rec.map_err(|e| bad(&e))?;
            let get = |i: usize| rec.get(i).unwrap_or("");
            t.steps.push(get(0).parse().map_err(|e| bad(&e))?);
            t.mean.push(get(1).parse().map_err(|e| bad(&e))?);
            t.std.push(get(2).parse().map_err(|e| bad(&e))?);
            t.n.push(get(3).parse().map_err(|e| bad(&e))?);
        }
        Ok(t)
    }
}

/// One run's rows tagged with the file they came from.
#[derive(Debug, Clone)]
pub struct RunRows {
    pub path: PathBuf,
    pub rows: Vec<MetricsRow>,
}

pub fn aggregate(label: &str, runs: &[RunRows]) -> Result<CurveTable, StatsError> {
    let first = runs.first().ok_or(StatsError::NoRuns)?;
    let steps: Vec<u64> = first.rows.iter().map(|r| r.step).collect();
    let offending: Vec<PathBuf> = runs
        .iter()
        .filter(|r| !r.rows.iter().map(|x| x.step).eq(steps.iter().copied()))
        .map(|r| r.path.clone())
        .collect();
    if !offending.is_empty() {
        return Err(StatsError::Misaligned {
            reference: first.path.clone(),
            offending,
        });
    }
    let mut t = CurveTable {
        label: label.to_string(),
        steps: steps.clone(),
        mean: Vec::with_capacity(steps.len()),
        std: Vec::with_capacity(steps.len()),
        n: vec![runs.len(); steps.len()],
    };
    for i in 0..steps.len() {
        let xs: Vec<f64> = runs.iter().map(|r| r.rows[i].eval_return).collect();
        t.mean.push(mean(&xs));
        t.std.push(sample_var(&xs).sqrt());
    }
    Ok(t)
}

/// Final-window mean return of each run, in input order.
pub fn final_window_means(runs: &[RunRows], window: usize) -> Result<Vec<f64>, StatsError> {
    let empty: Vec<PathBuf> = runs
        .iter()
        .filter(|r| r.rows.is_empty())
        .map(|r| r.path.clone())
        .collect();
    if !empty.is_empty() {
        return Err(StatsError::EmptyRuns(empty));
    }
    Ok(runs
        .iter()
        .map(|r| final_window_mean(&r.rows, window).expect("nonempty rows"))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AGreater,
    BGreater,
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Welch,
    /// Both groups have zero variance and equal means.
    EqualSamples,
    /// Both groups have zero variance and different means.
    DeterministicSeparation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub std_a: f64,
    pub std_b: f64,
    /// Welch statistic for `mean_b − mean_a`; `None` for the fallbacks.
    pub t: Option<f64>,
    pub df: Option<f64>,
    /// Two-sided.
    pub p: f64,
    pub method: Method,
    pub direction: Direction,
}

/// Welch's unequal-variance t-test on two groups of per-seed scores.
pub fn compare(a: &[f64], b: &[f64]) -> Result<Report, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewRuns {
            a: a.len(),
            b: b.len(),
        });
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (sample_var(a), sample_var(b));
    let direction = if mb > ma {
        Direction::BGreater
    } else if ma > mb {
        Direction::AGreater
    } else {
        Direction::Equal
    };
    let mut report = Report {
        n_a: a.len(),
        n_b: b.len(),
        mean_a: ma,
        mean_b: mb,
        std_a: va.sqrt(),
        std_b: vb.sqrt(),
        t: None,
        df: None,
        p: 1.0,
        method: Method::EqualSamples,
        direction,
    };
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        if ma != mb {
            report.p = 0.0;
            report.method = Method::DeterministicSeparation;
        }
        return Ok(report);
    }
    let t = (mb - ma) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive and finite");
    report.t = Some(t);
    report.df = Some(df);
    report.p = (2.0 * dist.sf(t.abs())).min(1.0);
    report.method = Method::Welch;
    Ok(report)
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "a: n={} mean={:.4} std={:.4}",
            self.n_a, self.mean_a, self.std_a
        )?;
        writeln!(
            f,
            "b: n={} mean={:.4} std={:.4}",
            self.n_b, self.mean_b, self.std_b
        )?;
        let dir = match self.direction {
            Direction::AGreater => "a>b",
            Direction::BGreater => "b>a",
            Direction::Equal => "a=b",
        };
        match self.method {
            Method::Welch => write!(
                f,
                "welch t={:.4} df={:.2} p={:.6} direction={dir}",
                self.t.unwrap_or(f64::NAN),
                self.df.unwrap_or(f64::NAN),
                self.p
            ),
            Method::EqualSamples => write!(f, "zero variance, equal samples: p=1 direction={dir}"),
            Method::DeterministicSeparation => write!(
                f,
                "zero variance, deterministic separation: p=0 direction={dir}"
            ),
        }
    }
}

/// Reads every `*.csv` in `dir`, sorted by file name.
pub fn read_run_dir(dir: &Path) -> Result<Vec<RunRows>, crate::HarnessError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| crate::HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let (_, rows) = crate::csvio::read_metrics_file(&path)?;
            Ok(RunRows { path, rows })
        })
        .collect()
}
