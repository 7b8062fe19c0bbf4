//! Metrics CSV files: `#`-prefixed `key=value` metadata, a header row, then
//! one row per evaluation point.

use std::path::Path;

use statekl_core::metrics::MetricsRow;

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad metadata line `{0}`")]
    Metadata(String),
    #[error("header is {found:?}, expected {expected:?}")]
    Header {
        found: Vec<String>,
        expected: Vec<String>,
    },
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Ordered `key=value` pairs written above the header.
pub type Metadata = Vec<(String, String)>;

pub fn meta_get<'a>(meta: &'a Metadata, key: &str) -> Option<&'a str> {
    meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

/// Shortest round-trip form; switches to exponent notation at extremes.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Rows must already have strictly increasing steps.
pub fn write_metrics(meta: &Metadata, rows: &[MetricsRow]) -> Vec<u8> {
    let mut out = Vec::new();
    for (k, v) in meta {
        out.extend_from_slice(format!("# {k}={v}\n").as_bytes());
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MetricsRow::COLUMNS)
        .expect("writing to memory");
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.episode.to_string(),
            num(r.eval_return),
            opt(r.actor_loss),
            opt(r.critic_loss),
            opt(r.elbo_mu),
            opt(r.elbo_pi),
            opt(r.kl_estimate),
        ])
        .expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

fn parse_meta(bytes: &[u8]) -> Result<Metadata, CsvError> {
    let text = String::from_utf8_lossy(bytes);
    let mut meta = Vec::new();
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| CsvError::Metadata(line.to_string()))?;
        meta.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(meta)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, row: usize) -> Result<T, CsvError>
where
    T::Err: std::fmt::Display,
{
    let s = rec.get(i).unwrap_or("");
    s.parse().map_err(|e| CsvError::Row {
        row,
        reason: format!("column {}: `{s}`: {e}", MetricsRow::COLUMNS[i]),
    })
}

fn opt_field(rec: &csv::StringRecord, i: usize, row: usize) -> Result<Option<f64>, CsvError> {
    match rec.get(i) {
        None | Some("") => Ok(None),
        Some(_) => field(rec, i, row).map(Some),
    }
}

pub fn read_metrics(bytes: &[u8]) -> Result<(Metadata, Vec<MetricsRow>), CsvError> {
    let meta = parse_meta(bytes)?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(bytes);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != MetricsRow::COLUMNS {
        return Err(CsvError::Header {
            found: header,
            expected: MetricsRow::COLUMNS.iter().map(|s| s.to_string()).collect(),
        });
    }
    let mut rows: Vec<MetricsRow> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = MetricsRow {
            step: field(&rec, 0, i)?,
            episode: field(&rec, 1, i)?,
            eval_return: field(&rec, 2, i)?,
            actor_loss: opt_field(&rec, 3, i)?,
            critic_loss: opt_field(&rec, 4, i)?,
            elbo_mu: opt_field(&rec, 5, i)?,
            elbo_pi: opt_field(&rec, 6, i)?,
            kl_estimate: opt_field(&rec, 7, i)?,
        };
        if let Some(prev) = rows.last() {
            if row.step <= prev.step {
                return Err(CsvError::Row {
                    row: i,
                    reason: format!("step {} does not follow {}", row.step, prev.step),
                });
            }
        }
        rows.push(row);
    }
    Ok((meta, rows))
}

pub fn read_metrics_file(path: &Path) -> Result<(Metadata, Vec<MetricsRow>), CsvError> {
    let bytes = std::fs::read(path).map_err(|source| CsvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_metrics(&bytes)
}
