use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// First line of every metrics file.
pub const METRICS_VERSION_LINE: &str = "# tdmpc-lab metrics v1";

pub const METRICS_COLUMNS: [&str; 17] = [
    "env_step",
    "updates",
    "episode_return",
    "eval_return",
    "model_loss",
    "consistency",
    "reward_ce",
    "value_ce",
    "policy_loss",
    "policy_q",
    "log_pi",
    "log_mu",
    "beta_eff",
    "scale",
    "value_estimate",
    "true_value",
    "error_ratio",
];

/// One logging interval. Quantities not measured in an interval are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub env_step: u64,
    pub updates: u64,
    /// Undiscounted return of the latest completed training episode.
    pub episode_return: f64,
    /// Mean undiscounted return of planner evaluation episodes.
    pub eval_return: f64,
    pub model_loss: f64,
    pub consistency: f64,
    pub reward_ce: f64,
    pub value_ce: f64,
    pub policy_loss: f64,
    pub policy_q: f64,
    pub log_pi: f64,
    pub log_mu: f64,
    pub beta_eff: f64,
    pub scale: f64,
    /// `E_{s~ρ0, a~π}[Q̂(s, a)]`.
    pub value_estimate: f64,
    /// Mean discounted return of the nominal policy from `ρ0`.
    pub true_value: f64,
    /// `(V̂ - V^π) / V^π`.
    pub error_ratio: f64,
}

impl Default for MetricsRow {
    fn default() -> Self {
        let n = f64::NAN;
        MetricsRow {
            env_step: 0,
            updates: 0,
            episode_return: n,
            eval_return: n,
            model_loss: n,
            consistency: n,
            reward_ce: n,
            value_ce: n,
            policy_loss: n,
            policy_q: n,
            log_pi: n,
            log_mu: n,
            beta_eff: n,
            scale: n,
            value_estimate: n,
            true_value: n,
            error_ratio: n,
        }
    }
}

impl MetricsRow {
    fn floats(&self) -> [f64; 15] {
        [
            self.episode_return,
            self.eval_return,
            self.model_loss,
            self.consistency,
            self.reward_ce,
            self.value_ce,
            self.policy_loss,
            self.policy_q,
            self.log_pi,
            self.log_mu,
            self.beta_eff,
            self.scale,
            self.value_estimate,
            self.true_value,
            self.error_ratio,
        ]
    }

    pub fn to_fields(&self) -> Vec<String> {
        let mut out = vec![self.env_step.to_string(), self.updates.to_string()];
        out.extend(self.floats().iter().map(|x| x.to_string()));
        out
    }

    fn from_fields(f: &[f64]) -> Self {
        MetricsRow {
            env_step: f[0] as u64,
            updates: f[1] as u64,
            episode_return: f[2],
            eval_return: f[3],
            model_loss: f[4],
            consistency: f[5],
            reward_ce: f[6],
            value_ce: f[7],
            policy_loss: f[8],
            policy_q: f[9],
            log_pi: f[10],
            log_mu: f[11],
            beta_eff: f[12],
            scale: f[13],
            value_estimate: f[14],
            true_value: f[15],
            error_ratio: f[16],
        }
    }

    /// Value of a column by name.
    pub fn column(&self, name: &str) -> Option<f64> {
        let i = METRICS_COLUMNS.iter().position(|c| *c == name)?;
        Some(match i {
            0 => self.env_step as f64,
            1 => self.updates as f64,
            k => self.floats()[k - 2],
        })
    }
}

/// Append-only metrics file, flushed after every row.
pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut f = BufWriter::new(File::create(path)?);
        writeln!(f, "{METRICS_VERSION_LINE}")?;
        let mut inner = csv::Writer::from_writer(f);
        inner.write_record(METRICS_COLUMNS).map_err(csv_err)?;
        inner.flush()?;
        Ok(MetricsWriter { inner })
    }

    /// Reopens an existing file for appending, keeping the first `keep`
    /// data rows and dropping the rest.
    pub fn resume(path: &Path, keep: usize) -> Result<Self> {
        let rows = read_metrics(path)?;
        let mut w = MetricsWriter::create(path)?;
        for r in rows.iter().take(keep) {
            w.write(r)?;
        }
        Ok(w)
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.to_fields()).map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line: 0, msg: format!("{other:?}") },
    }
}

/// Reads a metrics CSV, naming the offending line on malformed input.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    parse_metrics(&text)
}

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let first = text.lines().next().unwrap_or("");
    if first != METRICS_VERSION_LINE {
        return Err(Error::Parse { line: 1, msg: format!("expected '{METRICS_VERSION_LINE}', got '{first}'") });
    }
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Parse { line: 2, msg: e.to_string() })?.clone();
    if header.iter().ne(METRICS_COLUMNS.iter().copied()) {
        return Err(Error::Parse { line: 2, msg: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()) });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::Parse { line, msg: e.to_string() }
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let vals: Vec<f64> =
            rec.iter().map(|f| f.parse::<f64>().map_err(|_| Error::Parse { line, msg: format!("'{f}' is not a number") })).collect::<Result<_>>()?;
        rows.push(MetricsRow::from_fields(&vals));
    }
    Ok(rows)
}
