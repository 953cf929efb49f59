//! Per-episode and per-evaluation metrics in CSV form.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const HEADER: &str = "env_step,episode_return,eval_return_mean,eval_return_std,contrastive_loss,critic_loss,actor_loss,alpha,mean_intrinsic_reward,re_max,ri_max,wall_time_s";

/// One CSV row. Empty cells mean "not measured at this step".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub env_step: u64,
    pub episode_return: Option<f64>,
    pub eval_return_mean: Option<f64>,
    pub eval_return_std: Option<f64>,
    pub contrastive_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha: Option<f64>,
    pub mean_intrinsic_reward: Option<f64>,
    pub re_max: Option<f64>,
    pub ri_max: Option<f64>,
    pub wall_time_s: f64,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_cell(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Parse(format!("bad number {s:?}")))
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.env_step,
            cell(self.episode_return),
            cell(self.eval_return_mean),
            cell(self.eval_return_std),
            cell(self.contrastive_loss),
            cell(self.critic_loss),
            cell(self.actor_loss),
            cell(self.alpha),
            cell(self.mean_intrinsic_reward),
            cell(self.re_max),
            cell(self.ri_max),
            self.wall_time_s
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 12 {
            return Err(Error::Parse(format!("expected 12 fields, found {}", f.len())));
        }
        Ok(MetricsRow {
            env_step: f[0]
                .parse()
                .map_err(|_| Error::Parse(format!("bad env_step {:?}", f[0])))?,
            episode_return: parse_cell(f[1])?,
            eval_return_mean: parse_cell(f[2])?,
            eval_return_std: parse_cell(f[3])?,
            contrastive_loss: parse_cell(f[4])?,
            critic_loss: parse_cell(f[5])?,
            actor_loss: parse_cell(f[6])?,
            alpha: parse_cell(f[7])?,
            mean_intrinsic_reward: parse_cell(f[8])?,
            re_max: parse_cell(f[9])?,
            ri_max: parse_cell(f[10])?,
            wall_time_s: parse_cell(f[11])?.unwrap_or(0.0),
        })
    }
}

/// Running means of the update statistics between two rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateAverages {
    sums: [f64; 5],
    counts: [u64; 5],
}

impl UpdateAverages {
    const CONTRASTIVE: usize = 0;
    const CRITIC: usize = 1;
    const ACTOR: usize = 2;
    const ALPHA: usize = 3;
    const INTRINSIC: usize = 4;

    fn add(&mut self, i: usize, v: Option<f64>) {
        if let Some(v) = v {
            self.sums[i] += v;
            self.counts[i] += 1;
        }
    }

    fn mean(&self, i: usize) -> Option<f64> {
        (self.counts[i] > 0).then(|| self.sums[i] / self.counts[i] as f64)
    }

    pub fn record(&mut self, s: &UpdateStats) {
        self.add(Self::CONTRASTIVE, s.contrastive_loss);
        self.add(Self::CRITIC, Some(s.critic_loss));
        self.add(Self::ACTOR, s.actor_loss);
        self.add(Self::ALPHA, Some(s.alpha));
        self.add(Self::INTRINSIC, s.mean_intrinsic_reward);
    }

    /// Fills the loss columns of `row` and resets.
    pub fn drain_into(&mut self, row: &mut MetricsRow) {
        row.contrastive_loss = self.mean(Self::CONTRASTIVE);
        row.critic_loss = self.mean(Self::CRITIC);
        row.actor_loss = self.mean(Self::ACTOR);
        row.alpha = self.mean(Self::ALPHA);
        row.mean_intrinsic_reward = self.mean(Self::INTRINSIC);
        *self = UpdateAverages::default();
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.sums
            .iter()
            .copied()
            .chain(self.counts.iter().map(|&c| c as f64))
            .collect()
    }

    pub fn from_vec(v: &[f64]) -> Result<Self> {
        if v.len() != 10 {
            return Err(Error::Parse("update averages need 10 values".into()));
        }
        let mut a = UpdateAverages::default();
        a.sums.copy_from_slice(&v[..5]);
        for (c, &x) in a.counts.iter_mut().zip(&v[5..]) {
            *c = x as u64;
        }
        Ok(a)
    }
}

/// What one learner update reports.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub contrastive_loss: Option<f64>,
    pub critic_loss: f64,
    pub actor_loss: Option<f64>,
    pub alpha: f64,
    pub mean_intrinsic_reward: Option<f64>,
}

/// CSV file plus an in-memory copy of everything written, which is what
/// checkpoints store so that a resumed run can rewrite the file exactly.
pub struct MetricsLog {
    out: BufWriter<File>,
    text: String,
    last_step: Option<u64>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        Self::with_contents(path, &format!("{HEADER}\n"))
    }

    /// Rewrites `path` with previously logged `text` and continues after it.
    pub fn with_contents(path: &Path, text: &str) -> Result<Self> {
        if !text.starts_with(HEADER) {
            return Err(Error::Parse("metrics text does not start with the expected header".into()));
        }
        let last_step = text
            .lines()
            .skip(1)
            .last()
            .map(|l| MetricsRow::from_csv(l).map(|r| r.env_step))
            .transpose()?;
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(text.as_bytes())?;
        out.flush()?;
        Ok(MetricsLog {
            out,
            text: text.to_owned(),
            last_step,
        })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        if self.last_step.is_some_and(|s| row.env_step <= s) {
            return Err(Error::Contract(format!(
                "metrics rows must have increasing env_step, got {} after {:?}",
                row.env_step, self.last_step
            )));
        }
        let line = row.to_csv();
        writeln!(self.out, "{line}")?;
        self.out.flush()?;
        self.text.push_str(&line);
        self.text.push('\n');
        self.last_step = Some(row.env_step);
        Ok(())
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Reads a metrics file, skipping malformed rows with a warning.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 && line.starts_with("env_step") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        match MetricsRow::from_csv(line) {
            Ok(r) => rows.push(r),
            Err(e) => log::warn!("{}:{}: skipping malformed row: {e}", path.display(), n + 1),
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_round_trip() {
        let row = MetricsRow {
            env_step: 250,
            episode_return: Some(12.5),
            critic_loss: Some(0.1),
            alpha: Some(0.0999),
            re_max: Some(1.0),
            ..MetricsRow::default()
        };
        let line = row.to_csv();
        assert_eq!(line, "250,12.5,,,,0.1,,0.0999,,1,,0");
        assert_eq!(MetricsRow::from_csv(&line).unwrap(), row);
    }

    #[test]
    fn header_has_twelve_columns() {
        assert_eq!(HEADER.split(',').count(), 12);
    }

    #[test]
    fn averages_drain() {
        let mut a = UpdateAverages::default();
        a.record(&UpdateStats {
            critic_loss: 1.0,
            alpha: 0.1,
            ..UpdateStats::default()
        });
        a.record(&UpdateStats {
            critic_loss: 3.0,
            actor_loss: Some(-2.0),
            alpha: 0.1,
            ..UpdateStats::default()
        });
        let mut row = MetricsRow::default();
        a.drain_into(&mut row);
        assert_eq!(row.critic_loss, Some(2.0));
        assert_eq!(row.actor_loss, Some(-2.0));
        assert_eq!(row.contrastive_loss, None);
        assert_eq!(a, UpdateAverages::default());
    }
}
