//! Per-episode results, run means, and running means with standard-error bands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BAND_Z: f64 = 1.96;

pub const SE_NOTE: &str = "Bands are mean ± 1.96·SE where SE is the sample standard deviation of the \
first t episodes divided by sqrt(t). Episodes of an adapting agent are not independent, so the bands \
are descriptive and are not corrected for that dependence.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode: u32,
    pub case_id: u64,
    #[serde(rename = "S")]
    pub score: u32,
    #[serde(rename = "T")]
    pub turns: u32,
    #[serde(rename = "C")]
    pub cost: f64,
    pub diagnose_seconds: f64,
    pub update_seconds: f64,
    pub forced: bool,
    pub graded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningSeries {
    pub mean: Vec<f64>,
    /// None at t = 1, where the sample deviation is undefined.
    pub se: Vec<Option<f64>>,
}

impl RunningSeries {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn band(&self, i: usize) -> Option<(f64, f64)> {
        let se = self.se.get(i).copied().flatten()?;
        let m = self.mean[i];
        Some((m - BAND_Z * se, m + BAND_Z * se))
    }
}

/// Cumulative means and Welford standard errors over a stream.
pub fn running(values: &[f64]) -> RunningSeries {
    let mut mean = Vec::with_capacity(values.len());
    let mut se = Vec::with_capacity(values.len());
    let (mut sum, mut w_mean, mut m2) = (0.0, 0.0, 0.0);
    for (i, &x) in values.iter().enumerate() {
        let t = (i + 1) as f64;
        sum += x;
        mean.push(sum / t);
        let delta = x - w_mean;
        w_mean += delta / t;
        m2 += delta * (x - w_mean);
        se.push((i > 0).then(|| (m2 / (t - 1.0)).max(0.0).sqrt() / t.sqrt()));
    }
    RunningSeries { mean, se }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub episodes: usize,
    #[serde(rename = "mean_S")]
    pub mean_s: f64,
    #[serde(rename = "mean_T")]
    pub mean_t: f64,
    #[serde(rename = "mean_C")]
    pub mean_c: f64,
    #[serde(rename = "running_S")]
    pub running_s: RunningSeries,
    #[serde(rename = "running_C")]
    pub running_c: RunningSeries,
    pub mean_diagnose_seconds: f64,
    pub mean_update_seconds: f64,
    pub se_note: String,
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

pub fn compute_metrics(results: &[EpisodeResult]) -> Result<RunMetrics> {
    if results.is_empty() {
        return Err(Error::Metrics("no episode results".into()));
    }
    let n = results.len();
    let (scores, costs) = score_and_cost(results);
    Ok(RunMetrics {
        episodes: n,
        mean_s: mean(scores.iter().copied(), n),
        mean_t: mean(results.iter().map(|r| f64::from(r.turns)), n),
        mean_c: mean(costs.iter().copied(), n),
        running_s: running(&scores),
        running_c: running(&costs),
        mean_diagnose_seconds: mean(results.iter().map(|r| r.diagnose_seconds), n),
        mean_update_seconds: mean(results.iter().map(|r| r.update_seconds), n),
        se_note: SE_NOTE.into(),
    })
}

fn score_and_cost(results: &[EpisodeResult]) -> (Vec<f64>, Vec<f64>) {
    (
        results.iter().map(|r| f64::from(r.score)).collect(),
        results.iter().map(|r| r.cost).collect(),
    )
}

/// Running S and C series.
pub fn running_series(results: &[EpisodeResult]) -> Result<(RunningSeries, RunningSeries)> {
    if results.is_empty() {
        return Err(Error::Metrics("no episode results".into()));
    }
    let (scores, costs) = score_and_cost(results);
    Ok((running(&scores), running(&costs)))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per t with running means, SEs and band edges.
pub fn curves_csv(metrics: &RunMetrics) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header = [
        "t", "mean_S", "se_S", "lower_S", "upper_S", "mean_C", "se_C", "lower_C", "upper_C",
    ];
    w.write_record(header).map_err(csv_err)?;
    for i in 0..metrics.running_s.len() {
        let (s, c) = (&metrics.running_s, &metrics.running_c);
        w.write_record([
            (i + 1).to_string(),
            s.mean[i].to_string(),
            opt(s.se[i]),
            opt(s.band(i).map(|b| b.0)),
            opt(s.band(i).map(|b| b.1)),
            c.mean[i].to_string(),
            opt(c.se[i]),
            opt(c.band(i).map(|b| b.0)),
            opt(c.band(i).map(|b| b.1)),
        ])
        .map_err(csv_err)?;
    }
    into_string(w)
}

pub fn results_csv(results: &[EpisodeResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(r).map_err(csv_err)?;
    }
    into_string(w)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Metrics(e.to_string())
}

fn into_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Metrics(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Metrics(e.to_string()))
}
