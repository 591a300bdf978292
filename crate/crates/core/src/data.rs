//! Irregularly sampled series: synthetic sine generation, train/val/test
//! splits and a line-delimited JSON file format.
//!
//! Dataset files hold one record per line:
//!
//! ```text
//! {"t":[0.0,0.13,0.4],"x":[[0.1],[0.5],[0.9]]}
//! {"t":[0.0,0.2,0.5],"x":[[0.3],[0.2]],"y":[0.7]}
//! ```
//!
//! Without `y` the last observation is the prediction target. With `y`,
//! `x` holds one row fewer than `t` and the final time is where `y` is to
//! be predicted.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrregularSeries {
    #[serde(rename = "t")]
    pub times: Vec<f64>,
    #[serde(rename = "x")]
    pub values: Vec<Vec<f64>>,
    #[serde(rename = "y", default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Vec<f64>>,
}

/// An [`IrregularSeries`] split into model inputs and the prediction target.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub obs_times: &'a [f64],
    pub obs_values: &'a [Vec<f64>],
    pub prediction_time: f64,
    pub target: &'a [f64],
}

impl IrregularSeries {
    pub fn input_dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn output_dim(&self) -> usize {
        self.example().target.len()
    }

    pub fn validate(&self) -> Result<()> {
        let expected_rows = if self.target.is_some() {
            self.times.len().saturating_sub(1)
        } else {
            self.times.len()
        };
        if self.times.len() < 2 {
            return Err(Error::Data("a series needs at least two time points".into()));
        }
        if self.values.len() != expected_rows {
            return Err(Error::Data(format!(
                "expected {expected_rows} feature rows for {} times, got {}",
                self.times.len(),
                self.values.len()
            )));
        }
        if let Some(i) = self.times.iter().position(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Data(format!("time {} at index {i} is negative or non-finite", self.times[i])));
        }
        if let Some(i) = self.times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Data(format!(
                "non-increasing times at index {}: {} then {}",
                i + 1,
                self.times[i],
                self.times[i + 1]
            )));
        }
        let width = self.input_dim();
        if width == 0 {
            return Err(Error::Data("feature rows must not be empty".into()));
        }
        if self.values.iter().any(|r| r.len() != width) {
            return Err(Error::Data("feature rows have differing widths".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !self.values.iter().all(|r| finite(r)) || !self.target.as_deref().is_none_or(finite) {
            return Err(Error::Data("non-finite feature or target value".into()));
        }
        if self.target.as_ref().is_some_and(Vec::is_empty) {
            return Err(Error::Data("target must not be empty".into()));
        }
        Ok(())
    }

    /// Number of observations fed to a model.
    pub fn num_observations(&self) -> usize {
        self.times.len() - 1
    }

    pub fn example(&self) -> Example<'_> {
        let n = self.times.len() - 1;
        let target = match &self.target {
            Some(y) => y.as_slice(),
            None => &self.values[n],
        };
        Example {
            obs_times: &self.times[..n],
            obs_values: &self.values[..n],
            prediction_time: self.times[n],
            target,
        }
    }
}

/// Synthetic sine dataset recipe.
///
/// Each series samples `points_per_sequence` distinct times uniformly from
/// `interval`, snapped to multiples of `rounding`, and observes
/// `amplitude · sin(2π f (t − t₀))` with `f ~ U[frequency_range]` and
/// `t₀ ~ N(offset_mean, offset_sd)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineDatasetConfig {
    pub num_sequences: usize,
    pub points_per_sequence: usize,
    pub interval: (f64, f64),
    pub rounding: f64,
    pub amplitude: f64,
    pub frequency_range: (f64, f64),
    pub offset_mean: f64,
    pub offset_sd: f64,
    pub seed: u64,
}

impl Default for SineDatasetConfig {
    fn default() -> Self {
        SineDatasetConfig {
            num_sequences: 10_000,
            points_per_sequence: 50,
            interval: (0.0, 5.0),
            rounding: 0.001,
            amplitude: 1.0,
            frequency_range: (0.5, 1.0),
            offset_mean: 1.0,
            offset_sd: 0.1,
            seed: 0,
        }
    }
}

impl SineDatasetConfig {
    /// Inclusive range of grid indices inside the interval.
    fn tick_range(&self) -> (i64, i64) {
        let (lo, hi) = self.interval;
        let first = (lo / self.rounding - 1e-9).ceil() as i64;
        let last = (hi / self.rounding + 1e-9).floor() as i64;
        (first, last)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.interval;
        if !(self.rounding.is_finite() && self.rounding > 0.0) {
            return Err(Error::Config(format!("rounding grid must be positive, got {}", self.rounding)));
        }
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
            return Err(Error::Config(format!("time interval [{lo}, {hi}] is not ordered and non-negative")));
        }
        if self.points_per_sequence < 2 {
            return Err(Error::Config("need at least two points per sequence".into()));
        }
        let (f_lo, f_hi) = self.frequency_range;
        if !(f_lo.is_finite() && f_hi.is_finite() && f_lo <= f_hi) {
            return Err(Error::Config("frequency range is not ordered".into()));
        }
        if !(self.amplitude.is_finite() && self.offset_mean.is_finite()) {
            return Err(Error::Config("amplitude and offset mean must be finite".into()));
        }
        if !(self.offset_sd.is_finite() && self.offset_sd >= 0.0) {
            return Err(Error::Config("offset sd must be non-negative".into()));
        }
        let (first, last) = self.tick_range();
        let slots = (last - first + 1).max(0) as usize;
        if slots < self.points_per_sequence {
            return Err(Error::Config(format!(
                "rounding grid {} leaves {slots} slots in [{lo}, {hi}], fewer than {} points",
                self.rounding, self.points_per_sequence
            )));
        }
        Ok(())
    }
}

/// Generates the synthetic sine dataset. Series `i` draws from its own
/// ChaCha stream of `cfg.seed`, so output is reproducible and independent
/// of generation order.
pub fn generate_sine_dataset(cfg: &SineDatasetConfig) -> Result<Vec<IrregularSeries>> {
    cfg.validate()?;
    let (first, last) = cfg.tick_range();
    let (lo, hi) = cfg.interval;
    let offset = Normal::new(cfg.offset_mean, cfg.offset_sd)
        .map_err(|e| Error::Config(format!("offset distribution: {e}")))?;

    let series = (0..cfg.num_sequences)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            // Duplicates after rounding are redrawn until the count is exact.
            let mut ticks = BTreeSet::new();
            while ticks.len() < cfg.points_per_sequence {
                let t: f64 = rng.random_range(lo..=hi);
                let k = ((t / cfg.rounding).round() as i64).clamp(first, last);
                ticks.insert(k);
            }
            let freq = rng.random_range(cfg.frequency_range.0..=cfg.frequency_range.1);
            let t0 = offset.sample(&mut rng);
            let times: Vec<f64> = ticks.iter().map(|&k| k as f64 * cfg.rounding).collect();
            let values = times
                .iter()
                .map(|&t| vec![cfg.amplitude * (std::f64::consts::TAU * freq * (t - t0)).sin()])
                .collect();
            IrregularSeries {
                times,
                values,
                target: None,
            }
        })
        .collect();
    Ok(series)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

/// Shuffles `0..n` and cuts it 80:10:10. Validation and test get
/// `⌊n/10⌋` each; the remainder goes to training.
pub fn split_dataset(n: usize, seed: u64) -> Result<DatasetSplit> {
    if n < 10 {
        return Err(Error::Config(format!("need at least 10 sequences to split, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let tenth = n / 10;
    let test = idx.split_off(n - tenth);
    let val = idx.split_off(n - 2 * tenth);
    Ok(DatasetSplit { train: idx, val, test })
}

pub fn read_dataset_from(reader: impl BufRead) -> Result<Vec<IrregularSeries>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let series: IrregularSeries = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        series
            .validate()
            .map_err(|e| Error::Data(format!("line {line_no}: {}", strip_prefix(&e))))?;
        out.push(series);
    }
    Ok(out)
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Data(m) => m.clone(),
        other => other.to_string(),
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<IrregularSeries>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_from(BufReader::new(file))
}

pub fn write_dataset_to(mut writer: impl Write, series: &[IrregularSeries]) -> Result<()> {
    for s in series {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn write_dataset(path: impl AsRef<Path>, series: &[IrregularSeries]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset_to(&mut w, series)?;
    w.flush().map_err(|e| Error::io(path, e))
}
