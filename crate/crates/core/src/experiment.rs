//! End-to-end experiment runs, report files and report comparison.
//!
//! A report is line-delimited JSON: one `header` record echoing the
//! configuration, one `epoch` record per training epoch, and a closing
//! `summary` record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_sine_dataset, read_dataset, split_dataset, IrregularSeries, SineDatasetConfig};
use crate::error::{Error, Result};
use crate::models::{Model, ModelKind};
use crate::training::{timing_summary, train_with, EpochRecord, TimingSummary, TrainConfig};

/// Artifact version recorded in every report.
pub fn version() -> String {
    match option_env!("ODERNN_GIT_REV") {
        Some(rev) => format!("{}-g{rev}", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DatasetSource {
    Sine(SineDatasetConfig),
    File { path: PathBuf },
}

impl DatasetSource {
    pub fn load(&self) -> Result<Vec<IrregularSeries>> {
        match self {
            DatasetSource::Sine(cfg) => generate_sine_dataset(cfg),
            DatasetSource::File { path } => read_dataset(path),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub model: ModelKind,
    pub train: TrainConfig,
    pub hidden: usize,
    /// Seeds the split and the weight initialisation.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for `model` on the synthetic sine data.
    pub fn new(model: ModelKind) -> Self {
        ExperimentConfig {
            dataset: DatasetSource::Sine(SineDatasetConfig::default()),
            model,
            train: TrainConfig::for_model(&model),
            hidden: 10,
            seed: 0,
            out: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.hidden == 0 {
            return Err(Error::Config("hidden size must be positive".into()));
        }
        if let DatasetSource::Sine(cfg) = &self.dataset {
            cfg.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub version: String,
    pub config: ExperimentConfig,
    pub split_sizes: [usize; 3],
    pub epochs: Vec<EpochRecord>,
    pub summary: RunSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub total_epochs: usize,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub test_mse: Option<f64>,
    /// Wall time per epoch, first epoch excluded.
    pub timing: Option<TimingSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
enum ReportLine {
    Header {
        version: String,
        config: ExperimentConfig,
        split_sizes: [usize; 3],
    },
    Epoch(EpochRecord),
    Summary(RunSummary),
}

impl RunReport {
    pub fn completed(&self) -> bool {
        self.summary.status == RunStatus::Completed
    }

    pub fn wall_times(&self) -> Vec<f64> {
        self.epochs.iter().map(|r| r.wall_time_secs).collect()
    }

    /// Copy with every wall-clock field cleared. Two runs of the same
    /// configuration agree exactly on this view.
    pub fn without_timing(&self) -> RunReport {
        let mut r = self.clone();
        for e in &mut r.epochs {
            e.wall_time_secs = 0.0;
        }
        r.summary.timing = None;
        r
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = ReportLine::Header {
            version: self.version.clone(),
            config: self.config.clone(),
            split_sizes: self.split_sizes,
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w).map_err(|e| Error::io("<report>", e))?;
        for e in &self.epochs {
            serde_json::to_writer(&mut w, &ReportLine::Epoch(*e))?;
            writeln!(w).map_err(|e| Error::io("<report>", e))?;
        }
        serde_json::to_writer(&mut w, &ReportLine::Summary(self.summary.clone()))?;
        writeln!(w).map_err(|e| Error::io("<report>", e))?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_from(r: impl BufRead) -> Result<RunReport> {
        let mut header = None;
        let mut epochs = Vec::new();
        let mut summary = None;
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<report>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ReportLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            match parsed {
                ReportLine::Header {
                    version,
                    config,
                    split_sizes,
                } => header = Some((version, config, split_sizes)),
                ReportLine::Epoch(e) => epochs.push(e),
                ReportLine::Summary(s) => summary = Some(s),
            }
        }
        let (version, config, split_sizes) = header.ok_or_else(|| Error::Data("report has no header record".into()))?;
        let summary = summary.ok_or_else(|| Error::Data("report has no summary record".into()))?;
        Ok(RunReport {
            version,
            config,
            split_sizes,
            epochs,
            summary,
        })
    }
}

pub fn write_report(path: impl AsRef<Path>, report: &RunReport) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    report.write_to(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a report file. Any failure names the file.
pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    RunReport::read_from(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => Error::Data(format!("{}: {other}", path.display())),
    })
}

/// Loads data, splits it, trains and scores the model. A divergent run
/// still yields a report, flagged [`RunStatus::Diverged`]. The report is
/// written to `cfg.out` when set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_experiment_with(cfg, |_| {})
}

pub fn run_experiment_with(cfg: &ExperimentConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<RunReport> {
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    let first = data.first().ok_or_else(|| Error::Data("dataset is empty".into()))?;
    let split = split_dataset(data.len(), cfg.seed)?;
    let mut model = Model::new(cfg.model, first.input_dim(), first.output_dim(), cfg.hidden, cfg.seed)?;

    let (epochs, summary) = match train_with(&mut model, &data, &split, &cfg.train, on_epoch) {
        Ok(out) => {
            let summary = RunSummary {
                status: RunStatus::Completed,
                total_epochs: out.epochs(),
                best_epoch: Some(out.best_epoch),
                best_val_loss: Some(out.best_val_loss),
                test_mse: Some(out.test_mse),
                timing: out.timing(),
                message: None,
            };
            (out.records, summary)
        }
        Err(Error::Diverged { epoch, reason, records }) => {
            let times: Vec<f64> = records.iter().map(|r| r.wall_time_secs).collect();
            let best = records.iter().min_by(|a, b| a.val_loss.total_cmp(&b.val_loss));
            let summary = RunSummary {
                status: RunStatus::Diverged,
                total_epochs: records.len(),
                best_epoch: best.map(|r| r.epoch),
                best_val_loss: best.map(|r| r.val_loss),
                test_mse: None,
                timing: timing_summary(&times),
                message: Some(format!("diverged at epoch {epoch}: {reason}")),
            };
            (records, summary)
        }
        Err(e) => return Err(e),
    };

    let report = RunReport {
        version: version(),
        config: cfg.clone(),
        split_sizes: split.sizes(),
        epochs,
        summary,
    };
    if let Some(path) = &cfg.out {
        write_report(path, &report)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub model: String,
    pub mode: String,
    pub test_mse: Option<f64>,
    pub epoch_mean_secs: Option<f64>,
    pub epoch_sd_secs: Option<f64>,
    /// Baseline mean epoch time over this row's.
    pub speedup: Option<f64>,
}

impl SummaryRow {
    /// Display strings, shared by the console table and the CSV so both
    /// carry the same values.
    pub fn cells(&self) -> [String; 7] {
        fn fmt(v: Option<f64>, prec: usize) -> String {
            v.map_or_else(|| "-".to_string(), |v| format!("{v:.prec$}"))
        }
        [
            self.label.clone(),
            self.model.clone(),
            self.mode.clone(),
            fmt(self.test_mse, 6),
            fmt(self.epoch_mean_secs, 4),
            fmt(self.epoch_sd_secs, 4),
            fmt(self.speedup, 2),
        ]
    }
}

pub const SUMMARY_COLUMNS: [&str; 7] = [
    "report",
    "model",
    "mode",
    "test_mse",
    "epoch_mean_s",
    "epoch_sd_s",
    "speedup",
];

fn mode_label(kind: &ModelKind) -> String {
    match kind {
        ModelKind::SimpleRnn => "-".into(),
        ModelKind::Odernn { evolver } => evolver.mode().as_str().into(),
        ModelKind::CombinedTime { .. } => "fixed-dt".into(),
    }
}

/// One row per report, with speed-up measured against `reports[baseline]`.
pub fn compare(reports: &[(String, RunReport)], baseline: usize) -> Result<Vec<SummaryRow>> {
    if reports.len() < 2 {
        return Err(Error::Config(format!("need at least two reports, got {}", reports.len())));
    }
    let base = reports
        .get(baseline)
        .ok_or_else(|| Error::Config(format!("baseline index {baseline} out of range")))?;
    let base_mean = base.1.summary.timing.map(|t| t.mean_secs);
    Ok(reports
        .iter()
        .map(|(label, r)| {
            let mean = r.summary.timing.map(|t| t.mean_secs);
            SummaryRow {
                label: label.clone(),
                model: r.config.model.name().into(),
                mode: mode_label(&r.config.model),
                test_mse: r.summary.test_mse,
                epoch_mean_secs: mean,
                epoch_sd_secs: r.summary.timing.map(|t| t.sd_secs),
                speedup: base_mean.zip(mean).map(|(b, m)| b / m),
            }
        })
        .collect())
}

pub fn render_table(rows: &[SummaryRow]) -> String {
    let cells: Vec<[String; 7]> = rows.iter().map(SummaryRow::cells).collect();
    let mut widths = SUMMARY_COLUMNS.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |items: &[&str]| {
        let parts: Vec<String> = items.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&SUMMARY_COLUMNS);
    for row in &cells {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

pub fn write_csv(w: impl Write, rows: &[SummaryRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let to_err = |e: csv::Error| Error::Data(format!("csv: {e}"));
    csv.write_record(SUMMARY_COLUMNS).map_err(to_err)?;
    for row in rows {
        csv.write_record(row.cells()).map_err(to_err)?;
    }
    csv.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn render_csv(rows: &[SummaryRow]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv of UTF-8 cells is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolver::EvolverConfig;

    fn small(model: ModelKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(model);
        cfg.dataset = DatasetSource::Sine(SineDatasetConfig {
            num_sequences: 30,
            points_per_sequence: 8,
            rounding: 0.1,
            ..SineDatasetConfig::default()
        });
        cfg.train.min_epochs = 3;
        cfg.train.max_epochs = 4;
        cfg.train.batch_size = 10;
        cfg.hidden = 4;
        cfg
    }

    fn fake(mean: f64) -> RunReport {
        let mut r = run_experiment(&small(ModelKind::SimpleRnn)).unwrap();
        r.summary.timing = Some(TimingSummary {
            mean_secs: mean,
            sd_secs: 0.5,
            epochs: 3,
        });
        r
    }

    #[test]
    fn report_round_trips() {
        let r = run_experiment(&small(ModelKind::Odernn {
            evolver: EvolverConfig::AdaptiveFixed { num_steps: 2 },
        }))
        .unwrap();
        assert!(r.completed());
        assert!(r.summary.test_mse.unwrap().is_finite());
        assert!(r.epochs.len() >= 3);
        let back = RunReport::read_from(r.to_jsonl().as_bytes()).unwrap();
        assert_eq!(back, r);
        let t = timing_summary(&r.wall_times()).unwrap();
        assert!((t.mean_secs - r.summary.timing.unwrap().mean_secs).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_report() {
        let cfg = small(ModelKind::CombinedTime { step_size: 0.1 });
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.summary.test_mse, b.summary.test_mse);
        assert_eq!(a.without_timing().to_jsonl(), b.without_timing().to_jsonl());
    }

    #[test]
    fn compare_speedups() {
        let rows = compare(&[("a".into(), fake(10.0)), ("b".into(), fake(10.0))], 0).unwrap();
        assert_eq!(rows[1].cells()[6], "1.00");
        let rows = compare(&[("base".into(), fake(10.0)), ("fast".into(), fake(2.0))], 0).unwrap();
        assert_eq!(rows[1].cells()[6], "5.00");
        assert!(compare(&[("only".into(), fake(1.0))], 0).is_err());
    }

    #[test]
    fn table_and_csv_agree() {
        let rows = compare(&[("base".into(), fake(10.0)), ("fast".into(), fake(2.5))], 0).unwrap();
        let table = render_table(&rows);
        let csv = render_csv(&rows);
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        for (rec, row) in reader.records().zip(&rows) {
            let rec = rec.unwrap();
            let cells = row.cells();
            assert_eq!(rec.iter().collect::<Vec<_>>(), cells.iter().map(String::as_str).collect::<Vec<_>>());
            for c in &cells {
                assert!(table.contains(c.as_str()));
            }
        }
    }

    #[test]
    fn unreadable_report_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        let msg = read_report(&path).unwrap_err().to_string();
        assert!(msg.contains("broken.jsonl"), "{msg}");
        let missing = dir.path().join("missing.jsonl");
        assert!(read_report(&missing).unwrap_err().to_string().contains("missing.jsonl"));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = small(ModelKind::SimpleRnn);
        cfg.hidden = 0;
        assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
        let cfg = small(ModelKind::CombinedTime { step_size: -1.0 });
        assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_yields_flagged_report() {
        let mut cfg = small(ModelKind::SimpleRnn);
        cfg.train.learning_rate = 1e300;
        let dir = tempfile::tempdir().unwrap();
        cfg.out = Some(dir.path().join("r.jsonl"));
        let r = run_experiment(&cfg).unwrap();
        assert_eq!(r.summary.status, RunStatus::Diverged);
        assert!(r.summary.test_mse.is_none());
        assert_eq!(read_report(cfg.out.as_ref().unwrap()).unwrap(), r);
    }
}
