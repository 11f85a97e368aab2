//! Pipeline stages. Each reads the previous stage's artifacts from the experiment
//! directory and writes its own:
//!
//! ```text
//! <out>/<name>/
//!   config.toml           effective configuration
//!   dataset/              train.csv, test.csv, sidecar.json (simulations only)
//!   models/               run_000.model ..., metrics.json
//!   scores/               run_000.json ..., <strategy>.csv, vargrad/run_000.csv
//!   summary.json
//!   report.json
//!   scores_long.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use blockrank::config::{ExperimentConfig, Mode};
use blockrank::experiment::{
    evaluate, for_each_run, rank_run, scores_long_csv, train_run, ExperimentData, RunRecord, Summary,
};
use blockrank::mann::{load_model, save_model, BlockSpec};
use blockrank::simgen::{generate, SimDataset};
use blockrank::stats::{performance_metrics, Metrics};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub struct Workspace {
    pub root: PathBuf,
    pub config: ExperimentConfig,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    pub run: usize,
    pub seed: u64,
    pub model_fingerprint: String,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub config_hash: String,
    pub runs: Vec<ModelMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub config_hash: String,
    pub record: RunRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRun {
    pub run: usize,
    pub seed: u64,
    pub model_fingerprint: String,
    pub metrics: Metrics,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub summary: Summary,
    pub runs: Vec<ReportRun>,
}

impl Workspace {
    pub fn new(out: &Path, config: ExperimentConfig) -> Self {
        Self { root: out.join(&config.name), hash: config.hash(), config }
    }

    fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }

    fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }

    fn scores_dir(&self) -> PathBuf {
        self.root.join("scores")
    }

    fn model_path(&self, run: usize) -> PathBuf {
        self.models_dir().join(format!("run_{run:03}.model"))
    }

    fn run_path(&self, run: usize) -> PathBuf {
        self.scores_dir().join(format!("run_{run:03}.json"))
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    fn write(&self, path: &Path, contents: &str) -> Result<(), CliError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        fs::write(path, contents).map_err(|e| CliError::io(path, e))
    }

    fn read(&self, path: &Path, hint: &'static str) -> Result<String, CliError> {
        if !path.exists() {
            return Err(CliError::MissingArtifact { path: path.to_path_buf(), hint });
        }
        fs::read_to_string(path).map_err(|e| CliError::io(path, e))
    }

    fn write_config(&self) -> Result<(), CliError> {
        let text = format!("# config_hash = \"{}\"\n{}", self.hash, self.config.to_toml_string());
        self.write(&self.root.join("config.toml"), &text)
    }

    /// The experiment's data: the exported simulation, or the ingested CSV.
    fn data(&self) -> Result<ExperimentData, CliError> {
        match self.config.mode {
            Mode::Simulate => {
                let dir = self.dataset_dir();
                let sidecar = dir.join("sidecar.json");
                if !sidecar.exists() {
                    return Err(CliError::MissingArtifact { path: sidecar, hint: "run `blockrank simulate` first" });
                }
                let data = SimDataset::import(&dir)?;
                let expected = self.config.simulation.as_ref().expect("validated").resolve(self.config.seed)?;
                if data.spec != expected {
                    log::warn!("dataset in {} was generated from a different simulation spec", dir.display());
                }
                Ok(ExperimentData::Simulated(data))
            }
            Mode::Ingest => Ok(ExperimentData::load(&self.config)?),
        }
    }

    pub fn simulate(&self) -> Result<(), CliError> {
        let Some(sim) = &self.config.simulation else {
            return Err(CliError::Config("`simulate` needs mode = \"simulate\"".into()));
        };
        let spec = sim.resolve(self.config.seed)?;
        let data = generate(&spec)?;
        data.export(&self.dataset_dir(), Some(&self.hash))?;
        self.write_config()?;
        log::info!("wrote {} train and {} test rows to {}", spec.n_train, spec.n_test, self.dataset_dir().display());
        Ok(())
    }

    pub fn train(&self) -> Result<(), CliError> {
        let data = self.data()?;
        self.write_config()?;
        fs::create_dir_all(self.models_dir()).map_err(|e| CliError::io(&self.models_dir(), e))?;
        let runs = for_each_run(self.config.n_runs, self.config.workers, |run| {
            let model = train_run(&data, &self.config, run)?;
            save_model(&model, self.model_path(run))?;
            let predictions = model.predict(data.test_x())?;
            log::info!("run {run}: final training loss {:.5}", model.training().final_loss);
            Ok(ModelMetrics {
                run,
                seed: self.config.run_seed(run),
                model_fingerprint: model.fingerprint(),
                initial_loss: model.training().initial_loss,
                final_loss: model.training().final_loss,
                metrics: performance_metrics(data.task(), data.test_y(), &predictions)?,
            })
        })?;
        let file = MetricsFile { config_hash: self.hash.clone(), runs };
        self.write(&self.models_dir().join("metrics.json"), &to_json(&file))
    }

    pub fn rank(&self) -> Result<(), CliError> {
        let data = self.data()?;
        for run in 0..self.config.n_runs {
            let path = self.model_path(run);
            if !path.exists() {
                return Err(CliError::MissingArtifact { path, hint: "run `blockrank train` first" });
            }
        }
        let scores = self.scores_dir();
        if scores.exists() {
            fs::remove_dir_all(&scores).map_err(|e| CliError::io(&scores, e))?;
        }
        let records = for_each_run(self.config.n_runs, self.config.workers, |run| {
            let model = load_model(self.model_path(run))?;
            rank_run(&model, &data, &self.config, run)
        })?;

        let names = data.block_spec().names();
        for record in &records {
            let file = RunFile { config_hash: self.hash.clone(), record: record.clone() };
            self.write(&self.run_path(record.run), &to_json(&file))?;
            if let Some(fi) = &record.feature_importance {
                let path = scores.join("vargrad").join(format!("run_{:03}.csv", record.run));
                self.write(&path, &format!("# config_hash={}\n{}", self.hash, fi.to_csv(data.block_spec())))?;
            }
        }
        for (si, strategy) in self.config.strategies.iter().enumerate() {
            let mut w = csv::Writer::from_writer(Vec::new());
            let row_err = |e: csv::Error| CliError::Data(e.to_string());
            w.write_record(["run", "block", "score", "normalized_score", "config_hash"]).map_err(row_err)?;
            for record in &records {
                for [block, _, score, norm] in record.blocks[si].csv_rows(&names) {
                    w.write_record([record.run.to_string(), block, score, norm, self.hash.clone()])
                        .map_err(row_err)?;
                }
            }
            let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
            self.write(&scores.join(format!("{strategy}.csv")), &String::from_utf8_lossy(&bytes))?;
        }
        Ok(())
    }

    fn records(&self) -> Result<Vec<RunRecord>, CliError> {
        (0..self.config.n_runs)
            .map(|run| {
                let path = self.run_path(run);
                let text = self.read(&path, "run `blockrank rank` first")?;
                let file: RunFile = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                Ok(file.record)
            })
            .collect()
    }

    fn block_spec_and_truth(&self) -> Result<(BlockSpec, Option<SimDataset>), CliError> {
        match self.data()? {
            ExperimentData::Simulated(d) => Ok((d.block_spec.clone(), Some(d))),
            ExperimentData::Ingested(d) => Ok((d.block_spec, None)),
        }
    }

    pub fn evaluate(&self) -> Result<Summary, CliError> {
        let records = self.records()?;
        let (block_spec, sim) = self.block_spec_and_truth()?;
        let truth = |s: blockrank::bir::Strategy| match &sim {
            Some(d) => Ok(Some(d.ground_truth_scores(s.paradigm())?)),
            None => Ok(None),
        };
        let summary = evaluate(&records, &block_spec, &self.config, &truth)?;
        self.write(&self.summary_path(), &summary.to_json())?;
        Ok(summary)
    }

    pub fn report(&self) -> Result<Report, CliError> {
        let text = self.read(&self.summary_path(), "run `blockrank evaluate` first")?;
        let summary: Summary = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("summary.json: {e}")))?;
        let records = self.records()?;
        let runs = records
            .iter()
            .map(|r| ReportRun {
                run: r.run,
                seed: r.seed,
                model_fingerprint: r.model_fingerprint.clone(),
                metrics: r.metrics.clone(),
                excluded: summary.is_excluded(r.run),
            })
            .collect();
        self.write(&self.root.join("scores_long.csv"), &scores_long_csv(&records, &summary))?;
        let report = Report { config_hash: self.hash.clone(), config: self.config.clone(), summary, runs };
        self.write(&self.report_path(), &to_json(&report))?;
        Ok(report)
    }

    pub fn run_all(&self) -> Result<Report, CliError> {
        if self.config.mode == Mode::Simulate {
            self.simulate()?;
        }
        self.train()?;
        self.rank()?;
        self.evaluate()?;
        self.report()
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s
}
