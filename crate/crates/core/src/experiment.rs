//! Repeated-run experiments: train one model per seed, score blocks with every
//! requested strategy, filter poor runs and summarize.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bir::{
    composite, knock_in_score, knock_out_score, pseudo_outputs, Aggregate, BirError, BlockImportance, Strategy,
};
use crate::config::{ConfigError, ExperimentConfig, Mode};
use crate::ingest::{ingest, IngestError, IngestedDataset};
use crate::mann::{train, BlockSpec, MannError, MannModel, TrainConfig};
use crate::matrix::Matrix;
use crate::simgen::{generate, SimDataset, SimError};
use crate::stats::{
    self, filter_runs, performance_metrics, spearman, tie_group_ranking, untested_ranking, Exclusion, Metrics,
    StatsError, Task, TieGroupRanking,
};
use crate::vargrad::{vargrad, EvalSplit, FeatureImportance, VarGradConfig};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Model(#[from] MannError),
    #[error(transparent)]
    Ranking(#[from] BirError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("run records disagree: {0}")]
    InconsistentRuns(String),
}

/// The dataset shared by every run of an experiment.
#[derive(Debug, Clone)]
pub enum ExperimentData {
    Simulated(SimDataset),
    Ingested(IngestedDataset),
}

impl ExperimentData {
    pub fn load(config: &ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        match config.mode {
            Mode::Simulate => {
                let spec = config.simulation.as_ref().expect("validated").resolve(config.seed)?;
                Ok(Self::Simulated(generate(&spec)?))
            }
            Mode::Ingest => Ok(Self::Ingested(ingest(config.data.as_ref().expect("validated"), config.seed)?)),
        }
    }

    pub fn train_x(&self) -> &Matrix {
        match self {
            Self::Simulated(d) => &d.train_x,
            Self::Ingested(d) => &d.train_x,
        }
    }

    pub fn train_y(&self) -> &[f64] {
        match self {
            Self::Simulated(d) => &d.train_y,
            Self::Ingested(d) => &d.train_y,
        }
    }

    pub fn test_x(&self) -> &Matrix {
        match self {
            Self::Simulated(d) => &d.test_x,
            Self::Ingested(d) => &d.test_x,
        }
    }

    pub fn test_y(&self) -> &[f64] {
        match self {
            Self::Simulated(d) => &d.test_y,
            Self::Ingested(d) => &d.test_y,
        }
    }

    pub fn block_spec(&self) -> &BlockSpec {
        match self {
            Self::Simulated(d) => &d.block_spec,
            Self::Ingested(d) => &d.block_spec,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Self::Simulated(_) => Task::Regression,
            Self::Ingested(d) => d.task,
        }
    }

    /// Reference block scores for `strategy`; only simulated data has them.
    pub fn ground_truth(&self, strategy: Strategy) -> Result<Option<Vec<f64>>, ExperimentError> {
        match self {
            Self::Simulated(d) => Ok(Some(d.ground_truth_scores(strategy.paradigm())?)),
            Self::Ingested(_) => Ok(None),
        }
    }
}

/// Everything computed for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub model_fingerprint: String,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub metrics: Metrics,
    pub feature_importance: Option<FeatureImportance>,
    /// Raw block scores, one entry per requested strategy in config order.
    pub blocks: Vec<BlockImportance>,
}

/// Trains the model of run `run` with seed `config.run_seed(run)`.
pub fn train_run(data: &ExperimentData, config: &ExperimentConfig, run: usize) -> Result<MannModel, ExperimentError> {
    let arch = config.architecture.build(data.block_spec(), data.task());
    let training = TrainConfig { seed: config.run_seed(run), ..config.training.clone() };
    let mut model = train(data.train_x(), data.train_y(), data.block_spec(), &arch, &training)?;
    model.set_config_hash(config.hash());
    Ok(model)
}

/// Test-set metrics and block scores of one trained model.
pub fn rank_run(
    model: &MannModel,
    data: &ExperimentData,
    config: &ExperimentConfig,
    run: usize,
) -> Result<RunRecord, ExperimentError> {
    let predictions = model.predict(data.test_x())?;
    let metrics = performance_metrics(data.task(), data.test_y(), &predictions)?;

    let wants = |f: fn(Strategy) -> bool| config.strategies.iter().any(|&s| f(s));
    let feature_importance = if wants(Strategy::is_composite) {
        let eval = match config.vargrad.eval_split {
            EvalSplit::Train => data.train_x(),
            EvalSplit::Test => data.test_x(),
        };
        let vg = VarGradConfig { seed: config.run_seed(run), ..config.vargrad.clone() };
        Some(vargrad(model, eval, &vg)?)
    } else {
        None
    };
    let outputs = pseudo_outputs(
        model,
        data.test_x(),
        wants(|s| s == Strategy::KnockIn),
        wants(|s| s == Strategy::KnockOut),
    )?;

    let blocks = config
        .strategies
        .iter()
        .map(|&strategy| {
            let fi = || feature_importance.as_ref().expect("computed for composite strategies");
            match strategy {
                Strategy::CompositeSum => composite(fi(), data.block_spec(), Aggregate::Sum),
                Strategy::CompositeMean => composite(fi(), data.block_spec(), Aggregate::Mean),
                Strategy::CompositeMax => composite(fi(), data.block_spec(), Aggregate::Max),
                Strategy::KnockIn => knock_in_score(&outputs, &config.mi),
                Strategy::KnockOut => knock_out_score(&outputs, &config.mi),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(RunRecord {
        run,
        seed: config.run_seed(run),
        model_fingerprint: model.fingerprint(),
        initial_loss: model.training().initial_loss,
        final_loss: model.training().final_loss,
        metrics,
        feature_importance,
        blocks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRun {
    pub run: usize,
    pub reason: Exclusion,
    pub primary_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Spread {
    fn of(xs: &[f64]) -> Self {
        Self {
            mean: stats::mean(xs),
            std: if xs.len() > 1 { stats::std_dev(xs) } else { 0.0 },
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockStats {
    pub block: String,
    /// Statistics of the per-run min-max normalized score.
    pub median: f64,
    pub mean: f64,
    pub std: f64,
    pub raw_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanSummary {
    /// Correlation with the reference scores per retained run; `None` when undefined.
    pub per_run: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub block_stats: Vec<BlockStats>,
    /// Block names grouped into statistically tied sets, most important first.
    pub tie_groups: Vec<Vec<String>>,
    pub ranking: TieGroupRanking,
    pub ground_truth: Option<Vec<f64>>,
    pub spearman: Option<SpearmanSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub setup: String,
    pub config_hash: String,
    pub n_runs: usize,
    pub retained_runs: Vec<usize>,
    pub excluded_runs: Vec<ExcludedRun>,
    pub primary_metric: String,
    pub performance: Spread,
    pub blocks: Vec<String>,
    pub strategies: Vec<StrategySummary>,
}

impl Summary {
    pub fn strategy(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }

    pub fn is_excluded(&self, run: usize) -> bool {
        self.excluded_runs.iter().any(|e| e.run == run)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Filters runs, normalizes scores and builds tie groups per strategy.
///
/// `ground_truth` supplies reference scores per strategy; when present, every
/// retained run's raw scores are rank-correlated against them.
pub fn evaluate(
    records: &[RunRecord],
    block_spec: &BlockSpec,
    config: &ExperimentConfig,
    ground_truth: &dyn Fn(Strategy) -> Result<Option<Vec<f64>>, ExperimentError>,
) -> Result<Summary, ExperimentError> {
    if records.is_empty() {
        return Err(StatsError::Empty.into());
    }
    let strategies: Vec<Strategy> = records[0].blocks.iter().map(|b| b.strategy).collect();
    for r in records {
        let s: Vec<Strategy> = r.blocks.iter().map(|b| b.strategy).collect();
        if s != strategies || r.blocks.iter().any(|b| b.scores.len() != block_spec.len()) {
            return Err(ExperimentError::InconsistentRuns(format!(
                "run {} does not match the strategies or block count of run {}",
                r.run, records[0].run
            )));
        }
    }

    let primary: Vec<f64> = records.iter().map(|r| r.metrics.primary()).collect();
    let flags = filter_runs(&primary, config.evaluation.performance_threshold, config.evaluation.outlier_policy)?;
    let mut retained = Vec::new();
    let mut excluded_runs = Vec::new();
    for ((r, flag), &p) in records.iter().zip(&flags).zip(&primary) {
        match flag {
            None => retained.push(r),
            Some(reason) => excluded_runs.push(ExcludedRun { run: r.run, reason: *reason, primary_metric: p }),
        }
    }
    let retained_primary: Vec<f64> = retained.iter().map(|r| r.metrics.primary()).collect();
    let names = block_spec.names();

    let strategies = strategies
        .iter()
        .enumerate()
        .map(|(si, &strategy)| {
            let raw: Vec<&Vec<f64>> = retained.iter().map(|r| &r.blocks[si].scores).collect();
            let normalized: Vec<Vec<f64>> = retained.iter().map(|r| r.blocks[si].normalize().scores).collect();
            let ranking = if normalized.len() == 1 {
                untested_ranking(&normalized[0], config.evaluation.alpha)
            } else {
                tie_group_ranking(&normalized, config.evaluation.alpha)?
            };
            let block_stats = (0..block_spec.len())
                .map(|b| {
                    let col: Vec<f64> = normalized.iter().map(|n| n[b]).collect();
                    let raw_col: Vec<f64> = raw.iter().map(|s| s[b]).collect();
                    BlockStats {
                        block: names[b].clone(),
                        median: stats::median(&col),
                        mean: stats::mean(&col),
                        std: if col.len() > 1 { stats::std_dev(&col) } else { 0.0 },
                        raw_mean: stats::mean(&raw_col),
                    }
                })
                .collect();
            let gt = ground_truth(strategy)?;
            let spearman = gt.as_ref().map(|gt| {
                let per_run: Vec<Option<f64>> = raw.iter().map(|s| spearman(s, gt).ok()).collect();
                let defined: Vec<f64> = per_run.iter().flatten().copied().collect();
                SpearmanSummary {
                    mean: (!defined.is_empty()).then(|| stats::mean(&defined)),
                    std: (defined.len() > 1).then(|| stats::std_dev(&defined)),
                    per_run,
                }
            });
            Ok(StrategySummary {
                strategy,
                block_stats,
                tie_groups: ranking
                    .groups
                    .iter()
                    .map(|g| g.iter().map(|&b| names[b].clone()).collect())
                    .collect(),
                ranking,
                ground_truth: gt,
                spearman,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;

    Ok(Summary {
        setup: config.name.clone(),
        config_hash: config.hash(),
        n_runs: records.len(),
        retained_runs: retained.iter().map(|r| r.run).collect(),
        excluded_runs,
        primary_metric: match records[0].metrics.r2 {
            Some(_) => "r2".into(),
            None => "accuracy".into(),
        },
        performance: Spread::of(&retained_primary),
        blocks: names,
        strategies,
    })
}

/// Output of a full experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub models: Vec<MannModel>,
    pub records: Vec<RunRecord>,
    pub summary: Summary,
}

/// Runs `f(run)` for every run index on a pool of `workers` threads (0 = all cores),
/// returning results in run order.
pub fn for_each_run<T, F>(n_runs: usize, workers: usize, f: F) -> Result<Vec<T>, ExperimentError>
where
    T: Send,
    F: Fn(usize) -> Result<T, ExperimentError> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ConfigError::Invalid(format!("cannot start worker pool: {e}")))?;
    pool.install(|| (0..n_runs).into_par_iter().map(&f).collect())
}

/// Trains and ranks `config.n_runs` models on `data`, then evaluates them.
pub fn run_experiment(data: &ExperimentData, config: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    config.validate()?;
    let pairs = for_each_run(config.n_runs, config.workers, |run| {
        let model = train_run(data, config, run)?;
        log::info!("run {run}: trained (final loss {:.4})", model.training().final_loss);
        let record = rank_run(&model, data, config, run)?;
        Ok((model, record))
    })?;
    let (models, records): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let summary = evaluate(&records, data.block_spec(), config, &|s| data.ground_truth(s))?;
    Ok(ExperimentOutput { models, records, summary })
}

/// `run,strategy,block,score,normalized_score,excluded,config_hash` rows for every
/// run, strategy and block.
pub fn scores_long_csv(records: &[RunRecord], summary: &Summary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "strategy", "block", "score", "normalized_score", "excluded", "config_hash"])
        .expect("in-memory write");
    for r in records {
        let excluded = summary.is_excluded(r.run).to_string();
        for bi in &r.blocks {
            for [block, strategy, score, norm] in bi.csv_rows(&summary.blocks) {
                w.write_record([&r.run.to_string(), &strategy, &block, &score, &norm, &excluded, &summary.config_hash])
                    .expect("in-memory write");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}
