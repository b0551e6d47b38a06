//! The experiment engine behind the CLI: reproducible training runs with
//! periodic evaluation, best-checkpoint tracking, and a key=value run log.
//!
//! All randomness descends from the experiment seed through named
//! sub-streams ("init", "dropout", "sampler", "split"), so toggling the
//! balanced sampler changes nothing but the order bags are drawn in, and a
//! (config, seed) pair pins the entire run bit for bit.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::archive::{read_archive, ArchiveError};
use crate::data::sampler::{SamplerState, ShuffledSampler};
use crate::data::split::split;
use crate::data::synthetic::{generate_synthetic, SyntheticSpec};
use crate::data::{DataError, Dataset};
use crate::metrics::{evaluate, MetricsError, ScoreTable};
use crate::model::{
    backward, bce_loss, label_matrix, Adam, Gradients, MilNetwork, Mode, ModelError, Phi,
    PoolingStrategy,
};
use crate::rng::Rng;
use crate::tensor::Matrix;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("non-finite loss at step {step}; aborting")]
    NonFiniteLoss { step: usize },
}

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Archive(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub strategy: PoolingStrategy,
    pub phi: Phi,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub balanced: bool,
    pub eval_every: usize,
    pub eval_fraction: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn new(data: DataSource) -> Self {
        ExperimentConfig {
            data,
            strategy: PoolingStrategy::Attention,
            phi: Phi::Softmax,
            hidden: vec![500, 500, 500],
            dropout: 0.2,
            lr: 1e-3,
            batch_size: 32,
            steps: 10_000,
            balanced: true,
            eval_every: 500,
            eval_fraction: 0.2,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        let err = |msg: String| Err(TrainError::Config(msg));
        if self.batch_size == 0 {
            return err("batch size must be at least 1".into());
        }
        if self.eval_every == 0 {
            return err("eval cadence must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return err(format!("learning rate {} must be finite and positive", self.lr));
        }
        if !(0.0 < self.eval_fraction && self.eval_fraction < 1.0) {
            return err(format!("eval fraction {} must lie in (0, 1)", self.eval_fraction));
        }
        Ok(())
    }

    /// The echoed `config.*` lines at the top of every run log.
    pub fn kv_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        match &self.data {
            DataSource::Archive(path) => lines.push(format!("config.data=archive:{}", path.display())),
            DataSource::Synthetic(spec) => lines.push(format!(
                "config.data=synthetic:classes={},bags_per_class={:?},feature_dim={},instances={},positives={}..{},separation={},noise={},extra_label_prob={},seed={}",
                spec.num_classes,
                spec.bags_per_class,
                spec.feature_dim,
                spec.instances_per_bag,
                spec.positives_min,
                spec.positives_max,
                spec.separation,
                spec.noise_std,
                spec.extra_label_prob,
                spec.seed,
            )),
        }
        lines.push(format!("config.strategy={}", self.strategy.as_str()));
        lines.push(format!("config.phi={}", self.phi.as_str()));
        lines.push(format!(
            "config.hidden={}",
            self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")
        ));
        lines.push(format!("config.dropout={}", self.dropout));
        lines.push(format!("config.lr={}", self.lr));
        lines.push(format!("config.batch_size={}", self.batch_size));
        lines.push(format!("config.steps={}", self.steps));
        lines.push(format!("config.balanced={}", if self.balanced { "on" } else { "off" }));
        lines.push(format!("config.eval_every={}", self.eval_every));
        lines.push(format!("config.eval_fraction={}", self.eval_fraction));
        lines.push(format!("config.seed={}", self.seed));
        lines
    }
}

/// One evaluation snapshot. `loss` is the mean training-batch loss since
/// the previous record; the step-0 record instead carries the initialized
/// model's mean loss over the eval split. Wall time is kept for progress
/// output only and never serialized, so logs stay bit-reproducible.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub step: usize,
    pub loss: f64,
    pub map: f64,
    pub auc: f64,
    pub d_prime: f64,
    pub wall: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct RunLog {
    config_lines: Vec<String>,
    records: Vec<RunRecord>,
}

impl RunLog {
    fn new(config: &ExperimentConfig) -> Self {
        RunLog { config_lines: config.kv_lines(), records: Vec::new() }
    }

    fn push(&mut self, record: RunRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.step > last.step, "run log steps must strictly increase");
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    /// Key=value lines: the `config.*` echo, then per record
    /// `step=`, `loss=`, `map=`, `auc=`, `dprime=`.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        for line in &self.config_lines {
            let _ = writeln!(out, "{line}");
        }
        for r in &self.records {
            let _ = writeln!(out, "step={}", r.step);
            let _ = writeln!(out, "loss={}", r.loss);
            let _ = writeln!(out, "map={}", r.map);
            let _ = writeln!(out, "auc={}", r.auc);
            let _ = writeln!(out, "dprime={}", r.d_prime);
        }
        out
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// The best-mAP parameters seen, in eval mode.
    pub network: MilNetwork,
    pub best_step: usize,
    pub best_map: f64,
    pub log: RunLog,
    /// Classes whose single bag was forced into the train split.
    pub singleton_classes: Vec<usize>,
}

pub fn load_dataset(source: &DataSource) -> Result<Dataset, TrainError> {
    match source {
        DataSource::Archive(path) => Ok(read_archive(path)?),
        DataSource::Synthetic(spec) => Ok(generate_synthetic(spec)?),
    }
}

/// Scores every bag in eval mode. Row order follows the dataset.
pub fn score_dataset(
    net: &MilNetwork,
    strategy: PoolingStrategy,
    ds: &Dataset,
) -> Result<ScoreTable, TrainError> {
    let mut eval_net = net.clone();
    eval_net.set_mode(Mode::Eval);
    let mut rng = Rng::new(0); // untouched in eval mode
    let mut rows = Vec::with_capacity(ds.len());
    let mut labels = Vec::with_capacity(ds.len() * ds.num_classes());
    for bag in ds.bags() {
        let out = eval_net.forward_bag(strategy, &bag.instances, &mut rng)?;
        rows.push(out.prediction.row(0).to_vec());
        labels.extend(bag.label.iter().copied());
    }
    let scores = Matrix::from_rows(&rows).map_err(ModelError::Shape)?;
    Ok(ScoreTable::new(scores, labels)?)
}

/// Mean BCE over a dataset in eval mode.
pub fn mean_eval_loss(
    net: &MilNetwork,
    strategy: PoolingStrategy,
    ds: &Dataset,
) -> Result<f64, TrainError> {
    let mut eval_net = net.clone();
    eval_net.set_mode(Mode::Eval);
    let mut rng = Rng::new(0);
    let mut total = 0.0;
    for bag in ds.bags() {
        let out = eval_net.forward_bag(strategy, &bag.instances, &mut rng)?;
        total += bce_loss(&out.prediction, &label_matrix(&bag.label))?;
    }
    Ok(total / ds.len().max(1) as f64)
}

enum BatchSampler {
    Balanced(SamplerState),
    Shuffled(ShuffledSampler),
}

impl BatchSampler {
    fn next_batch(&mut self, batch_size: usize) -> Vec<usize> {
        match self {
            BatchSampler::Balanced(s) => s.next_batch(batch_size),
            BatchSampler::Shuffled(s) => s.next_batch(batch_size),
        }
    }
}

/// Runs a full experiment: load, split, train with periodic evaluation,
/// and return the best-mAP network plus the run log. `on_eval` fires after
/// every evaluation with the freshly appended record.
pub fn train_experiment(
    config: &ExperimentConfig,
    mut on_eval: impl FnMut(&RunRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let dataset = load_dataset(&config.data)?;
    if dataset.is_empty() {
        return Err(TrainError::Config("dataset has no bags".into()));
    }

    let report = split(&dataset, (1.0 - config.eval_fraction, config.eval_fraction), config.seed)?;
    let (train_set, eval_set) = (report.train, report.eval);
    if train_set.is_empty() || eval_set.is_empty() {
        return Err(TrainError::Config(format!(
            "split produced {} train / {} eval bags; need both non-empty",
            train_set.len(),
            eval_set.len()
        )));
    }

    let root = Rng::new(config.seed);
    let mut init_rng = root.split("init");
    let mut dropout_rng = root.split("dropout");
    let sampler_rng = root.split("sampler");

    let mut net = MilNetwork::init(
        dataset.feature_dim(),
        dataset.num_classes(),
        &config.hidden,
        config.dropout,
        config.phi,
        &mut init_rng,
    )?;
    net.set_mode(Mode::Train);

    let mut sampler = if config.balanced {
        BatchSampler::Balanced(SamplerState::new(&train_set, sampler_rng)?)
    } else {
        BatchSampler::Shuffled(ShuffledSampler::new(train_set.len(), sampler_rng))
    };
    let mut adam = Adam::for_network(&net);

    let started = Instant::now();
    let mut log = RunLog::new(config);
    let mut best: Option<(usize, f64, MilNetwork)> = None;

    let mut evaluate_now = |net: &MilNetwork,
                            step: usize,
                            loss: f64,
                            log: &mut RunLog,
                            best: &mut Option<(usize, f64, MilNetwork)>|
     -> Result<(), TrainError> {
        let table = score_dataset(net, config.strategy, &eval_set)?;
        let metrics = evaluate(&table)?;
        let record = RunRecord {
            step,
            loss,
            map: metrics.macro_avg.map,
            auc: metrics.macro_avg.auc,
            d_prime: metrics.macro_avg.d_prime,
            wall: started.elapsed(),
        };
        let is_better = best.as_ref().map_or(true, |(_, map, _)| record.map > *map);
        if is_better {
            let mut snapshot = net.clone();
            snapshot.set_mode(Mode::Eval);
            *best = Some((step, record.map, snapshot));
        }
        on_eval(&record);
        log.push(record);
        Ok(())
    };

    let initial_loss = mean_eval_loss(&net, config.strategy, &eval_set)?;
    evaluate_now(&net, 0, initial_loss, &mut log, &mut best)?;

    let mut window_loss = 0.0;
    let mut window_count = 0usize;
    for step in 1..=config.steps {
        let batch = sampler.next_batch(config.batch_size);
        let mut grads = Gradients::zeros_like(&net);
        let mut batch_loss = 0.0;
        for &index in &batch {
            let bag = &train_set.bags()[index];
            let trace = net.forward_traced(config.strategy, &bag.instances, &mut dropout_rng)?;
            batch_loss += bce_loss(trace.prediction(), &label_matrix(&bag.label))?;
            grads.accumulate(&backward(&net, &trace, &label_matrix(&bag.label))?)?;
        }
        batch_loss /= batch.len() as f64;
        if !batch_loss.is_finite() || !grads.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        grads.scale(1.0 / batch.len() as f64);
        adam.step_network(&mut net, &grads, config.lr)?;

        window_loss += batch_loss;
        window_count += 1;
        if step % config.eval_every == 0 || step == config.steps {
            let mean_loss = window_loss / window_count as f64;
            evaluate_now(&net, step, mean_loss, &mut log, &mut best)?;
            window_loss = 0.0;
            window_count = 0;
        }
    }

    let (best_step, best_map, network) = best.expect("at least the step-0 evaluation ran");
    Ok(TrainOutcome {
        network,
        best_step,
        best_map,
        log,
        singleton_classes: report.singleton_classes,
    })
}
