//! Full-batch transductive training and k-fold cross-validation.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape};
use crate::classifier::Dropout;
use crate::data::{self, Dataset, FoldPlan};
use crate::error::{Error, Result};
use crate::iam;
use crate::losses::{LossConvention, LossWeights};
use crate::metrics;
use crate::model::{Architecture, Model};
use crate::optim::{Adam, AdamConfig, ParamGroup};
use crate::report::{block_summary, BlockSummary};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Learning rate of the attention mask; `None` uses `learning_rate`.
    pub mask_learning_rate: Option<f64>,
    pub optimizer: AdamConfig,
    pub loss: LossWeights,
    pub loss_convention: LossConvention,
    pub architecture: Architecture,
    pub dropout: f64,
    pub seed: u64,
    pub top_k: usize,
    pub folds: usize,
    pub stratified: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 600,
            learning_rate: 0.01,
            mask_learning_rate: Some(DEFAULT_MASK_LR),
            optimizer: AdamConfig::default(),
            loss: LossWeights::default(),
            loss_convention: LossConvention::Prose,
            architecture: Architecture::default(),
            dropout: 0.0,
            seed: 0,
            top_k: 4,
            folds: 10,
            stratified: true,
        }
    }
}

pub const DEFAULT_MASK_LR: f64 = 0.1;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if let Some(m) = self.mask_learning_rate {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::Config("mask_learning_rate must be finite and >= 0".into()));
            }
        }
        let o = &self.optimizer;
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config("optimizer betas must lie in [0, 1)".into()));
        }
        if !(o.eps > 0.0) || !(o.weight_decay >= 0.0) {
            return Err(Error::Config("optimizer eps must be > 0 and weight_decay >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        self.loss.validate()?;
        self.architecture.validate()
    }
}

/// Seed of fold `fold`, derived from the master seed with a SplitMix64 step.
pub fn fold_seed(master: u64, fold: usize) -> u64 {
    let mut z = master
        .wrapping_add((fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub total: f64,
    pub classification: f64,
    pub entropy: f64,
    pub size: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub fold: usize,
    pub accuracy: f64,
    pub auc: f64,
    pub f1: f64,
    /// Classes left out of the AUC average because the test fold lacks them.
    pub auc_excluded_classes: Vec<usize>,
    pub avg_top_k: f64,
    pub avg_others: f64,
    pub top_k_indices: Vec<usize>,
    pub attention: Vec<f64>,
    pub temperature: f64,
    pub threshold: f64,
    pub adjacency_before: BlockSummary,
    pub adjacency_after: BlockSummary,
    #[serde(skip)]
    pub loss_trace: Vec<LossPoint>,
    #[serde(skip)]
    pub wall_time: f64,
}

/// A finished fold: final parameters, metrics and adjacency snapshots.
#[derive(Clone, Debug)]
pub struct TrainedFold {
    pub model: Model,
    pub record: MetricRecord,
    pub adjacency_before: Matrix,
    pub adjacency_after: Matrix,
    pub test: Vec<usize>,
}

fn grads_of(tape: &Tape, vars: &[crate::autodiff::Var]) -> Vec<Matrix> {
    vars.iter().map(|&v| tape.grad(v).clone()).collect()
}

/// Trains a fresh model on every node outside `fold` and evaluates on `fold`.
pub fn train_fold(
    dataset: &Dataset,
    plan: &FoldPlan,
    fold: usize,
    config: &TrainConfig,
) -> Result<TrainedFold> {
    config.validate()?;
    if plan.assignments.len() != dataset.len() || fold >= plan.k {
        return Err(Error::Argument(format!(
            "fold {fold} is not valid for a {}-node dataset with k = {}",
            dataset.len(),
            plan.k
        )));
    }
    let train = plan.train_indices(fold);
    let test = plan.test_indices(fold);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Argument(format!("fold {fold} has an empty split")));
    }
    let started = Instant::now();
    let (std_ds, _) = data::standardize(dataset, Some(&train));
    let x = &std_ds.features;
    let labels = &dataset.labels;
    let seed = fold_seed(config.seed, fold);

    let mut model = Model::init(
        dataset.feature_count(),
        dataset.class_count(),
        &config.architecture,
        seed,
    )?;
    let (adjacency_before, _) = model.evaluate(x)?;

    let mask_lr = config.mask_learning_rate.unwrap_or(config.learning_rate);
    let groups: Vec<ParamGroup> = model
        .params()
        .iter()
        .map(|p| {
            if std::ptr::eq(*p, &model.mask.raw) {
                ParamGroup { lr: mask_lr, weight_decay: 0.0 }
            } else if std::ptr::eq(*p, &model.glm.t_raw) || std::ptr::eq(*p, &model.glm.theta) {
                ParamGroup { lr: config.learning_rate, weight_decay: 0.0 }
            } else {
                ParamGroup { lr: config.learning_rate, weight_decay: config.optimizer.weight_decay }
            }
        })
        .collect();
    let mut adam = Adam::with_groups(config.optimizer, &model.params(), groups);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
    drop_rng.set_stream(10);

    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let dropout = (config.dropout > 0.0).then(|| Dropout {
            rate: config.dropout,
            rng: &mut drop_rng,
        });
        let pass = model.forward(&mut tape, x, dropout)?;
        let terms = Model::objective(
            &mut tape,
            &pass,
            labels,
            &train,
            &config.loss,
            config.loss_convention,
        )?;
        let point = LossPoint {
            epoch,
            total: tape.scalar(terms.total),
            classification: tape.scalar(terms.classification),
            entropy: tape.scalar(terms.entropy),
            size: tape.scalar(terms.size),
        };
        if !point.total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        trace.push(point);
        tape.backward(terms.total)?;
        let grads = grads_of(&tape, &pass.vars.all());
        adam.step(model.params_mut(), &grads)?;
    }

    let (adjacency_after, logits) = model.evaluate(x)?;
    let auc = metrics::macro_auc(&logits, labels, &test)?;
    let attention = model.attention();
    let k = config.top_k.min(attention.len());
    let stats = iam::attention_stats(&attention, k)?;
    let record = MetricRecord {
        fold,
        accuracy: metrics::accuracy(&logits, labels, &test)?,
        auc: auc.value,
        f1: metrics::macro_f1(&logits, labels, &test)?,
        auc_excluded_classes: auc.excluded,
        avg_top_k: stats.avg_top_k,
        avg_others: stats.avg_others,
        top_k_indices: stats.top_k_indices,
        temperature: model.glm.temperature(),
        threshold: model.glm.threshold(),
        adjacency_before: block_summary(&adjacency_before, labels),
        adjacency_after: block_summary(&adjacency_after, labels),
        attention,
        loss_trace: trace,
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok(TrainedFold {
        model,
        record,
        adjacency_before,
        adjacency_after,
        test,
    })
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub accuracy: Stat,
    pub auc: Stat,
    pub f1: Stat,
    pub avg_top_k: Stat,
    pub avg_others: Stat,
    /// Per-feature attention averaged over folds.
    pub mean_attention: Vec<f64>,
    pub folds: Vec<MetricRecord>,
}

impl CvSummary {
    pub fn from_records(folds: Vec<MetricRecord>) -> Self {
        let col = |f: fn(&MetricRecord) -> f64| folds.iter().map(f).collect::<Vec<_>>();
        let d = folds.first().map_or(0, |r| r.attention.len());
        let mean_attention = (0..d)
            .map(|j| folds.iter().map(|r| r.attention[j]).sum::<f64>() / folds.len() as f64)
            .collect();
        Self {
            accuracy: Stat::of(&col(|r| r.accuracy)),
            auc: Stat::of(&col(|r| r.auc)),
            f1: Stat::of(&col(|r| r.f1)),
            avg_top_k: Stat::of(&col(|r| r.avg_top_k)),
            avg_others: Stat::of(&col(|r| r.avg_others)),
            mean_attention,
            folds,
        }
    }
}

/// Every fold of a cross-validation run.
#[derive(Clone, Debug)]
pub struct CvRun {
    pub plan: FoldPlan,
    pub summary: CvSummary,
    pub folds: Vec<TrainedFold>,
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} worker threads: {e}")))
}

/// Runs `folds` in parallel on up to `jobs` threads; results are ordered by fold.
pub fn run_folds(
    dataset: &Dataset,
    plan: &FoldPlan,
    folds: &[usize],
    config: &TrainConfig,
    jobs: usize,
) -> Result<Vec<TrainedFold>> {
    let pool = thread_pool(jobs)?;
    pool.install(|| {
        folds
            .par_iter()
            .map(|&f| {
                train_fold(dataset, plan, f, config).map_err(|e| Error::Fold {
                    fold: f,
                    source: Box::new(e),
                })
            })
            .collect()
    })
}

pub fn fold_plan(dataset: &Dataset, config: &TrainConfig) -> Result<FoldPlan> {
    data::make_folds(&dataset.labels, config.folds, config.stratified, config.seed)
}

pub fn cross_validate_run(dataset: &Dataset, config: &TrainConfig, jobs: usize) -> Result<CvRun> {
    config.validate()?;
    let plan = fold_plan(dataset, config)?;
    let ids: Vec<usize> = (0..plan.k).collect();
    let folds = run_folds(dataset, &plan, &ids, config, jobs)?;
    let summary = CvSummary::from_records(folds.iter().map(|f| f.record.clone()).collect());
    Ok(CvRun {
        plan,
        summary,
        folds,
    })
}

pub fn cross_validate(dataset: &Dataset, config: &TrainConfig, jobs: usize) -> Result<CvSummary> {
    Ok(cross_validate_run(dataset, config, jobs)?.summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[0.7]).std, 0.0);
    }

    #[test]
    fn fold_seeds_differ() {
        let a: Vec<u64> = (0..10).map(|f| fold_seed(7, f)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 10);
        assert_eq!(fold_seed(7, 3), fold_seed(7, 3));
    }

    #[test]
    fn config_validation_names_fields() {
        let c = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("epochs"));
        let c = TrainConfig {
            learning_rate: -1.0,
            ..Default::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("learning_rate"));
    }
}
