use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{evaluate, train_one, PhaseRecord, RunRecord, Samples, TrainConfig, TrainingHistory};
use crate::data::{holdout_split, make_splits, SampleSource, Split, SplitPlan, SplitVariant};
use crate::error::{Error, Result};
use crate::metrics::{summarize, MetricSummary};
use crate::model::{ModelConfig, RamanNet};
use crate::rng::{derive_seed, rng_from_seed};

const TRAIN_STREAM: u64 = 0x7EA1;
const FINETUNE_SPLIT_STREAM: u64 = 0xF17E;

/// Datasets a protocol runs on.
#[derive(Debug, Clone, Copy)]
pub enum ProtocolData<'a, D> {
    /// One dataset, partitioned by the split plan.
    Single(&'a D),
    /// Reference set for pretraining, a fine-tuning set and a fixed test set.
    PretrainFinetune {
        reference: &'a D,
        finetune: &'a D,
        test: &'a D,
    },
}

#[derive(Debug)]
pub enum ProtocolEvent<'a> {
    SplitStarted { split_id: &'a str },
    /// Test features are about to be read.
    TestAccess { split_id: &'a str, samples: usize },
    SplitFinished { split_id: &'a str, test_accuracy: Option<f64> },
    SplitFailed { split_id: &'a str, error: &'a Error },
}

/// Side effects a protocol needs from its host. All methods default to no-ops.
pub trait ProtocolHooks: Sync {
    /// Seconds since an arbitrary origin, if a clock is available.
    fn now(&self) -> Option<f64> {
        None
    }

    fn on_event(&self, _event: &ProtocolEvent<'_>) {}

    /// Persist a trained model, returning where it went.
    fn checkpoint(&self, _split_id: &str, _model: &RamanNet) -> core::result::Result<Option<String>, String> {
        Ok(None)
    }
}

impl ProtocolHooks for () {}

/// Runs independent split jobs, possibly in parallel. Results come back in
/// job order.
pub trait SplitExecutor {
    fn run<T, F>(&self, jobs: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl SplitExecutor for Sequential {
    fn run<T, F>(&self, jobs: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..jobs).map(job).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFailure {
    pub split_id: String,
    pub error: String,
}

/// Test metrics summarized over the splits that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub accuracy: MetricSummary,
    pub sensitivity: Option<MetricSummary>,
    pub specificity: Option<MetricSummary>,
    pub top_k: Vec<(usize, MetricSummary)>,
}

impl Aggregate {
    pub fn of(records: &[RunRecord]) -> Self {
        let tested: Vec<_> = records.iter().filter_map(|r| r.test.as_ref()).collect();
        let accuracy = summarize(&tested.iter().map(|t| t.accuracy).collect::<Vec<_>>());
        let binary: Vec<_> = tested.iter().filter_map(|t| t.binary).collect();
        let (sensitivity, specificity) = if binary.is_empty() {
            (None, None)
        } else {
            (
                Some(summarize(&binary.iter().map(|b| b.sensitivity).collect::<Vec<_>>())),
                Some(summarize(&binary.iter().map(|b| b.specificity).collect::<Vec<_>>())),
            )
        };
        let mut ks: Vec<usize> = tested.iter().flat_map(|t| t.top_k.iter().map(|&(k, _)| k)).collect();
        ks.sort_unstable();
        ks.dedup();
        let top_k = ks
            .into_iter()
            .map(|k| {
                let values: Vec<Option<f64>> = tested
                    .iter()
                    .map(|t| t.top_k.iter().find(|&&(kk, _)| kk == k).map(|&(_, v)| v))
                    .collect();
                (k, summarize(&values))
            })
            .collect();
        Self {
            accuracy,
            sensitivity,
            specificity,
            top_k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolReport {
    /// Successful splits, in split order.
    pub records: Vec<RunRecord>,
    pub failures: Vec<SplitFailure>,
    pub aggregate: Aggregate,
    /// For pretrain/fine-tune: the candidate evaluated on the test set.
    pub selected: Option<String>,
}

/// Train and evaluate one model per split of `plan`.
///
/// A split that fails is reported in [`ProtocolReport::failures`] and the
/// remaining splits still run. Configuration errors abort the whole run.
pub fn run_protocol<D, E, H>(
    data: ProtocolData<'_, D>,
    plan: &SplitPlan,
    model: &ModelConfig,
    train: &TrainConfig,
    executor: &E,
    hooks: &H,
) -> Result<ProtocolReport>
where
    D: SampleSource + Sync,
    E: SplitExecutor,
    H: ProtocolHooks,
{
    plan.validate()?;
    train.validate()?;
    model.validate()?;
    match (data, plan.variant) {
        (ProtocolData::Single(d), SplitVariant::RepeatedHoldout { .. } | SplitVariant::KFold { .. }) => {
            check_matches(model, d)?;
            run_single(d, plan, model, train, executor, hooks)
        }
        (
            ProtocolData::PretrainFinetune {
                reference,
                finetune,
                test,
            },
            SplitVariant::PretrainFinetune {
                finetune_validation_fraction,
                ..
            },
        ) => {
            for d in [reference, finetune, test] {
                check_matches(model, d)?;
            }
            let sets = PretrainSets {
                reference,
                finetune,
                test,
                validation_fraction: finetune_validation_fraction,
            };
            run_pretrain_finetune(sets, plan, model, train, executor, hooks)
        }
        _ => Err(Error::Config(
            "split plan does not match the supplied datasets".into(),
        )),
    }
}

fn check_matches<D: SampleSource>(model: &ModelConfig, data: &D) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("protocol input has no samples".into()));
    }
    if data.input_len() != model.input_len {
        return Err(Error::Shape {
            what: "dataset input length",
            expected: model.input_len,
            actual: data.input_len(),
        });
    }
    if data.num_classes() != model.num_classes {
        return Err(Error::Shape {
            what: "dataset class count",
            expected: model.num_classes,
            actual: data.num_classes(),
        });
    }
    Ok(())
}

fn samples<D: SampleSource>(data: &D, indices: &[usize]) -> Samples {
    Samples {
        features: data.gather(indices),
        labels: indices.iter().map(|&i| data.labels()[i]).collect(),
    }
}

fn split_seed(train: &TrainConfig, index: usize) -> u64 {
    derive_seed(derive_seed(train.seed, TRAIN_STREAM), index as u64)
}

fn elapsed<H: ProtocolHooks>(hooks: &H, start: Option<f64>) -> Option<f64> {
    Some(hooks.now()? - start?)
}

fn store<H: ProtocolHooks>(hooks: &H, split_id: &str, model: &RamanNet) -> Result<Option<String>> {
    hooks
        .checkpoint(split_id, model)
        .map_err(|e| Error::Hook(format!("saving checkpoint for {split_id}: {e}")))
}

fn collect<H: ProtocolHooks>(
    splits: &[Split],
    outcomes: Vec<Result<RunRecord>>,
    hooks: &H,
) -> (Vec<RunRecord>, Vec<SplitFailure>) {
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (split, outcome) in splits.iter().zip(outcomes) {
        match outcome {
            Ok(r) => records.push(r),
            Err(error) => {
                hooks.on_event(&ProtocolEvent::SplitFailed {
                    split_id: &split.id,
                    error: &error,
                });
                failures.push(SplitFailure {
                    split_id: split.id.clone(),
                    error: error.to_string(),
                });
            }
        }
    }
    (records, failures)
}

fn run_single<D, E, H>(
    data: &D,
    plan: &SplitPlan,
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    executor: &E,
    hooks: &H,
) -> Result<ProtocolReport>
where
    D: SampleSource + Sync,
    E: SplitExecutor,
    H: ProtocolHooks,
{
    let splits = make_splits(data.labels(), data.num_classes(), plan)?;
    let outcomes = executor.run(splits.len(), |i| {
        let split = &splits[i];
        let start = hooks.now();
        hooks.on_event(&ProtocolEvent::SplitStarted { split_id: &split.id });
        let seed = split_seed(train, i);
        let mut rng = rng_from_seed(seed);
        let model = RamanNet::new(*model_cfg, &mut rng)?;
        let train_set = samples(data, &split.train);
        let validation = samples(data, &split.validation);
        let (model, history) = train_one(model, &train_set, Some(&validation), train, train.epochs, false, &mut rng)?;

        hooks.on_event(&ProtocolEvent::TestAccess {
            split_id: &split.id,
            samples: split.test.len(),
        });
        let test = evaluate(&model, &samples(data, &split.test), train.positive_class, &train.top_k)?;
        let checkpoint = store(hooks, &split.id, &model)?;
        hooks.on_event(&ProtocolEvent::SplitFinished {
            split_id: &split.id,
            test_accuracy: test.accuracy,
        });
        Ok(RunRecord {
            split_id: split.id.clone(),
            seed,
            train_samples: split.train.len(),
            validation_samples: split.validation.len(),
            phases: alloc::vec![PhaseRecord {
                phase: "train".into(),
                history,
            }],
            test: Some(test),
            parameter_count: model.parameter_count(),
            checkpoint,
            wall_time_secs: elapsed(hooks, start),
        })
    });
    let (records, failures) = collect(&splits, outcomes, hooks);
    Ok(ProtocolReport {
        aggregate: Aggregate::of(&records),
        records,
        failures,
        selected: None,
    })
}

struct PretrainSets<'a, D> {
    reference: &'a D,
    finetune: &'a D,
    test: &'a D,
    validation_fraction: f64,
}

struct Candidate {
    record: RunRecord,
    model: RamanNet,
    finetune: TrainingHistory,
}

fn run_pretrain_finetune<D, E, H>(
    sets: PretrainSets<'_, D>,
    plan: &SplitPlan,
    model_cfg: &ModelConfig,
    train: &TrainConfig,
    executor: &E,
    hooks: &H,
) -> Result<ProtocolReport>
where
    D: SampleSource + Sync,
    E: SplitExecutor,
    H: ProtocolHooks,
{
    let splits = make_splits(sets.reference.labels(), sets.reference.num_classes(), plan)?;
    let (ft_train, ft_val) = holdout_split(
        sets.finetune.labels(),
        sets.finetune.num_classes(),
        sets.validation_fraction,
        plan.stratified,
        derive_seed(plan.seed, FINETUNE_SPLIT_STREAM),
    )?;
    let ft_train = samples(sets.finetune, &ft_train);
    let ft_val = samples(sets.finetune, &ft_val);

    let outcomes = executor.run(splits.len(), |i| {
        let split = &splits[i];
        let start = hooks.now();
        hooks.on_event(&ProtocolEvent::SplitStarted { split_id: &split.id });
        let seed = split_seed(train, i);
        let mut rng = rng_from_seed(seed);
        let model = RamanNet::new(*model_cfg, &mut rng)?;
        let pre_train = samples(sets.reference, &split.train);
        let pre_val = samples(sets.reference, &split.validation);
        let (model, pretrain) = train_one(model, &pre_train, Some(&pre_val), train, train.epochs, false, &mut rng)?;
        let (model, finetune) = train_one(
            model,
            &ft_train,
            Some(&ft_val),
            train,
            train.finetune_epochs,
            train.freeze_batchnorm_on_finetune,
            &mut rng,
        )?;
        let checkpoint = store(hooks, &split.id, &model)?;
        let record = RunRecord {
            split_id: split.id.clone(),
            seed,
            train_samples: split.train.len() + ft_train.len(),
            validation_samples: split.validation.len() + ft_val.len(),
            phases: alloc::vec![
                PhaseRecord {
                    phase: "pretrain".into(),
                    history: pretrain,
                },
                PhaseRecord {
                    phase: "finetune".into(),
                    history: finetune.clone(),
                },
            ],
            test: None,
            parameter_count: model.parameter_count(),
            checkpoint,
            wall_time_secs: elapsed(hooks, start),
        };
        Ok(Candidate {
            record,
            model,
            finetune,
        })
    });

    let (mut candidates, mut failures) = (Vec::new(), Vec::new());
    for (split, outcome) in splits.iter().zip(outcomes) {
        match outcome {
            Ok(c) => candidates.push(c),
            Err(error) => {
                hooks.on_event(&ProtocolEvent::SplitFailed {
                    split_id: &split.id,
                    error: &error,
                });
                failures.push(SplitFailure {
                    split_id: split.id.clone(),
                    error: error.to_string(),
                });
            }
        }
    }

    // highest fine-tune validation accuracy wins; ties go to the earlier fold
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        let score = c.finetune.best_validation_accuracy().unwrap_or(f64::NEG_INFINITY);
        let better = best.map_or(true, |b| {
            score > candidates[b].finetune.best_validation_accuracy().unwrap_or(f64::NEG_INFINITY)
        });
        if better {
            best = Some(i);
        }
    }

    let mut selected = None;
    if let Some(b) = best {
        let id = candidates[b].record.split_id.clone();
        hooks.on_event(&ProtocolEvent::TestAccess {
            split_id: &id,
            samples: sets.test.len(),
        });
        let all: Vec<usize> = (0..sets.test.len()).collect();
        let test = evaluate(
            &candidates[b].model,
            &samples(sets.test, &all),
            train.positive_class,
            &train.top_k,
        );
        match test {
            Ok(t) => {
                hooks.on_event(&ProtocolEvent::SplitFinished {
                    split_id: &id,
                    test_accuracy: t.accuracy,
                });
                candidates[b].record.test = Some(t);
                selected = Some(id);
            }
            Err(error) => {
                hooks.on_event(&ProtocolEvent::SplitFailed { split_id: &id, error: &error });
                failures.push(SplitFailure {
                    split_id: id,
                    error: error.to_string(),
                });
            }
        }
    }

    let records: Vec<RunRecord> = candidates.into_iter().map(|c| c.record).collect();
    Ok(ProtocolReport {
        aggregate: Aggregate::of(&records),
        records,
        failures,
        selected,
    })
}
