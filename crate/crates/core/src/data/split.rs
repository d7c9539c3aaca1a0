use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::class_counts;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, ModelRng};

/// How a dataset is partitioned for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum SplitVariant {
    /// `repeats` independent train/test splits; validation is carved out of train.
    RepeatedHoldout {
        repeats: usize,
        test_fraction: f64,
        validation_fraction: f64,
    },
    /// Every fold serves once as the test set.
    KFold {
        folds: usize,
        validation_fraction: f64,
    },
    /// k folds over a reference set (the held-out fold validates pretraining),
    /// then a train/validation split of a separate fine-tuning set.
    PretrainFinetune {
        folds: usize,
        finetune_validation_fraction: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub variant: SplitVariant,
    pub stratified: bool,
    pub seed: u64,
}

/// Disjoint index sets into one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub id: String,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

const FOLD_STREAM: u64 = 0xF01D;

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, f: f64, allow_zero: bool| {
            let ok = if allow_zero { (0.0..1.0).contains(&f) } else { f > 0.0 && f < 1.0 };
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {f} out of range")))
            }
        };
        match self.variant {
            SplitVariant::RepeatedHoldout {
                repeats,
                test_fraction,
                validation_fraction,
            } => {
                if repeats == 0 {
                    return Err(Error::Config("repeats must be at least 1".into()));
                }
                frac("test fraction", test_fraction, false)?;
                frac("validation fraction", validation_fraction, true)
            }
            SplitVariant::KFold {
                folds,
                validation_fraction,
            } => {
                if folds < 2 {
                    return Err(Error::Config("need at least 2 folds".into()));
                }
                frac("validation fraction", validation_fraction, true)
            }
            SplitVariant::PretrainFinetune {
                folds,
                finetune_validation_fraction,
            } => {
                if folds < 2 {
                    return Err(Error::Config("need at least 2 folds".into()));
                }
                frac("fine-tune validation fraction", finetune_validation_fraction, false)
            }
        }
    }
}

/// Generate the splits of `plan` over `labels` (class indices `< num_classes`).
///
/// For [`SplitVariant::PretrainFinetune`] these are the reference-set folds,
/// with the held-out fold as validation and no test indices; the fine-tuning
/// split comes from [`holdout_split`].
pub fn make_splits(labels: &[usize], num_classes: usize, plan: &SplitPlan) -> Result<Vec<Split>> {
    plan.validate()?;
    let n = labels.len();
    if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::LabelOutOfRange { label, num_classes });
    }
    match plan.variant {
        SplitVariant::RepeatedHoldout {
            repeats,
            test_fraction,
            validation_fraction,
        } => (0..repeats)
            .map(|r| {
                let mut rng = rng_from_seed(derive_seed(plan.seed, r as u64));
                let all: Vec<usize> = (0..n).collect();
                let (train, test) = partition(labels, num_classes, &all, test_fraction, plan.stratified, true, &mut rng)?;
                let (train, validation) =
                    partition(labels, num_classes, &train, validation_fraction, plan.stratified, false, &mut rng)?;
                Ok(Split {
                    id: format!("repeat-{r}"),
                    train,
                    validation,
                    test,
                })
            })
            .collect(),
        SplitVariant::KFold {
            folds,
            validation_fraction,
        } => {
            let assignment = fold_assignment(labels, num_classes, folds, plan)?;
            (0..folds)
                .map(|f| {
                    let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
                    let rest: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
                    let mut rng = rng_from_seed(derive_seed(plan.seed, f as u64));
                    let (train, validation) =
                        partition(labels, num_classes, &rest, validation_fraction, plan.stratified, false, &mut rng)?;
                    Ok(Split {
                        id: format!("fold-{f}"),
                        train,
                        validation,
                        test,
                    })
                })
                .collect()
        }
        SplitVariant::PretrainFinetune { folds, .. } => {
            let assignment = fold_assignment(labels, num_classes, folds, plan)?;
            Ok((0..folds)
                .map(|f| Split {
                    id: format!("pretrain-{f}"),
                    train: (0..n).filter(|&i| assignment[i] != f).collect(),
                    validation: (0..n).filter(|&i| assignment[i] == f).collect(),
                    test: Vec::new(),
                })
                .collect())
        }
    }
}

/// One train/validation split of all of `labels` (used for fine-tuning sets).
pub fn holdout_split(
    labels: &[usize],
    num_classes: usize,
    fraction: f64,
    stratified: bool,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let all: Vec<usize> = (0..labels.len()).collect();
    partition(labels, num_classes, &all, fraction, stratified, false, &mut rng_from_seed(seed))
}

fn fold_assignment(labels: &[usize], num_classes: usize, folds: usize, plan: &SplitPlan) -> Result<Vec<usize>> {
    let n = labels.len();
    if folds > n {
        return Err(Error::Config(format!("{folds} folds for {n} samples")));
    }
    let mut rng = rng_from_seed(derive_seed(plan.seed, FOLD_STREAM));
    let order: Vec<usize> = if plan.stratified {
        let counts = class_counts(labels, num_classes);
        if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &c)| c == 1) {
            return Err(Error::Stratification {
                class,
                count,
                needed: 2,
            });
        }
        // class-grouped, shuffled within class; dealing round-robin keeps every
        // class within ±1 sample per fold
        let mut groups = group_by_class(labels, num_classes, &(0..n).collect::<Vec<_>>());
        groups.iter_mut().for_each(|g| g.shuffle(&mut rng));
        groups.concat()
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all
    };
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    Ok(assignment)
}

fn group_by_class(labels: &[usize], num_classes: usize, pool: &[usize]) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); num_classes];
    for &i in pool {
        groups[labels[i]].push(i);
    }
    groups
}

/// Split `pool` into `(kept, held_out)` with `round(fraction · |pool|)` held out.
///
/// Stratified: per-class quotas by largest remainder, never taking a class's
/// last sample. With `require_every_class`, a class that cannot keep a sample
/// on both sides is an error.
fn partition(
    labels: &[usize],
    num_classes: usize,
    pool: &[usize],
    fraction: f64,
    stratified: bool,
    require_every_class: bool,
    rng: &mut ModelRng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let target = libm::round(fraction * pool.len() as f64) as usize;
    if target == 0 {
        let mut kept = pool.to_vec();
        kept.sort_unstable();
        return Ok((kept, Vec::new()));
    }
    let mut groups = group_by_class(labels, num_classes, pool);
    if require_every_class {
        if let Some((class, g)) = groups.iter().enumerate().find(|(_, g)| g.len() == 1) {
            return Err(Error::Stratification {
                class,
                count: g.len(),
                needed: 2,
            });
        }
    }

    let (mut kept, mut held) = if stratified {
        groups.iter_mut().for_each(|g| g.shuffle(rng));
        let exact: Vec<f64> = groups.iter().map(|g| fraction * g.len() as f64).collect();
        let cap = |c: usize| groups[c].len().saturating_sub(1);
        let mut quota: Vec<usize> = (0..num_classes)
            .map(|c| (libm::floor(exact[c]) as usize).min(cap(c)))
            .collect();
        let mut order: Vec<usize> = (0..num_classes).collect();
        // largest fractional remainder first; ties to the lower class index
        order.sort_by(|&a, &b| {
            let ra = exact[a] - libm::floor(exact[a]);
            let rb = exact[b] - libm::floor(exact[b]);
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut remaining = target.saturating_sub(quota.iter().sum());
        while remaining > 0 {
            let before = remaining;
            for &c in &order {
                if remaining > 0 && quota[c] < cap(c) {
                    quota[c] += 1;
                    remaining -= 1;
                }
            }
            if remaining == before {
                break;
            }
        }
        let mut kept = Vec::with_capacity(pool.len());
        let mut held = Vec::with_capacity(target);
        for (g, q) in groups.iter().zip(&quota) {
            held.extend_from_slice(&g[..*q]);
            kept.extend_from_slice(&g[*q..]);
        }
        (kept, held)
    } else {
        let mut shuffled = pool.to_vec();
        shuffled.shuffle(rng);
        let held = shuffled[..target.min(pool.len())].to_vec();
        let kept = shuffled[target.min(pool.len())..].to_vec();
        (kept, held)
    };

    if require_every_class {
        let present = class_counts(&kept.iter().map(|&i| labels[i]).collect::<Vec<_>>(), num_classes);
        let pool_counts = class_counts(&pool.iter().map(|&i| labels[i]).collect::<Vec<_>>(), num_classes);
        if let Some(class) = (0..num_classes).find(|&c| pool_counts[c] > 0 && present[c] == 0) {
            return Err(Error::Stratification {
                class,
                count: pool_counts[class],
                needed: 2,
            });
        }
    }
    kept.sort_unstable();
    held.sort_unstable();
    Ok((kept, held))
}
