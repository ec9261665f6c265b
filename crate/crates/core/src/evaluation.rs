//! Confusion matrices, one-vs-rest metrics with macro averages, and
//! stratified k-fold cross-validation.
//!
//! A metric whose denominator is zero is reported as `None` (serialized as
//! `null`) and counts as 0 in the macro mean.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::classifier::{predict, train, EpochLog, TrainConfig};
use crate::error::{Error, Result};
use crate::features::FeatureStack;
use crate::signal_io::MurmurClass;

const C: usize = MurmurClass::COUNT;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; C]; C],
}

/// One-vs-rest tallies of one class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tally {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn from_pairs(preds: &[MurmurClass], labels: &[MurmurClass]) -> Result<Self> {
        if preds.len() != labels.len() {
            return Err(Error::Dim(format!("{} predictions for {} labels", preds.len(), labels.len())));
        }
        let mut cm = Self::default();
        for (p, l) in preds.iter().zip(labels) {
            cm.counts[l.index()][p.index()] += 1;
        }
        Ok(cm)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn tally(&self, class: usize) -> Tally {
        let tp = self.counts[class][class];
        let fn_ = self.counts[class].iter().sum::<u64>() - tp;
        let fp = (0..C).map(|r| self.counts[r][class]).sum::<u64>() - tp;
        Tally {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().flatten().zip(other.counts.iter().flatten()) {
            *a += b;
        }
    }
}

pub fn confusion(preds: &[MurmurClass], labels: &[MurmurClass]) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_pairs(preds, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Specificity `TN/(TN+FP)`, F1 `2TP/(2TP+FP+FN)` and accuracy
/// `(TP+TN)/total` for every class.
pub fn per_class_metrics(cm: &ConfusionMatrix) -> Result<[ClassMetrics; C]> {
    if cm.total() == 0 {
        return Err(Error::EmptyInput("confusion matrix has no counts".into()));
    }
    Ok(std::array::from_fn(|i| {
        let t = cm.tally(i);
        ClassMetrics {
            specificity: ratio(t.tn, t.tn + t.fp),
            f1: ratio(2 * t.tp, 2 * t.tp + t.fp + t.fn_),
            accuracy: ratio(t.tp + t.tn, t.tp + t.tn + t.fp + t.fn_),
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub fold_id: Option<usize>,
    pub confusion: ConfusionMatrix,
    pub per_class: [ClassMetrics; C],
    pub macro_specificity: f64,
    pub macro_f1: f64,
    pub macro_accuracy: f64,
    /// `class.metric` names that had a zero denominator.
    pub not_defined: Vec<String>,
}

pub fn macro_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let per_class = per_class_metrics(cm)?;
    let mut not_defined = Vec::new();
    let mut mean = |name: &str, get: fn(&ClassMetrics) -> Option<f64>| {
        let mut sum = 0.0;
        for (i, m) in per_class.iter().enumerate() {
            match get(m) {
                Some(v) => sum += v,
                None => not_defined.push(format!("{}.{name}", MurmurClass::ALL[i])),
            }
        }
        sum / C as f64
    };
    let macro_specificity = mean("specificity", |m| m.specificity);
    let macro_f1 = mean("f1", |m| m.f1);
    let macro_accuracy = mean("accuracy", |m| m.accuracy);
    Ok(MetricsReport {
        fold_id: None,
        confusion: *cm,
        per_class,
        macro_specificity,
        macro_f1,
        macro_accuracy,
        not_defined,
    })
}

/// Fold id of every sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }
}

/// Per class: a seeded shuffle, then round-robin over folds. Fold `f` of
/// class `c` receives either `floor(n_c/k)` or `ceil(n_c/k)` members.
pub fn stratified_kfold(labels: &[MurmurClass], k: usize, seed: u64) -> Result<FoldPlan> {
    let groups: Vec<usize> = (0..labels.len()).collect();
    stratified_group_kfold(labels, &groups, k, seed)
}

/// Like [`stratified_kfold`], but samples sharing a group key always land in
/// the same fold. Each group is stratified by the label of its first member.
pub fn stratified_group_kfold<G: PartialEq + Clone>(
    labels: &[MurmurClass],
    groups: &[G],
    k: usize,
    seed: u64,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    if labels.len() != groups.len() {
        return Err(Error::Dim(format!("{} labels for {} group keys", labels.len(), groups.len())));
    }
    // groups in order of first appearance
    let mut keys: Vec<G> = Vec::new();
    let mut group_of = Vec::with_capacity(labels.len());
    for g in groups {
        let id = keys.iter().position(|k| k == g).unwrap_or_else(|| {
            keys.push(g.clone());
            keys.len() - 1
        });
        group_of.push(id);
    }
    let mut group_label = vec![None; keys.len()];
    for (i, &g) in group_of.iter().enumerate() {
        group_label[g].get_or_insert(labels[i]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of_group = vec![0; keys.len()];
    for class in MurmurClass::ALL {
        let mut members: Vec<usize> = (0..keys.len()).filter(|&g| group_label[g] == Some(class)).collect();
        if !members.is_empty() && members.len() < k {
            log::warn!("class {class} has {} groups, fewer than k={k}; some folds lack it", members.len());
        }
        members.shuffle(&mut rng);
        for (r, g) in members.into_iter().enumerate() {
            fold_of_group[g] = r % k;
        }
    }
    Ok(FoldPlan {
        k,
        seed,
        assignments: group_of.iter().map(|&g| fold_of_group[g]).collect(),
    })
}

/// Stratified hold-out split: returns `(train, test)` indices with
/// `round(n_c * test_fraction)` of each class in the test part.
pub fn stratified_split(labels: &[MurmurClass], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test fraction {test_fraction} must lie in [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = Vec::new();
    for class in MurmurClass::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        let n_test = (members.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&members[..n_test]);
    }
    test.sort_unstable();
    let train = (0..labels.len()).filter(|i| test.binary_search(i).is_err()).collect();
    Ok((train, test))
}

/// Anything that can be trained on one part of a dataset and predict the
/// other. Cross-validation only sees this interface.
pub trait Learner<T> {
    fn fit_predict(&mut self, fold: usize, train: &[&T], test: &[&T]) -> Result<Vec<MurmurClass>>;
}

/// The transformer classifier as a [`Learner`]. Training logs of every
/// fold are kept.
pub struct TransformerLearner {
    pub cfg: TrainConfig,
    pub heads: usize,
    pub d_head: usize,
    pub logs: Vec<Vec<EpochLog>>,
}

impl TransformerLearner {
    pub fn new(cfg: TrainConfig, heads: usize, d_head: usize) -> Self {
        Self {
            cfg,
            heads,
            d_head,
            logs: Vec::new(),
        }
    }
}

impl Learner<FeatureStack> for TransformerLearner {
    fn fit_predict(&mut self, fold: usize, train_set: &[&FeatureStack], test: &[&FeatureStack]) -> Result<Vec<MurmurClass>> {
        let owned: Vec<FeatureStack> = train_set.iter().map(|s| (*s).clone()).collect();
        let cfg = TrainConfig {
            seed: self.cfg.seed.wrapping_add(fold as u64),
            ..self.cfg.clone()
        };
        let out = train(&owned, None, &cfg, self.heads, self.d_head)?;
        self.logs.push(out.log);
        test.iter().map(|s| predict(s, &out.model).map(|(c, _)| c)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MacroSummary {
    pub macro_specificity: f64,
    pub macro_f1: f64,
    pub macro_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<MetricsReport>,
    pub mean: MacroSummary,
    /// Population standard deviation over folds.
    pub std: MacroSummary,
    /// All folds' predictions pooled.
    pub pooled_confusion: ConfusionMatrix,
}

fn summarize(folds: &[MetricsReport]) -> (MacroSummary, MacroSummary) {
    let n = folds.len() as f64;
    let stat = |get: fn(&MetricsReport) -> f64| {
        let mean = folds.iter().map(get).sum::<f64>() / n;
        let var = folds.iter().map(|f| (get(f) - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    };
    let (ms, ss) = stat(|f| f.macro_specificity);
    let (mf, sf) = stat(|f| f.macro_f1);
    let (ma, sa) = stat(|f| f.macro_accuracy);
    (
        MacroSummary {
            macro_specificity: ms,
            macro_f1: mf,
            macro_accuracy: ma,
        },
        MacroSummary {
            macro_specificity: ss,
            macro_f1: sf,
            macro_accuracy: sa,
        },
    )
}

/// Trains on `k - 1` folds and evaluates on the held-out one, for every
/// fold in order.
pub fn cross_validate<T>(
    items: &[T],
    labels: &[MurmurClass],
    plan: &FoldPlan,
    learner: &mut dyn Learner<T>,
) -> Result<CvReport> {
    if items.len() != labels.len() || plan.assignments.len() != items.len() {
        return Err(Error::Dim(format!(
            "{} items, {} labels, {} fold assignments",
            items.len(),
            labels.len(),
            plan.assignments.len()
        )));
    }
    let mut folds = Vec::with_capacity(plan.k);
    let mut pooled = ConfusionMatrix::default();
    for fold in 0..plan.k {
        let test_idx = plan.test_indices(fold);
        if test_idx.is_empty() {
            return Err(Error::DegenerateDataset(format!("fold {fold} is empty")));
        }
        let train: Vec<&T> = plan.train_indices(fold).into_iter().map(|i| &items[i]).collect();
        let test: Vec<&T> = test_idx.iter().map(|&i| &items[i]).collect();
        let preds = learner.fit_predict(fold, &train, &test)?;
        let truth: Vec<MurmurClass> = test_idx.iter().map(|&i| labels[i]).collect();
        let cm = confusion(&preds, &truth)?;
        pooled.add(&cm);
        let mut report = macro_metrics(&cm)?;
        report.fold_id = Some(fold);
        log::info!("fold {fold}: macro accuracy {:.4}", report.macro_accuracy);
        folds.push(report);
    }
    let (mean, std) = summarize(&folds);
    Ok(CvReport {
        k: plan.k,
        seed: plan.seed,
        folds,
        mean,
        std,
        pooled_confusion: pooled,
    })
}
