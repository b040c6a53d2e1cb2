//! Evaluation metrics: top-K ranking and binary classification.
//!
//! Ranking metrics operate on [`RankedList`]s — per-user item rankings with
//! a relevance set and a cutoff K. Score ties are broken by ascending item
//! id when a ranking is built with [`rank_items`], so every metric value is
//! deterministic. Classification metrics operate on probability scores with
//! an explicit decision threshold.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One user's ranking: items in descending score order, the relevant set,
/// and the cutoff.
#[derive(Debug, Clone)]
pub struct RankedList {
    pub user: u64,
    pub ranked_items: Vec<u32>,
    pub relevant_items: BTreeSet<u32>,
    pub k: usize,
}

impl RankedList {
    pub fn new(
        user: u64,
        ranked_items: Vec<u32>,
        relevant_items: BTreeSet<u32>,
        k: usize,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::Argument("cutoff K must be at least 1".into()));
        }
        let mut seen = BTreeSet::new();
        for &item in &ranked_items {
            if !seen.insert(item) {
                return Err(Error::Argument(format!(
                    "item {item} appears twice in a ranking"
                )));
            }
        }
        Ok(Self {
            user,
            ranked_items,
            relevant_items,
            k,
        })
    }

    fn top_k(&self) -> &[u32] {
        &self.ranked_items[..self.k.min(self.ranked_items.len())]
    }

    fn hits_in_top_k(&self) -> usize {
        self.top_k()
            .iter()
            .filter(|item| self.relevant_items.contains(item))
            .count()
    }
}

/// Builds a ranking from raw scores. Ties are broken by ascending item id.
pub fn rank_items(
    user: u64,
    scored: &[(u32, f64)],
    relevant_items: BTreeSet<u32>,
    k: usize,
) -> Result<RankedList> {
    let mut order: Vec<(u32, f64)> = scored.to_vec();
    order.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("scores are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    RankedList::new(user, order.into_iter().map(|(i, _)| i).collect(), relevant_items, k)
}

fn check_batch(lists: &[RankedList]) -> Result<()> {
    if lists.is_empty() {
        return Err(Error::Argument("empty ranking batch".into()));
    }
    for list in lists {
        if list.relevant_items.is_empty() {
            return Err(Error::Data(format!(
                "user {} has no relevant items",
                list.user
            )));
        }
    }
    Ok(())
}

/// Fraction of users with at least one relevant item inside the top K.
pub fn hit_ratio_at_k(lists: &[RankedList]) -> Result<f64> {
    check_batch(lists)?;
    let hits = lists.iter().filter(|l| l.hits_in_top_k() > 0).count();
    Ok(hits as f64 / lists.len() as f64)
}

/// Mean discounted gain of the single relevant item: `1/log₂(rank+1)` when
/// it lands inside the top K, 0 otherwise. The ideal DCG is 1 because every
/// list carries exactly one relevant item; lists that violate that are
/// rejected (use [`recall_at_k`] for multi-relevant evaluation).
pub fn ndcg_at_k(lists: &[RankedList]) -> Result<f64> {
    check_batch(lists)?;
    let mut total = 0.0;
    for list in lists {
        if list.relevant_items.len() != 1 {
            return Err(Error::Argument(format!(
                "ndcg expects exactly one relevant item per list, user {} has {}",
                list.user,
                list.relevant_items.len()
            )));
        }
        let target = *list.relevant_items.iter().next().expect("one item");
        if let Some(pos) = list.top_k().iter().position(|&i| i == target) {
            let rank = (pos + 1) as f64;
            total += 1.0 / (rank + 1.0).log2();
        }
    }
    Ok(total / lists.len() as f64)
}

/// Mean over users of `|relevant ∩ topK| / |relevant|`.
pub fn recall_at_k(lists: &[RankedList]) -> Result<f64> {
    check_batch(lists)?;
    let total: f64 = lists
        .iter()
        .map(|l| l.hits_in_top_k() as f64 / l.relevant_items.len() as f64)
        .sum();
    Ok(total / lists.len() as f64)
}

/// Probability scores with labels and a decision threshold.
#[derive(Debug, Clone)]
pub struct ClassificationOutcome {
    pub scores: Tensor,
    pub labels: Tensor,
    pub threshold: f64,
}

impl ClassificationOutcome {
    pub fn new(scores: Tensor, labels: Tensor, threshold: f64) -> Result<Self> {
        if scores.shape() != labels.shape() || scores.shape().len() != 2 || scores.cols() != 1 {
            return Err(Error::Dimension(format!(
                "scores {:?} and labels {:?} must both be n×1",
                scores.shape(),
                labels.shape()
            )));
        }
        if !(0.0..1.0).contains(&threshold) || threshold == 0.0 {
            return Err(Error::Argument(format!(
                "threshold must lie strictly inside (0, 1), got {threshold}"
            )));
        }
        if scores.data().iter().any(|&s| !(0.0..=1.0).contains(&s)) {
            return Err(Error::Data("scores must lie in [0, 1]".into()));
        }
        for (i, &y) in labels.data().iter().enumerate() {
            if y != 0.0 && y != 1.0 {
                return Err(Error::Data(format!("label at row {i} is {y}")));
            }
        }
        Ok(Self {
            scores,
            labels,
            threshold,
        })
    }

    fn check_both_classes(&self) -> Result<(usize, usize)> {
        let pos = self.labels.data().iter().filter(|&&y| y == 1.0).count();
        let neg = self.labels.data().len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::Data(
                "both classes must be present in the labels".into(),
            ));
        }
        Ok((neg, pos))
    }
}

/// Precision/recall/F1 for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Set when a zero denominator forced precision (or recall) to 0.
    pub degenerate: bool,
}

/// Per-class and macro-averaged classification report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub class0: ClassScores,
    pub class1: ClassScores,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn class_scores(tp: usize, fp: usize, fn_: usize, support: usize) -> ClassScores {
    let mut degenerate = false;
    let precision = if tp + fp == 0 {
        degenerate = true;
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        degenerate = true;
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassScores {
        precision,
        recall,
        f1,
        support,
        degenerate,
    }
}

/// Thresholded per-class precision, recall and F1, with the unweighted
/// two-class macro average.
pub fn precision_recall_f1(outcome: &ClassificationOutcome) -> Result<ClassificationReport> {
    outcome.check_both_classes()?;
    let mut counts = [[0usize; 2]; 2]; // [actual][predicted]
    for (&s, &y) in outcome.scores.data().iter().zip(outcome.labels.data()) {
        let predicted = usize::from(s >= outcome.threshold);
        counts[y as usize][predicted] += 1;
    }
    // For class c: TP = counts[c][c], FP = counts[1-c][c], FN = counts[c][1-c].
    let class1 = class_scores(
        counts[1][1],
        counts[0][1],
        counts[1][0],
        counts[1][0] + counts[1][1],
    );
    let class0 = class_scores(
        counts[0][0],
        counts[1][0],
        counts[0][1],
        counts[0][0] + counts[0][1],
    );
    Ok(ClassificationReport {
        class0,
        class1,
        macro_precision: (class0.precision + class1.precision) / 2.0,
        macro_recall: (class0.recall + class1.recall) / 2.0,
        macro_f1: (class0.f1 + class1.f1) / 2.0,
    })
}

/// Area under the ROC curve in the rank-sum (Mann-Whitney) formulation:
/// the probability that a uniformly chosen positive outscores a uniformly
/// chosen negative, with ties counted one half.
pub fn auc_roc(outcome: &ClassificationOutcome) -> Result<f64> {
    let (neg, pos) = outcome.check_both_classes()?;
    let n = outcome.scores.data().len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        outcome.scores.data()[a]
            .partial_cmp(&outcome.scores.data()[b])
            .expect("scores are finite")
    });
    // Average ranks across tied scores, then sum the positive ranks.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n
            && outcome.scores.data()[order[j + 1]] == outcome.scores.data()[order[i]]
        {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0; // 1-based
        for &idx in &order[i..=j] {
            if outcome.labels.data()[idx] == 1.0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Flat named-value report, serialized as a single sorted JSON object.
/// Metric values lie in [0, 1]; `support_*` entries are integral counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricsReport {
    values: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: f64) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn with_classification(report: &ClassificationReport, auc: f64) -> Self {
        let mut m = Self::new();
        m.insert("precision_class0", report.class0.precision);
        m.insert("precision_class1", report.class1.precision);
        m.insert("precision_macro", report.macro_precision);
        m.insert("recall_class0", report.class0.recall);
        m.insert("recall_class1", report.class1.recall);
        m.insert("recall_macro", report.macro_recall);
        m.insert("f1_class0", report.class0.f1);
        m.insert("f1_class1", report.class1.f1);
        m.insert("f1_macro", report.macro_f1);
        m.insert("support_class0", report.class0.support as f64);
        m.insert("support_class1", report.class1.support as f64);
        m.insert("auc_roc", auc);
        m
    }

    pub fn with_ranking(k: usize, hr: f64, ndcg: f64, recall: f64) -> Self {
        let mut m = Self::new();
        m.insert(format!("hr_at_{k}"), hr);
        m.insert(format!("ndcg_at_{k}"), ndcg);
        m.insert(format!("recall_at_{k}"), recall);
        m
    }
}
