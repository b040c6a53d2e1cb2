//! Tables, vertical partitioning, alignment and batching.
//!
//! A [`SampleTable`] is the centralized view: aligned sample ids, named
//! feature columns and an optional label column. A [`DomainPartition`] carves
//! its feature space into per-domain slices; labels never belong to a feature
//! domain — they stay with the server or the label holder, depending on the
//! topology.

mod csv;
mod resample;

pub use csv::{
    load_fraud_csv, load_retail_csv, restrict_to_active_users, retain_retail_users,
    subsample_retail_by_user, RetailData, FRAUD_COLUMNS,
};
pub use resample::{negative_sample, random_undersample, smote_oversample};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Aligned samples: ids, named feature columns and an optional label column.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    sample_ids: Vec<u64>,
    columns: Vec<String>,
    features: Tensor,
    labels: Option<Tensor>,
}

impl SampleTable {
    pub fn new(
        sample_ids: Vec<u64>,
        columns: Vec<String>,
        features: Tensor,
        labels: Option<Tensor>,
    ) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Dimension(format!(
                "features must be n×f, got {:?}",
                features.shape()
            )));
        }
        let n = features.rows();
        if sample_ids.len() != n {
            return Err(Error::Alignment(format!(
                "{} sample ids for {n} feature rows",
                sample_ids.len()
            )));
        }
        if !sample_ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Data("sample ids must be strictly increasing".into()));
        }
        if columns.len() != features.cols() {
            return Err(Error::Dimension(format!(
                "{} column names for {} feature columns",
                columns.len(),
                features.cols()
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(Error::Data(format!("duplicate column name '{c}'")));
            }
        }
        if let Some(l) = &labels {
            if l.shape() != [n, 1] {
                return Err(Error::Dimension(format!(
                    "labels must be {n}×1, got {:?}",
                    l.shape()
                )));
            }
        }
        Ok(Self {
            sample_ids,
            columns,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> Option<&Tensor> {
        self.labels.as_ref()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// A new table holding the named columns (in the order given), without
    /// labels.
    pub fn select_columns(&self, names: &[&str]) -> Result<SampleTable> {
        let mut idx = Vec::with_capacity(names.len());
        for name in names {
            idx.push(self.column_index(name).ok_or_else(|| {
                Error::Schema(format!("column '{name}' not present in table"))
            })?);
        }
        SampleTable::new(
            self.sample_ids.clone(),
            names.iter().map(|s| s.to_string()).collect(),
            self.features.take_columns(&idx)?,
            None,
        )
    }

    /// Restricts the table to the rows whose ids appear in `ids`, preserving
    /// ascending order.
    pub fn restrict_to_ids(&self, ids: &BTreeSet<u64>) -> Result<SampleTable> {
        let keep: Vec<usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .filter(|(_, id)| ids.contains(id))
            .map(|(i, _)| i)
            .collect();
        if keep.is_empty() {
            return Err(Error::Alignment("restriction leaves no rows".into()));
        }
        self.take_rows(&keep)
    }

    /// Selects rows by positional index (must be ascending to preserve the
    /// id invariant).
    pub fn take_rows(&self, rows: &[usize]) -> Result<SampleTable> {
        let sample_ids: Vec<u64> = rows.iter().map(|&r| self.sample_ids[r]).collect();
        let labels = match &self.labels {
            Some(l) => Some(l.take_rows(rows)?),
            None => None,
        };
        SampleTable::new(
            sample_ids,
            self.columns.clone(),
            self.features.take_rows(rows)?,
            labels,
        )
    }

    /// Replaces the feature tensor (same shape) — used by standardization.
    fn replace_features(&mut self, features: Tensor) -> Result<()> {
        if features.shape() != self.features.shape() {
            return Err(Error::Dimension("replacement features change shape".into()));
        }
        self.features = features;
        Ok(())
    }
}

/// Standardizes the named columns to zero mean / unit variance, with the
/// statistics fitted on `train` only and applied to every table given.
/// Constant columns are left untouched.
pub fn standardize_columns(
    train: &mut SampleTable,
    others: &mut [&mut SampleTable],
    columns: &[&str],
) -> Result<()> {
    let mut stats = Vec::with_capacity(columns.len());
    for name in columns {
        let idx = train
            .column_index(name)
            .ok_or_else(|| Error::Schema(format!("column '{name}' not present")))?;
        let col = train.features.column(idx);
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        stats.push((name.to_string(), mean, if std > 0.0 { std } else { 1.0 }));
    }
    let apply = |table: &mut SampleTable| -> Result<()> {
        let mut data = table.features.data().to_vec();
        let w = table.features.cols();
        for (name, mean, std) in &stats {
            if let Some(c) = table.column_index(name) {
                for r in 0..table.len() {
                    data[r * w + c] = (data[r * w + c] - mean) / std;
                }
            }
        }
        table.replace_features(Tensor::new(table.features.shape().to_vec(), data)?)
    };
    apply(train)?;
    for t in others {
        apply(t)?;
    }
    Ok(())
}

/// Assignment of every feature column to exactly one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainPartition {
    assignments: BTreeMap<String, usize>,
    num_domains: usize,
}

impl DomainPartition {
    pub fn new(assignments: BTreeMap<String, usize>, num_domains: usize) -> Result<Self> {
        if num_domains == 0 {
            return Err(Error::Config("a partition needs at least one domain".into()));
        }
        let mut seen = vec![false; num_domains];
        for (col, &d) in &assignments {
            if d >= num_domains {
                return Err(Error::Config(format!(
                    "column '{col}' assigned to domain {d}, but there are only {num_domains}"
                )));
            }
            seen[d] = true;
        }
        if let Some(empty) = seen.iter().position(|s| !s) {
            return Err(Error::Config(format!("domain {empty} owns no columns")));
        }
        Ok(Self {
            assignments,
            num_domains,
        })
    }

    /// Contiguous equal-width regrouping of the given columns: the first
    /// `ceil(f/D)`-ish block to domain 0, and so on, sized as evenly as
    /// possible.
    pub fn contiguous(columns: &[String], num_domains: usize) -> Result<Self> {
        if num_domains == 0 || num_domains > columns.len() {
            return Err(Error::Config(format!(
                "cannot split {} columns into {num_domains} domains",
                columns.len()
            )));
        }
        let base = columns.len() / num_domains;
        let extra = columns.len() % num_domains;
        let mut assignments = BTreeMap::new();
        let mut next = 0usize;
        for d in 0..num_domains {
            let width = base + usize::from(d < extra);
            for col in &columns[next..next + width] {
                assignments.insert(col.clone(), d);
            }
            next += width;
        }
        Self::new(assignments, num_domains)
    }

    /// The default three-domain split of the card-fraud schema:
    /// a finance domain (Amount, V1–V10), a cardholder domain (Time,
    /// V11–V19) and a security domain (V20–V28).
    pub fn fraud_default() -> Self {
        let mut assignments = BTreeMap::new();
        assignments.insert("Amount".to_string(), 0);
        for i in 1..=10 {
            assignments.insert(format!("V{i}"), 0);
        }
        assignments.insert("Time".to_string(), 1);
        for i in 11..=19 {
            assignments.insert(format!("V{i}"), 1);
        }
        for i in 20..=28 {
            assignments.insert(format!("V{i}"), 2);
        }
        Self::new(assignments, 3).expect("static partition is valid")
    }

    pub fn num_domains(&self) -> usize {
        self.num_domains
    }

    pub fn assignments(&self) -> &BTreeMap<String, usize> {
        &self.assignments
    }

    pub fn domain_of(&self, column: &str) -> Option<usize> {
        self.assignments.get(column).copied()
    }
}

/// Splits a table's columns into per-domain tables. Every domain keeps all
/// rows and the original sample-id order; none of them carries labels.
pub fn vertical_partition(
    table: &SampleTable,
    partition: &DomainPartition,
) -> Result<Vec<SampleTable>> {
    for col in table.columns() {
        if partition.domain_of(col).is_none() {
            return Err(Error::Config(format!(
                "partition does not assign column '{col}'"
            )));
        }
    }
    for col in partition.assignments().keys() {
        if table.column_index(col).is_none() {
            return Err(Error::Config(format!(
                "partition assigns unknown column '{col}'"
            )));
        }
    }
    let mut out = Vec::with_capacity(partition.num_domains());
    for d in 0..partition.num_domains() {
        // Keep the source table's column order within each domain.
        let names: Vec<&str> = table
            .columns()
            .iter()
            .filter(|c| partition.domain_of(c) == Some(d))
            .map(String::as_str)
            .collect();
        out.push(table.select_columns(&names)?);
    }
    Ok(out)
}

/// Restricts every table to the shared sample ids, in identical order.
pub fn align_samples(tables: &[SampleTable]) -> Result<Vec<SampleTable>> {
    if tables.is_empty() {
        return Err(Error::Argument("nothing to align".into()));
    }
    let mut shared: BTreeSet<u64> = tables[0].sample_ids().iter().copied().collect();
    for t in &tables[1..] {
        let ids: BTreeSet<u64> = t.sample_ids().iter().copied().collect();
        shared = shared.intersection(&ids).copied().collect();
    }
    if shared.is_empty() {
        return Err(Error::Alignment("no shared sample ids".into()));
    }
    tables.iter().map(|t| t.restrict_to_ids(&shared)).collect()
}

/// Disjoint, exhaustive train/test split. The test side receives
/// `ceil(test_fraction · n)` rows; under stratification the per-class test
/// counts follow a floor-plus-largest-remainder allocation, so published
/// support counts are reproduced exactly.
pub fn train_test_split(
    table: &SampleTable,
    test_fraction: f64,
    rng: &mut RngState,
    stratified: bool,
) -> Result<(SampleTable, SampleTable)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = table.len();
    let n_test = (test_fraction * n as f64).ceil() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Argument(format!(
            "test fraction {test_fraction} leaves an empty split for {n} rows"
        )));
    }

    let test_rows: Vec<usize> = if stratified {
        let labels = table
            .labels()
            .ok_or_else(|| Error::Data("stratified split needs labels".into()))?;
        let mut strata: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, &y) in labels.data().iter().enumerate() {
            strata.entry(y.to_bits()).or_default().push(i);
        }
        if strata.len() < 2 {
            return Err(Error::Data(
                "stratification error: only one class present".into(),
            ));
        }
        // Floor allocation first, then hand out the remaining test rows by
        // descending fractional remainder (ties: larger stratum first, then
        // smaller label bits).
        let mut allocation: Vec<(u64, usize, usize, f64)> = strata
            .iter()
            .map(|(&bits, rows)| {
                let exact = test_fraction * rows.len() as f64;
                let base = exact.floor() as usize;
                (bits, rows.len(), base, exact - base as f64)
            })
            .collect();
        let assigned: usize = allocation.iter().map(|a| a.2).sum();
        let mut leftover = n_test.saturating_sub(assigned);
        let mut order: Vec<usize> = (0..allocation.len()).collect();
        order.sort_by(|&a, &b| {
            allocation[b]
                .3
                .partial_cmp(&allocation[a].3)
                .expect("finite remainders")
                .then(allocation[b].1.cmp(&allocation[a].1))
                .then(allocation[a].0.cmp(&allocation[b].0))
        });
        // leftover ≤ #strata because the floors drop less than one row each.
        for &i in &order {
            if leftover == 0 {
                break;
            }
            if allocation[i].2 < allocation[i].1 {
                allocation[i].2 += 1;
                leftover -= 1;
            }
        }
        debug_assert_eq!(leftover, 0);
        let mut rows = Vec::with_capacity(n_test);
        for (bits, stratum_size, take, _) in &allocation {
            let stratum = &strata[bits];
            if *take == 0 || *take == *stratum_size {
                return Err(Error::Data(format!(
                    "stratification error: class {} would be absent from one side",
                    f64::from_bits(*bits)
                )));
            }
            for pick in rng.sample_indices(*stratum_size, *take) {
                rows.push(stratum[pick]);
            }
        }
        rows.sort_unstable();
        rows
    } else {
        rng.sample_indices(n, n_test)
    };

    let test_set: BTreeSet<usize> = test_rows.iter().copied().collect();
    let train_rows: Vec<usize> = (0..n).filter(|i| !test_set.contains(i)).collect();
    Ok((table.take_rows(&train_rows)?, table.take_rows(&test_rows)?))
}

/// One mini-batch: row-aligned per-domain feature blocks, the matching
/// labels and the underlying sample ids.
#[derive(Debug, Clone)]
pub struct Batch {
    pub domain_inputs: Vec<Tensor>,
    pub labels: Tensor,
    pub sample_ids: Vec<u64>,
}

/// Cuts aligned per-domain tables into mini-batches under one shared row
/// permutation, so alignment holds inside every batch. The final short batch
/// is kept.
pub fn make_batches(
    tables: &[SampleTable],
    labels: &Tensor,
    batch_size: usize,
    rng: &mut RngState,
    shuffle: bool,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be positive".into()));
    }
    if tables.is_empty() {
        return Err(Error::Argument("no domain tables".into()));
    }
    let ids = tables[0].sample_ids();
    for t in &tables[1..] {
        if t.sample_ids() != ids {
            return Err(Error::Alignment(
                "domain tables are not row-aligned; run align_samples first".into(),
            ));
        }
    }
    let n = ids.len();
    if labels.shape() != [n, 1] {
        return Err(Error::Alignment(format!(
            "labels shape {:?} does not match {n} rows",
            labels.shape()
        )));
    }
    let perm: Vec<usize> = if shuffle {
        rng.permutation(n)
    } else {
        (0..n).collect()
    };
    let mut batches = Vec::with_capacity(n.div_ceil(batch_size));
    for chunk in perm.chunks(batch_size) {
        let domain_inputs = tables
            .iter()
            .map(|t| t.features().take_rows(chunk))
            .collect::<Result<Vec<_>>>()?;
        batches.push(Batch {
            domain_inputs,
            labels: labels.take_rows(chunk)?,
            sample_ids: chunk.iter().map(|&i| ids[i]).collect(),
        });
    }
    Ok(batches)
}

/// Implicit-feedback interactions with dense user/item ids.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTable {
    rows: Vec<(u32, u32, u8)>,
    num_users: usize,
    num_items: usize,
}

impl InteractionTable {
    pub fn new(rows: Vec<(u32, u32, u8)>, num_users: usize, num_items: usize) -> Result<Self> {
        for &(u, i, label) in &rows {
            if u as usize >= num_users {
                return Err(Error::Data(format!(
                    "user id {u} outside 0..{num_users}"
                )));
            }
            if i as usize >= num_items {
                return Err(Error::Data(format!(
                    "item id {i} outside 0..{num_items}"
                )));
            }
            if label > 1 {
                return Err(Error::Data(format!("label {label} is not binary")));
            }
        }
        Ok(Self {
            rows,
            num_users,
            num_items,
        })
    }

    pub fn rows(&self) -> &[(u32, u32, u8)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    /// Positive item sets indexed by user.
    pub fn positives_by_user(&self) -> Vec<BTreeSet<u32>> {
        let mut sets = vec![BTreeSet::new(); self.num_users];
        for &(u, i, label) in &self.rows {
            if label == 1 {
                sets[u as usize].insert(i);
            }
        }
        sets
    }
}

/// Knobs for the resampling pipelines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResampleConfig {
    /// Target minority/majority ratio after SMOTE oversampling.
    pub smote_ratio: f64,
    /// Target minority/majority ratio after random undersampling.
    pub under_ratio: f64,
    /// Neighbour count for SMOTE interpolation.
    pub smote_k: usize,
    /// Sampled negatives per observed positive interaction.
    pub neg_ratio: usize,
}

impl ResampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.smote_ratio > 0.0 && self.smote_ratio <= self.under_ratio) {
            return Err(Error::Argument(format!(
                "need 0 < smote_ratio ≤ under_ratio, got {} and {}",
                self.smote_ratio, self.under_ratio
            )));
        }
        if self.under_ratio > 1.0 {
            return Err(Error::Argument(format!(
                "under_ratio must not exceed 1, got {}",
                self.under_ratio
            )));
        }
        if self.smote_k == 0 {
            return Err(Error::Argument("smote_k must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for ResampleConfig {
    fn default() -> Self {
        Self {
            smote_ratio: 0.015,
            under_ratio: 0.02,
            smote_k: 5,
            neg_ratio: 5,
        }
    }
}
