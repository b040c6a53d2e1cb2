//! Desk-scale synthetic stand-ins for the two datasets.

use crate::data::{InteractionTable, SampleTable};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Separable imbalanced tabular data. The minority class (`round(n ·
/// imbalance)` rows) is shifted by +3 on a set of informative features —
/// three standard deviations, so the classes are separable by construction.
/// Informative features are spread uniformly over the column range (one
/// random pick per contiguous block of three), which guarantees every
/// contiguous partition of the columns receives signal.
pub fn generate_synthetic_fraud(
    rows: usize,
    features: usize,
    imbalance: f64,
    rng: &mut RngState,
) -> Result<SampleTable> {
    if rows == 0 || features == 0 {
        return Err(Error::Argument("rows and features must be positive".into()));
    }
    if !(imbalance > 0.0 && imbalance < 1.0) {
        return Err(Error::Argument(format!(
            "imbalance must lie in (0, 1), got {imbalance}"
        )));
    }
    let n_pos = (rows as f64 * imbalance).round() as usize;
    if n_pos == 0 || n_pos >= rows {
        return Err(Error::Argument(format!(
            "imbalance {imbalance} leaves a degenerate class for {rows} rows"
        )));
    }

    // One informative column per block of three, stratified so signal lands
    // in every contiguous regrouping.
    let block = 3usize;
    let mut informative = vec![false; features];
    let mut start = 0;
    while start < features {
        let width = block.min(features - start);
        let pick = start + rng.next_below(width as u64) as usize;
        informative[pick] = true;
        start += block;
    }

    let positive_rows: std::collections::BTreeSet<usize> =
        rng.sample_indices(rows, n_pos).into_iter().collect();

    let mut data = Vec::with_capacity(rows * features);
    let mut labels = Vec::with_capacity(rows);
    for r in 0..rows {
        let is_positive = positive_rows.contains(&r);
        labels.push(f64::from(u8::from(is_positive)));
        for (c, &inf) in informative.iter().enumerate() {
            let _ = c;
            let mut v = rng.next_gaussian();
            if is_positive && inf {
                v += 3.0;
            }
            data.push(v);
        }
    }
    SampleTable::new(
        (0..rows as u64).collect(),
        (0..features).map(|c| format!("f{c}")).collect(),
        Tensor::new(vec![rows, features], data)?,
        Some(Tensor::new(vec![rows, 1], labels)?),
    )
}

/// Implicit-feedback interactions with planted low-rank structure: user and
/// item factors are Gaussian with the given rank, and each user's
/// `positives_per_user` top-scoring items become the observed positives.
pub fn generate_synthetic_retail(
    users: usize,
    items: usize,
    rank: usize,
    positives_per_user: usize,
    rng: &mut RngState,
) -> Result<InteractionTable> {
    if users == 0 || items == 0 || rank == 0 {
        return Err(Error::Argument("users, items and rank must be positive".into()));
    }
    if positives_per_user < 2 || positives_per_user >= items {
        return Err(Error::Argument(format!(
            "positives_per_user must lie in 2..{items}"
        )));
    }
    let user_factors: Vec<f64> = (0..users * rank).map(|_| rng.next_gaussian()).collect();
    let item_factors: Vec<f64> = (0..items * rank).map(|_| rng.next_gaussian()).collect();

    let mut rows = Vec::with_capacity(users * positives_per_user);
    for u in 0..users {
        let mut scored: Vec<(u32, f64)> = (0..items)
            .map(|i| {
                let score: f64 = (0..rank)
                    .map(|k| user_factors[u * rank + k] * item_factors[i * rank + k])
                    .sum();
                (i as u32, score)
            })
            .collect();
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite scores")
                .then(a.0.cmp(&b.0))
        });
        let mut picked: Vec<u32> = scored[..positives_per_user].iter().map(|s| s.0).collect();
        picked.sort_unstable();
        for item in picked {
            rows.push((u as u32, item, 1u8));
        }
    }
    InteractionTable::new(rows, users, items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraud_minority_count_is_rounded() {
        let mut rng = RngState::new(17);
        let t = generate_synthetic_fraud(10_000, 30, 0.0017, &mut rng).unwrap();
        let positives = t
            .labels()
            .unwrap()
            .data()
            .iter()
            .filter(|&&y| y == 1.0)
            .count();
        assert_eq!(positives, 17);
    }

    #[test]
    fn fraud_generation_is_seed_deterministic() {
        let a = generate_synthetic_fraud(500, 12, 0.1, &mut RngState::new(9)).unwrap();
        let b = generate_synthetic_fraud(500, 12, 0.1, &mut RngState::new(9)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_fraud(500, 12, 0.1, &mut RngState::new(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fraud_rejects_degenerate_sizes() {
        let mut rng = RngState::new(0);
        assert!(generate_synthetic_fraud(0, 5, 0.1, &mut rng).is_err());
        assert!(generate_synthetic_fraud(100, 5, 0.0, &mut rng).is_err());
        // So small that the minority rounds to zero rows.
        assert!(generate_synthetic_fraud(100, 5, 0.001, &mut rng).is_err());
    }

    #[test]
    fn retail_has_fixed_positives_per_user() {
        let mut rng = RngState::new(5);
        let t = generate_synthetic_retail(50, 40, 2, 5, &mut rng).unwrap();
        assert_eq!(t.len(), 250);
        let by_user = t.positives_by_user();
        assert!(by_user.iter().all(|s| s.len() == 5));
    }

    #[test]
    fn retail_is_seed_deterministic() {
        let a = generate_synthetic_retail(20, 30, 2, 3, &mut RngState::new(1)).unwrap();
        let b = generate_synthetic_retail(20, 30, 2, 3, &mut RngState::new(1)).unwrap();
        assert_eq!(a, b);
    }
}
