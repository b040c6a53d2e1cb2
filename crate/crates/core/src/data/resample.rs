//! Resampling pipelines: negative sampling for implicit feedback, SMOTE
//! oversampling and random undersampling for class imbalance.
//!
//! Targets are computed with round-half-away-from-zero (`f64::round`), so
//! e.g. a 0.015 oversampling ratio against 199,020 majority rows yields
//! exactly 2,985 minority rows.

use std::collections::BTreeSet;

use crate::data::{InteractionTable, ResampleConfig};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Balances an implicit-feedback table: for every user, `neg_ratio`
/// negatives per observed positive, drawn uniformly without replacement from
/// that user's non-interacted items. When a user has fewer candidates than
/// requested, all candidates are taken (the documented shortfall).
///
/// Output order is deterministic: users ascending, each user's positives in
/// their original encounter order followed by that user's negatives in
/// ascending item id.
pub fn negative_sample(
    table: &InteractionTable,
    neg_ratio: usize,
    rng: &mut RngState,
) -> Result<InteractionTable> {
    let positives = table.positives_by_user();
    for (u, set) in positives.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::Data(format!("user {u} has no positive interaction")));
        }
    }
    let num_items = table.num_items();
    let mut rows = Vec::new();
    for u in 0..table.num_users() {
        let pos = &positives[u as usize];
        for &(ru, ri, label) in table.rows() {
            if ru as usize == u && label == 1 {
                rows.push((ru, ri, 1));
            }
        }
        let candidates: Vec<u32> = (0..num_items as u32).filter(|i| !pos.contains(i)).collect();
        let want = pos.len() * neg_ratio;
        let picked: Vec<u32> = if candidates.len() <= want {
            candidates
        } else {
            rng.sample_indices(candidates.len(), want)
                .into_iter()
                .map(|i| candidates[i])
                .collect()
        };
        for item in picked {
            rows.push((u as u32, item, 0));
        }
    }
    InteractionTable::new(rows, table.num_users(), num_items)
}

fn class_split(labels: &Tensor) -> Result<(Vec<usize>, Vec<usize>, f64, f64)> {
    let mut zeros = Vec::new();
    let mut ones = Vec::new();
    for (i, &y) in labels.data().iter().enumerate() {
        match y {
            v if v == 0.0 => zeros.push(i),
            v if v == 1.0 => ones.push(i),
            v => return Err(Error::Data(format!("label at row {i} is {v}"))),
        }
    }
    if zeros.is_empty() || ones.is_empty() {
        return Err(Error::Data("both classes must be present".into()));
    }
    // Ties count class 1 as the minority, matching the fraud setting.
    if ones.len() <= zeros.len() {
        Ok((zeros, ones, 0.0, 1.0))
    } else {
        Ok((ones, zeros, 1.0, 0.0))
    }
}

/// Grows the minority class to `round(smote_ratio · majority_count)` rows by
/// interpolation: each synthetic point is `x + u·(xₙ − x)` with `u ~ U[0,1)`
/// and `xₙ` one of the `smote_k` Euclidean nearest minority neighbours of a
/// uniformly chosen minority point `x`. The majority class and all original
/// rows are untouched; synthetics are appended.
pub fn smote_oversample(
    features: &Tensor,
    labels: &Tensor,
    cfg: &ResampleConfig,
    rng: &mut RngState,
) -> Result<(Tensor, Tensor)> {
    cfg.validate()?;
    let (majority, minority, _, minority_label) = class_split(labels)?;
    if minority.len() < cfg.smote_k + 1 {
        return Err(Error::Data(format!(
            "smote needs at least {} minority rows, found {}",
            cfg.smote_k + 1,
            minority.len()
        )));
    }
    let target = (cfg.smote_ratio * majority.len() as f64).round() as usize;
    if target <= minority.len() {
        return Ok((features.clone(), labels.clone()));
    }

    let width = features.cols();
    let minority_rows: Vec<&[f64]> = minority.iter().map(|&r| features.row(r)).collect();

    // All-pairs nearest neighbours within the minority class; ties broken by
    // ascending index so the neighbour lists are deterministic.
    let m = minority_rows.len();
    let mut neighbours: Vec<Vec<usize>> = Vec::with_capacity(m);
    for a in 0..m {
        let mut dist: Vec<(f64, usize)> = (0..m)
            .filter(|&b| b != a)
            .map(|b| {
                let d: f64 = minority_rows[a]
                    .iter()
                    .zip(minority_rows[b])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                (d, b)
            })
            .collect();
        dist.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite distances").then(x.1.cmp(&y.1)));
        neighbours.push(dist.into_iter().take(cfg.smote_k).map(|(_, b)| b).collect());
    }

    let mut data = features.data().to_vec();
    let mut label_data = labels.data().to_vec();
    for _ in 0..target - m {
        let base = rng.next_below(m as u64) as usize;
        let pick = rng.next_below(cfg.smote_k as u64) as usize;
        let neighbour = neighbours[base][pick];
        let u = rng.next_unit_f64();
        for c in 0..width {
            let x = minority_rows[base][c];
            let xn = minority_rows[neighbour][c];
            data.push(x + u * (xn - x));
        }
        label_data.push(minority_label);
    }
    let n = label_data.len();
    Ok((
        Tensor::new(vec![n, width], data)?,
        Tensor::new(vec![n, 1], label_data)?,
    ))
}

/// Shrinks the majority class to `round(minority_count / under_ratio)` rows
/// by uniform sampling without replacement, keeping the original row order.
/// A ratio that is already satisfied is a no-op.
pub fn random_undersample(
    features: &Tensor,
    labels: &Tensor,
    cfg: &ResampleConfig,
    rng: &mut RngState,
) -> Result<(Tensor, Tensor)> {
    cfg.validate()?;
    let (majority, minority, _, _) = class_split(labels)?;
    let target = (minority.len() as f64 / cfg.under_ratio).round() as usize;
    if majority.len() <= target {
        return Ok((features.clone(), labels.clone()));
    }
    let picked = rng.sample_indices(majority.len(), target);
    let keep: BTreeSet<usize> = picked
        .into_iter()
        .map(|i| majority[i])
        .chain(minority.iter().copied())
        .collect();
    let rows: Vec<usize> = keep.into_iter().collect();
    Ok((features.take_rows(&rows)?, labels.take_rows(&rows)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_uniform;

    fn imbalanced(majority: usize, minority: usize, width: usize, seed: u64) -> (Tensor, Tensor) {
        let mut rng = RngState::new(seed);
        let features = rng_uniform(&mut rng, &[majority + minority, width], -1.0, 1.0).unwrap();
        let mut labels = vec![0.0; majority];
        labels.extend(vec![1.0; minority]);
        (
            features,
            Tensor::new(vec![majority + minority, 1], labels).unwrap(),
        )
    }

    #[test]
    fn negative_sampling_respects_ratio_and_positives() {
        let table = InteractionTable::new(vec![(0, 7, 1)], 1, 100).unwrap();
        let mut rng = RngState::new(3);
        let sampled = negative_sample(&table, 5, &mut rng).unwrap();
        assert_eq!(sampled.len(), 6);
        let negatives: Vec<u32> = sampled
            .rows()
            .iter()
            .filter(|r| r.2 == 0)
            .map(|r| r.1)
            .collect();
        assert_eq!(negatives.len(), 5);
        assert!(!negatives.contains(&7));
        let distinct: BTreeSet<u32> = negatives.iter().copied().collect();
        assert_eq!(distinct.len(), 5);
    }

    #[test]
    fn zero_ratio_keeps_positives_only() {
        let table = InteractionTable::new(vec![(0, 1, 1), (1, 0, 1)], 2, 3).unwrap();
        let mut rng = RngState::new(1);
        let sampled = negative_sample(&table, 0, &mut rng).unwrap();
        assert_eq!(sampled.rows(), table.rows());
    }

    #[test]
    fn exhausted_candidates_shortfall() {
        // The user interacted with every item: nothing to sample.
        let table = InteractionTable::new(vec![(0, 0, 1)], 1, 1).unwrap();
        let mut rng = RngState::new(1);
        let sampled = negative_sample(&table, 5, &mut rng).unwrap();
        assert_eq!(sampled.len(), 1);
    }

    #[test]
    fn negative_samples_never_collide_with_positives() {
        let mut rng = RngState::new(12);
        let mut rows = Vec::new();
        for u in 0..20u32 {
            for _ in 0..1 + rng.next_below(4) {
                rows.push((u, rng.next_below(50) as u32, 1u8));
            }
        }
        let rows: Vec<(u32, u32, u8)> = {
            let mut seen = BTreeSet::new();
            rows.into_iter()
                .filter(|&(u, i, _)| seen.insert((u, i)))
                .collect()
        };
        let table = InteractionTable::new(rows, 20, 50).unwrap();
        let sampled = negative_sample(&table, 3, &mut rng).unwrap();
        let positives = table.positives_by_user();
        for &(u, i, label) in sampled.rows() {
            if label == 0 {
                assert!(!positives[u as usize].contains(&i));
            }
        }
    }

    #[test]
    fn smote_hits_published_counts() {
        let (features, labels) = imbalanced(1000, 20, 3, 5);
        let cfg = ResampleConfig {
            smote_ratio: 0.05,
            under_ratio: 0.1,
            smote_k: 5,
            neg_ratio: 0,
        };
        let mut rng = RngState::new(9);
        let (f2, l2) = smote_oversample(&features, &labels, &cfg, &mut rng).unwrap();
        let ones = l2.data().iter().filter(|&&y| y == 1.0).count();
        assert_eq!(ones, 50); // round(0.05 * 1000)
        assert_eq!(f2.rows(), 1050);
    }

    #[test]
    fn smote_saturated_target_is_noop() {
        let (features, labels) = imbalanced(100, 30, 2, 6);
        let cfg = ResampleConfig {
            smote_ratio: 0.2, // target 20 < 30 already present
            under_ratio: 0.5,
            smote_k: 5,
            neg_ratio: 0,
        };
        let mut rng = RngState::new(2);
        let (f2, l2) = smote_oversample(&features, &labels, &cfg, &mut rng).unwrap();
        assert_eq!(&f2, &features);
        assert_eq!(&l2, &labels);
    }

    #[test]
    fn smote_synthetics_lie_between_real_minority_points() {
        let (features, labels) = imbalanced(200, 12, 4, 7);
        let cfg = ResampleConfig {
            smote_ratio: 0.25,
            under_ratio: 0.5,
            smote_k: 3,
            neg_ratio: 0,
        };
        let mut rng = RngState::new(11);
        let (f2, l2) = smote_oversample(&features, &labels, &cfg, &mut rng).unwrap();
        let originals: Vec<&[f64]> = labels
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &y)| y == 1.0)
            .map(|(i, _)| features.row(i))
            .collect();
        // Every synthetic row sits, coordinate-wise, inside the segment
        // between two real minority points.
        for r in features.rows()..f2.rows() {
            assert_eq!(l2.data()[r], 1.0);
            let synth = f2.row(r);
            let witness = originals.iter().enumerate().any(|(a, xa)| {
                originals.iter().skip(a).any(|xb| {
                    synth.iter().zip(xa.iter().zip(xb.iter())).all(|(s, (x, y))| {
                        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
                        *lo - 1e-12 <= *s && *s <= *hi + 1e-12
                    })
                })
            });
            assert!(witness, "synthetic row {r} is not a convex combination");
        }
    }

    #[test]
    fn smote_needs_enough_minority_rows() {
        let (features, labels) = imbalanced(50, 4, 2, 8);
        let cfg = ResampleConfig {
            smote_ratio: 0.5,
            under_ratio: 0.5,
            smote_k: 5,
            neg_ratio: 0,
        };
        let mut rng = RngState::new(3);
        assert!(matches!(
            smote_oversample(&features, &labels, &cfg, &mut rng).unwrap_err(),
            Error::Data(_)
        ));
    }

    #[test]
    fn undersample_hits_target_and_is_a_subset() {
        let (features, labels) = imbalanced(500, 10, 2, 9);
        let cfg = ResampleConfig {
            smote_ratio: 0.05,
            under_ratio: 0.05, // target majority = 200
            smote_k: 5,
            neg_ratio: 0,
        };
        let mut rng = RngState::new(4);
        let (f2, l2) = random_undersample(&features, &labels, &cfg, &mut rng).unwrap();
        let zeros = l2.data().iter().filter(|&&y| y == 0.0).count();
        assert_eq!(zeros, 200);
        assert_eq!(l2.data().iter().filter(|&&y| y == 1.0).count(), 10);
        // Surviving rows are original rows (id check by bit-equality).
        let mut next = 0usize;
        for r in 0..f2.rows() {
            let row = f2.row(r);
            let found = (next..features.rows()).find(|&orig| {
                features
                    .row(orig)
                    .iter()
                    .zip(row)
                    .all(|(a, b)| a.to_bits() == b.to_bits())
            });
            let idx = found.expect("row not found among originals");
            next = idx + 1; // order preserved
        }
    }

    #[test]
    fn undersample_satisfied_ratio_is_noop() {
        let (features, labels) = imbalanced(100, 80, 2, 10);
        let cfg = ResampleConfig {
            smote_ratio: 0.5,
            under_ratio: 0.5, // target 160 ≥ current 100
            smote_k: 5,
            neg_ratio: 0,
        };
        let mut rng = RngState::new(5);
        let (f2, l2) = random_undersample(&features, &labels, &cfg, &mut rng).unwrap();
        assert_eq!(&f2, &features);
        assert_eq!(&l2, &labels);
    }

    #[test]
    fn pipeline_reproduces_published_class_counts() {
        // 199,020 negatives / 344 positives, SMOTE at 0.015 then
        // undersampling at 0.02 → exactly 149,250 / 2,985.
        // Desk-scale stand-in with the same arithmetic is covered here; the
        // full-size run lives in the acceptance suite.
        let target_minority = (0.015f64 * 199_020.0).round() as usize;
        assert_eq!(target_minority, 2_985);
        let target_majority = (2_985.0f64 / 0.02).round() as usize;
        assert_eq!(target_majority, 149_250);
    }
}
