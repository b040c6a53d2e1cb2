//! Message-level audit of the no-peek policy.
//!
//! A transcript is the complete record of what crossed role boundaries, so
//! the policy becomes checkable there: no payload column may be bit-equal to
//! a raw feature column of any domain, and under the U-shaped topology no
//! server-bound payload column may be bit-equal to the label column.
//!
//! Constant columns are excluded from the equality test: an all-zero label
//! batch and a dead ReLU unit are bit-equal by coincidence, and a constant
//! column carries no sample-level information to leak in the first place.

use crate::protocol::{RoleId, TopologyKind, Transcript};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct NoPeekViolation {
    pub entry_index: usize,
    pub round: u32,
    pub description: String,
}

fn columns_bit_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

fn is_constant(col: &[f64]) -> bool {
    col.windows(2).all(|w| w[0].to_bits() == w[1].to_bits())
}

fn tensor_columns(t: &Tensor) -> Vec<Vec<f64>> {
    if t.shape().len() != 2 {
        return vec![t.data().to_vec()];
    }
    (0..t.cols()).map(|c| t.column(c)).collect()
}

/// Inspects every message of a single round's transcript against the raw
/// per-domain feature blocks (and labels) used in that round. Returns every
/// violation found; an empty vector means the policy held.
pub fn audit_no_peek(
    transcript: &Transcript,
    raw_domain_batches: &[Tensor],
    labels: &Tensor,
    topology: TopologyKind,
) -> Vec<NoPeekViolation> {
    let mut violations = Vec::new();
    let raw_columns: Vec<(usize, Vec<Vec<f64>>)> = raw_domain_batches
        .iter()
        .enumerate()
        .map(|(i, t)| (i, tensor_columns(t)))
        .collect();

    for (idx, entry) in transcript.entries().iter().enumerate() {
        for payload_col in tensor_columns(&entry.payload) {
            for (domain, cols) in &raw_columns {
                for (ci, raw_col) in cols.iter().enumerate() {
                    if is_constant(raw_col) {
                        continue;
                    }
                    if columns_bit_equal(&payload_col, raw_col) {
                        violations.push(NoPeekViolation {
                            entry_index: idx,
                            round: entry.round,
                            description: format!(
                                "raw feature column {ci} of domain {domain} appears in a {} \
                                 message from {} to {}",
                                entry.kind.name(),
                                entry.from,
                                entry.to
                            ),
                        });
                    }
                }
            }
        }
    }

    if topology == TopologyKind::SplitUShaped {
        for v in label_leaks_to_server(transcript, labels) {
            violations.push(v);
        }
    }
    violations
}

/// Label half of the audit: any server-bound payload column bit-equal to the
/// label column is a leak.
pub(crate) fn label_leaks_to_server(
    transcript: &Transcript,
    labels: &Tensor,
) -> Vec<NoPeekViolation> {
    let label_col = labels.column(0);
    let mut violations = Vec::new();
    if is_constant(&label_col) {
        return violations;
    }
    for (idx, entry) in transcript.entries().iter().enumerate() {
        if entry.to != RoleId::Server {
            continue;
        }
        for payload_col in tensor_columns(&entry.payload) {
            if columns_bit_equal(&payload_col, &label_col) {
                violations.push(NoPeekViolation {
                    entry_index: idx,
                    round: entry.round,
                    description: format!(
                        "label column appears in a {} message from {} bound for the server",
                        entry.kind.name(),
                        entry.from
                    ),
                });
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{MessageKind, TranscriptEntry};

    fn entry(to: RoleId, payload: Tensor) -> TranscriptEntry {
        TranscriptEntry {
            round: 0,
            kind: MessageKind::Cut,
            from: RoleId::Domain(0),
            to,
            payload,
            crc: 0,
        }
    }

    #[test]
    fn leaked_feature_column_is_flagged() {
        let raw = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mut t = Transcript::new();
        // The payload's second column equals raw column 0.
        let payload = Tensor::from_rows(&[vec![9.0, 1.0], vec![9.0, 3.0]]).unwrap();
        t.record(entry(RoleId::Server, payload));
        let violations = audit_no_peek(
            &t,
            &[raw],
            &Tensor::zeros(&[2, 1]),
            TopologyKind::SplitLabelSharing,
        );
        assert_eq!(violations.len(), 1);
        assert!(violations[0].description.contains("column 0"));
    }

    #[test]
    fn label_column_to_server_is_flagged_only_for_u_shaped() {
        let labels = Tensor::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let mut t = Transcript::new();
        t.record(entry(RoleId::Server, labels.clone()));
        let raw = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let u = audit_no_peek(&t, std::slice::from_ref(&raw), &labels, TopologyKind::SplitUShaped);
        assert_eq!(u.len(), 1);
        let shared = audit_no_peek(
            &t,
            std::slice::from_ref(&raw),
            &labels,
            TopologyKind::SplitLabelSharing,
        );
        assert!(shared.is_empty());
    }

    #[test]
    fn clean_transcript_passes() {
        let raw = Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let labels = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let mut t = Transcript::new();
        t.record(entry(
            RoleId::Server,
            Tensor::from_rows(&[vec![0.5], vec![0.25]]).unwrap(),
        ));
        assert!(audit_no_peek(&t, std::slice::from_ref(&raw), &labels, TopologyKind::SplitUShaped)
            .is_empty());
    }
}
