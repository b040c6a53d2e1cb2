//! Deterministic run reports.
//!
//! A [`RunReport`] serializes to canonical JSON: object keys sorted, floats
//! in their shortest round-trip-exact form, and no volatile fields — wall
//! clock is kept in memory for logging but never written, so identical
//! (config, seed) pairs produce byte-identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiment::ExperimentConfig;
use crate::metrics::MetricsReport;

/// Message counts observed while training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSummary {
    pub cut_messages: u64,
    pub grad_messages: u64,
    pub logits_messages: u64,
    pub loss_grad_messages: u64,
    pub rounds: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
    pub metrics: MetricsReport,
    pub transcript_summary: TranscriptSummary,
    /// SHA-256 over the final parameters of every segment, in role order.
    pub param_hash: String,
    /// Wall-clock seconds; informational only and excluded from the
    /// serialized report so reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunReport {
    /// Canonical JSON: sorted keys, shortest exact floats, one trailing
    /// newline.
    pub fn to_canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self).map_err(|e| Error::Data(e.to_string()))?;
        let mut text = serde_json::to_string_pretty(&value).map_err(|e| Error::Data(e.to_string()))?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(e.to_string()))
    }

    /// SHA-256 of the canonical JSON.
    pub fn content_hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(self.to_canonical_json()?.as_bytes());
        Ok(hex_string(&hasher.finalize()))
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Writes the canonical JSON document; emitting the same report twice
/// produces byte-identical files.
pub fn emit_report(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), report.to_canonical_json()?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> RunReport {
        let mut metrics = MetricsReport::new();
        metrics.insert("f1_class1", 0.9375);
        metrics.insert("auc_roc", 0.75);
        RunReport {
            config: ExperimentConfig::default(),
            train_loss: vec![0.6931471805599453, 0.5],
            metrics,
            transcript_summary: TranscriptSummary {
                cut_messages: 6,
                grad_messages: 6,
                logits_messages: 0,
                loss_grad_messages: 0,
                rounds: 2,
            },
            param_hash: "abc123".into(),
            wall_clock_secs: 1.25,
        }
    }

    #[test]
    fn emit_twice_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        let report = sample_report();
        emit_report(&report, &a).unwrap();
        emit_report(&report, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn parse_and_reemit_round_trips() {
        let report = sample_report();
        let text = report.to_canonical_json().unwrap();
        let parsed = RunReport::from_json(&text).unwrap();
        assert_eq!(parsed.to_canonical_json().unwrap(), text);
        // Exact float round trip, including the ln 2 constant.
        assert_eq!(parsed.train_loss[0], 0.6931471805599453);
    }

    #[test]
    fn wall_clock_never_reaches_the_file() {
        let mut report = sample_report();
        report.wall_clock_secs = 123.456;
        let a = report.to_canonical_json().unwrap();
        report.wall_clock_secs = 789.0;
        assert_eq!(report.to_canonical_json().unwrap(), a);
        assert!(!a.contains("wall_clock"));
    }

    #[test]
    fn metrics_keys_appear_verbatim() {
        let text = sample_report().to_canonical_json().unwrap();
        assert!(text.contains("\"f1_class1\""));
        assert!(text.contains("\"auc_roc\""));
    }

    #[test]
    fn content_hash_tracks_content() {
        let a = sample_report();
        let mut b = sample_report();
        assert_eq!(a.content_hash().unwrap(), b.content_hash().unwrap());
        b.param_hash = "different".into();
        assert_ne!(a.content_hash().unwrap(), b.content_hash().unwrap());
    }
}
