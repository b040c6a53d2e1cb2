//! Record of every message that crossed a role boundary.
//!
//! The in-memory transcript keeps decoded payloads so audits can inspect
//! them; the JSON-lines dump carries metadata only (round, type, from, to,
//! shape, crc), one record per line.

use serde::Serialize;

use crate::protocol::{MessageKind, RoleId};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct TranscriptEntry {
    pub round: u32,
    pub kind: MessageKind,
    pub from: RoleId,
    pub to: RoleId,
    pub payload: Tensor,
    pub crc: u32,
}

#[derive(Debug, Clone, Default)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

#[derive(Serialize)]
struct EntryRecord<'a> {
    round: u32,
    #[serde(rename = "type")]
    kind: &'a str,
    from: String,
    to: String,
    shape: &'a [usize],
    crc: u32,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, entry: TranscriptEntry) {
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Absorbs another transcript (used to accumulate across rounds).
    pub fn extend(&mut self, other: Transcript) {
        self.entries.extend(other.entries);
    }

    pub fn count_kind(&self, kind: MessageKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    /// One JSON object per line, stable field order, newline-terminated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let record = EntryRecord {
                round: e.round,
                kind: e.kind.name(),
                from: e.from.to_string(),
                to: e.to.to_string(),
                shape: e.payload.shape(),
                crc: e.crc,
            };
            out.push_str(&serde_json::to_string(&record).expect("transcript record"));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_has_one_line_per_entry() {
        let mut t = Transcript::new();
        t.record(TranscriptEntry {
            round: 0,
            kind: MessageKind::Cut,
            from: RoleId::Domain(1),
            to: RoleId::Server,
            payload: Tensor::zeros(&[2, 3]),
            crc: 0xDEAD_BEEF,
        });
        t.record(TranscriptEntry {
            round: 0,
            kind: MessageKind::Grad,
            from: RoleId::Server,
            to: RoleId::Domain(1),
            payload: Tensor::zeros(&[2, 3]),
            crc: 1,
        });
        let dump = t.to_jsonl();
        let lines: Vec<&str> = dump.trim_end().split('\n').collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"type\":\"cut\""));
        assert!(lines[0].contains("\"from\":\"domain:1\""));
        assert!(lines[0].contains("\"to\":\"server\""));
        assert!(lines[1].contains("\"type\":\"grad\""));
    }
}
