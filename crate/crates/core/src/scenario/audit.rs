//! Post-hoc verification of a persisted run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::report::{build_report, report_bytes};
use super::{Result, ScenarioError};
use crate::coordinator::{CheckpointRecord, Event};
use crate::ids::{hex32, ClientId, Hash32};
use crate::ledger::{replay, verify_chain, LedgerDump};
use crate::numerics::Fixed;
use crate::offchain::{decode_canonical, verify_checkpoint, CheckpointVerdict, ContentStore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointAudit {
    pub round: u64,
    #[serde(with = "hex32")]
    pub cid: Hash32,
    #[serde(with = "hex32")]
    pub integrity_hash: Hash32,
    pub verdict: CheckpointVerdict,
    /// The stored scores equal the sums recomputed from the event log.
    pub cumulative_matches: bool,
}

/// Cumulative alignment scores through `through_round`, summed from the
/// `AlignmentScoresUpdated` events, for every client registered by then.
pub fn scores_from_events(dump: &LedgerDump, through_round: u64) -> BTreeMap<ClientId, Fixed> {
    let mut totals = BTreeMap::new();
    let mut open_round = 1;
    for event in dump.events() {
        match event {
            Event::ClientRegistered { id, .. } if open_round <= through_round => {
                totals.entry(*id).or_insert(Fixed::ZERO);
            }
            Event::RoundClosed { round } => open_round = round + 1,
            Event::AlignmentScoresUpdated { round, scores } if *round <= through_round => {
                for (id, score) in scores {
                    let slot = totals.entry(*id).or_insert(Fixed::ZERO);
                    // Saturate rather than abort: a forged log should surface as a
                    // mismatch, not a crash.
                    *slot = slot.checked_add(*score).unwrap_or(*slot);
                }
            }
            _ => {}
        }
    }
    totals
}

/// Verifies every checkpoint anchored in the event log against the store.
pub fn checkpoint_audits(dump: &LedgerDump, store: &ContentStore) -> Vec<CheckpointAudit> {
    dump.events()
        .filter_map(|event| match event {
            Event::FairnessCheckpoint { round, cid, integrity_hash } => Some((*round, *cid, *integrity_hash)),
            _ => None,
        })
        .map(|(round, cid, integrity_hash)| {
            let record = CheckpointRecord { round, cid, integrity_hash };
            let verdict = verify_checkpoint(&record, &integrity_hash, store);
            let cumulative_matches = verdict.is_ok()
                && store.get(&cid).and_then(|blob| decode_canonical(blob).ok()).is_some_and(|stored| {
                    stored.into_iter().collect::<BTreeMap<_, _>>() == scores_from_events(dump, round)
                });
            CheckpointAudit { round, cid, integrity_hash, verdict, cumulative_matches }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub blocks: u64,
    pub checkpoints: Vec<CheckpointAudit>,
    /// Human-readable description of every problem found; empty when clean.
    pub findings: Vec<String>,
}

impl AuditReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Re-verifies a run directory: chain links, full replay, every checkpoint
/// blob, cumulative scores against the event log, and the stored report.
pub fn audit(dir: &Path) -> Result<AuditReport> {
    let ledger_path = dir.join("ledger.bin");
    if !ledger_path.is_file() {
        return Err(ScenarioError::MissingRun(dir.display().to_string()));
    }
    let mut findings = Vec::new();
    let dump = match LedgerDump::from_bytes(&fs::read(&ledger_path)?) {
        Ok(dump) => dump,
        Err(e) => {
            findings.push(format!("ledger: {e}"));
            return Ok(AuditReport { blocks: 0, checkpoints: Vec::new(), findings });
        }
    };
    let blobs = dir.join("blobs");
    let store = if blobs.is_dir() { ContentStore::load(&blobs)? } else { ContentStore::new() };

    if let Err(e) = verify_chain(&dump.blocks) {
        findings.push(format!("chain: {e}"));
    }
    if let Err(e) = replay(&dump) {
        findings.push(format!("replay: {e}"));
    }
    let checkpoints = checkpoint_audits(&dump, &store);
    for c in &checkpoints {
        match &c.verdict {
            CheckpointVerdict::Ok if !c.cumulative_matches => findings.push(format!(
                "checkpoint {}: stored cumulative scores differ from the event log",
                c.round
            )),
            CheckpointVerdict::Ok => {}
            CheckpointVerdict::NotFound { cid } => {
                findings.push(format!("checkpoint {}: blob {} not found", c.round, hex::encode(cid)))
            }
            CheckpointVerdict::HashMismatch { expected, actual } => findings.push(format!(
                "checkpoint {}: hash mismatch, expected {}, blob hashes to {}",
                c.round,
                hex::encode(expected),
                hex::encode(actual)
            )),
        }
    }
    let report_path = dir.join("report.json");
    if report_path.is_file() {
        let rebuilt = build_report(&dump, &store).map(|r| report_bytes(&r));
        match rebuilt {
            Ok(bytes) if bytes == fs::read(&report_path)? => {}
            Ok(_) => findings.push("report.json does not match the report rebuilt from the ledger".into()),
            Err(e) => findings.push(format!("report: {e}")),
        }
    }
    Ok(AuditReport { blocks: dump.blocks.len() as u64, checkpoints, findings })
}
