use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{keccak256, ContentStore};
use crate::coordinator::{CheckpointRecord, ContractError};
use crate::ids::{hex32, ClientId, Hash32};
use crate::ledger::{Ledger, LedgerError, Status};
use crate::numerics::Fixed;

const ENTRY_LEN: usize = 20 + 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OffchainError {
    #[error("client {0} appears more than once")]
    DuplicateClient(ClientId),
    #[error("round {0} is not a fairness checkpoint round")]
    WrongRound(u64),
    #[error("blob of {0} bytes is not a sequence of score entries")]
    MalformedBlob(usize),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error("checkpoint transaction reverted: {0}")]
    Reverted(ContractError),
}

/// Sorted-by-id concatenation of `id (20 bytes) ‖ raw value (i128, big-endian)`.
pub fn canonical_serialize(cumulative: &[(ClientId, Fixed)]) -> Result<Vec<u8>, OffchainError> {
    let mut entries = cumulative.to_vec();
    entries.sort_by_key(|(id, _)| *id);
    if let Some(pair) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(OffchainError::DuplicateClient(pair[0].0));
    }
    let mut out = Vec::with_capacity(entries.len() * ENTRY_LEN);
    for (id, value) in entries {
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&value.raw().to_be_bytes());
    }
    Ok(out)
}

/// Inverse of [`canonical_serialize`].
pub fn decode_canonical(blob: &[u8]) -> Result<Vec<(ClientId, Fixed)>, OffchainError> {
    if !blob.len().is_multiple_of(ENTRY_LEN) {
        return Err(OffchainError::MalformedBlob(blob.len()));
    }
    let mut seen = BTreeSet::new();
    blob.chunks(ENTRY_LEN)
        .map(|entry| {
            let id = ClientId(entry[..20].try_into().expect("20-byte slice"));
            let raw = i128::from_be_bytes(entry[20..].try_into().expect("16-byte slice"));
            let value = Fixed::from_raw(raw).map_err(|_| OffchainError::MalformedBlob(blob.len()))?;
            if !seen.insert(id) {
                return Err(OffchainError::DuplicateClient(id));
            }
            Ok((id, value))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FairnessCheckpoint {
    pub through_round: u64,
    pub cumulative: Vec<(ClientId, Fixed)>,
    #[serde(with = "hex32")]
    pub cid: Hash32,
    #[serde(with = "hex32")]
    pub integrity_hash: Hash32,
}

impl FairnessCheckpoint {
    pub fn record(&self) -> CheckpointRecord {
        CheckpointRecord { round: self.through_round, cid: self.cid, integrity_hash: self.integrity_hash }
    }
}

/// Stores the cumulative scores through `round` and anchors `(cid, H)` on-chain
/// with a system transaction.
pub fn publish_checkpoint(
    store: &mut ContentStore,
    ledger: &mut Ledger,
    round: u64,
    cumulative: &[(ClientId, Fixed)],
) -> Result<FairnessCheckpoint, OffchainError> {
    let interval = ledger.coordinator().config().fairness_interval;
    if round == 0 || interval == 0 || !round.is_multiple_of(interval) {
        return Err(OffchainError::WrongRound(round));
    }
    let blob = canonical_serialize(cumulative)?;
    let integrity_hash = keccak256(&blob);
    let cid = store.put(&blob);
    let receipt = ledger.record_checkpoint(round, cid, integrity_hash);
    if let Status::Reverted(reason) = receipt.status {
        return Err(OffchainError::Reverted(reason));
    }
    Ok(FairnessCheckpoint {
        through_round: round,
        cumulative: decode_canonical(&blob)?,
        cid,
        integrity_hash,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum CheckpointVerdict {
    Ok,
    NotFound {
        #[serde(with = "hex32")]
        cid: Hash32,
    },
    HashMismatch {
        #[serde(with = "hex32")]
        expected: Hash32,
        #[serde(with = "hex32")]
        actual: Hash32,
    },
}

impl CheckpointVerdict {
    pub fn is_ok(&self) -> bool {
        *self == CheckpointVerdict::Ok
    }
}

/// Ok iff the recorded cid resolves and the blob's hash equals both the
/// checkpoint's integrity hash and the hash recorded on-chain.
pub fn verify_checkpoint(
    checkpoint: &CheckpointRecord,
    onchain_hash: &Hash32,
    store: &ContentStore,
) -> CheckpointVerdict {
    let Some(blob) = store.get(&checkpoint.cid) else {
        return CheckpointVerdict::NotFound { cid: checkpoint.cid };
    };
    let actual = keccak256(blob);
    if actual != checkpoint.integrity_hash {
        return CheckpointVerdict::HashMismatch { expected: checkpoint.integrity_hash, actual };
    }
    if actual != *onchain_hash {
        return CheckpointVerdict::HashMismatch { expected: *onchain_hash, actual };
    }
    CheckpointVerdict::Ok
}
