//! Off-chain fairness worker: a content-addressed blob store standing in for
//! IPFS, the canonical encoding of cumulative scores, and checkpoint
//! publication and verification.

mod checkpoint;
mod keccak;
mod store;

pub use checkpoint::{
    canonical_serialize, decode_canonical, publish_checkpoint, verify_checkpoint, CheckpointVerdict,
    FairnessCheckpoint, OffchainError,
};
pub use keccak::{keccak256, Keccak256};
pub use store::ContentStore;
