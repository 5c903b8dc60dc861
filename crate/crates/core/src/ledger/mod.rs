//! Single-writer simulated chain.
//!
//! Transactions execute against the coordinator in submission order, are
//! charged through the [`GasModel`], and collect into blocks whose hashes link
//! back to genesis. A persisted chain can be re-executed from its genesis
//! deployment to re-derive every receipt and state root.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coordinator::{Call, ContractConfig, ContractError, Coordinator, Event};
use crate::encoding::Encoder;
use crate::ids::{hex32, ClientId, Hash32};
use crate::numerics::GradientVector;
use crate::offchain::keccak256;

pub mod gas;

use gas::{GasModel, OpClass};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("nonce {got} from {sender}, expected {expected}")]
    Nonce { sender: ClientId, expected: u64, got: u64 },
    #[error("unknown sender {0}")]
    UnknownSender(ClientId),
    #[error("invalid genesis: {0}")]
    Genesis(String),
    #[error("batch size must be positive")]
    BadBatchSize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: ClientId,
    pub nonce: u64,
    pub call: Call,
}

impl Transaction {
    pub fn encode(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.id(&self.sender).u64(self.nonce);
        self.call.encode(&mut enc);
        enc.finish()
    }

    pub fn payload_size(&self) -> usize {
        self.encode().len()
    }

    pub fn hash(&self) -> Hash32 {
        keccak256(&self.encode())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Success,
    Reverted(ContractError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    #[serde(with = "hex32")]
    pub tx_hash: Hash32,
    pub block_height: u64,
    pub gas_used: u64,
    /// Operation class the gas was charged under, if any.
    pub gas_class: Option<OpClass>,
    pub events: Vec<Event>,
    pub status: Status,
}

impl Receipt {
    pub fn is_success(&self) -> bool {
        self.status == Status::Success
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.hash(&self.tx_hash).u64(self.block_height).u64(self.gas_used);
        match &self.status {
            Status::Success => enc.u8(0),
            Status::Reverted(reason) => enc.u8(1).str(&reason.to_string()),
        };
        enc.u64(self.events.len() as u64);
        for e in &self.events {
            e.encode(enc);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    #[serde(with = "hex32")]
    pub parent_hash: Hash32,
    #[serde(with = "hex_list")]
    pub tx_hashes: Vec<Hash32>,
    #[serde(with = "hex32")]
    pub receipts_root: Hash32,
    #[serde(with = "hex32")]
    pub state_root: Hash32,
    #[serde(with = "hex32")]
    pub hash: Hash32,
}

impl Block {
    pub fn compute_hash(&self) -> Hash32 {
        let mut enc = Encoder::new();
        enc.u64(self.height).hash(&self.parent_hash).u64(self.tx_hashes.len() as u64);
        for h in &self.tx_hashes {
            enc.hash(h);
        }
        enc.hash(&self.receipts_root).hash(&self.state_root);
        keccak256(&enc.finish())
    }
}

mod hex_list {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct H(#[serde(with = "crate::ids::hex32")] [u8; 32]);

    pub fn serialize<S: Serializer>(v: &[[u8; 32]], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|h| H(*h)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[u8; 32]>, D::Error> {
        Ok(Vec::<H>::deserialize(d)?.into_iter().map(|h| h.0).collect())
    }
}

pub fn receipts_root(receipts: &[Receipt]) -> Hash32 {
    let mut enc = Encoder::new();
    enc.u64(receipts.len() as u64);
    for r in receipts {
        r.encode(&mut enc);
    }
    keccak256(&enc.finish())
}

/// A block with its transactions and receipts, as persisted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedBlock {
    pub header: Block,
    pub transactions: Vec<Transaction>,
    pub receipts: Vec<Receipt>,
}

/// Everything needed to audit or replay a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerDump {
    pub blocks: Vec<SealedBlock>,
}

impl LedgerDump {
    pub fn to_bytes(&self) -> Vec<u8> {
        bincode::serialize(self).expect("ledger dump serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ChainError> {
        bincode::deserialize(bytes).map_err(|e| ChainError::Decode(e.to_string()))
    }

    /// Receipts paired with their transactions, in execution order.
    pub fn executions(&self) -> impl Iterator<Item = (&Transaction, &Receipt)> {
        self.blocks.iter().flat_map(|b| b.transactions.iter().zip(&b.receipts))
    }

    pub fn events(&self) -> impl Iterator<Item = &Event> {
        self.blocks
            .iter()
            .flat_map(|b| &b.receipts)
            .filter(|r| r.is_success())
            .flat_map(|r| &r.events)
    }

    pub fn genesis(&self) -> Option<(u64, &ContractConfig, &GasModel)> {
        match &self.blocks.first()?.transactions.first()?.call {
            Call::Deploy { dim, config, gas } => Some((*dim, config, gas)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChainError {
    #[error("ledger could not be decoded: {0}")]
    Decode(String),
    #[error("chain has no genesis deployment")]
    MissingGenesis,
    #[error("block {height}: {reason}")]
    Block { height: u64, reason: String },
}

fn block_error(height: u64, reason: impl Into<String>) -> ChainError {
    ChainError::Block { height, reason: reason.into() }
}

/// Checks hash links, transaction hashes and receipt roots of a chain.
pub fn verify_chain(blocks: &[SealedBlock]) -> Result<(), ChainError> {
    let mut parent = [0u8; 32];
    for (i, block) in blocks.iter().enumerate() {
        let h = &block.header;
        if h.height != i as u64 {
            return Err(block_error(h.height, format!("height out of sequence at index {i}")));
        }
        if h.parent_hash != parent {
            return Err(block_error(h.height, "parent hash does not link to previous block"));
        }
        let tx_hashes: Vec<Hash32> = block.transactions.iter().map(Transaction::hash).collect();
        if tx_hashes != h.tx_hashes || block.receipts.len() != tx_hashes.len() {
            return Err(block_error(h.height, "transaction list does not match header"));
        }
        if block.receipts.iter().zip(&tx_hashes).any(|(r, t)| &r.tx_hash != t) {
            return Err(block_error(h.height, "receipt does not belong to its transaction"));
        }
        if receipts_root(&block.receipts) != h.receipts_root {
            return Err(block_error(h.height, "receipts root mismatch"));
        }
        if h.compute_hash() != h.hash {
            return Err(block_error(h.height, "block hash mismatch"));
        }
        parent = h.hash;
    }
    Ok(())
}

/// Re-executes every transaction from genesis and compares the re-derived
/// receipts and state roots against the persisted blocks.
pub fn replay(dump: &LedgerDump) -> Result<Ledger, ChainError> {
    let (dim, config, gas) = dump.genesis().ok_or(ChainError::MissingGenesis)?;
    let mut ledger = Ledger::genesis(config.clone(), dim as usize, *gas, None)
        .map_err(|e| block_error(0, e.to_string()))?;
    let genesis = &dump.blocks[0];
    if ledger.blocks[0] != *genesis {
        return Err(block_error(0, "genesis block differs from re-derived genesis"));
    }
    for block in &dump.blocks[1..] {
        let height = block.header.height;
        for (tx, recorded) in block.transactions.iter().zip(&block.receipts) {
            let receipt = ledger
                .submit_tx(tx.clone())
                .map_err(|e| block_error(height, format!("transaction rejected on replay: {e}")))?;
            if &receipt != recorded {
                return Err(block_error(height, format!("receipt for {} differs on replay", tx.call.name())));
            }
        }
        let sealed = ledger.seal_block();
        if sealed.header.state_root != block.header.state_root {
            return Err(block_error(height, "state root mismatch on re-derivation"));
        }
        if sealed.header.hash != block.header.hash {
            return Err(block_error(height, "block hash mismatch on re-derivation"));
        }
    }
    Ok(ledger)
}

#[derive(Debug, Clone)]
pub struct Ledger {
    coordinator: Coordinator,
    gas: GasModel,
    nonces: std::collections::BTreeMap<ClientId, u64>,
    blocks: Vec<SealedBlock>,
    pending: Vec<(Transaction, Receipt)>,
    txs_per_block: Option<usize>,
}

impl Ledger {
    /// Deploys the coordinator and seals block 0 holding the deployment receipt.
    pub fn genesis(
        config: ContractConfig,
        dim: usize,
        gas: GasModel,
        txs_per_block: Option<usize>,
    ) -> Result<Self, LedgerError> {
        gas.validate().map_err(LedgerError::Genesis)?;
        if txs_per_block == Some(0) {
            return Err(LedgerError::Genesis("txs_per_block must be positive".into()));
        }
        let coordinator =
            Coordinator::deploy(config.clone(), dim).map_err(|e| LedgerError::Genesis(e.to_string()))?;
        let tx = Transaction {
            sender: ClientId::SYSTEM,
            nonce: 0,
            call: Call::Deploy { dim: dim as u64, config, gas },
        };
        let receipt = Receipt {
            tx_hash: tx.hash(),
            block_height: 0,
            gas_used: gas.deployment,
            gas_class: None,
            events: vec![Event::ContractDeployed { dim: dim as u64 }],
            status: Status::Success,
        };
        let mut ledger = Ledger {
            coordinator,
            gas,
            nonces: [(ClientId::SYSTEM, 1)].into_iter().collect(),
            blocks: Vec::new(),
            pending: vec![(tx, receipt)],
            txs_per_block,
        };
        ledger.seal_block();
        Ok(ledger)
    }

    pub fn coordinator(&self) -> &Coordinator {
        &self.coordinator
    }

    pub fn gas_model(&self) -> &GasModel {
        &self.gas
    }

    pub fn blocks(&self) -> &[SealedBlock] {
        &self.blocks
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64
    }

    pub fn pending(&self) -> impl Iterator<Item = &Receipt> {
        self.pending.iter().map(|(_, r)| r)
    }

    pub fn next_nonce(&self, sender: &ClientId) -> u64 {
        self.nonces.get(sender).copied().unwrap_or(0)
    }

    /// Executes `tx` and appends its receipt to the pending block.
    pub fn submit_tx(&mut self, tx: Transaction) -> Result<Receipt, LedgerError> {
        let expected = self.next_nonce(&tx.sender);
        if tx.nonce != expected {
            return Err(LedgerError::Nonce { sender: tx.sender, expected, got: tx.nonce });
        }
        let is_registration = matches!(tx.call, Call::Register { .. });
        if !tx.sender.is_system() && !is_registration && !self.coordinator.is_registered(&tx.sender) {
            return Err(LedgerError::UnknownSender(tx.sender));
        }
        let charge = self.coordinator.gas_charge(&tx.call);
        let gas_used = charge.amount(&self.gas);
        let gas_class = match charge {
            crate::coordinator::GasCharge::Class(class, _) => Some(class),
            _ => None,
        };
        let (events, status) = match self.coordinator.execute(tx.sender, &tx.call) {
            Ok(events) => (events, Status::Success),
            Err(reason) => {
                log::debug!("{} from {} reverted: {reason}", tx.call.name(), tx.sender);
                (Vec::new(), Status::Reverted(reason))
            }
        };
        self.nonces.insert(tx.sender, expected + 1);
        let receipt = Receipt {
            tx_hash: tx.hash(),
            block_height: self.height(),
            gas_used,
            gas_class,
            events,
            status,
        };
        self.pending.push((tx, receipt.clone()));
        if self.txs_per_block.is_some_and(|n| self.pending.len() >= n) {
            self.seal_block();
        }
        Ok(receipt)
    }

    /// Builds, signs with the next nonce and submits a call from `sender`.
    pub fn call(&mut self, sender: ClientId, call: Call) -> Result<Receipt, LedgerError> {
        let nonce = self.next_nonce(&sender);
        self.submit_tx(Transaction { sender, nonce, call })
    }

    pub fn seal_block(&mut self) -> &SealedBlock {
        let (transactions, receipts): (Vec<_>, Vec<_>) = std::mem::take(&mut self.pending).into_iter().unzip();
        let mut header = Block {
            height: self.height(),
            parent_hash: self.blocks.last().map(|b| b.header.hash).unwrap_or([0u8; 32]),
            tx_hashes: transactions.iter().map(Transaction::hash).collect(),
            receipts_root: receipts_root(&receipts),
            state_root: self.coordinator.state_root(),
            hash: [0u8; 32],
        };
        header.hash = header.compute_hash();
        self.blocks.push(SealedBlock { header, transactions, receipts });
        self.blocks.last().expect("just pushed")
    }

    pub fn dump(&self) -> LedgerDump {
        LedgerDump { blocks: self.blocks.clone() }
    }

    pub fn register(&mut self, id: ClientId, stake: u128, n_samples: u64) -> Result<Receipt, LedgerError> {
        self.call(id, Call::Register { stake, n_samples })
    }

    /// Submits `update` in chunks of at most `batch_size` parameters, one
    /// transaction per chunk. Stops at the first reverted chunk.
    pub fn submit_update(
        &mut self,
        id: ClientId,
        round: u64,
        update: &GradientVector,
        batch_size: usize,
    ) -> Result<Vec<Receipt>, LedgerError> {
        if batch_size == 0 {
            return Err(LedgerError::BadBatchSize);
        }
        let chunks: Vec<&[crate::numerics::Fixed]> = update.components().chunks(batch_size).collect();
        let batch_count = chunks.len() as u32;
        let mut receipts = Vec::with_capacity(chunks.len());
        for (batch_index, chunk) in chunks.into_iter().enumerate() {
            let receipt = self.call(
                id,
                Call::SubmitUpdate { round, batch_index: batch_index as u32, batch_count, chunk: chunk.to_vec() },
            )?;
            let ok = receipt.is_success();
            receipts.push(receipt);
            if !ok {
                break;
            }
        }
        Ok(receipts)
    }

    fn system(&mut self, call: Call) -> Receipt {
        self.call(ClientId::SYSTEM, call).expect("system sender always exists with a tracked nonce")
    }

    pub fn validate_round(&mut self, round: u64) -> Receipt {
        self.system(Call::ValidateRound { round })
    }

    pub fn score_and_reward_round(&mut self, round: u64) -> Receipt {
        self.system(Call::ScoreAndReward { round })
    }

    pub fn aggregate_round(&mut self, round: u64) -> Receipt {
        self.system(Call::AggregateRound { round })
    }

    pub fn close_round(&mut self, round: u64) -> Receipt {
        self.system(Call::CloseRound { round })
    }

    pub fn record_checkpoint(&mut self, round: u64, cid: Hash32, integrity_hash: Hash32) -> Receipt {
        self.system(Call::RecordCheckpoint { round, cid, integrity_hash })
    }
}
